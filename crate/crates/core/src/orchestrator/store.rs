//! Versioned parameter store: one writer per learner slot, many readers.

use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::policy::PolicyModel;

/// An immutable, versioned copy of every population member.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSnapshot {
    pub version: u64,
    pub models: Vec<PolicyModel>,
}

#[derive(Debug)]
pub struct ParameterStore {
    latest: RwLock<Arc<ParameterSnapshot>>,
    // serializes publishers so each composes on top of the previous version
    publish_lock: Mutex<()>,
}

impl ParameterStore {
    pub fn new(models: Vec<PolicyModel>) -> Self {
        ParameterStore {
            latest: RwLock::new(Arc::new(ParameterSnapshot { version: 0, models })),
            publish_lock: Mutex::new(()),
        }
    }

    pub fn latest(&self) -> Arc<ParameterSnapshot> {
        Arc::clone(&self.latest.read().expect("store lock poisoned"))
    }

    pub fn version(&self) -> u64 {
        self.latest.read().expect("store lock poisoned").version
    }

    /// Replaces member `slot` and publishes the result as the next version.
    pub fn publish(&self, slot: usize, model: PolicyModel) -> u64 {
        let _guard = self.publish_lock.lock().expect("store lock poisoned");
        let current = self.latest();
        let mut models = current.models.clone();
        models[slot] = model;
        self.install(current.version + 1, models)
    }

    /// Publishes every member at once as a single new version.
    pub fn publish_all(&self, models: Vec<PolicyModel>) -> u64 {
        let _guard = self.publish_lock.lock().expect("store lock poisoned");
        let version = self.version() + 1;
        self.install(version, models)
    }

    fn install(&self, version: u64, models: Vec<PolicyModel>) -> u64 {
        let snap = Arc::new(ParameterSnapshot { version, models });
        *self.latest.write().expect("store lock poisoned") = snap;
        version
    }
}
