//! Run configuration. Serialized as TOML with one section per subsystem;
//! every field has a default so partial files are valid.

use serde::{Deserialize, Serialize};

use crate::behavior::{BehaviorMapping, MappingFamily};
use crate::env::EnvSpec;
use crate::error::{config_err, Result};
use crate::metactrl::{BanditConfig, GridConfig, RegionGrid};
use crate::offpolicy::LearnerConfig;
use crate::policy::PolicyHyper;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecMode {
    /// One actor and all learners interleaved on the calling thread;
    /// bit-for-bit reproducible.
    Sequential,
    /// One thread per actor and per learner.
    Concurrent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Population-based UCB bandits per actor.
    Bandit,
    /// Uniform draw from the whole parameter space every episode.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplayOrder {
    Fifo,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: ExecMode,
    pub actors: usize,
    pub total_env_steps: u64,
    pub slice_len: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Times each learner trains on every slice.
    pub reuse: u32,
    pub replay: ReplayOrder,
    /// Learner gradient steps between publishes.
    pub d_push: u64,
    /// Actor environment steps between snapshot pulls.
    pub d_pull: u64,
    pub selection: Selection,
    /// Episodes between KL-matrix diagnostics.
    pub kl_interval: u64,
    /// Maximum number of states the KL matrix is averaged over.
    pub kl_states: usize,
    pub env: EnvSpec,
    pub members: Vec<PolicyHyper>,
    pub mapping: BehaviorMapping,
    pub learner: LearnerConfig,
    pub grid: GridConfig,
    pub bandit: BanditConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            mode: ExecMode::Concurrent,
            actors: 1,
            total_env_steps: 200_000,
            slice_len: 16,
            batch_size: 8,
            buffer_capacity: 256,
            reuse: 2,
            replay: ReplayOrder::Fifo,
            d_push: 25,
            d_pull: 64,
            selection: Selection::Bandit,
            kl_interval: 10,
            kl_states: 32,
            env: EnvSpec::deep_chain(30, 120),
            members: PolicyHyper::defaults(),
            mapping: BehaviorMapping { family: MappingFamily::HybridMixture, slots: vec![0, 1, 2] },
            learner: LearnerConfig::default(),
            grid: GridConfig::default(),
            bandit: BanditConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.learner.validate()?;
        if self.members.is_empty() {
            return Err(config_err("population needs at least one member"));
        }
        for m in &self.members {
            m.validate()?;
        }
        for (i, a) in self.members.iter().enumerate() {
            if self.members[..i].iter().any(|b| b == a) {
                return Err(config_err("population members must have distinct hyper-parameters"));
            }
        }
        if self.mapping.slots.is_empty() || self.mapping.slots.iter().any(|&s| s >= self.members.len()) {
            return Err(config_err("mapping slots must index population members"));
        }
        if self.d_push == 0 || self.d_pull == 0 {
            return Err(config_err("d_push and d_pull must be at least 1"));
        }
        if self.actors == 0 || self.slice_len == 0 || self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(config_err("actors, slice_len, batch_size and buffer_capacity must be positive"));
        }
        if self.reuse == 0 {
            return Err(config_err("reuse budget must be at least 1"));
        }
        if self.mode == ExecMode::Sequential && self.actors != 1 {
            return Err(config_err("sequential mode runs exactly one actor"));
        }
        let grid = self.region_grid()?;
        if self.selection == Selection::Bandit && self.bandit.top_d > grid.num_regions() {
            return Err(config_err(format!(
                "top-d {} exceeds the {} regions",
                self.bandit.top_d,
                grid.num_regions()
            )));
        }
        Ok(())
    }

    pub fn region_grid(&self) -> Result<RegionGrid> {
        RegionGrid::new(self.mapping.family, self.mapping.components(), self.grid.clone())
    }

    pub fn num_states(&self) -> usize {
        self.env.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.env.num_actions()
    }
}
