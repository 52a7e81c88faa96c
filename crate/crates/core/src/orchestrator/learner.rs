use std::sync::Arc;

use crate::config::ReplayOrder;
use crate::error::Result;
use crate::offpolicy::{train_on_batch, LearnerConfig, LossStats, TrajectorySlice};
use crate::policy::PolicyModel;
use crate::rng::{stream, stream_rng, Rng};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearnerStats {
    pub steps: u64,
    pub slices: u64,
    pub publishes: u64,
    pub last_loss: LossStats,
}

/// Owns and trains one population member.
pub struct Learner {
    pub id: usize,
    model: PolicyModel,
    cfg: LearnerConfig,
    pub(crate) rng: Rng,
    pub(crate) order: ReplayOrder,
    stats: LearnerStats,
}

impl Learner {
    pub fn new(id: usize, model: PolicyModel, cfg: LearnerConfig, seed: u64, order: ReplayOrder) -> Self {
        Learner {
            id,
            model,
            cfg,
            rng: stream_rng(seed, stream::LEARNER, id as u64),
            order,
            stats: LearnerStats::default(),
        }
    }

    pub fn model(&self) -> &PolicyModel {
        &self.model
    }

    pub fn stats(&self) -> &LearnerStats {
        &self.stats
    }

    /// One gradient step on `batch`, with rewards shaped by this member's
    /// own transform and targets computed against its own target policy.
    pub fn step(&mut self, batch: &[Arc<TrajectorySlice>]) -> Result<LossStats> {
        let loss = train_on_batch(&mut self.model, batch, &self.cfg)?;
        self.stats.steps += 1;
        self.stats.slices += batch.len() as u64;
        self.stats.last_loss = LossStats { steps: self.stats.steps, ..loss };
        Ok(self.stats.last_loss)
    }

    pub(crate) fn note_publish(&mut self) {
        self.stats.publishes += 1;
    }
}
