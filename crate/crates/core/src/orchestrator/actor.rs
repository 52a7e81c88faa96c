use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::behavior::{sample_action, BehaviorMapping, Psi};
use crate::config::{RunConfig, Selection};
use crate::env::Environment;
use crate::error::{LbcError, Result};
use crate::metactrl::{BanditPopulation, MetaController, RegionGrid};
use crate::metrics::MetricsRecord;
use crate::offpolicy::{Step, TrajectorySlice};
use crate::policy::{entropy, kl, PolicyModel};
use crate::rng::{derive_seed, stream, stream_rng, Rng};

use super::store::{ParameterSnapshot, ParameterStore};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActorStats {
    pub episodes: u64,
    pub env_steps: u64,
    pub pulls: u64,
    /// Largest gap between the newest published version and the one in use,
    /// sampled at every pull.
    pub max_staleness: u64,
}

pub struct Actor {
    id: usize,
    run_id: String,
    seed: u64,
    env: Environment,
    controller: MetaController,
    grid: RegionGrid,
    mapping: BehaviorMapping,
    rng: Rng,
    snapshot: Arc<ParameterSnapshot>,
    since_pull: u64,
    d_pull: u64,
    slice_len: usize,
    kl_interval: u64,
    kl_states: usize,
    stats: ActorStats,
    probs: Vec<f64>,
    scratch: Vec<f64>,
}

impl Actor {
    pub fn new(id: usize, run_id: &str, cfg: &RunConfig, store: &ParameterStore) -> Result<Self> {
        let grid = cfg.region_grid()?;
        let rng = stream_rng(cfg.seed, stream::ACTOR, id as u64);
        let controller = match cfg.selection {
            Selection::Bandit => {
                let mut brng = stream_rng(cfg.seed, stream::BANDIT, id as u64);
                MetaController::Bandits(BanditPopulation::new(grid.num_regions(), cfg.bandit.clone(), &mut brng)?)
            }
            Selection::Random => MetaController::Uniform,
        };
        let snapshot = store.latest();
        if snapshot.models.is_empty() {
            return Err(LbcError::Config("parameter store holds no models".into()));
        }
        let na = cfg.num_actions();
        Ok(Actor {
            id,
            run_id: run_id.to_string(),
            seed: cfg.seed,
            env: Environment::new(cfg.env.clone())?,
            controller,
            grid,
            mapping: cfg.mapping.clone(),
            rng,
            snapshot,
            since_pull: 0,
            d_pull: cfg.d_pull,
            slice_len: cfg.slice_len,
            kl_interval: cfg.kl_interval,
            kl_states: cfg.kl_states,
            stats: ActorStats::default(),
            probs: vec![0.0; na],
            scratch: vec![0.0; na],
        })
    }

    pub fn stats(&self) -> &ActorStats {
        &self.stats
    }

    pub fn controller(&self) -> &MetaController {
        &self.controller
    }

    pub fn snapshot(&self) -> &Arc<ParameterSnapshot> {
        &self.snapshot
    }

    fn pull(&mut self, store: &ParameterStore) {
        let latest = store.latest();
        self.stats.max_staleness = self.stats.max_staleness.max(latest.version - self.snapshot.version);
        self.snapshot = latest;
        self.stats.pulls += 1;
        self.since_pull = 0;
    }

    fn choose(&mut self) -> (Option<usize>, Psi) {
        match &self.controller {
            MetaController::Bandits(pop) => {
                let region = pop.population_sample(&mut self.rng).arm;
                (Some(region), self.grid.sample_psi(region, &mut self.rng))
            }
            MetaController::Uniform => (None, self.grid.sample_uniform(&mut self.rng)),
        }
    }

    /// Plays one episode, handing each slice to `sink` as soon as it is cut.
    /// `clock` is the global environment step counter. The record's learner
    /// losses are left empty for the caller to fill.
    pub fn run_episode(
        &mut self,
        store: &ParameterStore,
        clock: &AtomicU64,
        mut sink: impl FnMut(TrajectorySlice) -> Result<()>,
    ) -> Result<MetricsRecord> {
        let episode = self.stats.episodes;
        let (region, psi) = self.choose();
        let env_seed = derive_seed(self.seed, stream::ENV, ((self.id as u64) << 40) | episode);
        let mut state = self.env.reset(env_seed);

        let mut current: Vec<Step> = Vec::with_capacity(self.slice_len);
        let mut ret = 0.0;
        let mut entropy_sum = 0.0;
        let mut len = 0u64;
        let mut version = None;
        let mut wall_step;
        loop {
            if self.since_pull >= self.d_pull {
                self.pull(store);
            }
            version.get_or_insert(self.snapshot.version);
            self.mapping.fill(&self.snapshot.models, &psi, state, &mut self.probs, &mut self.scratch);
            entropy_sum += entropy(&self.probs);
            let (action, mu) = sample_action(&self.probs, &mut self.rng);
            let tr = self.env.step(action)?;
            self.since_pull += 1;
            wall_step = clock.fetch_add(1, Ordering::SeqCst) + 1;
            len += 1;
            ret += tr.reward;
            current.push(Step { state, action, reward: tr.reward, behavior_prob: mu, terminal: tr.terminal });
            if tr.terminal || current.len() == self.slice_len {
                let steps = std::mem::replace(&mut current, Vec::with_capacity(self.slice_len));
                sink(TrajectorySlice { steps, bootstrap_state: tr.next_state })?;
            }
            state = tr.next_state;
            if tr.terminal {
                break;
            }
        }
        self.stats.episodes += 1;
        self.stats.env_steps += len;

        let (arm_visits, arm_mean) = match (&mut self.controller, region) {
            (MetaController::Bandits(pop), Some(r)) => {
                pop.finish_episode(r, ret, &mut self.rng);
                // a bandit may have just been replaced; report the longest-lived view
                let arm = pop.bandits.iter().map(|b| b.arms[r]).max_by_key(|a| a.visits).unwrap_or_default();
                (Some(arm.visits), Some(arm.mean))
            }
            _ => (None, None),
        };
        let kl_matrix = (self.kl_interval > 0 && episode.is_multiple_of(self.kl_interval))
            .then(|| kl_matrix(&self.snapshot.models, self.kl_states));

        Ok(MetricsRecord {
            run_id: self.run_id.clone(),
            seed: self.seed,
            wall_step,
            episode,
            actor: self.id,
            episode_return: ret,
            episode_len: len,
            behavior_entropy: entropy_sum / len as f64,
            region,
            psi,
            arm_visits,
            arm_mean,
            snapshot_version: version.unwrap_or(self.snapshot.version),
            learner_losses: Vec::new(),
            kl_matrix,
        })
    }
}

/// Mean `KL(pi_i || pi_j)` over up to `max_states` evenly spaced states.
pub fn kl_matrix(models: &[PolicyModel], max_states: usize) -> Vec<Vec<f64>> {
    let n = models.len();
    let ns = models[0].num_states();
    let picks: Vec<usize> = if ns <= max_states || max_states == 0 {
        (0..ns).collect()
    } else {
        (0..max_states).map(|k| k * ns / max_states).collect()
    };
    let policies: Vec<Vec<Vec<f64>>> = models
        .iter()
        .map(|m| picks.iter().map(|&s| m.target_policy(s).into_vec()).collect())
        .collect();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let total: f64 = (0..picks.len()).map(|k| kl(&policies[i][k], &policies[j][k])).sum();
                out[i][j] = total / picks.len() as f64;
            }
        }
    }
    out
}
