//! Actor-learner runtime: learners train population members from a shared
//! trajectory buffer and publish them to a versioned store; actors pull
//! snapshots, act with bandit-selected hybrid behaviors and feed the buffer.

mod actor;
mod buffer;
mod learner;
mod store;

pub use actor::{kl_matrix, Actor, ActorStats};
pub use buffer::{BufferStats, TrajectoryBuffer};
pub use learner::{Learner, LearnerStats};
pub use store::{ParameterSnapshot, ParameterStore};

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::config::{ExecMode, RunConfig};
use crate::error::{LbcError, Result};
use crate::metrics::MetricsRecord;
use crate::offpolicy::LossStats;
use crate::policy::PolicyModel;

/// What a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct RunArtifact {
    pub snapshot: Arc<ParameterSnapshot>,
    /// Episode records ordered by wall step.
    pub records: Vec<MetricsRecord>,
    pub actors: Vec<ActorStats>,
    pub learners: Vec<LearnerStats>,
    pub buffer: BufferStats,
}

pub fn initial_models(cfg: &RunConfig) -> Vec<PolicyModel> {
    cfg.members
        .iter()
        .map(|h| PolicyModel::zeros(*h, cfg.num_states(), cfg.num_actions()))
        .collect()
}

/// Runs one experiment to its environment-step budget. An episode that is
/// in flight when the budget runs out is played to its end.
pub fn train(cfg: &RunConfig, run_id: &str) -> Result<RunArtifact> {
    train_inner(cfg, run_id, &Faults::default())
}

#[derive(Debug, Default)]
struct Faults {
    learner_panic_at: Option<(usize, u64)>,
}

fn train_inner(cfg: &RunConfig, run_id: &str, faults: &Faults) -> Result<RunArtifact> {
    cfg.validate()?;
    let store = ParameterStore::new(initial_models(cfg));
    let buffer = TrajectoryBuffer::new(cfg.buffer_capacity, cfg.members.len(), cfg.reuse);
    let learners: Vec<Learner> = store
        .latest()
        .models
        .iter()
        .enumerate()
        .map(|(i, m)| Learner::new(i, m.clone(), cfg.learner.clone(), cfg.seed, cfg.replay))
        .collect();
    match cfg.mode {
        ExecMode::Sequential => {
            catch_unwind(AssertUnwindSafe(|| run_sequential(cfg, run_id, store, buffer, learners, faults)))
                .unwrap_or_else(|p| Err(LbcError::Worker(format!("panicked: {}", panic_message(p)))))
        }
        ExecMode::Concurrent => run_concurrent(cfg, run_id, store, buffer, learners, faults),
    }
}

fn check_fault(faults: &Faults, learner: &Learner) {
    if let Some((id, at)) = faults.learner_panic_at {
        if id == learner.id && learner.stats().steps == at {
            panic!("injected learner fault at step {at}");
        }
    }
}

/// One actor and all learners on the calling thread. Every slice goes to the
/// buffer as soon as it is cut, and learners take a lockstep round whenever a
/// full batch is available or the buffer is full. They publish together, so
/// each publish is one store version.
fn run_sequential(
    cfg: &RunConfig,
    run_id: &str,
    store: ParameterStore,
    buffer: TrajectoryBuffer,
    mut learners: Vec<Learner>,
    faults: &Faults,
) -> Result<RunArtifact> {
    let clock = AtomicU64::new(0);
    let mut actor = Actor::new(0, run_id, cfg, &store)?;
    let mut records = Vec::new();
    let mut rounds = 0u64;

    let mut round = |learners: &mut Vec<Learner>| -> Result<()> {
        for l in learners.iter_mut() {
            check_fault(faults, l);
            let batch = buffer.try_take_batch(l.id, cfg.batch_size, l.order, &mut l.rng);
            l.step(&batch)?;
        }
        rounds += 1;
        if rounds.is_multiple_of(cfg.d_push) {
            store.publish_all(learners.iter().map(|l| l.model().clone()).collect());
            learners.iter_mut().for_each(Learner::note_publish);
        }
        Ok(())
    };

    while clock.load(Ordering::SeqCst) < cfg.total_env_steps {
        let sink = |slice| -> Result<()> {
            let mut pending = Some(slice);
            while let Some(s) = pending {
                pending = buffer.try_push(s)?;
                if pending.is_some() {
                    round(&mut learners)?;
                }
            }
            while buffer.available(0) >= cfg.batch_size {
                round(&mut learners)?;
            }
            Ok(())
        };
        let mut record = actor.run_episode(&store, &clock, sink)?;
        record.learner_losses = learners.iter().map(|l| l.stats().last_loss).collect();
        records.push(record);
    }
    if learners.iter().any(|l| l.stats().steps % cfg.d_push != 0) {
        store.publish_all(learners.iter().map(|l| l.model().clone()).collect());
        learners.iter_mut().for_each(Learner::note_publish);
    }
    Ok(RunArtifact {
        snapshot: store.latest(),
        records,
        actors: vec![actor.stats().clone()],
        learners: learners.iter().map(|l| l.stats().clone()).collect(),
        buffer: buffer.stats(),
    })
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "worker panicked".into())
}

/// Threads for every actor and learner, joined through the store and buffer.
fn run_concurrent(
    cfg: &RunConfig,
    run_id: &str,
    store: ParameterStore,
    buffer: TrajectoryBuffer,
    learners: Vec<Learner>,
    faults: &Faults,
) -> Result<RunArtifact> {
    let clock = AtomicU64::new(0);
    let losses = Mutex::new(vec![LossStats::default(); learners.len()]);
    let records = Mutex::new(Vec::new());
    let failure: Mutex<Option<String>> = Mutex::new(None);
    let fail = |msg: String| {
        failure.lock().expect("failure lock").get_or_insert(msg);
        buffer.close();
    };

    let mut actors = Vec::with_capacity(cfg.actors);
    for id in 0..cfg.actors {
        actors.push(Actor::new(id, run_id, cfg, &store)?);
    }

    let (actor_stats, learner_stats) = std::thread::scope(|scope| {
        let learner_handles: Vec<_> = learners
            .into_iter()
            .map(|mut l| {
                let (store, buffer, losses, fail) = (&store, &buffer, &losses, &fail);
                scope.spawn(move || {
                    let body = AssertUnwindSafe(|| -> Result<()> {
                        while let Some(batch) = buffer.take_batch(l.id, cfg.batch_size, l.order, &mut l.rng) {
                            check_fault(faults, &l);
                            let loss = l.step(&batch)?;
                            losses.lock().expect("loss lock")[l.id] = loss;
                            if l.stats().steps % cfg.d_push == 0 {
                                store.publish(l.id, l.model().clone());
                                l.note_publish();
                            }
                        }
                        if l.stats().steps % cfg.d_push != 0 {
                            store.publish(l.id, l.model().clone());
                            l.note_publish();
                        }
                        Ok(())
                    });
                    match catch_unwind(body) {
                        Ok(Ok(())) => {}
                        Ok(Err(e)) => fail(format!("learner {}: {e}", l.id)),
                        Err(p) => fail(format!("learner {} panicked: {}", l.id, panic_message(p))),
                    }
                    l.stats().clone()
                })
            })
            .collect();

        let actor_handles: Vec<_> = actors
            .into_iter()
            .map(|mut a| {
                let (store, buffer, losses, records, clock, fail) =
                    (&store, &buffer, &losses, &records, &clock, &fail);
                scope.spawn(move || {
                    let body = AssertUnwindSafe(|| -> Result<()> {
                        while clock.load(Ordering::SeqCst) < cfg.total_env_steps && !buffer.is_closed() {
                            let mut record = match a.run_episode(store, clock, |s| buffer.push(s)) {
                                Ok(r) => r,
                                Err(LbcError::Closed) => return Ok(()),
                                Err(e) => return Err(e),
                            };
                            record.learner_losses = losses.lock().expect("loss lock").clone();
                            records.lock().expect("records lock").push(record);
                        }
                        Ok(())
                    });
                    match catch_unwind(body) {
                        Ok(Ok(())) => {}
                        Ok(Err(e)) => fail(format!("actor: {e}")),
                        Err(p) => fail(format!("actor panicked: {}", panic_message(p))),
                    }
                    a.stats().clone()
                })
            })
            .collect();

        let actor_stats: Vec<ActorStats> =
            actor_handles.into_iter().map(|h| h.join().expect("actor thread")).collect();
        buffer.close();
        let learner_stats: Vec<LearnerStats> =
            learner_handles.into_iter().map(|h| h.join().expect("learner thread")).collect();
        (actor_stats, learner_stats)
    });

    if let Some(msg) = failure.into_inner().expect("failure lock") {
        return Err(LbcError::Worker(msg));
    }
    let mut records = records.into_inner().expect("records lock");
    records.sort_by_key(|r| r.wall_step);
    Ok(RunArtifact {
        snapshot: store.latest(),
        records,
        actors: actor_stats,
        learners: learner_stats,
        buffer: buffer.stats(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvSpec;

    fn small(mode: ExecMode) -> RunConfig {
        RunConfig {
            mode,
            total_env_steps: 3_000,
            env: EnvSpec::deep_chain(6, 30),
            ..Default::default()
        }
    }

    #[test]
    fn learner_fault_aborts_sequential_run() {
        let faults = Faults { learner_panic_at: Some((1, 3)) };
        match train_inner(&small(ExecMode::Sequential), "x", &faults) {
            Err(LbcError::Worker(msg)) => assert!(msg.contains("injected learner fault"), "{msg}"),
            other => panic!("expected worker failure, got {other:?}"),
        }
    }

    #[test]
    fn learner_fault_aborts_concurrent_run() {
        let faults = Faults { learner_panic_at: Some((1, 3)) };
        let cfg = RunConfig { actors: 2, ..small(ExecMode::Concurrent) };
        match train_inner(&cfg, "x", &faults) {
            Err(LbcError::Worker(msg)) => assert!(msg.contains("injected learner fault"), "{msg}"),
            other => panic!("expected worker failure, got {other:?}"),
        }
    }
}
