//! Small episodic MDPs and the reward-shaping transforms used by the learners.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, LbcError, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvKind {
    /// States `0..length` plus the goal state `length`. Action 0 moves left
    /// (clamped at the wall), action 1 moves right.
    DeepChain { length: usize },
    /// Four-action grid with a fixed start cell `(0, 0)`.
    SparseGrid {
        width: usize,
        height: usize,
        goal: (usize, usize),
        trap_penalty: f64,
        #[serde(default)]
        traps: Vec<(usize, usize)>,
    },
    /// One decision per episode. State 0 is the start, state 1 absorbs.
    BernoulliBandit { arms: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    #[serde(flatten)]
    pub kind: EnvKind,
    pub max_episode_len: usize,
}

impl EnvSpec {
    pub fn deep_chain(length: usize, max_episode_len: usize) -> Self {
        EnvSpec { kind: EnvKind::DeepChain { length }, max_episode_len }
    }

    pub fn bernoulli_bandit(arms: Vec<f64>) -> Self {
        EnvSpec { kind: EnvKind::BernoulliBandit { arms }, max_episode_len: 1 }
    }

    pub fn num_states(&self) -> usize {
        match &self.kind {
            EnvKind::DeepChain { length } => length + 1,
            EnvKind::SparseGrid { width, height, .. } => width * height,
            EnvKind::BernoulliBandit { .. } => 2,
        }
    }

    pub fn num_actions(&self) -> usize {
        match &self.kind {
            EnvKind::DeepChain { .. } => 2,
            EnvKind::SparseGrid { .. } => 4,
            EnvKind::BernoulliBandit { arms } => arms.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_episode_len == 0 {
            return Err(config_err("max_episode_len must be positive"));
        }
        match &self.kind {
            EnvKind::DeepChain { length } => {
                if *length == 0 {
                    return Err(config_err("deep chain length must be positive"));
                }
            }
            EnvKind::SparseGrid { width, height, goal, trap_penalty, traps } => {
                if width * height < 2 {
                    return Err(config_err("grid needs at least two cells"));
                }
                let inside = |c: &(usize, usize)| c.0 < *width && c.1 < *height;
                if !inside(goal) || *goal == (0, 0) {
                    return Err(config_err("goal must be inside the grid and differ from the start"));
                }
                if traps.iter().any(|t| !inside(t) || *t == (0, 0) || t == goal) {
                    return Err(config_err("traps must be inside the grid, off the start and goal"));
                }
                if !trap_penalty.is_finite() || *trap_penalty < 0.0 {
                    return Err(config_err("trap penalty must be finite and non-negative"));
                }
            }
            EnvKind::BernoulliBandit { arms } => {
                if arms.len() < 2 {
                    return Err(config_err("bandit needs at least two arms"));
                }
                if arms.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(config_err("arm probabilities must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Undiscounted per-step cost applied to every non-goal move.
    pub fn step_cost(&self) -> f64 {
        match &self.kind {
            EnvKind::DeepChain { length } => 0.01 / *length as f64,
            EnvKind::SparseGrid { width, height, .. } => 0.01 / (width + height) as f64,
            EnvKind::BernoulliBandit { .. } => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub terminal: bool,
}

/// A single-owner environment instance.
#[derive(Debug)]
pub struct Environment {
    spec: EnvSpec,
    state: usize,
    steps: usize,
    done: bool,
    rng: Rng,
}

impl Environment {
    pub fn new(spec: EnvSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Environment {
            spec,
            state: 0,
            steps: 0,
            done: true,
            rng: crate::rng::stream_rng(0, crate::rng::stream::ENV, 0),
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn reset(&mut self, seed: u64) -> usize {
        self.rng = crate::rng::stream_rng(seed, crate::rng::stream::ENV, 0);
        self.state = 0;
        self.steps = 0;
        self.done = false;
        self.state
    }

    pub fn step(&mut self, action: usize) -> Result<Transition> {
        if self.done {
            return Err(LbcError::Usage("step called on a finished episode".into()));
        }
        if action >= self.spec.num_actions() {
            return Err(LbcError::Usage(format!(
                "action {action} out of range for {} actions",
                self.spec.num_actions()
            )));
        }
        let cost = self.spec.step_cost();
        let state = self.state;
        let (next_state, reward, mut terminal) = match &self.spec.kind {
            EnvKind::DeepChain { length } => {
                if action == 1 {
                    if state + 1 >= *length {
                        (*length, 1.0, true)
                    } else {
                        (state + 1, -cost, false)
                    }
                } else {
                    (state.saturating_sub(1), -cost, false)
                }
            }
            EnvKind::SparseGrid { width, height, goal, trap_penalty, traps } => {
                let (mut x, mut y) = (state % width, state / width);
                match action {
                    0 => x = x.saturating_sub(1),
                    1 => x = (x + 1).min(width - 1),
                    2 => y = y.saturating_sub(1),
                    _ => y = (y + 1).min(height - 1),
                }
                let next = y * width + x;
                if (x, y) == *goal {
                    (next, 1.0, true)
                } else if traps.contains(&(x, y)) {
                    (next, -trap_penalty, true)
                } else {
                    (next, -cost, false)
                }
            }
            EnvKind::BernoulliBandit { arms } => {
                let hit = self.rng.random::<f64>() < arms[action];
                (1, if hit { 1.0 } else { 0.0 }, true)
            }
        };
        self.steps += 1;
        if self.steps >= self.spec.max_episode_len {
            terminal = true;
        }
        self.state = next_state;
        self.done = terminal;
        Ok(Transition { state, action, reward, next_state, terminal })
    }
}

/// Learner-local monotone reward transforms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum RewardShaping {
    /// `sign(x)(sqrt(|x|+1) - 1) + 0.001 x`
    SqrtCompress,
    /// Log scaling, doubled on the non-negative side.
    LogScale,
    /// `0.3 min(tanh x, 0) + 5 max(tanh x, 0)`
    TanhAsymmetric,
}

impl RewardShaping {
    pub fn id(self) -> u8 {
        match self {
            RewardShaping::SqrtCompress => 1,
            RewardShaping::LogScale => 2,
            RewardShaping::TanhAsymmetric => 3,
        }
    }

    pub fn apply(self, r: f64) -> f64 {
        match self {
            RewardShaping::SqrtCompress => {
                // signum(0.0) is 1.0, but sqrt(1) - 1 is exactly zero there.
                r.signum() * ((r.abs() + 1.0).sqrt() - 1.0) + 0.001 * r
            }
            RewardShaping::LogScale => {
                let mag = (r.abs() + 1.0).ln();
                if r >= 0.0 {
                    2.0 * mag
                } else {
                    -mag
                }
            }
            RewardShaping::TanhAsymmetric => {
                let t = r.tanh();
                0.3 * t.min(0.0) + 5.0 * t.max(0.0)
            }
        }
    }
}

impl TryFrom<u8> for RewardShaping {
    type Error = LbcError;

    fn try_from(id: u8) -> Result<Self> {
        match id {
            1 => Ok(RewardShaping::SqrtCompress),
            2 => Ok(RewardShaping::LogScale),
            3 => Ok(RewardShaping::TanhAsymmetric),
            other => Err(config_err(format!("unknown reward shaping id {other}"))),
        }
    }
}

impl From<RewardShaping> for u8 {
    fn from(rs: RewardShaping) -> u8 {
        rs.id()
    }
}

pub fn shape_reward(rs_id: u8, r: f64) -> Result<f64> {
    Ok(RewardShaping::try_from(rs_id)?.apply(r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(len: usize) -> Environment {
        Environment::new(EnvSpec::deep_chain(len, 100)).unwrap()
    }

    #[test]
    fn resets_to_start() {
        let mut e = chain(30);
        assert_eq!(e.reset(123), 0);
        let grid = EnvSpec {
            kind: EnvKind::SparseGrid {
                width: 5,
                height: 5,
                goal: (4, 4),
                trap_penalty: 1.0,
                traps: vec![],
            },
            max_episode_len: 50,
        };
        let mut g = Environment::new(grid).unwrap();
        assert_eq!(g.reset(7), 0);
        let mut b = Environment::new(EnvSpec::bernoulli_bandit(vec![0.1, 0.9])).unwrap();
        assert_eq!(b.reset(3), 0);
    }

    #[test]
    fn chain_goal_and_wall() {
        let mut e = chain(3);
        e.reset(0);
        e.step(1).unwrap();
        e.step(1).unwrap();
        assert_eq!(e.state(), 2);
        let t = e.step(1).unwrap();
        assert_eq!(t.reward, 1.0);
        assert!(t.terminal);

        let mut e = chain(3);
        e.reset(0);
        let t = e.step(0).unwrap();
        assert_eq!(t.next_state, 0);
        assert_eq!(t.reward, -0.01 / 3.0);
        assert!(!t.terminal);
    }

    #[test]
    fn degenerate_bandit_arm() {
        let mut b = Environment::new(EnvSpec::bernoulli_bandit(vec![1.0, 0.0])).unwrap();
        b.reset(11);
        let t = b.step(0).unwrap();
        assert_eq!(t.reward, 1.0);
        assert!(t.terminal);
        assert_eq!(t.next_state, 1);
    }

    #[test]
    fn usage_errors() {
        let mut e = chain(3);
        assert!(matches!(e.step(0), Err(LbcError::Usage(_))));
        e.reset(0);
        assert!(matches!(e.step(2), Err(LbcError::Usage(_))));
        let mut b = Environment::new(EnvSpec::bernoulli_bandit(vec![0.5, 0.5])).unwrap();
        b.reset(0);
        b.step(1).unwrap();
        assert!(matches!(b.step(1), Err(LbcError::Usage(_))));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(Environment::new(EnvSpec::bernoulli_bandit(vec![0.5])).is_err());
        assert!(Environment::new(EnvSpec::bernoulli_bandit(vec![0.5, 1.5])).is_err());
        assert!(Environment::new(EnvSpec::deep_chain(0, 10)).is_err());
        assert!(Environment::new(EnvSpec::deep_chain(5, 0)).is_err());
    }

    #[test]
    fn episode_length_capped() {
        let mut e = Environment::new(EnvSpec::deep_chain(30, 7)).unwrap();
        e.reset(1);
        let mut n = 0;
        loop {
            n += 1;
            if e.step(0).unwrap().terminal {
                break;
            }
        }
        assert_eq!(n, 7);
    }

    #[test]
    fn grid_trap_and_goal() {
        let spec = EnvSpec {
            kind: EnvKind::SparseGrid {
                width: 3,
                height: 2,
                goal: (2, 1),
                trap_penalty: 0.5,
                traps: vec![(1, 0)],
            },
            max_episode_len: 20,
        };
        let mut g = Environment::new(spec.clone()).unwrap();
        g.reset(0);
        let t = g.step(1).unwrap();
        assert!(t.terminal);
        assert_eq!(t.reward, -0.5);
        let mut g = Environment::new(spec).unwrap();
        g.reset(0);
        g.step(3).unwrap();
        g.step(1).unwrap();
        let t = g.step(1).unwrap();
        assert!(t.terminal);
        assert_eq!(t.reward, 1.0);
    }

    #[test]
    fn shaping_values() {
        for id in 1..=3 {
            assert_eq!(shape_reward(id, 0.0).unwrap(), 0.0);
        }
        // closed forms evaluated independently
        let rs1 = 4f64.sqrt() - 1.0 + 0.003;
        assert!((shape_reward(1, 3.0).unwrap() - rs1).abs() < 1e-15);
        assert!((shape_reward(1, 3.0).unwrap() - 1.003).abs() < 1e-12);
        let rs3 = 0.3 * (-1f64).tanh();
        assert!((shape_reward(3, -1.0).unwrap() - rs3).abs() < 1e-15);
        assert!((shape_reward(3, -1.0).unwrap() + 0.228_478).abs() < 1e-6);
        assert!(matches!(shape_reward(4, 1.0), Err(LbcError::Config(_))));
    }

    #[test]
    fn shaping_monotone_on_grid() {
        for id in 1..=3u8 {
            let mut prev = f64::NEG_INFINITY;
            for k in 0..1000 {
                let r = -50.0 + 100.0 * k as f64 / 999.0;
                let v = shape_reward(id, r).unwrap();
                assert!(v >= prev, "rs{id} not monotone at {r}");
                prev = v;
            }
        }
    }

    #[test]
    fn deterministic_transitions() {
        let spec = EnvSpec::bernoulli_bandit(vec![0.3, 0.6, 0.5]);
        let run = || {
            let mut e = Environment::new(spec.clone()).unwrap();
            (0..200)
                .map(|i| {
                    e.reset(99 + i);
                    e.step((i % 3) as usize).unwrap()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
