//! Off-policy corrected targets (V-trace for V, Retrace for Q) and the
//! tabular updates each population member applies to shared behavior data.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, LbcError, Result};
use crate::policy::PolicyModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    /// Raw environment reward; learners shape it locally.
    pub reward: f64,
    /// `mu(a_t | s_t)` logged at acting time.
    pub behavior_prob: f64,
    pub terminal: bool,
}

/// A contiguous piece of one episode. A slice cut at the episode end is
/// shorter than the nominal length and ends with a terminal step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySlice {
    pub steps: Vec<Step>,
    /// State following the last step; ignored when that step is terminal.
    pub bootstrap_state: usize,
}

impl TrajectorySlice {
    pub fn new(steps: Vec<Step>, bootstrap_state: usize) -> Result<Self> {
        let s = TrajectorySlice { steps, bootstrap_state };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn ends_terminal(&self) -> bool {
        self.steps.last().is_some_and(|s| s.terminal)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(LbcError::DataCorruption("empty slice".into()));
        }
        for (t, st) in self.steps.iter().enumerate() {
            if !(st.behavior_prob > 0.0 && st.behavior_prob <= 1.0) {
                return Err(LbcError::DataCorruption(format!(
                    "behavior probability {} at step {t}",
                    st.behavior_prob
                )));
            }
            if st.terminal && t + 1 != self.steps.len() {
                return Err(LbcError::DataCorruption(format!("steps after terminal step {t}")));
            }
        }
        Ok(())
    }

    /// State at `t + 1`, or `None` past a terminal.
    fn next_state(&self, t: usize) -> Option<usize> {
        if self.steps[t].terminal {
            None
        } else if t + 1 < self.steps.len() {
            Some(self.steps[t + 1].state)
        } else {
            Some(self.bootstrap_state)
        }
    }
}

/// Per-state action probabilities of a target policy, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTable {
    num_actions: usize,
    probs: Vec<f64>,
}

impl PolicyTable {
    pub fn new(num_actions: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len() % num_actions, 0);
        PolicyTable { num_actions, probs }
    }

    /// `softmax(A(s, .))` for every state of `model`.
    pub fn target_of(model: &PolicyModel) -> Self {
        let mut probs = Vec::with_capacity(model.num_states() * model.num_actions());
        for s in 0..model.num_states() {
            probs.extend(model.target_policy(s).into_vec());
        }
        PolicyTable::new(model.num_actions(), probs)
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetraceBootstrap {
    /// `E_{a' ~ pi} Q(s_{t+1}, a')`
    Expected,
    /// `Q(s_{t+1}, a_{t+1})` with the logged next action.
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub rho_clip: f64,
    pub c_clip: f64,
    /// V-loss scale.
    pub xi: f64,
    /// Q-loss scale.
    pub alpha: f64,
    /// Policy-loss scale.
    pub beta: f64,
    pub learning_rate: f64,
    pub retrace_lambda: f64,
    pub retrace_clip: f64,
    pub retrace_bootstrap: RetraceBootstrap,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            rho_clip: 1.05,
            c_clip: 1.05,
            xi: 1.0,
            alpha: 5.0,
            beta: 5.0,
            learning_rate: 0.02,
            retrace_lambda: 0.95,
            retrace_clip: 1.0,
            retrace_bootstrap: RetraceBootstrap::Expected,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_clip > 0.0 && self.rho_clip >= self.c_clip) {
            return Err(config_err("clip constants need rho_clip >= c_clip > 0"));
        }
        for (name, v) in [("xi", self.xi), ("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err(format!("{name} must be non-negative")));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err("learning rate must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.retrace_lambda) || self.retrace_clip.is_nan() || self.retrace_clip <= 0.0 {
            return Err(config_err("retrace lambda must be in [0, 1] with a positive clip"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VTrace {
    pub targets: Vec<f64>,
    /// Clipped `min(pi/mu, rho_clip)`.
    pub rhos: Vec<f64>,
    /// Clipped `min(pi/mu, c_clip)`.
    pub cs: Vec<f64>,
}

fn ratios(slice: &TrajectorySlice, pi: &PolicyTable) -> Result<Vec<f64>> {
    slice.validate()?;
    Ok(slice
        .steps
        .iter()
        .map(|st| pi.prob(st.state, st.action) / st.behavior_prob)
        .collect())
}

/// V-trace value targets via the backward recursion
/// `v_t - V(s_t) = rho_t delta_t + gamma c_t (v_{t+1} - V(s_{t+1}))`.
pub fn vtrace_targets(
    slice: &TrajectorySlice,
    rewards: &[f64],
    values: &[f64],
    pi: &PolicyTable,
    gamma: f64,
    rho_clip: f64,
    c_clip: f64,
) -> Result<VTrace> {
    let ratio = ratios(slice, pi)?;
    let n = slice.len();
    let mut out = VTrace { targets: vec![0.0; n], rhos: vec![0.0; n], cs: vec![0.0; n] };
    let mut carry = 0.0;
    for t in (0..n).rev() {
        let st = &slice.steps[t];
        let rho = ratio[t].min(rho_clip);
        let c = ratio[t].min(c_clip);
        let next_v = slice.next_state(t).map_or(0.0, |s| values[s]);
        let delta = rewards[t] + gamma * next_v - values[st.state];
        if st.terminal {
            carry = 0.0;
        }
        carry = rho * delta + gamma * c * carry;
        out.targets[t] = values[st.state] + carry;
        out.rhos[t] = rho;
        out.cs[t] = c;
    }
    Ok(out)
}

/// Retrace action-value targets with traces `lambda min(clip, pi/mu)`.
#[allow(clippy::too_many_arguments)]
pub fn retrace_targets(
    slice: &TrajectorySlice,
    rewards: &[f64],
    model: &PolicyModel,
    pi: &PolicyTable,
    gamma: f64,
    lambda: f64,
    trace_clip: f64,
    bootstrap: RetraceBootstrap,
) -> Result<Vec<f64>> {
    let ratio = ratios(slice, pi)?;
    let n = slice.len();
    let mut q_targets = vec![0.0; n];
    for t in (0..n).rev() {
        let Some(next) = slice.next_state(t) else {
            q_targets[t] = rewards[t];
            continue;
        };
        let expected = |s: usize| -> f64 {
            pi.row(s).iter().zip(model.q_row(s)).map(|(p, q)| p * q).sum()
        };
        let inside = t + 1 < n;
        let base = match (bootstrap, inside) {
            (RetraceBootstrap::Sampled, true) => model.q(next, slice.steps[t + 1].action),
            _ => expected(next),
        };
        let correction = if inside {
            let c = lambda * ratio[t + 1].min(trace_clip);
            c * (q_targets[t + 1] - model.q(next, slice.steps[t + 1].action))
        } else {
            0.0
        };
        q_targets[t] = rewards[t] + gamma * (base + correction);
    }
    Ok(q_targets)
}

/// `r_t + gamma v_{t+1} - V(s_t)` where `v_{t+1}` is the next V-trace target,
/// `V(bootstrap)` at the slice end and zero past a terminal.
pub fn pg_advantages(
    slice: &TrajectorySlice,
    rewards: &[f64],
    values: &[f64],
    vtrace: &[f64],
    gamma: f64,
) -> Vec<f64> {
    let n = slice.len();
    (0..n)
        .map(|t| {
            let next = match slice.next_state(t) {
                None => 0.0,
                Some(_) if t + 1 < n => vtrace[t + 1],
                Some(s) => values[s],
            };
            rewards[t] + gamma * next - values[slice.steps[t].state]
        })
        .collect()
}

/// Gradient of `sum_t rho_t adv_t log pi(a_t | s_t)` with respect to the
/// policy logits (the Q table, since `V(s)` cancels in the softmax).
/// `rho` and `adv` are treated as constants. Row-major like the Q table.
pub fn policy_gradient(model: &PolicyModel, slice: &TrajectorySlice, weights: &[f64]) -> Vec<f64> {
    let na = model.num_actions();
    let mut grad = vec![0.0; model.num_states() * na];
    for (st, &w) in slice.steps.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let pi = model.target_policy(st.state);
        let row = &mut grad[st.state * na..(st.state + 1) * na];
        for (a, g) in row.iter_mut().enumerate() {
            let indicator = if a == st.action { 1.0 } else { 0.0 };
            *g += w * (indicator - pi[a]);
        }
    }
    grad
}

/// Ascends the clipped importance-weighted policy-gradient surrogate by
/// `beta * lr`. States not visited in the slice are untouched.
pub fn pg_update(
    model: &mut PolicyModel,
    slice: &TrajectorySlice,
    advantages: &[f64],
    rhos: &[f64],
    learning_rate: f64,
    beta: f64,
) {
    let weights: Vec<f64> = advantages.iter().zip(rhos).map(|(a, r)| a * r).collect();
    let grad = policy_gradient(model, slice, &weights);
    apply_gradient(model, &grad, beta * learning_rate);
}

pub(crate) fn apply_gradient(model: &mut PolicyModel, grad: &[f64], scale: f64) {
    let na = model.num_actions();
    for s in 0..model.num_states() {
        let g = &grad[s * na..(s + 1) * na];
        if g.iter().all(|x| *x == 0.0) {
            continue;
        }
        for (q, d) in model.q_row_mut(s).iter_mut().zip(g) {
            *q += scale * d;
        }
    }
}

/// One SGD step per visited entry on `xi/2 (v - V)^2` and `alpha/2 (q - Q)^2`.
pub fn value_updates(
    model: &mut PolicyModel,
    slice: &TrajectorySlice,
    v_targets: &[f64],
    q_targets: &[f64],
    xi: f64,
    alpha: f64,
    learning_rate: f64,
) {
    for ((st, v), q) in slice.steps.iter().zip(v_targets).zip(q_targets) {
        let vs = model.v_mut(st.state);
        *vs += xi * learning_rate * (v - *vs);
        let qs = model.q_mut(st.state, st.action);
        *qs += alpha * learning_rate * (q - *qs);
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub v_loss: f64,
    pub q_loss: f64,
    pub pi_loss: f64,
    pub steps: u64,
}

/// One learner step on a batch: all targets and the policy gradient are
/// computed from the model as it was before the step, then applied.
pub fn train_on_batch<S: std::ops::Deref<Target = TrajectorySlice>>(
    model: &mut PolicyModel,
    batch: &[S],
    cfg: &LearnerConfig,
) -> Result<LossStats> {
    let gamma = model.hyper.gamma;
    let rs = model.hyper.rs;
    let pi = PolicyTable::target_of(model);
    let snapshot = model.clone();
    let mut grad = vec![0.0; model.num_states() * model.num_actions()];
    let mut prepared = Vec::with_capacity(batch.len());
    let (mut v_loss, mut q_loss, mut pi_loss, mut count) = (0.0, 0.0, 0.0, 0usize);
    for slice in batch {
        let slice: &TrajectorySlice = slice;
        let rewards: Vec<f64> = slice.steps.iter().map(|s| rs.apply(s.reward)).collect();
        let vt = vtrace_targets(slice, &rewards, snapshot.v_table(), &pi, gamma, cfg.rho_clip, cfg.c_clip)?;
        let qt = retrace_targets(
            slice,
            &rewards,
            &snapshot,
            &pi,
            gamma,
            cfg.retrace_lambda,
            cfg.retrace_clip,
            cfg.retrace_bootstrap,
        )?;
        let adv = pg_advantages(slice, &rewards, snapshot.v_table(), &vt.targets, gamma);
        let weights: Vec<f64> = adv.iter().zip(&vt.rhos).map(|(a, r)| a * r).collect();
        for (g, d) in grad.iter_mut().zip(policy_gradient(&snapshot, slice, &weights)) {
            *g += d;
        }
        for (t, st) in slice.steps.iter().enumerate() {
            v_loss += 0.5 * (vt.targets[t] - snapshot.v(st.state)).powi(2);
            q_loss += 0.5 * (qt[t] - snapshot.q(st.state, st.action)).powi(2);
            pi_loss -= weights[t] * pi.prob(st.state, st.action).max(1e-300).ln();
        }
        count += slice.len();
        prepared.push((vt.targets, qt));
    }
    for (slice, (vt, qt)) in batch.iter().zip(&prepared) {
        value_updates(model, slice, vt, qt, cfg.xi, cfg.alpha, cfg.learning_rate);
    }
    apply_gradient(model, &grad, cfg.beta * cfg.learning_rate);
    let n = count.max(1) as f64;
    Ok(LossStats { v_loss: v_loss / n, q_loss: q_loss / n, pi_loss: pi_loss / n, steps: 1 })
}
