//! Population members: tabular dueling models and distribution utilities.

use serde::{Deserialize, Serialize};

use crate::env::RewardShaping;
use crate::error::{config_err, LbcError, Result};

/// Hyper-parameters that index one population member.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyHyper {
    pub gamma: f64,
    pub rs: RewardShaping,
}

impl PolicyHyper {
    pub fn new(gamma: f64, rs: RewardShaping) -> Result<Self> {
        let h = PolicyHyper { gamma, rs };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(config_err(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        Ok(())
    }

    /// The three-member default population.
    pub fn defaults() -> Vec<PolicyHyper> {
        vec![
            PolicyHyper { gamma: 0.997, rs: RewardShaping::SqrtCompress },
            PolicyHyper { gamma: 0.999, rs: RewardShaping::LogScale },
            PolicyHyper { gamma: 0.99, rs: RewardShaping::TanhAsymmetric },
        ]
    }
}

/// Tabular Q and V. The advantage `Q(s, a) - V(s)` is derived on read and is
/// both the dueling head and the policy logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub hyper: PolicyHyper,
    num_states: usize,
    num_actions: usize,
    q: Vec<f64>,
    v: Vec<f64>,
}

impl PolicyModel {
    pub fn zeros(hyper: PolicyHyper, num_states: usize, num_actions: usize) -> Self {
        PolicyModel {
            hyper,
            num_states,
            num_actions,
            q: vec![0.0; num_states * num_actions],
            v: vec![0.0; num_states],
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn q_row(&self, s: usize) -> &[f64] {
        &self.q[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn q_row_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.q[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.num_actions + a]
    }

    pub fn q_mut(&mut self, s: usize, a: usize) -> &mut f64 {
        &mut self.q[s * self.num_actions + a]
    }

    pub fn v(&self, s: usize) -> f64 {
        self.v[s]
    }

    pub fn v_mut(&mut self, s: usize) -> &mut f64 {
        &mut self.v[s]
    }

    pub fn v_table(&self) -> &[f64] {
        &self.v
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.v).all(|x| x.is_finite())
    }

    pub fn advantage(&self, s: usize) -> Vec<f64> {
        let v = self.v[s];
        self.q_row(s).iter().map(|q| q - v).collect()
    }

    pub fn target_policy(&self, s: usize) -> ActionDistribution {
        ActionDistribution(softmax(&self.advantage(s), 1.0))
    }

    /// `softmax(tau * A(s, .))`; `tau` is an inverse temperature.
    pub fn boltzmann(&self, s: usize, tau: f64) -> Result<ActionDistribution> {
        check_tau(tau)?;
        Ok(ActionDistribution(softmax(&self.advantage(s), tau)))
    }

    /// Writes `softmax(tau * A(s, .))` into `out` without allocating.
    pub(crate) fn boltzmann_into(&self, s: usize, tau: f64, out: &mut [f64]) {
        let v = self.v[s];
        softmax_into(self.q_row(s).iter().map(|q| q - v), tau, out);
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(LbcError::Domain(format!("inverse temperature must be positive, got {tau}")))
    }
}

/// Max-subtracted softmax of `tau * logits`.
pub fn softmax(logits: &[f64], tau: f64) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits.iter().copied(), tau, &mut out);
    out
}

fn softmax_into(logits: impl Iterator<Item = f64> + Clone, tau: f64, out: &mut [f64]) {
    let max = logits.clone().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, x) in out.iter_mut().zip(logits) {
        *o = (tau * (x - max)).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionDistribution(Vec<f64>);

impl ActionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(LbcError::Domain("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(LbcError::Domain(format!("probabilities sum to {total}")));
        }
        Ok(ActionDistribution(probs))
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        ActionDistribution(probs)
    }

    pub fn uniform(n: usize) -> Self {
        ActionDistribution(vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for ActionDistribution {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

const KL_FLOOR: f64 = 1e-12;

/// `KL(p || q)` in nats with `q` floored at 1e-12.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi.max(KL_FLOOR)).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Total-variation distance.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
