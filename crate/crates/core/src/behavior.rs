//! Behavior mappings: how a set of policy models plus a parameter vector turns
//! into the distribution an actor samples from, and inclusion checks between
//! discretized behavior spaces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{LbcError, Result};
use crate::policy::{check_tau, ActionDistribution, PolicyHyper, PolicyModel};

/// Default upper bound on the inverse temperature, `e^4`.
pub const DEFAULT_TAU_MAX: f64 = 54.598_150_033_144_236;

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MappingFamily {
    HybridMixture,
    IndividualSoftmax,
    EpsilonGreedy,
}

/// Inverse temperatures and mixture weights, one pair per mixture component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorParams {
    pub taus: Vec<f64>,
    pub omegas: Vec<f64>,
}

impl BehaviorParams {
    pub fn new(taus: Vec<f64>, omegas: Vec<f64>, tau_max: f64) -> Result<Self> {
        let p = BehaviorParams { taus, omegas };
        p.validate(tau_max)?;
        Ok(p)
    }

    pub fn single(tau: f64) -> Self {
        BehaviorParams { taus: vec![tau], omegas: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn validate(&self, tau_max: f64) -> Result<()> {
        if self.taus.is_empty() || self.taus.len() != self.omegas.len() {
            return Err(LbcError::Usage(format!(
                "{} taus vs {} omegas",
                self.taus.len(),
                self.omegas.len()
            )));
        }
        for &t in &self.taus {
            check_tau(t)?;
            if t > tau_max * (1.0 + 1e-12) {
                return Err(LbcError::Domain(format!("tau {t} exceeds {tau_max}")));
            }
        }
        if self.omegas.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(LbcError::Domain("mixture weights must be non-negative".into()));
        }
        let total: f64 = self.omegas.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(LbcError::Domain(format!("mixture weights sum to {total}")));
        }
        Ok(())
    }
}

/// A concrete point of a behavior space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Psi {
    Mixture(BehaviorParams),
    Epsilon(f64),
}

/// `sum_i omega_i softmax(tau_i A_i(s, .))`.
pub fn hybrid_behavior(
    models: &[&PolicyModel],
    psi: &BehaviorParams,
    s: usize,
) -> Result<ActionDistribution> {
    if models.len() != psi.len() || models.is_empty() {
        return Err(LbcError::Usage(format!(
            "{} models for {} mixture components",
            models.len(),
            psi.len()
        )));
    }
    let mut out = vec![0.0; models[0].num_actions()];
    let mut scratch = vec![0.0; out.len()];
    for ((m, &tau), &w) in models.iter().zip(&psi.taus).zip(&psi.omegas) {
        check_tau(tau)?;
        m.boltzmann_into(s, tau, &mut scratch);
        for (o, p) in out.iter_mut().zip(&scratch) {
            *o += w * p;
        }
    }
    Ok(ActionDistribution::from_raw(out))
}

pub fn individual_softmax(model: &PolicyModel, tau: f64, s: usize) -> Result<ActionDistribution> {
    model.boltzmann(s, tau)
}

/// Greedy on the advantage with ties broken toward the lowest action index.
pub fn epsilon_greedy(model: &PolicyModel, epsilon: f64, s: usize) -> Result<ActionDistribution> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(LbcError::Domain(format!("epsilon {epsilon} outside [0, 1]")));
    }
    let mut out = vec![0.0; model.num_actions()];
    epsilon_greedy_into(model, epsilon, s, &mut out);
    Ok(ActionDistribution::from_raw(out))
}

fn epsilon_greedy_into(model: &PolicyModel, epsilon: f64, s: usize, out: &mut [f64]) {
    let row = model.q_row(s);
    let mut best = 0;
    for (a, q) in row.iter().enumerate() {
        if *q > row[best] {
            best = a;
        }
    }
    let n = out.len() as f64;
    out.fill(epsilon / n);
    out[best] += 1.0 - epsilon;
}

/// Draws an action and returns it with the probability it was drawn with,
/// capped at 1 to absorb rounding in mixtures.
pub fn sample_action<R: rand::Rng + ?Sized>(probs: &[f64], rng: &mut R) -> (usize, f64) {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (a, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last_positive = a;
        if u < acc {
            return (a, p.min(1.0));
        }
    }
    // rounding left u above the accumulated mass
    (last_positive, probs[last_positive].min(1.0))
}

/// Binds mixture components to population members. `slots[i]` is the model
/// index feeding component `i`; repeated indices mix copies of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorMapping {
    pub family: MappingFamily,
    pub slots: Vec<usize>,
}

impl BehaviorMapping {
    pub fn components(&self) -> usize {
        self.slots.len()
    }

    /// Fills `out` with the behavior at `s`.
    pub fn fill(&self, models: &[PolicyModel], psi: &Psi, s: usize, out: &mut [f64], scratch: &mut [f64]) {
        match psi {
            Psi::Mixture(p) => {
                out.fill(0.0);
                for ((&slot, &tau), &w) in self.slots.iter().zip(&p.taus).zip(&p.omegas) {
                    if w == 0.0 {
                        continue;
                    }
                    models[slot].boltzmann_into(s, tau, scratch);
                    for (o, x) in out.iter_mut().zip(scratch.iter()) {
                        *o += w * x;
                    }
                }
            }
            Psi::Epsilon(eps) => epsilon_greedy_into(&models[self.slots[0]], *eps, s, out),
        }
    }
}

/// An evenly spaced closed grid `lower, lower + step, ..., upper`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearGrid {
    pub lower: f64,
    pub upper: f64,
    pub step: f64,
}

const MAX_ENUMERATION: usize = 1_000_000;

impl LinearGrid {
    pub fn new(lower: f64, upper: f64, step: f64) -> Self {
        LinearGrid { lower, upper, step }
    }

    pub fn points(&self) -> Result<Vec<f64>> {
        let LinearGrid { lower, upper, step } = *self;
        if !(lower.is_finite() && upper.is_finite() && step.is_finite() && step > 0.0 && upper >= lower) {
            return Err(LbcError::Unsupported(format!("grid {self:?} is not enumerable")));
        }
        let n = (upper - lower) / step;
        if (n - n.round()).abs() > 1e-9 || n.round() as usize >= MAX_ENUMERATION {
            return Err(LbcError::Unsupported(format!("grid {self:?} is not enumerable")));
        }
        Ok((0..=n.round() as usize).map(|k| lower + k as f64 * step).collect())
    }
}

/// All points of the simplex with `parts` coordinates that are multiples of
/// `step`. `1 / step` must be a whole number.
pub fn simplex_points(parts: usize, step: f64) -> Result<Vec<Vec<f64>>> {
    let units = simplex_units(step)?;
    let mut out = Vec::new();
    let mut current = vec![0usize; parts];
    fn rec(i: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i + 1 == cur.len() {
            cur[i] = left;
            out.push(cur.clone());
            return;
        }
        for k in (0..=left).rev() {
            cur[i] = k;
            rec(i + 1, left - k, cur, out);
        }
    }
    if parts == 0 {
        return Ok(out);
    }
    let mut raw = Vec::new();
    rec(0, units, &mut current, &mut raw);
    if raw.len() > MAX_ENUMERATION {
        return Err(LbcError::Unsupported("simplex grid too large to enumerate".into()));
    }
    for p in raw {
        out.push(p.into_iter().map(|k| k as f64 / units as f64).collect());
    }
    Ok(out)
}

pub(crate) fn simplex_units(step: f64) -> Result<usize> {
    if !(step.is_finite() && step > 0.0 && step <= 1.0) {
        return Err(LbcError::Unsupported(format!("simplex step {step} is not enumerable")));
    }
    let units = 1.0 / step;
    if (units - units.round()).abs() > 1e-9 {
        return Err(LbcError::Unsupported(format!("simplex step {step} does not divide 1")));
    }
    Ok(units.round() as usize)
}

/// A finite behavior space: which members, which mapping family and which
/// parameter grid. `param_grid` holds tau exponents (`tau = e^u`) for the
/// softmax families and epsilon values for epsilon-greedy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSpaceDesc {
    pub members: Vec<PolicyHyper>,
    pub family: MappingFamily,
    pub param_grid: LinearGrid,
    pub omega_step: f64,
}

fn hyper_key(h: &PolicyHyper) -> (u64, u8) {
    (h.gamma.to_bits(), h.rs.id())
}

fn grid_contains(points: &[f64], x: f64) -> bool {
    points.iter().any(|p| (p - x).abs() <= 1e-9)
}

fn is_multiple(x: f64, step: f64) -> bool {
    let k = x / step;
    (k - k.round()).abs() <= 1e-9
}

impl BehaviorSpaceDesc {
    /// Normal form under which equal behavior sets have equal descriptors.
    pub fn canonical(&self) -> Result<BehaviorSpaceDesc> {
        let points = self.param_grid.points()?;
        let mut members = self.members.clone();
        members.sort_by_key(hyper_key);
        let mut family = self.family;
        let mut omega_step = self.omega_step;
        if family == MappingFamily::HybridMixture {
            let units = simplex_units(omega_step)?;
            if points.len() == 1 {
                // components sharing member and tau merge
                members.dedup_by_key(|h| hyper_key(h));
            } else {
                // an element has at most `units` positive components
                let mut seen: BTreeMap<(u64, u8), usize> = BTreeMap::new();
                members.retain(|h| {
                    let c = seen.entry(hyper_key(h)).or_default();
                    *c += 1;
                    *c <= units
                });
            }
            if members.len() == 1 || units == 1 {
                family = MappingFamily::IndividualSoftmax;
            }
        }
        if family != MappingFamily::HybridMixture {
            members.dedup_by_key(|h| hyper_key(h));
            omega_step = 1.0;
        }
        let param_grid = if points.len() == 1 {
            LinearGrid::new(points[0], points[0], 1.0)
        } else {
            self.param_grid
        };
        Ok(BehaviorSpaceDesc { members, family, param_grid, omega_step })
    }

    /// Positive-weight component lists `(member, weight)` realizable by this
    /// space, with same-member components merged when the grid has one point.
    fn weight_patterns(&self, single_point: bool) -> Result<Vec<Vec<(PolicyHyper, f64)>>> {
        match self.family {
            MappingFamily::HybridMixture => {
                let pts = simplex_points(self.members.len(), self.omega_step)?;
                Ok(pts
                    .into_iter()
                    .map(|w| {
                        let mut comps: Vec<(PolicyHyper, f64)> = Vec::new();
                        for (h, x) in self.members.iter().zip(w) {
                            if x <= 0.0 {
                                continue;
                            }
                            match comps.iter_mut().find(|c| single_point && hyper_key(&c.0) == hyper_key(h)) {
                                Some(c) => c.1 += x,
                                None => comps.push((*h, x)),
                            }
                        }
                        comps
                    })
                    .collect())
            }
            _ => Ok(self.members.iter().map(|h| vec![(*h, 1.0)]).collect()),
        }
    }

    fn admits(&self, comps: &[(PolicyHyper, f64)]) -> Result<bool> {
        match self.family {
            MappingFamily::EpsilonGreedy | MappingFamily::IndividualSoftmax => Ok(comps.len() == 1
                && (comps[0].1 - 1.0).abs() <= 1e-9
                && self.members.iter().any(|h| hyper_key(h) == hyper_key(&comps[0].0))),
            MappingFamily::HybridMixture => {
                simplex_units(self.omega_step)?;
                if comps.iter().any(|c| !is_multiple(c.1, self.omega_step)) {
                    return Ok(false);
                }
                let mut need: BTreeMap<(u64, u8), usize> = BTreeMap::new();
                for c in comps {
                    *need.entry(hyper_key(&c.0)).or_default() += 1;
                }
                Ok(need.iter().all(|(k, n)| {
                    self.members.iter().filter(|h| hyper_key(h) == *k).count() >= *n
                }))
            }
        }
    }
}

/// Whether every behavior of `a` is also a behavior of `b`. Membership is
/// decided per realizable weight pattern of `a`, with every parameter point
/// of `a` required in `b`'s grid.
pub fn space_subset(a: &BehaviorSpaceDesc, b: &BehaviorSpaceDesc) -> Result<bool> {
    let a_points = a.param_grid.points()?;
    let b_points = b.param_grid.points()?;
    if a.family == MappingFamily::HybridMixture {
        simplex_units(a.omega_step)?;
    }
    if b.family == MappingFamily::HybridMixture {
        simplex_units(b.omega_step)?;
    }
    let a_eps = a.family == MappingFamily::EpsilonGreedy;
    let b_eps = b.family == MappingFamily::EpsilonGreedy;
    if a_eps != b_eps {
        return Ok(false);
    }
    if a.members.is_empty() {
        return Ok(true);
    }
    if !a_points.iter().all(|p| grid_contains(&b_points, *p)) {
        return Ok(false);
    }
    for comps in a.weight_patterns(a_points.len() == 1)? {
        if !b.admits(&comps)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Uniform draw from the probability simplex.
pub fn uniform_simplex<R: rand::Rng + ?Sized>(parts: usize, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..parts).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    w
}
