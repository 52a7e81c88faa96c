//! Actor-wise behavior selection: the discretized parameter space, UCB bandits
//! over its regions and a population of bandits that votes on the region to
//! play each episode.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::behavior::{simplex_points, uniform_simplex, BehaviorParams, MappingFamily, Psi, DEFAULT_TAU_MAX};
use crate::error::{config_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    /// Tau exponent range; `tau = e^u`.
    pub tau_exp_lower: f64,
    pub tau_exp_upper: f64,
    pub tau_exp_step: f64,
    pub omega_step: f64,
    pub epsilon_step: f64,
    pub tau_max: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            tau_exp_lower: 0.0,
            tau_exp_upper: 4.0,
            tau_exp_step: 1.0,
            omega_step: 0.5,
            epsilon_step: 0.1,
            tau_max: DEFAULT_TAU_MAX,
        }
    }
}

impl GridConfig {
    /// The full-resolution grid (exponent step 0.2, weight step 0.1).
    pub fn fine() -> Self {
        GridConfig { tau_exp_step: 0.2, omega_step: 0.1, ..Default::default() }
    }
}

fn bin_count(lower: f64, upper: f64, step: f64) -> Result<usize> {
    if !(step > 0.0 && upper > lower && lower.is_finite() && upper.is_finite()) {
        return Err(config_err(format!("bad axis [{lower}, {upper}] step {step}")));
    }
    let n = (upper - lower) / step;
    Ok(if (n - n.round()).abs() < 1e-9 { n.round() } else { n.ceil() } as usize)
}

/// Bijection between region indices and cells of the parameter space.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionGrid {
    family: MappingFamily,
    components: usize,
    cfg: GridConfig,
    tau_bins: usize,
    simplex: Vec<Vec<f64>>,
    eps_bins: usize,
}

/// The cell a region covers.
#[derive(Clone, Debug, PartialEq)]
pub enum RegionCell {
    Mixture {
        /// Exponent interval per component.
        tau_exp: Vec<(f64, f64)>,
        /// Simplex grid point the weight cell is centered on.
        omega_center: Vec<f64>,
    },
    Epsilon((f64, f64)),
}

impl RegionGrid {
    pub fn new(family: MappingFamily, components: usize, cfg: GridConfig) -> Result<Self> {
        if components == 0 {
            return Err(config_err("behavior space needs at least one component"));
        }
        if family != MappingFamily::HybridMixture && components != 1 {
            return Err(config_err("individual mappings have exactly one component"));
        }
        if cfg.tau_exp_upper.exp() > cfg.tau_max * (1.0 + 1e-12) {
            return Err(config_err("tau exponent range exceeds tau_max"));
        }
        let tau_bins = bin_count(cfg.tau_exp_lower, cfg.tau_exp_upper, cfg.tau_exp_step)?;
        let simplex = if family == MappingFamily::HybridMixture {
            simplex_points(components, cfg.omega_step).map_err(|e| config_err(e.to_string()))?
        } else {
            vec![vec![1.0]]
        };
        let eps_bins = bin_count(0.0, 1.0, cfg.epsilon_step)?;
        let grid = RegionGrid { family, components, cfg, tau_bins, simplex, eps_bins };
        if grid.num_regions() == 0 {
            return Err(config_err("empty region grid"));
        }
        Ok(grid)
    }

    pub fn family(&self) -> MappingFamily {
        self.family
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn config(&self) -> &GridConfig {
        &self.cfg
    }

    pub fn tau_bins(&self) -> usize {
        self.tau_bins
    }

    pub fn simplex_points(&self) -> &[Vec<f64>] {
        &self.simplex
    }

    /// K, the arm count.
    pub fn num_regions(&self) -> usize {
        match self.family {
            MappingFamily::EpsilonGreedy => self.eps_bins,
            _ => self.tau_bins.pow(self.components as u32) * self.simplex.len(),
        }
    }

    fn axis_cell(&self, lower: f64, upper: f64, step: f64, bin: usize) -> (f64, f64) {
        let lo = lower + bin as f64 * step;
        (lo, (lo + step).min(upper))
    }

    pub fn cell(&self, region: usize) -> Option<RegionCell> {
        if region >= self.num_regions() {
            return None;
        }
        if self.family == MappingFamily::EpsilonGreedy {
            return Some(RegionCell::Epsilon(self.axis_cell(0.0, 1.0, self.cfg.epsilon_step, region)));
        }
        let per_simplex = self.tau_bins.pow(self.components as u32);
        let (simplex_idx, mut rest) = (region / per_simplex, region % per_simplex);
        let mut tau_exp = Vec::with_capacity(self.components);
        for _ in 0..self.components {
            let bin = rest % self.tau_bins;
            rest /= self.tau_bins;
            tau_exp.push(self.axis_cell(self.cfg.tau_exp_lower, self.cfg.tau_exp_upper, self.cfg.tau_exp_step, bin));
        }
        Some(RegionCell::Mixture { tau_exp, omega_center: self.simplex[simplex_idx].clone() })
    }

    /// Uniform draw of a parameter vector inside `region`.
    pub fn sample_psi<R: rand::Rng + ?Sized>(&self, region: usize, rng: &mut R) -> Psi {
        match self.cell(region).expect("region index out of range") {
            RegionCell::Epsilon((lo, hi)) => Psi::Epsilon(rng.random_range(lo..=hi)),
            RegionCell::Mixture { tau_exp, omega_center } => {
                let taus = tau_exp
                    .iter()
                    .map(|&(lo, hi)| rng.random_range(lo..=hi).exp().min(self.cfg.tau_max))
                    .collect();
                let omegas = self.sample_omega_cell(&omega_center, rng);
                Psi::Mixture(BehaviorParams { taus, omegas })
            }
        }
    }

    /// Rejection-samples the simplex slice of the box of half-width
    /// `omega_step / 2` around `center`.
    fn sample_omega_cell<R: rand::Rng + ?Sized>(&self, center: &[f64], rng: &mut R) -> Vec<f64> {
        let n = center.len();
        if n == 1 {
            return vec![1.0];
        }
        let half = self.cfg.omega_step / 2.0;
        let bounds: Vec<(f64, f64)> = center
            .iter()
            .map(|c| ((c - half).max(0.0), (c + half).min(1.0)))
            .collect();
        let mut w = vec![0.0; n];
        for _ in 0..10_000 {
            let mut partial = 0.0;
            for i in 0..n - 1 {
                w[i] = rng.random_range(bounds[i].0..=bounds[i].1);
                partial += w[i];
            }
            let last = 1.0 - partial;
            if last >= bounds[n - 1].0 && last <= bounds[n - 1].1 {
                w[n - 1] = last;
                let total: f64 = w.iter().sum();
                return w.iter().map(|x| x / total).collect();
            }
        }
        center.to_vec()
    }

    /// Uniform draw over the whole parameter space, ignoring the regions.
    pub fn sample_uniform<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Psi {
        match self.family {
            MappingFamily::EpsilonGreedy => Psi::Epsilon(rng.random_range(0.0..=1.0)),
            _ => {
                let taus = (0..self.components)
                    .map(|_| {
                        rng.random_range(self.cfg.tau_exp_lower..=self.cfg.tau_exp_upper)
                            .exp()
                            .min(self.cfg.tau_max)
                    })
                    .collect();
                let omegas = uniform_simplex(self.components, rng);
                Psi::Mixture(BehaviorParams { taus, omegas })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub visits: u64,
    pub return_sum: f64,
    pub mean: f64,
}

impl ArmStats {
    pub fn record(&mut self, g: f64) {
        self.visits += 1;
        self.return_sum += g;
        self.mean = self.return_sum / self.visits as f64;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BonusCount {
    /// `log(1 + sum_j N(j))`
    AllArms,
    /// `log(1 + sum_{j != x} N(j))`
    OtherArms,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UcbConfig {
    /// Z-score the arm means before adding the bonus. Off by default: with
    /// hundreds of regions and a few thousand episodes the first region with
    /// a positive mean scores about `sqrt(K)` and is never left again.
    pub z_score: bool,
    pub bonus: BonusCount,
    pub c_min: f64,
    pub c_max: f64,
}

impl Default for UcbConfig {
    fn default() -> Self {
        UcbConfig { z_score: false, bonus: BonusCount::AllArms, c_min: 0.5, c_max: 1.5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UcbBandit {
    pub c: f64,
    pub arms: Vec<ArmStats>,
    pub z_score: bool,
    pub bonus: BonusCount,
}

impl UcbBandit {
    pub fn new(num_arms: usize, c: f64) -> Self {
        UcbBandit { c, arms: vec![ArmStats::default(); num_arms], z_score: true, bonus: BonusCount::AllArms }
    }

    pub fn total_visits(&self) -> u64 {
        self.arms.iter().map(|a| a.visits).sum()
    }

    pub fn ucb_scores(&self) -> Vec<f64> {
        let k = self.arms.len() as f64;
        let means: Vec<f64> = self.arms.iter().map(|a| a.mean).collect();
        let exploit: Vec<f64> = if self.z_score {
            let mu = means.iter().sum::<f64>() / k;
            let var = means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / k;
            let sd = var.sqrt();
            if sd > 0.0 {
                means.iter().map(|m| (m - mu) / sd).collect()
            } else {
                vec![0.0; means.len()]
            }
        } else {
            means
        };
        let total = self.total_visits() as f64;
        self.arms
            .iter()
            .zip(exploit)
            .map(|(a, e)| {
                let count = match self.bonus {
                    BonusCount::AllArms => total,
                    BonusCount::OtherArms => total - a.visits as f64,
                };
                e + self.c * ((1.0 + count).ln() / (1.0 + a.visits as f64)).sqrt()
            })
            .collect()
    }

    /// The `d` best regions by UCB score, ties broken uniformly at random.
    pub fn top_d<R: rand::Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Result<Vec<usize>> {
        top_d_of(&self.ucb_scores(), d, rng)
    }

    pub fn update(&mut self, region: usize, g: f64) {
        self.arms[region].record(g);
    }
}

pub fn top_d_of<R: rand::Rng + ?Sized>(scores: &[f64], d: usize, rng: &mut R) -> Result<Vec<usize>> {
    if d == 0 || d > scores.len() {
        return Err(config_err(format!("top-{d} of {} arms", scores.len())));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.shuffle(rng);
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx.truncate(d);
    Ok(idx)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoteOutcome {
    pub arm: usize,
    /// Votes per arm.
    pub votes: Vec<u32>,
}

/// Counts nominations and picks uniformly among the most-voted arms.
pub fn tally_votes<R: rand::Rng + ?Sized>(num_arms: usize, nominations: &[Vec<usize>], rng: &mut R) -> VoteOutcome {
    let mut votes = vec![0u32; num_arms];
    for n in nominations {
        for &arm in n {
            votes[arm] += 1;
        }
    }
    let best = votes.iter().copied().max().unwrap_or(0);
    let winners: Vec<usize> = (0..num_arms).filter(|&a| votes[a] == best).collect();
    let arm = winners[rng.random_range(0..winners.len())];
    VoteOutcome { arm, votes }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BanditConfig {
    pub population: usize,
    pub top_d: usize,
    pub replace_interval: u64,
    pub ucb: UcbConfig,
}

impl Default for BanditConfig {
    fn default() -> Self {
        BanditConfig { population: 7, top_d: 4, replace_interval: 50, ucb: UcbConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BanditPopulation {
    pub bandits: Vec<UcbBandit>,
    pub cfg: BanditConfig,
    num_arms: usize,
    episodes: u64,
}

impl BanditPopulation {
    pub fn new<R: rand::Rng + ?Sized>(num_arms: usize, cfg: BanditConfig, rng: &mut R) -> Result<Self> {
        if cfg.population == 0 {
            return Err(config_err("bandit population must be non-empty"));
        }
        if cfg.top_d == 0 || cfg.top_d > num_arms {
            return Err(config_err(format!("top-d {} with {num_arms} arms", cfg.top_d)));
        }
        if !(cfg.ucb.c_min > 0.0 && cfg.ucb.c_max >= cfg.ucb.c_min) {
            return Err(config_err("UCB c range must be positive"));
        }
        let mut pop = BanditPopulation { bandits: Vec::new(), cfg, num_arms, episodes: 0 };
        pop.bandits = (0..pop.cfg.population).map(|_| pop.fresh_bandit(rng)).collect();
        Ok(pop)
    }

    fn fresh_bandit<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> UcbBandit {
        let c = rng.random_range(self.cfg.ucb.c_min..=self.cfg.ucb.c_max);
        let mut b = UcbBandit::new(self.num_arms, c);
        b.z_score = self.cfg.ucb.z_score;
        b.bonus = self.cfg.ucb.bonus;
        b
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    /// Every bandit nominates its top-D arms; the most nominated arm wins.
    pub fn population_sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> VoteOutcome {
        let nominations: Vec<Vec<usize>> = self
            .bandits
            .iter()
            .map(|b| b.top_d(self.cfg.top_d, rng).expect("top-d validated at construction"))
            .collect();
        tally_votes(self.num_arms, &nominations, rng)
    }

    pub fn update(&mut self, region: usize, g: f64) {
        for b in &mut self.bandits {
            b.update(region, g);
        }
    }

    /// Reinitializes one uniformly chosen bandit when `episode` is a positive
    /// multiple of the replacement interval. Returns the replaced slot.
    pub fn maybe_replace<R: rand::Rng + ?Sized>(&mut self, episode: u64, rng: &mut R) -> Option<usize> {
        let t = self.cfg.replace_interval;
        if t == 0 || episode == 0 || !episode.is_multiple_of(t) {
            return None;
        }
        let slot = rng.random_range(0..self.bandits.len());
        self.bandits[slot] = self.fresh_bandit(rng);
        Some(slot)
    }

    /// Records the return of a finished episode and applies replacement.
    pub fn finish_episode<R: rand::Rng + ?Sized>(&mut self, region: usize, g: f64, rng: &mut R) -> Option<usize> {
        self.update(region, g);
        self.episodes += 1;
        self.maybe_replace(self.episodes, rng)
    }
}

/// Per-actor source of behavior parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum MetaController {
    Bandits(BanditPopulation),
    /// Bypasses the bandits and draws uniformly from the whole space.
    Uniform,
}
