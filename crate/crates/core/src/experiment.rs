//! Experiment presets, seeded batch runs and the report/compare tools that
//! read their output.
//!
//! Layout on disk: `<out>/<preset>/seed-<k>.jsonl` plus one
//! `<out>/<preset>/manifest.json` holding the resolved configuration and the
//! status of every seed.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::behavior::{BehaviorMapping, MappingFamily};
use crate::config::{RunConfig, Selection};
use crate::error::{LbcError, Result};
use crate::metrics::{read_jsonl, write_jsonl, MetricsRecord};
use crate::orchestrator::train;
use crate::par;
use crate::policy::PolicyHyper;
use crate::stats;

pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.json";
pub const BOOTSTRAP_RESAMPLES: usize = 10_000;
pub const MIN_COMPARE_SEEDS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Three distinct members mixed by the hybrid mapping, bandit-selected.
    Main,
    /// One member mixed with itself three times.
    ReduceH,
    /// One member, individual softmax over its advantages.
    ReduceHPsi,
    /// Same space as `Main`, parameters drawn uniformly every episode.
    RandomSelection,
    /// One member with an epsilon-greedy mapping; an extra baseline.
    EpsilonBaseline,
}

impl Preset {
    pub const ALL: [Preset; 5] =
        [Preset::Main, Preset::ReduceH, Preset::ReduceHPsi, Preset::RandomSelection, Preset::EpsilonBaseline];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Main => "main",
            Preset::ReduceH => "reduce-h",
            Preset::ReduceHPsi => "reduce-h-psi",
            Preset::RandomSelection => "random-selection",
            Preset::EpsilonBaseline => "epsilon-baseline",
        }
    }

    /// Overrides the population, mapping and selection of `base`; every
    /// other field is kept, except that Top-D is capped at the number of
    /// regions of the preset's grid.
    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        let full = if base.members.len() >= 3 { base.members.clone() } else { PolicyHyper::defaults() };
        let first = vec![full[0]];
        let (members, family, slots, selection) = match self {
            Preset::Main => (full, MappingFamily::HybridMixture, vec![0, 1, 2], Selection::Bandit),
            Preset::ReduceH => (first, MappingFamily::HybridMixture, vec![0, 0, 0], Selection::Bandit),
            Preset::ReduceHPsi => (first, MappingFamily::IndividualSoftmax, vec![0], Selection::Bandit),
            Preset::RandomSelection => (full, MappingFamily::HybridMixture, vec![0, 1, 2], Selection::Random),
            Preset::EpsilonBaseline => (first, MappingFamily::EpsilonGreedy, vec![0], Selection::Bandit),
        };
        cfg.members = members;
        cfg.mapping = BehaviorMapping { family, slots };
        cfg.selection = selection;
        if let Ok(grid) = cfg.region_grid() {
            cfg.bandit.top_d = cfg.bandit.top_d.min(grid.num_regions());
        }
        cfg
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = LbcError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let known: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
            LbcError::Usage(format!("unknown preset `{s}` (known: {})", known.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedStatus {
    pub seed: u64,
    pub ok: bool,
    pub file: Option<String>,
    pub episodes: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub preset: Preset,
    pub crate_version: String,
    /// Resolved configuration; its `seed` is replaced per run.
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub status: Vec<SeedStatus>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn all_ok(&self) -> bool {
        self.status.iter().all(|s| s.ok)
    }
}

pub fn seed_file_name(seed: u64) -> String {
    format!("seed-{seed}.jsonl")
}

pub fn run_id(preset: Preset, seed: u64) -> String {
    format!("{preset}-seed-{seed}")
}

/// Runs one seed of a resolved configuration.
pub fn run_seed(preset: Preset, cfg: &RunConfig, seed: u64) -> Result<Vec<MetricsRecord>> {
    let cfg = RunConfig { seed, ..cfg.clone() };
    Ok(train(&cfg, &run_id(preset, seed))?.records)
}

/// Applies `preset` to `base`, trains every seed (in parallel when enabled)
/// and writes metrics files and the manifest under `out/<preset>`. Seed
/// failures are recorded in the manifest rather than aborting the batch.
pub fn run_preset(preset: Preset, base: &RunConfig, seeds: &[u64], out: &Path) -> Result<Manifest> {
    let cfg = preset.apply(base);
    cfg.validate()?;
    run_resolved(preset, cfg, seeds, &out.join(preset.name()))
}

/// Re-runs every seed listed in a manifest into `dir`.
pub fn rerun_manifest(manifest: &Manifest, dir: &Path) -> Result<Manifest> {
    run_resolved(manifest.preset, manifest.config.clone(), &manifest.seeds, dir)
}

fn run_resolved(preset: Preset, cfg: RunConfig, seeds: &[u64], dir: &Path) -> Result<Manifest> {
    if seeds.is_empty() {
        return Err(LbcError::Usage("no seeds given".into()));
    }
    fs::create_dir_all(dir)?;
    let status = par::map(seeds, |&seed| {
        let file = seed_file_name(seed);
        let result = run_seed(preset, &cfg, seed).and_then(|records| {
            write_jsonl(&dir.join(&file), &records)?;
            Ok(records.len())
        });
        match result {
            Ok(episodes) => {
                log::info!("{preset} seed {seed}: {episodes} episodes");
                SeedStatus { seed, ok: true, file: Some(file), episodes, error: None }
            }
            Err(e) => {
                log::error!("{preset} seed {seed} failed: {e}");
                SeedStatus { seed, ok: false, file: None, episodes: 0, error: Some(e.to_string()) }
            }
        }
    });
    let manifest = Manifest {
        preset,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg,
        seeds: seeds.to_vec(),
        status,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Number of episodes in a leading or trailing tenth: `ceil(n / 10)`, at
/// least one.
pub fn decile_len(n: usize) -> usize {
    n.div_ceil(10).max(1)
}

/// Mean return over the last tenth of episodes.
pub fn final_window_return(records: &[MetricsRecord]) -> f64 {
    let k = decile_len(records.len()).min(records.len());
    stats::mean(&records[records.len() - k..].iter().map(|r| r.episode_return).collect::<Vec<_>>())
}

/// Mean behavior entropy over the first and the last tenth of episodes.
pub fn entropy_deciles(records: &[MetricsRecord]) -> (f64, f64) {
    let k = decile_len(records.len()).min(records.len());
    let ent: Vec<f64> = records.iter().map(|r| r.behavior_entropy).collect();
    (stats::mean(&ent[..k]), stats::mean(&ent[ent.len() - k..]))
}

/// Metrics of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub episodes: usize,
    pub final_return: f64,
    pub entropy_first: f64,
    pub entropy_last: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresetSummary {
    pub name: String,
    pub seeds: Vec<SeedSummary>,
    pub final_mean: f64,
    pub final_std: f64,
    pub entropy_first: f64,
    pub entropy_last: f64,
    /// First and last decile entropies agree to within 1e-9.
    pub entropy_flat: bool,
    /// Seeds whose last-decile entropy is at most their first-decile entropy.
    pub entropy_non_increasing: usize,
    /// Episodes played per region, over all seeds.
    pub arm_histogram: BTreeMap<usize, u64>,
    /// `(wall step, mean off-diagonal KL)` pairs, averaged over seeds that
    /// report at the same episode index.
    pub kl_series: Vec<(u64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Ranked by final mean return, best first.
    pub rows: Vec<PresetSummary>,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<20} {:>5} {:>22} {:>10} {:>10} {:>8}",
            "preset", "seeds", "final return", "H first", "H last", "H trend"
        )?;
        for r in &self.rows {
            let trend = if r.entropy_flat {
                "flat".to_string()
            } else {
                format!("{}/{} down", r.entropy_non_increasing, r.seeds.len())
            };
            writeln!(
                f,
                "{:<20} {:>5} {:>12.4} ± {:<7.4} {:>10.4} {:>10.4} {:>8}",
                r.name,
                r.seeds.len(),
                r.final_mean,
                r.final_std,
                r.entropy_first,
                r.entropy_last,
                trend
            )?;
        }
        for r in &self.rows {
            let mut arms: Vec<(&usize, &u64)> = r.arm_histogram.iter().collect();
            arms.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
            let top: Vec<String> = arms.iter().take(5).map(|(k, n)| format!("{k}:{n}")).collect();
            if !top.is_empty() {
                writeln!(f, "{}: most played regions {}", r.name, top.join(" "))?;
            }
            if let (Some(first), Some(last)) = (r.kl_series.first(), r.kl_series.last()) {
                writeln!(f, "{}: mean pairwise KL {:.4} at step {} -> {:.4} at step {}", r.name, first.1, first.0, last.1, last.0)?;
            }
        }
        write!(f, "(stored curves are raw; smooth them downstream if needed)")
    }
}

/// Loads every `seed-*.jsonl` in `dir`, ordered by seed.
pub fn load_seed_runs(dir: &Path) -> Result<Vec<(u64, Vec<MetricsRecord>)>> {
    let mut runs = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(seed) = name.strip_prefix("seed-").and_then(|s| s.strip_suffix(".jsonl")) else { continue };
        let seed: u64 = seed
            .parse()
            .map_err(|_| LbcError::DataCorruption(format!("bad metrics file name {}", path.display())))?;
        runs.push((seed, read_jsonl(&path)?));
    }
    runs.sort_by_key(|(s, _)| *s);
    Ok(runs)
}

pub fn summarize(name: &str, runs: &[(u64, Vec<MetricsRecord>)]) -> PresetSummary {
    let seeds: Vec<SeedSummary> = runs
        .iter()
        .filter(|(_, r)| !r.is_empty())
        .map(|(seed, records)| {
            let (entropy_first, entropy_last) = entropy_deciles(records);
            SeedSummary {
                seed: *seed,
                episodes: records.len(),
                final_return: final_window_return(records),
                entropy_first,
                entropy_last,
            }
        })
        .collect();
    let finals: Vec<f64> = seeds.iter().map(|s| s.final_return).collect();
    let entropy_first = stats::mean(&seeds.iter().map(|s| s.entropy_first).collect::<Vec<_>>());
    let entropy_last = stats::mean(&seeds.iter().map(|s| s.entropy_last).collect::<Vec<_>>());

    let mut arm_histogram = BTreeMap::new();
    let mut kl: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for (_, records) in runs {
        for r in records {
            if let Some(region) = r.region {
                *arm_histogram.entry(region).or_insert(0) += 1;
            }
            if let Some(m) = &r.kl_matrix {
                let n = m.len();
                if n > 1 {
                    let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| m[i][j]).sum();
                    let e = kl.entry(r.episode).or_insert((0.0, 0.0, 0));
                    e.0 += r.wall_step as f64;
                    e.1 += off / (n * (n - 1)) as f64;
                    e.2 += 1;
                }
            }
        }
    }
    let kl_series = kl.values().map(|&(w, v, c)| ((w / c as f64).round() as u64, v / c as f64)).collect();

    PresetSummary {
        name: name.to_string(),
        final_mean: stats::mean(&finals),
        final_std: stats::sample_std(&finals),
        entropy_flat: (entropy_last - entropy_first).abs() <= 1e-9,
        entropy_non_increasing: seeds.iter().filter(|s| s.entropy_last <= s.entropy_first).count(),
        entropy_first,
        entropy_last,
        seeds,
        arm_histogram,
        kl_series,
    }
}

fn preset_dirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let name_of = |p: &Path| p.file_name().and_then(|n| n.to_str()).unwrap_or("run").to_string();
    if !load_seed_runs(dir)?.is_empty() {
        return Ok(vec![(name_of(dir), dir.to_path_buf())]);
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() && !load_seed_runs(&path)?.is_empty() {
            out.push((name_of(&path), path));
        }
    }
    out.sort();
    Ok(out)
}

/// Summarizes every preset found under `dir` (or `dir` itself when it holds
/// metrics files) and writes `summary.json` into `dir`.
pub fn report(dir: &Path) -> Result<Summary> {
    let dirs = preset_dirs(dir)?;
    if dirs.is_empty() {
        return Err(LbcError::Usage(format!("no metrics files under {}", dir.display())));
    }
    let mut rows = Vec::with_capacity(dirs.len());
    for (name, path) in dirs {
        rows.push(summarize(&name, &load_seed_runs(&path)?));
    }
    rows.sort_by(|a, b| b.final_mean.total_cmp(&a.final_mean).then_with(|| a.name.cmp(&b.name)));
    let summary = Summary { rows };
    fs::write(dir.join(SUMMARY), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Win,
    Loss,
    Tie,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub mean_a: f64,
    pub mean_b: f64,
    pub difference: f64,
    pub welch: stats::Welch,
    pub bootstrap: stats::Bootstrap,
    /// Verdict for A against B.
    pub verdict: Verdict,
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "A: n={} mean={:.4}", self.a.len(), self.mean_a)?;
        writeln!(f, "B: n={} mean={:.4}", self.b.len(), self.mean_b)?;
        writeln!(f, "difference (A - B) = {:.4}", self.difference)?;
        writeln!(f, "Welch t = {:.3}, df = {:.1}", self.welch.t, self.welch.df)?;
        writeln!(
            f,
            "bootstrap 95% CI = [{:.4}, {:.4}] over {} resamples; A better in {:.1}%",
            self.bootstrap.low,
            self.bootstrap.high,
            self.bootstrap.resamples,
            100.0 * self.bootstrap.frac_positive
        )?;
        write!(f, "verdict: A {:?}", self.verdict)
    }
}

/// Compares per-seed final-window returns of two samples.
pub fn compare_samples(a: &[f64], b: &[f64]) -> Result<Comparison> {
    if a.len() < MIN_COMPARE_SEEDS || b.len() < MIN_COMPARE_SEEDS {
        return Err(LbcError::Usage(format!(
            "compare needs at least {MIN_COMPARE_SEEDS} seeds per side (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    let bootstrap = stats::bootstrap_diff(a, b, BOOTSTRAP_RESAMPLES, 0.95, 0x5eed);
    let verdict = if bootstrap.low > 0.0 {
        Verdict::Win
    } else if bootstrap.high < 0.0 {
        Verdict::Loss
    } else {
        Verdict::Tie
    };
    let (mean_a, mean_b) = (stats::mean(a), stats::mean(b));
    Ok(Comparison {
        a: a.to_vec(),
        b: b.to_vec(),
        mean_a,
        mean_b,
        difference: mean_a - mean_b,
        welch: stats::welch(a, b),
        bootstrap,
        verdict,
    })
}

pub fn final_returns(dir: &Path) -> Result<Vec<f64>> {
    Ok(load_seed_runs(dir)?
        .iter()
        .filter(|(_, r)| !r.is_empty())
        .map(|(_, r)| final_window_return(r))
        .collect())
}

pub fn compare(dir_a: &Path, dir_b: &Path) -> Result<Comparison> {
    compare_samples(&final_returns(dir_a)?, &final_returns(dir_b)?)
}
