//! Line-delimited JSON metrics: one record per finished episode.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::behavior::Psi;
use crate::error::Result;
use crate::offpolicy::LossStats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    /// Global environment step at which the episode finished.
    pub wall_step: u64,
    pub episode: u64,
    pub actor: usize,
    /// Undiscounted raw return.
    pub episode_return: f64,
    pub episode_len: u64,
    /// Mean entropy of the behavior distribution over visited states.
    pub behavior_entropy: f64,
    pub region: Option<usize>,
    pub psi: Psi,
    /// Bandit statistics of the played region after the update.
    pub arm_visits: Option<u64>,
    pub arm_mean: Option<f64>,
    pub snapshot_version: u64,
    pub learner_losses: Vec<LossStats>,
    /// Pairwise KL between member target policies, averaged over states.
    pub kl_matrix: Option<Vec<Vec<f64>>>,
}

pub fn write_jsonl(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
