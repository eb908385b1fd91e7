//! Records written to a run directory and their readers.

use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::{bail, Context, Result};
use collapse_lab::diagnostics::CollapseBall;
use collapse_lab::{DomainKind, Field64, GridSpec64, MassProfile64};
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";
pub const SERIES: &str = "series.ndjson";
pub const SNAPSHOT_INDEX: &str = "snapshots.ndjson";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const COLLAPSE_CSV: &str = "collapse_report.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallRecord {
    pub x: f64,
    pub y: f64,
    pub r: f64,
    pub mass: f64,
    pub quantized: bool,
}

impl From<&CollapseBall<f64>> for BallRecord {
    fn from(b: &CollapseBall<f64>) -> Self {
        Self { x: b.center.0, y: b.center.1, r: b.radius, mass: b.mass, quantized: b.quantized }
    }
}

/// One line of `series.ndjson`. The run itself leaves `collapses` empty and
/// `residual` null; `analyze` fills them in its own stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub step: u64,
    pub t: f64,
    pub dt: f64,
    pub mass: f64,
    #[serde(rename = "F")]
    pub free_energy: f64,
    #[serde(rename = "D")]
    pub dissipation: f64,
    pub sup: f64,
    pub collapses: Vec<BallRecord>,
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub step: u64,
    pub t: f64,
    pub sup: f64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub domain: String,
    pub n: usize,
    pub length: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseSummary {
    pub t: f64,
    pub t_hat: Option<f64>,
    pub x0: (f64, f64),
    pub balls: Vec<BallRecord>,
    pub residual: Option<f64>,
    pub window_mass: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub checkpoint_version: u32,
    pub config_hash: String,
    pub config: String,
    pub preset: Option<String>,
    pub grid: GridRecord,
    pub model: String,
    pub solver: String,
    pub status: String,
    pub stop_reason: Option<String>,
    pub steps: u64,
    pub t: f64,
    pub initial_mass: f64,
    pub final_mass: f64,
    pub initial_sup: f64,
    pub final_sup: f64,
    pub density_cap: Option<f64>,
    pub series: String,
    pub snapshot_index: String,
    pub checkpoint: String,
    pub collapse_report: Option<CollapseSummary>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

pub fn read_ndjson<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?);
    }
    Ok(out)
}

/// A stored field: the density itself, or a radial cumulative-mass profile.
#[derive(Debug, Clone)]
pub enum Snapshot {
    Planar(Field64),
    Radial(MassProfile64),
}

impl Snapshot {
    pub fn density(&self) -> Field64 {
        match self {
            Snapshot::Planar(f) => f.clone(),
            Snapshot::Radial(p) => collapse_lab::oracle_density(p),
        }
    }
}

pub fn load_snapshot(dir: &Path, grid: GridSpec64, entry: &SnapshotEntry) -> Result<Snapshot> {
    let path = dir.join(&entry.file);
    let reader = BufReader::new(File::open(&path).with_context(|| format!("opening {}", path.display()))?);
    match grid.kind() {
        DomainKind::Square => Ok(Snapshot::Planar(Field64::read_csv(grid, reader).with_context(|| format!("reading {}", path.display()))?)),
        DomainKind::RadialDisk => {
            let mut cumulative = Vec::with_capacity(grid.n());
            for (i, line) in reader.lines().enumerate().skip(1) {
                let line = line?;
                let m = line.split(',').nth(1).and_then(|s| s.trim().parse::<f64>().ok());
                match m {
                    Some(m) => cumulative.push(m),
                    None => bail!("{} line {}: malformed profile row", path.display(), i + 1),
                }
            }
            let mut p = MassProfile64::new(grid, cumulative, entry.t).with_context(|| format!("reading {}", path.display()))?;
            p.step_index = entry.step;
            Ok(Snapshot::Radial(p))
        }
    }
}
