//! Post-run analysis of a run directory.
//!
//! Reads the series and snapshots, fits the blowup time, then for every
//! candidate blowup point tracks collapse balls, the residual mass of the
//! parabolic window and the envelope of the backward self-similar frames.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use collapse_lab::diagnostics::{
    detect_collapses, energy_trend_check, estimate_blowup_time, mass_window_sweep, BlowupEstimate, CollapseConfig, EnergyRecord,
};
use collapse_lab::rescale::{envelope_series, envelope_sensitivity, make_frame};
use collapse_lab::scalar::{eight_pi, median};
use collapse_lab::{DomainKind, Error as CoreError, Field64, Point};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::output::{load_snapshot, read_ndjson, BallRecord, Manifest, SeriesRecord, Snapshot, SnapshotEntry, SERIES, SNAPSHOT_INDEX};

pub const REPORT: &str = "report.json";
pub const ANALYSIS_SERIES: &str = "analysis.ndjson";
pub const COLLAPSES_CSV: &str = "collapses.csv";

/// Residual increases up to this relative size count as jitter.
pub const RESIDUAL_JITTER: f64 = 0.01;
/// Window of `s` over which envelope plateaus and spreads are taken.
pub const ENVELOPE_SPAN: f64 = 2.0;
/// Candidate blowup points must reach this fraction of the global maximum.
pub const CANDIDATE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub x0: Option<Point<f64>>,
    pub b_list: Vec<f64>,
    pub epsilon: f64,
    /// Window radius of the collapse detector, in units of `R(t)`.
    pub b: f64,
    pub y_max: Vec<f64>,
    pub n_y: usize,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self { x0: None, b_list: vec![5.0, 10.0, 20.0], epsilon: 0.5, b: 20.0, y_max: vec![10.0, 20.0], n_y: 128 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergySummary {
    pub records: usize,
    pub violations: usize,
    pub max_defect: Option<f64>,
    pub clean: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlowupFit {
    pub t_hat: f64,
    pub fit_window: (f64, f64),
    pub fit_residual: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowRecord {
    pub point: usize,
    pub step: u64,
    pub t: f64,
    pub tau: f64,
    pub sup: f64,
    pub collapses: Vec<BallRecord>,
    pub residual: f64,
    pub window_mass: f64,
    /// `(b, mass of B(x0, b R))` for each requested `b`.
    pub sweep: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualTrend {
    /// Records with `T̂ − t` within a factor 10 of the last one.
    pub samples: usize,
    pub monotone: bool,
    pub first: Option<f64>,
    pub last: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeSummary {
    pub y_max: f64,
    pub frames: usize,
    pub median_second_moment: Option<f64>,
    pub flagged: usize,
    /// `(max − min) / median` of the second moment over the last two units of `s`.
    pub tail_spread: Option<f64>,
    pub plateau: Option<f64>,
    pub plateau_over_8pi: Option<f64>,
    pub sensitivity_shift: Option<f64>,
    pub sensitivity_stable: Option<bool>,
    pub file: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointReport {
    pub x0: Point<f64>,
    pub windows: usize,
    pub final_balls: Vec<BallRecord>,
    pub all_quantized: bool,
    pub final_residual: Option<f64>,
    pub residual_trend: ResidualTrend,
    pub envelopes: Vec<EnvelopeSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub kind: String,
    pub config_hash: String,
    pub stop_reason: Option<String>,
    pub energy: EnergySummary,
    pub max_sup: f64,
    pub blowup: Option<BlowupFit>,
    pub note: Option<String>,
    pub epsilon: f64,
    pub b: f64,
    /// Distinct collapse balls at the last analysed time.
    pub collapses: usize,
    pub quantized: usize,
    pub points: Vec<PointReport>,
}

pub const GLOBAL_EXISTENCE: &str = "global-existence run";
pub const BLOWUP: &str = "blowup run";

struct Loaded {
    entry: SnapshotEntry,
    density: Field64,
}

/// Runs the whole pipeline on `dir` and writes the report files there.
pub fn analyze(dir: &Path, opts: &AnalyzeOptions) -> Result<Report> {
    if opts.b_list.iter().any(|&b| !(b > 0.0)) || !(opts.epsilon > 0.0) || !(opts.b > 0.0) {
        bail!("window multiples and epsilon must be positive");
    }
    let manifest = Manifest::load(dir)?;
    let cfg = RunConfig::parse(&manifest.config).context("configuration recorded in the manifest")?;
    let grid = cfg.grid()?;
    let series: Vec<SeriesRecord> = read_ndjson(&dir.join(SERIES))?;
    let index: Vec<SnapshotEntry> = read_ndjson(&dir.join(SNAPSHOT_INDEX))?;
    let energy = energy_summary(&series)?;
    let max_sup = series.iter().map(|r| r.sup).fold(0.0, f64::max);
    let samples: Vec<(f64, f64)> = series.iter().map(|r| (r.t, r.sup)).collect();

    let mut report = Report {
        kind: GLOBAL_EXISTENCE.into(),
        config_hash: manifest.config_hash.clone(),
        stop_reason: manifest.stop_reason.clone(),
        energy,
        max_sup,
        blowup: None,
        note: None,
        epsilon: opts.epsilon,
        b: opts.b,
        collapses: 0,
        quantized: 0,
        points: Vec::new(),
    };
    let est = match estimate_blowup_time(&samples) {
        Ok(e) => e,
        Err(e @ (CoreError::NoBlowupTrend(_) | CoreError::InvalidEstimate(_))) => {
            report.note = Some(format!("collapse analyses skipped: {e}"));
            write_json(&dir.join(REPORT), &report)?;
            return Ok(report);
        }
        Err(e) => return Err(e.into()),
    };
    report.kind = BLOWUP.into();
    report.blowup = Some(BlowupFit { t_hat: est.t_hat, fit_window: est.fit_window, fit_residual: est.fit_residual, rate: est.rate });

    let snaps: Vec<Loaded> = index
        .iter()
        .filter(|e| e.t < est.t_hat)
        .map(|e| {
            let s = load_snapshot(dir, grid, e)?;
            Ok(Loaded { entry: e.clone(), density: s.density() })
        })
        .collect::<Result<_>>()?;
    let Some(last) = snaps.last() else {
        report.note = Some("no snapshot precedes the estimated blowup time".into());
        write_json(&dir.join(REPORT), &report)?;
        return Ok(report);
    };
    let points = match opts.x0 {
        Some(p) => vec![p],
        None => candidate_points(&last.density),
    };

    let det = CollapseConfig { b: opts.b, epsilon: opts.epsilon, ..CollapseConfig::default() };
    let mut stream = BufWriter::new(File::create(dir.join(ANALYSIS_SERIES))?);
    let mut csv = BufWriter::new(File::create(dir.join(COLLAPSES_CSV))?);
    writeln!(csv, "point,t,x,y,r,mass,quantized")?;
    let mut final_balls: Vec<BallRecord> = Vec::new();
    for (k, &x0) in points.iter().enumerate() {
        let mut windows = Vec::new();
        for s in &snaps {
            let rep = match detect_collapses(&s.density, s.entry.t, &est, x0, &det) {
                Ok(r) => r,
                Err(e) => {
                    log::debug!("t = {}: {e}", s.entry.t);
                    continue;
                }
            };
            let sweep = mass_window_sweep(&s.density, s.entry.t, &est, x0, &opts.b_list)?;
            let w = WindowRecord {
                point: k,
                step: s.entry.step,
                t: s.entry.t,
                tau: est.t_hat - s.entry.t,
                sup: s.entry.sup,
                collapses: rep.balls.iter().map(BallRecord::from).collect(),
                residual: rep.residual_mass,
                window_mass: rep.window_mass,
                sweep,
            };
            writeln!(stream, "{}", serde_json::to_string(&w)?)?;
            for b in &w.collapses {
                writeln!(csv, "{k},{},{},{},{},{},{}", w.t, b.x, b.y, b.r, b.mass, b.quantized)?;
            }
            windows.push(w);
        }
        let trend = residual_trend(&windows);
        let envelopes = opts
            .y_max
            .iter()
            .map(|&y| envelope_summary(dir, &snaps, &est, x0, y, opts.n_y, k))
            .collect::<Result<Vec<_>>>()?;
        let last_w = windows.last();
        let balls = last_w.map(|w| w.collapses.clone()).unwrap_or_default();
        for b in &balls {
            let dup = final_balls.iter().any(|o| (o.x - b.x).hypot(o.y - b.y) < o.r.max(b.r));
            if !dup {
                final_balls.push(b.clone());
            }
        }
        report.points.push(PointReport {
            x0,
            windows: windows.len(),
            all_quantized: !balls.is_empty() && balls.iter().all(|b| b.quantized),
            final_balls: balls,
            final_residual: last_w.map(|w| w.residual),
            residual_trend: trend,
            envelopes,
        });
    }
    stream.flush()?;
    csv.flush()?;
    report.collapses = final_balls.len();
    report.quantized = final_balls.iter().filter(|b| b.quantized).count();
    write_json(&dir.join(REPORT), &report)?;
    Ok(report)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn energy_summary(series: &[SeriesRecord]) -> Result<EnergySummary> {
    let records: Vec<EnergyRecord<f64>> = series
        .iter()
        .map(|r| EnergyRecord { t: r.t, free_energy: r.free_energy, dissipation: r.dissipation, mass: r.mass, variant: false })
        .collect();
    if records.len() < 2 {
        return Ok(EnergySummary { records: records.len(), violations: 0, max_defect: None, clean: true });
    }
    let v = energy_trend_check(&records)?;
    Ok(EnergySummary { records: records.len(), violations: v.violations.len(), max_defect: Some(v.max_defect), clean: v.is_clean() })
}

/// Residuals over the last decade of `T̂ − t`, checked for monotone decrease.
pub fn residual_trend(windows: &[WindowRecord]) -> ResidualTrend {
    let Some(last) = windows.last() else {
        return ResidualTrend { samples: 0, monotone: false, first: None, last: None };
    };
    let tail: Vec<&WindowRecord> = windows.iter().filter(|w| w.tau <= 10.0 * last.tau).collect();
    let monotone = tail.windows(2).all(|p| p[1].residual <= p[0].residual + RESIDUAL_JITTER * p[0].residual.abs());
    ResidualTrend { samples: tail.len(), monotone: tail.len() >= 2 && monotone, first: tail.first().map(|w| w.residual), last: Some(last.residual) }
}

fn envelope_summary(dir: &Path, snaps: &[Loaded], est: &BlowupEstimate<f64>, x0: Point<f64>, y_max: f64, n_y: usize, k: usize) -> Result<EnvelopeSummary> {
    let frames: Vec<_> = snaps.iter().filter_map(|s| make_frame(&s.density, s.entry.t, est, x0, y_max, n_y).ok()).collect();
    let file = format!("envelope_{k}_y{y_max}.ndjson");
    let mut w = BufWriter::new(File::create(dir.join(&file))?);
    let env = envelope_series(&frames)?;
    for p in &env.points {
        writeln!(w, "{}", serde_json::json!({"s": p.s, "frame_mass": p.frame_mass, "second_moment": p.second_moment, "flagged": p.flagged}))?;
    }
    w.flush()?;
    let tail: Vec<f64> = env.tail(ENVELOPE_SPAN).iter().map(|p| p.second_moment).collect();
    let tail_spread = median(&tail).filter(|&m| m > 0.0).map(|m| {
        let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        (hi - lo) / m
    });
    let plateau = env.plateau(ENVELOPE_SPAN);
    let sens = if frames.is_empty() {
        None
    } else {
        let pairs: Vec<(f64, &Field64)> = snaps.iter().map(|s| (s.entry.t, &s.density)).collect();
        envelope_sensitivity(&pairs, est, x0, y_max, n_y, ENVELOPE_SPAN).ok()
    };
    Ok(EnvelopeSummary {
        y_max,
        frames: frames.len(),
        median_second_moment: (!frames.is_empty()).then_some(env.median_second_moment),
        flagged: env.flagged(),
        tail_spread,
        plateau,
        plateau_over_8pi: plateau.map(|p| p / eight_pi::<f64>()),
        sensitivity_shift: sens.map(|s| s.max_shift),
        sensitivity_stable: sens.map(|s| s.stable),
        file,
    })
}

/// Separated local maxima above a tenth of the global maximum, highest first.
pub fn candidate_points(f: &Field64) -> Vec<Point<f64>> {
    let g = *f.grid();
    if g.kind() == DomainKind::RadialDisk {
        return vec![(0.0, 0.0)];
    }
    let n = g.n();
    let v = f.values();
    let top = f.max();
    let mut peaks: Vec<usize> = (0..g.len())
        .filter(|&k| v[k] >= CANDIDATE_FRACTION * top && v[k] > 0.0)
        .filter(|&k| {
            let (i, j) = ((k % n) as isize, (k / n) as isize);
            (-1..=1).all(|dj| {
                (-1..=1).all(|di| {
                    let (a, b) = (i + di, j + dj);
                    a < 0 || b < 0 || a >= n as isize || b >= n as isize || v[(b as usize) * n + a as usize] <= v[k]
                })
            })
        })
        .collect();
    peaks.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    // Plateaus of equal maxima and shoulders collapse onto the highest nearby peak.
    let separation = 10.0 * g.h();
    let mut chosen: Vec<Point<f64>> = Vec::new();
    for k in peaks {
        let p = g.center(k);
        if chosen.iter().all(|c| (c.0 - p.0).hypot(c.1 - p.1) > separation) {
            chosen.push(p);
        }
    }
    chosen
}

/// Loads the last snapshot of a run, for callers that want the final field.
pub fn final_snapshot(dir: &Path) -> Result<Option<(SnapshotEntry, Snapshot)>> {
    let manifest = Manifest::load(dir)?;
    let cfg = RunConfig::parse(&manifest.config)?;
    let index: Vec<SnapshotEntry> = read_ndjson(&dir.join(SNAPSHOT_INDEX))?;
    match index.last() {
        Some(e) => Ok(Some((e.clone(), load_snapshot(dir, cfg.grid()?, e)?))),
        None => Ok(None),
    }
}
