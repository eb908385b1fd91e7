//! `run` and `resume`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use collapse_lab::diagnostics::{detect_collapses, estimate_blowup_time, free_energy, free_energy_radial, CollapseConfig, EnergyRecord};
use collapse_lab::{
    make_initial, oracle_density, run_oracle, total_mass, DomainKind, Field64, MassProfile64, SimState64, StopReason, Stepper,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, Checkpoint, Meta};
use crate::config::RunConfig;
use crate::output::{
    read_ndjson, BallRecord, CollapseSummary, GridRecord, Manifest, SeriesRecord, SnapshotEntry, CHECKPOINT, COLLAPSE_CSV, SERIES,
    SNAPSHOT_DIR, SNAPSHOT_INDEX,
};

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Interrupt after this absolute step, leaving a resumable checkpoint.
    pub stop_after: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Running,
    Completed,
    Interrupted,
    Failed,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Running => "running",
            Status::Completed => "completed",
            Status::Interrupted => "interrupted",
            Status::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub status: Status,
    pub stop_reason: Option<StopReason>,
    pub steps: u64,
    pub t: f64,
    /// Set when `resume` found nothing left to do.
    pub already_complete: bool,
}

/// Borrowed state of either solver.
#[derive(Clone, Copy)]
enum View<'a> {
    Planar(&'a SimState64),
    Radial(&'a MassProfile64),
}

#[derive(Clone)]
enum Owned {
    Planar(SimState64),
    Radial(MassProfile64),
}

impl Owned {
    fn view(&self) -> View<'_> {
        match self {
            Owned::Planar(s) => View::Planar(s),
            Owned::Radial(p) => View::Radial(p),
        }
    }
}

impl View<'_> {
    fn t(self) -> f64 {
        match self {
            View::Planar(s) => s.t,
            View::Radial(p) => p.t,
        }
    }

    fn step(self) -> u64 {
        match self {
            View::Planar(s) => s.step_index,
            View::Radial(p) => p.step_index,
        }
    }

    fn sup(self) -> f64 {
        match self {
            View::Planar(s) => s.field.max(),
            View::Radial(p) => p.max_density(),
        }
    }

    fn mass(self) -> f64 {
        match self {
            View::Planar(s) => total_mass(&s.field),
            View::Radial(p) => p.total(),
        }
    }

    fn energy(self) -> Result<EnergyRecord<f64>> {
        Ok(match self {
            View::Planar(s) => free_energy(s)?,
            View::Radial(p) => free_energy_radial(&oracle_density(p), p.t)?,
        })
    }

    fn density(self) -> Field64 {
        match self {
            View::Planar(s) => s.field.clone(),
            View::Radial(p) => oracle_density(p),
        }
    }

    fn values(self) -> Vec<f64> {
        match self {
            View::Planar(s) => s.field.values().to_vec(),
            View::Radial(p) => p.cumulative().to_vec(),
        }
    }

    fn write_snapshot(self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        match self {
            View::Planar(s) => s.field.write_csv(&mut w)?,
            View::Radial(p) => p.write_csv(&mut w)?,
        }
        w.flush()?;
        Ok(())
    }

    fn to_owned(self) -> Owned {
        match self {
            View::Planar(s) => Owned::Planar(s.clone()),
            View::Radial(p) => Owned::Radial(p.clone()),
        }
    }
}

/// Streams series records and snapshots and writes periodic checkpoints.
struct Recorder {
    dir: PathBuf,
    cfg: RunConfig,
    series: BufWriter<File>,
    series_len: u64,
    index: BufWriter<File>,
    index_len: u64,
    snapshot_count: u64,
    last_snapshot_step: Option<u64>,
    initial_sup: f64,
    next_snapshot_sup: f64,
    samples: Vec<(f64, f64)>,
    last: Owned,
}

impl Recorder {
    fn observe(&mut self, s: View<'_>) -> Result<()> {
        let step = s.step();
        if step.is_multiple_of(self.cfg.sample_every) {
            let e = s.energy()?;
            let dt = match s {
                View::Planar(st) => st.dt_last,
                View::Radial(_) => match &self.last {
                    Owned::Radial(prev) => s.t() - prev.t,
                    Owned::Planar(_) => f64::NAN,
                },
            };
            let rec = SeriesRecord {
                step,
                t: s.t(),
                dt,
                mass: e.mass,
                free_energy: e.free_energy,
                dissipation: e.dissipation,
                sup: s.sup(),
                collapses: Vec::new(),
                residual: None,
            };
            let line = serde_json::to_string(&rec)? + "\n";
            self.series.write_all(line.as_bytes())?;
            self.series_len += line.len() as u64;
            self.samples.push((rec.t, rec.sup));
        }
        let periodic = self.cfg.snapshot_every > 0 && step.is_multiple_of(self.cfg.snapshot_every);
        let grown = s.sup() >= self.next_snapshot_sup;
        if periodic || grown {
            self.snapshot(s)?;
        }
        self.last = s.to_owned();
        if self.cfg.checkpoint_every > 0 && step.is_multiple_of(self.cfg.checkpoint_every) {
            self.checkpoint(s, Status::Running, None)?;
        }
        Ok(())
    }

    fn snapshot(&mut self, s: View<'_>) -> Result<()> {
        if self.last_snapshot_step == Some(s.step()) {
            return Ok(());
        }
        let name = format!("{SNAPSHOT_DIR}/step_{:010}.csv", s.step());
        s.write_snapshot(&self.dir.join(&name))?;
        let entry = SnapshotEntry { step: s.step(), t: s.t(), sup: s.sup(), file: name };
        let line = serde_json::to_string(&entry)? + "\n";
        self.index.write_all(line.as_bytes())?;
        self.index_len += line.len() as u64;
        self.snapshot_count += 1;
        self.last_snapshot_step = Some(s.step());
        if self.cfg.snapshot_growth > 0.0 {
            self.next_snapshot_sup = s.sup() * self.cfg.snapshot_growth;
        }
        Ok(())
    }

    fn checkpoint(&mut self, s: View<'_>, status: Status, reason: Option<StopReason>) -> Result<()> {
        self.series.flush()?;
        self.index.flush()?;
        let g = self.cfg.grid()?;
        let ck = Checkpoint {
            kind: g.kind(),
            model: self.cfg.model,
            n: g.n() as u64,
            length: g.length(),
            t: s.t(),
            step: s.step(),
            dt_last: match s {
                View::Planar(st) => st.dt_last,
                View::Radial(_) => 0.0,
            },
            values: s.values(),
            meta: Meta {
                config: self.cfg.canonical(),
                series_len: self.series_len,
                snapshots_len: self.index_len,
                snapshot_count: self.snapshot_count,
                initial_sup_bits: self.initial_sup.to_bits(),
                next_snapshot_sup_bits: self.next_snapshot_sup.to_bits(),
                status: status.as_str().into(),
                stop_reason: reason.map(|r| r.as_str().to_string()),
            },
        };
        ck.save(&self.dir.join(CHECKPOINT))
    }

    fn manifest(&self, s: View<'_>, status: Status, reason: Option<StopReason>, collapse: Option<CollapseSummary>) -> Result<()> {
        let g = self.cfg.grid()?;
        let m = Manifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            checkpoint_version: checkpoint::VERSION,
            config_hash: self.cfg.hash(),
            config: self.cfg.canonical(),
            preset: self.cfg.preset.clone(),
            grid: GridRecord { domain: g.kind().as_str().into(), n: g.n(), length: g.length(), h: g.h() },
            model: self.cfg.model.as_str().into(),
            solver: match g.kind() {
                DomainKind::Square => "finite-volume".into(),
                DomainKind::RadialDisk => "radial-cumulative-mass".into(),
            },
            status: status.as_str().into(),
            stop_reason: reason.map(|r| r.as_str().to_string()),
            steps: s.step(),
            t: s.t(),
            initial_mass: self.cfg.lambda,
            final_mass: s.mass(),
            initial_sup: self.initial_sup,
            final_sup: s.sup(),
            density_cap: self.cfg.stop_rule(self.initial_sup).density_cap,
            series: SERIES.into(),
            snapshot_index: SNAPSHOT_INDEX.into(),
            checkpoint: CHECKPOINT.into(),
            collapse_report: collapse,
        };
        m.save(&self.dir)
    }

    /// Collapse balls of the final state, with `T̂` fitted to the series so far.
    fn collapse_summary(&self, s: View<'_>) -> Result<CollapseSummary> {
        let f = s.density();
        let x0 = match f.grid().kind() {
            DomainKind::Square => f.grid().center(f.argmax()),
            DomainKind::RadialDisk => (0.0, 0.0),
        };
        let est = match estimate_blowup_time(&self.samples) {
            Ok(e) => e,
            Err(e) => {
                return Ok(CollapseSummary {
                    t: s.t(),
                    t_hat: None,
                    x0,
                    balls: Vec::new(),
                    residual: None,
                    window_mass: None,
                    note: Some(format!("no blowup-time estimate: {e}")),
                })
            }
        };
        match detect_collapses(&f, s.t(), &est, x0, &CollapseConfig::default()) {
            Ok(rep) => {
                let mut w = BufWriter::new(File::create(self.dir.join(COLLAPSE_CSV))?);
                rep.write_csv(&mut w)?;
                w.flush()?;
                Ok(CollapseSummary {
                    t: s.t(),
                    t_hat: Some(est.t_hat),
                    x0,
                    balls: rep.balls.iter().map(BallRecord::from).collect(),
                    residual: Some(rep.residual_mass),
                    window_mass: Some(rep.window_mass),
                    note: None,
                })
            }
            Err(e) => Ok(CollapseSummary {
                t: s.t(),
                t_hat: Some(est.t_hat),
                x0,
                balls: Vec::new(),
                residual: None,
                window_mass: None,
                note: Some(format!("collapse detection failed: {e}")),
            }),
        }
    }
}

/// Initial density with the seeded multiplicative perturbation, renormalised to λ.
pub fn initial_field(cfg: &RunConfig) -> Result<Field64> {
    let grid = cfg.grid()?;
    let f = make_initial(grid, &cfg.profile()?)?;
    if cfg.perturbation == 0.0 {
        return Ok(f);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noisy: Vec<f64> = f.values().iter().map(|&u| u * (1.0 + cfg.perturbation * rng.gen_range(-1.0..1.0))).collect();
    let noisy = Field64::new(grid, noisy)?;
    let scale = cfg.lambda / total_mass(&noisy);
    Ok(Field64::new(grid, noisy.values().iter().map(|&u| u * scale).collect())?)
}

enum Engine {
    Planar(Box<Stepper<f64>>),
    Radial,
}

fn engine(cfg: &RunConfig) -> Result<Engine> {
    let grid = cfg.grid()?;
    Ok(match grid.kind() {
        DomainKind::Square => Engine::Planar(Box::new(Stepper::new(grid, cfg.model, cfg.stepper_config())?)),
        DomainKind::RadialDisk => Engine::Radial,
    })
}

/// Starts a fresh run in `cfg.output_dir`.
pub fn run(cfg: &RunConfig, opts: RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let snaps = dir.join(SNAPSHOT_DIR);
    if snaps.exists() {
        fs::remove_dir_all(&snaps).with_context(|| format!("clearing {}", snaps.display()))?;
    }
    fs::create_dir_all(&snaps)?;
    for stale in [COLLAPSE_CSV, CHECKPOINT] {
        let _ = fs::remove_file(dir.join(stale));
    }
    let mut eng = engine(cfg)?;
    let field = initial_field(cfg)?;
    let start = match &mut eng {
        Engine::Planar(stepper) => Owned::Planar(stepper.initial_state(field)?),
        Engine::Radial => Owned::Radial(MassProfile64::from_field(&field)?),
    };
    let initial_sup = start.view().sup();
    let next_snapshot_sup = if cfg.snapshot_growth > 0.0 { initial_sup * cfg.snapshot_growth } else { f64::INFINITY };
    let rec = Recorder {
        dir: dir.clone(),
        cfg: cfg.clone(),
        series: BufWriter::new(File::create(dir.join(SERIES))?),
        series_len: 0,
        index: BufWriter::new(File::create(dir.join(SNAPSHOT_INDEX))?),
        index_len: 0,
        snapshot_count: 0,
        last_snapshot_step: None,
        initial_sup,
        next_snapshot_sup,
        samples: Vec::new(),
        last: start.clone(),
    };
    rec.manifest(start.view(), Status::Running, None, None)?;
    drive(eng, start, rec, opts)
}

/// Continues the run whose checkpoint is at `path`, in the checkpoint's directory.
pub fn resume(path: &Path, opts: RunOptions) -> Result<RunOutcome> {
    let ck = Checkpoint::load(path)?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    let mut cfg = RunConfig::parse(&ck.meta.config).context("configuration stored in the checkpoint")?;
    cfg.output_dir = dir.clone();
    if ck.meta.status == Status::Completed.as_str() {
        return Ok(RunOutcome {
            dir,
            status: Status::Completed,
            stop_reason: ck.meta.stop_reason.as_deref().map(str::parse).transpose()?,
            steps: ck.step,
            t: ck.t,
            already_complete: true,
        });
    }
    let grid = cfg.grid()?;
    if grid.kind() != ck.kind || grid.n() as u64 != ck.n || grid.length() != ck.length || cfg.model != ck.model {
        bail!("checkpoint header disagrees with its stored configuration");
    }
    let mut eng = engine(&cfg)?;
    let start = match &mut eng {
        Engine::Planar(stepper) => {
            let field = Field64::new(grid, ck.values.clone())?;
            let potential = stepper.solve_potential(&field)?;
            Owned::Planar(SimState64 { field, potential, t: ck.t, step_index: ck.step, dt_last: ck.dt_last, model: ck.model })
        }
        Engine::Radial => {
            let mut p = MassProfile64::new(grid, ck.values.clone(), ck.t)?;
            p.step_index = ck.step;
            Owned::Radial(p)
        }
    };
    let series_path = dir.join(SERIES);
    let index_path = dir.join(SNAPSHOT_INDEX);
    let series = truncate_to(&series_path, ck.meta.series_len)?;
    let index = truncate_to(&index_path, ck.meta.snapshots_len)?;
    let samples = read_ndjson::<SeriesRecord>(&series_path)?.into_iter().map(|r| (r.t, r.sup)).collect();
    let last_snapshot_step = read_ndjson::<SnapshotEntry>(&index_path)?.last().map(|e| e.step);
    let rec = Recorder {
        dir,
        cfg,
        series: BufWriter::new(series),
        series_len: ck.meta.series_len,
        index: BufWriter::new(index),
        index_len: ck.meta.snapshots_len,
        snapshot_count: ck.meta.snapshot_count,
        last_snapshot_step,
        initial_sup: f64::from_bits(ck.meta.initial_sup_bits),
        next_snapshot_sup: f64::from_bits(ck.meta.next_snapshot_sup_bits),
        samples,
        last: start.clone(),
    };
    rec.manifest(start.view(), Status::Running, None, None)?;
    drive(eng, start, rec, opts)
}

fn truncate_to(path: &Path, len: u64) -> Result<File> {
    let f = OpenOptions::new().write(true).open(path).with_context(|| format!("opening {}", path.display()))?;
    let have = f.metadata()?.len();
    if have < len {
        bail!("{} holds {have} bytes but the checkpoint expects at least {len}", path.display());
    }
    f.set_len(len)?;
    drop(f);
    Ok(OpenOptions::new().append(true).open(path)?)
}

fn drive(eng: Engine, start: Owned, mut rec: Recorder, opts: RunOptions) -> Result<RunOutcome> {
    let cfg_rule = rec.cfg.stop_rule(rec.initial_sup);
    let mut rule = cfg_rule;
    if let Some(k) = opts.stop_after {
        rule.max_steps = Some(rule.max_steps.map_or(k, |m| m.min(k)));
    }
    let ocfg = rec.cfg.oracle_config();
    let mut failure: Option<anyhow::Error> = None;
    let mut observe = |v: View<'_>| -> collapse_lab::Result<()> {
        rec.observe(v).map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            collapse_lab::Error::InvalidArgument(format!("output failed: {msg}"))
        })
    };
    let result = match (eng, start) {
        (Engine::Planar(mut stepper), Owned::Planar(s)) => {
            stepper.run_until(s, &rule, |st| observe(View::Planar(st))).map(|(s, r)| (Owned::Planar(s), r))
        }
        (Engine::Radial, Owned::Radial(p)) => {
            run_oracle(p, &ocfg, &rule, |pr| observe(View::Radial(pr))).map(|(p, r)| (Owned::Radial(p), r))
        }
        _ => unreachable!("engine and state are built together"),
    };
    let dir = rec.dir.clone();
    match result {
        Ok((end, reason)) => {
            let v = end.view();
            let own = cfg_rule.check(v.t(), v.step(), v.sup());
            if let Some(reason) = own {
                let collapse = if reason == StopReason::DensityCapHit { Some(rec.collapse_summary(v)?) } else { None };
                // A run that never stepped leaves only its manifest.
                if v.step() > 0 {
                    rec.snapshot(v)?;
                    rec.checkpoint(v, Status::Completed, Some(reason))?;
                } else {
                    rec.series.flush()?;
                }
                rec.manifest(v, Status::Completed, Some(reason), collapse)?;
                log::info!("run finished at step {} (t = {}): {}", v.step(), v.t(), reason.as_str());
                Ok(RunOutcome { dir, status: Status::Completed, stop_reason: Some(reason), steps: v.step(), t: v.t(), already_complete: false })
            } else {
                debug_assert_eq!(reason, StopReason::MaxSteps);
                rec.checkpoint(v, Status::Interrupted, None)?;
                rec.manifest(v, Status::Interrupted, None, None)?;
                log::info!("run interrupted at step {} (t = {})", v.step(), v.t());
                Ok(RunOutcome { dir, status: Status::Interrupted, stop_reason: None, steps: v.step(), t: v.t(), already_complete: false })
            }
        }
        Err(e) => {
            let err = failure.take().unwrap_or_else(|| anyhow!(e));
            let last = rec.last.clone();
            let v = last.view();
            rec.checkpoint(v, Status::Failed, None).context("writing the checkpoint after a failure")?;
            rec.manifest(v, Status::Failed, None, None)?;
            Err(err.context(format!("run failed after step {} (t = {}); checkpoint written to {}", v.step(), v.t(), dir.join(CHECKPOINT).display())))
        }
    }
}
