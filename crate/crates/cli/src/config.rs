//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` are comments. A `preset = <name>` line loads the
//! named preset first; every other line overrides it, whatever its position.
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `domain` | `square` or `radial-disk` | `square` |
//! | `n` | cells per side (square) or radial cells | `64` |
//! | `length` | side length or disk radius | `1` |
//! | `model` | `dirichlet` or `neumann` | `dirichlet` |
//! | `initial` | `constant`, `gaussian` or `two-bumps` | `gaussian` |
//! | `lambda` | total initial mass | required |
//! | `center` | `x,y` of the Gaussian | domain centre |
//! | `centers` | `x1,y1;x2,y2` of the two bumps | required for `two-bumps` |
//! | `width` | bump standard deviation | `0.1` |
//! | `perturbation` | relative amplitude of seeded multiplicative noise | `0` |
//! | `seed` | noise seed | `0` |
//! | `dt_safety` | fraction of the explicit step limit | `0.3` |
//! | `positivity` | `clip-and-rebalance` or `reject` | `clip-and-rebalance` |
//! | `poisson_tol` | relative residual of the elliptic solve | `1e-10` |
//! | `oracle_kappa`, `oracle_dt_max` | radial step control `dt = min(dt_max, kappa/max u)` | `0.005`, `0.001` |
//! | `t_end` | final time, or `none` | `none` |
//! | `max_steps` | step budget, or `none` | `none` |
//! | `density_cap` | absolute sup-norm cap, or `none` | `none` |
//! | `density_growth_cap` | cap as a multiple of the initial sup-norm, or `none` | `none` |
//! | `sample_every` | steps between series records | `10` |
//! | `snapshot_every` | steps between field snapshots, `0` disables | `0` |
//! | `snapshot_growth` | snapshot whenever sup grows by this factor, `0` disables | `0` |
//! | `checkpoint_every` | steps between checkpoints, `0` only at the end | `0` |
//! | `output_dir` | run directory | `runs/<preset or "run">` |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use collapse_lab::{DomainKind, GridSpec64, InitialProfile, Model, OracleConfig, PositivityMode, StepperConfig, StopRule};
use sha2::{Digest, Sha256};

use crate::presets;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialKind {
    Constant,
    Gaussian { center: (f64, f64) },
    TwoBumps { centers: [(f64, f64); 2] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub domain: DomainKind,
    pub n: usize,
    pub length: f64,
    pub model: Model,
    pub initial: InitialKind,
    pub lambda: f64,
    pub width: f64,
    pub perturbation: f64,
    pub seed: u64,
    pub dt_safety: f64,
    pub positivity: PositivityMode,
    pub poisson_tol: f64,
    pub oracle_kappa: f64,
    pub oracle_dt_max: f64,
    pub t_end: Option<f64>,
    pub max_steps: Option<u64>,
    pub density_cap: Option<f64>,
    pub density_growth_cap: Option<f64>,
    pub sample_every: u64,
    pub snapshot_every: u64,
    pub snapshot_growth: f64,
    pub checkpoint_every: u64,
    pub output_dir: PathBuf,
}

const KEYS: &[&str] = &[
    "preset",
    "domain",
    "n",
    "length",
    "model",
    "initial",
    "lambda",
    "center",
    "centers",
    "width",
    "perturbation",
    "seed",
    "dt_safety",
    "positivity",
    "poisson_tol",
    "oracle_kappa",
    "oracle_dt_max",
    "t_end",
    "max_steps",
    "density_cap",
    "density_growth_cap",
    "sample_every",
    "snapshot_every",
    "snapshot_growth",
    "checkpoint_every",
    "output_dir",
];

/// Splits config text into a key map, rejecting unknown or repeated keys.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected `key = value`, got `{line}`", no + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            bail!("line {}: unknown key `{k}`", no + 1);
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            bail!("line {}: key `{k}` given twice", no + 1);
        }
    }
    Ok(map)
}

fn field<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    map.get(key)
        .map(|v| v.parse::<T>().map_err(|e| anyhow!("`{key}`: cannot parse `{v}`: {e}")))
        .transpose()
}

fn optional<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match map.get(key).map(String::as_str) {
        None | Some("none") => Ok(None),
        Some(_) => field(map, key),
    }
}

fn point(s: &str, key: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        bail!("`{key}`: expected `x,y`, got `{s}`");
    }
    let x = parts[0].parse().with_context(|| format!("`{key}`: bad x coordinate `{}`", parts[0]))?;
    let y = parts[1].parse().with_context(|| format!("`{key}`: bad y coordinate `{}`", parts[1]))?;
    Ok((x, y))
}

impl RunConfig {
    /// Parses config text, merging in the preset it names.
    pub fn parse(text: &str) -> Result<Self> {
        let own = parse_pairs(text)?;
        let mut map = match own.get("preset") {
            Some(name) => parse_pairs(presets::text(name)?).with_context(|| format!("preset `{name}`"))?,
            None => BTreeMap::new(),
        };
        map.extend(own);
        Self::from_map(&map)
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        Self::parse(&format!("preset = {name}\n"))
    }

    fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let preset = map.get("preset").cloned();
        let domain: DomainKind = field(map, "domain")?.unwrap_or(DomainKind::Square);
        let length: f64 = field(map, "length")?.unwrap_or(1.0);
        let centre = match domain {
            DomainKind::Square => (length / 2.0, length / 2.0),
            DomainKind::RadialDisk => (0.0, 0.0),
        };
        let initial = match map.get("initial").map(String::as_str).unwrap_or("gaussian") {
            "constant" => InitialKind::Constant,
            "gaussian" => {
                let center = map.get("center").map(|s| point(s, "center")).transpose()?.unwrap_or(centre);
                InitialKind::Gaussian { center }
            }
            "two-bumps" => {
                let s = map.get("centers").ok_or_else(|| anyhow!("`centers` is required for two-bumps"))?;
                let parts: Vec<&str> = s.split(';').collect();
                if parts.len() != 2 {
                    bail!("`centers`: expected `x1,y1;x2,y2`, got `{s}`");
                }
                InitialKind::TwoBumps { centers: [point(parts[0], "centers")?, point(parts[1], "centers")?] }
            }
            other => bail!("`initial`: unknown profile `{other}` (constant, gaussian, two-bumps)"),
        };
        let output_dir = map
            .get("output_dir")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs").join(preset.as_deref().unwrap_or("run")));
        let cfg = Self {
            preset,
            domain,
            n: field(map, "n")?.unwrap_or(64),
            length,
            model: field(map, "model")?.unwrap_or(Model::Dirichlet),
            initial,
            lambda: field(map, "lambda")?.ok_or_else(|| anyhow!("`lambda` is required"))?,
            width: field(map, "width")?.unwrap_or(0.1),
            perturbation: field(map, "perturbation")?.unwrap_or(0.0),
            seed: field(map, "seed")?.unwrap_or(0),
            dt_safety: field(map, "dt_safety")?.unwrap_or(0.3),
            positivity: field(map, "positivity")?.unwrap_or(PositivityMode::ClipAndRebalance),
            poisson_tol: field(map, "poisson_tol")?.unwrap_or(1e-10),
            oracle_kappa: field(map, "oracle_kappa")?.unwrap_or(0.005),
            oracle_dt_max: field(map, "oracle_dt_max")?.unwrap_or(1e-3),
            t_end: optional(map, "t_end")?,
            max_steps: optional(map, "max_steps")?,
            density_cap: optional(map, "density_cap")?,
            density_growth_cap: optional(map, "density_growth_cap")?,
            sample_every: field(map, "sample_every")?.unwrap_or(10),
            snapshot_every: field(map, "snapshot_every")?.unwrap_or(0),
            snapshot_growth: field(map, "snapshot_growth")?.unwrap_or(0.0),
            checkpoint_every: field(map, "checkpoint_every")?.unwrap_or(0),
            output_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every parameter against what the solvers accept.
    pub fn validate(&self) -> Result<()> {
        self.grid().context("`n`/`length`")?;
        self.profile().context("`initial`")?;
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            bail!("`lambda` must be positive, got {}", self.lambda);
        }
        if !(self.perturbation >= 0.0 && self.perturbation < 1.0) {
            bail!("`perturbation` must lie in [0, 1), got {}", self.perturbation);
        }
        self.stepper_config().validate().context("`dt_safety`/`poisson_tol`")?;
        if !(self.oracle_kappa > 0.0 && self.oracle_dt_max > 0.0) {
            bail!("`oracle_kappa` and `oracle_dt_max` must be positive");
        }
        if self.domain == DomainKind::RadialDisk && self.model == Model::Neumann {
            bail!("`model`: radial-disk runs support only the dirichlet model");
        }
        if let Some(t) = self.t_end {
            if !(t >= 0.0 && t.is_finite()) {
                bail!("`t_end` must be a nonnegative time, got {t}");
            }
        }
        if self.t_end.is_none() && self.max_steps.is_none() && self.density_cap.is_none() && self.density_growth_cap.is_none() {
            bail!("no stop rule: set at least one of `t_end`, `max_steps`, `density_cap`, `density_growth_cap`");
        }
        if self.density_cap.is_some_and(|c| !(c > 0.0)) {
            bail!("`density_cap` must be positive");
        }
        if self.density_growth_cap.is_some_and(|c| !(c > 1.0)) {
            bail!("`density_growth_cap` must exceed 1");
        }
        if self.sample_every == 0 {
            bail!("`sample_every` must be at least 1");
        }
        if !(self.snapshot_growth == 0.0 || self.snapshot_growth > 1.0) {
            bail!("`snapshot_growth` must be 0 or exceed 1, got {}", self.snapshot_growth);
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec64> {
        Ok(GridSpec64::new(self.domain, self.n, self.length)?)
    }

    pub fn profile(&self) -> Result<InitialProfile<f64>> {
        let p = match self.initial {
            InitialKind::Constant => InitialProfile::Constant { mass: self.lambda },
            InitialKind::Gaussian { center } => InitialProfile::Gaussian { center, width: self.width, mass: self.lambda },
            InitialKind::TwoBumps { centers } => {
                InitialProfile::TwoBumps { centers, width: self.width, masses: [self.lambda / 2.0, self.lambda / 2.0] }
            }
        };
        Ok(p)
    }

    pub fn stepper_config(&self) -> StepperConfig<f64> {
        StepperConfig { dt_safety: self.dt_safety, positivity: self.positivity, drift: true, poisson_tol: self.poisson_tol }
    }

    pub fn oracle_config(&self) -> OracleConfig<f64> {
        OracleConfig { kappa: self.oracle_kappa, dt_max: self.oracle_dt_max }
    }

    /// Stop rule once the initial sup-norm is known.
    pub fn stop_rule(&self, initial_sup: f64) -> StopRule<f64> {
        let growth = self.density_growth_cap.map(|g| g * initial_sup);
        let density_cap = match (self.density_cap, growth) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        StopRule { t_end: self.t_end, max_steps: self.max_steps, density_cap }
    }

    /// Fully resolved configuration, one sorted `key = value` per line.
    /// Parsing it back yields the same config.
    pub fn canonical(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| x.to_string());
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        m.insert("domain", self.domain.as_str().into());
        m.insert("n", self.n.to_string());
        m.insert("length", self.length.to_string());
        m.insert("model", self.model.as_str().into());
        match self.initial {
            InitialKind::Constant => {
                m.insert("initial", "constant".into());
            }
            InitialKind::Gaussian { center } => {
                m.insert("initial", "gaussian".into());
                m.insert("center", format!("{},{}", center.0, center.1));
            }
            InitialKind::TwoBumps { centers } => {
                m.insert("initial", "two-bumps".into());
                m.insert("centers", format!("{},{};{},{}", centers[0].0, centers[0].1, centers[1].0, centers[1].1));
            }
        }
        m.insert("lambda", self.lambda.to_string());
        m.insert("width", self.width.to_string());
        m.insert("perturbation", self.perturbation.to_string());
        m.insert("seed", self.seed.to_string());
        m.insert("dt_safety", self.dt_safety.to_string());
        m.insert("positivity", self.positivity.as_str().into());
        m.insert("poisson_tol", self.poisson_tol.to_string());
        m.insert("oracle_kappa", self.oracle_kappa.to_string());
        m.insert("oracle_dt_max", self.oracle_dt_max.to_string());
        m.insert("t_end", opt(self.t_end));
        m.insert("max_steps", self.max_steps.map_or("none".to_string(), |s| s.to_string()));
        m.insert("density_cap", opt(self.density_cap));
        m.insert("density_growth_cap", opt(self.density_growth_cap));
        m.insert("sample_every", self.sample_every.to_string());
        m.insert("snapshot_every", self.snapshot_every.to_string());
        m.insert("snapshot_growth", self.snapshot_growth.to_string());
        m.insert("checkpoint_every", self.checkpoint_every.to_string());
        m.insert("output_dir", self.output_dir.display().to_string());
        let mut out = String::new();
        for (k, v) in m {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Hex SHA-256 of [`canonical`](Self::canonical) without the output directory,
    /// so relocated runs hash alike.
    pub fn hash(&self) -> String {
        let text: String = self.canonical().lines().filter(|l| !l.starts_with("output_dir")).map(|l| format!("{l}\n")).collect();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_round_trip() {
        for name in presets::NAMES {
            let cfg = RunConfig::from_preset(name).unwrap();
            let again = RunConfig::parse(&cfg.canonical()).unwrap();
            assert_eq!(cfg.canonical(), again.canonical());
            assert_eq!(cfg.hash(), again.hash());
        }
    }

    #[test]
    fn overrides_beat_the_preset() {
        let cfg = RunConfig::parse("n = 32\npreset = subcritical-dirichlet\n").unwrap();
        assert_eq!(cfg.n, 32);
        assert_eq!(cfg.preset.as_deref(), Some("subcritical-dirichlet"));
    }

    #[test]
    fn field_level_errors() {
        let err = |text: &str| RunConfig::parse(text).unwrap_err().to_string();
        assert!(err("lambda = 1\nbogus = 2\nt_end = 1").contains("unknown key `bogus`"));
        assert!(err("lambda = -1\nt_end = 1").contains("lambda"));
        assert!(err("lambda = 1").contains("no stop rule"));
        assert!(err("lambda = x\nt_end = 1").contains("`lambda`"));
        assert!(err("lambda = 1\nt_end = 1\ndomain = radial-disk\nmodel = neumann").contains("radial-disk"));
        assert!(err("lambda = 1\nt_end = 1\ninitial = two-bumps").contains("centers"));
        assert!(err("lambda = 1\nt_end = 1\nn = 1").contains("`n`"));
    }

    #[test]
    fn cap_combines_absolute_and_relative() {
        let cfg = RunConfig::parse("lambda = 1\ndensity_cap = 50\ndensity_growth_cap = 10").unwrap();
        assert_eq!(cfg.stop_rule(2.0).density_cap, Some(20.0));
        assert_eq!(cfg.stop_rule(10.0).density_cap, Some(50.0));
    }
}
