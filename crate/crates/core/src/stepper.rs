//! Explicit conservative finite-volume update of the Smoluchowski part.
//!
//! Each interior face carries the flux `J = (u_L − u_R)/h + ũ (v_R − v_L)/h`
//! from the left/lower cell into the right/upper one, with `ũ` the upwind
//! density for the face drift `(v_R − v_L)/h`. Boundary faces carry no flux,
//! which is the null-flux condition, so the update telescopes and conserves
//! mass to rounding.

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};
use crate::poisson::{Model, PoissonSolver, Potential};
use crate::scalar::{ksum, Real};

/// Relative size of a negative cell that is treated as rounding noise.
pub const NEGATIVITY_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositivityMode {
    /// Clip negatives to zero and take the clipped mass back from the
    /// positive cells in proportion to their mass.
    ClipAndRebalance,
    Reject,
}

impl std::str::FromStr for PositivityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clip-and-rebalance" | "clip" => Ok(PositivityMode::ClipAndRebalance),
            "reject" => Ok(PositivityMode::Reject),
            other => Err(Error::InvalidArgument(format!("unknown positivity mode {other:?}"))),
        }
    }
}

impl PositivityMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PositivityMode::ClipAndRebalance => "clip-and-rebalance",
            PositivityMode::Reject => "reject",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig<T> {
    /// Fraction of the explicit stability limit, in `(0, 1]`. Values up to
    /// 1/3 guarantee positivity of the upwind update.
    pub dt_safety: T,
    pub positivity: PositivityMode,
    /// When false the potential is forced to zero (pure heat equation).
    pub drift: bool,
    pub poisson_tol: T,
}

impl<T: Real> Default for StepperConfig<T> {
    fn default() -> Self {
        Self {
            dt_safety: T::lit(0.3),
            positivity: PositivityMode::ClipAndRebalance,
            drift: true,
            poisson_tol: T::lit(crate::poisson::DEFAULT_TOLERANCE),
        }
    }
}

impl<T: Real> StepperConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_safety > T::zero() && self.dt_safety <= T::one()) {
            return Err(Error::InvalidArgument(format!("dt_safety must lie in (0, 1], got {}", self.dt_safety)));
        }
        if !(self.poisson_tol > T::zero()) {
            return Err(Error::InvalidArgument("poisson tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Density, its potential and the clock.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState<T> {
    pub field: Field<T>,
    pub potential: Potential<T>,
    pub t: T,
    pub step_index: u64,
    pub dt_last: T,
    pub model: Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StopRule<T> {
    pub t_end: Option<T>,
    pub max_steps: Option<u64>,
    /// Sup-norm at which the run is declared numerically blown up.
    pub density_cap: Option<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    ReachedTEnd,
    MaxSteps,
    DensityCapHit,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::ReachedTEnd => "reached_t_end",
            StopReason::MaxSteps => "max_steps",
            StopReason::DensityCapHit => "density_cap_hit",
        }
    }
}

impl std::str::FromStr for StopReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reached_t_end" => Ok(StopReason::ReachedTEnd),
            "max_steps" => Ok(StopReason::MaxSteps),
            "density_cap_hit" => Ok(StopReason::DensityCapHit),
            other => Err(Error::InvalidArgument(format!("unknown stop reason {other:?}"))),
        }
    }
}

impl<T: Real> StopRule<T> {
    /// First triggered rule for the given clock and sup-norm, if any.
    pub fn check(&self, t: T, step_index: u64, sup: T) -> Option<StopReason> {
        if let Some(t_end) = self.t_end {
            if t >= t_end {
                return Some(StopReason::ReachedTEnd);
            }
        }
        if let Some(max) = self.max_steps {
            if step_index >= max {
                return Some(StopReason::MaxSteps);
            }
        }
        if let Some(cap) = self.density_cap {
            if sup >= cap {
                return Some(StopReason::DensityCapHit);
            }
        }
        None
    }
}

/// Largest centred face drift `|v_R − v_L| / h` over interior faces.
pub fn max_face_drift<T: Real>(potential: &Potential<T>) -> T {
    let g = potential.grid;
    let n = g.n();
    let h = g.h();
    let v = &potential.values;
    let mut m = T::zero();
    for j in 0..n {
        for i in 0..n {
            let k = j * n + i;
            if i + 1 < n {
                m = m.max((v[k + 1] - v[k]).abs());
            }
            if j + 1 < n {
                m = m.max((v[k + n] - v[k]).abs());
            }
        }
    }
    m / h
}

/// `dt_safety · min(h²/4, h / (2 max|drift|))`.
pub fn stable_dt<T: Real>(state: &SimState<T>, cfg: &StepperConfig<T>) -> T {
    let h = state.field.grid().h();
    let diffusion = h * h / T::lit(4.0);
    let a = max_face_drift(&state.potential);
    let limit = if a > T::zero() { diffusion.min(h / (T::lit(2.0) * a)) } else { diffusion };
    cfg.dt_safety * limit
}

/// Owns the elliptic solver so its factorisation is reused across steps.
#[derive(Debug, Clone)]
pub struct Stepper<T> {
    solver: PoissonSolver<T>,
    cfg: StepperConfig<T>,
    model: Model,
}

impl<T: Real> Stepper<T> {
    pub fn new(grid: GridSpec<T>, model: Model, cfg: StepperConfig<T>) -> Result<Self> {
        cfg.validate()?;
        let solver = PoissonSolver::new(grid)?.with_tolerance(cfg.poisson_tol)?;
        Ok(Self { solver, cfg, model })
    }

    pub fn config(&self) -> &StepperConfig<T> {
        &self.cfg
    }

    pub fn model(&self) -> Model {
        self.model
    }

    pub fn solve_potential(&mut self, field: &Field<T>) -> Result<Potential<T>> {
        if self.cfg.drift {
            self.solver.solve(field, self.model)
        } else {
            Ok(Potential::zeros(*field.grid(), self.model))
        }
    }

    /// State at `t = 0` with its potential solved.
    pub fn initial_state(&mut self, field: Field<T>) -> Result<SimState<T>> {
        let potential = self.solve_potential(&field)?;
        Ok(SimState { field, potential, t: T::zero(), step_index: 0, dt_last: T::zero(), model: self.model })
    }

    pub fn stable_dt(&self, state: &SimState<T>) -> T {
        stable_dt(state, &self.cfg)
    }

    /// One step with `dt = stable_dt(state)`.
    pub fn step(&mut self, state: &SimState<T>) -> Result<SimState<T>> {
        let dt = self.stable_dt(state);
        self.step_with_dt(state, dt)
    }

    pub fn step_with_dt(&mut self, state: &SimState<T>, dt: T) -> Result<SimState<T>> {
        let field = advance_density(&state.field, &state.potential, dt, self.cfg.positivity)?;
        let potential = self.solve_potential(&field)?;
        Ok(SimState {
            field,
            potential,
            t: state.t + dt,
            step_index: state.step_index + 1,
            dt_last: dt,
            model: self.model,
        })
    }

    /// Steps until a stop rule fires; `observer` sees every new state.
    pub fn run_until<F>(&mut self, mut state: SimState<T>, stop: &StopRule<T>, mut observer: F) -> Result<(SimState<T>, StopReason)>
    where
        F: FnMut(&SimState<T>) -> Result<()>,
    {
        loop {
            if let Some(reason) = stop.check(state.t, state.step_index, state.field.max()) {
                return Ok((state, reason));
            }
            let mut dt = self.stable_dt(&state);
            let mut land_on_end = false;
            if let Some(t_end) = stop.t_end {
                if state.t + dt >= t_end {
                    dt = t_end - state.t;
                    land_on_end = true;
                }
            }
            state = self.step_with_dt(&state, dt)?;
            if land_on_end {
                state.t = stop.t_end.unwrap();
            }
            observer(&state)?;
        }
    }
}

/// Explicit flux-form update of the density for a fixed potential.
pub fn advance_density<T: Real>(u: &Field<T>, v: &Potential<T>, dt: T, mode: PositivityMode) -> Result<Field<T>> {
    let g = *u.grid();
    if v.grid != g {
        return Err(Error::GridMismatch("potential and density grids differ".into()));
    }
    let n = g.n();
    let h = g.h();
    let lambda = dt / h;
    let uv = u.values();
    let vv = &v.values;
    let mut next = uv.to_vec();
    let face = |l: usize, r: usize| -> T {
        let dv = vv[r] - vv[l];
        let up = if dv > T::zero() { uv[l] } else { uv[r] };
        (uv[l] - uv[r]) / h + up * dv / h
    };
    for j in 0..n {
        for i in 0..n {
            let k = j * n + i;
            if i + 1 < n {
                let q = lambda * face(k, k + 1);
                next[k] = next[k] - q;
                next[k + 1] = next[k + 1] + q;
            }
            if j + 1 < n {
                let q = lambda * face(k, k + n);
                next[k] = next[k] - q;
                next[k + n] = next[k + n] + q;
            }
        }
    }
    enforce_positivity(&mut next, mode)?;
    Field::new(g, next)
}

fn enforce_positivity<T: Real>(values: &mut [T], mode: PositivityMode) -> Result<()> {
    let max = values.iter().fold(T::zero(), |m, &v| m.max(v));
    let tol = T::lit(NEGATIVITY_TOLERANCE) * max;
    let mut worst: Option<(usize, T)> = None;
    let mut any_negative = false;
    for (i, &v) in values.iter().enumerate() {
        if v < T::zero() {
            any_negative = true;
            if v < -tol && worst.is_none_or(|(_, w)| v < w) {
                worst = Some((i, v));
            }
        }
    }
    if !any_negative {
        return Ok(());
    }
    if let Some((cell, value)) = worst {
        if mode == PositivityMode::Reject {
            return Err(Error::Positivity { cell, value: value.as_f64(), tolerance: tol.as_f64() });
        }
        log::warn!("clipping negative density {value} in cell {cell}");
    }
    let deficit = ksum(values.iter().filter(|v| **v < T::zero()).map(|&v| -v));
    let positive = ksum(values.iter().filter(|v| **v > T::zero()).copied());
    let scale = if positive > T::zero() { T::one() - deficit / positive } else { T::zero() };
    for v in values.iter_mut() {
        *v = if *v > T::zero() { *v * scale } else { T::zero() };
    }
    Ok(())
}
