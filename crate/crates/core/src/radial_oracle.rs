//! Radially symmetric Dirichlet problem in cumulative-mass form.
//!
//! With `M(r, t)` the mass inside `B(0, r)` the system reduces to
//!
//! ```text
//! M_t = M_rr − M_r / r + M M_r / (2πr),   M(0) = 0,   M(R) = λ
//! ```
//!
//! which is also `M_t = 2πr (u_r − u v_r)` with `v_r = −M/(2πr)`. The
//! discretisation keeps `M` on the faces `r_k = kΔr` and the shell densities
//! between them. The face flux is Scharfetter–Gummel in the lagged potential
//! and the density is taken at the new time level, so each step is one
//! tridiagonal solve whose matrix is an M-matrix: the scheme keeps `M`
//! monotone and preserves the ordering of two profiles for any `dt`.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::grid::{DomainKind, Field, GridSpec};
use crate::poisson::RadialKernel;
use crate::scalar::Real;
use crate::stepper::{StopReason, StopRule};

/// Allowed drop of `M` between neighbouring faces, relative to `λ`.
pub const MONOTONICITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MassProfile<T> {
    grid: GridSpec<T>,
    /// `M(r_k)` for `k = 1..=n`; `M(0) = 0` is implicit.
    cumulative: Vec<T>,
    pub t: T,
    pub step_index: u64,
}

impl<T: Real> MassProfile<T> {
    pub fn new(grid: GridSpec<T>, cumulative: Vec<T>, t: T) -> Result<Self> {
        if grid.kind() != DomainKind::RadialDisk {
            return Err(Error::InvalidGrid("mass profiles live on radial-disk grids".into()));
        }
        if cumulative.len() != grid.n() {
            return Err(Error::InvalidProfile(format!("expected {} face values, got {}", grid.n(), cumulative.len())));
        }
        if cumulative.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidProfile("non-finite cumulative mass".into()));
        }
        let p = Self { grid, cumulative, t, step_index: 0 };
        p.check_monotone()?;
        Ok(p)
    }

    /// `M(r) = λ r² / R²`, the profile of a constant density.
    pub fn uniform(grid: GridSpec<T>, lambda: T) -> Result<Self> {
        let big_r = grid.length();
        let m = (1..=grid.n()).map(|k| {
            let r = T::from_usize_lossy(k) * grid.h();
            if k == grid.n() {
                lambda
            } else {
                lambda * r * r / (big_r * big_r)
            }
        });
        Self::new(grid, m.collect(), T::zero())
    }

    /// Cumulative integral of a radial field.
    pub fn from_field(f: &Field<T>) -> Result<Self> {
        let g = *f.grid();
        if g.kind() != DomainKind::RadialDisk {
            return Err(Error::InvalidGrid("mass profiles need a radial-disk field".into()));
        }
        let mut acc = T::zero();
        let mut comp = T::zero();
        let mut m = Vec::with_capacity(g.n());
        for (i, &u) in f.values().iter().enumerate() {
            // Neumaier running sum so M(R) matches total_mass to rounding.
            let x = u * g.cell_area(i);
            let s = acc + x;
            comp = comp + if acc.abs() >= x.abs() { (acc - s) + x } else { (x - s) + acc };
            acc = s;
            m.push(acc + comp);
        }
        Self::new(g, m, T::zero())
    }

    pub fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }

    /// Face radii `r_k = kΔr`, `k = 1..=n`.
    pub fn radii(&self) -> Vec<T> {
        (1..=self.grid.n()).map(|k| T::from_usize_lossy(k) * self.grid.h()).collect()
    }

    pub fn cumulative(&self) -> &[T] {
        &self.cumulative
    }

    pub fn total(&self) -> T {
        *self.cumulative.last().unwrap()
    }

    fn face(&self, k: usize) -> T {
        if k == 0 {
            T::zero()
        } else {
            self.cumulative[k - 1]
        }
    }

    /// Shell densities `(M_{i+1} − M_i) / |shell_i|`, possibly slightly negative.
    pub fn densities(&self) -> Vec<T> {
        (0..self.grid.n()).map(|i| (self.face(i + 1) - self.face(i)) / self.grid.cell_area(i)).collect()
    }

    pub fn max_density(&self) -> T {
        self.densities().into_iter().fold(T::zero(), T::max)
    }

    /// `M(r)`, exact for the piecewise-constant shell density.
    pub fn mass_at(&self, r: T) -> T {
        let h = self.grid.h();
        if !(r > T::zero()) {
            return T::zero();
        }
        if r >= self.grid.length() {
            return self.total();
        }
        let i = (r / h).floor().to_usize().unwrap_or(0).min(self.grid.n() - 1);
        let a = T::from_usize_lossy(i) * h;
        let u = (self.face(i + 1) - self.face(i)) / self.grid.cell_area(i);
        self.face(i) + T::PI() * u * (r * r - a * a)
    }

    fn check_monotone(&self) -> Result<()> {
        let tol = T::lit(MONOTONICITY_TOLERANCE) * self.total().abs().max(T::min_positive_value());
        for k in 1..=self.grid.n() {
            let drop = self.face(k - 1) - self.face(k);
            if drop > tol {
                return Err(Error::Monotonicity { node: k, drop: drop.as_f64() });
            }
        }
        Ok(())
    }

    /// Rows `r,M,u` at the faces; `u` is the density of the shell ending there.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "r,M,u")?;
        let u = self.densities();
        for (k, r) in self.radii().into_iter().enumerate() {
            writeln!(w, "{},{},{}", r, self.cumulative[k], u[k].max(T::zero()))?;
        }
        Ok(())
    }
}

/// Radial field `u = M_r / (2πr)` on the profile's grid, negatives clamped.
pub fn oracle_density<T: Real>(p: &MassProfile<T>) -> Field<T> {
    let u = p.densities().into_iter().map(|u| u.max(T::zero())).collect();
    Field::from_raw(p.grid, u)
}

/// Stability limit of the fully explicit version of the scheme,
/// `min(Δr²/2, Δr / (2 max M/(2πr)))`. [`oracle_step`] does not need it.
pub fn explicit_dt_limit<T: Real>(p: &MassProfile<T>) -> T {
    let h = p.grid.h();
    let speed = p
        .radii()
        .into_iter()
        .zip(&p.cumulative)
        .fold(T::zero(), |m, (r, &mk)| m.max(mk.abs() / (T::TAU() * r)));
    let diffusion = h * h / T::lit(2.0);
    if speed > T::zero() {
        diffusion.min(h / (T::lit(2.0) * speed))
    } else {
        diffusion
    }
}

/// Bernoulli function `x / (eˣ − 1)`.
fn bernoulli<T: Real>(x: T) -> T {
    if x.abs() < T::lit(1e-6) {
        T::one() - x / T::lit(2.0) + x * x / T::lit(12.0)
    } else if x > T::zero() {
        x * (-x).exp() / -(-x).exp_m1()
    } else {
        x / x.exp_m1()
    }
}

/// One linearly implicit step of length `dt`.
pub fn oracle_step<T: Real>(p: &MassProfile<T>, dt: T) -> Result<MassProfile<T>> {
    OracleStepper::new(p.grid()).step(p, dt)
}

/// Reusable per-grid state for repeated [`oracle_step`]s.
#[derive(Debug, Clone)]
pub struct OracleStepper<T> {
    grid: GridSpec<T>,
    kernel: RadialKernel<T>,
    area: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> OracleStepper<T> {
    pub fn new(grid: &GridSpec<T>) -> Self {
        let n = grid.n();
        Self {
            grid: *grid,
            kernel: RadialKernel::new(n, grid.h()),
            area: (0..n).map(|i| grid.cell_area(i)).collect(),
            v: Vec::with_capacity(n),
        }
    }

    pub fn step(&mut self, p: &MassProfile<T>, dt: T) -> Result<MassProfile<T>> {
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("oracle step needs dt > 0, got {dt}")));
        }
        if p.grid != self.grid {
            return Err(Error::GridMismatch("profile and oracle stepper grids differ".into()));
        }
        let n = self.grid.n();
        let lambda = p.total();
        let u = p.densities();
        self.kernel.potential(&u, &mut self.v);
        let (v, area) = (&self.v, &self.area);

        // Unknowns M_1..M_{n-1}; row k balances face k between shells k−1 and k.
        let m = n - 1;
        let mut lower = vec![T::zero(); m];
        let mut diag = vec![T::zero(); m];
        let mut upper = vec![T::zero(); m];
        let mut rhs = vec![T::zero(); m];
        for row in 0..m {
            let k = row + 1;
            // 2πr_k times the 1/Δr of the face flux.
            let c = dt * T::TAU() * T::from_usize_lossy(k);
            let dv = v[k] - v[k - 1];
            let out = c * bernoulli(dv) / area[k];
            let inn = c * bernoulli(-dv) / area[k - 1];
            diag[row] = T::one() + out + inn;
            upper[row] = -out;
            lower[row] = -inn;
            rhs[row] = p.cumulative[row];
            if k + 1 == n {
                rhs[row] = rhs[row] + out * lambda;
            }
        }
        let mut next = thomas(&lower, &diag, &upper, &rhs);
        next.push(lambda);
        let mut q = MassProfile { grid: self.grid, cumulative: next, t: p.t + dt, step_index: p.step_index + 1 };
        q.check_monotone()?;
        // Rounding can leave drops far below the tolerance; flatten them.
        let mut prev = T::zero();
        for mk in q.cumulative.iter_mut() {
            if *mk < prev {
                *mk = prev;
            }
            prev = *mk;
        }
        Ok(q)
    }
}

fn thomas<T: Real>(lower: &[T], diag: &[T], upper: &[T], rhs: &[T]) -> Vec<T> {
    let m = diag.len();
    let mut c = vec![T::zero(); m];
    let mut d = vec![T::zero(); m];
    for i in 0..m {
        let denom = if i == 0 { diag[0] } else { diag[i] - lower[i] * c[i - 1] };
        c[i] = upper[i] / denom;
        d[i] = if i == 0 { rhs[0] / denom } else { (rhs[i] - lower[i] * d[i - 1]) / denom };
    }
    let mut x = vec![T::zero(); m];
    for i in (0..m).rev() {
        x[i] = if i + 1 == m { d[i] } else { d[i] - c[i] * x[i + 1] };
    }
    x
}

/// Time-step control: `dt = min(dt_max, kappa / max u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig<T> {
    pub kappa: T,
    pub dt_max: T,
}

impl<T: Real> Default for OracleConfig<T> {
    fn default() -> Self {
        Self { kappa: T::lit(0.005), dt_max: T::lit(1e-3) }
    }
}

impl<T: Real> OracleConfig<T> {
    pub fn dt(&self, p: &MassProfile<T>) -> T {
        self.dt_for(p.max_density())
    }

    fn dt_for(&self, umax: T) -> T {
        if umax > T::zero() {
            self.dt_max.min(self.kappa / umax)
        } else {
            self.dt_max
        }
    }
}

/// Steps until a stop rule fires; `observer` sees every new profile.
pub fn run_oracle<T, F>(mut p: MassProfile<T>, cfg: &OracleConfig<T>, stop: &StopRule<T>, mut observer: F) -> Result<(MassProfile<T>, StopReason)>
where
    T: Real,
    F: FnMut(&MassProfile<T>) -> Result<()>,
{
    if !(cfg.kappa > T::zero() && cfg.dt_max > T::zero()) {
        return Err(Error::InvalidArgument("oracle kappa and dt_max must be positive".into()));
    }
    let mut stepper = OracleStepper::new(p.grid());
    loop {
        let umax = p.max_density();
        if let Some(reason) = stop.check(p.t, p.step_index, umax) {
            return Ok((p, reason));
        }
        let mut dt = cfg.dt_for(umax);
        let mut land = None;
        if let Some(t_end) = stop.t_end {
            if p.t + dt >= t_end {
                dt = t_end - p.t;
                land = Some(t_end);
            }
        }
        p = stepper.step(&p, dt)?;
        if let Some(t_end) = land {
            p.t = t_end;
        }
        observer(&p)?;
    }
}
