use crate::error::{Error, Result};
use crate::grid::{total_mass, DomainKind, Field};
use crate::poisson::{green_energy, solve_radial_dirichlet, Model, Potential};
use crate::scalar::{ksum, Real};
use crate::stepper::SimState;

/// Densities below `U_FLOOR · max(u)` are excluded from the dissipation sum
/// and floored inside the logarithm.
pub const U_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRecord<T> {
    pub t: T,
    pub free_energy: T,
    pub dissipation: T,
    pub mass: T,
    /// Computed with the Neumann potential rather than the Dirichlet one.
    pub variant: bool,
}

pub fn free_energy<T: Real>(state: &SimState<T>) -> Result<EnergyRecord<T>> {
    energy_of(&state.field, &state.potential, state.t)
}

/// Radial density with its exact Dirichlet potential.
pub fn free_energy_radial<T: Real>(u: &Field<T>, t: T) -> Result<EnergyRecord<T>> {
    let v = solve_radial_dirichlet(u)?;
    energy_of(u, &v, t)
}

/// `F = Σ u(log u − 1)|cell| − ½ Σ u v |cell|` and `D = Σ u |∇(log u − v)|² |cell|`.
pub fn energy_of<T: Real>(u: &Field<T>, v: &Potential<T>, t: T) -> Result<EnergyRecord<T>> {
    let g = *u.grid();
    if v.grid != g {
        return Err(Error::GridMismatch("density and potential live on different grids".into()));
    }
    let entropy = ksum(u.values().iter().enumerate().map(|(k, &x)| {
        if x > T::zero() {
            x * (x.ln() - T::one()) * g.cell_area(k)
        } else {
            T::zero()
        }
    }));
    let green = green_energy(u, v, v.bc)?;
    let floor = T::lit(U_FLOOR) * u.max();
    let w: Vec<T> = u.values().iter().zip(&v.values).map(|(&x, &p)| x.max(floor).max(T::min_positive_value()).ln() - p).collect();
    let n = g.n();
    let h = g.h();
    let diff = |lo: T, hi: T, span: T| (hi - lo) / (span * h);
    let two = T::lit(2.0);
    let dissipation = match g.kind() {
        DomainKind::Square => {
            // One-sided at the walls, centred inside.
            let grad = |k: usize, c: usize, stride: usize| -> T {
                if c == 0 {
                    diff(w[k], w[k + stride], T::one())
                } else if c + 1 == n {
                    diff(w[k - stride], w[k], T::one())
                } else {
                    diff(w[k - stride], w[k + stride], two)
                }
            };
            let mut terms = Vec::with_capacity(g.len());
            for j in 0..n {
                for i in 0..n {
                    let k = j * n + i;
                    let x = u.values()[k];
                    if x > floor {
                        let gx = grad(k, i, 1);
                        let gy = grad(k, j, n);
                        terms.push(x * (gx * gx + gy * gy));
                    }
                }
            }
            ksum(terms) * h * h
        }
        DomainKind::RadialDisk => {
            let terms = (0..n).filter(|&i| u.values()[i] > floor).map(|i| {
                let gr = if i == 0 {
                    // Symmetric ghost at the origin.
                    diff(w[0], w[1], two)
                } else if i + 1 == n {
                    diff(w[n - 2], w[n - 1], T::one())
                } else {
                    diff(w[i - 1], w[i + 1], two)
                };
                u.values()[i] * gr * gr * g.cell_area(i)
            });
            ksum(terms)
        }
    };
    Ok(EnergyRecord {
        t,
        free_energy: entropy - green,
        dissipation,
        mass: total_mass(u),
        variant: v.bc == Model::Neumann,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendVerdict<T> {
    /// Indices `i` with `F_i > F_{i−1} + 1e-8 |F_{i−1}|`.
    pub violations: Vec<usize>,
    /// `max |(F_i − F_{i−1}) / (t_i − t_{i−1}) + (D_i + D_{i−1}) / 2|`.
    pub max_defect: T,
}

impl<T> TrendVerdict<T> {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const TREND_TOLERANCE: f64 = 1e-8;

pub fn energy_trend_check<T: Real>(records: &[EnergyRecord<T>]) -> Result<TrendVerdict<T>> {
    if records.len() < 2 {
        return Err(Error::InvalidArgument("trend check needs at least two records".into()));
    }
    let mut violations = Vec::new();
    let mut max_defect = T::zero();
    for (i, pair) in records.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        if b.free_energy > a.free_energy + T::lit(TREND_TOLERANCE) * a.free_energy.abs() {
            violations.push(i + 1);
        }
        let dt = b.t - a.t;
        if dt > T::zero() {
            let rate = (b.free_energy - a.free_energy) / dt;
            let defect = (rate + (a.dissipation + b.dissipation) / T::lit(2.0)).abs();
            max_defect = max_defect.max(defect);
        }
    }
    Ok(TrendVerdict { violations, max_defect })
}
