//! Elliptic part: `-Δv = u` with `v = 0` on the boundary, the mean-corrected
//! Neumann variant, and the closed-form radial solve.
//!
//! The square solves use the cell-centred 5-point Laplacian with ghost cells
//! (odd reflection for Dirichlet so the face value is zero, even reflection
//! for Neumann). The resulting matrix is symmetric positive (semi)definite and
//! is solved by preconditioned conjugate gradients; the default
//! preconditioner is the exact fast-diagonalisation inverse of the same
//! operator.

mod fast;
mod radial;

pub(crate) use radial::RadialKernel;

use crate::error::{Error, Result};
use crate::grid::{DomainKind, Field, GridSpec};
use crate::scalar::{ksum, Real};

use fast::FastDiagonalization;

/// Boundary condition of the Poisson part, which also selects the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Model {
    Dirichlet,
    Neumann,
}

impl Model {
    pub fn as_str(self) -> &'static str {
        match self {
            Model::Dirichlet => "dirichlet",
            Model::Neumann => "neumann",
        }
    }
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dirichlet" => Ok(Model::Dirichlet),
            "neumann" => Ok(Model::Neumann),
            other => Err(Error::InvalidArgument(format!("unknown model {other:?}"))),
        }
    }
}

/// Default relative residual tolerance of the elliptic solves.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

/// Solution of the elliptic part on the same grid as its density.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential<T> {
    pub grid: GridSpec<T>,
    pub values: Vec<T>,
    pub bc: Model,
    /// Relative residual `‖b - Av‖ / ‖b‖` of the final iterate.
    pub residual_norm: T,
    pub iterations: usize,
}

impl<T: Real> Potential<T> {
    pub fn zeros(grid: GridSpec<T>, bc: Model) -> Self {
        Self { grid, values: vec![T::zero(); grid.len()], bc, residual_norm: T::zero(), iterations: 0 }
    }

    /// Area-weighted integral of the potential.
    pub fn integral(&self) -> T {
        ksum(self.values.iter().enumerate().map(|(i, &v)| v * self.grid.cell_area(i)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    None,
    FastDiagonalization,
}

/// Reusable square-grid solver; caches the diagonalising bases.
#[derive(Debug, Clone)]
pub struct PoissonSolver<T> {
    grid: GridSpec<T>,
    tol: T,
    max_iter: usize,
    preconditioner: Preconditioner,
    dirichlet: Option<FastDiagonalization<T>>,
    neumann: Option<FastDiagonalization<T>>,
}

impl<T: Real> PoissonSolver<T> {
    pub fn new(grid: GridSpec<T>) -> Result<Self> {
        if grid.kind() != DomainKind::Square {
            return Err(Error::InvalidGrid("the iterative solver works on square grids".into()));
        }
        Ok(Self {
            grid,
            tol: T::lit(DEFAULT_TOLERANCE),
            max_iter: 10 * grid.n() * grid.n(),
            preconditioner: Preconditioner::FastDiagonalization,
            dirichlet: None,
            neumann: None,
        })
    }

    pub fn with_tolerance(mut self, tol: T) -> Result<Self> {
        if !(tol > T::zero()) {
            return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
        }
        self.tol = tol;
        Ok(self)
    }

    pub fn with_preconditioner(mut self, p: Preconditioner) -> Self {
        self.preconditioner = p;
        self
    }

    pub fn with_max_iterations(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }

    pub fn tolerance(&self) -> T {
        self.tol
    }

    fn fast(&mut self, model: Model) -> &FastDiagonalization<T> {
        let (n, h) = (self.grid.n(), self.grid.h());
        let slot = match model {
            Model::Dirichlet => &mut self.dirichlet,
            Model::Neumann => &mut self.neumann,
        };
        slot.get_or_insert_with(|| FastDiagonalization::new(n, h, model))
    }

    /// Solves the elliptic part of `model` for density `u`.
    pub fn solve(&mut self, u: &Field<T>, model: Model) -> Result<Potential<T>> {
        if *u.grid() != self.grid {
            return Err(Error::GridMismatch("density grid differs from solver grid".into()));
        }
        let mut rhs: Vec<T> = u.values().to_vec();
        if model == Model::Neumann {
            project_mean_zero(&mut rhs);
        }
        self.solve_rhs(&rhs, model)
    }

    /// Solves `A v = rhs` for the discrete operator of `model`.
    pub fn solve_rhs(&mut self, rhs: &[T], model: Model) -> Result<Potential<T>> {
        let grid = self.grid;
        let (n, h) = (grid.n(), grid.h());
        let size = n * n;
        let tol = self.tol;
        let max_iter = self.max_iter;
        let precond = self.preconditioner;
        let mut b = rhs.to_vec();
        if model == Model::Neumann {
            project_mean_zero(&mut b);
        }
        let b_norm = norm(&b);
        let mut x = vec![T::zero(); size];
        if b_norm == T::zero() {
            return Ok(Potential { grid, values: x, bc: model, residual_norm: T::zero(), iterations: 0 });
        }
        let fast = match precond {
            Preconditioner::FastDiagonalization => Some(self.fast(model).clone()),
            Preconditioner::None => None,
        };
        let apply_m = |r: &[T], z: &mut [T]| match &fast {
            Some(f) => f.solve(r, z),
            None => z.copy_from_slice(r),
        };

        let mut r = b.clone();
        let mut z = vec![T::zero(); size];
        apply_m(&r, &mut z);
        if model == Model::Neumann {
            project_mean_zero(&mut z);
        }
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![T::zero(); size];
        let mut iterations = 0;
        let mut rel = norm(&r) / b_norm;
        while iterations < max_iter && rel > tol {
            apply_operator(model, n, h, &p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > T::zero()) {
                break;
            }
            let alpha = rz / pap;
            for i in 0..size {
                x[i] = x[i] + alpha * p[i];
                r[i] = r[i] - alpha * ap[i];
            }
            if model == Model::Neumann {
                project_mean_zero(&mut x);
                project_mean_zero(&mut r);
            }
            iterations += 1;
            rel = norm(&r) / b_norm;
            if rel <= tol {
                break;
            }
            apply_m(&r, &mut z);
            if model == Model::Neumann {
                project_mean_zero(&mut z);
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..size {
                p[i] = z[i] + beta * p[i];
            }
        }
        // Report the true residual rather than the recursively updated one.
        apply_operator(model, n, h, &x, &mut ap);
        let true_res = norm(&b.iter().zip(&ap).map(|(&bi, &ai)| bi - ai).collect::<Vec<_>>()) / b_norm;
        let residual = true_res.max(T::zero());
        if rel > tol && residual > tol {
            return Err(Error::NoConvergence { iterations, residual: residual.as_f64() });
        }
        Ok(Potential { grid, values: x, bc: model, residual_norm: residual, iterations })
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

fn project_mean_zero<T: Real>(v: &mut [T]) {
    let mean = ksum(v.iter().copied()) / T::from_usize_lossy(v.len());
    v.iter_mut().for_each(|x| *x = *x - mean);
}

/// `out = -Δ_h v` with ghost-cell boundary handling.
pub(crate) fn apply_operator<T: Real>(model: Model, n: usize, h: T, v: &[T], out: &mut [T]) {
    let inv_h2 = T::one() / (h * h);
    let edge = |c: T| match model {
        Model::Dirichlet => T::lit(2.0) * c,
        Model::Neumann => T::zero(),
    };
    for j in 0..n {
        for i in 0..n {
            let k = j * n + i;
            let c = v[k];
            let w = if i > 0 { c - v[k - 1] } else { edge(c) };
            let e = if i + 1 < n { c - v[k + 1] } else { edge(c) };
            let s = if j > 0 { c - v[k - n] } else { edge(c) };
            let nn = if j + 1 < n { c - v[k + n] } else { edge(c) };
            out[k] = (w + e + s + nn) * inv_h2;
        }
    }
}

/// Dirichlet solve `-Δv = u`, `v|∂Ω = 0` to relative residual `tol`.
pub fn solve_dirichlet<T: Real>(u: &Field<T>, tol: T) -> Result<Potential<T>> {
    match u.grid().kind() {
        DomainKind::Square => PoissonSolver::new(*u.grid())?.with_tolerance(tol)?.solve(u, Model::Dirichlet),
        DomainKind::RadialDisk => solve_radial_dirichlet(u),
    }
}

/// Neumann solve `-Δv = u - ū`, `∂v/∂ν = 0`, `∫v = 0`.
pub fn solve_neumann<T: Real>(u: &Field<T>, tol: T) -> Result<Potential<T>> {
    PoissonSolver::new(*u.grid())?.with_tolerance(tol)?.solve(u, Model::Neumann)
}

/// Exact Dirichlet solve for a radial density (`v(R) = 0`).
pub fn solve_radial_dirichlet<T: Real>(u: &Field<T>) -> Result<Potential<T>> {
    let grid = *u.grid();
    if grid.kind() != DomainKind::RadialDisk {
        return Err(Error::InvalidGrid("radial solve needs a radial-disk grid".into()));
    }
    let values = radial::radial_potential(u.values(), grid.h());
    Ok(Potential { grid, values, bc: Model::Dirichlet, residual_norm: T::zero(), iterations: 0 })
}


/// Green energy `½ Σ u v |cell|`.
///
/// `model` is the variant the caller simulates; the potential must come from
/// the same variant. Only the Dirichlet case is the free-energy term proper;
/// the Neumann value is the analogous quantity for the Neumann operator.
pub fn green_energy<T: Real>(u: &Field<T>, v: &Potential<T>, model: Model) -> Result<T> {
    if v.bc != model {
        return Err(Error::BoundaryMismatch { expected: model.to_string(), found: v.bc.to_string() });
    }
    if *u.grid() != v.grid {
        return Err(Error::GridMismatch("density and potential live on different grids".into()));
    }
    let g = u.grid();
    Ok(T::lit(0.5)
        * ksum(u.values().iter().zip(&v.values).enumerate().map(|(i, (&a, &b))| a * b * g.cell_area(i))))
}
