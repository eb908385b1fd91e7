//! Closed-form Dirichlet solve for radially symmetric densities.
//!
//! With `M(r)` the mass inside radius `r`, the radial reduction gives
//! `v_r = -M/(2πr)` and `v(R) = 0`. Inside a shell the density is constant,
//! so `M(r) = M_i + πu_i(r² - a²)` and the integral of `M/(2πr)` is exact.

use crate::scalar::Real;

/// Per-grid logarithms `ln(b/c)` and `ln(b/a)` of every shell `[a, b]` with
/// centre `c`. Repeated solves on one grid reuse them.
#[derive(Debug, Clone)]
pub(crate) struct RadialKernel<T> {
    h: T,
    ln_outer_center: Vec<T>,
    ln_outer_inner: Vec<T>,
}

impl<T: Real> RadialKernel<T> {
    pub(crate) fn new(n: usize, h: T) -> Self {
        let mut ln_outer_center = Vec::with_capacity(n);
        let mut ln_outer_inner = Vec::with_capacity(n);
        for i in 0..n {
            let a = T::from_usize_lossy(i) * h;
            let b = a + h;
            let c = a + h * T::lit(0.5);
            ln_outer_center.push((b / c).ln());
            // The innermost shell has no inner mass term, so its value is unused.
            ln_outer_inner.push(if i == 0 { T::zero() } else { (b / a).ln() });
        }
        Self { h, ln_outer_center, ln_outer_inner }
    }

    pub(crate) fn len(&self) -> usize {
        self.ln_outer_center.len()
    }

    /// Potential at shell centres for shell densities `u`.
    pub(crate) fn potential(&self, u: &[T], out: &mut Vec<T>) {
        let n = u.len();
        debug_assert_eq!(n, self.len());
        let h = self.h;
        out.clear();
        out.resize(n, T::zero());
        let mut inner = T::zero();
        let mut inner_mass = Vec::with_capacity(n);
        for (i, &ui) in u.iter().enumerate() {
            inner_mass.push(inner);
            let a = T::from_usize_lossy(i) * h;
            let b = a + h;
            inner = inner + ui * T::PI() * (b * b - a * a);
        }
        let mut v_outer = T::zero();
        for i in (0..n).rev() {
            let a = T::from_usize_lossy(i) * h;
            let b = a + h;
            let c = a + h * T::lit(0.5);
            let offset = (inner_mass[i] - T::PI() * u[i] * a * a) / T::TAU();
            out[i] = v_outer + offset * self.ln_outer_center[i] + u[i] * (b * b - c * c) / T::lit(4.0);
            v_outer = v_outer + offset * self.ln_outer_inner[i] + u[i] * (b * b - a * a) / T::lit(4.0);
        }
    }
}

/// Potential at shell centres for shell densities `u` (shell width `h`).
pub(crate) fn radial_potential<T: Real>(u: &[T], h: T) -> Vec<T> {
    let mut out = Vec::new();
    RadialKernel::new(u.len(), h).potential(u, &mut out);
    out
}
