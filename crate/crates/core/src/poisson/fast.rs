//! Fast diagonalisation of the cell-centred 5-point Laplacian.
//!
//! With ghost cells mirrored oddly (Dirichlet) or evenly (Neumann) the 1D
//! second-difference matrix is diagonalised by the DST-II / DCT-II bases, so
//! the 2D operator is inverted by four dense `n × n` products.

use rayon::prelude::*;

use super::Model;
use crate::scalar::Real;

/// Exact inverse of the discrete operator, used as the CG preconditioner.
#[derive(Debug, Clone)]
pub(crate) struct FastDiagonalization<T> {
    n: usize,
    /// Row `k` holds the normalised mode `k`.
    basis: Vec<T>,
    basis_t: Vec<T>,
    eig: Vec<T>,
}

impl<T: Real> FastDiagonalization<T> {
    pub(crate) fn new(n: usize, h: T, model: Model) -> Self {
        let nt = T::from_usize_lossy(n);
        let mut basis = vec![T::zero(); n * n];
        let mut eig = vec![T::zero(); n];
        for k in 0..n {
            let wave = match model {
                Model::Dirichlet => T::from_usize_lossy(k + 1),
                Model::Neumann => T::from_usize_lossy(k),
            };
            let s = (T::PI() * wave / (T::lit(2.0) * nt)).sin();
            eig[k] = T::lit(4.0) * s * s / (h * h);
            let row = &mut basis[k * n..(k + 1) * n];
            for (i, slot) in row.iter_mut().enumerate() {
                let arg = T::PI() * wave * (T::from_usize_lossy(i) + T::lit(0.5)) / nt;
                *slot = match model {
                    Model::Dirichlet => arg.sin(),
                    Model::Neumann => arg.cos(),
                };
            }
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            row.iter_mut().for_each(|v| *v = *v / norm);
        }
        let mut basis_t = vec![T::zero(); n * n];
        for k in 0..n {
            for i in 0..n {
                basis_t[i * n + k] = basis[k * n + i];
            }
        }
        Self { n, basis, basis_t, eig }
    }

    /// Solves `A x = r` on the complement of the kernel.
    pub(crate) fn solve(&self, r: &[T], out: &mut [T]) {
        let n = self.n;
        let mut t1 = vec![T::zero(); n * n];
        let mut coef = vec![T::zero(); n * n];
        // Rows of r are y-lines: coef = P · r · Pᵀ.
        matmul(r, &self.basis_t, &mut t1, n);
        matmul(&self.basis, &t1, &mut coef, n);
        for l in 0..n {
            for k in 0..n {
                let lam = self.eig[l] + self.eig[k];
                let c = &mut coef[l * n + k];
                *c = if lam > T::zero() { *c / lam } else { T::zero() };
            }
        }
        matmul(&coef, &self.basis, &mut t1, n);
        matmul(&self.basis_t, &t1, out, n);
    }
}

/// `out = a · b` for row-major square matrices.
fn matmul<T: Real>(a: &[T], b: &[T], out: &mut [T], n: usize) {
    let row = |(i, orow): (usize, &mut [T])| {
        orow.iter_mut().for_each(|v| *v = T::zero());
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == T::zero() {
                continue;
            }
            let brow = &b[k * n..(k + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aik * bv;
            }
        }
    };
    if n >= 128 {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
}
