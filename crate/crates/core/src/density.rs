//! Cluster density matrices.

use faer::Mat;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::operators::{hilbert_dim, SiteIndex};
use crate::sparse::SparseMatrix;

/// Row-major `dim × dim` density matrix of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl DensityMatrix {
    pub fn from_vec(dim: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    /// Pure basis state `|index⟩⟨index|`.
    pub fn basis_state(dim: usize, index: usize) -> Self {
        let mut data = vec![C64::default(); dim * dim];
        data[index * dim + index] = C64::new(1.0, 0.0);
        Self { dim, data }
    }

    /// All spins up (`true`) or all down.
    pub fn polarized(ell: usize, up: bool) -> Self {
        let dim = hilbert_dim(ell);
        Self::basis_state(dim, if up { dim - 1 } else { 0 })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let mut data = vec![C64::default(); dim * dim];
        for i in 0..dim {
            data[i * dim + i] = C64::new(1.0 / dim as f64, 0.0);
        }
        Self { dim, data }
    }

    /// Product of single-site pure states, `up(site)` selecting the spin.
    pub fn product_basis<F: Fn(SiteIndex) -> bool>(ell: usize, up: F) -> Self {
        let index = (0..ell * ell)
            .filter(|&i| up(SiteIndex::from_linear(i, ell)))
            .fold(0usize, |s, i| s | 1 << i);
        Self::basis_state(hilbert_dim(ell), index)
    }

    /// Product state with per-site up-populations (diagonal in the σᶻ basis).
    pub fn product_diagonal(ell: usize, p_up: &[f64]) -> Self {
        let dim = hilbert_dim(ell);
        let mut data = vec![C64::default(); dim * dim];
        for s in 0..dim {
            let p: f64 = (0..ell * ell)
                .map(|i| if s >> i & 1 == 1 { p_up[i] } else { 1.0 - p_up[i] })
                .product();
            data[s * dim + s] = C64::new(p, 0.0);
        }
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.dim + c]
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius(&self.data)
    }

    /// Largest `|ρ − ρ†|` entry.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim;
        let mut m: f64 = 0.0;
        for i in 0..d {
            for j in i..d {
                m = m.max((self.data[i * d + j] - self.data[j * d + i].conj()).norm());
            }
        }
        m
    }

    pub fn symmetrize(&mut self) {
        symmetrize_block(&mut self.data, self.dim);
    }

    pub fn expectation(&self, op: &SparseMatrix) -> C64 {
        op.trace_with(&self.data)
    }

    pub fn purity(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    /// `⟨σᶻ_i⟩` for linear site index `i`.
    pub fn site_sz(&self, site: usize) -> f64 {
        (0..self.dim)
            .map(|s| {
                let p = self.data[s * self.dim + s].re;
                if s >> site & 1 == 1 {
                    p
                } else {
                    -p
                }
            })
            .sum()
    }

    /// `Tr[ρ Σ_j σᶻ_j] / ℓ²`.
    pub fn magnetization(&self) -> f64 {
        let sites = self.dim.trailing_zeros() as usize;
        magnetization_of(&self.data, self.dim, sites)
    }

    fn hermitian_mat(&self) -> Mat<C64> {
        let d = self.dim;
        Mat::from_fn(d, d, |i, j| 0.5 * (self.data[i * d + j] + self.data[j * d + i].conj()))
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.hermitian_mat()
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .expect("hermitian eigensolve")
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Checks the trace, Hermiticity and positivity tolerances.
    pub fn validate(&self) -> Result<()> {
        let tr = self.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > 1e-9 {
            return Err(Error::InvalidParameter {
                name: "state",
                reason: format!("trace {tr} differs from 1"),
            });
        }
        let herm = self.hermiticity_error();
        if herm > 1e-10 {
            return Err(Error::InvalidParameter {
                name: "state",
                reason: format!("hermiticity error {herm:e}"),
            });
        }
        let min = self.min_eigenvalue();
        if min < -1e-8 {
            return Err(Error::InvalidParameter {
                name: "state",
                reason: format!("minimum eigenvalue {min:e}"),
            });
        }
        Ok(())
    }

    /// Uhlmann fidelity `(tr √(√ρ σ √ρ))²`.
    pub fn fidelity(&self, other: &DensityMatrix) -> f64 {
        let sqrt_rho = psd_sqrt(&self.hermitian_mat());
        let inner = &sqrt_rho * other.hermitian_mat() * &sqrt_rho;
        let inner = Mat::from_fn(self.dim, self.dim, |i, j| 0.5 * (inner[(i, j)] + inner[(j, i)].conj()));
        let ev = inner
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .expect("hermitian eigensolve");
        let s: f64 = ev.into_iter().map(|v| v.max(0.0).sqrt()).sum();
        s * s
    }
}

fn psd_sqrt(m: &Mat<C64>) -> Mat<C64> {
    let eig = m.self_adjoint_eigen(faer::Side::Lower).expect("hermitian eigensolve");
    let u = eig.U();
    let s = eig.S();
    let n = m.nrows();
    let scaled = Mat::from_fn(n, n, |i, j| u[(i, j)] * s[j].re.max(0.0).sqrt());
    scaled * u.adjoint()
}

pub(crate) fn frobenius(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub(crate) fn symmetrize_block(x: &mut [C64], d: usize) {
    for i in 0..d {
        x[i * d + i].im = 0.0;
        for j in i + 1..d {
            let a = 0.5 * (x[i * d + j] + x[j * d + i].conj());
            x[i * d + j] = a;
            x[j * d + i] = a.conj();
        }
    }
}

pub(crate) fn magnetization_of(x: &[C64], d: usize, sites: usize) -> f64 {
    let mut m = 0.0;
    for s in 0..d {
        let up = s.count_ones() as f64;
        m += x[s * d + s].re * (2.0 * up - sites as f64);
    }
    m / sites as f64
}
