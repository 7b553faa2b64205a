//! Linear stability of the translationally invariant steady state against
//! plane-wave fluctuations of the cluster states.
//!
//! With `ρ_n = ρ_ss + e^{ik·r_n} δρ_k`, the linearized flow is
//! `M_k = M_CMF + Σ_α e^{ik·d_α} |V_α⟩⟨w_α|`: the closed generator frozen at
//! the steady state plus one rank-1 term per (coupling, probe) pair.

use std::f64::consts::PI;
use std::io::Write;

use faer::Mat;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::cmf::CmfModel;
use crate::density::DensityMatrix;
use crate::error::{Error, Result};
use crate::lindblad::{superoperator_matrix, vectorize, Generator, SUPEROPERATOR_CAP};
use crate::operators::{CouplingKind, Offset};

/// Points per momentum axis.
pub const K_POINTS: usize = 65;

/// How a neighbor offset turns into a Bloch phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhaseConvention {
    /// `e^{i k·d}` with `d` the neighbor offset in cluster units.
    #[default]
    ClusterUnits,
    /// `e^{i k·ℓd}`, the offset measured in lattice sites.
    LatticeUnits,
}

/// One `e^{ik·d}·weight·|V⟩⟨w|` correction.
#[derive(Debug, Clone)]
pub struct RankOneTerm {
    pub coupling: usize,
    pub kind: CouplingKind,
    pub offset: Offset,
    /// Whether the coupling is a back-action dephasing term.
    pub backaction: bool,
    /// `∂(scalar)/∂(probe expectation)` at the steady state.
    pub weight: f64,
    /// Column-stacked derivative of the generator action on `ρ_ss`.
    pub v: Vec<C64>,
    /// Row with `w·vec(X) = tr(O X)`.
    pub w: Vec<C64>,
}

#[derive(Debug, Clone)]
pub struct BlochSystem {
    pub ell: usize,
    pub dim: usize,
    pub base: Mat<C64>,
    pub terms: Vec<RankOneTerm>,
    pub convention: PhaseConvention,
}

impl BlochSystem {
    /// Linearization of the closed flow of `model` around `rho_ss`.
    pub fn build(model: &CmfModel, rho_ss: &DensityMatrix) -> Result<Self> {
        let d = model.dim();
        if d * d > SUPEROPERATOR_CAP {
            return Err(Error::CapExceeded {
                requested: d * d,
                cap: SUPEROPERATOR_CAP,
            });
        }
        if rho_ss.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: rho_ss.dim(),
            });
        }
        let values = model.probe_values(rho_ss.as_slice());
        let base = superoperator_matrix(&model.generator_from_values(&values)?, d, SUPEROPERATOR_CAP)?;
        let mut terms = Vec::new();
        let mut scratch = vec![C64::default(); d];
        for (i, c) in model.ops().boundary.iter().enumerate() {
            let mut g = Generator::new();
            match c.kind {
                CouplingKind::HamiltonianField => g.add_hamiltonian(1.0, &c.on.op),
                _ => g.add_channel(1.0, &c.on),
            }
            let mut action = vec![C64::default(); d * d];
            g.apply_into(rho_ss.as_slice(), &mut action, &mut scratch);
            let v = vectorize(&action, d);
            for (k, &p) in model.coupling_probes(i).iter().enumerate() {
                let slot = &model.probes()[p];
                terms.push(RankOneTerm {
                    coupling: i,
                    kind: c.kind,
                    offset: slot.offset,
                    backaction: c.kind == CouplingKind::DissipativeBackaction,
                    weight: model.coupling_scalar_derivative(i, k, &values),
                    v: v.clone(),
                    w: trace_row(&slot.op.to_dense(), d),
                });
            }
        }
        Ok(Self {
            ell: model.ell(),
            dim: d,
            base,
            terms,
            convention: PhaseConvention::default(),
        })
    }

    pub fn with_convention(mut self, convention: PhaseConvention) -> Self {
        self.convention = convention;
        self
    }

    /// Copy without the back-action rank-1 terms.
    pub fn without_backaction(&self) -> Self {
        Self {
            terms: self.terms.iter().filter(|t| !t.backaction).cloned().collect(),
            ..self.clone()
        }
    }

    fn phase(&self, k: (f64, f64), d: Offset) -> C64 {
        let scale = match self.convention {
            PhaseConvention::ClusterUnits => 1.0,
            PhaseConvention::LatticeUnits => self.ell as f64,
        };
        C64::from_polar(1.0, scale * (k.0 * d.0 as f64 + k.1 * d.1 as f64))
    }

    /// `M_k` as a dense `dim² × dim²` matrix.
    pub fn matrix(&self, k: (f64, f64)) -> Mat<C64> {
        let mut m = self.base.clone();
        let n = self.dim * self.dim;
        for t in &self.terms {
            if t.weight == 0.0 {
                continue;
            }
            let f = self.phase(k, t.offset) * t.weight;
            for (col, &wc) in t.w.iter().enumerate() {
                if wc == C64::default() {
                    continue;
                }
                let fw = f * wc;
                for row in 0..n {
                    let v = t.v[row];
                    if v != C64::default() {
                        m[(row, col)] += v * fw;
                    }
                }
            }
        }
        m
    }

    pub fn eigenvalues(&self, k: (f64, f64)) -> Vec<C64> {
        eigenvalues(&self.matrix(k))
    }

    /// Largest real part of the spectrum of `M_k`.
    pub fn mu(&self, k: (f64, f64)) -> f64 {
        self.eigenvalues(k)
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `μ` on every point of `ks`, in order.
    pub fn mu_grid(&self, ks: &[(f64, f64)]) -> Vec<f64> {
        ks.par_iter().map(|&k| self.mu(k)).collect()
    }
}

/// `w` with `w·vec(X) = tr(O X)` under column stacking.
fn trace_row(o: &[C64], d: usize) -> Vec<C64> {
    let mut w = vec![C64::default(); d * d];
    for i in 0..d {
        for j in 0..d {
            w[i + d * j] = o[j * d + i];
        }
    }
    w
}

pub fn eigenvalues(m: &Mat<C64>) -> Vec<C64> {
    m.eigenvalues().expect("dense eigensolve")
}

/// `K_POINTS` momenta in `(−π/ℓ, π/ℓ)`, endpoints excluded.
pub fn k_axis(ell: usize) -> Vec<f64> {
    k_axis_with(ell, K_POINTS)
}

/// `points` evenly spaced momenta in `(−π/ℓ, π/ℓ)`, endpoints excluded.
pub fn k_axis_with(ell: usize, points: usize) -> Vec<f64> {
    let half = PI / ell as f64;
    let step = 2.0 * half / (points + 1) as f64;
    (1..=points).map(|i| -half + i as f64 * step).collect()
}

/// Whether the spectrum of `m_minus` is the complex conjugate of that of
/// `m_plus`, matched greedily within `tol`.
pub fn spectrum_symmetry_check(m_plus: &Mat<C64>, m_minus: &Mat<C64>, tol: f64) -> bool {
    let a = eigenvalues(m_plus);
    let mut b: Vec<Option<C64>> = eigenvalues(m_minus).into_iter().map(Some).collect();
    if a.len() != b.len() {
        return false;
    }
    // Eigenvalues of a defective or nearly degenerate matrix are only
    // accurate to about sqrt(eps); scale the tolerance with the magnitude.
    for z in a {
        let target = z.conj();
        let best = b
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, (v - target).norm())))
            .min_by(|x, y| x.1.total_cmp(&y.1));
        match best {
            Some((i, dist)) if dist <= tol * (1.0 + z.norm()) => b[i] = None,
            _ => return false,
        }
    }
    true
}

/// Writes `kx,ky,mu,prescription` rows.
pub fn write_mu_csv<W: Write>(mut w: W, ks: &[(f64, f64)], mu: &[f64], prescription: &str) -> std::io::Result<()> {
    writeln!(w, "kx,ky,mu,prescription")?;
    for (k, m) in ks.iter().zip(mu) {
        writeln!(w, "{},{},{},{prescription}", k.0, k.1, m)?;
    }
    Ok(())
}
