//! Lindblad generator of a single cluster: right-hand side, vectorized
//! superoperator and steady-state search at a frozen generator.

use std::io::Write;

use faer::Mat;
use num_complex::Complex64 as C64;

use crate::density::DensityMatrix;
use crate::error::{Error, Result};
use crate::integrator::{evolve_to_steady, BlockLayout, IntegratorOptions, Propagator, SteadyOptions};
use crate::operators::LocalOperator;
use crate::sparse::SparseMatrix;

/// Default cap on the superoperator dimension (`dim² ≤ 65 536`, i.e. `ℓ ≤ 2`).
pub const SUPEROPERATOR_CAP: usize = 65_536;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Frozen generator `−i[H,·] + Σ rate·D[L]` with `H = Σ coef·H_i`.
#[derive(Debug, Clone, Default)]
pub struct Generator<'a> {
    pub hamiltonian: Vec<(f64, &'a SparseMatrix)>,
    pub channels: Vec<(f64, &'a LocalOperator)>,
}

impl<'a> Generator<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dim(&self) -> Option<usize> {
        self.hamiltonian
            .first()
            .map(|h| h.1.dim())
            .or_else(|| self.channels.first().map(|c| c.1.op.dim()))
    }

    pub fn add_hamiltonian(&mut self, coef: f64, op: &'a SparseMatrix) {
        if coef != 0.0 && !op.is_zero() {
            self.hamiltonian.push((coef, op));
        }
    }

    pub fn add_channel(&mut self, rate: f64, op: &'a LocalOperator) {
        if rate != 0.0 {
            self.channels.push((rate, op));
        }
    }

    fn check_dims(&self, dim: usize) -> Result<()> {
        let bad = self
            .hamiltonian
            .iter()
            .map(|h| h.1.dim())
            .chain(self.channels.iter().map(|c| c.1.op.dim()))
            .find(|&d| d != dim);
        match bad {
            Some(got) => Err(Error::DimensionMismatch { expected: dim, got }),
            None => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(&(rate, _)) = self.channels.iter().find(|c| !(c.0 >= 0.0) || !c.0.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "rate",
                reason: format!("channel rate {rate} must be finite and nonnegative"),
            });
        }
        if let Some(d) = self.dim() {
            self.check_dims(d)?;
        }
        Ok(())
    }

    /// `out += L[x]` for a row-major `x`; `scratch` needs `dim` entries.
    /// Valid for any (not only Hermitian) `x`.
    pub fn apply_into(&self, x: &[C64], out: &mut [C64], scratch: &mut [C64]) {
        for &(coef, h) in &self.hamiltonian {
            h.acc_left(-I * coef, x, out);
            h.acc_right_adjoint(I * coef, x, out);
        }
        for &(rate, ch) in &self.channels {
            ch.op.acc_sandwich(rate, x, out, scratch);
            let half = C64::new(-0.5 * rate, 0.0);
            ch.op_dag_op.acc_left(half, x, out);
            ch.op_dag_op.acc_right_adjoint(half, x, out);
        }
    }
}

/// `dρ/dt = −i[H,ρ] + Σ rate·(LρL† − ½{L†L,ρ})`.
pub fn rhs(state: &DensityMatrix, generator: &Generator<'_>) -> Result<DensityMatrix> {
    let d = state.dim();
    generator.check_dims(d)?;
    let mut out = vec![C64::default(); d * d];
    let mut scratch = vec![C64::default(); d];
    generator.apply_into(state.as_slice(), &mut out, &mut scratch);
    DensityMatrix::from_vec(d, out)
}

/// Column-stacking vectorization of a row-major matrix.
pub fn vectorize(x: &[C64], d: usize) -> Vec<C64> {
    let mut v = vec![C64::default(); d * d];
    for i in 0..d {
        for j in 0..d {
            v[i + d * j] = x[i * d + j];
        }
    }
    v
}

pub fn unvectorize(v: &[C64], d: usize) -> Vec<C64> {
    let mut x = vec![C64::default(); d * d];
    for i in 0..d {
        for j in 0..d {
            x[i * d + j] = v[i + d * j];
        }
    }
    x
}

/// Dense superoperator `M` with `vec(L[ρ]) = M·vec(ρ)`, built column by
/// column from the action on matrix units.
pub fn superoperator_matrix(generator: &Generator<'_>, dim: usize, cap: usize) -> Result<Mat<C64>> {
    let n = dim * dim;
    if n > cap {
        return Err(Error::CapExceeded { requested: n, cap });
    }
    generator.check_dims(dim)?;
    let mut m = Mat::<C64>::zeros(n, n);
    let mut unit = vec![C64::default(); n];
    let mut out = vec![C64::default(); n];
    let mut scratch = vec![C64::default(); dim];
    for k in 0..dim {
        for l in 0..dim {
            unit[k * dim + l] = C64::new(1.0, 0.0);
            out.iter_mut().for_each(|v| *v = C64::default());
            generator.apply_into(&unit, &mut out, &mut scratch);
            unit[k * dim + l] = C64::default();
            let col = k + dim * l;
            for i in 0..dim {
                for j in 0..dim {
                    m[(i + dim * j, col)] = out[i * dim + j];
                }
            }
        }
    }
    Ok(m)
}

/// Result of a steady-state search.
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub state: DensityMatrix,
    pub converged: bool,
    pub time: f64,
    pub residual: f64,
}

/// Integrates a frozen generator until `‖L[ρ]‖_F < tol` holds for the
/// configured window of consecutive checks.
pub fn find_steady_state(
    initial: &DensityMatrix,
    generator: &Generator<'_>,
    opts: &SteadyOptions,
) -> Result<SteadyState> {
    let d = initial.dim();
    generator.validate()?;
    generator.check_dims(d)?;
    let mut scratch = vec![C64::default(); d];
    let f = |_: f64, y: &[C64], out: &mut [C64]| {
        generator.apply_into(y, out, &mut scratch);
        Ok(())
    };
    let out = evolve_to_steady(initial.as_slice().to_vec(), BlockLayout::single(d), f, opts, |_, _| {})?;
    Ok(SteadyState {
        state: DensityMatrix::from_vec(d, out.state)?,
        converged: out.converged,
        time: out.time,
        residual: out.residual,
    })
}

/// One adaptive step of a frozen generator starting from `dt`; returns the
/// new state and the step actually taken.
pub fn step(
    state: &DensityMatrix,
    generator: &Generator<'_>,
    dt: f64,
    opts: IntegratorOptions,
) -> Result<(DensityMatrix, f64)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("must be positive, got {dt}"),
        });
    }
    let d = state.dim();
    generator.check_dims(d)?;
    let mut scratch = vec![C64::default(); d];
    let mut f = |_: f64, y: &[C64], out: &mut [C64]| {
        generator.apply_into(y, out, &mut scratch);
        Ok(())
    };
    let opts = IntegratorOptions {
        dt_init: dt,
        dt_max: dt,
        ..opts
    };
    let mut prop = Propagator::new(state.as_slice().to_vec(), BlockLayout::single(d), opts)?;
    let taken = prop.advance(&mut f, f64::INFINITY)?;
    Ok((DensityMatrix::from_vec(d, prop.state().to_vec())?, taken))
}

/// One row of a trajectory dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub mz: f64,
    pub purity: f64,
    pub trace_error: f64,
}

impl TrajectoryRow {
    pub fn of(t: f64, state: &DensityMatrix) -> Self {
        Self {
            t,
            mz: state.magnetization(),
            purity: state.purity(),
            trace_error: (state.trace() - C64::new(1.0, 0.0)).norm(),
        }
    }
}

/// Writes `t,m_z,purity,trace_error` rows with a header.
pub fn write_trajectory_csv<W: Write>(mut w: W, rows: &[TrajectoryRow]) -> std::io::Result<()> {
    writeln!(w, "t,m_z,purity,trace_error")?;
    for r in rows {
        writeln!(w, "{},{},{},{:e}", r.t, r.mz, r.purity, r.trace_error)?;
    }
    Ok(())
}
