//! Cluster mean-field closure of the single-cluster generator.
//!
//! Each boundary coupling carries probe operators on neighboring clusters.
//! The closure evaluates their expectations (on the cluster itself under
//! translational invariance, or on the actual neighbors in the
//! inhomogeneous lattice) and turns them into Hamiltonian fields and jump
//! rates.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as C64;

use crate::density::DensityMatrix;
use crate::error::{Error, Result};
use crate::integrator::{evolve_sampled, evolve_to_steady, BlockLayout, IntegratorOptions, SteadyOptions};
use crate::lindblad::Generator;
use crate::operators::{ClusterOperatorSet, CouplingKind, Offset};
use crate::sparse::SparseMatrix;

/// Tolerance below zero tolerated on a rate-probe expectation.
pub const RATE_TOLERANCE: f64 = 1e-9;

/// Looser tolerance for intermediate integrator stages, whose populations
/// may undershoot zero by the local truncation error.
pub const STAGE_RATE_TOLERANCE: f64 = 1e-6;

/// How off-cluster projector expectations enter dissipative rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Prescription {
    /// Partial trace of the cross-boundary dissipator: rate `γ·Π⟨P⟩`.
    #[default]
    Trace,
    /// Squared expectations: rate `γ·Π|⟨P⟩|²`.
    Factorized,
}

impl fmt::Display for Prescription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Prescription::Trace => "trace",
            Prescription::Factorized => "factorized",
        })
    }
}

impl FromStr for Prescription {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "trace" => Ok(Prescription::Trace),
            "factorized" => Ok(Prescription::Factorized),
            other => Err(format!("unknown prescription '{other}' (expected trace|factorized)")),
        }
    }
}

/// A probe operator shared by one or more couplings.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSlot {
    pub offset: Offset,
    pub op: SparseMatrix,
}

/// Closure scalars of one generator snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldClosure {
    /// Expectation of every distinct probe.
    pub probe_values: Vec<f64>,
    /// `(coupling index, effective amplitude or rate)`.
    pub scalars: Vec<(usize, f64)>,
}

/// Operator set compiled for repeated closure evaluation.
#[derive(Debug, Clone)]
pub struct CmfModel {
    ops: ClusterOperatorSet,
    pub prescription: Prescription,
    probes: Vec<ProbeSlot>,
    coupling_probes: Vec<Vec<usize>>,
    flow: CompiledFlow,
}

/// Effective non-Hermitian Hamiltonian `K = H − (i/2)·Σ rate·L†L` on a
/// fixed sparsity pattern, plus every `LρL†` term flattened into one table
/// of `(out, in)` index pairs with per-channel weights.
#[derive(Debug, Clone)]
struct CompiledFlow {
    pattern: SparseMatrix,
    /// Values of the closure-independent part of `K`.
    base: Vec<C64>,
    /// Per coupling: `(value index, value per unit scalar)`.
    scatter: Vec<Vec<(usize, C64)>>,
    /// `(out, in)` flat indices of the sandwich terms, sorted.
    pairs: Vec<(usize, usize)>,
    /// Sandwich coefficients from the fixed on-cluster jumps.
    pair_base: Vec<C64>,
    /// Per coupling: `(pair index, weight per unit rate)`.
    pair_scatter: Vec<Vec<(usize, C64)>>,
}

fn sandwich_entries(op: &SparseMatrix) -> impl Iterator<Item = ((usize, usize), C64)> + '_ {
    let d = op.dim();
    op.triplets().flat_map(move |(ra, ca, va)| {
        op.triplets()
            .map(move |(rb, cb, vb)| ((ra * d + rb, ca * d + cb), va * vb.conj()))
    })
}

impl CompiledFlow {
    fn new(ops: &ClusterOperatorSet) -> Self {
        let d = ops.dim;
        let half = C64::new(0.0, -0.5);
        let mut entries: Vec<(usize, usize, C64)> = (0..d).map(|i| (i, i, C64::new(1.0, 0.0))).collect();
        entries.extend(
            ops.hamiltonian_on
                .triplets()
                .map(|(r, c, _)| (r, c, C64::new(1.0, 0.0))),
        );
        for c in &ops.boundary {
            if c.kind == CouplingKind::HamiltonianField {
                entries.extend(c.on.op.triplets().map(|(r, c, _)| (r, c, C64::new(1.0, 0.0))));
            }
        }
        let pattern = SparseMatrix::from_triplets(d, entries);
        let at = |r: usize, c: usize| pattern.entry_index(r, c).expect("entry in pattern");
        let mut base = vec![C64::default(); pattern.nnz()];
        for (r, c, v) in ops.hamiltonian_on.triplets() {
            base[at(r, c)] += v;
        }
        for j in &ops.jumps_on {
            for (r, c, v) in j.jump.op_dag_op.triplets() {
                base[at(r, c)] += half * j.rate * v;
            }
        }
        let scatter = ops
            .boundary
            .iter()
            .map(|c| match c.kind {
                CouplingKind::HamiltonianField => c.on.op.triplets().map(|(r, col, v)| (at(r, col), v)).collect(),
                _ => {
                    c.on.op_dag_op
                        .triplets()
                        .map(|(r, col, v)| (at(r, col), half * v))
                        .collect()
                }
            })
            .collect();

        let dissipative = || {
            ops.boundary
                .iter()
                .filter(|c| c.kind != CouplingKind::HamiltonianField)
                .map(|c| &c.on.op)
        };
        let mut index: BTreeMap<(usize, usize), usize> = ops
            .jumps_on
            .iter()
            .map(|j| &j.jump.op)
            .chain(dissipative())
            .flat_map(|op| sandwich_entries(op).map(|(key, _)| (key, 0)))
            .collect();
        for (i, slot) in index.values_mut().enumerate() {
            *slot = i;
        }
        let pairs: Vec<(usize, usize)> = index.keys().copied().collect();
        let mut pair_base = vec![C64::default(); pairs.len()];
        for j in &ops.jumps_on {
            for (key, w) in sandwich_entries(&j.jump.op) {
                pair_base[index[&key]] += j.rate * w;
            }
        }
        let pair_scatter = ops
            .boundary
            .iter()
            .map(|c| match c.kind {
                CouplingKind::HamiltonianField => Vec::new(),
                _ => sandwich_entries(&c.on.op).map(|(key, w)| (index[&key], w)).collect(),
            })
            .collect();
        Self {
            pattern,
            base,
            scatter,
            pairs,
            pair_base,
            pair_scatter,
        }
    }
}

/// Per-thread buffers for evaluating the closed flow.
#[derive(Debug, Clone)]
pub struct FlowScratch {
    k: SparseMatrix,
    scalars: Vec<f64>,
    values: Vec<f64>,
    kx: Vec<C64>,
    coef: Vec<C64>,
}

impl CmfModel {
    pub fn new(ops: ClusterOperatorSet, prescription: Prescription) -> Self {
        let mut probes: Vec<ProbeSlot> = Vec::new();
        let mut coupling_probes = Vec::with_capacity(ops.boundary.len());
        for c in &ops.boundary {
            let idx = c
                .probes
                .iter()
                .map(
                    |p| match probes.iter().position(|s| s.offset == p.offset && s.op == p.op) {
                        Some(i) => i,
                        None => {
                            probes.push(ProbeSlot {
                                offset: p.offset,
                                op: p.op.clone(),
                            });
                            probes.len() - 1
                        }
                    },
                )
                .collect();
            coupling_probes.push(idx);
        }
        let flow = CompiledFlow::new(&ops);
        Self {
            ops,
            prescription,
            probes,
            coupling_probes,
            flow,
        }
    }

    pub fn ops(&self) -> &ClusterOperatorSet {
        &self.ops
    }

    pub fn scratch(&self) -> FlowScratch {
        FlowScratch {
            k: self.flow.pattern.clone(),
            scalars: vec![0.0; self.ops.boundary.len()],
            values: vec![0.0; self.probes.len()],
            kx: vec![C64::default(); self.dim() * self.dim()],
            coef: vec![C64::default(); self.flow.pairs.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.ops.dim
    }

    pub fn ell(&self) -> usize {
        self.ops.ell
    }

    pub fn probes(&self) -> &[ProbeSlot] {
        &self.probes
    }

    /// Indices into [`CmfModel::probes`] used by coupling `i`.
    pub fn coupling_probes(&self, i: usize) -> &[usize] {
        &self.coupling_probes[i]
    }

    /// Expectation of every probe on one cluster state.
    pub fn probe_values_into(&self, rho: &[C64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.probes) {
            *o = p.op.trace_with(rho).re;
        }
    }

    pub fn probe_values(&self, rho: &[C64]) -> Vec<f64> {
        let mut v = vec![0.0; self.probes.len()];
        self.probe_values_into(rho, &mut v);
        v
    }

    /// Effective amplitude (Hamiltonian) or rate (dissipative) of coupling
    /// `i` given probe expectations.
    pub fn coupling_scalar(&self, i: usize, values: &[f64]) -> Result<f64> {
        self.coupling_scalar_within(i, values, RATE_TOLERANCE)
    }

    fn coupling_scalar_within(&self, i: usize, values: &[f64], tolerance: f64) -> Result<f64> {
        let c = &self.ops.boundary[i];
        let idx = &self.coupling_probes[i];
        match c.kind {
            CouplingKind::HamiltonianField => Ok(c.base * idx.iter().map(|&p| values[p]).product::<f64>()),
            CouplingKind::DissipativeRate | CouplingKind::DissipativeBackaction => {
                let mut prod = c.base;
                for &p in idx {
                    let v = values[p];
                    if v < -tolerance {
                        return Err(Error::NegativeRate {
                            coupling: i,
                            value: c.base * v,
                        });
                    }
                    let v = v.max(0.0);
                    prod *= match self.prescription {
                        Prescription::Trace => v,
                        Prescription::Factorized => v * v,
                    };
                }
                Ok(prod.max(0.0))
            }
        }
    }

    /// Derivative of coupling `i`'s scalar with respect to its `k`-th probe
    /// expectation, others held fixed.
    pub fn coupling_scalar_derivative(&self, i: usize, k: usize, values: &[f64]) -> f64 {
        let c = &self.ops.boundary[i];
        let idx = &self.coupling_probes[i];
        let others: f64 = idx
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .map(|(_, &p)| match (c.kind, self.prescription) {
                (CouplingKind::HamiltonianField, _) | (_, Prescription::Trace) => values[p],
                (_, Prescription::Factorized) => values[p] * values[p],
            })
            .product();
        let own = values[idx[k]];
        match (c.kind, self.prescription) {
            (CouplingKind::HamiltonianField, _) | (_, Prescription::Trace) => c.base * others,
            (_, Prescription::Factorized) => 2.0 * c.base * own * others,
        }
    }

    pub fn closure(&self, values: &[f64]) -> Result<MeanFieldClosure> {
        let scalars = (0..self.ops.boundary.len())
            .map(|i| Ok((i, self.coupling_scalar(i, values)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(MeanFieldClosure {
            probe_values: values.to_vec(),
            scalars,
        })
    }

    /// Frozen generator for given probe expectations.
    pub fn generator_from_values(&self, values: &[f64]) -> Result<Generator<'_>> {
        let mut g = Generator::new();
        g.add_hamiltonian(1.0, &self.ops.hamiltonian_on);
        for j in &self.ops.jumps_on {
            g.add_channel(j.rate, &j.jump);
        }
        for (i, c) in self.ops.boundary.iter().enumerate() {
            let s = self.coupling_scalar(i, values)?;
            match c.kind {
                CouplingKind::HamiltonianField => g.add_hamiltonian(s, &c.on.op),
                _ => g.add_channel(s, &c.on),
            }
        }
        Ok(g)
    }

    /// Generator closed on `state` under translational invariance.
    pub fn close_generator(&self, state: &DensityMatrix) -> Result<(Generator<'_>, MeanFieldClosure)> {
        if state.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: state.dim(),
            });
        }
        let values = self.probe_values(state.as_slice());
        Ok((self.generator_from_values(&values)?, self.closure(&values)?))
    }

    /// `out += L_CMF[values][x]` without materializing a generator. `x` must
    /// be Hermitian: the `x·K†` half is taken as the adjoint of `K·x`.
    pub fn apply_with_values(
        &self,
        values: &[f64],
        x: &[C64],
        out: &mut [C64],
        scratch: &mut FlowScratch,
    ) -> Result<()> {
        let flow = &self.flow;
        let kv = scratch.k.values_mut();
        kv.copy_from_slice(&flow.base);
        scratch.coef.copy_from_slice(&flow.pair_base);
        for (i, (scatter, pair_scatter)) in flow.scatter.iter().zip(&flow.pair_scatter).enumerate() {
            let s = self.coupling_scalar_within(i, values, STAGE_RATE_TOLERANCE)?;
            scratch.scalars[i] = s;
            if s != 0.0 {
                for &(idx, v) in scatter {
                    kv[idx] += s * v;
                }
                for &(idx, w) in pair_scatter {
                    scratch.coef[idx] += s * w;
                }
            }
        }

        let d = self.dim();
        let kx = &mut scratch.kx;
        kx.iter_mut().for_each(|v| *v = C64::default());
        scratch.k.acc_left(C64::new(1.0, 0.0), x, kx);
        for a in 0..d {
            for b in 0..d {
                let y = kx[a * d + b] - kx[b * d + a].conj();
                out[a * d + b] += C64::new(y.im, -y.re);
            }
        }
        for (&(o, i), &c) in flow.pairs.iter().zip(&scratch.coef) {
            out[o] += c * x[i];
        }
        Ok(())
    }

    /// Nonlinear translationally invariant flow `ρ ↦ L_CMF[ρ](ρ)`.
    pub fn ti_rhs_into(&self, x: &[C64], out: &mut [C64], scratch: &mut FlowScratch) -> Result<()> {
        let mut values = std::mem::take(&mut scratch.values);
        self.probe_values_into(x, &mut values);
        let r = self.apply_with_values(&values, x, out, scratch);
        scratch.values = values;
        r
    }

    /// Nonlinear flow applied to a state.
    pub fn ti_rhs(&self, state: &DensityMatrix) -> Result<DensityMatrix> {
        let d = self.dim();
        let mut out = vec![C64::default(); d * d];
        self.ti_rhs_into(state.as_slice(), &mut out, &mut self.scratch())?;
        DensityMatrix::from_vec(d, out)
    }
}

/// Outcome of a translationally invariant evolution.
#[derive(Debug, Clone)]
pub struct TiOutcome {
    pub state: DensityMatrix,
    pub converged: bool,
    pub time: f64,
    pub residual: f64,
}

/// Integrates the closed single-cluster equation until steady; the closure
/// is re-evaluated at every integrator stage.
pub fn ti_evolve(model: &CmfModel, initial: &DensityMatrix, opts: &SteadyOptions) -> Result<TiOutcome> {
    let d = model.dim();
    if initial.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: initial.dim(),
        });
    }
    let mut scratch = model.scratch();
    let f = |_: f64, y: &[C64], out: &mut [C64]| model.ti_rhs_into(y, out, &mut scratch);
    let out = evolve_to_steady(initial.as_slice().to_vec(), BlockLayout::single(d), f, opts, |_, _| {})?;
    Ok(TiOutcome {
        state: DensityMatrix::from_vec(d, out.state)?,
        converged: out.converged,
        time: out.time,
        residual: out.residual,
    })
}

/// States of the translationally invariant flow at the given times.
pub fn ti_trajectory(
    model: &CmfModel,
    initial: &DensityMatrix,
    samples: &[f64],
    opts: IntegratorOptions,
) -> Result<Vec<(f64, DensityMatrix)>> {
    let d = model.dim();
    let mut scratch = model.scratch();
    let f = |_: f64, y: &[C64], out: &mut [C64]| model.ti_rhs_into(y, out, &mut scratch);
    let mut traj = Vec::with_capacity(samples.len());
    evolve_sampled(
        initial.as_slice().to_vec(),
        BlockLayout::single(d),
        f,
        opts,
        samples,
        |t, y| {
            traj.push((t, DensityMatrix::from_vec(d, y.to_vec()).expect("block size")));
        },
    )?;
    Ok(traj)
}

/// `Tr[ρ Σ_j σᶻ_j] / ℓ²`.
pub fn magnetization(state: &DensityMatrix) -> f64 {
    state.magnetization()
}
