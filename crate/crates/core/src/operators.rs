//! Site, plaquette, jump and Hamiltonian operators of one `ℓ×ℓ` cluster.
//!
//! Basis convention: site `x + ℓ·y` is bit `x + ℓ·y` of the basis index and
//! spin-up is encoded as a set bit.
//!
//! Every term of the model is a product of single-site factors on a NEC
//! plaquette (vertex `j`, East `j+e_x`, North `j+e_y`) or on a PXP star.
//! Terms with full support inside the cluster become on-cluster operators;
//! terms straddling the cluster edge become [`BoundaryCoupling`]s whose
//! off-cluster factors are evaluated as expectations on neighboring clusters.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Neighbor cluster displacement in cluster units.
pub type Offset = (i32, i32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SiteIndex {
    pub x: usize,
    pub y: usize,
}

impl SiteIndex {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn linear(self, ell: usize) -> usize {
        self.x + ell * self.y
    }

    pub fn from_linear(i: usize, ell: usize) -> Self {
        Self { x: i % ell, y: i / ell }
    }
}

/// Splits a lattice position (relative to the cluster origin) into the
/// cluster offset and the site inside that cluster.
pub fn locate(ell: usize, x: i64, y: i64) -> (Offset, SiteIndex) {
    let l = ell as i64;
    let offset = (x.div_euclid(l) as i32, y.div_euclid(l) as i32);
    let site = SiteIndex::new(x.rem_euclid(l) as usize, y.rem_euclid(l) as usize);
    (offset, site)
}

pub fn hilbert_dim(ell: usize) -> usize {
    1usize << (ell * ell)
}

/// The four NEC channel rates, parameterized by noise amplitude `T` and
/// bias `h` at fixed base rate `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NecRates {
    pub gamma: f64,
    pub t: f64,
    pub h: f64,
    pub nu: f64,
    pub mu: f64,
    pub nu_bar: f64,
    pub mu_bar: f64,
}

impl NecRates {
    pub fn new(gamma: f64, t: f64, h: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: format!("must be positive and finite, got {gamma}"),
            });
        }
        if !t.is_finite() || !h.is_finite() {
            return Err(Error::InvalidParameter {
                name: "T/h",
                reason: format!("must be finite, got T={t}, h={h}"),
            });
        }
        let nu_bar = gamma * t * (1.0 + h) / 2.0;
        let mu_bar = gamma * t * (1.0 - h) / 2.0;
        let rates = Self {
            gamma,
            t,
            h,
            nu: gamma - nu_bar,
            mu: gamma - mu_bar,
            nu_bar,
            mu_bar,
        };
        for (name, value) in [
            ("gamma_nu", rates.nu),
            ("gamma_mu", rates.mu),
            ("gamma_nubar", rates.nu_bar),
            ("gamma_mubar", rates.mu_bar),
        ] {
            if value < 0.0 {
                return Err(Error::RateOutOfRange {
                    name,
                    value,
                    gamma,
                    t,
                    h,
                });
            }
        }
        Ok(rates)
    }

    pub fn rate(&self, channel: NecChannel) -> f64 {
        match channel {
            NecChannel::Nu => self.nu,
            NecChannel::Mu => self.mu,
            NecChannel::NuBar => self.nu_bar,
            NecChannel::MuBar => self.mu_bar,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HamiltonianKind {
    None,
    XField,
    Pxp2d,
    PxpNec,
}

impl HamiltonianKind {
    pub const ALL: [HamiltonianKind; 4] = [
        HamiltonianKind::None,
        HamiltonianKind::XField,
        HamiltonianKind::Pxp2d,
        HamiltonianKind::PxpNec,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HamiltonianKind::None => "none",
            HamiltonianKind::XField => "x_field",
            HamiltonianKind::Pxp2d => "pxp_2d",
            HamiltonianKind::PxpNec => "pxp_nec",
        }
    }
}

impl std::fmt::Display for HamiltonianKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for HamiltonianKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown model '{s}' (expected none|x_field|pxp_2d|pxp_nec)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianSpec {
    pub kind: HamiltonianKind,
    pub omega: f64,
    /// Blockade amplitude; falls back to `omega`.
    pub omega1: Option<f64>,
    /// Anti-blockade amplitude; falls back to `omega`.
    pub omega2: Option<f64>,
    /// Rate of the unconstrained `√Γ σ^x` dissipator.
    pub gamma_x: f64,
}

impl HamiltonianSpec {
    pub fn new(kind: HamiltonianKind, omega: f64) -> Self {
        Self {
            kind,
            omega,
            omega1: None,
            omega2: None,
            gamma_x: 0.0,
        }
    }

    pub fn none() -> Self {
        Self::new(HamiltonianKind::None, 0.0)
    }

    pub fn with_dephasing(mut self, gamma_x: f64) -> Self {
        self.gamma_x = gamma_x;
        self
    }

    pub fn blockade(&self) -> f64 {
        self.omega1.unwrap_or(self.omega)
    }

    pub fn anti_blockade(&self) -> f64 {
        self.omega2.unwrap_or(self.omega)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("omega", self.omega),
            ("omega1", self.blockade()),
            ("omega2", self.anti_blockade()),
            ("gamma_x", self.gamma_x),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite, got {v}"),
                });
            }
        }
        if self.gamma_x < 0.0 {
            return Err(Error::InvalidParameter {
                name: "gamma_x",
                reason: format!("must be nonnegative, got {}", self.gamma_x),
            });
        }
        Ok(())
    }
}

/// Single-site factor of a product operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SiteOp {
    Raise,
    Lower,
    FlipX,
    Up,
    Down,
}

impl SiteOp {
    /// Action on a basis bit: the new bit and amplitude, or `None` if the
    /// factor annihilates it.
    pub fn act(self, up: bool) -> Option<(bool, f64)> {
        match (self, up) {
            (SiteOp::Raise, false) => Some((true, 1.0)),
            (SiteOp::Lower, true) => Some((false, 1.0)),
            (SiteOp::FlipX, b) => Some((!b, 1.0)),
            (SiteOp::Up, true) => Some((true, 1.0)),
            (SiteOp::Down, false) => Some((false, 1.0)),
            _ => None,
        }
    }

    /// Projector equal to `A†A` for a flip factor.
    fn flip_weight(self) -> SiteOp {
        match self {
            SiteOp::Raise => SiteOp::Down,
            SiteOp::Lower => SiteOp::Up,
            other => panic!("{other:?} is not a flip factor"),
        }
    }
}

/// Product of single-site factors on distinct sites of an `ℓ×ℓ` cluster.
pub fn product_operator(ell: usize, factors: &[(SiteIndex, SiteOp)]) -> SparseMatrix {
    let dim = hilbert_dim(ell);
    let bits: Vec<(usize, SiteOp)> = factors.iter().map(|(s, op)| (s.linear(ell), *op)).collect();
    SparseMatrix::from_column_map(dim, |col| {
        let mut row = col;
        let mut amp = 1.0;
        for &(bit, op) in &bits {
            let (new, a) = op.act(row >> bit & 1 == 1)?;
            row = if new { row | 1 << bit } else { row & !(1 << bit) };
            amp *= a;
        }
        Some((row, C64::new(amp, 0.0)))
    })
}

/// Majority projectors `(P↑, P↓)` of a three-site plaquette, built from
/// `¼(2 ± Σσᶻ ∓ Πσᶻ)`.
pub fn majority_projectors(ell: usize, sites: [SiteIndex; 3]) -> Result<(SparseMatrix, SparseMatrix)> {
    for s in sites {
        if s.x >= ell || s.y >= ell {
            return Err(Error::SiteOutOfCluster {
                x: s.x as i64,
                y: s.y as i64,
                ell,
            });
        }
    }
    if sites[0] == sites[1] || sites[1] == sites[2] || sites[0] == sites[2] {
        return Err(Error::InvalidParameter {
            name: "plaquette_sites",
            reason: "sites must be distinct".into(),
        });
    }
    let bits = sites.map(|s| s.linear(ell));
    let sz = |state: usize, b: usize| if state >> b & 1 == 1 { 1.0 } else { -1.0 };
    let dim = hilbert_dim(ell);
    let sum = |s: usize| bits.iter().map(|&b| sz(s, b)).sum::<f64>();
    let prod = |s: usize| bits.iter().map(|&b| sz(s, b)).product::<f64>();
    let up = SparseMatrix::diagonal(dim, |s| 0.25 * (2.0 + sum(s) - prod(s)));
    let down = SparseMatrix::diagonal(dim, |s| 0.25 * (2.0 - sum(s) + prod(s)));
    Ok((up, down))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NecChannel {
    /// Majority up-flip.
    Nu,
    /// Majority down-flip.
    Mu,
    /// Wrong down-flip against an up majority.
    NuBar,
    /// Wrong up-flip against a down majority.
    MuBar,
}

impl NecChannel {
    pub const ALL: [NecChannel; 4] = [NecChannel::Nu, NecChannel::Mu, NecChannel::NuBar, NecChannel::MuBar];

    pub fn flip(self) -> SiteOp {
        match self {
            NecChannel::Nu | NecChannel::MuBar => SiteOp::Raise,
            NecChannel::Mu | NecChannel::NuBar => SiteOp::Lower,
        }
    }

    /// Reduced two-neighbor condition on the (East, North) spins.
    pub fn allowed(self, east_up: bool, north_up: bool) -> bool {
        match self {
            NecChannel::Nu => east_up && north_up,
            NecChannel::Mu => !east_up && !north_up,
            NecChannel::NuBar => east_up || north_up,
            NecChannel::MuBar => !(east_up && north_up),
        }
    }

    /// Channel obtained by conjugating with the global spin flip.
    pub fn flipped(self) -> NecChannel {
        match self {
            NecChannel::Nu => NecChannel::Mu,
            NecChannel::Mu => NecChannel::Nu,
            NecChannel::NuBar => NecChannel::MuBar,
            NecChannel::MuBar => NecChannel::NuBar,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JumpKind {
    Nec(NecChannel),
    Dephasing,
}

/// An operator together with its precomputed `A†A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalOperator {
    pub op: SparseMatrix,
    pub op_dag_op: SparseMatrix,
}

impl LocalOperator {
    pub fn new(op: SparseMatrix) -> Self {
        let op_dag_op = op.adjoint().matmul(&op);
        Self { op, op_dag_op }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterJump {
    pub jump: LocalOperator,
    pub rate: f64,
    pub vertex: SiteIndex,
    pub kind: JumpKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CouplingKind {
    /// Adds `c·on_op` to the Hamiltonian.
    HamiltonianField,
    /// Adds the channel `on_op` with rate `base·c`; probes are projectors.
    DissipativeRate,
    /// Adds the dephasing channel `D[on_op]` (a projector) with rate `base·c`,
    /// from a plaquette whose flip vertex lies on a neighboring cluster.
    DissipativeBackaction,
}

/// Off-cluster factor of a boundary term, evaluated on the cluster at
/// `offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub offset: Offset,
    pub op: SparseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCoupling {
    pub kind: CouplingKind,
    pub on: LocalOperator,
    /// Factors on distinct neighboring clusters; the closure scalar is the
    /// product of their expectations.
    pub probes: Vec<Probe>,
    /// Amplitude (Hamiltonian) or rate (dissipative) multiplying the scalar.
    pub base: f64,
    /// Anchor of the originating plaquette, relative to the cluster origin.
    pub anchor: (i64, i64),
}

type Factor = ((i64, i64), SiteOp);

fn is_inside(ell: usize, p: (i64, i64)) -> bool {
    locate(ell, p.0, p.1).0 == (0, 0)
}

/// Groups off-cluster factors by neighbor cluster into probes.
fn group_probes(ell: usize, factors: &[Factor]) -> Vec<Probe> {
    let mut groups: Vec<(Offset, Vec<(SiteIndex, SiteOp)>)> = Vec::new();
    for &(pos, op) in factors {
        let (offset, site) = locate(ell, pos.0, pos.1);
        match groups.iter_mut().find(|g| g.0 == offset) {
            Some(g) => g.1.push((site, op)),
            None => groups.push((offset, vec![(site, op)])),
        }
    }
    groups.sort_by_key(|g| g.0);
    groups
        .into_iter()
        .map(|(offset, f)| Probe {
            offset,
            op: product_operator(ell, &f),
        })
        .collect()
}

fn bit_of(ell: usize, state: usize, p: (i64, i64)) -> bool {
    let (_, s) = locate(ell, p.0, p.1);
    state >> s.linear(ell) & 1 == 1
}

/// Decomposes one NEC channel on the plaquette anchored at `vertex` into
/// on-cluster jumps and boundary couplings.
///
/// The condition projector is split over the configurations of the
/// off-cluster conditioning sites; under the product ansatz the cross terms
/// between distinct off-cluster configurations vanish on tracing, so each
/// configuration contributes an independent Lindblad term.
fn decompose_nec_plaquette(
    ell: usize,
    vertex: (i64, i64),
    channel: NecChannel,
    rate: f64,
    jumps: &mut Vec<ClusterJump>,
    couplings: &mut Vec<BoundaryCoupling>,
) {
    let dim = hilbert_dim(ell);
    let conds = [(vertex.0 + 1, vertex.1), (vertex.0, vertex.1 + 1)];
    let vertex_in = is_inside(ell, vertex);
    let cond_in = conds.map(|c| is_inside(ell, c));
    if !vertex_in && !cond_in.iter().any(|&b| b) {
        return;
    }
    let out_conds: Vec<usize> = (0..2).filter(|&k| !cond_in[k]).collect();
    let flip = channel.flip();

    for mask in 0..(1usize << out_conds.len()) {
        let out_value = |k: usize| {
            let pos = out_conds.iter().position(|&o| o == k).unwrap();
            mask >> pos & 1 == 1
        };
        let cond_value = |k: usize, s: usize| {
            if cond_in[k] {
                bit_of(ell, s, conds[k])
            } else {
                out_value(k)
            }
        };
        let allowed = |s: usize| channel.allowed(cond_value(0, s), cond_value(1, s));
        let q = SparseMatrix::diagonal(dim, |s| if allowed(s) { 1.0 } else { 0.0 });
        if q.is_zero() {
            continue;
        }
        let out_factors: Vec<Factor> = out_conds
            .iter()
            .map(|&k| (conds[k], if out_value(k) { SiteOp::Up } else { SiteOp::Down }))
            .collect();

        if vertex_in {
            let (_, vs) = locate(ell, vertex.0, vertex.1);
            let vbit = vs.linear(ell);
            let op = SparseMatrix::from_column_map(dim, |s| {
                if !allowed(s) {
                    return None;
                }
                let (new, amp) = flip.act(s >> vbit & 1 == 1)?;
                let row = if new { s | 1 << vbit } else { s & !(1 << vbit) };
                Some((row, C64::new(amp, 0.0)))
            });
            if op.is_zero() {
                continue;
            }
            if out_factors.is_empty() {
                jumps.push(ClusterJump {
                    jump: LocalOperator::new(op),
                    rate,
                    vertex: vs,
                    kind: JumpKind::Nec(channel),
                });
            } else {
                couplings.push(BoundaryCoupling {
                    kind: CouplingKind::DissipativeRate,
                    on: LocalOperator::new(op),
                    probes: group_probes(ell, &out_factors),
                    base: rate,
                    anchor: vertex,
                });
            }
        } else {
            if q.nnz() == dim {
                // D[1] = 0
                continue;
            }
            let mut factors = out_factors;
            factors.push((vertex, flip.flip_weight()));
            couplings.push(BoundaryCoupling {
                kind: CouplingKind::DissipativeBackaction,
                on: LocalOperator::new(q),
                probes: group_probes(ell, &factors),
                base: rate,
                anchor: vertex,
            });
        }
    }
}

/// On-cluster NEC jumps and the boundary couplings of all plaquettes that
/// straddle the cluster edge. Channels with zero rate are omitted.
pub fn nec_jump_operators(rates: &NecRates, ell: usize) -> (Vec<ClusterJump>, Vec<BoundaryCoupling>) {
    let mut jumps = Vec::new();
    let mut couplings = Vec::new();
    let l = ell as i64;
    for y in -1..l {
        for x in -1..l {
            for channel in NecChannel::ALL {
                let rate = rates.rate(channel);
                if rate == 0.0 {
                    continue;
                }
                decompose_nec_plaquette(ell, (x, y), channel, rate, &mut jumps, &mut couplings);
            }
        }
    }
    (jumps, couplings)
}

fn hamiltonian_term(
    ell: usize,
    coef: f64,
    anchor: (i64, i64),
    factors: &[Factor],
    h_on: &mut Vec<(usize, usize, C64)>,
    couplings: &mut Vec<BoundaryCoupling>,
) {
    if coef == 0.0 {
        return;
    }
    let (inside, outside): (Vec<Factor>, Vec<Factor>) = factors.iter().partition(|f| is_inside(ell, f.0));
    if inside.is_empty() {
        return;
    }
    let local: Vec<(SiteIndex, SiteOp)> = inside.iter().map(|&(p, op)| (locate(ell, p.0, p.1).1, op)).collect();
    let on = product_operator(ell, &local);
    if outside.is_empty() {
        h_on.extend(on.triplets().map(|(r, c, v)| (r, c, coef * v)));
    } else {
        couplings.push(BoundaryCoupling {
            kind: CouplingKind::HamiltonianField,
            on: LocalOperator::new(on),
            probes: group_probes(ell, &outside),
            base: coef,
            anchor,
        });
    }
}

/// On-cluster Hamiltonian and its boundary field couplings.
pub fn build_hamiltonian(spec: &HamiltonianSpec, ell: usize) -> (SparseMatrix, Vec<BoundaryCoupling>) {
    let dim = hilbert_dim(ell);
    let l = ell as i64;
    let mut h_on = Vec::new();
    let mut couplings = Vec::new();
    let (w1, w2) = (spec.blockade(), spec.anti_blockade());
    match spec.kind {
        HamiltonianKind::None => {}
        HamiltonianKind::XField => {
            for y in 0..l {
                for x in 0..l {
                    hamiltonian_term(
                        ell,
                        spec.omega,
                        (x, y),
                        &[((x, y), SiteOp::FlipX)],
                        &mut h_on,
                        &mut couplings,
                    );
                }
            }
        }
        HamiltonianKind::PxpNec => {
            for y in -1..l {
                for x in -1..l {
                    for (coef, p) in [(w1, SiteOp::Down), (w2, SiteOp::Up)] {
                        let factors = [((x, y + 1), p), ((x, y), SiteOp::FlipX), ((x + 1, y), p)];
                        hamiltonian_term(ell, coef, (x, y), &factors, &mut h_on, &mut couplings);
                    }
                }
            }
        }
        HamiltonianKind::Pxp2d => {
            for y in -1..=l {
                for x in -1..=l {
                    for (coef, p) in [(w1, SiteOp::Down), (w2, SiteOp::Up)] {
                        let factors = [
                            ((x - 1, y), p),
                            ((x, y - 1), p),
                            ((x, y), SiteOp::FlipX),
                            ((x + 1, y), p),
                            ((x, y + 1), p),
                        ];
                        hamiltonian_term(ell, coef, (x, y), &factors, &mut h_on, &mut couplings);
                    }
                }
            }
        }
    }
    (SparseMatrix::from_triplets(dim, h_on), couplings)
}

/// One unconstrained `√Γ σ^x_j` channel per site.
pub fn dephasing_jumps(gamma_x: f64, ell: usize) -> Vec<ClusterJump> {
    if gamma_x == 0.0 {
        return Vec::new();
    }
    (0..ell * ell)
        .map(|i| {
            let site = SiteIndex::from_linear(i, ell);
            ClusterJump {
                jump: LocalOperator::new(product_operator(ell, &[(site, SiteOp::FlipX)])),
                rate: gamma_x,
                vertex: site,
                kind: JumpKind::Dephasing,
            }
        })
        .collect()
}

/// Model parameters of one simulation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub rates: NecRates,
    pub hamiltonian: HamiltonianSpec,
}

impl ModelParams {
    pub fn new(rates: NecRates, hamiltonian: HamiltonianSpec) -> Self {
        Self { rates, hamiltonian }
    }

    /// Same model at a different bias.
    pub fn with_bias(&self, h: f64) -> Result<Self> {
        Ok(Self {
            rates: NecRates::new(self.rates.gamma, self.rates.t, h)?,
            hamiltonian: self.hamiltonian,
        })
    }
}

/// Every operator needed to evolve one cluster.
#[derive(Debug, Clone)]
pub struct ClusterOperatorSet {
    pub ell: usize,
    pub dim: usize,
    pub hamiltonian_on: SparseMatrix,
    pub jumps_on: Vec<ClusterJump>,
    pub boundary: Vec<BoundaryCoupling>,
}

impl ClusterOperatorSet {
    pub fn build(params: &ModelParams, ell: usize) -> Result<Self> {
        if ell == 0 {
            return Err(Error::InvalidParameter {
                name: "ell",
                reason: "cluster size must be at least 1".into(),
            });
        }
        if ell > 4 {
            return Err(Error::InvalidParameter {
                name: "ell",
                reason: format!("cluster size {ell} is too large for a dense density matrix"),
            });
        }
        params.hamiltonian.validate()?;
        let (hamiltonian_on, h_boundary) = build_hamiltonian(&params.hamiltonian, ell);
        let (mut jumps_on, d_boundary) = nec_jump_operators(&params.rates, ell);
        jumps_on.extend(dephasing_jumps(params.hamiltonian.gamma_x, ell));
        let mut boundary = h_boundary;
        boundary.extend(d_boundary);
        Ok(Self {
            ell,
            dim: hilbert_dim(ell),
            hamiltonian_on,
            jumps_on,
            boundary,
        })
    }
}

/// Conjugation by the global spin flip `Π_j σ^x_j`.
pub fn spin_flip_conjugate(a: &SparseMatrix) -> SparseMatrix {
    let mask = a.dim() - 1;
    SparseMatrix::from_triplets(a.dim(), a.triplets().map(|(r, c, v)| (r ^ mask, c ^ mask, v)))
}
