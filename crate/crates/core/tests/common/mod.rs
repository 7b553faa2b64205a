//! Dense reference implementations shared by the integration tests. Nothing
//! here goes through the library's sparse operators or compiled flows.

#![allow(dead_code, clippy::needless_range_loop)]

use nec_core::{DensityMatrix, HamiltonianKind, ModelParams};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Op2 = [[C64; 2]; 2];

const Z: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

pub const SX: Op2 = [[Z, ONE], [ONE, Z]];
/// `|↑⟩⟨↓|` with up encoded as 1.
pub const SPLUS: Op2 = [[Z, Z], [ONE, Z]];
pub const SMINUS: Op2 = [[Z, ONE], [Z, Z]];
pub const PUP: Op2 = [[Z, Z], [Z, ONE]];
pub const PDN: Op2 = [[ONE, Z], [Z, Z]];

pub fn mul2(a: &Op2, b: &Op2) -> Op2 {
    let mut o = [[Z; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            o[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    o
}

pub fn adj2(a: &Op2) -> Op2 {
    [[a[0][0].conj(), a[1][0].conj()], [a[0][1].conj(), a[1][1].conj()]]
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, d: usize) -> Vec<C64> {
    (0..d * d)
        .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

/// Full-rank random density matrix `G·G† / tr`.
pub fn random_density(rng: &mut ChaCha8Rng, d: usize) -> DensityMatrix {
    let g = random_matrix(rng, d);
    let mut rho = vec![Z; d * d];
    for i in 0..d {
        for j in 0..d {
            rho[i * d + j] = (0..d).map(|k| g[i * d + k] * g[j * d + k].conj()).sum();
        }
    }
    let tr: f64 = (0..d).map(|i| rho[i * d + i].re).sum();
    rho.iter_mut().for_each(|v| *v /= tr);
    DensityMatrix::from_vec(d, rho).unwrap()
}

/// Random Hermitian traceless matrix.
pub fn random_traceless_hermitian(rng: &mut ChaCha8Rng, d: usize) -> Vec<C64> {
    let g = random_matrix(rng, d);
    let mut h = vec![Z; d * d];
    for i in 0..d {
        for j in 0..d {
            h[i * d + j] = 0.5 * (g[i * d + j] + g[j * d + i].conj());
        }
    }
    let tr: C64 = (0..d).map(|i| h[i * d + i]).sum::<C64>() / d as f64;
    for i in 0..d {
        h[i * d + i] -= tr;
    }
    h
}

pub fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// `coef · Π factors`, each factor on a distinct global site.
#[derive(Clone, Debug)]
pub struct Product {
    pub coef: C64,
    pub factors: Vec<(usize, Op2)>,
}

/// Sum of products.
pub type Term = Vec<Product>;

pub fn adjoint(term: &Term) -> Term {
    term.iter()
        .map(|p| Product {
            coef: p.coef.conj(),
            factors: p.factors.iter().map(|(s, f)| (*s, adj2(f))).collect(),
        })
        .collect()
}

#[derive(Clone, Debug)]
pub enum Piece {
    Hamiltonian(Term),
    Jump(f64, Term),
}

impl Piece {
    fn support(&self) -> Vec<usize> {
        let term = match self {
            Piece::Hamiltonian(t) | Piece::Jump(_, t) => t,
        };
        let mut s: Vec<usize> = term.iter().flat_map(|p| p.factors.iter().map(|f| f.0)).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Literal lattice model on a periodic `n × n` site grid, site `X + n·Y`.
pub struct LiteralLattice {
    pub n: usize,
    pub pieces: Vec<Piece>,
}

impl LiteralLattice {
    pub fn site(&self, x: i64, y: i64) -> usize {
        let n = self.n as i64;
        (x.rem_euclid(n) + n * y.rem_euclid(n)) as usize
    }

    /// Three-site majority jumps, the Hamiltonian of `params` and the
    /// unconstrained dephasing channel.
    pub fn build(params: &ModelParams, n: usize) -> Self {
        let mut lat = Self { n, pieces: Vec::new() };
        let r = &params.rates;
        let spec = &params.hamiltonian;
        for y in 0..n as i64 {
            for x in 0..n as i64 {
                let j = lat.site(x, y);
                let e = lat.site(x + 1, y);
                let no = lat.site(x, y + 1);
                for (flip, majority_up, rate) in [
                    (SPLUS, true, r.nu),
                    (SMINUS, false, r.mu),
                    (SMINUS, true, r.nu_bar),
                    (SPLUS, false, r.mu_bar),
                ] {
                    let mut term = Term::new();
                    for config in 0..8u32 {
                        let ups = config.count_ones();
                        if (ups >= 2) != majority_up {
                            continue;
                        }
                        let p = |bit: u32| if config >> bit & 1 == 1 { PUP } else { PDN };
                        term.push(Product {
                            coef: ONE,
                            factors: vec![(j, mul2(&flip, &p(0))), (e, p(1)), (no, p(2))],
                        });
                    }
                    lat.pieces.push(Piece::Jump(rate, term));
                }
                let omega1 = spec.omega1.unwrap_or(spec.omega);
                let omega2 = spec.omega2.unwrap_or(spec.omega);
                match spec.kind {
                    HamiltonianKind::None => {}
                    HamiltonianKind::XField => lat.pieces.push(Piece::Hamiltonian(vec![Product {
                        coef: C64::new(spec.omega, 0.0),
                        factors: vec![(j, SX)],
                    }])),
                    HamiltonianKind::Pxp2d => {
                        let w = lat.site(x - 1, y);
                        let s = lat.site(x, y - 1);
                        lat.pieces.push(Piece::Hamiltonian(vec![Product {
                            coef: C64::new(omega1, 0.0),
                            factors: vec![(w, PDN), (s, PDN), (j, SX), (e, PDN), (no, PDN)],
                        }]));
                        lat.pieces.push(Piece::Hamiltonian(vec![Product {
                            coef: C64::new(omega2, 0.0),
                            factors: vec![(w, PUP), (s, PUP), (j, SX), (e, PUP), (no, PUP)],
                        }]));
                    }
                    HamiltonianKind::PxpNec => {
                        lat.pieces.push(Piece::Hamiltonian(vec![Product {
                            coef: C64::new(omega1, 0.0),
                            factors: vec![(no, PDN), (j, SX), (e, PDN)],
                        }]));
                        lat.pieces.push(Piece::Hamiltonian(vec![Product {
                            coef: C64::new(omega2, 0.0),
                            factors: vec![(no, PUP), (j, SX), (e, PUP)],
                        }]));
                    }
                }
                if spec.gamma_x > 0.0 {
                    lat.pieces.push(Piece::Jump(
                        spec.gamma_x,
                        vec![Product {
                            coef: ONE,
                            factors: vec![(j, SX)],
                        }],
                    ));
                }
            }
        }
        lat
    }
}

/// Dense matrix on `bits` qubits acted on by single-qubit factors.
struct Joint {
    bits: usize,
    data: Vec<C64>,
}

impl Joint {
    fn dim(&self) -> usize {
        1 << self.bits
    }

    fn zeros_like(&self) -> Self {
        Self {
            bits: self.bits,
            data: vec![Z; self.data.len()],
        }
    }

    fn axpy(&mut self, a: C64, other: &Joint) {
        for (o, v) in self.data.iter_mut().zip(&other.data) {
            *o += a * v;
        }
    }

    /// `f ⊗ 1` on qubit `q` from the left.
    fn factor_left(&self, q: usize, f: &Op2) -> Self {
        let d = self.dim();
        let mut out = self.zeros_like();
        for a in 0..d {
            let s = a >> q & 1;
            for sp in 0..2 {
                let m = f[s][sp];
                if m == Z {
                    continue;
                }
                let ap = (a & !(1 << q)) | (sp << q);
                for b in 0..d {
                    out.data[a * d + b] += m * self.data[ap * d + b];
                }
            }
        }
        out
    }

    fn factor_right(&self, q: usize, f: &Op2) -> Self {
        let d = self.dim();
        let mut out = self.zeros_like();
        for b in 0..d {
            let s = b >> q & 1;
            for sp in 0..2 {
                let m = f[sp][s];
                if m == Z {
                    continue;
                }
                let bp = (b & !(1 << q)) | (sp << q);
                for a in 0..d {
                    out.data[a * d + b] += self.data[a * d + bp] * m;
                }
            }
        }
        out
    }

    fn left(&self, term: &Term, bit_of: &dyn Fn(usize) -> usize) -> Self {
        let mut out = self.zeros_like();
        for p in term {
            let mut x = Joint {
                bits: self.bits,
                data: self.data.clone(),
            };
            for (s, f) in p.factors.iter().rev() {
                x = x.factor_left(bit_of(*s), f);
            }
            out.axpy(p.coef, &x);
        }
        out
    }

    fn right(&self, term: &Term, bit_of: &dyn Fn(usize) -> usize) -> Self {
        let mut out = self.zeros_like();
        for p in term {
            let mut x = Joint {
                bits: self.bits,
                data: self.data.clone(),
            };
            for (s, f) in &p.factors {
                x = x.factor_right(bit_of(*s), f);
            }
            out.axpy(p.coef, &x);
        }
        out
    }
}

/// Exact `d/dt` of every cluster's reduced state when the lattice is in
/// the product state `⊗ clusters[c]`, clusters stored row-major
/// `cx + side·cy`.
pub fn reduced_derivatives(lat: &LiteralLattice, ell: usize, clusters: &[DensityMatrix]) -> Vec<Vec<C64>> {
    let side = lat.n / ell;
    let nc = ell * ell;
    let dc = 1usize << nc;
    let cluster_of = |g: usize| {
        let (x, y) = (g % lat.n, g / lat.n);
        ((x / ell) + side * (y / ell), (x % ell) + ell * (y % ell))
    };
    let mut out = vec![vec![Z; dc * dc]; clusters.len()];
    for piece in &lat.pieces {
        let support = piece.support();
        let touched: Vec<usize> = {
            let mut t: Vec<usize> = support.iter().map(|&g| cluster_of(g).0).collect();
            t.sort_unstable();
            t.dedup();
            t
        };
        for &c in &touched {
            let ext: Vec<usize> = support.iter().copied().filter(|&g| cluster_of(g).0 != c).collect();
            let bits = nc + ext.len();
            let bit_of = |g: usize| {
                let (cc, local) = cluster_of(g);
                if cc == c {
                    local
                } else {
                    nc + ext.iter().position(|&e| e == g).unwrap()
                }
            };
            // ρ_c ⊗ (reduced states of the external sites, grouped by cluster).
            let mut groups: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
            for (k, &g) in ext.iter().enumerate() {
                let (cc, local) = cluster_of(g);
                match groups.iter_mut().find(|(x, _)| *x == cc) {
                    Some((_, v)) => v.push((local, nc + k)),
                    None => groups.push((cc, vec![(local, nc + k)])),
                }
            }
            let reduced: Vec<(Vec<usize>, Vec<C64>)> = groups
                .iter()
                .map(|(cc, sites)| {
                    let locals: Vec<usize> = sites.iter().map(|s| s.0).collect();
                    (
                        sites.iter().map(|s| s.1).collect(),
                        partial_state(clusters[*cc].as_slice(), nc, &locals),
                    )
                })
                .collect();
            let d = 1usize << bits;
            let rho_c = clusters[c].as_slice();
            let mut joint = Joint {
                bits,
                data: vec![Z; d * d],
            };
            for a in 0..d {
                for b in 0..d {
                    let mut v = rho_c[(a & (dc - 1)) * dc + (b & (dc - 1))];
                    for (qs, red) in &reduced {
                        let m = 1usize << qs.len();
                        let pick = |x: usize| qs.iter().enumerate().fold(0, |acc, (i, &q)| acc | ((x >> q & 1) << i));
                        v *= red[pick(a) * m + pick(b)];
                    }
                    joint.data[a * d + b] = v;
                }
            }
            let deriv = match piece {
                Piece::Hamiltonian(h) => {
                    let mut r = joint.left(h, &bit_of);
                    r.axpy(C64::new(-1.0, 0.0), &joint.right(h, &bit_of));
                    r.data.iter_mut().for_each(|v| *v *= C64::new(0.0, -1.0));
                    r
                }
                Piece::Jump(rate, l) => {
                    let ld = adjoint(l);
                    let lx = joint.left(l, &bit_of);
                    let mut r = lx.right(&ld, &bit_of);
                    r.axpy(C64::new(-0.5, 0.0), &lx.left(&ld, &bit_of));
                    r.axpy(C64::new(-0.5, 0.0), &joint.right(&ld, &bit_of).right(l, &bit_of));
                    r.data.iter_mut().for_each(|v| *v *= rate);
                    r
                }
            };
            let tgt = &mut out[c];
            for a in 0..d {
                for b in 0..d {
                    if a >> nc == b >> nc {
                        tgt[(a & (dc - 1)) * dc + (b & (dc - 1))] += deriv.data[a * d + b];
                    }
                }
            }
        }
    }
    out
}

/// Reduced state of `rho` (on `n` qubits) on the qubits `keep`, in that
/// order.
pub fn partial_state(rho: &[C64], n: usize, keep: &[usize]) -> Vec<C64> {
    let d = 1usize << n;
    let m = 1usize << keep.len();
    let mut out = vec![Z; m * m];
    let pick = |x: usize| {
        keep.iter()
            .enumerate()
            .fold(0, |acc, (i, &q)| acc | ((x >> q & 1) << i))
    };
    let mask: usize = keep.iter().fold(0, |acc, &q| acc | 1 << q);
    for a in 0..d {
        for b in 0..d {
            if a & !mask == b & !mask {
                out[pick(a) * m + pick(b)] += rho[a * d + b];
            }
        }
    }
    out
}

pub fn nec_model(
    kind: HamiltonianKind,
    omega: f64,
    t: f64,
    h: f64,
    ell: usize,
    prescription: nec_core::Prescription,
) -> nec_core::CmfModel {
    let p = ModelParams::new(
        nec_core::NecRates::new(1.0, t, h).unwrap(),
        nec_core::HamiltonianSpec::new(kind, omega),
    );
    nec_core::CmfModel::new(nec_core::ClusterOperatorSet::build(&p, ell).unwrap(), prescription)
}

/// `X ρ X` with `X` the product of `σˣ` over every site.
pub fn flip_density(rho: &DensityMatrix) -> DensityMatrix {
    let d = rho.dim();
    let m = d - 1;
    let data = (0..d * d).map(|k| rho.get((k / d) ^ m, (k % d) ^ m)).collect();
    DensityMatrix::from_vec(d, data).unwrap()
}
