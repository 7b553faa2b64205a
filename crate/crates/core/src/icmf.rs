//! Inhomogeneous cluster mean-field dynamics on a grid of clusters, with
//! minority-island initial states and reabsorption analysis.

use std::io::Write;

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::cmf::CmfModel;
use crate::density::{magnetization_of, DensityMatrix};
use crate::error::{Error, Result};
use crate::integrator::{BlockLayout, IntegratorOptions, Propagator, SteadyOptions};
use crate::sweep::{fit_line, LineFit};

/// Lattice boundary condition at the cluster level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    #[default]
    Periodic,
    /// Couplings across the edge vanish.
    Open,
}

impl std::str::FromStr for Boundary {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "periodic" => Ok(Boundary::Periodic),
            "open" => Ok(Boundary::Open),
            other => Err(format!("unknown boundary '{other}' (expected periodic|open)")),
        }
    }
}

impl std::fmt::Display for Boundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Boundary::Periodic => "periodic",
            Boundary::Open => "open",
        })
    }
}

/// `side × side` clusters stored row-major (`cx + side·cy`), each a
/// row-major density matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeState {
    side: usize,
    ell: usize,
    dim: usize,
    data: Vec<C64>,
}

impl LatticeState {
    /// Every cluster in the same state.
    pub fn uniform(side: usize, ell: usize, rho: &DensityMatrix) -> Self {
        let data = rho.as_slice().repeat(side * side);
        Self {
            side,
            ell,
            dim: rho.dim(),
            data,
        }
    }

    pub fn from_clusters(side: usize, ell: usize, clusters: &[DensityMatrix]) -> Result<Self> {
        if clusters.len() != side * side {
            return Err(Error::DimensionMismatch {
                expected: side * side,
                got: clusters.len(),
            });
        }
        let dim = 1usize << (ell * ell);
        let mut data = Vec::with_capacity(side * side * dim * dim);
        for c in clusters {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.dim(),
                });
            }
            data.extend_from_slice(c.as_slice());
        }
        Ok(Self { side, ell, dim, data })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cluster_count(&self) -> usize {
        self.side * self.side
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    fn block(&self, i: usize) -> &[C64] {
        let n = self.dim * self.dim;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn cluster(&self, cx: usize, cy: usize) -> DensityMatrix {
        DensityMatrix::from_vec(self.dim, self.block(cx + self.side * cy).to_vec()).expect("block size")
    }

    pub fn cluster_magnetization(&self, cx: usize, cy: usize) -> f64 {
        magnetization_of(self.block(cx + self.side * cy), self.dim, self.ell * self.ell)
    }

    /// Per-cluster magnetizations, row-major.
    pub fn magnetization_map(&self) -> Vec<f64> {
        (0..self.cluster_count())
            .map(|i| magnetization_of(self.block(i), self.dim, self.ell * self.ell))
            .collect()
    }

    /// Average of `σᶻ` over all sites.
    pub fn magnetization(&self) -> f64 {
        self.magnetization_map().iter().sum::<f64>() / self.cluster_count() as f64
    }

    /// Cluster trace errors `|tr ρ_n − 1|`, row-major.
    pub fn trace_errors(&self) -> Vec<f64> {
        (0..self.cluster_count())
            .map(|i| {
                let b = self.block(i);
                let tr: C64 = (0..self.dim).map(|s| b[s * self.dim + s]).sum();
                (tr - C64::new(1.0, 0.0)).norm()
            })
            .collect()
    }

    /// Periodic translation by whole clusters: cluster `(x, y)` moves to
    /// `(x+dx, y+dy)`.
    pub fn translated(&self, dx: i64, dy: i64) -> Self {
        let s = self.side as i64;
        let n = self.dim * self.dim;
        let mut data = vec![C64::default(); self.data.len()];
        for cy in 0..s {
            for cx in 0..s {
                let src = (cx + s * cy) as usize;
                let tx = (cx + dx).rem_euclid(s);
                let ty = (cy + dy).rem_euclid(s);
                let dst = (tx + s * ty) as usize;
                data[dst * n..(dst + 1) * n].copy_from_slice(self.block(src));
            }
        }
        Self { data, ..self.clone() }
    }
}

/// Spin species of the minority island.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IslandSpec {
    /// Linear island size in sites.
    pub ell_down: usize,
    /// Island spins point up (background down) when true.
    pub island_up: bool,
}

impl IslandSpec {
    /// Down island in an up background.
    pub fn down(ell_down: usize) -> Self {
        Self {
            ell_down,
            island_up: false,
        }
    }
}

/// Product state with an axis-aligned square island on the cluster grid of
/// an `l × l` lattice; the island starts at cluster `⌊(side − m)/2⌋` along
/// both axes, `m = ell_down / ell`.
pub fn init_island(l: usize, ell: usize, spec: IslandSpec) -> Result<LatticeState> {
    if ell == 0 || !l.is_multiple_of(ell) {
        return Err(Error::InvalidParameter {
            name: "L",
            reason: format!("lattice size {l} is not a multiple of the cluster size {ell}"),
        });
    }
    if spec.ell_down > l || !spec.ell_down.is_multiple_of(ell) {
        return Err(Error::IncommensurateIsland {
            ell_down: spec.ell_down,
            ell,
            lattice: l,
        });
    }
    let side = l / ell;
    let m = spec.ell_down / ell;
    let start = (side - m) / 2;
    let inside = |c: usize| c >= start && c < start + m;
    let island = DensityMatrix::polarized(ell, spec.island_up);
    let background = DensityMatrix::polarized(ell, !spec.island_up);
    let clusters: Vec<DensityMatrix> = (0..side * side)
        .map(|i| {
            let (cx, cy) = (i % side, i / side);
            if inside(cx) && inside(cy) {
                island.clone()
            } else {
                background.clone()
            }
        })
        .collect();
    LatticeState::from_clusters(side, ell, &clusters)
}

/// Closed-generator data plus the neighbor table of the cluster grid.
#[derive(Debug, Clone)]
pub struct LatticeModel {
    pub model: CmfModel,
    pub side: usize,
    pub boundary: Boundary,
    /// `neighbors[n][p]`: cluster probed by slot `p` of cluster `n`.
    neighbors: Vec<Vec<Option<usize>>>,
}

impl LatticeModel {
    pub fn new(model: CmfModel, side: usize, boundary: Boundary) -> Self {
        let s = side as i64;
        let neighbors = (0..side * side)
            .map(|n| {
                let (cx, cy) = ((n % side) as i64, (n / side) as i64);
                model
                    .probes()
                    .iter()
                    .map(|p| {
                        let (x, y) = (cx + p.offset.0 as i64, cy + p.offset.1 as i64);
                        match boundary {
                            Boundary::Periodic => Some((x.rem_euclid(s) + s * y.rem_euclid(s)) as usize),
                            Boundary::Open if (0..s).contains(&x) && (0..s).contains(&y) => Some((x + s * y) as usize),
                            Boundary::Open => None,
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            model,
            side,
            boundary,
            neighbors,
        }
    }

    fn layout(&self) -> BlockLayout {
        BlockLayout {
            dim: self.model.dim(),
            count: self.side * self.side,
        }
    }

    /// Coupled flow of all clusters. Probe expectations are computed from
    /// `y` for every cluster first, then each cluster is updated
    /// independently.
    pub fn rhs_into(&self, y: &[C64], out: &mut [C64]) -> Result<()> {
        let d = self.model.dim();
        let n = d * d;
        let slots = self.model.probes().len();
        let table: Vec<f64> = y
            .par_chunks(n)
            .flat_map_iter(|block| self.model.probe_values(block))
            .collect();
        out.par_chunks_mut(n)
            .zip(y.par_chunks(n))
            .enumerate()
            .try_for_each_init(
                || (vec![0.0; slots], self.model.scratch()),
                |(values, scratch), (i, (o, x))| {
                    for (p, v) in values.iter_mut().enumerate() {
                        *v = self.neighbors[i][p].map_or(0.0, |nb| table[nb * slots + p]);
                    }
                    self.model.apply_with_values(values, x, o, scratch)
                },
            )
    }

    pub fn rhs(&self, state: &LatticeState) -> Result<Vec<C64>> {
        let mut out = vec![C64::default(); state.as_slice().len()];
        self.rhs_into(state.as_slice(), &mut out)?;
        Ok(out)
    }

    fn check(&self, state: &LatticeState) -> Result<()> {
        if state.side() != self.side || state.dim() != self.model.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.side * self.side * self.model.dim(),
                got: state.side() * state.side() * state.dim(),
            });
        }
        Ok(())
    }

    /// One adaptive step of the whole lattice with a common step size.
    pub fn lattice_step(&self, state: &LatticeState, dt: f64, opts: IntegratorOptions) -> Result<(LatticeState, f64)> {
        self.check(state)?;
        let mut f = |_: f64, y: &[C64], out: &mut [C64]| self.rhs_into(y, out);
        let opts = IntegratorOptions {
            dt_init: dt,
            dt_max: dt,
            ..opts
        };
        let mut prop = Propagator::new(state.as_slice().to_vec(), self.layout(), opts)?;
        let taken = prop.advance(&mut f, f64::INFINITY)?;
        Ok((
            LatticeState {
                data: prop.state().to_vec(),
                ..state.clone()
            },
            taken,
        ))
    }

    /// Lattice states at the given ascending times.
    pub fn trajectory(
        &self,
        state: &LatticeState,
        samples: &[f64],
        opts: IntegratorOptions,
    ) -> Result<Vec<(f64, LatticeState)>> {
        self.check(state)?;
        let mut f = |_: f64, y: &[C64], out: &mut [C64]| self.rhs_into(y, out);
        let mut prop = Propagator::new(state.as_slice().to_vec(), self.layout(), opts)?;
        let mut traj = Vec::with_capacity(samples.len());
        for &ts in samples {
            while prop.t() < ts {
                prop.advance(&mut f, ts)?;
            }
            traj.push((
                prop.t(),
                LatticeState {
                    data: prop.state().to_vec(),
                    ..state.clone()
                },
            ));
        }
        Ok(traj)
    }

    /// Evolves until the largest per-cluster residual stays below the
    /// steady tolerance for the configured window, or `t_max`.
    pub fn evolve_island(&self, state: &LatticeState, opts: &IslandOptions) -> Result<IslandTrajectory> {
        self.check(state)?;
        let steady = &opts.steady;
        let mut f = |_: f64, y: &[C64], out: &mut [C64]| self.rhs_into(y, out);
        let mut prop = Propagator::new(state.as_slice().to_vec(), self.layout(), steady.integrator)?;
        let map_times = log_times(opts.stride, steady.t_max, opts.maps);
        let mut next_map = 0;
        let mut traj = IslandTrajectory {
            times: vec![0.0],
            mz: vec![state.magnetization()],
            maps: Vec::new(),
            converged: false,
            final_state: state.clone(),
            final_time: 0.0,
        };
        let mut next_sample = opts.stride;
        let mut streak = 0usize;
        loop {
            let r = prop.residual(&mut f)?;
            streak = if r < steady.tol { streak + 1 } else { 0 };
            if streak >= steady.window.max(1) {
                traj.converged = true;
                break;
            }
            if prop.t() >= steady.t_max {
                break;
            }
            let target = next_sample.min(map_times.get(next_map).copied().unwrap_or(f64::INFINITY));
            prop.advance(&mut f, target.min(steady.t_max))?;
            let t = prop.t();
            let current = || LatticeState {
                data: prop.state().to_vec(),
                ..state.clone()
            };
            if next_map < map_times.len() && t >= map_times[next_map] {
                traj.maps.push((t, current().magnetization_map()));
                next_map += 1;
            }
            if t >= next_sample {
                traj.times.push(t);
                traj.mz
                    .push(magnetization_of_blocks(prop.state(), state.dim(), state.ell()));
                next_sample += opts.stride;
            }
        }
        traj.final_time = prop.t();
        traj.final_state = LatticeState {
            data: prop.state().to_vec(),
            ..state.clone()
        };
        if traj.times.last() != Some(&traj.final_time) {
            traj.times.push(traj.final_time);
            traj.mz.push(traj.final_state.magnetization());
        }
        Ok(traj)
    }
}

fn magnetization_of_blocks(y: &[C64], dim: usize, ell: usize) -> f64 {
    let n = dim * dim;
    let count = y.len() / n;
    y.chunks(n).map(|b| magnetization_of(b, dim, ell * ell)).sum::<f64>() / count as f64
}

/// `count` logarithmically spaced times from `first` to `last`.
pub fn log_times(first: f64, last: f64, count: usize) -> Vec<f64> {
    if count == 0 || !(last > first) {
        return Vec::new();
    }
    if count == 1 {
        return vec![last];
    }
    let (a, b) = (first.ln(), last.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IslandOptions {
    pub steady: SteadyOptions,
    /// Spacing of the global magnetization samples.
    pub stride: f64,
    /// Number of per-cluster maps.
    pub maps: usize,
}

/// Local error bound for lattice runs. Relaxation times agree with the
/// tighter single-cluster default to the sampling stride.
pub const ISLAND_RTOL: f64 = 1e-6;

impl Default for IslandOptions {
    fn default() -> Self {
        let mut steady = SteadyOptions::default();
        steady.integrator.rtol = ISLAND_RTOL;
        Self {
            steady,
            stride: 0.5,
            maps: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IslandTrajectory {
    pub times: Vec<f64>,
    pub mz: Vec<f64>,
    /// `(t, per-cluster m_z)` snapshots.
    pub maps: Vec<(f64, Vec<f64>)>,
    pub converged: bool,
    pub final_state: LatticeState,
    pub final_time: f64,
}

impl IslandTrajectory {
    pub fn final_magnetization(&self) -> f64 {
        *self.mz.last().unwrap()
    }

    /// Writes `t,mz_global`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,mz_global")?;
        for (t, m) in self.times.iter().zip(&self.mz) {
            writeln!(w, "{t},{m}")?;
        }
        Ok(())
    }
}

/// Writes `cx,cy,mz_cluster` for one map.
pub fn write_map_csv<W: Write>(mut w: W, side: usize, map: &[f64]) -> std::io::Result<()> {
    writeln!(w, "cx,cy,mz_cluster")?;
    for (i, m) in map.iter().enumerate() {
        writeln!(w, "{},{},{m}", i % side, i / side)?;
    }
    Ok(())
}

/// First sampled time after which `|m_z(t) − m_z(∞)| < eps` holds for
/// every later sample, `m_z(∞)` being the last sample.
pub fn relaxation_time(times: &[f64], mz: &[f64], converged: bool, eps: f64) -> Result<f64> {
    if !converged || mz.is_empty() || times.len() != mz.len() {
        return Err(Error::NotConverged);
    }
    let m_inf = *mz.last().unwrap();
    let last_outside = mz.iter().rposition(|m| (m - m_inf).abs() >= eps);
    Ok(match last_outside {
        None => times[0],
        Some(i) => times[i + 1],
    })
}

/// Reabsorption speed from `τ = √2·ℓ_↓/v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityFit {
    pub v: f64,
    pub v_err: f64,
    pub line: LineFit,
}

/// R² required for the island relaxation time to count as linear.
pub const LINEAR_R2: f64 = 0.98;

/// Fits `τ(ℓ_↓)`; needs at least three points and `R² > 0.98`.
pub fn fit_velocity(points: &[(f64, f64)]) -> Result<VelocityFit> {
    const NEEDED: usize = 3;
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let line = match fit_line(&x, &y) {
        Some(l) if points.len() >= NEEDED => l,
        _ => {
            return Err(Error::NonLinearRegime {
                linear: 0,
                needed: NEEDED,
            })
        }
    };
    if line.r2 <= LINEAR_R2 || line.slope <= 0.0 {
        return Err(Error::NonLinearRegime {
            linear: 0,
            needed: NEEDED,
        });
    }
    let v = std::f64::consts::SQRT_2 / line.slope;
    Ok(VelocityFit {
        v,
        v_err: v * line.slope_err / line.slope,
        line,
    })
}

/// Constants of the small-fluctuation drift `dr/dt = c₀ + D·T + E·Ω`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearLaw {
    pub d: f64,
    pub e: f64,
    pub d_err: f64,
    pub e_err: f64,
    /// Intercept of the Ω series minus that of the T series.
    pub intercept_difference: f64,
    pub fit_t: LineFit,
    pub fit_omega: LineFit,
}

/// Two independent line fits of the signed drift `−v`: against T at fixed
/// Ω and against Ω at fixed T. Fails when either RMS residual exceeds
/// `max_rms`.
pub fn fit_linear_law(v_vs_t: &[(f64, f64)], v_vs_omega: &[(f64, f64)], max_rms: f64) -> Result<LinearLaw> {
    let fit = |pts: &[(f64, f64)]| -> Result<LineFit> {
        let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pts.iter().map(|p| -p.1).collect();
        let line = fit_line(&x, &y).ok_or(Error::NonLinearRegime {
            linear: pts.len(),
            needed: 2,
        })?;
        if line.rms > max_rms {
            return Err(Error::WindowTooWide {
                residual: line.rms,
                threshold: max_rms,
            });
        }
        Ok(line)
    };
    let fit_t = fit(v_vs_t)?;
    let fit_omega = fit(v_vs_omega)?;
    Ok(LinearLaw {
        d: fit_t.slope,
        e: fit_omega.slope,
        d_err: fit_t.slope_err,
        e_err: fit_omega.slope_err,
        intercept_difference: fit_omega.intercept - fit_t.intercept,
        fit_t,
        fit_omega,
    })
}
