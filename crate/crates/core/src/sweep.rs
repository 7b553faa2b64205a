//! Hysteresis sweeps in the bias, phase diagrams and fits of the bistable
//! boundary.

use std::io::Write;

use rayon::prelude::*;

use crate::cmf::{ti_evolve, CmfModel, Prescription};
use crate::density::DensityMatrix;
use crate::error::{Error, Result};
use crate::integrator::SteadyOptions;
use crate::operators::{ClusterOperatorSet, ModelParams, NecRates};

/// Δm_z above which a cell counts as bistable.
pub const BISTABILITY_THRESHOLD: f64 = 0.05;

/// Shared settings of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSettings {
    pub ell: usize,
    pub prescription: Prescription,
    pub steady: SteadyOptions,
}

impl SweepSettings {
    pub fn new(ell: usize, prescription: Prescription) -> Self {
        Self {
            ell,
            prescription,
            steady: SteadyOptions::default(),
        }
    }
}

/// Steady magnetization reached at one bias along a branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchPoint {
    pub h: f64,
    pub mz: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HysteresisResult {
    pub h: Vec<f64>,
    pub mz_forward: Vec<f64>,
    pub mz_backward: Vec<f64>,
    pub converged_forward: Vec<bool>,
    pub converged_backward: Vec<bool>,
}

impl HysteresisResult {
    /// `|m_z^(f) − m_z^(b)|` per bias.
    pub fn dmz(&self) -> Vec<f64> {
        self.mz_forward
            .iter()
            .zip(&self.mz_backward)
            .map(|(f, b)| (f - b).abs())
            .collect()
    }

    pub fn converged(&self, i: usize) -> bool {
        self.converged_forward[i] && self.converged_backward[i]
    }

    pub fn all_converged(&self) -> bool {
        (0..self.h.len()).all(|i| self.converged(i))
    }
}

/// `−1, −1+dh, …, 1`; `dh` must divide 2.
pub fn bias_grid(dh: f64) -> Result<Vec<f64>> {
    let n = (2.0 / dh).round();
    if !(dh > 0.0) || n < 1.0 || (n * dh - 2.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter {
            name: "dh",
            reason: format!("{dh} does not divide 2"),
        });
    }
    let n = n as usize;
    Ok((0..=n).map(|i| (2.0 * i as f64 - n as f64) / n as f64).collect())
}

/// Follows one branch through `biases`, seeding each point with the
/// previous steady state.
pub fn branch(
    params: &ModelParams,
    biases: &[f64],
    seed: DensityMatrix,
    settings: &SweepSettings,
) -> Result<Vec<BranchPoint>> {
    let mut state = seed;
    let mut out = Vec::with_capacity(biases.len());
    for &h in biases {
        let p = params.with_bias(h)?;
        let model = CmfModel::new(ClusterOperatorSet::build(&p, settings.ell)?, settings.prescription);
        let res = ti_evolve(&model, &state, &settings.steady)?;
        out.push(BranchPoint {
            h,
            mz: res.state.magnetization(),
            converged: res.converged,
        });
        state = res.state;
    }
    Ok(out)
}

/// Forward sweep from h=−1 seeded all-down and backward sweep from h=+1
/// seeded all-up.
pub fn hysteresis(params: &ModelParams, dh: f64, settings: &SweepSettings) -> Result<HysteresisResult> {
    let h = bias_grid(dh)?;
    let fwd = branch(params, &h, DensityMatrix::polarized(settings.ell, false), settings)?;
    let rev: Vec<f64> = h.iter().rev().copied().collect();
    let mut bwd = branch(params, &rev, DensityMatrix::polarized(settings.ell, true), settings)?;
    bwd.reverse();
    Ok(HysteresisResult {
        mz_forward: fwd.iter().map(|p| p.mz).collect(),
        converged_forward: fwd.iter().map(|p| p.converged).collect(),
        mz_backward: bwd.iter().map(|p| p.mz).collect(),
        converged_backward: bwd.iter().map(|p| p.converged).collect(),
        h,
    })
}

/// Δm_z(T, h) on a rectangular grid; rows ordered by the input T grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDiagram {
    pub params: ModelParams,
    pub ell: usize,
    pub prescription: Prescription,
    pub temperatures: Vec<f64>,
    pub rows: Vec<HysteresisResult>,
}

/// One hysteresis per noise amplitude, rows computed in parallel.
pub fn phase_diagram(
    params: &ModelParams,
    temperatures: &[f64],
    dh: f64,
    settings: &SweepSettings,
) -> Result<PhaseDiagram> {
    bias_grid(dh)?;
    let rows = temperatures
        .par_iter()
        .map(|&t| {
            let p = ModelParams::new(
                NecRates::new(params.rates.gamma, t, params.rates.h)?,
                params.hamiltonian,
            );
            hysteresis(&p, dh, settings)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PhaseDiagram {
        params: *params,
        ell: settings.ell,
        prescription: settings.prescription,
        temperatures: temperatures.to_vec(),
        rows,
    })
}

impl PhaseDiagram {
    pub fn biases(&self) -> &[f64] {
        self.rows.first().map(|r| r.h.as_slice()).unwrap_or(&[])
    }

    pub fn dmz(&self, row: usize, col: usize) -> f64 {
        (self.rows[row].mz_forward[col] - self.rows[row].mz_backward[col]).abs()
    }

    /// Writes `model,ell,omega,T,h,mz_fwd,mz_bwd,dmz,converged`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "model,ell,omega,T,h,mz_fwd,mz_bwd,dmz,converged")?;
        let model = self.params.hamiltonian.kind;
        let omega = self.params.hamiltonian.omega;
        for (t, row) in self.temperatures.iter().zip(&self.rows) {
            let dmz = row.dmz();
            #[allow(clippy::needless_range_loop)]
            for i in 0..row.h.len() {
                writeln!(
                    w,
                    "{model},{},{omega},{t},{},{},{},{},{}",
                    self.ell,
                    fmt_h(row.h[i]),
                    row.mz_forward[i],
                    row.mz_backward[i],
                    dmz[i],
                    row.converged(i)
                )?;
            }
        }
        Ok(())
    }

    /// Critical amplitude per bias column; see [`column_boundary`].
    pub fn boundary_by_column(&self, threshold: f64) -> Vec<(f64, f64)> {
        let dmz: Vec<Vec<f64>> = self.rows.iter().map(|r| r.dmz()).collect();
        column_boundary(&self.temperatures, self.biases(), &dmz, threshold)
    }

    /// Critical bias per T row: midpoint between the outermost bistable
    /// |h| and the next grid value. Rows bistable up to |h|=1 or nowhere
    /// are skipped.
    pub fn boundary_by_row(&self, threshold: f64) -> Vec<(f64, f64)> {
        let h = self.biases();
        let mut out = Vec::new();
        for (r, &t) in self.temperatures.iter().enumerate() {
            let outer = (0..h.len())
                .filter(|&c| self.dmz(r, c) > threshold)
                .max_by(|&a, &b| h[a].abs().total_cmp(&h[b].abs()));
            if let Some(c) = outer {
                if h[c].abs() < 1.0 - 1e-12 {
                    let step = (h[1] - h[0]).abs();
                    out.push((h[c].abs() + 0.5 * step, t));
                }
            }
        }
        out
    }
}

/// Critical amplitude per bias column of a Δm_z grid (`dmz[row][col]`,
/// rows by ascending T): midpoint between the largest bistable T and the
/// next grid value. Columns bistable at the top of the grid or nowhere are
/// skipped.
pub fn column_boundary(temperatures: &[f64], biases: &[f64], dmz: &[Vec<f64>], threshold: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for (c, &hc) in biases.iter().enumerate() {
        let last = (0..dmz.len()).rev().find(|&r| dmz[r][c] > threshold);
        if let Some(r) = last {
            if r + 1 < dmz.len() {
                out.push((hc, 0.5 * (temperatures[r] + temperatures[r + 1])));
            }
        }
    }
    out
}

fn fmt_h(h: f64) -> f64 {
    // Avoid printing "-0".
    if h == 0.0 {
        0.0
    } else {
        h
    }
}

/// Fit of `T_c(h) = R²(1−|h|)² + T*`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalFit {
    pub t_star: f64,
    pub r: f64,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
    pub t_star_err: f64,
    pub r_err: f64,
    pub points: usize,
}

impl CriticalFit {
    pub fn critical_amplitude(&self, h: f64) -> f64 {
        let x = 1.0 - h.abs();
        self.r * self.r * x * x + self.t_star
    }

    /// Critical bias at amplitude `t`, `None` outside `[T*, T_c(0)]`.
    pub fn critical_bias(&self, t: f64) -> Option<f64> {
        if t < self.t_star || t > self.critical_amplitude(0.0) {
            return None;
        }
        Some(1.0 - ((t - self.t_star).sqrt() / self.r))
    }
}

/// Ordinary least squares `y = a·x + b` with standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_err: f64,
    pub intercept_err: f64,
    pub r2: f64,
    pub rms: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let s2 = if n > 2 { sse / (nf - 2.0) } else { 0.0 };
    let sumx2: f64 = x.iter().map(|v| v * v).sum();
    Some(LineFit {
        slope,
        intercept,
        slope_err: (s2 / sxx).sqrt(),
        intercept_err: (s2 * sumx2 / (nf * sxx)).sqrt(),
        r2: if syy > 0.0 { 1.0 - sse / syy } else { 1.0 },
        rms: (sse / nf).sqrt(),
    })
}

/// Least squares of the boundary points `(h, T_c)` against `(1−|h|)²`.
pub fn fit_boundary(points: &[(f64, f64)]) -> Result<CriticalFit> {
    const NEEDED: usize = 4;
    if points.len() < NEEDED {
        return Err(Error::InsufficientBoundary {
            needed: NEEDED,
            found: points.len(),
        });
    }
    let x: Vec<f64> = points.iter().map(|p| (1.0 - p.0.abs()).powi(2)).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let line = fit_line(&x, &y).ok_or(Error::InsufficientBoundary {
        needed: NEEDED,
        found: 1,
    })?;
    if !(line.slope > 0.0) {
        return Err(Error::InvalidParameter {
            name: "boundary",
            reason: format!("fitted curvature {} is not positive", line.slope),
        });
    }
    let r = line.slope.sqrt();
    Ok(CriticalFit {
        t_star: line.intercept,
        r,
        residual: line.rms,
        t_star_err: line.intercept_err,
        r_err: line.slope_err / (2.0 * r),
        points: points.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionOrder {
    Continuous,
    FirstOrder,
    Unclassified,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionProbe {
    pub order: TransitionOrder,
    /// `(T, Δm_z, converged)` sorted by T, including refinement points.
    pub points: Vec<(f64, f64, bool)>,
}

/// Δm_z at bias `h` following the hysteresis protocol: forward branch from
/// h=−1 and backward branch from h=+1 on the `dh` grid.
pub fn hysteresis_gap_at(params: &ModelParams, h: f64, dh: f64, settings: &SweepSettings) -> Result<(f64, bool)> {
    let grid = bias_grid(dh)?;
    let Some(stop) = grid.iter().position(|&g| (g - h).abs() < 1e-9) else {
        return Err(Error::InvalidParameter {
            name: "h",
            reason: format!("{h} is not on the bias grid with step {dh}"),
        });
    };
    let fwd = branch(
        params,
        &grid[..=stop],
        DensityMatrix::polarized(settings.ell, false),
        settings,
    )?;
    let rev: Vec<f64> = grid[stop..].iter().rev().copied().collect();
    let bwd = branch(params, &rev, DensityMatrix::polarized(settings.ell, true), settings)?;
    let (f, b) = (fwd.last().unwrap(), bwd.last().unwrap());
    Ok(((f.mz - b.mz).abs(), f.converged && b.converged))
}

/// Classifies the transition at bias `h` across `temperatures`, bisecting
/// between the last bistable and first normal amplitude until the bracket
/// is narrower than `resolution`.
pub fn transition_order_probe(
    params: &ModelParams,
    h: f64,
    temperatures: &[f64],
    resolution: f64,
    dh: f64,
    settings: &SweepSettings,
) -> Result<TransitionProbe> {
    let at = |t: f64| -> Result<(f64, f64, bool)> {
        let p = ModelParams::new(NecRates::new(params.rates.gamma, t, 0.0)?, params.hamiltonian);
        let (g, c) = hysteresis_gap_at(&p, h, dh, settings)?;
        Ok((t, g, c))
    };
    let mut points = temperatures.par_iter().map(|&t| at(t)).collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let bistable = |p: &(f64, f64, bool)| p.1 > BISTABILITY_THRESHOLD;
    let Some(last) = points.iter().rposition(bistable) else {
        return Ok(TransitionProbe {
            order: TransitionOrder::Unclassified,
            points,
        });
    };
    if last + 1 == points.len() {
        return Ok(TransitionProbe {
            order: TransitionOrder::Unclassified,
            points,
        });
    }
    let (mut lo, mut hi) = (points[last], points[last + 1]);
    while hi.0 - lo.0 > resolution {
        let mid = at(0.5 * (lo.0 + hi.0))?;
        points.push(mid);
        if bistable(&mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let order = if lo.1 < 0.1 {
        TransitionOrder::Continuous
    } else if lo.1 > 0.3 {
        TransitionOrder::FirstOrder
    } else {
        TransitionOrder::Unclassified
    };
    Ok(TransitionProbe { order, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bias_grid_examples() {
        let g = bias_grid(0.5).unwrap();
        assert_eq!(g, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(bias_grid(0.1).unwrap().len(), 21);
        assert!(bias_grid(0.3).is_err());
        assert!(bias_grid(0.0).is_err());
    }

    #[test]
    fn boundary_fit_recovers_synthetic_constants() {
        let (r, t_star) = (0.41, 0.08);
        let pts: Vec<(f64, f64)> = [-0.8, -0.5, -0.2, 0.0, 0.3, 0.6, 0.9]
            .iter()
            .map(|&h: &f64| (h, r * r * (1.0 - h.abs()).powi(2) + t_star))
            .collect();
        let fit = fit_boundary(&pts).unwrap();
        assert!((fit.r - r).abs() < 1e-6);
        assert!((fit.t_star - t_star).abs() < 1e-6);
        assert!(fit.residual < 1e-12);
        assert!((fit.critical_amplitude(0.0) - (r * r + t_star)).abs() < 1e-6);
        let hc = fit.critical_bias(0.1).unwrap();
        assert!((fit.critical_amplitude(hc) - 0.1).abs() < 1e-9);
    }

    #[test]
    fn boundary_fit_needs_points() {
        assert!(matches!(
            fit_boundary(&[(0.0, 0.2), (0.5, 0.1), (0.9, 0.08)]),
            Err(Error::InsufficientBoundary { needed: 4, found: 3 })
        ));
    }

    #[test]
    fn line_fit_exact() {
        let f = fit_line(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }
}
