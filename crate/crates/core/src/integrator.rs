//! Adaptive Dormand–Prince 5(4) propagation of block-structured complex
//! states (one or more `dim × dim` density matrices stored back to back).

use num_complex::Complex64 as C64;

use crate::density::{frobenius, symmetrize_block};
use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [&[f64]; 7] = [
    &[],
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ],
    &[
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    /// Local error bound relative to the Frobenius norm of each block.
    pub rtol: f64,
    pub atol: f64,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-14,
            dt_init: 1e-2,
            dt_min: 1e-12,
            dt_max: 5.0,
        }
    }
}

/// `count` square blocks of side `dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub dim: usize,
    pub count: usize,
}

impl BlockLayout {
    pub fn single(dim: usize) -> Self {
        Self { dim, count: 1 }
    }

    pub fn len(&self) -> usize {
        self.dim * self.dim * self.count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block_len(&self) -> usize {
        self.dim * self.dim
    }

    /// Largest per-block Frobenius norm.
    pub fn max_block_norm(&self, x: &[C64]) -> f64 {
        x.chunks(self.block_len()).map(frobenius).fold(0.0, f64::max)
    }
}

/// State propagator. The right-hand side `f(t, y, out)` must overwrite
/// `out` (it is handed over zeroed).
#[derive(Debug, Clone)]
pub struct Propagator {
    layout: BlockLayout,
    opts: IntegratorOptions,
    t: f64,
    y: Vec<C64>,
    dt: f64,
    k: Vec<Vec<C64>>,
    stage: Vec<C64>,
    y_new: Vec<C64>,
    derivative_valid: bool,
    steps: usize,
    rejected: usize,
}

impl Propagator {
    pub fn new(y0: Vec<C64>, layout: BlockLayout, opts: IntegratorOptions) -> Result<Self> {
        if y0.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                expected: layout.len(),
                got: y0.len(),
            });
        }
        let n = y0.len();
        Ok(Self {
            layout,
            opts,
            t: 0.0,
            y: y0,
            dt: opts.dt_init,
            k: vec![vec![C64::default(); n]; 7],
            stage: vec![C64::default(); n],
            y_new: vec![C64::default(); n],
            derivative_valid: false,
            steps: 0,
            rejected: 0,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> &[C64] {
        &self.y
    }

    pub fn layout(&self) -> BlockLayout {
        self.layout
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn rejected(&self) -> usize {
        self.rejected
    }

    /// Suggested size of the next step.
    pub fn next_dt(&self) -> f64 {
        self.dt
    }

    /// Derivative at the current state, cached between steps.
    pub fn derivative<F>(&mut self, f: &mut F) -> Result<&[C64]>
    where
        F: FnMut(f64, &[C64], &mut [C64]) -> Result<()>,
    {
        if !self.derivative_valid {
            self.k[0].iter_mut().for_each(|v| *v = C64::default());
            f(self.t, &self.y, &mut self.k[0])?;
            self.derivative_valid = true;
        }
        Ok(&self.k[0])
    }

    /// Largest per-block Frobenius norm of the current derivative.
    pub fn residual<F>(&mut self, f: &mut F) -> Result<f64>
    where
        F: FnMut(f64, &[C64], &mut [C64]) -> Result<()>,
    {
        let layout = self.layout;
        Ok(layout.max_block_norm(self.derivative(f)?))
    }

    fn error_ratio(&self, dt: f64) -> f64 {
        let bl = self.layout.block_len();
        let mut worst: f64 = 0.0;
        for b in 0..self.layout.count {
            let span = b * bl..(b + 1) * bl;
            let mut err2 = 0.0;
            for i in span.clone() {
                let mut e = C64::default();
                for (s, &w) in E.iter().enumerate() {
                    if w != 0.0 {
                        e += w * self.k[s][i];
                    }
                }
                err2 += (dt * e).norm_sqr();
            }
            let scale = self.opts.rtol * frobenius(&self.y[span]) + self.opts.atol;
            worst = worst.max(err2.sqrt() / scale);
        }
        worst
    }

    /// One attempt at step size `dt`; fills all stages and `y_new`.
    fn attempt<F>(&mut self, dt: f64, f: &mut F) -> Result<f64>
    where
        F: FnMut(f64, &[C64], &mut [C64]) -> Result<()>,
    {
        for s in 1..7 {
            let (done, rest) = self.k.split_at_mut(s);
            let target = if s == 6 { &mut self.y_new } else { &mut self.stage };
            target.copy_from_slice(&self.y);
            for (j, &a) in A[s].iter().enumerate() {
                if a != 0.0 {
                    let w = dt * a;
                    for (t, kv) in target.iter_mut().zip(&done[j]) {
                        *t += w * kv;
                    }
                }
            }
            let out = &mut rest[0];
            out.iter_mut().for_each(|v| *v = C64::default());
            let ys = if s == 6 { &self.y_new } else { &self.stage };
            f(self.t + C[s] * dt, ys, out)?;
        }
        Ok(self.error_ratio(dt))
    }

    /// Advances by one accepted step, never past `t_limit`. Rejected
    /// attempts halve the step. Returns the accepted step size.
    pub fn advance<F>(&mut self, f: &mut F, t_limit: f64) -> Result<f64>
    where
        F: FnMut(f64, &[C64], &mut [C64]) -> Result<()>,
    {
        self.derivative(f)?;
        let remaining = t_limit - self.t;
        let mut dt = self.dt.min(self.opts.dt_max);
        let clipped = remaining > 0.0 && dt >= remaining;
        if clipped {
            dt = remaining;
        }
        loop {
            if dt < self.opts.dt_min && !(clipped && dt == remaining) {
                return Err(Error::StepUnderflow {
                    t: self.t,
                    dt,
                    dt_min: self.opts.dt_min,
                });
            }
            let ratio = self.attempt(dt, f)?;
            if ratio.is_finite() && ratio <= 1.0 {
                std::mem::swap(&mut self.y, &mut self.y_new);
                let d = self.layout.dim;
                for block in self.y.chunks_mut(d * d) {
                    symmetrize_block(block, d);
                }
                // First-same-as-last: stage 7 was evaluated at the new state.
                self.k.swap(0, 6);
                self.t = if clipped && dt == remaining {
                    t_limit
                } else {
                    self.t + dt
                };
                self.steps += 1;
                let grow = if ratio == 0.0 {
                    5.0
                } else {
                    (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
                };
                // Keep the unclipped proposal when the step was shortened to hit t_limit.
                let base = if clipped { self.dt.max(dt) } else { dt };
                self.dt = (base * grow).min(self.opts.dt_max);
                return Ok(dt);
            }
            self.rejected += 1;
            dt *= 0.5;
        }
    }

    /// Replaces the state (invalidates the cached derivative).
    pub fn set_state(&mut self, y: Vec<C64>) -> Result<()> {
        if y.len() != self.y.len() {
            return Err(Error::DimensionMismatch {
                expected: self.y.len(),
                got: y.len(),
            });
        }
        self.y = y;
        self.derivative_valid = false;
        Ok(())
    }
}

/// Steady-state detection settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyOptions {
    /// Threshold on the largest per-block Frobenius norm of the derivative.
    pub tol: f64,
    pub t_max: f64,
    /// Consecutive sub-threshold checks required.
    pub window: usize,
    pub integrator: IntegratorOptions,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            t_max: 2000.0,
            window: 10,
            integrator: IntegratorOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyOutcome {
    pub state: Vec<C64>,
    pub converged: bool,
    /// Time of the returned state.
    pub time: f64,
    pub residual: f64,
    pub steps: usize,
}

/// Integrates until the residual stays below `tol` for `window` consecutive
/// accepted steps, returning the first state of that window. `observer`
/// sees every accepted state.
pub fn evolve_to_steady<F, O>(
    y0: Vec<C64>,
    layout: BlockLayout,
    mut f: F,
    opts: &SteadyOptions,
    mut observer: O,
) -> Result<SteadyOutcome>
where
    F: FnMut(f64, &[C64], &mut [C64]) -> Result<()>,
    O: FnMut(f64, &[C64]),
{
    let mut prop = Propagator::new(y0, layout, opts.integrator)?;
    let mut streak = 0usize;
    let mut candidate: Option<(f64, Vec<C64>, f64)> = None;
    loop {
        let r = prop.residual(&mut f)?;
        if r < opts.tol {
            if streak == 0 {
                candidate = Some((prop.t(), prop.state().to_vec(), r));
            }
            streak += 1;
            if streak >= opts.window.max(1) {
                let (time, state, residual) = candidate.take().unwrap();
                return Ok(SteadyOutcome {
                    state,
                    converged: true,
                    time,
                    residual,
                    steps: prop.steps(),
                });
            }
        } else {
            streak = 0;
            candidate = None;
        }
        if prop.t() >= opts.t_max {
            return Ok(SteadyOutcome {
                state: prop.state().to_vec(),
                converged: false,
                time: prop.t(),
                residual: r,
                steps: prop.steps(),
            });
        }
        prop.advance(&mut f, opts.t_max)?;
        observer(prop.t(), prop.state());
    }
}

/// Integrates to `t_end`, landing exactly on every time in `samples`
/// (ascending) and reporting the state there.
pub fn evolve_sampled<F, O>(
    y0: Vec<C64>,
    layout: BlockLayout,
    mut f: F,
    opts: IntegratorOptions,
    samples: &[f64],
    mut on_sample: O,
) -> Result<Vec<C64>>
where
    F: FnMut(f64, &[C64], &mut [C64]) -> Result<()>,
    O: FnMut(f64, &[C64]),
{
    let mut prop = Propagator::new(y0, layout, opts)?;
    for &ts in samples {
        while prop.t() < ts {
            prop.advance(&mut f, ts)?;
        }
        on_sample(prop.t(), prop.state());
    }
    Ok(prop.state().to_vec())
}
