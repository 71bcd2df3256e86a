//! Picard and Krasnosel'skii–Mann iteration over an arbitrary vector operator,
//! with residual tracking, contraction estimates and a-priori depth bounds.

use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::grid::{assemble_readout, Grid, KernelSpec};
use crate::stochastic::BrownianPath;

/// Residuals above this are treated as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Relaxation weights `κ_n` of the Krasnosel'skii–Mann update.
#[derive(Debug, Clone, PartialEq)]
pub enum KappaSchedule {
    Constant(f64),
    /// Explicit weights; the last one is repeated once the sequence runs out.
    Sequence(Vec<f64>),
}

impl Default for KappaSchedule {
    fn default() -> Self {
        KappaSchedule::Constant(1.0)
    }
}

impl KappaSchedule {
    pub fn at(&self, n: usize) -> f64 {
        match self {
            KappaSchedule::Constant(k) => *k,
            KappaSchedule::Sequence(ks) => ks[n.min(ks.len() - 1)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |k: f64| {
            if k > 0.0 && k <= 1.0 {
                Ok(())
            } else {
                Err(Error::config(format!("relaxation weight {k} outside (0, 1]")))
            }
        };
        match self {
            KappaSchedule::Constant(k) => check(*k),
            KappaSchedule::Sequence(ks) if ks.is_empty() => Err(Error::config("empty relaxation sequence")),
            KappaSchedule::Sequence(ks) => ks.iter().try_for_each(|&k| check(k)),
        }
    }

    /// Whether `Σ κ_n(1 − κ_n)` diverges, the condition for convergence on
    /// non-expansive operators. Both built-in forms are eventually constant, so
    /// the series diverges iff the tail weight lies strictly inside (0, 1).
    pub fn supports_nonexpansive(&self) -> bool {
        let tail = match self {
            KappaSchedule::Constant(k) => *k,
            KappaSchedule::Sequence(ks) => match ks.last() {
                Some(k) => *k,
                None => return false,
            },
        };
        tail > 0.0 && tail < 1.0
    }

    /// Default switch rule: plain Picard when the operator looks contractive,
    /// `κ = 1/2` in the borderline non-expansive band `q̂ ∈ [1, 1.05]`.
    pub fn auto(q_hat: f64) -> Result<Self> {
        if q_hat < 1.0 {
            Ok(KappaSchedule::Constant(1.0))
        } else if q_hat <= 1.05 {
            Ok(KappaSchedule::Constant(0.5))
        } else {
            Err(Error::NonContractive(q_hat))
        }
    }
}

/// Vector norm used for residuals and contraction estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Norm {
    Sup,
    /// `(Σ y_i² · weight)^{1/2}`, the discrete mean-square norm when `weight = Δt`.
    L2 { weight: f64 },
}

impl Norm {
    pub fn of(&self, v: &DVector<f64>) -> f64 {
        match self {
            Norm::Sup => v.amax(),
            Norm::L2 { weight } => (v.norm_squared() * weight).sqrt(),
        }
    }

    pub fn for_grid(grid: &Grid) -> Self {
        Norm::L2 { weight: grid.step() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointConfig {
    pub kappa: KappaSchedule,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub norm: Norm,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            kappa: KappaSchedule::Constant(1.0),
            tolerance: 1e-10,
            max_iterations: 1000,
            norm: Norm::L2 { weight: 1.0 },
        }
    }
}

impl FixedPointConfig {
    pub fn new(tolerance: f64, max_iterations: usize) -> Self {
        Self {
            tolerance,
            max_iterations,
            ..Self::default()
        }
    }

    pub fn with_kappa(mut self, kappa: KappaSchedule) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn with_norm(mut self, norm: Norm) -> Self {
        self.norm = norm;
        self
    }

    /// Runs exactly `steps` iterations (tolerance zero never triggers).
    pub fn fixed_depth(steps: usize) -> Self {
        Self::new(0.0, steps)
    }

    pub fn validate(&self) -> Result<()> {
        self.kappa.validate()?;
        if !(self.tolerance >= 0.0) {
            return Err(Error::config(format!("tolerance must be >= 0, got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations must be positive"));
        }
        Ok(())
    }
}

/// Per-iteration record of a fixed-point run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationTrace {
    /// `‖Y_{n+1} − Y_n‖ / max(‖Y_n‖, 1)` for each step.
    pub residuals: Vec<f64>,
    /// `residuals[n] / residuals[n−1]`, one entry per step after the first.
    pub ratio_estimates: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    /// Seconds since the start of the run, per step. Not exported.
    pub wall_clock: Vec<f64>,
}

impl IterationTrace {
    pub fn last_residual(&self) -> Option<f64> {
        self.residuals.last().copied()
    }

    /// Appends one step, updating the ratio estimate and timing.
    pub fn push(&mut self, residual: f64, started: Instant) {
        if let Some(&prev) = self.residuals.last() {
            self.ratio_estimates.push(if prev > 0.0 { residual / prev } else { 0.0 });
        }
        self.residuals.push(residual);
        self.iterations_used += 1;
        self.wall_clock.push(started.elapsed().as_secs_f64());
    }

    /// CSV with columns `iteration,residual,ratio_estimate`; the first row has no ratio.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,residual,ratio_estimate\n");
        for (n, r) in self.residuals.iter().enumerate() {
            let ratio = if n == 0 {
                String::new()
            } else {
                self.ratio_estimates[n - 1].to_string()
            };
            out.push_str(&format!("{},{},{}\n", n + 1, r, ratio));
        }
        out
    }
}

/// `(1 − κ) y + κ s`, with `κ = 1` returning `s` untouched.
pub fn relax(y: &DVector<f64>, s: DVector<f64>, kappa: f64) -> DVector<f64> {
    if kappa == 1.0 {
        s
    } else {
        y * (1.0 - kappa) + s * kappa
    }
}

/// Relative step size used as the stopping residual.
pub fn relative_residual(norm: &Norm, prev: &DVector<f64>, next: &DVector<f64>) -> f64 {
    let scale = norm.of(prev);
    if !scale.is_finite() {
        return f64::INFINITY;
    }
    norm.of(&(next - prev)) / scale.max(1.0)
}

/// Krasnosel'skii–Mann iteration `Y_{n+1} = (1 − κ_n) Y_n + κ_n op(Y_n)` from `y0`.
///
/// Stops once the relative residual drops below the tolerance or after
/// `max_iterations` steps. A non-finite iterate or a residual above
/// [`DIVERGENCE_THRESHOLD`] aborts with [`Error::Divergence`] carrying the trace.
pub fn iterate<F>(mut op: F, y0: &DVector<f64>, cfg: &FixedPointConfig) -> Result<(DVector<f64>, IterationTrace)>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    cfg.validate()?;
    if y0.iter().any(|x| !x.is_finite()) {
        return Err(Error::config("initial iterate is not finite"));
    }
    let started = Instant::now();
    let mut trace = IterationTrace::default();
    let mut y = y0.clone();
    for n in 0..cfg.max_iterations {
        let kappa = cfg.kappa.at(n);
        let next = relax(&y, op(&y), kappa);
        let residual = relative_residual(&cfg.norm, &y, &next);
        let finite = next.iter().all(|x| x.is_finite());
        trace.push(if finite { residual } else { f64::INFINITY }, started);
        if !finite || !residual.is_finite() || residual > DIVERGENCE_THRESHOLD {
            let last_residual = trace.last_residual().unwrap_or(f64::INFINITY);
            return Err(Error::Divergence { trace, last_residual });
        }
        y = next;
        if residual < cfg.tolerance {
            trace.converged = true;
            break;
        }
    }
    Ok((y, trace))
}

/// Depth `M*` with `q^{M*}/(1−q)·(C_Δt + ‖Sg − g‖) ≤ ε`, at least 1.
pub fn prescribe_depth(q: f64, eps: f64, c_dt: f64, forcing_gap: f64) -> Result<usize> {
    if !(q > 0.0) {
        return Err(Error::config(format!("contraction factor must be positive, got {q}")));
    }
    if q >= 1.0 {
        return Err(Error::NonContractive(q));
    }
    let scale = c_dt + forcing_gap;
    if !(eps > 0.0) || !(scale > 0.0) {
        return Err(Error::config("depth bound needs eps > 0 and C_dt + gap > 0"));
    }
    let m = ((eps * (1.0 - q) / scale).ln() / q.ln()).ceil();
    Ok(if m < 1.0 { 1 } else { m as usize })
}

/// Largest observed Lipschitz ratio `‖op(u) − op(v)‖ / ‖u − v‖` over the probe pairs.
/// Identical pairs are skipped.
pub fn estimate_contraction<F>(mut op: F, probes: &[(DVector<f64>, DVector<f64>)], norm: &Norm) -> Result<f64>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    if probes.len() < 2 {
        return Err(Error::Estimation("need at least two probe pairs".into()));
    }
    let mut best: Option<f64> = None;
    for (u, v) in probes {
        let d = norm.of(&(u - v));
        if d == 0.0 {
            continue;
        }
        let ratio = norm.of(&(op(u) - op(v))) / d;
        best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
    }
    best.ok_or_else(|| Error::Estimation("every probe pair was degenerate".into()))
}

/// `‖S g − g‖` from a single operator application.
pub fn forcing_gap<F>(mut op: F, g: &DVector<f64>, norm: &Norm) -> f64
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    norm.of(&(op(g) - g))
}

/// A fine Brownian path and its coarse companion on a grid coarser by an integer factor.
#[derive(Debug, Clone)]
pub struct CoupledPaths {
    pub fine: BrownianPath,
    pub coarse: BrownianPath,
}

impl CoupledPaths {
    pub fn from_fine(fine: BrownianPath, factor: usize) -> Result<Self> {
        let coarse = fine.coarsen(factor)?;
        Ok(Self { fine, coarse })
    }
}

fn quadrature_at(
    t: f64,
    grid: &Grid,
    spec: &KernelSpec,
    path: Option<&BrownianPath>,
    forcing: &DVector<f64>,
) -> Result<f64> {
    let (w0, _) = assemble_readout(t, grid, spec, path, 1.0)?;
    Ok(w0.dot(forcing))
}

/// RMS gap, over the path ensemble and the coarse nodes, between the coarse-grid
/// quadrature of `∫K g ds + ∫G g dW` and the same sums on the fine grid.
pub fn estimate_discretization_error(
    spec: &KernelSpec,
    grid_fine: &Grid,
    grid_coarse: &Grid,
    paths: &[CoupledPaths],
) -> Result<f64> {
    let factor = grid_fine
        .refinement_of(grid_coarse)
        .ok_or_else(|| Error::config("fine grid does not refine the coarse grid by an integer factor"))?;
    let g_fine = DVector::from_iterator(grid_fine.len(), grid_fine.nodes().into_iter().map(|t| spec.forcing(t)));
    let g_coarse = DVector::from_iterator(
        grid_coarse.len(),
        grid_coarse.nodes().into_iter().map(|t| spec.forcing(t)),
    );

    let pair_gap = |pair: Option<&CoupledPaths>| -> Result<(f64, usize)> {
        let mut sum = 0.0;
        for c in 0..grid_coarse.len() {
            // Evaluate at the shared node so both sides see identical t.
            let t = grid_fine.node(c * factor);
            let coarse = quadrature_at(t, grid_coarse, spec, pair.map(|p| &p.coarse), &g_coarse)?;
            let fine = quadrature_at(t, grid_fine, spec, pair.map(|p| &p.fine), &g_fine)?;
            sum += (coarse - fine).powi(2);
        }
        Ok((sum, grid_coarse.len()))
    };

    let (total, count) = if spec.stochastic.is_none() {
        pair_gap(None)?
    } else {
        if paths.is_empty() {
            return Err(Error::config("a stochastic kernel needs a non-empty path ensemble"));
        }
        let mut total = 0.0;
        let mut count = 0;
        for pair in paths {
            check_coupling(pair, grid_fine, grid_coarse, factor)?;
            let (s, c) = pair_gap(Some(pair))?;
            total += s;
            count += c;
        }
        (total, count)
    };
    Ok((total / count as f64).sqrt())
}

fn check_coupling(pair: &CoupledPaths, fine: &Grid, coarse: &Grid, factor: usize) -> Result<()> {
    if pair.fine.grid != *fine || pair.coarse.grid != *coarse {
        return Err(Error::config("path grids do not match the supplied grids"));
    }
    for (c, chunk) in pair.fine.increments.chunks(factor).enumerate() {
        let sum: f64 = chunk.iter().sum();
        let scale = chunk.iter().map(|x| x.abs()).sum::<f64>().max(1e-300);
        if (sum - pair.coarse.increments[c]).abs() > 1e-12 * scale {
            return Err(Error::config(format!(
                "coarse increment {c} is not the sum of its fine increments"
            )));
        }
    }
    Ok(())
}

/// A-priori mean-square error bound of the depth-`M` network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBoundReport {
    pub q: f64,
    pub c_dt: f64,
    pub forcing_gap: f64,
    pub depth: usize,
    /// `q^M / (1 − q) · (C_Δt + ‖Sg − g‖)`.
    pub bound: f64,
    pub m_star: usize,
}

impl ErrorBoundReport {
    pub fn new(q: f64, c_dt: f64, forcing_gap: f64, depth: usize, eps: f64) -> Result<Self> {
        let m_star = prescribe_depth(q, eps, c_dt, forcing_gap)?;
        Ok(Self {
            q,
            c_dt,
            forcing_gap,
            depth,
            bound: Self::bound_at(q, c_dt, forcing_gap, depth),
            m_star,
        })
    }

    pub fn bound_at(q: f64, c_dt: f64, forcing_gap: f64, depth: usize) -> f64 {
        q.powi(depth as i32) / (1.0 - q) * (c_dt + forcing_gap)
    }
}
