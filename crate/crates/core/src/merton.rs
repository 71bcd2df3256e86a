//! Merton jump diffusion as a stochastic Volterra–Fredholm fixed point whose
//! drift kernel is learned (SFVNN), with exact pathwise simulation as oracle.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fixed_point::{IterationTrace, DIVERGENCE_THRESHOLD};
use crate::grid::Grid;
use crate::neural_kernel::{cyclic_batch, reinitialize_for_outer, train_step, NeuralKernel, ResidualProblem, TrainState};
use crate::stochastic::{sample_brownian, sample_jumps, BrownianPath, JumpPath, LogNormalParams, RandomSeed};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MertonConfig {
    pub mu: f64,
    pub sigma: f64,
    /// Jump intensity `λ`.
    pub intensity: f64,
    pub jump_law: LogNormalParams,
    pub s0: f64,
    pub horizon: f64,
    pub intervals: usize,
}

impl Default for MertonConfig {
    fn default() -> Self {
        Self {
            mu: 0.1,
            sigma: 0.2,
            intensity: 0.5,
            jump_law: LogNormalParams {
                mean_log: 0.0,
                sd_log: 0.1,
            },
            s0: 100.0,
            horizon: 1.0,
            intervals: 64,
        }
    }
}

impl MertonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !(self.intensity >= 0.0) || !(self.s0 > 0.0) || !self.mu.is_finite() {
            return Err(Error::config("need sigma >= 0, intensity >= 0, s0 > 0 and finite mu"));
        }
        if !(self.horizon > 0.0) || self.intervals == 0 {
            return Err(Error::config("need a positive horizon and at least one interval"));
        }
        LogNormalParams::new(self.jump_law.mean_log, self.jump_law.sd_log)?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(0.0, self.horizon, self.intervals + 1)
    }

    /// `μ̃ = μ + λ E[J − 1]`.
    pub fn compensated_drift(&self) -> f64 {
        self.mu + self.intensity * (self.jump_law.mean() - 1.0)
    }

    /// True drift kernel `μ̃ · 1{s ≤ t}` on the grid.
    pub fn true_kernel_matrix(&self) -> Result<DMatrix<f64>> {
        let n = self.grid()?.len();
        let m = self.compensated_drift();
        Ok(DMatrix::from_fn(n, n, |i, j| if j <= i { m } else { 0.0 }))
    }
}

/// One simulated path with the random ingredients that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MertonPath {
    pub brownian: BrownianPath,
    pub jumps: JumpPath,
    /// Exact solution on the grid.
    pub s: DVector<f64>,
}

impl MertonPath {
    /// `σ ΔW_j + (compensated jump increment)_j` paired with node `j`; zero at the last node.
    pub fn noise_increments(&self, cfg: &MertonConfig) -> Vec<f64> {
        let grid = self.brownian.grid;
        let marks = self.jumps.compensated_marks(&grid);
        let mut out: Vec<f64> = self
            .brownian
            .increments
            .iter()
            .zip(&marks)
            .map(|(dw, m)| cfg.sigma * dw + m)
            .collect();
        out.push(0.0);
        out
    }
}

/// `S(t_i) = S0 exp((μ − σ²/2) t_i + σ W(t_i)) Π_{τ_k ≤ t_i} J_k`.
pub fn simulate_merton_path(cfg: &MertonConfig, seed: RandomSeed) -> Result<MertonPath> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let brownian = sample_brownian(&grid, seed)?;
    let jumps = sample_jumps(cfg.horizon, cfg.intensity, cfg.jump_law, seed)?;
    Ok(exact_solution(cfg, brownian, jumps))
}

/// Exact solution for given Brownian and jump realizations.
pub fn exact_solution(cfg: &MertonConfig, brownian: BrownianPath, jumps: JumpPath) -> MertonPath {
    let grid = brownian.grid;
    let w = brownian.cumulative();
    let drift = cfg.mu - 0.5 * cfg.sigma * cfg.sigma;
    let s = DVector::from_fn(grid.len(), |i, _| {
        let t = grid.node(i);
        cfg.s0 * (drift * t + cfg.sigma * w[i]).exp() * jumps.cumulative_factor(t)
    });
    MertonPath { brownian, jumps, s }
}

pub fn simulate_ensemble(cfg: &MertonConfig, seed: u64, n_paths: usize) -> Result<Vec<MertonPath>> {
    (0..n_paths as u64)
        .map(|p| simulate_merton_path(cfg, RandomSeed::new(seed, p)))
        .collect()
}

/// `S0 + Δt Σ_j K_ij S_j + Σ_{j<i} S_j (σΔW_j + ΔJ̃_j)`.
pub fn outer_step(kernel: &DMatrix<f64>, s: &DVector<f64>, noise: &[f64], s0: f64, dt: f64) -> DVector<f64> {
    let n = s.len();
    let mut out = DVector::from_element(n, s0);
    out.gemv(dt, kernel, s, 1.0);
    let mut acc = 0.0;
    for i in 1..n {
        acc += s[i - 1] * noise[i - 1];
        out[i] += acc;
    }
    out
}

/// [`outer_step`] written with raw jump counts and the compensator `λE[J−1]dt`
/// subtracted separately. Agrees with the compensated form up to rounding.
pub fn outer_step_uncompensated(
    kernel: &DMatrix<f64>,
    s: &DVector<f64>,
    path: &MertonPath,
    cfg: &MertonConfig,
) -> DVector<f64> {
    let grid = path.brownian.grid;
    let dt = grid.step();
    let raw = path.jumps.raw_marks(&grid);
    let comp = cfg.intensity * (cfg.jump_law.mean() - 1.0) * dt;
    let n = s.len();
    let mut out = DVector::from_element(n, cfg.s0);
    out.gemv(dt, kernel, s, 1.0);
    let (mut diffusion, mut jumps, mut compensator) = (0.0, 0.0, 0.0);
    for i in 1..n {
        diffusion += s[i - 1] * cfg.sigma * path.brownian.increments[i - 1];
        jumps += s[i - 1] * raw[i - 1];
        compensator += s[i - 1] * comp;
        out[i] += diffusion + jumps - compensator;
    }
    out
}

/// Fixed point of [`outer_step`] by a direct dense solve.
pub fn direct_fixed_point(kernel: &DMatrix<f64>, noise: &[f64], s0: f64, dt: f64) -> Result<DVector<f64>> {
    let n = kernel.nrows();
    let mut m = DMatrix::identity(n, n) - kernel * dt;
    for i in 1..n {
        for j in 0..i {
            m[(i, j)] -= noise[j];
        }
    }
    let rhs = DVector::from_element(n, s0);
    let causal = (0..n).all(|i| (i + 1..n).all(|j| kernel[(i, j)] == 0.0));
    let solution = if causal {
        m.solve_lower_triangular(&rhs)
    } else {
        m.lu().solve(&rhs)
    };
    solution.ok_or_else(|| Error::Singular("outer fixed-point system".into()))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SfvnnState {
    /// Current outer iterate, one vector per path.
    pub s: Vec<DVector<f64>>,
    pub outer_k: usize,
    /// Path-averaged `‖S^{k+1} − S^k‖ / ‖S^k‖`.
    pub fp_residuals: Vec<f64>,
    /// Path-averaged `‖S^k − S*‖ / ‖S*‖` against the true-kernel fixed point.
    pub nn_errors: Vec<f64>,
}

/// Noise increments and true-kernel fixed points of an ensemble.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub paths: Vec<MertonPath>,
    pub noise: Vec<Vec<f64>>,
    pub reference: Vec<DVector<f64>>,
}

impl Ensemble {
    pub fn new(cfg: &MertonConfig, paths: Vec<MertonPath>) -> Result<Self> {
        if paths.is_empty() {
            return Err(Error::config("ensemble needs at least one path"));
        }
        let dt = cfg.grid()?.step();
        let truth = cfg.true_kernel_matrix()?;
        let noise: Vec<Vec<f64>> = paths.iter().map(|p| p.noise_increments(cfg)).collect();
        let reference = noise
            .iter()
            .map(|z| direct_fixed_point(&truth, z, cfg.s0, dt))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { paths, noise, reference })
    }

    /// Residual-loss data: the exact paths as kernel inputs, and
    /// `S − S0 − Σ_{j<i} S_j(σΔW_j + ΔJ̃_j)` as targets.
    pub fn residual_problem(&self, cfg: &MertonConfig) -> Result<ResidualProblem> {
        let grid = cfg.grid()?;
        let inputs: Vec<DVector<f64>> = self.paths.iter().map(|p| p.s.clone()).collect();
        let targets = inputs
            .iter()
            .zip(&self.noise)
            .map(|(s, z)| {
                let zero = DMatrix::zeros(s.len(), s.len());
                s - outer_step(&zero, s, z, cfg.s0, grid.step())
            })
            .collect();
        ResidualProblem::new(grid, inputs, targets, cfg.s0)
    }

    pub fn initial_state(&self, cfg: &MertonConfig) -> SfvnnState {
        let n = self.noise[0].len();
        SfvnnState {
            s: vec![DVector::from_element(n, cfg.s0); self.paths.len()],
            ..SfvnnState::default()
        }
    }
}

fn relative_gap(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// One outer iteration `S^{k+1} = T_θ(S^k)` on every path of the ensemble.
pub fn sfvnn_outer_iterate(
    state: &SfvnnState,
    kernel: &DMatrix<f64>,
    ensemble: &Ensemble,
    cfg: &MertonConfig,
) -> Result<SfvnnState> {
    let dt = cfg.grid()?.step();
    let mut next = Vec::with_capacity(state.s.len());
    let (mut residual, mut error) = (0.0, 0.0);
    for ((s, z), reference) in state.s.iter().zip(&ensemble.noise).zip(&ensemble.reference) {
        let s_next = outer_step(kernel, s, z, cfg.s0, dt);
        residual += relative_gap(&s_next, s);
        error += relative_gap(&s_next, reference);
        next.push(s_next);
    }
    let p = state.s.len() as f64;
    let mut out = SfvnnState {
        s: next,
        outer_k: state.outer_k + 1,
        fp_residuals: state.fp_residuals.clone(),
        nn_errors: state.nn_errors.clone(),
    };
    out.fp_residuals.push(residual / p);
    out.nn_errors.push(error / p);
    Ok(out)
}

/// Where the drift kernel of the outer iteration comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelSource {
    /// Trained neural kernel.
    Learned,
    /// `μ̃ · 1{s ≤ t}`, bypassing training.
    True,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfvnnConfig {
    pub model: MertonConfig,
    pub n_paths: usize,
    pub seed: u64,
    pub init_seed: u64,
    pub sweeps: usize,
    pub steps_per_sweep: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub tolerance: f64,
    pub max_outer: usize,
    pub kernel_source: KernelSource,
}

impl Default for SfvnnConfig {
    fn default() -> Self {
        Self {
            model: MertonConfig::default(),
            n_paths: 64,
            seed: 2024,
            init_seed: 7,
            sweeps: 12,
            steps_per_sweep: 1000,
            learning_rate: 1e-2,
            batch_size: 16,
            tolerance: 1e-12,
            max_outer: 20,
            kernel_source: KernelSource::Learned,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SfvnnReport {
    pub state: SfvnnState,
    pub training: TrainState,
    /// Final network, or `None` when the true kernel was used.
    pub network: Option<NeuralKernel>,
    pub kernel: DMatrix<f64>,
    pub converged: bool,
    pub trace: IterationTrace,
}

/// Trains `sweeps` freshly initialized kernels on the residual loss (losses
/// concatenated), then runs the outer fixed point with the last kernel
/// until the residual drops below `tolerance` or `max_outer` is reached.
pub fn run_sfvnn(cfg: &SfvnnConfig) -> Result<SfvnnReport> {
    if cfg.batch_size == 0 || cfg.max_outer == 0 {
        return Err(Error::config("batch size and outer budget must be positive"));
    }
    let model = &cfg.model;
    let grid = model.grid()?;
    let ensemble = Ensemble::new(model, simulate_ensemble(model, cfg.seed, cfg.n_paths)?)?;
    let mut training = TrainState::new(cfg.learning_rate)?;

    let (network, kernel) = match cfg.kernel_source {
        KernelSource::True => (None, model.true_kernel_matrix()?),
        KernelSource::Learned => {
            if cfg.sweeps == 0 {
                return Err(Error::config("a learned kernel needs at least one training sweep"));
            }
            let problem = ensemble.residual_problem(model)?;
            let base = NeuralKernel::new(RandomSeed::new(cfg.init_seed, 0), (grid.lower(), grid.upper()))?;
            let mut nk = base.clone();
            for _ in 0..cfg.sweeps {
                nk = reinitialize_for_outer(&base, &mut training)?;
                for step in 0..cfg.steps_per_sweep {
                    let batch = cyclic_batch(step, problem.len(), cfg.batch_size);
                    train_step(&mut nk, &mut training, &problem, &batch)?;
                }
            }
            let (k, _) = nk.kernel_matrix(&grid);
            (Some(nk), k)
        }
    };

    let started = Instant::now();
    let mut trace = IterationTrace::default();
    let mut state = ensemble.initial_state(model);
    let mut converged = false;
    for _ in 0..cfg.max_outer {
        state = sfvnn_outer_iterate(&state, &kernel, &ensemble, model)?;
        let r = *state.fp_residuals.last().expect("one residual per iteration");
        trace.push(r, started);
        if !r.is_finite() || r > DIVERGENCE_THRESHOLD {
            return Err(Error::Divergence { trace, last_residual: r });
        }
        if r < cfg.tolerance {
            converged = true;
            break;
        }
    }
    trace.converged = converged;
    Ok(SfvnnReport {
        state,
        training,
        network,
        kernel,
        converged,
        trace,
    })
}
