//! Tanh MLP `K_θ(t, s)` (2 → 32 → 32 → 1) trained by plain SGD on a
//! quadrature residual loss.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::stochastic::{CounterStream, RandomSeed};

pub const HIDDEN: usize = 32;
const INPUTS: usize = 2;

const W1: usize = 0;
const B1: usize = W1 + HIDDEN * INPUTS;
const W2: usize = B1 + HIDDEN;
const B2: usize = W2 + HIDDEN * HIDDEN;
const W3: usize = B2 + HIDDEN;
const B3: usize = W3 + HIDDEN;

/// Number of trainable parameters.
pub const PARAM_COUNT: usize = B3 + 1;

const MAGIC: &[u8; 4] = b"SFNK";
const FORMAT_VERSION: u32 = 1;

/// Width of the trailing moving average over the loss history.
pub const MOVING_AVERAGE_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralKernel {
    /// Flat parameters: `W1` (row-major 32×2), `b1`, `W2` (row-major 32×32), `b2`, `w3`, `b3`.
    pub theta: Vec<f64>,
    pub init_seed: RandomSeed,
    /// Interval mapped onto `[0, 1]` for both inputs.
    pub domain: (f64, f64),
}

/// Hidden activations of a batched forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: DMatrix<f64>,
    h1: DMatrix<f64>,
    h2: DMatrix<f64>,
}

fn check_domain(domain: (f64, f64)) -> Result<()> {
    if !(domain.1 > domain.0) || !domain.0.is_finite() || !domain.1.is_finite() {
        return Err(Error::config(format!("kernel domain [{}, {}] is empty", domain.0, domain.1)));
    }
    Ok(())
}

impl NeuralKernel {
    /// Glorot-uniform weights and zero biases drawn from `init_seed`.
    pub fn new(init_seed: RandomSeed, domain: (f64, f64)) -> Result<Self> {
        check_domain(domain)?;
        let mut stream = CounterStream::for_init(init_seed);
        let mut theta = vec![0.0; PARAM_COUNT];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut theta[range] {
                *p = a * (2.0 * stream.uniform() - 1.0);
            }
        };
        fill(W1..B1, INPUTS, HIDDEN);
        fill(W2..B2, HIDDEN, HIDDEN);
        fill(W3..B3, HIDDEN, 1);
        Ok(Self {
            theta,
            init_seed,
            domain,
        })
    }

    pub fn zeros(domain: (f64, f64)) -> Result<Self> {
        Self::from_theta(vec![0.0; PARAM_COUNT], RandomSeed::default(), domain)
    }

    pub fn from_theta(theta: Vec<f64>, init_seed: RandomSeed, domain: (f64, f64)) -> Result<Self> {
        check_domain(domain)?;
        if theta.len() != PARAM_COUNT {
            return Err(Error::Dimension {
                expected: PARAM_COUNT,
                found: theta.len(),
            });
        }
        Ok(Self {
            theta,
            init_seed,
            domain,
        })
    }

    /// Fresh parameters for outer sweep `outer_k`, derived from `init_seed` and `outer_k`.
    pub fn reinitialized(&self, outer_k: usize) -> Result<Self> {
        if outer_k == 0 {
            return Err(Error::config("outer sweep index starts at 1"));
        }
        let seed = RandomSeed::new(self.init_seed.seed, self.init_seed.stream_id ^ ((outer_k as u64) << 32));
        let mut fresh = Self::new(seed, self.domain)?;
        fresh.init_seed = self.init_seed;
        Ok(fresh)
    }

    fn normalize(&self, x: f64) -> f64 {
        (x - self.domain.0) / (self.domain.1 - self.domain.0)
    }

    /// `K_θ(t, s)`.
    pub fn forward(&self, t: f64, s: f64) -> f64 {
        let x = [self.normalize(t), self.normalize(s)];
        let th = &self.theta;
        let mut h1 = [0.0; HIDDEN];
        for (h, out) in h1.iter_mut().enumerate() {
            *out = (th[W1 + 2 * h] * x[0] + th[W1 + 2 * h + 1] * x[1] + th[B1 + h]).tanh();
        }
        let mut y = th[B3];
        for h in 0..HIDDEN {
            let row = &th[W2 + h * HIDDEN..W2 + (h + 1) * HIDDEN];
            let z = row.iter().zip(&h1).map(|(w, a)| w * a).sum::<f64>() + th[B2 + h];
            y += th[W3 + h] * z.tanh();
        }
        y
    }

    /// `∂K_θ(t, s)/∂θ`.
    pub fn gradient(&self, t: f64, s: f64) -> Vec<f64> {
        let (_, cache) = self.forward_batch(&[(t, s)]);
        self.backward(&cache, &[1.0])
    }

    #[allow(clippy::type_complexity)]
    fn layers(&self) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>, DVector<f64>, f64) {
        let th = &self.theta;
        (
            DMatrix::from_row_slice(HIDDEN, INPUTS, &th[W1..B1]),
            DVector::from_column_slice(&th[B1..W2]),
            DMatrix::from_row_slice(HIDDEN, HIDDEN, &th[W2..B2]),
            DVector::from_column_slice(&th[B2..W3]),
            DVector::from_column_slice(&th[W3..B3]),
            th[B3],
        )
    }

    /// Evaluates the network at many points at once.
    pub fn forward_batch(&self, points: &[(f64, f64)]) -> (Vec<f64>, ForwardCache) {
        let inputs = DMatrix::from_fn(INPUTS, points.len(), |r, c| {
            let (t, s) = points[c];
            self.normalize(if r == 0 { t } else { s })
        });
        self.forward_inputs(inputs)
    }

    fn forward_inputs(&self, inputs: DMatrix<f64>) -> (Vec<f64>, ForwardCache) {
        let (w1, b1, w2, b2, w3, b3) = self.layers();
        let mut h1 = &w1 * &inputs;
        for mut col in h1.column_iter_mut() {
            col += &b1;
            col.apply(|z| *z = z.tanh());
        }
        let mut h2 = &w2 * &h1;
        for mut col in h2.column_iter_mut() {
            col += &b2;
            col.apply(|z| *z = z.tanh());
        }
        let out = (w3.transpose() * &h2).iter().map(|v| v + b3).collect();
        (out, ForwardCache { inputs, h1, h2 })
    }

    /// `Σ_p upstream[p] · ∂K_θ(point_p)/∂θ` for the points of `cache`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Vec<f64> {
        let (_, _, w2, _, w3, _) = self.layers();
        let g = DVector::from_column_slice(upstream);
        let mut grad = vec![0.0; PARAM_COUNT];

        let gw3 = &cache.h2 * &g;
        grad[W3..B3].copy_from_slice(gw3.as_slice());
        grad[B3] = g.sum();

        let mut dz2 = &w3 * g.transpose();
        dz2.zip_apply(&cache.h2, |d, h| *d *= 1.0 - h * h);
        let gw2 = &dz2 * cache.h1.transpose();
        write_row_major(&mut grad[W2..B2], &gw2);
        grad[B2..W3].copy_from_slice(dz2.column_sum().as_slice());

        let mut dz1 = w2.transpose() * &dz2;
        dz1.zip_apply(&cache.h1, |d, h| *d *= 1.0 - h * h);
        let gw1 = &dz1 * cache.inputs.transpose();
        write_row_major(&mut grad[W1..B1], &gw1);
        grad[B1..W2].copy_from_slice(dz1.column_sum().as_slice());
        grad
    }

    /// `K_θ(t_i, t_j)` on every pair of grid nodes.
    pub fn kernel_matrix(&self, grid: &Grid) -> (DMatrix<f64>, ForwardCache) {
        let n = grid.len();
        let nodes: Vec<f64> = grid.nodes().iter().map(|&t| self.normalize(t)).collect();
        // Column p = i + n·j holds the pair (t_i, t_j), matching column-major storage.
        let inputs = DMatrix::from_fn(INPUTS, n * n, |r, p| if r == 0 { nodes[p % n] } else { nodes[p / n] });
        let (values, cache) = self.forward_inputs(inputs);
        (DMatrix::from_vec(n, n, values), cache)
    }

    /// Parameter gradient of `Σ_ij upstream_ij K_θ(t_i, t_j)` given the cache of [`Self::kernel_matrix`].
    pub fn kernel_matrix_backward(&self, cache: &ForwardCache, upstream: &DMatrix<f64>) -> Vec<f64> {
        self.backward(cache, upstream.as_slice())
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [FORMAT_VERSION, INPUTS as u32, HIDDEN as u32, 2] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(PARAM_COUNT as u64).to_le_bytes())?;
        w.write_all(&self.init_seed.seed.to_le_bytes())?;
        w.write_all(&self.init_seed.stream_id.to_le_bytes())?;
        w.write_all(&self.domain.0.to_le_bytes())?;
        w.write_all(&self.domain.1.to_le_bytes())?;
        for p in &self.theta {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::config("not a kernel checkpoint"));
        }
        let mut u32s = [0u32; 4];
        for v in &mut u32s {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *v = u32::from_le_bytes(b);
        }
        if u32s != [FORMAT_VERSION, INPUTS as u32, HIDDEN as u32, 2] {
            return Err(Error::config(format!("unsupported checkpoint header {u32s:?}")));
        }
        let mut read8 = || -> Result<[u8; 8]> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(b)
        };
        let count = u64::from_le_bytes(read8()?) as usize;
        if count != PARAM_COUNT {
            return Err(Error::Dimension {
                expected: PARAM_COUNT,
                found: count,
            });
        }
        let seed = RandomSeed::new(u64::from_le_bytes(read8()?), u64::from_le_bytes(read8()?));
        let domain = (f64::from_le_bytes(read8()?), f64::from_le_bytes(read8()?));
        let theta = (0..count)
            .map(|_| read8().map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        Self::from_theta(theta, seed, domain)
    }
}

fn write_row_major(dst: &mut [f64], m: &DMatrix<f64>) {
    for (k, v) in dst.iter_mut().enumerate() {
        *v = m[(k / m.ncols(), k % m.ncols())];
    }
}

/// Paths entering the residual `R_p = y_p − Δt · K_θ x_p` on a grid.
///
/// `inputs[p]` is the path multiplied by the kernel and `targets[p]` the rest
/// of the equation moved to one side. The loss is
/// `mean_p Σ_i Δt R_p(t_i)² / scale²`.
#[derive(Debug, Clone)]
pub struct ResidualProblem {
    pub grid: Grid,
    pub inputs: Vec<DVector<f64>>,
    pub targets: Vec<DVector<f64>>,
    pub scale: f64,
}

impl ResidualProblem {
    pub fn new(grid: Grid, inputs: Vec<DVector<f64>>, targets: Vec<DVector<f64>>, scale: f64) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::config("residual loss needs at least one path"));
        }
        if inputs.len() != targets.len() {
            return Err(Error::Dimension {
                expected: inputs.len(),
                found: targets.len(),
            });
        }
        if let Some(bad) = inputs.iter().chain(&targets).find(|v| v.len() != grid.len()) {
            return Err(Error::Dimension {
                expected: grid.len(),
                found: bad.len(),
            });
        }
        if !(scale > 0.0) {
            return Err(Error::config(format!("loss scale must be positive, got {scale}")));
        }
        Ok(Self {
            grid,
            inputs,
            targets,
            scale,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn check_batch(&self, batch: &[usize]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::config("empty minibatch"));
        }
        if let Some(&p) = batch.iter().find(|&&p| p >= self.len()) {
            return Err(Error::Dimension {
                expected: self.len(),
                found: p,
            });
        }
        Ok(())
    }

    /// Residual columns `R_p` for the given kernel matrix.
    pub fn residuals(&self, kernel: &DMatrix<f64>, batch: &[usize]) -> DMatrix<f64> {
        let dt = self.grid.step();
        let x = DMatrix::from_columns(&batch.iter().map(|&p| self.inputs[p].clone()).collect::<Vec<_>>());
        let y = DMatrix::from_columns(&batch.iter().map(|&p| self.targets[p].clone()).collect::<Vec<_>>());
        y - kernel * x * dt
    }

    fn loss_of(&self, r: &DMatrix<f64>) -> f64 {
        r.norm_squared() * self.grid.step() / (self.scale * self.scale * r.ncols() as f64)
    }

    /// Loss and its gradient with respect to `θ` on a minibatch.
    pub fn loss_and_gradient(&self, nk: &NeuralKernel, batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check_batch(batch)?;
        let (k, cache) = nk.kernel_matrix(&self.grid);
        let r = self.residuals(&k, batch);
        let dt = self.grid.step();
        let x = DMatrix::from_columns(&batch.iter().map(|&p| self.inputs[p].clone()).collect::<Vec<_>>());
        let c = -2.0 * dt * dt / (self.scale * self.scale * batch.len() as f64);
        let upstream = &r * x.transpose() * c;
        Ok((self.loss_of(&r), nk.kernel_matrix_backward(&cache, &upstream)))
    }
}

/// Loss of `nk` over the listed paths (all paths when `batch` is `None`).
pub fn residual_loss(nk: &NeuralKernel, problem: &ResidualProblem, batch: Option<&[usize]>) -> Result<f64> {
    let all: Vec<usize> = (0..problem.len()).collect();
    let batch = batch.unwrap_or(&all);
    problem.check_batch(batch)?;
    let (k, _) = nk.kernel_matrix(&problem.grid);
    Ok(problem.loss_of(&problem.residuals(&k, batch)))
}

/// Minibatch `step` of a cyclic sweep through `n_paths` paths.
pub fn cyclic_batch(step: usize, n_paths: usize, batch_size: usize) -> Vec<usize> {
    (0..batch_size.min(n_paths)).map(|i| (step * batch_size + i) % n_paths).collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainState {
    pub step: usize,
    pub learning_rate: f64,
    pub loss_history: Vec<f64>,
    pub moving_average: Vec<f64>,
    /// Outer sweep in which each recorded step ran.
    pub outer_history: Vec<usize>,
    pub outer_iteration: usize,
}

impl TrainState {
    pub fn new(learning_rate: f64) -> Result<Self> {
        if !(learning_rate >= 0.0) || !learning_rate.is_finite() {
            return Err(Error::config(format!("learning rate must be >= 0, got {learning_rate}")));
        }
        Ok(Self {
            learning_rate,
            ..Self::default()
        })
    }

    pub fn record(&mut self, loss: f64) {
        self.loss_history.push(loss);
        let i = self.loss_history.len();
        let window = &self.loss_history[i.saturating_sub(MOVING_AVERAGE_WINDOW)..];
        self.moving_average.push(window.iter().sum::<f64>() / window.len() as f64);
        self.outer_history.push(self.outer_iteration);
        self.step += 1;
    }

    /// CSV with columns `global_step,outer_iteration,loss,moving_average`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("global_step,outer_iteration,loss,moving_average\n");
        for (i, ((l, m), k)) in self
            .loss_history
            .iter()
            .zip(&self.moving_average)
            .zip(&self.outer_history)
            .enumerate()
        {
            out.push_str(&format!("{},{},{},{}\n", i + 1, k, l, m));
        }
        out
    }
}

/// One SGD step on an arbitrary objective returning `(loss, ∇loss)` at the
/// current parameters. The pre-update loss is recorded.
pub fn train_step_with<F>(nk: &mut NeuralKernel, state: &mut TrainState, objective: F) -> Result<()>
where
    F: FnOnce(&NeuralKernel) -> Result<(f64, Vec<f64>)>,
{
    let (loss, grad) = objective(nk)?;
    if grad.len() != PARAM_COUNT {
        return Err(Error::Dimension {
            expected: PARAM_COUNT,
            found: grad.len(),
        });
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Training {
            step: state.step,
            reason: format!("non-finite loss or gradient (loss = {loss})"),
            theta: nk.theta.clone(),
        });
    }
    if state.learning_rate != 0.0 {
        for (p, g) in nk.theta.iter_mut().zip(&grad) {
            *p -= state.learning_rate * g;
        }
    }
    state.record(loss);
    Ok(())
}

/// SGD step on the residual loss of a minibatch.
pub fn train_step(nk: &mut NeuralKernel, state: &mut TrainState, problem: &ResidualProblem, batch: &[usize]) -> Result<()> {
    train_step_with(nk, state, |k| problem.loss_and_gradient(k, batch))
}

/// Starts the next outer sweep: fresh parameters and an incremented sweep counter.
/// The loss history carries over.
pub fn reinitialize_for_outer(nk: &NeuralKernel, state: &mut TrainState) -> Result<NeuralKernel> {
    let fresh = nk.reinitialized(state.outer_iteration + 1)?;
    state.outer_iteration += 1;
    Ok(fresh)
}
