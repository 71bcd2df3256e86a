//! Seedable random ingredients: Brownian increments, Poisson jump times and
//! lognormal jump multipliers.
//!
//! Every draw is addressed by `(seed, stream_id, domain, draw_index)` through a
//! ChaCha20 block counter, so path `j` of an ensemble can be regenerated without
//! touching paths `0..j` and results do not depend on thread scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Seed of one random stream. `stream_id` is the path index within an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RandomSeed {
    pub seed: u64,
    pub stream_id: u64,
}

impl RandomSeed {
    pub const fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub const fn with_stream(self, stream_id: u64) -> Self {
        Self { seed: self.seed, stream_id }
    }
}

/// Disjoint regions of one ChaCha stream, so Brownian and jump draws never overlap.
#[derive(Debug, Clone, Copy)]
enum Domain {
    Brownian = 0,
    JumpTimes = 1,
    JumpMarks = 2,
    Init = 3,
}

/// Sequential uniform / Gaussian draws from one addressed region of a stream.
pub struct CounterStream {
    rng: ChaCha20Rng,
}

impl CounterStream {
    fn open(seed: RandomSeed, domain: Domain) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed.seed);
        rng.set_stream(seed.stream_id);
        // 2^48 words per domain is far beyond any path length used here.
        rng.set_word_pos((domain as u128) << 48);
        Self { rng }
    }

    /// Stream used for parameter initialization (network weights).
    pub fn for_init(seed: RandomSeed) -> Self {
        Self::open(seed, Domain::Init)
    }

    /// Uniform draw in the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        let bits = self.rng.next_u64() >> 11;
        (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw by inverse CDF of a uniform.
    pub fn standard_normal(&mut self) -> f64 {
        standard_normal().inverse_cdf(self.uniform())
    }
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// One realization of Brownian increments on a grid, `increments[j] = W(t_{j+1}) − W(t_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub grid: Grid,
    pub increments: Vec<f64>,
}

impl BrownianPath {
    /// Increment paired with node `j` under the left-point (Itô) convention.
    /// The last node has no forward interval and pairs with zero.
    pub fn node_increments(&self) -> Vec<f64> {
        let mut out = self.increments.clone();
        out.push(0.0);
        out
    }

    /// Brownian motion values `W(t_i)` with `W(t_0) = 0`.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.increments.len() + 1);
        let mut acc = 0.0;
        w.push(acc);
        for dw in &self.increments {
            acc += dw;
            w.push(acc);
        }
        w
    }

    /// Path on a grid coarser by `factor`, with increments summed so both paths
    /// describe the same Brownian motion.
    pub fn coarsen(&self, factor: usize) -> Result<BrownianPath> {
        let grid = self.grid.coarsen(factor)?;
        let increments = self
            .increments
            .chunks(factor)
            .map(|c| c.iter().sum())
            .collect();
        Ok(BrownianPath { grid, increments })
    }
}

/// Gaussian increments with variance `dt`. A zero `dt` yields exact zeros.
pub fn gaussian_increments(n: usize, dt: f64, seed: RandomSeed) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::config("cannot sample increments for an empty grid"));
    }
    if !(dt >= 0.0) {
        return Err(Error::config(format!("step must be non-negative, got {dt}")));
    }
    let scale = dt.sqrt();
    let mut stream = CounterStream::open(seed, Domain::Brownian);
    Ok((0..n).map(|_| scale * stream.standard_normal()).collect())
}

pub fn sample_brownian(grid: &Grid, seed: RandomSeed) -> Result<BrownianPath> {
    let increments = gaussian_increments(grid.intervals(), grid.step(), seed)?;
    Ok(BrownianPath {
        grid: *grid,
        increments,
    })
}

/// Law of the jump multiplier `J = exp(mean_log + sd_log · Z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalParams {
    pub mean_log: f64,
    pub sd_log: f64,
}

impl LogNormalParams {
    pub fn new(mean_log: f64, sd_log: f64) -> Result<Self> {
        if !(sd_log >= 0.0) || !mean_log.is_finite() || !sd_log.is_finite() {
            return Err(Error::config(format!(
                "invalid lognormal parameters ({mean_log}, {sd_log})"
            )));
        }
        Ok(Self { mean_log, sd_log })
    }

    /// `E[J] = exp(m + s²/2)`.
    pub fn mean(&self) -> f64 {
        (self.mean_log + 0.5 * self.sd_log * self.sd_log).exp()
    }
}

/// Realized jumps of a compound Poisson process on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpPath {
    pub horizon: f64,
    pub jump_times: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub intensity: f64,
    /// `λ · (E[J] − 1)`.
    pub compensator_drift: f64,
}

impl JumpPath {
    pub fn empty(horizon: f64) -> Self {
        Self {
            horizon,
            jump_times: Vec::new(),
            multipliers: Vec::new(),
            intensity: 0.0,
            compensator_drift: 0.0,
        }
    }

    pub fn count(&self) -> usize {
        self.jump_times.len()
    }

    /// Product of multipliers of all jumps at or before `t`.
    pub fn cumulative_factor(&self, t: f64) -> f64 {
        self.jump_times
            .iter()
            .zip(&self.multipliers)
            .take_while(|(tau, _)| **tau <= t)
            .map(|(_, j)| *j)
            .product()
    }

    /// Per grid interval, `Σ (J_k − 1)` over jumps in `(t_j, t_{j+1}]`
    /// (a jump at exactly `t_0` falls in the first interval).
    pub fn raw_marks(&self, grid: &Grid) -> Vec<f64> {
        let mut marks = vec![0.0; grid.intervals()];
        for (&tau, &j) in self.jump_times.iter().zip(&self.multipliers) {
            let idx = grid.interval_containing(tau);
            marks[idx] += j - 1.0;
        }
        marks
    }

    /// Per grid interval, the compensated-jump increment
    /// `Σ (J_k − 1) − λ·E[J − 1]·Δt`.
    pub fn compensated_marks(&self, grid: &Grid) -> Vec<f64> {
        let comp = self.compensator_drift * grid.step();
        self.raw_marks(grid).into_iter().map(|m| m - comp).collect()
    }
}

pub fn sample_jumps(
    horizon: f64,
    intensity: f64,
    jump_law: LogNormalParams,
    seed: RandomSeed,
) -> Result<JumpPath> {
    if !(intensity >= 0.0) || !intensity.is_finite() {
        return Err(Error::config(format!("jump intensity must be >= 0, got {intensity}")));
    }
    if !(horizon > 0.0) {
        return Err(Error::config(format!("horizon must be positive, got {horizon}")));
    }
    let compensator_drift = intensity * (jump_law.mean() - 1.0);
    if intensity == 0.0 {
        return Ok(JumpPath {
            compensator_drift,
            ..JumpPath::empty(horizon)
        });
    }
    let mut times_stream = CounterStream::open(seed, Domain::JumpTimes);
    let mut marks_stream = CounterStream::open(seed, Domain::JumpMarks);
    let mut jump_times = Vec::new();
    let mut multipliers = Vec::new();
    let mut t = 0.0;
    loop {
        t += -times_stream.uniform().ln() / intensity;
        if t > horizon {
            break;
        }
        jump_times.push(t);
        let z = marks_stream.standard_normal();
        multipliers.push((jump_law.mean_log + jump_law.sd_log * z).exp());
    }
    Ok(JumpPath {
        horizon,
        jump_times,
        multipliers,
        intensity,
        compensator_drift,
    })
}
