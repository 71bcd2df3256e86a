//! The three network families built from discretized integral operators:
//! the weight-tied linear SFNN, the nonlinear DSFNN and the stochastic
//! Volterra–Fredholm operator network.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fixed_point::{iterate, FixedPointConfig, IterationTrace};
use crate::grid::{affine_row, assemble_layer, assemble_readout, kernel_l2_norm, Grid, KernelSpec, LayerParams};
use crate::stochastic::BrownianPath;

/// Linear SFNN: one affine layer `Y ↦ W Y + b` applied `depth` times.
#[derive(Debug, Clone)]
pub struct LinearSfnn {
    pub layer: LayerParams,
    pub depth: usize,
    source: Option<(Grid, KernelSpec, Option<BrownianPath>)>,
}

impl LinearSfnn {
    pub fn new(grid: &Grid, spec: &KernelSpec, path: Option<&BrownianPath>, kappa: f64, depth: usize) -> Result<Self> {
        let layer = assemble_layer(grid, spec, path, kappa)?;
        let mut net = Self::from_layer(layer, depth)?;
        net.source = Some((*grid, spec.clone(), path.cloned()));
        Ok(net)
    }

    /// Network over raw weights; off-grid readout is unavailable.
    pub fn from_layer(layer: LayerParams, depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::config("network depth must be at least 1"));
        }
        if layer.w.nrows() != layer.b.len() || layer.w.ncols() != layer.b.len() {
            return Err(Error::Dimension {
                expected: layer.b.len(),
                found: layer.w.ncols(),
            });
        }
        Ok(Self {
            layer,
            depth,
            source: None,
        })
    }

    pub fn grid(&self) -> Option<&Grid> {
        self.source.as_ref().map(|(g, _, _)| g)
    }
}

/// Runs the network from `Y_0 = g_vec` and returns every state `Y_0 … Y_M`.
pub fn run_linear_states(net: &LinearSfnn, g_vec: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    if g_vec.len() != net.layer.dim() {
        return Err(Error::Dimension {
            expected: net.layer.dim(),
            found: g_vec.len(),
        });
    }
    let mut states = Vec::with_capacity(net.depth + 1);
    states.push(g_vec.clone());
    let mut trace = IterationTrace::default();
    for _ in 0..net.depth {
        let prev = states.last().expect("non-empty");
        let next = net.layer.apply(prev);
        let step = (&next - prev).norm() / prev.norm().max(1.0);
        trace.iterations_used += 1;
        if next.iter().any(|x| !x.is_finite()) {
            trace.residuals.push(f64::INFINITY);
            return Err(Error::Divergence {
                trace,
                last_residual: f64::INFINITY,
            });
        }
        trace.residuals.push(step);
        states.push(next);
    }
    Ok(states)
}

/// Output `Y_M` of the depth-`M` network started at `g_vec`.
pub fn run_linear(net: &LinearSfnn, g_vec: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(run_linear_states(net, g_vec)?.pop().expect("depth >= 1"))
}

/// Readout at an arbitrary `t` from the depth-`(M−1)` state:
/// `Σ_j (κK(t,t_j)Δt + κG(t,t_j)ΔW_j) Y_{M−1}(t_j) + κ g(t)`.
pub fn evaluate_offgrid(net: &LinearSfnn, t: f64, y_prev: &DVector<f64>) -> Result<f64> {
    let (grid, spec, path) = net
        .source
        .as_ref()
        .ok_or_else(|| Error::config("network was built from raw weights; no kernel to read out"))?;
    if y_prev.len() != grid.len() {
        return Err(Error::Dimension {
            expected: grid.len(),
            found: y_prev.len(),
        });
    }
    let (w0, bias) = assemble_readout(t, grid, spec, path.as_ref(), net.layer.kappa)?;
    Ok(affine_row(w0.iter().copied(), y_prev.as_slice(), bias))
}

/// Lipschitz activation applied elementwise inside the kernel integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
    /// `ln(1 + eˣ)`.
    Softplus,
}

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Softplus => {
                if x > 30.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    pub fn lipschitz(&self) -> f64 {
        1.0
    }

    pub fn map(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Activation::Identity => v.clone(),
            _ => v.map(|x| self.apply(x)),
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "identity" | "linear" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "softplus" | "relu_smooth" => Ok(Activation::Softplus),
            other => Err(Error::config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Operators whose fixed point a network computes.
pub trait FixedPointOperator {
    fn apply(&self, y: &DVector<f64>) -> DVector<f64>;
    /// Quadrature weight of the discrete `L²` norm on the operator's grid.
    fn step(&self) -> f64;
}

impl FixedPointOperator for LayerParams {
    fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        LayerParams::apply(self, y)
    }

    fn step(&self) -> f64 {
        1.0
    }
}

fn node_increments(grid: &Grid, path: Option<&BrownianPath>) -> Result<DVector<f64>> {
    match path {
        Some(p) if p.grid != *grid => Err(Error::Dimension {
            expected: grid.intervals(),
            found: p.increments.len(),
        }),
        Some(p) => Ok(DVector::from_vec(p.node_increments())),
        None => Ok(DVector::zeros(grid.len())),
    }
}

fn check_square(m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Dimension {
            expected: n,
            found: m.nrows().max(m.ncols()),
        });
    }
    Ok(())
}

/// Nonlinear network `X ↦ f + K Φ(X) + G (X ⊙ ΔW)`.
#[derive(Debug, Clone)]
pub struct NonlinearDsfnn {
    /// Deterministic kernel, already multiplied by `Δt`.
    pub k_matrix: DMatrix<f64>,
    /// Stochastic kernel values `G(t_i, t_j)`.
    pub g_matrix: DMatrix<f64>,
    /// Brownian increment paired with each node.
    pub increments: DVector<f64>,
    pub forcing: DVector<f64>,
    pub activation: Activation,
    pub dt: f64,
}

impl NonlinearDsfnn {
    pub fn new(
        k_matrix: DMatrix<f64>,
        g_matrix: DMatrix<f64>,
        increments: DVector<f64>,
        forcing: DVector<f64>,
        activation: Activation,
        dt: f64,
    ) -> Result<Self> {
        let n = forcing.len();
        check_square(&k_matrix, n)?;
        check_square(&g_matrix, n)?;
        if increments.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: increments.len(),
            });
        }
        Ok(Self {
            k_matrix,
            g_matrix,
            increments,
            forcing,
            activation,
            dt,
        })
    }

    pub fn from_spec(grid: &Grid, spec: &KernelSpec, path: Option<&BrownianPath>, activation: Activation) -> Result<Self> {
        if spec.stochastic.is_some() && path.is_none() {
            return Err(Error::config("a stochastic kernel needs a Brownian path"));
        }
        let (k, g) = spec.kernel_matrices(grid);
        let forcing = DVector::from_iterator(grid.len(), grid.nodes().into_iter().map(|t| spec.forcing(t)));
        Self::new(k * grid.step(), g, node_increments(grid, path)?, forcing, activation, grid.step())
    }

    /// `√2 (L_Φ ‖K‖ + ‖G‖)`; below one the operator is a mean-square contraction.
    pub fn contraction_certificate(&self) -> f64 {
        std::f64::consts::SQRT_2
            * (self.activation.lipschitz() * self.k_matrix.norm() + kernel_l2_norm(&self.g_matrix, self.dt))
    }
}

impl FixedPointOperator for NonlinearDsfnn {
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let phi = self.activation.map(x);
        let noise = x.component_mul(&self.increments);
        let mut out = self.forcing.clone();
        out.gemv(1.0, &self.k_matrix, &phi, 1.0);
        out.gemv(1.0, &self.g_matrix, &noise, 1.0);
        out
    }

    fn step(&self) -> f64 {
        self.dt
    }
}

/// Iterates the DSFNN from `X⁰ = f`.
pub fn run_dsfnn(net: &NonlinearDsfnn, cfg: &FixedPointConfig) -> Result<(DVector<f64>, IterationTrace)> {
    iterate(|x| net.apply(x), &net.forcing, cfg)
}

/// `Y ↦ f + V Φ(Y) + K Φ(Y) + G (Y ⊙ ΔW)` with causal memory `V`, global `K`
/// and a non-anticipating stochastic kernel `G`.
#[derive(Debug, Clone)]
pub struct VolterraFredholmOperator {
    /// Causal kernel (`s ≤ t`), multiplied by `Δt`.
    pub v_matrix: DMatrix<f64>,
    /// Full-interval kernel, multiplied by `Δt`.
    pub k_matrix: DMatrix<f64>,
    /// Stochastic kernel values, zero on and above the diagonal.
    pub g_matrix: DMatrix<f64>,
    pub increments: DVector<f64>,
    pub forcing: DVector<f64>,
    pub activation: Activation,
    pub dt: f64,
}

impl VolterraFredholmOperator {
    pub fn new(
        v_matrix: DMatrix<f64>,
        k_matrix: DMatrix<f64>,
        g_matrix: DMatrix<f64>,
        increments: DVector<f64>,
        forcing: DVector<f64>,
        activation: Activation,
        dt: f64,
    ) -> Result<Self> {
        let n = forcing.len();
        for m in [&v_matrix, &k_matrix, &g_matrix] {
            check_square(m, n)?;
        }
        if increments.len() != n {
            return Err(Error::Dimension {
                expected: n,
                found: increments.len(),
            });
        }
        for i in 0..n {
            for j in i..n {
                if j > i && v_matrix[(i, j)] != 0.0 {
                    return Err(Error::config(format!("memory kernel is not causal at ({i}, {j})")));
                }
                if g_matrix[(i, j)] != 0.0 {
                    return Err(Error::config(format!("stochastic kernel anticipates at ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            v_matrix,
            k_matrix,
            g_matrix,
            increments,
            forcing,
            activation,
            dt,
        })
    }

    /// Builds the operator from kernel functions on a common grid and path.
    #[allow(clippy::too_many_arguments)]
    pub fn from_kernels(
        grid: &Grid,
        memory: impl Fn(f64, f64) -> f64,
        global: impl Fn(f64, f64) -> f64,
        stochastic: impl Fn(f64, f64) -> f64,
        forcing: impl Fn(f64) -> f64,
        path: Option<&BrownianPath>,
        activation: Activation,
    ) -> Result<Self> {
        let n = grid.len();
        let t = grid.nodes();
        let dt = grid.step();
        let v = DMatrix::from_fn(n, n, |i, j| if j <= i { memory(t[i], t[j]) * dt } else { 0.0 });
        let k = DMatrix::from_fn(n, n, |i, j| global(t[i], t[j]) * dt);
        let g = DMatrix::from_fn(n, n, |i, j| if j < i { stochastic(t[i], t[j]) } else { 0.0 });
        let f = DVector::from_iterator(n, t.iter().map(|&s| forcing(s)));
        Self::new(v, k, g, node_increments(grid, path)?, f, activation, dt)
    }

    /// `L_Φ (‖V‖ + ‖K‖) + ‖G‖`.
    pub fn contraction_certificate(&self) -> f64 {
        self.activation.lipschitz() * (self.v_matrix.norm() + self.k_matrix.norm())
            + kernel_l2_norm(&self.g_matrix, self.dt)
    }
}

impl FixedPointOperator for VolterraFredholmOperator {
    fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        let phi = self.activation.map(y);
        let noise = y.component_mul(&self.increments);
        let mut out = self.forcing.clone();
        out.gemv(1.0, &self.v_matrix, &phi, 1.0);
        out.gemv(1.0, &self.k_matrix, &phi, 1.0);
        out.gemv(1.0, &self.g_matrix, &noise, 1.0);
        out
    }

    fn step(&self) -> f64 {
        self.dt
    }
}

pub fn run_volterra_fredholm(
    op: &VolterraFredholmOperator,
    cfg: &FixedPointConfig,
) -> Result<(DVector<f64>, IterationTrace)> {
    iterate(|y| op.apply(y), &op.forcing, cfg)
}

/// Discrete `L²` norm of `Y − S(Y)`; zero exactly at a discrete fixed point.
pub fn residual_norm<O: FixedPointOperator + ?Sized>(op: &O, y: &DVector<f64>) -> f64 {
    ((y - op.apply(y)).norm_squared() * op.step()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed_point::Norm;
    use crate::stochastic::{sample_brownian, RandomSeed};

    fn unit_grid(n: usize) -> Grid {
        Grid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn single_layer_with_zero_weights_returns_bias() {
        let layer = LayerParams {
            w: DMatrix::zeros(3, 3),
            b: DVector::from_vec(vec![1.0, 2.0, 3.0]),
            kappa: 1.0,
        };
        let net = LinearSfnn::from_layer(layer.clone(), 1).unwrap();
        assert_eq!(run_linear(&net, &DVector::from_vec(vec![9.0, 9.0, 9.0])).unwrap(), layer.b);
    }

    #[test]
    fn scalar_unroll() {
        let layer = LayerParams {
            w: DMatrix::from_element(1, 1, 0.5),
            b: DVector::from_element(1, 1.0),
            kappa: 1.0,
        };
        let net = LinearSfnn::from_layer(layer, 3).unwrap();
        assert_eq!(run_linear(&net, &DVector::from_element(1, 0.0)).unwrap()[0], 1.75);
    }

    #[test]
    fn zero_depth_rejected() {
        let layer = LayerParams {
            w: DMatrix::zeros(1, 1),
            b: DVector::zeros(1),
            kappa: 1.0,
        };
        assert!(LinearSfnn::from_layer(layer, 0).is_err());
    }

    #[test]
    fn unrolled_network_equals_engine_bitwise() {
        let g = unit_grid(17);
        let path = sample_brownian(&g, RandomSeed::new(12, 0)).unwrap();
        let spec = KernelSpec::new(|t, s| 0.4 * (t - s).cos(), |t| t.sin())
            .with_stochastic(|t, s| 0.2 * t * s)
            .causal(true);
        let g_vec = DVector::from_iterator(17, g.nodes().into_iter().map(|t| t.sin()));
        for depth in [1, 2, 5, 13] {
            let net = LinearSfnn::new(&g, &spec, Some(&path), 1.0, depth).unwrap();
            let out = run_linear(&net, &g_vec).unwrap();
            let (engine, _) = iterate(|y| net.layer.apply(y), &g_vec, &FixedPointConfig::fixed_depth(depth)).unwrap();
            assert_eq!(out, engine);
        }
    }

    #[test]
    fn offgrid_readout_at_nodes_reproduces_output() {
        let g = unit_grid(11);
        let path = sample_brownian(&g, RandomSeed::new(3, 1)).unwrap();
        let spec = KernelSpec::new(|t, s| 0.3 * (t + s), |t| 1.0 - t).with_stochastic(|_, s| 0.1 * s);
        let net = LinearSfnn::new(&g, &spec, Some(&path), 1.0, 6).unwrap();
        let g_vec = DVector::from_iterator(11, g.nodes().into_iter().map(|t| 1.0 - t));
        let states = run_linear_states(&net, &g_vec).unwrap();
        for i in 0..11 {
            let v = evaluate_offgrid(&net, g.node(i), &states[5]).unwrap();
            assert_eq!(v, states[6][i]);
        }
        assert!(evaluate_offgrid(&net, 1.2, &states[5]).is_err());
    }

    #[test]
    fn offgrid_null_kernel_is_forcing() {
        let g = unit_grid(5);
        let spec = KernelSpec::new(|_, _| 0.0, |t| t.exp());
        let net = LinearSfnn::new(&g, &spec, None, 0.6, 2).unwrap();
        let y = DVector::from_element(5, 3.0);
        let v = evaluate_offgrid(&net, 0.37, &y).unwrap();
        assert!((v - 0.6 * 0.37f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn offgrid_midpoints_track_neighbours() {
        let spec = KernelSpec::new(|t: f64, s: f64| 0.5 * (t - s).cos(), |t: f64| (2.0 * t).sin());
        let mut gaps = Vec::new();
        for n in [21, 41, 81, 161] {
            let g = unit_grid(n);
            let net = LinearSfnn::new(&g, &spec, None, 1.0, 40).unwrap();
            let g_vec = DVector::from_iterator(n, g.nodes().into_iter().map(|t| (2.0 * t).sin()));
            let states = run_linear_states(&net, &g_vec).unwrap();
            let i = n / 2 - 1;
            let mid = 0.5 * (g.node(i) + g.node(i + 1));
            let v = evaluate_offgrid(&net, mid, &states[39]).unwrap();
            let avg = 0.5 * (states[40][i] + states[40][i + 1]);
            gaps.push((v - avg).abs());
        }
        for (w, n) in gaps.windows(2).zip([21, 41, 81]) {
            assert!(w[1] <= w[0] * 0.6 || w[1] < 1e-12, "n={n} {gaps:?}");
        }
        assert!(gaps[0] < 0.05);
    }

    #[test]
    fn dsfnn_linear_reduction_matches_linear_network() {
        let g = unit_grid(15);
        let spec = KernelSpec::new(|t, s| 0.5 * (t * s).exp() - 0.6, |t| 1.0 + t * t);
        let dsfnn = NonlinearDsfnn::from_spec(&g, &spec, None, Activation::Identity).unwrap();
        let cfg = FixedPointConfig::new(1e-13, 500);
        let (x, trace) = run_dsfnn(&dsfnn, &cfg).unwrap();
        let net = LinearSfnn::new(&g, &spec, None, 1.0, trace.iterations_used).unwrap();
        let y = run_linear(&net, &dsfnn.forcing).unwrap();
        assert!((x - y).amax() < 1e-12);
    }

    #[test]
    fn dsfnn_without_kernels_is_forcing() {
        let g = unit_grid(6);
        let spec = KernelSpec::new(|_, _| 0.0, |t| t - 0.5);
        let net = NonlinearDsfnn::from_spec(&g, &spec, None, Activation::Tanh).unwrap();
        let (x, trace) = run_dsfnn(&net, &FixedPointConfig::new(1e-14, 10)).unwrap();
        assert_eq!(x, net.forcing);
        assert_eq!(trace.iterations_used, 1);
    }

    #[test]
    fn dsfnn_tanh_converges_to_discrete_fixed_point() {
        let g = unit_grid(33);
        let path = sample_brownian(&g, RandomSeed::new(77, 4)).unwrap();
        let spec = KernelSpec::new(|t, s| 0.4 * (t - s).cos(), |t| (3.0 * t).sin())
            .with_stochastic(|t, s| 0.1 * (t + s));
        let net = NonlinearDsfnn::from_spec(&g, &spec, Some(&path), Activation::Tanh).unwrap();
        let eps = 1e-12;
        let cfg = FixedPointConfig::new(eps, 500).with_norm(Norm::for_grid(&g));
        let (x, trace) = run_dsfnn(&net, &cfg).unwrap();
        assert!(trace.converged);
        assert!(residual_norm(&net, &x) < 10.0 * eps);
    }

    #[test]
    fn volterra_without_memory_equals_dsfnn() {
        let g = unit_grid(21);
        let path = sample_brownian(&g, RandomSeed::new(1, 9)).unwrap();
        let vf = VolterraFredholmOperator::from_kernels(
            &g,
            |_, _| 0.0,
            |t, s| 0.3 * (t - s).sin(),
            |_, _| 0.5,
            |t| 1.0 + t,
            Some(&path),
            Activation::Softplus,
        )
        .unwrap();
        let dsfnn = NonlinearDsfnn::new(
            vf.k_matrix.clone(),
            vf.g_matrix.clone(),
            vf.increments.clone(),
            vf.forcing.clone(),
            Activation::Softplus,
            vf.dt,
        )
        .unwrap();
        let cfg = FixedPointConfig::new(1e-12, 200);
        let (a, _) = run_volterra_fredholm(&vf, &cfg).unwrap();
        let (b, _) = run_dsfnn(&dsfnn, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn volterra_memory_matches_linear_ode() {
        // y = f + c∫_0^t y ds  ⇔  y' = c y + f', y(0) = f(0).
        let c = 0.8;
        let f = |t: f64| (2.0 * t).cos();
        let exact = |t: f64| {
            // integrating factor solution of y' = c y − 2 sin 2t, y(0) = 1
            let a = c;
            let e = (a * t).exp();
            let particular = |t: f64| 2.0 * (a * (2.0 * t).sin() + 2.0 * (2.0 * t).cos()) / (a * a + 4.0);
            e * (1.0 - particular(0.0)) + particular(t)
        };
        let mut errors = Vec::new();
        for n in [41, 81, 161, 321] {
            let g = unit_grid(n);
            let op = VolterraFredholmOperator::from_kernels(&g, |_, _| c, |_, _| 0.0, |_, _| 0.0, f, None, Activation::Identity)
                .unwrap();
            let (y, trace) = run_volterra_fredholm(&op, &FixedPointConfig::new(1e-14, 500)).unwrap();
            assert!(trace.converged);
            let err = g
                .nodes()
                .iter()
                .enumerate()
                .map(|(i, &t)| (y[i] - exact(t)).abs())
                .fold(0.0, f64::max);
            errors.push(err);
        }
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 1.8 && ratio < 2.2, "{errors:?}");
        }
        assert!(errors[3] < 5e-3);
    }

    #[test]
    fn anticipating_stochastic_kernel_rejected() {
        let n = 3;
        let g = DMatrix::from_element(n, n, 1.0);
        let z = DMatrix::zeros(n, n);
        assert!(VolterraFredholmOperator::new(
            z.clone(),
            z,
            g,
            DVector::zeros(n),
            DVector::zeros(n),
            Activation::Identity,
            0.5
        )
        .is_err());
    }

    #[test]
    fn residual_vanishes_at_forcing_for_null_operator() {
        let g = unit_grid(9);
        let op = VolterraFredholmOperator::from_kernels(&g, |_, _| 0.0, |_, _| 0.0, |_, _| 0.0, |t| t, None, Activation::Tanh)
            .unwrap();
        assert_eq!(residual_norm(&op, &op.forcing), 0.0);
    }

    #[test]
    fn residual_grows_linearly_under_perturbation() {
        let g = unit_grid(25);
        let path = sample_brownian(&g, RandomSeed::new(5, 5)).unwrap();
        let op = VolterraFredholmOperator::from_kernels(
            &g,
            |t, s| 0.5 * (s - t).exp(),
            |t, s| 0.2 * t * s,
            |_, _| 0.3,
            |t| 0.5 + t,
            Some(&path),
            Activation::Tanh,
        )
        .unwrap();
        let (y, _) = run_volterra_fredholm(&op, &FixedPointConfig::new(1e-14, 500)).unwrap();
        let mut e = DVector::zeros(25);
        e[12] = 1.0;
        let slopes: Vec<f64> = [1e-3, 1e-4, 1e-5]
            .iter()
            .map(|&d| residual_norm(&op, &(&y + &e * d)) / d)
            .collect();
        assert!((slopes[1] / slopes[2] - 1.0).abs() < 1e-3, "{slopes:?}");
        assert!((slopes[0] / slopes[2] - 1.0).abs() < 1e-2, "{slopes:?}");
    }
}
