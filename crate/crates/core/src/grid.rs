//! Uniform grids, kernel specifications and assembly of the discretized
//! stochastic Fredholm operator into one affine layer `Y ↦ W Y + b`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::stochastic::BrownianPath;

/// Uniform partition of `[lower, upper]` with `n_nodes` nodes, both ends included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    lower: f64,
    upper: f64,
    n_nodes: usize,
}

impl Grid {
    pub fn new(lower: f64, upper: f64, n_nodes: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) || upper <= lower {
            return Err(Error::config(format!(
                "grid needs finite bounds with upper > lower, got [{lower}, {upper}]"
            )));
        }
        if n_nodes < 2 {
            return Err(Error::config(format!("grid needs at least 2 nodes, got {n_nodes}")));
        }
        Ok(Self { lower, upper, n_nodes })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn len(&self) -> usize {
        self.n_nodes
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn intervals(&self) -> usize {
        self.n_nodes - 1
    }

    pub fn step(&self) -> f64 {
        (self.upper - self.lower) / (self.n_nodes - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lower + i as f64 * self.step()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|i| self.node(i)).collect()
    }

    fn slack(&self) -> f64 {
        1e-12 * (self.upper - self.lower)
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.lower - self.slack() && t <= self.upper + self.slack()
    }

    pub fn check_contains(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::Domain {
                value: t,
                lower: self.lower,
                upper: self.upper,
            })
        }
    }

    /// Index `j` of the interval `(t_j, t_{j+1}]` containing `t`, clamped to the grid.
    pub fn interval_containing(&self, t: f64) -> usize {
        let x = ((t - self.lower) / self.step()).ceil() as isize - 1;
        x.clamp(0, self.intervals() as isize - 1) as usize
    }

    /// Grid with every `factor`-th node of this one.
    pub fn coarsen(&self, factor: usize) -> Result<Grid> {
        if factor == 0 || self.intervals() % factor != 0 {
            return Err(Error::config(format!(
                "{} intervals cannot be coarsened by factor {factor}",
                self.intervals()
            )));
        }
        Grid::new(self.lower, self.upper, self.intervals() / factor + 1)
    }

    /// Integer refinement factor of `self` over `coarse`, if it is one.
    pub fn refinement_of(&self, coarse: &Grid) -> Option<usize> {
        let same_bounds = (self.lower - coarse.lower).abs() <= self.slack()
            && (self.upper - coarse.upper).abs() <= self.slack();
        if !same_bounds || self.intervals() % coarse.intervals() != 0 {
            return None;
        }
        Some(self.intervals() / coarse.intervals())
    }
}

pub type KernelFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type ForcingFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Deterministic kernel `K`, optional stochastic kernel `G`, forcing `g` and the
/// causal flag. With `causal` set, `K` acts on `s ≤ t` and `G` on increments
/// that end at or before `t`.
#[derive(Clone)]
pub struct KernelSpec {
    pub deterministic: KernelFn,
    pub stochastic: Option<KernelFn>,
    pub causal: bool,
    pub forcing: ForcingFn,
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec")
            .field("stochastic", &self.stochastic.is_some())
            .field("causal", &self.causal)
            .finish_non_exhaustive()
    }
}

impl KernelSpec {
    pub fn new(
        kernel: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        forcing: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            deterministic: Arc::new(kernel),
            stochastic: None,
            causal: false,
            forcing: Arc::new(forcing),
        }
    }

    pub fn with_stochastic(mut self, kernel: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.stochastic = Some(Arc::new(kernel));
        self
    }

    pub fn causal(mut self, causal: bool) -> Self {
        self.causal = causal;
        self
    }

    pub fn with_forcing(mut self, forcing: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.forcing = Arc::new(forcing);
        self
    }

    pub fn kernel(&self, t: f64, s: f64) -> f64 {
        (self.deterministic)(t, s)
    }

    pub fn stochastic_kernel(&self, t: f64, s: f64) -> f64 {
        self.stochastic.as_ref().map_or(0.0, |g| g(t, s))
    }

    pub fn forcing(&self, t: f64) -> f64 {
        (self.forcing)(t)
    }

    /// Samples both kernels on the grid and rejects non-finite values.
    pub fn check_bounded(&self, grid: &Grid) -> Result<()> {
        let nodes = grid.nodes();
        for &t in &nodes {
            for &s in &nodes {
                if !self.kernel(t, s).is_finite() || !self.stochastic_kernel(t, s).is_finite() {
                    return Err(Error::config(format!("kernel not finite at ({t}, {s})")));
                }
            }
        }
        Ok(())
    }

    /// Discrete kernel matrices `(K(t_i,t_j), G(t_i,t_j))` with the causal masks applied.
    pub fn kernel_matrices(&self, grid: &Grid) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = grid.len();
        let nodes = grid.nodes();
        let k = DMatrix::from_fn(n, n, |i, j| {
            if self.causal && j > i {
                0.0
            } else {
                self.kernel(nodes[i], nodes[j])
            }
        });
        let g = DMatrix::from_fn(n, n, |i, j| {
            if self.causal && j >= i {
                0.0
            } else {
                self.stochastic_kernel(nodes[i], nodes[j])
            }
        });
        (k, g)
    }
}

/// Weight matrix and bias of one affine layer, plus the relaxation weight it was built with.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub kappa: f64,
}

impl LayerParams {
    /// `W y + b`, each row summed left to right before the bias is added.
    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.b.len(), |i, _| affine_row(self.w.row(i).iter().copied(), y.as_slice(), self.b[i]))
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }
}

/// `Σ_j w_j x_j + bias` with a fixed left-to-right summation order, shared by
/// layer application and off-grid readout so both agree bit for bit.
pub fn affine_row(row: impl Iterator<Item = f64>, x: &[f64], bias: f64) -> f64 {
    row.zip(x).fold(0.0, |acc, (w, x)| acc + w * x) + bias
}

pub(crate) fn check_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("relaxation weight must lie in (0, 1], got {kappa}")))
    }
}

fn check_path<'a>(grid: &Grid, spec: &KernelSpec, path: Option<&'a BrownianPath>) -> Result<Option<&'a BrownianPath>> {
    if spec.stochastic.is_some() && path.is_none() {
        return Err(Error::config("a stochastic kernel needs a Brownian path on the same grid"));
    }
    if let Some(p) = path {
        if p.increments.len() != grid.intervals() || p.grid != *grid {
            return Err(Error::Dimension {
                expected: grid.intervals(),
                found: p.increments.len(),
            });
        }
    }
    Ok(path)
}

/// Assembles `W_ij = κK(t_i,t_j)Δt + κG(t_i,t_j)ΔW_j + (1−κ)δ_ij` and `b_i = κ g(t_i)`.
///
/// Without a path the stochastic term is dropped (deterministic Fredholm case).
/// Every node carries quadrature weight `Δt`; node `j` pairs with the increment
/// of the interval that starts at `t_j`.
pub fn assemble_layer(grid: &Grid, spec: &KernelSpec, path: Option<&BrownianPath>, kappa: f64) -> Result<LayerParams> {
    check_kappa(kappa)?;
    let path = check_path(grid, spec, path)?;
    let n = grid.len();
    let dt = grid.step();
    let nodes = grid.nodes();
    let dw = path.map(BrownianPath::node_increments);
    let w = DMatrix::from_fn(n, n, |i, j| {
        let det = if spec.causal && j > i {
            0.0
        } else {
            kappa * spec.kernel(nodes[i], nodes[j]) * dt
        };
        let sto = match &dw {
            Some(dw) if !(spec.causal && j >= i) => kappa * spec.stochastic_kernel(nodes[i], nodes[j]) * dw[j],
            _ => 0.0,
        };
        let relax = if i == j { 1.0 - kappa } else { 0.0 };
        det + sto + relax
    });
    let b = DVector::from_fn(n, |i, _| kappa * spec.forcing(nodes[i]));
    Ok(LayerParams { w, b, kappa })
}

/// Readout row for an arbitrary `t`: `W0_j = κK(t,t_j)Δt + κG(t,t_j)ΔW_j`, bias `κ g(t)`.
pub fn assemble_readout(
    t: f64,
    grid: &Grid,
    spec: &KernelSpec,
    path: Option<&BrownianPath>,
    kappa: f64,
) -> Result<(DVector<f64>, f64)> {
    check_kappa(kappa)?;
    grid.check_contains(t)?;
    let path = check_path(grid, spec, path)?;
    let dt = grid.step();
    let nodes = grid.nodes();
    let slack = 1e-12 * (grid.upper() - grid.lower());
    let dw = path.map(BrownianPath::node_increments);
    let w0 = DVector::from_fn(grid.len(), |j, _| {
        let det = if spec.causal && nodes[j] > t + slack {
            0.0
        } else {
            kappa * spec.kernel(t, nodes[j]) * dt
        };
        let sto = match &dw {
            // The increment of node j ends at t_{j+1}; it is visible once t_{j+1} ≤ t.
            Some(dw) if !(spec.causal && grid.node(j + 1) > t + slack) => {
                kappa * spec.stochastic_kernel(t, nodes[j]) * dw[j]
            }
            _ => 0.0,
        };
        det + sto
    });
    Ok((w0, kappa * spec.forcing(t)))
}

/// `Δt`-weighted Frobenius norm of a kernel sampled on the grid, the discrete
/// proxy of its `L²([a,b]²)` norm.
pub fn kernel_l2_norm(values: &DMatrix<f64>, dt: f64) -> f64 {
    values.norm() * dt
}

/// Mean-square contraction bound `√2 · (L_Φ‖K‖ + ‖G‖)`.
pub fn operator_norm_bound(spec: &KernelSpec, grid: &Grid, lipschitz: f64) -> f64 {
    let (k, g) = spec.kernel_matrices(grid);
    let dt = grid.step();
    std::f64::consts::SQRT_2 * (lipschitz * kernel_l2_norm(&k, dt) + kernel_l2_norm(&g, dt))
}

pub type KernelParams = BTreeMap<String, f64>;
type KernelFactory = Arc<dyn Fn(&KernelParams) -> Result<KernelFn> + Send + Sync>;
type ForcingFactory = Arc<dyn Fn(&KernelParams) -> Result<ForcingFn> + Send + Sync>;

fn param(params: &KernelParams, name: &str, default: Option<f64>) -> Result<f64> {
    match (params.get(name), default) {
        (Some(v), _) => Ok(*v),
        (None, Some(d)) => Ok(d),
        (None, None) => Err(Error::config(format!("missing kernel parameter `{name}`"))),
    }
}

/// Named kernels and forcings selectable from configuration files.
///
/// Built-in kernels: `zero`, `constant` (`c`), `exp_decay` (`beta`, `gamma`:
/// `β e^{−γ|t−s|}`), `gaussian` (`amplitude`, `width`), `product` (`c`: `c·t·s`),
/// `cosine` (`c`, `omega`: `c·cos(ω(t−s))`).
/// Built-in forcings: `zero`, `constant` (`c`), `exp` (`amplitude`, `rate`),
/// `sine` (`amplitude`, `omega`), `linear` (`a`, `b`: `a + b t`).
#[derive(Clone)]
pub struct KernelRegistry {
    kernels: HashMap<String, KernelFactory>,
    forcings: HashMap<String, ForcingFactory>,
}

impl Default for KernelRegistry {
    fn default() -> Self {
        let mut reg = Self {
            kernels: HashMap::new(),
            forcings: HashMap::new(),
        };
        reg.register_kernel("zero", |_| Ok(Arc::new(|_, _| 0.0)));
        reg.register_kernel("constant", |p| {
            let c = param(p, "c", None)?;
            Ok(Arc::new(move |_, _| c))
        });
        reg.register_kernel("exp_decay", |p| {
            let beta = param(p, "beta", None)?;
            let gamma = param(p, "gamma", None)?;
            Ok(Arc::new(move |t, s| beta * (-gamma * (t - s).abs()).exp()))
        });
        reg.register_kernel("gaussian", |p| {
            let a = param(p, "amplitude", None)?;
            let w = param(p, "width", Some(1.0))?;
            Ok(Arc::new(move |t, s| a * (-((t - s) / w).powi(2)).exp()))
        });
        reg.register_kernel("product", |p| {
            let c = param(p, "c", None)?;
            Ok(Arc::new(move |t, s| c * t * s))
        });
        reg.register_kernel("cosine", |p| {
            let c = param(p, "c", None)?;
            let omega = param(p, "omega", Some(1.0))?;
            Ok(Arc::new(move |t, s| c * (omega * (t - s)).cos()))
        });
        reg.register_forcing("zero", |_| Ok(Arc::new(|_| 0.0)));
        reg.register_forcing("constant", |p| {
            let c = param(p, "c", None)?;
            Ok(Arc::new(move |_| c))
        });
        reg.register_forcing("exp", |p| {
            let a = param(p, "amplitude", None)?;
            let r = param(p, "rate", None)?;
            Ok(Arc::new(move |t| a * (-r * t).exp()))
        });
        reg.register_forcing("sine", |p| {
            let a = param(p, "amplitude", None)?;
            let omega = param(p, "omega", Some(1.0))?;
            Ok(Arc::new(move |t| a * (omega * t).sin()))
        });
        reg.register_forcing("linear", |p| {
            let a = param(p, "a", None)?;
            let b = param(p, "b", Some(0.0))?;
            Ok(Arc::new(move |t| a + b * t))
        });
        reg
    }
}

impl KernelRegistry {
    pub fn register_kernel(
        &mut self,
        name: &str,
        factory: impl Fn(&KernelParams) -> Result<KernelFn> + Send + Sync + 'static,
    ) {
        self.kernels.insert(name.to_owned(), Arc::new(factory));
    }

    pub fn register_forcing(
        &mut self,
        name: &str,
        factory: impl Fn(&KernelParams) -> Result<ForcingFn> + Send + Sync + 'static,
    ) {
        self.forcings.insert(name.to_owned(), Arc::new(factory));
    }

    pub fn kernel(&self, name: &str, params: &KernelParams) -> Result<KernelFn> {
        let factory = self
            .kernels
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown kernel `{name}`")))?;
        factory(params)
    }

    pub fn forcing(&self, name: &str, params: &KernelParams) -> Result<ForcingFn> {
        let factory = self
            .forcings
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown forcing `{name}`")))?;
        factory(params)
    }
}
