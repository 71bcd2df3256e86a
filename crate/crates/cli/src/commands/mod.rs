pub mod bounds;
pub mod bs;
pub mod contagion;
pub mod dsfnn;
pub mod linear;
pub mod merton;
pub mod vf;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sfnn_core::grid::{ForcingFn, KernelFn, KernelRegistry};
use sfnn_core::stochastic::sample_brownian;
use sfnn_core::{BrownianPath, Grid, IterationTrace, KernelSpec, RandomSeed};

use crate::config::Params;
use crate::error::CliResult;
use crate::output::RunContext;
use crate::plot::{PlotSpec, Scale};

/// Grid, kernels and forcing of a Fredholm equation on `[0, t_end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub t_end: f64,
    pub n_nodes: usize,
    pub kernel: String,
    pub kernel_params: Params,
    /// Kernel of the Itô integral; `"zero"` disables it.
    pub stochastic: String,
    pub stochastic_params: Params,
    pub forcing: String,
    pub forcing_params: Params,
    pub causal: bool,
}

fn params(pairs: &[(&str, f64)]) -> Params {
    pairs.iter().map(|(k, v)| ((*k).to_owned(), *v)).collect()
}

impl Default for Problem {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            n_nodes: 129,
            kernel: "exp_decay".into(),
            kernel_params: params(&[("beta", 0.5), ("gamma", 1.0)]),
            stochastic: "constant".into(),
            stochastic_params: params(&[("c", 0.05)]),
            forcing: "sine".into(),
            forcing_params: params(&[("amplitude", 1.0), ("omega", 3.0)]),
            causal: false,
        }
    }
}

pub struct Built {
    pub grid: Grid,
    pub spec: KernelSpec,
    pub path: Option<BrownianPath>,
    pub g: DVector<f64>,
}

pub fn kernel(name: &str, p: &Params) -> CliResult<KernelFn> {
    Ok(KernelRegistry::default().kernel(name, p)?)
}

pub fn forcing(name: &str, p: &Params) -> CliResult<ForcingFn> {
    Ok(KernelRegistry::default().forcing(name, p)?)
}

pub fn forcing_vector(grid: &Grid, f: &ForcingFn) -> DVector<f64> {
    DVector::from_iterator(grid.len(), grid.nodes().into_iter().map(|t| f(t)))
}

impl Problem {
    pub fn grid(&self) -> CliResult<Grid> {
        Ok(Grid::new(0.0, self.t_end, self.n_nodes)?)
    }

    pub fn has_noise(&self) -> bool {
        self.stochastic != "zero"
    }

    /// Kernel spec and, when the stochastic kernel is active, one Brownian path from `seed`.
    pub fn build(&self, seed: u64) -> CliResult<Built> {
        let grid = self.grid()?;
        let k = kernel(&self.kernel, &self.kernel_params)?;
        let f = forcing(&self.forcing, &self.forcing_params)?;
        let g = forcing_vector(&grid, &f);
        let mut spec = KernelSpec::new(move |t, s| k(t, s), move |t| f(t)).causal(self.causal);
        let path = if self.has_noise() {
            let gk = kernel(&self.stochastic, &self.stochastic_params)?;
            spec = spec.with_stochastic(move |t, s| gk(t, s));
            Some(sample_brownian(&grid, RandomSeed::new(seed, 0))?)
        } else {
            None
        };
        spec.check_bounded(&grid)?;
        Ok(Built { grid, spec, path, g })
    }
}

/// Writes `trace.csv` (or `name`) and its semilog plot.
pub fn write_trace(ctx: &mut RunContext, name: &str, title: &str, trace: &IterationTrace) -> CliResult<()> {
    ctx.write_bytes(name, trace.to_csv().as_bytes())?;
    ctx.plot(name, PlotSpec::new(title, Some("iteration"), Scale::SemilogY).series(&["residual"]))?;
    Ok(())
}

pub fn bool_metric(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}
