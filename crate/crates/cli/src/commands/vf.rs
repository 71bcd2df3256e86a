use serde::{Deserialize, Serialize};
use sfnn_core::networks::{residual_norm, run_volterra_fredholm, Activation, VolterraFredholmOperator};
use sfnn_core::stochastic::sample_brownian;
use sfnn_core::{FixedPointConfig, Grid, Norm, RandomSeed};

use super::{bool_metric, forcing, kernel, params, write_trace};
use crate::config::{Loaded, Params, Section};
use crate::error::CliResult;
use crate::output::RunContext;
use crate::plot::{PlotSpec, Scale};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VfSection {
    pub t_end: f64,
    pub n_nodes: usize,
    /// Volterra kernel, applied for `s ≤ t`.
    pub memory: String,
    pub memory_params: Params,
    /// Fredholm kernel over the whole interval.
    pub global: String,
    pub global_params: Params,
    /// Itô kernel, applied to increments that end by `t`; `"zero"` disables noise.
    pub stochastic: String,
    pub stochastic_params: Params,
    pub forcing: String,
    pub forcing_params: Params,
    pub activation: String,
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for VfSection {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            n_nodes: 129,
            memory: "exp_decay".into(),
            memory_params: params(&[("beta", 0.5), ("gamma", 2.0)]),
            global: "gaussian".into(),
            global_params: params(&[("amplitude", 0.2), ("width", 0.5)]),
            stochastic: "constant".into(),
            stochastic_params: params(&[("c", 0.2)]),
            forcing: "linear".into(),
            forcing_params: params(&[("a", 1.0), ("b", -0.5)]),
            activation: "tanh".into(),
            tol: 1e-12,
            max_iterations: 1000,
        }
    }
}

impl Section for VfSection {
    const NAME: &'static str = "vf";

    fn set_tolerance(&mut self, tol: f64) -> bool {
        self.tol = tol;
        true
    }
}

pub fn run(cfg: &Loaded<VfSection>, ctx: &mut RunContext) -> CliResult<()> {
    let c = &cfg.section;
    let grid = Grid::new(0.0, c.t_end, c.n_nodes)?;
    let activation = Activation::from_name(&c.activation)?;
    let v = kernel(&c.memory, &c.memory_params)?;
    let k = kernel(&c.global, &c.global_params)?;
    let g = kernel(&c.stochastic, &c.stochastic_params)?;
    let f = forcing(&c.forcing, &c.forcing_params)?;
    let path = if c.stochastic != "zero" {
        Some(sample_brownian(&grid, RandomSeed::new(cfg.run.seed, 0))?)
    } else {
        None
    };
    let op = VolterraFredholmOperator::from_kernels(
        &grid,
        |t, s| v(t, s),
        |t, s| k(t, s),
        |t, s| g(t, s),
        |t| f(t),
        path.as_ref(),
        activation,
    )?;
    let certificate = op.contraction_certificate();
    if certificate >= 1.0 {
        ctx.warnings.push(format!(
            "contraction certificate {certificate} is not below 1; convergence is not guaranteed"
        ));
    }
    let fp = FixedPointConfig::new(c.tol, c.max_iterations).with_norm(Norm::for_grid(&grid));
    let (y, trace) = run_volterra_fredholm(&op, &fp)?;
    if !trace.converged {
        ctx.warnings.push(format!("no convergence to {} within {} iterations", c.tol, c.max_iterations));
    }

    write_trace(ctx, "trace.csv", "Volterra–Fredholm residual", &trace)?;
    let t = grid.nodes();
    let brownian = path.map(|p| p.cumulative()).unwrap_or_else(|| vec![0.0; grid.len()]);
    ctx.write_columns("solution.csv", &["t", "y", "brownian"], &[&t, y.as_slice(), &brownian])?;
    ctx.plot("solution.csv", PlotSpec::new("Solution and driving path", Some("t"), Scale::Linear))?;
    ctx.write_summary(&[
        ("nodes", grid.len() as f64),
        ("iterations", trace.iterations_used as f64),
        ("converged", bool_metric(trace.converged)),
        ("final_residual", trace.last_residual().unwrap_or(f64::NAN)),
        ("equation_residual", residual_norm(&op, &y)),
        ("contraction_certificate", certificate),
    ])?;
    Ok(())
}
