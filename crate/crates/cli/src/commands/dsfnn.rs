use serde::{Deserialize, Serialize};
use sfnn_core::networks::{residual_norm, run_dsfnn, Activation, NonlinearDsfnn};
use sfnn_core::{FixedPointConfig, Norm};

use super::{bool_metric, params, write_trace, Problem};
use crate::config::{Loaded, Section};
use crate::error::CliResult;
use crate::output::RunContext;
use crate::plot::{PlotSpec, Scale};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DsfnnSection {
    /// `identity`, `tanh` or `softplus`.
    pub activation: String,
    pub tol: f64,
    pub max_iterations: usize,
    pub problem: Problem,
}

impl Default for DsfnnSection {
    fn default() -> Self {
        Self {
            activation: "tanh".into(),
            tol: 1e-12,
            max_iterations: 1000,
            problem: Problem {
                kernel: "cosine".into(),
                kernel_params: params(&[("c", 0.4), ("omega", 2.0)]),
                stochastic_params: params(&[("c", 0.1)]),
                ..Problem::default()
            },
        }
    }
}

impl Section for DsfnnSection {
    const NAME: &'static str = "dsfnn";

    fn set_tolerance(&mut self, tol: f64) -> bool {
        self.tol = tol;
        true
    }
}

pub fn run(cfg: &Loaded<DsfnnSection>, ctx: &mut RunContext) -> CliResult<()> {
    let c = &cfg.section;
    let activation = Activation::from_name(&c.activation)?;
    let built = c.problem.build(cfg.run.seed)?;
    let net = NonlinearDsfnn::from_spec(&built.grid, &built.spec, built.path.as_ref(), activation)?;
    let certificate = net.contraction_certificate();
    if certificate >= 1.0 {
        ctx.warnings.push(format!(
            "contraction certificate {certificate} is not below 1; convergence is not guaranteed"
        ));
    }
    let fp = FixedPointConfig::new(c.tol, c.max_iterations).with_norm(Norm::for_grid(&built.grid));
    let (x, trace) = run_dsfnn(&net, &fp)?;
    if !trace.converged {
        ctx.warnings.push(format!("no convergence to {} within {} iterations", c.tol, c.max_iterations));
    }

    write_trace(ctx, "trace.csv", "Nonlinear network residual", &trace)?;
    let t = built.grid.nodes();
    ctx.write_columns("solution.csv", &["t", "x", "forcing"], &[&t, x.as_slice(), built.g.as_slice()])?;
    ctx.plot("solution.csv", PlotSpec::new("Fixed point and forcing", Some("t"), Scale::Linear))?;
    ctx.write_summary(&[
        ("nodes", built.grid.len() as f64),
        ("iterations", trace.iterations_used as f64),
        ("converged", bool_metric(trace.converged)),
        ("final_residual", trace.last_residual().unwrap_or(f64::NAN)),
        ("equation_residual", residual_norm(&net, &x)),
        ("contraction_certificate", certificate),
    ])?;
    Ok(())
}
