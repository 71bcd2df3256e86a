use serde::{Deserialize, Serialize};
use sfnn_core::fixed_point::iterate;
use sfnn_core::grid::assemble_layer;
use sfnn_core::linalg::{solve_affine_fixed_point, spectral_norm, spectral_radius};
use sfnn_core::{FixedPointConfig, Norm};

use super::{bool_metric, write_trace, Problem};
use crate::config::{Loaded, Section};
use crate::error::CliResult;
use crate::output::RunContext;
use crate::plot::{PlotSpec, Scale};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSection {
    pub kappa: f64,
    pub tol: f64,
    pub max_iterations: usize,
    pub problem: Problem,
}

impl Default for LinearSection {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            tol: 1e-12,
            max_iterations: 500,
            problem: Problem::default(),
        }
    }
}

impl Section for LinearSection {
    const NAME: &'static str = "linear";

    fn set_tolerance(&mut self, tol: f64) -> bool {
        self.tol = tol;
        true
    }
}

pub fn run(cfg: &Loaded<LinearSection>, ctx: &mut RunContext) -> CliResult<()> {
    let c = &cfg.section;
    let built = c.problem.build(cfg.run.seed)?;
    let layer = assemble_layer(&built.grid, &built.spec, built.path.as_ref(), c.kappa)?;
    let norm = Norm::for_grid(&built.grid);
    let fp = FixedPointConfig::new(c.tol, c.max_iterations).with_norm(norm);
    let (y, trace) = iterate(|y| layer.apply(y), &built.g, &fp)?;

    let direct = solve_affine_fixed_point(&layer.w, &layer.b)?;
    let rel_error = (&y - &direct).norm() / direct.norm().max(f64::MIN_POSITIVE);
    let rho = spectral_radius(&layer.w, 1e-10, 20_000)?;
    let q = spectral_norm(&layer.w, 1e-10, 20_000);
    if !trace.converged {
        ctx.warnings.push(format!(
            "no convergence to {} within {} iterations",
            c.tol, c.max_iterations
        ));
    }

    write_trace(ctx, "trace.csv", "Fixed-point residual", &trace)?;
    let t = built.grid.nodes();
    ctx.write_columns(
        "solution.csv",
        &["t", "network", "direct"],
        &[&t, y.as_slice(), direct.as_slice()],
    )?;
    ctx.plot("solution.csv", PlotSpec::new("Network vs dense solve", Some("t"), Scale::Linear))?;
    ctx.write_summary(&[
        ("nodes", built.grid.len() as f64),
        ("iterations", trace.iterations_used as f64),
        ("converged", bool_metric(trace.converged)),
        ("final_residual", trace.last_residual().unwrap_or(f64::NAN)),
        ("relative_error_vs_direct", rel_error),
        ("spectral_radius", rho.value),
        ("spectral_norm", q),
    ])?;
    Ok(())
}
