use serde::{Deserialize, Serialize};
use sfnn_core::fixed_point::{
    estimate_discretization_error, iterate, prescribe_depth, CoupledPaths, ErrorBoundReport,
};
use sfnn_core::grid::assemble_layer;
use sfnn_core::linalg::{solve_affine_fixed_point, spectral_norm};
use sfnn_core::stochastic::sample_brownian;
use sfnn_core::{FixedPointConfig, Norm, RandomSeed};

use super::Problem;
use crate::config::{AutoOr, Loaded, Section};
use crate::error::{CliError, CliResult};
use crate::output::RunContext;
use crate::plot::{PlotSpec, Scale};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    /// Target accuracy of the prescribed depth.
    pub eps: f64,
    pub max_depth: usize,
    /// Contraction constant; `"auto"` takes the spectral norm of the layer.
    pub q: AutoOr,
    /// Discretization constant; `"auto"` compares the grid with one coarser by `coarsen_factor`.
    pub c_dt: AutoOr,
    /// `‖Sg − g‖`; `"auto"` evaluates it on the grid.
    pub gap: AutoOr,
    pub coarsen_factor: usize,
    /// Coupled fine/coarse Brownian paths used by the `c_dt` estimate.
    pub coupled_paths: usize,
    pub problem: Problem,
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            max_depth: 30,
            q: AutoOr::AUTO,
            c_dt: AutoOr::AUTO,
            gap: AutoOr::AUTO,
            coarsen_factor: 2,
            coupled_paths: 16,
            problem: Problem::default(),
        }
    }
}

impl Section for BoundsSection {
    const NAME: &'static str = "bounds";

    fn set_paths(&mut self, paths: usize) -> bool {
        self.coupled_paths = paths;
        true
    }
}

pub fn run(cfg: &Loaded<BoundsSection>, ctx: &mut RunContext) -> CliResult<()> {
    let c = &cfg.section;
    if c.max_depth == 0 {
        return Err(CliError::config("max_depth must be at least 1"));
    }
    let built = c.problem.build(cfg.run.seed)?;
    let layer = assemble_layer(&built.grid, &built.spec, built.path.as_ref(), 1.0)?;
    let norm = Norm::for_grid(&built.grid);

    let q = match c.q.value() {
        Some(q) => q,
        None => spectral_norm(&layer.w, 1e-12, 100_000),
    };
    let gap = match c.gap.value() {
        Some(g) => g,
        None => norm.of(&(&layer.w * &built.g)),
    };
    let c_dt = match c.c_dt.value() {
        Some(v) => v,
        None => {
            let coarse = built.grid.coarsen(c.coarsen_factor)?;
            let paths = (0..c.coupled_paths as u64)
                .map(|k| {
                    let fine = sample_brownian(&built.grid, RandomSeed::new(cfg.run.seed, 1 + k))?;
                    CoupledPaths::from_fine(fine, c.coarsen_factor)
                })
                .collect::<sfnn_core::Result<Vec<_>>>()?;
            estimate_discretization_error(&built.spec, &built.grid, &coarse, &paths)?
        }
    };
    let report = ErrorBoundReport::new(q, c_dt, gap, c.max_depth, c.eps)?;
    let m_star = prescribe_depth(q, c.eps, 0.0, gap)?;

    let direct = solve_affine_fixed_point(&layer.w, &layer.b)?;
    let mut depths = Vec::with_capacity(c.max_depth);
    let mut bounds = Vec::with_capacity(c.max_depth);
    let mut measured = Vec::with_capacity(c.max_depth);
    let mut worst_ratio = 0.0_f64;
    for m in 1..=c.max_depth {
        let (y, _) = iterate(|y| layer.apply(y), &built.g, &FixedPointConfig::fixed_depth(m).with_norm(norm))?;
        let err = norm.of(&(y - &direct));
        let bound = ErrorBoundReport::bound_at(q, c_dt, gap, m);
        worst_ratio = worst_ratio.max(err / bound);
        depths.push(m as f64);
        bounds.push(bound);
        measured.push(err);
    }
    if worst_ratio > 1.0 {
        ctx.warnings.push(format!("measured error exceeds the bound by a factor {worst_ratio}"));
    }
    ctx.write_columns(
        "bounds.csv",
        &["depth", "bound", "measured_error"],
        &[&depths, &bounds, &measured],
    )?;
    ctx.plot("bounds.csv", PlotSpec::new("Error bound and measured error", Some("depth"), Scale::SemilogY))?;
    ctx.write_summary(&[
        ("q", q),
        ("c_dt", c_dt),
        ("forcing_gap", gap),
        ("eps", c.eps),
        ("prescribed_depth", report.m_star as f64),
        ("prescribed_depth_without_c_dt", m_star as f64),
        ("bound_at_max_depth", report.bound),
        ("max_measured_to_bound_ratio", worst_ratio),
    ])?;
    Ok(())
}
