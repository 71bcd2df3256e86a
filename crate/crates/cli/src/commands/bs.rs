use serde::{Deserialize, Serialize};
use sfnn_core::black_scholes::{
    black_scholes_call, galerkin_projection, price_greens_function_with, solve_barrier_bvp, time_slices,
    BsConfig, GalerkinConfig, PolynomialBasis, DEFAULT_QUADRATURE_NODES,
};
use sfnn_core::{FixedPointConfig, Norm};

use super::{bool_metric, write_trace};
use crate::config::{Loaded, Section};
use crate::error::CliResult;
use crate::output::RunContext;
use crate::plot::{PlotSpec, Scale};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsSection {
    pub r: f64,
    pub sigma: f64,
    pub maturity: f64,
    pub strike: f64,
    pub barrier: f64,
    /// Nodes of the barrier grid on `[barrier, strike]`.
    pub n_nodes: usize,
    pub tol: f64,
    pub max_iterations: usize,
    /// Spot and volatility axes of the pricing table.
    pub spots: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub quadrature_nodes: usize,
    /// Maturities of the price slices.
    pub slice_taus: Vec<f64>,
    pub galerkin_degree: usize,
    pub galerkin_s_min: f64,
    pub galerkin_s_max: f64,
    pub galerkin_nodes: usize,
    pub galerkin_tau: f64,
}

impl Default for BsSection {
    fn default() -> Self {
        let bs = BsConfig::default();
        let gk = GalerkinConfig::default();
        Self {
            r: bs.r,
            sigma: bs.sigma,
            maturity: bs.maturity,
            strike: bs.strike,
            barrier: bs.barrier,
            n_nodes: bs.n_nodes,
            tol: 1e-12,
            max_iterations: 2000,
            spots: vec![80.0, 90.0, 100.0, 110.0, 120.0],
            sigmas: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            quadrature_nodes: DEFAULT_QUADRATURE_NODES,
            slice_taus: vec![0.05, 0.25, 0.5, 1.0],
            galerkin_degree: 15,
            galerkin_s_min: gk.s_min,
            galerkin_s_max: gk.s_max,
            galerkin_nodes: gk.n_nodes,
            galerkin_tau: gk.tau,
        }
    }
}

impl Section for BsSection {
    const NAME: &'static str = "bs";

    fn set_tolerance(&mut self, tol: f64) -> bool {
        self.tol = tol;
        true
    }
}

pub fn run(cfg: &Loaded<BsSection>, ctx: &mut RunContext) -> CliResult<()> {
    let c = &cfg.section;

    let mut records = Vec::new();
    let mut worst = 0.0_f64;
    for &sigma in &c.sigmas {
        for &s0 in &c.spots {
            let green = price_greens_function_with(s0, c.strike, c.r, sigma, c.maturity, c.quadrature_nodes)?;
            let closed = black_scholes_call(s0, c.strike, c.r, sigma, c.maturity);
            let rel = (green - closed).abs() / closed.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
            records.push([s0, sigma, green, closed, rel].iter().map(f64::to_string).collect());
        }
    }
    ctx.write_records(
        "prices.csv",
        &["spot", "sigma", "greens_function", "closed_form", "relative_error"],
        records,
    )?;

    let spots: Vec<f64> = (0..=60).map(|i| 60.0 + i as f64).collect();
    let slices = time_slices(&spots, c.strike, c.r, c.sigma, &c.slice_taus)?;
    let names: Vec<String> = c.slice_taus.iter().map(|t| format!("tau_{t}")).collect();
    let mut header = vec!["spot"];
    header.extend(names.iter().map(String::as_str));
    let mut columns: Vec<&[f64]> = vec![&spots];
    columns.extend(slices.iter().map(Vec::as_slice));
    ctx.write_columns("slices.csv", &header, &columns)?;
    ctx.plot("slices.csv", PlotSpec::new("Call price by maturity", Some("spot"), Scale::Linear))?;

    let bs = BsConfig {
        r: c.r,
        sigma: c.sigma,
        maturity: c.maturity,
        strike: c.strike,
        barrier: c.barrier,
        n_nodes: c.n_nodes,
    };
    let grid = bs.s_grid()?;
    let fp = FixedPointConfig::new(c.tol, c.max_iterations).with_norm(Norm::for_grid(&grid));
    let (bvp, trace) = solve_barrier_bvp(&bs, &fp)?;
    if !trace.converged {
        ctx.warnings.push(format!("barrier iteration did not reach {} in {} sweeps", c.tol, c.max_iterations));
    }
    write_trace(ctx, "barrier_trace.csv", "Barrier fixed-point residual", &trace)?;
    let s = grid.nodes();
    ctx.write_columns("barrier.csv", &["spot", "value", "delta"], &[&s, bvp.v.as_slice(), bvp.dv.as_slice()])?;
    ctx.plot(
        "barrier.csv",
        PlotSpec::new("Down-and-out barrier value", Some("spot"), Scale::Linear).series(&["value"]),
    )?;

    let gk = GalerkinConfig {
        s_min: c.galerkin_s_min,
        s_max: c.galerkin_s_max,
        n_nodes: c.galerkin_nodes,
        strike: c.strike,
        r: c.r,
        sigma: c.sigma,
        tau: c.galerkin_tau,
    };
    let fit = galerkin_projection(c.galerkin_degree, &gk)?;
    ctx.write_columns(
        "galerkin.csv",
        &["spot", "reference", "projection"],
        &[&fit.spots, fit.reference.as_slice(), fit.fitted.as_slice()],
    )?;
    ctx.plot("galerkin.csv", PlotSpec::new("Polynomial projection", Some("spot"), Scale::Linear))?;

    ctx.write_summary(&[
        ("pricer_max_relative_error", worst),
        ("barrier_iterations", trace.iterations_used as f64),
        ("barrier_converged", bool_metric(trace.converged)),
        ("barrier_spectral_radius", bvp.spectral_radius),
        ("barrier_value_at_lower", bvp.v[0]),
        ("barrier_value_at_upper", bvp.v[bvp.v.len() - 1]),
        ("galerkin_degree", c.galerkin_degree as f64),
        ("galerkin_relative_error", fit.relative_error),
        ("galerkin_legendre_basis", bool_metric(fit.basis == PolynomialBasis::Legendre)),
    ])?;
    Ok(())
}
