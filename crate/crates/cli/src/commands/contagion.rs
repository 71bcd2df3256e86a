use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sfnn_core::contagion::{default_scenario, solve_contagion, ContagionNetwork, ExponentialShock};
use sfnn_core::{FixedPointConfig, Grid};

use super::{bool_metric, write_trace};
use crate::config::{Loaded, Section};
use crate::error::{CliError, CliResult};
use crate::output::RunContext;
use crate::plot::{PlotSpec, Scale};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContagionSection {
    pub t_end: f64,
    pub n_nodes: usize,
    pub beta: f64,
    pub gamma: f64,
    /// Row `i` lists bank `i`'s exposures to every bank.
    pub exposures: Vec<Vec<f64>>,
    pub shock_amplitudes: Vec<f64>,
    pub shock_rates: Vec<f64>,
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for ContagionSection {
    fn default() -> Self {
        let net = default_scenario();
        let n = net.n_banks();
        Self {
            t_end: net.grid.upper(),
            n_nodes: net.grid.len(),
            beta: net.beta,
            gamma: net.gamma,
            exposures: (0..n).map(|i| net.exposures.row(i).iter().copied().collect()).collect(),
            shock_amplitudes: net.shocks.iter().map(|s| s.amplitude).collect(),
            shock_rates: net.shocks.iter().map(|s| s.rate).collect(),
            tol: 1e-12,
            max_iterations: 10_000,
        }
    }
}

impl Section for ContagionSection {
    const NAME: &'static str = "contagion";

    fn set_tolerance(&mut self, tol: f64) -> bool {
        self.tol = tol;
        true
    }
}

impl ContagionSection {
    pub fn network(&self) -> CliResult<ContagionNetwork> {
        let n = self.exposures.len();
        if self.exposures.iter().any(|row| row.len() != n) {
            return Err(CliError::config("exposures must be a square matrix"));
        }
        if self.shock_amplitudes.len() != n || self.shock_rates.len() != n {
            return Err(CliError::config(format!("expected {n} shock amplitudes and rates")));
        }
        let a = DMatrix::from_fn(n, n, |i, j| self.exposures[i][j]);
        let shocks = self
            .shock_amplitudes
            .iter()
            .zip(&self.shock_rates)
            .map(|(&amplitude, &rate)| ExponentialShock { amplitude, rate })
            .collect();
        let grid = Grid::new(0.0, self.t_end, self.n_nodes)?;
        Ok(ContagionNetwork::new(a, self.beta, self.gamma, shocks, grid)?)
    }
}

pub fn run(cfg: &Loaded<ContagionSection>, ctx: &mut RunContext) -> CliResult<()> {
    let c = &cfg.section;
    let net = c.network()?;
    let sol = solve_contagion(&net, &FixedPointConfig::new(c.tol, c.max_iterations))?;
    if !sol.trace.converged {
        ctx.warnings.push(format!("no convergence to {} within {} iterations", c.tol, c.max_iterations));
    }
    if sol.out_of_range > 0 {
        ctx.warnings.push(format!("{} distress values fall outside [0, 1]", sol.out_of_range));
    }

    write_trace(ctx, "trace.csv", "Contagion fixed-point residual", &sol.trace)?;
    let t = net.grid.nodes();
    let names: Vec<String> = (1..=net.n_banks()).map(|i| format!("bank_{i}")).collect();
    let trajectories: Vec<Vec<f64>> = (0..net.n_banks()).map(|i| sol.trajectory(i)).collect();
    let mut header = vec!["t"];
    header.extend(names.iter().map(String::as_str));
    let mut columns: Vec<&[f64]> = vec![&t];
    columns.extend(trajectories.iter().map(Vec::as_slice));
    ctx.write_columns("trajectories.csv", &header, &columns)?;
    ctx.plot("trajectories.csv", PlotSpec::new("Distress by bank", Some("t"), Scale::Linear))?;
    ctx.plot(
        "trajectories.csv",
        PlotSpec::new("Distress by bank (log scale)", Some("t"), Scale::SemilogY)
            .output(ctx.dir.join("trajectories_log.svg")),
    )?;

    let finals: Vec<f64> = trajectories.iter().map(|y| y[y.len() - 1]).collect();
    ctx.write_summary(&[
        ("banks", net.n_banks() as f64),
        ("spectral_radius", sol.spectral_radius.value),
        ("iterations", sol.trace.iterations_used as f64),
        ("converged", bool_metric(sol.trace.converged)),
        ("final_residual", sol.trace.last_residual().unwrap_or(f64::NAN)),
        ("max_terminal_distress", finals.iter().fold(0.0_f64, |m, v| m.max(v.abs()))),
        ("out_of_range", sol.out_of_range as f64),
    ])?;
    Ok(())
}
