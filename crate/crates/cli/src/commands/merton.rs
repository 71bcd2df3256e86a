use serde::{Deserialize, Serialize};
use sfnn_core::merton::{run_sfvnn, simulate_merton_path, KernelSource, MertonConfig, SfvnnConfig};
use sfnn_core::{LogNormalParams, RandomSeed};

use super::bool_metric;
use crate::config::{Loaded, Section};
use crate::error::{CliError, CliResult};
use crate::output::RunContext;
use crate::plot::{PlotSpec, Scale};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MertonSection {
    pub mu: f64,
    pub sigma: f64,
    pub intensity: f64,
    pub jump_mean_log: f64,
    pub jump_sd_log: f64,
    pub s0: f64,
    pub horizon: f64,
    pub intervals: usize,
    pub n_paths: usize,
    pub init_seed: u64,
    pub sweeps: usize,
    pub steps_per_sweep: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub tol: f64,
    pub max_outer: usize,
    /// `learned` or `true`.
    pub kernel_source: String,
}

impl Default for MertonSection {
    fn default() -> Self {
        let s = SfvnnConfig::default();
        let m = s.model;
        Self {
            mu: m.mu,
            sigma: m.sigma,
            intensity: m.intensity,
            jump_mean_log: m.jump_law.mean_log,
            jump_sd_log: m.jump_law.sd_log,
            s0: m.s0,
            horizon: m.horizon,
            intervals: m.intervals,
            n_paths: s.n_paths,
            init_seed: s.init_seed,
            sweeps: s.sweeps,
            steps_per_sweep: s.steps_per_sweep,
            learning_rate: s.learning_rate,
            batch_size: s.batch_size,
            tol: s.tolerance,
            max_outer: s.max_outer,
            kernel_source: "learned".into(),
        }
    }
}

impl Section for MertonSection {
    const NAME: &'static str = "merton";

    fn set_tolerance(&mut self, tol: f64) -> bool {
        self.tol = tol;
        true
    }

    fn set_paths(&mut self, paths: usize) -> bool {
        self.n_paths = paths;
        true
    }
}

impl MertonSection {
    pub fn sfvnn_config(&self, seed: u64) -> CliResult<SfvnnConfig> {
        let kernel_source = match self.kernel_source.as_str() {
            "learned" => KernelSource::Learned,
            "true" => KernelSource::True,
            other => {
                return Err(CliError::config(format!(
                    "kernel_source must be `learned` or `true`, got `{other}`"
                )))
            }
        };
        let model = MertonConfig {
            mu: self.mu,
            sigma: self.sigma,
            intensity: self.intensity,
            jump_law: LogNormalParams::new(self.jump_mean_log, self.jump_sd_log)?,
            s0: self.s0,
            horizon: self.horizon,
            intervals: self.intervals,
        };
        model.validate()?;
        Ok(SfvnnConfig {
            model,
            n_paths: self.n_paths,
            seed,
            init_seed: self.init_seed,
            sweeps: self.sweeps,
            steps_per_sweep: self.steps_per_sweep,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            tolerance: self.tol,
            max_outer: self.max_outer,
            kernel_source,
        })
    }
}

pub fn run(cfg: &Loaded<MertonSection>, ctx: &mut RunContext) -> CliResult<()> {
    let sc = cfg.section.sfvnn_config(cfg.run.seed)?;
    let report = run_sfvnn(&sc)?;
    if !report.converged {
        ctx.warnings.push(format!(
            "outer iteration did not reach {} within {} iterations",
            sc.tolerance, sc.max_outer
        ));
    }
    let state = &report.state;
    let outer: Vec<f64> = (1..=state.fp_residuals.len()).map(|k| k as f64).collect();
    ctx.write_columns(
        "fp_residuals.csv",
        &["outer_iteration", "fp_residual"],
        &[&outer, &state.fp_residuals],
    )?;
    ctx.plot(
        "fp_residuals.csv",
        PlotSpec::new("Outer fixed-point residual", Some("outer_iteration"), Scale::SemilogY),
    )?;
    ctx.write_columns("nn_errors.csv", &["outer_iteration", "nn_error"], &[&outer, &state.nn_errors])?;
    ctx.plot(
        "nn_errors.csv",
        PlotSpec::new("Error against the true-kernel solution", Some("outer_iteration"), Scale::SemilogY),
    )?;

    if !report.training.loss_history.is_empty() {
        ctx.write_bytes("training.csv", report.training.to_csv().as_bytes())?;
        ctx.plot(
            "training.csv",
            PlotSpec::new("Residual loss", Some("global_step"), Scale::SemilogY).series(&["loss", "moving_average"]),
        )?;
    }
    if let Some(nk) = &report.network {
        let mut bytes = Vec::new();
        nk.write_checkpoint(&mut bytes)?;
        ctx.write_bytes("kernel.ckpt", &bytes)?;
    }

    let t = sc.model.grid()?.nodes();
    let exact = simulate_merton_path(&sc.model, RandomSeed::new(sc.seed, 0))?;
    ctx.write_columns(
        "sample_path.csv",
        &["t", "network", "exact"],
        &[&t, state.s[0].as_slice(), exact.s.as_slice()],
    )?;
    ctx.plot("sample_path.csv", PlotSpec::new("First path", Some("t"), Scale::Linear))?;

    let ma = &report.training.moving_average;
    let ma_ratio = match (ma.first(), ma.last()) {
        (Some(a), Some(b)) if *a > 0.0 => b / a,
        _ => f64::NAN,
    };
    ctx.write_summary(&[
        ("paths", sc.n_paths as f64),
        ("outer_iterations", state.fp_residuals.len() as f64),
        ("converged", bool_metric(report.converged)),
        ("final_fp_residual", state.fp_residuals.last().copied().unwrap_or(f64::NAN)),
        ("final_nn_error", state.nn_errors.last().copied().unwrap_or(f64::NAN)),
        ("training_steps", report.training.loss_history.len() as f64),
        ("moving_average_ratio", ma_ratio),
    ])?;
    Ok(())
}
