//! Layered configuration: built-in defaults, then the TOML file, then
//! `SFNN_<SECTION>_<KEY>` environment variables, then command-line flags.
//!
//! Every run reads the `[run]` section and the section named after its
//! subcommand. Nested tables extend the variable name, so `kernel_params.beta`
//! in `[linear.problem]` is overridden by `SFNN_LINEAR_PROBLEM_KERNEL_PARAMS_BETA`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};

pub const ENV_PREFIX: &str = "SFNN";
pub const DEFAULT_SEED: u64 = 2024;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: DEFAULT_SEED }
    }
}

/// A subcommand's configuration section.
pub trait Section: Serialize + DeserializeOwned + Default {
    const NAME: &'static str;

    /// Applies `--tol`; returns false when the subcommand has no tolerance.
    fn set_tolerance(&mut self, _tol: f64) -> bool {
        false
    }

    /// Applies `--paths`; returns false when the subcommand simulates no ensemble.
    fn set_paths(&mut self, _paths: usize) -> bool {
        false
    }
}

/// Flag values that take precedence over every other layer.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub paths: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub run: RunSection,
    pub section: T,
    /// Canonical TOML of the effective configuration.
    pub effective: String,
    pub digest: String,
    pub source: Option<PathBuf>,
    pub warnings: Vec<String>,
}

/// First 64 bits of SHA-256, as 16 hex digits.
pub fn digest64(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    let mut word = [0u8; 8];
    word.copy_from_slice(&hash[..8]);
    format!("{:016x}", u64::from_be_bytes(word))
}

fn to_table<T: Serialize>(value: &T) -> CliResult<Table> {
    Table::try_from(value).map_err(|e| CliError::config(format!("cannot serialize defaults: {e}")))
}

/// Recursively overlays `top` onto `base`; keys absent from `base` are errors.
fn merge(base: &mut Table, top: Table, path: &str) -> CliResult<()> {
    for (key, value) in top {
        let here = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(t)) if !is_free_map(&here) => merge(b, t, &here)?,
            (Some(slot), value) => *slot = value,
            (None, _) => return Err(CliError::config(format!("unknown config key `{here}`"))),
        }
    }
    Ok(())
}

/// Kernel and forcing parameter tables accept arbitrary keys.
fn is_free_map(path: &str) -> bool {
    path.ends_with("_params")
}

fn parse_env_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_owned())),
        Err(_) => Value::String(raw.to_owned()),
    }
}

fn apply_env(table: &mut Table, prefix: &str, env: &dyn Fn(&str) -> Option<String>) {
    for (key, value) in table.iter_mut() {
        let var = format!("{prefix}_{}", key.to_uppercase());
        match value {
            Value::Table(inner) => apply_env(inner, &var, env),
            _ => {
                if let Some(raw) = env(&var) {
                    *value = parse_env_value(&raw);
                }
            }
        }
    }
}

fn read_file(path: &Path) -> CliResult<Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config file {}: {e}", path.display())))?;
    text.parse::<Table>()
        .map_err(|e| CliError::config(format!("cannot parse config file {}: {e}", path.display())))
}

/// Builds the effective configuration for section `T`.
///
/// With `path = None` or `defaults_only`, the file layer is skipped; with
/// `defaults_only` the environment layer is skipped too.
pub fn load<T: Section>(
    path: Option<&Path>,
    overrides: &Overrides,
    env: &dyn Fn(&str) -> Option<String>,
    defaults_only: bool,
) -> CliResult<Loaded<T>> {
    let mut table = Table::new();
    table.insert("run".into(), Value::Table(to_table(&RunSection::default())?));
    table.insert(T::NAME.into(), Value::Table(to_table(&T::default())?));

    let source = match path {
        Some(p) if !defaults_only => {
            let mut file = read_file(p)?;
            let mut relevant = Table::new();
            for key in ["run", T::NAME] {
                if let Some(v) = file.remove(key) {
                    relevant.insert(key.to_owned(), v);
                }
            }
            merge(&mut table, relevant, "")?;
            Some(p.to_path_buf())
        }
        _ => None,
    };

    if !defaults_only {
        apply_env(&mut table, ENV_PREFIX, env);
    }

    let section_value = table.remove(T::NAME).expect("section inserted above");
    let run_value = table.remove("run").expect("run inserted above");
    let mut run: RunSection = run_value
        .try_into()
        .map_err(|e| CliError::config(format!("[run]: {e}")))?;
    let mut section: T = section_value
        .try_into()
        .map_err(|e| CliError::config(format!("[{}]: {e}", T::NAME)))?;

    let mut warnings = Vec::new();
    if let Some(seed) = overrides.seed {
        run.seed = seed;
    }
    if let Some(tol) = overrides.tol {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(CliError::config(format!("--tol must be positive and finite, got {tol}")));
        }
        if !section.set_tolerance(tol) {
            warnings.push(format!("--tol has no effect on `{}`", T::NAME));
        }
    }
    if let Some(paths) = overrides.paths {
        if paths == 0 {
            return Err(CliError::config("--paths must be at least 1"));
        }
        if !section.set_paths(paths) {
            warnings.push(format!("--paths has no effect on `{}`", T::NAME));
        }
    }

    let mut effective = Table::new();
    effective.insert("run".into(), Value::Table(to_table(&run)?));
    effective.insert(T::NAME.into(), Value::Table(to_table(&section)?));
    let effective = toml::to_string(&effective).map_err(|e| CliError::config(e.to_string()))?;
    let digest = digest64(effective.as_bytes());
    Ok(Loaded {
        run,
        section,
        effective,
        digest,
        source,
        warnings,
    })
}

/// Named kernel or forcing with its parameters.
pub type Params = BTreeMap<String, f64>;

/// A quantity given either as a number or as `"auto"` (estimated at run time).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AutoOr {
    Auto(AutoTag),
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoTag {
    #[serde(rename = "auto")]
    Auto,
}

impl AutoOr {
    pub const AUTO: AutoOr = AutoOr::Auto(AutoTag::Auto);

    pub fn value(&self) -> Option<f64> {
        match self {
            AutoOr::Value(v) => Some(*v),
            AutoOr::Auto(_) => None,
        }
    }
}
