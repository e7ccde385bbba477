use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every tunable of every subcommand. Unset keys keep their defaults; the
/// full resolved set is written to each run's manifest and by `dump-model`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `exec` (trade execution) or `toy` (binary-noise chain).
    pub problem: String,
    pub toy_horizon: usize,
    /// `identity` or `abs`.
    pub toy_terminal: String,

    /// Optional model TOML; its keys take precedence over the ones below.
    pub model_file: String,
    pub n_assets: usize,
    pub signal_dim: usize,
    pub horizon: usize,
    pub no_shorting: bool,
    pub model_seed: u64,

    pub width: usize,
    pub depth: usize,
    pub activation: String,
    pub init_seed: u64,
    pub pin_terminal: bool,

    pub iterations: usize,
    pub batch_size: usize,
    pub epoch_paths: usize,
    pub freeze_dataset: bool,
    /// `rm` or `spsa`.
    pub estimator: String,
    pub learning_rate: f64,
    pub spsa_c0: f64,
    pub train_seed: u64,
    pub inner_samples: usize,
    pub inner_seed: u64,
    pub freeze_inner: bool,
    pub eval_every: usize,
    pub checkpoint_every: usize,

    pub dual_paths: usize,
    pub dual_seed: u64,
    pub primal_paths: usize,
    pub primal_seed: u64,
    pub eval_inner_samples: usize,
    pub eval_inner_seed: u64,
    /// Draw the evaluation expectation sample afresh for every path.
    pub eval_inner_per_path: bool,
    pub greedy_samples: usize,
    pub greedy_seed: u64,

    pub solver_max_iters: usize,
    pub solver_tol: f64,
    pub random_starts: usize,
    pub solver_seed: u64,

    pub grid_points: usize,

    pub derm_width: usize,
    pub derm_depth: usize,
    pub derm_activation: String,
    pub derm_iterations: usize,
    pub derm_learning_rate: f64,
    /// `adam` or `sgd`.
    pub derm_optimizer: String,
    pub derm_paths: usize,
    pub derm_data_seed: u64,
    pub derm_eval_every: usize,
    pub derm_eval_paths: usize,
    pub derm_eval_seed: u64,
    pub derm_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub derm_dual_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub derm_primal_bound: Option<f64>,

    /// Reference value drawn on learning curves.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_value: Option<f64>,
    /// 0 uses every core.
    pub workers: usize,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: "exec".into(),
            toy_horizon: 2,
            toy_terminal: "identity".into(),
            model_file: String::new(),
            n_assets: 3,
            signal_dim: 2,
            horizon: 5,
            no_shorting: true,
            model_seed: 0,
            width: 32,
            depth: 2,
            activation: "softplus".into(),
            init_seed: 1,
            pin_terminal: true,
            iterations: 3000,
            batch_size: 8,
            epoch_paths: 256,
            freeze_dataset: false,
            estimator: "rm".into(),
            learning_rate: 1e-3,
            spsa_c0: 1e-2,
            train_seed: 0,
            inner_samples: 32,
            inner_seed: 11,
            freeze_inner: false,
            eval_every: 500,
            checkpoint_every: 0,
            dual_paths: 400,
            dual_seed: 101,
            primal_paths: 200,
            primal_seed: 202,
            eval_inner_samples: 128,
            eval_inner_seed: 303,
            eval_inner_per_path: true,
            greedy_samples: 128,
            greedy_seed: 404,
            solver_max_iters: 500,
            solver_tol: 1e-6,
            random_starts: 1,
            solver_seed: 0,
            grid_points: 21,
            derm_width: 256,
            derm_depth: 2,
            derm_activation: "relu".into(),
            derm_iterations: 1000,
            derm_learning_rate: 1e-3,
            derm_optimizer: "adam".into(),
            derm_paths: 256,
            derm_data_seed: 55,
            derm_eval_every: 50,
            derm_eval_paths: 1000,
            derm_eval_seed: 77,
            derm_seed: 7,
            derm_dual_bound: None,
            derm_primal_bound: None,
            oracle_value: None,
            workers: 0,
            out_dir: String::new(),
        }
    }
}

/// Paths recorded in a manifest so a run can be repeated from it alone.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub oracle_pinned: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub subcommand: String,
    pub version: String,
    pub config: RunConfig,
    #[serde(default)]
    pub inputs: Inputs,
    /// Resolved model parameters (execution problems only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<toml::Table>,
}

fn parse_value(key: &str, raw: &str) -> Result<toml::Value, CliError> {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => Ok(t.remove("v").expect("parsed key")),
        // bare words are strings
        Err(_) if !raw.is_empty() && raw.chars().all(|c| c.is_ascii_alphanumeric() || "-_./".contains(c)) => {
            Ok(toml::Value::String(raw.to_string()))
        }
        Err(_) => Err(CliError::Usage(format!("invalid value for `{key}`: {raw}"))),
    }
}

/// Loads a config file (or the `[config]` table and `[inputs]` of a
/// manifest) and applies `key=value` overrides.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<(RunConfig, Inputs), CliError> {
    let mut table = toml::Table::new();
    let mut inputs = Inputs::default();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
        let mut doc: toml::Table =
            text.parse().map_err(|e| CliError::Usage(format!("malformed config {}: {e}", p.display())))?;
        if doc.contains_key("subcommand") {
            if let Some(i) = doc.remove("inputs") {
                inputs = i.try_into().map_err(|e| CliError::Usage(format!("manifest inputs: {e}")))?;
            }
            table = match doc.remove("config") {
                Some(toml::Value::Table(t)) => t,
                _ => return Err(CliError::Usage("manifest has no [config] table".into())),
            };
        } else {
            table = doc;
        }
    }
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override `{o}` is not key=value")))?;
        let k = k.trim();
        table.insert(k.to_string(), parse_value(k, v.trim())?);
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("bad config key: {}", e.message())))?;
    Ok((cfg, inputs))
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}
