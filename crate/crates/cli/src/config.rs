//! Run configuration: a TOML file merged with dotted command-line
//! overrides. Precedence per key: dedicated flag > `--set` override >
//! config-file value > built-in default. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mef_core::bilevel::{SearchConfig, TrainConfig};
use mef_core::net::NetConfig;
use mef_core::wsras::{ThetaRule, WsrasConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub train_manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
    pub natural_pool: Option<PathBuf>,
    pub extractor_weights: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Where fused PNGs are written/read; defaults to `<output_dir>/fused`.
    pub fused_dir: Option<PathBuf>,
    /// Checkpoint consumed by `fuse`; defaults to `<output_dir>/model.mefc`.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub width: usize,
    pub stream_edges: usize,
    pub t_iters: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = NetConfig::default();
        ModelSection {
            width: d.width,
            stream_edges: d.stream_edges,
            t_iters: d.t_iters,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub lr_alpha: f64,
    pub lr_beta: f64,
    pub lr_omega: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub crop: usize,
    pub retain_p: usize,
    /// `-1` selects the adaptive rule (half the uniform weight); a value in
    /// `(0, 1)` is used as a fixed threshold.
    pub theta: f64,
}

impl Default for SearchSection {
    fn default() -> Self {
        let d = SearchConfig::default();
        SearchSection {
            lr_alpha: d.lr_alpha,
            lr_beta: d.lr_beta,
            lr_omega: d.lr_omega,
            epochs: d.search_epochs,
            batch_size: d.batch_size,
            crop: d.crop,
            retain_p: d.wsras.retain_p,
            theta: -1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub crop: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr: d.lr,
            crop: d.crop,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastiveSection {
    /// `deterministic_fallback` or `pretrained_vgg16`.
    pub backend: String,
    /// Tap stages of the fallback backend (1-based).
    pub layers: Vec<usize>,
}

impl Default for ContrastiveSection {
    fn default() -> Self {
        ContrastiveSection {
            backend: "deterministic_fallback".into(),
            layers: vec![1, 2, 3, 4],
        }
    }
}

/// The full run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsSection,
    pub model: ModelSection,
    pub search: SearchSection,
    pub train: TrainSection,
    pub contrastive: ContrastiveSection,
}

impl RunConfig {
    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            width: self.model.width,
            stream_edges: self.model.stream_edges,
            t_iters: self.model.t_iters,
        }
    }

    pub fn wsras_config(&self) -> CliResult<WsrasConfig> {
        let theta = if self.search.theta < 0.0 {
            ThetaRule::HalfUniform
        } else if self.search.theta > 0.0 && self.search.theta < 1.0 {
            ThetaRule::Fixed(self.search.theta)
        } else {
            return Err(CliError::config(format!(
                "search.theta must be -1 (adaptive) or in (0, 1), got {}",
                self.search.theta
            )));
        };
        Ok(WsrasConfig {
            theta,
            retain_p: self.search.retain_p,
        })
    }

    pub fn search_config(&self) -> CliResult<SearchConfig> {
        Ok(SearchConfig {
            lr_alpha: self.search.lr_alpha,
            lr_beta: self.search.lr_beta,
            lr_omega: self.search.lr_omega,
            search_epochs: self.search.epochs,
            batch_size: self.search.batch_size,
            seed: self.seed,
            crop: self.search.crop,
            wsras: self.wsras_config()?,
            net: self.net_config(),
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            seed: self.seed,
            crop: self.train.crop,
        }
    }

    pub fn output_dir(&self) -> CliResult<&Path> {
        self.paths
            .output_dir
            .as_deref()
            .ok_or_else(|| CliError::config("paths.output_dir is required"))
    }

    pub fn fused_dir(&self) -> CliResult<PathBuf> {
        Ok(match &self.paths.fused_dir {
            Some(p) => p.clone(),
            None => self.output_dir()?.join("fused"),
        })
    }

    pub fn checkpoint_path(&self) -> CliResult<PathBuf> {
        Ok(match &self.paths.checkpoint {
            Some(p) => p.clone(),
            None => self.output_dir()?.join("model.mefc"),
        })
    }
}

/// Parse a `section.key=value` override into a nested TOML assignment.
fn apply_override(table: &mut toml::Table, spec: &str) -> CliResult<()> {
    let (key_path, raw_value) = spec
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{spec}` is not of the form key=value")))?;
    let value: toml::Value = match raw_value.parse::<i64>() {
        Ok(v) => toml::Value::Integer(v),
        Err(_) => match raw_value.parse::<f64>() {
            Ok(v) => toml::Value::Float(v),
            Err(_) => match raw_value.parse::<bool>() {
                Ok(v) => toml::Value::Boolean(v),
                Err(_) => toml::Value::String(raw_value.to_string()),
            },
        },
    };
    let keys: Vec<&str> = key_path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::config(format!("override `{spec}` has an empty key segment")));
    }
    let mut current = table;
    for key in &keys[..keys.len() - 1] {
        current = current
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                CliError::config(format!("override `{spec}`: `{key}` is not a section"))
            })?;
    }
    current.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Load the configuration: file (optional) -> `--set` overrides -> `--seed`.
pub fn load_config(
    file: Option<&Path>,
    overrides: &[String],
    seed_flag: Option<u64>,
) -> CliResult<RunConfig> {
    let mut table: toml::Table = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::config(format!("cannot read config {}: {e}", path.display()))
            })?;
            text.parse().map_err(|e| {
                CliError::config(format!("cannot parse config {}: {e}", path.display()))
            })?
        }
        None => toml::Table::new(),
    };
    for spec in overrides {
        apply_override(&mut table, spec)?;
    }
    let mut cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::config(format!("invalid configuration: {e}")))?;
    if let Some(seed) = seed_flag {
        cfg.seed = seed;
    }
    // Paths in the file resolve relative to the file's directory.
    if let Some(base) = file.and_then(|f| f.parent()) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&path);
                }
            }
        };
        fix(&mut cfg.paths.train_manifest);
        fix(&mut cfg.paths.eval_manifest);
        fix(&mut cfg.paths.natural_pool);
        fix(&mut cfg.paths.extractor_weights);
        fix(&mut cfg.paths.output_dir);
        fix(&mut cfg.paths.fused_dir);
        fix(&mut cfg.paths.checkpoint);
    }
    Ok(cfg)
}

/// A canonical snapshot of the effective configuration, stored inside
/// checkpoints for provenance.
pub fn snapshot(cfg: &RunConfig) -> String {
    toml::to_string_pretty(cfg).unwrap_or_default()
}
