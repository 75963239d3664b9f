use std::path::{Path, PathBuf};

use alcoref::acquisition::Strategy;
use alcoref::active_loop::ReadBudget;
use alcoref::scorer::Hyperparams;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

/// Config file schema shared by `simulate`, `grid` and `serve`. Every field
/// is optional; command-line flags (or their environment variables) win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub paths: PathsConfig,
    pub run: RunSection,
    pub grid: GridSection,
    pub serve: ServeSection,
    pub hyper: HyperOverrides,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub model: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub log_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub strategy: Option<Strategy>,
    pub k: Option<usize>,
    pub m: Option<ReadBudget>,
    pub cycles: Option<usize>,
    pub repeats: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub ks: Option<Vec<usize>>,
    pub ms: Option<Vec<ReadBudget>>,
    pub strategies: Option<Vec<Strategy>>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub host: Option<String>,
    pub port: Option<u16>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperOverrides {
    pub max_epochs: Option<usize>,
    pub early_stop_patience: Option<usize>,
    pub learning_rate: Option<f64>,
    pub dropout: Option<f64>,
    pub grad_clip: Option<f64>,
    pub prune_ratio: Option<f64>,
    pub holdout_fraction: Option<f64>,
    pub mention_threshold: Option<f64>,
}

impl HyperOverrides {
    /// Applies `self` and then `over` on top of `base`.
    pub fn apply(&self, over: &HyperOverrides, base: Hyperparams) -> Result<Hyperparams> {
        let mut h = base;
        for o in [self, over] {
            if let Some(v) = o.max_epochs {
                h.max_epochs = v;
            }
            if let Some(v) = o.early_stop_patience {
                h.early_stop_patience = v;
            }
            if let Some(v) = o.learning_rate {
                h.learning_rate = v;
            }
            if let Some(v) = o.dropout {
                h.dropout = v;
            }
            if let Some(v) = o.grad_clip {
                h.grad_clip = v;
            }
            if let Some(v) = o.prune_ratio {
                h.prune_ratio = v;
            }
            if let Some(v) = o.holdout_fraction {
                h.holdout_fraction = v;
            }
            if let Some(v) = o.mention_threshold {
                h.mention_threshold = v;
            }
        }
        h.validate()?;
        Ok(h)
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// First of `flag` and `file`, or an error naming the flag.
pub fn required<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T> {
    match flag.or(file) {
        Some(v) => Ok(v),
        None => bail!("missing --{name} (flag, ALCOREF_{} or config file)", name.to_uppercase().replace('-', "_")),
    }
}

pub fn existing(path: PathBuf, what: &str) -> Result<PathBuf> {
    if !path.exists() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(path)
}
