//! Run configuration: file contents merged with command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use butterfly_core::layout::LayoutKind;
use butterfly_core::operators::OperatorConfig;
use serde::{Deserialize, Serialize};

use crate::args::CommonArgs;

/// Sweep lists for `bench` and `comm`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sweep {
    pub n: Vec<usize>,
    #[serde(rename = "L")]
    pub levels: Vec<usize>,
    pub eps: Vec<f64>,
    pub p: Vec<usize>,
    pub r: Vec<usize>,
    pub kinds: Vec<LayoutKind>,
}

/// Contents of a `--config` file (JSON, or TOML for a `.toml` extension).
///
/// Unknown keys are ignored so that the manifest written by `synth` can be
/// passed back as a config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub operator: Option<OperatorConfig>,
    pub eps: Option<f64>,
    pub oversample: Option<usize>,
    pub r0: Option<usize>,
    #[serde(rename = "L")]
    pub levels: Option<usize>,
    pub center: Option<usize>,
    pub seed: Option<u64>,
    pub dense_cap: Option<usize>,
    pub leaf_size: Option<usize>,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub sweep: Sweep,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }
}

pub const DEFAULT_EPS: f64 = 1e-3;
pub const DEFAULT_OVERSAMPLE: usize = 4;
pub const DEFAULT_R0: usize = 4;
pub const DEFAULT_DENSE_CAP: usize = 4096;
pub const DEFAULT_LEAF_SIZE: usize = 16;
/// Columns of the random test matrix of the error estimate.
pub const ERROR_COLUMNS: usize = 16;

/// Effective settings after merging flags over the config file.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub operator: Option<OperatorConfig>,
    pub eps: f64,
    pub oversample: usize,
    pub r0: usize,
    pub levels: Option<usize>,
    pub center: Option<usize>,
    pub seed: u64,
    /// Largest row or column count allowed for dense oracles.
    pub dense_cap: usize,
    pub leaf_size: usize,
    pub out: PathBuf,
    pub csv: Option<PathBuf>,
    pub sweep: Sweep,
}

impl Settings {
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        // Relative paths in a config file are taken from its directory.
        let base = args
            .config
            .as_ref()
            .and_then(|p| p.parent())
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let operator = file.operator.map(|op| match op {
            OperatorConfig::Butterfly { path } if path.is_relative() => OperatorConfig::Butterfly { path: base.join(path) },
            other => other,
        });
        let s = Settings {
            operator,
            eps: args.eps.or(file.eps).unwrap_or(DEFAULT_EPS),
            oversample: args.oversample.or(file.oversample).unwrap_or(DEFAULT_OVERSAMPLE),
            r0: args.r0.or(file.r0).unwrap_or(DEFAULT_R0),
            levels: args.levels.or(file.levels),
            center: file.center,
            seed: args.seed.or(file.seed).unwrap_or(0),
            dense_cap: args.dense_cap.or(file.dense_cap).unwrap_or(DEFAULT_DENSE_CAP),
            leaf_size: file.leaf_size.unwrap_or(DEFAULT_LEAF_SIZE),
            out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from(".")),
            csv: args.csv.clone().or(file.csv),
            sweep: file.sweep,
        };
        if !(s.eps > 0.0 && s.eps < 1.0) {
            bail!("--eps must lie in (0, 1), got {}", s.eps);
        }
        if s.r0 == 0 {
            bail!("--r0 must be at least 1");
        }
        Ok(s)
    }

    pub fn operator(&self) -> Result<&OperatorConfig> {
        self.operator
            .as_ref()
            .context("no operator given; pass --config with an `operator` entry")
    }

    /// CSV destination, defaulting to `name` inside the output directory.
    pub fn csv_path(&self, name: &str) -> PathBuf {
        self.csv.clone().unwrap_or_else(|| self.out.join(name))
    }
}
