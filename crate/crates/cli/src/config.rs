//! Run configuration files. Every section is optional and falls back to the
//! library defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use highlighter_core::field::FieldConfig;
use highlighter_core::guidance::DEFAULT_TEMPLATE;
use highlighter_core::optimize::{OptimizationConfig, RunConfig};
use highlighter_core::render::{RenderConfig, ViewDistribution};

use crate::Usage;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// Mask guidance toward the polar cap `z > cap_threshold` of the
    /// normalized mesh.
    #[default]
    MockCap,
    /// Deterministic hash embedding backend.
    MockHash,
    /// HTTP embedding service.
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Remote endpoint; falls back to the environment variable.
    pub url: Option<String>,
    pub timeout_secs: u64,
    /// On-disk cache for remote text embeddings.
    pub cache_dir: Option<PathBuf>,
    /// Embedding size of the hash backend.
    pub dim: usize,
    /// Cap height of the mock-cap target.
    pub cap_threshold: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::MockCap,
            url: None,
            timeout_secs: 120,
            cache_dir: None,
            dim: 512,
            cap_threshold: 0.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub object: Option<String>,
    pub region: Option<String>,
    pub template: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            object: None,
            region: None,
            template: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

/// Config file of `highlight` and `select-view`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HighlightConfig {
    pub mesh: Option<PathBuf>,
    pub output: PathBuf,
    /// Pick the primary view by scoring the candidate views before
    /// optimizing; otherwise `views.primary` is used as given.
    pub select_view: bool,
    pub prompt: PromptConfig,
    pub backend: BackendConfig,
    pub field: FieldConfig,
    pub optimization: OptimizationConfig,
    pub render: RenderConfig,
    pub views: ViewDistribution,
}

impl Default for HighlightConfig {
    fn default() -> Self {
        HighlightConfig {
            mesh: None,
            output: PathBuf::from("highlight-out"),
            select_view: true,
            prompt: PromptConfig::default(),
            backend: BackendConfig::default(),
            field: FieldConfig::default(),
            optimization: OptimizationConfig::default(),
            render: RenderConfig::default(),
            views: ViewDistribution::default(),
        }
    }
}

impl HighlightConfig {
    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            field: self.field.clone(),
            optimization: self.optimization.clone(),
            render: self.render.clone(),
            views: self.views.clone(),
        }
    }
}

/// Reads a TOML file, or the defaults when no path is given.
pub fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).map_err(|e| Usage(format!("config {}: {e}", path.display())).into())
}
