use std::fs;
use std::path::{Path, PathBuf};

use panolayout::error::{Error, Result};
use panolayout::layout::CornerParams;
use panolayout::metrics::MetricOptions;
use panolayout::model::{ModelConfig, PostProc};
use serde::{Deserialize, Serialize};

/// A training run. Relative paths are resolved against the directory of the
/// config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// One of the named ablations, applied on top of `model`.
    #[serde(default)]
    pub ablation: Option<String>,
    pub dataset: PathBuf,
    pub out: PathBuf,
    /// Overrides `model.seed` when present.
    #[serde(default)]
    pub seed: Option<u64>,
    pub steps: u64,
    /// Steps between periodic checkpoints; 0 writes only the final one.
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub metrics: MetricOptions,
    #[serde(default)]
    pub corners: CornerParams,
    #[serde(default)]
    pub postproc: PostProc,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.dataset = base.join(&cfg.dataset);
        cfg.out = base.join(&cfg.out);
        cfg.effective_model()?;
        if cfg.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        if cfg.metrics.grid == 0 || cfg.metrics.image_width < 2 || cfg.metrics.image_height < 2 {
            return Err(Error::Config(
                "metric grid and image size must be positive".into(),
            ));
        }
        Ok(cfg)
    }

    /// The model config actually trained: ablation and seed applied.
    pub fn effective_model(&self) -> Result<ModelConfig> {
        let mut m = match &self.ablation {
            Some(name) => self.model.with_ablation(name)?,
            None => self.model.clone(),
        };
        if let Some(seed) = self.seed {
            m.seed = seed;
        }
        m.validate()?;
        Ok(m)
    }
}
