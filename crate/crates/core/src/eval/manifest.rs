use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{clip_r_precision, render_offline, EvalReport, OfflineRenderConfig, PromptScorer, RetrievalItem};
use crate::error::{Error, Result};
use crate::guidance::DEFAULT_TEMPLATE;
use crate::mesh::load_mesh;
use crate::render::Camera;
use crate::result::HighlightResult;

/// Retrieval dataset: a prompt pool and the highlights to score against it.
/// Relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalManifest {
    pub prompt_pool: Vec<String>,
    pub backend: String,
    #[serde(default = "default_template")]
    pub template: String,
    pub pairs: Vec<EvalPair>,
}

fn default_template() -> String {
    DEFAULT_TEMPLATE.to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalPair {
    pub mesh: PathBuf,
    pub object: String,
    /// Index into the prompt pool.
    pub target: usize,
    /// Highlight result JSON produced for this pair.
    pub result: PathBuf,
    #[serde(default)]
    pub camera: Camera,
}

impl EvalManifest {
    pub fn validate(&self) -> Result<()> {
        if self.prompt_pool.len() < 2 {
            return Err(Error::InvalidConfig("prompt_pool needs at least 2 entries".into()));
        }
        if self.pairs.is_empty() {
            return Err(Error::Empty("manifest pairs"));
        }
        for (i, p) in self.pairs.iter().enumerate() {
            if p.target >= self.prompt_pool.len() {
                return Err(Error::InvalidConfig(format!(
                    "pair {i}: target {} outside prompt pool of {}",
                    p.target,
                    self.prompt_pool.len()
                )));
            }
            p.camera.validate()?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: EvalManifest = toml::from_str(text).map_err(|e| Error::parse("TOML", e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    /// Parses and validates a manifest file, resolving relative paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in &mut m.pairs {
            p.mesh = base.join(&p.mesh);
            p.result = base.join(&p.result);
        }
        Ok(m)
    }
}

/// Renders every pair's highlight offline and scores it with `scorer`.
pub fn evaluate_manifest(
    manifest: &EvalManifest,
    scorer: &dyn PromptScorer,
    cfg: &OfflineRenderConfig,
) -> Result<EvalReport> {
    manifest.validate()?;
    let items = manifest
        .pairs
        .iter()
        .map(|pair| {
            let result = HighlightResult::load_json(&pair.result)?;
            let mesh = load_mesh(&pair.mesh)?.transformed(&result.transform);
            Ok(RetrievalItem {
                image: render_offline(&mesh, &result.probabilities, &pair.camera, cfg)?,
                object: pair.object.clone(),
                target: pair.target,
                scorer,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    clip_r_precision(&items, &manifest.prompt_pool, &manifest.template)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
prompt_pool = ["hat", "shoes"]
backend = "mock-hash-512-0"

[[pairs]]
mesh = "dog.obj"
object = "dog"
target = 1
result = "dog/probabilities.json"
"#;

    #[test]
    fn parses_and_validates() {
        let m = EvalManifest::from_toml(SAMPLE).unwrap();
        assert_eq!(m.pairs[0].target, 1);
        assert_eq!(m.template, DEFAULT_TEMPLATE);
        assert_eq!(m.pairs[0].camera, Camera::default());

        assert!(EvalManifest::from_toml(&SAMPLE.replace("target = 1", "target = 2")).is_err());
        assert!(EvalManifest::from_toml(&SAMPLE.replace(r#", "shoes""#, "")).is_err());
        assert!(EvalManifest::from_toml(&format!("{SAMPLE}\nextra = 1")).is_err());
    }
}
