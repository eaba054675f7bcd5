use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::NormalizationTransform;

/// Probabilities above this are in the mask.
pub const MASK_THRESHOLD: f64 = 0.5;

/// What is needed to replay a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub prompt: String,
    pub seed: u64,
    pub backend_id: String,
    /// SHA-256 over the canonical JSON of `config`.
    pub config_hash: String,
    pub config: serde_json::Value,
}

impl Provenance {
    pub fn new(prompt: String, seed: u64, backend_id: String, config: serde_json::Value) -> Self {
        let config_hash = crate::guidance::config_hash(&config);
        Provenance {
            prompt,
            seed,
            backend_id,
            config_hash,
            config,
        }
    }
}

/// Per-vertex highlight probabilities and everything derived from them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HighlightResult {
    pub probabilities: Vec<f64>,
    pub mask: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field_archive: Option<PathBuf>,
    pub transform: NormalizationTransform,
    pub provenance: Provenance,
    #[serde(default)]
    pub loss_history: Vec<f64>,
}

pub fn threshold_mask(probabilities: &[f64]) -> Vec<bool> {
    probabilities.iter().map(|&p| p > MASK_THRESHOLD).collect()
}

impl HighlightResult {
    pub fn new(probabilities: Vec<f64>, transform: NormalizationTransform, provenance: Provenance) -> Self {
        HighlightResult {
            mask: threshold_mask(&probabilities),
            probabilities,
            field_archive: None,
            transform,
            provenance,
            loss_history: Vec::new(),
        }
    }

    /// A result carrying only a mask, with probabilities 0 or 1.
    pub fn from_mask(mask: Vec<bool>) -> Self {
        let p = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        HighlightResult::new(p, NormalizationTransform::identity(), Provenance::default())
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mask.len() != self.probabilities.len() {
            return Err(Error::LengthMismatch {
                what: "mask",
                expected: self.probabilities.len(),
                actual: self.mask.len(),
            });
        }
        for (&p, &m) in self.probabilities.iter().zip(&self.mask) {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("probability {p} outside [0, 1]")));
            }
            if m != (p > MASK_THRESHOLD) {
                return Err(Error::InvalidConfig("mask disagrees with probabilities".into()));
            }
        }
        Ok(())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let r: HighlightResult = serde_json::from_slice(&bytes)?;
        r.validate()?;
        Ok(r)
    }
}

/// Intersection over union of two masks; 1 when both are empty.
pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
