//! Checkpoint directory layout:
//!
//! - `run.json`: version, step, config, guidance id, loss history
//! - `field.arch` or `direct.bin`: the optimized variable
//! - `adam.bin`: optimizer moments
//! - `rng.bin`: view-sampling RNG state

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{Adam, Optimizer, RunConfig, Variable};
use crate::error::{Error, Result};
use crate::field::{load_field, save_field};
use crate::guidance::Guidance;
use crate::mesh::Mesh;

pub const CHECKPOINT_VERSION: u32 = 1;

const RUN_FILE: &str = "run.json";
const FIELD_FILE: &str = "field.arch";
const DIRECT_FILE: &str = "direct.bin";
const ADAM_FILE: &str = "adam.bin";
const RNG_FILE: &str = "rng.bin";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunManifest {
    format_version: u32,
    step: usize,
    vertex_count: usize,
    guidance_id: String,
    augmentation_calls: u64,
    config: RunConfig,
    loss_history: Vec<f64>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn rng_to_bytes(rng: &ChaCha8Rng) -> Vec<u8> {
    let mut out = Vec::with_capacity(56);
    out.extend_from_slice(&rng.get_seed());
    out.extend_from_slice(&rng.get_stream().to_le_bytes());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    out
}

fn rng_from_bytes(bytes: &[u8]) -> Result<ChaCha8Rng> {
    if bytes.len() != 56 {
        return Err(Error::Checkpoint(format!("rng state has {} bytes, expected 56", bytes.len())));
    }
    let seed: [u8; 32] = bytes[..32].try_into().expect("32 bytes");
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(u64::from_le_bytes(bytes[32..40].try_into().expect("8 bytes")));
    rng.set_word_pos(u128::from_le_bytes(bytes[40..56].try_into().expect("16 bytes")));
    Ok(rng)
}

impl<'a> Optimizer<'a> {
    /// Writes the full run state into `dir`, creating it if needed.
    pub fn checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        match &self.variable {
            Variable::Field(f) => {
                save_field(f, dir.join(FIELD_FILE))?;
                let _ = fs::remove_file(dir.join(DIRECT_FILE));
            }
            Variable::Direct(p) => {
                let bytes: Vec<u8> = p.iter().flat_map(|x| x.to_le_bytes()).collect();
                write(&dir.join(DIRECT_FILE), &bytes)?;
                let _ = fs::remove_file(dir.join(FIELD_FILE));
            }
        }
        write(&dir.join(ADAM_FILE), &self.adam.to_bytes())?;
        write(&dir.join(RNG_FILE), &rng_to_bytes(&self.rng))?;
        let manifest = RunManifest {
            format_version: CHECKPOINT_VERSION,
            step: self.step,
            vertex_count: self.mesh.vertex_count(),
            guidance_id: self.guidance.id(),
            augmentation_calls: self.augmentation_calls,
            config: self.config.clone(),
            loss_history: self.loss_history.clone(),
        };
        let mut json = serde_json::to_vec_pretty(&manifest)?;
        json.push(b'\n');
        // Manifest last: a directory with a manifest is complete.
        write(&dir.join(RUN_FILE), &json)
    }

    /// Restores a run written by [`Optimizer::checkpoint`]. The mesh and
    /// guidance must be the ones the run was started with.
    pub fn resume(dir: impl AsRef<Path>, mesh: &'a Mesh, guidance: &'a dyn Guidance) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: RunManifest = serde_json::from_slice(&read(&dir.join(RUN_FILE))?)
            .map_err(|e| Error::Checkpoint(format!("run manifest: {e}")))?;
        if manifest.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                manifest.format_version
            )));
        }
        if manifest.vertex_count != mesh.vertex_count() {
            return Err(Error::Checkpoint(format!(
                "checkpoint was taken on a mesh with {} vertices, got {}",
                manifest.vertex_count,
                mesh.vertex_count()
            )));
        }
        if manifest.guidance_id != guidance.id() {
            return Err(Error::Checkpoint(format!(
                "checkpoint was taken with guidance '{}', got '{}'",
                manifest.guidance_id,
                guidance.id()
            )));
        }
        if manifest.loss_history.len() != manifest.step {
            return Err(Error::Checkpoint("loss history length differs from step".into()));
        }
        let variable = if dir.join(FIELD_FILE).exists() {
            let f = load_field(dir.join(FIELD_FILE))?;
            if f.config() != &manifest.config.effective_field_config() {
                return Err(Error::Checkpoint("field archive config differs from run config".into()));
            }
            Variable::Field(f)
        } else {
            let bytes = read(&dir.join(DIRECT_FILE))?;
            if bytes.len() != 8 * mesh.vertex_count() {
                return Err(Error::Checkpoint("direct probabilities are truncated".into()));
            }
            Variable::Direct(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            )
        };
        let ocfg = &manifest.config.optimization;
        let adam = Adam::from_bytes(&read(&dir.join(ADAM_FILE))?, ocfg.learning_rate, ocfg.adam)?;
        if adam.m.len() != variable.num_scalars() {
            return Err(Error::Checkpoint("optimizer state size differs from variable".into()));
        }
        let rng = rng_from_bytes(&read(&dir.join(RNG_FILE))?)?;
        let mut opt = Optimizer::with_variable(mesh, guidance, manifest.config, variable)?;
        opt.adam = adam;
        opt.rng = rng;
        opt.step = manifest.step;
        opt.loss_history = manifest.loss_history;
        opt.augmentation_calls = manifest.augmentation_calls;
        Ok(opt)
    }
}
