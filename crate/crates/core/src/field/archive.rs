//! Single-file field archive.
//!
//! Layout: the 8-byte magic `HLFIELD\0`, a little-endian `u64` manifest
//! length, the JSON manifest, then the parameter blob (little-endian `f32`,
//! tensors at the byte offsets listed in the manifest).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FieldConfig, HighlighterField};
use crate::error::{Error, Result};
use crate::mesh::NormalizationTransform;

const MAGIC: &[u8; 8] = b"HLFIELD\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveMetadata {
    /// Transform that maps the source mesh into the field's frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormalizationTransform>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    config: FieldConfig,
    tensors: Vec<TensorEntry>,
    blob_bytes: usize,
    #[serde(default)]
    metadata: ArchiveMetadata,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn save_field(field: &HighlighterField, path: impl AsRef<Path>) -> Result<()> {
    save_field_with(field, &ArchiveMetadata::default(), path)
}

pub fn save_field_with(
    field: &HighlighterField,
    metadata: &ArchiveMetadata,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: field.config().clone(),
        tensors: field
            .tensor_specs()
            .into_iter()
            .map(|(name, shape, offset)| TensorEntry {
                name,
                shape,
                offset: offset * 4,
            })
            .collect(),
        blob_bytes: field.num_parameters() * 4,
        metadata: metadata.clone(),
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    let mut bytes = Vec::with_capacity(16 + json.len() + manifest.blob_bytes);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for p in field.params() {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_field(path: impl AsRef<Path>) -> Result<HighlighterField> {
    load_field_archive(path).map(|(f, _)| f)
}

pub fn load_field_archive(path: impl AsRef<Path>) -> Result<(HighlighterField, ArchiveMetadata)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<(HighlighterField, ArchiveMetadata)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Archive("missing field archive magic".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let json = bytes
        .get(16..16usize.saturating_add(len))
        .ok_or_else(|| Error::Archive("manifest truncated".into()))?;
    let manifest: Manifest = serde_json::from_slice(json)
        .map_err(|e| Error::Archive(format!("bad manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Archive(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    manifest.config.validate()?;
    let blob = &bytes[16 + len..];
    if blob.len() != manifest.blob_bytes {
        return Err(Error::Archive(format!(
            "blob has {} bytes, manifest declares {}",
            blob.len(),
            manifest.blob_bytes
        )));
    }
    let expected = super::tensor_specs(&super::layout(&manifest.config).0);
    if expected.len() != manifest.tensors.len() {
        return Err(Error::Archive(format!(
            "manifest lists {} tensors, config implies {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    let mut total = 0;
    for ((name, shape, offset), entry) in expected.iter().zip(&manifest.tensors) {
        if *name != entry.name || *shape != entry.shape || offset * 4 != entry.offset {
            return Err(Error::Archive(format!(
                "tensor {} has shape {:?} at byte {}, expected {name} {shape:?} at byte {}",
                entry.name,
                entry.shape,
                entry.offset,
                offset * 4
            )));
        }
        total += shape.iter().product::<usize>();
    }
    if total * 4 != blob.len() {
        return Err(Error::Archive(format!(
            "blob has {} bytes, tensors need {}",
            blob.len(),
            total * 4
        )));
    }
    let params = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let field = HighlighterField::from_parameters(&manifest.config, params)?;
    Ok((field, manifest.metadata))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{init_field, FieldConfig};

    fn small() -> HighlighterField {
        init_field(&FieldConfig {
            depth: 3,
            width: 8,
            init_seed: 7,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.arch");
        let f = init_field(&FieldConfig { init_seed: 1, ..Default::default() }).unwrap();
        let meta = ArchiveMetadata {
            normalization: Some(NormalizationTransform {
                translation: [1.0, 2.0, 3.0],
                scale: 0.5,
            }),
        };
        save_field_with(&f, &meta, &path).unwrap();
        let (g, meta2) = load_field_archive(&path).unwrap();
        assert_eq!(meta, meta2);
        let pts: Vec<_> = (0..100)
            .map(|i| {
                let t = i as f64 / 100.0;
                [t.sin(), (3.0 * t).cos() * 0.5, t - 0.5]
            })
            .collect();
        let a = f.evaluate_probabilities(&pts).unwrap();
        let b = g.evaluate_probabilities(&pts).unwrap();
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.arch");
        save_field(&small(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_field(&path), Err(Error::Archive(_))));
    }

    fn rewrite_manifest(bytes: &[u8], edit: impl FnOnce(&mut serde_json::Value)) -> Vec<u8> {
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let mut v: serde_json::Value = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
        edit(&mut v);
        let json = serde_json::to_vec(&v).unwrap();
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&bytes[16 + len..]);
        out
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.arch");
        save_field(&small(), &path).unwrap();
        let bytes = rewrite_manifest(&fs::read(&path).unwrap(), |v| {
            v["tensors"][0]["shape"] = serde_json::json!([3, 8]);
        });
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_field(&path), Err(Error::Archive(_))));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.arch");
        save_field(&small(), &path).unwrap();
        let bytes = rewrite_manifest(&fs::read(&path).unwrap(), |v| {
            v["format_version"] = serde_json::json!(99);
        });
        fs::write(&path, bytes).unwrap();
        let err = load_field(&path).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(decode(b"not an archive at all").is_err());
    }
}
