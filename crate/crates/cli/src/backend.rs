use std::time::Duration;

use anyhow::Result;

use highlighter_core::guidance::{
    CachedBackend, ClipGuidance, EmbeddingBackend, Guidance, HashMockBackend, MockGuidance, PromptSpec, RemoteBackend,
};
use highlighter_core::mesh::Mesh;
use highlighter_core::render::RenderConfig;

use crate::config::{BackendConfig, BackendKind};
use crate::Usage;

/// Embedding backend for the kinds that have one.
pub fn embedding_backend(cfg: &BackendConfig, seed: u64) -> Result<Box<dyn EmbeddingBackend>> {
    match cfg.kind {
        BackendKind::MockCap => Err(Usage("the mock-cap backend has no embedding model".into()).into()),
        BackendKind::MockHash => Ok(Box::new(HashMockBackend::new(cfg.dim, seed)?)),
        BackendKind::Remote => {
            let timeout = Duration::from_secs(cfg.timeout_secs);
            let remote = match &cfg.url {
                Some(url) => RemoteBackend::connect(url, timeout)?,
                None => RemoteBackend::from_env(timeout)?,
            };
            Ok(match &cfg.cache_dir {
                Some(dir) => Box::new(CachedBackend::with_dir(remote, dir)?),
                None => Box::new(CachedBackend::new(remote)),
            })
        }
    }
}

/// Vertices of the normalized mesh inside the mock-cap target.
pub fn cap_mask(mesh: &Mesh, threshold: f64) -> Vec<bool> {
    mesh.vertices.iter().map(|v| v[2] > threshold).collect()
}

/// Guidance for `mesh`, which must already be normalized.
pub fn guidance(
    cfg: &BackendConfig,
    mesh: &Mesh,
    spec: &PromptSpec,
    render: &RenderConfig,
    seed: u64,
) -> Result<Box<dyn Guidance>> {
    Ok(match cfg.kind {
        BackendKind::MockCap => Box::new(MockGuidance::new(
            mesh.clone(),
            cap_mask(mesh, cfg.cap_threshold),
            render.clone(),
        )?),
        _ => Box::new(ClipGuidance::new(embedding_backend(cfg, seed)?, spec)?),
    })
}
