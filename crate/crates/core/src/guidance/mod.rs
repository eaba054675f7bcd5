//! Text prompts, embedding backends and the similarity loss that drives
//! the field.

mod backend;
mod mock;
mod remote;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::HighlighterField;
use crate::mesh::Mesh;
use crate::render::{blend_colors, rasterize, Camera, Image, PerspectiveWarp, Rasterization, RenderConfig};

pub use backend::{CachedBackend, EmbeddingBackend, HashMockBackend};
pub use mock::{highlight_channel, MockGuidance};
pub use remote::{RemoteBackend, BACKEND_URL_ENV};

pub const DEFAULT_TEMPLATE: &str = "A 3D render of a gray [object] with highlighted [region]";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSpec {
    pub object_name: String,
    pub region_name: String,
    #[serde(default = "default_template")]
    pub template: String,
}

fn default_template() -> String {
    DEFAULT_TEMPLATE.to_string()
}

impl PromptSpec {
    pub fn new(object_name: impl Into<String>, region_name: impl Into<String>) -> Self {
        PromptSpec {
            object_name: object_name.into(),
            region_name: region_name.into(),
            template: default_template(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.object_name.trim().is_empty() {
            return Err(Error::InvalidConfig("object name must not be empty".into()));
        }
        if self.region_name.trim().is_empty() {
            return Err(Error::InvalidConfig("region name must not be empty".into()));
        }
        if !self.template.contains("[object]") || !self.template.contains("[region]") {
            return Err(Error::InvalidConfig(
                "prompt template needs both [object] and [region] slots".into(),
            ));
        }
        Ok(())
    }
}

pub fn build_prompt(spec: &PromptSpec) -> Result<String> {
    spec.validate()?;
    Ok(spec
        .template
        .replace("[object]", &spec.object_name)
        .replace("[region]", &spec.region_name))
}

/// Componentwise mean of per-view embeddings.
pub fn aggregate_embeddings(embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = embeddings.first().ok_or(Error::Empty("image embeddings"))?;
    let mut mean = vec![0.0; first.len()];
    for e in embeddings {
        if e.len() != mean.len() {
            return Err(Error::LengthMismatch {
                what: "embedding",
                expected: mean.len(),
                actual: e.len(),
            });
        }
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v;
        }
    }
    let n = embeddings.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

pub fn aggregate_image_embedding(backend: &dyn EmbeddingBackend, images: &[Image]) -> Result<Vec<f64>> {
    if images.is_empty() {
        return Err(Error::Empty("images"));
    }
    aggregate_embeddings(&backend.embed_images(images)?)
}

/// Negative cosine similarity.
pub fn guidance_loss(e_i: &[f64], e_t: &[f64]) -> Result<f64> {
    Ok(guidance_loss_and_grad(e_i, e_t)?.0)
}

/// Loss together with its gradient with respect to `e_i`.
pub fn guidance_loss_and_grad(e_i: &[f64], e_t: &[f64]) -> Result<(f64, Vec<f64>)> {
    if e_i.len() != e_t.len() {
        return Err(Error::LengthMismatch {
            what: "embedding",
            expected: e_t.len(),
            actual: e_i.len(),
        });
    }
    let ni = e_i.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nt = e_t.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(ni > 0.0 && nt > 0.0) {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = e_i.iter().zip(e_t).map(|(a, b)| a * b).sum();
    let cos = (dot / (ni * nt)).clamp(-1.0, 1.0);
    // d cos / d e_i = e_t / (|e_i||e_t|) − cos · e_i / |e_i|²
    let grad = e_i
        .iter()
        .zip(e_t)
        .map(|(a, b)| -(b / (ni * nt) - cos * a / (ni * ni)))
        .collect();
    Ok((-cos, grad))
}

/// One rendered view as seen by a guidance objective. `image` is the
/// augmented render; `raster` and `warp` describe how it was produced.
#[derive(Clone, Copy, Debug)]
pub struct GuidanceView<'a> {
    pub camera: &'a Camera,
    pub raster: &'a Rasterization,
    pub warp: &'a PerspectiveWarp,
    pub image: &'a Image,
}

/// A differentiable objective over a batch of rendered views.
pub trait Guidance {
    /// Stable identifier recorded in run provenance.
    fn id(&self) -> String;

    /// Whether identical inputs always produce identical outputs.
    fn is_deterministic(&self) -> bool;

    /// Loss and its gradient with respect to every view image.
    fn loss_and_grad(&self, views: &[GuidanceView<'_>]) -> Result<(f64, Vec<Image>)>;

    /// Higher means the view better matches the target.
    fn view_similarity(&self, camera: &Camera, raster: &Rasterization, image: &Image) -> Result<f64>;
}

/// Guidance through a text/image embedding backend.
pub struct ClipGuidance<B> {
    backend: B,
    prompt: String,
    text_embedding: Vec<f64>,
}

impl<B: EmbeddingBackend> ClipGuidance<B> {
    pub fn new(backend: B, spec: &PromptSpec) -> Result<Self> {
        let prompt = build_prompt(spec)?;
        let text_embedding = backend.embed_text(&prompt)?;
        Ok(ClipGuidance {
            backend,
            prompt,
            text_embedding,
        })
    }

    pub fn prompt(&self) -> &str {
        &self.prompt
    }

    pub fn text_embedding(&self) -> &[f64] {
        &self.text_embedding
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }
}

impl<B: EmbeddingBackend> Guidance for ClipGuidance<B> {
    fn id(&self) -> String {
        self.backend.id().to_string()
    }

    fn is_deterministic(&self) -> bool {
        self.backend.is_deterministic()
    }

    fn loss_and_grad(&self, views: &[GuidanceView<'_>]) -> Result<(f64, Vec<Image>)> {
        if views.is_empty() {
            return Err(Error::Empty("views"));
        }
        let images: Vec<Image> = views.iter().map(|v| v.image.clone()).collect();
        let per_view = self.backend.embed_images(&images)?;
        let e_i = aggregate_embeddings(&per_view)?;
        let (loss, d_ei) = guidance_loss_and_grad(&e_i, &self.text_embedding)?;
        let n = views.len() as f64;
        let cot: Vec<Vec<f64>> = (0..views.len())
            .map(|_| d_ei.iter().map(|g| g / n).collect())
            .collect();
        let grads = self.backend.embed_images_vjp(&images, &cot)?;
        Ok((loss, grads))
    }

    fn view_similarity(&self, _camera: &Camera, _raster: &Rasterization, image: &Image) -> Result<f64> {
        let e = self.backend.embed_images(std::slice::from_ref(image))?;
        Ok(-guidance_loss(&e[0], &self.text_embedding)?)
    }
}

/// SHA-256 of a JSON value's compact serialization. Map keys serialize in
/// sorted order, so equal configs hash equally.
pub fn config_hash(config: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(config).expect("json value serializes");
    backend::sha256_hex(&[&bytes])
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

/// Scores every candidate camera against a render of the field's current
/// blend; returns the winning index and all scores.
pub fn score_views(
    mesh: &Mesh,
    field: &HighlighterField,
    guidance: &dyn Guidance,
    candidates: &[Camera],
    cfg: &RenderConfig,
) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate views"));
    }
    let probs = field.highlight_probabilities(&mesh.vertices)?;
    let colors = blend_colors(&probs, cfg);
    candidates
        .iter()
        .map(|cam| {
            let raster = rasterize(mesh, cam, cfg.image_size, &cfg.lighting)?;
            let image = raster.shade_colors(mesh, &colors, cfg.background);
            guidance.view_similarity(cam, &raster, &image)
        })
        .collect()
}

pub fn select_primary_view(
    mesh: &Mesh,
    field: &HighlighterField,
    guidance: &dyn Guidance,
    candidates: &[Camera],
    cfg: &RenderConfig,
) -> Result<Camera> {
    let scores = score_views(mesh, field, guidance, candidates, cfg)?;
    let best = argmax_first(&scores).ok_or(Error::Empty("candidate views"))?;
    Ok(candidates[best])
}
