//! Prompt-retrieval precision of finished highlights.
//!
//! Each highlight is rendered by a separate offline path (supersampled,
//! different lighting) and counts as retrieved when its own prompt scores
//! highest against every prompt in the pool.

mod manifest;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{argmax_first, build_prompt, guidance_loss, EmbeddingBackend, PromptSpec};
use crate::math::{self, Vec3};
use crate::mesh::{primitives, Mesh};
use crate::render::{blend_colors, rasterize, Camera, DirectionalLight, Image, Lighting, RenderConfig};
use crate::result::mask_iou;

pub use manifest::{evaluate_manifest, EvalManifest, EvalPair};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfflineRenderConfig {
    pub image_size: usize,
    /// Samples per pixel along each axis.
    pub supersample: usize,
    pub highlight_color: Vec3,
    pub base_color: Vec3,
    pub background: Vec3,
    pub lighting: Lighting,
}

impl Default for OfflineRenderConfig {
    fn default() -> Self {
        let blend = RenderConfig::default();
        OfflineRenderConfig {
            image_size: 224,
            supersample: 2,
            highlight_color: blend.highlight_color,
            base_color: blend.base_color,
            background: blend.background,
            lighting: Lighting {
                ambient: 0.4,
                lights: [
                    DirectionalLight {
                        direction: [0.5, 0.6, -1.0],
                        intensity: 0.5,
                    },
                    DirectionalLight {
                        direction: [-0.4, 0.1, -1.0],
                        intensity: 0.15,
                    },
                ],
            },
        }
    }
}

impl OfflineRenderConfig {
    fn blend_config(&self) -> RenderConfig {
        RenderConfig {
            image_size: self.image_size,
            highlight_color: self.highlight_color,
            base_color: self.base_color,
            background: self.background,
            lighting: self.lighting.clone(),
        }
    }
}

/// Box-filtered supersampled render of the probability blend.
pub fn render_offline(mesh: &Mesh, probabilities: &[f64], camera: &Camera, cfg: &OfflineRenderConfig) -> Result<Image> {
    if probabilities.len() != mesh.vertex_count() {
        return Err(Error::LengthMismatch {
            what: "probabilities",
            expected: mesh.vertex_count(),
            actual: probabilities.len(),
        });
    }
    if cfg.supersample == 0 || cfg.image_size == 0 {
        return Err(Error::InvalidConfig("offline render size and supersampling must be >= 1".into()));
    }
    let ss = cfg.supersample;
    let big = cfg.image_size * ss;
    let colors = blend_colors(probabilities, &cfg.blend_config());
    let raster = rasterize(mesh, camera, big, &cfg.lighting)?;
    let hi = raster.shade_colors(mesh, &colors, cfg.background);
    let mut out = Image::new(cfg.image_size, cfg.image_size);
    let w = 1.0 / (ss * ss) as f64;
    for y in 0..cfg.image_size {
        for x in 0..cfg.image_size {
            let mut c = [0.0; 3];
            for sy in 0..ss {
                for sx in 0..ss {
                    c = math::add(c, hi.pixel(x * ss + sx, y * ss + sy));
                }
            }
            out.set_pixel(x, y, math::scale(c, w));
        }
    }
    Ok(out)
}

/// Pixels whose color reads as more highlight than base: each pixel is
/// fit as `a·G + b·(H − G)` and flagged when `b / a > 0.5`.
pub fn pixel_highlight_mask(image: &Image, highlight: Vec3, base: Vec3) -> Vec<bool> {
    let d = math::sub(highlight, base);
    let (gg, gd, dd) = (math::dot(base, base), math::dot(base, d), math::dot(d, d));
    let det = gg * dd - gd * gd;
    image
        .data
        .chunks(3)
        .map(|c| {
            let c = [c[0], c[1], c[2]];
            let (cg, cd) = (math::dot(c, base), math::dot(c, d));
            let a = (dd * cg - gd * cd) / det;
            let b = (gg * cd - gd * cg) / det;
            a > 1e-9 && b > 0.5 * a
        })
        .collect()
}

/// Scores an image against a list of prompts; higher is more similar.
pub trait PromptScorer {
    fn id(&self) -> String;
    fn similarities(&self, image: &Image, prompts: &[String]) -> Result<Vec<f64>>;
}

/// Cosine similarity in an embedding backend's space.
pub struct ClipScorer<B>(pub B);

impl<B: EmbeddingBackend> PromptScorer for ClipScorer<B> {
    fn id(&self) -> String {
        self.0.id().to_string()
    }

    fn similarities(&self, image: &Image, prompts: &[String]) -> Result<Vec<f64>> {
        let e = self.0.embed_images(std::slice::from_ref(image))?;
        prompts
            .iter()
            .map(|p| Ok(-guidance_loss(&e[0], &self.0.embed_text(p)?)?))
            .collect()
    }
}

/// Mock scorer with a known answer: prompt `i` scores the pixel IoU between
/// the image's highlight mask and a render of ground-truth mask `i`.
pub struct MaskIoUScorer {
    masks: Vec<Vec<bool>>,
    highlight: Vec3,
    base: Vec3,
}

impl MaskIoUScorer {
    pub fn new(mesh: &Mesh, camera: &Camera, vertex_masks: &[Vec<bool>], cfg: &OfflineRenderConfig) -> Result<Self> {
        let masks = vertex_masks
            .iter()
            .map(|m| {
                let p: Vec<f64> = m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
                let img = render_offline(mesh, &p, camera, cfg)?;
                Ok(pixel_highlight_mask(&img, cfg.highlight_color, cfg.base_color))
            })
            .collect::<Result<_>>()?;
        Ok(MaskIoUScorer {
            masks,
            highlight: cfg.highlight_color,
            base: cfg.base_color,
        })
    }
}

impl PromptScorer for MaskIoUScorer {
    fn id(&self) -> String {
        "mock-mask-iou".into()
    }

    fn similarities(&self, image: &Image, prompts: &[String]) -> Result<Vec<f64>> {
        if prompts.len() != self.masks.len() {
            return Err(Error::LengthMismatch {
                what: "prompt pool",
                expected: self.masks.len(),
                actual: prompts.len(),
            });
        }
        let m = pixel_highlight_mask(image, self.highlight, self.base);
        Ok(self.masks.iter().map(|t| mask_iou(&m, t)).collect())
    }
}

/// Full prompts for `object` over the region pool.
pub fn pool_prompts(object: &str, pool: &[String], template: &str) -> Result<Vec<String>> {
    pool.iter()
        .map(|region| {
            build_prompt(&PromptSpec {
                object_name: object.to_string(),
                region_name: region.clone(),
                template: template.to_string(),
            })
        })
        .collect()
}

/// Index of the pool entry most similar to `image`; lowest index on ties.
pub fn retrieval_rank(
    image: &Image,
    object: &str,
    pool: &[String],
    template: &str,
    scorer: &dyn PromptScorer,
) -> Result<usize> {
    if pool.is_empty() {
        return Err(Error::Empty("prompt pool"));
    }
    let prompts = pool_prompts(object, pool, template)?;
    let scores = scorer.similarities(image, &prompts)?;
    if scores.len() != pool.len() {
        return Err(Error::Backend(format!(
            "scorer returned {} scores for {} prompts",
            scores.len(),
            pool.len()
        )));
    }
    argmax_first(&scores).ok_or(Error::Empty("scores"))
}

/// `100 · successes / total`.
pub fn r_precision(successes: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::Empty("retrieval results"));
    }
    if successes > total {
        return Err(Error::InvalidConfig("more successes than results".into()));
    }
    Ok(100.0 * successes as f64 / total as f64)
}

pub struct RetrievalItem<'a> {
    pub image: Image,
    pub object: String,
    pub target: usize,
    pub scorer: &'a dyn PromptScorer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub r_precision: f64,
    pub pool: Vec<String>,
    pub rows: Vec<EvalRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub object: String,
    pub target: usize,
    pub retrieved: usize,
}

impl EvalReport {
    /// Plain-text table, one row per item plus a summary line.
    pub fn table(&self) -> String {
        let mut out = format!("{:<4} {:<16} {:<20} {:<20} {}\n", "#", "object", "target", "retrieved", "ok");
        for (i, r) in self.rows.iter().enumerate() {
            out.push_str(&format!(
                "{:<4} {:<16} {:<20} {:<20} {}\n",
                i,
                r.object,
                self.pool[r.target],
                self.pool[r.retrieved],
                if r.target == r.retrieved { "yes" } else { "no" }
            ));
        }
        out.push_str(&format!("R-precision: {:.2}\n", self.r_precision));
        out
    }
}

pub fn clip_r_precision(items: &[RetrievalItem<'_>], pool: &[String], template: &str) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::Empty("retrieval items"));
    }
    let mut rows = Vec::with_capacity(items.len());
    for item in items {
        if item.target >= pool.len() {
            return Err(Error::InvalidConfig(format!(
                "target index {} outside pool of {}",
                item.target,
                pool.len()
            )));
        }
        let retrieved = retrieval_rank(&item.image, &item.object, pool, template, item.scorer)?;
        rows.push(EvalRow {
            object: item.object.clone(),
            target: item.target,
            retrieved,
        });
    }
    let hits = rows.iter().filter(|r| r.target == r.retrieved).count();
    Ok(EvalReport {
        r_precision: r_precision(hits, rows.len())?,
        pool: pool.to_vec(),
        rows,
    })
}

/// A region on the unit sphere with a camera that sees it.
pub struct SyntheticRegion {
    pub name: &'static str,
    pub mask: Vec<bool>,
    pub camera: Camera,
}

/// Six polar caps and two bands on an icosphere.
pub fn synthetic_dataset() -> (Mesh, Vec<SyntheticRegion>) {
    use std::f64::consts::{FRAC_PI_2, PI};
    let mesh = primitives::icosphere(3);
    let cap = |d: Vec3| -> Vec<bool> { mesh.vertices.iter().map(|&v| math::dot(v, d) > 0.6).collect() };
    let band = |axis: usize| -> Vec<bool> { mesh.vertices.iter().map(|v| v[axis].abs() < 0.25).collect() };
    let top = FRAC_PI_2 - 0.35;
    let regions = vec![
        SyntheticRegion { name: "front", mask: cap([0.0, 0.0, 1.0]), camera: Camera::orbit(0.0, 0.0) },
        SyntheticRegion { name: "back", mask: cap([0.0, 0.0, -1.0]), camera: Camera::orbit(PI, 0.0) },
        SyntheticRegion { name: "right side", mask: cap([1.0, 0.0, 0.0]), camera: Camera::orbit(FRAC_PI_2, 0.0) },
        SyntheticRegion { name: "left side", mask: cap([-1.0, 0.0, 0.0]), camera: Camera::orbit(-FRAC_PI_2, 0.0) },
        SyntheticRegion { name: "top", mask: cap([0.0, 1.0, 0.0]), camera: Camera::orbit(0.3, top) },
        SyntheticRegion { name: "bottom", mask: cap([0.0, -1.0, 0.0]), camera: Camera::orbit(0.3, -top) },
        SyntheticRegion { name: "belt", mask: band(1), camera: Camera::orbit(0.5, 0.4) },
        SyntheticRegion { name: "stripe", mask: band(0), camera: Camera::orbit(0.0, 0.4) },
    ];
    (mesh, regions)
}

/// Retrieval over [`synthetic_dataset`] with ideal highlights and the
/// mask-IoU mock scorer.
pub fn evaluate_synthetic(cfg: &OfflineRenderConfig) -> Result<EvalReport> {
    let (mesh, regions) = synthetic_dataset();
    let pool: Vec<String> = regions.iter().map(|r| r.name.to_string()).collect();
    let masks: Vec<Vec<bool>> = regions.iter().map(|r| r.mask.clone()).collect();
    let scorers = regions
        .iter()
        .map(|r| MaskIoUScorer::new(&mesh, &r.camera, &masks, cfg))
        .collect::<Result<Vec<_>>>()?;
    let items = regions
        .iter()
        .zip(&scorers)
        .enumerate()
        .map(|(i, (r, s))| {
            let p: Vec<f64> = r.mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            Ok(RetrievalItem {
                image: render_offline(&mesh, &p, &r.camera, cfg)?,
                object: "sphere".into(),
                target: i,
                scorer: s,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    clip_r_precision(&items, &pool, crate::guidance::DEFAULT_TEMPLATE)
}
