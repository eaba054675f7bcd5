use super::{Guidance, GuidanceView};
use crate::error::{Error, Result};
use crate::math::{self, Vec3};
use crate::mesh::Mesh;
use crate::render::{Camera, Image, Rasterization, RenderConfig};

/// Direction in chroma space along which highlight and base colors differ.
/// Gray, white and any shade of them have zero chroma.
fn chroma_axis(cfg: &RenderConfig) -> Result<Vec3> {
    let d = math::sub(cfg.highlight_color, cfg.base_color);
    let mean = (d[0] + d[1] + d[2]) / 3.0;
    let u = [d[0] - mean, d[1] - mean, d[2] - mean];
    let n2 = math::dot(u, u);
    if !(n2 > 1e-12) {
        return Err(Error::InvalidConfig(
            "highlight and base colors must differ in chroma".into(),
        ));
    }
    Ok(math::scale(u, 1.0 / n2))
}

/// Per-pixel highlight intensity: the projection of the pixel's chroma on
/// the highlight axis. A lit vertex of probability `p` with gray base
/// yields `shade · p`.
pub fn highlight_channel(image: &Image, cfg: &RenderConfig) -> Result<Vec<f64>> {
    let a = chroma_axis(cfg)?;
    Ok(image
        .data
        .chunks(3)
        .map(|c| a[0] * c[0] + a[1] * c[1] + a[2] * c[2])
        .collect())
}

/// Guidance with a known answer: compares the highlight channel of each
/// view against a render of the ground-truth mask from the same camera,
/// warped identically.
pub struct MockGuidance {
    mesh: Mesh,
    target: Vec<bool>,
    target_colors: Vec<Vec3>,
    cfg: RenderConfig,
    axis: Vec3,
}

impl MockGuidance {
    pub fn new(mesh: Mesh, target: Vec<bool>, cfg: RenderConfig) -> Result<Self> {
        if target.len() != mesh.vertex_count() {
            return Err(Error::LengthMismatch {
                what: "target mask",
                expected: mesh.vertex_count(),
                actual: target.len(),
            });
        }
        let axis = chroma_axis(&cfg)?;
        let target_colors = target
            .iter()
            .map(|&t| if t { cfg.highlight_color } else { cfg.base_color })
            .collect();
        Ok(MockGuidance {
            mesh,
            target,
            target_colors,
            cfg,
            axis,
        })
    }

    pub fn target(&self) -> &[bool] {
        &self.target
    }

    fn target_channel(&self, raster: &Rasterization, warp: Option<&crate::render::PerspectiveWarp>) -> Vec<f64> {
        let img = raster.shade_colors(&self.mesh, &self.target_colors, self.cfg.background);
        let img = match warp {
            Some(w) => w.apply(&img, self.cfg.background),
            None => img,
        };
        img.data
            .chunks(3)
            .map(|c| self.axis[0] * c[0] + self.axis[1] * c[1] + self.axis[2] * c[2])
            .collect()
    }
}

impl Guidance for MockGuidance {
    fn id(&self) -> String {
        "mock-mask".to_string()
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    /// `−mean(1 − (h − h*)²)` over every pixel of every view.
    fn loss_and_grad(&self, views: &[GuidanceView<'_>]) -> Result<(f64, Vec<Image>)> {
        if views.is_empty() {
            return Err(Error::Empty("views"));
        }
        let total: usize = views.iter().map(|v| v.image.data.len() / 3).sum();
        let n = total as f64;
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(views.len());
        for v in views {
            let target = self.target_channel(v.raster, Some(v.warp));
            let mut g = Image::new(v.image.width, v.image.height);
            for (i, (c, t)) in v.image.data.chunks(3).zip(&target).enumerate() {
                let h = self.axis[0] * c[0] + self.axis[1] * c[1] + self.axis[2] * c[2];
                let r = h - t;
                loss -= 1.0 - r * r;
                let dh = 2.0 * r / n;
                g.data[i * 3..i * 3 + 3].copy_from_slice(&math::scale(self.axis, dh));
            }
            grads.push(g);
        }
        Ok((loss / n, grads))
    }

    /// Mean ground-truth highlight intensity seen from `camera`.
    fn view_similarity(&self, _camera: &Camera, raster: &Rasterization, _image: &Image) -> Result<f64> {
        let t = self.target_channel(raster, None);
        Ok(t.iter().sum::<f64>() / t.len().max(1) as f64)
    }
}
