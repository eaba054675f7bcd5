//! Probability-weighted color blending and multi-view rendering.
//!
//! Geometry is constant during optimization, so rendering is a hard
//! rasterizer with perspective-correct barycentric color interpolation.
//! Every rendered pixel is linear in the vertex colors, which makes the
//! color gradient exact.

mod augment;
mod raster;
mod views;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, Vec3};
use crate::mesh::Mesh;

pub use augment::{augment_perspective, PerspectiveWarp};
pub use raster::{rasterize, Rasterization};
pub use views::{candidate_views, sample_views, sample_views_with, SamplingMode, ViewDistribution};

/// Highlighter yellow.
pub const DEFAULT_HIGHLIGHT: Vec3 = [204.0 / 255.0, 1.0, 0.0];
pub const DEFAULT_BASE: Vec3 = [0.5, 0.5, 0.5];

/// Orbit camera looking at the origin with +y up. Azimuth 0 sits on +z.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Camera {
    /// Radians.
    pub azimuth: f64,
    /// Radians.
    pub elevation: f64,
    pub radius: f64,
    /// Vertical field of view in degrees.
    pub fov_degrees: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            azimuth: 0.0,
            elevation: 0.0,
            radius: 2.5,
            fov_degrees: 60.0,
        }
    }
}

impl Camera {
    pub fn orbit(azimuth: f64, elevation: f64) -> Self {
        Camera {
            azimuth,
            elevation,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "camera radius must be > 1, got {}",
                self.radius
            )));
        }
        if !(self.fov_degrees > 0.0 && self.fov_degrees < 180.0) {
            return Err(Error::InvalidConfig(format!(
                "fov must be in (0, 180) degrees, got {}",
                self.fov_degrees
            )));
        }
        if !self.azimuth.is_finite() || !self.elevation.is_finite() {
            return Err(Error::NonFinite("camera angles".into()));
        }
        Ok(())
    }

    pub fn position(&self) -> Vec3 {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        [
            self.radius * ce * sa,
            self.radius * se,
            self.radius * ce * ca,
        ]
    }

    /// Unit direction from the origin towards the camera.
    pub fn direction(&self) -> Vec3 {
        math::scale(self.position(), 1.0 / self.radius)
    }

    /// `(right, up, forward)` orthonormal basis; forward points at the origin.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = math::scale(self.direction(), -1.0);
        let right = math::normalize(math::cross(forward, [0.0, 1.0, 0.0]))
            .unwrap_or_else(|| {
                // Straight up or down: fall back to the azimuth direction.
                let (sa, ca) = self.azimuth.sin_cos();
                [ca, 0.0, -sa]
            });
        let up = math::cross(right, forward);
        (right, up, forward)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionalLight {
    /// Direction towards the light in camera coordinates
    /// (x right, y up, z forward), normalized on use.
    pub direction: Vec3,
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lighting {
    pub ambient: f64,
    pub lights: [DirectionalLight; 2],
}

impl Default for Lighting {
    fn default() -> Self {
        Lighting {
            ambient: 0.35,
            lights: [
                DirectionalLight {
                    direction: [0.3, 0.4, -1.0],
                    intensity: 0.45,
                },
                DirectionalLight {
                    direction: [-0.6, -0.2, -1.0],
                    intensity: 0.2,
                },
            ],
        }
    }
}

impl Lighting {
    /// Shade factor for a camera-space unit normal already flipped to face
    /// the camera.
    pub fn shade(&self, normal_cam: Vec3) -> f64 {
        let mut s = self.ambient;
        for light in &self.lights {
            if let Some(l) = math::normalize(light.direction) {
                s += light.intensity * math::dot(normal_cam, l).max(0.0);
            }
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub image_size: usize,
    pub highlight_color: Vec3,
    pub base_color: Vec3,
    pub background: Vec3,
    pub lighting: Lighting,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            image_size: 224,
            highlight_color: DEFAULT_HIGHLIGHT,
            base_color: DEFAULT_BASE,
            background: [1.0, 1.0, 1.0],
            lighting: Lighting::default(),
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 32 {
            return Err(Error::InvalidConfig(format!(
                "image_size must be >= 32, got {}",
                self.image_size
            )));
        }
        for (name, c) in [
            ("highlight_color", self.highlight_color),
            ("base_color", self.base_color),
            ("background", self.background),
        ] {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0,1]^3")));
            }
        }
        Ok(())
    }
}

/// Row-major `height × width × 3` image, values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, color: Vec3) -> Self {
        let mut img = Image::new(width, height);
        for px in img.data.chunks_mut(3) {
            px.copy_from_slice(&color);
        }
        img
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> Vec3 {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, c: Vec3) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    /// 8-bit PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| Error::InvalidConfig("image buffer size".into()))?;
        buf.save(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::io(path, std::io::Error::other(other.to_string())),
        })
    }
}

/// `C_v = p_v · H + (1 − p_v) · G` per vertex.
pub fn blend_colors(probabilities: &[f64], cfg: &RenderConfig) -> Vec<Vec3> {
    let h = cfg.highlight_color;
    let g = cfg.base_color;
    probabilities
        .iter()
        .map(|&p| {
            [
                p * h[0] + (1.0 - p) * g[0],
                p * h[1] + (1.0 - p) * g[1],
                p * h[2] + (1.0 - p) * g[2],
            ]
        })
        .collect()
}

/// Hard two-tone coloring: `H` where `p > 0.5`, else `G`.
pub fn threshold_colors(probabilities: &[f64], cfg: &RenderConfig) -> Vec<Vec3> {
    probabilities
        .iter()
        .map(|&p| {
            if p > 0.5 {
                cfg.highlight_color
            } else {
                cfg.base_color
            }
        })
        .collect()
}

/// Pulls per-vertex color gradients back to probability gradients through
/// the linear blend: `dL/dp_v = dL/dC_v · (H − G)`.
pub fn blend_backward(dcolors: &[Vec3], cfg: &RenderConfig) -> Vec<f64> {
    let d = math::sub(cfg.highlight_color, cfg.base_color);
    dcolors.iter().map(|&dc| math::dot(dc, d)).collect()
}

/// Renders one image per camera.
pub fn render_views(
    mesh: &Mesh,
    colors: &[Vec3],
    cameras: &[Camera],
    cfg: &RenderConfig,
) -> Result<Vec<Image>> {
    if mesh.faces.is_empty() {
        return Err(Error::Empty("mesh has no faces to render"));
    }
    if colors.len() != mesh.vertex_count() {
        return Err(Error::LengthMismatch {
            what: "vertex colors",
            expected: mesh.vertex_count(),
            actual: colors.len(),
        });
    }
    cameras
        .iter()
        .map(|cam| {
            let r = rasterize(mesh, cam, cfg.image_size, &cfg.lighting)?;
            Ok(r.shade_colors(mesh, colors, cfg.background))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;

    #[test]
    fn blend_endpoints_and_midpoint() {
        let cfg = RenderConfig::default();
        let c = blend_colors(&[1.0, 0.0, 0.5], &cfg);
        assert_eq!(c[0], cfg.highlight_color);
        assert_eq!(c[1], cfg.base_color);
        let expected = [0.65, 0.75, 0.25];
        for k in 0..3 {
            assert!((c[2][k] - expected[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn camera_azimuth_zero_sits_on_positive_z() {
        let cam = Camera::default();
        let p = cam.position();
        assert!((p[2] - 2.5).abs() < 1e-12 && p[0].abs() < 1e-12 && p[1].abs() < 1e-12);
        let (r, u, f) = cam.basis();
        assert!((math::dot(r, u)).abs() < 1e-12 && (math::dot(u, f)).abs() < 1e-12);
        assert!((u[1] - 1.0).abs() < 1e-12);
        let top = Camera::orbit(0.3, std::f64::consts::FRAC_PI_2);
        let (r, u, f) = top.basis();
        assert!(math::norm(r) > 0.99 && math::norm(u) > 0.99 && math::norm(f) > 0.99);
    }

    #[test]
    fn camera_validation() {
        assert!(Camera { radius: 0.9, ..Default::default() }.validate().is_err());
        assert!(Camera { fov_degrees: 180.0, ..Default::default() }.validate().is_err());
        assert!(Camera::default().validate().is_ok());
    }

    #[test]
    fn render_config_validation() {
        assert!(RenderConfig { image_size: 16, ..Default::default() }.validate().is_err());
        assert!(RenderConfig { background: [2.0, 0.0, 0.0], ..Default::default() }
            .validate()
            .is_err());
    }

    #[test]
    fn render_counts_and_shapes() {
        let mesh = primitives::icosphere(2);
        let colors = vec![[0.5; 3]; mesh.vertex_count()];
        let cams: Vec<_> = (0..5).map(|i| Camera::orbit(i as f64, 0.1)).collect();
        let cfg = RenderConfig { image_size: 64, ..Default::default() };
        let imgs = render_views(&mesh, &colors, &cams, &cfg).unwrap();
        assert_eq!(imgs.len(), 5);
        for img in imgs {
            assert_eq!((img.width, img.height, img.data.len()), (64, 64, 64 * 64 * 3));
        }
    }

    #[test]
    fn zero_probability_renders_pure_gray() {
        let mesh = primitives::icosphere(2);
        let cfg = RenderConfig { image_size: 64, ..Default::default() };
        let colors = blend_colors(&vec![0.0; mesh.vertex_count()], &cfg);
        let img = &render_views(&mesh, &colors, &[Camera::orbit(0.7, 0.4)], &cfg).unwrap()[0];
        let mut covered = 0;
        for y in 0..64 {
            for x in 0..64 {
                let c = img.pixel(x, y);
                if c != cfg.background {
                    covered += 1;
                    assert!((c[0] - c[1]).abs() < 1e-12 && (c[1] - c[2]).abs() < 1e-12);
                }
            }
        }
        assert!(covered > 100);
    }

    #[test]
    fn render_errors() {
        let cfg = RenderConfig { image_size: 32, ..Default::default() };
        let m = Mesh::new(vec![[0.0; 3]], vec![]).unwrap();
        assert!(render_views(&m, &[[0.0; 3]], &[Camera::default()], &cfg).is_err());
        let m = primitives::tetrahedron();
        assert!(render_views(&m, &[[0.0; 3]], &[Camera::default()], &cfg).is_err());
    }

    #[test]
    fn png_dump() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::filled(32, 32, [1.0, 0.5, 0.0]);
        img.save_png(dir.path().join("a.png")).unwrap();
        assert!(dir.path().join("a.png").exists());
    }
}
