use super::{Camera, Image, Lighting};
use crate::error::Result;
use crate::math::{self, Vec3};
use crate::mesh::Mesh;

const NEAR: f64 = 1e-3;
const EMPTY: u32 = u32::MAX;

/// Per-pixel visibility for one camera: the covering face, its
/// perspective-correct barycentric weights and the shade factor.
#[derive(Clone, Debug)]
pub struct Rasterization {
    pub width: usize,
    pub height: usize,
    face: Vec<u32>,
    bary: Vec<[f64; 3]>,
    shade: Vec<f64>,
}

/// Z-buffered rasterization of `mesh` seen from `camera` into a square
/// `size × size` grid. Faces are two-sided and flat shaded.
pub fn rasterize(mesh: &Mesh, camera: &Camera, size: usize, lighting: &Lighting) -> Result<Rasterization> {
    camera.validate()?;
    let (right, up, forward) = camera.basis();
    let eye = camera.position();
    let focal = 1.0 / (camera.fov_degrees.to_radians() * 0.5).tan();
    let half = size as f64 * 0.5;

    // Camera-space depth and screen position of every vertex.
    let projected: Vec<(f64, f64, f64)> = mesh
        .vertices
        .iter()
        .map(|&v| {
            let d = math::sub(v, eye);
            let z = math::dot(d, forward);
            let x = math::dot(d, right);
            let y = math::dot(d, up);
            let sx = half + half * focal * x / z;
            let sy = half - half * focal * y / z;
            (sx, sy, z)
        })
        .collect();

    let n = size * size;
    let mut depth = vec![f64::INFINITY; n];
    let mut face_buf = vec![EMPTY; n];
    let mut bary_buf = vec![[0.0; 3]; n];
    let mut shade_buf = vec![0.0; n];

    for (fi, &[a, b, c]) in mesh.faces.iter().enumerate() {
        let (pa, pb, pc) = (projected[a], projected[b], projected[c]);
        if pa.2 < NEAR || pb.2 < NEAR || pc.2 < NEAR {
            continue;
        }
        let area = edge(pa.0, pa.1, pb.0, pb.1, pc.0, pc.1);
        if area.abs() < 1e-12 {
            continue;
        }
        let Some(normal) = math::normalize(mesh.face_normal_raw(fi)) else {
            continue;
        };
        let mut nc = [
            math::dot(normal, right),
            math::dot(normal, up),
            math::dot(normal, forward),
        ];
        if nc[2] > 0.0 {
            nc = math::scale(nc, -1.0);
        }
        let shade = lighting.shade(nc);

        let min_x = pa.0.min(pb.0).min(pc.0).floor().max(0.0) as usize;
        let max_x = (pa.0.max(pb.0).max(pc.0).ceil() as isize).min(size as isize - 1);
        let min_y = pa.1.min(pb.1).min(pc.1).floor().max(0.0) as usize;
        let max_y = (pa.1.max(pb.1).max(pc.1).ceil() as isize).min(size as isize - 1);
        if max_x < 0 || max_y < 0 {
            continue;
        }
        for py in min_y..=max_y as usize {
            let y = py as f64 + 0.5;
            for px in min_x..=max_x as usize {
                let x = px as f64 + 0.5;
                let w0 = edge(pb.0, pb.1, pc.0, pc.1, x, y) / area;
                let w1 = edge(pc.0, pc.1, pa.0, pa.1, x, y) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                // Perspective-correct weights.
                let q = [w0 / pa.2, w1 / pb.2, w2 / pc.2];
                let inv_z = q[0] + q[1] + q[2];
                let z = 1.0 / inv_z;
                let idx = py * size + px;
                if z < depth[idx] {
                    depth[idx] = z;
                    face_buf[idx] = fi as u32;
                    bary_buf[idx] = [q[0] * z, q[1] * z, q[2] * z];
                    shade_buf[idx] = shade;
                }
            }
        }
    }
    Ok(Rasterization {
        width: size,
        height: size,
        face: face_buf,
        bary: bary_buf,
        shade: shade_buf,
    })
}

#[inline]
fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

impl Rasterization {
    /// Covering face at a pixel, if any.
    pub fn face_at(&self, x: usize, y: usize) -> Option<usize> {
        let f = self.face[y * self.width + x];
        (f != EMPTY).then_some(f as usize)
    }

    pub fn covered_pixels(&self) -> usize {
        self.face.iter().filter(|&&f| f != EMPTY).count()
    }

    pub fn shade_at(&self, x: usize, y: usize) -> f64 {
        self.shade[y * self.width + x]
    }

    /// Vertices of the covering face with their interpolation weights.
    pub fn weights_at(&self, mesh: &Mesh, x: usize, y: usize) -> Option<([usize; 3], [f64; 3])> {
        self.face_at(x, y)
            .map(|f| (mesh.faces[f], self.bary[y * self.width + x]))
    }

    /// Interpolates a per-vertex scalar; `None` for background pixels.
    pub fn interpolate(&self, mesh: &Mesh, values: &[f64], x: usize, y: usize) -> Option<f64> {
        self.weights_at(mesh, x, y)
            .map(|(v, w)| w[0] * values[v[0]] + w[1] * values[v[1]] + w[2] * values[v[2]])
    }

    /// `pixel = shade · Σ bᵢ · color(vᵢ)`; uncovered pixels take `background`.
    pub fn shade_colors(&self, mesh: &Mesh, colors: &[Vec3], background: Vec3) -> Image {
        let mut img = Image::filled(self.width, self.height, background);
        for (idx, &f) in self.face.iter().enumerate() {
            if f == EMPTY {
                continue;
            }
            let [a, b, c] = mesh.faces[f as usize];
            let w = self.bary[idx];
            let s = self.shade[idx];
            let out = &mut img.data[idx * 3..idx * 3 + 3];
            for k in 0..3 {
                out[k] = s * (w[0] * colors[a][k] + w[1] * colors[b][k] + w[2] * colors[c][k]);
            }
        }
        img
    }

    /// Adds `d loss / d color(v)` implied by `dimage` into `dcolors`.
    pub fn accumulate_color_grad(&self, mesh: &Mesh, dimage: &Image, dcolors: &mut [Vec3]) {
        for (idx, &f) in self.face.iter().enumerate() {
            if f == EMPTY {
                continue;
            }
            let verts = mesh.faces[f as usize];
            let w = self.bary[idx];
            let s = self.shade[idx];
            let g = &dimage.data[idx * 3..idx * 3 + 3];
            for (vi, wi) in verts.iter().zip(w) {
                let k = s * wi;
                let dc = &mut dcolors[*vi];
                dc[0] += k * g[0];
                dc[1] += k * g[1];
                dc[2] += k * g[2];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;
    use crate::render::{blend_backward, blend_colors, RenderConfig};

    #[test]
    fn sphere_silhouette_is_centered_disc() {
        let mesh = primitives::icosphere(3);
        let r = rasterize(&mesh, &Camera::default(), 64, &Lighting::default()).unwrap();
        assert!(r.face_at(32, 32).is_some());
        assert!(r.face_at(0, 0).is_none() && r.face_at(63, 63).is_none());
        // Angular radius asin(1/2.5) against a 30° half field of view.
        let expected = (1.0f64 / 2.5).asin().tan() / 30f64.to_radians().tan();
        let frac = r.covered_pixels() as f64 / (64.0 * 64.0);
        let disc = std::f64::consts::PI * (expected * 0.5).powi(2);
        assert!((frac - disc).abs() < 0.02, "{frac} vs {disc}");
    }

    #[test]
    fn barycentric_weights_sum_to_one() {
        let mesh = primitives::icosphere(2);
        let r = rasterize(&mesh, &Camera::orbit(1.0, 0.3), 48, &Lighting::default()).unwrap();
        for y in 0..48 {
            for x in 0..48 {
                if let Some((_, w)) = r.weights_at(&mesh, x, y) {
                    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    assert!(w.iter().all(|&v| v >= -1e-12));
                }
            }
        }
    }

    #[test]
    fn near_side_wins_depth_test() {
        // +z cap highlighted; from azimuth 0 the center pixel must see it.
        let mesh = primitives::icosphere(3);
        let p: Vec<f64> = mesh.vertices.iter().map(|v| if v[2] > 0.0 { 1.0 } else { 0.0 }).collect();
        let r = rasterize(&mesh, &Camera::default(), 32, &Lighting::default()).unwrap();
        assert!(r.interpolate(&mesh, &p, 16, 16).unwrap() > 0.99);
        let back = rasterize(&mesh, &Camera::orbit(std::f64::consts::PI, 0.0), 32, &Lighting::default()).unwrap();
        assert!(back.interpolate(&mesh, &p, 16, 16).unwrap() < 0.01);
    }

    /// Gradient of mean intensity w.r.t. one vertex probability on a
    /// two-triangle quad against central differences.
    #[test]
    fn quad_color_gradient_matches_finite_differences() {
        let mesh = Mesh::new(
            vec![[-0.8, -0.8, 0.0], [0.8, -0.8, 0.0], [0.8, 0.8, 0.0], [-0.8, 0.8, 0.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let cfg = RenderConfig { image_size: 32, ..Default::default() };
        let cam = Camera::orbit(0.4, 0.3);
        let r = rasterize(&mesh, &cam, 32, &cfg.lighting).unwrap();
        let mean = |p: &[f64]| r.shade_colors(&mesh, &blend_colors(p, &cfg), cfg.background).mean();
        let p = vec![0.3, 0.6, 0.45, 0.8];
        let n = (32 * 32 * 3) as f64;
        let dimage = Image { width: 32, height: 32, data: vec![1.0 / n; 32 * 32 * 3] };
        let mut dc = vec![[0.0; 3]; 4];
        r.accumulate_color_grad(&mesh, &dimage, &mut dc);
        let dp = blend_backward(&dc, &cfg);
        let h = 1e-3;
        for v in 0..4 {
            let mut plus = p.clone();
            plus[v] += h;
            let mut minus = p.clone();
            minus[v] -= h;
            let fd = (mean(&plus) - mean(&minus)) / (2.0 * h);
            assert!((fd - dp[v]).abs() <= 1e-2 * fd.abs().max(1e-9), "{v}: {fd} vs {}", dp[v]);
        }
    }
}
