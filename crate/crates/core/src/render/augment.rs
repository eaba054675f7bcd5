//! Random perspective warp with bilinear resampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Image;
use crate::math::Vec3;

/// A sampled projective warp. Corner `i` of the input (`start[i]`) moves to
/// `end[i]` in the output; output pixels sample the input through the
/// inverse mapping.
#[derive(Clone, Debug, PartialEq)]
pub struct PerspectiveWarp {
    pub width: usize,
    pub height: usize,
    pub start: [[f64; 2]; 4],
    pub end: [[f64; 2]; 4],
    /// Row-major 3×3 map from output to input pixel coordinates;
    /// `None` for the identity.
    inverse: Option<[f64; 9]>,
}

impl PerspectiveWarp {
    pub fn identity(width: usize, height: usize) -> Self {
        let start = corners(width, height);
        PerspectiveWarp {
            width,
            height,
            start,
            end: start,
            inverse: None,
        }
    }

    /// Every corner is pulled inwards by up to `distortion_scale / 2` of the
    /// image size along each axis.
    pub fn sample<R: Rng + ?Sized>(width: usize, height: usize, distortion_scale: f64, rng: &mut R) -> Self {
        let start = corners(width, height);
        let dx = distortion_scale.clamp(0.0, 1.0) * width as f64 / 2.0;
        let dy = distortion_scale.clamp(0.0, 1.0) * height as f64 / 2.0;
        // Inward sign per corner: top-left, top-right, bottom-right, bottom-left.
        let signs = [[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]];
        let mut end = start;
        for (e, s) in end.iter_mut().zip(signs) {
            let ox = if dx > 0.0 { rng.random_range(0.0..=dx) } else { 0.0 };
            let oy = if dy > 0.0 { rng.random_range(0.0..=dy) } else { 0.0 };
            e[0] += s[0] * ox;
            e[1] += s[1] * oy;
        }
        if end == start {
            return PerspectiveWarp::identity(width, height);
        }
        let inverse = solve_homography(&end, &start);
        PerspectiveWarp {
            width,
            height,
            start,
            end,
            inverse,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.inverse.is_none()
    }

    /// `end − start` for each corner.
    pub fn corner_offsets(&self) -> [[f64; 2]; 4] {
        let mut out = [[0.0; 2]; 4];
        for i in 0..4 {
            out[i] = [self.end[i][0] - self.start[i][0], self.end[i][1] - self.start[i][1]];
        }
        out
    }

    /// Input-image coordinates sampled by output pixel `(x, y)`.
    pub fn source_of(&self, x: f64, y: f64) -> [f64; 2] {
        match &self.inverse {
            None => [x, y],
            Some(h) => {
                let w = h[6] * x + h[7] * y + h[8];
                [(h[0] * x + h[1] * y + h[2]) / w, (h[3] * x + h[4] * y + h[5]) / w]
            }
        }
    }

    /// Bilinear taps `(input pixel index, weight)` for output pixel `(x, y)`;
    /// the weight of taps falling outside the input goes to `fill`.
    fn taps(&self, x: usize, y: usize) -> ([(usize, f64); 4], f64) {
        let [sx, sy] = self.source_of(x as f64, y as f64);
        let mut taps = [(0usize, 0.0f64); 4];
        let mut outside = 0.0;
        if !sx.is_finite() || !sy.is_finite() {
            return (taps, 1.0);
        }
        let x0 = sx.floor();
        let y0 = sy.floor();
        let fx = sx - x0;
        let fy = sy - y0;
        let mut k = 0;
        for (ox, oy, w) in [
            (0.0, 0.0, (1.0 - fx) * (1.0 - fy)),
            (1.0, 0.0, fx * (1.0 - fy)),
            (0.0, 1.0, (1.0 - fx) * fy),
            (1.0, 1.0, fx * fy),
        ] {
            let (ix, iy) = (x0 + ox, y0 + oy);
            if w == 0.0 {
                continue;
            }
            if ix < 0.0 || iy < 0.0 || ix >= self.width as f64 || iy >= self.height as f64 {
                outside += w;
            } else {
                taps[k] = (iy as usize * self.width + ix as usize, w);
                k += 1;
            }
        }
        (taps, outside)
    }

    pub fn apply(&self, img: &Image, fill: Vec3) -> Image {
        if self.is_identity() {
            return img.clone();
        }
        let mut out = Image::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let (taps, outside) = self.taps(x, y);
                let mut c = [fill[0] * outside, fill[1] * outside, fill[2] * outside];
                for (idx, w) in taps {
                    if w != 0.0 {
                        for k in 0..3 {
                            c[k] += w * img.data[idx * 3 + k];
                        }
                    }
                }
                out.set_pixel(x, y, c);
            }
        }
        out
    }

    /// Gradient with respect to the input image given the output gradient.
    pub fn backward(&self, dout: &Image) -> Image {
        if self.is_identity() {
            return dout.clone();
        }
        let mut din = Image::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let (taps, _) = self.taps(x, y);
                let g = dout.pixel(x, y);
                for (idx, w) in taps {
                    if w != 0.0 {
                        for k in 0..3 {
                            din.data[idx * 3 + k] += w * g[k];
                        }
                    }
                }
            }
        }
        din
    }
}

/// Warps `img` with a perspective transform drawn from `seed`.
pub fn augment_perspective(img: &Image, distortion_scale: f64, seed: u64, fill: Vec3) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PerspectiveWarp::sample(img.width, img.height, distortion_scale, &mut rng).apply(img, fill)
}

fn corners(width: usize, height: usize) -> [[f64; 2]; 4] {
    let (w, h) = ((width - 1) as f64, (height - 1) as f64);
    [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]]
}

/// Homography `H` (with `h₈ = 1`) mapping each `from[i]` to `to[i]`.
fn solve_homography(from: &[[f64; 2]; 4], to: &[[f64; 2]; 4]) -> Option<[f64; 9]> {
    let mut a = [[0.0f64; 9]; 8];
    for i in 0..4 {
        let [x, y] = from[i];
        let [u, v] = to[i];
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    // Gaussian elimination with partial pivoting on the augmented system.
    for col in 0..8 {
        let pivot = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        for row in 0..8 {
            if row != col {
                let f = a[row][col] / a[col][col];
                if f != 0.0 {
                    for k in col..9 {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
    }
    let mut h = [0.0; 9];
    for i in 0..8 {
        h[i] = a[i][8] / a[i][i];
    }
    h[8] = 1.0;
    Some(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image(size: usize) -> Image {
        let mut img = Image::new(size, size);
        for y in 0..size {
            for x in 0..size {
                img.set_pixel(x, y, [x as f64 / size as f64, y as f64 / size as f64, ((x * y) % 7) as f64 / 7.0]);
            }
        }
        img
    }

    #[test]
    fn zero_distortion_is_identity() {
        let img = test_image(32);
        assert_eq!(augment_perspective(&img, 0.0, 4, [1.0; 3]), img);
    }

    #[test]
    fn deterministic_per_seed() {
        let img = test_image(32);
        let a = augment_perspective(&img, 0.5, 8, [1.0; 3]);
        assert_eq!(a, augment_perspective(&img, 0.5, 8, [1.0; 3]));
        assert_ne!(a, augment_perspective(&img, 0.5, 9, [1.0; 3]));
        assert_ne!(a, img);
    }

    #[test]
    fn corner_offsets_are_bounded_and_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for scale in [0.1, 0.5, 1.0] {
            for _ in 0..50 {
                let w = PerspectiveWarp::sample(64, 48, scale, &mut rng);
                for (o, (e, s)) in w.corner_offsets().iter().zip(w.end.iter().zip(&w.start)) {
                    assert!(o[0].abs() <= scale * 64.0 / 2.0 + 1e-9);
                    assert!(o[1].abs() <= scale * 48.0 / 2.0 + 1e-9);
                    // Output corner samples the input corner.
                    let src = w.source_of(e[0], e[1]);
                    assert!((src[0] - s[0]).abs() < 1e-6 && (src[1] - s[1]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn backward_is_adjoint_of_apply() {
        // <apply(x) - apply(0), g> == <x, backward(g)> for the linear part.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let warp = PerspectiveWarp::sample(24, 24, 0.6, &mut rng);
        let x = test_image(24);
        let mut g = Image::new(24, 24);
        for (i, v) in g.data.iter_mut().enumerate() {
            *v = ((i * 31) % 17) as f64 / 17.0 - 0.5;
        }
        let zero = Image::new(24, 24);
        let ax = warp.apply(&x, [0.0; 3]);
        let a0 = warp.apply(&zero, [0.0; 3]);
        let lhs: f64 = ax.data.iter().zip(&a0.data).zip(&g.data).map(|((a, b), g)| (a - b) * g).sum();
        let bg = warp.backward(&g);
        let rhs: f64 = x.data.iter().zip(&bg.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
