use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::render::Image;

/// Text and image encoder pair sharing one embedding space.
///
/// `embed_images_vjp` returns, for each image, the gradient of
/// `Σ_k ⟨cotangent_k, embed(image_k)⟩` with respect to its pixels.
pub trait EmbeddingBackend: Send + Sync {
    fn id(&self) -> &str;
    fn embed_dim(&self) -> usize;
    fn is_deterministic(&self) -> bool;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
    fn embed_images(&self, images: &[Image]) -> Result<Vec<Vec<f64>>>;
    fn embed_images_vjp(&self, images: &[Image], cotangents: &[Vec<f64>]) -> Result<Vec<Image>>;
}

impl<B: EmbeddingBackend + ?Sized> EmbeddingBackend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn embed_dim(&self) -> usize {
        (**self).embed_dim()
    }
    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        (**self).embed_text(text)
    }
    fn embed_images(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        (**self).embed_images(images)
    }
    fn embed_images_vjp(&self, images: &[Image], cotangents: &[Vec<f64>]) -> Result<Vec<Image>> {
        (**self).embed_images_vjp(images, cotangents)
    }
}

pub(crate) fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic stand-in encoder. Text maps to a unit vector seeded by
/// its hash; images are average-pooled onto a coarse grid and projected by
/// a fixed random matrix, so the image encoder is linear.
#[derive(Clone, Debug)]
pub struct HashMockBackend {
    id: String,
    dim: usize,
    grid: usize,
    /// `dim × (grid² · 3)`, row-major.
    projection: Vec<f64>,
}

impl HashMockBackend {
    pub const DEFAULT_DIM: usize = 512;
    pub const GRID: usize = 8;

    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be >= 1".into()));
        }
        let features = Self::GRID * Self::GRID * 3;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (features as f64).sqrt();
        let projection = (0..dim * features)
            .map(|_| s * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        Ok(HashMockBackend {
            id: format!("mock-hash-{dim}-{seed}"),
            dim,
            grid: Self::GRID,
            projection,
        })
    }

    fn features(&self) -> usize {
        self.grid * self.grid * 3
    }

    fn cell(&self, x: usize, y: usize, img: &Image) -> usize {
        let cx = x * self.grid / img.width;
        let cy = y * self.grid / img.height;
        cy * self.grid + cx
    }

    fn cell_counts(&self, img: &Image) -> Vec<f64> {
        let mut counts = vec![0.0; self.grid * self.grid];
        for y in 0..img.height {
            for x in 0..img.width {
                counts[self.cell(x, y, img)] += 1.0;
            }
        }
        counts
    }

    fn pool(&self, img: &Image) -> Vec<f64> {
        let mut f = vec![0.0; self.features()];
        for y in 0..img.height {
            for x in 0..img.width {
                let c = self.cell(x, y, img);
                let p = img.pixel(x, y);
                for k in 0..3 {
                    f[c * 3 + k] += p[k];
                }
            }
        }
        for (i, n) in self.cell_counts(img).iter().enumerate() {
            for k in 0..3 {
                f[i * 3 + k] /= n.max(1.0);
            }
        }
        f
    }
}

impl EmbeddingBackend for HashMockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed_dim(&self) -> usize {
        self.dim
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        if text.is_empty() {
            return Err(Error::InvalidConfig("text must not be empty".into()));
        }
        let digest = sha256_hex(&[text.as_bytes()]);
        let seed = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(v.into_iter().map(|x| x / n).collect())
    }

    fn embed_images(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        let nf = self.features();
        Ok(images
            .iter()
            .map(|img| {
                let f = self.pool(img);
                self.projection
                    .chunks(nf)
                    .map(|row| row.iter().zip(&f).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect())
    }

    fn embed_images_vjp(&self, images: &[Image], cotangents: &[Vec<f64>]) -> Result<Vec<Image>> {
        if images.len() != cotangents.len() {
            return Err(Error::LengthMismatch {
                what: "cotangents",
                expected: images.len(),
                actual: cotangents.len(),
            });
        }
        let nf = self.features();
        images
            .iter()
            .zip(cotangents)
            .map(|(img, cot)| {
                if cot.len() != self.dim {
                    return Err(Error::LengthMismatch {
                        what: "cotangent",
                        expected: self.dim,
                        actual: cot.len(),
                    });
                }
                let mut df = vec![0.0; nf];
                for (row, c) in self.projection.chunks(nf).zip(cot) {
                    for (d, w) in df.iter_mut().zip(row) {
                        *d += c * w;
                    }
                }
                let counts = self.cell_counts(img);
                let mut out = Image::new(img.width, img.height);
                for y in 0..img.height {
                    for x in 0..img.width {
                        let c = self.cell(x, y, img);
                        let n = counts[c];
                        out.set_pixel(x, y, [df[c * 3] / n, df[c * 3 + 1] / n, df[c * 3 + 2] / n]);
                    }
                }
                Ok(out)
            })
            .collect()
    }
}

/// Memoizes text embeddings by `(model id, text)`, in memory and
/// optionally in a directory of JSON files.
pub struct CachedBackend<B> {
    inner: B,
    memory: Mutex<HashMap<String, Vec<f64>>>,
    dir: Option<PathBuf>,
    misses: AtomicUsize,
}

impl<B: EmbeddingBackend> CachedBackend<B> {
    pub fn new(inner: B) -> Self {
        CachedBackend {
            inner,
            memory: Mutex::new(HashMap::new()),
            dir: None,
            misses: AtomicUsize::new(0),
        }
    }

    pub fn with_dir(inner: B, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(CachedBackend {
            dir: Some(dir.to_path_buf()),
            ..CachedBackend::new(inner)
        })
    }

    /// Number of text requests forwarded to the wrapped backend.
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    fn key(&self, text: &str) -> String {
        sha256_hex(&[self.inner.id().as_bytes(), text.as_bytes()])
    }
}

impl<B: EmbeddingBackend> EmbeddingBackend for CachedBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn embed_dim(&self) -> usize {
        self.inner.embed_dim()
    }

    fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let key = self.key(text);
        if let Some(v) = self.memory.lock().expect("cache lock").get(&key) {
            return Ok(v.clone());
        }
        let path = self.dir.as_ref().map(|d| d.join(format!("{key}.json")));
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
            let v: Vec<f64> = serde_json::from_slice(&bytes)?;
            if v.len() == self.inner.embed_dim() && v.iter().all(|x| x.is_finite()) {
                self.memory.lock().expect("cache lock").insert(key, v.clone());
                return Ok(v);
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let v = self.inner.embed_text(text)?;
        if let Some(p) = &path {
            fs::write(p, serde_json::to_vec(&v)?).map_err(|e| Error::io(p, e))?;
        }
        self.memory.lock().expect("cache lock").insert(key, v.clone());
        Ok(v)
    }

    fn embed_images(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        self.inner.embed_images(images)
    }

    fn embed_images_vjp(&self, images: &[Image], cotangents: &[Vec<f64>]) -> Result<Vec<Image>> {
        self.inner.embed_images_vjp(images, cotangents)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noisy(w: usize, h: usize, seed: u64) -> Image {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = Image::new(w, h);
        img.data.iter_mut().for_each(|v| *v = rng.random());
        img
    }

    #[test]
    fn text_embeddings_are_deterministic_unit_vectors() {
        let b = HashMockBackend::new(64, 0).unwrap();
        let a = b.embed_text("a gray dog").unwrap();
        assert_eq!(a.len(), 64);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(a, b.embed_text("a gray dog").unwrap());
        assert_ne!(a, b.embed_text("a gray cat").unwrap());
        assert!(b.embed_text("").is_err());
    }

    #[test]
    fn image_vjp_matches_finite_differences() {
        let b = HashMockBackend::new(16, 3).unwrap();
        let img = noisy(20, 12, 1);
        let cot: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let g = b.embed_images_vjp(std::slice::from_ref(&img), std::slice::from_ref(&cot)).unwrap();
        let f = |im: &Image| -> f64 {
            let e = b.embed_images(std::slice::from_ref(im)).unwrap();
            e[0].iter().zip(&cot).map(|(a, c)| a * c).sum()
        };
        let h = 1e-5;
        for idx in [0usize, 17, 301, 719] {
            let mut p = img.clone();
            p.data[idx] += h;
            let mut m = img.clone();
            m.data[idx] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - g[0].data[idx]).abs() < 1e-8, "{idx}: {fd} vs {}", g[0].data[idx]);
        }
    }

    #[test]
    fn cache_hits_memory_and_disk() {
        let dir = tempfile::tempdir().unwrap();
        let cached = CachedBackend::with_dir(HashMockBackend::new(8, 0).unwrap(), dir.path()).unwrap();
        let a = cached.embed_text("prompt").unwrap();
        let b = cached.embed_text("prompt").unwrap();
        assert_eq!(a, b);
        assert_eq!(cached.misses(), 1);

        let fresh = CachedBackend::with_dir(HashMockBackend::new(8, 0).unwrap(), dir.path()).unwrap();
        assert_eq!(fresh.embed_text("prompt").unwrap(), a);
        assert_eq!(fresh.misses(), 0);
    }

    #[test]
    fn cache_key_includes_model_id() {
        let cached = CachedBackend::new(HashMockBackend::new(8, 0).unwrap());
        let other = CachedBackend::new(HashMockBackend::new(8, 1).unwrap());
        assert_ne!(cached.key("x"), other.key("x"));
    }
}
