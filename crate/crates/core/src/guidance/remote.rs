//! HTTP/JSON adapter for an out-of-process encoder.
//!
//! Endpoints, all relative to the base URL:
//!
//! | method | path               | request                          | response                        |
//! |--------|--------------------|----------------------------------|---------------------------------|
//! | GET    | `/info`            |                                  | `{model_id, embed_dim, deterministic}` |
//! | POST   | `/embed_text`      | `{texts: [str]}`                 | `{embeddings: [[f64]]}`         |
//! | POST   | `/embed_images`    | `{images: [img]}`                | `{embeddings: [[f64]]}`         |
//! | POST   | `/embed_images_vjp`| `{images: [img], cotangents: [[f64]]}` | `{gradients: [img]}`      |
//!
//! where `img = {width, height, data}` and `data` is row-major `h × w × 3`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::EmbeddingBackend;
use crate::error::{Error, Result};
use crate::render::Image;

/// Environment variable holding the base URL of the remote encoder.
pub const BACKEND_URL_ENV: &str = "HIGHLIGHTER_BACKEND_URL";

#[derive(Serialize, Deserialize)]
struct WireImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl From<&Image> for WireImage {
    fn from(img: &Image) -> Self {
        WireImage {
            width: img.width,
            height: img.height,
            data: img.data.clone(),
        }
    }
}

impl TryFrom<WireImage> for Image {
    type Error = Error;
    fn try_from(w: WireImage) -> Result<Image> {
        if w.data.len() != w.width * w.height * 3 {
            return Err(Error::Backend(format!(
                "gradient image {}x{} carries {} values",
                w.width,
                w.height,
                w.data.len()
            )));
        }
        Ok(Image {
            width: w.width,
            height: w.height,
            data: w.data,
        })
    }
}

#[derive(Deserialize)]
struct Info {
    model_id: String,
    embed_dim: usize,
    #[serde(default)]
    deterministic: bool,
}

#[derive(Deserialize)]
struct Embeddings {
    embeddings: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct Gradients {
    gradients: Vec<WireImage>,
}

pub struct RemoteBackend {
    base: String,
    agent: ureq::Agent,
    model_id: String,
    dim: usize,
    deterministic: bool,
}

impl RemoteBackend {
    /// Queries `/info` and returns a connected backend.
    pub fn connect(base_url: &str, timeout: Duration) -> Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        let base = base_url.trim_end_matches('/').to_string();
        let info: Info = agent
            .get(format!("{base}/info"))
            .call()
            .and_then(|mut r| r.body_mut().read_json())
            .map_err(|e| Error::Backend(format!("{base}/info: {e}")))?;
        if info.embed_dim == 0 {
            return Err(Error::Backend("remote reports embed_dim 0".into()));
        }
        Ok(RemoteBackend {
            base,
            agent,
            model_id: info.model_id,
            dim: info.embed_dim,
            deterministic: info.deterministic,
        })
    }

    /// Connects to the URL in [`BACKEND_URL_ENV`].
    pub fn from_env(timeout: Duration) -> Result<Self> {
        let url = std::env::var(BACKEND_URL_ENV)
            .map_err(|_| Error::Backend(format!("{BACKEND_URL_ENV} is not set")))?;
        Self::connect(&url, timeout)
    }

    fn post<T: serde::de::DeserializeOwned>(&self, path: &str, body: serde_json::Value) -> Result<T> {
        let url = format!("{}{path}", self.base);
        self.agent
            .post(&url)
            .send_json(body)
            .and_then(|mut r| r.body_mut().with_config().limit(1 << 30).read_json())
            .map_err(|e| Error::Backend(format!("{url}: {e}")))
    }

    fn check(&self, embeddings: Vec<Vec<f64>>, expected: usize) -> Result<Vec<Vec<f64>>> {
        if embeddings.len() != expected {
            return Err(Error::Backend(format!(
                "expected {expected} embeddings, got {}",
                embeddings.len()
            )));
        }
        for e in &embeddings {
            if e.len() != self.dim {
                return Err(Error::Backend(format!(
                    "embedding of length {} (expected {})",
                    e.len(),
                    self.dim
                )));
            }
            if e.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("remote embedding".into()));
            }
        }
        Ok(embeddings)
    }
}

impl EmbeddingBackend for RemoteBackend {
    fn id(&self) -> &str {
        &self.model_id
    }

    fn embed_dim(&self) -> usize {
        self.dim
    }

    fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let r: Embeddings = self.post("/embed_text", serde_json::json!({ "texts": [text] }))?;
        Ok(self.check(r.embeddings, 1)?.remove(0))
    }

    fn embed_images(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        let wire: Vec<WireImage> = images.iter().map(WireImage::from).collect();
        let r: Embeddings = self.post("/embed_images", serde_json::json!({ "images": wire }))?;
        self.check(r.embeddings, images.len())
    }

    fn embed_images_vjp(&self, images: &[Image], cotangents: &[Vec<f64>]) -> Result<Vec<Image>> {
        let wire: Vec<WireImage> = images.iter().map(WireImage::from).collect();
        let r: Gradients = self.post(
            "/embed_images_vjp",
            serde_json::json!({ "images": wire, "cotangents": cotangents }),
        )?;
        if r.gradients.len() != images.len() {
            return Err(Error::Backend(format!(
                "expected {} gradients, got {}",
                images.len(),
                r.gradients.len()
            )));
        }
        r.gradients.into_iter().map(Image::try_from).collect()
    }
}
