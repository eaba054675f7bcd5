//! The neural highlighter: an MLP mapping 3D coordinates to class
//! probabilities, with hand-written reverse-mode gradients.
//!
//! Architecture: `depth` linear layers; each of the first `depth - 1` is
//! followed by ReLU and an affine layer norm, the last by a softmax over
//! `num_classes` logits. Class 0 is the highlight class.
//!
//! Parameters are stored as `f32` (the archive format) and promoted to `f64`
//! for evaluation so that finite-difference checks stay meaningful.

mod archive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;

pub use archive::{load_field, load_field_archive, save_field, save_field_with, ArchiveMetadata};

/// Index of the highlight class in the softmax output.
pub const HIGHLIGHT_CLASS: usize = 0;

const LAYER_NORM_EPS: f64 = 1e-5;
const FINAL_LAYER_STD: f64 = 2e-3;
/// Logit margin used by the saturated initializations.
const SATURATED_BIAS: f32 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PositionalEncoding {
    #[default]
    Off,
    On { num_frequencies: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub depth: usize,
    pub width: usize,
    pub num_classes: usize,
    pub positional_encoding: PositionalEncoding,
    pub init_seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            depth: 6,
            width: 256,
            num_classes: 2,
            positional_encoding: PositionalEncoding::Off,
            init_seed: 0,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::InvalidConfig(format!("depth must be >= 2, got {}", self.depth)));
        }
        if self.width < 1 {
            return Err(Error::InvalidConfig("width must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if let PositionalEncoding::On { num_frequencies } = self.positional_encoding {
            if !(1..=24).contains(&num_frequencies) {
                return Err(Error::InvalidConfig(format!(
                    "positional encoding needs 1..=24 frequencies, got {num_frequencies}"
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match self.positional_encoding {
            PositionalEncoding::Off => 3,
            PositionalEncoding::On { num_frequencies } => 3 + 6 * num_frequencies,
        }
    }

    fn layer_dims(&self, layer: usize) -> (usize, usize) {
        let input = if layer == 0 { self.input_dim() } else { self.width };
        let output = if layer + 1 == self.depth { self.num_classes } else { self.width };
        (input, output)
    }
}

/// Offsets (in elements) of one layer's tensors inside the flat parameter
/// vector.
#[derive(Clone, Debug, PartialEq)]
struct LayerLayout {
    in_dim: usize,
    out_dim: usize,
    weight: usize,
    bias: usize,
    /// `(gamma, beta)` for hidden layers.
    norm: Option<(usize, usize)>,
}

fn layout(cfg: &FieldConfig) -> (Vec<LayerLayout>, usize) {
    let mut offset = 0;
    let mut layers = Vec::with_capacity(cfg.depth);
    for l in 0..cfg.depth {
        let (in_dim, out_dim) = cfg.layer_dims(l);
        let weight = offset;
        offset += in_dim * out_dim;
        let bias = offset;
        offset += out_dim;
        let norm = if l + 1 < cfg.depth {
            let g = offset;
            offset += out_dim;
            let b = offset;
            offset += out_dim;
            Some((g, b))
        } else {
            None
        };
        layers.push(LayerLayout {
            in_dim,
            out_dim,
            weight,
            bias,
            norm,
        });
    }
    (layers, offset)
}

/// Initial output behavior of a freshly constructed field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Small random last layer; probabilities start near uniform.
    #[default]
    NearUniform,
    /// Zero last-layer weights, bias forcing highlight probability to ~0.
    AllOff,
    /// Zero last-layer weights, bias forcing highlight probability to ~1.
    AllOn,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HighlighterField {
    config: FieldConfig,
    layers: Vec<LayerLayout>,
    params: Vec<f32>,
}

/// Activations kept from a forward pass for [`HighlighterField::backward`].
pub struct Tape {
    n: usize,
    input: Vec<f64>,
    /// Per hidden layer: pre-activation, normalized activation, 1/std and
    /// the layer output fed to the next layer.
    hidden: Vec<HiddenTape>,
    probs: Vec<f64>,
}

struct HiddenTape {
    pre: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    out: Vec<f64>,
}

impl Tape {
    /// Row-major `n × num_classes` probabilities.
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }
}

/// Constructs a field with the default near-uniform initialization.
pub fn init_field(cfg: &FieldConfig) -> Result<HighlighterField> {
    init_field_with(cfg, InitScheme::NearUniform)
}

/// Hidden layers: weights and biases uniform in `±1/sqrt(fan_in)`, layer
/// norm at identity. Last layer per `scheme`. Deterministic in
/// `cfg.init_seed`.
pub fn init_field_with(cfg: &FieldConfig, scheme: InitScheme) -> Result<HighlighterField> {
    cfg.validate()?;
    let (layers, total) = layout(cfg);
    let mut params = vec![0f32; total];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    let last = layers.len() - 1;
    for (l, lay) in layers.iter().enumerate() {
        let w = lay.weight..lay.weight + lay.in_dim * lay.out_dim;
        let b = lay.bias..lay.bias + lay.out_dim;
        if l < last {
            let bound = 1.0 / (lay.in_dim as f64).sqrt();
            for p in &mut params[w] {
                *p = rng.random_range(-bound..bound) as f32;
            }
            for p in &mut params[b] {
                *p = rng.random_range(-bound..bound) as f32;
            }
            let (g, _) = lay.norm.expect("hidden layer has norm");
            params[g..g + lay.out_dim].fill(1.0);
        } else {
            match scheme {
                InitScheme::NearUniform => {
                    let normal = Normal::new(0.0, FINAL_LAYER_STD).expect("valid std");
                    for p in &mut params[w] {
                        *p = normal.sample(&mut rng) as f32;
                    }
                }
                InitScheme::AllOff | InitScheme::AllOn => {
                    let sign = if scheme == InitScheme::AllOn { 1.0 } else { -1.0 };
                    for (k, p) in params[b].iter_mut().enumerate() {
                        *p = if k == HIGHLIGHT_CLASS {
                            sign * SATURATED_BIAS
                        } else {
                            -sign * SATURATED_BIAS
                        };
                    }
                }
            }
        }
    }
    Ok(HighlighterField {
        config: cfg.clone(),
        layers,
        params,
    })
}

impl HighlighterField {
    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn num_parameters(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    /// `(name, shape, element offset)` for every tensor, in storage order.
    pub fn tensor_specs(&self) -> Vec<(String, Vec<usize>, usize)> {
        tensor_specs(&self.layers)
    }

    /// Builds a field from raw parameters, checking the length.
    pub fn from_parameters(cfg: &FieldConfig, params: Vec<f32>) -> Result<Self> {
        cfg.validate()?;
        let (layers, total) = layout(cfg);
        if params.len() != total {
            return Err(Error::LengthMismatch {
                what: "field parameters",
                expected: total,
                actual: params.len(),
            });
        }
        Ok(HighlighterField {
            config: cfg.clone(),
            layers,
            params,
        })
    }

    /// Per-point class probabilities, one `num_classes` vector per point.
    pub fn evaluate_probabilities(&self, points: &[Vec3]) -> Result<Vec<Vec<f64>>> {
        let k = self.config.num_classes;
        let tape = self.forward(points)?;
        Ok(tape.probs.chunks(k).map(<[f64]>::to_vec).collect())
    }

    /// Probability of the highlight class at each point.
    pub fn highlight_probabilities(&self, points: &[Vec3]) -> Result<Vec<f64>> {
        let k = self.config.num_classes;
        let tape = self.forward(points)?;
        Ok(tape.probs.chunks(k).map(|row| row[HIGHLIGHT_CLASS]).collect())
    }

    fn encode(&self, points: &[Vec3]) -> Vec<f64> {
        let dim = self.config.input_dim();
        let mut out = Vec::with_capacity(points.len() * dim);
        for p in points {
            out.extend_from_slice(p);
            if let PositionalEncoding::On { num_frequencies } = self.config.positional_encoding {
                for f in 0..num_frequencies {
                    let w = (1u64 << f) as f64 * std::f64::consts::PI;
                    out.extend(p.iter().map(|&x| (w * x).sin()));
                    out.extend(p.iter().map(|&x| (w * x).cos()));
                }
            }
        }
        out
    }

    fn weights_f64(&self, lay: &LayerLayout) -> Vec<f64> {
        self.params[lay.weight..lay.weight + lay.in_dim * lay.out_dim]
            .iter()
            .map(|&w| w as f64)
            .collect()
    }

    /// Forward pass keeping every activation needed for [`Self::backward`].
    pub fn forward(&self, points: &[Vec3]) -> Result<Tape> {
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinite(format!("query point {i} is {:?}", points[i])));
        }
        let n = points.len();
        let input = self.encode(points);
        let mut hidden: Vec<HiddenTape> = Vec::with_capacity(self.layers.len() - 1);
        let mut logits = Vec::new();
        for lay in &self.layers {
            let mut z = vec![0.0; n * lay.out_dim];
            {
                let x: &[f64] = match hidden.last() {
                    Some(h) => &h.out,
                    None => &input,
                };
                linear_forward(x, &self.weights_f64(lay), n, lay.in_dim, lay.out_dim, &mut z);
            }
            let bias = &self.params[lay.bias..lay.bias + lay.out_dim];
            for row in z.chunks_mut(lay.out_dim) {
                for (v, &b) in row.iter_mut().zip(bias) {
                    *v += b as f64;
                }
            }
            match lay.norm {
                Some((g, b)) => {
                    let gamma = &self.params[g..g + lay.out_dim];
                    let beta = &self.params[b..b + lay.out_dim];
                    hidden.push(relu_layer_norm(z, n, lay.out_dim, gamma, beta));
                }
                None => logits = z,
            }
        }
        let k = self.config.num_classes;
        let mut probs = logits;
        for row in probs.chunks_mut(k) {
            softmax_in_place(row);
        }
        Ok(Tape {
            n,
            input,
            hidden,
            probs,
        })
    }

    /// Gradient of a scalar loss with respect to every parameter, given the
    /// loss gradient with respect to the probabilities (`n × num_classes`,
    /// row-major). Returned in parameter storage order.
    pub fn backward(&self, tape: &Tape, dprobs: &[f64]) -> Result<Vec<f64>> {
        let k = self.config.num_classes;
        let n = tape.n;
        if dprobs.len() != n * k {
            return Err(Error::LengthMismatch {
                what: "probability gradient",
                expected: n * k,
                actual: dprobs.len(),
            });
        }
        let mut grad = vec![0.0; self.params.len()];
        // Softmax Jacobian-vector product.
        let mut dz: Vec<f64> = Vec::with_capacity(n * k);
        for (p, dp) in tape.probs.chunks(k).zip(dprobs.chunks(k)) {
            let s: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
            dz.extend(p.iter().zip(dp).map(|(pi, di)| pi * (di - s)));
        }
        for l in (0..self.layers.len()).rev() {
            let lay = &self.layers[l];
            if let Some((g, b)) = lay.norm {
                // dz currently holds d(layer output); undo layer norm and ReLU.
                let h = &tape.hidden[l];
                let gamma = &self.params[g..g + lay.out_dim];
                dz = relu_layer_norm_backward(h, &dz, n, lay.out_dim, gamma, &mut grad, g, b);
            }
            let x: &[f64] = if l == 0 { &tape.input } else { &tape.hidden[l - 1].out };
            let w = self.weights_f64(lay);
            let (dw, rest) = grad[lay.weight..].split_at_mut(lay.in_dim * lay.out_dim);
            linear_weight_grad(&dz, x, n, lay.in_dim, lay.out_dim, dw);
            let db = &mut rest[..lay.out_dim];
            for row in dz.chunks(lay.out_dim) {
                for (acc, v) in db.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            if l > 0 {
                let mut dx = vec![0.0; n * lay.in_dim];
                linear_input_grad(&dz, &w, n, lay.in_dim, lay.out_dim, &mut dx);
                dz = dx;
            }
        }
        Ok(grad)
    }
}

fn tensor_specs(layers: &[LayerLayout]) -> Vec<(String, Vec<usize>, usize)> {
    let mut out = Vec::new();
    for (l, lay) in layers.iter().enumerate() {
        out.push((format!("layers.{l}.weight"), vec![lay.out_dim, lay.in_dim], lay.weight));
        out.push((format!("layers.{l}.bias"), vec![lay.out_dim], lay.bias));
        if let Some((g, b)) = lay.norm {
            out.push((format!("layers.{l}.norm.weight"), vec![lay.out_dim], g));
            out.push((format!("layers.{l}.norm.bias"), vec![lay.out_dim], b));
        }
    }
    out
}

/// `z (n×out) = x (n×in) · wᵀ` with `w` stored `out×in` row-major.
fn linear_forward(x: &[f64], w: &[f64], n: usize, in_dim: usize, out_dim: usize, z: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            n,
            in_dim,
            out_dim,
            1.0,
            x.as_ptr(),
            in_dim as isize,
            1,
            w.as_ptr(),
            1,
            in_dim as isize,
            0.0,
            z.as_mut_ptr(),
            out_dim as isize,
            1,
        );
    }
}

/// `dw (out×in) += dzᵀ · x`.
fn linear_weight_grad(dz: &[f64], x: &[f64], n: usize, in_dim: usize, out_dim: usize, dw: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            out_dim,
            n,
            in_dim,
            1.0,
            dz.as_ptr(),
            1,
            out_dim as isize,
            x.as_ptr(),
            in_dim as isize,
            1,
            1.0,
            dw.as_mut_ptr(),
            in_dim as isize,
            1,
        );
    }
}

/// `dx (n×in) = dz (n×out) · w (out×in)`.
fn linear_input_grad(dz: &[f64], w: &[f64], n: usize, in_dim: usize, out_dim: usize, dx: &mut [f64]) {
    unsafe {
        matrixmultiply::dgemm(
            n,
            out_dim,
            in_dim,
            1.0,
            dz.as_ptr(),
            out_dim as isize,
            1,
            w.as_ptr(),
            in_dim as isize,
            1,
            0.0,
            dx.as_mut_ptr(),
            in_dim as isize,
            1,
        );
    }
}

fn relu_layer_norm(pre: Vec<f64>, n: usize, dim: usize, gamma: &[f32], beta: &[f32]) -> HiddenTape {
    let mut xhat = vec![0.0; n * dim];
    let mut out = vec![0.0; n * dim];
    let mut inv_std = vec![0.0; n];
    for r in 0..n {
        let row = &pre[r * dim..(r + 1) * dim];
        let mean = row.iter().map(|&v| v.max(0.0)).sum::<f64>() / dim as f64;
        let var = row
            .iter()
            .map(|&v| {
                let d = v.max(0.0) - mean;
                d * d
            })
            .sum::<f64>()
            / dim as f64;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[r] = is;
        for c in 0..dim {
            let xh = (row[c].max(0.0) - mean) * is;
            xhat[r * dim + c] = xh;
            out[r * dim + c] = gamma[c] as f64 * xh + beta[c] as f64;
        }
    }
    HiddenTape {
        pre,
        xhat,
        inv_std,
        out,
    }
}

#[allow(clippy::too_many_arguments)]
fn relu_layer_norm_backward(
    h: &HiddenTape,
    dy: &[f64],
    n: usize,
    dim: usize,
    gamma: &[f32],
    grad: &mut [f64],
    gamma_off: usize,
    beta_off: usize,
) -> Vec<f64> {
    let mut dpre = vec![0.0; n * dim];
    let mut dxhat = vec![0.0; dim];
    for r in 0..n {
        let dy_row = &dy[r * dim..(r + 1) * dim];
        let xh_row = &h.xhat[r * dim..(r + 1) * dim];
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for c in 0..dim {
            grad[gamma_off + c] += dy_row[c] * xh_row[c];
            grad[beta_off + c] += dy_row[c];
            dxhat[c] = dy_row[c] * gamma[c] as f64;
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xh_row[c];
        }
        mean_d /= dim as f64;
        mean_dx /= dim as f64;
        let is = h.inv_std[r];
        for c in 0..dim {
            let da = is * (dxhat[c] - mean_d - xh_row[c] * mean_dx);
            dpre[r * dim + c] = if h.pre[r * dim + c] > 0.0 { da } else { 0.0 };
        }
    }
    dpre
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Largest observed `|p(x) − p(x + δ)| / ‖δ‖` over `samples` random pairs,
/// with `x` uniform in the unit ball and `δ` of length `step` in a random
/// direction.
pub fn empirical_lipschitz(field: &HighlighterField, samples: usize, step: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut a = Vec::with_capacity(samples);
    let mut b = Vec::with_capacity(samples);
    while a.len() < samples {
        let p: Vec3 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        if crate::math::norm(p) > 1.0 {
            continue;
        }
        let d: Vec3 = [normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)];
        let Some(d) = crate::math::normalize(d) else { continue };
        a.push(p);
        b.push(crate::math::add(p, crate::math::scale(d, step)));
    }
    let pa = field.highlight_probabilities(&a)?;
    let pb = field.highlight_probabilities(&b)?;
    Ok(pa
        .iter()
        .zip(&pb)
        .map(|(x, y)| (x - y).abs() / step)
        .fold(0.0, f64::max))
}
