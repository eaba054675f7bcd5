//! The optimization loop: field → blend → render → augment → guidance →
//! backprop → Adam.

mod adam;
mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{init_field, FieldConfig, HighlighterField, PositionalEncoding, Tape, HIGHLIGHT_CLASS};
use crate::guidance::{build_prompt, Guidance, GuidanceView, PromptSpec};
use crate::mesh::{Mesh, NormalizationTransform};
use crate::render::{
    blend_backward, blend_colors, rasterize, sample_views_with, threshold_colors, Camera, PerspectiveWarp,
    RenderConfig, ViewDistribution,
};
use crate::result::{HighlightResult, Provenance};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::CHECKPOINT_VERSION;

/// Frequencies used when the positional-encoding ablation switches the
/// encoding on and the field config leaves it off.
pub const ABLATION_PE_FREQUENCIES: usize = 6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// Optimize one probability per vertex; no network.
    Direct,
    /// Two-tone coloring at threshold 0.5 with a straight-through gradient.
    NoBlend,
    /// Skip image augmentation.
    NoAugs,
    /// Positional encoding on the field input.
    PositionalEncoding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizationConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    /// Seeds view sampling and augmentation.
    pub seed: u64,
    pub ablation: Ablation,
    /// Perspective augmentation strength in `[0, 1]`.
    pub distortion_scale: f64,
    /// Steps between checkpoints; 0 disables.
    pub checkpoint_every: usize,
    /// Steps between progress records; 0 disables.
    pub log_every: usize,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        OptimizationConfig {
            iterations: 2500,
            learning_rate: 1e-4,
            adam: AdamConfig::default(),
            seed: 0,
            ablation: Ablation::None,
            distortion_scale: 0.5,
            checkpoint_every: 0,
            log_every: 1,
        }
    }
}

impl OptimizationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.distortion_scale) {
            return Err(Error::InvalidConfig("distortion_scale must lie in [0, 1]".into()));
        }
        self.adam.validate()
    }
}

/// Everything that configures one run besides the mesh, prompt and
/// guidance.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub field: FieldConfig,
    pub optimization: OptimizationConfig,
    pub render: RenderConfig,
    pub views: ViewDistribution,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.effective_field_config().validate()?;
        self.optimization.validate()?;
        self.render.validate()?;
        self.views.validate()
    }

    /// Field config after applying the ablation.
    pub fn effective_field_config(&self) -> FieldConfig {
        let mut cfg = self.field.clone();
        if self.optimization.ablation == Ablation::PositionalEncoding && cfg.positional_encoding == PositionalEncoding::Off {
            cfg.positional_encoding = PositionalEncoding::On {
                num_frequencies: ABLATION_PE_FREQUENCIES,
            };
        }
        cfg
    }
}

/// The optimized quantity.
#[derive(Clone, Debug, PartialEq)]
pub enum Variable {
    Field(HighlighterField),
    /// One probability per vertex.
    Direct(Vec<f64>),
}

impl Variable {
    pub fn num_scalars(&self) -> usize {
        match self {
            Variable::Field(f) => f.num_parameters(),
            Variable::Direct(p) => p.len(),
        }
    }

    pub fn field(&self) -> Option<&HighlighterField> {
        match self {
            Variable::Field(f) => Some(f),
            Variable::Direct(_) => None,
        }
    }

    pub fn probabilities(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        match self {
            Variable::Field(f) => f.highlight_probabilities(&mesh.vertices),
            Variable::Direct(p) => Ok(p.clone()),
        }
    }
}

/// Progress record emitted after each step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub clip_similarity: f64,
}

struct Evaluation {
    loss: f64,
    dprobs: Vec<f64>,
    tape: Option<Tape>,
    /// View RNG after this step's draws.
    rng: ChaCha8Rng,
    aug_calls: u64,
}

/// One optimization run. Owns its variable, optimizer state and view RNG.
pub struct Optimizer<'a> {
    mesh: &'a Mesh,
    guidance: &'a dyn Guidance,
    config: RunConfig,
    variable: Variable,
    adam: Adam,
    rng: ChaCha8Rng,
    step: usize,
    loss_history: Vec<f64>,
    augmentation_calls: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the augmentation applied to `view` at `step`.
pub fn augmentation_seed(seed: u64, step: usize, view: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ step as u64) ^ view as u64)
}

impl<'a> Optimizer<'a> {
    pub fn new(mesh: &'a Mesh, guidance: &'a dyn Guidance, config: RunConfig) -> Result<Self> {
        config.validate()?;
        let variable = match config.optimization.ablation {
            Ablation::Direct => Variable::Direct(vec![0.5; mesh.vertex_count()]),
            _ => Variable::Field(init_field(&config.effective_field_config())?),
        };
        Self::with_variable(mesh, guidance, config, variable)
    }

    /// Starts from a given variable instead of a fresh one.
    pub fn with_variable(mesh: &'a Mesh, guidance: &'a dyn Guidance, config: RunConfig, variable: Variable) -> Result<Self> {
        config.validate()?;
        if mesh.faces.is_empty() {
            return Err(Error::Empty("mesh faces"));
        }
        match (&variable, config.optimization.ablation) {
            (Variable::Direct(p), Ablation::Direct) if p.len() == mesh.vertex_count() => {}
            (Variable::Direct(p), Ablation::Direct) => {
                return Err(Error::LengthMismatch {
                    what: "direct probabilities",
                    expected: mesh.vertex_count(),
                    actual: p.len(),
                })
            }
            (Variable::Field(_), a) if a != Ablation::Direct => {}
            _ => {
                return Err(Error::InvalidConfig(
                    "direct ablation requires a per-vertex variable and vice versa".into(),
                ))
            }
        }
        let adam = Adam::new(
            variable.num_scalars(),
            config.optimization.learning_rate,
            config.optimization.adam,
        );
        let rng = ChaCha8Rng::seed_from_u64(config.optimization.seed);
        Ok(Optimizer {
            mesh,
            guidance,
            config,
            variable,
            adam,
            rng,
            step: 0,
            loss_history: Vec::new(),
            augmentation_calls: 0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn variable(&self) -> &Variable {
        &self.variable
    }

    pub fn into_variable(self) -> Variable {
        self.variable
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    /// Number of perspective warps sampled so far.
    pub fn augmentation_calls(&self) -> u64 {
        self.augmentation_calls
    }

    /// Count of scalars updated by the optimizer.
    pub fn num_optimized_scalars(&self) -> usize {
        self.variable.num_scalars()
    }

    pub fn probabilities(&self) -> Result<Vec<f64>> {
        self.variable.probabilities(self.mesh)
    }

    /// Forward and backward pass of the next step, without changing state.
    fn evaluate(&self) -> Result<Evaluation> {
        let mesh = self.mesh;
        let cfg = &self.config;
        let rcfg = &cfg.render;
        let ocfg = &cfg.optimization;
        let size = rcfg.image_size;

        let (probs, tape) = match &self.variable {
            Variable::Field(f) => {
                let tape = f.forward(&mesh.vertices)?;
                let k = f.config().num_classes;
                let p: Vec<f64> = tape.probabilities().chunks(k).map(|r| r[HIGHLIGHT_CLASS]).collect();
                (p, Some(tape))
            }
            Variable::Direct(p) => (p.clone(), None),
        };
        let colors = match ocfg.ablation {
            Ablation::NoBlend => threshold_colors(&probs, rcfg),
            _ => blend_colors(&probs, rcfg),
        };

        let mut rng = self.rng.clone();
        let cameras: Vec<Camera> = sample_views_with(&cfg.views, &mut rng);
        let mut rasters = Vec::with_capacity(cameras.len());
        let mut warps = Vec::with_capacity(cameras.len());
        let mut images = Vec::with_capacity(cameras.len());
        let mut aug_calls = 0;
        for (vi, cam) in cameras.iter().enumerate() {
            let raster = rasterize(mesh, cam, size, &rcfg.lighting)?;
            let img = raster.shade_colors(mesh, &colors, rcfg.background);
            let warp = if ocfg.ablation == Ablation::NoAugs {
                PerspectiveWarp::identity(size, size)
            } else {
                aug_calls += 1;
                let mut arng = ChaCha8Rng::seed_from_u64(augmentation_seed(ocfg.seed, self.step, vi));
                PerspectiveWarp::sample(size, size, ocfg.distortion_scale, &mut arng)
            };
            images.push(warp.apply(&img, rcfg.background));
            rasters.push(raster);
            warps.push(warp);
        }
        let views: Vec<GuidanceView<'_>> = (0..cameras.len())
            .map(|i| GuidanceView {
                camera: &cameras[i],
                raster: &rasters[i],
                warp: &warps[i],
                image: &images[i],
            })
            .collect();
        let (loss, dimages) = self.guidance.loss_and_grad(&views)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                message: format!("loss is {loss}"),
            });
        }

        let mut dcolors = vec![[0.0; 3]; mesh.vertex_count()];
        for ((raster, warp), dimg) in rasters.iter().zip(&warps).zip(&dimages) {
            raster.accumulate_color_grad(mesh, &warp.backward(dimg), &mut dcolors);
        }
        // For the two-tone ablation this is the straight-through gradient.
        let dprobs = blend_backward(&dcolors, rcfg);
        if dprobs.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step: self.step,
                message: "non-finite probability gradient".into(),
            });
        }
        Ok(Evaluation {
            loss,
            dprobs,
            tape,
            rng,
            aug_calls,
        })
    }

    /// Loss of the next step and its gradient with respect to the
    /// per-vertex highlight probabilities. Leaves the run untouched.
    pub fn probability_gradient(&self) -> Result<(f64, Vec<f64>)> {
        let e = self.evaluate()?;
        Ok((e.loss, e.dprobs))
    }

    /// Runs one iteration. On error the run state is left untouched.
    pub fn step(&mut self) -> Result<StepRecord> {
        let Evaluation {
            loss,
            dprobs,
            tape,
            rng,
            aug_calls,
        } = self.evaluate()?;

        match (&mut self.variable, tape) {
            (Variable::Field(f), Some(tape)) => {
                let k = f.config().num_classes;
                let mut d = vec![0.0; dprobs.len() * k];
                for (v, g) in dprobs.iter().enumerate() {
                    d[v * k + HIGHLIGHT_CLASS] = *g;
                }
                let grads = f.backward(&tape, &d)?;
                let params = f.params_mut();
                self.adam.step(&grads, |i, delta| {
                    params[i] = (params[i] as f64 + delta) as f32;
                })?;
            }
            (Variable::Direct(p), _) => {
                self.adam.step(&dprobs, |i, delta| {
                    p[i] = (p[i] + delta).clamp(0.0, 1.0);
                })?;
            }
            (Variable::Field(_), None) => unreachable!("field forward always records a tape"),
        }

        self.rng = rng;
        self.augmentation_calls += aug_calls;
        self.loss_history.push(loss);
        let record = StepRecord {
            step: self.step,
            loss,
            clip_similarity: -loss,
        };
        self.step += 1;
        Ok(record)
    }

    /// Steps until `step_index() == until`. Checkpoints into
    /// `checkpoint_dir` every `checkpoint_every` steps, and once more if a
    /// step fails.
    pub fn run(
        &mut self,
        until: usize,
        checkpoint_dir: Option<&std::path::Path>,
        on_step: &mut dyn FnMut(&StepRecord),
    ) -> Result<()> {
        let every = self.config.optimization.checkpoint_every;
        let log_every = self.config.optimization.log_every;
        while self.step < until {
            let record = match self.step() {
                Ok(r) => r,
                Err(e) => {
                    if let Some(dir) = checkpoint_dir {
                        self.checkpoint(dir)?;
                    }
                    return Err(e);
                }
            };
            if log_every > 0 && (record.step % log_every == 0 || self.step == until) {
                on_step(&record);
            }
            if let Some(dir) = checkpoint_dir {
                if every > 0 && self.step.is_multiple_of(every) {
                    self.checkpoint(dir)?;
                }
            }
        }
        Ok(())
    }

    /// Packages the current state as a result.
    pub fn result(&self, transform: &NormalizationTransform, prompt: &str) -> Result<HighlightResult> {
        let config = serde_json::to_value(&self.config)?;
        let provenance = Provenance::new(
            prompt.to_string(),
            self.config.optimization.seed,
            self.guidance.id(),
            config,
        );
        let mut r = HighlightResult::new(self.probabilities()?, *transform, provenance);
        r.loss_history = self.loss_history.clone();
        Ok(r)
    }
}

/// Result of [`optimize_highlight`].
pub struct Outcome {
    pub result: HighlightResult,
    pub variable: Variable,
    pub augmentation_calls: u64,
}

/// Runs `config.optimization.iterations` steps from a fresh variable.
pub fn optimize_highlight(
    mesh: &Mesh,
    transform: &NormalizationTransform,
    spec: &PromptSpec,
    guidance: &dyn Guidance,
    config: &RunConfig,
) -> Result<Outcome> {
    let prompt = build_prompt(spec)?;
    let mut opt = Optimizer::new(mesh, guidance, config.clone())?;
    opt.run(config.optimization.iterations, None, &mut |_| {})?;
    let result = opt.result(transform, &prompt)?;
    let augmentation_calls = opt.augmentation_calls();
    Ok(Outcome {
        result,
        variable: opt.into_variable(),
        augmentation_calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::MockGuidance;
    use crate::mesh::primitives;

    fn small_config(ablation: Ablation) -> RunConfig {
        RunConfig {
            field: FieldConfig {
                depth: 3,
                width: 16,
                ..Default::default()
            },
            optimization: OptimizationConfig {
                iterations: 3,
                learning_rate: 1e-2,
                ablation,
                ..Default::default()
            },
            render: RenderConfig {
                image_size: 32,
                ..Default::default()
            },
            views: ViewDistribution {
                views_per_step: 2,
                ..Default::default()
            },
        }
    }

    fn cap_guidance(mesh: &Mesh, cfg: &RunConfig) -> MockGuidance {
        let target = mesh.vertices.iter().map(|v| v[2] > 0.6).collect();
        MockGuidance::new(mesh.clone(), target, cfg.render.clone()).unwrap()
    }

    #[test]
    fn zero_iterations_returns_initial_field() {
        let mesh = primitives::icosphere(1);
        let mut cfg = small_config(Ablation::None);
        cfg.optimization.iterations = 0;
        let g = cap_guidance(&mesh, &cfg);
        let out = optimize_highlight(&mesh, &NormalizationTransform::identity(), &PromptSpec::new("ball", "cap"), &g, &cfg).unwrap();
        let fresh = init_field(&cfg.field).unwrap().highlight_probabilities(&mesh.vertices).unwrap();
        assert_eq!(out.result.probabilities, fresh);
        assert!(out.result.loss_history.is_empty());
    }

    #[test]
    fn direct_mode_has_one_scalar_per_vertex() {
        let mesh = primitives::icosphere(1);
        let cfg = small_config(Ablation::Direct);
        let g = cap_guidance(&mesh, &cfg);
        let mut opt = Optimizer::new(&mesh, &g, cfg).unwrap();
        assert_eq!(opt.num_optimized_scalars(), mesh.vertex_count());
        assert!(opt.variable().field().is_none());
        opt.run(3, None, &mut |_| {}).unwrap();
        assert!(opt.probabilities().unwrap().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn no_augs_never_samples_a_warp() {
        let mesh = primitives::icosphere(1);
        let g = cap_guidance(&mesh, &small_config(Ablation::None));
        let mut opt = Optimizer::new(&mesh, &g, small_config(Ablation::NoAugs)).unwrap();
        opt.run(3, None, &mut |_| {}).unwrap();
        assert_eq!(opt.augmentation_calls(), 0);
        let mut opt = Optimizer::new(&mesh, &g, small_config(Ablation::None)).unwrap();
        opt.run(3, None, &mut |_| {}).unwrap();
        assert_eq!(opt.augmentation_calls(), 6);
    }

    #[test]
    fn positional_encoding_ablation_widens_input() {
        let cfg = small_config(Ablation::PositionalEncoding);
        assert_eq!(cfg.effective_field_config().input_dim(), 3 + 6 * ABLATION_PE_FREQUENCIES);
    }

    #[test]
    fn records_one_loss_per_step_and_logs() {
        let mesh = primitives::icosphere(1);
        let cfg = small_config(Ablation::NoBlend);
        let g = cap_guidance(&mesh, &cfg);
        let mut opt = Optimizer::new(&mesh, &g, cfg).unwrap();
        let mut seen = Vec::new();
        opt.run(4, None, &mut |r| seen.push(*r)).unwrap();
        assert_eq!(opt.loss_history().len(), 4);
        assert_eq!(seen.len(), 4);
        assert!(seen.iter().all(|r| r.clip_similarity == -r.loss));
    }

    #[test]
    fn deterministic_for_a_seed() {
        let mesh = primitives::icosphere(1);
        let cfg = small_config(Ablation::None);
        let g = cap_guidance(&mesh, &cfg);
        let run = |cfg: RunConfig| {
            let mut opt = Optimizer::new(&mesh, &g, cfg).unwrap();
            opt.run(3, None, &mut |_| {}).unwrap();
            (opt.loss_history().to_vec(), opt.probabilities().unwrap())
        };
        assert_eq!(run(cfg.clone()), run(cfg.clone()));
        let mut other = cfg;
        other.optimization.seed = 1;
        assert_ne!(run(other).0, run(small_config(Ablation::None)).0);
    }

    struct NanGuidance;
    impl Guidance for NanGuidance {
        fn id(&self) -> String {
            "nan".into()
        }
        fn is_deterministic(&self) -> bool {
            true
        }
        fn loss_and_grad(&self, views: &[GuidanceView<'_>]) -> Result<(f64, Vec<crate::render::Image>)> {
            Ok((f64::NAN, views.iter().map(|v| v.image.clone()).collect()))
        }
        fn view_similarity(&self, _: &Camera, _: &crate::render::Rasterization, _: &crate::render::Image) -> Result<f64> {
            Ok(0.0)
        }
    }

    #[test]
    fn nan_loss_aborts_without_touching_state() {
        let mesh = primitives::icosphere(1);
        let mut opt = Optimizer::new(&mesh, &NanGuidance, small_config(Ablation::None)).unwrap();
        let before = opt.probabilities().unwrap();
        assert!(matches!(opt.step(), Err(Error::Diverged { step: 0, .. })));
        assert_eq!(opt.step_index(), 0);
        assert_eq!(opt.probabilities().unwrap(), before);
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_config(Ablation::None);
        cfg.optimization.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config(Ablation::None);
        cfg.optimization.distortion_scale = 1.5;
        assert!(cfg.validate().is_err());
    }
}
