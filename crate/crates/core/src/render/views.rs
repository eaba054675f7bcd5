use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, FRAC_PI_8, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Camera;
use crate::error::{Error, Result};

/// Sampled elevations are kept this far away from the poles.
const POLE_MARGIN: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// All `n` views drawn from a Gaussian around the primary view.
    #[default]
    Primary,
    /// The primary view itself plus `n − 1` Gaussian draws.
    Anchor,
    /// `n` views uniform in azimuth and in elevation over `[−π/3, π/3]`.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewDistribution {
    pub primary: Camera,
    pub azimuth_std: f64,
    pub elevation_std: f64,
    pub mode: SamplingMode,
    pub views_per_step: usize,
}

impl Default for ViewDistribution {
    fn default() -> Self {
        ViewDistribution {
            primary: Camera::default(),
            azimuth_std: FRAC_PI_4,
            elevation_std: FRAC_PI_8,
            mode: SamplingMode::Primary,
            views_per_step: 5,
        }
    }
}

impl ViewDistribution {
    pub fn validate(&self) -> Result<()> {
        self.primary.validate()?;
        if !(self.azimuth_std >= 0.0 && self.elevation_std >= 0.0) {
            return Err(Error::InvalidConfig("view standard deviations must be >= 0".into()));
        }
        if self.views_per_step == 0 {
            return Err(Error::InvalidConfig("views_per_step must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn sample_views(dist: &ViewDistribution, seed: u64) -> Vec<Camera> {
    sample_views_with(dist, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sample_views_with<R: Rng + ?Sized>(dist: &ViewDistribution, rng: &mut R) -> Vec<Camera> {
    let n = dist.views_per_step;
    let limit = FRAC_PI_2 - POLE_MARGIN;
    let gaussian = |rng: &mut R| {
        let az = dist.primary.azimuth + dist.azimuth_std * standard_normal(rng);
        let el = dist.primary.elevation + dist.elevation_std * standard_normal(rng);
        Camera {
            azimuth: az,
            elevation: el.clamp(-limit, limit),
            ..dist.primary
        }
    };
    match dist.mode {
        SamplingMode::Primary => (0..n).map(|_| gaussian(rng)).collect(),
        SamplingMode::Anchor => std::iter::once(dist.primary)
            .chain((1..n).map(|_| gaussian(rng)))
            .collect(),
        SamplingMode::Uniform => (0..n)
            .map(|_| Camera {
                azimuth: rng.random_range(0.0..2.0 * PI),
                elevation: rng.random_range(-FRAC_PI_3..=FRAC_PI_3),
                ..dist.primary
            })
            .collect(),
    }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

/// Candidate cameras for primary-view selection: 16 azimuths at each of the
/// elevations 0° and 30°, sharing `template`'s radius and field of view.
pub fn candidate_views(template: &Camera) -> Vec<Camera> {
    let mut out = Vec::with_capacity(32);
    for el in [0.0f64, 30.0] {
        for i in 0..16 {
            out.push(Camera {
                azimuth: 2.0 * PI * i as f64 / 16.0,
                elevation: el.to_radians(),
                ..*template
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_std_primary_mode_repeats_primary() {
        let dist = ViewDistribution {
            primary: Camera::orbit(0.7, 0.2),
            azimuth_std: 0.0,
            elevation_std: 0.0,
            ..Default::default()
        };
        let views = sample_views(&dist, 3);
        assert_eq!(views.len(), 5);
        assert!(views.iter().all(|c| *c == dist.primary));
    }

    #[test]
    fn anchor_mode_leads_with_primary() {
        let dist = ViewDistribution {
            mode: SamplingMode::Anchor,
            views_per_step: 4,
            ..Default::default()
        };
        let views = sample_views(&dist, 9);
        assert_eq!(views.len(), 4);
        assert_eq!(views[0], dist.primary);
        assert!(views[1..].iter().all(|c| *c != dist.primary));
    }

    #[test]
    fn uniform_mode_ranges() {
        let dist = ViewDistribution {
            mode: SamplingMode::Uniform,
            views_per_step: 500,
            ..Default::default()
        };
        for c in sample_views(&dist, 1) {
            assert!((0.0..2.0 * PI).contains(&c.azimuth));
            assert!(c.elevation.abs() <= FRAC_PI_3);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let dist = ViewDistribution::default();
        assert_eq!(sample_views(&dist, 11), sample_views(&dist, 11));
        assert_ne!(sample_views(&dist, 11), sample_views(&dist, 12));
    }

    #[test]
    fn azimuth_offsets_are_centered() {
        let dist = ViewDistribution {
            views_per_step: 10_000,
            ..Default::default()
        };
        let views = sample_views(&dist, 5);
        let n = views.len() as f64;
        let mean = views.iter().map(|c| c.azimuth - dist.primary.azimuth).sum::<f64>() / n;
        assert!(mean.abs() <= 3.0 * dist.azimuth_std / n.sqrt(), "mean offset {mean}");
    }

    #[test]
    fn validation() {
        assert!(ViewDistribution { views_per_step: 0, ..Default::default() }.validate().is_err());
        assert!(ViewDistribution { azimuth_std: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn candidates_cover_two_rings() {
        let c = candidate_views(&Camera::default());
        assert_eq!(c.len(), 32);
        assert_eq!(c[0].azimuth, 0.0);
        assert!((c[16].elevation - 30f64.to_radians()).abs() < 1e-12);
    }
}
