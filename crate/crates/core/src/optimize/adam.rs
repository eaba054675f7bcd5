use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.epsilon > 0.0;
        if !ok {
            return Err(Error::InvalidConfig(
                "adam needs beta1, beta2 in [0, 1) and epsilon > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Adam with bias correction and a constant learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub learning_rate: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(size: usize, learning_rate: f64, config: AdamConfig) -> Self {
        Adam {
            config,
            learning_rate,
            t: 0,
            m: vec![0.0; size],
            v: vec![0.0; size],
        }
    }

    /// Advances the moments with `grads` and hands each parameter's update
    /// (to be added) to `apply`.
    pub fn step(&mut self, grads: &[f64], mut apply: impl FnMut(usize, f64)) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::LengthMismatch {
                what: "gradient",
                expected: self.m.len(),
                actual: grads.len(),
            });
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, &g) in grads.iter().enumerate() {
            let m = beta1 * self.m[i] + (1.0 - beta1) * g;
            let v = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            self.m[i] = m;
            self.v[i] = v;
            apply(i, -self.learning_rate * (m / c1) / ((v / c2).sqrt() + epsilon));
        }
        Ok(())
    }

    /// `t` then `m` then `v`, little endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 16 * self.m.len());
        out.extend_from_slice(&self.t.to_le_bytes());
        out.extend_from_slice(&(self.m.len() as u64).to_le_bytes());
        for x in self.m.iter().chain(&self.v) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], learning_rate: f64, config: AdamConfig) -> Result<Self> {
        let bad = || Error::Checkpoint("optimizer state is truncated or corrupt".into());
        if bytes.len() < 16 {
            return Err(bad());
        }
        let t = u64::from_le_bytes(bytes[0..8].try_into().expect("8 bytes"));
        let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        if bytes.len() != 16 + 16 * n {
            return Err(bad());
        }
        let vals: Vec<f64> = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Adam {
            config,
            learning_rate,
            t,
            m: vals[..n].to_vec(),
            v: vals[n..].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With zero moments the bias-corrected step is lr · g / (|g| + eps).
        let mut adam = Adam::new(3, 0.01, AdamConfig::default());
        let mut x = [1.0, -2.0, 0.0];
        adam.step(&[4.0, -0.5, 0.0], |i, d| x[i] += d).unwrap();
        assert!((x[0] - (1.0 - 0.01 * 4.0 / (4.0 + 1e-8))).abs() < 1e-15);
        assert!((x[1] - (-2.0 + 0.01 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert_eq!(x[2], 0.0);
    }

    #[test]
    fn second_step_matches_hand_computation() {
        let mut adam = Adam::new(1, 0.1, AdamConfig::default());
        let mut x = 0.0;
        adam.step(&[1.0], |_, d| x += d).unwrap();
        adam.step(&[3.0], |_, d| x += d).unwrap();
        let m = 0.9 * 0.1 + 0.1 * 3.0;
        let v = 0.999 * 0.001 + 0.001 * 9.0;
        let expected = -0.1 * (1.0 / (1.0 + 1e-8)) - 0.1 * (m / 0.19) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((x - expected).abs() < 1e-12, "{x} vs {expected}");
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = Adam::new(2, 0.05, AdamConfig::default());
        let mut x = [3.0, -1.5];
        for _ in 0..2000 {
            let g = [2.0 * (x[0] - 1.0), 4.0 * (x[1] + 0.5)];
            adam.step(&g, |i, d| x[i] += d).unwrap();
        }
        assert!((x[0] - 1.0).abs() < 1e-3 && (x[1] + 0.5).abs() < 1e-3, "{x:?}");
    }

    #[test]
    fn byte_round_trip() {
        let mut adam = Adam::new(4, 1e-3, AdamConfig::default());
        adam.step(&[0.1, -0.2, 0.3, 0.0], |_, _| {}).unwrap();
        let bytes = adam.to_bytes();
        let back = Adam::from_bytes(&bytes, 1e-3, AdamConfig::default()).unwrap();
        assert_eq!(back, adam);
        assert!(Adam::from_bytes(&bytes[..bytes.len() - 1], 1e-3, AdamConfig::default()).is_err());
    }
}
