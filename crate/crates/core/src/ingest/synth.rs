use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use crate::batcher::seeded_rng;
use crate::error::{Error, Result};
use crate::types::{Dataset, Sample};

/// Sampling recipe for a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDistribution {
    /// Mean of the underlying normal of the log-normal text length.
    pub text_mu: f64,
    pub text_sigma: f64,
    /// Text lengths are drawn from the log-normal restricted to `[1, cap]`.
    pub text_cap: u32,
    /// `vision_weights[u]` is the relative weight of `u` vision units.
    pub vision_weights: Vec<f64>,
    /// Text tokens added per vision unit for image placeholders.
    #[serde(default)]
    pub placeholder_tokens_per_unit: u32,
    pub sample_count: usize,
    pub seed: u64,
}

pub const SYNTH_PRESETS: [&str; 3] = ["tiles-12", "tiles-4", "single-image"];

impl SynthDistribution {
    /// Uniform vision units over `1..=max_units`.
    pub fn uniform_tiles(mu: f64, sigma: f64, cap: u32, max_units: usize) -> Self {
        let mut vision_weights = vec![1.0; max_units + 1];
        vision_weights[0] = 0.0;
        Self {
            text_mu: mu,
            text_sigma: sigma,
            text_cap: cap,
            vision_weights,
            placeholder_tokens_per_unit: 0,
            sample_count: 100_000,
            seed: 42,
        }
    }

    /// Named recipes:
    /// `tiles-12` up to 12 tiles per sample,
    /// `tiles-4` up to 4 tiles with 256 placeholder tokens each,
    /// `single-image` at most one image and broader text lengths.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tiles-12" => Ok(Self::uniform_tiles(6.0, 0.8, 4096, 12)),
            "tiles-4" => Ok(Self {
                placeholder_tokens_per_unit: 256,
                ..Self::uniform_tiles(6.0, 0.8, 4096, 4)
            }),
            "single-image" => Ok(Self {
                vision_weights: vec![0.1, 0.9],
                ..Self::uniform_tiles(5.5, 1.0, 4096, 1)
            }),
            _ => Err(Error::Unknown {
                kind: "synthetic preset",
                name: name.to_owned(),
            }),
        }
    }

    pub fn with_count(mut self, n: usize) -> Self {
        self.sample_count = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.text_mu.is_finite() && self.text_sigma.is_finite() && self.text_sigma >= 0.0) {
            return Err(Error::invalid("text_mu must be finite and text_sigma >= 0"));
        }
        if self.text_cap == 0 {
            return Err(Error::invalid("text_cap must be at least 1"));
        }
        if self.vision_weights.is_empty()
            || self
                .vision_weights
                .iter()
                .any(|w| !(w.is_finite() && *w >= 0.0))
            || self.vision_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(Error::invalid(
                "vision_weights must be non-negative with a positive sum",
            ));
        }
        // Reject recipes whose truncated support is practically empty.
        let ln_cap = f64::from(self.text_cap).ln();
        if self.text_sigma == 0.0 {
            let t = self.text_mu.exp().round();
            if !(1.0..=f64::from(self.text_cap)).contains(&t) {
                return Err(Error::invalid(
                    "degenerate text distribution lies outside [1, cap]",
                ));
            }
        } else if (self.text_mu - ln_cap) / self.text_sigma > 8.0
            || (-0.7 - self.text_mu) / self.text_sigma > 8.0
        {
            return Err(Error::invalid(
                "text distribution has negligible mass inside [1, cap]",
            ));
        }
        Ok(())
    }

    /// Mean vision units per sample implied by the weights.
    pub fn mean_vision_units(&self) -> f64 {
        let total: f64 = self.vision_weights.iter().sum();
        self.vision_weights
            .iter()
            .enumerate()
            .map(|(u, w)| u as f64 * w)
            .sum::<f64>()
            / total
    }
}

/// Draws `sample_count` samples with ids `syn-0000000`, ... Deterministic in
/// `seed`.
pub fn generate_dataset(dist: &SynthDistribution) -> Result<Dataset> {
    dist.validate()?;
    let mut rng = seeded_rng(dist.seed);
    let text = LogNormal::new(dist.text_mu, dist.text_sigma)
        .map_err(|e| Error::invalid(format!("log-normal: {e}")))?;
    let vision = WeightedIndex::new(&dist.vision_weights)
        .map_err(|e| Error::invalid(format!("vision weights: {e}")))?;
    let cap = f64::from(dist.text_cap);
    let samples = (0..dist.sample_count)
        .map(|i| {
            let t = loop {
                let x = text.sample(&mut rng).round();
                if (1.0..=cap).contains(&x) {
                    break x as u32;
                }
            };
            let units = vision.sample(&mut rng) as u32;
            let t = t
                .saturating_add(units.saturating_mul(dist.placeholder_tokens_per_unit))
                .min(dist.text_cap);
            Sample {
                id: format!("syn-{i:07}"),
                vision_units: units,
                text_tokens: t,
            }
        })
        .collect();
    Ok(Dataset::from_valid(samples))
}
