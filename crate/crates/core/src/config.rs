use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every tunable of a run: training weights, negative mining, encoder and
/// head shapes, and inference thresholds. Unknown JSON keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Synonym distance regularizer weight.
    pub alpha: f64,
    /// Noise perturbation regularizer weight.
    pub beta: f64,
    /// Triplet margin.
    pub gamma_s: f64,
    /// Standard deviation of the embedding-space perturbation.
    pub noise_sigma: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,

    /// Fixed negative filtering distance. When unset it is calibrated as
    /// the `t_d_quantile` quantile of nearest-dictionary distances of the
    /// sampled spans.
    pub t_d: Option<f64>,
    pub t_d_quantile: f64,
    /// Number of corpus spans drawn before filtering.
    pub negative_samples: usize,
    /// Longest sampled negative span, in tokens.
    pub negative_max_len: usize,

    pub dim: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub num_buckets: usize,
    pub hash_seed: u64,
    /// Std of the initial embedding table entries.
    pub init_scale: f64,
    /// Seed for the frozen reference encoder (hashing and table).
    pub frozen_seed: u64,
    pub lowercase: bool,

    /// Hidden layer widths of the scoring head.
    pub hidden: Vec<usize>,

    pub t_p: f64,
    pub m_s: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            alpha: 0.1,
            beta: 1.0,
            gamma_s: 1.0,
            noise_sigma: 0.1,
            lr: 0.1,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            t_d: None,
            t_d_quantile: 0.1,
            negative_samples: 20_000,
            negative_max_len: 8,
            dim: 64,
            ngram_min: 3,
            ngram_max: 5,
            num_buckets: 1 << 16,
            hash_seed: 0x5eed,
            init_scale: 1.0,
            frozen_seed: 0xf00d,
            lowercase: true,
            hidden: vec![64],
            t_p: 0.5,
            m_s: 8,
        }
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid(format!("config: {what}")))
            }
        };
        check(self.alpha >= 0.0 && self.alpha.is_finite(), "alpha must be >= 0")?;
        check(self.beta >= 0.0 && self.beta.is_finite(), "beta must be >= 0")?;
        check(self.gamma_s > 0.0, "gamma_s must be > 0")?;
        check(self.noise_sigma > 0.0, "noise_sigma must be > 0")?;
        check(self.lr > 0.0 && self.lr.is_finite(), "lr must be > 0")?;
        check(self.batch_size > 0, "batch_size must be > 0")?;
        check(self.t_d.is_none_or(|t| t > 0.0), "t_d must be > 0")?;
        check(
            self.t_d_quantile > 0.0 && self.t_d_quantile < 1.0,
            "t_d_quantile must be in (0, 1)",
        )?;
        check(self.negative_samples > 0, "negative_samples must be > 0")?;
        check(self.negative_max_len > 0, "negative_max_len must be > 0")?;
        check(self.dim > 0, "dim must be > 0")?;
        check(
            self.ngram_min >= 1 && self.ngram_min <= self.ngram_max,
            "need 1 <= ngram_min <= ngram_max",
        )?;
        check(self.num_buckets > 0, "num_buckets must be > 0")?;
        check(self.init_scale >= 0.0, "init_scale must be >= 0")?;
        check(self.hidden.iter().all(|&h| h > 0), "hidden widths must be > 0")?;
        check(self.t_p > 0.0 && self.t_p < 1.0, "t_p must be in (0, 1)")?;
        check(self.m_s >= 1, "m_s must be >= 1")?;
        Ok(())
    }
}
