//! Synonym generalization error bound and plug-in estimators for its
//! inputs.
//!
//! With probability at least `1 - delta`, the worst-case gap between the
//! loss of any domain entity and the mean dictionary loss is below
//!
//! ```text
//! (kappa * eps + b) * sqrt((ln|S| + ln(2/delta)) / 2) + b * sqrt(ln(2/delta) / (2|S_dict|))
//! ```
//!
//! where the dictionary is an `eps`-net of the domain entities under the
//! encoder, the loss lies in `[0, b]` and is `kappa`-Lipschitz. The
//! estimators here are empirical plug-ins computed on finite samples: the
//! covering radius and Lipschitz estimates are lower-bound style statistics
//! of the true suprema, not certified values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dictionary;
use crate::encoder::Embedding;
use crate::error::{Error, Result};
use crate::scorer::{softplus, ScorerModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Lipschitz constant of the loss.
    pub kappa: f64,
    /// Covering radius of the dictionary.
    pub epsilon: f64,
    /// Upper bound of the loss.
    pub b: f64,
    /// Number of domain entities.
    pub s_total: u64,
    /// Number of dictionary entities.
    pub s_dict: u64,
    pub delta: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::invalid(m.to_string()));
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail("delta must be in (0, 1)");
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return fail("kappa must be finite and >= 0");
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return fail("epsilon must be finite and >= 0");
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return fail("b must be finite and > 0");
        }
        if self.s_dict < 1 || self.s_total < 1 {
            return fail("|S| and |S_dict| must be >= 1");
        }
        if self.s_dict > self.s_total {
            return fail("|S_dict| cannot exceed |S|");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound_value: f64,
    /// Covering and union-bound term.
    pub term1: f64,
    /// Dictionary sampling term, vanishing as the dictionary grows.
    pub term2: f64,
    pub inputs: BoundInputs,
}

pub fn generalization_bound(inputs: BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let log_conf = (2.0 / inputs.delta).ln();
    let term1 = (inputs.kappa * inputs.epsilon + inputs.b)
        * (((inputs.s_total as f64).ln() + log_conf) / 2.0).sqrt();
    let term2 = inputs.b * (log_conf / (2.0 * inputs.s_dict as f64)).sqrt();
    Ok(BoundReport {
        bound_value: term1 + term2,
        term1,
        term2,
        inputs,
    })
}

/// Largest distance from a held-out vector to its nearest dictionary
/// vector: the smallest radius at which the dictionary covers the sample.
pub fn epsilon_net_estimate(dict: &[Embedding], heldout: &[Embedding]) -> Result<f64> {
    let Some(first) = dict.first() else {
        return Err(Error::Empty("dictionary embeddings".into()));
    };
    if heldout.is_empty() {
        return Err(Error::Empty("held-out embeddings".into()));
    }
    let dim = first.dim();
    if let Some(bad) = dict.iter().chain(heldout).find(|e| e.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.dim(),
        });
    }
    Ok(heldout
        .par_iter()
        .map(|h| dict.iter().map(|d| d.distance(h)).fold(f64::INFINITY, f64::min))
        .reduce(|| 0.0, f64::max))
}

/// Mean of `-ln p(s)` over dictionary surfaces, with the clamped logit.
pub fn empirical_error(model: &ScorerModel, dict: &Dictionary) -> Result<f64> {
    let losses: Vec<f64> = dict
        .surfaces()
        .map(|s| {
            let r = model.encoder.encode(s)?;
            Ok(softplus(-model.head.forward(&r)?.logit()))
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}
