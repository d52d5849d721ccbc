//! Training objective and loop.
//!
//! The objective is the paired binary cross-entropy over dictionary
//! surfaces and mined negatives, plus `alpha` times the mean triplet synonym
//! distance penalty and `beta` times the mean noise perturbation penalty.
//! Every term comes with an analytic gradient over the encoder table and the
//! head; the loop is plain SGD.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{Corpus, Dictionary};
use crate::encoder::{CharNGramEncoder, FrozenEncoder};
use crate::error::{Error, Result};
use crate::negatives::{build_pool, NegativePool};
use crate::scorer::{softplus, Gradients, ScorerModel};

/// Loss value with its gradient.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: Gradients,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub anchor: String,
    pub positive: String,
    pub negative: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
    /// Anchor and positive share a concept id.
    pub triples: Vec<Triple>,
    /// One perturbation per positive, held fixed for the step.
    pub noise: Vec<Vec<f64>>,
}

/// Components of the combined objective.
#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub total: f64,
    pub classification: f64,
    pub sdr: f64,
    pub npr: f64,
    pub grads: Gradients,
}

/// Mean over index-paired (positive, negative) of
/// `-[ln p(pos) + ln(1 - p(neg))] / 2`.
pub fn classification_loss<S: AsRef<str> + Sync>(
    model: &ScorerModel,
    positives: &[S],
    negatives: &[S],
) -> Result<LossGrad> {
    if positives.is_empty() {
        return Err(Error::Empty("classification loss needs at least one pair".into()));
    }
    if positives.len() != negatives.len() {
        return Err(Error::invalid(format!(
            "{} positives but {} negatives",
            positives.len(),
            negatives.len()
        )));
    }
    let n = positives.len() as f64;
    let parts: Vec<LossGrad> = positives
        .par_iter()
        .zip(negatives.par_iter())
        .map(|(pos, neg)| {
            let mut grads = model.zero_grad();
            let mut loss = 0.0;
            for (text, positive) in [(pos.as_ref(), true), (neg.as_ref(), false)] {
                let (_, pass, trace) = model.forward_text(text)?;
                let z = pass.logit();
                let p = pass.probability();
                let (l, dz) = if positive {
                    (softplus(-z), -(1.0 - p))
                } else {
                    (softplus(z), p)
                };
                loss += l / (2.0 * n);
                let dr = model.head.backward(&pass, dz / (2.0 * n), 1.0, &mut grads.head);
                CharNGramEncoder::backprop(&trace, &dr, 1.0, &mut grads.table);
            }
            Ok(LossGrad { loss, grads })
        })
        .collect::<Result<_>>()?;
    Ok(sum_in_order(model, parts))
}

/// Triplet margin penalty `max(|ra - rp| - |ra - rn| + gamma_s, 0)` on
/// trainable-encoder embeddings.
pub fn sdr_loss(
    model: &ScorerModel,
    anchor: &str,
    positive: &str,
    negative: &str,
    gamma_s: f64,
) -> Result<LossGrad> {
    let enc = &model.encoder;
    let (ra, ta) = enc.encode_traced(anchor)?;
    let (rp, tp) = enc.encode_traced(positive)?;
    let (rn, tn) = enc.encode_traced(negative)?;
    let d_ap = ra.distance(&rp);
    let d_an = ra.distance(&rn);
    let mut grads = model.zero_grad();
    let loss = (d_ap - d_an + gamma_s).max(0.0);
    if loss > 0.0 {
        let unit = |x: &[f64], y: &[f64], d: f64| -> Vec<f64> {
            if d > 0.0 {
                x.iter().zip(y).map(|(a, b)| (a - b) / d).collect()
            } else {
                vec![0.0; x.len()]
            }
        };
        let u_ap = unit(&ra, &rp, d_ap);
        let u_an = unit(&ra, &rn, d_an);
        let g_a: Vec<f64> = u_ap.iter().zip(&u_an).map(|(p, n)| p - n).collect();
        CharNGramEncoder::backprop(&ta, &g_a, 1.0, &mut grads.table);
        CharNGramEncoder::backprop(&tp, &u_ap, -1.0, &mut grads.table);
        CharNGramEncoder::backprop(&tn, &u_an, 1.0, &mut grads.table);
    }
    Ok(LossGrad { loss, grads })
}

/// `|p(r + v) - p(r)|` with `r = E(entity)` and `v` treated as a constant.
pub fn npr_loss(model: &ScorerModel, entity: &str, noise: &[f64]) -> Result<LossGrad> {
    let (r, pass0, trace) = model.forward_text(entity)?;
    if noise.len() != r.dim() {
        return Err(Error::DimensionMismatch {
            expected: r.dim(),
            actual: noise.len(),
        });
    }
    let shifted: Vec<f64> = r.iter().zip(noise).map(|(a, b)| a + b).collect();
    let pass1 = model.head.forward(&shifted)?;
    let (p0, p1) = (pass0.probability(), pass1.probability());
    let diff = p1 - p0;
    let mut grads = model.zero_grad();
    if diff != 0.0 {
        let sign = diff.signum();
        let dr1 = model
            .head
            .backward(&pass1, sign * p1 * (1.0 - p1), 1.0, &mut grads.head);
        let dr0 = model
            .head
            .backward(&pass0, -sign * p0 * (1.0 - p0), 1.0, &mut grads.head);
        let dr: Vec<f64> = dr1.iter().zip(&dr0).map(|(a, b)| a + b).collect();
        CharNGramEncoder::backprop(&trace, &dr, 1.0, &mut grads.table);
    }
    Ok(LossGrad {
        loss: diff.abs(),
        grads,
    })
}

fn sum_in_order(model: &ScorerModel, parts: Vec<LossGrad>) -> LossGrad {
    let mut grads = model.zero_grad();
    let mut loss = 0.0;
    for p in parts {
        loss += p.loss;
        grads.add_scaled(&p.grads, 1.0);
    }
    LossGrad { loss, grads }
}

fn mean_of(model: &ScorerModel, parts: Vec<LossGrad>) -> LossGrad {
    let n = parts.len();
    let mut out = sum_in_order(model, parts);
    if n > 0 {
        out.loss /= n as f64;
        out.grads.scale(1.0 / n as f64);
    }
    out
}

/// `L_c + alpha * mean(R_s) + beta * mean(R_n)`.
pub fn total_loss(model: &ScorerModel, batch: &TrainBatch, cfg: &RunConfig) -> Result<TotalLoss> {
    if batch.noise.len() != batch.positives.len() {
        return Err(Error::invalid("need one noise vector per positive"));
    }
    let lc = classification_loss(model, &batch.positives, &batch.negatives)?;
    let sdr_parts: Vec<LossGrad> = batch
        .triples
        .par_iter()
        .map(|t| sdr_loss(model, &t.anchor, &t.positive, &t.negative, cfg.gamma_s))
        .collect::<Result<_>>()?;
    let npr_parts: Vec<LossGrad> = batch
        .positives
        .par_iter()
        .zip(batch.noise.par_iter())
        .map(|(s, v)| npr_loss(model, s, v))
        .collect::<Result<_>>()?;
    let sdr = mean_of(model, sdr_parts);
    let npr = mean_of(model, npr_parts);

    let mut grads = lc.grads;
    if cfg.alpha > 0.0 {
        grads.add_scaled(&sdr.grads, cfg.alpha);
    }
    if cfg.beta > 0.0 {
        grads.add_scaled(&npr.grads, cfg.beta);
    }
    Ok(TotalLoss {
        total: lc.loss + cfg.alpha * sdr.loss + cfg.beta * npr.loss,
        classification: lc.loss,
        sdr: sdr.loss,
        npr: npr.loss,
        grads,
    })
}

fn fill_batch<R: Rng>(
    dict: &Dictionary,
    pool: &NegativePool,
    positives: Vec<String>,
    noise_sigma: f64,
    dim: usize,
    rng: &mut R,
) -> Result<TrainBatch> {
    if pool.is_empty() {
        return Err(Error::Empty("negative pool".into()));
    }
    let n = positives.len();
    let draw_negative = |rng: &mut R| pool.spans[rng.random_range(0..pool.len())].text.clone();
    let negatives: Vec<String> = (0..n).map(|_| draw_negative(rng)).collect();

    let groups = dict.synonym_groups();
    let mut triples = Vec::new();
    if !groups.is_empty() {
        for _ in 0..n {
            let group = groups[rng.random_range(0..groups.len())];
            let picked = rand::seq::index::sample(rng, group.len(), 2);
            let surface = |k: usize| dict.entries()[group[picked.index(k)]].surface.clone();
            triples.push(Triple {
                anchor: surface(0),
                positive: surface(1),
                negative: draw_negative(rng),
            });
        }
    }
    let normal = Normal::new(0.0, noise_sigma)
        .map_err(|e| Error::invalid(format!("noise_sigma: {e}")))?;
    let noise = (0..n)
        .map(|_| (0..dim).map(|_| normal.sample(rng)).collect())
        .collect();
    Ok(TrainBatch {
        positives,
        negatives,
        triples,
        noise,
    })
}

/// Positives uniform over dictionary entries, negatives uniform over the
/// pool, triples uniform over concepts with two or more surfaces.
pub fn sample_batch<R: Rng>(
    dict: &Dictionary,
    pool: &NegativePool,
    batch_size: usize,
    noise_sigma: f64,
    dim: usize,
    rng: &mut R,
) -> Result<TrainBatch> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let positives = (0..batch_size)
        .map(|_| dict.entries()[rng.random_range(0..dict.len())].surface.clone())
        .collect();
    fill_batch(dict, pool, positives, noise_sigma, dim, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub total: f64,
    pub classification: f64,
    pub sdr: f64,
    pub npr: f64,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: ScorerModel,
    pub pool: NegativePool,
    pub log: Vec<EpochStats>,
}

const MINING_STREAM: u64 = 0x6e65_6761_7469_7665;
const TRAIN_STREAM: u64 = 0x7472_6169_6e69_6e67;

/// Mines negatives with the default frozen encoder, then trains.
pub fn train(dict: &Dictionary, corpus: &Corpus, cfg: &RunConfig) -> Result<TrainRun> {
    let frozen = FrozenEncoder::from_config(cfg)?;
    train_with_frozen(dict, corpus, cfg, &frozen)
}

pub fn train_with_frozen(
    dict: &Dictionary,
    corpus: &Corpus,
    cfg: &RunConfig,
    frozen: &FrozenEncoder,
) -> Result<TrainRun> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ MINING_STREAM);
    let pool = build_pool(corpus, dict, frozen, cfg, &mut rng)?;
    let (model, log) = train_on_pool(dict, &pool, cfg)?;
    Ok(TrainRun { model, pool, log })
}

/// SGD over `epochs` passes; each pass visits every dictionary entry once
/// as a positive, in shuffled order.
pub fn train_on_pool(
    dict: &Dictionary,
    pool: &NegativePool,
    cfg: &RunConfig,
) -> Result<(ScorerModel, Vec<EpochStats>)> {
    cfg.validate()?;
    let mut model = ScorerModel::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ TRAIN_STREAM);
    if dict.synonym_groups().is_empty() && cfg.alpha > 0.0 {
        log::warn!("no concept has two surfaces; synonym distance term is skipped");
    }
    let mut order: Vec<usize> = (0..dict.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut stats = EpochStats {
            epoch,
            steps: 0,
            total: 0.0,
            classification: 0.0,
            sdr: 0.0,
            npr: 0.0,
        };
        for chunk in order.chunks(cfg.batch_size) {
            let positives = chunk
                .iter()
                .map(|&i| dict.entries()[i].surface.clone())
                .collect();
            let batch = fill_batch(dict, pool, positives, cfg.noise_sigma, cfg.dim, &mut rng)?;
            let loss = total_loss(&model, &batch, cfg)?;
            if !loss.total.is_finite() || !loss.grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    classification: loss.classification,
                    sdr: loss.sdr,
                    npr: loss.npr,
                });
            }
            model.apply_sgd(&loss.grads, cfg.lr);
            stats.steps += 1;
            stats.total += loss.total;
            stats.classification += loss.classification;
            stats.sdr += loss.sdr;
            stats.npr += loss.npr;
            step += 1;
        }
        let k = stats.steps.max(1) as f64;
        stats.total /= k;
        stats.classification /= k;
        stats.sdr /= k;
        stats.npr /= k;
        log::info!(
            "epoch {epoch}: loss {:.5} (lc {:.5}, sdr {:.5}, npr {:.5})",
            stats.total,
            stats.classification,
            stats.sdr,
            stats.npr
        );
        log.push(stats);
    }
    Ok((model, log))
}
