//! Span-level scoring, the exact-match dictionary baseline, the few-shot
//! sweep and the two empirical probes (synonym distance and score
//! sensitivity to embedding noise).

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{normalize, subsample_dictionary, tokenize, Corpus, Dictionary, DocSpans, SpanAnnotation};
use crate::encoder::euclidean;
use crate::error::{Error, Result};
use crate::inference::{enumerate_spans, greedy_extract, predict_corpus};
use crate::scorer::ScorerModel;
use crate::training::train;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl PrfScore {
    /// Rates from counts; a rate with an empty denominator is 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        PrfScore {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

type SpanKey = (String, usize, usize);

fn span_keys(docs: &[DocSpans]) -> BTreeSet<SpanKey> {
    docs.iter()
        .flat_map(|d| {
            d.spans
                .iter()
                .map(move |s| (d.doc_id.clone(), s.start_char, s.end_char))
        })
        .collect()
}

/// Exact `(doc_id, start_char, end_char)` matching with duplicates
/// collapsed. Every predicted document must appear in `gold`.
pub fn evaluate(predictions: &[DocSpans], gold: &[DocSpans]) -> Result<PrfScore> {
    let gold_docs: HashSet<&str> = gold.iter().map(|d| d.doc_id.as_str()).collect();
    if let Some(d) = predictions.iter().find(|d| !gold_docs.contains(d.doc_id.as_str())) {
        return Err(Error::UnknownDocument(d.doc_id.clone()));
    }
    let pred = span_keys(predictions);
    let gold = span_keys(gold);
    let tp = pred.intersection(&gold).count();
    Ok(PrfScore::from_counts(tp, pred.len() - tp, gold.len() - tp))
}

/// Every token-aligned substring equal (after normalization) to a
/// dictionary surface, with nesting resolved greedily.
pub fn exact_match_baseline(
    dict: &Dictionary,
    doc_id: &str,
    text: &str,
    lowercase: bool,
) -> Result<Vec<SpanAnnotation>> {
    let surfaces: HashSet<String> = dict.surfaces().map(|s| normalize(s, lowercase)).collect();
    let max_len = dict.surfaces().map(|s| tokenize(s).len()).max().unwrap_or(0);
    let tokens = tokenize(text);
    if max_len == 0 || tokens.is_empty() {
        return Ok(Vec::new());
    }
    let candidates: Vec<_> = enumerate_spans(doc_id, &tokens, max_len)
        .into_iter()
        .filter(|c| surfaces.contains(&normalize(&c.surface, lowercase)))
        .map(|mut c| {
            c.score = 1.0;
            c
        })
        .collect();
    let result = greedy_extract(&candidates, &tokens, lowercase)?;
    Ok(result
        .entities
        .into_iter()
        .map(|c| SpanAnnotation {
            doc_id: c.doc_id,
            start_char: c.start_char,
            end_char: c.end_char,
            surface: c.surface,
        })
        .collect())
}

pub fn exact_match_corpus(dict: &Dictionary, corpus: &Corpus, lowercase: bool) -> Result<Vec<DocSpans>> {
    corpus
        .documents()
        .iter()
        .map(|d| {
            let spans = exact_match_baseline(dict, &d.doc_id, &d.text, lowercase)?;
            Ok(DocSpans::from_annotations(&d.doc_id, &spans))
        })
        .collect()
}

/// All unordered same-concept surface pairs, as entry indices.
fn synonym_pairs(dict: &Dictionary) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for group in dict.synonym_groups() {
        for (i, &a) in group.iter().enumerate() {
            for &b in &group[i + 1..] {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

/// Mean trainable-encoder distance over `n_pairs` synonym pairs drawn
/// without replacement; with `n_pairs` at least the number of pairs this is
/// the exhaustive mean.
pub fn synonym_distance_probe(model: &ScorerModel, dict: &Dictionary, n_pairs: usize, seed: u64) -> Result<f64> {
    let pairs = synonym_pairs(dict);
    if pairs.is_empty() {
        return Err(Error::invalid("no concept has two or more surfaces"));
    }
    if n_pairs == 0 {
        return Err(Error::invalid("n_pairs must be positive"));
    }
    let chosen: Vec<usize> = if n_pairs >= pairs.len() {
        (0..pairs.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, pairs.len(), n_pairs).into_vec();
        idx.sort_unstable();
        idx
    };
    let entries = dict.entries();
    let dists: Vec<f64> = chosen
        .par_iter()
        .map(|&k| {
            let (a, b) = pairs[k];
            let ra = model.encoder.encode(&entries[a].surface)?;
            let rb = model.encoder.encode(&entries[b].surface)?;
            Ok(ra.distance(&rb))
        })
        .collect::<Result<_>>()?;
    Ok(dists.iter().sum::<f64>() / dists.len() as f64)
}

/// Mean of `|p(r + v) - p(r)| / |v|` over texts and Gaussian draws `v`.
pub fn lipschitz_probe<S: AsRef<str>>(
    model: &ScorerModel,
    texts: &[S],
    n_draws: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<f64> {
    if n_draws == 0 {
        return Err(Error::invalid("n_draws must be >= 1"));
    }
    if texts.is_empty() {
        return Err(Error::Empty("lipschitz probe needs texts".into()));
    }
    let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::invalid(format!("noise_sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = model.encoder.dim();
    let mut total = 0.0;
    for t in texts {
        let r = model.encoder.encode(t.as_ref())?;
        let p0 = model.score_embedding(&r)?;
        for _ in 0..n_draws {
            let v: Vec<f64> = loop {
                let v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
                if v.iter().any(|x| *x != 0.0) {
                    break v;
                }
            };
            let shifted: Vec<f64> = r.iter().zip(&v).map(|(a, b)| a + b).collect();
            let p1 = model.head.forward(&shifted)?.probability();
            total += (p1 - p0).abs() / euclidean(&v, &vec![0.0; dim]);
        }
    }
    Ok(total / (texts.len() * n_draws) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub ratio: f64,
    pub seed: u64,
    pub score: PrfScore,
}

/// Train on `dict`, predict over `corpus` and score against `gold`.
pub fn run_pipeline(dict: &Dictionary, corpus: &Corpus, gold: &[DocSpans], cfg: &RunConfig) -> Result<PrfScore> {
    let run = train(dict, corpus, cfg)?;
    let preds = predict_corpus(&run.model, corpus, cfg.t_p, cfg.m_s)?;
    evaluate(&preds, gold)
}

/// One full train/predict/evaluate run per dictionary ratio, subsampling
/// with `cfg.seed`.
pub fn few_shot_sweep(
    dict: &Dictionary,
    corpus: &Corpus,
    gold: &[DocSpans],
    ratios: &[f64],
    cfg: &RunConfig,
) -> Result<Vec<SweepPoint>> {
    if ratios.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
        return Err(Error::invalid("ratios must lie in (0, 1]"));
    }
    if ratios.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("ratios must be sorted ascending"));
    }
    ratios
        .par_iter()
        .map(|&ratio| {
            let sub = subsample_dictionary(dict, ratio, cfg.seed)?;
            let score = run_pipeline(&sub, corpus, gold, cfg)?;
            Ok(SweepPoint {
                ratio,
                seed: cfg.seed,
                score,
            })
        })
        .collect()
}

/// `ratio,precision,recall,f1,seed` rows, sorted by ratio then seed.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.ratio.total_cmp(&b.ratio).then(a.seed.cmp(&b.seed)));
    let mut out = String::from("ratio,precision,recall,f1,seed\n");
    for p in sorted {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            p.ratio, p.score.precision, p.score.recall, p.score.f1, p.seed
        );
    }
    out
}
