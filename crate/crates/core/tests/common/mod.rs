//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use syngen::data::{tokenize, Dictionary};
use syngen::inference::{enumerate_spans, greedy_extract, SpanCandidate};
use syngen::negatives::{filter_negatives, SampledSpan};
use syngen::scorer::Gradients;
use syngen::training::{classification_loss, npr_loss, sdr_loss, total_loss, TrainBatch, Triple};
use syngen::{CharNGramEncoder, FrozenEncoder, RunConfig, ScorerModel};

pub fn random_word(rng: &mut ChaCha8Rng, max_len: usize) -> String {
    const ALPHABET: &[u8] = b"abcdefghij -";
    let len = rng.random_range(1..=max_len);
    let mut s: String = (0..len)
        .map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())] as char)
        .collect();
    if s.trim().is_empty() {
        s.push('k');
    }
    s
}

// ---------------------------------------------------------------- gradients

/// Parameter vector in a fixed order: head layers (w row-major, then b),
/// then every embedding table row.
fn flatten_params(model: &ScorerModel) -> Vec<f64> {
    let mut out = Vec::new();
    for l in &model.head.layers {
        out.extend(l.w.iter().flatten());
        out.extend(&l.b);
    }
    out.extend(model.encoder.table());
    out
}

fn set_param(model: &mut ScorerModel, mut k: usize, value: f64) {
    for l in &mut model.head.layers {
        let nw = l.w.len() * l.w[0].len();
        if k < nw {
            let cols = l.w[0].len();
            l.w[k / cols][k % cols] = value;
            return;
        }
        k -= nw;
        if k < l.b.len() {
            l.b[k] = value;
            return;
        }
        k -= l.b.len();
    }
    let dim = model.encoder.dim();
    model.encoder.row_mut(k / dim)[k % dim] = value;
}

fn flatten_grads(model: &ScorerModel, g: &Gradients) -> Vec<f64> {
    let mut out = Vec::new();
    for l in &g.head {
        out.extend(l.w.iter().flatten());
        out.extend(&l.b);
    }
    let dim = model.encoder.dim();
    let mut table = vec![0.0; model.encoder.num_buckets() * dim];
    for (bucket, row) in &g.table {
        table[bucket * dim..(bucket + 1) * dim].copy_from_slice(row);
    }
    out.extend(table);
    out
}

/// `|a - n| / max(|a|, |n|)`, zero when both vanish.
pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

fn numeric_gradient(model: &ScorerModel, f: &dyn Fn(&ScorerModel) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let base = flatten_params(model);
    let mut m = model.clone();
    base.iter()
        .enumerate()
        .map(|(k, &x)| {
            set_param(&mut m, k, x + h);
            let up = f(&m);
            set_param(&mut m, k, x - h);
            let down = f(&m);
            set_param(&mut m, k, x);
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub struct GradientCase {
    pub model: ScorerModel,
    pub batch: TrainBatch,
    pub cfg: RunConfig,
}

pub fn random_gradient_case(seed: u64) -> GradientCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = RunConfig {
        dim: 5,
        num_buckets: 41,
        hidden: vec![4],
        seed,
        alpha: rng.random_range(0.0..2.0),
        beta: rng.random_range(0.0..2.0),
        gamma_s: rng.random_range(0.1..3.0),
        ..RunConfig::default()
    };
    let model = ScorerModel::new(&cfg).expect("valid config");
    let n = rng.random_range(1..=4);
    let positives: Vec<String> = (0..n).map(|_| random_word(&mut rng, 12)).collect();
    let negatives: Vec<String> = (0..n).map(|_| random_word(&mut rng, 12)).collect();
    let triples = (0..rng.random_range(1..=3))
        .map(|_| Triple {
            anchor: random_word(&mut rng, 10),
            positive: random_word(&mut rng, 10),
            negative: random_word(&mut rng, 10),
        })
        .collect();
    let normal = Normal::new(0.0, 0.3).expect("valid sigma");
    let noise = (0..n)
        .map(|_| (0..cfg.dim).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    GradientCase {
        model,
        batch: TrainBatch { positives, negatives, triples, noise },
        cfg,
    }
}

/// Relative errors for (classification, synonym distance, noise, total).
pub fn gradient_errors(case: &GradientCase) -> [f64; 4] {
    let GradientCase { model, batch, cfg } = case;
    let check = |analytic: &Gradients, f: &dyn Fn(&ScorerModel) -> f64| {
        relative_error(&flatten_grads(model, analytic), &numeric_gradient(model, f))
    };

    let lc = classification_loss(model, &batch.positives, &batch.negatives).unwrap();
    let e_lc = check(&lc.grads, &|m| {
        classification_loss(m, &batch.positives, &batch.negatives).unwrap().loss
    });

    let t = &batch.triples[0];
    let sdr = sdr_loss(model, &t.anchor, &t.positive, &t.negative, cfg.gamma_s).unwrap();
    let e_sdr = check(&sdr.grads, &|m| {
        sdr_loss(m, &t.anchor, &t.positive, &t.negative, cfg.gamma_s).unwrap().loss
    });

    let npr = npr_loss(model, &batch.positives[0], &batch.noise[0]).unwrap();
    let e_npr = check(&npr.grads, &|m| npr_loss(m, &batch.positives[0], &batch.noise[0]).unwrap().loss);

    let total = total_loss(model, batch, cfg).unwrap();
    let e_total = check(&total.grads, &|m| total_loss(m, batch, cfg).unwrap().total);

    [e_lc, e_sdr, e_npr, e_total]
}

// ------------------------------------------------------- greedy extraction

/// Literal string simulation: rank distinct terms, then repeatedly find
/// ` term ` in a padded working string, left to right without overlap, and
/// overwrite every matched token with a sentinel that no term contains.
pub fn brute_force_extract(tokens: &[String], terms: &[(String, f64)]) -> Vec<(usize, usize)> {
    let mut distinct: Vec<(String, f64)> = Vec::new();
    for (t, s) in terms {
        match distinct.iter_mut().find(|(u, _)| u == t) {
            Some(e) => e.1 = e.1.max(*s),
            None => distinct.push((t.clone(), *s)),
        }
    }
    let words = |t: &str| t.split(' ').count();
    distinct.sort_by(|a, b| {
        words(&b.0)
            .cmp(&words(&a.0))
            .then(b.1.total_cmp(&a.1))
            .then(a.0.cmp(&b.0))
    });

    let mut work = format!(" {} ", tokens.join(" "));
    let mut out = Vec::new();
    for (term, _) in &distinct {
        let needle = format!(" {term} ");
        let mut from = 0;
        while let Some(off) = work[from..].find(&needle) {
            let at = from + off;
            let token_pos = work[..at + 1].matches(' ').count() - 1;
            let n = words(term);
            out.push((token_pos, token_pos + n));
            let sentinel = vec!["\u{1}"; n].join(" ");
            work.replace_range(at + 1..at + needle.len() - 1, &sentinel);
            from = at + 1 + sentinel.len();
        }
    }
    out.sort();
    out
}

pub struct ExtractionCase {
    pub tokens: Vec<String>,
    pub candidates: Vec<SpanCandidate>,
}

pub fn random_extraction_case(seed: u64) -> ExtractionCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const VOCAB: &[&str] = &["a", "b", "c", "d", "e"];
    let n = rng.random_range(1..=30);
    let tokens: Vec<String> = (0..n)
        .map(|_| VOCAB[rng.random_range(0..VOCAB.len())].to_string())
        .collect();
    let text = tokenize(&tokens.join(" "));
    let spans = enumerate_spans("d", &text, 4);
    let mut candidates: Vec<SpanCandidate> = Vec::new();
    let mut terms: Vec<String> = Vec::new();
    for _ in 0..rng.random_range(1..=12) {
        let mut c = spans[rng.random_range(0..spans.len())].clone();
        if !terms.contains(&c.surface) {
            if terms.len() == 6 {
                continue;
            }
            terms.push(c.surface.clone());
        }
        c.score = rng.random_range(0.5..1.0);
        candidates.push(c);
    }
    ExtractionCase { tokens, candidates }
}

pub fn extraction_agrees(case: &ExtractionCase) -> bool {
    let text = tokenize(&case.tokens.join(" "));
    let got: Vec<(usize, usize)> = greedy_extract(&case.candidates, &text, true)
        .unwrap()
        .entities
        .iter()
        .map(|e| (e.token_begin, e.token_end))
        .collect();
    let terms: Vec<(String, f64)> = case.candidates.iter().map(|c| (c.surface.clone(), c.score)).collect();
    got == brute_force_extract(&case.tokens, &terms)
}

// -------------------------------------------------------- negative filter

pub struct FilterCase {
    pub dict: Dictionary,
    pub spans: Vec<SampledSpan>,
    pub frozen: FrozenEncoder,
    pub thresholds: Vec<f64>,
}

pub fn random_filter_case(seed: u64) -> FilterCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dict = Dictionary::from_entries(
        (0..rng.random_range(1..=8)).map(|i| (format!("C{}", i % 3), random_word(&mut rng, 10))),
    )
    .unwrap();
    let mut spans: Vec<SampledSpan> = (0..rng.random_range(5..=40))
        .map(|i| SampledSpan {
            text: random_word(&mut rng, 10),
            doc_id: format!("d{i}"),
            start_char: 0,
            end_char: 1,
        })
        .collect();
    // a verbatim dictionary surface must always be dropped
    spans[0].text = dict.entries()[0].surface.clone();
    let inner = CharNGramEncoder::random(2, 4, 31, 6, seed, true, 1.0, seed ^ 0xabc).unwrap();
    let frozen = FrozenEncoder::from_encoder(inner, format!("case-{seed}"));
    let mut thresholds: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..1.5)).collect();
    thresholds.sort_by(f64::total_cmp);
    FilterCase { dict, spans, frozen, thresholds }
}

/// Keep/drop decisions from explicit pairwise distances.
pub fn filter_oracle(case: &FilterCase, t_d: f64) -> Vec<bool> {
    let dict: Vec<Vec<f64>> = case
        .dict
        .surfaces()
        .map(|s| case.frozen.encode_frozen(s).unwrap().0)
        .collect();
    case.spans
        .iter()
        .map(|s| {
            let v = case.frozen.encode_frozen(&s.text).unwrap().0;
            dict.iter().all(|d| {
                let sq: f64 = d.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
                sq.sqrt() > t_d
            })
        })
        .collect()
}

/// Whether the filter agrees with the oracle at every threshold and the
/// kept sets shrink as the threshold grows.
pub fn filter_agrees(case: &FilterCase) -> bool {
    let mut previous: Option<Vec<String>> = None;
    for &t in &case.thresholds {
        let expected: Vec<String> = case
            .spans
            .iter()
            .zip(filter_oracle(case, t))
            .filter(|(_, keep)| *keep)
            .map(|(s, _)| s.doc_id.clone())
            .collect();
        let got: Vec<String> = match filter_negatives(&case.spans, &case.dict, &case.frozen, t) {
            Ok(pool) => pool.spans.iter().map(|s| s.doc_id.clone()).collect(),
            Err(syngen::Error::EmptyNegativePool { .. }) => Vec::new(),
            Err(e) => panic!("{e}"),
        };
        if got != expected || expected.contains(&case.spans[0].doc_id) {
            return false;
        }
        if let Some(prev) = &previous {
            if !got.iter().all(|id| prev.contains(id)) {
                return false;
            }
        }
        previous = Some(got);
    }
    true
}
