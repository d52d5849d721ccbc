//! Negative span mining: random corpus spans, minus everything the frozen
//! encoder places within `t_d` of a dictionary surface.

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{tokenize, Corpus, Dictionary};
use crate::encoder::{Embedding, FrozenEncoder};
use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledSpan {
    pub text: String,
    pub doc_id: String,
    pub start_char: usize,
    pub end_char: usize,
}

/// Draws `n` spans: uniform document, uniform start token, uniform length in
/// `1..=max_len` tokens, clipped at the end of the document.
pub fn sample_spans<R: Rng>(
    corpus: &Corpus,
    n: usize,
    max_len: usize,
    rng: &mut R,
) -> Result<Vec<SampledSpan>> {
    if n == 0 || max_len == 0 {
        return Err(Error::invalid("n and max_len must be positive"));
    }
    let docs: Vec<_> = corpus
        .documents()
        .iter()
        .map(|d| (d, tokenize(&d.text)))
        .filter(|(_, t)| !t.is_empty())
        .collect();
    if docs.is_empty() {
        return Err(Error::Empty("corpus has no tokens".into()));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (doc, toks) = &docs[rng.random_range(0..docs.len())];
        let begin = rng.random_range(0..toks.len());
        let len = rng.random_range(1..=max_len);
        let end = (begin + len).min(toks.len());
        out.push(SampledSpan {
            text: toks.span_str(begin, end).to_string(),
            doc_id: doc.doc_id.clone(),
            start_char: toks.tokens()[begin].start_char,
            end_char: toks.tokens()[end - 1].end_char,
        });
    }
    Ok(out)
}

/// Frozen encodings of every dictionary surface.
pub fn encode_dictionary(dict: &Dictionary, frozen: &FrozenEncoder) -> Result<Vec<Embedding>> {
    dict.surfaces().map(|s| frozen.encode_frozen(s)).collect()
}

/// Distance from each span to its nearest dictionary surface, by
/// exhaustive scan.
pub fn nearest_distances(
    spans: &[SampledSpan],
    dict_vecs: &[Embedding],
    frozen: &FrozenEncoder,
) -> Result<Vec<f64>> {
    spans
        .par_iter()
        .map(|s| {
            let v = frozen.encode_frozen(&s.text)?;
            Ok(dict_vecs
                .iter()
                .map(|d| d.distance(&v))
                .fold(f64::INFINITY, f64::min))
        })
        .collect()
}

/// Nearest-rank quantile of the distances, kept strictly positive so that
/// exact dictionary matches are always removed.
pub fn calibrate_t_d(distances: &[f64], quantile: f64) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::Empty("no distances to calibrate t_d".into()));
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::invalid("quantile must be in (0, 1)"));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((quantile * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1].max(f64::MIN_POSITIVE))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativePool {
    pub spans: Vec<SampledSpan>,
    pub t_d_used: f64,
    pub frozen_encoder_id: String,
}

#[derive(Serialize, Deserialize)]
struct PoolHeader {
    t_d: f64,
    encoder_id: String,
    count: usize,
}

impl NegativePool {
    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.spans.iter().map(|s| s.text.as_str())
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// Header line followed by one line per span.
    pub fn to_jsonl(&self) -> Result<String> {
        let header = PoolHeader {
            t_d: self.t_d_used,
            encoder_id: self.frozen_encoder_id.clone(),
            count: self.spans.len(),
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        out.push_str(&io::to_jsonl(&self.spans)?);
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_jsonl()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path)?;
        let (first, rest) = content.split_once('\n').unwrap_or((&content, ""));
        let header: PoolHeader = serde_json::from_str(first).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?;
        let spans: Vec<SampledSpan> = io::parse_jsonl(rest, path)?;
        if spans.len() != header.count {
            return Err(Error::invalid(format!(
                "pool header says {} spans, found {}",
                header.count,
                spans.len()
            )));
        }
        Ok(NegativePool {
            spans,
            t_d_used: header.t_d,
            frozen_encoder_id: header.encoder_id,
        })
    }
}

/// Keeps exactly the spans whose nearest frozen-encoder distance to the
/// dictionary exceeds `t_d`.
pub fn filter_negatives(
    spans: &[SampledSpan],
    dict: &Dictionary,
    frozen: &FrozenEncoder,
    t_d: f64,
) -> Result<NegativePool> {
    let dict_vecs = encode_dictionary(dict, frozen)?;
    let dists = nearest_distances(spans, &dict_vecs, frozen)?;
    filter_with_distances(spans, &dists, frozen, t_d)
}

fn filter_with_distances(
    spans: &[SampledSpan],
    dists: &[f64],
    frozen: &FrozenEncoder,
    t_d: f64,
) -> Result<NegativePool> {
    if !(t_d > 0.0) {
        return Err(Error::invalid(format!("t_d must be > 0, got {t_d}")));
    }
    let kept: Vec<SampledSpan> = spans
        .iter()
        .zip(dists)
        .filter(|(_, &d)| d > t_d)
        .map(|(s, _)| s.clone())
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyNegativePool { t_d });
    }
    Ok(NegativePool {
        spans: kept,
        t_d_used: t_d,
        frozen_encoder_id: frozen.id().to_string(),
    })
}

/// Samples `cfg.negative_samples` spans and filters them with `cfg.t_d`, or
/// with a calibrated threshold when `cfg.t_d` is unset.
pub fn build_pool<R: Rng>(
    corpus: &Corpus,
    dict: &Dictionary,
    frozen: &FrozenEncoder,
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<NegativePool> {
    let spans = sample_spans(corpus, cfg.negative_samples, cfg.negative_max_len, rng)?;
    let dict_vecs = encode_dictionary(dict, frozen)?;
    let dists = nearest_distances(&spans, &dict_vecs, frozen)?;
    let t_d = match cfg.t_d {
        Some(t) => t,
        None => calibrate_t_d(&dists, cfg.t_d_quantile)?,
    };
    let pool = filter_with_distances(&spans, &dists, frozen, t_d)?;
    log::info!(
        "negative pool: kept {}/{} spans at t_d={t_d:.4}",
        pool.len(),
        spans.len()
    );
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Document;
    use crate::encoder::CharNGramEncoder;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frozen() -> FrozenEncoder {
        FrozenEncoder::from_encoder(
            CharNGramEncoder::random(3, 5, 1 << 10, 8, 3, true, 1.0, 3).unwrap(),
            "test",
        )
    }

    fn corpus(texts: &[&str]) -> Corpus {
        Corpus::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Document { doc_id: format!("d{i}"), text: t.to_string() })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_token_document_yields_that_token() {
        let c = corpus(&["leukemia"]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spans = sample_spans(&c, 100, 4, &mut rng).unwrap();
        assert_eq!(spans.len(), 100);
        assert!(spans.iter().all(|s| s.text == "leukemia" && s.start_char == 0 && s.end_char == 8));
    }

    #[test]
    fn sampling_is_seeded() {
        let c = corpus(&["the patient had a fever", "no signs of T-cell leukemia"]);
        let a = sample_spans(&c, 50, 3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = sample_spans(&c, 50, 3, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        for s in &a {
            let doc = c.documents().iter().find(|d| d.doc_id == s.doc_id).unwrap();
            let sub: String = doc.text.chars().skip(s.start_char).take(s.end_char - s.start_char).collect();
            assert_eq!(sub, s.text);
        }
    }

    #[test]
    fn tokenless_corpus_is_an_error() {
        let c = corpus(&["   "]);
        assert!(sample_spans(&c, 3, 2, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn exact_dictionary_span_removed() {
        let dict = Dictionary::from_entries([("C1", "leukemia")]).unwrap();
        let spans = vec![
            SampledSpan { text: "Leukemia".into(), doc_id: "d".into(), start_char: 0, end_char: 8 },
            SampledSpan { text: "aspirin".into(), doc_id: "d".into(), start_char: 9, end_char: 16 },
        ];
        let pool = filter_negatives(&spans, &dict, &frozen(), 1e-9).unwrap();
        assert_eq!(pool.texts().collect::<Vec<_>>(), ["aspirin"]);
        assert_eq!(pool.frozen_encoder_id, "test");
    }

    #[test]
    fn everything_filtered_is_an_error() {
        let dict = Dictionary::from_entries([("C1", "leukemia")]).unwrap();
        let spans = vec![SampledSpan {
            text: "leukemia".into(),
            doc_id: "d".into(),
            start_char: 0,
            end_char: 8,
        }];
        assert!(matches!(
            filter_negatives(&spans, &dict, &frozen(), 0.5),
            Err(Error::EmptyNegativePool { .. })
        ));
    }

    #[test]
    fn calibration_picks_nearest_rank() {
        let d: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(calibrate_t_d(&d, 0.1).unwrap(), 1.0);
        assert_eq!(calibrate_t_d(&d, 0.25).unwrap(), 3.0);
        assert!(calibrate_t_d(&[0.0, 0.0, 5.0], 0.5).unwrap() > 0.0);
    }

    #[test]
    fn pool_file_round_trip() {
        let pool = NegativePool {
            spans: vec![SampledSpan { text: "a b".into(), doc_id: "d1".into(), start_char: 0, end_char: 3 }],
            t_d_used: 0.25,
            frozen_encoder_id: "enc".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pool.jsonl");
        pool.save(&p).unwrap();
        assert_eq!(NegativePool::load(&p).unwrap(), pool);
    }
}
