//! Span enumeration, thresholding and greedy nested-term extraction.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;

use crate::data::{normalize, tokenize, Corpus, DocSpans, SpanAnnotation, TokenizedText};
use crate::error::{Error, Result};
use crate::scorer::ScorerModel;

#[derive(Debug, Clone, PartialEq)]
pub struct SpanCandidate {
    pub doc_id: String,
    /// Inclusive first token.
    pub token_begin: usize,
    /// Exclusive last token.
    pub token_end: usize,
    pub start_char: usize,
    pub end_char: usize,
    pub surface: String,
    /// Entity probability; `0.0` until scored.
    pub score: f64,
}

impl SpanCandidate {
    pub fn token_len(&self) -> usize {
        self.token_end - self.token_begin
    }

    fn annotation(&self) -> SpanAnnotation {
        SpanAnnotation {
            doc_id: self.doc_id.clone(),
            start_char: self.start_char,
            end_char: self.end_char,
            surface: self.surface.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractionResult {
    /// Accepted entities ordered by position.
    pub entities: Vec<SpanCandidate>,
    /// Input candidates that did not survive extraction.
    pub suppressed: Vec<SpanCandidate>,
}

fn candidate(doc_id: &str, text: &TokenizedText, begin: usize, end: usize, score: f64) -> SpanCandidate {
    SpanCandidate {
        doc_id: doc_id.to_string(),
        token_begin: begin,
        token_end: end,
        start_char: text.tokens()[begin].start_char,
        end_char: text.tokens()[end - 1].end_char,
        surface: text.span_str(begin, end).to_string(),
        score,
    }
}

/// All spans of `1..=m_s` tokens, ordered by begin then length.
pub fn enumerate_spans(doc_id: &str, text: &TokenizedText, m_s: usize) -> Vec<SpanCandidate> {
    let n = text.len();
    let mut out = Vec::new();
    for begin in 0..n {
        for len in 1..=m_s.min(n - begin) {
            out.push(candidate(doc_id, text, begin, begin + len, 0.0));
        }
    }
    out
}

/// Scores every span and keeps those strictly above `t_p`.
pub fn select_candidates(
    model: &ScorerModel,
    spans: Vec<SpanCandidate>,
    t_p: f64,
) -> Result<Vec<SpanCandidate>> {
    if !(t_p > 0.0 && t_p < 1.0) {
        return Err(Error::invalid(format!("t_p must be in (0, 1), got {t_p}")));
    }
    let scored: Vec<SpanCandidate> = spans
        .into_par_iter()
        .map(|mut s| {
            s.score = model.score_text(&s.surface)?;
            Ok(s)
        })
        .collect::<Result<_>>()?;
    Ok(scored.into_iter().filter(|s| s.score > t_p).collect())
}

/// Token-level view of a document used to test surface occurrences.
struct Validation<'a> {
    text: &'a TokenizedText,
    tokens: Vec<String>,
    masked: Vec<bool>,
}

impl<'a> Validation<'a> {
    fn new(text: &'a TokenizedText, lowercase: bool) -> Self {
        let tokens = (0..text.len())
            .map(|i| normalize(text.token_str(i), lowercase))
            .collect();
        Validation {
            text,
            tokens,
            masked: vec![false; text.len()],
        }
    }

    /// Whether tokens `p..p + len` are unmasked and equal the tokens at
    /// `at..at + len`, including inter-token spacing.
    fn matches(&self, p: usize, at: usize, len: usize) -> bool {
        (0..len).all(|k| {
            !self.masked[p + k]
                && self.tokens[p + k] == self.tokens[at + k]
                && (k == 0 || self.text.space_before(p + k) == self.text.space_before(at + k))
        })
    }

    /// Non-overlapping occurrences, left to right, of the surface that
    /// spans `at..at + len`.
    fn occurrences(&self, at: usize, len: usize) -> Vec<usize> {
        let mut found = Vec::new();
        let mut p = 0;
        while p + len <= self.tokens.len() {
            if self.matches(p, at, len) {
                found.push(p);
                p += len;
            } else {
                p += 1;
            }
        }
        found
    }

    fn remove(&mut self, p: usize, len: usize) {
        self.masked[p..p + len].iter_mut().for_each(|m| *m = true);
    }
}

struct Surface {
    key: String,
    len: usize,
    score: f64,
    /// A position where the surface occurs in the original text.
    at: usize,
}

/// Resolves nested candidates.
///
/// Distinct surfaces are ranked by token length (longest first), then by
/// score, then lexicographically. A working copy of the token sequence
/// starts as the full text; each surface that still occurs there, aligned
/// to tokens, is accepted at every such occurrence and those occurrences are
/// removed so no later (shorter) surface can match across or inside them.
pub fn greedy_extract(
    candidates: &[SpanCandidate],
    text: &TokenizedText,
    lowercase: bool,
) -> Result<ExtractionResult> {
    let Some(first) = candidates.first() else {
        return Ok(ExtractionResult::default());
    };
    let doc_id = first.doc_id.clone();
    if candidates.iter().any(|c| c.doc_id != doc_id) {
        return Err(Error::invalid("greedy_extract expects candidates from one document"));
    }
    let mut surfaces: BTreeMap<String, Surface> = BTreeMap::new();
    for c in candidates {
        if c.token_begin >= c.token_end || c.token_end > text.len() {
            return Err(Error::invalid(format!(
                "candidate tokens {}..{} out of range",
                c.token_begin, c.token_end
            )));
        }
        let key = normalize(text.span_str(c.token_begin, c.token_end), lowercase);
        surfaces
            .entry(key.clone())
            .and_modify(|s| s.score = s.score.max(c.score))
            .or_insert(Surface {
                key,
                len: c.token_len(),
                score: c.score,
                at: c.token_begin,
            });
    }
    let mut ranked: Vec<Surface> = surfaces.into_values().collect();
    ranked.sort_by(|a, b| {
        b.len
            .cmp(&a.len)
            .then_with(|| b.score.total_cmp(&a.score))
            .then_with(|| a.key.cmp(&b.key))
    });

    let mut validation = Validation::new(text, lowercase);
    let mut entities = Vec::new();
    for s in &ranked {
        let found = validation.occurrences(s.at, s.len);
        for &p in &found {
            validation.remove(p, s.len);
            entities.push(candidate(&doc_id, text, p, p + s.len, s.score));
        }
    }
    entities.sort_by(|a, b| match a.token_begin.cmp(&b.token_begin) {
        Ordering::Equal => a.token_end.cmp(&b.token_end),
        o => o,
    });
    let accepted: HashSet<(usize, usize)> =
        entities.iter().map(|e| (e.token_begin, e.token_end)).collect();
    let suppressed = candidates
        .iter()
        .filter(|c| !accepted.contains(&(c.token_begin, c.token_end)))
        .cloned()
        .collect();
    Ok(ExtractionResult {
        entities,
        suppressed,
    })
}

/// Tokenize, enumerate, threshold and extract; annotations sorted by
/// `start_char`.
pub fn predict(
    model: &ScorerModel,
    doc_id: &str,
    text: &str,
    t_p: f64,
    m_s: usize,
) -> Result<Vec<SpanAnnotation>> {
    if m_s == 0 {
        return Err(Error::invalid("m_s must be >= 1"));
    }
    let tokens = tokenize(text);
    let spans = enumerate_spans(doc_id, &tokens, m_s);
    let candidates = select_candidates(model, spans, t_p)?;
    let result = greedy_extract(&candidates, &tokens, model.config.lowercase)?;
    let mut out: Vec<SpanAnnotation> = result.entities.iter().map(SpanCandidate::annotation).collect();
    out.sort_by_key(|a| (a.start_char, a.end_char));
    Ok(out)
}

/// Predictions for every document, in corpus order.
pub fn predict_corpus(model: &ScorerModel, corpus: &Corpus, t_p: f64, m_s: usize) -> Result<Vec<DocSpans>> {
    corpus
        .documents()
        .par_iter()
        .map(|d| {
            let spans = predict(model, &d.doc_id, &d.text, t_p, m_s)?;
            Ok(DocSpans::from_annotations(&d.doc_id, &spans))
        })
        .collect()
}
