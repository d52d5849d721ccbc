//! Dictionaries, corpora, annotations and tokenization.
//!
//! All character offsets in this crate count Unicode scalar values, not
//! bytes, so they agree with the offsets other tooling reads from the
//! JSON-lines files.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

/// Trims, collapses internal whitespace runs to a single space and
/// optionally lowercases.
pub fn normalize(text: &str, lowercase: bool) -> String {
    let mut out = String::with_capacity(text.len());
    for (i, word) in text.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        if lowercase {
            out.extend(word.chars().flat_map(char::to_lowercase));
        } else {
            out.push_str(word);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Entry {
    pub concept_id: String,
    pub surface: String,
}

/// Concept-grouped surface forms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dictionary {
    entries: Vec<Entry>,
    index: BTreeMap<String, Vec<usize>>,
}

impl Dictionary {
    /// Builds a dictionary, dropping exact duplicate `(concept_id, surface)`
    /// pairs and keeping first-seen order. Surfaces are stored as given.
    pub fn from_entries<I, C, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (C, S)>,
        C: Into<String>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        for (concept_id, surface) in entries {
            let entry = Entry {
                concept_id: concept_id.into(),
                surface: surface.into(),
            };
            if entry.concept_id.trim().is_empty() {
                return Err(Error::invalid("empty concept id"));
            }
            if entry.surface.trim().is_empty() {
                return Err(Error::invalid(format!(
                    "empty surface for concept {}",
                    entry.concept_id
                )));
            }
            if seen.insert(entry.clone()) {
                kept.push(entry);
            }
        }
        if kept.is_empty() {
            return Err(Error::Empty("dictionary has no entries".into()));
        }
        let mut index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, e) in kept.iter().enumerate() {
            index.entry(e.concept_id.clone()).or_default().push(i);
        }
        Ok(Dictionary {
            entries: kept,
            index,
        })
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_concepts(&self) -> usize {
        self.index.len()
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.surface.as_str())
    }

    /// Surfaces of one concept, in dictionary order.
    pub fn surfaces_of<'a>(&'a self, concept_id: &str) -> impl Iterator<Item = &'a str> + 'a {
        self.index
            .get(concept_id)
            .into_iter()
            .flatten()
            .map(move |&i| self.entries[i].surface.as_str())
    }

    /// Concepts with at least two surfaces, as lists of surface indices,
    /// ordered by concept id.
    pub fn synonym_groups(&self) -> Vec<&[usize]> {
        self.index
            .values()
            .filter(|v| v.len() >= 2)
            .map(Vec::as_slice)
            .collect()
    }

    /// Writes `concept_id<TAB>surface` lines.
    pub fn to_tsv(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            if e.concept_id.contains(['\t', '\n']) || e.surface.contains(['\t', '\n']) {
                return Err(Error::invalid(format!(
                    "entry {:?}/{:?} cannot be written as TSV",
                    e.concept_id, e.surface
                )));
            }
            out.push_str(&e.concept_id);
            out.push('\t');
            out.push_str(&e.surface);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_tsv()?.as_bytes())
    }

    /// Parses TSV content; `origin` is only used in error messages.
    pub fn parse_tsv(content: &str, origin: &Path, lowercase: bool) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in content.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: line_no,
                    message: format!("expected 2 tab-separated fields, found {}", fields.len()),
                });
            }
            let concept = fields[0].trim();
            let surface = normalize(fields[1], lowercase);
            if concept.is_empty() || surface.is_empty() {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: line_no,
                    message: "empty concept id or surface".into(),
                });
            }
            pairs.push((concept.to_string(), surface));
        }
        if pairs.is_empty() {
            return Err(Error::Empty(format!("dictionary file {}", origin.display())));
        }
        Dictionary::from_entries(pairs)
    }
}

/// Reads a `concept_id<TAB>surface` dictionary file.
pub fn load_dictionary(path: &Path, lowercase: bool) -> Result<Dictionary> {
    let content = fs::read_to_string(path)?;
    Dictionary::parse_tsv(&content, path, lowercase)
}

/// Uniformly samples `ceil(ratio * |entries|)` entries without replacement.
pub fn subsample_dictionary(dict: &Dictionary, ratio: f64, seed: u64) -> Result<Dictionary> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid(format!("ratio must be in (0, 1], got {ratio}")));
    }
    let n = dict.len();
    // absorb float noise such as 0.3 * 10 = 3.0000000000000004
    let k = ((ratio * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    Dictionary::from_entries(picked.into_iter().map(|i| {
        let e = &dict.entries[i];
        (e.concept_id.clone(), e.surface.clone())
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Document>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Result<Self> {
        let mut ids = HashSet::new();
        for d in &documents {
            if !ids.insert(d.doc_id.as_str()) {
                return Err(Error::invalid(format!("duplicate doc_id {:?}", d.doc_id)));
            }
            if d.text.is_empty() {
                return Err(Error::invalid(format!("document {:?} has empty text", d.doc_id)));
            }
        }
        Ok(Corpus { documents })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        io::to_jsonl(&self.documents)
    }
}

/// Reads `{"doc_id", "text"}` JSON lines.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    Corpus::new(io::read_jsonl(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub start_char: usize,
    pub end_char: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    text: String,
    tokens: Vec<Token>,
    byte_spans: Vec<(usize, usize)>,
}

impl TokenizedText {
    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token_str(&self, i: usize) -> &str {
        let (b, e) = self.byte_spans[i];
        &self.text[b..e]
    }

    /// Source substring covering tokens `begin..end`.
    pub fn span_str(&self, begin: usize, end: usize) -> &str {
        debug_assert!(begin < end && end <= self.tokens.len());
        &self.text[self.byte_spans[begin].0..self.byte_spans[end - 1].1]
    }

    /// True when whitespace separates token `i - 1` from token `i`.
    pub fn space_before(&self, i: usize) -> bool {
        i > 0 && self.byte_spans[i - 1].1 < self.byte_spans[i].0
    }
}

/// Splits into maximal alphanumeric runs and single punctuation characters;
/// whitespace separates tokens and is dropped.
pub fn tokenize(text: &str) -> TokenizedText {
    let mut tokens = Vec::new();
    let mut byte_spans = Vec::new();
    let mut run: Option<(usize, usize)> = None; // (char start, byte start)
    let mut char_idx = 0;
    let mut flush = |run: &mut Option<(usize, usize)>, char_end: usize, byte_end: usize| {
        if let Some((cs, bs)) = run.take() {
            tokens.push(Token {
                start_char: cs,
                end_char: char_end,
            });
            byte_spans.push((bs, byte_end));
        }
    };
    for (byte_idx, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if run.is_none() {
                run = Some((char_idx, byte_idx));
            }
        } else {
            flush(&mut run, char_idx, byte_idx);
            if !ch.is_whitespace() {
                run = Some((char_idx, byte_idx));
                flush(&mut run, char_idx + 1, byte_idx + ch.len_utf8());
            }
        }
        char_idx += 1;
    }
    flush(&mut run, char_idx, text.len());
    TokenizedText {
        text: text.to_string(),
        tokens,
        byte_spans,
    }
}

/// A gold or predicted mention, flattened with its document id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpanAnnotation {
    pub doc_id: String,
    pub start_char: usize,
    pub end_char: usize,
    pub surface: String,
}

impl SpanAnnotation {
    /// Checks offsets against `text` and that `surface` is the substring.
    pub fn validate(&self, text: &str) -> Result<()> {
        let len = text.chars().count();
        if !(self.start_char < self.end_char && self.end_char <= len) {
            return Err(Error::invalid(format!(
                "span {}..{} out of range for document {:?} of length {len}",
                self.start_char, self.end_char, self.doc_id
            )));
        }
        let sub: String = text
            .chars()
            .skip(self.start_char)
            .take(self.end_char - self.start_char)
            .collect();
        if sub != self.surface {
            return Err(Error::invalid(format!(
                "span text {:?} does not match document substring {:?}",
                self.surface, sub
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanRecord {
    pub start_char: usize,
    pub end_char: usize,
    pub text: String,
}

/// One JSON-lines annotation record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocSpans {
    pub doc_id: String,
    pub spans: Vec<SpanRecord>,
}

impl DocSpans {
    pub fn from_annotations(doc_id: &str, spans: &[SpanAnnotation]) -> Self {
        DocSpans {
            doc_id: doc_id.to_string(),
            spans: spans
                .iter()
                .map(|s| SpanRecord {
                    start_char: s.start_char,
                    end_char: s.end_char,
                    text: s.surface.clone(),
                })
                .collect(),
        }
    }

    pub fn annotations(&self) -> impl Iterator<Item = SpanAnnotation> + '_ {
        self.spans.iter().map(|s| SpanAnnotation {
            doc_id: self.doc_id.clone(),
            start_char: s.start_char,
            end_char: s.end_char,
            surface: s.text.clone(),
        })
    }
}

pub fn load_annotations(path: &Path) -> Result<Vec<DocSpans>> {
    io::read_jsonl(path)
}

pub fn save_annotations(path: &Path, docs: &[DocSpans]) -> Result<()> {
    io::write_atomic(path, io::to_jsonl(docs)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(s: &str) -> Result<Dictionary> {
        Dictionary::parse_tsv(s, Path::new("dict.tsv"), true)
    }

    fn token_strs(t: &TokenizedText) -> Vec<&str> {
        (0..t.len()).map(|i| t.token_str(i)).collect()
    }

    #[test]
    fn load_two_spellings_one_concept() {
        let d = parse("C1\tleukemia\nC1\tleukaemia\n").unwrap();
        assert_eq!(d.num_concepts(), 1);
        assert_eq!(d.len(), 2);
        assert_eq!(d.synonym_groups().len(), 1);
    }

    #[test]
    fn duplicates_are_dropped() {
        let d = parse("C1\tleukemia\nC1\tleukemia\n").unwrap();
        assert_eq!(d.num_concepts(), 1);
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn normalization_dedups_case_variants() {
        let d = parse("C1\tLeukemia\nC1\t  leukemia \n").unwrap();
        assert_eq!(d.len(), 1);
        let cased = Dictionary::parse_tsv("C1\tLeukemia\nC1\tleukemia\n", Path::new("x"), false)
            .unwrap();
        assert_eq!(cased.len(), 2);
    }

    #[test]
    fn wrong_field_count_reports_line() {
        match parse("C1only\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse("C1\ta\nC2\tb\tc\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(parse(""), Err(Error::Empty(_))));
        assert!(matches!(parse("\n\n"), Err(Error::Empty(_))));
    }

    #[test]
    fn tokenize_examples() {
        let t = tokenize("T-cell leukemia");
        assert_eq!(token_strs(&t), ["T", "-", "cell", "leukemia"]);
        assert!(tokenize("").is_empty());
        let t = tokenize("a  b");
        assert_eq!(token_strs(&t), ["a", "b"]);
        assert_eq!(
            t.tokens(),
            &[
                Token { start_char: 0, end_char: 1 },
                Token { start_char: 3, end_char: 4 }
            ]
        );
        assert!(t.space_before(1));
    }

    #[test]
    fn tokenize_counts_chars_not_bytes() {
        let t = tokenize("é b");
        assert_eq!(t.tokens()[1], Token { start_char: 2, end_char: 3 });
        assert_eq!(t.span_str(0, 2), "é b");
    }

    #[test]
    fn subsample_counts_and_identity() {
        let pairs: Vec<(String, String)> =
            (0..10).map(|i| (format!("C{}", i / 2), format!("s{i}"))).collect();
        let d = Dictionary::from_entries(pairs).unwrap();
        assert_eq!(subsample_dictionary(&d, 1.0, 7).unwrap(), d);
        assert_eq!(subsample_dictionary(&d, 0.5, 7).unwrap().len(), 5);
        assert_eq!(subsample_dictionary(&d, 0.3, 7).unwrap().len(), 3);
        assert_eq!(
            subsample_dictionary(&d, 0.5, 3).unwrap(),
            subsample_dictionary(&d, 0.5, 3).unwrap()
        );
        assert!(subsample_dictionary(&d, 0.0, 1).is_err());
        assert!(subsample_dictionary(&d, 1.5, 1).is_err());
    }

    #[test]
    fn annotation_validation() {
        let ok = SpanAnnotation {
            doc_id: "d".into(),
            start_char: 2,
            end_char: 5,
            surface: "cde".into(),
        };
        assert!(ok.validate("abcdef").is_ok());
        let bad = SpanAnnotation { surface: "xyz".into(), ..ok.clone() };
        assert!(bad.validate("abcdef").is_err());
        let oob = SpanAnnotation { end_char: 9, ..ok };
        assert!(oob.validate("abcdef").is_err());
    }

    #[test]
    fn corpus_rejects_duplicate_ids() {
        let doc = Document { doc_id: "a".into(), text: "x".into() };
        assert!(Corpus::new(vec![doc.clone(), doc]).is_err());
    }

    proptest! {
        #[test]
        fn token_offsets_slice_source(text in "[a-zA-Zé0-9 ,.()\\-\t]{0,40}") {
            let t = tokenize(&text);
            let chars: Vec<char> = text.chars().collect();
            let mut prev_end = 0;
            for (i, tok) in t.tokens().iter().enumerate() {
                prop_assert!(tok.start_char < tok.end_char);
                prop_assert!(tok.start_char >= prev_end);
                prev_end = tok.end_char;
                let sub: String = chars[tok.start_char..tok.end_char].iter().collect();
                prop_assert_eq!(sub.as_str(), t.token_str(i));
                prop_assert!(!sub.chars().any(char::is_whitespace));
            }
        }

        #[test]
        fn tsv_round_trip(pairs in prop::collection::vec(("[A-Z][0-9]{1,2}", "[a-z]{1,6}( [a-z]{1,6})?"), 1..20)) {
            let d = Dictionary::from_entries(pairs).unwrap();
            let back = parse(&d.to_tsv().unwrap()).unwrap();
            prop_assert_eq!(back, d);
        }
    }
}
