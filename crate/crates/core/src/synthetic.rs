//! Seeded synthetic benchmark: pseudo-medical concepts with morphological
//! variant surfaces, a dictionary holding roughly half of the surfaces,
//! and documents that mention every surface kind.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::data::{Corpus, Dictionary, DocSpans, Document, SpanRecord};
use crate::error::Result;
use crate::io;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub concepts: usize,
    pub min_surfaces: usize,
    pub max_surfaces: usize,
    pub documents: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            concepts: 200,
            min_surfaces: 2,
            max_surfaces: 4,
            documents: 500,
            seed: 2023,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Concept {
    pub id: String,
    pub surfaces: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub concepts: Vec<Concept>,
    /// Every surface of every concept.
    pub full: Dictionary,
    /// The surfaces available for training.
    pub dictionary: Dictionary,
    /// Surfaces withheld from `dictionary`.
    pub heldout: Dictionary,
    pub corpus: Corpus,
    pub gold: Vec<DocSpans>,
}

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ph", "th", "ch",
    "br", "cr", "dr", "gl", "pl", "str", "x",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "y", "ae", "ou"];
const CODAS: &[&str] = &["", "", "", "n", "r", "l", "s", "x", "th", "m"];

/// (noun suffix, adjectival form)
const SUFFIXES: &[(&str, &str)] = &[
    ("itis", "itic"),
    ("osis", "otic"),
    ("oma", "omatous"),
    ("emia", "emic"),
    ("opathy", "opathic"),
    ("algia", "algic"),
    ("ectasia", "ectatic"),
    ("plasia", "plastic"),
];
const PREFIXES: &[&str] = &["neuro", "hyper", "poly", "myelo", "cardio", "hepato"];
const DESCRIPTORS: &[&str] = &["syndrome", "disease", "disorder"];
const SPELLINGS: &[(&str, &str)] = &[
    ("ae", "e"),
    ("ph", "f"),
    ("y", "i"),
    ("c", "k"),
    ("ou", "u"),
    ("th", "t"),
    ("x", "ks"),
    ("z", "s"),
    ("e", "ae"),
    ("i", "y"),
];

const FILLER: &[&str] = &[
    "the", "patient", "was", "admitted", "with", "a", "history", "of", "and", "no", "evidence",
    "for", "in", "this", "study", "we", "report", "case", "cases", "who", "presented", "after",
    "treatment", "were", "observed", "among", "all", "subjects", "results", "show", "that", "is",
    "associated", "increased", "risk", "levels", "during", "follow", "up", "clinical", "findings",
    "suggest", "our", "data", "indicate", "significant", "reduction", "between", "groups",
    "previous", "reports", "describe", "family", "members", "diagnosed", "early", "onset",
    "further", "analysis", "revealed", "mild", "severe", "symptoms", "months", "years", "later",
    "two", "three", "several", "patients", "developed", "despite", "therapy", "response", "to",
    "not", "but", "also", "may", "be", "caused", "by", "mutations", "gene", "expression",
    "protein", "cells", "tissue", "samples", "control", "cohort", "age", "onset", "hospital",
    "examination", "showed", "normal", "function", "an", "unusual", "form", "which", "on",
    "these", "observations", "support", "hypothesis", "however", "remains", "unclear", "it",
    "has", "been", "proposed", "as", "common", "cause", "rare", "complication", "following",
    "surgery", "trial", "dose", "weeks", "baseline", "measured", "using", "standard", "methods",
];

fn stem(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(2..=3);
    let mut s = String::new();
    for _ in 0..syllables {
        s.push_str(ONSETS.choose(rng).expect("non-empty"));
        s.push_str(VOWELS.choose(rng).expect("non-empty"));
        s.push_str(CODAS.choose(rng).expect("non-empty"));
    }
    s
}

fn respell(stem: &str, rng: &mut ChaCha8Rng) -> Option<String> {
    let mut options: Vec<&(&str, &str)> = SPELLINGS.iter().filter(|(from, _)| stem.contains(from)).collect();
    options.shuffle(rng);
    options.first().map(|(from, to)| stem.replacen(from, to, 1))
}

fn variants(stem: &str, suffix: (&str, &str), rng: &mut ChaCha8Rng) -> Vec<String> {
    let canonical = format!("{stem}{}", suffix.0);
    let mut out = vec![format!("{stem}{}", suffix.1)];
    if let Some(s) = respell(stem, rng) {
        out.push(format!("{s}{}", suffix.0));
    }
    if stem.len() >= 4 {
        let cut = rng.random_range(2..stem.len() - 1);
        if stem.is_char_boundary(cut) {
            out.push(format!("{}-{}{}", &stem[..cut], &stem[cut..], suffix.0));
        }
    }
    out.push(format!("{}{canonical}", PREFIXES.choose(rng).expect("non-empty")));
    out.push(format!("{canonical} {}", DESCRIPTORS.choose(rng).expect("non-empty")));
    out.retain(|v| v != &canonical);
    out
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut taken: HashSet<String> = FILLER.iter().map(|s| s.to_string()).collect();
    let mut concepts = Vec::with_capacity(cfg.concepts);
    while concepts.len() < cfg.concepts {
        let st = stem(&mut rng);
        let suffix = *SUFFIXES.choose(&mut rng).expect("non-empty");
        let canonical = format!("{st}{}", suffix.0);
        if taken.contains(&canonical) {
            continue;
        }
        let mut vars = variants(&st, suffix, &mut rng);
        vars.retain(|v| !taken.contains(v));
        vars.sort();
        vars.dedup();
        vars.shuffle(&mut rng);
        let want = rng.random_range(cfg.min_surfaces..=cfg.max_surfaces);
        if vars.len() + 1 < want {
            continue;
        }
        let mut surfaces = vec![canonical];
        surfaces.extend(vars.into_iter().take(want - 1));
        taken.extend(surfaces.iter().cloned());
        concepts.push(Concept {
            id: format!("C{:04}", concepts.len() + 1),
            surfaces,
        });
    }

    // hold out half of each concept's surfaces, odd counts decided by a coin
    let mut kept = Vec::new();
    let mut held = Vec::new();
    for c in &concepts {
        let mut order = c.surfaces.clone();
        order.shuffle(&mut rng);
        let n = order.len();
        let mut n_held = n / 2;
        if n % 2 == 1 && n_held + 1 < n && rng.random_bool(0.5) {
            n_held += 1;
        }
        for (i, s) in order.into_iter().enumerate() {
            if i < n_held {
                held.push((c.id.clone(), s));
            } else {
                kept.push((c.id.clone(), s));
            }
        }
    }

    let mut documents = Vec::with_capacity(cfg.documents);
    let mut gold = Vec::with_capacity(cfg.documents);
    for d in 0..cfg.documents {
        let doc_id = format!("doc{:04}", d + 1);
        let mut text = String::new();
        let mut len_chars = 0usize;
        let mut spans = Vec::new();
        let push = |text: &mut String, len: &mut usize, s: &str| {
            text.push_str(s);
            *len += s.chars().count();
        };
        let sentences = rng.random_range(2..=4);
        for si in 0..sentences {
            if si > 0 {
                push(&mut text, &mut len_chars, " ");
            }
            let words = rng.random_range(6..=12);
            let mentions = rng.random_range(0..=2);
            // a mention follows filler word k-1 for each chosen slot k
            let mut slots: Vec<usize> = (1..words).collect();
            slots.shuffle(&mut rng);
            let mut slots: Vec<usize> = slots.into_iter().take(mentions).collect();
            slots.sort_unstable();
            for w in 0..words {
                let word = FILLER.choose(&mut rng).expect("non-empty");
                if w == 0 {
                    push(&mut text, &mut len_chars, &capitalize(word));
                } else {
                    push(&mut text, &mut len_chars, " ");
                    push(&mut text, &mut len_chars, word);
                }
                if slots.contains(&(w + 1)) {
                    let concept = concepts.choose(&mut rng).expect("non-empty");
                    let surface = concept.surfaces.choose(&mut rng).expect("non-empty");
                    let paren = rng.random_bool(0.1);
                    push(&mut text, &mut len_chars, if paren { " (" } else { " " });
                    spans.push(SpanRecord {
                        start_char: len_chars,
                        end_char: len_chars + surface.chars().count(),
                        text: surface.clone(),
                    });
                    push(&mut text, &mut len_chars, surface);
                    if paren {
                        push(&mut text, &mut len_chars, ")");
                    } else if rng.random_bool(0.15) {
                        push(&mut text, &mut len_chars, ",");
                    }
                }
            }
            push(&mut text, &mut len_chars, ".");
        }
        documents.push(Document {
            doc_id: doc_id.clone(),
            text,
        });
        gold.push(DocSpans { doc_id, spans });
    }

    Ok(SyntheticDataset {
        full: Dictionary::from_entries(
            concepts
                .iter()
                .flat_map(|c| c.surfaces.iter().map(move |s| (c.id.clone(), s.clone()))),
        )?,
        dictionary: Dictionary::from_entries(kept)?,
        heldout: Dictionary::from_entries(held)?,
        concepts,
        corpus: Corpus::new(documents)?,
        gold,
    })
}

impl SyntheticDataset {
    /// Writes `dictionary.tsv`, `heldout.tsv`, `full_dictionary.tsv`,
    /// `corpus.jsonl` and `gold.jsonl` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.dictionary.save(&dir.join("dictionary.tsv"))?;
        self.heldout.save(&dir.join("heldout.tsv"))?;
        self.full.save(&dir.join("full_dictionary.tsv"))?;
        io::write_atomic(&dir.join("corpus.jsonl"), self.corpus.to_jsonl()?.as_bytes())?;
        io::write_atomic(&dir.join("gold.jsonl"), io::to_jsonl(&self.gold)?.as_bytes())?;
        Ok(())
    }
}

/// Run configuration sized for the synthetic benchmark.
pub fn synthetic_run_config() -> RunConfig {
    RunConfig {
        dim: 32,
        num_buckets: 1 << 14,
        hidden: vec![32],
        init_scale: 0.1,
        epochs: 300,
        batch_size: 16,
        lr: 2.0,
        gamma_s: 0.1,
        t_d: Some(0.2),
        negative_samples: 60_000,
        negative_max_len: 3,
        t_p: 0.9,
        ..RunConfig::default()
    }
}
