//! Hashed character n-gram encoders.
//!
//! A span is normalized, wrapped in `<` `>` boundary markers, cut into all
//! character n-grams with `ngram_min <= n <= ngram_max`, and each n-gram is
//! hashed into a row of an embedding table. The encoding is the mean of the
//! rows, so it is linear in the table and its gradient is sparse.

use std::collections::{BTreeMap, HashMap};
use std::ops::Deref;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::normalize;
use crate::error::{Error, Result};
use crate::io;

/// Fixed-dimension real vector produced by an encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn distance(&self, other: &Embedding) -> f64 {
        euclidean(&self.0, &other.0)
    }
}

impl Deref for Embedding {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Table rows touched by one encoding with their pooling weights, sorted by
/// bucket. Weights sum to one.
pub type Trace = Vec<(usize, f64)>;

/// Sparse gradient of the embedding table, keyed by bucket.
pub type TableGrad = BTreeMap<usize, Vec<f64>>;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharNGramEncoder {
    ngram_min: usize,
    ngram_max: usize,
    num_buckets: usize,
    dim: usize,
    hash_seed: u64,
    lowercase: bool,
    /// Row-major `num_buckets x dim`.
    table: Vec<f64>,
}

impl CharNGramEncoder {
    /// Encoder with every table entry drawn from `N(0, init_scale^2)`.
    #[allow(clippy::too_many_arguments)]
    pub fn random(
        ngram_min: usize,
        ngram_max: usize,
        num_buckets: usize,
        dim: usize,
        hash_seed: u64,
        lowercase: bool,
        init_scale: f64,
        init_seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let normal = Normal::new(0.0, init_scale)
            .map_err(|e| Error::invalid(format!("init_scale: {e}")))?;
        let table = (0..num_buckets * dim).map(|_| normal.sample(&mut rng)).collect();
        Self::from_table(ngram_min, ngram_max, num_buckets, dim, hash_seed, lowercase, table)
    }

    pub fn from_table(
        ngram_min: usize,
        ngram_max: usize,
        num_buckets: usize,
        dim: usize,
        hash_seed: u64,
        lowercase: bool,
        table: Vec<f64>,
    ) -> Result<Self> {
        if ngram_min == 0 || ngram_min > ngram_max {
            return Err(Error::invalid("need 1 <= ngram_min <= ngram_max"));
        }
        if num_buckets == 0 || dim == 0 {
            return Err(Error::invalid("num_buckets and dim must be positive"));
        }
        if table.len() != num_buckets * dim {
            return Err(Error::DimensionMismatch {
                expected: num_buckets * dim,
                actual: table.len(),
            });
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding table has non-finite entries"));
        }
        Ok(CharNGramEncoder {
            ngram_min,
            ngram_max,
            num_buckets,
            dim,
            hash_seed,
            lowercase,
            table,
        })
    }

    /// The trainable encoder described by `cfg`, initialized from `cfg.seed`.
    pub fn trainable(cfg: &RunConfig) -> Result<Self> {
        Self::random(
            cfg.ngram_min,
            cfg.ngram_max,
            cfg.num_buckets,
            cfg.dim,
            cfg.hash_seed,
            cfg.lowercase,
            cfg.init_scale,
            cfg.seed,
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_buckets(&self) -> usize {
        self.num_buckets
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn row(&self, bucket: usize) -> &[f64] {
        &self.table[bucket * self.dim..(bucket + 1) * self.dim]
    }

    pub fn row_mut(&mut self, bucket: usize) -> &mut [f64] {
        &mut self.table[bucket * self.dim..(bucket + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.table.chunks_exact(self.dim)
    }

    /// Buckets of all n-grams of the padded, normalized text, with
    /// multiplicity folded into pooling weights.
    pub fn trace(&self, text: &str) -> Result<Trace> {
        let norm = normalize(text, self.lowercase);
        if norm.is_empty() {
            return Err(Error::invalid("cannot encode empty text"));
        }
        let padded: Vec<char> = std::iter::once('<')
            .chain(norm.chars())
            .chain(std::iter::once('>'))
            .collect();
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        let mut total = 0usize;
        let mut buf = String::new();
        let mut push = |gram: &[char], counts: &mut BTreeMap<usize, usize>| {
            buf.clear();
            buf.extend(gram);
            let bucket = (fnv1a(self.hash_seed, buf.as_bytes()) % self.num_buckets as u64) as usize;
            *counts.entry(bucket).or_default() += 1;
        };
        for n in self.ngram_min..=self.ngram_max {
            for gram in padded.windows(n) {
                push(gram, &mut counts);
                total += 1;
            }
        }
        if total == 0 {
            // shorter than the smallest n-gram: the padded string is the only feature
            push(&padded, &mut counts);
            total = 1;
        }
        let total = total as f64;
        Ok(counts
            .into_iter()
            .map(|(b, c)| (b, c as f64 / total))
            .collect())
    }

    pub fn encode_trace(&self, trace: &Trace) -> Embedding {
        let mut out = vec![0.0; self.dim];
        for &(bucket, w) in trace {
            for (o, v) in out.iter_mut().zip(self.row(bucket)) {
                *o += w * v;
            }
        }
        Embedding(out)
    }

    pub fn encode(&self, text: &str) -> Result<Embedding> {
        Ok(self.encode_trace(&self.trace(text)?))
    }

    /// Encoding plus the trace needed to backpropagate into the table.
    pub fn encode_traced(&self, text: &str) -> Result<(Embedding, Trace)> {
        let trace = self.trace(text)?;
        Ok((self.encode_trace(&trace), trace))
    }

    /// Adds `scale * upstream` (a gradient with respect to the encoding)
    /// into the table gradient.
    pub fn backprop(trace: &Trace, upstream: &[f64], scale: f64, grad: &mut TableGrad) {
        for &(bucket, w) in trace {
            let row = grad
                .entry(bucket)
                .or_insert_with(|| vec![0.0; upstream.len()]);
            for (g, u) in row.iter_mut().zip(upstream) {
                *g += scale * w * u;
            }
        }
    }

    /// `table[bucket] -= lr * grad[bucket]` for every touched bucket.
    pub fn apply_sgd(&mut self, grad: &TableGrad, lr: f64) {
        for (&bucket, g) in grad {
            for (p, d) in self.row_mut(bucket).iter_mut().zip(g) {
                *p -= lr * d;
            }
        }
    }
}

#[derive(Debug, Deserialize)]
struct ExternalRecord {
    text: String,
    vector: Vec<f64>,
}

/// The reference encoder used only for negative filtering. It is never
/// handed out mutably, so training cannot change it.
#[derive(Debug, Clone)]
pub struct FrozenEncoder {
    inner: CharNGramEncoder,
    external: Option<HashMap<String, Vec<f64>>>,
    id: String,
}

impl FrozenEncoder {
    /// Randomly initialized n-gram encoder derived from `cfg.frozen_seed`.
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let inner = CharNGramEncoder::random(
            cfg.ngram_min,
            cfg.ngram_max,
            cfg.num_buckets,
            cfg.dim,
            cfg.frozen_seed,
            cfg.lowercase,
            1.0,
            cfg.frozen_seed,
        )?;
        let id = format!(
            "chargram:seed={}:n={}-{}:buckets={}:dim={}",
            cfg.frozen_seed, cfg.ngram_min, cfg.ngram_max, cfg.num_buckets, cfg.dim
        );
        Ok(FrozenEncoder {
            inner,
            external: None,
            id,
        })
    }

    pub fn from_encoder(inner: CharNGramEncoder, id: impl Into<String>) -> Self {
        FrozenEncoder {
            inner,
            external: None,
            id: id.into(),
        }
    }

    /// Replaces n-gram encoding by lookups in a `{"text", "vector"}`
    /// JSON-lines file. Texts are normalized like every other input; a
    /// lookup miss is an error.
    pub fn with_external_file(self, path: &Path) -> Result<Self> {
        let records: Vec<ExternalRecord> = io::read_jsonl(path)?;
        let count = records.len();
        self.with_external(records.into_iter().map(|r| (r.text, r.vector)), &format!(
            "external:{}:{count}",
            path.file_name().and_then(|s| s.to_str()).unwrap_or("embeddings")
        ))
    }

    pub fn with_external<I>(mut self, vectors: I, id: &str) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut map = HashMap::new();
        let mut dim = None;
        for (text, vector) in vectors {
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite vector for {text:?}")));
            }
            match dim {
                None => dim = Some(vector.len()),
                Some(d) if d != vector.len() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        actual: vector.len(),
                    })
                }
                _ => {}
            }
            map.insert(normalize(&text, self.inner.lowercase), vector);
        }
        if map.is_empty() {
            return Err(Error::Empty("external embedding file".into()));
        }
        self.external = Some(map);
        self.id = id.to_string();
        Ok(self)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn encode_frozen(&self, text: &str) -> Result<Embedding> {
        match &self.external {
            None => self.inner.encode(text),
            Some(map) => {
                let key = normalize(text, self.inner.lowercase);
                if key.is_empty() {
                    return Err(Error::invalid("cannot encode empty text"));
                }
                map.get(&key)
                    .map(|v| Embedding(v.clone()))
                    .ok_or(Error::MissingEmbedding(key))
            }
        }
    }
}
