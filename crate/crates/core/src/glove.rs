//! GloVe word embeddings.
//!
//! Builds a distance-weighted, symmetric-window co-occurrence matrix over
//! per-news documents and fits
//!
//! ```text
//! J = Σ_{(i,j): X_ij > 0} f(X_ij) (w_iᵀ w̃_j + b_i + b̃_j − ln X_ij)²
//! f(x) = (x / x_max)^α  if x < x_max, else 1
//! ```
//!
//! with per-coordinate AdaGrad over shuffled nonzero entries. Only stored
//! entries enter the sum, so `ln X_ij` is always defined. The final vector for
//! word `i` is `w_i + w̃_i`.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BINARY_MAGIC: &[u8; 4] = b"MRGV";

/// Documents per co-occurrence shard. Fixed so the merged matrix does not
/// depend on the thread count.
const SHARD_DOCS: usize = 256;

#[derive(Debug, Error)]
pub enum GloveError {
    #[error("no token reaches min_count {0}")]
    EmptyVocabulary(u64),
    #[error("row {0} of the co-occurrence matrix is empty")]
    EmptyRow(usize),
    #[error("non-finite parameter in {0}")]
    NonfiniteParameter(&'static str),
    #[error("cost diverged at epoch {epoch}: {cost}")]
    DivergedCost { epoch: usize, cost: f64 },
    #[error("co-occurrence matrix is empty")]
    EmptyMatrix,
    #[error("invalid glove config: {0}")]
    InvalidConfig(String),
    #[error("parameter shapes do not match vocabulary size {vocab} and dim {dim}")]
    ShapeMismatch { vocab: usize, dim: usize },
    #[error("malformed embedding file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GloveConfig {
    pub dim: usize,
    pub window: usize,
    pub x_max: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub min_count: u64,
    pub seed: u64,
}

impl Default for GloveConfig {
    fn default() -> Self {
        GloveConfig {
            dim: 50,
            window: 10,
            x_max: 100.0,
            alpha: 0.75,
            learning_rate: 0.05,
            epochs: 25,
            min_count: 1,
            seed: 0,
        }
    }
}

impl GloveConfig {
    pub fn validate(&self) -> Result<(), GloveError> {
        let bad = |m: &str| Err(GloveError::InvalidConfig(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.window == 0 {
            return bad("window must be >= 1");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(self.x_max > 0.0 && self.x_max.is_finite()) {
            return bad("x_max must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }

    /// Weighting function `f`.
    pub fn weight(&self, x: f64) -> f64 {
        if x < self.x_max {
            (x / self.x_max).powf(self.alpha)
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_parts(tokens: Vec<String>, counts: Vec<u64>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocabulary { tokens, counts, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).map(|&i| i as usize)
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn count(&self, i: usize) -> u64 {
        self.counts[i]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            writeln!(w, "{t}\t{c}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: Read>(r: R) -> Result<Self, GloveError> {
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for line in BufReader::new(r).lines() {
            let line = line?;
            let (t, c) = line.split_once('\t').ok_or_else(|| GloveError::Format(format!("vocab line `{line}`")))?;
            tokens.push(t.to_string());
            counts.push(c.parse().map_err(|_| GloveError::Format(format!("vocab count `{c}`")))?);
        }
        Ok(Self::from_parts(tokens, counts))
    }
}

/// Tokens with frequency >= `min_count`, most frequent first, ties broken
/// lexicographically.
pub fn build_vocab<S: AsRef<str>>(docs: &[Vec<S>], min_count: u64) -> Result<Vocabulary, GloveError> {
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for doc in docs {
        for t in doc {
            *freq.entry(t.as_ref()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, u64)> = freq.into_iter().filter(|&(_, c)| c >= min_count).collect();
    if kept.is_empty() {
        return Err(GloveError::EmptyVocabulary(min_count));
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let (tokens, counts) = kept.into_iter().map(|(t, c)| (t.to_string(), c)).unzip();
    Ok(Vocabulary::from_parts(tokens, counts))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cooccurrence {
    pub row: u32,
    pub col: u32,
    pub value: f64,
}

/// Sparse co-occurrence counts, sorted by (row, col). Only nonzero entries
/// are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceMatrix {
    vocab_size: usize,
    entries: Vec<Cooccurrence>,
}

impl CooccurrenceMatrix {
    pub fn from_entries(vocab_size: usize, mut entries: Vec<Cooccurrence>) -> Self {
        entries.retain(|e| e.value > 0.0);
        entries.sort_by_key(|e| (e.row, e.col));
        CooccurrenceMatrix { vocab_size, entries }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn entries(&self) -> &[Cooccurrence] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn row(&self, i: usize) -> &[Cooccurrence] {
        let i = i as u32;
        let lo = self.entries.partition_point(|e| e.row < i);
        let hi = self.entries.partition_point(|e| e.row <= i);
        &self.entries[lo..hi]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let key = (i as u32, j as u32);
        self.entries.binary_search_by_key(&key, |e| (e.row, e.col)).map(|k| self.entries[k].value).unwrap_or(0.0)
    }
}

fn count_shard<S: AsRef<str>>(docs: &[Vec<S>], vocab: &Vocabulary, window: usize) -> HashMap<(u32, u32), f64> {
    let mut counts = HashMap::new();
    for doc in docs {
        let ids: Vec<Option<u32>> = doc.iter().map(|t| vocab.index_of(t.as_ref()).map(|i| i as u32)).collect();
        for (p, &a) in ids.iter().enumerate() {
            let Some(a) = a else { continue };
            for k in 1..=window {
                let Some(&Some(b)) = ids.get(p + k) else { continue };
                let w = 1.0 / k as f64;
                *counts.entry((a, b)).or_insert(0.0) += w;
                if a != b {
                    *counts.entry((b, a)).or_insert(0.0) += w;
                }
            }
        }
    }
    counts
}

/// Distance-weighted symmetric counts: a pair of in-vocabulary tokens `k <=
/// window` positions apart in the same document adds `1/k` to `X_ij` and
/// `X_ji` (once when `i == j`). Distances are measured in the original token
/// positions, so out-of-vocabulary tokens still occupy a slot.
pub fn build_cooccurrence<S: AsRef<str> + Sync>(
    docs: &[Vec<S>],
    vocab: &Vocabulary,
    window: usize,
    parallel: bool,
) -> CooccurrenceMatrix {
    assert!(window >= 1, "window must be >= 1");
    let shards: Vec<HashMap<(u32, u32), f64>> = if parallel {
        docs.par_chunks(SHARD_DOCS).map(|s| count_shard(s, vocab, window)).collect()
    } else {
        docs.chunks(SHARD_DOCS).map(|s| count_shard(s, vocab, window)).collect()
    };
    // Entries are summed shard by shard in shard order; shard boundaries are
    // fixed, so the result is bitwise independent of `parallel`.
    let mut merged: HashMap<(u32, u32), f64> = HashMap::new();
    for shard in shards {
        let mut keys: Vec<_> = shard.into_iter().collect();
        keys.sort_by_key(|&(k, _)| k);
        for (k, v) in keys {
            *merged.entry(k).or_insert(0.0) += v;
        }
    }
    let entries = merged.into_iter().map(|((row, col), value)| Cooccurrence { row, col, value }).collect();
    CooccurrenceMatrix::from_entries(vocab.len(), entries)
}

/// `P(j|i) = X_ij / Σ_k X_ik` for the nonzero entries of row `i`.
pub fn cooccurrence_probabilities(x: &CooccurrenceMatrix, i: usize) -> Result<Vec<(usize, f64)>, GloveError> {
    let row = x.row(i);
    let total: f64 = row.iter().map(|e| e.value).sum();
    if row.is_empty() || total <= 0.0 {
        return Err(GloveError::EmptyRow(i));
    }
    Ok(row.iter().map(|e| (e.col as usize, e.value / total)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub vocab_size: usize,
    pub dim: usize,
    /// Word vectors `w`, row-major V×d.
    pub w: Vec<f64>,
    /// Context vectors `w̃`, row-major V×d.
    pub w_ctx: Vec<f64>,
    pub b: Vec<f64>,
    pub b_ctx: Vec<f64>,
    pub grad_sq_w: Vec<f64>,
    pub grad_sq_w_ctx: Vec<f64>,
    pub grad_sq_b: Vec<f64>,
    pub grad_sq_b_ctx: Vec<f64>,
}

pub const ADAGRAD_INITIAL_ACCUMULATOR: f64 = 1.0;

impl EmbeddingTable {
    /// Uniform initialization in `[-0.5/d, 0.5/d)`, drawn in the order
    /// `w`, `w̃`, `b`, `b̃`.
    pub fn init(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 0.5 / dim as f64;
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-bound..bound)).collect() };
        let w = draw(vocab_size * dim);
        let w_ctx = draw(vocab_size * dim);
        let b = draw(vocab_size);
        let b_ctx = draw(vocab_size);
        EmbeddingTable {
            vocab_size,
            dim,
            w,
            w_ctx,
            b,
            b_ctx,
            grad_sq_w: vec![ADAGRAD_INITIAL_ACCUMULATOR; vocab_size * dim],
            grad_sq_w_ctx: vec![ADAGRAD_INITIAL_ACCUMULATOR; vocab_size * dim],
            grad_sq_b: vec![ADAGRAD_INITIAL_ACCUMULATOR; vocab_size],
            grad_sq_b_ctx: vec![ADAGRAD_INITIAL_ACCUMULATOR; vocab_size],
        }
    }

    pub fn word(&self, i: usize) -> &[f64] {
        &self.w[i * self.dim..(i + 1) * self.dim]
    }

    pub fn context(&self, i: usize) -> &[f64] {
        &self.w_ctx[i * self.dim..(i + 1) * self.dim]
    }

    /// `w_i + w̃_i`.
    pub fn word_vector(&self, i: usize) -> Vec<f64> {
        self.word(i).iter().zip(self.context(i)).map(|(a, b)| a + b).collect()
    }

    fn check_finite(&self) -> Result<(), GloveError> {
        let fields: [(&'static str, &[f64]); 4] =
            [("w", &self.w), ("w_ctx", &self.w_ctx), ("b", &self.b), ("b_ctx", &self.b_ctx)];
        for (name, v) in fields {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(GloveError::NonfiniteParameter(name));
            }
        }
        Ok(())
    }

    fn check_shape(&self, x: &CooccurrenceMatrix) -> Result<(), GloveError> {
        let (v, d) = (self.vocab_size, self.dim);
        if x.vocab_size() > v
            || self.w.len() != v * d
            || self.w_ctx.len() != v * d
            || self.b.len() != v
            || self.b_ctx.len() != v
        {
            return Err(GloveError::ShapeMismatch { vocab: v, dim: d });
        }
        Ok(())
    }
}

/// Residual `w_iᵀ w̃_j + b_i + b̃_j − ln X_ij` for one stored entry.
fn residual(t: &EmbeddingTable, e: &Cooccurrence) -> f64 {
    let (i, j) = (e.row as usize, e.col as usize);
    let dot: f64 = t.word(i).iter().zip(t.context(j)).map(|(a, b)| a * b).sum();
    dot + t.b[i] + t.b_ctx[j] - e.value.ln()
}

pub fn glove_cost(t: &EmbeddingTable, x: &CooccurrenceMatrix, config: &GloveConfig) -> Result<f64, GloveError> {
    t.check_shape(x)?;
    t.check_finite()?;
    Ok(x.entries()
        .iter()
        .map(|e| {
            let r = residual(t, e);
            config.weight(e.value) * r * r
        })
        .sum())
}

/// Gradient of [`glove_cost`] with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GloveGradient {
    pub w: Vec<f64>,
    pub w_ctx: Vec<f64>,
    pub b: Vec<f64>,
    pub b_ctx: Vec<f64>,
}

pub fn glove_cost_and_gradient(
    t: &EmbeddingTable,
    x: &CooccurrenceMatrix,
    config: &GloveConfig,
) -> Result<(f64, GloveGradient), GloveError> {
    t.check_shape(x)?;
    t.check_finite()?;
    let d = t.dim;
    let mut g = GloveGradient {
        w: vec![0.0; t.w.len()],
        w_ctx: vec![0.0; t.w_ctx.len()],
        b: vec![0.0; t.b.len()],
        b_ctx: vec![0.0; t.b_ctx.len()],
    };
    let mut cost = 0.0;
    for e in x.entries() {
        let (i, j) = (e.row as usize, e.col as usize);
        let r = residual(t, e);
        let f = config.weight(e.value);
        cost += f * r * r;
        let s = 2.0 * f * r;
        for k in 0..d {
            g.w[i * d + k] += s * t.w_ctx[j * d + k];
            g.w_ctx[j * d + k] += s * t.w[i * d + k];
        }
        g.b[i] += s;
        g.b_ctx[j] += s;
    }
    Ok((cost, g))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedGlove {
    pub table: EmbeddingTable,
    /// Cost accumulated over each epoch's visits (one value per epoch).
    pub cost_trace: Vec<f64>,
}

/// AdaGrad over shuffled nonzero entries. The per-epoch cost is the sum of
/// each entry's weighted squared residual at the moment it is visited.
pub fn glove_train(x: &CooccurrenceMatrix, config: &GloveConfig) -> Result<TrainedGlove, GloveError> {
    config.validate()?;
    if x.is_empty() {
        return Err(GloveError::EmptyMatrix);
    }
    let d = config.dim;
    let mut t = EmbeddingTable::init(x.vocab_size(), d, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..x.nnz()).collect();
    let weights: Vec<f64> = x.entries().iter().map(|e| config.weight(e.value)).collect();
    let lr = config.learning_rate;
    let mut trace = Vec::with_capacity(config.epochs);
    let mut grad_w = vec![0.0; d];
    let mut grad_c = vec![0.0; d];

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut cost = 0.0;
        for &n in &order {
            let e = &x.entries()[n];
            let (i, j) = (e.row as usize, e.col as usize);
            let r = residual(&t, e);
            let f = weights[n];
            cost += f * r * r;
            let s = 2.0 * f * r;
            for k in 0..d {
                grad_w[k] = s * t.w_ctx[j * d + k];
                grad_c[k] = s * t.w[i * d + k];
            }
            for k in 0..d {
                let (wi, cj) = (i * d + k, j * d + k);
                t.grad_sq_w[wi] += grad_w[k] * grad_w[k];
                t.w[wi] -= lr * grad_w[k] / t.grad_sq_w[wi].sqrt();
                t.grad_sq_w_ctx[cj] += grad_c[k] * grad_c[k];
                t.w_ctx[cj] -= lr * grad_c[k] / t.grad_sq_w_ctx[cj].sqrt();
            }
            t.grad_sq_b[i] += s * s;
            t.b[i] -= lr * s / t.grad_sq_b[i].sqrt();
            t.grad_sq_b_ctx[j] += s * s;
            t.b_ctx[j] -= lr * s / t.grad_sq_b_ctx[j].sqrt();
        }
        if !cost.is_finite() {
            return Err(GloveError::DivergedCost { epoch: epoch + 1, cost });
        }
        log::debug!("glove epoch {} cost {cost:.6}", epoch + 1);
        trace.push(cost);
    }
    Ok(TrainedGlove { table: t, cost_trace: trace })
}

pub fn write_cost_trace<W: Write>(trace: &[f64], mut w: W) -> io::Result<()> {
    writeln!(w, "epoch,cost")?;
    for (e, c) in trace.iter().enumerate() {
        writeln!(w, "{},{}", e + 1, c)?;
    }
    Ok(())
}

/// `w_i + w̃_i` for an in-vocabulary token, `None` for out-of-vocabulary.
pub fn embed_lookup(table: &EmbeddingTable, vocab: &Vocabulary, token: &str) -> Option<Vec<f64>> {
    vocab.index_of(token).map(|i| table.word_vector(i))
}

/// Frozen word-vector lookup used downstream of training.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectors {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    data: Vec<f64>,
}

impl WordVectors {
    pub fn new(tokens: Vec<String>, dim: usize, data: Vec<f64>) -> Result<Self, GloveError> {
        if data.len() != tokens.len() * dim {
            return Err(GloveError::ShapeMismatch { vocab: tokens.len(), dim });
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(WordVectors { tokens, index, dim, data })
    }

    pub fn from_table(table: &EmbeddingTable, vocab: &Vocabulary) -> Self {
        let data = (0..vocab.len()).flat_map(|i| table.word_vector(i)).collect();
        Self::new(vocab.tokens().to_vec(), table.dim, data).expect("table matches vocab")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Text format: `token v1 v2 ... vd` per line, values as 32-bit floats.
    pub fn write_text<W: Write>(&self, w: W) -> io::Result<()> {
        let mut w = BufWriter::new(w);
        for (i, t) in self.tokens.iter().enumerate() {
            write!(w, "{t}")?;
            for v in &self.data[i * self.dim..(i + 1) * self.dim] {
                write!(w, " {}", *v as f32)?;
            }
            writeln!(w)?;
        }
        w.flush()
    }

    pub fn read_text<R: Read>(r: R) -> Result<Self, GloveError> {
        let mut tokens = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (n, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            let mut parts = line.split(' ');
            let token = parts.next().unwrap_or_default();
            let values = parts
                .map(|p| p.parse::<f32>().map(f64::from))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| GloveError::Format(format!("line {}: {e}", n + 1)))?;
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(GloveError::Format(format!(
                        "line {}: expected {d} values, found {}",
                        n + 1,
                        values.len()
                    )))
                }
                _ => {}
            }
            tokens.push(token.to_string());
            data.extend(values);
        }
        Self::new(tokens, dim.unwrap_or(0), data)
    }

    /// Binary format: magic, V and d as little-endian u32, then V×d
    /// little-endian f32 row-major. Tokens live in a separate vocabulary file.
    pub fn write_binary<W: Write>(&self, w: W) -> io::Result<()> {
        let mut w = BufWriter::new(w);
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.tokens.len() as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_binary<R: Read>(mut r: R, tokens: Vec<String>) -> Result<Self, GloveError> {
        let mut header = [0u8; 12];
        r.read_exact(&mut header)?;
        if &header[..4] != BINARY_MAGIC {
            return Err(GloveError::Format("bad magic".into()));
        }
        let v = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
        let d = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
        if v != tokens.len() {
            return Err(GloveError::Format(format!("binary has {v} rows but vocabulary has {}", tokens.len())));
        }
        let mut raw = vec![0u8; v * d * 4];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))).collect();
        Self::new(tokens, d, data)
    }

    pub fn load(binary: &Path, vocab: &Path) -> Result<Self, GloveError> {
        let v = Vocabulary::read_tsv(fs::File::open(vocab)?)?;
        Self::read_binary(fs::File::open(binary)?, v.tokens().to_vec())
    }

    /// Same vectors rounded through f32, as they are after a save/load cycle.
    pub fn rounded_f32(&self) -> Self {
        let data = self.data.iter().map(|v| f64::from(*v as f32)).collect();
        Self::new(self.tokens.clone(), self.dim, data).expect("same shape")
    }
}
