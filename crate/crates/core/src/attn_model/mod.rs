//! Two-level attention news recommender.
//!
//! The news encoder runs multi-head self-attention over a title's frozen word
//! vectors and pools the result with additive attention. The user encoder does
//! the same over the vectors of the user's clicked news, with its own
//! parameters. A candidate is scored by the inner product of the user and
//! news vectors, and training minimizes the negative log of the softmax
//! probability of each clicked candidate against `K` sampled non-clicked ones.
//!
//! Inputs are ragged: every sequence is attended at its exact length, with no
//! padding and no positional encoding.

mod checkpoint;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{Graph, Tensor, TensorError, Var};
use crate::glove::WordVectors;

pub use checkpoint::{load_model, read_model, save_model, write_model, MODEL_MAGIC};
pub use train::{
    sample_loss_and_gradients, train, train_from, write_loss_trace, TrainReport, TrainedModel, TrainingSample,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Shape(#[from] TensorError),
    #[error("no title token is in the embedding vocabulary")]
    NoKnownTokens,
    #[error("user history is empty")]
    EmptyHistory,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite at epoch {0}")]
    Diverged(usize),
    #[error("no usable training sample")]
    NoTrainingSamples,
    #[error("malformed model checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub heads: usize,
    pub d_head: usize,
    pub d_attn: usize,
    /// Negatives `K` per clicked candidate.
    pub negatives: usize,
    /// Title tokens `L` fed to the news encoder.
    pub max_title_len: usize,
    /// History news `M` fed to the user encoder (most recent kept).
    pub max_history: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Reserved; embeddings are frozen.
    pub fine_tune_embeddings: bool,
    /// Reserved; only titles feed the news encoder.
    pub use_abstract: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            heads: 16,
            d_head: 16,
            d_attn: 200,
            negatives: 4,
            max_title_len: 30,
            max_history: 50,
            learning_rate: 1e-3,
            epochs: 5,
            batch_size: 32,
            seed: 0,
            fine_tune_embeddings: false,
            use_abstract: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("heads", self.heads),
            ("d_head", self.d_head),
            ("d_attn", self.d_attn),
            ("negatives", self.negatives),
            ("max_title_len", self.max_title_len),
            ("max_history", self.max_history),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.fine_tune_embeddings {
            return Err(ModelError::InvalidConfig("fine_tune_embeddings is reserved and not supported".into()));
        }
        if self.use_abstract {
            return Err(ModelError::InvalidConfig("use_abstract is reserved and not supported".into()));
        }
        Ok(())
    }

    pub fn d_model(&self) -> usize {
        self.heads * self.d_head
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
}

/// One encoder: `H` attention heads (`d_in × d_head` projections each) and an
/// additive-attention pooling layer (`d_model × d_attn` projection, `d_attn`
/// query stored as a `d_attn × 1` column).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub heads: Vec<HeadParams>,
    pub pool_proj: Tensor,
    pub pool_query: Tensor,
}

impl EncoderParams {
    pub fn init(d_in: usize, heads: usize, d_head: usize, d_attn: usize, rng: &mut ChaCha8Rng) -> Self {
        let d_model = heads * d_head;
        let heads = (0..heads)
            .map(|_| HeadParams {
                query: glorot(d_in, d_head, rng),
                key: glorot(d_in, d_head, rng),
                value: glorot(d_in, d_head, rng),
            })
            .collect();
        EncoderParams { heads, pool_proj: glorot(d_model, d_attn, rng), pool_query: glorot(d_attn, 1, rng) }
    }

    pub fn d_in(&self) -> usize {
        self.heads[0].query.shape()[0]
    }

    pub fn d_head(&self) -> usize {
        self.heads[0].query.cols()
    }

    pub fn d_model(&self) -> usize {
        self.heads.len() * self.d_head()
    }

    fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.heads.iter().flat_map(|h| [&h.query, &h.key, &h.value]).collect();
        out.push(&self.pool_proj);
        out.push(&self.pool_query);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> =
            self.heads.iter_mut().flat_map(|h| [&mut h.query, &mut h.key, &mut h.value]).collect();
        out.push(&mut self.pool_proj);
        out.push(&mut self.pool_query);
        out
    }

    fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.heads.is_empty() {
            return bad("encoder has no heads".into());
        }
        let (d_in, d_head) = (self.d_in(), self.d_head());
        for h in &self.heads {
            for t in [&h.query, &h.key, &h.value] {
                if t.shape() != [d_in, d_head] {
                    return bad(format!("head projection shape {:?}", t.shape()));
                }
            }
        }
        let d_attn = self.pool_proj.cols();
        if self.pool_proj.shape() != [self.d_model(), d_attn] || self.pool_query.shape() != [d_attn, 1] {
            return bad("pooling shapes inconsistent".into());
        }
        Ok(())
    }
}

fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(fan_in, fan_out, data).expect("shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub news: EncoderParams,
    pub user: EncoderParams,
}

impl ModelParams {
    /// Glorot-uniform initialization from `config.seed`, news encoder first.
    pub fn init(embed_dim: usize, config: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let news = EncoderParams::init(embed_dim, config.heads, config.d_head, config.d_attn, &mut rng);
        let user = EncoderParams::init(config.d_model(), config.heads, config.d_head, config.d_attn, &mut rng);
        ModelParams { news, user }
    }

    /// Every parameter tensor in declared order: news heads (query, key,
    /// value per head), news pooling projection and query, then the same for
    /// the user encoder.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.news.tensors();
        v.extend(self.user.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.news.tensors_mut();
        v.extend(self.user.tensors_mut());
        v
    }

    pub fn embed_dim(&self) -> usize {
        self.news.d_in()
    }

    pub fn d_model(&self) -> usize {
        self.news.d_model()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.news.validate()?;
        self.user.validate()?;
        if self.user.d_in() != self.news.d_model() {
            return Err(ModelError::InvalidConfig("user encoder input must match news encoder output".into()));
        }
        if !self.tensors().iter().all(|t| t.is_finite()) {
            return Err(ModelError::InvalidConfig("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ModelVars {
        ModelVars {
            news: EncoderVars::bind(&self.news, g, trainable),
            user: EncoderVars::bind(&self.user, g, trainable),
        }
    }
}

/// Encoder parameters placed on a graph.
#[derive(Debug, Clone)]
pub struct EncoderVars {
    heads: Vec<[Var; 3]>,
    pool_proj: Var,
    pool_query: Var,
    d_head: usize,
}

impl EncoderVars {
    pub fn bind(p: &EncoderParams, g: &mut Graph, trainable: bool) -> Self {
        let mut leaf = |t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let heads = p.heads.iter().map(|h| [leaf(&h.query), leaf(&h.key), leaf(&h.value)]).collect();
        EncoderVars { heads, pool_proj: leaf(&p.pool_proj), pool_query: leaf(&p.pool_query), d_head: p.d_head() }
    }

    /// Leaf vars in the same order as [`ModelParams::tensors`].
    pub fn leaves(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.heads.iter().flatten().copied().collect();
        v.push(self.pool_proj);
        v.push(self.pool_query);
        v
    }
}

#[derive(Debug, Clone)]
pub struct ModelVars {
    pub news: EncoderVars,
    pub user: EncoderVars,
}

impl ModelVars {
    pub fn leaves(&self) -> Vec<Var> {
        let mut v = self.news.leaves();
        v.extend(self.user.leaves());
        v
    }
}

/// Multi-head scaled dot-product self-attention of an `L × d_in` sequence:
/// per head `softmax((X Q)(X K)ᵀ / √d_head) (X V)`, heads concatenated.
pub fn self_attention_graph(g: &mut Graph, x: Var, enc: &EncoderVars) -> Result<Var, ModelError> {
    let scale = 1.0 / (enc.d_head as f64).sqrt();
    let mut outputs = Vec::with_capacity(enc.heads.len());
    for &[q, k, v] in &enc.heads {
        let xq = g.matmul(x, q)?;
        let xk = g.matmul(x, k)?;
        let xv = g.matmul(x, v)?;
        let kt = g.transpose(xk)?;
        let scores = g.matmul(xq, kt)?;
        let scaled = g.scale(scores, scale);
        let weights = g.row_softmax(scaled);
        outputs.push(g.matmul(weights, xv)?);
    }
    Ok(g.concat_cols(&outputs)?)
}

/// Additive attention pooling of an `L × d_model` sequence into `1 × d_model`:
/// `score_l = qᵀ tanh(P seq_l)`, weights `softmax(score)`.
pub fn additive_pool_graph(g: &mut Graph, seq: Var, enc: &EncoderVars) -> Result<Var, ModelError> {
    let projected = g.matmul(seq, enc.pool_proj)?;
    let activated = g.tanh(projected);
    let scores = g.matmul(activated, enc.pool_query)?;
    let row = g.transpose(scores)?;
    let weights = g.row_softmax(row);
    Ok(g.matmul(weights, seq)?)
}

/// Word vectors of the first `max_len` title tokens, out-of-vocabulary ones
/// dropped.
pub fn title_matrix(tokens: &[String], embeddings: &WordVectors, max_len: usize) -> Result<Tensor, ModelError> {
    let rows: Vec<Vec<f64>> =
        tokens.iter().take(max_len).filter_map(|t| embeddings.get(t).map(<[f64]>::to_vec)).collect();
    if rows.is_empty() {
        return Err(ModelError::NoKnownTokens);
    }
    Ok(Tensor::from_rows(&rows)?)
}

pub fn encode_news_graph(g: &mut Graph, title: &Tensor, vars: &ModelVars) -> Result<Var, ModelError> {
    let x = g.constant(title.clone());
    let attended = self_attention_graph(g, x, &vars.news)?;
    additive_pool_graph(g, attended, &vars.news)
}

pub fn encode_user_graph(g: &mut Graph, news: &[Var], vars: &ModelVars) -> Result<Var, ModelError> {
    if news.is_empty() {
        return Err(ModelError::EmptyHistory);
    }
    let history = g.stack_rows(news)?;
    let attended = self_attention_graph(g, history, &vars.user)?;
    additive_pool_graph(g, attended, &vars.user)
}

fn eval_encoder(
    input: &Tensor,
    enc: &EncoderParams,
    f: impl Fn(&mut Graph, Var, &EncoderVars) -> Result<Var, ModelError>,
) -> Result<Tensor, ModelError> {
    enc.validate()?;
    if input.rows() == 0 {
        return Err(ModelError::EmptyHistory);
    }
    if input.cols() != enc.d_in() && input.cols() != enc.d_model() {
        return Err(TensorError::ShapeMismatch {
            op: "encoder input",
            left: input.shape().to_vec(),
            right: vec![enc.d_in()],
        }
        .into());
    }
    let mut g = Graph::new();
    let vars = EncoderVars::bind(enc, &mut g, false);
    let x = g.constant(input.clone());
    let out = f(&mut g, x, &vars)?;
    Ok(g.value(out).clone())
}

/// `L × d_in` to `L × d_model`.
pub fn self_attention(x: &Tensor, enc: &EncoderParams) -> Result<Tensor, ModelError> {
    if x.cols() != enc.d_in() {
        return Err(TensorError::ShapeMismatch {
            op: "self_attention",
            left: x.shape().to_vec(),
            right: vec![enc.d_in(), enc.d_head()],
        }
        .into());
    }
    eval_encoder(x, enc, self_attention_graph)
}

/// `L × d_model` to a `d_model` vector.
pub fn additive_pool(seq: &Tensor, enc: &EncoderParams) -> Result<Vec<f64>, ModelError> {
    if seq.cols() != enc.d_model() {
        return Err(TensorError::ShapeMismatch {
            op: "additive_pool",
            left: seq.shape().to_vec(),
            right: vec![enc.d_model()],
        }
        .into());
    }
    Ok(eval_encoder(seq, enc, additive_pool_graph)?.into_data())
}

/// News vector for a tokenized title.
pub fn encode_news(
    title_tokens: &[String],
    embeddings: &WordVectors,
    params: &ModelParams,
    max_title_len: usize,
) -> Result<Vec<f64>, ModelError> {
    let title = title_matrix(title_tokens, embeddings, max_title_len)?;
    let attended = self_attention(&title, &params.news)?;
    additive_pool(&attended, &params.news)
}

/// User vector from the `M × d_model` matrix of clicked-news vectors.
pub fn encode_user(history: &[Vec<f64>], params: &ModelParams) -> Result<Vec<f64>, ModelError> {
    if history.is_empty() {
        return Err(ModelError::EmptyHistory);
    }
    let m = Tensor::from_rows(history)?;
    let attended = self_attention(&m, &params.user)?;
    additive_pool(&attended, &params.user)
}

pub fn score_click(user: &[f64], news: &[f64]) -> Result<f64, ModelError> {
    if user.len() != news.len() {
        return Err(
            TensorError::ShapeMismatch { op: "score_click", left: vec![user.len()], right: vec![news.len()] }.into()
        );
    }
    Ok(user.iter().zip(news).map(|(a, b)| a * b).sum())
}

/// Scores of one clicked candidate and its `K` sampled negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickScore {
    pub positive: f64,
    pub negatives: Vec<f64>,
}

fn log_sum_exp(cs: &ClickScore) -> f64 {
    let max = cs.negatives.iter().copied().fold(cs.positive, f64::max);
    let sum: f64 = std::iter::once(cs.positive).chain(cs.negatives.iter().copied()).map(|s| (s - max).exp()).sum();
    max + sum.ln()
}

/// `exp(ŷ⁺) / (exp(ŷ⁺) + Σ_j exp(ŷ⁻_j))`, evaluated with the maximum score
/// subtracted.
pub fn nce_probability(cs: &ClickScore) -> f64 {
    let max = cs.negatives.iter().copied().fold(cs.positive, f64::max);
    let num = (cs.positive - max).exp();
    let den = num + cs.negatives.iter().map(|s| (s - max).exp()).sum::<f64>();
    num / den
}

/// Mean negative log-likelihood of the clicked candidates.
pub fn loss(batch: &[ClickScore]) -> f64 {
    assert!(!batch.is_empty(), "loss of an empty batch");
    batch.iter().map(|cs| log_sum_exp(cs) - cs.positive).sum::<f64>() / batch.len() as f64
}

/// Precomputed inference over a fixed corpus.
#[derive(Debug, Clone)]
pub struct Scorer<'a> {
    pub params: &'a ModelParams,
    pub embeddings: &'a WordVectors,
    pub max_title_len: usize,
    pub max_history: usize,
}

impl<'a> Scorer<'a> {
    pub fn news_vector(&self, title_tokens: &[String]) -> Result<Vec<f64>, ModelError> {
        encode_news(title_tokens, self.embeddings, self.params, self.max_title_len)
    }

    /// User vector from already-encoded history news (most recent
    /// `max_history` used). An empty history yields the zero vector.
    pub fn user_vector(&self, history: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
        if history.is_empty() {
            return Ok(vec![0.0; self.params.d_model()]);
        }
        let start = history.len().saturating_sub(self.max_history);
        encode_user(&history[start..], self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_params(d_in: usize, heads: usize, d_head: usize, d_attn: usize, seed: u64) -> ModelParams {
        let config = TrainConfig { heads, d_head, d_attn, seed, ..Default::default() };
        ModelParams::init(d_in, &config)
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn single_token_attention_is_value_projection() {
        let p = tiny_params(4, 2, 3, 5, 1);
        let x = random_matrix(1, 4, 2);
        let out = self_attention(&x, &p.news).unwrap();
        let mut expect = Vec::new();
        for h in &p.news.heads {
            expect.extend(x.matmul(&h.value).unwrap().into_data());
        }
        for (a, b) in out.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn duplicate_rows_stay_duplicate() {
        let p = tiny_params(4, 2, 2, 3, 3);
        let mut rows: Vec<Vec<f64>> = (0..3).map(|i| random_matrix(1, 4, 10 + i).into_data()).collect();
        rows[2] = rows[0].clone();
        let out = self_attention(&Tensor::from_rows(&rows).unwrap(), &p.news).unwrap();
        assert_eq!(out.row_slice(0), out.row_slice(2));
    }

    #[test]
    fn pool_single_row_and_identical_rows() {
        let p = tiny_params(4, 2, 3, 5, 4);
        let row = random_matrix(1, 6, 5);
        let out = additive_pool(&row, &p.news).unwrap();
        for (a, b) in out.iter().zip(row.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        let two = Tensor::from_rows(&[row.data().to_vec(), row.data().to_vec()]).unwrap();
        let out = additive_pool(&two, &p.news).unwrap();
        for (a, b) in out.iter().zip(row.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_reported() {
        let p = tiny_params(4, 2, 3, 5, 4);
        assert!(matches!(self_attention(&random_matrix(2, 5, 1), &p.news), Err(ModelError::Shape(_))));
        assert!(matches!(additive_pool(&random_matrix(2, 4, 1), &p.news), Err(ModelError::Shape(_))));
        assert!(score_click(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn all_oov_title() {
        let emb = WordVectors::new(vec!["flu".into()], 4, vec![0.1; 4]).unwrap();
        let p = tiny_params(4, 2, 2, 3, 1);
        let err = encode_news(&["measles".into()], &emb, &p, 30).unwrap_err();
        assert!(matches!(err, ModelError::NoKnownTokens));
        // the known token lies beyond the first L tokens
        let toks: Vec<String> = vec!["a".into(), "b".into(), "flu".into()];
        assert!(matches!(encode_news(&toks, &emb, &p, 2), Err(ModelError::NoKnownTokens)));
        assert!(encode_news(&toks, &emb, &p, 3).is_ok());
    }

    #[test]
    fn empty_history() {
        let p = tiny_params(4, 2, 2, 3, 1);
        assert!(matches!(encode_user(&[], &p), Err(ModelError::EmptyHistory)));
    }

    #[test]
    fn history_permutation_invariance() {
        let p = tiny_params(4, 2, 2, 3, 7);
        let rows: Vec<Vec<f64>> = (0..4).map(|i| random_matrix(1, 4, 20 + i).into_data()).collect();
        let a = encode_user(&rows, &p).unwrap();
        let permuted = vec![rows[2].clone(), rows[0].clone(), rows[3].clone(), rows[1].clone()];
        let b = encode_user(&permuted, &p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn click_scores() {
        assert_eq!(score_click(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(score_click(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(score_click(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
    }

    #[test]
    fn probability_cases() {
        let uniform = ClickScore { positive: 0.0, negatives: vec![0.0; 4] };
        assert_eq!(nce_probability(&uniform), 0.2);
        let big = ClickScore { positive: 1000.0, negatives: vec![0.0; 4] };
        let p = nce_probability(&big);
        assert!(p.is_finite() && (p - 1.0).abs() < 1e-12);
        let e = std::f64::consts::E;
        let cs = ClickScore { positive: 1.0, negatives: vec![0.0, 2.0] };
        let expect = e / (e + 1.0 + e * e);
        assert!((nce_probability(&cs) - expect).abs() < 1e-15);
        assert!((expect - 0.2447).abs() < 1e-4);
    }

    #[test]
    fn loss_cases() {
        let uniform = ClickScore { positive: 0.0, negatives: vec![0.0; 4] };
        assert!((loss(std::slice::from_ref(&uniform)) - 5f64.ln()).abs() < 1e-15);
        let sure = ClickScore { positive: 100.0, negatives: vec![0.0; 4] };
        assert!(loss(&[sure]) < 1e-40);
        let a = ClickScore { positive: 1.0, negatives: vec![0.0, 2.0] };
        let b = ClickScore { positive: 0.5, negatives: vec![-1.0, 0.0] };
        let expect = (-nce_probability(&a).ln() - nce_probability(&b).ln()) / 2.0;
        assert!((loss(&[a, b]) - expect).abs() < 1e-14);
    }

    #[test]
    fn cold_start_user_is_zero() {
        let emb = WordVectors::new(vec!["flu".into()], 4, vec![0.1; 4]).unwrap();
        let p = tiny_params(4, 2, 2, 3, 1);
        let s = Scorer { params: &p, embeddings: &emb, max_title_len: 30, max_history: 50 };
        assert_eq!(s.user_vector(&[]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { heads: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { fine_tune_embeddings: true, ..Default::default() }.validate().is_err());
        assert_eq!(TrainConfig::default().d_model(), 256);
    }
}
