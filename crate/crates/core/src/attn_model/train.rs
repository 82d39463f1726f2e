use std::collections::HashMap;
use std::io::{self, Write};

use log::warn;
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{encode_news_graph, encode_user_graph, title_matrix, ModelError, ModelParams, TrainConfig};
use crate::autograd::{Graph, Tensor};
use crate::glove::WordVectors;
use crate::mind_io::ImpressionLog;
use crate::textprep::TokenizedNews;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const SHUFFLE_SALT: u64 = 0x5851_f42d_4c95_7f2d;

/// One clicked candidate with its user's history and the non-clicked
/// candidates of the same impression, all as indices into the title table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSample {
    pub history: Vec<usize>,
    pub positive: usize,
    pub negative_pool: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct TrainReport {
    pub samples: usize,
    pub skipped_cold_start: usize,
    pub skipped_no_negatives: usize,
    pub skipped_unknown_news: usize,
    /// Samples with fewer than `K` negatives, drawn with replacement.
    pub resampled_negatives: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ModelParams,
    /// Mean per-sample loss of each epoch.
    pub loss_trace: Vec<f64>,
    pub report: TrainReport,
}

/// Loss of one sample and its gradient with respect to every parameter
/// tensor, in [`ModelParams::tensors`] order. Word vectors are constants.
pub fn sample_loss_and_gradients(
    params: &ModelParams,
    history: &[&Tensor],
    positive: &Tensor,
    negatives: &[&Tensor],
) -> Result<(f64, Vec<Tensor>), ModelError> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, true);
    let mut clicked = Vec::with_capacity(history.len());
    for t in history {
        clicked.push(encode_news_graph(&mut g, t, &vars)?);
    }
    let user = encode_user_graph(&mut g, &clicked, &vars)?;
    let mut scores = Vec::with_capacity(negatives.len() + 1);
    for t in std::iter::once(&positive).chain(negatives) {
        let n = encode_news_graph(&mut g, t, &vars)?;
        scores.push(g.dot(user, n)?);
    }
    let row = g.concat_cols(&scores)?;
    let probs = g.row_softmax(row);
    let p = g.index(probs, 0)?;
    let log_p = g.log(p);
    let out = g.scale(log_p, -1.0);
    let loss = g.value(out).data()[0];
    let mut grads = g.backward(out);
    let tensors = vars
        .leaves()
        .into_iter()
        .zip(params.tensors())
        .map(|(v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok((loss, tensors))
}

struct Corpus {
    titles: Vec<Tensor>,
    samples: Vec<TrainingSample>,
    report: TrainReport,
}

fn build_corpus(
    news: &[TokenizedNews],
    logs: &[ImpressionLog],
    embeddings: &WordVectors,
    config: &TrainConfig,
) -> Corpus {
    let mut titles = Vec::new();
    let mut index_of = HashMap::new();
    for n in news {
        if let Ok(t) = title_matrix(&n.title_tokens, embeddings, config.max_title_len) {
            index_of.entry(n.news_id.as_str()).or_insert_with(|| {
                titles.push(t);
                titles.len() - 1
            });
        }
    }
    let mut report = TrainReport::default();
    let mut samples = Vec::new();
    for log in logs {
        let known: Vec<usize> = log.history.iter().filter_map(|id| index_of.get(id.as_str()).copied()).collect();
        let history = known[known.len().saturating_sub(config.max_history)..].to_vec();
        let negative_pool: Vec<usize> = log.negatives().filter_map(|id| index_of.get(id).copied()).collect();
        for pos in log.positives() {
            let Some(&positive) = index_of.get(pos) else {
                report.skipped_unknown_news += 1;
                continue;
            };
            if history.is_empty() {
                report.skipped_cold_start += 1;
            } else if negative_pool.is_empty() {
                report.skipped_no_negatives += 1;
            } else {
                if negative_pool.len() < config.negatives {
                    report.resampled_negatives += 1;
                }
                samples.push(TrainingSample {
                    history: history.clone(),
                    positive,
                    negative_pool: negative_pool.clone(),
                });
            }
        }
    }
    report.samples = samples.len();
    if report.resampled_negatives > 0 {
        warn!(
            "{} samples have fewer than {} negatives; sampling with replacement",
            report.resampled_negatives, config.negatives
        );
    }
    Corpus { titles, samples, report }
}

fn draw_negatives(pool: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if pool.len() >= k {
        index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
    } else {
        (0..k).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
    lr: f64,
}

impl Adam {
    fn new(params: &ModelParams, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam { m: zeros.clone(), v: zeros, step: 0, lr }
    }

    fn update(&mut self, params: &mut ModelParams, grads: &[Tensor]) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        for (k, (p, g)) in params.tensors_mut().into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Trains from a Glorot initialization seeded by `config.seed`.
pub fn train(
    news: &[TokenizedNews],
    logs: &[ImpressionLog],
    embeddings: &WordVectors,
    config: &TrainConfig,
) -> Result<TrainedModel, ModelError> {
    config.validate()?;
    train_from(ModelParams::init(embeddings.dim(), config), news, logs, embeddings, config)
}

/// Adam over mini-batches. Per-sample gradients are computed in parallel and
/// summed in sample order, and each sample draws its negatives from its own
/// stream, so the result does not depend on the thread count.
pub fn train_from(
    mut params: ModelParams,
    news: &[TokenizedNews],
    logs: &[ImpressionLog],
    embeddings: &WordVectors,
    config: &TrainConfig,
) -> Result<TrainedModel, ModelError> {
    config.validate()?;
    params.validate()?;
    if params.embed_dim() != embeddings.dim() {
        return Err(ModelError::InvalidConfig(format!(
            "model expects {}-dimensional word vectors, got {}",
            params.embed_dim(),
            embeddings.dim()
        )));
    }
    let corpus = build_corpus(news, logs, embeddings, config);
    if corpus.samples.is_empty() {
        return Err(ModelError::NoTrainingSamples);
    }
    let mut adam = Adam::new(&params, config.learning_rate);
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..corpus.samples.len()).collect();
    for epoch in 0..config.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_SALT);
        shuffle_rng.set_stream(epoch as u64);
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<Result<(f64, Vec<Tensor>), ModelError>> = batch
                .par_iter()
                .map(|&idx| {
                    let s = &corpus.samples[idx];
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                    rng.set_stream(((epoch as u64) << 32) | idx as u64);
                    let negs = draw_negatives(&s.negative_pool, config.negatives, &mut rng);
                    let history: Vec<&Tensor> = s.history.iter().map(|&i| &corpus.titles[i]).collect();
                    let negatives: Vec<&Tensor> = negs.iter().map(|&i| &corpus.titles[i]).collect();
                    sample_loss_and_gradients(&params, &history, &corpus.titles[s.positive], &negatives)
                })
                .collect();
            let mut sum: Option<Vec<Tensor>> = None;
            for r in results {
                let (loss, grads) = r?;
                if !loss.is_finite() {
                    return Err(ModelError::Diverged(epoch + 1));
                }
                epoch_loss += loss;
                match &mut sum {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            let mut grads = sum.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
            adam.update(&mut params, &grads);
        }
        let mean = epoch_loss / corpus.samples.len() as f64;
        if !mean.is_finite() || !params.tensors().iter().all(|t| t.is_finite()) {
            return Err(ModelError::Diverged(epoch + 1));
        }
        log::info!("epoch {}: mean loss {:.6}", epoch + 1, mean);
        loss_trace.push(mean);
    }
    Ok(TrainedModel { params, loss_trace, report: corpus.report })
}

/// `epoch,mean_loss` CSV, epochs numbered from 1.
pub fn write_loss_trace<W: Write>(trace: &[f64], mut w: W) -> io::Result<()> {
    writeln!(w, "epoch,mean_loss")?;
    for (i, l) in trace.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, l)?;
    }
    Ok(())
}
