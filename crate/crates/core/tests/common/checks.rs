//! Finite-difference checks that pair crate code with the naive oracles.

#![allow(dead_code)]

use mindrec::attn_model::{sample_loss_and_gradients, EncoderParams, ModelParams, TrainConfig};
use mindrec::autograd::Tensor;
use mindrec::glove::{
    glove_cost, glove_cost_and_gradient, Cooccurrence, CooccurrenceMatrix, EmbeddingTable, GloveConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    glove_cost_direct, naive_additive_pool, naive_self_attention, random_matrix, relative_error, softmax, Matrix,
};

pub fn to_matrix(t: &Tensor) -> Matrix {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

fn oracle_encode(x: &Matrix, enc: &EncoderParams) -> Vec<f64> {
    let heads: Vec<(Matrix, Matrix, Matrix)> =
        enc.heads.iter().map(|h| (to_matrix(&h.query), to_matrix(&h.key), to_matrix(&h.value))).collect();
    let q: Vec<f64> = enc.pool_query.data().to_vec();
    naive_additive_pool(&naive_self_attention(x, &heads), &to_matrix(&enc.pool_proj), &q)
}

/// Negative log softmax probability of the positive, built entirely from
/// the naive oracles.
pub fn oracle_loss(params: &ModelParams, history: &[Matrix], positive: &Matrix, negatives: &[Matrix]) -> f64 {
    let clicked: Matrix = history.iter().map(|t| oracle_encode(t, &params.news)).collect();
    let user = oracle_encode(&clicked, &params.user);
    let scores: Vec<f64> = std::iter::once(positive)
        .chain(negatives)
        .map(|t| oracle_encode(t, &params.news).iter().zip(&user).map(|(a, b)| a * b).sum())
        .collect();
    -softmax(&scores)[0].ln()
}

pub struct AttentionInstance {
    pub params: ModelParams,
    pub history: Vec<Matrix>,
    pub positive: Matrix,
    pub negatives: Vec<Matrix>,
}

/// One impression with `H = 2`, `d_head = 3`, titles of 1 to 5 tokens, 1 to 4
/// history items and 2 negatives.
pub fn random_attention_instance(seed: u64) -> AttentionInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_in = rng.gen_range(2..=4);
    let config = TrainConfig { heads: 2, d_head: 3, d_attn: rng.gen_range(2..=4), seed, ..Default::default() };
    let params = ModelParams::init(d_in, &config);
    let title = |rng: &mut ChaCha8Rng| {
        let len = rng.gen_range(1..=5);
        random_matrix(rng, len, d_in, 1.0)
    };
    let m = rng.gen_range(1..=4);
    let history = (0..m).map(|_| title(&mut rng)).collect();
    let positive = title(&mut rng);
    let negatives = (0..2).map(|_| title(&mut rng)).collect();
    AttentionInstance { params, history, positive, negatives }
}

fn tensor(m: &Matrix) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

/// Largest relative error between reverse-mode gradients and central
/// differences of the oracle loss over every parameter entry.
pub fn attention_gradcheck(inst: &AttentionInstance, h: f64, floor: f64) -> f64 {
    let hist: Vec<Tensor> = inst.history.iter().map(tensor).collect();
    let negs: Vec<Tensor> = inst.negatives.iter().map(tensor).collect();
    let pos = tensor(&inst.positive);
    let (loss, grads) = sample_loss_and_gradients(
        &inst.params,
        &hist.iter().collect::<Vec<_>>(),
        &pos,
        &negs.iter().collect::<Vec<_>>(),
    )
    .unwrap();
    let direct = oracle_loss(&inst.params, &inst.history, &inst.positive, &inst.negatives);
    assert!((loss - direct).abs() <= 1e-10 * direct.abs().max(1.0), "forward {loss} vs oracle {direct}");

    let mut worst: f64 = 0.0;
    let n_tensors = inst.params.tensors().len();
    for t in 0..n_tensors {
        let len = inst.params.tensors()[t].len();
        for i in 0..len {
            let mut p = inst.params.clone();
            let base = p.tensors()[t].data()[i];
            p.tensors_mut()[t].data_mut()[i] = base + h;
            let up = oracle_loss(&p, &inst.history, &inst.positive, &inst.negatives);
            p.tensors_mut()[t].data_mut()[i] = base - h;
            let down = oracle_loss(&p, &inst.history, &inst.positive, &inst.negatives);
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(grads[t].data()[i], numeric, floor));
        }
    }
    worst
}

/// Random sparse co-occurrence matrix with at most `max_entries` entries
/// and a matching random parameter table.
pub fn random_glove_instance(
    seed: u64,
    max_vocab: usize,
    max_dim: usize,
    max_entries: usize,
) -> (CooccurrenceMatrix, EmbeddingTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = rng.gen_range(1..=max_vocab);
    let d = rng.gen_range(1..=max_dim);
    let n = rng.gen_range(1..=max_entries.min(v * v));
    let mut cells: Vec<(u32, u32)> = (0..v as u32).flat_map(|i| (0..v as u32).map(move |j| (i, j))).collect();
    rand::seq::SliceRandom::shuffle(cells.as_mut_slice(), &mut rng);
    let entries =
        cells[..n].iter().map(|&(row, col)| Cooccurrence { row, col, value: rng.gen_range(0.05..250.0) }).collect();
    let x = CooccurrenceMatrix::from_entries(v, entries);
    let mut table = EmbeddingTable::init(v, d, seed);
    // spread parameters well beyond the tiny initial range
    for p in table.w.iter_mut().chain(&mut table.w_ctx).chain(&mut table.b).chain(&mut table.b_ctx) {
        *p = rng.gen_range(-1.0..1.0);
    }
    (x, table)
}

pub fn glove_oracle_cost(x: &CooccurrenceMatrix, t: &EmbeddingTable, config: &GloveConfig) -> f64 {
    let rows = |flat: &[f64]| -> Matrix { flat.chunks(t.dim).map(<[f64]>::to_vec).collect() };
    let triples: Vec<(usize, usize, f64)> =
        x.entries().iter().map(|e| (e.row as usize, e.col as usize, e.value)).collect();
    glove_cost_direct(&triples, &rows(&t.w), &rows(&t.w_ctx), &t.b, &t.b_ctx, config.x_max, config.alpha)
}

/// Largest relative error of the analytic GloVe gradient against central
/// differences of the oracle cost.
pub fn glove_gradcheck(x: &CooccurrenceMatrix, t: &EmbeddingTable, config: &GloveConfig, h: f64, floor: f64) -> f64 {
    let (cost, g) = glove_cost_and_gradient(t, x, config).unwrap();
    assert!((cost - glove_cost(t, x, config).unwrap()).abs() <= 1e-12 * cost.abs().max(1.0));
    let mut worst: f64 = 0.0;
    let fields: [(fn(&mut EmbeddingTable) -> &mut Vec<f64>, &Vec<f64>); 4] =
        [(|t| &mut t.w, &g.w), (|t| &mut t.w_ctx, &g.w_ctx), (|t| &mut t.b, &g.b), (|t| &mut t.b_ctx, &g.b_ctx)];
    for (field, grad) in fields {
        for i in 0..grad.len() {
            let mut p = t.clone();
            let base = field(&mut p)[i];
            field(&mut p)[i] = base + h;
            let up = glove_oracle_cost(x, &p, config);
            field(&mut p)[i] = base - h;
            let down = glove_oracle_cost(x, &p, config);
            worst = worst.max(relative_error(grad[i], (up - down) / (2.0 * h), floor));
        }
    }
    worst
}
