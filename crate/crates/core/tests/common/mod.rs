//! Naive reference implementations used as test oracles. Each one follows
//! the textbook formula with plain loops and shares no code with the crate;
//! `checks` pairs them with crate code for finite-difference tests.

#![allow(dead_code, clippy::needless_range_loop, clippy::type_complexity)]

pub mod checks;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Matrix = Vec<Vec<f64>>;

/// Dense direct sum over every stored `(i, j, x)` triple of
/// `f(x) (w_i · c_j + b_i + bc_j - ln x)^2`.
#[allow(clippy::too_many_arguments)]
pub fn glove_cost_direct(
    triples: &[(usize, usize, f64)],
    w: &Matrix,
    c: &Matrix,
    b: &[f64],
    bc: &[f64],
    x_max: f64,
    alpha: f64,
) -> f64 {
    let mut total = 0.0;
    for &(i, j, x) in triples {
        let mut dot = 0.0;
        for k in 0..w[i].len() {
            dot += w[i][k] * c[j][k];
        }
        let f = if x < x_max { (x / x_max).powf(alpha) } else { 1.0 };
        let r = dot + b[i] + bc[j] - x.ln();
        total += f * r * r;
    }
    total
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..p {
            for k in 0..m {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// One head at a time: scores `q_l · k_m / sqrt(d)`, softmax over `m`,
/// weighted sum of values; heads appended side by side.
pub fn naive_self_attention(x: &Matrix, heads: &[(Matrix, Matrix, Matrix)]) -> Matrix {
    let len = x.len();
    let mut out = vec![Vec::new(); len];
    for (q, k, v) in heads {
        let (xq, xk, xv) = (matmul(x, q), matmul(x, k), matmul(x, v));
        let d = q[0].len() as f64;
        for l in 0..len {
            let scores: Vec<f64> =
                (0..len).map(|m| xq[l].iter().zip(&xk[m]).map(|(a, b)| a * b).sum::<f64>() / d.sqrt()).collect();
            let w = softmax(&scores);
            for col in 0..xv[0].len() {
                out[l].push((0..len).map(|m| w[m] * xv[m][col]).sum());
            }
        }
    }
    out
}

/// `score_l = Σ_a q_a tanh(Σ_k seq_lk P_ka)`, softmax, weighted row sum.
pub fn naive_additive_pool(seq: &Matrix, p: &Matrix, q: &[f64]) -> Vec<f64> {
    let scores: Vec<f64> = seq
        .iter()
        .map(|row| (0..q.len()).map(|a| q[a] * (0..row.len()).map(|k| row[k] * p[k][a]).sum::<f64>().tanh()).sum())
        .collect();
    let w = softmax(&scores);
    (0..seq[0].len()).map(|c| (0..seq.len()).map(|l| w[l] * seq[l][c]).sum()).collect()
}

/// Counts every positive/negative pair.
pub fn auc_pairs(labels: &[u8], scores: &[f64]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

/// 1-based rank of each candidate: one plus the number of candidates with a
/// higher score, or an equal score and a smaller index.
pub fn ranks(scores: &[f64]) -> Vec<usize> {
    (0..scores.len())
        .map(|i| 1 + (0..scores.len()).filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i)).count())
        .collect()
}

pub fn mrr_direct(labels: &[u8], scores: &[f64]) -> f64 {
    let r = ranks(scores);
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let mut sum = 0.0;
    for rank in 1..=labels.len() {
        let i = r.iter().position(|&x| x == rank).unwrap();
        if labels[i] == 1 {
            sum += 1.0 / rank as f64;
        }
    }
    sum / positives as f64
}

pub fn ndcg_direct(labels: &[u8], scores: &[f64], k: usize) -> f64 {
    let r = ranks(scores);
    let mut by_rank = vec![0u8; labels.len()];
    for i in 0..labels.len() {
        by_rank[r[i] - 1] = labels[i];
    }
    let dcg = |ls: &[u8]| -> f64 {
        let mut s = 0.0;
        for (pos, &l) in ls.iter().enumerate().take(k) {
            s += (2f64.powi(l as i32) - 1.0) / ((pos + 2) as f64).log2();
        }
        s
    };
    let mut ideal = labels.to_vec();
    ideal.sort_by(|a, b| b.cmp(a));
    dcg(&by_rank) / dcg(&ideal)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-scale..scale)).collect()).collect()
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
