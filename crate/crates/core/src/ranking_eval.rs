//! Impression-level ranking metrics and their macro average.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("labels need at least one positive and one negative")]
    DegenerateLabels,
    #[error("labels contain no positive")]
    NoPositive,
    #[error("{labels} labels but {scores} scores")]
    LengthMismatch { labels: usize, scores: usize },
    #[error("impression has no candidates")]
    Empty,
    #[error("every impression has degenerate labels")]
    AllDegenerate,
    #[error("no impressions to evaluate")]
    NoImpressions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpressionResult {
    pub impression_id: String,
    pub labels: Vec<u8>,
    pub scores: Vec<f64>,
}

/// Macro averages over non-degenerate impressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub n_impressions: usize,
    pub n_skipped: usize,
}

/// The same values scaled by 100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentReport {
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
}

impl MetricReport {
    pub fn percent(&self) -> PercentReport {
        PercentReport {
            auc: self.auc * 100.0,
            mrr: self.mrr * 100.0,
            ndcg5: self.ndcg5 * 100.0,
            ndcg10: self.ndcg10 * 100.0,
        }
    }

    /// `{"metrics": {...}, "percent": {...}, "n_impressions": .., "n_skipped": ..}`
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "metrics": {
                "auc": self.auc,
                "mrr": self.mrr,
                "ndcg5": self.ndcg5,
                "ndcg10": self.ndcg10,
            },
            "percent": self.percent(),
            "n_impressions": self.n_impressions,
            "n_skipped": self.n_skipped,
        })
    }
}

fn check(labels: &[u8], scores: &[f64]) -> Result<(), MetricError> {
    if labels.len() != scores.len() {
        return Err(MetricError::LengthMismatch { labels: labels.len(), scores: scores.len() });
    }
    if labels.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

fn is_positive(l: u8) -> bool {
    l > 0
}

/// Positive-vs-negative pair accuracy with ties counted as one half,
/// computed from midranks in `O(n log n)`.
pub fn auc(labels: &[u8], scores: &[f64]) -> Result<f64, MetricError> {
    check(labels, scores)?;
    let n_pos = labels.iter().filter(|&&l| is_positive(l)).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // Twice the rank sum of positives, using midranks for tied groups, keeps
    // everything in integers.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share the midrank (i + 1 + j) / 2
        let pos_in_group = order[i..j].iter().filter(|&&k| is_positive(labels[k])).count() as u64;
        twice_rank_sum += pos_in_group * (i as u64 + 1 + j as u64);
        i = j;
    }
    let (p, n) = (n_pos as u64, n_neg as u64);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

/// Candidate indices by descending score, ties in index order.
fn ranked(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    order
}

/// Mean of `1 / rank` over the positives.
pub fn mrr(labels: &[u8], scores: &[f64]) -> Result<f64, MetricError> {
    check(labels, scores)?;
    let n_pos = labels.iter().filter(|&&l| is_positive(l)).count();
    if n_pos == 0 {
        return Err(MetricError::NoPositive);
    }
    let sum: f64 = ranked(scores)
        .iter()
        .enumerate()
        .filter(|(_, &i)| is_positive(labels[i]))
        .map(|(r, _)| 1.0 / (r + 1) as f64)
        .sum();
    Ok(sum / n_pos as f64)
}

fn dcg(labels_in_order: impl Iterator<Item = u8>, k: usize) -> f64 {
    labels_in_order.take(k).enumerate().map(|(r, l)| (2f64.powi(l as i32) - 1.0) / ((r + 2) as f64).log2()).sum()
}

pub fn ndcg_at(labels: &[u8], scores: &[f64], k: usize) -> Result<f64, MetricError> {
    check(labels, scores)?;
    if !labels.iter().any(|&l| is_positive(l)) {
        return Err(MetricError::NoPositive);
    }
    let actual = dcg(ranked(scores).into_iter().map(|i| labels[i]), k);
    let mut ideal = labels.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    Ok(actual / dcg(ideal.into_iter(), k))
}

/// Neumaier compensated sum.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Unweighted mean of each metric over impressions that have both a positive
/// and a negative; the rest are counted in `n_skipped`.
pub fn evaluate(results: &[ImpressionResult]) -> Result<MetricReport, MetricError> {
    if results.is_empty() {
        return Err(MetricError::NoImpressions);
    }
    let mut sums = [CompensatedSum::default(); 4];
    let (mut used, mut skipped) = (0usize, 0usize);
    for r in results {
        let vals = match auc(&r.labels, &r.scores) {
            Ok(a) => {
                [a, mrr(&r.labels, &r.scores)?, ndcg_at(&r.labels, &r.scores, 5)?, ndcg_at(&r.labels, &r.scores, 10)?]
            }
            Err(MetricError::DegenerateLabels) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        for (s, v) in sums.iter_mut().zip(vals) {
            s.add(v);
        }
        used += 1;
    }
    if used == 0 {
        return Err(MetricError::AllDegenerate);
    }
    let mean = |i: usize| sums[i].value() / used as f64;
    Ok(MetricReport {
        auc: mean(0),
        mrr: mean(1),
        ndcg5: mean(2),
        ndcg10: mean(3),
        n_impressions: used,
        n_skipped: skipped,
    })
}
