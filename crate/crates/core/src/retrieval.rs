//! Top-n recommendation for a user and nearest-headline search.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attn_model::{score_click, ModelError, Scorer};
use crate::textprep::TokenizedNews;

pub const SNIPPET_CHARS: usize = 48;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("candidate pool is empty")]
    EmptyCandidatePool,
    #[error("unknown news id {0}")]
    UnknownNews(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(format!("unknown metric {other:?} (euclidean, cosine)")),
        }
    }
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

/// Encoded news vectors for a corpus. Items with no known title token are
/// left out.
#[derive(Debug, Clone, Default)]
pub struct NewsVectors {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl NewsVectors {
    /// Encodes every item in parallel; the result is in corpus order.
    pub fn encode(news: &[TokenizedNews], scorer: &Scorer<'_>) -> Self {
        let encoded: Vec<Option<Vec<f64>>> =
            news.par_iter().map(|n| scorer.news_vector(&n.title_tokens).ok()).collect();
        let mut out = NewsVectors::default();
        for (n, v) in news.iter().zip(encoded) {
            if let Some(v) = v {
                if !out.index.contains_key(&n.news_id) {
                    out.index.insert(n.news_id.clone(), out.ids.len());
                    out.ids.push(n.news_id.clone());
                    out.vectors.push(v);
                }
            }
        }
        out
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.vectors[i].as_slice())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids.iter().map(String::as_str).zip(self.vectors.iter().map(Vec::as_slice))
    }

    /// User vector from the encodable history items.
    pub fn user_vector(&self, history: &[String], scorer: &Scorer<'_>) -> Result<Vec<f64>, ModelError> {
        let rows: Vec<Vec<f64>> = history.iter().filter_map(|id| self.get(id).map(<[f64]>::to_vec)).collect();
        scorer.user_vector(&rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredNews {
    pub news_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationList {
    pub user_id: String,
    pub entries: Vec<ScoredNews>,
    /// History items that could be encoded.
    pub generated_from: usize,
}

/// Scores every encodable candidate not in `history` and returns the best
/// `top_n`, by descending score then ascending news id.
pub fn recommend(
    user_id: &str,
    history: &[String],
    candidate_pool: &[String],
    vectors: &NewsVectors,
    scorer: &Scorer<'_>,
    top_n: usize,
) -> Result<RecommendationList, RetrievalError> {
    if candidate_pool.is_empty() {
        return Err(RetrievalError::EmptyCandidatePool);
    }
    let user = vectors.user_vector(history, scorer)?;
    let seen: HashSet<&str> = history.iter().map(String::as_str).collect();
    let mut pooled = HashSet::new();
    let mut entries = Vec::new();
    for id in candidate_pool {
        if seen.contains(id.as_str()) || !pooled.insert(id.as_str()) {
            continue;
        }
        if let Some(v) = vectors.get(id) {
            entries.push(ScoredNews { news_id: id.clone(), score: score_click(&user, v)? });
        }
    }
    entries.sort_by(|a, b| {
        b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then_with(|| a.news_id.cmp(&b.news_id))
    });
    entries.truncate(top_n);
    Ok(RecommendationList {
        user_id: user_id.to_string(),
        entries,
        generated_from: history.iter().filter(|id| vectors.get(id).is_some()).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub news_id: String,
    pub headline: String,
    pub category: String,
    pub abstract_snippet: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityResult {
    /// Query news id, or the free-text headline.
    pub query: String,
    pub query_headline: String,
    pub neighbors: Vec<Neighbor>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Query<'a> {
    /// An item of the corpus; it is excluded from its own neighbors.
    News(&'a str),
    /// Free text with its normalized tokens; corpus items with the same
    /// headline are excluded.
    Headline { text: &'a str, tokens: &'a [String] },
}

/// First `SNIPPET_CHARS` characters followed by `...`, or the whole text if
/// it is short enough.
pub fn snippet(text: &str) -> String {
    match text.char_indices().nth(SNIPPET_CHARS) {
        Some((cut, _)) => format!("{}...", &text[..cut]),
        None => text.to_string(),
    }
}

/// Corpus items closest to the query, ascending distance, ties by news id.
pub fn similar_news(
    query: Query<'_>,
    corpus: &[TokenizedNews],
    vectors: &NewsVectors,
    scorer: &Scorer<'_>,
    top_n: usize,
    metric: Metric,
) -> Result<SimilarityResult, RetrievalError> {
    let (label, headline, qvec, excluded_id) = match query {
        Query::News(id) => {
            let item =
                corpus.iter().find(|n| n.news_id == id).ok_or_else(|| RetrievalError::UnknownNews(id.to_string()))?;
            let v = match vectors.get(id) {
                Some(v) => v.to_vec(),
                None => scorer.news_vector(&item.title_tokens)?,
            };
            (id.to_string(), item.title.clone(), v, Some(id))
        }
        Query::Headline { text, tokens } => (text.to_string(), text.to_string(), scorer.news_vector(tokens)?, None),
    };
    let same_headline =
        |n: &TokenizedNews| excluded_id.is_none() && n.title.trim().eq_ignore_ascii_case(headline.trim());
    let mut neighbors: Vec<Neighbor> = corpus
        .iter()
        .filter(|n| Some(n.news_id.as_str()) != excluded_id && !same_headline(n))
        .filter_map(|n| {
            vectors.get(&n.news_id).map(|v| Neighbor {
                news_id: n.news_id.clone(),
                headline: n.title.clone(),
                category: n.category.clone(),
                abstract_snippet: snippet(&n.abstract_text),
                distance: metric.distance(&qvec, v),
            })
        })
        .collect();
    neighbors.sort_by(|a, b| {
        a.distance.partial_cmp(&b.distance).unwrap_or(Ordering::Equal).then_with(|| a.news_id.cmp(&b.news_id))
    });
    let mut seen = HashSet::new();
    neighbors.retain(|n| seen.insert(n.news_id.clone()));
    neighbors.truncate(top_n);
    Ok(SimilarityResult { query: label, query_headline: headline, neighbors })
}

/// Plain-text listing: query headline block, then one row per neighbor with
/// rank, headline, category, abstract snippet and distance.
pub fn render_similar(result: &SimilarityResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "===== News Article Name =====");
    let _ = writeln!(out, "News Headline : {}", result.query_headline);
    let _ = writeln!(out);
    let _ = writeln!(out, "===== Recommended News : =====");
    let _ = writeln!(out, "      headline Category Abstract similarity with the queried article");
    for (i, n) in result.neighbors.iter().enumerate() {
        let _ = writeln!(out, "{:<2} {} {} {} {:.6}", i + 1, n.headline, n.category, n.abstract_snippet, n.distance);
    }
    out
}

/// Same layout for a recommendation list, with the click score in the last
/// column.
pub fn render_recommendations(list: &RecommendationList, corpus: &[TokenizedNews]) -> String {
    let by_id: HashMap<&str, &TokenizedNews> = corpus.iter().map(|n| (n.news_id.as_str(), n)).collect();
    let mut out = String::new();
    let _ = writeln!(out, "===== User : {} =====", list.user_id);
    let _ = writeln!(out, "History news used : {}", list.generated_from);
    let _ = writeln!(out);
    let _ = writeln!(out, "===== Recommended News : =====");
    let _ = writeln!(out, "      headline Category Abstract score");
    for (i, e) in list.entries.iter().enumerate() {
        let (headline, category, abs) = match by_id.get(e.news_id.as_str()) {
            Some(n) => (n.title.as_str(), n.category.as_str(), snippet(&n.abstract_text)),
            None => (e.news_id.as_str(), "", String::new()),
        };
        let _ = writeln!(out, "{:<2} {} {} {} {:.6}", i + 1, headline, category, abs, e.score);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attn_model::{ModelParams, TrainConfig};
    use crate::glove::WordVectors;

    fn item(id: &str, cat: &str, title: &str, toks: &[&str]) -> TokenizedNews {
        TokenizedNews {
            news_id: id.into(),
            category: cat.into(),
            subcategory: "x".into(),
            title: title.into(),
            abstract_text: "An abstract that is certainly longer than forty-eight characters in total.".into(),
            title_tokens: toks.iter().map(|s| s.to_string()).collect(),
            abstract_tokens: vec![],
        }
    }

    fn setup() -> (WordVectors, ModelParams) {
        let tokens: Vec<String> = ["flu", "doctor", "goal", "match"].iter().map(|s| s.to_string()).collect();
        let data = vec![1.0, 0.0, 0.0, 0.2, 0.9, 0.1, 0.0, 1.0, 0.0, 0.3, 0.2, 1.0];
        let config = TrainConfig { heads: 2, d_head: 2, d_attn: 3, ..Default::default() };
        (WordVectors::new(tokens, 3, data).unwrap(), ModelParams::init(3, &config))
    }

    fn corpus() -> Vec<TokenizedNews> {
        vec![
            item("N1", "health", "Flu doctor warns", &["flu", "doctor"]),
            item("N2", "sports", "Goal in the match", &["goal", "match"]),
            item("N3", "health", "Flu doctor warns", &["flu", "doctor"]),
            item("N4", "sports", "Match goal", &["match", "goal"]),
        ]
    }

    #[test]
    fn snippet_truncation() {
        assert_eq!(snippet("short"), "short");
        let long = "a".repeat(60);
        assert_eq!(snippet(&long), format!("{}...", "a".repeat(48)));
        assert_eq!(snippet(&"é".repeat(48)), "é".repeat(48));
    }

    #[test]
    fn recommend_excludes_history() {
        let (emb, p) = setup();
        let s = Scorer { params: &p, embeddings: &emb, max_title_len: 30, max_history: 50 };
        let c = corpus();
        let v = NewsVectors::encode(&c, &s);
        let hist: Vec<String> = vec!["N1".into(), "N2".into()];
        let r = recommend("U1", &hist, &hist, &v, &s, 10).unwrap();
        assert!(r.entries.is_empty());
        assert_eq!(r.generated_from, 2);
        let pool: Vec<String> = c.iter().map(|n| n.news_id.clone()).collect();
        let r = recommend("U1", &hist, &pool, &v, &s, 10).unwrap();
        let ids: Vec<&str> = r.entries.iter().map(|e| e.news_id.as_str()).collect();
        assert_eq!(ids.len(), 2);
        assert!(!ids.contains(&"N1") && !ids.contains(&"N2"));
        for w in r.entries.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        assert!(matches!(recommend("U1", &hist, &[], &v, &s, 10), Err(RetrievalError::EmptyCandidatePool)));
    }

    #[test]
    fn cold_start_ties_by_id() {
        let (emb, p) = setup();
        let s = Scorer { params: &p, embeddings: &emb, max_title_len: 30, max_history: 50 };
        let v = NewsVectors::encode(&corpus(), &s);
        let pool: Vec<String> = vec!["N4".into(), "N2".into(), "N3".into()];
        let r = recommend("U0", &[], &pool, &v, &s, 10).unwrap();
        let ids: Vec<&str> = r.entries.iter().map(|e| e.news_id.as_str()).collect();
        assert_eq!(ids, vec!["N2", "N3", "N4"]);
    }

    #[test]
    fn similar_by_id_and_headline() {
        let (emb, p) = setup();
        let s = Scorer { params: &p, embeddings: &emb, max_title_len: 30, max_history: 50 };
        let c = corpus();
        let v = NewsVectors::encode(&c, &s);
        let r = similar_news(Query::News("N1"), &c, &v, &s, 5, Metric::Euclidean).unwrap();
        assert_eq!(r.neighbors[0].news_id, "N3");
        assert_eq!(r.neighbors[0].distance, 0.0);
        assert_eq!(r.neighbors.len(), 3);
        for w in r.neighbors.windows(2) {
            assert!(w[0].distance <= w[1].distance);
        }
        let toks: Vec<String> = vec!["flu".into(), "doctor".into()];
        let r =
            similar_news(Query::Headline { text: "Flu doctor warns", tokens: &toks }, &c, &v, &s, 5, Metric::Euclidean)
                .unwrap();
        assert!(r.neighbors.iter().all(|n| n.news_id != "N1" && n.news_id != "N3"));
        let r = similar_news(Query::News("N1"), &c[..2], &v, &s, 5, Metric::Cosine).unwrap();
        assert_eq!(r.neighbors.len(), 1);
        let bad: Vec<String> = vec!["zzz".into()];
        let err = similar_news(Query::Headline { text: "zzz", tokens: &bad }, &c, &v, &s, 5, Metric::Euclidean);
        assert!(matches!(err, Err(RetrievalError::Model(ModelError::NoKnownTokens))));
    }

    #[test]
    fn render_layout() {
        let result = SimilarityResult {
            query: "q".into(),
            query_headline: "How Get Rid Skin Tags".into(),
            neighbors: vec![Neighbor {
                news_id: "N1".into(),
                headline: "Flu season is here".into(),
                category: "health".into(),
                abstract_snippet: "Flu season...".into(),
                distance: 3.4641016151,
            }],
        };
        let text = render_similar(&result);
        assert!(text.contains("===== Recommended News : =====\n"));
        assert!(text.contains("News Headline : How Get Rid Skin Tags\n"));
        assert!(text.ends_with("1  Flu season is here health Flu season... 3.464102\n"));
    }

    #[test]
    fn distances() {
        assert_eq!(Metric::Euclidean.distance(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
        assert!(Metric::Cosine.distance(&[1.0, 0.0], &[2.0, 0.0]).abs() < 1e-15);
        assert_eq!("cosine".parse::<Metric>().unwrap(), Metric::Cosine);
        assert!("manhattan".parse::<Metric>().is_err());
    }
}
