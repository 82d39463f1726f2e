//! Corpus summaries as plot-ready tables.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textprep::TokenizedNews;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalyticsError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("unknown category {0}")]
    UnknownCategory(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub category: String,
    pub subcategory: String,
    pub count: u64,
}

/// Rows sorted by descending count, then category, then subcategory.
pub type CategoryDistribution = Vec<CategoryCount>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordFrequencyTable {
    pub category: String,
    pub entries: Vec<(String, u64)>,
}

/// Title length in tokens to number of titles.
pub type TitleLengthHistogram = BTreeMap<usize, u64>;

pub fn category_distribution(news: &[TokenizedNews]) -> Result<CategoryDistribution, AnalyticsError> {
    if news.is_empty() {
        return Err(AnalyticsError::EmptyCorpus);
    }
    let mut counts: HashMap<(&str, &str), u64> = HashMap::new();
    for n in news {
        *counts.entry((&n.category, &n.subcategory)).or_default() += 1;
    }
    let mut rows: Vec<CategoryCount> = counts
        .into_iter()
        .map(|((c, s), count)| CategoryCount { category: c.to_string(), subcategory: s.to_string(), count })
        .collect();
    rows.sort_by(|a, b| {
        b.count.cmp(&a.count).then_with(|| a.category.cmp(&b.category)).then_with(|| a.subcategory.cmp(&b.subcategory))
    });
    Ok(rows)
}

/// Categories in order of first appearance.
pub fn categories(news: &[TokenizedNews]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for n in news {
        if !out.contains(&n.category) {
            out.push(n.category.clone());
        }
    }
    out
}

/// Title and abstract token counts within one category, top `top_k` by
/// descending count with ties in token order.
pub fn word_frequencies(
    news: &[TokenizedNews],
    category: &str,
    top_k: usize,
) -> Result<WordFrequencyTable, AnalyticsError> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    let mut found = false;
    for n in news.iter().filter(|n| n.category == category) {
        found = true;
        for t in n.document() {
            *counts.entry(t).or_default() += 1;
        }
    }
    if !found {
        return Err(AnalyticsError::UnknownCategory(category.to_string()));
    }
    let mut entries: Vec<(String, u64)> = counts.into_iter().map(|(t, c)| (t.to_string(), c)).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(top_k);
    Ok(WordFrequencyTable { category: category.to_string(), entries })
}

/// Whitespace-token lengths of raw titles, or of normalized title tokens.
pub fn title_length_histogram(
    news: &[TokenizedNews],
    use_raw_titles: bool,
) -> Result<TitleLengthHistogram, AnalyticsError> {
    if news.is_empty() {
        return Err(AnalyticsError::EmptyCorpus);
    }
    let mut hist = BTreeMap::new();
    for n in news {
        let len = if use_raw_titles { n.title.split_whitespace().count() } else { n.title_tokens.len() };
        *hist.entry(len).or_default() += 1;
    }
    Ok(hist)
}

pub fn histogram_mean(hist: &TitleLengthHistogram) -> f64 {
    let total: u64 = hist.values().sum();
    let weighted: u64 = hist.iter().map(|(&k, &v)| k as u64 * v).sum();
    weighted as f64 / total as f64
}

pub fn write_categories_csv<W: Write>(rows: &[CategoryCount], mut w: W) -> io::Result<()> {
    writeln!(w, "category,subcategory,count")?;
    for r in rows {
        writeln!(w, "{},{},{}", csv_field(&r.category), csv_field(&r.subcategory), r.count)?;
    }
    Ok(())
}

pub fn write_wordfreq_csv<W: Write>(table: &WordFrequencyTable, mut w: W) -> io::Result<()> {
    writeln!(w, "token,count")?;
    for (t, c) in &table.entries {
        writeln!(w, "{},{}", csv_field(t), c)?;
    }
    Ok(())
}

pub fn write_histogram_csv<W: Write>(hist: &TitleLengthHistogram, mut w: W) -> io::Result<()> {
    writeln!(w, "length,count")?;
    for (k, v) in hist {
        writeln!(w, "{k},{v}")?;
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Everything in one document for `analytics.json`.
pub fn bundle_json(
    categories: &[CategoryCount],
    words: &[WordFrequencyTable],
    hist: &TitleLengthHistogram,
    use_raw_titles: bool,
) -> serde_json::Value {
    let words: serde_json::Map<String, serde_json::Value> = words
        .iter()
        .map(|t| {
            let rows = t.entries.iter().map(|(tok, c)| serde_json::json!({"token": tok, "count": c})).collect();
            (t.category.clone(), serde_json::Value::Array(rows))
        })
        .collect();
    let hist_rows: Vec<_> = hist.iter().map(|(k, v)| serde_json::json!({"length": k, "count": v})).collect();
    serde_json::json!({
        "categories": categories,
        "word_frequencies": words,
        "title_length": {
            "raw_titles": use_raw_titles,
            "histogram": hist_rows,
            "mean": histogram_mean(hist),
        },
    })
}
