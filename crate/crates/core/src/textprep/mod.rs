//! Two-stage content preprocessing.
//!
//! Record-level cleaning ([`clean_corpus`]) drops duplicate ids, records with a
//! blank title or abstract, and records whose title has three or fewer
//! whitespace tokens. Token-level normalization ([`Preprocessor`]) lowercases
//! and tokenizes, removes stopwords, then applies the Porter stemmer.

mod porter;

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mind_io::NewsArticle;

pub use porter::stem;

/// 179-word English lexicon, one token per line.
pub const BUNDLED_STOPWORDS: &str = include_str!("../../assets/stopwords_en.txt");

/// Titles with this many whitespace tokens or fewer are removed.
pub const MIN_TITLE_TOKENS_EXCLUSIVE: usize = 3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub removed_duplicates: usize,
    pub removed_nan: usize,
    pub removed_short_title: usize,
    pub kept: usize,
}

impl CleanReport {
    pub fn input_size(&self) -> usize {
        self.removed_duplicates + self.removed_nan + self.removed_short_title + self.kept
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedNews {
    pub news_id: String,
    pub category: String,
    pub subcategory: String,
    /// Raw title and abstract, kept for display and raw-length statistics.
    pub title: String,
    pub abstract_text: String,
    pub title_tokens: Vec<String>,
    pub abstract_tokens: Vec<String>,
}

impl TokenizedNews {
    /// Title followed by abstract: the co-occurrence document for this item.
    pub fn document(&self) -> impl Iterator<Item = &str> {
        self.title_tokens.iter().chain(&self.abstract_tokens).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PreprocessError {
    #[error("news {0}: every title token was removed")]
    AllTokensRemoved(String),
}

fn is_blank(s: &str) -> bool {
    s.trim().is_empty()
}

/// Cleans a parsed corpus. A record is removed, in this order of precedence,
/// when its id was already seen earlier in the input, when its title or
/// abstract is blank, or when its title has at most three whitespace tokens.
pub fn clean_corpus(articles: Vec<NewsArticle>) -> (Vec<NewsArticle>, CleanReport) {
    let mut seen = HashSet::new();
    let mut report = CleanReport::default();
    let mut kept = Vec::with_capacity(articles.len());
    for a in articles {
        if !seen.insert(a.news_id.clone()) {
            report.removed_duplicates += 1;
        } else if is_blank(&a.title) || is_blank(&a.abstract_text) {
            report.removed_nan += 1;
        } else if a.title.split_whitespace().count() <= MIN_TITLE_TOKENS_EXCLUSIVE {
            report.removed_short_title += 1;
        } else {
            kept.push(a);
        }
    }
    report.kept = kept.len();
    (kept, report)
}

/// Lowercases, splits on Unicode whitespace and trims non-alphanumeric
/// characters from both ends of each token. Interior punctuation such as
/// apostrophes and hyphens survives.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| raw.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    pub fn parse(lexicon: &str) -> Self {
        Stopwords(lexicon.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_lowercase).collect())
    }

    pub fn from_file(path: &Path) -> io::Result<Self> {
        Ok(Self::parse(&fs::read_to_string(path)?))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for Stopwords {
    fn default() -> Self {
        Self::parse(BUNDLED_STOPWORDS)
    }
}

pub fn remove_stopwords(tokens: Vec<String>, stopwords: &Stopwords) -> Vec<String> {
    tokens.into_iter().filter(|t| !stopwords.contains(t)).collect()
}

#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub stopwords: Stopwords,
    pub stem: bool,
    /// Reserved: no dictionary lemmatizer ships, so this must stay off.
    pub lemmatize: bool,
}

impl Default for Preprocessor {
    fn default() -> Self {
        Preprocessor { stopwords: Stopwords::default(), stem: true, lemmatize: false }
    }
}

impl Preprocessor {
    pub fn with_stopwords(stopwords: Stopwords) -> Self {
        Preprocessor { stopwords, ..Default::default() }
    }

    /// Tokens after stopword removal, before stemming.
    pub fn surface_tokens(&self, text: &str) -> Vec<String> {
        remove_stopwords(tokenize(text), &self.stopwords)
    }

    pub fn normalize(&self, text: &str) -> Vec<String> {
        let tokens = self.surface_tokens(text);
        if self.stem {
            tokens.iter().map(|t| stem(t)).collect()
        } else {
            tokens
        }
    }

    pub fn preprocess_article(&self, article: &NewsArticle) -> Result<TokenizedNews, PreprocessError> {
        let title_tokens = self.normalize(&article.title);
        if title_tokens.is_empty() {
            return Err(PreprocessError::AllTokensRemoved(article.news_id.clone()));
        }
        Ok(TokenizedNews {
            news_id: article.news_id.clone(),
            category: article.category.clone(),
            subcategory: article.subcategory.clone(),
            title: article.title.clone(),
            abstract_text: article.abstract_text.clone(),
            title_tokens,
            abstract_tokens: self.normalize(&article.abstract_text),
        })
    }
}

/// Serializes tokenized news as one TSV line:
/// `news_id, category, subcategory, title, abstract, title_tokens, abstract_tokens`
/// with tokens space-joined.
pub fn tokenized_to_tsv_line(n: &TokenizedNews) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
        n.news_id,
        n.category,
        n.subcategory,
        n.title,
        n.abstract_text,
        n.title_tokens.join(" "),
        n.abstract_tokens.join(" ")
    )
}

pub fn tokenized_from_tsv_line(line: &str) -> Option<TokenizedNews> {
    let c: Vec<&str> = line.split('\t').collect();
    if c.len() != 7 || c[0].is_empty() {
        return None;
    }
    let toks = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    Some(TokenizedNews {
        news_id: c[0].to_string(),
        category: c[1].to_string(),
        subcategory: c[2].to_string(),
        title: c[3].to_string(),
        abstract_text: c[4].to_string(),
        title_tokens: toks(c[5]),
        abstract_tokens: toks(c[6]),
    })
}
