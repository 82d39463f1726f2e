//! MIND-format corpus ingestion.
//!
//! `news.tsv` carries eight tab-separated columns per line:
//! `news_id, category, subcategory, title, abstract, url, title_entities, abstract_entities`.
//! `behaviors.tsv` carries five:
//! `impression_id, user_id, time, history, impressions`, where `history` is a
//! space-separated list of news ids and `impressions` a list of `newsid-label`
//! tokens. Neither file has a header row.
//!
//! Malformed lines never abort a parse. Each one is reported as a [`ParseError`]
//! with its 1-based line number and the remaining lines are still returned.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{self, Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NEWS_COLUMNS: usize = 8;
pub const BEHAVIOR_COLUMNS: usize = 5;
pub const DEFAULT_RECENT_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsArticle {
    pub news_id: String,
    pub category: String,
    pub subcategory: String,
    pub title: String,
    /// May be empty; cleaning decides what to do with it.
    pub abstract_text: String,
    pub url: String,
    pub title_entities: String,
    pub abstract_entities: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpressionLog {
    pub impression_id: String,
    pub user_id: String,
    pub timestamp: String,
    /// Clicked news, oldest first. Empty for cold-start users.
    pub history: Vec<String>,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub news_id: String,
    pub clicked: bool,
}

impl Candidate {
    pub fn label(&self) -> u8 {
        u8::from(self.clicked)
    }
}

impl ImpressionLog {
    pub fn labels(&self) -> Vec<u8> {
        self.candidates.iter().map(Candidate::label).collect()
    }

    pub fn positives(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().filter(|c| c.clicked).map(|c| c.news_id.as_str())
    }

    pub fn negatives(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().filter(|c| !c.clicked).map(|c| c.news_id.as_str())
    }

    /// Serializes back to one `behaviors.tsv` line (without the newline).
    pub fn to_tsv_line(&self) -> String {
        let impressions: Vec<String> = self.candidates.iter().map(|c| format!("{}-{}", c.news_id, c.label())).collect();
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.impression_id,
            self.user_id,
            self.timestamp,
            self.history.join(" "),
            impressions.join(" ")
        )
    }
}

impl NewsArticle {
    pub fn to_tsv_line(&self) -> String {
        [
            self.news_id.as_str(),
            &self.category,
            &self.subcategory,
            &self.title,
            &self.abstract_text,
            &self.url,
            &self.title_entities,
            &self.abstract_entities,
        ]
        .join("\t")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSplit {
    pub user_id: String,
    pub history_news: Vec<String>,
    pub recent_news: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: u64,
    pub news: u64,
    pub impressions: u64,
    pub click_behaviors: u64,
    pub words: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("expected {expected} tab-separated columns, found {found}")]
    WrongColumnCount { expected: usize, found: usize },
    #[error("empty news id")]
    EmptyNewsId,
    #[error("line is not valid UTF-8")]
    NonUtf8Line,
    #[error("empty {0} field")]
    EmptyField(&'static str),
    #[error("candidate `{0}` does not end in -0 or -1")]
    BadLabelSuffix(String),
    #[error("impression has no candidates")]
    EmptyCandidates,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    /// 1-based.
    pub line: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Error)]
pub enum PredictionError {
    #[error("impression {impression_id}: ranks {ranks:?} are not a permutation of 1..={len}")]
    NotAPermutation { impression_id: String, ranks: Vec<usize>, len: usize },
    #[error("malformed prediction line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Result of a line-oriented parse: records in input order plus per-line errors.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub errors: Vec<ParseError>,
}

impl<T> Parsed<T> {
    pub fn total_lines(&self) -> usize {
        self.records.len() + self.errors.len()
    }
}

/// Splits a byte buffer into lines the way `BufRead::lines` does: `\n`
/// terminated, optional trailing `\r` removed, no phantom empty last line.
fn split_lines(bytes: &[u8]) -> Vec<&[u8]> {
    let mut lines: Vec<&[u8]> = bytes.split(|&b| b == b'\n').collect();
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        lines.pop();
    }
    lines.into_iter().map(|l| l.strip_suffix(b"\r").unwrap_or(l)).collect()
}

fn parse_lines<T, F>(bytes: &[u8], parallel: bool, parse: F) -> Parsed<T>
where
    T: Send,
    F: Fn(&str) -> Result<T, ParseErrorKind> + Sync,
{
    let lines = split_lines(bytes);
    let one = |(idx, raw): (usize, &&[u8])| -> Result<T, ParseError> {
        let line = idx + 1;
        let text = std::str::from_utf8(raw).map_err(|_| ParseError { line, kind: ParseErrorKind::NonUtf8Line })?;
        parse(text).map_err(|kind| ParseError { line, kind })
    };
    let results: Vec<Result<T, ParseError>> = if parallel {
        lines.par_iter().enumerate().map(one).collect()
    } else {
        lines.iter().enumerate().map(one).collect()
    };

    let mut records = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => errors.push(e),
        }
    }
    Parsed { records, errors }
}

fn columns(line: &str, expected: usize) -> Result<Vec<&str>, ParseErrorKind> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != expected {
        return Err(ParseErrorKind::WrongColumnCount { expected, found: cols.len() });
    }
    Ok(cols)
}

pub fn parse_news_line(line: &str) -> Result<NewsArticle, ParseErrorKind> {
    let c = columns(line, NEWS_COLUMNS)?;
    let news_id = c[0].trim();
    if news_id.is_empty() {
        return Err(ParseErrorKind::EmptyNewsId);
    }
    if c[1].trim().is_empty() {
        return Err(ParseErrorKind::EmptyField("category"));
    }
    if c[2].trim().is_empty() {
        return Err(ParseErrorKind::EmptyField("subcategory"));
    }
    Ok(NewsArticle {
        news_id: news_id.to_string(),
        category: c[1].trim().to_string(),
        subcategory: c[2].trim().to_string(),
        title: c[3].to_string(),
        abstract_text: c[4].to_string(),
        url: c[5].to_string(),
        title_entities: c[6].to_string(),
        abstract_entities: c[7].to_string(),
    })
}

pub fn parse_behavior_line(line: &str) -> Result<ImpressionLog, ParseErrorKind> {
    let c = columns(line, BEHAVIOR_COLUMNS)?;
    if c[0].trim().is_empty() {
        return Err(ParseErrorKind::EmptyField("impression_id"));
    }
    let history = c[3].split_whitespace().map(str::to_string).collect();
    let candidates = c[4]
        .split_whitespace()
        .map(|tok| match tok.rsplit_once('-') {
            Some((id, "1")) if !id.is_empty() => Ok(Candidate { news_id: id.to_string(), clicked: true }),
            Some((id, "0")) if !id.is_empty() => Ok(Candidate { news_id: id.to_string(), clicked: false }),
            _ => Err(ParseErrorKind::BadLabelSuffix(tok.to_string())),
        })
        .collect::<Result<Vec<_>, _>>()?;
    if candidates.is_empty() {
        return Err(ParseErrorKind::EmptyCandidates);
    }
    Ok(ImpressionLog {
        impression_id: c[0].trim().to_string(),
        user_id: c[1].trim().to_string(),
        timestamp: c[2].to_string(),
        history,
        candidates,
    })
}

/// Parses `news.tsv` content. With `parallel` set, lines are parsed on the
/// rayon pool; the merged output is identical to the sequential one.
pub fn parse_news_bytes(bytes: &[u8], parallel: bool) -> Parsed<NewsArticle> {
    parse_lines(bytes, parallel, parse_news_line)
}

pub fn parse_behaviors_bytes(bytes: &[u8], parallel: bool) -> Parsed<ImpressionLog> {
    parse_lines(bytes, parallel, parse_behavior_line)
}

pub fn parse_news<R: Read>(mut reader: R, parallel: bool) -> io::Result<Parsed<NewsArticle>> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    Ok(parse_news_bytes(&buf, parallel))
}

pub fn parse_behaviors<R: Read>(mut reader: R, parallel: bool) -> io::Result<Parsed<ImpressionLog>> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    Ok(parse_behaviors_bytes(&buf, parallel))
}

pub fn write_behaviors<W: Write>(logs: &[ImpressionLog], mut sink: W) -> io::Result<()> {
    for log in logs {
        writeln!(sink, "{}", log.to_tsv_line())?;
    }
    Ok(())
}

pub fn write_news<W: Write>(news: &[NewsArticle], mut sink: W) -> io::Result<()> {
    for n in news {
        writeln!(sink, "{}", n.to_tsv_line())?;
    }
    Ok(())
}

/// A user's click sequence: history entries and clicked candidates in file
/// order, each news id kept at its first occurrence.
fn user_clicks(logs: &[ImpressionLog]) -> Vec<(String, Vec<String>)> {
    let mut order: Vec<String> = Vec::new();
    let mut clicks: HashMap<&str, (Vec<String>, HashSet<&str>)> = HashMap::new();
    for log in logs {
        let entry = clicks.entry(log.user_id.as_str()).or_insert_with(|| {
            order.push(log.user_id.clone());
            (Vec::new(), HashSet::new())
        });
        for id in log.history.iter().map(String::as_str).chain(log.positives()) {
            if entry.1.insert(id) {
                entry.0.push(id.to_string());
            }
        }
    }
    order
        .into_iter()
        .map(|u| {
            let seq = clicks.remove(u.as_str()).map(|e| e.0).unwrap_or_default();
            (u, seq)
        })
        .collect()
}

/// Splits each user's chronological clicks into history and recent news: the
/// last `ceil(recent_fraction * n)` clicks are recent. Users appear in order of
/// first occurrence.
pub fn split_user_data(logs: &[ImpressionLog], recent_fraction: f64) -> Vec<UserSplit> {
    assert!(
        recent_fraction > 0.0 && recent_fraction < 1.0,
        "recent_fraction must lie in (0, 1), got {recent_fraction}"
    );
    user_clicks(logs)
        .into_iter()
        .map(|(user_id, mut clicks)| {
            let n = clicks.len();
            let recent = ((recent_fraction * n as f64).ceil() as usize).min(n);
            let recent_news = clicks.split_off(n - recent);
            UserSplit { user_id, history_news: clicks, recent_news }
        })
        .collect()
}

pub fn compute_stats(news: &[NewsArticle], logs: &[ImpressionLog]) -> DatasetStats {
    let users: HashSet<&str> = logs.iter().map(|l| l.user_id.as_str()).collect();
    let click_behaviors = logs.iter().map(|l| (l.history.len() + l.positives().count()) as u64).sum();
    let words = news
        .iter()
        .map(|n| (n.title.split_whitespace().count() + n.abstract_text.split_whitespace().count()) as u64)
        .sum();
    DatasetStats {
        users: users.len() as u64,
        news: news.len() as u64,
        impressions: logs.len() as u64,
        click_behaviors,
        words,
    }
}

/// 1-based ranks by descending score; ties keep candidate order.
pub fn ranks_from_scores(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    let mut ranks = vec![0; scores.len()];
    for (pos, &idx) in order.iter().enumerate() {
        ranks[idx] = pos + 1;
    }
    ranks
}

fn is_permutation(ranks: &[usize]) -> bool {
    let mut seen = vec![false; ranks.len()];
    for &r in ranks {
        if r == 0 || r > ranks.len() || seen[r - 1] {
            return false;
        }
        seen[r - 1] = true;
    }
    true
}

/// Numeric ids sort by value, and come before non-numeric ids, which sort
/// lexicographically.
fn impression_id_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// Writes leaderboard-style `prediction.txt`: `ImpressionID [r1,r2,...]` per
/// line, ranks in candidate order, lines sorted by impression id.
pub fn write_predictions<W: Write>(ranked: &[(String, Vec<usize>)], mut sink: W) -> Result<(), PredictionError> {
    for (id, ranks) in ranked {
        if !is_permutation(ranks) {
            return Err(PredictionError::NotAPermutation {
                impression_id: id.clone(),
                ranks: ranks.clone(),
                len: ranks.len(),
            });
        }
    }
    let mut sorted: Vec<&(String, Vec<usize>)> = ranked.iter().collect();
    sorted.sort_by(|a, b| impression_id_order(&a.0, &b.0));
    for (id, ranks) in sorted {
        let body: Vec<String> = ranks.iter().map(usize::to_string).collect();
        writeln!(sink, "{} [{}]", id, body.join(","))?;
    }
    Ok(())
}

pub fn read_predictions<R: Read>(mut reader: R) -> Result<Vec<(String, Vec<usize>)>, PredictionError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let malformed = |reason: &str| PredictionError::Malformed { line: i + 1, reason: reason.to_string() };
        let (id, rest) = line.split_once(' ').ok_or_else(|| malformed("missing space"))?;
        let inner =
            rest.strip_prefix('[').and_then(|r| r.strip_suffix(']')).ok_or_else(|| malformed("ranks not bracketed"))?;
        let ranks = inner
            .split(',')
            .map(|r| r.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| malformed("non-integer rank"))?;
        if !is_permutation(&ranks) {
            return Err(PredictionError::NotAPermutation { impression_id: id.to_string(), len: ranks.len(), ranks });
        }
        out.push((id.to_string(), ranks));
    }
    Ok(out)
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "users={} news={} impressions={} click_behaviors={} words={}",
            self.users, self.news, self.impressions, self.click_behaviors, self.words
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "N1\tsports\tgolf\tPGA Tour winners\tA gallery.\thttp://x\t[]\t[]";

    #[test]
    fn news_line_maps_fields() {
        let a = parse_news_line(GOOD).unwrap();
        assert_eq!(a.news_id, "N1");
        assert_eq!(a.category, "sports");
        assert_eq!(a.subcategory, "golf");
        assert_eq!(a.title, "PGA Tour winners");
        assert_eq!(a.abstract_text, "A gallery.");
        assert_eq!(a.url, "http://x");
        assert_eq!(a.title_entities, "[]");
    }

    #[test]
    fn seven_columns_is_an_error() {
        let line = "N1\tsports\tgolf\tPGA Tour winners\tA gallery.\thttp://x\t[]";
        assert_eq!(parse_news_line(line), Err(ParseErrorKind::WrongColumnCount { expected: 8, found: 7 }));
    }

    #[test]
    fn empty_news_id() {
        let line = "\tsports\tgolf\tt\ta\tu\t[]\t[]";
        assert_eq!(parse_news_line(line), Err(ParseErrorKind::EmptyNewsId));
    }

    #[test]
    fn twenty_line_fixture_with_two_bad_lines() {
        let mut text = String::new();
        for i in 0..20 {
            match i {
                // 7 columns
                4 => text.push_str("N4\tnews\tpolitics\ttitle\tabs\turl\t[]\n"),
                // empty id
                13 => text.push_str("\tnews\tpolitics\ttitle\tabs\turl\t[]\t[]\n"),
                _ => text.push_str(&format!("N{i}\tnews\tpolitics\ttitle {i}\tabs\turl\t[]\t[]\n")),
            }
        }
        let parsed = parse_news_bytes(text.as_bytes(), false);
        assert_eq!(parsed.records.len(), 18);
        assert_eq!(parsed.errors.len(), 2);
        assert_eq!(parsed.errors[0].line, 5);
        assert_eq!(parsed.errors[1].line, 14);
        assert_eq!(parsed.errors[1].kind, ParseErrorKind::EmptyNewsId);
        assert_eq!(parse_news_bytes(text.as_bytes(), true), parsed);
    }

    #[test]
    fn non_utf8_line_is_reported_not_fatal() {
        let mut bytes = GOOD.as_bytes().to_vec();
        bytes.push(b'\n');
        bytes.extend_from_slice(b"N2\t\xff\xfe\n");
        bytes.extend_from_slice(GOOD.as_bytes());
        let parsed = parse_news_bytes(&bytes, false);
        assert_eq!(parsed.records.len(), 2);
        assert_eq!(parsed.errors, vec![ParseError { line: 2, kind: ParseErrorKind::NonUtf8Line }]);
    }

    #[test]
    fn crlf_lines() {
        let text = format!("{GOOD}\r\n{GOOD}\r\n");
        let parsed = parse_news_bytes(text.as_bytes(), false);
        assert_eq!(parsed.records.len(), 2);
        assert_eq!(parsed.records[0].abstract_entities, "[]");
    }

    #[test]
    fn behaviors_candidates_and_labels() {
        let log = parse_behavior_line("1\tU1\t11/11/2019 9:05:58 AM\tN1 N2\tN5-1 N7-0 N9-0").unwrap();
        assert_eq!(log.history, vec!["N1", "N2"]);
        assert_eq!(log.labels(), vec![1, 0, 0]);
        let ids: Vec<&str> = log.candidates.iter().map(|c| c.news_id.as_str()).collect();
        assert_eq!(ids, vec!["N5", "N7", "N9"]);
    }

    #[test]
    fn empty_history_is_cold_start() {
        let log = parse_behavior_line("2\tU2\tt\t\tN5-1").unwrap();
        assert!(log.history.is_empty());
    }

    #[test]
    fn behavior_errors() {
        assert_eq!(parse_behavior_line("1\tU\tt\t\tN5-2"), Err(ParseErrorKind::BadLabelSuffix("N5-2".into())));
        assert_eq!(parse_behavior_line("1\tU\tt\t\tN5"), Err(ParseErrorKind::BadLabelSuffix("N5".into())));
        assert_eq!(parse_behavior_line("1\tU\tt\tN1\t  "), Err(ParseErrorKind::EmptyCandidates));
        assert!(matches!(
            parse_behavior_line("1\tU\tt\tN1"),
            Err(ParseErrorKind::WrongColumnCount { expected: 5, found: 4 })
        ));
    }

    fn log(user: &str, history: &[&str], cands: &[(&str, bool)]) -> ImpressionLog {
        ImpressionLog {
            impression_id: format!("I-{user}"),
            user_id: user.into(),
            timestamp: String::new(),
            history: history.iter().map(|s| s.to_string()).collect(),
            candidates: cands.iter().map(|(id, c)| Candidate { news_id: id.to_string(), clicked: *c }).collect(),
        }
    }

    #[test]
    fn split_quarter_of_four() {
        let logs = vec![log("u", &["a", "b", "c"], &[("d", true), ("x", false)])];
        let split = split_user_data(&logs, 0.25);
        assert_eq!(split[0].history_news, vec!["a", "b", "c"]);
        assert_eq!(split[0].recent_news, vec!["d"]);
    }

    #[test]
    fn split_single_click_and_empty() {
        let logs = vec![log("u", &[], &[("a", true)])];
        let split = split_user_data(&logs, 0.5);
        assert!(split[0].history_news.is_empty());
        assert_eq!(split[0].recent_news, vec!["a"]);
        assert!(split_user_data(&[], 0.2).is_empty());
    }

    #[test]
    fn split_across_impressions_in_file_order() {
        let logs = vec![
            log("u", &["a", "b"], &[("c", true)]),
            log("v", &[], &[("z", true)]),
            log("u", &["a", "b"], &[("d", true), ("e", false)]),
        ];
        let split = split_user_data(&logs, DEFAULT_RECENT_FRACTION);
        assert_eq!(split.len(), 2);
        assert_eq!(split[0].user_id, "u");
        assert_eq!(split[0].history_news, vec!["a", "b", "c"]);
        assert_eq!(split[0].recent_news, vec!["d"]);
    }

    #[test]
    fn stats_empty_and_hand_counted() {
        assert_eq!(compute_stats(&[], &[]), DatasetStats::default());

        let news = parse_news_bytes(
            b"N1\tsports\tgolf\tPGA Tour winners\tA gallery.\tu\t[]\t[]\n\
              N2\thealth\tmed\tFlu season is here\t\tu\t[]\t[]\n\
              N3\tnews\tus\tOne\tTwo words\tu\t[]\t[]\n",
            false,
        )
        .records;
        let logs = parse_behaviors_bytes(
            b"1\tU1\tt\tN1 N2\tN3-1 N1-0\n2\tU2\tt\t\tN2-1 N3-1 N1-0\n3\tU1\tt\tN1 N2\tN3-0\n",
            false,
        )
        .records;
        let s = compute_stats(&news, &logs);
        // words: 3+2 + 4+0 + 1+2 = 12; clicks: (2+1) + (0+2) + (2+0) = 7
        assert_eq!(s, DatasetStats { users: 2, news: 3, impressions: 3, click_behaviors: 7, words: 12 });
    }

    #[test]
    fn ranks_descending_score() {
        assert_eq!(ranks_from_scores(&[0.9, 0.1, 0.5]), vec![1, 3, 2]);
        assert_eq!(ranks_from_scores(&[0.5, 0.5]), vec![1, 2]);
    }

    #[test]
    fn prediction_lines() {
        let mut out = Vec::new();
        write_predictions(&[("I2".into(), vec![1]), ("I1".into(), ranks_from_scores(&[0.9, 0.1, 0.5]))], &mut out)
            .unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "I1 [1,3,2]\nI2 [1]\n");
    }

    #[test]
    fn numeric_impression_ids_sort_by_value() {
        let mut out = Vec::new();
        write_predictions(&[("10".into(), vec![1]), ("2".into(), vec![1])], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "2 [1]\n10 [1]\n");
    }

    #[test]
    fn duplicate_rank_rejected() {
        let err = write_predictions(&[("I1".into(), vec![1, 1])], Vec::new()).unwrap_err();
        assert!(matches!(err, PredictionError::NotAPermutation { .. }));
    }
}
