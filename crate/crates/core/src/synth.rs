//! Synthetic MIND-format corpus with planted category preferences.
//!
//! Every user clicks news from exactly one category. Titles and abstracts mix
//! category-specific words with shared filler and stopwords, so a model can
//! only rank well by learning which words go with which category.

use std::fs;
use std::io::{self, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mind_io::{write_behaviors, write_news, Candidate, ImpressionLog, NewsArticle};

const CATEGORIES: [(&str, [&str; 2], &[&str]); 5] = [
    (
        "sports",
        ["football", "tennis"],
        &[
            "coach",
            "striker",
            "league",
            "playoff",
            "stadium",
            "referee",
            "goalkeeper",
            "tournament",
            "championship",
            "quarterback",
            "touchdown",
            "penalty",
            "season",
            "roster",
            "draft",
            "midfielder",
            "racket",
            "umpire",
            "trophy",
            "rookie",
            "injury",
            "overtime",
            "scoreboard",
            "pitch",
            "defender",
            "athlete",
            "medal",
            "sprint",
            "halftime",
            "kickoff",
        ],
    ),
    (
        "health",
        ["medical", "fitness"],
        &[
            "doctor",
            "vaccine",
            "flu",
            "diabetes",
            "cancer",
            "therapy",
            "symptom",
            "nutrition",
            "cardio",
            "hospital",
            "nurse",
            "dermatologist",
            "allergy",
            "immune",
            "virus",
            "clinic",
            "surgery",
            "vitamin",
            "arthritis",
            "headache",
            "protein",
            "workout",
            "cholesterol",
            "sleep",
            "diet",
            "patient",
            "skin",
            "blood",
            "infection",
            "prescription",
        ],
    ),
    (
        "news",
        ["politics", "world"],
        &[
            "senator",
            "election",
            "congress",
            "governor",
            "ballot",
            "campaign",
            "president",
            "policy",
            "lawmaker",
            "treaty",
            "embassy",
            "minister",
            "parliament",
            "vote",
            "diplomat",
            "sanction",
            "protest",
            "court",
            "justice",
            "mayor",
            "legislation",
            "candidate",
            "debate",
            "summit",
            "reform",
            "referendum",
            "cabinet",
            "veto",
            "impeachment",
            "coalition",
        ],
    ),
    (
        "finance",
        ["markets", "personal"],
        &[
            "stock",
            "investor",
            "dividend",
            "mortgage",
            "inflation",
            "portfolio",
            "bond",
            "earnings",
            "nasdaq",
            "retirement",
            "savings",
            "interest",
            "banker",
            "loan",
            "credit",
            "budget",
            "tax",
            "revenue",
            "profit",
            "hedge",
            "crypto",
            "pension",
            "wallet",
            "debt",
            "equity",
            "broker",
            "recession",
            "shareholder",
            "insurance",
            "valuation",
        ],
    ),
    (
        "travel",
        ["destinations", "tips"],
        &[
            "beach",
            "airline",
            "passport",
            "hotel",
            "cruise",
            "resort",
            "island",
            "luggage",
            "itinerary",
            "flight",
            "airport",
            "vacation",
            "tourist",
            "museum",
            "hiking",
            "camping",
            "backpack",
            "villa",
            "passenger",
            "visa",
            "landmark",
            "safari",
            "ferry",
            "glacier",
            "canyon",
            "souvenir",
            "hostel",
            "road",
            "trip",
            "scenery",
        ],
    ),
];

const FILLER: &[&str] = &[
    "new", "report", "says", "week", "year", "people", "first", "big", "day", "best", "time", "way", "world", "things",
    "know", "look", "story", "latest", "major", "plan", "local", "family", "state", "change", "news", "video",
    "photos", "list", "top", "ever", "really", "still", "could", "might", "today", "months", "home", "life", "future",
    "team",
];

const STOPWORDS: &[&str] =
    &["the", "a", "of", "to", "in", "for", "and", "is", "on", "with", "how", "why", "what", "your", "at"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureConfig {
    pub news: usize,
    pub categories: usize,
    pub users: usize,
    pub impressions_per_user: usize,
    /// Fraction of each user's impressions, latest first, held out for test.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig { news: 500, categories: 5, users: 200, impressions_per_user: 10, test_fraction: 0.2, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub news: Vec<NewsArticle>,
    pub train: Vec<ImpressionLog>,
    pub test: Vec<ImpressionLog>,
    /// `(user_id, category)` for every user.
    pub preferences: Vec<(String, String)>,
}

fn sentence(rng: &mut ChaCha8Rng, topical: &[&str], len: usize, topical_share: f64) -> Vec<String> {
    let mut words: Vec<String> = (0..len)
        .map(|_| {
            let r: f64 = rng.gen();
            if r < topical_share {
                topical.choose(rng).expect("words")
            } else if r < topical_share + 0.25 {
                STOPWORDS.choose(rng).expect("words")
            } else {
                FILLER.choose(rng).expect("words")
            }
            .to_string()
        })
        .collect();
    // at least two category words in every title or abstract
    loop {
        let plain: Vec<usize> = (0..len).filter(|&i| !topical.contains(&words[i].as_str())).collect();
        if len - plain.len() >= 2.min(len) {
            return words;
        }
        let i = *plain.choose(rng).expect("non-topical slot");
        words[i] = topical.choose(rng).expect("words").to_string();
    }
}

fn capitalize(words: &[String]) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.get(..1) {
        let upper = first.to_uppercase();
        s.replace_range(..1, &upper);
    }
    s
}

pub fn generate(config: &FixtureConfig) -> Fixture {
    assert!(
        (1..=CATEGORIES.len()).contains(&config.categories),
        "categories must be between 1 and {}",
        CATEGORIES.len()
    );
    assert!(config.categories >= 2, "negatives need a second category");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cats = &CATEGORIES[..config.categories];

    let mut by_category: Vec<Vec<usize>> = vec![Vec::new(); cats.len()];
    let news: Vec<NewsArticle> = (0..config.news)
        .map(|i| {
            let c = i % cats.len();
            by_category[c].push(i);
            let (name, subs, words) = cats[c];
            let title_len = rng.gen_range(6..=12);
            let abs_len = rng.gen_range(10..=20);
            let title = sentence(&mut rng, words, title_len, 0.45);
            let abs = sentence(&mut rng, words, abs_len, 0.35);
            NewsArticle {
                news_id: format!("N{}", i + 1),
                category: name.to_string(),
                subcategory: subs[rng.gen_range(0..2)].to_string(),
                title: capitalize(&title),
                abstract_text: format!("{}.", capitalize(&abs)),
                url: format!("https://example.com/news/{}", i + 1),
                title_entities: "[]".into(),
                abstract_entities: "[]".into(),
            }
        })
        .collect();

    let preferences: Vec<(String, String)> =
        (0..config.users).map(|u| (format!("U{}", u + 1), cats[u % cats.len()].0.to_string())).collect();
    let histories: Vec<Vec<usize>> = (0..config.users)
        .map(|u| {
            let pool = &by_category[u % cats.len()];
            let n = rng.gen_range(5..=15).min(pool.len().saturating_sub(2));
            pool.choose_multiple(&mut rng, n).copied().collect()
        })
        .collect();

    let n_test = ((config.impressions_per_user as f64) * config.test_fraction).round() as usize;
    let n_train = config.impressions_per_user - n_test;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    let mut imp_id = 0;
    for round in 0..config.impressions_per_user {
        for u in 0..config.users {
            imp_id += 1;
            let c = u % cats.len();
            let fresh: Vec<usize> = by_category[c].iter().copied().filter(|i| !histories[u].contains(i)).collect();
            let others: Vec<usize> =
                (0..cats.len()).filter(|&o| o != c).flat_map(|o| by_category[o].iter().copied()).collect();
            let n_pos = rng.gen_range(1..=2).min(fresh.len());
            let n_neg = rng.gen_range(4..=8).min(others.len());
            let mut cands: Vec<Candidate> = fresh
                .choose_multiple(&mut rng, n_pos)
                .map(|&i| Candidate { news_id: news[i].news_id.clone(), clicked: true })
                .chain(
                    others
                        .choose_multiple(&mut rng, n_neg)
                        .map(|&i| Candidate { news_id: news[i].news_id.clone(), clicked: false }),
                )
                .collect();
            cands.shuffle(&mut rng);
            let minutes = imp_id as u64;
            let log = ImpressionLog {
                impression_id: imp_id.to_string(),
                user_id: preferences[u].0.clone(),
                timestamp: format!("11/{:02}/2019 {}:{:02}:00 AM", 9 + round, 1 + (minutes / 60) % 11, minutes % 60),
                history: histories[u].iter().map(|&i| news[i].news_id.clone()).collect(),
                candidates: cands,
            };
            if round < n_train {
                train.push(log);
            } else {
                test.push(log);
            }
        }
    }
    Fixture { news, train, test, preferences }
}

/// Writes `train/` and `test/` directories, each with `news.tsv` and
/// `behaviors.tsv` in MIND layout.
pub fn write_fixture(fixture: &Fixture, dir: &Path) -> io::Result<()> {
    for (split, logs) in [("train", &fixture.train), ("test", &fixture.test)] {
        let d = dir.join(split);
        fs::create_dir_all(&d)?;
        write_news(&fixture.news, BufWriter::new(fs::File::create(d.join("news.tsv"))?))?;
        write_behaviors(logs, BufWriter::new(fs::File::create(d.join("behaviors.tsv"))?))?;
    }
    Ok(())
}
