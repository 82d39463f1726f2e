//! The JSON run configuration: one section per module, every field optional.

use std::path::{Path, PathBuf};

use anyhow::Result;
use mindrec::attn_model::TrainConfig;
use mindrec::glove::GloveConfig;
use mindrec::mind_io::DEFAULT_RECENT_FRACTION;
use mindrec::retrieval::Metric;
use mindrec::synth::FixtureConfig;
use serde::{Deserialize, Serialize};

use crate::error::config_error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareConfig {
    /// Share of each user's click sequence held out as recent news.
    pub recent_fraction: f64,
    pub stem: bool,
    /// Stopword lexicon, one word per line. The bundled list when unset.
    pub stopwords: Option<PathBuf>,
    /// Malformed lines tolerated per input file before the run fails.
    pub max_parse_errors: usize,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig { recent_fraction: DEFAULT_RECENT_FRACTION, stem: true, stopwords: None, max_parse_errors: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    /// The trained model.
    #[default]
    Model,
    /// Uniform random scores.
    Random,
    /// Scores equal to the labels.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub scorer: ScorerKind,
    /// Seed of the random scorer.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub top_n: usize,
    pub metric: Metric,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { top_n: 10, metric: Metric::Euclidean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticsConfig {
    pub top_k: usize,
    /// Histogram over raw title words instead of normalized tokens.
    pub raw_titles: bool,
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        AnalyticsConfig { top_k: 20, raw_titles: false }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub prepare: PrepareConfig,
    pub glove: GloveConfig,
    pub model: TrainConfig,
    pub evaluate: EvaluateConfig,
    pub retrieval: RetrievalConfig,
    pub analytics: AnalyticsConfig,
    pub fixture: FixtureConfig,
}

impl FileConfig {
    /// Reads the file, or the defaults when there is none. Any problem with
    /// the file itself is a configuration error.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_error(format!("config {}: {e}", path.display())))
    }

    /// One seed for every seeded module.
    pub fn set_seed(&mut self, seed: u64) {
        self.glove.seed = seed;
        self.model.seed = seed;
        self.evaluate.seed = seed;
        self.fixture.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.glove.validate().map_err(|e| config_error(e.to_string()))?;
        self.model.validate().map_err(|e| config_error(e.to_string()))?;
        let f = self.prepare.recent_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(config_error("prepare.recent_fraction must lie in (0, 1)"));
        }
        if self.retrieval.top_n == 0 {
            return Err(config_error("retrieval.top_n must be >= 1"));
        }
        if self.analytics.top_k == 0 {
            return Err(config_error("analytics.top_k must be >= 1"));
        }
        let fx = &self.fixture;
        if fx.news == 0 || fx.users == 0 || fx.impressions_per_user == 0 || fx.categories == 0 {
            return Err(config_error("fixture sizes must be >= 1"));
        }
        if !(fx.test_fraction >= 0.0 && fx.test_fraction < 1.0) {
            return Err(config_error("fixture.test_fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}
