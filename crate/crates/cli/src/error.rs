//! Exit-code classes and the mapping from library errors onto them.

use std::fmt;

use mindrec::analytics::AnalyticsError;
use mindrec::attn_model::ModelError;
use mindrec::glove::GloveError;
use mindrec::mind_io::PredictionError;
use mindrec::ranking_eval::MetricError;
use mindrec::retrieval::RetrievalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Config = 2,
    Input = 3,
    Divergence = 4,
    Degenerate = 5,
}

#[derive(Debug)]
pub struct Classified {
    pub class: ExitClass,
    pub message: String,
}

impl fmt::Display for Classified {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Classified {}

pub fn config_error(message: impl Into<String>) -> anyhow::Error {
    Classified { class: ExitClass::Config, message: message.into() }.into()
}

pub fn input_error(message: impl Into<String>) -> anyhow::Error {
    Classified { class: ExitClass::Input, message: message.into() }.into()
}

pub fn degenerate(message: impl Into<String>) -> anyhow::Error {
    Classified { class: ExitClass::Degenerate, message: message.into() }.into()
}

fn glove_class(e: &GloveError) -> ExitClass {
    match e {
        GloveError::InvalidConfig(_) => ExitClass::Config,
        GloveError::DivergedCost { .. } | GloveError::NonfiniteParameter(_) => ExitClass::Divergence,
        GloveError::EmptyVocabulary(_) | GloveError::EmptyMatrix | GloveError::EmptyRow(_) => ExitClass::Degenerate,
        _ => ExitClass::Input,
    }
}

fn model_class(e: &ModelError) -> ExitClass {
    match e {
        ModelError::InvalidConfig(_) => ExitClass::Config,
        ModelError::Diverged(_) => ExitClass::Divergence,
        ModelError::NoTrainingSamples | ModelError::NoKnownTokens | ModelError::EmptyHistory => ExitClass::Degenerate,
        _ => ExitClass::Input,
    }
}

/// Exit code for an error chain; the first recognized cause wins and
/// anything unrecognized exits with 1.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        let class = if let Some(c) = cause.downcast_ref::<Classified>() {
            c.class
        } else if let Some(e) = cause.downcast_ref::<GloveError>() {
            glove_class(e)
        } else if let Some(e) = cause.downcast_ref::<ModelError>() {
            model_class(e)
        } else if let Some(e) = cause.downcast_ref::<RetrievalError>() {
            match e {
                RetrievalError::EmptyCandidatePool => ExitClass::Degenerate,
                RetrievalError::UnknownNews(_) => ExitClass::Input,
                RetrievalError::Model(m) => model_class(m),
            }
        } else if let Some(e) = cause.downcast_ref::<MetricError>() {
            match e {
                MetricError::AllDegenerate | MetricError::NoImpressions => ExitClass::Degenerate,
                _ => ExitClass::Input,
            }
        } else if let Some(e) = cause.downcast_ref::<AnalyticsError>() {
            match e {
                AnalyticsError::EmptyCorpus => ExitClass::Degenerate,
                AnalyticsError::UnknownCategory(_) => ExitClass::Config,
            }
        } else if cause.is::<PredictionError>() || cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            ExitClass::Input
        } else {
            continue;
        };
        return class as i32;
    }
    1
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn classes() {
        assert_eq!(exit_code(&config_error("x")), 2);
        assert_eq!(exit_code(&input_error("x")), 3);
        assert_eq!(exit_code(&anyhow::Error::from(ModelError::Diverged(2))), 4);
        assert_eq!(exit_code(&anyhow::Error::from(MetricError::AllDegenerate)), 5);
        let wrapped = Err::<(), _>(GloveError::EmptyVocabulary(1)).context("training").unwrap_err();
        assert_eq!(exit_code(&wrapped), 5);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 1);
    }
}
