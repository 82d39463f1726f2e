//! News recommendation on MIND-format data: ingestion, text preprocessing,
//! GloVe embeddings, a two-level attention recommender, ranking metrics,
//! retrieval and corpus analytics.

pub mod analytics;
pub mod attn_model;
pub mod autograd;
pub mod glove;
pub mod mind_io;
pub mod ranking_eval;
pub mod retrieval;
pub mod synth;
pub mod textprep;
