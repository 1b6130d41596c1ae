//! Aggregate public sentiment from geotagged tweets.
//!
//! Raw tweets are collected into an append-only table, parsed and assigned
//! to a county and country, scored by a lexicon or a Naive Bayes classifier,
//! aggregated into per-region public sentiment scores and rendered as maps
//! and line graphs.

pub mod classifier;
pub mod dictionary;
pub mod estimator;
pub mod georesolve;
pub mod ingest;
pub mod store;
pub mod synth;
pub mod tokenizer;
pub mod visualize;

pub use classifier::{Classifier, Label, UnigramModel};
pub use dictionary::{DictionaryAnalyser, Lexicon};
pub use estimator::{AggregationSpec, NormScope, ScoreSeries};
pub use georesolve::RegionIndex;
pub use store::{Approach, Level, ScoreRow, Window};
pub use tokenizer::{Token, TokenKind, Tokenizer};
