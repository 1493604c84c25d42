//! Building blocks for a social-media medication cohort pipeline.
//!
//! The crate is organised along the stages of the pipeline:
//!
//! - [`corpus`]: ingest line-delimited post dumps, keyword filtering and
//!   per-user collapsing.
//! - [`classifier`]: n-gram TF-IDF logistic regression with stratified
//!   grid search, plus import of labels produced by an external model.
//! - [`lexicon`]: versioned medication / side-effect dictionaries.
//! - [`matcher`]: the sliding-window fuzzy lexicon matcher with negation
//!   flags.
//! - [`annotation`]: gold sets, annotation rounds, Cohen's kappa, matcher
//!   evaluation and lexicon candidate proposals.
//! - [`stats`]: medication patterns, prevalence tables and the
//!   Kruskal-Wallis / Benjamini-Hochberg / Dunn association report.

pub mod annotation;
pub mod classifier;
pub mod corpus;
pub mod jsonl;
pub mod metrics;
pub mod lexicon;
pub mod matcher;
pub mod stats;
pub mod synth;

pub use annotation::{AnnotationRound, GoldSet};
pub use classifier::{Label, LabeledPost, LinearModel};
pub use corpus::{Post, PostCollection, UserProfile};
pub use lexicon::{Category, FunctionalClass, LexiconEntry, LexiconVersion};
pub use matcher::{MatchRecord, Matcher, MatcherConfig, TokenSequence};
pub use stats::{AssociationResult, StatsConfig, UserSignature};
