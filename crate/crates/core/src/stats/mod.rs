//! Medication patterns and pattern/side-effect association tests.

mod association;
mod prevalence;
mod rank;
pub mod report;
mod signature;
pub mod special;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use association::{
    association_report, AssociationReport, AssociationResult, GroupPresence, Heatmap, HeatmapRow, PairwiseResult,
    PatternGroup, SkipReason,
};
pub use prevalence::{prevalence_table, CountRow, PatternRow, PrevalenceTable};
pub use rank::{
    benjamini_hochberg, dunn_test, kruskal_wallis, kruskal_wallis_permutation_p, midranks, DunnComparison,
    KruskalWallis,
};
pub use signature::{build_signatures, MedicationPattern, UserSignature};
pub use special::chi_square_sf;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least two nonempty groups, got {0}")]
    TooFewGroups(usize),
    #[error("need at least three observations, got {0}")]
    TooFewObservations(usize),
    #[error("sample contains NaN")]
    NotANumber,
    #[error("p-value {0} outside [0, 1]")]
    InvalidPValue(f64),
    #[error("entry {0:?} is not in the lexicon (lexicon/version mismatch)")]
    UnknownEntry(String),
    #[error("entry {entry_id:?} is recorded as {found} but the lexicon says {expected}")]
    CategoryMismatch {
        entry_id: String,
        expected: crate::lexicon::Category,
        found: crate::lexicon::Category,
    },
    #[error("no users with a named medication")]
    EmptyCohort,
    #[error("invalid stats config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsConfig {
    pub alpha: f64,
    pub min_group_size: usize,
    pub exclude_negated: bool,
    /// Use a Monte-Carlo permutation p-value for Kruskal-Wallis instead of
    /// the chi-square approximation.
    pub permutations: Option<usize>,
    pub seed: u64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            min_group_size: 1,
            exclude_negated: true,
            permutations: None,
            seed: 0,
        }
    }
}

impl StatsConfig {
    pub fn validate(&self) -> Result<(), StatsError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(StatsError::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.min_group_size == 0 {
            return Err(StatsError::Config("min_group_size must be at least 1".into()));
        }
        if self.permutations == Some(0) {
            return Err(StatsError::Config("permutations must be positive".into()));
        }
        Ok(())
    }
}
