use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::signature::{MedicationPattern, UserSignature};
use super::StatsError;

/// Users expressing one entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub entry_id: String,
    pub count: usize,
    /// Share of the cohort with a named medication.
    pub proportion: f64,
}

impl CountRow {
    /// Percentage rounded to one decimal, e.g. `55.1`.
    pub fn percent(&self) -> String {
        format!("{:.1}", self.proportion * 100.0)
    }

    /// `109 (55.1%)`
    pub fn with_parens(&self) -> String {
        format!("{} ({}%)", self.count, self.percent())
    }

    /// `34 [17.2%]`
    pub fn with_brackets(&self) -> String {
        format!("{} [{}%]", self.count, self.percent())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRow {
    pub pattern: MedicationPattern,
    pub count: usize,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceTable {
    pub cohort_size: usize,
    pub medications: Vec<CountRow>,
    pub side_effects: Vec<CountRow>,
    pub patterns: Vec<PatternRow>,
}

fn rows(counts: BTreeMap<&str, usize>, total: usize) -> Vec<CountRow> {
    let mut rows: Vec<CountRow> = counts
        .into_iter()
        .map(|(id, count)| CountRow {
            entry_id: id.to_string(),
            count,
            proportion: count as f64 / total as f64,
        })
        .collect();
    // BTreeMap order makes the id tie-break implicit; sort is stable.
    rows.sort_by_key(|r| std::cmp::Reverse(r.count));
    rows
}

/// Per-entry and per-pattern user counts, most frequent first.
pub fn prevalence_table(signatures: &[UserSignature]) -> Result<PrevalenceTable, StatsError> {
    if signatures.is_empty() {
        return Err(StatsError::EmptyCohort);
    }
    let total = signatures.len();
    let mut meds: BTreeMap<&str, usize> = BTreeMap::new();
    let mut ses: BTreeMap<&str, usize> = BTreeMap::new();
    let mut patterns: BTreeMap<&MedicationPattern, usize> = BTreeMap::new();
    for s in signatures {
        for m in &s.medications {
            *meds.entry(m).or_default() += 1;
        }
        for e in &s.side_effects {
            *ses.entry(e).or_default() += 1;
        }
        *patterns.entry(&s.pattern).or_default() += 1;
    }
    let mut pattern_rows: Vec<PatternRow> = patterns
        .into_iter()
        .map(|(p, count)| PatternRow {
            pattern: p.clone(),
            count,
            proportion: count as f64 / total as f64,
        })
        .collect();
    pattern_rows.sort_by_key(|r| std::cmp::Reverse(r.count));
    Ok(PrevalenceTable {
        cohort_size: total,
        medications: rows(meds, total),
        side_effects: rows(ses, total),
        patterns: pattern_rows,
    })
}
