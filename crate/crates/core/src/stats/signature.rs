use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{StatsConfig, StatsError};
use crate::lexicon::{Category, FunctionalClass, LexiconVersion};
use crate::matcher::ProfileMatches;

/// Sorted distinct functional classes of a user's medications.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct MedicationPattern(Vec<FunctionalClass>);

impl MedicationPattern {
    pub fn new(classes: impl IntoIterator<Item = FunctionalClass>) -> Self {
        let set: BTreeSet<FunctionalClass> = classes.into_iter().collect();
        Self(set.into_iter().collect())
    }

    pub fn classes(&self) -> &[FunctionalClass] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for MedicationPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.0.iter().map(|c| c.as_str()).collect();
        f.write_str(&parts.join("+"))
    }
}

impl From<MedicationPattern> for String {
    fn from(p: MedicationPattern) -> Self {
        p.to_string()
    }
}

impl TryFrom<String> for MedicationPattern {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        let classes = s
            .split('+')
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<FunctionalClass>, _>>()?;
        Ok(Self::new(classes))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSignature {
    pub user_id: String,
    pub medications: BTreeSet<String>,
    pub side_effects: BTreeSet<String>,
    pub pattern: MedicationPattern,
}

/// Collapses match records into per-user sets of unique entries.
///
/// Negated matches are dropped when `cfg.exclude_negated`. Users without a
/// named medication are left out. Output is ordered by user id.
pub fn build_signatures(
    matches: &[ProfileMatches],
    lexicon: &LexiconVersion,
    cfg: &StatsConfig,
) -> Result<Vec<UserSignature>, StatsError> {
    let mut by_user: BTreeMap<&str, (BTreeSet<String>, BTreeSet<String>)> = BTreeMap::new();
    for pm in matches {
        let slot = by_user.entry(pm.user_id.as_str()).or_default();
        for m in &pm.matches {
            let entry = lexicon
                .get(&m.entry_id)
                .ok_or_else(|| StatsError::UnknownEntry(m.entry_id.clone()))?;
            if entry.category != m.category {
                return Err(StatsError::CategoryMismatch {
                    entry_id: m.entry_id.clone(),
                    expected: entry.category,
                    found: m.category,
                });
            }
            if m.negated && cfg.exclude_negated {
                continue;
            }
            match entry.category {
                Category::Medication => slot.0.insert(m.entry_id.clone()),
                Category::SideEffect => slot.1.insert(m.entry_id.clone()),
            };
        }
    }
    Ok(by_user
        .into_iter()
        .filter(|(_, (meds, _))| !meds.is_empty())
        .map(|(user, (medications, side_effects))| {
            let pattern = MedicationPattern::new(
                medications
                    .iter()
                    .filter_map(|id| lexicon.get(id).and_then(|e| e.functional_class)),
            );
            UserSignature {
                user_id: user.to_string(),
                medications,
                side_effects,
                pattern,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{LexiconEntry, Provenance};
    use crate::matcher::MatchRecord;

    fn lexicon() -> LexiconVersion {
        use FunctionalClass::*;
        LexiconVersion::seed(
            1,
            [
                LexiconEntry::medication("tamoxifen", "tamoxifen", HormoneTherapy, Provenance::NciMedicationLibrary),
                LexiconEntry::medication("paclitaxel", "paclitaxel", Chemotherapy, Provenance::NciMedicationLibrary),
                LexiconEntry::side_effect("nausea", "nausea", Provenance::NciSideEffects),
            ],
        )
        .unwrap()
    }

    fn rec(id: &str, cat: Category, start: usize, negated: bool) -> MatchRecord {
        MatchRecord {
            entry_id: id.into(),
            category: cat,
            span: (start, start + 1),
            window_size: 1,
            surface: id.into(),
            matched_term: id.into(),
            similarity: 1.0,
            negated,
        }
    }

    fn pm(user: &str, matches: Vec<MatchRecord>) -> ProfileMatches {
        ProfileMatches {
            user_id: user.into(),
            token_count: 10,
            matches,
        }
    }

    #[test]
    fn combined_pattern() {
        let sigs = build_signatures(
            &[pm(
                "u",
                vec![rec("paclitaxel", Category::Medication, 0, false), rec("tamoxifen", Category::Medication, 1, false)],
            )],
            &lexicon(),
            &StatsConfig::default(),
        )
        .unwrap();
        assert_eq!(sigs[0].pattern.to_string(), "hormone_therapy+chemotherapy");
    }

    #[test]
    fn users_without_named_medication_excluded() {
        let sigs = build_signatures(
            &[pm("u", vec![rec("nausea", Category::SideEffect, 3, false)]), pm("v", vec![])],
            &lexicon(),
            &StatsConfig::default(),
        )
        .unwrap();
        assert!(sigs.is_empty());
    }

    #[test]
    fn repeated_mentions_count_once() {
        let recs = (0..5).map(|i| rec("tamoxifen", Category::Medication, i, false)).collect();
        let sigs = build_signatures(&[pm("u", recs)], &lexicon(), &StatsConfig::default()).unwrap();
        assert_eq!(sigs[0].medications.len(), 1);
    }

    #[test]
    fn negated_matches_excluded_by_default() {
        let recs = vec![
            rec("tamoxifen", Category::Medication, 0, false),
            rec("nausea", Category::SideEffect, 3, true),
        ];
        let sigs = build_signatures(&[pm("u", recs.clone())], &lexicon(), &StatsConfig::default()).unwrap();
        assert!(sigs[0].side_effects.is_empty());
        let keep = StatsConfig {
            exclude_negated: false,
            ..StatsConfig::default()
        };
        let sigs = build_signatures(&[pm("u", recs)], &lexicon(), &keep).unwrap();
        assert_eq!(sigs[0].side_effects.len(), 1);
    }

    #[test]
    fn unknown_entry_is_fatal() {
        let err = build_signatures(
            &[pm("u", vec![rec("letrozole", Category::Medication, 0, false)])],
            &lexicon(),
            &StatsConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err, StatsError::UnknownEntry("letrozole".into()));
    }

    #[test]
    fn pattern_label_roundtrip() {
        let p = MedicationPattern::new([FunctionalClass::KinaseInhibitor, FunctionalClass::HormoneTherapy]);
        assert_eq!(p.to_string(), "hormone_therapy+kinase_inhibitor");
        assert_eq!(MedicationPattern::try_from(p.to_string()).unwrap(), p);
    }
}
