//! Versioned medication and side-effect lexicons.
//!
//! A [`LexiconVersion`] is immutable. Enrichment produces a new version whose
//! changelog records every added entry (as a full snapshot) and every synonym
//! extension, so any version can be rebuilt by replaying changelogs on top
//! of the seed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Read};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matcher::normalize_term;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LexiconError {
    #[error("lexicon file unreadable: {0}")]
    Io(String),
    #[error("lexicon file is not valid JSON: {0}")]
    Parse(String),
    #[error("entry {entry_id:?}: {reason}")]
    Schema { entry_id: String, reason: String },
    #[error("entry id {0:?} appears more than once")]
    DuplicateEntry(String),
    #[error("entry {entry_id:?}: term {term:?} already belongs to entry {other:?} ({other_category})")]
    TermCollision {
        entry_id: String,
        term: String,
        other: String,
        other_category: Category,
    },
    #[error("entry {entry_id:?}: category {found} does not match existing {existing}")]
    CategoryMismatch {
        entry_id: String,
        existing: Category,
        found: Category,
    },
    #[error("changelog replay failed at entry {0:?}")]
    Replay(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Medication,
    SideEffect,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Medication => "medication",
            Category::SideEffect => "side_effect",
        })
    }
}

/// Mechanism-based medication class. Declaration order is the fixed
/// rendering order of medication patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalClass {
    HormoneTherapy,
    Chemotherapy,
    ImmuneCheckpointInhibitor,
    KinaseInhibitor,
}

impl FunctionalClass {
    pub const ALL: [FunctionalClass; 4] = [
        FunctionalClass::HormoneTherapy,
        FunctionalClass::Chemotherapy,
        FunctionalClass::ImmuneCheckpointInhibitor,
        FunctionalClass::KinaseInhibitor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FunctionalClass::HormoneTherapy => "hormone_therapy",
            FunctionalClass::Chemotherapy => "chemotherapy",
            FunctionalClass::ImmuneCheckpointInhibitor => "immune_checkpoint_inhibitor",
            FunctionalClass::KinaseInhibitor => "kinase_inhibitor",
        }
    }
}

impl fmt::Display for FunctionalClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FunctionalClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown functional class {s:?}"))
    }
}

/// Where an entry came from. Serialized as `nci_medication_library`,
/// `nci_side_effects`, `covid_symptom_lexicon` or `annotation_round(N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Provenance {
    NciMedicationLibrary,
    NciSideEffects,
    CovidSymptomLexicon,
    AnnotationRound(u32),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::NciMedicationLibrary => f.write_str("nci_medication_library"),
            Provenance::NciSideEffects => f.write_str("nci_side_effects"),
            Provenance::CovidSymptomLexicon => f.write_str("covid_symptom_lexicon"),
            Provenance::AnnotationRound(n) => write!(f, "annotation_round({n})"),
        }
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nci_medication_library" => Ok(Provenance::NciMedicationLibrary),
            "nci_side_effects" => Ok(Provenance::NciSideEffects),
            "covid_symptom_lexicon" => Ok(Provenance::CovidSymptomLexicon),
            other => other
                .strip_prefix("annotation_round(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|n| n.parse().ok())
                .map(Provenance::AnnotationRound)
                .ok_or_else(|| format!("unknown provenance {other:?}")),
        }
    }
}

impl TryFrom<String> for Provenance {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Provenance> for String {
    fn from(p: Provenance) -> Self {
        p.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub entry_id: String,
    pub canonical: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional_class: Option<FunctionalClass>,
    pub provenance: Provenance,
}

impl LexiconEntry {
    pub fn medication(id: &str, canonical: &str, class: FunctionalClass, provenance: Provenance) -> Self {
        Self {
            entry_id: id.into(),
            canonical: canonical.into(),
            synonyms: Vec::new(),
            category: Category::Medication,
            functional_class: Some(class),
            provenance,
        }
    }

    pub fn side_effect(id: &str, canonical: &str, provenance: Provenance) -> Self {
        Self {
            entry_id: id.into(),
            canonical: canonical.into(),
            synonyms: Vec::new(),
            category: Category::SideEffect,
            functional_class: None,
            provenance,
        }
    }

    pub fn with_synonyms<S: Into<String>>(mut self, synonyms: impl IntoIterator<Item = S>) -> Self {
        self.synonyms.extend(synonyms.into_iter().map(Into::into));
        self
    }

    /// Canonical form followed by synonyms.
    pub fn terms(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical.as_str()).chain(self.synonyms.iter().map(String::as_str))
    }

    /// Normalizes every term and checks the entry invariants.
    pub fn normalized(mut self) -> Result<Self, LexiconError> {
        let schema = |reason: &str| LexiconError::Schema {
            entry_id: self.entry_id.clone(),
            reason: reason.to_string(),
        };
        if self.entry_id.trim().is_empty() {
            return Err(schema("empty entry_id"));
        }
        let canonical = normalize_term(&self.canonical);
        if canonical.is_empty() {
            return Err(schema("canonical term is empty after normalization"));
        }
        let mut synonyms = Vec::with_capacity(self.synonyms.len());
        for s in &self.synonyms {
            let s = normalize_term(s);
            if s.is_empty() {
                return Err(schema("synonym is empty after normalization"));
            }
            if s != canonical && !synonyms.contains(&s) {
                synonyms.push(s);
            }
        }
        match (self.category, self.functional_class) {
            (Category::Medication, None) => return Err(schema("medication without functional_class")),
            (Category::SideEffect, Some(_)) => return Err(schema("side effect must not carry a functional_class")),
            _ => {}
        }
        self.canonical = canonical;
        self.synonyms = synonyms;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Add,
    Modify,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeRecord {
    pub kind: ChangeKind,
    pub entry_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_annotation_round: Option<u32>,
    /// Full snapshot of an added entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry: Option<LexiconEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub synonyms_added: Vec<String>,
}

/// On-disk form of a lexicon version.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LexiconDocument {
    version: u64,
    #[serde(default)]
    parent: Option<u64>,
    entries: Vec<LexiconEntry>,
    #[serde(default)]
    changelog: Vec<ChangeRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LexiconDocument", into = "LexiconDocument")]
pub struct LexiconVersion {
    version: u64,
    parent: Option<u64>,
    entries: BTreeMap<String, LexiconEntry>,
    changelog: Vec<ChangeRecord>,
}

impl TryFrom<LexiconDocument> for LexiconVersion {
    type Error = LexiconError;

    fn try_from(doc: LexiconDocument) -> Result<Self, Self::Error> {
        let mut entries = BTreeMap::new();
        for e in doc.entries {
            let e = e.normalized()?;
            if entries.contains_key(&e.entry_id) {
                return Err(LexiconError::DuplicateEntry(e.entry_id));
            }
            entries.insert(e.entry_id.clone(), e);
        }
        Ok(Self {
            version: doc.version,
            parent: doc.parent,
            entries,
            changelog: doc.changelog,
        })
    }
}

impl From<LexiconVersion> for LexiconDocument {
    fn from(v: LexiconVersion) -> Self {
        Self {
            version: v.version,
            parent: v.parent,
            entries: v.entries.into_values().collect(),
            changelog: v.changelog,
        }
    }
}

impl LexiconVersion {
    /// A seed version without parent or changelog.
    pub fn seed(version: u64, entries: impl IntoIterator<Item = LexiconEntry>) -> Result<Self, LexiconError> {
        LexiconDocument {
            version,
            parent: None,
            entries: entries.into_iter().collect(),
            changelog: Vec::new(),
        }
        .try_into()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn parent(&self) -> Option<u64> {
        self.parent
    }

    pub fn changelog(&self) -> &[ChangeRecord] {
        &self.changelog
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, entry_id: &str) -> Option<&LexiconEntry> {
        self.entries.get(entry_id)
    }

    /// Entries in entry-id order.
    pub fn entries(&self) -> impl Iterator<Item = &LexiconEntry> {
        self.entries.values()
    }

    pub fn entries_of(&self, category: Category) -> impl Iterator<Item = &LexiconEntry> {
        self.entries.values().filter(move |e| e.category == category)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, LexiconError> {
        let doc: LexiconDocument = serde_json::from_reader(reader).map_err(|e| LexiconError::Parse(e.to_string()))?;
        Self::try_from(doc)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("lexicon serializes")
    }

    /// Applies `changelog` to this version's entries.
    pub fn replay(&self, changelog: &[ChangeRecord]) -> Result<BTreeMap<String, LexiconEntry>, LexiconError> {
        let mut entries = self.entries.clone();
        for rec in changelog {
            match rec.kind {
                ChangeKind::Add => {
                    let e = rec.entry.clone().ok_or_else(|| LexiconError::Replay(rec.entry_id.clone()))?;
                    entries.insert(rec.entry_id.clone(), e);
                }
                ChangeKind::Modify => {
                    let e = entries
                        .get_mut(&rec.entry_id)
                        .ok_or_else(|| LexiconError::Replay(rec.entry_id.clone()))?;
                    e.synonyms.extend(rec.synonyms_added.iter().cloned());
                }
            }
        }
        Ok(entries)
    }

    pub fn entry_map(&self) -> &BTreeMap<String, LexiconEntry> {
        &self.entries
    }
}

/// Loads and validates a lexicon file.
pub fn load_lexicon(path: &std::path::Path) -> Result<LexiconVersion, LexiconError> {
    let f = std::fs::File::open(path).map_err(|e| LexiconError::Io(format!("{}: {e}", path.display())))?;
    LexiconVersion::from_reader(io::BufReader::new(f))
}

fn owner_of<'a>(entries: &'a BTreeMap<String, LexiconEntry>, term: &str) -> Option<&'a LexiconEntry> {
    entries.values().find(|e| e.terms().any(|t| t == term))
}

/// Produces the next version with `additions` applied.
///
/// An addition whose `entry_id` already exists extends that entry's
/// synonyms (recorded as `modify`); otherwise it is added with provenance
/// `annotation_round(round)`. A term that already belongs to a different
/// entry is rejected.
pub fn enrich(base: &LexiconVersion, additions: &[LexiconEntry], round: u32) -> Result<LexiconVersion, LexiconError> {
    let mut entries = base.entries.clone();
    let mut changelog = Vec::new();
    for add in additions {
        let add = add.clone().normalized()?;
        for term in add.terms() {
            if let Some(other) = owner_of(&entries, term).filter(|o| o.entry_id != add.entry_id) {
                return Err(LexiconError::TermCollision {
                    entry_id: add.entry_id.clone(),
                    term: term.to_string(),
                    other: other.entry_id.clone(),
                    other_category: other.category,
                });
            }
        }
        match entries.get_mut(&add.entry_id) {
            Some(existing) => {
                if existing.category != add.category {
                    return Err(LexiconError::CategoryMismatch {
                        entry_id: add.entry_id.clone(),
                        existing: existing.category,
                        found: add.category,
                    });
                }
                let known: BTreeSet<String> = existing.terms().map(String::from).collect();
                let mut new_syns: Vec<String> = Vec::new();
                for t in add.terms() {
                    if !known.contains(t) && !new_syns.iter().any(|s| s == t) {
                        new_syns.push(t.to_string());
                    }
                }
                if !new_syns.is_empty() {
                    existing.synonyms.extend(new_syns.iter().cloned());
                    changelog.push(ChangeRecord {
                        kind: ChangeKind::Modify,
                        entry_id: add.entry_id.clone(),
                        source_annotation_round: Some(round),
                        entry: None,
                        synonyms_added: new_syns,
                    });
                }
            }
            None => {
                let mut add = add;
                add.provenance = Provenance::AnnotationRound(round);
                changelog.push(ChangeRecord {
                    kind: ChangeKind::Add,
                    entry_id: add.entry_id.clone(),
                    source_annotation_round: Some(round),
                    entry: Some(add.clone()),
                    synonyms_added: Vec::new(),
                });
                entries.insert(add.entry_id.clone(), add);
            }
        }
    }
    Ok(LexiconVersion {
        version: base.version + 1,
        parent: Some(base.version),
        entries,
        changelog,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "change", rename_all = "snake_case")]
pub enum LexiconChange {
    Added { entry_id: String },
    Removed { entry_id: String },
    Modified {
        entry_id: String,
        synonyms_added: Vec<String>,
        synonyms_removed: Vec<String>,
        /// Canonical form, category, class or provenance differ.
        attributes_changed: bool,
    },
}

/// Changes that turn `a` into `b`, ordered by entry id.
pub fn diff(a: &LexiconVersion, b: &LexiconVersion) -> Vec<LexiconChange> {
    let ids: BTreeSet<&String> = a.entries.keys().chain(b.entries.keys()).collect();
    let mut out = Vec::new();
    for id in ids {
        match (a.entries.get(id), b.entries.get(id)) {
            (None, Some(_)) => out.push(LexiconChange::Added { entry_id: id.clone() }),
            (Some(_), None) => out.push(LexiconChange::Removed { entry_id: id.clone() }),
            (Some(x), Some(y)) => {
                let added: Vec<String> = y.synonyms.iter().filter(|s| !x.synonyms.contains(s)).cloned().collect();
                let removed: Vec<String> = x.synonyms.iter().filter(|s| !y.synonyms.contains(s)).cloned().collect();
                let attributes_changed = x.canonical != y.canonical
                    || x.category != y.category
                    || x.functional_class != y.functional_class
                    || x.provenance != y.provenance;
                if !added.is_empty() || !removed.is_empty() || attributes_changed {
                    out.push(LexiconChange::Modified {
                        entry_id: id.clone(),
                        synonyms_added: added,
                        synonyms_removed: removed,
                        attributes_changed,
                    });
                }
            }
            (None, None) => unreachable!(),
        }
    }
    out
}
