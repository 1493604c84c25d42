//! Gold sets, annotation rounds, inter-annotator agreement, matcher
//! evaluation and lexicon candidate proposals.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{Category, LexiconVersion};
use crate::matcher::{normalize_term, similarity, ProfileMatches};
use crate::metrics::Prf;

#[derive(Debug, Error, PartialEq)]
pub enum AnnotationError {
    #[error("cannot sample {requested} profiles from a population of {population}")]
    SampleTooLarge { requested: usize, population: usize },
    #[error("label vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no items to compare")]
    NoItems,
    #[error("annotators share no items")]
    Disjoint,
    #[error("round numbers start at 1")]
    InvalidRound,
    #[error("round {0} is reconciled and no longer accepts annotations")]
    RoundClosed(u32),
    #[error("round {0} is still open")]
    RoundOpen(u32),
    #[error("profile {0:?} is not a task of this round")]
    UnknownTask(String),
    #[error("annotator {0:?} is not assigned to this round")]
    UnknownAnnotator(String),
    #[error("annotator {annotator:?} is not assigned to profile {user_id:?}")]
    NotAssigned { annotator: String, user_id: String },
    #[error("need at least two annotators, got {0}")]
    TooFewAnnotators(usize),
    #[error("duplicate profile {0:?} in gold set")]
    DuplicateProfile(String),
}

/// One annotated concept in a profile. `term` is a lexicon entry id after
/// reconciliation, or free text for concepts missing from the lexicon.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TruthItem {
    pub category: Category,
    pub term: String,
    #[serde(default)]
    pub negated: bool,
}

impl TruthItem {
    pub fn new(category: Category, term: &str, negated: bool) -> Self {
        Self {
            category,
            term: term.to_string(),
            negated,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldSet {
    pub name: String,
    pub profiles: Vec<String>,
    #[serde(default)]
    pub truth: BTreeMap<String, BTreeSet<TruthItem>>,
}

impl GoldSet {
    pub fn validate(&self) -> Result<(), AnnotationError> {
        let mut seen = BTreeSet::new();
        for p in &self.profiles {
            if !seen.insert(p) {
                return Err(AnnotationError::DuplicateProfile(p.clone()));
            }
        }
        Ok(())
    }

    /// Fills truth from a reconciled round: an item is true for a profile
    /// when more than half of the annotators who labeled it marked it.
    pub fn fill_from_round(&mut self, round: &AnnotationRound) -> Result<(), AnnotationError> {
        if round.status != RoundStatus::Reconciled {
            return Err(AnnotationError::RoundOpen(round.round));
        }
        for user in &self.profiles {
            let mut votes: BTreeMap<TruthItem, usize> = BTreeMap::new();
            let mut voters = 0;
            for labels in round.labels.values() {
                if let Some(items) = labels.get(user) {
                    voters += 1;
                    for it in items {
                        *votes.entry(it.item()).or_default() += 1;
                    }
                }
            }
            if voters == 0 {
                continue;
            }
            let truth = votes
                .into_iter()
                .filter(|(_, v)| 2 * v > voters)
                .map(|(k, _)| k)
                .collect();
            self.truth.insert(user.clone(), truth);
        }
        Ok(())
    }
}

/// Seeded sample of `n` profiles without replacement; truth left empty.
pub fn sample_gold(name: &str, user_ids: &[String], n: usize, seed: u64) -> Result<GoldSet, AnnotationError> {
    if n > user_ids.len() {
        return Err(AnnotationError::SampleTooLarge {
            requested: n,
            population: user_ids.len(),
        });
    }
    let mut population: Vec<&String> = user_ids.iter().collect();
    population.sort();
    population.dedup();
    if n > population.len() {
        return Err(AnnotationError::SampleTooLarge {
            requested: n,
            population: population.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<String> = rand::seq::index::sample(&mut rng, population.len(), n)
        .into_iter()
        .map(|i| population[i].clone())
        .collect();
    picked.sort();
    Ok(GoldSet {
        name: name.to_string(),
        profiles: picked,
        truth: BTreeMap::new(),
    })
}

/// κ from a 2×2 table. `None` for an empty table.
pub fn kappa_from_counts(both_yes: usize, a_only: usize, b_only: usize, both_no: usize) -> Option<f64> {
    let n = (both_yes + a_only + b_only + both_no) as f64;
    if n == 0.0 {
        return None;
    }
    let p_o = (both_yes + both_no) as f64 / n;
    let a_yes = (both_yes + a_only) as f64 / n;
    let b_yes = (both_yes + b_only) as f64 / n;
    let p_e = a_yes * b_yes + (1.0 - a_yes) * (1.0 - b_yes);
    if p_e >= 1.0 {
        // Both raters constant and identical.
        return Some(1.0);
    }
    Some((p_o - p_e) / (1.0 - p_e))
}

/// Cohen's κ for two aligned binary label vectors.
pub fn cohens_kappa(a: &[bool], b: &[bool]) -> Result<f64, AnnotationError> {
    if a.len() != b.len() {
        return Err(AnnotationError::LengthMismatch(a.len(), b.len()));
    }
    let mut cells = [0usize; 4];
    for (&x, &y) in a.iter().zip(b) {
        cells[usize::from(!x) * 2 + usize::from(!y)] += 1;
    }
    kappa_from_counts(cells[0], cells[1], cells[2], cells[3]).ok_or(AnnotationError::NoItems)
}

/// Cohen's κ over the items both raters labeled.
pub fn cohens_kappa_items<K: Ord>(a: &BTreeMap<K, bool>, b: &BTreeMap<K, bool>) -> Result<f64, AnnotationError> {
    let (xs, ys): (Vec<bool>, Vec<bool>) = a
        .iter()
        .filter_map(|(k, &x)| b.get(k).map(|&y| (x, y)))
        .unzip();
    if xs.is_empty() {
        return Err(AnnotationError::Disjoint);
    }
    cohens_kappa(&xs, &ys)
}

/// A span or term marked by an annotator.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AnnotatedTerm {
    pub category: Category,
    pub term: String,
    #[serde(default)]
    pub negated: bool,
    /// Token span in the normalized collapsed text, when selected there.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
}

impl AnnotatedTerm {
    pub fn item(&self) -> TruthItem {
        TruthItem::new(self.category, &self.term, self.negated)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    Open,
    Reconciled,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRound {
    pub round: u32,
    pub annotators: Vec<String>,
    pub tasks: Vec<String>,
    /// profile → annotators. A profile without an entry is open to every
    /// annotator of the round.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub assignments: BTreeMap<String, Vec<String>>,
    /// annotator → profile → marked terms.
    #[serde(default)]
    pub labels: BTreeMap<String, BTreeMap<String, BTreeSet<AnnotatedTerm>>>,
    pub status: RoundStatus,
    /// Set on a relabeling pass: the round whose disagreements it settles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconciles: Option<u32>,
}

impl AnnotationRound {
    pub fn new(round: u32, annotators: Vec<String>, tasks: Vec<String>) -> Result<Self, AnnotationError> {
        if round == 0 {
            return Err(AnnotationError::InvalidRound);
        }
        Ok(Self {
            round,
            annotators,
            tasks,
            assignments: BTreeMap::new(),
            labels: BTreeMap::new(),
            status: RoundStatus::Open,
            reconciles: None,
        })
    }

    /// Opens round `next` as a fresh labeling pass over the same tasks,
    /// annotators and assignments. Earlier labels are not carried over.
    pub fn second_pass(&self, next: u32) -> Result<Self, AnnotationError> {
        if self.status != RoundStatus::Reconciled {
            return Err(AnnotationError::RoundOpen(self.round));
        }
        if next <= self.round {
            return Err(AnnotationError::InvalidRound);
        }
        let mut r = Self::new(next, self.annotators.clone(), self.tasks.clone())?;
        r.assignments = self.assignments.clone();
        r.reconciles = Some(self.round);
        Ok(r)
    }

    /// Gives each task `per_task` annotators, rotating the starting
    /// annotator so the load is spread evenly. With `per_task` at or above
    /// the number of annotators every annotator gets every task.
    pub fn assign(&mut self, per_task: usize) {
        let k = self.annotators.len();
        self.assignments.clear();
        if k == 0 || per_task >= k {
            return;
        }
        for (i, task) in self.tasks.iter().enumerate() {
            let who = (0..per_task.max(1)).map(|j| self.annotators[(i + j) % k].clone()).collect();
            self.assignments.insert(task.clone(), who);
        }
    }

    /// Annotators expected to label `user_id`.
    pub fn assigned(&self, user_id: &str) -> Vec<&str> {
        match self.assignments.get(user_id) {
            Some(who) => who.iter().map(String::as_str).collect(),
            None => self.annotators.iter().map(String::as_str).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), AnnotationError> {
        if self.round == 0 {
            return Err(AnnotationError::InvalidRound);
        }
        for (annotator, by_user) in &self.labels {
            if !self.annotators.contains(annotator) {
                return Err(AnnotationError::UnknownAnnotator(annotator.clone()));
            }
            if let Some(u) = by_user.keys().find(|u| !self.tasks.contains(u)) {
                return Err(AnnotationError::UnknownTask(u.clone()));
            }
        }
        Ok(())
    }

    /// Replaces `annotator`'s labels for `user_id`.
    pub fn submit(
        &mut self,
        annotator: &str,
        user_id: &str,
        terms: impl IntoIterator<Item = AnnotatedTerm>,
    ) -> Result<(), AnnotationError> {
        if self.status != RoundStatus::Open {
            return Err(AnnotationError::RoundClosed(self.round));
        }
        if !self.annotators.iter().any(|a| a == annotator) {
            return Err(AnnotationError::UnknownAnnotator(annotator.to_string()));
        }
        if !self.tasks.iter().any(|t| t == user_id) {
            return Err(AnnotationError::UnknownTask(user_id.to_string()));
        }
        if !self.assigned(user_id).contains(&annotator) {
            return Err(AnnotationError::NotAssigned {
                annotator: annotator.to_string(),
                user_id: user_id.to_string(),
            });
        }
        let terms = terms
            .into_iter()
            .map(|mut t| {
                t.term = t.term.trim().to_string();
                t
            })
            .collect();
        self.labels
            .entry(annotator.to_string())
            .or_default()
            .insert(user_id.to_string(), terms);
        Ok(())
    }

    pub fn reconcile(&mut self) {
        self.status = RoundStatus::Reconciled;
    }

    /// Every item marked by anyone in the round.
    fn universe(&self) -> BTreeSet<TruthItem> {
        self.labels
            .values()
            .flat_map(|m| m.values())
            .flatten()
            .map(AnnotatedTerm::item)
            .collect()
    }

    /// Binary (profile, item) presence table of one annotator.
    fn presence(&self, annotator: &str, universe: &BTreeSet<TruthItem>) -> BTreeMap<(String, TruthItem), bool> {
        let mut out = BTreeMap::new();
        if let Some(by_user) = self.labels.get(annotator) {
            for (user, terms) in by_user {
                let marked: BTreeSet<TruthItem> = terms.iter().map(AnnotatedTerm::item).collect();
                for it in universe {
                    out.insert((user.clone(), it.clone()), marked.contains(it));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementMatrix {
    pub round: u32,
    pub annotators: Vec<String>,
    /// Symmetric; `None` where a pair shares no profiles.
    pub kappa: Vec<Vec<Option<f64>>>,
    pub mean: Option<f64>,
    pub warnings: Vec<String>,
}

/// Pairwise κ on (profile, item) presence, plus the unweighted mean over
/// defined pairs.
pub fn pairwise_agreement(round: &AnnotationRound) -> Result<AgreementMatrix, AnnotationError> {
    let k = round.annotators.len();
    if k < 2 {
        return Err(AnnotationError::TooFewAnnotators(k));
    }
    let universe = round.universe();
    let tables: Vec<_> = round.annotators.iter().map(|a| round.presence(a, &universe)).collect();
    let shared_profiles = |i: usize, j: usize| -> usize {
        match (round.labels.get(&round.annotators[i]), round.labels.get(&round.annotators[j])) {
            (Some(a), Some(b)) => a.keys().filter(|u| b.contains_key(*u)).count(),
            _ => 0,
        }
    };
    let mut kappa = vec![vec![None; k]; k];
    let mut warnings = Vec::new();
    let mut defined = Vec::new();
    for i in 0..k {
        kappa[i][i] = Some(1.0);
        for j in i + 1..k {
            let value = if shared_profiles(i, j) == 0 {
                None
            } else if universe.is_empty() {
                // Nobody marked anything: agreement on absence.
                Some(1.0)
            } else {
                cohens_kappa_items(&tables[i], &tables[j]).ok()
            };
            if value.is_none() {
                warnings.push(format!(
                    "{} and {} share no annotated profiles",
                    round.annotators[i], round.annotators[j]
                ));
            } else {
                defined.extend(value);
            }
            kappa[i][j] = value;
            kappa[j][i] = value;
        }
    }
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(AgreementMatrix {
        round: round.round,
        annotators: round.annotators.clone(),
        kappa,
        mean,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherEvaluation {
    pub overall: Prf,
    pub per_category: BTreeMap<Category, Prf>,
    /// Matched profiles that are not in the gold set.
    pub ignored_profiles: usize,
}

/// Scores predicted (profile, entry, negated) triples against gold truth
/// with set semantics.
pub fn evaluate_matcher(matches: &[ProfileMatches], gold: &GoldSet) -> MatcherEvaluation {
    let gold_profiles: BTreeSet<&String> = gold.profiles.iter().collect();
    let mut predicted: BTreeMap<&str, BTreeSet<TruthItem>> = BTreeMap::new();
    let mut ignored = BTreeSet::new();
    for pm in matches {
        if !gold_profiles.contains(&pm.user_id) {
            ignored.insert(pm.user_id.as_str());
            continue;
        }
        let slot = predicted.entry(&pm.user_id).or_default();
        for m in &pm.matches {
            slot.insert(TruthItem::new(m.category, &m.entry_id, m.negated));
        }
    }
    let empty = BTreeSet::new();
    let mut per_category: BTreeMap<Category, Prf> = [Category::Medication, Category::SideEffect]
        .into_iter()
        .map(|c| (c, Prf::default()))
        .collect();
    for user in &gold.profiles {
        let truth = gold.truth.get(user).unwrap_or(&empty);
        let pred = predicted.get(user.as_str()).unwrap_or(&empty);
        for cat in [Category::Medication, Category::SideEffect] {
            let t: BTreeSet<_> = truth.iter().filter(|i| i.category == cat).collect();
            let p: BTreeSet<_> = pred.iter().filter(|i| i.category == cat).collect();
            let tp = t.intersection(&p).count();
            let add = Prf::from_counts(tp, p.len() - tp, t.len() - tp);
            let cur = per_category[&cat];
            per_category.insert(cat, cur.add(&add));
        }
    }
    let overall = per_category.values().fold(Prf::default(), |acc, p| acc.add(p));
    MatcherEvaluation {
        overall,
        per_category,
        ignored_profiles: ignored.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Normalized term.
    pub term: String,
    pub category: Category,
    /// Distinct profiles in which any annotator marked the term.
    pub count: usize,
    pub profiles: Vec<String>,
    pub suggested_entry_id: String,
}

/// Terms annotators marked that the lexicon does not cover.
///
/// A term is covered when it names an entry id or when its best
/// similarity to any lexicon string reaches `threshold`.
pub fn propose_candidates(
    round: &AnnotationRound,
    lexicon: &LexiconVersion,
    threshold: f64,
) -> Result<Vec<Candidate>, AnnotationError> {
    if round.status != RoundStatus::Reconciled {
        return Err(AnnotationError::RoundOpen(round.round));
    }
    let lex_terms: Vec<&str> = lexicon.entries().flat_map(|e| e.terms()).collect();
    let mut found: BTreeMap<String, (BTreeSet<String>, BTreeMap<Category, usize>)> = BTreeMap::new();
    for by_user in round.labels.values() {
        for (user, terms) in by_user {
            for t in terms {
                if lexicon.get(&t.term).is_some() {
                    continue;
                }
                let norm = normalize_term(&t.term);
                if norm.is_empty() {
                    continue;
                }
                let slot = found.entry(norm).or_default();
                slot.0.insert(user.clone());
                *slot.1.entry(t.category).or_default() += 1;
            }
        }
    }
    let mut out: Vec<Candidate> = found
        .into_iter()
        .filter(|(term, _)| lex_terms.iter().all(|lt| similarity(term, lt) < threshold))
        .map(|(term, (profiles, cats))| {
            let category = cats
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(c, _)| *c)
                .unwrap_or(Category::SideEffect);
            let mut id = term.replace([' ', '-', '\''], "_");
            if lexicon.get(&id).is_some() {
                id = format!("{id}_r{}", round.round);
            }
            Candidate {
                count: profiles.len(),
                profiles: profiles.into_iter().collect(),
                category,
                suggested_entry_id: id,
                term,
            }
        })
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.term.cmp(&b.term)));
    Ok(out)
}
