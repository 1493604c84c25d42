//! Sliding-window fuzzy lexicon matcher.
//!
//! Windows of `window_max` down to `window_min` tokens slide over the
//! normalized text. Each window is compared, as a space-joined string, with
//! every lexicon term by Levenshtein similarity. Accepted windows consume
//! their tokens so shorter windows over the same words are skipped, which
//! gives longest-match deduplication. Accepted matches are then checked for
//! a preceding negation trigger.

mod distance;
mod negation;
mod normalize;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::UserProfile;
use crate::jsonl;
use crate::lexicon::{Category, LexiconVersion};

pub use distance::{levenshtein, similarity};
pub use negation::{negated_before, read_triggers, DEFAULT_TRIGGERS};
pub use normalize::{normalize, normalize_term, TokenSequence};

#[derive(Debug, Error, PartialEq)]
pub enum MatcherError {
    #[error("invalid matcher config: {0}")]
    Config(String),
    #[error("lexicon version {0} has no entries")]
    EmptyLexicon(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    pub window_min: usize,
    pub window_max: usize,
    pub stride: usize,
    pub similarity_threshold: f64,
    pub negation_window: usize,
    pub negation_triggers: Vec<String>,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            window_min: 1,
            window_max: 9,
            stride: 1,
            similarity_threshold: 0.85,
            negation_window: 3,
            negation_triggers: DEFAULT_TRIGGERS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<(), MatcherError> {
        let bad = |m: &str| Err(MatcherError::Config(m.to_string()));
        if self.window_min == 0 {
            return bad("window_min must be at least 1");
        }
        if self.window_min > self.window_max {
            return bad("window_min exceeds window_max");
        }
        if self.stride == 0 {
            return bad("stride must be at least 1");
        }
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold <= 1.0) {
            return bad("similarity_threshold must lie in (0, 1]");
        }
        Ok(())
    }
}

/// One detected entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub entry_id: String,
    pub category: Category,
    /// Half-open token span.
    pub span: (usize, usize),
    pub window_size: usize,
    /// Space-joined window text.
    pub surface: String,
    /// Lexicon string the window was scored against.
    pub matched_term: String,
    pub similarity: f64,
    pub negated: bool,
}

struct Term {
    chars: Vec<char>,
    text: String,
    entry: usize,
}

struct EntryRef {
    id: String,
    category: Category,
}

/// A lexicon snapshot compiled for matching.
pub struct Matcher {
    cfg: MatcherConfig,
    entries: Vec<EntryRef>,
    /// Terms bucketed by character length.
    by_len: BTreeMap<usize, Vec<Term>>,
    triggers: Vec<Vec<String>>,
    lexicon_version: u64,
}

impl Matcher {
    pub fn new(lexicon: &LexiconVersion, cfg: MatcherConfig) -> Result<Self, MatcherError> {
        cfg.validate()?;
        if lexicon.is_empty() {
            return Err(MatcherError::EmptyLexicon(lexicon.version()));
        }
        let mut entries = Vec::new();
        let mut by_len: BTreeMap<usize, Vec<Term>> = BTreeMap::new();
        for (idx, e) in lexicon.entries().enumerate() {
            entries.push(EntryRef {
                id: e.entry_id.clone(),
                category: e.category,
            });
            for t in e.terms() {
                let chars: Vec<char> = t.chars().collect();
                by_len.entry(chars.len()).or_default().push(Term {
                    chars,
                    text: t.to_string(),
                    entry: idx,
                });
            }
        }
        let triggers = cfg
            .negation_triggers
            .iter()
            .map(|t| normalize_term(t))
            .filter(|t| !t.is_empty())
            .map(|t| t.split(' ').map(String::from).collect())
            .collect();
        Ok(Self {
            cfg,
            entries,
            by_len,
            triggers,
            lexicon_version: lexicon.version(),
        })
    }

    pub fn config(&self) -> &MatcherConfig {
        &self.cfg
    }

    pub fn lexicon_version(&self) -> u64 {
        self.lexicon_version
    }

    /// Best term for `window`: highest similarity at or above the
    /// threshold, then longer term, then smaller entry id.
    fn best_term(&self, window: &[char]) -> Option<(&Term, f64)> {
        let t = self.cfg.similarity_threshold;
        let len = window.len() as f64;
        // sim >= t forces t·L <= M <= L/t; widened by one for rounding.
        let lo = ((t * len).floor() as usize).saturating_sub(1);
        let hi = (len / t).ceil() as usize + 1;
        let mut best: Option<(&Term, f64)> = None;
        for terms in self.by_len.range(lo..=hi).map(|(_, v)| v) {
            for term in terms {
                let sim = distance::similarity_chars(window, &term.chars);
                if sim < t {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((b, bs)) => sim
                        .partial_cmp(&bs)
                        .unwrap_or(Ordering::Equal)
                        .then(term.chars.len().cmp(&b.chars.len()))
                        .then_with(|| self.entries[b.entry].id.cmp(&self.entries[term.entry].id))
                        == Ordering::Greater,
                };
                if better {
                    best = Some((term, sim));
                }
            }
        }
        best
    }

    pub fn match_tokens(&self, tokens: &TokenSequence) -> Vec<MatchRecord> {
        let n = tokens.len();
        let mut consumed = vec![false; n];
        let mut out = Vec::new();
        for w in (self.cfg.window_min..=self.cfg.window_max.min(n)).rev() {
            let mut start = 0;
            while start + w <= n {
                let end = start + w;
                if !consumed[start..end].iter().any(|&c| c) && tokens.is_within_segment(start, end) {
                    let surface = tokens.join(start, end);
                    let chars: Vec<char> = surface.chars().collect();
                    if let Some((term, sim)) = self.best_term(&chars) {
                        consumed[start..end].iter_mut().for_each(|c| *c = true);
                        let entry = &self.entries[term.entry];
                        out.push(MatchRecord {
                            entry_id: entry.id.clone(),
                            category: entry.category,
                            span: (start, end),
                            window_size: w,
                            surface,
                            matched_term: term.text.clone(),
                            similarity: sim,
                            negated: negated_before(tokens, start, self.cfg.negation_window, &self.triggers),
                        });
                    }
                }
                start += self.cfg.stride;
            }
        }
        out.sort_by_key(|m| m.span);
        out
    }

    pub fn match_text(&self, text: &str) -> Vec<MatchRecord> {
        self.match_tokens(&normalize(text))
    }

    pub fn match_profile(&self, profile: &UserProfile) -> Vec<MatchRecord> {
        self.match_text(&profile.collapsed_text)
    }

    /// Matches profiles in parallel; output follows input order.
    pub fn match_profiles(&self, profiles: &[UserProfile]) -> Vec<ProfileMatches> {
        profiles
            .par_iter()
            .map(|p| {
                let tokens = normalize(&p.collapsed_text);
                ProfileMatches {
                    user_id: p.user_id.clone(),
                    token_count: tokens.len(),
                    matches: self.match_tokens(&tokens),
                }
            })
            .collect()
    }
}

/// Convenience wrapper compiling the lexicon on every call.
pub fn match_profile(
    profile: &UserProfile,
    lexicon: &LexiconVersion,
    cfg: &MatcherConfig,
) -> Result<Vec<MatchRecord>, MatcherError> {
    Ok(Matcher::new(lexicon, cfg.clone())?.match_profile(profile))
}

/// Whether a trigger precedes `span` within the configured window.
pub fn detect_negation(tokens: &TokenSequence, span: (usize, usize), cfg: &MatcherConfig) -> bool {
    let triggers: Vec<Vec<String>> = cfg
        .negation_triggers
        .iter()
        .map(|t| normalize_term(t))
        .filter(|t| !t.is_empty())
        .map(|t| t.split(' ').map(String::from).collect())
        .collect();
    negated_before(tokens, span.0, cfg.negation_window, &triggers)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileMatches {
    pub user_id: String,
    pub token_count: usize,
    pub matches: Vec<MatchRecord>,
}

/// One line of the match output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MatchLine {
    Match {
        user_id: String,
        #[serde(flatten)]
        record: MatchRecord,
    },
    Summary {
        user_id: String,
        lexicon_version: u64,
        token_count: usize,
        medications: usize,
        side_effects: usize,
        negated: usize,
    },
}

/// Writes match records followed by a summary line for every profile.
pub fn write_matches<W: io::Write>(writer: W, lexicon_version: u64, results: &[ProfileMatches]) -> io::Result<()> {
    let mut lines = Vec::new();
    for pm in results {
        for m in &pm.matches {
            lines.push(MatchLine::Match {
                user_id: pm.user_id.clone(),
                record: m.clone(),
            });
        }
        let count = |c: Category| pm.matches.iter().filter(|m| m.category == c).count();
        lines.push(MatchLine::Summary {
            user_id: pm.user_id.clone(),
            lexicon_version,
            token_count: pm.token_count,
            medications: count(Category::Medication),
            side_effects: count(Category::SideEffect),
            negated: pm.matches.iter().filter(|m| m.negated).count(),
        });
    }
    jsonl::write_records(writer, &lines)
}

/// Reads a match file back into per-profile results (in file order) and
/// the lexicon version recorded in its summaries.
pub fn read_matches<R: io::BufRead>(reader: R) -> io::Result<(Vec<ProfileMatches>, Option<u64>)> {
    let (records, bad) = jsonl::read_records::<MatchLine, _>(reader)?;
    if let Some(e) = bad.first() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("match file line {}: {}", e.line, e.reason),
        ));
    }
    let mut out: Vec<ProfileMatches> = Vec::new();
    let mut pending: Vec<MatchRecord> = Vec::new();
    let mut version = None;
    for (_, line) in records {
        match line {
            MatchLine::Match { record, .. } => pending.push(record),
            MatchLine::Summary {
                user_id,
                token_count,
                lexicon_version,
                ..
            } => {
                version = Some(lexicon_version);
                out.push(ProfileMatches {
                    user_id,
                    token_count,
                    matches: std::mem::take(&mut pending),
                });
            }
        }
    }
    if !pending.is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "match records without summary line"));
    }
    Ok((out, version))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{FunctionalClass, LexiconEntry, Provenance};

    fn lexicon(entries: Vec<LexiconEntry>) -> LexiconVersion {
        LexiconVersion::seed(1, entries).unwrap()
    }

    fn tamoxifen() -> LexiconEntry {
        LexiconEntry::medication("tamoxifen", "tamoxifen", FunctionalClass::HormoneTherapy, Provenance::NciMedicationLibrary)
    }

    fn se(id: &str, term: &str) -> LexiconEntry {
        LexiconEntry::side_effect(id, term, Provenance::NciSideEffects)
    }

    #[test]
    fn exact_single_word() {
        let m = Matcher::new(&lexicon(vec![tamoxifen()]), MatcherConfig::default()).unwrap();
        let out = m.match_text("i started tamoxifen yesterday");
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].entry_id, "tamoxifen");
        assert_eq!(out[0].category, Category::Medication);
        assert_eq!(out[0].span, (2, 3));
        assert_eq!(out[0].similarity, 1.0);
        assert!(!out[0].negated);
    }

    #[test]
    fn longest_match_wins() {
        let m = Matcher::new(&lexicon(vec![se("hair_loss", "hair loss"), se("hair", "hair")]), MatcherConfig::default()).unwrap();
        let out = m.match_text("hair loss is brutal");
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].entry_id, "hair_loss");
        assert_eq!(out[0].window_size, 2);
    }

    #[test]
    fn fuzzy_misspelling() {
        let m = Matcher::new(&lexicon(vec![tamoxifen()]), MatcherConfig::default()).unwrap();
        let out = m.match_text("taking tamoxefen now");
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].surface, "tamoxefen");
        assert!((out[0].similarity - (1.0 - 1.0 / 9.0)).abs() < 1e-12);
    }

    #[test]
    fn short_collision_rejected() {
        let m = Matcher::new(&lexicon(vec![tamoxifen()]), MatcherConfig::default()).unwrap();
        assert!(m.match_text("need a tampon").is_empty());
    }

    #[test]
    fn negated_match() {
        let m = Matcher::new(&lexicon(vec![se("hair_loss", "hair loss")]), MatcherConfig::default()).unwrap();
        let out = m.match_text("no hair loss so far");
        assert_eq!(out.len(), 1);
        assert!(out[0].negated);
    }

    #[test]
    fn windows_do_not_cross_posts() {
        let m = Matcher::new(&lexicon(vec![se("hair_loss", "hair loss")]), MatcherConfig::default()).unwrap();
        let profile = UserProfile::from_posts(vec![
            crate::corpus::Post {
                id: "1".into(),
                user_id: "u".into(),
                timestamp: chrono::DateTime::from_timestamp(0, 0).unwrap(),
                text: "brushing my hair".into(),
            },
            crate::corpus::Post {
                id: "2".into(),
                user_id: "u".into(),
                timestamp: chrono::DateTime::from_timestamp(1, 0).unwrap(),
                text: "loss of appetite".into(),
            },
        ])
        .unwrap();
        assert!(m.match_profile(&profile).is_empty());
    }

    #[test]
    fn tie_prefers_longer_term_then_entry_id() {
        let cfg = MatcherConfig {
            similarity_threshold: 0.6,
            ..MatcherConfig::default()
        };
        // Equal length, equal similarity: smaller entry id wins.
        let lex = lexicon(vec![se("b_entry", "abcx"), se("a_entry", "abcy")]);
        let m = Matcher::new(&lex, cfg.clone()).unwrap();
        assert_eq!(m.match_text("abcz")[0].entry_id, "a_entry");

        // "abcdxy" is two edits from both terms (4/6 similarity); the longer term wins.
        let lex = lexicon(vec![se("a_entry", "abcd"), se("b_entry", "abcdef")]);
        let m = Matcher::new(&lex, cfg).unwrap();
        let out = m.match_text("abcdxy");
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].entry_id, "b_entry");
    }

    #[test]
    fn config_validation() {
        let lex = lexicon(vec![tamoxifen()]);
        for cfg in [
            MatcherConfig { window_min: 0, ..Default::default() },
            MatcherConfig { window_min: 4, window_max: 3, ..Default::default() },
            MatcherConfig { stride: 0, ..Default::default() },
            MatcherConfig { similarity_threshold: 0.0, ..Default::default() },
            MatcherConfig { similarity_threshold: 1.5, ..Default::default() },
        ] {
            assert!(matches!(Matcher::new(&lex, cfg), Err(MatcherError::Config(_))));
        }
        assert!(matches!(
            Matcher::new(&lexicon(vec![]), MatcherConfig::default()),
            Err(MatcherError::EmptyLexicon(1))
        ));
    }

    #[test]
    fn match_file_roundtrip() {
        let m = Matcher::new(&lexicon(vec![tamoxifen(), se("hair_loss", "hair loss")]), MatcherConfig::default()).unwrap();
        let profiles = vec![
            UserProfile::from_text("a", "tamoxifen and no hair loss"),
            UserProfile::from_text("b", "nothing here"),
        ];
        let results = m.match_profiles(&profiles);
        let mut buf = Vec::new();
        write_matches(&mut buf, 1, &results).unwrap();
        let (back, version) = read_matches(buf.as_slice()).unwrap();
        assert_eq!(back, results);
        assert_eq!(version, Some(1));
    }
}
