//! Post ingestion, keyword filtering and per-user collapsing.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, BufRead};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, LineError};

/// Reserved token placed between posts in a collapsed profile.
///
/// The matcher treats it as a hard boundary: no window and no negation
/// scope may span it, and it never survives tokenisation, so it cannot
/// match a lexicon entry.
pub const POST_BOUNDARY: char = '\u{241E}';

/// Keywords used to compile the original collection.
pub const DEFAULT_KEYWORDS: [&str; 4] = ["cancer", "breastcancer", "tamoxifen", "survivor"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unreadable post source: {0}")]
    Io(#[from] io::Error),
    #[error("keyword filter needs at least one keyword")]
    NoKeywords,
    #[error("keyword {0:?} is listed twice")]
    DuplicateKeyword(String),
    #[error("keyword {0:?} must be lowercase and free of whitespace")]
    InvalidKeyword(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub user_id: String,
    pub timestamp: DateTime<Utc>,
    pub text: String,
}

/// Posts in ingestion order with unique ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostCollection {
    posts: Vec<Post>,
}

impl PostCollection {
    /// Builds a collection, keeping the first post for every repeated id.
    pub fn new(posts: impl IntoIterator<Item = Post>) -> Self {
        let mut seen = HashSet::new();
        let posts = posts
            .into_iter()
            .filter(|p| seen.insert(p.id.clone()))
            .collect();
        Self { posts }
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn into_posts(self) -> Vec<Post> {
        self.posts
    }
}

/// Tally produced by [`ingest_posts`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub duplicates: usize,
    pub rejected: Vec<LineError>,
}

#[derive(Deserialize)]
struct RawPost {
    id: Option<String>,
    user_id: Option<String>,
    timestamp: Option<String>,
    text: Option<String>,
}

impl RawPost {
    fn into_post(self) -> Result<Post, String> {
        let id = self.id.filter(|s| !s.is_empty()).ok_or("missing or empty id")?;
        let user_id = self
            .user_id
            .filter(|s| !s.is_empty())
            .ok_or("missing or empty user_id")?;
        let ts = self.timestamp.ok_or("missing timestamp")?;
        let timestamp = DateTime::parse_from_rfc3339(&ts)
            .map_err(|e| format!("bad timestamp {ts:?}: {e}"))?
            .with_timezone(&Utc);
        let text = self.text.ok_or("missing text")?;
        if text.trim().is_empty() {
            return Err("empty text".into());
        }
        Ok(Post {
            id,
            user_id,
            timestamp,
            text,
        })
    }
}

/// Reads a line-delimited JSON post dump.
///
/// Malformed lines are tallied in the report; repeated ids keep the first
/// occurrence. Only a failing reader aborts.
pub fn ingest_posts<R: BufRead>(source: R) -> Result<(PostCollection, IngestReport), CorpusError> {
    let (records, mut rejected) = jsonl::read_records::<RawPost, _>(source)?;
    let mut report = IngestReport::default();
    let mut seen = HashSet::new();
    let mut posts = Vec::with_capacity(records.len());
    for (line, raw) in records {
        match raw.into_post() {
            Ok(post) => {
                if seen.insert(post.id.clone()) {
                    posts.push(post);
                } else {
                    report.duplicates += 1;
                }
            }
            Err(reason) => rejected.push(LineError { line, reason }),
        }
    }
    if report.duplicates > 0 {
        log::warn!("{} duplicate post ids dropped", report.duplicates);
    }
    rejected.sort_by_key(|e| e.line);
    report.accepted = posts.len();
    report.rejected = rejected;
    Ok((PostCollection { posts }, report))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordFilterConfig {
    keywords: Vec<String>,
    #[serde(default = "default_true")]
    include_hashtag_forms: bool,
}

fn default_true() -> bool {
    true
}

impl KeywordFilterConfig {
    pub fn new<S: Into<String>>(
        keywords: impl IntoIterator<Item = S>,
        include_hashtag_forms: bool,
    ) -> Result<Self, CorpusError> {
        let cfg = Self {
            keywords: keywords.into_iter().map(Into::into).collect(),
            include_hashtag_forms,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.keywords.is_empty() {
            return Err(CorpusError::NoKeywords);
        }
        let mut seen = HashSet::new();
        for k in &self.keywords {
            if k.is_empty() || k.chars().any(char::is_whitespace) || k.to_lowercase() != *k {
                return Err(CorpusError::InvalidKeyword(k.clone()));
            }
            if !seen.insert(k.as_str()) {
                return Err(CorpusError::DuplicateKeyword(k.clone()));
            }
        }
        Ok(())
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn include_hashtag_forms(&self) -> bool {
        self.include_hashtag_forms
    }

    fn matches(&self, text: &str) -> bool {
        let folded = text.to_lowercase();
        folded
            .split(|c: char| !(c.is_alphanumeric() || c == '#'))
            .filter(|t| !t.is_empty())
            .any(|tok| {
                let tok = tok.trim_end_matches('#');
                match tok.strip_prefix('#') {
                    Some(tag) => {
                        self.include_hashtag_forms
                            && self.keywords.iter().any(|k| k == tag.trim_start_matches('#'))
                    }
                    None => self.keywords.iter().any(|k| k == tok),
                }
            })
    }
}

impl Default for KeywordFilterConfig {
    fn default() -> Self {
        Self {
            keywords: DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            include_hashtag_forms: true,
        }
    }
}

/// Keeps posts mentioning a keyword as a token, or as `#keyword` when
/// hashtag forms are enabled.
pub fn keyword_filter(posts: &PostCollection, cfg: &KeywordFilterConfig) -> PostCollection {
    PostCollection {
        posts: posts
            .posts
            .iter()
            .filter(|p| cfg.matches(&p.text))
            .cloned()
            .collect(),
    }
}

/// All posts of one user, ordered by time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub posts: Vec<Post>,
    pub post_count: usize,
    pub collapsed_text: String,
    pub first_timestamp: DateTime<Utc>,
    pub last_timestamp: DateTime<Utc>,
}

impl UserProfile {
    /// Builds a profile from posts of a single user. Returns `None` when
    /// `posts` is empty or mixes users.
    pub fn from_posts(mut posts: Vec<Post>) -> Option<Self> {
        let user_id = posts.first()?.user_id.clone();
        if posts.iter().any(|p| p.user_id != user_id) {
            return None;
        }
        posts.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));
        let sep = format!(" {POST_BOUNDARY} ");
        let collapsed_text = posts
            .iter()
            .map(|p| p.text.replace(POST_BOUNDARY, " "))
            .collect::<Vec<_>>()
            .join(&sep);
        Some(Self {
            user_id,
            post_count: posts.len(),
            first_timestamp: posts[0].timestamp,
            last_timestamp: posts[posts.len() - 1].timestamp,
            posts,
            collapsed_text,
        })
    }

    /// Profile holding a single free-text document, for ad-hoc matching.
    pub fn from_text(user_id: &str, text: &str) -> Self {
        let post = Post {
            id: format!("{user_id}-0"),
            user_id: user_id.to_string(),
            timestamp: DateTime::<Utc>::UNIX_EPOCH,
            text: text.to_string(),
        };
        Self::from_posts(vec![post]).expect("single post")
    }
}

/// Groups posts into one profile per user, sorted by user id.
pub fn collapse_by_user(posts: &PostCollection) -> Vec<UserProfile> {
    let mut by_user: BTreeMap<&str, Vec<Post>> = BTreeMap::new();
    for p in &posts.posts {
        by_user.entry(p.user_id.as_str()).or_default().push(p.clone());
    }
    by_user
        .into_values()
        .filter_map(UserProfile::from_posts)
        .collect()
}

/// Reads a profile store written by [`write_profiles`].
pub fn read_profiles<R: BufRead>(reader: R) -> io::Result<Vec<UserProfile>> {
    let (records, bad) = jsonl::read_records::<UserProfile, _>(reader)?;
    if let Some(e) = bad.first() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("profile store line {}: {}", e.line, e.reason),
        ));
    }
    Ok(records.into_iter().map(|(_, p)| p).collect())
}

pub fn write_profiles<W: io::Write>(writer: W, profiles: &[UserProfile]) -> io::Result<()> {
    jsonl::write_records(writer, profiles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn post(id: &str, user: &str, secs: i64, text: &str) -> Post {
        Post {
            id: id.into(),
            user_id: user.into(),
            timestamp: DateTime::from_timestamp(secs, 0).unwrap(),
            text: text.into(),
        }
    }

    fn line(id: &str, user: &str, text: &str) -> String {
        format!(r#"{{"id":"{id}","user_id":"{user}","timestamp":"2023-05-01T10:00:00Z","text":"{text}"}}"#)
    }

    #[test]
    fn ingest_three_lines() {
        let src = [line("1", "a", "x"), line("2", "a", "y"), line("3", "b", "z")].join("\n");
        let (posts, report) = ingest_posts(src.as_bytes()).unwrap();
        assert_eq!(posts.len(), 3);
        assert_eq!(report.accepted, 3);
        assert!(report.rejected.is_empty());
        assert_eq!(posts.posts()[2].id, "3");
    }

    #[test]
    fn ingest_rejects_missing_text() {
        let src = [
            line("1", "a", "x"),
            r#"{"id":"2","user_id":"a","timestamp":"2023-05-01T10:00:00Z"}"#.to_string(),
            line("3", "b", "z"),
        ]
        .join("\n");
        let (posts, report) = ingest_posts(src.as_bytes()).unwrap();
        assert_eq!(posts.len(), 2);
        assert_eq!(report.rejected.len(), 1);
        assert_eq!(report.rejected[0].line, 2);
    }

    #[test]
    fn ingest_rejects_garbage_and_blank_text() {
        let src = ["not json".to_string(), line("1", "a", "   "), line("2", "a", "ok")].join("\n");
        let (posts, report) = ingest_posts(src.as_bytes()).unwrap();
        assert_eq!(posts.len(), 1);
        assert_eq!(report.rejected.len(), 2);
    }

    #[test]
    fn ingest_keeps_first_duplicate() {
        let src = [line("1", "a", "first"), line("1", "a", "second")].join("\n");
        let (posts, report) = ingest_posts(src.as_bytes()).unwrap();
        assert_eq!(posts.len(), 1);
        assert_eq!(report.duplicates, 1);
        assert_eq!(posts.posts()[0].text, "first");
    }

    #[test]
    fn ingest_unreadable_source_is_fatal() {
        struct Broken;
        impl io::Read for Broken {
            fn read(&mut self, _: &mut [u8]) -> io::Result<usize> {
                Err(io::Error::other("boom"))
            }
        }
        let err = ingest_posts(io::BufReader::new(Broken)).unwrap_err();
        assert!(matches!(err, CorpusError::Io(_)));
    }

    #[test]
    fn keyword_filter_examples() {
        let cfg = KeywordFilterConfig::default();
        let posts = PostCollection::new(vec![
            post("1", "a", 0, "Started Tamoxifen today"),
            post("2", "a", 1, "#BreastCancer awareness walk"),
            post("3", "b", 2, "lovely weather"),
        ]);
        let kept: Vec<_> = keyword_filter(&posts, &cfg)
            .posts()
            .iter()
            .map(|p| p.id.clone())
            .collect();
        assert_eq!(kept, ["1", "2"]);
    }

    #[test]
    fn hashtag_forms_can_be_disabled() {
        let cfg = KeywordFilterConfig::new(["breastcancer"], false).unwrap();
        let posts = PostCollection::new(vec![
            post("1", "a", 0, "#breastcancer"),
            post("2", "a", 0, "breastcancer, again"),
        ]);
        let kept = keyword_filter(&posts, &cfg);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept.posts()[0].id, "2");
    }

    #[test]
    fn keyword_config_validation() {
        assert!(matches!(
            KeywordFilterConfig::new(Vec::<String>::new(), true),
            Err(CorpusError::NoKeywords)
        ));
        assert!(matches!(
            KeywordFilterConfig::new(["a", "a"], true),
            Err(CorpusError::DuplicateKeyword(_))
        ));
        assert!(matches!(
            KeywordFilterConfig::new(["Cancer"], true),
            Err(CorpusError::InvalidKeyword(_))
        ));
    }

    #[test]
    fn collapse_groups_by_user() {
        let posts = PostCollection::new(vec![
            post("1", "A", 10, "one"),
            post("2", "B", 5, "two"),
            post("3", "A", 1, "three"),
        ]);
        let profiles = collapse_by_user(&posts);
        assert_eq!(profiles.len(), 2);
        assert_eq!(profiles[0].user_id, "A");
        assert_eq!(profiles[0].post_count, 2);
        assert_eq!(profiles[1].post_count, 1);
        assert_eq!(profiles[0].collapsed_text, format!("three {POST_BOUNDARY} one"));
        assert_eq!(profiles[0].first_timestamp.timestamp(), 1);
        assert_eq!(profiles[0].last_timestamp.timestamp(), 10);
    }

    #[test]
    fn collapse_empty() {
        assert!(collapse_by_user(&PostCollection::default()).is_empty());
    }

    #[test]
    fn collapse_ties_break_on_id() {
        let posts = PostCollection::new(vec![post("b", "A", 3, "second"), post("a", "A", 3, "first")]);
        let p = &collapse_by_user(&posts)[0];
        assert_eq!(p.posts[0].id, "a");
        assert_eq!(p.posts[1].id, "b");
    }

    #[test]
    fn boundary_marker_in_text_is_scrubbed() {
        let text = format!("odd {POST_BOUNDARY} text");
        let posts = PostCollection::new(vec![post("1", "A", 0, &text), post("2", "A", 1, "x")]);
        let p = &collapse_by_user(&posts)[0];
        assert_eq!(p.collapsed_text.matches(POST_BOUNDARY).count(), 1);
    }

    fn arb_posts() -> impl Strategy<Value = Vec<Post>> {
        prop::collection::vec(
            (0u8..6, 0i64..5, prop::sample::select(vec!["cancer day", "#tamoxifen", "hello", "Survivor!"])),
            0..25,
        )
        .prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (u, t, txt))| post(&format!("p{i}"), &format!("u{u}"), t, txt))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn collapse_preserves_counts_and_markers(posts in arb_posts()) {
            let coll = PostCollection::new(posts);
            let profiles = collapse_by_user(&coll);
            let total: usize = profiles.iter().map(|p| p.post_count).sum();
            prop_assert_eq!(total, coll.len());
            for p in &profiles {
                prop_assert_eq!(p.post_count, p.posts.len());
                prop_assert!(p.posts.iter().all(|x| x.user_id == p.user_id));
                prop_assert_eq!(p.collapsed_text.matches(POST_BOUNDARY).count(), p.post_count - 1);
            }
        }

        #[test]
        fn collapse_is_order_insensitive(posts in arb_posts(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = posts.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(
                collapse_by_user(&PostCollection::new(posts)),
                collapse_by_user(&PostCollection::new(shuffled))
            );
        }

        #[test]
        fn keyword_filter_is_idempotent(posts in arb_posts()) {
            let cfg = KeywordFilterConfig::default();
            let once = keyword_filter(&PostCollection::new(posts), &cfg);
            let twice = keyword_filter(&once, &cfg);
            prop_assert_eq!(once, twice);
        }
    }
}
