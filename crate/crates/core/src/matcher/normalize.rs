use serde::{Deserialize, Serialize};

use crate::corpus::POST_BOUNDARY;

/// Lowercased tokens with a flag marking tokens that end a sentence or post.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub boundary_flags: Vec<bool>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// True when `[start, end)` stays inside one sentence/post segment.
    ///
    /// Only the last token of the span may carry a boundary flag.
    pub fn is_within_segment(&self, start: usize, end: usize) -> bool {
        end <= self.len() && start < end && !self.boundary_flags[start..end - 1].iter().any(|&b| b)
    }

    /// Space-joined text of `[start, end)`.
    pub fn join(&self, start: usize, end: usize) -> String {
        self.tokens[start..end].join(" ")
    }

    fn push_token(&mut self, tok: &mut String) {
        if !tok.is_empty() {
            self.tokens.push(std::mem::take(tok));
            self.boundary_flags.push(false);
        }
    }

    fn mark_boundary(&mut self) {
        if let Some(last) = self.boundary_flags.last_mut() {
            *last = true;
        }
    }
}

fn is_url(chunk: &str) -> bool {
    chunk.starts_with("http://") || chunk.starts_with("https://") || chunk.starts_with("www.")
}

fn is_joiner(c: char) -> bool {
    matches!(c, '-' | '\'' | '\u{2019}' | '\u{2010}' | '\u{2011}')
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '\u{2026}')
}

/// Tokenizes social-media text for lexicon matching.
///
/// Case-folds, deletes URLs and @-mentions, turns `#word` into `word`,
/// records sentence ends (`.`, `!`, `?`) and post separators as boundary
/// flags, and keeps hyphens and apostrophes only inside words. Every other
/// punctuation character splits tokens.
pub fn normalize(text: &str) -> TokenSequence {
    let mut seq = TokenSequence::default();
    let folded = text.to_lowercase();
    for chunk in folded.split_whitespace() {
        if is_url(chunk) || chunk.starts_with('@') {
            // A URL or mention may still close a sentence.
            if chunk.ends_with(is_terminal) && !is_url(chunk.trim_end_matches(is_terminal)) {
                seq.mark_boundary();
            }
            continue;
        }
        let chars: Vec<char> = chunk.chars().collect();
        let mut tok = String::new();
        for (i, &c) in chars.iter().enumerate() {
            let prev_alnum = i > 0 && chars[i - 1].is_alphanumeric();
            let next_alnum = chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
            if c.is_alphanumeric() {
                tok.push(c);
            } else if is_joiner(c) && prev_alnum && next_alnum && !tok.is_empty() {
                tok.push(match c {
                    '\u{2019}' => '\'',
                    '\u{2010}' | '\u{2011}' => '-',
                    other => other,
                });
            } else if c == POST_BOUNDARY || (is_terminal(c) && !next_alnum) {
                seq.push_token(&mut tok);
                seq.mark_boundary();
            } else {
                seq.push_token(&mut tok);
            }
        }
        seq.push_token(&mut tok);
    }
    seq
}

/// Normalized tokens joined by single spaces; used for lexicon strings and
/// negation triggers so they compare against matcher windows directly.
pub fn normalize_term(term: &str) -> String {
    normalize(term).tokens.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &TokenSequence) -> Vec<&str> {
        s.tokens.iter().map(String::as_str).collect()
    }

    #[test]
    fn strips_urls_mentions_and_hashtags() {
        let s = normalize("#BreastCancer is HARD!! http://t.co/x @doc");
        assert_eq!(toks(&s), ["breastcancer", "is", "hard"]);
        assert_eq!(s.boundary_flags, [false, false, true]);
    }

    #[test]
    fn empty_text() {
        assert!(normalize("").is_empty());
        assert!(normalize("   \n ").is_empty());
    }

    #[test]
    fn keeps_intra_word_hyphen() {
        let s = normalize("hot-flashes, no joke.");
        assert_eq!(toks(&s), ["hot-flashes", "no", "joke"]);
        assert_eq!(s.boundary_flags, [false, false, true]);
    }

    #[test]
    fn apostrophes_and_curly_quotes() {
        let s = normalize("I didn\u{2019}t feel 'sick' -- really");
        assert_eq!(toks(&s), ["i", "didn't", "feel", "sick", "really"]);
    }

    #[test]
    fn slash_splits_tokens() {
        assert_eq!(toks(&normalize("pain/nausea")), ["pain", "nausea"]);
    }

    #[test]
    fn post_marker_is_boundary() {
        let s = normalize(&format!("hair {POST_BOUNDARY} loss"));
        assert_eq!(toks(&s), ["hair", "loss"]);
        assert_eq!(s.boundary_flags, [true, false]);
    }

    #[test]
    fn decimal_point_is_not_a_sentence_end() {
        let s = normalize("took 2.5 mg");
        assert_eq!(toks(&s), ["took", "2", "5", "mg"]);
        assert!(s.boundary_flags.iter().all(|b| !b));
    }

    #[test]
    fn mention_closing_sentence_keeps_boundary() {
        let s = normalize("thanks @doc. tamoxifen");
        assert_eq!(toks(&s), ["thanks", "tamoxifen"]);
        assert_eq!(s.boundary_flags, [true, false]);
    }

    #[test]
    fn segment_check() {
        let s = normalize("a b. c d");
        assert!(s.is_within_segment(0, 2));
        assert!(!s.is_within_segment(1, 3));
        assert!(s.is_within_segment(2, 4));
    }

    proptest! {
        #[test]
        fn term_normalization_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_term(&s);
            prop_assert_eq!(normalize_term(&once), once.clone());
        }

        #[test]
        fn no_empty_tokens(s in "\\PC{0,60}") {
            let seq = normalize(&s);
            prop_assert_eq!(seq.tokens.len(), seq.boundary_flags.len());
            prop_assert!(seq.tokens.iter().all(|t| !t.is_empty()));
        }
    }
}
