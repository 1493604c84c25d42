use std::io::{self, BufRead};

use super::normalize::{normalize_term, TokenSequence};

/// Triggers shipped with the default configuration.
pub const DEFAULT_TRIGGERS: [&str; 13] = [
    "no", "not", "never", "without", "none", "didn't", "don't", "doesn't", "wasn't", "isn't",
    "stopped", "quit", "free of",
];

/// Reads a trigger list: one trigger per line, blank lines and lines
/// starting with `//` ignored.
pub fn read_triggers<R: BufRead>(reader: R) -> io::Result<Vec<String>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with("//") {
            continue;
        }
        let t = normalize_term(line);
        if !t.is_empty() && !out.contains(&t) {
            out.push(t);
        }
    }
    Ok(out)
}

/// True iff a trigger lies entirely within the `window` tokens preceding
/// `start`, without crossing a sentence or post boundary.
///
/// `triggers` hold pre-split token sequences (multi-word triggers allowed).
pub fn negated_before(tokens: &TokenSequence, start: usize, window: usize, triggers: &[Vec<String>]) -> bool {
    let mut lower = start.saturating_sub(window);
    // Scan back for the closest boundary before the span; tokens at or
    // before it belong to an earlier segment.
    for i in (lower..start).rev() {
        if tokens.boundary_flags[i] {
            lower = i + 1;
            break;
        }
    }
    triggers.iter().any(|trig| {
        let m = trig.len();
        m > 0
            && m <= start - lower
            && (lower..=start - m).any(|s| tokens.tokens[s..s + m] == trig[..])
    })
}
