/// Levenshtein edit distance over Unicode scalar values.
///
/// Two-row dynamic programme, `O(|a|·|b|)` time and `O(min(|a|,|b|))` space.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

pub(crate) fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return long.len();
    }
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut cur = vec![0; short.len() + 1];
    for (i, &lc) in long.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &sc) in short.iter().enumerate() {
            let sub = prev[j] + usize::from(lc != sc);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// `1 − distance / max(|a|, |b|)`, with two empty strings scoring 1.
pub fn similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    similarity_chars(&a, &b)
}

pub(crate) fn similarity_chars(a: &[char], b: &[char]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein_chars(a, b) as f64 / longest as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Full `(|a|+1)×(|b|+1)` table, kept deliberately naive.
    fn dp_table(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
                d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn distance_examples() {
        assert_eq!(levenshtein("tamoxifen", "tamoxifen"), 0);
        assert_eq!(dp_table("kitten", "sitting"), 3);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(dp_table("tamoxifen", "tamoxefen"), 1);
        assert_eq!(levenshtein("tamoxifen", "tamoxefen"), 1);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("abc", ""), 3);
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(similarity("tamoxifen", "tamoxifen"), 1.0);
        assert_eq!(similarity("", ""), 1.0);
        assert!((similarity("tamoxifen", "tamoxefen") - (1.0 - 1.0 / 9.0)).abs() < 1e-15);
        // DP oracle: 5 edits over 9 characters.
        assert_eq!(dp_table("tamoxifen", "tampon"), 5);
        assert!((similarity("tamoxifen", "tampon") - 4.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn counts_characters_not_bytes() {
        assert_eq!(levenshtein("naïve", "naive"), 1);
        assert!((similarity("naïve", "naive") - 0.8).abs() < 1e-15);
    }
}
