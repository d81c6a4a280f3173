//! Cheap reference similarities: negative-sample filters and baselines.

use std::collections::BTreeMap;

use crate::edits::tokenize;

/// Jaro similarity. Two empty strings score 1.
pub fn jaro(x: &str, y: &str) -> f64 {
    strsim::jaro(x, y)
}

/// Cosine of raw token-count vectors after case folding.
pub fn cosine_tokens(x: &str, y: &str) -> f64 {
    let (a, b) = (counts(x), counts(y));
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let dot: f64 = a.iter().filter_map(|(t, n)| b.get(t).map(|m| n * m)).sum();
    let na: f64 = a.values().map(|n| n * n).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|n| n * n).sum::<f64>().sqrt();
    (dot / (na * nb)).min(1.0)
}

fn counts(s: &str) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for t in tokenize(s) {
        *m.entry(t).or_insert(0.0) += 1.0;
    }
    m
}

/// Unit-cost insert/delete/substitute distance over characters.
pub fn levenshtein(x: &str, y: &str) -> usize {
    strsim::levenshtein(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn jaro_examples() {
        assert_eq!(jaro("abc", "abc"), 1.0);
        assert_eq!(jaro("ab", "cd"), 0.0);
        assert_eq!(jaro("", ""), 1.0);
        // m = 6, t = 1: (1 + 1 + 5/6) / 3
        assert!((jaro("MARTHA", "MARHTA") - (2.0 + 5.0 / 6.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_tokens("a b", "a c") - 0.5).abs() < 1e-12);
        assert!((cosine_tokens("b A", "a b") - 1.0).abs() < 1e-12);
        assert_eq!(cosine_tokens("a", "b"), 0.0);
        assert_eq!(cosine_tokens("", "a"), 0.0);
        assert_eq!(cosine_tokens(", ;", "a"), 0.0);
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("abc", "abc"), 0);
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(x in "[ab c]{0,6}", y in "[ab c]{0,6}", z in "[ab c]{0,6}") {
            prop_assert_eq!(jaro(&x, &y), jaro(&y, &x));
            prop_assert_eq!(cosine_tokens(&x, &y), cosine_tokens(&y, &x));
            for v in [jaro(&x, &y), cosine_tokens(&x, &y)] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let (lx, ly) = (x.chars().count(), y.chars().count());
            prop_assert!(levenshtein(&x, &y) <= lx.max(ly));
            prop_assert!(levenshtein(&x, &z) <= levenshtein(&x, &y) + levenshtein(&y, &z));
        }
    }
}
