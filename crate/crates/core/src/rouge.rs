//! ROUGE-1/2/L F1 over whole summaries.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RougeError {
    #[error("{references} references but {generated} generated summaries")]
    LengthMismatch { references: usize, generated: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_counts(overlap: usize, generated: usize, reference: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        Self::from_pr(ratio(overlap, generated), ratio(overlap, reference))
    }

    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

/// Lowercases and splits on every run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn ngram_counts<S: Eq + Hash>(words: &[S], n: usize) -> HashMap<&[S], usize> {
    let mut counts = HashMap::new();
    if n > 0 && words.len() >= n {
        for w in words.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap.
pub fn rouge_n<S: Eq + Hash>(reference: &[S], generated: &[S], n: usize) -> RougeScore {
    let r = ngram_counts(reference, n);
    let g = ngram_counts(generated, n);
    let overlap = g
        .iter()
        .map(|(k, &c)| c.min(r.get(k).copied().unwrap_or(0)))
        .sum();
    RougeScore::from_counts(overlap, g.values().sum(), r.values().sum())
}

/// Length of the longest common subsequence, two-row dynamic program.
pub fn lcs_len<S: Eq>(a: &[S], b: &[S]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS over the whole summaries (no sentence splitting).
pub fn rouge_l<S: Eq>(reference: &[S], generated: &[S]) -> RougeScore {
    RougeScore::from_counts(lcs_len(reference, generated), generated.len(), reference.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleScores {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RougeReport {
    pub samples: Vec<SampleScores>,
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
    pub count: usize,
}

fn mean_score(scores: impl Iterator<Item = RougeScore>, n: usize) -> RougeScore {
    if n == 0 {
        return RougeScore::default();
    }
    let (p, r, f) = scores.fold((0.0, 0.0, 0.0), |(p, r, f), s| (p + s.precision, r + s.recall, f + s.f1));
    let n = n as f64;
    RougeScore {
        precision: p / n,
        recall: r / n,
        f1: f / n,
    }
}

pub fn score_pair(reference: &[String], generated: &[String]) -> SampleScores {
    SampleScores {
        rouge1: rouge_n(reference, generated, 1),
        rouge2: rouge_n(reference, generated, 2),
        rouge_l: rouge_l(reference, generated),
    }
}

/// Per-sample scores and their arithmetic means.
pub fn evaluate_corpus<R, G>(
    references: &[R],
    generated: &[G],
    tokenization: impl Fn(&str) -> Vec<String>,
) -> Result<RougeReport, RougeError>
where
    R: AsRef<str>,
    G: AsRef<str>,
{
    if references.len() != generated.len() {
        return Err(RougeError::LengthMismatch {
            references: references.len(),
            generated: generated.len(),
        });
    }
    let samples: Vec<SampleScores> = references
        .iter()
        .zip(generated)
        .map(|(r, g)| score_pair(&tokenization(r.as_ref()), &tokenization(g.as_ref())))
        .collect();
    let n = samples.len();
    Ok(RougeReport {
        rouge1: mean_score(samples.iter().map(|s| s.rouge1), n),
        rouge2: mean_score(samples.iter().map(|s| s.rouge2), n),
        rouge_l: mean_score(samples.iter().map(|s| s.rouge_l), n),
        count: n,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn hand_fixture() {
        let (r, g) = (w("a b c"), w("a b d"));
        assert!((rouge_n(&r, &g, 1).f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((rouge_n(&r, &g, 2).f1 - 0.5).abs() < 1e-15);
        let l = rouge_l(&r, &g);
        assert_eq!(lcs_len(&r, &g), 2);
        assert!((l.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((l.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identity_and_disjoint() {
        let a = w("the cat sat on the mat");
        for n in 1..=3 {
            assert_eq!(rouge_n(&a, &a, n), RougeScore::from_pr(1.0, 1.0));
        }
        assert_eq!(rouge_l(&a, &a).f1, 1.0);
        let b = w("dogs bark loudly");
        assert_eq!(rouge_n(&a, &b, 1), RougeScore::default());
        assert_eq!(rouge_l(&a, &b), RougeScore::default());
    }

    #[test]
    fn clipped_counting() {
        // "the" appears twice in gen but once in ref: overlap clipped to 1
        let s = rouge_n(&w("the cat"), &w("the the"), 1);
        assert_eq!(s.precision, 0.5);
        assert_eq!(s.recall, 0.5);
    }

    #[test]
    fn empty_ngram_sets_score_zero() {
        let s = rouge_n(&w("a"), &w("a"), 2);
        assert_eq!(s, RougeScore::default());
        assert_eq!(rouge_l::<String>(&[], &[]), RougeScore::default());
    }

    #[test]
    fn subsequence_has_full_precision() {
        assert_eq!(rouge_l(&w("a b c d e"), &w("b d e")).precision, 1.0);
    }

    #[test]
    fn tokenization_rule() {
        assert_eq!(tokenize("Hello, World!--x2 y"), vec!["hello", "world", "x2", "y"]);
    }

    #[test]
    fn corpus_means() {
        let r = evaluate_corpus(&["a b c"], &["a b d"], tokenize).unwrap();
        assert_eq!(r.rouge1, r.samples[0].rouge1);
        let r2 = evaluate_corpus(&["a b c", "a b c"], &["a b d", "a b d"], tokenize).unwrap();
        assert!((r2.rouge1.f1 - r.rouge1.f1).abs() < 1e-15);

        // 3-pair fixture, hand values:
        //   (a b c | a b d): R1 2/3, R2 1/2, RL 2/3
        //   (x y | x y):     R1 1,   R2 1,   RL 1
        //   (p q r s | s r): R1 p=1 r=1/2 f=2/3; R2 0; RL lcs 1 → p=1/2 r=1/4 f=1/3
        let r3 = evaluate_corpus(&["a b c", "x y", "p q r s"], &["a b d", "x y", "s r"], tokenize).unwrap();
        assert!((r3.rouge1.f1 - (2.0 / 3.0 + 1.0 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
        assert!((r3.rouge2.f1 - (0.5 + 1.0 + 0.0) / 3.0).abs() < 1e-12);
        assert!((r3.rouge_l.f1 - (2.0 / 3.0 + 1.0 + 1.0 / 3.0) / 3.0).abs() < 1e-12);
        assert_eq!(r3.count, 3);

        assert_eq!(
            evaluate_corpus(&["a"], &["a", "b"], tokenize).unwrap_err(),
            RougeError::LengthMismatch {
                references: 1,
                generated: 2
            }
        );
    }
}
