//! Corpus-level BLEU over pre-tokenised sentences.
//!
//! `BLEU = BP · exp(Σ_n ¼ log p_n)` with clipped n-gram precisions summed
//! over the whole corpus before dividing, and
//! `BP = 1` if `c ≥ r`, else `exp(1 − r/c)`.

use std::collections::HashMap;
use std::hash::Hash;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::transfer::ScoreScale;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    None,
    /// Zero-match orders get `1 / (2^k · total_n)` for the k-th such order.
    #[default]
    Exp,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuScore {
    /// Unit scale, in `[0, 1]`.
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuScore {
    pub fn scaled(&self, scale: ScoreScale) -> ScaledScore {
        ScaledScore::new(self.score, ScoreScale::Unit).rescale(scale)
    }
}

/// A score value tagged with the scale it is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaledScore {
    pub value: f64,
    pub scale: ScoreScale,
}

impl ScaledScore {
    pub fn new(value: f64, scale: ScoreScale) -> Self {
        Self { value, scale }
    }

    pub fn rescale(self, scale: ScoreScale) -> Self {
        let value = match (self.scale, scale) {
            (ScoreScale::Unit, ScoreScale::Percent) => self.value * 100.0,
            (ScoreScale::Percent, ScoreScale::Unit) => self.value / 100.0,
            _ => self.value,
        };
        Self { value, scale }
    }
}

/// `a − b`; both scores must use the same scale.
pub fn delta_bleu(a: ScaledScore, b: ScaledScore) -> Result<f64> {
    if a.scale != b.scale {
        return Err(Error::ScaleMismatch);
    }
    Ok(a.value - b.value)
}

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Sufficient statistics of one sentence pair.
fn sentence_stats<T: Hash + Eq>(hyp: &[T], reference: &[T]) -> ([u64; MAX_ORDER], [u64; MAX_ORDER]) {
    let mut matches = [0u64; MAX_ORDER];
    let mut totals = [0u64; MAX_ORDER];
    for n in 1..=MAX_ORDER {
        let h = ngram_counts(hyp, n);
        let r = ngram_counts(reference, n);
        totals[n - 1] = h.values().sum();
        matches[n - 1] = h
            .iter()
            .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
            .sum();
    }
    (matches, totals)
}

/// Corpus BLEU with a single reference per hypothesis.
pub fn bleu<T, H, R>(hypotheses: &[H], references: &[R], smoothing: Smoothing) -> Result<BleuScore>
where
    T: Hash + Eq,
    H: AsRef<[T]>,
    R: AsRef<[T]>,
{
    if hypotheses.is_empty() {
        return Err(Error::EmptyInput("no hypotheses"));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Dimension {
            expected: references.len(),
            got: hypotheses.len(),
        });
    }
    let mut matches = [0u64; MAX_ORDER];
    let mut totals = [0u64; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0u64, 0u64);
    for (i, (h, r)) in hypotheses.iter().zip(references).enumerate() {
        let (h, r) = (h.as_ref(), r.as_ref());
        if r.is_empty() {
            return Err(Error::UndefinedReference(i + 1));
        }
        let (m, t) = sentence_stats(h, r);
        for n in 0..MAX_ORDER {
            matches[n] += m[n];
            totals[n] += t[n];
        }
        hyp_len += h.len() as u64;
        ref_len += r.len() as u64;
    }
    Ok(score_from_stats(matches, totals, hyp_len, ref_len, smoothing))
}

/// Assembles the score from corpus sums.
pub fn score_from_stats(
    matches: [u64; MAX_ORDER],
    totals: [u64; MAX_ORDER],
    hyp_len: u64,
    ref_len: u64,
    smoothing: Smoothing,
) -> BleuScore {
    let brevity_penalty = brevity_penalty(hyp_len, ref_len);
    let mut precisions = [0.0; MAX_ORDER];
    let mut smooth = 1.0;
    for n in 0..MAX_ORDER {
        if totals[n] == 0 {
            continue;
        }
        precisions[n] = if matches[n] > 0 {
            matches[n] as f64 / totals[n] as f64
        } else if smoothing == Smoothing::Exp {
            smooth *= 2.0;
            1.0 / (smooth * totals[n] as f64)
        } else {
            0.0
        };
    }
    // without a single unigram match the score is 0 regardless of smoothing
    let score = if matches[0] == 0 || precisions.contains(&0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        (brevity_penalty * log_mean.exp()).min(1.0)
    };
    BleuScore {
        score,
        precisions,
        brevity_penalty,
        matches,
        totals,
        hyp_len,
        ref_len,
    }
}

/// `1` when `hyp_len ≥ ref_len`, else `exp(1 − ref_len / hyp_len)`; 0 for an
/// empty hypothesis side.
pub fn brevity_penalty(hyp_len: u64, ref_len: u64) -> f64 {
    if hyp_len >= ref_len {
        1.0
    } else if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// Whitespace tokenisation of each line.
pub fn tokenize_lines(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split_whitespace().map(str::to_owned).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identity_scores_one() {
        let h = [toks("the cat sat on the mat today")];
        let s = bleu(&h, &h, Smoothing::None).unwrap();
        assert_eq!(s.score, 1.0);
        assert_eq!(s.brevity_penalty, 1.0);
        assert_eq!(s.precisions, [1.0; 4]);
    }

    #[test]
    fn clipped_unigram_precision() {
        let h = [toks("the the the the the the the")];
        let r = [toks("the cat is on the mat")];
        let s = bleu(&h, &r, Smoothing::Exp).unwrap();
        assert_eq!(s.matches[0], 2);
        assert_eq!(s.totals[0], 7);
        assert_eq!(s.precisions[0], 2.0 / 7.0);
    }

    #[test]
    fn no_overlap_scores_zero() {
        let s = bleu(&[toks("a b c d")], &[toks("e f g h")], Smoothing::None).unwrap();
        assert_eq!(s.score, 0.0);
        let s = bleu(&[toks("a b c d")], &[toks("e f g h")], Smoothing::Exp).unwrap();
        assert_eq!(s.score, 0.0);
    }

    #[test]
    fn exp_smoothing_halves_successive_zero_orders() {
        // unigrams match, no higher-order matches
        let s = bleu(&[toks("a c e g")], &[toks("a b c d e f g")], Smoothing::Exp).unwrap();
        assert_eq!(s.precisions[0], 1.0);
        assert_eq!(s.precisions[1], 1.0 / (2.0 * 3.0));
        assert_eq!(s.precisions[2], 1.0 / (4.0 * 2.0));
        assert_eq!(s.precisions[3], 1.0 / (8.0 * 1.0));
        let bp = (1.0f64 - 7.0 / 4.0).exp();
        let expect = bp * (((1.0f64 / 6.0) * (1.0 / 8.0) * (1.0 / 8.0)).ln() / 4.0).exp();
        assert!((s.score - expect).abs() < 1e-12);
        let none = bleu(&[toks("a c e g")], &[toks("a b c d e f g")], Smoothing::None).unwrap();
        assert_eq!(none.score, 0.0);
    }

    #[test]
    fn brevity_penalty_cases() {
        assert_eq!(brevity_penalty(10, 10), 1.0);
        assert_eq!(brevity_penalty(12, 10), 1.0);
        assert!((brevity_penalty(5, 10) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((brevity_penalty(8, 10) - (1.0f64 - 1.25).exp()).abs() < 1e-15);
        assert_eq!(brevity_penalty(0, 3), 0.0);
    }

    #[test]
    fn errors() {
        let empty: [Vec<&str>; 0] = [];
        assert!(matches!(bleu(&empty, &empty, Smoothing::Exp), Err(Error::EmptyInput(_))));
        assert!(matches!(
            bleu(&[toks("a")], &[toks("")], Smoothing::Exp),
            Err(Error::UndefinedReference(1))
        ));
        assert!(bleu(&[toks("a")], &[toks("a"), toks("b")], Smoothing::Exp).is_err());
    }

    #[test]
    fn delta_bleu_scales() {
        let a = ScaledScore::new(0.30, ScoreScale::Unit);
        let b = ScaledScore::new(0.25, ScoreScale::Unit);
        assert!((delta_bleu(a, b).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(delta_bleu(a, a).unwrap(), 0.0);
        assert!(matches!(
            delta_bleu(a, ScaledScore::new(25.0, ScoreScale::Percent)),
            Err(Error::ScaleMismatch)
        ));
        assert!((a.rescale(ScoreScale::Percent).value - 30.0).abs() < 1e-12);
    }
}
