//! Count-based stand-in for a neural translation model.

use std::collections::{BTreeSet, HashMap};

use super::{BaseModel, VocabDistribution};
use crate::error::{Error, Result};
use crate::text::{BOS, EOS};
use crate::vecstore::TokenId;

/// Seed of the hashed feature embedding. Fixed so dumps are reproducible
/// across runs and machines.
pub const FEATURE_SEED: u64 = 0x5EED;

const SRC_FEATURE: u64 = 1;
const PREV1_FEATURE: u64 = 2;
const PREV2_FEATURE: u64 = 3;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn feature_hash(seed: u64, kind: u64, token: TokenId) -> u64 {
    let mut s = seed ^ kind.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    let a = splitmix64(&mut s);
    let mut s = a ^ token as u64;
    splitmix64(&mut s)
}

/// Unit-norm pseudo-random vector determined by `(seed, kind, token)`.
pub fn hashed_embedding(seed: u64, kind: u64, token: TokenId, dim: usize) -> Vec<f64> {
    let mut state = feature_hash(seed, kind, token);
    let mut v: Vec<f64> = (0..dim)
        .map(|_| (splitmix64(&mut state) >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0)
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Add-one smoothed model of `p(y_t | y_{t-1}, bag of source tokens)`.
///
/// For a source bag `B` and previous token `y'`, the weight of candidate `y`
/// is `1 + Σ_{s ∈ B} count(s, y', y)`, where `count` tallies training pairs
/// whose source contains `s` and whose target has the bigram `y' y`
/// (sentences start with BOS and end with EOS). Candidates are restricted
/// to EOS plus tokens that co-occurred with some source token in `B`; if no
/// source token is known, every target token seen in training is allowed.
///
/// Features are a seeded hashed embedding of the source bag and the last
/// two prefix tokens, L2-normalised.
#[derive(Debug, Clone)]
pub struct ToyModel {
    vocab_size: usize,
    dim: usize,
    bigrams: HashMap<(TokenId, TokenId), Vec<(TokenId, u32)>>,
    cooccur: HashMap<TokenId, BTreeSet<TokenId>>,
    target_tokens: BTreeSet<TokenId>,
}

impl ToyModel {
    pub fn train(corpus: &[(Vec<TokenId>, Vec<TokenId>)], vocab_size: usize, dim: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Untrained("empty training corpus"));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        let mut counts: HashMap<(TokenId, TokenId), HashMap<TokenId, u32>> = HashMap::new();
        let mut cooccur: HashMap<TokenId, BTreeSet<TokenId>> = HashMap::new();
        let mut target_tokens = BTreeSet::new();
        for (src, tgt) in corpus {
            if let Some(&bad) = src.iter().chain(tgt).find(|&&t| t as usize >= vocab_size) {
                return Err(Error::InvalidArgument(format!(
                    "token {bad} outside vocabulary of size {vocab_size}"
                )));
            }
            let bag: BTreeSet<TokenId> = src.iter().copied().collect();
            let mut prev = BOS;
            for &y in tgt.iter().chain(std::iter::once(&EOS)) {
                for &s in &bag {
                    *counts.entry((s, prev)).or_default().entry(y).or_default() += 1;
                    cooccur.entry(s).or_default().insert(y);
                }
                target_tokens.insert(y);
                prev = y;
            }
        }
        let bigrams = counts
            .into_iter()
            .map(|(key, m)| {
                let mut v: Vec<_> = m.into_iter().collect();
                v.sort_unstable();
                (key, v)
            })
            .collect();
        Ok(Self {
            vocab_size,
            dim,
            bigrams,
            cooccur,
            target_tokens,
        })
    }

    fn bag(source: &[TokenId]) -> Vec<TokenId> {
        let mut bag = source.to_vec();
        bag.sort_unstable();
        bag.dedup();
        bag
    }
}

impl BaseModel for ToyModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn next_distribution(&self, source: &[TokenId], prefix: &[TokenId]) -> VocabDistribution {
        let bag = Self::bag(source);
        let prev = prefix.last().copied().unwrap_or(BOS);

        let mut allowed = vec![false; self.vocab_size];
        allowed[EOS as usize] = true;
        let mut any_known = false;
        for s in &bag {
            if let Some(set) = self.cooccur.get(s) {
                any_known = true;
                for &y in set {
                    allowed[y as usize] = true;
                }
            }
        }
        if !any_known {
            for &y in &self.target_tokens {
                allowed[y as usize] = true;
            }
        }

        let mut w = vec![0.0f64; self.vocab_size];
        for s in &bag {
            if let Some(list) = self.bigrams.get(&(*s, prev)) {
                for &(y, c) in list {
                    w[y as usize] += c as f64;
                }
            }
        }
        for (wi, &ok) in w.iter_mut().zip(&allowed) {
            *wi = if ok { *wi + 1.0 } else { 0.0 };
        }
        VocabDistribution::from_weights(w).expect("EOS always carries positive weight")
    }

    fn featurize(&self, source: &[TokenId], prefix: &[TokenId]) -> Vec<f32> {
        let bag = Self::bag(source);
        let n = prefix.len();
        let prev1 = if n >= 1 { prefix[n - 1] } else { BOS };
        let prev2 = if n >= 2 { prefix[n - 2] } else { BOS };

        let mut v = vec![0.0f64; self.dim];
        let src_weight = if bag.is_empty() { 0.0 } else { 1.0 / (bag.len() as f64).sqrt() };
        let mut add = |e: Vec<f64>, w: f64| {
            for (a, b) in v.iter_mut().zip(e) {
                *a += w * b;
            }
        };
        for &s in &bag {
            add(hashed_embedding(FEATURE_SEED, SRC_FEATURE, s, self.dim), src_weight);
        }
        add(hashed_embedding(FEATURE_SEED, PREV1_FEATURE, prev1, self.dim), 1.0);
        add(hashed_embedding(FEATURE_SEED, PREV2_FEATURE, prev2, self.dim), 0.5);

        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|&x| if norm > 0.0 { (x / norm) as f32 } else { 0.0 }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ToyModel {
        let pair = (vec![10, 11, 12], vec![3, 4, 5, 6]);
        ToyModel::train(&vec![pair; 4], 20, 16).unwrap()
    }

    #[test]
    fn empty_corpus_is_untrained() {
        assert!(matches!(ToyModel::train(&[], 10, 8), Err(Error::Untrained(_))));
    }

    #[test]
    fn restricted_to_cooccurring_tokens() {
        let m = toy();
        let p = m.next_distribution(&[10], &[]);
        for t in 0..20 {
            let expect_support = matches!(t, 2..=6);
            assert_eq!(p.prob(t) > 0.0, expect_support, "token {t}");
        }
        // 1 + count(10, BOS, 3) = 5 against weight 1 for the other four
        assert!((p.prob(3) - 5.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_source_falls_back_to_target_tokens() {
        let m = toy();
        let p = m.next_distribution(&[19], &[]);
        assert!((p.prob(3) - 0.2).abs() < 1e-12);
        assert_eq!(p.prob(10), 0.0);
    }

    #[test]
    fn featurize_is_deterministic_and_normalised() {
        let m = toy();
        let a = m.featurize(&[10, 11], &[3, 4]);
        let b = m.featurize(&[11, 10, 10], &[3, 4]);
        assert_eq!(a, b);
        assert_eq!(a.len(), 16);
        let norm: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_ne!(a, m.featurize(&[10, 11], &[4, 3]));
    }

    #[test]
    fn hashed_embedding_is_seeded() {
        assert_eq!(hashed_embedding(1, 1, 5, 8), hashed_embedding(1, 1, 5, 8));
        assert_ne!(hashed_embedding(1, 1, 5, 8), hashed_embedding(2, 1, 5, 8));
        assert_ne!(hashed_embedding(1, 1, 5, 8), hashed_embedding(1, 2, 5, 8));
    }
}
