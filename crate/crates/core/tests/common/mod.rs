#![allow(dead_code)]

use polyknn::decode::{BaseModel, ToyModel};
use polyknn::text::EOS;
use polyknn::{LanguageTag, ReprRecord, TokenId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SRC_BASE: TokenId = 3;
pub const TGT_BASE: TokenId = 33;
pub const N_WORDS: TokenId = 30;
pub const TOY_VOCAB: usize = 64;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tag(s: &str) -> LanguageTag {
    LanguageTag::new(s).unwrap()
}

pub fn random_vector(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

pub fn random_records(rng: &mut impl Rng, n: usize, dim: usize, vocab: u32, lang: &str) -> Vec<ReprRecord> {
    let lang = tag(lang);
    (0..n)
        .map(|i| ReprRecord {
            vector: random_vector(rng, dim),
            token_id: rng.gen_range(0..vocab),
            sentence_id: (i / 8) as u32,
            timestep: (i % 8) as u16,
            lang: lang.clone(),
        })
        .collect()
}

/// Sorts every key by (squared distance, index) and keeps the first `k`.
pub fn linear_scan(keys: &[Vec<f32>], q: &[f32], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = keys
        .iter()
        .enumerate()
        .map(|(i, key)| {
            let mut s = 0.0f64;
            for (&a, &b) in key.iter().zip(q) {
                let d = a as f64 - b as f64;
                s += d * d;
            }
            (i, s)
        })
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Parallel corpus over a 64-token vocabulary where source word `s` usually
/// translates to `s + 30`. Source sentences have distinct tokens.
pub fn toy_corpus(rng: &mut impl Rng, n: usize) -> Vec<(Vec<TokenId>, Vec<TokenId>)> {
    let words: Vec<TokenId> = (SRC_BASE..SRC_BASE + N_WORDS).collect();
    (0..n)
        .map(|_| {
            let len = rng.gen_range(3..8);
            let src: Vec<TokenId> = words.choose_multiple(rng, len).copied().collect();
            let mut tgt: Vec<TokenId> = src
                .iter()
                .map(|&s| {
                    if rng.gen_bool(0.8) {
                        s - SRC_BASE + TGT_BASE
                    } else {
                        rng.gen_range(TGT_BASE..TGT_BASE + N_WORDS)
                    }
                })
                .collect();
            tgt.dedup();
            (src, tgt)
        })
        .collect()
}

/// Teacher-forced (featurize, next token) records of every pair, ending
/// each sentence with EOS.
pub fn trajectories(model: &ToyModel, corpus: &[(Vec<TokenId>, Vec<TokenId>)], lang: &str) -> Vec<ReprRecord> {
    let lang = tag(lang);
    let mut out = Vec::new();
    for (sid, (src, tgt)) in corpus.iter().enumerate() {
        for t in 0..=tgt.len() {
            out.push(ReprRecord {
                vector: model.featurize(src, &tgt[..t]),
                token_id: if t < tgt.len() { tgt[t] } else { EOS },
                sentence_id: sid as u32,
                timestep: t as u16,
                lang: lang.clone(),
            });
        }
    }
    out
}
