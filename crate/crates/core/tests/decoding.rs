mod common;

use std::collections::HashSet;

use common::{rng, tag, toy_corpus, trajectories, TOY_VOCAB};
use polyknn::decode::{
    decode_beam, decode_greedy, interpolate, knn_distribution, BaseModel, KnnConfig, KnnDecoder, Retrieval, ToyModel,
    VocabDistribution,
};
use polyknn::{Datastore, IndexSpec, Neighbor};
use proptest::prelude::*;
use rand::Rng;

fn neighbor(distance: f64, token: u32) -> Neighbor {
    Neighbor {
        entry_index: 0,
        distance,
        token_id: token,
        lang: tag("aa"),
    }
}

/// `p(v) = Σ_{v_j = v} e^{-d_j/T} / Σ_j e^{-d_j/T}` without any shifting.
fn softmax_oracle(ns: &[(f64, u32)], t: f64, vocab: usize) -> Vec<f64> {
    let mut p = vec![0.0; vocab];
    let z: f64 = ns.iter().map(|&(d, _)| (-d / t).exp()).sum();
    for &(d, v) in ns {
        p[v as usize] += (-d / t).exp() / z;
    }
    p
}

#[test]
fn random_sets_sum_to_one_and_match_oracle() {
    let mut r = rng(10);
    for _ in 0..10_000 {
        let n = r.gen_range(1..64);
        let ns: Vec<(f64, u32)> = (0..n).map(|_| (r.gen_range(0.0..20.0), r.gen_range(0..50))).collect();
        let t = [10.0, 100.0][r.gen_range(0..2)];
        let neighbors: Vec<Neighbor> = ns.iter().map(|&(d, v)| neighbor(d, v)).collect();
        let p = knn_distribution(&neighbors, t, 50).unwrap();
        assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (a, b) in p.probs().iter().zip(softmax_oracle(&ns, t, 50)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn hand_softmax_and_limits() {
    let p = knn_distribution(&[neighbor(0.0, 1), neighbor(2f64.ln(), 2)], 1.0, 4).unwrap();
    assert!((p.prob(1) - 2.0 / 3.0).abs() < 1e-15);
    assert!((p.prob(2) - 1.0 / 3.0).abs() < 1e-15);
    let p = knn_distribution(&[neighbor(0.0, 1), neighbor(100.0, 2)], 1e6, 4).unwrap();
    assert!((p.prob(1) - 0.5).abs() < 1e-4 && (p.prob(2) - 0.5).abs() < 1e-4);
    let p = knn_distribution(&[neighbor(3.0, 7), neighbor(9.0, 7)], 0.5, 8).unwrap();
    assert_eq!(p.prob(7), 1.0);
}

#[test]
fn flattening_with_distinct_tokens() {
    let mut r = rng(11);
    for _ in 0..1_000 {
        let n = r.gen_range(2..32);
        let neighbors: Vec<Neighbor> = (0..n).map(|j| neighbor(r.gen_range(0.0..10.0), j as u32)).collect();
        let t1 = r.gen_range(1.0..100.0);
        let lo = knn_distribution(&neighbors, t1, 32).unwrap().max_prob();
        let hi = knn_distribution(&neighbors, 2.0 * t1, 32).unwrap().max_prob();
        assert!(hi < lo, "T={t1}: {hi} !< {lo}");
    }
}

#[test]
fn interpolation_endpoints_and_fixed_point() {
    let mut r = rng(12);
    for _ in 0..1_000 {
        let a = VocabDistribution::from_weights((0..20).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap();
        let b = VocabDistribution::from_weights((0..20).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap();
        assert_eq!(interpolate(&a, &b, 0.0).unwrap(), b);
        assert_eq!(interpolate(&a, &b, 1.0).unwrap(), a);
        let lam = r.gen_range(0.0..1.0);
        assert_eq!(interpolate(&a, &a, lam).unwrap(), a);
        let mix = interpolate(&a, &b, lam).unwrap();
        assert!((mix.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let half = interpolate(&VocabDistribution::one_hot(2, 0), &VocabDistribution::one_hot(2, 1), 0.5).unwrap();
    assert_eq!(half.probs(), &[0.5, 0.5]);
}

fn toy_setup(seed: u64, n: usize) -> (ToyModel, Vec<(Vec<u32>, Vec<u32>)>) {
    let corpus = toy_corpus(&mut rng(seed), n);
    let model = ToyModel::train(&corpus, TOY_VOCAB, 64).unwrap();
    (model, corpus)
}

#[test]
fn full_interpolation_reproduces_stored_trajectory() {
    let (model, corpus) = toy_setup(13, 300);
    let cfg = KnnConfig::new(1, 1.0, 10.0).unwrap();
    for pair in corpus.iter().take(40) {
        let records = trajectories(&model, std::slice::from_ref(pair), "aa");
        let store = Datastore::from_records(64, TOY_VOCAB as u32, &records, IndexSpec::ExactScan).unwrap();
        let out = decode_greedy(&model, Some(Retrieval::new(&store)), cfg, &pair.0, 50).unwrap();
        assert_eq!(out, pair.1);
    }
}

#[test]
fn no_store_is_plain_base_greedy() {
    let (model, corpus) = toy_setup(14, 200);
    for (src, _) in corpus.iter().take(20) {
        let mut prefix = Vec::new();
        loop {
            let next = model.next_distribution(src, &prefix).argmax();
            if next == model.eos() || prefix.len() == 30 {
                break;
            }
            prefix.push(next);
        }
        let cfg = KnnConfig::new(16, 0.5, 10.0).unwrap();
        assert_eq!(decode_greedy(&model, None, cfg, src, 30).unwrap(), prefix);
    }
}

#[test]
fn beam_one_equals_greedy() {
    let (model, corpus) = toy_setup(15, 400);
    let store =
        Datastore::from_records(64, TOY_VOCAB as u32, &trajectories(&model, &corpus, "aa"), IndexSpec::ExactScan)
            .unwrap();
    let cfg = KnnConfig::new(16, 0.5, 10.0).unwrap();
    let dec = KnnDecoder::new(&model, Some(Retrieval::new(&store)), cfg).unwrap();
    let inputs = toy_corpus(&mut rng(16), 50);
    for (src, _) in &inputs {
        let g = dec.greedy(src, 40).unwrap();
        let b = dec.beam(src, 1, 40).unwrap();
        assert_eq!(g, b);
    }
}

#[test]
fn wider_beam_never_scores_lower() {
    let (model, corpus) = toy_setup(17, 400);
    let store =
        Datastore::from_records(64, TOY_VOCAB as u32, &trajectories(&model, &corpus, "aa"), IndexSpec::ExactScan)
            .unwrap();
    let cfg = KnnConfig::new(16, 0.5, 10.0).unwrap();
    let dec = KnnDecoder::new(&model, Some(Retrieval::new(&store)), cfg).unwrap();
    for (src, _) in &toy_corpus(&mut rng(18), 100) {
        let one = dec.beam(src, 1, 40).unwrap();
        let four = dec.beam(src, 4, 40).unwrap();
        assert!(four.log_score >= one.log_score, "{} < {}", four.log_score, one.log_score);
    }
}

#[test]
fn decode_beam_returns_sequence() {
    let (model, corpus) = toy_setup(19, 50);
    let cfg = KnnConfig::new(4, 0.0, 10.0).unwrap();
    let out = decode_beam(&model, None, cfg, &corpus[0].0, 5, 40).unwrap();
    assert!(out.len() <= 40);
}

#[test]
fn featurize_rarely_collides() {
    let (model, _) = toy_setup(20, 50);
    let mut r = rng(21);
    let mut contexts = HashSet::new();
    while contexts.len() < 10_000 {
        let mut bag: Vec<u32> = (0..r.gen_range(1..6)).map(|_| r.gen_range(3..33)).collect();
        bag.sort_unstable();
        bag.dedup();
        let prefix = vec![r.gen_range(33..63), r.gen_range(33..63)];
        contexts.insert((bag, prefix));
    }
    let mut seen = HashSet::new();
    let mut collisions = 0;
    for (bag, prefix) in &contexts {
        let v: Vec<u32> = model.featurize(bag, prefix).iter().map(|x| x.to_bits()).collect();
        if !seen.insert(v) {
            collisions += 1;
        }
    }
    assert!((collisions as f64) / 10_000.0 < 0.01, "{collisions} collisions");
}

#[test]
fn dimension_mismatch_is_rejected() {
    let (model, corpus) = toy_setup(22, 20);
    let records = common::random_records(&mut rng(23), 10, 8, TOY_VOCAB as u32, "aa");
    let store = Datastore::from_records(8, TOY_VOCAB as u32, &records, IndexSpec::ExactScan).unwrap();
    let cfg = KnnConfig::new(4, 0.5, 10.0).unwrap();
    let err = decode_greedy(&model, Some(Retrieval::new(&store)), cfg, &corpus[0].0, 10).unwrap_err();
    assert!(err.is_incompatibility());
}

proptest! {
    #[test]
    fn single_token_support_is_certain(ds in prop::collection::vec(0.0f64..50.0, 1..10), t in 0.1f64..100.0) {
        let ns: Vec<Neighbor> = ds.iter().map(|&d| neighbor(d, 5)).collect();
        prop_assert_eq!(knn_distribution(&ns, t, 6).unwrap().prob(5), 1.0);
    }
}
