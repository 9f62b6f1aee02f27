mod common;

use std::collections::HashMap;

use common::{random_vector, rng, tag};
use polyknn::features::{
    multi_parallel_overlap, permutation_importance, predict_xsim_loo, shuffled_baseline, size_ratio,
    src_subword_overlap, tgt_ngram_overlap, vocab_occupancy_ratio, Corpus, LinearRegression, MaeAveraging,
    PairSample,
};
use polyknn::linalg::Matrix;
use polyknn::mteval::{bleu, delta_bleu, ScaledScore, Smoothing};
use polyknn::transfer::{
    rtp, rtp_all, similarity_matrix, spearman, xsim, BleuTable, ContextDumpSet, ScoreScale, SimilarityMatrix,
    TimestepWeighting,
};
use polyknn::LanguageTag;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn random_dumps(seed: u64, langs: &[&str], sentences: u32, dim: usize) -> ContextDumpSet {
    let mut r = rng(seed);
    let mut set = ContextDumpSet::new(dim, tag("en"));
    let base: Vec<Vec<Vec<f32>>> = (0..sentences)
        .map(|_| (0..r.gen_range(2..6)).map(|_| random_vector(&mut r, dim)).collect())
        .collect();
    for (li, l) in langs.iter().enumerate() {
        for (sid, steps) in base.iter().enumerate() {
            for (t, v) in steps.iter().enumerate() {
                let noisy: Vec<f32> = v.iter().map(|x| x + li as f32 * 0.3 * r.gen_range(-1.0f32..1.0)).collect();
                set.insert(&tag(l), sid as u32, t as u16, noisy).unwrap();
            }
        }
    }
    set
}

fn cos_oracle(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn xsim_matches_direct_average() {
    let mut r = rng(40);
    let mut set = ContextDumpSet::new(4, tag("en"));
    let mut by_sentence: HashMap<u32, Vec<f64>> = HashMap::new();
    for sid in 0..5u32 {
        for t in 0..(sid as u16 + 1) {
            let (a, b) = (random_vector(&mut r, 4), random_vector(&mut r, 4));
            by_sentence.entry(sid).or_default().push(cos_oracle(&a, &b));
            set.insert(&tag("aa"), sid, t, a).unwrap();
            set.insert(&tag("bb"), sid, t, b).unwrap();
        }
    }
    let want = by_sentence.values().map(|c| c.iter().sum::<f64>() / c.len() as f64).sum::<f64>() / 5.0;
    let got = xsim(&set, &tag("aa"), &tag("bb"), TimestepWeighting::Mean).unwrap();
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn xsim_identities() {
    let langs = ["aa", "bb", "cc", "dd"];
    let mut set = random_dumps(41, &langs, 30, 16);
    let before = similarity_matrix(&set, TimestepWeighting::Mean).unwrap();
    for l in &langs {
        assert!((before.get(&tag(l), &tag(l)).unwrap() - 1.0).abs() < 1e-9);
        for m in &langs {
            let (a, b) = (tag(l), tag(m));
            assert_eq!(
                xsim(&set, &a, &b, TimestepWeighting::Mean).unwrap(),
                xsim(&set, &b, &a, TimestepWeighting::Mean).unwrap()
            );
        }
    }
    set.scale_language(&tag("bb"), 2.0);
    set.scale_language(&tag("cc"), 0.25);
    let pow2 = similarity_matrix(&set, TimestepWeighting::Mean).unwrap();
    set.scale_language(&tag("dd"), 3.7);
    let general = similarity_matrix(&set, TimestepWeighting::Mean).unwrap();
    for l in &langs {
        for m in &langs {
            let (a, b) = (tag(l), tag(m));
            assert_eq!(before.get(&a, &b).unwrap(), pow2.get(&a, &b).unwrap());
            // f32 storage rounds each scaled component
            assert!((before.get(&a, &b).unwrap() - general.get(&a, &b).unwrap()).abs() < 1e-6);
        }
    }
}

fn table(scores: &[(&str, f64)]) -> BleuTable {
    let mut t = BleuTable::new(ScoreScale::Percent);
    for &(l, b) in scores {
        t.insert(tag(l), b, b).unwrap();
    }
    t
}

fn full_sims(langs: &[&str], seed: u64) -> SimilarityMatrix {
    let tags: Vec<LanguageTag> = langs.iter().map(|l| tag(l)).collect();
    let mut m = SimilarityMatrix::new(tags.clone());
    let mut r = rng(seed);
    for i in 0..tags.len() {
        for j in i..tags.len() {
            let v = if i == j { 1.0 } else { r.gen_range(-0.2..1.0) };
            m.set(&tags[i], &tags[j], v).unwrap();
        }
    }
    m
}

#[test]
fn rtp_identities() {
    let langs = ["aa", "bb", "cc", "en"];
    let tags: Vec<LanguageTag> = langs.iter().map(|l| tag(l)).collect();
    let sims = full_sims(&langs, 42);
    let flat = table(&[("aa", 20.0), ("bb", 20.0), ("cc", 20.0), ("en", 40.0)]);
    for l in &tags[..3] {
        assert_eq!(rtp(l, &sims, &flat, &tags, &tag("en")).unwrap(), 0.0);
    }
    let two = [tag("aa"), tag("bb"), tag("en")];
    let t = table(&[("aa", 10.0), ("bb", 25.0), ("en", 50.0)]);
    let s = sims.get(&tag("aa"), &tag("bb")).unwrap();
    assert!((rtp(&tag("aa"), &sims, &t, &two, &tag("en")).unwrap() - s).abs() < 1e-15);
    assert!((rtp(&tag("bb"), &sims, &t, &two, &tag("en")).unwrap() + s).abs() < 1e-15);
    let missing = table(&[("aa", 10.0)]);
    assert!(rtp(&tag("aa"), &sims, &missing, &tags, &tag("en")).is_err());
}

#[test]
fn rtp_is_order_independent() {
    let langs = ["aa", "bb", "cc", "dd", "ee", "en"];
    let sims = full_sims(&langs, 43);
    let t = table(&[("aa", 10.0), ("bb", 25.0), ("cc", 5.0), ("dd", 30.0), ("ee", 12.5), ("en", 50.0)]);
    let mut tags: Vec<LanguageTag> = langs.iter().map(|l| tag(l)).collect();
    let reference: HashMap<_, _> = rtp_all(&sims, &t, &tags, &tag("en")).unwrap().into_iter().collect();
    let mut r = rng(44);
    for _ in 0..10 {
        tags.shuffle(&mut r);
        for (l, v) in rtp_all(&sims, &t, &tags, &tag("en")).unwrap() {
            assert!((reference[&l] - v).abs() < 1e-12);
        }
    }
}

/// Naive Spearman without ties: `1 − 6 Σ d² / (n (n² − 1))`.
fn spearman_no_ties(xs: &[f64], ys: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (pos, &i) in idx.iter().enumerate() {
            r[i] = pos as f64 + 1.0;
        }
        r
    };
    let (rx, ry) = (rank(xs), rank(ys));
    let n = xs.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn spearman_matches_oracle_and_ignores_monotone_maps(
        pts in prop::collection::btree_map(-1000i32..1000, -1000i32..1000, 3..40)
    ) {
        let xs: Vec<f64> = pts.keys().map(|&x| x as f64).collect();
        let mut ys: Vec<f64> = pts.values().map(|&y| y as f64).collect();
        // distinct ys for the tie-free oracle
        for (i, y) in ys.iter_mut().enumerate() {
            *y += i as f64 * 1e-6;
        }
        let (rho, n) = spearman(&xs, &ys).unwrap();
        prop_assert_eq!(n, xs.len());
        prop_assert!((rho - spearman_no_ties(&xs, &ys)).abs() < 1e-9);
        let warped: Vec<f64> = xs.iter().map(|x| (x / 500.0).exp() + x.powi(3)).collect();
        prop_assert!((spearman(&warped, &ys).unwrap().0 - rho).abs() < 1e-12);
    }

    #[test]
    fn dataset_features_are_symmetric(seed in 0u64..5_000) {
        let mut r = rng(seed);
        let mut corpus = |lang: &str| {
            let n = r.gen_range(1..30);
            let src: Vec<Vec<u32>> = (0..n).map(|_| (0..r.gen_range(1..6)).map(|_| r.gen_range(3..40)).collect()).collect();
            let tgt: Vec<Vec<u32>> = (0..n).map(|_| vec![r.gen_range(0..40)]).collect();
            let out: Vec<Vec<u32>> = (0..5).map(|_| (0..4).map(|_| r.gen_range(40..50)).collect()).collect();
            Corpus::new(tag(lang), src).unwrap().with_targets(tgt).unwrap().with_pivot_outputs(out)
        };
        let (a, b) = (corpus("aa"), corpus("bb"));
        let fs: [fn(&Corpus, &Corpus) -> f64; 5] = [
            |x, y| size_ratio(x, y).unwrap(),
            |x, y| vocab_occupancy_ratio(x, y, 60).unwrap(),
            |x, y| src_subword_overlap(x, y).unwrap(),
            |x, y| multi_parallel_overlap(x, y).unwrap(),
            |x, y| tgt_ngram_overlap(x, y, 2).unwrap(),
        ];
        for (i, f) in fs.iter().enumerate() {
            prop_assert_eq!(f(&a, &b), f(&b, &a));
            if i < 4 {
                prop_assert!((0.0..=1.0).contains(&f(&a, &b)));
            }
        }
    }

    #[test]
    fn bleu_ignores_sentence_order(seed in 0u64..5_000) {
        let mut r = rng(seed);
        let mut pairs: Vec<(Vec<u32>, Vec<u32>)> = (0..12)
            .map(|_| {
                let rf: Vec<u32> = (0..r.gen_range(1..12)).map(|_| r.gen_range(0..8)).collect();
                let h: Vec<u32> = (0..r.gen_range(0..12)).map(|_| r.gen_range(0..8)).collect();
                (h, rf)
            })
            .collect();
        let score = |p: &[(Vec<u32>, Vec<u32>)]| {
            let h: Vec<&Vec<u32>> = p.iter().map(|x| &x.0).collect();
            let rf: Vec<&Vec<u32>> = p.iter().map(|x| &x.1).collect();
            bleu(&h, &rf, Smoothing::Exp).unwrap().score
        };
        let before = score(&pairs);
        pairs.shuffle(&mut r);
        prop_assert_eq!(before, score(&pairs));
    }

    #[test]
    fn delta_bleu_is_antisymmetric(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (x, y) = (ScaledScore::new(a, ScoreScale::Unit), ScaledScore::new(b, ScoreScale::Unit));
        prop_assert_eq!(delta_bleu(x, y).unwrap(), -delta_bleu(y, x).unwrap());
    }
}

/// Corpus BLEU from first principles over word strings.
fn bleu_oracle(hyps: &[&str], refs: &[&str]) -> f64 {
    let mut m = [0f64; 4];
    let mut t = [0f64; 4];
    let (mut c, mut rl) = (0f64, 0f64);
    for (h, rf) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.split(' ').collect();
        let rf: Vec<&str> = rf.split(' ').collect();
        c += h.len() as f64;
        rl += rf.len() as f64;
        for n in 1..=4 {
            let grams = |s: &[&str]| {
                let mut g: HashMap<String, f64> = HashMap::new();
                for i in 0..s.len().saturating_sub(n - 1) {
                    *g.entry(s[i..i + n].join(" ")).or_default() += 1.0;
                }
                g
            };
            let (gh, gr) = (grams(&h), grams(&rf));
            t[n - 1] += gh.values().sum::<f64>();
            m[n - 1] += gh.iter().map(|(g, &k)| k.min(*gr.get(g).unwrap_or(&0.0))).sum::<f64>();
        }
    }
    let bp = if c > rl { 1.0 } else { (1.0 - rl / c).exp() };
    bp * ((0..4).map(|i| (m[i] / t[i]).ln()).sum::<f64>() / 4.0).exp()
}

#[test]
fn bleu_agrees_with_oracle() {
    let hyps = ["the cat sat on the mat", "a dog ran in the park today", "it is a nice day"];
    let refs = ["the cat sat on a mat", "the dog ran in the park", "it is a very nice day"];
    fn split<'a>(v: &[&'a str]) -> Vec<Vec<&'a str>> {
        v.iter().map(|s| s.split(' ').collect()).collect()
    }
    let got = bleu(&split(&hyps), &split(&refs), Smoothing::None).unwrap().score;
    assert!((got - bleu_oracle(&hyps, &refs)).abs() < 1e-12);
}

fn lcg_samples(n_lang: usize, p: usize, seed: u64, target: impl Fn(&[f64], &mut rand_chacha::ChaCha8Rng) -> f64) -> Vec<PairSample<f64>> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for i in 0..n_lang {
        for j in (i + 1)..n_lang {
            let features: Vec<f64> = (0..p).map(|_| r.gen_range(0.0..1.0)).collect();
            let target = target(&features, &mut r);
            out.push(PairSample {
                lang1: LanguageTag::new(format!("x{i}")).unwrap(),
                lang2: LanguageTag::new(format!("x{j}")).unwrap(),
                features,
                target,
            });
        }
    }
    out
}

#[test]
fn noise_targets_give_mean_prediction_error() {
    let s = lcg_samples(30, 2, 45, |_, r| r.gen_range(0.0..1.0));
    let rep = predict_xsim_loo(&s, &["a", "b"], MaeAveraging::Micro).unwrap();
    assert!((rep.mean_mae - 0.25).abs() < 0.05, "{}", rep.mean_mae);
}

fn design(s: &[PairSample<f64>]) -> (Matrix<f64>, Vec<f64>) {
    let rows: Vec<&[f64]> = s.iter().map(|p| p.features.as_slice()).collect();
    (Matrix::from_rows(&rows).unwrap(), s.iter().map(|p| p.target).collect())
}

#[test]
fn importance_separates_informative_from_inert() {
    let s = lcg_samples(10, 2, 46, |x, r| 2.0 * x[0] + 0.01 * r.gen_range(-1.0..1.0));
    let (x, y) = design(&s);
    let m = LinearRegression::fit(&x, &y).unwrap();
    let imp = permutation_importance(&m, &x, &y, &["a", "b"], 50, 7).unwrap();
    assert!(imp[0].mean > 0.0);
    assert!(imp[1].mean.abs() <= 2.0 * imp[1].std.max(1e-12));
    assert!(imp[0].mean - imp[1].mean > 2.0 * (imp[0].std.powi(2) + imp[1].std.powi(2)).sqrt());
}

#[test]
fn duplicated_columns_share_importance() {
    let single = lcg_samples(10, 1, 47, |x, _| x[0]);
    let doubled: Vec<PairSample<f64>> = single
        .iter()
        .map(|p| PairSample {
            features: vec![p.features[0], p.features[0]],
            ..p.clone()
        })
        .collect();
    let (x1, y1) = design(&single);
    let (x2, y2) = design(&doubled);
    let m1 = LinearRegression::fit(&x1, &y1).unwrap();
    let m2 = LinearRegression::fit(&x2, &y2).unwrap();
    let i1 = permutation_importance(&m1, &x1, &y1, &["a"], 50, 8).unwrap();
    let i2 = permutation_importance(&m2, &x2, &y2, &["a", "a2"], 50, 8).unwrap();
    assert!(i2[0].mean < i1[0].mean && i2[1].mean < i1[0].mean);
}

#[test]
fn informative_features_beat_shuffled_baseline() {
    let s = lcg_samples(8, 3, 48, |x, r| 0.3 * x[0] + 0.2 * x[1] - 0.1 * x[2] + 0.01 * r.gen_range(-1.0..1.0));
    let names = ["a", "b", "c"];
    let rep = predict_xsim_loo(&s, &names, MaeAveraging::Micro).unwrap();
    let noise = shuffled_baseline(&s, &names, MaeAveraging::Micro, 9).unwrap();
    assert!(rep.mean_mae < noise, "{} vs {}", rep.mean_mae, noise);
}
