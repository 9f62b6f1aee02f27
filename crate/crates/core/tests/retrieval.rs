mod common;

use common::{linear_scan, random_records, random_vector, rng, tag};
use polyknn::vecstore::{load_datastore, merge_datastores, provenance_stats, save_datastore};
use polyknn::{Datastore, IndexSpec, ReprRecord};
use proptest::prelude::*;

fn keys_of(records: &[ReprRecord]) -> Vec<Vec<f32>> {
    records.iter().map(|r| r.vector.clone()).collect()
}

fn assert_same(store: &Datastore, keys: &[Vec<f32>], q: &[f32], k: usize) {
    let got: Vec<(usize, u64)> = store
        .query(q, k)
        .unwrap()
        .iter()
        .map(|n| (n.entry_index, n.distance.to_bits()))
        .collect();
    let want: Vec<(usize, u64)> = linear_scan(keys, q, k).iter().map(|&(i, d)| (i, d.to_bits())).collect();
    assert_eq!(got, want);
}

#[test]
fn exact_scan_equals_linear_oracle_with_duplicates() {
    let mut r = rng(1);
    let mut records = random_records(&mut r, 10_000, 64, 100, "aa");
    // exact duplicates force index tie-breaks
    for i in 0..200 {
        records[9_000 + i].vector = records[i].vector.clone();
    }
    let keys = keys_of(&records);
    let store = Datastore::from_records(64, 100, &records, IndexSpec::ExactScan).unwrap();
    for k in [16, 32, 64] {
        for j in 0..10 {
            assert_same(&store, &keys, &random_vector(&mut r, 64), k);
            assert_same(&store, &keys, &keys[j * 7], k);
        }
    }
}

#[test]
fn full_probing_equals_exact_scan() {
    let mut r = rng(2);
    let records = random_records(&mut r, 10_000, 64, 100, "aa");
    let exact = Datastore::from_records(64, 100, &records, IndexSpec::ExactScan).unwrap();
    let probe = exact.reindex(IndexSpec::cell_probe(64, 64)).unwrap();
    for _ in 0..20 {
        let q = random_vector(&mut r, 64);
        assert_eq!(exact.query(&q, 32).unwrap(), probe.query(&q, 32).unwrap());
    }
}

#[test]
fn partial_probing_finds_most_true_neighbors() {
    let mut r = rng(3);
    let records = random_records(&mut r, 5_000, 16, 100, "aa");
    let exact = Datastore::from_records(16, 100, &records, IndexSpec::ExactScan).unwrap();
    let probe = exact.reindex(IndexSpec::cell_probe(32, 8)).unwrap();
    let mut hits = 0;
    for _ in 0..50 {
        let q = random_vector(&mut r, 16);
        let a = exact.query(&q, 10).unwrap();
        let b = probe.query(&q, 10).unwrap();
        assert_eq!(b.len(), 10);
        hits += b.iter().filter(|n| a.iter().any(|m| m.entry_index == n.entry_index)).count();
    }
    assert!(hits as f64 / 500.0 > 0.6, "recall {}", hits as f64 / 500.0);
}

#[test]
fn merged_top1_is_best_of_inputs() {
    let mut r = rng(4);
    let a = random_records(&mut r, 700, 8, 50, "aa");
    let b = random_records(&mut r, 300, 8, 50, "bb");
    let sa = Datastore::from_records(8, 50, &a, IndexSpec::ExactScan).unwrap();
    let sb = Datastore::from_records(8, 50, &b, IndexSpec::ExactScan).unwrap();
    let merged = merge_datastores(&[&sa, &sb], IndexSpec::ExactScan).unwrap();
    assert_eq!(merged.len(), 1000);
    for _ in 0..100 {
        let q = random_vector(&mut r, 8);
        let best = [&a, &b]
            .iter()
            .map(|recs| linear_scan(&keys_of(recs), &q, 1)[0].1)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(merged.query(&q, 1).unwrap()[0].distance, best);
    }
}

#[test]
fn save_load_preserves_top_k() {
    let mut r = rng(5);
    let records = random_records(&mut r, 3_000, 32, 80, "aa");
    let dir = tempfile::tempdir().unwrap();
    for spec in [IndexSpec::ExactScan, IndexSpec::cell_probe(40, 4)] {
        let store = Datastore::from_records(32, 80, &records, spec).unwrap();
        let path = dir.path().join("store.kds");
        save_datastore(&store, &path).unwrap();
        let back = load_datastore(&path).unwrap();
        assert_eq!(back.index_spec(), store.index_spec());
        for _ in 0..100 {
            let q = random_vector(&mut r, 32);
            assert_eq!(store.query(&q, 16).unwrap(), back.query(&q, 16).unwrap());
        }
    }
}

#[test]
fn provenance_of_clustered_languages() {
    let mut r = rng(6);
    let mut records = Vec::new();
    for i in 0..90 {
        records.push(ReprRecord {
            vector: random_vector(&mut r, 4).iter().map(|v| v * 0.01).collect(),
            token_id: 3,
            sentence_id: i,
            timestep: 0,
            lang: tag("aa"),
        });
    }
    for i in 0..10 {
        records.push(ReprRecord {
            vector: vec![100.0 + i as f32; 4],
            token_id: 4,
            sentence_id: i,
            timestep: 0,
            lang: tag("bb"),
        });
    }
    let store = Datastore::from_records(4, 10, &records, IndexSpec::ExactScan).unwrap();
    let queries: Vec<Vec<f32>> = (0..50).map(|_| random_vector(&mut r, 4).iter().map(|v| v * 0.02).collect()).collect();
    let qs: Vec<(&[f32], usize)> = queries.iter().map(|q| (q.as_slice(), 1)).collect();
    let rows = provenance_stats(&store, &qs).unwrap();
    let a = rows.iter().find(|r| r.lang.as_str() == "aa").unwrap();
    assert_eq!(a.p_obs, 1.0);
    assert!((a.ratio - 1.0 / 0.9).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn small_stores_match_oracle(seed in 0u64..10_000, n in 1usize..200, dim in 1usize..9, k in 1usize..20) {
        let mut r = rng(seed);
        let mut records = random_records(&mut r, n, dim, 20, "aa");
        // coarse grid values make exact distance ties common
        for rec in &mut records {
            rec.vector.iter_mut().for_each(|v| *v = (*v * 2.0).round());
        }
        let keys = keys_of(&records);
        let store = Datastore::from_records(dim, 20, &records, IndexSpec::ExactScan).unwrap();
        let q: Vec<f32> = random_vector(&mut r, dim).iter().map(|v| (v * 2.0).round()).collect();
        let k = k.min(n);
        let got: Vec<usize> = store.query(&q, k).unwrap().iter().map(|m| m.entry_index).collect();
        let want: Vec<usize> = linear_scan(&keys, &q, k).iter().map(|p| p.0).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn merge_order_does_not_change_neighbor_distances(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let a = Datastore::from_records(4, 10, &random_records(&mut r, 40, 4, 10, "aa"), IndexSpec::ExactScan).unwrap();
        let b = Datastore::from_records(4, 10, &random_records(&mut r, 25, 4, 10, "bb"), IndexSpec::ExactScan).unwrap();
        let ab = merge_datastores(&[&a, &b], IndexSpec::ExactScan).unwrap();
        let ba = merge_datastores(&[&b, &a], IndexSpec::ExactScan).unwrap();
        prop_assert_eq!(ab.language_counts(), ba.language_counts());
        let q = random_vector(&mut r, 4);
        let d = |s: &Datastore| s.query(&q, 10).unwrap().iter().map(|n| n.distance).collect::<Vec<_>>();
        prop_assert_eq!(d(&ab), d(&ba));
    }
}
