//! Decoding throughput against datastores of increasing size.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use polyknn::decode::{BaseModel, KnnConfig, KnnDecoder, Retrieval, ToyModel};
use polyknn::{Datastore, IndexSpec, LanguageTag};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::manifest::{sidecar, RunManifest};
use crate::stores::{load_store, parse_enum, record_index};
use crate::toy::{ToyParams, ToyWorld};
use crate::translate::decode_corpus;
use crate::{BenchArgs, BenchIndex, Incompatible, InputError};

const CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub store: String,
    pub size: usize,
    pub index: &'static str,
    pub build_seconds: f64,
    pub tokens: usize,
    pub seconds: f64,
    pub tokens_per_sec: f64,
}

#[derive(Debug, Serialize)]
struct BenchReport {
    rows: Vec<BenchRow>,
    /// Exact-scan throughput strictly decreases with store size.
    exact_decreasing: Option<bool>,
    /// Cell-probe is faster than exact scan on the largest store.
    cell_probe_faster_at_largest: Option<bool>,
}

/// `size` entries with uniformly random unit-norm keys and target tokens.
/// Chunks are generated in parallel from independent streams, so the store
/// does not depend on the thread count.
fn random_store(size: usize, dim: usize, vocab: u32, seed: u64) -> Result<Datastore> {
    let lang = LanguageTag::new("zz")?;
    let chunks: Vec<(Vec<f32>, Vec<u32>)> = (0..size.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64 + 1);
            let n = CHUNK.min(size - c * CHUNK);
            let mut keys = Vec::with_capacity(n * dim);
            let mut tokens = Vec::with_capacity(n);
            for _ in 0..n {
                let start = keys.len();
                keys.extend((0..dim).map(|_| rng.gen_range(-1.0f32..1.0)));
                let norm = keys[start..].iter().map(|x| x * x).sum::<f32>().sqrt().max(f32::MIN_POSITIVE);
                keys[start..].iter_mut().for_each(|x| *x /= norm);
                tokens.push(rng.gen_range(0..vocab));
            }
            (keys, tokens)
        })
        .collect();
    let mut b = Datastore::builder(dim, vocab)?;
    let mut sid = 0u32;
    for (keys, tokens) in &chunks {
        for (key, &tok) in keys.chunks_exact(dim).zip(tokens) {
            b.push_parts(key, tok, sid, 0, &lang)?;
            sid += 1;
        }
    }
    Ok(b.build(IndexSpec::ExactScan)?)
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let v = f()?;
    Ok((v, t.elapsed().as_secs_f64()))
}

pub fn bench(mut a: BenchArgs, cfg: &Config) -> Result<()> {
    cfg.fill_list(&mut a.sizes, "sizes")?;
    cfg.fill_list(&mut a.stores, "store")?;
    cfg.fill(&mut a.dim, "dim")?;
    cfg.fill(&mut a.k, "k")?;
    cfg.fill(&mut a.lambda, "lambda")?;
    cfg.fill(&mut a.temperature, "temperature")?;
    cfg.fill(&mut a.sentences, "sentences")?;
    cfg.fill(&mut a.max_len, "max-len")?;
    cfg.fill(&mut a.cells, "cells")?;
    cfg.fill(&mut a.probe, "probe")?;
    cfg.fill(&mut a.max_train, "max-train")?;
    cfg.fill(&mut a.jobs, "jobs")?;
    cfg.fill(&mut a.seed, "seed")?;
    cfg.fill(&mut a.out, "out")?;
    if a.index.is_none() {
        a.index = parse_enum(cfg, "index")?;
    }
    if a.sizes.len() + a.stores.len() < 2 {
        return Err(InputError("bench needs at least two store sizes or stores to compare".into()).into());
    }
    if a.sizes.contains(&0) {
        return Err(InputError("store sizes must be positive".into()).into());
    }
    let seed = a.seed.unwrap_or(0);
    let k = a.k.unwrap_or(16);
    let knn = KnnConfig::new(k, a.lambda.unwrap_or(0.5), a.temperature.unwrap_or(10.0))
        .map_err(|e| InputError(e.to_string()))?;
    let max_len = a.max_len.unwrap_or(32);
    let jobs = a.jobs.unwrap_or(1);
    let which = a.index.unwrap_or(BenchIndex::Both);
    let probe_spec = IndexSpec::CellProbe {
        n_cells: a.cells.unwrap_or(256),
        n_probe: a.probe.unwrap_or(8),
        iterations: IndexSpec::DEFAULT_ITERATIONS,
        max_train: Some(a.max_train.unwrap_or(65_536)),
    };

    let loaded = a.stores.iter().map(|p| load_store(p)).collect::<Result<Vec<_>>>()?;
    let dim = a.dim.or(loaded.first().map(|s| s.dim())).unwrap_or(32);

    let world = ToyWorld::generate(ToyParams {
        seed,
        ..ToyParams::default()
    })?;
    let vocab = world.vocab();
    let lang = &world.languages[0];
    let (src, tgt) = world.train_lines(lang);
    let corpus = src
        .iter()
        .zip(&tgt)
        .map(|(s, t)| Ok((vocab.encode(s)?, vocab.encode(t)?)))
        .collect::<polyknn::Result<Vec<_>>>()?;
    let model = ToyModel::train(&corpus, vocab.len(), dim)?;
    let n_queries = a.sentences.unwrap_or(40).min(world.test.len()).max(1);
    let queries = world.test[..n_queries]
        .iter()
        .map(|s| vocab.encode(&world.source_line(lang, s)))
        .collect::<polyknn::Result<Vec<_>>>()?;

    let mut man = RunManifest::new("bench", seed);
    man.set("dim", dim);
    man.set("k", k);
    man.set("lambda", knn.lambda);
    man.set("temperature", knn.temperature);
    man.set("sentences", n_queries);
    man.set("max-len", max_len);
    man.set("jobs", jobs);
    record_index(&mut man, probe_spec);

    let mut sorted_sizes = a.sizes.clone();
    sorted_sizes.sort_unstable();
    sorted_sizes.dedup();
    let mut sources: Vec<(String, Option<PathBuf>, usize)> =
        sorted_sizes.iter().map(|&n| (format!("random-{n}"), None, n)).collect();
    for (p, s) in a.stores.iter().zip(&loaded) {
        man.input(p);
        sources.push((p.display().to_string(), Some(p.clone()), s.len()));
    }

    let mut rows = Vec::new();
    let mut loaded = loaded.into_iter();
    for (name, path, size) in sources {
        let (exact, gen_seconds) = match path {
            None => timed(|| random_store(size, dim, model.vocab_size() as u32, seed))?,
            Some(_) => (loaded.next().expect("one store per path"), 0.0),
        };
        if exact.dim() != model.dim() {
            return Err(Incompatible(format!("{name} has dimension {}, the model {}", exact.dim(), model.dim())).into());
        }
        if exact.vocab_size() as usize > model.vocab_size() {
            return Err(Incompatible(format!("{name} has a larger vocabulary than the model")).into());
        }
        let mut variants: Vec<(&'static str, f64, Datastore)> = Vec::new();
        if matches!(which, BenchIndex::CellProbe | BenchIndex::Both) {
            let (s, secs) = timed(|| Ok(exact.reindex(probe_spec)?))?;
            variants.push(("cell-probe", secs, s));
        }
        if matches!(which, BenchIndex::Exact | BenchIndex::Both) {
            let exact = if exact.index_spec() == IndexSpec::ExactScan {
                exact
            } else {
                exact.reindex(IndexSpec::ExactScan)?
            };
            variants.insert(0, ("exact", gen_seconds, exact));
        }
        for (index, build_seconds, store) in &variants {
            let decoder = KnnDecoder::new(&model, Some(Retrieval::new(store)), knn)?;
            let run = decode_corpus(&decoder, &queries, 1, max_len, jobs)?;
            let row = BenchRow {
                store: name.clone(),
                size,
                index,
                build_seconds: *build_seconds,
                tokens: run.tokens,
                seconds: run.seconds,
                tokens_per_sec: run.tokens_per_sec(),
            };
            eprintln!("{name} ({index}): {:.1} tokens/s", row.tokens_per_sec);
            rows.push(row);
        }
    }

    let generated = |index: &str| -> Vec<&BenchRow> {
        rows.iter().filter(|r| r.index == index && r.store.starts_with("random-")).collect()
    };
    let exact_rows = generated("exact");
    let probe_rows = generated("cell-probe");
    let exact_decreasing =
        (exact_rows.len() >= 2).then(|| exact_rows.windows(2).all(|w| w[1].tokens_per_sec < w[0].tokens_per_sec));
    let cell_probe_faster_at_largest = match (exact_rows.last(), probe_rows.last()) {
        (Some(e), Some(p)) => Some(p.tokens_per_sec > e.tokens_per_sec),
        _ => None,
    };

    let mut table = String::from("store\tsize\tindex\ttokens\tseconds\ttokens_per_sec\n");
    for r in &rows {
        let _ = writeln!(
            table,
            "{}\t{}\t{}\t{}\t{:.4}\t{:.1}",
            r.store, r.size, r.index, r.tokens, r.seconds, r.tokens_per_sec
        );
    }
    print!("{table}");
    for (label, v) in [
        ("exact_decreasing", exact_decreasing),
        ("cell_probe_faster_at_largest", cell_probe_faster_at_largest),
    ] {
        if let Some(v) = v {
            println!("# {label}: {v}");
            man.stat(label, v);
        }
    }
    let report = BenchReport {
        rows,
        exact_decreasing,
        cell_probe_faster_at_largest,
    };
    if let Some(out) = &a.out {
        std::fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
        man.output(out);
    }
    let mp = a.manifest.or(a.out.as_deref().map(sidecar));
    man.write(mp.as_deref())
}
