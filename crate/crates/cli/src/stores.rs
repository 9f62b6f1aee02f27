//! `gen-toy`, `build`, `merge`, `map-fit` and `map-apply`.

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::ValueEnum;
use polyknn::align::{
    extract_training_pairs, fit_linear_map, fit_linear_map_with_fallback, identity_alignment, load_alignment,
    load_map, map_datastore, save_map,
};
use polyknn::decode::{BaseModel, ToyModel};
use polyknn::text::{read_parallel, ParallelCorpus, Vocab, EOS};
use polyknn::vecstore::{load_datastore, merge_datastores, save_datastore, DumpHeader, DumpWriter};
use polyknn::{Datastore, IndexSpec, LanguageTag, ReprRecord};

use crate::config::Config;
use crate::manifest::{sidecar, RunManifest};
use crate::toy::{ToyParams, ToyWorld};
use crate::{required, GenToyArgs, IndexArgs, IndexKind, InputError, ModelArgs};
use crate::{BuildArgs, MapApplyArgs, MapFitArgs, MergeArgs};

pub const DEFAULT_DIM: usize = 64;

pub fn parse_enum<T: ValueEnum>(cfg: &Config, key: &str) -> Result<Option<T>> {
    match cfg.get::<String>(key)? {
        None => Ok(None),
        Some(s) => T::from_str(&s, true)
            .map(Some)
            .map_err(|e| InputError(format!("config key {key}: {e}")).into()),
    }
}

pub fn lang_tag(s: &str) -> Result<LanguageTag> {
    LanguageTag::new(s).map_err(|e| InputError(e.to_string()).into())
}

/// Resolves index flags against the config file.
pub fn index_spec(a: &IndexArgs, cfg: &Config) -> Result<IndexSpec> {
    let mut a = a.clone();
    if a.index.is_none() {
        a.index = parse_enum(cfg, "index")?;
    }
    cfg.fill(&mut a.cells, "cells")?;
    cfg.fill(&mut a.probe, "probe")?;
    cfg.fill(&mut a.max_train, "max-train")?;
    Ok(match a.index.unwrap_or(IndexKind::Exact) {
        IndexKind::Exact => IndexSpec::ExactScan,
        IndexKind::CellProbe => IndexSpec::CellProbe {
            n_cells: a.cells.unwrap_or(256),
            n_probe: a.probe.unwrap_or(8),
            iterations: IndexSpec::DEFAULT_ITERATIONS,
            max_train: a.max_train,
        },
    })
}

pub fn record_index(m: &mut RunManifest, spec: IndexSpec) {
    match spec {
        IndexSpec::ExactScan => m.set("index", "exact"),
        IndexSpec::CellProbe {
            n_cells,
            n_probe,
            iterations,
            max_train,
        } => {
            m.set("index", "cell-probe");
            m.set("cells", n_cells);
            m.set("probe", n_probe);
            m.set("iterations", iterations);
            m.set("max-train", max_train);
        }
    }
}

/// Model flags after merging with the config file.
pub struct ModelSpec {
    pub vocab_path: PathBuf,
    pub train: Vec<(PathBuf, PathBuf)>,
    pub dim: Option<usize>,
}

pub fn model_spec(m: &ModelArgs, cfg: &Config) -> Result<ModelSpec> {
    let mut m = m.clone();
    cfg.fill(&mut m.vocab, "vocab")?;
    cfg.fill_list(&mut m.train_src, "train-src")?;
    cfg.fill_list(&mut m.train_tgt, "train-tgt")?;
    cfg.fill(&mut m.dim, "dim")?;
    if m.train_src.len() != m.train_tgt.len() {
        return Err(InputError(format!(
            "{} --train-src but {} --train-tgt files",
            m.train_src.len(),
            m.train_tgt.len()
        ))
        .into());
    }
    Ok(ModelSpec {
        vocab_path: required(m.vocab, "vocab")?,
        train: m.train_src.into_iter().zip(m.train_tgt).collect(),
        dim: m.dim,
    })
}

impl ModelSpec {
    pub fn record(&self, man: &mut RunManifest) {
        man.input(&self.vocab_path);
        for (s, t) in &self.train {
            man.input(s);
            man.input(t);
        }
    }

    /// Trains the toy model on every listed corpus, in order.
    pub fn train(&self, vocab: &Vocab, dim: usize) -> Result<ToyModel> {
        if self.train.is_empty() {
            return Err(InputError("no model training corpus (--train-src/--train-tgt)".into()).into());
        }
        let mut corpus = ParallelCorpus::new();
        for (s, t) in &self.train {
            corpus.extend(read_parallel(vocab, s, t)?);
        }
        Ok(ToyModel::train(&corpus, vocab.len(), dim)?)
    }
}

/// Teacher-forced contexts: one record per target token plus one for the
/// closing EOS of each sentence.
pub fn teacher_forced_records(model: &ToyModel, corpus: &ParallelCorpus, lang: &LanguageTag) -> Result<Vec<ReprRecord>> {
    let mut out = Vec::new();
    for (sid, (src, tgt)) in corpus.iter().enumerate() {
        if tgt.len() >= u16::MAX as usize {
            return Err(InputError(format!("sentence {} is longer than {} tokens", sid + 1, u16::MAX)).into());
        }
        for t in 0..=tgt.len() {
            out.push(ReprRecord {
                vector: model.featurize(src, &tgt[..t]),
                token_id: tgt.get(t).copied().unwrap_or(EOS),
                sentence_id: sid as u32,
                timestep: t as u16,
                lang: lang.clone(),
            });
        }
    }
    Ok(out)
}

fn manifest_path(explicit: Option<PathBuf>, out: &Path) -> PathBuf {
    explicit.unwrap_or_else(|| sidecar(out))
}

pub fn gen_toy(mut a: GenToyArgs, cfg: &Config) -> Result<()> {
    cfg.fill(&mut a.out, "out")?;
    cfg.fill(&mut a.seed, "seed")?;
    cfg.fill_list(&mut a.langs, "langs")?;
    cfg.fill(&mut a.pivot, "pivot")?;
    cfg.fill(&mut a.families, "families")?;
    cfg.fill(&mut a.concepts, "concepts")?;
    cfg.fill(&mut a.pool, "pool")?;
    cfg.fill(&mut a.train_min, "train-min")?;
    cfg.fill(&mut a.train_max, "train-max")?;
    cfg.fill(&mut a.test, "test")?;
    let out = required(a.out, "out")?;
    let d = ToyParams::default();
    let params = ToyParams {
        langs: if a.langs.is_empty() { d.langs } else { a.langs },
        pivot: a.pivot.unwrap_or(d.pivot),
        families: a.families.unwrap_or(d.families),
        concepts: a.concepts.unwrap_or(d.concepts),
        pool: a.pool.unwrap_or(d.pool),
        train_min: a.train_min.unwrap_or(d.train_min),
        train_max: a.train_max.unwrap_or(d.train_max),
        test: a.test.unwrap_or(d.test),
        seed: a.seed.unwrap_or(d.seed),
    };
    let mut man = RunManifest::new("gen-toy", params.seed);
    man.set("params", &params);
    let world = man.time("generate", || ToyWorld::generate(params))?;
    let files = man.time("write", || world.write(&out))?;
    for f in &files {
        man.output(out.join(f));
    }
    for l in &world.languages {
        man.stat(&format!("train_sentences.{}", l.code), l.train.len());
    }
    man.write(Some(&a.manifest.unwrap_or_else(|| out.join("gen-toy.manifest.json"))))
}

pub fn build(mut a: BuildArgs, cfg: &Config) -> Result<()> {
    cfg.fill(&mut a.src, "src")?;
    cfg.fill(&mut a.tgt, "tgt")?;
    cfg.fill(&mut a.lang, "lang")?;
    cfg.fill(&mut a.out, "out")?;
    cfg.fill(&mut a.dump, "dump")?;
    cfg.fill(&mut a.seed, "seed")?;
    let src = required(a.src, "src")?;
    let tgt = required(a.tgt, "tgt")?;
    let lang = lang_tag(&required(a.lang, "lang")?)?;
    let out = required(a.out, "out")?;
    let spec = index_spec(&a.index, cfg)?;
    let mut model_spec = model_spec(&a.model, cfg)?;
    if model_spec.train.is_empty() {
        model_spec.train.push((src.clone(), tgt.clone()));
    }
    let dim = model_spec.dim.unwrap_or(DEFAULT_DIM);

    let mut man = RunManifest::new("build", a.seed.unwrap_or(0));
    model_spec.record(&mut man);
    man.input(&src);
    man.input(&tgt);
    man.set("lang", lang.as_str());
    man.set("dim", dim);
    record_index(&mut man, spec);

    let vocab = Vocab::load(&model_spec.vocab_path)?;
    let model = man.time("train", || model_spec.train(&vocab, dim))?;
    let corpus = read_parallel(&vocab, &src, &tgt)?;
    let records = man.time("featurize", || teacher_forced_records(&model, &corpus, &lang))?;
    let store = man.time("index", || Datastore::from_records(dim, vocab.len() as u32, &records, spec))?;
    man.time("save", || save_datastore(&store, &out))?;
    man.output(&out);
    if let Some(dump) = &a.dump {
        let header = DumpHeader {
            dim,
            vocab_size: vocab.len() as u32,
            lang: lang.clone(),
            count: records.len() as u64,
        };
        let mut w = DumpWriter::create(dump, header)?;
        for r in &records {
            w.push(r)?;
        }
        w.finish()?;
        man.output(dump);
    }
    let target_tokens: usize = corpus.iter().map(|(_, t)| t.len()).sum();
    man.stat("sentences", corpus.len());
    man.stat("target_tokens", target_tokens);
    // every sentence contributes its tokens plus the closing EOS
    man.stat("corpus_tokens", target_tokens + corpus.len());
    man.stat("entries", store.len());
    eprintln!("built {} entries ({} sentences) into {}", store.len(), corpus.len(), out.display());
    man.write(Some(&manifest_path(a.manifest, &out)))
}

pub fn load_store(path: &Path) -> Result<Datastore> {
    Ok(load_datastore(path)?)
}

pub fn merge(mut a: MergeArgs, cfg: &Config) -> Result<()> {
    cfg.fill_list(&mut a.stores, "store")?;
    cfg.fill(&mut a.out, "out")?;
    let out = required(a.out, "out")?;
    if a.stores.is_empty() {
        return Err(InputError("merge needs at least one --store".into()).into());
    }
    let spec = index_spec(&a.index, cfg)?;
    let mut man = RunManifest::new("merge", 0);
    record_index(&mut man, spec);
    let stores = a.stores.iter().map(|p| load_store(p)).collect::<Result<Vec<_>>>()?;
    for p in &a.stores {
        man.input(p);
    }
    let refs: Vec<&Datastore> = stores.iter().collect();
    let merged = man.time("merge", || merge_datastores(&refs, spec))?;
    save_datastore(&merged, &out)?;
    man.output(&out);
    man.stat("entries", merged.len());
    man.stat(
        "languages",
        merged
            .language_counts()
            .iter()
            .map(|(l, c)| (l.to_string(), *c))
            .collect::<std::collections::BTreeMap<_, _>>(),
    );
    man.write(Some(&manifest_path(a.manifest, &out)))
}

pub fn map_fit(mut a: MapFitArgs, cfg: &Config) -> Result<()> {
    cfg.fill(&mut a.source, "source")?;
    cfg.fill(&mut a.target, "target")?;
    cfg.fill(&mut a.align, "align")?;
    cfg.fill(&mut a.ridge, "ridge")?;
    cfg.fill(&mut a.out, "out")?;
    let source = required(a.source, "source")?;
    let target = required(a.target, "target")?;
    let out = required(a.out, "out")?;
    let mut man = RunManifest::new("map-fit", 0);
    man.input(&source);
    man.input(&target);
    let s = load_store(&source)?;
    let t = load_store(&target)?;
    let alignment = match &a.align {
        Some(p) => {
            man.input(p);
            load_alignment(p)?
        }
        None => identity_alignment(&s, &t),
    };
    let pairs = man.time("pairs", || extract_training_pairs::<f64>(&s, &t, &alignment))?;
    let fit = man.time("fit", || match a.ridge {
        Some(r) => fit_linear_map(&pairs, r),
        None => fit_linear_map_with_fallback(&pairs),
    })?;
    save_map(&fit.map.cast::<f32>(), &out)?;
    man.output(&out);
    man.set("ridge", fit.map.ridge);
    man.stat("rows", fit.rows);
    man.stat("residual", fit.residual);
    man.stat("aligned_sentences", alignment.len());
    eprintln!("fitted {}-dim map on {} rows, residual {:.6e}", pairs.dim(), fit.rows, fit.residual);
    man.write(Some(&manifest_path(a.manifest, &out)))
}

pub fn map_apply(mut a: MapApplyArgs, cfg: &Config) -> Result<()> {
    cfg.fill(&mut a.store, "store")?;
    cfg.fill(&mut a.map, "map")?;
    cfg.fill(&mut a.out, "out")?;
    let store_path = required(a.store, "store")?;
    let map_path = required(a.map, "map")?;
    let out = required(a.out, "out")?;
    let mut man = RunManifest::new("map-apply", 0);
    man.input(&store_path);
    man.input(&map_path);
    let store = load_store(&store_path)?;
    let map = load_map::<f32>(&map_path)?;
    let mapped = man.time("map", || map_datastore(&store, &map))?;
    save_datastore(&mapped, &out)?;
    man.output(&out);
    man.stat("entries", mapped.len());
    man.write(Some(&manifest_path(a.manifest, &out)))
}
