use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use polyknn::align::load_map;
use polyknn::decode::{BaseModel, BeamHypothesis, KnnConfig, KnnDecoder, Retrieval};
use polyknn::text::{read_lines, Vocab};
use polyknn::vecstore::merge_datastores;
use polyknn::{Datastore, LanguageTag, TokenId};
use rayon::prelude::*;

use crate::config::Config;
use crate::manifest::{sidecar, RunManifest};
use crate::stores::{lang_tag, load_store, model_spec, DEFAULT_DIM};
use crate::{required, Incompatible, InputError, Internal, TranslateArgs};

pub struct DecodeRun {
    pub outputs: Vec<BeamHypothesis>,
    /// Tokens decoded in the timed part, EOS included.
    pub tokens: usize,
    pub seconds: f64,
}

impl DecodeRun {
    pub fn tokens_per_sec(&self) -> f64 {
        if self.seconds > 0.0 {
            self.tokens as f64 / self.seconds
        } else {
            0.0
        }
    }
}

fn emitted(h: &BeamHypothesis) -> usize {
    h.tokens.len() + h.finished as usize
}

/// Decodes every source sentence in input order. The first sentence is a
/// warm-up and is excluded from the timing unless it is the only one.
pub fn decode_corpus<M: BaseModel>(
    decoder: &KnnDecoder<'_, M>,
    sources: &[Vec<TokenId>],
    beam: usize,
    max_len: usize,
    jobs: usize,
) -> Result<DecodeRun> {
    let one = |src: &Vec<TokenId>| {
        if beam == 1 {
            decoder.greedy(src, max_len)
        } else {
            decoder.beam(src, beam, max_len)
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("starting decoder threads")?;
    if sources.is_empty() {
        return Ok(DecodeRun {
            outputs: Vec::new(),
            tokens: 0,
            seconds: 0.0,
        });
    }
    let (warm, timed) = if sources.len() > 1 { sources.split_at(1) } else { (&sources[..0], sources) };
    let mut outputs = warm.iter().map(one).collect::<polyknn::Result<Vec<_>>>()?;
    let start = Instant::now();
    let rest = pool.install(|| timed.par_iter().map(one).collect::<polyknn::Result<Vec<_>>>())?;
    let seconds = start.elapsed().as_secs_f64();
    let tokens = rest.iter().map(emitted).sum();
    outputs.extend(rest);
    if outputs.len() != sources.len() {
        return Err(Internal(format!("{} outputs for {} inputs", outputs.len(), sources.len())).into());
    }
    Ok(DecodeRun {
        outputs,
        tokens,
        seconds,
    })
}

/// Loads and merges the given stores; a single store is used as is.
pub fn open_stores(paths: &[PathBuf]) -> Result<Option<Datastore>> {
    match paths {
        [] => Ok(None),
        [one] => Ok(Some(load_store(one)?)),
        many => {
            let stores = many.iter().map(|p| load_store(p)).collect::<Result<Vec<_>>>()?;
            let spec = stores[0].index_spec();
            let refs: Vec<&Datastore> = stores.iter().collect();
            Ok(Some(merge_datastores(&refs, spec)?))
        }
    }
}

pub fn translate(mut a: TranslateArgs, cfg: &Config) -> Result<()> {
    cfg.fill_list(&mut a.stores, "store")?;
    cfg.fill(&mut a.map, "map")?;
    cfg.fill(&mut a.input, "input")?;
    cfg.fill(&mut a.output, "output")?;
    cfg.fill_list(&mut a.k, "k")?;
    cfg.fill(&mut a.lambda, "lambda")?;
    cfg.fill(&mut a.temperature, "temperature")?;
    cfg.fill(&mut a.beam, "beam")?;
    cfg.fill(&mut a.max_len, "max-len")?;
    cfg.fill(&mut a.jobs, "jobs")?;
    cfg.fill_list(&mut a.languages, "languages")?;
    cfg.fill(&mut a.seed, "seed")?;

    let input = required(a.input, "input")?;
    let output = required(a.output, "output")?;
    let ks = if a.k.is_empty() { vec![16] } else { a.k.clone() };
    let lambda = a.lambda.unwrap_or(0.5);
    let temperature = a.temperature.unwrap_or(10.0);
    let beam = a.beam.unwrap_or(1);
    let max_len = a.max_len.unwrap_or(64);
    let jobs = a.jobs.unwrap_or(1);
    let seed = a.seed.unwrap_or(0);
    if beam == 0 {
        return Err(InputError("--beam must be at least 1".into()).into());
    }
    for &k in &ks {
        KnnConfig::new(k, lambda, temperature).map_err(|e| InputError(e.to_string()))?;
    }
    let languages: Vec<LanguageTag> = a.languages.iter().map(|l| lang_tag(l)).collect::<Result<_>>()?;

    let spec = model_spec(&a.model, cfg)?;
    let vocab = Vocab::load(&spec.vocab_path)?;
    let store = open_stores(&a.stores)?;
    let map = a.map.as_ref().map(load_map::<f32>).transpose()?;
    let dim = spec
        .dim
        .or(map.as_ref().map(|m| m.dim()))
        .or(store.as_ref().map(|s| s.dim()))
        .unwrap_or(DEFAULT_DIM);
    if let Some(v) = store.as_ref().map(|s| s.vocab_size()) {
        if v as usize > vocab.len() {
            return Err(Incompatible(format!(
                "store vocabulary ({v}) is larger than the model vocabulary ({})",
                vocab.len()
            ))
            .into());
        }
    }
    let model = spec.train(&vocab, dim)?;
    let sources = read_lines(&input)?
        .iter()
        .enumerate()
        .map(|(i, l)| vocab.encode(l).with_context(|| format!("{} line {}", input.display(), i + 1)))
        .collect::<Result<Vec<_>>>()?;

    for &k in &ks {
        let out_path = if ks.len() > 1 {
            let mut s = output.as_os_str().to_owned();
            s.push(format!(".k{k}"));
            PathBuf::from(s)
        } else {
            output.clone()
        };
        let mut man = RunManifest::new("translate", seed);
        spec.record(&mut man);
        for p in &a.stores {
            man.input(p);
        }
        if let Some(p) = &a.map {
            man.input(p);
        }
        man.input(&input);
        man.set("k", k);
        man.set("lambda", lambda);
        man.set("temperature", temperature);
        man.set("beam", beam);
        man.set("max-len", max_len);
        man.set("jobs", jobs);
        man.set("dim", dim);
        man.set("languages", &a.languages);

        let cfg_k = KnnConfig::new(k, lambda, temperature)?;
        let retrieval = store.as_ref().map(|s| {
            let mut r = Retrieval::new(s);
            if let Some(m) = &map {
                r = r.with_map(m);
            }
            if !languages.is_empty() {
                r = r.with_languages(&languages);
            }
            r
        });
        let decoder = KnnDecoder::new(&model, retrieval, cfg_k)?;
        let run = decode_corpus(&decoder, &sources, beam, max_len, jobs)?;
        let text: String = run.outputs.iter().map(|h| vocab.decode(&h.tokens) + "\n").collect();
        std::fs::write(&out_path, text).with_context(|| format!("writing {}", out_path.display()))?;
        man.output(&out_path);
        man.timings.insert("decode".into(), run.seconds);
        man.tokens_per_sec = Some(run.tokens_per_sec());
        man.stat("sentences", sources.len());
        man.stat("timed_tokens", run.tokens);
        man.stat("store_entries", store.as_ref().map_or(0, |s| s.len()));
        eprintln!(
            "translated {} sentences to {} ({:.1} tokens/s)",
            sources.len(),
            out_path.display(),
            run.tokens_per_sec()
        );
        let mp = match (&a.manifest, ks.len()) {
            (Some(p), 1) => p.clone(),
            _ => sidecar(&out_path),
        };
        man.write(Some(&mp))?;
    }
    Ok(())
}
