//! `bleu` and `analyze`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use polyknn::features::{
    compute_pair_features, feature_names, feature_table_tsv, permutation_importance, predict_xsim_loo,
    shuffled_baseline, Corpus, DistanceTable, LinearRegression, MaeAveraging, PairSample,
};
use polyknn::linalg::Matrix;
use polyknn::mteval::{self, Smoothing};
use polyknn::text::{read_lines, read_parallel, Vocab};
use polyknn::transfer::{
    rtp_all, similarity_matrix, spearman, BleuTable, ContextDumpSet, ScoreScale, SimilarityMatrix, TimestepWeighting,
};
use polyknn::vecstore::DumpReader;
use polyknn::LanguageTag;
use serde::Serialize;

use crate::config::Config;
use crate::manifest::{sidecar, RunManifest};
use crate::stores::{lang_tag, parse_enum};
use crate::{required, AnalyzeArgs, AveragingArg, BleuArgs, InputError, SmoothingArg, WeightingArg};

#[derive(Serialize)]
struct BleuReport {
    /// Percent scale.
    bleu: f64,
    precisions: [f64; 4],
    brevity_penalty: f64,
    hyp_len: u64,
    ref_len: u64,
    smoothing: Smoothing,
}

fn score_files(hyp: &Path, reference: &Path, smoothing: Smoothing) -> Result<mteval::BleuScore> {
    let h = mteval::tokenize_lines(&std::fs::read_to_string(hyp).with_context(|| format!("reading {}", hyp.display()))?);
    let r = mteval::tokenize_lines(
        &std::fs::read_to_string(reference).with_context(|| format!("reading {}", reference.display()))?,
    );
    Ok(mteval::bleu(&h, &r, smoothing)?)
}

pub fn bleu(mut a: BleuArgs, cfg: &Config) -> Result<()> {
    cfg.fill(&mut a.hyp, "hyp")?;
    cfg.fill(&mut a.reference, "ref")?;
    cfg.fill(&mut a.out, "out")?;
    cfg.fill(&mut a.table, "table")?;
    cfg.fill(&mut a.lang, "lang")?;
    cfg.fill(&mut a.multilingual_hyp, "multilingual-hyp")?;
    if a.smoothing.is_none() {
        a.smoothing = parse_enum(cfg, "smoothing")?;
    }
    let hyp = required(a.hyp, "hyp")?;
    let reference = required(a.reference, "ref")?;
    let smoothing = match a.smoothing.unwrap_or(SmoothingArg::Exp) {
        SmoothingArg::Exp => Smoothing::Exp,
        SmoothingArg::None => Smoothing::None,
    };
    let mut man = RunManifest::new("bleu", 0);
    man.input(&hyp);
    man.input(&reference);
    man.set("smoothing", smoothing);
    let s = score_files(&hyp, &reference, smoothing)?;
    let percent = s.scaled(ScoreScale::Percent).value;
    println!("BLEU = {percent:.2}");
    let report = BleuReport {
        bleu: percent,
        precisions: s.precisions.map(|p| p * 100.0),
        brevity_penalty: s.brevity_penalty,
        hyp_len: s.hyp_len,
        ref_len: s.ref_len,
        smoothing,
    };
    man.stat("bleu", percent);
    if let Some(out) = &a.out {
        std::fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
        man.output(out);
    }
    if let Some(table_path) = &a.table {
        let lang = lang_tag(&required(a.lang.clone(), "lang")?)?;
        let multi = required(a.multilingual_hyp.clone(), "multilingual-hyp")?;
        man.input(&multi);
        let m = score_files(&multi, &reference, smoothing)?.scaled(ScoreScale::Percent).value;
        let mut table = if table_path.exists() {
            BleuTable::load(table_path)?
        } else {
            BleuTable::new(ScoreScale::Percent)
        };
        let (b, m) = match table.scale {
            ScoreScale::Percent => (percent, m),
            ScoreScale::Unit => (percent / 100.0, m / 100.0),
        };
        table.insert(lang, b, m)?;
        std::fs::write(table_path, table.to_tsv())?;
        man.output(table_path);
    }
    let mp = a.manifest.or(a.out.as_deref().map(sidecar));
    man.write(mp.as_deref())
}

fn split_assignment(s: &str) -> Result<(LanguageTag, &str)> {
    let (l, rest) = s
        .split_once('=')
        .ok_or_else(|| InputError(format!("expected LANG=VALUE, got {s:?}")))?;
    Ok((lang_tag(l)?, rest))
}

#[derive(Serialize)]
struct RtpRow {
    lang: String,
    rtp: f64,
    delta_bleu: f64,
}

#[derive(Serialize)]
struct SpearmanReport {
    rho: f64,
    n: usize,
}

#[derive(Serialize)]
struct XsimReport {
    weighting: &'static str,
    languages: Vec<String>,
    matrix: Vec<Vec<f64>>,
}

/// `report.json` written by `analyze`.
#[derive(Serialize)]
struct AnalysisReport {
    pivot: String,
    xsim: XsimReport,
    rtp: Option<Vec<RtpRow>>,
    spearman: Option<SpearmanReport>,
    regression: Option<polyknn::features::RegressionReport>,
    noise_baseline_mae: Option<f64>,
}

fn load_dumps(paths: &[PathBuf], pivot: &LanguageTag) -> Result<ContextDumpSet> {
    let mut set: Option<ContextDumpSet> = None;
    for p in paths {
        let reader = DumpReader::open(p).with_context(|| format!("opening dump {}", p.display()))?;
        let dim = reader.header().dim;
        let s = set.get_or_insert_with(|| ContextDumpSet::new(dim, pivot.clone()));
        let records = reader.read_all()?;
        s.add_records(&records)?;
    }
    set.ok_or_else(|| InputError("analyze needs at least one --dump".into()).into())
}

pub fn analyze(mut a: AnalyzeArgs, cfg: &Config) -> Result<()> {
    cfg.fill_list(&mut a.dumps, "dump")?;
    cfg.fill(&mut a.pivot, "pivot")?;
    cfg.fill(&mut a.bleu, "bleu")?;
    cfg.fill_list(&mut a.corpora, "corpus")?;
    cfg.fill_list(&mut a.outputs, "outputs")?;
    cfg.fill(&mut a.distances, "distances")?;
    cfg.fill(&mut a.vocab, "vocab")?;
    cfg.fill(&mut a.ngram, "ngram")?;
    cfg.fill(&mut a.shuffles, "shuffles")?;
    cfg.fill(&mut a.seed, "seed")?;
    cfg.fill(&mut a.out_dir, "out-dir")?;
    if a.weighting.is_none() {
        a.weighting = parse_enum(cfg, "weighting")?;
    }
    if a.averaging.is_none() {
        a.averaging = parse_enum(cfg, "averaging")?;
    }
    let out_dir = required(a.out_dir, "out-dir")?;
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let pivot = lang_tag(a.pivot.as_deref().unwrap_or("en"))?;
    let (weighting, weighting_name) = match a.weighting.unwrap_or(WeightingArg::Mean) {
        WeightingArg::Mean => (TimestepWeighting::Mean, "mean"),
        WeightingArg::Harmonic => (TimestepWeighting::Harmonic, "harmonic"),
    };
    let averaging = match a.averaging.unwrap_or(AveragingArg::Micro) {
        AveragingArg::Micro => MaeAveraging::Micro,
        AveragingArg::Macro => MaeAveraging::Macro,
    };
    let seed = a.seed.unwrap_or(0);
    let mut man = RunManifest::new("analyze", seed);
    man.set("pivot", pivot.as_str());
    man.set("weighting", weighting_name);
    man.set("averaging", averaging);

    for p in &a.dumps {
        man.input(p);
    }
    let dumps = load_dumps(&a.dumps, &pivot)?;
    let sims = man.time("xsim", || similarity_matrix(&dumps, weighting))?;
    let langs: Vec<LanguageTag> = sims.languages().to_vec();
    let xsim_path = out_dir.join("xsim.tsv");
    std::fs::write(&xsim_path, sims.to_tsv())?;
    man.output(&xsim_path);
    let matrix = langs
        .iter()
        .map(|x| langs.iter().map(|y| sims.get(x, y)).collect::<polyknn::Result<Vec<_>>>())
        .collect::<polyknn::Result<Vec<_>>>()?;

    let (rtp, rho) = match &a.bleu {
        Some(path) => {
            man.input(path);
            let table = BleuTable::load(path)?;
            let (rows, rho) = transfer_report(&sims, &table, &langs, &pivot)?;
            let rtp_path = out_dir.join("rtp.tsv");
            let mut tsv = String::from("lang\trtp\tdelta_bleu\n");
            for r in &rows {
                let _ = writeln!(tsv, "{}\t{}\t{}", r.lang, r.rtp, r.delta_bleu);
            }
            std::fs::write(&rtp_path, tsv)?;
            man.output(&rtp_path);
            (Some(rows), rho)
        }
        None => (None, None),
    };

    let (regression, noise) = if a.corpora.is_empty() {
        (None, None)
    } else {
        let vocab_path = required(a.vocab.clone(), "vocab")?;
        let dist_path = required(a.distances.clone(), "distances")?;
        man.input(&vocab_path);
        man.input(&dist_path);
        let vocab = Vocab::load(&vocab_path)?;
        let distances = DistanceTable::load(&dist_path)?;
        let outputs: BTreeMap<LanguageTag, PathBuf> = a
            .outputs
            .iter()
            .map(|s| split_assignment(s).map(|(l, p)| (l, PathBuf::from(p))))
            .collect::<Result<_>>()?;
        let mut corpora = Vec::new();
        for spec in &a.corpora {
            let (lang, paths) = split_assignment(spec)?;
            let (src, tgt) = paths
                .split_once(':')
                .ok_or_else(|| InputError(format!("expected LANG=SRC:TGT, got {spec:?}")))?;
            man.input(src);
            man.input(tgt);
            let pc = read_parallel(&vocab, src, tgt)?;
            let (s, t): (Vec<_>, Vec<_>) = pc.into_iter().unzip();
            let mut c = Corpus::new(lang.clone(), s)?.with_targets(t)?;
            if let Some(p) = outputs.get(&lang) {
                man.input(p);
                let lines = read_lines(p)?;
                let enc = lines.iter().map(|l| vocab.encode(l)).collect::<polyknn::Result<Vec<_>>>()?;
                c = c.with_pivot_outputs(enc);
            }
            corpora.push(c);
        }
        let n_max = a.ngram.unwrap_or(1);
        let pairs = man.time("features", || compute_pair_features(&corpora, &distances, vocab.len(), n_max))?;
        let names = feature_names();
        let samples: Vec<PairSample<f64>> = pairs
            .iter()
            .map(|(l1, l2, f)| {
                Ok(PairSample {
                    lang1: l1.clone(),
                    lang2: l2.clone(),
                    features: f.to_vec(),
                    target: sims.get(l1, l2)?,
                })
            })
            .collect::<polyknn::Result<_>>()?;
        let feat_path = out_dir.join("features.tsv");
        std::fs::write(&feat_path, feature_table_tsv(&names, &samples))?;
        man.output(&feat_path);
        let mut report = man.time("regression", || predict_xsim_loo(&samples, &names, averaging))?;
        let rows: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
        let x = Matrix::from_rows(&rows)?;
        let y: Vec<f64> = samples.iter().map(|s| s.target).collect();
        let full = LinearRegression::fit(&x, &y)?;
        report.importances =
            permutation_importance(&full, &x, &y, &names, a.shuffles.unwrap_or(50), seed)?;
        let noise = shuffled_baseline(&samples, &names, averaging, seed)?;
        (Some(report), Some(noise))
    };

    let report = AnalysisReport {
        pivot: pivot.to_string(),
        xsim: XsimReport {
            weighting: weighting_name,
            languages: langs.iter().map(|l| l.to_string()).collect(),
            matrix,
        },
        rtp,
        spearman: rho,
        regression,
        noise_baseline_mae: noise,
    };
    let report_path = out_dir.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")?;
    man.output(&report_path);
    man.write(Some(&a.manifest.unwrap_or_else(|| out_dir.join("analyze.manifest.json"))))
}

/// RTP of every scored language, and its Spearman correlation with the
/// multilingual gain when at least three languages are available.
fn transfer_report(
    sims: &SimilarityMatrix,
    table: &BleuTable,
    langs: &[LanguageTag],
    pivot: &LanguageTag,
) -> Result<(Vec<RtpRow>, Option<SpearmanReport>)> {
    let scored: BTreeSet<&LanguageTag> = table.scores.keys().collect();
    let usable: Vec<LanguageTag> = langs.iter().filter(|l| scored.contains(l)).cloned().collect();
    let rows = rtp_all(sims, table, &usable, pivot)?
        .into_iter()
        .map(|(l, rtp)| {
            Ok(RtpRow {
                delta_bleu: table.gain(&l)?,
                lang: l.to_string(),
                rtp,
            })
        })
        .collect::<polyknn::Result<Vec<_>>>()?;
    let rho = if rows.len() >= 3 {
        let xs: Vec<f64> = rows.iter().map(|r| r.rtp).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.delta_bleu).collect();
        match spearman(&xs, &ys) {
            Ok((rho, n)) => Some(SpearmanReport { rho, n }),
            Err(polyknn::Error::InsufficientData(_)) => None,
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };
    Ok((rows, rho))
}
