//! `polyknn` command-line tool.
//!
//! Exit codes: 0 success, 2 input error, 3 incompatible inputs, 4 internal
//! error.

mod bench;
mod config;
mod evaluate;
mod manifest;
mod stores;
mod toy;
mod translate;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Bad or missing user input.
#[derive(Debug)]
pub struct InputError(pub String);

/// Inputs that are individually valid but cannot be combined.
#[derive(Debug)]
pub struct Incompatible(pub String);

/// A broken internal invariant.
#[derive(Debug)]
pub struct Internal(pub String);

macro_rules! message_error {
    ($t:ty) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
        impl std::error::Error for $t {}
    };
}
message_error!(InputError);
message_error!(Incompatible);
message_error!(Internal);

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Internal>() {
            return 4;
        }
        if cause.is::<Incompatible>() {
            return 3;
        }
        if cause.is::<InputError>() || cause.is::<std::io::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<polyknn::Error>() {
            return if e.is_incompatibility() { 3 } else { 2 };
        }
    }
    4
}

#[derive(Parser)]
#[command(name = "polyknn", version, about = "Multilingual kNN translation datastores")]
struct Cli {
    /// `key = value` file supplying defaults for long flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic multilingual corpus.
    GenToy(GenToyArgs),
    /// Build a datastore from a parallel corpus.
    Build(BuildArgs),
    /// Concatenate datastores.
    Merge(MergeArgs),
    /// Fit a linear map between two languages' context spaces.
    MapFit(MapFitArgs),
    /// Apply a linear map to every key of a datastore.
    MapApply(MapApplyArgs),
    /// Decode an input file with optional retrieval.
    Translate(TranslateArgs),
    /// Corpus BLEU of a hypothesis file.
    Bleu(BleuArgs),
    /// Similarity, transfer potential and feature regression reports.
    Analyze(AnalyzeArgs),
    /// Decoding throughput against datastore size.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum IndexKind {
    Exact,
    CellProbe,
}

#[derive(Args, Clone, Debug)]
pub struct IndexArgs {
    /// Search index [default: exact].
    #[arg(long, value_enum)]
    pub index: Option<IndexKind>,
    /// Number of cells of the cell-probe index [default: 256].
    #[arg(long)]
    pub cells: Option<usize>,
    /// Cells scanned per query [default: 8].
    #[arg(long)]
    pub probe: Option<usize>,
    /// Entries sampled to train the cell centroids [default: all].
    #[arg(long)]
    pub max_train: Option<usize>,
}

#[derive(Args, Clone, Debug)]
pub struct ModelArgs {
    /// Vocabulary file, one token per line.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Source side of a model training corpus (repeatable).
    #[arg(long = "train-src")]
    pub train_src: Vec<PathBuf>,
    /// Target side of a model training corpus (repeatable, same order).
    #[arg(long = "train-tgt")]
    pub train_tgt: Vec<PathBuf>,
    /// Context vector dimension [default: 64, or the store's].
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GenToyArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated source language codes.
    #[arg(long, value_delimiter = ',')]
    pub langs: Vec<String>,
    #[arg(long)]
    pub pivot: Option<String>,
    #[arg(long)]
    pub families: Option<usize>,
    #[arg(long)]
    pub concepts: Option<usize>,
    /// Size of the shared multi-parallel sentence pool.
    #[arg(long)]
    pub pool: Option<usize>,
    #[arg(long)]
    pub train_min: Option<usize>,
    #[arg(long)]
    pub train_max: Option<usize>,
    /// Multi-parallel test sentences.
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    /// Source side of the datastore corpus.
    #[arg(long)]
    pub src: Option<PathBuf>,
    /// Target side of the datastore corpus.
    #[arg(long)]
    pub tgt: Option<PathBuf>,
    /// Source language code recorded as provenance.
    #[arg(long)]
    pub lang: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub index: IndexArgs,
    /// Output `KDS1` datastore.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the raw contexts as an `RDMP1` dump.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MergeArgs {
    /// Input datastores (repeatable).
    #[arg(long = "store")]
    pub stores: Vec<PathBuf>,
    #[command(flatten)]
    pub index: IndexArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MapFitArgs {
    /// Store whose keys are mapped.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Store whose space the keys are mapped into.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Sentence alignment TSV (source id, target id); defaults to equal ids.
    #[arg(long)]
    pub align: Option<PathBuf>,
    /// Ridge strength; without it, plain least squares with a ridge
    /// fallback on singular systems.
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MapApplyArgs {
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TranslateArgs {
    /// Datastores to retrieve from (repeatable; merged in order).
    #[arg(long = "store")]
    pub stores: Vec<PathBuf>,
    /// Linear map applied to every query.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Neighbours per step; a comma list sweeps and writes `<output>.k<k>`.
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Sentences decoded in parallel.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Only retrieve entries of these source languages.
    #[arg(long = "languages", value_delimiter = ',')]
    pub languages: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SmoothingArg {
    Exp,
    None,
}

#[derive(Args, Debug)]
pub struct BleuArgs {
    #[arg(long)]
    pub hyp: Option<PathBuf>,
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub smoothing: Option<SmoothingArg>,
    /// Score report (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Append a (lang, bilingual, multilingual) row to this BLEU table,
    /// scoring `--hyp` as bilingual and `--multilingual-hyp` as multilingual.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub lang: Option<String>,
    #[arg(long)]
    pub multilingual_hyp: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum WeightingArg {
    Mean,
    Harmonic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AveragingArg {
    Micro,
    Macro,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// `RDMP1` context dumps of a multi-parallel set (one per language).
    #[arg(long = "dump")]
    pub dumps: Vec<PathBuf>,
    #[arg(long)]
    pub pivot: Option<String>,
    #[arg(long, value_enum)]
    pub weighting: Option<WeightingArg>,
    /// BLEU table (`#scale=` header, then lang, bilingual, multilingual).
    #[arg(long)]
    pub bleu: Option<PathBuf>,
    /// Training corpus of a language as `LANG=SRC:TGT` (repeatable).
    #[arg(long = "corpus")]
    pub corpora: Vec<String>,
    /// Pivot-aligned generated output of a language as `LANG=PATH`.
    #[arg(long = "outputs")]
    pub outputs: Vec<String>,
    #[arg(long)]
    pub distances: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Largest n-gram order of the target overlap feature [default: 1].
    #[arg(long)]
    pub ngram: Option<usize>,
    #[arg(long, value_enum)]
    pub averaging: Option<AveragingArg>,
    /// Shuffles per feature for permutation importance [default: 50].
    #[arg(long)]
    pub shuffles: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum BenchIndex {
    Exact,
    CellProbe,
    Both,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Generated store sizes, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    /// Existing stores instead of generated ones (repeatable).
    #[arg(long = "store")]
    pub stores: Vec<PathBuf>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Query sentences decoded per measurement.
    #[arg(long)]
    pub sentences: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long, value_enum)]
    pub index: Option<BenchIndex>,
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long)]
    pub probe: Option<usize>,
    #[arg(long)]
    pub max_train: Option<usize>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Throughput table (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = config::Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenToy(a) => stores::gen_toy(a, &cfg),
        Command::Build(a) => stores::build(a, &cfg),
        Command::Merge(a) => stores::merge(a, &cfg),
        Command::MapFit(a) => stores::map_fit(a, &cfg),
        Command::MapApply(a) => stores::map_apply(a, &cfg),
        Command::Translate(a) => translate::translate(a, &cfg),
        Command::Bleu(a) => evaluate::bleu(a, &cfg),
        Command::Analyze(a) => evaluate::analyze(a, &cfg),
        Command::Bench(a) => bench::bench(a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(4),
    }
}

/// Unwraps a required option, reporting the flag name.
pub fn required<T>(v: Option<T>, flag: &str) -> anyhow::Result<T> {
    v.ok_or_else(|| InputError(format!("missing required --{flag}")).into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let e: anyhow::Error = InputError("x".into()).into();
        assert_eq!(exit_code(&e), 2);
        let e: anyhow::Error = polyknn::Error::Dimension { expected: 1, got: 2 }.into();
        assert_eq!(exit_code(&e.context("while decoding")), 3);
        let e: anyhow::Error = polyknn::Error::EmptyPairs.into();
        assert_eq!(exit_code(&e), 2);
        let e: anyhow::Error = Internal("bad".into()).into();
        assert_eq!(exit_code(&e), 4);
        assert_eq!(exit_code(&anyhow::anyhow!("unclassified")), 4);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
