//! Dataset and linguistic features of language pairs.
//!
//! All dataset features are symmetric in the pair and lie in `[0, 1]`:
//!
//! | feature | definition |
//! |---|---|
//! | size ratio | `min(|S1|, |S2|) / max(|S1|, |S2|)` |
//! | vocabulary occupancy ratio | min/max of `|V_ℓ| / |V|` |
//! | source subword overlap | `|V1 ∩ V2| / |V1 ∪ V2|` |
//! | multi-parallel overlap | `|S1 ∩ S2| / |S1 ∪ S2|` over target sentences |
//! | target n-gram overlap | `Σ_i Σ_n n · Σ_g c1_i(g) · c2_i(g)`, min-max scaled over the pair set |
//!
//! Linguistic distances are loaded from a table, not computed.

mod regression;

pub use regression::{
    permutation_importance, predict_xsim_loo, shuffled_baseline, FeatureImportance, FoldResult, LinearRegression,
    MaeAveraging, PairSample, RegressionReport,
};

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::vecstore::{LanguageTag, TokenId};

pub const DATASET_FEATURES: [&str; 5] = [
    "size_ratio",
    "vocab_occupancy_ratio",
    "src_subword_overlap",
    "multi_parallel_overlap",
    "tgt_ngram_overlap",
];

pub const LINGUISTIC_FEATURES: [&str; 5] = ["geographic", "genetic", "inventory", "syntactic", "phonological"];

/// All ten feature names in [`PairFeatures::to_vec`] order.
pub fn feature_names() -> Vec<&'static str> {
    DATASET_FEATURES.iter().chain(&LINGUISTIC_FEATURES).copied().collect()
}

/// A source-language training corpus paired with the pivot language.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub lang: LanguageTag,
    /// Source-side token ids, one entry per sentence.
    pub sentences: Vec<Vec<TokenId>>,
    /// Pivot-side sentences; their identity defines multi-parallel overlap.
    pub targets: Option<Vec<Vec<TokenId>>>,
    /// Target-side output for a shared pivot-aligned set, indexed
    /// identically across languages.
    pub pivot_outputs: Option<Vec<Vec<TokenId>>>,
    usage: BTreeSet<TokenId>,
}

impl Corpus {
    pub fn new(lang: LanguageTag, sentences: Vec<Vec<TokenId>>) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::EmptyInput("corpus has no sentences"));
        }
        let usage = sentences.iter().flatten().copied().collect();
        Ok(Self {
            lang,
            sentences,
            targets: None,
            pivot_outputs: None,
            usage,
        })
    }

    pub fn with_targets(mut self, targets: Vec<Vec<TokenId>>) -> Result<Self> {
        if targets.len() != self.sentences.len() {
            return Err(Error::Dimension {
                expected: self.sentences.len(),
                got: targets.len(),
            });
        }
        self.targets = Some(targets);
        Ok(self)
    }

    pub fn with_pivot_outputs(mut self, outputs: Vec<Vec<TokenId>>) -> Self {
        self.pivot_outputs = Some(outputs);
        self
    }

    /// Subwords used by this corpus (`V_ℓ`).
    pub fn usage(&self) -> &BTreeSet<TokenId> {
        &self.usage
    }
}

fn jaccard<T: Eq + std::hash::Hash + Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn min_over_max(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == 0.0 {
        0.0
    } else {
        a.min(b) / hi
    }
}

pub fn size_ratio(c1: &Corpus, c2: &Corpus) -> Result<f64> {
    if c1.sentences.is_empty() || c2.sentences.is_empty() {
        return Err(Error::EmptyInput("corpus has no sentences"));
    }
    Ok(min_over_max(c1.sentences.len() as f64, c2.sentences.len() as f64))
}

pub fn vocab_occupancy_ratio(c1: &Corpus, c2: &Corpus, vocab_size: usize) -> Result<f64> {
    if vocab_size == 0 {
        return Err(Error::EmptyInput("global vocabulary is empty"));
    }
    if c1.usage.is_empty() || c2.usage.is_empty() {
        return Err(Error::EmptyInput("corpus uses no vocabulary items"));
    }
    let v = vocab_size as f64;
    Ok(min_over_max(c1.usage.len() as f64 / v, c2.usage.len() as f64 / v))
}

pub fn src_subword_overlap(c1: &Corpus, c2: &Corpus) -> Result<f64> {
    if c1.usage.is_empty() || c2.usage.is_empty() {
        return Err(Error::EmptyInput("corpus uses no vocabulary items"));
    }
    Ok(jaccard(&c1.usage, &c2.usage))
}

pub fn multi_parallel_overlap(c1: &Corpus, c2: &Corpus) -> Result<f64> {
    let keys = |c: &Corpus| -> Result<BTreeSet<Vec<TokenId>>> {
        c.targets
            .as_ref()
            .map(|t| t.iter().cloned().collect())
            .ok_or_else(|| Error::InvalidArgument(format!("corpus {} has no target-side keys", c.lang)))
    };
    Ok(jaccard(&keys(c1)?, &keys(c2)?))
}

/// Raw weighted target n-gram co-occurrence `Σ_i Σ_{n ≤ n_max} n · Σ_g c1_i(g) c2_i(g)`
/// over two output lists aligned to the same pivot sentences.
pub fn tgt_ngram_overlap_raw(out1: &[Vec<TokenId>], out2: &[Vec<TokenId>], n_max: usize) -> Result<f64> {
    if out1.len() != out2.len() {
        return Err(Error::InvalidArgument(format!(
            "misaligned corpora: {} vs {} pivot-aligned sentences",
            out1.len(),
            out2.len()
        )));
    }
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    let mut total = 0.0;
    for (a, b) in out1.iter().zip(out2) {
        for n in 1..=n_max {
            let mut ca: HashMap<&[TokenId], u64> = HashMap::new();
            for g in a.windows(n) {
                *ca.entry(g).or_default() += 1;
            }
            let mut dot = 0u64;
            let mut cb: HashMap<&[TokenId], u64> = HashMap::new();
            for g in b.windows(n) {
                *cb.entry(g).or_default() += 1;
            }
            for (g, x) in &ca {
                if let Some(y) = cb.get(g) {
                    dot += x * y;
                }
            }
            total += (dot * n as u64) as f64;
        }
    }
    Ok(total)
}

/// [`tgt_ngram_overlap_raw`] on the corpora's pivot outputs.
pub fn tgt_ngram_overlap(c1: &Corpus, c2: &Corpus, n_max: usize) -> Result<f64> {
    fn get(c: &Corpus) -> Result<&[Vec<TokenId>]> {
        c.pivot_outputs
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument(format!("misaligned corpora: {} has no pivot outputs", c.lang)))
    }
    tgt_ngram_overlap_raw(get(c1)?, get(c2)?, n_max)
}

/// Maps values linearly onto `[0, 1]`. A constant set maps to 1 when
/// positive and 0 otherwise.
pub fn min_max_scale(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| {
            if hi > lo {
                (v - lo) / (hi - lo)
            } else if v > 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Linguistic distances of a language pair, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LinguisticDistances {
    pub geographic: f64,
    pub genetic: f64,
    pub inventory: f64,
    pub syntactic: f64,
    pub phonological: f64,
}

impl LinguisticDistances {
    pub fn to_array(&self) -> [f64; 5] {
        [self.geographic, self.genetic, self.inventory, self.syntactic, self.phonological]
    }
}

fn pair_key(a: &LanguageTag, b: &LanguageTag) -> (LanguageTag, LanguageTag) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// Symmetric lookup table of linguistic distances.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DistanceTable {
    entries: HashMap<(LanguageTag, LanguageTag), LinguisticDistances>,
}

impl DistanceTable {
    pub fn insert(&mut self, a: &LanguageTag, b: &LanguageTag, d: LinguisticDistances) -> Result<()> {
        if d.to_array().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!("distance outside [0, 1] for {a}-{b}")));
        }
        self.entries.insert(pair_key(a, b), d);
        Ok(())
    }

    pub fn get(&self, a: &LanguageTag, b: &LanguageTag) -> Result<LinguisticDistances> {
        self.entries
            .get(&pair_key(a, b))
            .copied()
            .ok_or_else(|| Error::IncompleteTable(format!("linguistic distances for {a}-{b}")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses `lang1<TAB>lang2<TAB>geographic<TAB>genetic<TAB>inventory<TAB>syntactic<TAB>phonological`.
    /// A header row starting with `lang1` and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut t = Self::default();
        for (no, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') || line.starts_with("lang1\t") {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                return Err(Error::parse("distances", format!("line {}: expected 7 fields", no + 1)));
            }
            let mut v = [0.0; 5];
            for (slot, s) in v.iter_mut().zip(&f[2..]) {
                *slot = s
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse("distances", format!("line {}: bad number {s:?}", no + 1)))?;
            }
            let d = LinguisticDistances {
                geographic: v[0],
                genetic: v[1],
                inventory: v[2],
                syntactic: v[3],
                phonological: v[4],
            };
            t.insert(&LanguageTag::new(f[0].trim())?, &LanguageTag::new(f[1].trim())?, d)?;
        }
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// The ten regression inputs of a language pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairFeatures {
    pub size_ratio: f64,
    pub vocab_occupancy_ratio: f64,
    pub src_subword_overlap: f64,
    pub multi_parallel_overlap: f64,
    /// Min-max scaled over the evaluated pair set.
    pub tgt_ngram_overlap: f64,
    pub linguistic: LinguisticDistances,
}

impl PairFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![
            self.size_ratio,
            self.vocab_occupancy_ratio,
            self.src_subword_overlap,
            self.multi_parallel_overlap,
            self.tgt_ngram_overlap,
        ];
        v.extend(self.linguistic.to_array());
        v
    }
}

/// Features for every unordered pair of `corpora`, in (i < j) order.
pub fn compute_pair_features(
    corpora: &[Corpus],
    distances: &DistanceTable,
    vocab_size: usize,
    n_max: usize,
) -> Result<Vec<(LanguageTag, LanguageTag, PairFeatures)>> {
    let mut out = Vec::new();
    let mut raw_tgt = Vec::new();
    for i in 0..corpora.len() {
        for j in (i + 1)..corpora.len() {
            let (a, b) = (&corpora[i], &corpora[j]);
            raw_tgt.push(tgt_ngram_overlap(a, b, n_max)?);
            out.push((
                a.lang.clone(),
                b.lang.clone(),
                PairFeatures {
                    size_ratio: size_ratio(a, b)?,
                    vocab_occupancy_ratio: vocab_occupancy_ratio(a, b, vocab_size)?,
                    src_subword_overlap: src_subword_overlap(a, b)?,
                    multi_parallel_overlap: multi_parallel_overlap(a, b)?,
                    tgt_ngram_overlap: 0.0,
                    linguistic: distances.get(&a.lang, &b.lang)?,
                },
            ));
        }
    }
    for (row, scaled) in out.iter_mut().zip(min_max_scale(&raw_tgt)) {
        row.2.tgt_ngram_overlap = scaled;
    }
    Ok(out)
}

/// Writes `lang1<TAB>lang2<TAB>features...<TAB>xsim` with a header row.
pub fn feature_table_tsv(names: &[&str], samples: &[PairSample<f64>]) -> String {
    let mut s = String::from("lang1\tlang2");
    for n in names {
        let _ = write!(s, "\t{n}");
    }
    s.push_str("\txsim\n");
    for p in samples {
        let _ = write!(s, "{}\t{}", p.lang1, p.lang2);
        for v in &p.features {
            let _ = write!(s, "\t{v}");
        }
        let _ = writeln!(s, "\t{}", p.target);
    }
    s
}

/// Parses the output of [`feature_table_tsv`], returning feature names and
/// samples.
pub fn parse_feature_table(text: &str) -> Result<(Vec<String>, Vec<PairSample<f64>>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::parse("feature table", "empty file"))?
        .split('\t')
        .collect();
    if header.len() < 4 || header[0] != "lang1" || header[1] != "lang2" || header[header.len() - 1] != "xsim" {
        return Err(Error::parse("feature table", "header must be lang1, lang2, features..., xsim"));
    }
    let names: Vec<String> = header[2..header.len() - 1].iter().map(|s| s.to_string()).collect();
    let mut samples = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != header.len() {
            return Err(Error::parse("feature table", format!("row has {} fields", f.len())));
        }
        let nums: Vec<f64> = f[2..]
            .iter()
            .map(|s| s.trim().parse().map_err(|_| Error::parse("feature table", format!("bad number {s:?}"))))
            .collect::<Result<_>>()?;
        samples.push(PairSample {
            lang1: LanguageTag::new(f[0])?,
            lang2: LanguageTag::new(f[1])?,
            features: nums[..nums.len() - 1].to_vec(),
            target: nums[nums.len() - 1],
        });
    }
    Ok((names, samples))
}

/// Distinct target sentences shared by both corpora (helper for reports).
pub fn shared_target_count(c1: &Corpus, c2: &Corpus) -> usize {
    match (&c1.targets, &c2.targets) {
        (Some(a), Some(b)) => {
            let a: HashSet<&Vec<TokenId>> = a.iter().collect();
            let b: HashSet<&Vec<TokenId>> = b.iter().collect();
            a.intersection(&b).count()
        }
        _ => 0,
    }
}
