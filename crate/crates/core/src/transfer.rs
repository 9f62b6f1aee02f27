//! Representational transfer metrics.
//!
//! * `xsim(ℓ, ℓ')`: mean cosine similarity between the context vectors two
//!   source languages produce for the same target sentence, averaged over
//!   timesteps within a sentence and then over sentences.
//! * `RTP(ℓ) = Σ_{ℓ' ∉ {ℓ, pivot}} ΔBLEU(ℓ, ℓ') / max_{ℓ''} |ΔBLEU(ℓ, ℓ'')| · xsim(ℓ, ℓ')`
//!   with `ΔBLEU(ℓ, ℓ') = bilingual(ℓ') − bilingual(ℓ)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{cosine, Scalar};
use crate::vecstore::{LanguageTag, ReprRecord};

/// How timestep similarities are combined within a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimestepWeighting {
    /// Mean over shared timesteps, then mean over sentences.
    #[default]
    Mean,
    /// `Σ_sentences Σ_t cos / t` with 1-based `t` and no normalisation.
    Harmonic,
}

type SentenceContexts = BTreeMap<u16, Vec<f32>>;

/// Context vectors per language, keyed by sentence id and timestep.
/// Sentence ids are shared across languages (multi-parallel data).
#[derive(Debug, Clone, PartialEq)]
pub struct ContextDumpSet {
    dim: usize,
    target: LanguageTag,
    langs: BTreeMap<LanguageTag, BTreeMap<u32, SentenceContexts>>,
}

impl ContextDumpSet {
    pub fn new(dim: usize, target: LanguageTag) -> Self {
        Self {
            dim,
            target,
            langs: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn target(&self) -> &LanguageTag {
        &self.target
    }

    pub fn languages(&self) -> Vec<LanguageTag> {
        self.langs.keys().cloned().collect()
    }

    pub fn insert(&mut self, lang: &LanguageTag, sentence_id: u32, timestep: u16, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: vector.len(),
            });
        }
        self.langs
            .entry(lang.clone())
            .or_default()
            .entry(sentence_id)
            .or_default()
            .insert(timestep, vector);
        Ok(())
    }

    pub fn add_records<'a>(&mut self, records: impl IntoIterator<Item = &'a ReprRecord>) -> Result<()> {
        for r in records {
            self.insert(&r.lang, r.sentence_id, r.timestep, r.vector.clone())?;
        }
        Ok(())
    }

    /// Multiplies every vector of `lang` by `factor`.
    pub fn scale_language(&mut self, lang: &LanguageTag, factor: f32) {
        if let Some(s) = self.langs.get_mut(lang) {
            for v in s.values_mut().flat_map(|t| t.values_mut()) {
                v.iter_mut().for_each(|x| *x *= factor);
            }
        }
    }

    fn get(&self, lang: &LanguageTag) -> Result<&BTreeMap<u32, SentenceContexts>> {
        self.langs
            .get(lang)
            .ok_or_else(|| Error::InvalidArgument(format!("no context dump for language {lang}")))
    }

    /// Sentence ids present for both languages.
    pub fn shared_sentences(&self, l1: &LanguageTag, l2: &LanguageTag) -> Result<Vec<u32>> {
        let a = self.get(l1)?;
        let b = self.get(l2)?;
        Ok(a.keys().filter(|s| b.contains_key(s)).copied().collect())
    }
}

fn cos_f64(a: &[f32], b: &[f32]) -> f64 {
    let a: Vec<f64> = a.iter().map(|&x| x as f64).collect();
    let b: Vec<f64> = b.iter().map(|&x| x as f64).collect();
    cosine(&a, &b)
}

/// Cross-lingual similarity of two languages' context vectors.
pub fn xsim(dumps: &ContextDumpSet, l1: &LanguageTag, l2: &LanguageTag, weighting: TimestepWeighting) -> Result<f64> {
    let a = dumps.get(l1)?;
    let b = dumps.get(l2)?;
    let mut total = 0.0;
    let mut sentences = 0usize;
    for (sid, ta) in a {
        let Some(tb) = b.get(sid) else { continue };
        let mut sum = 0.0;
        let mut steps = 0usize;
        for (t, va) in ta {
            let Some(vb) = tb.get(t) else { continue };
            let c = cos_f64(va, vb);
            sum += match weighting {
                TimestepWeighting::Mean => c,
                TimestepWeighting::Harmonic => c / (*t as f64 + 1.0),
            };
            steps += 1;
        }
        if steps == 0 {
            continue;
        }
        total += match weighting {
            TimestepWeighting::Mean => sum / steps as f64,
            TimestepWeighting::Harmonic => sum,
        };
        sentences += 1;
    }
    if sentences == 0 {
        return Err(Error::NoOverlap(l1.to_string(), l2.to_string()));
    }
    Ok(match weighting {
        TimestepWeighting::Mean => total / sentences as f64,
        TimestepWeighting::Harmonic => total,
    })
}

/// Symmetric language × language xsim matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityMatrix {
    languages: Vec<LanguageTag>,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    /// Starts from the identity; off-diagonal entries default to 0.
    pub fn new(languages: Vec<LanguageTag>) -> Self {
        let n = languages.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
        }
        Self { languages, values }
    }

    pub fn languages(&self) -> &[LanguageTag] {
        &self.languages
    }

    fn pos(&self, l: &LanguageTag) -> Result<usize> {
        self.languages
            .iter()
            .position(|x| x == l)
            .ok_or_else(|| Error::IncompleteTable(format!("similarity for {l}")))
    }

    pub fn get(&self, a: &LanguageTag, b: &LanguageTag) -> Result<f64> {
        let n = self.languages.len();
        Ok(self.values[self.pos(a)? * n + self.pos(b)?])
    }

    /// Sets both `(a, b)` and `(b, a)`.
    pub fn set(&mut self, a: &LanguageTag, b: &LanguageTag, v: f64) -> Result<()> {
        if !(-1.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!("similarity {v} outside [-1, 1]")));
        }
        let n = self.languages.len();
        let (i, j) = (self.pos(a)?, self.pos(b)?);
        self.values[i * n + j] = v;
        self.values[j * n + i] = v;
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("lang");
        for l in &self.languages {
            let _ = write!(s, "\t{l}");
        }
        s.push('\n');
        let n = self.languages.len();
        for (i, l) in self.languages.iter().enumerate() {
            let _ = write!(s, "{l}");
            for j in 0..n {
                let _ = write!(s, "\t{:.6}", self.values[i * n + j]);
            }
            s.push('\n');
        }
        s
    }
}

/// xsim for every pair of languages in `dumps`.
pub fn similarity_matrix(dumps: &ContextDumpSet, weighting: TimestepWeighting) -> Result<SimilarityMatrix> {
    let langs = dumps.languages();
    let pairs: Vec<(usize, usize)> = (0..langs.len())
        .flat_map(|i| ((i + 1)..langs.len()).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| xsim(dumps, &langs[i], &langs[j], weighting))
        .collect::<Result<_>>()?;
    let mut m = SimilarityMatrix::new(langs.clone());
    for (&(i, j), v) in pairs.iter().zip(values) {
        let n = langs.len();
        m.values[i * n + j] = v;
        m.values[j * n + i] = v;
    }
    Ok(m)
}

/// Declared scale of BLEU-like scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreScale {
    Unit,
    Percent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BleuPair {
    pub bilingual: f64,
    pub multilingual: f64,
}

/// Bilingual and multilingual BLEU per source language.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuTable {
    pub scale: ScoreScale,
    pub scores: BTreeMap<LanguageTag, BleuPair>,
}

impl BleuTable {
    pub fn new(scale: ScoreScale) -> Self {
        Self {
            scale,
            scores: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, lang: LanguageTag, bilingual: f64, multilingual: f64) -> Result<()> {
        let hi = match self.scale {
            ScoreScale::Unit => 1.0,
            ScoreScale::Percent => 100.0,
        };
        for v in [bilingual, multilingual] {
            if !(0.0..=hi).contains(&v) {
                return Err(Error::InvalidArgument(format!("score {v} outside [0, {hi}] for {lang}")));
            }
        }
        self.scores.insert(lang, BleuPair { bilingual, multilingual });
        Ok(())
    }

    pub fn bilingual(&self, lang: &LanguageTag) -> Result<f64> {
        self.scores
            .get(lang)
            .map(|p| p.bilingual)
            .ok_or_else(|| Error::IncompleteTable(format!("bilingual score for {lang}")))
    }

    /// Multilingual minus bilingual score.
    pub fn gain(&self, lang: &LanguageTag) -> Result<f64> {
        self.scores
            .get(lang)
            .map(|p| p.multilingual - p.bilingual)
            .ok_or_else(|| Error::IncompleteTable(format!("scores for {lang}")))
    }

    /// Parses `lang<TAB>bilingual<TAB>multilingual` rows after a
    /// `#scale=percent|unit` header line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::parse("bleu table", "empty file"))?;
        let scale = match header.trim() {
            "#scale=percent" => ScoreScale::Percent,
            "#scale=unit" => ScoreScale::Unit,
            other => return Err(Error::parse("bleu table", format!("expected #scale header, got {other:?}"))),
        };
        let mut t = Self::new(scale);
        for line in lines {
            if line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::parse("bleu table", format!("expected 3 fields: {line:?}")));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse("bleu table", format!("bad number {s:?}")))
            };
            t.insert(LanguageTag::new(f[0].trim())?, num(f[1])?, num(f[2])?)?;
        }
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!(
            "#scale={}\n",
            match self.scale {
                ScoreScale::Unit => "unit",
                ScoreScale::Percent => "percent",
            }
        );
        for (l, p) in &self.scores {
            let _ = writeln!(s, "{l}\t{}\t{}", p.bilingual, p.multilingual);
        }
        s
    }
}

/// Representational transfer potential of `lang` against `languages`.
///
/// The normaliser is the largest |ΔBLEU| over the same comparison set;
/// returns 0 when every ΔBLEU is 0.
pub fn rtp(
    lang: &LanguageTag,
    sims: &SimilarityMatrix,
    bleu: &BleuTable,
    languages: &[LanguageTag],
    pivot: &LanguageTag,
) -> Result<f64> {
    let own = bleu.bilingual(lang)?;
    let mut terms = Vec::new();
    for other in languages {
        if other == lang || other == pivot {
            continue;
        }
        let delta = bleu.bilingual(other)? - own;
        terms.push((delta, sims.get(lang, other)?));
    }
    let norm = terms.iter().map(|(d, _)| d.abs()).fold(0.0, f64::max);
    if norm == 0.0 {
        return Ok(0.0);
    }
    Ok(terms.iter().map(|(d, s)| d / norm * s).sum())
}

/// RTP for every language in `languages` except the pivot, in input order.
pub fn rtp_all(
    sims: &SimilarityMatrix,
    bleu: &BleuTable,
    languages: &[LanguageTag],
    pivot: &LanguageTag,
) -> Result<Vec<(LanguageTag, f64)>> {
    languages
        .iter()
        .filter(|l| *l != pivot)
        .map(|l| Ok((l.clone(), rtp(l, sims, bleu, languages, pivot)?)))
        .collect()
}

/// Value of the similarity objective `Σ_t cos(c1_t, c2_t)` over aligned
/// rows. With `center`, the mean of all `2n` rows is subtracted first.
pub fn xsim_loss<S: Scalar>(c1: &Matrix<S>, c2: &Matrix<S>, center: bool) -> Result<S> {
    if c1.rows() != c2.rows() || c1.cols() != c2.cols() {
        return Err(Error::Dimension {
            expected: c1.rows() * c1.cols(),
            got: c2.rows() * c2.cols(),
        });
    }
    let d = c1.cols();
    let mean: Vec<S> = if center && c1.rows() > 0 {
        let n = S::from_usize_lossy(2 * c1.rows());
        (0..d)
            .map(|j| (0..c1.rows()).map(|i| c1[(i, j)] + c2[(i, j)]).sum::<S>() / n)
            .collect()
    } else {
        vec![S::zero(); d]
    };
    let shift = |row: &[S]| -> Vec<S> { row.iter().zip(&mean).map(|(&x, &m)| x - m).collect() };
    Ok((0..c1.rows())
        .map(|i| cosine(&shift(c1.row(i)), &shift(c2.row(i))))
        .sum())
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks<S: Scalar>(xs: &[S]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's ρ (Pearson correlation of average ranks) and sample size.
pub fn spearman<S: Scalar>(xs: &[S], ys: &[S]) -> Result<(f64, usize)> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("spearman needs at least 3 points, got {n}")));
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("NaN in spearman input".into()));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mean, b - mean);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InsufficientData("spearman input is constant".into()));
    }
    Ok(((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0), n))
}
