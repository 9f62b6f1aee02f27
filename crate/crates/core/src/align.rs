//! Linear cross-lingual maps between representation spaces.
//!
//! Training rows pair the context vectors of two languages that produced the
//! same target token at the same position of the same (multi-parallel)
//! target sentence. The map `A` minimises `Σ ||y_i − A x_i||² + ridge·||A||²_F`
//! and is obtained from the normal equations.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::decode::QueryMap;
use crate::error::{Error, Result};
use crate::linalg::{solve_spd, Matrix};
use crate::scalar::Scalar;
use crate::vecstore::{Datastore, LanguageTag, TokenId};

pub const MAP_MAGIC: &[u8; 6] = b"KLM1\0\0";

/// Square matrix mapping vectors of `source_lang` into the space of
/// `target_lang`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap<S> {
    matrix: Matrix<S>,
    pub source_lang: LanguageTag,
    pub target_lang: LanguageTag,
    pub ridge: f64,
}

impl<S: Scalar> LinearMap<S> {
    pub fn new(matrix: Matrix<S>, source_lang: LanguageTag, target_lang: LanguageTag, ridge: f64) -> Result<Self> {
        if matrix.rows() != matrix.cols() {
            return Err(Error::Dimension {
                expected: matrix.rows(),
                got: matrix.cols(),
            });
        }
        if !matrix.is_finite() {
            return Err(Error::InvalidArgument("map has non-finite entries".into()));
        }
        if !(ridge >= 0.0) {
            return Err(Error::InvalidArgument("ridge must be non-negative".into()));
        }
        Ok(Self {
            matrix,
            source_lang,
            target_lang,
            ridge,
        })
    }

    pub fn identity(dim: usize, lang: LanguageTag) -> Self {
        Self {
            matrix: Matrix::identity(dim),
            source_lang: lang.clone(),
            target_lang: lang,
            ridge: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &Matrix<S> {
        &self.matrix
    }

    /// `A · v`.
    pub fn apply(&self, v: &[S]) -> Result<Vec<S>> {
        self.matrix.matvec(v)
    }

    pub fn cast<T: Scalar>(&self) -> LinearMap<T> {
        LinearMap {
            matrix: self.matrix.cast(),
            source_lang: self.source_lang.clone(),
            target_lang: self.target_lang.clone(),
            ridge: self.ridge,
        }
    }
}

impl<S: Scalar> QueryMap for LinearMap<S> {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn output_dim(&self) -> usize {
        self.dim()
    }

    fn map_query(&self, v: &[f32]) -> Result<Vec<f32>> {
        let x: Vec<S> = v.iter().map(|&a| S::from_f32_lossy(a)).collect();
        Ok(self
            .apply(&x)?
            .into_iter()
            .map(|a| a.to_f32().unwrap_or(f32::NAN))
            .collect())
    }
}

/// Free-function form of [`LinearMap::apply`].
pub fn apply_map<S: Scalar>(map: &LinearMap<S>, v: &[S]) -> Result<Vec<S>> {
    map.apply(v)
}

/// Row-aligned context pairs: row `i` of `src` and row `i` of `tgt`
/// produced the same target token.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedContexts<S> {
    src: Matrix<S>,
    tgt: Matrix<S>,
    pub source_lang: Option<LanguageTag>,
    pub target_lang: Option<LanguageTag>,
}

impl<S: Scalar> PairedContexts<S> {
    pub fn new(src: Matrix<S>, tgt: Matrix<S>) -> Result<Self> {
        if src.rows() != tgt.rows() {
            return Err(Error::Dimension {
                expected: src.rows(),
                got: tgt.rows(),
            });
        }
        if src.cols() != tgt.cols() {
            return Err(Error::Dimension {
                expected: src.cols(),
                got: tgt.cols(),
            });
        }
        Ok(Self {
            src,
            tgt,
            source_lang: None,
            target_lang: None,
        })
    }

    pub fn len(&self) -> usize {
        self.src.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.src.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.src.cols()
    }

    pub fn src(&self) -> &Matrix<S> {
        &self.src
    }

    pub fn tgt(&self) -> &Matrix<S> {
        &self.tgt
    }

    /// Same rows with source and target exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            src: self.tgt.clone(),
            tgt: self.src.clone(),
            source_lang: self.target_lang.clone(),
            target_lang: self.source_lang.clone(),
        }
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let d = self.dim();
        let take = |m: &Matrix<S>| Matrix::from_row_major(n, d, m.as_slice()[..n * d].to_vec()).expect("prefix shape");
        Self {
            src: take(&self.src),
            tgt: take(&self.tgt),
            source_lang: self.source_lang.clone(),
            target_lang: self.target_lang.clone(),
        }
    }

    /// `1e-6 · trace(XᵀX) / d`.
    pub fn default_ridge(&self) -> f64 {
        let d = self.dim().max(1) as f64;
        let trace: f64 = self
            .src
            .as_slice()
            .iter()
            .map(|x| x.to_f64_lossy().powi(2))
            .sum();
        1e-6 * trace / d
    }
}

/// A fitted map with its training residual `Σ ||y_i − A x_i||²`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapFit<S> {
    pub map: LinearMap<S>,
    pub residual: f64,
    pub rows: usize,
}

/// Least-squares fit of `A` in `y ≈ A x` with an optional ridge term.
///
/// Returns [`Error::Singular`] when `XᵀX + ridge·I` is not positive
/// definite; callers then retry with a positive ridge.
pub fn fit_linear_map<S: Scalar>(pairs: &PairedContexts<S>, ridge: f64) -> Result<MapFit<S>> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    if !(ridge >= 0.0) {
        return Err(Error::InvalidArgument("ridge must be non-negative".into()));
    }
    let x = &pairs.src;
    let y = &pairs.tgt;
    let mut gram = x.t_matmul(x)?;
    let r = S::from_f64_lossy(ridge);
    for i in 0..gram.rows() {
        gram[(i, i)] += r;
    }
    let xty = x.t_matmul(y)?;
    // gram · Aᵀ = Xᵀ Y
    let a_t = solve_spd(&gram, &xty)?;
    let matrix = a_t.transpose();

    let mut residual = 0.0f64;
    for i in 0..pairs.len() {
        let pred = matrix.matvec(x.row(i))?;
        residual += pred
            .iter()
            .zip(y.row(i))
            .map(|(&p, &t)| (p - t).to_f64_lossy().powi(2))
            .sum::<f64>();
    }
    let lang = |l: &Option<LanguageTag>| l.clone().unwrap_or_else(|| LanguageTag::new("und").expect("valid tag"));
    Ok(MapFit {
        map: LinearMap::new(matrix, lang(&pairs.source_lang), lang(&pairs.target_lang), ridge)?,
        residual,
        rows: pairs.len(),
    })
}

/// Fits with `ridge = 0` first and falls back to
/// [`PairedContexts::default_ridge`] when the system is singular.
pub fn fit_linear_map_with_fallback<S: Scalar>(pairs: &PairedContexts<S>) -> Result<MapFit<S>> {
    match fit_linear_map(pairs, 0.0) {
        Err(Error::Singular) => fit_linear_map(pairs, pairs.default_ridge().max(f64::MIN_POSITIVE)),
        other => other,
    }
}

fn single_language(store: &Datastore) -> Result<LanguageTag> {
    match store.languages() {
        [(lang, _)] => Ok(lang.clone()),
        other => Err(Error::InvalidArgument(format!(
            "expected a single-language store, found {} languages",
            other.len()
        ))),
    }
}

/// Entry indices of each sentence, ordered by timestep.
fn by_sentence(store: &Datastore) -> BTreeMap<u32, Vec<(u16, TokenId, usize)>> {
    let mut m: BTreeMap<u32, Vec<(u16, TokenId, usize)>> = BTreeMap::new();
    for (i, e) in store.entries().enumerate() {
        m.entry(e.sentence_id).or_default().push((e.timestep, e.token_id, i));
    }
    for v in m.values_mut() {
        v.sort_unstable();
    }
    m
}

/// Sentence ids present in both stores, paired with themselves.
pub fn identity_alignment(store1: &Datastore, store2: &Datastore) -> Vec<(u32, u32)> {
    let a = by_sentence(store1);
    let b = by_sentence(store2);
    a.keys().filter(|s| b.contains_key(s)).map(|&s| (s, s)).collect()
}

/// Collects one row pair per aligned (sentence, timestep) where both stores
/// hold the same target token.
///
/// Sentences whose two decodes differ in length are skipped entirely.
/// Repeated target tokens within a sentence each contribute a row.
pub fn extract_training_pairs<S: Scalar>(
    store1: &Datastore,
    store2: &Datastore,
    alignment: &[(u32, u32)],
) -> Result<PairedContexts<S>> {
    if store1.dim() != store2.dim() {
        return Err(Error::Dimension {
            expected: store1.dim(),
            got: store2.dim(),
        });
    }
    let l1 = single_language(store1)?;
    let l2 = single_language(store2)?;
    let s1 = by_sentence(store1);
    let s2 = by_sentence(store2);
    let d = store1.dim();
    let mut src = Vec::new();
    let mut tgt = Vec::new();
    let mut n = 0;
    for (a, b) in alignment {
        let (Some(ea), Some(eb)) = (s1.get(a), s2.get(b)) else {
            continue;
        };
        if ea.len() != eb.len() {
            continue;
        }
        for (&(ta, tok_a, ia), &(tb, tok_b, ib)) in ea.iter().zip(eb) {
            if ta != tb || tok_a != tok_b {
                continue;
            }
            src.extend(store1.key(ia).iter().map(|&v| S::from_f32_lossy(v)));
            tgt.extend(store2.key(ib).iter().map(|&v| S::from_f32_lossy(v)));
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyPairs);
    }
    let mut pairs = PairedContexts::new(Matrix::from_row_major(n, d, src)?, Matrix::from_row_major(n, d, tgt)?)?;
    pairs.source_lang = Some(l1);
    pairs.target_lang = Some(l2);
    Ok(pairs)
}

/// Replaces every key by `A · key`; values, provenance and order are kept
/// and the index is rebuilt.
pub fn map_datastore<S: Scalar>(store: &Datastore, map: &LinearMap<S>) -> Result<Datastore> {
    if store.dim() != map.dim() {
        return Err(Error::Dimension {
            expected: store.dim(),
            got: map.dim(),
        });
    }
    store.map_keys(|k| map.map_query(k))
}

/// Parses a `sentence_id_src<TAB>sentence_id_tgt` alignment file.
pub fn parse_alignment(text: &str) -> Result<Vec<(u32, u32)>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split('\t');
        let parse = |f: Option<&str>| -> Result<u32> {
            f.and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::parse("alignment", format!("line {}: expected two sentence ids", no + 1)))
        };
        let a = parse(it.next())?;
        let b = parse(it.next())?;
        if it.next().is_some() {
            return Err(Error::parse("alignment", format!("line {}: too many fields", no + 1)));
        }
        out.push((a, b));
    }
    Ok(out)
}

pub fn load_alignment(path: impl AsRef<Path>) -> Result<Vec<(u32, u32)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_alignment(&text)
}

fn write_lang<W: Write>(w: &mut W, l: &LanguageTag) -> std::io::Result<()> {
    w.write_all(&(l.as_str().len() as u32).to_le_bytes())?;
    w.write_all(l.as_str().as_bytes())
}

/// Writes a map in `KLM1` format: magic, u32 d, source and target language
/// codes (u32 length + bytes each), f64 ridge, d × d f32 row-major.
pub fn write_map<S: Scalar, W: Write>(map: &LinearMap<S>, mut w: W) -> Result<()> {
    w.write_all(MAP_MAGIC)?;
    w.write_all(&(map.dim() as u32).to_le_bytes())?;
    write_lang(&mut w, &map.source_lang)?;
    write_lang(&mut w, &map.target_lang)?;
    w.write_all(&map.ridge.to_le_bytes())?;
    for x in map.matrix.as_slice() {
        w.write_all(&x.to_f32().unwrap_or(f32::NAN).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_map<S: Scalar, R: Read>(mut r: R) -> Result<LinearMap<S>> {
    fn take<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        r.read_exact(&mut b)
            .map_err(|_| Error::CorruptFile("truncated map file".into()))?;
        Ok(b)
    }
    fn lang<R: Read>(r: &mut R) -> Result<LanguageTag> {
        let len = u32::from_le_bytes(take(r)?) as usize;
        if len == 0 || len > 256 {
            return Err(Error::CorruptFile("bad language code length".into()));
        }
        let mut b = vec![0u8; len];
        r.read_exact(&mut b)
            .map_err(|_| Error::CorruptFile("truncated map file".into()))?;
        let s = String::from_utf8(b).map_err(|_| Error::CorruptFile("language code not UTF-8".into()))?;
        LanguageTag::new(s).map_err(|e| Error::CorruptFile(e.to_string()))
    }

    if &take::<_, 6>(&mut r)? != MAP_MAGIC {
        return Err(Error::CorruptFile("bad magic bytes".into()));
    }
    let d = u32::from_le_bytes(take(&mut r)?) as usize;
    let source_lang = lang(&mut r)?;
    let target_lang = lang(&mut r)?;
    let ridge = f64::from_le_bytes(take(&mut r)?);
    let mut data = Vec::with_capacity(d * d);
    for _ in 0..d * d {
        data.push(S::from_f32_lossy(f32::from_le_bytes(take(&mut r)?)));
    }
    LinearMap::new(Matrix::from_row_major(d, d, data)?, source_lang, target_lang, ridge)
        .map_err(|e| Error::CorruptFile(e.to_string()))
}

pub fn save_map<S: Scalar>(map: &LinearMap<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_map(map, BufWriter::new(f))
}

pub fn load_map<S: Scalar>(path: impl AsRef<Path>) -> Result<LinearMap<S>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_map(BufReader::new(f))
}
