//! Key–value datastores of decoder context vectors.
//!
//! A [`Datastore`] maps context vectors (keys) to the target token that
//! followed them (values) and remembers which source language produced each
//! entry. Stores are immutable once built; [`merge_datastores`] and
//! [`crate::align::map_datastore`] produce new stores.

mod format;
mod index;
mod lang;

use std::collections::BTreeMap;

pub use format::{load_datastore, save_datastore, DumpHeader, DumpReader, DumpWriter, DUMP_MAGIC, STORE_MAGIC};
pub use index::{squared_l2, CellProbeIndex, IndexSpec, SearchIndex};
pub use lang::LanguageTag;

use crate::error::{Error, Result};

pub type TokenId = u32;

/// One dumped translation context: the decoder state before emitting
/// `token_id` at position `timestep` of sentence `sentence_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprRecord {
    pub vector: Vec<f32>,
    pub token_id: TokenId,
    pub sentence_id: u32,
    pub timestep: u16,
    pub lang: LanguageTag,
}

/// A retrieved entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub entry_index: usize,
    /// Squared L2 distance to the query.
    pub distance: f64,
    pub token_id: TokenId,
    pub lang: LanguageTag,
}

/// Borrowed view of one stored entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryRef<'a> {
    pub key: &'a [f32],
    pub token_id: TokenId,
    pub sentence_id: u32,
    pub timestep: u16,
    pub lang: &'a LanguageTag,
}

impl EntryRef<'_> {
    pub fn to_record(&self) -> ReprRecord {
        ReprRecord {
            vector: self.key.to_vec(),
            token_id: self.token_id,
            sentence_id: self.sentence_id,
            timestep: self.timestep,
            lang: self.lang.clone(),
        }
    }
}

/// Immutable datastore with per-entry language provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Datastore {
    dim: usize,
    vocab_size: u32,
    keys: Vec<f32>,
    token_ids: Vec<TokenId>,
    sentence_ids: Vec<u32>,
    timesteps: Vec<u16>,
    lang_index: Vec<u16>,
    /// Provenance table in first-seen order.
    languages: Vec<(LanguageTag, u64)>,
    index: SearchIndex,
}

/// Accumulates records before the index is built.
#[derive(Debug, Clone)]
pub struct DatastoreBuilder {
    dim: usize,
    vocab_size: u32,
    keys: Vec<f32>,
    token_ids: Vec<TokenId>,
    sentence_ids: Vec<u32>,
    timesteps: Vec<u16>,
    lang_index: Vec<u16>,
    languages: Vec<(LanguageTag, u64)>,
}

impl DatastoreBuilder {
    pub fn new(dim: usize, vocab_size: u32) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("datastore dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            vocab_size,
            keys: Vec::new(),
            token_ids: Vec::new(),
            sentence_ids: Vec::new(),
            timesteps: Vec::new(),
            lang_index: Vec::new(),
            languages: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    fn lang_slot(&mut self, lang: &LanguageTag) -> Result<u16> {
        if let Some(pos) = self.languages.iter().position(|(l, _)| l == lang) {
            return Ok(pos as u16);
        }
        if self.languages.len() >= u16::MAX as usize {
            return Err(Error::InvalidArgument("too many languages in one store".into()));
        }
        self.languages.push((lang.clone(), 0));
        Ok((self.languages.len() - 1) as u16)
    }

    /// Adds one entry without building a [`ReprRecord`].
    pub fn push_parts(
        &mut self,
        key: &[f32],
        token_id: TokenId,
        sentence_id: u32,
        timestep: u16,
        lang: &LanguageTag,
    ) -> Result<()> {
        if key.len() != self.dim {
            return Err(Error::MalformedDump(format!(
                "record of length {} in a dimension-{} stream",
                key.len(),
                self.dim
            )));
        }
        if token_id >= self.vocab_size {
            return Err(Error::MalformedDump(format!(
                "token id {token_id} outside vocabulary of size {}",
                self.vocab_size
            )));
        }
        if key.iter().any(|x| !x.is_finite()) {
            return Err(Error::MalformedDump("non-finite vector component".into()));
        }
        let slot = self.lang_slot(lang)?;
        self.languages[slot as usize].1 += 1;
        self.keys.extend_from_slice(key);
        self.token_ids.push(token_id);
        self.sentence_ids.push(sentence_id);
        self.timesteps.push(timestep);
        self.lang_index.push(slot);
        Ok(())
    }

    pub fn push(&mut self, record: &ReprRecord) -> Result<()> {
        self.push_parts(
            &record.vector,
            record.token_id,
            record.sentence_id,
            record.timestep,
            &record.lang,
        )
    }

    pub fn build(self, spec: IndexSpec) -> Result<Datastore> {
        if self.token_ids.is_empty() {
            return Err(Error::EmptyDatastore);
        }
        let index = make_index(&self.keys, self.dim, spec)?;
        Ok(Datastore {
            dim: self.dim,
            vocab_size: self.vocab_size,
            keys: self.keys,
            token_ids: self.token_ids,
            sentence_ids: self.sentence_ids,
            timesteps: self.timesteps,
            lang_index: self.lang_index,
            languages: self.languages,
            index,
        })
    }
}

fn make_index(keys: &[f32], dim: usize, spec: IndexSpec) -> Result<SearchIndex> {
    match spec {
        IndexSpec::ExactScan => Ok(SearchIndex::ExactScan),
        IndexSpec::CellProbe {
            n_cells,
            n_probe,
            iterations,
            max_train,
        } => {
            if n_cells == 0 || n_probe == 0 {
                return Err(Error::InvalidArgument(
                    "cell-probe index needs n_cells >= 1 and n_probe >= 1".into(),
                ));
            }
            Ok(SearchIndex::CellProbe(index::build_cell_probe(
                keys, dim, n_cells, n_probe, iterations, max_train,
            )))
        }
    }
}

/// Builds a datastore from a representation dump, one entry per record in
/// input order.
pub fn build_datastore<R: std::io::Read>(dump: DumpReader<R>, spec: IndexSpec) -> Result<Datastore> {
    let header = dump.header().clone();
    let mut builder = DatastoreBuilder::new(header.dim, header.vocab_size)?;
    for rec in dump {
        builder.push(&rec?)?;
    }
    builder.build(spec)
}

/// Concatenates stores in the given order and rebuilds the index.
///
/// Duplicate (key, token) pairs coming from different stores are kept.
pub fn merge_datastores(stores: &[&Datastore], spec: IndexSpec) -> Result<Datastore> {
    let first = stores.first().ok_or(Error::EmptyInput("no stores to merge"))?;
    let dim = first.dim;
    if let Some(bad) = stores.iter().find(|s| s.dim != dim) {
        return Err(Error::IncompatibleStores(format!(
            "dimension {} vs {}",
            dim, bad.dim
        )));
    }
    let vocab = stores.iter().map(|s| s.vocab_size).max().unwrap_or(0);
    let mut builder = DatastoreBuilder::new(dim, vocab)?;
    for store in stores {
        for i in 0..store.len() {
            let e = store.entry(i);
            builder.push_parts(e.key, e.token_id, e.sentence_id, e.timestep, e.lang)?;
        }
    }
    builder.build(spec)
}

impl Datastore {
    pub fn builder(dim: usize, vocab_size: u32) -> Result<DatastoreBuilder> {
        DatastoreBuilder::new(dim, vocab_size)
    }

    pub fn from_records(
        dim: usize,
        vocab_size: u32,
        records: &[ReprRecord],
        spec: IndexSpec,
    ) -> Result<Self> {
        let mut b = DatastoreBuilder::new(dim, vocab_size)?;
        for r in records {
            b.push(r)?;
        }
        b.build(spec)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn index(&self) -> &SearchIndex {
        &self.index
    }

    pub fn index_spec(&self) -> IndexSpec {
        match &self.index {
            SearchIndex::ExactScan => IndexSpec::ExactScan,
            SearchIndex::CellProbe(c) => IndexSpec::CellProbe {
                n_cells: c.n_cells(),
                n_probe: c.n_probe,
                iterations: c.iterations,
                max_train: c.max_train,
            },
        }
    }

    /// Per-language entry counts in first-seen order.
    pub fn languages(&self) -> &[(LanguageTag, u64)] {
        &self.languages
    }

    pub fn language_counts(&self) -> BTreeMap<LanguageTag, u64> {
        self.languages.iter().cloned().collect()
    }

    pub fn keys(&self) -> &[f32] {
        &self.keys
    }

    pub fn key(&self, i: usize) -> &[f32] {
        &self.keys[i * self.dim..(i + 1) * self.dim]
    }

    pub fn entry(&self, i: usize) -> EntryRef<'_> {
        EntryRef {
            key: self.key(i),
            token_id: self.token_ids[i],
            sentence_id: self.sentence_ids[i],
            timestep: self.timesteps[i],
            lang: &self.languages[self.lang_index[i] as usize].0,
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = EntryRef<'_>> + '_ {
        (0..self.len()).map(|i| self.entry(i))
    }

    pub fn lang_of(&self, i: usize) -> &LanguageTag {
        &self.languages[self.lang_index[i] as usize].0
    }

    /// Returns a copy of this store with the same entries and a new index.
    pub fn reindex(&self, spec: IndexSpec) -> Result<Self> {
        let index = make_index(&self.keys, self.dim, spec)?;
        Ok(Self {
            index,
            ..self.clone()
        })
    }

    /// Rebuilds the store with every key replaced by `f(key)`. Values,
    /// provenance and order are unchanged; the index is rebuilt with the
    /// same spec.
    pub fn map_keys<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f32]) -> Result<Vec<f32>>,
    {
        let mut keys = Vec::with_capacity(self.keys.len());
        for key in self.keys.chunks_exact(self.dim) {
            let mapped = f(key)?;
            if mapped.len() != self.dim {
                return Err(Error::Dimension {
                    expected: self.dim,
                    got: mapped.len(),
                });
            }
            keys.extend(mapped);
        }
        let index = make_index(&keys, self.dim, self.index_spec())?;
        Ok(Self {
            keys,
            index,
            ..self.clone()
        })
    }

    fn check_query(&self, q: &[f32]) -> Result<()> {
        if q.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: q.len(),
            });
        }
        Ok(())
    }

    fn neighbors(&self, hits: Vec<(u32, f64)>) -> Vec<Neighbor> {
        hits.into_iter()
            .map(|(i, distance)| {
                let i = i as usize;
                Neighbor {
                    entry_index: i,
                    distance,
                    token_id: self.token_ids[i],
                    lang: self.lang_of(i).clone(),
                }
            })
            .collect()
    }

    fn search(&self, q: &[f32], k: usize, allow: &dyn Fn(usize) -> bool) -> Vec<(u32, f64)> {
        match &self.index {
            SearchIndex::ExactScan => index::exact_search(&self.keys, self.dim, q, k, allow),
            SearchIndex::CellProbe(c) => index::cell_probe_search(c, &self.keys, q, k, allow),
        }
    }

    /// The `k` nearest entries to `q` by squared L2 distance, ascending,
    /// ties broken by lower entry index.
    pub fn query(&self, q: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        self.check_query(q)?;
        if k == 0 {
            return Err(Error::InvalidArgument("k must be positive".into()));
        }
        if k > self.len() {
            return Err(Error::InsufficientEntries {
                requested: k,
                available: self.len(),
            });
        }
        Ok(self.neighbors(self.search(q, k, &|_| true)))
    }

    /// Like [`Datastore::query`] but only over entries whose language is in
    /// `langs`. Returns fewer than `k` neighbors (possibly none) when the
    /// filter leaves too few candidates.
    pub fn query_languages(&self, q: &[f32], k: usize, langs: &[LanguageTag]) -> Result<Vec<Neighbor>> {
        self.check_query(q)?;
        if k == 0 {
            return Err(Error::InvalidArgument("k must be positive".into()));
        }
        let allowed: Vec<bool> = self
            .languages
            .iter()
            .map(|(l, _)| langs.contains(l))
            .collect();
        let allow = |i: usize| allowed[self.lang_index[i] as usize];
        Ok(self.neighbors(self.search(q, k, &allow)))
    }
}

/// Retrieval share of one language relative to its share of the store.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ProvenanceRow {
    pub lang: LanguageTag,
    pub retrieved: u64,
    pub entries: u64,
    /// Fraction of all retrieved neighbors coming from this language.
    pub p_obs: f64,
    /// Fraction of store entries coming from this language.
    pub p_uni: f64,
    /// `p_obs / p_uni`.
    pub ratio: f64,
}

/// Observed-vs-uniform retrieval provenance over a batch of queries.
pub fn provenance_stats(store: &Datastore, queries: &[(&[f32], usize)]) -> Result<Vec<ProvenanceRow>> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("no queries"));
    }
    if store.is_empty() {
        return Err(Error::EmptyDatastore);
    }
    let mut retrieved = vec![0u64; store.languages.len()];
    let mut total = 0u64;
    for (q, k) in queries {
        for n in store.query(q, *k)? {
            retrieved[store.lang_index[n.entry_index] as usize] += 1;
            total += 1;
        }
    }
    let n = store.len() as f64;
    Ok(store
        .languages
        .iter()
        .zip(retrieved)
        .map(|((lang, count), got)| {
            let p_obs = got as f64 / total as f64;
            let p_uni = *count as f64 / n;
            ProvenanceRow {
                lang: lang.clone(),
                retrieved: got,
                entries: *count,
                p_obs,
                p_uni,
                ratio: p_obs / p_uni,
            }
        })
        .collect())
}
