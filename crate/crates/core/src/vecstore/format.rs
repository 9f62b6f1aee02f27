//! Binary formats: `RDMP1` representation dumps and `KDS1` datastore files.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! RDMP1: "RDMP1\0" u32 dim, u32 vocab_size, u32 len + lang code, u64 count,
//!        count × { u32 sentence_id, u16 timestep, u32 token_id, dim × f32 }
//!
//! KDS1:  "KDS1\0\0" u32 dim, u32 vocab_size,
//!        u32 n_langs, n_langs × { u32 len + lang code, u64 entry count },
//!        u64 count,
//!        count × { u32 sentence_id, u16 timestep, u32 token_id, u16 lang, dim × f32 },
//!        u8 index kind (0 exact-scan, 1 cell-probe), and for cell-probe:
//!        u32 n_cells, u32 n_probe, u32 iterations, u64 max_train (0 = all),
//!        n_cells × dim × f32 centroids, count × u32 cell assignment
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::index::{CellProbeIndex, SearchIndex};
use super::{Datastore, DatastoreBuilder, LanguageTag, ReprRecord};
use crate::error::{Error, Result};

pub const DUMP_MAGIC: &[u8; 6] = b"RDMP1\0";
pub const STORE_MAGIC: &[u8; 6] = b"KDS1\0\0";

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], err: impl Fn(String) -> Error) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            err("unexpected end of file".into())
        } else {
            Error::RawIo(e)
        }
    })
}

macro_rules! reader_fn {
    ($name:ident, $ty:ty) => {
        fn $name<R: Read>(r: &mut R, err: &impl Fn(String) -> Error) -> Result<$ty> {
            let mut b = [0u8; std::mem::size_of::<$ty>()];
            read_exact_or(r, &mut b, err)?;
            Ok(<$ty>::from_le_bytes(b))
        }
    };
}

reader_fn!(read_u8, u8);
reader_fn!(read_u16, u16);
reader_fn!(read_u32, u32);
reader_fn!(read_u64, u64);

fn read_f32s<R: Read>(r: &mut R, n: usize, out: &mut Vec<f32>, err: &impl Fn(String) -> Error) -> Result<()> {
    let mut buf = vec![0u8; n * 4];
    read_exact_or(r, &mut buf, err)?;
    out.extend(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
    Ok(())
}

fn write_f32s<W: Write>(w: &mut W, xs: &[f32]) -> io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_lang<R: Read>(r: &mut R, err: &impl Fn(String) -> Error) -> Result<LanguageTag> {
    let len = read_u32(r, err)? as usize;
    if len == 0 || len > 256 {
        return Err(err(format!("implausible language code length {len}")));
    }
    let mut b = vec![0u8; len];
    read_exact_or(r, &mut b, err)?;
    let s = String::from_utf8(b).map_err(|_| err("language code is not UTF-8".into()))?;
    LanguageTag::new(s).map_err(|e| err(e.to_string()))
}

fn write_lang<W: Write>(w: &mut W, lang: &LanguageTag) -> io::Result<()> {
    w.write_all(&(lang.as_str().len() as u32).to_le_bytes())?;
    w.write_all(lang.as_str().as_bytes())
}

/// Header of an `RDMP1` dump.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpHeader {
    pub dim: usize,
    pub vocab_size: u32,
    pub lang: LanguageTag,
    pub count: u64,
}

/// Streaming reader over an `RDMP1` dump; yields one record per item.
pub struct DumpReader<R> {
    inner: R,
    header: DumpHeader,
    remaining: u64,
    failed: bool,
}

impl DumpReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufReader::new(f))
    }
}

impl<R: Read> DumpReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let err = Error::MalformedDump;
        let mut magic = [0u8; 6];
        read_exact_or(&mut inner, &mut magic, err)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::MalformedDump("bad magic bytes".into()));
        }
        let dim = read_u32(&mut inner, &err)? as usize;
        if dim == 0 {
            return Err(Error::MalformedDump("dimension must be positive".into()));
        }
        let vocab_size = read_u32(&mut inner, &err)?;
        let lang = read_lang(&mut inner, &err)?;
        let count = read_u64(&mut inner, &err)?;
        Ok(Self {
            inner,
            header: DumpHeader {
                dim,
                vocab_size,
                lang,
                count,
            },
            remaining: count,
            failed: false,
        })
    }

    pub fn header(&self) -> &DumpHeader {
        &self.header
    }

    fn read_record(&mut self) -> Result<ReprRecord> {
        let err = Error::MalformedDump;
        let sentence_id = read_u32(&mut self.inner, &err)?;
        let timestep = read_u16(&mut self.inner, &err)?;
        let token_id = read_u32(&mut self.inner, &err)?;
        let mut vector = Vec::with_capacity(self.header.dim);
        read_f32s(&mut self.inner, self.header.dim, &mut vector, &err)?;
        if token_id >= self.header.vocab_size {
            return Err(Error::MalformedDump(format!(
                "token id {token_id} outside vocabulary of size {}",
                self.header.vocab_size
            )));
        }
        Ok(ReprRecord {
            vector,
            token_id,
            sentence_id,
            timestep,
            lang: self.header.lang.clone(),
        })
    }

    /// Reads every remaining record.
    pub fn read_all(self) -> Result<Vec<ReprRecord>> {
        self.collect()
    }
}

impl<R: Read> Iterator for DumpReader<R> {
    type Item = Result<ReprRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 || self.failed {
            return None;
        }
        self.remaining -= 1;
        let r = self.read_record();
        self.failed = r.is_err();
        Some(r)
    }
}

/// Streaming `RDMP1` writer. The record count is fixed up front and
/// checked by [`DumpWriter::finish`].
pub struct DumpWriter<W: Write> {
    inner: W,
    header: DumpHeader,
    written: u64,
}

impl DumpWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, header: DumpHeader) -> Result<Self> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufWriter::new(f), header)
    }
}

impl<W: Write> DumpWriter<W> {
    pub fn new(mut inner: W, header: DumpHeader) -> Result<Self> {
        inner.write_all(DUMP_MAGIC)?;
        inner.write_all(&(header.dim as u32).to_le_bytes())?;
        inner.write_all(&header.vocab_size.to_le_bytes())?;
        write_lang(&mut inner, &header.lang)?;
        inner.write_all(&header.count.to_le_bytes())?;
        Ok(Self {
            inner,
            header,
            written: 0,
        })
    }

    pub fn push(&mut self, rec: &ReprRecord) -> Result<()> {
        if rec.vector.len() != self.header.dim {
            return Err(Error::Dimension {
                expected: self.header.dim,
                got: rec.vector.len(),
            });
        }
        if rec.lang != self.header.lang {
            return Err(Error::InvalidArgument(format!(
                "record language {} in a {} dump",
                rec.lang, self.header.lang
            )));
        }
        if self.written == self.header.count {
            return Err(Error::InvalidArgument("more records than declared".into()));
        }
        self.inner.write_all(&rec.sentence_id.to_le_bytes())?;
        self.inner.write_all(&rec.timestep.to_le_bytes())?;
        self.inner.write_all(&rec.token_id.to_le_bytes())?;
        write_f32s(&mut self.inner, &rec.vector)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.header.count {
            return Err(Error::InvalidArgument(format!(
                "declared {} records, wrote {}",
                self.header.count, self.written
            )));
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Writes a datastore in `KDS1` format.
pub fn write_datastore<W: Write>(store: &Datastore, mut w: W) -> Result<()> {
    w.write_all(STORE_MAGIC)?;
    w.write_all(&(store.dim as u32).to_le_bytes())?;
    w.write_all(&store.vocab_size.to_le_bytes())?;
    w.write_all(&(store.languages.len() as u32).to_le_bytes())?;
    for (lang, count) in &store.languages {
        write_lang(&mut w, lang)?;
        w.write_all(&count.to_le_bytes())?;
    }
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for i in 0..store.len() {
        w.write_all(&store.sentence_ids[i].to_le_bytes())?;
        w.write_all(&store.timesteps[i].to_le_bytes())?;
        w.write_all(&store.token_ids[i].to_le_bytes())?;
        w.write_all(&store.lang_index[i].to_le_bytes())?;
        write_f32s(&mut w, store.key(i))?;
    }
    match &store.index {
        SearchIndex::ExactScan => w.write_all(&[0u8])?,
        SearchIndex::CellProbe(c) => {
            w.write_all(&[1u8])?;
            w.write_all(&(c.n_cells() as u32).to_le_bytes())?;
            w.write_all(&(c.n_probe as u32).to_le_bytes())?;
            w.write_all(&(c.iterations as u32).to_le_bytes())?;
            w.write_all(&(c.max_train.unwrap_or(0) as u64).to_le_bytes())?;
            write_f32s(&mut w, &c.centroids)?;
            for a in c.assignments(store.len()) {
                w.write_all(&a.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a `KDS1` datastore.
pub fn read_datastore<R: Read>(mut r: R) -> Result<Datastore> {
    let err = Error::CorruptFile;
    let mut magic = [0u8; 6];
    read_exact_or(&mut r, &mut magic, err)?;
    if &magic != STORE_MAGIC {
        return Err(Error::CorruptFile("bad magic bytes".into()));
    }
    let dim = read_u32(&mut r, &err)? as usize;
    let vocab_size = read_u32(&mut r, &err)?;
    if dim == 0 {
        return Err(Error::CorruptFile("zero dimension".into()));
    }
    let n_langs = read_u32(&mut r, &err)? as usize;
    let mut table = Vec::with_capacity(n_langs.min(1024));
    for _ in 0..n_langs {
        let lang = read_lang(&mut r, &err)?;
        let count = read_u64(&mut r, &err)?;
        table.push((lang, count));
    }
    let count = read_u64(&mut r, &err)?;
    let declared: u64 = table.iter().map(|(_, c)| c).sum();
    if declared != count {
        return Err(Error::CorruptFile(format!(
            "provenance table sums to {declared}, header declares {count}"
        )));
    }

    let mut builder = DatastoreBuilder::new(dim, vocab_size)?;
    let mut key = Vec::with_capacity(dim);
    for _ in 0..count {
        let sentence_id = read_u32(&mut r, &err)?;
        let timestep = read_u16(&mut r, &err)?;
        let token_id = read_u32(&mut r, &err)?;
        let lang = read_u16(&mut r, &err)? as usize;
        key.clear();
        read_f32s(&mut r, dim, &mut key, &err)?;
        let lang = &table
            .get(lang)
            .ok_or_else(|| Error::CorruptFile(format!("language index {lang} out of range")))?
            .0;
        builder
            .push_parts(&key, token_id, sentence_id, timestep, lang)
            .map_err(|e| Error::CorruptFile(e.to_string()))?;
    }
    if builder.languages != table {
        return Err(Error::CorruptFile("provenance table does not match entries".into()));
    }
    if builder.is_empty() {
        return Err(Error::CorruptFile("store has no entries".into()));
    }

    let index = match read_u8(&mut r, &err)? {
        0 => SearchIndex::ExactScan,
        1 => {
            let n_cells = read_u32(&mut r, &err)? as usize;
            let n_probe = read_u32(&mut r, &err)? as usize;
            let iterations = read_u32(&mut r, &err)? as usize;
            let max_train = match read_u64(&mut r, &err)? {
                0 => None,
                m => Some(m as usize),
            };
            let mut centroids = Vec::new();
            read_f32s(&mut r, n_cells * dim, &mut centroids, &err)?;
            let mut assignments = Vec::with_capacity(count as usize);
            for _ in 0..count {
                assignments.push(read_u32(&mut r, &err)?);
            }
            SearchIndex::CellProbe(
                CellProbeIndex::from_assignments(dim, centroids, &assignments, n_probe, iterations, max_train)
                    .ok_or_else(|| Error::CorruptFile("cell assignment out of range".into()))?,
            )
        }
        k => return Err(Error::CorruptFile(format!("unknown index kind {k}"))),
    };
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::CorruptFile("trailing bytes after index".into()));
    }

    Ok(Datastore {
        dim: builder.dim,
        vocab_size: builder.vocab_size,
        keys: builder.keys,
        token_ids: builder.token_ids,
        sentence_ids: builder.sentence_ids,
        timesteps: builder.timesteps,
        lang_index: builder.lang_index,
        languages: builder.languages,
        index,
    })
}

pub fn save_datastore(store: &Datastore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_datastore(store, BufWriter::new(f))
}

pub fn load_datastore(path: impl AsRef<Path>) -> Result<Datastore> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_datastore(BufReader::new(f))
}
