//! Synthetic multilingual, multi-parallel corpora.
//!
//! Every sentence is a sequence of distinct concepts. The pivot language
//! writes concept `c` as `<pivot>_c`. Languages are grouped into families;
//! a language uses its family's word `f<family>_c` for a concept with a
//! language-specific probability and its own word `<lang>_c` otherwise, so
//! languages of one family share part of their vocabulary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use polyknn::text::Vocab;
use polyknn::LanguageTag;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct ToyParams {
    pub langs: Vec<String>,
    pub pivot: String,
    pub families: usize,
    pub concepts: usize,
    pub pool: usize,
    pub train_min: usize,
    pub train_max: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self {
            langs: ["xa", "xb", "xc", "xd", "xe", "xf"].map(String::from).to_vec(),
            pivot: "en".into(),
            families: 2,
            concepts: 40,
            pool: 1500,
            train_min: 200,
            train_max: 1200,
            test: 80,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ToyLanguage {
    pub code: String,
    pub family: usize,
    /// Probability of using the family word for a concept.
    pub share: f64,
    #[serde(skip)]
    pub words: Vec<String>,
    /// Indices into the sentence pool, in corpus order.
    pub train: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ToyWorld {
    pub params: ToyParams,
    pub languages: Vec<ToyLanguage>,
    #[serde(skip)]
    pub pool: Vec<Vec<usize>>,
    #[serde(skip)]
    pub test: Vec<Vec<usize>>,
}

fn sentence(rng: &mut impl Rng, concepts: usize) -> Vec<usize> {
    let len = rng.gen_range(3..=8.min(concepts));
    let all: Vec<usize> = (0..concepts).collect();
    all.choose_multiple(rng, len).copied().collect()
}

impl ToyWorld {
    pub fn generate(params: ToyParams) -> Result<Self> {
        if params.langs.is_empty() {
            bail!(crate::InputError("at least one language is required".into()));
        }
        for l in params.langs.iter().chain(std::iter::once(&params.pivot)) {
            LanguageTag::new(l.as_str()).map_err(|e| crate::InputError(e.to_string()))?;
        }
        if params.families == 0 || params.concepts < 3 || params.train_min == 0 || params.train_min > params.train_max {
            bail!(crate::InputError("need families ≥ 1, concepts ≥ 3 and 1 ≤ train-min ≤ train-max".into()));
        }
        if params.train_max > params.pool {
            bail!(crate::InputError("train-max exceeds the sentence pool".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let pool: Vec<Vec<usize>> = (0..params.pool).map(|_| sentence(&mut rng, params.concepts)).collect();
        let test: Vec<Vec<usize>> = (0..params.test).map(|_| sentence(&mut rng, params.concepts)).collect();
        let mut languages = Vec::new();
        for (i, code) in params.langs.iter().enumerate() {
            let family = i % params.families;
            let share = rng.gen_range(0.4..0.95);
            let words = (0..params.concepts)
                .map(|c| {
                    if rng.gen_bool(share) {
                        format!("f{family}_{c}")
                    } else {
                        format!("{code}_{c}")
                    }
                })
                .collect();
            let n = rng.gen_range(params.train_min..=params.train_max);
            let idx: Vec<usize> = (0..params.pool).collect();
            let mut train: Vec<usize> = idx.choose_multiple(&mut rng, n).copied().collect();
            train.sort_unstable();
            languages.push(ToyLanguage {
                code: code.clone(),
                family,
                share,
                words,
                train,
            });
        }
        Ok(Self {
            params,
            languages,
            pool,
            test,
        })
    }

    pub fn vocab(&self) -> Vocab {
        let c = self.params.concepts;
        let mut tokens: Vec<String> = (0..c).map(|i| format!("{}_{i}", self.params.pivot)).collect();
        for f in 0..self.params.families {
            tokens.extend((0..c).map(|i| format!("f{f}_{i}")));
        }
        for l in &self.languages {
            tokens.extend((0..c).map(|i| format!("{}_{i}", l.code)));
        }
        Vocab::from_tokens(tokens)
    }

    pub fn pivot_line(&self, concepts: &[usize]) -> String {
        let words: Vec<String> = concepts.iter().map(|c| format!("{}_{c}", self.params.pivot)).collect();
        words.join(" ")
    }

    pub fn source_line(&self, lang: &ToyLanguage, concepts: &[usize]) -> String {
        let words: Vec<&str> = concepts.iter().map(|&c| lang.words[c].as_str()).collect();
        words.join(" ")
    }

    /// (source, pivot) lines of a language's training corpus.
    pub fn train_lines(&self, lang: &ToyLanguage) -> (Vec<String>, Vec<String>) {
        lang.train
            .iter()
            .map(|&i| (self.source_line(lang, &self.pool[i]), self.pivot_line(&self.pool[i])))
            .unzip()
    }

    /// Pairs of corpus line numbers that translate the same pool sentence.
    pub fn alignment(&self, a: &ToyLanguage, b: &ToyLanguage) -> Vec<(usize, usize)> {
        let pos: BTreeMap<usize, usize> = b.train.iter().enumerate().map(|(j, &p)| (p, j)).collect();
        a.train
            .iter()
            .enumerate()
            .filter_map(|(i, p)| pos.get(p).map(|&j| (i, j)))
            .collect()
    }

    /// Linguistic distances: genetic from the family tree, the others from
    /// vocabulary sharing with seeded jitter.
    pub fn distances_tsv(&self) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed ^ 0xD15);
        let mut s = String::from("lang1\tlang2\tgeographic\tgenetic\tinventory\tsyntactic\tphonological\n");
        for (i, a) in self.languages.iter().enumerate() {
            for b in &self.languages[i + 1..] {
                let same = a.family == b.family;
                let shared = a.words.iter().zip(&b.words).filter(|(x, y)| x == y).count() as f64
                    / self.params.concepts as f64;
                let mut jitter = |base: f64| (base + rng.gen_range(-0.1..0.1)).clamp(0.0, 1.0);
                let genetic = if same { 0.2 } else { 0.9 };
                let geo = jitter(if same { 0.3 } else { 0.7 });
                let inv = jitter(1.0 - shared);
                let syn = jitter(1.0 - shared);
                let pho = jitter(genetic);
                let _ = writeln!(s, "{}\t{}\t{geo:.4}\t{genetic:.4}\t{inv:.4}\t{syn:.4}\t{pho:.4}", a.code, b.code);
            }
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut written = Vec::new();
        let mut put = |name: String, body: String| -> Result<()> {
            let p = dir.join(&name);
            std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
            written.push(name);
            Ok(())
        };
        let lines = |v: Vec<String>| v.iter().map(|l| format!("{l}\n")).collect::<String>();
        let pivot = &self.params.pivot;

        put("vocab.txt".into(), self.vocab().to_file_string())?;
        for l in &self.languages {
            let (src, tgt) = self.train_lines(l);
            put(format!("train-{}.{}", l.code, l.code), lines(src))?;
            put(format!("train-{}.{pivot}", l.code), lines(tgt))?;
            put(
                format!("test.{}", l.code),
                lines(self.test.iter().map(|s| self.source_line(l, s)).collect()),
            )?;
        }
        put(
            format!("test.{pivot}"),
            lines(self.test.iter().map(|s| self.pivot_line(s)).collect()),
        )?;
        for (i, a) in self.languages.iter().enumerate() {
            for b in &self.languages[i + 1..] {
                let body: String = self.alignment(a, b).iter().map(|(x, y)| format!("{x}\t{y}\n")).collect();
                put(format!("align-{}-{}.tsv", a.code, b.code), body)?;
            }
        }
        put("distances.tsv".into(), self.distances_tsv())?;
        put("toy.json".into(), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_world() {
        let a = ToyWorld::generate(ToyParams::default()).unwrap();
        let b = ToyWorld::generate(ToyParams::default()).unwrap();
        assert_eq!(a.pool, b.pool);
        assert_eq!(a.train_lines(&a.languages[2]), b.train_lines(&b.languages[2]));
        let c = ToyWorld::generate(ToyParams {
            seed: 2,
            ..ToyParams::default()
        })
        .unwrap();
        assert_ne!(a.pool, c.pool);
    }

    #[test]
    fn every_line_encodes() {
        let w = ToyWorld::generate(ToyParams::default()).unwrap();
        let v = w.vocab();
        for l in &w.languages {
            let (src, tgt) = w.train_lines(l);
            for line in src.iter().chain(&tgt) {
                v.encode(line).unwrap();
            }
        }
    }

    #[test]
    fn alignment_points_at_same_pool_sentence() {
        let w = ToyWorld::generate(ToyParams::default()).unwrap();
        let (a, b) = (&w.languages[0], &w.languages[1]);
        let al = w.alignment(a, b);
        assert!(!al.is_empty());
        for (i, j) in al {
            assert_eq!(a.train[i], b.train[j]);
        }
    }
}
