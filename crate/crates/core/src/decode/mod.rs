//! kNN-augmented decoding.
//!
//! At every step the decoder featurizes the current context, optionally maps
//! the query vector into the datastore's space, retrieves neighbours and
//! mixes the resulting distribution with the base model's:
//!
//! ```text
//! p_knn(v) ∝ Σ_{(k_j, v_j) ∈ N, v_j = v} exp(-d_j / T)
//! p(v)     = λ · p_knn(v) + (1 - λ) · p_base(v)
//! ```

mod beam;
mod toy;

pub use beam::BeamHypothesis;
pub use toy::{hashed_embedding, ToyModel, FEATURE_SEED};

use crate::error::{Error, Result};
use crate::text::EOS;
use crate::vecstore::{Datastore, LanguageTag, Neighbor, TokenId};

/// Probabilities are floored at this value before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

/// Probability vector over a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabDistribution {
    probs: Vec<f64>,
}

impl VocabDistribution {
    const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyInput("empty distribution"));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument("negative or non-finite probability".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!("probabilities sum to {sum}")));
        }
        Ok(Self { probs })
    }

    /// Normalises non-negative weights.
    pub fn from_weights(mut weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::InvalidArgument("weights do not sum to a positive value".into()));
        }
        for w in &mut weights {
            *w /= sum;
        }
        Self::new(weights)
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn one_hot(n: usize, token: TokenId) -> Self {
        let mut probs = vec![0.0; n];
        probs[token as usize] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs.get(token as usize).copied().unwrap_or(0.0)
    }

    /// Floored log probability.
    pub fn log_prob(&self, token: TokenId) -> f64 {
        self.prob(token).max(LOG_FLOOR).ln()
    }

    /// Token with the highest floored log probability; lowest id on ties.
    pub fn argmax(&self) -> TokenId {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, &p) in self.probs.iter().enumerate() {
            let lp = p.max(LOG_FLOOR).ln();
            if lp > best.0 {
                best = (lp, i);
            }
        }
        best.1 as TokenId
    }

    pub fn max_prob(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }
}

/// Retrieval hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnConfig {
    pub k: usize,
    pub lambda: f64,
    pub temperature: f64,
}

impl KnnConfig {
    /// Neighbour counts searched when tuning.
    pub const K_GRID: [usize; 3] = [16, 32, 64];
    /// Interpolation weights searched when tuning.
    pub const LAMBDA_GRID: [f64; 6] = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
    /// Softmax temperatures searched when tuning.
    pub const TEMPERATURE_GRID: [f64; 2] = [10.0, 100.0];

    pub fn new(k: usize, lambda: f64, temperature: f64) -> Result<Self> {
        let cfg = Self {
            k,
            lambda,
            temperature,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Every (k, λ, T) combination of the tuning grids.
    pub fn grid() -> Vec<KnnConfig> {
        let mut out = Vec::new();
        for &k in &Self::K_GRID {
            for &lambda in &Self::LAMBDA_GRID {
                for &temperature in &Self::TEMPERATURE_GRID {
                    out.push(KnnConfig {
                        k,
                        lambda,
                        temperature,
                    });
                }
            }
        }
        out
    }
}

/// Temperature softmax over negative distances, aggregated per token.
/// Tokens absent from `neighbors` get exactly zero mass.
pub fn knn_distribution(neighbors: &[Neighbor], temperature: f64, vocab_size: usize) -> Result<VocabDistribution> {
    if neighbors.is_empty() {
        return Err(Error::EmptyRetrieval);
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    // shifting by the smallest distance leaves the softmax unchanged
    let d_min = neighbors.iter().map(|n| n.distance).fold(f64::INFINITY, f64::min);
    let mut w = vec![0.0; vocab_size];
    for n in neighbors {
        let slot = w.get_mut(n.token_id as usize).ok_or_else(|| {
            Error::InvalidArgument(format!("token {} outside vocabulary of size {vocab_size}", n.token_id))
        })?;
        *slot += (-(n.distance - d_min) / temperature).exp();
    }
    VocabDistribution::from_weights(w)
}

/// `λ · p_knn + (1 − λ) · p_base`. The endpoints return the respective
/// input unchanged.
pub fn interpolate(p_knn: &VocabDistribution, p_base: &VocabDistribution, lambda: f64) -> Result<VocabDistribution> {
    if p_knn.len() != p_base.len() {
        return Err(Error::Dimension {
            expected: p_base.len(),
            got: p_knn.len(),
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} outside [0, 1]")));
    }
    if lambda == 0.0 {
        return Ok(p_base.clone());
    }
    if lambda == 1.0 {
        return Ok(p_knn.clone());
    }
    let probs = p_knn
        .probs
        .iter()
        .zip(&p_base.probs)
        .map(|(&a, &b)| b + lambda * (a - b))
        .collect();
    Ok(VocabDistribution { probs })
}

/// A translation model queried one step at a time.
///
/// Implementations must be deterministic and safe to share across threads.
pub trait BaseModel: Sync {
    fn vocab_size(&self) -> usize;

    /// Dimension of [`BaseModel::featurize`] vectors.
    fn dim(&self) -> usize;

    fn eos(&self) -> TokenId {
        EOS
    }

    fn next_distribution(&self, source: &[TokenId], prefix: &[TokenId]) -> VocabDistribution;

    fn featurize(&self, source: &[TokenId], prefix: &[TokenId]) -> Vec<f32>;
}

/// Maps a query vector from the decoding language's space into the
/// datastore's space.
pub trait QueryMap: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn map_query(&self, v: &[f32]) -> Result<Vec<f32>>;
}

/// Datastore access used while decoding.
#[derive(Clone, Copy)]
pub struct Retrieval<'a> {
    pub store: &'a Datastore,
    pub map: Option<&'a dyn QueryMap>,
    /// Restricts retrieval to these source languages when set.
    pub languages: Option<&'a [LanguageTag]>,
}

impl<'a> Retrieval<'a> {
    pub fn new(store: &'a Datastore) -> Self {
        Self {
            store,
            map: None,
            languages: None,
        }
    }

    pub fn with_map(mut self, map: &'a dyn QueryMap) -> Self {
        self.map = Some(map);
        self
    }

    pub fn with_languages(mut self, languages: &'a [LanguageTag]) -> Self {
        self.languages = Some(languages);
        self
    }
}

/// Base model plus optional retrieval under one configuration.
pub struct KnnDecoder<'a, M: BaseModel + ?Sized> {
    model: &'a M,
    retrieval: Option<Retrieval<'a>>,
    cfg: KnnConfig,
}

impl<'a, M: BaseModel + ?Sized> KnnDecoder<'a, M> {
    pub fn new(model: &'a M, retrieval: Option<Retrieval<'a>>, cfg: KnnConfig) -> Result<Self> {
        cfg.validate()?;
        if let Some(r) = &retrieval {
            let query_dim = match r.map {
                Some(m) => {
                    if m.input_dim() != model.dim() {
                        return Err(Error::Dimension {
                            expected: model.dim(),
                            got: m.input_dim(),
                        });
                    }
                    m.output_dim()
                }
                None => model.dim(),
            };
            if r.store.dim() != query_dim {
                return Err(Error::Dimension {
                    expected: query_dim,
                    got: r.store.dim(),
                });
            }
        }
        Ok(Self { model, retrieval, cfg })
    }

    pub fn config(&self) -> &KnnConfig {
        &self.cfg
    }

    /// Neighbours for the current context; empty when there is no store.
    pub fn retrieve(&self, source: &[TokenId], prefix: &[TokenId]) -> Result<Vec<Neighbor>> {
        let Some(r) = &self.retrieval else {
            return Ok(Vec::new());
        };
        let mut q = self.model.featurize(source, prefix);
        if let Some(m) = r.map {
            q = m.map_query(&q)?;
        }
        let k = self.cfg.k.min(r.store.len());
        match r.languages {
            Some(langs) => r.store.query_languages(&q, k, langs),
            None => r.store.query(&q, k),
        }
    }

    /// The interpolated next-token distribution. Falls back to the base
    /// distribution when retrieval is disabled, λ is 0 or nothing was
    /// retrieved.
    pub fn step_distribution(&self, source: &[TokenId], prefix: &[TokenId]) -> Result<VocabDistribution> {
        let base = self.model.next_distribution(source, prefix);
        if self.retrieval.is_none() || self.cfg.lambda == 0.0 {
            return Ok(base);
        }
        let neighbors = self.retrieve(source, prefix)?;
        match knn_distribution(&neighbors, self.cfg.temperature, self.model.vocab_size()) {
            Ok(p_knn) => interpolate(&p_knn, &base, self.cfg.lambda),
            Err(Error::EmptyRetrieval) => Ok(base),
            Err(e) => Err(e),
        }
    }

    /// Greedy decoding: arg-max token at every step until EOS or `max_len`
    /// tokens. The returned tokens exclude EOS.
    pub fn greedy(&self, source: &[TokenId], max_len: usize) -> Result<BeamHypothesis> {
        if max_len == 0 {
            return Err(Error::InvalidArgument("max_len must be at least 1".into()));
        }
        let eos = self.model.eos();
        let mut tokens = Vec::new();
        let mut log_score = 0.0;
        for _ in 0..max_len {
            let dist = self.step_distribution(source, &tokens)?;
            let next = dist.argmax();
            log_score += dist.log_prob(next);
            if next == eos {
                return Ok(BeamHypothesis {
                    tokens,
                    log_score,
                    finished: true,
                });
            }
            tokens.push(next);
        }
        Ok(BeamHypothesis {
            tokens,
            log_score,
            finished: false,
        })
    }

    pub fn beam(&self, source: &[TokenId], beam_size: usize, max_len: usize) -> Result<BeamHypothesis> {
        beam::beam_search(self, source, beam_size, max_len)
    }
}

/// Greedy kNN-augmented decoding of one source sentence.
pub fn decode_greedy<M: BaseModel + ?Sized>(
    model: &M,
    retrieval: Option<Retrieval<'_>>,
    cfg: KnnConfig,
    source: &[TokenId],
    max_len: usize,
) -> Result<Vec<TokenId>> {
    Ok(KnnDecoder::new(model, retrieval, cfg)?.greedy(source, max_len)?.tokens)
}

/// Beam-search kNN-augmented decoding of one source sentence.
pub fn decode_beam<M: BaseModel + ?Sized>(
    model: &M,
    retrieval: Option<Retrieval<'_>>,
    cfg: KnnConfig,
    source: &[TokenId],
    beam_size: usize,
    max_len: usize,
) -> Result<Vec<TokenId>> {
    Ok(KnnDecoder::new(model, retrieval, cfg)?
        .beam(source, beam_size, max_len)?
        .tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nb(distance: f64, token_id: TokenId) -> Neighbor {
        Neighbor {
            entry_index: 0,
            distance,
            token_id,
            lang: LanguageTag::new("xx").unwrap(),
        }
    }

    #[test]
    fn single_token_support() {
        let p = knn_distribution(&[nb(0.3, 7), nb(12.0, 7)], 3.0, 10).unwrap();
        assert_eq!(p.prob(7), 1.0);
        assert_eq!(p.probs().iter().filter(|&&x| x > 0.0).count(), 1);
    }

    #[test]
    fn hand_evaluated_softmax() {
        let p = knn_distribution(&[nb(0.0, 1), nb(std::f64::consts::LN_2, 2)], 1.0, 4).unwrap();
        assert!((p.prob(1) - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.prob(2) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(p.prob(0), 0.0);
        assert_eq!(p.prob(3), 0.0);
    }

    #[test]
    fn large_temperature_flattens() {
        let p = knn_distribution(&[nb(0.0, 1), nb(100.0, 2)], 1e6, 3).unwrap();
        assert!((p.prob(1) - 0.5).abs() < 1e-4);
        assert!((p.prob(2) - 0.5).abs() < 1e-4);
    }

    #[test]
    fn far_neighbors_do_not_underflow() {
        let p = knn_distribution(&[nb(1e6, 1), nb(1e6 + 1.0, 2)], 1.0, 3).unwrap();
        assert!(p.prob(1) > p.prob(2));
    }

    #[test]
    fn knn_distribution_errors() {
        assert!(matches!(knn_distribution(&[], 1.0, 3), Err(Error::EmptyRetrieval)));
        assert!(knn_distribution(&[nb(0.0, 5)], 1.0, 3).is_err());
        assert!(knn_distribution(&[nb(0.0, 1)], 0.0, 3).is_err());
    }

    #[test]
    fn aggregated_support_can_sharpen_with_temperature() {
        // Two far neighbours share a token: at high T their combined mass
        // overtakes the single nearest one, so the maximum grows with T.
        let ns = [nb(0.0, 1), nb(1.0, 2), nb(1.0, 2)];
        let lo = knn_distribution(&ns, 0.1, 3).unwrap().max_prob();
        let mid = knn_distribution(&ns, 1.0, 3).unwrap().max_prob();
        let hi = knn_distribution(&ns, 100.0, 3).unwrap().max_prob();
        assert!(lo > mid);
        assert!(hi > mid);
    }

    #[test]
    fn interpolation_endpoints_and_symmetry() {
        let a = VocabDistribution::new(vec![1.0, 0.0]).unwrap();
        let b = VocabDistribution::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(interpolate(&a, &b, 0.0).unwrap(), b);
        assert_eq!(interpolate(&a, &b, 1.0).unwrap(), a);
        assert_eq!(interpolate(&a, &b, 0.5).unwrap().probs(), &[0.5, 0.5]);
        let c = VocabDistribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert!(matches!(interpolate(&a, &c, 0.5), Err(Error::Dimension { .. })));
        assert!(interpolate(&a, &b, 1.5).is_err());
    }

    #[test]
    fn config_validation_and_grid() {
        assert!(KnnConfig::new(0, 0.5, 10.0).is_err());
        assert!(KnnConfig::new(8, -0.1, 10.0).is_err());
        assert!(KnnConfig::new(8, 0.5, 0.0).is_err());
        assert_eq!(KnnConfig::grid().len(), 3 * 6 * 2);
    }

    #[test]
    fn argmax_prefers_lowest_id_on_ties() {
        let p = VocabDistribution::new(vec![0.1, 0.45, 0.45]).unwrap();
        assert_eq!(p.argmax(), 1);
    }
}
