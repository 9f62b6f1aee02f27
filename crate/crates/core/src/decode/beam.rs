use std::cmp::Ordering;

use super::{BaseModel, KnnDecoder};
use crate::error::{Error, Result};
use crate::vecstore::TokenId;

/// A (partial) output sequence and its accumulated floored log probability.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    /// Output tokens, excluding the end-of-sequence token.
    pub tokens: Vec<TokenId>,
    pub log_score: f64,
    /// True when the hypothesis ended with EOS rather than hitting the
    /// length limit.
    pub finished: bool,
}

/// Higher score first, then lexicographically smaller token sequence.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.log_score
        .total_cmp(&a.log_score)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

#[derive(Debug, Clone)]
struct Candidate {
    /// Includes the final EOS when `ended`.
    tokens: Vec<TokenId>,
    log_score: f64,
    ended: bool,
}

impl Candidate {
    fn into_hypothesis(mut self, eos: TokenId) -> BeamHypothesis {
        if self.ended && self.tokens.last() == Some(&eos) {
            self.tokens.pop();
        }
        BeamHypothesis {
            tokens: self.tokens,
            log_score: self.log_score,
            finished: self.ended,
        }
    }
}

/// Length-unnormalised beam search.
///
/// Each step expands every live hypothesis by its `beam_size` best tokens,
/// keeps the `beam_size` best candidates overall, and retires those ending
/// in EOS. Search stops when no live hypothesis remains, when the best
/// retired score beats every live score, or at `max_len`.
pub(super) fn beam_search<M: BaseModel + ?Sized>(
    decoder: &KnnDecoder<'_, M>,
    source: &[TokenId],
    beam_size: usize,
    max_len: usize,
) -> Result<BeamHypothesis> {
    if beam_size == 0 {
        return Err(Error::InvalidArgument("beam size must be at least 1".into()));
    }
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let eos = decoder.model.eos();
    let mut live = vec![Candidate {
        tokens: Vec::new(),
        log_score: 0.0,
        ended: false,
    }];
    let mut done: Vec<Candidate> = Vec::new();

    for _ in 0..max_len {
        let mut cands = Vec::with_capacity(live.len() * beam_size);
        for hyp in &live {
            let dist = decoder.step_distribution(source, &hyp.tokens)?;
            let mut scored: Vec<(f64, TokenId)> = (0..dist.len() as TokenId)
                .map(|t| (dist.log_prob(t), t))
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(lp, t) in scored.iter().take(beam_size) {
                let mut tokens = hyp.tokens.clone();
                tokens.push(t);
                cands.push(Candidate {
                    tokens,
                    log_score: hyp.log_score + lp,
                    ended: t == eos,
                });
            }
        }
        cands.sort_by(rank);
        cands.truncate(beam_size);

        live.clear();
        for c in cands {
            if c.ended {
                done.push(c);
            } else {
                live.push(c);
            }
        }
        if live.is_empty() {
            break;
        }
        // scores only decrease, so live hypotheses can no longer win
        let best_done = done.iter().map(|c| c.log_score).fold(f64::NEG_INFINITY, f64::max);
        if best_done > live[0].log_score {
            break;
        }
    }

    done.extend(live);
    done.sort_by(rank);
    let best = done.into_iter().next().expect("beam search keeps at least one hypothesis");
    Ok(best.into_hypothesis(eos))
}
