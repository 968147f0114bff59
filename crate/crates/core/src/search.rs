//! Beam-search decoding with minimum/maximum length, trigram blocking and a
//! length-normalized final ranking.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EncodedDoc, ModelError, SeqModel};
use crate::tensor::Real;
use crate::tokenizer::{Role, SpecialIds, TokenSequence};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error("cannot score an empty hypothesis")]
    EmptyHypothesis,
    #[error("no hypothesis satisfied the decoding constraints")]
    NoHypothesis,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = SearchError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub beam: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Exponent α in `logprob / len^α`.
    pub length_penalty: f64,
    pub block_trigrams: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            beam: 5,
            min_len: 55,
            max_len: 140,
            length_penalty: 1.0,
            block_trigrams: true,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(SearchError::Config("beam size must be at least 1".into()));
        }
        if self.max_len == 0 || self.min_len > self.max_len {
            return Err(SearchError::Config(format!(
                "need 0 <= min_len <= max_len and max_len >= 1, got {}..{}",
                self.min_len, self.max_len
            )));
        }
        if !(self.length_penalty >= 0.0) {
            return Err(SearchError::Config("length penalty must be non-negative".into()));
        }
        Ok(())
    }
}

/// Anything that yields next-token log-probabilities for a generated prefix
/// (the prefix excludes the start token).
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    fn eos(&self) -> u32;
    fn next_log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>>;
}

/// A partial or finished decode.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub trigrams: HashSet<[u32; 3]>,
    pub finished: bool,
}

impl Hypothesis {
    pub fn empty() -> Self {
        Self {
            tokens: Vec::new(),
            log_prob: 0.0,
            trigrams: HashSet::new(),
            finished: false,
        }
    }

    pub fn from_tokens(tokens: &[u32], log_prob: f64) -> Self {
        let mut h = Self::empty();
        for &t in tokens {
            h = h.extend(t, 0.0, false);
        }
        h.log_prob = log_prob;
        h
    }

    fn extend(&self, token: u32, log_prob: f64, finished: bool) -> Self {
        let mut tokens = self.tokens.clone();
        tokens.push(token);
        let mut trigrams = self.trigrams.clone();
        if let [.., a, b, c] = tokens[..] {
            trigrams.insert([a, b, c]);
        }
        Self {
            tokens,
            log_prob: self.log_prob + log_prob,
            trigrams,
            finished,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Masks every token that would repeat a trigram already in `hyp`.
pub fn apply_trigram_block(hyp: &Hypothesis, step_logprobs: &[f64]) -> Vec<f64> {
    let mut out = step_logprobs.to_vec();
    if let [.., a, b] = hyp.tokens[..] {
        for (v, lp) in out.iter_mut().enumerate() {
            if hyp.trigrams.contains(&[a, b, v as u32]) {
                *lp = f64::NEG_INFINITY;
            }
        }
    }
    out
}

/// `logprob / len^α`.
pub fn length_penalized_score(hyp: &Hypothesis, alpha: f64) -> Result<f64> {
    if hyp.is_empty() {
        return Err(SearchError::EmptyHypothesis);
    }
    Ok(hyp.log_prob / (hyp.len() as f64).powf(alpha))
}

/// One expansion considered during pruning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub score: f64,
    /// Index of the parent within the alive beam.
    pub parent: usize,
    pub prefix_len: usize,
    pub token: u32,
}

fn candidate_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.prefix_len.cmp(&b.prefix_len))
        .then(a.token.cmp(&b.token))
        .then(a.parent.cmp(&b.parent))
}

/// Per-step log-probabilities after all masks for a hypothesis about to emit
/// its `position`-th token (1-based).
fn masked_step(scorer: &dyn StepScorer, hyp: &Hypothesis, cfg: &SearchConfig) -> Result<Vec<f64>> {
    let eos = scorer.eos() as usize;
    let mut lp = scorer.next_log_probs(&hyp.tokens)?;
    if cfg.block_trigrams {
        lp = apply_trigram_block(hyp, &lp);
    }
    let position = hyp.len() + 1;
    if position < cfg.min_len {
        lp[eos] = f64::NEG_INFINITY;
    }
    if position >= cfg.max_len {
        for (v, x) in lp.iter_mut().enumerate() {
            if v != eos {
                *x = f64::NEG_INFINITY;
            }
        }
    }
    Ok(lp)
}

/// Beam search; `on_step` sees every candidate of a step and the kept ones.
pub fn beam_search_traced(
    scorer: &dyn StepScorer,
    cfg: &SearchConfig,
    mut on_step: impl FnMut(&[Candidate], &[Candidate]),
) -> Result<Hypothesis> {
    cfg.validate()?;
    let eos = scorer.eos();
    let mut alive = vec![Hypothesis::empty()];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !alive.is_empty() {
        let mut candidates = Vec::new();
        for (parent, hyp) in alive.iter().enumerate() {
            let lp = masked_step(scorer, hyp, cfg)?;
            for (v, &x) in lp.iter().enumerate() {
                if x > f64::NEG_INFINITY {
                    candidates.push(Candidate {
                        score: hyp.log_prob + x,
                        parent,
                        prefix_len: hyp.len(),
                        token: v as u32,
                    });
                }
            }
        }
        candidates.sort_by(candidate_order);
        let kept = &candidates[..candidates.len().min(cfg.beam)];
        on_step(&candidates, kept);
        let mut next = Vec::with_capacity(kept.len());
        for c in kept {
            let h = Hypothesis {
                log_prob: c.score,
                ..alive[c.parent].extend(c.token, 0.0, c.token == eos)
            };
            if h.finished {
                finished.push(h);
            } else {
                next.push(h);
            }
        }
        alive = next;
    }
    best_finished(finished, cfg.length_penalty)
}

pub fn beam_search(scorer: &dyn StepScorer, cfg: &SearchConfig) -> Result<Hypothesis> {
    beam_search_traced(scorer, cfg, |_, _| {})
}

/// Highest length-penalized score; ties go to the shorter, then smaller, sequence.
pub fn best_finished(finished: Vec<Hypothesis>, alpha: f64) -> Result<Hypothesis> {
    let mut best: Option<(f64, Hypothesis)> = None;
    for h in finished {
        let s = length_penalized_score(&h, alpha)?;
        let better = match &best {
            None => true,
            Some((bs, bh)) => match s.total_cmp(bs) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => (h.len(), &h.tokens) < (bh.len(), &bh.tokens),
            },
        };
        if better {
            best = Some((s, h));
        }
    }
    best.map(|(_, h)| h).ok_or(SearchError::NoHypothesis)
}

/// Adapts a summarizer to [`StepScorer`]: prepends bos and never proposes
/// pad or bos.
pub struct ModelScorer<'a, T> {
    model: &'a SeqModel<T>,
    doc: EncodedDoc<T>,
    specials: SpecialIds,
}

impl<'a, T: Real> ModelScorer<'a, T> {
    pub fn new(model: &'a SeqModel<T>, doc: &TokenSequence, specials: SpecialIds) -> Result<Self> {
        Ok(Self {
            model,
            doc: model.encode_values(&doc.ids)?,
            specials,
        })
    }
}

impl<T: Real> StepScorer for ModelScorer<'_, T> {
    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    fn eos(&self) -> u32 {
        self.specials.eos
    }

    fn next_log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        let mut full = Vec::with_capacity(prefix.len() + 1);
        full.push(self.specials.bos);
        full.extend_from_slice(prefix);
        let mut lp: Vec<f64> = self
            .model
            .next_log_probs(&self.doc, &full)?
            .iter()
            .map(|v| v.to_f64().unwrap_or(f64::NAN))
            .collect();
        lp[self.specials.pad as usize] = f64::NEG_INFINITY;
        lp[self.specials.bos as usize] = f64::NEG_INFINITY;
        Ok(lp)
    }
}

/// Decodes a summary for `doc`. The returned sequence ends with eos.
pub fn generate<T: Real>(
    model: &SeqModel<T>,
    doc: &TokenSequence,
    specials: SpecialIds,
    cfg: &SearchConfig,
) -> Result<TokenSequence> {
    cfg.validate()?;
    let max_decoder = model.config.max_positions;
    if cfg.max_len > max_decoder {
        return Err(SearchError::Config(format!(
            "max_len {} exceeds decoder positions {max_decoder}",
            cfg.max_len
        )));
    }
    let scorer = ModelScorer::new(model, doc, specials)?;
    let best = beam_search(&scorer, cfg)?;
    Ok(TokenSequence::new(best.tokens, Role::Generated))
}
