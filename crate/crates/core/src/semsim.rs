//! Semantic-similarity scoring layer.
//!
//! A frozen sequence encoder embeds the reference summary and the generated
//! summary, a frozen linear head maps their concatenation to a scalar score,
//! and the loss is the negated score. The generated side is fed as a
//! [`SoftSequence`] of decoder distributions so the score is differentiable
//! with respect to the summarizer, while the scorer's own values never change.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EncoderStack, Mode, ModelError, SeqModel};
use crate::tensor::{lit, Bound, Graph, ParamId, ParamSet, Real, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("cannot embed an empty sequence")]
    Empty,
    #[error("soft sequence row {row} sums to {sum}, expected 1")]
    RowSum { row: usize, sum: f64 },
    #[error("soft sequence has {got} columns, scorer vocabulary is {expected}")]
    Vocab { got: usize, expected: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = ScorerError> = std::result::Result<T, E>;

/// How per-token states are reduced to one sequence embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Pooling {
    #[default]
    Mean,
    First,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub pooling: Pooling,
}

impl ScorerConfig {
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            layers: 2,
            hidden: 64,
            heads: 4,
            ffn_dim: 128,
            max_positions: 256,
            vocab_size,
            pooling: Pooling::Mean,
        }
    }
}

/// Frozen encoder that turns a token sequence into one `hidden`-dim vector.
#[derive(Debug, Clone)]
pub struct ScorerLM<T> {
    pub config: ScorerConfig,
    pub params: ParamSet<T>,
    stack: EncoderStack,
}

/// Frozen linear head: `score = W · [e_ref ; e_gen] + b`.
#[derive(Debug, Clone)]
pub struct SemSimHead<T> {
    pub params: ParamSet<T>,
    w: ParamId,
    b: ParamId,
}

/// Per-position distributions over the vocabulary, `[L × V]`, rows summing to 1.
#[derive(Debug, Clone, Copy)]
pub struct SoftSequence {
    pub var: Var,
}

impl<T: Real> ScorerLM<T> {
    /// Seeded random initialization; every tensor frozen.
    pub fn random(config: ScorerConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let tok = ps.register(
            "scorer.tok_emb",
            crate::model::uniform(&mut rng, &[config.vocab_size, config.hidden]),
        );
        let stack = EncoderStack::register(
            &mut ps,
            "scorer",
            tok,
            config.layers,
            config.hidden,
            config.heads,
            config.ffn_dim,
            config.max_positions,
            &mut rng,
        );
        ps.set_frozen(true);
        Self {
            config,
            params: ps,
            stack,
        }
    }

    /// Scorer whose weights are copied from a summarizer's encoder.
    pub fn from_encoder(model: &SeqModel<T>) -> Self {
        let mc = &model.config;
        let config = ScorerConfig {
            layers: mc.encoder_layers,
            hidden: mc.d_model,
            heads: mc.heads,
            ffn_dim: mc.ffn_dim,
            max_positions: mc.max_positions,
            vocab_size: mc.vocab_size,
            pooling: Pooling::Mean,
        };
        let mut lm = Self::random(config, 0);
        let src = &model.params;
        let copies = [(model.token_embedding(), lm.stack.tok_emb)];
        for (from, to) in copies {
            lm.params.get_mut(to).values_mut().copy_from_slice(src.get(from).values());
        }
        let names: Vec<String> = lm.params.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let Some(rest) = name.strip_prefix("scorer.") else { continue };
            if rest == "tok_emb" {
                continue;
            }
            let source = format!("encoder.{rest}");
            if let (Some(from), Some(to)) = (src.find(&source), lm.params.find(&name)) {
                lm.params.get_mut(to).values_mut().copy_from_slice(src.get(from).values());
            }
        }
        lm
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn token_embedding(&self) -> ParamId {
        self.stack.tok_emb
    }

    pub fn cast<U: Real>(&self) -> ScorerLM<U> {
        ScorerLM {
            config: self.config.clone(),
            params: self.params.cast(),
            stack: self.stack.clone(),
        }
    }

    fn pool(&self, g: &mut Graph<T>, states: Var) -> Result<Var> {
        Ok(match self.config.pooling {
            Pooling::Mean => g.mean_rows(states)?,
            Pooling::First => {
                // row 0 via a one-hot selector
                let n = g.shape(states)[0];
                let mut sel = vec![T::zero(); n];
                sel[0] = T::one();
                let sel = g.constant(&[1, n], sel)?;
                g.matmul(sel, states)?
            }
        })
    }

    /// Final-layer token states `[n × hidden]` of a discrete sequence.
    pub fn token_states(&self, g: &mut Graph<T>, b: &Bound, ids: &[u32]) -> Result<Var> {
        if ids.is_empty() {
            return Err(ScorerError::Empty);
        }
        let ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let pad = vec![false; ids.len()];
        Ok(self.stack.forward(g, b, &ids, &pad, &mut Mode::Eval, 0.0)?)
    }

    /// Sequence embedding `[1 × hidden]` of a discrete sequence.
    pub fn embed_sequence(&self, g: &mut Graph<T>, b: &Bound, ids: &[u32]) -> Result<Var> {
        let states = self.token_states(g, b, ids)?;
        self.pool(g, states)
    }

    /// Sequence embedding where position `p` reads `Σ_v soft[p,v] · E[v]`.
    pub fn embed_soft_sequence(&self, g: &mut Graph<T>, b: &Bound, soft: SoftSequence) -> Result<Var> {
        let shape = g.shape(soft.var).to_vec();
        let (rows, cols) = match shape.as_slice() {
            &[r, c] => (r, c),
            _ => return Err(ScorerError::Empty),
        };
        if rows == 0 {
            return Err(ScorerError::Empty);
        }
        if cols != self.config.vocab_size {
            return Err(ScorerError::Vocab {
                got: cols,
                expected: self.config.vocab_size,
            });
        }
        for (row, vals) in g.value(soft.var).chunks(cols).enumerate() {
            let sum = vals.iter().copied().sum::<T>().to_f64().unwrap_or(f64::NAN);
            if !((sum - 1.0).abs() <= 1e-4) || vals.iter().any(|v| *v < T::zero()) {
                return Err(ScorerError::RowSum { row, sum });
            }
        }
        let x = g.matmul(soft.var, b.var(self.stack.tok_emb))?;
        let pad = vec![false; rows];
        let states = self.stack.forward_embedded(g, b, x, &pad, &mut Mode::Eval, 0.0)?;
        self.pool(g, states)
    }
}

impl<T: Real> SemSimHead<T> {
    /// `W ~ N(0,1)/√(2d)`, `b = 0`, both frozen.
    pub fn random(hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / ((2 * hidden) as f64).sqrt();
        let w: Vec<T> = (0..2 * hidden)
            .map(|_| lit(standard_normal(&mut rng) * scale))
            .collect();
        Self::from_values(w, T::zero()).expect("2d weights")
    }

    pub fn from_values(w: Vec<T>, b: T) -> Result<Self> {
        let mut ps = ParamSet::new();
        let n = w.len();
        if n == 0 || n % 2 != 0 {
            return Err(TensorError::ShapeData {
                shape: vec![1, n],
                expected: n + n % 2,
                actual: n,
            }
            .into());
        }
        let w = ps.register("head.weight", Tensor::new(&[1, n], w)?.trainable());
        let b = ps.register("head.bias", Tensor::new(&[1], vec![b])?.trainable());
        ps.set_frozen(true);
        Ok(Self { params: ps, w, b })
    }

    pub fn hidden(&self) -> usize {
        self.params.get(self.w).numel() / 2
    }

    pub fn weight(&self) -> &[T] {
        self.params.get(self.w).values()
    }

    pub fn bias(&self) -> T {
        self.params.get(self.b).values()[0]
    }

    pub fn cast<U: Real>(&self) -> SemSimHead<U> {
        SemSimHead {
            params: self.params.cast(),
            w: self.w,
            b: self.b,
        }
    }

    /// `W · [e_ref ; e_gen] + b`, reference first. Returns a `[1]` node.
    pub fn score(&self, g: &mut Graph<T>, b: &Bound, e_ref: Var, e_gen: Var) -> Result<Var> {
        let d = self.hidden();
        for e in [e_ref, e_gen] {
            if g.value(e).len() != d {
                return Err(TensorError::Dimension {
                    op: "semsim_score",
                    left: vec![d],
                    right: g.shape(e).to_vec(),
                }
                .into());
            }
        }
        let r = as_row(g, e_ref)?;
        let gen = as_row(g, e_gen)?;
        let e = g.concat_cols(&[r, gen])?;
        let we = g.mul(e, b.var(self.w))?;
        let s = g.sum(we);
        Ok(g.add(s, b.var(self.b))?)
    }
}

fn as_row<T: Real>(g: &mut Graph<T>, v: Var) -> Result<Var> {
    let n = g.value(v).len();
    Ok(g.reshape(v, &[1, n])?)
}

/// Everything needed to evaluate the similarity term, bound to one graph.
pub struct BoundScorer<'a, T> {
    pub lm: &'a ScorerLM<T>,
    pub lm_vars: Bound,
    pub head: &'a SemSimHead<T>,
    pub head_vars: Bound,
}

impl<'a, T: Real> BoundScorer<'a, T> {
    pub fn bind(g: &mut Graph<T>, lm: &'a ScorerLM<T>, head: &'a SemSimHead<T>) -> Self {
        Self {
            lm,
            lm_vars: lm.params.bind(g),
            head,
            head_vars: head.params.bind(g),
        }
    }

    /// `-score(embed(reference), embed_soft(generated))`; returns (score, loss).
    pub fn loss(&self, g: &mut Graph<T>, reference: &[u32], generated: SoftSequence) -> Result<(Var, Var)> {
        let e_ref = self.lm.embed_sequence(g, &self.lm_vars, reference)?;
        let e_gen = self.lm.embed_soft_sequence(g, &self.lm_vars, generated)?;
        let score = self.head.score(g, &self.head_vars, e_ref, e_gen)?;
        Ok((score, g.neg(score)))
    }

    /// Score of two discrete sequences.
    pub fn score_ids(&self, g: &mut Graph<T>, reference: &[u32], candidate: &[u32]) -> Result<Var> {
        let e_ref = self.lm.embed_sequence(g, &self.lm_vars, reference)?;
        let e_gen = self.lm.embed_sequence(g, &self.lm_vars, candidate)?;
        self.head.score(g, &self.head_vars, e_ref, e_gen)
    }
}

/// Box-Muller draw from N(0, 1).
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
