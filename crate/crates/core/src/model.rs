//! Encoder-decoder transformer: a bidirectional encoder over the document and
//! a causal decoder predicting the summary one token at a time.
//!
//! Blocks are pre-norm with learned positional embeddings. All matrices are
//! stored `[in × out]` so a projection is `x · W + b`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{lit, Bound, Graph, ParamId, ParamSet, Real, Tensor, TensorError, Var};

const LN_EPS: f64 = 1e-5;
pub const INIT_RANGE: f64 = 0.08;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("sequence of length {len} exceeds max positions {max}")]
    Length { len: usize, max: usize },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("empty input sequence")]
    Empty,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub tied_embeddings: bool,
}

impl ModelConfig {
    /// Two encoder and two decoder layers, width 64, four heads.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            encoder_layers: 2,
            decoder_layers: 2,
            d_model: 64,
            heads: 4,
            ffn_dim: 128,
            dropout: 0.1,
            max_positions: 256,
            vocab_size,
            tied_embeddings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return fail("d_model must be a positive multiple of heads");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if self.max_positions == 0 || self.vocab_size == 0 || self.ffn_dim == 0 {
            return fail("max_positions, vocab_size and ffn_dim must be positive");
        }
        Ok(())
    }
}

/// Whether dropout is active, and the stream it draws from.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

impl Mode<'_> {
    pub(crate) fn dropout<T: Real>(&mut self, g: &mut Graph<T>, x: Var, p: f64) -> Var {
        match self {
            Mode::Eval => x,
            Mode::Train(rng) => g.dropout(x, p, *rng),
        }
    }
}

pub(crate) fn uniform<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    let n = shape.iter().product();
    let vals = (0..n)
        .map(|_| lit(rng.gen_range(-INIT_RANGE..INIT_RANGE)))
        .collect();
    Tensor::new(shape, vals).expect("shape").trainable()
}

fn zeros<T: Real>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape).trainable()
}

fn ones<T: Real>(n: usize) -> Tensor<T> {
    Tensor::new(&[n], vec![T::one(); n]).expect("shape").trainable()
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn register<T: Real>(ps: &mut ParamSet<T>, name: &str, i: usize, o: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: ps.register(format!("{name}.weight"), uniform(rng, &[i, o])),
            b: ps.register(format!("{name}.bias"), zeros(&[o])),
        }
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        let y = g.matmul(x, b.var(self.w))?;
        Ok(g.add_bias(y, b.var(self.b))?)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm {
    fn register<T: Real>(ps: &mut ParamSet<T>, name: &str, d: usize) -> Self {
        Self {
            gamma: ps.register(format!("{name}.weight"), ones(d)),
            beta: ps.register(format!("{name}.bias"), zeros(&[d])),
        }
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        Ok(g.layer_norm(x, b.var(self.gamma), b.var(self.beta), LN_EPS)?)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
}

impl Attention {
    fn register<T: Real>(ps: &mut ParamSet<T>, name: &str, d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            q: Linear::register(ps, &format!("{name}.q"), d, d, rng),
            k: Linear::register(ps, &format!("{name}.k"), d, d, rng),
            v: Linear::register(ps, &format!("{name}.v"), d, d, rng),
            out: Linear::register(ps, &format!("{name}.out"), d, d, rng),
            heads,
        }
    }

    /// `mask` is `[tq × tk]` of 0 / -inf added to the scaled scores.
    fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, query: Var, memory: Var, mask: &[T]) -> Result<Var> {
        let q = self.q.forward(g, b, query)?;
        let k = self.k.forward(g, b, memory)?;
        let v = self.v.forward(g, b, memory)?;
        let d = g.shape(q)[1];
        let dh = d / self.heads;
        let scale: T = lit(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let scores = g.add_const(scores, mask)?;
            let weights = g.softmax(scores, 1)?;
            outs.push(g.matmul(weights, vh)?);
        }
        let joined = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        self.out.forward(g, b, joined)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn register<T: Real>(ps: &mut ParamSet<T>, name: &str, d: usize, ffn: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            up: Linear::register(ps, &format!("{name}.up"), d, ffn, rng),
            down: Linear::register(ps, &format!("{name}.down"), ffn, d, rng),
        }
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var, mode: &mut Mode, p: f64) -> Result<Var> {
        let h = self.up.forward(g, b, x)?;
        let h = g.gelu(h);
        let h = mode.dropout(g, h, p);
        self.down.forward(g, b, h)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderLayer {
    attn_norm: LayerNorm,
    attn: Attention,
    ffn_norm: LayerNorm,
    ffn: FeedForward,
}

impl EncoderLayer {
    pub(crate) fn register<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        d: usize,
        heads: usize,
        ffn: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            attn_norm: LayerNorm::register(ps, &format!("{name}.attn_norm"), d),
            attn: Attention::register(ps, &format!("{name}.self_attn"), d, heads, rng),
            ffn_norm: LayerNorm::register(ps, &format!("{name}.ffn_norm"), d),
            ffn: FeedForward::register(ps, &format!("{name}.ffn"), d, ffn, rng),
        }
    }

    pub(crate) fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        x: Var,
        mask: &[T],
        mode: &mut Mode,
        p: f64,
    ) -> Result<Var> {
        let h = self.attn_norm.forward(g, b, x)?;
        let a = self.attn.forward(g, b, h, h, mask)?;
        let a = mode.dropout(g, a, p);
        let x = g.add(x, a)?;
        let h = self.ffn_norm.forward(g, b, x)?;
        let f = self.ffn.forward(g, b, h, mode, p)?;
        let f = mode.dropout(g, f, p);
        Ok(g.add(x, f)?)
    }
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_norm: LayerNorm,
    self_attn: Attention,
    cross_norm: LayerNorm,
    cross_attn: Attention,
    ffn_norm: LayerNorm,
    ffn: FeedForward,
}

impl DecoderLayer {
    fn register<T: Real>(ps: &mut ParamSet<T>, name: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let (d, h) = (cfg.d_model, cfg.heads);
        Self {
            self_norm: LayerNorm::register(ps, &format!("{name}.self_norm"), d),
            self_attn: Attention::register(ps, &format!("{name}.self_attn"), d, h, rng),
            cross_norm: LayerNorm::register(ps, &format!("{name}.cross_norm"), d),
            cross_attn: Attention::register(ps, &format!("{name}.cross_attn"), d, h, rng),
            ffn_norm: LayerNorm::register(ps, &format!("{name}.ffn_norm"), d),
            ffn: FeedForward::register(ps, &format!("{name}.ffn"), d, cfg.ffn_dim, rng),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        x: Var,
        memory: Var,
        self_mask: &[T],
        cross_mask: &[T],
        mode: &mut Mode,
        p: f64,
    ) -> Result<Var> {
        let h = self.self_norm.forward(g, b, x)?;
        let a = self.self_attn.forward(g, b, h, h, self_mask)?;
        let a = mode.dropout(g, a, p);
        let x = g.add(x, a)?;
        let h = self.cross_norm.forward(g, b, x)?;
        let c = self.cross_attn.forward(g, b, h, memory, cross_mask)?;
        let c = mode.dropout(g, c, p);
        let x = g.add(x, c)?;
        let h = self.ffn_norm.forward(g, b, x)?;
        let f = self.ffn.forward(g, b, h, mode, p)?;
        let f = mode.dropout(g, f, p);
        Ok(g.add(x, f)?)
    }
}

/// A stack of bidirectional encoder layers with its own embeddings; shared
/// by the summarizer's encoder and the similarity scorer.
#[derive(Debug, Clone)]
pub(crate) struct EncoderStack {
    pub(crate) tok_emb: ParamId,
    pub(crate) pos_emb: ParamId,
    layers: Vec<EncoderLayer>,
    norm: LayerNorm,
    pub(crate) max_positions: usize,
}

impl EncoderStack {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn register<T: Real>(
        ps: &mut ParamSet<T>,
        prefix: &str,
        tok_emb: ParamId,
        layers: usize,
        d: usize,
        heads: usize,
        ffn: usize,
        max_positions: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let pos_emb = ps.register(format!("{prefix}.pos_emb"), uniform(rng, &[max_positions, d]));
        let layers = (0..layers)
            .map(|i| EncoderLayer::register(ps, &format!("{prefix}.layers.{i}"), d, heads, ffn, rng))
            .collect();
        let norm = LayerNorm::register(ps, &format!("{prefix}.norm"), d);
        Self {
            tok_emb,
            pos_emb,
            layers,
            norm,
            max_positions,
        }
    }

    /// Runs the stack over already-embedded tokens `x[n×d]`.
    pub(crate) fn forward_embedded<T: Real>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        x: Var,
        key_pad: &[bool],
        mode: &mut Mode,
        p: f64,
    ) -> Result<Var> {
        let n = key_pad.len();
        if n > self.max_positions {
            return Err(ModelError::Length {
                len: n,
                max: self.max_positions,
            });
        }
        let positions: Vec<usize> = (0..n).collect();
        let pos = g.embedding(b.var(self.pos_emb), &positions)?;
        let mut x = g.add(x, pos)?;
        x = mode.dropout(g, x, p);
        let mask = key_padding_mask::<T>(key_pad, n);
        for layer in &self.layers {
            x = layer.forward(g, b, x, &mask, mode, p)?;
        }
        self.norm.forward(g, b, x)
    }

    pub(crate) fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        ids: &[usize],
        key_pad: &[bool],
        mode: &mut Mode,
        p: f64,
    ) -> Result<Var> {
        if ids.is_empty() {
            return Err(ModelError::Empty);
        }
        if ids.len() > self.max_positions {
            return Err(ModelError::Length {
                len: ids.len(),
                max: self.max_positions,
            });
        }
        let x = g.embedding(b.var(self.tok_emb), ids)?;
        self.forward_embedded(g, b, x, key_pad, mode, p)
    }
}

/// `[tq × tk]` additive mask hiding padded keys.
fn key_padding_mask<T: Real>(key_pad: &[bool], tq: usize) -> Vec<T> {
    let row: Vec<T> = key_pad
        .iter()
        .map(|&p| if p { T::neg_infinity() } else { T::zero() })
        .collect();
    row.repeat(tq)
}

fn causal_mask<T: Real>(t: usize) -> Vec<T> {
    let mut m = vec![T::zero(); t * t];
    for i in 0..t {
        for j in i + 1..t {
            m[i * t + j] = T::neg_infinity();
        }
    }
    m
}

/// Encoder output for one document, living on a particular graph.
#[derive(Debug, Clone)]
pub struct EncoderState {
    pub states: Var,
    pub key_pad: Vec<bool>,
}

/// Decoder outputs under teacher forcing for one (document, reference) pair.
#[derive(Debug, Clone)]
pub struct TeacherForced {
    pub logits: Var,
    pub log_probs: Var,
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SeqModel<T> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
    encoder: EncoderStack,
    dec_pos: ParamId,
    decoder: Vec<DecoderLayer>,
    dec_norm: LayerNorm,
    out_w: Option<ParamId>,
    out_b: ParamId,
    pad_id: usize,
}

impl<T: Real> SeqModel<T> {
    pub fn new(config: ModelConfig, pad_id: u32, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let (v, d) = (config.vocab_size, config.d_model);
        let tok = ps.register("tok_emb", uniform(&mut rng, &[v, d]));
        let encoder = EncoderStack::register(
            &mut ps,
            "encoder",
            tok,
            config.encoder_layers,
            d,
            config.heads,
            config.ffn_dim,
            config.max_positions,
            &mut rng,
        );
        let dec_pos = ps.register("decoder.pos_emb", uniform(&mut rng, &[config.max_positions, d]));
        let decoder = (0..config.decoder_layers)
            .map(|i| DecoderLayer::register(&mut ps, &format!("decoder.layers.{i}"), &config, &mut rng))
            .collect();
        let dec_norm = LayerNorm::register(&mut ps, "decoder.norm", d);
        let out_w = (!config.tied_embeddings).then(|| ps.register("output.weight", uniform(&mut rng, &[d, v])));
        let out_b = ps.register("output.bias", zeros(&[v]));
        Ok(Self {
            config,
            params: ps,
            encoder,
            dec_pos,
            decoder,
            dec_norm,
            out_w,
            out_b,
            pad_id: pad_id as usize,
        })
    }

    pub fn output_weight(&self) -> Option<ParamId> {
        self.out_w
    }

    pub fn token_embedding(&self) -> ParamId {
        self.encoder.tok_emb
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> SeqModel<U> {
        SeqModel {
            config: self.config.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            dec_pos: self.dec_pos,
            decoder: self.decoder.clone(),
            dec_norm: self.dec_norm.clone(),
            out_w: self.out_w,
            out_b: self.out_b,
            pad_id: self.pad_id,
        }
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(ModelError::Empty);
        }
        if n > self.config.max_positions {
            return Err(ModelError::Length {
                len: n,
                max: self.config.max_positions,
            });
        }
        Ok(())
    }

    /// Bidirectional encoding of `doc`; pad tokens are masked out as keys.
    pub fn encode(&self, g: &mut Graph<T>, b: &Bound, doc: &[u32], mode: &mut Mode) -> Result<EncoderState> {
        self.check_len(doc.len())?;
        let ids: Vec<usize> = doc.iter().map(|&i| i as usize).collect();
        let key_pad: Vec<bool> = ids.iter().map(|&i| i == self.pad_id).collect();
        let states = self
            .encoder
            .forward(g, b, &ids, &key_pad, mode, self.config.dropout)?;
        Ok(EncoderState { states, key_pad })
    }

    /// Next-token logits `[T × V]` for each prefix position.
    pub fn decoder_logits(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        enc: &EncoderState,
        prefix: &[u32],
        mode: &mut Mode,
    ) -> Result<Var> {
        self.check_len(prefix.len())?;
        let t = prefix.len();
        let p = self.config.dropout;
        let ids: Vec<usize> = prefix.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..t).collect();
        let tok = g.embedding(b.var(self.encoder.tok_emb), &ids)?;
        let pos = g.embedding(b.var(self.dec_pos), &positions)?;
        let mut x = g.add(tok, pos)?;
        x = mode.dropout(g, x, p);
        let self_mask = causal_mask::<T>(t);
        let cross_mask = key_padding_mask::<T>(&enc.key_pad, t);
        for layer in &self.decoder {
            x = layer.forward(g, b, x, enc.states, &self_mask, &cross_mask, mode, p)?;
        }
        let h = self.dec_norm.forward(g, b, x)?;
        let logits = match self.out_w {
            Some(w) => g.matmul(h, b.var(w))?,
            None => {
                let et = g.transpose(b.var(self.encoder.tok_emb))?;
                g.matmul(h, et)?
            }
        };
        Ok(g.add_bias(logits, b.var(self.out_b))?)
    }

    /// Row `t` is p(· | prefix[..=t], document).
    pub fn decode_distributions(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        enc: &EncoderState,
        prefix: &[u32],
        mode: &mut Mode,
    ) -> Result<Var> {
        let logits = self.decoder_logits(g, b, enc, prefix, mode)?;
        Ok(g.softmax(logits, 1)?)
    }

    /// Teacher-forced pass: the decoder reads `reference[..m]` and predicts
    /// `reference[1..]`, where `reference` starts with bos and ends with eos.
    pub fn teacher_forced(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        doc: &[u32],
        reference: &[u32],
        mode: &mut Mode,
    ) -> Result<TeacherForced> {
        if reference.len() < 2 {
            return Err(ModelError::Empty);
        }
        let enc = self.encode(g, b, doc, mode)?;
        let input = &reference[..reference.len() - 1];
        let targets: Vec<usize> = reference[1..].iter().map(|&i| i as usize).collect();
        let logits = self.decoder_logits(g, b, &enc, input, mode)?;
        let log_probs = g.log_softmax(logits, 1)?;
        Ok(TeacherForced {
            logits,
            log_probs,
            targets,
        })
    }

    /// Summed negative log-likelihood of the reference tokens.
    pub fn ml_loss(&self, g: &mut Graph<T>, b: &Bound, doc: &[u32], reference: &[u32], mode: &mut Mode) -> Result<Var> {
        let tf = self.teacher_forced(g, b, doc, reference, mode)?;
        Ok(g.nll_loss(tf.log_probs, &tf.targets)?)
    }

    /// Evaluation-mode encoder output as plain values `[n × d]`.
    pub fn encode_values(&self, doc: &[u32]) -> Result<EncodedDoc<T>> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let enc = self.encode(&mut g, &b, doc, &mut Mode::Eval)?;
        Ok(EncodedDoc {
            states: g.value(enc.states).to_vec(),
            rows: doc.len(),
            key_pad: enc.key_pad,
        })
    }

    /// Log-probabilities of the next token after `prefix`, evaluation mode.
    pub fn next_log_probs(&self, doc: &EncodedDoc<T>, prefix: &[u32]) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let states = g.constant(&[doc.rows, self.config.d_model], doc.states.clone())?;
        let enc = EncoderState {
            states,
            key_pad: doc.key_pad.clone(),
        };
        let logits = self.decoder_logits(&mut g, &b, &enc, prefix, &mut Mode::Eval)?;
        let v = self.config.vocab_size;
        let last = g.slice_rows_last(logits, v);
        let row = g.constant(&[1, v], last)?;
        let lp = g.log_softmax(row, 1)?;
        Ok(g.value(lp).to_vec())
    }
}

/// Encoder output detached from any graph, reused across decoding steps.
#[derive(Debug, Clone)]
pub struct EncodedDoc<T> {
    pub states: Vec<T>,
    pub rows: usize,
    pub key_pad: Vec<bool>,
}

impl<T: Real> Graph<T> {
    fn slice_rows_last(&self, v: Var, width: usize) -> Vec<T> {
        let vals = self.value(v);
        vals[vals.len() - width..].to_vec()
    }
}
