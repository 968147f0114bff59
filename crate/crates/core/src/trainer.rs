//! Training: the composite objective, Adam, token-capped micro-batches and
//! gradient accumulation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Mode, ModelConfig, ModelError, SeqModel};
use crate::semsim::{BoundScorer, ScorerError, ScorerLM, SemSimHead, SoftSequence};
use crate::tensor::{lit, Bound, Graph, ParamSet, Real, TensorError, Var};
use crate::tokenizer::TokenSequence;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFinite(String),
    #[error("objective {0:?} needs a similarity scorer")]
    MissingScorer(Objective),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Token-level likelihood only.
    MlOnly,
    /// `L_ml + λ · L_semsim`.
    Composite,
    /// `λ · L_semsim` with the likelihood term detached (logged, not trained).
    SemsimOnly,
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ml_only" => Ok(Self::MlOnly),
            "composite" => Ok(Self::Composite),
            "semsim_only" => Ok(Self::SemsimOnly),
            other => Err(format!("unknown objective `{other}` (ml_only | composite | semsim_only)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub dropout: f64,
    pub max_tokens: usize,
    pub update_freq: usize,
    pub epochs: usize,
    pub max_source_len: usize,
    pub max_target_len: usize,
    pub seed: u64,
    pub objective: Objective,
    pub lambda_semsim: f64,
    /// Global gradient-norm clip; `None` disables it.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-5,
            dropout: 0.1,
            max_tokens: 1792,
            update_freq: 32,
            epochs: 6,
            max_source_len: 256,
            max_target_len: 256,
            seed: 1,
            objective: Objective::Composite,
            lambda_semsim: 1.0,
            clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.lr > 0.0) {
            return fail("learning rate must be positive");
        }
        if self.update_freq == 0 {
            return fail("update frequency must be at least 1");
        }
        if !(self.lambda_semsim >= 0.0) {
            return fail("lambda_semsim must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if self.max_tokens == 0 {
            return fail("max_tokens must be positive");
        }
        Ok(())
    }
}

/// One tokenized (document, reference summary) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub doc: TokenSequence,
    pub reference: TokenSequence,
}

impl Sample {
    pub fn tokens(&self) -> usize {
        self.doc.len() + self.reference.len()
    }
}

#[derive(Debug, Clone)]
pub struct FilterReport {
    pub kept: Vec<Sample>,
    pub dropped: usize,
}

/// Keeps samples whose source and target both fit the configured limits.
pub fn filter_long_samples(dataset: Vec<Sample>, config: &TrainConfig) -> FilterReport {
    let total = dataset.len();
    let kept: Vec<Sample> = dataset
        .into_iter()
        .filter(|s| s.doc.len() <= config.max_source_len && s.reference.len() <= config.max_target_len)
        .collect();
    FilterReport {
        dropped: total - kept.len(),
        kept,
    }
}

/// Greedy packing by ascending length under the token cap. Returns indices
/// into `dataset`; an over-cap sample forms its own batch.
pub fn pack_micro_batches(dataset: &[Sample], max_tokens: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by_key(|&i| (dataset[i].tokens(), i));
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut used = 0;
    for i in order {
        let n = dataset[i].tokens();
        if !current.is_empty() && used + n > max_tokens {
            batches.push(std::mem::take(&mut current));
            used = 0;
        }
        current.push(i);
        used += n;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

/// Graph handles for one loss evaluation, with both addends for logging.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub ml: Var,
    pub semsim: Option<Var>,
    pub score: Option<Var>,
}

/// Frozen similarity scorer plus its head.
#[derive(Debug, Clone)]
pub struct Scorer<T> {
    pub lm: ScorerLM<T>,
    pub head: SemSimHead<T>,
}

impl<T: Real> Scorer<T> {
    pub fn cast<U: Real>(&self) -> Scorer<U> {
        Scorer {
            lm: self.lm.cast(),
            head: self.head.cast(),
        }
    }
}

/// `L_ml + λ · L_semsim` for one sample, teacher forced. The generated side of
/// the similarity term is the decoder's per-step distributions.
#[allow(clippy::too_many_arguments)]
pub fn composite_loss<T: Real>(
    g: &mut Graph<T>,
    model: &SeqModel<T>,
    model_vars: &Bound,
    scorer: Option<&BoundScorer<'_, T>>,
    sample: &Sample,
    objective: Objective,
    lambda: f64,
    mode: &mut Mode,
) -> Result<LossParts> {
    let tf = model.teacher_forced(g, model_vars, &sample.doc.ids, &sample.reference.ids, mode)?;
    let ml = g.nll_loss(tf.log_probs, &tf.targets)?;
    if objective == Objective::MlOnly {
        return Ok(LossParts {
            total: ml,
            ml,
            semsim: None,
            score: None,
        });
    }
    let scorer = scorer.ok_or(TrainError::MissingScorer(objective))?;
    let probs = g.softmax(tf.logits, 1)?;
    let (score, semsim) = scorer.loss(g, &sample.reference.ids[1..], SoftSequence { var: probs })?;
    let weighted = g.scale(semsim, lit(lambda));
    let total = match objective {
        Objective::Composite => g.add(ml, weighted)?,
        _ => weighted,
    };
    Ok(LossParts {
        total,
        ml,
        semsim: Some(semsim),
        score: Some(score),
    })
}

/// Adam moments for every non-frozen tensor, keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Real> Default for AdamState<T> {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }
}

/// Bias-corrected Adam step over every tensor in `sets`. Frozen tensors and
/// tensors without a gradient are left untouched; the step counter advances
/// once per call.
pub fn adam_update<T: Real>(sets: &mut [&mut ParamSet<T>], state: &mut AdamState<T>, lr: f64) -> Result<()> {
    for set in sets.iter() {
        for (name, t) in set.iter() {
            if let Some(g) = t.grad() {
                if !t.frozen && g.iter().any(|v| !v.is_finite()) {
                    return Err(TrainError::NonFinite(name.to_string()));
                }
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (b1t, b2t, one) = (lit::<T>(b1), lit::<T>(b2), T::one());
    let (lr_t, c1t, c2t, eps) = (lit::<T>(lr), lit::<T>(c1), lit::<T>(c2), lit::<T>(state.eps));
    for set in sets.iter_mut() {
        for (name, tensor) in set.iter_mut() {
            if tensor.frozen {
                continue;
            }
            let Some(grad) = tensor.grad().map(<[T]>::to_vec) else { continue };
            let n = grad.len();
            let (m, v) = state
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
            let values = tensor.values_mut();
            for i in 0..n {
                let gi = grad[i];
                m[i] = b1t * m[i] + (one - b1t) * gi;
                v[i] = b2t * v[i] + (one - b2t) * gi * gi;
                let mhat = m[i] / c1t;
                let vhat = v[i] / c2t;
                values[i] = values[i] - lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
    }
    Ok(())
}

/// Scales all non-frozen gradients so their global norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm<T: Real>(set: &mut ParamSet<T>, max_norm: f64) -> f64 {
    let norm = global_grad_norm(set);
    if norm > max_norm && norm > 0.0 {
        let s: T = lit(max_norm / norm);
        for (_, t) in set.iter_mut() {
            if t.frozen {
                continue;
            }
            if let Some(g) = t.grad().map(<[T]>::to_vec) {
                t.zero_grad();
                t.accumulate_grad(&g.iter().map(|&x| x * s).collect::<Vec<_>>());
            }
        }
    }
    norm
}

pub fn global_grad_norm<T: Real>(set: &ParamSet<T>) -> f64 {
    set.iter()
        .filter(|(_, t)| !t.frozen)
        .filter_map(|(_, t)| t.grad())
        .flatten()
        .map(|v| {
            let x = v.to_f64().unwrap_or(f64::NAN);
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// SHA-256 over names, shapes and values of every frozen tensor.
pub fn frozen_digest<T: Real>(sets: &[&ParamSet<T>]) -> String {
    let mut h = Sha256::new();
    for set in sets {
        for (name, t) in set.iter().filter(|(_, t)| t.frozen) {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.values() {
                h.update(v.to_f64().unwrap_or(f64::NAN).to_le_bytes());
            }
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Summed losses over a micro-batch (or an update).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTotals {
    pub total: f64,
    pub ml: f64,
    pub semsim: f64,
    pub samples: usize,
}

impl LossTotals {
    fn add(&mut self, o: &LossTotals) {
        self.total += o.total;
        self.ml += o.ml;
        self.semsim += o.semsim;
        self.samples += o.samples;
    }
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub step: u64,
    pub epoch: usize,
    pub losses: LossTotals,
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Position inside the epoch schedule, saved with checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub epoch: usize,
    /// Index of the next micro-batch within the epoch's shuffled order.
    pub cursor: usize,
    /// Dropout stream position (ChaCha word position).
    pub dropout_word_pos: u128,
}

/// Owns the model, optimizer state and schedule for one training run.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub model: SeqModel<T>,
    pub scorer: Option<Scorer<T>>,
    pub config: TrainConfig,
    pub adam: AdamState<T>,
    dataset: Vec<Sample>,
    batches: Vec<Vec<usize>>,
    epoch_order: Vec<usize>,
    progress: Progress,
    dropout_rng: ChaCha8Rng,
}

/// Independent streams derived from the master seed.
fn derived_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

const DROPOUT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;
const HEAD_STREAM: u64 = 4;

impl<T: Real> Trainer<T> {
    pub fn new(mut model: SeqModel<T>, scorer: Option<Scorer<T>>, config: TrainConfig, dataset: Vec<Sample>) -> Result<Self> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(TrainError::Config("training set is empty".into()));
        }
        if config.objective != Objective::MlOnly && scorer.is_none() {
            return Err(TrainError::MissingScorer(config.objective));
        }
        model.config.dropout = config.dropout;
        let batches = pack_micro_batches(&dataset, config.max_tokens);
        let mut t = Self {
            model,
            scorer,
            adam: AdamState::default(),
            dropout_rng: ChaCha8Rng::seed_from_u64(derived_seed(config.seed, DROPOUT_STREAM)),
            config,
            dataset,
            batches,
            epoch_order: Vec::new(),
            progress: Progress {
                epoch: 0,
                cursor: 0,
                dropout_word_pos: 0,
            },
        };
        t.epoch_order = t.shuffled_order(0);
        Ok(t)
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }

    pub fn progress(&self) -> Progress {
        Progress {
            dropout_word_pos: self.dropout_rng.get_word_pos(),
            ..self.progress
        }
    }

    pub fn dataset(&self) -> &[Sample] {
        &self.dataset
    }

    pub fn micro_batches(&self) -> &[Vec<usize>] {
        &self.batches
    }

    /// Restores schedule position and optimizer state (used by checkpoint load).
    pub fn restore(&mut self, adam: AdamState<T>, progress: Progress) {
        self.adam = adam;
        self.progress = progress;
        self.dropout_rng.set_word_pos(progress.dropout_word_pos);
        self.epoch_order = self.shuffled_order(progress.epoch);
    }

    fn shuffled_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.batches.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(self.config.seed, SHUFFLE_STREAM) ^ epoch as u64);
        order.shuffle(&mut rng);
        order
    }

    /// Forward and backward over one micro-batch, adding gradients into the
    /// summarizer and (frozen) scorer tensors.
    pub fn accumulate_micro_batch(&mut self, indices: &[usize]) -> Result<LossTotals> {
        let mut totals = LossTotals::default();
        for &i in indices {
            let sample = &self.dataset[i];
            let mut g = Graph::new();
            let mv = self.model.params.bind(&mut g);
            let bound_scorer = match (&self.scorer, self.config.objective) {
                (Some(s), Objective::Composite | Objective::SemsimOnly) => {
                    Some(BoundScorer::bind(&mut g, &s.lm, &s.head))
                }
                _ => None,
            };
            let mut mode = if self.config.dropout > 0.0 {
                Mode::Train(&mut self.dropout_rng)
            } else {
                Mode::Eval
            };
            let parts = composite_loss(
                &mut g,
                &self.model,
                &mv,
                bound_scorer.as_ref(),
                sample,
                self.config.objective,
                self.config.lambda_semsim,
                &mut mode,
            )?;
            g.backward(parts.total)?;
            let scorer_vars = bound_scorer.map(|b| (b.lm_vars, b.head_vars));
            self.model.params.accumulate_grads(&g, &mv);
            if let (Some(s), Some((lv, hv))) = (&mut self.scorer, scorer_vars) {
                s.lm.params.accumulate_grads(&g, &lv);
                s.head.params.accumulate_grads(&g, &hv);
            }
            totals.add(&LossTotals {
                total: g.scalar(parts.total).to_f64().unwrap_or(f64::NAN),
                ml: g.scalar(parts.ml).to_f64().unwrap_or(f64::NAN),
                semsim: parts
                    .semsim
                    .map(|s| g.scalar(s).to_f64().unwrap_or(f64::NAN))
                    .unwrap_or(0.0),
                samples: 1,
            });
        }
        Ok(totals)
    }

    pub fn zero_grads(&mut self) {
        self.model.params.zero_grads();
        if let Some(s) = &mut self.scorer {
            s.lm.params.zero_grads();
            s.head.params.zero_grads();
        }
    }

    /// Applies clipping and one Adam update to the accumulated gradients.
    pub fn apply_update(&mut self) -> Result<(f64, bool)> {
        let norm = match self.config.clip_norm {
            Some(c) => clip_grad_norm(&mut self.model.params, c),
            None => global_grad_norm(&self.model.params),
        };
        let clipped = self.config.clip_norm.is_some_and(|c| norm > c);
        let mut sets: Vec<&mut ParamSet<T>> = vec![&mut self.model.params];
        if let Some(s) = &mut self.scorer {
            sets.push(&mut s.lm.params);
            sets.push(&mut s.head.params);
        }
        adam_update(&mut sets, &mut self.adam, self.config.lr)?;
        self.zero_grads();
        Ok((norm, clipped))
    }

    /// Runs `update_freq` micro-batches (fewer at the end of an epoch) and one
    /// optimizer update.
    pub fn train_step(&mut self) -> Result<StepReport> {
        self.zero_grads();
        let mut losses = LossTotals::default();
        let epoch = self.progress.epoch;
        for _ in 0..self.config.update_freq {
            let batch = self.batches[self.epoch_order[self.progress.cursor]].clone();
            losses.add(&self.accumulate_micro_batch(&batch)?);
            self.progress.cursor += 1;
            if self.progress.cursor == self.batches.len() {
                self.progress.epoch += 1;
                self.progress.cursor = 0;
                self.epoch_order = self.shuffled_order(self.progress.epoch);
                break;
            }
        }
        let (grad_norm, clipped) = self.apply_update()?;
        Ok(StepReport {
            step: self.adam.step,
            epoch,
            losses,
            grad_norm,
            clipped,
        })
    }

    /// Trains until `config.epochs` epochs are complete, reporting each update.
    pub fn train(&mut self, mut on_step: impl FnMut(&StepReport, &Self)) -> Result<()> {
        while self.progress.epoch < self.config.epochs {
            let report = self.train_step()?;
            on_step(&report, self);
        }
        Ok(())
    }

    /// Evaluation-mode losses of one sample without touching gradients.
    pub fn evaluate_sample(&self, sample: &Sample) -> Result<LossTotals> {
        let mut g = Graph::new();
        let mv = self.model.params.bind(&mut g);
        let objective = if self.scorer.is_some() && self.config.objective == Objective::MlOnly {
            Objective::Composite
        } else {
            self.config.objective
        };
        let bs = self.scorer.as_ref().map(|s| BoundScorer::bind(&mut g, &s.lm, &s.head));
        let parts = composite_loss(
            &mut g,
            &self.model,
            &mv,
            bs.as_ref(),
            sample,
            objective,
            self.config.lambda_semsim,
            &mut Mode::Eval,
        )?;
        let f = |v: Var| g.scalar(v).to_f64().unwrap_or(f64::NAN);
        Ok(LossTotals {
            total: f(parts.total),
            ml: f(parts.ml),
            semsim: parts.semsim.map(f).unwrap_or(0.0),
            samples: 1,
        })
    }
}

/// Warm start for the similarity scorer: trains a fresh summarizer with the
/// likelihood objective for `epochs` passes over `dataset`, then copies its
/// encoder into a frozen scorer with a seeded random head.
pub fn pretrain_lite<T: Real>(
    model_config: ModelConfig,
    pad_id: u32,
    dataset: Vec<Sample>,
    mut config: TrainConfig,
) -> Result<Scorer<T>> {
    config.objective = Objective::MlOnly;
    let model = SeqModel::new(model_config, pad_id, derived_seed(config.seed, INIT_STREAM))?;
    let mut trainer = Trainer::new(model, None, config, dataset)?;
    trainer.train(|_, _| {})?;
    let lm = ScorerLM::from_encoder(&trainer.model);
    let head = SemSimHead::random(lm.hidden(), derived_seed(trainer.config.seed, HEAD_STREAM));
    Ok(Scorer { lm, head })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::tokenizer::Role;

    fn sample(doc: usize, reference: usize) -> Sample {
        Sample {
            doc: TokenSequence::new(vec![5; doc], Role::Document),
            reference: TokenSequence::new(vec![5; reference], Role::Reference),
        }
    }

    #[test]
    fn filter_counts() {
        let cfg = TrainConfig {
            max_source_len: 10,
            max_target_len: 4,
            ..Default::default()
        };
        let short = vec![sample(3, 2), sample(10, 4)];
        let r = filter_long_samples(short.clone(), &cfg);
        assert_eq!(r.kept, short);
        assert_eq!(r.dropped, 0);

        let long = vec![sample(11, 2), sample(3, 5)];
        let r = filter_long_samples(long, &cfg);
        assert!(r.kept.is_empty());
        assert_eq!(r.dropped, 2);

        // 10 samples: sources 11 (×2) and target 5 (×1) are over
        let lens = [(3, 2), (11, 2), (4, 4), (10, 3), (2, 5), (9, 1), (11, 4), (1, 1), (6, 2), (7, 3)];
        let mixed: Vec<Sample> = lens.iter().map(|&(d, r)| sample(d, r)).collect();
        let r = filter_long_samples(mixed, &cfg);
        assert_eq!(r.kept.len(), 7);
        assert_eq!(r.dropped, 3);
    }

    #[test]
    fn packing_respects_cap_and_sorts() {
        let data = vec![sample(5, 5), sample(2, 2), sample(40, 10), sample(3, 3)];
        let b = pack_micro_batches(&data, 16);
        assert_eq!(b, vec![vec![1, 3], vec![0], vec![2]]);
        for batch in &b {
            let n: usize = batch.iter().map(|&i| data[i].tokens()).sum();
            assert!(n <= 16 || batch.len() == 1);
        }
    }

    fn one_param(value: f64, grad: f64, frozen: bool) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        let mut t = Tensor::new(&[1], vec![value]).unwrap().trainable();
        t.frozen = frozen;
        t.accumulate_grad(&[grad]);
        ps.register("w", t);
        ps
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // t=1: m̂ = g, v̂ = g², update = lr · g / (|g| + ε)
        let mut ps = one_param(1.0, 1.0, false);
        let mut st = AdamState::default();
        adam_update(&mut [&mut ps], &mut st, 0.1).unwrap();
        let w = ps.iter().next().unwrap().1.values()[0];
        assert!((w - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-12);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_on_quadratic_from_one() {
        // f(w) = w², g = 2w = 2 at w = 1; the first step is still ≈ lr
        let mut ps = one_param(1.0, 2.0, false);
        let mut st = AdamState::default();
        adam_update(&mut [&mut ps], &mut st, 0.1).unwrap();
        let w = ps.iter().next().unwrap().1.values()[0];
        assert!((w - 0.9).abs() < 1e-7);
    }

    #[test]
    fn adam_zero_gradient_and_frozen() {
        let mut ps = one_param(0.7, 0.0, false);
        let mut st = AdamState::default();
        adam_update(&mut [&mut ps], &mut st, 0.1).unwrap();
        assert_eq!(ps.iter().next().unwrap().1.values()[0], 0.7);

        let mut fz = one_param(0.7, 3.0, true);
        adam_update(&mut [&mut fz], &mut st, 0.1).unwrap();
        assert_eq!(fz.iter().next().unwrap().1.values()[0], 0.7);
        assert!(!st.moments.contains_key("w") || st.moments["w"].0[0] == 0.0);
    }

    #[test]
    fn adam_rejects_nan_with_name() {
        let mut ps = one_param(0.7, f64::NAN, false);
        let mut st = AdamState::default();
        let err = adam_update(&mut [&mut ps], &mut st, 0.1).unwrap_err();
        assert!(matches!(err, TrainError::NonFinite(ref n) if n == "w"));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut ps = ParamSet::<f64>::new();
        let mut t = Tensor::new(&[2], vec![0.0, 0.0]).unwrap().trainable();
        t.accumulate_grad(&[3.0, 4.0]);
        ps.register("w", t);
        let norm = clip_grad_norm(&mut ps, 1.0);
        assert_eq!(norm, 5.0);
        assert!((global_grad_norm(&ps) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            update_freq: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lr: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!("composite".parse::<Objective>().unwrap(), Objective::Composite);
        assert!("nope".parse::<Objective>().is_err());
    }
}
