//! Central finite-difference check of every generator gradient, for both the
//! likelihood loss and the composite loss.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::model::{Mode, ModelConfig, SeqModel};
use crate::semsim::{BoundScorer, ScorerConfig, ScorerLM, SemSimHead};
use crate::tensor::{lit, Bound, Graph, Real};
use crate::tokenizer::{Role, TokenSequence};
use crate::trainer::{composite_loss, LossParts, Objective, Result, Sample, Scorer};

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub model: ModelConfig,
    pub scorer: ScorerConfig,
    pub seed: u64,
    /// Document and reference ids, each already wrapped in bos/eos.
    pub doc: Vec<u32>,
    pub reference: Vec<u32>,
    pub lambda: f64,
    pub step: f64,
    /// Seed for the dropout masks; every evaluation reuses it so the masks
    /// match across perturbations. `None` runs in eval mode.
    pub dropout_seed: Option<u64>,
}

impl GradcheckConfig {
    /// The toy model over a 12-symbol vocabulary with short sequences.
    pub fn toy(seed: u64) -> Self {
        let vocab = 12;
        Self {
            model: ModelConfig::toy(vocab),
            scorer: ScorerConfig::toy(vocab),
            seed,
            doc: vec![1, 5, 7, 2],
            reference: vec![1, 6, 2],
            lambda: 1.0,
            step: 1e-5,
            dropout_seed: Some(seed ^ 0x5eed),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ObjectiveCheck {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub parameters: usize,
    pub tensors: usize,
    pub ml: ObjectiveCheck,
    pub composite: ObjectiveCheck,
    pub seconds: f64,
}

impl ObjectiveCheck {
    fn new() -> Self {
        Self {
            max_rel_error: 0.0,
            worst_param: String::new(),
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        }
    }

    fn observe(&mut self, name: &str, index: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        if err > self.max_rel_error || err.is_nan() {
            *self = Self {
                max_rel_error: err,
                worst_param: name.to_string(),
                worst_index: index,
                analytic,
                numeric,
            };
        }
    }
}

/// `|a - n| / max(1, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

struct Setup<T> {
    model: SeqModel<T>,
    scorer: Scorer<T>,
    sample: Sample,
}

impl<T: Real> Setup<T> {
    fn new(cfg: &GradcheckConfig) -> Result<Self> {
        let model = SeqModel::<T>::new(cfg.model.clone(), 0, cfg.seed)?;
        let scorer = Scorer {
            lm: ScorerLM::random(cfg.scorer.clone(), cfg.seed.wrapping_add(1)),
            head: SemSimHead::random(cfg.scorer.hidden, cfg.seed.wrapping_add(2)),
        };
        let sample = Sample {
            doc: TokenSequence::new(cfg.doc.clone(), Role::Document),
            reference: TokenSequence::new(cfg.reference.clone(), Role::Reference),
        };
        Ok(Self { model, scorer, sample })
    }

    fn forward(&self, cfg: &GradcheckConfig) -> Result<(Graph<T>, Bound, LossParts)> {
        let mut g = Graph::new();
        let vars = self.model.params.bind(&mut g);
        let bound = BoundScorer::bind(&mut g, &self.scorer.lm, &self.scorer.head);
        let mut rng = cfg.dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let mut mode = match rng.as_mut() {
            Some(r) => Mode::Train(r),
            None => Mode::Eval,
        };
        let parts = composite_loss(
            &mut g,
            &self.model,
            &vars,
            Some(&bound),
            &self.sample,
            Objective::Composite,
            cfg.lambda,
            &mut mode,
        )?;
        Ok((g, vars, parts))
    }

    fn losses(&self, cfg: &GradcheckConfig) -> Result<(f64, f64)> {
        let (g, _, parts) = self.forward(cfg)?;
        let val = |v| g.scalar(v).to_f64().unwrap_or(f64::NAN);
        Ok((val(parts.ml), val(parts.total)))
    }

    /// Analytic gradients of one loss, flattened per tensor in set order.
    fn analytic(&self, cfg: &GradcheckConfig, composite: bool) -> Result<Vec<Vec<f64>>> {
        let (mut g, vars, parts) = self.forward(cfg)?;
        g.backward(if composite { parts.total } else { parts.ml })?;
        let mut params = self.model.params.clone();
        params.zero_grads();
        params.accumulate_grads(&g, &vars);
        Ok(params
            .iter()
            .map(|(_, t)| match t.grad() {
                Some(gr) => gr.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect(),
                None => vec![0.0; t.numel()],
            })
            .collect())
    }
}

/// Compares analytic gradients with `(L(θ+h) - L(θ-h)) / 2h` for every value
/// of every generator tensor. The loss graph is recorded once; each
/// perturbation replays only the nodes downstream of the touched tensor.
pub fn run<T: Real>(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let start = Instant::now();
    let setup = Setup::<T>::new(cfg)?;
    let grad_ml = setup.analytic(cfg, false)?;
    let grad_total = setup.analytic(cfg, true)?;
    let (mut g, vars, parts) = setup.forward(cfg)?;
    let loss = |g: &Graph<T>| {
        let val = |v| g.scalar(v).to_f64().unwrap_or(f64::NAN);
        (val(parts.ml), val(parts.total))
    };
    let h = cfg.step;
    let mut ml = ObjectiveCheck::new();
    let mut composite = ObjectiveCheck::new();
    let mut parameters = 0;
    let mut tensors = 0;
    for (ti, (name, t)) in setup.model.params.iter().enumerate() {
        let leaf = vars.var(setup.model.params.find(name).expect("name came from the set"));
        let mut vals = t.values().to_vec();
        for i in 0..vals.len() {
            let orig = vals[i];
            let x = orig.to_f64().unwrap_or(f64::NAN);
            vals[i] = lit(x + h);
            g.replay(leaf, &vals)?;
            let (ml_p, tot_p) = loss(&g);
            vals[i] = lit(x - h);
            g.replay(leaf, &vals)?;
            let (ml_m, tot_m) = loss(&g);
            vals[i] = orig;
            ml.observe(name, i, grad_ml[ti][i], (ml_p - ml_m) / (2.0 * h));
            composite.observe(name, i, grad_total[ti][i], (tot_p - tot_m) / (2.0 * h));
            parameters += 1;
        }
        g.replay(leaf, &vals)?;
        tensors += 1;
    }
    Ok(GradcheckReport {
        parameters,
        tensors,
        ml,
        composite,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[doc(hidden)]
pub fn time_forward<T: Real>(cfg: &GradcheckConfig, n: usize) -> Result<f64> {
    let s = Setup::<T>::new(cfg)?;
    let t = Instant::now();
    for _ in 0..n {
        s.losses(cfg)?;
    }
    Ok(t.elapsed().as_secs_f64() / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_model_passes() {
        let mut cfg = GradcheckConfig::toy(3);
        cfg.model.encoder_layers = 1;
        cfg.model.decoder_layers = 1;
        cfg.model.d_model = 8;
        cfg.model.heads = 2;
        cfg.model.ffn_dim = 16;
        cfg.model.max_positions = 8;
        cfg.scorer.hidden = 8;
        cfg.scorer.heads = 2;
        cfg.scorer.ffn_dim = 16;
        cfg.scorer.layers = 1;
        let r = run::<f64>(&cfg).unwrap();
        assert!(r.parameters > 0);
        assert!(r.ml.max_rel_error <= 1e-6, "{:?}", r.ml);
        assert!(r.composite.max_rel_error <= 1e-6, "{:?}", r.composite);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1e-3, 0.0), 1e-3);
        assert_eq!(relative_error(4.0, 2.0), 1.0);
    }
}
