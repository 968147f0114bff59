//! Checkpoint container.
//!
//! ```text
//! semsum-checkpoint v1\n
//! <header byte length, decimal>\n
//! <JSON header>\n
//! <payload: little-endian f32, row-major, at offsets declared in the header>
//! ```
//!
//! Offsets and lengths in the header count bytes from the start of the
//! payload. Every tensor entry carries its name, shape and frozen flag.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelConfig, SeqModel};
use crate::semsim::{ScorerConfig, ScorerLM, SemSimHead};
use crate::tensor::{ParamSet, Real, Tensor, TensorError};
use crate::trainer::{AdamState, Progress, Scorer, TrainConfig, Trainer};

pub const MAGIC: &str = "semsum-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic line)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint is missing tensor `{0}`")]
    Missing(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T, E = CheckpointError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub frozen: bool,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamHeader {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer: Option<ScorerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam: Option<AdamHeader>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub progress: Option<Progress>,
    #[serde(default)]
    pub pad_id: u32,
    pub tensors: Vec<TensorEntry>,
}

/// Named tensors plus header metadata, in memory.
#[derive(Debug, Clone)]
pub struct Container {
    pub header: Header,
    pub payloads: Vec<Vec<f32>>,
}

impl Container {
    fn new() -> Self {
        Self {
            header: Header {
                version: VERSION,
                model: None,
                train: None,
                scorer: None,
                adam: None,
                progress: None,
                pad_id: 0,
                tensors: Vec::new(),
            },
            payloads: Vec::new(),
        }
    }

    fn push<T: Real>(&mut self, name: &str, shape: &[usize], frozen: bool, values: &[T]) {
        let offset = self
            .header
            .tensors
            .last()
            .map(|e| e.offset + e.len * 4)
            .unwrap_or(0);
        self.header.tensors.push(TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            frozen,
            offset,
            len: values.len(),
        });
        self.payloads
            .push(values.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect());
    }

    fn push_set<T: Real>(&mut self, set: &ParamSet<T>) {
        for (name, t) in set.iter() {
            self.push(name, t.shape(), t.frozen, t.values());
        }
    }

    pub fn get(&self, name: &str) -> Option<(&TensorEntry, &[f32])> {
        self.header
            .tensors
            .iter()
            .position(|e| e.name == name)
            .map(|i| (&self.header.tensors[i], self.payloads[i].as_slice()))
    }

    fn fill_set<T: Real>(&self, set: &mut ParamSet<T>) -> Result<()> {
        for (name, t) in set.iter_mut() {
            let (entry, data) = self.get(name).ok_or_else(|| CheckpointError::Missing(name.into()))?;
            if entry.shape != t.shape() {
                return Err(CheckpointError::Format(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    entry.shape,
                    t.shape()
                )));
            }
            for (dst, &src) in t.values_mut().iter_mut().zip(data) {
                *dst = T::from(src).unwrap();
            }
            t.frozen = entry.frozen;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_string(&self.header)?;
        let mut out = Vec::new();
        writeln!(out, "{MAGIC} v{VERSION}")?;
        writeln!(out, "{}", header.len())?;
        out.extend_from_slice(header.as_bytes());
        out.push(b'\n');
        for p in &self.payloads {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rest = bytes;
        let mut line = || -> Result<&str> {
            let nl = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| CheckpointError::Format("truncated preamble".into()))?;
            let l = std::str::from_utf8(&rest[..nl]).map_err(|e| CheckpointError::Format(e.to_string()))?;
            rest = &rest[nl + 1..];
            Ok(l)
        };
        let magic = line()?;
        let version = magic
            .strip_prefix(MAGIC)
            .and_then(|v| v.trim().strip_prefix('v'))
            .ok_or(CheckpointError::Magic)?
            .parse::<u32>()
            .map_err(|_| CheckpointError::Magic)?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let hlen: usize = line()?
            .trim()
            .parse()
            .map_err(|_| CheckpointError::Format("bad header length".into()))?;
        if rest.len() < hlen + 1 {
            return Err(CheckpointError::Format("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&rest[..hlen])?;
        let payload = &rest[hlen + 1..];
        let mut payloads = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let end = e.offset + e.len * 4;
            if end > payload.len() || e.shape.iter().product::<usize>() != e.len {
                return Err(CheckpointError::Format(format!("tensor `{}` out of bounds", e.name)));
            }
            payloads.push(
                payload[e.offset..end]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            );
        }
        Ok(Self { header, payloads })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Model-only container (e.g. for generation).
pub fn model_container<T: Real>(model: &SeqModel<T>, pad_id: u32) -> Container {
    let mut c = Container::new();
    c.header.model = Some(model.config.clone());
    c.header.pad_id = pad_id;
    c.push_set(&model.params);
    c
}

/// Scorer container; every tensor is stored frozen.
pub fn scorer_container<T: Real>(scorer: &Scorer<T>) -> Container {
    let mut c = Container::new();
    c.header.scorer = Some(scorer.lm.config.clone());
    for set in [&scorer.lm.params, &scorer.head.params] {
        for (name, t) in set.iter() {
            c.push(name, t.shape(), true, t.values());
        }
    }
    c
}

/// Full training state: model, frozen scorer, Adam moments and schedule position.
pub fn trainer_container<T: Real>(trainer: &Trainer<T>, pad_id: u32) -> Container {
    let mut c = model_container(&trainer.model, pad_id);
    c.header.train = Some(trainer.config.clone());
    c.header.progress = Some(trainer.progress());
    let a = &trainer.adam;
    c.header.adam = Some(AdamHeader {
        beta1: a.beta1,
        beta2: a.beta2,
        eps: a.eps,
        step: a.step,
    });
    if let Some(s) = &trainer.scorer {
        let sc = scorer_container(s);
        c.header.scorer = sc.header.scorer.clone();
        for (e, p) in sc.header.tensors.iter().zip(&sc.payloads) {
            c.push(&e.name, &e.shape, true, p);
        }
    }
    for (name, (m, v)) in &a.moments {
        c.push(&format!("adam.m.{name}"), &[m.len()], false, m);
        c.push(&format!("adam.v.{name}"), &[v.len()], false, v);
    }
    c
}

pub fn load_model<T: Real>(c: &Container) -> Result<SeqModel<T>> {
    let cfg = c
        .header
        .model
        .clone()
        .ok_or_else(|| CheckpointError::Format("no model configuration".into()))?;
    let mut model = SeqModel::new(cfg, c.header.pad_id, 0).map_err(|e| CheckpointError::Format(e.to_string()))?;
    c.fill_set(&mut model.params)?;
    Ok(model)
}

pub fn load_scorer<T: Real>(c: &Container) -> Result<Scorer<T>> {
    let cfg = c
        .header
        .scorer
        .clone()
        .ok_or_else(|| CheckpointError::Format("no scorer configuration".into()))?;
    let mut lm = ScorerLM::random(cfg.clone(), 0);
    c.fill_set(&mut lm.params)?;
    let (_, w) = c.get("head.weight").ok_or_else(|| CheckpointError::Missing("head.weight".into()))?;
    let (_, b) = c.get("head.bias").ok_or_else(|| CheckpointError::Missing("head.bias".into()))?;
    let head = SemSimHead::from_values(w.iter().map(|&x| T::from(x).unwrap()).collect(), T::from(b[0]).unwrap())
        .map_err(|e| CheckpointError::Format(e.to_string()))?;
    lm.params.set_frozen(true);
    Ok(Scorer { lm, head })
}

/// Rebuilds a trainer over `dataset` from a [`trainer_container`].
pub fn load_trainer<T: Real>(c: &Container, dataset: Vec<crate::trainer::Sample>) -> Result<Trainer<T>> {
    let model = load_model(c)?;
    let scorer = if c.header.scorer.is_some() {
        Some(load_scorer(c)?)
    } else {
        None
    };
    let config = c
        .header
        .train
        .clone()
        .ok_or_else(|| CheckpointError::Format("no training configuration".into()))?;
    let progress = c
        .header
        .progress
        .ok_or_else(|| CheckpointError::Format("no training progress".into()))?;
    let ah = c
        .header
        .adam
        .clone()
        .ok_or_else(|| CheckpointError::Format("no optimizer state".into()))?;
    let mut adam = AdamState {
        beta1: ah.beta1,
        beta2: ah.beta2,
        eps: ah.eps,
        step: ah.step,
        moments: Default::default(),
    };
    for e in &c.header.tensors {
        if let Some(name) = e.name.strip_prefix("adam.m.") {
            let (_, m) = c.get(&e.name).unwrap();
            let (_, v) = c
                .get(&format!("adam.v.{name}"))
                .ok_or_else(|| CheckpointError::Missing(format!("adam.v.{name}")))?;
            let cv = |x: &[f32]| x.iter().map(|&f| T::from(f).unwrap()).collect::<Vec<T>>();
            adam.moments.insert(name.to_string(), (cv(m), cv(v)));
        }
    }
    let mut trainer = Trainer::new(model, scorer, config, dataset).map_err(|e| CheckpointError::Format(e.to_string()))?;
    trainer.restore(adam, progress);
    Ok(trainer)
}

/// Converts a stored tensor back into a [`Tensor`].
pub fn tensor<T: Real>(c: &Container, name: &str) -> Result<Tensor<T>> {
    let (e, data) = c.get(name).ok_or_else(|| CheckpointError::Missing(name.into()))?;
    let mut t = Tensor::new(&e.shape, data.iter().map(|&x| T::from(x).unwrap()).collect())?;
    t.frozen = e.frozen;
    Ok(t)
}
