//! The three diarizer architectures: two-stage BiLSTM with deep-clustering
//! embeddings, x-vector self-attention (XSA), and a linear head over
//! precomputed contextual embeddings.
//!
//! Parameters live in a [`ParamSet`] (name -> tensor) so the optimizer,
//! checkpointing, and cascade initialization are architecture-agnostic.
//! Forward passes build onto a caller-supplied tape; inputs are time-major
//! `[T, B, d]` and outputs `[T_out, B, C]`.

mod bilstm;
mod embd;
mod encoder;
mod init;
mod xsa;

pub use bilstm::BiLstmConfig;
pub use embd::{read_embd, write_embd};
pub use encoder::{EncoderHeadConfig, EMBED_DOWNSAMPLE, EMBED_FRAMERATE_MS};
pub use xsa::XsaConfig;

use crate::autodiff::{Scalar, Tape, Var};
use ndarray::{Array2, ArrayD};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("input too short: {got} frames, need at least {need}")]
    TooShort { got: usize, need: usize },
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Bilstm,
    Xsa,
    EncoderHead,
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bilstm" => Ok(ModelKind::Bilstm),
            "xsa" => Ok(ModelKind::Xsa),
            "encoder-head" => Ok(ModelKind::EncoderHead),
            other => Err(format!("unknown model kind {other:?}")),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Bilstm => "bilstm",
            ModelKind::Xsa => "xsa",
            ModelKind::EncoderHead => "encoder-head",
        })
    }
}

/// One architecture config, tagged for checkpoint metadata.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    Bilstm(BiLstmConfig),
    Xsa(XsaConfig),
    EncoderHead(EncoderHeadConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Bilstm(_) => ModelKind::Bilstm,
            ModelConfig::Xsa(_) => ModelKind::Xsa,
            ModelConfig::EncoderHead(_) => ModelKind::EncoderHead,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ModelConfig::Bilstm(c) => c.num_classes,
            ModelConfig::Xsa(c) => c.num_classes,
            ModelConfig::EncoderHead(c) => c.num_classes,
        }
    }

    pub fn set_num_classes(&mut self, n: usize) {
        match self {
            ModelConfig::Bilstm(c) => c.num_classes = n,
            ModelConfig::Xsa(c) => c.num_classes = n,
            ModelConfig::EncoderHead(c) => c.num_classes = n,
        }
    }

    pub fn init_params<F: Scalar>(&self, seed: u64) -> ParamSet<F> {
        match self {
            ModelConfig::Bilstm(c) => c.init_params(seed),
            ModelConfig::Xsa(c) => c.init_params(seed),
            ModelConfig::EncoderHead(c) => c.init_params(seed),
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        vars: &BTreeMap<String, Var>,
        input: Var,
        lengths: &[usize],
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<ModelOutput, ModelError> {
        match self {
            ModelConfig::Bilstm(c) => c.forward(tape, vars, input, lengths),
            ModelConfig::Xsa(c) => c.forward(tape, vars, input, lengths, training, rng),
            ModelConfig::EncoderHead(c) => c.forward(tape, vars, input),
        }
    }

    /// Output rows produced for an utterance of `t` input frames.
    pub fn output_len(&self, t: usize) -> usize {
        match self {
            ModelConfig::Bilstm(_) | ModelConfig::EncoderHead(_) => t,
            ModelConfig::Xsa(c) => t / c.segment_frames,
        }
    }

    /// Prefixes of the final classification layer(s), excluded from cascade
    /// initialization.
    pub fn head_prefixes(&self) -> &'static [&'static str] {
        match self {
            ModelConfig::Bilstm(_) | ModelConfig::EncoderHead(_) => &["head."],
            ModelConfig::Xsa(_) => &["head.", "xvec_head."],
        }
    }

    /// Same architecture up to the classification head width.
    pub fn compatible_backbone(&self, other: &ModelConfig) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.set_num_classes(0);
        b.set_num_classes(0);
        a == b
    }
}

/// Named parameter tensors in deterministic (sorted) order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F: Scalar> {
    pub tensors: BTreeMap<String, ArrayD<F>>,
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, t: ArrayD<F>) {
        let prev = self.tensors.insert(name.to_string(), t);
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Register every tensor as a differentiable leaf on a fresh tape.
    pub fn register(&self, tape: &mut Tape<F>) -> BTreeMap<String, Var> {
        self.tensors
            .iter()
            .map(|(name, t)| (name.clone(), tape.leaf(t.clone())))
            .collect()
    }

    pub fn cast<G: Scalar>(&self) -> ParamSet<G> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| (n.clone(), t.mapv(|v| G::fl(v.to_f64()))))
                .collect(),
        }
    }
}

impl<F: Scalar> Default for ParamSet<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Forward-pass outputs as tape nodes.
pub struct ModelOutput {
    /// `[T_out, B, C]` main logits.
    pub logits_main: Var,
    /// XSA x-vector head, `[S, B, C]`.
    pub logits_aux: Option<Var>,
    /// BiLSTM deep-clustering embeddings, `[T, B, H]`, unit-norm rows.
    pub embeddings: Option<Var>,
}

/// Copy all non-head tensors from `source` into a freshly initialized
/// parameter set for `target_cfg` (which may have a different class count).
pub fn init_cascade<F: Scalar>(
    target_cfg: &ModelConfig,
    source_cfg: &ModelConfig,
    source: &ParamSet<F>,
    seed: u64,
) -> Result<ParamSet<F>, ModelError> {
    if !target_cfg.compatible_backbone(source_cfg) {
        return Err(ModelError::ArchitectureMismatch(format!(
            "backbones differ: {source_cfg:?} vs {target_cfg:?}"
        )));
    }
    let mut fresh: ParamSet<F> = target_cfg.init_params(seed);
    let heads = target_cfg.head_prefixes();
    for (name, tensor) in &source.tensors {
        if heads.iter().any(|p| name.starts_with(p)) {
            continue;
        }
        let slot = fresh.tensors.get_mut(name).ok_or_else(|| {
            ModelError::ArchitectureMismatch(format!("source parameter {name} has no target slot"))
        })?;
        if slot.shape() != tensor.shape() {
            return Err(ModelError::ArchitectureMismatch(format!(
                "parameter {name}: source shape {:?} vs target {:?}",
                tensor.shape(),
                slot.shape()
            )));
        }
        slot.assign(tensor);
    }
    Ok(fresh)
}

/// `[T, B]` numeric mask with 1 at positions `t < lengths[b]`.
pub fn frame_mask<F: Scalar>(t_max: usize, lengths: &[usize]) -> Array2<F> {
    Array2::from_shape_fn((t_max, lengths.len()), |(t, b)| {
        if t < lengths[b] {
            F::one()
        } else {
            F::zero()
        }
    })
}

/// Boolean counterpart of [`frame_mask`], for loss and metric code.
pub fn bool_mask(t_max: usize, lengths: &[usize]) -> Array2<bool> {
    Array2::from_shape_fn((t_max, lengths.len()), |(t, b)| t < lengths[b])
}
