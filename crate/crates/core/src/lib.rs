//! Language diarization for code-switched speech.
//!
//! The crate covers the full desk-scale pipeline: WAV ingestion and log-mel
//! features, sample/segment label tracks with hierarchical taxonomies,
//! a reverse-mode autodiff tape, the three diarizer architectures (two-stage
//! BiLSTM with a deep-clustering auxiliary loss, x-vector self-attention,
//! and a linear head over precomputed contextual embeddings), an AdamW
//! training loop with warmup/decay scheduling and gradient accumulation,
//! GER/MER/confusion scoring, and a deterministic synthetic corpus generator.

pub mod autodiff;
pub mod dsp;
pub mod eval;
pub mod labels;
pub mod loss;
pub mod models;
pub mod synth;
pub mod train;

pub use autodiff::{Scalar, Tape, Var};
pub use dsp::{MelConfig, MelFeatures, Waveform};
pub use labels::{
    BoundarySegment, LabelTrack, LanguageId, Manifest, SegmentLabelTrack, TaskTaxonomy,
};
pub use eval::{EvalError, EvalReport};
pub use loss::{LossError, LossValue};
pub use models::{ModelConfig, ModelError, ModelKind, ModelOutput, ParamSet};
pub use synth::{SynthCorpusConfig, SynthError, SynthLanguageSpec};
pub use train::{TrainConfig, TrainError};
