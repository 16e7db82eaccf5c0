//! Linear classification head over precomputed contextual embeddings
//! (20 ms frames, a 320x downsampling of the 16 kHz waveform).

use super::init::{xavier_uniform, zeros};
use super::{ModelError, ModelOutput, ParamSet};
use crate::autodiff::{Scalar, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const EMBED_DOWNSAMPLE: usize = 320;
pub const EMBED_FRAMERATE_MS: usize = 20;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EncoderHeadConfig {
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default)]
    pub num_classes: usize,
}

fn default_embed_dim() -> usize {
    768
}

impl EncoderHeadConfig {
    pub fn with_classes(num_classes: usize) -> Self {
        EncoderHeadConfig {
            embed_dim: default_embed_dim(),
            num_classes,
        }
    }

    pub fn init_params<F: Scalar>(&self, seed: u64) -> ParamSet<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        p.insert("head.w", xavier_uniform(&mut rng, self.embed_dim, self.num_classes));
        p.insert("head.b", zeros(&[self.num_classes]));
        p
    }

    /// `input`: [T, B, embed_dim] -> logits [T, B, C], one per 20 ms frame.
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        vars: &BTreeMap<String, Var>,
        input: Var,
    ) -> Result<ModelOutput, ModelError> {
        let shape = tape.shape(input).to_vec();
        if shape.len() != 3 || shape[2] != self.embed_dim {
            return Err(ModelError::ShapeMismatch {
                expected: format!("[T, B, {}]", self.embed_dim),
                got: format!("{shape:?}"),
            });
        }
        let logits_main = tape.affine(input, vars["head.w"], vars["head.b"]);
        Ok(ModelOutput {
            logits_main,
            logits_aux: None,
            embeddings: None,
        })
    }
}
