//! Two-stage BiLSTM diarizer. Stage 1 produces frame representations B
//! (T x 2H) and unit-norm deep-clustering embeddings; stage 2 runs further
//! BiLSTM layers over B and a linear layer to per-frame logits.

use super::init::{orthogonal_gates, xavier_uniform, zeros};
use super::{frame_mask, ModelError, ModelOutput, ParamSet};
use crate::autodiff::{Scalar, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BiLstmConfig {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_stage1")]
    pub stage1_layers: usize,
    #[serde(default = "default_stage2")]
    pub stage2_layers: usize,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    #[serde(default)]
    pub num_classes: usize,
}

fn default_hidden() -> usize {
    256
}
fn default_stage1() -> usize {
    2
}
fn default_stage2() -> usize {
    3
}
fn default_input_dim() -> usize {
    23
}

impl BiLstmConfig {
    pub fn with_classes(num_classes: usize) -> Self {
        BiLstmConfig {
            hidden: default_hidden(),
            stage1_layers: default_stage1(),
            stage2_layers: default_stage2(),
            input_dim: default_input_dim(),
            num_classes,
        }
    }

    pub fn init_params<F: Scalar>(&self, seed: u64) -> ParamSet<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let h = self.hidden;
        let add_bilstm = |p: &mut ParamSet<F>, rng: &mut ChaCha8Rng, prefix: String, d_in: usize| {
            for dir in ["f", "b"] {
                p.insert(&format!("{prefix}.{dir}.wx"), xavier_uniform(rng, d_in, 4 * h));
                p.insert(&format!("{prefix}.{dir}.wh"), orthogonal_gates(rng, h));
                p.insert(&format!("{prefix}.{dir}.b"), zeros(&[4 * h]));
            }
        };
        for l in 0..self.stage1_layers {
            let d_in = if l == 0 { self.input_dim } else { 2 * h };
            add_bilstm(&mut p, &mut rng, format!("stage1.{l}"), d_in);
        }
        p.insert("emb.w", xavier_uniform(&mut rng, 2 * h, h));
        p.insert("emb.b", zeros(&[h]));
        for l in 0..self.stage2_layers {
            add_bilstm(&mut p, &mut rng, format!("stage2.{l}"), 2 * h);
        }
        p.insert("head.w", xavier_uniform(&mut rng, 2 * h, self.num_classes));
        p.insert("head.b", zeros(&[self.num_classes]));
        p
    }

    /// `input`: [T, B, input_dim]. Returns per-frame logits [T, B, C] and
    /// unit-norm embeddings [T, B, H].
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        vars: &BTreeMap<String, Var>,
        input: Var,
        lengths: &[usize],
    ) -> Result<ModelOutput, ModelError> {
        let shape = tape.shape(input).to_vec();
        if shape.len() != 3 || shape[2] != self.input_dim || shape[1] != lengths.len() {
            return Err(ModelError::ShapeMismatch {
                expected: format!("[T, {}, {}]", lengths.len(), self.input_dim),
                got: format!("{shape:?}"),
            });
        }
        let mask = frame_mask::<F>(shape[0], lengths);
        let v = |name: &str| vars[name];

        let mut h = input;
        for l in 0..self.stage1_layers {
            h = tape.bidirectional_lstm(
                h,
                v(&format!("stage1.{l}.f.wx")),
                v(&format!("stage1.{l}.f.wh")),
                v(&format!("stage1.{l}.f.b")),
                v(&format!("stage1.{l}.b.wx")),
                v(&format!("stage1.{l}.b.wh")),
                v(&format!("stage1.{l}.b.b")),
                &mask,
            );
        }
        let b_repr = h;

        let emb_lin = tape.affine(b_repr, v("emb.w"), v("emb.b"));
        let embeddings = tape.row_l2_normalize(emb_lin, F::fl(1e-12));

        let mut s = b_repr;
        for l in 0..self.stage2_layers {
            s = tape.bidirectional_lstm(
                s,
                v(&format!("stage2.{l}.f.wx")),
                v(&format!("stage2.{l}.f.wh")),
                v(&format!("stage2.{l}.f.b")),
                v(&format!("stage2.{l}.b.wx")),
                v(&format!("stage2.{l}.b.wh")),
                v(&format!("stage2.{l}.b.b")),
                &mask,
            );
        }
        let logits_main = tape.affine(s, v("head.w"), v("head.b"));

        Ok(ModelOutput {
            logits_main,
            logits_aux: None,
            embeddings: Some(embeddings),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};
    use rand::Rng;

    fn tiny() -> BiLstmConfig {
        BiLstmConfig {
            hidden: 5,
            stage1_layers: 1,
            stage2_layers: 1,
            input_dim: 4,
            num_classes: 3,
        }
    }

    #[test]
    fn shapes_and_unit_norm_rows() {
        let cfg = tiny();
        let params = cfg.init_params::<f32>(1);
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = tape.constant(ArrayD::from_shape_fn(IxDyn(&[7, 2, 4]), |_| {
            rng.random::<f32>() - 0.5
        }));
        let out = cfg.forward(&mut tape, &vars, x, &[7, 5]).unwrap();
        assert_eq!(tape.shape(out.logits_main), &[7, 2, 3]);
        let emb = out.embeddings.unwrap();
        assert_eq!(tape.shape(emb), &[7, 2, 5]);
        let e = tape.value(emb);
        for t in 0..7 {
            for b in 0..2 {
                let n: f32 = (0..5).map(|j| e[[t, b, j]] * e[[t, b, j]]).sum::<f32>().sqrt();
                assert!((n - 1.0).abs() < 1e-5, "row norm {n}");
            }
        }
    }

    #[test]
    fn default_parameter_count_is_near_nine_million() {
        let cfg = BiLstmConfig::with_classes(3);
        let n = cfg.init_params::<f32>(0).param_count();
        let (lo, hi) = ((9_000_000.0 * 0.75) as usize, (9_000_000.0 * 1.25) as usize);
        assert!(n >= lo && n <= hi, "param count {n} outside [{lo}, {hi}]");
    }

    #[test]
    fn valid_outputs_ignore_trailing_padding() {
        let cfg = tiny();
        let params = cfg.init_params::<f64>(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = ArrayD::from_shape_fn(IxDyn(&[5, 1, 4]), |_| rng.random::<f64>() - 0.5);

        let run = |pad: usize| {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape);
            let mut padded = ArrayD::zeros(IxDyn(&[5 + pad, 1, 4]));
            padded.slice_axis_mut(ndarray::Axis(0), ndarray::Slice::from(0..5)).assign(&data);
            let x = tape.constant(padded);
            let out = cfg.forward(&mut tape, &vars, x, &[5]).unwrap();
            tape.value(out.logits_main)
                .slice_axis(ndarray::Axis(0), ndarray::Slice::from(0..5))
                .to_owned()
        };
        let base = run(0);
        let padded = run(4);
        for (a, b) in base.iter().zip(padded.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = tiny();
        let params = cfg.init_params::<f32>(9);
        let data = ArrayD::from_shape_fn(IxDyn(&[6, 2, 4]), |ix| {
            ((ix[0] * 11 + ix[1] * 5 + ix[2]) as f32).sin()
        });
        let run = || {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape);
            let x = tape.constant(data.clone());
            let out = cfg.forward(&mut tape, &vars, x, &[6, 6]).unwrap();
            tape.value(out.logits_main).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn wrong_input_dim_is_rejected() {
        let cfg = tiny();
        let params = cfg.init_params::<f32>(1);
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let x = tape.constant(ArrayD::zeros(IxDyn(&[7, 1, 9])));
        assert!(matches!(
            cfg.forward(&mut tape, &vars, x, &[7]),
            Err(ModelError::ShapeMismatch { .. })
        ));
    }
}
