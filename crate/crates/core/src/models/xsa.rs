//! X-vector self-attention diarizer. The input is cut into non-overlapping
//! 19-frame (200 ms) segments; a per-segment TDNN with mean+variance pooling
//! produces one x-vector per segment, scored by an auxiliary linear head.
//! The x-vector sequence plus sinusoidal positions runs through pre-norm
//! transformer encoder blocks and a linear layer for the main logits.

use super::init::{ones, xavier_uniform, zeros};
use super::{ModelError, ModelOutput, ParamSet};
use crate::autodiff::{sinusoidal_positions, Scalar, Tape, Var};
use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// TDNN frame contexts: one dense window, two dilated layers, two pointwise.
const TDNN_CONTEXTS: [&[isize]; 5] = [&[-2, -1, 0, 1, 2], &[-2, 0, 2], &[-3, 0, 3], &[0], &[0]];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct XsaConfig {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_blocks")]
    pub num_blocks: usize,
    #[serde(default = "default_heads")]
    pub num_heads: usize,
    #[serde(default = "default_segment_frames")]
    pub segment_frames: usize,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    #[serde(default)]
    pub num_classes: usize,
    #[serde(default = "default_tdnn_widths")]
    pub tdnn_widths: Vec<usize>,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

fn default_hidden() -> usize {
    256
}
fn default_blocks() -> usize {
    4
}
fn default_heads() -> usize {
    4
}
fn default_segment_frames() -> usize {
    19
}
fn default_input_dim() -> usize {
    23
}
fn default_tdnn_widths() -> Vec<usize> {
    vec![1024, 1024, 1024, 1024, 1500]
}
fn default_dropout() -> f64 {
    0.1
}

impl XsaConfig {
    pub fn with_classes(num_classes: usize) -> Self {
        XsaConfig {
            hidden: default_hidden(),
            num_blocks: default_blocks(),
            num_heads: default_heads(),
            segment_frames: default_segment_frames(),
            input_dim: default_input_dim(),
            num_classes,
            tdnn_widths: default_tdnn_widths(),
            dropout: default_dropout(),
        }
    }

    fn check(&self) {
        assert_eq!(self.tdnn_widths.len(), TDNN_CONTEXTS.len(), "need 5 TDNN widths");
        assert_eq!(self.hidden % self.num_heads, 0, "heads must divide hidden");
        assert_eq!(self.hidden % 2, 0, "hidden must be even for positions");
    }

    pub fn init_params<F: Scalar>(&self, seed: u64) -> ParamSet<F> {
        self.check();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let h = self.hidden;

        let mut d_in = self.input_dim;
        for (l, (&width, ctx)) in self.tdnn_widths.iter().zip(TDNN_CONTEXTS).enumerate() {
            p.insert(&format!("tdnn.{l}.w"), xavier_uniform(&mut rng, d_in * ctx.len(), width));
            p.insert(&format!("tdnn.{l}.b"), zeros(&[width]));
            p.insert(&format!("tdnn.{l}.ln.g"), ones(&[width]));
            p.insert(&format!("tdnn.{l}.ln.b"), zeros(&[width]));
            d_in = width;
        }
        let pooled = 2 * d_in;
        p.insert("proj.w", xavier_uniform(&mut rng, pooled, h));
        p.insert("proj.b", zeros(&[h]));
        p.insert("xvec_head.w", xavier_uniform(&mut rng, h, self.num_classes));
        p.insert("xvec_head.b", zeros(&[self.num_classes]));

        for i in 0..self.num_blocks {
            let pre = format!("block.{i}");
            p.insert(&format!("{pre}.ln1.g"), ones(&[h]));
            p.insert(&format!("{pre}.ln1.b"), zeros(&[h]));
            for name in ["wq", "wk", "wv", "wo"] {
                p.insert(&format!("{pre}.attn.{name}"), xavier_uniform(&mut rng, h, h));
            }
            // no key bias: it shifts every score in a softmax row equally,
            // so it cannot affect the attention weights
            for name in ["bq", "bv", "bo"] {
                p.insert(&format!("{pre}.attn.{name}"), zeros(&[h]));
            }
            p.insert(&format!("{pre}.ln2.g"), ones(&[h]));
            p.insert(&format!("{pre}.ln2.b"), zeros(&[h]));
            p.insert(&format!("{pre}.ff.w1"), xavier_uniform(&mut rng, h, 4 * h));
            p.insert(&format!("{pre}.ff.b1"), zeros(&[4 * h]));
            p.insert(&format!("{pre}.ff.w2"), xavier_uniform(&mut rng, 4 * h, h));
            p.insert(&format!("{pre}.ff.b2"), zeros(&[h]));
        }
        p.insert("final_ln.g", ones(&[h]));
        p.insert("final_ln.b", zeros(&[h]));
        p.insert("head.w", xavier_uniform(&mut rng, h, self.num_classes));
        p.insert("head.b", zeros(&[self.num_classes]));
        p
    }

    /// Valid segment count for an utterance of `frames` feature frames.
    pub fn segments_for(&self, frames: usize) -> usize {
        frames / self.segment_frames
    }

    /// `input`: [T, B, input_dim] with T >= segment_frames. Returns
    /// logits_main and logits_aux of shape [S, B, C] with S = T /
    /// segment_frames.
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        vars: &BTreeMap<String, Var>,
        input: Var,
        lengths: &[usize],
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<ModelOutput, ModelError> {
        self.check();
        let shape = tape.shape(input).to_vec();
        if shape.len() != 3 || shape[2] != self.input_dim || shape[1] != lengths.len() {
            return Err(ModelError::ShapeMismatch {
                expected: format!("[T, {}, {}]", lengths.len(), self.input_dim),
                got: format!("{shape:?}"),
            });
        }
        let (t_max, batch) = (shape[0], shape[1]);
        let seg = self.segment_frames;
        if t_max < seg {
            return Err(ModelError::TooShort {
                got: t_max,
                need: seg,
            });
        }
        let s_max = t_max / seg;
        let h = self.hidden;
        let v = |name: &str| vars[name];

        // per-segment x-vectors: TDNN confined to the segment's 19 frames
        let mut seg_vecs = Vec::with_capacity(s_max);
        for s in 0..s_max {
            let mut x = tape.slice_axis_op(input, 0, s * seg, (s + 1) * seg);
            for (l, ctx) in TDNN_CONTEXTS.iter().enumerate() {
                let x_ctx = if ctx.len() == 1 && ctx[0] == 0 {
                    x
                } else {
                    let parts: Vec<Var> =
                        ctx.iter().map(|&o| tape.shift_time(x, o)).collect();
                    tape.concat(2, &parts)
                };
                let a = tape.affine(x_ctx, v(&format!("tdnn.{l}.w")), v(&format!("tdnn.{l}.b")));
                let r = tape.relu(a);
                let n = tape.layer_norm_last(r, F::fl(1e-5));
                let g = tape.mul_rowbcast(n, v(&format!("tdnn.{l}.ln.g")));
                x = tape.add_rowbcast(g, v(&format!("tdnn.{l}.ln.b")));
            }
            // mean + variance pooling over the segment's frames
            let inv = F::fl(1.0 / seg as f64);
            let sum = tape.sum_axis_op(x, 0);
            let mean = tape.scale(sum, inv);
            let sq = tape.square(x);
            let sq_sum = tape.sum_axis_op(sq, 0);
            let mean_sq = tape.scale(sq_sum, inv);
            let mean2 = tape.square(mean);
            let var = tape.sub(mean_sq, mean2);
            let pooled = tape.concat(1, &[mean, var]);
            let width = *tape.shape(pooled).last().unwrap();
            seg_vecs.push(tape.reshape(pooled, &[1, batch, width]));
        }
        let pooled_seq = if seg_vecs.len() == 1 {
            seg_vecs[0]
        } else {
            tape.concat(0, &seg_vecs)
        };
        let xvec = tape.affine(pooled_seq, v("proj.w"), v("proj.b"));
        let logits_aux = tape.affine(xvec, v("xvec_head.w"), v("xvec_head.b"));

        // add sinusoidal positions, broadcast over the batch
        let pe = sinusoidal_positions::<F>(s_max, h).expect("hidden checked even");
        let pe3 = ArrayD::from_shape_fn(IxDyn(&[s_max, batch, h]), |ix| pe[[ix[0], ix[2]]]);
        let mut z = tape.add_constarr(xvec, &pe3);

        // additive attention bias: -1e9 on padded key columns, per utterance
        let neg = F::fl(-1e9);
        let seg_lengths: Vec<usize> = lengths.iter().map(|&l| l / seg).collect();
        let biases: Vec<ArrayD<F>> = seg_lengths
            .iter()
            .map(|&sl| {
                ArrayD::from_shape_fn(IxDyn(&[s_max, s_max]), |ix| {
                    if ix[1] < sl {
                        F::zero()
                    } else {
                        neg
                    }
                })
            })
            .collect();

        let head_dim = h / self.num_heads;
        let scale = F::fl(1.0 / (head_dim as f64).sqrt());
        let zero_bias = tape.constant(ArrayD::zeros(IxDyn(&[h])));
        for i in 0..self.num_blocks {
            let pre = format!("block.{i}");
            let n1 = tape.layer_norm_last(z, F::fl(1e-5));
            let g1 = tape.mul_rowbcast(n1, v(&format!("{pre}.ln1.g")));
            let a = tape.add_rowbcast(g1, v(&format!("{pre}.ln1.b")));
            let q = tape.affine(a, v(&format!("{pre}.attn.wq")), v(&format!("{pre}.attn.bq")));
            let k = tape.affine(a, v(&format!("{pre}.attn.wk")), zero_bias);
            let val = tape.affine(a, v(&format!("{pre}.attn.wv")), v(&format!("{pre}.attn.bv")));

            let mut per_batch = Vec::with_capacity(batch);
            for b in 0..batch {
                let take = |tape: &mut Tape<F>, x: Var| {
                    let s3 = tape.slice_axis_op(x, 1, b, b + 1);
                    tape.reshape(s3, &[s_max, h])
                };
                let qb = take(tape, q);
                let kb = take(tape, k);
                let vb = take(tape, val);
                let mut head_outs = Vec::with_capacity(self.num_heads);
                for hd in 0..self.num_heads {
                    let (lo, hi) = (hd * head_dim, (hd + 1) * head_dim);
                    let qh = tape.slice_axis_op(qb, 1, lo, hi);
                    let kh = tape.slice_axis_op(kb, 1, lo, hi);
                    let vh = tape.slice_axis_op(vb, 1, lo, hi);
                    let kt = tape.transpose2d(kh);
                    let scores = tape.matmul(qh, kt);
                    let scaled = tape.scale(scores, scale);
                    let masked = tape.add_constarr(scaled, &biases[b]);
                    let attn = tape.softmax_last(masked);
                    head_outs.push(tape.matmul(attn, vh));
                }
                let merged = tape.concat(1, &head_outs);
                per_batch.push(tape.reshape(merged, &[s_max, 1, h]));
            }
            let attn_all = if batch == 1 {
                per_batch[0]
            } else {
                tape.concat(1, &per_batch)
            };
            let o = tape.affine(
                attn_all,
                v(&format!("{pre}.attn.wo")),
                v(&format!("{pre}.attn.bo")),
            );
            let o = tape.dropout(o, self.dropout, training, rng);
            z = tape.add(z, o);

            let n2 = tape.layer_norm_last(z, F::fl(1e-5));
            let g2 = tape.mul_rowbcast(n2, v(&format!("{pre}.ln2.g")));
            let a2 = tape.add_rowbcast(g2, v(&format!("{pre}.ln2.b")));
            let f1 = tape.affine(a2, v(&format!("{pre}.ff.w1")), v(&format!("{pre}.ff.b1")));
            let ge = tape.gelu(f1);
            let f2 = tape.affine(ge, v(&format!("{pre}.ff.w2")), v(&format!("{pre}.ff.b2")));
            let f2 = tape.dropout(f2, self.dropout, training, rng);
            z = tape.add(z, f2);
        }

        let nf = tape.layer_norm_last(z, F::fl(1e-5));
        let gf = tape.mul_rowbcast(nf, v("final_ln.g"));
        let zf = tape.add_rowbcast(gf, v("final_ln.b"));
        let logits_main = tape.affine(zf, v("head.w"), v("head.b"));

        Ok(ModelOutput {
            logits_main,
            logits_aux: Some(logits_aux),
            embeddings: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Axis, Slice};

    fn tiny() -> XsaConfig {
        XsaConfig {
            hidden: 8,
            num_blocks: 2,
            num_heads: 2,
            segment_frames: 4,
            input_dim: 3,
            num_classes: 3,
            tdnn_widths: vec![6, 6, 6, 6, 10],
            dropout: 0.0,
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn ninety_five_frames_give_five_segments() {
        let cfg = XsaConfig {
            segment_frames: 19,
            ..tiny()
        };
        let params = cfg.init_params::<f32>(1);
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let x = tape.constant(ArrayD::from_shape_fn(IxDyn(&[95, 2, 3]), |_| {
            use rand::Rng;
            r.random::<f32>() - 0.5
        }));
        let out = cfg
            .forward(&mut tape, &vars, x, &[95, 60], false, &mut rng())
            .unwrap();
        assert_eq!(tape.shape(out.logits_main), &[5, 2, 3]);
        assert_eq!(tape.shape(out.logits_aux.unwrap()), &[5, 2, 3]);
    }

    #[test]
    fn default_parameter_count_is_near_twelve_million() {
        let cfg = XsaConfig::with_classes(3);
        let n = cfg.init_params::<f32>(0).param_count();
        let (lo, hi) = ((12_000_000.0 * 0.75) as usize, (12_000_000.0 * 1.25) as usize);
        assert!(n >= lo && n <= hi, "param count {n} outside [{lo}, {hi}]");
    }

    #[test]
    fn too_short_input_is_rejected() {
        let cfg = tiny();
        let params = cfg.init_params::<f32>(1);
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let x = tape.constant(ArrayD::zeros(IxDyn(&[3, 1, 3])));
        assert!(matches!(
            cfg.forward(&mut tape, &vars, x, &[3], false, &mut rng()),
            Err(ModelError::TooShort { got: 3, need: 4 })
        ));
    }

    #[test]
    fn permuting_segments_permutes_aux_logits_rows() {
        let cfg = tiny();
        let params = cfg.init_params::<f64>(2);
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let base = ArrayD::from_shape_fn(IxDyn(&[12, 1, 3]), |_| {
            use rand::Rng;
            r.random::<f64>() - 0.5
        });
        // swap segments 0 and 2 (frames 0..4 and 8..12)
        let mut swapped = base.clone();
        for f in 0..4 {
            for d in 0..3 {
                swapped[[f, 0, d]] = base[[8 + f, 0, d]];
                swapped[[8 + f, 0, d]] = base[[f, 0, d]];
            }
        }
        let run = |data: ArrayD<f64>| {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape);
            let x = tape.constant(data);
            let out = cfg
                .forward(&mut tape, &vars, x, &[12], false, &mut rng())
                .unwrap();
            tape.value(out.logits_aux.unwrap()).clone()
        };
        let a = run(base);
        let b = run(swapped);
        for c in 0..3 {
            assert!((a[[0, 0, c]] - b[[2, 0, c]]).abs() < 1e-12);
            assert!((a[[2, 0, c]] - b[[0, 0, c]]).abs() < 1e-12);
            assert!((a[[1, 0, c]] - b[[1, 0, c]]).abs() < 1e-12);
        }
    }

    #[test]
    fn valid_logits_ignore_appended_padding() {
        let cfg = tiny();
        let params = cfg.init_params::<f64>(3);
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let data = ArrayD::from_shape_fn(IxDyn(&[12, 1, 3]), |_| {
            use rand::Rng;
            r.random::<f64>() - 0.5
        });
        let run = |pad: usize| {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape);
            let mut padded = ArrayD::zeros(IxDyn(&[12 + pad, 1, 3]));
            padded
                .slice_axis_mut(Axis(0), Slice::from(0..12))
                .assign(&data);
            let x = tape.constant(padded);
            let out = cfg
                .forward(&mut tape, &vars, x, &[12], false, &mut rng())
                .unwrap();
            tape.value(out.logits_main)
                .slice_axis(Axis(0), Slice::from(0..3))
                .to_owned()
        };
        let a = run(0);
        let b = run(8);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn eval_mode_forward_is_deterministic() {
        let cfg = tiny();
        let params = cfg.init_params::<f32>(4);
        let data = ArrayD::from_shape_fn(IxDyn(&[8, 2, 3]), |ix| {
            ((ix[0] * 7 + ix[1] * 3 + ix[2]) as f32).cos()
        });
        let run = || {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape);
            let x = tape.constant(data.clone());
            let out = cfg
                .forward(&mut tape, &vars, x, &[8, 8], false, &mut rng())
                .unwrap();
            tape.value(out.logits_main).clone()
        };
        assert_eq!(run(), run());
    }
}
