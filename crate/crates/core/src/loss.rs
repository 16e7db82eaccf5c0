//! Training losses: label-smoothed cross-entropy, the deep-clustering loss,
//! and the two multi-objective combinations used by the BiLSTM and XSA
//! diarizers.

use crate::autodiff::{Scalar, Tape, Var};
use ndarray::{Array2, ArrayD, IxDyn};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("all positions are masked")]
    AllMasked,
    #[error("embedding row {row} has norm {norm}, expected unit norm")]
    NonUnitRows { row: usize, norm: f64 },
    #[error("model output carries no auxiliary head")]
    MissingAuxHead,
}

/// A scalar loss node plus the evaluated value of each component.
pub struct LossValue<F: Scalar> {
    pub total: Var,
    pub components: BTreeMap<&'static str, F>,
}

/// Label-smoothed cross-entropy, averaged over valid positions.
///
/// `logits`: [P, B, C]; `labels` and `mask`: [P, B]. The target distribution
/// is `(1 - eps) * onehot + eps / C`.
pub fn ce_label_smoothing<F: Scalar>(
    tape: &mut Tape<F>,
    logits: Var,
    labels: &Array2<usize>,
    mask: &Array2<bool>,
    smoothing: f64,
) -> Result<Var, LossError> {
    assert!((0.0..1.0).contains(&smoothing), "smoothing must be in [0, 1)");
    let shape = tape.shape(logits).to_vec();
    assert_eq!(shape.len(), 3, "ce expects [P, B, C] logits, got {shape:?}");
    let (p_len, batch, classes) = (shape[0], shape[1], shape[2]);
    assert_eq!(labels.dim(), (p_len, batch), "label shape mismatch");
    assert_eq!(mask.dim(), (p_len, batch), "mask shape mismatch");

    let n_valid = mask.iter().filter(|&&m| m).count();
    if n_valid == 0 {
        return Err(LossError::AllMasked);
    }
    // fold the -1/n_valid reduction into the target weights
    let scale = -1.0 / n_valid as f64;
    let off = F::fl(smoothing / classes as f64 * scale);
    let on = F::fl((1.0 - smoothing + smoothing / classes as f64) * scale);
    let mut q = ArrayD::<F>::zeros(IxDyn(&shape));
    for t in 0..p_len {
        for b in 0..batch {
            if mask[[t, b]] {
                for c in 0..classes {
                    q[[t, b, c]] = if c == labels[[t, b]] { on } else { off };
                }
            }
        }
    }
    let logp = tape.log_softmax_last(logits);
    let weighted = tape.mul_constarr(logp, &q);
    Ok(tape.sum_all(weighted))
}

/// Deep-clustering loss for one utterance.
///
/// `embeddings`: [T, H] with unit-norm valid rows. With V the masked
/// embedding rows and Y the masked one-hot labels, the loss is
/// `||V Vt - Y Yt||_F^2 / T_valid^2`, computed through the Gram expansion
/// `||Vt V||^2 - 2 ||Vt Y||^2 + ||Yt Y||^2` so no T x T matrix is formed.
pub fn dc_loss<F: Scalar>(
    tape: &mut Tape<F>,
    embeddings: Var,
    labels: &[usize],
    mask: &[bool],
    num_classes: usize,
) -> Result<Var, LossError> {
    let shape = tape.shape(embeddings).to_vec();
    assert_eq!(shape.len(), 2, "dc expects [T, H] embeddings, got {shape:?}");
    let (t_len, hidden) = (shape[0], shape[1]);
    assert_eq!(labels.len(), t_len);
    assert_eq!(mask.len(), t_len);

    let n_valid = mask.iter().filter(|&&m| m).count();
    if n_valid == 0 {
        return Err(LossError::AllMasked);
    }
    {
        let v = tape.value(embeddings);
        for (row, valid) in mask.iter().enumerate() {
            if !valid {
                continue;
            }
            let norm: f64 = (0..hidden)
                .map(|j| v[[row, j]].to_f64().powi(2))
                .sum::<f64>()
                .sqrt();
            if (norm - 1.0).abs() > 1e-3 {
                return Err(LossError::NonUnitRows { row, norm });
            }
        }
    }

    // zero out masked rows so they drop out of every Gram matrix
    let mut mask_rep = ArrayD::<F>::zeros(IxDyn(&shape));
    for t in 0..t_len {
        if mask[t] {
            mask_rep
                .index_axis_mut(ndarray::Axis(0), t)
                .fill(F::one());
        }
    }
    let v = tape.mul_constarr(embeddings, &mask_rep);

    let mut y = ArrayD::<F>::zeros(IxDyn(&[t_len, num_classes]));
    let mut class_counts = vec![0usize; num_classes];
    for t in 0..t_len {
        if mask[t] {
            y[[t, labels[t]]] = F::one();
            class_counts[labels[t]] += 1;
        }
    }
    // ||Yt Y||^2 is a constant: sum over classes of count^2
    let yy: f64 = class_counts.iter().map(|&c| (c * c) as f64).sum();

    let vt = tape.transpose2d(v);
    let vtv = tape.matmul(vt, v);
    let vtv_sq = tape.square(vtv);
    let term_vv = tape.sum_all(vtv_sq);

    let y_const = tape.constant(y);
    let vty = tape.matmul(vt, y_const);
    let vty_sq = tape.square(vty);
    let term_vy = tape.sum_all(vty_sq);

    let denom = (n_valid * n_valid) as f64;
    let a = tape.scale(term_vv, F::fl(1.0 / denom));
    let b = tape.scale(term_vy, F::fl(-2.0 / denom));
    let ab = tape.add(a, b);
    let yy_arr = ArrayD::from_elem(IxDyn(&[]), F::fl(yy / denom));
    Ok(tape.add_constarr(ab, &yy_arr))
}

/// BiLSTM multi-objective loss:
/// `alpha * CE + (1 - alpha) * DC` with DC averaged over the batch.
#[allow(clippy::too_many_arguments)]
pub fn bilstm_loss<F: Scalar>(
    tape: &mut Tape<F>,
    logits: Var,
    embeddings: Var,
    labels: &Array2<usize>,
    mask: &Array2<bool>,
    alpha: f64,
    smoothing: f64,
) -> Result<LossValue<F>, LossError> {
    assert!((0.0..=1.0).contains(&alpha), "alpha must be in [0, 1]");
    let ce = ce_label_smoothing(tape, logits, labels, mask, smoothing)?;

    let emb_shape = tape.shape(embeddings).to_vec();
    let (t_len, batch, hidden) = (emb_shape[0], emb_shape[1], emb_shape[2]);
    let num_classes = *tape.shape(logits).last().unwrap();
    let mut dc_terms = Vec::with_capacity(batch);
    for b in 0..batch {
        let col_labels: Vec<usize> = (0..t_len).map(|t| labels[[t, b]]).collect();
        let col_mask: Vec<bool> = (0..t_len).map(|t| mask[[t, b]]).collect();
        if !col_mask.iter().any(|&m| m) {
            continue;
        }
        let sliced = tape.slice_axis_op(embeddings, 1, b, b + 1);
        let emb_b = tape.reshape(sliced, &[t_len, hidden]);
        dc_terms.push(dc_loss(tape, emb_b, &col_labels, &col_mask, num_classes)?);
    }
    if dc_terms.is_empty() {
        return Err(LossError::AllMasked);
    }
    let mut dc_sum = dc_terms[0];
    for &t in &dc_terms[1..] {
        dc_sum = tape.add(dc_sum, t);
    }
    let dc = tape.scale(dc_sum, F::fl(1.0 / dc_terms.len() as f64));

    let ce_scaled = tape.scale(ce, F::fl(alpha));
    let dc_scaled = tape.scale(dc, F::fl(1.0 - alpha));
    let total = tape.add(ce_scaled, dc_scaled);
    let mut components = BTreeMap::new();
    components.insert("ce", tape.scalar_value(ce));
    components.insert("dc", tape.scalar_value(dc));
    Ok(LossValue { total, components })
}

/// XSA dual-head loss: `alpha * CE(transformer) + (1 - alpha) * CE(x-vector)`.
/// Only the transformer head is used for predictions at test time.
pub fn xsa_loss<F: Scalar>(
    tape: &mut Tape<F>,
    logits_main: Var,
    logits_aux: Option<Var>,
    labels: &Array2<usize>,
    mask: &Array2<bool>,
    alpha: f64,
    smoothing: f64,
) -> Result<LossValue<F>, LossError> {
    assert!((0.0..=1.0).contains(&alpha), "alpha must be in [0, 1]");
    let aux = logits_aux.ok_or(LossError::MissingAuxHead)?;
    let ce_t = ce_label_smoothing(tape, logits_main, labels, mask, smoothing)?;
    let ce_x = ce_label_smoothing(tape, aux, labels, mask, smoothing)?;
    let a = tape.scale(ce_t, F::fl(alpha));
    let b = tape.scale(ce_x, F::fl(1.0 - alpha));
    let total = tape.add(a, b);
    let mut components = BTreeMap::new();
    components.insert("ce_transformer", tape.scalar_value(ce_t));
    components.insert("ce_xvector", tape.scalar_value(ce_x));
    Ok(LossValue { total, components })
}
