//! Error-rate metrics, GER/MER aggregation and confusion matrices.
//!
//! GER weights every valid prediction in the evaluation set equally; MER
//! weights every utterance equally. Both are computed over valid (unmasked)
//! positions only.

use crate::dsp::{load_wav, mel_spectrogram, DspError, MelConfig};
use crate::labels::{
    boundaries_to_samples, downsample_labels, map_taxonomy, LabelError, Manifest, ManifestEntry,
    Split, TaskTaxonomy,
};
use crate::models::{read_embd, ModelConfig, ModelError, ParamSet};
use crate::autodiff::Tape;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction has {pred} positions but truth has {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("no valid positions to score")]
    AllMasked,
    #[error("empty result set")]
    Empty,
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("model with {num_classes} classes matches no task taxonomy")]
    UnknownTaxonomy { num_classes: usize },
    #[error("cannot score a {model:?} model against the finer {requested:?} taxonomy")]
    IncompatibleTaxonomy {
        model: TaskTaxonomy,
        requested: TaskTaxonomy,
    },
    #[error("utterance {utt_id} has no embedding file")]
    MissingEmbeddings { utt_id: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Label(#[from] LabelError),
}

/// Scored utterance: mismatch count over valid positions.
#[derive(Debug, Clone, Serialize)]
pub struct UtteranceScore {
    pub utt_id: String,
    pub error_rate: f64,
    pub errors: usize,
    pub valid: usize,
}

/// Mismatches and valid-position count between two segment label tracks.
pub fn count_errors(
    pred: &[usize],
    truth: &[usize],
    mask: &[bool],
) -> Result<(usize, usize), EvalError> {
    if pred.len() != truth.len() || pred.len() != mask.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len().min(mask.len()),
        });
    }
    let mut errors = 0usize;
    let mut valid = 0usize;
    for i in 0..pred.len() {
        if mask[i] {
            valid += 1;
            if pred[i] != truth[i] {
                errors += 1;
            }
        }
    }
    if valid == 0 {
        return Err(EvalError::AllMasked);
    }
    Ok((errors, valid))
}

/// Fraction of valid positions where prediction and truth disagree.
pub fn error_rate(pred: &[usize], truth: &[usize], mask: &[bool]) -> Result<f64, EvalError> {
    let (errors, valid) = count_errors(pred, truth, mask)?;
    Ok(errors as f64 / valid as f64)
}

/// (GER, MER): total errors over total valid positions, and the unweighted
/// mean of per-utterance error rates.
pub fn aggregate(scores: &[UtteranceScore]) -> Result<(f64, f64), EvalError> {
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    let errors: usize = scores.iter().map(|s| s.errors).sum();
    let valid: usize = scores.iter().map(|s| s.valid).sum();
    let ger = errors as f64 / valid as f64;
    let mer = scores.iter().map(|s| s.error_rate).sum::<f64>() / scores.len() as f64;
    Ok((ger, mer))
}

/// Count matrix over (truth, prediction) pairs; rows are truth.
pub fn confusion_matrix(
    pairs: &[(usize, usize)],
    num_classes: usize,
) -> Result<Array2<u64>, EvalError> {
    let mut counts = Array2::zeros((num_classes, num_classes));
    for &(truth, pred) in pairs {
        for label in [truth, pred] {
            if label >= num_classes {
                return Err(EvalError::LabelOutOfRange { label, num_classes });
            }
        }
        counts[[truth, pred]] += 1;
    }
    Ok(counts)
}

/// Row-normalized view; all-zero rows stay zero.
pub fn normalize_confusion(counts: &Array2<u64>) -> Array2<f64> {
    let mut out = Array2::zeros(counts.raw_dim());
    for (r, row) in counts.outer_iter().enumerate() {
        let total: u64 = row.sum();
        if total > 0 {
            for (c, &v) in row.iter().enumerate() {
                out[[r, c]] = v as f64 / total as f64;
            }
        }
    }
    out
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub taxonomy: TaskTaxonomy,
    pub ger: f64,
    pub mer: f64,
    pub per_utterance: Vec<UtteranceScore>,
    /// Rows are truth, columns prediction.
    pub confusion: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl EvalReport {
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("truth");
        for name in &self.class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (r, row) in self.confusion.iter().enumerate() {
            out.push_str(&self.class_names[r]);
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Taxonomy a model's class count implies.
pub fn model_taxonomy(cfg: &ModelConfig) -> Result<TaskTaxonomy, EvalError> {
    match cfg.num_classes() {
        2 => Ok(TaskTaxonomy::Task1),
        3 => Ok(TaskTaxonomy::Task2),
        5 => Ok(TaskTaxonomy::Task3),
        num_classes => Err(EvalError::UnknownTaxonomy { num_classes }),
    }
}

/// Per-utterance model input: log-mel frames, or stored contextual
/// embeddings for the encoder-head model.
pub fn load_model_input(
    cfg: &ModelConfig,
    entry: &ManifestEntry,
    mel: &MelConfig,
) -> Result<Array2<f32>, EvalError> {
    match cfg {
        ModelConfig::EncoderHead(_) => {
            let path = entry
                .embd_path
                .as_ref()
                .ok_or_else(|| EvalError::MissingEmbeddings {
                    utt_id: entry.utt_id.clone(),
                })?;
            Ok(read_embd(path)?)
        }
        _ => {
            let wave = load_wav(&entry.wav_path)?;
            Ok(mel_spectrogram(&wave, mel)?.values)
        }
    }
}

/// Argmax class predictions for one utterance at the model's segment rate.
pub fn predict(
    cfg: &ModelConfig,
    params: &ParamSet<f32>,
    features: &Array2<f32>,
) -> Result<Vec<usize>, EvalError> {
    let t = features.nrows();
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let input = tape.constant(
        features
            .to_owned()
            .into_shape_with_order(ndarray::IxDyn(&[t, 1, features.ncols()]))
            .expect("row-major reshape"),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = cfg.forward(&mut tape, &vars, input, &[t], false, &mut rng)?;
    let logits = tape.value(out.logits_main);
    let c = cfg.num_classes();
    let preds = (0..cfg.output_len(t))
        .map(|s| {
            let row: Vec<f32> = (0..c).map(|j| logits[[s, 0, j]]).collect();
            argmax(&row)
        })
        .collect();
    Ok(preds)
}

/// Score a model over one manifest split.
///
/// Ground truth is expanded to samples and downsampled to the model's
/// prediction rate; when `taxonomy` is coarser than the model's native
/// taxonomy both predictions and truth are remapped before scoring.
pub fn evaluate_model(
    cfg: &ModelConfig,
    params: &ParamSet<f32>,
    manifest: &Manifest,
    split: Split,
    taxonomy: TaskTaxonomy,
    mel: &MelConfig,
) -> Result<EvalReport, EvalError> {
    let native = model_taxonomy(cfg)?;
    if !taxonomy.is_coarser_or_equal_than(native) {
        return Err(EvalError::IncompatibleTaxonomy {
            model: native,
            requested: taxonomy,
        });
    }
    let mut scores = Vec::new();
    let mut pairs = Vec::new();
    for entry in manifest.split(split) {
        let features = load_model_input(cfg, entry, mel)?;
        let preds_native = predict(cfg, params, &features)?;
        let track = boundaries_to_samples(&entry.boundaries, entry.num_samples(), native)?;
        let truth_native = downsample_labels(&track, preds_native.len())?;
        let preds: Vec<usize> = preds_native
            .iter()
            .map(|&p| taxonomy.coarsen_class(native, p))
            .collect();
        let truth = map_taxonomy(&truth_native, taxonomy)?;
        let mask = vec![true; preds.len()];
        let (errors, valid) = count_errors(&preds, &truth.labels, &mask)?;
        scores.push(UtteranceScore {
            utt_id: entry.utt_id.clone(),
            error_rate: errors as f64 / valid as f64,
            errors,
            valid,
        });
        pairs.extend(truth.labels.iter().copied().zip(preds));
    }
    let (ger, mer) = aggregate(&scores)?;
    let confusion = confusion_matrix(&pairs, taxonomy.num_classes())?;
    Ok(EvalReport {
        taxonomy,
        ger,
        mer,
        per_utterance: scores,
        confusion: confusion.outer_iter().map(|r| r.to_vec()).collect(),
        class_names: taxonomy.class_names().iter().map(|s| s.to_string()).collect(),
    })
}

/// Off-diagonal mass over total mass of a confusion matrix.
pub fn confusion_ger(counts: &Array2<u64>) -> f64 {
    let total: u64 = counts.sum();
    let diag: u64 = (0..counts.nrows()).map(|i| counts[[i, i]]).sum();
    (total - diag) as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn score(utt_id: &str, errors: usize, valid: usize) -> UtteranceScore {
        UtteranceScore {
            utt_id: utt_id.into(),
            error_rate: errors as f64 / valid as f64,
            errors,
            valid,
        }
    }

    #[test]
    fn identical_tracks_score_zero_and_disjoint_tracks_one() {
        let mask = vec![true; 4];
        assert_eq!(error_rate(&[0, 1, 2, 1], &[0, 1, 2, 1], &mask).unwrap(), 0.0);
        assert_eq!(error_rate(&[0, 0, 0, 0], &[1, 1, 1, 1], &mask).unwrap(), 1.0);
    }

    #[test]
    fn half_wrong_is_one_half() {
        let pred = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let truth = [0, 0, 0, 0, 0, 0, 0, 0, 0, 0];
        assert_eq!(error_rate(&pred, &truth, &[true; 10]).unwrap(), 0.5);
    }

    #[test]
    fn masked_positions_do_not_count() {
        let pred = [0, 0, 1];
        let truth = [0, 0, 0];
        let mask = [true, true, false];
        assert_eq!(error_rate(&pred, &truth, &mask).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(matches!(
            error_rate(&[0, 1], &[0], &[true, true]),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(
            error_rate(&[0], &[0], &[false]),
            Err(EvalError::AllMasked)
        ));
        assert!(matches!(aggregate(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn worked_aggregate_case() {
        let scores = [score("a", 5, 10), score("b", 0, 2)];
        let (ger, mer) = aggregate(&scores).unwrap();
        assert_eq!(ger, 5.0 / 12.0);
        assert_eq!(mer, 0.25);
    }

    #[test]
    fn single_utterance_ger_equals_mer() {
        let scores = [score("a", 3, 7)];
        let (ger, mer) = aggregate(&scores).unwrap();
        assert_eq!(ger, mer);
    }

    #[test]
    fn equal_lengths_collapse_ger_onto_mer() {
        let scores = [score("a", 2, 10), score("b", 6, 10), score("c", 1, 10)];
        let (ger, mer) = aggregate(&scores).unwrap();
        assert!((ger - mer).abs() < 1e-15);
    }

    #[test]
    fn ger_is_the_length_weighted_mean_of_error_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let scores: Vec<UtteranceScore> = (0..rng.random_range(1..20))
                .map(|i| {
                    let valid = rng.random_range(1..50);
                    let errors = rng.random_range(0..=valid);
                    score(&format!("u{i}"), errors, valid)
                })
                .collect();
            let (ger, _) = aggregate(&scores).unwrap();
            let weighted: f64 = scores.iter().map(|s| s.valid as f64 * s.error_rate).sum();
            let total: f64 = scores.iter().map(|s| s.valid as f64).sum();
            assert!((ger - weighted / total).abs() < 1e-12);
        }
    }

    #[test]
    fn ger_ignores_utterance_order() {
        let mut scores = vec![score("a", 1, 3), score("b", 4, 9), score("c", 0, 5)];
        let (ger, mer) = aggregate(&scores).unwrap();
        scores.reverse();
        let (ger2, mer2) = aggregate(&scores).unwrap();
        assert_eq!(ger, ger2);
        assert_eq!(mer, mer2);
    }

    #[test]
    fn duplicating_an_average_utterance_preserves_mer() {
        let scores = vec![score("a", 1, 4), score("b", 1, 4)];
        let (_, mer) = aggregate(&scores).unwrap();
        let mut dup = scores.clone();
        dup.push(score("a2", 1, 4));
        let (_, mer2) = aggregate(&dup).unwrap();
        assert_eq!(mer, mer2);

        let mut skewed = scores;
        skewed.push(score("c", 3, 4));
        let (_, mer3) = aggregate(&skewed).unwrap();
        assert!((mer3 - mer).abs() > 1e-6);
    }

    #[test]
    fn confusion_matches_brute_force_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let c = rng.random_range(2..6);
            let pairs: Vec<(usize, usize)> = (0..rng.random_range(1..40))
                .map(|_| (rng.random_range(0..c), rng.random_range(0..c)))
                .collect();
            let m = confusion_matrix(&pairs, c).unwrap();
            for truth in 0..c {
                for pred in 0..c {
                    let brute = pairs.iter().filter(|&&p| p == (truth, pred)).count() as u64;
                    assert_eq!(m[[truth, pred]], brute);
                }
            }
            let errors = pairs.iter().filter(|(t, p)| t != p).count();
            assert_eq!(confusion_ger(&m), errors as f64 / pairs.len() as f64);
        }
    }

    #[test]
    fn perfect_predictions_fill_the_diagonal() {
        let pairs: Vec<(usize, usize)> = (0..3).cycle().take(9).map(|c| (c, c)).collect();
        let m = confusion_matrix(&pairs, 3).unwrap();
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(m[[t, p]], if t == p { 3 } else { 0 });
            }
        }
    }

    #[test]
    fn normalized_rows_sum_to_one_or_zero() {
        let m = confusion_matrix(&[(0, 1), (0, 0), (2, 2)], 3).unwrap();
        let n = normalize_confusion(&m);
        let sums: Vec<f64> = n.outer_iter().map(|r| r.sum()).collect();
        assert!((sums[0] - 1.0).abs() < 1e-15);
        assert_eq!(sums[1], 0.0);
        assert!((sums[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        assert!(matches!(
            confusion_matrix(&[(0, 3)], 3),
            Err(EvalError::LabelOutOfRange { label: 3, .. })
        ));
    }

    #[test]
    fn argmax_breaks_ties_toward_the_lowest_index() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
        assert_eq!(argmax(&[-1.0, 0.0, 2.0]), 2);
    }
}
