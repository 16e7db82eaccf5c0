//! Full-pipeline gradient checks: total training loss differentiated with
//! respect to every parameter of each architecture, 64-bit, desk scale.

use langdiar_core::autodiff::grad_check;
use langdiar_core::loss::{bilstm_loss, ce_label_smoothing, xsa_loss};
use langdiar_core::models::{bool_mask, BiLstmConfig, EncoderHeadConfig, XsaConfig};
use ndarray::{Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

#[test]
fn bilstm_full_loss_gradients_check_out() {
    let cfg = BiLstmConfig {
        hidden: 3,
        stage1_layers: 1,
        stage2_layers: 1,
        input_dim: 4,
        num_classes: 2,
    };
    let params = cfg.init_params::<f64>(11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let data = ArrayD::from_shape_fn(IxDyn(&[12, 2, 4]), |_| rng.random::<f64>() - 0.5);
    let labels = Array2::from_shape_fn((12, 2), |_| rng.random_range(0..2));
    let lengths = [12usize, 9];
    let mask = bool_mask(12, &lengths);

    let report = grad_check(&params.tensors, 1e-5, |tape, vars| {
        let x = tape.constant(data.clone());
        let out = cfg.forward(tape, vars, x, &lengths).unwrap();
        let lv = bilstm_loss(
            tape,
            out.logits_main,
            out.embeddings.unwrap(),
            &labels,
            &mask,
            0.5,
            0.1,
        )
        .unwrap();
        lv.total
    })
    .unwrap();
    assert!(
        report.max_rel_err < TOL,
        "bilstm max rel err {} at {:?}",
        report.max_rel_err,
        report.worst
    );
}

#[test]
fn xsa_full_loss_gradients_check_out() {
    let cfg = XsaConfig {
        hidden: 8,
        num_blocks: 2,
        num_heads: 2,
        segment_frames: 4,
        input_dim: 3,
        num_classes: 3,
        tdnn_widths: vec![8, 8, 8, 8, 12],
        dropout: 0.0,
    };
    // seed picked so no TDNN row goes fully relu-dead: an all-zero row puts
    // the next pointwise layer exactly on the relu kink, where the one-sided
    // derivative and the central difference legitimately disagree
    let params = cfg.init_params::<f64>(9);
    let mut rng = ChaCha8Rng::seed_from_u64(1009);
    let data = ArrayD::from_shape_fn(IxDyn(&[12, 2, 3]), |_| rng.random::<f64>() - 0.5);
    let lengths = [12usize, 8];
    let s_max = 3;
    let seg_labels = Array2::from_shape_fn((s_max, 2), |_| rng.random_range(0..3));
    let seg_lengths: Vec<usize> = lengths.iter().map(|&l| l / 4).collect();
    let seg_mask = bool_mask(s_max, &seg_lengths);

    let report = grad_check(&params.tensors, 1e-5, |tape, vars| {
        let x = tape.constant(data.clone());
        let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
        let out = cfg
            .forward(tape, vars, x, &lengths, false, &mut drop_rng)
            .unwrap();
        let lv = xsa_loss(
            tape,
            out.logits_main,
            out.logits_aux,
            &seg_labels,
            &seg_mask,
            0.5,
            0.1,
        )
        .unwrap();
        lv.total
    })
    .unwrap();
    assert!(
        report.max_rel_err < TOL,
        "xsa max rel err {} at {:?}",
        report.max_rel_err,
        report.worst
    );
}

#[test]
fn encoder_head_loss_gradients_check_out() {
    let cfg = EncoderHeadConfig {
        embed_dim: 6,
        num_classes: 3,
    };
    let params = cfg.init_params::<f64>(31);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let data = ArrayD::from_shape_fn(IxDyn(&[12, 2, 6]), |_| rng.random::<f64>() - 0.5);
    let labels = Array2::from_shape_fn((12, 2), |_| rng.random_range(0..3));
    let lengths = [12usize, 7];
    let mask = bool_mask(12, &lengths);

    let report = grad_check(&params.tensors, 1e-5, |tape, vars| {
        let x = tape.constant(data.clone());
        let out = cfg.forward(tape, vars, x).unwrap();
        ce_label_smoothing(tape, out.logits_main, &labels, &mask, 0.1).unwrap()
    })
    .unwrap();
    assert!(
        report.max_rel_err < TOL,
        "encoder head max rel err {} at {:?}",
        report.max_rel_err,
        report.worst
    );
}
