//! Built-in sanity suite: finite-difference gradient checks on desk-scale
//! instances of each architecture, closed-form loss oracles, and parameter
//! count bands for the full-size baselines.

use langdiar_core::autodiff::{grad_check, Tape};
use langdiar_core::loss::{bilstm_loss, ce_label_smoothing, dc_loss, xsa_loss};
use langdiar_core::models::{bool_mask, BiLstmConfig, EncoderHeadConfig, XsaConfig};
use ndarray::{Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-4;

pub fn run() -> Result<(), String> {
    let mut failures = Vec::new();
    let mut check = |name: &str, result: Result<String, String>| match result {
        Ok(detail) => println!("ok   {name}: {detail}"),
        Err(detail) => {
            println!("FAIL {name}: {detail}");
            failures.push(name.to_string());
        }
    };

    check("param count bilstm", param_count_bilstm());
    check("param count xsa", param_count_xsa());
    check("dc loss hand case", dc_hand_case());
    check("smoothed ce uniform logits", ce_uniform_case());
    check("grad check bilstm", grad_check_bilstm());
    check("grad check xsa", grad_check_xsa());
    check("grad check encoder head", grad_check_encoder());

    if failures.is_empty() {
        println!("selfcheck passed");
        Ok(())
    } else {
        Err(format!("selfcheck failed: {}", failures.join(", ")))
    }
}

fn band(n: usize, center: usize) -> Result<String, String> {
    let lo = center * 3 / 4;
    let hi = center * 5 / 4;
    if n >= lo && n <= hi {
        Ok(format!("{n} parameters, inside [{lo}, {hi}]"))
    } else {
        Err(format!("{n} parameters, outside [{lo}, {hi}]"))
    }
}

fn param_count_bilstm() -> Result<String, String> {
    band(
        BiLstmConfig::with_classes(3).init_params::<f32>(0).param_count(),
        9_000_000,
    )
}

fn param_count_xsa() -> Result<String, String> {
    band(
        XsaConfig::with_classes(3).init_params::<f32>(0).param_count(),
        12_000_000,
    )
}

/// T=2, identical unit embeddings, distinct labels: loss (2 - 2 + 2) / 4.
fn dc_hand_case() -> Result<String, String> {
    let mut tape: Tape<f64> = Tape::new();
    let emb = tape.constant(ArrayD::from_shape_vec(IxDyn(&[2, 2]), vec![1.0, 0.0, 1.0, 0.0]).unwrap());
    let loss = dc_loss(&mut tape, emb, &[0, 1], &[true, true], 2).map_err(|e| e.to_string())?;
    let got = tape.scalar_value(loss);
    if (got - 0.5).abs() < 1e-9 {
        Ok(format!("{got:.9}"))
    } else {
        Err(format!("{got} != 0.5"))
    }
}

/// Uniform logits with any smoothing and C=2 give exactly ln 2.
fn ce_uniform_case() -> Result<String, String> {
    let mut tape: Tape<f64> = Tape::new();
    let logits = tape.constant(ArrayD::zeros(IxDyn(&[3, 1, 2])));
    let labels = Array2::zeros((3, 1));
    let mask = Array2::from_elem((3, 1), true);
    let loss =
        ce_label_smoothing(&mut tape, logits, &labels, &mask, 0.1).map_err(|e| e.to_string())?;
    let got = tape.scalar_value(loss);
    if (got - std::f64::consts::LN_2).abs() < 1e-9 {
        Ok(format!("{got:.9}"))
    } else {
        Err(format!("{got} != ln 2"))
    }
}

fn report(max_rel_err: f64, worst: &str) -> Result<String, String> {
    if max_rel_err < GRAD_TOL {
        Ok(format!("max rel err {max_rel_err:.2e}"))
    } else {
        Err(format!("max rel err {max_rel_err:.2e} at {worst}"))
    }
}

fn grad_check_bilstm() -> Result<String, String> {
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
    let r = grad_check(&params.tensors, 1e-5, |tape, vars| {
        let x = tape.constant(data.clone());
        let out = cfg.forward(tape, vars, x, &lengths).unwrap();
        bilstm_loss(tape, out.logits_main, out.embeddings.unwrap(), &labels, &mask, 0.5, 0.1)
            .unwrap()
            .total
    })
    .map_err(|e| format!("{e:?}"))?;
    report(r.max_rel_err, &format!("{:?}", r.worst))
}

fn grad_check_xsa() -> Result<String, String> {
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
    // same pinned seeds as the test suite: no TDNN row may go fully
    // relu-dead, or central differences straddle the relu kink
    let params = cfg.init_params::<f64>(9);
    let mut rng = ChaCha8Rng::seed_from_u64(1009);
    let data = ArrayD::from_shape_fn(IxDyn(&[12, 2, 3]), |_| rng.random::<f64>() - 0.5);
    let lengths = [12usize, 8];
    let seg_labels = Array2::from_shape_fn((3, 2), |_| rng.random_range(0..3));
    let seg_lengths: Vec<usize> = lengths.iter().map(|&l| l / 4).collect();
    let seg_mask = bool_mask(3, &seg_lengths);
    let r = grad_check(&params.tensors, 1e-5, |tape, vars| {
        let x = tape.constant(data.clone());
        let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
        let out = cfg.forward(tape, vars, x, &lengths, false, &mut drop_rng).unwrap();
        xsa_loss(tape, out.logits_main, out.logits_aux, &seg_labels, &seg_mask, 0.5, 0.1)
            .unwrap()
            .total
    })
    .map_err(|e| format!("{e:?}"))?;
    report(r.max_rel_err, &format!("{:?}", r.worst))
}

fn grad_check_encoder() -> Result<String, String> {
    let cfg = EncoderHeadConfig {
        embed_dim: 6,
        num_classes: 3,
    };
    let params = cfg.init_params::<f64>(31);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let data = ArrayD::from_shape_fn(IxDyn(&[12, 2, 6]), |_| rng.random::<f64>() - 0.5);
    let labels = Array2::from_shape_fn((12, 2), |_| rng.random_range(0..3));
    let mask = bool_mask(12, &[12, 7]);
    let r = grad_check(&params.tensors, 1e-5, |tape, vars| {
        let x = tape.constant(data.clone());
        let out = cfg.forward(tape, vars, x).unwrap();
        ce_label_smoothing(tape, out.logits_main, &labels, &mask, 0.1).unwrap()
    })
    .map_err(|e| format!("{e:?}"))?;
    report(r.max_rel_err, &format!("{:?}", r.worst))
}
