//! Throughput benchmarks for the hot paths: feature extraction, model
//! forward passes at desk scale, and the deep-clustering loss with its
//! backward sweep.

use criterion::{criterion_group, criterion_main, Criterion};
use langdiar_core::autodiff::Tape;
use langdiar_core::dsp::mel_spectrogram;
use langdiar_core::loss::dc_loss;
use langdiar_core::models::{BiLstmConfig, EncoderHeadConfig, XsaConfig};
use langdiar_core::synth::{default_language_specs, synth_signal};
use langdiar_core::{MelConfig, ModelConfig};
use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn bench_mel(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let specs = default_language_specs();
    let wave = synth_signal(&specs[0], 4 * 16_000, &mut rng);
    let cfg = MelConfig::default();
    c.bench_function("mel 4s utterance", |b| {
        b.iter(|| mel_spectrogram(black_box(&wave), &cfg).unwrap())
    });
}

fn forward_bench(c: &mut Criterion, name: &str, cfg: ModelConfig, t: usize) {
    let params = cfg.init_params::<f32>(0);
    let d = match &cfg {
        ModelConfig::EncoderHead(e) => e.embed_dim,
        _ => 23,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = ArrayD::from_shape_fn(IxDyn(&[t, 4, d]), |_| rng.random::<f32>() - 0.5);
    c.bench_function(name, |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape);
            let x = tape.constant(data.clone());
            let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
            let out = cfg
                .forward(&mut tape, &vars, x, &[t, t, t, t], false, &mut drop_rng)
                .unwrap();
            black_box(tape.value(out.logits_main).sum())
        })
    });
}

fn bench_models(c: &mut Criterion) {
    forward_bench(
        c,
        "bilstm forward 200x4 (h64)",
        ModelConfig::Bilstm(BiLstmConfig {
            hidden: 64,
            stage1_layers: 1,
            stage2_layers: 1,
            input_dim: 23,
            num_classes: 5,
        }),
        200,
    );
    forward_bench(
        c,
        "xsa forward 190x4 (h64)",
        ModelConfig::Xsa(XsaConfig {
            hidden: 64,
            num_blocks: 2,
            num_heads: 4,
            segment_frames: 19,
            input_dim: 23,
            num_classes: 5,
            tdnn_widths: vec![64, 64, 64, 64, 128],
            dropout: 0.0,
        }),
        190,
    );
    forward_bench(
        c,
        "encoder head forward 200x4 (d64)",
        ModelConfig::EncoderHead(EncoderHeadConfig {
            embed_dim: 64,
            num_classes: 5,
        }),
        200,
    );
}

fn bench_dc_loss(c: &mut Criterion) {
    let t = 400;
    let d = 40;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let emb = ArrayD::from_shape_fn(IxDyn(&[t, d]), |_| rng.random::<f32>() - 0.5);
    let labels: Vec<usize> = (0..t).map(|_| rng.random_range(0..5)).collect();
    let mask = vec![true; t];
    c.bench_function("dc loss 400x40 fwd+bwd", |b| {
        b.iter(|| {
            let mut tape: Tape<f32> = Tape::new();
            let e = tape.leaf(emb.clone());
            let loss = dc_loss(&mut tape, e, &labels, &mask, 5).unwrap();
            let grads = tape.backward(loss);
            black_box(grads.get(e).unwrap().sum())
        })
    });
}

criterion_group!(benches, bench_mel, bench_models, bench_dc_loss);
criterion_main!(benches);
