//! Synthetic corpus generation.
//!
//! Each "language" is a stationary spectral process: white noise shaped by
//! three second-order resonators at language-specific formant frequencies.
//! Utterances concatenate per-language segments with exact sample-resolution
//! boundaries, optionally code-switched. A mock embedding generator stands
//! in for a pretrained encoder on the 20 ms / 320x downsampled frame grid.

use crate::dsp::{write_wav_pcm16, Waveform, SAMPLE_RATE};
use crate::labels::{
    boundaries_to_samples, downsample_labels, save_manifest, BoundarySegment, LanguageId,
    Manifest, ManifestEntry, Split, TaskTaxonomy, ALL_LANGUAGES,
};
use crate::models::{write_embd, EMBED_DOWNSAMPLE};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("embedding frame count {got} does not match boundary span {span} / {factor}")]
    SpanMismatch {
        got: usize,
        span: usize,
        factor: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Manifest(#[from] crate::labels::ManifestError),
}

/// A synthetic language: three resonant peaks over a white-noise floor.
#[derive(Debug, Clone)]
pub struct SynthLanguageSpec {
    pub lang: LanguageId,
    pub formant_centers: [f64; 3],
    pub bandwidths: [f64; 3],
    pub noise_floor_db: f64,
}

/// The five stock languages. IsiZulu and isiXhosa form the close pair: two
/// of their peaks sit only 100 Hz apart (well inside the resonator
/// bandwidths, so their spectra genuinely overlap), against 300 Hz or more
/// for every other language pair.
pub fn default_language_specs() -> Vec<SynthLanguageSpec> {
    let centers: [[f64; 3]; 5] = [
        [500.0, 1500.0, 2500.0],
        [800.0, 1800.0, 2900.0],
        [900.0, 1900.0, 3100.0],
        [1250.0, 2600.0, 3600.0],
        [600.0, 1100.0, 3900.0],
    ];
    ALL_LANGUAGES
        .iter()
        .zip(centers)
        .map(|(&lang, formant_centers)| SynthLanguageSpec {
            lang,
            formant_centers,
            bandwidths: [80.0, 120.0, 160.0],
            noise_floor_db: -30.0,
        })
        .collect()
}

/// Corpus layout and randomness knobs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthCorpusConfig {
    pub train_utterances: usize,
    pub dev_utterances: usize,
    pub test_utterances: usize,
    /// Utterance duration range in seconds.
    pub duration_range: (f64, f64),
    /// Language switches per utterance, inclusive range.
    pub switch_range: (usize, usize),
    /// Shortest segment in seconds.
    pub min_segment: f64,
    pub seed: u64,
    pub snr_db: f64,
    /// Mock embedding dimensionality.
    pub embed_dim: usize,
    /// Noise added around the mock embedding class means.
    pub noise_sigma: f64,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        SynthCorpusConfig {
            train_utterances: 400,
            dev_utterances: 50,
            test_utterances: 50,
            duration_range: (2.0, 8.0),
            switch_range: (0, 4),
            min_segment: 0.4,
            seed: 42,
            snr_db: 20.0,
            embed_dim: 64,
            noise_sigma: 0.7,
        }
    }
}

/// Per-utterance seed, derived so generation can run in any order (splitmix64
/// finalizer over the corpus seed and utterance index).
pub fn derive_seed(corpus_seed: u64, utt_index: u64) -> u64 {
    let mut z = corpus_seed ^ utt_index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Two-pole resonator applied to `input`, peak at `center` Hz.
fn resonate(input: &[f64], center: f64, bandwidth: f64) -> Vec<f64> {
    let fs = SAMPLE_RATE as f64;
    let r = (-std::f64::consts::PI * bandwidth / fs).exp();
    let theta = 2.0 * std::f64::consts::PI * center / fs;
    let a1 = -2.0 * r * theta.cos();
    let a2 = r * r;
    let gain = 1.0 - r;
    let mut out = vec![0.0; input.len()];
    let (mut y1, mut y2) = (0.0, 0.0);
    for (i, &x) in input.iter().enumerate() {
        let y = gain * x - a1 * y1 - a2 * y2;
        out[i] = y;
        y2 = y1;
        y1 = y;
    }
    out
}

/// White noise shaped by the spec's resonators plus a broadband floor,
/// peak-normalized to 0.9.
pub fn synth_signal(spec: &SynthLanguageSpec, n_samples: usize, rng: &mut ChaCha8Rng) -> Waveform {
    let noise: Vec<f64> = (0..n_samples)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let floor = 10f64.powf(spec.noise_floor_db / 20.0);
    let mut sum: Vec<f64> = noise.iter().map(|&x| floor * x).collect();
    for (center, bw) in spec.formant_centers.iter().zip(spec.bandwidths) {
        for (s, y) in sum.iter_mut().zip(resonate(&noise, *center, bw)) {
            *s += y;
        }
    }
    let peak = sum.iter().fold(0.0f64, |m, &x| m.max(x.abs())).max(1e-30);
    let samples = sum.iter().map(|&x| (0.9 * x / peak) as f32).collect();
    Waveform {
        samples,
        sample_rate: SAMPLE_RATE,
        id: spec.lang.code().to_string(),
    }
}

/// Random code-switched utterance: language sequence without immediate
/// repeats, exact sample boundaries, additive noise at `snr_db`.
pub fn synth_utterance(
    specs: &[SynthLanguageSpec],
    cfg: &SynthCorpusConfig,
    rng: &mut ChaCha8Rng,
) -> (Waveform, Vec<BoundarySegment>) {
    let fs = SAMPLE_RATE as f64;
    let duration = rng.random_range(cfg.duration_range.0..=cfg.duration_range.1);
    let n_samples = (duration * fs).round() as usize;
    let switches = rng.random_range(cfg.switch_range.0..=cfg.switch_range.1);
    let n_segments = switches + 1;
    let min_len = (cfg.min_segment * fs).round() as usize;
    assert!(
        n_segments * min_len <= n_samples,
        "duration too short for {n_segments} segments of {min_len} samples"
    );

    // segment lengths: the minimum each, remainder split by random weights
    let weights: Vec<f64> = (0..n_segments).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = weights.iter().sum();
    let spare = n_samples - n_segments * min_len;
    let mut lens: Vec<usize> = weights
        .iter()
        .map(|w| min_len + (w / total * spare as f64).floor() as usize)
        .collect();
    let used: usize = lens.iter().sum();
    *lens.last_mut().unwrap() += n_samples - used;

    let mut langs = Vec::with_capacity(n_segments);
    let mut cur = rng.random_range(0..specs.len());
    langs.push(cur);
    for _ in 1..n_segments {
        let mut next = rng.random_range(0..specs.len() - 1);
        if next >= cur {
            next += 1;
        }
        cur = next;
        langs.push(cur);
    }

    let mut samples = Vec::with_capacity(n_samples);
    let mut boundaries = Vec::with_capacity(n_segments);
    let mut start = 0usize;
    for (&len, &li) in lens.iter().zip(&langs) {
        let seg = synth_signal(&specs[li], len, rng);
        samples.extend_from_slice(&seg.samples);
        boundaries.push(BoundarySegment {
            start_sample: start,
            end_sample: start + len,
            lang: specs[li].lang,
        });
        start += len;
    }

    let power = samples.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>() / n_samples as f64;
    let sigma = (power / 10f64.powf(cfg.snr_db / 10.0)).sqrt();
    let mut peak = 0.0f64;
    let mut mixed: Vec<f64> = samples
        .iter()
        .map(|&x| {
            let e: f64 = StandardNormal.sample(rng);
            let y = x as f64 + sigma * e;
            peak = peak.max(y.abs());
            y
        })
        .collect();
    if peak > 0.99 {
        let scale = 0.99 / peak;
        for y in &mut mixed {
            *y *= scale;
        }
    }

    (
        Waveform {
            samples: mixed.iter().map(|&y| y as f32).collect(),
            sample_rate: SAMPLE_RATE,
            id: String::new(),
        },
        boundaries,
    )
}

/// Construction mean of class `class` in `dim` dimensions. Means sit at
/// 2 sqrt(2) along distinct axes, so every pair is distance 4 apart.
pub fn embedding_class_mean(class: usize, dim: usize) -> Vec<f32> {
    assert!(class < dim, "class {class} needs embed_dim > {class}");
    let mut v = vec![0.0; dim];
    v[class] = 2.0 * std::f64::consts::SQRT_2 as f32;
    v
}

/// Mock contextual embeddings on the 320x-downsampled frame grid: per-frame
/// class mean plus isotropic Gaussian noise.
pub fn mock_embeddings(
    boundaries: &[BoundarySegment],
    t: usize,
    dim: usize,
    noise_sigma: f32,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f32>, SynthError> {
    let span = boundaries.last().map_or(0, |b| b.end_sample);
    if t != span / EMBED_DOWNSAMPLE {
        return Err(SynthError::SpanMismatch {
            got: t,
            span,
            factor: EMBED_DOWNSAMPLE,
        });
    }
    let track = boundaries_to_samples(boundaries, span, TaskTaxonomy::Task3)
        .expect("generated boundaries are contiguous");
    let seg = downsample_labels(&track, t).expect("t >= 1 and t <= span");
    let mut out = Array2::zeros((t, dim));
    for (i, &class) in seg.labels.iter().enumerate() {
        let mean = embedding_class_mean(class, dim);
        for d in 0..dim {
            let e: f32 = StandardNormal.sample(rng);
            out[[i, d]] = mean[d] + noise_sigma * e;
        }
    }
    Ok(out)
}

/// Generate a full corpus under `out_dir`: WAV files, EMBD files and a JSONL
/// manifest. Byte-identical for a fixed config.
pub fn generate_corpus(cfg: &SynthCorpusConfig, out_dir: &Path) -> Result<Manifest, SynthError> {
    let specs = default_language_specs();
    std::fs::create_dir_all(out_dir.join("wav"))?;
    std::fs::create_dir_all(out_dir.join("embd"))?;

    let splits = [
        (Split::Train, cfg.train_utterances),
        (Split::Dev, cfg.dev_utterances),
        (Split::Test, cfg.test_utterances),
    ];
    let mut manifest = Manifest::default();
    let mut index = 0u64;
    for (split, count) in splits {
        for i in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index));
            index += 1;
            let (wave, boundaries) = synth_utterance(&specs, cfg, &mut rng);
            let utt_id = format!("{split}_{i:04}");
            // paths are stored relative to the manifest and resolved on load
            let wav_rel = Path::new("wav").join(format!("{utt_id}.wav"));
            write_wav_pcm16(&out_dir.join(&wav_rel), &wave.samples)?;
            let t = wave.samples.len() / EMBED_DOWNSAMPLE;
            let emb = mock_embeddings(&boundaries, t, cfg.embed_dim, cfg.noise_sigma as f32, &mut rng)?;
            let embd_rel = Path::new("embd").join(format!("{utt_id}.embd"));
            write_embd(&out_dir.join(&embd_rel), &emb)?;
            let is_monolingual_english =
                boundaries.len() == 1 && boundaries[0].lang == LanguageId::English;
            manifest.entries.push(ManifestEntry {
                utt_id,
                wav_path: wav_rel,
                embd_path: Some(embd_rel),
                split,
                boundaries,
                is_monolingual_english,
            });
        }
    }
    let manifest_path = out_dir.join("manifest.jsonl");
    save_manifest(&manifest, &manifest_path)?;
    Ok(crate::labels::load_manifest(&manifest_path)?)
}
