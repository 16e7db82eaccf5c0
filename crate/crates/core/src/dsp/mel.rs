//! Log-mel spectrogram extraction.
//!
//! 400-sample (25 ms) Hann-windowed frames with a 160-sample (10 ms) hop,
//! zero-padded to `n_fft`, power spectrum, 23 triangular filters on the HTK
//! mel scale, natural log with a fixed floor.

use super::{num_frames, DspError, Waveform, FRAME_LEN, HOP_LEN};
use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelConfig {
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub floor_eps: f64,
    /// Optional per-utterance mean subtraction (off by default).
    pub mean_subtract: bool,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            n_fft: 512,
            n_mels: 23,
            fmin: 0.0,
            fmax: 8000.0,
            floor_eps: 1e-10,
            mean_subtract: false,
        }
    }
}

/// T x n_mels log-mel features.
#[derive(Debug, Clone)]
pub struct MelFeatures {
    pub values: Array2<f32>,
    pub frame_len_samples: usize,
    pub hop_samples: usize,
}

impl MelFeatures {
    pub fn num_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the triangular filters.
pub fn filter_centers(cfg: &MelConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    (1..=cfg.n_mels)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Triangular mel filterbank as a (n_mels x (n_fft/2 + 1)) matrix, peak 1.
pub fn mel_filterbank(cfg: &MelConfig, sample_rate: u32) -> Array2<f64> {
    let n_bins = cfg.n_fft / 2 + 1;
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    let points: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut bank = Array2::zeros((cfg.n_mels, n_bins));
    let bin_hz = sample_rate as f64 / cfg.n_fft as f64;
    for m in 0..cfg.n_mels {
        let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f >= left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f <= right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            bank[[m, k]] = w;
        }
    }
    bank
}

/// Periodic Hann window of length `FRAME_LEN`.
fn hann_window() -> Vec<f64> {
    (0..FRAME_LEN)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / FRAME_LEN as f64).cos())
        .collect()
}

/// Extract log-mel features. Requires at least one full frame (400 samples).
pub fn mel_spectrogram(w: &Waveform, cfg: &MelConfig) -> Result<MelFeatures, DspError> {
    let n = w.samples.len();
    if n < FRAME_LEN {
        return Err(DspError::TooShort {
            got: n,
            need: FRAME_LEN,
        });
    }
    let t = num_frames(n);
    let window = hann_window();
    let bank = mel_filterbank(cfg, w.sample_rate);
    let n_bins = cfg.n_fft / 2 + 1;

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.n_fft);
    let mut values = Array2::<f32>::zeros((t, cfg.n_mels));
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut power = vec![0.0f64; n_bins];

    for frame in 0..t {
        let start = frame * HOP_LEN;
        for i in 0..cfg.n_fft {
            let s = if i < FRAME_LEN {
                w.samples[start + i] as f64 * window[i]
            } else {
                0.0
            };
            buf[i] = Complex::new(s, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            power[k] = buf[k].norm_sqr();
        }
        for m in 0..cfg.n_mels {
            let mut acc = 0.0;
            for k in 0..n_bins {
                acc += bank[[m, k]] * power[k];
            }
            values[[frame, m]] = acc.max(cfg.floor_eps).ln() as f32;
        }
    }

    if cfg.mean_subtract {
        let mean = values.mean_axis(ndarray::Axis(0)).unwrap();
        for mut row in values.rows_mut() {
            row -= &mean;
        }
    }

    Ok(MelFeatures {
        values,
        frame_len_samples: FRAME_LEN,
        hop_samples: HOP_LEN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SAMPLE_RATE;
    use proptest::prelude::*;

    fn wave(samples: Vec<f32>) -> Waveform {
        Waveform {
            samples,
            sample_rate: SAMPLE_RATE,
            id: "test".into(),
        }
    }

    #[test]
    fn zero_waveform_hits_the_log_floor_everywhere() {
        let cfg = MelConfig::default();
        let m = mel_spectrogram(&wave(vec![0.0; 16_000]), &cfg).unwrap();
        let floor = (cfg.floor_eps.ln()) as f32;
        assert!(m.values.iter().all(|&v| v == floor));
    }

    #[test]
    fn one_second_gives_98_frames() {
        let cfg = MelConfig::default();
        let m = mel_spectrogram(&wave(vec![0.1; 16_000]), &cfg).unwrap();
        assert_eq!(m.num_frames(), 98);
        assert_eq!(m.dim(), 23);
    }

    #[test]
    fn too_short_input_is_rejected() {
        let cfg = MelConfig::default();
        assert!(matches!(
            mel_spectrogram(&wave(vec![0.0; 399]), &cfg),
            Err(DspError::TooShort { got: 399, need: 400 })
        ));
    }

    #[test]
    fn pure_tone_peaks_in_the_filter_nearest_its_frequency() {
        let cfg = MelConfig::default();
        let freq = 1000.0f64;
        let samples: Vec<f32> = (0..16_000)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin() as f32)
            .collect();
        let m = mel_spectrogram(&wave(samples), &cfg).unwrap();

        let centers = filter_centers(&cfg);
        let expected = centers
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                (*a - freq).abs().partial_cmp(&(*b - freq).abs()).unwrap()
            })
            .map(|(i, _)| i)
            .unwrap();

        for row in m.values.rows() {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            assert_eq!(argmax, expected);
        }
    }

    #[test]
    fn scaling_the_waveform_shifts_logs_by_twice_log_c() {
        let cfg = MelConfig::default();
        let base: Vec<f32> = (0..8_000)
            .map(|i| ((i as f32 * 0.07).sin() + (i as f32 * 0.013).cos()) * 0.2)
            .collect();
        // powers of two scale f32 samples exactly, so the log identity is
        // clean even in bins dominated by cancellation
        let c = 2.0f32;
        let scaled: Vec<f32> = base.iter().map(|&s| s * c).collect();
        let a = mel_spectrogram(&wave(base), &cfg).unwrap();
        let b = mel_spectrogram(&wave(scaled), &cfg).unwrap();
        let shift = 2.0 * (c as f64).ln();
        let floor = cfg.floor_eps.ln() as f32;
        for (va, vb) in a.values.iter().zip(b.values.iter()) {
            if *va > floor + 1.0 && *vb > floor + 1.0 {
                assert!(((vb - va) as f64 - shift).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn output_is_deterministic() {
        let cfg = MelConfig::default();
        let samples: Vec<f32> = (0..5_000).map(|i| ((i * 37 % 101) as f32 - 50.0) / 64.0).collect();
        let a = mel_spectrogram(&wave(samples.clone()), &cfg).unwrap();
        let b = mel_spectrogram(&wave(samples), &cfg).unwrap();
        assert_eq!(a.values, b.values);
    }

    proptest! {
        #[test]
        fn frame_count_formula_holds(n in 400usize..40_000) {
            let cfg = MelConfig::default();
            let m = mel_spectrogram(&wave(vec![0.01; n]), &cfg).unwrap();
            prop_assert_eq!(m.num_frames(), 1 + (n - 400) / 160);
        }
    }
}
