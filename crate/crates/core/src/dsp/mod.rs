//! Waveform ingestion and 23-dimensional log-mel features.
//!
//! Input is mono 16 kHz PCM16 WAV; anything else is rejected rather than
//! resampled. Features are log power in 23 triangular HTK-mel filters over
//! 25 ms frames with a 10 ms hop.

mod mel;
mod melf;
mod wav;

pub use mel::{
    filter_centers, hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz, MelConfig, MelFeatures,
};
pub use melf::{read_melf, write_melf};
pub use wav::{load_wav, write_wav_pcm16, Waveform};

use thiserror::Error;

pub const SAMPLE_RATE: u32 = 16_000;
/// 25 ms at 16 kHz.
pub const FRAME_LEN: usize = 400;
/// 10 ms at 16 kHz.
pub const HOP_LEN: usize = 160;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("wrong sample rate: expected 16000 Hz, file has {0} Hz")]
    WrongSampleRate(u32),
    #[error("wrong channel count: expected mono, file has {0} channels")]
    WrongChannelCount(u16),
    #[error("malformed file {path}: {message}")]
    MalformedFile { path: String, message: String },
    #[error("waveform too short: {got} samples, need at least {need}")]
    TooShort { got: usize, need: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Number of analysis frames for a waveform of `n` samples.
pub fn num_frames(n: usize) -> usize {
    if n < FRAME_LEN {
        0
    } else {
        1 + (n - FRAME_LEN) / HOP_LEN
    }
}
