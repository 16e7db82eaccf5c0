//! Minimal RIFF/WAVE PCM16 reader and writer.

use super::{DspError, SAMPLE_RATE};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// A mono 16 kHz waveform with samples in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub id: String,
}

impl Waveform {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn malformed(path: &Path, message: impl Into<String>) -> DspError {
    DspError::MalformedFile {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Load a mono 16 kHz PCM16 WAV file. Samples are scaled by 1/32768.
pub fn load_wav(path: &Path) -> Result<Waveform, DspError> {
    let file = File::open(path).map_err(|e| malformed(path, e.to_string()))?;
    let mut r = BufReader::new(file);

    let mut riff = [0u8; 4];
    r.read_exact(&mut riff)
        .map_err(|_| malformed(path, "missing RIFF header"))?;
    if &riff != b"RIFF" {
        return Err(malformed(path, "not a RIFF file"));
    }
    let _riff_size = r
        .read_u32::<LittleEndian>()
        .map_err(|_| malformed(path, "truncated RIFF header"))?;
    let mut wave = [0u8; 4];
    r.read_exact(&mut wave)
        .map_err(|_| malformed(path, "truncated RIFF header"))?;
    if &wave != b"WAVE" {
        return Err(malformed(path, "not a WAVE file"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<Vec<u8>> = None;
    loop {
        let mut chunk_id = [0u8; 4];
        match r.read_exact(&mut chunk_id) {
            Ok(()) => {}
            Err(_) => break,
        }
        let size = r
            .read_u32::<LittleEndian>()
            .map_err(|_| malformed(path, "truncated chunk header"))? as usize;
        match &chunk_id {
            b"fmt " => {
                if size < 16 {
                    return Err(malformed(path, "fmt chunk too small"));
                }
                let mut buf = vec![0u8; size];
                r.read_exact(&mut buf)
                    .map_err(|_| malformed(path, "truncated fmt chunk"))?;
                let format = u16::from_le_bytes([buf[0], buf[1]]);
                let channels = u16::from_le_bytes([buf[2], buf[3]]);
                let rate = u32::from_le_bytes([buf[4], buf[5], buf[6], buf[7]]);
                let bits = u16::from_le_bytes([buf[14], buf[15]]);
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => {
                let mut buf = vec![0u8; size];
                r.read_exact(&mut buf)
                    .map_err(|_| malformed(path, "truncated data chunk"))?;
                data = Some(buf);
            }
            _ => {
                // skip unknown chunk (word aligned)
                let skip = size + (size & 1);
                std::io::copy(&mut (&mut r).take(skip as u64), &mut std::io::sink())
                    .map_err(|_| malformed(path, "truncated chunk"))?;
            }
        }
        if fmt.is_some() && data.is_some() {
            break;
        }
    }

    let (format, channels, rate, bits) = fmt.ok_or_else(|| malformed(path, "missing fmt chunk"))?;
    let data = data.ok_or_else(|| malformed(path, "missing data chunk"))?;
    if format != 1 || bits != 16 {
        return Err(malformed(
            path,
            format!("expected PCM16 (format 1, 16 bits), got format {format}, {bits} bits"),
        ));
    }
    if channels != 1 {
        return Err(DspError::WrongChannelCount(channels));
    }
    if rate != SAMPLE_RATE {
        return Err(DspError::WrongSampleRate(rate));
    }
    if data.len() % 2 != 0 {
        return Err(malformed(path, "data chunk has odd byte length"));
    }

    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
        .collect();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Waveform {
        samples,
        sample_rate: SAMPLE_RATE,
        id,
    })
}

/// Write samples (clamped to `[-1, 1]`) as a mono 16 kHz PCM16 WAV file.
pub fn write_wav_pcm16(path: &Path, samples: &[f32]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let data_len = (samples.len() * 2) as u32;
    w.write_all(b"RIFF")?;
    w.write_u32::<LittleEndian>(36 + data_len)?;
    w.write_all(b"WAVE")?;
    w.write_all(b"fmt ")?;
    w.write_u32::<LittleEndian>(16)?;
    w.write_u16::<LittleEndian>(1)?; // PCM
    w.write_u16::<LittleEndian>(1)?; // mono
    w.write_u32::<LittleEndian>(SAMPLE_RATE)?;
    w.write_u32::<LittleEndian>(SAMPLE_RATE * 2)?;
    w.write_u16::<LittleEndian>(2)?;
    w.write_u16::<LittleEndian>(16)?;
    w.write_all(b"data")?;
    w.write_u32::<LittleEndian>(data_len)?;
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_i16::<LittleEndian>(q)?;
    }
    w.flush()
}
