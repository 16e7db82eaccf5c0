//! Precomputed contextual-embedding files: magic "EMBD", u32 T, u32 D,
//! T*D little-endian f32, row-major. One file per utterance.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dsp::DspError;

pub fn write_embd(path: &Path, values: &Array2<f32>) -> std::io::Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(b"EMBD")?;
    w.write_u32::<LittleEndian>(values.nrows() as u32)?;
    w.write_u32::<LittleEndian>(values.ncols() as u32)?;
    for &v in values.iter() {
        w.write_f32::<LittleEndian>(v)?;
    }
    w.flush()
}

pub fn read_embd(path: &Path) -> Result<Array2<f32>, DspError> {
    let malformed = |message: &str| DspError::MalformedFile {
        path: path.display().to_string(),
        message: message.to_string(),
    };
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| malformed("truncated header"))?;
    if &magic != b"EMBD" {
        return Err(malformed("bad magic"));
    }
    let t = r.read_u32::<LittleEndian>().map_err(|_| malformed("truncated header"))? as usize;
    let d = r.read_u32::<LittleEndian>().map_err(|_| malformed("truncated header"))? as usize;
    let mut data = vec![0f32; t * d];
    for v in data.iter_mut() {
        *v = r
            .read_f32::<LittleEndian>()
            .map_err(|_| malformed("truncated payload"))?;
    }
    Array2::from_shape_vec((t, d), data).map_err(|_| malformed("shape overflow"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.embd");
        let m = Array2::from_shape_fn((7, 5), |(i, j)| (i * 31 + j) as f32 * 0.37 - 2.0);
        write_embd(&path, &m).unwrap();
        let back = read_embd(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn truncated_file_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.embd");
        let m = Array2::zeros((4, 4));
        write_embd(&path, &m).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            read_embd(&path),
            Err(DspError::MalformedFile { .. })
        ));
    }
}
