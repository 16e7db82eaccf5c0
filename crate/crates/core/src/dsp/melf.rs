//! Binary feature cache: magic "MELF", u32 T, u32 d, then T*d
//! little-endian f32 values, row-major.

use super::DspError;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

pub fn write_melf(path: &Path, values: &Array2<f32>) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    std::io::Write::write_all(&mut w, b"MELF")?;
    w.write_u32::<LittleEndian>(values.nrows() as u32)?;
    w.write_u32::<LittleEndian>(values.ncols() as u32)?;
    for &v in values.iter() {
        w.write_f32::<LittleEndian>(v)?;
    }
    std::io::Write::flush(&mut w)
}

pub fn read_melf(path: &Path) -> Result<Array2<f32>, DspError> {
    let malformed = |message: String| DspError::MalformedFile {
        path: path.display().to_string(),
        message,
    };
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    std::io::Read::read_exact(&mut r, &mut magic).map_err(|e| malformed(e.to_string()))?;
    if &magic != b"MELF" {
        return Err(malformed("bad magic".into()));
    }
    let t = r.read_u32::<LittleEndian>().map_err(|e| malformed(e.to_string()))? as usize;
    let d = r.read_u32::<LittleEndian>().map_err(|e| malformed(e.to_string()))? as usize;
    let mut data = vec![0f32; t * d];
    r.read_f32_into::<LittleEndian>(&mut data)
        .map_err(|e| malformed(e.to_string()))?;
    Array2::from_shape_vec((t, d), data).map_err(|e| malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.melf");
        let values =
            Array2::from_shape_fn((7, 23), |(i, j)| ((i * 31 + j) as f32).sin() * 1e-3 - 5.0);
        write_melf(&path, &values).unwrap();
        let back = read_melf(&path).unwrap();
        assert_eq!(values, back);
    }

    #[test]
    fn truncated_file_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.melf");
        std::fs::write(&path, b"MELF\x02\x00\x00\x00\x02\x00\x00\x00\x00").unwrap();
        assert!(matches!(
            read_melf(&path),
            Err(DspError::MalformedFile { .. })
        ));
    }
}
