//! Boolean rasters and the bit-packed `TMSK` mask file.
//!
//! Layout: magic `TMSK`, `u32` width, `u32` height (little-endian), then one
//! row after another, each packed MSB-first and padded to a whole byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"TMSK";

#[derive(Debug, Error)]
pub enum MaskFileError {
    #[error("not a mask file (bad magic)")]
    BadMagic,
    #[error("mask file truncated: expected {expected} payload bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn row_bytes(width: usize) -> usize {
    width.div_ceil(8)
}

/// Serializes a mask (rows = height, cols = width) into the `TMSK` byte layout.
pub fn encode_mask(grid: &Array2<bool>) -> Vec<u8> {
    let (h, w) = grid.dim();
    let stride = row_bytes(w);
    let mut out = Vec::with_capacity(12 + stride * h);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    for row in grid.rows() {
        let mut packed = vec![0u8; stride];
        for (x, &v) in row.iter().enumerate() {
            if v {
                packed[x / 8] |= 0x80 >> (x % 8);
            }
        }
        out.extend_from_slice(&packed);
    }
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<Array2<bool>, MaskFileError> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(MaskFileError::BadMagic);
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let stride = row_bytes(w);
    let payload = &bytes[12..];
    if payload.len() != stride * h {
        return Err(MaskFileError::Truncated {
            expected: stride * h,
            actual: payload.len(),
        });
    }
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        payload[y * stride + x / 8] & (0x80 >> (x % 8)) != 0
    }))
}

pub fn write_mask_file(path: impl AsRef<Path>, grid: &Array2<bool>) -> Result<(), MaskFileError> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&encode_mask(grid))?;
    f.flush()?;
    Ok(())
}

pub fn read_mask_file(path: impl AsRef<Path>) -> Result<Array2<bool>, MaskFileError> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    decode_mask(&buf)
}

/// Number of `true` cells.
pub fn count_true(grid: &Array2<bool>) -> usize {
    grid.iter().filter(|&&v| v).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rows_are_padded_to_bytes() {
        let mut g = Array2::from_elem((2, 9), false);
        g[[0, 0]] = true;
        g[[1, 8]] = true;
        let bytes = encode_mask(&g);
        assert_eq!(&bytes[..4], b"TMSK");
        assert_eq!(bytes.len(), 12 + 2 * 2);
        assert_eq!(&bytes[12..], &[0x80, 0x00, 0x00, 0x80]);
    }

    #[test]
    fn short_payload_is_rejected() {
        let g = Array2::from_elem((3, 3), true);
        let mut bytes = encode_mask(&g);
        bytes.pop();
        assert!(matches!(
            decode_mask(&bytes),
            Err(MaskFileError::Truncated { .. })
        ));
        assert!(matches!(
            decode_mask(b"XMSK00000000"),
            Err(MaskFileError::BadMagic)
        ));
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(h in 1usize..20, w in 1usize..40, seed in any::<u64>()) {
            let g = Array2::from_shape_fn((h, w), |(y, x)| {
                (seed.rotate_left((y * w + x) as u32 % 64) ^ (y * 31 + x) as u64) & 1 == 1
            });
            prop_assert_eq!(decode_mask(&encode_mask(&g)).unwrap(), g);
        }
    }
}
