//! Feature sidecar files.
//!
//! Two encodings are accepted, told apart by the first eight bytes:
//!
//! * raw binary: the magic [`RAW_MAGIC`], `u32` rows, `u32` cols (little
//!   endian), then `rows * cols` little-endian `f64` values in row-major order;
//! * CSV: a header row `f0,f1,...` naming one column per dimension, then one
//!   vector per newline-terminated row, `.` as the decimal separator.
//!
//! Both decode to a list of row vectors.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const RAW_MAGIC: [u8; 8] = *b"CDCCAF64";
const RAW_HEADER_LEN: usize = 16;

/// Row-major block of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub cols: usize,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureBlock {
    pub fn new(cols: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::dims("feature block row", cols, bad.len()));
        }
        Ok(Self { cols, rows })
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        let rows = m
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        Self {
            cols: m.ncols(),
            rows,
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.rows.len(), self.cols, |i, j| self.rows[i][j])
    }
}

pub fn encode_raw(block: &FeatureBlock) -> Result<Vec<u8>> {
    let rows = u32::try_from(block.rows.len())
        .map_err(|_| Error::Argument("too many rows for raw block".into()))?;
    let cols = u32::try_from(block.cols)
        .map_err(|_| Error::Argument("too many columns for raw block".into()))?;
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + 8 * block.rows.len() * block.cols);
    out.extend_from_slice(&RAW_MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for row in &block.rows {
        for x in row {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes one raw block from the front of `bytes`, returning it with the
/// number of bytes consumed.
pub fn decode_raw(bytes: &[u8]) -> Result<(FeatureBlock, usize)> {
    if bytes.len() < RAW_HEADER_LEN || bytes[..8] != RAW_MAGIC {
        return Err(Error::format("raw block", "missing magic header"));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let len = RAW_HEADER_LEN + 8 * rows * cols;
    if bytes.len() < len {
        return Err(Error::format(
            "raw block",
            format!("{rows}x{cols} block truncated at {} bytes", bytes.len()),
        ));
    }
    let mut values = bytes[RAW_HEADER_LEN..len]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let data = (0..rows)
        .map(|_| values.by_ref().take(cols).collect())
        .collect();
    Ok((FeatureBlock { cols, rows: data }, len))
}

pub fn encode_csv(block: &FeatureBlock) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record((0..block.cols).map(|j| format!("f{j}")))?;
    for row in &block.rows {
        w.write_record(row.iter().map(|x| x.to_string()))?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn decode_csv(bytes: &[u8]) -> Result<FeatureBlock> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let cols = r.headers()?.len();
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|s| {
                s.trim().parse::<f64>().map_err(|e| {
                    Error::format("csv feature", format!("row {}: {s:?}: {e}", i + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    FeatureBlock::new(cols, rows)
}

pub fn read_features(path: &Path) -> Result<FeatureBlock> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    if bytes.starts_with(&RAW_MAGIC) {
        let (block, used) = decode_raw(&bytes)?;
        if used != bytes.len() {
            return Err(Error::format(
                path.display().to_string(),
                "trailing bytes after raw block",
            ));
        }
        Ok(block)
    } else {
        decode_csv(&bytes)
    }
}

pub fn write_features(path: &Path, block: &FeatureBlock, format: FeatureFormat) -> Result<()> {
    let bytes = match format {
        FeatureFormat::Csv => encode_csv(block)?,
        FeatureFormat::Raw => encode_raw(block)?,
    };
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Csv,
    Raw,
}

impl FeatureFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FeatureFormat::Csv => "csv",
            FeatureFormat::Raw => "f64",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn raw_layout() {
        let block = FeatureBlock::new(2, vec![vec![1.0, -2.5]]).unwrap();
        let bytes = encode_raw(&block).unwrap();
        assert_eq!(&bytes[..8], b"CDCCAF64");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..24], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 32);
    }

    #[test]
    fn csv_layout() {
        let block = FeatureBlock::new(3, vec![vec![0.5, -1.0, 1e-20]]).unwrap();
        let text = String::from_utf8(encode_csv(&block).unwrap()).unwrap();
        assert_eq!(text, "f0,f1,f2\n0.5,-1,0.00000000000000000001\n");
        assert_eq!(decode_csv(text.as_bytes()).unwrap(), block);
    }

    #[test]
    fn truncated_raw_is_rejected() {
        let block = FeatureBlock::new(2, vec![vec![1.0, 2.0]]).unwrap();
        let bytes = encode_raw(&block).unwrap();
        assert!(decode_raw(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn ragged_csv_is_rejected() {
        assert!(decode_csv(b"f0,f1\n1,2\n3\n").is_err());
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
    }

    proptest! {
        #[test]
        fn both_encodings_round_trip_bit_exactly(
            rows in prop::collection::vec(prop::collection::vec(finite(), 3), 0..5)
        ) {
            let block = FeatureBlock::new(3, rows).unwrap();
            let (raw, _) = decode_raw(&encode_raw(&block).unwrap()).unwrap();
            let csv = decode_csv(&encode_csv(&block).unwrap()).unwrap();
            for decoded in [raw, csv] {
                prop_assert_eq!(decoded.rows.len(), block.rows.len());
                for (a, b) in decoded.rows.iter().flatten().zip(block.rows.iter().flatten()) {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }
}
