//! The common surface of every fitted correlation model, and the on-disk
//! container they share.
//!
//! A model file is one line of JSON (the header, which lists the binary
//! blocks in order) followed by those blocks, each in the raw feature-block
//! encoding.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cca::LinearCcaModel;
use crate::dataio::{decode_raw, encode_raw, FeatureBlock};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

pub const MODEL_FORMAT: &str = "cdcca-model";
pub const MODEL_VERSION: u32 = 1;

/// Which view a feature matrix belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Image,
    Text,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Image => "image",
            Side::Text => "text",
        })
    }
}

/// A fitted cross-modal model that maps either view into the shared
/// canonical space.
pub trait CorrelationModel: fmt::Debug + Send + Sync {
    /// Registry name of the method that produced this model.
    fn method(&self) -> &str;

    /// Projects `d × m` features of one side to `k × m` canonical features.
    fn project(&self, z: &Matrix, side: Side) -> Result<Matrix>;

    /// The final linear CCA stage.
    fn head(&self) -> &LinearCcaModel;

    fn input_dim(&self, side: Side) -> usize;

    fn correlations(&self) -> &Vector {
        &self.head().rho
    }

    /// Per-iteration training objective, for iterative methods.
    fn history(&self) -> Option<&[f64]> {
        None
    }

    fn to_model_file(&self) -> Result<ModelFile>;
}

/// Header plus named binary blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub method: String,
    pub header: Value,
    pub blocks: Vec<(String, Matrix)>,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format: String,
    version: u32,
    method: String,
    header: Value,
    blocks: Vec<BlockInfo>,
}

#[derive(Serialize, Deserialize)]
struct BlockInfo {
    name: String,
    rows: usize,
    cols: usize,
}

impl ModelFile {
    pub fn new(method: impl Into<String>, header: Value) -> Self {
        Self {
            method: method.into(),
            header,
            blocks: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, m: Matrix) {
        self.blocks.push((name.into(), m));
    }

    pub fn push_vector(&mut self, name: impl Into<String>, v: &Vector) {
        self.push(name, Matrix::from_row_slice(1, v.len(), v.as_slice()));
    }

    pub fn block(&self, name: &str) -> Result<&Matrix> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::format("model file", format!("missing block {name:?}")))
    }

    pub fn vector(&self, name: &str) -> Result<Vector> {
        let m = self.block(name)?;
        Ok(Vector::from_iterator(m.len(), m.transpose().iter().copied()))
    }

    pub fn header_field<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .header
            .get(key)
            .ok_or_else(|| Error::format("model header", format!("missing field {key:?}")))?;
        Ok(serde_json::from_value(v.clone())?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let envelope = Envelope {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            method: self.method.clone(),
            header: self.header.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|(name, m)| BlockInfo {
                    name: name.clone(),
                    rows: m.nrows(),
                    cols: m.ncols(),
                })
                .collect(),
        };
        let mut out = serde_json::to_vec(&envelope)?;
        out.push(b'\n');
        for (_, m) in &self.blocks {
            out.extend(encode_raw(&FeatureBlock::from_matrix(m))?);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format("model file", "missing header line"))?;
        let envelope: Envelope = serde_json::from_slice(&bytes[..newline])?;
        if envelope.format != MODEL_FORMAT || envelope.version != MODEL_VERSION {
            return Err(Error::format(
                "model file",
                format!("unsupported format {} v{}", envelope.format, envelope.version),
            ));
        }
        let mut offset = newline + 1;
        let mut blocks = Vec::with_capacity(envelope.blocks.len());
        for info in envelope.blocks {
            let (block, used) = decode_raw(&bytes[offset..])?;
            if block.rows.len() != info.rows || block.cols != info.cols {
                return Err(Error::format(
                    "model file",
                    format!("block {:?} has unexpected shape", info.name),
                ));
            }
            offset += used;
            blocks.push((info.name, block.to_matrix()));
        }
        if offset != bytes.len() {
            return Err(Error::format("model file", "trailing bytes"));
        }
        Ok(Self {
            method: envelope.method,
            header: envelope.header,
            blocks,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Writes a linear head's blocks under `prefix`.
pub(crate) fn push_linear(file: &mut ModelFile, prefix: &str, m: &LinearCcaModel) {
    file.push_vector(format!("{prefix}mean_x"), &m.mean_x);
    file.push_vector(format!("{prefix}mean_y"), &m.mean_y);
    file.push(format!("{prefix}wx"), m.wx.clone());
    file.push(format!("{prefix}wy"), m.wy.clone());
    file.push_vector(format!("{prefix}rho"), &m.rho);
}

pub(crate) fn read_linear(file: &ModelFile, prefix: &str, r: f64, beta: f64) -> Result<LinearCcaModel> {
    let m = LinearCcaModel {
        mean_x: file.vector(&format!("{prefix}mean_x"))?,
        mean_y: file.vector(&format!("{prefix}mean_y"))?,
        wx: file.block(&format!("{prefix}wx"))?.clone(),
        wy: file.block(&format!("{prefix}wy"))?.clone(),
        rho: file.vector(&format!("{prefix}rho"))?,
        r,
        beta,
    };
    let k = m.rho.len();
    if m.wx.ncols() != k || m.wy.ncols() != k || m.wx.nrows() != m.mean_x.len() || m.wy.nrows() != m.mean_y.len() {
        return Err(Error::format("model file", "inconsistent linear head shapes"));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn container_round_trip() {
        let mut f = ModelFile::new("cca", json!({"k": 2, "r": 1e-4}));
        f.push("a", Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, -6.5]));
        f.push_vector("v", &Vector::from_vec(vec![0.25, -1.0]));
        let bytes = f.to_bytes().unwrap();
        let back = ModelFile::from_bytes(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.vector("v").unwrap().as_slice(), &[0.25, -1.0]);
        assert_eq!(back.header_field::<usize>("k").unwrap(), 2);
        assert!(back.block("missing").is_err());
    }

    #[test]
    fn rejects_foreign_or_truncated_files() {
        assert!(ModelFile::from_bytes(b"{\"format\":\"x\"}\n").is_err());
        let mut f = ModelFile::new("cca", json!({}));
        f.push("a", Matrix::identity(2, 2));
        let bytes = f.to_bytes().unwrap();
        assert!(ModelFile::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
