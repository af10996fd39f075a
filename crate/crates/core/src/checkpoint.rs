//! Versioned JSON container for trained model parameters.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "embedaug-checkpoint";
pub const VERSION: u32 = 1;

/// A dense matrix stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for Tensor {
    fn from(m: &DMatrix<f64>) -> Self {
        Tensor {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: String,
    #[serde(default)]
    pub attrs: BTreeMap<String, serde_json::Value>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            kind: kind.into(),
            attrs: BTreeMap::new(),
            tensors: BTreeMap::new(),
        }
    }

    pub fn put_matrix(&mut self, name: &str, m: &DMatrix<f64>) {
        self.tensors.insert(name.into(), Tensor::from(m));
    }

    pub fn put_vector(&mut self, name: &str, v: &DVector<f64>) {
        self.tensors.insert(
            name.into(),
            Tensor {
                rows: v.len(),
                cols: 1,
                data: v.as_slice().to_vec(),
            },
        );
    }

    pub fn put_attr(&mut self, name: &str, value: impl Serialize) {
        self.attrs.insert(
            name.into(),
            serde_json::to_value(value).expect("attribute serializes"),
        );
    }

    pub fn attr<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<T> {
        let v = self
            .attrs
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing attribute {name:?}")))?;
        Ok(serde_json::from_value(v.clone())?)
    }

    fn tensor(&self, name: &str) -> Result<&Tensor> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))?;
        if t.data.len() != t.rows * t.cols {
            return Err(Error::Checkpoint(format!("tensor {name:?} has inconsistent shape")));
        }
        Ok(t)
    }

    pub fn matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        let t = self.tensor(name)?;
        Ok(DMatrix::from_row_slice(t.rows, t.cols, &t.data))
    }

    pub fn vector(&self, name: &str) -> Result<DVector<f64>> {
        let t = self.tensor(name)?;
        if t.cols != 1 {
            return Err(Error::Checkpoint(format!("tensor {name:?} is not a vector")));
        }
        Ok(DVector::from_column_slice(&t.data))
    }

    /// Reject files of another format, version or model kind.
    pub fn expect_kind(&self, kinds: &[&str]) -> Result<()> {
        if self.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        if !kinds.contains(&self.kind.as_str()) {
            return Err(Error::Checkpoint(format!(
                "expected one of {kinds:?}, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}
