//! Dense row-major tensors and their binary-in-JSON encoding.
//!
//! Tensors serialize as `{"shape": [..], "dtype": "f64le", "data": "<base64>"}`
//! where `data` is the little-endian IEEE754 byte image of the payload, so a
//! round trip through JSON is bit-exact.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Version stamped into every persisted document.
pub const FORMAT_VERSION: u32 = 1;

const DTYPE: &str = "f64le";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// `(rows, cols)` for a matrix; vectors are treated as a single column.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            _ => (self.data.len(), 1),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.dims2();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let (r, c) = m.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(m[(i, j)]);
            }
        }
        Self { shape: vec![r, c], data }
    }

    pub fn from_dvector(v: &DVector<f64>) -> Self {
        Self::vector(v.iter().copied().collect())
    }

    pub fn to_dmatrix(&self) -> Result<DMatrix<f64>> {
        match self.shape.as_slice() {
            [r, c] => Ok(DMatrix::from_row_slice(*r, *c, &self.data)),
            s => Err(Error::Shape(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn to_dvector(&self) -> Result<DVector<f64>> {
        match self.shape.as_slice() {
            [_] => Ok(DVector::from_column_slice(&self.data)),
            s => Err(Error::Shape(format!("expected a vector, got shape {s:?}"))),
        }
    }

    fn encode_data(&self) -> String {
        let mut bytes = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        STANDARD.encode(bytes)
    }

    fn decode_data(s: &str) -> Result<Vec<f64>> {
        let bytes = STANDARD
            .decode(s)
            .map_err(|e| Error::Format(format!("tensor payload is not base64: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Format("tensor payload length is not a multiple of 8".into()));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

#[derive(Serialize, Deserialize)]
struct TensorBlock {
    shape: Vec<usize>,
    dtype: String,
    data: String,
}

impl Serialize for Tensor {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        TensorBlock {
            shape: self.shape.clone(),
            dtype: DTYPE.to_string(),
            data: self.encode_data(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Tensor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let block = TensorBlock::deserialize(deserializer)?;
        if block.dtype != DTYPE {
            return Err(D::Error::custom(format!("unsupported dtype {}", block.dtype)));
        }
        let data = Tensor::decode_data(&block.data).map_err(D::Error::custom)?;
        Tensor::new(block.shape, data).map_err(D::Error::custom)
    }
}

/// Serde adapter for `DMatrix<f64>` fields stored as tensor blocks.
pub mod dmatrix_block {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        Tensor::from_dmatrix(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        use serde::de::Error as _;
        Tensor::deserialize(d)?.to_dmatrix().map_err(D::Error::custom)
    }
}

/// Serde adapter for `DVector<f64>` fields stored as tensor blocks.
pub mod dvector_block {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        Tensor::from_dvector(v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DVector<f64>, D::Error> {
        use serde::de::Error as _;
        Tensor::deserialize(d)?.to_dvector().map_err(D::Error::custom)
    }
}

/// Checks the `format_version` of a loaded document.
pub fn check_version(found: u32, kind: &str) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{kind} document has format_version {found}, expected {FORMAT_VERSION}"
        )));
    }
    Ok(())
}
