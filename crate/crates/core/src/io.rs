//! Serialization helpers: row-major JSON encoding for matrices and
//! generic CSV emit/parse for the tabular artifacts.

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    /// Row-major.
    data: Vec<f64>,
}

/// `#[serde(with = "crate::io::matrix")]` for `DMatrix<f64>` fields.
pub mod matrix {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        let data = m.transpose().as_slice().to_vec();
        MatrixRepr {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
        let r = MatrixRepr::deserialize(d)?;
        if r.rows * r.cols != r.data.len() {
            return Err(serde::de::Error::custom(format!(
                "matrix {}x{} has {} entries",
                r.rows,
                r.cols,
                r.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
    }
}

/// `#[serde(with = "crate::io::vector")]` for `DVector<f64>` fields.
pub mod vector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DVector<f64>, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Ok(DVector::from_vec(v))
    }
}

/// Writes records as CSV with a header row.
pub fn to_csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

/// Parses CSV produced by [`to_csv_string`].
pub fn from_csv_str<T: DeserializeOwned>(s: &str) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(s.as_bytes());
    r.deserialize()
        .map(|rec| rec.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}

/// Writes a matrix as CSV with the given header.
pub fn matrix_to_csv(m: &DMatrix<f64>, header: &[String]) -> Result<String> {
    if header.len() != m.ncols() {
        return Err(Error::dim(format!(
            "{} header names for {} columns",
            header.len(),
            m.ncols()
        )));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::Parse(e.to_string()))?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}
