//! Serde adapters that store matrices as row-major nested arrays and vectors
//! as flat arrays, keeping the JSON artifacts human-readable.

use nalgebra::{DMatrix, DVector};
use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serializer};

/// Use with `#[serde(with = "serde_mat::mat")]` on `DMatrix<f64>` fields.
pub mod mat {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect();
        serde::Serialize::serialize(&rows, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Deserialize::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }
}

/// Use with `#[serde(with = "serde_mat::vec")]` on `DVector<f64>` fields.
pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        serde::Serialize::serialize(v.as_slice(), s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        let data: Vec<f64> = Deserialize::deserialize(d)?;
        Ok(DVector::from_vec(data))
    }
}

/// Use with `#[serde(with = "serde_mat::mat_list")]` on `Vec<DMatrix<f64>>` fields.
pub mod mat_list {
    use super::*;

    pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        let all: Vec<Vec<Vec<f64>>> = ms
            .iter()
            .map(|m| {
                (0..m.nrows())
                    .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                    .collect()
            })
            .collect();
        serde::Serialize::serialize(&all, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        let all: Vec<Vec<Vec<f64>>> = Deserialize::deserialize(d)?;
        all.into_iter()
            .map(|rows| {
                let nrows = rows.len();
                let ncols = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != ncols) {
                    return Err(D::Error::custom("ragged matrix rows"));
                }
                Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
            })
            .collect()
    }
}
