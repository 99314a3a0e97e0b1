//! Flat little-endian binary records.
//!
//! A file is a sequence of records. Each record is the 4-byte magic `MNW1`,
//! a `u32` dimension count, that many `u32` dimensions, then the entries as
//! `f64` in row-major order.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::Dataset;

pub const PARAMS_MAGIC: &[u8; 4] = b"MNW1";

fn format_err<T>(offset: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Format { offset: offset as u64, message: message.into() })
}

/// One dense record: shape and row-major entries.
pub type Record = (Vec<usize>, Vec<f64>);

pub fn write_records(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    for (dims, data) in records {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        out.extend_from_slice(PARAMS_MAGIC);
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for &d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_records(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        match bytes.get(*pos..*pos + n) {
            Some(s) => {
                *pos += n;
                Ok(s)
            }
            None => format_err(*pos, format!("truncated: wanted {n} bytes, {} left", bytes.len() - *pos)),
        }
    };
    while pos < bytes.len() {
        let start = pos;
        if take(&mut pos, 4)? != PARAMS_MAGIC {
            return format_err(start, "bad record magic, expected MNW1");
        }
        let u32_at = |s: &[u8]| u32::from_le_bytes([s[0], s[1], s[2], s[3]]) as usize;
        let ndims = u32_at(take(&mut pos, 4)?);
        if ndims == 0 || ndims > 8 {
            return format_err(start + 4, format!("implausible dimension count {ndims}"));
        }
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(u32_at(take(&mut pos, 4)?));
        }
        let Some(len) = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)) else {
            return format_err(start + 8, "dimension product overflows");
        };
        let Some(nbytes) = len.checked_mul(8) else {
            return format_err(start + 8, "payload size overflows");
        };
        let raw = take(&mut pos, nbytes)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push((dims, data));
    }
    Ok(out)
}

fn matrix_record(m: &DMatrix<f64>) -> Record {
    (vec![m.nrows(), m.ncols()], m.transpose().as_slice().to_vec())
}

fn record_matrix(rec: &Record, what: &str) -> Result<DMatrix<f64>> {
    match rec.0.as_slice() {
        &[rows, cols] => Ok(DMatrix::from_row_slice(rows, cols, &rec.1)),
        other => format_err(0, format!("{what}: expected a 2-d record, got dims {other:?}")),
    }
}

/// Trained weights, plus the frozen feature layer for three-layer runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamsBundle {
    pub weights: DMatrix<f64>,
    /// Feature matrix `R` (`k×d`) and degree `p`.
    pub features: Option<(DMatrix<f64>, usize)>,
}

pub fn save_params(path: &Path, bundle: &ParamsBundle) -> Result<()> {
    let mut recs = vec![matrix_record(&bundle.weights)];
    if let Some((r, p)) = &bundle.features {
        recs.push(matrix_record(r));
        recs.push((vec![1], vec![*p as f64]));
    }
    fs::write(path, write_records(&recs))?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ParamsBundle> {
    let recs = read_records(&fs::read(path)?)?;
    match recs.as_slice() {
        [w] => Ok(ParamsBundle { weights: record_matrix(w, "weights")?, features: None }),
        [w, r, p] => {
            let degree = match p.1.as_slice() {
                &[v] if v >= 1.0 && v.fract() == 0.0 => v as usize,
                other => return format_err(0, format!("bad feature degree record {other:?}")),
            };
            let weights = record_matrix(w, "weights")?;
            let r = record_matrix(r, "feature layer")?;
            if r.nrows() != weights.nrows() {
                return format_err(0, format!(
                    "feature layer has {} rows but weights expect {}",
                    r.nrows(),
                    weights.nrows()
                ));
            }
            Ok(ParamsBundle { weights, features: Some((r, degree)) })
        }
        other => format_err(0, format!("expected 1 or 3 records, found {}", other.len())),
    }
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let recs = vec![matrix_record(data.inputs()), (vec![data.n()], data.labels().as_slice().to_vec())];
    fs::write(path, write_records(&recs))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let recs = read_records(&fs::read(path)?)?;
    let [x, y] = recs.as_slice() else {
        return format_err(0, format!("dataset file needs 2 records, found {}", recs.len()));
    };
    let x = record_matrix(x, "inputs")?;
    if y.0 != [x.nrows()] {
        return format_err(0, format!("label record dims {:?} do not match {} samples", y.0, x.nrows()));
    }
    Dataset::new(x, DVector::from_vec(y.1.clone()))
}
