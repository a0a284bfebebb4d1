use nalgebra::{DMatrix, DVector};
use std::path::Path;

use crate::error::{Error, Result};

/// A feature matrix (one row per observation) with a response column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    response: DVector<f64>,
    rows: Vec<f64>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, response: DVector<f64>) -> Result<Self> {
        Error::check_dim(features.nrows(), response.len())?;
        if features.iter().chain(response.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("dataset contains non-finite values".into()));
        }
        let rows = features.transpose().as_slice().to_vec();
        Ok(Self { features, response, rows })
    }

    /// Reads a CSV file with a header row and numeric columns; the final column is the response.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let width = reader.headers()?.len();
        if width < 2 {
            return Err(Error::Data(format!("{}: need at least one feature and one response column", path.display())));
        }
        let mut values = Vec::new();
        let mut response = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record?;
            let line = row + 2;
            if record.len() != width {
                return Err(Error::Data(format!(
                    "{}:{line}: expected {width} columns, found {}",
                    path.display(),
                    record.len()
                )));
            }
            for (col, field) in record.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Data(format!("{}:{line}: column {}: '{field}' is not a number", path.display(), col + 1)))?;
                if col + 1 == width {
                    response.push(v);
                } else {
                    values.push(v);
                }
            }
        }
        let n = response.len();
        let features = DMatrix::from_row_slice(n, width - 1, &values);
        Self::new(features, DVector::from_vec(response))
    }

    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    #[inline]
    pub(crate) fn row(&self, i: usize) -> &[f64] {
        let p = self.num_features();
        &self.rows[i * p..(i + 1) * p]
    }
}
