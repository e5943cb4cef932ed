use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};

/// A length-`T` sequence of `p`-dimensional observations, stored as a `T x p` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: DMatrix<f64>,
}

impl TimeSeries {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::EmptySeries);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("time series"));
        }
        Ok(Self { values })
    }

    /// Builds a series from one `Vec` per timestamp.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let len = rows.len();
        let dims = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dims) {
            return Err(Error::Dimensions {
                x: dims,
                y: bad.len(),
                requirement: "every timestamp must have the same number of features",
            });
        }
        Self::new(DMatrix::from_fn(len, dims, |i, k| rows[i][k]))
    }

    pub fn from_row_slice(len: usize, dims: usize, data: &[f64]) -> Result<Self> {
        if data.len() != len * dims {
            return Err(Error::invalid(
                "data",
                format!("expected {} values, got {}", len * dims, data.len()),
            ));
        }
        Self::new(DMatrix::from_row_slice(len, dims, data))
    }

    /// Number of timestamps `T`.
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Feature dimensionality `p`.
    pub fn dims(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn row(&self, t: usize) -> RowDVector<f64> {
        self.values.row(t).into_owned()
    }

    /// Observation `t` as a column vector.
    pub fn point(&self, t: usize) -> DVector<f64> {
        self.values.row(t).transpose()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|t| self.values.row(t).iter().copied().collect())
            .collect()
    }

    /// Contiguous timestamps `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::invalid(
                "slice",
                format!(
                    "range {start}..{end} out of bounds for length {}",
                    self.len()
                ),
            ));
        }
        Self::new(self.values.rows(start, end - start).into_owned())
    }

    /// Keeps the first `dims` feature coordinates.
    pub fn truncate_dims(&self, dims: usize) -> Result<Self> {
        if dims == 0 || dims > self.dims() {
            return Err(Error::invalid(
                "dims",
                format!("cannot keep {dims} of {} features", self.dims()),
            ));
        }
        Self::new(self.values.columns(0, dims).into_owned())
    }

    /// Linear resampling onto `len` equally spaced positions spanning the original support.
    pub fn resample(&self, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::invalid("length", "must be at least 1"));
        }
        let src = self.len();
        let positions: Vec<f64> = if len == 1 {
            vec![0.0]
        } else {
            (0..len)
                .map(|k| k as f64 * (src - 1) as f64 / (len - 1) as f64)
                .collect()
        };
        Ok(self.sample_at(&positions))
    }

    /// Linear interpolation at fractional timestamps (clamped to `[0, T-1]`).
    pub(crate) fn sample_at(&self, positions: &[f64]) -> Self {
        let last = self.len() - 1;
        let values = DMatrix::from_fn(positions.len(), self.dims(), |r, k| {
            let pos = positions[r].clamp(0.0, last as f64);
            let lo = (pos.floor() as usize).min(last);
            let hi = (lo + 1).min(last);
            let frac = pos - lo as f64;
            self.values[(lo, k)] * (1.0 - frac) + self.values[(hi, k)] * frac
        });
        Self { values }
    }

    /// Squared Frobenius distance to a series of identical shape.
    pub fn squared_distance(&self, other: &Self) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::Dimensions {
                x: self.dims(),
                y: other.dims(),
                requirement: "must be equal",
            });
        }
        if self.len() != other.len() {
            return Err(Error::Length {
                x: self.len(),
                y: other.len(),
                context: "one-to-one comparison",
            });
        }
        Ok((&self.values - &other.values).norm_squared())
    }
}

impl TryFrom<DMatrix<f64>> for TimeSeries {
    type Error = Error;

    fn try_from(values: DMatrix<f64>) -> Result<Self> {
        Self::new(values)
    }
}
