//! Sample containers: covariate matrices and `(x, y)` datasets.

use crate::error::{ConformalError, Result};

/// Row-major `n x d` matrix of covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    data: Vec<f64>,
    dim: usize,
}

impl Covariates {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(ConformalError::InvalidInput(
                "covariate dimension must be at least 1".into(),
            ));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(ConformalError::InvalidInput(format!(
                "{} values cannot be split into rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { data, dim })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(ConformalError::InvalidInput(format!(
                    "row {i} has {} columns, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(data, dim)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Covariate rows paired with real responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Covariates,
    y: Vec<f64>,
    names: Vec<String>,
}

impl Dataset {
    pub fn new(x: Covariates, y: Vec<f64>) -> Result<Self> {
        let names = (1..=x.dim()).map(|j| format!("x{j}")).collect();
        Self::with_names(x, y, names)
    }

    /// `names` holds one entry per covariate column.
    pub fn with_names(x: Covariates, y: Vec<f64>, names: Vec<String>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(ConformalError::InvalidInput(format!(
                "{} covariate rows but {} responses",
                x.len(),
                y.len()
            )));
        }
        if names.len() != x.dim() {
            return Err(ConformalError::InvalidInput(format!(
                "{} column names for {} covariates",
                names.len(),
                x.dim()
            )));
        }
        Ok(Self { x, y, names })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], y: Vec<f64>) -> Result<Self> {
        Self::new(Covariates::from_rows(rows)?, y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    pub fn x(&self) -> &Covariates {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> (&[f64], f64) {
        (self.x.row(i), self.y[i])
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&[f64], f64)> + '_ {
        self.x.rows().zip(self.y.iter().copied())
    }

    /// Rows at `indices`, in that order; repeated indices repeat rows.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let d = self.dim();
        let mut x = Vec::with_capacity(indices.len() * d);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.x.row(i));
            y.push(self.y[i]);
        }
        Dataset {
            x: Covariates { data: x, dim: d },
            y,
            names: self.names.clone(),
        }
    }

    /// Copy of this dataset with one extra point appended.
    pub fn with_point(&self, x: &[f64], y: f64) -> Result<Dataset> {
        if x.len() != self.dim() {
            return Err(ConformalError::InvalidInput(format!(
                "point has {} covariates, dataset has {}",
                x.len(),
                self.dim()
            )));
        }
        let mut out = self.clone();
        out.x.data.extend_from_slice(x);
        out.y.push(y);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ragged_rows_rejected() {
        let rows = vec![vec![1.0, 2.0], vec![3.0]];
        assert!(Covariates::from_rows(&rows).is_err());
    }

    #[test]
    fn select_repeats_rows() {
        let ds = Dataset::from_rows(&[[1.0], [2.0], [3.0]], vec![10.0, 20.0, 30.0]).unwrap();
        let sub = ds.select(&[2, 2, 0]);
        assert_eq!(sub.y(), &[30.0, 30.0, 10.0]);
        assert_eq!(sub.x().row(1), &[3.0]);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let x = Covariates::new(vec![1.0, 2.0], 1).unwrap();
        assert!(Dataset::new(x, vec![1.0]).is_err());
    }
}
