use serde::{Deserialize, Serialize};

use crate::error::{CarveError, Result};

/// Dense row-major `f64` array with one to three dimensions.
///
/// Every constructor checks that the payload length matches the dims and
/// that all values are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(CarveError::shape(
                "Tensor::new",
                format!("expected 1 to 3 dims, got {}", dims.len()),
            ));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(CarveError::shape(
                "Tensor::new",
                format!("dims {dims:?} need {expected} values, got {}", data.len()),
            ));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(CarveError::NonFinite { index });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let len = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut t = Self::zeros(&[n, n]);
        for (i, v) in values.iter().enumerate() {
            t.data[i * n + i] = *v;
        }
        t
    }

    /// Builds an `r x c` matrix from row slices. All rows must share a length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != c {
                return Err(CarveError::shape(
                    "Tensor::from_rows",
                    format!("row {i} has {} columns, expected {c}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![r, c], data)
    }

    /// Internal constructor for results of finite arithmetic.
    pub(crate) fn from_parts(dims: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn is_matrix(&self) -> bool {
        self.dims.len() == 2
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn shape2(&self) -> Result<(usize, usize)> {
        match self.dims.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(CarveError::shape(
                "shape2",
                format!("expected a matrix, got dims {other:?}"),
            )),
        }
    }

    pub fn rows(&self) -> usize {
        if self.dims.len() == 2 {
            self.dims[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.dims.last().unwrap_or(&0)
    }

    /// Row `i` of a matrix.
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    /// Element `[a, b, c]` of a 3-D tensor.
    pub fn get3(&self, a: usize, b: usize, c: usize) -> f64 {
        let (d1, d2) = (self.dims[1], self.dims[2]);
        self.data[(a * d1 + b) * d2 + c]
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.shape2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor::from_parts(vec![c, r], out))
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let (r, c) = self.shape2()?;
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= r {
                return Err(CarveError::shape(
                    "select_rows",
                    format!("row {i} out of range for {r} rows"),
                ));
            }
            out.extend_from_slice(self.row(i));
        }
        Ok(Tensor::from_parts(vec![indices.len(), c], out))
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        let (r, c) = self.shape2()?;
        if start > end || end > r {
            return Err(CarveError::shape(
                "slice_rows",
                format!("range {start}..{end} out of bounds for {r} rows"),
            ));
        }
        Ok(Tensor::from_parts(
            vec![end - start, c],
            self.data[start * c..end * c].to_vec(),
        ))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[&Tensor]) -> Result<Tensor> {
        let cols = parts.first().map_or(0, |t| t.cols());
        let mut rows = 0;
        let mut data = Vec::new();
        for t in parts {
            let (r, c) = t.shape2()?;
            if c != cols {
                return Err(CarveError::shape(
                    "vstack",
                    format!("column mismatch: {c} vs {cols}"),
                ));
            }
            rows += r;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor::from_parts(vec![rows, cols], data))
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        Tensor::from_parts(
            self.dims.clone(),
            self.data.iter().map(|v| v * factor).collect(),
        )
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.dims != other.dims {
            return Err(CarveError::shape(
                "add",
                format!("{:?} vs {:?}", self.dims, other.dims),
            ));
        }
        Ok(Tensor::from_parts(
            self.dims.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        ))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
