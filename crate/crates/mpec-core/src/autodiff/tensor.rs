//! Dense row-major f64 tensor.

use super::{AdError, AdResult};

/// A dense tensor of 64-bit floats in row-major order.
///
/// Scalars have an empty shape. All values are finite by construction;
/// NaN/Inf is rejected at every entry point rather than propagated silently.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> AdResult<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(AdError::ShapeMismatch {
                op: "tensor",
                detail: format!("shape {:?} implies {} values, got {}", shape, numel, data.len()),
            });
        }
        let t = Tensor { shape, data };
        t.check_finite()?;
        Ok(t)
    }

    pub fn scalar(v: f64) -> AdResult<Self> {
        Tensor::new(vec![], vec![v])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> AdResult<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            if r.len() != d {
                return Err(AdError::ShapeMismatch {
                    op: "from_rows",
                    detail: format!("ragged rows: {} vs {}", r.len(), d),
                });
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![n, d], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// Number of rows / columns for rank-2 tensors.
    pub fn dims2(&self, op: &'static str) -> AdResult<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(AdError::ShapeMismatch {
                op,
                detail: format!("expected a matrix, got shape {:?}", other),
            }),
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let d = self.shape[1];
        &self.data[i * d..(i + 1) * d]
    }

    pub fn check_finite(&self) -> AdResult<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(AdError::NonFinite(format!(
                    "value {} at flat index {} in tensor of shape {:?}",
                    v, i, self.shape
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn scalar_has_empty_shape() {
        let s = Tensor::scalar(3.5).unwrap();
        assert!(s.is_scalar());
        assert_eq!(s.numel(), 1);
    }
}
