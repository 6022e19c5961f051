//! Dense row-major `f64` arrays.

use crate::{AutogradError, Result};

/// A dense, row-major array of `f64` values.
///
/// A scalar has an empty shape and exactly one element.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(AutogradError::Shape {
                op: "tensor",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

/// Numpy-style broadcast of two shapes (right-aligned).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for k in 0..nd {
        let da = if k + a.len() >= nd { a[k + a.len() - nd] } else { 1 };
        let db = if k + b.len() >= nd { b[k + b.len() - nd] } else { 1 };
        out[k] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// For each flat index of `out`, the flat index of the element it reads
/// from an input with per-axis strides `in_strides` (aligned to `out`).
pub(crate) fn strided_map(out: &[usize], in_strides: &[usize]) -> Vec<usize> {
    let nd = out.len();
    let total: usize = out.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; nd];
    let mut cur = 0usize;
    for _ in 0..total {
        map.push(cur);
        for k in (0..nd).rev() {
            idx[k] += 1;
            cur += in_strides[k];
            if idx[k] < out[k] {
                break;
            }
            cur -= in_strides[k] * out[k];
            idx[k] = 0;
        }
    }
    map
}

/// Flat-index map from a broadcast output back into an input of shape `inp`.
pub(crate) fn broadcast_map(out: &[usize], inp: &[usize]) -> Vec<usize> {
    let nd = out.len();
    let off = nd - inp.len();
    let mut istr = vec![0usize; nd];
    let mut s = 1;
    for k in (0..inp.len()).rev() {
        if inp[k] != 1 {
            istr[k + off] = s;
        }
        s *= inp[k];
    }
    strided_map(out, &istr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
    }

    #[test]
    fn broadcast_map_repeats_rows() {
        let m = broadcast_map(&[2, 3], &[3]);
        assert_eq!(m, vec![0, 1, 2, 0, 1, 2]);
        let m = broadcast_map(&[2, 3], &[2, 1]);
        assert_eq!(m, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn new_rejects_bad_length() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
    }
}
