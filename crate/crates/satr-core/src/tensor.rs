//! Dense rank-1/2/3 tensors of `f64` in row-major order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense array of 64-bit floats with one to three extents.
///
/// The product of the extents always equals `data.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::shape(
                "tensor",
                "rank 1..=3",
                format!("rank {}", shape.len()),
            ));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("{:?} = {} values", shape, n),
                format!("{} values", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        debug_assert!(!shape.is_empty() && shape.len() <= 3);
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn filled(shape: Vec<usize>, v: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![v; n],
        }
    }

    /// Rank-1 tensor from values.
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Rank-2 tensor from nested rows.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::shape(
                    "matrix",
                    format!("{} columns", c),
                    format!("{} columns", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Tensor::from_vec(vec![r, c], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    /// Reinterpret the same values under a new shape.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    /// Value of a scalar (single-element) tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.rank(), 2);
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    /// Contiguous slice for example `n` of a rank-3 tensor.
    pub fn example(&self, n: usize) -> &[f64] {
        debug_assert_eq!(self.rank(), 3);
        let stride = self.shape[1] * self.shape[2];
        &self.data[n * stride..(n + 1) * stride]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise accumulate: `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
    }

    pub(crate) fn shape_string(&self) -> String {
        format!("{:?}", self.shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match_data() {
        assert!(Tensor::from_vec(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_vec(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(vec![], vec![]).is_err());
        assert!(Tensor::from_vec(vec![1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn row_and_example_views() {
        let t = Tensor::from_vec(vec![2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.row(1), &[3.0, 4.0, 5.0]);
        let b = Tensor::from_vec(vec![2, 2, 2], (0..8).map(|v| v as f64).collect()).unwrap();
        assert_eq!(b.example(1), &[4.0, 5.0, 6.0, 7.0]);
    }
}

#[cfg(test)]
mod json_roundtrip {
    // Checkpoints and reports promise bit-exact re-parsing; this needs the
    // serde_json `float_roundtrip` feature (the fast-path parser can be one
    // ULP off, e.g. on 0.44582847476715637).
    #[test]
    fn f64_bits_survive_json() {
        let vals: Vec<f64> = vec![
            0.44582847476715637,
            -0.04211143629708625,
            1e-300,
            0.1 + 0.2,
            f64::MIN_POSITIVE,
            1.0 / 3.0,
        ];
        for v in vals {
            let s = serde_json::to_string(&v).unwrap();
            let back: f64 = serde_json::from_str(&s).unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "{v:?} -> {s} -> {back:?}");
        }
    }
}
