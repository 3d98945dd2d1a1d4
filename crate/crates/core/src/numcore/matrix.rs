use serde::{Deserialize, Serialize};

use crate::error::{ProfsError, Result};

/// A finite, non-empty real vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vec64(Vec<f64>);

impl Vec64 {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(ProfsError::invalid("vector must have dim >= 1"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ProfsError::NonFinite("vector".into()));
        }
        Ok(Self(data))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl AsRef<[f64]> for Vec64 {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Dense row-major matrix. Batches of samples and embeddings are stored one per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(ProfsError::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Stacks equally sized rows. An empty input yields a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(ProfsError::DimensionMismatch {
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on 0
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// New matrix made of the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn squared_distance_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

#[inline]
pub(crate) fn distance_unchecked(a: &[f64], b: &[f64]) -> f64 {
    squared_distance_unchecked(a, b).sqrt()
}

/// Euclidean distance between two embeddings.
pub fn pairwise_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(ProfsError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(distance_unchecked(a, b))
}

/// All-pairs Euclidean distances between the rows of `points`.
///
/// The result is exactly symmetric with a zero diagonal; entry `(i, j)` is
/// bit-identical to `pairwise_distance(row i, row j)`.
pub fn distance_matrix(points: &Matrix) -> Matrix {
    let n = points.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = distance_unchecked(points.row(i), points.row(j));
            out.data[i * n + j] = d;
            out.data[j * n + i] = d;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distance_examples() {
        let e = [0.3, -1.2];
        assert_eq!(pairwise_distance(&e, &e).unwrap(), 0.0);
        assert_eq!(pairwise_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(matches!(
            pairwise_distance(&[0.0], &[1.0, 2.0]),
            Err(ProfsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn distance_matrix_small() {
        let one = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(distance_matrix(&one).as_slice(), &[0.0]);
        let two = Matrix::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(distance_matrix(&two).as_slice(), &[0.0, 5.0, 5.0, 0.0]);
    }

    #[test]
    fn vec64_rejects_non_finite() {
        assert!(Vec64::new(vec![1.0, f64::NAN]).is_err());
        assert!(Vec64::new(vec![]).is_err());
    }

    fn points(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-10.0..10.0f64, d), n)
    }

    proptest! {
        #[test]
        fn metric_axioms(p in points(3, 4)) {
            let (a, b, c) = (&p[0], &p[1], &p[2]);
            let ab = pairwise_distance(a, b).unwrap();
            let ba = pairwise_distance(b, a).unwrap();
            let bc = pairwise_distance(b, c).unwrap();
            let ac = pairwise_distance(a, c).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert_eq!(pairwise_distance(a, a).unwrap(), 0.0);
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn matrix_matches_scalar_loop(p in points(7, 3)) {
            let m = Matrix::from_rows(&p).unwrap();
            let dm = distance_matrix(&m);
            for i in 0..p.len() {
                for j in 0..p.len() {
                    prop_assert_eq!(dm.get(i, j), pairwise_distance(&p[i], &p[j]).unwrap());
                }
            }
        }
    }
}
