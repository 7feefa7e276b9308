//! Dense symmetric matrices and Cholesky-based helpers.
//!
//! Orders in this crate stay small (a few dozen at most), so everything is
//! stored densely in row-major order.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Pivots at or below this fraction of the largest diagonal entry are
/// treated as a loss of positive definiteness.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// A real symmetric matrix.
#[derive(Clone, PartialEq)]
pub struct SymMatrix {
    order: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(order: usize) -> Self {
        Self {
            order,
            data: vec![0.0; order * order],
        }
    }

    pub fn identity(order: usize) -> Self {
        let mut m = Self::zeros(order);
        for i in 0..order {
            m.data[i * order + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from `f(i, j)` evaluated on the upper triangle and
    /// mirrored onto the lower one.
    pub fn from_fn(order: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(order);
        for i in 0..order {
            for j in i..order {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Builds a matrix from rows, rejecting ragged input or asymmetry beyond
    /// rounding noise. The stored matrix is exactly symmetric.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let order = rows.len();
        for row in rows {
            if row.as_ref().len() != order {
                return Err(Error::DimensionMismatch {
                    expected: order,
                    found: row.as_ref().len(),
                });
            }
        }
        for i in 0..order {
            for j in (i + 1)..order {
                let a = rows[i].as_ref()[j];
                let b = rows[j].as_ref()[i];
                let scale = a.abs().max(b.abs()).max(1.0);
                if (a - b).abs() > 1e-12 * scale {
                    return Err(Error::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self::from_fn(order, |i, j| rows[i].as_ref()[j]))
    }

    /// Diagonal matrix with the given entries.
    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.data[i * values.len() + i] = v;
        }
        m
    }

    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.order + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.order + j] = value;
        self.data[j * self.order + i] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.order..(i + 1) * self.order]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.order).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.order).map(|i| self.get(i, i)).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            order: self.order,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    pub fn add(&self, other: &SymMatrix) -> Result<Self> {
        self.check_order(other.order)?;
        Ok(Self {
            order: self.order,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    /// `self + weight * v vᵀ`.
    pub fn add_outer(&self, weight: f64, v: &[f64]) -> Result<Self> {
        self.check_order(v.len())?;
        let mut out = self.clone();
        for i in 0..self.order {
            for j in 0..self.order {
                out.data[i * self.order + j] += weight * v[i] * v[j];
            }
        }
        Ok(out)
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_order(v.len())?;
        Ok((0..self.order)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Quadratic form `vᵀ A v`.
    pub fn quad_form(&self, v: &[f64]) -> Result<f64> {
        Ok(self.mul_vec(v)?.iter().zip(v).map(|(a, b)| a * b).sum())
    }

    /// Plain (non-symmetric in general) product, returned as rows.
    pub fn matmul(&self, other: &SymMatrix) -> Result<Vec<Vec<f64>>> {
        self.check_order(other.order)?;
        let n = self.order;
        Ok((0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| self.get(i, k) * other.get(k, j)).sum())
                    .collect()
            })
            .collect())
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.order, other.order, "order mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn check_order(&self, found: usize) -> Result<()> {
        if found != self.order {
            return Err(Error::DimensionMismatch {
                expected: self.order,
                found,
            });
        }
        Ok(())
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.to_rows()).finish()
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    order: usize,
    lower: Vec<f64>,
}

impl SpdFactor {
    pub fn order(&self) -> usize {
        self.order
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.order + j]
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> SymMatrix {
        let n = self.order;
        SymMatrix::from_fn(n, |i, j| {
            (0..=i.min(j))
                .map(|k| self.get(i, k) * self.get(j, k))
                .sum()
        })
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.order).map(|i| self.get(i, i).ln()).sum::<f64>()
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.order;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.get(i, k) * y[k];
            }
            y[i] = s / self.get(i, i);
        }
        y
    }

    /// Solves `Lᵀ x = b`.
    pub fn solve_upper(&self, b: &[f64]) -> Vec<f64> {
        let n = self.order;
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.get(k, i) * x[k];
            }
            x[i] = s / self.get(i, i);
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    pub fn inverse(&self) -> SymMatrix {
        let n = self.order;
        let mut inv = SymMatrix::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for (i, &v) in col.iter().enumerate().skip(j) {
                inv.set(i, j, v);
            }
        }
        inv
    }
}

/// Cholesky factorization of a symmetric positive-definite matrix.
pub fn spd_factor(a: &SymMatrix) -> Result<SpdFactor> {
    let n = a.order();
    let max_diag = a.diag().into_iter().fold(0.0, f64::max);
    let threshold = PIVOT_TOLERANCE * max_diag;
    let mut lower = vec![0.0; n * n];
    for j in 0..n {
        let mut pivot = a.get(j, j);
        for k in 0..j {
            pivot -= lower[j * n + k] * lower[j * n + k];
        }
        if !(pivot > threshold) || max_diag <= 0.0 {
            return Err(Error::NotPositiveDefinite { row: j, pivot });
        }
        let d = pivot.sqrt();
        lower[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= lower[i * n + k] * lower[j * n + k];
            }
            lower[i * n + j] = s / d;
        }
    }
    Ok(SpdFactor { order: n, lower })
}

/// Natural log of the determinant, via the Cholesky factor.
pub fn log_det(a: &SymMatrix) -> Result<f64> {
    Ok(spd_factor(a)?.log_det())
}

pub fn invert_spd(a: &SymMatrix) -> Result<SymMatrix> {
    Ok(spd_factor(a)?.inverse())
}

/// Restricts rows and columns to `keep`, in the order given.
pub fn submatrix(a: &SymMatrix, keep: &[usize]) -> Result<SymMatrix> {
    let n = a.order();
    let mut seen = vec![false; n];
    for &k in keep {
        if k >= n {
            return Err(Error::IndexOutOfRange { index: k, order: n });
        }
        if std::mem::replace(&mut seen[k], true) {
            return Err(Error::DuplicateIndex(k));
        }
    }
    Ok(SymMatrix::from_fn(keep.len(), |i, j| {
        a.get(keep[i], keep[j])
    }))
}

/// Restricts a vector to `keep`, in the order given.
pub fn subvector(v: &[f64], keep: &[usize]) -> Vec<f64> {
    keep.iter().map(|&k| v[k]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eq6_precision() -> SymMatrix {
        SymMatrix::from_rows(&[[2.0, 1.0, -1.0], [1.0, 2.0, -1.0], [-1.0, -1.0, 1.0]]).unwrap()
    }

    #[test]
    fn factor_identity_and_scalar() {
        let f = spd_factor(&SymMatrix::identity(3)).unwrap();
        assert_eq!(f.reconstruct(), SymMatrix::identity(3));
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(f.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
        let f = spd_factor(&SymMatrix::from_rows(&[[4.0]]).unwrap()).unwrap();
        assert_eq!(f.get(0, 0), 2.0);
    }

    #[test]
    fn factor_rejects_indefinite() {
        let a = SymMatrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(matches!(
            spd_factor(&a),
            Err(Error::NotPositiveDefinite { row: 1, .. })
        ));
        assert!(spd_factor(&SymMatrix::zeros(2)).is_err());
    }

    #[test]
    fn rejects_asymmetric_rows() {
        let r = SymMatrix::from_rows(&[[1.0, 2.0], [2.5, 1.0]]);
        assert!(matches!(r, Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn log_det_examples() {
        assert_eq!(log_det(&SymMatrix::identity(3)).unwrap(), 0.0);
        let two = SymMatrix::from_rows(&[[2.0]]).unwrap();
        assert!((log_det(&two).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_det_of_rounded_posterior_scatter() {
        // Cofactor expansion of the 3x3 matrix done by hand.
        let t = SymMatrix::from_rows(&[[13.8, 11.3, 6.7], [11.3, 35.8, 27.7], [6.7, 27.7, 41.2]])
            .unwrap();
        let cofactor: f64 = 13.8 * (35.8 * 41.2 - 27.7 * 27.7) - 11.3 * (11.3 * 41.2 - 27.7 * 6.7)
            + 6.7 * (11.3 * 27.7 - 35.8 * 6.7);
        assert!((cofactor - 7092.29).abs() < 1e-6);
        assert!((log_det(&t).unwrap() - cofactor.ln()).abs() < 1e-12);
        assert!((log_det(&t).unwrap() - 8.867).abs() < 1e-3);
    }

    #[test]
    fn invert_examples() {
        assert_eq!(
            invert_spd(&SymMatrix::identity(4)).unwrap(),
            SymMatrix::identity(4)
        );
        let inv = invert_spd(&eq6_precision()).unwrap();
        let expected =
            SymMatrix::from_rows(&[[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 3.0]]).unwrap();
        assert!(inv.max_abs_diff(&expected) < 1e-12);
        let prod = eq6_precision().matmul(&inv).unwrap();
        for (i, row) in prod.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((v - target).abs() < 1e-9);
            }
        }
        let q = invert_spd(&SymMatrix::from_rows(&[[4.0]]).unwrap()).unwrap();
        assert_eq!(q.get(0, 0), 0.25);
    }

    #[test]
    fn submatrix_examples() {
        let id = SymMatrix::identity(3);
        assert_eq!(submatrix(&id, &[0, 2]).unwrap(), SymMatrix::identity(2));
        let t0 =
            SymMatrix::from_rows(&[[1.7, 0.0, 1.7], [0.0, 1.7, 1.7], [1.7, 1.7, 5.1]]).unwrap();
        let sub = submatrix(&t0, &[0, 1]).unwrap();
        assert_eq!(sub.to_rows(), vec![vec![1.7, 0.0], vec![0.0, 1.7]]);
        assert_eq!(submatrix(&t0, &[0, 1, 2]).unwrap(), t0);
        assert_eq!(
            submatrix(&t0, &[2, 0]).unwrap().to_rows(),
            vec![vec![5.1, 1.7], vec![1.7, 1.7]]
        );
        assert!(matches!(
            submatrix(&t0, &[3]),
            Err(Error::IndexOutOfRange { index: 3, order: 3 })
        ));
        assert!(matches!(
            submatrix(&t0, &[1, 1]),
            Err(Error::DuplicateIndex(1))
        ));
    }

    fn random_spd() -> impl Strategy<Value = SymMatrix> {
        (1usize..=8).prop_flat_map(|n| {
            prop::collection::vec(-2.0f64..2.0, n * n).prop_map(move |g| {
                SymMatrix::from_fn(n, |i, j| {
                    let dot: f64 = (0..n).map(|k| g[i * n + k] * g[j * n + k]).sum();
                    dot + if i == j { 0.1 } else { 0.0 }
                })
            })
        })
    }

    proptest! {
        #[test]
        fn factor_roundtrip(a in random_spd()) {
            let back = spd_factor(&a).unwrap().reconstruct();
            for i in 0..a.order() {
                for j in 0..a.order() {
                    let scale = a.get(i, i).sqrt() * a.get(j, j).sqrt();
                    prop_assert!((back.get(i, j) - a.get(i, j)).abs() <= 1e-10 * scale);
                }
            }
        }

        #[test]
        fn log_det_of_inverse_cancels(a in random_spd()) {
            let total = log_det(&a).unwrap() + log_det(&invert_spd(&a).unwrap()).unwrap();
            prop_assert!(total.abs() < 1e-8, "sum = {}", total);
        }
    }
}
