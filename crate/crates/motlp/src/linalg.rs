//! Minimal dense linear algebra used by the simplex solver: a row-major
//! matrix and LU solves with partial pivoting. Works over any [`Scalar`],
//! including exact rationals (pivoting by largest absolute value is still
//! valid there and keeps the code path identical).

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> DenseMatrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        DenseMatrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &S {
        &self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] = v;
    }

    /// `A x` for a dense vector.
    pub fn mul_vec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(x)
                    .fold(S::zero(), |acc, (a, b)| acc + a.clone() * b.clone())
            })
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j).clone());
            }
        }
        t
    }
}

/// Solves the square system `A x = b` by Gaussian elimination with partial
/// pivoting, consuming `a`. Returns `None` when a pivot falls below
/// `pivot_tol` (singular within tolerance).
pub fn lu_solve<S: Scalar>(mut a: DenseMatrix<S>, b: &[S], pivot_tol: &S) -> Option<Vec<S>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    assert_eq!(n, b.len());
    let mut x: Vec<S> = b.to_vec();

    for col in 0..n {
        let mut best = col;
        let mut best_abs = a.get(col, col).abs();
        for r in col + 1..n {
            let v = a.get(r, col).abs();
            if v > best_abs {
                best_abs = v;
                best = r;
            }
        }
        if best_abs <= *pivot_tol {
            return None;
        }
        if best != col {
            for j in col..n {
                let tmp = a.get(col, j).clone();
                a.set(col, j, a.get(best, j).clone());
                a.set(best, j, tmp);
            }
            x.swap(col, best);
        }
        let pivot = a.get(col, col).clone();
        for r in col + 1..n {
            let factor = a.get(r, col).clone() / pivot.clone();
            if factor.is_zero() {
                continue;
            }
            for j in col + 1..n {
                let v = a.get(r, j).clone() - factor.clone() * a.get(col, j).clone();
                a.set(r, j, v);
            }
            a.set(r, col, S::zero());
            x[r] = x[r].clone() - factor * x[col].clone();
        }
    }

    for col in (0..n).rev() {
        let mut acc = x[col].clone();
        for j in col + 1..n {
            acc = acc - a.get(col, j).clone() * x[j].clone();
        }
        x[col] = acc / a.get(col, col).clone();
    }
    Some(x)
}
