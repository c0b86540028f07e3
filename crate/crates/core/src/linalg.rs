//! Small dense linear algebra: a row-major matrix, cyclic Jacobi
//! eigendecomposition for symmetric matrices, and Householder QR with
//! column pivoting for rank-revealing least squares.

use std::ops::{Index, IndexMut};

use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = S::one();
        }
        m
    }

    /// Builds a matrix from row-major data. Panics if the length is wrong.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<S>]) -> Self {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        let mut m = Self::zeros(rows, cols);
        for (j, c) in columns.iter().enumerate() {
            assert_eq!(c.len(), rows, "ragged columns");
            for (i, &v) in c.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<S> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == S::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }
}

impl<S> Index<(usize, usize)> for Matrix<S> {
    type Output = S;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &S {
        &self.data[i * self.cols + j]
    }
}

impl<S> IndexMut<(usize, usize)> for Matrix<S> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut S {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
/// Column `k` of `vectors` is the eigenvector of `values[k]`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<S> {
    pub values: Vec<S>,
    pub vectors: Matrix<S>,
    pub sweeps: usize,
}

/// Cyclic Jacobi rotations until every off-diagonal magnitude is at most
/// `tol`, or `max_sweeps` full sweeps have run.
pub fn jacobi_eigen<S: Scalar>(a: &Matrix<S>, tol: S, max_sweeps: usize) -> SymmetricEigen<S> {
    assert_eq!(a.rows(), a.cols(), "jacobi_eigen needs a square matrix");
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let two = S::lit(2.0);
    let mut sweeps = 0;

    let max_off = |m: &Matrix<S>| {
        let mut worst = S::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                worst = worst.max(m[(p, q)].abs());
            }
        }
        worst
    };

    while sweeps < max_sweeps && max_off(&m) > tol {
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == S::zero() {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                // Rotation angle zeroing (p, q): tan(2θ) = 2 a_pq / (a_qq - a_pp).
                let theta = (aqq - app) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = S::zero();
                m[(q, p)] = S::zero();

                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[(j, j)]
            .partial_cmp(&m[(i, i)])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = order.iter().map(|&k| m[(k, k)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, dst)] = v[(r, src)];
        }
    }
    SymmetricEigen {
        values,
        vectors,
        sweeps,
    }
}

/// Least-squares solution from a column-pivoted QR factorization.
#[derive(Debug, Clone)]
pub struct PivotedLeastSquares<S> {
    /// One entry per input column; `None` marks a column dropped as
    /// linearly dependent on earlier pivots.
    pub coefficients: Vec<Option<S>>,
    pub rank: usize,
    /// Pivot order of the columns.
    pub permutation: Vec<usize>,
}

impl<S: Scalar> PivotedLeastSquares<S> {
    /// Evaluates `X β` using only the estimated coefficients.
    pub fn predict(&self, x: &Matrix<S>) -> Vec<S> {
        (0..x.rows())
            .map(|i| {
                self.coefficients
                    .iter()
                    .enumerate()
                    .filter_map(|(j, b)| b.map(|b| b * x[(i, j)]))
                    .sum()
            })
            .collect()
    }
}

/// Householder QR with column pivoting. A column is kept only if its pivot
/// magnitude is at least `rel_tol` times the leading pivot magnitude.
pub fn pivoted_least_squares<S: Scalar>(
    x: &Matrix<S>,
    y: &[S],
    rel_tol: S,
) -> PivotedLeastSquares<S> {
    let (n, p) = (x.rows(), x.cols());
    assert_eq!(y.len(), n, "response length mismatch");
    let mut a = x.clone();
    let mut b = y.to_vec();
    let mut perm: Vec<usize> = (0..p).collect();
    let steps = n.min(p);
    let mut diag = Vec::with_capacity(steps);

    for k in 0..steps {
        // Pivot: largest remaining column norm below row k; ties go to the
        // lowest original index.
        let mut best = k;
        let mut best_norm = S::lit(-1.0);
        for j in k..p {
            let norm2: S = (k..n).map(|i| a[(i, j)] * a[(i, j)]).sum();
            let better = norm2 > best_norm
                || (norm2 == best_norm && perm[j] < perm[best]);
            if better {
                best = j;
                best_norm = norm2;
            }
        }
        if best != k {
            for i in 0..n {
                let tmp = a[(i, k)];
                a[(i, k)] = a[(i, best)];
                a[(i, best)] = tmp;
            }
            perm.swap(k, best);
        }

        let norm = best_norm.max(S::zero()).sqrt();
        if norm == S::zero() {
            diag.push(S::zero());
            continue;
        }
        let alpha = if a[(k, k)] > S::zero() { -norm } else { norm };
        let mut v: Vec<S> = (k..n).map(|i| a[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm2: S = v.iter().map(|&t| t * t).sum();
        if vnorm2 > S::zero() {
            let two = S::lit(2.0);
            for j in k..p {
                let dot: S = v.iter().enumerate().map(|(r, &vr)| vr * a[(k + r, j)]).sum();
                let f = two * dot / vnorm2;
                for (r, &vr) in v.iter().enumerate() {
                    a[(k + r, j)] -= f * vr;
                }
            }
            let dot: S = v.iter().enumerate().map(|(r, &vr)| vr * b[k + r]).sum();
            let f = two * dot / vnorm2;
            for (r, &vr) in v.iter().enumerate() {
                b[k + r] -= f * vr;
            }
        }
        diag.push(a[(k, k)]);
    }

    let lead = diag.first().map_or(S::zero(), |d| d.abs());
    let rank = if lead == S::zero() {
        0
    } else {
        diag.iter()
            .take_while(|d| d.abs() >= rel_tol * lead)
            .count()
    };

    // Back substitution on the leading rank × rank triangle.
    let mut beta = vec![S::zero(); rank];
    for i in (0..rank).rev() {
        let mut acc = b[i];
        for j in (i + 1)..rank {
            acc -= a[(i, j)] * beta[j];
        }
        beta[i] = acc / a[(i, i)];
    }

    let mut coefficients = vec![None; p];
    for (k, &col) in perm.iter().enumerate().take(rank) {
        coefficients[col] = Some(beta[k]);
    }
    PivotedLeastSquares {
        coefficients,
        rank,
        permutation: perm,
    }
}
