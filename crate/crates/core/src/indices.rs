//! Composite indices from base indicators, and their reduction by
//! correlation-matrix PCA into a univariate external field.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{group_labels, Dataset};
use crate::linalg::{jacobi_eigen, Matrix};
use crate::scalar::Scalar;
use crate::stats::{self, SdConvention};

#[derive(Debug, Error, PartialEq)]
pub enum IndicesError {
    #[error("zero variance in `{0}`")]
    ZeroVariance(String),
    #[error("row {0}: profile mean is zero")]
    DegenerateRow(usize),
    #[error("indicator `{0}` missing from dataset")]
    MissingIndicator(String),
    #[error("need at least two rows, got {0}")]
    TooFewRows(usize),
}

/// Location and scale used for one indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats<S> {
    pub mean: S,
    pub sd: S,
}

/// Sign applied to the dispersion penalty of a composite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Positive,
    #[default]
    Negative,
}

/// `10 · pol · (x − μ) / σ + 100`, elementwise.
pub fn standardize<S: Scalar>(
    column: &[S],
    polarity: i8,
    conv: SdConvention,
) -> Result<(Vec<S>, StandardizationStats<S>), IndicesError> {
    let mean = stats::mean(column);
    let sd = stats::std_dev(column, conv);
    if !(sd > S::zero()) {
        return Err(IndicesError::ZeroVariance(String::new()));
    }
    let factor = S::lit(10.0) * S::lit(f64::from(polarity)) / sd;
    let hundred = S::lit(100.0);
    let z = column.iter().map(|&x| factor * (x - mean) + hundred).collect();
    Ok((z, StandardizationStats { mean, sd }))
}

/// Non-compensatory aggregate of each row of a standardized block:
/// `M_i ± S_i² / M_i`, where `M_i`, `S_i` are the row mean and sd.
pub fn mpi<S: Scalar>(
    z: &Matrix<S>,
    direction: Direction,
    conv: SdConvention,
) -> Result<Vec<S>, IndicesError> {
    let m = z.cols();
    (0..z.rows())
        .map(|i| {
            let row = z.row(i);
            let mean = stats::mean(row);
            if mean == S::zero() {
                return Err(IndicesError::DegenerateRow(i));
            }
            let sd = if m < 2 {
                S::zero()
            } else {
                stats::std_dev(row, conv)
            };
            let penalty = sd * sd / mean;
            Ok(match direction {
                Direction::Positive => mean + penalty,
                Direction::Negative => mean - penalty,
            })
        })
        .collect()
}

/// N × K matrix of composite indices, one column per indicator group.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeMatrix<S> {
    pub names: Vec<String>,
    pub values: Matrix<S>,
    pub directions: Vec<Direction>,
    /// Standardization of every base indicator, keyed by indicator name.
    pub indicator_stats: BTreeMap<String, StandardizationStats<S>>,
}

impl<S: Scalar> CompositeMatrix<S> {
    pub fn k(&self) -> usize {
        self.values.cols()
    }
}

/// Standardizes every indicator and aggregates each group into its
/// composite. `directions` overrides the default (negative) sign per group.
pub fn build_composites<S: Scalar>(
    d: &Dataset,
    directions: &BTreeMap<String, Direction>,
    conv: SdConvention,
) -> Result<CompositeMatrix<S>, IndicesError> {
    let n = d.len();
    let names = group_labels(&d.spec);
    let mut columns = Vec::with_capacity(names.len());
    let mut dirs = Vec::with_capacity(names.len());
    let mut indicator_stats = BTreeMap::new();

    for group in &names {
        let members: Vec<_> = d.spec.iter().filter(|s| &s.group == group).collect();
        let mut block = Matrix::zeros(n, members.len());
        for (j, ind) in members.iter().enumerate() {
            let raw: Vec<S> = d
                .indicator_column(&ind.name)
                .ok_or_else(|| IndicesError::MissingIndicator(ind.name.clone()))?
                .into_iter()
                .map(S::lit)
                .collect();
            let (z, st) = standardize(&raw, ind.polarity, conv).map_err(|e| match e {
                IndicesError::ZeroVariance(_) => IndicesError::ZeroVariance(ind.name.clone()),
                other => other,
            })?;
            indicator_stats.insert(ind.name.clone(), st);
            for (i, v) in z.into_iter().enumerate() {
                block[(i, j)] = v;
            }
        }
        let dir = directions.get(group).copied().unwrap_or_default();
        columns.push(mpi(&block, dir, conv)?);
        dirs.push(dir);
    }

    Ok(CompositeMatrix {
        names,
        values: Matrix::from_columns(&columns),
        directions: dirs,
        indicator_stats,
    })
}

/// Pearson correlation matrix of the columns.
pub fn correlation_matrix<S: Scalar>(
    values: &Matrix<S>,
    names: &[String],
) -> Result<Matrix<S>, IndicesError> {
    let k = values.cols();
    let cols: Vec<Vec<S>> = (0..k).map(|j| values.column(j)).collect();
    let mut r = Matrix::identity(k);
    for a in 0..k {
        if stats::variance(&cols[a], SdConvention::Sample) <= S::zero() {
            return Err(IndicesError::ZeroVariance(
                names.get(a).cloned().unwrap_or_else(|| format!("column {a}")),
            ));
        }
        for b in (a + 1)..k {
            let v = stats::pearson(&cols[a], &cols[b]).ok_or_else(|| {
                IndicesError::ZeroVariance(names.get(b).cloned().unwrap_or_default())
            })?;
            r[(a, b)] = v;
            r[(b, a)] = v;
        }
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaSummary<S> {
    /// K × K; column `k` holds the loadings of component `k`.
    pub loadings: Matrix<S>,
    /// Descending, non-negative.
    pub eigenvalues: Vec<S>,
    pub proportions: Vec<S>,
    /// N × K component scores.
    pub scores: Matrix<S>,
    /// `true` where the raw eigenvector was negated by the sign convention.
    pub sign_flipped: Vec<bool>,
    /// Per-column location and scale applied before decomposition.
    pub column_stats: Vec<StandardizationStats<S>>,
    /// Components kept for the field (all by default).
    pub retained: usize,
}

impl<S: Scalar> PcaSummary<S> {
    pub fn std_devs(&self) -> Vec<S> {
        self.eigenvalues.iter().map(|l| l.sqrt()).collect()
    }

    pub fn cumulative_proportions(&self) -> Vec<S> {
        let mut acc = S::zero();
        self.proportions
            .iter()
            .map(|&p| {
                acc += p;
                acc
            })
            .collect()
    }

    /// Column-standardized input matrix the decomposition was computed on.
    pub fn standardized_input(&self, values: &Matrix<S>) -> Matrix<S> {
        standardize_columns(values, &self.column_stats)
    }
}

fn standardize_columns<S: Scalar>(values: &Matrix<S>, st: &[StandardizationStats<S>]) -> Matrix<S> {
    let mut z = values.clone();
    for i in 0..z.rows() {
        for (j, s) in st.iter().enumerate() {
            z[(i, j)] = (z[(i, j)] - s.mean) / s.sd;
        }
    }
    z
}

/// Correlation-matrix PCA by cyclic Jacobi rotations. Zero eigenvalues
/// (exact collinearity, or fewer rows than columns) are kept with zero
/// weight. `retain` optionally truncates the number of components that feed
/// the external field.
pub fn pca<S: Scalar>(
    values: &Matrix<S>,
    names: &[String],
    retain: Option<usize>,
) -> Result<PcaSummary<S>, IndicesError> {
    let (n, k) = (values.rows(), values.cols());
    if n < 2 {
        return Err(IndicesError::TooFewRows(n));
    }
    let mut column_stats = Vec::with_capacity(k);
    for j in 0..k {
        let col = values.column(j);
        let sd = stats::std_dev(&col, SdConvention::Sample);
        if !(sd > S::zero()) {
            return Err(IndicesError::ZeroVariance(
                names.get(j).cloned().unwrap_or_else(|| format!("column {j}")),
            ));
        }
        column_stats.push(StandardizationStats {
            mean: stats::mean(&col),
            sd,
        });
    }
    let z = standardize_columns(values, &column_stats);
    let mut corr = z.transpose().matmul(&z);
    let denom = S::from_count(n - 1);
    for i in 0..k {
        for j in 0..k {
            corr[(i, j)] /= denom;
        }
    }

    let tol = S::lit(1e-12).max(S::epsilon() * S::lit(100.0));
    let eig = jacobi_eigen(&corr, tol, 200);
    let trace: S = eig.values.iter().copied().sum();
    let snap = S::lit(1e-12).max(S::epsilon() * S::lit(10.0)) * trace;
    let eigenvalues: Vec<S> = eig
        .values
        .iter()
        .map(|&l| if l <= snap { S::zero() } else { l })
        .collect();
    let total: S = eigenvalues.iter().copied().sum();
    let proportions = eigenvalues.iter().map(|&l| l / total).collect();

    let mut loadings = eig.vectors;
    let mut sign_flipped = vec![false; k];
    for c in 0..k {
        let mut lead = 0;
        for r in 1..k {
            if loadings[(r, c)].abs() > loadings[(lead, c)].abs() {
                lead = r;
            }
        }
        if loadings[(lead, c)] < S::zero() {
            sign_flipped[c] = true;
            for r in 0..k {
                loadings[(r, c)] = -loadings[(r, c)];
            }
        }
    }
    let scores = z.matmul(&loadings);

    Ok(PcaSummary {
        loadings,
        eigenvalues,
        proportions,
        scores,
        sign_flipped,
        column_stats,
        retained: retain.unwrap_or(k).clamp(1, k),
    })
}

/// Univariate external field: component scores weighted by normalized
/// eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalField<S> {
    pub h: Vec<S>,
    /// Weight of every component (zero beyond the retained count).
    pub weights: Vec<S>,
}

impl<S: Scalar> ExternalField<S> {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// Field from explicit values (no PCA provenance).
    pub fn from_values(h: Vec<S>) -> Self {
        Self {
            h,
            weights: Vec::new(),
        }
    }
}

pub fn external_field<S: Scalar>(p: &PcaSummary<S>) -> ExternalField<S> {
    let k = p.eigenvalues.len();
    let kept: S = p.eigenvalues[..p.retained].iter().copied().sum();
    let weights: Vec<S> = (0..k)
        .map(|c| {
            if c < p.retained && kept > S::zero() {
                p.eigenvalues[c] / kept
            } else {
                S::zero()
            }
        })
        .collect();
    let h = (0..p.scores.rows())
        .map(|i| {
            weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != S::zero())
                .map(|(c, &w)| w * p.scores[(i, c)])
                .sum()
        })
        .collect();
    ExternalField { h, weights }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn standardize_mean_and_sd() {
        let (z, _) = standardize(&[1.0, 2.0, 3.0], 1, SdConvention::Sample).unwrap();
        assert_abs_diff_eq!(stats::mean(&z), 100.0, epsilon = 1e-9);
        assert_abs_diff_eq!(stats::std_dev(&z, SdConvention::Sample), 10.0, epsilon = 1e-9);
    }

    #[test]
    fn standardize_population_example() {
        let (z, st) = standardize(&[2.0, 4.0, 6.0, 8.0], 1, SdConvention::Population).unwrap();
        assert_abs_diff_eq!(st.mean, 5.0);
        // Hand evaluation with μ = 5, σ = √5.
        let expected = [86.5836, 95.5279, 104.4721, 113.4164];
        for (a, b) in z.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-4);
        }
    }

    #[test]
    fn negative_polarity_reflects_about_100() {
        let x = [1.0, 2.0, 3.0];
        let (p, _) = standardize(&x, 1, SdConvention::Sample).unwrap();
        let (m, _) = standardize(&x, -1, SdConvention::Sample).unwrap();
        for (a, b) in p.iter().zip(&m) {
            assert_abs_diff_eq!(*b, 200.0 - a, epsilon = 1e-12);
        }
    }

    #[test]
    fn standardize_zero_variance() {
        assert!(matches!(
            standardize(&[3.0, 3.0], 1, SdConvention::Sample),
            Err(IndicesError::ZeroVariance(_))
        ));
    }

    #[test]
    fn mpi_examples() {
        let single = Matrix::from_columns(&[vec![91.0, 104.0, 111.0]]);
        assert_eq!(mpi(&single, Direction::Negative, SdConvention::Sample).unwrap(), vec![91.0, 104.0, 111.0]);

        let row = Matrix::from_row_major(1, 2, vec![90.0, 110.0]);
        let pop = mpi(&row, Direction::Negative, SdConvention::Population).unwrap();
        assert_abs_diff_eq!(pop[0], 99.0, epsilon = 1e-12);
        let sample = mpi(&row, Direction::Negative, SdConvention::Sample).unwrap();
        assert_abs_diff_eq!(sample[0], 98.0, epsilon = 1e-12);

        let flat = Matrix::from_row_major(1, 3, vec![105.0, 105.0, 105.0]);
        for dir in [Direction::Positive, Direction::Negative] {
            assert_abs_diff_eq!(mpi(&flat, dir, SdConvention::Sample).unwrap()[0], 105.0);
        }
    }

    #[test]
    fn mpi_degenerate_row() {
        let row = Matrix::from_row_major(2, 2, vec![1.0, 2.0, -1.0, 1.0]);
        assert_eq!(
            mpi(&row, Direction::Negative, SdConvention::Sample),
            Err(IndicesError::DegenerateRow(1))
        );
    }

    fn names(k: usize) -> Vec<String> {
        (1..=k).map(|i| format!("MPI{i}")).collect()
    }

    #[test]
    fn correlation_of_duplicated_column() {
        let a = vec![1.0, 3.0, 2.0, 5.0, 4.0];
        let b = vec![2.0, 1.0, 4.0, 3.0, 6.0];
        let m = Matrix::from_columns(&[a.clone(), b, a]);
        let r = correlation_matrix(&m, &names(3)).unwrap();
        assert_abs_diff_eq!(r[(0, 2)], 1.0, epsilon = 1e-12);
        for i in 0..3 {
            assert_eq!(r[(i, i)], 1.0);
        }
        assert_eq!(r[(0, 1)], r[(1, 0)]);
    }

    #[test]
    fn correlation_constant_column_errors() {
        let m = Matrix::from_columns(&[vec![1.0, 2.0, 3.0], vec![4.0, 4.0, 4.0]]);
        assert_eq!(
            correlation_matrix(&m, &names(2)),
            Err(IndicesError::ZeroVariance("MPI2".into()))
        );
    }

    #[test]
    fn field_uniform_and_degenerate_weights() {
        let scores = Matrix::from_row_major(2, 2, vec![1.0, 3.0, -2.0, 4.0]);
        let mut p = PcaSummary {
            loadings: Matrix::identity(2),
            eigenvalues: vec![1.0, 1.0],
            proportions: vec![0.5, 0.5],
            scores,
            sign_flipped: vec![false; 2],
            column_stats: vec![],
            retained: 2,
        };
        assert_eq!(external_field(&p).h, vec![2.0, 1.0]);
        p.eigenvalues = vec![2.0, 0.0];
        assert_eq!(external_field(&p).h, vec![1.0, -2.0]);
    }

    #[test]
    fn field_with_tabulated_proportions() {
        // Six components with the published proportion row; the last is zero.
        let props = [0.4817, 0.1967, 0.1575, 0.1094, 0.0546, 0.0];
        let total: f64 = props.iter().sum();
        let scores = Matrix::from_row_major(1, 6, vec![1.0, -1.0, 2.0, 0.5, 3.0, 99.0]);
        let p = PcaSummary {
            loadings: Matrix::identity(6),
            eigenvalues: props.to_vec(),
            proportions: props.to_vec(),
            scores,
            sign_flipped: vec![false; 6],
            column_stats: vec![],
            retained: 6,
        };
        let f = external_field(&p);
        let expected = (0.4817 - 0.1967 + 2.0 * 0.1575 + 0.5 * 0.1094 + 3.0 * 0.0546) / total;
        assert_abs_diff_eq!(f.h[0], expected, epsilon = 1e-12);
        assert_eq!(f.weights[5], 0.0);
    }

    #[test]
    fn truncation_renormalizes() {
        let scores = Matrix::from_row_major(1, 3, vec![1.0, 2.0, 4.0]);
        let p = PcaSummary {
            loadings: Matrix::identity(3),
            eigenvalues: vec![3.0, 1.0, 0.5],
            proportions: vec![0.0; 3],
            scores,
            sign_flipped: vec![false; 3],
            column_stats: vec![],
            retained: 2,
        };
        let f = external_field(&p);
        assert_abs_diff_eq!(f.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.h[0], 0.75 * 1.0 + 0.25 * 2.0, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn standardize_is_affine_invariant(
            xs in proptest::collection::vec(-50.0f64..50.0, 3..20),
            a in 0.1f64..10.0,
            b in -100.0f64..100.0,
        ) {
            prop_assume!(stats::std_dev(&xs, SdConvention::Sample) > 1e-3);
            let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let (zx, _) = standardize(&xs, 1, SdConvention::Sample).unwrap();
            let (zy, _) = standardize(&ys, 1, SdConvention::Sample).unwrap();
            for (p, q) in zx.iter().zip(&zy) {
                prop_assert!((p - q).abs() < 1e-8);
            }
        }
    }
}
