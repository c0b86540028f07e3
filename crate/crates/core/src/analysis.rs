//! Post-simulation comparisons: error metrics and a paired t-test between
//! observed and estimated outcomes, residual associations with the composite
//! indices, standardized OLS, per-attribute group summaries and a linear
//! baseline.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ingest::{Attribute, Dataset};
use crate::linalg::{pivoted_least_squares, Matrix};
use crate::scalar::Scalar;
use crate::stats::{self, SdConvention};

/// Relative pivot threshold below which a regressor is not estimated.
pub const COLLINEARITY_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} units, got {got}")]
    TooFewUnits { needed: usize, got: usize },
    #[error("zero variance in {0}")]
    ZeroVariance(String),
    #[error("no regressor survives the collinearity check")]
    AllCollinear,
}

fn check_len(a: usize, b: usize) -> Result<(), AnalysisError> {
    if a != b {
        return Err(AnalysisError::LengthMismatch(a, b));
    }
    Ok(())
}

fn check_min(n: usize, needed: usize) -> Result<(), AnalysisError> {
    if n < needed {
        return Err(AnalysisError::TooFewUnits { needed, got: n });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTTest<S> {
    pub mean_diff: S,
    pub t_stat: S,
    pub df: usize,
    pub p_value: S,
    pub ci95_lo: S,
    pub ci95_hi: S,
}

/// Paired t-test on differences `d`.
pub fn paired_t_test<S: Scalar>(d: &[S]) -> Result<PairedTTest<S>, AnalysisError> {
    check_min(d.len(), 2)?;
    let n = S::from_count(d.len());
    let m = stats::mean(d);
    let sd = stats::std_dev(d, SdConvention::Sample);
    if !(sd > S::zero()) {
        return Err(AnalysisError::ZeroVariance("differences".into()));
    }
    let se = sd / n.sqrt();
    let df = d.len() - 1;
    let dff = S::from_count(df);
    let t = m / se;
    let crit = stats::student_t_quantile(S::lit(0.975), dff);
    Ok(PairedTTest {
        mean_diff: m,
        t_stat: t,
        df,
        p_value: stats::student_t_two_sided_p(t, dff),
        ci95_lo: m - crit * se,
        ci95_hi: m + crit * se,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComparisonReport<S> {
    pub n: usize,
    pub mean_obs: S,
    pub mean_est: S,
    pub mae: S,
    pub rmse: S,
    /// `None` when either series is constant.
    pub pearson_r: Option<S>,
    /// `None` when the differences have zero variance.
    pub t_test: Option<PairedTTest<S>>,
}

/// `(RMSE, MAE)` of `est` against `obs`.
pub fn error_metrics<S: Scalar>(obs: &[S], est: &[S]) -> (S, S) {
    let n = S::from_count(obs.len());
    let (mut sq, mut ab) = (S::zero(), S::zero());
    for (&o, &e) in obs.iter().zip(est) {
        let d = e - o;
        sq += d * d;
        ab += d.abs();
    }
    ((sq / n).sqrt(), ab / n)
}

/// Error metrics, correlation and paired t-test of `y_est` against `y_ref`.
pub fn compare<S: Scalar>(y_ref: &[S], y_est: &[S]) -> Result<ComparisonReport<S>, AnalysisError> {
    check_len(y_ref.len(), y_est.len())?;
    check_min(y_ref.len(), 2)?;
    let d: Vec<S> = y_est.iter().zip(y_ref).map(|(&e, &o)| e - o).collect();
    let (rmse, mae) = error_metrics(y_ref, y_est);
    let t_test = match paired_t_test(&d) {
        Ok(t) => Some(t),
        Err(AnalysisError::ZeroVariance(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(ComparisonReport {
        n: y_ref.len(),
        mean_obs: stats::mean(y_ref),
        mean_est: stats::mean(y_est),
        mae,
        rmse,
        pearson_r: stats::pearson(y_ref, y_est),
        t_test,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Association<S> {
    pub name: String,
    pub pearson: Option<S>,
    pub spearman: Option<S>,
}

/// Pearson and Spearman correlation of the residuals with each composite
/// column. Undefined correlations (a constant series) are `None`.
pub fn residual_associations<S: Scalar>(
    residuals: &[S],
    composite: &Matrix<S>,
    names: &[String],
) -> Result<Vec<Association<S>>, AnalysisError> {
    check_len(residuals.len(), composite.rows())?;
    check_len(names.len(), composite.cols())?;
    check_min(residuals.len(), 3)?;
    Ok(names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col = composite.column(j);
            Association {
                name: name.clone(),
                pearson: stats::pearson(residuals, &col),
                spearman: stats::spearman(residuals, &col),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsCoefficient<S> {
    pub name: String,
    /// `None` marks a regressor dropped for collinearity.
    pub estimate: Option<S>,
}

impl<S> OlsCoefficient<S> {
    pub fn not_estimated(&self) -> bool {
        self.estimate.is_none()
    }
}

fn z_scores<S: Scalar>(xs: &[S]) -> Option<Vec<S>> {
    let m = stats::mean(xs);
    let sd = stats::std_dev(xs, SdConvention::Sample);
    (sd > S::zero()).then(|| xs.iter().map(|&x| (x - m) / sd).collect())
}

/// Standardized regression of the residuals on the composite columns, without
/// intercept (all variables are centred). Constant regressors are reported as
/// not estimated.
pub fn ols_standardized<S: Scalar>(
    residuals: &[S],
    composite: &Matrix<S>,
    names: &[String],
) -> Result<Vec<OlsCoefficient<S>>, AnalysisError> {
    let (n, p) = (composite.rows(), composite.cols());
    check_len(residuals.len(), n)?;
    check_len(names.len(), p)?;
    check_min(n, p + 1)?;
    let y = z_scores(residuals).ok_or_else(|| AnalysisError::ZeroVariance("residuals".into()))?;
    let cols: Vec<Vec<S>> = (0..p)
        .map(|j| z_scores(&composite.column(j)).unwrap_or_else(|| vec![S::zero(); n]))
        .collect();
    let fit = pivoted_least_squares(&Matrix::from_columns(&cols), &y, S::lit(COLLINEARITY_TOL));
    if fit.rank == 0 {
        return Err(AnalysisError::AllCollinear);
    }
    Ok(names
        .iter()
        .zip(fit.coefficients)
        .map(|(name, estimate)| OlsCoefficient {
            name: name.clone(),
            estimate,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineFit<S> {
    pub fitted: Vec<S>,
    pub rmse: S,
    pub mae: S,
    /// Intercept first, then one entry per composite column.
    pub coefficients: Vec<Option<S>>,
}

/// In-sample OLS of `y` on an intercept and the composite columns.
pub fn baseline_lm<S: Scalar>(y: &[S], composite: &Matrix<S>) -> Result<BaselineFit<S>, AnalysisError> {
    let (n, p) = (composite.rows(), composite.cols());
    check_len(y.len(), n)?;
    check_min(n, p + 2)?;
    let mut cols = vec![vec![S::one(); n]];
    cols.extend((0..p).map(|j| composite.column(j)));
    let x = Matrix::from_columns(&cols);
    let fit = pivoted_least_squares(&x, y, S::lit(COLLINEARITY_TOL));
    if fit.rank == 0 {
        return Err(AnalysisError::AllCollinear);
    }
    let fitted = fit.predict(&x);
    let (rmse, mae) = error_metrics(y, &fitted);
    Ok(BaselineFit {
        fitted,
        rmse,
        mae,
        coefficients: fit.coefficients,
    })
}

/// Per-unit results aggregated by [`group_summaries`].
#[derive(Debug, Clone, Copy)]
pub struct UnitResults<'a, S> {
    pub y_ref: &'a [S],
    pub y_est: &'a [S],
    pub coverage: &'a [S],
    pub width: &'a [S],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary<S> {
    /// Centre/periphery label, `"NA"` when the dataset has none.
    pub kind: String,
    pub class: u8,
    pub n: usize,
    pub coverage: S,
    pub adaptivity: S,
    pub y_ref: S,
    pub y_est: S,
    /// `100·(y_est/y_ref − 1)`; `None` when `y_ref` is zero.
    pub delta: Option<S>,
    pub mpi_means: Vec<S>,
}

pub const MISSING_KIND: &str = "NA";

/// Group means keyed by centre/periphery label and attribute level, in
/// lexical `(kind, class)` order.
pub fn group_summaries<S: Scalar>(
    results: UnitResults<'_, S>,
    dataset: &Dataset,
    attribute: Attribute,
    composite: &Matrix<S>,
) -> Result<Vec<GroupSummary<S>>, AnalysisError> {
    let n = dataset.len();
    for len in [
        results.y_ref.len(),
        results.y_est.len(),
        results.coverage.len(),
        results.width.len(),
        composite.rows(),
    ] {
        check_len(len, n)?;
    }
    let mut buckets: BTreeMap<(String, u8), Vec<usize>> = BTreeMap::new();
    for (i, r) in dataset.records.iter().enumerate() {
        let kind = r.center_periph.map_or(MISSING_KIND, |c| c.label()).to_owned();
        buckets.entry((kind, r.profile.get(attribute))).or_default().push(i);
    }
    let avg = |xs: &[S], idx: &[usize]| -> S {
        idx.iter().map(|&i| xs[i]).sum::<S>() / S::from_count(idx.len())
    };
    Ok(buckets
        .into_iter()
        .map(|((kind, class), idx)| {
            let y_ref = avg(results.y_ref, &idx);
            let y_est = avg(results.y_est, &idx);
            let delta = (y_ref != S::zero()).then(|| S::lit(100.0) * (y_est / y_ref - S::one()));
            let mpi_means = (0..composite.cols())
                .map(|j| idx.iter().map(|&i| composite[(i, j)]).sum::<S>() / S::from_count(idx.len()))
                .collect();
            GroupSummary {
                kind,
                class,
                n: idx.len(),
                coverage: avg(results.coverage, &idx),
                adaptivity: avg(results.width, &idx),
                y_ref,
                y_est,
                delta,
                mpi_means,
            }
        })
        .collect())
}
