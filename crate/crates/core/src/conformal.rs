//! Conformalized quantile intervals over MCMC replicates.
//!
//! Batches of retained configurations are averaged per unit; each unit's
//! column of batch means yields raw lower/upper quantiles, and a split of the
//! units into calibration and test sets supplies the additive offset `q̂`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::stats::SixNumberSummary;

#[derive(Debug, Error, PartialEq)]
pub enum ConformalError {
    #[error("retained pool has {pool} configurations, batches need {needed}")]
    InsufficientPool { pool: usize, needed: usize },
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("invalid batch spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchSpec {
    /// Size of the pooled stationary sample the batches draw from.
    pub n_total: usize,
    pub n_batches: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub calib_frac: f64,
    pub seed: u64,
    /// Number of independent calibration/test splits for per-unit coverage.
    pub repetitions: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            n_total: 50_000,
            n_batches: 10_000,
            batch_size: 200,
            alpha: 0.05,
            calib_frac: 0.5,
            seed: 0,
            repetitions: 50,
        }
    }
}

impl BatchSpec {
    pub fn validate(&self) -> Result<(), ConformalError> {
        let bad = |m: &str| Err(ConformalError::InvalidSpec(m.to_owned()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.calib_frac > 0.0 && self.calib_frac < 1.0) {
            return bad("calib_frac must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.n_batches < 2 {
            return bad("need batch_size >= 1 and n_batches >= 2");
        }
        if self.batch_size > self.n_total {
            return bad("batch_size exceeds n_total");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        Ok(())
    }
}

/// B × N matrix: row `b` is the per-unit mean of `batch_size` configurations
/// drawn uniformly with replacement from `pool`. Row `b` uses its own RNG
/// stream, so the result is independent of thread scheduling.
pub fn batch_means<S: Scalar>(pool: &[&[S]], spec: &BatchSpec) -> Result<Matrix<S>, ConformalError> {
    if pool.len() < spec.batch_size || pool.is_empty() {
        return Err(ConformalError::InsufficientPool {
            pool: pool.len(),
            needed: spec.batch_size.max(1),
        });
    }
    let n_units = pool[0].len();
    let denom = S::from_count(spec.batch_size);
    let rows: Vec<Vec<S>> = (0..spec.n_batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(b as u64);
            let mut acc = vec![S::zero(); n_units];
            for _ in 0..spec.batch_size {
                let cfg = pool[rng.random_range(0..pool.len())];
                for (a, &v) in acc.iter_mut().zip(cfg) {
                    *a += v;
                }
            }
            acc.into_iter().map(|a| a / denom).collect()
        })
        .collect();
    Ok(Matrix::from_row_major(
        spec.n_batches,
        n_units,
        rows.into_iter().flatten().collect(),
    ))
}

/// 1-based order-statistic index `⌈p·n⌉`, clamped to `[1, n]`.
fn order_index(p: f64, n: usize) -> usize {
    let raw = p * n as f64;
    // Absorb representation error such as 0.95 * 100 = 95.00000000000001.
    let k = (raw - 1e-9 * raw.abs().max(1.0)).ceil();
    (k.max(1.0) as usize).min(n)
}

/// `α/2` and `1 − α/2` empirical quantiles by order statistics, no
/// interpolation.
pub fn empirical_quantiles<S: Scalar>(column: &[S], alpha: f64) -> (S, S) {
    let mut sorted = column.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = sorted.len();
    let lo = sorted[order_index(alpha / 2.0, n) - 1];
    let hi = sorted[order_index(1.0 - alpha / 2.0, n) - 1];
    (lo, hi)
}

/// `max(q_lo − y, y − q_hi, 0)`.
pub fn nonconformity<S: Scalar>(y: S, q_lo: S, q_hi: S) -> S {
    (q_lo - y).max(y - q_hi).max(S::zero())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration<S> {
    pub q_hat: S,
    /// 1-based rank of `q_hat` among the scores.
    pub rank: usize,
    /// `⌈(n+1)(1−α)⌉` exceeded `n`; `q_hat` fell back to the largest score.
    pub degenerate: bool,
}

/// `q̂` = the `⌈(n+1)(1−α)⌉`-th smallest score.
pub fn calibrate<S: Scalar>(scores: &[S], alpha: f64) -> Result<Calibration<S>, ConformalError> {
    let n = scores.len();
    if n == 0 {
        return Err(ConformalError::EmptyCalibration);
    }
    let raw = (n as f64 + 1.0) * (1.0 - alpha);
    let k = (raw - 1e-9 * raw.abs().max(1.0)).ceil().max(1.0) as usize;
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let degenerate = k > n;
    let rank = k.min(n);
    Ok(Calibration {
        q_hat: sorted[rank - 1],
        rank,
        degenerate,
    })
}

/// Raw per-unit quantiles of the batch-mean columns.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitQuantiles<S> {
    pub q_lo: Vec<S>,
    pub q_hi: Vec<S>,
}

pub fn unit_quantiles<S: Scalar>(batches: &Matrix<S>, alpha: f64) -> UnitQuantiles<S> {
    let (q_lo, q_hi) = (0..batches.cols())
        .into_par_iter()
        .map(|j| empirical_quantiles(&batches.column(j), alpha))
        .unzip();
    UnitQuantiles { q_lo, q_hi }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConformalResult<S> {
    pub q_lo: Vec<S>,
    pub q_hi: Vec<S>,
    pub lo: Vec<S>,
    pub hi: Vec<S>,
    pub width: Vec<S>,
    /// `Some` for test units, `None` for calibration units.
    pub covered: Vec<Option<bool>>,
    pub q_hat: S,
    pub degenerate: bool,
}

impl<S: Scalar> ConformalResult<S> {
    pub fn is_calibration(&self, i: usize) -> bool {
        self.covered[i].is_none()
    }

    /// Fraction of test units whose calibrated interval contains `y_obs`.
    pub fn test_coverage(&self) -> f64 {
        let (hit, n) = self
            .covered
            .iter()
            .flatten()
            .fold((0usize, 0usize), |(h, n), &c| (h + usize::from(c), n + 1));
        if n == 0 {
            f64::NAN
        } else {
            hit as f64 / n as f64
        }
    }

    /// Whether unit `i`'s calibrated interval contains `y`, regardless of
    /// its split membership.
    pub fn contains(&self, i: usize, y: S) -> bool {
        self.lo[i] <= y && y <= self.hi[i]
    }
}

/// Calibration units of split number `rep`.
fn split_units(n: usize, spec: &BatchSpec, rep: usize) -> Result<Vec<bool>, ConformalError> {
    let n_cal = ((spec.calib_frac * n as f64).round() as usize).min(n);
    if n_cal == 0 {
        return Err(ConformalError::EmptyCalibration);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ SPLIT_SALT);
    rng.set_stream(rep as u64);
    order.shuffle(&mut rng);
    let mut is_cal = vec![false; n];
    for &i in &order[..n_cal] {
        is_cal[i] = true;
    }
    Ok(is_cal)
}

const SPLIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn split_with_quantiles<S: Scalar>(
    q: &UnitQuantiles<S>,
    y_obs: &[S],
    spec: &BatchSpec,
    rep: usize,
) -> Result<ConformalResult<S>, ConformalError> {
    let n = y_obs.len();
    assert_eq!(q.q_lo.len(), n, "quantiles and observations differ in length");
    let is_cal = split_units(n, spec, rep)?;
    let scores: Vec<S> = (0..n)
        .filter(|&i| is_cal[i])
        .map(|i| nonconformity(y_obs[i], q.q_lo[i], q.q_hi[i]))
        .collect();
    let cal = calibrate(&scores, spec.alpha)?;
    let lo: Vec<S> = q.q_lo.iter().map(|&v| v - cal.q_hat).collect();
    let hi: Vec<S> = q.q_hi.iter().map(|&v| v + cal.q_hat).collect();
    let width = lo.iter().zip(&hi).map(|(&l, &h)| h - l).collect();
    let covered = (0..n)
        .map(|i| (!is_cal[i]).then(|| lo[i] <= y_obs[i] && y_obs[i] <= hi[i]))
        .collect();
    Ok(ConformalResult {
        q_lo: q.q_lo.clone(),
        q_hi: q.q_hi.clone(),
        lo,
        hi,
        width,
        covered,
        q_hat: cal.q_hat,
        degenerate: cal.degenerate,
    })
}

/// Split-conformal intervals for every unit from its batch-mean column.
pub fn conformal_intervals<S: Scalar>(
    batches: &Matrix<S>,
    y_obs: &[S],
    spec: &BatchSpec,
) -> Result<ConformalResult<S>, ConformalError> {
    spec.validate()?;
    let q = unit_quantiles(batches, spec.alpha);
    split_with_quantiles(&q, y_obs, spec, 0)
}

/// Per-unit coverage and width across repeated random splits.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitCoverage<S> {
    /// Fraction of the splits holding unit `i` out as a test unit in which
    /// its interval covered `y_obs` (all splits if it was never a test unit).
    pub coverage: Vec<S>,
    /// Mean calibrated width over splits.
    pub width: Vec<S>,
    /// Marginal test coverage of each split.
    pub split_coverage: Vec<f64>,
}

pub fn repeated_coverage<S: Scalar>(
    batches: &Matrix<S>,
    y_obs: &[S],
    spec: &BatchSpec,
) -> Result<UnitCoverage<S>, ConformalError> {
    spec.validate()?;
    let q = unit_quantiles(batches, spec.alpha);
    let n = y_obs.len();
    let results: Vec<ConformalResult<S>> = (0..spec.repetitions)
        .into_par_iter()
        .map(|r| split_with_quantiles(&q, y_obs, spec, r))
        .collect::<Result<_, _>>()?;

    let reps = S::from_count(results.len());
    let mut coverage = Vec::with_capacity(n);
    let mut width = Vec::with_capacity(n);
    for i in 0..n {
        let (hit, tested) = results
            .iter()
            .filter_map(|r| r.covered[i])
            .fold((0usize, 0usize), |(h, t), c| (h + usize::from(c), t + 1));
        let frac = if tested > 0 {
            S::from_count(hit) / S::from_count(tested)
        } else {
            let all = results.iter().filter(|r| r.contains(i, y_obs[i])).count();
            S::from_count(all) / reps
        };
        coverage.push(frac);
        width.push(results.iter().map(|r| r.width[i]).sum::<S>() / reps);
    }
    Ok(UnitCoverage {
        coverage,
        width,
        split_coverage: results.iter().map(ConformalResult::test_coverage).collect(),
    })
}

/// Six-number summaries of per-unit coverage and interval width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageAdaptivity<S> {
    pub coverage: SixNumberSummary<S>,
    pub adaptivity: SixNumberSummary<S>,
}

pub fn coverage_adaptivity<S: Scalar>(units: &UnitCoverage<S>) -> CoverageAdaptivity<S> {
    CoverageAdaptivity {
        coverage: SixNumberSummary::of(&units.coverage),
        adaptivity: SixNumberSummary::of(&units.width),
    }
}
