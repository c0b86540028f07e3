//! Descriptive statistics and the Student-t distribution.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Denominator convention for standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdConvention {
    /// Divide by `n - 1`.
    #[default]
    Sample,
    /// Divide by `n`.
    Population,
}

pub fn mean<S: Scalar>(xs: &[S]) -> S {
    if xs.is_empty() {
        return S::nan();
    }
    xs.iter().copied().sum::<S>() / S::from_count(xs.len())
}

pub fn variance<S: Scalar>(xs: &[S], conv: SdConvention) -> S {
    let n = xs.len();
    let denom = match conv {
        SdConvention::Sample if n >= 2 => n - 1,
        SdConvention::Population if n >= 1 => n,
        _ => return S::nan(),
    };
    let m = mean(xs);
    let ss: S = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    ss / S::from_count(denom)
}

pub fn std_dev<S: Scalar>(xs: &[S], conv: SdConvention) -> S {
    variance(xs, conv).sqrt()
}

/// Pearson correlation; `None` if either side has zero variance.
pub fn pearson<S: Scalar>(xs: &[S], ys: &[S]) -> Option<S> {
    assert_eq!(xs.len(), ys.len(), "pearson: length mismatch");
    if xs.len() < 2 {
        return None;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxy = S::zero();
    let mut sxx = S::zero();
    let mut syy = S::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= S::zero() || syy <= S::zero() {
        return None;
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Some(r.max(-S::one()).min(S::one()))
}

/// 1-based ranks with ties replaced by their average rank.
pub fn average_ranks<S: Scalar>(xs: &[S]) -> Vec<S> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![S::zero(); xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // positions i..=j share the rank (i+1 + j+1) / 2
        let r = S::from_count(i + j + 2) / S::lit(2.0);
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman<S: Scalar>(xs: &[S], ys: &[S]) -> Option<S> {
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// Linearly interpolated quantile of sorted data (Hyndman–Fan type 7).
pub fn quantile_sorted<S: Scalar>(sorted: &[S], p: S) -> S {
    match sorted.len() {
        0 => S::nan(),
        1 => sorted[0],
        n => {
            let h = S::from_count(n - 1) * p;
            let lo = h.floor();
            let lo_idx = lo.to_usize().unwrap_or(0).min(n - 1);
            let hi_idx = (lo_idx + 1).min(n - 1);
            sorted[lo_idx] + (h - lo) * (sorted[hi_idx] - sorted[lo_idx])
        }
    }
}

/// Min, quartiles, mean and max, in the order of a `summary()` row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SixNumberSummary<S> {
    pub min: S,
    pub q1: S,
    pub median: S,
    pub mean: S,
    pub q3: S,
    pub max: S,
}

impl<S: Scalar> SixNumberSummary<S> {
    pub fn of(xs: &[S]) -> Self {
        let mut sorted = xs.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let nan = S::nan();
        Self {
            min: sorted.first().copied().unwrap_or(nan),
            q1: quantile_sorted(&sorted, S::lit(0.25)),
            median: quantile_sorted(&sorted, S::lit(0.5)),
            mean: mean(xs),
            q3: quantile_sorted(&sorted, S::lit(0.75)),
            max: sorted.last().copied().unwrap_or(nan),
        }
    }

    pub fn as_array(&self) -> [S; 6] {
        [self.min, self.q1, self.median, self.mean, self.q3, self.max]
    }

    pub const LABELS: [&'static str; 6] = ["Min.", "1st Qu.", "Median", "Mean", "3rd Qu.", "Max."];
}

/// Median of unsorted data.
pub fn median<S: Scalar>(xs: &[S]) -> S {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    quantile_sorted(&sorted, S::lit(0.5))
}

/// Natural log of the gamma function (Lanczos, g = 7, n = 9).
pub fn ln_gamma<S: Scalar>(x: S) -> S {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let half = S::lit(0.5);
    if x < half {
        // Reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let pi = S::lit(std::f64::consts::PI);
        return (pi / (pi * x).sin()).abs().ln() - ln_gamma(S::one() - x);
    }
    let x = x - S::one();
    let mut acc = S::lit(COEF[0]);
    for (k, &c) in COEF.iter().enumerate().skip(1) {
        acc += S::lit(c) / (x + S::from_count(k));
    }
    let t = x + S::lit(7.5);
    S::lit(0.5 * (2.0 * std::f64::consts::PI).ln()) + (x + half) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf<S: Scalar>(a: S, b: S, x: S) -> S {
    let tiny = S::lit(1e-300).max(S::min_positive_value());
    let eps = S::epsilon();
    let one = S::one();
    let two = S::lit(2.0);
    let qab = a + b;
    let qap = a + one;
    let qam = a - one;
    let mut c = one;
    let mut d = one - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = one / d;
    let mut h = d;
    for m in 1..=500 {
        let m = S::from_count(m);
        let m2 = two * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = one / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = one / d;
        let del = d * c;
        h *= del;
        if (del - one).abs() <= eps {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn regularized_beta<S: Scalar>(a: S, b: S, x: S) -> S {
    let one = S::one();
    if x <= S::zero() {
        return S::zero();
    }
    if x >= one {
        return one;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (one - x).ln();
    let front = ln_front.exp();
    if x < (a + one) / (a + b + S::lit(2.0)) {
        front * beta_cf(a, b, x) / a
    } else {
        one - front * beta_cf(b, a, one - x) / b
    }
}

/// CDF of Student's t distribution with `df` degrees of freedom.
pub fn student_t_cdf<S: Scalar>(t: S, df: S) -> S {
    let half = S::lit(0.5);
    if t.is_infinite() {
        return if t > S::zero() { S::one() } else { S::zero() };
    }
    let x = df / (df + t * t);
    let tail = half * regularized_beta(df * half, half, x);
    if t > S::zero() {
        S::one() - tail
    } else {
        tail
    }
}

/// Two-sided p-value `P(|T| >= |t|)`.
pub fn student_t_two_sided_p<S: Scalar>(t: S, df: S) -> S {
    let half = S::lit(0.5);
    let x = df / (df + t * t);
    regularized_beta(df * half, half, x)
}

/// Quantile of Student's t by bracketed bisection on the CDF.
pub fn student_t_quantile<S: Scalar>(p: S, df: S) -> S {
    let half = S::lit(0.5);
    if p == half {
        return S::zero();
    }
    if p < half {
        return -student_t_quantile(S::one() - p, df);
    }
    let mut lo = S::zero();
    let mut hi = S::one();
    while student_t_cdf(hi, df) < p {
        hi *= S::lit(2.0);
        if hi > S::lit(1e12) {
            return S::infinity();
        }
    }
    for _ in 0..200 {
        let mid = half * (lo + hi);
        if student_t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= S::epsilon() * hi.abs().max(S::one()) {
            break;
        }
    }
    half * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    #[test]
    fn sd_conventions() {
        let xs = [2.0, 4.0, 6.0, 8.0];
        assert_abs_diff_eq!(std_dev(&xs, SdConvention::Population), 5f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(
            std_dev(&xs, SdConvention::Sample),
            (20.0f64 / 3.0).sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn ranks_average_ties() {
        let r = average_ranks(&[10.0, 20.0, 20.0, 5.0]);
        assert_eq!(r, vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn type7_quantiles() {
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_abs_diff_eq!(quantile_sorted(&xs, 0.25), 3.25, epsilon = 1e-12);
        assert_abs_diff_eq!(quantile_sorted(&xs, 0.5), 5.5, epsilon = 1e-12);
        assert_abs_diff_eq!(quantile_sorted(&xs, 1.0), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn ln_gamma_known_values() {
        assert_abs_diff_eq!(ln_gamma(1.0f64), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(5.0f64), 24f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(ln_gamma(0.5f64), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-12);
    }

    #[test]
    fn t_cdf_matches_statrs() {
        for &df in &[2.0, 3.0, 5.0, 10.0, 30.0, 1382.0] {
            let reference = StudentsT::new(0.0, 1.0, df).unwrap();
            for &t in &[-6.0, -2.5, -1.0, -0.1, 0.0, 0.3, 1.96, 4.0, 27.5] {
                let ours = student_t_cdf(t, df);
                assert_abs_diff_eq!(ours, reference.cdf(t), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn t_quantile_tabulated() {
        // Standard two-sided 95% critical values.
        assert_abs_diff_eq!(student_t_quantile(0.975, 2.0), 4.302_652_729_911_275, epsilon = 1e-9);
        assert_abs_diff_eq!(student_t_quantile(0.975, 10.0), 2.228_138_851_986_273, epsilon = 1e-9);
        assert_abs_diff_eq!(student_t_quantile(0.025, 30.0), -2.042_272_456_301_238, epsilon = 1e-9);
    }

    #[test]
    fn two_sided_p_consistent_with_cdf() {
        let p = student_t_two_sided_p(2.1f64, 12.0);
        let via_cdf = 2.0 * (1.0 - student_t_cdf(2.1f64, 12.0));
        assert_abs_diff_eq!(p, via_cdf, epsilon = 1e-13);
    }
}
