//! Scalar statistical primitives shared by every estimator: the standard
//! normal quantile function, weighted moment merging, and interval
//! arithmetic.
//!
//! Conventions: variances use the population convention (divide by `n`,
//! not `n - 1`), matching the per-client variance steps of the federated
//! estimators. Classical baselines computed elsewhere in this crate use
//! the same convention so widths stay comparable.

use serde::{Deserialize, Serialize};

use crate::scalar::{c, Real};
use crate::{Error, Result};

/// Absolute tolerance on weight normalization.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval<R> {
    pub lo: R,
    pub hi: R,
}

impl<R: Real> Interval<R> {
    pub fn new(lo: R, hi: R) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Validation(format!(
                "interval endpoints must be finite, got [{lo}, {hi}]"
            )));
        }
        if lo > hi {
            return Err(Error::Validation(format!(
                "interval lower bound {lo} exceeds upper bound {hi}"
            )));
        }
        Ok(Self { lo, hi })
    }

    /// Degenerate interval `[x, x]`.
    pub fn point(x: R) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn centered(center: R, half_width: R) -> Result<Self> {
        if half_width < R::zero() {
            return Err(Error::Validation(format!(
                "negative half-width {half_width}"
            )));
        }
        Self::new(center - half_width, center + half_width)
    }

    pub fn width(&self) -> R {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> R {
        (self.lo + self.hi) / c(2.0)
    }

    /// Endpoint-inclusive membership.
    pub fn contains(&self, x: R) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Minkowski sum of two intervals: `[a.lo + b.lo, a.hi + b.hi]`.
pub fn minkowski_sum<R: Real>(a: Interval<R>, b: Interval<R>) -> Interval<R> {
    Interval {
        lo: a.lo + b.lo,
        hi: a.hi + b.hi,
    }
}

/// Mean, population variance and sample count of one batch of scalars.
///
/// An empty summary (`count == 0`) carries mean and variance `0` by
/// convention and may only enter a merge with weight `0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary<R> {
    pub mean: R,
    pub variance: R,
    pub count: u64,
}

impl<R: Real> MomentSummary<R> {
    pub fn new(mean: R, variance: R, count: u64) -> Result<Self> {
        if variance < R::zero() {
            return Err(Error::Validation(format!("negative variance {variance}")));
        }
        if count == 0 && (mean != R::zero() || variance != R::zero()) {
            return Err(Error::Validation(
                "empty summary must have zero mean and variance".into(),
            ));
        }
        Ok(Self {
            mean,
            variance,
            count,
        })
    }

    pub fn empty() -> Self {
        Self {
            mean: R::zero(),
            variance: R::zero(),
            count: 0,
        }
    }

    /// Population moments of a sample; empty input yields the empty summary.
    pub fn from_samples(samples: &[R]) -> Self {
        if samples.is_empty() {
            return Self::empty();
        }
        let n = c::<R>(samples.len() as f64);
        let mean = samples.iter().copied().sum::<R>() / n;
        let variance = samples
            .iter()
            .map(|&x| (x - mean) * (x - mean))
            .sum::<R>()
            / n;
        Self {
            mean,
            variance,
            count: samples.len() as u64,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Merges weighted moment summaries by the law of total variance:
/// the combined variance is the weighted within-part variance plus the
/// weighted squared deviation of part means from the combined mean.
///
/// Weights must be nonnegative and sum to one within [`WEIGHT_SUM_TOL`].
/// A part with `count == 0` must carry weight exactly zero.
pub fn merge_moments<R: Real>(parts: &[(R, MomentSummary<R>)]) -> Result<MomentSummary<R>> {
    if parts.is_empty() {
        return Err(Error::Validation("merge_moments: empty part list".into()));
    }
    let tol = c::<R>(WEIGHT_SUM_TOL).max(R::epsilon() * c(32.0));
    let mut sum_w = R::zero();
    for (w, part) in parts {
        if *w < R::zero() || !w.is_finite() {
            return Err(Error::Validation(format!("invalid weight {w}")));
        }
        if part.is_empty() && *w != R::zero() {
            return Err(Error::Validation(format!(
                "empty summary merged with nonzero weight {w}"
            )));
        }
        sum_w = sum_w + *w;
    }
    if (sum_w - R::one()).abs() > tol {
        return Err(Error::Validation(format!(
            "weights sum to {sum_w}, expected 1"
        )));
    }

    let mean = parts.iter().map(|&(w, p)| w * p.mean).sum::<R>();
    let variance = parts
        .iter()
        .map(|&(w, p)| {
            let dev = p.mean - mean;
            w * (p.variance + dev * dev)
        })
        .sum::<R>();
    let count = parts.iter().map(|(_, p)| p.count).sum();
    Ok(MomentSummary {
        mean,
        variance,
        count,
    })
}

/// Standard normal quantile `z` with `Phi(z) = p`, absolute error <= 1e-9.
///
/// Acklam's rational approximation provides the initial guess, refined by
/// one Halley step against a near-machine-precision `Phi`.
pub fn normal_quantile<R: Real>(p: R) -> Result<R> {
    if !(p > R::zero() && p < R::one()) {
        return Err(Error::Domain(format!(
            "normal_quantile requires p in (0, 1), got {p}"
        )));
    }
    let mut x = acklam(p);
    // One Halley refinement: e = Phi(x) - p, u = e * sqrt(2*pi) * exp(x^2/2).
    let e = normal_cdf(x) - p;
    let u = e * c::<R>((2.0 * std::f64::consts::PI).sqrt()) * (x * x / c(2.0)).exp();
    x = x - u / (R::one() + x * u / c(2.0));
    Ok(x)
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf<R: Real>(x: R) -> R {
    let z = -x / c::<R>(std::f64::consts::SQRT_2);
    erfc(z) / c(2.0)
}

fn acklam<R: Real>(p: R) -> R {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = c::<R>(0.02425);
    let p_high = R::one() - p_low;

    if p < p_low {
        let q = (c::<R>(-2.0) * p.ln()).sqrt();
        poly(&C, q) / (poly(&D, q) * q + R::one())
    } else if p <= p_high {
        let q = p - c(0.5);
        let r = q * q;
        poly(&A, r) * q / (poly(&B, r) * r + R::one())
    } else {
        let q = (c::<R>(-2.0) * (R::one() - p).ln()).sqrt();
        -poly(&C, q) / (poly(&D, q) * q + R::one())
    }
}

fn poly<R: Real>(coeffs: &[f64], x: R) -> R {
    coeffs
        .iter()
        .fold(R::zero(), |acc, &k| acc * x + c(k))
}

/// Complementary error function, accurate to near machine precision.
///
/// Uses the positive-term power series for small arguments and a Lentz
/// continued fraction for the tail.
fn erfc<R: Real>(x: R) -> R {
    if x < R::zero() {
        return c::<R>(2.0) - erfc(-x);
    }
    if x > c(27.0) {
        // exp(-x^2) underflows well before this for f64; short-circuit.
        return R::zero();
    }
    if x < c(2.5) {
        R::one() - erf_series(x)
    } else {
        erfc_cf(x)
    }
}

/// erf(x) = (2x/sqrt(pi)) e^{-x^2} sum_n (2x^2)^n / (1*3*...*(2n+1)).
fn erf_series<R: Real>(x: R) -> R {
    let two_x2 = c::<R>(2.0) * x * x;
    let mut term = R::one();
    let mut sum = R::one();
    let mut n = 0u32;
    loop {
        n += 1;
        term = term * two_x2 / c(2.0 * n as f64 + 1.0);
        sum = sum + term;
        if term < sum * R::epsilon() || n > 200 {
            break;
        }
    }
    let front = c::<R>(2.0 / std::f64::consts::PI.sqrt()) * x * (-x * x).exp();
    front * sum
}

/// erfc(x) = e^{-x^2}/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
fn erfc_cf<R: Real>(x: R) -> R {
    let tiny = c::<R>(1e-300).max(R::min_positive_value());
    let mut f = x;
    let mut cc = x;
    let mut d = R::zero();
    for n in 1..=300u32 {
        let a = c::<R>(n as f64 / 2.0);
        d = x + a * d;
        if d == R::zero() {
            d = tiny;
        }
        cc = x + a / cc;
        if cc == R::zero() {
            cc = tiny;
        }
        d = d.recip();
        let delta = cc * d;
        f = f * delta;
        if (delta - R::one()).abs() < R::epsilon() {
            break;
        }
    }
    (-x * x).exp() / c::<R>(std::f64::consts::PI.sqrt()) / f
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Independent Phi: Simpson quadrature of the normal density from 0 to x.
    fn phi_quadrature(x: f64) -> f64 {
        let n = 4000;
        let h = x / n as f64;
        let pdf = |t: f64| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = pdf(0.0) + pdf(x);
        for i in 1..n {
            let t = i as f64 * h;
            s += pdf(t) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        0.5 + s * h / 3.0
    }

    fn bisect_quantile(p: f64) -> f64 {
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if phi_quadrature(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn quantile_at_975() {
        let z: f64 = normal_quantile(0.975).unwrap();
        assert!((z - 1.959964).abs() < 1e-5, "z = {z}");
    }

    #[test]
    fn quantile_at_half_is_zero() {
        let z: f64 = normal_quantile(0.5).unwrap();
        assert!(z.abs() < 1e-12);
    }

    #[test]
    fn quantile_matches_bisection_oracle() {
        // Phi(1) = 0.8413447... per the quadrature oracle.
        let p = 0.8413447;
        let expected = bisect_quantile(p);
        assert!((expected - 1.0).abs() < 1e-5);
        let z: f64 = normal_quantile(p).unwrap();
        assert!((z - expected).abs() < 1e-5, "z = {z}, oracle = {expected}");
    }

    #[test]
    fn quantile_inverts_cdf_to_1e9() {
        for &p in &[
            1e-8, 1e-4, 0.01, 0.02425, 0.05, 0.1, 0.3, 0.5, 0.7, 0.9, 0.95, 0.975, 0.99,
            0.9875, 0.999, 0.9999, 1.0 - 1e-8,
        ] {
            let z: f64 = normal_quantile(p).unwrap();
            let back = phi_quadrature(z);
            assert!(
                (back - p).abs() < 1e-9,
                "p = {p}, z = {z}, Phi(z) = {back}"
            );
        }
    }

    #[test]
    fn quantile_rejects_out_of_domain() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(normal_quantile(p), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn quantile_f32_tracks_f64() {
        for p in [0.1f32, 0.5, 0.9, 0.975] {
            let z32 = normal_quantile(p).unwrap();
            let z64 = normal_quantile(p as f64).unwrap();
            assert!((z32 as f64 - z64).abs() < 1e-4);
        }
    }

    #[test]
    fn merge_single_part_identity() {
        let part = MomentSummary::new(2.0, 3.0, 10).unwrap();
        let merged = merge_moments(&[(1.0, part)]).unwrap();
        assert_eq!(merged, part);
    }

    #[test]
    fn merge_two_point_masses() {
        let merged = merge_moments(&[
            (0.5, MomentSummary::<f64>::new(1.0, 0.0, 1).unwrap()),
            (0.5, MomentSummary::new(3.0, 0.0, 1).unwrap()),
        ])
        .unwrap();
        assert!((merged.mean - 2.0).abs() < 1e-15);
        assert!((merged.variance - 1.0).abs() < 1e-15);
    }

    #[test]
    fn merge_reproduces_pooled_moments() {
        // 20-point sample split into 4 parts of 5.
        let sample: Vec<f64> = (0..20).map(|i| (i as f64).sin() * 3.0 + 0.7).collect();
        let pooled = MomentSummary::from_samples(&sample);
        let parts: Vec<(f64, MomentSummary<f64>)> = sample
            .chunks(5)
            .map(|chunk| (0.25, MomentSummary::from_samples(chunk)))
            .collect();
        let merged = merge_moments(&parts).unwrap();
        assert!((merged.mean - pooled.mean).abs() / pooled.mean.abs() < 1e-10);
        assert!((merged.variance - pooled.variance).abs() / pooled.variance < 1e-10);
        assert_eq!(merged.count, 20);
    }

    #[test]
    fn merge_rejects_bad_weights() {
        let p = MomentSummary::new(1.0, 1.0, 5).unwrap();
        assert!(merge_moments(&[(0.7, p), (0.7, p)]).is_err());
        assert!(merge_moments(&[(-0.5, p), (1.5, p)]).is_err());
        assert!(merge_moments::<f64>(&[]).is_err());
    }

    #[test]
    fn merge_rejects_weighted_empty_part() {
        let full = MomentSummary::new(1.0, 1.0, 5).unwrap();
        let empty = MomentSummary::<f64>::empty();
        assert!(merge_moments(&[(0.5, full), (0.5, empty)]).is_err());
        // Weight zero on the empty part is fine.
        let merged = merge_moments(&[(1.0, full), (0.0, empty)]).unwrap();
        assert_eq!(merged.mean, full.mean);
    }

    #[test]
    fn minkowski_examples() {
        let z = Interval::point(0.0);
        let a = Interval::new(-1.0, 2.0).unwrap();
        assert_eq!(minkowski_sum(z, a), a);
        let s = minkowski_sum(Interval::new(1.0, 2.0).unwrap(), Interval::new(3.0, 5.0).unwrap());
        assert_eq!(s, Interval::new(4.0, 7.0).unwrap());
        let sym = minkowski_sum(
            Interval::centered(0.0, 0.5).unwrap(),
            Interval::centered(0.0, 1.5).unwrap(),
        );
        assert_eq!(sym, Interval::centered(0.0, 2.0).unwrap());
    }

    #[test]
    fn interval_validation() {
        assert!(Interval::new(1.0, 0.0).is_err());
        assert!(Interval::new(f64::NAN, 0.0).is_err());
        assert!(Interval::centered(0.0, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn quantile_symmetry(p in 1e-6f64..0.999999) {
            let z = normal_quantile(p).unwrap();
            let z_neg = normal_quantile(1.0 - p).unwrap();
            prop_assert!((z + z_neg).abs() < 1e-9);
        }

        #[test]
        fn minkowski_width_adds(
            (a_lo, a_w) in (-1e6f64..1e6, 0.0f64..1e6),
            (b_lo, b_w) in (-1e6f64..1e6, 0.0f64..1e6),
        ) {
            let a = Interval::new(a_lo, a_lo + a_w).unwrap();
            let b = Interval::new(b_lo, b_lo + b_w).unwrap();
            let s = minkowski_sum(a, b);
            prop_assert!((s.width() - (a.width() + b.width())).abs() < 1e-6);
        }

        #[test]
        fn merge_permutation_and_flatten_invariance(
            data in proptest::collection::vec(-100.0f64..100.0, 12..48),
        ) {
            // Split into three parts by count, weights proportional to counts.
            let n = data.len();
            let cut1 = n / 3;
            let cut2 = 2 * n / 3;
            let chunks = [&data[..cut1], &data[cut1..cut2], &data[cut2..]];
            let parts: Vec<(f64, MomentSummary<f64>)> = chunks
                .iter()
                .map(|ch| (ch.len() as f64 / n as f64, MomentSummary::from_samples(ch)))
                .collect();
            let merged = merge_moments(&parts).unwrap();

            // Permutation invariance.
            let perm = vec![parts[2], parts[0], parts[1]];
            let merged_perm = merge_moments(&perm).unwrap();
            prop_assert!((merged.mean - merged_perm.mean).abs() < 1e-9);
            prop_assert!((merged.variance - merged_perm.variance).abs() < 1e-9);

            // Nested merge with multiplicative weight composition.
            let w01 = parts[0].0 + parts[1].0;
            let inner = merge_moments(&[
                (parts[0].0 / w01, parts[0].1),
                (parts[1].0 / w01, parts[1].1),
            ]).unwrap();
            let nested = merge_moments(&[(w01, inner), parts[2]]).unwrap();
            prop_assert!((merged.mean - nested.mean).abs() < 1e-9);
            prop_assert!((merged.variance - nested.variance).abs() < 1e-9);

            // Pooled equivalence and between-group nonnegativity.
            let pooled = MomentSummary::from_samples(&data);
            prop_assert!((merged.mean - pooled.mean).abs() < 1e-9);
            prop_assert!((merged.variance - pooled.variance).abs()
                <= 1e-10 * pooled.variance.max(1.0));
            let within: f64 = parts.iter().map(|&(w, p)| w * p.variance).sum();
            prop_assert!(merged.variance >= within - 1e-12);
        }
    }
}
