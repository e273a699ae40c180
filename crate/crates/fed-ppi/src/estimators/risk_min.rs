//! General risk-minimizer confidence sets for convex losses on a grid.
//!
//! Each client splits its unlabeled data in half. The first halves pick
//! the imputed risk minimizer; the second halves provide an independent
//! imputed risk curve with a CLT fluctuation bound. The labeled data
//! bound the risk rectifier (true loss minus imputed loss). A grid point
//! survives when its imputed risk is within the combined slack of the
//! minimizer's.

use crate::federation::GridSet;
use crate::scalar::{c, Real};
use crate::stats_core::{merge_moments, normal_quantile, Interval, MomentSummary};
use crate::{Error, Result};

use super::{ClientDataset, ParamGrid};

/// Default rectifier budget: half the total miscoverage.
pub fn default_delta<R: Real>(alpha: R) -> R {
    alpha / c(2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskMinResult<R> {
    /// Imputed risk minimizer over the grid (first-half unlabeled data).
    pub theta_tilde_f: Vec<R>,
    pub retained: GridSet<R>,
    /// Per grid point: CLT interval for the risk rectifier.
    pub delta_bounds: Vec<Interval<R>>,
    /// Per grid point: CLT interval for the second-half imputed risk.
    pub t_bounds: Vec<Interval<R>>,
    /// Unlabeled points discarded per client to make the halves even.
    pub dropped_unlabeled: Vec<usize>,
}

/// Weighted pooled moments of per-client sample vectors; weights are
/// proportional to per-client counts so the result equals the pooled
/// statistics exactly.
fn pooled<R: Real>(parts: &[MomentSummary<R>]) -> Result<MomentSummary<R>> {
    let total: u64 = parts.iter().map(|p| p.count).sum();
    if total == 0 {
        return Err(Error::Validation("no samples to pool".into()));
    }
    let total_r = c::<R>(total as f64);
    let weighted: Vec<(R, MomentSummary<R>)> = parts
        .iter()
        .map(|p| (c::<R>(p.count as f64) / total_r, p.clone()))
        .collect();
    merge_moments(&weighted)
}

pub fn risk_min_confidence<R: Real>(
    loss: impl Fn(&[R], &[R], R) -> R,
    datasets: &[ClientDataset<R>],
    grid: &ParamGrid<R>,
    alpha: R,
    delta: R,
) -> Result<RiskMinResult<R>> {
    if grid.is_empty() {
        return Err(Error::Validation("risk-min grid is empty".into()));
    }
    if datasets.is_empty() {
        return Err(Error::Validation("no client datasets".into()));
    }
    if !(alpha > R::zero() && alpha < R::one()) {
        return Err(Error::Validation(format!(
            "alpha must be in (0, 1), got {alpha}"
        )));
    }
    if !(delta > R::zero() && delta < alpha) {
        return Err(Error::Validation(format!(
            "rectifier budget delta must satisfy 0 < delta < alpha, got {delta}"
        )));
    }
    for ds in datasets {
        if ds.n_labeled() == 0 || ds.n_unlabeled() < 2 {
            return Err(Error::Validation(format!(
                "risk-min needs labeled samples and at least two unlabeled \
                 samples per client (n = {}, N = {})",
                ds.n_labeled(),
                ds.n_unlabeled()
            )));
        }
    }

    let dropped_unlabeled: Vec<usize> = datasets.iter().map(|d| d.n_unlabeled() % 2).collect();
    let halves: Vec<usize> = datasets.iter().map(|d| d.n_unlabeled() / 2).collect();

    let m = grid.len();
    let mut risk_first = Vec::with_capacity(m);
    let mut risk_second = Vec::with_capacity(m);
    let mut rectifier = Vec::with_capacity(m);
    for theta in grid.points() {
        let mut first_parts = Vec::with_capacity(datasets.len());
        let mut second_parts = Vec::with_capacity(datasets.len());
        let mut rect_parts = Vec::with_capacity(datasets.len());
        for (ds, &h) in datasets.iter().zip(&halves) {
            let imputed: Vec<R> = ds
                .unlabeled_x
                .iter()
                .zip(&ds.unlabeled_pred)
                .take(2 * h)
                .map(|(x, &f)| loss(x, theta, f))
                .collect();
            first_parts.push(MomentSummary::from_samples(&imputed[..h]));
            second_parts.push(MomentSummary::from_samples(&imputed[h..]));
            let rect: Vec<R> = ds
                .labeled_x
                .iter()
                .zip(ds.labeled_y.iter().zip(&ds.labeled_pred))
                .map(|(x, (&y, &f))| loss(x, theta, y) - loss(x, theta, f))
                .collect();
            rect_parts.push(MomentSummary::from_samples(&rect));
        }
        risk_first.push(pooled(&first_parts)?);
        risk_second.push(pooled(&second_parts)?);
        rectifier.push(pooled(&rect_parts)?);
    }

    let argmin = risk_first
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.mean.partial_cmp(&b.mean).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let theta_tilde_f = grid.point(argmin).to_vec();

    let z_delta = normal_quantile(R::one() - delta / c(2.0))?;
    let z_t = normal_quantile(R::one() - (alpha - delta) / c(2.0))?;
    let n_total = c::<R>(rectifier[0].count as f64);
    let h_total = c::<R>(risk_second[0].count as f64);

    let delta_bounds: Vec<Interval<R>> = rectifier
        .iter()
        .map(|r| Interval::centered(r.mean, z_delta * (r.variance / n_total).sqrt()))
        .collect::<Result<_>>()?;
    let t_bounds: Vec<Interval<R>> = risk_second
        .iter()
        .map(|s| Interval::centered(s.mean, z_t * (s.variance / h_total).sqrt()))
        .collect::<Result<_>>()?;

    let se_at_min = z_t * (risk_second[argmin].variance / h_total).sqrt();
    let rect_upper_at_min = delta_bounds[argmin].hi;
    let risk_at_min = risk_second[argmin].mean;
    let retained: Vec<bool> = (0..m)
        .map(|i| {
            let slack_rect = rect_upper_at_min - delta_bounds[i].lo;
            let slack_fluct = z_t * (risk_second[i].variance / h_total).sqrt() + se_at_min;
            risk_second[i].mean <= risk_at_min + slack_rect + slack_fluct
        })
        .collect();

    Ok(RiskMinResult {
        theta_tilde_f,
        retained: GridSet::new(grid.points().to_vec(), retained)?,
        delta_bounds,
        t_bounds,
        dropped_unlabeled,
    })
}
