//! Federated prediction-powered quantile estimation via grid search on
//! the imputed CDF.
//!
//! Ties use the closed inequality `1{v <= theta}`.

use crate::federation::{
    aggregate, interval_from_summary, AggregationWeights, ClientSummary, CoordStats, GridSet,
};
use crate::scalar::Real;
use crate::stats_core::MomentSummary;
use crate::{Error, Result};

use super::ClientDataset;

fn indicator<R: Real>(v: R, theta: R) -> R {
    if v <= theta {
        R::one()
    } else {
        R::zero()
    }
}

/// Per grid point: imputed CDF value over unlabeled predictions, and the
/// indicator rectifier over labeled data, with population variances.
pub fn quantile_client_summary<R: Real>(
    client_id: &str,
    ds: &ClientDataset<R>,
    grid: &[R],
) -> Result<ClientSummary<R>> {
    if grid.is_empty() {
        return Err(Error::Validation("quantile grid is empty".into()));
    }
    if ds.n_labeled() == 0 || ds.n_unlabeled() == 0 {
        return Err(Error::Validation(format!(
            "quantile estimation needs labeled and unlabeled samples (n = {}, N = {})",
            ds.n_labeled(),
            ds.n_unlabeled()
        )));
    }
    let coords = grid
        .iter()
        .map(|&theta| {
            let cdf_samples: Vec<R> = ds
                .unlabeled_pred
                .iter()
                .map(|&f| indicator(f, theta))
                .collect();
            let rect_samples: Vec<R> = ds
                .labeled_y
                .iter()
                .zip(&ds.labeled_pred)
                .map(|(&y, &f)| indicator(y, theta) - indicator(f, theta))
                .collect();
            let cdf = MomentSummary::from_samples(&cdf_samples);
            let rect = MomentSummary::from_samples(&rect_samples);
            CoordStats {
                estimate: cdf.mean,
                rectifier: rect.mean,
                var_estimate: cdf.variance,
                var_rectifier: rect.variance,
            }
        })
        .collect();
    ClientSummary::new(
        client_id,
        ds.n_labeled() as u64,
        ds.n_unlabeled() as u64,
        coords,
    )
}

/// Retains grid points with `|F(theta) + delta(theta) - q| <= w_alpha(theta)`.
pub fn quantile_federated<R: Real>(
    summaries: &[ClientSummary<R>],
    weights: &AggregationWeights<R>,
    grid: &[R],
    q: R,
    alpha: R,
) -> Result<GridSet<R>> {
    if !(q > R::zero() && q < R::one()) {
        return Err(Error::Validation(format!(
            "quantile level must be in (0, 1), got {q}"
        )));
    }
    let global = aggregate(summaries, weights)?;
    if global.coords.len() != grid.len() {
        return Err(Error::Validation(format!(
            "summaries carry {} grid points but grid has {}",
            global.coords.len(),
            grid.len()
        )));
    }
    let widths = interval_from_summary(&global, alpha, 1)?;
    let retained = global
        .coords
        .iter()
        .zip(&widths)
        .map(|(coord, &w)| (coord.estimate + coord.rectifier - q).abs() <= w)
        .collect();
    GridSet::from_scalar_grid(grid, retained)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::compute_weights;

    fn ds(labeled_y: Vec<f64>, labeled_pred: Vec<f64>, unlabeled_pred: Vec<f64>) -> ClientDataset<f64> {
        let lx = labeled_y.iter().map(|_| vec![0.0]).collect();
        let ux = unlabeled_pred.iter().map(|_| vec![0.0]).collect();
        ClientDataset::new(lx, labeled_y, labeled_pred, ux, unlabeled_pred).unwrap()
    }

    #[test]
    fn cdf_saturates_above_max() {
        let d = ds(vec![1.0, 2.0], vec![1.5, 2.5], vec![0.5, 1.5, 3.0]);
        let s = quantile_client_summary("a", &d, &[10.0]).unwrap();
        assert_eq!(s.coords[0].estimate, 1.0);
        assert_eq!(s.coords[0].rectifier, 0.0);
    }

    #[test]
    fn cdf_zero_below_min() {
        let d = ds(vec![1.0, 2.0], vec![1.5, 2.5], vec![0.5, 1.5, 3.0]);
        let s = quantile_client_summary("a", &d, &[-10.0]).unwrap();
        assert_eq!(s.coords[0].estimate, 0.0);
        assert_eq!(s.coords[0].rectifier, 0.0);
    }

    #[test]
    fn bernoulli_moments_at_half() {
        let d = ds(vec![1.0], vec![1.0], vec![1.0, 2.0, 3.0, 4.0]);
        let s = quantile_client_summary("a", &d, &[2.5]).unwrap();
        assert!((s.coords[0].estimate - 0.5).abs() < 1e-15);
        assert!((s.coords[0].var_estimate - 0.25).abs() < 1e-15);
    }

    #[test]
    fn closed_inequality_on_ties() {
        let d = ds(vec![1.0], vec![1.0], vec![2.0, 3.0]);
        // theta exactly at a prediction value counts it.
        let s = quantile_client_summary("a", &d, &[2.0]).unwrap();
        assert!((s.coords[0].estimate - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_failing_point_gives_empty_set() {
        // All predictions below theta=0? Use a grid point where |F - q| is large
        // and variances are zero.
        let d = ds(vec![5.0, 6.0], vec![5.0, 6.0], vec![5.0, 6.0, 7.0]);
        let s = quantile_client_summary("a", &d, &[100.0]).unwrap();
        let w = compute_weights(&[2], &[3]).unwrap();
        let set = quantile_federated(&[s], &w, &[100.0], 0.5, 0.1).unwrap();
        assert!(set.is_empty());
        assert_eq!(set.retained.len(), 1);
    }

    #[test]
    fn symmetric_data_symmetric_set() {
        // Symmetric values around 0, perfect predictor.
        let vals: Vec<f64> = (1..=50)
            .flat_map(|i| [i as f64 / 10.0, -(i as f64) / 10.0])
            .collect();
        let d = ds(vals.clone(), vals.clone(), vals.clone());
        let grid: Vec<f64> = (-60..=60).map(|i| i as f64 / 10.0).collect();
        let s = quantile_client_summary("a", &d, &grid).unwrap();
        let w = compute_weights(&[100], &[100]).unwrap();
        let set = quantile_federated(&[s], &w, &grid, 0.5, 0.1).unwrap();
        assert!(!set.is_empty());
        let span = set.retained_span(0).unwrap();
        assert!(
            (span.lo + span.hi).abs() <= 0.1 + 1e-12,
            "span = [{}, {}]",
            span.lo,
            span.hi
        );
    }

    #[test]
    fn perfect_predictor_brackets_pooled_quantile() {
        // 200 synthetic points; brute-force pooled median as the oracle.
        let vals: Vec<f64> = (0..200).map(|i| ((i * 37) % 200) as f64 / 7.0).collect();
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pooled_median = sorted[99]; // min theta with F(theta) >= 0.5
        let d = ds(vals.clone(), vals.clone(), vals.clone());
        let grid: Vec<f64> = (0..300).map(|i| i as f64 / 10.0).collect();
        let s = quantile_client_summary("a", &d, &grid).unwrap();
        let w = compute_weights(&[200], &[200]).unwrap();
        let set = quantile_federated(&[s], &w, &grid, 0.5, 0.1).unwrap();
        let span = set.retained_span(0).unwrap();
        assert!(
            span.lo <= pooled_median && pooled_median <= span.hi + 0.1,
            "median {pooled_median} outside [{}, {}]",
            span.lo,
            span.hi
        );
    }

    #[test]
    fn aggregated_cdf_is_monotone() {
        let d1 = ds(vec![1.0, 4.0], vec![1.2, 3.9], vec![0.5, 2.0, 3.5]);
        let d2 = ds(vec![2.0], vec![2.1], vec![1.0, 4.0]);
        let grid: Vec<f64> = (-10..=50).map(|i| i as f64 / 10.0).collect();
        let s1 = quantile_client_summary("a", &d1, &grid).unwrap();
        let s2 = quantile_client_summary("b", &d2, &grid).unwrap();
        let w = compute_weights(&[2, 1], &[3, 2]).unwrap();
        let global = aggregate(&[s1, s2], &w).unwrap();
        let cdf: Vec<f64> = global.coords.iter().map(|c| c.estimate).collect();
        assert!(cdf.windows(2).all(|w| w[0] <= w[1] + 1e-15));
    }
}
