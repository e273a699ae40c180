//! Federated prediction-powered mean estimation.
//!
//! Each client ships the mean of its unlabeled predictions, the mean
//! prediction bias on its labeled data, and the population variances of
//! both samples. The federated interval is centered at the aggregated
//! prediction mean minus the aggregated rectifier.

use crate::federation::{
    aggregate, interval_from_summary, AggregationWeights, ClientSummary, CoordStats,
};
use crate::scalar::Real;
use crate::stats_core::{Interval, MomentSummary};
use crate::{Error, Result};

use super::ClientDataset;

pub fn mean_client_summary<R: Real>(
    client_id: &str,
    ds: &ClientDataset<R>,
) -> Result<ClientSummary<R>> {
    if ds.n_labeled() == 0 || ds.n_unlabeled() == 0 {
        return Err(Error::Validation(format!(
            "mean estimation needs labeled and unlabeled samples (n = {}, N = {})",
            ds.n_labeled(),
            ds.n_unlabeled()
        )));
    }
    let prediction = MomentSummary::from_samples(&ds.unlabeled_pred);
    let bias: Vec<R> = ds
        .labeled_pred
        .iter()
        .zip(&ds.labeled_y)
        .map(|(&f, &y)| f - y)
        .collect();
    let rectifier = MomentSummary::from_samples(&bias);
    ClientSummary::new(
        client_id,
        ds.n_labeled() as u64,
        ds.n_unlabeled() as u64,
        vec![CoordStats {
            estimate: prediction.mean,
            rectifier: rectifier.mean,
            var_estimate: prediction.variance,
            var_rectifier: rectifier.variance,
        }],
    )
}

/// Aggregates client summaries and returns the prediction-powered mean
/// interval `(theta_f - delta) +- w_alpha`.
pub fn mean_federated<R: Real>(
    summaries: &[ClientSummary<R>],
    weights: &AggregationWeights<R>,
    alpha: R,
) -> Result<Interval<R>> {
    let global = aggregate(summaries, weights)?;
    let coord = &global.coords[0];
    let center = coord.estimate - coord.rectifier;
    let half_width = interval_from_summary(&global, alpha, 1)?[0];
    Interval::centered(center, half_width)
}
