//! Federated prediction-powered logistic regression via grid search on
//! the imputed gradient, with a per-coordinate Bonferroni correction.
//!
//! The rectifier does not depend on the grid point and is computed once
//! per client, before the grid loop.

use crate::federation::{
    aggregate, interval_from_summary, AggregationWeights, ClientSummary, CoordStats, GridSet,
};
use crate::scalar::Real;
use crate::stats_core::MomentSummary;
use crate::{Error, Result};

use super::{ClientDataset, ParamGrid};

/// Grid search is exponential in the coefficient dimension; cap it.
pub const MAX_LOGISTIC_DIM: usize = 3;

fn sigmoid<R: Real>(t: R) -> R {
    R::one() / (R::one() + (-t).exp())
}

fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Per (grid point, coordinate): imputed gradient statistics over the
/// unlabeled side and the (grid-independent) gradient rectifier over the
/// labeled side. Coordinate layout: `point_index * d + j`.
pub fn logistic_client_summary<R: Real>(
    client_id: &str,
    ds: &ClientDataset<R>,
    grid: &ParamGrid<R>,
) -> Result<ClientSummary<R>> {
    let d = ds.dim();
    if d > MAX_LOGISTIC_DIM {
        return Err(Error::UnsupportedDimension {
            dim: d,
            max: MAX_LOGISTIC_DIM,
        });
    }
    if grid.is_empty() {
        return Err(Error::Validation("logistic grid is empty".into()));
    }
    if grid.dims() != d {
        return Err(Error::Validation(format!(
            "grid dimension {} does not match feature dimension {d}",
            grid.dims()
        )));
    }
    if ds.n_labeled() == 0 || ds.n_unlabeled() == 0 {
        return Err(Error::Validation(format!(
            "logistic estimation needs labeled and unlabeled samples (n = {}, N = {})",
            ds.n_labeled(),
            ds.n_unlabeled()
        )));
    }
    for &y in &ds.labeled_y {
        if y != R::zero() && y != R::one() {
            return Err(Error::Validation(format!(
                "logistic outcomes must be 0 or 1, found {y}"
            )));
        }
    }
    for &f in ds.labeled_pred.iter().chain(&ds.unlabeled_pred) {
        if f < R::zero() || f > R::one() {
            return Err(Error::Validation(format!(
                "logistic predictions must lie in [0, 1], found {f}"
            )));
        }
    }

    // Rectifier per coordinate, hoisted out of the grid loop.
    let rectifiers: Vec<MomentSummary<R>> = (0..d)
        .map(|j| {
            let samples: Vec<R> = ds
                .labeled_x
                .iter()
                .zip(ds.labeled_pred.iter().zip(&ds.labeled_y))
                .map(|(x, (&f, &y))| x[j] * (f - y))
                .collect();
            MomentSummary::from_samples(&samples)
        })
        .collect();

    let mut coords = Vec::with_capacity(grid.len() * d);
    let mut gradient_samples = vec![R::zero(); ds.n_unlabeled()];
    for theta in grid.points() {
        let mu: Vec<R> = ds
            .unlabeled_x
            .iter()
            .map(|x| sigmoid(dot(x, theta)))
            .collect();
        for j in 0..d {
            for (slot, (x, (&m, &f))) in gradient_samples.iter_mut().zip(
                ds.unlabeled_x
                    .iter()
                    .zip(mu.iter().zip(&ds.unlabeled_pred)),
            ) {
                *slot = x[j] * (m - f);
            }
            let grad = MomentSummary::from_samples(&gradient_samples);
            coords.push(CoordStats {
                estimate: grad.mean,
                rectifier: rectifiers[j].mean,
                var_estimate: grad.variance,
                var_rectifier: rectifiers[j].variance,
            });
        }
    }
    ClientSummary::new(
        client_id,
        ds.n_labeled() as u64,
        ds.n_unlabeled() as u64,
        coords,
    )
}

/// Retains a grid point iff `|g_j(theta) + delta_j| <= w_j(theta)` holds
/// for every coordinate `j`, with the `z_{1-alpha/(2d)}` Bonferroni
/// quantile.
pub fn logistic_federated<R: Real>(
    summaries: &[ClientSummary<R>],
    weights: &AggregationWeights<R>,
    grid: &ParamGrid<R>,
    alpha: R,
) -> Result<GridSet<R>> {
    let d = grid.dims();
    let global = aggregate(summaries, weights)?;
    if global.coords.len() != grid.len() * d {
        return Err(Error::Validation(format!(
            "summaries carry {} coords, expected {} grid points x {d}",
            global.coords.len(),
            grid.len()
        )));
    }
    let widths = interval_from_summary(&global, alpha, d)?;
    let retained = (0..grid.len())
        .map(|i| {
            (0..d).all(|j| {
                let idx = i * d + j;
                let coord = &global.coords[idx];
                (coord.estimate + coord.rectifier).abs() <= widths[idx]
            })
        })
        .collect();
    GridSet::new(grid.points().to_vec(), retained)
}

/// Logistic mean response `mu_theta(x) = sigmoid(x . theta)`.
pub fn logistic_mu<R: Real>(x: &[R], theta: &[R]) -> R {
    sigmoid(dot(x, theta))
}
