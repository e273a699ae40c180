//! Per-client summary computation and federated confidence-set assembly
//! for the four canonical targets (mean, quantile, logistic and linear
//! regression coefficients) plus a general risk-minimization set.

mod dataset;
mod grid;
mod linear;
mod logistic;
mod mean;
mod quantile;
mod risk_min;

pub use dataset::{concat_datasets, ClientDataset};
pub use grid::ParamGrid;
pub use linear::{
    linear_client_summary, linear_federated, LinearClientSummary, MatrixDeviation,
};
pub use logistic::{logistic_client_summary, logistic_federated, logistic_mu, MAX_LOGISTIC_DIM};
pub use mean::{mean_client_summary, mean_federated};
pub use quantile::{quantile_client_summary, quantile_federated};
pub use risk_min::{default_delta, risk_min_confidence, RiskMinResult};

use serde::{Deserialize, Serialize};

use crate::federation::{AggregationWeights, ClientSummary, ConfidenceSet};
use crate::scalar::Real;
use crate::{Error, Result};

/// Default number of grid points for the 1-D quantile search.
pub const DEFAULT_QUANTILE_GRID_POINTS: usize = 512;
/// Default points per axis for the logistic coefficient lattice.
pub const DEFAULT_LOGISTIC_AXIS_POINTS: usize = 41;

/// Which coordinate layout a summary is computed under. Also drives the
/// pooled oracle in [`crate::federation::pooled_oracle`].
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorKind<R> {
    /// Single coordinate: mean of predictions / mean prediction bias.
    Mean,
    /// One coordinate per grid point: imputed CDF and indicator rectifier.
    Quantile { grid: Vec<R> },
    /// One coordinate per (grid point, axis): imputed logistic gradient.
    Logistic { grid: ParamGrid<R> },
    /// One coordinate per axis: least-squares gradient statistics at a
    /// fixed parameter value.
    LinearGradient { theta: Vec<R> },
}

/// Computes the per-client summary for the given coordinate layout.
pub fn client_summary<R: Real>(
    client_id: &str,
    ds: &ClientDataset<R>,
    kind: &EstimatorKind<R>,
) -> Result<ClientSummary<R>> {
    match kind {
        EstimatorKind::Mean => mean_client_summary(client_id, ds),
        EstimatorKind::Quantile { grid } => quantile_client_summary(client_id, ds, grid),
        EstimatorKind::Logistic { grid } => logistic_client_summary(client_id, ds, grid),
        EstimatorKind::LinearGradient { theta } => {
            linear::linear_gradient_summary(client_id, ds, theta)
        }
    }
}

/// Estimator options for one federated session or experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TaskOptions<R> {
    Mean,
    Quantile {
        q: R,
        grid: Vec<R>,
    },
    Logistic {
        grid: ParamGrid<R>,
    },
    Linear {
        j_star: usize,
        deviation: MatrixDeviation,
    },
}

impl<R: Real> TaskOptions<R> {
    pub fn needs_grid_negotiation(&self) -> bool {
        matches!(self, TaskOptions::Quantile { .. })
    }
}

/// A client's local contribution for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LocalSummary<R> {
    Coords(ClientSummary<R>),
    Linear(LinearClientSummary<R>),
}

impl<R: Real> LocalSummary<R> {
    pub fn client_id(&self) -> &str {
        match self {
            LocalSummary::Coords(s) => &s.client_id,
            LocalSummary::Linear(s) => &s.client_id,
        }
    }

    pub fn counts(&self) -> (u64, u64) {
        match self {
            LocalSummary::Coords(s) => (s.n_labeled, s.n_unlabeled),
            LocalSummary::Linear(s) => (s.n_labeled, s.n_unlabeled),
        }
    }
}

/// Computes the local summary a client would ship for the given task.
pub fn local_summary<R: Real>(
    client_id: &str,
    ds: &ClientDataset<R>,
    opts: &TaskOptions<R>,
) -> Result<LocalSummary<R>> {
    Ok(match opts {
        TaskOptions::Mean => LocalSummary::Coords(mean_client_summary(client_id, ds)?),
        TaskOptions::Quantile { grid, .. } => {
            LocalSummary::Coords(quantile_client_summary(client_id, ds, grid)?)
        }
        TaskOptions::Logistic { grid } => {
            LocalSummary::Coords(logistic_client_summary(client_id, ds, grid)?)
        }
        TaskOptions::Linear { .. } => LocalSummary::Linear(linear_client_summary(client_id, ds)?),
    })
}

/// Assembles the federated confidence set from collected local summaries.
///
/// This is the single assembly path shared by the in-process harness and
/// the networked coordinator, so both produce identical numerics.
pub fn federated_confidence<R: Real>(
    opts: &TaskOptions<R>,
    summaries: &[LocalSummary<R>],
    weights: &AggregationWeights<R>,
    alpha: R,
) -> Result<ConfidenceSet<R>> {
    match opts {
        TaskOptions::Mean => {
            let coords = coords_bundle(summaries)?;
            Ok(ConfidenceSet::Interval(mean_federated(
                &coords, weights, alpha,
            )?))
        }
        TaskOptions::Quantile { q, grid } => {
            let coords = coords_bundle(summaries)?;
            Ok(ConfidenceSet::Grid(quantile_federated(
                &coords, weights, grid, *q, alpha,
            )?))
        }
        TaskOptions::Logistic { grid } => {
            let coords = coords_bundle(summaries)?;
            Ok(ConfidenceSet::Grid(logistic_federated(
                &coords, weights, grid, alpha,
            )?))
        }
        TaskOptions::Linear { j_star, deviation } => {
            let linear = linear_bundle(summaries)?;
            Ok(ConfidenceSet::Interval(linear_federated(
                &linear, weights, *j_star, alpha, *deviation,
            )?))
        }
    }
}

fn coords_bundle<R: Real>(summaries: &[LocalSummary<R>]) -> Result<Vec<ClientSummary<R>>> {
    summaries
        .iter()
        .map(|s| match s {
            LocalSummary::Coords(c) => Ok(c.clone()),
            LocalSummary::Linear(l) => Err(Error::Validation(format!(
                "client {} sent a linear summary for a coordinate-layout task",
                l.client_id
            ))),
        })
        .collect()
}

fn linear_bundle<R: Real>(summaries: &[LocalSummary<R>]) -> Result<Vec<LinearClientSummary<R>>> {
    summaries
        .iter()
        .map(|s| match s {
            LocalSummary::Linear(l) => Ok(l.clone()),
            LocalSummary::Coords(c) => Err(Error::Validation(format!(
                "client {} sent a coordinate summary for the linear task",
                c.client_id
            ))),
        })
        .collect()
}
