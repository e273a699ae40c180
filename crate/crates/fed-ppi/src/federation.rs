//! Combining client summaries: aggregation weights, the weighted merge of
//! estimates/rectifiers/variances, confidence-set assembly from a merged
//! summary, and the pooled direct-computation oracle used as ground truth
//! in tests and reports.

use serde::{Deserialize, Serialize};

use crate::estimators::{self, ClientDataset, EstimatorKind};
use crate::scalar::{c, Real};
use crate::stats_core::{
    merge_moments, minkowski_sum, normal_quantile, Interval, MomentSummary, WEIGHT_SUM_TOL,
};
use crate::{Error, Result};

/// Convex per-client aggregation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationWeights<R>(Vec<R>);

impl<R: Real> AggregationWeights<R> {
    /// Validates nonnegativity and normalization.
    pub fn new(weights: Vec<R>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Validation("empty weight vector".into()));
        }
        let tol = c::<R>(WEIGHT_SUM_TOL).max(R::epsilon() * c(32.0));
        let mut sum = R::zero();
        for &w in &weights {
            if w < R::zero() || !w.is_finite() {
                return Err(Error::Validation(format!("invalid weight {w}")));
            }
            sum = sum + w;
        }
        if (sum - R::one()).abs() > tol {
            return Err(Error::Validation(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[R] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Weights proportional to total client sample count:
/// `w_k = (n_k + N_k) / sum_j (n_j + N_j)`.
pub fn compute_weights<R: Real>(
    labeled_counts: &[u64],
    unlabeled_counts: &[u64],
) -> Result<AggregationWeights<R>> {
    if labeled_counts.len() != unlabeled_counts.len() || labeled_counts.is_empty() {
        return Err(Error::Validation(format!(
            "count vectors must be nonempty and aligned ({} vs {})",
            labeled_counts.len(),
            unlabeled_counts.len()
        )));
    }
    let totals: Vec<u64> = labeled_counts
        .iter()
        .zip(unlabeled_counts)
        .map(|(&n, &m)| n + m)
        .collect();
    let grand: u64 = totals.iter().sum();
    if grand == 0 {
        return Err(Error::Validation(
            "all clients have zero samples; cannot form weights".into(),
        ));
    }
    let grand = c::<R>(grand as f64);
    AggregationWeights::new(totals.iter().map(|&t| c::<R>(t as f64) / grand).collect())
}

/// Per-coordinate (or per-grid-point) statistics a client ships.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordStats<R> {
    pub estimate: R,
    pub rectifier: R,
    pub var_estimate: R,
    pub var_rectifier: R,
}

/// The only object a client sends to the aggregator: summary statistics,
/// never raw samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSummary<R> {
    pub client_id: String,
    pub n_labeled: u64,
    pub n_unlabeled: u64,
    pub coords: Vec<CoordStats<R>>,
}

impl<R: Real> ClientSummary<R> {
    pub fn new(
        client_id: impl Into<String>,
        n_labeled: u64,
        n_unlabeled: u64,
        coords: Vec<CoordStats<R>>,
    ) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Validation("summary must have coordinates".into()));
        }
        if n_labeled == 0 && n_unlabeled == 0 {
            return Err(Error::Validation(
                "client has neither labeled nor unlabeled samples".into(),
            ));
        }
        for (j, coord) in coords.iter().enumerate() {
            if coord.var_estimate < R::zero() || coord.var_rectifier < R::zero() {
                return Err(Error::Validation(format!(
                    "negative variance at coordinate {j}"
                )));
            }
        }
        Ok(Self {
            client_id: client_id.into(),
            n_labeled,
            n_unlabeled,
            coords,
        })
    }
}

/// Aggregated counterpart of [`ClientSummary`] with summed sample totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalSummary<R> {
    pub coords: Vec<CoordStats<R>>,
    pub n_labeled_total: u64,
    pub n_unlabeled_total: u64,
}

impl<R: Real> GlobalSummary<R> {
    /// Single-client reduction: the global summary is the client's own.
    pub fn from_single(summary: &ClientSummary<R>) -> Self {
        Self {
            coords: summary.coords.clone(),
            n_labeled_total: summary.n_labeled,
            n_unlabeled_total: summary.n_unlabeled,
        }
    }
}

/// A confidence set: a closed interval for mean/linear targets, or a
/// retained subset of a parameter grid for quantile/logistic/risk-min.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConfidenceSet<R> {
    Interval(Interval<R>),
    Grid(GridSet<R>),
}

/// Grid points (d-vectors; length-1 vectors for scalar parameters) with a
/// retention mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSet<R> {
    pub points: Vec<Vec<R>>,
    pub retained: Vec<bool>,
}

impl<R: Real> GridSet<R> {
    pub fn new(points: Vec<Vec<R>>, retained: Vec<bool>) -> Result<Self> {
        if points.len() != retained.len() {
            return Err(Error::Validation(format!(
                "grid mask length {} does not match grid length {}",
                retained.len(),
                points.len()
            )));
        }
        Ok(Self { points, retained })
    }

    pub fn from_scalar_grid(grid: &[R], retained: Vec<bool>) -> Result<Self> {
        Self::new(grid.iter().map(|&g| vec![g]).collect(), retained)
    }

    pub fn retained_points(&self) -> impl Iterator<Item = &[R]> {
        self.points
            .iter()
            .zip(&self.retained)
            .filter(|(_, &r)| r)
            .map(|(p, _)| p.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        !self.retained.iter().any(|&r| r)
    }

    /// Span of the retained points along one axis; `None` when empty.
    pub fn retained_span(&self, axis: usize) -> Option<Interval<R>> {
        let mut lo = None;
        let mut hi = None;
        for p in self.retained_points() {
            let v = p[axis];
            lo = Some(lo.map_or(v, |l: R| l.min(v)));
            hi = Some(hi.map_or(v, |h: R| h.max(v)));
        }
        Some(Interval {
            lo: lo?,
            hi: hi?,
        })
    }
}

impl<R: Real> ConfidenceSet<R> {
    /// Width for reporting: interval width, or retained span along the
    /// first axis (zero when the grid set is empty).
    pub fn width(&self) -> R {
        match self {
            ConfidenceSet::Interval(iv) => iv.width(),
            ConfidenceSet::Grid(g) => g
                .retained_span(0)
                .map_or(R::zero(), |iv| iv.width()),
        }
    }
}

/// Weighted aggregation of client summaries (estimates, rectifiers, and
/// variances with the between-client squared-deviation term), coordinate
/// by coordinate.
pub fn aggregate<R: Real>(
    summaries: &[ClientSummary<R>],
    weights: &AggregationWeights<R>,
) -> Result<GlobalSummary<R>> {
    if summaries.is_empty() {
        return Err(Error::Validation("no summaries to aggregate".into()));
    }
    if summaries.len() != weights.len() {
        return Err(Error::Validation(format!(
            "{} summaries but {} weights",
            summaries.len(),
            weights.len()
        )));
    }
    let n_coords = summaries[0].coords.len();
    for s in summaries {
        if s.coords.len() != n_coords {
            return Err(Error::Validation(format!(
                "coordinate layout mismatch: client {} has {} coords, expected {n_coords}",
                s.client_id,
                s.coords.len()
            )));
        }
    }

    let mut coords = Vec::with_capacity(n_coords);
    for j in 0..n_coords {
        let est_parts: Vec<(R, MomentSummary<R>)> = summaries
            .iter()
            .zip(weights.as_slice())
            .map(|(s, &w)| {
                let coord = &s.coords[j];
                (
                    w,
                    MomentSummary {
                        mean: coord.estimate,
                        variance: coord.var_estimate,
                        count: s.n_unlabeled,
                    },
                )
            })
            .collect();
        let rect_parts: Vec<(R, MomentSummary<R>)> = summaries
            .iter()
            .zip(weights.as_slice())
            .map(|(s, &w)| {
                let coord = &s.coords[j];
                (
                    w,
                    MomentSummary {
                        mean: coord.rectifier,
                        variance: coord.var_rectifier,
                        count: s.n_labeled,
                    },
                )
            })
            .collect();
        let est = merge_moments(&est_parts)?;
        let rect = merge_moments(&rect_parts)?;
        coords.push(CoordStats {
            estimate: est.mean,
            rectifier: rect.mean,
            var_estimate: est.variance,
            var_rectifier: rect.variance,
        });
    }

    Ok(GlobalSummary {
        coords,
        n_labeled_total: summaries.iter().map(|s| s.n_labeled).sum(),
        n_unlabeled_total: summaries.iter().map(|s| s.n_unlabeled).sum(),
    })
}

/// Direct computation of the same summary statistics on the concatenated
/// datasets. Test/simulation context only: this is the one code path that
/// touches pooled raw data.
pub fn pooled_oracle<R: Real>(
    datasets: &[ClientDataset<R>],
    kind: &EstimatorKind<R>,
) -> Result<GlobalSummary<R>> {
    let pooled = estimators::concat_datasets(datasets)?;
    let summary = estimators::client_summary("pooled", &pooled, kind)?;
    Ok(GlobalSummary::from_single(&summary))
}

/// Per-coordinate half-widths `w_j = z_{1-alpha/(2 dims)} *
/// sqrt(var_estimate_j / N + var_rectifier_j / n)`.
pub fn interval_from_summary<R: Real>(
    global: &GlobalSummary<R>,
    alpha: R,
    dims: usize,
) -> Result<Vec<R>> {
    if !(alpha > R::zero() && alpha < R::one()) {
        return Err(Error::Validation(format!(
            "alpha must be in (0, 1), got {alpha}"
        )));
    }
    if global.n_unlabeled_total == 0 || global.n_labeled_total == 0 {
        return Err(Error::Validation(format!(
            "half-widths need positive sample totals (N = {}, n = {})",
            global.n_unlabeled_total, global.n_labeled_total
        )));
    }
    if dims == 0 {
        return Err(Error::Validation("dims must be positive".into()));
    }
    let z = normal_quantile(R::one() - alpha / c::<R>(2.0 * dims as f64))?;
    let big_n = c::<R>(global.n_unlabeled_total as f64);
    let small_n = c::<R>(global.n_labeled_total as f64);
    Ok(global
        .coords
        .iter()
        .map(|coord| z * (coord.var_estimate / big_n + coord.var_rectifier / small_n).sqrt())
        .collect())
}

/// Retains each grid point iff `0` lies in the Minkowski sum of the
/// supplied fit and rectifier intervals at that point.
pub fn minkowski_retention_set<R: Real>(
    fit: &[Interval<R>],
    rectifier: &[Interval<R>],
    grid: &[R],
) -> Result<GridSet<R>> {
    if fit.len() != grid.len() || rectifier.len() != grid.len() {
        return Err(Error::Validation(format!(
            "interval vectors ({}, {}) must match grid length {}",
            fit.len(),
            rectifier.len(),
            grid.len()
        )));
    }
    let retained = fit
        .iter()
        .zip(rectifier)
        .map(|(&t, &r)| minkowski_sum(t, r).contains(R::zero()))
        .collect();
    GridSet::from_scalar_grid(grid, retained)
}
