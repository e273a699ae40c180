//! Federated prediction-powered inference for linear regression
//! coefficients with sandwich variances.
//!
//! Each client fits least squares locally on its unlabeled predictions
//! and on its labeled prediction bias, and ships the coefficient vectors
//! together with the design second-moment and score second-moment
//! matrices. The aggregator averages coefficients, folds the
//! between-client coefficient spread into the meat matrix, and forms the
//! interval for one target coordinate from the sandwich variances.

use serde::{Deserialize, Serialize};

use crate::federation::{AggregationWeights, ClientSummary, CoordStats};
use crate::linalg::{ols_fit, Matrix};
use crate::scalar::{c, Real};
use crate::stats_core::{normal_quantile, Interval, MomentSummary};
use crate::{Error, Result};

use super::ClientDataset;

/// How the between-client coefficient spread enters the aggregated meat
/// matrix: full outer product, or its diagonal only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MatrixDeviation {
    #[default]
    Diagonal,
    OuterProduct,
}

/// A client's contribution for the linear-coefficient task. Coefficients
/// and moment matrices only; no raw samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClientSummary<R> {
    pub client_id: String,
    pub n_labeled: u64,
    pub n_unlabeled: u64,
    /// Local least-squares fit of predictions on unlabeled features.
    pub theta_f: Vec<R>,
    /// Local least-squares fit of `pred - y` on labeled features.
    pub delta: Vec<R>,
    /// Average `x x^T` over unlabeled features.
    pub sigma_unlabeled: Matrix<R>,
    /// Average squared-residual-weighted `x x^T` over unlabeled features.
    pub m_unlabeled: Matrix<R>,
    /// Average `x x^T` over labeled features.
    pub sigma_labeled: Matrix<R>,
    /// Average squared-residual-weighted `x x^T` over labeled features.
    pub m_labeled: Matrix<R>,
}

impl<R: Real> LinearClientSummary<R> {
    pub fn dim(&self) -> usize {
        self.theta_f.len()
    }
}

fn second_moments<R: Real>(
    x: &[Vec<R>],
    response: &[R],
    theta: &[R],
) -> (Matrix<R>, Matrix<R>) {
    let d = theta.len();
    let count = c::<R>(x.len() as f64);
    let mut sigma = Matrix::zeros(d);
    let mut meat = Matrix::zeros(d);
    for (row, &resp) in x.iter().zip(response) {
        let fitted: R = row.iter().zip(theta).map(|(&xi, &ti)| xi * ti).sum();
        let resid = resp - fitted;
        sigma.add_outer(row, R::one());
        meat.add_outer(row, resid * resid);
    }
    (
        sigma.scale(R::one() / count),
        meat.scale(R::one() / count),
    )
}

pub fn linear_client_summary<R: Real>(
    client_id: &str,
    ds: &ClientDataset<R>,
) -> Result<LinearClientSummary<R>> {
    let d = ds.dim();
    if d == 0 {
        return Err(Error::Validation("linear task needs features".into()));
    }
    if ds.n_labeled() <= d || ds.n_unlabeled() <= d {
        return Err(Error::Validation(format!(
            "linear fits need more samples than the {d} coefficients (n = {}, N = {})",
            ds.n_labeled(),
            ds.n_unlabeled()
        )));
    }
    let theta_f = ols_fit(&ds.unlabeled_x, &ds.unlabeled_pred, "unlabeled design")?;
    let bias: Vec<R> = ds
        .labeled_pred
        .iter()
        .zip(&ds.labeled_y)
        .map(|(&f, &y)| f - y)
        .collect();
    let delta = ols_fit(&ds.labeled_x, &bias, "labeled design")?;
    let (sigma_unlabeled, m_unlabeled) =
        second_moments(&ds.unlabeled_x, &ds.unlabeled_pred, &theta_f);
    let (sigma_labeled, m_labeled) = second_moments(&ds.labeled_x, &bias, &delta);
    Ok(LinearClientSummary {
        client_id: client_id.into(),
        n_labeled: ds.n_labeled() as u64,
        n_unlabeled: ds.n_unlabeled() as u64,
        theta_f,
        delta,
        sigma_unlabeled,
        m_unlabeled,
        sigma_labeled,
        m_labeled,
    })
}

fn spread_term<R: Real>(
    sigma: &Matrix<R>,
    dev: &[R],
    mode: MatrixDeviation,
) -> Matrix<R> {
    let d = dev.len();
    let mut outer = Matrix::zeros(d);
    outer.add_outer(dev, R::one());
    if mode == MatrixDeviation::Diagonal {
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    outer.set(i, j, R::zero());
                }
            }
        }
    }
    sigma.matmul(&outer).matmul(sigma)
}

/// Sandwich variance `sigma^{-1} meat sigma^{-1}`, diagonal clamped at
/// zero before use.
fn sandwich_diag<R: Real>(sigma: &Matrix<R>, meat: &Matrix<R>, block: &str) -> Result<Vec<R>> {
    let inv = sigma.inverse(block)?;
    let v = inv.matmul(meat).matmul(&inv);
    Ok((0..v.dim).map(|j| v.get(j, j).max(R::zero())).collect())
}

/// Federated interval for coefficient `j_star`:
/// center `theta_f[j*] - delta[j*]`, half-width
/// `z_{1-alpha/2} sqrt(V_unlabeled_jj / N + V_labeled_jj / n)`.
pub fn linear_federated<R: Real>(
    summaries: &[LinearClientSummary<R>],
    weights: &AggregationWeights<R>,
    j_star: usize,
    alpha: R,
    deviation: MatrixDeviation,
) -> Result<Interval<R>> {
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
    if !(alpha > R::zero() && alpha < R::one()) {
        return Err(Error::Validation(format!(
            "alpha must be in (0, 1), got {alpha}"
        )));
    }
    let d = summaries[0].dim();
    for s in summaries {
        if s.dim() != d || s.delta.len() != d {
            return Err(Error::Validation(format!(
                "coefficient layout mismatch: client {} has dim {}, expected {d}",
                s.client_id,
                s.dim()
            )));
        }
    }
    if j_star >= d {
        return Err(Error::Validation(format!(
            "target coordinate {j_star} out of range for {d} coefficients"
        )));
    }

    let w = weights.as_slice();
    let mut theta = vec![R::zero(); d];
    let mut delta = vec![R::zero(); d];
    for (s, &wk) in summaries.iter().zip(w) {
        for j in 0..d {
            theta[j] = theta[j] + wk * s.theta_f[j];
            delta[j] = delta[j] + wk * s.delta[j];
        }
    }

    let mut sigma_u = Matrix::zeros(d);
    let mut meat_u = Matrix::zeros(d);
    let mut sigma_l = Matrix::zeros(d);
    let mut meat_l = Matrix::zeros(d);
    for (s, &wk) in summaries.iter().zip(w) {
        sigma_u = sigma_u.add(&s.sigma_unlabeled.scale(wk));
        sigma_l = sigma_l.add(&s.sigma_labeled.scale(wk));
        let dev_u: Vec<R> = s
            .theta_f
            .iter()
            .zip(&theta)
            .map(|(&a, &b)| a - b)
            .collect();
        let dev_l: Vec<R> = s.delta.iter().zip(&delta).map(|(&a, &b)| a - b).collect();
        meat_u = meat_u.add(
            &s.m_unlabeled
                .add(&spread_term(&s.sigma_unlabeled, &dev_u, deviation))
                .scale(wk),
        );
        meat_l = meat_l.add(
            &s.m_labeled
                .add(&spread_term(&s.sigma_labeled, &dev_l, deviation))
                .scale(wk),
        );
    }

    let v_u = sandwich_diag(&sigma_u, &meat_u, "unlabeled design")?;
    let v_l = sandwich_diag(&sigma_l, &meat_l, "labeled design")?;
    let big_n: u64 = summaries.iter().map(|s| s.n_unlabeled).sum();
    let small_n: u64 = summaries.iter().map(|s| s.n_labeled).sum();
    let z = normal_quantile(R::one() - alpha / c(2.0))?;
    let half_width =
        z * (v_u[j_star] / c::<R>(big_n as f64) + v_l[j_star] / c::<R>(small_n as f64)).sqrt();
    Interval::centered(theta[j_star] - delta[j_star], half_width)
}

/// Least-squares gradient statistics at a fixed `theta`: per coordinate
/// `j`, unlabeled samples `x_j (x . theta - f)` and labeled rectifier
/// samples `x_j (f - y)`. These are plain per-sample means, so federated
/// aggregation of them is exactly the pooled computation.
pub(super) fn linear_gradient_summary<R: Real>(
    client_id: &str,
    ds: &ClientDataset<R>,
    theta: &[R],
) -> Result<ClientSummary<R>> {
    let d = ds.dim();
    if d == 0 || theta.len() != d {
        return Err(Error::Validation(format!(
            "gradient evaluation point has {} coordinates, features have {d}",
            theta.len()
        )));
    }
    if ds.n_labeled() == 0 || ds.n_unlabeled() == 0 {
        return Err(Error::Validation(format!(
            "linear gradient needs labeled and unlabeled samples (n = {}, N = {})",
            ds.n_labeled(),
            ds.n_unlabeled()
        )));
    }
    let coords = (0..d)
        .map(|j| {
            let grad_samples: Vec<R> = ds
                .unlabeled_x
                .iter()
                .zip(&ds.unlabeled_pred)
                .map(|(x, &f)| {
                    let fitted: R = x.iter().zip(theta).map(|(&xi, &ti)| xi * ti).sum();
                    x[j] * (fitted - f)
                })
                .collect();
            let rect_samples: Vec<R> = ds
                .labeled_x
                .iter()
                .zip(ds.labeled_pred.iter().zip(&ds.labeled_y))
                .map(|(x, (&f, &y))| x[j] * (f - y))
                .collect();
            let grad = MomentSummary::from_samples(&grad_samples);
            let rect = MomentSummary::from_samples(&rect_samples);
            CoordStats {
                estimate: grad.mean,
                rectifier: rect.mean,
                var_estimate: grad.variance,
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
