//! Synthetic population generation, heterogeneity-controlled partitioning
//! into client datasets, and plain-text serialization for both.
//!
//! All randomness flows through `ChaCha8Rng` seeded from a `u64`, so every
//! artifact is reproducible from its seed.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::estimators::{logistic_mu, ClientDataset};
use crate::linalg::{ols_fit, Matrix};
use crate::{Error, Result};

/// Estimation target the synthetic population is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Mean,
    Quantile,
    Logistic,
    Linear,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Mean => "mean",
            TaskKind::Quantile => "quantile",
            TaskKind::Logistic => "logistic",
            TaskKind::Linear => "linear",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(TaskKind::Mean),
            "quantile" => Ok(TaskKind::Quantile),
            "logistic" => Ok(TaskKind::Logistic),
            "linear" => Ok(TaskKind::Linear),
            other => Err(Error::Config(format!("unknown task kind {other:?}"))),
        }
    }
}

/// Quality of the synthetic prediction model.
///
/// `pred = signal * base + (1 - signal) * anchor + bias + N(0, noise_sd^2)`
/// where `base` is the quantity being predicted (the outcome, or the class
/// probability for the logistic task) and `anchor` is its population-level
/// expectation, so `signal = 0` yields an uninformative predictor and
/// `signal = 1` a sharp one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub bias: f64,
    pub noise_sd: f64,
    pub signal: f64,
}

impl PredictorSpec {
    pub fn new(bias: f64, noise_sd: f64) -> Self {
        Self {
            bias,
            noise_sd,
            signal: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.bias.is_finite() || !self.noise_sd.is_finite() || !self.signal.is_finite() {
            return Err(Error::Validation("predictor parameters must be finite".into()));
        }
        if self.noise_sd < 0.0 {
            return Err(Error::Validation(format!(
                "noise_sd must be nonnegative, got {}",
                self.noise_sd
            )));
        }
        Ok(())
    }
}

/// A full synthetic population with model predictions and the ground-truth
/// parameter computed from all outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub task_kind: TaskKind,
    pub features: Vec<Vec<f64>>,
    pub outcomes: Vec<f64>,
    pub predictions: Vec<f64>,
    pub true_theta: Vec<f64>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }
}

/// Generates a population with a sharp predictor (`signal = 1`).
pub fn generate(
    task: TaskKind,
    size: usize,
    bias: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<Population> {
    generate_with(task, size, PredictorSpec::new(bias, noise_sd), seed)
}

const LINEAR_SLOPE: f64 = 0.938;
const LINEAR_INTERCEPT: f64 = 0.5;

pub fn generate_with(
    task: TaskKind,
    size: usize,
    predictor: PredictorSpec,
    seed: u64,
) -> Result<Population> {
    if size == 0 {
        return Err(Error::Validation("population size must be positive".into()));
    }
    predictor.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;

    let mut features = Vec::with_capacity(size);
    let mut outcomes = Vec::with_capacity(size);
    let mut bases = Vec::with_capacity(size);
    for _ in 0..size {
        let x: f64 = normal.sample(&mut rng);
        match task {
            TaskKind::Mean | TaskKind::Quantile => {
                features.push(vec![x]);
                let y = 1.0 + x;
                outcomes.push(y);
                bases.push(y);
            }
            TaskKind::Linear => {
                features.push(vec![1.0, x]);
                let eps: f64 = normal.sample(&mut rng);
                let y = LINEAR_INTERCEPT + LINEAR_SLOPE * x + eps;
                outcomes.push(y);
                bases.push(y);
            }
            TaskKind::Logistic => {
                features.push(vec![x]);
                let p = logistic_mu(&[x], &[1.0]);
                let y = if rng.gen::<f64>() < p { 1.0 } else { 0.0 };
                outcomes.push(y);
                bases.push(p);
            }
        }
    }

    let anchor = match task {
        TaskKind::Mean | TaskKind::Quantile => 1.0,
        TaskKind::Linear => LINEAR_INTERCEPT,
        TaskKind::Logistic => 0.5,
    };
    let predictions: Vec<f64> = bases
        .iter()
        .map(|&b| {
            let eps: f64 = normal.sample(&mut rng);
            let p = predictor.signal * b + (1.0 - predictor.signal) * anchor
                + predictor.bias
                + predictor.noise_sd * eps;
            if task == TaskKind::Logistic {
                p.clamp(0.0, 1.0)
            } else {
                p
            }
        })
        .collect();

    let true_theta = match task {
        TaskKind::Mean => vec![outcomes.iter().sum::<f64>() / size as f64],
        TaskKind::Quantile => vec![population_quantile(&outcomes, 0.5)?],
        TaskKind::Linear => ols_fit(&features, &outcomes, "population design")?,
        TaskKind::Logistic => fit_logistic(&features, &outcomes)?,
    };

    Ok(Population {
        task_kind: task,
        features,
        outcomes,
        predictions,
        true_theta,
    })
}

/// Smallest value `t` in the sample with `F(t) >= q` (left-continuous
/// inverse of the empirical CDF).
pub fn population_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Validation("quantile of empty sample".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Validation(format!(
            "quantile level must be in (0, 1), got {q}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * values.len() as f64).ceil() as usize;
    Ok(sorted[rank.max(1) - 1])
}

/// Logistic maximum likelihood fit by Newton iteration.
pub fn fit_logistic(features: &[Vec<f64>], outcomes: &[f64]) -> Result<Vec<f64>> {
    if features.is_empty() || features.len() != outcomes.len() {
        return Err(Error::Validation(format!(
            "logistic fit: {} feature rows vs {} outcomes",
            features.len(),
            outcomes.len()
        )));
    }
    let d = features[0].len();
    let mut theta = vec![0.0; d];
    for _ in 0..50 {
        let mut hessian = Matrix::zeros(d);
        let mut gradient = vec![0.0; d];
        for (x, &y) in features.iter().zip(outcomes) {
            let mu = logistic_mu(x, &theta);
            let w = (mu * (1.0 - mu)).max(1e-10);
            hessian.add_outer(x, w);
            for j in 0..d {
                gradient[j] += x[j] * (y - mu);
            }
        }
        let step = hessian.solve(&gradient, "logistic fit")?;
        let mut max_step = 0.0f64;
        for j in 0..d {
            theta[j] += step[j];
            max_step = max_step.max(step[j].abs());
        }
        if max_step < 1e-12 {
            break;
        }
    }
    Ok(theta)
}

/// How outcomes are assigned to clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionCase {
    /// IID: a uniform shuffle before cutting contiguous blocks.
    Case1,
    /// Fully heterogeneous: rows sorted by prediction before cutting.
    Case2,
    /// Mixed: the first half of a shuffle stays shuffled, the second half
    /// is re-sorted by prediction; blocks are cut from the concatenation.
    Case3,
}

impl FromStr for PartitionCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "case1" => Ok(PartitionCase::Case1),
            "2" | "case2" => Ok(PartitionCase::Case2),
            "3" | "case3" => Ok(PartitionCase::Case3),
            other => Err(Error::Config(format!("unknown partition case {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub case: PartitionCase,
    /// Relative client sizes; actual counts come from largest-remainder
    /// apportionment of the population.
    pub ratios: Vec<u32>,
    /// Labeled fraction within each client.
    pub lambda: f64,
    pub seed: u64,
}

/// Largest-remainder apportionment of `total` into parts proportional to
/// `ratios`.
pub fn apportion(total: usize, ratios: &[u32]) -> Result<Vec<usize>> {
    if ratios.is_empty() {
        return Err(Error::Validation("apportion: empty ratio vector".into()));
    }
    let denom: u64 = ratios.iter().map(|&r| r as u64).sum();
    if denom == 0 {
        return Err(Error::Validation("apportion: ratios sum to zero".into()));
    }
    let mut shares: Vec<usize> = Vec::with_capacity(ratios.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(ratios.len());
    let mut assigned = 0usize;
    for (k, &r) in ratios.iter().enumerate() {
        let exact = total as f64 * r as f64 / denom as f64;
        let floor = exact.floor() as usize;
        shares.push(floor);
        assigned += floor;
        remainders.push((k, exact - floor as f64));
    }
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for &(k, _) in remainders.iter().take(total - assigned) {
        shares[k] += 1;
    }
    Ok(shares)
}

/// Splits a population into per-client datasets.
///
/// Every client keeps `max(1, round(lambda * share))` rows as labeled
/// (chosen uniformly within the client, capped at the share) and strips
/// outcomes from the rest.
pub fn partition(pop: &Population, spec: &PartitionSpec) -> Result<Vec<ClientDataset<f64>>> {
    if !(spec.lambda > 0.0 && spec.lambda < 1.0) {
        return Err(Error::Validation(format!(
            "labeled fraction must be in (0, 1), got {}",
            spec.lambda
        )));
    }
    let shares = apportion(pop.len(), &spec.ratios)?;
    for (k, &s) in shares.iter().enumerate() {
        if s == 0 {
            return Err(Error::Validation(format!(
                "client {k} receives no samples; population of {} cannot fill ratio {:?}",
                pop.len(),
                spec.ratios
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.shuffle(&mut rng);
    match spec.case {
        PartitionCase::Case1 => {}
        PartitionCase::Case2 => {
            order.sort_by(|&a, &b| pop.predictions[a].total_cmp(&pop.predictions[b]));
        }
        PartitionCase::Case3 => {
            let half = pop.len() / 2;
            order[half..].sort_by(|&a, &b| pop.predictions[a].total_cmp(&pop.predictions[b]));
        }
    }

    let mut clients = Vec::with_capacity(shares.len());
    let mut cursor = 0usize;
    for &share in &shares {
        let block: Vec<usize> = order[cursor..cursor + share].to_vec();
        cursor += share;
        let n_lab = ((spec.lambda * share as f64).round() as usize).clamp(1, share);
        let mut local = block.clone();
        local.shuffle(&mut rng);
        let (lab, unlab) = local.split_at(n_lab);
        clients.push(ClientDataset::new(
            lab.iter().map(|&i| pop.features[i].clone()).collect(),
            lab.iter().map(|&i| pop.outcomes[i]).collect(),
            lab.iter().map(|&i| pop.predictions[i]).collect(),
            unlab.iter().map(|&i| pop.features[i].clone()).collect(),
            unlab.iter().map(|&i| pop.predictions[i]).collect(),
        )?);
    }
    Ok(clients)
}

fn fmt_row(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_row(line: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let row: Vec<f64> = line
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::Validation(format!("bad float {tok:?} in {what} row")))
        })
        .collect::<Result<_>>()?;
    if row.len() != expected {
        return Err(Error::Validation(format!(
            "{what} row has {} fields, expected {expected}",
            row.len()
        )));
    }
    Ok(row)
}

/// Writes a population as plain text: `key=value` metadata lines, then a
/// header and one comma-separated row per sample. Floats use the shortest
/// representation that round-trips.
pub fn write_population(pop: &Population, path: &Path) -> Result<()> {
    let dim = pop.features.first().map_or(0, |r| r.len());
    let mut out = String::new();
    out.push_str(&format!("task_kind={}\n", pop.task_kind));
    out.push_str(&format!("true_theta={}\n", fmt_row(pop.true_theta.iter().copied())));
    out.push_str(&format!("dim={dim}\n"));
    let header: Vec<String> = (0..dim)
        .map(|j| format!("x{j}"))
        .chain(["y".into(), "pred".into()])
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for ((x, &y), &f) in pop
        .features
        .iter()
        .zip(&pop.outcomes)
        .zip(&pop.predictions)
    {
        out.push_str(&fmt_row(x.iter().copied().chain([y, f])));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_population(path: &Path) -> Result<Population> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let task_kind: TaskKind = metadata_value(lines.next(), "task_kind")?.parse()?;
    let theta_line = metadata_value(lines.next(), "true_theta")?;
    let true_theta: Vec<f64> = theta_line
        .split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::Validation(format!("bad float {tok:?} in true_theta")))
        })
        .collect::<Result<_>>()?;
    if true_theta.is_empty() {
        return Err(Error::Validation("empty true_theta line".into()));
    }
    let dim: usize = metadata_value(lines.next(), "dim")?
        .parse()
        .map_err(|_| Error::Validation("bad dim line".into()))?;
    let _header = lines
        .next()
        .ok_or_else(|| Error::Validation("missing header line".into()))?;
    let mut features = Vec::new();
    let mut outcomes = Vec::new();
    let mut predictions = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_row(line, dim + 2, "population")?;
        features.push(row[..dim].to_vec());
        outcomes.push(row[dim]);
        predictions.push(row[dim + 1]);
    }
    if outcomes.is_empty() {
        return Err(Error::Validation("population file has no samples".into()));
    }
    Ok(Population {
        task_kind,
        features,
        outcomes,
        predictions,
        true_theta,
    })
}

fn metadata_value(line: Option<&str>, key: &str) -> Result<String> {
    let line = line.ok_or_else(|| Error::Validation(format!("missing {key} line")))?;
    line.strip_prefix(&format!("{key}="))
        .map(str::to_string)
        .ok_or_else(|| Error::Validation(format!("expected {key}=... line, got {line:?}")))
}

/// Client dataset text format: metadata, then labeled and unlabeled
/// sections, each with its own header.
pub fn write_client_dataset(ds: &ClientDataset<f64>, path: &Path) -> Result<()> {
    let dim = ds.dim();
    let mut out = String::new();
    out.push_str(&format!("dim={dim}\n"));
    out.push_str(&format!("n_labeled={}\n", ds.n_labeled()));
    out.push_str(&format!("n_unlabeled={}\n", ds.n_unlabeled()));
    let xs: Vec<String> = (0..dim).map(|j| format!("x{j}")).collect();
    out.push_str("section=labeled\n");
    out.push_str(&format!("{},y,pred\n", xs.join(",")));
    for ((x, &y), &f) in ds.labeled_x.iter().zip(&ds.labeled_y).zip(&ds.labeled_pred) {
        out.push_str(&fmt_row(x.iter().copied().chain([y, f])));
        out.push('\n');
    }
    out.push_str("section=unlabeled\n");
    out.push_str(&format!("{},pred\n", xs.join(",")));
    for (x, &f) in ds.unlabeled_x.iter().zip(&ds.unlabeled_pred) {
        out.push_str(&fmt_row(x.iter().copied().chain([f])));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_client_dataset(path: &Path) -> Result<ClientDataset<f64>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let dim: usize = metadata_value(lines.next(), "dim")?
        .parse()
        .map_err(|_| Error::Validation("bad dim line".into()))?;
    let n_labeled: usize = metadata_value(lines.next(), "n_labeled")?
        .parse()
        .map_err(|_| Error::Validation("bad n_labeled line".into()))?;
    let n_unlabeled: usize = metadata_value(lines.next(), "n_unlabeled")?
        .parse()
        .map_err(|_| Error::Validation("bad n_unlabeled line".into()))?;

    if metadata_value(lines.next(), "section")? != "labeled" {
        return Err(Error::Validation("expected labeled section".into()));
    }
    let _header = lines.next();
    let mut labeled_x = Vec::with_capacity(n_labeled);
    let mut labeled_y = Vec::with_capacity(n_labeled);
    let mut labeled_pred = Vec::with_capacity(n_labeled);
    for _ in 0..n_labeled {
        let line = lines
            .next()
            .ok_or_else(|| Error::Validation("truncated labeled section".into()))?;
        let row = parse_row(line, dim + 2, "labeled")?;
        labeled_x.push(row[..dim].to_vec());
        labeled_y.push(row[dim]);
        labeled_pred.push(row[dim + 1]);
    }

    if metadata_value(lines.next(), "section")? != "unlabeled" {
        return Err(Error::Validation("expected unlabeled section".into()));
    }
    let _header = lines.next();
    let mut unlabeled_x = Vec::with_capacity(n_unlabeled);
    let mut unlabeled_pred = Vec::with_capacity(n_unlabeled);
    for _ in 0..n_unlabeled {
        let line = lines
            .next()
            .ok_or_else(|| Error::Validation("truncated unlabeled section".into()))?;
        let row = parse_row(line, dim + 1, "unlabeled")?;
        unlabeled_x.push(row[..dim].to_vec());
        unlabeled_pred.push(row[dim]);
    }

    ClientDataset::new(labeled_x, labeled_y, labeled_pred, unlabeled_x, unlabeled_pred)
}
