//! Batch experiment harness: generate a population, partition it, run the
//! per-client, federated, and centralized estimators, and assemble a
//! report. Coverage studies repeat the pipeline over many seeds.

use std::net::TcpListener;
use std::path::PathBuf;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    generate_with, partition, PartitionCase, PartitionSpec, Population, PredictorSpec, TaskKind,
};
use crate::estimators::{
    concat_datasets, federated_confidence, local_summary, LocalSummary, MatrixDeviation,
    ParamGrid, TaskOptions, DEFAULT_LOGISTIC_AXIS_POINTS, DEFAULT_QUANTILE_GRID_POINTS,
};
use crate::federation::{compute_weights, AggregationWeights, ConfidenceSet};
use crate::report::{EntityResult, FederationReport};
use crate::stats_core::normal_quantile;
use crate::transport::{coordinate_session, run_client, SessionConfig};
use crate::{ClientDataset64, ConfidenceSet64, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    InProcess,
    Networked,
}

/// Everything one experiment run needs, settable from CLI flags or a
/// flat `key=value` config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub size: usize,
    pub bias: f64,
    pub noise_sd: f64,
    pub signal: f64,
    pub case: PartitionCase,
    pub ratios: Vec<u32>,
    pub lambda: f64,
    pub seed: u64,
    pub alpha: f64,
    /// Quantile level (quantile task).
    pub q: f64,
    /// Target coefficient (linear task).
    pub j_star: usize,
    pub quantile_grid_points: usize,
    pub logistic_grid_lo: f64,
    pub logistic_grid_hi: f64,
    pub logistic_axis_points: usize,
    pub deviation: MatrixDeviation,
    pub mode: RunMode,
    pub trials: usize,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Mean,
            size: 2000,
            bias: 0.0,
            noise_sd: 0.1,
            signal: 1.0,
            case: PartitionCase::Case1,
            ratios: vec![1; 5],
            lambda: 0.1,
            seed: 0,
            alpha: 0.1,
            q: 0.5,
            j_star: 1,
            quantile_grid_points: DEFAULT_QUANTILE_GRID_POINTS,
            logistic_grid_lo: -4.0,
            logistic_grid_hi: 4.0,
            logistic_axis_points: DEFAULT_LOGISTIC_AXIS_POINTS,
            deviation: MatrixDeviation::Diagonal,
            mode: RunMode::InProcess,
            trials: 1,
            output: None,
        }
    }
}

pub const CONFIG_VERSION: &str = "1";

impl ExperimentConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "config_version" => {
                if value != CONFIG_VERSION {
                    return Err(Error::Config(format!(
                        "unsupported config_version {value:?} (expected {CONFIG_VERSION})"
                    )));
                }
            }
            "task" => self.task = value.parse()?,
            "size" => self.size = num(key, value)?,
            "bias" => self.bias = num(key, value)?,
            "noise_sd" => self.noise_sd = num(key, value)?,
            "signal" => self.signal = num(key, value)?,
            "case" => self.case = value.parse()?,
            "ratios" => {
                self.ratios = value
                    .split(',')
                    .map(|tok| num::<u32>("ratios", tok.trim()))
                    .collect::<Result<_>>()?;
            }
            "lambda" => self.lambda = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "q" => self.q = num(key, value)?,
            "j_star" => self.j_star = num(key, value)?,
            "quantile_grid_points" => self.quantile_grid_points = num(key, value)?,
            "logistic_grid_lo" => self.logistic_grid_lo = num(key, value)?,
            "logistic_grid_hi" => self.logistic_grid_hi = num(key, value)?,
            "logistic_axis_points" => self.logistic_axis_points = num(key, value)?,
            "deviation" => {
                self.deviation = match value {
                    "diagonal" => MatrixDeviation::Diagonal,
                    "outer_product" => MatrixDeviation::OuterProduct,
                    other => {
                        return Err(Error::Config(format!("unknown deviation mode {other:?}")))
                    }
                }
            }
            "mode" => {
                self.mode = match value {
                    "in_process" => RunMode::InProcess,
                    "networked" => RunMode::Networked,
                    other => return Err(Error::Config(format!("unknown mode {other:?}"))),
                }
            }
            "trials" => self.trials = num(key, value)?,
            "output" => self.output = Some(PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a flat `key=value` config file. Blank lines and `#`
    /// comments are skipped; the file must declare `config_version`.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        let mut saw_version = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            let key = key.trim();
            if key == "config_version" {
                saw_version = true;
            }
            self.set(key, value.trim())?;
        }
        if !saw_version {
            return Err(Error::Config("config file missing config_version".into()));
        }
        Ok(())
    }

    /// Sorted `(key, value)` echo embedded in reports.
    pub fn echo(&self) -> Vec<(String, String)> {
        let ratios = self
            .ratios
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let mut pairs = vec![
            ("config_version".to_string(), CONFIG_VERSION.to_string()),
            ("task".to_string(), self.task.to_string()),
            ("size".to_string(), self.size.to_string()),
            ("bias".to_string(), self.bias.to_string()),
            ("noise_sd".to_string(), self.noise_sd.to_string()),
            ("signal".to_string(), self.signal.to_string()),
            ("case".to_string(), format!("{:?}", self.case).to_lowercase()),
            ("ratios".to_string(), ratios),
            ("lambda".to_string(), self.lambda.to_string()),
            ("seed".to_string(), self.seed.to_string()),
            ("alpha".to_string(), self.alpha.to_string()),
            ("q".to_string(), self.q.to_string()),
            ("j_star".to_string(), self.j_star.to_string()),
            (
                "quantile_grid_points".to_string(),
                self.quantile_grid_points.to_string(),
            ),
            (
                "logistic_grid_lo".to_string(),
                self.logistic_grid_lo.to_string(),
            ),
            (
                "logistic_grid_hi".to_string(),
                self.logistic_grid_hi.to_string(),
            ),
            (
                "logistic_axis_points".to_string(),
                self.logistic_axis_points.to_string(),
            ),
            (
                "deviation".to_string(),
                match self.deviation {
                    MatrixDeviation::Diagonal => "diagonal".to_string(),
                    MatrixDeviation::OuterProduct => "outer_product".to_string(),
                },
            ),
            (
                "mode".to_string(),
                match self.mode {
                    RunMode::InProcess => "in_process".to_string(),
                    RunMode::Networked => "networked".to_string(),
                },
            ),
            ("trials".to_string(), self.trials.to_string()),
        ];
        pairs.sort();
        pairs
    }

    pub fn n_clients(&self) -> usize {
        self.ratios.len()
    }

    fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            case: self.case,
            ratios: self.ratios.clone(),
            lambda: self.lambda,
            // Decouple the partition stream from the generator stream.
            seed: self.seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
        }
    }

    fn predictor(&self) -> PredictorSpec {
        PredictorSpec {
            bias: self.bias,
            noise_sd: self.noise_sd,
            signal: self.signal,
        }
    }

    /// Task options resolved against the generated population (the
    /// quantile grid spans the pooled prediction range, matching what
    /// grid negotiation produces over the same clients).
    pub fn task_options(&self, pop: &Population) -> Result<TaskOptions<f64>> {
        Ok(match self.task {
            TaskKind::Mean => TaskOptions::Mean,
            TaskKind::Quantile => {
                let (lo, hi) = pop
                    .predictions
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
                        (lo.min(p), hi.max(p))
                    });
                TaskOptions::Quantile {
                    q: self.q,
                    grid: quantile_grid(lo, hi, self.quantile_grid_points)?,
                }
            }
            TaskKind::Logistic => {
                let dims = pop.features.first().map_or(1, Vec::len);
                let bounds = vec![(self.logistic_grid_lo, self.logistic_grid_hi); dims];
                TaskOptions::Logistic {
                    grid: ParamGrid::lattice(&bounds, self.logistic_axis_points)?,
                }
            }
            TaskKind::Linear => TaskOptions::Linear {
                j_star: self.j_star,
                deviation: self.deviation,
            },
        })
    }

    /// Coordinate of `true_theta` the report targets.
    pub fn target_coord(&self) -> usize {
        match self.task {
            TaskKind::Linear => self.j_star,
            _ => 0,
        }
    }
}

/// Uniform grid over the prediction range; a single point when the range
/// is degenerate.
pub fn quantile_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(Error::Validation(format!("bad grid bounds [{lo}, {hi}]")));
    }
    if lo == hi {
        return Ok(vec![lo]);
    }
    Ok(ParamGrid::linspace(lo, hi, points.max(2))?.axis_values())
}

/// Zero-padded client names `c00`, `c01`, ... so lexicographic order is
/// numeric order.
pub fn client_ids(k: usize) -> Vec<String> {
    let width = k.saturating_sub(1).to_string().len().max(2);
    (0..k).map(|i| format!("c{i:0width$}")).collect()
}

/// Grid-set coverage rule: some retained point lies within one grid step
/// of the truth on every axis.
fn grid_covers(set: &crate::GridSet64, steps: &[f64], truth: &[f64]) -> bool {
    set.retained_points().any(|p| {
        p.iter()
            .zip(truth)
            .zip(steps)
            .all(|((&pi, &ti), &step)| (pi - ti).abs() <= step + 1e-12)
    })
}

/// Exact set membership for reporting: endpoint-inclusive for intervals,
/// within one grid step for grid sets.
pub fn set_covers(
    set: &ConfidenceSet64,
    opts: &TaskOptions<f64>,
    true_theta: &[f64],
    target_coord: usize,
) -> bool {
    match set {
        ConfidenceSet::Interval(iv) => iv.contains(true_theta[target_coord]),
        ConfidenceSet::Grid(g) => {
            let steps = match opts {
                TaskOptions::Quantile { grid, .. } => {
                    vec![if grid.len() > 1 { grid[1] - grid[0] } else { 0.0 }]
                }
                TaskOptions::Logistic { grid } => {
                    (0..grid.dims()).map(|a| grid.step(a)).collect()
                }
                _ => vec![0.0; true_theta.len()],
            };
            grid_covers(g, &steps, true_theta)
        }
    }
}

fn uniform_weight() -> AggregationWeights<f64> {
    AggregationWeights::new(vec![1.0]).expect("singleton weight")
}

/// In-process equivalent of one networked session: local summaries in
/// client-id order, count-proportional weights, shared assembly.
pub fn in_process_federated(
    clients: &[ClientDataset64],
    ids: &[String],
    opts: &TaskOptions<f64>,
    alpha: f64,
) -> Result<(ConfidenceSet64, Vec<LocalSummary<f64>>)> {
    let mut pairs: Vec<(String, LocalSummary<f64>)> = ids
        .iter()
        .zip(clients)
        .map(|(id, ds)| Ok((id.clone(), local_summary(id, ds, opts)?)))
        .collect::<Result<_>>()?;
    pairs.sort_by(|a, b| a.0.cmp(&b.0));
    let summaries: Vec<LocalSummary<f64>> = pairs.into_iter().map(|(_, s)| s).collect();
    let labs: Vec<u64> = summaries.iter().map(|s| s.counts().0).collect();
    let unlabs: Vec<u64> = summaries.iter().map(|s| s.counts().1).collect();
    let weights = compute_weights(&labs, &unlabs)?;
    let set = federated_confidence(opts, &summaries, &weights, alpha)?;
    Ok((set, summaries))
}

fn networked_federated(
    clients: &[ClientDataset64],
    ids: &[String],
    opts: &TaskOptions<f64>,
    alpha: f64,
) -> Result<(ConfidenceSet64, Vec<LocalSummary<f64>>)> {
    // Hand the session an empty quantile grid so the run exercises grid
    // negotiation; the negotiated grid equals the in-process one because
    // the clients jointly cover the pooled prediction range.
    let (session_task, grid_points) = match opts {
        TaskOptions::Quantile { q, grid } => (
            TaskOptions::Quantile {
                q: *q,
                grid: Vec::new(),
            },
            grid.len().max(2),
        ),
        other => (other.clone(), DEFAULT_QUANTILE_GRID_POINTS),
    };
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let cfg = SessionConfig {
        session_id: "experiment".into(),
        expected_clients: clients.len(),
        expected_client_ids: Some(ids.to_vec()),
        alpha,
        task: session_task.clone(),
        grid_points,
        timeout: Duration::from_secs(60),
    };
    let coordinator = std::thread::spawn(move || coordinate_session(&cfg, listener));
    let mut workers = Vec::new();
    for (id, ds) in ids.iter().zip(clients) {
        let id = id.clone();
        let ds = ds.clone();
        let task = session_task.clone();
        workers.push(std::thread::spawn(move || {
            run_client(
                &addr.to_string(),
                "experiment",
                &id,
                &ds,
                &task,
                Duration::from_secs(60),
            )
        }));
    }
    let mut client_results = Vec::new();
    for w in workers {
        client_results.push(
            w.join()
                .map_err(|_| Error::Protocol("client thread panicked".into()))??,
        );
    }
    let report = coordinator
        .join()
        .map_err(|_| Error::Protocol("coordinator thread panicked".into()))??;
    for set in &client_results {
        if *set != report.confidence {
            return Err(Error::Protocol(
                "broadcast result differs from coordinator result".into(),
            ));
        }
    }
    Ok((report.confidence, report.summaries))
}

/// Runs one experiment: generation, partition, per-client / federated /
/// centralized confidence sets, coverage flags.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<FederationReport> {
    let pop = generate_with(cfg.task, cfg.size, cfg.predictor(), cfg.seed)?;
    let clients = partition(&pop, &cfg.partition_spec())?;
    let ids = client_ids(clients.len());
    let opts = cfg.task_options(&pop)?;
    let target = cfg.target_coord();

    let (federated_set, summaries) = match cfg.mode {
        RunMode::InProcess => in_process_federated(&clients, &ids, &opts, cfg.alpha)?,
        RunMode::Networked => networked_federated(&clients, &ids, &opts, cfg.alpha)?,
    };

    let mut entities = Vec::with_capacity(clients.len() + 2);
    for summary in &summaries {
        let own = federated_confidence(
            &opts,
            std::slice::from_ref(summary),
            &uniform_weight(),
            cfg.alpha,
        )?;
        let covers = set_covers(&own, &opts, &pop.true_theta, target);
        entities.push(EntityResult::new(summary.client_id(), own, covers));
    }
    entities.push(EntityResult::new(
        "federated",
        federated_set.clone(),
        set_covers(&federated_set, &opts, &pop.true_theta, target),
    ));

    // Centralized reference: direct computation on the pooled data, one
    // synthetic client, no aggregation step.
    let pooled = concat_datasets(&clients)?;
    let central_summary = local_summary("centralized", &pooled, &opts)?;
    let central = federated_confidence(
        &opts,
        std::slice::from_ref(&central_summary),
        &uniform_weight(),
        cfg.alpha,
    )?;
    entities.push(EntityResult::new(
        "centralized",
        central.clone(),
        set_covers(&central, &opts, &pop.true_theta, target),
    ));

    Ok(FederationReport {
        task_kind: cfg.task,
        true_theta: pop.true_theta.clone(),
        target_coord: target,
        alpha: cfg.alpha,
        config: cfg.echo(),
        entities,
    })
}

/// Classical labeled-only interval for the mean: pooled labeled outcomes,
/// `mean +- z_{1-alpha/2} sd / sqrt(n)` with the population-sd convention.
pub fn classical_mean_interval(
    clients: &[ClientDataset64],
    alpha: f64,
) -> Result<crate::Interval64> {
    let labeled: Vec<f64> = clients.iter().flat_map(|c| c.labeled_y.iter().copied()).collect();
    if labeled.is_empty() {
        return Err(Error::Validation("no labeled samples".into()));
    }
    let m = crate::MomentSummary64::from_samples(&labeled);
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    crate::Interval64::centered(m.mean, z * (m.variance / labeled.len() as f64).sqrt())
}

/// Aggregate coverage over repeated trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub trials: usize,
    pub federated_coverage: f64,
    /// Binomial standard error of the coverage estimate.
    pub binomial_se: f64,
    pub mean_width: f64,
    /// Per-client fraction of trials where the client's own set missed
    /// the truth.
    pub client_miss_rates: Vec<f64>,
}

/// Repeats the experiment `cfg.trials` times with seeds
/// `cfg.seed + trial`, in parallel, always in-process.
pub fn run_coverage(cfg: &ExperimentConfig) -> Result<CoverageSummary> {
    if cfg.trials == 0 {
        return Err(Error::Validation("coverage needs at least one trial".into()));
    }
    let k = cfg.n_clients();
    let outcomes: Vec<(bool, f64, Vec<bool>)> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let mut trial_cfg = cfg.clone();
            trial_cfg.seed = cfg.seed.wrapping_add(trial as u64);
            trial_cfg.mode = RunMode::InProcess;
            let report = run_experiment(&trial_cfg)?;
            let fed = report
                .entities
                .iter()
                .find(|e| e.name == "federated")
                .expect("federated entity present");
            let client_covers: Vec<bool> = report.entities[..k]
                .iter()
                .map(|e| e.covers)
                .collect();
            Ok((fed.covers, fed.width, client_covers))
        })
        .collect::<Result<_>>()?;

    let hits = outcomes.iter().filter(|(c, _, _)| *c).count();
    let coverage = hits as f64 / cfg.trials as f64;
    let mean_width =
        outcomes.iter().map(|(_, w, _)| w).sum::<f64>() / cfg.trials as f64;
    let mut misses = vec![0usize; k];
    for (_, _, clients) in &outcomes {
        for (slot, &covered) in misses.iter_mut().zip(clients) {
            if !covered {
                *slot += 1;
            }
        }
    }
    Ok(CoverageSummary {
        trials: cfg.trials,
        federated_coverage: coverage,
        binomial_se: (coverage * (1.0 - coverage) / cfg.trials as f64).sqrt(),
        mean_width,
        client_miss_rates: misses
            .into_iter()
            .map(|m| m as f64 / cfg.trials as f64)
            .collect(),
    })
}
