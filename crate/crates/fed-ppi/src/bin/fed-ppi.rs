use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};

use fed_ppi::datagen::{self, TaskKind};
use fed_ppi::estimators::{
    MatrixDeviation, ParamGrid, TaskOptions, DEFAULT_LOGISTIC_AXIS_POINTS,
    DEFAULT_QUANTILE_GRID_POINTS,
};
use fed_ppi::experiment::{run_coverage, run_experiment, ExperimentConfig};
use fed_ppi::federation::ConfidenceSet;
use fed_ppi::transport::{coordinate_session, run_client, SessionConfig};
use fed_ppi::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fed-ppi",
    version,
    about = "Federated prediction-powered inference toolkit"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic population file.
    Generate(GenerateArgs),
    /// Run one experiment and emit a report.
    Run(ExperimentArgs),
    /// Repeat an experiment over many seeds and report coverage.
    Coverage(ExperimentArgs),
    /// Run the session coordinator.
    Serve(ServeArgs),
    /// Run one client against a coordinator.
    Client(ClientArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "mean")]
    task: String,
    #[arg(long, default_value_t = 2000)]
    size: usize,
    #[arg(long, default_value_t = 0.0)]
    bias: f64,
    #[arg(long, default_value_t = 0.1)]
    noise_sd: f64,
    #[arg(long, default_value_t = 1.0)]
    signal: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Population file to write.
    #[arg(long)]
    output: PathBuf,
}

/// Flags mirror ExperimentConfig fields; unset flags fall back to the
/// config file (if given) and then to defaults.
#[derive(Args)]
struct ExperimentArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    size: Option<String>,
    #[arg(long)]
    bias: Option<String>,
    #[arg(long)]
    noise_sd: Option<String>,
    #[arg(long)]
    signal: Option<String>,
    #[arg(long)]
    case: Option<String>,
    /// Comma-separated client size ratios, e.g. 4,1,1,1,1.
    #[arg(long)]
    ratios: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    q: Option<String>,
    #[arg(long)]
    j_star: Option<String>,
    #[arg(long)]
    quantile_grid_points: Option<String>,
    #[arg(long)]
    logistic_grid_lo: Option<String>,
    #[arg(long)]
    logistic_grid_hi: Option<String>,
    #[arg(long)]
    logistic_axis_points: Option<String>,
    /// diagonal or outer_product.
    #[arg(long)]
    deviation: Option<String>,
    /// in_process or networked.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    /// Report path stem; writes <stem>.csv and <stem>.jsonl.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl ExperimentArgs {
    fn build(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)?;
            cfg.apply_file(&text)?;
        }
        let overrides: [(&str, &Option<String>); 19] = [
            ("task", &self.task),
            ("size", &self.size),
            ("bias", &self.bias),
            ("noise_sd", &self.noise_sd),
            ("signal", &self.signal),
            ("case", &self.case),
            ("ratios", &self.ratios),
            ("lambda", &self.lambda),
            ("seed", &self.seed),
            ("alpha", &self.alpha),
            ("q", &self.q),
            ("j_star", &self.j_star),
            ("quantile_grid_points", &self.quantile_grid_points),
            ("logistic_grid_lo", &self.logistic_grid_lo),
            ("logistic_grid_hi", &self.logistic_grid_hi),
            ("logistic_axis_points", &self.logistic_axis_points),
            ("deviation", &self.deviation),
            ("mode", &self.mode),
            ("trials", &self.trials),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if let Some(out) = &self.output {
            cfg.output = Some(out.clone());
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct EstimatorArgs {
    /// mean, quantile, logistic or linear.
    #[arg(long, default_value = "mean")]
    task: String,
    #[arg(long, default_value_t = 0.5)]
    q: f64,
    #[arg(long, default_value_t = DEFAULT_QUANTILE_GRID_POINTS)]
    quantile_grid_points: usize,
    #[arg(long, default_value_t = -4.0)]
    logistic_grid_lo: f64,
    #[arg(long, default_value_t = 4.0)]
    logistic_grid_hi: f64,
    #[arg(long, default_value_t = DEFAULT_LOGISTIC_AXIS_POINTS)]
    logistic_axis_points: usize,
    /// Logistic coefficient dimension.
    #[arg(long, default_value_t = 1)]
    dims: usize,
    #[arg(long, default_value_t = 1)]
    j_star: usize,
    /// diagonal or outer_product.
    #[arg(long, default_value = "diagonal")]
    deviation: String,
}

impl EstimatorArgs {
    fn task_options(&self) -> Result<TaskOptions<f64>> {
        let task: TaskKind = self.task.parse()?;
        Ok(match task {
            TaskKind::Mean => TaskOptions::Mean,
            // Empty grid: the session negotiates it from client ranges.
            TaskKind::Quantile => TaskOptions::Quantile {
                q: self.q,
                grid: Vec::new(),
            },
            TaskKind::Logistic => TaskOptions::Logistic {
                grid: ParamGrid::lattice(
                    &vec![(self.logistic_grid_lo, self.logistic_grid_hi); self.dims],
                    self.logistic_axis_points,
                )?,
            },
            TaskKind::Linear => TaskOptions::Linear {
                j_star: self.j_star,
                deviation: match self.deviation.as_str() {
                    "diagonal" => MatrixDeviation::Diagonal,
                    "outer_product" => MatrixDeviation::OuterProduct,
                    other => {
                        return Err(Error::Config(format!("unknown deviation mode {other:?}")))
                    }
                },
            },
        })
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7171")]
    addr: String,
    #[arg(long, default_value = "default")]
    session_id: String,
    /// Number of clients to wait for.
    #[arg(long)]
    clients: usize,
    /// Optional comma-separated client ids, for better timeout errors.
    #[arg(long)]
    client_ids: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 60.0)]
    timeout_secs: f64,
    #[command(flatten)]
    estimator: EstimatorArgs,
    /// Write the resulting confidence set as JSON.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ClientArgs {
    #[arg(long, default_value = "127.0.0.1:7171")]
    addr: String,
    #[arg(long, default_value = "default")]
    session_id: String,
    #[arg(long)]
    client_id: String,
    /// Client dataset file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 60.0)]
    timeout_secs: f64,
    #[command(flatten)]
    estimator: EstimatorArgs,
}

fn describe_set(set: &ConfidenceSet<f64>) -> String {
    match set {
        ConfidenceSet::Interval(iv) => {
            format!("interval [{:.6}, {:.6}] (width {:.6})", iv.lo, iv.hi, iv.width())
        }
        ConfidenceSet::Grid(g) => match g.retained_span(0) {
            Some(span) => format!(
                "grid set, {} of {} points retained, span [{:.6}, {:.6}]",
                g.retained.iter().filter(|&&r| r).count(),
                g.retained.len(),
                span.lo,
                span.hi
            ),
            None => "empty grid set".to_string(),
        },
    }
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let task: TaskKind = args.task.parse()?;
    let pop = datagen::generate_with(
        task,
        args.size,
        datagen::PredictorSpec {
            bias: args.bias,
            noise_sd: args.noise_sd,
            signal: args.signal,
        },
        args.seed,
    )?;
    datagen::write_population(&pop, &args.output)?;
    println!(
        "wrote {} samples ({} task, true theta {:?}) to {}",
        pop.len(),
        task,
        pop.true_theta,
        args.output.display()
    );
    Ok(())
}

fn cmd_run(args: &ExperimentArgs) -> Result<()> {
    let cfg = args.build()?;
    let started = Instant::now();
    let report = run_experiment(&cfg)?;
    eprintln!("run_experiment finished in {:.3}s", started.elapsed().as_secs_f64());
    if let Some(stem) = &cfg.output {
        let csv = stem.with_extension("csv");
        let jsonl = stem.with_extension("jsonl");
        report.write_csv(&csv)?;
        report.write_jsonl(&jsonl)?;
        eprintln!("wrote {} and {}", csv.display(), jsonl.display());
    }
    println!("true theta: {:?}", report.true_theta);
    for e in &report.entities {
        println!(
            "{:<12} {} covers={}",
            e.name,
            describe_set(&e.set),
            e.covers
        );
    }
    Ok(())
}

fn cmd_coverage(args: &ExperimentArgs) -> Result<()> {
    let cfg = args.build()?;
    if cfg.trials < 100 {
        return Err(Error::Validation(format!(
            "coverage runs need at least 100 trials, got {}",
            cfg.trials
        )));
    }
    let started = Instant::now();
    let summary = run_coverage(&cfg)?;
    eprintln!("run_coverage finished in {:.3}s", started.elapsed().as_secs_f64());
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Validation(format!("summary serialization: {e}")))?;
    if let Some(path) = &cfg.output {
        std::fs::write(path, format!("{text}\n"))?;
        eprintln!("wrote {}", path.display());
    }
    println!("{text}");
    Ok(())
}

fn cmd_serve(args: &ServeArgs) -> Result<()> {
    let listener = TcpListener::bind(&args.addr)?;
    eprintln!("listening on {}", listener.local_addr()?);
    let cfg = SessionConfig {
        session_id: args.session_id.clone(),
        expected_clients: args.clients,
        expected_client_ids: args
            .client_ids
            .as_ref()
            .map(|s| s.split(',').map(|t| t.trim().to_string()).collect()),
        alpha: args.alpha,
        task: args.estimator.task_options()?,
        grid_points: args.estimator.quantile_grid_points,
        timeout: Duration::from_secs_f64(args.timeout_secs),
    };
    let started = Instant::now();
    let report = coordinate_session(&cfg, listener)?;
    eprintln!("session finished in {:.3}s", started.elapsed().as_secs_f64());
    if let Some(path) = &args.output {
        let json = serde_json::to_string_pretty(&report.confidence)
            .map_err(|e| Error::Validation(format!("result serialization: {e}")))?;
        std::fs::write(path, format!("{json}\n"))?;
        eprintln!("wrote {}", path.display());
    }
    println!("federated result: {}", describe_set(&report.confidence));
    Ok(())
}

fn cmd_client(args: &ClientArgs) -> Result<()> {
    let ds = datagen::read_client_dataset(&args.data)?;
    let set = run_client(
        &args.addr,
        &args.session_id,
        &args.client_id,
        &ds,
        &args.estimator.task_options()?,
        Duration::from_secs_f64(args.timeout_secs),
    )?;
    println!("received result: {}", describe_set(&set));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Run(a) => cmd_run(a),
        Cmd::Coverage(a) => cmd_coverage(a),
        Cmd::Serve(a) => cmd_serve(a),
        Cmd::Client(a) => cmd_client(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
