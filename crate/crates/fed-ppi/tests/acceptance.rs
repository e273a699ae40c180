//! Acceptance gate: one test per criterion, each printing a PASS line
//! with the measured numbers once its assertions hold.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the
//! per-criterion lines.

use std::net::{TcpListener, TcpStream};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fed_ppi::datagen::{generate, generate_with, PartitionCase, PredictorSpec, TaskKind};
use fed_ppi::estimators::{client_summary, EstimatorKind, ParamGrid, TaskOptions};
use fed_ppi::experiment::{
    classical_mean_interval, client_ids, in_process_federated, run_coverage, run_experiment,
    ExperimentConfig, RunMode,
};
use fed_ppi::federation::{aggregate, compute_weights, pooled_oracle, ConfidenceSet};
use fed_ppi::transport;
use fed_ppi::transport::{
    coordinate_session, DecodeError, Hello, Message, SessionConfig, SummaryMessage,
};
use fed_ppi::{ClientDataset64, ClientSummary64, Error};

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Splits a population into client datasets whose labeled and unlabeled
/// sides both hold the client's entire block, so per-client statistics
/// are full-population averages over the block.
fn full_population_split(
    pop: &fed_ppi::datagen::Population,
    k: usize,
    seed: u64,
) -> Vec<ClientDataset64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pop.len()).collect();
    order.shuffle(&mut rng);
    let base = pop.len() / k;
    let extra = pop.len() % k;
    let mut out = Vec::with_capacity(k);
    let mut cursor = 0;
    for i in 0..k {
        let share = base + usize::from(i < extra);
        let block = &order[cursor..cursor + share];
        cursor += share;
        let x: Vec<Vec<f64>> = block.iter().map(|&j| pop.features[j].clone()).collect();
        let y: Vec<f64> = block.iter().map(|&j| pop.outcomes[j]).collect();
        let f: Vec<f64> = block.iter().map(|&j| pop.predictions[j]).collect();
        out.push(ClientDataset64::new(x.clone(), y, f.clone(), x, f).unwrap());
    }
    out
}

fn assert_summaries_match(
    fed: &fed_ppi::GlobalSummary64,
    pooled: &fed_ppi::GlobalSummary64,
    context: &str,
) -> f64 {
    assert_eq!(fed.coords.len(), pooled.coords.len(), "{context}");
    let mut worst = 0.0f64;
    for (a, b) in fed.coords.iter().zip(&pooled.coords) {
        for (x, y) in [
            (a.estimate, b.estimate),
            (a.rectifier, b.rectifier),
            (a.var_estimate, b.var_estimate),
            (a.var_rectifier, b.var_rectifier),
        ] {
            let err = (x - y).abs() / x.abs().max(y.abs()).max(1.0);
            worst = worst.max(err);
            assert!(
                rel_close(x, y, 1e-10),
                "{context}: {x} vs {y} (relative error {err:.3e})"
            );
        }
    }
    worst
}

#[test]
fn criterion_1_aggregation_equals_pooled() {
    let started = Instant::now();
    let families: Vec<(&str, TaskKind, EstimatorKind<f64>)> = vec![
        ("mean", TaskKind::Mean, EstimatorKind::Mean),
        (
            "quantile",
            TaskKind::Quantile,
            EstimatorKind::Quantile {
                grid: ParamGrid::linspace(-2.0, 4.0, 33).unwrap().axis_values(),
            },
        ),
        (
            "logistic",
            TaskKind::Logistic,
            EstimatorKind::Logistic {
                grid: ParamGrid::linspace(-2.0, 2.0, 9).unwrap(),
            },
        ),
        (
            "linear",
            TaskKind::Linear,
            EstimatorKind::LinearGradient {
                theta: vec![0.3, 0.7],
            },
        ),
    ];
    let mut worst = 0.0f64;
    let mut splits = 0;
    for (name, task, kind) in &families {
        let pop = generate(*task, 400, 0.05, 0.2, 11).unwrap();
        let reference = pooled_oracle(&full_population_split(&pop, 1, 0), kind).unwrap();
        for &k in &[2usize, 5, 20] {
            for split_seed in 0..7u64 {
                let clients = full_population_split(&pop, k, 1000 + split_seed);
                let summaries: Vec<ClientSummary64> = clients
                    .iter()
                    .enumerate()
                    .map(|(i, ds)| client_summary(&format!("c{i:02}"), ds, kind).unwrap())
                    .collect();
                let labs: Vec<u64> = summaries.iter().map(|s| s.n_labeled).collect();
                let unlabs: Vec<u64> = summaries.iter().map(|s| s.n_unlabeled).collect();
                let weights = compute_weights(&labs, &unlabs).unwrap();
                let fed = aggregate(&summaries, &weights).unwrap();
                worst = worst.max(assert_summaries_match(
                    &fed,
                    &reference,
                    &format!("{name}, K={k}, split {split_seed}"),
                ));
                splits += 1;
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "took {elapsed:.1}s, budget 10s");
    println!(
        "PASS criterion 1: aggregation equals pooled computation on {splits} splits across 4 families, \
         worst relative error {worst:.2e}, {elapsed:.2}s"
    );
}

#[test]
fn criterion_2_coverage_all_estimators() {
    let started = Instant::now();
    let mut lines = Vec::new();
    for task in [
        TaskKind::Mean,
        TaskKind::Quantile,
        TaskKind::Logistic,
        TaskKind::Linear,
    ] {
        let cfg = ExperimentConfig {
            task,
            size: 2000,
            ratios: vec![1; 5],
            lambda: 0.1,
            alpha: 0.1,
            trials: 1000,
            seed: 42,
            ..ExperimentConfig::default()
        };
        let cov = run_coverage(&cfg).unwrap();
        assert!(
            cov.federated_coverage >= 0.88,
            "{task}: coverage {} < 0.88",
            cov.federated_coverage
        );
        lines.push(format!("{task}={:.3}", cov.federated_coverage));
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "took {elapsed:.1}s, budget 300s");
    println!(
        "PASS criterion 2: coverage over 1000 trials at alpha=0.1: {}, {elapsed:.1}s",
        lines.join(", ")
    );
}

#[test]
fn criterion_3_width_advantage_over_classical() {
    // Outcome sd is 1, so a low-error predictor has noise sd 0.1.
    let cfg = ExperimentConfig {
        noise_sd: 0.1,
        alpha: 0.1,
        ..ExperimentConfig::default()
    };
    let trials = 200;
    let mut narrower = 0;
    for trial in 0..trials {
        let mut c = cfg.clone();
        c.seed = 500 + trial as u64;
        let report = run_experiment(&c).unwrap();
        let fed = report
            .entities
            .iter()
            .find(|e| e.name == "federated")
            .unwrap()
            .width;
        let pop = generate_with(c.task, c.size, PredictorSpec::new(c.bias, c.noise_sd), c.seed)
            .unwrap();
        let clients = fed_ppi::datagen::partition(
            &pop,
            &fed_ppi::datagen::PartitionSpec {
                case: c.case,
                ratios: c.ratios.clone(),
                lambda: c.lambda,
                seed: c.seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
            },
        )
        .unwrap();
        let classical = classical_mean_interval(&clients, c.alpha).unwrap();
        if fed < classical.width() {
            narrower += 1;
        }
    }
    let frac = narrower as f64 / trials as f64;
    assert!(frac >= 0.95, "narrower in only {frac:.3} of trials");
    println!(
        "PASS criterion 3: federated interval narrower than classical in {frac:.3} of {trials} trials"
    );
}

#[test]
fn criterion_4_lambda_trend() {
    // A weak predictor makes the rectifier variance dominate, so widths
    // keep shrinking as the labeled fraction grows through 0.7.
    let lambdas = [0.01, 0.3, 0.5, 0.7];
    let trials = 50;
    let mut medians = Vec::new();
    for &lambda in &lambdas {
        let mut widths: Vec<f64> = (0..trials)
            .map(|trial| {
                let cfg = ExperimentConfig {
                    lambda,
                    signal: 0.1,
                    noise_sd: 0.3,
                    seed: 9000 + trial as u64,
                    ..ExperimentConfig::default()
                };
                let report = run_experiment(&cfg).unwrap();
                report
                    .entities
                    .iter()
                    .find(|e| e.name == "federated")
                    .unwrap()
                    .width
            })
            .collect();
        widths.sort_by(f64::total_cmp);
        medians.push(widths[trials / 2]);
    }
    for pair in medians.windows(2) {
        assert!(pair[1] < pair[0], "medians not strictly decreasing: {medians:?}");
    }
    println!(
        "PASS criterion 4: median width strictly decreasing over lambda {lambdas:?}: {medians:?}"
    );
}

#[test]
fn criterion_5_client_count_robustness() {
    for seed in 0..5u64 {
        let width_at = |k: usize| {
            let cfg = ExperimentConfig {
                ratios: vec![1; k],
                seed,
                ..ExperimentConfig::default()
            };
            let report = run_experiment(&cfg).unwrap();
            report
                .entities
                .iter()
                .find(|e| e.name == "federated")
                .unwrap()
                .width
        };
        let w5 = width_at(5);
        let w20 = width_at(20);
        let ratio = w20 / w5;
        assert!(
            (ratio - 1.0).abs() <= 0.05,
            "seed {seed}: width ratio K20/K5 = {ratio:.4}"
        );
        if seed == 0 {
            println!(
                "PASS criterion 5: K=20 width within 5% of K=5 width (first-seed ratio {ratio:.4})"
            );
        }
    }
}

#[test]
fn criterion_6_non_iid_validity() {
    for case in [PartitionCase::Case2, PartitionCase::Case3] {
        let cfg = ExperimentConfig {
            case,
            trials: 500,
            seed: 77,
            alpha: 0.1,
            ..ExperimentConfig::default()
        };
        let cov = run_coverage(&cfg).unwrap();
        let worst_client = cov
            .client_miss_rates
            .iter()
            .cloned()
            .fold(0.0f64, f64::max);
        assert!(
            cov.federated_coverage >= 0.88,
            "{case:?}: federated coverage {}",
            cov.federated_coverage
        );
        assert!(
            worst_client >= 0.30,
            "{case:?}: no client missed in >=30% of trials (max {worst_client:.3})"
        );
        println!(
            "PASS criterion 6: {case:?} federated coverage {:.3}, worst client miss rate {:.3} \
             over {} trials",
            cov.federated_coverage, worst_client, cov.trials
        );
    }
}

fn read_frame(stream: &mut TcpStream) -> Result<Message, Error> {
    use std::io::Read;
    let mut len = [0u8; 4];
    stream.read_exact(&mut len)?;
    let mut rest = vec![0u8; u32::from_be_bytes(len) as usize];
    stream.read_exact(&mut rest)?;
    let mut frame = len.to_vec();
    frame.extend_from_slice(&rest);
    Ok(transport::decode_frame(&frame).map(|(m, _)| m)?)
}

fn send(stream: &mut TcpStream, msg: &Message) {
    use std::io::Write;
    stream.write_all(&transport::encode_frame(msg)).unwrap();
}

#[test]
fn criterion_7_transport_transparency() {
    for task in [
        TaskKind::Mean,
        TaskKind::Quantile,
        TaskKind::Logistic,
        TaskKind::Linear,
    ] {
        for k in [1usize, 3, 5] {
            let base = ExperimentConfig {
                task,
                size: 600,
                ratios: vec![1; k],
                seed: 21,
                ..ExperimentConfig::default()
            };
            let in_proc = run_experiment(&base).unwrap();
            let mut net_cfg = base.clone();
            net_cfg.mode = RunMode::Networked;
            let networked = run_experiment(&net_cfg).unwrap();
            // The config echo differs only in the mode field.
            assert_eq!(in_proc.entities, networked.entities, "{task}, K={k}");
            assert_eq!(in_proc.true_theta, networked.true_theta);
        }
    }

    // Malformed frame: a flipped payload byte must fail the checksum.
    let mut frame = transport::encode_frame(&Message::GridAnnounce { grid: None });
    frame[6] ^= 0x01;
    assert!(matches!(
        transport::decode_frame(&frame),
        Err(DecodeError::ChecksumMismatch { .. })
    ));

    // Duplicate client id: the second hello with the same id is rejected
    // with a protocol error, and the session times out waiting for a
    // distinct second client.
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let cfg = SessionConfig {
        session_id: "dup-test".into(),
        expected_clients: 2,
        expected_client_ids: Some(vec!["a".into(), "b".into()]),
        alpha: 0.1,
        task: TaskOptions::Mean,
        grid_points: 8,
        timeout: Duration::from_millis(800),
    };
    let coord = std::thread::spawn(move || coordinate_session(&cfg, listener));
    let hello = |id: &str| {
        Message::Hello(Hello {
            session_id: "dup-test".into(),
            client_id: id.into(),
            task_kind: TaskKind::Mean,
            n_labeled: 2,
            n_unlabeled: 2,
            pred_min: 0.0,
            pred_max: 1.0,
        })
    };
    let mut first = TcpStream::connect(addr).unwrap();
    send(&mut first, &hello("a"));
    std::thread::sleep(Duration::from_millis(100));
    let mut dup = TcpStream::connect(addr).unwrap();
    dup.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
    send(&mut dup, &hello("a"));
    match read_frame(&mut dup).unwrap() {
        Message::ProtocolError { reason } => assert!(reason.contains("duplicate"), "{reason}"),
        other => panic!("expected protocol error, got {other:?}"),
    }
    match coord.join().unwrap() {
        Err(Error::SessionTimeout {
            received, missing, ..
        }) => {
            assert_eq!(received, 1);
            assert!(missing.contains('b'), "missing list: {missing:?}");
        }
        other => panic!("expected session timeout, got {other:?}"),
    }

    // Mismatched summary layout: protocol error, then the corrected
    // resend completes the session.
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let cfg = SessionConfig {
        session_id: "layout-test".into(),
        expected_clients: 1,
        expected_client_ids: None,
        alpha: 0.1,
        task: TaskOptions::Mean,
        grid_points: 8,
        timeout: Duration::from_secs(5),
    };
    let coord = std::thread::spawn(move || coordinate_session(&cfg, listener));
    let mut stream = TcpStream::connect(addr).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    send(
        &mut stream,
        &Message::Hello(Hello {
            session_id: "layout-test".into(),
            client_id: "a".into(),
            task_kind: TaskKind::Mean,
            n_labeled: 2,
            n_unlabeled: 3,
            pred_min: 0.0,
            pred_max: 1.0,
        }),
    );
    assert!(matches!(
        read_frame(&mut stream).unwrap(),
        Message::GridAnnounce { grid: None }
    ));
    let summary = |coords: usize| {
        Message::Summary(SummaryMessage {
            protocol_version: transport::PROTOCOL_VERSION,
            session_id: "layout-test".into(),
            client_id: "a".into(),
            task_kind: TaskKind::Mean,
            coord_layout: coords as u32,
            payload: fed_ppi::estimators::LocalSummary::Coords(
                ClientSummary64::new(
                    "a",
                    2,
                    3,
                    vec![
                        fed_ppi::federation::CoordStats {
                            estimate: 1.0,
                            rectifier: 0.0,
                            var_estimate: 0.5,
                            var_rectifier: 0.1,
                        };
                        coords
                    ],
                )
                .unwrap(),
            ),
        })
    };
    send(&mut stream, &summary(3));
    match read_frame(&mut stream).unwrap() {
        Message::ProtocolError { reason } => assert!(reason.contains("layout"), "{reason}"),
        other => panic!("expected layout protocol error, got {other:?}"),
    }
    send(&mut stream, &summary(1));
    match read_frame(&mut stream).unwrap() {
        Message::Result(ConfidenceSet::Interval(iv)) => {
            assert!((iv.midpoint() - 1.0).abs() < 1e-12);
        }
        other => panic!("expected result, got {other:?}"),
    }
    coord.join().unwrap().unwrap();

    println!(
        "PASS criterion 7: networked == in-process for 4 estimators x K in {{1,3,5}}; \
         checksum, duplicate-id and layout errors behave as specified"
    );
}

#[test]
fn criterion_8_cross_module_properties() {
    // Single-client reduction: with K=1 the federated set equals the
    // centralized set exactly for every family.
    for task in [
        TaskKind::Mean,
        TaskKind::Quantile,
        TaskKind::Logistic,
        TaskKind::Linear,
    ] {
        let cfg = ExperimentConfig {
            task,
            size: 400,
            ratios: vec![1],
            seed: 5,
            ..ExperimentConfig::default()
        };
        let report = run_experiment(&cfg).unwrap();
        let fed = report.entities.iter().find(|e| e.name == "federated").unwrap();
        let central = report
            .entities
            .iter()
            .find(|e| e.name == "centralized")
            .unwrap();
        assert_eq!(fed.set, central.set, "{task}: single-client reduction");
    }

    // Deterministic report bytes.
    let cfg = ExperimentConfig {
        size: 300,
        ..ExperimentConfig::default()
    };
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());

    // Codec round-trip on a freshly computed summary.
    let pop = generate(TaskKind::Mean, 50, 0.1, 0.2, 3).unwrap();
    let clients = full_population_split(&pop, 1, 0);
    let (_, summaries) =
        in_process_federated(&clients, &client_ids(1), &TaskOptions::Mean, 0.1).unwrap();
    let msg = Message::Summary(SummaryMessage {
        protocol_version: transport::PROTOCOL_VERSION,
        session_id: "s".into(),
        client_id: "c00".into(),
        task_kind: TaskKind::Mean,
        coord_layout: 1,
        payload: summaries[0].clone(),
    });
    let (back, _) = transport::decode_frame(&transport::encode_frame(&msg)).unwrap();
    assert_eq!(back, msg);

    println!(
        "PASS criterion 8: single-client reductions, deterministic reports and codec \
         round-trips hold"
    );
}
