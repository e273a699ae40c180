//! End-to-end tests: CLI binary, on-disk formats, and multi-process
//! federated sessions.

use std::net::{TcpListener, TcpStream};
use std::process::Command;
use std::time::Duration;

use fed_ppi::datagen::{
    generate, partition, read_population, write_client_dataset, PartitionCase, PartitionSpec,
    TaskKind,
};
use fed_ppi::estimators::TaskOptions;
use fed_ppi::transport::{coordinate_session, run_client, SessionConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fed-ppi"))
}

#[test]
fn cli_generate_writes_readable_population() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pop.txt");
    let out = bin()
        .args([
            "generate",
            "--task",
            "linear",
            "--size",
            "250",
            "--seed",
            "7",
            "--output",
        ])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pop = read_population(&path).unwrap();
    assert_eq!(pop.task_kind, TaskKind::Linear);
    assert_eq!(pop.len(), 250);
    assert_eq!(pop.true_theta.len(), 2);
}

#[test]
fn cli_run_with_config_file_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("report");
    let cfg_path = dir.path().join("exp.cfg");
    std::fs::write(
        &cfg_path,
        format!(
            "# experiment config\n\
             config_version=1\n\
             task=quantile\n\
             size=800\n\
             ratios=2,1,1\n\
             lambda=0.2\n\
             seed=3\n\
             output={}\n",
            stem.display()
        ),
    )
    .unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(stem.with_extension("csv")).unwrap();
    assert!(csv.contains("entity,lo,hi,width,covers"));
    assert!(csv.contains("federated,"));
    assert!(csv.contains("centralized,"));
    assert!(csv.contains("# task_kind=quantile"));
    let jsonl = std::fs::read_to_string(stem.with_extension("jsonl")).unwrap();
    assert!(jsonl.lines().count() >= 5, "meta line plus one per entity");

    // Flag overrides beat the file: a different seed changes the report.
    let out2 = bin()
        .args(["run", "--config"])
        .arg(&cfg_path)
        .args(["--seed", "4"])
        .output()
        .unwrap();
    assert!(out2.status.success());
    let csv2 = std::fs::read_to_string(stem.with_extension("csv")).unwrap();
    assert_ne!(csv, csv2);
}

#[test]
fn cli_rejects_bad_configs_with_exit_code_2() {
    let dir = tempfile::tempdir().unwrap();

    // Missing config_version.
    let no_version = dir.path().join("no_version.cfg");
    std::fs::write(&no_version, "task=mean\n").unwrap();
    let out = bin().args(["run", "--config"]).arg(&no_version).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    // Unknown key.
    let bad_key = dir.path().join("bad_key.cfg");
    std::fs::write(&bad_key, "config_version=1\nnot_a_key=3\n").unwrap();
    let out = bin().args(["run", "--config"]).arg(&bad_key).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Bad value on the command line.
    let out = bin().args(["run", "--lambda", "1.5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn cli_coverage_requires_enough_trials() {
    let out = bin().args(["coverage", "--trials", "10"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("100"), "{err}");
}

#[test]
fn cli_serve_and_clients_complete_a_session() {
    let dir = tempfile::tempdir().unwrap();
    let pop = generate(TaskKind::Mean, 400, 0.0, 0.1, 9).unwrap();
    let clients = partition(
        &pop,
        &PartitionSpec {
            case: PartitionCase::Case1,
            ratios: vec![1, 1],
            lambda: 0.2,
            seed: 1,
        },
    )
    .unwrap();
    let mut paths = Vec::new();
    for (i, ds) in clients.iter().enumerate() {
        let path = dir.path().join(format!("client{i}.txt"));
        write_client_dataset(ds, &path).unwrap();
        paths.push(path);
    }

    // Grab a free port, then hand it to the server.
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let addr = format!("127.0.0.1:{port}");
    let result_path = dir.path().join("result.json");
    let mut server = bin()
        .args(["serve", "--addr", &addr, "--clients", "2", "--timeout-secs", "30"])
        .arg("--output")
        .arg(&result_path)
        .spawn()
        .unwrap();
    // Wait for the listener to come up.
    for _ in 0..200 {
        if TcpStream::connect(&addr).is_ok() {
            break;
        }
        std::thread::sleep(Duration::from_millis(25));
    }

    let workers: Vec<_> = paths
        .iter()
        .enumerate()
        .map(|(i, path)| {
            bin()
                .args(["client", "--addr", &addr, "--client-id", &format!("c{i:02}")])
                .arg("--data")
                .arg(path)
                .spawn()
                .unwrap()
        })
        .collect();
    for mut w in workers {
        assert!(w.wait().unwrap().success());
    }
    assert!(server.wait().unwrap().success());
    let json = std::fs::read_to_string(&result_path).unwrap();
    let set: fed_ppi::ConfidenceSet64 = serde_json::from_str(json.trim()).unwrap();
    match set {
        fed_ppi::federation::ConfidenceSet::Interval(iv) => {
            assert!(iv.contains(pop.true_theta[0]) || iv.width() > 0.0);
            assert!(iv.width() < 1.0);
        }
        other => panic!("expected interval, got {other:?}"),
    }
}

#[test]
fn session_result_is_independent_of_arrival_order() {
    let pop = generate(TaskKind::Quantile, 300, 0.0, 0.2, 17).unwrap();
    let clients = partition(
        &pop,
        &PartitionSpec {
            case: PartitionCase::Case1,
            ratios: vec![1, 1, 1],
            lambda: 0.3,
            seed: 2,
        },
    )
    .unwrap();
    let task = TaskOptions::Quantile {
        q: 0.5,
        grid: Vec::new(),
    };
    let run_order = |order: Vec<usize>| {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let cfg = SessionConfig {
            session_id: "order".into(),
            expected_clients: 3,
            expected_client_ids: None,
            alpha: 0.1,
            task: task.clone(),
            grid_points: 64,
            timeout: Duration::from_secs(30),
        };
        let coord = std::thread::spawn(move || coordinate_session(&cfg, listener));
        let mut workers = Vec::new();
        for idx in order {
            let addr = addr.clone();
            let ds = clients[idx].clone();
            let task = task.clone();
            workers.push(std::thread::spawn(move || {
                run_client(
                    &addr,
                    "order",
                    &format!("c{idx:02}"),
                    &ds,
                    &task,
                    Duration::from_secs(30),
                )
            }));
            // Stagger connections so arrival order is the spawn order.
            std::thread::sleep(Duration::from_millis(50));
        }
        for w in workers {
            w.join().unwrap().unwrap();
        }
        coord.join().unwrap().unwrap()
    };
    let forward = run_order(vec![0, 1, 2]);
    let backward = run_order(vec![2, 1, 0]);
    assert_eq!(forward.confidence, backward.confidence);
    assert_eq!(forward.negotiated_grid, backward.negotiated_grid);
}
