use std::process::{Command, Output};

use qnetsim_core::scenarios::SCENARIOS;

fn qnetsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qnetsim"))
        .args(args)
        .env_remove("QNETSIM_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_prints_result_json() {
    let out = qnetsim(&["run", "--scenario", "data_qubits", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["name"], "data_qubits");
    assert_eq!(v["seed"], 3);
    assert_eq!(v["success"], true);
    assert_eq!(v["metrics"]["qubits_received"], 5.0);
    assert!(v["transcript"].as_array().is_some_and(|t| !t.is_empty()));
}

#[test]
fn unknown_scenario_lists_valid_names() {
    let out = qnetsim(&["run", "--scenario", "teleport_everything"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for name in SCENARIOS {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn seed_comes_from_the_environment() {
    let run = |seed: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_qnetsim"))
            .args(["run", "--scenario", "qkd"])
            .env("QNETSIM_SEED", seed)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        serde_json::from_slice::<serde_json::Value>(&out.stdout).unwrap()
    };
    let a = run("17");
    assert_eq!(a["seed"], 17);
    assert_eq!(a["metrics"], run("17")["metrics"]);
}

#[test]
fn outputs_are_written_to_files() {
    let dir = tempfile::tempdir().unwrap();
    let out_json = dir.path().join("result.json");
    let record = dir.path().join("packets.log");
    let transcript = dir.path().join("transcript.txt");
    let out = qnetsim(&[
        "run",
        "--scenario",
        "eavesdropping",
        "--seed",
        "1",
        "--out",
        out_json.to_str().unwrap(),
        "--record",
        record.to_str().unwrap(),
        "--transcript",
        transcript.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let saved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out_json).unwrap()).unwrap();
    assert_eq!(saved, serde_json::from_str::<serde_json::Value>(&stdout(&out)).unwrap());
    let lines = std::fs::read_to_string(&transcript).unwrap();
    assert!(lines.lines().all(|l| l.split(" | ").count() == 3), "{lines}");

    let log = qnetsim(&["log", "--input", record.to_str().unwrap()]);
    assert_eq!(log.status.code(), Some(0));
    let text = stdout(&log);
    assert!(text.contains("SEND_CLASSICAL"));
    assert!(text.contains("I'm listening :)"));
}

#[test]
fn graph_subcommand_exports_dot() {
    let dir = tempfile::tempdir().unwrap();
    let topo = dir.path().join("t.cfg");
    std::fs::write(
        &topo,
        "[host]\nid = A\n[host]\nid = B\n[host]\nid = C\n[link]\na = A\nb = B\nkind = classical\n[link]\na = B\nb = C\nkind = quantum\n",
    )
    .unwrap();
    let classical = qnetsim(&["graph", "--topology", topo.to_str().unwrap()]);
    assert_eq!(classical.status.code(), Some(0));
    let dot = stdout(&classical);
    assert!(dot.starts_with("digraph \"classical\""));
    assert!(dot.contains("\"A\" -> \"B\";"));
    assert!(!dot.contains("\"B\" -> \"C\";"));

    let file = dir.path().join("q.dot");
    let quantum = qnetsim(&["graph", "--topology", topo.to_str().unwrap(), "--kind", "quantum", "--out", file.to_str().unwrap()]);
    assert_eq!(quantum.status.code(), Some(0));
    let dot = std::fs::read_to_string(&file).unwrap();
    assert!(dot.contains("\"B\" -> \"C\";"));
    assert!(!dot.contains("\"A\" -> \"B\";"));
}

#[test]
fn bad_topology_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let topo = dir.path().join("bad.cfg");
    std::fs::write(&topo, "[link]\na = A\n").unwrap();
    let out = qnetsim(&["run", "--scenario", "qkd", "--topology", topo.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let missing = qnetsim(&["graph", "--topology", dir.path().join("none").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
    let lacking = dir.path().join("small.cfg");
    std::fs::write(&lacking, "[host]\nid = A\n").unwrap();
    let out = qnetsim(&["run", "--scenario", "qkd", "--topology", lacking.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_log_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("bad.log");
    std::fs::write(&log, [0, 0, 0, 9, 1, 2]).unwrap();
    assert_eq!(qnetsim(&["log", "--input", log.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn help_exits_cleanly() {
    let out = qnetsim(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("run"));
}
