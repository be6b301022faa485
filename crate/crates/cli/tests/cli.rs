//! End-to-end checks of the command-line interface: file outputs, exit
//! codes, determinism, and the remote-agent protocol path.

use std::io::{Read, Write};
use std::path::Path;
use std::process::Command;

fn echelon() -> Command {
    Command::new(env!("CARGO_BIN_EXE_echelon"))
}

const SCENARIO: &str = r#"
[chain]
tiers = 4

[demand]
regime = "fixed"
rate = 4.0

[policy]
kind = "order_up_to"

[policy.shock]
family = "gaussian"
sigma = 1.0

[run]
horizon = 20
seed = 7
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn simulate_writes_trajectory_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SCENARIO);
    let out = dir.path().join("sim");
    let status = echelon()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 20);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn invalid_smoothing_exits_two_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SCENARIO.replace(
        "[demand]",
        "[chain.defaults]\norder_delay = 1\nship_delay = 2\nsmoothing = 1.5\ntarget_multiplier = 4.0\nholding_rate = 0.5\nbacklog_rate = 1.0\n\n[demand]",
    );
    let config = write_config(dir.path(), &bad);
    let out = dir.path().join("sim");
    let output = echelon()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("smoothing"), "stderr: {stderr}");
}

#[test]
fn repeated_invocation_with_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SCENARIO);
    for name in ["a", "b"] {
        let status = echelon()
            .args(["ensemble", "--runs", "6", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(dir.path().join(name))
            .status()
            .unwrap();
        assert!(status.success());
    }
    for file in ["ensemble.csv", "sigma.csv", "metrics.csv", "boxplot.csv", "manifest.json"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between reruns");
    }
}

#[test]
fn ensemble_with_one_run_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SCENARIO);
    let output = echelon()
        .args(["ensemble", "--runs", "1", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn decompose_single_path_marks_demand_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SCENARIO);
    let out = dir.path().join("dec");
    let output = echelon()
        .args(["decompose", "--outer", "1", "--inner", "8", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("demand component unavailable"), "stdout: {stdout}");
    let csv = std::fs::read_to_string(out.join("decomposition.csv")).unwrap();
    let second_line = csv.lines().nth(1).unwrap();
    // demand columns stay empty
    assert!(second_line.contains(",,"), "line: {second_line}");
}

#[test]
fn analyze_matches_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("an");
    let output = echelon()
        .args(["analyze", "--theta", "1", "--lambda", "1", "--tiers", "3"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let csv = std::fs::read_to_string(out.join("gains.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert!(rows[1].starts_with("1,5,5,2,"));
    assert!(rows[2].starts_with("2,5,25,12,"));
    assert!(rows[3].starts_with("3,5,125,62,"));
}

#[test]
fn eval_runs_the_step_pattern_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eval");
    let status = echelon()
        .args(["eval", "--runs", "4", "--horizon", "8", "--seed", "5"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["runs"], 4);
    let demand: Vec<f64> = report["demand_path"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(&demand[..5], &[4.0, 4.0, 4.0, 4.0, 8.0]);
}

#[test]
fn train_then_eval_round_trips_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let train_config = dir.path().join("train.toml");
    std::fs::write(
        &train_config,
        r#"
group_size = 4
steps = 3
max_order = 8
seed = 2

[reward]
scope = "agent"
attribution = "reward_to_go"

[env]
horizon = 6
"#,
    )
    .unwrap();
    let train_out = dir.path().join("train");
    let status = echelon()
        .args(["train", "--config"])
        .arg(&train_config)
        .arg("--out")
        .arg(&train_out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(train_out.join("checkpoint.json").exists());
    let log = std::fs::read_to_string(train_out.join("training_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3);

    let eval_out = dir.path().join("eval");
    let status = echelon()
        .args(["eval", "--runs", "3", "--horizon", "6", "--checkpoint"])
        .arg(train_out.join("checkpoint.json"))
        .arg("--out")
        .arg(&eval_out)
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn report_summarizes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SCENARIO);
    let out = dir.path().join("sim");
    assert!(echelon()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let output = echelon().args(["report", "--dir"]).arg(&out).output().unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("config hash"));
    assert!(stdout.contains("simulate"));
}

fn remote_scenario(endpoint: &str, fallback: &str) -> String {
    format!(
        r#"
[chain]
tiers = 1

[demand]
regime = "fixed"
rate = 4.0

[policy]
kind = "remote"
endpoint = "{endpoint}"
timeout_ms = 300
retries = 0

[policy.fallback]
kind = "{fallback}"

[run]
horizon = 2
seed = 1
"#
    )
}

#[test]
fn remote_failure_budget_exit_code_is_four() {
    let dir = tempfile::tempdir().unwrap();
    // unroutable endpoint, no fallback: the run must fail with code 4
    let config_path = dir.path().join("remote.toml");
    std::fs::write(&config_path, remote_scenario("http://127.0.0.1:9/order", "fail")).unwrap();
    let output = echelon()
        .args(["simulate", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(4), "stderr: {}", String::from_utf8_lossy(&output.stderr));
}

#[test]
fn remote_agent_drives_a_simulation_over_http() {
    // scripted order service: always replies with order 6
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = std::thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = match stream {
                Ok(s) => s,
                Err(_) => break,
            };
            let mut buf = [0u8; 16384];
            let mut total = Vec::new();
            loop {
                let n = stream.read(&mut buf).unwrap_or(0);
                if n == 0 {
                    break;
                }
                total.extend_from_slice(&buf[..n]);
                let text = String::from_utf8_lossy(&total);
                if let Some(split) = text.find("\r\n\r\n") {
                    let content_len = text[..split]
                        .lines()
                        .find_map(|l| {
                            l.to_ascii_lowercase()
                                .strip_prefix("content-length:")
                                .map(str::trim)
                                .map(String::from)
                        })
                        .and_then(|v| v.parse::<usize>().ok())
                        .unwrap_or(0);
                    if total.len() >= split + 4 + content_len {
                        break;
                    }
                }
            }
            if total.is_empty() {
                break;
            }
            let prompt = String::from_utf8_lossy(&total);
            assert!(prompt.contains("order_quantity"), "prompt missing protocol text");
            let body = "{\"order_quantity\": 6}";
            let response = format!(
                "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });

    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("remote.toml");
    std::fs::write(
        &config_path,
        remote_scenario("http://placeholder/order", "fail"),
    )
    .unwrap();
    let out = dir.path().join("out");
    let output = echelon()
        .env("ECHELON_REMOTE_ENDPOINT", format!("http://{addr}/order"))
        .args(["simulate", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    // both periods ordered the scripted quantity
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[2], "6");
    }
    drop(output);
    // wake the accept loop so the server thread can exit
    let _ = std::net::TcpStream::connect(addr);
    let _ = server.join();
}
