use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::process::{Command, Output, Stdio};
use std::sync::mpsc;
use std::time::Duration;

fn qbridge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qbridge"))
        .args(args)
        .output()
        .expect("run qbridge")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn percent_of(out: &str, emoticon: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{emoticon}\t")))
        .and_then(|rest| rest.trim().trim_end_matches('%').parse().ok())
        .unwrap_or_else(|| panic!("no line for {emoticon} in:\n{out}"))
}

#[test]
fn one_character_emoticon_is_a_usage_error() {
    // no gateway is listening on this port; validation must fail first
    let o = qbridge(&["submit", ";", ";(", "--gateway-port", "1"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("emoticon A"));
    assert!(!stdout(&o).contains("submitted"));
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(qbridge(&["run-all", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(qbridge(&["submit", ";)"]).status.code(), Some(1));
    assert_eq!(qbridge(&["submit", ";)", ";(", "--backend", "QPU"]).status.code(), Some(1));
    assert_eq!(qbridge(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_problems_exit_2() {
    let o = qbridge(&["run-all", "--config", "/nonexistent/functions.json"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = qbridge(&["run-all", "--gateway-port", "9100", "--functions-port", "9100"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("distinct"));

    let dir = tempfile::tempdir().unwrap();
    let fleet = dir.path().join("fleet.json");
    std::fs::write(&fleet, r#"{"devices": []}"#).unwrap();
    let o = qbridge(&["run-all", "--fleet", fleet.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn port_in_use_is_a_runtime_error() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let o = qbridge(&["run-all", "--gateway-port", &port, "--functions-port", "0", "--provider-port", "0"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("gateway"));
}

#[test]
fn unreachable_gateway_is_a_runtime_error() {
    let free = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = free.local_addr().unwrap().port().to_string();
    drop(free);
    let o = qbridge(&["submit", ";)", ";(", "--gateway-port", &port]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn submit_in_process_prints_two_balanced_emoticons() {
    let o = qbridge(&["submit", ";)", ";(", "--in-process", "--shots", "1024"]);
    let out = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{out}\n{}", stderr(&o));
    assert!(out.contains("status Done on qasm_simulator"), "{out}");
    // sd of the fraction is 0.5/sqrt(1024) = 1.56 points; allow 6 sd
    for e in [";)", ";("] {
        let p = percent_of(&out, e);
        assert!((p - 50.0).abs() < 9.4, "{e}: {p}");
    }
}

#[test]
fn identical_emoticons_give_one_line_at_100_percent() {
    let o = qbridge(&["submit", ";)", ";)", "--in-process", "--shots", "256"]);
    let out = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{out}\n{}", stderr(&o));
    assert_eq!(percent_of(&out, ";)"), 100.0);
    assert_eq!(out.lines().filter(|l| l.contains('%')).count(), 1);
}

#[test]
fn loadgen_in_process_passes() {
    let o = qbridge(&["loadgen", "--in-process", "--clients", "3", "--jobs-per-client", "2", "--shots", "128"]);
    let out = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{out}\n{}", stderr(&o));
    assert!(out.contains("results 6/6"), "{out}");
    assert!(out.contains("segregation: PASS"));
    assert!(out.contains("latency ms: p50"));
}

#[test]
fn single_client_single_job_loadgen_passes() {
    let o = qbridge(&["loadgen", "--in-process", "--clients", "1", "--jobs-per-client", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("overall: PASS"));
}

#[test]
fn run_all_prints_readiness_and_serves() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_qbridge"))
        .args(["run-all", "--gateway-port", "0", "--functions-port", "0", "--provider-port", "0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let out = child.stdout.take().unwrap();
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(out).lines().map_while(Result::ok) {
            let _ = tx.send(line);
        }
    });
    let line = rx.recv_timeout(Duration::from_secs(15));
    let _ = child.kill();
    let _ = child.wait();
    let line = line.expect("readiness line");
    assert!(line.starts_with("qbridge ready in "), "{line}");
    let gateway = line
        .split_whitespace()
        .skip_while(|w| *w != "gateway")
        .nth(1)
        .unwrap();
    assert!(gateway.starts_with("http://127.0.0.1:"), "{line}");
}
