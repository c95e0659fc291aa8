use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Command, Output, Stdio};

fn ringbody(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ringbody")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn predict_prints_one_row() {
    let o = ringbody(&["predict", "--particles", "16777216", "--mesh", "2097152", "--theta", "0.3", "--processes", "60"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "N,M,p,s,theta,t_tree,t_pm,t_l,t_b,w_l,w_b,t_exec,S,E");
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(row.len(), 14);
    assert!((row[5] - 11.79).abs() / 11.79 < 0.015);
    assert_eq!((row[12], row[13]), (1.0, 1.0));
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("m.cfg");
    std::fs::write(&cfg, "[run]\nparticles = 16777216\nmesh = 2097152\ntheta = 0.5\nprocesses = 60\n").unwrap();
    let path = cfg.to_str().unwrap();
    let from_file = stdout(&ringbody(&["predict", "-c", path]));
    assert!(from_file.lines().nth(1).unwrap().contains(",0.5,"));
    let o = ringbody(&["predict", "-c", path, "--theta", "0.3", "--set", "run.processes=120"]);
    let row = stdout(&o);
    let cols: Vec<&str> = row.lines().nth(1).unwrap().split(',').collect();
    assert_eq!((cols[2], cols[4]), ("120", "0.3"));
}

#[test]
fn bad_keys_fail() {
    let o = ringbody(&["predict", "--set", "run.nonsense=1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nonsense"));
}

#[test]
fn bandwidth_sweep_is_monotone() {
    let o = ringbody(&[
        "sweep", "bandwidth", "--roster", "grid", "--particles", "8589934592", "--mesh", "16777216",
        "--processes", "2048", "--sigmas", "2.5e7,5e7,1e8,4e8",
    ]);
    assert!(o.status.success());
    let e: Vec<f64> = stdout(&o).lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(e.len(), 4);
    assert!(e.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn validate_exit_code_follows_checks() {
    let ok = ringbody(&["validate", "--suite", "transport"]);
    assert!(ok.status.success(), "{}", stdout(&ok));
    assert!(stdout(&ok).lines().all(|l| l.starts_with("PASS ")));
    // some tabulated rows disagree with the model as written
    let model = ringbody(&["validate", "--suite", "model"]);
    assert!(!model.status.success());
    assert!(stdout(&model).lines().any(|l| l.starts_with("FAIL ")));
}

#[test]
fn simulate_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = ringbody(&[
        "simulate", "--sites", "2", "--particles", "1728", "--steps", "3",
        "--set", "run.snapshot_every=2", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let records = std::fs::read_to_string(out.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 4);
    assert!(records.lines().skip(1).all(|l| l.split(',').nth(4) == Some("13")));
    let ring = std::fs::read_to_string(out.join("ring_stats.csv")).unwrap();
    assert!(ring.starts_with("step,phase,bytes,seconds\n"));
    let dec = std::fs::read_to_string(out.join("decomposition.csv")).unwrap();
    assert!(dec.starts_with("step,site,lo,hi,count,t_calc\n"));
    assert_eq!(dec.lines().count(), 1 + 3 * 2);
    assert!(out.join("model.csv").exists());
    assert!(out.join("snapshots/snap_00002.snbk").exists());
    let snap = std::fs::read(out.join("final.snbk")).unwrap();
    assert_eq!(&snap[..4], b"SNBK");
}

#[test]
fn simulated_netbench_reports_the_link() {
    let o = ringbody(&["netbench", "--mode", "simulated", "--latency", "0.1", "--bandwidth", "1e8", "--sizes", "1024,1048576"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "size,seconds,bytes_per_second");
    for l in lines {
        let bps: f64 = l.split(',').nth(2).unwrap().parse().unwrap();
        assert!((bps - 1e8).abs() / 1e8 < 1e-6);
    }
    let err = String::from_utf8_lossy(&o.stderr);
    let rtt: f64 = err.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!((rtt - 0.1).abs() < 1e-6 * 0.1);
}

#[test]
fn relay_forwards_bytes() {
    let target = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let forward = target.local_addr().unwrap().to_string();
    let mut child = Command::new(env!("CARGO_BIN_EXE_ringbody"))
        .args(["relay", "--listen", "127.0.0.1:0", "--forward", &forward])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
    let entry = line.split_whitespace().nth(1).unwrap().to_string();
    let mut client = std::net::TcpStream::connect(&entry).unwrap();
    let (mut server, _) = target.accept().unwrap();
    client.write_all(b"ping through the relay").unwrap();
    client.shutdown(std::net::Shutdown::Write).unwrap();
    let mut got = Vec::new();
    server.read_to_end(&mut got).unwrap();
    assert_eq!(got, b"ping through the relay");
    child.kill().unwrap();
    child.wait().unwrap();
}
