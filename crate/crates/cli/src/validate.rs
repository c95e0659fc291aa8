//! Oracle suites behind `ringbody validate`.

use clap::ValueEnum;
use ringbody::harness::{run_experiment, ExperimentConfig};
use ringbody::nbody::tree::tree_force;
use ringbody::nbody::{direct_force_oracle, ic, integrate_step, DtPolicy, ForceParams, Mesh, OcTree, Solver, ThetaSchedule, Vec3};
use ringbody::perf_model::fixtures::{self, Infrastructure, TableRow};
use ringbody::perf_model::{efficiency, memory_estimate, predict_step, speedup, RunSpec};
use ringbody::ring::Phase;
use ringbody::transport::{echo_peer, netbench, relay, sim_pair, Channel, ChannelConfig, ChannelListener, TcpChannel};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Model,
    Engine,
    Protocol,
    Transport,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Model, Suite::Engine, Suite::Protocol, Suite::Transport];
}

pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn check(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        pass,
        detail: detail.into(),
    }
}

fn failed(name: impl Into<String>, e: impl fmt::Display) -> Check {
    check(name, false, format!("error: {e}"))
}

pub fn run(suite: Suite) -> Vec<Check> {
    match suite {
        Suite::Model => model(),
        Suite::Engine => engine(),
        Suite::Protocol => protocol(),
        Suite::Transport => transport(),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn row_name(r: &TableRow) -> String {
    format!("model/{} N={}^3 M={}^3 p={} {}", r.table, r.n_root, r.m_root, r.p, r.label)
}

fn model() -> Vec<Check> {
    let mut out = Vec::new();
    for r in fixtures::all_rows().filter(|r| !r.legacy) {
        let name = row_name(r);
        let b = match predict_step(&r.spec()) {
            Ok(b) => b,
            Err(e) => {
                out.push(failed(name, e));
                continue;
            }
        };
        if r.site_count() == 1 {
            let pass = rel(b.t_tree, r.t_tree) <= 0.015 && rel(b.t_exec, r.t_exec) <= 0.015 && (b.t_comm() - r.comm_local).abs() <= 0.02;
            out.push(check(
                name,
                pass,
                format!("t_tree {:.3}/{} t_exec {:.3}/{} t_comm {:.3}/{}", b.t_tree, r.t_tree, b.t_exec, r.t_exec, b.t_comm(), r.comm_local),
            ));
        } else {
            let mut pass = rel(b.t_tree, r.t_tree) <= 0.015;
            let mut detail = format!("t_tree {:.3}/{}", b.t_tree, r.t_tree);
            if r.infra == Infrastructure::Das3 {
                pass &= rel(b.total_comm(), r.comm_total) <= 0.10;
                detail.push_str(&format!(" comm {:.3}/{}", b.total_comm(), r.comm_total));
            }
            out.push(check(name, pass, detail));
        }
    }
    out.extend(headlines());
    for (n_root, expected, tol) in [(2048.0f64, 850e9, 0.01), (8192.0, 54.4e12, 0.02)] {
        let (tree, _) = memory_estimate(n_root.powi(3), 0.0);
        out.push(check(
            format!("model/memory N={n_root}^3"),
            rel(tree, expected) <= tol,
            format!("{tree:.4e} bytes"),
        ));
    }
    out
}

/// Bandwidth at which `E(s)` reaches `target`, by bisection in log space.
pub fn bandwidth_threshold(spec: &RunSpec, s: usize, target: f64) -> Option<f64> {
    let e = |sigma: f64| {
        let mut x = spec.clone();
        x.network.sigma_wan = sigma;
        efficiency(&x, s).ok()
    };
    let (mut lo, mut hi) = (1e5f64, 1e13f64);
    if e(lo)? >= target || e(hi)? < target {
        return None;
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if e(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(hi)
}

fn headlines() -> Vec<Check> {
    let n = 2048f64.powi(3);
    let m_small = 256f64.powi(3);
    let m_large = 1024f64.powi(3);
    let mut out = Vec::new();
    let e8 = |spec: &RunSpec, sigma: f64, lambda: Option<f64>| {
        let mut x = spec.clone();
        x.network.sigma_wan = sigma;
        if let Some(l) = lambda {
            x.network.lambda_wan = l;
        }
        efficiency(&x, 8)
    };
    match speedup(&fixtures::global_grid_spec(n, m_small, 128), 16) {
        Ok(s) => out.push(check("model/speedup S(16)", (12.0..=14.0).contains(&s), format!("{s:.3}"))),
        Err(e) => out.push(failed("model/speedup S(16)", e)),
    }
    let wide = fixtures::global_grid_spec(n, m_small, 2048);
    let cases: [(&str, f64, Option<f64>, fn(f64) -> bool); 4] = [
        ("model/E(8) at 100 MB/s", 1e8, None, |e| e >= 0.88),
        ("model/E(8) at 1 GB/s, 30 ms", 1e9, Some(0.03), |e| (0.95..=0.99).contains(&e)),
        ("model/E(8) at 50 MB/s", 5e7, None, |e| e > 0.8),
        ("model/E(8) at 50 MB/s, 30 ms", 5e7, Some(0.03), |e| e > 0.8),
    ];
    for (name, sigma, lambda, ok) in cases {
        match e8(&wide, sigma, lambda) {
            Ok(e) => out.push(check(name, ok(e), format!("{e:.4}"))),
            Err(e) => out.push(failed(name, e)),
        }
    }
    let heavy = fixtures::global_grid_spec(n, m_large, 2048);
    let name = "model/bandwidth for E(8)=0.8, M=1024^3";
    match bandwidth_threshold(&heavy, 8, 0.8) {
        Some(s) => out.push(check(name, (6e8..=8e8).contains(&s), format!("{s:.4e} bytes/s"))),
        None => out.push(check(name, false, "no crossing in range")),
    }
    out
}

fn max_rel(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d: f64 = (0..3).map(|k| (x[k] - y[k]).powi(2)).sum::<f64>().sqrt();
            d / (0..3).map(|k| y[k] * y[k]).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max)
}

fn engine() -> Vec<Check> {
    let mut out = Vec::new();

    let p = ic::plummer(600, 1.0, 1.0, 100.0, 1);
    let params = ForceParams { theta: 0.0, softening: 0.01, ncrit: 64, ..Default::default() };
    let exact = OcTree::build(&p, 8).map(|t| tree_force(&t, &p, &params, None));
    match (exact, direct_force_oracle(&p, 0.01, None)) {
        (Ok(f), Ok(d)) => {
            let e = max_rel(&f.accelerations, &d);
            out.push(check("engine/theta 0 equals direct", e <= 1e-12, format!("max relative error {e:.2e}")));
        }
        (Err(e), _) | (_, Err(e)) => out.push(failed("engine/theta 0 equals direct", e)),
    }

    let p = ic::plummer(4096, 1.0, 1.0, 100.0, 2);
    let params = ForceParams { theta: 0.5, softening: 0.01, ncrit: 64, ..Default::default() };
    match (OcTree::build(&p, 8), direct_force_oracle(&p, 0.01, None)) {
        (Ok(t), Ok(d)) => {
            let f = tree_force(&t, &p, &params, None);
            let mut errs: Vec<f64> = f
                .accelerations
                .iter()
                .zip(&d)
                .map(|(a, b)| max_rel(std::slice::from_ref(a), std::slice::from_ref(b)))
                .collect();
            errs.sort_by(f64::total_cmp);
            let median = errs[errs.len() / 2];
            out.push(check("engine/theta 0.5 median error", median < 0.01, format!("{median:.2e}")));
        }
        (Err(e), _) | (_, Err(e)) => out.push(failed("engine/theta 0.5 median error", e)),
    }

    let (n, l) = (16, 1.0);
    let mut mesh = Mesh::new(n, l);
    let h = mesh.cell_width();
    let two_pi = 2.0 * std::f64::consts::PI;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let idx = mesh.index(i, j, k);
                mesh.density[idx] = (two_pi * (i as f64 + 2.0 * j as f64) * h / l).cos();
            }
        }
    }
    let rho = mesh.density.clone();
    mesh.solve();
    let amp = -2.0 * two_pi / ((two_pi / l).powi(2) * 5.0);
    let worst = mesh.potential.iter().zip(&rho).map(|(p, r)| (p - amp * r).abs()).fold(0.0, f64::max) / amp.abs();
    out.push(check("engine/mesh single mode", worst <= 1e-6, format!("relative error {worst:.2e}")));

    let lattice = ic::lattice(8, 1.0, 1.0, 0.0, 0);
    let params = ForceParams { theta: 0.5, softening: 0.01, ncrit: 64, ..Default::default() };
    let mut solver = Solver::TreePm { params, n_leaf: 8, mesh_n: 16 };
    let name = "engine/lattice null force";
    match ringbody::nbody::ForceSolver::accelerations(&mut solver, &lattice, 0) {
        Ok((a, _)) => {
            let scale = lattice.masses[0] * 64.0;
            let worst = a.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())) / scale;
            out.push(check(name, worst < 1e-6, format!("{worst:.2e} of the pair scale")));
        }
        Err(e) => out.push(failed(name, e)),
    }

    let mut state = ic::plummer(256, 1.0, 1.0, 100.0, 3);
    let params = ForceParams { theta: 0.0, softening: 0.05, ncrit: 64, ..Default::default() };
    let mut solver = Solver::Tree { params, n_leaf: 8 };
    let p0 = state.momentum();
    let mut cached: Option<Vec<Vec3>> = None;
    let steps = 20;
    let mut result = Ok(());
    for step in 0..steps {
        match integrate_step(&state, &mut solver, DtPolicy::Fixed(0.01), cached.as_deref(), step) {
            Ok(o) => {
                state = o.state;
                cached = Some(o.accelerations);
            }
            Err(e) => {
                result = Err(e);
                break;
            }
        }
    }
    let name = "engine/momentum drift";
    match result {
        Ok(()) => {
            let p1 = state.momentum();
            let drift = (0..3).map(|k| (p1[k] - p0[k]).powi(2)).sum::<f64>().sqrt() / steps as f64;
            out.push(check(name, drift < 1e-10, format!("{drift:.2e} per step")));
        }
        Err(e) => out.push(failed(name, e)),
    }
    out
}

fn small_run(s: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.run.sites = fixtures::das3_sites().into_iter().cycle().take(s).collect();
    c.run.p_total = 4 * s as u64;
    c.run.n_particles = 1728.0;
    c.steps = 3;
    c
}

fn protocol() -> Vec<Check> {
    let mut out = Vec::new();
    for s in 1..=4 {
        let name = format!("protocol/{s} sites");
        let cfg = small_run(s);
        let r = match run_experiment(&cfg) {
            Ok(r) => r,
            Err(e) => {
                out.push(failed(name, e));
                continue;
            }
        };
        let want = if s == 1 { 0 } else { 5 * s as u64 + 3 };
        let exchanges = r.records.iter().all(|x| x.wan_exchanges == want);
        let mesh = 4 * s as u64 * cfg.run.n_mesh as u64;
        let mesh_ok = s == 1 || r.records.iter().all(|x| x.phase_bytes(Phase::Mesh) == mesh);
        let ids = r.snapshot.particles.ids.iter().copied().eq(0..cfg.run.n_particles as u64);
        out.push(check(
            name,
            exchanges && mesh_ok && ids,
            format!("exchanges per step {want}: {exchanges}, mesh bytes {mesh}: {mesh_ok}, ids conserved: {ids}"),
        ));
    }
    let name = "protocol/two sites match one";
    let at_zero = |s| {
        let mut c = small_run(s);
        c.theta_schedule = Some(ThetaSchedule::new(vec![(0, 0.0)]));
        run_experiment(&c)
    };
    match (at_zero(1), at_zero(2)) {
        (Ok(a), Ok(b)) => {
            let (pa, pb) = (&a.snapshot.particles, &b.snapshot.particles);
            let gap = pa
                .positions
                .iter()
                .zip(&pb.positions)
                .flat_map(|(x, y)| (0..3).map(move |k| ringbody::nbody::min_image(x[k] - y[k], pa.box_len).abs()))
                .fold(0.0, f64::max)
                / pa.box_len;
            out.push(check(name, pa.ids == pb.ids && gap <= 1e-10, format!("max relative gap {gap:.2e}")));
        }
        (Err(e), _) | (_, Err(e)) => out.push(failed(name, e)),
    }
    out
}

fn pattern(n: usize) -> Vec<u8> {
    (0..n).map(|i| (i * 131 % 251) as u8).collect()
}

fn deliver(a: &dyn Channel, b: &dyn Channel, data: &[u8]) -> Result<bool, ringbody::transport::TransportError> {
    std::thread::scope(|s| {
        let r = s.spawn(|| b.recv_message());
        a.send_message(data)?;
        Ok(r.join().expect("receiver panicked")? == data)
    })
}

fn tcp_pair(cfg: &ChannelConfig) -> Result<(TcpChannel, TcpChannel), ringbody::transport::TransportError> {
    let listener = ChannelListener::bind("127.0.0.1:0", cfg)?;
    let addr = listener.local_addr();
    std::thread::scope(|s| {
        let server = s.spawn(|| listener.accept());
        let client = TcpChannel::connect(addr, cfg)?;
        Ok((client, server.join().expect("accept panicked")?))
    })
}

fn transport() -> Vec<Check> {
    let mut out = Vec::new();
    let sizes = [0usize, 1, 8192, 1 << 20];
    for streams in [1u16, 16] {
        let name = format!("transport/loopback {streams} streams");
        let r = tcp_pair(&ChannelConfig::tcp(streams, 64 * 1024)).and_then(|(a, b)| {
            sizes
                .iter()
                .map(|&n| deliver(&a, &b, &pattern(n)))
                .collect::<Result<Vec<bool>, _>>()
        });
        match r {
            Ok(v) => out.push(check(name, v.iter().all(|&x| x), format!("{} sizes", v.len()))),
            Err(e) => out.push(failed(name, e)),
        }
    }

    let name = "transport/two relay chain";
    let cfg = ChannelConfig::tcp(4, 16 * 1024);
    let r = (|| {
        let listener = ChannelListener::bind("127.0.0.1:0", &cfg)?;
        let far = relay("127.0.0.1:0", listener.local_addr())?;
        let near = relay("127.0.0.1:0", far.local_addr())?;
        let entry = near.local_addr();
        std::thread::scope(|s| {
            let server = s.spawn(|| listener.accept());
            let client = TcpChannel::connect(entry, &cfg)?;
            let server = server.join().expect("accept panicked")?;
            let data = pattern(1 << 20);
            Ok::<_, ringbody::transport::TransportError>(deliver(&client, &server, &data)? && deliver(&server, &client, &data)?)
        })
    })();
    match r {
        Ok(ok) => out.push(check(name, ok, "1 MiB both ways")),
        Err(e) => out.push(failed(name, e)),
    }

    let name = "transport/simulated netbench";
    let (lambda, sigma) = (0.05, 2.5e8);
    let r = sim_pair(&ChannelConfig::simulated(lambda, sigma)).and_then(|(near, far)| {
        let peer = std::thread::spawn(move || echo_peer(&far));
        let report = netbench(&near, &[1 << 16, 1 << 20], 2);
        drop(near);
        let _ = peer.join();
        report
    });
    match r {
        Ok(rep) => {
            let ok = rel(rep.rtt, lambda) <= 1e-6 && rep.rows.iter().all(|row| rel(row.bytes_per_second, sigma) <= 1e-6);
            out.push(check(name, ok, format!("rtt {} s", rep.rtt)));
        }
        Err(e) => out.push(failed(name, e)),
    }
    out
}
