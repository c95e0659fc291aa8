//! Command line front end: model predictions, sweeps, simulations,
//! validation suites and network tools.

mod validate;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ringbody::decomposition::{decomposition_csv_rows, DECOMPOSITION_CSV_HEADER};
use ringbody::harness::{compare_with_model, records_csv, run_experiment, ClockKind, ConfigFile};
use ringbody::perf_model::{
    bandwidth_sweep, efficiency, predict_step, speedup, PredictionRow, RunSpec, PREDICTION_CSV_HEADER,
};
use ringbody::ring::ring_stats_csv;
use ringbody::transport::{
    echo_peer, netbench, relay, sim_pair, ChannelConfig, ChannelListener, TcpChannel,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ringbody", version, about = "TreePM N-body over a ring of sites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Predicted step time breakdown for one configuration.
    Predict(Settings),
    /// Speedup and efficiency over site counts, or efficiency over bandwidths.
    Sweep(SweepArgs),
    /// Run the distributed simulation and write step records.
    Simulate(SimulateArgs),
    /// Run oracle suites; exits non-zero if any check fails.
    Validate(ValidateArgs),
    /// Measure latency and throughput of a channel.
    Netbench(NetbenchArgs),
    /// Forward connections from one address to another.
    Relay(RelayArgs),
}

/// Configuration file plus overrides. Flags win over the file.
#[derive(Args, Clone, Default)]
struct Settings {
    /// `key = value` file with [run], [network] and [site] sections.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override as section.key=value; repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    particles: Option<String>,
    #[arg(long)]
    mesh: Option<String>,
    #[arg(long)]
    theta: Option<String>,
    #[arg(long)]
    processes: Option<String>,
    #[arg(long)]
    sites: Option<String>,
    /// das3, grid, or gbbp:LETTERS.
    #[arg(long)]
    roster: Option<String>,
    #[arg(long)]
    sigma_wan: Option<String>,
    #[arg(long)]
    lambda_wan: Option<String>,
}

impl Settings {
    fn load(&self) -> Result<ConfigFile, String> {
        let mut file = match &self.config {
            Some(p) => ConfigFile::load(p).map_err(|e| e.to_string())?,
            None => ConfigFile::default(),
        };
        let flags = [
            ("run", "particles", &self.particles),
            ("run", "mesh", &self.mesh),
            ("run", "theta", &self.theta),
            ("run", "processes", &self.processes),
            ("run", "sites", &self.sites),
            ("run", "roster", &self.roster),
            ("network", "sigma_wan", &self.sigma_wan),
            ("network", "lambda_wan", &self.lambda_wan),
        ];
        for (section, key, value) in flags {
            if let Some(v) = value {
                file.set(section, key, v).map_err(|e| e.to_string())?;
            }
        }
        for o in &self.set {
            file.apply_override(o).map_err(|e| e.to_string())?;
        }
        Ok(file)
    }

    fn run_spec(&self) -> Result<RunSpec, String> {
        self.load()?.run_spec().map_err(|e| e.to_string())
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    /// Site counts 1..=max; speedup at p processes per site, efficiency at p in total.
    Sites,
    /// Wide-area bandwidths; efficiency on `--sites-at` sites.
    Bandwidth,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(value_enum)]
    kind: SweepKind,
    #[command(flatten)]
    settings: Settings,
    /// Largest site count of a site sweep.
    #[arg(long, default_value_t = 16)]
    max_sites: usize,
    /// Site count of a bandwidth sweep.
    #[arg(long, default_value_t = 8)]
    sites_at: usize,
    /// Comma-separated bandwidths in bytes per second.
    #[arg(long, value_delimiter = ',', default_values_t = [2.5e7, 5e7, 1e8, 2e8, 4e8, 8e8, 1.6e9])]
    sigmas: Vec<f64>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    settings: Settings,
    #[arg(long)]
    steps: Option<String>,
    /// simulated or tcp.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Directory for records.csv, ring_stats.csv, decomposition.csv, model.csv and final.snbk.
    #[arg(long, short, default_value = "ringbody-out")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Suites to run; all when omitted.
    #[arg(long, value_enum, value_delimiter = ',')]
    suite: Vec<validate::Suite>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum NetbenchMode {
    /// Both ends in this process over a simulated link.
    Simulated,
    /// Both ends in this process over loopback TCP.
    Loopback,
    /// Connect to a peer running `netbench --mode listen`.
    Connect,
    /// Answer a measuring peer until it disconnects.
    Listen,
}

#[derive(Args)]
struct NetbenchArgs {
    #[arg(long, value_enum, default_value = "simulated")]
    mode: NetbenchMode,
    /// Peer address for connect, bind address for listen.
    #[arg(long, default_value = "127.0.0.1:7070")]
    addr: String,
    #[command(flatten)]
    settings: Settings,
    /// Simulated round-trip latency, seconds; defaults to the network's lambda_wan.
    #[arg(long)]
    latency: Option<f64>,
    /// Simulated bandwidth, bytes per second; defaults to the network's sigma_wan.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [1024u64, 65536, 1 << 20, 16 << 20])]
    sizes: Vec<u64>,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RelayArgs {
    #[arg(long)]
    listen: String,
    #[arg(long)]
    forward: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Predict(s) => predict(&s),
        Command::Sweep(a) => sweep(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Validate(a) => return validate_cmd(&a),
        Command::Netbench(a) => netbench_cmd(&a),
        Command::Relay(a) => relay_cmd(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), String> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn prediction_row(spec: &RunSpec) -> Result<PredictionRow, String> {
    let s = spec.site_count();
    let per_site = spec.with_layout(spec.sites.clone(), (spec.p_total / s as u64).max(1));
    Ok(PredictionRow {
        n: spec.n_particles,
        m: spec.n_mesh,
        p: spec.p_total,
        s,
        theta: spec.theta,
        breakdown: predict_step(spec).map_err(|e| e.to_string())?,
        speedup: speedup(&per_site, s).map_err(|e| e.to_string())?,
        efficiency: efficiency(spec, s).map_err(|e| e.to_string())?,
    })
}

fn predict(settings: &Settings) -> Result<(), String> {
    let spec = settings.run_spec()?;
    let row = prediction_row(&spec)?;
    if row.breakdown.theta_warning {
        eprintln!("warning: theta {} lies outside the interaction-count fit range", spec.theta);
    }
    println!("{PREDICTION_CSV_HEADER}\n{}", row.to_csv());
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<(), String> {
    let spec = a.settings.run_spec()?;
    let text = match a.kind {
        SweepKind::Sites => {
            // `processes` is read per site for the speedup curve
            let p = spec.p_total;
            let mut s = format!("{PREDICTION_CSV_HEADER}\n");
            for k in 1..=a.max_sites.max(1) {
                let scaled = spec.with_layout(spec.roster(k), p * k as u64);
                let mut row = prediction_row(&scaled)?;
                row.speedup = speedup(&spec, k).map_err(|e| e.to_string())?;
                // undefined when the fixed total does not split evenly over k sites
                row.efficiency = efficiency(&spec, k).unwrap_or(f64::NAN);
                s.push_str(&row.to_csv());
                s.push('\n');
            }
            s
        }
        SweepKind::Bandwidth => {
            let curve = bandwidth_sweep(&spec, a.sites_at, &a.sigmas).map_err(|e| e.to_string())?;
            let mut s = String::from("sigma,E\n");
            for (sigma, e) in curve {
                s.push_str(&format!("{sigma},{e}\n"));
            }
            s
        }
    };
    emit(&a.out, &text)
}

fn simulate(a: &SimulateArgs) -> Result<(), String> {
    let mut file = a.settings.load()?;
    for (key, value) in [("steps", &a.steps), ("backend", &a.backend), ("seed", &a.seed)] {
        if let Some(v) = value {
            file.set("run", key, v).map_err(|e| e.to_string())?;
        }
    }
    let mut cfg = file.experiment().map_err(|e| e.to_string())?;
    std::fs::create_dir_all(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    if cfg.snapshot_every.is_some() && cfg.snapshot_dir.is_none() {
        cfg.snapshot_dir = Some(a.out.join("snapshots"));
    }
    let result = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let write = |name: &str, text: &str| -> Result<(), String> {
        let p = a.out.join(name);
        std::fs::write(&p, text).map_err(|e| format!("{}: {e}", p.display()))
    };
    write("records.csv", &records_csv(&result.records))?;
    write("ring_stats.csv", &ring_stats_csv(&result.ring_stats))?;
    let mut decomposition = format!("{DECOMPOSITION_CSV_HEADER}\n");
    for (step, slabs) in result.slabs.iter().enumerate() {
        for row in decomposition_csv_rows(step as u64, slabs) {
            decomposition.push_str(&row);
            decomposition.push('\n');
        }
    }
    write("decomposition.csv", &decomposition)?;
    if cfg.clock_kind() == ClockKind::Virtual && !result.records.is_empty() {
        let cmp = compare_with_model(&result.records, &cfg.run).map_err(|e| e.to_string())?;
        write("model.csv", &cmp.to_csv())?;
    }
    result
        .snapshot
        .save(&a.out.join("final.snbk"))
        .map_err(|e| e.to_string())?;
    eprintln!(
        "{} steps on {} sites, {} particles; output in {}",
        result.records.len(),
        cfg.site_count(),
        result.snapshot.particles.len(),
        a.out.display()
    );
    Ok(())
}

fn validate_cmd(a: &ValidateArgs) -> ExitCode {
    let suites = if a.suite.is_empty() { validate::Suite::ALL.to_vec() } else { a.suite.clone() };
    let mut failed = 0;
    for suite in suites {
        for check in validate::run(suite) {
            println!("{check}");
            failed += usize::from(!check.pass);
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        eprintln!("{failed} check(s) failed");
        ExitCode::FAILURE
    }
}

fn netbench_cmd(a: &NetbenchArgs) -> Result<(), String> {
    let file = a.settings.load()?;
    let channel = file.channel().map_err(|e| e.to_string())?;
    let report = match a.mode {
        NetbenchMode::Simulated => {
            let net = file.run_spec().map_err(|e| e.to_string())?.network;
            let cfg = ChannelConfig::simulated(a.latency.unwrap_or(net.lambda_wan), a.bandwidth.unwrap_or(net.sigma_wan));
            let (near, far) = sim_pair(&cfg).map_err(|e| e.to_string())?;
            with_echo(move || echo_peer(&far).map(|_| ()), move || netbench(&near, &a.sizes, a.repetitions))?
        }
        NetbenchMode::Loopback => {
            let listener = ChannelListener::bind("127.0.0.1:0", &channel).map_err(|e| e.to_string())?;
            let addr = listener.local_addr();
            let far = move || listener.accept().and_then(|c| echo_peer(&c)).map(|_| ());
            with_echo(far, || {
                let near = TcpChannel::connect(addr, &channel)?;
                netbench(&near, &a.sizes, a.repetitions)
            })?
        }
        NetbenchMode::Connect => {
            let near = TcpChannel::connect(a.addr.as_str(), &channel).map_err(|e| e.to_string())?;
            netbench(&near, &a.sizes, a.repetitions).map_err(|e| e.to_string())?
        }
        NetbenchMode::Listen => {
            let listener = ChannelListener::bind(a.addr.as_str(), &channel).map_err(|e| e.to_string())?;
            eprintln!("listening on {}", listener.local_addr());
            let peer = listener.accept().map_err(|e| e.to_string())?;
            let n = echo_peer(&peer).map_err(|e| e.to_string())?;
            eprintln!("answered {n} messages");
            return Ok(());
        }
    };
    eprintln!("round trip {} s", report.rtt);
    emit(&a.out, &report.to_csv())
}

/// Run `measure` while `echo` answers on the other end. The measuring side
/// drops its channel when done, which ends the echo loop.
fn with_echo<E, M, R>(echo: E, measure: M) -> Result<R, String>
where
    E: FnOnce() -> Result<(), ringbody::transport::TransportError> + Send + 'static,
    M: FnOnce() -> Result<R, ringbody::transport::TransportError>,
{
    let peer = std::thread::spawn(echo);
    let result = measure().map_err(|e| e.to_string());
    // a closed channel is the normal end of the echo loop
    let _ = peer.join();
    result
}

fn relay_cmd(a: &RelayArgs) -> Result<(), String> {
    let handle = relay(a.listen.as_str(), a.forward.as_str()).map_err(|e| e.to_string())?;
    println!("relay {} -> {}", handle.local_addr(), a.forward);
    use std::io::Write;
    let _ = std::io::stdout().flush();
    handle.wait();
    Ok(())
}
