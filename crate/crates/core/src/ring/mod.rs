//! Per-step communication between sites arranged in a ring.
//!
//! Every step runs five ring gathers of `s - 1` hops (mesh, loads, time
//! step, particle counts, samples) and two neighbour phases (local
//! essential trees and migration). A neighbour phase sends a length message
//! and then the payload, first to the right and then to the left, so it
//! costs four wide-area exchanges. A full step therefore costs
//! `5 (s - 1) + 8 = 5 s + 3` exchanges for `s >= 2`.

use crate::decomposition::SampleSet;
use crate::nbody::{ParticleSet, QuantizedGrid};
use crate::perf_model::wan_exchange_count;
use crate::transport::{sim_pair, Channel, ChannelConfig, ChannelListener, TcpChannel, TransportError};
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Mesh,
    Loads,
    Dt,
    Counts,
    Samples,
    Let,
    Migration,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::Mesh,
        Phase::Loads,
        Phase::Dt,
        Phase::Counts,
        Phase::Samples,
        Phase::Let,
        Phase::Migration,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Phase::Mesh => "mesh",
            Phase::Loads => "loads",
            Phase::Dt => "dt",
            Phase::Counts => "counts",
            Phase::Samples => "samples",
            Phase::Let => "let",
            Phase::Migration => "migration",
        }
    }

    pub fn is_gather(&self) -> bool {
        !matches!(self, Phase::Let | Phase::Migration)
    }
}

#[derive(Debug, Error)]
pub enum RingError {
    #[error("{} phase: {source}", phase.name())]
    Transport { phase: Phase, source: TransportError },
    #[error("{} phase: {msg}", phase.name())]
    Protocol { phase: Phase, msg: String },
}

fn tag(phase: Phase) -> impl Fn(TransportError) -> RingError {
    move |source| RingError::Transport { phase, source }
}

fn protocol(phase: Phase, msg: impl Into<String>) -> RingError {
    RingError::Protocol { phase, msg: msg.into() }
}

/// Number of wide-area exchanges one step needs on `s` sites.
pub fn plan_step_exchanges(s: usize) -> u64 {
    wan_exchange_count(s)
}

/// Wide-area exchanges charged for one neighbour phase.
pub const NEIGHBOUR_PHASE_EXCHANGES: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseStat {
    pub phase: Phase,
    /// Gathers count the full gathered volume; neighbour phases count bytes received.
    pub bytes: u64,
    /// Wall-clock duration.
    pub seconds: f64,
    /// Virtual wide-area time charged by the clock.
    pub virtual_seconds: f64,
    /// Exchanges charged under the step accounting.
    pub wan_exchanges: u64,
    /// Paired exchanges actually performed.
    pub logical_exchanges: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExchangeStats {
    pub step: u64,
    pub phases: Vec<PhaseStat>,
}

impl ExchangeStats {
    pub fn new(step: u64) -> Self {
        Self { step, phases: Vec::new() }
    }

    pub fn wan_exchanges(&self) -> u64 {
        self.phases.iter().map(|p| p.wan_exchanges).sum()
    }

    pub fn bytes(&self) -> u64 {
        self.phases.iter().map(|p| p.bytes).sum()
    }

    pub fn phase(&self, phase: Phase) -> Option<&PhaseStat> {
        self.phases.iter().find(|p| p.phase == phase)
    }

    pub fn virtual_latency(&self, lambda: f64) -> f64 {
        self.wan_exchanges() as f64 * lambda
    }

    pub fn virtual_seconds(&self) -> f64 {
        self.phases.iter().map(|p| p.virtual_seconds).sum()
    }

    pub fn csv_rows(&self) -> Vec<String> {
        self.phases
            .iter()
            .map(|p| format!("{},{},{},{}", self.step, p.phase.name(), p.bytes, p.seconds))
            .collect()
    }
}

pub const RING_STATS_CSV_HEADER: &str = "step,phase,bytes,seconds";

/// Virtual wide-area time: `λ` per exchange plus bytes over the effective bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WanClock {
    pub lambda: f64,
    pub sigma_eff: f64,
}

impl WanClock {
    pub fn charge(&self, exchanges: u64, bytes: u64) -> f64 {
        exchanges as f64 * self.lambda + bytes as f64 / self.sigma_eff
    }
}

/// One site's view of the ring.
#[derive(Clone)]
pub struct SiteEndpoint {
    pub site: usize,
    pub s: usize,
    /// Link to site `site - 1`; with two sites both links are the same channel.
    pub left: Option<Arc<dyn Channel>>,
    pub right: Option<Arc<dyn Channel>>,
    pub clock: WanClock,
}

impl std::fmt::Debug for SiteEndpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SiteEndpoint")
            .field("site", &self.site)
            .field("s", &self.s)
            .finish()
    }
}

fn assemble(links: Vec<Arc<dyn Channel>>, far: Vec<Arc<dyn Channel>>, s: usize, clock: WanClock) -> Vec<SiteEndpoint> {
    // link i joins site i (its right end) and site i+1 (its left end)
    (0..s)
        .map(|i| {
            let (left, right) = match s {
                1 => (None, None),
                2 => {
                    let c = if i == 0 { links[0].clone() } else { far[0].clone() };
                    (Some(c.clone()), Some(c))
                }
                _ => (Some(far[(i + s - 1) % s].clone()), Some(links[i].clone())),
            };
            SiteEndpoint { site: i, s, left, right, clock }
        })
        .collect()
}

fn link_count(s: usize) -> usize {
    match s {
        1 => 0,
        2 => 1,
        _ => s,
    }
}

/// Ring of `s` sites over simulated links.
pub fn ring_sim(s: usize, config: &ChannelConfig, clock: WanClock) -> Result<Vec<SiteEndpoint>, TransportError> {
    let mut near: Vec<Arc<dyn Channel>> = Vec::new();
    let mut far: Vec<Arc<dyn Channel>> = Vec::new();
    for _ in 0..link_count(s) {
        let (a, b) = sim_pair(config)?;
        near.push(Arc::new(a));
        far.push(Arc::new(b));
    }
    Ok(assemble(near, far, s, clock))
}

/// Ring of `s` sites over loopback TCP.
pub fn ring_tcp(s: usize, config: &ChannelConfig, clock: WanClock) -> Result<Vec<SiteEndpoint>, TransportError> {
    let mut near: Vec<Arc<dyn Channel>> = Vec::new();
    let mut far: Vec<Arc<dyn Channel>> = Vec::new();
    for _ in 0..link_count(s) {
        let listener = ChannelListener::bind("127.0.0.1:0", config)?;
        let addr = listener.local_addr();
        let cfg = config.clone();
        let client = std::thread::spawn(move || TcpChannel::connect(addr, &cfg));
        let server = listener.accept()?;
        let client = client.join().expect("connect thread panicked")?;
        near.push(Arc::new(client));
        far.push(Arc::new(server));
    }
    Ok(assemble(near, far, s, clock))
}

/// Send on one channel while receiving on another.
fn send_recv(to: &dyn Channel, payload: &[u8], from: &dyn Channel) -> Result<Vec<u8>, TransportError> {
    std::thread::scope(|scope| {
        let sender = scope.spawn(|| to.send_message(payload));
        let got = from.recv_message();
        let sent = sender.join().expect("sender panicked");
        sent?;
        got
    })
}

impl SiteEndpoint {
    /// Ring allgather: returns every site's blob indexed by site.
    pub fn allgather(&self, phase: Phase, mine: Vec<u8>, stats: &mut ExchangeStats) -> Result<Vec<Vec<u8>>, RingError> {
        let t0 = Instant::now();
        let s = self.s;
        let mut blobs: Vec<Option<Vec<u8>>> = vec![None; s];
        blobs[self.site] = Some(mine.clone());
        let mut carry = mine;
        if s > 1 {
            let (left, right) = (self.left.as_deref().unwrap(), self.right.as_deref().unwrap());
            for hop in 1..s {
                let got = send_recv(right, &carry, left).map_err(tag(phase))?;
                let origin = (self.site + s - hop) % s;
                blobs[origin] = Some(got.clone());
                carry = got;
            }
        }
        let blobs: Vec<Vec<u8>> = blobs.into_iter().map(|b| b.expect("every hop delivers")).collect();
        let bytes: u64 = blobs.iter().map(|b| b.len() as u64).sum();
        let hops = (s - 1) as u64;
        stats.phases.push(PhaseStat {
            phase,
            bytes,
            seconds: t0.elapsed().as_secs_f64(),
            virtual_seconds: if s > 1 { self.clock.charge(hops, bytes) } else { 0.0 },
            wan_exchanges: hops,
            logical_exchanges: hops,
        });
        Ok(blobs)
    }

    /// Exchange with both neighbours: `for_left` goes to site `i - 1` and
    /// `for_right` to site `i + 1`. With two sites the single neighbour gets
    /// `for_right` in one paired exchange and `for_left` is ignored.
    pub fn neighbour_exchange(
        &self,
        phase: Phase,
        for_left: &[u8],
        for_right: &[u8],
        stats: &mut ExchangeStats,
    ) -> Result<(Vec<u8>, Vec<u8>), RingError> {
        let t0 = Instant::now();
        let (from_left, from_right, logical) = match self.s {
            1 => (Vec::new(), Vec::new(), 0),
            2 => {
                let link = self.right.as_deref().unwrap();
                (self.framed(phase, link, for_right, link)?, Vec::new(), 1)
            }
            _ => {
                let (left, right) = (self.left.as_deref().unwrap(), self.right.as_deref().unwrap());
                let a = self.framed(phase, right, for_right, left)?;
                let b = self.framed(phase, left, for_left, right)?;
                (a, b, 2)
            }
        };
        let bytes = (from_left.len() + from_right.len()) as u64;
        let charged = if self.s > 1 { NEIGHBOUR_PHASE_EXCHANGES } else { 0 };
        stats.phases.push(PhaseStat {
            phase,
            bytes,
            seconds: t0.elapsed().as_secs_f64(),
            virtual_seconds: if self.s > 1 { self.clock.charge(charged, bytes) } else { 0.0 },
            wan_exchanges: charged,
            logical_exchanges: logical,
        });
        Ok((from_left, from_right))
    }

    /// Length message, then payload; the received payload must match its announced length.
    fn framed(&self, phase: Phase, to: &dyn Channel, payload: &[u8], from: &dyn Channel) -> Result<Vec<u8>, RingError> {
        let len = send_recv(to, &(payload.len() as u64).to_le_bytes(), from).map_err(tag(phase))?;
        let want = u64::from_le_bytes(
            len.as_slice()
                .try_into()
                .map_err(|_| protocol(phase, format!("length message of {} bytes", len.len())))?,
        );
        let got = send_recv(to, payload, from).map_err(tag(phase))?;
        if got.len() as u64 != want {
            return Err(protocol(phase, format!("announced {want} bytes, received {}", got.len())));
        }
        Ok(got)
    }
}

/// Scalars each site contributes alongside its mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteAux {
    pub t_calc: f64,
    pub dt_candidate: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxAggregate {
    /// Force calculation time per site, in site order.
    pub loads: Vec<f64>,
    /// Smallest time step proposed by any site.
    pub dt: f64,
    pub counts: Vec<u64>,
}

fn f64s(blobs: &[Vec<u8>], phase: Phase) -> Result<Vec<f64>, RingError> {
    blobs
        .iter()
        .map(|b| {
            b.as_slice()
                .try_into()
                .map(f64::from_le_bytes)
                .map_err(|_| protocol(phase, "expected one f64"))
        })
        .collect()
}

/// Sum the sites' quantized density grids and collect loads, time steps and counts.
pub fn ring_reduce_mesh(
    ep: &SiteEndpoint,
    local: &QuantizedGrid,
    aux: SiteAux,
    stats: &mut ExchangeStats,
) -> Result<(QuantizedGrid, AuxAggregate), RingError> {
    let blobs = ep.allgather(Phase::Mesh, local.to_le_bytes(), stats)?;
    let mut global = QuantizedGrid::new(local.n, local.scale);
    for (site, b) in blobs.iter().enumerate() {
        if b.len() != local.cells.len() * 4 {
            return Err(protocol(
                Phase::Mesh,
                format!("site {site} sent {} bytes, expected {}", b.len(), local.cells.len() * 4),
            ));
        }
        global.accumulate(&QuantizedGrid::cells_from_le_bytes(b));
    }
    let loads = f64s(&ep.allgather(Phase::Loads, aux.t_calc.to_le_bytes().to_vec(), stats)?, Phase::Loads)?;
    let dts = f64s(&ep.allgather(Phase::Dt, aux.dt_candidate.to_le_bytes().to_vec(), stats)?, Phase::Dt)?;
    let counts = ep
        .allgather(Phase::Counts, aux.count.to_le_bytes().to_vec(), stats)?
        .iter()
        .map(|b| {
            b.as_slice()
                .try_into()
                .map(u64::from_le_bytes)
                .map_err(|_| protocol(Phase::Counts, "expected one u64"))
        })
        .collect::<Result<_, _>>()?;
    let dt = dts.into_iter().fold(f64::INFINITY, f64::min);
    Ok((global, AuxAggregate { loads, dt, counts }))
}

/// Gather every site's samples, concatenated in site order. Coordinates
/// travel as `f32`.
pub fn ring_gather_samples(ep: &SiteEndpoint, local: &SampleSet, stats: &mut ExchangeStats) -> Result<SampleSet, RingError> {
    let mine: Vec<u8> = local.xs.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect();
    let blobs = ep.allgather(Phase::Samples, mine, stats)?;
    let mut xs = Vec::new();
    for b in &blobs {
        if b.len() % 4 != 0 {
            return Err(protocol(Phase::Samples, "sample blob is not a whole number of f32"));
        }
        xs.extend(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64));
    }
    Ok(SampleSet { xs, r_samp: local.r_samp })
}

/// Exchange encoded local essential trees with the neighbours.
pub fn exchange_let(
    ep: &SiteEndpoint,
    for_left: &[u8],
    for_right: &[u8],
    stats: &mut ExchangeStats,
) -> Result<(Vec<u8>, Vec<u8>), RingError> {
    ep.neighbour_exchange(Phase::Let, for_left, for_right, stats)
}

pub const PARTICLE_RECORD_BYTES: usize = 64;

pub fn encode_particles(p: &ParticleSet) -> Vec<u8> {
    let mut b = Vec::with_capacity(p.len() * PARTICLE_RECORD_BYTES);
    for i in 0..p.len() {
        b.extend_from_slice(&p.ids[i].to_le_bytes());
        b.extend_from_slice(&p.masses[i].to_le_bytes());
        for x in p.positions[i].iter().chain(&p.velocities[i]) {
            b.extend_from_slice(&x.to_le_bytes());
        }
    }
    b
}

pub fn decode_particles(b: &[u8], box_len: f64) -> Option<ParticleSet> {
    if b.len() % PARTICLE_RECORD_BYTES != 0 {
        return None;
    }
    let mut p = ParticleSet::with_capacity(box_len, b.len() / PARTICLE_RECORD_BYTES);
    for r in b.chunks_exact(PARTICLE_RECORD_BYTES) {
        let f = |i: usize| f64::from_le_bytes(r[8 * i..8 * i + 8].try_into().unwrap());
        p.push(u64::from_le_bytes(r[0..8].try_into().unwrap()), f(1), [f(2), f(3), f(4)], [f(5), f(6), f(7)]);
    }
    Some(p)
}

/// Hand migrants to the neighbours and return the particles received.
pub fn migrate_particles(
    ep: &SiteEndpoint,
    to_left: &ParticleSet,
    to_right: &ParticleSet,
    stats: &mut ExchangeStats,
) -> Result<ParticleSet, RingError> {
    let box_len = to_left.box_len;
    let (l, r) = if ep.s == 2 {
        let mut both = to_right.clone();
        both.extend(to_left);
        (Vec::new(), encode_particles(&both))
    } else {
        (encode_particles(to_left), encode_particles(to_right))
    };
    let (from_left, from_right) = ep.neighbour_exchange(Phase::Migration, &l, &r, stats)?;
    let mut out = ParticleSet::new(box_len);
    for b in [&from_left, &from_right] {
        let p = decode_particles(b, box_len).ok_or_else(|| protocol(Phase::Migration, "truncated particle record"))?;
        out.extend(&p);
    }
    Ok(out)
}

/// Send `payload` as sub-messages of at most `cap` bytes, each prefixed with
/// the total length and its offset. Returns the number of sub-messages.
pub fn chunked_send(ch: &dyn Channel, payload: &[u8], cap: usize) -> Result<usize, TransportError> {
    if cap == 0 {
        return Err(TransportError::Config("memory cap must be > 0".into()));
    }
    let total = payload.len() as u64;
    let mut parts = 0;
    let mut off = 0usize;
    loop {
        let end = (off + cap).min(payload.len());
        let mut msg = Vec::with_capacity(16 + end - off);
        msg.extend_from_slice(&total.to_le_bytes());
        msg.extend_from_slice(&(off as u64).to_le_bytes());
        msg.extend_from_slice(&payload[off..end]);
        ch.send_message(&msg)?;
        parts += 1;
        off = end;
        if off >= payload.len() {
            return Ok(parts);
        }
    }
}

pub fn chunked_recv(ch: &dyn Channel) -> Result<(Vec<u8>, usize), TransportError> {
    let mut out: Option<Vec<u8>> = None;
    let mut filled = 0u64;
    let mut parts = 0;
    loop {
        let msg = ch.recv_message()?;
        if msg.len() < 16 {
            return Err(TransportError::Protocol("sub-message shorter than its prefix".into()));
        }
        let total = u64::from_le_bytes(msg[0..8].try_into().unwrap());
        let off = u64::from_le_bytes(msg[8..16].try_into().unwrap());
        let buf = out.get_or_insert_with(|| vec![0u8; total as usize]);
        let body = &msg[16..];
        if buf.len() as u64 != total || off != filled || off + body.len() as u64 > total {
            return Err(TransportError::Protocol(format!(
                "reassembly mismatch: total {total}, offset {off}, expected offset {filled}"
            )));
        }
        buf[off as usize..off as usize + body.len()].copy_from_slice(body);
        filled += body.len() as u64;
        parts += 1;
        if filled == total {
            return Ok((out.unwrap(), parts));
        }
    }
}

/// Paired exchange in memory-capped pieces: send on `to`, receive on `from`.
pub fn chunked_exchange(to: &dyn Channel, payload: &[u8], from: &dyn Channel, cap: usize) -> Result<(Vec<u8>, usize), TransportError> {
    std::thread::scope(|scope| {
        let sender = scope.spawn(|| chunked_send(to, payload, cap));
        let got = chunked_recv(from);
        sender.join().expect("sender panicked")?;
        got
    })
}

pub fn ring_stats_csv(stats: &[ExchangeStats]) -> String {
    let mut s = String::from(RING_STATS_CSV_HEADER);
    s.push('\n');
    for st in stats {
        for row in st.csv_rows() {
            s.push_str(&row);
            s.push('\n');
        }
    }
    s
}
