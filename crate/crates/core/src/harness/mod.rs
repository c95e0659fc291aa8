//! Multi-site experiments: one driver thread per site runs the full step
//! pipeline over a ring of simulated or loopback TCP links.
//!
//! Each step, every site
//!
//! 1. deposits its particles on a quantized density grid and sums the grids
//!    over the ring, together with loads, time step candidates and counts,
//! 2. gathers position samples and moves the slab boundaries,
//! 3. refreshes the multisection of its slab over its local processes,
//! 4. exchanges local essential trees with its neighbours,
//! 5. computes short-range tree forces and long-range mesh forces,
//! 6. kicks and drifts its particles, and
//! 7. hands particles that left its new slab to the neighbours.
//!
//! Velocities are advanced with a variable-step leapfrog: the kick of step
//! `n` spans `(dt[n-1] + dt[n]) / 2`. The shared step `dt[n]` is the smallest
//! candidate gathered in step `n`, and each candidate comes from the
//! accelerations of the previous step. A last force evaluation after the
//! final step synchronizes the velocities with the positions.

pub mod config;
pub mod report;

pub use config::{ConfigError, ConfigFile};
pub use report::{
    average_window, compare_with_model, records_csv, FieldStat, ModelComparison, TermRow, WindowAverage,
    STEP_RECORDS_CSV_HEADER,
};

use crate::decomposition::{
    build_local_essential_tree, decode_let, encode_let, equal_slabs, multisection_decompose, sample_by_id,
    select_migrants, update_site_boundaries, SiteSlab,
};
use crate::nbody::ic;
use crate::nbody::snapshot::Snapshot;
use crate::nbody::tree::tree_force_multi;
use crate::nbody::{wrap_coord, DtPolicy, Mesh, OcTree, PairKernel, ParticleSet, QuantizedGrid, ThetaSchedule, Vec3};
use crate::perf_model::{fixtures, pm_time, RunSpec};
use crate::ring::{
    exchange_let, migrate_particles, ring_gather_samples, ring_reduce_mesh, ring_sim, ring_tcp, ExchangeStats, Phase,
    SiteAux, SiteEndpoint, WanClock,
};
use crate::transport::{Backend, ChannelConfig, TransportError};
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("step {step}, site {site}, {phase}: {msg}")]
    Phase {
        step: u64,
        site: usize,
        phase: &'static str,
        msg: String,
    },
    #[error("link setup: {0}")]
    Link(#[from] TransportError),
    #[error("snapshot output: {0}")]
    Output(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialConditions {
    /// Cubic lattice with seeded displacements of at most `noise` spacings.
    Lattice { noise: f64 },
    /// Plummer sphere with scale radius `a` in box units.
    Plummer { a: f64 },
    /// Particles from a snapshot file.
    File(PathBuf),
}

/// Which clock the timings of a record come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockKind {
    /// Compute charged at the site constants, communication charged by the
    /// wide-area clock.
    Virtual,
    Wall,
}

impl ClockKind {
    pub fn name(&self) -> &'static str {
        match self {
            ClockKind::Virtual => "virtual",
            ClockKind::Wall => "wall",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Particle and mesh counts, opening angle, processes, site roster,
    /// network constants and sampling ratio. Counts must be perfect cubes
    /// for the mesh (and for the particles with lattice initial conditions).
    pub run: RunSpec,
    pub backend: Backend,
    /// Stream layout for the TCP backend.
    pub channel: ChannelConfig,
    pub steps: u64,
    pub theta_schedule: Option<ThetaSchedule>,
    /// Write a snapshot every this many steps into `snapshot_dir`.
    pub snapshot_every: Option<u64>,
    pub snapshot_dir: Option<PathBuf>,
    pub seed: u64,
    pub initial: InitialConditions,
    pub box_len: f64,
    pub total_mass: f64,
    pub softening: f64,
    pub ncrit: usize,
    pub n_leaf: usize,
    /// Tree force range in mesh cells.
    pub cutoff_cells: f64,
    pub dt: DtPolicy,
    /// Step used before any accelerations are known (adaptive policy only).
    pub dt_initial: Option<f64>,
    /// Largest boundary move per step, as a fraction of the box.
    pub move_limit: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            run: RunSpec {
                n_particles: 4096.0,
                n_mesh: 4096.0,
                theta: 0.5,
                p_total: 4,
                sites: vec![fixtures::das3_sites()[0].clone()],
                network: fixtures::das3_network(),
                r_samp: 1.0 / 16.0,
                migration_bytes: 0.0,
            },
            backend: Backend::Simulated,
            channel: ChannelConfig::tcp(4, 64 * 1024),
            steps: 10,
            theta_schedule: None,
            snapshot_every: None,
            snapshot_dir: None,
            seed: 1,
            initial: InitialConditions::Lattice { noise: 0.1 },
            box_len: 1.0,
            total_mass: 1.0,
            softening: 1e-3,
            ncrit: 64,
            n_leaf: 8,
            cutoff_cells: 3.0,
            dt: DtPolicy::Fixed(1e-3),
            dt_initial: None,
            move_limit: 0.05,
        }
    }
}

fn exact_cube_root(x: f64) -> Option<usize> {
    let r = x.cbrt().round() as usize;
    (r > 0 && (r * r * r) as f64 == x).then_some(r)
}

impl ExperimentConfig {
    pub fn site_count(&self) -> usize {
        self.run.site_count()
    }

    pub fn mesh_side(&self) -> Option<usize> {
        exact_cube_root(self.run.n_mesh)
    }

    pub fn cutoff_length(&self) -> f64 {
        self.cutoff_cells * self.box_len / self.mesh_side().unwrap_or(1) as f64
    }

    pub fn theta_at(&self, step: u64) -> f64 {
        self.theta_schedule
            .as_ref()
            .and_then(|s| s.theta_at(step))
            .unwrap_or(self.run.theta)
    }

    pub fn clock_kind(&self) -> ClockKind {
        match self.backend {
            Backend::Simulated => ClockKind::Virtual,
            Backend::Tcp => ClockKind::Wall,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.run.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.steps < 1 {
            return bad("steps must be >= 1".into());
        }
        if self.mesh_side().is_none() {
            return bad(format!("mesh cell count {} is not a perfect cube", self.run.n_mesh));
        }
        if matches!(self.initial, InitialConditions::Lattice { .. }) && exact_cube_root(self.run.n_particles).is_none() {
            return bad(format!("lattice needs a cubic particle count, got {}", self.run.n_particles));
        }
        if !(self.box_len > 0.0 && self.total_mass > 0.0) {
            return bad("box length and total mass must be > 0".into());
        }
        if !(self.softening >= 0.0 && self.cutoff_cells > 0.0) {
            return bad("softening must be >= 0 and cutoff_cells > 0".into());
        }
        if self.ncrit == 0 || self.n_leaf == 0 {
            return bad("ncrit and n_leaf must be >= 1".into());
        }
        if !(self.move_limit > 0.0) {
            return bad("move_limit must be > 0".into());
        }
        match self.dt {
            DtPolicy::Fixed(dt) if !(dt > 0.0) => return bad("dt must be > 0".into()),
            DtPolicy::Adaptive { eta, dt_max } if !(eta > 0.0 && dt_max > 0.0) => {
                return bad("eta and dt_max must be > 0".into())
            }
            _ => {}
        }
        if self.snapshot_every == Some(0) {
            return bad("snapshot cadence must be >= 1".into());
        }
        let s = self.site_count();
        if s > 1 && self.box_len / s as f64 <= self.cutoff_length() {
            return bad(format!(
                "{s} slabs of width {} cannot hold the force range {}",
                self.box_len / s as f64,
                self.cutoff_length()
            ));
        }
        if self.backend == Backend::Tcp {
            self.channel.validate()?;
        }
        Ok(())
    }

    /// The initial particle set over the whole box.
    pub fn initial_particles(&self) -> Result<ParticleSet, HarnessError> {
        let n = self.run.n_particles as usize;
        let mut p = match &self.initial {
            InitialConditions::Lattice { noise } => {
                ic::lattice(exact_cube_root(self.run.n_particles).unwrap(), self.box_len, self.total_mass, *noise, self.seed)
            }
            InitialConditions::Plummer { a } => ic::plummer(n, self.total_mass, *a, self.box_len, self.seed),
            InitialConditions::File(path) => {
                let snap = Snapshot::load(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
                if snap.particles.len() != n {
                    return Err(HarnessError::Config(format!(
                        "snapshot holds {} particles, run expects {n}",
                        snap.particles.len()
                    )));
                }
                snap.particles
            }
        };
        p.wrap();
        Ok(p)
    }
}

/// Measurements of one step, taken from the site that finished last.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub clock: ClockKind,
    pub dt: f64,
    pub theta: f64,
    pub wan_exchanges: u64,
    /// Communication seconds per phase, in [`Phase::ALL`] order.
    pub phase_seconds: Vec<f64>,
    /// Largest per-site byte count per phase, in [`Phase::ALL`] order.
    pub phase_bytes: Vec<u64>,
    /// Wide-area bytes of the reported site.
    pub wan_bytes: u64,
    /// Wide-area latency charged by the virtual clock.
    pub w_l: f64,
    /// Wide-area transfer time charged by the virtual clock.
    pub w_b: f64,
    pub tree_seconds: f64,
    pub pm_seconds: f64,
    pub total_seconds: f64,
    /// Interactions summed over sites.
    pub interactions: u64,
    /// Force calculation time per site.
    pub t_calc: Vec<f64>,
    /// Particles per site during the force calculation.
    pub counts: Vec<u64>,
    /// Largest over mean particle count of the processes inside a site.
    pub process_imbalance: f64,
}

impl StepRecord {
    pub fn comm_seconds(&self) -> f64 {
        self.phase_seconds.iter().sum()
    }

    pub fn phase_bytes(&self, phase: Phase) -> u64 {
        self.phase_bytes[Phase::ALL.iter().position(|p| *p == phase).unwrap()]
    }

    /// Named numeric fields, in a fixed order.
    pub fn fields(&self) -> Vec<(String, f64)> {
        let mut f = vec![
            ("step".to_string(), self.step as f64),
            ("dt".into(), self.dt),
            ("theta".into(), self.theta),
            ("wan_exchanges".into(), self.wan_exchanges as f64),
        ];
        for (p, v) in Phase::ALL.iter().zip(&self.phase_seconds) {
            f.push((format!("seconds_{}", p.name()), *v));
        }
        for (p, v) in Phase::ALL.iter().zip(&self.phase_bytes) {
            f.push((format!("bytes_{}", p.name()), *v as f64));
        }
        f.extend([
            ("wan_bytes".into(), self.wan_bytes as f64),
            ("w_l".into(), self.w_l),
            ("w_b".into(), self.w_b),
            ("tree_seconds".into(), self.tree_seconds),
            ("pm_seconds".into(), self.pm_seconds),
            ("total_seconds".into(), self.total_seconds),
            ("interactions".into(), self.interactions as f64),
        ]);
        for (i, v) in self.t_calc.iter().enumerate() {
            f.push((format!("t_calc_{i}"), *v));
        }
        for (i, v) in self.counts.iter().enumerate() {
            f.push((format!("count_{i}"), *v as f64));
        }
        f.push(("process_imbalance".into(), self.process_imbalance));
        f
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub records: Vec<StepRecord>,
    /// Ring statistics of site 0, one entry per step.
    pub ring_stats: Vec<ExchangeStats>,
    /// Slabs in force during each step with the particle count and force
    /// time each site measured in it.
    pub slabs: Vec<Vec<SiteSlab>>,
    /// Final state over all sites, sorted by id, with synchronized velocities.
    pub snapshot: Snapshot,
    pub snapshot_files: Vec<PathBuf>,
}

/// What one site measured in one step.
#[derive(Debug, Clone)]
struct SiteStep {
    stats: ExchangeStats,
    dt: f64,
    tree_seconds: f64,
    pm_seconds: f64,
    total_seconds: f64,
    interactions: u64,
    t_calc: f64,
    count: u64,
    process_imbalance: f64,
    slabs: Vec<SiteSlab>,
}

struct SiteOutput {
    steps: Vec<SiteStep>,
    particles: ParticleSet,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    mesh_n: usize,
    r_cut: f64,
    scale: f64,
    p_local: usize,
    clock: ClockKind,
    snapshots: Mutex<Vec<(u64, f64, ParticleSet)>>,
}

struct Forces {
    acc: Vec<Vec3>,
    dt: f64,
    next_slabs: Vec<SiteSlab>,
    interactions: u64,
    tree_seconds: f64,
    pm_seconds: f64,
    t_calc: f64,
    process_imbalance: f64,
}

struct SiteState {
    site: usize,
    particles: ParticleSet,
    slabs: Vec<SiteSlab>,
    /// Load and particle count of the previous force calculation.
    last_t_calc: f64,
    last_count: u64,
}

fn phase_err(step: u64, site: usize, phase: &'static str) -> impl Fn(String) -> HarnessError {
    move |msg| HarnessError::Phase { step, site, phase, msg }
}

fn ring_err(step: u64, site: usize) -> impl Fn(crate::ring::RingError) -> HarnessError {
    move |e| {
        let phase = match &e {
            crate::ring::RingError::Transport { phase, .. } | crate::ring::RingError::Protocol { phase, .. } => {
                phase.name()
            }
        };
        HarnessError::Phase {
            step,
            site,
            phase,
            msg: e.to_string(),
        }
    }
}

/// Mesh reduce through force calculation for the particles a site holds.
fn force_pipeline(
    ctx: &Ctx,
    ep: &SiteEndpoint,
    st: &SiteState,
    step: u64,
    dt_candidate: f64,
    stats: &mut ExchangeStats,
) -> Result<Forces, HarnessError> {
    let cfg = ctx.cfg;
    let site = st.site;
    let s = ep.s;
    let l = cfg.box_len;
    let theta = cfg.theta_at(step);
    let p = &st.particles;

    let mut grid = QuantizedGrid::new(ctx.mesh_n, ctx.scale);
    grid.deposit(p, l);
    let aux = SiteAux {
        t_calc: st.last_t_calc,
        dt_candidate,
        count: st.last_count,
    };
    let (global, agg) = ring_reduce_mesh(ep, &grid, aux, stats).map_err(ring_err(step, site))?;

    let samples = sample_by_id(p, cfg.run.r_samp).map_err(|e| phase_err(step, site, "samples")(e.to_string()))?;
    let samples = ring_gather_samples(ep, &samples, stats).map_err(ring_err(step, site))?;

    let next_slabs = if s > 1 {
        let current: Vec<SiteSlab> = st
            .slabs
            .iter()
            .enumerate()
            .map(|(i, sl)| SiteSlab {
                count: agg.counts[i],
                t_calc: agg.loads[i],
                ..sl.clone()
            })
            .collect();
        let loads: Vec<f64> = agg.loads.iter().map(|&t| if t > 0.0 { t } else { 1.0 }).collect();
        let min_width = ctx.r_cut * (1.0 + 1e-9);
        update_site_boundaries(&samples, &loads, &current, cfg.move_limit * l, min_width, l)
            .map_err(|e| phase_err(step, site, "boundary update")(e.to_string()))?
            .slabs
    } else {
        st.slabs.clone()
    };

    let me = &st.slabs[site];
    let domains = multisection_decompose(p, me, ctx.p_local)
        .map_err(|e| phase_err(step, site, "multisection")(e.to_string()))?;
    let mean = p.len() as f64 / domains.len() as f64;
    let process_imbalance = if mean > 0.0 {
        domains.iter().map(|d| d.count).max().unwrap_or(0) as f64 / mean
    } else {
        1.0
    };

    let local = if p.is_empty() {
        None
    } else {
        Some(OcTree::build(p, cfg.n_leaf).map_err(|e| phase_err(step, site, "tree build")(e.to_string()))?)
    };
    let export = |to: usize| -> Vec<u8> {
        match &local {
            Some(t) => {
                let e = build_local_essential_tree(t, &st.slabs[to], theta, ctx.r_cut, 0.0);
                if e.is_empty() {
                    Vec::new()
                } else {
                    encode_let(&e.tree)
                }
            }
            None => Vec::new(),
        }
    };
    let (for_left, for_right) = match s {
        1 => (Vec::new(), Vec::new()),
        2 => (Vec::new(), export((site + 1) % s)),
        _ => (export((site + s - 1) % s), export((site + 1) % s)),
    };
    let (from_left, from_right) = exchange_let(ep, &for_left, &for_right, stats).map_err(ring_err(step, site))?;
    let mut imported = Vec::new();
    for b in [&from_left, &from_right] {
        if !b.is_empty() {
            imported.push(decode_let(b, cfg.n_leaf, l).map_err(|e| phase_err(step, site, "let")(e.to_string()))?);
        }
    }

    let t0 = Instant::now();
    let mut sources: Vec<&OcTree> = imported.iter().collect();
    if let Some(t) = &local {
        sources.insert(0, t);
    }
    let kernel = PairKernel::ShortRange {
        softening: cfg.softening,
        r_cut: ctx.r_cut,
    };
    let short = tree_force_multi(&sources, p, theta, cfg.ncrit, &kernel);
    let tree_seconds = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let mut mesh = Mesh::new(ctx.mesh_n, l);
    mesh.split_cutoff = Some(ctx.r_cut);
    mesh.load_quantized(&global);
    mesh.solve();
    let long = mesh.interpolate(p);
    let pm_seconds = t1.elapsed().as_secs_f64();

    let acc = short
        .accelerations
        .iter()
        .zip(&long)
        .map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]])
        .collect();
    let t_calc = match ctx.clock {
        ClockKind::Virtual => short.interaction_count as f64 * cfg.run.sites[site].tau_tree,
        ClockKind::Wall => tree_seconds,
    };
    Ok(Forces {
        acc,
        dt: agg.dt,
        next_slabs,
        interactions: short.interaction_count,
        tree_seconds,
        pm_seconds,
        t_calc,
        process_imbalance,
    })
}

fn kick(p: &mut ParticleSet, acc: &[Vec3], h: f64) {
    for (v, a) in p.velocities.iter_mut().zip(acc) {
        for k in 0..3 {
            v[k] += h * a[k];
        }
    }
}

fn drive_site(ctx: &Ctx, ep: SiteEndpoint, particles: ParticleSet, slabs: Vec<SiteSlab>) -> Result<SiteOutput, HarnessError> {
    let cfg = ctx.cfg;
    let site = ep.site;
    let count = particles.len() as u64;
    let mut st = SiteState {
        site,
        particles,
        slabs,
        last_t_calc: count.max(1) as f64,
        last_count: count,
    };
    let mut candidate = match cfg.dt {
        DtPolicy::Fixed(dt) => dt,
        DtPolicy::Adaptive { dt_max, .. } => cfg.dt_initial.unwrap_or(dt_max),
    };
    let mut dt_prev = 0.0;
    let mut time = 0.0;
    let mut steps = Vec::with_capacity(cfg.steps as usize);
    for step in 0..cfg.steps {
        let t0 = Instant::now();
        let mut stats = ExchangeStats::new(step);
        let f = force_pipeline(ctx, &ep, &st, step, candidate, &mut stats)?;
        let dt = f.dt;
        kick(&mut st.particles, &f.acc, 0.5 * (dt_prev + dt));
        for (x, v) in st.particles.positions.iter_mut().zip(&st.particles.velocities) {
            for k in 0..3 {
                x[k] = wrap_coord(x[k] + dt * v[k], cfg.box_len);
            }
        }
        let m = select_migrants(&st.particles, &f.next_slabs, site)
            .map_err(|e| phase_err(step, site, "migration")(e.to_string()))?;
        let mut keep = st.particles.select(&m.stay);
        let arrived = migrate_particles(
            &ep,
            &st.particles.select(&m.to_left),
            &st.particles.select(&m.to_right),
            &mut stats,
        )
        .map_err(ring_err(step, site))?;
        keep.extend(&arrived);
        let slabs_used = std::mem::replace(&mut st.slabs, f.next_slabs);
        let count = st.particles.len() as u64;
        st.particles = keep;
        st.last_t_calc = f.t_calc;
        st.last_count = count;
        candidate = cfg.dt.dt(&f.acc, cfg.softening);
        dt_prev = dt;
        time += dt;
        steps.push(SiteStep {
            stats,
            dt,
            tree_seconds: f.tree_seconds,
            pm_seconds: f.pm_seconds,
            total_seconds: t0.elapsed().as_secs_f64(),
            interactions: f.interactions,
            t_calc: f.t_calc,
            count,
            process_imbalance: f.process_imbalance,
            slabs: slabs_used,
        });
        if let Some(every) = cfg.snapshot_every {
            if (step + 1) % every == 0 && step + 1 < cfg.steps {
                ctx.snapshots.lock().unwrap().push((step + 1, time, st.particles.clone()));
            }
        }
    }
    // close the last kick so velocities match the final positions
    let mut stats = ExchangeStats::new(cfg.steps);
    let f = force_pipeline(ctx, &ep, &st, cfg.steps, candidate, &mut stats)?;
    kick(&mut st.particles, &f.acc, 0.5 * dt_prev);
    Ok(SiteOutput {
        steps,
        particles: st.particles,
    })
}

/// Hand each particle to the site whose slab holds its x coordinate.
fn distribute(p: &ParticleSet, slabs: &[SiteSlab]) -> Vec<ParticleSet> {
    let mut idx: Vec<Vec<usize>> = vec![Vec::new(); slabs.len()];
    for (i, x) in p.positions.iter().enumerate() {
        let site = slabs.iter().position(|s| s.contains(x[0])).unwrap_or(slabs.len() - 1);
        idx[site].push(i);
    }
    idx.iter().map(|ix| p.select(ix)).collect()
}

fn merged(parts: impl IntoIterator<Item = ParticleSet>, box_len: f64) -> ParticleSet {
    let mut all = ParticleSet::new(box_len);
    for p in parts {
        all.extend(&p);
    }
    all.sort_by_id();
    all
}

fn assemble_record(step: u64, cfg: &ExperimentConfig, clock: ClockKind, sites: &[&SiteStep]) -> StepRecord {
    let pm_virtual = pm_time(&cfg.run);
    let lambda = cfg.run.network.lambda_wan;
    let per_site: Vec<(f64, Vec<f64>, f64, f64)> = sites
        .iter()
        .map(|st| {
            let phase: Vec<f64> = Phase::ALL
                .iter()
                .map(|ph| {
                    st.stats
                        .phases
                        .iter()
                        .filter(|x| x.phase == *ph)
                        .map(|x| match clock {
                            ClockKind::Virtual => x.virtual_seconds,
                            ClockKind::Wall => x.seconds,
                        })
                        .sum()
                })
                .collect();
            let (tree, pm) = match clock {
                ClockKind::Virtual => (st.t_calc, pm_virtual),
                ClockKind::Wall => (st.tree_seconds, st.pm_seconds),
            };
            let total = match clock {
                ClockKind::Virtual => phase.iter().sum::<f64>() + tree + pm,
                ClockKind::Wall => st.total_seconds,
            };
            (total, phase, tree, pm)
        })
        .collect();
    let slowest = (0..sites.len())
        .max_by(|&a, &b| per_site[a].0.total_cmp(&per_site[b].0).then(b.cmp(&a)))
        .unwrap();
    let st = sites[slowest];
    let (total, phase_seconds, tree_seconds, pm_seconds) = per_site[slowest].clone();
    let phase_bytes = Phase::ALL
        .iter()
        .map(|ph| {
            sites
                .iter()
                .map(|s| s.stats.phases.iter().filter(|x| x.phase == *ph).map(|x| x.bytes).sum::<u64>())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let w_l: f64 = st.stats.phases.iter().map(|x| x.wan_exchanges as f64 * lambda).sum();
    let virtual_total: f64 = st.stats.virtual_seconds();
    StepRecord {
        step,
        clock,
        dt: st.dt,
        theta: cfg.theta_at(step),
        wan_exchanges: st.stats.wan_exchanges(),
        phase_seconds,
        phase_bytes,
        wan_bytes: if cfg.site_count() > 1 { st.stats.bytes() } else { 0 },
        w_l,
        w_b: virtual_total - w_l,
        tree_seconds,
        pm_seconds,
        total_seconds: total,
        interactions: sites.iter().map(|s| s.interactions).sum(),
        t_calc: sites.iter().map(|s| s.t_calc).collect(),
        counts: sites.iter().map(|s| s.count).collect(),
        process_imbalance: sites.iter().map(|s| s.process_imbalance).fold(0.0, f64::max),
    }
}

/// Run the configured experiment to completion.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let s = cfg.site_count();
    let mesh_n = cfg.mesh_side().unwrap();
    let initial = cfg.initial_particles()?;
    let slabs = equal_slabs(s, cfg.box_len);
    let parts = distribute(&initial, &slabs);
    let clock = WanClock {
        lambda: cfg.run.network.lambda_wan,
        sigma_eff: cfg.run.network.effective_wan_bandwidth(s),
    };
    let endpoints = match cfg.backend {
        Backend::Simulated => ring_sim(s, &ChannelConfig::simulated(cfg.run.network.lambda_wan, cfg.run.network.sigma_wan), clock)?,
        Backend::Tcp => ring_tcp(s, &cfg.channel, clock)?,
    };
    let ctx = Ctx {
        cfg,
        mesh_n,
        r_cut: cfg.cutoff_length(),
        scale: QuantizedGrid::scale_for(initial.total_mass()),
        p_local: (cfg.run.p_total / s as u64).max(1) as usize,
        clock: cfg.clock_kind(),
        snapshots: Mutex::new(Vec::new()),
    };
    let results: Vec<Result<SiteOutput, HarnessError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = endpoints
            .into_iter()
            .zip(parts)
            .map(|(ep, part)| {
                let ctx = &ctx;
                let slabs = slabs.clone();
                scope.spawn(move || drive_site(ctx, ep, part, slabs))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("site driver panicked")).collect()
    });
    // a failing site closes its links, so report the root cause rather than
    // the closed-channel errors it caused at its neighbours
    let mut outputs = Vec::with_capacity(s);
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(o) => outputs.push(o),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        let root = errors
            .iter()
            .position(|e| !e.to_string().contains("channel closed"))
            .unwrap_or(0);
        return Err(errors.swap_remove(root));
    }

    let records = (0..cfg.steps as usize)
        .map(|k| {
            let per: Vec<&SiteStep> = outputs.iter().map(|o| &o.steps[k]).collect();
            assemble_record(k as u64, cfg, ctx.clock, &per)
        })
        .collect();
    let ring_stats = outputs[0].steps.iter().map(|st| st.stats.clone()).collect();
    // slabs in force during each step, with what each site measured in it
    let slab_history = (0..outputs[0].steps.len())
        .map(|k| {
            outputs[0].steps[k]
                .slabs
                .iter()
                .zip(&outputs)
                .map(|(sl, o)| SiteSlab {
                    count: o.steps[k].count,
                    t_calc: o.steps[k].t_calc,
                    ..sl.clone()
                })
                .collect()
        })
        .collect();
    let time: f64 = outputs[0].steps.iter().map(|st| st.dt).sum();
    let snapshot = Snapshot {
        time,
        particles: merged(outputs.into_iter().map(|o| o.particles), cfg.box_len),
    };

    let mut snapshot_files = Vec::new();
    if let Some(dir) = &cfg.snapshot_dir {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Output(format!("{}: {e}", dir.display())))?;
        let mut by_step: std::collections::BTreeMap<u64, (f64, Vec<ParticleSet>)> = Default::default();
        for (step, t, p) in ctx.snapshots.into_inner().unwrap() {
            let e = by_step.entry(step).or_insert((t, Vec::new()));
            e.1.push(p);
        }
        let mut write = |name: String, snap: &Snapshot| -> Result<(), HarnessError> {
            let path = dir.join(name);
            snap.save(&path).map_err(|e| HarnessError::Output(format!("{}: {e}", path.display())))?;
            snapshot_files.push(path);
            Ok(())
        };
        for (step, (t, parts)) in by_step {
            write(
                format!("snap_{step:05}.snbk"),
                &Snapshot {
                    time: t,
                    particles: merged(parts, cfg.box_len),
                },
            )?;
        }
        write(format!("snap_{:05}.snbk", cfg.steps), &snapshot)?;
    }
    Ok(ExperimentResult {
        records,
        ring_stats,
        slabs: slab_history,
        snapshot,
        snapshot_files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perf_model::MachineConstants;

    fn cfg(s: usize, n_side: usize, steps: u64) -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.run.n_particles = (n_side * n_side * n_side) as f64;
        c.run.n_mesh = 512.0;
        c.run.sites = fixtures::das3_sites().into_iter().cycle().take(s).collect();
        c.run.p_total = 2 * s as u64;
        c.run.r_samp = 0.25;
        c.cutoff_cells = 1.5;
        c.steps = steps;
        c
    }

    #[test]
    fn single_site_has_no_wide_area_traffic() {
        let r = run_experiment(&cfg(1, 8, 3)).unwrap();
        assert_eq!(r.records.len(), 3);
        assert!(r.records.iter().all(|x| x.wan_exchanges == 0 && x.w_l == 0.0));
        assert_eq!(r.snapshot.particles.len(), 512);
    }

    #[test]
    fn exchange_count_and_conservation() {
        for s in [2usize, 3] {
            let r = run_experiment(&cfg(s, 8, 3)).unwrap();
            for rec in &r.records {
                assert_eq!(rec.wan_exchanges, 5 * s as u64 + 3);
                assert_eq!(rec.counts.iter().sum::<u64>(), 512);
                assert_eq!(rec.phase_bytes(Phase::Mesh), 4 * 512 * s as u64);
            }
            let ids: Vec<u64> = r.snapshot.particles.ids.clone();
            assert_eq!(ids, (0..512).collect::<Vec<_>>());
        }
    }

    #[test]
    fn virtual_totals_cover_their_parts() {
        let r = run_experiment(&cfg(2, 8, 2)).unwrap();
        for rec in &r.records {
            assert!(rec.total_seconds >= rec.comm_seconds() + rec.tree_seconds + rec.pm_seconds - 1e-12);
            assert_eq!(rec.clock, ClockKind::Virtual);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = cfg(1, 8, 0);
        assert!(matches!(run_experiment(&c), Err(HarnessError::Config(_))));
        c.steps = 1;
        c.run.n_mesh = 500.0;
        assert!(run_experiment(&c).is_err());
        let mut c = cfg(8, 8, 1);
        c.cutoff_cells = 3.0;
        assert!(matches!(c.validate(), Err(HarnessError::Config(m)) if m.contains("force range")));
    }

    #[test]
    fn heterogeneous_sites_shift_the_boundary() {
        let mut c = cfg(2, 8, 6);
        c.run.sites = vec![
            MachineConstants::new("fast", 1e-9, 1e-9, 1e-6).unwrap(),
            MachineConstants::new("slow", 2e-9, 1e-9, 1e-6).unwrap(),
        ];
        let r = run_experiment(&c).unwrap();
        let last = r.records.last().unwrap();
        assert!(last.counts[0] > last.counts[1], "{:?}", last.counts);
    }

    #[test]
    fn snapshots_follow_the_cadence() {
        let dir = std::env::temp_dir().join(format!("harness-snap-{}", std::process::id()));
        let mut c = cfg(2, 8, 4);
        c.snapshot_every = Some(2);
        c.snapshot_dir = Some(dir.clone());
        let r = run_experiment(&c).unwrap();
        let names: Vec<String> = r
            .snapshot_files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["snap_00002.snbk", "snap_00004.snbk"]);
        let back = Snapshot::load(&r.snapshot_files[1]).unwrap();
        assert_eq!(back, r.snapshot);
        std::fs::remove_dir_all(dir).ok();
    }
}
