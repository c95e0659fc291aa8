//! Closed-form step-time model for a TreePM code spread over a ring of sites.
//!
//! A step costs tree force evaluation, a serial particle-mesh solve, local
//! (intra-site) communication and, when more than one site takes part,
//! wide-area communication:
//!
//! ```text
//! t_exec(s, p) = t_tree + t_pm + (t_l + t_b) + (w_l + w_b)
//! ```
//!
//! Every function here is pure. Inputs are validated once through
//! [`RunSpec::validate`]; the individual terms assume a valid spec.

pub mod fixtures;

use thiserror::Error;

/// Lower edge of the opening-angle range the interaction-count fit was made on.
pub const THETA_FIT_MIN: f64 = 0.2;
/// Upper edge of the opening-angle range the interaction-count fit was made on.
pub const THETA_FIT_MAX: f64 = 0.75;

/// Overhead factor for interaction-list construction and tree building.
pub const TREE_OVERHEAD: f64 = 1.2;

/// Collective operations per step on the local network, each `log2 q` deep.
const LOCAL_COLLECTIVES: f64 = 18.0;
/// All-to-all operations per step on the local network, each `q` deep.
const LOCAL_ALL_TO_ALL: f64 = 2.0;

/// Bytes per particle (60) plus bytes per tree node (52) at 0.75 nodes per
/// particle for a leaf capacity of 10.
pub const TREE_BYTES_PER_PARTICLE: f64 = 60.0 + 0.75 * 52.0;
/// Bytes per mesh cell for the particle-mesh solve.
pub const MESH_BYTES_PER_CELL: f64 = 4.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid machine constants for site `{site}`: {reason}")]
    Machine { site: String, reason: String },
    #[error("invalid network constants: {0}")]
    Network(String),
    #[error("invalid run spec: {0}")]
    Spec(String),
}

/// Per-site compute constants.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineConstants {
    pub name: String,
    /// Seconds per tree interaction.
    pub tau_tree: f64,
    /// Seconds per FFT operation.
    pub tau_fft: f64,
    /// Seconds per particle for mesh assignment and interpolation.
    pub tau_mesh: f64,
}

impl MachineConstants {
    pub fn new(
        name: impl Into<String>,
        tau_tree: f64,
        tau_fft: f64,
        tau_mesh: f64,
    ) -> Result<Self, ModelError> {
        let m = Self {
            name: name.into(),
            tau_tree,
            tau_fft,
            tau_mesh,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (label, v) in [
            ("tau_tree", self.tau_tree),
            ("tau_fft", self.tau_fft),
            ("tau_mesh", self.tau_mesh),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::Machine {
                    site: self.name.clone(),
                    reason: format!("{label} must be finite and > 0, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Latency (round-trip) and bandwidth of the local and wide-area networks.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConstants {
    pub lambda_lan: f64,
    pub lambda_wan: f64,
    pub sigma_lan: f64,
    pub sigma_wan: f64,
    /// Wide-area links share one hub: each site sees `sigma_wan / (s - 1)`.
    pub star_topology: bool,
}

impl NetworkConstants {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (label, v) in [
            ("lambda_lan", self.lambda_lan),
            ("lambda_wan", self.lambda_wan),
            ("sigma_lan", self.sigma_lan),
            ("sigma_wan", self.sigma_wan),
        ] {
            if !(v > 0.0) || v.is_nan() {
                return Err(ModelError::Network(format!("{label} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Wide-area bandwidth available to one site when `sites` take part.
    pub fn effective_wan_bandwidth(&self, sites: usize) -> f64 {
        if self.star_topology && sites >= 2 {
            self.sigma_wan / (sites - 1) as f64
        } else {
            self.sigma_wan
        }
    }
}

/// Problem description shared by the model and the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub n_particles: f64,
    pub n_mesh: f64,
    pub theta: f64,
    /// Total process count over all sites.
    pub p_total: u64,
    /// Ordered site roster; its length is the site count `s`. The first site
    /// hosts the serial mesh solve.
    pub sites: Vec<MachineConstants>,
    pub network: NetworkConstants,
    /// Fraction of particles sampled for boundary updates (`1/2500`, not `2500`).
    pub r_samp: f64,
    /// Particle-migration bytes per step added to the wide-area volume.
    pub migration_bytes: f64,
}

impl RunSpec {
    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.n_particles >= 1.0) {
            return Err(ModelError::Spec(format!(
                "particle count must be >= 1, got {}",
                self.n_particles
            )));
        }
        if !(self.n_mesh >= 1.0) {
            return Err(ModelError::Spec(format!(
                "mesh cell count must be >= 1, got {}",
                self.n_mesh
            )));
        }
        if !(self.theta > 0.0) {
            return Err(ModelError::Spec(format!("theta must be > 0, got {}", self.theta)));
        }
        if self.sites.is_empty() {
            return Err(ModelError::Spec("site roster is empty".into()));
        }
        if self.p_total == 0 || self.p_total % self.sites.len() as u64 != 0 {
            return Err(ModelError::Spec(format!(
                "process count {} is not a positive multiple of the site count {}",
                self.p_total,
                self.sites.len()
            )));
        }
        if !(self.r_samp > 0.0 && self.r_samp <= 1.0) {
            return Err(ModelError::Spec(format!(
                "sampling ratio must lie in (0, 1], got {}",
                self.r_samp
            )));
        }
        if !(self.migration_bytes >= 0.0) {
            return Err(ModelError::Spec("migration bytes must be >= 0".into()));
        }
        for site in &self.sites {
            site.validate()?;
        }
        self.network.validate()
    }

    /// Same problem with a different roster and total process count.
    pub fn with_layout(&self, sites: Vec<MachineConstants>, p_total: u64) -> RunSpec {
        RunSpec {
            sites,
            p_total,
            ..self.clone()
        }
    }

    /// The first `s` sites of the roster, repeated cyclically when the roster
    /// is shorter than `s`.
    pub fn roster(&self, s: usize) -> Vec<MachineConstants> {
        self.sites.iter().cycle().take(s).cloned().collect()
    }
}

/// True when `theta` lies in the range the interaction fit was made on.
pub fn theta_in_fit_range(theta: f64) -> bool {
    (THETA_FIT_MIN..=THETA_FIT_MAX).contains(&theta)
}

/// Fitted tree-interaction count per step for cosmological particle sets.
pub fn n_interactions(n: f64, m: f64, theta: f64) -> f64 {
    460.0 * n.powf(1.0667) * theta.powf(-1.35) * n.powf(1.0 / 12.0)
        / (m.powf(1.0 / 12.0) * 2.0_f64.sqrt())
}

/// Arithmetic mean of the per-site tree interaction cost.
pub fn mean_tau_tree(sites: &[MachineConstants]) -> f64 {
    sites.iter().map(|s| s.tau_tree).sum::<f64>() / sites.len() as f64
}

pub fn tree_time(spec: &RunSpec) -> f64 {
    TREE_OVERHEAD * mean_tau_tree(&spec.sites)
        * n_interactions(spec.n_particles, spec.n_mesh, spec.theta)
        / spec.p_total as f64
}

/// Serial FFT plus per-particle mesh work, with the first site's constants.
pub fn pm_time(spec: &RunSpec) -> f64 {
    let pm_site = &spec.sites[0];
    pm_site.tau_fft * spec.n_mesh * spec.n_mesh.log2()
        + pm_site.tau_mesh * spec.n_particles / spec.p_total as f64
}

/// Processes that share the local network: all of them on one site, `p/s`
/// when the run spans several sites.
pub fn local_process_count(spec: &RunSpec) -> f64 {
    let s = spec.site_count();
    if s <= 1 {
        spec.p_total as f64
    } else {
        spec.p_total as f64 / s as f64
    }
}

/// Local-network latency and bandwidth terms `(t_l, t_b)`.
pub fn local_comm_time(spec: &RunSpec) -> (f64, f64) {
    let net = &spec.network;
    let q = local_process_count(spec);
    let t_l = net.lambda_lan * (LOCAL_COLLECTIVES * q.log2() + LOCAL_ALL_TO_ALL * q);
    let t_b = local_comm_bytes(spec) / net.sigma_lan;
    (t_l, t_b)
}

/// Local-network data volume per step: remote mesh cells, local essential
/// trees and sampled particles (three coordinates each).
pub fn local_comm_bytes(spec: &RunSpec) -> f64 {
    let n = spec.n_particles;
    let p = spec.p_total as f64;
    4.0 * spec.n_mesh
        + (144.0 / spec.theta + 72.0) * n.powf(2.0 / 3.0) * p.powf(-2.0 / 3.0)
        + 12.0 * n * spec.r_samp
}

/// Wide-area exchanges per step: five ring gathers of `s - 1` hops and four
/// blocking exchanges with each of the two neighbours.
pub fn wan_exchange_count(s: usize) -> u64 {
    if s <= 1 {
        0
    } else {
        5 * s as u64 + 3
    }
}

/// Wide-area volume per step, split by term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WanVolume {
    /// One 4-byte float per mesh cell per site.
    pub mesh: f64,
    /// Local essential tree exchanged with the neighbours.
    pub let_tree: f64,
    /// x coordinate of each sampled particle.
    pub samples: f64,
    pub migration: f64,
}

impl WanVolume {
    pub fn total(&self) -> f64 {
        self.mesh + self.let_tree + self.samples + self.migration
    }
}

/// Model estimate of the bytes a site imports for its local essential tree.
pub fn let_bytes_estimate(n: f64, theta: f64) -> f64 {
    (48.0 / theta + 24.0) * n.powf(2.0 / 3.0)
}

pub fn wan_volume(spec: &RunSpec) -> WanVolume {
    let s = spec.site_count() as f64;
    WanVolume {
        mesh: 4.0 * s * spec.n_mesh,
        let_tree: let_bytes_estimate(spec.n_particles, spec.theta),
        samples: 4.0 * spec.n_particles * spec.r_samp,
        migration: spec.migration_bytes,
    }
}

/// Wide-area latency and bandwidth terms `(w_l, w_b)`; zero on one site.
pub fn wan_comm_time(spec: &RunSpec) -> (f64, f64) {
    let s = spec.site_count();
    if s < 2 {
        return (0.0, 0.0);
    }
    let net = &spec.network;
    let w_l = net.lambda_wan * wan_exchange_count(s) as f64;
    let w_b = wan_volume(spec).total() / net.effective_wan_bandwidth(s);
    (w_l, w_b)
}

/// Per-term prediction of one integration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionBreakdown {
    pub t_tree: f64,
    pub t_pm: f64,
    pub t_l: f64,
    pub t_b: f64,
    pub w_l: f64,
    pub w_b: f64,
    pub t_exec: f64,
    pub n_int: f64,
    /// Set when theta lies outside the range the interaction fit covers.
    pub theta_warning: bool,
}

impl PredictionBreakdown {
    /// Local communication only (`t_l + t_b`).
    pub fn t_comm(&self) -> f64 {
        self.t_l + self.t_b
    }

    /// Local plus wide-area communication.
    pub fn total_comm(&self) -> f64 {
        self.t_comm() + self.w_l + self.w_b
    }
}

pub fn predict_step(spec: &RunSpec) -> Result<PredictionBreakdown, ModelError> {
    spec.validate()?;
    let t_tree = tree_time(spec);
    let t_pm = pm_time(spec);
    let (t_l, t_b) = local_comm_time(spec);
    let (w_l, w_b) = wan_comm_time(spec);
    Ok(PredictionBreakdown {
        t_tree,
        t_pm,
        t_l,
        t_b,
        w_l,
        w_b,
        t_exec: t_tree + t_pm + t_l + t_b + w_l + w_b,
        n_int: n_interactions(spec.n_particles, spec.n_mesh, spec.theta),
        theta_warning: !theta_in_fit_range(spec.theta),
    })
}

/// `t_exec(1, p) / t_exec(s, s p)`: `spec_per_site` describes the one-site
/// run with `p` processes, and the process count grows linearly with `s`.
pub fn speedup(spec_per_site: &RunSpec, s: usize) -> Result<f64, ModelError> {
    let p = spec_per_site.p_total;
    let single = predict_step(&spec_per_site.with_layout(spec_per_site.roster(1), p))?;
    if s <= 1 {
        return Ok(1.0);
    }
    let multi = predict_step(&spec_per_site.with_layout(spec_per_site.roster(s), p * s as u64))?;
    Ok(single.t_exec / multi.t_exec)
}

/// `t_exec(1, p) / t_exec(s, p)` at a fixed total process count.
pub fn efficiency(spec_total: &RunSpec, s: usize) -> Result<f64, ModelError> {
    let p = spec_total.p_total;
    let single = predict_step(&spec_total.with_layout(spec_total.roster(1), p))?;
    if s <= 1 {
        return Ok(1.0);
    }
    let multi = predict_step(&spec_total.with_layout(spec_total.roster(s), p))?;
    Ok(single.t_exec / multi.t_exec)
}

/// Efficiency on `s` sites for each wide-area bandwidth in `sigmas`.
pub fn bandwidth_sweep(
    spec_total: &RunSpec,
    s: usize,
    sigmas: &[f64],
) -> Result<Vec<(f64, f64)>, ModelError> {
    if sigmas.is_empty() {
        return Err(ModelError::Spec("bandwidth list is empty".into()));
    }
    sigmas
        .iter()
        .map(|&sigma| {
            if !(sigma > 0.0) {
                return Err(ModelError::Network(format!(
                    "swept bandwidth must be > 0, got {sigma}"
                )));
            }
            let mut spec = spec_total.clone();
            spec.network.sigma_wan = sigma;
            Ok((sigma, efficiency(&spec, s)?))
        })
        .collect()
}

/// Integration scheme of a stellar (non-cosmological) tree or direct code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StellarKind {
    TreeShared,
    TreeBlock,
    DirectBlock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StellarModelSpec {
    pub kind: StellarKind,
    /// Seconds for one shared-timestep force pass; supplied by the caller.
    pub base_step_time: f64,
    pub n_particles: f64,
    pub block_size_override: Option<f64>,
}

/// Wide-area overhead of a stellar code per shared-step equivalent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StellarWanCost {
    pub w_l_tree: f64,
    pub w_b_tree: f64,
    /// Block steps needed to advance every particle once (1 for shared steps).
    pub steps_per_shared: f64,
}

impl StellarWanCost {
    pub fn total_overhead(&self) -> f64 {
        self.steps_per_shared * (self.w_l_tree + self.w_b_tree)
    }
}

/// Average block size of a block-timestep integrator.
pub fn mean_block_size(n: f64) -> f64 {
    0.2 * n.powf(0.81)
}

pub fn stellar_wan_model(
    spec: &StellarModelSpec,
    s: usize,
    net: &NetworkConstants,
    theta: f64,
    r_samp: f64,
) -> StellarWanCost {
    let n = spec.n_particles;
    let (w_l_tree, w_b_tree) = if s < 2 {
        (0.0, 0.0)
    } else {
        (
            net.lambda_wan * (4.0 * (s as f64 - 1.0) + 4.0),
            ((96.0 / theta + 48.0) * n.powf(2.0 / 3.0) + 4.0 * n * r_samp) / net.sigma_wan,
        )
    };
    let steps_per_shared = match spec.kind {
        StellarKind::TreeShared => 1.0,
        StellarKind::TreeBlock | StellarKind::DirectBlock => {
            n / spec.block_size_override.unwrap_or_else(|| mean_block_size(n))
        }
    };
    StellarWanCost {
        w_l_tree,
        w_b_tree,
        steps_per_shared,
    }
}

/// Memory for tree integration and for the mesh, in bytes.
pub fn memory_estimate(n: f64, m: f64) -> (f64, f64) {
    (TREE_BYTES_PER_PARTICLE * n, MESH_BYTES_PER_CELL * m)
}

/// Column order of prediction CSV output.
pub const PREDICTION_CSV_HEADER: &str = "N,M,p,s,theta,t_tree,t_pm,t_l,t_b,w_l,w_b,t_exec,S,E";

/// One row of prediction CSV output.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub n: f64,
    pub m: f64,
    pub p: u64,
    pub s: usize,
    pub theta: f64,
    pub breakdown: PredictionBreakdown,
    pub speedup: f64,
    pub efficiency: f64,
}

impl PredictionRow {
    pub fn to_csv(&self) -> String {
        let b = &self.breakdown;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.n,
            self.m,
            self.p,
            self.s,
            self.theta,
            b.t_tree,
            b.t_pm,
            b.t_l,
            b.t_b,
            b.w_l,
            b.w_b,
            b.t_exec,
            self.speedup,
            self.efficiency
        )
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn das3_single(n: u64, m: u64, theta: f64, p: u64, r_samp: f64) -> RunSpec {
        RunSpec {
            n_particles: (n * n * n) as f64,
            n_mesh: (m * m * m) as f64,
            theta,
            p_total: p,
            sites: das3_sites()[..1].to_vec(),
            network: das3_network(),
            r_samp,
            migration_bytes: 0.0,
        }
    }

    #[test]
    fn interaction_fit_examples() {
        let n256 = 256f64.powi(3);
        let m128 = 128f64.powi(3);
        let a = n_interactions(n256, m128, 0.3);
        assert!((a / 1.00e11 - 1.0).abs() < 0.01, "{a}");
        let b = n_interactions(n256, m128, 0.5);
        assert!((b / 5.02e10 - 1.0).abs() < 0.01, "{b}");
        let c = n_interactions(512f64.powi(3), m128, 0.3);
        assert!((c / 1.09e12 - 1.0).abs() < 0.01, "{c}");
    }

    #[test]
    fn theta_range_flag() {
        assert!(theta_in_fit_range(0.3));
        assert!(!theta_in_fit_range(0.1));
        assert!(!theta_in_fit_range(0.8));
        let mut spec = das3_single(256, 128, 0.1, 60, 1.0 / 2500.0);
        assert!(predict_step(&spec).unwrap().theta_warning);
        spec.theta = 0.5;
        assert!(!predict_step(&spec).unwrap().theta_warning);
    }

    #[test]
    fn tree_time_examples() {
        let spec = das3_single(256, 128, 0.3, 60, 1.0 / 2500.0);
        assert!((tree_time(&spec) - 11.79).abs() / 11.79 < 0.005);

        let gbbp = gbbp_sites();
        let spec = RunSpec {
            n_particles: 1024f64.powi(3),
            n_mesh: 256f64.powi(3),
            theta: 0.3,
            p_total: 240,
            sites: vec![gbbp["A"].clone()],
            network: gbbp_network(),
            r_samp: 1e-4,
            migration_bytes: 0.0,
        };
        assert!((tree_time(&spec) - 271.0).abs() / 271.0 < 0.005);

        let spec = RunSpec {
            n_particles: 256f64.powi(3),
            n_mesh: 128f64.powi(3),
            p_total: 60,
            sites: vec![gbbp["H"].clone(), gbbp["A"].clone()],
            ..spec
        };
        assert!((tree_time(&spec) - 9.29).abs() / 9.29 < 0.005);
    }

    #[test]
    fn pm_time_examples() {
        let mut spec = das3_single(512, 256, 0.3, 120, 1e-4);
        assert!((pm_time(&spec) - 4.70).abs() < 0.01);
        spec.p_total = u64::MAX;
        let fft_only = 5.0e-9 * 256f64.powi(3) * 24.0;
        assert!((pm_time(&spec) - fft_only).abs() < 1e-9);

        let gbbp = gbbp_sites();
        let spec = RunSpec {
            sites: vec![gbbp["A"].clone()],
            network: gbbp_network(),
            ..das3_single(256, 128, 0.3, 60, 1.0 / 2500.0)
        };
        assert!((pm_time(&spec) - 0.39).abs() < 0.005);
    }

    #[test]
    fn local_comm_examples() {
        let spec = das3_single(256, 128, 0.3, 60, 1.0 / 2500.0);
        let (l, b) = local_comm_time(&spec);
        assert!((l + b - 0.13).abs() < 0.005, "{}", l + b);

        let spec = RunSpec {
            network: gbbp_network(),
            ..spec
        };
        let (l, b) = local_comm_time(&spec);
        assert!((l + b - 0.04).abs() < 0.005, "{}", l + b);

        let spec = RunSpec {
            sites: das3_sites(),
            network: das3_network(),
            ..spec
        };
        assert_eq!(local_process_count(&spec), 12.0);
        let (l, b) = local_comm_time(&spec);
        assert!((l + b - 0.11).abs() < 0.01, "{}", l + b);
    }

    #[test]
    fn wan_comm_examples() {
        let spec = das3_single(256, 128, 0.3, 60, 1.0 / 2500.0);
        assert_eq!(wan_comm_time(&spec), (0.0, 0.0));

        let two = spec.with_layout(das3_sites()[..2].to_vec(), 60);
        let b = predict_step(&two).unwrap();
        assert!((b.total_comm() - 0.73).abs() / 0.73 < 0.02, "{}", b.total_comm());

        let three = spec.with_layout(das3_sites()[..3].to_vec(), 60);
        let b = predict_step(&three).unwrap();
        assert!((b.total_comm() - 1.63).abs() / 1.63 < 0.10, "{}", b.total_comm());
    }

    #[test]
    fn star_topology_divides_only_with_two_or_more_sites() {
        let net = das3_network();
        assert_eq!(net.effective_wan_bandwidth(1), net.sigma_wan);
        assert_eq!(net.effective_wan_bandwidth(2), net.sigma_wan);
        assert_eq!(net.effective_wan_bandwidth(5), net.sigma_wan / 4.0);
        let flat = NetworkConstants {
            star_topology: false,
            ..net
        };
        assert_eq!(flat.effective_wan_bandwidth(5), flat.sigma_wan);
    }

    #[test]
    fn predict_step_examples() {
        let b = predict_step(&das3_single(256, 128, 0.3, 60, 1.0 / 2500.0)).unwrap();
        assert!((b.t_exec - 12.81).abs() / 12.81 < 0.005);
        let b = predict_step(&das3_single(256, 128, 0.5, 60, 1.0 / 2500.0)).unwrap();
        assert!((b.t_exec - 6.93).abs() / 6.93 < 0.005);
        let spec = RunSpec {
            sites: vec![gbbp_sites()["A"].clone()],
            network: gbbp_network(),
            ..das3_single(512, 128, 0.3, 120, 1e-4)
        };
        let b = predict_step(&spec).unwrap();
        assert!((b.t_exec - 59.91).abs() / 59.91 < 0.005);
    }

    #[test]
    fn speedup_and_efficiency_are_one_on_one_site() {
        let spec = global_grid_spec(2048f64.powi(3), 256f64.powi(3), 128);
        assert_eq!(speedup(&spec, 1).unwrap(), 1.0);
        assert_eq!(efficiency(&spec, 1).unwrap(), 1.0);
    }

    #[test]
    fn speedup_headline() {
        let spec = global_grid_spec(2048f64.powi(3), 256f64.powi(3), 128);
        let s16 = speedup(&spec, 16).unwrap();
        assert!((12.0..=14.0).contains(&s16), "{s16}");
        let curve: Vec<f64> = (1..=64).map(|s| speedup(&spec, s).unwrap()).collect();
        let peak = curve
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0
            + 1;
        assert!(peak > 25, "speedup peaks at s = {peak}");
        assert!(curve[63] < curve[peak - 1]);
    }

    #[test]
    fn bandwidth_sweep_is_monotone_and_hits_latency_ceiling() {
        let spec = global_grid_spec(2048f64.powi(3), 256f64.powi(3), 2048);
        let sigmas: Vec<f64> = (1..=40).map(|k| k as f64 * 2.5e7).collect();
        let curve = bandwidth_sweep(&spec, 8, &sigmas).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
        assert!(curve[1].1 > 0.8, "E(8) at 50 MB/s = {}", curve[1].1);

        let mut infinite = spec.clone();
        infinite.network.sigma_wan = f64::INFINITY;
        let t1 = predict_step(&infinite.with_layout(infinite.roster(1), 2048)).unwrap();
        let t8 = predict_step(&infinite.with_layout(infinite.roster(8), 2048)).unwrap();
        let ceiling = efficiency(&infinite, 8).unwrap();
        assert_eq!(ceiling, t1.t_exec / t8.t_exec);
        assert_eq!(t8.w_b, 0.0);
        assert!(curve.last().unwrap().1 < ceiling);
    }

    #[test]
    fn bandwidth_sweep_rejects_bad_input() {
        let spec = global_grid_spec(2048f64.powi(3), 256f64.powi(3), 2048);
        assert!(bandwidth_sweep(&spec, 8, &[]).is_err());
        assert!(bandwidth_sweep(&spec, 8, &[1e8, 0.0]).is_err());
    }

    #[test]
    fn stellar_examples() {
        let net = NetworkConstants {
            lambda_wan: 0.3,
            sigma_wan: 4e8,
            ..global_grid_network()
        };
        let shared = StellarModelSpec {
            kind: StellarKind::TreeShared,
            base_step_time: 10.0,
            n_particles: 2048f64.powi(3),
            block_size_override: None,
        };
        let c = stellar_wan_model(&shared, 4, &net, 0.5, 1e-4);
        assert!((c.w_l_tree - 4.8).abs() < 1e-12);
        assert!((c.w_b_tree - 2.52).abs() < 0.01, "{}", c.w_b_tree);
        assert_eq!(c.steps_per_shared, 1.0);

        let nb = mean_block_size(2048f64.powi(3));
        assert!((nb / 2.23e7 - 1.0).abs() < 0.01, "{nb}");
        let block = StellarModelSpec {
            kind: StellarKind::TreeBlock,
            ..shared.clone()
        };
        let c = stellar_wan_model(&block, 4, &net, 0.5, 1e-4);
        assert!((c.steps_per_shared - 2048f64.powi(3) / nb).abs() < 1e-6);
        assert!((c.total_overhead() - c.steps_per_shared * (4.8 + c.w_b_tree)).abs() < 1e-6);

        let fixed = StellarModelSpec {
            kind: StellarKind::DirectBlock,
            n_particles: 5e6,
            block_size_override: Some(1000.0),
            ..shared
        };
        assert_eq!(stellar_wan_model(&fixed, 2, &net, 0.5, 1e-4).steps_per_shared, 5000.0);
    }

    #[test]
    fn memory_examples() {
        let (tree, mesh) = memory_estimate(2048f64.powi(3), 256f64.powi(3));
        assert!((tree / 850e9 - 1.0).abs() < 0.01, "{tree}");
        assert_eq!(mesh, 4.5 * 256f64.powi(3));
        let (tree, _) = memory_estimate(8192f64.powi(3), 0.0);
        assert!((tree / 54.4e12 - 1.0).abs() < 0.02, "{tree}");
        assert_eq!(memory_estimate(0.0, 0.0), (0.0, 0.0));
    }

    #[test]
    fn validation_errors() {
        let mut spec = das3_single(256, 128, 0.3, 60, 1.0 / 2500.0);
        spec.p_total = 61;
        spec.sites = das3_sites()[..2].to_vec();
        assert!(matches!(predict_step(&spec), Err(ModelError::Spec(_))));
        assert!(MachineConstants::new("x", 0.0, 1.0, 1.0).is_err());
        let mut net = das3_network();
        net.sigma_wan = -1.0;
        assert!(net.validate().is_err());
    }

    #[test]
    fn csv_row_has_fixed_column_count() {
        let spec = das3_single(256, 128, 0.3, 60, 1.0 / 2500.0);
        let row = PredictionRow {
            n: spec.n_particles,
            m: spec.n_mesh,
            p: spec.p_total,
            s: 1,
            theta: spec.theta,
            breakdown: predict_step(&spec).unwrap(),
            speedup: 1.0,
            efficiency: 1.0,
        };
        assert_eq!(
            row.to_csv().split(',').count(),
            PREDICTION_CSV_HEADER.split(',').count()
        );
    }
}
