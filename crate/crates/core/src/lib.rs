//! TreePM gravitational N-body engine that runs over a ring of sites, plus an
//! analytic model of its step time.
//!
//! The crate is organised bottom-up:
//!
//! - [`perf_model`]: closed-form step-time, speedup and efficiency model.
//! - [`nbody`]: particles, Barnes-Hut octree, particle-mesh solver, integrator.
//! - [`decomposition`]: slabs between sites, multisection inside a site, load
//!   balancing and local essential tree export.
//! - [`transport`]: message channels over a simulated wide-area network or
//!   parallel TCP streams.
//! - [`ring`]: the per-step communication phases between sites.
//! - [`harness`]: multi-site experiments and comparison against the model.

pub mod decomposition;
pub mod harness;
pub mod nbody;
pub mod perf_model;
pub mod ring;
pub mod transport;
