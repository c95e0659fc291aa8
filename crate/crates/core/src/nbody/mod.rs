//! Self-gravitating particles in a periodic box: octree, particle-mesh
//! solver, direct-summation oracle and leapfrog integration (`G = 1`).

pub mod direct;
pub mod ic;
pub mod integrate;
pub mod kernel;
pub mod particles;
pub mod pm;
pub mod snapshot;
pub mod tree;

pub use direct::{direct_force_oracle, DIRECT_CAP};
pub use integrate::{integrate_step, DtPolicy, ForceSolver, Solver, StepOutcome};
pub use kernel::{s2_shape_transform, s2_short_range_factor, PairKernel};
pub use particles::{min_image, wrap_coord, ParticleSet, Vec3};
pub use pm::{Mesh, QuantizedGrid};
pub use tree::{ForceResult, Node, NodeKind, OcTree};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NbodyError {
    #[error("invalid particle set: {0}")]
    InvalidParticles(String),
    #[error("cannot build a tree from an empty particle set")]
    EmptyTree,
    #[error("direct summation capped at {cap} particles, got {n}")]
    CapExceeded { n: usize, cap: usize },
    #[error("invalid force parameters: {0}")]
    InvalidParams(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Step-indexed opening angle: the last entry whose step is `<= step` wins.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ThetaSchedule {
    pub entries: Vec<(u64, f64)>,
}

impl ThetaSchedule {
    pub fn new(mut entries: Vec<(u64, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        Self { entries }
    }

    pub fn theta_at(&self, step: u64) -> Option<f64> {
        self.entries
            .iter()
            .take_while(|(s, _)| *s <= step)
            .last()
            .map(|&(_, t)| t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForceParams {
    pub theta: f64,
    pub softening: f64,
    /// Maximum number of particles sharing one interaction list.
    pub ncrit: usize,
    /// Range of the tree force in mesh cell widths.
    pub cutoff_cells: f64,
    pub theta_schedule: Option<ThetaSchedule>,
}

impl Default for ForceParams {
    fn default() -> Self {
        Self {
            theta: 0.5,
            softening: 0.0,
            ncrit: 1000,
            cutoff_cells: 3.0,
            theta_schedule: None,
        }
    }
}

impl ForceParams {
    pub fn validate(&self) -> Result<(), NbodyError> {
        if !(self.theta >= 0.0) {
            return Err(NbodyError::InvalidParams("theta must be >= 0".into()));
        }
        if !(self.cutoff_cells > 0.0) {
            return Err(NbodyError::InvalidParams("cutoff_cells must be > 0".into()));
        }
        if !(self.softening >= 0.0) {
            return Err(NbodyError::InvalidParams("softening must be >= 0".into()));
        }
        if self.ncrit == 0 {
            return Err(NbodyError::InvalidParams("ncrit must be >= 1".into()));
        }
        if let Some(s) = &self.theta_schedule {
            if s.entries.iter().any(|&(_, t)| !(t >= 0.0)) {
                return Err(NbodyError::InvalidParams("scheduled theta must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn theta_at(&self, step: u64) -> f64 {
        self.theta_schedule
            .as_ref()
            .and_then(|s| s.theta_at(step))
            .unwrap_or(self.theta)
    }

    /// Short-range cutoff length for a mesh of `cells_per_side` in a box of side `box_len`.
    pub fn cutoff_length(&self, box_len: f64, cells_per_side: usize) -> f64 {
        self.cutoff_cells * box_len / cells_per_side as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_switches_theta() {
        let p = ForceParams {
            theta: 0.5,
            theta_schedule: Some(ThetaSchedule::new(vec![(10, 0.3), (0, 0.4)])),
            ..Default::default()
        };
        assert_eq!(p.theta_at(0), 0.4);
        assert_eq!(p.theta_at(9), 0.4);
        assert_eq!(p.theta_at(10), 0.3);
        let q = ForceParams::default();
        assert_eq!(q.theta_at(7), 0.5);
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = ForceParams::default();
        p.theta = -0.1;
        assert!(p.validate().is_err());
        p.theta = 0.3;
        p.cutoff_cells = 0.0;
        assert!(p.validate().is_err());
    }
}
