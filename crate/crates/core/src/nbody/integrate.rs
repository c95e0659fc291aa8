//! Shared-timestep kick-drift-kick leapfrog.

use super::direct::direct_force_oracle;
use super::particles::{ParticleSet, Vec3};
use super::pm::Mesh;
use super::tree::{tree_force, OcTree};
use super::{ForceParams, NbodyError};

/// Source of accelerations for the integrator.
pub trait ForceSolver {
    /// Accelerations of every particle and the number of interactions evaluated.
    fn accelerations(&mut self, particles: &ParticleSet, step: u64) -> Result<(Vec<Vec3>, u64), NbodyError>;
    fn softening(&self) -> f64;
}

/// Built-in force solvers.
#[derive(Debug, Clone, PartialEq)]
pub enum Solver {
    /// Isolated direct summation.
    Direct { softening: f64 },
    /// Isolated Barnes-Hut tree.
    Tree { params: ForceParams, n_leaf: usize },
    /// Periodic short-range tree plus a filtered `mesh_n^3` mesh.
    TreePm { params: ForceParams, n_leaf: usize, mesh_n: usize },
}

impl ForceSolver for Solver {
    fn accelerations(&mut self, particles: &ParticleSet, step: u64) -> Result<(Vec<Vec3>, u64), NbodyError> {
        match self {
            Solver::Direct { softening } => {
                let a = direct_force_oracle(particles, *softening, None)?;
                let n = particles.len() as u64;
                Ok((a, n * n.saturating_sub(1)))
            }
            Solver::Tree { params, n_leaf } => {
                let p = ForceParams { theta: params.theta_at(step), ..params.clone() };
                let tree = OcTree::build(particles, *n_leaf)?;
                let f = tree_force(&tree, particles, &p, None);
                Ok((f.accelerations, f.interaction_count))
            }
            Solver::TreePm { params, n_leaf, mesh_n } => {
                let p = ForceParams { theta: params.theta_at(step), ..params.clone() };
                let r_cut = p.cutoff_length(particles.box_len, *mesh_n);
                let tree = OcTree::build(particles, *n_leaf)?;
                let f = tree_force(&tree, particles, &p, Some(r_cut));
                let mut mesh = Mesh::new(*mesh_n, particles.box_len);
                mesh.split_cutoff = Some(r_cut);
                mesh.assign_density(particles);
                mesh.solve();
                let long = mesh.interpolate(particles);
                let acc = f
                    .accelerations
                    .iter()
                    .zip(&long)
                    .map(|(s, l)| [s[0] + l[0], s[1] + l[1], s[2] + l[2]])
                    .collect();
                Ok((acc, f.interaction_count))
            }
        }
    }

    fn softening(&self) -> f64 {
        match self {
            Solver::Direct { softening } => *softening,
            Solver::Tree { params, .. } | Solver::TreePm { params, .. } => params.softening,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DtPolicy {
    Fixed(f64),
    /// `dt = eta * min_i sqrt(softening / |a_i|)`, capped at `dt_max`.
    Adaptive { eta: f64, dt_max: f64 },
}

pub const DEFAULT_ETA: f64 = 0.1;

impl DtPolicy {
    pub fn adaptive(dt_max: f64) -> Self {
        DtPolicy::Adaptive { eta: DEFAULT_ETA, dt_max }
    }

    pub fn dt(&self, accelerations: &[Vec3], softening: f64) -> f64 {
        match *self {
            DtPolicy::Fixed(dt) => dt,
            DtPolicy::Adaptive { eta, dt_max } => {
                let amax = max_acceleration(accelerations);
                adaptive_dt(amax, softening, eta, dt_max)
            }
        }
    }
}

pub fn max_acceleration(accelerations: &[Vec3]) -> f64 {
    accelerations
        .iter()
        .map(|a| (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt())
        .fold(0.0, f64::max)
}

/// Shared step from the largest acceleration; `dt_max` when nothing accelerates.
pub fn adaptive_dt(max_accel: f64, softening: f64, eta: f64, dt_max: f64) -> f64 {
    if !(max_accel > 0.0) || !(softening > 0.0) {
        return dt_max;
    }
    (eta * (softening / max_accel).sqrt()).min(dt_max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: ParticleSet,
    pub dt: f64,
    /// Accelerations at the new positions, reusable as the next step's first kick.
    pub accelerations: Vec<Vec3>,
    pub interaction_count: u64,
}

/// One kick-drift-kick step. `cached` holds accelerations at the current
/// positions from the previous step, if available.
pub fn integrate_step<S: ForceSolver>(
    state: &ParticleSet,
    solver: &mut S,
    dt_policy: DtPolicy,
    cached: Option<&[Vec3]>,
    step: u64,
) -> Result<StepOutcome, NbodyError> {
    let mut count = 0;
    let a0 = match cached {
        Some(a) => a.to_vec(),
        None => {
            let (a, c) = solver.accelerations(state, step)?;
            count += c;
            a
        }
    };
    let dt = dt_policy.dt(&a0, solver.softening());
    let mut next = state.clone();
    for (v, a) in next.velocities.iter_mut().zip(&a0) {
        for k in 0..3 {
            v[k] += 0.5 * dt * a[k];
        }
    }
    for (x, v) in next.positions.iter_mut().zip(&next.velocities) {
        for k in 0..3 {
            x[k] += dt * v[k];
        }
    }
    next.wrap();
    let (a1, c) = solver.accelerations(&next, step + 1)?;
    count += c;
    for (v, a) in next.velocities.iter_mut().zip(&a1) {
        for k in 0..3 {
            v[k] += 0.5 * dt * a[k];
        }
    }
    Ok(StepOutcome {
        state: next,
        dt,
        accelerations: a1,
        interaction_count: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nbody::direct::potential_energy;
    use crate::nbody::ic;
    use std::f64::consts::PI;

    #[test]
    fn free_drift() {
        let mut p = ParticleSet::new(10.0);
        p.push(0, 1.0, [1.0, 2.0, 3.0], [0.5, -0.25, 0.0]);
        let mut s = Solver::Direct { softening: 0.0 };
        let out = integrate_step(&p, &mut s, DtPolicy::Fixed(0.1), None, 0).unwrap();
        assert_eq!(out.state.positions[0], [1.05, 1.975, 3.0]);
        assert_eq!(out.state.velocities[0], [0.5, -0.25, 0.0]);
    }

    #[test]
    fn zero_force_falls_back_to_dt_max() {
        let mut p = ParticleSet::new(10.0);
        p.push(0, 1.0, [1.0; 3], [0.0; 3]);
        let mut s = Solver::Direct { softening: 0.1 };
        let out = integrate_step(&p, &mut s, DtPolicy::adaptive(0.25), None, 0).unwrap();
        assert_eq!(out.dt, 0.25);
    }

    #[test]
    fn adaptive_dt_formula() {
        assert!((adaptive_dt(4.0, 0.01, 0.1, 1.0) - 0.1 * (0.01f64 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(adaptive_dt(1e-12, 0.01, 0.1, 1.0), 1.0);
    }

    #[test]
    fn circular_orbit_keeps_radius() {
        // two half masses at unit separation: omega = 1, period 2 pi
        let c = 50.0;
        let mut p = ParticleSet::new(100.0);
        p.push(0, 0.5, [c - 0.5, c, c], [0.0, -0.5, 0.0]);
        p.push(1, 0.5, [c + 0.5, c, c], [0.0, 0.5, 0.0]);
        let mut s = Solver::Direct { softening: 0.0 };
        let dt = 2.0 * PI / 1000.0;
        let mut cached = None;
        let mut state = p;
        for step in 0..1000 {
            let out = integrate_step(&state, &mut s, DtPolicy::Fixed(dt), cached.as_deref(), step).unwrap();
            state = out.state;
            cached = Some(out.accelerations);
            let d: f64 = (0..3).map(|k| (state.positions[0][k] - state.positions[1][k]).powi(2)).sum::<f64>().sqrt();
            assert!((d - 1.0).abs() < 1e-3, "step {step}: separation {d}");
        }
    }

    #[test]
    fn isolated_momentum_is_conserved() {
        let mut state = ic::plummer(512, 1.0, 1.0, 100.0, 11);
        let params = ForceParams { theta: 0.0, softening: 0.05, ncrit: 64, ..Default::default() };
        let mut s = Solver::Tree { params, n_leaf: 10 };
        let p0 = state.momentum();
        let mut cached: Option<Vec<Vec3>> = None;
        for step in 0..100 {
            let out = integrate_step(&state, &mut s, DtPolicy::Fixed(0.01), cached.as_deref(), step).unwrap();
            state = out.state;
            cached = Some(out.accelerations);
        }
        let p1 = state.momentum();
        let drift = ((p1[0] - p0[0]).powi(2) + (p1[1] - p0[1]).powi(2) + (p1[2] - p0[2]).powi(2)).sqrt();
        assert!(drift / 100.0 < 1e-10, "drift {drift}");
    }

    #[test]
    fn plummer_energy_is_conserved() {
        let eps = 0.05;
        let mut state = ic::plummer(1024, 1.0, 1.0, 100.0, 12);
        let params = ForceParams { theta: 0.3, softening: eps, ncrit: 64, ..Default::default() };
        let mut s = Solver::Tree { params, n_leaf: 10 };
        let e0 = state.kinetic_energy() + potential_energy(&state, eps).unwrap();
        let mut cached: Option<Vec<Vec3>> = None;
        for step in 0..100 {
            let out = integrate_step(&state, &mut s, DtPolicy::Fixed(0.01), cached.as_deref(), step).unwrap();
            state = out.state;
            cached = Some(out.accelerations);
        }
        let e1 = state.kinetic_energy() + potential_energy(&state, eps).unwrap();
        assert!(((e1 - e0) / e0).abs() < 1e-2, "dE/E = {}", (e1 - e0) / e0);
    }

    #[test]
    fn lattice_treepm_null_force() {
        let p = ic::lattice(8, 1.0, 1.0, 0.0, 0);
        let params = ForceParams { theta: 0.5, softening: 0.01, ncrit: 64, ..Default::default() };
        let mut s = Solver::TreePm { params, n_leaf: 8, mesh_n: 16 };
        let (a, _) = s.accelerations(&p, 0).unwrap();
        // pair force at the lattice spacing
        let scale = p.masses[0] / (1.0f64 / 8.0).powi(2);
        for x in a.iter().flatten() {
            assert!(x.abs() < 1e-6 * scale, "{x}");
        }
    }
}
