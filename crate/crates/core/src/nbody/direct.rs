//! O(N^2) reference accelerations.

use super::kernel::PairKernel;
use super::particles::{ParticleSet, Vec3};
use super::tree::separation;
use super::NbodyError;

pub const DIRECT_CAP: usize = 100_000;

/// Exact pairwise softened accelerations. Without `range_limit` the system is
/// treated as isolated; with it, the minimum image of every pair is used and
/// the short-range split kernel truncates at the limit.
pub fn direct_force_oracle(particles: &ParticleSet, softening: f64, range_limit: Option<f64>) -> Result<Vec<Vec3>, NbodyError> {
    direct_force_capped(particles, softening, range_limit, DIRECT_CAP)
}

pub fn direct_force_capped(
    particles: &ParticleSet,
    softening: f64,
    range_limit: Option<f64>,
    cap: usize,
) -> Result<Vec<Vec3>, NbodyError> {
    let n = particles.len();
    if n > cap {
        return Err(NbodyError::CapExceeded { n, cap });
    }
    let kernel = match range_limit {
        None => PairKernel::Newton { softening },
        Some(r_cut) => PairKernel::ShortRange { softening, r_cut },
    };
    let periodic = range_limit.is_some();
    let l = particles.box_len;
    // sources in ascending id, matching the tree's canonical order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&j| particles.ids[j]);
    let mut acc = vec![[0.0; 3]; n];
    for (i, a) in acc.iter_mut().enumerate() {
        let x = particles.positions[i];
        for &j in &order {
            if j == i {
                continue;
            }
            let d = separation(particles.positions[j], x, periodic, l);
            kernel.accumulate(a, d, particles.masses[j]);
        }
    }
    Ok(acc)
}

/// Softened potential energy of an isolated system, summed over pairs.
pub fn potential_energy(particles: &ParticleSet, softening: f64) -> Result<f64, NbodyError> {
    let n = particles.len();
    if n > DIRECT_CAP {
        return Err(NbodyError::CapExceeded { n, cap: DIRECT_CAP });
    }
    let e2 = softening * softening;
    let mut w = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = separation(particles.positions[j], particles.positions[i], false, particles.box_len);
            w -= particles.masses[i] * particles.masses[j] / (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + e2).sqrt();
        }
    }
    Ok(w)
}
