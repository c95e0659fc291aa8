//! Small initial conditions for tests and experiments.

use super::particles::{wrap_coord, ParticleSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// `n_side^3` equal masses on a cubic lattice at cell centres, each displaced
/// by a uniform random offset of at most `noise` lattice spacings per axis.
pub fn lattice(n_side: usize, box_len: f64, total_mass: f64, noise: f64, seed: u64) -> ParticleSet {
    let n = n_side * n_side * n_side;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = box_len / n_side as f64;
    let m = total_mass / n as f64;
    let mut p = ParticleSet::with_capacity(box_len, n);
    let mut id = 0;
    for i in 0..n_side {
        for j in 0..n_side {
            for k in 0..n_side {
                let mut pos = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h, (k as f64 + 0.5) * h];
                if noise > 0.0 {
                    for x in &mut pos {
                        *x = wrap_coord(*x + noise * h * rng.gen_range(-1.0..1.0), box_len);
                    }
                }
                p.push(id, m, pos, [0.0; 3]);
                id += 1;
            }
        }
    }
    p
}

/// Plummer sphere of total mass `total_mass` and scale radius `a`, centred
/// in a box of side `box_len`, in virial equilibrium (`G = 1`). Radii are
/// truncated at `10 a` so the sphere stays inside the box.
pub fn plummer(n: usize, total_mass: f64, a: f64, box_len: f64, seed: u64) -> ParticleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = total_mass / n as f64;
    let c = 0.5 * box_len;
    let mut p = ParticleSet::with_capacity(box_len, n);
    for id in 0..n as u64 {
        let r = loop {
            let x: f64 = rng.gen_range(1e-10..1.0);
            let r = a / (x.powf(-2.0 / 3.0) - 1.0).sqrt();
            if r < 10.0 * a {
                break r;
            }
        };
        let pos = random_direction(&mut rng, r);
        // von Neumann rejection for q = v / v_esc on g(q) = q^2 (1 - q^2)^3.5
        let q = loop {
            let q: f64 = rng.gen();
            let y: f64 = rng.gen_range(0.0..0.1);
            if y < q * q * (1.0 - q * q).powf(3.5) {
                break q;
            }
        };
        let v_esc = (2.0 * total_mass / (r * r + a * a).sqrt()).sqrt();
        let vel = random_direction(&mut rng, q * v_esc);
        p.push(id, m, [c + pos[0], c + pos[1], c + pos[2]], vel);
    }
    // remove the residual bulk motion
    let mom = p.momentum();
    for v in &mut p.velocities {
        for k in 0..3 {
            v[k] -= mom[k] / total_mass;
        }
    }
    p
}

fn random_direction(rng: &mut impl Rng, r: f64) -> [f64; 3] {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..2.0 * PI);
    let s = (1.0 - z * z).sqrt();
    [r * s * phi.cos(), r * s * phi.sin(), r * z]
}
