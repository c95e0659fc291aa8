//! Periodic particle-mesh gravity: cloud-in-cell assignment, FFT Poisson
//! solve, four-point gradient and cloud-in-cell interpolation.

use super::kernel::s2_shape_transform;
use super::particles::{ParticleSet, Vec3};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// Grids of `n^3` cells, stored with the z index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub n: usize,
    pub box_len: f64,
    /// Mass density (mass per unit volume).
    pub density: Vec<f64>,
    pub potential: Vec<f64>,
    pub force: [Vec<f64>; 3],
    /// When set, the long-range filter of the split force with this cutoff
    /// length is applied in Fourier space.
    pub split_cutoff: Option<f64>,
    /// Divide out the assignment and interpolation window.
    pub deconvolve: bool,
}

/// CIC weights of one position: base cell per axis and fractional offset.
#[inline]
fn cic(pos: Vec3, n: usize, h: f64) -> ([usize; 3], [f64; 3]) {
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for k in 0..3 {
        let u = pos[k] / h - 0.5;
        let f = u.floor();
        frac[k] = u - f;
        base[k] = (f as i64).rem_euclid(n as i64) as usize;
    }
    (base, frac)
}

/// The eight (cell index, weight) pairs of a CIC cloud.
#[inline]
fn cic_cells(pos: Vec3, n: usize, h: f64) -> [(usize, f64); 8] {
    let (b, f) = cic(pos, n, h);
    let mut out = [(0usize, 0.0); 8];
    for (c, slot) in out.iter_mut().enumerate() {
        let mut idx = [0usize; 3];
        let mut w = 1.0;
        for k in 0..3 {
            if c >> k & 1 == 1 {
                idx[k] = (b[k] + 1) % n;
                w *= f[k];
            } else {
                idx[k] = b[k];
                w *= 1.0 - f[k];
            }
        }
        *slot = ((idx[0] * n + idx[1]) * n + idx[2], w);
    }
    out
}

impl Mesh {
    pub fn new(n: usize, box_len: f64) -> Self {
        let m = n * n * n;
        Self {
            n,
            box_len,
            density: vec![0.0; m],
            potential: vec![0.0; m],
            force: [vec![0.0; m], vec![0.0; m], vec![0.0; m]],
            split_cutoff: None,
            deconvolve: false,
        }
    }

    pub fn cells(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn cell_width(&self) -> f64 {
        self.box_len / self.n as f64
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    /// Mass on the grid: density summed over cells times the cell volume.
    pub fn total_mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.cell_width().powi(3)
    }

    pub fn clear_density(&mut self) {
        self.density.iter_mut().for_each(|x| *x = 0.0);
    }

    /// Add the particles' CIC clouds to the density grid.
    pub fn assign_density(&mut self, particles: &ParticleSet) {
        let h = self.cell_width();
        let inv_vol = 1.0 / (h * h * h);
        for (p, m) in particles.positions.iter().zip(&particles.masses) {
            for (c, w) in cic_cells(*p, self.n, h) {
                self.density[c] += m * w * inv_vol;
            }
        }
    }

    /// Replace the density grid with a quantized grid's content.
    pub fn load_quantized(&mut self, q: &QuantizedGrid) {
        assert_eq!(q.cells.len(), self.cells(), "grid size mismatch");
        let h = self.cell_width();
        let f = 1.0 / (q.scale * h * h * h);
        for (d, &c) in self.density.iter_mut().zip(&q.cells) {
            *d = c as f64 * f;
        }
    }

    /// Solve the periodic Poisson equation for the potential and fill the
    /// force grids with minus its gradient.
    pub fn solve(&mut self) {
        let n = self.n;
        let l = self.box_len;
        let h = self.cell_width();
        let mut buf: Vec<Complex64> = self.density.iter().map(|&d| Complex64::new(d, 0.0)).collect();
        let mut planner = FftPlanner::new();
        fft3d(&mut buf, n, &mut planner, false);
        let kf = 2.0 * PI / l;
        let wave = |i: usize| -> f64 {
            let m = if i < n.div_ceil(2) { i as f64 } else { i as f64 - n as f64 };
            m * kf
        };
        let sinc = |x: f64| if x.abs() < 1e-12 { 1.0 } else { x.sin() / x };
        for i in 0..n {
            let kx = wave(i);
            for j in 0..n {
                let ky = wave(j);
                for k in 0..n {
                    let kz = wave(k);
                    let idx = (i * n + j) * n + k;
                    let k2 = kx * kx + ky * ky + kz * kz;
                    if k2 == 0.0 {
                        buf[idx] = Complex64::new(0.0, 0.0);
                        continue;
                    }
                    let mut g = -4.0 * PI / k2;
                    if let Some(a) = self.split_cutoff {
                        let s = s2_shape_transform(k2.sqrt(), a);
                        g *= s * s;
                    }
                    if self.deconvolve {
                        let w = sinc(0.5 * kx * h) * sinc(0.5 * ky * h) * sinc(0.5 * kz * h);
                        let w2 = w * w;
                        g /= w2 * w2;
                    }
                    buf[idx] *= g;
                }
            }
        }
        fft3d(&mut buf, n, &mut planner, true);
        let norm = 1.0 / (n * n * n) as f64;
        for (p, c) in self.potential.iter_mut().zip(&buf) {
            *p = c.re * norm;
        }
        self.gradient();
    }

    fn gradient(&mut self) {
        let n = self.n;
        let h = self.cell_width();
        let phi = &self.potential;
        let w = |i: usize, d: isize| ((i as isize + d).rem_euclid(n as isize)) as usize;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let at = |a: usize, b: usize, c: usize| phi[(a * n + b) * n + c];
                    let fd = |m1: f64, p1: f64, m2: f64, p2: f64| -(8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
                    let idx = (i * n + j) * n + k;
                    self.force[0][idx] = fd(at(w(i, -1), j, k), at(w(i, 1), j, k), at(w(i, -2), j, k), at(w(i, 2), j, k));
                    self.force[1][idx] = fd(at(i, w(j, -1), k), at(i, w(j, 1), k), at(i, w(j, -2), k), at(i, w(j, 2), k));
                    self.force[2][idx] = fd(at(i, j, w(k, -1)), at(i, j, w(k, 1)), at(i, j, w(k, -2)), at(i, j, w(k, 2)));
                }
            }
        }
    }

    /// Long-range accelerations at the particle positions.
    pub fn interpolate(&self, particles: &ParticleSet) -> Vec<Vec3> {
        let h = self.cell_width();
        particles
            .positions
            .iter()
            .map(|&p| {
                let mut a = [0.0; 3];
                for (c, w) in cic_cells(p, self.n, h) {
                    for k in 0..3 {
                        a[k] += w * self.force[k][c];
                    }
                }
                a
            })
            .collect()
    }
}

/// In-place 3-D FFT of an `n^3` array with the last index fastest.
pub fn fft3d(buf: &mut [Complex64], n: usize, planner: &mut FftPlanner<f64>, inverse: bool) {
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    // z lines are contiguous
    fft.process(buf);
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                line[j] = buf[(i * n + j) * n + k];
            }
            fft.process(&mut line);
            for j in 0..n {
                buf[(i * n + j) * n + k] = line[j];
            }
        }
    }
    for j in 0..n {
        for k in 0..n {
            for i in 0..n {
                line[i] = buf[(i * n + j) * n + k];
            }
            fft.process(&mut line);
            for i in 0..n {
                buf[(i * n + j) * n + k] = line[i];
            }
        }
    }
}

/// Mass grid in fixed point: each cell holds `mass * scale` as an integer.
/// Integer sums are exact, so grids deposited by different sites combine
/// to the same result in any order.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedGrid {
    pub n: usize,
    pub cells: Vec<u32>,
    pub scale: f64,
}

impl QuantizedGrid {
    /// Scale that maps `total_mass` onto 2^31 units.
    pub fn scale_for(total_mass: f64) -> f64 {
        (1u64 << 31) as f64 / total_mass
    }

    pub fn new(n: usize, scale: f64) -> Self {
        Self {
            n,
            cells: vec![0; n * n * n],
            scale,
        }
    }

    /// Deposit CIC clouds. Each particle's mass is rounded once and its
    /// eight weights are rounded down, with the remainder given to the
    /// heaviest cell, so every particle deposits exactly `round(m * scale)`.
    pub fn deposit(&mut self, particles: &ParticleSet, box_len: f64) {
        let h = box_len / self.n as f64;
        for (p, m) in particles.positions.iter().zip(&particles.masses) {
            let q = (m * self.scale).round() as u64;
            let cells = cic_cells(*p, self.n, h);
            let mut parts = [0u64; 8];
            let mut used = 0u64;
            let mut heaviest = 0;
            for (c, &(_, w)) in cells.iter().enumerate() {
                parts[c] = (w * q as f64).floor() as u64;
                used += parts[c];
                if w > cells[heaviest].1 {
                    heaviest = c;
                }
            }
            parts[heaviest] += q - used.min(q);
            for (c, &(idx, _)) in cells.iter().enumerate() {
                self.cells[idx] = self.cells[idx].wrapping_add(parts[c] as u32);
            }
        }
    }

    pub fn accumulate(&mut self, other: &[u32]) {
        for (a, b) in self.cells.iter_mut().zip(other) {
            *a = a.wrapping_add(*b);
        }
    }

    pub fn total_units(&self) -> u64 {
        self.cells.iter().map(|&c| c as u64).sum()
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.cells.iter().flat_map(|c| c.to_le_bytes()).collect()
    }

    pub fn cells_from_le_bytes(bytes: &[u8]) -> Vec<u32> {
        bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    }
}

/// PM accelerations of `particles` on an `n^3` mesh, optionally filtered for
/// the split force with cutoff `split_cutoff`.
pub fn pm_accelerations(particles: &ParticleSet, n: usize, split_cutoff: Option<f64>) -> Vec<Vec3> {
    let mut mesh = Mesh::new(n, particles.box_len);
    mesh.split_cutoff = split_cutoff;
    mesh.assign_density(particles);
    mesh.solve();
    mesh.interpolate(particles)
}
