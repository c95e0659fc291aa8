//! Recursive multisection of a site's slab over its processes.

use super::{DecompositionError, SiteSlab};
use crate::nbody::{ParticleSet, Vec3};

pub const MAX_SECTIONS_PER_AXIS: usize = 64;

/// Box owned by one process.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessDomain {
    pub lo: Vec3,
    pub hi: Vec3,
    pub rank: usize,
    pub count: usize,
}

impl ProcessDomain {
    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.lo[k] && p[k] < self.hi[k])
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|k| self.hi[k] - self.lo[k]).product()
    }
}

/// Split `p` into at most three section counts, as equal as the prime
/// factors allow, largest first.
pub fn factorize_sections(p: usize) -> Result<Vec<usize>, DecompositionError> {
    if p == 0 {
        return Err(DecompositionError::Invalid("process count must be >= 1".into()));
    }
    let mut primes = Vec::new();
    let mut r = p;
    let mut d = 2;
    while d * d <= r {
        while r % d == 0 {
            primes.push(d);
            r /= d;
        }
        d += 1;
    }
    if r > 1 {
        primes.push(r);
    }
    primes.sort_unstable_by(|a, b| b.cmp(a));
    let mut bins = [1usize; 3];
    for q in primes {
        let smallest = (0..3).min_by_key(|&i| bins[i]).unwrap();
        bins[smallest] *= q;
    }
    let mut factors: Vec<usize> = bins.into_iter().filter(|&b| b > 1).collect();
    factors.sort_unstable_by(|a, b| b.cmp(a));
    if factors.is_empty() {
        factors.push(1);
    }
    if factors.iter().any(|&f| f > MAX_SECTIONS_PER_AXIS) {
        return Err(DecompositionError::Unfactorizable {
            p,
            factors,
            max: MAX_SECTIONS_PER_AXIS,
        });
    }
    Ok(factors)
}

/// Divide the slab into `p_local` boxes of nearly equal particle count.
/// Each level cuts the current box along its longest axis into the next
/// section count, at midpoints between the order statistics of that axis.
pub fn multisection_decompose(
    particles: &ParticleSet,
    slab: &SiteSlab,
    p_local: usize,
) -> Result<Vec<ProcessDomain>, DecompositionError> {
    let factors = factorize_sections(p_local)?;
    let l = particles.box_len;
    let idx: Vec<usize> = (0..particles.len()).collect();
    let mut out = Vec::with_capacity(p_local);
    split(particles, idx, [slab.lo, 0.0, 0.0], [slab.hi, l, l], &factors, &mut out);
    for (r, d) in out.iter_mut().enumerate() {
        d.rank = r;
    }
    Ok(out)
}

fn split(particles: &ParticleSet, idx: Vec<usize>, lo: Vec3, hi: Vec3, factors: &[usize], out: &mut Vec<ProcessDomain>) {
    let Some((&f, rest)) = factors.split_first() else {
        out.push(ProcessDomain {
            lo,
            hi,
            rank: 0,
            count: idx.len(),
        });
        return;
    };
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
        .unwrap();
    let mut sorted = idx;
    sorted.sort_by(|&a, &b| particles.positions[a][axis].total_cmp(&particles.positions[b][axis]));
    let n = sorted.len();
    let mut cuts = vec![lo[axis]];
    for j in 1..f {
        let k = ((j * n) as f64 / f as f64).round() as usize;
        let c = if n == 0 {
            lo[axis] + (hi[axis] - lo[axis]) * j as f64 / f as f64
        } else if k == 0 {
            particles.positions[sorted[0]][axis]
        } else if k >= n {
            particles.positions[sorted[n - 1]][axis]
        } else {
            0.5 * (particles.positions[sorted[k - 1]][axis] + particles.positions[sorted[k]][axis])
        };
        let prev = *cuts.last().unwrap();
        cuts.push(c.clamp(prev, hi[axis]));
    }
    cuts.push(hi[axis]);
    let mut start = 0;
    for j in 0..f {
        let (a, b) = (cuts[j], cuts[j + 1]);
        let end = if j + 1 == f {
            n
        } else {
            start + sorted[start..].partition_point(|&i| particles.positions[i][axis] < b)
        };
        let mut clo = lo;
        let mut chi = hi;
        clo[axis] = a;
        chi[axis] = b;
        split(particles, sorted[start..end].to_vec(), clo, chi, rest, out);
        start = end;
    }
}
