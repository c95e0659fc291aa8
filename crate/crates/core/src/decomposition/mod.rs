//! Two-level domain decomposition: one x-slab per site, recursive
//! multisection inside a site, sample-based load balancing between sites,
//! and local essential tree export to neighbouring sites.

pub mod let_export;
pub mod multisection;

pub use let_export::{build_local_essential_tree, decode_let, encode_let, LetExport};
pub use multisection::{factorize_sections, multisection_decompose, ProcessDomain, MAX_SECTIONS_PER_AXIS};

use crate::nbody::{min_image, wrap_coord, ParticleSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DecompositionError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("cannot split {p} processes into at most three sections of <= {max}: factors {factors:?}")]
    Unfactorizable { p: usize, factors: Vec<usize>, max: usize },
    #[error("particle {id} at x = {x} is more than one slab away from site {site}")]
    MissedMigration { id: u64, x: f64, site: usize },
}

/// The x-range `[lo, hi)` owned by one site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteSlab {
    pub site: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
    /// Force calculation time of the last step, in seconds.
    pub t_calc: f64,
}

impl SiteSlab {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x < self.hi
    }

    /// Periodic distance along x from `x` to the nearest point of the slab.
    pub fn x_distance(&self, x: f64, box_len: f64) -> f64 {
        if self.contains(x) {
            return 0.0;
        }
        let to_lo = min_image(self.lo - x, box_len).abs();
        let to_hi = min_image(x - self.hi, box_len).abs();
        to_lo.min(to_hi)
    }

    /// Periodic gap along x between `[a, b]` and the slab, zero on overlap.
    pub fn interval_gap(&self, a: f64, b: f64, box_len: f64) -> f64 {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let sc = 0.5 * (self.lo + self.hi);
        let sh = 0.5 * (self.hi - self.lo);
        (min_image(c - sc, box_len).abs() - h - sh).max(0.0)
    }
}

/// `s` equal slabs over `[0, box_len)`.
pub fn equal_slabs(s: usize, box_len: f64) -> Vec<SiteSlab> {
    (0..s)
        .map(|i| SiteSlab {
            site: i,
            lo: box_len * i as f64 / s as f64,
            hi: if i + 1 == s { box_len } else { box_len * (i + 1) as f64 / s as f64 },
            count: 0,
            t_calc: 0.0,
        })
        .collect()
}

/// Check that the slabs tile `[0, box_len)` in site order.
pub fn validate_tiling(slabs: &[SiteSlab], box_len: f64) -> Result<(), DecompositionError> {
    if slabs.is_empty() {
        return Err(DecompositionError::Invalid("no slabs".into()));
    }
    if slabs[0].lo != 0.0 || slabs[slabs.len() - 1].hi != box_len {
        return Err(DecompositionError::Invalid("slabs do not span the box".into()));
    }
    for (i, s) in slabs.iter().enumerate() {
        if s.site != i {
            return Err(DecompositionError::Invalid(format!("slab {i} has site index {}", s.site)));
        }
        if !(s.hi > s.lo) {
            return Err(DecompositionError::Invalid(format!("slab {i} is empty")));
        }
        if i > 0 && slabs[i - 1].hi != s.lo {
            return Err(DecompositionError::Invalid(format!("gap or overlap before slab {i}")));
        }
    }
    Ok(())
}

/// Sampled x coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub xs: Vec<f64>,
    pub r_samp: f64,
}

impl SampleSet {
    pub fn merge(parts: impl IntoIterator<Item = SampleSet>) -> SampleSet {
        let mut xs = Vec::new();
        let mut r_samp = 1.0;
        for p in parts {
            xs.extend(p.xs);
            r_samp = p.r_samp;
        }
        SampleSet { xs, r_samp }
    }
}

pub fn sample_stride(r_samp: f64) -> usize {
    ((1.0 / r_samp).round() as usize).max(1)
}

/// Every k-th particle in id order, `k = round(1 / r_samp)`, starting with the first.
pub fn sample_particles(particles: &ParticleSet, r_samp: f64) -> Result<SampleSet, DecompositionError> {
    if !(r_samp > 0.0 && r_samp <= 1.0) {
        return Err(DecompositionError::Invalid(format!("r_samp {r_samp} outside (0, 1]")));
    }
    let k = sample_stride(r_samp);
    let mut order: Vec<usize> = (0..particles.len()).collect();
    order.sort_by_key(|&i| particles.ids[i]);
    let xs = order.iter().step_by(k).map(|&i| particles.positions[i][0]).collect();
    Ok(SampleSet { xs, r_samp })
}

/// Particles whose id is a multiple of `k = round(1 / r_samp)`, in id order.
/// Unlike [`sample_particles`], the union over sites does not depend on how
/// particles are distributed: a system of `N` ids `0..N` yields `ceil(N / k)`
/// samples in total.
pub fn sample_by_id(particles: &ParticleSet, r_samp: f64) -> Result<SampleSet, DecompositionError> {
    if !(r_samp > 0.0 && r_samp <= 1.0) {
        return Err(DecompositionError::Invalid(format!("r_samp {r_samp} outside (0, 1]")));
    }
    let k = sample_stride(r_samp) as u64;
    let mut picked: Vec<(u64, f64)> = particles
        .ids
        .iter()
        .zip(&particles.positions)
        .filter(|(id, _)| *id % k == 0)
        .map(|(&id, p)| (id, p[0]))
        .collect();
    picked.sort_by_key(|e| e.0);
    Ok(SampleSet {
        xs: picked.into_iter().map(|e| e.1).collect(),
        r_samp,
    })
}

/// Per-site particle targets proportional to `n_i / t_i`: each site's
/// particle rate under its current load. When every site holds the same
/// count this reduces to `N_i` proportional to `1 / t_i`.
pub fn target_counts(loads: &[f64], counts: &[u64], total: u64) -> Vec<f64> {
    let all_zero = counts.iter().all(|&c| c == 0);
    let rates: Vec<f64> = loads
        .iter()
        .zip(counts)
        .map(|(&t, &n)| if all_zero { 1.0 / t } else { n as f64 / t })
        .collect();
    let sum: f64 = rates.iter().sum();
    rates.iter().map(|r| total as f64 * r / sum).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryUpdate {
    pub slabs: Vec<SiteSlab>,
    /// Set when the samples could not place boundaries (all equal).
    pub degenerate: bool,
}

/// New slab boundaries from the gathered samples and per-site loads.
///
/// Each interior boundary is placed at the sample order statistic that
/// realises the cumulative target count, moved by at most `move_limit`, and
/// kept at least `min_width` from its neighbours. The first slab always
/// starts at 0 and the last ends at `box_len`.
pub fn update_site_boundaries(
    samples: &SampleSet,
    loads: &[f64],
    current: &[SiteSlab],
    move_limit: f64,
    min_width: f64,
    box_len: f64,
) -> Result<BoundaryUpdate, DecompositionError> {
    let s = current.len();
    if loads.len() != s {
        return Err(DecompositionError::Invalid(format!("{} loads for {s} slabs", loads.len())));
    }
    if loads.iter().any(|&t| !(t > 0.0)) {
        return Err(DecompositionError::Invalid("loads must be positive".into()));
    }
    if samples.xs.is_empty() {
        return Err(DecompositionError::Invalid("no samples".into()));
    }
    let mut xs = samples.xs.clone();
    xs.sort_by(f64::total_cmp);
    let n_s = xs.len();
    if xs[0] == xs[n_s - 1] || s == 1 {
        return Ok(BoundaryUpdate {
            slabs: current.to_vec(),
            degenerate: s > 1,
        });
    }
    let counts: Vec<u64> = current.iter().map(|c| c.count).collect();
    let total: u64 = counts.iter().sum::<u64>().max(1);
    let targets = target_counts(loads, &counts, total);
    let mut bounds: Vec<f64> = current.iter().map(|c| c.lo).chain([box_len]).collect();
    let mut cum = 0.0;
    for j in 1..s {
        cum += targets[j - 1];
        let k = ((cum / total as f64) * n_s as f64).round() as usize;
        let want = if k == 0 {
            xs[0]
        } else if k >= n_s {
            xs[n_s - 1]
        } else {
            0.5 * (xs[k - 1] + xs[k])
        };
        let old = current[j].lo;
        bounds[j] = want.clamp(old - move_limit, old + move_limit);
    }
    // keep every slab at least min_width wide
    for j in 1..s {
        bounds[j] = bounds[j].max(bounds[j - 1] + min_width);
    }
    for j in (1..s).rev() {
        bounds[j] = bounds[j].min(bounds[j + 1] - min_width);
    }
    if (1..=s).any(|j| bounds[j] <= bounds[j - 1]) {
        return Err(DecompositionError::Invalid(format!(
            "{s} slabs of width >= {min_width} do not fit in {box_len}"
        )));
    }
    let slabs = (0..s)
        .map(|i| {
            let (lo, hi) = (bounds[i], bounds[i + 1]);
            let inside = xs.iter().filter(|&&x| x >= lo && x < hi).count();
            SiteSlab {
                site: i,
                lo,
                hi,
                count: (inside as f64 / n_s as f64 * total as f64).round() as u64,
                t_calc: current[i].t_calc,
            }
        })
        .collect();
    Ok(BoundaryUpdate { slabs, degenerate: false })
}

/// Indices of particles that stay and that move to the left or right neighbour.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Migration {
    pub stay: Vec<usize>,
    pub to_left: Vec<usize>,
    pub to_right: Vec<usize>,
}

/// Sort particles of `site` by destination under periodic wraparound.
pub fn select_migrants(
    particles: &ParticleSet,
    slabs: &[SiteSlab],
    site: usize,
) -> Result<Migration, DecompositionError> {
    let s = slabs.len();
    let l = particles.box_len;
    let me = &slabs[site];
    let left = &slabs[(site + s - 1) % s];
    let right = &slabs[(site + 1) % s];
    let mut m = Migration::default();
    for (i, p) in particles.positions.iter().enumerate() {
        let x = wrap_coord(p[0], l);
        if me.contains(x) {
            m.stay.push(i);
            continue;
        }
        let in_left = left.contains(x);
        let in_right = right.contains(x);
        if in_left && in_right {
            // two sites: go the shorter way around
            let past_hi = wrap_coord(x - me.hi, l);
            let before_lo = wrap_coord(me.lo - x, l);
            if past_hi < before_lo {
                m.to_right.push(i);
            } else {
                m.to_left.push(i);
            }
        } else if in_right {
            m.to_right.push(i);
        } else if in_left {
            m.to_left.push(i);
        } else {
            return Err(DecompositionError::MissedMigration {
                id: particles.ids[i],
                x,
                site,
            });
        }
    }
    Ok(m)
}

pub const DECOMPOSITION_CSV_HEADER: &str = "step,site,lo,hi,count,t_calc";

pub fn decomposition_csv_rows(step: u64, slabs: &[SiteSlab]) -> Vec<String> {
    slabs
        .iter()
        .map(|s| format!("{step},{},{},{},{},{}", s.site, s.lo, s.hi, s.count, s.t_calc))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize, seed: u64) -> ParticleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParticleSet::with_capacity(1.0, n);
        for i in 0..n {
            p.push(i as u64, 1.0, [rng.gen(), rng.gen(), rng.gen()], [0.0; 3]);
        }
        p
    }

    #[test]
    fn sampling_counts() {
        let p = uniform(10_000, 1);
        assert_eq!(sample_particles(&p, 1.0).unwrap().xs.len(), 10_000);
        assert_eq!(sample_particles(&p, 0.01).unwrap().xs.len(), 100);
        assert!(sample_particles(&p, 0.0).is_err());
    }

    #[test]
    fn sample_histogram_matches_population() {
        let p = uniform(100_000, 2);
        let mut s = sample_particles(&p, 0.01).unwrap().xs;
        s.sort_by(f64::total_cmp);
        // Kolmogorov-Smirnov distance against the full empirical distribution
        let mut all: Vec<f64> = p.positions.iter().map(|x| x[0]).collect();
        all.sort_by(f64::total_cmp);
        let mut d: f64 = 0.0;
        for (i, &x) in s.iter().enumerate() {
            let f_all = all.partition_point(|&y| y <= x) as f64 / all.len() as f64;
            d = d.max((f_all - (i + 1) as f64 / s.len() as f64).abs());
            d = d.max((f_all - i as f64 / s.len() as f64).abs());
        }
        assert!(d < 0.05, "KS distance {d}");
    }

    #[test]
    fn eq_loads_split_in_half() {
        let p = uniform(10_000, 3);
        let samples = sample_particles(&p, 0.1).unwrap();
        let mut cur = equal_slabs(2, 1.0);
        cur[1].lo = 0.3;
        cur[0].hi = 0.3;
        cur[0].count = 5000;
        cur[1].count = 5000;
        let out = update_site_boundaries(&samples, &[2.0, 2.0], &cur, 1.0, 0.01, 1.0).unwrap();
        assert!((out.slabs[1].lo - 0.5).abs() < 0.02);
        validate_tiling(&out.slabs, 1.0).unwrap();
    }

    #[test]
    fn target_counts_follow_inverse_load() {
        let t = target_counts(&[1.0, 3.0], &[2000, 2000], 4000);
        assert!((t[0] - 3000.0).abs() < 1e-9 && (t[1] - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn unequal_loads_move_boundary() {
        let p = uniform(40_000, 4);
        let samples = sample_particles(&p, 0.1).unwrap();
        let mut cur = equal_slabs(2, 1.0);
        cur[0].count = 2000;
        cur[1].count = 2000;
        let out = update_site_boundaries(&samples, &[1.0, 3.0], &cur, 1.0, 0.01, 1.0).unwrap();
        assert!((out.slabs[1].lo - 0.75).abs() < 0.01);
        assert!((out.slabs[0].count as f64 - 3000.0).abs() < 100.0);
    }

    #[test]
    fn zero_move_limit_keeps_slabs() {
        let p = uniform(1000, 5);
        let samples = sample_particles(&p, 0.1).unwrap();
        let mut cur = equal_slabs(3, 1.0);
        for c in &mut cur {
            c.count = 100;
        }
        let out = update_site_boundaries(&samples, &[1.0, 5.0, 2.0], &cur, 0.0, 0.01, 1.0).unwrap();
        for (a, b) in out.slabs.iter().zip(&cur) {
            assert_eq!((a.lo, a.hi), (b.lo, b.hi));
        }
    }

    #[test]
    fn degenerate_samples_are_flagged() {
        let samples = SampleSet { xs: vec![0.5; 10], r_samp: 1.0 };
        let cur = equal_slabs(2, 1.0);
        let out = update_site_boundaries(&samples, &[1.0, 1.0], &cur, 0.1, 0.01, 1.0).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.slabs, cur);
    }

    #[test]
    fn equal_loads_are_idempotent() {
        let p = uniform(20_000, 6);
        let samples = sample_particles(&p, 0.05).unwrap();
        let mut cur = equal_slabs(4, 1.0);
        for c in &mut cur {
            c.count = 5000;
        }
        let once = update_site_boundaries(&samples, &[1.0; 4], &cur, 0.05, 0.01, 1.0).unwrap();
        let twice = update_site_boundaries(&samples, &[1.0; 4], &once.slabs, 0.05, 0.01, 1.0).unwrap();
        for (a, b) in once.slabs.iter().zip(&twice.slabs) {
            assert_eq!((a.lo, a.hi), (b.lo, b.hi));
        }
    }

    #[test]
    fn balance_converges_for_two_to_one_speeds() {
        let p = uniform(20_000, 7);
        let speed = [2.0, 1.0];
        let mut slabs = equal_slabs(2, 1.0);
        let mut times = [0.0; 2];
        for _ in 0..20 {
            for s in slabs.iter_mut() {
                s.count = p.positions.iter().filter(|x| s.contains(x[0])).count() as u64;
            }
            for i in 0..2 {
                times[i] = slabs[i].count as f64 / speed[i];
                slabs[i].t_calc = times[i];
            }
            let parts: Vec<SampleSet> = (0..2)
                .map(|i| {
                    let idx: Vec<usize> = (0..p.len()).filter(|&j| slabs[i].contains(p.positions[j][0])).collect();
                    sample_particles(&p.select(&idx), 0.01).unwrap()
                })
                .collect();
            let merged = SampleSet::merge(parts);
            slabs = update_site_boundaries(&merged, &times, &slabs, 0.05, 0.05, 1.0).unwrap().slabs;
        }
        for s in slabs.iter_mut() {
            s.count = p.positions.iter().filter(|x| s.contains(x[0])).count() as u64;
        }
        let t0 = slabs[0].count as f64 / speed[0];
        let t1 = slabs[1].count as f64 / speed[1];
        assert!((t0 - t1).abs() / t0.max(t1) < 0.05, "{t0} vs {t1}");
    }

    #[test]
    fn migrants_go_to_the_right_neighbour() {
        let slabs = equal_slabs(4, 1.0);
        let mut p = ParticleSet::new(1.0);
        p.push(0, 1.0, [0.3, 0.5, 0.5], [0.0; 3]);
        p.push(1, 1.0, [0.5 + 1e-9, 0.5, 0.5], [0.0; 3]);
        p.push(2, 1.0, [0.2, 0.5, 0.5], [0.0; 3]);
        let m = select_migrants(&p, &slabs, 1).unwrap();
        assert_eq!(m.stay, vec![0]);
        assert_eq!(m.to_right, vec![1]);
        assert_eq!(m.to_left, vec![2]);
        // wrapped below slab 0 goes to the last site
        let mut q = ParticleSet::new(1.0);
        q.push(0, 1.0, [1.0 - 1e-9, 0.5, 0.5], [0.0; 3]);
        let m = select_migrants(&q, &slabs, 0).unwrap();
        assert_eq!(m.to_left, vec![0]);
        let mut far = ParticleSet::new(1.0);
        far.push(5, 1.0, [0.6, 0.5, 0.5], [0.0; 3]);
        assert!(matches!(
            select_migrants(&far, &slabs, 0),
            Err(DecompositionError::MissedMigration { id: 5, .. })
        ));
    }

    #[test]
    fn csv_rows() {
        let mut s = equal_slabs(2, 1.0);
        s[0].count = 3;
        s[0].t_calc = 0.5;
        let rows = decomposition_csv_rows(7, &s);
        assert_eq!(rows[0], "7,0,0,0.5,3,0.5");
    }

    #[test]
    fn id_sampling_ignores_distribution() {
        let mut a = ParticleSet::new(1.0);
        let mut b = ParticleSet::new(1.0);
        for id in 0..1000u64 {
            let target = if id % 3 == 0 { &mut a } else { &mut b };
            target.push(id, 1.0, [id as f64 / 1000.0, 0.0, 0.0], [0.0; 3]);
        }
        let n = sample_by_id(&a, 0.1).unwrap().xs.len() + sample_by_id(&b, 0.1).unwrap().xs.len();
        assert_eq!(n, 100);
        assert!(sample_by_id(&a, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn updates_keep_tiling(
            xs in proptest::collection::vec(0.0f64..1.0, 2..300),
            loads in proptest::collection::vec(0.1f64..10.0, 2..6),
            limit in 0.0f64..0.3,
        ) {
            let s = loads.len();
            let mut cur = equal_slabs(s, 1.0);
            for c in &mut cur { c.count = 100; }
            let samples = SampleSet { xs, r_samp: 1.0 };
            let out = update_site_boundaries(&samples, &loads, &cur, limit, 0.01, 1.0).unwrap();
            validate_tiling(&out.slabs, 1.0).unwrap();
            for (a, b) in out.slabs.iter().zip(&cur) {
                prop_assert!((a.lo - b.lo).abs() <= limit + 1e-12);
                prop_assert!(a.width() >= 0.01 - 1e-12);
            }
        }

        #[test]
        fn migration_is_a_partition(seed in 0u64..1000, site in 0usize..4) {
            let slabs = equal_slabs(4, 1.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = ParticleSet::new(1.0);
            for i in 0..50 {
                let lo = slabs[site].lo - 0.2;
                p.push(i, 1.0, [wrap_coord(lo + rng.gen::<f64>() * 0.65, 1.0), 0.5, 0.5], [0.0; 3]);
            }
            let m = select_migrants(&p, &slabs, site).unwrap();
            let mut all: Vec<usize> = m.stay.iter().chain(&m.to_left).chain(&m.to_right).copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..50).collect::<Vec<_>>());
            for &i in &m.to_right { prop_assert!(slabs[(site + 1) % 4].contains(p.positions[i][0])); }
            for &i in &m.to_left { prop_assert!(slabs[(site + 3) % 4].contains(p.positions[i][0])); }
        }
    }
}
