//! Barnes-Hut octree with grouped interaction lists.

use super::kernel::PairKernel;
use super::particles::{min_image, ParticleSet, Vec3};
use super::{ForceParams, NbodyError};

pub const NONE: u32 = u32::MAX;
const MAX_DEPTH: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub pos: Vec3,
    pub mass: f64,
    pub id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Internal,
    Leaf,
    /// Summary of a subtree whose contents were not transferred; only its
    /// mass and centre of mass are known.
    Pruned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub center: Vec3,
    pub half: f64,
    pub mass: f64,
    pub com: Vec3,
    pub kind: NodeKind,
    pub children: [u32; 8],
    /// Range of `OcTree::bodies` below this node.
    pub first: u32,
    pub count: u32,
}

impl Node {
    pub fn size(&self) -> f64 {
        2.0 * self.half
    }

    pub fn child_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.children.iter().filter(|&&c| c != NONE).map(|&c| c as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcTree {
    pub nodes: Vec<Node>,
    /// Bodies in tree order; every node covers a contiguous range.
    pub bodies: Vec<Body>,
    pub n_leaf: usize,
    pub box_len: f64,
}

/// Axis-aligned box around a group of targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupBox {
    pub center: Vec3,
    pub half: Vec3,
}

impl GroupBox {
    pub fn around(points: impl Iterator<Item = Vec3>) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let mut center = [0.0; 3];
        let mut half = [0.0; 3];
        for k in 0..3 {
            center[k] = 0.5 * (lo[k] + hi[k]);
            half[k] = 0.5 * (hi[k] - lo[k]);
        }
        Self { center, half }
    }
}

/// Interactions gathered for one group of targets.
#[derive(Debug, Clone, Default)]
pub struct InteractionList {
    pub bodies: Vec<Body>,
    /// (centre of mass, mass) of accepted cells.
    pub cells: Vec<(Vec3, f64)>,
}

impl InteractionList {
    pub fn clear(&mut self) {
        self.bodies.clear();
        self.cells.clear();
    }

    /// Sort into an order that does not depend on which trees supplied the
    /// entries, so the summed force is reproducible bit for bit.
    pub fn canonicalize(&mut self) {
        self.bodies.sort_by_key(|b| b.id);
        self.cells.sort_by(|a, b| {
            let ka = [a.0[0].to_bits(), a.0[1].to_bits(), a.0[2].to_bits(), a.1.to_bits()];
            let kb = [b.0[0].to_bits(), b.0[1].to_bits(), b.0[2].to_bits(), b.1.to_bits()];
            ka.cmp(&kb)
        });
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForceResult {
    pub accelerations: Vec<Vec3>,
    /// Particle-particle plus particle-cell evaluations.
    pub interaction_count: u64,
}

impl OcTree {
    pub fn build(particles: &ParticleSet, n_leaf: usize) -> Result<Self, NbodyError> {
        let bodies = (0..particles.len())
            .map(|i| Body {
                pos: particles.positions[i],
                mass: particles.masses[i],
                id: particles.ids[i],
            })
            .collect();
        Self::from_bodies(bodies, n_leaf, particles.box_len)
    }

    pub fn from_bodies(mut bodies: Vec<Body>, n_leaf: usize, box_len: f64) -> Result<Self, NbodyError> {
        if bodies.is_empty() {
            return Err(NbodyError::EmptyTree);
        }
        let n_leaf = n_leaf.max(1);
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for b in &bodies {
            for k in 0..3 {
                lo[k] = lo[k].min(b.pos[k]);
                hi[k] = hi[k].max(b.pos[k]);
            }
        }
        let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])];
        let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
        let half = 0.5 * extent * (1.0 + 1e-12) + f64::MIN_POSITIVE;
        let mut tree = OcTree {
            nodes: Vec::with_capacity(2 * bodies.len() / n_leaf + 1),
            bodies: Vec::new(),
            n_leaf,
            box_len,
        };
        let mut scratch = bodies.clone();
        let n = bodies.len();
        tree.build_node(&mut bodies, &mut scratch, 0, n, center, half, 0);
        tree.bodies = bodies;
        Ok(tree)
    }

    /// Assemble a tree from explicit nodes, e.g. a pruned export.
    pub fn from_parts(nodes: Vec<Node>, bodies: Vec<Body>, n_leaf: usize, box_len: f64) -> Self {
        Self {
            nodes,
            bodies,
            n_leaf,
            box_len,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn build_node(
        &mut self,
        bodies: &mut [Body],
        scratch: &mut [Body],
        first: usize,
        end: usize,
        center: Vec3,
        half: f64,
        depth: usize,
    ) -> u32 {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            center,
            half,
            mass: 0.0,
            com: [0.0; 3],
            kind: NodeKind::Leaf,
            children: [NONE; 8],
            first: first as u32,
            count: (end - first) as u32,
        });
        if end - first <= self.n_leaf || depth >= MAX_DEPTH {
            let (mass, com) = mass_com(bodies[first..end].iter().map(|b| (b.mass, b.pos)));
            let node = &mut self.nodes[idx];
            node.mass = mass;
            node.com = com;
            return idx as u32;
        }
        // stable counting sort into octants
        let octant = |p: &Vec3| -> usize {
            (p[0] >= center[0]) as usize | ((p[1] >= center[1]) as usize) << 1 | ((p[2] >= center[2]) as usize) << 2
        };
        let mut counts = [0usize; 8];
        for b in &bodies[first..end] {
            counts[octant(&b.pos)] += 1;
        }
        let mut starts = [0usize; 8];
        let mut acc = first;
        for o in 0..8 {
            starts[o] = acc;
            acc += counts[o];
        }
        let mut cursor = starts;
        for b in &bodies[first..end] {
            let o = octant(&b.pos);
            scratch[cursor[o]] = *b;
            cursor[o] += 1;
        }
        bodies[first..end].copy_from_slice(&scratch[first..end]);
        let q = 0.5 * half;
        let mut children = [NONE; 8];
        for o in 0..8 {
            if counts[o] == 0 {
                continue;
            }
            let c = [
                center[0] + if o & 1 != 0 { q } else { -q },
                center[1] + if o & 2 != 0 { q } else { -q },
                center[2] + if o & 4 != 0 { q } else { -q },
            ];
            children[o] = self.build_node(bodies, scratch, starts[o], starts[o] + counts[o], c, q, depth + 1);
        }
        let (mass, com) = mass_com(
            children
                .iter()
                .filter(|&&c| c != NONE)
                .map(|&c| (self.nodes[c as usize].mass, self.nodes[c as usize].com)),
        );
        let node = &mut self.nodes[idx];
        node.kind = NodeKind::Internal;
        node.children = children;
        node.mass = mass;
        node.com = com;
        idx as u32
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn node_bodies(&self, node: &Node) -> &[Body] {
        &self.bodies[node.first as usize..(node.first + node.count) as usize]
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Leaf)
    }

    pub fn total_mass(&self) -> f64 {
        self.nodes.first().map_or(0.0, |n| n.mass)
    }

    /// Gather the interaction list of `group`. With `periodic`, separations
    /// use the minimum image; with `range`, nodes farther than it are skipped.
    pub fn collect(&self, group: &GroupBox, theta: f64, range: Option<f64>, periodic: bool, out: &mut InteractionList) {
        if self.nodes.is_empty() {
            return;
        }
        let l = self.box_len;
        let sep = |a: f64, b: f64| if periodic { min_image(a - b, l) } else { a - b };
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if let Some(r) = range {
                let mut g2 = 0.0;
                for k in 0..3 {
                    let g = (sep(node.center[k], group.center[k]).abs() - node.half - group.half[k]).max(0.0);
                    g2 += g * g;
                }
                if g2 > r * r {
                    continue;
                }
            }
            let accept = node.kind == NodeKind::Pruned || {
                let mut d2 = 0.0;
                for k in 0..3 {
                    let d = (sep(node.com[k], group.center[k]).abs() - group.half[k]).max(0.0);
                    d2 += d * d;
                }
                let s = node.size();
                s * s < theta * theta * d2
            };
            if accept {
                out.cells.push((node.com, node.mass));
                continue;
            }
            match node.kind {
                NodeKind::Leaf => out.bodies.extend_from_slice(self.node_bodies(node)),
                _ => {
                    // reverse so children are visited in octant order
                    for c in node.children.iter().rev().filter(|&&c| c != NONE) {
                        stack.push(*c as usize);
                    }
                }
            }
        }
    }

    /// Check the structural invariants; returns a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = vec![0u32; self.bodies.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            match node.kind {
                NodeKind::Leaf => {
                    if node.count as usize > self.n_leaf {
                        // only allowed at the depth limit with coincident bodies
                        let b = self.node_bodies(node);
                        if b.iter().any(|x| x.pos != b[0].pos) {
                            return Err(format!("leaf {i} holds {} > {}", node.count, self.n_leaf));
                        }
                    }
                    let (m, _) = mass_com(self.node_bodies(node).iter().map(|b| (b.mass, b.pos)));
                    if (m - node.mass).abs() > 1e-12 * m.abs() {
                        return Err(format!("leaf {i} mass {} != {}", node.mass, m));
                    }
                    for j in node.first..node.first + node.count {
                        seen[j as usize] += 1;
                    }
                }
                NodeKind::Internal => {
                    let m: f64 = node.child_ids().map(|c| self.nodes[c].mass).sum();
                    if (m - node.mass).abs() > 1e-12 * m.abs() {
                        return Err(format!("node {i} mass {} != children {}", node.mass, m));
                    }
                    let n: u32 = node.child_ids().map(|c| self.nodes[c].count).sum();
                    if n != node.count {
                        return Err(format!("node {i} count {} != children {}", node.count, n));
                    }
                }
                NodeKind::Pruned => {}
            }
        }
        if let Some(j) = seen.iter().position(|&s| s != 1) {
            return Err(format!("body {j} is in {} leaves", seen[j]));
        }
        Ok(())
    }
}

fn mass_com(items: impl Iterator<Item = (f64, Vec3)>) -> (f64, Vec3) {
    let mut m = 0.0;
    let mut c = [0.0; 3];
    for (mi, p) in items {
        m += mi;
        for k in 0..3 {
            c[k] += mi * p[k];
        }
    }
    if m > 0.0 {
        for x in &mut c {
            *x /= m;
        }
    }
    (m, c)
}

/// Barnes-Hut accelerations on `targets` from `tree`.
///
/// With `range_limit`, the short-range split kernel is used, separations
/// follow the minimum-image convention and nodes beyond the limit are
/// skipped. Without it, plain softened Newtonian gravity with open boundaries.
pub fn tree_force(tree: &OcTree, targets: &ParticleSet, params: &ForceParams, range_limit: Option<f64>) -> ForceResult {
    tree_force_multi(&[tree], targets, params.theta, params.ncrit, &kernel_for(params, range_limit))
}

pub fn kernel_for(params: &ForceParams, range_limit: Option<f64>) -> PairKernel {
    match range_limit {
        None => PairKernel::Newton {
            softening: params.softening,
        },
        Some(r_cut) => PairKernel::ShortRange {
            softening: params.softening,
            r_cut,
        },
    }
}

/// Accelerations from the union of several source trees (a local tree plus
/// imported ones). Targets are grouped by an octree with leaf capacity
/// `ncrit`; each group shares one interaction list, summed in canonical order.
pub fn tree_force_multi(sources: &[&OcTree], targets: &ParticleSet, theta: f64, ncrit: usize, kernel: &PairKernel) -> ForceResult {
    let n = targets.len();
    let mut result = ForceResult {
        accelerations: vec![[0.0; 3]; n],
        interaction_count: 0,
    };
    if n == 0 || sources.iter().all(|t| t.bodies.is_empty() && t.nodes.is_empty()) {
        return result;
    }
    let idx_bodies: Vec<Body> = (0..n)
        .map(|i| Body {
            pos: targets.positions[i],
            mass: targets.masses[i],
            id: i as u64,
        })
        .collect();
    let group_tree = OcTree::from_bodies(idx_bodies, ncrit.max(1), targets.box_len).expect("non-empty");
    let groups: Vec<&Node> = group_tree.leaves().collect();
    let range = kernel.range();
    let periodic = range.is_some();
    let l = targets.box_len;

    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(groups.len()).max(1);
    let chunk = groups.len().div_ceil(workers);
    let partials: Vec<(Vec<(usize, Vec3)>, u64)> = std::thread::scope(|scope| {
        let handles: Vec<_> = groups
            .chunks(chunk)
            .map(|gs| {
                let group_tree = &group_tree;
                scope.spawn(move || {
                    let mut out = Vec::new();
                    let mut count = 0u64;
                    let mut list = InteractionList::default();
                    for g in gs {
                        let members = group_tree.node_bodies(g);
                        let gb = GroupBox::around(members.iter().map(|b| b.pos));
                        list.clear();
                        for t in sources {
                            t.collect(&gb, theta, range, periodic, &mut list);
                        }
                        list.canonicalize();
                        for m in members {
                            let i = m.id as usize;
                            let id = targets.ids[i];
                            let x = targets.positions[i];
                            let mut a = [0.0; 3];
                            for b in &list.bodies {
                                if b.id == id {
                                    continue;
                                }
                                let d = separation(b.pos, x, periodic, l);
                                kernel.accumulate(&mut a, d, b.mass);
                                count += 1;
                            }
                            for &(c, mass) in &list.cells {
                                let d = separation(c, x, periodic, l);
                                kernel.accumulate(&mut a, d, mass);
                                count += 1;
                            }
                            out.push((i, a));
                        }
                    }
                    (out, count)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("force worker panicked")).collect()
    });
    for (out, count) in partials {
        result.interaction_count += count;
        for (i, a) in out {
            result.accelerations[i] = a;
        }
    }
    result
}

#[inline]
pub fn separation(src: Vec3, dst: Vec3, periodic: bool, l: f64) -> Vec3 {
    if periodic {
        [min_image(src[0] - dst[0], l), min_image(src[1] - dst[1], l), min_image(src[2] - dst[2], l)]
    } else {
        [src[0] - dst[0], src[1] - dst[1], src[2] - dst[2]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nbody::direct::direct_force_oracle;
    use crate::nbody::ic;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize, seed: u64) -> ParticleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParticleSet::with_capacity(1.0, n);
        for i in 0..n {
            p.push(i as u64, 1.0 / n as f64, [rng.gen(), rng.gen(), rng.gen()], [0.0; 3]);
        }
        p
    }

    fn rel(a: Vec3, b: Vec3) -> f64 {
        let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() / (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt()
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(matches!(OcTree::build(&ParticleSet::new(1.0), 10), Err(NbodyError::EmptyTree)));
    }

    #[test]
    fn single_particle_single_leaf() {
        let mut p = ParticleSet::new(1.0);
        p.push(0, 2.0, [0.3, 0.4, 0.5], [0.0; 3]);
        let t = OcTree::build(&p, 10).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.root().kind, NodeKind::Leaf);
        assert_eq!(t.root().com, [0.3, 0.4, 0.5]);
        assert_eq!(t.root().mass, 2.0);
    }

    #[test]
    fn octant_centres_give_eight_leaves() {
        let mut p = ParticleSet::new(1.0);
        for o in 0..8u64 {
            let c = |bit| if o & bit != 0 { 0.75 } else { 0.25 };
            p.push(o, 1.0, [c(1), c(2), c(4)], [0.0; 3]);
        }
        let t = OcTree::build(&p, 1).unwrap();
        assert_eq!(t.root().kind, NodeKind::Internal);
        assert_eq!(t.root().child_ids().count(), 8);
        for c in t.root().child_ids() {
            assert_eq!(t.nodes[c].kind, NodeKind::Leaf);
            assert_eq!(t.nodes[c].count, 1);
        }
        assert_eq!(t.root().com, [0.5, 0.5, 0.5]);
    }

    #[test]
    fn uniform_tree_mass_consistency() {
        let p = uniform(10_000, 1);
        let t = OcTree::build(&p, 10).unwrap();
        t.check_invariants().unwrap();
        // independent recursive sum over the node tree
        fn sum(t: &OcTree, i: usize) -> f64 {
            let n = &t.nodes[i];
            match n.kind {
                NodeKind::Leaf => t.node_bodies(n).iter().map(|b| b.mass).sum(),
                _ => n.child_ids().map(|c| sum(t, c)).sum(),
            }
        }
        for i in 0..t.nodes.len() {
            let s = sum(&t, i);
            assert!((s - t.nodes[i].mass).abs() <= 1e-12 * s);
        }
        assert!((t.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn build_is_deterministic() {
        let p = uniform(2000, 2);
        assert_eq!(OcTree::build(&p, 8).unwrap(), OcTree::build(&p, 8).unwrap());
    }

    #[test]
    fn newtonian_pair() {
        let r = 0.37;
        let mut p = ParticleSet::new(10.0);
        p.push(0, 1.0, [1.0, 1.0, 1.0], [0.0; 3]);
        p.push(1, 1.0, [1.0 + r, 1.0, 1.0], [0.0; 3]);
        let t = OcTree::build(&p, 1).unwrap();
        let f = tree_force(&t, &p, &ForceParams { theta: 0.5, ..Default::default() }, None);
        for a in &f.accelerations {
            let mag = a[0].abs();
            assert!((mag - 1.0 / (r * r)).abs() < 1e-12 / (r * r));
        }
        assert!(f.accelerations[0][0] > 0.0 && f.accelerations[1][0] < 0.0);
        assert_eq!(f.interaction_count, 2);
    }

    #[test]
    fn theta_zero_matches_direct() {
        let p = uniform(500, 3);
        let t = OcTree::build(&p, 10).unwrap();
        let params = ForceParams {
            theta: 0.0,
            softening: 0.01,
            ncrit: 64,
            ..Default::default()
        };
        let f = tree_force(&t, &p, &params, None);
        let d = direct_force_oracle(&p, 0.01, None).unwrap();
        for (a, b) in f.accelerations.iter().zip(&d) {
            assert!(rel(*a, *b) < 1e-12);
        }
        assert_eq!(f.interaction_count, 500 * 499);
    }

    #[test]
    fn theta_zero_range_limited_matches_direct() {
        let p = uniform(400, 4);
        let t = OcTree::build(&p, 10).unwrap();
        let params = ForceParams {
            theta: 0.0,
            softening: 0.005,
            ncrit: 32,
            ..Default::default()
        };
        let f = tree_force(&t, &p, &params, Some(0.2));
        let d = direct_force_oracle(&p, 0.005, Some(0.2)).unwrap();
        for (a, b) in f.accelerations.iter().zip(&d) {
            let scale = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt().max(1e-300);
            let diff = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            assert!(diff <= 1e-12 * scale);
        }
    }

    #[test]
    fn plummer_median_error() {
        let p = ic::plummer(4096, 1.0, 0.1, 100.0, 5);
        let t = OcTree::build(&p, 10).unwrap();
        let params = ForceParams {
            theta: 0.5,
            softening: 0.01,
            ncrit: 64,
            ..Default::default()
        };
        let f = tree_force(&t, &p, &params, None);
        let d = direct_force_oracle(&p, 0.01, None).unwrap();
        let mut errs: Vec<f64> = f.accelerations.iter().zip(&d).map(|(a, b)| rel(*a, *b)).collect();
        errs.sort_by(f64::total_cmp);
        let median = errs[errs.len() / 2];
        assert!(median < 1e-2, "median {median}");
    }

    #[test]
    fn interaction_count_grows_as_theta_shrinks() {
        let p = uniform(3000, 6);
        let t = OcTree::build(&p, 10).unwrap();
        let mut prev = 0;
        for theta in [1.0, 0.8, 0.6, 0.4, 0.2, 0.0] {
            let params = ForceParams { theta, ncrit: 50, ..Default::default() };
            let c = tree_force(&t, &p, &params, None).interaction_count;
            assert!(c >= prev);
            prev = c;
        }
    }
}
