//! Local essential tree export.
//!
//! The export keeps the exporter's node geometry, masses and centres of
//! mass along every path the requester's walk can take. Nodes the requester
//! is sure to accept become pruned summaries, nodes out of range are
//! dropped, and leaves it may open carry their particles. A walk over the
//! export therefore yields the same forces as a walk over the full tree for
//! any target group inside the requester's slab.

use super::{DecompositionError, SiteSlab};
use crate::nbody::tree::{Body, Node, NodeKind, OcTree, NONE};
use crate::perf_model::let_bytes_estimate;

#[derive(Debug, Clone, PartialEq)]
pub struct LetExport {
    pub tree: OcTree,
    pub n_particles: usize,
    pub n_cells: usize,
    /// Encoded size in bytes.
    pub wire_bytes: usize,
}

impl LetExport {
    pub fn is_empty(&self) -> bool {
        self.tree.nodes.is_empty()
    }

    /// The analytic per-neighbour estimate for a system of `n_total` particles.
    pub fn model_bytes(n_total: f64, theta: f64) -> f64 {
        let_bytes_estimate(n_total, theta)
    }
}

/// Extract what `requester` needs from `tree` for a walk at opening angle
/// `theta` with force range `cutoff`. `margin` widens the range to cover
/// boundary motion within a step.
pub fn build_local_essential_tree(tree: &OcTree, requester: &SiteSlab, theta: f64, cutoff: f64, margin: f64) -> LetExport {
    let reach = cutoff + margin;
    let l = tree.box_len;
    let mut nodes: Vec<Node> = Vec::new();
    let mut bodies: Vec<Body> = Vec::new();
    let mut n_cells = 0;
    if !tree.nodes.is_empty() {
        visit(tree, 0, requester, theta, reach, l, &mut nodes, &mut bodies, &mut n_cells);
    }
    let n_particles = bodies.len();
    let out = OcTree::from_parts(nodes, bodies, tree.n_leaf, l);
    let wire_bytes = encoded_len(&out);
    LetExport {
        tree: out,
        n_particles,
        n_cells,
        wire_bytes,
    }
}

/// Copy node `i` into the export if the requester can reach it; returns its new index.
#[allow(clippy::too_many_arguments)]
fn visit(
    tree: &OcTree,
    i: usize,
    slab: &SiteSlab,
    theta: f64,
    reach: f64,
    l: f64,
    nodes: &mut Vec<Node>,
    bodies: &mut Vec<Body>,
    n_cells: &mut usize,
) -> Option<u32> {
    let node = &tree.nodes[i];
    // tight x-extent of the node's particles; a node whose particles are all
    // beyond reach contributes exactly zero force to the requester
    let (xmin, xmax) = tree
        .node_bodies(node)
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), body| (a.min(body.pos[0]), b.max(body.pos[0])));
    if node.kind != NodeKind::Pruned && slab.interval_gap(xmin, xmax, l) > reach {
        return None;
    }
    if node.kind == NodeKind::Pruned
        && slab.interval_gap(node.center[0] - node.half, node.center[0] + node.half, l) > reach
    {
        return None;
    }
    let idx = nodes.len();
    let first = bodies.len() as u32;
    let mut copy = Node {
        children: [NONE; 8],
        first,
        count: 0,
        ..node.clone()
    };
    // any group inside the slab is at least this far from the centre of mass
    let d = slab.x_distance(node.com[0], l);
    if node.kind == NodeKind::Pruned || node.size() < theta * d {
        copy.kind = NodeKind::Pruned;
        nodes.push(copy);
        *n_cells += 1;
        return Some(idx as u32);
    }
    match node.kind {
        NodeKind::Leaf => {
            bodies.extend_from_slice(tree.node_bodies(node));
            copy.count = bodies.len() as u32 - first;
            nodes.push(copy);
        }
        _ => {
            nodes.push(copy);
            let mut children = [NONE; 8];
            for (o, &c) in node.children.iter().enumerate() {
                if c != NONE {
                    if let Some(j) = visit(tree, c as usize, slab, theta, reach, l, nodes, bodies, n_cells) {
                        children[o] = j;
                    }
                }
            }
            let n = &mut nodes[idx];
            n.children = children;
            n.count = bodies.len() as u32 - first;
        }
    }
    Some(idx as u32)
}

const NODE_BYTES: usize = 8 * 8 + 1 + 1 + 4;
const BODY_BYTES: usize = 8 + 8 + 24;

fn encoded_len(t: &OcTree) -> usize {
    let child_refs: usize = t.nodes.iter().map(|n| n.child_ids().count()).sum();
    16 + t.nodes.len() * NODE_BYTES + child_refs * 4 + t.bodies.len() * BODY_BYTES
}

/// Serialize an export: counts, nodes (geometry, mass, centre of mass, kind,
/// child mask, particle count, child indices), then particles (id, mass, position).
pub fn encode_let(t: &OcTree) -> Vec<u8> {
    let mut b = Vec::with_capacity(encoded_len(t));
    b.extend_from_slice(&(t.nodes.len() as u64).to_le_bytes());
    b.extend_from_slice(&(t.bodies.len() as u64).to_le_bytes());
    for n in &t.nodes {
        for x in n.center.iter().chain([&n.half, &n.mass]).chain(n.com.iter()) {
            b.extend_from_slice(&x.to_le_bytes());
        }
        b.push(match n.kind {
            NodeKind::Internal => 0,
            NodeKind::Leaf => 1,
            NodeKind::Pruned => 2,
        });
        let mask = n
            .children
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != NONE)
            .fold(0u8, |m, (o, _)| m | 1 << o);
        b.push(mask);
        b.extend_from_slice(&n.count.to_le_bytes());
        for c in n.child_ids() {
            b.extend_from_slice(&(c as u32).to_le_bytes());
        }
    }
    for body in &t.bodies {
        b.extend_from_slice(&body.id.to_le_bytes());
        b.extend_from_slice(&body.mass.to_le_bytes());
        for x in body.pos {
            b.extend_from_slice(&x.to_le_bytes());
        }
    }
    b
}

pub fn decode_let(bytes: &[u8], n_leaf: usize, box_len: f64) -> Result<OcTree, DecompositionError> {
    let mut r = Reader { b: bytes, at: 0 };
    let n_nodes = r.u64()? as usize;
    let n_bodies = r.u64()? as usize;
    if n_nodes > bytes.len() / NODE_BYTES + 1 || n_bodies > bytes.len() / BODY_BYTES + 1 {
        return Err(DecompositionError::Invalid("LET counts exceed message size".into()));
    }
    let mut nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let center = [r.f64()?, r.f64()?, r.f64()?];
        let half = r.f64()?;
        let mass = r.f64()?;
        let com = [r.f64()?, r.f64()?, r.f64()?];
        let kind = match r.u8()? {
            0 => NodeKind::Internal,
            1 => NodeKind::Leaf,
            2 => NodeKind::Pruned,
            k => return Err(DecompositionError::Invalid(format!("bad node kind {k}"))),
        };
        let mask = r.u8()?;
        let count = r.u32()?;
        let mut children = [NONE; 8];
        for (o, c) in children.iter_mut().enumerate() {
            if mask >> o & 1 == 1 {
                let j = r.u32()?;
                if j as usize >= n_nodes {
                    return Err(DecompositionError::Invalid("child index out of range".into()));
                }
                *c = j;
            }
        }
        nodes.push(Node {
            center,
            half,
            mass,
            com,
            kind,
            children,
            first: 0,
            count,
        });
    }
    let mut bodies = Vec::with_capacity(n_bodies);
    for _ in 0..n_bodies {
        let id = r.u64()?;
        let mass = r.f64()?;
        let pos = [r.f64()?, r.f64()?, r.f64()?];
        bodies.push(Body { pos, mass, id });
    }
    if r.at != bytes.len() {
        return Err(DecompositionError::Invalid("trailing bytes after LET".into()));
    }
    // particle ranges follow from preorder layout
    let mut next = 0u32;
    if !nodes.is_empty() {
        assign_first(&mut nodes, 0, &mut next);
    }
    if next as usize != n_bodies {
        return Err(DecompositionError::Invalid("LET particle counts inconsistent".into()));
    }
    Ok(OcTree::from_parts(nodes, bodies, n_leaf, box_len))
}

fn assign_first(nodes: &mut [Node], i: usize, next: &mut u32) {
    nodes[i].first = *next;
    if nodes[i].kind == NodeKind::Leaf {
        *next += nodes[i].count;
        return;
    }
    let kids: Vec<usize> = nodes[i].child_ids().collect();
    for c in kids {
        assign_first(nodes, c, next);
    }
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], DecompositionError> {
        let s = self
            .b
            .get(self.at..self.at + N)
            .ok_or_else(|| DecompositionError::Invalid("truncated LET".into()))?;
        self.at += N;
        Ok(s.try_into().unwrap())
    }
    fn u8(&mut self) -> Result<u8, DecompositionError> {
        Ok(self.take::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32, DecompositionError> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64, DecompositionError> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64, DecompositionError> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::equal_slabs;
    use crate::nbody::tree::{kernel_for, tree_force_multi};
    use crate::nbody::{ForceParams, ParticleSet};
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

    fn split(p: &ParticleSet, lo: f64, hi: f64) -> ParticleSet {
        let idx: Vec<usize> = (0..p.len()).filter(|&i| p.positions[i][0] >= lo && p.positions[i][0] < hi).collect();
        p.select(&idx)
    }

    #[test]
    fn theta_zero_exports_everything_in_range() {
        let p = uniform(4096, 1);
        let slabs = equal_slabs(4, 1.0);
        let remote = split(&p, slabs[1].lo, slabs[1].hi);
        let tree = OcTree::build(&remote, 10).unwrap();
        let (cutoff, margin) = (0.08, 0.02);
        let e = build_local_essential_tree(&tree, &slabs[0], 0.0, cutoff, margin);
        assert_eq!(e.n_cells, 0);
        let ids: std::collections::HashSet<u64> = e.tree.bodies.iter().map(|b| b.id).collect();
        for i in 0..remote.len() {
            if slabs[0].x_distance(remote.positions[i][0], 1.0) <= cutoff {
                assert!(ids.contains(&remote.ids[i]));
            }
        }
    }

    #[test]
    fn distant_slab_gets_nothing() {
        let p = uniform(2000, 2);
        let slabs = equal_slabs(4, 1.0);
        let remote = split(&p, slabs[2].lo, slabs[2].hi);
        let tree = OcTree::build(&remote, 10).unwrap();
        let e = build_local_essential_tree(&tree, &slabs[0], 0.5, 0.1, 0.01);
        assert!(e.is_empty());
        assert_eq!(e.n_particles, 0);
    }

    #[test]
    fn let_forces_equal_full_tree_forces() {
        let p = uniform(4096, 3);
        let slabs = equal_slabs(4, 1.0);
        let local = split(&p, slabs[0].lo, slabs[0].hi);
        let params = ForceParams { theta: 0.5, softening: 0.002, ncrit: 64, ..Default::default() };
        let cutoff = 3.0 / 16.0;
        let kernel = kernel_for(&params, Some(cutoff));
        let local_tree = OcTree::build(&local, 10).unwrap();
        let mut full_sources = vec![local_tree.clone()];
        let mut let_sources = vec![local_tree];
        for s in [1, 3] {
            let remote = split(&p, slabs[s].lo, slabs[s].hi);
            let tree = OcTree::build(&remote, 10).unwrap();
            let e = build_local_essential_tree(&tree, &slabs[0], params.theta, cutoff, 1.0 / 16.0);
            assert!(e.n_cells > 0);
            let decoded = decode_let(&encode_let(&e.tree), 10, 1.0).unwrap();
            assert_eq!(decoded, e.tree);
            let_sources.push(decoded);
            full_sources.push(tree);
        }
        let full: Vec<&OcTree> = full_sources.iter().collect();
        let lets: Vec<&OcTree> = let_sources.iter().collect();
        let a = tree_force_multi(&full, &local, params.theta, params.ncrit, &kernel);
        let b = tree_force_multi(&lets, &local, params.theta, params.ncrit, &kernel);
        for (x, y) in a.accelerations.iter().zip(&b.accelerations) {
            for k in 0..3 {
                assert!((x[k] - y[k]).abs() <= 1e-12 * x[k].abs().max(1e-300));
            }
        }
    }

    #[test]
    fn wire_size_matches_encoding() {
        let p = uniform(1000, 4);
        let tree = OcTree::build(&p, 10).unwrap();
        let slab = SiteSlab { site: 0, lo: 0.0, hi: 0.1, count: 0, t_calc: 0.0 };
        let e = build_local_essential_tree(&tree, &slab, 0.5, 0.1, 0.01);
        assert_eq!(encode_let(&e.tree).len(), e.wire_bytes);
        assert!(decode_let(&encode_let(&e.tree)[..10], 10, 1.0).is_err());
    }
}
