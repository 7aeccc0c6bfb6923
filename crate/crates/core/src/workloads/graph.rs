//! mini-graph: adjacency lists as linked edge cells, queried by BFS.
//!
//! | segment       | tag     | contents                                        |
//! |---------------|---------|-------------------------------------------------|
//! | `graph.meta`  | private | node count                                      |
//! | `graph.nodes` | heap    | first-edge pointer u32 per node (`NIL` if none) |
//! | `graph.edges` | heap    | edge cells: destination u32, next pointer u32   |
//! | `graph.frame` | stack   | BFS queue (n u32) followed by distances (n u32) |
//!
//! Request: source node u32 LE. Response: n distances u32 LE, `u32::MAX`
//! for unreachable nodes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::memory::{Fault, ImageMemory, Layout, Memory, NIL};
use super::WorkloadError;
use crate::region::RegionKind;

pub const UNREACHABLE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphParams {
    pub nodes: u32,
    pub avg_degree: u32,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams {
            nodes: 30,
            avg_degree: 3,
        }
    }
}

impl GraphParams {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !(2..=10_000).contains(&self.nodes) {
            return Err(WorkloadError::Config("mini-graph nodes not in 2..=10000".into()));
        }
        if !(1..=16).contains(&self.avg_degree) {
            return Err(WorkloadError::Config("mini-graph avg_degree not in 1..=16".into()));
        }
        Ok(())
    }

    fn edges(&self) -> u64 {
        u64::from(self.nodes) * u64::from(self.avg_degree)
    }
}

/// Directed edge list: one forward ring edge per node keeps the graph
/// strongly connected, the rest are uniform random.
fn edge_list(p: &GraphParams, seed: u64) -> Vec<(u32, u32)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = p.nodes;
    let mut edges: Vec<(u32, u32)> = (0..n).map(|u| (u, (u + 1) % n)).collect();
    while (edges.len() as u64) < p.edges() {
        edges.push((rng.random_range(0..n), rng.random_range(0..n)));
    }
    edges
}

pub fn layout(p: &GraphParams) -> Layout {
    Layout::builder()
        .segment("graph.meta", RegionKind::Private, 8)
        .segment("graph.nodes", RegionKind::Heap, u64::from(p.nodes) * 4)
        .segment("graph.edges", RegionKind::Heap, p.edges() * 8)
        .segment("graph.frame", RegionKind::Stack, u64::from(p.nodes) * 8)
        .build()
}

pub fn generate(p: &GraphParams, seed: u64) -> (Layout, Vec<u8>) {
    let layout = layout(p);
    let mut mem = ImageMemory::new(layout.total_len());
    let nodes = layout.segment("graph.nodes").unwrap().start;
    let cells = layout.segment("graph.edges").unwrap().start;
    mem.write_u32(layout.segment("graph.meta").unwrap().start, p.nodes).unwrap();
    for u in 0..u64::from(p.nodes) {
        mem.write_u32(nodes + 4 * u, NIL).unwrap();
    }
    for (i, (u, v)) in edge_list(p, seed).into_iter().enumerate() {
        let cell = cells + 8 * i as u64;
        let head = nodes + 4 * u64::from(u);
        let next = mem.read_u32(head).unwrap();
        mem.write_u32(cell, v).unwrap();
        mem.write_u32(cell + 4, next).unwrap();
        mem.write_u32(head, cell as u32).unwrap();
    }
    (layout, mem.bytes)
}

/// One full pass visits every node once as a BFS source, in seeded order.
pub fn queries(p: &GraphParams, seed: u64, count: usize) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6170);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut order: Vec<u32> = (0..p.nodes).collect();
        order.shuffle(&mut rng);
        out.extend(order.iter().map(|s| s.to_le_bytes().to_vec()));
    }
    out.truncate(count);
    out
}

#[derive(Debug, Clone)]
pub struct MiniGraph {
    meta: u64,
    nodes: u64,
    frame: u64,
}

impl MiniGraph {
    pub fn new(layout: &Layout) -> Self {
        let seg = |n: &str| layout.segment(n).unwrap().start;
        MiniGraph {
            meta: seg("graph.meta"),
            nodes: seg("graph.nodes"),
            frame: seg("graph.frame"),
        }
    }

    pub fn handle<M: Memory>(&self, mem: &mut M, req: &[u8]) -> Result<Vec<u8>, Fault> {
        let Ok(src) = <[u8; 4]>::try_from(req).map(u32::from_le_bytes) else {
            return Ok(Vec::new());
        };
        let n = mem.read_u32(self.meta)?;
        if src >= n {
            return Ok(Vec::new());
        }
        let queue = self.frame;
        let dist = self.frame + 4 * u64::from(n);
        for v in 0..u64::from(n) {
            mem.write_u32(dist + 4 * v, UNREACHABLE)?;
        }
        mem.write_u32(dist + 4 * u64::from(src), 0)?;
        mem.write_u32(queue, src)?;
        let (mut head, mut tail) = (0u64, 1u64);
        while head < tail {
            let u = mem.read_u32(queue + 4 * head)?;
            head += 1;
            let du = mem.read_u32(dist + 4 * u64::from(u))?;
            let mut e = mem.read_ptr(self.nodes + 4 * u64::from(u))?;
            while e != NIL {
                let cell = u64::from(e);
                let v = mem.read_u32(cell)?;
                e = mem.read_ptr(cell + 4)?;
                let slot = dist + 4 * u64::from(v);
                if mem.read_u32(slot)? == UNREACHABLE {
                    mem.write_u32(slot, du.wrapping_add(1))?;
                    mem.write_u32(queue + 4 * tail, v)?;
                    tail += 1;
                }
            }
        }
        mem.read_vec(dist, 4 * n as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn reference_bfs(p: &GraphParams, seed: u64, src: u32) -> Vec<u32> {
        let mut adj = vec![Vec::new(); p.nodes as usize];
        for (u, v) in edge_list(p, seed) {
            adj[u as usize].push(v);
        }
        let mut dist = vec![UNREACHABLE; p.nodes as usize];
        dist[src as usize] = 0;
        let mut q = VecDeque::from([src]);
        while let Some(u) = q.pop_front() {
            for &v in &adj[u as usize] {
                if dist[v as usize] == UNREACHABLE {
                    dist[v as usize] = dist[u as usize] + 1;
                    q.push_back(v);
                }
            }
        }
        dist
    }

    #[test]
    fn bfs_matches_reference() {
        let p = GraphParams::default();
        let (layout, image) = generate(&p, 2);
        let mut mem = ImageMemory { bytes: image };
        let g = MiniGraph::new(&layout);
        for q in queries(&p, 2, p.nodes as usize) {
            let src = u32::from_le_bytes(q[..].try_into().unwrap());
            let got: Vec<u32> = g
                .handle(&mut mem, &q)
                .unwrap()
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            assert_eq!(got, reference_bfs(&p, 2, src));
            assert!(got.iter().all(|&d| d != UNREACHABLE), "ring keeps graph connected");
        }
    }

    #[test]
    fn full_pass_visits_each_source_once() {
        let p = GraphParams::default();
        let mut q = queries(&p, 5, p.nodes as usize);
        q.sort();
        q.dedup();
        assert_eq!(q.len(), p.nodes as usize);
    }
}
