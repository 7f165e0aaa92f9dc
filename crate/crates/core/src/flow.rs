//! Unit-capacity min-cost flow on acyclic networks.
//!
//! Successive shortest augmenting paths with node potentials. The input
//! network must be a DAG whose arcs point from lower to higher node ids, so
//! the initial potentials come from one relaxation pass in id order; every
//! later search runs Dijkstra on nonnegative reduced costs.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{invalid, Result};

pub type ArcId = usize;

#[derive(Debug, Clone)]
struct ResidualArc {
    to: usize,
    cap: i32,
    cost: f64,
}

/// Residual network. Arc `2i` is the forward arc added by the i-th call
/// to [`FlowGraph::add_arc`], arc `2i + 1` its reverse.
#[derive(Debug, Clone)]
pub struct FlowGraph {
    arcs: Vec<ResidualArc>,
    tails: Vec<usize>,
    adj: Vec<Vec<usize>>,
    original_cap: Vec<i32>,
}

#[derive(Clone, Copy, PartialEq)]
struct Label {
    dist: f64,
    hops: u32,
    node: usize,
}

impl Eq for Label {}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (dist, hops, node)
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.hops.cmp(&self.hops))
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl FlowGraph {
    pub fn new(nodes: usize) -> Self {
        Self {
            arcs: Vec::new(),
            tails: Vec::new(),
            adj: vec![Vec::new(); nodes],
            original_cap: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn arc_count(&self) -> usize {
        self.original_cap.len()
    }

    /// Adds `from -> to`; requires `from < to` so the graph stays acyclic in
    /// id order.
    pub fn add_arc(&mut self, from: usize, to: usize, cap: i32, cost: f64) -> ArcId {
        assert!(from < to, "arcs must go from lower to higher node ids");
        assert!(to < self.adj.len());
        assert!(cap >= 0 && cost.is_finite());
        let id = self.arcs.len();
        self.arcs.push(ResidualArc { to, cap, cost });
        self.arcs.push(ResidualArc {
            to: from,
            cap: 0,
            cost: -cost,
        });
        self.tails.push(from);
        self.tails.push(to);
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
        self.original_cap.push(cap);
        id / 2
    }

    /// Flow currently carried by forward arc `arc`.
    pub fn flow(&self, arc: ArcId) -> i32 {
        self.original_cap[arc] - self.arcs[2 * arc].cap
    }

    pub fn arc_cost(&self, arc: ArcId) -> f64 {
        self.arcs[2 * arc].cost
    }

    pub fn arc_ends(&self, arc: ArcId) -> (usize, usize) {
        (self.tails[2 * arc], self.arcs[2 * arc].to)
    }

    /// Sends `amount` units from `source` to `sink` at minimum cost and
    /// returns that cost. Fails when the network cannot carry `amount`.
    pub fn min_cost_flow(&mut self, source: usize, sink: usize, amount: u32) -> Result<f64> {
        let n = self.adj.len();
        let mut potential = self.initial_potentials(source);
        let mut dist = vec![f64::INFINITY; n];
        let mut hops = vec![u32::MAX; n];
        let mut parent = vec![usize::MAX; n];
        let mut done = vec![false; n];
        let mut total = 0.0;

        for sent in 0..amount {
            dist.fill(f64::INFINITY);
            hops.fill(u32::MAX);
            parent.fill(usize::MAX);
            done.fill(false);
            dist[source] = 0.0;
            hops[source] = 0;
            let mut heap = BinaryHeap::new();
            heap.push(Label {
                dist: 0.0,
                hops: 0,
                node: source,
            });
            while let Some(Label { dist: d, hops: k, node: u }) = heap.pop() {
                if done[u] {
                    continue;
                }
                done[u] = true;
                for &a in &self.adj[u] {
                    let arc = &self.arcs[a];
                    if arc.cap <= 0 || done[arc.to] {
                        continue;
                    }
                    let v = arc.to;
                    let reduced = (arc.cost + potential[u] - potential[v]).max(0.0);
                    let nd = d + reduced;
                    let nk = k + 1;
                    if nd < dist[v] || (nd == dist[v] && nk < hops[v]) {
                        dist[v] = nd;
                        hops[v] = nk;
                        parent[v] = a;
                        heap.push(Label {
                            dist: nd,
                            hops: nk,
                            node: v,
                        });
                    }
                }
            }
            if !dist[sink].is_finite() {
                return invalid(format!(
                    "network carries only {sent} of the requested {amount} units"
                ));
            }
            for v in 0..n {
                if dist[v].is_finite() {
                    potential[v] += dist[v];
                }
            }
            let mut v = sink;
            while v != source {
                let a = parent[v];
                total += self.arcs[a].cost;
                self.arcs[a].cap -= 1;
                self.arcs[a ^ 1].cap += 1;
                v = self.tails[a];
            }
        }
        Ok(total)
    }

    fn initial_potentials(&self, source: usize) -> Vec<f64> {
        let n = self.adj.len();
        let mut dist = vec![f64::INFINITY; n];
        dist[source] = 0.0;
        for u in 0..n {
            if !dist[u].is_finite() {
                continue;
            }
            for &a in &self.adj[u] {
                let arc = &self.arcs[a];
                if a % 2 == 0 && arc.cap > 0 && dist[u] + arc.cost < dist[arc.to] {
                    dist[arc.to] = dist[u] + arc.cost;
                }
            }
        }
        dist.iter()
            .map(|&d| if d.is_finite() { d } else { 0.0 })
            .collect()
    }
}
