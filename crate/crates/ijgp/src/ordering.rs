//! Greedy min-fill elimination orderings and induced width.

use std::collections::BTreeSet;

use crate::factor::Var;
use crate::network::MoralGraph;

/// Permutation of the variables; position 0 is eliminated *last*, so bucket
/// processing walks the vector from the back to the front.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EliminationOrdering {
    pub order: Vec<Var>,
}

impl EliminationOrdering {
    pub fn new(order: Vec<Var>) -> EliminationOrdering {
        EliminationOrdering { order }
    }

    pub fn n(&self) -> usize {
        self.order.len()
    }

    /// `position[v]` of each variable in the ordering.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0usize; self.order.len()];
        for (i, &v) in self.order.iter().enumerate() {
            pos[v] = i;
        }
        pos
    }
}

fn fill_count(adj: &[BTreeSet<Var>], alive: &[bool], v: Var) -> usize {
    let nbrs: Vec<Var> = adj[v].iter().copied().filter(|&u| alive[u]).collect();
    let mut fill = 0;
    for (i, &a) in nbrs.iter().enumerate() {
        for &b in &nbrs[i + 1..] {
            if !adj[a].contains(&b) {
                fill += 1;
            }
        }
    }
    fill
}

/// Greedy min-fill: repeatedly eliminate the vertex adding the fewest fill
/// edges, ties broken toward the lowest index. Deterministic given the graph.
pub fn min_fill_ordering(g: &MoralGraph) -> EliminationOrdering {
    let n = g.n();
    let mut adj: Vec<BTreeSet<Var>> = (0..n).map(|v| g.neighbors(v).clone()).collect();
    let mut alive = vec![true; n];
    let mut elim_seq = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best: Option<(usize, Var)> = None;
        for v in 0..n {
            if !alive[v] {
                continue;
            }
            let f = fill_count(&adj, &alive, v);
            if best.map_or(true, |(bf, bv)| f < bf || (f == bf && v < bv)) {
                best = Some((f, v));
            }
        }
        let (_, v) = best.unwrap();
        let nbrs: Vec<Var> = adj[v].iter().copied().filter(|&u| alive[u]).collect();
        for (i, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[i + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        alive[v] = false;
        elim_seq.push(v);
    }
    elim_seq.reverse();
    EliminationOrdering::new(elim_seq)
}

/// Max, over elimination steps, of the eliminated vertex's remaining-neighbor
/// count (fill edges added as elimination proceeds from the back of `ord`).
pub fn induced_width(g: &MoralGraph, ord: &EliminationOrdering) -> usize {
    let n = g.n();
    assert_eq!(ord.n(), n, "ordering must cover the graph");
    let mut adj: Vec<BTreeSet<Var>> = (0..n).map(|v| g.neighbors(v).clone()).collect();
    let mut alive = vec![true; n];
    let mut width = 0;
    for p in (0..n).rev() {
        let v = ord.order[p];
        let nbrs: Vec<Var> = adj[v].iter().copied().filter(|&u| alive[u]).collect();
        width = width.max(nbrs.len());
        for (i, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[i + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        alive[v] = false;
    }
    width
}
