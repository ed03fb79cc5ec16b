//! Arc-labeled join-graphs: construction from the mini-bucket trace, the
//! dual graph, validity and minimality auditing, label minimization,
//! arc-separation queries and summary stats.

use std::collections::BTreeSet;
use std::fmt;

use crate::factor::Var;
use crate::network::BeliefNetwork;
use crate::ordering::EliminationOrdering;
use crate::structuring::schematic_mini_bucket;

/// Provenance of an edge produced by structuring.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    /// Follows a message of the mini-bucket trace; labeled with the full
    /// separator.
    Out,
    /// Chains mini-buckets of the same bucket; labeled with the single bucket
    /// variable.
    In,
}

#[derive(Clone, Debug)]
pub struct JgEdge {
    pub u: usize,
    pub v: usize,
    /// Arc label θ(u, v) ⊆ χ(u) ∩ χ(v).
    pub theta: BTreeSet<Var>,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug)]
pub struct JgNode {
    /// Variable label χ(v).
    pub chi: BTreeSet<Var>,
    /// CPT ids placed in this cluster (ψ(v)).
    pub psi: Vec<usize>,
}

/// Join-graph decomposition with arc labels (clusters χ/ψ, edge labels θ).
#[derive(Clone, Debug)]
pub struct ArcLabeledJoinGraph {
    pub nodes: Vec<JgNode>,
    pub edges: Vec<JgEdge>,
}

impl ArcLabeledJoinGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// `(neighbor, edge index)` pairs of `u`.
    pub fn neighbors(&self, u: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (ei, e) in self.edges.iter().enumerate() {
            if e.u == u {
                out.push((e.v, ei));
            } else if e.v == u {
                out.push((e.u, ei));
            }
        }
        out
    }

    /// Adjacency lists computed once (edge scans are O(E) otherwise).
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (ei, e) in self.edges.iter().enumerate() {
            adj[e.u].push((e.v, ei));
            adj[e.v].push((e.u, ei));
        }
        adj
    }

    /// Debug dump: one line per node and per edge.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let chi: Vec<String> = n.chi.iter().map(|v| v.to_string()).collect();
            let psi: Vec<String> = n.psi.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "node {} chi: {} psi: {}", i, chi.join(","), psi.join(","));
        }
        for e in &self.edges {
            let theta: Vec<String> = e.theta.iter().map(|v| v.to_string()).collect();
            let kind = match e.kind {
                EdgeKind::In => "in",
                EdgeKind::Out => "out",
            };
            let _ = writeln!(s, "edge {} {} theta: {} {}", e.u, e.v, theta.join(","), kind);
        }
        s
    }
}

/// Build the bounded join-graph from the mini-bucket trace: one cluster per
/// mini-bucket, out-edges along trace arcs labeled with the full separator,
/// in-edges chaining same-bucket mini-buckets labeled with the bucket
/// variable.
pub fn join_graph_structuring(
    net: &BeliefNetwork,
    ord: &EliminationOrdering,
    i_bound: Option<usize>,
) -> ArcLabeledJoinGraph {
    let trace = schematic_mini_bucket(net, ord, i_bound);
    let nodes: Vec<JgNode> = trace
        .mini_buckets
        .iter()
        .map(|mb| JgNode { chi: mb.vars.clone(), psi: mb.cpts.clone() })
        .collect();
    let mut edges = Vec::new();
    for &(from, to) in &trace.arcs {
        let theta: BTreeSet<Var> =
            nodes[from].chi.intersection(&nodes[to].chi).copied().collect();
        edges.push(JgEdge { u: from, v: to, theta, kind: EdgeKind::Out });
    }
    for (bucket_var, mbs) in trace.buckets.iter().enumerate() {
        for w in mbs.windows(2) {
            let mut theta = BTreeSet::new();
            theta.insert(bucket_var);
            edges.push(JgEdge { u: w[0], v: w[1], theta, kind: EdgeKind::In });
        }
    }
    ArcLabeledJoinGraph { nodes, edges }
}

/// Join-tree construction: structuring with an unbounded i-bound. The result
/// is acyclic with full separators as labels.
pub fn build_join_tree(net: &BeliefNetwork, ord: &EliminationOrdering) -> ArcLabeledJoinGraph {
    join_graph_structuring(net, ord, None)
}

/// Minimal dual join-graph: one cluster per CPT, scope-sharing clusters
/// connected and labeled with their shared variables, labels minimized.
/// Edges whose label empties out are dropped. This is the IBP substrate.
pub fn dual_join_graph(net: &BeliefNetwork) -> ArcLabeledJoinGraph {
    let nodes: Vec<JgNode> = net
        .cpts()
        .iter()
        .enumerate()
        .map(|(i, cpt)| JgNode {
            chi: cpt.scope().vars().iter().copied().collect(),
            psi: vec![i],
        })
        .collect();
    let mut edges = Vec::new();
    for u in 0..nodes.len() {
        for v in (u + 1)..nodes.len() {
            let shared: BTreeSet<Var> =
                nodes[u].chi.intersection(&nodes[v].chi).copied().collect();
            if !shared.is_empty() {
                edges.push(JgEdge { u, v, theta: shared, kind: EdgeKind::Out });
            }
        }
    }
    let mut jg = minimize_arc_labels(&ArcLabeledJoinGraph { nodes, edges });
    jg.edges.retain(|e| !e.theta.is_empty());
    jg
}

/// One defect found by [`validate_decomposition`].
#[derive(Clone, Debug, PartialEq)]
pub enum DecompViolation {
    /// CPT appears in zero or multiple clusters.
    CptPlacement { cpt: usize, count: usize },
    /// CPT scope is not covered by its cluster's χ.
    ScopeNotCovered { cpt: usize, node: usize },
    /// Edge label is not a subset of the separator.
    LabelOutsideSeparator { edge: usize },
    /// The clusters containing a variable are not connected by paths labeled
    /// with it.
    ArcConnectednessBroken { var: Var },
}

impl fmt::Display for DecompViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecompViolation::CptPlacement { cpt, count } => {
                write!(f, "CPT {cpt} placed in {count} clusters (expected 1)")
            }
            DecompViolation::ScopeNotCovered { cpt, node } => {
                write!(f, "scope of CPT {cpt} not covered by cluster {node}")
            }
            DecompViolation::LabelOutsideSeparator { edge } => {
                write!(f, "label of edge {edge} exceeds the separator")
            }
            DecompViolation::ArcConnectednessBroken { var } => {
                write!(f, "clusters of variable {var} not arc-connected")
            }
        }
    }
}

/// True iff all clusters containing `x` are connected through edges labeled
/// with `x`. `adj` is the precomputed adjacency of `jg`.
fn var_arc_connected(
    jg: &ArcLabeledJoinGraph,
    adj: &[Vec<(usize, usize)>],
    x: Var,
) -> bool {
    let holders: Vec<usize> = (0..jg.nodes.len())
        .filter(|&i| jg.nodes[i].chi.contains(&x))
        .collect();
    if holders.len() <= 1 {
        return true;
    }
    let mut seen = vec![false; jg.nodes.len()];
    let mut stack = vec![holders[0]];
    seen[holders[0]] = true;
    while let Some(u) = stack.pop() {
        for &(other, ei) in &adj[u] {
            if !seen[other] && jg.edges[ei].theta.contains(&x) {
                seen[other] = true;
                stack.push(other);
            }
        }
    }
    holders.iter().all(|&h| seen[h])
}

/// Check CPT placement and scope coverage, label-separator containment, and
/// per-variable arc-connectedness. Empty iff the decomposition is valid.
pub fn validate_decomposition(
    net: &BeliefNetwork,
    jg: &ArcLabeledJoinGraph,
) -> Vec<DecompViolation> {
    let mut out = Vec::new();
    for c in 0..net.n() {
        let holders: Vec<usize> = (0..jg.nodes.len())
            .filter(|&i| jg.nodes[i].psi.contains(&c))
            .collect();
        if holders.len() != 1 {
            out.push(DecompViolation::CptPlacement { cpt: c, count: holders.len() });
        }
        for &h in &holders {
            let covered = net
                .cpt(c)
                .scope()
                .vars()
                .iter()
                .all(|v| jg.nodes[h].chi.contains(v));
            if !covered {
                out.push(DecompViolation::ScopeNotCovered { cpt: c, node: h });
            }
        }
    }
    for (ei, e) in jg.edges.iter().enumerate() {
        let sep_ok = e
            .theta
            .iter()
            .all(|v| jg.nodes[e.u].chi.contains(v) && jg.nodes[e.v].chi.contains(v));
        if !sep_ok {
            out.push(DecompViolation::LabelOutsideSeparator { edge: ei });
        }
    }
    let mut vars = BTreeSet::new();
    for n in &jg.nodes {
        vars.extend(n.chi.iter().copied());
    }
    let adj = jg.adjacency();
    for &x in &vars {
        if !var_arc_connected(jg, &adj, x) {
            out.push(DecompViolation::ArcConnectednessBroken { var: x });
        }
    }
    out
}

/// Variables whose labeled-edge subgraph contains a cycle (the decomposition
/// may still be valid; such cycles cause message over-counting).
pub fn variable_cycles(jg: &ArcLabeledJoinGraph) -> Vec<Var> {
    let mut vars = BTreeSet::new();
    for n in &jg.nodes {
        vars.extend(n.chi.iter().copied());
    }
    let mut out = Vec::new();
    for &x in &vars {
        // union-find over x-labeled edges; a joining edge inside one
        // component closes a cycle
        let mut parent: Vec<usize> = (0..jg.nodes.len()).collect();
        fn find(parent: &mut Vec<usize>, mut a: usize) -> usize {
            while parent[a] != a {
                parent[a] = parent[parent[a]];
                a = parent[a];
            }
            a
        }
        let mut cyclic = false;
        for e in &jg.edges {
            if !e.theta.contains(&x) {
                continue;
            }
            let (ra, rb) = (find(&mut parent, e.u), find(&mut parent, e.v));
            if ra == rb {
                cyclic = true;
                break;
            }
            parent[ra] = rb;
        }
        if cyclic {
            out.push(x);
        }
    }
    out
}

/// `(edge index, var)` pairs that could be deleted from labels without
/// breaking arc-connectedness. Empty iff the labeling is minimal.
pub fn label_minimality_violations(jg: &ArcLabeledJoinGraph) -> Vec<(usize, Var)> {
    let mut out = Vec::new();
    let mut probe = jg.clone();
    let adj = jg.adjacency();
    for (ei, e) in jg.edges.iter().enumerate() {
        for &x in &e.theta {
            probe.edges[ei].theta.remove(&x);
            if var_arc_connected(&probe, &adj, x) {
                out.push((ei, x));
            }
            probe.edges[ei].theta.insert(x);
        }
    }
    out
}

/// Greedily delete variables from arc labels while arc-connectedness holds.
/// Edges are scanned in canonical `(u, v)` order and label variables in
/// ascending order, so the (non-unique) minimal labeling picked is
/// deterministic.
pub fn minimize_arc_labels(jg: &ArcLabeledJoinGraph) -> ArcLabeledJoinGraph {
    let mut out = jg.clone();
    let mut order: Vec<usize> = (0..out.edges.len()).collect();
    order.sort_by_key(|&ei| {
        let e = &out.edges[ei];
        (e.u.min(e.v), e.u.max(e.v))
    });
    let adj = out.adjacency();
    for &ei in &order {
        let label: Vec<Var> = out.edges[ei].theta.iter().copied().collect();
        for x in label {
            out.edges[ei].theta.remove(&x);
            if !var_arc_connected(&out, &adj, x) {
                out.edges[ei].theta.insert(x);
            }
        }
    }
    out
}

/// True iff removing the edges `ez` disconnects every node of `nw` from every
/// node of `ny`.
pub fn arc_separates(
    jg: &ArcLabeledJoinGraph,
    nw: &[usize],
    ny: &[usize],
    ez: &[usize],
) -> bool {
    let removed: BTreeSet<usize> = ez.iter().copied().collect();
    let mut seen = vec![false; jg.nodes.len()];
    let mut stack: Vec<usize> = Vec::new();
    for &s in nw {
        if !seen[s] {
            seen[s] = true;
            stack.push(s);
        }
    }
    while let Some(u) = stack.pop() {
        for (ei, e) in jg.edges.iter().enumerate() {
            if removed.contains(&ei) {
                continue;
            }
            let other = if e.u == u {
                e.v
            } else if e.v == u {
                e.u
            } else {
                continue;
            };
            if !seen[other] {
                seen[other] = true;
                stack.push(other);
            }
        }
    }
    ny.iter().all(|&t| !seen[t])
}

/// The quantities of the per-iteration complexity bound: cluster count N,
/// max cluster size (w* + 1), max label size, max degree and separator width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecompositionStats {
    pub cluster_count: usize,
    pub max_cluster_size: usize,
    pub max_label_size: usize,
    pub max_degree: usize,
    pub separator_width: usize,
}

pub fn decomposition_stats(jg: &ArcLabeledJoinGraph) -> DecompositionStats {
    let mut degree = vec![0usize; jg.nodes.len()];
    let mut max_label = 0;
    let mut sep_width = 0;
    for e in &jg.edges {
        degree[e.u] += 1;
        degree[e.v] += 1;
        max_label = max_label.max(e.theta.len());
        let sep = jg.nodes[e.u].chi.intersection(&jg.nodes[e.v].chi).count();
        sep_width = sep_width.max(sep);
    }
    DecompositionStats {
        cluster_count: jg.nodes.len(),
        max_cluster_size: jg.nodes.iter().map(|n| n.chi.len()).max().unwrap_or(0),
        max_label_size: max_label,
        max_degree: degree.into_iter().max().unwrap_or(0),
        separator_width: sep_width,
    }
}
