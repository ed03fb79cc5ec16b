//! Message-passing engines over arc-labeled join-graphs: the iterative
//! engine (exact in one iteration on a join-tree), belief propagation on the
//! minimal dual graph, and the one-pass mini-clustering variant.
//!
//! The iterative engine works in the log domain: cluster functions are
//! stored as log tables, products become sums, and marginalization is a
//! max-shifted log-sum-exp. That keeps 30-iteration runs over channel
//! likelihoods with huge dynamic range well conditioned, where linear-domain
//! products drift into denormals.

use std::collections::{BTreeSet, HashMap};
use std::rc::Rc;
use std::time::{Duration, Instant};

use crate::elimination::{product_marginal, Guard};
use crate::factor::{Assignment, Factor, Scope, Var};
use crate::joingraph::{build_join_tree, dual_join_graph, ArcLabeledJoinGraph};
use crate::network::BeliefNetwork;
use crate::ordering::EliminationOrdering;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct EngineConfig {
    pub iterations: usize,
    /// Normalize every message; keeps long runs numerically stable without
    /// changing the final beliefs.
    pub normalize_messages: bool,
    /// Stop early once no message entry moves by more than this between
    /// consecutive sweeps.
    pub convergence_epsilon: Option<f64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            iterations: 10,
            normalize_messages: true,
            convergence_epsilon: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BeliefResult {
    /// Posterior marginals indexed by variable, `None` at evidenced ones.
    pub beliefs: Vec<Option<Factor>>,
    pub iterations_run: usize,
    pub converged: bool,
    /// Whole run, including belief extraction.
    pub wall_time: Duration,
    /// Message sweeps only.
    pub propagation_time: Duration,
}

/// Forward half of a message schedule: each undirected edge once, directed
/// greedily so that the node still waiting for the fewest incoming messages
/// sends first (ties to the lowest `(source, target)` pair). An iteration
/// runs this list, then the same list reversed with directions flipped, so
/// every directed edge is updated exactly once per iteration. On a tree this
/// is a collect pass towards a root followed by a distribute pass.
pub fn build_schedule(jg: &ArcLabeledJoinGraph) -> Vec<(usize, usize)> {
    let adj = jg.adjacency();
    // missing[u] = incoming messages u still waits for
    let mut missing: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    let mut used = vec![false; jg.edges.len()];
    let mut fwd = Vec::with_capacity(jg.edges.len());
    for _ in 0..jg.edges.len() {
        let mut best: Option<(usize, usize, usize, usize)> = None;
        for (ei, e) in jg.edges.iter().enumerate() {
            if used[ei] {
                continue;
            }
            for (u, v) in [(e.u, e.v), (e.v, e.u)] {
                let key = (missing[u], u, v, ei);
                if best.map_or(true, |b| key < b) {
                    best = Some(key);
                }
            }
        }
        let (_, u, v, ei) = best.unwrap();
        used[ei] = true;
        missing[v] -= 1;
        fwd.push((u, v));
    }
    fwd
}

/// Stable identity of a function travelling through the graph, as a dense
/// index: first every CPT placed in a cluster, then the combined function of
/// every directed edge slot. Messages are sets of functions: a function
/// reaching a cluster along several paths must count once, or the forwarded
/// sets grow without bound on cyclic graphs.
type FnId = u32;

/// Reusable work space for one engine run: a generation-stamped membership
/// table for id deduplication plus kernel buffers, so the per-message path
/// does not allocate.
struct Scratch {
    seen: Vec<u32>,
    gen: u32,
    /// Gathered ids.
    ids: Vec<FnId>,
    /// Log-product value per cluster configuration.
    vals: Vec<f64>,
    outidx: Vec<u32>,
    outmax: Vec<f64>,
    outsum: Vec<f64>,
    out: Vec<f64>,
    /// Digit strides of the factor currently being folded in.
    maps: Vec<usize>,
    digits: Vec<usize>,
}

impl Scratch {
    fn new(n_ids: usize, max_cluster: usize, max_out: usize) -> Scratch {
        Scratch {
            seen: vec![0; n_ids],
            gen: 0,
            ids: Vec::new(),
            vals: vec![0.0; max_cluster],
            outidx: Vec::new(),
            outmax: vec![0.0; max_out],
            outsum: vec![0.0; max_out],
            out: vec![0.0; max_out],
            maps: Vec::new(),
            digits: Vec::new(),
        }
    }

    fn next_gen(&mut self) {
        self.gen += 1;
        if self.gen == u32::MAX {
            self.seen.fill(0);
            self.gen = 1;
        }
    }

    /// True the first time `id` is offered in the current generation.
    fn insert(&mut self, id: FnId) -> bool {
        let slot = &mut self.seen[id as usize];
        if *slot == self.gen {
            false
        } else {
            *slot = self.gen;
            true
        }
    }
}

/// Cached evaluation plan for one directed message. The inputs of a message
/// — which functions reach the cluster, how they split into product inputs
/// versus forwarded individuals, and where each product input's entries sit
/// under the cluster's row-major order — depend only on graph structure and
/// settle after the first couple of sweeps. Once no message's forwarded set
/// changed during a sweep, later sweeps reuse these plans untouched and only
/// redo the numeric work.
#[derive(Default)]
struct Plan {
    built: bool,
    /// Gathered ids, in gather order, for cheap validity checks.
    ids: Vec<FnId>,
    /// Ids entering the eliminator sum.
    part: Vec<FnId>,
    /// Ids forwarded unchanged.
    fwd: Vec<FnId>,
    /// Absolute arena index of every product term: for cluster
    /// configuration `j` and product input `t`, entry `j * part.len() + t`.
    /// Evaluating the whole message is then one flat gather-sum.
    abs: Vec<u32>,
}

/// Log-sum-exp `scr.vals[..n]` down into `scr.out[..on]`, entry `j` feeding
/// `outidx[j]`, with the usual max shift per output entry.
fn lse_reduce(outidx: &[u32], n: usize, on: usize, scr: &mut Scratch) {
    scr.outmax[..on].fill(f64::NEG_INFINITY);
    for j in 0..n {
        let o = outidx[j] as usize;
        if scr.vals[j] > scr.outmax[o] {
            scr.outmax[o] = scr.vals[j];
        }
    }
    scr.outsum[..on].fill(0.0);
    for j in 0..n {
        let o = outidx[j] as usize;
        let m = scr.outmax[o];
        if m > f64::NEG_INFINITY {
            scr.outsum[o] += (scr.vals[j] - m).exp();
        }
    }
    for o in 0..on {
        let m = scr.outmax[o];
        scr.out[o] =
            if m > f64::NEG_INFINITY { m + scr.outsum[o].ln() } else { f64::NEG_INFINITY };
    }
}

/// True iff two variable bitmasks share a set bit.
fn masks_intersect(a: &[u64], b: &[u64]) -> bool {
    a.iter().zip(b).any(|(x, y)| x & y != 0)
}

fn scope_mask(scope: &Scope, words: usize) -> Vec<u64> {
    let mut m = vec![0u64; words];
    for &v in scope.vars() {
        m[v / 64] |= 1 << (v % 64);
    }
    m
}

/// For each digit of `outer`, the stride of that variable in `inner`'s
/// table (0 when absent). Both scopes ascend, so a merge scan suffices.
fn fill_digit_strides(outer: &Scope, inner: &Scope, inner_strides: &[usize], out: &mut [usize]) {
    let iv = inner.vars();
    let mut j = 0;
    for (d, &v) in outer.vars().iter().enumerate() {
        while j < iv.len() && iv[j] < v {
            j += 1;
        }
        out[d] = if j < iv.len() && iv[j] == v { inner_strides[j] } else { 0 };
    }
}

/// Row-major walk of `chi` recording, per configuration, the output entry
/// reached by following `km` (per-digit output strides).
fn fill_outidx(chi: &Scope, km: &[usize], out: &mut Vec<u32>) {
    let k = chi.len();
    let cards = chi.cards();
    let n = chi.table_len();
    out.clear();
    out.reserve(n);
    let mut digits = vec![0usize; k];
    let mut ki = 0usize;
    for _ in 0..n {
        out.push(ki as u32);
        for d in (0..k).rev() {
            digits[d] += 1;
            ki += km[d];
            if digits[d] < cards[d] {
                break;
            }
            digits[d] = 0;
            ki -= km[d] * cards[d];
        }
    }
}

struct Engine<'a> {
    /// χ(u) minus evidenced variables.
    chi: Vec<Scope>,
    chi_len: Vec<usize>,
    /// θ minus evidenced variables, per undirected edge.
    theta: Vec<Scope>,
    theta_len: Vec<usize>,
    edge_uv: Vec<(usize, usize)>,
    /// Eliminator bitmask per edge and direction: `[0]` for u→v, `[1]` for
    /// v→u.
    elim_masks: Vec<[Vec<u64>; 2]>,
    /// Per directed slot, the label entry each cluster configuration of the
    /// source sums into, in row-major cluster order. Slot-stable, so
    /// computed once.
    slot_outidx: Vec<Vec<u32>>,
    /// Slots whose eliminator is empty (label = whole cluster): the message
    /// is a plain product, no reduction needed.
    slot_copy: Vec<bool>,
    /// `(neighbor, edge index)` lists.
    adj: Vec<Vec<(usize, usize)>>,
    /// Number of base function ids; message ids follow, one per slot.
    nb: u32,
    base_ids: Vec<std::ops::Range<u32>>,
    /// Per function id: scope, scope strides, variable bitmask, log table.
    /// Message tables are preallocated and rewritten in place each sweep —
    /// downstream readers always see the latest value, which is exactly the
    /// within-sweep update order the schedule prescribes.
    fn_scope: Vec<Scope>,
    fn_strides: Vec<Vec<usize>>,
    fn_mask: Vec<Vec<u64>>,
    /// All log tables, flattened into one arena indexed by `tab_off`, so a
    /// plan can address any function entry with a single absolute index.
    tab: Vec<f64>,
    tab_off: Vec<u32>,
    /// Whether a slot's message participates in gathering. Always true once
    /// construction finishes: tables start neutral (log 1 = 0), which is the
    /// all-ones convention for not-yet-computed messages.
    present: Vec<bool>,
    /// Forwarded individual ids per slot, resolved to their fixed point at
    /// construction: the forwarded sets depend only on graph structure, not
    /// on table values, so they are settled once instead of letting them
    /// grow in over the first sweeps.
    indiv: Vec<Vec<FnId>>,
    /// One evaluation plan per directed slot, built at construction.
    plans: Vec<Plan>,
    cards: Vec<usize>,
    evidence: &'a Assignment,
    normalize: bool,
}

impl<'a> Engine<'a> {
    fn new(
        net: &BeliefNetwork,
        e: &'a Assignment,
        jg: &ArcLabeledJoinGraph,
        normalize: bool,
    ) -> Result<Engine<'a>> {
        let cards: Vec<usize> = (0..net.n()).map(|v| net.card(v)).collect();
        let mask_words = net.n().div_ceil(64);
        let scope_of = |vars: &BTreeSet<Var>| -> Result<Scope> {
            Scope::new(
                vars.iter()
                    .filter(|v| !e.contains_key(v))
                    .map(|&v| (v, cards[v]))
                    .collect(),
            )
        };
        let chi: Vec<Scope> =
            jg.nodes.iter().map(|n| scope_of(&n.chi)).collect::<Result<_>>()?;
        let theta: Vec<Scope> =
            jg.edges.iter().map(|ed| scope_of(&ed.theta)).collect::<Result<_>>()?;
        let edge_uv: Vec<(usize, usize)> =
            jg.edges.iter().map(|ed| (ed.u, ed.v)).collect();
        let chi_masks: Vec<Vec<u64>> =
            chi.iter().map(|s| scope_mask(s, mask_words)).collect();
        let elim_masks: Vec<[Vec<u64>; 2]> = edge_uv
            .iter()
            .zip(&theta)
            .map(|(&(u, v), th)| {
                let tm = scope_mask(th, mask_words);
                let diff = |cm: &[u64]| -> Vec<u64> {
                    cm.iter().zip(&tm).map(|(c, t)| c & !t).collect()
                };
                [diff(&chi_masks[u]), diff(&chi_masks[v])]
            })
            .collect();

        // base functions: evidence-reduced CPT log tables; scalars are
        // dropped (they only rescale normalized beliefs), except that a zero
        // scalar means the evidence has no mass
        let mut fn_scope = Vec::new();
        let mut tab: Vec<f64> = Vec::new();
        let mut tab_off: Vec<u32> = Vec::new();
        let mut base_ids = Vec::with_capacity(jg.node_count());
        for n in &jg.nodes {
            let start = fn_scope.len() as u32;
            for &ci in &n.psi {
                let f = net.cpts()[ci].reduce_evidence(e);
                if f.scope().is_empty() {
                    if f.table()[0] == 0.0 {
                        return Err(Error::InconsistentEvidence);
                    }
                    continue;
                }
                tab_off.push(tab.len() as u32);
                tab.extend(f.table().iter().map(|&x| x.ln()));
                fn_scope.push(f.scope().clone());
            }
            base_ids.push(start..fn_scope.len() as u32);
        }
        let nb = fn_scope.len() as u32;
        // message functions, two slots per edge, tables rewritten in place
        let mut slot_outidx = Vec::with_capacity(2 * edge_uv.len());
        let mut slot_copy = Vec::with_capacity(2 * edge_uv.len());
        for (ei, &(u, v)) in edge_uv.iter().enumerate() {
            for (dir, src) in [u, v].into_iter().enumerate() {
                slot_copy.push(elim_masks[ei][dir].iter().all(|&w| w == 0));
                let th = &theta[ei];
                let strides = th.strides();
                let mut km = vec![0usize; chi[src].len()];
                fill_digit_strides(&chi[src], th, &strides, &mut km);
                let mut oi = Vec::new();
                fill_outidx(&chi[src], &km, &mut oi);
                slot_outidx.push(oi);
                fn_scope.push(th.clone());
                tab_off.push(tab.len() as u32);
                tab.resize(tab.len() + th.table_len(), 0.0);
            }
        }
        let fn_strides: Vec<Vec<usize>> = fn_scope.iter().map(|s| s.strides()).collect();
        let fn_mask: Vec<Vec<u64>> =
            fn_scope.iter().map(|s| scope_mask(s, mask_words)).collect();
        let n_slots = 2 * edge_uv.len();
        let chi_len = chi.iter().map(|s| s.table_len()).collect();
        let theta_len = theta.iter().map(|s| s.table_len()).collect();
        let mut eng = Engine {
            chi,
            chi_len,
            theta,
            theta_len,
            edge_uv,
            elim_masks,
            slot_outidx,
            slot_copy,
            adj: jg.adjacency(),
            nb,
            base_ids,
            fn_scope,
            fn_strides,
            fn_mask,
            tab,
            tab_off,
            present: vec![true; n_slots],
            indiv: vec![Vec::new(); n_slots],
            plans: Vec::new(),
            cards,
            evidence: e,
            normalize,
        };
        // resolve the forwarded sets: each pass only grows them, so this
        // reaches the unique fixed point and stops
        let mut scr = Scratch::new(eng.n_ids(), 1, 1);
        loop {
            let mut changed = false;
            for ei in 0..eng.edge_uv.len() {
                for dir in 0..2 {
                    let (a, b) = eng.edge_uv[ei];
                    let (u, v) = if dir == 0 { (a, b) } else { (b, a) };
                    let slot = 2 * ei + dir;
                    eng.gather(u, v, eng.nb + slot as u32, &mut scr);
                    let elim = &eng.elim_masks[ei][dir];
                    let fwd: Vec<FnId> = scr
                        .ids
                        .iter()
                        .copied()
                        .filter(|&id| !masks_intersect(&eng.fn_mask[id as usize], elim))
                        .collect();
                    if fwd != eng.indiv[slot] {
                        eng.indiv[slot] = fwd;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let mut plans: Vec<Plan> = (0..n_slots).map(|_| Plan::default()).collect();
        for ei in 0..eng.edge_uv.len() {
            for dir in 0..2 {
                let (a, b) = eng.edge_uv[ei];
                let (u, v) = if dir == 0 { (a, b) } else { (b, a) };
                let slot = 2 * ei + dir;
                eng.build_plan(u, v, ei, slot, &mut plans[slot], &mut scr);
            }
        }
        eng.plans = plans;
        Ok(eng)
    }

    fn n_ids(&self) -> usize {
        self.fn_scope.len()
    }

    fn max_cluster_entries(&self) -> usize {
        self.chi.iter().map(|s| s.table_len()).max().unwrap_or(1)
    }

    fn max_out_entries(&self) -> usize {
        let t = self.theta.iter().map(|s| s.table_len()).max().unwrap_or(1);
        t.max(self.cards.iter().copied().max().unwrap_or(1))
    }

    /// Storage slot of the directed message sent along edge `ei` by `from`.
    fn slot(&self, ei: usize, from: usize) -> usize {
        2 * ei + usize::from(self.edge_uv[ei].0 != from)
    }

    /// Collect into `scr.ids` the functions available at `u`, deduplicated
    /// by identity: its own CPTs plus every incoming message except the one
    /// from `skip` (pass `usize::MAX` to keep all) and except `skip_id`,
    /// the message currently being recomputed — its previous value must not
    /// feed itself. Scalar message functions carry no information once
    /// beliefs are normalized and are left out.
    fn gather(&self, u: usize, skip: usize, skip_id: FnId, scr: &mut Scratch) {
        scr.next_gen();
        scr.ids.clear();
        if skip_id != u32::MAX {
            scr.insert(skip_id);
        }
        for id in self.base_ids[u].clone() {
            scr.insert(id);
            scr.ids.push(id);
        }
        for &(w, ei) in &self.adj[u] {
            if w == skip {
                continue;
            }
            let slot = self.slot(ei, w);
            if !self.present[slot] {
                continue;
            }
            for &id in &self.indiv[slot] {
                if scr.insert(id) {
                    scr.ids.push(id);
                }
            }
            let mid = self.nb + slot as u32;
            if !self.fn_scope[mid as usize].is_empty() && scr.insert(mid) {
                scr.ids.push(mid);
            }
        }
    }

    /// Sum the log tables of `ids` over the configurations of cluster `u`
    /// and log-sum-exp the result down into `scr.out[..on]`, where
    /// `outidx[j]` names the output entry configuration `j` feeds.
    fn sum_down(&self, u: usize, ids: &[FnId], outidx: &[u32], on: usize, scr: &mut Scratch) {
        let chi = &self.chi[u];
        let k = chi.len();
        let n = chi.table_len();
        let cards = chi.cards();
        scr.vals[..n].fill(0.0);
        scr.maps.resize(k, 0);
        scr.digits.resize(k, 0);
        // one row-major gather-add pass per factor
        for &id in ids {
            fill_digit_strides(
                chi,
                &self.fn_scope[id as usize],
                &self.fn_strides[id as usize],
                &mut scr.maps[..k],
            );
            let tab = &self.tab[self.tab_off[id as usize] as usize..];
            scr.digits[..k].fill(0);
            let mut pos = 0usize;
            for j in 0..n {
                scr.vals[j] += tab[pos];
                for d in (0..k).rev() {
                    scr.digits[d] += 1;
                    pos += scr.maps[d];
                    if scr.digits[d] < cards[d] {
                        break;
                    }
                    scr.digits[d] = 0;
                    pos -= scr.maps[d] * cards[d];
                }
            }
        }
        lse_reduce(outidx, n, on, scr);
    }

    /// (Re)derive `plan` for the message `u` sends to `v` along edge `ei`:
    /// gather the available functions, split off those touching the
    /// eliminator, and record their table positions over χ(u)'s row-major
    /// order.
    fn build_plan(&self, u: usize, v: usize, ei: usize, slot: usize, plan: &mut Plan, scr: &mut Scratch) {
        self.gather(u, v, self.nb + slot as u32, scr);
        if plan.built && scr.ids == plan.ids {
            return;
        }
        plan.ids.clear();
        plan.ids.extend_from_slice(&scr.ids);
        let dir = usize::from(self.edge_uv[ei].0 != u);
        let elim = &self.elim_masks[ei][dir];
        plan.part.clear();
        plan.fwd.clear();
        for &id in &plan.ids {
            if masks_intersect(&self.fn_mask[id as usize], elim) {
                plan.part.push(id);
            } else {
                plan.fwd.push(id);
            }
        }
        let chi = &self.chi[u];
        let k = chi.len();
        let n = chi.table_len();
        let cards = chi.cards();
        let nf = plan.part.len();
        scr.maps.resize(k, 0);
        scr.digits.resize(k, 0);
        plan.abs.clear();
        plan.abs.resize(nf * n, 0);
        for (t, &id) in plan.part.iter().enumerate() {
            fill_digit_strides(
                chi,
                &self.fn_scope[id as usize],
                &self.fn_strides[id as usize],
                &mut scr.maps[..k],
            );
            let off = self.tab_off[id as usize];
            scr.digits[..k].fill(0);
            let mut pos = 0usize;
            for j in 0..n {
                plan.abs[j * nf + t] = off + pos as u32;
                for d in (0..k).rev() {
                    scr.digits[d] += 1;
                    pos += scr.maps[d];
                    if scr.digits[d] < cards[d] {
                        break;
                    }
                    scr.digits[d] = 0;
                    pos -= scr.maps[d] * cards[d];
                }
            }
        }
        plan.built = true;
    }

    /// Compute the message `u` sends along edge `ei` into `scr.out`;
    /// `commit` stores it. The eliminator sum runs over every configuration
    /// of χ(u), so the combined function always spans the full label.
    /// Returns the output length.
    fn compute(&self, u: usize, ei: usize, scr: &mut Scratch) -> Result<usize> {
        let slot = self.slot(ei, u);
        let plan = &self.plans[slot];
        let n = self.chi_len[u];
        let nf = plan.part.len();
        let tab = self.tab.as_slice();
        let mut p = 0usize;
        for j in 0..n {
            let mut s = 0.0;
            for _ in 0..nf {
                s += tab[plan.abs[p] as usize];
                p += 1;
            }
            scr.vals[j] = s;
        }
        let on = self.theta_len[ei];
        if self.slot_copy[slot] {
            scr.out[..on].copy_from_slice(&scr.vals[..n]);
        } else {
            lse_reduce(&self.slot_outidx[slot], n, on, scr);
        }
        if self.normalize {
            let mut mx = f64::NEG_INFINITY;
            for &x in &scr.out[..on] {
                if x > mx {
                    mx = x;
                }
            }
            if !(mx > f64::NEG_INFINITY) {
                return Err(Error::InconsistentEvidence);
            }
            let t: f64 = scr.out[..on].iter().map(|&x| (x - mx).exp()).sum();
            let logz = mx + t.ln();
            for x in &mut scr.out[..on] {
                *x -= logz;
            }
        }
        Ok(on)
    }

    /// Store the computed message table; the forwarded set is already at
    /// its fixed point.
    fn commit(&mut self, slot: usize, on: usize, scr: &Scratch) {
        let mid = self.nb as usize + slot;
        let off = self.tab_off[mid] as usize;
        self.tab[off..off + on].copy_from_slice(&scr.out[..on]);
    }

    /// Read each unevidenced variable's marginal off the lowest-numbered
    /// cluster whose label contains it.
    fn beliefs(&self, scr: &mut Scratch) -> Result<Vec<Option<Factor>>> {
        let n_vars = self.cards.len();
        let mut out = vec![None; n_vars];
        for x in 0..n_vars {
            if self.evidence.contains_key(&x) {
                continue;
            }
            let home = (0..self.chi.len()).find(|&u| self.chi[u].contains(x));
            let Some(u) = home else {
                out[x] = Some(Factor::unary(
                    x,
                    vec![1.0 / self.cards[x] as f64; self.cards[x]],
                ));
                continue;
            };
            self.gather(u, usize::MAX, u32::MAX, scr);
            let ids = std::mem::take(&mut scr.ids);
            let km: Vec<usize> =
                self.chi[u].vars().iter().map(|&v| usize::from(v == x)).collect();
            let mut oi = std::mem::take(&mut scr.outidx);
            fill_outidx(&self.chi[u], &km, &mut oi);
            let on = self.cards[x];
            self.sum_down(u, &ids, &oi, on, scr);
            scr.outidx = oi;
            scr.ids = ids;
            let mut mx = f64::NEG_INFINITY;
            for &v in &scr.out[..on] {
                if v > mx {
                    mx = v;
                }
            }
            if !(mx > f64::NEG_INFINITY) {
                return Err(Error::InconsistentEvidence);
            }
            let mut probs: Vec<f64> = scr.out[..on].iter().map(|&v| (v - mx).exp()).collect();
            let s: f64 = probs.iter().sum();
            for p in &mut probs {
                *p /= s;
            }
            out[x] = Some(Factor::unary(x, probs));
        }
        Ok(out)
    }

    /// Linear, normalized view of a slot's combined table, for convergence
    /// deltas.
    fn linear_message(&self, slot: usize) -> Vec<f64> {
        let mid = self.nb as usize + slot;
        let off = self.tab_off[mid] as usize;
        let t = &self.tab[off..off + self.fn_scope[mid].table_len()];
        let mx = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(mx > f64::NEG_INFINITY) {
            return vec![0.0; t.len()];
        }
        let lin: Vec<f64> = t.iter().map(|&x| (x - mx).exp()).collect();
        let s: f64 = lin.iter().sum();
        lin.into_iter().map(|x| x / s).collect()
    }
}

/// Iterative propagation over an arc-labeled join-graph. The decomposition
/// must be valid for `net` (see `joingraph::validate_decomposition`); this is
/// not re-checked here. Evidence is handled by reducing cluster functions
/// and dropping evidenced variables from cluster and arc labels.
pub fn ijgp_run(
    net: &BeliefNetwork,
    e: &Assignment,
    jg: &ArcLabeledJoinGraph,
    cfg: &EngineConfig,
) -> Result<BeliefResult> {
    let t0 = Instant::now();
    let mut eng = Engine::new(net, e, jg, cfg.normalize_messages)?;
    let mut edge_of = HashMap::new();
    for (ei, e) in jg.edges.iter().enumerate() {
        edge_of.insert((e.u.min(e.v), e.u.max(e.v)), ei);
    }
    let fwd = build_schedule(jg);
    let mut sweep: Vec<(usize, usize, usize)> = fwd
        .iter()
        .map(|&(u, v)| (u, v, edge_of[&(u.min(v), u.max(v))]))
        .collect();
    sweep.extend(
        fwd.iter().rev().map(|&(u, v)| (v, u, edge_of[&(u.min(v), u.max(v))])),
    );

    let mut scr =
        Scratch::new(eng.n_ids(), eng.max_cluster_entries(), eng.max_out_entries());
    let mut prev: HashMap<usize, (Vec<FnId>, Vec<f64>)> = HashMap::new();
    let mut iterations_run = 0;
    let mut converged = false;
    let prop_t0 = Instant::now();
    for _ in 0..cfg.iterations {
        let mut delta: f64 = 0.0;
        for &(u, _v, ei) in &sweep {
            let slot = eng.slot(ei, u);
            let on = eng.compute(u, ei, &mut scr)?;
            eng.commit(slot, on, &scr);
            if cfg.convergence_epsilon.is_some() {
                let lin = eng.linear_message(slot);
                let mut ids = eng.indiv[slot].clone();
                ids.sort_unstable();
                let d = match prev.get(&slot) {
                    Some((pids, plin)) if *pids == ids => lin
                        .iter()
                        .zip(plin)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max),
                    _ => f64::INFINITY,
                };
                delta = delta.max(d);
                prev.insert(slot, (ids, lin));
            }
        }
        iterations_run += 1;
        if let Some(eps) = cfg.convergence_epsilon {
            if delta <= eps {
                converged = true;
                break;
            }
        }
    }
    let propagation_time = prop_t0.elapsed();
    let beliefs = eng.beliefs(&mut scr)?;
    Ok(BeliefResult {
        beliefs,
        iterations_run,
        converged,
        wall_time: t0.elapsed(),
        propagation_time,
    })
}

/// Belief propagation: iterative propagation over the minimal dual
/// join-graph (one cluster per CPT). Exact on polytrees once converged.
pub fn ibp_run(net: &BeliefNetwork, e: &Assignment, cfg: &EngineConfig) -> Result<BeliefResult> {
    let jg = dual_join_graph(net);
    ijgp_run(net, e, &jg, cfg)
}

/// Greedy first-fit partition of functions, largest scopes first, keeping
/// each group's combined scope within `bound` variables. A function larger
/// than the bound gets a group of its own.
fn first_fit_partition(funcs: &[Rc<Factor>], bound: Option<usize>) -> Vec<Vec<Rc<Factor>>> {
    let cap = bound.unwrap_or(usize::MAX);
    let mut idx: Vec<usize> = (0..funcs.len()).collect();
    idx.sort_by_key(|&i| std::cmp::Reverse(funcs[i].scope().len()));
    let mut parts: Vec<(BTreeSet<Var>, Vec<Rc<Factor>>)> = Vec::new();
    for &i in &idx {
        let svars: BTreeSet<Var> = funcs[i].scope().vars().iter().copied().collect();
        let slot = parts
            .iter_mut()
            .find(|(vars, _)| vars.union(&svars).count() <= cap);
        match slot {
            Some((vars, fs)) => {
                vars.extend(svars);
                fs.push(Rc::clone(&funcs[i]));
            }
            None => parts.push((svars, vec![Rc::clone(&funcs[i])])),
        }
    }
    parts.into_iter().map(|(_, fs)| fs).collect()
}

/// Mini-clustering: a single collect/distribute pass over the join-tree of
/// `ord`, where each message is computed by first-fit partitioning the
/// cluster's functions into groups touching at most `i_bound` variables and
/// summing each group separately. `i_bound = None` reduces to exact
/// join-tree propagation.
pub fn mc_run(
    net: &BeliefNetwork,
    e: &Assignment,
    ord: &EliminationOrdering,
    i_bound: Option<usize>,
) -> Result<BeliefResult> {
    let t0 = Instant::now();
    let jt = build_join_tree(net, ord);
    let chi: Vec<BTreeSet<Var>> = jt
        .nodes
        .iter()
        .map(|n| n.chi.iter().copied().filter(|v| !e.contains_key(v)).collect())
        .collect();
    let theta: Vec<BTreeSet<Var>> = jt
        .edges
        .iter()
        .map(|ed| ed.theta.iter().copied().filter(|v| !e.contains_key(v)).collect())
        .collect();
    let adj = jt.adjacency();
    let base: Vec<Vec<Rc<Factor>>> = jt
        .nodes
        .iter()
        .map(|n| {
            n.psi
                .iter()
                .map(|&ci| Rc::new(net.cpts()[ci].reduce_evidence(e)))
                .collect()
        })
        .collect();
    let mut edge_of = HashMap::new();
    for (ei, ed) in jt.edges.iter().enumerate() {
        edge_of.insert((ed.u.min(ed.v), ed.u.max(ed.v)), ei);
    }
    let fwd = build_schedule(&jt);
    let mut sweep: Vec<(usize, usize, usize)> = fwd
        .iter()
        .map(|&(u, v)| (u, v, edge_of[&(u.min(v), u.max(v))]))
        .collect();
    sweep.extend(
        fwd.iter().rev().map(|&(u, v)| (v, u, edge_of[&(u.min(v), u.max(v))])),
    );

    let mut messages: HashMap<(usize, usize), Vec<Rc<Factor>>> = HashMap::new();
    let prop_t0 = Instant::now();
    for &(u, v, ei) in &sweep {
        let elim: Vec<Var> = chi[u].difference(&theta[ei]).copied().collect();
        let mut funcs = base[u].clone();
        for &(w, _) in &adj[u] {
            if w == v {
                continue;
            }
            if let Some(m) = messages.get(&(w, u)) {
                funcs.extend(m.iter().cloned());
            }
        }
        let mut out_msgs = Vec::new();
        for part in first_fit_partition(&funcs, i_bound) {
            let refs: Vec<&Factor> = part.iter().map(|f| f.as_ref()).collect();
            let m = Factor::product_summed(&refs, &elim)?;
            out_msgs.push(Rc::new(m.normalize()?));
        }
        messages.insert((u, v), out_msgs);
    }
    let propagation_time = prop_t0.elapsed();

    let guard = Guard::default();
    let n_vars = net.n();
    let mut beliefs = vec![None; n_vars];
    for x in 0..n_vars {
        if e.contains_key(&x) {
            continue;
        }
        let home = (0..chi.len()).find(|&u| chi[u].contains(&x));
        let Some(u) = home else {
            beliefs[x] = Some(Factor::unary(
                x,
                vec![1.0 / net.card(x) as f64; net.card(x)],
            ));
            continue;
        };
        let mut fs = base[u].clone();
        for &(w, _) in &adj[u] {
            if let Some(m) = messages.get(&(w, u)) {
                fs.extend(m.iter().cloned());
            }
        }
        let refs: Vec<&Factor> = fs.iter().map(|f| f.as_ref()).collect();
        let bel = product_marginal(&refs, &[x], &guard)?;
        let bel = if bel.scope().contains(x) {
            bel
        } else {
            bel.combine(&Factor::ones(crate::factor::Scope::new(vec![(
                x,
                net.card(x),
            )])?))?
        };
        beliefs[x] = Some(bel.normalize()?);
    }
    Ok(BeliefResult {
        beliefs,
        iterations_run: 1,
        converged: false,
        wall_time: t0.elapsed(),
        propagation_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::joingraph::join_graph_structuring;
    use crate::ordering::min_fill_ordering;
    use crate::testnets::{example_net, random_net_for_tests};

    fn compare(got: &[Option<Factor>], want: &[Option<Factor>], tol: f64) {
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            match (g, w) {
                (Some(a), Some(b)) => {
                    assert!(a.max_abs_diff(b) < tol, "off by {}", a.max_abs_diff(b))
                }
                (None, None) => {}
                _ => panic!("evidence masks disagree"),
            }
        }
    }

    #[test]
    fn schedule_on_a_path_collects_then_distributes() {
        let net = random_net_for_tests(3, 2, 2, 1, 7);
        let jt = build_join_tree(&net, &min_fill_ordering(&net.moral_graph()));
        let fwd = build_schedule(&jt);
        assert_eq!(fwd.len(), jt.edges.len());
        // every node but the last sink sends before it receives anything new
        let mut received = vec![0usize; jt.node_count()];
        for &(u, v) in &fwd {
            let _ = u;
            received[v] += 1;
        }
        let adj = jt.adjacency();
        let sinks = (0..jt.node_count())
            .filter(|&u| received[u] == adj[u].len())
            .count();
        assert!(sinks >= 1, "forward pass must fully serve at least one root");
    }

    #[test]
    fn schedule_on_a_star_sends_leaves_first() {
        use crate::joingraph::{ArcLabeledJoinGraph, EdgeKind, JgEdge, JgNode};
        use std::collections::BTreeSet;
        let node = |vars: &[Var]| JgNode {
            chi: vars.iter().copied().collect::<BTreeSet<_>>(),
            psi: vec![],
        };
        let edge = |u: usize, v: usize| JgEdge {
            u,
            v,
            theta: BTreeSet::from([0]),
            kind: EdgeKind::Out,
        };
        let jg = ArcLabeledJoinGraph {
            nodes: vec![node(&[0, 1]), node(&[0]), node(&[0]), node(&[0])],
            edges: vec![edge(0, 1), edge(0, 2), edge(0, 3)],
        };
        let fwd = build_schedule(&jg);
        assert_eq!(fwd, vec![(1, 0), (2, 0), (0, 3)]);
        // readiness: every forward message is sent only once its source has
        // received from all neighbors except the target, so one forward and
        // one backward sweep settle a tree exactly
        let adj = jg.adjacency();
        let mut have: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); jg.node_count()];
        for &(u, v) in &fwd {
            for &(w, _) in &adj[u] {
                if w != v {
                    assert!(have[u].contains(&w), "({u},{v}) sent before ({w},{u})");
                }
            }
            have[v].insert(u);
        }
    }

    #[test]
    fn join_tree_is_exact_in_one_iteration() {
        for seed in 0..8 {
            let net = random_net_for_tests(10, 2, 7, 2, seed);
            let ord = min_fill_ordering(&net.moral_graph());
            let jt = build_join_tree(&net, &ord);
            let cfg = EngineConfig { iterations: 1, ..Default::default() };
            let res = ijgp_run(&net, &Assignment::new(), &jt, &cfg).unwrap();
            assert_eq!(res.iterations_run, 1);
            let exact = net.brute_force_posterior(&Assignment::new()).unwrap();
            compare(&res.beliefs, &exact, 1e-10);
        }
    }

    #[test]
    fn join_tree_with_evidence_matches_brute_force() {
        let net = random_net_for_tests(10, 3, 7, 2, 11);
        let mut e = Assignment::new();
        e.insert(2, 1);
        e.insert(8, 0);
        let ord = min_fill_ordering(&net.moral_graph());
        let jt = build_join_tree(&net, &ord);
        let cfg = EngineConfig { iterations: 1, ..Default::default() };
        let res = ijgp_run(&net, &e, &jt, &cfg).unwrap();
        let exact = net.brute_force_posterior(&e).unwrap();
        compare(&res.beliefs, &exact, 1e-10);
    }

    #[test]
    fn message_normalization_does_not_change_beliefs() {
        let net = random_net_for_tests(9, 2, 6, 2, 3);
        let ord = min_fill_ordering(&net.moral_graph());
        let jt = build_join_tree(&net, &ord);
        let on = EngineConfig { iterations: 2, ..Default::default() };
        let off = EngineConfig { normalize_messages: false, ..on };
        let a = ijgp_run(&net, &Assignment::new(), &jt, &on).unwrap();
        let b = ijgp_run(&net, &Assignment::new(), &jt, &off).unwrap();
        compare(&a.beliefs, &b.beliefs, 1e-9);
    }

    #[test]
    fn independent_variables_recover_their_priors() {
        let net = random_net_for_tests(5, 3, 0, 0, 2);
        let ord = min_fill_ordering(&net.moral_graph());
        let jt = build_join_tree(&net, &ord);
        let res =
            ijgp_run(&net, &Assignment::new(), &jt, &EngineConfig::default()).unwrap();
        for v in 0..net.n() {
            let prior = net.cpts()[v].clone();
            assert!(res.beliefs[v].as_ref().unwrap().max_abs_diff(&prior) < 1e-12);
        }
    }

    #[test]
    fn belief_propagation_is_exact_on_a_directed_tree() {
        use crate::generators::random_cpt;
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        let parents: Vec<Vec<Var>> =
            vec![vec![], vec![0], vec![0], vec![1], vec![1], vec![2], vec![2]];
        let cards = vec![2usize; 7];
        let mut rng = ChaCha8Rng::seed_from_u64(0x17);
        let cpts = (0..7)
            .map(|v| random_cpt(v, &parents[v], &cards, &mut rng))
            .collect();
        let net = BeliefNetwork::new(cards, parents, cpts).unwrap();
        let mut e = Assignment::new();
        e.insert(5, 1);
        let res = ibp_run(&net, &e, &EngineConfig::default()).unwrap();
        let exact = net.brute_force_posterior(&e).unwrap();
        compare(&res.beliefs, &exact, 1e-9);
    }

    #[test]
    fn bounded_propagation_yields_normalized_beliefs_on_loopy_networks() {
        let net = example_net();
        let ord = min_fill_ordering(&net.moral_graph());
        let jg = join_graph_structuring(&net, &ord, Some(2));
        let res =
            ijgp_run(&net, &Assignment::new(), &jg, &EngineConfig::default()).unwrap();
        for b in res.beliefs.iter().flatten() {
            assert!((b.sum() - 1.0).abs() < 1e-9);
            assert!(b.table().iter().all(|x| x.is_finite() && *x >= 0.0));
        }
    }

    #[test]
    fn convergence_test_stops_early_on_a_tree() {
        let net = random_net_for_tests(10, 2, 7, 2, 1);
        let ord = min_fill_ordering(&net.moral_graph());
        let jt = build_join_tree(&net, &ord);
        let cfg = EngineConfig {
            iterations: 10,
            convergence_epsilon: Some(1e-12),
            ..Default::default()
        };
        let res = ijgp_run(&net, &Assignment::new(), &jt, &cfg).unwrap();
        assert!(res.converged);
        assert!(res.iterations_run <= 3, "ran {}", res.iterations_run);
    }

    #[test]
    fn runs_are_deterministic() {
        let net = example_net();
        let ord = min_fill_ordering(&net.moral_graph());
        let jg = join_graph_structuring(&net, &ord, Some(3));
        let cfg = EngineConfig::default();
        let a = ijgp_run(&net, &Assignment::new(), &jg, &cfg).unwrap();
        let b = ijgp_run(&net, &Assignment::new(), &jg, &cfg).unwrap();
        for (x, y) in a.beliefs.iter().zip(&b.beliefs) {
            assert_eq!(x.as_ref().unwrap().table(), y.as_ref().unwrap().table());
        }
    }

    #[test]
    fn unbounded_mini_clustering_is_exact() {
        for seed in 0..5 {
            let net = random_net_for_tests(10, 2, 7, 2, seed + 100);
            let mut e = Assignment::new();
            e.insert(0, (seed % 2) as usize);
            let ord = min_fill_ordering(&net.moral_graph());
            let res = mc_run(&net, &e, &ord, None).unwrap();
            let exact = net.brute_force_posterior(&e).unwrap();
            compare(&res.beliefs, &exact, 1e-10);
        }
    }

    #[test]
    fn bounded_mini_clustering_yields_normalized_beliefs() {
        let net = random_net_for_tests(20, 2, 16, 3, 9);
        let ord = min_fill_ordering(&net.moral_graph());
        let res = mc_run(&net, &Assignment::new(), &ord, Some(3)).unwrap();
        for b in res.beliefs.iter().flatten() {
            assert!((b.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn first_fit_respects_the_bound_and_keeps_every_function() {
        let net = random_net_for_tests(12, 2, 9, 3, 4);
        let funcs: Vec<Rc<Factor>> =
            net.cpts().iter().map(|c| Rc::new(c.clone())).collect();
        let parts = first_fit_partition(&funcs, Some(4));
        let total: usize = parts.iter().map(|p| p.len()).sum();
        assert_eq!(total, funcs.len());
        for p in &parts {
            let mut vars = BTreeSet::new();
            for f in p {
                vars.extend(f.scope().vars().iter().copied());
            }
            assert!(vars.len() <= 4 || p.len() == 1);
        }
    }
}
