//! Schematic mini-bucket: a scope-only trace of bucket elimination where each
//! bucket is partitioned into mini-buckets of at most `i` variables. The
//! trace is the raw material for join-graph structuring.

use std::collections::BTreeSet;

use crate::factor::Var;
use crate::network::BeliefNetwork;
use crate::ordering::EliminationOrdering;

/// One mini-bucket of the trace.
#[derive(Clone, Debug)]
pub struct MiniBucket {
    /// The bucket variable this mini-bucket belongs to.
    pub bucket_var: Var,
    /// Union of the scopes of all functions placed here (includes
    /// `bucket_var`).
    pub vars: BTreeSet<Var>,
    /// Original CPT ids placed here.
    pub cpts: Vec<usize>,
}

/// Trace of `schematic mini-bucket(i)`.
#[derive(Clone, Debug)]
pub struct SchematicBucketTrace {
    /// Mini-buckets in creation order (buckets processed from the back of the
    /// ordering; within a bucket, first-fit creation order).
    pub mini_buckets: Vec<MiniBucket>,
    /// Mini-bucket ids per bucket variable, in creation order.
    pub buckets: Vec<Vec<usize>>,
    /// `(emitter, consumer)`: the consumer mini-bucket received the message
    /// generated by the emitter.
    pub arcs: Vec<(usize, usize)>,
}

#[derive(Clone)]
struct TraceFn {
    scope: BTreeSet<Var>,
    /// `Some(cpt_id)` for an original function, `None` for a generated
    /// message scope.
    cpt: Option<usize>,
    /// Emitting mini-bucket for messages.
    from_mb: Option<usize>,
    /// Global sequence number, for a deterministic partition order.
    seq: usize,
}

/// Run the scope-only mini-bucket procedure. `i = None` means unbounded: one
/// mini-bucket per bucket, so the arcs form a bucket tree.
///
/// The partition rule is first-fit over functions sorted by descending scope
/// size (sequence number breaks ties): a function joins the first mini-bucket
/// whose variable union stays within `i`, else opens a new one. A single
/// function whose own scope exceeds `i` gets a mini-bucket of its own.
pub fn schematic_mini_bucket(
    net: &BeliefNetwork,
    ord: &EliminationOrdering,
    i_bound: Option<usize>,
) -> SchematicBucketTrace {
    let n = net.n();
    assert_eq!(ord.n(), n);
    if let Some(i) = i_bound {
        assert!(i >= 1, "i-bound must be at least 1");
    }
    let pos = ord.positions();

    let mut bucket_funcs: Vec<Vec<TraceFn>> = vec![Vec::new(); n];
    let mut seq = 0usize;
    for (c, cpt) in net.cpts().iter().enumerate() {
        let scope: BTreeSet<Var> = cpt.scope().vars().iter().copied().collect();
        let owner = *scope.iter().max_by_key(|&&v| pos[v]).unwrap();
        bucket_funcs[owner].push(TraceFn { scope, cpt: Some(c), from_mb: None, seq });
        seq += 1;
    }

    let mut trace = SchematicBucketTrace {
        mini_buckets: Vec::new(),
        buckets: vec![Vec::new(); n],
        arcs: Vec::new(),
    };

    for p in (0..n).rev() {
        let x = ord.order[p];
        let mut funcs = std::mem::take(&mut bucket_funcs[x]);
        if funcs.is_empty() {
            continue;
        }
        funcs.sort_by(|a, b| b.scope.len().cmp(&a.scope.len()).then(a.seq.cmp(&b.seq)));

        // first-fit partition
        let mut parts: Vec<Vec<TraceFn>> = Vec::new();
        let mut part_vars: Vec<BTreeSet<Var>> = Vec::new();
        for f in funcs {
            let mut placed = false;
            if f.scope.len() <= i_bound.unwrap_or(usize::MAX) {
                for (k, vars) in part_vars.iter_mut().enumerate() {
                    let union: BTreeSet<Var> = vars.union(&f.scope).copied().collect();
                    if union.len() <= i_bound.unwrap_or(usize::MAX) {
                        *vars = union;
                        parts[k].push(f.clone());
                        placed = true;
                        break;
                    }
                }
            }
            if !placed {
                part_vars.push(f.scope.clone());
                parts.push(vec![f]);
            }
        }

        for (vars, part) in part_vars.into_iter().zip(parts) {
            let mb_id = trace.mini_buckets.len();
            let mut cpts = Vec::new();
            for f in &part {
                if let Some(c) = f.cpt {
                    cpts.push(c);
                }
                if let Some(from) = f.from_mb {
                    trace.arcs.push((from, mb_id));
                }
            }
            cpts.sort_unstable();
            let msg_scope: BTreeSet<Var> = vars.iter().copied().filter(|&v| v != x).collect();
            trace.mini_buckets.push(MiniBucket { bucket_var: x, vars, cpts });
            trace.buckets[x].push(mb_id);
            if !msg_scope.is_empty() {
                let target = *msg_scope.iter().max_by_key(|&&v| pos[v]).unwrap();
                bucket_funcs[target].push(TraceFn {
                    scope: msg_scope,
                    cpt: None,
                    from_mb: Some(mb_id),
                    seq,
                });
                seq += 1;
            }
        }
    }
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ordering::min_fill_ordering;
    use crate::testnets::{example_net, random_net_for_tests};

    #[test]
    fn unbounded_gives_one_mini_bucket_per_bucket() {
        let net = example_net();
        let ord = EliminationOrdering::new((0..net.n()).collect());
        let trace = schematic_mini_bucket(&net, &ord, None);
        for b in &trace.buckets {
            assert!(b.len() <= 1);
        }
        // arcs form a forest over the mini-buckets (a bucket tree)
        assert!(trace.arcs.len() < trace.mini_buckets.len());
        let mut indeg_target = vec![0usize; trace.mini_buckets.len()];
        for &(from, _) in &trace.arcs {
            indeg_target[from] += 1;
        }
        // every mini-bucket emits at most one message
        assert!(indeg_target.iter().all(|&d| d <= 1));
    }

    #[test]
    fn example_net_i3_partitions_only_bucket_f() {
        // With the lexicographic ordering and i = 3, only the bucket of F is
        // partitioned, into scopes (FCD) and (BF).
        let net = example_net();
        let ord = EliminationOrdering::new((0..net.n()).collect());
        let trace = schematic_mini_bucket(&net, &ord, Some(3));
        const F: usize = 5;
        for (v, b) in trace.buckets.iter().enumerate() {
            if v == F {
                assert_eq!(b.len(), 2, "bucket F must split in two");
            } else {
                assert!(b.len() <= 1, "bucket {v} must not be partitioned");
            }
        }
        let scopes: Vec<BTreeSet<Var>> = trace.buckets[F]
            .iter()
            .map(|&id| trace.mini_buckets[id].vars.clone())
            .collect();
        let fcd: BTreeSet<Var> = [2, 3, 5].into_iter().collect();
        let bf: BTreeSet<Var> = [1, 5].into_iter().collect();
        assert!(scopes.contains(&fcd));
        assert!(scopes.contains(&bf));
    }

    #[test]
    fn multi_function_mini_buckets_respect_the_bound() {
        for seed in 0..10 {
            let net = random_net_for_tests(12, 2, 9, 3, seed);
            let ord = min_fill_ordering(&net.moral_graph());
            for i in [2usize, 3, 5] {
                let trace = schematic_mini_bucket(&net, &ord, Some(i));
                for mb in &trace.mini_buckets {
                    let nfun = mb.cpts.len()
                        + trace.arcs.iter().filter(|&&(_, to)| to == trace_id(&trace, mb)).count();
                    if nfun > 1 {
                        assert!(mb.vars.len() <= i);
                    }
                }
            }
        }
    }

    fn trace_id(trace: &SchematicBucketTrace, mb: &MiniBucket) -> usize {
        trace
            .mini_buckets
            .iter()
            .position(|m| std::ptr::eq(m, mb))
            .unwrap()
    }
}
