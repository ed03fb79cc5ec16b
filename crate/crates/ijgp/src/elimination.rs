//! Exact sum-product variable elimination with a memory guard, plus the
//! bucket-elimination posterior oracle.

use crate::factor::{Assignment, Factor, Var};
use crate::network::{BeliefNetwork, MoralGraph};
use crate::ordering::{min_fill_ordering, EliminationOrdering};
use crate::{Error, Result};

/// Cap on the size of any table materialized during elimination.
#[derive(Clone, Copy, Debug)]
pub struct Guard {
    pub max_table_entries: usize,
}

impl Default for Guard {
    fn default() -> Self {
        Guard { max_table_entries: 1 << 26 }
    }
}

impl Guard {
    fn check(&self, entries: usize) -> Result<()> {
        if entries > self.max_table_entries {
            return Err(Error::WidthGuard { entries, cap: self.max_table_entries });
        }
        Ok(())
    }
}

/// Multiply a set of factors under the guard.
fn product(factors: Vec<Factor>, guard: &Guard) -> Result<Factor> {
    let mut acc = Factor::scalar(1.0);
    for f in factors {
        guard.check(acc.scope().union(f.scope())?.table_len())?;
        acc = acc.combine(&f)?;
    }
    Ok(acc)
}

/// Eliminate the listed variables, in order, from the factor set; returns the
/// remaining factors (whose scopes avoid every eliminated variable).
pub fn eliminate(
    mut factors: Vec<Factor>,
    elim: &[Var],
    guard: &Guard,
) -> Result<Vec<Factor>> {
    for &x in elim {
        let (bucket, rest): (Vec<Factor>, Vec<Factor>) =
            factors.into_iter().partition(|f| f.scope().contains(x));
        factors = rest;
        if bucket.is_empty() {
            continue;
        }
        let msg = product(bucket, guard)?.marginalize(&[x]);
        factors.push(msg);
    }
    Ok(factors)
}

/// Exact marginal of the product of `factors` onto `keep`, using a locally
/// computed min-fill order over the factors' interaction graph.
pub fn product_marginal(factors: &[&Factor], keep: &[Var], guard: &Guard) -> Result<Factor> {
    let mut max_var = 0;
    for f in factors {
        for &v in f.scope().vars() {
            max_var = max_var.max(v + 1);
        }
    }
    for &v in keep {
        max_var = max_var.max(v + 1);
    }
    let mut edges = Vec::new();
    let mut present = vec![false; max_var];
    for f in factors {
        let vars = f.scope().vars();
        for (i, &u) in vars.iter().enumerate() {
            present[u] = true;
            for &v in &vars[i + 1..] {
                edges.push((u, v));
            }
        }
    }
    let local = MoralGraph::from_edges(max_var, &edges);
    let ord = min_fill_ordering(&local);
    let elim: Vec<Var> = ord
        .order
        .iter()
        .rev()
        .copied()
        .filter(|v| present[*v] && !keep.contains(v))
        .collect();
    let owned: Vec<Factor> = factors.iter().map(|&f| f.clone()).collect();
    let rest = eliminate(owned, &elim, guard)?;
    product(rest, guard)
}

/// Exact posterior beliefs via bucket elimination along `ord`, one
/// elimination run per query variable. Returns `None` at evidenced
/// positions.
pub fn bucket_elimination_posterior(
    net: &BeliefNetwork,
    e: &Assignment,
    ord: &EliminationOrdering,
    guard: &Guard,
) -> Result<Vec<Option<Factor>>> {
    let reduced: Vec<Factor> = net.cpts().iter().map(|c| c.reduce_evidence(e)).collect();
    let mut out = vec![None; net.n()];
    for q in 0..net.n() {
        if e.contains_key(&q) {
            continue;
        }
        let elim: Vec<Var> = ord
            .order
            .iter()
            .rev()
            .copied()
            .filter(|&v| v != q && !e.contains_key(&v))
            .collect();
        let rest = eliminate(reduced.clone(), &elim, guard)?;
        let bel = product(rest, guard)?;
        // everything but q is gone, so the product is at most unary over q;
        // an edgeless q never appears in other scopes
        let bel = if bel.scope().contains(q) {
            bel
        } else {
            bel.combine(&Factor::ones(
                crate::factor::Scope::new(vec![(q, net.card(q))]).unwrap(),
            ))?
        };
        out[q] = Some(bel.normalize()?);
    }
    Ok(out)
}
