//! Dense tabular factors: the combine/marginalize/reduce/normalize kernel
//! every engine in this crate is built on.
//!
//! A factor is a nonnegative real table over an ordered variable scope.
//! Scopes are kept in canonical (ascending variable index) order and tables
//! are row-major with the *last* scope variable fastest-changing. That single
//! linearization is shared with the network file format.

use std::collections::BTreeMap;

use crate::{Error, Result};

/// Variable index, unique within a network, 0-based.
pub type Var = usize;

/// Partial assignment of values to variables.
pub type Assignment = BTreeMap<Var, usize>;

/// Ordered variable scope with matching domain cardinalities.
///
/// Invariant: `vars` is strictly ascending and `cards[i]` is the domain size
/// of `vars[i]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scope {
    vars: Vec<Var>,
    cards: Vec<usize>,
}

impl Scope {
    /// Build a scope from `(var, card)` pairs; sorts into canonical order.
    pub fn new(mut pairs: Vec<(Var, usize)>) -> Result<Scope> {
        pairs.sort_by_key(|&(v, _)| v);
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidModel(format!(
                    "duplicate variable {} in scope",
                    w[0].0
                )));
            }
        }
        for &(_, c) in &pairs {
            if c == 0 {
                return Err(Error::InvalidModel("zero cardinality".into()));
            }
        }
        let (vars, cards) = pairs.into_iter().unzip();
        Ok(Scope { vars, cards })
    }

    pub fn empty() -> Scope {
        Scope { vars: Vec::new(), cards: Vec::new() }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn contains(&self, v: Var) -> bool {
        self.position(v).is_some()
    }

    pub fn position(&self, v: Var) -> Option<usize> {
        self.vars.binary_search(&v).ok()
    }

    pub fn card_of(&self, v: Var) -> Option<usize> {
        self.position(v).map(|i| self.cards[i])
    }

    /// Total table length: the product of all cardinalities (1 for an empty
    /// scope).
    pub fn table_len(&self) -> usize {
        self.cards.iter().product()
    }

    /// Stride of each scope position in the linearized table.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.len()];
        for i in (0..self.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.cards[i + 1];
        }
        s
    }

    /// Merge two scopes; errors if a shared variable has mismatched
    /// cardinalities.
    pub fn union(&self, other: &Scope) -> Result<Scope> {
        let (mut i, mut j) = (0, 0);
        let mut vars = Vec::with_capacity(self.len() + other.len());
        let mut cards = Vec::with_capacity(self.len() + other.len());
        while i < self.len() || j < other.len() {
            if j >= other.len() || (i < self.len() && self.vars[i] < other.vars[j]) {
                vars.push(self.vars[i]);
                cards.push(self.cards[i]);
                i += 1;
            } else if i >= self.len() || other.vars[j] < self.vars[i] {
                vars.push(other.vars[j]);
                cards.push(other.cards[j]);
                j += 1;
            } else {
                if self.cards[i] != other.cards[j] {
                    return Err(Error::CardinalityMismatch {
                        var: self.vars[i],
                        left: self.cards[i],
                        right: other.cards[j],
                    });
                }
                vars.push(self.vars[i]);
                cards.push(self.cards[i]);
                i += 1;
                j += 1;
            }
        }
        Ok(Scope { vars, cards })
    }

    /// Scope with the listed variables removed.
    pub fn minus(&self, drop: &[Var]) -> Scope {
        let mut vars = Vec::new();
        let mut cards = Vec::new();
        for (i, &v) in self.vars.iter().enumerate() {
            if !drop.contains(&v) {
                vars.push(v);
                cards.push(self.cards[i]);
            }
        }
        Scope { vars, cards }
    }
}

/// Dense real-valued table over a [`Scope`].
#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    scope: Scope,
    table: Vec<f64>,
}

/// Map each variable of `outer` to its stride in `inner` (0 when absent).
fn stride_map(outer: &Scope, inner: &Scope) -> Vec<usize> {
    let inner_strides = inner.strides();
    outer
        .vars()
        .iter()
        .map(|&v| inner.position(v).map_or(0, |p| inner_strides[p]))
        .collect()
}

impl Factor {
    pub fn new(scope: Scope, table: Vec<f64>) -> Result<Factor> {
        if table.len() != scope.table_len() {
            return Err(Error::InvalidModel(format!(
                "table length {} does not match scope size {}",
                table.len(),
                scope.table_len()
            )));
        }
        Ok(Factor { scope, table })
    }

    /// Scalar factor over the empty scope.
    pub fn scalar(value: f64) -> Factor {
        Factor { scope: Scope::empty(), table: vec![value] }
    }

    /// All-ones factor over the given scope.
    pub fn ones(scope: Scope) -> Factor {
        let n = scope.table_len();
        Factor { scope, table: vec![1.0; n] }
    }

    /// Unary factor with probability 1 on `value`.
    pub fn indicator(var: Var, card: usize, value: usize) -> Factor {
        assert!(value < card);
        let mut table = vec![0.0; card];
        table[value] = 1.0;
        Factor {
            scope: Scope::new(vec![(var, card)]).unwrap(),
            table,
        }
    }

    pub fn unary(var: Var, table: Vec<f64>) -> Factor {
        let card = table.len();
        Factor {
            scope: Scope::new(vec![(var, card)]).unwrap(),
            table,
        }
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn sum(&self) -> f64 {
        self.table.iter().sum()
    }

    /// Table entry at the given full assignment (must cover the scope).
    pub fn value_at(&self, a: &Assignment) -> f64 {
        let strides = self.scope.strides();
        let mut idx = 0;
        for (p, &v) in self.scope.vars().iter().enumerate() {
            let val = *a.get(&v).expect("assignment must cover the factor scope");
            assert!(val < self.scope.cards()[p]);
            idx += val * strides[p];
        }
        self.table[idx]
    }

    /// Pointwise product over the union of scopes.
    pub fn combine(&self, other: &Factor) -> Result<Factor> {
        let scope = self.scope.union(&other.scope)?;
        let n = scope.table_len();
        let fs = stride_map(&scope, &self.scope);
        let gs = stride_map(&scope, &other.scope);
        let cards = scope.cards().to_vec();
        let k = scope.len();
        let mut table = vec![0.0; n];
        let mut digits = vec![0usize; k];
        let (mut fi, mut gi) = (0usize, 0usize);
        for slot in table.iter_mut() {
            *slot = self.table[fi] * other.table[gi];
            // odometer increment, last variable fastest
            for d in (0..k).rev() {
                digits[d] += 1;
                fi += fs[d];
                gi += gs[d];
                if digits[d] < cards[d] {
                    break;
                }
                digits[d] = 0;
                fi -= fs[d] * cards[d];
                gi -= gs[d] * cards[d];
            }
        }
        Ok(Factor { scope, table })
    }

    /// Product of the given factors summed over `elim`, in one pass over the
    /// union scope without materializing the intermediate product table.
    /// `elim` variables absent from every scope are ignored; an empty factor
    /// list yields the scalar 1.
    pub fn product_summed(factors: &[&Factor], elim: &[Var]) -> Result<Factor> {
        let mut union = Scope::empty();
        for f in factors {
            union = union.union(&f.scope)?;
        }
        let kept = union.minus(elim);
        let maps: Vec<Vec<usize>> =
            factors.iter().map(|f| stride_map(&union, &f.scope)).collect();
        let km = stride_map(&union, &kept);
        let cards = union.cards().to_vec();
        let k = union.len();
        let mut table = vec![0.0; kept.table_len()];
        let mut digits = vec![0usize; k];
        let mut idx = vec![0usize; factors.len()];
        let mut ki = 0usize;
        for _ in 0..union.table_len() {
            let mut x = 1.0;
            for (f, &i) in factors.iter().zip(&idx) {
                x *= f.table[i];
            }
            table[ki] += x;
            for d in (0..k).rev() {
                digits[d] += 1;
                ki += km[d];
                for (m, i) in maps.iter().zip(idx.iter_mut()) {
                    *i += m[d];
                }
                if digits[d] < cards[d] {
                    break;
                }
                digits[d] = 0;
                ki -= km[d] * cards[d];
                for (m, i) in maps.iter().zip(idx.iter_mut()) {
                    *i -= m[d] * cards[d];
                }
            }
        }
        Ok(Factor { scope: kept, table })
    }

    /// Sum out the listed variables. `elim` must be a subset of the scope;
    /// summing out the empty set is the identity.
    pub fn marginalize(&self, elim: &[Var]) -> Factor {
        for &v in elim {
            assert!(self.scope.contains(v), "cannot marginalize absent variable {v}");
        }
        if elim.is_empty() {
            return self.clone();
        }
        let kept = self.scope.minus(elim);
        let ks = stride_map(&self.scope, &kept);
        let cards = self.scope.cards().to_vec();
        let k = self.scope.len();
        let mut table = vec![0.0; kept.table_len()];
        let mut digits = vec![0usize; k];
        let mut ki = 0usize;
        for &x in &self.table {
            table[ki] += x;
            for d in (0..k).rev() {
                digits[d] += 1;
                ki += ks[d];
                if digits[d] < cards[d] {
                    break;
                }
                digits[d] = 0;
                ki -= ks[d] * cards[d];
            }
        }
        Factor { scope: kept, table }
    }

    /// Slice consistent with the evidence; evidenced variables leave the
    /// scope. Evidence on variables outside the scope is ignored.
    pub fn reduce_evidence(&self, e: &Assignment) -> Factor {
        let fixed: Vec<Var> = self
            .scope
            .vars()
            .iter()
            .copied()
            .filter(|v| e.contains_key(v))
            .collect();
        if fixed.is_empty() {
            return self.clone();
        }
        let kept = self.scope.minus(&fixed);
        let f_strides = self.scope.strides();
        let mut base = 0usize;
        for &v in &fixed {
            let p = self.scope.position(v).unwrap();
            let val = e[&v];
            assert!(val < self.scope.cards()[p], "evidence value out of range for {v}");
            base += val * f_strides[p];
        }
        // stride of each kept variable inside the full table
        let ks: Vec<usize> = kept
            .vars()
            .iter()
            .map(|&v| f_strides[self.scope.position(v).unwrap()])
            .collect();
        let cards = kept.cards().to_vec();
        let k = kept.len();
        let mut table = vec![0.0; kept.table_len()];
        let mut digits = vec![0usize; k];
        let mut fi = base;
        for slot in table.iter_mut() {
            *slot = self.table[fi];
            for d in (0..k).rev() {
                digits[d] += 1;
                fi += ks[d];
                if digits[d] < cards[d] {
                    break;
                }
                digits[d] = 0;
                fi -= ks[d] * cards[d];
            }
        }
        Factor { scope: kept, table }
    }

    /// Rescale so entries sum to 1. Zero (or non-finite) total mass means the
    /// evidence is inconsistent with the model.
    pub fn normalize(&self) -> Result<Factor> {
        let s = self.sum();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InconsistentEvidence);
        }
        let table = self.table.iter().map(|x| x / s).collect();
        Ok(Factor { scope: self.scope.clone(), table })
    }

    /// Most likely value of a single-variable factor; ties break to the
    /// lowest value index.
    pub fn argmax_value(&self) -> usize {
        assert_eq!(self.scope.len(), 1, "argmax_value requires a unary factor");
        let mut best = 0;
        for (i, &x) in self.table.iter().enumerate() {
            if x > self.table[best] {
                best = i;
            }
        }
        best
    }

    /// Largest entrywise absolute difference; factors must share a scope.
    pub fn max_abs_diff(&self, other: &Factor) -> f64 {
        assert_eq!(self.scope, other.scope);
        self.table
            .iter()
            .zip(&other.table)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
