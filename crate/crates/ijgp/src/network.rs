//! Belief-network representation, validation, text format, moral graph and a
//! brute-force posterior oracle for tiny instances.

use std::collections::BTreeSet;
use std::fmt;

use crate::factor::{Assignment, Factor, Scope, Var};
use crate::{Error, Result};

/// Tolerance for the per-row CPT normalization check.
pub const CPT_ROW_TOL: f64 = 1e-9;

/// Enumeration cap for [`BeliefNetwork::brute_force_posterior`].
const BRUTE_FORCE_MAX_STATES: usize = 1 << 22;

/// A directed acyclic model: one CPT per variable over `parents + child`.
///
/// Construction only checks shape consistency; semantic invariants
/// (acyclicity, CPT row normalization) are reported by [`validate`], so that
/// malformed models can be represented and diagnosed.
///
/// [`validate`]: BeliefNetwork::validate
#[derive(Clone, Debug, PartialEq)]
pub struct BeliefNetwork {
    cards: Vec<usize>,
    parents: Vec<Vec<Var>>,
    cpts: Vec<Factor>,
}

/// One structural defect found by [`BeliefNetwork::validate`].
#[derive(Clone, Debug, PartialEq)]
pub enum ModelViolation {
    /// The parent graph has a directed cycle.
    Cyclic,
    /// CPT scope does not equal parents plus child.
    BadScope { var: Var },
    /// Some parent-configuration row does not sum to 1.
    UnnormalizedCpt { var: Var, worst_row_sum: f64 },
}

impl fmt::Display for ModelViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelViolation::Cyclic => write!(f, "parent graph contains a cycle"),
            ModelViolation::BadScope { var } => {
                write!(f, "CPT scope of variable {var} does not match its family")
            }
            ModelViolation::UnnormalizedCpt { var, worst_row_sum } => write!(
                f,
                "CPT of variable {var} has a row summing to {worst_row_sum}"
            ),
        }
    }
}

/// Undirected adjacency over variables: every pair co-occurring in a CPT
/// scope is connected. Input to the ordering heuristics.
#[derive(Clone, Debug)]
pub struct MoralGraph {
    adj: Vec<BTreeSet<Var>>,
}

impl MoralGraph {
    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, v: Var) -> &BTreeSet<Var> {
        &self.adj[v]
    }

    pub fn adjacent(&self, u: Var, v: Var) -> bool {
        self.adj[u].contains(&v)
    }

    pub fn from_edges(n: usize, edges: &[(Var, Var)]) -> MoralGraph {
        let mut adj = vec![BTreeSet::new(); n];
        for &(u, v) in edges {
            if u != v {
                adj[u].insert(v);
                adj[v].insert(u);
            }
        }
        MoralGraph { adj }
    }
}

impl BeliefNetwork {
    /// `parents[i]` must be ascending; `cpts[i]` must have scope
    /// `sorted(parents[i] + {i})` with matching cardinalities.
    pub fn new(cards: Vec<usize>, parents: Vec<Vec<Var>>, cpts: Vec<Factor>) -> Result<Self> {
        let n = cards.len();
        if parents.len() != n || cpts.len() != n {
            return Err(Error::InvalidModel(
                "variable count, parent lists and CPTs must agree".into(),
            ));
        }
        for v in 0..n {
            let mut family: Vec<Var> = parents[v].clone();
            family.push(v);
            family.sort_unstable();
            family.dedup();
            if family.len() != parents[v].len() + 1 {
                return Err(Error::InvalidModel(format!(
                    "variable {v} repeats a parent or lists itself"
                )));
            }
            if cpts[v].scope().vars() != family.as_slice() {
                return Err(Error::InvalidModel(format!(
                    "CPT scope of variable {v} does not match its family"
                )));
            }
            for (&sv, &sc) in cpts[v].scope().vars().iter().zip(cpts[v].scope().cards()) {
                if sv >= n || cards[sv] != sc {
                    return Err(Error::InvalidModel(format!(
                        "CPT of variable {v} disagrees with the domain of {sv}"
                    )));
                }
            }
        }
        Ok(BeliefNetwork { cards, parents, cpts })
    }

    pub fn n(&self) -> usize {
        self.cards.len()
    }

    pub fn card(&self, v: Var) -> usize {
        self.cards[v]
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn parents(&self, v: Var) -> &[Var] {
        &self.parents[v]
    }

    pub fn cpt(&self, v: Var) -> &Factor {
        &self.cpts[v]
    }

    pub fn cpts(&self) -> &[Factor] {
        &self.cpts
    }

    /// Replace the CPT of `v` (scope must stay within the family scope union;
    /// used by the coding generator to fold channel likelihoods in).
    pub fn scale_cpt(&mut self, v: Var, unary: &Factor) -> Result<()> {
        self.cpts[v] = self.cpts[v].combine(unary)?;
        Ok(())
    }

    /// Parents-before-children order, or `None` on a cyclic graph.
    pub fn topological_order(&self) -> Option<Vec<Var>> {
        let n = self.n();
        let mut indeg = vec![0usize; n];
        let mut children = vec![Vec::new(); n];
        for v in 0..n {
            for &p in &self.parents[v] {
                indeg[v] += 1;
                children[p].push(v);
            }
        }
        let mut queue: Vec<Var> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        let mut head = 0;
        // take lowest-index ready variable for determinism
        while head < queue.len() {
            queue[head..].sort_unstable();
            let v = queue[head];
            head += 1;
            order.push(v);
            for &c in &children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push(c);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// Empty iff acyclicity and CPT-normalization hold. Scope consistency is
    /// already enforced by the constructor and the parser.
    pub fn validate(&self) -> Vec<ModelViolation> {
        let mut out = Vec::new();
        if self.topological_order().is_none() {
            out.push(ModelViolation::Cyclic);
        }
        for v in 0..self.n() {
            let rows = self.cpts[v].marginalize(&[v]);
            let mut worst = 1.0f64;
            for &s in rows.table() {
                if (s - 1.0).abs() > (worst - 1.0).abs() {
                    worst = s;
                }
            }
            if (worst - 1.0).abs() > CPT_ROW_TOL {
                out.push(ModelViolation::UnnormalizedCpt { var: v, worst_row_sum: worst });
            }
        }
        out
    }

    pub fn moral_graph(&self) -> MoralGraph {
        let mut adj = vec![BTreeSet::new(); self.n()];
        for cpt in &self.cpts {
            let vars = cpt.scope().vars();
            for (i, &u) in vars.iter().enumerate() {
                for &v in &vars[i + 1..] {
                    adj[u].insert(v);
                    adj[v].insert(u);
                }
            }
        }
        MoralGraph { adj }
    }

    /// Exact posteriors by full joint enumeration. Only for tiny instances.
    ///
    /// Returns one normalized belief per unevidenced variable (`None` at
    /// evidenced positions).
    pub fn brute_force_posterior(&self, e: &Assignment) -> Result<Vec<Option<Factor>>> {
        let free: Vec<Var> = (0..self.n()).filter(|v| !e.contains_key(v)).collect();
        let mut states = 1usize;
        for &v in &free {
            states = states.saturating_mul(self.cards[v]);
            if states > BRUTE_FORCE_MAX_STATES {
                return Err(Error::TooLarge(format!(
                    "joint enumeration over {} free variables",
                    free.len()
                )));
            }
        }
        let mut acc: Vec<Vec<f64>> = free.iter().map(|&v| vec![0.0; self.cards[v]]).collect();
        let mut digits = vec![0usize; free.len()];
        let mut total = 0.0f64;
        let mut assignment = e.clone();
        loop {
            for (d, &v) in free.iter().enumerate() {
                assignment.insert(v, digits[d]);
            }
            let mut w = 1.0;
            for cpt in &self.cpts {
                w *= cpt.value_at(&assignment);
                if w == 0.0 {
                    break;
                }
            }
            if w != 0.0 {
                total += w;
                for (d, _) in free.iter().enumerate() {
                    acc[d][digits[d]] += w;
                }
            }
            // odometer
            let mut d = free.len();
            loop {
                if d == 0 {
                    break;
                }
                d -= 1;
                digits[d] += 1;
                if digits[d] < self.cards[free[d]] {
                    break;
                }
                digits[d] = 0;
            }
            if digits.iter().all(|&x| x == 0) {
                break;
            }
            if free.is_empty() {
                break;
            }
        }
        if !(total > 0.0) {
            return Err(Error::InconsistentEvidence);
        }
        let mut out = vec![None; self.n()];
        for (d, &v) in free.iter().enumerate() {
            out[v] = Some(Factor::unary(v, acc[d].clone()).normalize()?);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

struct Tokens<'a> {
    toks: Vec<(&'a str, usize)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Tokens<'a> {
        let mut toks = Vec::new();
        for (i, line) in text.lines().enumerate() {
            // strip '#' comments
            let line = line.split('#').next().unwrap_or("");
            for t in line.split_whitespace() {
                toks.push((t, i + 1));
            }
        }
        Tokens { toks, pos: 0 }
    }

    fn line(&self) -> usize {
        if self.pos < self.toks.len() {
            self.toks[self.pos].1
        } else {
            self.toks.last().map_or(1, |t| t.1)
        }
    }

    fn next(&mut self, what: &str) -> Result<&'a str> {
        if self.pos >= self.toks.len() {
            return Err(Error::Parse {
                line: self.line(),
                msg: format!("unexpected end of input, expected {what}"),
            });
        }
        let t = self.toks[self.pos].0;
        self.pos += 1;
        Ok(t)
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let line = self.line();
        let t = self.next(what)?;
        t.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("expected {what}, got '{t}'"),
        })
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let line = self.line();
        let t = self.next(what)?;
        t.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("expected {what}, got '{t}'"),
        })
    }
}

/// Parse the whitespace-separated network format.
///
/// ```text
/// BAYES
/// <n>
/// <card_0> ... <card_{n-1}>
/// <n>                       number of CPTs, always n
/// <k_i> <scope...>          parents ascending, child last; one line per CPT
/// <t_i>                     table length
/// <values...>               last scope variable fastest-changing
/// ```
pub fn parse_network(text: &str) -> Result<BeliefNetwork> {
    let mut t = Tokens::new(text);
    let magic_line = t.line();
    let magic = t.next("BAYES header")?;
    if magic != "BAYES" {
        return Err(Error::Parse {
            line: magic_line,
            msg: format!("expected BAYES header, got '{magic}'"),
        });
    }
    let n = t.usize("variable count")?;
    let mut cards = Vec::with_capacity(n);
    for _ in 0..n {
        let c = t.usize("cardinality")?;
        if c == 0 {
            return Err(Error::Parse { line: t.line(), msg: "zero cardinality".into() });
        }
        cards.push(c);
    }
    let ncpt = t.usize("CPT count")?;
    if ncpt != n {
        return Err(Error::Parse {
            line: t.line(),
            msg: format!("CPT count {ncpt} must equal variable count {n}"),
        });
    }
    // scope lines: file order = parents ascending, child last
    let mut file_scopes: Vec<Vec<Var>> = Vec::with_capacity(n);
    let mut owner_seen = vec![false; n];
    for i in 0..n {
        let line = t.line();
        let k = t.usize("scope size")?;
        if k == 0 {
            return Err(Error::Parse { line, msg: format!("CPT {i} has empty scope") });
        }
        let mut scope = Vec::with_capacity(k);
        for _ in 0..k {
            let v = t.usize("scope variable")?;
            if v >= n {
                return Err(Error::Parse {
                    line,
                    msg: format!("CPT {i} references unknown variable {v}"),
                });
            }
            scope.push(v);
        }
        for w in scope[..k - 1].windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Parse {
                    line,
                    msg: format!("CPT {i}: parents must be listed in ascending order"),
                });
            }
        }
        let child = scope[k - 1];
        if scope[..k - 1].contains(&child) {
            return Err(Error::Parse {
                line,
                msg: format!("CPT {i}: child {child} repeated in parents"),
            });
        }
        if owner_seen[child] {
            return Err(Error::Parse {
                line,
                msg: format!("variable {child} owns more than one CPT"),
            });
        }
        owner_seen[child] = true;
        file_scopes.push(scope);
    }
    // table blocks
    let mut parents = vec![Vec::new(); n];
    let mut cpts: Vec<Option<Factor>> = vec![None; n];
    for (i, fscope) in file_scopes.iter().enumerate() {
        let line = t.line();
        let tlen = t.usize("table length")?;
        let expect: usize = fscope.iter().map(|&v| cards[v]).product();
        if tlen != expect {
            return Err(Error::Parse {
                line,
                msg: format!("CPT {i}: table length {tlen}, expected {expect}"),
            });
        }
        let mut file_table = Vec::with_capacity(tlen);
        for _ in 0..tlen {
            file_table.push(t.f64(&format!("table value of CPT {i}"))?);
        }
        let child = *fscope.last().unwrap();
        parents[child] = fscope[..fscope.len() - 1].to_vec();
        let canon =
            Scope::new(fscope.iter().map(|&v| (v, cards[v])).collect()).map_err(|_| {
                Error::Parse { line, msg: format!("CPT {i}: invalid scope") }
            })?;
        // permute file-order table (last file variable fastest) into canonical
        let cstrides = canon.strides();
        let map: Vec<usize> = fscope
            .iter()
            .map(|&v| cstrides[canon.position(v).unwrap()])
            .collect();
        let fcards: Vec<usize> = fscope.iter().map(|&v| cards[v]).collect();
        let mut table = vec![0.0; tlen];
        let mut digits = vec![0usize; fscope.len()];
        let mut ci = 0usize;
        for &x in &file_table {
            table[ci] = x;
            for d in (0..fscope.len()).rev() {
                digits[d] += 1;
                ci += map[d];
                if digits[d] < fcards[d] {
                    break;
                }
                digits[d] = 0;
                ci -= map[d] * fcards[d];
            }
        }
        cpts[child] = Some(Factor::new(canon, table)?);
    }
    if t.pos != t.toks.len() {
        return Err(Error::Parse {
            line: t.line(),
            msg: "trailing tokens after last CPT".into(),
        });
    }
    let cpts: Vec<Factor> = cpts.into_iter().map(Option::unwrap).collect();
    BeliefNetwork::new(cards, parents, cpts)
}

/// Inverse of [`parse_network`]; table values round-trip bit-exactly.
pub fn serialize_network(net: &BeliefNetwork) -> String {
    use std::fmt::Write;
    let n = net.n();
    let mut s = String::new();
    s.push_str("BAYES\n");
    let _ = writeln!(s, "{n}");
    let cards: Vec<String> = net.cards().iter().map(|c| c.to_string()).collect();
    let _ = writeln!(s, "{}", cards.join(" "));
    let _ = writeln!(s, "{n}");
    for v in 0..n {
        let mut scope: Vec<Var> = net.parents(v).to_vec();
        scope.push(v);
        let toks: Vec<String> = scope.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "{} {}", scope.len(), toks.join(" "));
    }
    for v in 0..n {
        let mut fscope: Vec<Var> = net.parents(v).to_vec();
        fscope.push(v);
        let cpt = net.cpt(v);
        let canon = cpt.scope();
        let cstrides = canon.strides();
        let map: Vec<usize> = fscope
            .iter()
            .map(|&x| cstrides[canon.position(x).unwrap()])
            .collect();
        let fcards: Vec<usize> = fscope.iter().map(|&x| net.card(x)).collect();
        let tlen = cpt.table().len();
        let _ = writeln!(s, "{tlen}");
        let mut digits = vec![0usize; fscope.len()];
        let mut ci = 0usize;
        let mut vals = Vec::with_capacity(tlen);
        for _ in 0..tlen {
            vals.push(format!("{}", cpt.table()[ci]));
            for d in (0..fscope.len()).rev() {
                digits[d] += 1;
                ci += map[d];
                if digits[d] < fcards[d] {
                    break;
                }
                digits[d] = 0;
                ci -= map[d] * fcards[d];
            }
        }
        let _ = writeln!(s, "{}", vals.join(" "));
    }
    s
}

/// Evidence file: `<count>` then `<var> <value>` pairs.
pub fn parse_evidence(text: &str, net: &BeliefNetwork) -> Result<Assignment> {
    let mut t = Tokens::new(text);
    let count = t.usize("evidence count")?;
    let mut e = Assignment::new();
    for _ in 0..count {
        let line = t.line();
        let v = t.usize("evidence variable")?;
        let val = t.usize("evidence value")?;
        if v >= net.n() {
            return Err(Error::Parse { line, msg: format!("unknown variable {v}") });
        }
        if val >= net.card(v) {
            return Err(Error::Parse {
                line,
                msg: format!("value {val} out of range for variable {v}"),
            });
        }
        if e.insert(v, val).is_some() {
            return Err(Error::Parse { line, msg: format!("variable {v} evidenced twice") });
        }
    }
    Ok(e)
}

pub fn serialize_evidence(e: &Assignment) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let _ = writeln!(s, "{}", e.len());
    for (v, val) in e {
        let _ = writeln!(s, "{v} {val}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A -> B chain: P(A) = [0.3, 0.7], P(B|A) rows [0.9, 0.1] / [0.2, 0.8].
    pub(crate) fn chain2() -> BeliefNetwork {
        let pa = Factor::unary(0, vec![0.3, 0.7]);
        let pba = Factor::new(
            Scope::new(vec![(0, 2), (1, 2)]).unwrap(),
            vec![0.9, 0.1, 0.2, 0.8],
        )
        .unwrap();
        BeliefNetwork::new(vec![2, 2], vec![vec![], vec![0]], vec![pa, pba]).unwrap()
    }

    #[test]
    fn validate_well_formed_chain() {
        assert!(chain2().validate().is_empty());
    }

    #[test]
    fn validate_reports_unnormalized_row() {
        let pa = Factor::unary(0, vec![0.3, 0.6]);
        let net = BeliefNetwork::new(vec![2], vec![vec![]], vec![pa]).unwrap();
        let v = net.validate();
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], ModelViolation::UnnormalizedCpt { var: 0, .. }));
    }

    #[test]
    fn validate_reports_cycle() {
        // A -> B -> A
        let pab = Factor::new(
            Scope::new(vec![(0, 2), (1, 2)]).unwrap(),
            vec![0.5, 0.5, 0.5, 0.5],
        )
        .unwrap();
        let pba = Factor::new(
            Scope::new(vec![(0, 2), (1, 2)]).unwrap(),
            vec![0.5, 0.5, 0.5, 0.5],
        )
        .unwrap();
        let net = BeliefNetwork::new(vec![2, 2], vec![vec![1], vec![0]], vec![pab, pba]).unwrap();
        let v = net.validate();
        assert_eq!(v, vec![ModelViolation::Cyclic]);
    }

    #[test]
    fn moral_graph_marries_parents() {
        // v-structure A -> C <- B yields the triangle {A, B, C}
        let pa = Factor::unary(0, vec![0.5, 0.5]);
        let pb = Factor::unary(1, vec![0.5, 0.5]);
        let pc = Factor::new(
            Scope::new(vec![(0, 2), (1, 2), (2, 2)]).unwrap(),
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0],
        )
        .unwrap();
        let net =
            BeliefNetwork::new(vec![2, 2, 2], vec![vec![], vec![], vec![0, 1]], vec![pa, pb, pc])
                .unwrap();
        let g = net.moral_graph();
        assert!(g.adjacent(0, 1));
        assert!(g.adjacent(0, 2));
        assert!(g.adjacent(1, 2));
    }

    #[test]
    fn moral_graph_edgeless() {
        let pa = Factor::unary(0, vec![0.5, 0.5]);
        let pb = Factor::unary(1, vec![0.5, 0.5]);
        let net = BeliefNetwork::new(vec![2, 2], vec![vec![], vec![]], vec![pa, pb]).unwrap();
        let g = net.moral_graph();
        assert!(g.neighbors(0).is_empty());
        assert!(g.neighbors(1).is_empty());
    }

    #[test]
    fn brute_force_prior_only() {
        let pa = Factor::unary(0, vec![0.3, 0.7]);
        let net = BeliefNetwork::new(vec![2], vec![vec![]], vec![pa]).unwrap();
        let bel = net.brute_force_posterior(&Assignment::new()).unwrap();
        let b = bel[0].as_ref().unwrap();
        assert!((b.table()[0] - 0.3).abs() < 1e-12);
        assert!((b.table()[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn brute_force_bayes_rule_on_chain() {
        // P(A=1 | B=1) = 0.7*0.8 / (0.3*0.1 + 0.7*0.8) = 0.56/0.59
        let net = chain2();
        let mut e = Assignment::new();
        e.insert(1, 1);
        let bel = net.brute_force_posterior(&e).unwrap();
        let b = bel[0].as_ref().unwrap();
        assert!((b.table()[1] - 0.56 / 0.59).abs() < 1e-12);
        assert!(bel[1].is_none());
    }

    #[test]
    fn parse_single_variable_example() {
        let net = parse_network("BAYES 1 2 1 1 0 2 0.3 0.7").unwrap();
        assert_eq!(net.n(), 1);
        assert_eq!(net.cpt(0).table(), &[0.3, 0.7]);
    }

    #[test]
    fn parse_truncated_table_names_factor() {
        let err = parse_network("BAYES 1 2 1 1 0 2 0.3").unwrap_err();
        match err {
            Error::Parse { msg, .. } => assert!(msg.contains("CPT 0"), "{msg}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_nonnumeric_token() {
        let err = parse_network("BAYES 1 2 1 1 0 2 0.3 oops").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn roundtrip_chain_bit_exact() {
        let net = chain2();
        let text = serialize_network(&net);
        let back = parse_network(&text).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn roundtrip_permutes_low_index_child() {
        // child 0 with parent 2: file scope order (2, 0) differs from the
        // canonical factor order (0, 2)
        let p2 = Factor::unary(2, vec![0.4, 0.6]);
        let p1 = Factor::unary(1, vec![0.5, 0.5]);
        let p0 = Factor::new(
            Scope::new(vec![(0, 2), (2, 2)]).unwrap(),
            vec![0.1, 0.9, 0.3, 0.7],
        )
        .unwrap();
        let net =
            BeliefNetwork::new(vec![2, 2, 2], vec![vec![2], vec![], vec![]], vec![p0, p1, p2])
                .unwrap();
        let back = parse_network(&serialize_network(&net)).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn evidence_roundtrip_and_bounds() {
        let net = chain2();
        let e = parse_evidence("1 1 0", &net).unwrap();
        assert_eq!(e.get(&1), Some(&0));
        assert!(parse_evidence("1 1 5", &net).is_err());
        assert!(parse_evidence("1 7 0", &net).is_err());
        let back = parse_evidence(&serialize_evidence(&e), &net).unwrap();
        assert_eq!(e, back);
    }
}
