//! Property tests for the dense factor algebra.

use std::collections::BTreeMap;

use ijgp::factor::{Assignment, Factor, Scope, Var};
use proptest::prelude::*;

fn card(v: Var) -> usize {
    2 + v % 2
}

fn rel_close(a: &Factor, b: &Factor, tol: f64) -> bool {
    a.scope() == b.scope()
        && a.table().iter().zip(b.table()).all(|(&x, &y)| {
            (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0)
        })
}

prop_compose! {
    fn arb_factor()(
        vars in proptest::sample::subsequence(vec![0usize, 1, 2, 3, 4, 5], 0..=4)
    )(
        table in proptest::collection::vec(
            0.1f64..2.0,
            Scope::new(vars.iter().map(|&v| (v, card(v))).collect()).unwrap().table_len(),
        ),
        vars in Just(vars),
    ) -> Factor {
        let scope = Scope::new(vars.iter().map(|&v| (v, card(v))).collect()).unwrap();
        Factor::new(scope, table).unwrap()
    }
}

proptest! {
    #[test]
    fn combine_is_commutative(f in arb_factor(), g in arb_factor()) {
        let fg = f.combine(&g).unwrap();
        let gf = g.combine(&f).unwrap();
        prop_assert!(rel_close(&fg, &gf, 1e-12));
    }

    #[test]
    fn combine_is_associative(f in arb_factor(), g in arb_factor(), h in arb_factor()) {
        let left = f.combine(&g).unwrap().combine(&h).unwrap();
        let right = f.combine(&g.combine(&h).unwrap()).unwrap();
        prop_assert!(rel_close(&left, &right, 1e-12));
    }

    #[test]
    fn marginalization_distributes_over_disjoint_products(
        f in arb_factor(),
        g in arb_factor(),
    ) {
        // sum out the variables private to f; g never sees them
        let elim: Vec<Var> = f
            .scope()
            .vars()
            .iter()
            .copied()
            .filter(|v| !g.scope().contains(*v))
            .collect();
        let left = f.combine(&g).unwrap().marginalize(&elim);
        let right = f.marginalize(&elim).combine(&g).unwrap();
        prop_assert!(rel_close(&left, &right, 1e-12));
    }

    #[test]
    fn evidence_reduction_commutes_with_combine(
        f in arb_factor(),
        g in arb_factor(),
        picks in proptest::collection::vec(any::<bool>(), 6),
    ) {
        let e: Assignment = (0..6usize)
            .filter(|&v| picks[v])
            .map(|v| (v, v % card(v)))
            .collect::<BTreeMap<_, _>>();
        let left = f.combine(&g).unwrap().reduce_evidence(&e);
        let right = f.reduce_evidence(&e).combine(&g.reduce_evidence(&e)).unwrap();
        prop_assert!(rel_close(&left, &right, 1e-12));
    }

    #[test]
    fn evidence_reduction_commutes_with_marginalization(
        f in arb_factor(),
        picks in proptest::collection::vec(0u8..3, 6),
    ) {
        // split the scope into evidenced (1), summed-out (2) and kept vars
        let e: Assignment = f
            .scope()
            .vars()
            .iter()
            .copied()
            .filter(|&v| picks[v] == 1)
            .map(|v| (v, v % card(v)))
            .collect::<BTreeMap<_, _>>();
        let elim: Vec<Var> = f
            .scope()
            .vars()
            .iter()
            .copied()
            .filter(|&v| picks[v] == 2)
            .collect();
        let left = f.reduce_evidence(&e).marginalize(&elim);
        let right = f.marginalize(&elim).reduce_evidence(&e);
        prop_assert!(rel_close(&left, &right, 1e-12));
    }
}

#[test]
fn cpt_rows_marginalize_to_ones_over_the_parents() {
    use ijgp::generators::{gen_random, RandomNetSpec};
    for seed in 0..10 {
        let net = gen_random(&RandomNetSpec { n: 10, k: 3, c: 7, p: 2, seed }, 0)
            .unwrap()
            .network;
        for v in 0..net.n() {
            let summed = net.cpts()[v].marginalize(&[v]);
            for &x in summed.table() {
                assert!((x - 1.0).abs() < 1e-9);
            }
        }
    }
}
