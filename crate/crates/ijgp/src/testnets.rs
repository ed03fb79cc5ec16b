//! Shared test fixtures.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::factor::Var;
use crate::generators::{gen_random, random_cpt, RandomNetSpec};
use crate::network::BeliefNetwork;

/// Seven-variable worked example A..G (0..6) with arcs
/// A->B, A->C, A->D, C->D, C->E, D->E, C->F, D->F, B->G, F->G.
///
/// Under the lexicographic ordering with i = 3 the only partitioned bucket
/// is F's, into mini-buckets (F,C,D) and (B,F).
pub(crate) fn example_net() -> BeliefNetwork {
    let cards = vec![2usize; 7];
    let parents: Vec<Vec<Var>> = vec![
        vec![],
        vec![0],
        vec![0],
        vec![0, 2],
        vec![2, 3],
        vec![2, 3],
        vec![1, 5],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0xE7);
    let cpts = (0..7)
        .map(|v| random_cpt(v, &parents[v], &cards, &mut rng))
        .collect();
    BeliefNetwork::new(cards, parents, cpts).unwrap()
}

/// Small seeded random network for tests.
pub(crate) fn random_net_for_tests(
    n: usize,
    k: usize,
    c: usize,
    p: usize,
    seed: u64,
) -> BeliefNetwork {
    gen_random(&RandomNetSpec { n, k, c, p, seed }, 0)
        .unwrap()
        .network
}
