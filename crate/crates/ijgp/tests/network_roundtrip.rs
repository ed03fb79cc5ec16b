//! Text-format round trips and generator determinism over many generated
//! networks.

use ijgp::factor::Assignment;
use ijgp::generators::{
    gen_coding, gen_grid, gen_random, CodingSpec, GridSpec, RandomNetSpec,
};
use ijgp::network::{
    parse_evidence, parse_network, serialize_evidence, serialize_network, BeliefNetwork,
    ModelViolation,
};

fn assert_round_trip(net: &BeliefNetwork) {
    let text = serialize_network(net);
    let back = parse_network(&text).unwrap();
    assert_eq!(net.n(), back.n());
    for v in 0..net.n() {
        assert_eq!(net.card(v), back.card(v));
        assert_eq!(net.parents(v), back.parents(v));
        // bit-exact tables
        assert_eq!(net.cpts()[v].table(), back.cpts()[v].table());
    }
    assert_eq!(text, serialize_network(&back));
}

#[test]
fn one_hundred_generated_networks_round_trip_bit_exactly() {
    for seed in 0..80 {
        let inst =
            gen_random(&RandomNetSpec { n: 12, k: 2 + (seed % 3) as usize, c: 9, p: 2, seed }, 3)
                .unwrap();
        assert_round_trip(&inst.network);
        let etext = serialize_evidence(&inst.evidence);
        assert_eq!(parse_evidence(&etext, &inst.network).unwrap(), inst.evidence);
    }
    for seed in 0..10 {
        assert_round_trip(&gen_grid(&GridSpec { m: 4, k: 2, seed }, 2).unwrap().network);
    }
    for seed in 0..10 {
        let spec = CodingSpec { k_info: 8, parents: 3, sigma: 0.4, seed };
        assert_round_trip(&gen_coding(&spec).unwrap().network);
    }
}

#[test]
fn generators_are_deterministic() {
    let spec = RandomNetSpec { n: 15, k: 2, c: 12, p: 3, seed: 99 };
    let a = gen_random(&spec, 4).unwrap();
    let b = gen_random(&spec, 4).unwrap();
    assert_eq!(serialize_network(&a.network), serialize_network(&b.network));
    assert_eq!(a.evidence, b.evidence);

    let cspec = CodingSpec { k_info: 12, parents: 4, sigma: 0.3, seed: 7 };
    let a = gen_coding(&cspec).unwrap();
    let b = gen_coding(&cspec).unwrap();
    assert_eq!(serialize_network(&a.network), serialize_network(&b.network));
    assert_eq!(a.ground_truth, b.ground_truth);
}

#[test]
fn generated_networks_validate() {
    for seed in 0..10 {
        let net = gen_random(&RandomNetSpec { n: 14, k: 2, c: 11, p: 3, seed }, 0)
            .unwrap()
            .network;
        assert!(net.validate().is_empty());
        let net = gen_grid(&GridSpec { m: 5, k: 2, seed }, 0).unwrap().network;
        assert!(net.validate().is_empty());
        // coding tables absorb the channel likelihood, so rows are scaled;
        // only structural violations are ruled out
        let net = gen_coding(&CodingSpec { k_info: 10, parents: 3, sigma: 0.5, seed })
            .unwrap()
            .network;
        assert!(!net
            .validate()
            .iter()
            .any(|v| matches!(v, ModelViolation::Cyclic | ModelViolation::BadScope { .. })));
    }
}

#[test]
fn brute_force_beliefs_are_normalized() {
    let net = gen_random(&RandomNetSpec { n: 10, k: 3, c: 7, p: 2, seed: 3 }, 0)
        .unwrap()
        .network;
    let beliefs = net.brute_force_posterior(&Assignment::new()).unwrap();
    for b in beliefs.into_iter().flatten() {
        assert!((b.sum() - 1.0).abs() <= 1e-12);
    }
}
