//! Seeded construction of the three benchmark families: random (N,K,C,P)
//! networks, M-by-M grids and linear block coding networks.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::factor::{Assignment, Factor, Scope, Var};
use crate::network::BeliefNetwork;
use crate::{Error, Result};

/// Random network family: N variables of domain size K, the C last variables
/// in a random order get P random parents each, the rest get random priors.
#[derive(Clone, Copy, Debug)]
pub struct RandomNetSpec {
    pub n: usize,
    pub k: usize,
    pub c: usize,
    pub p: usize,
    pub seed: u64,
}

/// M-by-M grid: parents are the upper and left lattice neighbors.
#[derive(Clone, Copy, Debug)]
pub struct GridSpec {
    pub m: usize,
    pub k: usize,
    pub seed: u64,
}

/// Rate-1/2 linear block code: `k_info` uniform information bits, `k_info`
/// XOR parity bits with `parents` random information-bit parents each, all
/// 2*k_info bits sent as +/-1 through a Gaussian channel of noise level
/// `sigma` (standard deviation). The channel likelihoods are folded into the
/// bit CPTs at generation time.
#[derive(Clone, Copy, Debug)]
pub struct CodingSpec {
    pub k_info: usize,
    pub parents: usize,
    pub sigma: f64,
    pub seed: u64,
}

/// One generated benchmark instance.
#[derive(Clone, Debug)]
pub struct GeneratedInstance {
    pub network: BeliefNetwork,
    pub evidence: Assignment,
    /// Coding only: the true transmitted bits.
    pub ground_truth: Option<Vec<usize>>,
}

/// Random CPT for `child` given `parents`: uniform(0,1) entries normalized
/// per parent configuration.
pub(crate) fn random_cpt(
    child: Var,
    parents: &[Var],
    cards: &[usize],
    rng: &mut ChaCha8Rng,
) -> Factor {
    let mut pairs: Vec<(Var, usize)> = parents.iter().map(|&p| (p, cards[p])).collect();
    pairs.push((child, cards[child]));
    let scope = Scope::new(pairs).unwrap();
    let table: Vec<f64> = (0..scope.table_len()).map(|_| rng.gen::<f64>()).collect();
    let raw = Factor::new(scope, table).unwrap();
    let row_sums = raw.marginalize(&[child]);
    let inv = Factor::new(
        row_sums.scope().clone(),
        row_sums.table().iter().map(|&s| 1.0 / s).collect(),
    )
    .unwrap();
    raw.combine(&inv).unwrap()
}

/// Ancestral sample of a full assignment from the joint.
pub fn ancestral_sample(net: &BeliefNetwork, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let order = net
        .topological_order()
        .ok_or_else(|| Error::InvalidModel("cyclic network".into()))?;
    let mut values = vec![0usize; net.n()];
    for v in order {
        let mut parent_vals = Assignment::new();
        for &p in net.parents(v) {
            parent_vals.insert(p, values[p]);
        }
        let row = net.cpt(v).reduce_evidence(&parent_vals).normalize()?;
        let mut r = rng.gen::<f64>();
        let mut picked = net.card(v) - 1;
        for (val, &p) in row.table().iter().enumerate() {
            if r < p {
                picked = val;
                break;
            }
            r -= p;
        }
        values[v] = picked;
    }
    Ok(values)
}

/// Sample `count` distinct evidence variables uniformly and read their values
/// off one ancestral sample of the joint, so evidence is never impossible.
pub fn sample_evidence(
    net: &BeliefNetwork,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Assignment> {
    assert!(count <= net.n());
    let values = ancestral_sample(net, rng)?;
    let picked = rand::seq::index::sample(rng, net.n(), count);
    let mut e = Assignment::new();
    for v in picked {
        e.insert(v, values[v]);
    }
    Ok(e)
}

pub fn gen_random(spec: &RandomNetSpec, evidence_count: usize) -> Result<GeneratedInstance> {
    if spec.k < 2 || spec.c > spec.n || spec.p >= spec.n {
        return Err(Error::InvalidModel("random spec out of range".into()));
    }
    if spec.c > 0 && spec.n - spec.c < spec.p {
        return Err(Error::InvalidModel(
            "not enough predecessors: need N - C >= P".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let cards = vec![spec.k; n];
    let mut order: Vec<Var> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut parents: Vec<Vec<Var>> = vec![Vec::new(); n];
    for pos in (n - spec.c)..n {
        let child = order[pos];
        let idx = rand::seq::index::sample(&mut rng, pos, spec.p);
        let mut ps: Vec<Var> = idx.into_iter().map(|i| order[i]).collect();
        ps.sort_unstable();
        parents[child] = ps;
    }
    let mut cpts = Vec::with_capacity(n);
    for v in 0..n {
        cpts.push(random_cpt(v, &parents[v].clone(), &cards, &mut rng));
    }
    let network = BeliefNetwork::new(cards, parents, cpts)?;
    let evidence = sample_evidence(&network, evidence_count, &mut rng)?;
    Ok(GeneratedInstance { network, evidence, ground_truth: None })
}

pub fn gen_grid(spec: &GridSpec, evidence_count: usize) -> Result<GeneratedInstance> {
    if spec.m < 2 || spec.k < 2 {
        return Err(Error::InvalidModel("grid spec out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = spec.m;
    let n = m * m;
    let cards = vec![spec.k; n];
    let mut parents: Vec<Vec<Var>> = vec![Vec::new(); n];
    for r in 0..m {
        for c in 0..m {
            let v = r * m + c;
            let mut ps = Vec::new();
            if r > 0 {
                ps.push((r - 1) * m + c);
            }
            if c > 0 {
                ps.push(r * m + (c - 1));
            }
            ps.sort_unstable();
            parents[v] = ps;
        }
    }
    let mut cpts = Vec::with_capacity(n);
    for v in 0..n {
        cpts.push(random_cpt(v, &parents[v].clone(), &cards, &mut rng));
    }
    let network = BeliefNetwork::new(cards, parents, cpts)?;
    let evidence = sample_evidence(&network, evidence_count, &mut rng)?;
    Ok(GeneratedInstance { network, evidence, ground_truth: None })
}

/// XOR indicator CPT of `child` over its `parents`.
fn parity_cpt(child: Var, parents: &[Var], cards: &[usize]) -> Factor {
    let mut pairs: Vec<(Var, usize)> = parents.iter().map(|&p| (p, cards[p])).collect();
    pairs.push((child, cards[child]));
    let scope = Scope::new(pairs).unwrap();
    let vars = scope.vars().to_vec();
    let cds = scope.cards().to_vec();
    let child_pos = scope.position(child).unwrap();
    let mut table = vec![0.0; scope.table_len()];
    let mut digits = vec![0usize; vars.len()];
    for slot in table.iter_mut() {
        let parity: usize = digits
            .iter()
            .enumerate()
            .filter(|&(p, _)| p != child_pos)
            .map(|(_, &d)| d)
            .sum::<usize>()
            % 2;
        if digits[child_pos] == parity {
            *slot = 1.0;
        }
        for d in (0..vars.len()).rev() {
            digits[d] += 1;
            if digits[d] < cds[d] {
                break;
            }
            digits[d] = 0;
        }
    }
    Factor::new(scope, table).unwrap()
}

pub fn gen_coding(spec: &CodingSpec) -> Result<GeneratedInstance> {
    if spec.k_info == 0 || spec.parents == 0 || spec.parents > spec.k_info || spec.sigma <= 0.0 {
        return Err(Error::InvalidModel("coding spec out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.k_info;
    let n = 2 * k;
    let cards = vec![2usize; n];

    // info bits 0..k, parity bits k..2k
    let mut parents: Vec<Vec<Var>> = vec![Vec::new(); n];
    let mut cpts: Vec<Factor> = Vec::with_capacity(n);
    for v in 0..k {
        cpts.push(Factor::unary(v, vec![0.5, 0.5]));
    }
    for j in 0..k {
        let idx = rand::seq::index::sample(&mut rng, k, spec.parents);
        let mut ps: Vec<Var> = idx.into_iter().collect();
        ps.sort_unstable();
        parents[k + j] = ps.clone();
        cpts.push(parity_cpt(k + j, &ps, &cards));
    }

    // true transmission
    let mut truth = vec![0usize; n];
    for bit in truth.iter_mut().take(k) {
        *bit = rng.gen_range(0..2usize);
    }
    for j in 0..k {
        truth[k + j] = parents[k + j].iter().map(|&p| truth[p]).sum::<usize>() % 2;
    }

    // +/-1 channel with additive Gaussian noise; likelihood of each observed
    // value folded into the bit's CPT (scaled so the larger entry is 1)
    let mut network = BeliefNetwork::new(cards, parents, cpts)?;
    let signal = |b: usize| if b == 0 { 1.0f64 } else { -1.0 };
    for v in 0..n {
        let noise: f64 = rng.sample(StandardNormal);
        let y = signal(truth[v]) + spec.sigma * noise;
        let lik = |b: usize| {
            let d = y - signal(b);
            (-d * d / (2.0 * spec.sigma * spec.sigma)).exp()
        };
        let (l0, l1) = (lik(0), lik(1));
        let m = l0.max(l1);
        network.scale_cpt(v, &Factor::unary(v, vec![l0 / m, l1 / m]))?;
    }
    Ok(GeneratedInstance {
        network,
        evidence: Assignment::new(),
        ground_truth: Some(truth),
    })
}
