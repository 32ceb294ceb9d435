//! Brute-force oracles and random model generators shared by the
//! integration tests. Nothing here goes through the attribution or
//! counterfactual code paths.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rootcause_core::graph::CausalGraph;
use rootcause_core::scm::{ErrorDistribution, Mechanism, Primitive, Scm};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `D = 1` iff `E1 or E2`, fair coins.
pub fn or_model() -> Scm {
    let g = CausalGraph::new(3, [(0, 2), (1, 2)], 2, None).unwrap();
    Scm::new(
        g,
        vec![
            Mechanism::Root,
            Mechanism::Root,
            Mechanism::NoisyOrLabel {
                leak: 0.0,
                strengths: vec![1.0, 1.0],
            },
        ],
        vec![ErrorDistribution::bernoulli(0.5); 2],
    )
    .unwrap()
}

pub struct RandomModel {
    pub scm: Scm,
    /// Coordinates that are not ancestors of `D`, by construction.
    pub non_ancestors: Vec<usize>,
}

/// Random binary-error model on `p` coordinates with a logistic label.
/// When `drop_one` is set, the last coordinate in vertex order is kept
/// away from `D` entirely.
pub fn random_discrete(seed: u64, p: usize, drop_one: bool) -> RandomModel {
    let mut r = rng(seed);
    let mut edges = Vec::new();
    let cut = if drop_one { p - 1 } else { p };
    for v in 0..cut {
        for u in 0..v {
            if r.random::<f64>() < 0.4 {
                edges.push((u, v));
            }
        }
    }
    if drop_one {
        // the dropped vertex may have parents but no children
        for u in 0..cut {
            if r.random::<f64>() < 0.5 {
                edges.push((u, p - 1));
            }
        }
    }
    let mut d_parents: Vec<usize> = (0..cut).filter(|_| r.random::<f64>() < 0.6).collect();
    if d_parents.is_empty() {
        d_parents.push(cut - 1);
    }
    edges.extend(d_parents.iter().map(|&u| (u, p)));
    let g = CausalGraph::new(p + 1, edges, p, None).unwrap();
    let mut mechs = Vec::new();
    for v in 0..p {
        let k = g.parents(v).len();
        mechs.push(if k == 0 {
            Mechanism::Root
        } else if r.random::<bool>() {
            Mechanism::Linear {
                weights: (0..k).map(|_| r.random_range(-1.5..1.5)).collect(),
            }
        } else {
            Mechanism::Additive {
                terms: (0..k)
                    .map(|_| Primitive::Tanh {
                        scale: r.random_range(0.5..2.0),
                        gain: r.random_range(-2.0..2.0),
                    })
                    .collect(),
            }
        });
    }
    mechs.push(Mechanism::LogisticLabel {
        intercept: r.random_range(-1.0..1.0),
        weights: (0..d_parents.len()).map(|_| r.random_range(-2.0..2.0)).collect(),
    });
    let errors = (0..p)
        .map(|_| {
            if r.random::<bool>() {
                ErrorDistribution::bernoulli(r.random_range(0.2..0.8))
            } else {
                let q = r.random_range(0.2..0.8);
                ErrorDistribution::Discrete {
                    support: vec![-1.0, 0.5],
                    probs: vec![q, 1.0 - q],
                }
            }
        })
        .collect();
    let scm = Scm::new(g, mechs, errors).unwrap();
    let non_ancestors = (0..p)
        .filter(|&c| !scm.graph().coord_is_ancestor_of_diagnosis(c))
        .collect();
    RandomModel { scm, non_ancestors }
}

/// `(value, probability)` atoms of a discrete marginal.
pub fn atoms(d: &ErrorDistribution) -> Vec<(f64, f64)> {
    match d {
        ErrorDistribution::Discrete { support, probs } => {
            support.iter().copied().zip(probs.iter().copied()).collect()
        }
        _ => panic!("oracle needs discrete errors"),
    }
}

/// Every full error state with its probability, by recursion.
pub fn all_states(scm: &Scm) -> Vec<(Vec<f64>, f64)> {
    fn rec(scm: &Scm, c: usize, cur: &mut Vec<f64>, q: f64, out: &mut Vec<(Vec<f64>, f64)>) {
        if c == scm.p() {
            out.push((cur.clone(), q));
            return;
        }
        for (v, w) in atoms(&scm.errors()[c]) {
            cur.push(v);
            rec(scm, c + 1, cur, q * w, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(scm, 0, &mut Vec::new(), 1.0, &mut out);
    out
}

#[derive(Clone, Copy, Debug)]
pub enum M {
    Identity,
    Log,
    Logit,
}

impl M {
    pub fn apply(self, p: f64) -> f64 {
        match self {
            M::Identity => p,
            M::Log => p.ln(),
            M::Logit => (p / (1.0 - p)).ln(),
        }
    }

    /// `m` of `sigmoid(z)` worked out from `z` itself, with the probability
    /// held in `[eps, 1 - eps]` for `Log` and `Logit`.
    pub fn apply_z(self, z: f64, eps: f64) -> f64 {
        let ln_sigmoid = |z: f64| if z > 0.0 { -(-z).exp().ln_1p() } else { z - z.exp().ln_1p() };
        match self {
            M::Identity => 1.0 / (1.0 + (-z).exp()),
            M::Log => ln_sigmoid(z).clamp(eps.ln(), (-eps).ln_1p()),
            M::Logit => {
                let bound = (-eps).ln_1p() - eps.ln();
                z.clamp(-bound, bound)
            }
        }
    }
}

/// Log-odds of `D = 1` given `e`.
pub fn log_odds_d(scm: &Scm, e: &[f64]) -> f64 {
    scm.label_log_odds(&scm.push_forward(e).unwrap())
}

/// `P(D = 1 | e)` straight from the mechanisms.
pub fn prob_d(scm: &Scm, e: &[f64]) -> f64 {
    let x = scm.push_forward(e).unwrap();
    scm.label_probability(&x)
}

/// `E m[P(D | e_W, E_rest)]` over the product of the non-retained marginals.
pub fn coalition(scm: &Scm, e: &[f64], retained: &[bool], m: M) -> f64 {
    coalition_of(scm, e, retained, &|world| m.apply(prob_d(scm, world)))
}

/// `E leaf(e_W, E_rest)` over the product of the non-retained marginals.
pub fn coalition_of(scm: &Scm, e: &[f64], retained: &[bool], leaf: &dyn Fn(&[f64]) -> f64) -> f64 {
    fn rec(scm: &Scm, c: usize, world: &mut Vec<f64>, retained: &[bool], q: f64, leaf: &dyn Fn(&[f64]) -> f64) -> f64 {
        if c == scm.p() {
            return q * leaf(world);
        }
        if retained[c] {
            return rec(scm, c + 1, world, retained, q, leaf);
        }
        let keep = world[c];
        let mut total = 0.0;
        for (v, w) in atoms(&scm.errors()[c]) {
            world[c] = v;
            total += rec(scm, c + 1, world, retained, q * w, leaf);
        }
        world[c] = keep;
        total
    }
    rec(scm, 0, &mut e.to_vec(), retained, 1.0, leaf)
}

/// Shapley values by averaging marginal contributions over all `p!`
/// orderings.
pub fn shapley_by_permutations(p: usize, v: &dyn Fn(&[bool]) -> f64) -> Vec<f64> {
    fn perms(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
        if k == items.len() {
            out.push(items.clone());
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            perms(items, k + 1, out);
            items.swap(k, i);
        }
    }
    let mut all = Vec::new();
    perms(&mut (0..p).collect(), 0, &mut all);
    let mut s = vec![0.0; p];
    for order in &all {
        let mut w = vec![false; p];
        let mut prev = v(&w);
        for &i in order {
            w[i] = true;
            let cur = v(&w);
            s[i] += cur - prev;
            prev = cur;
        }
    }
    s.iter().map(|x| x / all.len() as f64).collect()
}

/// Positive-probability patients of a discrete model.
pub fn patients(scm: &Scm) -> Vec<Vec<f64>> {
    all_states(scm).into_iter().filter(|(_, q)| *q > 0.0).map(|(e, _)| e).collect()
}
