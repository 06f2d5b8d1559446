//! Random instance generators and independent reference computations shared by the integration tests.
#![allow(dead_code)]

use optgail_core::rng::{self, Rng};
use optgail_core::{FullOptionModel, HierPolicy, TabularMdp, Trajectory};
use rand::Rng as _;

pub fn rng(seed: u64) -> Rng {
    rng::seeded(seed)
}

/// A random distribution of length `n`; with `sparse` some entries are zeroed (never all).
pub fn distribution(r: &mut Rng, n: usize, sparse: bool) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| r.random::<f64>() + 1e-3).collect();
    if sparse {
        let keep = r.random_range(0..n);
        for (i, x) in v.iter_mut().enumerate() {
            if i != keep && r.random::<f64>() < 0.3 {
                *x = 0.0;
            }
        }
    }
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

pub fn random_mdp(r: &mut Rng, n_s: usize, n_a: usize, gamma: f64) -> TabularMdp {
    let transition: Vec<f64> = (0..n_s * n_a)
        .flat_map(|_| distribution(r, n_s, true))
        .collect();
    let reward: Vec<f64> = (0..n_s * n_a).map(|_| r.random::<f64>()).collect();
    let mu0 = distribution(r, n_s, true);
    TabularMdp::new(n_s, n_a, transition, reward, mu0, gamma).unwrap()
}

pub fn random_policy(r: &mut Rng, n_s: usize, n_a: usize, k: usize, sparse: bool) -> HierPolicy {
    let high: Vec<f64> = (0..n_s * (k + 1))
        .flat_map(|_| distribution(r, k, sparse))
        .collect();
    let low: Vec<f64> = (0..n_s * k)
        .flat_map(|_| distribution(r, n_a, sparse))
        .collect();
    HierPolicy::new(n_s, n_a, k, high, low).unwrap()
}

pub fn random_full(r: &mut Rng, n_s: usize, n_a: usize, k: usize) -> FullOptionModel {
    let intra: Vec<f64> = (0..k * n_s)
        .flat_map(|_| distribution(r, n_a, false))
        .collect();
    let termination: Vec<f64> = (0..k * n_s).map(|_| r.random::<f64>()).collect();
    let inter: Vec<f64> = (0..n_s).flat_map(|_| distribution(r, k, false)).collect();
    FullOptionModel::new(n_s, n_a, k, intra, termination, inter).unwrap()
}

pub fn random_trajectory(r: &mut Rng, n_s: usize, n_a: usize, len: usize) -> Trajectory {
    let states = (0..len).map(|_| r.random_range(0..n_s)).collect();
    let actions = (0..len).map(|_| r.random_range(0..n_a)).collect();
    Trajectory::new(states, actions).unwrap()
}

/// `ρ(s, a, o, o')` by summing the discounted forward distribution until the tail is negligible.
/// Layout `((s * A + a) * K + o) * (K + 1) + o'`.
pub fn occupancy_by_series(policy: &HierPolicy, mdp: &TabularMdp) -> Vec<f64> {
    let (n_s, n_a, k) = (mdp.n_states(), mdp.n_actions(), policy.k());
    let mut rho = vec![0.0; n_s * n_a * k * (k + 1)];
    // d[s][prev]
    let mut d = vec![0.0; n_s * (k + 1)];
    for s in 0..n_s {
        d[s * (k + 1) + k] = mdp.mu0()[s];
    }
    let mut discount = 1.0;
    while discount > 1e-17 {
        let mut next = vec![0.0; n_s * (k + 1)];
        for s in 0..n_s {
            for prev in 0..=k {
                let w = d[s * (k + 1) + prev];
                if w == 0.0 {
                    continue;
                }
                for o in 0..k {
                    for a in 0..n_a {
                        let p = w * policy.high(s, prev, o) * policy.low(s, o, a);
                        rho[((s * n_a + a) * k + o) * (k + 1) + prev] += discount * p;
                        for s2 in 0..n_s {
                            next[s2 * (k + 1) + o] += p * mdp.p(s, a, s2);
                        }
                    }
                }
            }
        }
        d = next;
        discount *= mdp.gamma();
    }
    rho
}

/// Expected discounted value of a per-cell reward table under `policy`, via the series above.
pub fn value_by_series(policy: &HierPolicy, mdp: &TabularMdp, cell_reward: &[f64]) -> f64 {
    occupancy_by_series(policy, mdp)
        .iter()
        .zip(cell_reward)
        .map(|(p, r)| p * r)
        .sum()
}

/// Jensen-Shannon divergence between two probability vectors, straight from the definition.
pub fn js(p: &[f64], q: &[f64]) -> f64 {
    let kl = |a: &[f64], m: &[f64]| -> f64 {
        a.iter()
            .zip(m)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| x * (x / y).ln())
            .sum()
    };
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * kl(p, &m) + 0.5 * kl(q, &m)
}

pub fn normalized(v: &[f64]) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    v.iter().map(|x| x / total).collect()
}

/// All option sequences of length `len` over `k` options.
pub fn all_sequences(k: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|seq| (0..k).map(move |o| [seq.clone(), vec![o]].concat()))
            .collect();
    }
    out
}

/// `log P(a_{0:T}, o_{0:T} | s_{0:T})` for an explicit option sequence, factor by factor.
pub fn option_conditional_log_prob(
    policy: &HierPolicy,
    traj: &Trajectory,
    options: &[usize],
) -> f64 {
    let mut prev = policy.k();
    let mut p = 1.0;
    for ((&s, &a), &o) in traj.states.iter().zip(&traj.actions).zip(options) {
        p *= policy.high(s, prev, o) * policy.low(s, o, a);
        prev = o;
    }
    p.ln()
}
