//! Policy optimization against a fixed imitation cost.
//!
//! The hierarchical problem splits into two flat MDPs: a high-level one over
//! `(s, o_prev)` choosing options and a low-level one over `(s, o)` choosing
//! actions. [`exact_improve`] does monotone soft policy improvement with exact
//! linear solves; [`sampled_improve`] is a small PPO on tabular logits.

use alloc::vec;
use alloc::vec::Vec;

use crate::adversarial::Discriminator;
use crate::error::{Error, Result};
use crate::linalg::{self, Side};
use crate::math;
use crate::model::{self, HierPolicy, TabularMdp};
use crate::occupancy::{self, OptionOccupancy};
use crate::rng;

/// Entropy coefficients on the two log terms of the causal entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyWeights {
    pub lambda_high: f64,
    pub lambda_low: f64,
}

impl Default for EntropyWeights {
    fn default() -> Self {
        Self {
            lambda_high: 0.01,
            lambda_low: 0.0,
        }
    }
}

impl EntropyWeights {
    pub const ZERO: Self = Self {
        lambda_high: 0.0,
        lambda_low: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    High,
    Low,
}

/// A flat MDP over composite states.
///
/// High level: states `(s, o_prev)` at `s * (k + 1) + o_prev`, actions `o`.
/// Low level: states `(s, o)` at `s * k + o`, actions `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedMdp {
    pub level: Level,
    pub n_states: usize,
    pub n_actions: usize,
    /// Indexed `(x, u, y)`.
    pub transition: Vec<f64>,
    /// Indexed `(x, u)`.
    pub reward: Vec<f64>,
    pub mu0: Vec<f64>,
    pub gamma: f64,
    /// Low level only: `(s, o)` rows where `p(o | s) = 0`, whose posterior was set uniform.
    pub unreachable: Vec<usize>,
}

impl AugmentedMdp {
    /// Discounted value of each composite state under `policy` (rows over actions, indexed `(x, u)`).
    pub fn values(&self, policy: &[f64]) -> Result<Vec<f64>> {
        let (n, m) = (self.n_states, self.n_actions);
        if policy.len() != n * m {
            return Err(Error::DimensionMismatch("augmented policy table"));
        }
        let mut chain = vec![0.0; n * n];
        let mut r = vec![0.0; n];
        for x in 0..n {
            for u in 0..m {
                let w = policy[x * m + u];
                if w == 0.0 {
                    continue;
                }
                r[x] += w * self.reward[x * m + u];
                let row = &self.transition[(x * m + u) * n..(x * m + u + 1) * n];
                for (y, &p) in row.iter().enumerate() {
                    chain[x * n + y] += w * p;
                }
            }
        }
        linalg::solve_discounted(&chain, n, self.gamma, &r, Side::Value)
    }

    /// `Σ_x μ0(x) V(x)`.
    pub fn expected_value(&self, policy: &[f64]) -> Result<f64> {
        let v = self.values(policy)?;
        Ok(self.mu0.iter().zip(&v).map(|(a, b)| a * b).sum())
    }

    pub fn max_row_error(&self) -> f64 {
        self.transition
            .chunks(self.n_states)
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn check_cost(policy: &HierPolicy, mdp: &TabularMdp, cost: &[f64]) -> Result<()> {
    policy.check_mdp(mdp)?;
    let k = policy.k();
    if cost.len() != mdp.n_states() * mdp.n_actions() * k * (k + 1) {
        return Err(Error::DimensionMismatch("cost table"));
    }
    Ok(())
}

fn disc_cost(policy: &HierPolicy, d: &Discriminator) -> Result<Vec<f64>> {
    if d.k() != policy.k()
        || d.n_states() != policy.n_states()
        || d.n_actions() != policy.n_actions()
    {
        return Err(Error::DimensionMismatch("discriminator vs policy"));
    }
    Ok(d.cost_table())
}

#[inline]
fn cidx(n_a: usize, k: usize, s: usize, a: usize, o: usize, prev: usize) -> usize {
    ((s * n_a + a) * k + o) * (k + 1) + prev
}

/// The high-level MDP under the current low-level policy, with cost `c = ln D`.
pub fn build_high_mdp(
    policy: &HierPolicy,
    mdp: &TabularMdp,
    d: &Discriminator,
) -> Result<AugmentedMdp> {
    let cost = disc_cost(policy, d)?;
    build_high_mdp_with_cost(policy, mdp, &cost)
}

/// [`build_high_mdp`] for an arbitrary cost table indexed `(s, a, o, o')`.
pub fn build_high_mdp_with_cost(
    policy: &HierPolicy,
    mdp: &TabularMdp,
    cost: &[f64],
) -> Result<AugmentedMdp> {
    check_cost(policy, mdp, cost)?;
    let (n_s, n_a, k) = (mdp.n_states(), mdp.n_actions(), policy.k());
    let n = n_s * (k + 1);
    let mut transition = vec![0.0; n * k * n];
    let mut reward = vec![0.0; n * k];
    for s in 0..n_s {
        for prev in 0..=k {
            let x = s * (k + 1) + prev;
            for o in 0..k {
                let mut r = 0.0;
                let row = &mut transition[(x * k + o) * n..(x * k + o + 1) * n];
                for a in 0..n_a {
                    let pl = policy.low(s, o, a);
                    r -= pl * cost[cidx(n_a, k, s, a, o, prev)];
                    for (s1, &p) in mdp.next_states(s, a).iter().enumerate() {
                        row[s1 * (k + 1) + o] += pl * p;
                    }
                }
                reward[x * k + o] = r;
            }
        }
    }
    let mu0 = occupancy::augmented_start(mdp, k);
    Ok(AugmentedMdp {
        level: Level::High,
        n_states: n,
        n_actions: k,
        transition,
        reward,
        mu0,
        gamma: mdp.gamma(),
        unreachable: Vec::new(),
    })
}

/// The low-level MDP under the current high-level policy. `occ` must be the policy's own occupancy.
pub fn build_low_mdp(
    policy: &HierPolicy,
    mdp: &TabularMdp,
    d: &Discriminator,
    occ: &OptionOccupancy,
) -> Result<AugmentedMdp> {
    let cost = disc_cost(policy, d)?;
    build_low_mdp_with_cost(policy, mdp, &cost, occ)
}

/// `p(o' | s, o) ∝ p(o' | s) π_H(o | s, o')` from occupancy marginals, indexed `(s, o, o')`.
/// Rows with no mass come back uniform and are listed in the second return value.
pub fn prev_option_posterior(policy: &HierPolicy, occ: &OptionOccupancy) -> (Vec<f64>, Vec<usize>) {
    let (n_s, n_a, k) = (occ.n_states(), occ.n_actions(), occ.k());
    let mut post = vec![0.0; n_s * k * (k + 1)];
    let mut unreachable = Vec::new();
    for s in 0..n_s {
        // p(o' | s)
        let mut prior = vec![0.0; k + 1];
        for a in 0..n_a {
            for o in 0..k {
                for (prev, slot) in prior.iter_mut().enumerate() {
                    *slot += occ.get(s, a, o, prev);
                }
            }
        }
        for o in 0..k {
            let row = &mut post[(s * k + o) * (k + 1)..(s * k + o + 1) * (k + 1)];
            for (prev, slot) in row.iter_mut().enumerate() {
                *slot = prior[prev] * policy.high(s, prev, o);
            }
            let z: f64 = row.iter().sum();
            if z > 0.0 {
                row.iter_mut().for_each(|x| *x /= z);
            } else {
                row.iter_mut().for_each(|x| *x = 1.0 / (k + 1) as f64);
                unreachable.push(s * k + o);
            }
        }
    }
    (post, unreachable)
}

/// [`build_low_mdp`] for an arbitrary cost table.
pub fn build_low_mdp_with_cost(
    policy: &HierPolicy,
    mdp: &TabularMdp,
    cost: &[f64],
    occ: &OptionOccupancy,
) -> Result<AugmentedMdp> {
    check_cost(policy, mdp, cost)?;
    if occ.k() != policy.k()
        || occ.n_states() != mdp.n_states()
        || occ.n_actions() != mdp.n_actions()
    {
        return Err(Error::DimensionMismatch("occupancy vs policy"));
    }
    let (n_s, n_a, k) = (mdp.n_states(), mdp.n_actions(), policy.k());
    let (post, unreachable) = prev_option_posterior(policy, occ);
    let n = n_s * k;
    let mut transition = vec![0.0; n * n_a * n];
    let mut reward = vec![0.0; n * n_a];
    let mut mu0 = vec![0.0; n];
    for s in 0..n_s {
        for o in 0..k {
            let x = s * k + o;
            mu0[x] = mdp.mu0()[s] * policy.high(s, k, o);
            let w = &post[x * (k + 1)..(x + 1) * (k + 1)];
            for a in 0..n_a {
                reward[x * n_a + a] = -(0..=k)
                    .map(|p| w[p] * cost[cidx(n_a, k, s, a, o, p)])
                    .sum::<f64>();
                let row = &mut transition[(x * n_a + a) * n..(x * n_a + a + 1) * n];
                for (s1, &p) in mdp.next_states(s, a).iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    for o1 in 0..k {
                        row[s1 * k + o1] += p * policy.high(s1, o, o1);
                    }
                }
            }
        }
    }
    Ok(AugmentedMdp {
        level: Level::Low,
        n_states: n,
        n_actions: n_a,
        transition,
        reward,
        mu0,
        gamma: mdp.gamma(),
        unreachable,
    })
}

/// Exact expected discounted task reward of `policy`, by a value solve on the `(s, o_prev)` chain.
pub fn hier_return(policy: &HierPolicy, mdp: &TabularMdp) -> Result<f64> {
    policy.check_mdp(mdp)?;
    let (n_s, k) = (mdp.n_states(), policy.k());
    let n = n_s * (k + 1);
    let chain = occupancy::joint_chain(policy, mdp);
    let mut r = vec![0.0; n];
    for s in 0..n_s {
        for prev in 0..=k {
            r[s * (k + 1) + prev] = (0..k)
                .map(|o| {
                    policy.high(s, prev, o)
                        * policy
                            .low_row(s, o)
                            .iter()
                            .enumerate()
                            .map(|(a, p)| p * mdp.reward(s, a))
                            .sum::<f64>()
                })
                .sum();
        }
    }
    let v = linalg::solve_discounted(&chain, n, mdp.gamma(), &r, Side::Value)?;
    Ok((0..n_s).map(|s| mdp.mu0()[s] * v[s * (k + 1) + k]).sum())
}

/// Discounted causal entropies `(Σ ρ (-ln π_H), Σ ρ (-ln π_L))` from an occupancy.
pub fn causal_entropy(policy: &HierPolicy, occ: &OptionOccupancy) -> (f64, f64) {
    let (n_s, n_a, k) = (occ.n_states(), occ.n_actions(), occ.k());
    let (mut hh, mut hl) = (0.0, 0.0);
    for s in 0..n_s {
        for a in 0..n_a {
            for o in 0..k {
                for prev in 0..=k {
                    let r = occ.get(s, a, o, prev);
                    if r > 0.0 {
                        hh -= r * math::ln(policy.high(s, prev, o));
                        hl -= r * math::ln(policy.low(s, o, a));
                    }
                }
            }
        }
    }
    (hh, hl)
}

/// `E[c] - λ_H H_H - λ_L H_L` with discounted (unnormalized) expectations.
pub fn regularized_objective(
    policy: &HierPolicy,
    mdp: &TabularMdp,
    cost: &[f64],
    w: EntropyWeights,
) -> Result<f64> {
    check_cost(policy, mdp, cost)?;
    let occ = occupancy::compute_occupancy(policy, mdp)?;
    let expected: f64 = occ.values().iter().zip(cost).map(|(r, c)| r * c).sum();
    let (hh, hl) = causal_entropy(policy, &occ);
    Ok(expected - w.lambda_high * hh - w.lambda_low * hl)
}

/// Soft value of the joint chain with reward `-c - λ_H ln π_H - λ_L ln π_L`, indexed `(s, o_prev)`.
fn soft_values(
    policy: &HierPolicy,
    mdp: &TabularMdp,
    cost: &[f64],
    w: EntropyWeights,
) -> Result<Vec<f64>> {
    let (n_s, n_a, k) = (mdp.n_states(), mdp.n_actions(), policy.k());
    let n = n_s * (k + 1);
    let mut r = vec![0.0; n];
    for s in 0..n_s {
        for prev in 0..=k {
            let mut total = 0.0;
            for o in 0..k {
                let h = policy.high(s, prev, o);
                if h == 0.0 {
                    continue;
                }
                let mut inner = 0.0;
                for a in 0..n_a {
                    let l = policy.low(s, o, a);
                    inner += l * -cost[cidx(n_a, k, s, a, o, prev)] - w.lambda_low * math::xlogx(l);
                }
                total += h * inner - w.lambda_high * math::xlogx(h);
            }
            r[s * (k + 1) + prev] = total;
        }
    }
    let chain = occupancy::joint_chain(policy, mdp);
    linalg::solve_discounted(&chain, n, mdp.gamma(), &r, Side::Value)
}

/// `Σ_{s'} P(s' | s, a) V(s', o)` indexed `(s, a, o)`.
fn continuation(mdp: &TabularMdp, k: usize, v: &[f64]) -> Vec<f64> {
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let mut out = vec![0.0; n_s * n_a * k];
    for s in 0..n_s {
        for a in 0..n_a {
            for (s1, &p) in mdp.next_states(s, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for o in 0..k {
                    out[(s * n_a + a) * k + o] += p * v[s1 * (k + 1) + o];
                }
            }
        }
    }
    out
}

/// Soft-greedy (or greedy when `lambda == 0`) distribution over `q`.
fn improvement_target(q: &mut [f64], lambda: f64) {
    if lambda > 0.0 {
        math::softmax_in_place(q, lambda);
    } else {
        let best = math::argmax(q);
        q.iter_mut()
            .enumerate()
            .for_each(|(i, x)| *x = if i == best { 1.0 } else { 0.0 });
    }
}

/// Result of one [`exact_improve`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct ImproveOutcome {
    pub policy: HierPolicy,
    pub objective_before: f64,
    pub objective_after: f64,
    /// Accepted mixing coefficients of the high and low sweeps (0 when rejected or skipped).
    pub step_high: f64,
    pub step_low: f64,
}

pub const MIN_STEP: f64 = 1.0 / (1u64 << 20) as f64;

/// Options for [`exact_improve_with_cost`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactConfig {
    pub weights: EntropyWeights,
    pub step: f64,
    pub freeze_high: bool,
}

/// One high sweep then one low sweep of soft policy improvement, each with backtracking
/// on the exact objective, so the objective never increases.
pub fn exact_improve(
    policy: &HierPolicy,
    mdp: &TabularMdp,
    d: &Discriminator,
    w: EntropyWeights,
    step: f64,
) -> Result<ImproveOutcome> {
    let cost = disc_cost(policy, d)?;
    exact_improve_with_cost(
        policy,
        mdp,
        &cost,
        ExactConfig {
            weights: w,
            step,
            freeze_high: false,
        },
    )
}

pub fn exact_improve_with_cost(
    policy: &HierPolicy,
    mdp: &TabularMdp,
    cost: &[f64],
    cfg: ExactConfig,
) -> Result<ImproveOutcome> {
    check_cost(policy, mdp, cost)?;
    if !(cfg.step > 0.0 && cfg.step <= 1.0) {
        return Err(Error::InvalidConfig("improvement step must lie in (0, 1]"));
    }
    let w = cfg.weights;
    let before = regularized_objective(policy, mdp, cost, w)?;
    let mut current = policy.clone();
    let mut current_obj = before;
    let mut step_high = 0.0;
    if !cfg.freeze_high {
        let target = high_target(&current, mdp, cost, w)?;
        if let Some((p, obj, t)) = backtrack(&current, &target, current_obj, cfg.step, |p| {
            regularized_objective(p, mdp, cost, w)
        })? {
            current = p;
            current_obj = obj;
            step_high = t;
        }
    }
    let target = low_target(&current, mdp, cost, w)?;
    let mut step_low = 0.0;
    if let Some((p, obj, t)) = backtrack(&current, &target, current_obj, cfg.step, |p| {
        regularized_objective(p, mdp, cost, w)
    })? {
        current = p;
        current_obj = obj;
        step_low = t;
    }
    Ok(ImproveOutcome {
        policy: current,
        objective_before: before,
        objective_after: current_obj,
        step_high,
        step_low,
    })
}

/// Halves `step` until the mixed policy's objective does not exceed `base`.
fn backtrack(
    current: &HierPolicy,
    target: &HierPolicy,
    base: f64,
    step: f64,
    mut objective: impl FnMut(&HierPolicy) -> Result<f64>,
) -> Result<Option<(HierPolicy, f64, f64)>> {
    let mut t = step;
    while t >= MIN_STEP {
        let candidate = current.mix(target, t);
        let obj = objective(&candidate)?;
        if obj <= base {
            return Ok(Some((candidate, obj, t)));
        }
        t *= 0.5;
    }
    Ok(None)
}

/// `current` with every high row replaced by its soft-greedy target.
fn high_target(
    current: &HierPolicy,
    mdp: &TabularMdp,
    cost: &[f64],
    w: EntropyWeights,
) -> Result<HierPolicy> {
    let (n_s, n_a, k) = (mdp.n_states(), mdp.n_actions(), current.k());
    let v = soft_values(current, mdp, cost, w)?;
    let cont = continuation(mdp, k, &v);
    let g = mdp.gamma();
    let mut target = current.clone();
    let mut q = vec![0.0; k];
    for s in 0..n_s {
        for prev in 0..=k {
            for (o, slot) in q.iter_mut().enumerate() {
                *slot = (0..n_a)
                    .map(|a| {
                        let l = current.low(s, o, a);
                        l * (-cost[cidx(n_a, k, s, a, o, prev)] + g * cont[(s * n_a + a) * k + o])
                            - w.lambda_low * math::xlogx(l)
                    })
                    .sum();
            }
            improvement_target(&mut q, w.lambda_high);
            target.high_row_mut(s, prev).copy_from_slice(&q);
        }
    }
    Ok(target)
}

/// `current` with every low row replaced by its soft-greedy target, using the
/// previous-option posterior to weight the cost.
fn low_target(
    current: &HierPolicy,
    mdp: &TabularMdp,
    cost: &[f64],
    w: EntropyWeights,
) -> Result<HierPolicy> {
    let (n_s, n_a, k) = (mdp.n_states(), mdp.n_actions(), current.k());
    let v = soft_values(current, mdp, cost, w)?;
    let cont = continuation(mdp, k, &v);
    let occ = occupancy::compute_occupancy(current, mdp)?;
    let (post, _) = prev_option_posterior(current, &occ);
    let g = mdp.gamma();
    let mut target = current.clone();
    let mut q = vec![0.0; n_a];
    for s in 0..n_s {
        for o in 0..k {
            let wp = &post[(s * k + o) * (k + 1)..(s * k + o + 1) * (k + 1)];
            for (a, slot) in q.iter_mut().enumerate() {
                let c: f64 = (0..=k)
                    .map(|p| wp[p] * cost[cidx(n_a, k, s, a, o, p)])
                    .sum();
                *slot = -c + g * cont[(s * n_a + a) * k + o];
            }
            improvement_target(&mut q, w.lambda_low);
            target.low_row_mut(s, o).copy_from_slice(&q);
        }
    }
    Ok(target)
}

/// PPO settings for [`sampled_improve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledConfig {
    pub batch: usize,
    pub mini_batch: usize,
    pub learning_rate: f64,
    pub clip: f64,
    pub epochs: usize,
    /// Episode length used when collecting the batch.
    pub horizon: usize,
    pub freeze_high: bool,
}

impl Default for SampledConfig {
    fn default() -> Self {
        Self {
            batch: 4096,
            mini_batch: 64,
            learning_rate: 3e-4,
            clip: 0.2,
            epochs: 4,
            horizon: 100,
            freeze_high: false,
        }
    }
}

/// Result of [`sampled_improve`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampledOutcome {
    pub policy: HierPolicy,
    pub env_steps: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    /// Ascent step on `params` along `grad`.
    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(Self::B1, self.t as f64);
        let c2 = 1.0 - libm::pow(Self::B2, self.t as f64);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] += self.lr * mh / (math::sqrt(vh) + Self::EPS);
        }
    }
}

/// One decision in the collected batch: which logit row, which entry, the
/// behaviour probability and the advantage.
#[derive(Clone, Copy)]
struct Decision {
    row: usize,
    choice: usize,
    old_prob: f64,
    advantage: f64,
}

/// PPO on the `-ln D` reward, one batch.
pub fn sampled_improve(
    policy: &HierPolicy,
    mdp: &TabularMdp,
    d: &Discriminator,
    w: EntropyWeights,
    cfg: SampledConfig,
    seed: u64,
) -> Result<SampledOutcome> {
    let cost = disc_cost(policy, d)?;
    sampled_improve_with_cost(policy, mdp, &cost, w, cfg, seed)
}

pub fn sampled_improve_with_cost(
    policy: &HierPolicy,
    mdp: &TabularMdp,
    cost: &[f64],
    w: EntropyWeights,
    cfg: SampledConfig,
    seed: u64,
) -> Result<SampledOutcome> {
    check_cost(policy, mdp, cost)?;
    if cfg.batch == 0 || cfg.mini_batch == 0 || cfg.horizon == 0 {
        return Err(Error::InvalidConfig(
            "batch, mini-batch and horizon must be positive",
        ));
    }
    let (n_s, n_a, k) = (mdp.n_states(), mdp.n_actions(), policy.k());
    let g = mdp.gamma();
    // exact baselines for the plain cost reward
    let v = soft_values(policy, mdp, cost, EntropyWeights::ZERO)?;
    let cont = continuation(mdp, k, &v);
    let q_high = |s: usize, prev: usize, o: usize| -> f64 {
        (0..n_a)
            .map(|a| {
                policy.low(s, o, a)
                    * (-cost[cidx(n_a, k, s, a, o, prev)] + g * cont[(s * n_a + a) * k + o])
            })
            .sum()
    };

    let mut high_decisions = Vec::new();
    let mut low_decisions = Vec::new();
    let mut steps = 0;
    while steps < cfg.batch {
        let len = cfg.horizon.min(cfg.batch - steps).max(1);
        let ep_seed = rng::derive_seed(seed, steps as u64);
        let mut ep_rng = rng::seeded(ep_seed);
        let traj = model::rollout(policy, mdp, len, &mut ep_rng);
        steps += len;
        let rewards: Vec<f64> = (0..len)
            .map(|t| {
                -cost[cidx(
                    n_a,
                    k,
                    traj.states[t],
                    traj.actions[t],
                    traj.option_at(t),
                    traj.prev_option_at(t),
                )]
            })
            .collect();
        // bootstrap the truncated tail with the exact continuation value
        let last = len - 1;
        let mut ret =
            g * cont[(traj.states[last] * n_a + traj.actions[last]) * k + traj.option_at(last)];
        for t in (0..len).rev() {
            ret = rewards[t] + if t == last { ret } else { g * ret };
            let (s, a, o, prev) = (
                traj.states[t],
                traj.actions[t],
                traj.option_at(t),
                traj.prev_option_at(t),
            );
            let qh = q_high(s, prev, o);
            high_decisions.push(Decision {
                row: s * (k + 1) + prev,
                choice: o,
                old_prob: policy.high(s, prev, o),
                advantage: ret - v[s * (k + 1) + prev],
            });
            low_decisions.push(Decision {
                row: s * k + o,
                choice: a,
                old_prob: policy.low(s, o, a),
                advantage: ret - qh,
            });
        }
        // keep batch order chronological
        let n = high_decisions.len();
        high_decisions[n - len..].reverse();
        low_decisions[n - len..].reverse();
    }

    let to_logits = |t: &[f64]| {
        t.iter()
            .map(|&p| math::safe_ln(p).max(-50.0))
            .collect::<Vec<_>>()
    };
    let mut high_logits = to_logits(policy.high_table());
    let mut low_logits = to_logits(policy.low_table());
    let mut adam_high = Adam::new(high_logits.len(), cfg.learning_rate);
    let mut adam_low = Adam::new(low_logits.len(), cfg.learning_rate);
    let mut grad_high = vec![0.0; high_logits.len()];
    let mut grad_low = vec![0.0; low_logits.len()];
    let n = high_decisions.len();
    for _ in 0..cfg.epochs {
        let mut start = 0;
        while start < n {
            let end = (start + cfg.mini_batch).min(n);
            let scale = 1.0 / (end - start) as f64;
            if !cfg.freeze_high {
                ppo_gradient(
                    &high_logits,
                    k,
                    &high_decisions[start..end],
                    cfg.clip,
                    w.lambda_high,
                    scale,
                    &mut grad_high,
                );
                adam_high.step(&mut high_logits, &grad_high);
            }
            ppo_gradient(
                &low_logits,
                n_a,
                &low_decisions[start..end],
                cfg.clip,
                w.lambda_low,
                scale,
                &mut grad_low,
            );
            adam_low.step(&mut low_logits, &grad_low);
            start = end;
        }
    }
    let from_logits = |logits: &[f64], width: usize| {
        let mut t = logits.to_vec();
        t.chunks_mut(width)
            .for_each(|r| math::softmax_in_place(r, 1.0));
        t
    };
    let high = if cfg.freeze_high {
        policy.high_table().to_vec()
    } else {
        from_logits(&high_logits, k)
    };
    let low = from_logits(&low_logits, n_a);
    Ok(SampledOutcome {
        policy: HierPolicy::new(n_s, n_a, k, high, low)?,
        env_steps: steps,
    })
}

/// Gradient of the clipped surrogate plus entropy bonus, averaged over the mini-batch.
fn ppo_gradient(
    logits: &[f64],
    width: usize,
    batch: &[Decision],
    clip: f64,
    lambda: f64,
    scale: f64,
    grad: &mut [f64],
) {
    grad.iter_mut().for_each(|x| *x = 0.0);
    let mut probs = vec![0.0; width];
    for dcs in batch {
        let row = &logits[dcs.row * width..(dcs.row + 1) * width];
        probs.copy_from_slice(row);
        math::softmax_in_place(&mut probs, 1.0);
        let ratio = probs[dcs.choice] / dcs.old_prob;
        let clipped = (dcs.advantage > 0.0 && ratio > 1.0 + clip)
            || (dcs.advantage < 0.0 && ratio < 1.0 - clip);
        let g = &mut grad[dcs.row * width..(dcs.row + 1) * width];
        if !clipped && dcs.advantage != 0.0 {
            let coef = scale * dcs.advantage * ratio;
            for (j, gj) in g.iter_mut().enumerate() {
                let indicator = if j == dcs.choice { 1.0 } else { 0.0 };
                *gj += coef * (indicator - probs[j]);
            }
        }
        if lambda > 0.0 {
            let h: f64 = -probs.iter().map(|&p| math::xlogx(p)).sum::<f64>();
            for (j, gj) in g.iter_mut().enumerate() {
                *gj -= scale * lambda * probs[j] * (math::safe_ln(probs[j]).max(-700.0) + h);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversarial::Variant;

    #[test]
    fn uniform_low_constant_cost_reward() {
        let mdp = TabularMdp::new(1, 2, vec![1.0, 1.0], vec![0.0, 0.0], vec![1.0], 0.9).unwrap();
        let p = HierPolicy::uniform(1, 2, 2);
        let d = Discriminator::new(1, 2, 2, Variant::Full);
        let h = build_high_mdp(&p, &mdp, &d).unwrap();
        assert!(h
            .reward
            .iter()
            .all(|r| (r - core::f64::consts::LN_2).abs() < 1e-15));
        let occ = occupancy::compute_occupancy(&p, &mdp).unwrap();
        let l = build_low_mdp(&p, &mdp, &d, &occ).unwrap();
        assert!(l
            .reward
            .iter()
            .all(|r| (r - core::f64::consts::LN_2).abs() < 1e-15));
        assert!(h.max_row_error() < 1e-12 && l.max_row_error() < 1e-12);
    }

    #[test]
    fn unit_reward_return() {
        let mdp = TabularMdp::new(
            2,
            1,
            vec![0.0, 1.0, 1.0, 0.0],
            vec![1.0, 1.0],
            vec![0.5, 0.5],
            0.8,
        )
        .unwrap();
        let r = hier_return(&HierPolicy::uniform(2, 1, 3), &mdp).unwrap();
        assert!((r - 5.0).abs() < 1e-12);
    }

    #[test]
    fn step_outside_range_is_rejected() {
        let mdp = TabularMdp::new(1, 1, vec![1.0], vec![0.0], vec![1.0], 0.5).unwrap();
        let p = HierPolicy::uniform(1, 1, 1);
        let d = Discriminator::new(1, 1, 1, Variant::Full);
        assert!(exact_improve(&p, &mdp, &d, EntropyWeights::ZERO, 0.0).is_err());
        assert!(exact_improve(&p, &mdp, &d, EntropyWeights::ZERO, 1.5).is_err());
    }
}
