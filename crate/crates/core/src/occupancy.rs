//! Option-occupancy measures and divergences between them.
//!
//! The occupancy `ρ(s, a, o, o')` is the discounted expected visitation of a
//! state-action-option-previous-option tuple. It is computed by solving the
//! Bellman-flow equation on the augmented state `(s, o')` and multiplying in
//! the policy.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, Side};
use crate::math;
use crate::model::{FlatPolicy, HierPolicy, TabularMdp, Trajectory};

/// Below this a policy-recovery denominator counts as unreachable.
pub const RECOVERY_FLOOR: f64 = 1e-15;

/// `ρ(s, a, o, o')` over `S × A × O × O⁺`, unnormalized (mass `1/(1-γ)`).
#[derive(Debug, Clone, PartialEq)]
pub struct OptionOccupancy {
    n_states: usize,
    n_actions: usize,
    k: usize,
    rho: Vec<f64>,
    gamma: f64,
    flow_residual: Option<f64>,
}

impl OptionOccupancy {
    /// Wraps a raw table indexed `(s, a, o, o')`. No flow check is made.
    pub fn from_raw(
        n_states: usize,
        n_actions: usize,
        k: usize,
        rho: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if rho.len() != n_states * n_actions * k * (k + 1) {
            return Err(Error::DimensionMismatch("occupancy table"));
        }
        if rho.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidModel(
                "occupancy must be finite and nonnegative",
            ));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidModel("discount must lie in [0, 1)"));
        }
        Ok(Self {
            n_states,
            n_actions,
            k,
            rho,
            gamma,
            flow_residual: None,
        })
    }

    #[inline]
    fn index(&self, s: usize, a: usize, o: usize, prev: usize) -> usize {
        ((s * self.n_actions + a) * self.k + o) * (self.k + 1) + prev
    }

    pub fn get(&self, s: usize, a: usize, o: usize, prev: usize) -> f64 {
        self.rho[self.index(s, a, o, prev)]
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Raw table in `(s, a, o, o')` order.
    pub fn values(&self) -> &[f64] {
        &self.rho
    }

    pub fn mass(&self) -> f64 {
        self.rho.iter().sum()
    }

    /// Max-abs Bellman-flow violation recorded when the measure was solved for.
    pub fn flow_residual(&self) -> Option<f64> {
        self.flow_residual
    }

    /// Max-abs violation of the Bellman-flow constraint against `mdp`.
    pub fn flow_violation(&self, mdp: &TabularMdp) -> Result<f64> {
        if mdp.n_states() != self.n_states || mdp.n_actions() != self.n_actions {
            return Err(Error::DimensionMismatch("occupancy vs MDP"));
        }
        let (n_s, n_a, k) = (self.n_states, self.n_actions, self.k);
        // inflow[(s, o)] = γ Σ_{s', a', o''} P(s | s', a') ρ(s', a', o, o'')
        let mut inflow = vec![0.0; n_s * (k + 1)];
        for s0 in 0..n_s {
            for a in 0..n_a {
                let next = mdp.next_states(s0, a);
                for o in 0..k {
                    let src: f64 = (0..=k).map(|p| self.get(s0, a, o, p)).sum();
                    if src == 0.0 {
                        continue;
                    }
                    for (s1, &pr) in next.iter().enumerate() {
                        inflow[s1 * (k + 1) + o] += mdp.gamma() * pr * src;
                    }
                }
            }
        }
        let mut worst: f64 = 0.0;
        for s in 0..n_s {
            for prev in 0..=k {
                let out: f64 = (0..n_a)
                    .flat_map(|a| (0..k).map(move |o| (a, o)))
                    .map(|(a, o)| self.get(s, a, o, prev))
                    .sum();
                let start = if prev == k { mdp.mu0()[s] } else { 0.0 };
                worst = worst.max((out - start - inflow[s * (k + 1) + prev]).abs());
            }
        }
        Ok(worst)
    }

    /// Mass fraction `(1-γ) Σ_{s,a,o'} ρ(s,a,o,o')` for each option.
    pub fn option_mass_fractions(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for (i, &x) in self.rho.iter().enumerate() {
            out[(i / (self.k + 1)) % self.k] += x;
        }
        for m in &mut out {
            *m *= 1.0 - self.gamma;
        }
        out
    }
}

/// `ρ(s, a)` for a flat policy or a marginalized option occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatOccupancy {
    n_states: usize,
    n_actions: usize,
    rho: Vec<f64>,
    gamma: f64,
}

impl FlatOccupancy {
    pub fn from_raw(n_states: usize, n_actions: usize, rho: Vec<f64>, gamma: f64) -> Result<Self> {
        if rho.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch("flat occupancy table"));
        }
        if rho.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidModel(
                "occupancy must be finite and nonnegative",
            ));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidModel("discount must lie in [0, 1)"));
        }
        Ok(Self {
            n_states,
            n_actions,
            rho,
            gamma,
        })
    }

    /// Exact occupancy of a flat policy by a flow solve on `S`.
    pub fn from_policy(policy: &FlatPolicy, mdp: &TabularMdp) -> Result<Self> {
        if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
            return Err(Error::DimensionMismatch("flat policy vs MDP"));
        }
        let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
        let mut chain = vec![0.0; n_s * n_s];
        for s in 0..n_s {
            for a in 0..n_a {
                let w = policy.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                for (s1, &p) in mdp.next_states(s, a).iter().enumerate() {
                    chain[s * n_s + s1] += w * p;
                }
            }
        }
        let d = linalg::solve_discounted(&chain, n_s, mdp.gamma(), mdp.mu0(), Side::Flow)?;
        let rho = (0..n_s * n_a)
            .map(|i| (d[i / n_a] * policy.prob(i / n_a, i % n_a)).max(0.0))
            .collect();
        Ok(Self {
            n_states: n_s,
            n_actions: n_a,
            rho,
            gamma: mdp.gamma(),
        })
    }

    /// Discount-weighted visit counts (`γ^t` per step) scaled to mass `1/(1-γ)`.
    pub fn from_demos(
        demos: &[Trajectory],
        n_states: usize,
        n_actions: usize,
        gamma: f64,
    ) -> Result<Self> {
        if demos.is_empty() {
            return Err(Error::Empty("demonstrations"));
        }
        let mut rho = vec![0.0; n_states * n_actions];
        let mut total = 0.0;
        for demo in demos {
            demo.validate(n_states, n_actions)?;
            let mut w = 1.0;
            for (&s, &a) in demo.states.iter().zip(&demo.actions) {
                rho[s * n_actions + a] += w;
                total += w;
                w *= gamma;
            }
        }
        let scale = 1.0 / ((1.0 - gamma) * total);
        for x in &mut rho {
            *x *= scale;
        }
        Self::from_raw(n_states, n_actions, rho, gamma)
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.rho[s * self.n_actions + a]
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn values(&self) -> &[f64] {
        &self.rho
    }

    pub fn mass(&self) -> f64 {
        self.rho.iter().sum()
    }

    /// `Σ_a ρ(s, a)`.
    pub fn state_marginal(&self) -> Vec<f64> {
        self.rho
            .chunks(self.n_actions)
            .map(|r| r.iter().sum())
            .collect()
    }
}

/// Transition matrix of the joint chain on `(s, o')`:
/// `M[(s,o'), (s1,o)] = Σ_a π_H(o|s,o') π_L(a|s,o) P(s1|s,a)`.
pub(crate) fn joint_chain(policy: &HierPolicy, mdp: &TabularMdp) -> Vec<f64> {
    let (n_s, n_a, k) = (mdp.n_states(), mdp.n_actions(), policy.k());
    let n = n_s * (k + 1);
    let mut m = vec![0.0; n * n];
    for s in 0..n_s {
        for prev in 0..=k {
            let row = (s * (k + 1) + prev) * n;
            for o in 0..k {
                let h = policy.high(s, prev, o);
                if h == 0.0 {
                    continue;
                }
                for a in 0..n_a {
                    let w = h * policy.low(s, o, a);
                    if w == 0.0 {
                        continue;
                    }
                    for (s1, &p) in mdp.next_states(s, a).iter().enumerate() {
                        m[row + s1 * (k + 1) + o] += w * p;
                    }
                }
            }
        }
    }
    m
}

/// `μ̃0(s, #) = μ0(s)`, zero elsewhere.
pub(crate) fn augmented_start(mdp: &TabularMdp, k: usize) -> Vec<f64> {
    let mut mu = vec![0.0; mdp.n_states() * (k + 1)];
    for (s, &p) in mdp.mu0().iter().enumerate() {
        mu[s * (k + 1) + k] = p;
    }
    mu
}

/// Discounted visitation `d(s, o')` of the augmented state.
pub fn state_prev_visitation(policy: &HierPolicy, mdp: &TabularMdp) -> Result<Vec<f64>> {
    policy.check_mdp(mdp)?;
    let n = mdp.n_states() * (policy.k() + 1);
    let chain = joint_chain(policy, mdp);
    let mu = augmented_start(mdp, policy.k());
    let mut d = linalg::solve_discounted(&chain, n, mdp.gamma(), &mu, Side::Flow)?;
    // round-off can leave tiny negatives on unreachable states
    for x in &mut d {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    Ok(d)
}

/// Exact option-occupancy measure of `policy` in `mdp`.
pub fn compute_occupancy(policy: &HierPolicy, mdp: &TabularMdp) -> Result<OptionOccupancy> {
    let d = state_prev_visitation(policy, mdp)?;
    let (n_s, n_a, k) = (mdp.n_states(), mdp.n_actions(), policy.k());
    let mut rho = vec![0.0; n_s * n_a * k * (k + 1)];
    for s in 0..n_s {
        for a in 0..n_a {
            for o in 0..k {
                for prev in 0..=k {
                    rho[((s * n_a + a) * k + o) * (k + 1) + prev] =
                        d[s * (k + 1) + prev] * policy.high(s, prev, o) * policy.low(s, o, a);
                }
            }
        }
    }
    let mut occ = OptionOccupancy {
        n_states: n_s,
        n_actions: n_a,
        k,
        rho,
        gamma: mdp.gamma(),
        flow_residual: None,
    };
    occ.flow_residual = Some(occ.flow_violation(mdp)?);
    Ok(occ)
}

/// The unique policy whose occupancy is `occ`; unreachable rows come back uniform.
pub fn recover_policy(occ: &OptionOccupancy) -> HierPolicy {
    let (n_s, n_a, k) = (occ.n_states, occ.n_actions, occ.k);
    let mut high = vec![0.0; n_s * (k + 1) * k];
    let mut low = vec![0.0; n_s * k * n_a];
    for s in 0..n_s {
        for prev in 0..=k {
            let row = &mut high[(s * (k + 1) + prev) * k..(s * (k + 1) + prev + 1) * k];
            for (o, slot) in row.iter_mut().enumerate() {
                *slot = (0..n_a).map(|a| occ.get(s, a, o, prev)).sum();
            }
            normalize_or_uniform(row);
        }
        for o in 0..k {
            let row = &mut low[(s * k + o) * n_a..(s * k + o + 1) * n_a];
            for (a, slot) in row.iter_mut().enumerate() {
                *slot = (0..=k).map(|p| occ.get(s, a, o, p)).sum();
            }
            normalize_or_uniform(row);
        }
    }
    HierPolicy::new(n_s, n_a, k, high, low).expect("normalized rows")
}

fn normalize_or_uniform(row: &mut [f64]) {
    let z: f64 = row.iter().sum();
    if z < RECOVERY_FLOOR {
        let u = 1.0 / row.len() as f64;
        row.iter_mut().for_each(|x| *x = u);
    } else {
        row.iter_mut().for_each(|x| *x /= z);
        // absorb the last ulp so rows pass the strict sum check
        let z: f64 = row.iter().sum();
        let i = math::argmax(row);
        row[i] += 1.0 - z;
    }
}

/// `ρ(s, a) = Σ_{o, o'} ρ(s, a, o, o')`.
pub fn marginalize(occ: &OptionOccupancy) -> FlatOccupancy {
    let cell = occ.k * (occ.k + 1);
    FlatOccupancy {
        n_states: occ.n_states,
        n_actions: occ.n_actions,
        rho: occ.rho.chunks(cell).map(|c| c.iter().sum()).collect(),
        gamma: occ.gamma,
    }
}

/// Expert state-action occupancy split over options by the policy's own conditional
/// `p(o, o' | s, a) = ρ_π(s, a, o, o') / ρ_π(s, a)`.
///
/// Where the policy never plays `(s, a)` the split falls back to its
/// state-level conditional `p(o, o' | s)`, and to uniform at unreachable states.
pub fn expert_option_occupancy(
    flat: &FlatOccupancy,
    policy: &HierPolicy,
    mdp: &TabularMdp,
) -> Result<OptionOccupancy> {
    if flat.n_states != mdp.n_states() || flat.n_actions != mdp.n_actions() {
        return Err(Error::DimensionMismatch("expert occupancy vs MDP"));
    }
    let occ = compute_occupancy(policy, mdp)?;
    Ok(split_by(flat, &occ))
}

pub(crate) fn split_by(flat: &FlatOccupancy, occ: &OptionOccupancy) -> OptionOccupancy {
    let (n_s, n_a, k) = (occ.n_states, occ.n_actions, occ.k);
    let cell = k * (k + 1);
    let mut rho = vec![0.0; n_s * n_a * cell];
    for s in 0..n_s {
        let mut state_split = vec![0.0; cell];
        for a in 0..n_a {
            for (j, x) in occ.rho[(s * n_a + a) * cell..(s * n_a + a + 1) * cell]
                .iter()
                .enumerate()
            {
                state_split[j] += x;
            }
        }
        let state_total: f64 = state_split.iter().sum();
        for a in 0..n_a {
            let e = flat.get(s, a);
            if e == 0.0 {
                continue;
            }
            let src = &occ.rho[(s * n_a + a) * cell..(s * n_a + a + 1) * cell];
            let total: f64 = src.iter().sum();
            let dst = &mut rho[(s * n_a + a) * cell..(s * n_a + a + 1) * cell];
            if total > 0.0 {
                for (d, x) in dst.iter_mut().zip(src) {
                    *d = e * x / total;
                }
            } else if state_total > 0.0 {
                for (d, x) in dst.iter_mut().zip(&state_split) {
                    *d = e * x / state_total;
                }
            } else {
                dst.iter_mut().for_each(|d| *d = e / cell as f64);
            }
        }
    }
    OptionOccupancy {
        n_states: n_s,
        n_actions: n_a,
        k,
        rho,
        gamma: flat.gamma,
        flow_residual: None,
    }
}

/// A discounted measure that divergences can be taken between.
pub trait Measure {
    /// Shape descriptor; two measures are comparable only if these agree.
    fn shape(&self) -> (usize, usize, usize);
    fn gamma(&self) -> f64;
    fn cells(&self) -> &[f64];
}

impl Measure for OptionOccupancy {
    fn shape(&self) -> (usize, usize, usize) {
        (self.n_states, self.n_actions, self.k)
    }
    fn gamma(&self) -> f64 {
        self.gamma
    }
    fn cells(&self) -> &[f64] {
        &self.rho
    }
}

impl Measure for FlatOccupancy {
    fn shape(&self) -> (usize, usize, usize) {
        (self.n_states, self.n_actions, 0)
    }
    fn gamma(&self) -> f64 {
        self.gamma
    }
    fn cells(&self) -> &[f64] {
        &self.rho
    }
}

/// `Σ_i term(p̂_i, q̂_i)` over the `(1-γ)`-normalized measures.
///
/// This is the hook for other f-divergences: for a generator `f`, pass
/// `|p, q| q * f(p / q)` with whatever boundary convention `f` needs.
pub fn divergence_with<M: Measure>(
    p: &M,
    q: &M,
    mut term: impl FnMut(f64, f64) -> f64,
) -> Result<f64> {
    if p.shape() != q.shape() || p.cells().len() != q.cells().len() {
        return Err(Error::DimensionMismatch("divergence operands"));
    }
    if (p.gamma() - q.gamma()).abs() > 1e-15 {
        return Err(Error::DimensionMismatch(
            "divergence operands have different discounts",
        ));
    }
    let scale = 1.0 - p.gamma();
    Ok(p.cells()
        .iter()
        .zip(q.cells())
        .map(|(&x, &y)| term(x * scale, y * scale))
        .sum())
}

/// Jensen-Shannon divergence in nats, in `[0, ln 2]`.
pub fn js_divergence<M: Measure>(p: &M, q: &M) -> Result<f64> {
    let js = divergence_with(p, q, js_term)?;
    Ok(js.clamp(0.0, core::f64::consts::LN_2))
}

/// One cell of `½ KL(p‖m) + ½ KL(q‖m)` with `m = (p + q) / 2`.
pub fn js_term(p: f64, q: f64) -> f64 {
    let m = 0.5 * (p + q);
    let half_kl = |x: f64| {
        if x > 0.0 {
            0.5 * x * math::ln(x / m)
        } else {
            0.0
        }
    };
    half_kl(p) + half_kl(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_state(gamma: f64) -> TabularMdp {
        TabularMdp::new(1, 1, vec![1.0], vec![0.0], vec![1.0], gamma).unwrap()
    }

    #[test]
    fn single_state_geometric_series() {
        let occ = compute_occupancy(&HierPolicy::uniform(1, 1, 1), &single_state(0.9)).unwrap();
        assert!((occ.get(0, 0, 0, 1) - 1.0).abs() < 1e-12);
        assert!((occ.get(0, 0, 0, 0) - 9.0).abs() < 1e-12);
        assert!((occ.mass() - 10.0).abs() < 1e-12);
        assert!(occ.flow_residual().unwrap() < 1e-12);
        assert!((marginalize(&occ).get(0, 0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn recovered_single_state_policy() {
        let occ = compute_occupancy(&HierPolicy::uniform(1, 1, 1), &single_state(0.9)).unwrap();
        let p = recover_policy(&occ);
        assert_eq!(p.high(0, 1, 0), 1.0);
        assert_eq!(p.high(0, 0, 0), 1.0);
        assert_eq!(p.low(0, 0, 0), 1.0);
    }

    #[test]
    fn js_scalar_example() {
        let p = FlatOccupancy::from_raw(1, 2, vec![0.5, 0.5], 0.0).unwrap();
        let q = FlatOccupancy::from_raw(1, 2, vec![1.0, 0.0], 0.0).unwrap();
        let direct = 0.5 * (0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln())
            + 0.5 * (1.0f64 / 0.75).ln();
        let js = js_divergence(&p, &q).unwrap();
        assert!((js - direct).abs() < 1e-15);
        assert!((js - 0.215762).abs() < 1e-6);
    }

    #[test]
    fn js_shape_mismatch() {
        let p = FlatOccupancy::from_raw(1, 2, vec![0.5, 0.5], 0.0).unwrap();
        let q = FlatOccupancy::from_raw(2, 1, vec![1.0, 0.0], 0.0).unwrap();
        assert!(js_divergence(&p, &q).is_err());
    }
}
