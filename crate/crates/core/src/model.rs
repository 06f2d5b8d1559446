//! Finite MDPs, the full option framework, and the one-step option model.
//!
//! The one-step model folds termination and option switching into a single
//! high-level conditional `π_H(o | s, o_prev)`, where `o_prev` ranges over the
//! regular options plus the initial option `#`. `#` terminates with
//! probability one and is encoded as index `k` on the previous-option axis.
//! It never appears as a chosen option.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, LOG_ZERO};
use crate::rng::{self, Rng};

/// Row-sum tolerance for every probability table in the crate.
pub const ROW_TOL: f64 = 1e-12;

/// Hard cap on brute-force enumeration of option sequences.
pub const ENUMERATION_LIMIT: u128 = 10_000_000;

/// A finite discounted MDP `(S, A, P, R, μ0, γ)`.
///
/// The reward table is only ever read by evaluation code; learners see demonstrations.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    mu0: Vec<f64>,
    gamma: f64,
}

impl TabularMdp {
    /// `transition` is indexed `(s, a, s')`, `reward` is indexed `(s, a)`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        mu0: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidModel(
                "MDP needs at least one state and one action",
            ));
        }
        if transition.len() != n_states * n_actions * n_states
            || reward.len() != n_states * n_actions
            || mu0.len() != n_states
        {
            return Err(Error::DimensionMismatch("MDP tables"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidModel("discount must lie in [0, 1)"));
        }
        if !transition
            .chunks(n_states)
            .all(|row| math::is_distribution(row, ROW_TOL))
        {
            return Err(Error::InvalidModel("transition row is not a distribution"));
        }
        if !math::is_distribution(&mu0, ROW_TOL) {
            return Err(Error::InvalidModel(
                "initial distribution is not a distribution",
            ));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidModel("reward must be finite"));
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            mu0,
            gamma,
        })
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

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// `P(· | s, a)`.
    pub fn next_states(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    /// Same dynamics, different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            self.reward.clone(),
            self.mu0.clone(),
            gamma,
        )
    }
}

/// `K` regular options plus the initial option `#` at index `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OptionSpace {
    k: usize,
}

impl OptionSpace {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidModel("need at least one option"));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Index of `#` on the previous-option axis.
    pub fn init_index(&self) -> usize {
        self.k
    }

    /// Cardinality of `O ∪ {#}`.
    pub fn n_prev(&self) -> usize {
        self.k + 1
    }
}

/// The call-and-return option framework with every state in every initiation set.
///
/// At each step the running option terminates with probability `β_o(s)`; on
/// termination a fresh option is drawn from `π_O(· | s)` (which may re-select
/// the same option). Actions come from the running option's `π_o(· | s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullOptionModel {
    n_states: usize,
    n_actions: usize,
    k: usize,
    intra: Vec<f64>,
    termination: Vec<f64>,
    inter: Vec<f64>,
}

impl FullOptionModel {
    /// `intra` indexed `(o, s, a)`, `termination` indexed `(o, s)`, `inter` indexed `(s, o)`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        k: usize,
        intra: Vec<f64>,
        termination: Vec<f64>,
        inter: Vec<f64>,
    ) -> Result<Self> {
        OptionSpace::new(k)?;
        if intra.len() != k * n_states * n_actions
            || termination.len() != k * n_states
            || inter.len() != n_states * k
        {
            return Err(Error::DimensionMismatch("option model tables"));
        }
        if !intra
            .chunks(n_actions)
            .all(|r| math::is_distribution(r, ROW_TOL))
            || !inter.chunks(k).all(|r| math::is_distribution(r, ROW_TOL))
        {
            return Err(Error::InvalidModel(
                "option policy row is not a distribution",
            ));
        }
        if termination.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::InvalidModel(
                "termination probability outside [0, 1]",
            ));
        }
        Ok(Self {
            n_states,
            n_actions,
            k,
            intra,
            termination,
            inter,
        })
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

    /// `π_o(a | s)`.
    pub fn intra(&self, o: usize, s: usize, a: usize) -> f64 {
        self.intra[(o * self.n_states + s) * self.n_actions + a]
    }

    /// `β_o(s)`.
    pub fn termination(&self, o: usize, s: usize) -> f64 {
        self.termination[o * self.n_states + s]
    }

    /// `π_O(o | s)`.
    pub fn inter(&self, s: usize, o: usize) -> f64 {
        self.inter[s * self.k + o]
    }

    /// `ln P(s_{0:T}, a_{0:T})` under call-and-return execution, summing over every
    /// option path and every termination event explicitly.
    ///
    /// This never goes through the one-step conversion, so it serves as the
    /// reference the conversion is checked against. Cost is `(2K)^T`.
    pub fn marginal_trajectory_log_prob(&self, mdp: &TabularMdp, traj: &Trajectory) -> Result<f64> {
        if mdp.n_states() != self.n_states || mdp.n_actions() != self.n_actions {
            return Err(Error::DimensionMismatch("option model vs MDP"));
        }
        traj.validate(self.n_states, self.n_actions)?;
        let steps = traj.len();
        let branches = (2 * self.k) as u128;
        if branches
            .checked_pow(steps as u32 - 1)
            .is_none_or(|c| c > ENUMERATION_LIMIT)
        {
            return Err(Error::EnumerationTooLarge {
                count: branches.saturating_pow(steps as u32 - 1),
                limit: ENUMERATION_LIMIT,
            });
        }
        let s = &traj.states;
        let a = &traj.actions;
        // prob of the remaining suffix given the option running at step t
        fn suffix(m: &FullOptionModel, s: &[usize], a: &[usize], t: usize, running: usize) -> f64 {
            let mut total = m.intra(running, s[t], a[t]);
            if total == 0.0 || t + 1 == s.len() {
                return total;
            }
            let next = t + 1;
            let beta = m.termination(running, s[next]);
            let mut tail = (1.0 - beta) * suffix(m, s, a, next, running);
            if beta > 0.0 {
                for o in 0..m.k {
                    let pick = m.inter(s[next], o);
                    if pick > 0.0 {
                        tail += beta * pick * suffix(m, s, a, next, o);
                    }
                }
            }
            total *= tail;
            total
        }
        let mut prob = 0.0;
        for o in 0..self.k {
            prob += self.inter(s[0], o) * suffix(self, s, a, 0, o);
        }
        Ok(math::safe_ln(prob) + dynamics_log_prob(mdp, traj))
    }
}

/// The one-step hierarchical policy pair `(π_H, π_L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HierPolicy {
    n_states: usize,
    n_actions: usize,
    k: usize,
    high: Vec<f64>,
    low: Vec<f64>,
}

impl HierPolicy {
    /// `high` indexed `(s, o_prev ∈ O⁺, o)`, `low` indexed `(s, o, a)`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        k: usize,
        high: Vec<f64>,
        low: Vec<f64>,
    ) -> Result<Self> {
        OptionSpace::new(k)?;
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidModel("policy needs states and actions"));
        }
        if high.len() != n_states * (k + 1) * k || low.len() != n_states * k * n_actions {
            return Err(Error::DimensionMismatch("policy tables"));
        }
        if !high.chunks(k).all(|r| math::is_distribution(r, ROW_TOL))
            || !low
                .chunks(n_actions)
                .all(|r| math::is_distribution(r, ROW_TOL))
        {
            return Err(Error::InvalidModel("policy row is not a distribution"));
        }
        Ok(Self {
            n_states,
            n_actions,
            k,
            high,
            low,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize, k: usize) -> Self {
        Self {
            n_states,
            n_actions,
            k,
            high: vec![1.0 / k as f64; n_states * (k + 1) * k],
            low: vec![1.0 / n_actions as f64; n_states * k * n_actions],
        }
    }

    /// Uniform policy perturbed by Gaussian logit noise of scale `sigma`.
    pub fn noisy_uniform(
        n_states: usize,
        n_actions: usize,
        k: usize,
        sigma: f64,
        seed: u64,
    ) -> Self {
        use rand_distr::{Distribution, Normal};
        let mut rng = rng::seeded(seed);
        let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
        let mut draw = |len: usize, width: usize| {
            let mut t: Vec<f64> = (0..len).map(|_| normal.sample(&mut rng)).collect();
            for row in t.chunks_mut(width) {
                math::softmax_in_place(row, 1.0);
            }
            t
        };
        let high = draw(n_states * (k + 1) * k, k);
        let low = draw(n_states * k * n_actions, n_actions);
        Self {
            n_states,
            n_actions,
            k,
            high,
            low,
        }
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

    pub fn options(&self) -> OptionSpace {
        OptionSpace { k: self.k }
    }

    pub fn init_index(&self) -> usize {
        self.k
    }

    /// `π_H(o | s, o_prev)`.
    pub fn high(&self, s: usize, prev: usize, o: usize) -> f64 {
        self.high[(s * (self.k + 1) + prev) * self.k + o]
    }

    /// `π_L(a | s, o)`.
    pub fn low(&self, s: usize, o: usize, a: usize) -> f64 {
        self.low[(s * self.k + o) * self.n_actions + a]
    }

    pub fn high_row(&self, s: usize, prev: usize) -> &[f64] {
        let start = (s * (self.k + 1) + prev) * self.k;
        &self.high[start..start + self.k]
    }

    pub fn low_row(&self, s: usize, o: usize) -> &[f64] {
        let start = (s * self.k + o) * self.n_actions;
        &self.low[start..start + self.n_actions]
    }

    pub fn high_table(&self) -> &[f64] {
        &self.high
    }

    pub fn low_table(&self) -> &[f64] {
        &self.low
    }

    pub(crate) fn high_row_mut(&mut self, s: usize, prev: usize) -> &mut [f64] {
        let start = (s * (self.k + 1) + prev) * self.k;
        &mut self.high[start..start + self.k]
    }

    pub(crate) fn low_row_mut(&mut self, s: usize, o: usize) -> &mut [f64] {
        let start = (s * self.k + o) * self.n_actions;
        &mut self.low[start..start + self.n_actions]
    }

    /// Action distribution at `s` after choosing an option from `π_H(· | s, o_prev)`.
    pub fn action_marginal(&self, s: usize, prev: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_actions];
        for o in 0..self.k {
            let w = self.high(s, prev, o);
            for (a, slot) in out.iter_mut().enumerate() {
                *slot += w * self.low(s, o, a);
            }
        }
        out
    }

    /// Convex combination `(1 - t) self + t other`.
    pub fn mix(&self, other: &HierPolicy, t: f64) -> HierPolicy {
        let lerp = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (1.0 - t) * x + t * y)
                .collect()
        };
        HierPolicy {
            n_states: self.n_states,
            n_actions: self.n_actions,
            k: self.k,
            high: lerp(&self.high, &other.high),
            low: lerp(&self.low, &other.low),
        }
    }

    pub fn same_shape(&self, other: &HierPolicy) -> bool {
        self.n_states == other.n_states && self.n_actions == other.n_actions && self.k == other.k
    }

    pub(crate) fn check_mdp(&self, mdp: &TabularMdp) -> Result<()> {
        if mdp.n_states() != self.n_states || mdp.n_actions() != self.n_actions {
            return Err(Error::DimensionMismatch("policy vs MDP"));
        }
        Ok(())
    }
}

/// A flat policy `π(a | s)`; the single-option special case of [`HierPolicy`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlatPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl FlatPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch("flat policy table"));
        }
        if !probs
            .chunks(n_actions)
            .all(|r| math::is_distribution(r, ROW_TOL))
        {
            return Err(Error::InvalidModel("flat policy row is not a distribution"));
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Embeds as a one-option hierarchical policy.
    pub fn to_hier(&self) -> HierPolicy {
        HierPolicy {
            n_states: self.n_states,
            n_actions: self.n_actions,
            k: 1,
            high: vec![1.0; self.n_states * 2],
            low: self.probs.clone(),
        }
    }

    /// The low-level table of a one-option policy.
    pub fn from_single_option(policy: &HierPolicy) -> Result<Self> {
        if policy.k() != 1 {
            return Err(Error::InvalidModel("flat view needs exactly one option"));
        }
        Ok(Self {
            n_states: policy.n_states(),
            n_actions: policy.n_actions(),
            probs: policy.low_table().to_vec(),
        })
    }
}

/// A state-action trajectory `(s_{0:T}, a_{0:T})` without option labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl Trajectory {
    pub fn new(states: Vec<usize>, actions: Vec<usize>) -> Result<Self> {
        if states.is_empty() || states.len() != actions.len() {
            return Err(Error::DimensionMismatch(
                "trajectory needs equal, nonzero state and action counts",
            ));
        }
        Ok(Self { states, actions })
    }

    /// Number of `(s, a)` steps, `T + 1`.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if self.states.is_empty() || self.states.len() != self.actions.len() {
            return Err(Error::DimensionMismatch("trajectory lengths"));
        }
        if self.states.iter().any(|&s| s >= n_states) {
            return Err(Error::IndexOutOfRange("trajectory state"));
        }
        if self.actions.iter().any(|&a| a >= n_actions) {
            return Err(Error::IndexOutOfRange("trajectory action"));
        }
        Ok(())
    }
}

/// `(s_{0:T}, a_{0:T}, o_{-1:T})`; `options[0]` is always `#`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OptionTrajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub options: Vec<usize>,
    k: usize,
}

impl OptionTrajectory {
    /// `options` must be `o_{0:T}` (without the leading `#`).
    pub fn from_parts(
        states: Vec<usize>,
        actions: Vec<usize>,
        chosen: &[usize],
        k: usize,
    ) -> Result<Self> {
        let mut options = Vec::with_capacity(chosen.len() + 1);
        options.push(k);
        options.extend_from_slice(chosen);
        Self::new(states, actions, options, k)
    }

    pub fn new(
        states: Vec<usize>,
        actions: Vec<usize>,
        options: Vec<usize>,
        k: usize,
    ) -> Result<Self> {
        if states.is_empty() || states.len() != actions.len() || options.len() != states.len() + 1 {
            return Err(Error::DimensionMismatch("option trajectory lengths"));
        }
        if options[0] != k {
            return Err(Error::InvalidModel(
                "first option must be the initial option",
            ));
        }
        if options[1..].iter().any(|&o| o >= k) {
            return Err(Error::IndexOutOfRange("option label"));
        }
        Ok(Self {
            states,
            actions,
            options,
            k,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `o_t` for `t = 0..=T`.
    pub fn option_at(&self, t: usize) -> usize {
        self.options[t + 1]
    }

    /// `o_{t-1}`, which is `#` for `t = 0`.
    pub fn prev_option_at(&self, t: usize) -> usize {
        self.options[t]
    }

    /// `o_{0:T}`.
    pub fn chosen_options(&self) -> &[usize] {
        &self.options[1..]
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            states: self.states.clone(),
            actions: self.actions.clone(),
        }
    }

    pub fn validate(&self, n_states: usize, n_actions: usize) -> Result<()> {
        self.trajectory().validate(n_states, n_actions)
    }
}

/// Definition of the one-step model:
/// `π_H(o | s, o') = β_{o'}(s) π_O(o | s) + (1 - β_{o'}(s)) 1[o = o']`, with `β_# ≡ 1`,
/// and `π_L(a | s, o) = π_o(a | s)`.
pub fn one_step_from_full(full: &FullOptionModel) -> HierPolicy {
    let (n_s, n_a, k) = (full.n_states, full.n_actions, full.k);
    let mut high = vec![0.0; n_s * (k + 1) * k];
    let mut low = vec![0.0; n_s * k * n_a];
    for s in 0..n_s {
        for prev in 0..=k {
            let beta = if prev == k {
                1.0
            } else {
                full.termination(prev, s)
            };
            for o in 0..k {
                let stay = if o == prev { 1.0 - beta } else { 0.0 };
                high[(s * (k + 1) + prev) * k + o] = beta * full.inter(s, o) + stay;
            }
        }
        for o in 0..k {
            for a in 0..n_a {
                low[(s * k + o) * n_a + a] = full.intra(o, s, a);
            }
        }
    }
    HierPolicy {
        n_states: n_s,
        n_actions: n_a,
        k,
        high,
        low,
    }
}

/// Inverts [`one_step_from_full`].
///
/// The `#` row gives `π_O(· | s)` directly. Each regular row `o'` must then
/// factorize as `π_H(o | s, o') = β_{o'}(s) π_O(o | s)` off the diagonal; its
/// switch-away mass `1 - π_H(o' | s, o')` equals `β_{o'}(s) (1 - π_O(o' | s))`,
/// which fixes `β_{o'}(s)`. When `π_O(o' | s) = 1` the row is the identity for
/// every `β` and `β_{o'}(s) = 0` is reported.
pub fn full_from_one_step(policy: &HierPolicy, tol: f64) -> Result<FullOptionModel> {
    let (n_s, n_a, k) = (policy.n_states, policy.n_actions, policy.k);
    let mut inter = vec![0.0; n_s * k];
    let mut termination = vec![0.0; k * n_s];
    let mut intra = vec![0.0; k * n_s * n_a];
    for s in 0..n_s {
        let pick = policy.high_row(s, k);
        inter[s * k..(s + 1) * k].copy_from_slice(pick);
        let mut deviation: f64 = 0.0;
        for prev in 0..k {
            let leave = 1.0 - policy.high(s, prev, prev);
            let denom = 1.0 - pick[prev];
            let beta = if denom > tol { leave / denom } else { 0.0 };
            if beta < -tol || beta > 1.0 + tol {
                deviation = deviation.max(if beta < 0.0 { -beta } else { beta - 1.0 });
            }
            let beta = beta.clamp(0.0, 1.0);
            termination[prev * n_s + s] = beta;
            for o in (0..k).filter(|&o| o != prev) {
                deviation = deviation.max((policy.high(s, prev, o) - beta * pick[o]).abs());
            }
        }
        if deviation > tol {
            return Err(Error::Inconsistent {
                state: s,
                deviation,
            });
        }
        for o in 0..k {
            for a in 0..n_a {
                intra[(o * n_s + s) * n_a + a] = policy.low(s, o, a);
            }
        }
    }
    FullOptionModel::new(n_s, n_a, k, intra, termination, inter)
}

fn dynamics_log_prob(mdp: &TabularMdp, traj: &Trajectory) -> f64 {
    let mut lp = math::safe_ln(mdp.mu0()[traj.states[0]]);
    for t in 0..traj.len() - 1 {
        lp += math::safe_ln(mdp.p(traj.states[t], traj.actions[t], traj.states[t + 1]));
    }
    if math::is_log_zero(lp) {
        LOG_ZERO
    } else {
        lp
    }
}

/// `ln P(s_{0:T}, a_{0:T}, o_{-1:T})`; [`LOG_ZERO`] if any factor vanishes.
pub fn trajectory_log_prob(
    policy: &HierPolicy,
    mdp: &TabularMdp,
    traj: &OptionTrajectory,
) -> Result<f64> {
    policy.check_mdp(mdp)?;
    traj.validate(policy.n_states, policy.n_actions)?;
    if traj.k() != policy.k {
        return Err(Error::DimensionMismatch(
            "trajectory option count vs policy",
        ));
    }
    let mut lp = dynamics_log_prob(mdp, &traj.trajectory());
    if math::is_log_zero(lp) {
        return Ok(LOG_ZERO);
    }
    for t in 0..traj.len() {
        let (s, a, o, prev) = (
            traj.states[t],
            traj.actions[t],
            traj.option_at(t),
            traj.prev_option_at(t),
        );
        let p = policy.high(s, prev, o) * policy.low(s, o, a);
        if p <= 0.0 {
            return Ok(LOG_ZERO);
        }
        lp += math::ln(p);
    }
    Ok(lp)
}

/// Number of option sequences of length `len` over `k` options, or an error past the limit.
pub(crate) fn check_enumerable(k: usize, len: usize) -> Result<()> {
    let count = (k as u128).checked_pow(len as u32);
    match count {
        Some(c) if c <= ENUMERATION_LIMIT => Ok(()),
        _ => Err(Error::EnumerationTooLarge {
            count: count.unwrap_or(u128::MAX),
            limit: ENUMERATION_LIMIT,
        }),
    }
}

/// Calls `f` on every sequence in `{0..k}^len`, in lexicographic order.
pub(crate) fn for_each_sequence(k: usize, len: usize, mut f: impl FnMut(&[usize])) {
    let mut seq = vec![0usize; len];
    loop {
        f(&seq);
        let mut i = len;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            seq[i] += 1;
            if seq[i] < k {
                break;
            }
            seq[i] = 0;
        }
    }
}

/// `ln P(s_{0:T}, a_{0:T})` by summing [`trajectory_log_prob`] over every option sequence.
pub fn marginal_trajectory_log_prob(
    policy: &HierPolicy,
    mdp: &TabularMdp,
    traj: &Trajectory,
) -> Result<f64> {
    policy.check_mdp(mdp)?;
    traj.validate(policy.n_states, policy.n_actions)?;
    check_enumerable(policy.k, traj.len())?;
    let base = dynamics_log_prob(mdp, traj);
    if math::is_log_zero(base) {
        return Ok(LOG_ZERO);
    }
    let k = policy.k;
    let mut acc = LOG_ZERO;
    for_each_sequence(k, traj.len(), |seq| {
        let mut lp = 0.0;
        let mut prev = k;
        for (t, &o) in seq.iter().enumerate() {
            let p = policy.high(traj.states[t], prev, o)
                * policy.low(traj.states[t], o, traj.actions[t]);
            if p <= 0.0 {
                return;
            }
            lp += math::ln(p);
            prev = o;
        }
        acc = math::log_add(acc, lp);
    });
    if math::is_log_zero(acc) {
        Ok(LOG_ZERO)
    } else {
        Ok(acc + base)
    }
}

/// Rolls out `horizon` steps: `o_t ~ π_H(·|s_t, o_{t-1})`, `a_t ~ π_L(·|s_t, o_t)`,
/// `s_{t+1} ~ P(·|s_t, a_t)`.
pub fn sample_trajectory(
    policy: &HierPolicy,
    mdp: &TabularMdp,
    horizon: usize,
    seed: u64,
) -> Result<OptionTrajectory> {
    policy.check_mdp(mdp)?;
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least one step"));
    }
    let mut rng = rng::seeded(seed);
    Ok(rollout(policy, mdp, horizon, &mut rng))
}

pub(crate) fn rollout(
    policy: &HierPolicy,
    mdp: &TabularMdp,
    horizon: usize,
    rng: &mut Rng,
) -> OptionTrajectory {
    let k = policy.k;
    let mut states = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon);
    let mut options = Vec::with_capacity(horizon + 1);
    options.push(k);
    let mut s = rng::sample_categorical(rng, mdp.mu0());
    for t in 0..horizon {
        let o = rng::sample_categorical(rng, policy.high_row(s, options[t]));
        let a = rng::sample_categorical(rng, policy.low_row(s, o));
        states.push(s);
        actions.push(a);
        options.push(o);
        if t + 1 < horizon {
            s = rng::sample_categorical(rng, mdp.next_states(s, a));
        }
    }
    OptionTrajectory {
        states,
        actions,
        options,
        k,
    }
}
