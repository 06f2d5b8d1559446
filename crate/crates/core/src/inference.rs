//! Option inference on unlabeled demonstrations.
//!
//! Given a state-action trajectory, the options form a hidden Markov chain
//! with transition `π_H(o_t | s_t, o_{t-1})` and emission `π_L(a_t | s_t, o_t)`.
//! Max-product gives the most probable option path; sum-product gives exact
//! posteriors.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, LOG_ZERO};
use crate::model::{self, HierPolicy, OptionTrajectory, Trajectory};
use crate::rng;

/// Log-domain copies of both policy tables.
pub(crate) struct LogPolicy {
    k: usize,
    n_actions: usize,
    high: Vec<f64>,
    /// `ln π_H(o | s, o_prev)` laid out `(s, o, o_prev)` for the max over predecessors.
    high_into: Vec<f64>,
    low: Vec<f64>,
}

impl LogPolicy {
    pub(crate) fn new(policy: &HierPolicy) -> Self {
        let k = policy.k();
        let high: Vec<f64> = policy
            .high_table()
            .iter()
            .map(|&p| math::safe_ln(p))
            .collect();
        let mut high_into = vec![0.0; high.len()];
        for s in 0..policy.n_states() {
            for prev in 0..=k {
                for o in 0..k {
                    high_into[(s * k + o) * (k + 1) + prev] = high[(s * (k + 1) + prev) * k + o];
                }
            }
        }
        Self {
            k,
            n_actions: policy.n_actions(),
            high,
            high_into,
            low: policy
                .low_table()
                .iter()
                .map(|&p| math::safe_ln(p))
                .collect(),
        }
    }

    /// `ln π_H(· | s, o_prev)` as a slice over `o`.
    #[inline]
    fn high(&self, s: usize, prev: usize) -> &[f64] {
        let start = (s * (self.k + 1) + prev) * self.k;
        &self.high[start..start + self.k]
    }

    #[inline]
    fn low(&self, s: usize, o: usize, a: usize) -> f64 {
        self.low[(s * self.k + o) * self.n_actions + a]
    }
}

/// Max-product messages and backpointers, both indexed `(t, o)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiTable {
    pub k: usize,
    pub alpha_hat: Vec<f64>,
    pub backpointer: Vec<usize>,
}

impl ViterbiTable {
    pub fn alpha(&self, t: usize, o: usize) -> f64 {
        self.alpha_hat[t * self.k + o]
    }

    pub fn len(&self) -> usize {
        self.alpha_hat.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.alpha_hat.is_empty()
    }
}

/// A decoded option path `o_{0:T}` and its joint log-probability
/// `ln P(a_{0:T}, o_{0:T} | s_{0:T}, o_{-1} = #)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub options: Vec<usize>,
    pub log_prob: f64,
}

fn check(policy: &HierPolicy, traj: &Trajectory) -> Result<()> {
    traj.validate(policy.n_states(), policy.n_actions())
}

/// Fills the max-product table. Ties in the max go to the lowest predecessor.
pub fn viterbi_table(policy: &HierPolicy, traj: &Trajectory) -> Result<ViterbiTable> {
    check(policy, traj)?;
    let lp = LogPolicy::new(policy);
    Ok(viterbi_with(&lp, traj).0)
}

/// The table plus the first step at which every option is impossible.
fn viterbi_with(lp: &LogPolicy, traj: &Trajectory) -> (ViterbiTable, Option<usize>) {
    let (k, n_a) = (lp.k, lp.n_actions);
    let steps = traj.len();
    let mut alpha = vec![0.0; steps * k];
    let mut back = vec![k; steps * k];
    let (s0, a0) = (traj.states[0], traj.actions[0]);
    let start = lp.high(s0, k);
    for o in 0..k {
        alpha[o] = lp.low(s0, o, a0) + start[o];
    }
    let mut impossible = alpha[..k]
        .iter()
        .all(|&x| math::is_log_zero(x))
        .then_some(0);
    let block = k * (k + 1);
    for t in 1..steps {
        let (s, a) = (traj.states[t], traj.actions[t]);
        // one slice per step; rows of `trans` are `ln π_H(o | s, ·)`
        let trans = &lp.high_into[s * block..(s + 1) * block];
        let emit = &lp.low[s * k * n_a..(s + 1) * k * n_a];
        let (prev, cur) = alpha[(t - 1) * k..(t + 1) * k].split_at_mut(k);
        let arg_out = &mut back[t * k..(t + 1) * k];
        for o in 0..k {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (p, (&prev_alpha, &h)) in prev
                .iter()
                .zip(&trans[o * (k + 1)..o * (k + 1) + k])
                .enumerate()
            {
                // selects rather than a branch: the comparison is data dependent
                let v = prev_alpha + h;
                let better = v > best;
                best = if better { v } else { best };
                arg = if better { p } else { arg };
            }
            cur[o] = best + emit[o * n_a + a];
            arg_out[o] = arg;
        }
        if impossible.is_none() && cur.iter().all(|&x| math::is_log_zero(x)) {
            impossible = Some(t);
        }
    }
    (
        ViterbiTable {
            k,
            alpha_hat: alpha,
            backpointer: back,
        },
        impossible,
    )
}

/// Most probable option path under `policy`, with lowest-index tie-breaking at every max.
pub fn viterbi_decode(policy: &HierPolicy, traj: &Trajectory) -> Result<Decoded> {
    check(policy, traj)?;
    let lp = LogPolicy::new(policy);
    decode_with(&lp, traj)
}

pub(crate) fn decode_with(lp: &LogPolicy, traj: &Trajectory) -> Result<Decoded> {
    let (table, impossible) = viterbi_with(lp, traj);
    if let Some(step) = impossible {
        return Err(Error::ImpossibleTrajectory { step });
    }
    let k = lp.k;
    let steps = traj.len();
    let last = &table.alpha_hat[(steps - 1) * k..];
    let mut o = math::argmax(last);
    let log_prob = last[o];
    let mut options = vec![0; steps];
    for t in (0..steps).rev() {
        options[t] = o;
        o = table.backpointer[t * k + o];
    }
    Ok(Decoded { options, log_prob })
}

/// Exhaustive argmax over all `K^(T+1)` option paths.
///
/// Path scores are accumulated in the same order as the max-product
/// recursion, and ties are broken the same way (lowest final option, then
/// lowest predecessor, and so on backwards), so the result is bit-identical
/// to [`viterbi_decode`] whenever that is correct.
pub fn brute_force_decode(policy: &HierPolicy, traj: &Trajectory) -> Result<Decoded> {
    check(policy, traj)?;
    model::check_enumerable(policy.k(), traj.len())?;
    let lp = LogPolicy::new(policy);
    let k = policy.k();
    let mut best: Option<Decoded> = None;
    model::for_each_sequence(k, traj.len(), |seq| {
        let mut score = 0.0;
        let mut prev = k;
        for (t, &o) in seq.iter().enumerate() {
            let (s, a) = (traj.states[t], traj.actions[t]);
            score = if t == 0 {
                lp.low(s, o, a) + lp.high(s, prev)[o]
            } else {
                score + lp.high(s, prev)[o] + lp.low(s, o, a)
            };
            prev = o;
        }
        let better = match &best {
            None => true,
            Some(b) => {
                score > b.log_prob || (score == b.log_prob && reverse_lex_less(seq, &b.options))
            }
        };
        if better {
            best = Some(Decoded {
                options: seq.to_vec(),
                log_prob: score,
            });
        }
    });
    let best = best.expect("at least one sequence");
    if math::is_log_zero(best.log_prob) {
        return Err(Error::ImpossibleTrajectory {
            step: first_impossible_step(policy, traj),
        });
    }
    Ok(best)
}

fn reverse_lex_less(a: &[usize], b: &[usize]) -> bool {
    for (x, y) in a.iter().rev().zip(b.iter().rev()) {
        if x != y {
            return x < y;
        }
    }
    false
}

/// First step at which no option path remains possible (by boolean forward reachability).
fn first_impossible_step(policy: &HierPolicy, traj: &Trajectory) -> usize {
    let k = policy.k();
    let mut alive: Vec<bool> = (0..k)
        .map(|o| {
            policy.high(traj.states[0], k, o) > 0.0
                && policy.low(traj.states[0], o, traj.actions[0]) > 0.0
        })
        .collect();
    for t in 0..traj.len() {
        if t > 0 {
            let (s, a) = (traj.states[t], traj.actions[t]);
            alive = (0..k)
                .map(|o| {
                    policy.low(s, o, a) > 0.0
                        && (0..k).any(|p| alive[p] && policy.high(s, p, o) > 0.0)
                })
                .collect();
        }
        if !alive.iter().any(|&x| x) {
            return t;
        }
    }
    traj.len()
}

/// Exact option posteriors for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionPosterior {
    pub k: usize,
    /// `p(o_t, o_{t-1} | s, a)` indexed `(t, o_t, o_{t-1} ∈ O⁺)`; at `t = 0` all mass sits on `o_{-1} = #`.
    pub pair_marginals: Vec<f64>,
    /// `p(o_t | s, a)` indexed `(t, o_t)`.
    pub single_marginals: Vec<f64>,
    /// `ln P(a_{0:T} | s_{0:T})` under the policy (dynamics factors excluded).
    pub log_evidence: f64,
}

impl OptionPosterior {
    pub fn pair(&self, t: usize, o: usize, prev: usize) -> f64 {
        self.pair_marginals[(t * self.k + o) * (self.k + 1) + prev]
    }

    pub fn single(&self, t: usize, o: usize) -> f64 {
        self.single_marginals[t * self.k + o]
    }

    pub fn len(&self) -> usize {
        self.single_marginals.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.single_marginals.is_empty()
    }
}

struct Messages {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    log_evidence: f64,
}

fn messages(lp: &LogPolicy, traj: &Trajectory) -> Result<Messages> {
    let k = lp.k;
    let steps = traj.len();
    let mut alpha = vec![LOG_ZERO; steps * k];
    let (s0, a0) = (traj.states[0], traj.actions[0]);
    for (o, (slot, &h)) in alpha.iter_mut().zip(lp.high(s0, k)).enumerate() {
        *slot = h + lp.low(s0, o, a0);
    }
    let mut terms = vec![0.0; k];
    for t in 1..steps {
        let (s, a) = (traj.states[t], traj.actions[t]);
        for o in 0..k {
            for p in 0..k {
                terms[p] = alpha[(t - 1) * k + p] + lp.high(s, p)[o];
            }
            alpha[t * k + o] = math::log_sum_exp(terms.iter().copied()) + lp.low(s, o, a);
        }
    }
    for t in 0..steps {
        if alpha[t * k..(t + 1) * k]
            .iter()
            .all(|&x| math::is_log_zero(x))
        {
            return Err(Error::ImpossibleTrajectory { step: t });
        }
    }
    let mut beta = vec![0.0; steps * k];
    for t in (0..steps - 1).rev() {
        let (s, a) = (traj.states[t + 1], traj.actions[t + 1]);
        for o in 0..k {
            for n in 0..k {
                terms[n] = lp.high(s, o)[n] + lp.low(s, n, a) + beta[(t + 1) * k + n];
            }
            beta[t * k + o] = math::log_sum_exp(terms.iter().copied());
        }
    }
    let log_evidence = math::log_sum_exp(alpha[(steps - 1) * k..].iter().copied());
    Ok(Messages {
        alpha,
        beta,
        log_evidence,
    })
}

/// Sum-product over the option chain.
pub fn forward_backward(policy: &HierPolicy, traj: &Trajectory) -> Result<OptionPosterior> {
    check(policy, traj)?;
    let lp = LogPolicy::new(policy);
    posterior_with(&lp, traj)
}

pub(crate) fn posterior_with(lp: &LogPolicy, traj: &Trajectory) -> Result<OptionPosterior> {
    let k = lp.k;
    let steps = traj.len();
    let msg = messages(lp, traj)?;
    let z = msg.log_evidence;
    let mut pair = vec![0.0; steps * k * (k + 1)];
    let mut single = vec![0.0; steps * k];
    for o in 0..k {
        let p = math::exp(msg.alpha[o] + msg.beta[o] - z);
        pair[o * (k + 1) + k] = p;
        single[o] = p;
    }
    for t in 1..steps {
        let (s, a) = (traj.states[t], traj.actions[t]);
        for o in 0..k {
            let emit = lp.low(s, o, a) + msg.beta[t * k + o] - z;
            let mut row = 0.0;
            for p in 0..k {
                let v = math::exp(msg.alpha[(t - 1) * k + p] + lp.high(s, p)[o] + emit);
                pair[(t * k + o) * (k + 1) + p] = v;
                row += v;
            }
            single[t * k + o] = row;
        }
    }
    Ok(OptionPosterior {
        k,
        pair_marginals: pair,
        single_marginals: single,
        log_evidence: z,
    })
}

/// Posteriors by normalized enumeration over every option path. Reference for [`forward_backward`].
pub fn enumerate_posterior(policy: &HierPolicy, traj: &Trajectory) -> Result<OptionPosterior> {
    check(policy, traj)?;
    model::check_enumerable(policy.k(), traj.len())?;
    let k = policy.k();
    let steps = traj.len();
    let mut weights = Vec::new();
    let mut seqs = Vec::new();
    model::for_each_sequence(k, steps, |seq| {
        let mut p = 1.0;
        let mut prev = k;
        for (t, &o) in seq.iter().enumerate() {
            p *= policy.high(traj.states[t], prev, o)
                * policy.low(traj.states[t], o, traj.actions[t]);
            prev = o;
        }
        if p > 0.0 {
            weights.push(p);
            seqs.push(seq.to_vec());
        }
    });
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Err(Error::ImpossibleTrajectory {
            step: first_impossible_step(policy, traj),
        });
    }
    let mut pair = vec![0.0; steps * k * (k + 1)];
    let mut single = vec![0.0; steps * k];
    for (w, seq) in weights.iter().zip(&seqs) {
        let w = w / total;
        let mut prev = k;
        for (t, &o) in seq.iter().enumerate() {
            pair[(t * k + o) * (k + 1) + prev] += w;
            single[t * k + o] += w;
            prev = o;
        }
    }
    Ok(OptionPosterior {
        k,
        pair_marginals: pair,
        single_marginals: single,
        log_evidence: math::ln(total),
    })
}

/// Draws `o_{0:T}` from the exact posterior by backward sampling over forward messages.
pub fn sample_posterior(policy: &HierPolicy, traj: &Trajectory, seed: u64) -> Result<Vec<usize>> {
    check(policy, traj)?;
    let lp = LogPolicy::new(policy);
    sample_with(&lp, traj, seed)
}

fn sample_with(lp: &LogPolicy, traj: &Trajectory, seed: u64) -> Result<Vec<usize>> {
    let k = lp.k;
    let steps = traj.len();
    let msg = messages(lp, traj)?;
    let mut rng = rng::seeded(seed);
    let mut out = vec![0; steps];
    let mut weights = vec![0.0; k];
    let normalize = |logs: &mut [f64]| {
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for x in logs.iter_mut() {
            *x = if math::is_log_zero(*x) {
                0.0
            } else {
                math::exp(*x - m)
            };
        }
    };
    weights.copy_from_slice(&msg.alpha[(steps - 1) * k..]);
    normalize(&mut weights);
    out[steps - 1] = rng::sample_categorical(&mut rng, &weights);
    for t in (0..steps - 1).rev() {
        let next = out[t + 1];
        let s = traj.states[t + 1];
        for (p, w) in weights.iter_mut().enumerate() {
            *w = msg.alpha[t * k + p] + lp.high(s, p)[next];
        }
        normalize(&mut weights);
        out[t] = rng::sample_categorical(&mut rng, &weights);
    }
    Ok(out)
}

/// How [`annotate_demos`] assigns options.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotateMode {
    Viterbi,
    PosteriorSample,
}

/// Attaches options to every demo. Demo `i` uses a seed derived from `(seed, i)`,
/// so results do not depend on processing order.
pub fn annotate_demos(
    policy: &HierPolicy,
    demos: &[Trajectory],
    mode: AnnotateMode,
    seed: u64,
) -> Result<Vec<OptionTrajectory>> {
    if demos.is_empty() {
        return Err(Error::Empty("demonstrations"));
    }
    let lp = LogPolicy::new(policy);
    demos
        .iter()
        .enumerate()
        .map(|(i, demo)| {
            check(policy, demo)?;
            let labels = match mode {
                AnnotateMode::Viterbi => decode_with(&lp, demo).map(|d| d.options),
                AnnotateMode::PosteriorSample => {
                    sample_with(&lp, demo, rng::derive_seed(seed, i as u64))
                }
            };
            let labels = labels.map_err(|e| match e {
                Error::ImpossibleTrajectory { step } => Error::ImpossibleDemo { demo: i, step },
                other => other,
            })?;
            OptionTrajectory::from_parts(
                demo.states.clone(),
                demo.actions.clone(),
                &labels,
                policy.k(),
            )
        })
        .collect()
}

/// `Σ_demos ln P(a | s)` under the policy.
pub fn demo_log_likelihood(policy: &HierPolicy, demos: &[Trajectory]) -> Result<f64> {
    let lp = LogPolicy::new(policy);
    let mut total = 0.0;
    for (i, demo) in demos.iter().enumerate() {
        check(policy, demo)?;
        let msg = messages(&lp, demo).map_err(|e| match e {
            Error::ImpossibleTrajectory { step } => Error::ImpossibleDemo { demo: i, step },
            other => other,
        })?;
        total += msg.log_evidence;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[allow(clippy::approx_constant)] // the rounded decimal is checked on purpose
    fn base_case_substitution() {
        // π_H(·|s,#) = (0.5, 0.5), π_L(a0|s0,1) = 0.2
        let high = vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5];
        let low = vec![0.5, 0.5, 0.2, 0.8];
        let p = HierPolicy::new(1, 2, 2, high, low).unwrap();
        let traj = Trajectory::new(vec![0, 0], vec![0, 1]).unwrap();
        let table = viterbi_table(&p, &traj).unwrap();
        assert!((table.alpha(0, 1) - 0.1f64.ln()).abs() < 1e-15);
        assert!((table.alpha(0, 1) + 2.302585).abs() < 1e-6);
    }

    #[test]
    fn impossible_column_is_reported() {
        let p = HierPolicy::new(1, 2, 1, vec![1.0, 1.0], vec![1.0, 0.0]).unwrap();
        let traj = Trajectory::new(vec![0, 0, 0], vec![0, 0, 1]).unwrap();
        assert_eq!(
            viterbi_decode(&p, &traj),
            Err(Error::ImpossibleTrajectory { step: 2 })
        );
        assert_eq!(
            forward_backward(&p, &traj),
            Err(Error::ImpossibleTrajectory { step: 2 })
        );
        assert_eq!(
            brute_force_decode(&p, &traj),
            Err(Error::ImpossibleTrajectory { step: 2 })
        );
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let p = HierPolicy::uniform(1, 1, 3);
        let traj = Trajectory::new(vec![0; 4], vec![0; 4]).unwrap();
        let d = viterbi_decode(&p, &traj).unwrap();
        assert_eq!(d.options, vec![0, 0, 0, 0]);
        assert_eq!(d, brute_force_decode(&p, &traj).unwrap());
    }

    #[test]
    fn impossible_demo_carries_index() {
        let p = HierPolicy::new(1, 2, 1, vec![1.0, 1.0], vec![1.0, 0.0]).unwrap();
        let good = Trajectory::new(vec![0], vec![0]).unwrap();
        let bad = Trajectory::new(vec![0, 0], vec![0, 1]).unwrap();
        let err = annotate_demos(&p, &[good, bad], AnnotateMode::Viterbi, 0).unwrap_err();
        assert_eq!(err, Error::ImpossibleDemo { demo: 1, step: 1 });
    }
}
