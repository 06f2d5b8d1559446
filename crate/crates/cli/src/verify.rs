//! The invariant suite behind `optgail verify`.
//!
//! Every check draws its own random instances from the master seed and compares
//! the library against a reference computed here by a different route: power
//! series instead of linear solves, explicit enumeration instead of dynamic
//! programming, definitions instead of closed forms.

use std::fmt::Write as _;

use optgail_core::adversarial::{self, Discriminator, Variant, WeightedCells};
use optgail_core::algorithms::{self, EStep, Method, TrainConfig};
use optgail_core::envs::{self, EnvParams};
use optgail_core::math::LOG_ZERO;
use optgail_core::rng::{self, Rng};
use optgail_core::{
    hrl, inference, model, occupancy, FullOptionModel, HierPolicy, OptionOccupancy, TabularMdp,
    Trajectory,
};
use rand::Rng as _;

/// Outcome of one property check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Instances examined and the worst deviation seen.
    pub detail: String,
    pub counterexample: Option<String>,
}

impl Check {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            passed: true,
            detail: String::new(),
            counterexample: None,
        }
    }

    /// Records the first failure only.
    fn fail(&mut self, what: String) {
        if self.passed {
            self.passed = false;
            self.counterexample = Some(what);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Random instances per check; `None` uses each check's default size.
    pub instances: Option<usize>,
    /// Negative control: flip the sign of the switching term in the one-step conversion.
    pub inject_bug: bool,
}

pub fn run_suite(opts: SuiteOptions) -> Vec<Check> {
    let seed = opts.seed;
    let n = |default: usize| opts.instances.unwrap_or(default);
    vec![
        bijection(seed, n(200), opts.inject_bug),
        bellman_flow(seed, n(200)),
        viterbi_enumeration(seed, n(200)),
        forward_backward_enumeration(seed, n(200)),
        one_step_equivalence(seed, n(50)),
        data_processing(seed, n(100)),
        q_monotonicity(seed),
        high_mdp_equivalence(seed, n(50)),
        hbc_likelihood(seed, 50),
        gan_identity(seed, n(10)),
    ]
}

pub fn render_table(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for c in checks {
        writeln!(
            out,
            "{:<width$}  {}  {}",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.detail
        )
        .unwrap();
        if let Some(ce) = &c.counterexample {
            writeln!(out, "{:<width$}        counterexample: {ce}", "").unwrap();
        }
    }
    out
}

// random instances

fn stream(seed: u64, check: u64) -> Rng {
    rng::seeded(rng::derive_seed(seed, check))
}

fn distribution(r: &mut Rng, n: usize, sparse: bool) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            if sparse && r.random::<f64>() < 0.3 {
                0.0
            } else {
                r.random::<f64>() + 1e-3
            }
        })
        .collect();
    if v.iter().all(|&x| x == 0.0) {
        v[r.random_range(0..n)] = 1.0;
    }
    let z: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= z);
    v
}

pub fn random_mdp(r: &mut Rng, n_s: usize, n_a: usize, gamma: f64) -> TabularMdp {
    let transition = (0..n_s * n_a)
        .flat_map(|_| distribution(r, n_s, true))
        .collect();
    let reward = (0..n_s * n_a).map(|_| r.random::<f64>()).collect();
    TabularMdp::new(
        n_s,
        n_a,
        transition,
        reward,
        distribution(r, n_s, true),
        gamma,
    )
    .expect("valid random MDP")
}

pub fn random_policy(r: &mut Rng, n_s: usize, n_a: usize, k: usize, sparse: bool) -> HierPolicy {
    let high = (0..n_s * (k + 1))
        .flat_map(|_| distribution(r, k, sparse))
        .collect();
    let low = (0..n_s * k)
        .flat_map(|_| distribution(r, n_a, sparse))
        .collect();
    HierPolicy::new(n_s, n_a, k, high, low).expect("valid random policy")
}

/// Sparse or dense with equal odds.
fn coin_policy(r: &mut Rng, n_s: usize, n_a: usize, k: usize) -> HierPolicy {
    let sparse = r.random::<bool>();
    random_policy(r, n_s, n_a, k, sparse)
}

fn random_full(r: &mut Rng, n_s: usize, n_a: usize, k: usize) -> FullOptionModel {
    let intra = (0..k * n_s)
        .flat_map(|_| distribution(r, n_a, false))
        .collect();
    let termination = (0..k * n_s).map(|_| r.random::<f64>()).collect();
    let inter = (0..n_s).flat_map(|_| distribution(r, k, false)).collect();
    FullOptionModel::new(n_s, n_a, k, intra, termination, inter).expect("valid random option model")
}

fn random_trajectory(r: &mut Rng, n_s: usize, n_a: usize, len: usize) -> Trajectory {
    let states = (0..len).map(|_| r.random_range(0..n_s)).collect();
    let actions = (0..len).map(|_| r.random_range(0..n_a)).collect();
    Trajectory::new(states, actions).expect("nonempty")
}

// references

/// One-step tables from a full option model, written out from the definition.
/// With `flip` the switching term enters with the wrong sign.
fn one_step_tables(full: &FullOptionModel, flip: bool) -> (Vec<f64>, Vec<f64>) {
    let (n_s, n_a, k) = (full.n_states(), full.n_actions(), full.k());
    let sign = if flip { -1.0 } else { 1.0 };
    let mut high = Vec::with_capacity(n_s * (k + 1) * k);
    for s in 0..n_s {
        for prev in 0..=k {
            for o in 0..k {
                high.push(if prev == k {
                    full.inter(s, o)
                } else {
                    let beta = full.termination(prev, s);
                    (1.0 - beta) * f64::from(u8::from(o == prev)) + sign * beta * full.inter(s, o)
                });
            }
        }
    }
    let low = (0..n_s)
        .flat_map(|s| (0..k).flat_map(move |o| (0..n_a).map(move |a| full.intra(o, s, a))))
        .collect();
    (high, low)
}

/// `ρ(s, a, o, o')` by summing the discounted forward distribution until the tail is negligible.
pub fn occupancy_series(policy: &HierPolicy, mdp: &TabularMdp) -> Vec<f64> {
    let (n_s, n_a, k) = (mdp.n_states(), mdp.n_actions(), policy.k());
    let mut rho = vec![0.0; n_s * n_a * k * (k + 1)];
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

/// Largest violation of the flow equation on the `(s, o_prev)` chain, written from its definition.
fn flow_residual(occ: &OptionOccupancy, mdp: &TabularMdp) -> f64 {
    let (n_s, n_a, k) = (occ.n_states(), occ.n_actions(), occ.k());
    let mut worst: f64 = 0.0;
    for s1 in 0..n_s {
        for prev in 0..=k {
            let outflow: f64 = (0..n_a)
                .flat_map(|a| (0..k).map(move |o| (a, o)))
                .map(|(a, o)| occ.get(s1, a, o, prev))
                .sum();
            let mut inflow = if prev == k { mdp.mu0()[s1] } else { 0.0 };
            if prev < k {
                for s in 0..n_s {
                    for a in 0..n_a {
                        let p = mdp.p(s, a, s1);
                        if p > 0.0 {
                            inflow += mdp.gamma()
                                * p
                                * (0..=k).map(|q| occ.get(s, a, prev, q)).sum::<f64>();
                        }
                    }
                }
            }
            worst = worst.max((outflow - inflow).abs());
        }
    }
    worst
}

fn option_log_prob(p: &HierPolicy, traj: &Trajectory, seq: &[usize]) -> f64 {
    let mut prev = p.k();
    let mut total = 0.0;
    for ((&s, &a), &o) in traj.states.iter().zip(&traj.actions).zip(seq) {
        total += p.high(s, prev, o).ln() + p.low(s, o, a).ln();
        prev = o;
    }
    total
}

fn for_each_sequence(k: usize, len: usize, mut f: impl FnMut(&[usize])) {
    let mut seq = vec![0; len];
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

fn js_definition(p: &[f64], q: &[f64]) -> f64 {
    let zp: f64 = p.iter().sum();
    let zq: f64 = q.iter().sum();
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let (a, b) = (a / zp, b / zq);
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).ln();
        }
    }
    total
}

// checks

pub fn bijection(seed: u64, n: usize, inject_bug: bool) -> Check {
    let mut c = Check::new("bijection");
    let mut r = stream(seed, 1);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let (n_s, n_a, k) = (
            r.random_range(1..=6),
            r.random_range(1..=3),
            r.random_range(1..=4),
        );
        let gamma = r.random_range(0.5..0.95);
        let mdp = random_mdp(&mut r, n_s, n_a, gamma);
        // odd instances go through the option-model conversion
        let policy = if i % 2 == 0 {
            coin_policy(&mut r, n_s, n_a, k)
        } else {
            let full = random_full(&mut r, n_s, n_a, k);
            let (high, low) = one_step_tables(&full, inject_bug);
            match HierPolicy::new(n_s, n_a, k, high.clone(), low) {
                Ok(p) => p,
                Err(e) => {
                    let mut what = format!(
                        "instance {i} (|S|={n_s} |A|={n_a} K={k}): converted policy rejected ({e})"
                    );
                    if let Some(b) = high.chunks(k).position(|row| {
                        (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 || row.iter().any(|&x| x < 0.0)
                    }) {
                        let (s, prev) = (b / (k + 1), b % (k + 1));
                        write!(
                            what,
                            "; π_H(·|s={s}, prev={prev}) = {:?}",
                            &high[b * k..(b + 1) * k]
                        )
                        .unwrap();
                    }
                    c.fail(what);
                    continue;
                }
            }
        };
        let occ = match occupancy::compute_occupancy(&policy, &mdp) {
            Ok(o) => o,
            Err(e) => {
                c.fail(format!("instance {i}: occupancy solve failed: {e}"));
                continue;
            }
        };
        let back = occupancy::recover_policy(&occ);
        let series = occupancy_series(&policy, &mdp);
        for s in 0..n_s {
            for prev in 0..=k {
                let visited: f64 = (0..n_a)
                    .flat_map(|a| (0..k).map(move |o| (a, o)))
                    .map(|(a, o)| series[((s * n_a + a) * k + o) * (k + 1) + prev])
                    .sum();
                if visited < 1e-12 {
                    continue;
                }
                for o in 0..k {
                    let d = (back.high(s, prev, o) - policy.high(s, prev, o)).abs();
                    worst = worst.max(d);
                    if d >= 1e-9 {
                        c.fail(format!(
                            "instance {i}: π_H({o}|{s},{prev}) = {} recovered as {}",
                            policy.high(s, prev, o),
                            back.high(s, prev, o)
                        ));
                    }
                    let visited_o: f64 = (0..=k)
                        .map(|q| {
                            (0..n_a)
                                .map(|a| series[((s * n_a + a) * k + o) * (k + 1) + q])
                                .sum::<f64>()
                        })
                        .sum();
                    if visited_o < 1e-12 {
                        continue;
                    }
                    for a in 0..n_a {
                        let d = (back.low(s, o, a) - policy.low(s, o, a)).abs();
                        worst = worst.max(d);
                        if d >= 1e-9 {
                            c.fail(format!(
                                "instance {i}: π_L({a}|{s},{o}) = {} recovered as {}",
                                policy.low(s, o, a),
                                back.low(s, o, a)
                            ));
                        }
                    }
                }
            }
        }
    }
    c.detail = format!("{n} instances, max |Δπ| = {worst:.1e}");
    c
}

pub fn bellman_flow(seed: u64, n: usize) -> Check {
    let mut c = Check::new("bellman-flow");
    let mut r = stream(seed, 2);
    let (mut worst_flow, mut worst_mass, mut worst_series): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (n_s, n_a, k) = (
            r.random_range(1..=6),
            r.random_range(1..=3),
            r.random_range(1..=4),
        );
        let gamma = r.random_range(0.5..0.95);
        let mdp = random_mdp(&mut r, n_s, n_a, gamma);
        let policy = coin_policy(&mut r, n_s, n_a, k);
        let occ = occupancy::compute_occupancy(&policy, &mdp).expect("solvable");
        let flow = flow_residual(&occ, &mdp);
        let mass = (occ.values().iter().sum::<f64>() - 1.0 / (1.0 - gamma)).abs();
        let series =
            optgail_core::math::max_abs_diff(occ.values(), &occupancy_series(&policy, &mdp));
        worst_flow = worst_flow.max(flow);
        worst_mass = worst_mass.max(mass);
        worst_series = worst_series.max(series);
        if flow >= 1e-9 || mass >= 1e-9 || series >= 1e-9 {
            c.fail(format!("instance {i}: flow residual {flow:.1e}, mass error {mass:.1e}, series gap {series:.1e}"));
        }
    }
    c.detail = format!("{n} instances, residual {worst_flow:.1e}, mass {worst_mass:.1e}, series {worst_series:.1e}");
    c
}

pub fn viterbi_enumeration(seed: u64, n: usize) -> Check {
    let mut c = Check::new("viterbi-enumeration");
    let mut r = stream(seed, 3);
    let mut worst: f64 = 0.0;
    let mut ties = 0;
    for i in 0..n {
        let (n_s, n_a, k, len) = (
            r.random_range(1..=4),
            r.random_range(1..=3),
            r.random_range(2..=3),
            r.random_range(1..=8),
        );
        let policy = coin_policy(&mut r, n_s, n_a, k);
        let traj = random_trajectory(&mut r, n_s, n_a, len);
        let mut best = (Vec::new(), f64::NEG_INFINITY);
        for_each_sequence(k, len, |seq| {
            let lp = option_log_prob(&policy, &traj, seq);
            if lp > best.1 {
                best = (seq.to_vec(), lp);
            }
        });
        match inference::viterbi_decode(&policy, &traj) {
            Ok(d) => {
                let gap = (d.log_prob - best.1).abs();
                worst = worst.max(gap);
                // with tied optima any maximizer is a correct decode
                let tied = d.options != best.0
                    && (option_log_prob(&policy, &traj, &d.options) - best.1).abs() <= 1e-12;
                ties += usize::from(tied);
                if (d.options != best.0 && !tied) || gap > 1e-12 {
                    c.fail(format!(
                        "instance {i}: decoded {:?} ({}) vs enumeration {:?} ({})",
                        d.options, d.log_prob, best.0, best.1
                    ));
                }
            }
            Err(_) if best.1 == f64::NEG_INFINITY => {}
            Err(e) => c.fail(format!(
                "instance {i}: decode failed ({e}) but enumeration found {:?}",
                best.0
            )),
        }
    }
    c.detail = format!("{n} instances ({ties} exact ties), max |Δ log p| = {worst:.1e}");
    c
}

pub fn forward_backward_enumeration(seed: u64, n: usize) -> Check {
    let mut c = Check::new("forward-backward");
    let mut r = stream(seed, 4);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let (n_s, n_a, k, len) = (
            r.random_range(1..=4),
            r.random_range(1..=3),
            r.random_range(2..=3),
            r.random_range(1..=8),
        );
        let policy = random_policy(&mut r, n_s, n_a, k, false);
        let traj = random_trajectory(&mut r, n_s, n_a, len);
        let mut pair = vec![0.0; len * k * (k + 1)];
        let mut z = 0.0;
        for_each_sequence(k, len, |seq| {
            let w = option_log_prob(&policy, &traj, seq).exp();
            z += w;
            for t in 0..len {
                let prev = if t == 0 { k } else { seq[t - 1] };
                pair[(t * k + seq[t]) * (k + 1) + prev] += w;
            }
        });
        let post = inference::forward_backward(&policy, &traj).expect("full support");
        let viterbi = inference::viterbi_decode(&policy, &traj).expect("full support");
        for t in 0..len {
            for o in 0..k {
                for prev in 0..=k {
                    let d = (post.pair(t, o, prev) - pair[(t * k + o) * (k + 1) + prev] / z).abs();
                    worst = worst.max(d);
                    if d >= 1e-10 {
                        c.fail(format!(
                            "instance {i}: pair marginal at t={t} o={o} prev={prev} off by {d:.1e}"
                        ));
                    }
                }
            }
        }
        if (post.log_evidence - z.ln()).abs() >= 1e-10 {
            c.fail(format!(
                "instance {i}: log evidence {} vs {}",
                post.log_evidence,
                z.ln()
            ));
        }
        if viterbi.log_prob > post.log_evidence + 1e-12 {
            c.fail(format!(
                "instance {i}: Viterbi log-prob {} exceeds evidence {}",
                viterbi.log_prob, post.log_evidence
            ));
        }
    }
    c.detail = format!("{n} instances, max |Δ pair| = {worst:.1e}");
    c
}

pub fn one_step_equivalence(seed: u64, n: usize) -> Check {
    let mut c = Check::new("one-step-equivalence");
    let mut r = stream(seed, 5);
    let mut worst: f64 = 0.0;
    let (n_s, n_a, len) = (3, 2, 4);
    for i in 0..n {
        let k = r.random_range(1..=3);
        let mdp = random_mdp(&mut r, n_s, n_a, 0.9);
        let full = random_full(&mut r, n_s, n_a, k);
        let one_step = model::one_step_from_full(&full);
        let mut total = 0.0;
        let pairs = n_s * n_a;
        for code in 0..pairs.pow(len as u32) {
            let mut x = code;
            let (mut states, mut actions) = (Vec::new(), Vec::new());
            for _ in 0..len {
                states.push((x % pairs) / n_a);
                actions.push(x % n_a);
                x /= pairs;
            }
            let traj = Trajectory::new(states, actions).unwrap();
            let reference = full
                .marginal_trajectory_log_prob(&mdp, &traj)
                .expect("small enumeration");
            let converted =
                model::marginal_trajectory_log_prob(&one_step, &mdp, &traj).expect("valid");
            let to_p = |lp: f64| if lp <= LOG_ZERO / 2.0 { 0.0 } else { lp.exp() };
            let d = (to_p(reference) - to_p(converted)).abs();
            total += to_p(converted);
            worst = worst.max(d);
            if d >= 1e-10 {
                c.fail(format!(
                    "instance {i}: trajectory {:?}/{:?}: {} vs {}",
                    traj.states,
                    traj.actions,
                    to_p(reference),
                    to_p(converted)
                ));
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            c.fail(format!("instance {i}: probabilities sum to {total}"));
        }
    }
    c.detail = format!("{n} models, T=3, max |Δp| = {worst:.1e}");
    c
}

pub fn data_processing(seed: u64, n: usize) -> Check {
    let mut c = Check::new("dpi");
    let mut r = stream(seed, 6);
    let mut tightest = f64::INFINITY;
    for i in 0..n {
        let (n_s, n_a, k) = (
            r.random_range(1..=5),
            r.random_range(1..=3),
            r.random_range(1..=4),
        );
        let mdp = random_mdp(&mut r, n_s, n_a, 0.9);
        let p = coin_policy(&mut r, n_s, n_a, k);
        let q = coin_policy(&mut r, n_s, n_a, k);
        let (occ_p, occ_q) = (
            occupancy::compute_occupancy(&p, &mdp).unwrap(),
            occupancy::compute_occupancy(&q, &mdp).unwrap(),
        );
        let expert = occupancy::marginalize(&occ_q);
        // q annotates the expert occupancy, which recovers q's joint measure
        let (joint, marginal) =
            algorithms::compute_q_with_annotator(&p, &q, &expert, &mdp).unwrap();
        tightest = tightest.min(joint - marginal);
        if joint < marginal - 1e-12 {
            c.fail(format!(
                "instance {i}: q_joint {joint} < q_marginal {marginal}"
            ));
        }
        let joint_reference =
            js_definition(&occupancy_series(&p, &mdp), &occupancy_series(&q, &mdp));
        let reference = js_definition(occupancy::marginalize(&occ_p).values(), expert.values());
        if (reference - marginal).abs() > 1e-10 || (joint_reference - joint).abs() > 1e-10 {
            c.fail(format!("instance {i}: (q_joint, q_marginal) = ({joint}, {marginal}) vs definition ({joint_reference}, {reference})"));
        }
    }
    c.detail = format!("{n} pairs, min(q_joint - q_marginal) = {tightest:.1e}");
    c
}

/// Q trace of posterior-weighted training on the 6-cell corridor with two options.
pub fn q_trace(seed: u64, iterations: usize) -> (Vec<f64>, Vec<f64>) {
    let spec = envs::build_env(
        "corridor-switch",
        EnvParams {
            size: Some(6),
            ..EnvParams::default()
        },
    )
    .expect("builtin env");
    let (demos, _) = envs::generate_demos(&spec, 1000, seed).expect("budget covers one episode");
    let cfg = TrainConfig {
        method: Method::OptionGail,
        k: 2,
        iterations,
        e_step: EStep::Posterior,
        seed,
        ..TrainConfig::default()
    };
    let (_, report) = algorithms::train(&cfg, &demos, &spec.mdp, None).expect("training runs");
    (
        report.records.iter().map(|r| r.q_joint).collect(),
        report.records.iter().map(|r| r.q_marginal).collect(),
    )
}

pub fn q_monotonicity(seed: u64) -> Check {
    let mut c = Check::new("q-monotonicity");
    let (q, m) = q_trace(seed, 30);
    let rise = |v: &[f64]| {
        v.windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    };
    for (name, v) in [("q_joint", &q), ("q_marginal", &m)] {
        if let Some(i) = v.windows(2).position(|w| w[1] > w[0] + 1e-9) {
            c.fail(format!(
                "{name} rose at iteration {}: {} -> {}",
                i + 1,
                v[i],
                v[i + 1]
            ));
        }
    }
    c.detail = format!(
        "30 iterations, Q {:.2e} -> {:.2e}, largest step {:.1e}",
        q[0],
        q[30],
        rise(&q)
    );
    c
}

pub fn high_mdp_equivalence(seed: u64, n: usize) -> Check {
    let mut c = Check::new("high-mdp-equivalence");
    let mut r = stream(seed, 8);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let (n_s, n_a, k) = (
            r.random_range(1..=5),
            r.random_range(1..=3),
            r.random_range(1..=3),
        );
        let gamma = r.random_range(0.5..0.95);
        let mdp = random_mdp(&mut r, n_s, n_a, gamma);
        let policy = coin_policy(&mut r, n_s, n_a, k);
        let mut d = Discriminator::new(n_s, n_a, k, Variant::Full);
        for s in 0..n_s {
            for a in 0..n_a {
                for o in 0..k {
                    for prev in 0..=k {
                        d.set_logit(s, a, o, prev, r.random_range(-4.0..4.0));
                    }
                }
            }
        }
        let high = hrl::build_high_mdp(&policy, &mdp, &d).unwrap();
        let value = high.expected_value(policy.high_table()).unwrap();
        let direct: f64 = occupancy_series(&policy, &mdp)
            .iter()
            .zip(d.cost_table())
            .map(|(p, c)| -p * c)
            .sum();
        let gap = (value - direct).abs();
        worst = worst.max(gap);
        if gap >= 1e-9 {
            c.fail(format!(
                "instance {i}: high-MDP value {value} vs joint expectation {direct}"
            ));
        }
    }
    c.detail = format!("{n} instances, max gap {worst:.1e}");
    c
}

pub fn hbc_likelihood(seed: u64, iterations: usize) -> Check {
    let mut c = Check::new("hbc-em");
    let mut r = stream(seed, 9);
    let mdp = random_mdp(&mut r, 4, 3, 0.9);
    let generator = random_policy(&mut r, 4, 3, 2, false);
    let demos: Vec<Trajectory> = (0..4)
        .map(|i| {
            model::sample_trajectory(&generator, &mdp, 20, rng::derive_seed(seed, i))
                .unwrap()
                .trajectory()
        })
        .collect();
    let init = HierPolicy::noisy_uniform(4, 3, 3, 0.5, seed);
    let cfg = TrainConfig {
        method: Method::Hbc,
        iterations,
        k: 3,
        gamma: 0.9,
        ..TrainConfig::default()
    };
    let (_, report) = algorithms::train_hbc(&cfg, &demos, &mdp, &init, None).unwrap();
    let ll: Vec<f64> = report.records.iter().map(|x| x.demo_loglik).collect();
    if let Some(i) = ll.windows(2).position(|w| w[1] < w[0] - 1e-9) {
        c.fail(format!(
            "log-likelihood fell at iteration {}: {} -> {}",
            i + 1,
            ll[i],
            ll[i + 1]
        ));
    }
    c.detail = format!(
        "{iterations} iterations, log-likelihood {:.3} -> {:.3}",
        ll[0], ll[iterations]
    );
    c
}

fn weighted(occ: &OptionOccupancy) -> WeightedCells {
    WeightedCells::from_occupancy(occ)
}

/// Trains a discriminator by full-batch gradient ascent until the objective stops moving.
pub fn converged_objective(
    demo: &WeightedCells,
    agent: &WeightedCells,
    n_s: usize,
    n_a: usize,
    k: usize,
) -> f64 {
    let mut d = Discriminator::new(n_s, n_a, k, Variant::Full);
    let heaviest = agent
        .cells
        .iter()
        .chain(&demo.cells)
        .map(|x| x.1)
        .fold(0.0, f64::max);
    d.learning_rate = 1.0 / heaviest;
    let batch = agent.len().max(demo.len());
    let mut last = f64::NEG_INFINITY;
    for _ in 0..200_000 {
        let obj = adversarial::update_discriminator(&mut d, &demo.cells, &agent.cells, batch)
            .expect("nonempty")[0];
        if (obj - last).abs() < 1e-13 {
            break;
        }
        last = obj;
    }
    adversarial::discriminator_objective(&d, demo, agent)
}

pub fn gan_identity(seed: u64, n: usize) -> Check {
    let mut c = Check::new("gan-identity");
    let mut r = stream(seed, 10);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let (n_s, n_a, k) = (
            r.random_range(1..=3),
            r.random_range(1..=2),
            r.random_range(1..=2),
        );
        let mdp = random_mdp(&mut r, n_s, n_a, 0.8);
        let agent_occ =
            occupancy::compute_occupancy(&random_policy(&mut r, n_s, n_a, k, false), &mdp).unwrap();
        let demo_occ =
            occupancy::compute_occupancy(&random_policy(&mut r, n_s, n_a, k, false), &mdp).unwrap();
        let objective =
            converged_objective(&weighted(&demo_occ), &weighted(&agent_occ), n_s, n_a, k);
        let js = js_definition(agent_occ.values(), demo_occ.values());
        let gap = (objective + 2.0 * std::f64::consts::LN_2 - 2.0 * js).abs();
        worst = worst.max(gap);
        if gap >= 1e-3 {
            c.fail(format!("instance {i}: objective {objective}, JS {js}"));
        }
    }
    c.detail = format!("{n} instances, max gap {worst:.1e}");
    c
}
