mod common;

use common::*;
use optgail_core::math::LOG_ZERO;
use optgail_core::model::{self, FullOptionModel};
use optgail_core::{occupancy, Error, HierPolicy, OptionTrajectory, TabularMdp, Trajectory};
use proptest::prelude::*;
use rand::Rng as _;

fn two_option_full(beta: f64, pick: [f64; 2]) -> FullOptionModel {
    // one state, one action
    FullOptionModel::new(1, 1, 2, vec![1.0, 1.0], vec![beta, beta], pick.to_vec()).unwrap()
}

#[test]
fn certain_termination_reduces_to_inter_option_policy() {
    let mut r = rng(1);
    let mut full = random_full(&mut r, 3, 2, 3);
    full = FullOptionModel::new(
        3,
        2,
        3,
        (0..18)
            .map(|i| full.intra(i / 6, (i / 2) % 3, i % 2))
            .collect(),
        vec![1.0; 9],
        (0..9).map(|i| full.inter(i / 3, i % 3)).collect(),
    )
    .unwrap();
    let p = model::one_step_from_full(&full);
    for s in 0..3 {
        for prev in 0..=3 {
            for o in 0..3 {
                assert!((p.high(s, prev, o) - full.inter(s, o)).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn zero_termination_keeps_the_option() {
    let p = model::one_step_from_full(&two_option_full(0.0, [0.3, 0.7]));
    assert_eq!(p.high_row(0, 0), &[1.0, 0.0]);
    assert_eq!(p.high_row(0, 1), &[0.0, 1.0]);
    assert_eq!(p.high_row(0, 2), &[0.3, 0.7]);
}

#[test]
fn half_termination_example() {
    let p = model::one_step_from_full(&two_option_full(0.5, [0.3, 0.7]));
    assert!((p.high(0, 0, 0) - 0.65).abs() < 1e-15);
    assert!((p.high(0, 0, 1) - 0.35).abs() < 1e-15);
    let back = model::full_from_one_step(&p, 1e-9).unwrap();
    assert!((back.termination(0, 0) - 0.5).abs() < 1e-15);
    assert!((back.inter(0, 0) - 0.3).abs() < 1e-15);
    assert!((back.inter(0, 1) - 0.7).abs() < 1e-15);
}

#[test]
fn never_terminating_rows_report_zero_termination() {
    // the initial-option row still pins the inter-option policy
    let p = HierPolicy::new(1, 1, 2, vec![1.0, 0.0, 0.0, 1.0, 0.4, 0.6], vec![1.0, 1.0]).unwrap();
    let full = model::full_from_one_step(&p, 1e-9).unwrap();
    assert_eq!(full.termination(0, 0), 0.0);
    assert_eq!(full.termination(1, 0), 0.0);
    assert_eq!((full.inter(0, 0), full.inter(0, 1)), (0.4, 0.6));
    assert_eq!(model::one_step_from_full(&full), p);
}

#[test]
fn non_factorizing_policy_is_rejected() {
    // from option 0 the switch goes to 1 and 2 in a ratio the initial row contradicts
    let high = vec![0.2, 0.7, 0.1, 0.1, 0.8, 0.1, 0.1, 0.1, 0.8, 0.2, 0.4, 0.4];
    let p = HierPolicy::new(1, 1, 3, high, vec![1.0; 3]).unwrap();
    assert!(matches!(
        model::full_from_one_step(&p, 1e-9),
        Err(Error::Inconsistent { state: 0, .. })
    ));
}

#[test]
fn round_trip_on_random_full_models() {
    let mut r = rng(2);
    for _ in 0..100 {
        let (n_s, n_a, k) = (
            r.random_range(1..5),
            r.random_range(1..4),
            r.random_range(1..5),
        );
        let full = random_full(&mut r, n_s, n_a, k);
        let p = model::one_step_from_full(&full);
        let back = model::one_step_from_full(&model::full_from_one_step(&p, 1e-9).unwrap());
        let err = optgail_core::math::max_abs_diff(p.high_table(), back.high_table()).max(
            optgail_core::math::max_abs_diff(p.low_table(), back.low_table()),
        );
        assert!(err < 1e-12, "round trip error {err}");
    }
}

fn line_mdp() -> TabularMdp {
    // 2 states, 2 actions, deterministic: action a moves to state a
    let t = vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
    TabularMdp::new(2, 2, t, vec![0.0; 4], vec![1.0, 0.0], 0.9).unwrap()
}

#[test]
fn certain_trajectory_has_log_prob_zero() {
    let p = HierPolicy::new(2, 2, 1, vec![1.0; 4], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    let traj = OptionTrajectory::from_parts(vec![0, 1, 0], vec![1, 0, 1], &[0, 0, 0], 1).unwrap();
    assert_eq!(
        model::trajectory_log_prob(&p, &line_mdp(), &traj).unwrap(),
        0.0
    );
    let impossible = OptionTrajectory::from_parts(vec![0, 1], vec![0, 0], &[0, 0], 1).unwrap();
    assert_eq!(
        model::trajectory_log_prob(&p, &line_mdp(), &impossible).unwrap(),
        LOG_ZERO
    );
}

#[test]
fn trajectory_log_prob_matches_factor_product() {
    let mut r = rng(3);
    for _ in 0..20 {
        let mdp = random_mdp(&mut r, 3, 2, 0.9);
        let p = random_policy(&mut r, 3, 2, 2, false);
        let traj = model::sample_trajectory(&p, &mdp, 3, r.random()).unwrap();
        let mut prob = mdp.mu0()[traj.states[0]];
        for t in 0..3 {
            let (s, a) = (traj.states[t], traj.actions[t]);
            prob *= p.high(s, traj.prev_option_at(t), traj.option_at(t))
                * p.low(s, traj.option_at(t), a);
            if t < 2 {
                prob *= mdp.p(s, a, traj.states[t + 1]);
            }
        }
        let lp = model::trajectory_log_prob(&p, &mdp, &traj).unwrap();
        assert!((lp - prob.ln()).abs() < 1e-12);
    }
}

#[test]
fn single_option_marginal_is_the_joint() {
    let mut r = rng(4);
    let mdp = random_mdp(&mut r, 3, 2, 0.9);
    let p = random_policy(&mut r, 3, 2, 1, false);
    let traj = model::sample_trajectory(&p, &mdp, 5, 9).unwrap();
    let joint = model::trajectory_log_prob(&p, &mdp, &traj).unwrap();
    let marginal = model::marginal_trajectory_log_prob(&p, &mdp, &traj.trajectory()).unwrap();
    assert!((joint - marginal).abs() < 1e-12);
}

fn all_trajectories(n_s: usize, n_a: usize, len: usize) -> Vec<Trajectory> {
    let mut out = Vec::new();
    for states in all_sequences(n_s, len) {
        for actions in all_sequences(n_a, len) {
            out.push(Trajectory::new(states.clone(), actions).unwrap());
        }
    }
    out
}

#[test]
fn marginal_probabilities_sum_to_one() {
    let mut r = rng(5);
    let mdp = random_mdp(&mut r, 3, 2, 0.9);
    let p = random_policy(&mut r, 3, 2, 2, true);
    for len in [2, 3] {
        let total: f64 = all_trajectories(3, 2, len)
            .iter()
            .map(|t| model::marginal_trajectory_log_prob(&p, &mdp, t).unwrap())
            .filter(|&lp| lp > LOG_ZERO)
            .map(f64::exp)
            .sum();
        assert!((total - 1.0).abs() < 1e-10, "len {len}: {total}");
    }
}

#[test]
fn one_step_model_reproduces_full_model_marginals() {
    let mut r = rng(6);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let mdp = random_mdp(&mut r, 3, 2, 0.9);
        let k = r.random_range(1..4);
        let full = random_full(&mut r, 3, 2, k);
        let one = model::one_step_from_full(&full);
        for len in 1..=4 {
            for _ in 0..10 {
                let traj = model::sample_trajectory(&one, &mdp, len, r.random())
                    .unwrap()
                    .trajectory();
                let a = full
                    .marginal_trajectory_log_prob(&mdp, &traj)
                    .unwrap()
                    .exp();
                let b = model::marginal_trajectory_log_prob(&one, &mdp, &traj)
                    .unwrap()
                    .exp();
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(worst < 1e-10, "max probability gap {worst}");
}

#[test]
fn enumeration_guard() {
    let p = HierPolicy::uniform(1, 1, 4);
    let mdp = TabularMdp::new(1, 1, vec![1.0], vec![0.0], vec![1.0], 0.5).unwrap();
    let traj = Trajectory::new(vec![0; 12], vec![0; 12]).unwrap();
    assert!(matches!(
        model::marginal_trajectory_log_prob(&p, &mdp, &traj),
        Err(Error::EnumerationTooLarge { .. })
    ));
}

#[test]
fn deterministic_rollout_ignores_seed() {
    let p = HierPolicy::new(2, 2, 1, vec![1.0; 4], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    let a = model::sample_trajectory(&p, &line_mdp(), 6, 1).unwrap();
    let b = model::sample_trajectory(&p, &line_mdp(), 6, 2).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.states, vec![0, 1, 0, 1, 0, 1]);
}

#[test]
fn same_seed_same_rollout() {
    let mut r = rng(7);
    let mdp = random_mdp(&mut r, 4, 3, 0.9);
    let p = random_policy(&mut r, 4, 3, 3, false);
    assert_eq!(
        model::sample_trajectory(&p, &mdp, 50, 11).unwrap(),
        model::sample_trajectory(&p, &mdp, 50, 11).unwrap()
    );
}

#[test]
fn sampled_visits_match_occupancy() {
    // one draw per episode at a geometric time gives independent samples of the normalized state occupancy
    let mut r = rng(8);
    let gamma = 0.7;
    let mdp = random_mdp(&mut r, 4, 2, gamma);
    let p = random_policy(&mut r, 4, 2, 2, false);
    let exact =
        occupancy::marginalize(&occupancy::compute_occupancy(&p, &mdp).unwrap()).state_marginal();
    let n = 100_000;
    let mut counts = [0usize; 4];
    for i in 0..n {
        let mut t = 0;
        while r.random::<f64>() < gamma {
            t += 1;
        }
        let traj = model::sample_trajectory(&p, &mdp, t + 1, i as u64).unwrap();
        counts[traj.states[t]] += 1;
    }
    for s in 0..4 {
        let q = exact[s] * (1.0 - gamma);
        let se = (q * (1.0 - q) / n as f64).sqrt();
        let freq = counts[s] as f64 / n as f64;
        assert!(
            (freq - q).abs() < 3.0 * se + 1e-12,
            "state {s}: {freq} vs {q}"
        );
    }
}

proptest! {
    #[test]
    fn one_step_rows_are_distributions(seed in any::<u64>(), n_s in 1usize..5, n_a in 1usize..4, k in 1usize..5) {
        let full = random_full(&mut rng(seed), n_s, n_a, k);
        let p = model::one_step_from_full(&full);
        for row in p.high_table().chunks(k) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn consistent_policies_survive_the_round_trip(seed in any::<u64>(), n_s in 1usize..4, k in 1usize..5) {
        let p = model::one_step_from_full(&random_full(&mut rng(seed), n_s, 2, k));
        let back = model::one_step_from_full(&model::full_from_one_step(&p, 1e-9).unwrap());
        prop_assert!(optgail_core::math::max_abs_diff(p.high_table(), back.high_table()) < 1e-12);
    }
}
