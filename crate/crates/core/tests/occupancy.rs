mod common;

use common::*;
use optgail_core::math::max_abs_diff;
use optgail_core::occupancy::{self, FlatOccupancy, OptionOccupancy};
use optgail_core::{FlatPolicy, HierPolicy, TabularMdp};
use proptest::prelude::*;
use rand::Rng as _;
use std::f64::consts::LN_2;

fn one_state(gamma: f64) -> TabularMdp {
    TabularMdp::new(1, 1, vec![1.0], vec![0.0], vec![1.0], gamma).unwrap()
}

#[test]
fn single_state_series() {
    let occ = occupancy::compute_occupancy(&HierPolicy::uniform(1, 1, 1), &one_state(0.9)).unwrap();
    assert!((occ.get(0, 0, 0, 1) - 1.0).abs() < 1e-12);
    assert!((occ.get(0, 0, 0, 0) - 9.0).abs() < 1e-12);
    assert!((occ.mass() - 10.0).abs() < 1e-12);
    let p = occupancy::recover_policy(&occ);
    assert_eq!(p.high(0, 1, 0), 1.0);
    assert_eq!(p.high(0, 0, 0), 1.0);
    assert_eq!(p.low(0, 0, 0), 1.0);
    assert!((occupancy::marginalize(&occ).get(0, 0) - 10.0).abs() < 1e-12);
}

#[test]
fn two_state_flip() {
    let mdp = TabularMdp::new(
        2,
        1,
        vec![0.0, 1.0, 1.0, 0.0],
        vec![0.0; 2],
        vec![1.0, 0.0],
        0.5,
    )
    .unwrap();
    let occ = occupancy::compute_occupancy(&HierPolicy::uniform(2, 1, 1), &mdp).unwrap();
    let g: f64 = 0.5;
    assert!((occ.get(0, 0, 0, 1) - 1.0).abs() < 1e-12);
    assert!((occ.get(0, 0, 0, 0) - g * g / (1.0 - g * g)).abs() < 1e-12);
    assert!((occ.get(1, 0, 0, 0) - g / (1.0 - g * g)).abs() < 1e-12);
}

#[test]
fn linear_solve_matches_series() {
    let mut r = rng(10);
    for _ in 0..50 {
        let (n_s, n_a, k) = (
            r.random_range(1..6),
            r.random_range(1..4),
            r.random_range(1..5),
        );
        let mdp = random_mdp(&mut r, n_s, n_a, 0.8);
        let p = random_policy(&mut r, n_s, n_a, k, true);
        let occ = occupancy::compute_occupancy(&p, &mdp).unwrap();
        assert!(max_abs_diff(occ.values(), &occupancy_by_series(&p, &mdp)) < 1e-10);
    }
}

#[test]
fn flow_and_mass_invariants() {
    let mut r = rng(11);
    for _ in 0..100 {
        let (n_s, n_a, k) = (
            r.random_range(1..7),
            r.random_range(1..4),
            r.random_range(1..5),
        );
        let gamma = r.random_range(0.0..0.99);
        let mdp = random_mdp(&mut r, n_s, n_a, gamma);
        let occ =
            occupancy::compute_occupancy(&random_policy(&mut r, n_s, n_a, k, true), &mdp).unwrap();
        assert!(occ.flow_residual().unwrap() < 1e-9);
        assert!((occ.mass() - 1.0 / (1.0 - gamma)).abs() < 1e-9);
        let initial: f64 = (0..n_s)
            .flat_map(|s| (0..n_a).flat_map(move |a| (0..k).map(move |o| (s, a, o))))
            .map(|(s, a, o)| occ.get(s, a, o, k))
            .sum();
        assert!((initial - 1.0).abs() < 1e-9);
    }
}

/// Rows the policy can actually reach, judged by the series oracle.
fn reachable(p: &HierPolicy, mdp: &TabularMdp) -> (Vec<bool>, Vec<bool>) {
    let (n_s, n_a, k) = (mdp.n_states(), mdp.n_actions(), p.k());
    let rho = occupancy_by_series(p, mdp);
    let mut high = vec![false; n_s * (k + 1)];
    let mut low = vec![false; n_s * k];
    for s in 0..n_s {
        for a in 0..n_a {
            for o in 0..k {
                for prev in 0..=k {
                    if rho[((s * n_a + a) * k + o) * (k + 1) + prev] > 1e-12 {
                        high[s * (k + 1) + prev] = true;
                        low[s * k + o] = true;
                    }
                }
            }
        }
    }
    (high, low)
}

#[test]
fn occupancy_determines_the_policy() {
    let mut r = rng(12);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (n_a, k) = (r.random_range(1..4), r.random_range(1..5));
        let mdp = random_mdp(&mut r, 4, n_a, 0.9);
        let p = random_policy(&mut r, 4, n_a, k, true);
        let back = occupancy::recover_policy(&occupancy::compute_occupancy(&p, &mdp).unwrap());
        let (high, low) = reachable(&p, &mdp);
        for s in 0..4 {
            for prev in (0..=k).filter(|&q| high[s * (k + 1) + q]) {
                worst = worst.max(max_abs_diff(p.high_row(s, prev), back.high_row(s, prev)));
            }
            for o in (0..k).filter(|&o| low[s * k + o]) {
                worst = worst.max(max_abs_diff(p.low_row(s, o), back.low_row(s, o)));
            }
        }
        // and the recovered policy regenerates the same measure
        let again = occupancy::compute_occupancy(&back, &mdp).unwrap();
        assert!(
            max_abs_diff(
                again.values(),
                occupancy::compute_occupancy(&p, &mdp).unwrap().values()
            ) < 1e-9
        );
    }
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn uniform_measure_gives_uniform_policy() {
    let occ = OptionOccupancy::from_raw(2, 3, 2, vec![1.0; 2 * 3 * 2 * 3], 0.9).unwrap();
    assert_eq!(
        occupancy::recover_policy(&occ),
        HierPolicy::uniform(2, 3, 2)
    );
}

#[test]
fn marginal_ignores_option_labels() {
    let mut r = rng(13);
    let mdp = random_mdp(&mut r, 3, 2, 0.9);
    let occ = occupancy::compute_occupancy(&random_policy(&mut r, 3, 2, 3, false), &mdp).unwrap();
    // swap options 0 and 2 in both option axes
    let swap = |o: usize| match o {
        0 => 2,
        2 => 0,
        x => x,
    };
    let mut permuted = vec![0.0; occ.values().len()];
    for s in 0..3 {
        for a in 0..2 {
            for o in 0..3 {
                for prev in 0..4 {
                    permuted[((s * 2 + a) * 3 + swap(o)) * 4 + swap(prev)] = occ.get(s, a, o, prev);
                }
            }
        }
    }
    let permuted = OptionOccupancy::from_raw(3, 2, 3, permuted, 0.9).unwrap();
    let (a, b) = (
        occupancy::marginalize(&occ),
        occupancy::marginalize(&permuted),
    );
    assert!(max_abs_diff(a.values(), b.values()) < 1e-12);
    assert!((a.mass() - occ.mass()).abs() < 1e-9);
}

#[test]
fn marginal_matches_flat_solve_for_memoryless_high_level() {
    let mut r = rng(14);
    for _ in 0..20 {
        let (n_s, n_a, k) = (4, 3, 3);
        let mdp = random_mdp(&mut r, n_s, n_a, 0.9);
        // π_H ignores the previous option
        let rows: Vec<Vec<f64>> = (0..n_s).map(|_| distribution(&mut r, k, false)).collect();
        let high: Vec<f64> = (0..n_s)
            .flat_map(|s| std::iter::repeat_n(rows[s].clone(), k + 1).flatten())
            .collect();
        let low: Vec<f64> = (0..n_s * k)
            .flat_map(|_| distribution(&mut r, n_a, false))
            .collect();
        let p = HierPolicy::new(n_s, n_a, k, high, low).unwrap();
        let flat: Vec<f64> = (0..n_s)
            .flat_map(|s| {
                let p = &p;
                let rows = &rows;
                (0..n_a).map(move |a| (0..k).map(|o| rows[s][o] * p.low(s, o, a)).sum::<f64>())
            })
            .collect();
        let flat = FlatPolicy::new(n_s, n_a, flat).unwrap();
        let direct = FlatOccupancy::from_policy(&flat, &mdp).unwrap();
        let marginal = occupancy::marginalize(&occupancy::compute_occupancy(&p, &mdp).unwrap());
        assert!(max_abs_diff(direct.values(), marginal.values()) < 1e-9);
    }
}

fn flat(values: &[f64], gamma: f64) -> FlatOccupancy {
    let scale = 1.0 / (1.0 - gamma);
    FlatOccupancy::from_raw(
        1,
        values.len(),
        values.iter().map(|v| v * scale).collect(),
        gamma,
    )
    .unwrap()
}

#[test]
fn js_reference_values() {
    let p = flat(&[0.5, 0.5], 0.9);
    let q = flat(&[1.0, 0.0], 0.9);
    let expected = 0.5 * (0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln())
        + 0.5 * (1.0f64 / 0.75).ln();
    assert!((occupancy::js_divergence(&p, &q).unwrap() - expected).abs() < 1e-12);
    assert!((expected - 0.215762).abs() < 1e-6);
    assert_eq!(occupancy::js_divergence(&p, &p).unwrap(), 0.0);
    let disjoint =
        occupancy::js_divergence(&flat(&[1.0, 0.0], 0.9), &flat(&[0.0, 1.0], 0.9)).unwrap();
    assert!((disjoint - LN_2).abs() < 1e-12);
}

#[test]
fn expert_split_is_self_consistent() {
    let mut r = rng(15);
    for _ in 0..30 {
        let (n_s, n_a, k) = (
            r.random_range(1..5),
            r.random_range(1..4),
            r.random_range(1..4),
        );
        let mdp = random_mdp(&mut r, n_s, n_a, 0.9);
        let p = random_policy(&mut r, n_s, n_a, k, true);
        let occ = occupancy::compute_occupancy(&p, &mdp).unwrap();
        let split =
            occupancy::expert_option_occupancy(&occupancy::marginalize(&occ), &p, &mdp).unwrap();
        assert!(max_abs_diff(split.values(), occ.values()) < 1e-9);
    }
}

#[test]
fn expert_split_preserves_mass() {
    let mut r = rng(16);
    for _ in 0..30 {
        let (n_s, n_a, k) = (
            r.random_range(1..5),
            r.random_range(1..4),
            r.random_range(1..4),
        );
        let mdp = random_mdp(&mut r, n_s, n_a, 0.9);
        let expert = occupancy::marginalize(
            &occupancy::compute_occupancy(&random_policy(&mut r, n_s, n_a, k, false), &mdp)
                .unwrap(),
        );
        let split = occupancy::expert_option_occupancy(
            &expert,
            &random_policy(&mut r, n_s, n_a, k, true),
            &mdp,
        )
        .unwrap();
        assert!((split.mass() - expert.mass()).abs() < 1e-9);
        assert!(max_abs_diff(occupancy::marginalize(&split).values(), expert.values()) < 1e-9);
    }
}

#[test]
fn single_option_split_follows_initial_and_later_steps() {
    let mut r = rng(17);
    let mdp = random_mdp(&mut r, 3, 2, 0.9);
    let p = random_policy(&mut r, 3, 2, 1, false);
    let expert = occupancy::marginalize(
        &occupancy::compute_occupancy(&random_policy(&mut r, 3, 2, 1, false), &mdp).unwrap(),
    );
    let split = occupancy::expert_option_occupancy(&expert, &p, &mdp).unwrap();
    let own = occupancy::compute_occupancy(&p, &mdp).unwrap();
    for s in 0..3 {
        for a in 0..2 {
            let total = own.get(s, a, 0, 0) + own.get(s, a, 0, 1);
            if total > 0.0 {
                assert!(
                    (split.get(s, a, 0, 1) - expert.get(s, a) * own.get(s, a, 0, 1) / total).abs()
                        < 1e-12
                );
            }
        }
    }
}

fn occupancy_strategy() -> impl Strategy<Value = (u64, usize, usize, usize)> {
    (any::<u64>(), 1usize..5, 1usize..4, 1usize..4)
}

proptest! {
    #[test]
    fn js_is_a_bounded_symmetric_divergence((seed, n_s, n_a, k) in occupancy_strategy()) {
        let mut r = rng(seed);
        let mdp = random_mdp(&mut r, n_s, n_a, 0.9);
        let p = occupancy::compute_occupancy(&random_policy(&mut r, n_s, n_a, k, true), &mdp).unwrap();
        let q = occupancy::compute_occupancy(&random_policy(&mut r, n_s, n_a, k, true), &mdp).unwrap();
        let pq = occupancy::js_divergence(&p, &q).unwrap();
        let qp = occupancy::js_divergence(&q, &p).unwrap();
        prop_assert!((pq - qp).abs() < 1e-12);
        prop_assert!((0.0..=LN_2).contains(&pq));
        prop_assert!(occupancy::js_divergence(&p, &p).unwrap().abs() < 1e-12);
        let reference = js(&normalized(p.values()), &normalized(q.values()));
        prop_assert!((pq - reference).abs() < 1e-9);
    }

    #[test]
    fn marginalizing_never_increases_divergence((seed, n_s, n_a, k) in occupancy_strategy()) {
        let mut r = rng(seed);
        let mdp = random_mdp(&mut r, n_s, n_a, 0.9);
        let p = occupancy::compute_occupancy(&random_policy(&mut r, n_s, n_a, k, true), &mdp).unwrap();
        let q = occupancy::compute_occupancy(&random_policy(&mut r, n_s, n_a, k, true), &mdp).unwrap();
        let joint = occupancy::js_divergence(&p, &q).unwrap();
        let marginal = occupancy::js_divergence(&occupancy::marginalize(&p), &occupancy::marginalize(&q)).unwrap();
        prop_assert!(joint >= marginal - 1e-12);
    }

    #[test]
    fn flow_residual_is_tiny((seed, n_s, n_a, k) in occupancy_strategy(), gamma in 0.0f64..0.99) {
        let mut r = rng(seed);
        let mdp = random_mdp(&mut r, n_s, n_a, gamma);
        let occ = occupancy::compute_occupancy(&random_policy(&mut r, n_s, n_a, k, true), &mdp).unwrap();
        prop_assert!(occ.flow_residual().unwrap() < 1e-9);
        prop_assert!((occ.mass() * (1.0 - gamma) - 1.0).abs() < 1e-9);
    }
}
