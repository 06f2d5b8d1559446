use std::collections::VecDeque;

use optgail_core::envs::{
    build_env, default_horizon, generate_demos, EnvParams, EnvSpec, ENV_NAMES,
};
use optgail_core::hrl::hier_return;
use optgail_core::inference::viterbi_decode;
use optgail_core::occupancy::{self, compute_occupancy};
use optgail_core::{Error, TabularMdp};

/// Plain value iteration run far past convergence.
fn optimum(mdp: &TabularMdp) -> f64 {
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let mut v = vec![0.0; n_s];
    for _ in 0..20_000 {
        v = (0..n_s)
            .map(|s| {
                (0..n_a)
                    .map(|a| {
                        mdp.reward(s, a)
                            + mdp.gamma() * (0..n_s).map(|t| mdp.p(s, a, t) * v[t]).sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
    }
    (0..n_s).map(|s| mdp.mu0()[s] * v[s]).sum()
}

/// States reachable from the start distribution along edges the expert actually uses.
fn reachable(spec: &EnvSpec) -> Vec<bool> {
    let (mdp, policy) = (&spec.mdp, spec.expert_policy());
    let (n_s, n_a, k) = (mdp.n_states(), mdp.n_actions(), policy.k());
    let mut seen = vec![false; n_s];
    let mut queue: VecDeque<usize> = (0..n_s).filter(|&s| mdp.mu0()[s] > 0.0).collect();
    queue.iter().for_each(|&s| seen[s] = true);
    while let Some(s) = queue.pop_front() {
        for a in 0..n_a {
            let used = (0..k).any(|o| {
                (0..=k).any(|prev| policy.high(s, prev, o) > 0.0) && policy.low(s, o, a) > 0.0
            });
            if !used {
                continue;
            }
            for (t, was_seen) in seen.iter_mut().enumerate() {
                if mdp.p(s, a, t) > 0.0 && !*was_seen {
                    *was_seen = true;
                    queue.push_back(t);
                }
            }
        }
    }
    seen
}

fn all_envs() -> Vec<EnvSpec> {
    let mut specs: Vec<EnvSpec> = ENV_NAMES
        .iter()
        .map(|n| build_env(n, EnvParams::default()).unwrap())
        .collect();
    for size in [4, 6, 12] {
        specs.push(
            build_env(
                "corridor-switch",
                EnvParams {
                    size: Some(size),
                    ..EnvParams::default()
                },
            )
            .unwrap(),
        );
    }
    specs.push(
        build_env(
            "lock-key",
            EnvParams {
                size: Some(3),
                slip: 0.0,
                ..EnvParams::default()
            },
        )
        .unwrap(),
    );
    specs
}

#[test]
fn experts_are_near_optimal() {
    for spec in all_envs() {
        let opt = optimum(&spec.mdp);
        let expert = hier_return(&spec.expert_policy(), &spec.mdp).unwrap();
        assert!(
            expert >= 0.95 * opt,
            "{}: expert {expert} vs optimum {opt}",
            spec.name
        );
        assert!((spec.optimal_return() - opt).abs() < 1e-8);
    }
}

#[test]
fn dimensions_and_option_counts() {
    let corridor = build_env("corridor-switch", EnvParams::default()).unwrap();
    assert_eq!(
        (
            corridor.mdp.n_states(),
            corridor.mdp.n_actions(),
            corridor.true_options
        ),
        (8, 3, 2)
    );
    let rooms = build_env("four-rooms", EnvParams::default()).unwrap();
    assert_eq!(rooms.mdp.n_states(), 104);
    assert_eq!(rooms.true_options, 3);
    assert_eq!(rooms.expert.k(), 4);
    let lock = build_env(
        "lock-key",
        EnvParams {
            size: Some(5),
            ..EnvParams::default()
        },
    )
    .unwrap();
    assert_eq!(
        (lock.mdp.n_states(), lock.mdp.n_actions(), lock.true_options),
        (2 * 25 + 1, 5, 2)
    );
    for spec in all_envs() {
        assert_eq!(spec.horizon, default_horizon(0.99));
        let occ = compute_occupancy(&spec.expert_policy(), &spec.mdp).unwrap();
        let used = occ
            .option_mass_fractions()
            .iter()
            .filter(|&&m| m > 0.01)
            .count();
        assert_eq!(used, spec.true_options, "{}", spec.name);
    }
}

#[test]
fn horizon_rule() {
    assert_eq!(default_horizon(0.99), 459);
    assert!(0.99f64.powi(459) <= 0.01 && 0.99f64.powi(458) > 0.01);
}

#[test]
fn expert_support_is_the_reachable_set() {
    for spec in all_envs() {
        let flat =
            occupancy::marginalize(&compute_occupancy(&spec.expert_policy(), &spec.mdp).unwrap());
        let visited: Vec<bool> = flat.state_marginal().iter().map(|&x| x > 0.0).collect();
        assert_eq!(visited, reachable(&spec), "{}", spec.name);
    }
}

#[test]
fn demo_budget_and_reproducibility() {
    for spec in all_envs() {
        let (one, labeled) = generate_demos(&spec, spec.horizon, 3).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].len(), spec.horizon);
        assert_eq!(labeled[0].trajectory(), one[0]);

        let (a, la) = generate_demos(&spec, 1000, 3).unwrap();
        let (b, lb) = generate_demos(&spec, 1000, 3).unwrap();
        assert_eq!((&a, &la), (&b, &lb));
        assert!(a.iter().map(|d| d.len()).sum::<usize>() >= 1000);
        assert!(a.iter().map(|d| d.len()).sum::<usize>() < 1000 + spec.horizon);
        let (c, _) = generate_demos(&spec, 1000, 4).unwrap();
        if spec.params.slip > 0.0 {
            assert_ne!(a, c, "{}", spec.name);
        }
    }
}

#[test]
fn self_decoding_recovers_true_labels() {
    for spec in all_envs() {
        let expert = spec.expert_policy();
        let (demos, labeled) = generate_demos(&spec, 1000, 5).unwrap();
        for (d, truth) in demos.iter().zip(&labeled) {
            let decoded = viterbi_decode(&expert, d).unwrap();
            assert_eq!(decoded.options, truth.chosen_options(), "{}", spec.name);
            assert_eq!(decoded.log_prob, 0.0);
        }
    }
}

#[test]
fn invalid_requests() {
    assert_eq!(
        build_env("maze", EnvParams::default()),
        Err(Error::UnknownEnv("maze".into()))
    );
    assert!(build_env(
        "corridor-switch",
        EnvParams {
            slip: 1.0,
            ..EnvParams::default()
        }
    )
    .is_err());
    assert!(build_env(
        "lock-key",
        EnvParams {
            slip: -0.1,
            ..EnvParams::default()
        }
    )
    .is_err());
    assert!(build_env(
        "corridor-switch",
        EnvParams {
            size: Some(1),
            ..EnvParams::default()
        }
    )
    .is_err());
    let spec = build_env("corridor-switch", EnvParams::default()).unwrap();
    assert!(matches!(
        generate_demos(&spec, spec.horizon - 1, 0),
        Err(Error::InvalidConfig(_))
    ));
}
