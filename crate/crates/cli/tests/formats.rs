use optgail::config::{resolve, KeyValues, Manifest};
use optgail::format::{self, TrajectorySet};
use optgail::report::{self, COLUMNS};
use optgail_core::algorithms::{Record, TrainReport};
use optgail_core::{HierPolicy, OptionTrajectory, Trajectory};
use proptest::prelude::*;

/// `(n_states, n_actions, k, demos)` with each demo a list of `(s, a, o)` steps.
type RawDemos = (usize, usize, usize, Vec<Vec<(usize, usize, usize)>>);

fn trajectories() -> impl Strategy<Value = RawDemos> {
    (1usize..6, 1usize..4, 1usize..4).prop_flat_map(|(n_s, n_a, k)| {
        let step = (0..n_s, 0..n_a, 0..k);
        (
            Just(n_s),
            Just(n_a),
            Just(k),
            prop::collection::vec(prop::collection::vec(step, 1..12), 1..4),
        )
    })
}

fn policy() -> impl Strategy<Value = HierPolicy> {
    (1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(n_s, n_a, k)| {
        let high = prop::collection::vec(prop::collection::vec(1e-6f64..1.0, k), n_s * (k + 1));
        let low = prop::collection::vec(prop::collection::vec(1e-6f64..1.0, n_a), n_s * k);
        (high, low).prop_map(move |(high, low)| {
            let norm = |rows: Vec<Vec<f64>>| -> Vec<f64> {
                rows.into_iter()
                    .flat_map(|r| {
                        let z: f64 = r.iter().sum();
                        r.into_iter().map(move |x| x / z)
                    })
                    .collect()
            };
            HierPolicy::new(n_s, n_a, k, norm(high), norm(low)).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn trajectory_files_round_trip((n_s, n_a, k, raw) in trajectories()) {
        let labeled: Vec<OptionTrajectory> = raw
            .iter()
            .map(|steps| {
                let (s, a, o) = steps.iter().fold((vec![], vec![], vec![]), |mut acc, &(s, a, o)| {
                    acc.0.push(s);
                    acc.1.push(a);
                    acc.2.push(o);
                    acc
                });
                OptionTrajectory::from_parts(s, a, &o, k).unwrap()
            })
            .collect();
        let plain: Vec<Trajectory> = labeled.iter().map(OptionTrajectory::trajectory).collect();

        let text = format::format_annotated(&labeled, n_s, n_a);
        let parsed = format::parse_trajectories(&text, "mem").unwrap();
        prop_assert_eq!(parsed, TrajectorySet::Annotated { n_states: n_s, n_actions: n_a, k, demos: labeled });

        let text = format::format_plain(&plain, n_s, n_a);
        let parsed = format::parse_trajectories(&text, "mem").unwrap();
        prop_assert_eq!(parsed, TrajectorySet::Plain { n_states: n_s, n_actions: n_a, demos: plain });
    }

    #[test]
    fn policy_files_round_trip_exactly(p in policy()) {
        let text = format::format_policy(&p);
        prop_assert_eq!(format::parse_policy(&text, "mem").unwrap(), p);
    }
}

#[test]
fn trajectory_file_layout() {
    let demo = OptionTrajectory::from_parts(vec![0, 2], vec![1, 0], &[1, 1], 2).unwrap();
    assert_eq!(
        format::format_annotated(&[demo], 3, 2),
        "option-traj v1 n_states=3 n_actions=2 k=2 T=1 annotated=1\n0 1 1\n2 0 1\n"
    );
}

#[test]
fn malformed_trajectory_files() {
    let cases = [
        ("", 1, "no trajectories"),
        ("option-traj v2 n_states=3 n_actions=2 k=0 T=0 annotated=0\n0 0\n", 1, "header"),
        ("option-traj v1 n_states=3 n_actions=2 k=0 T=0 annotated=0\n0 0 0\n", 2, "expected 2 integers"),
        ("option-traj v1 n_states=3 n_actions=2 k=2 T=0 annotated=1\n0 0 2\n", 2, "option 2 is out of range"),
        ("option-traj v1 n_states=3 n_actions=2 k=0 T=0 annotated=0\n3 0\n", 2, "state 3 is out of range"),
        ("option-traj v1 n_states=3 n_actions=2 k=0 T=0 annotated=0\nx 0\n", 2, "not a valid state"),
        (
            "option-traj v1 n_states=3 n_actions=2 k=0 T=0 annotated=0\n0 0\noption-traj v1 n_states=4 n_actions=2 k=0 T=0 annotated=0\n0 0\n",
            3,
            "",
        ),
    ];
    for (text, line, needle) in cases {
        let e = format::parse_trajectories(text, "mem").unwrap_err();
        assert_eq!(e.line(), Some(line), "{text:?}: {e}");
        assert!(e.to_string().contains(needle), "{e}");
    }
}

#[test]
fn malformed_policy_files() {
    let good = format::format_policy(&HierPolicy::uniform(2, 2, 2));
    let cases = [
        (good.replacen("hier-policy v1", "hier-policy v0", 1), 1),
        (good.replacen("high 0 #", "high 0 1", 1), 4),
        (good.replacen("low 1 1 0.5 0.5", "low 1 1 0.5 0.6", 1), 11),
        (good.replacen("low 1 1 0.5 0.5\n", "", 1), 11),
        (format!("{good}low 2 0 1.0 0.0\n"), 12),
    ];
    for (text, line) in cases {
        let e = format::parse_policy(&text, "mem").unwrap_err();
        assert_eq!(e.line(), Some(line), "{text}\n{e}");
    }
}

#[test]
fn missing_files_are_reported_as_such() {
    let e = format::load_policy(std::path::Path::new("/nonexistent/policy.txt")).unwrap_err();
    assert!(e.is_not_found());
}

fn record(iter: usize, ret: f64, agreement: Option<f64>) -> Record {
    Record {
        iter,
        env_steps: 10 * iter,
        q_joint: 0.5 / (iter + 1) as f64,
        q_marginal: 0.25 / (iter + 1) as f64,
        demo_loglik: f64::NEG_INFINITY,
        ret,
        option_agreement: agreement,
        activated_options: 2,
    }
}

#[test]
fn report_round_trip_and_merge() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let ra = TrainReport {
        records: vec![record(0, 1.0, Some(0.5)), record(1, 2.0, Some(1.0))],
        q_estimator: "exact",
    };
    let rb = TrainReport {
        records: vec![
            record(0, 3.0, None),
            record(1, 0.1, Some(0.75)),
            record(2, 9.0, None),
        ],
        q_estimator: "exact",
    };
    report::write_report(&a, &ra).unwrap();
    report::write_report(&b, &rb).unwrap();

    let t = report::read_table(&a).unwrap();
    assert_eq!(t.columns, COLUMNS);
    assert_eq!(t.column("return").unwrap(), vec![Some(1.0), Some(2.0)]);
    assert_eq!(
        t.column("demo_loglik").unwrap(),
        vec![Some(f64::NEG_INFINITY); 2]
    );
    assert_eq!(
        report::read_table(&b)
            .unwrap()
            .column("option_agreement")
            .unwrap(),
        vec![None, Some(0.75), None]
    );

    let merged = dir.path().join("m.csv");
    report::merge_curves(&[&a, &b], &merged).unwrap();
    let m = report::read_table(&merged).unwrap();
    assert_eq!(m.rows.len(), 2);
    assert_eq!(m.column("seeds").unwrap(), vec![Some(2.0); 2]);
    assert_eq!(
        m.column("return_mean").unwrap(),
        vec![Some(2.0), Some(1.05)]
    );
    assert_eq!(m.column("return_min").unwrap(), vec![Some(1.0), Some(0.1)]);
    assert_eq!(m.column("return_max").unwrap(), vec![Some(3.0), Some(2.0)]);
    // empty cells are left out of the band
    assert_eq!(
        m.column("option_agreement_mean").unwrap(),
        vec![Some(0.5), Some(0.875)]
    );
    assert_eq!(m.column("env_steps").unwrap(), vec![Some(0.0), Some(10.0)]);
}

#[test]
fn merging_rejects_foreign_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.csv");
    std::fs::write(&p, "a,b\n1,2\n").unwrap();
    assert!(report::merge_curves(&[&p], &dir.path().join("m.csv")).is_err());
    assert!(report::merge_curves(&[], &dir.path().join("m.csv")).is_err());
}

#[test]
fn config_files() {
    let kv = KeyValues::parse("# comment\n\nk = 3\nmethod=hbc\n", "cfg").unwrap();
    assert_eq!(kv.get_str("method"), Some("hbc"));
    assert_eq!(resolve(None, &kv, "k", 4usize).unwrap(), 3);
    assert_eq!(resolve(Some(6), &kv, "k", 4usize).unwrap(), 6);
    assert!(kv.reject_unknown(&["k"]).is_err());
    assert!(kv.reject_unknown(&["k", "method"]).is_ok());
    assert!(KeyValues::parse("k=1\nk=2\n", "cfg").is_err());
    assert!(KeyValues::parse("no equals sign\n", "cfg").is_err());

    let mut m = Manifest::default();
    m.push("seed", 7);
    m.push("env", "lock-key");
    let back = KeyValues::parse(&m.render(), "manifest").unwrap();
    assert_eq!(back.get::<u64>("seed").unwrap(), Some(7));
    assert_eq!(back.get_str("env"), Some("lock-key"));
}
