use proptest::prelude::*;

use tvkb::config::ExperimentConfig;
use tvkb::harness::{coverage_test, DriftMode, Experiment, VariantSpec, WindowSpec};

fn experiment(
    schedule: &str,
    resolution: usize,
    horizon: usize,
    overrides: &[String],
) -> Experiment {
    let text = format!(
        r#"
[kernel]
name = "matern"
nu = 1.5
lengthscale = 0.3

[domain]
lower = [0.0, 0.0]
upper = [1.0, 1.0]
resolution = {resolution}

[environment]
schedule = "{schedule}"
B = 1.0
P_T = 2.0
R = 0.1
centers = 6

[policy]
variant = "stationary"

[run]
T = {horizon}
"#
    );
    ExperimentConfig::parse(&text, overrides)
        .unwrap()
        .to_experiment()
        .unwrap()
}

fn variant_strategy() -> impl Strategy<Value = VariantSpec> {
    prop_oneof![
        Just(VariantSpec::Stationary),
        (1usize..12).prop_map(|h| VariantSpec::Restart(WindowSpec::Fixed(h))),
        (1usize..12).prop_map(|w| VariantSpec::SlidingWindow(WindowSpec::Fixed(w))),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 24,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn regret_is_nonnegative_and_additive(
        variant in variant_strategy(),
        schedule in prop_oneof![Just("stationary"), Just("abrupt"), Just("rotation")],
        resolution in 2usize..5,
        horizon in 2usize..40,
        seed in any::<u64>(),
    ) {
        let mut exp = experiment(schedule, resolution, horizon, &[]);
        exp.policy.variant = variant;
        let r = exp.run_episode(seed).unwrap();
        prop_assert_eq!(r.steps.len(), horizon);
        prop_assert!(r.steps.iter().all(|s| s.regret >= 0.0 && s.f_star >= s.f_xt));
        let total: f64 = r.steps.iter().map(|s| s.regret).sum();
        prop_assert!((total - r.regret_total).abs() <= 1e-12 * (1.0 + total));
        prop_assert_eq!(r.to_csv(), exp.run_episode(seed).unwrap().to_csv());
    }

    #[test]
    fn window_discipline(h in 1usize..10, horizon in 1usize..40, seed in any::<u64>()) {
        let mut exp = experiment("rotation", 3, horizon, &[]);
        exp.policy.variant = VariantSpec::Restart(WindowSpec::Fixed(h));
        let r = exp.run_episode(seed).unwrap();
        for s in &r.steps {
            prop_assert_eq!(s.window_len, (s.t - 1) % h);
            prop_assert_eq!(s.reset, (s.t - 1) % h == 0);
        }
        exp.policy.variant = VariantSpec::SlidingWindow(WindowSpec::Fixed(h));
        let r = exp.run_episode(seed).unwrap();
        for s in &r.steps {
            prop_assert_eq!(s.window_len, (s.t - 1).min(h));
        }
    }

    #[test]
    fn full_restart_interval_is_stationary(horizon in 1usize..40, seed in any::<u64>()) {
        let exp = experiment("abrupt", 3, horizon, &[]);
        let mut restart = exp.clone();
        restart.policy.variant = VariantSpec::Restart(WindowSpec::Fixed(horizon));
        prop_assert_eq!(exp.run_episode(seed).unwrap().queries(), restart.run_episode(seed).unwrap().queries());
    }
}

#[test]
fn dropping_the_drift_term_raises_violations() {
    let overrides = [
        "environment.R=0.01".to_string(),
        "environment.P_T=20.0".to_string(),
        "policy.variant=restart".to_string(),
        "policy.H=20".to_string(),
    ];
    let exp = experiment("rotation", 4, 60, &overrides);
    for mode in [DriftMode::Restart, DriftMode::Window] {
        let r = coverage_test(&exp, 0.1, 200, mode, 3).unwrap();
        assert!(
            r.violation_rate_without_drift > r.violation_rate,
            "{mode:?}: without {} vs with {}",
            r.violation_rate_without_drift,
            r.violation_rate
        );
        assert!(r
            .violated
            .iter()
            .zip(&r.violated_without_drift)
            .all(|(w, wo)| !w || *wo));
    }
}
