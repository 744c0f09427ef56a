use aoi_sense::policies::{
    self, ConstantPolicy, PeriodicPolicy, PolicyKind, RandomizedPolicy, SensingPolicy,
};
use aoi_sense::AoiQueueState;
use proptest::prelude::*;

fn run(policy: &mut dyn SensingPolicy, horizon: usize) -> Vec<bool> {
    let mut s = AoiQueueState::default();
    (0..horizon)
        .map(|_| {
            let a = policy.decide(&s);
            s = s.step(a, 0.5);
            a
        })
        .collect()
}

/// The floor recurrence, simulated directly.
fn floor_count(alpha: f64, horizon: usize) -> usize {
    (0..horizon as i64)
        .filter(|&t| (t as f64 * alpha).floor() > ((t - 1) as f64 * alpha).floor())
        .count()
}

#[test]
fn periodic_third_senses_333_of_999() {
    let mut p = PeriodicPolicy::new(1.0 / 3.0).unwrap();
    let n = run(&mut p, 999).iter().filter(|&&a| a).count();
    assert_eq!(n, 333);
    assert_eq!(n, floor_count(1.0 / 3.0, 999));
}

#[test]
fn randomized_rate_concentrates() {
    let mut p = RandomizedPolicy::new(0.3, 7).unwrap();
    let n = run(&mut p, 100_000).iter().filter(|&&a| a).count();
    let rate = n as f64 / 100_000.0;
    assert!((rate - 0.3).abs() <= 0.01, "{rate}");
}

#[test]
fn constant_policies() {
    assert!(run(&mut ConstantPolicy::always(), 50).iter().all(|&a| a));
    assert!(run(&mut ConstantPolicy::never(), 50).iter().all(|&a| !a));
    assert!(policies::baseline(PolicyKind::Dqn, 0.3, 0)
        .unwrap()
        .is_none());
    assert!(policies::baseline(PolicyKind::Randomized, 0.0, 0).is_err());
    assert!(policies::baseline(PolicyKind::Periodic, 1.5, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn periodic_prefix_rate_is_within_one_over_t(alpha in 0.01f64..=1.0, horizon in 1usize..3000) {
        let mut p = PeriodicPolicy::new(alpha).unwrap();
        let actions = run(&mut p, horizon);
        let mut n = 0usize;
        for (t, &a) in actions.iter().enumerate() {
            n += a as usize;
            let len = (t + 1) as f64;
            prop_assert!(n as f64 / len <= alpha + 1.0 / len + 1e-12);
        }
        prop_assert_eq!(n, floor_count(alpha, horizon));
        prop_assert!((n as f64 / horizon as f64 - alpha).abs() <= 1.0 / horizon as f64 + 1e-12);
    }

    #[test]
    fn randomized_is_seeded(alpha in 0.01f64..=1.0, seed in any::<u64>()) {
        let a = run(&mut RandomizedPolicy::new(alpha, seed).unwrap(), 200);
        let b = run(&mut RandomizedPolicy::new(alpha, seed).unwrap(), 200);
        prop_assert_eq!(a, b);
    }
}
