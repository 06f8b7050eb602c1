use proptest::prelude::*;
use seqflow_core::block::Block;
use seqflow_core::flow::{integrate_slice, FlowSettings};
use seqflow_core::lojasiewicz::{
    angle_condition, estimate_exponent, length_bound_check, verify_inequality, DEFAULT_SAFETY, LENGTH_SLACK,
};
use seqflow_core::process::{run_process, StoppingCriteria};
use seqflow_core::scenarios::builtin;
use seqflow_core::{AnalyticFunction, Domain, Error, Point};

#[test]
fn scaled_norm_exponent_and_constant() {
    // λ|x|²: |∇f| = 2λ|x| = 2√λ·|f|^½
    for lambda in [0.5, 3.0] {
        let f = AnalyticFunction::parse(2, &format!("{lambda} * (y1^2 + y2^2)")).unwrap();
        let est = estimate_exponent(&f, &Point::zeros(2), 0.5, 4000, 3).unwrap();
        assert!((est.mu - 0.5).abs() < 0.02, "mu = {}", est.mu);
        let oracle = 0.9 * 2.0 * f64::sqrt(lambda);
        assert!((est.c - oracle).abs() <= 0.1 * oracle, "c = {} oracle {oracle}", est.c);
        assert!(verify_inequality(&f, &est, 2000, 4).unwrap().passed);
    }
}

#[test]
fn quartic_exponent() {
    // x⁴ + y⁴: |∇f| ~ |f|^¾ along the axes
    let f = AnalyticFunction::parse(2, "y1^4 + y2^4").unwrap();
    let est = estimate_exponent(&f, &Point::zeros(2), 0.5, 8000, 5).unwrap();
    assert!((est.mu - 0.75).abs() < 0.05, "mu = {}", est.mu);
    assert!(verify_inequality(&f, &est, 4000, 6).unwrap().passed);
}

#[test]
fn estimate_errors() {
    let f = AnalyticFunction::parse(2, "y1^2 + y2^2").unwrap();
    assert!(estimate_exponent(&f, &Point::from([0.5, 0.0]), 0.1, 500, 1).is_err());
    assert!(estimate_exponent(&f, &Point::zeros(2), 0.0, 500, 1).is_err());
    let c = AnalyticFunction::constant(2, 1.0);
    assert!(matches!(estimate_exponent(&c, &Point::zeros(2), 0.1, 500, 1), Err(Error::TooFewSamples { .. })));
}

#[test]
fn estimate_is_seed_deterministic() {
    let s = builtin("quadratic_ab").unwrap();
    let a = estimate_exponent(&s.f, &Point::zeros(2), 0.5, 2000, 9).unwrap();
    let b = estimate_exponent(&s.f, &Point::zeros(2), 0.5, 2000, 9).unwrap();
    assert_eq!(a, b);
}

#[test]
fn full_block_angle_is_one() {
    let f = AnalyticFunction::parse(2, "2*(y1 + y2)^2 + (y1 - y2)^2").unwrap();
    let d = Domain::ball(Point::zeros(2), 4.0).unwrap();
    let tr = integrate_slice(&f, &d, &Point::from([1.0, 0.3]), &Block::all(2), &FlowSettings::default()).unwrap();
    let rep = angle_condition(&f, &tr, &Block::all(2)).unwrap();
    assert!(rep.deltas.iter().all(|&v| (v - 1.0).abs() < 1e-12 || v == 0.0));
}

#[test]
fn length_bound_on_the_quadratic() {
    let s = builtin("quadratic_ab").unwrap();
    let est = estimate_exponent(&s.f, &Point::zeros(2), 0.5, 4000, 2).unwrap();
    let run = run_process(
        &s.f,
        &s.domain,
        &Point::from([0.2, 0.1]),
        &s.schedule_default,
        &FlowSettings::default(),
        &StoppingCriteria::default(),
    )
    .unwrap();
    let rep = length_bound_check(&run, &est, DEFAULT_SAFETY).unwrap();
    assert!(rep.hypothesis_holds);
    assert!(rep.hypothesis_value < rep.r);
    assert!(rep.total_length <= rep.r * (1.0 + LENGTH_SLACK));
    assert!(rep.bound_holds);
    assert!(length_bound_check(&run, &est, 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn slice_angle_never_exceeds_one(x in -1.5f64..1.5, y in -1.5f64..1.5, free in 0usize..2) {
        let s = builtin("saddle_basin2d").unwrap();
        let block = Block::single(free);
        let tr = integrate_slice(&s.f, &s.domain, &Point::from([x, y]), &block, &FlowSettings::default()).unwrap();
        let rep = angle_condition(&s.f, &tr, &block).unwrap();
        prop_assert!(rep.deltas.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!(rep.delta_min <= 1.0);
    }
}
