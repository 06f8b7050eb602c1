#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use seqflow_core::block::Block;
use seqflow_core::exec::Exec;
use seqflow_core::flow::{FlowSettings, DESCENT_SLACK};
use seqflow_core::process::{
    classify_point, component_zero_locus_sample, run_batch, run_process, BoxRegion, Classification, StoppingCriteria,
    Verdict,
};
use seqflow_core::scenarios::builtin;
use seqflow_core::schedule::{fairness_check, next_block, Schedule};
use seqflow_core::{AnalyticFunction, Point};

#[test]
fn next_block_examples() {
    let s = Schedule::cyclic(2, 3);
    assert_eq!(next_block(&s, 6, 1).unwrap().one_based(), vec![3, 4]);
    assert_eq!(next_block(&s, 6, 3).unwrap().one_based(), vec![1, 2]);
    let e = Schedule::ExplicitSets {
        sets: vec![Block::from_one_based(&[1]).unwrap(), Block::from_one_based(&[2, 3]).unwrap()],
    };
    assert_eq!(next_block(&e, 3, 3).unwrap().one_based(), vec![1]);
}

#[test]
fn classification_examples() {
    let q = builtin("quadratic_ab").unwrap();
    let info = classify_point(&q.f, &Point::zeros(2), 1e-7, 1e-6).unwrap();
    assert_eq!(info.classification, Classification::Minimum);
    assert_eq!(info.morse_index, 0);

    let z = builtin("zigzag3d").unwrap();
    let info = classify_point(&z.f, &Point::zeros(3), 1e-7, 1e-6).unwrap();
    assert_eq!(info.classification, Classification::Saddle { index: 1 });
    // det H = −192 < 0 with trace 12 > 0: exactly one negative eigenvalue
    let prod: f64 = info.eigenvalues.iter().product();
    assert!((prod + 192.0).abs() < 1e-9);

    let m = AnalyticFunction::parse(2, "-(y1^2 + y2^2)").unwrap();
    let info = classify_point(&m, &Point::zeros(2), 1e-7, 1e-6).unwrap();
    assert_eq!(info.classification, Classification::Maximum);
    assert_eq!(info.morse_index, 2);
}

#[test]
fn zero_locus_examples() {
    let z = builtin("zigzag3d").unwrap();
    let pts = component_zero_locus_sample(&z.f, 1, &BoxRegion::cube(3, 1.0), 9).unwrap();
    assert!(!pts.is_empty());
    for p in &pts {
        assert!((6.0 * p[0] + 2.0 * p[2]).abs() <= 1e-6);
    }
    let q = builtin("quadratic_ab").unwrap();
    for p in component_zero_locus_sample(&q.f, 0, &BoxRegion::cube(2, 2.0), 17).unwrap() {
        assert!((3.0 * p[0] + p[1]).abs() <= 1e-6);
    }
}

#[test]
fn quadratic_two_step_factor() {
    let s = builtin("quadratic_ab").unwrap();
    let run = run_process(
        &s.f,
        &s.domain,
        &Point::from([1.0, 1.0]),
        &s.schedule_default,
        &FlowSettings::default(),
        &StoppingCriteria::default(),
    )
    .unwrap();
    // ρ² = ((a−b)/(a+b))² per two steps on each coordinate, from step 1 on
    let rho2 = (1.0f64 / 3.0).powi(2);
    let pts: Vec<&Point> = run.points().skip(1).collect();
    for k in 0..18 {
        for j in 0..2 {
            if pts[k][j].abs() > 1e-300 {
                assert!((pts[k + 2][j] / pts[k][j] - rho2).abs() <= 1e-6, "k={k} j={j}");
            }
        }
    }
}

#[test]
fn finite_hit_from_the_axis() {
    let s = builtin("finite_hit2d").unwrap();
    let run = run_process(
        &s.f,
        &s.domain,
        &Point::from([0.0, 0.8]),
        &s.schedule_default,
        &FlowSettings::default(),
        &StoppingCriteria::default(),
    )
    .unwrap();
    // the first step frees y and lands on the minimum
    assert_eq!(run.steps[0].block, Block::single(1));
    assert!(run.steps[0].point.norm() <= 1e-12);
    assert!(run.steps[1..].iter().all(|s| s.arc_length <= 1e-12));
    assert!(run.verdict.is_converged());
}

#[test]
fn saddle_basin_trap() {
    let s = builtin("saddle_basin2d").unwrap();
    let run = run_process(
        &s.f,
        &s.domain,
        &Point::from([0.0, 1.0]),
        &s.schedule_default,
        &FlowSettings::default(),
        &StoppingCriteria::default(),
    )
    .unwrap();
    let info = run.verdict.limit().unwrap();
    assert_eq!(info.classification, Classification::Saddle { index: 1 });
    let run = run_process(
        &s.f,
        &s.domain,
        &Point::from([0.1, 1.0]),
        &s.schedule_default,
        &FlowSettings::default(),
        &StoppingCriteria::default(),
    )
    .unwrap();
    assert_eq!(run.verdict.limit().unwrap().classification, Classification::Minimum);
}

#[test]
fn zigzag_y_step_leaves_the_domain() {
    let s = builtin("zigzag3d").unwrap();
    let run = run_process(
        &s.f,
        &s.domain,
        &Point::from([0.0, 0.5, 0.5]),
        &s.schedule_default,
        &FlowSettings::default(),
        &StoppingCriteria::default(),
    )
    .unwrap();
    assert_eq!(run.verdict, Verdict::Error { step: 1, reason: "left_domain".into() });
}

#[test]
fn batch_matches_sequential() {
    let s = builtin("navfn_demo").unwrap();
    let starts = s.random_starts(6, 1).unwrap();
    let a = run_batch(
        Exec::Parallel,
        &s.f,
        &s.domain,
        &starts,
        &s.schedule_default,
        &FlowSettings::default(),
        &StoppingCriteria::default(),
    );
    let b = run_batch(
        Exec::Sequential,
        &s.f,
        &s.domain,
        &starts,
        &s.schedule_default,
        &FlowSettings::default(),
        &StoppingCriteria::default(),
    );
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn process_invariants(seed in 0u64..10_000, which in 0usize..4, random in proptest::bool::ANY) {
        let name = ["quadratic_ab", "saddle_basin2d", "finite_hit2d", "navfn_demo"][which];
        let s = builtin(name).unwrap();
        let q0 = s.random_starts(1, seed).unwrap().remove(0);
        let schedule = if random {
            Schedule::RandomFair { blocks: s.blocks.clone(), seed, window: 3 * s.dim() }
        } else {
            s.schedule_default.clone()
        };
        let stop = StoppingCriteria::default();
        let run = run_process(&s.f, &s.domain, &q0, &schedule, &FlowSettings::default(), &stop).unwrap();
        let phis = run.phis();
        for w in phis.windows(2) {
            prop_assert!(w[1] <= w[0] + DESCENT_SLACK);
        }
        let pts: Vec<&Point> = run.points().collect();
        for (k, st) in run.steps.iter().enumerate() {
            for j in 0..s.dim() {
                if !st.block.contains(j) {
                    prop_assert_eq!(pts[k + 1][j].to_bits(), pts[k][j].to_bits());
                }
            }
        }
        if let Verdict::ConvergedTo { info, .. } = &run.verdict {
            prop_assert!(info.grad_norm <= stop.eps_crit);
        } else {
            prop_assert!(false, "{name} from {:?} did not converge", q0);
        }
    }

    #[test]
    fn random_fair_gaps_within_window(seed in 0u64..1_000_000, dim in 1usize..6, extra in 1usize..6) {
        let s = Schedule::RandomFair { blocks: Schedule::singletons(dim), seed, window: dim + extra };
        let rep = fairness_check(&s, dim, 500).unwrap();
        prop_assert!(rep.passed, "{:?}", rep.max_gaps);
    }
}
