use kcbf_core::barrier::{
    calibrate_rho, calibrate_samples, conformal_rank, empirical_quantile, plan_union_bound, CalibrationMode, LiftedBarrier,
    Margin, OrderIndex,
};
use kcbf_core::koopman::{fit_centers, fit_model, Transition};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn quantile_is_monotone_in_the_level(
        samples in prop::collection::vec(0.0f64..10.0, 1..200),
        q1 in 0.0f64..1.0,
        dq in 0.0f64..1.0,
    ) {
        let q2 = (q1 + dq).min(1.0);
        let (_, r1) = empirical_quantile(&samples, q1).unwrap();
        let (_, r2) = empirical_quantile(&samples, q2).unwrap();
        prop_assert!(r2 >= r1);
        for mode in [CalibrationMode::Empirical, CalibrationMode::Conformal] {
            let a = calibrate_samples(vec!["h".into()], vec![samples.clone()], q1, mode).unwrap();
            let b = calibrate_samples(vec!["h".into()], vec![samples.clone()], q2, mode).unwrap();
            prop_assert!(b.barriers[0].rho.value() >= a.barriers[0].rho.value());
        }
    }

    /// The margin is the stated order statistic of the stored samples.
    #[test]
    fn margin_is_the_recorded_order_statistic(
        samples in prop::collection::vec(0.0f64..10.0, 1..100),
        q in 0.0f64..1.0,
    ) {
        let r = calibrate_samples(vec!["h".into()], vec![samples.clone()], q, CalibrationMode::Conformal).unwrap();
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let alpha = 1.0 - q;
        // ⌈(N+1)(1−α)⌉ recomputed without the library
        let k = ((samples.len() + 1) as f64 * (1.0 - alpha) - 1e-9).ceil() as usize;
        match r.barriers[0].order_index {
            OrderIndex::Index(i) => {
                prop_assert_eq!(i, k.max(1));
                prop_assert_eq!(r.barriers[0].rho.value(), sorted[i - 1]);
            }
            OrderIndex::Infinite => prop_assert!(k > samples.len()),
        }
    }
}

/// `P(|cᵀr*| ≤ ρ) ≥ 1 − α` on fresh exchangeable draws, within three
/// binomial standard deviations.
#[test]
pub fn conformal_coverage_on_exchangeable_residuals() {
    for (alpha, seed) in [(0.05, 1u64), (0.2, 2)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = [0.6, -0.8, 0.3];
        let draw = |rng: &mut ChaCha8Rng| -> f64 {
            let r: Vec<f64> = (0..3).map(|_| StandardNormal.sample(rng)).collect();
            r.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>().abs()
        };
        let cal: Vec<f64> = (0..2000).map(|_| draw(&mut rng)).collect();
        let report = calibrate_samples(vec!["h".into()], vec![cal], 1.0 - alpha, CalibrationMode::Conformal).unwrap();
        let rho = report.barriers[0].rho.value();
        let n = 10_000;
        let covered = (0..n).filter(|_| draw(&mut rng) <= rho).count() as f64 / n as f64;
        let sigma = (alpha * (1.0 - alpha) / n as f64).sqrt();
        assert!(covered >= 1.0 - alpha - 3.0 * sigma, "alpha {alpha}: coverage {covered}");
    }
}

#[test]
pub fn per_step_union_bound_is_vacuous_at_two_thousand_samples() {
    let plan = plan_union_bound(1000, 2, 0.02, 2000).unwrap();
    assert_eq!(plan.per_step_alpha, 0.02 / 2000.0);
    assert_eq!(plan.per_step_alpha, 1e-5);
    assert_eq!(plan.conformal_k, OrderIndex::Infinite);
    assert_eq!(plan.required_rank, 2001);
    assert_eq!(conformal_rank(2000, 1e-5), OrderIndex::Infinite);
    assert!(plan.vacuous);
    assert_eq!(plan.min_n_cal, 99_999);
    // the rank first becomes finite at the planned minimum
    assert_eq!(conformal_rank(99_998, 1e-5), OrderIndex::Infinite);
    assert_eq!(conformal_rank(99_999, 1e-5), OrderIndex::Index(99_999));
    let samples = vec![vec![0.1; 2000], vec![0.2; 2000]];
    let report =
        calibrate_samples(vec!["a".into(), "b".into()], samples, 1.0 - plan.per_step_alpha, CalibrationMode::Conformal)
            .unwrap();
    assert!(report.barriers.iter().all(|b| b.rho == Margin::INFINITE));
}

#[test]
fn small_union_bound_is_resolvable() {
    let plan = plan_union_bound(1, 1, 0.5, 10).unwrap();
    assert_eq!(plan.per_step_alpha, 0.5);
    assert_eq!(plan.conformal_k, OrderIndex::Index(6));
    assert!(!plan.vacuous);
}

/// `|cᵀr| ≤ ‖c‖‖r‖` on every calibration residual of a fitted model.
#[test]
fn projection_never_exceeds_the_norm_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let transitions: Vec<Transition> = (0..600)
        .map(|_| {
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let u = vec![rng.random_range(-1.0..1.0)];
            let y_plus = vec![y[0] + 0.1 * y[1], y[1] + 0.1 * (u[0] - y[0].sin()) + 0.01 * rng.random_range(-1.0..1.0)];
            Transition::new(y, u, y_plus)
        })
        .collect();
    let states: Vec<Vec<f64>> = transitions.iter().map(|t| t.y.clone()).collect();
    let dict = fit_centers(&states, 8, 0).unwrap();
    let model = fit_model(&dict, &transitions[..400], 1e-6).unwrap();
    let n = model.lifted_dim();
    let barriers: Vec<LiftedBarrier> = (0..3)
        .map(|j| {
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            LiftedBarrier::new(c, 0.0, format!("h{j}")).unwrap()
        })
        .collect();
    let report = calibrate_rho(&model, &barriers, &transitions[400..], 0.95, CalibrationMode::Empirical).unwrap();
    for (b, cal) in barriers.iter().zip(&report.barriers) {
        for (t, delta) in transitions[400..].iter().zip(&cal.samples) {
            let r = model.residual(t);
            assert_eq!(*delta, b.project(&r).abs());
            assert!(*delta <= norm(&b.c) * norm(&r) * (1.0 + 1e-12));
        }
    }
}

#[test]
fn deployment_monitor_tracks_the_calibrated_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cal: Vec<f64> = (0..2000).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut report = calibrate_samples(vec!["h".into()], vec![cal], 0.95, CalibrationMode::Conformal).unwrap();
    let mut rate = 0.0;
    for _ in 0..10_000 {
        rate = report.record_projected(0, rng.random_range(0.0..1.0));
    }
    assert!((0.03..=0.07).contains(&rate), "exceedance {rate}");

    let mut inf = calibrate_samples(vec!["h".into()], vec![vec![1.0; 10]], 1.0 - 1e-5, CalibrationMode::Conformal).unwrap();
    for _ in 0..100 {
        assert_eq!(inf.record_projected(0, 1e9), 0.0);
    }
}
