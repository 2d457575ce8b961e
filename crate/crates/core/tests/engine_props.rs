use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use etdlab::learner::{
    learner_step, project_ball, LearnerConfig, LearnerState, StepsizeSchedule, Variant,
};
use etdlab::trace::{truncate_components, StepRecord, TraceState, TraceStats};

#[allow(clippy::too_many_arguments)]
fn record(
    phi: Vec<f64>,
    phi_next: Vec<f64>,
    i: f64,
    gamma: f64,
    lambda: f64,
    rho: f64,
    reward: f64,
    gamma_next: f64,
) -> StepRecord<f64> {
    StepRecord {
        phi_t: DVector::from_vec(phi),
        i_t: i,
        gamma_t: gamma,
        lambda_t: lambda,
        rho_t: rho,
        reward,
        phi_next: DVector::from_vec(phi_next),
        gamma_next,
        effective: rho > 0.0,
    }
}

prop_compose! {
    fn arb_record(d: usize)(
        phi in prop::collection::vec(-1.0f64..1.0, d),
        phi_next in prop::collection::vec(-1.0f64..1.0, d),
        i in 0.0f64..1.0,
        gamma in 0.0f64..1.0,
        lambda in 0.0f64..1.0,
        rho in prop_oneof![Just(0.0), 0.0f64..2.0],
        reward in -1.0f64..1.0,
        gamma_next in 0.0f64..1.0,
    ) -> StepRecord<f64> {
        record(phi, phi_next, i, gamma, lambda, rho, reward, gamma_next)
    }
}

fn stream(d: usize, len: usize) -> impl Strategy<Value = Vec<StepRecord<f64>>> {
    prop::collection::vec(arb_record(d), len)
}

fn run_traces(recs: &[StepRecord<f64>], d: usize) -> Vec<DVector<f64>> {
    let mut tr = TraceState::new(d);
    recs.iter()
        .map(|r| {
            tr.step(r).unwrap();
            tr.e.clone()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn trace_matches_replay(recs in stream(3, 10)) {
        let mut tr = TraceState::new(3);
        let (mut f, mut e, mut rp) = (0.0f64, DVector::<f64>::zeros(3), 1.0);
        for r in &recs {
            tr.step(r).unwrap();
            f = r.gamma_t * rp * f + r.i_t;
            let m = r.lambda_t * r.i_t + (1.0 - r.lambda_t) * f;
            e = e * (r.lambda_t * r.gamma_t * rp) + &r.phi_t * m;
            rp = r.rho_t;
            prop_assert!((tr.f - f).abs() <= 1e-12 * (1.0 + f.abs()));
            prop_assert!((&tr.e - &e).amax() <= 1e-12 * (1.0 + e.amax()));
        }
    }

    #[test]
    fn traces_are_linear_in_history(mut recs in stream(2, 12), f0 in 0.0f64..5.0, e0 in prop::collection::vec(-5.0f64..5.0, 2)) {
        for r in &mut recs {
            r.i_t = 0.0;
        }
        let mut a = TraceState::new(2);
        a.f = f0;
        a.e = DVector::from_vec(e0.clone());
        let mut b = a.clone();
        b.f *= 2.0;
        b.e *= 2.0;
        for r in &recs {
            a.step(r).unwrap();
            b.step(r).unwrap();
        }
        prop_assert!((b.f - 2.0 * a.f).abs() <= 1e-12 * (1.0 + a.f.abs()));
        prop_assert!((&b.e - &a.e * 2.0).amax() <= 1e-12 * (1.0 + a.e.amax()));
    }

    #[test]
    fn lambda_zero_gives_f_phi(mut recs in stream(3, 15)) {
        let mut tr = TraceState::new(3);
        for r in &mut recs {
            r.lambda_t = 0.0;
            tr.step(r).unwrap();
            prop_assert_eq!(&tr.e, &(&r.phi_t * tr.f));
        }
    }

    #[test]
    fn zero_rho_resets_one_step_later(recs in stream(2, 8), next in arb_record(2)) {
        let mut tr = TraceState::new(2);
        for r in &recs {
            tr.step(r).unwrap();
        }
        let mut last = recs[recs.len() - 1].clone();
        last.rho_t = 0.0;
        tr.step(&last).unwrap();
        tr.step(&next).unwrap();
        let m = next.lambda_t * next.i_t + (1.0 - next.lambda_t) * next.i_t;
        prop_assert_eq!(tr.f, next.i_t);
        prop_assert!((&tr.e - &next.phi_t * m).amax() <= 1e-15);
    }

    #[test]
    fn psi_idempotent_and_identity_inside(x in prop::collection::vec(-100.0f64..100.0, 5), k in 1.0f64..80.0) {
        let v = DVector::from_vec(x);
        let once = truncate_components(&v, k);
        prop_assert_eq!(&truncate_components(&once, k), &once);
        prop_assert!(once.amax() <= k);
        if v.amax() <= k {
            prop_assert_eq!(&once, &v);
        }
    }

    #[test]
    fn tail_fractions_non_increasing(norms in prop::collection::vec(0.0f64..2000.0, 1..300)) {
        let mut st = TraceStats::default();
        for n in &norms {
            st.record_norm(*n);
        }
        let fr = st.tail_fractions();
        prop_assert!(fr.windows(2).all(|w| w[1].1 <= w[0].1));
        let total: u64 = st.excursion_lengths().iter().map(|(l, c)| l * c).sum();
        prop_assert!(total <= st.count);
    }

    #[test]
    fn projection_properties(x in prop::collection::vec(-500.0f64..500.0, 4), y in prop::collection::vec(-500.0f64..500.0, 4), r in 1.0f64..300.0) {
        let (x, y) = (DVector::from_vec(x), DVector::from_vec(y));
        let px = project_ball(&x, r);
        prop_assert!(px.norm() <= r);
        prop_assert!((project_ball(&px, r) - &px).amax() <= 1e-12 * r);
        prop_assert!((&px - project_ball(&y, r)).norm() <= (&x - &y).norm() + 1e-9);
        if x.norm() <= r {
            prop_assert_eq!(&px, &x);
        }
    }

    #[test]
    fn variants_agree_without_truncation(recs in stream(3, 40)) {
        let es = run_traces(&recs, 3);
        let mut c1 = LearnerConfig::new(Variant::TruncateTrace, 3, StepsizeSchedule::Constant { alpha: 0.05 });
        c1.k = 1e6;
        c1.r_b = 1e6;
        let mut c2 = c1.clone();
        c2.variant = Variant::TruncateIncrement;
        let (mut a, mut b) = (LearnerState::<f64>::new(&c1, 0), LearnerState::<f64>::new(&c2, 0));
        for (r, e) in recs.iter().zip(&es) {
            learner_step(&mut a, &c1, e, r).unwrap();
            learner_step(&mut b, &c2, e, r).unwrap();
            prop_assert!((&a.theta - &b.theta).amax() <= 1e-12 * (1.0 + a.theta.amax()));
        }
    }

    #[test]
    fn constrained_iterates_stay_in_ball(recs in stream(3, 60), perturb in any::<bool>()) {
        let es = run_traces(&recs, 3);
        for v in [Variant::TruncateTrace, Variant::TruncateIncrement] {
            let mut c = LearnerConfig::new(v, 3, StepsizeSchedule::Constant { alpha: 5.0 });
            c.r_b = 2.0;
            c.perturb = perturb;
            let mut s = LearnerState::<f64>::new(&c, 1);
            for (r, e) in recs.iter().zip(&es) {
                learner_step(&mut s, &c, &(e * 100.0), r).unwrap();
                prop_assert!(s.theta.norm() <= 2.0);
            }
        }
    }

    #[test]
    fn elstd_means_match_brute_force(recs in stream(3, 50), k in 0.1f64..3.0) {
        let es = run_traces(&recs, 3);
        let mut c = LearnerConfig::new(Variant::Elstd, 3, StepsizeSchedule::Constant { alpha: 1.0 });
        c.k = k;
        let mut s = LearnerState::<f64>::new(&c, 0);
        let (mut cm, mut bm) = (DMatrix::<f64>::zeros(3, 3), DVector::<f64>::zeros(3));
        for (n, (r, e)) in recs.iter().zip(&es).enumerate() {
            learner_step(&mut s, &c, e, r).unwrap();
            let te = truncate_components(e, k) * r.rho_t;
            cm += &te * (&r.phi_next * r.gamma_next - &r.phi_t).transpose();
            bm += &te * r.reward;
            let t = (n + 1) as f64;
            let scale = 1.0 + cm.amax() / t;
            prop_assert!((s.elstd_c() - &cm / t).amax() <= 1e-12 * scale);
            prop_assert!((s.elstd_b() - &bm / t).amax() <= 1e-12 * (1.0 + bm.amax() / t));
        }
    }

    #[test]
    fn zero_stepsize_is_a_no_op(recs in stream(2, 20)) {
        let es = run_traces(&recs, 2);
        for v in [Variant::TruncateTrace, Variant::TruncateIncrement, Variant::Unconstrained] {
            let c = LearnerConfig::new(v, 2, StepsizeSchedule::Constant { alpha: 0.0 });
            let mut s = LearnerState::<f64>::new(&c, 0);
            s.theta = DVector::from_vec(vec![0.5, -0.25]);
            for (r, e) in recs.iter().zip(&es) {
                learner_step(&mut s, &c, e, r).unwrap();
            }
            prop_assert_eq!(s.theta.as_slice(), &[0.5, -0.25]);
        }
    }

    #[test]
    fn tail_average_matches_mean(recs in stream(2, 100), start in 0u64..60) {
        let es = run_traces(&recs, 2);
        let mut c = LearnerConfig::new(Variant::TruncateTrace, 2, StepsizeSchedule::Constant { alpha: 0.1 });
        c.averaging_start = start;
        let mut s = LearnerState::<f64>::new(&c, 0);
        let mut kept = Vec::new();
        for (n, (r, e)) in recs.iter().zip(&es).enumerate() {
            learner_step(&mut s, &c, e, r).unwrap();
            if n as u64 >= start {
                kept.push(s.theta.clone());
            }
        }
        let mean = kept.iter().fold(DVector::zeros(2), |a, b| a + b) / kept.len() as f64;
        prop_assert!((s.tail_average(&c).unwrap() - mean).amax() <= 1e-12);
    }
}

#[test]
fn followon_counts_cycles_on_deterministic_loop() {
    // 3-cycle, ρ = γ = λ = 1, interest only at state 0
    let phis = [vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
    let mut tr = TraceState::new(3);
    for t in 0..30 {
        let s = t % 3;
        let r = record(phis[s].clone(), phis[(s + 1) % 3].clone(), if s == 0 { 1.0 } else { 0.0 }, 1.0, 1.0, 1.0, 0.0, 1.0);
        tr.step(&r).unwrap();
        if s == 0 {
            assert_eq!(tr.f, (t / 3 + 1) as f64);
        }
    }
}

#[test]
fn perturbation_moments() {
    let mut c = LearnerConfig::new(Variant::TruncateIncrement, 2, StepsizeSchedule::Constant { alpha: 0.002 });
    c.perturb = true;
    c.r_b = 1e9;
    let mut s = LearnerState::<f64>::new(&c, 4);
    let r = record(vec![0.0; 2], vec![0.0; 2], 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
    let e = DVector::zeros(2);
    let n = 100_000;
    let (mut sum, mut sq) = (DVector::<f64>::zeros(2), DVector::<f64>::zeros(2));
    for _ in 0..n {
        s.theta.fill(0.0);
        learner_step(&mut s, &c, &e, &r).unwrap();
        sum += &s.theta;
        sq += s.theta.component_mul(&s.theta);
    }
    let nf = n as f64;
    for k in 0..2 {
        let mean = sum[k] / nf;
        let var = sq[k] / nf - mean * mean;
        assert!(mean.abs() <= 3.0 * 0.001 / nf.sqrt());
        assert!((var / 1e-6 - 1.0).abs() <= 0.05);
    }
}
