use nalgebra::{DMatrix, DVector};
use testkit::{min_eig, random_matrix, random_spd, random_vector, scalar_posterior_quadrature};
use viking_core::datagen::{gen_design, gen_misspecified, gen_wellspecified, DesignKind};
use viking_core::linalg::{inversion_count, reset_inversion_count};
use viking_core::transforms::phi_inverse;
use viking_core::viking::{viking_step, VarianceBeliefs, MA_FLOOR};
use viking_core::{
    kalman_run, kalman_step, viking_run, GaussianState, NoiseTransform, Schedule, VikingHyper,
    VikingInit, VikingState,
};

#[test]
fn scalar_kalman_matches_quadrature() {
    let mut rng = testkit::rng(31);
    for _ in 0..5 {
        let m = testkit::gaussian(&mut rng);
        let p = 0.2 + testkit::gaussian(&mut rng).abs();
        let k = 0.5 + 0.5 * testkit::gaussian(&mut rng).abs();
        let q = 0.1 + 0.3 * testkit::gaussian(&mut rng).abs();
        let s2 = 0.2 + testkit::gaussian(&mut rng).abs();
        let x = 1.0 + testkit::gaussian(&mut rng);
        let y = 2.0 * testkit::gaussian(&mut rng);
        let st = GaussianState::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, p))
            .unwrap();
        let out = kalman_step(
            &st,
            &DMatrix::from_element(1, 1, k),
            &DMatrix::from_element(1, 1, q),
            s2,
            &DVector::from_element(1, x),
            y,
        )
        .unwrap();
        let (qm, qv) = scalar_posterior_quadrature(m, p, k, q, s2, x, y);
        assert!(
            (out.state.mean[0] - qm).abs() < 1e-6,
            "{} vs {qm}",
            out.state.mean[0]
        );
        assert!((out.state.cov[(0, 0)] - qv).abs() < 1e-6);
    }
}

#[test]
fn kalman_posterior_never_exceeds_prior() {
    let mut rng = testkit::rng(32);
    for i in 0..100 {
        let d = 1 + i % 5;
        let k = random_matrix(&mut rng, d, d) * 0.5;
        let p = random_spd(&mut rng, d, 0.01, 2.0);
        let q = random_spd(&mut rng, d, 0.0, 0.5);
        let st = GaussianState::new(random_vector(&mut rng, d), p.clone()).unwrap();
        let x = random_vector(&mut rng, d);
        let out = kalman_step(&st, &k, &q, 0.7, &x, 1.3).unwrap();
        let prior = &k * &p * k.transpose() + &q;
        assert!(min_eig(&(prior - &out.state.cov)) >= -1e-12);
        assert!(min_eig(&out.state.cov) >= -1e-12);
    }
}

#[test]
fn constant_and_per_step_schedules_agree() {
    let design = gen_design(DesignKind::Iid, 50, 3);
    let data = gen_wellspecified(&design, 3);
    let k = DMatrix::identity(5, 5);
    let q = DMatrix::identity(5, 5) * 0.01;
    let init = GaussianState::isotropic(5, 1.0);
    let a = kalman_run(
        &data,
        &k,
        &Schedule::Constant(q.clone()),
        &Schedule::Constant(0.5),
        init.clone(),
    )
    .unwrap();
    let b = kalman_run(
        &data,
        &k,
        &Schedule::PerStep(vec![q; 50]),
        &Schedule::PerStep(vec![0.5; 50]),
        init,
    )
    .unwrap();
    assert_eq!(a, b);
}

fn frozen_viking(d: usize, q: f64, sigma2: f64, k: DMatrix<f64>) -> (VikingHyper, VikingState) {
    let t = NoiseTransform::scalar(d);
    let mut hyper = VikingHyper::new(t, k);
    hyper.rho_a = 0.0;
    hyper.rho_b = 0.0;
    hyper.learn_a = false;
    hyper.learn_b = false;
    let beliefs = VarianceBeliefs {
        a_hat: sigma2.ln(),
        s: 0.0,
        b_hat: DVector::from_element(1, phi_inverse(q)),
        sigma: DMatrix::zeros(1, 1),
    };
    (
        hyper,
        VikingState::new(GaussianState::isotropic(d, 1.0), beliefs, 0),
    )
}

#[test]
fn frozen_viking_is_the_kalman_filter() {
    for seed in 0..10u64 {
        let mut rng = testkit::rng(seed);
        let k = DMatrix::identity(5, 5) + random_matrix(&mut rng, 5, 5) * 0.05;
        let (q, sigma2) = (0.05, 0.8);
        let (hyper, mut st) = frozen_viking(5, q, sigma2, k.clone());
        let mut kf = GaussianState::isotropic(5, 1.0);
        let q_mat = DMatrix::identity(5, 5) * q;
        for x in gen_design(DesignKind::Iid, 200, seed) {
            let y = testkit::gaussian(&mut rng);
            let rec = viking_step(&mut st, &hyper, &x, y).unwrap();
            let out = kalman_step(&kf, &k, &q_mat, sigma2, &x, y).unwrap();
            assert!((rec.forecast - out.prediction).abs() < 1e-10);
            assert!((&st.state.mean - &out.state.mean).amax() < 1e-10);
            assert!((&st.state.cov - &out.state.cov).amax() < 1e-10);
            kf = out.state;
        }
    }
}

#[test]
fn extra_passes_change_nothing_when_variances_are_frozen() {
    let k = DMatrix::identity(3, 3);
    let (mut one, mut st1) = frozen_viking(3, 0.1, 1.0, k);
    one.n_iter = 1;
    let mut two = one.clone();
    two.n_iter = 2;
    let mut st2 = st1.clone();
    let mut rng = testkit::rng(5);
    for _ in 0..50 {
        let x = random_vector(&mut rng, 3);
        let y = testkit::gaussian(&mut rng);
        viking_step(&mut st1, &one, &x, y).unwrap();
        viking_step(&mut st2, &two, &x, y).unwrap();
        assert!((&st1.state.mean - &st2.state.mean).amax() < 1e-12);
    }
}

#[test]
fn inversions_per_step_follow_the_complexity_contract() {
    let design = gen_design(DesignKind::NonIid, 20, 8);
    let data = gen_misspecified(&design, 8);
    for t in [NoiseTransform::scalar(5), NoiseTransform::diagonal(5)] {
        for (n_iter, n_mc) in [(1, 1), (2, 10), (3, 4)] {
            let mut hyper = VikingHyper::new(t, DMatrix::identity(5, 5));
            hyper.n_iter = n_iter;
            hyper.n_mc = n_mc;
            let mut st = VikingState::initial(&VikingInit::default(), &t, 1);
            for (x, &y) in data.x.iter().zip(&data.y) {
                reset_inversion_count();
                viking_step(&mut st, &hyper, x, y).unwrap();
                assert_eq!(inversion_count(), (n_iter * (n_mc + 4)) as u64);
            }
        }
    }
}

#[test]
fn learned_beliefs_respect_their_constraints() {
    let design = gen_design(DesignKind::NonIid, 300, 9);
    let data = gen_misspecified(&design, 9);
    for t in [NoiseTransform::scalar(5), NoiseTransform::diagonal(5)] {
        let mut hyper = VikingHyper::new(t, DMatrix::identity(5, 5));
        hyper.rho_a = (-4.0f64).exp();
        hyper.rho_b = (-4.0f64).exp();
        let mut st = VikingState::initial(&VikingInit::default(), &t, 2);
        let m = t.latent_dim();
        for (x, &y) in data.x.iter().zip(&data.y) {
            let before = st.beliefs.clone();
            let kpk = st.state.cov.clone();
            viking_step(&mut st, &hyper, x, y).unwrap();
            let b = &st.beliefs;
            let s_prior = before.s + hyper.rho_a;
            assert!(b.s > 0.0 && b.s <= s_prior * (1.0 + 1e-12));
            let m_a = (3.0 * before.s).max(MA_FLOOR);
            assert!((b.a_hat - before.a_hat).abs() <= m_a * (1.0 + 1e-12));
            let sigma_prior = &before.sigma + DMatrix::identity(m, m) * hyper.rho_b;
            assert!(min_eig(&(sigma_prior - &b.sigma)) >= -1e-12);
            assert!(b.b_hat.iter().all(|&v| v >= 1e-8));
            assert!(min_eig(&st.state.cov) >= -1e-12);
            // never more uncertain than the prior with the largest plug-in noise
            let loose = kpk + t.apply(&b.b_hat.map(|v| v + 10.0)).unwrap();
            assert!(min_eig(&(loose - &st.state.cov)) >= -1e-12);
        }
    }
}

#[test]
fn runs_are_reproducible_and_resumable() {
    let design = gen_design(DesignKind::Iid, 120, 4);
    let data = gen_wellspecified(&design, 4);
    let t = NoiseTransform::diagonal(5);
    let hyper = VikingHyper::new(t, DMatrix::identity(5, 5));
    let init = VikingState::initial(&VikingInit::default(), &t, 17);
    let a = viking_run(&data, &hyper, init.clone()).unwrap();
    let b = viking_run(&data, &hyper, init.clone()).unwrap();
    assert_eq!(a, b);

    let mut st = init;
    for (x, &y) in data.x.iter().zip(&data.y).take(60) {
        viking_step(&mut st, &hyper, x, y).unwrap();
    }
    let mut resumed = VikingState::restore(&st.checkpoint()).unwrap();
    for (i, (x, &y)) in data.x.iter().zip(&data.y).enumerate().skip(60) {
        let rec = viking_step(&mut resumed, &hyper, x, y).unwrap();
        assert_eq!(rec.forecast, a[i].forecast);
        assert_eq!(rec.a_hat, a[i].a_hat);
        assert_eq!(rec.b_hat, a[i].b_hat);
    }
}

#[test]
fn second_half_error_is_accumulated() {
    let design = gen_design(DesignKind::Iid, 11, 6);
    let data = gen_wellspecified(&design, 6);
    let t = NoiseTransform::scalar(5);
    let hyper = VikingHyper::new(t, DMatrix::identity(5, 5));
    let trace = viking_run(
        &data,
        &hyper,
        VikingState::initial(&VikingInit::default(), &t, 1),
    )
    .unwrap();
    let mut acc = 0.0;
    for r in &trace {
        if r.t > 5 {
            acc += r.residual * r.residual;
        }
        assert_eq!(r.cum_sq_err, acc);
    }
}

#[test]
fn errors_carry_the_failing_step() {
    let t = NoiseTransform::scalar(2);
    let hyper = VikingHyper::new(t, DMatrix::identity(2, 2));
    let mut st = VikingState::initial(&VikingInit::default(), &t, 0);
    let x = DVector::from_vec(vec![1.0, 0.0]);
    viking_step(&mut st, &hyper, &x, 0.3).unwrap();
    let err = viking_step(&mut st, &hyper, &x, f64::NAN).unwrap_err();
    assert!(err.to_string().contains("step 2"), "{err}");
}
