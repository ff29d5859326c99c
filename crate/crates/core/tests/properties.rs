use adaptrack::lqt::{evaluate_policy, probe_states, project_input, solve_unconstrained_lqt, FeedbackLaw, LqtWeights};
use adaptrack::numeric::{max_real_eigenvalue, solve_lyapunov, Mat, TimeGrid, Vector};
use adaptrack::plant::{saturate, ExoSignal, Sinusoid};
use proptest::prelude::*;

fn mat2(v: [f64; 4]) -> Mat {
    Mat::from_row_slice(2, 2, &v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn saturation_stays_in_the_ball(u in prop::collection::vec(-1e3f64..1e3, 1..=8), u_max in 1e-3f64..1e3) {
        let u = Vector::from_vec(u);
        let s = saturate(&u, u_max);
        prop_assert!(s.norm() <= u_max * (1.0 + 1e-12));
        prop_assert!((saturate(&s, u_max) - &s).norm() <= 1e-12 * u_max);
        // same direction
        prop_assert!(s.dot(&u) >= 0.0);
    }

    #[test]
    fn projection_agrees_with_saturation(u in prop::collection::vec(-50f64..50.0, 2), r_u in 0.01f64..100.0, u_max in 0.1f64..20.0) {
        let w = LqtWeights::new(Mat::identity(2, 2), Mat::identity(2, 2) * r_u, Mat::zeros(2, 2)).unwrap();
        let u = Vector::from_vec(u);
        prop_assert_eq!(project_input(&u, &w, u_max).unwrap(), saturate(&u, u_max));
    }

    #[test]
    fn lyapunov_solution_is_symmetric_positive(a in prop::array::uniform4(-3f64..3.0), shift in 0.5f64..4.0) {
        let mut a = mat2(a);
        let bound = max_real_eigenvalue(&a).unwrap();
        a -= Mat::identity(2, 2) * (bound + shift);
        let q = Mat::identity(2, 2);
        let p = solve_lyapunov(&a, &q).unwrap();
        prop_assert_eq!(&p, &p.transpose());
        prop_assert!((a.transpose() * &p + &p * &a + &q).norm() <= 1e-9 * p.norm().max(1.0));
        prop_assert!(p.symmetric_eigenvalues().min() > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// No affine law beats the optimal one at any probe state.
    #[test]
    fn optimal_law_is_not_beaten(
        a in prop::array::uniform4(-1.5f64..1.5),
        dk in prop::array::uniform4(-1f64..1.0),
        dk0 in prop::array::uniform2(-1f64..1.0),
        amp in 0.0f64..2.0,
        omega in 0.5f64..4.0,
        q_f in 0.0f64..3.0,
    ) {
        let a = mat2(a);
        let bl = Mat::identity(2, 2);
        let w = LqtWeights::new(Mat::identity(2, 2) * 5.0, Mat::identity(2, 2), Mat::identity(2, 2) * q_f).unwrap();
        let x_d = ExoSignal::new(vec![
            vec![Sinusoid::new(amp, omega, 0.0)],
            vec![Sinusoid::new(amp, 2.0 * omega, 0.3)],
        ]).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 2e-3).unwrap();
        let (ctg, law) = solve_unconstrained_lqt(&a, &bl, &w, &x_d, &grid).unwrap();
        let other = law.map_gains(|_, k1, k0| (k1 + mat2(dk), k0 + Vector::from_row_slice(&dk0)));
        let worse = evaluate_policy(&other, &a, &bl, &w, &x_d, &grid).unwrap();
        for x in probe_states(2) {
            prop_assert!(worse.value(&x, 0) >= ctg.value(&x, 0) - 1e-6);
        }
    }

    /// The cost-to-go of a stabilising zero-reference law is non-negative.
    #[test]
    fn cost_to_go_is_non_negative(k in prop::array::uniform4(-2f64..2.0), x in prop::array::uniform2(-3f64..3.0)) {
        let a = mat2([1.0, 1.0, 0.0, 1.0]);
        let grid = TimeGrid::new(0.0, 1.0, 5e-3).unwrap();
        let w = LqtWeights::new(Mat::identity(2, 2), Mat::identity(2, 2), Mat::zeros(2, 2)).unwrap();
        let law = FeedbackLaw::constant(grid, mat2(k), Vector::zeros(2)).unwrap();
        let x_d = ExoSignal::constant(&[0.0, 0.0]).unwrap();
        let ctg = evaluate_policy(&law, &a, &Mat::identity(2, 2), &w, &x_d, &grid).unwrap();
        prop_assert!(ctg.value(&Vector::from_row_slice(&x), 0) >= -1e-9);
    }
}
