use mhinv_core::hmm::macro_mesh;
use mhinv_core::inversion::{fd_jacobian, lm_minimize, relative_error, LsqOptions};
use mhinv_core::microstructure::Bounds;
use mhinv_core::observation::{dtn_pairing, Medium};
use mhinv_core::SymTensor;
use proptest::prelude::*;

fn spd() -> impl Strategy<Value = SymTensor> {
    (0.2f64..3.0, 0.2f64..3.0, -0.8f64..0.8).prop_map(|(a, b, r)| SymTensor::new(a, r * (a * b).sqrt(), b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dtn_pairing_is_symmetric(
        tensors in prop::collection::vec(spd(), 128),
        g in 0.0f64..4.0,
        h in 0.0f64..4.0,
    ) {
        let mesh = macro_mesh(0.125).unwrap();
        let medium = Medium::new(&mesh, tensors).unwrap();
        let (gh, hg) = dtn_pairing(&medium, g, h).unwrap();
        prop_assert!((gh - hg).abs() <= 1e-10 * (1.0 + gh.abs()));
    }

    #[test]
    fn accepted_steps_decrease_the_residual(
        c in prop::collection::vec(-2.0f64..2.0, 6),
        x0 in prop::array::uniform2(-1.5f64..1.5),
    ) {
        let b = [Bounds::new(-3.0, 3.0), Bounds::new(-3.0, 3.0)];
        let r = |t: &[f64]| -> mhinv_core::Result<Vec<f64>> {
            Ok(vec![
                t[0] - c[0] + c[1] * t[1] * t[1],
                t[1] - c[2] + c[3] * t[0] * t[1],
                (c[4] * t[0]).sin() + c[5] * t[1],
            ])
        };
        let res = lm_minimize(r, &x0, &b, &LsqOptions::default()).unwrap();
        prop_assert!(res.history.windows(2).all(|w| w[1] < w[0]));
        prop_assert!(res.theta.iter().zip(&b).all(|(t, b)| b.contains(*t)));
        prop_assert!(res.residual <= res.history[0]);
    }

    #[test]
    fn fd_jacobian_matches_quadratic_derivative(
        q in prop::collection::vec(-2.0f64..2.0, 4),
        x in prop::array::uniform2(0.5f64..1.5),
    ) {
        let b = [Bounds::new(0.0, 2.0), Bounds::new(0.0, 2.0)];
        let f = |t: &[f64]| -> mhinv_core::Result<Vec<f64>> {
            Ok(vec![q[0] * t[0] * t[0] + q[1] * t[1], q[2] * t[0] * t[1] + q[3] * t[1] * t[1]])
        };
        let r0 = f(&x).unwrap();
        let jac = fd_jacobian(&f, &x, &r0, &b, 1e-6).unwrap();
        let exact = [[2.0 * q[0] * x[0], q[2] * x[1]], [q[1], q[2] * x[0] + 2.0 * q[3] * x[1]]];
        let scale = 1.0 + exact.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..2 {
            for i in 0..2 {
                prop_assert!((jac[k][i] - exact[k][i]).abs() <= 1e-5 * scale, "{jac:?} vs {exact:?}");
            }
        }
    }

    #[test]
    fn relative_error_vanishes_only_at_truth(a in prop::collection::vec(0.1f64..1.0, 1..6), d in 0.0f64..0.5) {
        prop_assert_eq!(relative_error(&a, &a), 0.0);
        let shifted: Vec<f64> = a.iter().map(|v| v + d).collect();
        let e = relative_error(&shifted, &a);
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((e - d * (a.len() as f64).sqrt() / norm).abs() <= 1e-12);
    }
}
