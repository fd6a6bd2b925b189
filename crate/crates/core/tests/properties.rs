use aiflab::aif::{aif_from_jacobians, kkt_certificate, StackedJacobians};
use aiflab::estimator::SolveConfig;
use aiflab::location_scale::{ls_aif, mean_std};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn dual_norm(v: &[f64], p: f64) -> f64 {
    if p == 1.0 {
        v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    } else {
        let d = p / (p - 1.0);
        v.iter().map(|x| x.abs().powf(d)).sum::<f64>().powf(1.0 / d)
    }
}

fn jacobians() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>, Vec<f64>)> {
    (1usize..=3, 1usize..=2, 2usize..=6).prop_flat_map(|(q, m, n)| {
        (
            Just(q),
            Just(m),
            Just(n),
            proptest::collection::vec(-2.0f64..2.0, q * q),
            proptest::collection::vec(-2.0f64..2.0, q * m * n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aif_is_the_best_sign_vector_and_the_attack_attains_it(
        (q, m, n, gt, gx) in jacobians(),
        p in prop_oneof![Just(1.0), Just(2.0), 1.2f64..4.0],
    ) {
        let mut g_theta = DMatrix::from_vec(q, q, gt);
        for i in 0..q {
            g_theta[(i, i)] += 4.0 * q as f64;
        }
        let g_x = DMatrix::from_vec(q, m * n, gx);
        let jac = StackedJacobians::new(g_theta.clone(), g_x.clone(), m, n).unwrap();
        let rep = aif_from_jacobians(&jac, p).unwrap();

        let mat = g_theta.try_inverse().unwrap() * g_x;
        let mut best: f64 = 0.0;
        for mask in 0..(1u32 << (q - 1)) {
            let row: Vec<f64> = (0..m * n)
                .map(|c| (0..q).map(|i| if i > 0 && mask >> (i - 1) & 1 == 1 { -mat[(i, c)] } else { mat[(i, c)] }).sum())
                .collect();
            best = best.max(dual_norm(&row, p));
        }
        let mn = (m * n) as f64;
        let want = mn.powf(1.0 / p) * best;
        prop_assert!((rep.aif - want).abs() <= 1e-9 * want.max(1e-12), "{} vs {}", rep.aif, want);

        // Hölder is tight at the reported perturbation.
        let gain: f64 = rep.a_vector.iter().zip(&rep.delta_x_unit).map(|(a, d)| a * d).sum();
        prop_assert!((gain.abs() - rep.aif).abs() <= 1e-8 * rep.aif.max(1e-12));
        prop_assert!(kkt_certificate(&rep).max_residual() < 1e-8);
    }

    #[test]
    fn mean_std_aif_is_root_two_for_any_sample(data in proptest::collection::vec(-50.0f64..50.0, 3..60)) {
        let spread = data.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - data.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        prop_assume!(spread > 1e-3);
        let rep = ls_aif(&mean_std(), &data, 2.0, None, &SolveConfig::default()).unwrap();
        prop_assert!((rep.aif - 2f64.sqrt()).abs() < 1e-9, "{}", rep.aif);
    }
}
