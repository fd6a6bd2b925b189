mod common;

use aiflab::estimator::SolveConfig;
use aiflab::regression::{leverages, regression_aif, RegressionData, RegressionScheme};
use common::normal_vec;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dataset(seed: u64, q: usize, n: usize) -> RegressionData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_vec(q, n, normal_vec(&mut rng, q * n));
    let noise = normal_vec(&mut rng, n);
    let y = DVector::from_fn(n, |k, _| {
        x.column(k)
            .iter()
            .enumerate()
            .map(|(i, v)| (i as f64 + 0.5) * v)
            .sum::<f64>()
            + noise[k]
    });
    RegressionData::new(x, y).unwrap()
}

/// OLS AIF straight from the normal equations: the row for sign vector `σ`
/// is `σᵀ(XXᵀ)⁻¹[rₙI − xₙθᵀ | xₙ]` over points `n`, and the radius counts
/// every perturbed coordinate.
fn ols_oracle(d: &RegressionData, p: f64) -> f64 {
    let (q, n) = (d.q(), d.n());
    let gram = &d.x * d.x.transpose();
    let theta = gram.clone().lu().solve(&(&d.x * &d.y)).unwrap();
    let inv = gram.try_inverse().unwrap();
    let dual = if p == 1.0 { f64::INFINITY } else { p / (p - 1.0) };
    let mut best: f64 = 0.0;
    for mask in 0..(1u32 << (q - 1)) {
        let sigma = DVector::from_fn(q, |i, _| if i > 0 && mask >> (i - 1) & 1 == 1 { -1.0 } else { 1.0 });
        let s = inv.transpose() * sigma;
        let mut entries = Vec::with_capacity(n * (q + 1));
        for k in 0..n {
            let xk = d.x.column(k);
            let r = d.y[k] - xk.dot(&theta);
            let sx = s.dot(&xk);
            for i in 0..q {
                entries.push(r * s[i] - sx * theta[i]);
            }
            entries.push(sx);
        }
        let norm = if dual.is_infinite() {
            entries.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        } else {
            entries.iter().map(|v| v.abs().powf(dual)).sum::<f64>().powf(1.0 / dual)
        };
        best = best.max(norm);
    }
    ((n * (q + 1)) as f64).powf(1.0 / p) * best
}

#[test]
fn ols_aif_matches_normal_equation_oracle() {
    for (seed, q, n) in [(1, 1, 30), (2, 2, 50), (3, 3, 40)] {
        let d = dataset(seed, q, n);
        for p in [1.0, 2.0, 3.0] {
            let got = regression_aif(&d, RegressionScheme::Ols, p, &SolveConfig::default())
                .unwrap()
                .aif;
            let want = ols_oracle(&d, p);
            assert!((got - want).abs() < 1e-9 * want, "q={q} p={p}: {got} vs {want}");
        }
    }
}

#[test]
fn huber_with_a_huge_clip_is_ols() {
    let d = dataset(5, 2, 60);
    let ols = regression_aif(&d, RegressionScheme::Ols, 2.0, &SolveConfig::default()).unwrap();
    let hub = regression_aif(&d, RegressionScheme::Huber { k: 1e6 }, 2.0, &SolveConfig::default()).unwrap();
    assert!((ols.aif - hub.aif).abs() < 1e-9 * ols.aif);
    for (a, b) in ols.theta.iter().zip(&hub.theta) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn leverages_sum_to_the_dimension() {
    let d = dataset(7, 3, 45);
    let h = leverages(&d).unwrap();
    let total: f64 = h.h_diag.iter().sum();
    assert!((total - 3.0).abs() < 1e-10, "{total}");
    assert!(h.h_diag.iter().all(|v| (0.0..1.0).contains(v)));
}

#[test]
fn schemes_solve_on_heavy_tailed_noise() {
    let mut d = dataset(11, 2, 80);
    for k in [3, 17, 42] {
        d.y[k] += 25.0;
    }
    for scheme in ["huber", "mallows", "schweppe"] {
        let s = RegressionScheme::parse(scheme, 1.345).unwrap();
        let rep = regression_aif(&d, s, 2.0, &SolveConfig::default()).unwrap();
        assert!(rep.aif.is_finite() && rep.aif > 0.0, "{scheme}");
        // Robust fits stay near the generating slope despite the outliers.
        assert!(
            (rep.theta[0] - 0.5).abs() < 0.4 && (rep.theta[1] - 1.5).abs() < 0.4,
            "{scheme}: {:?}",
            rep.theta
        );
    }
}

#[test]
fn unknown_scheme_is_a_config_error() {
    assert!(RegressionScheme::parse("lad", 1.0).is_err());
    assert!(RegressionScheme::parse("huber", -1.0).is_err());
}
