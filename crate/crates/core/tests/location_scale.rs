mod common;

use aiflab::density::{BaseDensity, Laplace, Normal};
use aiflab::estimator::SolveConfig;
use aiflab::location_scale::{
    huber_fisher_beta, huber_proposal2, huber_proposal2_set_form, huber_proposal2_stats, ls_aif, mean_std,
    population_aif, standardize, AbcdStats,
};
use common::normal_vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Closed form for Huber's proposal 2: with `p = P(|Z| ≤ K)` and
/// `m = E{Z²; |Z| ≤ K}`, the AIF² is `1/p + 1/m`.
fn huber2_closed_form(p: f64, m: f64) -> f64 {
    (1.0 / p + 1.0 / m).sqrt()
}

#[test]
fn huber2_population_aif_matches_closed_form_under_normal() {
    for k in [0.8, 1.5, 2.5] {
        let phi = Normal.pdf(k);
        let p = 2.0 * Normal.cdf(k) - 1.0;
        let m = p - 2.0 * k * phi;
        let spec = huber_proposal2(k, &Normal).unwrap();
        let got = population_aif(&spec, &Normal).unwrap().value;
        assert!((got - huber2_closed_form(p, m)).abs() < 1e-10, "K={k}: {got}");
    }
}

#[test]
fn huber2_population_aif_matches_closed_form_under_laplace() {
    for k in [1.0f64, 3.0, 5.0] {
        let e = (-k).exp();
        let p = 1.0 - e;
        let m = 2.0 - e * (k * k + 2.0 * k + 2.0);
        let spec = huber_proposal2(k, &Laplace).unwrap();
        let got = population_aif(&spec, &Laplace).unwrap().value;
        assert!((got - huber2_closed_form(p, m)).abs() < 1e-10, "K={k}: {got}");
    }
    let spec = huber_proposal2(3.0, &Laplace).unwrap();
    assert!((population_aif(&spec, &Laplace).unwrap().value - 1.3853636292).abs() < 1e-9);
}

#[test]
fn mean_std_population_aif_depends_on_the_variance() {
    // T1 = 1 and T2 = 1/Var(Z); the finite-sample value is √2 for any data.
    let v = population_aif(&mean_std(), &Normal).unwrap().value;
    assert!((v - 2f64.sqrt()).abs() < 1e-9);
    let v = population_aif(&mean_std(), &Laplace).unwrap().value;
    assert!((v - 1.5f64.sqrt()).abs() < 1e-9);
}

#[test]
fn set_form_sums_equal_pointwise_sums_at_the_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = normal_vec(&mut rng, 257);
    let k = 1.3;
    let spec = huber_proposal2(k, &Normal).unwrap();
    let beta = huber_fisher_beta(k, &Normal).unwrap();
    let theta = ls_aif(&spec, &data, 2.0, None, &SolveConfig::default()).unwrap().theta;
    let z = standardize(&data, &theta);
    let direct = AbcdStats::from_z(&spec, &z);
    for st in [
        huber_proposal2_stats(&z, k, k, beta).unwrap(),
        huber_proposal2_set_form(&z, k, k, beta).unwrap(),
    ] {
        for (u, v) in [(st.a, direct.a), (st.b, direct.b), (st.c, direct.c), (st.d, direct.d)] {
            assert!((u - v).abs() <= 1e-7 * (1.0 + v.abs()), "{u} vs {v}");
        }
    }
}

#[test]
fn sample_aif_approaches_population_value() {
    let k = 1.5;
    let spec = huber_proposal2(k, &Normal).unwrap();
    let pop = population_aif(&spec, &Normal).unwrap().value;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let data = normal_vec(&mut rng, 40_000);
    let rep = ls_aif(&spec, &data, 2.0, None, &SolveConfig::default()).unwrap();
    assert!((rep.aif - pop).abs() < 0.03 * pop, "{} vs {pop}", rep.aif);
}

#[test]
fn aif_is_location_and_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data = normal_vec(&mut rng, 60);
    let spec = huber_proposal2(1.2, &Normal).unwrap();
    let base = ls_aif(&spec, &data, 2.0, None, &SolveConfig::default()).unwrap().aif;
    let moved: Vec<f64> = data.iter().map(|x| 7.0 + 3.5 * x).collect();
    let other = ls_aif(&spec, &moved, 2.0, None, &SolveConfig::default()).unwrap().aif;
    assert!((base - other).abs() < 1e-8 * base, "{base} vs {other}");
}
