//! Joint location-scale M-estimation: `Σ ψ₁(zₙ) = 0`, `Σ ψ₂(zₙ) = 0` with
//! `zₙ = (xₙ − T_N)/S_N`, `ψ₁` odd and `ψ₂` even.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::aif::{unit_attack, validate_p, AifReport};
use crate::data::DataMatrix;
use crate::density::BaseDensity;
use crate::error::{AifError, Result};
use crate::estimator::{solve, MEstimatorSpec, SolveConfig, StartRule};
use crate::numerics::{dual_exponent, integrate_pieces, lp_norm, MonotoneCubic, QuadOptions};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct LocationScaleSpec {
    pub name: String,
    pub psi1: ScalarFn,
    pub dpsi1: ScalarFn,
    pub psi2: ScalarFn,
    pub dpsi2: ScalarFn,
    /// Points `z > 0` where a derivative jumps.
    pub kinks: Vec<f64>,
}

impl fmt::Debug for LocationScaleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LocationScaleSpec")
            .field("name", &self.name)
            .field("kinks", &self.kinks)
            .finish()
    }
}

impl LocationScaleSpec {
    /// Checks oddness/evenness and nonnegative derivatives on `z ≥ 0` at the
    /// given points.
    pub fn check_shape(&self, grid: &[f64]) -> Result<()> {
        for &z in grid {
            let z = z.abs();
            let odd = ((self.psi1)(-z) + (self.psi1)(z)).abs();
            let even = ((self.psi2)(-z) - (self.psi2)(z)).abs();
            if odd > 1e-12 || even > 1e-12 {
                return Err(AifError::Config(format!(
                    "{}: symmetry violated at z = {z} (psi1 {odd:.2e}, psi2 {even:.2e})",
                    self.name
                )));
            }
            if (self.dpsi1)(z) < -1e-12 || (self.dpsi2)(z) < -1e-12 {
                return Err(AifError::Config(format!(
                    "{}: negative derivative at z = {z}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// The equivalent generic estimator with `m = 1`, `q = 2`.
    pub fn to_estimator(&self) -> MEstimatorSpec {
        let (p1, p2) = (self.psi1.clone(), self.psi2.clone());
        let (d1, d2) = (self.dpsi1.clone(), self.dpsi2.clone());
        let (e1, e2) = (self.dpsi1.clone(), self.dpsi2.clone());
        MEstimatorSpec {
            name: self.name.clone(),
            m: 1,
            q: 2,
            psi: Arc::new(move |x, t| {
                let z = (x[0] - t[0]) / t[1];
                vec![p1(z), p2(z)]
            }),
            psi_jac_theta: Arc::new(move |x, t| {
                let s = t[1];
                let z = (x[0] - t[0]) / s;
                let (g1, g2) = (d1(z), d2(z));
                DMatrix::from_row_slice(2, 2, &[-g1 / s, -z * g1 / s, -g2 / s, -z * g2 / s])
            }),
            psi_jac_x: Arc::new(move |x, t| {
                let s = t[1];
                let z = (x[0] - t[0]) / s;
                DMatrix::from_row_slice(2, 1, &[e1(z) / s, e2(z) / s])
            }),
            start: StartRule::MedianMad,
            positive_param: Some(1),
        }
    }
}

/// The coupled sample mean and (1/N) standard deviation: `ψ₁ = z`, `ψ₂ = z² − 1`.
pub fn mean_std() -> LocationScaleSpec {
    LocationScaleSpec {
        name: "meanstd".into(),
        psi1: Arc::new(|z| z),
        dpsi1: Arc::new(|_| 1.0),
        psi2: Arc::new(|z| z * z - 1.0),
        dpsi2: Arc::new(|z| 2.0 * z),
        kinks: Vec::new(),
    }
}

/// `ψ₁ = max(−K, min(K, z))`, `ψ₂ = min(α², z²) − β`.
///
/// Derivatives at the clip points take the interior value.
pub fn huber_scale(k: f64, alpha: f64, beta: f64) -> Result<LocationScaleSpec> {
    if !(k > 0.0 && alpha > 0.0 && beta > 0.0 && beta < alpha * alpha) {
        return Err(AifError::Config(format!(
            "need K > 0, alpha > 0 and 0 < beta < alpha^2 (got K = {k}, alpha = {alpha}, beta = {beta})"
        )));
    }
    let a2 = alpha * alpha;
    let mut kinks = vec![k, alpha];
    kinks.dedup();
    Ok(LocationScaleSpec {
        name: format!("huber2(K={k},alpha={alpha},beta={beta})"),
        psi1: Arc::new(move |z| z.clamp(-k, k)),
        dpsi1: Arc::new(move |z| if z.abs() <= k { 1.0 } else { 0.0 }),
        psi2: Arc::new(move |z| (z * z).min(a2) - beta),
        dpsi2: Arc::new(move |z| if z * z <= a2 { 2.0 * z } else { 0.0 }),
        kinks,
    })
}

/// `E_{F₀}[min(K², Z²)]`, the Fisher-consistent `β` for Huber's Proposal 2.
pub fn huber_fisher_beta(k: f64, f0: &dyn BaseDensity) -> Result<f64> {
    let mut breaks = f0.kinks();
    breaks.push(k);
    Ok(2.0 * integrate_pieces(|z| (z * z).min(k * k) * f0.pdf(z), 0.0, &breaks, f0.support_end(), QUAD)?)
}

/// Huber's Proposal 2 (`α = K`) with Fisher-consistent `β` under `f₀`.
pub fn huber_proposal2(k: f64, f0: &dyn BaseDensity) -> Result<LocationScaleSpec> {
    let beta = huber_fisher_beta(k, f0)?;
    let mut spec = huber_scale(k, k, beta)?;
    spec.name = format!("huber2(K={k})");
    Ok(spec)
}

/// A spec built from tabulated derivatives on `z ≥ 0`.
///
/// `ψ₁(z) = sign(z)∫₀^{|z|}ψ₁′` and `ψ₂(z) = ψ₂(0) + ∫₀^{|z|}ψ₂′`. Beyond the
/// table, `tail` supplies the derivatives and values are continued by
/// quadrature; without a tail those evaluations are NaN, which surfaces as a
/// numerics error in the solver.
#[derive(Clone)]
pub struct TabulatedPsi {
    pub dpsi1: Arc<MonotoneCubic>,
    pub dpsi2: Arc<MonotoneCubic>,
    pub psi2_at_zero: f64,
    pub tail: Option<Arc<dyn Fn(f64) -> [f64; 2] + Send + Sync>>,
}

impl TabulatedPsi {
    fn upper(&self) -> f64 {
        self.dpsi1.upper().min(self.dpsi2.upper())
    }

    fn tail_integral(&self, z: f64, which: usize) -> f64 {
        let top = self.upper();
        match &self.tail {
            None => f64::NAN,
            Some(t) => {
                let t = t.clone();
                crate::numerics::integrate(move |s| t(s)[which], top, z, QUAD)
                    .map(|r| r.value)
                    .unwrap_or(f64::NAN)
            }
        }
    }

    fn d(&self, z: f64, which: usize) -> f64 {
        let a = z.abs();
        if a <= self.upper() {
            if which == 0 {
                self.dpsi1.eval(a)
            } else {
                self.dpsi2.eval(a)
            }
        } else {
            self.tail.as_ref().map_or(f64::NAN, |t| t(a)[which])
        }
    }

    fn big(&self, z: f64, which: usize) -> f64 {
        let a = z.abs();
        let top = self.upper();
        let curve = if which == 0 { &self.dpsi1 } else { &self.dpsi2 };
        if a <= top {
            curve.integral(a)
        } else {
            curve.integral(top) + self.tail_integral(a, which)
        }
    }

    pub fn into_spec(self, name: &str, kinks: Vec<f64>) -> LocationScaleSpec {
        let t = Arc::new(self);
        let (a, b, c, d) = (t.clone(), t.clone(), t.clone(), t);
        LocationScaleSpec {
            name: name.to_string(),
            psi1: Arc::new(move |z| z.signum() * a.big(z, 0)),
            dpsi1: Arc::new(move |z| b.d(z, 0)),
            psi2: Arc::new(move |z| c.psi2_at_zero + c.big(z, 1)),
            dpsi2: Arc::new(move |z| z.signum() * d.d(z, 1)),
            kinks,
        }
    }
}

const QUAD: QuadOptions = QuadOptions {
    abs_tol: 1e-12,
    rel_tol: 1e-12,
    max_subdivisions: 4000,
};

/// `a = Σψ₁′(zₙ)`, `b = Σzₙψ₁′(zₙ)`, `c = Σψ₂′(zₙ)`, `d = Σzₙψ₂′(zₙ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbcdStats {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl AbcdStats {
    pub fn from_z(spec: &LocationScaleSpec, z: &[f64]) -> Self {
        let mut s = AbcdStats {
            a: 0.0,
            b: 0.0,
            c: 0.0,
            d: 0.0,
        };
        for &zn in z {
            let (g1, g2) = ((spec.dpsi1)(zn), (spec.dpsi2)(zn));
            s.a += g1;
            s.b += zn * g1;
            s.c += g2;
            s.d += zn * g2;
        }
        s
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn check_nondegenerate(&self, n: usize) -> Result<()> {
        let det = self.det();
        let n2 = (n * n) as f64;
        if !(det.abs() >= 1e-12 * n2) {
            return Err(AifError::DegenerateEstimate(format!(
                "|ad - bc| = {:.3e} is below 1e-12 N^2",
                det.abs()
            )));
        }
        Ok(())
    }
}

pub fn standardize(data: &[f64], theta: &[f64]) -> Vec<f64> {
    data.iter().map(|x| (x - theta[0]) / theta[1]).collect()
}

/// Closed-form finite-sample AIF of a location-scale estimator.
///
/// Solves for `(T_N, S_N)` unless `theta` is given. For `p = 1` the max-norm
/// form is used.
pub fn ls_aif(
    spec: &LocationScaleSpec,
    data: &[f64],
    p: f64,
    theta: Option<&[f64]>,
    cfg: &SolveConfig,
) -> Result<AifReport> {
    validate_p(p)?;
    let n = data.len();
    let theta = match theta {
        Some(t) => t.to_vec(),
        None => {
            let dm = DataMatrix::from_scalars(data)?;
            solve(&spec.to_estimator(), &dm, cfg)?.into_vec()
        }
    };
    let z = standardize(data, &theta);
    let st = AbcdStats::from_z(spec, &z);
    st.check_nondegenerate(n)?;
    let det = st.det();
    let g1: Vec<f64> = z.iter().map(|&v| (spec.dpsi1)(v)).collect();
    let g2: Vec<f64> = z.iter().map(|&v| (spec.dpsi2)(v)).collect();
    let dual = dual_exponent(p);
    let row = |s2: f64| -> Vec<f64> {
        g1.iter()
            .zip(&g2)
            .map(|(u, v)| -((st.d - s2 * st.c) * u + (s2 * st.a - st.b) * v) / det)
            .collect()
    };
    let (ra, rb) = (row(1.0), row(-1.0));
    let (va, vb) = (lp_norm(&ra, dual), lp_norm(&rb, dual));
    let best = va.max(vb);
    let mut maximizing = Vec::new();
    if va >= best * (1.0 - 1e-12) {
        maximizing.push(vec![1, 1]);
    }
    if vb >= best * (1.0 - 1e-12) {
        maximizing.push(vec![1, -1]);
    }
    let a = if va >= best * (1.0 - 1e-12) { ra } else { rb };
    let (unit, ties) = unit_attack(&a, p, n as f64);
    Ok(AifReport {
        aif: (n as f64).powf(1.0 / p) * best,
        p,
        m: 1,
        n,
        sigma_star: maximizing[0].clone(),
        maximizing_sigmas: maximizing,
        a_vector: a,
        delta_x_unit: unit,
        argmax_ties: ties,
        budget_delta: 1.0,
        theta,
        condition_number: f64::NAN,
    })
}

/// The four sums for Huber-type estimators, straight from set
/// membership: `𝒜 = {|z| ≤ K}`, `𝓑 = {z² ≤ α²}`.
pub fn huber_proposal2_stats(z: &[f64], k: f64, alpha: f64, beta: f64) -> Result<AbcdStats> {
    let _ = beta;
    let in_a: Vec<&f64> = z.iter().filter(|v| v.abs() <= k).collect();
    if in_a.is_empty() {
        return Err(AifError::DegenerateEstimate(format!("every |z| exceeds K = {k}")));
    }
    let in_b: Vec<&f64> = z.iter().filter(|v| *v * *v <= alpha * alpha).collect();
    Ok(AbcdStats {
        a: in_a.len() as f64,
        b: in_a.iter().copied().sum(),
        c: 2.0 * in_b.iter().copied().sum::<f64>(),
        d: 2.0 * in_b.iter().map(|v| *v * *v).sum::<f64>(),
    })
}

/// The same sums rewritten through the estimating equations; equal to
/// [`huber_proposal2_stats`] only at a solution `(T_N, S_N)`:
/// `b = K(|𝒜₋| − |𝒜₊|)` and `d = 2(Nβ − |𝓑̄|α²)`.
pub fn huber_proposal2_set_form(z: &[f64], k: f64, alpha: f64, beta: f64) -> Result<AbcdStats> {
    let mut st = huber_proposal2_stats(z, k, alpha, beta)?;
    let below = z.iter().filter(|v| **v < -k).count() as f64;
    let above = z.iter().filter(|v| **v > k).count() as f64;
    let outside_b = z.iter().filter(|v| *v * *v > alpha * alpha).count() as f64;
    st.b = k * (below - above);
    st.d = 2.0 * (z.len() as f64 * beta - outside_b * alpha * alpha);
    Ok(st)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PopulationAif {
    pub value: f64,
    pub e_dpsi1: f64,
    pub e_dpsi1_sq: f64,
    pub e_z_dpsi2: f64,
    pub e_dpsi2_sq: f64,
}

fn breaks_for(spec: &LocationScaleSpec, f0: &dyn BaseDensity) -> Vec<f64> {
    let mut b = spec.kinks.clone();
    b.extend(f0.kinks());
    b
}

/// `E{g(Z)}` for an even integrand `g`, folded onto the half line.
fn even_expectation<G: Fn(f64) -> f64>(g: G, spec: &LocationScaleSpec, f0: &dyn BaseDensity) -> Result<f64> {
    let breaks = breaks_for(spec, f0);
    Ok(2.0 * integrate_pieces(|z| g(z) * f0.pdf(z), 0.0, &breaks, f0.support_end(), QUAD)?)
}

/// `AIF(ψ, F₀, 2) = √(Eψ₁′²/(Eψ₁′)² + Eψ₂′²/(E Zψ₂′)²)`.
pub fn population_aif(spec: &LocationScaleSpec, f0: &dyn BaseDensity) -> Result<PopulationAif> {
    let e_dpsi1 = even_expectation(|z| (spec.dpsi1)(z), spec, f0)?;
    let e_dpsi1_sq = even_expectation(|z| (spec.dpsi1)(z).powi(2), spec, f0)?;
    let e_z_dpsi2 = even_expectation(|z| z * (spec.dpsi2)(z), spec, f0)?;
    let e_dpsi2_sq = even_expectation(|z| (spec.dpsi2)(z).powi(2), spec, f0)?;
    if e_dpsi1 == 0.0 || e_z_dpsi2 == 0.0 {
        return Err(AifError::DegenerateEstimate(
            "E psi1' or E Z psi2' vanishes under f0".into(),
        ));
    }
    let value = (e_dpsi1_sq / (e_dpsi1 * e_dpsi1) + e_dpsi2_sq / (e_z_dpsi2 * e_z_dpsi2)).sqrt();
    Ok(PopulationAif {
        value,
        e_dpsi1,
        e_dpsi1_sq,
        e_z_dpsi2,
        e_dpsi2_sq,
    })
}

/// `E{Zψ₁′(Z)}`, `E{ψ₂′(Z)}` and `E{ψ₁′(Z)ψ₂′(Z)}` integrated over the whole
/// line without folding; each vanishes for symmetric `f₀`.
pub fn population_odd_moments(spec: &LocationScaleSpec, f0: &dyn BaseDensity) -> Result<[f64; 3]> {
    let breaks = breaks_for(spec, f0);
    let whole = |g: &dyn Fn(f64) -> f64| -> Result<f64> {
        let right = integrate_pieces(|z| g(z) * f0.pdf(z), 0.0, &breaks, f0.support_end(), QUAD)?;
        let left = integrate_pieces(|z| g(-z) * f0.pdf(-z), 0.0, &breaks, f0.support_end(), QUAD)?;
        Ok(right + left)
    };
    Ok([
        whole(&|z| z * (spec.dpsi1)(z))?,
        whole(&|z| (spec.dpsi2)(z))?,
        whole(&|z| (spec.dpsi1)(z) * (spec.dpsi2)(z))?,
    ])
}

/// One finite-sample AIF (`p = 2`) on `n` fresh draws from `f₀`.
pub fn sample_ls_aif(spec: &LocationScaleSpec, f0: &dyn BaseDensity, n: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    if n < 2 {
        return Err(AifError::Config(format!(
            "need N >= 2 to estimate location and scale, got {n}"
        )));
    }
    let data: Vec<f64> = (0..n).map(|_| f0.sample(rng)).collect();
    Ok(ls_aif(spec, &data, 2.0, None, &SolveConfig::default())?.aif)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub finite: f64,
    pub population: f64,
    pub abs_error: f64,
}

/// Finite-sample AIF at each `N` against the population limit. Each `N`
/// draws from its own stream of the master seed.
pub fn monte_carlo_population_check(
    spec: &LocationScaleSpec,
    f0: &dyn BaseDensity,
    n_grid: &[usize],
    seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    if let Some(bad) = n_grid.iter().find(|n| **n < 2) {
        return Err(AifError::Config(format!(
            "N = {bad} leaves location and scale underdetermined"
        )));
    }
    let population = population_aif(spec, f0)?.value;
    n_grid
        .par_iter()
        .map(|&n| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(n as u64);
            let finite = sample_ls_aif(spec, f0, n, &mut rng)?;
            Ok(ConvergenceRow {
                n,
                finite,
                population,
                abs_error: (finite - population).abs(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{Laplace, Normal};

    #[test]
    fn mean_std_closed_form() {
        let data = [0.3, -1.2, 2.2, 0.9, 4.0, -0.1];
        let r = ls_aif(&mean_std(), &data, 2.0, None, &SolveConfig::default()).unwrap();
        assert!((r.aif - 2f64.sqrt()).abs() < 1e-12, "{}", r.aif);
        let r3 = ls_aif(&mean_std(), &data, 3.0, None, &SolveConfig::default()).unwrap();
        let z = standardize(&data, &r3.theta);
        let expect = [1.0, -1.0]
            .iter()
            .map(|s| (z.iter().map(|v| (1.0 + s * v).abs().powf(1.5)).sum::<f64>() / z.len() as f64).powf(1.0 / 1.5))
            .fold(0.0f64, f64::max);
        assert!((r3.aif - expect).abs() < 1e-12);
    }

    #[test]
    fn population_mean_std_is_sqrt2() {
        let v = population_aif(&mean_std(), &Normal).unwrap().value;
        assert!((v - 2f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn fisher_beta_laplace_closed_form() {
        let k: f64 = 1.7;
        let beta = huber_fisher_beta(k, &Laplace).unwrap();
        assert!((beta - (2.0 - (2.0 * k + 2.0) * (-k).exp())).abs() < 1e-12);
    }

    #[test]
    fn odd_moments_vanish() {
        let spec = huber_proposal2(1.5, &Normal).unwrap();
        for v in population_odd_moments(&spec, &Normal).unwrap() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn shape_check_catches_asymmetry() {
        let mut bad = mean_std();
        bad.psi1 = Arc::new(|z| z + 0.1);
        assert!(bad.check_shape(&[0.5]).is_err());
        assert!(mean_std().check_shape(&[0.0, 0.5, 3.0]).is_ok());
    }

    #[test]
    fn one_point_is_rejected() {
        let e = monte_carlo_population_check(&mean_std(), &Normal, &[1], 0).unwrap_err();
        assert_eq!(e.kind(), "ConfigError");
    }
}
