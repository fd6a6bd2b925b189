//! The adversarial influence function of a general M-estimator and the
//! adversary's optimal `ℓp` perturbation.
//!
//! With `M = [G'_θ]⁻¹ G'_X` and `a(σ) = σᵀM`,
//! `AIF = (mN)^{1/p} · max_σ ‖a(σ)‖_{p/(p−1)}` over sign vectors `σ`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::data::DataMatrix;
use crate::error::{AifError, Result};
use crate::estimator::{condition_number, solve, EstimatingEquations, SolveConfig, SINGULAR_CONDITION, WARN_CONDITION};
use crate::numerics::{dual_exponent, lp_norm};

/// Largest `q` for which all `2^{q−1}` sign vectors are enumerated.
pub const MAX_SIGN_DIM: usize = 20;
const TIE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct StackedJacobians {
    /// `∂G/∂θ` at `(X, t_N)`, `q × q`.
    pub g_theta: DMatrix<f64>,
    /// `∂G/∂Vec(X)`, `q × mN`.
    pub g_x: DMatrix<f64>,
    pub m: usize,
    pub n: usize,
    pub condition: f64,
}

impl StackedJacobians {
    pub fn new(g_theta: DMatrix<f64>, g_x: DMatrix<f64>, m: usize, n: usize) -> Result<Self> {
        let q = g_theta.nrows();
        if g_theta.ncols() != q || g_x.nrows() != q || g_x.ncols() != m * n {
            return Err(AifError::Dimension(format!(
                "Jacobian shapes {}x{} and {}x{} do not fit q = {q}, m = {m}, N = {n}",
                g_theta.nrows(),
                g_theta.ncols(),
                g_x.nrows(),
                g_x.ncols()
            )));
        }
        if g_theta.iter().chain(g_x.iter()).any(|v| !v.is_finite()) {
            return Err(AifError::Numerics("non-finite Jacobian entry".into()));
        }
        let condition = condition_number(&g_theta);
        if (WARN_CONDITION..SINGULAR_CONDITION).contains(&condition) {
            tracing::warn!(condition, "dG/dtheta is ill-conditioned");
        }
        Ok(Self {
            g_theta,
            g_x,
            m,
            n,
            condition,
        })
    }

    pub fn q(&self) -> usize {
        self.g_theta.nrows()
    }

    /// `t'_N(X) = −[G'_θ]⁻¹ G'_X`.
    pub fn estimator_derivative(&self) -> Result<DMatrix<f64>> {
        Ok(-self.influence_matrix()?)
    }

    /// `[G'_θ]⁻¹ G'_X`, via a full-pivoting LU.
    pub fn influence_matrix(&self) -> Result<DMatrix<f64>> {
        if !(self.condition < SINGULAR_CONDITION) {
            return Err(AifError::SingularJacobian {
                condition: self.condition,
            });
        }
        self.g_theta
            .clone()
            .full_piv_lu()
            .solve(&self.g_x)
            .ok_or(AifError::SingularJacobian {
                condition: self.condition,
            })
    }
}

pub fn assemble_jacobians(eq: &dyn EstimatingEquations, data: &DataMatrix, t_n: &[f64]) -> Result<StackedJacobians> {
    let g_theta = eq.jacobian_theta(data, t_n)?;
    let g_x = eq.jacobian_data(data, t_n)?;
    StackedJacobians::new(g_theta, g_x, data.m(), data.n())
}

#[derive(Debug, Clone, Serialize)]
pub struct AifReport {
    pub aif: f64,
    pub p: f64,
    pub m: usize,
    pub n: usize,
    pub sigma_star: Vec<i8>,
    /// Every sign vector (with first entry +1) attaining the maximum.
    pub maximizing_sigmas: Vec<Vec<i8>>,
    /// `a = σ*ᵀ [G'_θ]⁻¹ G'_X`, point-major.
    pub a_vector: Vec<f64>,
    /// Optimal perturbation for `δ = 1`, point-major.
    pub delta_x_unit: Vec<f64>,
    /// For `p = 1`: flat indices tied for `max |a|` (the first one is used).
    pub argmax_ties: Vec<usize>,
    pub budget_delta: f64,
    pub theta: Vec<f64>,
    pub condition_number: f64,
}

impl AifReport {
    /// The attack for budget `delta` as an `m × N` matrix.
    pub fn attack_matrix(&self, delta: f64) -> Result<DMatrix<f64>> {
        let flat = synthesize_attack(self, delta)?;
        Ok(DMatrix::from_vec(self.m, self.n, flat))
    }

    /// JSON payload; the attack is listed row by row (`m` rows of length `N`).
    pub fn to_json(&self, delta: f64) -> Result<serde_json::Value> {
        let attack = self.attack_matrix(delta)?;
        let rows: Vec<Vec<f64>> = (0..self.m).map(|i| attack.row(i).iter().copied().collect()).collect();
        Ok(json!({
            "aif": self.aif,
            "p": self.p,
            "m": self.m,
            "n": self.n,
            "theta": self.theta,
            "sigma_star": self.sigma_star,
            "maximizing_sigmas": self.maximizing_sigmas,
            "delta": delta,
            "attack": rows,
            "argmax_ties": self.argmax_ties,
            "condition_number": self.condition_number,
        }))
    }
}

pub fn validate_p(p: f64) -> Result<()> {
    if p.is_finite() && p >= 1.0 {
        Ok(())
    } else {
        Err(AifError::PNotSupported(p))
    }
}

fn sign_vector(q: usize, k: usize) -> Vec<f64> {
    let mut s = vec![1.0; q];
    for (j, sj) in s.iter_mut().enumerate().skip(1) {
        if (k >> (j - 1)) & 1 == 1 {
            *sj = -1.0;
        }
    }
    s
}

fn row_combination(m: &DMatrix<f64>, sigma: &[f64]) -> Vec<f64> {
    (0..m.ncols())
        .map(|c| sigma.iter().enumerate().map(|(r, s)| s * m[(r, c)]).sum())
        .collect()
}

/// Closed-form evaluation from precomputed Jacobians.
pub fn aif_from_jacobians(jac: &StackedJacobians, p: f64) -> Result<AifReport> {
    validate_p(p)?;
    let q = jac.q();
    if q > MAX_SIGN_DIM {
        return Err(AifError::CombinatorialLimit(format!(
            "q = {q} needs 2^{} sign vectors; the limit is q <= {MAX_SIGN_DIM}",
            q - 1
        )));
    }
    let infl = jac.influence_matrix()?;
    let dual = dual_exponent(p);
    let count = 1usize << (q - 1);
    let values: Vec<f64> = (0..count)
        .into_par_iter()
        .with_min_len(64)
        .map(|k| lp_norm(&row_combination(&infl, &sign_vector(q, k)), dual))
        .collect();
    let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return Err(AifError::Numerics("non-finite dual norm".into()));
    }
    let ties: Vec<usize> = (0..count)
        .filter(|&k| values[k] >= best - TIE_RTOL * best.abs())
        .collect();
    let k_star = ties[0];
    let to_i8 = |s: Vec<f64>| s.into_iter().map(|v| v as i8).collect::<Vec<i8>>();
    let sigma = sign_vector(q, k_star);
    let a = row_combination(&infl, &sigma);
    let mn = (jac.m * jac.n) as f64;

    let (unit, argmax_ties) = unit_attack(&a, p, mn);
    Ok(AifReport {
        aif: mn.powf(1.0 / p) * best,
        p,
        m: jac.m,
        n: jac.n,
        sigma_star: to_i8(sigma),
        maximizing_sigmas: ties.iter().map(|&k| to_i8(sign_vector(q, k))).collect(),
        a_vector: a,
        delta_x_unit: unit,
        argmax_ties,
        budget_delta: 1.0,
        theta: Vec::new(),
        condition_number: jac.condition,
    })
}

pub(crate) fn unit_attack(a: &[f64], p: f64, mn: f64) -> (Vec<f64>, Vec<usize>) {
    let amax = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = vec![0.0; a.len()];
    if amax == 0.0 {
        return (out, Vec::new());
    }
    if p == 1.0 {
        let ties: Vec<usize> = (0..a.len())
            .filter(|&k| a[k].abs() >= amax * (1.0 - TIE_RTOL))
            .collect();
        let k = ties[0];
        out[k] = -a[k].signum() * mn;
        return (out, ties);
    }
    // Homogeneous of degree zero in a, so work with a / max|a|.
    let inv = 1.0 / (p - 1.0);
    let dual = p / (p - 1.0);
    let s: f64 = a.iter().map(|v| (v.abs() / amax).powf(dual)).sum();
    let scale = mn.powf(1.0 / p) / s.powf(1.0 / p);
    for (o, v) in out.iter_mut().zip(a) {
        *o = -(v.abs() / amax).powf(inv) * scale * v.signum();
    }
    (out, Vec::new())
}

/// Solves for `t_N` when it is not supplied, then evaluates the AIF.
pub fn compute_aif(
    eq: &dyn EstimatingEquations,
    data: &DataMatrix,
    p: f64,
    t_n: Option<&[f64]>,
    cfg: &SolveConfig,
) -> Result<AifReport> {
    validate_p(p)?;
    if eq.param_dim() > MAX_SIGN_DIM {
        return Err(AifError::CombinatorialLimit(format!(
            "q = {} exceeds the sign-enumeration limit {MAX_SIGN_DIM}",
            eq.param_dim()
        )));
    }
    let theta = match t_n {
        Some(t) => t.to_vec(),
        None => solve(eq, data, cfg)?.into_vec(),
    };
    let jac = assemble_jacobians(eq, data, &theta)?;
    let mut report = aif_from_jacobians(&jac, p)?;
    report.theta = theta;
    Ok(report)
}

/// `δ · ΔX*_unit`, point-major.
pub fn synthesize_attack(report: &AifReport, delta: f64) -> Result<Vec<f64>> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(AifError::Config(format!("attack budget must be positive, got {delta}")));
    }
    Ok(report.delta_x_unit.iter().map(|v| v * delta).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct KktCertificate {
    /// Multiplier of the budget constraint (`p > 1`).
    pub lambda: f64,
    /// `max |a + λ p sign(ΔX)|ΔX|^{p−1}| / max|a|` for `p > 1`; for `p = 1`
    /// the relative gap between `−aᵀΔX` and `mN‖a‖∞`.
    pub stationarity: f64,
    /// `|(1/mN)‖ΔX‖_p^p − 1|`.
    pub budget: f64,
    /// Entries where `ΔX` and `a` fail to have opposite signs.
    pub sign_violations: usize,
}

impl KktCertificate {
    pub fn max_residual(&self) -> f64 {
        self.stationarity.max(self.budget)
    }
}

pub fn kkt_certificate(report: &AifReport) -> KktCertificate {
    let p = report.p;
    let a = &report.a_vector;
    let dx = &report.delta_x_unit;
    let mn = (report.m * report.n) as f64;
    let amax = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let sign_violations = a
        .iter()
        .zip(dx)
        .filter(|(ai, di)| **ai != 0.0 && **di != 0.0 && ai.signum() == di.signum())
        .count();
    let budget = (dx.iter().map(|v| v.abs().powf(p)).sum::<f64>() / mn - 1.0).abs();
    if p == 1.0 {
        let gain: f64 = -a.iter().zip(dx).map(|(x, y)| x * y).sum::<f64>();
        return KktCertificate {
            lambda: amax,
            stationarity: (gain - mn * amax).abs() / (mn * amax),
            budget,
            sign_violations,
        };
    }
    let dual = p / (p - 1.0);
    let s: f64 = a.iter().map(|v| (v.abs() / amax).powf(dual)).sum();
    // λ = (1/p) (Σ|a|^{p*} / mN)^{(p−1)/p}, scaled by max|a|.
    let lambda = amax * (s / mn).powf((p - 1.0) / p) / p;
    let stationarity = a
        .iter()
        .zip(dx)
        .map(|(ai, di)| (ai + lambda * p * di.signum() * di.abs().powf(p - 1.0)).abs())
        .fold(0.0f64, f64::max)
        / amax;
    KktCertificate {
        lambda,
        stationarity,
        budget,
        sign_violations,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FirstOrderRow {
    pub delta: f64,
    /// `‖t_N(X + ΔX*) − t_N(X)‖₁ / δ`
    pub ratio: f64,
    pub relative_gap: f64,
}

/// Re-solves on `X + δΔX*` for each `δ` and compares the realized estimate
/// shift with the reported AIF.
pub fn verify_attack_firstorder(
    eq: &dyn EstimatingEquations,
    data: &DataMatrix,
    report: &AifReport,
    deltas: &[f64],
    cfg: &SolveConfig,
) -> Result<Vec<FirstOrderRow>> {
    let base = if report.theta.is_empty() {
        solve(eq, data, cfg)?.into_vec()
    } else {
        report.theta.clone()
    };
    deltas
        .iter()
        .map(|&delta| {
            let attack = synthesize_attack(report, delta)?;
            let moved = data.perturbed(&attack, 1.0)?;
            let t = solve(eq, &moved, &SolveConfig::starting_at(&base))?;
            let shift: f64 = t.as_slice().iter().zip(&base).map(|(x, y)| (x - y).abs()).sum();
            let ratio = shift / delta;
            Ok(FirstOrderRow {
                delta,
                ratio,
                relative_gap: (ratio - report.aif).abs() / report.aif,
            })
        })
        .collect()
}

/// Largest `mN` accepted by [`brute_force_aif`].
pub const BRUTE_FORCE_MAX_ENTRIES: usize = 6;

/// Direct search over the budget set, re-solving the estimating equations for
/// every candidate perturbation. Returns the best `‖Δt‖₁ / δ` found.
///
/// Candidates are the signed coordinate vertices, `grid_size` random points
/// of the `ℓp` sphere, and a shrinking random hill-climb from the best few.
pub fn brute_force_aif(
    eq: &dyn EstimatingEquations,
    data: &DataMatrix,
    p: f64,
    delta: f64,
    grid_size: usize,
    seed: u64,
) -> Result<f64> {
    validate_p(p)?;
    let len = data.as_flat().len();
    if len > BRUTE_FORCE_MAX_ENTRIES {
        return Err(AifError::CombinatorialLimit(format!(
            "brute force is limited to mN <= {BRUTE_FORCE_MAX_ENTRIES}, got {len}"
        )));
    }
    if delta == 0.0 {
        return Ok(0.0);
    }
    if !(delta > 0.0) {
        return Err(AifError::Config(format!("delta must be nonnegative, got {delta}")));
    }
    let base = solve(eq, data, &SolveConfig::default())?.into_vec();
    let mn = len as f64;
    let radius = mn.powf(1.0 / p);
    let project = |u: &mut Vec<f64>| {
        let norm = lp_norm(u, p);
        if norm > 0.0 {
            for v in u.iter_mut() {
                *v *= radius / norm;
            }
        }
    };
    let objective = |u: &[f64]| -> f64 {
        let moved = match data.perturbed(u, delta) {
            Ok(d) => d,
            Err(_) => return f64::NEG_INFINITY,
        };
        match solve(eq, &moved, &SolveConfig::starting_at(&base)) {
            Ok(t) => t.as_slice().iter().zip(&base).map(|(x, y)| (x - y).abs()).sum::<f64>() / delta,
            Err(_) => f64::NEG_INFINITY,
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<(f64, Vec<f64>)> = Vec::new();
    for k in 0..len {
        for s in [1.0, -1.0] {
            let mut u = vec![0.0; len];
            u[k] = s * radius;
            pool.push((objective(&u), u));
        }
    }
    for _ in 0..grid_size {
        let mut u: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        project(&mut u);
        pool.push((objective(&u), u));
    }
    pool.sort_by(|a, b| b.0.total_cmp(&a.0));
    pool.truncate(4);

    let mut best = pool[0].0;
    for (mut value, mut u) in pool {
        let mut step = 0.25 * radius;
        while step > 1e-6 * radius {
            let mut improved = false;
            for _ in 0..4 * len {
                let mut cand: Vec<f64> = u.iter().map(|v| v + step * rng.random_range(-1.0..1.0)).collect();
                project(&mut cand);
                let f = objective(&cand);
                if f > value {
                    value = f;
                    u = cand;
                    improved = true;
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        best = best.max(value);
    }
    if !best.is_finite() {
        return Err(AifError::DidNotConverge {
            iterations: grid_size,
            residual: f64::NAN,
        });
    }
    Ok(best)
}
