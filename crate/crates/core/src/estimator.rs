//! M-estimators: estimating equations, their Jacobians, and a damped Newton
//! solver for `G(X, θ) = 0`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DataMatrix, ParamVector};
use crate::error::{AifError, Result};

/// Any system of estimating equations `G(X, θ) = 0` with analytic Jacobians.
///
/// Most estimators are sums of a per-point score (see [`MEstimatorSpec`]),
/// but weighted regression schemes whose weights depend on the whole design
/// are not, so the solver and the AIF engine work against this trait.
pub trait EstimatingEquations: Send + Sync {
    fn name(&self) -> &str;
    /// Coordinates per data point (`m`).
    fn data_dim(&self) -> usize;
    /// Number of parameters (`q`).
    fn param_dim(&self) -> usize;
    /// `G(X, θ)`, a vector of length `q`.
    fn evaluate_g(&self, data: &DataMatrix, theta: &[f64]) -> Result<DVector<f64>>;
    /// `∂G/∂θ`, `q × q`.
    fn jacobian_theta(&self, data: &DataMatrix, theta: &[f64]) -> Result<DMatrix<f64>>;
    /// `∂G/∂Vec(X)`, `q × mN` with columns in point-major order.
    fn jacobian_data(&self, data: &DataMatrix, theta: &[f64]) -> Result<DMatrix<f64>>;
    /// Starting point used by [`InitialTheta::Auto`].
    fn auto_start(&self, data: &DataMatrix) -> Result<Vec<f64>> {
        let _ = data;
        Ok(vec![0.0; self.param_dim()])
    }
    /// Whether `θ` lies in the parameter space (e.g. positive scale).
    fn admissible(&self, theta: &[f64]) -> bool {
        theta.iter().all(|v| v.is_finite())
    }
}

pub type PsiFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type PsiJacFn = Arc<dyn Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub enum StartRule {
    Zero,
    /// `(median, MAD / 0.6745)` of a scalar sample.
    MedianMad,
    Fixed(Vec<f64>),
}

/// A per-point score `ψ(x, θ)` with its two Jacobians.
#[derive(Clone)]
pub struct MEstimatorSpec {
    pub name: String,
    pub m: usize,
    pub q: usize,
    pub psi: PsiFn,
    /// `∂ψ/∂θ`, `q × q`.
    pub psi_jac_theta: PsiJacFn,
    /// `∂ψ/∂x`, `q × m`.
    pub psi_jac_x: PsiJacFn,
    pub start: StartRule,
    /// Index of a parameter that must stay strictly positive (a scale).
    pub positive_param: Option<usize>,
}

impl fmt::Debug for MEstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MEstimatorSpec")
            .field("name", &self.name)
            .field("m", &self.m)
            .field("q", &self.q)
            .field("start", &self.start)
            .finish()
    }
}

impl MEstimatorSpec {
    fn check_dims(&self, data: &DataMatrix, theta: &[f64]) -> Result<()> {
        if data.m() != self.m {
            return Err(AifError::Dimension(format!(
                "{} expects {}-dimensional points, data has m = {}",
                self.name,
                self.m,
                data.m()
            )));
        }
        if theta.len() != self.q {
            return Err(AifError::Dimension(format!(
                "{} expects q = {}, got theta of length {}",
                self.name,
                self.q,
                theta.len()
            )));
        }
        Ok(())
    }

    fn psi_checked(&self, x: &[f64], theta: &[f64], n: usize) -> Result<Vec<f64>> {
        let v = (self.psi)(x, theta);
        if v.len() != self.q {
            return Err(AifError::Dimension(format!(
                "psi returned {} components, expected {}",
                v.len(),
                self.q
            )));
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(AifError::Numerics(format!("psi is not finite at point {n}")));
        }
        Ok(v)
    }
}

impl EstimatingEquations for MEstimatorSpec {
    fn name(&self) -> &str {
        &self.name
    }

    fn data_dim(&self) -> usize {
        self.m
    }

    fn param_dim(&self) -> usize {
        self.q
    }

    fn evaluate_g(&self, data: &DataMatrix, theta: &[f64]) -> Result<DVector<f64>> {
        self.check_dims(data, theta)?;
        let mut g = DVector::zeros(self.q);
        for n in 0..data.n() {
            let v = self.psi_checked(data.point(n), theta, n)?;
            for (gi, vi) in g.iter_mut().zip(v) {
                *gi += vi;
            }
        }
        Ok(g)
    }

    fn jacobian_theta(&self, data: &DataMatrix, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dims(data, theta)?;
        let mut j = DMatrix::zeros(self.q, self.q);
        for n in 0..data.n() {
            j += (self.psi_jac_theta)(data.point(n), theta);
        }
        if j.iter().any(|v| !v.is_finite()) {
            return Err(AifError::Numerics("non-finite entry in dG/dtheta".into()));
        }
        Ok(j)
    }

    fn jacobian_data(&self, data: &DataMatrix, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dims(data, theta)?;
        let (m, q) = (self.m, self.q);
        let mut j = DMatrix::zeros(q, m * data.n());
        for n in 0..data.n() {
            let block = (self.psi_jac_x)(data.point(n), theta);
            j.view_mut((0, n * m), (q, m)).copy_from(&block);
        }
        if j.iter().any(|v| !v.is_finite()) {
            return Err(AifError::Numerics("non-finite entry in dG/dX".into()));
        }
        Ok(j)
    }

    fn auto_start(&self, data: &DataMatrix) -> Result<Vec<f64>> {
        match &self.start {
            StartRule::Zero => Ok(vec![0.0; self.q]),
            StartRule::Fixed(v) => Ok(v.clone()),
            StartRule::MedianMad => {
                let (med, mad) = median_mad(data.as_flat());
                let mut scale = mad / 0.6745;
                if !(scale > 0.0) {
                    // Half the data tied at the median: fall back to the RMS spread.
                    let rms = (data.as_flat().iter().map(|x| (x - med).powi(2)).sum::<f64>()
                        / data.as_flat().len() as f64)
                        .sqrt();
                    scale = if rms > 0.0 { rms } else { 1.0 };
                }
                let mut v = vec![0.0; self.q];
                v[0] = med;
                if self.q > 1 {
                    v[1] = scale;
                }
                Ok(v)
            }
        }
    }

    fn admissible(&self, theta: &[f64]) -> bool {
        theta.iter().all(|v| v.is_finite()) && self.positive_param.is_none_or(|k| theta[k] > 0.0)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median and median absolute deviation.
pub fn median_mad(values: &[f64]) -> (f64, f64) {
    let med = median(values);
    let dev: Vec<f64> = values.iter().map(|x| (x - med).abs()).collect();
    (med, median(&dev))
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialTheta {
    Auto,
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    pub max_iter: usize,
    /// Applied to `‖G‖∞ / N`.
    pub tol: f64,
    pub initial_theta: InitialTheta,
    pub damping: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-10,
            initial_theta: InitialTheta::Auto,
            damping: 1.0,
        }
    }
}

impl SolveConfig {
    pub fn starting_at(theta: &[f64]) -> Self {
        Self {
            initial_theta: InitialTheta::Given(theta.to_vec()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(AifError::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(AifError::Config("max_iter must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(AifError::Config(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        Ok(())
    }
}

/// 2-norm condition number from the singular values.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

pub const SINGULAR_CONDITION: f64 = 1e12;
pub const WARN_CONDITION: f64 = 1e8;

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Solves `G(X, θ) = 0` by damped Newton with step halving.
pub fn solve(eq: &dyn EstimatingEquations, data: &DataMatrix, cfg: &SolveConfig) -> Result<ParamVector> {
    cfg.validate()?;
    let n = data.n() as f64;
    let mut theta = match &cfg.initial_theta {
        InitialTheta::Auto => eq.auto_start(data)?,
        InitialTheta::Given(t) => t.clone(),
    };
    if theta.len() != eq.param_dim() {
        return Err(AifError::Dimension(format!(
            "initial theta has length {}, estimator has q = {}",
            theta.len(),
            eq.param_dim()
        )));
    }
    if !eq.admissible(&theta) {
        return Err(AifError::Config(format!(
            "initial theta {theta:?} is outside the parameter space"
        )));
    }
    let mut g = eq.evaluate_g(data, &theta)?;
    let mut residual = inf_norm(&g) / n;

    for iter in 0..cfg.max_iter {
        if residual <= cfg.tol {
            tracing::debug!(estimator = eq.name(), iterations = iter, residual, "converged");
            return ParamVector::new(polish(eq, data, theta, g));
        }
        let jac = eq.jacobian_theta(data, &theta)?;
        let cond = condition_number(&jac);
        if !(cond < SINGULAR_CONDITION) {
            return Err(AifError::SingularJacobian { condition: cond });
        }
        let step = jac
            .lu()
            .solve(&(-&g))
            .ok_or(AifError::SingularJacobian { condition: cond })?;

        let current = g.norm();
        let mut scale = cfg.damping;
        let mut accepted = None;
        for _ in 0..=20 {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
            if eq.admissible(&cand) {
                if let Ok(gc) = eq.evaluate_g(data, &cand) {
                    if gc.norm() < current {
                        accepted = Some((cand, gc));
                        break;
                    }
                }
            }
            scale *= 0.5;
        }
        match accepted {
            Some((t, gc)) => {
                theta = t;
                g = gc;
                residual = inf_norm(&g) / n;
            }
            None => {
                return Err(AifError::DidNotConverge {
                    iterations: iter + 1,
                    residual,
                })
            }
        }
    }
    if residual <= cfg.tol {
        return ParamVector::new(polish(eq, data, theta, g));
    }
    Err(AifError::DidNotConverge {
        iterations: cfg.max_iter,
        residual,
    })
}

/// A couple of extra full Newton steps once the tolerance is met, kept only
/// while they reduce `‖G‖`; this brings the root to working precision.
fn polish(eq: &dyn EstimatingEquations, data: &DataMatrix, mut theta: Vec<f64>, mut g: DVector<f64>) -> Vec<f64> {
    for _ in 0..3 {
        if g.iter().all(|v| *v == 0.0) {
            break;
        }
        let Ok(jac) = eq.jacobian_theta(data, &theta) else {
            break;
        };
        let Some(step) = jac.lu().solve(&(-&g)) else { break };
        let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
        if !eq.admissible(&cand) {
            break;
        }
        match eq.evaluate_g(data, &cand) {
            Ok(gc) if gc.norm() < g.norm() => {
                theta = cand;
                g = gc;
            }
            _ => break,
        }
    }
    theta
}

/// Central finite-difference `∂G/∂θ` (test oracle).
pub fn fd_jacobian_theta(
    eq: &dyn EstimatingEquations,
    data: &DataMatrix,
    theta: &[f64],
    h: f64,
) -> Result<DMatrix<f64>> {
    let q = eq.param_dim();
    let mut j = DMatrix::zeros(q, q);
    for k in 0..q {
        let mut tp = theta.to_vec();
        let mut tm = theta.to_vec();
        tp[k] += h;
        tm[k] -= h;
        let col = (eq.evaluate_g(data, &tp)? - eq.evaluate_g(data, &tm)?) / (2.0 * h);
        j.set_column(k, &col);
    }
    Ok(j)
}

/// Central finite-difference `∂G/∂Vec(X)` (test oracle).
pub fn fd_jacobian_data(
    eq: &dyn EstimatingEquations,
    data: &DataMatrix,
    theta: &[f64],
    h: f64,
) -> Result<DMatrix<f64>> {
    let q = eq.param_dim();
    let len = data.as_flat().len();
    let mut j = DMatrix::zeros(q, len);
    let mut e = vec![0.0; len];
    for k in 0..len {
        e[k] = 1.0;
        let gp = eq.evaluate_g(&data.perturbed(&e, h)?, theta)?;
        let gm = eq.evaluate_g(&data.perturbed(&e, -h)?, theta)?;
        e[k] = 0.0;
        j.set_column(k, &((gp - gm) / (2.0 * h)));
    }
    Ok(j)
}

/// Largest entrywise difference, relative to the larger matrix scale.
pub fn max_relative_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a
        .iter()
        .chain(b.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    a.iter().zip(b.iter()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Draws i.i.d. data points from a fixed distribution.
pub trait PointSampler: Sync {
    fn dim(&self) -> usize;
    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
}

impl<F> PointSampler for (usize, F)
where
    F: Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.0
    }
    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (self.1)(rng)
    }
}

/// Monte Carlo estimate of `E[ψ(X, θ₀)]` with `X` drawn from `sampler`.
pub fn check_fisher_consistency(
    spec: &MEstimatorSpec,
    sampler: &dyn PointSampler,
    theta0: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_mc < 100 {
        return Err(AifError::Config(format!("n_mc must be at least 100, got {n_mc}")));
    }
    if sampler.dim() != spec.m || theta0.len() != spec.q {
        return Err(AifError::Dimension(format!(
            "sampler dim {} / theta length {} do not match m = {}, q = {}",
            sampler.dim(),
            theta0.len(),
            spec.m,
            spec.q
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0; spec.q];
    for k in 0..n_mc {
        let x = sampler.draw(&mut rng);
        let v = spec.psi_checked(&x, theta0, k)?;
        for (a, b) in acc.iter_mut().zip(v) {
            *a += b;
        }
    }
    Ok(acc.into_iter().map(|a| a / n_mc as f64).collect())
}

/// Scalar location with `ψ(x, θ) = x − θ` (the sample mean).
pub fn scalar_mean() -> MEstimatorSpec {
    MEstimatorSpec {
        name: "scalar-mean".into(),
        m: 1,
        q: 1,
        psi: Arc::new(|x, t| vec![x[0] - t[0]]),
        psi_jac_theta: Arc::new(|_, _| DMatrix::from_element(1, 1, -1.0)),
        psi_jac_x: Arc::new(|_, _| DMatrix::from_element(1, 1, 1.0)),
        start: StartRule::MedianMad,
        positive_param: None,
    }
}

/// The zero score, which every parameter solves.
pub fn zero_score(m: usize, q: usize) -> MEstimatorSpec {
    MEstimatorSpec {
        name: "zero".into(),
        m,
        q,
        psi: Arc::new(move |_, _| vec![0.0; q]),
        psi_jac_theta: Arc::new(move |_, _| DMatrix::zeros(q, q)),
        psi_jac_x: Arc::new(move |_, _| DMatrix::zeros(q, m)),
        start: StartRule::Zero,
        positive_param: None,
    }
}
