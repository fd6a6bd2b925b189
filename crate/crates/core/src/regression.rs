//! Robust linear regression schemes of the form `ψ(x̃ₙ, θ) = η(rₙvₙ) wₙ xₙ`
//! with `rₙ = yₙ − xₙᵀθ`: OLS, Huber, Mallows (`w = √(1−h)`) and Schweppe
//! (`w = √(1−h)`, `v = 1/w`).
//!
//! Data points are `x̃ₙ = (xₙ; yₙ) ∈ R^{q+1}`, so `m = q + 1` and the response
//! is the last coordinate.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::aif::{aif_from_jacobians, validate_p, AifReport, StackedJacobians};
use crate::data::DataMatrix;
use crate::error::{AifError, Result};
use crate::estimator::{
    condition_number, solve, EstimatingEquations, MEstimatorSpec, SolveConfig, StartRule, SINGULAR_CONDITION,
};

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    /// Covariates, `q × N`.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl RegressionData {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.ncols() != y.len() {
            return Err(AifError::Dimension(format!(
                "{} covariate columns but {} responses",
                x.ncols(),
                y.len()
            )));
        }
        if x.ncols() <= x.nrows() {
            return Err(AifError::Dimension(format!(
                "need N > q, got q = {}, N = {}",
                x.nrows(),
                x.ncols()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(AifError::Input("non-finite regression data".into()));
        }
        Ok(Self { x, y })
    }

    /// Splits an `(q+1) × N` data matrix whose last row is the response.
    pub fn from_data_matrix(d: &DataMatrix) -> Result<Self> {
        if d.m() < 2 {
            return Err(AifError::Dimension("regression data needs q + 1 >= 2 columns".into()));
        }
        let q = d.m() - 1;
        let full = d.matrix();
        Self::new(full.rows(0, q).into_owned(), full.row(q).transpose())
    }

    pub fn to_data_matrix(&self) -> DataMatrix {
        let (q, n) = self.x.shape();
        let mut full = DMatrix::zeros(q + 1, n);
        full.rows_mut(0, q).copy_from(&self.x);
        full.row_mut(q).copy_from(&self.y.transpose());
        DataMatrix::new(full).expect("validated on construction")
    }

    pub fn q(&self) -> usize {
        self.x.nrows()
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    /// `(XXᵀ)⁻¹Xy`
    pub fn ols(&self) -> Result<DVector<f64>> {
        let chol = gram_cholesky(&self.x)?;
        Ok(chol.solve(&(&self.x * &self.y)))
    }
}

fn gram_cholesky(x: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let a = x * x.transpose();
    let cond = condition_number(&a);
    if !(cond < SINGULAR_CONDITION) {
        return Err(AifError::SingularDesign(format!(
            "XX^T has condition number {cond:.3e}"
        )));
    }
    a.cholesky()
        .ok_or_else(|| AifError::SingularDesign("XX^T is not positive definite".into()))
}

/// Diagonal of the hat matrix `H = Xᵀ(XXᵀ)⁻¹X`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeverageSet {
    pub h_diag: Vec<f64>,
}

/// Hat-matrix quantities shared by the leverage derivatives.
struct HatParts {
    /// `P = (XXᵀ)⁻¹X`, `q × N`.
    p: DMatrix<f64>,
    h_diag: Vec<f64>,
}

impl HatParts {
    fn new(x: &DMatrix<f64>) -> Result<Self> {
        let chol = gram_cholesky(x)?;
        let p = chol.solve(x);
        let h_diag = (0..x.ncols()).map(|n| x.column(n).dot(&p.column(n))).collect();
        Ok(Self { p, h_diag })
    }

    /// `h_{jn} = x_jᵀ(XXᵀ)⁻¹x_n`
    fn h(&self, x: &DMatrix<f64>, j: usize, n: usize) -> f64 {
        x.column(j).dot(&self.p.column(n))
    }

    /// `∂h_nn/∂x_{j,k}` for all `n` (rows) and `k` (columns), through the
    /// leave-one-out inverse `B = (XXᵀ − x_jx_jᵀ)⁻¹`:
    ///
    /// with `u = x_nᵀBx_j` and `s = 1 + x_jᵀBx_j`,
    /// `∂h_nn/∂x_{j,k} = −(2u(Bx_n)_k s − 2u²(Bx_j)_k)/s²` for `n ≠ j`, and
    /// `∂h_jj/∂x_{j,k} = 2(Bx_j)_k / s²`.
    fn partials(&self, x: &DMatrix<f64>, j: usize) -> Result<DMatrix<f64>> {
        let (q, n_pts) = x.shape();
        let keep = 1.0 - self.h_diag[j];
        if !(keep > 1e-10) {
            return Err(AifError::SingularDesign(format!(
                "removing point {j} leaves a rank-deficient design (h_jj = {})",
                self.h_diag[j]
            )));
        }
        // Sherman–Morrison downdate: B = A⁻¹ + A⁻¹x_j x_jᵀA⁻¹ / (1 − h_jj),
        // so B x_n = P_n + P_j h_{jn} / (1 − h_jj).
        let pj = self.p.column(j).into_owned();
        let bxj = &pj / keep;
        let s = 1.0 + x.column(j).dot(&bxj);
        let mut out = DMatrix::zeros(n_pts, q);
        for n in 0..n_pts {
            if n == j {
                for k in 0..q {
                    out[(n, k)] = 2.0 * bxj[k] / (s * s);
                }
                continue;
            }
            let hjn = self.h(x, j, n);
            let bxn = self.p.column(n) + &pj * (hjn / keep);
            let u = x.column(n).dot(&bxj);
            for k in 0..q {
                out[(n, k)] = -(2.0 * u * bxn[k] * s - 2.0 * u * u * bxj[k]) / (s * s);
            }
        }
        Ok(out)
    }
}

pub fn leverages(data: &RegressionData) -> Result<LeverageSet> {
    Ok(LeverageSet {
        h_diag: HatParts::new(&data.x)?.h_diag,
    })
}

/// `∂hₙₙ/∂x_{j,k}` for every `n`.
pub fn leverage_partials(data: &RegressionData, j: usize, k: usize) -> Result<Vec<f64>> {
    if j >= data.n() || k >= data.q() {
        return Err(AifError::Dimension(format!(
            "index (j = {j}, k = {k}) out of range for q = {}, N = {}",
            data.q(),
            data.n()
        )));
    }
    let parts = HatParts::new(&data.x)?;
    Ok(parts.partials(&data.x, j)?.column(k).iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum RegressionScheme {
    Ols,
    Huber { k: f64 },
    Mallows { k: f64 },
    Schweppe { k: f64 },
}

impl RegressionScheme {
    pub fn parse(name: &str, k: f64) -> Result<Self> {
        let s = match name.to_ascii_lowercase().as_str() {
            "ols" => Self::Ols,
            "huber" => Self::Huber { k },
            "mallows" => Self::Mallows { k },
            "schweppe" => Self::Schweppe { k },
            other => {
                return Err(AifError::Config(format!(
                    "unknown scheme {other:?} (expected ols, huber, mallows or schweppe)"
                )))
            }
        };
        s.validate()?;
        Ok(s)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Ols => "ols",
            Self::Huber { .. } => "huber",
            Self::Mallows { .. } => "mallows",
            Self::Schweppe { .. } => "schweppe",
        }
    }

    /// Clip level; `∞` for OLS.
    pub fn k(&self) -> f64 {
        match *self {
            Self::Ols => f64::INFINITY,
            Self::Huber { k } | Self::Mallows { k } | Self::Schweppe { k } => k,
        }
    }

    pub fn with_k(&self, k: f64) -> Self {
        match self {
            Self::Ols => Self::Ols,
            Self::Huber { .. } => Self::Huber { k },
            Self::Mallows { .. } => Self::Mallows { k },
            Self::Schweppe { .. } => Self::Schweppe { k },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if !(k > 0.0) {
            return Err(AifError::Config(format!("clip level K must be positive, got {k}")));
        }
        Ok(())
    }

    fn leverage_weighted(&self) -> bool {
        matches!(self, Self::Mallows { .. } | Self::Schweppe { .. })
    }

    fn eta(&self, u: f64) -> f64 {
        u.clamp(-self.k(), self.k())
    }

    /// `η′` with the interior value at `|u| = K`.
    fn deta(&self, u: f64) -> f64 {
        if u.abs() <= self.k() {
            1.0
        } else {
            0.0
        }
    }
}

/// Per-point quantities at `(X, θ)`.
struct Pieces {
    w: Vec<f64>,
    v: Vec<f64>,
    r: Vec<f64>,
    eta: Vec<f64>,
    deta: Vec<f64>,
    hat: Option<HatParts>,
}

/// The estimating equations of one scheme; weights may depend on all of `X`.
#[derive(Debug, Clone)]
pub struct RegressionEstimator {
    pub scheme: RegressionScheme,
    pub q: usize,
    name: String,
}

impl RegressionEstimator {
    pub fn new(scheme: RegressionScheme, q: usize) -> Result<Self> {
        scheme.validate()?;
        Ok(Self {
            scheme,
            q,
            name: format!("{}(K={})", scheme.name(), scheme.k()),
        })
    }

    fn split(&self, data: &DataMatrix) -> Result<RegressionData> {
        if data.m() != self.q + 1 {
            return Err(AifError::Dimension(format!(
                "{} expects {} columns (q covariates + response), data has {}",
                self.name,
                self.q + 1,
                data.m()
            )));
        }
        RegressionData::from_data_matrix(data)
    }

    fn pieces(&self, rd: &RegressionData, theta: &[f64]) -> Result<Pieces> {
        if theta.len() != self.q {
            return Err(AifError::Dimension(format!(
                "theta has length {}, expected q = {}",
                theta.len(),
                self.q
            )));
        }
        let n = rd.n();
        let th = DVector::from_column_slice(theta);
        let fitted = rd.x.transpose() * &th;
        let r: Vec<f64> = (0..n).map(|k| rd.y[k] - fitted[k]).collect();
        let (w, hat) = if self.scheme.leverage_weighted() {
            let hat = HatParts::new(&rd.x)?;
            let w = hat.h_diag.iter().map(|h| (1.0 - h).max(0.0).sqrt()).collect();
            (w, Some(hat))
        } else {
            (vec![1.0; n], None)
        };
        let v: Vec<f64> = match self.scheme {
            RegressionScheme::Schweppe { .. } => w.iter().map(|wn| 1.0 / wn).collect(),
            _ => vec![1.0; n],
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(AifError::SingularDesign(
                "a point has leverage 1, so 1/w is infinite".into(),
            ));
        }
        let eta = (0..n).map(|k| self.scheme.eta(r[k] * v[k])).collect();
        let deta = (0..n).map(|k| self.scheme.deta(r[k] * v[k])).collect();
        Ok(Pieces {
            w,
            v,
            r,
            eta,
            deta,
            hat,
        })
    }

    /// `c_j = w_j η′(r_j v_j) v_j`
    pub fn c_weights(&self, rd: &RegressionData, theta: &[f64]) -> Result<Vec<f64>> {
        let pc = self.pieces(rd, theta)?;
        Ok((0..rd.n()).map(|j| pc.w[j] * pc.deta[j] * pc.v[j]).collect())
    }

    /// `∂G/∂Vec(X̃)` from the closed-form partial derivatives.
    pub fn analytic_g_x(&self, rd: &RegressionData, theta: &[f64]) -> Result<DMatrix<f64>> {
        let pc = self.pieces(rd, theta)?;
        let (q, n) = (rd.q(), rd.n());
        let m = q + 1;
        let x = &rd.x;
        let mut gx = DMatrix::zeros(q, m * n);
        for j in 0..n {
            let c_j = pc.w[j] * pc.deta[j] * pc.v[j];
            for i in 0..q {
                // ∂G_i/∂y_j
                gx[(i, j * m + q)] = c_j * x[(i, j)];
            }
            for k in 0..q {
                for i in 0..q {
                    // residual path through r_j and the direct x_{j,i} factor
                    let mut val = -pc.w[j] * x[(i, j)] * pc.deta[j] * theta[k] * pc.v[j];
                    if i == k {
                        val += pc.w[j] * pc.eta[j];
                    }
                    gx[(i, j * m + k)] = val;
                }
            }
            if let Some(hat) = &pc.hat {
                // weight path: ∂w_n = −∂h_nn / (2w_n); Schweppe also has ∂v_n = −∂w_n / w_n².
                let dh = hat.partials(x, j)?;
                let schweppe = matches!(self.scheme, RegressionScheme::Schweppe { .. });
                for k in 0..q {
                    let mut acc = vec![0.0; q];
                    for nn in 0..n {
                        let dw = -dh[(nn, k)] / (2.0 * pc.w[nn]);
                        let mut coef = pc.eta[nn] * dw;
                        if schweppe {
                            let dv = -dw / (pc.w[nn] * pc.w[nn]);
                            coef += pc.w[nn] * pc.deta[nn] * pc.r[nn] * dv;
                        }
                        if coef != 0.0 {
                            for (i, a) in acc.iter_mut().enumerate() {
                                *a += coef * x[(i, nn)];
                            }
                        }
                    }
                    for i in 0..q {
                        gx[(i, j * m + k)] += acc[i];
                    }
                }
            }
        }
        if gx.iter().any(|v| !v.is_finite()) {
            return Err(AifError::Numerics("non-finite entry in dG/dX".into()));
        }
        Ok(gx)
    }
}

impl EstimatingEquations for RegressionEstimator {
    fn name(&self) -> &str {
        &self.name
    }

    fn data_dim(&self) -> usize {
        self.q + 1
    }

    fn param_dim(&self) -> usize {
        self.q
    }

    fn evaluate_g(&self, data: &DataMatrix, theta: &[f64]) -> Result<DVector<f64>> {
        let rd = self.split(data)?;
        let pc = self.pieces(&rd, theta)?;
        let weights = DVector::from_iterator(rd.n(), (0..rd.n()).map(|k| pc.eta[k] * pc.w[k]));
        let g = &rd.x * weights;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(AifError::Numerics("non-finite estimating equation".into()));
        }
        Ok(g)
    }

    /// `−X diag(c) Xᵀ`
    fn jacobian_theta(&self, data: &DataMatrix, theta: &[f64]) -> Result<DMatrix<f64>> {
        let rd = self.split(data)?;
        let c = self.c_weights(&rd, theta)?;
        let mut xc = rd.x.clone();
        for (j, cj) in c.iter().enumerate() {
            xc.column_mut(j).scale_mut(*cj);
        }
        Ok(-(xc * rd.x.transpose()))
    }

    fn jacobian_data(&self, data: &DataMatrix, theta: &[f64]) -> Result<DMatrix<f64>> {
        let rd = self.split(data)?;
        self.analytic_g_x(&rd, theta)
    }

    fn auto_start(&self, data: &DataMatrix) -> Result<Vec<f64>> {
        Ok(self.split(data)?.ols()?.iter().copied().collect())
    }
}

/// AIF of a regression scheme, with `G'_θ = −X diag(c) Xᵀ` and the
/// scheme-specific `G'_X̃`.
pub fn regression_aif(data: &RegressionData, scheme: RegressionScheme, p: f64, cfg: &SolveConfig) -> Result<AifReport> {
    validate_p(p)?;
    let est = RegressionEstimator::new(scheme, data.q())?;
    let dm = data.to_data_matrix();
    let theta = solve(&est, &dm, cfg)?.into_vec();
    regression_aif_at(data, scheme, p, &theta)
}

/// As [`regression_aif`] at a given solution `θ`.
pub fn regression_aif_at(data: &RegressionData, scheme: RegressionScheme, p: f64, theta: &[f64]) -> Result<AifReport> {
    let est = RegressionEstimator::new(scheme, data.q())?;
    let c = est.c_weights(data, theta)?;
    let active = c.iter().filter(|v| **v != 0.0).count();
    let mut xc = data.x.clone();
    for (j, cj) in c.iter().enumerate() {
        xc.column_mut(j).scale_mut(*cj);
    }
    let gram = &xc * data.x.transpose();
    if active < data.q() || !(condition_number(&gram) < SINGULAR_CONDITION) {
        return Err(AifError::DegenerateEstimate(format!(
            "X diag(c) X^T has rank below q = {} ({active} unclipped residuals)",
            data.q()
        )));
    }
    let gx = est.analytic_g_x(data, theta)?;
    let jac = StackedJacobians::new(-gram, gx, data.q() + 1, data.n())?;
    let mut report = aif_from_jacobians(&jac, p)?;
    report.theta = theta.to_vec();
    Ok(report)
}

/// OLS as a per-point score `ψ = (y − xᵀθ)x`.
pub fn ols_pointwise(q: usize) -> MEstimatorSpec {
    huber_pointwise(q, f64::INFINITY)
}

/// Huber's proposal as a per-point score `ψ = η(y − xᵀθ)x`.
pub fn huber_pointwise(q: usize, k: f64) -> MEstimatorSpec {
    let resid = move |xt: &[f64], t: &[f64]| xt[q] - (0..q).map(|i| xt[i] * t[i]).sum::<f64>();
    let deta = move |r: f64| if r.abs() <= k { 1.0 } else { 0.0 };
    MEstimatorSpec {
        name: if k.is_finite() {
            format!("huber-pointwise(K={k})")
        } else {
            "ols-pointwise".into()
        },
        m: q + 1,
        q,
        psi: Arc::new(move |xt, t| {
            let e = resid(xt, t).clamp(-k, k);
            (0..q).map(|i| e * xt[i]).collect()
        }),
        psi_jac_theta: Arc::new(move |xt, t| {
            let d = deta(resid(xt, t));
            DMatrix::from_fn(q, q, |i, j| -d * xt[i] * xt[j])
        }),
        psi_jac_x: Arc::new(move |xt, t| {
            let r = resid(xt, t);
            let (e, d) = (r.clamp(-k, k), deta(r));
            DMatrix::from_fn(q, q + 1, |i, c| {
                if c == q {
                    d * xt[i]
                } else {
                    let direct = if i == c { e } else { 0.0 };
                    direct - d * t[c] * xt[i]
                }
            })
        }),
        start: StartRule::Zero,
        positive_param: None,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub scheme: String,
    pub k: f64,
    pub mean_aif: f64,
    pub stderr: f64,
    pub n_ok: usize,
    pub n_fail: usize,
}

/// One sweep cell: scheme, clip level and the per-dataset AIFs.
pub type SweepValues = (RegressionScheme, f64, Vec<Result<f64>>);

/// Per-dataset AIF values for each `(scheme, K)`; OLS is computed once per
/// dataset and repeated across the `K` grid. Entry `[cell][dataset]`.
pub fn sweep_values(
    datasets: &[RegressionData],
    schemes: &[RegressionScheme],
    k_grid: &[f64],
    p: f64,
) -> Result<Vec<SweepValues>> {
    validate_p(p)?;
    let cfg = SolveConfig::default();
    let per_dataset: Vec<Vec<Result<f64>>> = datasets
        .par_iter()
        .map(|d| {
            let ols = regression_aif(d, RegressionScheme::Ols, p, &cfg).map(|r| r.aif);
            let mut row = Vec::new();
            for s in schemes {
                for &k in k_grid {
                    row.push(match s {
                        RegressionScheme::Ols => ols.clone(),
                        other => regression_aif(d, other.with_k(k), p, &cfg).map(|r| r.aif),
                    });
                }
            }
            row
        })
        .collect();
    let mut cells = Vec::new();
    let mut idx = 0;
    for s in schemes {
        for &k in k_grid {
            let vals = per_dataset.iter().map(|row| row[idx].clone()).collect();
            cells.push((s.with_k(k), k, vals));
            idx += 1;
        }
    }
    Ok(cells)
}

/// Mean AIF per `(scheme, K)` over the datasets, with failures counted.
pub fn aif_vs_k_sweep(
    datasets: &[RegressionData],
    schemes: &[RegressionScheme],
    k_grid: &[f64],
    p: f64,
) -> Result<Vec<SweepCell>> {
    Ok(sweep_values(datasets, schemes, k_grid, p)?
        .into_iter()
        .map(|(s, k, vals)| {
            let ok: Vec<f64> = vals.iter().filter_map(|v| v.as_ref().ok().copied()).collect();
            for e in vals.iter().filter_map(|v| v.as_ref().err()) {
                tracing::warn!(scheme = s.name(), k, error = %e, "sweep cell failed");
            }
            let (mean, se) = mean_stderr(&ok);
            SweepCell {
                scheme: s.name().to_string(),
                k,
                mean_aif: mean,
                stderr: se,
                n_ok: ok.len(),
                n_fail: vals.len() - ok.len(),
            }
        })
        .collect())
}

pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
