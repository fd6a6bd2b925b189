//! AIF-optimal location-scale scores, with and without a bound on the
//! gross-error sensitivity.
//!
//! Designs are kept in the gauge `∫₀^∞ψ₁′f₀ = 1`, `∫₀^∞zψ₂′f₀ = 1`, so that
//! `B₁ = E ψ₁′(Z) = 2` and `B₂ = E Zψ₂′(Z) = 2`. The population AIF is
//! `√(T₁ + T₂)` with `T₁ = ½∫₀^∞ψ₁′²f₀` and `T₂ = ½∫₀^∞ψ₂′²f₀` in that gauge.
//!
//! With the bound active, `ψ₁′ = [ν − ϑ/f₀]⁺` is supported on `[0, a₁]` and
//! `ψ₂′ = [νz − (ϑ₁W + ϑ₂(1 − F₀))/f₀]⁺` on `[a₂, b]`, where `W` and the
//! offset `ψ₂(0)` depend on the [`Convention`].

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::BaseDensity;
use crate::error::{AifError, Result};
use crate::location_scale::{LocationScaleSpec, TabulatedPsi};
use crate::numerics::{brent, golden_section, integrate, integrate_pieces, MonotoneCubic, QuadOptions};

const QUAD: QuadOptions = QuadOptions {
    abs_tol: 1e-14,
    rel_tol: 1e-13,
    max_subdivisions: 4000,
};
const XTOL: f64 = 1e-15;

/// How `ψ₂(0)` is tied to `ψ₂′`.
///
/// `Uncentered` sets `ψ₂(0) = −∫₀^∞ψ₂′(1 − F₀)`, so `ψ₂(∞) = ∫₀^∞ψ₂′F₀`.
/// `FisherConsistent` sets `ψ₂(0) = −2∫₀^∞ψ₂′(1 − F₀)`, which is what
/// `E ψ₂(Z) = 0` requires; then `ψ₂(∞) = ∫₀^∞ψ₂′(2F₀ − 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    #[default]
    Uncentered,
    FisherConsistent,
}

impl Convention {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uncentered" => Ok(Convention::Uncentered),
            "fisher" | "fisher-consistent" | "fisher_consistent" | "consistent" => Ok(Convention::FisherConsistent),
            other => Err(AifError::Config(format!(
                "unknown convention '{other}' (expected uncentered or fisher)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Convention::Uncentered => "uncentered",
            Convention::FisherConsistent => "fisher",
        }
    }

    /// `W(z)`, with `ψ₂(∞) = ψ₂(0) + ∫ψ₂′ = ∫ψ₂′W`.
    pub fn weight(self, f0: &dyn BaseDensity, z: f64) -> f64 {
        match self {
            Convention::Uncentered => f0.cdf(z),
            Convention::FisherConsistent => 2.0 * f0.central_mass(z),
        }
    }

    /// `c` in `ψ₂(0) = −c∫₀^∞ψ₂′(1 − F₀)`.
    pub fn zero_factor(self) -> f64 {
        match self {
            Convention::Uncentered => 1.0,
            Convention::FisherConsistent => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Psi1Shape {
    Constant {
        value: f64,
    },
    /// `[ν − ϑ/f₀(z)]⁺`, vanishing from `a1` on.
    Clamped {
        nu: f64,
        vartheta1: f64,
        a1: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Psi2Shape {
    Linear {
        slope: f64,
    },
    /// `[νz − (ϑ₁W(z) + ϑ₂(1 − F₀(z)))/f₀(z)]⁺` on `[a2, b]`. Under the uncentered
    /// convention this is `[νz − (ϑ₂ + (ϑ₁ − ϑ₂)F₀(z))/f₀(z)]⁺`.
    Clamped {
        nu: f64,
        vartheta1: f64,
        vartheta2: f64,
        a2: f64,
        b: f64,
    },
}

#[derive(Clone)]
pub struct PsiDesign {
    pub density: Arc<dyn BaseDensity>,
    pub convention: Convention,
    pub psi1: Psi1Shape,
    pub psi2: Psi2Shape,
    pub psi2_at_zero: f64,
    pub xi: Option<f64>,
    pub xi_split: Option<(f64, f64)>,
    /// `Eψ₁′²/(Eψ₁′)²`
    pub t1: f64,
    /// `Eψ₂′²/(EZψ₂′)²`
    pub t2: f64,
}

impl fmt::Debug for PsiDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PsiDesign")
            .field("density", &self.density.name())
            .field("convention", &self.convention)
            .field("psi1", &self.psi1)
            .field("psi2", &self.psi2)
            .field("psi2_at_zero", &self.psi2_at_zero)
            .field("xi", &self.xi)
            .field("xi_split", &self.xi_split)
            .field("aif", &self.aif())
            .finish()
    }
}

fn dpsi1_of(shape: &Psi1Shape, f0: &dyn BaseDensity, z: f64) -> f64 {
    let z = z.abs();
    match *shape {
        Psi1Shape::Constant { value } => value,
        Psi1Shape::Clamped { nu, vartheta1, a1 } => {
            if z >= a1 {
                0.0
            } else {
                (nu - vartheta1 / f0.pdf(z)).max(0.0)
            }
        }
    }
}

fn psi2_unclamped(nu: f64, th1: f64, th2: f64, conv: Convention, f0: &dyn BaseDensity, z: f64) -> f64 {
    nu * z - (th1 * conv.weight(f0, z) + th2 * (1.0 - f0.cdf(z))) / f0.pdf(z)
}

fn dpsi2_of(shape: &Psi2Shape, conv: Convention, f0: &dyn BaseDensity, z: f64) -> f64 {
    let z = z.abs();
    match *shape {
        Psi2Shape::Linear { slope } => slope * z,
        Psi2Shape::Clamped {
            nu,
            vartheta1,
            vartheta2,
            a2,
            b,
        } => {
            if z < a2 || z >= b {
                0.0
            } else {
                psi2_unclamped(nu, vartheta1, vartheta2, conv, f0, z).max(0.0)
            }
        }
    }
}

impl PsiDesign {
    /// `ψ₁′(z)` (even in `z`).
    pub fn dpsi1(&self, z: f64) -> f64 {
        dpsi1_of(&self.psi1, self.density.as_ref(), z)
    }

    /// `ψ₂′(|z|)`; the odd extension is `sign(z)·dpsi2(|z|)`.
    pub fn dpsi2(&self, z: f64) -> f64 {
        dpsi2_of(&self.psi2, self.convention, self.density.as_ref(), z)
    }

    pub fn aif(&self) -> f64 {
        (self.t1 + self.t2).sqrt()
    }

    /// `(a₁, a₂, b)`, where present.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Psi1Shape::Clamped { a1, .. } = self.psi1 {
            out.push(a1);
        }
        if let Psi2Shape::Clamped { a2, b, .. } = self.psi2 {
            if a2 > 0.0 {
                out.push(a2);
            }
            out.push(b);
        }
        out
    }

    /// `(ν, ϑ)` for `ψ₁` and `(ν, ϑ₁, ϑ₂)` for `ψ₂`; zero where unconstrained.
    pub fn multipliers(&self) -> ([f64; 2], [f64; 3]) {
        let m1 = match self.psi1 {
            Psi1Shape::Constant { value } => [value, 0.0],
            Psi1Shape::Clamped { nu, vartheta1, .. } => [nu, vartheta1],
        };
        let m2 = match self.psi2 {
            Psi2Shape::Linear { slope } => [slope, 0.0, 0.0],
            Psi2Shape::Clamped {
                nu,
                vartheta1,
                vartheta2,
                ..
            } => [nu, vartheta1, vartheta2],
        };
        (m1, m2)
    }

    fn breaks(&self) -> Vec<f64> {
        let mut b = self.breakpoints();
        b.extend(self.density.kinks());
        b
    }

    fn support_ends(&self) -> (f64, f64, f64) {
        let end = self.density.support_end();
        let s1 = match self.psi1 {
            Psi1Shape::Clamped { a1, .. } => a1,
            Psi1Shape::Constant { .. } => end,
        };
        let (lo2, hi2) = match self.psi2 {
            Psi2Shape::Clamped { a2, b, .. } => (a2, b),
            Psi2Shape::Linear { .. } => (0.0, end),
        };
        (s1, lo2, hi2)
    }

    /// `ψ₁(∞) = ∫₀^∞ψ₁′`, `None` when unbounded.
    pub fn psi1_at_infinity(&self) -> Result<Option<f64>> {
        match self.psi1 {
            Psi1Shape::Constant { .. } => Ok(None),
            Psi1Shape::Clamped { a1, .. } => Ok(Some(half_integral(|z| self.dpsi1(z), 0.0, a1, &[])?)),
        }
    }

    /// `ψ₂(∞) = ψ₂(0) + ∫₀^∞ψ₂′`, `None` when unbounded.
    pub fn psi2_at_infinity(&self) -> Result<Option<f64>> {
        match self.psi2 {
            Psi2Shape::Linear { .. } => Ok(None),
            Psi2Shape::Clamped { a2, b, .. } => {
                Ok(Some(self.psi2_at_zero + half_integral(|z| self.dpsi2(z), a2, b, &[])?))
            }
        }
    }

    /// Multiplies `ψ₁` by `c1` and `ψ₂` by `c2`; the AIF and the IF are
    /// unchanged, only the gauge moves.
    pub fn scaled(&self, c1: f64, c2: f64) -> PsiDesign {
        let mut d = self.clone();
        d.psi1 = match self.psi1 {
            Psi1Shape::Constant { value } => Psi1Shape::Constant { value: c1 * value },
            Psi1Shape::Clamped { nu, vartheta1, a1 } => Psi1Shape::Clamped {
                nu: c1 * nu,
                vartheta1: c1 * vartheta1,
                a1,
            },
        };
        d.psi2 = match self.psi2 {
            Psi2Shape::Linear { slope } => Psi2Shape::Linear { slope: c2 * slope },
            Psi2Shape::Clamped {
                nu,
                vartheta1,
                vartheta2,
                a2,
                b,
            } => Psi2Shape::Clamped {
                nu: c2 * nu,
                vartheta1: c2 * vartheta1,
                vartheta2: c2 * vartheta2,
                a2,
                b,
            },
        };
        d.psi2_at_zero *= c2;
        d
    }

    /// `(ψ₁, ψ₁′, ψ₂, ψ₂′)` at `|z|`, with `ψ` obtained by quadrature of `ψ′`.
    pub fn values_at(&self, z: f64) -> Result<[f64; 4]> {
        let z = z.abs();
        let breaks = self.breaks();
        let p1 = half_integral(|s| self.dpsi1(s), 0.0, z, &breaks)?;
        let p2 = self.psi2_at_zero + half_integral(|s| self.dpsi2(s), 0.0, z, &breaks)?;
        Ok([p1, self.dpsi1(z), p2, self.dpsi2(z)])
    }
}

fn half_integral<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, breaks: &[f64]) -> Result<f64> {
    if hi <= lo {
        return Ok(0.0);
    }
    integrate_pieces(f, lo, breaks, hi, QUAD)
}

fn is_laplace(f0: &dyn BaseDensity) -> bool {
    f0.name() == "laplace"
}

/// Largest `z` worth searching: the `1 − 1e-12` quantile or the support end.
fn search_top(f0: &dyn BaseDensity) -> f64 {
    f0.quantile(1.0 - 1e-12).min(f0.support_end())
}

/// The AIF-minimizing design without an IF bound: `ψ₁′ = 2` and
/// `ψ₂′ = z/∫₀^∞z²f₀`.
pub fn design_unconstrained(f0: Arc<dyn BaseDensity>) -> Result<PsiDesign> {
    design_unconstrained_with(f0, Convention::Uncentered)
}

pub fn design_unconstrained_with(f0: Arc<dyn BaseDensity>, convention: Convention) -> Result<PsiDesign> {
    let breaks = f0.kinks();
    let end = f0.support_end();
    let m2 = integrate_pieces(|z| z * z * f0.pdf(z), 0.0, &breaks, end, QUAD)
        .map_err(|e| AifError::IntegralDiverged(format!("second moment of f0: {e}")))?;
    if !(m2.is_finite() && m2 > 0.0) {
        return Err(AifError::IntegralDiverged(format!("second moment of f0 is {m2}")));
    }
    let slope = 1.0 / m2;
    let tail = integrate_pieces(|z| z * (1.0 - f0.cdf(z)), 0.0, &breaks, end, QUAD)?;
    let t2 = 0.5 * integrate_pieces(|z| (slope * z).powi(2) * f0.pdf(z), 0.0, &breaks, end, QUAD)?;
    Ok(PsiDesign {
        density: f0,
        convention,
        psi1: Psi1Shape::Constant { value: 2.0 },
        psi2: Psi2Shape::Linear { slope },
        psi2_at_zero: -convention.zero_factor() * slope * tail,
        xi: None,
        xi_split: None,
        t1: 1.0,
        t2,
    })
}

/// `ξ₁` must exceed `1/(2f₀(0))` for a bounded `ψ₁` with `ψ₁(∞)/B₁ ≤ ξ₁`.
pub fn psi1_floor(f0: &dyn BaseDensity) -> f64 {
    0.5 / f0.pdf(0.0)
}

/// `(ν, ϑ, a₁)` of the bounded `ψ₁` branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Psi1Solution {
    pub xi1: f64,
    pub nu: f64,
    pub vartheta1: f64,
    pub a1: f64,
    /// `e^{a₁} − (1 + (a₁+1)ξ₁)/(ξ₁ + 1 − a₁)` (Laplace only; else 0).
    pub transcendental_residual: f64,
}

/// `(e^a − 1 − a)/a²`, accurate near zero.
fn expm1_minus_a_over_a2(a: f64) -> f64 {
    if a.abs() < 1e-2 {
        0.5 + a * (1.0 / 6.0 + a * (1.0 / 24.0 + a * (1.0 / 120.0 + a / 720.0)))
    } else {
        (a.exp_m1() - a) / (a * a)
    }
}

/// Laplace: `a₁` solves `e^{a₁} = (1 + (a₁+1)ξ₁)/(ξ₁ + 1 − a₁)` on `(0, ξ₁+1)`;
/// then `ν = (2 + 2(a₁+1)ξ₁)/a₁²` and `ϑ = (ξ₁ − (a₁ − 1))/a₁²`.
///
/// The equation always has the root `a₁ = 0`; a positive root exists only for
/// `ξ₁ > 1`.
pub fn solve_laplace_psi1(xi1: f64) -> Result<Psi1Solution> {
    if !(xi1 > 1.0) {
        return Err(AifError::Infeasible(format!(
            "xi1 = {xi1}: under Laplace the bound psi1(inf)/B1 <= xi1 needs xi1 > 1; \
             the transcendental equation then has only the degenerate root a1 = 0"
        )));
    }
    // Divided through by a² to remove the trivial root.
    let h = |a: f64| (xi1 + 1.0) * expm1_minus_a_over_a2(a) - a.exp_m1() / a;
    let hi = xi1 + 1.0;
    let lo = (1e-8f64).min(hi * 1e-8);
    let a = brent(h, lo, hi, XTOL, 500)?;
    let nu = (2.0 + 2.0 * (a + 1.0) * xi1) / (a * a);
    let vartheta1 = (xi1 - (a - 1.0)) / (a * a);
    let residual = a.exp() - (1.0 + (a + 1.0) * xi1) / (xi1 + 1.0 - a);
    Ok(Psi1Solution {
        xi1,
        nu,
        vartheta1,
        a1: a,
        transcendental_residual: residual,
    })
}

/// General symmetric `f₀`, decreasing on `z ≥ 0`: with `ϑ = νf₀(a)`,
/// `ν = 1/∫₀^a(f₀ − f₀(a))` and `a` solving
/// `∫₀^a(1 − f₀(a)/f₀(z))dz / ∫₀^a(f₀(z) − f₀(a))dz = 2ξ₁`.
pub fn solve_general_psi1(f0: &dyn BaseDensity, xi1: f64) -> Result<Psi1Solution> {
    let floor = psi1_floor(f0);
    if !(xi1 > floor) {
        return Err(AifError::Infeasible(format!(
            "xi1 = {xi1} is at or below the floor 1/(2 f0(0)) = {floor:.6}"
        )));
    }
    let breaks = f0.kinks();
    let parts = |a: f64| -> Result<(f64, f64)> {
        let fa = f0.pdf(a);
        let num = half_integral(|z| 1.0 - fa / f0.pdf(z), 0.0, a, &breaks)?;
        let den = half_integral(|z| f0.pdf(z) - fa, 0.0, a, &breaks)?;
        Ok((num, den))
    };
    let target = 2.0 * xi1;
    let ratio = |a: f64| parts(a).map(|(n, d)| n / d - target).unwrap_or(f64::NAN);
    let end = f0.support_end();
    let lo = 1e-6;
    if !(ratio(lo) < 0.0) {
        return Err(AifError::Infeasible(format!(
            "xi1 = {xi1} is too close to the floor {floor:.6} to resolve"
        )));
    }
    let mut hi = 1.0f64.min(0.5 * end);
    let mut steps = 0;
    while ratio(hi) < 0.0 {
        hi = if end.is_finite() { 0.5 * (hi + end) } else { hi * 2.0 };
        steps += 1;
        if steps > 200 {
            return Err(AifError::BracketError(format!(
                "no upper bracket for a1 at xi1 = {xi1}"
            )));
        }
    }
    let a = brent(ratio, lo, hi, XTOL, 500)?;
    let (_, den) = parts(a)?;
    let nu = 1.0 / den;
    Ok(Psi1Solution {
        xi1,
        nu,
        vartheta1: nu * f0.pdf(a),
        a1: a,
        transcendental_residual: 0.0,
    })
}

pub fn solve_psi1(f0: &dyn BaseDensity, xi1: f64) -> Result<Psi1Solution> {
    if is_laplace(f0) {
        solve_laplace_psi1(xi1)
    } else {
        solve_general_psi1(f0, xi1)
    }
}

/// Multipliers and support of the bounded `ψ₂` branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Psi2Solution {
    pub xi2: f64,
    pub nu: f64,
    pub vartheta1: f64,
    pub vartheta2: f64,
    pub a2: f64,
    pub b: f64,
    /// Quadrature residual of the normalization condition.
    pub normalization_residual: f64,
    /// Quadrature residual of the `ψ₂(∞)` bound.
    pub bound_residual: f64,
}

/// Minimizer of `W(z)/(zf₀(z))` on `z > 0` and its value.
pub fn psi2_ratio_minimum_with(f0: &dyn BaseDensity, convention: Convention) -> (f64, f64) {
    let top = search_top(f0);
    let neg = |z: f64| -(z * f0.pdf(z) / convention.weight(f0, z));
    let (z, v) = golden_section(neg, 1e-9 * top, top, 1e-12 * top);
    (z, -1.0 / v)
}

/// Minimizer of `F₀(z)/(zf₀(z))` on `z > 0` and its value.
pub fn psi2_ratio_minimum(f0: &dyn BaseDensity) -> (f64, f64) {
    psi2_ratio_minimum_with(f0, Convention::Uncentered)
}

/// `ξ₂` must exceed `min_z W/(zf₀)/2`.
pub fn psi2_floor_with(f0: &dyn BaseDensity, convention: Convention) -> f64 {
    0.5 * psi2_ratio_minimum_with(f0, convention).1
}

pub fn psi2_floor(f0: &dyn BaseDensity) -> f64 {
    psi2_floor_with(f0, Convention::Uncentered)
}

/// Laplace closed form of `∫_a^b (ρz − (2e^z − 1)) z e^{−z} dz`.
pub fn laplace_j1(rho: f64, a: f64, b: f64) -> f64 {
    let p = |z: f64| (z * z + 2.0 * z + 2.0) * (-z).exp();
    let q = |z: f64| (z + 1.0) * (-z).exp();
    rho * (p(a) - p(b)) - (b * b - a * a) + (q(a) - q(b))
}

/// Laplace closed form of `∫_a^b (ρz − (2e^z − 1))(2 − e^{−z}) dz`.
pub fn laplace_j2(rho: f64, a: f64, b: f64) -> f64 {
    let q = |z: f64| (z + 1.0) * (-z).exp();
    rho * (b * b - a * a) - rho * (q(a) - q(b)) - 4.0 * (b.exp() - a.exp()) + 4.0 * (b - a) + ((-b).exp() - (-a).exp())
}

fn laplace_j_quad(rho: f64, a: f64, b: f64) -> Result<(f64, f64)> {
    let g = |z: f64| rho * z - (2.0 * z.exp() - 1.0);
    let j1 = integrate(|z| g(z) * z * (-z).exp(), a, b, QUAD)?.value;
    let j2 = integrate(|z| g(z) * (2.0 - (-z).exp()), a, b, QUAD)?.value;
    Ok((j1, j2))
}

/// Support `[a₂, b]` of `h(z) = ρzf₀ − W − τ(1 − F₀) > 0`, or `None` when
/// `h ≤ 0` everywhere. `h` is unimodal on `z ≥ 0` for log-concave `f₀`.
fn psi2_support(f0: &dyn BaseDensity, conv: Convention, rho: f64, tau: f64) -> Result<Option<(f64, f64)>> {
    let h = |z: f64| rho * z * f0.pdf(z) - conv.weight(f0, z) - tau * (1.0 - f0.cdf(z));
    let top = search_top(f0);
    let (z_peak, neg_peak) = golden_section(|z| -h(z), 0.0, top, 1e-13 * top);
    if -neg_peak <= 0.0 {
        return Ok(None);
    }
    let a2 = if h(0.0) >= 0.0 {
        0.0
    } else {
        brent(h, 0.0, z_peak, XTOL, 500)?
    };
    let end = f0.support_end();
    let mut hi = top;
    let mut steps = 0;
    while h(hi) > 0.0 {
        hi = if end.is_finite() { 0.5 * (hi + end) } else { 2.0 * hi };
        steps += 1;
        if steps > 200 {
            return Err(AifError::BracketError(format!(
                "no upper end for the psi2 support at rho = {rho}"
            )));
        }
    }
    let b = brent(h, z_peak, hi, XTOL, 500)?;
    Ok(Some((a2, b)))
}

/// Integrals of `u = h/f₀` over its support: `∫zuf₀`, `∫uW`, `∫u(1−F₀)`.
struct Psi2Parts {
    a2: f64,
    b: f64,
    norm: f64,
    upper: f64,
    lower: f64,
}

fn psi2_parts(f0: &dyn BaseDensity, conv: Convention, rho: f64, tau: f64) -> Result<Option<Psi2Parts>> {
    let Some((a2, b)) = psi2_support(f0, conv, rho, tau)? else {
        return Ok(None);
    };
    let breaks = f0.kinks();
    let u = |z: f64| rho * z - (conv.weight(f0, z) + tau * (1.0 - f0.cdf(z))) / f0.pdf(z);
    let norm = half_integral(|z| u(z) * z * f0.pdf(z), a2, b, &breaks)?;
    let upper = half_integral(|z| u(z) * conv.weight(f0, z), a2, b, &breaks)?;
    let lower = half_integral(|z| u(z) * (1.0 - f0.cdf(z)), a2, b, &breaks)?;
    Ok(Some(Psi2Parts {
        a2,
        b,
        norm,
        upper,
        lower,
    }))
}

/// For fixed `τ = ϑ₂/ϑ₁`, the ratio `ρ = ν/ϑ₁` with `ψ₂(∞)/B₂ = ξ₂`, or
/// `None` when `ξ₂` is below what any `ρ` reaches.
fn solve_rho(f0: &dyn BaseDensity, conv: Convention, xi2: f64, tau: f64) -> Result<Option<(f64, Psi2Parts)>> {
    let top = search_top(f0);
    let ratio_at = |z: f64| (conv.weight(f0, z) + tau * (1.0 - f0.cdf(z))) / (z * f0.pdf(z));
    let (_, r_min) = golden_section(ratio_at, 1e-9 * top, top, 1e-12 * top);
    let target = 2.0 * xi2;
    let gap = |rho: f64| match psi2_parts(f0, conv, rho, tau) {
        Ok(Some(p)) => p.upper / p.norm - target,
        Ok(None) => -target,
        Err(_) => f64::NAN,
    };
    let lo = r_min * (1.0 + 1e-9);
    let g_lo = gap(lo);
    if g_lo.is_nan() {
        return Err(AifError::Numerics(format!("psi2 integrals failed at rho = {lo}")));
    }
    if g_lo >= 0.0 {
        return Ok(None);
    }
    let mut hi = 2.0 * r_min;
    let mut steps = 0;
    while gap(hi) < 0.0 {
        hi *= 2.0;
        steps += 1;
        if steps > 200 {
            return Err(AifError::BracketError(format!(
                "no upper bracket for nu/vartheta1 at xi2 = {xi2}"
            )));
        }
    }
    let rho = brent(gap, lo, hi, XTOL * r_min, 500)?;
    let parts = psi2_parts(f0, conv, rho, tau)?
        .ok_or_else(|| AifError::Numerics(format!("empty psi2 support at the solved rho = {rho}")))?;
    Ok(Some((rho, parts)))
}

fn solution_from(xi2: f64, rho: f64, tau: f64, p: &Psi2Parts) -> Psi2Solution {
    let vartheta1 = 1.0 / p.norm;
    Psi2Solution {
        xi2,
        nu: rho * vartheta1,
        vartheta1,
        vartheta2: tau * vartheta1,
        a2: p.a2,
        b: p.b,
        normalization_residual: 0.0,
        bound_residual: (vartheta1 * p.upper - 2.0 * xi2).abs(),
    }
}

/// Laplace `ψ₂` branch under the uncentered convention: `ϑ₂ = 0`, the support
/// ends satisfy `ν/ϑ₁ = (2e^z − 1)/z`, and
/// `∫_{a₂}^b (νz − ϑ₁(2e^z−1)) z e^{−z} dz = 2`,
/// `∫_{a₂}^b (νz − ϑ₁(2e^z−1))(2 − e^{−z}) dz = 4ξ₂`.
///
/// Dividing the second condition by the first gives one equation in
/// `ρ = ν/ϑ₁`, solved with the closed-form integrals [`laplace_j1`] and
/// [`laplace_j2`] (quadrature when the support is too short for them to be
/// accurate). Both original conditions are then re-checked by quadrature.
pub fn solve_laplace_psi2_system(xi2: f64, xi: f64) -> Result<Psi2Solution> {
    if !(xi2 > 0.0 && xi2 <= xi) {
        return Err(AifError::Config(format!(
            "need 0 < xi2 <= xi, got xi2 = {xi2}, xi = {xi}"
        )));
    }
    let f0 = crate::density::Laplace;
    let (z_star, r_min) = psi2_ratio_minimum(&f0);
    if !(2.0 * xi2 > r_min) {
        return Err(AifError::Infeasible(format!(
            "xi2 = {xi2} is at or below the floor {:.6}",
            0.5 * r_min
        )));
    }
    let ends = |rho: f64| -> Result<(f64, f64)> {
        let h = |z: f64| rho * z - (2.0 * z.exp() - 1.0);
        let a = brent(h, 0.0, z_star, XTOL, 500)?;
        let mut hi = 2.0 * z_star.max(1.0);
        while h(hi) > 0.0 {
            hi *= 2.0;
        }
        Ok((a, brent(h, z_star, hi, XTOL, 500)?))
    };
    let js = |rho: f64| -> Result<(f64, f64, f64, f64)> {
        let (a, b) = ends(rho)?;
        let (j1, j2) = if b - a > 0.05 {
            (laplace_j1(rho, a, b), laplace_j2(rho, a, b))
        } else {
            laplace_j_quad(rho, a, b)?
        };
        Ok((j1, j2, a, b))
    };
    let gap = |rho: f64| js(rho).map(|(j1, j2, _, _)| j2 / j1 - 2.0 * xi2).unwrap_or(f64::NAN);
    let lo = r_min * (1.0 + 1e-9);
    if !(gap(lo) < 0.0) {
        return Err(AifError::Infeasible(format!(
            "xi2 = {xi2} is too close to the floor to resolve"
        )));
    }
    let mut hi = 2.0 * r_min;
    let mut steps = 0;
    while gap(hi) < 0.0 {
        hi *= 2.0;
        steps += 1;
        if steps > 200 {
            return Err(AifError::BracketError(format!(
                "no upper bracket for nu/vartheta1 at xi2 = {xi2}"
            )));
        }
    }
    let rho = brent(gap, lo, hi, XTOL * r_min, 500)?;
    let (j1, _, a2, b) = js(rho)?;
    let vartheta1 = 2.0 / j1;
    let nu = rho * vartheta1;

    let (q1, q2) = laplace_j_quad(rho, a2, b)?;
    let normalization_residual = (vartheta1 * q1 - 2.0).abs();
    let bound_residual = (vartheta1 * q2 - 4.0 * xi2).abs();
    if normalization_residual > 1e-7 || bound_residual > 1e-7 {
        return Err(AifError::SystemInconsistent(format!(
            "closed-form solution fails the integral conditions (residuals {normalization_residual:.3e}, {bound_residual:.3e})"
        )));
    }
    Ok(Psi2Solution {
        xi2,
        nu,
        vartheta1,
        vartheta2: 0.0,
        a2,
        b,
        normalization_residual,
        bound_residual,
    })
}

/// General `f₀` version of the `ψ₂` branch, all by quadrature.
///
/// Tries `ϑ₂ = 0` first. If the resulting `|ψ₂(0)|/B₂` exceeds `ξ`, the
/// `ψ₂(0)` constraint is made active and `τ = ϑ₂/ϑ₁` is found by an outer
/// root search around the inner solve for `ρ`.
pub fn solve_general_psi2(f0: &dyn BaseDensity, xi2: f64, xi: f64, convention: Convention) -> Result<Psi2Solution> {
    if !(xi2 > 0.0 && xi2 <= xi) {
        return Err(AifError::Config(format!(
            "need 0 < xi2 <= xi, got xi2 = {xi2}, xi = {xi}"
        )));
    }
    let c = convention.zero_factor();
    let infeasible = || {
        AifError::Infeasible(format!(
            "xi2 = {xi2} is below the floor {:.6}",
            psi2_floor_with(f0, convention)
        ))
    };
    let (rho0, parts0) = solve_rho(f0, convention, xi2, 0.0)?.ok_or_else(infeasible)?;
    // |ψ₂(0)|/B₂ − ξ, times 2 (the gauge has B₂ = 2).
    let zero_gap = |p: &Psi2Parts| c * p.lower / p.norm - 2.0 * xi;
    if zero_gap(&parts0) <= 0.0 {
        return Ok(solution_from(xi2, rho0, 0.0, &parts0));
    }
    let eval =
        |tau: f64| -> Result<Option<f64>> { Ok(solve_rho(f0, convention, xi2, tau)?.map(|(_, p)| zero_gap(&p))) };
    let (mut lo, mut hi) = (0.0, 0.5);
    let mut bracketed = false;
    for _ in 0..60 {
        match eval(hi)? {
            Some(g) if g <= 0.0 => {
                bracketed = true;
                break;
            }
            Some(_) => {
                lo = hi;
                hi *= 2.0;
            }
            None => {
                // Past the largest feasible τ: bisect back towards it.
                let mut found = false;
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    match eval(mid)? {
                        Some(g) if g <= 0.0 => {
                            hi = mid;
                            found = true;
                            break;
                        }
                        Some(_) => lo = mid,
                        None => hi = mid,
                    }
                }
                if !found {
                    return Err(AifError::Infeasible(format!(
                        "no split with xi2 = {xi2} keeps |psi2(0)|/B2 <= xi = {xi}"
                    )));
                }
                bracketed = true;
                break;
            }
        }
    }
    if !bracketed {
        return Err(AifError::BracketError(format!(
            "no bracket for vartheta2/vartheta1 at xi2 = {xi2}"
        )));
    }
    let tau = brent(
        |t| eval(t).ok().flatten().unwrap_or(f64::NAN),
        lo,
        hi,
        1e-15 * hi.max(1.0),
        500,
    )?;
    let (rho, parts) = solve_rho(f0, convention, xi2, tau)?.ok_or_else(infeasible)?;
    Ok(solution_from(xi2, rho, tau, &parts))
}

pub fn solve_psi2(f0: &dyn BaseDensity, xi2: f64, xi: f64, convention: Convention) -> Result<Psi2Solution> {
    if is_laplace(f0) && convention == Convention::Uncentered {
        solve_laplace_psi2_system(xi2, xi)
    } else {
        solve_general_psi2(f0, xi2, xi, convention)
    }
}

fn t1_of(f0: &dyn BaseDensity, s: &Psi1Solution) -> Result<f64> {
    let shape = Psi1Shape::Clamped {
        nu: s.nu,
        vartheta1: s.vartheta1,
        a1: s.a1,
    };
    Ok(0.5 * half_integral(|z| dpsi1_of(&shape, f0, z).powi(2) * f0.pdf(z), 0.0, s.a1, &f0.kinks())?)
}

fn psi2_shape(s: &Psi2Solution) -> Psi2Shape {
    Psi2Shape::Clamped {
        nu: s.nu,
        vartheta1: s.vartheta1,
        vartheta2: s.vartheta2,
        a2: s.a2,
        b: s.b,
    }
}

/// The optimal design for the bound `γ*_u ≤ ξ` with the split
/// `ψ₁(∞)/B₁ ≤ ξ₁`, `ψ₂(∞)/B₂ ≤ ξ₂ = √(ξ² − ξ₁²)`, uncentered convention.
pub fn design_constrained(f0: Arc<dyn BaseDensity>, xi: f64, xi1: f64) -> Result<PsiDesign> {
    design_constrained_with(f0, xi, xi1, Convention::Uncentered)
}

pub fn design_constrained_with(
    f0: Arc<dyn BaseDensity>,
    xi: f64,
    xi1: f64,
    convention: Convention,
) -> Result<PsiDesign> {
    if !(xi > 0.0 && xi1 > 0.0 && xi1 < xi) {
        return Err(AifError::Config(format!(
            "need 0 < xi1 < xi, got xi1 = {xi1}, xi = {xi}"
        )));
    }
    let xi2 = (xi * xi - xi1 * xi1).sqrt();
    let s1 = solve_psi1(f0.as_ref(), xi1)?;
    let mut s2 = solve_psi2(f0.as_ref(), xi2, xi, convention)?;
    let breaks = f0.kinks();
    let lower_of = |s: &Psi2Solution| {
        let shape = psi2_shape(s);
        half_integral(
            |z| dpsi2_of(&shape, convention, f0.as_ref(), z) * (1.0 - f0.cdf(z)),
            s.a2,
            s.b,
            &breaks,
        )
    };
    let mut lower = lower_of(&s2)?;
    if convention.zero_factor() * lower > 2.0 * xi * (1.0 + 1e-9) {
        // Only reachable from the closed-form Laplace route, which assumes
        // ϑ₂ = 0; hand over to the general solver.
        s2 = solve_general_psi2(f0.as_ref(), xi2, xi, convention)?;
        lower = lower_of(&s2)?;
        if convention.zero_factor() * lower > 2.0 * xi * (1.0 + 1e-9) {
            return Err(AifError::SystemInconsistent(format!(
                "|psi2(0)|/B2 = {:.6} exceeds xi = {xi} after activating vartheta2",
                convention.zero_factor() * lower / 2.0
            )));
        }
    }
    let shape2 = psi2_shape(&s2);
    let t2 = 0.5
        * half_integral(
            |z| dpsi2_of(&shape2, convention, f0.as_ref(), z).powi(2) * f0.pdf(z),
            s2.a2,
            s2.b,
            &breaks,
        )?;
    Ok(PsiDesign {
        t1: t1_of(f0.as_ref(), &s1)?,
        t2,
        convention,
        psi1: Psi1Shape::Clamped {
            nu: s1.nu,
            vartheta1: s1.vartheta1,
            a1: s1.a1,
        },
        psi2: shape2,
        psi2_at_zero: -convention.zero_factor() * lower,
        xi: Some(xi),
        xi_split: Some((xi1, xi2)),
        density: f0,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IfProfile {
    /// `E ψ₁′(Z)`
    pub b1: f64,
    /// `E Zψ₂′(Z)`
    pub b2: f64,
    pub psi1_inf: Option<f64>,
    pub psi2_zero: f64,
    pub psi2_inf: Option<f64>,
    /// `|ψ₂(0)|/B₂`
    pub at_zero: f64,
    /// `√(ψ₁(∞)²/B₁² + ψ₂(∞)²/B₂²)`, `∞` if either limit is unbounded.
    pub at_infinity: f64,
    pub gamma_u_star: f64,
    pub unbounded: bool,
}

fn profile_from(b1: f64, b2: f64, psi1_inf: Option<f64>, psi2_zero: f64, psi2_inf: Option<f64>) -> IfProfile {
    let at_zero = psi2_zero.abs() / b2;
    let at_infinity = match (psi1_inf, psi2_inf) {
        (Some(p1), Some(p2)) => ((p1 / b1).powi(2) + (p2 / b2).powi(2)).sqrt(),
        _ => f64::INFINITY,
    };
    IfProfile {
        b1,
        b2,
        psi1_inf,
        psi2_zero,
        psi2_inf,
        at_zero,
        at_infinity,
        gamma_u_star: at_zero.max(at_infinity),
        unbounded: !at_infinity.is_finite(),
    }
}

/// Gross-error sensitivity of a design, taken at `z = 0` and `z → ∞`.
pub fn evaluate_if_profile(design: &PsiDesign) -> Result<IfProfile> {
    let f0 = design.density.as_ref();
    let breaks = design.breaks();
    let (s1, lo2, hi2) = design.support_ends();
    let b1 = 2.0 * half_integral(|z| design.dpsi1(z) * f0.pdf(z), 0.0, s1, &breaks)?;
    let b2 = 2.0 * half_integral(|z| z * design.dpsi2(z) * f0.pdf(z), lo2, hi2, &breaks)?;
    Ok(profile_from(
        b1,
        b2,
        design.psi1_at_infinity()?,
        design.psi2_at_zero,
        design.psi2_at_infinity()?,
    ))
}

/// The same quantities for any location-scale spec; `limits` are
/// `(ψ₁(∞), ψ₂(∞))`, or `None` when unbounded.
pub fn if_profile_of_spec(
    spec: &LocationScaleSpec,
    f0: &dyn BaseDensity,
    limits: Option<(f64, f64)>,
) -> Result<IfProfile> {
    let mut breaks = spec.kinks.clone();
    breaks.extend(f0.kinks());
    let end = f0.support_end();
    let b1 = 2.0 * integrate_pieces(|z| (spec.dpsi1)(z) * f0.pdf(z), 0.0, &breaks, end, QUAD)?;
    let b2 = 2.0 * integrate_pieces(|z| z * (spec.dpsi2)(z) * f0.pdf(z), 0.0, &breaks, end, QUAD)?;
    Ok(profile_from(
        b1,
        b2,
        limits.map(|l| l.0),
        (spec.psi2)(0.0),
        limits.map(|l| l.1),
    ))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DesignKkt {
    /// `|∫₀^∞ψ₁′f₀ − 1|`
    pub normalization1: f64,
    /// `|∫₀^∞zψ₂′f₀ − 1|`
    pub normalization2: f64,
    /// `|ϑ(∫ψ₁′ − 2ξ₁)|`
    pub slackness1: f64,
    /// `|ϑ₁(∫ψ₂′W − 2ξ₂)|`
    pub slackness2: f64,
    /// `|ϑ₂(c∫ψ₂′(1−F₀) − 2ξ)|`
    pub slackness_zero: f64,
    /// Largest violation of the three IF constraints.
    pub primal: f64,
    /// Most negative multiplier (0 when all are nonnegative).
    pub multiplier_sign: f64,
    /// Unclamped forms at the support ends and, off the support, how far
    /// they rise above zero; relative to `ν`.
    pub clamp: f64,
    /// Most negative `ψ′` found on a fine grid.
    pub nonnegativity: f64,
    /// `|ψ₂(0) + c∫ψ₂′(1−F₀)|`
    pub offset: f64,
}

impl DesignKkt {
    pub fn max_residual(&self) -> f64 {
        [
            self.normalization1,
            self.normalization2,
            self.slackness1,
            self.slackness2,
            self.slackness_zero,
            self.primal,
            self.multiplier_sign,
            self.clamp,
            self.nonnegativity,
            self.offset,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Stationarity and complementary-slackness residuals of a design.
pub fn design_kkt(design: &PsiDesign) -> Result<DesignKkt> {
    let f0 = design.density.as_ref();
    let conv = design.convention;
    let breaks = design.breaks();
    let (s1, lo2, hi2) = design.support_ends();
    let n1 = half_integral(|z| design.dpsi1(z) * f0.pdf(z), 0.0, s1, &breaks)?;
    let n2 = half_integral(|z| z * design.dpsi2(z) * f0.pdf(z), lo2, hi2, &breaks)?;
    let mut kkt = DesignKkt {
        normalization1: (n1 - 1.0).abs(),
        normalization2: (n2 - 1.0).abs(),
        slackness1: 0.0,
        slackness2: 0.0,
        slackness_zero: 0.0,
        primal: 0.0,
        multiplier_sign: 0.0,
        clamp: 0.0,
        nonnegativity: 0.0,
        offset: 0.0,
    };
    let top = f0
        .quantile(1.0 - 1e-10)
        .min(f0.support_end())
        .max(1.5 * hi2.min(1e3))
        .max(1.5 * s1.min(1e3));
    let grid: Vec<f64> = (0..=4000).map(|k| top * k as f64 / 4000.0).collect();
    let mut negatives = Vec::new();
    if let (Psi1Shape::Clamped { nu, vartheta1, a1 }, Some((xi1, _))) = (design.psi1, design.xi_split) {
        let mass = half_integral(|z| design.dpsi1(z), 0.0, a1, &breaks)?;
        kkt.slackness1 = (vartheta1 * (mass - 2.0 * xi1)).abs();
        kkt.primal = kkt.primal.max(mass - 2.0 * xi1);
        let unclamped = |z: f64| nu - vartheta1 / f0.pdf(z);
        kkt.clamp = kkt.clamp.max(unclamped(a1).abs() / nu);
        for &z in grid.iter().filter(|&&z| z > a1) {
            kkt.clamp = kkt.clamp.max(unclamped(z).max(0.0) / nu);
        }
        negatives.extend([nu, vartheta1]);
    }
    if let (
        Psi2Shape::Clamped {
            nu,
            vartheta1,
            vartheta2,
            a2,
            b,
        },
        Some((_, xi2)),
        Some(xi),
    ) = (design.psi2, design.xi_split, design.xi)
    {
        let c = conv.zero_factor();
        let upper = half_integral(|z| design.dpsi2(z) * conv.weight(f0, z), a2, b, &breaks)?;
        let lower = half_integral(|z| design.dpsi2(z) * (1.0 - f0.cdf(z)), a2, b, &breaks)?;
        kkt.slackness2 = (vartheta1 * (upper - 2.0 * xi2)).abs();
        kkt.slackness_zero = (vartheta2 * (c * lower - 2.0 * xi)).abs();
        kkt.primal = kkt.primal.max(upper - 2.0 * xi2).max(c * lower - 2.0 * xi);
        kkt.offset = (design.psi2_at_zero + c * lower).abs();
        let unclamped = |z: f64| psi2_unclamped(nu, vartheta1, vartheta2, conv, f0, z);
        kkt.clamp = kkt.clamp.max(unclamped(b).abs() / nu);
        if a2 > 0.0 {
            kkt.clamp = kkt.clamp.max(unclamped(a2).abs() / nu);
        }
        for &z in grid.iter().filter(|&&z| z < a2 || z > b) {
            kkt.clamp = kkt.clamp.max(unclamped(z).max(0.0) / nu);
        }
        negatives.extend([nu, vartheta1, vartheta2]);
    }
    kkt.multiplier_sign = negatives.into_iter().fold(0.0f64, |m, v| m.max(-v));
    for &z in &grid {
        kkt.nonnegativity = kkt.nonnegativity.max(-design.dpsi1(z)).max(-design.dpsi2(z));
    }
    Ok(kkt)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TradeoffPoint {
    pub xi: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub aif: f64,
    pub gamma_u: f64,
}

/// Population AIF of the best split for one `ξ`, or `None` when no split is
/// feasible.
pub fn best_split(
    f0: Arc<dyn BaseDensity>,
    xi: f64,
    split_resolution: usize,
    convention: Convention,
) -> Result<Option<TradeoffPoint>> {
    let floor1 = psi1_floor(f0.as_ref());
    let floor2 = psi2_floor_with(f0.as_ref(), convention);
    if !(xi * xi > floor1 * floor1 + floor2 * floor2) {
        return Ok(None);
    }
    let lo = floor1;
    let hi = (xi * xi - floor2 * floor2).sqrt();
    let eval = |xi1: f64| -> f64 {
        match design_constrained_with(f0.clone(), xi, xi1, convention) {
            Ok(d) => d.aif(),
            Err(_) => f64::INFINITY,
        }
    };
    let n = split_resolution.max(3);
    let grid: Vec<f64> = (1..=n).map(|k| lo + (hi - lo) * k as f64 / (n + 1) as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&x| eval(x)).collect();
    let (kbest, vbest) = values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (k, v)| if *v < acc.1 { (k, *v) } else { acc });
    if !vbest.is_finite() {
        return Ok(None);
    }
    let left = if kbest == 0 {
        lo + 1e-9 * (hi - lo)
    } else {
        grid[kbest - 1]
    };
    let right = if kbest + 1 == n {
        hi - 1e-9 * (hi - lo)
    } else {
        grid[kbest + 1]
    };
    let (xi1, aif) = golden_section(eval, left, right, 1e-4 * xi);
    let xi1 = if aif <= vbest { xi1 } else { grid[kbest] };
    let design = design_constrained_with(f0, xi, xi1, convention)?;
    let profile = evaluate_if_profile(&design)?;
    Ok(Some(TradeoffPoint {
        xi,
        xi1,
        xi2: (xi * xi - xi1 * xi1).sqrt(),
        aif: design.aif(),
        gamma_u: profile.gamma_u_star,
    }))
}

/// The minimal population AIF over splits for each `ξ` (uncentered convention);
/// infeasible `ξ` come back as `None`, a gap in the frontier.
pub fn tradeoff_frontier(
    f0: Arc<dyn BaseDensity>,
    xi_grid: &[f64],
    split_resolution: usize,
) -> Vec<(f64, Result<Option<TradeoffPoint>>)> {
    tradeoff_frontier_with(f0, xi_grid, split_resolution, Convention::Uncentered)
}

pub fn tradeoff_frontier_with(
    f0: Arc<dyn BaseDensity>,
    xi_grid: &[f64],
    split_resolution: usize,
    convention: Convention,
) -> Vec<(f64, Result<Option<TradeoffPoint>>)> {
    xi_grid
        .par_iter()
        .map(|&xi| (xi, best_split(f0.clone(), xi, split_resolution, convention)))
        .collect()
}

/// Tabulated `(z, ψ₁, ψ₁′, ψ₂, ψ₂′)` on `z ≥ 0`.
#[derive(Debug, Clone, Serialize)]
pub struct PsiTable {
    pub z: Vec<f64>,
    pub psi1: Vec<f64>,
    pub dpsi1: Vec<f64>,
    pub psi2: Vec<f64>,
    pub dpsi2: Vec<f64>,
    /// Indices of knots sitting on breakpoints.
    pub break_indices: Vec<usize>,
}

/// Knots on `[0, z_max]`: a quarter geometric from `1e-6·z_max`, half
/// uniform over the part where `ψ′` varies, a quarter uniform over the rest,
/// plus the breakpoints.
pub fn design_grid(design: &PsiDesign, knots: usize) -> (Vec<f64>, Vec<usize>) {
    let f0 = design.density.as_ref();
    let mut z_max = f0.quantile(1.0 - 1e-10).min(f0.support_end());
    let active = design.breakpoints().into_iter().fold(0.0f64, f64::max);
    z_max = z_max.max(active * 1.05);
    let active = if active > 0.0 { active } else { z_max };
    let quarter = knots / 4;
    let mid = knots - 2 * quarter - 1;
    let mut z: Vec<f64> = Vec::with_capacity(knots + 4);
    z.push(0.0);
    let lo = 1e-6 * z_max;
    for k in 0..quarter {
        z.push(lo * (z_max / lo).powf(k as f64 / (quarter - 1) as f64));
    }
    for k in 1..=mid {
        z.push(active * k as f64 / mid as f64);
    }
    for k in 1..=quarter {
        z.push(active + (z_max - active) * k as f64 / quarter as f64);
    }
    let bps = design.breakpoints();
    z.extend(bps.iter().copied());
    z.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(z.len());
    for v in z {
        match out.last() {
            Some(&last) if v - last < 1e-9 * z_max => {
                // Keep breakpoints exact when a regular knot lands next to one.
                if bps.contains(&v) {
                    *out.last_mut().expect("non-empty") = v;
                }
            }
            _ => out.push(v),
        }
    }
    let breaks = out
        .iter()
        .enumerate()
        .filter(|(_, v)| bps.contains(v))
        .map(|(k, _)| k)
        .collect();
    (out, breaks)
}

pub const DEFAULT_KNOTS: usize = 2048;

/// Tabulates a design on [`design_grid`].
pub fn tabulate(design: &PsiDesign, knots: usize) -> Result<PsiTable> {
    let (z, break_indices) = design_grid(design, knots);
    let dpsi1: Vec<f64> = z.iter().map(|&v| design.dpsi1(v)).collect();
    let dpsi2: Vec<f64> = z.iter().map(|&v| design.dpsi2(v)).collect();
    let breaks = design.breaks();
    let mut psi1 = vec![0.0; z.len()];
    let mut psi2 = vec![design.psi2_at_zero; z.len()];
    for k in 1..z.len() {
        psi1[k] = psi1[k - 1] + half_integral(|s| design.dpsi1(s), z[k - 1], z[k], &breaks)?;
        psi2[k] = psi2[k - 1] + half_integral(|s| design.dpsi2(s), z[k - 1], z[k], &breaks)?;
    }
    Ok(PsiTable {
        z,
        psi1,
        dpsi1,
        psi2,
        dpsi2,
        break_indices,
    })
}

/// A solvable location-scale spec from a design: the tabulated derivatives
/// are interpolated by monotone cubics and integrated exactly; beyond the
/// table the analytic clamped form takes over.
pub fn design_to_estimator(design: &PsiDesign) -> Result<LocationScaleSpec> {
    let table = tabulate(design, DEFAULT_KNOTS)?;
    let c1 = MonotoneCubic::new(table.z.clone(), table.dpsi1.clone(), &table.break_indices)?;
    let c2 = MonotoneCubic::new(table.z.clone(), table.dpsi2.clone(), &table.break_indices)?;
    let (shape1, shape2, conv, dens) = (design.psi1, design.psi2, design.convention, design.density.clone());
    let tabulated = TabulatedPsi {
        dpsi1: Arc::new(c1),
        dpsi2: Arc::new(c2),
        psi2_at_zero: design.psi2_at_zero,
        tail: Some(Arc::new(move |z| {
            [
                dpsi1_of(&shape1, dens.as_ref(), z),
                dpsi2_of(&shape2, conv, dens.as_ref(), z),
            ]
        })),
    };
    let name = match design.xi {
        Some(xi) => format!("designed(xi={xi})"),
        None => "designed(unconstrained)".to_string(),
    };
    Ok(tabulated.into_spec(&name, design.breakpoints()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{Laplace, Normal};

    #[test]
    fn laplace_psi1_matches_general_route() {
        for xi1 in [1.5, 2.0, 4.0] {
            let a = solve_laplace_psi1(xi1).unwrap();
            let b = solve_general_psi1(&Laplace, xi1).unwrap();
            assert!((a.a1 - b.a1).abs() < 1e-9, "{a:?} {b:?}");
            assert!((a.nu / b.nu - 1.0).abs() < 1e-9);
            assert!((a.vartheta1 / b.vartheta1 - 1.0).abs() < 1e-9);
            assert!(a.transcendental_residual.abs() < 1e-10);
        }
    }

    #[test]
    fn laplace_closed_forms_match_quadrature() {
        let (rho, a, b) = (6.0, 0.3, 2.1);
        let (q1, q2) = laplace_j_quad(rho, a, b).unwrap();
        assert!((laplace_j1(rho, a, b) - q1).abs() < 1e-13);
        assert!((laplace_j2(rho, a, b) - q2).abs() < 1e-12);
    }

    #[test]
    fn psi2_ratio_minimizer_laplace() {
        let (z, r) = psi2_ratio_minimum(&Laplace);
        // 2e^z(z − 1) + 1 = 0 at the minimizer.
        assert!((2.0 * z.exp() * (z - 1.0) + 1.0).abs() < 1e-7);
        assert!((r - (2.0 * z.exp() - 1.0) / z).abs() < 1e-12);
    }

    #[test]
    fn unconstrained_laplace_and_normal() {
        let d = design_unconstrained(Arc::new(Laplace)).unwrap();
        assert!((d.aif() - 1.5f64.sqrt()).abs() < 1e-12);
        assert!((d.psi2_at_zero + 0.5).abs() < 1e-12);
        let scaled = d.scaled(1.0, 2.0);
        assert!((scaled.dpsi2(1.3) - 2.6).abs() < 1e-14);
        assert!((scaled.psi2_at_zero + 1.0).abs() < 1e-12);
        let n = design_unconstrained(Arc::new(Normal)).unwrap();
        assert!((n.aif() - 2f64.sqrt()).abs() < 1e-12);
        assert!(evaluate_if_profile(&n).unwrap().unbounded);
    }

    #[test]
    fn general_psi2_agrees_with_laplace_system() {
        let a = solve_laplace_psi2_system(3.0, 4.0).unwrap();
        let b = solve_general_psi2(&Laplace, 3.0, 4.0, Convention::Uncentered).unwrap();
        assert!((a.a2 - b.a2).abs() < 1e-9 && (a.b - b.b).abs() < 1e-9);
        assert!((a.nu / b.nu - 1.0).abs() < 1e-8);
        assert_eq!(b.vartheta2, 0.0);
    }

    #[test]
    fn fisher_consistent_design_has_zero_mean_psi2() {
        let f0: Arc<dyn BaseDensity> = Arc::new(Laplace);
        let d = design_constrained_with(f0, 3.0, 1.6, Convention::FisherConsistent).unwrap();
        let mut breaks = d.breakpoints();
        breaks.sort_by(f64::total_cmp);
        // E ψ₂(Z) = 2∫₀^∞ψ₂f₀
        let mean = 2.0
            * integrate_pieces(
                |z| d.values_at(z).unwrap()[2] * 0.5 * (-z).exp(),
                0.0,
                &breaks,
                60.0,
                QuadOptions::default(),
            )
            .unwrap();
        assert!(mean.abs() < 1e-8, "{mean}");
        assert!(design_kkt(&d).unwrap().max_residual() < 1e-9);
    }

    #[test]
    fn infeasible_splits() {
        assert_eq!(solve_laplace_psi1(1.0).unwrap_err().kind(), "Infeasible");
        assert_eq!(solve_laplace_psi2_system(2.0, 3.0).unwrap_err().kind(), "Infeasible");
        assert_eq!(solve_general_psi1(&Normal, 1.2).unwrap_err().kind(), "Infeasible");
    }
}
