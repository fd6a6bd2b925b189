//! Globally adaptive Gauss–Kronrod (7/15) quadrature.
//!
//! Finite intervals are bisected adaptively, always splitting the panel with
//! the largest error estimate. Half-infinite intervals are mapped onto a
//! finite one with `z = a + tan(u)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{AifError, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-13,
            rel_tol: 1e-12,
            max_subdivisions: 4000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, &x) in XGK.iter().take(7).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Integrates `f` over the finite interval `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<QuadResult> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(AifError::Config(format!(
            "finite integration limits required, got [{a}, {b}]"
        )));
    }
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
        });
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };

    let (v0, e0) = gk15(&f, lo, hi);
    let mut evaluations = 15;
    let mut heap = BinaryHeap::new();
    heap.push(Panel {
        a: lo,
        b: hi,
        value: v0,
        error: e0,
    });
    let mut total = v0;
    let mut total_err = e0;

    loop {
        if !total.is_finite() || !total_err.is_finite() {
            return Err(AifError::IntegralDiverged(format!(
                "non-finite partial sum on [{lo}, {hi}]"
            )));
        }
        let target = opts.abs_tol.max(opts.rel_tol * total.abs());
        if total_err <= target {
            break;
        }
        if heap.len() >= opts.max_subdivisions {
            return Err(AifError::IntegralDiverged(format!(
                "no convergence on [{lo}, {hi}] after {} panels (estimate {total:.6e}, error {total_err:.3e})",
                heap.len()
            )));
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Panel can no longer be split in floating point.
            heap.push(worst);
            let remaining: f64 = heap.iter().map(|p| p.error).sum();
            if remaining <= target * 10.0 {
                break;
            }
            return Err(AifError::IntegralDiverged(format!(
                "panel collapsed near {mid:.6e} without reaching tolerance"
            )));
        }
        let (vl, el) = gk15(&f, worst.a, mid);
        let (vr, er) = gk15(&f, mid, worst.b);
        evaluations += 30;
        total += vl + vr - worst.value;
        total_err += el + er - worst.error;
        heap.push(Panel {
            a: worst.a,
            b: mid,
            value: vl,
            error: el,
        });
        heap.push(Panel {
            a: mid,
            b: worst.b,
            value: vr,
            error: er,
        });
    }

    // Re-sum to shed the drift accumulated by incremental updates.
    let value: f64 = heap.iter().map(|p| p.value).sum();
    let error: f64 = heap.iter().map(|p| p.error).sum();
    Ok(QuadResult {
        value: sign * value,
        error,
        evaluations,
    })
}

/// Integrates `f` over `[a, ∞)` through the substitution `z = a + tan(u)`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, opts: QuadOptions) -> Result<QuadResult> {
    let mapped = |u: f64| {
        let t = u.tan();
        let jac = 1.0 + t * t;
        let v = f(a + t);
        if v == 0.0 {
            0.0
        } else {
            v * jac
        }
    };
    integrate(mapped, 0.0, std::f64::consts::FRAC_PI_2, opts)
}

/// Integrates over `[lo, hi]` (where `hi` may be `+∞`), splitting at every
/// interior breakpoint so that kinks of the integrand fall on panel edges.
pub fn integrate_pieces<F: Fn(f64) -> f64>(f: F, lo: f64, breaks: &[f64], hi: f64, opts: QuadOptions) -> Result<f64> {
    let mut cuts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|x| x.is_finite() && *x > lo && *x < hi)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut points = Vec::with_capacity(cuts.len() + 2);
    points.push(lo);
    points.extend(cuts);
    let mut total = 0.0;
    for w in points.windows(2) {
        total += integrate(&f, w[0], w[1], opts)?.value;
    }
    let last = *points.last().expect("at least lo");
    if hi.is_infinite() {
        total += integrate_to_infinity(&f, last, opts)?.value;
    } else if hi > last {
        total += integrate(&f, last, hi, opts)?.value;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0, QuadOptions::default()).unwrap();
        let exact = (64.0 - 1.0) / 6.0 - (8.0 + 1.0);
        assert!((r.value - exact).abs() < 1e-13);
    }

    #[test]
    fn gaussian_half_line() {
        let r = integrate_to_infinity(|x| (-0.5 * x * x).exp(), 0.0, QuadOptions::default()).unwrap();
        let exact = (std::f64::consts::PI / 2.0).sqrt();
        assert!((r.value - exact).abs() < 1e-12);
    }

    #[test]
    fn laplace_moments() {
        let f = |z: f64| 0.5 * (-z).exp();
        let m2 = integrate_to_infinity(|z| z * z * f(z), 0.0, QuadOptions::default()).unwrap();
        assert!((m2.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let r = integrate(|x| x.cos(), 1.0, 0.0, QuadOptions::default()).unwrap();
        assert!((r.value + 1f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn divergent_tail_is_reported() {
        let err = integrate_to_infinity(|x| 1.0 / (1.0 + x), 0.0, QuadOptions::default()).unwrap_err();
        assert_eq!(err.kind(), "IntegralDiverged");
    }

    #[test]
    fn kinked_integrand_with_breaks() {
        let f = |x: f64| (x - 0.3).abs();
        let v = integrate_pieces(f, 0.0, &[0.3], 1.0, QuadOptions::default()).unwrap();
        let exact = 0.3 * 0.3 / 2.0 + 0.7 * 0.7 / 2.0;
        assert!((v - exact).abs() < 1e-15);
    }
}
