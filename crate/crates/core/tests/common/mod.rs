//! Oracles and generators shared by the integration tests. Nothing here calls
//! into the numerics the library uses for the same job.
#![allow(dead_code)]

use std::sync::Arc;

use aiflab::location_scale::{LocationScaleSpec, TabulatedPsi};
use aiflab::numerics::MonotoneCubic;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Adaptive Simpson on `[a, b]`.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let err = left + right - whole;
        if depth == 0 || err.abs() <= 15.0 * tol {
            return left + right + err / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Random odd/even pair with nonnegative spline derivatives on `[0, 6]` and
/// constant derivatives beyond.
pub fn random_spline_spec(rng: &mut ChaCha8Rng) -> LocationScaleSpec {
    let knots = 4 + rng.random_range(0..6);
    let z: Vec<f64> = (0..knots).map(|k| 6.0 * k as f64 / (knots - 1) as f64).collect();
    let d1: Vec<f64> = (0..knots).map(|_| 0.05 + rng.random::<f64>()).collect();
    // ψ₂′ vanishes at 0 so ψ₂ stays smooth there; it grows like z near 0.
    let d2: Vec<f64> = z
        .iter()
        .map(|&zz| {
            if zz == 0.0 {
                0.0
            } else {
                0.05 + 2.0 * rng.random::<f64>()
            }
        })
        .collect();
    let (t1, t2) = (*d1.last().unwrap(), *d2.last().unwrap());
    let c1 = Arc::new(MonotoneCubic::new(z.clone(), d1, &[]).unwrap());
    let c2 = Arc::new(MonotoneCubic::new(z.clone(), d2, &[]).unwrap());
    let psi2_at_zero = -(0.5 + 2.0 * rng.random::<f64>());
    TabulatedPsi {
        dpsi1: c1,
        dpsi2: c2,
        psi2_at_zero,
        tail: Some(Arc::new(move |_| [t1, t2])),
    }
    .into_spec("spline", z[1..].to_vec())
}

/// OSQP-style ADMM for `min ½Σdₖxₖ²` subject to `x ≥ 0` and `l ≤ Cx ≤ u`,
/// with `C` a handful of dense rows. The linear system
/// `diag(d + σ + ρ₀) + CᵀRC` is solved by Woodbury, so an iteration is
/// `O(n·rows)`.
pub struct Admm {
    pub iterations: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
}

impl Default for Admm {
    fn default() -> Self {
        Self {
            iterations: 40_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
        }
    }
}

impl Admm {
    pub fn solve(&self, d: &[f64], c: &DMatrix<f64>, l: &[f64], u: &[f64]) -> DVector<f64> {
        let n = d.len();
        let r = c.nrows();
        // Equality rows get a much stiffer penalty.
        let rho_c: Vec<f64> = (0..r)
            .map(|i| {
                if (u[i] - l[i]).abs() < 1e-12 {
                    1e3 * self.rho
                } else {
                    self.rho
                }
            })
            .collect();
        let dinv = DVector::from_iterator(n, d.iter().map(|v| 1.0 / (v + self.sigma + self.rho)));
        // (D + CᵀRC)⁻¹ = D⁻¹ − D⁻¹Cᵀ(R⁻¹ + CD⁻¹Cᵀ)⁻¹CD⁻¹
        let cd = DMatrix::from_fn(r, n, |i, k| c[(i, k)] * dinv[k]);
        let mut small = &cd * c.transpose();
        for i in 0..r {
            small[(i, i)] += 1.0 / rho_c[i];
        }
        let small = small.try_inverse().expect("Woodbury core is invertible");
        let solve = |b: &DVector<f64>| -> DVector<f64> {
            let db = b.component_mul(&dinv);
            let t = &small * (c * &db);
            db - cd.transpose() * t
        };
        let mut x = DVector::zeros(n);
        let (mut zx, mut yx) = (DVector::<f64>::zeros(n), DVector::<f64>::zeros(n));
        let (mut zc, mut yc) = (DVector::<f64>::zeros(r), DVector::<f64>::zeros(r));
        let rc = DVector::from_vec(rho_c.clone());
        for _ in 0..self.iterations {
            let top = &zx * self.rho - &yx;
            let bottom = zc.component_mul(&rc) - &yc;
            let rhs = &x * self.sigma + top + c.transpose() * bottom;
            let xt = solve(&rhs);
            let zct = c * &xt;
            x = &xt * self.alpha + &x * (1.0 - self.alpha);
            for k in 0..n {
                let zr = self.alpha * xt[k] + (1.0 - self.alpha) * zx[k];
                let zn = (zr + yx[k] / self.rho).max(0.0);
                yx[k] += self.rho * (zr - zn);
                zx[k] = zn;
            }
            for i in 0..r {
                let zr = self.alpha * zct[i] + (1.0 - self.alpha) * zc[i];
                let zn = (zr + yc[i] / rc[i]).clamp(l[i], u[i]);
                yc[i] += rc[i] * (zr - zn);
                zc[i] = zn;
            }
        }
        x
    }
}

/// Trapezoid weights on a grid.
pub fn trapezoid_weights(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    (0..n)
        .map(|k| {
            let left = if k > 0 { z[k] - z[k - 1] } else { 0.0 };
            let right = if k + 1 < n { z[k + 1] - z[k] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// Minimal `½∫₀^∞v²f₀` over `v ≥ 0` on the grid, subject to one equality
/// `∫₀^∞ e v = 1` and inequalities `∫₀^∞ gᵢ v ≤ bᵢ` (all by trapezoid).
pub fn grid_qp(z: &[f64], f0: &[f64], eq: &[f64], ineq: &[(Vec<f64>, f64)]) -> f64 {
    let n = z.len();
    let w = trapezoid_weights(z);
    let d: Vec<f64> = (0..n).map(|k| w[k] * f0[k]).collect();
    let r = 1 + ineq.len();
    let mut c = DMatrix::zeros(r, n);
    let mut l = vec![f64::NEG_INFINITY; r];
    let mut u = vec![0.0; r];
    for k in 0..n {
        c[(0, k)] = w[k] * eq[k];
    }
    l[0] = 1.0;
    u[0] = 1.0;
    for (i, (g, b)) in ineq.iter().enumerate() {
        for k in 0..n {
            c[(1 + i, k)] = w[k] * g[k];
        }
        u[1 + i] = *b;
    }
    let v = Admm::default().solve(&d, &c, &l, &u);
    // Feasibility-restoring rescale: the equality holds only to ADMM accuracy.
    let v = v.map(|x| x.max(0.0));
    let s: f64 = (0..n).map(|k| w[k] * eq[k] * v[k]).sum();
    let v = v / s;
    0.5 * (0..n).map(|k| w[k] * f0[k] * v[k] * v[k]).sum::<f64>()
}
