//! Numerical building blocks shared by the estimator and design modules.

pub mod pchip;
pub mod quadrature;
pub mod roots;

pub use pchip::MonotoneCubic;
pub use quadrature::{integrate, integrate_pieces, integrate_to_infinity, QuadOptions, QuadResult};
pub use roots::{brent, expand_upper, golden_section};

/// `‖v‖_p` for finite `p ≥ 1`, and the max-norm for `p = ∞`.
pub fn lp_norm(v: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        return v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    }
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let s: f64 = v.iter().map(|x| (x.abs() / scale).powf(p)).sum();
    scale * s.powf(1.0 / p)
}

/// Hölder conjugate `p / (p − 1)`; `∞` for `p = 1`.
pub fn dual_exponent(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else {
        p / (p - 1.0)
    }
}
