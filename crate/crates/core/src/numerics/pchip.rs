//! Shape-preserving (Fritsch–Carlson) piecewise cubic Hermite interpolation
//! with exact antiderivatives.
//!
//! Knots listed as breaks split the table into independent pieces, so a kink
//! in the underlying function is not smoothed across.

use crate::error::{AifError, Result};

#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    // (derivative at left knot, derivative at right knot) for each interval
    slopes: Vec<(f64, f64)>,
    // antiderivative at each knot, anchored at x[0]
    cumulative: Vec<f64>,
}

fn endpoint_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() || m0 == 0.0 {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

fn piece_derivatives(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 2 {
        let m = (y[1] - y[0]) / (x[1] - x[0]);
        return vec![m, m];
    }
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let m: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        let (m0, m1) = (m[k - 1], m[k]);
        if m0 == 0.0 || m1 == 0.0 || m0.signum() != m1.signum() {
            d[k] = 0.0;
        } else {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / m0 + w2 / m1);
        }
    }
    d[0] = endpoint_slope(h[0], h[1], m[0], m[1]);
    d[n - 1] = endpoint_slope(h[n - 2], h[n - 3], m[n - 2], m[n - 3]);
    d
}

impl MonotoneCubic {
    /// Builds the interpolant. `breaks` holds knot indices (strictly inside the
    /// table) at which the curve may have a kink.
    pub fn new(x: Vec<f64>, y: Vec<f64>, breaks: &[usize]) -> Result<Self> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(AifError::Dimension(format!(
                "interpolation table needs matching lengths >= 2 (got {} and {})",
                x.len(),
                y.len()
            )));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(AifError::Config(
                "interpolation knots must be strictly increasing".into(),
            ));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(AifError::Numerics("non-finite interpolation table".into()));
        }
        let n = x.len();
        let mut cuts: Vec<usize> = breaks.iter().copied().filter(|&b| b > 0 && b < n - 1).collect();
        cuts.sort_unstable();
        cuts.dedup();
        let mut bounds = vec![0];
        bounds.extend(cuts);
        bounds.push(n - 1);

        let mut slopes = Vec::with_capacity(n - 1);
        for w in bounds.windows(2) {
            let (s, e) = (w[0], w[1]);
            let d = piece_derivatives(&x[s..=e], &y[s..=e]);
            for k in 0..(e - s) {
                slopes.push((d[k], d[k + 1]));
            }
        }

        let mut cumulative = vec![0.0; n];
        for i in 0..n - 1 {
            let h = x[i + 1] - x[i];
            let (d0, d1) = slopes[i];
            // Simpson's rule is exact on a cubic.
            let mid = hermite(y[i], y[i + 1], d0 * h, d1 * h, 0.5);
            cumulative[i + 1] = cumulative[i] + h / 6.0 * (y[i] + 4.0 * mid + y[i + 1]);
        }
        Ok(Self {
            x,
            y,
            slopes,
            cumulative,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    pub fn lower(&self) -> f64 {
        self.x[0]
    }

    pub fn upper(&self) -> f64 {
        *self.x.last().expect("non-empty")
    }

    fn locate(&self, t: f64) -> usize {
        match self.x.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(i) => i.min(self.x.len() - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.x.len() - 2),
        }
    }

    /// Value at `t`; `t` must lie inside the table.
    pub fn eval(&self, t: f64) -> f64 {
        let i = self.locate(t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (d0, d1) = self.slopes[i];
        hermite(self.y[i], self.y[i + 1], d0 * h, d1 * h, s)
    }

    /// Derivative of the interpolant at `t`.
    pub fn derivative(&self, t: f64) -> f64 {
        let i = self.locate(t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (d0, d1) = self.slopes[i];
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let ds = (6.0 * s * s - 6.0 * s) * y0
            + (3.0 * s * s - 4.0 * s + 1.0) * d0 * h
            + (-6.0 * s * s + 6.0 * s) * y1
            + (3.0 * s * s - 2.0 * s) * d1 * h;
        ds / h
    }

    /// `∫_{x0}^{t}` of the interpolant.
    pub fn integral(&self, t: f64) -> f64 {
        let i = self.locate(t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (d0, d1) = self.slopes[i];
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        let s4 = s3 * s;
        let part = y0 * (s4 / 2.0 - s3 + s)
            + d0 * h * (s4 / 4.0 - 2.0 * s3 / 3.0 + s2 / 2.0)
            + y1 * (-s4 / 2.0 + s3)
            + d1 * h * (s4 / 4.0 - s3 / 3.0);
        self.cumulative[i] + h * part
    }

    pub fn total_integral(&self) -> f64 {
        *self.cumulative.last().expect("non-empty")
    }
}

fn hermite(y0: f64, y1: f64, m0: f64, m1: f64, s: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * m1
}
