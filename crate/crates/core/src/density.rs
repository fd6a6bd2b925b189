//! Symmetric base densities `f₀` for the location-scale model.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::read_csv_points;
use crate::error::{AifError, Result};
use crate::numerics::{brent, expand_upper, MonotoneCubic};

/// A density symmetric about zero.
pub trait BaseDensity: Send + Sync {
    fn name(&self) -> &str;
    fn pdf(&self, z: f64) -> f64;
    fn cdf(&self, z: f64) -> f64;
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64;

    /// Points where `f₀` is not smooth on `z > 0` (for quadrature splitting).
    fn kinks(&self) -> Vec<f64> {
        Vec::new()
    }

    /// `F₀(z) − ½`, without the cancellation near zero.
    fn central_mass(&self, z: f64) -> f64 {
        self.cdf(z) - 0.5
    }

    /// Right end of the support, if bounded.
    fn support_end(&self) -> f64 {
        f64::INFINITY
    }

    /// Quantile for `u ∈ [1/2, 1)`; the lower half follows by symmetry.
    fn quantile(&self, u: f64) -> f64 {
        if u == 0.5 {
            return 0.0;
        }
        if u < 0.5 {
            return -self.quantile(1.0 - u);
        }
        // Compare tails rather than CDF values to keep precision near u → 1.
        let tail = 1.0 - u;
        let f = |z: f64| (1.0 - self.cdf(z)) - tail;
        let end = self.support_end();
        let hi0 = if end.is_finite() { end } else { 1.0 };
        let bracket = if end.is_finite() {
            Ok((0.0, end))
        } else {
            expand_upper(f, 0.0, hi0, 2.0, 200)
        };
        bracket
            .and_then(|(lo, hi)| brent(f, lo, hi, 1e-14, 300))
            .unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Normal;

impl BaseDensity for Normal {
    fn name(&self) -> &str {
        "normal"
    }
    fn pdf(&self, z: f64) -> f64 {
        (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }
    fn cdf(&self, z: f64) -> f64 {
        0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
    }
    fn central_mass(&self, z: f64) -> f64 {
        0.5 * libm::erf(z / std::f64::consts::SQRT_2)
    }
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }
}

/// Standard Laplace, `f₀(z) = e^{−|z|}/2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Laplace;

impl BaseDensity for Laplace {
    fn name(&self) -> &str {
        "laplace"
    }
    fn pdf(&self, z: f64) -> f64 {
        0.5 * (-z.abs()).exp()
    }
    fn cdf(&self, z: f64) -> f64 {
        if z < 0.0 {
            0.5 * z.exp()
        } else {
            1.0 - 0.5 * (-z).exp()
        }
    }
    fn central_mass(&self, z: f64) -> f64 {
        -0.5 * z.signum() * (-z.abs()).exp_m1()
    }
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random::<f64>() - 0.5;
        // Inverse CDF; u = −0.5 has probability zero but maps to −∞, so nudge.
        let t = (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE);
        -u.signum() * t.ln()
    }
    fn quantile(&self, u: f64) -> f64 {
        if u >= 0.5 {
            -(2.0 * (1.0 - u)).ln()
        } else {
            (2.0 * u).ln()
        }
    }
}

/// A symmetric density given on a grid over `z ≥ 0`, interpolated with a
/// monotone cubic and renormalized to unit mass. Zero beyond the table.
#[derive(Debug, Clone)]
pub struct Tabulated {
    name: String,
    curve: Arc<MonotoneCubic>,
    half_mass: f64,
}

impl Tabulated {
    pub fn new(name: &str, z: Vec<f64>, f: Vec<f64>) -> Result<Self> {
        if z.first().copied() != Some(0.0) {
            return Err(AifError::Input("tabulated density must start at z = 0".into()));
        }
        if f.iter().any(|v| *v < 0.0) {
            return Err(AifError::Input("tabulated density has negative values".into()));
        }
        let curve = MonotoneCubic::new(z, f, &[])?;
        let half_mass = curve.total_integral();
        if !(half_mass > 0.0) {
            return Err(AifError::Input("tabulated density has zero mass".into()));
        }
        Ok(Self {
            name: name.to_string(),
            curve: Arc::new(curve),
            half_mass,
        })
    }

    /// Reads `z,f` rows (header optional, detected by a non-numeric first line).
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AifError::Input(format!("cannot read {}: {e}", path.display())))?;
        let header = text
            .lines()
            .find(|l| !l.trim().is_empty())
            .map(|l| l.split(',').any(|c| c.trim().parse::<f64>().is_err()))
            .unwrap_or(false);
        let rows = read_csv_points(text.as_bytes(), header)?;
        if rows[0].len() != 2 {
            return Err(AifError::Input("density table needs two columns: z, f".into()));
        }
        let (z, f) = rows.into_iter().map(|r| (r[0], r[1])).unzip();
        Self::new(&format!("table:{}", path.display()), z, f)
    }
}

impl BaseDensity for Tabulated {
    fn name(&self) -> &str {
        &self.name
    }
    fn pdf(&self, z: f64) -> f64 {
        let a = z.abs();
        if a > self.curve.upper() {
            return 0.0;
        }
        0.5 * self.curve.eval(a).max(0.0) / self.half_mass
    }
    fn cdf(&self, z: f64) -> f64 {
        let a = z.abs().min(self.curve.upper());
        let half = 0.5 * self.curve.integral(a) / self.half_mass;
        if z >= 0.0 {
            0.5 + half
        } else {
            0.5 - half
        }
    }
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        self.quantile(u.clamp(1e-300, 1.0 - 1e-16))
    }
    fn kinks(&self) -> Vec<f64> {
        self.curve.knots().to_vec()
    }
    fn support_end(&self) -> f64 {
        self.curve.upper()
    }
}

pub fn by_name(name: &str) -> Result<Arc<dyn BaseDensity>> {
    match name {
        "normal" => Ok(Arc::new(Normal)),
        "laplace" => Ok(Arc::new(Laplace)),
        other => match other.strip_prefix("table:") {
            Some(path) => Ok(Arc::new(Tabulated::from_csv(Path::new(path))?)),
            None => Err(AifError::Config(format!(
                "unknown density {other:?} (expected normal, laplace or table:<csv>)"
            ))),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{integrate_pieces, QuadOptions};
    use rand::SeedableRng;

    fn mass(d: &dyn BaseDensity) -> f64 {
        2.0 * integrate_pieces(|z| d.pdf(z), 0.0, &d.kinks(), d.support_end(), QuadOptions::default()).unwrap()
    }

    #[test]
    fn unit_mass_and_symmetry() {
        for d in [&Normal as &dyn BaseDensity, &Laplace] {
            assert!((mass(d) - 1.0).abs() < 1e-10, "{}", d.name());
            for z in [0.1, 1.3, 4.0] {
                assert_eq!(d.pdf(z), d.pdf(-z));
                assert!((d.cdf(z) + d.cdf(-z) - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn quantiles_invert_cdf() {
        for d in [&Normal as &dyn BaseDensity, &Laplace] {
            for u in [0.6, 0.9, 0.999, 1.0 - 1e-10] {
                let z = d.quantile(u);
                assert!(((1.0 - d.cdf(z)) / (1.0 - u) - 1.0).abs() < 1e-8, "{} {u}", d.name());
            }
        }
        assert!((Normal.quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
    }

    #[test]
    fn laplace_sampling_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let m2: f64 = (0..n).map(|_| Laplace.sample(&mut rng).powi(2)).sum::<f64>() / n as f64;
        assert!((m2 - 2.0).abs() < 0.05);
    }

    #[test]
    fn tabulated_normal_matches() {
        let z: Vec<f64> = (0..=400).map(|k| k as f64 * 0.02).collect();
        let f: Vec<f64> = z.iter().map(|v| Normal.pdf(*v)).collect();
        let t = Tabulated::new("t", z, f).unwrap();
        assert!((mass(&t) - 1.0).abs() < 1e-10);
        assert!((t.cdf(1.0) - Normal.cdf(1.0)).abs() < 1e-7);
        assert!((t.pdf(-0.77) - Normal.pdf(0.77)).abs() < 1e-7);
    }
}
