//! Reference symmetric stable transition densities.
//!
//! The reference process is the standard isotropic alpha-stable process with
//! characteristic function exp(-t|xi|^alpha). For alpha = 1, d = 1 the density
//! is the Cauchy kernel in closed form; otherwise it is recovered by Fourier
//! (d = 1) or Hankel (d = 2) inversion.

use crate::error::{Error, Result};
use crate::quad::gauss_legendre;
use statrs::function::gamma::gamma;

/// How the reference density is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefKind {
    /// alpha = 1, d = 1: t / (pi ((x-y)^2 + t^2)).
    CauchyClosedForm,
    /// Numerical inversion of exp(-t|xi|^alpha); d = 1 or isotropic d = 2.
    FourierInversion,
}

#[derive(Clone, Debug)]
pub struct ReferenceDensity {
    pub kind: RefKind,
    pub alpha: f64,
    pub dim: usize,
    /// Spatial truncation for tabulated masses and mass checks.
    pub grid_halfwidth: f64,
    /// Frequency-resolution budget for the Fourier/Hankel inversion.
    pub fft_points: usize,
}

/// Normalizing constant c so that the Levy measure c |h|^{-(d+alpha)} dh
/// reproduces the symbol |xi|^alpha. For alpha = 1, d = 1 this is 1/pi.
pub fn levy_normalizing_constant(alpha: f64, dim: usize) -> f64 {
    let d = dim as f64;
    alpha * 2f64.powf(alpha - 1.0) * gamma((alpha + d) / 2.0)
        / (std::f64::consts::PI.powf(d / 2.0) * gamma(1.0 - alpha / 2.0))
}

impl ReferenceDensity {
    pub fn new(alpha: f64, dim: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::domain(format!("alpha must lie in (0,2), got {alpha}")));
        }
        if dim != 1 && dim != 2 {
            return Err(Error::config(format!(
                "reference density supports dim 1 or isotropic dim 2, got {dim}"
            )));
        }
        let kind = if dim == 1 && (alpha - 1.0).abs() < 1e-12 {
            RefKind::CauchyClosedForm
        } else {
            RefKind::FourierInversion
        };
        Ok(ReferenceDensity {
            kind,
            alpha,
            dim,
            grid_halfwidth: 50.0,
            fft_points: 4096,
        })
    }

    /// Transition density at separation r = |x - y| (isotropic).
    pub fn density_radial(&self, t: f64, r: f64) -> Result<f64> {
        if t <= 0.0 {
            return Err(Error::domain(format!("time must be positive, got {t}")));
        }
        let r = r.abs();
        let val = match self.kind {
            RefKind::CauchyClosedForm => t / (std::f64::consts::PI * (r * r + t * t)),
            RefKind::FourierInversion => match self.dim {
                1 => self.invert_1d(t, r),
                2 => self.invert_2d(t, r),
                _ => unreachable!(),
            },
        };
        if !val.is_finite() || val <= 0.0 {
            return Err(Error::numeric(format!(
                "reference density non-positive or non-finite at t={t}, r={r}: {val}"
            )));
        }
        Ok(val)
    }

    /// Transition density between scalar points (d = 1).
    pub fn density(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        if self.dim != 1 {
            return Err(Error::config(
                "pointwise density takes scalar points only for dim 1; use density_radial".into(),
            ));
        }
        self.density_radial(t, x - y)
    }

    /// CDF of the displacement at time t (d = 1).
    pub fn cdf(&self, t: f64, x: f64) -> Result<f64> {
        if self.dim != 1 {
            return Err(Error::config("cdf is defined for dim 1 only".into()));
        }
        if t <= 0.0 {
            return Err(Error::domain(format!("time must be positive, got {t}")));
        }
        Ok(match self.kind {
            RefKind::CauchyClosedForm => 0.5 + (x / t).atan() / std::f64::consts::PI,
            RefKind::FourierInversion => {
                // sin(x xi)/xi is bounded at 0, so the same panel scheme works.
                let half = self.freq_integral(t, |xi| {
                    if xi == 0.0 {
                        x
                    } else {
                        (x * xi).sin() / xi
                    }
                });
                0.5 + half / std::f64::consts::PI
            }
        })
    }

    /// Mass assigned by the displacement law to the interval [a, b] (d = 1).
    pub fn interval_mass(&self, t: f64, a: f64, b: f64) -> Result<f64> {
        Ok((self.cdf(t, b)? - self.cdf(t, a)?).max(0.0))
    }

    fn cutoff(&self, t: f64) -> f64 {
        // exp(-t xi^alpha) < 1e-17 beyond this point.
        (39.0 / t).powf(1.0 / self.alpha)
    }

    fn freq_integral<F: Fn(f64) -> f64>(&self, t: f64, weight: F) -> f64 {
        let xi_max = self.cutoff(t);
        let base_panels = (self.fft_points / 8).max(16);
        let panels = base_panels;
        let (nodes, weights) = gauss_legendre(8);
        let dp = xi_max / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let lo = p as f64 * dp;
            let c = lo + 0.5 * dp;
            let hw = 0.5 * dp;
            let mut acc = 0.0;
            for (xn, wn) in nodes.iter().zip(weights.iter()) {
                let xi = c + hw * xn;
                acc += wn * weight(xi) * (-t * xi.powf(self.alpha)).exp();
            }
            total += acc * hw;
        }
        total
    }

    fn invert_1d(&self, t: f64, r: f64) -> f64 {
        // Oscillation control: keep the phase advance per panel below ~2 rad.
        let xi_max = self.cutoff(t);
        let base_panels = (self.fft_points / 8).max(16);
        let osc_panels = ((r * xi_max) / 2.0).ceil() as usize;
        let panels = base_panels.max(osc_panels).min(200_000);
        let (nodes, weights) = gauss_legendre(8);
        let dp = xi_max / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let lo = p as f64 * dp;
            let c = lo + 0.5 * dp;
            let hw = 0.5 * dp;
            let mut acc = 0.0;
            for (xn, wn) in nodes.iter().zip(weights.iter()) {
                let xi = c + hw * xn;
                acc += wn * (r * xi).cos() * (-t * xi.powf(self.alpha)).exp();
            }
            total += acc * hw;
        }
        total / std::f64::consts::PI
    }

    fn invert_2d(&self, t: f64, r: f64) -> f64 {
        let xi_max = self.cutoff(t);
        let base_panels = (self.fft_points / 8).max(16);
        let osc_panels = ((r * xi_max) / 2.0).ceil() as usize;
        let panels = base_panels.max(osc_panels).min(200_000);
        let (nodes, weights) = gauss_legendre(8);
        let dp = xi_max / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let lo = p as f64 * dp;
            let c = lo + 0.5 * dp;
            let hw = 0.5 * dp;
            let mut acc = 0.0;
            for (xn, wn) in nodes.iter().zip(weights.iter()) {
                let xi = c + hw * xn;
                acc += wn * xi * bessel_j0(r * xi) * (-t * xi.powf(self.alpha)).exp();
            }
            total += acc * hw;
        }
        total / (2.0 * std::f64::consts::PI)
    }
}

/// J0 Bessel function by the classic rational approximations
/// (|x| <= 8: polynomial; |x| > 8: asymptotic with P0/Q0 corrections).
pub fn bessel_j0(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 8.0 {
        let y = x * x;
        let p1 = -2957821389.0 + y * (7062834065.0 + y * (-512359803.6
            + y * (10879881.29 + y * (-86327.92757 + y * 228.4622733))));
        let p2 = 40076544269.0 + y * (745249964.8 + y * (7189466.438
            + y * (47447.26470 + y * (226.1030244 + y))));
        p1 / p2
    } else {
        let z = 8.0 / ax;
        let y = z * z;
        let xx = ax - 0.785398164;
        let p1 = 1.0 + y * (-0.1098628627e-2 + y * (0.2734510407e-4
            + y * (-0.2073370639e-5 + y * 0.2093887211e-6)));
        let p2 = -0.1562499995e-1 + y * (0.1430488765e-3 + y * (-0.6911147651e-5
            + y * (0.7621095161e-6 + y * (-0.934935152e-7))));
        (2.0 / (std::f64::consts::PI * ax)).sqrt() * (xx.cos() * p1 - z * xx.sin() * p2)
    }
}
