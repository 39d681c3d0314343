//! Process and perturbation specifications.
//!
//! A stable-like process is described by its jump kernel
//! `2 C(x,y) |x-y|^{-(d+alpha)} M(y) dy` together with a reference transition
//! density squeezed between multiples of the stable heat-kernel envelope.
//! The perturbation is a bounded two-point function F vanishing on the
//! diagonal with inf F > -1; its logarithm bounds gate everything downstream.

mod reference;

pub use reference::{bessel_j0, levy_normalizing_constant, RefKind, ReferenceDensity};

use crate::error::{Error, Result};
use crate::quad::{adaptive_simpson, gl_integrate, integrate_to_singular_origin, split_gl_nodes};
use std::sync::Arc;

pub type PairFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type PointFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The stable-like model: stability index, dimension, kernel factor C(x,y)
/// with its bound, state-space density M(y) with its bound, and the Levy
/// normalizing constant of the reference process.
#[derive(Clone)]
pub struct ProcessSpec {
    pub alpha: f64,
    pub dim: usize,
    pub c_factor: PairFn,
    pub c_max: f64,
    pub density_m: PointFn,
    pub m_bar: f64,
    pub levy_const: f64,
    /// True when C, M and any attached F depend on (x, y) only through y - x.
    /// Lets the compensator be computed once instead of per path segment.
    pub translation_invariant: bool,
}

impl std::fmt::Debug for ProcessSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProcessSpec")
            .field("alpha", &self.alpha)
            .field("dim", &self.dim)
            .field("c_max", &self.c_max)
            .field("m_bar", &self.m_bar)
            .field("levy_const", &self.levy_const)
            .field("translation_invariant", &self.translation_invariant)
            .finish()
    }
}

impl ProcessSpec {
    /// Standard symmetric alpha-stable process: C = c_alpha/2, M = 1, so the
    /// jump kernel is c_alpha |x-y|^{-(d+alpha)} dy and the transition density
    /// inverts exp(-t |xi|^alpha).
    pub fn standard_stable(alpha: f64, dim: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(Error::config(format!("alpha must lie in (0,2), got {alpha}")));
        }
        if dim == 0 {
            return Err(Error::config("dim must be >= 1".into()));
        }
        let c = levy_normalizing_constant(alpha, dim);
        Ok(ProcessSpec {
            alpha,
            dim,
            c_factor: Arc::new(move |_, _| 0.5 * c),
            c_max: 0.5 * c,
            density_m: Arc::new(|_| 1.0),
            m_bar: 1.0,
            levy_const: c,
            translation_invariant: true,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(Error::config(format!("alpha must lie in (0,2), got {}", self.alpha)));
        }
        if self.c_max < 0.0 || !self.c_max.is_finite() {
            return Err(Error::config("c_max must be finite and >= 0".into()));
        }
        if !(self.m_bar > 0.0) {
            return Err(Error::config("m_bar must be positive".into()));
        }
        if !(self.levy_const > 0.0) {
            return Err(Error::config("levy_const must be positive".into()));
        }
        Ok(())
    }

    fn require_dim1(&self, what: &str) -> Result<()> {
        if self.dim != 1 {
            return Err(Error::config(format!(
                "{what} is implemented for dim 1 only (got dim {})",
                self.dim
            )));
        }
        Ok(())
    }

    /// Density of the jump kernel with respect to Lebesgue measure:
    /// 2 C(x,y) |x-y|^{-(d+alpha)} M(y). Singular on the diagonal.
    pub fn levy_kernel_density(&self, x: f64, y: f64) -> Result<f64> {
        self.require_dim1("levy_kernel_density")?;
        let r = (x - y).abs();
        if r == 0.0 {
            return Err(Error::domain("jump kernel is singular at x = y".into()));
        }
        let d = self.dim as f64;
        Ok(2.0 * (self.c_factor)(x, y) * r.powf(-(d + self.alpha)) * (self.density_m)(y))
    }
}

/// The perturbation F with its documented bounds and derived log constants.
#[derive(Clone)]
pub struct JumpFunctionalSpec {
    pub f: PairFn,
    /// Documented inf F, must be > -1.
    pub lower_bound: f64,
    /// Documented sup |F|.
    pub sup_abs: f64,
    /// |ln(1+F) - F| <= c1 F^2 on the range of F.
    pub c1: f64,
    /// |ln(1+F)| <= c2 |F| on the range of F.
    pub c2: f64,
    /// Dominating kernel constant: max(sup 2C * c1, sup 2C * c2, c2).
    pub c_bar: f64,
    /// max(2 sup|F|, 2 c_bar sup|F|).
    pub l_const: f64,
    pub translation_invariant: bool,
}

impl std::fmt::Debug for JumpFunctionalSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JumpFunctionalSpec")
            .field("lower_bound", &self.lower_bound)
            .field("sup_abs", &self.sup_abs)
            .field("c1", &self.c1)
            .field("c2", &self.c2)
            .field("c_bar", &self.c_bar)
            .field("l_const", &self.l_const)
            .field("translation_invariant", &self.translation_invariant)
            .finish()
    }
}

impl JumpFunctionalSpec {
    /// Builds the spec from the function and its documented bounds; the log
    /// constants come from the Lagrange remainder (c1 = 1/(2(1+lb)^2)) and
    /// the worst slope of ln(1+u)/u on [lb, oo) (c2).
    pub fn from_bounds(
        f: PairFn,
        lower_bound: f64,
        sup_abs: f64,
        sup_two_c: f64,
        translation_invariant: bool,
    ) -> Result<Self> {
        if lower_bound <= -1.0 {
            return Err(Error::config(format!(
                "inf F must exceed -1, got {lower_bound}"
            )));
        }
        let c1 = 0.5 / ((1.0 + lower_bound) * (1.0 + lower_bound));
        let c2 = if lower_bound < 0.0 {
            -(1.0 + lower_bound).ln() / (-lower_bound)
        } else {
            1.0
        };
        let c_bar = (sup_two_c * c1).max(sup_two_c * c2).max(c2);
        let l_const = (2.0 * sup_abs).max(2.0 * c_bar * sup_abs);
        Ok(JumpFunctionalSpec {
            f,
            lower_bound,
            sup_abs,
            c1,
            c2,
            c_bar,
            l_const,
            translation_invariant,
        })
    }

    /// F identically zero: the weight degenerates to 1.
    pub fn zero(sup_two_c: f64) -> Self {
        JumpFunctionalSpec::from_bounds(Arc::new(|_, _| 0.0), 0.0, 0.0, sup_two_c, true)
            .expect("zero perturbation is always valid")
    }

    /// The worked example family F(x,y) = theta * min(|x-y|,1) * exp(-|x-y|):
    /// vanishes on the diagonal, bounded by |theta|/e, square-integrable
    /// against the kernel singularity.
    pub fn f_theta(theta: f64, sup_two_c: f64) -> Result<Self> {
        if !(theta > -0.9 * std::f64::consts::E) {
            // inf F = theta/e for negative theta; keep it above -0.9.
            return Err(Error::config(format!(
                "theta = {theta} drives inf F at or below -0.9"
            )));
        }
        let f: PairFn = Arc::new(move |x: f64, y: f64| {
            let r = (x - y).abs();
            theta * r.min(1.0) * (-r).exp()
        });
        let sup_abs = theta.abs() / std::f64::consts::E;
        let lower = if theta < 0.0 { theta / std::f64::consts::E } else { 0.0 };
        JumpFunctionalSpec::from_bounds(f, lower, sup_abs, sup_two_c, true)
    }

    /// Constant perturbation off the diagonal. Does not vanish continuously
    /// at the diagonal, so its squared kernel integral diverges; used to
    /// exercise the Kato-class rejection path.
    pub fn const_off_diagonal(value: f64, sup_two_c: f64) -> Result<Self> {
        if value <= -1.0 {
            return Err(Error::config("constant perturbation must exceed -1".into()));
        }
        let f: PairFn = Arc::new(move |x: f64, y: f64| if x == y { 0.0 } else { value });
        JumpFunctionalSpec::from_bounds(
            f,
            value.min(0.0),
            value.abs(),
            sup_two_c,
            true,
        )
    }

    /// Symmetrized absolute perturbation |F(x,y)| + |F(y,x)|.
    pub fn f_bar(&self, x: f64, y: f64) -> f64 {
        (self.f)(x, y).abs() + (self.f)(y, x).abs()
    }
}

/// Stable heat-kernel envelope t^{-d/alpha} (1 ^ t^{1/alpha}/r)^{d+alpha}.
pub fn heat_kernel_envelope(alpha: f64, dim: usize, t: f64, r: f64) -> f64 {
    let d = dim as f64;
    let scale = t.powf(1.0 / alpha);
    t.powf(-d / alpha) * (1f64).min(scale / r.abs()).powf(d + alpha)
}

/// Tightest constants (M1, M2) with M1 E <= p <= M2 E over the sampled
/// (t, r) set. Errors if the density is non-finite anywhere on the grid.
pub fn fit_envelope_constants(
    reference: &ReferenceDensity,
    spec: &ProcessSpec,
    t_set: &[f64],
    r_grid: &[f64],
) -> Result<(f64, f64)> {
    if t_set.is_empty() || r_grid.is_empty() {
        return Err(Error::config("envelope fit needs nonempty t and r grids".into()));
    }
    if (reference.alpha - spec.alpha).abs() > 1e-12 || reference.dim != spec.dim {
        return Err(Error::config(
            "reference density and process spec disagree on alpha or dim".into(),
        ));
    }
    let mut m1 = f64::INFINITY;
    let mut m2: f64 = 0.0;
    for &t in t_set {
        for &r in r_grid {
            let p = reference.density_radial(t, r)?;
            if !p.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite density at t={t}, r={r}"
                )));
            }
            let ratio = p / heat_kernel_envelope(spec.alpha, spec.dim, t, r);
            m1 = m1.min(ratio);
            m2 = m2.max(ratio);
        }
    }
    if !(m1 > 0.0 && m2.is_finite()) {
        return Err(Error::numeric(format!(
            "degenerate envelope constants m1={m1}, m2={m2}"
        )));
    }
    Ok((m1, m2))
}

/// Kernel-potential of the squared symmetrized perturbation:
/// V(y) = int Fbar^2(y,w) |y-w|^{-(d+alpha)} dw. Rejects perturbations whose
/// squared decay near the diagonal is too slow for the integral to exist.
pub fn squared_kernel_potential(
    spec: &ProcessSpec,
    fspec: &JumpFunctionalSpec,
    y: f64,
    outer_cut: f64,
) -> Result<f64> {
    spec.require_dim1("squared_kernel_potential")?;
    let exponent = spec.dim as f64 + spec.alpha;
    let mut total = 0.0;
    for sign in [-1.0, 1.0] {
        let near = integrate_to_singular_origin(
            |h| {
                let fb = fspec.f_bar(y, y + sign * h);
                fb * fb * h.powf(-exponent)
            },
            1.0,
            1e-12,
        )
        .map_err(|e| {
            Error::numeric(format!(
                "squared perturbation kernel integral diverges near the diagonal at y={y}: {e}"
            ))
        })?;
        let far = adaptive_simpson(
            |h| {
                let fb = fspec.f_bar(y, y + sign * h);
                fb * fb * h.powf(-exponent)
            },
            1.0,
            outer_cut,
            1e-12,
        )?;
        total += near + far;
    }
    Ok(total)
}

/// For each horizon t, sup over an x-grid of
/// int_0^t int p(s,x,y) V(y) dy ds — the smallness table gating the class
/// membership of the squared perturbation. Increasing in t by construction.
pub fn check_kato_j(
    spec: &ProcessSpec,
    fspec: &JumpFunctionalSpec,
    t_set: &[f64],
) -> Result<Vec<(f64, f64)>> {
    spec.require_dim1("check_kato_j")?;
    if t_set.is_empty() {
        return Err(Error::config("kato check needs a nonempty t set".into()));
    }
    let mut sorted = t_set.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted.first().copied().unwrap_or(0.0) <= 0.0 {
        return Err(Error::domain("kato horizons must be positive".into()));
    }
    let reference = ReferenceDensity::new(spec.alpha, spec.dim)?;

    // Potential tabulated on a fixed y-grid; sup over a coarse x-grid.
    let y_max = 20.0;
    let ny = 161;
    let hy = 2.0 * y_max / (ny - 1) as f64;
    let mut v = Vec::with_capacity(ny);
    for j in 0..ny {
        let y = -y_max + j as f64 * hy;
        v.push(squared_kernel_potential(spec, fspec, y, 40.0)?);
    }
    let x_grid: Vec<f64> = (-5..=5).map(|k| k as f64).collect();

    let mut table = Vec::with_capacity(sorted.len());
    for &t in &sorted {
        let mut sup = 0.0f64;
        for &x in &x_grid {
            let val = gl_integrate(
                |s| {
                    let mut acc = 0.0;
                    for j in 0..ny {
                        let y = -y_max + j as f64 * hy;
                        let p = reference.density_radial(s, x - y).unwrap_or(0.0);
                        acc += p * v[j] * (spec.density_m)(y);
                    }
                    acc * hy
                },
                0.0,
                t,
                16,
            );
            sup = sup.max(val);
        }
        table.push((t, sup));
    }
    Ok(table)
}

/// Quadrature check that the reference density satisfies the semigroup
/// identity; exactness is limited only by the spatial truncation.
pub fn chapman_kolmogorov_residual(
    reference: &ReferenceDensity,
    t: f64,
    s: f64,
    x: f64,
    z: f64,
    halfwidth: f64,
) -> Result<f64> {
    let lhs = adaptive_simpson(
        |y| {
            reference.density(t, x, y).unwrap_or(0.0) * reference.density(s, y, z).unwrap_or(0.0)
        },
        -halfwidth,
        halfwidth,
        1e-11,
    )?;
    let rhs = reference.density(t + s, x, z)?;
    Ok(lhs - rhs)
}

/// Expected number of jumps larger than `threshold` per unit time for the
/// reference kernel (closed-form tail of the Levy measure).
pub fn reference_large_jump_rate(spec: &ProcessSpec, threshold: f64) -> f64 {
    // int_{|h| >= r} c |h|^{-1-alpha} dh = 2 c r^{-alpha} / alpha  (d = 1)
    2.0 * spec.levy_const * threshold.powf(-spec.alpha) / spec.alpha
}

/// Named model presets wired through the CLI and FFI.
pub struct ModelBundle {
    pub process: ProcessSpec,
    pub functional: JumpFunctionalSpec,
    pub reference: ReferenceDensity,
}

/// Resolve a preset name. `cauchy-ref` is the unperturbed Cauchy reference;
/// `ftheta-<v>` attaches the worked perturbation family with parameter v;
/// `badf-const-<v>` attaches a constant off-diagonal perturbation (rejected
/// by the Kato check; useful for exercising error paths).
pub fn preset(name: &str) -> Result<ModelBundle> {
    let process = ProcessSpec::standard_stable(1.0, 1)?;
    let reference = ReferenceDensity::new(1.0, 1)?;
    let sup_two_c = 2.0 * process.c_max;
    let functional = if name == "cauchy-ref" {
        JumpFunctionalSpec::zero(sup_two_c)
    } else if let Some(v) = name.strip_prefix("ftheta-") {
        let theta: f64 = v
            .parse()
            .map_err(|_| Error::config(format!("bad theta in preset name {name:?}")))?;
        JumpFunctionalSpec::f_theta(theta, sup_two_c)?
    } else if let Some(v) = name.strip_prefix("badf-const-") {
        let c: f64 = v
            .parse()
            .map_err(|_| Error::config(format!("bad constant in preset name {name:?}")))?;
        JumpFunctionalSpec::const_off_diagonal(c, sup_two_c)?
    } else {
        return Err(Error::config(format!("unknown preset {name:?}")));
    };
    Ok(ModelBundle {
        process,
        functional,
        reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cauchy_spec() -> ProcessSpec {
        ProcessSpec::standard_stable(1.0, 1).unwrap()
    }

    #[test]
    fn kernel_density_reference_value() {
        // C = 1/(2 pi), M = 1, x = 0, y = 1: 2 C / 1 = 1/pi.
        let spec = cauchy_spec();
        let v = spec.levy_kernel_density(0.0, 1.0).unwrap();
        assert!((v - 1.0 / std::f64::consts::PI).abs() < 1e-14);
    }

    #[test]
    fn kernel_density_decays_and_scales() {
        let spec = cauchy_spec();
        let mut prev = f64::INFINITY;
        for r in [0.5, 1.0, 2.0, 4.0, 8.0, 16.0] {
            let v = spec.levy_kernel_density(0.0, r).unwrap();
            assert!(v > 0.0 && v < prev, "kernel must decay monotonically");
            prev = v;
        }
        // Doubling the separation divides by 2^{d+alpha} = 4 at alpha=1, d=1.
        let a = spec.levy_kernel_density(0.0, 1.0).unwrap();
        let b = spec.levy_kernel_density(0.0, 2.0).unwrap();
        assert!((b / a - 0.25).abs() < 1e-13);
    }

    #[test]
    fn kernel_density_rejects_diagonal() {
        let spec = cauchy_spec();
        assert!(spec.levy_kernel_density(1.5, 1.5).is_err());
    }

    #[test]
    fn envelope_constants_for_cauchy() {
        // Exact extremes of p/E are 1/(2 pi) and 1/pi.
        let spec = cauchy_spec();
        let reference = ReferenceDensity::new(1.0, 1).unwrap();
        let r_grid: Vec<f64> = (0..=400).map(|k| k as f64 * 10.0 / 400.0).collect();
        let (m1, m2) =
            fit_envelope_constants(&reference, &spec, &[0.1, 0.5, 1.0], &r_grid).unwrap();
        assert!(m1 > 0.15 && m2 < 0.5, "m1={m1}, m2={m2}");
        assert!((m2 - 1.0 / std::f64::consts::PI).abs() < 1e-6);
        assert!((m1 - 0.5 / std::f64::consts::PI).abs() < 1e-3);
        // On-diagonal ratio is exactly 1/pi for every t.
        for t in [0.1, 0.5, 1.0] {
            let p = reference.density_radial(t, 0.0).unwrap();
            let ratio = p / heat_kernel_envelope(1.0, 1, t, 0.0);
            assert!((ratio - 1.0 / std::f64::consts::PI).abs() < 1e-14);
        }
    }

    #[test]
    fn log_bounds_hold_on_dense_samples() {
        use rand::Rng;
        use rand::SeedableRng;
        let fspec = JumpFunctionalSpec::f_theta(-0.9, 1.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100_000 {
            let x: f64 = rng.random_range(-10.0..10.0);
            let y: f64 = rng.random_range(-10.0..10.0);
            let f = (fspec.f)(x, y);
            assert!(f > fspec.lower_bound - 1e-12 && f.abs() <= fspec.sup_abs + 1e-12);
            let g = (1.0 + f).ln();
            assert!((g - f).abs() <= fspec.c1 * f * f + 1e-15);
            assert!(g.abs() <= fspec.c2 * f.abs() + 1e-15);
        }
    }

    #[test]
    fn f_theta_vanishes_on_diagonal() {
        let fspec = JumpFunctionalSpec::f_theta(0.3, 1.0).unwrap();
        for x in [-3.0, 0.0, 7.5] {
            assert_eq!((fspec.f)(x, x), 0.0);
        }
    }

    #[test]
    fn kato_table_zero_functional() {
        let spec = cauchy_spec();
        let fspec = JumpFunctionalSpec::zero(2.0 * spec.c_max);
        let table = check_kato_j(&spec, &fspec, &[0.1, 0.5]).unwrap();
        for (_, v) in table {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn kato_table_finite_and_monotone_for_ftheta() {
        let spec = cauchy_spec();
        let fspec = JumpFunctionalSpec::f_theta(0.3, 2.0 * spec.c_max).unwrap();
        let table = check_kato_j(&spec, &fspec, &[0.05, 0.2, 0.8]).unwrap();
        assert!(table.windows(2).all(|w| w[1].1 >= w[0].1));
        assert!(table.iter().all(|(_, v)| v.is_finite() && *v > 0.0));
        // Linear smallness at the origin: value at 0.05 well below 0.8-value.
        assert!(table[0].1 < 0.25 * table[2].1);
    }

    #[test]
    fn kato_rejects_constant_off_diagonal_perturbation() {
        let spec = cauchy_spec();
        let fspec = JumpFunctionalSpec::const_off_diagonal(0.5, 2.0 * spec.c_max).unwrap();
        let err = check_kato_j(&spec, &fspec, &[0.1]);
        assert!(err.is_err(), "divergent potential must be rejected");
    }

    #[test]
    fn chapman_kolmogorov_for_cauchy() {
        let reference = ReferenceDensity::new(1.0, 1).unwrap();
        let resid =
            chapman_kolmogorov_residual(&reference, 0.25, 0.25, 0.0, 0.0, 50.0).unwrap();
        assert!(resid.abs() < 1e-5, "residual {resid}");
    }

    #[test]
    fn preset_names_resolve() {
        assert!(preset("cauchy-ref").is_ok());
        assert!(preset("ftheta-0.3").is_ok());
        assert!(preset("badf-const-0.5").is_ok());
        assert!(preset("nope").is_err());
    }
}
