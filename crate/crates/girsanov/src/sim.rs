//! Path simulation for stable-like processes.
//!
//! Jumps above a cutoff arrive as a thinned Poisson process: candidate jumps
//! are proposed from the constant dominating kernel 2 c_max m_bar |h|^{-1-a}
//! and accepted with probability C(x,x+h) M(x+h) / (c_max m_bar). Two modes:
//!
//! * `PiecewiseConstant` — state frozen between accepted jumps; exact
//!   compound-Poisson dynamics for the truncated kernel, which makes the
//!   pathwise functional identities hold to machine precision.
//! * `AsmussenRosinski` — jumps below the cutoff replaced by a Brownian
//!   motion of matching variance, applied at proposal times; used when the
//!   terminal law matters (density estimation).

use crate::error::{Error, Result};
use crate::model::ProcessSpec;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SimMode {
    PiecewiseConstant { epsilon: f64 },
    AsmussenRosinski { epsilon: f64 },
}

impl SimMode {
    pub fn epsilon(&self) -> f64 {
        match self {
            SimMode::PiecewiseConstant { epsilon } | SimMode::AsmussenRosinski { epsilon } => {
                *epsilon
            }
        }
    }
}

/// One recorded jump of size at least 1/l.
#[derive(Clone, Copy, Debug)]
pub struct JumpEvent {
    pub time: f64,
    pub pre_state: f64,
    pub post_state: f64,
    pub size: f64,
}

/// A piece of the trajectory on which the recorded state is constant.
#[derive(Clone, Copy, Debug)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub state: f64,
}

#[derive(Clone, Debug)]
pub struct PathRecord {
    pub x0: f64,
    pub horizon: f64,
    pub segments: Vec<Segment>,
    pub large_jumps: Vec<JumpEvent>,
    pub terminal: f64,
    pub seed: u64,
    pub mode: SimMode,
    /// Recording threshold 1/l.
    pub threshold: f64,
    /// Truncation level l the path was simulated for.
    pub level: u32,
}

impl PathRecord {
    /// Asserts the structural invariants: segments partition [0, T] with
    /// matching endpoints, jumps are sorted and above threshold, terminal
    /// state matches the last segment.
    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::numeric("path has no segments".into()));
        }
        let mut t = 0.0;
        for seg in &self.segments {
            if (seg.start - t).abs() > 1e-12 || seg.end < seg.start {
                return Err(Error::numeric("segments do not partition [0, T]".into()));
            }
            t = seg.end;
        }
        if (t - self.horizon).abs() > 1e-12 {
            return Err(Error::numeric("segments do not reach the horizon".into()));
        }
        let last = self.segments.last().unwrap();
        if last.state != self.terminal {
            return Err(Error::numeric("terminal state mismatch".into()));
        }
        let mut prev = -1.0;
        for j in &self.large_jumps {
            if j.time <= prev {
                return Err(Error::numeric("jumps not strictly increasing in time".into()));
            }
            prev = j.time;
            if j.size < self.threshold {
                return Err(Error::numeric("recorded jump below threshold".into()));
            }
            if (j.size - (j.post_state - j.pre_state).abs()).abs() > 1e-12 {
                return Err(Error::numeric("jump size inconsistent with states".into()));
            }
        }
        Ok(())
    }
}

/// Derives a per-path seed from a master seed, stable across platforms and
/// independent of scheduling (splitmix64 over master xor index).
pub fn derive_path_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Brownian variance rate matching the jumps removed below the cutoff:
/// int_{|h| < eps} h^2 c |h|^{-1-alpha} dh = 2 c eps^{2-alpha} / (2-alpha).
pub fn small_jump_variance_rate(spec: &ProcessSpec, epsilon: f64) -> f64 {
    2.0 * spec.levy_const * epsilon.powf(2.0 - spec.alpha) / (2.0 - spec.alpha)
}

/// Total proposal intensity of the dominating kernel above the cutoff:
/// int_{|h| >= eps} 2 c_max m_bar |h|^{-1-alpha} dh.
pub fn dominating_rate(spec: &ProcessSpec, epsilon: f64) -> f64 {
    4.0 * spec.c_max * spec.m_bar * epsilon.powf(-spec.alpha) / spec.alpha
}

pub fn simulate_path(
    spec: &ProcessSpec,
    x0: f64,
    horizon: f64,
    level: u32,
    mode: SimMode,
    seed: u64,
) -> Result<PathRecord> {
    if spec.dim != 1 {
        return Err(Error::config("simulation is implemented for dim 1 only".into()));
    }
    spec.validate()?;
    if horizon <= 0.0 {
        return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
    }
    if level == 0 {
        return Err(Error::config("truncation level l must be >= 1".into()));
    }
    let threshold = 1.0 / level as f64;
    let epsilon = mode.epsilon();
    if !(epsilon > 0.0 && epsilon <= threshold) {
        return Err(Error::config(format!(
            "need 0 < epsilon <= 1/l; got epsilon={epsilon}, 1/l={threshold}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rate = dominating_rate(spec, epsilon);
    let sigma2 = match mode {
        SimMode::AsmussenRosinski { .. } => small_jump_variance_rate(spec, epsilon),
        SimMode::PiecewiseConstant { .. } => 0.0,
    };
    let brownian = sigma2 > 0.0;

    let mut segments = Vec::new();
    let mut large_jumps = Vec::new();
    let mut t = 0.0f64;
    let mut x = x0;
    let mut seg_start = 0.0f64;

    if rate > 0.0 {
        loop {
            let u: f64 = rng.random::<f64>();
            // Guard against u == 0 from the open-interval convention.
            let dt = -(u.max(f64::MIN_POSITIVE)).ln() / rate;
            let t_next = t + dt;
            if t_next >= horizon {
                break;
            }
            t = t_next;

            if brownian {
                // Diffuse over the elapsed interval, closing the segment at
                // the proposal time so the recorded skeleton tracks the state.
                let g: f64 = StandardNormal.sample(&mut rng);
                let increment = (sigma2 * dt).sqrt() * g;
                if increment != 0.0 {
                    segments.push(Segment {
                        start: seg_start,
                        end: t,
                        state: x,
                    });
                    seg_start = t;
                    x += increment;
                }
            }

            // Pareto-tail proposal |h| = eps * u^{-1/alpha}, sign uniform.
            let u_sz: f64 = rng.random::<f64>();
            let mag = epsilon * u_sz.max(f64::MIN_POSITIVE).powf(-1.0 / spec.alpha);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let y = x + sign * mag;

            let ratio = (spec.c_factor)(x, y) * (spec.density_m)(y) / (spec.c_max * spec.m_bar);
            if ratio > 1.0 + 1e-12 {
                return Err(Error::numeric(format!(
                    "thinning bound violated: C(x,y) M(y) = {:.6e} exceeds c_max m_bar at x={x}, y={y}",
                    ratio * spec.c_max * spec.m_bar
                )));
            }
            let accept: f64 = rng.random::<f64>();
            if accept < ratio {
                segments.push(Segment {
                    start: seg_start,
                    end: t,
                    state: x,
                });
                if mag >= threshold {
                    large_jumps.push(JumpEvent {
                        time: t,
                        pre_state: x,
                        post_state: y,
                        size: mag,
                    });
                }
                x = y;
                seg_start = t;
            }
        }
    }

    if brownian {
        // Remaining Brownian displacement up to the horizon.
        let dt = horizon - seg_start;
        if dt > 0.0 {
            let g: f64 = StandardNormal.sample(&mut rng);
            let increment = (sigma2 * dt).sqrt() * g;
            if increment != 0.0 {
                segments.push(Segment {
                    start: seg_start,
                    end: horizon,
                    state: x,
                });
                seg_start = horizon;
                x += increment;
            }
        }
    }
    if seg_start < horizon || segments.is_empty() {
        segments.push(Segment {
            start: seg_start,
            end: horizon,
            state: x,
        });
    } else {
        // The horizon coincided with the last boundary; pin the terminal
        // state with a zero-length closing segment.
        segments.push(Segment {
            start: horizon,
            end: horizon,
            state: x,
        });
    }

    let record = PathRecord {
        x0,
        horizon,
        segments,
        large_jumps,
        terminal: x,
        seed,
        mode,
        threshold,
        level,
    };
    record.validate()?;
    Ok(record)
}

/// CSV dump: one row per segment and per recorded jump.
pub fn write_paths_csv<W: std::io::Write>(
    out: &mut W,
    paths: &[PathRecord],
) -> std::io::Result<()> {
    writeln!(out, "path_id,kind,t_start,t_end,state,jump_size")?;
    for (id, p) in paths.iter().enumerate() {
        for s in &p.segments {
            writeln!(
                out,
                "{id},segment,{:.16e},{:.16e},{:.16e},",
                s.start, s.end, s.state
            )?;
        }
        for j in &p.large_jumps {
            writeln!(
                out,
                "{id},jump,{:.16e},{:.16e},{:.16e},{:.16e}",
                j.time, j.time, j.post_state, j.size
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{reference_large_jump_rate, ProcessSpec};
    use std::sync::Arc;

    fn cauchy() -> ProcessSpec {
        ProcessSpec::standard_stable(1.0, 1).unwrap()
    }

    #[test]
    fn zero_kernel_gives_constant_path() {
        let mut spec = cauchy();
        spec.c_factor = Arc::new(|_, _| 0.0);
        spec.c_max = 0.0;
        let p = simulate_path(
            &spec,
            1.5,
            2.0,
            2,
            SimMode::PiecewiseConstant { epsilon: 0.5 },
            42,
        )
        .unwrap();
        assert_eq!(p.large_jumps.len(), 0);
        assert_eq!(p.terminal, 1.5);
        assert_eq!(p.segments.len(), 1);
    }

    #[test]
    fn reproducible_given_seed() {
        let spec = cauchy();
        let a = simulate_path(
            &spec,
            0.0,
            1.0,
            2,
            SimMode::AsmussenRosinski { epsilon: 1e-3 },
            9001,
        )
        .unwrap();
        let b = simulate_path(
            &spec,
            0.0,
            1.0,
            2,
            SimMode::AsmussenRosinski { epsilon: 1e-3 },
            9001,
        )
        .unwrap();
        assert_eq!(a.terminal.to_bits(), b.terminal.to_bits());
        assert_eq!(a.segments.len(), b.segments.len());
        assert_eq!(a.large_jumps.len(), b.large_jumps.len());
    }

    #[test]
    fn epsilon_above_threshold_is_rejected() {
        let spec = cauchy();
        let r = simulate_path(
            &spec,
            0.0,
            1.0,
            5,
            SimMode::PiecewiseConstant { epsilon: 0.5 },
            1,
        );
        assert!(r.is_err());
    }

    #[test]
    fn constant_kernel_never_rejects() {
        // With C = c_max and M = m_bar every proposal is accepted, so the
        // number of accepted jumps equals the Poisson proposal count; we just
        // check the empirical rate against the dominating rate.
        let spec = cauchy();
        let eps = 0.1;
        let mut total = 0usize;
        let n = 2000;
        for i in 0..n {
            let p = simulate_path(
                &spec,
                0.0,
                1.0,
                10,
                SimMode::PiecewiseConstant { epsilon: eps },
                derive_path_seed(7, i),
            )
            .unwrap();
            // Every accepted proposal of size >= 1/l is recorded; sizes in
            // [eps, 1/l) are accepted but unrecorded, so count segments - 1.
            total += p.segments.len() - 1;
        }
        let rate = dominating_rate(&spec, eps);
        let mean = total as f64 / n as f64;
        let se = (rate / n as f64).sqrt();
        assert!(
            (mean - rate).abs() < 4.0 * se,
            "mean {mean}, rate {rate}, se {se}"
        );
    }

    #[test]
    fn large_jump_count_matches_tail_integral() {
        // Expected count of jumps >= 0.5 over T = 1 is 4/pi for the
        // reference kernel.
        let spec = cauchy();
        let expected = reference_large_jump_rate(&spec, 0.5);
        assert!((expected - 4.0 / std::f64::consts::PI).abs() < 1e-12);
        let n = 10_000u64;
        let mut total = 0usize;
        for i in 0..n {
            let p = simulate_path(
                &spec,
                0.0,
                1.0,
                2,
                SimMode::PiecewiseConstant { epsilon: 1e-3 },
                derive_path_seed(11, i),
            )
            .unwrap();
            total += p.large_jumps.len();
        }
        let mean = total as f64 / n as f64;
        let se = (expected / n as f64).sqrt();
        assert!(
            (mean - expected).abs() < 3.0 * se,
            "mean {mean}, expected {expected}, se {se}"
        );
    }

    #[test]
    fn jump_sizes_follow_pareto_tail() {
        // Chi-square goodness of fit for accepted sizes against the
        // |h|^{-1-alpha} tail law on |h| >= eps, 10 equal-probability bins.
        let spec = cauchy();
        let eps = 0.05;
        let mut sizes = Vec::new();
        let mut i = 0u64;
        while sizes.len() < 10_000 {
            let p = simulate_path(
                &spec,
                0.0,
                1.0,
                20,
                SimMode::PiecewiseConstant { epsilon: eps },
                derive_path_seed(23, i),
            )
            .unwrap();
            sizes.extend(p.large_jumps.iter().map(|j| j.size));
            i += 1;
        }
        sizes.truncate(10_000);
        // Quantile bin edges of the Pareto(alpha, eps) law.
        let bins = 10usize;
        let mut counts = vec![0usize; bins];
        for s in &sizes {
            let u = 1.0 - (eps / s).powf(spec.alpha); // CDF value in [0,1)
            let b = ((u * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let expected = sizes.len() as f64 / bins as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 95% critical value of chi-square with 9 degrees of freedom.
        assert!(chi2 < 16.919, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn asmussen_rosinski_terminal_law_matches_cauchy() {
        // Kolmogorov-Smirnov distance below the 1% critical value.
        let spec = cauchy();
        let t = 0.5;
        let n = 10_000u64;
        let mut xs: Vec<f64> = (0..n)
            .map(|i| {
                simulate_path(
                    &spec,
                    0.0,
                    t,
                    2,
                    SimMode::AsmussenRosinski { epsilon: 1e-3 },
                    derive_path_seed(31, i),
                )
                .unwrap()
                .terminal
            })
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cdf = |x: f64| 0.5 + (x / t).atan() / std::f64::consts::PI;
        let mut ks = 0.0f64;
        for (i, &x) in xs.iter().enumerate() {
            let f = cdf(x);
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            ks = ks.max((f - lo).abs()).max((f - hi).abs());
        }
        let critical = 1.628 / (n as f64).sqrt();
        assert!(ks < critical, "ks {ks} >= {critical}");
    }

    #[test]
    fn jumps_at_coarser_level_are_subset_of_finer() {
        let spec = cauchy();
        // Same seed and epsilon: identical path realization, only the
        // recording threshold differs.
        let eps = 1e-3;
        for i in 0..50u64 {
            let seed = derive_path_seed(47, i);
            let coarse = simulate_path(
                &spec,
                0.0,
                1.0,
                2,
                SimMode::PiecewiseConstant { epsilon: eps },
                seed,
            )
            .unwrap();
            let fine = simulate_path(
                &spec,
                0.0,
                1.0,
                10,
                SimMode::PiecewiseConstant { epsilon: eps },
                seed,
            )
            .unwrap();
            for j in &coarse.large_jumps {
                assert!(fine
                    .large_jumps
                    .iter()
                    .any(|k| (k.time - j.time).abs() < 1e-15 && k.size == j.size));
            }
        }
    }
}
