//! Perturbation series for the transformed transition density.
//!
//! Level 0 is the reference density; level n composes the reference kernel
//! with perturbation kernels in space-time. Two tables are maintained: the
//! signed levels q_n built from ln(1+F)-F and powers of ln(1+F), and the
//! dominating levels built from the symmetrized bounds, which majorize the
//! signed ones entry by entry.
//!
//! Discretization: spatial operators act between uniform grid cells; the
//! transition factor enters through exact cell masses (CDF differences), so
//! the short-time concentration of the reference density never has to be
//! resolved pointwise. Time integrals use Gauss-Legendre panels split at the
//! midpoint; levels are memoized on a uniform time ladder and interpolated
//! linearly, which preserves the domination inequality.

mod analysis;
mod gkernel;
mod linalg;

pub use analysis::{
    growth_constants, kato_ct, semigroup_residual, GrowthConstants, SeriesSum,
};
pub use linalg::Mat;

use crate::error::{Error, Result};
use crate::model::{heat_kernel_envelope, JumpFunctionalSpec, ProcessSpec, ReferenceDensity};
use crate::quad::{gauss_legendre, split_gl_nodes};
use rayon::prelude::*;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// Uniform spatial grid and time-quadrature resolution for the series.
#[derive(Clone, Debug)]
pub struct GridSpec {
    /// Grid covers [-x_max, x_max].
    pub x_max: f64,
    /// Number of nodes (odd, so the origin is a node).
    pub nodes: usize,
    /// Gauss-Legendre order per half-panel of each time integral.
    pub t_quad_order: usize,
    /// Uniform intervals of the memoized time ladder.
    pub time_mesh: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            x_max: 10.0,
            nodes: 161,
            t_quad_order: 16,
            time_mesh: 32,
        }
    }
}

impl GridSpec {
    pub fn spacing(&self) -> f64 {
        2.0 * self.x_max / (self.nodes - 1) as f64
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.nodes).map(|i| -self.x_max + i as f64 * h).collect()
    }

    /// Index of the node closest to x.
    pub fn index_of(&self, x: f64) -> usize {
        let h = self.spacing();
        (((x + self.x_max) / h).round() as isize).clamp(0, self.nodes as isize - 1) as usize
    }

    pub fn validate(&self, alpha: f64, t: f64) -> Result<()> {
        if self.nodes < 3 || self.nodes % 2 == 0 {
            return Err(Error::config("grid nodes must be odd and >= 3".into()));
        }
        if self.time_mesh < 2 {
            return Err(Error::config("time mesh must have at least 2 intervals".into()));
        }
        let needed = 10.0 * t.powf(1.0 / alpha);
        if self.x_max < needed {
            return Err(Error::config(format!(
                "grid halfwidth {} too small for t = {t}: need at least {needed:.3}",
                self.x_max
            )));
        }
        Ok(())
    }
}

/// Per-level quadrature diagnostics.
#[derive(Clone, Copy, Debug, Default)]
pub struct LevelDiag {
    /// Reference mass escaping the spatial window at the final time.
    pub tail_mass_deficit: f64,
    /// Max-abs change of the final-time matrix when the time rule order is
    /// halved; a proxy for the time-quadrature error.
    pub time_refinement_delta: f64,
}

/// Grid-sampled signed and dominating series levels at one horizon.
#[derive(Clone, Debug)]
pub struct SeriesTable {
    pub t: f64,
    pub grid: GridSpec,
    pub level: u32,
    pub n_max: usize,
    /// q[n][source][target], n = 0..=n_max; q[0] is the reference density.
    pub q: Vec<Mat>,
    /// Dominating table, same shape; q_bar[0] = 2 p.
    pub q_bar: Vec<Mat>,
    pub quad_err: Vec<LevelDiag>,
    pub alpha: f64,
    pub m_nodes: Vec<f64>,
}

/// Cache of transition cell masses keyed by the exact time bits.
struct TransitionCache {
    reference: ReferenceDensity,
    h: f64,
    nodes: usize,
    lags: Mutex<HashMap<u64, Arc<Vec<f64>>>>,
}

impl TransitionCache {
    fn new(reference: ReferenceDensity, h: f64, nodes: usize) -> Self {
        TransitionCache {
            reference,
            h,
            nodes,
            lags: Mutex::new(HashMap::new()),
        }
    }

    /// Lebesgue masses of the displacement law over cells at lags 0..nodes-1.
    fn lag_masses(&self, t: f64) -> Result<Arc<Vec<f64>>> {
        if let Some(v) = self.lags.lock().unwrap().get(&t.to_bits()) {
            return Ok(v.clone());
        }
        let mut v = Vec::with_capacity(self.nodes);
        for k in 0..self.nodes {
            let c = k as f64 * self.h;
            v.push(self.reference.interval_mass(t, c - 0.5 * self.h, c + 0.5 * self.h)?);
        }
        let v = Arc::new(v);
        self.lags.lock().unwrap().insert(t.to_bits(), v.clone());
        Ok(v)
    }
}

/// Builds and evaluates series tables for one model.
pub struct SeriesEngine {
    pub spec: ProcessSpec,
    pub fspec: JumpFunctionalSpec,
    pub grid: GridSpec,
    pub level: u32,
    pub n_max: usize,
    nodes: Vec<f64>,
    m_nodes: Vec<f64>,
    /// Signed kernels, index i-1 holds power i (i = 1: ln(1+F)-F; i >= 2:
    /// ln(1+F)^i), truncated at |w-y| <= 1/l, cell-integrated with M.
    k_signed: Vec<Mat>,
    /// Dominating kernels: c_bar F_bar^2 (i = 1), c_bar^i F_bar^i (i >= 2).
    k_bar: Vec<Mat>,
    /// Symmetric double-cell kernel of F_bar^2 (no c_bar), used by the
    /// double-composition evaluator.
    kf2_sym: Mat,
    trans: TransitionCache,
}

/// Integrates `f` over [lo, hi] excluding the ball |y - w| <= threshold,
/// splitting exactly at the truncation boundary and at w itself.
fn cell_integral<F: Fn(f64) -> f64>(f: &F, w: f64, lo: f64, hi: f64, threshold: f64) -> f64 {
    let mut cuts = vec![lo, hi];
    for c in [w - threshold, w + threshold, w] {
        if c > lo && c < hi {
            cuts.push(c);
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (nodes, weights) = gauss_legendre(8);
    let mut total = 0.0;
    for pair in cuts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        if (mid - w).abs() <= threshold {
            continue; // inside the truncation ball
        }
        let c = 0.5 * (a + b);
        let hw = 0.5 * (b - a);
        let mut acc = 0.0;
        for (x, wt) in nodes.iter().zip(weights.iter()) {
            acc += wt * f(c + hw * x);
        }
        total += acc * hw;
    }
    total
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut v = 1.0f64;
    for i in 0..k {
        v = v * (n - i) as f64 / (i + 1) as f64;
    }
    v
}

impl SeriesEngine {
    pub fn new(
        spec: &ProcessSpec,
        fspec: &JumpFunctionalSpec,
        reference: &ReferenceDensity,
        grid: &GridSpec,
        level: u32,
        n_max: usize,
    ) -> Result<Self> {
        if spec.dim != 1 {
            return Err(Error::config("series evaluation is implemented for dim 1 only".into()));
        }
        if n_max < 1 {
            return Err(Error::config("n_max must be >= 1".into()));
        }
        if level == 0 {
            return Err(Error::config("truncation level l must be >= 1".into()));
        }
        spec.validate()?;
        let nodes = grid.x_nodes();
        let h = grid.spacing();
        let m_nodes: Vec<f64> = nodes.iter().map(|&x| (spec.density_m)(x)).collect();
        let threshold = 1.0 / level as f64;
        let exponent = spec.dim as f64 + spec.alpha;

        let build = |power: usize, dominating: bool| -> Mat {
            let mut mat = Mat::zeros(grid.nodes);
            mat.data
                .par_chunks_mut(grid.nodes)
                .enumerate()
                .for_each(|(i, row)| {
                    let w = nodes[i];
                    for (j, rj) in row.iter_mut().enumerate() {
                        let (lo, hi) = (nodes[j] - 0.5 * h, nodes[j] + 0.5 * h);
                        let val = if dominating {
                            let c_pow = fspec.c_bar.powi(power as i32);
                            cell_integral(
                                &|y: f64| {
                                    let fb = fspec.f_bar(w, y);
                                    let base = if power == 1 { fb * fb } else { fb.powi(power as i32) };
                                    c_pow * base
                                        * (w - y).abs().powf(-exponent)
                                        * (spec.density_m)(y)
                                },
                                w,
                                lo,
                                hi,
                                0.0,
                            )
                        } else {
                            cell_integral(
                                &|y: f64| {
                                    let f = (fspec.f)(w, y);
                                    let g = if power == 1 {
                                        f.ln_1p() - f
                                    } else {
                                        f.ln_1p().powi(power as i32)
                                    };
                                    2.0 * (spec.c_factor)(w, y)
                                        * g
                                        * (w - y).abs().powf(-exponent)
                                        * (spec.density_m)(y)
                                },
                                w,
                                lo,
                                hi,
                                threshold,
                            )
                        };
                        *rj = val;
                    }
                });
            mat
        };

        let k_signed: Vec<Mat> = (1..=n_max).map(|i| build(i, false)).collect();
        let k_bar: Vec<Mat> = (1..=n_max).map(|i| build(i, true)).collect();

        // Symmetric double-cell average of F_bar^2 |u-v|^{-(d+alpha)}
        // (Lebesgue in both variables, divided by h). Exactly symmetric,
        // which the double-composition symmetry check relies on.
        let (gl_nodes, gl_weights) = gauss_legendre(4);
        let mut kf2_sym = Mat::zeros(grid.nodes);
        kf2_sym
            .data
            .par_chunks_mut(grid.nodes)
            .enumerate()
            .for_each(|(i, row)| {
                let wi = nodes[i];
                for (j, rj) in row.iter_mut().enumerate() {
                    if j < i {
                        continue; // fill upper triangle, mirror later
                    }
                    let yj = nodes[j];
                    let mut acc = 0.0;
                    for (ua, wa) in gl_nodes.iter().zip(gl_weights.iter()) {
                        let u = wi + 0.5 * h * ua;
                        for (vb, wb) in gl_nodes.iter().zip(gl_weights.iter()) {
                            let v = yj + 0.5 * h * vb;
                            if u == v {
                                continue;
                            }
                            let fb = fspec.f_bar(u, v);
                            acc += wa * wb * fb * fb * (u - v).abs().powf(-exponent);
                        }
                    }
                    // Jacobian (h/2)^2, divided by h for one net cell weight.
                    *rj = acc * 0.25 * h;
                }
            });
        for i in 0..grid.nodes {
            for j in 0..i {
                let v = kf2_sym.get(j, i);
                kf2_sym.set(i, j, v);
            }
        }

        Ok(SeriesEngine {
            spec: spec.clone(),
            fspec: fspec.clone(),
            grid: grid.clone(),
            level,
            n_max,
            nodes,
            m_nodes,
            k_signed,
            k_bar,
            kf2_sym,
            trans: TransitionCache::new(reference.clone(), h, grid.nodes),
        })
    }

    pub fn x_nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub(crate) fn kf2_sym(&self) -> &Mat {
        &self.kf2_sym
    }

    pub(crate) fn m_nodes(&self) -> &[f64] {
        &self.m_nodes
    }

    pub(crate) fn reference(&self) -> &ReferenceDensity {
        &self.trans.reference
    }

    /// Left transition factor: cell masses with the state-space density.
    fn fill_p_m(&self, t: f64, factor: f64, out: &mut Mat) -> Result<()> {
        let lags = self.trans.lag_masses(t)?;
        let n = self.grid.nodes;
        for i in 0..n {
            for j in 0..n {
                let lag = i.abs_diff(j);
                out.data[i * n + j] = factor * lags[lag] * self.m_nodes[j];
            }
        }
        Ok(())
    }

    /// Right transition factor: plain Lebesgue cell masses.
    fn fill_p_leb(&self, t: f64, factor: f64, out: &mut Mat) -> Result<()> {
        let lags = self.trans.lag_masses(t)?;
        let n = self.grid.nodes;
        for i in 0..n {
            for j in 0..n {
                let lag = i.abs_diff(j);
                out.data[i * n + j] = factor * lags[lag];
            }
        }
        Ok(())
    }

    /// Cell masses of the displacement law seen from an arbitrary point.
    pub(crate) fn point_masses(&self, t: f64, from: f64, factor: f64) -> Result<Vec<f64>> {
        let h = self.grid.spacing();
        let mut v = Vec::with_capacity(self.grid.nodes);
        for &w in &self.nodes {
            v.push(
                factor
                    * self
                        .trans
                        .reference
                        .interval_mass(t, w - 0.5 * h - from, w + 0.5 * h - from)?,
            );
        }
        Ok(v)
    }

    fn interp_into(ladder: &[Mat], tau: f64, dt: f64, out: &mut Mat) {
        let m = ladder.len() - 1;
        let pos = (tau / dt).clamp(0.0, m as f64);
        let k0 = (pos.floor() as usize).min(m - 1);
        let w = pos - k0 as f64;
        out.blend_into(&ladder[k0], w, &ladder[k0 + 1]);
    }

    /// Builds levels 1..=n_max on the uniform time ladder over [0, t].
    /// Returns (per-level mesh matrices, per-level time-refinement deltas).
    fn ladder(&self, t: f64, dominating: bool) -> Result<(Vec<Vec<Mat>>, Vec<f64>)> {
        let n = self.grid.nodes;
        let mm = self.grid.time_mesh;
        let dt = t / mm as f64;
        let h = self.grid.spacing();
        let factor = if dominating { 2.0 } else { 1.0 };
        let kernels = if dominating { &self.k_bar } else { &self.k_signed };

        let mut levels: Vec<Vec<Mat>> = Vec::with_capacity(self.n_max);
        let mut deltas = Vec::with_capacity(self.n_max);
        let mut p_left = Mat::zeros(n);
        let mut p_right = Mat::zeros(n);
        let mut blend = Mat::zeros(n);
        let mut partial = Mat::zeros(n);
        let mut r_acc = Mat::zeros(n);
        let mut out = Mat::zeros(n);

        for m in 1..=self.n_max {
            let mut mesh: Vec<Mat> = Vec::with_capacity(mm + 1);
            mesh.push(Mat::zeros(n));
            for k in 1..=mm {
                let tau_k = t * k as f64 / mm as f64;
                let q_k = self.assemble_level_time(
                    m,
                    tau_k,
                    self.grid.t_quad_order,
                    dt,
                    factor,
                    kernels,
                    &levels,
                    (&mut p_left, &mut p_right, &mut blend, &mut partial, &mut r_acc, &mut out),
                    h,
                )?;
                mesh.push(q_k);
            }
            // Time-refinement probe at the final time with half the order.
            let coarse = self.assemble_level_time(
                m,
                t,
                (self.grid.t_quad_order / 2).max(2),
                dt,
                factor,
                kernels,
                &levels,
                (&mut p_left, &mut p_right, &mut blend, &mut partial, &mut r_acc, &mut out),
                h,
            )?;
            deltas.push(coarse.max_abs_diff(&mesh[mm]));
            levels.push(mesh);
        }
        Ok((levels, deltas))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble_level_time(
        &self,
        m: usize,
        tau: f64,
        order: usize,
        dt: f64,
        factor: f64,
        kernels: &[Mat],
        levels: &[Vec<Mat>],
        bufs: (&mut Mat, &mut Mat, &mut Mat, &mut Mat, &mut Mat, &mut Mat),
        h: f64,
    ) -> Result<Mat> {
        let (p_left, p_right, blend, partial, r_acc, out) = bufs;
        let n = self.grid.nodes;
        let mut q_acc = Mat::zeros(n);
        for (s, w) in split_gl_nodes(tau, order) {
            let remaining = (tau - s).max(0.0);
            r_acc.fill_zero();
            for i in 1..m {
                Self::interp_into(&levels[m - i - 1], remaining, dt, blend);
                partial.mul_into(&kernels[i - 1], blend);
                r_acc.scaled_add(binomial(m, i), partial);
            }
            // Deepest term: the remaining factor is the reference itself,
            // entering through cell masses paired with the cell-averaged
            // kernel (product of cell averages).
            self.fill_p_leb(remaining, factor, p_right)?;
            partial.mul_into(&kernels[m - 1], p_right);
            r_acc.scaled_add(1.0 / h, partial);

            self.fill_p_m(s, factor, p_left)?;
            out.mul_into(p_left, r_acc);
            q_acc.scaled_add(w, out);
        }
        Ok(q_acc)
    }

    /// Pointwise reference matrix p(t, x_i, z_j) (level 0).
    fn level0(&self, t: f64, factor: f64) -> Result<Mat> {
        let n = self.grid.nodes;
        let mut by_lag = Vec::with_capacity(n);
        let h = self.grid.spacing();
        for k in 0..n {
            by_lag.push(factor * self.trans.reference.density_radial(t, k as f64 * h)?);
        }
        let mut mat = Mat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                mat.data[i * n + j] = by_lag[i.abs_diff(j)];
            }
        }
        Ok(mat)
    }

    /// Computes the full table (signed and dominating levels) at horizon t.
    pub fn table(&self, t: f64) -> Result<SeriesTable> {
        if t <= 0.0 {
            return Err(Error::domain(format!("horizon must be positive, got {t}")));
        }
        self.grid.validate(self.spec.alpha, t)?;
        let (signed, signed_deltas) = self.ladder(t, false)?;
        let (bar, bar_deltas) = self.ladder(t, true)?;
        let mm = self.grid.time_mesh;

        let mut q = Vec::with_capacity(self.n_max + 1);
        let mut q_bar = Vec::with_capacity(self.n_max + 1);
        q.push(self.level0(t, 1.0)?);
        q_bar.push(self.level0(t, 2.0)?);
        for m in 0..self.n_max {
            q.push(signed[m][mm].clone());
            q_bar.push(bar[m][mm].clone());
        }

        let tail = 1.0
            - self
                .trans
                .reference
                .interval_mass(t, -self.grid.x_max - 0.5 * self.grid.spacing(),
                               self.grid.x_max + 0.5 * self.grid.spacing())?;
        let quad_err = (0..self.n_max)
            .map(|m| LevelDiag {
                tail_mass_deficit: tail,
                time_refinement_delta: signed_deltas[m].max(bar_deltas[m]),
            })
            .collect();

        Ok(SeriesTable {
            t,
            grid: self.grid.clone(),
            level: self.level,
            n_max: self.n_max,
            q,
            q_bar,
            quad_err,
            alpha: self.spec.alpha,
            m_nodes: self.m_nodes.clone(),
        })
    }

    /// Signed levels only (the dominating table left empty).
    pub fn signed_table(&self, t: f64) -> Result<SeriesTable> {
        let mut full = self.partial_table(t, false)?;
        full.q_bar = Vec::new();
        Ok(full)
    }

    /// Dominating levels only (the signed table left empty).
    pub fn dominating_table(&self, t: f64) -> Result<SeriesTable> {
        self.partial_table(t, true)
    }

    fn partial_table(&self, t: f64, dominating: bool) -> Result<SeriesTable> {
        if t <= 0.0 {
            return Err(Error::domain(format!("horizon must be positive, got {t}")));
        }
        self.grid.validate(self.spec.alpha, t)?;
        let (mesh, deltas) = self.ladder(t, dominating)?;
        let mm = self.grid.time_mesh;
        let mut lv = Vec::with_capacity(self.n_max + 1);
        lv.push(self.level0(t, if dominating { 2.0 } else { 1.0 })?);
        for m in 0..self.n_max {
            lv.push(mesh[m][mm].clone());
        }
        let tail = 1.0
            - self
                .trans
                .reference
                .interval_mass(t, -self.grid.x_max - 0.5 * self.grid.spacing(),
                               self.grid.x_max + 0.5 * self.grid.spacing())?;
        let quad_err = (0..self.n_max)
            .map(|m| LevelDiag {
                tail_mass_deficit: tail,
                time_refinement_delta: deltas[m],
            })
            .collect();
        let (q, q_bar) = if dominating {
            (Vec::new(), lv)
        } else {
            (lv, Vec::new())
        };
        Ok(SeriesTable {
            t,
            grid: self.grid.clone(),
            level: self.level,
            n_max: self.n_max,
            q,
            q_bar,
            quad_err,
            alpha: self.spec.alpha,
            m_nodes: self.m_nodes.clone(),
        })
    }
}

impl SeriesTable {
    /// Heat-kernel envelope sampled like the table.
    pub fn envelope_at(&self, i: usize, j: usize) -> f64 {
        let h = self.grid.spacing();
        let r = i.abs_diff(j) as f64 * h;
        heat_kernel_envelope(self.alpha, 1, self.t, r)
    }

    /// Worst violation of the domination q_bar >= |q| over all levels and
    /// nodes (positive value = violation magnitude).
    pub fn domination_violation(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for n in 0..=self.n_max {
            for (qv, bv) in self.q[n].data.iter().zip(self.q_bar[n].data.iter()) {
                worst = worst.max(qv.abs() - bv);
            }
        }
        worst
    }

    /// Row mass sum_z q_bar[n][x][z] M(z) h, maximized over x.
    pub fn max_row_mass(&self, n: usize) -> f64 {
        let h = self.grid.spacing();
        let size = self.grid.nodes;
        let mat = &self.q_bar[n];
        (0..size)
            .map(|i| {
                (0..size)
                    .map(|j| mat.get(i, j) * self.m_nodes[j] * h)
                    .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Column mass sum_x q_bar[n][x][z] M(x) h, maximized over z.
    pub fn max_col_mass(&self, n: usize) -> f64 {
        let h = self.grid.spacing();
        let size = self.grid.nodes;
        let mat = &self.q_bar[n];
        (0..size)
            .map(|j| {
                (0..size)
                    .map(|i| mat.get(i, j) * self.m_nodes[i] * h)
                    .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Integral of a signed level against M over targets for one source row.
    pub fn row_integral(&self, n: usize, source_idx: usize) -> f64 {
        let h = self.grid.spacing();
        let size = self.grid.nodes;
        (0..size)
            .map(|j| self.q[n].get(source_idx, j) * self.m_nodes[j] * h)
            .sum()
    }

    /// CSV export: one file per level with rows (x, z, q_n, q_bar_n).
    pub fn write_level_csv<W: std::io::Write>(
        &self,
        out: &mut W,
        n: usize,
    ) -> std::io::Result<()> {
        writeln!(out, "x,z,q_n,q_bar_n")?;
        let nodes = self.grid.x_nodes();
        for (i, &x) in nodes.iter().enumerate() {
            for (j, &z) in nodes.iter().enumerate() {
                let qv = self.q.get(n).map_or(f64::NAN, |m| m.get(i, j));
                let bv = self.q_bar.get(n).map_or(f64::NAN, |m| m.get(i, j));
                writeln!(out, "{x:.16e},{z:.16e},{qv:.16e},{bv:.16e}")?;
            }
        }
        Ok(())
    }
}
