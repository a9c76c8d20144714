//! Local and weighted Besov–Hölder norm estimators
//!
//! For `α > 0`, `‖f‖_{-α,C} = sup R^α |Ψ_R * f(x)|` over dyadic `R ≤ 1` and sites `x`
//! with `B_R(x) ⊂ C`; the weighted version multiplies by `ρ(x) = (1 + |x|^2)^{-σ/2}`
//! and takes the sup over the fundamental domain. Scales below eight grid spacings
//! are never used: there the discrete convolution only sees lattice artefacts.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gaussian::{real_of, spectral_of};
use crate::grid::{RealField, TorusGrid};
use crate::stats::{median, percentile};

/// Radial bump profile supported in the unit ball. Normalised on each grid and scale
/// so the discrete integral is exactly one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// `(1 - |x|^2)^k`.
    Polynomial { power: u32 },
    /// `cos^2(π|x|/2)`.
    Cosine,
}

impl Default for Profile {
    fn default() -> Self {
        Profile::Polynomial { power: 3 }
    }
}

impl Profile {
    pub fn value(&self, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        match *self {
            Profile::Polynomial { power } => (1.0 - r * r).powi(power as i32),
            Profile::Cosine => (0.5 * PI * r).cos().powi(2),
        }
    }
}

/// Where a norm is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    /// Whole torus with `ρ(x) = (1 + |x|^2)^{-σ/2}`, `x` in `[-L, L)^2`.
    Weighted {
        sigma: f64,
    },
    Ball {
        centre: [f64; 2],
        radius: f64,
    },
    Box {
        centre: [f64; 2],
        half_width: f64,
    },
}

impl Region {
    pub fn unweighted() -> Self {
        Region::Weighted { sigma: 0.0 }
    }

    /// Weight of site `x` for a kernel of radius `r`, or `None` if `B_r(x)` leaves the set.
    fn admit(&self, grid: &TorusGrid, x: [f64; 2], r: f64) -> Option<f64> {
        match *self {
            Region::Weighted { sigma } => Some(weight(x, sigma)),
            Region::Ball { centre, radius } => {
                let d = grid.torus_displacement(x, centre);
                (d[0].hypot(d[1]) + r <= radius + 1e-12).then_some(1.0)
            }
            Region::Box { centre, half_width } => {
                let d = grid.torus_displacement(x, centre);
                (d[0].abs().max(d[1].abs()) + r <= half_width + 1e-12).then_some(1.0)
            }
        }
    }

    /// Twice as large (same centre); `Weighted` is returned unchanged.
    pub fn doubled(&self) -> Region {
        match *self {
            Region::Ball { centre, radius } => Region::Ball {
                centre,
                radius: 2.0 * radius,
            },
            Region::Box { centre, half_width } => Region::Box {
                centre,
                half_width: 2.0 * half_width,
            },
            w => w,
        }
    }
}

pub fn weight(x: [f64; 2], sigma: f64) -> f64 {
    if sigma == 0.0 {
        1.0
    } else {
        (1.0 + x[0] * x[0] + x[1] * x[1]).powf(-0.5 * sigma)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormConfig {
    pub alpha: f64,
    #[serde(default)]
    pub profile: Profile,
    /// Finest dyadic level `J` (`R = 2^{-J}`); defaults to the finest with `R ≥ 8h`.
    #[serde(default)]
    pub max_level: Option<u32>,
}

/// Precomputed `Ψ_R` transforms for one grid.
#[derive(Clone, Debug)]
pub struct NormEngine {
    grid: Arc<TorusGrid>,
    profile: Profile,
    scales: Vec<f64>,
    kernels: Vec<Vec<Complex64>>,
}

/// Finest admissible dyadic level: `2^{-J} ≥ 8h`.
pub fn finest_level(grid: &TorusGrid) -> Option<u32> {
    let ratio = 1.0 / (8.0 * grid.spacing());
    (ratio >= 1.0).then(|| ratio.log2().floor() as u32)
}

impl NormEngine {
    pub fn new(grid: &Arc<TorusGrid>, profile: Profile, max_level: Option<u32>) -> Result<Self> {
        let finest = finest_level(grid).ok_or_else(|| {
            invalid(format!(
                "spacing {} too coarse: no scale R <= 1 with R >= 8h",
                grid.spacing()
            ))
        })?;
        let j = match max_level {
            Some(j) if j > finest => {
                return Err(invalid(format!(
                    "level J = {j} too large for this grid (finest admissible {finest}, R >= 8h)"
                )))
            }
            Some(j) => j,
            None => finest,
        };
        let scales: Vec<f64> = (0..=j).map(|k| 0.5f64.powi(k as i32)).collect();
        Self::with_scales(grid, profile, scales)
    }

    /// Engine over an arbitrary list of scales in `[8h, min(1, L)]`.
    pub fn with_scales(grid: &Arc<TorusGrid>, profile: Profile, scales: Vec<f64>) -> Result<Self> {
        if grid.half_length() < 1.0 {
            return Err(invalid(
                "norm estimators need L >= 1 so unit balls fit the torus",
            ));
        }
        let mut kernels = Vec::with_capacity(scales.len());
        for &r in &scales {
            if !(r >= 8.0 * grid.spacing() * (1.0 - 1e-12) && r <= 1.0) {
                return Err(invalid(format!(
                    "scale {r} outside [8h, 1] = [{}, 1]",
                    8.0 * grid.spacing()
                )));
            }
            kernels.push(kernel_hat(grid, |d| profile.value(d.hypot_r() / r))?);
        }
        Ok(NormEngine {
            grid: Arc::clone(grid),
            profile,
            scales,
            kernels,
        })
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn profile(&self) -> Profile {
        self.profile
    }

    /// `Ψ_R * f` for the `level`-th scale.
    pub fn smooth(&self, f: &RealField, level: usize) -> Result<RealField> {
        self.grid.check_same(f.grid())?;
        Ok(convolve_hat(f, &self.kernels[level]))
    }

    /// `‖f‖_{-α,region}` for `α > 0`.
    pub fn neg_norm(&self, f: &RealField, alpha: f64, region: &Region) -> Result<f64> {
        if !(alpha > 0.0) {
            return Err(invalid(
                "neg_norm expects alpha > 0 (computes the -alpha norm)",
            ));
        }
        let mut best = 0.0f64;
        let mut any = false;
        for (level, &r) in self.scales.iter().enumerate() {
            let s = self.smooth(f, level)?;
            let scale = r.powf(alpha);
            for (idx, &v) in s.values().iter().enumerate() {
                if let Some(w) = region.admit(&self.grid, self.grid.position(idx), r) {
                    any = true;
                    best = best.max(w * scale * v.abs());
                }
            }
        }
        if !any {
            return Err(invalid("region admits no site at any scale"));
        }
        Ok(best)
    }
}

trait Hypot {
    fn hypot_r(&self) -> f64;
}

impl Hypot for [f64; 2] {
    fn hypot_r(&self) -> f64 {
        self[0].hypot(self[1])
    }
}

/// Wrapped offset of site index `i` from the origin (index 0).
fn wrapped(grid: &TorusGrid, idx: usize) -> [f64; 2] {
    let n = grid.n() as i64;
    let h = grid.spacing();
    let w = |k: i64| {
        if k < n / 2 {
            k as f64 * h
        } else {
            (k - n) as f64 * h
        }
    };
    [w((idx / grid.n()) as i64), w((idx % grid.n()) as i64)]
}

/// Transform of a kernel sampled at wrapped offsets and normalised to unit
/// discrete integral, pre-multiplied by the volume so that pointwise products
/// implement `h^2 Σ_y k(x - y) f(y)`.
fn kernel_hat(grid: &Arc<TorusGrid>, k: impl Fn([f64; 2]) -> f64) -> Result<Vec<Complex64>> {
    let vals: Vec<f64> = (0..grid.sites()).map(|idx| k(wrapped(grid, idx))).collect();
    let mass = vals.iter().sum::<f64>() * grid.cell_area();
    if !(mass > 0.0) {
        return Err(invalid("kernel has no mass on this grid"));
    }
    let mut data: Vec<Complex64> = vals
        .iter()
        .map(|&v| Complex64::new(v / mass, 0.0))
        .collect();
    grid.forward_in_place(&mut data);
    let vol = grid.volume();
    data.iter_mut().for_each(|c| *c *= vol);
    Ok(data)
}

fn convolve_hat(f: &RealField, k_hat: &[Complex64]) -> RealField {
    let mut hat = spectral_of(f);
    for (c, k) in hat.iter_mut().zip(k_hat) {
        *c *= k;
    }
    real_of(f.grid(), &hat)
}

/// `‖f‖_{-α,region}` with a fresh engine.
pub fn neg_norm(f: &RealField, cfg: &NormConfig, region: &Region) -> Result<f64> {
    NormEngine::new(f.grid(), cfg.profile, cfg.max_level)?.neg_norm(f, cfg.alpha, region)
}

/// Sup norm over a region (weighted by `ρ` in the weighted case).
pub fn sup_norm(f: &RealField, region: &Region) -> f64 {
    let g = f.grid();
    f.values()
        .iter()
        .enumerate()
        .filter_map(|(idx, &v)| region.admit(g, g.position(idx), 0.0).map(|w| w * v.abs()))
        .fold(0.0, f64::max)
}

/// Lattice offsets `z` with `0 < |z| ≤ 1` as (row shift, column shift, |z|).
fn unit_offsets(grid: &TorusGrid) -> Vec<(i64, i64, f64)> {
    let h = grid.spacing();
    let m = ((1.0 / h).floor() as i64).min(grid.n() as i64 / 2);
    let mut out = Vec::new();
    for a in -m..=m {
        for b in -m..=m {
            let r = h * ((a * a + b * b) as f64).sqrt();
            if r > 0.0 && r <= 1.0 + 1e-12 {
                out.push((a, b, r));
            }
        }
    }
    out
}

/// `[f]_{α,region}`: the largest `|f(x) - f(y)| / |x - y|^α` over site pairs at
/// distance `≤ 1`. Base points `x` run over every `stride`-th site in each
/// direction; all offsets are used. In the weighted case `x` carries `ρ(x)`, in
/// the local case both points must lie in the set.
pub fn holder_seminorm(f: &RealField, alpha: f64, region: &Region, stride: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("holder exponent must lie in (0, 1)"));
    }
    if stride == 0 {
        return Err(invalid("stride must be at least 1"));
    }
    let g = f.grid();
    let n = g.n() as i64;
    let v = f.values();
    let offsets: Vec<(i64, i64, f64)> = unit_offsets(g)
        .into_iter()
        .map(|(a, b, r)| (a, b, r.powf(-alpha)))
        .collect();
    let inside: Vec<Option<f64>> = (0..g.sites())
        .map(|idx| region.admit(g, g.position(idx), 0.0))
        .collect();
    let local = !matches!(region, Region::Weighted { .. });
    let mut best = 0.0f64;
    for i in (0..n).step_by(stride) {
        for j in (0..n).step_by(stride) {
            let x = (i * n + j) as usize;
            let Some(w) = inside[x] else { continue };
            let fx = v[x];
            let mut m = 0.0f64;
            for &(a, b, inv) in &offsets {
                let y = (((i + a).rem_euclid(n)) * n + (j + b).rem_euclid(n)) as usize;
                if local && inside[y].is_none() {
                    continue;
                }
                m = m.max((fx - v[y]).abs() * inv);
            }
            best = best.max(w * m);
        }
    }
    Ok(best)
}

/// `‖f‖_{α,region} = ‖f‖_region + [f]_{α,region}`.
pub fn holder_norm(f: &RealField, alpha: f64, region: &Region, stride: usize) -> Result<f64> {
    Ok(sup_norm(f, region) + holder_seminorm(f, alpha, region, stride)?)
}

/// `‖g‖_{L^1(ρ^{-1})} + ∫ ρ(x)^{-1} ∫_{|y|≤1} |g(x) - g(x+y)| / |y|^{β+2} dy dx`
/// by lattice sums (the singular cell `y = 0` is dropped).
pub fn b11_dual_norm(g: &RealField, beta: f64, sigma: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(invalid("beta must lie in (0, 1)"));
    }
    let grid = g.grid();
    let n = grid.n() as i64;
    let h2 = grid.cell_area();
    let v = g.values();
    let inv_w: Vec<f64> = (0..grid.sites())
        .map(|idx| 1.0 / weight(grid.position(idx), sigma))
        .collect();
    let l1: f64 = v.iter().zip(&inv_w).map(|(x, w)| x.abs() * w).sum::<f64>() * h2;
    let offsets: Vec<(i64, i64, f64)> = unit_offsets(grid)
        .into_iter()
        .map(|(a, b, r)| (a, b, h2 * r.powf(-(beta + 2.0))))
        .collect();
    let mut semi = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = (i * n + j) as usize;
            let gx = v[x];
            let mut s = 0.0;
            for &(a, b, k) in &offsets {
                let y = (((i + a).rem_euclid(n)) * n + (j + b).rem_euclid(n)) as usize;
                let d = (gx - v[y]).abs();
                if d != 0.0 {
                    s += d * k;
                }
            }
            semi += s * inv_w[x];
        }
    }
    Ok(l1 + semi * h2)
}

/// One line of the inequality report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InequalityRow {
    pub inequality: String,
    pub samples: usize,
    pub median_ratio: f64,
    pub p95_ratio: f64,
    /// Extra statistic whose meaning depends on the check (max/min spread, fitted C, ...).
    pub spread: f64,
    pub verdict: bool,
}

fn stability_row(name: &str, ratios: &[f64], factor: f64) -> InequalityRow {
    let med = median(ratios);
    let p95 = percentile(ratios, 0.95);
    let max = ratios.iter().copied().fold(0.0, f64::max);
    InequalityRow {
        inequality: name.to_string(),
        samples: ratios.len(),
        median_ratio: med,
        p95_ratio: p95,
        spread: max,
        verdict: ratios.iter().all(|r| r.is_finite()) && med > 0.0 && p95 <= factor * med,
    }
}

/// Heat smoothing: `t^{α/2} ‖e^{tΔ} v‖_ρ / ‖v‖_{-α,ρ}` and
/// `t^{(α+β)/2} [e^{tΔ} v]_{β,ρ} / ‖v‖_{-α,ρ}`; for each `t` the sup over samples
/// is taken, and the verdict requires the sups to stay within a factor 20 across `t`.
pub fn check_heat_smoothing(
    engine: &NormEngine,
    samples: &[RealField],
    alpha: f64,
    beta: f64,
    times: &[f64],
    sigma: f64,
) -> Result<Vec<InequalityRow>> {
    if samples.is_empty() || times.is_empty() {
        return Err(invalid("heat smoothing check needs samples and times"));
    }
    let region = Region::Weighted { sigma };
    let norms: Vec<f64> = samples
        .iter()
        .map(|v| engine.neg_norm(v, alpha, &region))
        .collect::<Result<_>>()?;
    let mut sup_rows = Vec::with_capacity(times.len());
    let mut holder_rows = Vec::with_capacity(times.len());
    for &t in times {
        let heat = crate::grid::Multiplier::new(engine.grid(), |q| (-t * q).exp())?;
        let mut s_max = 0.0f64;
        let mut h_max = 0.0f64;
        for (v, &nv) in samples.iter().zip(&norms) {
            if nv == 0.0 {
                continue;
            }
            let u = heat.apply(v);
            s_max = s_max.max(t.powf(0.5 * alpha) * sup_norm(&u, &region) / nv);
            h_max = h_max
                .max(t.powf(0.5 * (alpha + beta)) * holder_seminorm(&u, beta, &region, 2)? / nv);
        }
        sup_rows.push(s_max);
        holder_rows.push(h_max);
    }
    let row = |name: &str, r: &[f64]| {
        let max = r.iter().copied().fold(0.0, f64::max);
        let min = r.iter().copied().fold(f64::INFINITY, f64::min);
        InequalityRow {
            inequality: name.to_string(),
            samples: samples.len(),
            median_ratio: median(r),
            p95_ratio: percentile(r, 0.95),
            spread: max / min,
            verdict: min > 0.0 && max / min < 20.0,
        }
    };
    Ok(vec![
        row("heat-sup", &sup_rows),
        row("heat-holder", &holder_rows),
    ])
}

/// Multiplication: `‖uv‖_{-α,ρ} / (‖v‖_{-α,ρ} ‖u‖_{β})`; the fitted constant is stable
/// when the 95th percentile of the ratios is within twice the median.
pub fn check_multiplication(
    engine: &NormEngine,
    us: &[RealField],
    vs: &[RealField],
    alpha: f64,
    beta: f64,
    sigma: f64,
) -> Result<InequalityRow> {
    if us.len() != vs.len() || us.is_empty() || !(beta > alpha && alpha > 0.0) {
        return Err(invalid(
            "multiplication check needs paired samples and beta > alpha > 0",
        ));
    }
    let rho = Region::Weighted { sigma };
    let flat = Region::unweighted();
    let ratios: Vec<f64> = us
        .iter()
        .zip(vs)
        .map(|(u, v)| {
            let lhs = engine.neg_norm(&u.mul(v), alpha, &rho)?;
            let rhs = engine.neg_norm(v, alpha, &rho)? * holder_norm(u, beta, &flat, 2)?;
            Ok(lhs / rhs)
        })
        .collect::<Result<_>>()?;
    Ok(stability_row("multiplication", &ratios, 2.0))
}

/// Duality: `|(f, g)| / (‖f‖_{-α,ρ} ‖g‖_{β,ρ^{-1}})`, same stability criterion.
pub fn check_duality(
    engine: &NormEngine,
    fs: &[RealField],
    gs: &[RealField],
    alpha: f64,
    beta: f64,
    sigma: f64,
) -> Result<InequalityRow> {
    if fs.len() != gs.len() || fs.is_empty() {
        return Err(invalid("duality check needs paired samples"));
    }
    let rho = Region::Weighted { sigma };
    let ratios: Vec<f64> = fs
        .iter()
        .zip(gs)
        .map(|(f, g)| {
            Ok(f.pair(g).abs()
                / (engine.neg_norm(f, alpha, &rho)? * b11_dual_norm(g, beta, sigma)?))
        })
        .collect::<Result<_>>()?;
    Ok(stability_row("duality", &ratios, 2.0))
}

/// Kernel equivalence: ratio of `‖f‖_{-α}` under two admissible profiles; the
/// verdict requires `max / min ≤ 3` over the samples.
pub fn check_kernel_equivalence(
    grid: &Arc<TorusGrid>,
    samples: &[RealField],
    alpha: f64,
    profiles: (Profile, Profile),
) -> Result<InequalityRow> {
    let a = NormEngine::new(grid, profiles.0, None)?;
    let b = NormEngine::new(grid, profiles.1, None)?;
    let region = Region::unweighted();
    let ratios: Vec<f64> = samples
        .iter()
        .map(|f| Ok(a.neg_norm(f, alpha, &region)? / b.neg_norm(f, alpha, &region)?))
        .collect::<Result<_>>()?;
    let max = ratios.iter().copied().fold(0.0, f64::max);
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let mut row = stability_row("kernel-equivalence", &ratios, f64::INFINITY);
    row.spread = max / min;
    row.verdict = min > 0.0 && max / min <= 3.0;
    Ok(row)
}

/// Embedding: smallest `C` with
/// `R^{αp} |Ψ_R * f(x)|^p ≤ C^p ∫_{R_min}^R t^{pα-2} ‖Ψ_t * f‖^p_{L^p(B_{3R}(x))} dt/t`
/// over dyadic `R ≥ 2 R_min` and strided `x`; `t` runs over four points per octave
/// (trapezoid in `log t`). The verdict requires every per-sample `C` to be finite.
pub fn check_embedding(
    grid: &Arc<TorusGrid>,
    profile: Profile,
    samples: &[RealField],
    alpha: f64,
    p: f64,
) -> Result<InequalityRow> {
    let finest =
        finest_level(grid).ok_or_else(|| invalid("grid too coarse for the embedding check"))?;
    if finest < 1 {
        return Err(invalid("embedding check needs at least two dyadic levels"));
    }
    let r_min = 0.5f64.powi(finest as i32);
    let per_octave = 4;
    let fine: Vec<f64> = (0..=(finest as usize * per_octave))
        .map(|k| 0.5f64.powf(k as f64 / per_octave as f64))
        .collect();
    let engine = NormEngine::with_scales(grid, profile, fine.clone())?;
    let step = std::f64::consts::LN_2 / per_octave as f64;
    let n = grid.n();
    let stride = (n / 16).max(1);
    let mut constants = Vec::with_capacity(samples.len());
    for f in samples {
        let smoothed: Vec<RealField> = (0..fine.len())
            .map(|k| engine.smooth(f, k))
            .collect::<Result<_>>()?;
        let mut c_max = 0.0f64;
        for j in 0..finest as usize {
            let ri = j * per_octave;
            let r = fine[ri];
            let ball = kernel_hat(grid, |d| if d.hypot_r() <= 3.0 * r { 1.0 } else { 0.0 })?;
            // ball sums of |Ψ_t * f|^p for t in [R_min, R]
            let mut integrand: Vec<(f64, RealField)> = Vec::new();
            for (k, &t) in fine.iter().enumerate().skip(ri) {
                debug_assert!(t >= r_min * (1.0 - 1e-12));
                let pw = smoothed[k].map(|x| x.abs().powf(p));
                // kernel_hat normalises to unit integral; undo it to get the plain sum
                let area = ball_area(grid, 3.0 * r);
                let local = convolve_hat(&pw, &ball).scale(area);
                integrand.push((t.powf(p * alpha - 2.0), local));
            }
            for i in (0..n).step_by(stride) {
                for jj in (0..n).step_by(stride) {
                    let x = i * n + jj;
                    let lhs = r.powf(alpha * p) * smoothed[ri].values()[x].abs().powf(p);
                    let vals: Vec<f64> = integrand.iter().map(|(w, l)| w * l.values()[x]).collect();
                    let rhs = trapezoid(&vals, step);
                    if lhs > 0.0 {
                        c_max = c_max.max((lhs / rhs).powf(1.0 / p));
                    }
                }
            }
        }
        constants.push(c_max);
    }
    let mut row = stability_row("embedding", &constants, f64::INFINITY);
    row.verdict = constants.iter().all(|c| c.is_finite());
    Ok(row)
}

fn ball_area(grid: &TorusGrid, radius: f64) -> f64 {
    (0..grid.sites())
        .filter(|&idx| wrapped(grid, idx).hypot_r() <= radius)
        .count() as f64
        * grid.cell_area()
}

fn trapezoid(vals: &[f64], step: f64) -> f64 {
    match vals.len() {
        0 => 0.0,
        1 => vals[0] * step,
        m => step * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[m - 1])),
    }
}

pub fn write_report_csv<W: Write>(rows: &[InequalityRow], mut out: W) -> Result<()> {
    writeln!(
        out,
        "inequality,samples,median_ratio,p95_ratio,spread,verdict"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:e},{:e},{:e},{}",
            r.inequality,
            r.samples,
            r.median_ratio,
            r.p95_ratio,
            r.spread,
            if r.verdict { "pass" } else { "fail" }
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::sample_gff;
    use crate::noise::RngPolicy;

    fn grid() -> Arc<TorusGrid> {
        TorusGrid::new(2.0, 64).unwrap()
    }

    #[test]
    fn profile_kernels_have_unit_mass() {
        let g = grid();
        let e = NormEngine::new(&g, Profile::default(), None).unwrap();
        assert_eq!(e.scales(), &[1.0, 0.5]);
        for level in 0..e.scales().len() {
            let s = e.smooth(&RealField::constant(&g, 1.0), level).unwrap();
            assert!(s.values().iter().all(|v| (v - 1.0).abs() < 1e-10));
        }
        assert!(NormEngine::new(&g, Profile::default(), Some(3)).is_err());
    }

    #[test]
    fn neg_norms_of_simple_fields() {
        let g = grid();
        let cfg = NormConfig {
            alpha: 0.3,
            profile: Profile::default(),
            max_level: None,
        };
        assert_eq!(
            neg_norm(&RealField::zeros(&g), &cfg, &Region::unweighted()).unwrap(),
            0.0
        );
        let c = neg_norm(&RealField::constant(&g, -2.5), &cfg, &Region::unweighted()).unwrap();
        assert!((c - 2.5).abs() < 1e-10);
        let f = sample_gff(&g, &RngPolicy::new(1), 0);
        let e = NormEngine::new(&g, Profile::default(), None).unwrap();
        let a = e.neg_norm(&f, 0.4, &Region::unweighted()).unwrap();
        let b = e.neg_norm(&f, 0.2, &Region::unweighted()).unwrap();
        assert!(b >= a);
        let local = e
            .neg_norm(
                &f,
                0.4,
                &Region::Ball {
                    centre: [0.0, 0.0],
                    radius: 1.5,
                },
            )
            .unwrap();
        assert!(local <= a);
    }

    #[test]
    fn holder_of_constants_and_linear_functions() {
        let g = grid();
        let r = Region::unweighted();
        assert_eq!(
            holder_seminorm(&RealField::constant(&g, 3.0), 0.5, &r, 1).unwrap(),
            0.0
        );
        let lin = RealField::from_fn(&g, |x| x[0]);
        let inner = Region::Box {
            centre: [0.0, 0.0],
            half_width: 1.0,
        };
        let s = holder_seminorm(&lin, 1.0 - 1e-9, &inner, 1).unwrap();
        assert!((s - 1.0).abs() < 1e-6, "{s}");
        let p = RngPolicy::new(2);
        for k in 0..5 {
            let a = sample_gff(&g, &p, k);
            let b = sample_gff(&g, &p, k + 100);
            let sum = holder_seminorm(&a.add(&b), 0.4, &r, 3).unwrap();
            assert!(
                sum <= holder_seminorm(&a, 0.4, &r, 3).unwrap()
                    + holder_seminorm(&b, 0.4, &r, 3).unwrap()
                    + 1e-12
            );
        }
    }

    #[test]
    fn b11_of_box_indicator_grows_like_volume_power() {
        let g = TorusGrid::new(8.0, 128).unwrap();
        let sigma = 0.5;
        let ls = [1.0, 2.0, 4.0];
        let vals: Vec<f64> = ls
            .iter()
            .map(|&l| {
                let f = RealField::from_fn(&g, |x| {
                    if x[0].abs() < l && x[1].abs() < l {
                        1.0
                    } else {
                        0.0
                    }
                });
                b11_dual_norm(&f, 0.5, sigma).unwrap()
            })
            .collect();
        assert_eq!(
            b11_dual_norm(&RealField::zeros(&g), 0.5, sigma).unwrap(),
            0.0
        );
        let fit = crate::stats::linear_fit(
            &ls.map(f64::ln),
            &vals.iter().map(|v| v.ln()).collect::<Vec<_>>(),
        )
        .unwrap();
        assert!(
            fit.slope > 0.5 && fit.slope <= 2.0 + sigma + 0.1,
            "slope {}",
            fit.slope
        );
    }

    #[test]
    fn heat_smoothing_single_mode_closed_form() {
        // v = cos(p x_1): ‖e^{tΔ} v‖_∞ = e^{-t p^2}, so the sup-ratio is t^{α/2} e^{-tp^2} / ‖v‖_{-α}.
        let g = grid();
        let e = NormEngine::new(&g, Profile::default(), None).unwrap();
        let p = PI / 2.0;
        let v = RealField::from_fn(&g, |x| (p * x[0]).cos());
        let times = [1e-3, 1e-2, 0.1, 1.0];
        let rows =
            check_heat_smoothing(&e, std::slice::from_ref(&v), 0.2, 0.3, &times, 0.0).unwrap();
        let nv = e.neg_norm(&v, 0.2, &Region::unweighted()).unwrap();
        let expect: Vec<f64> = times
            .iter()
            .map(|&t| {
                t.powf(0.1)
                    * (-t * crate::grid::Laplacian::Spectral.symbol([p, 0.0], g.spacing())).exp()
                    / nv
            })
            .collect();
        let spread = expect.iter().copied().fold(0.0, f64::max)
            / expect.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((rows[0].spread / spread - 1.0).abs() < 1e-9);
        assert!(rows[0].verdict);
        let c = RealField::constant(&g, 1.0);
        let rows = check_heat_smoothing(&e, &[c], 0.2, 0.3, &times, 0.0).unwrap();
        assert!(rows[0].verdict);
    }

    #[test]
    fn multiplication_by_one_is_constant_ratio() {
        let g = grid();
        let e = NormEngine::new(&g, Profile::default(), None).unwrap();
        let p = RngPolicy::new(3);
        let vs: Vec<RealField> = (0..6).map(|k| sample_gff(&g, &p, k)).collect();
        let us = vec![RealField::constant(&g, 1.0); 6];
        let row = check_multiplication(&e, &us, &vs, 0.3, 0.5, 0.0).unwrap();
        assert!((row.p95_ratio - row.median_ratio).abs() < 1e-12);
        assert!((row.median_ratio - 1.0).abs() < 1e-12);
    }
}
