//! Space-time white noise on a master torus, its coupled restriction to
//! centred sub-tori, and the counter-based RNG every random draw goes through.
//!
//! A sub-torus `[-l, l)^2` of the master `[-L, L)^2` shares the master spacing;
//! its sites are the master sites inside the box, so sub-site `j` is master
//! site `j + (N - n)/2` in each direction. The sub-torus noise is the master
//! noise on that box, periodically continued: testing it against a periodic
//! `f` is testing the master noise against `1_box f`. The infinite-volume
//! noise restricted to a box is again white, so every sub-torus sees a genuine
//! space-time white noise and all of them are built from one realisation.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{RealField, TorusGrid};

/// What a random stream is used for; part of the stream key so that, e.g.,
/// MALA proposals and dynamics noise never share draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamKind {
    Noise,
    Initial,
    Proposal,
    Sampling,
    Other(u32),
}

impl StreamKind {
    fn tag(self) -> u64 {
        match self {
            StreamKind::Noise => 1,
            StreamKind::Initial => 2,
            StreamKind::Proposal => 3,
            StreamKind::Sampling => 4,
            StreamKind::Other(k) => 0x100 + k as u64,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based seeding: the stream for `(kind, replica, step)` is a ChaCha8
/// generator keyed by SplitMix64 hashing of `(seed, kind, replica, step)`.
/// Streams are independent of the order in which they are requested.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngPolicy {
    pub seed: u64,
}

impl RngPolicy {
    pub const STREAM_RULE: &'static str =
        "chacha8(key = splitmix64 chain over (seed, kind, replica, step))";

    pub fn new(seed: u64) -> Self {
        RngPolicy { seed }
    }

    pub fn stream(&self, kind: StreamKind, replica: u64, step: u64) -> ChaCha8Rng {
        let mut state = self.seed;
        let mut key = [0u8; 32];
        let mut words = [0u64; 4];
        for (w, salt) in words.iter_mut().zip([kind.tag(), replica, step, 0x5EED]) {
            state ^= salt.wrapping_mul(0xD6E8_FEB8_6659_FD93);
            *w = splitmix64(&mut state);
        }
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }

    /// Policy for an independent sub-experiment, derived from this one.
    pub fn derive(&self, label: u64) -> RngPolicy {
        let mut s = self.seed ^ label.wrapping_mul(0xA076_1D64_78BD_642F);
        RngPolicy::new(splitmix64(&mut s))
    }
}

pub fn fill_normals(rng: &mut ChaCha8Rng, out: &mut [f64], scale: f64) {
    for v in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = scale * z;
    }
}

/// One time step of discrete space-time white noise: i.i.d. `N(0, dt/h^2)` per site.
#[derive(Clone, Debug)]
pub struct NoiseSlab {
    pub dt: f64,
    pub step: u64,
    pub replica: u64,
    pub increments: RealField,
}

impl NoiseSlab {
    pub fn grid(&self) -> &Arc<TorusGrid> {
        self.increments.grid()
    }

    /// Variance `dt / h^2` of a single site increment.
    pub fn site_variance(&self) -> f64 {
        self.dt / self.grid().cell_area()
    }
}

pub fn sample_slab(
    policy: &RngPolicy,
    grid: &Arc<TorusGrid>,
    dt: f64,
    step: u64,
    replica: u64,
) -> Result<NoiseSlab> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("time step must be positive, got {dt}")));
    }
    let mut rng = policy.stream(StreamKind::Noise, replica, step);
    let mut values = vec![0.0; grid.sites()];
    fill_normals(&mut rng, &mut values, (dt / grid.cell_area()).sqrt());
    Ok(NoiseSlab {
        dt,
        step,
        replica,
        increments: RealField::from_raw(grid, values),
    })
}

/// Offset (in sites per direction) of a sub-torus inside the master grid.
pub fn subgrid_offset(master: &TorusGrid, sub: &TorusGrid) -> Result<usize> {
    let ratio = master.half_length() / sub.half_length();
    let aligned = (sub.spacing() - master.spacing()).abs() <= 1e-12 * master.spacing()
        && sub.n() <= master.n()
        && (master.n() - sub.n()).is_multiple_of(2)
        && sub.laplacian() == master.laplacian()
        && (ratio - ratio.round()).abs() < 1e-9;
    if !aligned {
        return Err(Error::Misaligned(format!(
            "sub-torus (L = {}, N = {}) must share the master spacing {} with L_max / L a whole number \
             (master L = {}, N = {})",
            sub.half_length(),
            sub.n(),
            master.spacing(),
            master.half_length(),
            master.n()
        )));
    }
    Ok((master.n() - sub.n()) / 2)
}

/// Sub-grid of half length `sub_l` with the master's spacing and Laplacian.
pub fn subgrid(master: &Arc<TorusGrid>, sub_l: f64) -> Result<Arc<TorusGrid>> {
    if !(sub_l > 0.0) || sub_l > master.half_length() * (1.0 + 1e-12) {
        return Err(Error::Misaligned(format!(
            "sub-torus half length {sub_l} must lie in (0, {}]",
            master.half_length()
        )));
    }
    let ratio = master.half_length() / sub_l;
    if (ratio - ratio.round()).abs() > 1e-9 {
        return Err(Error::Misaligned(format!(
            "L_max / L = {ratio} must be an integer"
        )));
    }
    let n = master.n() as f64 / ratio.round();
    if n.fract() != 0.0 || !(n as usize).is_multiple_of(2) {
        return Err(Error::Misaligned(format!(
            "sub-torus would have {n} points per side; N = {} must be divisible by 2 L_max / L",
            master.n()
        )));
    }
    if sub_l == master.half_length() {
        return Ok(Arc::clone(master));
    }
    TorusGrid::with_laplacian(sub_l, n as usize, master.laplacian())
}

/// Restriction of a master field to the central box of `sub`.
pub fn restrict(field: &RealField, sub: &Arc<TorusGrid>) -> Result<RealField> {
    let master = field.grid();
    let off = subgrid_offset(master, sub)?;
    let (nm, ns) = (master.n(), sub.n());
    let mut out = Vec::with_capacity(ns * ns);
    for i in 0..ns {
        let row = (i + off) * nm + off;
        out.extend_from_slice(&field.values()[row..row + ns]);
    }
    Ok(RealField::from_raw(sub, out))
}

/// Periodisation `sum_n f(x + 2 l n)` of a master field onto the sub-torus.
pub fn fold(field: &RealField, sub: &Arc<TorusGrid>) -> Result<RealField> {
    let master = field.grid();
    let off = subgrid_offset(master, sub)?;
    let (nm, ns) = (master.n(), sub.n());
    let mut out = vec![0.0; ns * ns];
    for i in 0..nm {
        let si = (i + nm * ns - off) % ns;
        for j in 0..nm {
            let sj = (j + nm * ns - off) % ns;
            out[si * ns + sj] += field.values()[i * nm + j];
        }
    }
    Ok(RealField::from_raw(sub, out))
}

/// Zero-padded embedding of a sub-torus field into the master box.
pub fn embed(field: &RealField, master: &Arc<TorusGrid>) -> Result<RealField> {
    let sub = field.grid();
    let off = subgrid_offset(master, sub)?;
    let (nm, ns) = (master.n(), sub.n());
    let mut out = vec![0.0; nm * nm];
    for i in 0..ns {
        let row = (i + off) * nm + off;
        out[row..row + ns].copy_from_slice(&field.values()[i * ns..(i + 1) * ns]);
    }
    Ok(RealField::from_raw(master, out))
}

/// Noise increments for the sub-torus of half length `sub_l`.
pub fn periodise_noise(slab: &NoiseSlab, sub_l: f64) -> Result<NoiseSlab> {
    let sub = subgrid(slab.grid(), sub_l)?;
    Ok(NoiseSlab {
        dt: slab.dt,
        step: slab.step,
        replica: slab.replica,
        increments: restrict(&slab.increments, &sub)?,
    })
}

/// Smooth step `e^{-1/u} / (e^{-1/u} + e^{-1/(1-u)})`, 0 for `u <= 0`, 1 for `u >= 1`.
pub fn smooth_step(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / u).exp();
        let b = (-1.0 / (1.0 - u)).exp();
        a / (a + b)
    }
}

/// Product bump `chi(x) = psi(x1) psi(x2)` with `psi(u) = smooth_step((1 - |u|) / (1 - r))`:
/// equal to 1 on the box `[-r, r]^2` and supported in `[-1, 1]^2`. Default `r = 0.99`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub inner: f64,
}

impl Default for Cutoff {
    fn default() -> Self {
        Cutoff { inner: 0.99 }
    }
}

impl Cutoff {
    pub fn profile(&self, u: f64) -> f64 {
        smooth_step((1.0 - u.abs()) / (1.0 - self.inner))
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        self.profile(x[0]) * self.profile(x[1])
    }

    /// `chi(x / l)`.
    pub fn scaled(&self, x: [f64; 2], l: f64) -> f64 {
        self.value([x[0] / l, x[1] / l])
    }
}

/// `phi0^l = sum_n T_{2ln}(chi_l phi0)` sampled on the sub-grid.
pub fn periodise_initial(phi0: &RealField, sub_l: f64, cutoff: &Cutoff) -> Result<RealField> {
    let master = phi0.grid();
    let sub = subgrid(master, sub_l)?;
    let cut: Vec<f64> = (0..master.sites())
        .map(|idx| phi0.values()[idx] * cutoff.scaled(master.position(idx), sub_l))
        .collect();
    fold(&RealField::from_raw(master, cut), &sub)
}

/// Gaussian bump `exp(-|x - c|^2 / (2 s^2))`; a convenient smooth test function.
pub fn gaussian_bump(grid: &Arc<TorusGrid>, centre: [f64; 2], width: f64) -> RealField {
    RealField::from_fn(grid, |x| {
        let d = [x[0] - centre[0], x[1] - centre[1]];
        (-(d[0] * d[0] + d[1] * d[1]) / (2.0 * width * width)).exp()
    })
}

/// Compactly supported bump `(1 - |x - c|^2 / r^2)^3_+`, optionally modulated by `cos(k.x)`.
pub fn compact_bump(
    grid: &Arc<TorusGrid>,
    centre: [f64; 2],
    radius: f64,
    wave: [f64; 2],
) -> RealField {
    RealField::from_fn(grid, |x| {
        let d = [x[0] - centre[0], x[1] - centre[1]];
        let r2 = (d[0] * d[0] + d[1] * d[1]) / (radius * radius);
        if r2 >= 1.0 {
            0.0
        } else {
            (1.0 - r2).powi(3) * (wave[0] * d[0] + wave[1] * d[1]).cos()
        }
    })
}

/// Largest sup-norm coordinate of the support of `f` (sites where `|f| > 0`).
pub fn support_radius(f: &RealField) -> f64 {
    let g = f.grid();
    (0..g.sites())
        .filter(|&idx| f.values()[idx] != 0.0)
        .map(|idx| {
            let x = g.position(idx);
            x[0].abs().max(x[1].abs())
        })
        .fold(0.0, f64::max)
}
