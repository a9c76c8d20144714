//! Periodic square lattice `[-L, L)^2` with `N^2` sites and its Fourier dual.
//!
//! Site `(i, j)` sits at `(-L + i h, -L + j h)` with `h = 2L / N`, stored
//! row-major (`i * N + j`). The origin is site `(N/2, N/2)`.
//!
//! The forward transform carries the `1/N^2` factor,
//!
//! ```text
//! c(k) = N^{-2} sum_{i,j} f(i,j) exp(-2 pi i (k1 i + k2 j) / N)
//! ```
//!
//! so `c(k)` approximates the continuum Fourier coefficient
//! `(2L)^{-2} \int f(x) e^{-i p.x} dx` with `p = pi k / L` (up to a unimodular
//! phase from the corner offset, which every translation-invariant operator
//! ignores). With this normalisation `(f, g)_{L^2} = (2L)^2 sum_k c_f(k) conj(c_g(k))`.
//!
//! Wavenumber indices run over `-N/2 ..= N/2 - 1`; the Nyquist row/column
//! (`k = -N/2`) is kept and carries real coefficients for real fields.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Symbol used for `-Δ` on the lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Laplacian {
    /// Exact continuum symbol `|p|^2` on the grid wavenumbers.
    #[default]
    Spectral,
    /// Symbol of the 5-point stencil, `(4/h^2) (sin^2(p1 h/2) + sin^2(p2 h/2))`.
    FiniteDifference,
}

impl Laplacian {
    /// Symbol of `-Δ` at wavevector `p` for lattice spacing `h`.
    pub fn symbol(self, p: [f64; 2], h: f64) -> f64 {
        match self {
            Laplacian::Spectral => p[0] * p[0] + p[1] * p[1],
            Laplacian::FiniteDifference => {
                let s1 = (0.5 * p[0] * h).sin();
                let s2 = (0.5 * p[1] * h).sin();
                4.0 / (h * h) * (s1 * s1 + s2 * s2)
            }
        }
    }
}

pub struct TorusGrid {
    half_length: f64,
    n: usize,
    spacing: f64,
    laplacian: Laplacian,
    symbol: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("half_length", &self.half_length)
            .field("n", &self.n)
            .field("spacing", &self.spacing)
            .field("laplacian", &self.laplacian)
            .finish()
    }
}

impl TorusGrid {
    /// Spectral-symbol grid. `n` must be even (or 1, the single-site grid).
    pub fn new(half_length: f64, n: usize) -> Result<Arc<Self>> {
        Self::with_laplacian(half_length, n, Laplacian::Spectral)
    }

    pub fn with_laplacian(half_length: f64, n: usize, laplacian: Laplacian) -> Result<Arc<Self>> {
        if !(half_length.is_finite() && half_length > 0.0) {
            return Err(invalid(format!(
                "half length must be positive, got {half_length}"
            )));
        }
        if n == 0 || (n != 1 && !n.is_multiple_of(2)) {
            return Err(invalid(format!(
                "points per dimension must be even (or 1), got {n}"
            )));
        }
        let spacing = 2.0 * half_length / n as f64;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let mut grid = TorusGrid {
            half_length,
            n,
            spacing,
            laplacian,
            symbol: Vec::new(),
            forward,
            inverse,
        };
        grid.symbol = (0..n * n).map(|idx| grid.symbol_at(idx)).collect();
        Ok(Arc::new(grid))
    }

    /// Grid with the same spacing and Laplacian but a different half length.
    pub fn rescaled(&self, half_length: f64) -> Result<Arc<Self>> {
        let ratio = half_length / self.half_length;
        let n = (self.n as f64 * ratio).round() as usize;
        if ((n as f64) - self.n as f64 * ratio).abs() > 1e-9 {
            return Err(Error::Misaligned(format!(
                "half length {half_length} is not a whole number of sites of spacing {}",
                self.spacing
            )));
        }
        Self::with_laplacian(half_length, n, self.laplacian)
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn laplacian(&self) -> Laplacian {
        self.laplacian
    }

    pub fn sites(&self) -> usize {
        self.n * self.n
    }

    /// Area `(2L)^2` of the torus.
    pub fn volume(&self) -> f64 {
        4.0 * self.half_length * self.half_length
    }

    /// Area element `h^2` attached to one site.
    pub fn cell_area(&self) -> f64 {
        self.spacing * self.spacing
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -self.half_length + i as f64 * self.spacing
    }

    pub fn position(&self, idx: usize) -> [f64; 2] {
        [self.coordinate(idx / self.n), self.coordinate(idx % self.n)]
    }

    pub fn origin_index(&self) -> usize {
        let c = self.n / 2;
        c * self.n + c
    }

    /// Signed wavenumber index in `-N/2 ..= N/2 - 1`.
    pub fn wave_index(&self, k: usize) -> i64 {
        let n = self.n as i64;
        let k = k as i64;
        if k < n / 2 || n == 1 {
            k
        } else {
            k - n
        }
    }

    pub fn wavevector(&self, idx: usize) -> [f64; 2] {
        let s = PI / self.half_length;
        [
            s * self.wave_index(idx / self.n) as f64,
            s * self.wave_index(idx % self.n) as f64,
        ]
    }

    fn symbol_at(&self, idx: usize) -> f64 {
        self.laplacian.symbol(self.wavevector(idx), self.spacing)
    }

    /// Symbol of `-Δ` at mode `idx` (FFT order).
    pub fn symbol(&self, idx: usize) -> f64 {
        self.symbol[idx]
    }

    pub fn symbols(&self) -> &[f64] {
        &self.symbol
    }

    /// Minimal-image displacement `x - y` on the torus.
    pub fn torus_displacement(&self, x: [f64; 2], y: [f64; 2]) -> [f64; 2] {
        let period = 2.0 * self.half_length;
        let wrap = |d: f64| d - period * (d / period).round();
        [wrap(x[0] - y[0]), wrap(x[1] - y[1])]
    }

    pub fn same_as(&self, other: &TorusGrid) -> bool {
        self.n == other.n
            && self.half_length == other.half_length
            && self.laplacian == other.laplacian
    }

    pub(crate) fn check_same(&self, other: &TorusGrid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }

    fn transform(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        if n == 1 {
            return;
        }
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(data, &mut scratch);
        transpose(data, n);
        fft.process_with_scratch(data, &mut scratch);
        transpose(data, n);
    }

    /// Unnormalised-inverse, `1/N^2`-normalised forward 2-d DFT in place.
    pub fn forward_in_place(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
        let norm = 1.0 / self.sites() as f64;
        for c in data.iter_mut() {
            *c *= norm;
        }
    }

    pub fn inverse_in_place(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse);
    }
}

fn transpose(data: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

/// Real scalar field on the sites of a [`TorusGrid`].
#[derive(Clone, Debug)]
pub struct RealField {
    grid: Arc<TorusGrid>,
    values: Vec<f64>,
}

impl RealField {
    pub fn zeros(grid: &Arc<TorusGrid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Arc<TorusGrid>, c: f64) -> Self {
        RealField {
            grid: Arc::clone(grid),
            values: vec![c; grid.sites()],
        }
    }

    pub fn from_values(grid: &Arc<TorusGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.sites() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} sites",
                values.len(),
                grid.sites()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite value at site {bad}")));
        }
        Ok(RealField {
            grid: Arc::clone(grid),
            values,
        })
    }

    /// Samples `f` at every site position.
    pub fn from_fn(grid: &Arc<TorusGrid>, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.sites()).map(|idx| f(grid.position(idx))).collect();
        RealField {
            grid: Arc::clone(grid),
            values,
        }
    }

    /// Kronecker delta of mass one at `idx`: value `h^{-2}` there, zero elsewhere.
    pub fn delta(grid: &Arc<TorusGrid>, idx: usize) -> Self {
        let mut f = Self::zeros(grid);
        f.values[idx] = 1.0 / grid.cell_area();
        f
    }

    pub(crate) fn from_raw(grid: &Arc<TorusGrid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.sites());
        RealField {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.n + j]
    }

    /// `L^2` pairing `h^2 sum f g`.
    pub fn pair(&self, other: &RealField) -> f64 {
        debug_assert!(self.grid.same_as(&other.grid));
        self.grid.cell_area() * dot(&self.values, &other.values)
    }

    /// `(f, 1)`, the integral over the torus.
    pub fn integral(&self) -> f64 {
        self.grid.cell_area() * self.values.iter().sum::<f64>()
    }

    pub fn l2_norm(&self) -> f64 {
        self.pair(self).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RealField {
        RealField {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &RealField, f: impl Fn(f64, f64) -> f64) -> RealField {
        debug_assert!(self.grid.same_as(&other.grid));
        RealField {
            grid: Arc::clone(&self.grid),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &RealField) -> RealField {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &RealField) -> RealField {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> RealField {
        self.map(|v| c * v)
    }

    pub fn mul(&self, other: &RealField) -> RealField {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn axpy(&mut self, a: f64, x: &RealField) {
        for (y, &xv) in self.values.iter_mut().zip(&x.values) {
            *y += a * xv;
        }
    }

    pub fn to_spectral(&self) -> SpectralField {
        let mut coeffs: Vec<Complex64> = self
            .values
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        self.grid.forward_in_place(&mut coeffs);
        SpectralField {
            grid: Arc::clone(&self.grid),
            coeffs,
        }
    }

    /// Writes the row `i` (fixed first coordinate) as CSV `x2,value`.
    pub fn write_slice_csv<W: Write>(&self, i: usize, mut out: W) -> Result<()> {
        if i >= self.grid.n {
            return Err(invalid(format!(
                "row {i} outside grid of {} rows",
                self.grid.n
            )));
        }
        writeln!(out, "x,value")?;
        for j in 0..self.grid.n {
            writeln!(out, "{},{}", self.grid.coordinate(j), self.at(i, j))?;
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fourier coefficients of a field, in FFT order.
#[derive(Clone, Debug)]
pub struct SpectralField {
    grid: Arc<TorusGrid>,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn from_coeffs(grid: &Arc<TorusGrid>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.sites() {
            return Err(Error::GridMismatch(format!(
                "{} coefficients for a grid of {} modes",
                coeffs.len(),
                grid.sites()
            )));
        }
        Ok(SpectralField {
            grid: Arc::clone(grid),
            coeffs,
        })
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Index of the mode `-k` for the mode at `idx`.
    pub fn conjugate_index(&self, idx: usize) -> usize {
        let n = self.grid.n;
        let (a, b) = (idx / n, idx % n);
        ((n - a) % n) * n + (n - b) % n
    }

    /// Largest `|c(-k) - conj(c(k))|`.
    pub fn hermitian_defect(&self) -> f64 {
        (0..self.coeffs.len())
            .map(|idx| (self.coeffs[self.conjugate_index(idx)] - self.coeffs[idx].conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Multiplies every mode by `m(q)`, `q` the `-Δ` symbol of that mode.
    pub fn apply_multiplier(&self, m: impl Fn(f64) -> f64) -> Result<SpectralField> {
        let mut coeffs = self.coeffs.clone();
        for (idx, c) in coeffs.iter_mut().enumerate() {
            let value = m(self.grid.symbol(idx));
            if !value.is_finite() {
                return Err(Error::NonFiniteMultiplier {
                    wavenumber: self.grid.wavevector(idx),
                    value,
                });
            }
            *c *= value;
        }
        Ok(SpectralField {
            grid: Arc::clone(&self.grid),
            coeffs,
        })
    }

    /// Inverse transform and the ratio `|Im| / |Re|` of the discarded imaginary part.
    pub fn to_real_checked(&self) -> (RealField, f64) {
        let mut data = self.coeffs.clone();
        self.grid.inverse_in_place(&mut data);
        let re: f64 = data.iter().map(|c| c.re * c.re).sum::<f64>().sqrt();
        let im: f64 = data.iter().map(|c| c.im * c.im).sum::<f64>().sqrt();
        let ratio = if re > 0.0 { im / re } else { im };
        let values = data.into_iter().map(|c| c.re).collect();
        (RealField::from_raw(&self.grid, values), ratio)
    }

    pub fn to_real(&self) -> RealField {
        self.to_real_checked().0
    }

    /// `sum_k |c(k)|^2`; times `(2L)^2` this is the squared `L^2` norm.
    pub fn power(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Precomputed real Fourier multiplier, reusable across fields on one grid.
#[derive(Clone, Debug)]
pub struct Multiplier {
    grid: Arc<TorusGrid>,
    table: Vec<f64>,
}

impl Multiplier {
    pub fn new(grid: &Arc<TorusGrid>, m: impl Fn(f64) -> f64) -> Result<Self> {
        let mut table = Vec::with_capacity(grid.sites());
        for idx in 0..grid.sites() {
            let value = m(grid.symbol(idx));
            if !value.is_finite() {
                return Err(Error::NonFiniteMultiplier {
                    wavenumber: grid.wavevector(idx),
                    value,
                });
            }
            table.push(value);
        }
        Ok(Multiplier {
            grid: Arc::clone(grid),
            table,
        })
    }

    /// `e^{-t A}` with `A = -Δ + 1`.
    pub fn heat(grid: &Arc<TorusGrid>, t: f64) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(invalid(format!("heat time must be nonnegative, got {t}")));
        }
        Self::new(grid, |q| (-t * (q + 1.0)).exp())
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn apply_spectral(&self, coeffs: &mut [Complex64]) {
        for (c, &m) in coeffs.iter_mut().zip(&self.table) {
            *c *= m;
        }
    }

    pub fn apply(&self, field: &RealField) -> RealField {
        debug_assert!(self.grid.same_as(&field.grid));
        let mut data: Vec<Complex64> = field
            .values
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        self.grid.forward_in_place(&mut data);
        self.apply_spectral(&mut data);
        self.grid.inverse_in_place(&mut data);
        RealField::from_raw(&self.grid, data.into_iter().map(|c| c.re).collect())
    }
}

/// `e^{-t A} f`, i.e. `e^{-t} e^{t Δ} f`.
pub fn heat_semigroup(field: &RealField, t: f64) -> Result<RealField> {
    Ok(Multiplier::heat(field.grid(), t)?.apply(field))
}

/// Full-plane heat kernel `p_t(x) = (4 pi t)^{-1} exp(-|x|^2 / 4t)`.
pub fn heat_kernel(t: f64, x: [f64; 2]) -> f64 {
    (-(x[0] * x[0] + x[1] * x[1]) / (4.0 * t)).exp() / (4.0 * PI * t)
}

/// Periodised heat kernel `sum_a p_t(x - 2 a L)`, summed shell by shell
/// (`max(|a1|, |a2|) = r`) until four times the largest term of the next
/// shell, times that shell's size, is below `1e-14` of the running sum.
pub fn periodic_heat_kernel(t: f64, x: [f64; 2], half_length: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid(format!(
            "heat kernel time must be positive, got {t}"
        )));
    }
    if !(half_length > 0.0) {
        return Err(invalid(format!(
            "half length must be positive, got {half_length}"
        )));
    }
    let period = 2.0 * half_length;
    let x = [
        x[0] - period * (x[0] / period).round(),
        x[1] - period * (x[1] / period).round(),
    ];
    let xmax = x[0].abs().max(x[1].abs());
    let mut sum = heat_kernel(t, x);
    let mut r: i64 = 1;
    loop {
        for a1 in -r..=r {
            for a2 in -r..=r {
                if a1.abs().max(a2.abs()) != r {
                    continue;
                }
                sum += heat_kernel(t, [x[0] - period * a1 as f64, x[1] - period * a2 as f64]);
            }
        }
        let next = (r + 1) as f64;
        let nearest = (period * next - xmax).max(0.0);
        let largest = heat_kernel(t, [nearest, 0.0]);
        let count = 8.0 * next;
        if 4.0 * largest * count <= 1e-14 * sum || r > 10_000 {
            break;
        }
        r += 1;
    }
    Ok(sum)
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"PHI4";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Little-endian snapshot: `"PHI4"`, version `u32`, `L` `f64`, `N` `u32`, then `N^2` `f64` row-major.
pub fn write_snapshot<W: Write>(field: &RealField, mut out: W) -> Result<()> {
    let grid = field.grid();
    out.write_all(SNAPSHOT_MAGIC)?;
    out.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    out.write_all(&grid.half_length().to_le_bytes())?;
    let n = u32::try_from(grid.n()).map_err(|_| invalid("grid too large for snapshot"))?;
    out.write_all(&n.to_le_bytes())?;
    for v in field.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a snapshot onto a spectral-symbol grid.
pub fn read_snapshot<R: Read>(mut input: R) -> Result<RealField> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != SNAPSHOT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    input.read_exact(&mut b8)?;
    let half_length = f64::from_le_bytes(b8);
    input.read_exact(&mut b4)?;
    let n = u32::from_le_bytes(b4) as usize;
    let grid = TorusGrid::new(half_length, n)?;
    let mut values = Vec::with_capacity(n * n);
    for _ in 0..n * n {
        input.read_exact(&mut b8)?;
        values.push(f64::from_le_bytes(b8));
    }
    RealField::from_values(&grid, values)
}
