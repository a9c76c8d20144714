//! Relative-entropy bounds for the law `m_t` of the dynamics
//!
//! `H(m_t | m_∞)` is split into a Girsanov term for the time-shifted drift,
//! the exact Gaussian–Gaussian terms (per Fourier mode) and the potential terms
//! `log E_{m⁰_∞}[e^{-V}] + E_{m_t}[V]`. Non-Gaussian entropies are never estimated
//! directly; everything reported is either an exact mode sum or a Monte Carlo
//! estimate of one of these terms.
//!
//! Drift convention: `(∂_s + A)φ = -B + sqrt(2) ξ` with `A = 1 - Δ` and
//! `B = λ:φ^3: + (μ - 1)φ`, i.e. the simulated equation has mass parameter `μ - 1`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DpdState, DpdStepper, InitialSplit, Scheme, SimConfig};
use crate::error::{invalid, Error, Result};
use crate::gaussian::{real_of, sample_gff, spectral_of, Counterterm};
use crate::grid::{RealField, TorusGrid};
use crate::noise::{sample_slab, RngPolicy};
use crate::stats::{weighted_linear_fit, Welford, Z95};
use crate::wick::hermite;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TermKind {
    Exact,
    Mc,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub kind: TermKind,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate {
            value,
            stderr: 0.0,
            kind: TermKind::Exact,
        }
    }

    fn mc(w: &Welford) -> Self {
        Estimate {
            value: w.mean(),
            stderr: w.stderr(),
            kind: TermKind::Mc,
        }
    }
}

fn omegas(grid: &TorusGrid) -> impl Iterator<Item = f64> + '_ {
    grid.symbols().iter().map(|q| q + 1.0)
}

/// `-Σ_p log(1 - e^{-2t ω_p})` over the grid wavenumbers, `ω_p = |p|^2 + 1`.
pub fn fredholm_logdet(t: f64, grid: &TorusGrid) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(invalid(format!(
            "fredholm determinant needs t > 0, got {t}"
        )));
    }
    Ok(omegas(grid).map(|w| -(-(-2.0 * t * w).exp()).ln_1p()).sum())
}

/// `H(m⁰_t | m⁰_∞)` for `φ0 = 0`: `Σ_p ½[-log(1 - e^{-2tω}) - e^{-2tω}]`.
pub fn gaussian_kl_closed(t: f64, grid: &TorusGrid) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid("t must be positive"));
    }
    Ok(omegas(grid)
        .map(|w| {
            let e = (-2.0 * t * w).exp();
            0.5 * (-(-e).ln_1p() - e)
        })
        .sum())
}

/// The four terms of `∫ log(dm⁰_t / dm⁰_∞) dm_t`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GaussianTerms {
    /// `-½ log det(1 - e^{-2tA})`.
    pub fredholm: Estimate,
    /// `-½ (e^{-tA}φ0, A(1 - e^{-2tA})^{-1} e^{-tA}φ0)`.
    pub mean_quadratic: Estimate,
    /// `-½ ∫ (e^{-tA}φ, A(1 - e^{-2tA})^{-1} e^{-tA}φ) dm_t`.
    pub quadratic: Estimate,
    /// `∫ (φ, A(1 - e^{-2tA})^{-1} e^{-tA}φ0) dm_t`.
    pub cross: Estimate,
}

impl GaussianTerms {
    pub fn total(&self) -> f64 {
        self.fredholm.value + self.mean_quadratic.value + self.quadratic.value + self.cross.value
    }
}

/// Exact mode sums plus Monte Carlo over `samples` of `m_t`.
pub fn gaussian_relent_terms(
    t: f64,
    phi0: &RealField,
    samples: &[RealField],
) -> Result<GaussianTerms> {
    let grid = phi0.grid();
    let fredholm = 0.5 * fredholm_logdet(t, grid)?;
    let vol = grid.volume();
    // K_p = ω e^{-2tω} / (1 - e^{-2tω}) and the cross multiplier ω e^{-tω} / (1 - e^{-2tω})
    let quad: Vec<f64> = omegas(grid)
        .map(|w| w * (-2.0 * t * w).exp() / -(-2.0 * t * w).exp_m1())
        .collect();
    let cross_m: Vec<f64> = omegas(grid)
        .map(|w| w * (-t * w).exp() / -(-2.0 * t * w).exp_m1())
        .collect();
    let p0 = spectral_of(phi0);
    let mean_quadratic = -0.5
        * vol
        * p0.iter()
            .zip(&quad)
            .map(|(c, k)| c.norm_sqr() * k)
            .sum::<f64>();
    let mut q = Welford::default();
    let mut x = Welford::default();
    for s in samples {
        grid.check_same(s.grid())?;
        let ph = spectral_of(s);
        q.push(
            -0.5 * vol
                * ph.iter()
                    .zip(&quad)
                    .map(|(c, k)| c.norm_sqr() * k)
                    .sum::<f64>(),
        );
        x.push(
            vol * ph
                .iter()
                .zip(&p0)
                .zip(&cross_m)
                .map(|((a, b), k)| (a * b.conj()).re * k)
                .sum::<f64>(),
        );
    }
    Ok(GaussianTerms {
        fredholm: Estimate::exact(fredholm),
        mean_quadratic: Estimate::exact(mean_quadratic),
        quadratic: Estimate::mc(&q),
        cross: Estimate::mc(&x),
    })
}

/// `B(φ, :φ^3:) = λ :φ^3: + (μ - 1) φ` with Wick powers at counterterm `a`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub lambda: f64,
    pub mu: f64,
    pub a: f64,
}

impl DriftSpec {
    pub fn eval(&self, phi: &RealField) -> RealField {
        phi.map(|x| self.lambda * hermite(x, self.a, 3) + (self.mu - 1.0) * x)
    }

    /// Potential `V = ∫ (λ/4 :φ^4: + (μ - 1)/2 :φ^2:) dx`, whose Gibbs measure
    /// relative to the GFF is invariant for this drift.
    pub fn potential(&self, phi: &RealField) -> f64 {
        let c = self.mu - 1.0;
        phi.values()
            .iter()
            .map(|&x| 0.25 * self.lambda * hermite(x, self.a, 4) + 0.5 * c * hermite(x, self.a, 2))
            .sum::<f64>()
            * phi.grid().cell_area()
    }
}

#[derive(Clone, Debug)]
pub struct EntropyConfig {
    pub grid: Arc<TorusGrid>,
    pub lambda: f64,
    /// `μ` in `B = λ:φ^3: + (μ - 1)φ`.
    pub mu: f64,
    pub t: f64,
    pub dt: f64,
    pub phi0: RealField,
    pub policy: RngPolicy,
    pub counterterm: Counterterm,
}

impl EntropyConfig {
    pub fn new(grid: &Arc<TorusGrid>, lambda: f64, mu: f64, t: f64, dt: f64, seed: u64) -> Self {
        EntropyConfig {
            grid: Arc::clone(grid),
            lambda,
            mu,
            t,
            dt,
            phi0: RealField::zeros(grid),
            policy: RngPolicy::new(seed),
            counterterm: Counterterm::reference(grid),
        }
    }

    pub fn drift(&self) -> DriftSpec {
        DriftSpec {
            lambda: self.lambda,
            mu: self.mu,
            a: self.counterterm.value,
        }
    }

    pub fn steps(&self) -> Result<usize> {
        let n = (self.t / self.dt).round();
        if !(self.t > 0.0) || n < 2.0 || (n * self.dt - self.t).abs() > 1e-9 * self.t {
            return Err(invalid(format!(
                "t = {} must be a multiple of dt = {} with at least two steps",
                self.t, self.dt
            )));
        }
        if !(n as usize).is_multiple_of(2) {
            return Err(invalid("time-shifted drift needs an even number of steps"));
        }
        Ok(n as usize)
    }

    fn sim(&self) -> Result<SimConfig> {
        let mut cfg = SimConfig::new(
            &self.grid,
            self.lambda,
            self.mu - 1.0,
            self.dt,
            self.t,
            Scheme::DpdExponential,
            0,
        )?;
        cfg.policy = self.policy;
        cfg.counterterm = self.counterterm;
        cfg.split = InitialSplit::OuCarries;
        Ok(cfg)
    }
}

/// One stored DPD path: `φ_n` and `B_n` at every step, plus the terminal split.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub dt: f64,
    pub phi: Vec<RealField>,
    pub drift: Vec<RealField>,
    pub z_terminal: RealField,
    pub v_terminal: RealField,
}

impl Trajectory {
    pub fn horizon(&self) -> f64 {
        self.dt * (self.phi.len() - 1) as f64
    }

    pub fn terminal(&self) -> &RealField {
        self.phi.last().expect("non-empty trajectory")
    }
}

pub fn record_trajectory(cfg: &EntropyConfig, replica: u64) -> Result<Trajectory> {
    let n = cfg.steps()?;
    let sim = cfg.sim()?;
    let stepper = DpdStepper::new(&sim)?;
    let spec = cfg.drift();
    let mut state = DpdState::new(&cfg.phi0, sim.split);
    let mut phi = Vec::with_capacity(n + 1);
    let mut drift = Vec::with_capacity(n + 1);
    let p = state.phi();
    drift.push(spec.eval(&p));
    phi.push(p);
    for k in 1..=n {
        let slab = sample_slab(&sim.policy, &sim.grid, sim.dt, k as u64, replica)?;
        stepper.step(&mut state, &slab.increments)?;
        let p = state.phi();
        drift.push(spec.eval(&p));
        phi.push(p);
    }
    Ok(Trajectory {
        dt: cfg.dt,
        phi,
        drift,
        z_terminal: state.z(),
        v_terminal: state.v().clone(),
    })
}

fn heat(field: &RealField, t: f64) -> RealField {
    let g = field.grid();
    let mut hat = spectral_of(field);
    for (c, w) in hat.iter_mut().zip(omegas(g)) {
        *c *= (-t * w).exp();
    }
    real_of(g, &hat)
}

/// `B̃_{s,t} = 2·1_{[t/2,t]}(s) e^{-(t-s)A} B_{2s-t}`, `t` the trajectory horizon.
pub fn shifted_drift(traj: &Trajectory, s: f64) -> Result<RealField> {
    let t = traj.horizon();
    let grid = traj.phi[0].grid();
    if !(0.0..=t + 1e-12).contains(&s) {
        return Err(invalid(format!("s = {s} outside [0, {t}]")));
    }
    if s < 0.5 * t - 1e-12 {
        return Ok(RealField::zeros(grid));
    }
    let u = 2.0 * s - t;
    let k = (u / traj.dt).round();
    if (k * traj.dt - u).abs() > 1e-9 * t.max(1.0) || k as usize >= traj.drift.len() {
        return Err(Error::MissingTime(u));
    }
    Ok(heat(&traj.drift[k as usize], t - s).scale(2.0))
}

/// Terminal value of the time-shifted equation driven by the same noise:
/// `φ̃_t = Z_t + ṽ_t`, `ṽ <- e^{-dtA}(ṽ - dt B̃_s)`.
pub fn time_shifted_terminal(traj: &Trajectory) -> Result<RealField> {
    let n = traj.phi.len() - 1;
    let grid = traj.phi[0].grid();
    let mut v = RealField::zeros(grid);
    for k in 0..n {
        let b = shifted_drift(traj, k as f64 * traj.dt)?;
        v.axpy(-traj.dt, &b);
        v = heat(&v, traj.dt);
    }
    Ok(traj.z_terminal.add(&v))
}

/// Girsanov bound `E[½ ∫_0^t ‖e^{-(t-s)A/2} B_s‖^2 ds]`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GirsanovBound {
    pub bound: Estimate,
    /// Monte Carlo mean of `dt` times the integrand at the first retained step: the
    /// size of the excluded window `[0, dt]` if the integrand were flat there.
    pub excluded_window: f64,
}

fn girsanov_path(traj: &Trajectory) -> (f64, f64) {
    let n = traj.phi.len() - 1;
    let t = traj.horizon();
    let grid = traj.phi[0].grid();
    let vol = grid.volume();
    let integrand: Vec<f64> = (1..=n)
        .map(|k| {
            let s = k as f64 * traj.dt;
            let hat = spectral_of(&traj.drift[k]);
            0.5 * vol
                * hat
                    .iter()
                    .zip(omegas(grid))
                    .map(|(c, w)| c.norm_sqr() * (-(t - s) * w).exp())
                    .sum::<f64>()
        })
        .collect();
    let m = integrand.len();
    let trap = if m == 1 {
        0.0
    } else {
        traj.dt * (integrand.iter().sum::<f64>() - 0.5 * (integrand[0] + integrand[m - 1]))
    };
    (trap, traj.dt * integrand[0])
}

pub fn girsanov_entropy_bound(cfg: &EntropyConfig, replicas: usize) -> Result<GirsanovBound> {
    let (w, first) = run_paths(cfg, replicas, |traj| Ok(girsanov_path(traj)))?
        .into_iter()
        .fold(
            (Welford::default(), Welford::default()),
            |(mut w, mut f), (b, e)| {
                w.push(b);
                f.push(e);
                (w, f)
            },
        );
    Ok(GirsanovBound {
        bound: Estimate::mc(&w),
        excluded_window: first.mean(),
    })
}

fn run_paths<T: Send>(
    cfg: &EntropyConfig,
    replicas: usize,
    f: impl Fn(&Trajectory) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    if replicas < 2 {
        return Err(invalid("need at least two replicas"));
    }
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| f(&record_trajectory(cfg, r)?))
        .collect()
}

/// Closed forms for the linear family `λ = 0`, `φ0 = 0`: the Girsanov bound and
/// the exact `H(m_t | m⁰_t)` between the two centred Gaussians.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LinearFamily {
    pub girsanov: f64,
    pub exact: f64,
}

pub fn linear_family(mu: f64, t: f64, grid: &TorusGrid) -> Result<LinearFamily> {
    let c = mu - 1.0;
    if !(t > 0.0) {
        return Err(invalid("t must be positive"));
    }
    let mut girsanov = 0.0;
    let mut exact = 0.0;
    for w in omegas(grid) {
        let wp = w + c;
        if !(wp > 0.0) {
            return Err(invalid("drift makes a mode unstable"));
        }
        // per real degree of freedom, in units of 1/vol
        let var = |o: f64| -(-2.0 * t * o).exp_m1() / o;
        let (s1, s0) = (var(wp), var(w));
        let r = s1 / s0;
        exact += 0.5 * (r - 1.0 - r.ln());
        // ½ c^2 ∫_0^t e^{-(t-s)ω} (1 - e^{-2sω'}) / ω' ds
        let a = -(-t * w).exp_m1() / w;
        let d = w - 2.0 * wp;
        let b = (-t * w).exp()
            * if d.abs() < 1e-12 {
                t
            } else {
                (d * t).exp_m1() / d
            };
        girsanov += 0.5 * c * c * (a - b) / wp;
    }
    Ok(LinearFamily { girsanov, exact })
}

/// `log E_{m⁰_∞}[e^{-V}]` (GFF samples) and `E_{m_t}[V]` (dynamics samples).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PotentialTerms {
    pub log_partition: Estimate,
    pub mean_potential: Estimate,
    /// Effective sample size `(Σw)^2 / Σw^2` of the partition-function weights.
    pub ess: f64,
    /// False when `ess < 100`: the log-partition estimate is then not trustworthy.
    pub reliable: bool,
}

pub const MIN_ESS: f64 = 100.0;

/// `log mean e^{-V_i}` with a jackknife error and the effective sample size.
pub fn log_mean_exp(neg_v: &[f64]) -> Result<(f64, f64, f64)> {
    let n = neg_v.len();
    if n < 2 {
        return Err(invalid("need at least two samples"));
    }
    let shift = neg_v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = neg_v.iter().map(|x| (x - shift).exp()).collect();
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|x| x * x).sum();
    let value = shift + (s / n as f64).ln();
    let loo: Vec<f64> = w
        .iter()
        .map(|wi| shift + ((s - wi).max(f64::MIN_POSITIVE) / (n - 1) as f64).ln())
        .collect();
    let mean = loo.iter().sum::<f64>() / n as f64;
    let var = (n - 1) as f64 / n as f64 * loo.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    Ok((value, var.sqrt(), s * s / s2))
}

pub fn potential_terms(
    spec: &DriftSpec,
    grid: &Arc<TorusGrid>,
    gff_samples: usize,
    policy: &RngPolicy,
    dynamics: &[RealField],
) -> Result<PotentialTerms> {
    let neg_v: Vec<f64> = (0..gff_samples as u64)
        .into_par_iter()
        .map(|r| -spec.potential(&sample_gff(grid, policy, r)))
        .collect();
    let (value, stderr, ess) = log_mean_exp(&neg_v)?;
    if ess < MIN_ESS {
        log::warn!("log-partition estimate unreliable: effective sample size {ess:.1} < {MIN_ESS}");
    }
    let mean: Welford = dynamics.iter().map(|p| spec.potential(p)).collect();
    Ok(PotentialTerms {
        log_partition: Estimate {
            value,
            stderr,
            kind: TermKind::Mc,
        },
        mean_potential: Estimate::mc(&mean),
        ess,
        reliable: ess >= MIN_ESS,
    })
}

/// Per-mode closed form of `log E[exp(-(c/2) ∫ :φ^2:)]` under the lattice GFF:
/// `-½ Σ_p log(1 + c/ω_p) + (c/2) a |Λ|`.
pub fn quadratic_log_partition(c: f64, a: f64, grid: &TorusGrid) -> Result<f64> {
    let mut s = 0.0;
    for w in omegas(grid) {
        if !(1.0 + c / w > 0.0) {
            return Err(invalid("quadratic potential not integrable"));
        }
        s -= 0.5 * (c / w).ln_1p();
    }
    Ok(s + 0.5 * c * a * grid.volume())
}

/// Pinsker: `‖P - Q‖_{L^1} ≤ sqrt(2 H(P|Q))`.
pub fn pinsker_tv_bound(h: f64) -> Result<f64> {
    if !(h >= 0.0) {
        return Err(invalid(format!(
            "relative entropy must be nonnegative, got {h}"
        )));
    }
    Ok((2.0 * h).sqrt())
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub rate_stderr: f64,
    /// Points used: the leading run with `D > 3 stderr`.
    pub points: usize,
    /// `rate - 1.96 stderr > 0`.
    pub positive_at_95: bool,
}

/// Least-squares slope of `log D` against `t` over the leading window where
/// `D` exceeds three standard errors; `γ̂ = -slope`. With `stderr` given the fit is
/// weighted by `σ_log = stderr / D`.
pub fn decay_rate_fit(times: &[f64], d: &[f64], stderr: Option<&[f64]>) -> Result<DecayFit> {
    if times.len() != d.len() || stderr.is_some_and(|s| s.len() != d.len()) {
        return Err(invalid(
            "times, distances and errors must have equal length",
        ));
    }
    let mut end = 0;
    while end < d.len() && d[end] > 0.0 && stderr.is_none_or(|s| d[end] > 3.0 * s[end]) {
        end += 1;
    }
    if end < 2 {
        return Err(Error::EmptyFit(format!(
            "only {end} leading points above the noise floor"
        )));
    }
    let y: Vec<f64> = d[..end].iter().map(|x| x.ln()).collect();
    let sig: Option<Vec<f64>> =
        stderr.map(|s| s[..end].iter().zip(&d[..end]).map(|(s, d)| s / d).collect());
    let use_w = sig.as_ref().filter(|s| s.iter().all(|&x| x > 0.0));
    let fit = weighted_linear_fit(&times[..end], &y, use_w.map(|v| v.as_slice()))?;
    let rate = -fit.slope;
    Ok(DecayFit {
        rate,
        rate_stderr: fit.slope_stderr,
        points: end,
        positive_at_95: rate - Z95 * fit.slope_stderr > 0.0,
    })
}

/// All terms of the entropy upper bound at one `(φ0, t, L)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyReport {
    pub lambda: f64,
    pub mu: f64,
    pub t: f64,
    pub half_length: f64,
    pub girsanov: GirsanovBound,
    pub gaussian: GaussianTerms,
    pub potential: PotentialTerms,
    pub total: f64,
    pub total_stderr: f64,
    /// Pinsker bound on the `L^1` distance to the invariant measure implied by `total`.
    pub pinsker: f64,
}

impl EntropyReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Runs the dynamics once per replica and assembles every term.
pub fn entropy_report(
    cfg: &EntropyConfig,
    replicas: usize,
    gff_samples: usize,
) -> Result<EntropyReport> {
    let paths = run_paths(cfg, replicas, |traj| {
        Ok((girsanov_path(traj), traj.terminal().clone()))
    })?;
    let mut g = Welford::default();
    let mut first = Welford::default();
    let mut terminal = Vec::with_capacity(paths.len());
    for ((b, e), phi) in paths {
        g.push(b);
        first.push(e);
        terminal.push(phi);
    }
    let girsanov = GirsanovBound {
        bound: Estimate::mc(&g),
        excluded_window: first.mean(),
    };
    let gaussian = gaussian_relent_terms(cfg.t, &cfg.phi0, &terminal)?;
    let potential = potential_terms(
        &cfg.drift(),
        &cfg.grid,
        gff_samples,
        &cfg.policy.derive(0x6FF),
        &terminal,
    )?;
    let parts = [
        girsanov.bound,
        gaussian.fredholm,
        gaussian.mean_quadratic,
        gaussian.quadratic,
        gaussian.cross,
        potential.log_partition,
        potential.mean_potential,
    ];
    let total: f64 = parts.iter().map(|p| p.value).sum();
    let total_stderr = parts
        .iter()
        .map(|p| p.stderr * p.stderr)
        .sum::<f64>()
        .sqrt();
    Ok(EntropyReport {
        lambda: cfg.lambda,
        mu: cfg.mu,
        t: cfg.t,
        half_length: cfg.grid.half_length(),
        girsanov,
        gaussian,
        potential,
        total,
        total_stderr,
        pinsker: pinsker_tv_bound(total.max(0.0))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::OuState;
    use crate::quadrature::integrate;

    #[test]
    fn fredholm_limits_and_closed_forms() {
        let single = TorusGrid::new(0.5, 1).unwrap();
        for t in [0.1, 1.0, 3.0] {
            let v = fredholm_logdet(t, &single).unwrap();
            assert!((v + (1.0 - (-2.0 * t).exp()).ln()).abs() < 1e-15);
        }
        let g = TorusGrid::new(std::f64::consts::PI, 32).unwrap();
        assert!(fredholm_logdet(40.0, &g).unwrap() < 1e-30);
        assert!(fredholm_logdet(0.0, &g).is_err());
        let mut prev = f64::INFINITY;
        for t in [0.01, 0.1, 0.5, 1.0, 2.0] {
            let v = fredholm_logdet(t, &g).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn fredholm_matches_integer_mode_sum() {
        // L = π: p = k with integer k, ω = k1^2 + k2^2 + 1; sum by shells in f64 with Kahan.
        let g = TorusGrid::new(std::f64::consts::PI, 32).unwrap();
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for k1 in -16i64..16 {
            for k2 in -16i64..16 {
                let w = (k1 * k1 + k2 * k2 + 1) as f64;
                let term = -(1.0 - (-2.0 * w).exp()).ln();
                let y = term - c;
                let t = s + y;
                c = (t - s) - y;
                s = t;
            }
        }
        let v = fredholm_logdet(1.0, &g).unwrap();
        assert!(((v - s) / s).abs() < 1e-12, "{v} vs {s}");
    }

    #[test]
    fn gaussian_terms_reproduce_closed_kl() {
        let g = TorusGrid::new(1.0, 8).unwrap();
        let t = 0.3;
        let p = RngPolicy::new(21);
        // exact m⁰_t samples from the OU transition (φ0 = 0)
        let samples: Vec<RealField> = (0..4000)
            .map(|r| {
                let mut s = OuState::zero(&g);
                let st = crate::gaussian::OuStepper::new(&g, t).unwrap();
                let slab = sample_slab(&p, &g, t, 1, r).unwrap();
                st.step(&mut s, &slab.increments).unwrap();
                s.centred()
            })
            .collect();
        let terms = gaussian_relent_terms(t, &RealField::zeros(&g), &samples).unwrap();
        let exact = gaussian_kl_closed(t, &g).unwrap();
        assert_eq!(terms.mean_quadratic.value, 0.0);
        assert_eq!(terms.cross.value, 0.0);
        assert!(terms.quadratic.value <= 0.0);
        assert!(
            (terms.total() - exact).abs() < 3.0 * terms.quadratic.stderr,
            "{} vs {exact}",
            terms.total()
        );
        // per-mode scalar KL
        let per_mode: f64 = g
            .symbols()
            .iter()
            .map(|q| {
                let w = q + 1.0;
                let r = -(-2.0 * t * w).exp_m1();
                0.5 * (r - 1.0 - r.ln())
            })
            .sum();
        assert!((per_mode - exact).abs() < 1e-12 * exact);
    }

    #[test]
    fn constant_initial_condition_mean_term() {
        let g = TorusGrid::new(1.0, 4).unwrap();
        let (c, t) = (1.7, 0.4);
        let terms = gaussian_relent_terms(t, &RealField::constant(&g, c), &[]).unwrap();
        let e = (-2.0 * t).exp();
        let expect = -0.5 * c * c * g.volume() * e / (1.0 - e);
        assert!((terms.mean_quadratic.value - expect).abs() < 1e-12 * expect.abs());
        let late = gaussian_relent_terms(30.0, &RealField::constant(&g, c), &[]).unwrap();
        assert!(late.mean_quadratic.value.abs() < 1e-20);
    }

    #[test]
    fn shifted_drift_vanishes_early_and_rejects_missing_times() {
        let g = TorusGrid::new(1.0, 8).unwrap();
        let mut cfg = EntropyConfig::new(&g, 1.0, 1.0, 0.2, 0.02, 3);
        cfg.phi0 = RealField::constant(&g, 0.5);
        let traj = record_trajectory(&cfg, 0).unwrap();
        assert!(shifted_drift(&traj, 0.05)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
        assert!(shifted_drift(&traj, 0.15).unwrap().sup_norm() > 0.0);
        assert!(matches!(
            shifted_drift(&traj, 0.155),
            Err(Error::MissingTime(_))
        ));
    }

    #[test]
    fn ou_case_has_zero_drift_and_exact_shift() {
        let g = TorusGrid::new(1.0, 8).unwrap();
        let cfg = EntropyConfig::new(&g, 0.0, 1.0, 0.2, 0.02, 4);
        let traj = record_trajectory(&cfg, 0).unwrap();
        assert_eq!(
            time_shifted_terminal(&traj).unwrap().values(),
            traj.terminal().values()
        );
        let b = girsanov_entropy_bound(&cfg, 4).unwrap();
        assert_eq!(b.bound.value, 0.0);
    }

    #[test]
    fn time_shift_identity_is_first_order() {
        let g = TorusGrid::new(1.0, 8).unwrap();
        let mut errs = Vec::new();
        for dt in [0.02, 0.01, 0.005] {
            let mut cfg = EntropyConfig::new(&g, 0.0, 2.0, 0.4, dt, 5);
            cfg.phi0 = RealField::from_fn(&g, |x| 1.0 + (std::f64::consts::PI * x[0]).cos());
            let e: Welford = (0..20)
                .map(|r| {
                    let traj = record_trajectory(&cfg, r).unwrap();
                    time_shifted_terminal(&traj)
                        .unwrap()
                        .sub(traj.terminal())
                        .l2_norm()
                })
                .collect();
            errs.push(e.mean());
        }
        for w in errs.windows(2) {
            let r = w[0] / w[1];
            assert!((1.6..2.5).contains(&r), "ratio {r}: {errs:?}");
        }
    }

    #[test]
    fn linear_family_dominance_and_mc_agreement() {
        let g = TorusGrid::new(1.0, 8).unwrap();
        for mu in [0.5, 0.6, 2.0, 3.0] {
            for t in [0.25, 1.0] {
                let lf = linear_family(mu, t, &g).unwrap();
                assert!(
                    lf.girsanov > lf.exact && lf.exact > 0.0,
                    "mu {mu} t {t}: {lf:?}"
                );
            }
        }
        let lf = linear_family(1.0, 1.0, &g).unwrap();
        assert_eq!((lf.girsanov, lf.exact), (0.0, 0.0));
        let cfg = EntropyConfig::new(&g, 0.0, 2.0, 0.5, 0.005, 6);
        let mc = girsanov_entropy_bound(&cfg, 400).unwrap();
        let exact = linear_family(2.0, 0.5, &g).unwrap().girsanov;
        // trapezoid on a first-order path: allow a few percent of discretisation bias
        assert!(
            (mc.bound.value - exact).abs() < 3.0 * mc.bound.stderr + 0.05 * exact,
            "{:?} vs {exact}",
            mc.bound
        );
    }

    #[test]
    fn quadratic_partition_matches_closed_form() {
        let g = TorusGrid::new(1.0, 8).unwrap();
        let a = Counterterm::reference(&g).value;
        let spec = DriftSpec {
            lambda: 0.0,
            mu: 1.5,
            a,
        };
        let exact = quadratic_log_partition(0.5, a, &g).unwrap();
        let terms = potential_terms(&spec, &g, 1_000_000, &RngPolicy::new(8), &[]).unwrap();
        assert!(terms.reliable);
        let lp = terms.log_partition;
        assert!(
            ((lp.value - exact) / exact).abs() < 0.01,
            "{lp:?} vs {exact}"
        );
        assert!((lp.value - exact).abs() < 3.0 * lp.stderr);
        let zero = DriftSpec {
            lambda: 0.0,
            mu: 1.0,
            a,
        };
        let z = potential_terms(
            &zero,
            &g,
            10,
            &RngPolicy::new(8),
            &[RealField::constant(&g, 2.0)],
        )
        .unwrap();
        assert_eq!((z.log_partition.value, z.mean_potential.value), (0.0, 0.0));
    }

    #[test]
    fn pinsker_arithmetic_and_gaussian_pairs() {
        assert_eq!(pinsker_tv_bound(0.0).unwrap(), 0.0);
        assert_eq!(pinsker_tv_bound(0.5).unwrap(), 1.0);
        assert!(pinsker_tv_bound(-1.0).is_err());
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        for m in [0.1, 0.5, 1.0] {
            let tv = integrate(|x| (phi(x - m) - phi(x)).abs(), -12.0, 12.0, 1e-13, 1e-11).unwrap();
            assert!(tv <= pinsker_tv_bound(0.5 * m * m).unwrap());
        }
    }

    #[test]
    fn decay_fit_sanity() {
        let t: Vec<f64> = (0..10).map(|k| 0.1 * k as f64).collect();
        let d: Vec<f64> = t.iter().map(|t| (-2.0 * t).exp()).collect();
        let f = decay_rate_fit(&t, &d, None).unwrap();
        assert!((f.rate - 2.0).abs() < 1e-12 && f.points == 10);
        let se = vec![0.2; 10];
        let f = decay_rate_fit(&t, &d, Some(&se)).unwrap();
        assert!(f.points < 10);
        assert!(decay_rate_fit(&t, &[0.1; 10], Some(&se)).is_err());
    }

    #[test]
    fn zero_mode_relaxes_at_unit_rate() {
        // λ = 0, SPDE mass 0 (μ = 1 here): E(φ_t, 1)/|Λ| = c e^{-t}.
        let g = TorusGrid::new(1.0, 8).unwrap();
        let mut cfg = EntropyConfig::new(&g, 0.0, 1.0, 2.0, 0.05, 9);
        cfg.phi0 = RealField::constant(&g, 3.0);
        let paths = run_paths(&cfg, 200, |traj| {
            Ok(traj
                .phi
                .iter()
                .map(|p| p.integral() / g.volume())
                .collect::<Vec<_>>())
        })
        .unwrap();
        let times: Vec<f64> = (0..paths[0].len()).map(|k| k as f64 * cfg.dt).collect();
        let (mut d, mut se) = (Vec::new(), Vec::new());
        for k in 0..times.len() {
            let w: Welford = paths.iter().map(|p| p[k]).collect();
            d.push(w.mean().abs());
            se.push(w.stderr().max(1e-12));
        }
        let f = decay_rate_fit(&times, &d, Some(&se)).unwrap();
        assert!((f.rate - 1.0).abs() < 0.1, "{f:?}");
    }
}
