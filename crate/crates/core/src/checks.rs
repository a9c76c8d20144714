//! The acceptance checks, shared by the command line and the test suite.
//!
//! Each check runs a self-contained experiment against an independent oracle
//! and returns a [`CheckResult`] with the statistics behind the verdict.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::besov::{
    check_duality, check_embedding, check_heat_smoothing, check_kernel_equivalence,
    check_multiplication, InequalityRow, NormEngine, Profile, Region,
};
use crate::dynamics::{
    apriori_fit, coupled_run, langevin_observables, mala_sample, observables_update, AprioriConfig,
    CoupledConfig, CoupledReport, DpdState, DpdStepper, LangevinStepper, MalaConfig, Observables,
    Scheme, SimConfig, VolumeRow,
};
use crate::entropy::{
    decay_rate_fit, fredholm_logdet, girsanov_entropy_bound, linear_family, record_trajectory,
    time_shifted_terminal, EntropyConfig,
};
use crate::error::{invalid, Error, Result};
use crate::gaussian::{
    bump_kernel_power_integral, counterterm_bridge_f, pairing_variance, sample_gff,
    z_minus_zl_decay, Counterterm, CovKernel, DecayConfig, OuState, OuStepper,
};
use crate::grid::{Laplacian, Multiplier, RealField, TorusGrid};
use crate::noise::{compact_bump, gaussian_bump, sample_slab, Cutoff, RngPolicy};
use crate::stats::{linear_fit, second_moment, variance_with_stderr, Welford};
use crate::wick::{wick_centred, Convention};

/// Replica budget: `Full` uses the counts the criteria are stated at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Effort {
    Full,
    Quick,
}

impl Effort {
    fn reps(self, full: usize, quick: usize) -> usize {
        match self {
            Effort::Full => full,
            Effort::Quick => quick,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Gaussian,
    Wick,
    Norms,
    Dynamics,
    Entropy,
    All,
}

impl Suite {
    pub fn ids(self) -> Vec<u32> {
        match self {
            Suite::Gaussian => vec![1, 4],
            Suite::Wick => vec![2, 3],
            Suite::Norms => vec![10],
            Suite::Dynamics => vec![5, 6, 7, 8, 11],
            Suite::Entropy => vec![9],
            Suite::All => (1..=11).collect(),
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gaussian" => Suite::Gaussian,
            "wick" => Suite::Wick,
            "norms" => Suite::Norms,
            "dynamics" => Suite::Dynamics,
            "entropy" => Suite::Entropy,
            "all" => Suite::All,
            other => {
                return Err(invalid(format!(
                    "unknown suite '{other}' (expected gaussian, wick, norms, dynamics, entropy or all)"
                )))
            }
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckResult {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub summary: String,
    pub stats: BTreeMap<String, f64>,
    pub seconds: f64,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "{} criterion {:>2} {:<28} {} ({:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.summary,
            self.seconds
        )
    }
}

struct Builder {
    stats: BTreeMap<String, f64>,
    notes: Vec<String>,
    passed: bool,
}

impl Builder {
    fn new() -> Self {
        Builder {
            stats: BTreeMap::new(),
            notes: Vec::new(),
            passed: true,
        }
    }

    fn stat(&mut self, key: impl Into<String>, v: f64) {
        self.stats.insert(key.into(), v);
    }

    fn require(&mut self, ok: bool, note: impl Into<String>) {
        if !ok {
            self.passed = false;
            self.notes.push(note.into());
        }
    }

    fn finish(self, id: u32, name: &str, ok_summary: String, start: Instant) -> CheckResult {
        let summary = if self.passed {
            ok_summary
        } else {
            format!("{ok_summary}; failed: {}", self.notes.join("; "))
        };
        CheckResult {
            id,
            name: name.to_string(),
            passed: self.passed,
            summary,
            stats: self.stats,
            seconds: start.elapsed().as_secs_f64(),
        }
    }
}

pub const NAMES: [&str; 11] = [
    "gaussian-covariance",
    "wick-variance",
    "counterterm-bridge",
    "z-minus-zl-decay",
    "invariance",
    "scheme-agreement",
    "apriori-bound",
    "propagation-speed",
    "entropy-pipeline",
    "norm-inequalities",
    "uniqueness-proxy",
];

pub fn run_check(id: u32, effort: Effort, seed: u64) -> Result<CheckResult> {
    let policy = RngPolicy::new(seed).derive(id as u64);
    match id {
        1 => gaussian_covariance(effort, &policy),
        2 => wick_variance(effort, &policy),
        3 => counterterm_bridge(&policy),
        4 => decay_check(effort, &policy),
        5 => invariance(effort, &policy),
        6 => scheme_agreement(effort, &policy),
        7 => apriori(effort, &policy),
        8 => propagation(effort, &policy),
        9 => entropy_pipeline(effort, &policy),
        10 => norms(effort, &policy),
        11 => uniqueness(effort, &policy),
        _ => Err(invalid(format!("no criterion {id}"))),
    }
}

pub fn run_suite(suite: Suite, effort: Effort, seed: u64) -> Result<Vec<CheckResult>> {
    suite
        .ids()
        .into_iter()
        .map(|id| run_check(id, effort, seed))
        .collect()
}

/// Exact OU samples of `Z~_t` from zero (one exact step of length `t`).
fn ou_samples(
    grid: &Arc<TorusGrid>,
    t: f64,
    replicas: usize,
    policy: &RngPolicy,
) -> Result<Vec<RealField>> {
    let stepper = OuStepper::new(grid, t)?;
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut s = OuState::zero(grid);
            stepper.step(&mut s, &sample_slab(policy, grid, t, 1, r)?.increments)?;
            Ok(s.centred())
        })
        .collect()
}

const BUMP_WIDTH: f64 = 0.5;

fn gaussian_covariance(effort: Effort, policy: &RngPolicy) -> Result<CheckResult> {
    let start = Instant::now();
    let g = TorusGrid::new(PI, 64)?;
    let f = gaussian_bump(&g, [0.0, 0.0], BUMP_WIDTH);
    let reps = effort.reps(10_000, 2_000);
    let mut b = Builder::new();
    let mut parts = Vec::new();
    for t in [0.25, 1.0] {
        let xs: Vec<f64> = ou_samples(&g, t, reps, &policy.derive((t * 100.0) as u64))?
            .iter()
            .map(|z| f.pair(z))
            .collect();
        let (var, se) = variance_with_stderr(&xs);
        let oracle =
            bump_kernel_power_integral(BUMP_WIDTH, &CovKernel::equal_time(t, Some(PI)), 1, 1e-10)?;
        b.stat(format!("t{t}_var"), var);
        b.stat(format!("t{t}_stderr"), se);
        b.stat(format!("t{t}_oracle"), oracle);
        b.stat(format!("t{t}_lattice_exact"), pairing_variance(&f, t));
        let z = (var - oracle) / se;
        b.require(z.abs() < 3.0, format!("t = {t}: z = {z:.2}"));
        parts.push(format!("t={t}: {var:.4}±{se:.4} vs {oracle:.4}"));
    }
    Ok(b.finish(1, NAMES[0], parts.join(", "), start))
}

fn wick_variance(effort: Effort, policy: &RngPolicy) -> Result<CheckResult> {
    let start = Instant::now();
    let g = TorusGrid::new(PI, 64)?;
    let f = gaussian_bump(&g, [0.0, 0.0], BUMP_WIDTH);
    let a_ref = Counterterm::reference(&g);
    let reps = effort.reps(10_000, 2_000);
    let mut b = Builder::new();
    let mut parts = Vec::new();
    for t in [0.25, 1.0] {
        let samples = ou_samples(&g, t, reps, &policy.derive((t * 100.0) as u64))?;
        let pairs: Vec<(f64, f64)> = samples
            .par_iter()
            .map(|z| {
                let w = wick_centred(z, t, Convention::Homogeneous, &a_ref)?;
                Ok((f.pair(w.z2()), f.pair(w.z3())))
            })
            .collect::<Result<_>>()?;
        let kernel = CovKernel::equal_time(t, Some(PI));
        for (n, fact) in [(2usize, 2.0), (3, 6.0)] {
            let xs: Vec<f64> = pairs
                .iter()
                .map(|p| if n == 2 { p.0 } else { p.1 })
                .collect();
            let (m, se) = second_moment(&xs);
            let oracle = fact * bump_kernel_power_integral(BUMP_WIDTH, &kernel, n as i32, 1e-9)?;
            b.stat(format!("t{t}_n{n}_moment"), m);
            b.stat(format!("t{t}_n{n}_stderr"), se);
            b.stat(format!("t{t}_n{n}_oracle"), oracle);
            let z = (m - oracle) / se;
            b.require(z.abs() < 3.0, format!("t = {t}, n = {n}: z = {z:.2}"));
            parts.push(format!("t={t} n={n}: z={z:.2}"));
        }
    }
    Ok(b.finish(2, NAMES[1], parts.join(", "), start))
}

fn counterterm_bridge(policy: &RngPolicy) -> Result<CheckResult> {
    let start = Instant::now();
    let mut b = Builder::new();
    let g = TorusGrid::new(PI, 64)?;
    let a_ref = Counterterm::reference(&g);
    let mut worst = 0.0f64;
    for (r, t) in [0.05, 0.25, 1.0, 4.0].into_iter().enumerate() {
        for z in ou_samples(&g, t, 20, &policy.derive(r as u64))? {
            let hom = wick_centred(&z, t, Convention::Homogeneous, &a_ref)?;
            let fixed = wick_centred(&z, t, Convention::Fixed, &a_ref)?;
            let f = counterterm_bridge_f(t, &g, a_ref.value)?;
            let two = hom.z2().map(|v| v + f);
            let three = hom.z3().zip_map(&z, |c, x| c + 3.0 * f * x);
            for (lhs, rhs) in [(&two, fixed.z2()), (&three, fixed.z3())] {
                worst = worst.max(lhs.sub(rhs).sup_norm() / (1.0 + rhs.sup_norm()));
            }
        }
    }
    b.stat("identity_max_rel_diff", worst);
    b.require(worst < 1e-12, format!("identity residual {worst:e}"));

    // f(t) against log t between the lattice cutoff and the unit scale
    let fine = TorusGrid::new(1.0, 128)?;
    let a = Counterterm::reference(&fine).value;
    let h2 = fine.cell_area();
    let (lo, hi) = (4.0 * h2, 0.02);
    let ts: Vec<f64> = (0..9)
        .map(|k| lo * (hi / lo).powf(k as f64 / 8.0))
        .collect();
    let fs: Vec<f64> = ts
        .iter()
        .map(|&t| counterterm_bridge_f(t, &fine, a))
        .collect::<Result<_>>()?;
    let logs: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let fit = linear_fit(&logs, &fs)?;
    let target = 1.0 / (4.0 * PI);
    let rel = fit.slope / target - 1.0;
    b.stat("slope", fit.slope);
    b.stat("slope_target", target);
    b.stat("window_lo", lo);
    b.stat("window_hi", hi);
    b.require(
        rel.abs() <= 0.15,
        format!("slope off by {:.1}%", 100.0 * rel),
    );
    Ok(b.finish(
        3,
        NAMES[2],
        format!(
            "identities {worst:.1e}; slope {:.5} vs 1/(4π) ({:+.1}%)",
            fit.slope,
            100.0 * rel
        ),
        start,
    ))
}

fn decay_check(effort: Effort, policy: &RngPolicy) -> Result<CheckResult> {
    let start = Instant::now();
    let master = TorusGrid::new(4.0, 64)?;
    let f = compact_bump(&master, [0.0, 0.0], 0.6, [0.0, 0.0]);
    let cfg = DecayConfig {
        master: Arc::clone(&master),
        sub_half_lengths: vec![1.0, 2.0],
        times: vec![0.25, 0.5, 1.0],
        dt: 0.01,
        replicas: effort.reps(10_000, 1_000),
        policy: *policy,
    };
    let rows = z_minus_zl_decay(&cfg, &f)?;
    let mut b = Builder::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut worst = 0.0f64;
    for r in &rows {
        let z = (r.estimate - r.oracle) / r.stderr;
        worst = worst.max(z.abs());
        b.stat(format!("L{}_t{}_estimate", r.half_length, r.t), r.estimate);
        b.stat(format!("L{}_t{}_oracle", r.half_length, r.t), r.oracle);
        b.require(
            z.abs() < 3.0,
            format!("L = {}, t = {}: z = {z:.2}", r.half_length, r.t),
        );
        if r.estimate > 0.0 {
            xs.push(r.half_length * r.half_length / r.t);
            ys.push(r.estimate.ln());
        }
    }
    let fit = linear_fit(&xs, &ys)?;
    b.stat("max_abs_z", worst);
    b.stat("log_slope_vs_l2_over_t", fit.slope);
    b.require(
        fit.slope < 0.0,
        format!("slope {:.3} not negative", fit.slope),
    );
    Ok(b.finish(
        4,
        NAMES[3],
        format!(
            "max |z| {worst:.2}; slope of log E vs L²/t {:.3}",
            fit.slope
        ),
        start,
    ))
}

fn invariance_tests(g: &Arc<TorusGrid>) -> Vec<RealField> {
    vec![
        gaussian_bump(g, [0.0, 0.0], 0.7).scale(0.5),
        compact_bump(g, [1.0, 0.0], 1.2, [1.0, 0.0]).scale(0.6),
    ]
}

/// `(name, mean, stderr)` for phi2, susceptibility and each `cos_pair_j`.
pub fn pick(obs: &Observables, batches: usize) -> Result<Vec<(String, f64, f64)>> {
    Ok(obs
        .summary(batches)?
        .into_iter()
        .filter(|(n, _, _)| n != "magnetisation")
        .collect())
}

fn langevin_averages(
    g: &Arc<TorusGrid>,
    dt: f64,
    runs: usize,
    horizon: f64,
    policy: &RngPolicy,
) -> Result<Vec<(String, f64, f64)>> {
    let mut cfg = SimConfig::new(g, 1.0, 1.0, dt, horizon, Scheme::LangevinExponential, 0)?;
    cfg.policy = *policy;
    let obs = langevin_observables(&cfg, &invariance_tests(g), runs, 10.0, 0.1)?;
    pick(&obs, 4 * runs)
}

/// One observable of the invariance comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InvarianceRow {
    pub observable: String,
    pub coarse: f64,
    pub fine: f64,
    /// `2 A(d/2) - A(d)`.
    pub extrapolated: f64,
    pub extrapolated_stderr: f64,
    pub mala: f64,
    pub mala_stderr: f64,
    pub z: f64,
}

/// Linear extrapolation in `dt` of the Langevin averages (`coarse` at `d`,
/// `fine` at `d/2`) against the exact-target MALA averages.
pub fn compare_invariance(
    coarse: &[(String, f64, f64)],
    fine: &[(String, f64, f64)],
    mala: &[(String, f64, f64)],
) -> Vec<InvarianceRow> {
    coarse
        .iter()
        .zip(fine)
        .zip(mala)
        .map(|((c, f), m)| {
            let extrapolated = 2.0 * f.1 - c.1;
            let extrapolated_stderr = (4.0 * f.2 * f.2 + c.2 * c.2).sqrt();
            InvarianceRow {
                observable: m.0.clone(),
                coarse: c.1,
                fine: f.1,
                extrapolated,
                extrapolated_stderr,
                mala: m.1,
                mala_stderr: m.2,
                z: (extrapolated - m.1) / extrapolated_stderr.hypot(m.2),
            }
        })
        .collect()
}

fn invariance(effort: Effort, policy: &RngPolicy) -> Result<CheckResult> {
    let start = Instant::now();
    let g = TorusGrid::with_laplacian(PI, 32, Laplacian::FiniteDifference)?;
    let (runs, horizon) = match effort {
        Effort::Full => (16, 200.0),
        Effort::Quick => (8, 50.0),
    };
    let coarse = langevin_averages(&g, 0.02, runs, horizon, &policy.derive(1))?;
    let fine = langevin_averages(&g, 0.01, runs, horizon, &policy.derive(2))?;

    let a = Counterterm::reference(&g).value;
    let mass = 1.0 + 1.0 - 3.0 * a;
    let chains = 8;
    let samples = effort.reps(5_000, 1_500);
    let mala = MalaConfig {
        chains,
        thin: 10,
        policy: policy.derive(3),
        ..MalaConfig::new(&g, 1.0, mass, samples, 0)
    };
    let tests = invariance_tests(&g);
    let mut obs = Observables::new(tests.len());
    let mut err = None;
    let run = mala_sample(&mala, |_, _, phi| {
        if let Err(e) = observables_update(&mut obs, phi, &tests) {
            err.get_or_insert(e);
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    let reference = pick(&obs, 4 * chains as usize)?;

    let rows = compare_invariance(&coarse, &fine, &reference);
    let mut b = Builder::new();
    let mut worst = 0.0f64;
    for r in &rows {
        let name = &r.observable;
        worst = worst.max(r.z.abs());
        b.stat(format!("{name}_dt_coarse"), r.coarse);
        b.stat(format!("{name}_dt_fine"), r.fine);
        b.stat(format!("{name}_extrapolated"), r.extrapolated);
        b.stat(format!("{name}_extrapolated_stderr"), r.extrapolated_stderr);
        b.stat(format!("{name}_mala"), r.mala);
        b.stat(format!("{name}_mala_stderr"), r.mala_stderr);
        b.require(r.z.abs() < 3.0, format!("{name}: z = {:.2}", r.z));
    }
    let acc = run.acceptance.iter().sum::<f64>() / run.acceptance.len() as f64;
    b.stat("mala_acceptance", acc);
    b.stat("max_abs_z", worst);
    Ok(b.finish(
        5,
        NAMES[4],
        format!("max |z| {worst:.2} over 4 observables (MALA acceptance {acc:.2})"),
        start,
    ))
}

fn scheme_agreement(effort: Effort, policy: &RngPolicy) -> Result<CheckResult> {
    let start = Instant::now();
    let g = TorusGrid::with_laplacian(PI, 16, Laplacian::FiniteDifference)?;
    let horizon: f64 = 1.0;
    let dt_fine = 0.001;
    let dts = [0.004, 0.002, 0.001];
    let phi0 = RealField::from_fn(&g, |x| 1.0 + x[0].cos() * x[1].sin());
    let tests = [
        gaussian_bump(&g, [0.0, 0.0], 0.7),
        gaussian_bump(&g, [1.0, -1.0], 0.5),
        compact_bump(&g, [0.0, 0.0], 2.0, [1.0, 0.0]),
        RealField::from_fn(&g, |x| (x[0] + 2.0 * x[1]).cos()),
        RealField::constant(&g, 1.0 / g.volume()),
    ];
    let reps = effort.reps(48, 16) as u64;
    let fine_steps = (horizon / dt_fine).round() as usize;
    // errs[replica][dt][test]
    let errs: Vec<Vec<Vec<f64>>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let fine: Vec<RealField> = (1..=fine_steps)
                .map(|k| Ok(sample_slab(policy, &g, dt_fine, k as u64, r)?.increments))
                .collect::<Result<_>>()?;
            dts.iter()
                .map(|&dt| {
                    let block = (dt / dt_fine).round() as usize;
                    let dpd_cfg =
                        SimConfig::new(&g, 1.0, 1.0, dt, horizon, Scheme::DpdExponential, 0)?;
                    let eul_cfg = SimConfig {
                        scheme: Scheme::LangevinEuler,
                        ..dpd_cfg.clone()
                    };
                    let dpd = DpdStepper::new(&dpd_cfg)?;
                    let eul = LangevinStepper::new(&eul_cfg)?;
                    let mut ds = DpdState::new(&phi0, dpd_cfg.split);
                    let mut ep = phi0.clone();
                    for (n, chunk) in fine.chunks(block).enumerate() {
                        let mut w = chunk[0].clone();
                        for c in &chunk[1..] {
                            w.axpy(1.0, c);
                        }
                        dpd.step(&mut ds, &w)?;
                        eul.step(&mut ep, &w, n as f64 * dt)?;
                    }
                    let d = ds.phi().sub(&ep);
                    Ok(tests.iter().map(|f| f.pair(&d).abs()).collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()
        })
        .collect::<Result<_>>()?;
    let mut b = Builder::new();
    let mut ratios = Vec::new();
    for j in 0..tests.len() {
        let mean = |k: usize| errs.iter().map(|e| e[k][j]).sum::<f64>() / reps as f64;
        let e: Vec<f64> = (0..dts.len()).map(mean).collect();
        for k in 0..dts.len() - 1 {
            let ratio = e[k] / e[k + 1];
            b.stat(format!("f{j}_ratio_{}_{}", dts[k], dts[k + 1]), ratio);
            b.require(
                (1.6..=2.5).contains(&ratio),
                format!("f{j}: ratio {ratio:.2} at dt {}", dts[k]),
            );
            ratios.push(ratio);
        }
        b.stat(format!("f{j}_err_{}", dts[0]), e[0]);
    }
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    Ok(b.finish(
        6,
        NAMES[5],
        format!("halving ratios in [{lo:.2}, {hi:.2}] for 5 test functions"),
        start,
    ))
}

fn apriori(effort: Effort, policy: &RngPolicy) -> Result<CheckResult> {
    let start = Instant::now();
    let g = TorusGrid::new(4.0, 128)?;
    let mut base = SimConfig::new(&g, 1.0, 1.0, 0.01, 1.0, Scheme::DpdExponential, 0)?;
    base.policy = *policy;
    let cfg = AprioriConfig {
        phi0: gaussian_bump(&g, [0.0, 0.0], 0.5).scale(2.0),
        base,
        alpha: 0.1,
        alpha_prime: 0.5,
        ball: Region::Ball {
            centre: [0.0, 0.0],
            radius: 1.0,
        },
        calibration: effort.reps(10, 4),
        verification: effort.reps(20, 20),
        safety: 2.0,
        monitor_every: 5,
        profile: Profile::default(),
    };
    let rep = apriori_fit(&cfg)?;
    let mut b = Builder::new();
    let max_ver = rep.verification.iter().map(|r| r.ratio).fold(0.0, f64::max);
    b.stat("k", rep.k);
    b.stat("eta", rep.eta);
    b.stat("max_verification_ratio", max_ver);
    b.stat("violations", rep.violations.len() as f64);
    b.require(
        rep.verification.len() >= 20,
        "fewer than 20 verification runs",
    );
    b.require(rep.passed(), format!("{} violations", rep.violations.len()));
    Ok(b.finish(
        7,
        NAMES[6],
        format!(
            "K = {:.3}, max fresh ratio {max_ver:.3}, {} violations in {} runs",
            rep.k,
            rep.violations.len(),
            rep.verification.len()
        ),
        start,
    ))
}

/// Monotonicity of `Δ(L)` in `L` for one `(t, test)`: each step up in volume may
/// not increase `Δ` by more than twice the combined standard error, and the
/// master volume must give exactly zero.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonotoneVerdict {
    pub t: f64,
    pub test: usize,
    pub deltas: Vec<f64>,
    pub master_zero: bool,
    pub monotone: bool,
}

pub fn monotone_in_volume(
    rep: &CoupledReport,
    sub_half_lengths: &[f64],
    t: f64,
    test: usize,
) -> Option<MonotoneVerdict> {
    let mut ls = sub_half_lengths.to_vec();
    ls.sort_by(f64::total_cmp);
    let rows: Vec<VolumeRow> = ls
        .iter()
        .map(|&l| rep.row(l, t, test).copied())
        .collect::<Option<_>>()?;
    let last = rows.last()?;
    let monotone = rows
        .windows(2)
        .all(|w| w[1].delta <= w[0].delta + 2.0 * w[0].delta_stderr.hypot(w[1].delta_stderr));
    Some(MonotoneVerdict {
        t,
        test,
        deltas: rows.iter().map(|r| r.delta).collect(),
        master_zero: last.delta == 0.0 && last.pathwise == 0.0,
        monotone,
    })
}

fn propagation(effort: Effort, policy: &RngPolicy) -> Result<CheckResult> {
    let start = Instant::now();
    let g = TorusGrid::new(8.0, 64)?;
    let mut base = SimConfig::new(&g, 1.0, 1.0, 0.01, 1.0, Scheme::DpdExponential, 0)?;
    base.policy = *policy;
    let cfg = CoupledConfig {
        phi0: RealField::constant(&g, 1.0),
        tests: vec![
            compact_bump(&g, [0.0, 0.0], 1.0, [0.0, 0.0]),
            compact_bump(&g, [0.3, 0.0], 0.8, [2.0, 0.0]),
            compact_bump(&g, [0.0, 0.0], 1.3, [0.0, 0.0]).scale(0.5),
        ],
        base,
        sub_half_lengths: vec![2.0, 4.0, 8.0],
        times: vec![1.0],
        replicas: effort.reps(2_000, 300),
        cutoff: Cutoff::default(),
    };
    let rep = coupled_run(&cfg)?;
    let mut b = Builder::new();
    let mut parts = Vec::new();
    for j in 0..cfg.tests.len() {
        let v = monotone_in_volume(&rep, &cfg.sub_half_lengths, 1.0, j)
            .ok_or_else(|| invalid("missing rows"))?;
        for (l, d) in cfg.sub_half_lengths.iter().zip(&v.deltas) {
            b.stat(format!("f{j}_L{l}_delta"), *d);
        }
        b.require(
            v.master_zero,
            format!("f{j}: master difference not exactly zero"),
        );
        b.require(
            v.monotone,
            format!("f{j}: Δ increases with L: {:?}", v.deltas),
        );
        parts.push(format!(
            "f{j}: {}",
            v.deltas
                .iter()
                .map(|d| format!("{d:.2e}"))
                .collect::<Vec<_>>()
                .join(" ≥ ")
        ));
    }
    Ok(b.finish(8, NAMES[7], parts.join("; "), start))
}

fn entropy_pipeline(effort: Effort, policy: &RngPolicy) -> Result<CheckResult> {
    let start = Instant::now();
    let mut b = Builder::new();
    // (a) Fredholm determinant against a compensated sum over integer modes (L = π)
    let g = TorusGrid::new(PI, 64)?;
    let mut worst = 0.0f64;
    for t in [0.05, 0.25, 1.0, 2.0] {
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for k1 in -32i64..32 {
            for k2 in -32i64..32 {
                let w = (k1 * k1 + k2 * k2 + 1) as f64;
                let y = -(-(-2.0 * t * w).exp()).ln_1p() - c;
                let tmp = s + y;
                c = (tmp - s) - y;
                s = tmp;
            }
        }
        worst = worst.max(((fredholm_logdet(t, &g)? - s) / s).abs());
    }
    b.stat("fredholm_max_rel_diff", worst);
    b.require(worst < 1e-12, format!("fredholm mismatch {worst:e}"));

    // (b) linear drift family
    let small = TorusGrid::new(1.0, 16)?;
    let mut min_gap = f64::INFINITY;
    for mu in [0.5, 2.0, 3.0] {
        for t in [0.25, 0.5, 1.0] {
            let lf = linear_family(mu, t, &small)?;
            min_gap = min_gap.min(lf.girsanov - lf.exact);
            b.require(
                lf.girsanov > lf.exact,
                format!(
                    "mu {mu}, t {t}: bound {} <= exact {}",
                    lf.girsanov, lf.exact
                ),
            );
        }
    }
    let flat = linear_family(1.0, 1.0, &small)?;
    b.require(
        flat.girsanov == 0.0 && flat.exact == 0.0,
        "zero drift must give zero bound and entropy",
    );
    let cfg = EntropyConfig {
        policy: policy.derive(1),
        ..EntropyConfig::new(&small, 0.0, 2.0, 0.5, 0.005, 0)
    };
    let mc = girsanov_entropy_bound(&cfg, effort.reps(400, 100))?;
    let lf = linear_family(2.0, 0.5, &small)?;
    b.stat("linear_min_gap", min_gap);
    b.stat("linear_mc_bound", mc.bound.value);
    b.stat("linear_mc_stderr", mc.bound.stderr);
    b.stat("linear_closed_bound", lf.girsanov);
    b.stat("linear_exact_entropy", lf.exact);
    b.require(
        mc.bound.value - 3.0 * mc.bound.stderr > lf.exact,
        "Monte Carlo bound does not dominate the exact entropy",
    );

    // (c) time-shift identity, full quartic drift; dt |p|^2 < 1 on this lattice so
    // the comparison is in the asymptotic regime
    let tiny = TorusGrid::new(2.0, 8)?;
    let mut errs = Vec::new();
    for dt in [0.005, 0.0025, 0.00125] {
        let mut cfg = EntropyConfig::new(&tiny, 1.0, 1.0, 0.4, dt, 0);
        cfg.policy = policy.derive(2);
        cfg.phi0 = RealField::from_fn(&tiny, |x| 1.0 + (PI * x[0]).cos());
        let e: Welford = (0..effort.reps(24, 8) as u64)
            .into_par_iter()
            .map(|r| {
                let traj = record_trajectory(&cfg, r)?;
                Ok(time_shifted_terminal(&traj)?.sub(traj.terminal()).l2_norm())
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .collect();
        errs.push(e.mean());
    }
    for (k, w) in errs.windows(2).enumerate() {
        let r = w[0] / w[1];
        b.stat(format!("shift_ratio_{k}"), r);
        b.require((1.6..=2.5).contains(&r), format!("time-shift ratio {r:.2}"));
    }
    b.stat("shift_err_finest", errs[2]);
    Ok(b.finish(
        9,
        NAMES[8],
        format!(
            "fredholm {worst:.1e}; min bound gap {min_gap:.2e}; shift errors {:.2e} → {:.2e} → {:.2e}",
            errs[0], errs[1], errs[2]
        ),
        start,
    ))
}

/// Settings of the norm inequality suite.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormSuite {
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub samples: usize,
    pub heat_times: Vec<f64>,
    pub profile: Profile,
    pub embedding_p: f64,
}

impl Default for NormSuite {
    fn default() -> Self {
        NormSuite {
            alpha: 0.3,
            beta: 0.5,
            sigma: 1.0,
            samples: 60,
            heat_times: vec![0.01, 0.03, 0.1, 0.3],
            profile: Profile::default(),
            embedding_p: 4.0,
        }
    }
}

/// Runs every inequality check on GFF samples. Multiplication pairs a smoothed
/// GFF `u = e^{0.1Δ} X` with an independent `::X^2::`; duality pairs `f = X` with
/// the aligned `g = bump · e^{0.05Δ} X`; the embedding uses the first 20 samples.
pub fn norm_suite(
    grid: &Arc<TorusGrid>,
    s: &NormSuite,
    policy: &RngPolicy,
) -> Result<Vec<InequalityRow>> {
    let n = s.samples;
    let gff: Vec<RealField> = (0..n as u64)
        .into_par_iter()
        .map(|r| sample_gff(grid, policy, r))
        .collect();
    let other: Vec<RealField> = (0..n as u64)
        .into_par_iter()
        .map(|r| sample_gff(grid, &policy.derive(1), r))
        .collect();
    let a_ref = Counterterm::zero();
    let wick2: Vec<RealField> = other
        .iter()
        .map(|z| {
            Ok(wick_centred(z, 50.0, Convention::Homogeneous, &a_ref)?
                .z2()
                .clone())
        })
        .collect::<Result<_>>()?;
    let smooth = Multiplier::new(grid, |q| (-0.1 * q).exp())?;
    let us: Vec<RealField> = gff.iter().map(|z| smooth.apply(z)).collect();
    let dual_smooth = Multiplier::new(grid, |q| (-0.05 * q).exp())?;
    let bump = gaussian_bump(grid, [0.0, 0.0], 0.5);
    let gs: Vec<RealField> = gff
        .iter()
        .map(|f| dual_smooth.apply(f).mul(&bump))
        .collect();
    let alternative = match s.profile {
        Profile::Cosine => Profile::default(),
        _ => Profile::Cosine,
    };

    let engine = NormEngine::new(grid, s.profile, None)?;
    let mut rows = check_heat_smoothing(&engine, &gff, s.alpha, s.beta, &s.heat_times, s.sigma)?;
    rows.push(check_multiplication(
        &engine, &us, &wick2, s.alpha, s.beta, s.sigma,
    )?);
    rows.push(check_duality(&engine, &gff, &gs, s.alpha, s.beta, s.sigma)?);
    rows.push(check_kernel_equivalence(
        grid,
        &gff,
        s.alpha,
        (s.profile, alternative),
    )?);
    rows.push(check_embedding(
        grid,
        s.profile,
        &gff[..n.min(20)],
        s.alpha,
        s.embedding_p,
    )?);
    Ok(rows)
}

fn norms(effort: Effort, policy: &RngPolicy) -> Result<CheckResult> {
    let start = Instant::now();
    let g = TorusGrid::new(2.0, 128)?;
    let suite = NormSuite {
        samples: effort.reps(60, 20),
        ..NormSuite::default()
    };
    let rows = norm_suite(&g, &suite, policy)?;
    let mut b = Builder::new();
    for r in &rows {
        b.stat(format!("{}_median", r.inequality), r.median_ratio);
        b.stat(format!("{}_p95", r.inequality), r.p95_ratio);
        b.stat(format!("{}_spread", r.inequality), r.spread);
        b.require(r.verdict, format!("{} unstable", r.inequality));
    }
    let summary = rows
        .iter()
        .map(|r| {
            format!(
                "{} {}",
                r.inequality,
                if r.verdict { "ok" } else { "unstable" }
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    Ok(b.finish(
        10,
        NAMES[9],
        format!("{} samples: {summary}", suite.samples),
        start,
    ))
}

/// `D(t) = max_j |Ê e^{i(f_j, φ^+_t)} - Ê e^{i(f_j, φ^-_t)}|` for runs from `±c`
/// driven by the same noise, with the error of the maximising `j`.
pub fn uniqueness_distance(
    cfg: &SimConfig,
    amplitude: f64,
    tests: &[RealField],
    replicas: usize,
    record_every: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let g = &cfg.grid;
    let stepper = DpdStepper::new(cfg)?;
    let steps = cfg.steps();
    let marks: Vec<usize> = (1..=steps).filter(|n| n % record_every == 0).collect();
    type Acc = Vec<Vec<(Welford, Welford)>>;
    let fresh = || -> Acc {
        vec![vec![(Welford::default(), Welford::default()); tests.len()]; marks.len()]
    };
    let acc = (0..replicas as u64)
        .into_par_iter()
        .map(|r| -> Result<Acc> {
            let mut a = fresh();
            let mut up = DpdState::new(&RealField::constant(g, amplitude), cfg.split);
            let mut down = DpdState::new(&RealField::constant(g, -amplitude), cfg.split);
            let mut k = 0;
            for n in 1..=steps {
                let slab = sample_slab(&cfg.policy, g, cfg.dt, n as u64, r)?;
                stepper.step(&mut up, &slab.increments)?;
                stepper.step(&mut down, &slab.increments)?;
                if k < marks.len() && marks[k] == n {
                    let (pu, pd) = (up.phi(), down.phi());
                    for (j, f) in tests.iter().enumerate() {
                        let d = Complex64::from_polar(1.0, f.pair(&pu))
                            - Complex64::from_polar(1.0, f.pair(&pd));
                        a[k][j].0.push(d.re);
                        a[k][j].1.push(d.im);
                    }
                    k += 1;
                }
            }
            Ok(a)
        })
        .collect::<Result<Vec<Acc>>>()?
        .into_iter()
        .fold(fresh(), |mut a, b| {
            for (x, y) in a.iter_mut().flatten().zip(b.iter().flatten()) {
                x.0.merge(&y.0);
                x.1.merge(&y.1);
            }
            a
        });
    let times: Vec<f64> = marks.iter().map(|&n| n as f64 * cfg.dt).collect();
    let mut d = Vec::with_capacity(marks.len());
    let mut se = Vec::with_capacity(marks.len());
    for row in &acc {
        let (best, err) = row
            .iter()
            .map(|(re, im)| {
                let v = re.mean().hypot(im.mean());
                let e = if v > 0.0 {
                    ((re.mean() * re.stderr()).powi(2) + (im.mean() * im.stderr()).powi(2)).sqrt()
                        / v
                } else {
                    re.stderr().hypot(im.stderr())
                };
                (v, e)
            })
            .fold((0.0, 0.0), |a, b| if b.0 > a.0 { b } else { a });
        d.push(best);
        se.push(err);
    }
    Ok((times, d, se))
}

fn uniqueness(effort: Effort, policy: &RngPolicy) -> Result<CheckResult> {
    let start = Instant::now();
    let g = TorusGrid::new(PI, 32)?;
    let dt = 0.005;
    let mut cfg = SimConfig::new(&g, 1.0, 1.0, dt, 3.0, Scheme::DpdExponential, 0)?;
    cfg.policy = *policy;
    let tests = vec![
        RealField::constant(&g, 0.2 / g.volume().sqrt()),
        gaussian_bump(&g, [0.0, 0.0], 0.7).scale(0.5),
        compact_bump(&g, [0.0, 0.0], 1.0, [1.0, 0.0]),
    ];
    let (times, d, se) = uniqueness_distance(&cfg, 5.0, &tests, effort.reps(500, 100), 20)?;
    let fit = decay_rate_fit(&times, &d, Some(&se))?;
    let mut b = Builder::new();
    b.stat("rate", fit.rate);
    b.stat("rate_stderr", fit.rate_stderr);
    b.stat("window_points", fit.points as f64);
    b.stat("d_first", d[0]);
    b.require(
        fit.positive_at_95,
        format!(
            "rate {:.3} ± {:.3} not positive at 95%",
            fit.rate, fit.rate_stderr
        ),
    );
    Ok(b.finish(
        11,
        NAMES[10],
        format!(
            "γ̂ = {:.3} ± {:.3} over {} points",
            fit.rate, fit.rate_stderr, fit.points
        ),
        start,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names() {
        assert_eq!("all".parse::<Suite>().unwrap().ids().len(), 11);
        assert_eq!("wick".parse::<Suite>().unwrap().ids(), vec![2, 3]);
        assert!("bogus".parse::<Suite>().is_err());
        assert!(run_check(12, Effort::Quick, 0).is_err());
    }

    #[test]
    fn bridge_check_passes() {
        let r = run_check(3, Effort::Quick, 1).unwrap();
        assert!(r.passed, "{}", r.line());
        assert!(r.line().starts_with("PASS criterion  3"));
    }
}
