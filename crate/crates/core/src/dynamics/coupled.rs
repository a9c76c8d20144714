use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DpdState, DpdStepper, SimConfig};
use crate::error::{invalid, Error, Result};
use crate::grid::{RealField, TorusGrid};
use crate::noise::{periodise_initial, restrict, sample_slab, subgrid, support_radius, Cutoff};
use crate::stats::Welford;

/// Finite-volume comparison on a master torus (`base.grid`) and nested sub-tori,
/// all driven by one noise realisation per replica.
#[derive(Clone, Debug)]
pub struct CoupledConfig {
    pub base: SimConfig,
    pub phi0: RealField,
    pub sub_half_lengths: Vec<f64>,
    /// Recording times; each must be a multiple of `base.dt`.
    pub times: Vec<f64>,
    pub tests: Vec<RealField>,
    pub replicas: usize,
    pub cutoff: Cutoff,
}

/// `Δ = |Ê e^{i(f,φ_t)} - Ê e^{i(f,φ^L_t)}|` and the pathwise `E|(φ_t - φ^L_t, f)|`
/// for one sub-torus, time and test function.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct VolumeRow {
    pub half_length: f64,
    pub t: f64,
    pub test: usize,
    pub delta: f64,
    pub delta_stderr: f64,
    pub pathwise: f64,
    pub pathwise_stderr: f64,
    /// `E (φ_t - φ^L_t, f)^2`.
    pub pathwise_sq: f64,
    pub pathwise_sq_stderr: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoupledReport {
    pub rows: Vec<VolumeRow>,
    pub replicas: usize,
}

impl CoupledReport {
    pub fn row(&self, half_length: f64, t: f64, test: usize) -> Option<&VolumeRow> {
        self.rows
            .iter()
            .find(|r| r.half_length == half_length && (r.t - t).abs() < 1e-12 && r.test == test)
    }
}

#[derive(Clone, Copy, Default)]
struct Acc {
    re: Welford,
    im: Welford,
    abs: Welford,
    sq: Welford,
}

/// Runs the coupled DPD dynamics. The master is the `L_max` run (with the
/// periodised initial condition at `L_max`), so `Δ(L_max) = 0` identically.
/// The sub-torus pairing uses the restriction of `f`, which must be supported
/// well inside the smallest box.
pub fn coupled_run(cfg: &CoupledConfig) -> Result<CoupledReport> {
    let master = &cfg.base.grid;
    master.check_same(cfg.phi0.grid())?;
    if cfg.sub_half_lengths.is_empty()
        || cfg.times.is_empty()
        || cfg.tests.is_empty()
        || cfg.replicas < 2
    {
        return Err(invalid(
            "need sub-tori, times, test functions and at least two replicas",
        ));
    }
    let min_l = cfg
        .sub_half_lengths
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    for f in &cfg.tests {
        master.check_same(f.grid())?;
        let reach = support_radius(f);
        if reach > 2.0 / 3.0 * min_l {
            return Err(Error::SupportViolation(format!(
                "test function reaches |x|_inf = {reach}, must stay within (2/3) L = {}",
                2.0 / 3.0 * min_l
            )));
        }
    }
    let dt = cfg.base.dt;
    let checkpoints: Vec<usize> = cfg
        .times
        .iter()
        .map(|&t| {
            let n = (t / dt).round();
            if n < 1.0 || (n * dt - t).abs() > 1e-9 * t.max(1.0) {
                Err(invalid(format!(
                    "time {t} is not a positive multiple of dt = {dt}"
                )))
            } else {
                Ok(n as usize)
            }
        })
        .collect::<Result<_>>()?;
    let n_steps = *checkpoints.iter().max().expect("non-empty");

    let subs: Vec<Arc<TorusGrid>> = cfg
        .sub_half_lengths
        .iter()
        .map(|&l| subgrid(master, l))
        .collect::<Result<_>>()?;
    let l_max = master.half_length();
    let master_phi0 = periodise_initial(&cfg.phi0, l_max, &cfg.cutoff)?;
    let sub_phi0: Vec<RealField> = cfg
        .sub_half_lengths
        .iter()
        .map(|&l| periodise_initial(&cfg.phi0, l, &cfg.cutoff))
        .collect::<Result<_>>()?;
    let sub_tests: Vec<Vec<RealField>> = subs
        .iter()
        .map(|s| {
            cfg.tests
                .iter()
                .map(|f| restrict(f, s))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    let master_stepper = DpdStepper::new(&cfg.base)?;
    let sub_steppers: Vec<DpdStepper> = subs
        .iter()
        .map(|s| {
            DpdStepper::new(&SimConfig {
                grid: Arc::clone(s),
                ..cfg.base.clone()
            })
        })
        .collect::<Result<_>>()?;

    let (nsub, ntime, ntest) = (subs.len(), checkpoints.len(), cfg.tests.len());
    let slot = |s: usize, c: usize, f: usize| (s * ntime + c) * ntest + f;
    let merged = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<Acc>> {
            let mut acc = vec![Acc::default(); nsub * ntime * ntest];
            let mut ms = DpdState::new(&master_phi0, cfg.base.split);
            let mut ss: Vec<DpdState> = sub_phi0
                .iter()
                .map(|p| DpdState::new(p, cfg.base.split))
                .collect();
            for n in 1..=n_steps {
                let slab = sample_slab(&cfg.base.policy, master, dt, n as u64, r as u64)?;
                master_stepper.step(&mut ms, &slab.increments)?;
                for (si, sub) in subs.iter().enumerate() {
                    if sub.same_as(master) {
                        continue;
                    }
                    let w = restrict(&slab.increments, sub)?;
                    sub_steppers[si].step(&mut ss[si], &w)?;
                }
                for (ci, _) in checkpoints.iter().enumerate().filter(|(_, &c)| c == n) {
                    let pm = ms.phi();
                    for (si, sub) in subs.iter().enumerate() {
                        let ps = if sub.same_as(master) {
                            None
                        } else {
                            Some(ss[si].phi())
                        };
                        for (fi, f) in cfg.tests.iter().enumerate() {
                            let x = f.pair(&pm);
                            let y = match &ps {
                                None => x,
                                Some(p) => sub_tests[si][fi].pair(p),
                            };
                            let a = &mut acc[slot(si, ci, fi)];
                            a.re.push(x.cos() - y.cos());
                            a.im.push(x.sin() - y.sin());
                            a.abs.push((x - y).abs());
                            a.sq.push((x - y) * (x - y));
                        }
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?
        // merged in replica order so the output does not depend on thread scheduling
        .into_iter()
        .fold(vec![Acc::default(); nsub * ntime * ntest], |mut a, b| {
            for (x, y) in a.iter_mut().zip(&b) {
                x.re.merge(&y.re);
                x.im.merge(&y.im);
                x.abs.merge(&y.abs);
                x.sq.merge(&y.sq);
            }
            a
        });

    let mut rows = Vec::with_capacity(merged.len());
    for (si, &l) in cfg.sub_half_lengths.iter().enumerate() {
        for (ci, &t) in cfg.times.iter().enumerate() {
            for fi in 0..ntest {
                let a = &merged[slot(si, ci, fi)];
                let (re, im) = (a.re.mean(), a.im.mean());
                let delta = re.hypot(im);
                // delta-method error of |mean|; falls back to the componentwise bound at 0
                let delta_stderr = if delta > 0.0 {
                    ((re * a.re.stderr()).powi(2) + (im * a.im.stderr()).powi(2)).sqrt() / delta
                } else {
                    a.re.stderr().hypot(a.im.stderr())
                };
                rows.push(VolumeRow {
                    half_length: l,
                    t,
                    test: fi,
                    delta,
                    delta_stderr,
                    pathwise: a.abs.mean(),
                    pathwise_stderr: a.abs.stderr(),
                    pathwise_sq: a.sq.mean(),
                    pathwise_sq_stderr: a.sq.stderr(),
                });
            }
        }
    }
    Ok(CoupledReport {
        rows,
        replicas: cfg.replicas,
    })
}
