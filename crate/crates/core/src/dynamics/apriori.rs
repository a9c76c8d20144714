use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DpdState, DpdStepper, Scheme, SimConfig};
use crate::besov::{holder_norm, NormEngine, Profile, Region};
use crate::error::{invalid, Result};
use crate::grid::RealField;
use crate::noise::sample_slab;

/// Monitor for the local a priori bound
/// `sup_{s≤t} ‖v_s‖_{α',B} ≤ K (1 + sup_s max_n ((s^{nα} ∧ 1) ‖:Z_s^n:‖_{-nα,2B})^{1/n})^η`,
/// `η = (1 + α') / (1 - 3α)`, along DPD runs.
#[derive(Clone, Debug)]
pub struct AprioriConfig {
    pub base: SimConfig,
    pub phi0: RealField,
    pub alpha: f64,
    pub alpha_prime: f64,
    pub ball: Region,
    /// Runs used to fit `K` (replica indices `0..calibration`).
    pub calibration: usize,
    /// Fresh runs on which the fitted `K` is checked.
    pub verification: usize,
    /// `K` is this factor times the largest calibration ratio.
    pub safety: f64,
    pub monitor_every: usize,
    pub profile: Profile,
}

impl AprioriConfig {
    pub fn eta(&self) -> f64 {
        (1.0 + self.alpha_prime) / (1.0 - 3.0 * self.alpha)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AprioriRecord {
    pub replica: u64,
    /// `sup_s ‖v_s‖_{α',B}`.
    pub lhs: f64,
    /// `sup_s max_n (...)^{1/n}`.
    pub driver: f64,
    /// `lhs / (1 + driver)^η`.
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AprioriReport {
    pub eta: f64,
    pub k: f64,
    pub calibration: Vec<AprioriRecord>,
    pub verification: Vec<AprioriRecord>,
    /// Verification replicas whose ratio exceeds `K`.
    pub violations: Vec<u64>,
}

impl AprioriReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.k.is_finite() && self.k > 0.0
    }
}

fn monitor(
    cfg: &AprioriConfig,
    engine: &NormEngine,
    stepper: &DpdStepper,
    replica: u64,
) -> Result<AprioriRecord> {
    let base = &cfg.base;
    let wide = cfg.ball.doubled();
    let a = base.counterterm.value;
    let mut state = DpdState::new(&cfg.phi0, base.split);
    let mut lhs = holder_norm(state.v(), cfg.alpha_prime, &cfg.ball, 1)?;
    let mut driver = 0.0f64;
    for n in 1..=base.steps() {
        let slab = sample_slab(&base.policy, &base.grid, base.dt, n as u64, replica)?;
        stepper.step(&mut state, &slab.increments)?;
        if n % cfg.monitor_every != 0 && n != base.steps() {
            continue;
        }
        lhs = lhs.max(holder_norm(state.v(), cfg.alpha_prime, &cfg.ball, 1)?);
        let s = state.time();
        let wick = state.wick(a);
        for k in 1..=3 {
            let na = k as f64 * cfg.alpha;
            let norm = engine.neg_norm(wick.power(k), na, &wide)?;
            driver = driver.max((s.powf(na).min(1.0) * norm).powf(1.0 / k as f64));
        }
    }
    Ok(AprioriRecord {
        replica,
        lhs,
        driver,
        ratio: lhs / (1.0 + driver).powf(cfg.eta()),
    })
}

/// Fits `K` on the calibration runs and checks it on the verification runs.
pub fn apriori_fit(cfg: &AprioriConfig) -> Result<AprioriReport> {
    if cfg.base.scheme != Scheme::DpdExponential {
        return Err(invalid("the a priori monitor runs on the DPD scheme"));
    }
    if !(cfg.alpha > 0.0 && 3.0 * cfg.alpha < 1.0 && (0.0..1.0).contains(&cfg.alpha_prime)) {
        return Err(invalid("need 0 < alpha < 1/3 and alpha' in [0, 1)"));
    }
    if cfg.calibration == 0 || cfg.monitor_every == 0 || !(cfg.safety >= 1.0) {
        return Err(invalid(
            "need calibration runs, monitor_every >= 1 and safety >= 1",
        ));
    }
    if !matches!(cfg.ball, Region::Ball { .. }) {
        return Err(invalid(
            "the a priori monitor is local: region must be a ball",
        ));
    }
    cfg.base.grid.check_same(cfg.phi0.grid())?;
    let engine = NormEngine::new(&cfg.base.grid, cfg.profile, None)?;
    let stepper = DpdStepper::new(&cfg.base)?;
    let total = (cfg.calibration + cfg.verification) as u64;
    let records: Vec<AprioriRecord> = (0..total)
        .into_par_iter()
        .map(|r| monitor(cfg, &engine, &stepper, r))
        .collect::<Result<_>>()?;
    let (calibration, verification) = records.split_at(cfg.calibration);
    let k = cfg.safety * calibration.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let violations = verification
        .iter()
        .filter(|r| r.ratio > k)
        .map(|r| r.replica)
        .collect();
    Ok(AprioriReport {
        eta: cfg.eta(),
        k,
        calibration: calibration.to_vec(),
        verification: verification.to_vec(),
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;

    #[test]
    fn small_monitor_run_is_finite_and_consistent() {
        let g = TorusGrid::new(2.5, 80).unwrap();
        let base = SimConfig::new(&g, 1.0, 0.0, 0.02, 0.2, Scheme::DpdExponential, 5).unwrap();
        let cfg = AprioriConfig {
            phi0: RealField::zeros(&g),
            base,
            alpha: 0.1,
            alpha_prime: 0.5,
            ball: Region::Ball {
                centre: [0.0, 0.0],
                radius: 1.0,
            },
            calibration: 2,
            verification: 2,
            safety: 2.0,
            monitor_every: 2,
            profile: Profile::default(),
        };
        let rep = apriori_fit(&cfg).unwrap();
        assert!((rep.eta - 1.5 / 0.7).abs() < 1e-12);
        assert_eq!(rep.calibration.len() + rep.verification.len(), 4);
        for r in rep.calibration.iter().chain(&rep.verification) {
            assert!(r.lhs > 0.0 && r.driver > 0.0 && r.ratio.is_finite());
        }
        let bad = AprioriConfig { alpha: 0.4, ..cfg };
        assert!(apriori_fit(&bad).is_err());
    }
}
