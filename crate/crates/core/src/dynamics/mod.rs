//! Time stepping for the renormalised φ⁴ dynamics
//!
//! ```text
//! dφ = (Δφ - (1 + μ)φ - λ(φ^3 - 3aφ)) dt + sqrt(2) dW
//! ```
//!
//! with `a` the fixed counterterm. Two independent discretisations:
//! the Da Prato–Debussche split `φ = Z + v` with an exact OU part and an
//! exponential (Lawson/ETD1) step for `v`, and the lattice Langevin SDE of the
//! Hamiltonian
//!
//! ```text
//! H(φ) = ½ h^2 Σ |∇_h φ|^2 + (λ/4) h^2 Σ φ^4 + ((1 + μ - 3λa)/2) h^2 Σ φ^2
//! ```
//!
//! stepped by Euler–Maruyama or by an exponential integrator. MALA samples
//! `e^{-H}` exactly and serves as the equilibrium reference.

mod apriori;
mod coupled;
mod dpd;
mod langevin;
mod mala;
mod observables;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use apriori::{apriori_fit, AprioriConfig, AprioriRecord, AprioriReport};
pub use coupled::{coupled_run, CoupledConfig, CoupledReport, VolumeRow};
pub use dpd::{dpd_step, DpdState, DpdStepper};
pub use langevin::{hamiltonian, hamiltonian_drift, langevin_step, LangevinStepper};
pub use mala::{mala_sample, MalaConfig, MalaRun};
pub use observables::{langevin_observables, observables_update, Observables, Series};

use crate::error::{invalid, Error, Result};
use crate::gaussian::Counterterm;
use crate::grid::{RealField, TorusGrid};
use crate::noise::{sample_slab, RngPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    DpdExponential,
    LangevinEuler,
    LangevinExponential,
}

/// How `φ0` is shared between the OU part and the remainder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitialSplit {
    /// `Z_0 = φ0`, `v_0 = 0`.
    #[default]
    OuCarries,
    /// `Z_0 = 0`, `v_0 = φ0`.
    RemainderCarries,
}

pub const DEFAULT_BLOWUP_GUARD: f64 = 1e6;

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub lambda: f64,
    pub mu: f64,
    pub dt: f64,
    pub horizon: f64,
    pub scheme: Scheme,
    pub grid: Arc<TorusGrid>,
    pub policy: RngPolicy,
    pub counterterm: Counterterm,
    pub split: InitialSplit,
    pub blowup_guard: f64,
}

impl SimConfig {
    /// Configuration with the reference counterterm of `grid` and default guard.
    pub fn new(
        grid: &Arc<TorusGrid>,
        lambda: f64,
        mu: f64,
        dt: f64,
        horizon: f64,
        scheme: Scheme,
        seed: u64,
    ) -> Result<Self> {
        let cfg = SimConfig {
            lambda,
            mu,
            dt,
            horizon,
            scheme,
            grid: Arc::clone(grid),
            policy: RngPolicy::new(seed),
            counterterm: Counterterm::reference(grid),
            split: InitialSplit::default(),
            blowup_guard: DEFAULT_BLOWUP_GUARD,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `λ = 0` is accepted as the Gaussian reduction; negative `λ` is not.
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda must be positive"));
        }
        if !self.mu.is_finite() {
            return Err(invalid("mu must be finite"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt must be positive"));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon must be nonnegative"));
        }
        if self.scheme == Scheme::LangevinEuler && self.dt >= self.grid.cell_area() / 4.0 {
            return Err(invalid(format!(
                "euler scheme needs dt < spacing^2 / 4 = {}",
                self.grid.cell_area() / 4.0
            )));
        }
        if !(self.blowup_guard > 0.0) {
            return Err(invalid("blow-up guard must be positive"));
        }
        Ok(())
    }

    /// Linear coefficient `1 + μ - 3λa` of the lattice Hamiltonian.
    pub fn effective_mass(&self) -> f64 {
        1.0 + self.mu - 3.0 * self.lambda * self.counterterm.value
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Rejects a new state whose sup norm exceeds the guard, returning the last
/// state that passed.
pub(crate) fn guard(
    time: f64,
    candidate: &RealField,
    guard: f64,
    last_time: f64,
    last: &RealField,
) -> Result<()> {
    let sup = candidate.sup_norm();
    if sup > guard || !sup.is_finite() {
        return Err(Error::BlowUp {
            time,
            sup_norm: sup,
            guard,
            last_good: Box::new((last_time, last.values().to_vec())),
        });
    }
    Ok(())
}

/// Any of the three schemes, behind one interface.
pub enum Stepper {
    Dpd(DpdStepper, DpdState),
    Langevin(LangevinStepper, RealField, f64),
}

impl Stepper {
    pub fn new(cfg: &SimConfig, phi0: &RealField) -> Result<Self> {
        cfg.validate()?;
        cfg.grid.check_same(phi0.grid())?;
        Ok(match cfg.scheme {
            Scheme::DpdExponential => {
                Stepper::Dpd(DpdStepper::new(cfg)?, DpdState::new(phi0, cfg.split))
            }
            Scheme::LangevinEuler | Scheme::LangevinExponential => {
                Stepper::Langevin(LangevinStepper::new(cfg)?, phi0.clone(), 0.0)
            }
        })
    }

    pub fn time(&self) -> f64 {
        match self {
            Stepper::Dpd(_, s) => s.time(),
            Stepper::Langevin(_, _, t) => *t,
        }
    }

    pub fn phi(&self) -> RealField {
        match self {
            Stepper::Dpd(_, s) => s.phi(),
            Stepper::Langevin(_, p, _) => p.clone(),
        }
    }

    pub fn advance(&mut self, noise: &RealField) -> Result<()> {
        match self {
            Stepper::Dpd(st, s) => st.step(s, noise),
            Stepper::Langevin(st, p, t) => {
                st.step(p, noise, *t)?;
                *t += st.dt();
                Ok(())
            }
        }
    }
}

/// Runs one replica to the horizon, calling `visit(step, time, φ)` after each step
/// (and once for the initial state at step 0).
pub fn run_trajectory(
    cfg: &SimConfig,
    phi0: &RealField,
    replica: u64,
    mut visit: impl FnMut(usize, f64, &RealField),
) -> Result<RealField> {
    let mut stepper = Stepper::new(cfg, phi0)?;
    visit(0, 0.0, phi0);
    for n in 1..=cfg.steps() {
        let slab = sample_slab(&cfg.policy, &cfg.grid, cfg.dt, n as u64, replica)?;
        stepper.advance(&slab.increments)?;
        let phi = stepper.phi();
        visit(n, stepper.time(), &phi);
    }
    Ok(stepper.phi())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_messages() {
        let g = TorusGrid::new(1.0, 16).unwrap();
        let err = SimConfig::new(&g, -1.0, 0.0, 1e-3, 1.0, Scheme::DpdExponential, 0).unwrap_err();
        assert!(err.to_string().contains("lambda must be positive"));
        assert!(SimConfig::new(&g, 0.0, 0.0, 1e-3, 1.0, Scheme::DpdExponential, 0).is_ok());
        assert!(SimConfig::new(&g, 1.0, 0.0, 0.01, 1.0, Scheme::LangevinEuler, 0).is_err());
        assert!(SimConfig::new(&g, 1.0, 0.0, 0.001, 1.0, Scheme::LangevinEuler, 0).is_ok());
    }

    #[test]
    fn trajectory_visits_every_step() {
        let g = TorusGrid::new(1.0, 8).unwrap();
        let cfg = SimConfig::new(&g, 1.0, 0.0, 0.01, 0.1, Scheme::DpdExponential, 3).unwrap();
        let mut seen = Vec::new();
        run_trajectory(&cfg, &RealField::zeros(&g), 0, |n, _, _| seen.push(n)).unwrap();
        assert_eq!(seen, (0..=10).collect::<Vec<_>>());
    }
}
