use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LangevinStepper, SimConfig};
use crate::error::{invalid, Result};
use crate::grid::RealField;
use crate::noise::sample_slab;
use crate::stats::Welford;

/// A scalar time series with a batch-means error estimate for correlated samples.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Series {
    pub values: Vec<f64>,
}

impl Series {
    pub fn push(&mut self, x: f64) {
        self.values.push(x);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }

    /// Standard error from `batches` contiguous batch means.
    pub fn batch_stderr(&self, batches: usize) -> Result<f64> {
        if batches < 2 || self.values.len() < 2 * batches {
            return Err(invalid(format!(
                "batch means need at least 2 batches of 2 samples, have {} samples for {batches} batches",
                self.values.len()
            )));
        }
        let size = self.values.len() / batches;
        let means: Welford = self
            .values
            .chunks_exact(size)
            .take(batches)
            .map(|c| c.iter().sum::<f64>() / size as f64)
            .collect();
        Ok(means.stderr())
    }
}

/// Equilibrium observables accumulated over samples:
/// site second moment `⟨φ(x)^2⟩` (site-averaged), magnetisation `(φ, 1)/|Λ|`,
/// susceptibility `(φ, 1)^2 / |Λ|`, and `E cos((f_j, φ))` for each test function.
#[derive(Clone, Debug, Default)]
pub struct Observables {
    pub phi2: Series,
    pub magnetisation: Series,
    pub susceptibility: Series,
    pub characteristic: Vec<Series>,
    /// Optional norm samples for moment monitoring.
    pub norms: Welford,
}

impl Observables {
    pub fn new(tests: usize) -> Self {
        Observables {
            characteristic: vec![Series::default(); tests],
            ..Default::default()
        }
    }

    /// Values of all observables in a fixed order, with batch-means errors.
    pub fn summary(&self, batches: usize) -> Result<Vec<(String, f64, f64)>> {
        let mut out = vec![
            (
                "phi2".to_string(),
                self.phi2.mean(),
                self.phi2.batch_stderr(batches)?,
            ),
            (
                "magnetisation".to_string(),
                self.magnetisation.mean(),
                self.magnetisation.batch_stderr(batches)?,
            ),
            (
                "susceptibility".to_string(),
                self.susceptibility.mean(),
                self.susceptibility.batch_stderr(batches)?,
            ),
        ];
        for (j, s) in self.characteristic.iter().enumerate() {
            out.push((format!("cos_pair_{j}"), s.mean(), s.batch_stderr(batches)?));
        }
        Ok(out)
    }
}

impl Observables {
    /// Appends `other`'s samples after this one's (keeps batches run-local when
    /// every run contributes the same number of samples).
    pub fn append(&mut self, other: Observables) -> Result<()> {
        if other.characteristic.len() != self.characteristic.len() {
            return Err(invalid(
                "number of test functions does not match the accumulator",
            ));
        }
        self.phi2.values.extend(other.phi2.values);
        self.magnetisation.values.extend(other.magnetisation.values);
        self.susceptibility
            .values
            .extend(other.susceptibility.values);
        for (a, c) in self.characteristic.iter_mut().zip(other.characteristic) {
            a.values.extend(c.values);
        }
        self.norms.merge(&other.norms);
        Ok(())
    }
}

/// Long-run Langevin averages: `runs` independent replicas from zero, each
/// discarding `burn_in` time units and then sampling every `sample_every` until
/// `burn_in + cfg.horizon`.
pub fn langevin_observables(
    cfg: &SimConfig,
    tests: &[RealField],
    runs: usize,
    burn_in: f64,
    sample_every: f64,
) -> Result<Observables> {
    let stepper = LangevinStepper::new(cfg)?;
    let g = &cfg.grid;
    let dt = cfg.dt;
    let every = ((sample_every / dt).round() as usize).max(1);
    let burn = (burn_in / dt).round() as usize;
    let total = burn + cfg.steps();
    let per_run: Vec<Observables> = (0..runs as u64)
        .into_par_iter()
        .map(|r| {
            let mut obs = Observables::new(tests.len());
            let mut phi = RealField::zeros(g);
            for n in 1..=total {
                let slab = sample_slab(&cfg.policy, g, dt, n as u64, r)?;
                stepper.step(&mut phi, &slab.increments, (n - 1) as f64 * dt)?;
                if n > burn && (n - burn).is_multiple_of(every) {
                    observables_update(&mut obs, &phi, tests)?;
                }
            }
            Ok(obs)
        })
        .collect::<Result<_>>()?;
    let mut all = Observables::new(tests.len());
    for o in per_run {
        all.append(o)?;
    }
    Ok(all)
}

pub fn observables_update(
    obs: &mut Observables,
    phi: &RealField,
    tests: &[RealField],
) -> Result<()> {
    if tests.len() != obs.characteristic.len() {
        return Err(invalid(
            "number of test functions does not match the accumulator",
        ));
    }
    let g = phi.grid();
    let sum = phi.integral();
    let vol = g.volume();
    obs.phi2
        .push(phi.values().iter().map(|x| x * x).sum::<f64>() / g.sites() as f64);
    obs.magnetisation.push(sum / vol);
    obs.susceptibility.push(sum * sum / vol);
    for (s, f) in obs.characteristic.iter_mut().zip(tests) {
        g.check_same(f.grid())?;
        s.push(f.pair(phi).cos());
    }
    Ok(())
}
