use std::sync::Arc;

use rand::Rng;

use super::langevin::drift_into;
use crate::error::{invalid, Result};
use crate::grid::{RealField, TorusGrid};
use crate::noise::{fill_normals, RngPolicy, StreamKind};

/// Metropolis-adjusted Langevin sampler for `e^{-H}`.
#[derive(Clone, Debug)]
pub struct MalaConfig {
    pub grid: Arc<TorusGrid>,
    pub lambda: f64,
    /// Linear coefficient of `H` (already including any counterterm).
    pub mass: f64,
    /// Initial step size `τ` in `y = x + τ D(x) + sqrt(2τ) ξ / h`.
    pub tau: f64,
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
    pub chains: u64,
    pub policy: RngPolicy,
}

impl MalaConfig {
    pub fn new(grid: &Arc<TorusGrid>, lambda: f64, mass: f64, samples: usize, seed: u64) -> Self {
        MalaConfig {
            grid: Arc::clone(grid),
            lambda,
            mass,
            tau: 0.1 * grid.cell_area(),
            burn_in: 2_000,
            samples,
            thin: 5,
            chains: 4,
            policy: RngPolicy::new(seed),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MalaRun {
    /// Post-burn-in acceptance rate per chain.
    pub acceptance: Vec<f64>,
    /// Step size frozen at the end of burn-in, per chain.
    pub tau: Vec<f64>,
}

const TARGET_ACCEPTANCE: f64 = 0.574;

/// Runs `cfg.chains` independent chains; `visit(chain, index, φ)` sees every
/// `thin`-th state after burn-in. The step size is tuned towards 57.4%
/// acceptance during burn-in only, so the sampling phase is exactly reversible.
pub fn mala_sample(
    cfg: &MalaConfig,
    mut visit: impl FnMut(u64, usize, &RealField),
) -> Result<MalaRun> {
    if !(cfg.tau > 0.0) || cfg.thin == 0 || cfg.chains == 0 {
        return Err(invalid(
            "mala needs tau > 0, thin >= 1 and at least one chain",
        ));
    }
    let g = &cfg.grid;
    let (n, h) = (g.n(), g.spacing());
    let sites = g.sites();
    let h2 = g.cell_area();
    let energy =
        |x: &[f64]| super::hamiltonian(&RealField::from_raw(g, x.to_vec()), cfg.lambda, cfg.mass);
    let mut run = MalaRun {
        acceptance: Vec::new(),
        tau: Vec::new(),
    };
    for chain in 0..cfg.chains {
        let mut x = vec![0.0; sites];
        let mut dx = vec![0.0; sites];
        drift_into(&x, n, h, cfg.lambda, cfg.mass, &mut dx);
        let mut hx = energy(&x);
        let mut y = vec![0.0; sites];
        let mut dy = vec![0.0; sites];
        let mut xi = vec![0.0; sites];
        let mut tau = cfg.tau;
        let (mut window_acc, mut window) = (0u32, 0u32);
        let mut accepted = 0usize;
        let total = cfg.burn_in + cfg.samples * cfg.thin;
        let chain_policy = cfg.policy.derive(chain);
        for step in 0..total {
            let mut rng = chain_policy.stream(StreamKind::Proposal, chain, step as u64);
            fill_normals(&mut rng, &mut xi, 1.0);
            let s = (2.0 * tau).sqrt() / h;
            for k in 0..sites {
                y[k] = x[k] + tau * dx[k] + s * xi[k];
            }
            drift_into(&y, n, h, cfg.lambda, cfg.mass, &mut dy);
            let hy = energy(&y);
            // log q(a|b) = -h^2 |a - b - τ D(b)|^2 / (4τ): per-site proposal variance 2τ/h^2.
            let mut fwd = 0.0;
            let mut bwd = 0.0;
            for k in 0..sites {
                let f = y[k] - x[k] - tau * dx[k];
                let b = x[k] - y[k] - tau * dy[k];
                fwd += f * f;
                bwd += b * b;
            }
            let log_alpha = hx - hy + h2 * (fwd - bwd) / (4.0 * tau);
            let u: f64 = rng.random();
            let accept = log_alpha >= 0.0 || u.ln() < log_alpha;
            if accept {
                std::mem::swap(&mut x, &mut y);
                std::mem::swap(&mut dx, &mut dy);
                hx = hy;
            }
            if step < cfg.burn_in {
                window += 1;
                window_acc += accept as u32;
                if window == 50 {
                    let rate = window_acc as f64 / window as f64;
                    tau *= (2.0 * (rate - TARGET_ACCEPTANCE)).exp();
                    window = 0;
                    window_acc = 0;
                }
            } else {
                accepted += accept as usize;
                let k = step - cfg.burn_in;
                if (k + 1).is_multiple_of(cfg.thin) {
                    visit(chain, k / cfg.thin, &RealField::from_raw(g, x.clone()));
                }
            }
        }
        let rate = accepted as f64 / (cfg.samples * cfg.thin).max(1) as f64;
        if !(0.05..=0.99).contains(&rate) {
            log::warn!("mala chain {chain}: acceptance {rate:.3} outside [0.05, 0.99]");
        }
        run.acceptance.push(rate);
        run.tau.push(tau);
    }
    Ok(run)
}
