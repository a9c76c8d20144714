use std::sync::Arc;

use num_complex::Complex64;

use super::{guard, InitialSplit, SimConfig};
use crate::error::Result;
use crate::gaussian::{real_of, spectral_of, OuStepper};
use crate::grid::{RealField, TorusGrid};
use crate::noise::NoiseSlab;
use crate::wick::{hermite, Convention, WickBundle};

/// `φ = Z + v`: the OU part in Fourier (initial datum included) and the remainder.
#[derive(Clone, Debug)]
pub struct DpdState {
    time: f64,
    z_hat: Vec<Complex64>,
    v: RealField,
}

impl DpdState {
    pub fn new(phi0: &RealField, split: InitialSplit) -> Self {
        let grid = phi0.grid();
        match split {
            InitialSplit::OuCarries => DpdState {
                time: 0.0,
                z_hat: spectral_of(phi0),
                v: RealField::zeros(grid),
            },
            InitialSplit::RemainderCarries => DpdState {
                time: 0.0,
                z_hat: vec![Complex64::default(); grid.sites()],
                v: phi0.clone(),
            },
        }
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        self.v.grid()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn v(&self) -> &RealField {
        &self.v
    }

    pub fn z(&self) -> RealField {
        real_of(self.v.grid(), &self.z_hat)
    }

    pub fn phi(&self) -> RealField {
        self.z().add(&self.v)
    }

    /// Fixed-convention Wick powers of `Z` (`:Z^n: = P_n(a, Z)`, which equals the
    /// binomial expansion over the centred part and `e^{-tA} φ0`).
    pub fn wick(&self, a: f64) -> WickBundle {
        let z = self.z();
        crate::wick::wick_centred(
            &z,
            self.time,
            Convention::Fixed,
            &crate::gaussian::Counterterm::new(a),
        )
        .map(|mut b| {
            b.includes_initial = true;
            b
        })
        .expect("fixed convention needs no variance")
    }
}

/// Exponential step `v <- e^{-dt A}(v + dt F(v, Z))` with
/// `F = -μ(v + Z) - λ(v^3 + 3v^2 Z + 3v :Z^2: + :Z^3:)`, then an exact OU step.
#[derive(Clone, Debug)]
pub struct DpdStepper {
    lambda: f64,
    mu: f64,
    a: f64,
    dt: f64,
    guard: f64,
    heat: Vec<f64>,
    ou: OuStepper,
}

impl DpdStepper {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let heat = cfg
            .grid
            .symbols()
            .iter()
            .map(|&q| (-cfg.dt * (q + 1.0)).exp())
            .collect();
        Ok(DpdStepper {
            lambda: cfg.lambda,
            mu: cfg.mu,
            a: cfg.counterterm.value,
            dt: cfg.dt,
            guard: cfg.blowup_guard,
            heat,
            ou: OuStepper::new(&cfg.grid, cfg.dt)?,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Remainder nonlinearity at one site.
    #[inline]
    pub fn forcing(&self, v: f64, z: f64) -> f64 {
        let (z2, z3) = (hermite(z, self.a, 2), hermite(z, self.a, 3));
        -self.mu * (v + z) - self.lambda * (v * v * v + 3.0 * v * v * z + 3.0 * v * z2 + z3)
    }

    pub fn step(&self, state: &mut DpdState, noise: &RealField) -> Result<()> {
        let grid = Arc::clone(state.grid());
        grid.check_same(noise.grid())?;
        let z = state.z();
        let mut data: Vec<Complex64> = state
            .v
            .values()
            .iter()
            .zip(z.values())
            .map(|(&v, &zz)| Complex64::new(v + self.dt * self.forcing(v, zz), 0.0))
            .collect();
        grid.forward_in_place(&mut data);
        for (c, &m) in data.iter_mut().zip(&self.heat) {
            *c *= m;
        }
        grid.inverse_in_place(&mut data);
        let v_new = RealField::from_raw(&grid, data.into_iter().map(|c| c.re).collect());
        guard(
            state.time + self.dt,
            &v_new,
            self.guard,
            state.time,
            &state.phi(),
        )?;
        self.ou.step_spectral(&mut state.z_hat, &spectral_of(noise));
        state.v = v_new;
        state.time += self.dt;
        Ok(())
    }
}

/// One DPD step of `cfg.dt` driven by `slab`.
pub fn dpd_step(cfg: &SimConfig, state: &DpdState, slab: &NoiseSlab) -> Result<DpdState> {
    let stepper = DpdStepper::new(&SimConfig {
        dt: slab.dt,
        ..cfg.clone()
    })?;
    let mut next = state.clone();
    stepper.step(&mut next, &slab.increments)?;
    Ok(next)
}
