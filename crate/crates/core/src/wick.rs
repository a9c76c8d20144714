//! Wick powers on the lattice via the Hermite polynomials
//! `P_n(a, x) = e^{-(a/2) d^2/dx^2} x^n`.
//!
//! Two conventions: *homogeneous* (`::Z~^n::`) subtracts the exact site
//! variance of the centred field at the current time and volume; *fixed*
//! (`:Z~^n:`) subtracts the time- and volume-independent reference
//! counterterm. They differ by `f = Var - a`:
//!
//! ```text
//! :Z~^2: = ::Z~^2:: + f,   :Z~^3: = ::Z~^3:: + 3 f Z~,   :Z~^4: = ::Z~^4:: + 6 f ::Z~^2:: + 3 f^2
//! ```

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gaussian::{counterterm_variance, Counterterm};
use crate::grid::{heat_semigroup, RealField, TorusGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    Homogeneous,
    Fixed,
}

/// `P_n(a, x)` for `n = 0..=4` without range checks.
#[inline]
pub fn hermite(x: f64, a: f64, n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        2 => x * x - a,
        3 => x * (x * x - 3.0 * a),
        4 => {
            let x2 = x * x;
            x2 * x2 - 6.0 * a * x2 + 3.0 * a * a
        }
        _ => f64::NAN,
    }
}

pub fn hermite_apply(x: f64, a: f64, n: usize) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(invalid(format!("Wick power must be in 1..=4, got {n}")));
    }
    Ok(hermite(x, a, n))
}

const BINOM: [[f64; 5]; 5] = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, 2.0, 1.0, 0.0, 0.0],
    [1.0, 3.0, 3.0, 1.0, 0.0],
    [1.0, 4.0, 6.0, 4.0, 1.0],
];

/// Wick powers `n = 1..=4` of a Gaussian field at time `t`.
#[derive(Clone, Debug)]
pub struct WickBundle {
    pub time: f64,
    pub convention: Convention,
    /// Counterterm subtracted from the centred field.
    pub counterterm: f64,
    /// Whether the powers are those of `Z = e^{-tA} phi0 + Z~` rather than of `Z~`.
    pub includes_initial: bool,
    powers: [RealField; 4],
}

impl WickBundle {
    pub fn grid(&self) -> &Arc<TorusGrid> {
        self.powers[0].grid()
    }

    /// `:Z^n:`, `n` in `1..=4`.
    pub fn power(&self, n: usize) -> &RealField {
        &self.powers[n - 1]
    }

    pub fn z(&self) -> &RealField {
        &self.powers[0]
    }

    pub fn z2(&self) -> &RealField {
        &self.powers[1]
    }

    pub fn z3(&self) -> &RealField {
        &self.powers[2]
    }

    pub fn z4(&self) -> &RealField {
        &self.powers[3]
    }

    fn from_hermite(z: &RealField, a: f64, time: f64, convention: Convention) -> Self {
        let powers = [1, 2, 3, 4].map(|n| z.map(|x| hermite(x, a, n)));
        WickBundle {
            time,
            convention,
            counterterm: a,
            includes_initial: false,
            powers,
        }
    }

    /// Re-expresses homogeneous powers in the fixed convention through the
    /// bridge `f = a_hom - a_ref`.
    pub fn to_fixed(&self, a_ref: &Counterterm) -> Result<WickBundle> {
        if self.convention != Convention::Homogeneous || self.includes_initial {
            return Err(invalid(
                "the bridge applies to homogeneous powers of the centred field",
            ));
        }
        let f = self.counterterm - a_ref.value;
        let [z, z2, z3, z4] = &self.powers;
        Ok(WickBundle {
            time: self.time,
            convention: Convention::Fixed,
            counterterm: a_ref.value,
            includes_initial: false,
            powers: [
                z.clone(),
                z2.map(|v| v + f),
                z3.zip_map(z, |c, x| c + 3.0 * f * x),
                z4.zip_map(z2, |q, s| q + 6.0 * f * s + 3.0 * f * f),
            ],
        })
    }
}

/// Wick powers of the centred field `z` at time `t`.
pub fn wick_centred(
    z: &RealField,
    t: f64,
    convention: Convention,
    a_ref: &Counterterm,
) -> Result<WickBundle> {
    let a = match convention {
        Convention::Homogeneous => counterterm_variance(t, z.grid())?,
        Convention::Fixed => a_ref.value,
    };
    Ok(WickBundle::from_hermite(z, a, t, convention))
}

/// Powers of `Z = e^{-tA} phi0 + Z~` from those of `Z~`:
/// `:Z^n: = sum_l C(n, l) :Z~^l: (e^{-tA} phi0)^{n-l}`.
pub fn wick_with_ic(bundle: &WickBundle, phi0: &RealField, t: f64) -> Result<WickBundle> {
    if !(t > 0.0) {
        return Err(invalid(format!("time must be positive, got {t}")));
    }
    if bundle.includes_initial {
        return Err(invalid("bundle already includes the initial condition"));
    }
    if (bundle.time - t).abs() > 1e-12 * t.max(1.0) {
        return Err(Error::GridMismatch(format!(
            "bundle at t = {}, requested t = {t}",
            bundle.time
        )));
    }
    bundle.grid().check_same(phi0.grid())?;
    let m = heat_semigroup(phi0, t)?;
    let powers = [1, 2, 3, 4].map(|n| binomial_combine(&m, bundle, n));
    Ok(WickBundle {
        time: t,
        convention: bundle.convention,
        counterterm: bundle.counterterm,
        includes_initial: true,
        powers,
    })
}

fn binomial_combine(shift: &RealField, bundle: &WickBundle, n: usize) -> RealField {
    let s = shift.values();
    let values = (0..s.len())
        .map(|i| {
            let mut acc = s[i].powi(n as i32);
            for l in 1..=n {
                acc += BINOM[n][l] * bundle.powers[l - 1].values()[i] * s[i].powi((n - l) as i32);
            }
            acc
        })
        .collect();
    RealField::from_raw(shift.grid(), values)
}

/// `:phi^n: = sum_l C(n, l) :Z^l: v^{n-l}` for `phi = Z + v` at time `t`.
pub fn wick_of_phi(v: &RealField, bundle: &WickBundle, n: usize, t: f64) -> Result<RealField> {
    if !(1..=4).contains(&n) {
        return Err(invalid(format!("Wick power must be in 1..=4, got {n}")));
    }
    if (bundle.time - t).abs() > 1e-12 * t.abs().max(1.0) {
        return Err(invalid(format!(
            "bundle stamped t = {}, field stamped t = {t}",
            bundle.time
        )));
    }
    bundle.grid().check_same(v.grid())?;
    Ok(binomial_combine(v, bundle, n))
}
