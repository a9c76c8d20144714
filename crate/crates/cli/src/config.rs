//! TOML experiment configuration.
//!
//! Parsing reports the dotted path of the offending key; semantic validation
//! collects every problem before giving up.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use phi4_core::besov::Profile;
use phi4_core::noise::{compact_bump, gaussian_bump};
use phi4_core::{Laplacian, RealField, Scheme, TorusGrid};
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub struct ConfigError {
    pub problems: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for p in &self.problems {
            writeln!(f, "  {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

pub fn one(problem: impl Into<String>) -> ConfigError {
    ConfigError {
        problems: vec![problem.into()],
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_experiment")]
    pub experiment: String,
    pub model: Model,
    pub grid: GridSpec,
    #[serde(default)]
    pub run: Run,
    #[serde(default)]
    pub initial: Initial,
    #[serde(default)]
    pub tests: Vec<TestFunction>,
    #[serde(default)]
    pub propagation: Propagation,
    #[serde(default)]
    pub entropy: EntropySection,
    #[serde(default)]
    pub invariance: Invariance,
    #[serde(default)]
    pub norms: Norms,
}

fn default_experiment() -> String {
    "phi4".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Model {
    pub lambda: f64,
    pub mu: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LaplacianSpec {
    #[default]
    Spectral,
    FiniteDifference,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub half_length: f64,
    pub n: usize,
    #[serde(default)]
    pub laplacian: LaplacianSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Run {
    pub dt: f64,
    pub horizon: f64,
    pub scheme: Scheme,
    pub seed: u64,
    pub replicas: usize,
    /// Snapshot cadence in steps (0: no snapshots).
    pub snapshot_every: usize,
    pub observables_every: usize,
    pub blowup_guard: f64,
    /// Wall-clock budget recorded in the manifest; exceeding it is logged.
    pub budget_seconds: Option<f64>,
}

impl Default for Run {
    fn default() -> Self {
        Run {
            dt: 0.01,
            horizon: 1.0,
            scheme: Scheme::DpdExponential,
            seed: 0,
            replicas: 1,
            snapshot_every: 0,
            observables_every: 1,
            blowup_guard: phi4_core::dynamics::DEFAULT_BLOWUP_GUARD,
            budget_seconds: None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Initial {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    Bump {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        centre: [f64; 2],
    },
    Snapshot {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TestFunction {
    Gaussian {
        #[serde(default)]
        centre: [f64; 2],
        width: f64,
        #[serde(default = "unit")]
        amplitude: f64,
    },
    Compact {
        #[serde(default)]
        centre: [f64; 2],
        radius: f64,
        #[serde(default)]
        wave: [f64; 2],
        #[serde(default = "unit")]
        amplitude: f64,
    },
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Propagation {
    pub sub_half_lengths: Vec<f64>,
    pub times: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntropySection {
    pub t: f64,
    pub gff_samples: usize,
}

impl Default for EntropySection {
    fn default() -> Self {
        EntropySection {
            t: 1.0,
            gff_samples: 2_000,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Invariance {
    /// Two step sizes `d` and `d/2` for the linear extrapolation.
    pub dts: Vec<f64>,
    pub burn_in: f64,
    pub horizon: f64,
    pub sample_every: f64,
    pub mala_samples: usize,
    pub mala_thin: usize,
    pub mala_chains: u64,
}

impl Default for Invariance {
    fn default() -> Self {
        Invariance {
            dts: vec![0.02, 0.01],
            burn_in: 10.0,
            horizon: 100.0,
            sample_every: 0.1,
            mala_samples: 4_000,
            mala_thin: 10,
            mala_chains: 4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Norms {
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub samples: usize,
    pub heat_times: Vec<f64>,
    pub profile: Profile,
    pub embedding_p: f64,
}

impl Default for Norms {
    fn default() -> Self {
        Norms {
            alpha: 0.3,
            beta: 0.5,
            sigma: 1.0,
            samples: 50,
            heat_times: vec![0.01, 0.03, 0.1, 0.3],
            profile: Profile::default(),
            embedding_p: 4.0,
        }
    }
}

pub fn parse(text: &str) -> Result<Config, ConfigError> {
    let de =
        toml::Deserializer::parse(text).map_err(|e| one(format!("syntax: {}", e.message())))?;
    let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let msg = e.into_inner().message().to_string();
        one(if path == "." {
            msg
        } else {
            format!("{path}: {msg}")
        })
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<Config, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| one(format!("{}: {e}", path.display())))?;
    parse(&text)
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut p = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                p.push(msg.to_string());
            }
        };
        need(
            self.model.lambda >= 0.0 && self.model.lambda.is_finite(),
            "model.lambda: lambda must be positive",
        );
        need(self.model.mu.is_finite(), "model.mu: must be finite");
        need(
            self.grid.half_length > 0.0 && self.grid.half_length.is_finite(),
            "grid.half_length: must be positive",
        );
        need(
            self.grid.n >= 2 && self.grid.n.is_multiple_of(2),
            "grid.n: must be even and at least 2",
        );
        need(
            self.run.dt > 0.0 && self.run.dt.is_finite(),
            "run.dt: must be positive",
        );
        need(
            self.run.horizon >= 0.0 && self.run.horizon.is_finite(),
            "run.horizon: must be nonnegative",
        );
        need(self.run.replicas >= 1, "run.replicas: must be at least 1");
        need(
            self.run.observables_every >= 1,
            "run.observables_every: must be at least 1",
        );
        need(
            self.run.blowup_guard > 0.0,
            "run.blowup_guard: must be positive",
        );
        need(
            self.run.budget_seconds.is_none_or(|b| b > 0.0),
            "run.budget_seconds: must be positive",
        );
        need(
            self.propagation
                .sub_half_lengths
                .iter()
                .all(|&l| l > 0.0 && l <= self.grid.half_length),
            "propagation.sub_half_lengths: must lie in (0, grid.half_length]",
        );
        need(
            self.propagation.times.iter().all(|&t| t > 0.0),
            "propagation.times: must be positive",
        );
        need(self.entropy.t > 0.0, "entropy.t: must be positive");
        need(
            self.entropy.gff_samples >= 2,
            "entropy.gff_samples: must be at least 2",
        );
        need(
            self.invariance.dts.len() == 2
                && self.invariance.dts.iter().all(|&d| d > 0.0)
                && (self.invariance.dts[0] - 2.0 * self.invariance.dts[1]).abs() < 1e-12,
            "invariance.dts: must be [d, d/2] with d > 0",
        );
        need(
            self.invariance.horizon > 0.0 && self.invariance.burn_in >= 0.0,
            "invariance.horizon: must be positive",
        );
        need(
            self.invariance.sample_every > 0.0,
            "invariance.sample_every: must be positive",
        );
        need(
            self.invariance.mala_chains >= 1 && self.invariance.mala_thin >= 1,
            "invariance.mala_chains: must be at least 1",
        );
        need(
            self.norms.alpha > 0.0 && self.norms.alpha < self.norms.beta && self.norms.beta < 1.0,
            "norms.alpha: need 0 < alpha < beta < 1",
        );
        need(self.norms.samples >= 2, "norms.samples: must be at least 2");
        need(
            self.norms.embedding_p >= 1.0,
            "norms.embedding_p: must be at least 1",
        );
        for (i, t) in self.tests.iter().enumerate() {
            let ok = match *t {
                TestFunction::Gaussian { width, .. } => width > 0.0,
                TestFunction::Compact { radius, .. } => radius > 0.0,
            };
            need(ok, &format!("tests[{i}]: width/radius must be positive"));
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { problems: p })
        }
    }

    pub fn grid(&self) -> Result<Arc<TorusGrid>, ConfigError> {
        let lap = match self.grid.laplacian {
            LaplacianSpec::Spectral => Laplacian::Spectral,
            LaplacianSpec::FiniteDifference => Laplacian::FiniteDifference,
        };
        TorusGrid::with_laplacian(self.grid.half_length, self.grid.n, lap)
            .map_err(|e| one(format!("grid: {e}")))
    }

    pub fn initial(&self, grid: &Arc<TorusGrid>) -> Result<RealField, ConfigError> {
        Ok(match &self.initial {
            Initial::Zero => RealField::zeros(grid),
            Initial::Constant { value } => RealField::constant(grid, *value),
            Initial::Bump {
                amplitude,
                width,
                centre,
            } => gaussian_bump(grid, *centre, *width).scale(*amplitude),
            Initial::Snapshot { path } => {
                let file =
                    std::fs::File::open(path).map_err(|e| one(format!("initial.path: {e}")))?;
                let f = phi4_core::grid::read_snapshot(std::io::BufReader::new(file))
                    .map_err(|e| one(format!("initial.path: {e}")))?;
                if !f.grid().same_as(grid) {
                    return Err(one("initial.path: snapshot grid differs from [grid]"));
                }
                f
            }
        })
    }

    pub fn tests(&self, grid: &Arc<TorusGrid>) -> Vec<RealField> {
        self.tests
            .iter()
            .map(|t| match *t {
                TestFunction::Gaussian {
                    centre,
                    width,
                    amplitude,
                } => gaussian_bump(grid, centre, width).scale(amplitude),
                TestFunction::Compact {
                    centre,
                    radius,
                    wave,
                    amplitude,
                } => compact_bump(grid, centre, radius, wave).scale(amplitude),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[model]\nlambda = 1.0\nmu = 0.0\n[grid]\nhalf_length = 1.0\nn = 8\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.run.replicas, 1);
        assert_eq!(c.grid.laplacian, LaplacianSpec::Spectral);
        assert!(matches!(c.initial, Initial::Zero));
    }

    #[test]
    fn errors_carry_field_paths() {
        let e = parse(&MINIMAL.replace("lambda = 1.0", "lambda = -1.0")).unwrap_err();
        assert_eq!(e.problems, vec!["model.lambda: lambda must be positive"]);
        let e = parse(&MINIMAL.replace("n = 8", "n = \"eight\"")).unwrap_err();
        assert!(e.problems[0].starts_with("grid.n:"), "{e}");
        let e = parse(&format!("{MINIMAL}[run]\ndtt = 0.1\n")).unwrap_err();
        assert!(e.problems[0].contains("dtt"), "{e}");
        let e = parse(&format!("{MINIMAL}[run]\ndt = -1.0\nreplicas = 0\n")).unwrap_err();
        assert_eq!(e.problems.len(), 2, "{e}");
    }
}
