use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use phi4_core::checks::{
    compare_invariance, monotone_in_volume, norm_suite, pick, run_suite, NormSuite,
};
use phi4_core::dynamics::{
    coupled_run, langevin_observables, mala_sample, observables_update, run_trajectory,
    CoupledConfig, MalaConfig, Observables,
};
use phi4_core::entropy::{entropy_report, gaussian_kl_closed, linear_family};
use phi4_core::grid::write_snapshot;
use phi4_core::stats::linear_fit;
use phi4_core::{
    Effort, EntropyConfig, Laplacian, RealField, RngPolicy, Scheme, SimConfig, Suite, TorusGrid,
};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{one, Config};

/// What a command produced and whether its verdicts passed.
pub struct Outcome {
    pub passed: bool,
    pub outputs: Vec<PathBuf>,
    pub lines: Vec<String>,
}

/// Flags shared by every subcommand, already resolved against the config.
pub struct RunContext {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub replicas: Option<usize>,
    pub quick: bool,
}

impl RunContext {
    fn replicas(&self, configured: usize, floor: usize) -> usize {
        let r = self.replicas.unwrap_or(configured);
        let r = if self.quick { r.div_ceil(10) } else { r };
        r.max(floor)
    }

    fn create(&self, rel: &str) -> Result<BufWriter<fs::File>> {
        let path = self.out_dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(BufWriter::new(
            fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        ))
    }
}

fn sim_config(cfg: &Config, ctx: &RunContext) -> Result<SimConfig> {
    let grid = cfg.grid()?;
    let mut sim = SimConfig::new(
        &grid,
        cfg.model.lambda,
        cfg.model.mu,
        cfg.run.dt,
        cfg.run.horizon,
        cfg.run.scheme,
        ctx.seed,
    )
    .map_err(|e| one(format!("run: {e}")))?;
    sim.blowup_guard = cfg.run.blowup_guard;
    Ok(sim)
}

/// Output paths a command will write, listed in the manifest up front.
pub fn planned_outputs(command: &str, cfg: Option<&Config>, replicas: usize) -> Vec<PathBuf> {
    let p = |s: &str| PathBuf::from(s);
    match command {
        "simulate" => {
            let mut v = vec![p("observables.csv")];
            if let Some(c) = cfg.filter(|c| c.run.snapshot_every > 0) {
                let steps = (c.run.horizon / c.run.dt).round() as usize;
                for r in 0..replicas {
                    for n in (c.run.snapshot_every..=steps).step_by(c.run.snapshot_every) {
                        v.push(snapshot_path(r, n));
                    }
                }
            }
            v
        }
        "propagation" => vec![p("propagation.csv"), p("propagation_fit.json")],
        "entropy" => vec![p("entropy.json")],
        "invariance" => vec![p("invariance.csv")],
        "norms" => vec![p("norms.csv")],
        "checks" => vec![p("checks.json")],
        _ => Vec::new(),
    }
}

fn snapshot_path(replica: usize, step: usize) -> PathBuf {
    PathBuf::from(format!("snapshots/r{replica:03}_s{step:06}.bin"))
}

pub fn simulate(cfg: &Config, ctx: &RunContext) -> Result<Outcome> {
    let sim = sim_config(cfg, ctx)?;
    let grid = cfg.grid()?;
    let phi0 = cfg.initial(&grid)?;
    let tests = cfg.tests(&grid);
    let replicas = ctx.replicas(cfg.run.replicas, 1);
    let every = cfg.run.observables_every;
    let snap = cfg.run.snapshot_every;

    type Rows = Vec<(usize, f64, Vec<f64>)>;
    let runs: Vec<(Rows, Vec<(usize, RealField)>)> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rows = Vec::new();
            let mut snaps = Vec::new();
            run_trajectory(&sim, &phi0, r, |n, t, phi| {
                if n % every == 0 {
                    let mut obs = Observables::new(0);
                    observables_update(&mut obs, phi, &[]).expect("no test functions");
                    let mut vals = vec![
                        obs.phi2.values[0],
                        obs.magnetisation.values[0],
                        obs.susceptibility.values[0],
                    ];
                    vals.extend(tests.iter().map(|f| f.pair(phi)));
                    rows.push((n, t, vals));
                }
                if snap > 0 && n > 0 && n % snap == 0 {
                    snaps.push((n, phi.clone()));
                }
            })?;
            Ok((rows, snaps))
        })
        .collect::<phi4_core::Result<_>>()?;

    let mut out = ctx.create("observables.csv")?;
    write!(out, "replica,step,t,phi2,magnetisation,susceptibility")?;
    for j in 0..tests.len() {
        write!(out, ",pair_{j}")?;
    }
    writeln!(out)?;
    let mut outputs = vec![PathBuf::from("observables.csv")];
    for (r, (rows, snaps)) in runs.iter().enumerate() {
        for (n, t, vals) in rows {
            write!(out, "{r},{n},{t}")?;
            for v in vals {
                write!(out, ",{v:e}")?;
            }
            writeln!(out)?;
        }
        for (n, phi) in snaps {
            let rel = snapshot_path(r, *n);
            write_snapshot(phi, ctx.create(rel.to_str().expect("utf-8 path"))?)?;
            outputs.push(rel);
        }
    }
    out.flush()?;
    let snapshots = outputs.len() - 1;
    Ok(Outcome {
        passed: true,
        outputs,
        lines: vec![format!(
            "simulated {replicas} replica(s) for {} steps; {snapshots} snapshot(s)",
            sim.steps()
        )],
    })
}

pub fn propagation(cfg: &Config, ctx: &RunContext) -> Result<Outcome> {
    let base = sim_config(cfg, ctx)?;
    if base.scheme != Scheme::DpdExponential {
        return Err(one("run.scheme: propagation runs on dpd-exponential").into());
    }
    let grid = cfg.grid()?;
    let tests = cfg.tests(&grid);
    if tests.is_empty()
        || cfg.propagation.sub_half_lengths.is_empty()
        || cfg.propagation.times.is_empty()
    {
        return Err(one("propagation: needs [[tests]], sub_half_lengths and times").into());
    }
    let coupled = CoupledConfig {
        phi0: cfg.initial(&grid)?,
        base,
        sub_half_lengths: cfg.propagation.sub_half_lengths.clone(),
        times: cfg.propagation.times.clone(),
        tests,
        replicas: ctx.replicas(cfg.run.replicas, 2),
        cutoff: Default::default(),
    };
    let rep = coupled_run(&coupled)?;
    let mut out = ctx.create("propagation.csv")?;
    writeln!(
        out,
        "L,t,test,delta,delta_stderr,pathwise,pathwise_stderr,pathwise_sq,pathwise_sq_stderr"
    )?;
    for r in &rep.rows {
        writeln!(
            out,
            "{},{},{},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.half_length,
            r.t,
            r.test,
            r.delta,
            r.delta_stderr,
            r.pathwise,
            r.pathwise_stderr,
            r.pathwise_sq,
            r.pathwise_sq_stderr
        )?;
    }
    out.flush()?;

    let mut verdicts = Vec::new();
    let mut fits = Vec::new();
    for j in 0..coupled.tests.len() {
        for &t in &coupled.times {
            verdicts.push(
                monotone_in_volume(&rep, &coupled.sub_half_lengths, t, j).expect("rows present"),
            );
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = rep
            .rows
            .iter()
            .filter(|r| r.test == j && r.pathwise_sq > 0.0)
            .map(|r| (r.half_length * r.half_length / r.t, r.pathwise_sq.ln()))
            .unzip();
        let slope = linear_fit(&xs, &ys).ok().map(|f| f.slope);
        fits.push(json!({ "test": j, "log_pathwise_sq_slope_vs_l2_over_t": slope }));
    }
    let passed = verdicts.iter().all(|v| v.monotone && v.master_zero);
    let summary = json!({
        "replicas": rep.replicas,
        "monotone_in_volume": passed,
        "verdicts": verdicts,
        "fits": fits,
    });
    fs::write(
        ctx.out_dir.join("propagation_fit.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok(Outcome {
        passed,
        outputs: vec!["propagation.csv".into(), "propagation_fit.json".into()],
        lines: vec![format!(
            "{} rows; monotone in volume: {}",
            rep.rows.len(),
            if passed { "yes" } else { "no" }
        )],
    })
}

pub fn entropy(cfg: &Config, ctx: &RunContext) -> Result<Outcome> {
    let grid = cfg.grid()?;
    let mut ec = EntropyConfig::new(
        &grid,
        cfg.model.lambda,
        cfg.model.mu,
        cfg.entropy.t,
        cfg.run.dt,
        ctx.seed,
    );
    ec.phi0 = cfg.initial(&grid)?;
    ec.steps().map_err(|e| one(format!("entropy.t: {e}")))?;
    let replicas = ctx.replicas(cfg.run.replicas, 2);
    let gff = ctx.replicas(cfg.entropy.gff_samples, 2);
    let report = entropy_report(&ec, replicas, gff)?;

    let mut checks = serde_json::Map::new();
    let mut passed = report.total.is_finite()
        && report.girsanov.bound.value >= 0.0
        && report.pinsker.is_finite();
    let gaussian_family = cfg.model.lambda == 0.0 && ec.phi0.sup_norm() == 0.0;
    if gaussian_family {
        let lf = linear_family(cfg.model.mu, cfg.entropy.t, &grid)?;
        let closed = gaussian_kl_closed(cfg.entropy.t, &grid)?;
        let g = &report.gaussian;
        // with B = (μ-1)φ the dynamics are Gaussian and m_t differs from m⁰_t
        let mc = g.total();
        let matched =
            cfg.model.mu != 1.0 || (mc - closed).abs() <= 3.0 * g.quadratic.stderr + 1e-12;
        let dominance = lf.girsanov >= lf.exact && (cfg.model.mu == 1.0 || lf.girsanov > lf.exact);
        passed &= matched && dominance;
        checks.insert("linear_family_girsanov".into(), json!(lf.girsanov));
        checks.insert("linear_family_exact_entropy".into(), json!(lf.exact));
        checks.insert("dominance".into(), json!(dominance));
        checks.insert("gaussian_closed_form".into(), json!(closed));
        checks.insert("gaussian_terms_matched".into(), json!(matched));
    }
    checks.insert("passed".into(), json!(passed));
    let doc = json!({ "report": report, "checks": checks });
    fs::write(
        ctx.out_dir.join("entropy.json"),
        serde_json::to_string_pretty(&doc)? + "\n",
    )?;
    Ok(Outcome {
        passed,
        outputs: vec!["entropy.json".into()],
        lines: vec![format!(
            "entropy bound {:.4e} ± {:.1e} (Girsanov {:.4e}); L1 distance ≤ {:.4}",
            report.total, report.total_stderr, report.girsanov.bound.value, report.pinsker
        )],
    })
}

pub fn invariance(cfg: &Config, ctx: &RunContext) -> Result<Outcome> {
    // the Langevin stepper and MALA both use the five-point stencil
    let grid = TorusGrid::with_laplacian(
        cfg.grid.half_length,
        cfg.grid.n,
        Laplacian::FiniteDifference,
    )?;
    let scheme = match cfg.run.scheme {
        Scheme::DpdExponential => Scheme::LangevinExponential,
        s => s,
    };
    let inv = &cfg.invariance;
    let tests = cfg.tests(&grid);
    let runs = ctx.replicas(cfg.run.replicas, 2);
    let horizon = if ctx.quick {
        inv.horizon / 4.0
    } else {
        inv.horizon
    };
    let mut averages = Vec::new();
    for (k, &dt) in inv.dts.iter().enumerate() {
        let mut sim = SimConfig::new(
            &grid,
            cfg.model.lambda,
            cfg.model.mu,
            dt,
            horizon,
            scheme,
            0,
        )
        .map_err(|e| one(format!("invariance.dts: {e}")))?;
        sim.policy = RngPolicy::new(ctx.seed).derive(k as u64 + 1);
        let obs = langevin_observables(&sim, &tests, runs, inv.burn_in, inv.sample_every)?;
        averages.push(pick(&obs, 4 * runs)?);
    }
    let base = SimConfig::new(
        &grid,
        cfg.model.lambda,
        cfg.model.mu,
        inv.dts[1],
        horizon,
        scheme,
        0,
    )?;
    let samples = if ctx.quick {
        inv.mala_samples.div_ceil(4)
    } else {
        inv.mala_samples
    };
    let mala = MalaConfig {
        chains: inv.mala_chains,
        thin: inv.mala_thin,
        policy: RngPolicy::new(ctx.seed).derive(0),
        ..MalaConfig::new(&grid, cfg.model.lambda, base.effective_mass(), samples, 0)
    };
    let mut obs = Observables::new(tests.len());
    let mut failure = None;
    let run = mala_sample(&mala, |_, _, phi| {
        if let Err(e) = observables_update(&mut obs, phi, &tests) {
            failure.get_or_insert(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    let reference = pick(&obs, 4 * inv.mala_chains as usize)?;
    let rows = compare_invariance(&averages[0], &averages[1], &reference);
    let mut out = ctx.create("invariance.csv")?;
    writeln!(
        out,
        "observable,dt_coarse,dt_fine,extrapolated,extrapolated_stderr,mala,mala_stderr,z"
    )?;
    for r in &rows {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:.4}",
            r.observable,
            r.coarse,
            r.fine,
            r.extrapolated,
            r.extrapolated_stderr,
            r.mala,
            r.mala_stderr,
            r.z
        )?;
    }
    out.flush()?;
    let worst = rows.iter().map(|r| r.z.abs()).fold(0.0, f64::max);
    let acc = run.acceptance.iter().sum::<f64>() / run.acceptance.len() as f64;
    Ok(Outcome {
        passed: worst < 3.0,
        outputs: vec!["invariance.csv".into()],
        lines: vec![format!(
            "max |z| {worst:.2} over {} observables; MALA acceptance {acc:.2}",
            rows.len()
        )],
    })
}

pub fn norms(cfg: &Config, ctx: &RunContext) -> Result<Outcome> {
    let grid = cfg.grid()?;
    let n = &cfg.norms;
    let suite = NormSuite {
        alpha: n.alpha,
        beta: n.beta,
        sigma: n.sigma,
        samples: ctx.replicas(n.samples, 5),
        heat_times: n.heat_times.clone(),
        profile: n.profile,
        embedding_p: n.embedding_p,
    };
    let rows = norm_suite(&grid, &suite, &RngPolicy::new(ctx.seed))?;
    let out = ctx.create("norms.csv")?;
    phi4_core::besov::write_report_csv(&rows, out)?;
    let failed: Vec<&str> = rows
        .iter()
        .filter(|r| !r.verdict)
        .map(|r| r.inequality.as_str())
        .collect();
    Ok(Outcome {
        passed: failed.is_empty(),
        outputs: vec!["norms.csv".into()],
        lines: vec![if failed.is_empty() {
            format!(
                "{} inequalities stable on {} samples",
                rows.len(),
                suite.samples
            )
        } else {
            format!("unstable: {}", failed.join(", "))
        }],
    })
}

pub fn checks(suite: Suite, ctx: &RunContext) -> Result<Outcome> {
    let effort = if ctx.quick {
        Effort::Quick
    } else {
        Effort::Full
    };
    let results = run_suite(suite, effort, ctx.seed)?;
    fs::create_dir_all(&ctx.out_dir)?;
    fs::write(
        ctx.out_dir.join("checks.json"),
        serde_json::to_string_pretty(&results)? + "\n",
    )?;
    Ok(Outcome {
        passed: results.iter().all(|r| r.passed),
        outputs: vec!["checks.json".into()],
        lines: results.iter().map(|r| r.line()).collect(),
    })
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    if dir.exists() && !dir.is_dir() {
        bail!("{} exists and is not a directory", dir.display());
    }
    Ok(fs::create_dir_all(dir)?)
}
