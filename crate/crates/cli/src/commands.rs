//! One function per subcommand. Each returns `Ok(true)` on success and
//! `Ok(false)` when it ran to completion but a check failed.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use mtb_core::backbone::BackboneSpec;
use mtb_core::conditioning::condition;
use mtb_core::extinction::{compute_w, extinction_probability, extinction_upper_bound};
use mtb_core::laplace::{solve_u, solve_v, OdeSolution};
use mtb_core::simulate::{
    derive_seed, mc_laplace_estimate, mean_and_se, poissonize_initial, simulate_backbone,
    simulate_dressed, simulate_mcb_batch, DressedOptions, InitialParticle, McbOptions, Motion,
    PathSample, Scheme,
};
use mtb_core::spectral::perron_frobenius;
use mtb_core::tolerances::{J_MAX_DEFAULT, MC_DT_COEFF, MC_SIGMAS};
use mtb_core::{Error, Mechanism};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::io::{
    dot, input_error, load_mechanism, positive, sink, sup_norm, vector_or, write_json,
};

#[derive(Args)]
pub struct MechArgs {
    /// Mechanism JSON file.
    #[arg(long)]
    pub mech: PathBuf,
    /// Output file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ExtinctionArgs {
    #[command(flatten)]
    pub common: MechArgs,
    /// Initial mass y; adds P_y(extinction) = e^{-[w,y]} to the report.
    #[arg(long, value_delimiter = ',')]
    pub y: Vec<f64>,
}

#[derive(Args)]
pub struct BackboneArgs {
    #[command(flatten)]
    pub common: MechArgs,
    /// Truncation |j| ≤ J_MAX of the offspring tables.
    #[arg(long, default_value_t = J_MAX_DEFAULT)]
    pub j_max: usize,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum System {
    /// v_t(θ) for the mechanism itself.
    V,
    /// V†_t f for the conditioned mechanism.
    Vdag,
    /// (V†_t f, U_t h) for the backbone system.
    U,
}

#[derive(Args)]
pub struct LaplaceArgs {
    #[command(flatten)]
    pub common: MechArgs,
    #[arg(long, value_enum, default_value = "v")]
    pub system: System,
    /// Initial value θ (or f); defaults to all ones.
    #[arg(long, value_delimiter = ',')]
    pub theta: Vec<f64>,
    /// Backbone initial value h for `--system u`; `inf` allowed. Defaults to all ones.
    #[arg(long, value_delimiter = ',')]
    pub h: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    /// RK4 step.
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
    /// Metadata JSON (defaults to `<out>.meta.json` when --out is given).
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SchemeArg {
    Euler,
    Split,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Euler => Scheme::Euler,
            SchemeArg::Split => Scheme::Split,
        }
    }
}

#[derive(Args)]
pub struct McbArgs {
    #[command(flatten)]
    pub common: MechArgs,
    /// Initial mass; defaults to all ones.
    #[arg(long, value_delimiter = ',')]
    pub y0: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 1)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "split")]
    pub scheme: SchemeArg,
    /// Keep every n-th grid point in the CSV.
    #[arg(long, default_value_t = 1)]
    pub record_every: usize,
    /// θ for the Laplace estimate in the summary; defaults to all ones.
    #[arg(long, value_delimiter = ',')]
    pub theta: Vec<f64>,
}

#[derive(Args)]
pub struct SimBackboneArgs {
    #[command(flatten)]
    pub common: MechArgs,
    /// Types of the initial particles, e.g. `0,0,1`.
    #[arg(long, value_delimiter = ',', conflicts_with = "mu")]
    pub nu0: Vec<usize>,
    /// Poissonize the initial particles with intensity w_i μ_i instead.
    #[arg(long, value_delimiter = ',')]
    pub mu: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = J_MAX_DEFAULT)]
    pub j_max: usize,
    /// Per-type Brownian diffusivity; enables positions.
    #[arg(long, value_delimiter = ',')]
    pub diffusivity: Vec<f64>,
    /// Sampling interval of positions.
    #[arg(long, default_value_t = 1e-2)]
    pub motion_dt: f64,
}

#[derive(Args)]
pub struct DressedArgs {
    #[command(flatten)]
    pub common: MechArgs,
    /// Initial measure μ: start of the independent conditioned copy and
    /// Poissonization intensity of the backbone. Defaults to all ones.
    #[arg(long, value_delimiter = ',')]
    pub mu: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "split")]
    pub scheme: SchemeArg,
    #[arg(long, default_value_t = 1)]
    pub record_every: usize,
    #[arg(long, value_delimiter = ',')]
    pub theta: Vec<f64>,
    #[arg(long, default_value_t = J_MAX_DEFAULT)]
    pub j_max: usize,
    /// Forest JSON of the first path.
    #[arg(long)]
    pub forest: Option<PathBuf>,
}

pub fn classify(args: &MechArgs) -> Result<bool> {
    let mech = load_mechanism(&args.mech)?;
    let sd = perron_frobenius(&mech)?;
    let b_tilde: Vec<Vec<f64>> = (0..mech.ell())
        .map(|i| (0..mech.ell()).map(|j| sd.b_tilde[(i, j)]).collect())
        .collect();
    write_json(
        args.out.as_deref(),
        &json!({
            "mech_id": mech.content_hash(),
            "gamma": sd.gamma,
            "criticality": sd.criticality,
            "u": sd.u,
            "v": sd.v,
            "b_tilde": b_tilde,
        }),
    )?;
    Ok(true)
}

pub fn extinction(args: &ExtinctionArgs) -> Result<bool> {
    let mech = load_mechanism(&args.common.mech)?;
    let sd = perron_frobenius(&mech)?;
    let w = compute_w(&mech, &sd)?;
    let bound = (mech.min_beta() > 0.0)
        .then(|| extinction_upper_bound(&mech, &sd))
        .transpose()?;
    let mut report = json!({
        "mech_id": mech.content_hash(),
        "gamma": sd.gamma,
        "w": w.w,
        "residual": w.residual,
        "method": w.method,
        "doubling_gap": w.doubling_gap,
        "upper_bound": bound,
    });
    if !args.y.is_empty() {
        report["y"] = json!(args.y);
        report["extinction_probability"] = json!(extinction_probability(&w, &args.y)?);
    }
    write_json(args.common.out.as_deref(), &report)?;
    Ok(true)
}

pub fn condition_cmd(args: &MechArgs) -> Result<bool> {
    let mech = load_mechanism(&args.mech)?;
    let w = supercritical_w(&mech)?;
    let dagger = condition(&mech, &w)?;
    let mut out = sink(args.out.as_deref())?;
    writeln!(out, "{}", dagger.to_json_pretty())?;
    out.flush()?;
    Ok(true)
}

pub fn backbone(args: &BackboneArgs) -> Result<bool> {
    let mech = load_mechanism(&args.common.mech)?;
    let w = supercritical_w(&mech)?;
    let spec = BackboneSpec::new(&mech, &w, args.j_max)?;
    write_json(args.common.out.as_deref(), &spec)?;
    Ok(true)
}

fn supercritical_w(mech: &Mechanism) -> Result<mtb_core::ExtinctionVector> {
    let sd = perron_frobenius(mech)?;
    Ok(compute_w(mech, &sd)?)
}

/// System name, solution, optional `U` columns and `w`.
type Curve = (
    &'static str,
    OdeSolution,
    Option<Vec<Vec<f64>>>,
    Option<Vec<f64>>,
);

#[derive(Serialize)]
struct CurveMeta<'a> {
    system: &'a str,
    mech_id: String,
    t_max: f64,
    step: f64,
    theta0: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    h: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    w: Option<&'a [f64]>,
    /// Richardson estimate per column, in CSV column order.
    err_est: Vec<f64>,
}

pub fn laplace_curve(args: &LaplaceArgs) -> Result<bool> {
    let mech = load_mechanism(&args.common.mech)?;
    let ell = mech.ell();
    let theta = vector_or(&args.theta, ell, 1.0, "theta")?;
    let step = positive("step", args.step)?;
    let t_max = args.t;
    let mut header = vec!["t".to_string()];
    let (name, solution, extra, w): Curve = match args.system {
        System::V => {
            header.extend((1..=ell).map(|i| format!("v_{i}")));
            ("v", solve_v(&mech, &theta, t_max, step)?, None, None)
        }
        System::Vdag => {
            let w = supercritical_w(&mech)?;
            let dagger = condition(&mech, &w)?;
            header.extend((1..=ell).map(|i| format!("vdag_{i}")));
            (
                "vdag",
                solve_v(&dagger, &theta, t_max, step)?,
                None,
                Some(w.w),
            )
        }
        System::U => {
            let w = supercritical_w(&mech)?;
            let h = vector_or(&args.h, ell, 1.0, "h")?;
            let joint = solve_u(&mech, &w.w, &theta, &h, t_max, step)?;
            header.extend((1..=ell).map(|i| format!("vdag_{i}")));
            header.extend((1..=ell).map(|i| format!("u_{i}")));
            let u = joint.u_values();
            let mut sol = joint.v_dagger;
            sol.err_est.extend(&joint.g.err_est);
            ("u", sol, Some(u), Some(w.w))
        }
    };

    let mut csv = csv::Writer::from_writer(sink(args.common.out.as_deref())?);
    csv.write_record(&header)?;
    for (k, (t, row)) in solution.times.iter().zip(&solution.values).enumerate() {
        let mut record = vec![t.to_string()];
        record.extend(row.iter().map(f64::to_string));
        if let Some(u) = &extra {
            record.extend(u[k].iter().map(f64::to_string));
        }
        csv.write_record(&record)?;
    }
    csv.flush()?;

    let meta_path = args.meta.clone().or_else(|| {
        args.common.out.as_ref().map(|p| {
            let mut s = p.clone().into_os_string();
            s.push(".meta.json");
            PathBuf::from(s)
        })
    });
    if let Some(path) = meta_path {
        let h = vector_or(&args.h, ell, 1.0, "h")?;
        let meta = CurveMeta {
            system: name,
            mech_id: solution.mech_id.clone(),
            t_max,
            step: solution.step,
            theta0: &theta,
            h: matches!(args.system, System::U).then_some(&h[..]),
            w: w.as_deref(),
            err_est: solution.err_est.clone(),
        };
        write_json(Some(&path), &meta)?;
    }
    Ok(true)
}

fn write_paths(path: &Path, paths: &[PathSample], prefix: &str, ell: usize) -> Result<()> {
    let mut csv = csv::Writer::from_writer(sink(Some(path))?);
    let mut header = vec!["path".to_string(), "t".to_string()];
    header.extend((1..=ell).map(|i| format!("{prefix}_{i}")));
    csv.write_record(&header)?;
    for (k, p) in paths.iter().enumerate() {
        for (t, m) in p.times.iter().zip(&p.mass) {
            let mut record = vec![k.to_string(), t.to_string()];
            record.extend(m.iter().map(f64::to_string));
            csv.write_record(&record)?;
        }
    }
    csv.flush()?;
    Ok(())
}

fn final_moments(paths: &[PathSample], ell: usize) -> (Vec<f64>, Vec<f64>) {
    (0..ell)
        .map(|j| {
            let xs: Vec<f64> = paths.iter().map(|p| p.final_mass()[j]).collect();
            mean_and_se(&xs)
        })
        .unzip()
}

fn check_paths(n: usize) -> Result<usize> {
    if n == 0 {
        return Err(input_error("--paths must be at least 1"));
    }
    Ok(n)
}

pub fn simulate_mcb(args: &McbArgs) -> Result<bool> {
    let mech = load_mechanism(&args.common.mech)?;
    let ell = mech.ell();
    let y0 = vector_or(&args.y0, ell, 1.0, "y0")?;
    let theta = vector_or(&args.theta, ell, 1.0, "theta")?;
    let dt = positive("dt", args.dt)?;
    let n = check_paths(args.paths)?;
    let opts = McbOptions {
        record_every: args.record_every,
        record_jumps: false,
        scheme: args.scheme.into(),
        ..McbOptions::new(args.t, dt)
    };
    let paths = simulate_mcb_batch(&mech, &y0, &opts, args.seed, n)?;
    if let Some(out) = &args.common.out {
        write_paths(out, &paths, "Y", ell)?;
    }
    let (mean, se) = final_moments(&paths, ell);
    let horizon = *paths[0].times.last().expect("nonempty grid");
    let est = mc_laplace_estimate(&paths, &theta, horizon)?;
    let exact = (-dot(&y0, solve_v(&mech, &theta, horizon, dt.min(1e-3))?.last())).exp();
    let extinct = paths.iter().filter(|p| p.extinct_by.is_some()).count();
    write_json(
        None,
        &json!({
            "mech_id": mech.content_hash(),
            "paths": n,
            "t": horizon,
            "dt": dt,
            "seed": args.seed,
            "scheme": Scheme::from(args.scheme),
            "y0": y0,
            "mean": mean,
            "se": se,
            "extinct_fraction": extinct as f64 / n as f64,
            "laplace": {
                "theta": theta,
                "estimate": est.estimate,
                "se": est.se,
                "ode": exact,
                "tolerance": MC_SIGMAS * est.se + MC_DT_COEFF * dt,
            },
        }),
    )?;
    Ok(true)
}

pub fn simulate_backbone_cmd(args: &SimBackboneArgs) -> Result<bool> {
    let mech = load_mechanism(&args.common.mech)?;
    let ell = mech.ell();
    let w = supercritical_w(&mech)?;
    let spec = BackboneSpec::new(&mech, &w, args.j_max)?;
    let motion = if args.diffusivity.is_empty() {
        None
    } else {
        Some(Motion {
            diffusivity: vector_or(&args.diffusivity, ell, 0.0, "diffusivity")?,
            dt: positive("motion-dt", args.motion_dt)?,
        })
    };
    let nu0 = if !args.mu.is_empty() {
        let mu = vector_or(&args.mu, ell, 0.0, "mu")?;
        poissonize_initial(&w.w, &mu, derive_seed(args.seed, u64::MAX))?
    } else if args.nu0.is_empty() {
        vec![InitialParticle {
            kind: 0,
            position: None,
        }]
    } else {
        args.nu0
            .iter()
            .map(|&kind| {
                if kind >= ell {
                    Err(input_error(format!(
                        "--nu0 type {kind} out of range for {ell} types"
                    )))
                } else {
                    Ok(InitialParticle {
                        kind,
                        position: None,
                    })
                }
            })
            .collect::<Result<_>>()?
    };
    let forest = match simulate_backbone(&spec, &nu0, args.t, args.seed, motion.as_ref()) {
        Ok(f) => f,
        Err(Error::PopulationExplosion {
            limit,
            time,
            partial,
        }) => {
            if let Some(out) = &args.common.out {
                write_json(Some(out), &*partial)?;
            }
            bail!(Error::PopulationExplosion {
                limit,
                time,
                partial
            });
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(out) = &args.common.out {
        write_json(Some(out), &forest)?;
    }
    write_json(
        None,
        &json!({
            "mech_id": mech.content_hash(),
            "t": args.t,
            "seed": args.seed,
            "initial": nu0.len(),
            "particles": forest.particles.len(),
            "counts_at_t": forest.counts_at(ell, args.t),
            "branchpoint_events": forest.immigration_events.len(),
        }),
    )?;
    Ok(true)
}

pub fn simulate_dressed_cmd(args: &DressedArgs) -> Result<bool> {
    let mech = load_mechanism(&args.common.mech)?;
    let ell = mech.ell();
    let mu = vector_or(&args.mu, ell, 1.0, "mu")?;
    let theta = vector_or(&args.theta, ell, 1.0, "theta")?;
    let dt = positive("dt", args.dt)?;
    let epsilon = positive("epsilon", args.epsilon)?;
    let n = check_paths(args.paths)?;
    let w = supercritical_w(&mech)?;
    let dagger = condition(&mech, &w)?;
    let spec = BackboneSpec::new(&mech, &w, args.j_max)?;
    let opts = DressedOptions {
        record_every: args.record_every,
        scheme: args.scheme.into(),
        ..DressedOptions::new(args.t, dt, epsilon)
    };
    let samples = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let seed = derive_seed(args.seed, k);
            let nu0 = poissonize_initial(&w.w, &mu, derive_seed(seed, 0))?;
            simulate_dressed(&mech, &dagger, &spec, &nu0, Some(&mu), &opts, seed)
        })
        .collect::<mtb_core::Result<Vec<_>>>()?;
    if let Some(path) = &args.forest {
        write_json(Some(path), &samples[0].forest)?;
    }
    let paths: Vec<PathSample> = samples.into_iter().map(|s| s.path).collect();
    if let Some(out) = &args.common.out {
        write_paths(out, &paths, "L", ell)?;
    }
    let horizon = *paths[0].times.last().expect("nonempty grid");
    let est = mc_laplace_estimate(&paths, &theta, horizon)?;
    let exact = (-dot(&mu, solve_v(&mech, &theta, horizon, dt.min(1e-3))?.last())).exp();
    let vd = solve_v(&dagger, &theta, horizon, dt.min(1e-3))?;
    let vd_sup = vd.values.iter().map(|v| sup_norm(v)).fold(0.0, f64::max);
    let (mean, se) = final_moments(&paths, ell);
    write_json(
        None,
        &json!({
            "mech_id": mech.content_hash(),
            "paths": n,
            "t": horizon,
            "dt": dt,
            "epsilon": epsilon,
            "seed": args.seed,
            "mu": mu,
            "w": w.w,
            "mean": mean,
            "se": se,
            "laplace": {
                "theta": theta,
                "estimate": est.estimate,
                "se": est.se,
                "ode": exact,
                "epsilon_bias_budget": mech.max_beta() * epsilon * vd_sup * vd_sup * horizon,
            },
        }),
    )?;
    Ok(true)
}
