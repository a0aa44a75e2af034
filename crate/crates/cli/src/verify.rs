//! The `verify` pipeline: every identity and Monte Carlo check on one
//! mechanism, reported as JSON lines `{check, value, tolerance, pass}`.

use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use mtb_core::backbone::{generating_fn, generating_fn_from_pmf, BackboneSpec};
use mtb_core::conditioning::condition;
use mtb_core::extinction::{compute_w, extinction_upper_bound};
use mtb_core::laplace::{check_decomposition_identity, shift_identity_residual, solve_v};
use mtb_core::simulate::{
    derive_seed, mc_laplace_estimate, mean_and_se, poissonize_initial, rng_from_seed,
    simulate_dressed, simulate_mcb_batch, DressedOptions, McbOptions,
};
use mtb_core::spectral::{perron_frobenius, Criticality};
use mtb_core::tolerances::*;
use mtb_core::{Error, ExtinctionVector, Mechanism};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::io::{dot, input_error, load_mechanism, positive, sink, sup_norm};

#[derive(Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub mech: PathBuf,
    /// JSON-lines report (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Paths for each Monte Carlo check.
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    /// Horizon of the Monte Carlo checks.
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub epsilon: f64,
    /// RK4 step of the ODE identities.
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
    /// Horizon of the ODE identities.
    #[arg(long, default_value_t = 5.0)]
    pub t_ode: f64,
}

#[derive(Serialize)]
struct Line {
    check: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    pass: bool,
}

struct Report {
    out: Box<dyn Write>,
    all_pass: bool,
}

impl Report {
    fn emit(&mut self, line: &Line) -> Result<()> {
        self.all_pass &= line.pass;
        serde_json::to_writer(&mut self.out, line)?;
        writeln!(self.out)?;
        Ok(())
    }

    /// Runs `check` and records `value ≤ tolerance`, or the error it raised.
    fn check<F>(&mut self, name: &'static str, check: F) -> Result<()>
    where
        F: FnOnce() -> mtb_core::Result<(f64, f64)>,
    {
        let line = match check() {
            Ok((value, tolerance)) => Line {
                check: name,
                value: Some(value),
                tolerance: Some(tolerance),
                error: None,
                pass: value <= tolerance,
            },
            Err(e) => Line {
                check: name,
                value: None,
                tolerance: None,
                error: Some(e.to_string()),
                pass: false,
            },
        };
        self.emit(&line)
    }
}

pub fn verify(args: &VerifyArgs) -> Result<bool> {
    let mech = load_mechanism(&args.mech)?;
    if args.paths < 2 {
        return Err(input_error("--paths must be at least 2"));
    }
    for (what, x) in [
        ("t", args.t),
        ("dt", args.dt),
        ("epsilon", args.epsilon),
        ("step", args.step),
        ("t-ode", args.t_ode),
    ] {
        positive(what, x)?;
    }
    let sd = perron_frobenius(&mech)?;
    if sd.criticality != Criticality::Supercritical {
        return Err(Error::NotSupercritical { gamma: sd.gamma }.into());
    }
    let mut report = Report {
        out: sink(args.out.as_deref())?,
        all_pass: true,
    };

    let w = match compute_w(&mech, &sd) {
        Ok(w) => w,
        Err(e) => {
            report.emit(&Line {
                check: "root_identity",
                value: None,
                tolerance: None,
                error: Some(e.to_string()),
                pass: false,
            })?;
            report.out.flush()?;
            return Ok(false);
        }
    };
    let norm = w.w.iter().map(|x| x * x).sum::<f64>().sqrt();
    report.check("root_identity", || {
        Ok((mech.psi_sup_norm(&w.w) / (1.0 + norm), ROOT_RESIDUAL))
    })?;
    if mech.min_beta() > 0.0 {
        report.check("extinction_bound", || {
            let bound = extinction_upper_bound(&mech, &sd)?;
            Ok((w.w.iter().copied().fold(0.0, f64::max) / bound, 1.0 + 1e-8))
        })?;
    }
    backbone_checks(&mut report, &mech, &w)?;
    identity_checks(&mut report, &mech, &w, args)?;
    monte_carlo_checks(&mut report, &mech, &w, args)?;
    report.out.flush()?;
    Ok(report.all_pass)
}

fn backbone_checks(report: &mut Report, mech: &Mechanism, w: &ExtinctionVector) -> Result<()> {
    let spec = match BackboneSpec::new(mech, w, J_MAX_DEFAULT) {
        Ok(s) => s,
        Err(e) => {
            return report.emit(&Line {
                check: "offspring_normalization",
                value: None,
                tolerance: None,
                error: Some(e.to_string()),
                pass: false,
            })
        }
    };
    let ell = mech.ell();
    report.check("offspring_normalization", || {
        Ok((
            spec.pmf
                .iter()
                .map(|p| (p.total() - 1.0).abs())
                .fold(0.0, f64::max),
            PMF_NORMALIZATION,
        ))
    })?;
    report.check("offspring_tail", || {
        Ok((
            spec.pmf.iter().map(|p| p.tail).fold(0.0, f64::max),
            PMF_TAIL,
        ))
    })?;
    report.check("mixture_sum", || {
        let worst = (0..ell)
            .map(|i| {
                let target = w.w[i] * spec.q[i];
                (spec.mixture_total(i) - target).abs() / target
            })
            .fold(0.0, f64::max);
        Ok((worst, MIXTURE_SUM))
    })?;
    report.check("generator_identity", || {
        let grid: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
        let points = grid.len().pow(ell as u32);
        let mut worst = 0.0f64;
        for i in 0..ell {
            for idx in 0..points {
                let s: Vec<f64> = (0..ell)
                    .map(|c| grid[(idx / grid.len().pow(c as u32)) % grid.len()])
                    .collect();
                worst = worst.max(
                    (generating_fn_from_pmf(&spec, i, &s)? - generating_fn(mech, &w.w, i, &s)?)
                        .abs(),
                );
            }
        }
        let tail = (0..ell)
            .map(|i| spec.q[i] * spec.pmf[i].tail)
            .fold(0.0, f64::max);
        Ok((worst, GENERATOR_IDENTITY + tail))
    })
}

fn identity_checks(
    report: &mut Report,
    mech: &Mechanism,
    w: &ExtinctionVector,
    args: &VerifyArgs,
) -> Result<()> {
    let mut rng = rng_from_seed(derive_seed(args.seed, 1));
    let ell = mech.ell();
    let f: Vec<f64> = (0..ell).map(|_| 3.0 * rng.random::<f64>()).collect();
    let h: Vec<f64> = (0..ell).map(|_| 3.0 * rng.random::<f64>()).collect();
    report.check("shift_identity", || {
        let dagger = condition(mech, w)?;
        Ok((
            shift_identity_residual(mech, &dagger, &w.w, &f, args.t_ode, args.step)?,
            SHIFT_IDENTITY,
        ))
    })?;
    report.check("decomposition_identity", || {
        Ok((
            check_decomposition_identity(mech, &w.w, &f, &h, args.t_ode, args.step)?,
            DECOMPOSITION_IDENTITY,
        ))
    })
}

fn monte_carlo_checks(
    report: &mut Report,
    mech: &Mechanism,
    w: &ExtinctionVector,
    args: &VerifyArgs,
) -> Result<()> {
    let ell = mech.ell();
    let theta = vec![1.0; ell];
    let every = ((args.t / args.dt).round() as usize).max(1);
    report.check("mc_laplace", || {
        let y0 = vec![1.0; ell];
        let opts = McbOptions {
            record_every: every,
            record_jumps: false,
            ..McbOptions::new(args.t, args.dt)
        };
        let paths = simulate_mcb_batch(mech, &y0, &opts, derive_seed(args.seed, 2), args.paths)?;
        let est = mc_laplace_estimate(&paths, &theta, args.t)?;
        let exact = (-dot(&y0, solve_v(mech, &theta, args.t, args.step)?.last())).exp();
        Ok((
            (est.estimate - exact).abs(),
            MC_SIGMAS * est.se + MC_DT_COEFF * args.dt,
        ))
    })?;
    report.check("dressed_laplace", || {
        let mu = vec![0.5; ell];
        let dagger = condition(mech, w)?;
        let spec = BackboneSpec::new(mech, w, J_MAX_DEFAULT)?;
        let opts = DressedOptions {
            record_every: every,
            ..DressedOptions::new(args.t, args.dt, args.epsilon)
        };
        let master = derive_seed(args.seed, 3);
        let values = (0..args.paths as u64)
            .into_par_iter()
            .map(|k| {
                let seed = derive_seed(master, k);
                let nu0 = poissonize_initial(&w.w, &mu, derive_seed(seed, 0))?;
                let s = simulate_dressed(mech, &dagger, &spec, &nu0, Some(&mu), &opts, seed)?;
                Ok((-dot(&theta, s.path.final_mass())).exp())
            })
            .collect::<mtb_core::Result<Vec<f64>>>()?;
        let (est, se) = mean_and_se(&values);
        let exact = (-dot(&mu, solve_v(mech, &theta, args.t, args.step)?.last())).exp();
        let vd = solve_v(&dagger, &theta, args.t, args.step)?;
        let vd_sup = vd.values.iter().map(|v| sup_norm(v)).fold(0.0, f64::max);
        let budget = mech.max_beta() * args.epsilon * vd_sup * vd_sup * args.t;
        Ok(((est - exact).abs(), MC_SIGMAS * se + budget))
    })
}
