//! Time-stepping for the MCB total-mass process with compound-Poisson jumps.
//! Jumps `N_{ik} ~ Poisson(Y_i r_k^{(i)} h)` use intensities frozen at the
//! left endpoint, and `d` is the compensated drift. Two schemes are
//! available:
//!
//! * [`Scheme::Euler`]: `Y_j += h Σ_i d_{ji} Y_i + sqrt(2 β_j Y_j h) G_j + jumps`,
//!   clamped at 0.
//! * [`Scheme::Split`]: the one-type Feller part `dY_j = d_{jj} Y_j dt +
//!   sqrt(2β_j Y_j) dW` is sampled from its exact Poisson–Gamma transition,
//!   then `h Σ_{i≠j} d_{ji} Y_i ≥ 0` and the jumps are added. No clamping is
//!   needed and 0 is reached exactly.
//!
//! Paths are absorbed once the total mass drops below the absorption
//! threshold.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, rng_from_seed, time_grid, JumpEvent, PathSample};
use crate::error::{Error, Result};
use crate::mechanism::Mechanism;
use crate::tolerances::{ABSORPTION, BLOW_UP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    #[default]
    Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McbOptions {
    pub t_max: f64,
    pub dt: f64,
    /// Keep every `record_every`-th grid point (and always the last one).
    pub record_every: usize,
    pub record_jumps: bool,
    pub scheme: Scheme,
}

impl McbOptions {
    pub fn new(t_max: f64, dt: f64) -> Self {
        Self {
            t_max,
            dt,
            record_every: 1,
            record_jumps: true,
            scheme: Scheme::default(),
        }
    }
}

pub(crate) fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    if !(lambda > 0.0) {
        return 0;
    }
    if lambda < 30.0 {
        let u: f64 = rng.random();
        let mut p = (-lambda).exp();
        let mut cdf = p;
        let mut n = 0u64;
        while u >= cdf && p > 0.0 {
            n += 1;
            p *= lambda / n as f64;
            cdf += p;
        }
        n
    } else {
        Poisson::new(lambda)
            .expect("positive finite rate")
            .sample(rng) as u64
    }
}

/// One-step kernel shared by every mass simulator.
#[derive(Debug, Clone)]
pub(crate) struct Stepper {
    scheme: Scheme,
    ell: usize,
    drift: DMatrix<f64>,
    beta: Vec<f64>,
    atoms: Vec<Vec<(f64, Vec<f64>)>>,
}

impl Stepper {
    pub(crate) fn new(mech: &Mechanism, scheme: Scheme) -> Self {
        Self {
            scheme,
            ell: mech.ell(),
            drift: mech.compensated_drift(),
            beta: mech.beta().to_vec(),
            atoms: (0..mech.ell())
                .map(|i| {
                    mech.atoms(i)
                        .iter()
                        .map(|a| (a.rate(), a.jump().to_vec()))
                        .collect()
                })
                .collect(),
        }
    }

    fn euler_own<R: Rng + ?Sized>(&self, y: f64, j: usize, h: f64, rng: &mut R) -> f64 {
        let mut x = y + h * self.drift[(j, j)] * y;
        if self.beta[j] > 0.0 && y > 0.0 {
            let g: f64 = rng.sample(StandardNormal);
            x += (2.0 * self.beta[j] * y * h).sqrt() * g;
        }
        x
    }

    /// Exact transition of `dY = aY dt + sqrt(2βY) dW` over `h`: with
    /// `c = β h (e^{ah} − 1)/(ah)`, `Y_h ~ Gamma(N, c)` where
    /// `N ~ Poisson(y e^{ah}/c)` (and `Y_h = 0` when `N = 0`).
    fn feller_own<R: Rng + ?Sized>(&self, y: f64, j: usize, h: f64, rng: &mut R) -> f64 {
        let ah = self.drift[(j, j)] * h;
        if self.beta[j] <= 0.0 || y <= 0.0 {
            return y * ah.exp();
        }
        let scale = self.beta[j] * h * if ah == 0.0 { 1.0 } else { ah.exp_m1() / ah };
        let n = sample_poisson(rng, y * ah.exp() / scale);
        if n == 0 {
            0.0
        } else {
            Gamma::new(n as f64, scale)
                .expect("positive shape and scale")
                .sample(rng)
        }
    }

    /// Advances `m` over `[time, time + h]`. Returns `true` when the path
    /// was absorbed at 0.
    pub(crate) fn step<R: Rng + ?Sized>(
        &self,
        m: &mut [f64],
        next: &mut [f64],
        time: f64,
        h: f64,
        rng: &mut R,
        mut jumps: Option<&mut Vec<JumpEvent>>,
    ) -> Result<bool> {
        for j in 0..self.ell {
            let mut x = match self.scheme {
                Scheme::Euler => self.euler_own(m[j], j, h, rng),
                Scheme::Split => self.feller_own(m[j], j, h, rng),
            };
            for i in (0..self.ell).filter(|i| *i != j) {
                x += h * self.drift[(j, i)] * m[i];
            }
            next[j] = x;
        }
        for i in 0..self.ell {
            if m[i] <= 0.0 {
                continue;
            }
            for (rate, y) in &self.atoms[i] {
                let n = sample_poisson(rng, m[i] * rate * h);
                if n == 0 {
                    continue;
                }
                for (x, yj) in next.iter_mut().zip(y) {
                    *x += n as f64 * yj;
                }
                if let Some(log) = jumps.as_deref_mut() {
                    for _ in 0..n {
                        log.push(JumpEvent {
                            time: time + h,
                            source: i,
                            jump: y.clone(),
                        });
                    }
                }
            }
        }
        let mut total = 0.0;
        for x in next.iter_mut() {
            *x = x.max(0.0);
            if *x > BLOW_UP {
                return Err(Error::BlowUp { time: time + h });
            }
            total += *x;
        }
        m.copy_from_slice(next);
        if total < ABSORPTION {
            m.iter_mut().for_each(|x| *x = 0.0);
            return Ok(true);
        }
        Ok(false)
    }
}

/// One path recorded at every grid point, with its jump log.
pub fn simulate_mcb(
    mech: &Mechanism,
    y0: &[f64],
    t_max: f64,
    dt: f64,
    seed: u64,
) -> Result<PathSample> {
    simulate_mcb_with(mech, y0, &McbOptions::new(t_max, dt), seed)
}

pub fn simulate_mcb_with(
    mech: &Mechanism,
    y0: &[f64],
    opts: &McbOptions,
    seed: u64,
) -> Result<PathSample> {
    mech.check_vector("initial mass", y0)?;
    let (n, h) = time_grid(opts.t_max, opts.dt)?;
    let every = opts.record_every.max(1);
    let stepper = Stepper::new(mech, opts.scheme);
    let mut rng = rng_from_seed(seed);
    let mut m = y0.to_vec();
    let mut next = vec![0.0; m.len()];
    let mut path = PathSample {
        seed,
        times: vec![0.0],
        mass: vec![m.clone()],
        extinct_by: None,
        jumps: Vec::new(),
    };
    if m.iter().sum::<f64>() < ABSORPTION {
        m.iter_mut().for_each(|x| *x = 0.0);
        path.mass[0] = m.clone();
        path.extinct_by = Some(0.0);
    }
    for k in 0..n {
        let time = k as f64 * h;
        if path.extinct_by.is_none() {
            let log = opts.record_jumps.then_some(&mut path.jumps);
            if stepper.step(&mut m, &mut next, time, h, &mut rng, log)? {
                path.extinct_by = Some(time + h);
            }
        }
        if (k + 1) % every == 0 || k + 1 == n {
            path.times.push((k + 1) as f64 * h);
            path.mass.push(m.clone());
        }
    }
    Ok(path)
}

/// `n_paths` independent paths; path `k` uses `derive_seed(master_seed, k)`.
pub fn simulate_mcb_batch(
    mech: &Mechanism,
    y0: &[f64],
    opts: &McbOptions,
    master_seed: u64,
    n_paths: usize,
) -> Result<Vec<PathSample>> {
    (0..n_paths)
        .into_par_iter()
        .map(|k| simulate_mcb_with(mech, y0, opts, derive_seed(master_seed, k as u64)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtinctionFrequency {
    pub paths: usize,
    pub extinct: usize,
    pub fraction: f64,
    pub se: f64,
}

/// Fraction of paths absorbed by `opts.t_max`; recording options are ignored. A path whose `[w, Y]` exceeds 40
/// is counted as surviving without further simulation, since its remaining
/// extinction probability is below `e^{−40}`.
pub fn extinction_frequency(
    mech: &Mechanism,
    w: &[f64],
    y0: &[f64],
    opts: &McbOptions,
    n_paths: usize,
    master_seed: u64,
) -> Result<ExtinctionFrequency> {
    mech.check_vector("initial mass", y0)?;
    mech.check_vector("w", w)?;
    if n_paths == 0 {
        return Err(Error::InvalidParameter("at least one path required".into()));
    }
    let (n, h) = time_grid(opts.t_max, opts.dt)?;
    let stepper = Stepper::new(mech, opts.scheme);
    let outcomes: Vec<bool> = (0..n_paths)
        .into_par_iter()
        .map(|p| -> Result<bool> {
            let mut rng = rng_from_seed(derive_seed(master_seed, p as u64));
            let mut m = y0.to_vec();
            let mut next = vec![0.0; m.len()];
            if m.iter().sum::<f64>() < ABSORPTION {
                return Ok(true);
            }
            for k in 0..n {
                if stepper.step(&mut m, &mut next, k as f64 * h, h, &mut rng, None)? {
                    return Ok(true);
                }
                let load: f64 = w.iter().zip(&m).map(|(a, b)| a * b).sum();
                if load > 40.0 {
                    return Ok(false);
                }
            }
            Ok(false)
        })
        .collect::<Result<_>>()?;
    let extinct = outcomes.iter().filter(|e| **e).count();
    let fraction = extinct as f64 / n_paths as f64;
    Ok(ExtinctionFrequency {
        paths: n_paths,
        extinct,
        fraction,
        se: (fraction * (1.0 - fraction) / n_paths as f64).sqrt(),
    })
}
