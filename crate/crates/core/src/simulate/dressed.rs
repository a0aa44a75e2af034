//! The dressed process: backbone plus three immigration streams of
//! conditioned copies, plus an independent conditioned copy from `μ`.
//!
//! Along a living type-`i` particle,
//! * continuous immigration arrives at rate `2β_i/ε` with mass `ε e_i`
//!   (the ε-mass stand-in for the excursion measure);
//! * discontinuous immigration arrives at rate `Σ_k r_k y_{k,i} e^{−[w,y_k]}`
//!   with mass `y_k`, atom `k` chosen proportionally to its term;
//! * branch events carry the mass drawn with the offspring vector.
//!
//! Conditioned copies are not simulated one by one. By the branching
//! property a sum of independent `ψ†`-processes started at different times
//! is a single `ψ†`-process into which each immigrant's initial mass is
//! injected at its arrival time, so one state is stepped on the grid and
//! every arrival is added at its nearest grid point.

use rand::Rng;
use serde::Serialize;

use super::forest::simulate_backbone_with;
use super::mcb::{sample_poisson, Scheme, Stepper};
use super::{
    rng_from_seed, time_grid, BackboneForest, ImmigrationEvent, ImmigrationKind, InitialParticle,
    PathSample,
};
use crate::backbone::BackboneSpec;
use crate::error::{Error, Result};
use crate::mechanism::Mechanism;

#[derive(Debug, Clone, PartialEq)]
pub struct DressedOptions {
    pub t_max: f64,
    pub dt: f64,
    pub epsilon: f64,
    pub record_every: usize,
    pub scheme: Scheme,
}

impl DressedOptions {
    pub fn new(t_max: f64, dt: f64, epsilon: f64) -> Self {
        Self {
            t_max,
            dt,
            epsilon,
            record_every: 1,
            scheme: Scheme::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DressedSample {
    /// Total mass of the dressed process.
    pub path: PathSample,
    pub forest: BackboneForest,
}

fn along_particles<R: Rng + ?Sized>(
    forest: &BackboneForest,
    mech: &Mechanism,
    w: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Vec<ImmigrationEvent> {
    let ell = mech.ell();
    let mut events = Vec::new();
    for p in &forest.particles {
        let i = p.kind;
        let end = p.death.unwrap_or(forest.t_max).min(forest.t_max);
        let span = end - p.birth;
        if span <= 0.0 {
            continue;
        }
        let continuous = 2.0 * mech.beta()[i] / epsilon;
        for _ in 0..sample_poisson(rng, continuous * span) {
            let mut mass = vec![0.0; ell];
            mass[i] = epsilon;
            events.push(ImmigrationEvent {
                time: p.birth + span * rng.random::<f64>(),
                kind: ImmigrationKind::Continuous,
                mass,
                source: p.id,
            });
        }
        let weights: Vec<f64> = mech
            .atoms(i)
            .iter()
            .map(|a| a.rate() * a.jump()[i] * (-a.dot(w)).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        for _ in 0..sample_poisson(rng, total * span) {
            let time = p.birth + span * rng.random::<f64>();
            let mut u = rng.random::<f64>() * total;
            let mut k = 0;
            while k + 1 < weights.len() && u >= weights[k] {
                u -= weights[k];
                k += 1;
            }
            events.push(ImmigrationEvent {
                time,
                kind: ImmigrationKind::Discontinuous,
                mass: mech.atoms(i)[k].jump().to_vec(),
                source: p.id,
            });
        }
    }
    events
}

/// Simulates the dressed process on `[0, t_max]`. `mech` supplies the
/// immigration rates, `mech_dagger` the dynamics of the immigrants and of
/// the independent copy started from `mu0`.
pub fn simulate_dressed(
    mech: &Mechanism,
    mech_dagger: &Mechanism,
    spec: &BackboneSpec,
    nu0: &[InitialParticle],
    mu0: Option<&[f64]>,
    opts: &DressedOptions,
    seed: u64,
) -> Result<DressedSample> {
    if !(opts.epsilon > 0.0 && opts.epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {}",
            opts.epsilon
        )));
    }
    let ell = mech.ell();
    let mut m = match mu0 {
        Some(mu) => {
            mech.check_vector("mu", mu)?;
            mu.to_vec()
        }
        None => vec![0.0; ell],
    };
    let (n, h) = time_grid(opts.t_max, opts.dt)?;
    let every = opts.record_every.max(1);
    let mut rng = rng_from_seed(seed);

    let mut forest = simulate_backbone_with(spec, nu0, opts.t_max, &mut rng, None)?;
    let streams = along_particles(&forest, mech, &spec.w, opts.epsilon, &mut rng);
    forest.immigration_events.extend(streams);
    forest
        .immigration_events
        .sort_by(|a, b| a.time.total_cmp(&b.time));

    let stepper = Stepper::new(mech_dagger, opts.scheme);
    let mut next = vec![0.0; ell];
    let mut path = PathSample {
        seed,
        times: Vec::with_capacity(n / every + 2),
        mass: Vec::with_capacity(n / every + 2),
        extinct_by: None,
        jumps: Vec::new(),
    };
    let mut pending = forest.immigration_events.iter().peekable();
    for k in 0..=n {
        while let Some(ev) = pending.next_if(|ev| (ev.time / h).round() as usize <= k) {
            for (x, y) in m.iter_mut().zip(&ev.mass) {
                *x += y;
            }
        }
        if k % every == 0 || k == n {
            path.times.push(k as f64 * h);
            path.mass.push(m.clone());
        }
        if k < n && m.iter().any(|x| *x > 0.0) {
            stepper.step(&mut m, &mut next, k as f64 * h, h, &mut rng, None)?;
        }
    }
    if path.final_mass().iter().all(|x| *x == 0.0) {
        let alive = path.mass.iter().rposition(|m| m.iter().any(|x| *x > 0.0));
        path.extinct_by = Some(alive.map_or(0.0, |k| path.times[k + 1]));
    }
    Ok(DressedSample { path, forest })
}
