//! Exact event-driven simulation of the backbone particle system.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::Serialize;

use super::{mcb::sample_poisson, rng_from_seed};
use crate::backbone::{sample_branch_event, BackboneSpec};
use crate::error::{Error, Result};
use crate::tolerances::MAX_PARTICLES;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialParticle {
    pub kind: usize,
    pub position: Option<Vec<f64>>,
}

/// Per-type Brownian motion for particle positions, sampled every `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    pub diffusivity: Vec<f64>,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Particle {
    pub id: usize,
    pub parent: Option<usize>,
    pub kind: usize,
    pub birth: f64,
    /// `None` while alive at the horizon.
    pub death: Option<f64>,
    pub offspring: Option<Vec<u32>>,
    /// `(time, position)` samples from birth to death or the horizon.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<(f64, Vec<f64>)>>,
}

impl Particle {
    pub fn alive_at(&self, t: f64) -> bool {
        self.birth <= t && self.death.is_none_or(|d| t < d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImmigrationKind {
    Continuous,
    Discontinuous,
    Branchpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImmigrationEvent {
    pub time: f64,
    pub kind: ImmigrationKind,
    pub mass: Vec<f64>,
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackboneForest {
    pub t_max: f64,
    pub particles: Vec<Particle>,
    pub immigration_events: Vec<ImmigrationEvent>,
}

impl BackboneForest {
    /// Particles alive at `t`, counted per type.
    pub fn counts_at(&self, ell: usize, t: f64) -> Vec<usize> {
        let mut counts = vec![0; ell];
        for p in self.particles.iter().filter(|p| p.alive_at(t)) {
            counts[p.kind] += 1;
        }
        counts
    }

    pub fn population_at(&self, t: f64) -> usize {
        self.particles.iter().filter(|p| p.alive_at(t)).count()
    }
}

/// Draws `Poisson(w_i μ_i)` initial particles of each type.
pub fn poissonize_initial(w: &[f64], mu: &[f64], seed: u64) -> Result<Vec<InitialParticle>> {
    poissonize_with(w, mu, &mut rng_from_seed(seed))
}

pub fn poissonize_with<R: Rng + ?Sized>(
    w: &[f64],
    mu: &[f64],
    rng: &mut R,
) -> Result<Vec<InitialParticle>> {
    if w.len() != mu.len() {
        return Err(Error::DimensionMismatch {
            what: "mu",
            expected: w.len(),
            got: mu.len(),
        });
    }
    if let Some((index, &value)) = mu.iter().enumerate().find(|(_, x)| !(**x >= 0.0)) {
        return Err(Error::NegativeCoordinate {
            what: "mu",
            index,
            value,
        });
    }
    let mut out = Vec::new();
    for (i, (wi, mi)) in w.iter().zip(mu).enumerate() {
        for _ in 0..sample_poisson(rng, wi * mi) {
            out.push(InitialParticle {
                kind: i,
                position: None,
            });
        }
    }
    Ok(out)
}

fn brownian_path<R: Rng + ?Sized>(
    rng: &mut R,
    start: Vec<f64>,
    from: f64,
    to: f64,
    diffusivity: f64,
    dt: f64,
) -> Vec<(f64, Vec<f64>)> {
    let mut path = vec![(from, start)];
    let mut t = from;
    while t < to {
        let h = dt.min(to - t);
        t = if h < dt { to } else { t + h };
        let prev = &path.last().expect("path starts at birth").1;
        let sd = (2.0 * diffusivity * h).sqrt();
        let next = prev
            .iter()
            .map(|x| x + sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        path.push((t, next));
    }
    path
}

/// Simulates the backbone on `[0, t_max]`. Particles are processed in
/// breadth-first order from one RNG, each carrying an `Exp(q_i)` lifetime.
pub fn simulate_backbone(
    spec: &BackboneSpec,
    nu0: &[InitialParticle],
    t_max: f64,
    seed: u64,
    motion: Option<&Motion>,
) -> Result<BackboneForest> {
    simulate_backbone_with(spec, nu0, t_max, &mut rng_from_seed(seed), motion)
}

/// A particle waiting to be simulated: parent, type, birth time, birth position.
type Pending = (Option<usize>, usize, f64, Option<Vec<f64>>);

pub(crate) fn simulate_backbone_with<R: Rng + ?Sized>(
    spec: &BackboneSpec,
    nu0: &[InitialParticle],
    t_max: f64,
    rng: &mut R,
    motion: Option<&Motion>,
) -> Result<BackboneForest> {
    if !(t_max >= 0.0) {
        return Err(Error::NegativeTime(t_max));
    }
    if let Some(m) = motion {
        if m.diffusivity.len() != spec.ell {
            return Err(Error::DimensionMismatch {
                what: "diffusivity",
                expected: spec.ell,
                got: m.diffusivity.len(),
            });
        }
        if !(m.dt > 0.0) || m.diffusivity.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::InvalidParameter(
                "motion needs dt > 0 and diffusivity ≥ 0".into(),
            ));
        }
    }
    let lifetimes: Vec<Exp<f64>> = spec
        .q
        .iter()
        .enumerate()
        .map(|(index, q)| {
            Exp::new(*q).map_err(|_| Error::NonPositiveBranchRate { index, value: *q })
        })
        .collect::<Result<_>>()?;

    let mut forest = BackboneForest {
        t_max,
        particles: Vec::with_capacity(nu0.len()),
        immigration_events: Vec::new(),
    };
    let mut queue: VecDeque<Pending> = nu0
        .iter()
        .map(|p| {
            if p.kind >= spec.ell {
                return Err(Error::IndexOutOfRange {
                    index: p.kind,
                    ell: spec.ell,
                });
            }
            let pos = motion.map(|_| p.position.clone().unwrap_or_else(|| vec![0.0]));
            Ok((None, p.kind, 0.0, pos))
        })
        .collect::<Result<_>>()?;

    while let Some((parent, kind, birth, position)) = queue.pop_front() {
        if forest.particles.len() >= MAX_PARTICLES {
            return Err(Error::PopulationExplosion {
                limit: MAX_PARTICLES,
                time: birth,
                partial: Box::new(forest),
            });
        }
        let id = forest.particles.len();
        let end = birth + lifetimes[kind].sample(rng);
        let dies = end < t_max;
        let stop = if dies { end } else { t_max };
        let path = match (motion, position) {
            (Some(m), Some(start)) => Some(brownian_path(
                rng,
                start,
                birth,
                stop,
                m.diffusivity[kind],
                m.dt,
            )),
            _ => None,
        };
        let mut particle = Particle {
            id,
            parent,
            kind,
            birth,
            death: None,
            offspring: None,
            path,
        };
        if dies {
            let event = sample_branch_event(spec, kind, rng)?;
            if event.mass.iter().any(|x| *x > 0.0) {
                forest.immigration_events.push(ImmigrationEvent {
                    time: end,
                    kind: ImmigrationKind::Branchpoint,
                    mass: event.mass.clone(),
                    source: id,
                });
            }
            let end_pos = particle
                .path
                .as_ref()
                .map(|p| p.last().expect("nonempty").1.clone());
            for (child, n) in event.offspring.iter().enumerate() {
                for _ in 0..*n {
                    queue.push_back((Some(id), child, end, end_pos.clone()));
                }
            }
            particle.death = Some(end);
            particle.offspring = Some(event.offspring);
        }
        forest.particles.push(particle);
    }
    Ok(forest)
}
