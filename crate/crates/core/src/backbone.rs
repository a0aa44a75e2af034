//! Law of the prolific backbone: branch rates, offspring tables, the
//! generating function `F`, the immigration exponent `φ` and joint sampling
//! of offspring vectors with their branch-point immigrant mass.
//!
//! For type `i` the event mixture, whose weights sum to `w_i q_i`, is
//!
//! ```text
//! binary          β_i w_i²                                 j = 2e_i,  mass 0
//! single child k  B_{ki} w_k                 (k ≠ i)       j = e_k,   mass 0
//! atom m          r_m e^{−s_m}(e^{s_m} − 1 − w_i y_{m,i})  j ~ ⊗Poisson(w·y_m) | j ∉ {0, e_i},  mass y_m
//! ```
//!
//! with `s_m = [w, y_m]`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::extinction::ExtinctionVector;
use crate::mechanism::Mechanism;
use crate::tolerances::REJECTION_FLOOR;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ComponentKind {
    Binary,
    SingleChild { child: usize },
    Atom { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureComponent {
    #[serde(flatten)]
    pub kind: ComponentKind,
    pub weight: f64,
    /// Branch-point immigrant mass carried by this component.
    pub mass: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PmfEntry {
    pub j: Vec<u32>,
    pub p: f64,
}

/// `p^{(i)}_j` for `|j| ≤ J_MAX`, plus the mass of `|j| > J_MAX`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PmfTable {
    pub entries: Vec<PmfEntry>,
    pub tail: f64,
}

impl PmfTable {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.p).sum::<f64>() + self.tail
    }

    pub fn get(&self, j: &[u32]) -> f64 {
        self.entries.iter().find(|e| e.j == j).map_or(0.0, |e| e.p)
    }
}

/// Data for `φ(i, λ) = 2β_iλ_i + Σ_k r_k e^{−[w,y_k]} (1 − e^{−[λ,y_k]}) y_{k,i}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhiParams {
    pub two_beta: Vec<f64>,
    /// Per type: (tilted rate `r e^{−[w,y]}`, jump `y`).
    pub tilted: Vec<Vec<(f64, Vec<f64>)>>,
}

impl PhiParams {
    pub fn eval(&self, i: usize, lam: &[f64]) -> f64 {
        let mut value = self.two_beta[i] * lam[i];
        for (rate, y) in &self.tilted[i] {
            let x: f64 = y.iter().zip(lam).map(|(a, b)| a * b).sum();
            value += rate * -(-x).exp_m1() * y[i];
        }
        value
    }
}

#[derive(Debug, Clone)]
enum AtomSampler {
    Rejection(Vec<Option<Poisson<f64>>>),
    /// Cumulative probabilities over the conditioned support.
    Table(Vec<(Vec<u32>, f64)>),
}

#[derive(Debug, Clone, Serialize)]
pub struct BackboneSpec {
    pub ell: usize,
    pub w: Vec<f64>,
    pub q: Vec<f64>,
    pub j_max: usize,
    pub mixture: Vec<Vec<MixtureComponent>>,
    pub pmf: Vec<PmfTable>,
    pub phi: PhiParams,
    #[serde(skip)]
    samplers: Vec<Vec<AtomSampler>>,
    #[serde(skip)]
    cumulative: Vec<Vec<f64>>,
}

/// A backbone branch event: offspring counts and branch-point immigrant mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchEvent {
    pub offspring: Vec<u32>,
    pub mass: Vec<f64>,
}

/// `q_i = ∂_iψ(i, w)`.
pub fn branch_rates(mech: &Mechanism, w: &[f64]) -> Result<Vec<f64>> {
    (0..mech.ell())
        .map(|i| {
            let qi = mech.psi_grad(i, w)?[i];
            if qi > 0.0 {
                Ok(qi)
            } else {
                Err(Error::NonPositiveBranchRate {
                    index: i,
                    value: qi,
                })
            }
        })
        .collect()
}

/// Event mixture of type `i`; weights sum to `w_i q_i` when `ψ(i, w) = 0`.
pub fn mixture(mech: &Mechanism, w: &[f64], i: usize) -> Vec<MixtureComponent> {
    let ell = mech.ell();
    let zero = vec![0.0; ell];
    let mut out = Vec::new();
    let binary = mech.beta()[i] * w[i] * w[i];
    if binary > 0.0 {
        out.push(MixtureComponent {
            kind: ComponentKind::Binary,
            weight: binary,
            mass: zero.clone(),
        });
    }
    for k in (0..ell).filter(|k| *k != i) {
        let weight = mech.b()[(k, i)] * w[k];
        if weight > 0.0 {
            out.push(MixtureComponent {
                kind: ComponentKind::SingleChild { child: k },
                weight,
                mass: zero.clone(),
            });
        }
    }
    for (m, atom) in mech.atoms(i).iter().enumerate() {
        let s = atom.dot(w);
        // e^{−s}(e^s − 1 − w_i y_i) = −expm1(−s) − e^{−s} w_i y_i
        let weight = atom.rate() * (-(-s).exp_m1() - (-s).exp() * w[i] * atom.jump()[i]);
        if weight > 0.0 {
            out.push(MixtureComponent {
                kind: ComponentKind::Atom { index: m },
                weight,
                mass: atom.jump().to_vec(),
            });
        }
    }
    out
}

fn poisson_row(lambda: f64, n_max: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(n_max + 1);
    let mut p = (-lambda).exp();
    row.push(p);
    for n in 1..=n_max {
        p *= lambda / n as f64;
        row.push(p);
    }
    row
}

/// `P(Poisson(s) > n)` by direct summation of the upper terms.
pub fn poisson_upper_tail(s: f64, n: usize) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let k0 = n + 1;
    let ln_fact: f64 = (1..=k0).map(|k| (k as f64).ln()).sum();
    let mut term = (-s + k0 as f64 * s.ln() - ln_fact).exp();
    let mut sum = 0.0;
    let mut k = k0;
    while term > 0.0 && (term > 1e-18 * sum || k < k0 + 5) && k < k0 + 10_000 {
        sum += term;
        k += 1;
        term *= s / k as f64;
    }
    sum
}

/// Visits every `j` with `|j| ≤ n_max` supported on `support`.
fn for_each_composition<F: FnMut(&[u32])>(ell: usize, support: &[usize], n_max: usize, mut f: F) {
    fn rec<F: FnMut(&[u32])>(
        j: &mut Vec<u32>,
        support: &[usize],
        pos: usize,
        left: usize,
        f: &mut F,
    ) {
        if pos == support.len() {
            f(j);
            return;
        }
        for n in 0..=left {
            j[support[pos]] = n as u32;
            rec(j, support, pos + 1, left - n, f);
        }
        j[support[pos]] = 0;
    }
    let mut j = vec![0u32; ell];
    rec(&mut j, support, 0, n_max, &mut f);
}

fn is_excluded(j: &[u32], i: usize) -> bool {
    let total: u32 = j.iter().sum();
    total == 0 || (total == 1 && j[i] == 1)
}

/// Conditioned product-Poisson support of one atom: `(j, P(j))` for
/// `j ∉ {0, e_i}`, `|j| ≤ n_max`.
fn atom_support(lambda: &[f64], i: usize, n_max: usize) -> Vec<(Vec<u32>, f64)> {
    let support: Vec<usize> = (0..lambda.len()).filter(|k| lambda[*k] > 0.0).collect();
    let rows: Vec<Vec<f64>> = lambda.iter().map(|l| poisson_row(*l, n_max)).collect();
    let mut out = Vec::new();
    for_each_composition(lambda.len(), &support, n_max, |j| {
        if is_excluded(j, i) {
            return;
        }
        let p: f64 = j
            .iter()
            .enumerate()
            .map(|(k, n)| rows[k][*n as usize])
            .product();
        out.push((j.to_vec(), p));
    });
    out
}

/// Offspring tables `p^{(i)}` truncated at `|j| ≤ j_max`.
pub fn offspring_pmf(mech: &Mechanism, w: &[f64], q: &[f64], j_max: usize) -> Vec<PmfTable> {
    let ell = mech.ell();
    (0..ell)
        .map(|i| {
            let norm = w[i] * q[i];
            let mut table: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
            let mut tail = 0.0;
            if mech.beta()[i] > 0.0 {
                let mut j = vec![0u32; ell];
                j[i] = 2;
                *table.entry(j).or_default() += mech.beta()[i] * w[i] * w[i];
            }
            for k in (0..ell).filter(|k| *k != i) {
                let weight = mech.b()[(k, i)] * w[k];
                if weight > 0.0 {
                    let mut j = vec![0u32; ell];
                    j[k] = 1;
                    *table.entry(j).or_default() += weight;
                }
            }
            for atom in mech.atoms(i) {
                let lambda: Vec<f64> = atom.jump().iter().zip(w).map(|(y, wk)| y * wk).collect();
                for (j, p) in atom_support(&lambda, i, j_max) {
                    *table.entry(j).or_default() += atom.rate() * p;
                }
                tail += atom.rate() * poisson_upper_tail(atom.dot(w), j_max);
            }
            PmfTable {
                entries: table
                    .into_iter()
                    .filter(|(_, p)| *p > 0.0)
                    .map(|(j, p)| PmfEntry { j, p: p / norm })
                    .collect(),
                tail: tail / norm,
            }
        })
        .collect()
}

fn check_unit_cube(s: &[f64]) -> Result<()> {
    if s.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::OutsideUnitCube(s.to_vec()));
    }
    Ok(())
}

/// `F_i(s) = ψ(i, w(1 − s))/w_i`.
pub fn generating_fn(mech: &Mechanism, w: &[f64], i: usize, s: &[f64]) -> Result<f64> {
    mech.check_index(i)?;
    if s.len() != mech.ell() {
        return Err(Error::DimensionMismatch {
            what: "s",
            expected: mech.ell(),
            got: s.len(),
        });
    }
    check_unit_cube(s)?;
    let theta: Vec<f64> = w.iter().zip(s).map(|(a, b)| a * (1.0 - b)).collect();
    Ok(mech.psi(i, &theta)? / w[i])
}

/// `q_i Σ_j (s^j − s_i) p^{(i)}_j` over the truncated table.
pub fn generating_fn_from_pmf(spec: &BackboneSpec, i: usize, s: &[f64]) -> Result<f64> {
    if i >= spec.ell {
        return Err(Error::IndexOutOfRange {
            index: i,
            ell: spec.ell,
        });
    }
    check_unit_cube(s)?;
    let sum: f64 = spec.pmf[i]
        .entries
        .iter()
        .map(|e| {
            let sj: f64 = e.j.iter().zip(s).map(|(n, x)| x.powi(*n as i32)).product();
            (sj - s[i]) * e.p
        })
        .sum();
    Ok(spec.q[i] * sum)
}

/// `φ(i, λ)`.
pub fn immigration_exponent(mech: &Mechanism, w: &[f64], i: usize, lam: &[f64]) -> Result<f64> {
    mech.check_index(i)?;
    mech.check_vector("lambda", lam)?;
    Ok(phi_params(mech, w).eval(i, lam))
}

fn phi_params(mech: &Mechanism, w: &[f64]) -> PhiParams {
    PhiParams {
        two_beta: mech.beta().iter().map(|b| 2.0 * b).collect(),
        tilted: (0..mech.ell())
            .map(|i| {
                mech.atoms(i)
                    .iter()
                    .map(|a| (a.rate() * (-a.dot(w)).exp(), a.jump().to_vec()))
                    .collect()
            })
            .collect(),
    }
}

/// `m_{ik} = Σ_j j_k p^{(i)}_j` in closed form (no truncation).
pub fn mean_offspring_matrix(mech: &Mechanism, w: &[f64], q: &[f64]) -> DMatrix<f64> {
    let ell = mech.ell();
    DMatrix::from_fn(ell, ell, |i, k| {
        let mut total = if i == k {
            2.0 * mech.beta()[i] * w[i] * w[i]
        } else {
            mech.b()[(k, i)] * w[k]
        };
        for atom in mech.atoms(i) {
            total += atom.rate() * w[k] * atom.jump()[k];
            if k == i {
                total -= atom.rate() * w[i] * atom.jump()[i] * (-atom.dot(w)).exp();
            }
        }
        total / (w[i] * q[i])
    })
}

impl BackboneSpec {
    pub fn new(mech: &Mechanism, w: &ExtinctionVector, j_max: usize) -> Result<Self> {
        if j_max < 2 {
            return Err(Error::InvalidParameter(format!(
                "J_MAX must be ≥ 2, got {j_max}"
            )));
        }
        let w = w.w.clone();
        mech.check_vector("w", &w)?;
        let q = branch_rates(mech, &w)?;
        let ell = mech.ell();
        let mixture: Vec<Vec<MixtureComponent>> = (0..ell).map(|i| mixture(mech, &w, i)).collect();
        let mut cumulative = Vec::with_capacity(ell);
        for (i, comps) in mixture.iter().enumerate() {
            if comps.is_empty() {
                return Err(Error::ZeroMixture(i));
            }
            let mut acc = 0.0;
            cumulative.push(
                comps
                    .iter()
                    .map(|c| {
                        acc += c.weight;
                        acc
                    })
                    .collect(),
            );
        }
        let samplers = (0..ell)
            .map(|i| {
                mech.atoms(i)
                    .iter()
                    .map(|atom| {
                        let lambda: Vec<f64> =
                            atom.jump().iter().zip(&w).map(|(y, wk)| y * wk).collect();
                        let s = atom.dot(&w);
                        let acceptance = -(-s).exp_m1() - (-s).exp() * lambda[i];
                        if acceptance < REJECTION_FLOOR {
                            let mut acc = 0.0;
                            let table = atom_support(&lambda, i, j_max)
                                .into_iter()
                                .map(|(j, p)| {
                                    acc += p;
                                    (j, acc)
                                })
                                .collect();
                            AtomSampler::Table(table)
                        } else {
                            AtomSampler::Rejection(
                                lambda.iter().map(|l| Poisson::new(*l).ok()).collect(),
                            )
                        }
                    })
                    .collect()
            })
            .collect();
        let pmf = offspring_pmf(mech, &w, &q, j_max);
        Ok(Self {
            ell,
            phi: phi_params(mech, &w),
            w,
            q,
            j_max,
            mixture,
            pmf,
            samplers,
            cumulative,
        })
    }

    /// Total mixture weight of type `i`.
    pub fn mixture_total(&self, i: usize) -> f64 {
        *self.cumulative[i].last().expect("nonempty mixture")
    }

    pub fn generator_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.ell, self.ell, |i, k| {
            self.q[i] * (m[(i, k)] - if i == k { 1.0 } else { 0.0 })
        })
    }
}

/// Draws `(j, y)` from `p^{(i)}_j η^{(i)}_j(dy)` through the event mixture.
pub fn sample_branch_event<R: Rng + ?Sized>(
    spec: &BackboneSpec,
    i: usize,
    rng: &mut R,
) -> Result<BranchEvent> {
    if i >= spec.ell {
        return Err(Error::IndexOutOfRange {
            index: i,
            ell: spec.ell,
        });
    }
    let cum = &spec.cumulative[i];
    let total = *cum.last().ok_or(Error::ZeroMixture(i))?;
    if !(total > 0.0) {
        return Err(Error::ZeroMixture(i));
    }
    let u = rng.random::<f64>() * total;
    let c = cum.partition_point(|x| *x <= u).min(cum.len() - 1);
    let comp = &spec.mixture[i][c];
    let mut offspring = vec![0u32; spec.ell];
    match comp.kind {
        ComponentKind::Binary => offspring[i] = 2,
        ComponentKind::SingleChild { child } => offspring[child] = 1,
        ComponentKind::Atom { index } => match &spec.samplers[i][index] {
            AtomSampler::Rejection(dists) => loop {
                for (o, d) in offspring.iter_mut().zip(dists) {
                    *o = d.as_ref().map_or(0, |d| d.sample(rng) as u32);
                }
                if !is_excluded(&offspring, i) {
                    break;
                }
            },
            AtomSampler::Table(table) => {
                let top = table.last().map_or(0.0, |e| e.1);
                let u = rng.random::<f64>() * top;
                let k = table.partition_point(|e| e.1 <= u).min(table.len() - 1);
                offspring.copy_from_slice(&table[k].0);
            }
        },
    }
    Ok(BranchEvent {
        offspring,
        mass: comp.mass.clone(),
    })
}
