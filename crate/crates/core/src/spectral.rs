//! Mean matrix, Perron–Frobenius data and criticality.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::Mechanism;
use crate::tolerances::{CRITICAL_BAND, EIGEN_IMAG, EIGEN_RESIDUAL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criticality {
    Supercritical,
    Critical,
    Subcritical,
}

impl Criticality {
    pub fn classify(gamma: f64) -> Self {
        if gamma.abs() <= CRITICAL_BAND {
            Criticality::Critical
        } else if gamma > 0.0 {
            Criticality::Supercritical
        } else {
            Criticality::Subcritical
        }
    }
}

/// Leading eigen-data of `B̃ᵗ`: `B̃ᵗu = Γu`, `B̃v = Γv`, `‖u‖₂ = 1`,
/// `[u, v] = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralData {
    #[serde(skip)]
    pub b_tilde: DMatrix<f64>,
    pub gamma: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub criticality: Criticality,
}

impl SpectralData {
    /// `M(t) = exp(t B̃ᵗ)`.
    pub fn mean_matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        mean_matrix(&self.b_tilde, t)
    }

    pub fn u_max(&self) -> f64 {
        self.u.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn u_min(&self) -> f64 {
        self.u.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn perron_frobenius(mech: &Mechanism) -> Result<SpectralData> {
    perron_frobenius_of(&mech.effective_drift())
}

/// Perron–Frobenius data for a given `B̃`.
pub fn perron_frobenius_of(b_tilde: &DMatrix<f64>) -> Result<SpectralData> {
    let a = b_tilde.transpose();
    if !is_irreducible(&a) {
        return Err(Error::Reducible);
    }
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let (gamma, u, v) = match leading_by_spectrum(&a, scale) {
        Some(found) => found,
        None => {
            log::debug!("falling back to power iteration for the leading eigenpair");
            leading_by_power(&a, scale)?
        }
    };
    Ok(SpectralData {
        b_tilde: b_tilde.clone(),
        gamma,
        u,
        v,
        criticality: Criticality::classify(gamma),
    })
}

/// Strong connectivity of the graph `i → j` for `a_{ij} ≠ 0`, `i ≠ j`.
pub fn is_irreducible(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let reaches_all = |edge: &dyn Fn(usize, usize) -> bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if !seen[j] && i != j && edge(i, j) {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reaches_all(&|i, j| a[(i, j)] != 0.0) && reaches_all(&|i, j| a[(j, i)] != 0.0)
}

/// `M(t) = exp(t B̃ᵗ)` by scaling and squaring.
pub fn mean_matrix(b_tilde: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !(t >= 0.0) {
        return Err(Error::NegativeTime(t));
    }
    Ok((b_tilde.transpose() * t).exp())
}

type Eigen = (f64, Vec<f64>, Vec<f64>);

fn leading_by_spectrum(a: &DMatrix<f64>, scale: f64) -> Option<Eigen> {
    let spectrum = a.clone().complex_eigenvalues();
    let lead = spectrum
        .iter()
        .max_by(|x, y| x.re.total_cmp(&y.re))
        .copied()?;
    if lead.im.abs() > EIGEN_IMAG * scale {
        return None;
    }
    let gamma = lead.re;
    let u = positive_null_vector(a, gamma)?;
    let v = positive_null_vector(&a.transpose(), gamma)?;
    finish(a, gamma, u, v, scale)
}

/// Null vector of `a − γI` from the smallest singular value, signed positive.
fn positive_null_vector(a: &DMatrix<f64>, gamma: f64) -> Option<Vec<f64>> {
    let n = a.nrows();
    let shifted = a - DMatrix::identity(n, n) * gamma;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t?;
    let k = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))?
        .0;
    let mut x: Vec<f64> = v_t.row(k).iter().copied().collect();
    if x.iter().sum::<f64>() < 0.0 {
        x.iter_mut().for_each(|c| *c = -*c);
    }
    x.iter().all(|c| *c > 0.0).then_some(x)
}

fn leading_by_power(a: &DMatrix<f64>, scale: f64) -> Result<Eigen> {
    let n = a.nrows();
    let c = 1.0 + (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let shifted = a + DMatrix::identity(n, n) * c;
    let iterate = |m: &DMatrix<f64>| -> Vec<f64> {
        let mut x = nalgebra::DVector::from_element(n, 1.0 / (n as f64).sqrt());
        for _ in 0..1_000_000 {
            let mut y = m * &x;
            y /= y.norm();
            let change = (&y - &x).amax();
            x = y;
            if change < 1e-15 {
                break;
            }
        }
        x.iter().copied().collect()
    };
    let u = iterate(&shifted);
    let v = iterate(&shifted.transpose());
    let au = a * nalgebra::DVector::from_column_slice(&u);
    let gamma = au.dot(&nalgebra::DVector::from_column_slice(&u));
    finish(a, gamma, u, v, scale)
        .ok_or_else(|| Error::Eigen("power iteration did not produce a positive eigenpair".into()))
}

fn finish(a: &DMatrix<f64>, gamma: f64, u: Vec<f64>, v: Vec<f64>, scale: f64) -> Option<Eigen> {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let u: Vec<f64> = u.iter().map(|x| x / nu).collect();
    let uv: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    let v: Vec<f64> = v.iter().map(|x| x / uv).collect();
    let uvec = nalgebra::DVector::from_column_slice(&u);
    let residual = (a * &uvec - &uvec * gamma).norm();
    (residual <= EIGEN_RESIDUAL * scale).then_some((gamma, u, v))
}
