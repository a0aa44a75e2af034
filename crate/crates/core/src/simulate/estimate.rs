//! Laplace-functional estimators over path batches.

use serde::Serialize;

use super::PathSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaplaceEstimate {
    pub estimate: f64,
    pub se: f64,
    pub paths: usize,
    /// Grid time actually used.
    pub time: f64,
}

/// Sample mean and its standard error (`n − 1` denominator).
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean and SE of `e^{−[θ, Y_t]}` across paths, at the grid point nearest
/// to `t`.
pub fn mc_laplace_estimate(paths: &[PathSample], theta: &[f64], t: f64) -> Result<LaplaceEstimate> {
    let first = paths
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty path batch".into()))?;
    let times = &first.times;
    if paths.iter().any(|p| p.times.len() != times.len()) {
        return Err(Error::InvalidParameter("paths do not share a grid".into()));
    }
    let k = times
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
        .map(|(k, _)| k)
        .expect("nonempty grid");
    if (times[k] - t).abs() > 1e-9 * (1.0 + t.abs()) {
        log::warn!(
            "t = {t} is off the grid; using nearest grid time {}",
            times[k]
        );
    }
    let values: Vec<f64> = paths
        .iter()
        .map(|p| {
            let x: f64 = p.mass[k].iter().zip(theta).map(|(a, b)| a * b).sum();
            (-x).exp()
        })
        .collect();
    let (estimate, se) = mean_and_se(&values);
    Ok(LaplaceEstimate {
        estimate,
        se,
        paths: paths.len(),
        time: times[k],
    })
}
