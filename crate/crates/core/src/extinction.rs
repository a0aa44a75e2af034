//! The extinction vector `w`: the nontrivial root of `ψ(w) = 0`, with
//! `P_y(extinction) = e^{−[w, y]}`.
//!
//! Stage 1 follows `v_t(Θ·1)` for large `Θ` until `ψ(v)` is negligible; the
//! flow is attracted to `w` from above. Stage 2 polishes with Newton steps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace::{rk4_step, scratch};
use crate::mechanism::Mechanism;
use crate::spectral::{perron_frobenius, Criticality, SpectralData};
use crate::tolerances::{
    EXTINCTION_DERIV_STOP, EXTINCTION_T_MAX, ROOT_RESIDUAL, THETA_BIG, THETA_DOUBLING,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RootMethod {
    OdeLimit,
    NewtonPolished,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtinctionVector {
    pub w: Vec<f64>,
    /// `‖ψ(w)‖∞`
    pub residual: f64,
    pub method: RootMethod,
    /// Gap between the stage-1 limits from `Θ` and `2Θ`.
    pub doubling_gap: f64,
}

/// Stage-1 trajectory `t ↦ v_t(Θ·1)` on its adaptive grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitTrace {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Follows `dv/dt = −ψ(v)` from `v₀ = Θ·1`. The step is `min(0.05, 0.5/L)`
/// with `L` the row-sum norm of the Jacobian, which keeps explicit RK4 stable
/// through the stiff initial layer.
pub fn ode_limit(mech: &Mechanism, theta_big: f64) -> Result<LimitTrace> {
    let ell = mech.ell();
    let rhs = |y: &[f64], out: &mut [f64]| {
        mech.psi_all_unchecked(y, out);
        out.iter_mut().for_each(|x| *x = -*x);
    };
    let mut v = vec![theta_big; ell];
    let mut next = vec![0.0; ell];
    let mut deriv = vec![0.0; ell];
    let mut s = scratch(ell);
    let mut t = 0.0;
    let mut trace = LimitTrace {
        times: vec![0.0],
        values: vec![v.clone()],
    };
    loop {
        rhs(&v, &mut deriv);
        if deriv.iter().all(|d| d.abs() < EXTINCTION_DERIV_STOP) {
            return Ok(trace);
        }
        if t > EXTINCTION_T_MAX {
            return Err(Error::ExtinctionNotConverged { t, last: v });
        }
        let jac = mech.jacobian_unchecked(&v);
        let lip = (0..ell)
            .map(|i| jac.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let h = f64::min(0.05, 0.5 / lip.max(f64::MIN_POSITIVE));
        rk4_step(&rhs, &v, h, &mut next, &mut s);
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::ExtinctionNotConverged { t, last: v });
        }
        next.iter_mut().for_each(|x| *x = x.max(0.0));
        std::mem::swap(&mut v, &mut next);
        t += h;
        trace.times.push(t);
        trace.values.push(v.clone());
    }
}

fn newton(mech: &Mechanism, start: &[f64]) -> Option<Vec<f64>> {
    let ell = mech.ell();
    let mut w = DVector::from_column_slice(start);
    let mut f = vec![0.0; ell];
    mech.psi_all_unchecked(w.as_slice(), &mut f);
    let mut res = f.iter().map(|x| x.abs()).fold(0.0, f64::max);
    for _ in 0..50 {
        if res <= 1e-15 * (1.0 + w.norm()) {
            break;
        }
        let jac: DMatrix<f64> = mech.jacobian_unchecked(w.as_slice());
        let delta = jac.lu().solve(&DVector::from_column_slice(&f))?;
        let candidate = &w - delta;
        let mut fc = vec![0.0; ell];
        mech.psi_all_unchecked(candidate.as_slice(), &mut fc);
        let rc = fc.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if !(rc < res) {
            break;
        }
        w = candidate;
        f = fc;
        res = rc;
    }
    let drift = (&w - DVector::from_column_slice(start)).norm();
    let ok = w.iter().all(|x| *x > 0.0) && drift <= 1e-3 * (1.0 + norm2(start));
    ok.then(|| w.iter().copied().collect())
}

/// Extinction vector of a supercritical mechanism.
pub fn compute_w(mech: &Mechanism, sd: &SpectralData) -> Result<ExtinctionVector> {
    if sd.criticality != Criticality::Supercritical {
        return Err(Error::NotSupercritical { gamma: sd.gamma });
    }
    if mech.min_beta() <= 0.0 {
        log::warn!("min β_i = 0: finiteness of w is not guaranteed, attempting the ODE limit");
    }
    let trace = ode_limit(mech, THETA_BIG)?;
    let stage1 = trace.values.last().expect("trace is nonempty").clone();
    let doubled = ode_limit(mech, 2.0 * THETA_BIG)?;
    let doubled = doubled.values.last().expect("trace is nonempty");
    let doubling_gap = stage1
        .iter()
        .zip(doubled)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if doubling_gap > THETA_DOUBLING * (1.0 + norm2(&stage1)) {
        log::warn!("ODE limits from Θ and 2Θ differ by {doubling_gap:e}");
    }

    let (w, method) = match newton(mech, &stage1) {
        Some(w) => (w, RootMethod::NewtonPolished),
        None => {
            log::warn!("Newton polish failed; keeping the ODE-limit value");
            (stage1, RootMethod::OdeLimit)
        }
    };
    if let Some(i) = w.iter().position(|x| *x <= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "extinction root has w[{i}] = {}, expected 0 < w_i < ∞",
            w[i]
        )));
    }
    let residual = mech.psi_sup_norm(&w);
    let tolerance = ROOT_RESIDUAL * (1.0 + norm2(&w));
    if residual > tolerance {
        return Err(Error::ResidualTooLarge {
            residual,
            tolerance,
        });
    }
    Ok(ExtinctionVector {
        w,
        residual,
        method,
        doubling_gap,
    })
}

/// `compute_w` with the spectral data computed on the fly.
pub fn extinction_vector(mech: &Mechanism) -> Result<ExtinctionVector> {
    compute_w(mech, &perron_frobenius(mech)?)
}

/// `P_y(extinction) = e^{−[w, y]}`.
pub fn extinction_probability(w: &ExtinctionVector, y: &[f64]) -> Result<f64> {
    if y.len() != w.w.len() {
        return Err(Error::DimensionMismatch {
            what: "initial mass",
            expected: w.w.len(),
            got: y.len(),
        });
    }
    if let Some((index, &value)) = y.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeCoordinate {
            what: "initial mass",
            index,
            value,
        });
    }
    let s: f64 = w.w.iter().zip(y).map(|(a, b)| a * b).sum();
    Ok((-s).exp())
}

/// `ūΓ/(β u̲)` with `β = min β_i`.
pub fn extinction_upper_bound(mech: &Mechanism, sd: &SpectralData) -> Result<f64> {
    if sd.gamma <= 0.0 {
        return Err(Error::NotSupercritical { gamma: sd.gamma });
    }
    let beta = mech.min_beta();
    if beta <= 0.0 {
        return Err(Error::BoundUnavailable);
    }
    Ok(sd.u_max() * sd.gamma / (beta * sd.u_min()))
}
