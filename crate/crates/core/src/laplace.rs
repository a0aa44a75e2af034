//! Fixed-step RK4 solvers for the Laplace-functional ODE systems of the
//! spatially homogeneous case.
//!
//! * `dv/dt = −ψ(v)`, `v₀ = θ` gives `E_y[e^{−[θ, Y_t]}] = e^{−[y, v_t(θ)]}`.
//! * `V†` is the same system driven by `ψ† = ψ(· + w)`.
//! * The joint backbone system is integrated for `g = e^{−U}`:
//!   `dg_i/dt = (1/w_i)[ψ†(i, V† − w·g) − ψ†(i, V†)]`, `g₀ = e^{−h}`.
//!
//! Each solve runs at `step` and `step/2`; the difference over the shared
//! grid, divided by 15, is the reported Richardson error estimate.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanism::Mechanism;
use crate::tolerances::{BLOW_UP, UNIT_INTERVAL_SLACK};

/// Grid, values, actual step and per-component Richardson estimate.
type Integrated = (Vec<f64>, Vec<Vec<f64>>, f64, Vec<f64>);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub theta0: Vec<f64>,
    pub mech_id: String,
    pub step: f64,
    pub err_est: Vec<f64>,
}

impl OdeSolution {
    pub fn last(&self) -> &[f64] {
        self.values.last().expect("grid always contains t = 0")
    }

    /// Value at the grid point nearest to `t`.
    pub fn at(&self, t: f64) -> &[f64] {
        let k = ((t / self.step).round().max(0.0) as usize).min(self.values.len() - 1);
        &self.values[k]
    }

    pub fn max_err_est(&self) -> f64 {
        self.err_est.iter().copied().fold(0.0, f64::max)
    }
}

/// Solution of the joint `(V†, g = e^{−U})` system on a shared grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackboneLaplace {
    pub v_dagger: OdeSolution,
    pub g: OdeSolution,
}

impl BackboneLaplace {
    /// `U_t h = −log g_t`, coordinatewise; infinite where `g` is 0.
    pub fn u_values(&self) -> Vec<Vec<f64>> {
        self.g
            .values
            .iter()
            .map(|g| g.iter().map(|x| -x.ln()).collect())
            .collect()
    }
}

pub(crate) fn rk4_step<F>(rhs: &F, y: &[f64], h: f64, out: &mut [f64], scratch: &mut [Vec<f64>; 5])
where
    F: Fn(&[f64], &mut [f64]),
{
    let [k1, k2, k3, k4, tmp] = scratch;
    rhs(y, k1);
    for (t, (y, k)) in tmp.iter_mut().zip(y.iter().zip(k1.iter())) {
        *t = y + 0.5 * h * k;
    }
    rhs(tmp, k2);
    for (t, (y, k)) in tmp.iter_mut().zip(y.iter().zip(k2.iter())) {
        *t = y + 0.5 * h * k;
    }
    rhs(tmp, k3);
    for (t, (y, k)) in tmp.iter_mut().zip(y.iter().zip(k3.iter())) {
        *t = y + h * k;
    }
    rhs(tmp, k4);
    for (n, o) in out.iter_mut().enumerate() {
        *o = y[n] + h / 6.0 * (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n]);
    }
}

pub(crate) fn scratch(n: usize) -> [Vec<f64>; 5] {
    std::array::from_fn(|_| vec![0.0; n])
}

struct Grid {
    n: usize,
    h: f64,
}

fn grid(t_max: f64, step: f64) -> Result<Grid> {
    if !(t_max >= 0.0) {
        return Err(Error::NegativeTime(t_max));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "step must be positive, got {step}"
        )));
    }
    let n = ((t_max / step) - 1e-9).ceil().max(0.0) as usize;
    let h = if n == 0 { step } else { t_max / n as f64 };
    Ok(Grid { n, h })
}

/// Integrates `y' = rhs(y)` for `n` steps of size `h`, applying `post`
/// (clamping and validity checks) after each step.
fn integrate<F, P>(y0: &[f64], n: usize, h: f64, rhs: &F, post: &P) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64], &mut [f64]),
    P: Fn(&mut [f64], f64) -> Result<()>,
{
    let mut values = Vec::with_capacity(n + 1);
    values.push(y0.to_vec());
    let mut y = y0.to_vec();
    let mut next = vec![0.0; y0.len()];
    let mut s = scratch(y0.len());
    for k in 1..=n {
        let time = k as f64 * h;
        rk4_step(rhs, &y, h, &mut next, &mut s);
        if next.iter().any(|x| !x.is_finite() || x.abs() > BLOW_UP) {
            return Err(Error::BlowUp { time });
        }
        post(&mut next, time)?;
        std::mem::swap(&mut y, &mut next);
        values.push(y.clone());
    }
    Ok(values)
}

/// Runs `integrate` at `h` and `h/2` and returns the coarse solution with the
/// per-component Richardson estimate.
fn integrate_with_estimate<F, P>(
    y0: &[f64],
    t_max: f64,
    step: f64,
    rhs: &F,
    post: &P,
) -> Result<Integrated>
where
    F: Fn(&[f64], &mut [f64]),
    P: Fn(&mut [f64], f64) -> Result<()>,
{
    let Grid { n, h } = grid(t_max, step)?;
    let coarse = integrate(y0, n, h, rhs, post)?;
    let fine = integrate(y0, 2 * n, 0.5 * h, rhs, post)?;
    let mut err = vec![0.0; y0.len()];
    for (k, c) in coarse.iter().enumerate() {
        for (e, (a, b)) in err.iter_mut().zip(c.iter().zip(&fine[2 * k])) {
            *e = f64::max(*e, (a - b).abs() / 15.0);
        }
    }
    let times = (0..=n).map(|k| k as f64 * h).collect();
    Ok((times, coarse, h, err))
}

fn clamp_nonnegative(y: &mut [f64], _time: f64) -> Result<()> {
    y.iter_mut().for_each(|x| *x = x.max(0.0));
    Ok(())
}

/// `v_t(θ)` on `[0, t_max]`.
pub fn solve_v(mech: &Mechanism, theta: &[f64], t_max: f64, step: f64) -> Result<OdeSolution> {
    mech.check_vector("theta", theta)?;
    let rhs = |y: &[f64], out: &mut [f64]| {
        mech.psi_all_unchecked(y, out);
        out.iter_mut().for_each(|x| *x = -*x);
    };
    let (times, values, h, err_est) =
        integrate_with_estimate(theta, t_max, step, &rhs, &clamp_nonnegative)?;
    Ok(OdeSolution {
        times,
        values,
        theta0: theta.to_vec(),
        mech_id: mech.content_hash(),
        step: h,
        err_est,
    })
}

/// `V†_t f` for a conditioned mechanism.
pub fn solve_v_dagger(
    mech_dagger: &Mechanism,
    f: &[f64],
    t_max: f64,
    step: f64,
) -> Result<OdeSolution> {
    solve_v(mech_dagger, f, t_max, step)
}

/// Joint `(V†_t f, e^{−U_t h})` system. `ψ†` is evaluated as `ψ(· + w)` on
/// the parent mechanism.
pub fn solve_u(
    mech: &Mechanism,
    w: &[f64],
    f: &[f64],
    h: &[f64],
    t_max: f64,
    step: f64,
) -> Result<BackboneLaplace> {
    let ell = mech.ell();
    mech.check_vector("w", w)?;
    mech.check_vector("f", f)?;
    if h.len() != ell {
        return Err(Error::DimensionMismatch {
            what: "h",
            expected: ell,
            got: h.len(),
        });
    }
    // h may be +∞, meaning g₀ = 0
    if let Some((index, &value)) = h.iter().enumerate().find(|(_, x)| !(**x >= 0.0)) {
        return Err(Error::NegativeCoordinate {
            what: "h",
            index,
            value,
        });
    }
    if let Some(i) = w.iter().position(|x| *x <= 0.0) {
        return Err(Error::InvalidParameter(format!("w[{i}] must be positive")));
    }
    let rhs = |y: &[f64], out: &mut [f64]| {
        let (vd, g) = y.split_at(ell);
        let mut at_vd = vec![0.0; ell];
        let mut shifted = vec![0.0; ell];
        for i in 0..ell {
            at_vd[i] = vd[i] + w[i];
            shifted[i] = vd[i] + w[i] * (1.0 - g[i]);
        }
        for i in 0..ell {
            let base = mech.psi_unchecked(i, &at_vd);
            out[i] = -base;
            out[ell + i] = (mech.psi_unchecked(i, &shifted) - base) / w[i];
        }
    };
    let post = |y: &mut [f64], time: f64| -> Result<()> {
        let (vd, g) = y.split_at_mut(ell);
        vd.iter_mut().for_each(|x| *x = x.max(0.0));
        for x in g.iter_mut() {
            if *x < -UNIT_INTERVAL_SLACK || *x > 1.0 + UNIT_INTERVAL_SLACK {
                return Err(Error::LeftUnitInterval { time, value: *x });
            }
            *x = x.clamp(0.0, 1.0);
        }
        Ok(())
    };
    let mut y0 = f.to_vec();
    y0.extend(h.iter().map(|x| (-x).exp()));
    let (times, values, step_used, err) = integrate_with_estimate(&y0, t_max, step, &rhs, &post)?;
    let mech_id = mech.content_hash();
    let split = |range: std::ops::Range<usize>| OdeSolution {
        times: times.clone(),
        values: values.iter().map(|y| y[range.clone()].to_vec()).collect(),
        theta0: y0[range.clone()].to_vec(),
        mech_id: mech_id.clone(),
        step: step_used,
        err_est: err[range.clone()].to_vec(),
    };
    Ok(BackboneLaplace {
        v_dagger: split(0..ell),
        g: split(ell..2 * ell),
    })
}

/// `max_t ‖V†_t f − (v_t(f + w) − w)‖∞`, with `V†` solved on the
/// conditioned mechanism and `v` on the parent.
pub fn shift_identity_residual(
    mech: &Mechanism,
    mech_dagger: &Mechanism,
    w: &[f64],
    f: &[f64],
    t_max: f64,
    step: f64,
) -> Result<f64> {
    let vd = solve_v_dagger(mech_dagger, f, t_max, step)?;
    let shifted: Vec<f64> = f.iter().zip(w).map(|(a, b)| a + b).collect();
    let v = solve_v(mech, &shifted, t_max, step)?;
    Ok(max_residual(&vd.values, &v.values, |k, i| {
        v.values[k][i] - w[i]
    }))
}

/// `max_t ‖V†_t f + w(1 − e^{−U_t h}) − v_t(f + w(1 − e^{−h}))‖∞`.
pub fn check_decomposition_identity(
    mech: &Mechanism,
    w: &[f64],
    f: &[f64],
    h: &[f64],
    t_max: f64,
    step: f64,
) -> Result<f64> {
    let joint = solve_u(mech, w, f, h, t_max, step)?;
    let theta: Vec<f64> = (0..mech.ell())
        .map(|i| f[i] + w[i] * -(-h[i]).exp_m1())
        .collect();
    let v = solve_v(mech, &theta, t_max, step)?;
    let lhs: Vec<Vec<f64>> = joint
        .v_dagger
        .values
        .iter()
        .zip(&joint.g.values)
        .map(|(vd, g)| (0..w.len()).map(|i| vd[i] + w[i] * (1.0 - g[i])).collect())
        .collect();
    Ok(max_residual(&lhs, &v.values, |k, i| v.values[k][i]))
}

fn max_residual<F: Fn(usize, usize) -> f64>(lhs: &[Vec<f64>], rhs: &[Vec<f64>], other: F) -> f64 {
    debug_assert_eq!(lhs.len(), rhs.len());
    let mut worst = 0.0f64;
    for (k, row) in lhs.iter().enumerate() {
        for (i, x) in row.iter().enumerate() {
            worst = worst.max((x - other(k, i)).abs());
        }
    }
    worst
}
