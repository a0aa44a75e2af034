//! The extinction-conditioned mechanism `ψ†(θ) = ψ(θ + w)`.
//!
//! `B†` only differs from `B` on the diagonal,
//! `B†_ii = B_ii − 2β_i w_i − Σ_k r_k (1 − e^{−[w,y_k]}) y_{k,i}`,
//! and each atom rate is tilted by `e^{−[w,y_k]}`.

use crate::error::{Error, Result};
use crate::extinction::ExtinctionVector;
use crate::mechanism::{LevyAtom, Mechanism, Provenance};
use crate::tolerances::CONDITION_RESIDUAL;

/// Conditioned mechanism with a provenance block linking it to `mech`.
pub fn condition(mech: &Mechanism, w: &ExtinctionVector) -> Result<Mechanism> {
    mech.check_vector("w", &w.w)?;
    let residual = mech.psi_sup_norm(&w.w);
    let norm = w.w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tolerance = CONDITION_RESIDUAL * (1.0 + norm);
    if residual > tolerance {
        return Err(Error::ResidualTooLarge {
            residual,
            tolerance,
        });
    }
    Ok(tilt(mech, &w.w)?.with_provenance(Provenance {
        parent_hash: mech.content_hash(),
        w: w.w.clone(),
        residual,
    }))
}

/// The `(B†, β, tilted atoms)` parameterisation for an arbitrary `w ≥ 0`.
/// It equals `ψ(θ + w) − ψ(w)`, so it is the conditioned mechanism exactly
/// when `ψ(w) = 0`.
pub fn tilt(mech: &Mechanism, w: &[f64]) -> Result<Mechanism> {
    mech.check_vector("w", w)?;
    let ell = mech.ell();
    let mut b = mech.b().clone();
    let mut atoms = Vec::with_capacity(ell);
    for i in 0..ell {
        let mut shift = 2.0 * mech.beta()[i] * w[i];
        let mut tilted = Vec::with_capacity(mech.atoms(i).len());
        for atom in mech.atoms(i) {
            let s = atom.dot(w);
            shift += atom.rate() * -(-s).exp_m1() * atom.jump()[i];
            tilted.push(LevyAtom::new(
                atom.rate() * (-s).exp(),
                atom.jump().to_vec(),
            )?);
        }
        b[(i, i)] -= shift;
        atoms.push(tilted);
    }
    Mechanism::new(b, mech.beta().to_vec(), atoms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extinction::extinction_vector;
    use crate::spectral::perron_frobenius;
    use crate::suite;
    use approx::assert_relative_eq;

    #[test]
    fn logistic_conditioned() {
        let m = suite::logistic();
        let w = extinction_vector(&m).unwrap();
        let d = condition(&m, &w).unwrap();
        assert_relative_eq!(d.b()[(0, 0)], -1.0, epsilon = 1e-12);
        assert_relative_eq!(d.psi(0, &[2.0]).unwrap(), 6.0, epsilon = 1e-11);
        let p = d.provenance().unwrap();
        assert_eq!(p.parent_hash, m.content_hash());
        assert_eq!(p.w, w.w);
    }

    #[test]
    fn no_atoms_only_shift_diagonal() {
        let m = suite::symmetric_pair();
        let w = extinction_vector(&m).unwrap();
        let d = condition(&m, &w).unwrap();
        for i in 0..2 {
            assert!(d.atoms(i).is_empty());
            assert_relative_eq!(
                d.b()[(i, i)],
                m.b()[(i, i)] - 2.0 * m.beta()[i] * w.w[i],
                epsilon = 1e-12
            );
        }
        assert_eq!(d.b()[(0, 1)], m.b()[(0, 1)]);
    }

    #[test]
    fn refuses_bad_root() {
        let m = suite::logistic();
        let mut w = extinction_vector(&m).unwrap();
        w.w = vec![0.5];
        assert!(matches!(
            condition(&m, &w),
            Err(Error::ResidualTooLarge { .. })
        ));
    }

    #[test]
    fn conditioned_is_subcritical() {
        for m in suite::all() {
            let w = extinction_vector(&m).unwrap();
            let d = condition(&m, &w).unwrap();
            let sd = perron_frobenius(&d).unwrap();
            assert!(sd.gamma < 0.0, "Γ† = {}", sd.gamma);
        }
    }
}
