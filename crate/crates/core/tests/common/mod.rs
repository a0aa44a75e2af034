#![allow(dead_code)]

use mtb_core::{LevyAtom, Mechanism};
use nalgebra::DMatrix;
use proptest::prelude::*;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sup_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn atom_strategy(ell: usize) -> impl Strategy<Value = LevyAtom> {
    (0.05..1.0f64, prop::collection::vec(0.05..2.0f64, ell))
        .prop_map(|(rate, jump)| LevyAtom::new(rate, jump).unwrap())
}

/// Random mechanisms with positive diagonal drift and positive diffusion,
/// hence irreducible (off-diagonals bounded below) and supercritical.
pub fn supercritical(max_ell: usize) -> impl Strategy<Value = Mechanism> {
    (1..=max_ell).prop_flat_map(|ell| {
        (
            prop::collection::vec(0.2..2.0f64, ell),
            prop::collection::vec(0.05..1.0f64, ell * ell),
            prop::collection::vec(0.2..2.0f64, ell),
            prop::collection::vec(prop::collection::vec(atom_strategy(ell), 0..3), ell),
        )
            .prop_map(move |(diag, off, beta, atoms)| {
                let b = DMatrix::from_fn(
                    ell,
                    ell,
                    |i, j| if i == j { diag[i] } else { off[i * ell + j] },
                );
                Mechanism::new(b, beta, atoms).unwrap()
            })
    })
}

/// Random mechanisms with arbitrary-sign diagonal and possibly zero diffusion.
pub fn any_mechanism(max_ell: usize) -> impl Strategy<Value = Mechanism> {
    (1..=max_ell).prop_flat_map(|ell| {
        (
            prop::collection::vec(-2.0..2.0f64, ell * ell),
            prop::collection::vec(prop_oneof![Just(0.0), 0.0..2.0f64], ell),
            prop::collection::vec(prop::collection::vec(atom_strategy(ell), 0..3), ell),
        )
            .prop_map(move |(raw, beta, atoms)| {
                let b = DMatrix::from_fn(ell, ell, |i, j| {
                    let x = raw[i * ell + j];
                    if i == j {
                        x
                    } else {
                        x.abs()
                    }
                });
                Mechanism::new(b, beta, atoms).unwrap()
            })
    })
}

pub fn point(ell: usize, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..hi, ell)
}

/// A mechanism together with a nonnegative point of matching dimension.
pub fn with_point<S: Strategy<Value = Mechanism>>(
    mechs: S,
    hi: f64,
) -> impl Strategy<Value = (Mechanism, Vec<f64>)> {
    mechs.prop_flat_map(move |m| {
        let ell = m.ell();
        (Just(m), point(ell, hi))
    })
}
