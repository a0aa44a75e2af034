//! Canonical mechanisms used by the tests, the acceptance suite and the CLI
//! examples.

use nalgebra::DMatrix;

use crate::mechanism::{LevyAtom, Mechanism};

fn atom(rate: f64, jump: &[f64]) -> LevyAtom {
    LevyAtom::new(rate, jump.to_vec()).expect("valid atom")
}

/// `ψ(θ) = −θ + θ²`.
pub fn logistic() -> Mechanism {
    Mechanism::new(DMatrix::from_element(1, 1, 1.0), vec![1.0], vec![vec![]]).expect("valid")
}

/// `ψ(θ) = −θ + θ²/2 + (e^{−2θ} − 1 + 2θ)`.
pub fn single_atom() -> Mechanism {
    Mechanism::new(
        DMatrix::from_element(1, 1, 1.0),
        vec![0.5],
        vec![vec![atom(1.0, &[2.0])]],
    )
    .expect("valid")
}

/// `B = [[0,1],[1,0]]`, `β = (1,1)`, no atoms; `w = (1,1)`.
pub fn symmetric_pair() -> Mechanism {
    Mechanism::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        vec![1.0, 1.0],
        vec![vec![], vec![]],
    )
    .expect("valid")
}

/// Two types with cross drift and cross-type jump atoms.
pub fn asymmetric_pair() -> Mechanism {
    Mechanism::new(
        DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.6, -0.2]),
        vec![0.8, 1.2],
        vec![
            vec![atom(0.5, &[1.5, 0.3]), atom(0.3, &[0.2, 0.6])],
            vec![atom(0.4, &[0.5, 0.8])],
        ],
    )
    .expect("valid")
}

/// One type without diffusion: `ψ(θ) = −θ + (e^{−2θ} − 1 + 2θ)`.
pub fn pure_jump() -> Mechanism {
    Mechanism::new(
        DMatrix::from_element(1, 1, 1.0),
        vec![0.0],
        vec![vec![atom(1.0, &[2.0])]],
    )
    .expect("valid")
}

/// The four suite mechanisms, in order: logistic, single atom, symmetric
/// pair, asymmetric pair.
pub fn all() -> Vec<Mechanism> {
    vec![
        logistic(),
        single_atom(),
        symmetric_pair(),
        asymmetric_pair(),
    ]
}

pub fn names() -> [&'static str; 4] {
    [
        "logistic",
        "single-atom",
        "symmetric-pair",
        "asymmetric-pair",
    ]
}
