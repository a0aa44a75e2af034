//! Branching mechanisms `ψ(i, θ)` with a drift matrix, diffusion
//! coefficients and a finite-atom Lévy measure.
//!
//! Row/column convention: `B[i][j]` is `B_{ij}`, and `ψ(i, ·)` reads column
//! `i` of `B` through `[θ, B e_i] = Σ_j θ_j B_{ji}`.
//!
//! ```text
//! ψ(i,θ) = −[θ, B e_i] + β_i θ_i² + Σ_k r_k (e^{−[θ,y_k]} − 1 + θ_i y_{k,i})
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One atom `rate · δ_jump` of the Lévy measure `Π(i, ·)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AtomJson")]
pub struct LevyAtom {
    rate: f64,
    jump: Vec<f64>,
}

#[derive(Deserialize)]
struct AtomJson {
    rate: f64,
    jump: Vec<f64>,
}

impl TryFrom<AtomJson> for LevyAtom {
    type Error = Error;

    fn try_from(raw: AtomJson) -> Result<Self> {
        LevyAtom::new(raw.rate, raw.jump)
    }
}

impl LevyAtom {
    pub fn new(rate: f64, jump: Vec<f64>) -> Result<Self> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::InvalidMechanism(format!(
                "atom rate must be positive, got {rate}"
            )));
        }
        if jump.iter().any(|y| !(y.is_finite() && *y >= 0.0)) {
            return Err(Error::InvalidMechanism(format!(
                "atom jump must be nonnegative, got {jump:?}"
            )));
        }
        if !jump.iter().any(|y| *y > 0.0) {
            return Err(Error::InvalidMechanism(
                "atom jump must have a positive coordinate".into(),
            ));
        }
        Ok(Self { rate, jump })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn jump(&self) -> &[f64] {
        &self.jump
    }

    /// `[θ, y]`
    pub fn dot(&self, theta: &[f64]) -> f64 {
        self.jump.iter().zip(theta).map(|(y, t)| y * t).sum()
    }
}

/// Links a conditioned mechanism to its parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub parent_hash: String,
    pub w: Vec<f64>,
    pub residual: f64,
}

/// Validated `(ℓ, B, β, Π)` parameterisation of a branching mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MechanismJson", into = "MechanismJson")]
pub struct Mechanism {
    ell: usize,
    b: DMatrix<f64>,
    beta: Vec<f64>,
    atoms: Vec<Vec<LevyAtom>>,
    provenance: Option<Provenance>,
}

#[derive(Serialize, Deserialize)]
struct MechanismJson {
    ell: usize,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    beta: Vec<f64>,
    atoms: Vec<Vec<LevyAtom>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

impl TryFrom<MechanismJson> for Mechanism {
    type Error = Error;

    fn try_from(raw: MechanismJson) -> Result<Self> {
        if raw.b.len() != raw.ell {
            return Err(Error::DimensionMismatch {
                what: "rows of B",
                expected: raw.ell,
                got: raw.b.len(),
            });
        }
        for row in &raw.b {
            if row.len() != raw.ell {
                return Err(Error::DimensionMismatch {
                    what: "columns of B",
                    expected: raw.ell,
                    got: row.len(),
                });
            }
        }
        let b = DMatrix::from_fn(raw.ell, raw.ell, |i, j| raw.b[i][j]);
        let mut mech = Mechanism::new(b, raw.beta, raw.atoms)?;
        mech.provenance = raw.provenance;
        Ok(mech)
    }
}

impl From<Mechanism> for MechanismJson {
    fn from(m: Mechanism) -> Self {
        let b = (0..m.ell)
            .map(|i| (0..m.ell).map(|j| m.b[(i, j)]).collect())
            .collect();
        MechanismJson {
            ell: m.ell,
            b,
            beta: m.beta,
            atoms: m.atoms,
            provenance: m.provenance,
        }
    }
}

/// One atom of a one-dimensional kernel `l(i, du)` or `n(i, du)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarAtom {
    pub rate: f64,
    pub size: f64,
}

impl Mechanism {
    pub fn new(b: DMatrix<f64>, beta: Vec<f64>, atoms: Vec<Vec<LevyAtom>>) -> Result<Self> {
        let ell = beta.len();
        if ell == 0 {
            return Err(Error::InvalidMechanism("at least one type required".into()));
        }
        if b.nrows() != ell || b.ncols() != ell {
            return Err(Error::DimensionMismatch {
                what: "B",
                expected: ell,
                got: b.nrows().max(b.ncols()),
            });
        }
        if atoms.len() != ell {
            return Err(Error::DimensionMismatch {
                what: "atom lists",
                expected: ell,
                got: atoms.len(),
            });
        }
        for i in 0..ell {
            for j in 0..ell {
                let bij = b[(i, j)];
                if !bij.is_finite() {
                    return Err(Error::InvalidMechanism(format!(
                        "B[{i}][{j}] is not finite"
                    )));
                }
                if i != j && bij < 0.0 {
                    return Err(Error::InvalidMechanism(format!(
                        "negative off-diagonal entry B[{i}][{j}] = {bij}"
                    )));
                }
            }
        }
        for (i, bi) in beta.iter().enumerate() {
            if !(bi.is_finite() && *bi >= 0.0) {
                return Err(Error::InvalidMechanism(format!(
                    "beta[{i}] = {bi} is negative"
                )));
            }
        }
        for list in &atoms {
            for atom in list {
                if atom.jump.len() != ell {
                    return Err(Error::DimensionMismatch {
                        what: "atom jump",
                        expected: ell,
                        got: atom.jump.len(),
                    });
                }
            }
        }
        Ok(Self {
            ell,
            b,
            beta,
            atoms,
            provenance: None,
        })
    }

    /// Li's local/non-local form
    ///
    /// ```text
    /// ψ(i,θ) = b_iθ_i + β_iθ_i² − d_i[θ,π⁽ⁱ⁾] + ∫(e^{−uθ_i} − 1 + θ_i u) l(i,du)
    ///          + ∫(e^{−u[θ,π⁽ⁱ⁾]} − 1) n(i,du)
    /// ```
    ///
    /// A non-local atom becomes a jump `u π⁽ⁱ⁾`. Its uncompensated form is
    /// matched by moving `Σ rate·u·π⁽ⁱ⁾_i` onto the diagonal of `B`.
    pub fn from_local_nonlocal(
        b: &[f64],
        d: &[f64],
        pi: &[Vec<f64>],
        beta: &[f64],
        local_atoms: &[Vec<ScalarAtom>],
        nonlocal_atoms: &[Vec<ScalarAtom>],
    ) -> Result<Self> {
        let ell = beta.len();
        for (what, len) in [
            ("b", b.len()),
            ("d", d.len()),
            ("pi", pi.len()),
            ("local atoms", local_atoms.len()),
            ("non-local atoms", nonlocal_atoms.len()),
        ] {
            if len != ell {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: ell,
                    got: len,
                });
            }
        }
        for (i, row) in pi.iter().enumerate() {
            if row.len() != ell {
                return Err(Error::DimensionMismatch {
                    what: "pi row",
                    expected: ell,
                    got: row.len(),
                });
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "pi row {i} is not a probability vector: {row:?}"
                )));
            }
        }
        if b.iter().chain(d).any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidParameter(
                "b and d must be nonnegative".into(),
            ));
        }

        let mut bm = DMatrix::zeros(ell, ell);
        let mut atoms = vec![Vec::new(); ell];
        for i in 0..ell {
            for j in 0..ell {
                bm[(j, i)] = d[i] * pi[i][j];
            }
            bm[(i, i)] -= b[i];
            for a in &local_atoms[i] {
                let mut jump = vec![0.0; ell];
                jump[i] = a.size;
                atoms[i].push(LevyAtom::new(a.rate, jump)?);
            }
            for a in &nonlocal_atoms[i] {
                let jump: Vec<f64> = pi[i].iter().map(|p| a.size * p).collect();
                bm[(i, i)] += a.rate * a.size * pi[i][i];
                atoms[i].push(LevyAtom::new(a.rate, jump)?);
            }
        }
        Self::new(bm, beta.to_vec(), atoms)
    }

    /// Quadratic mechanism `ψ(i,θ) = −d_i[θ, π⁽ⁱ⁾] + β_iθ_i²`.
    pub fn gorostiza_lopez_mimbela(d: &[f64], pi: &[Vec<f64>], beta: &[f64]) -> Result<Self> {
        let ell = beta.len();
        let none = vec![Vec::new(); ell];
        Self::from_local_nonlocal(&vec![0.0; ell], d, pi, beta, &none, &none)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("mechanism serialises")
    }

    /// SHA-256 of the compact JSON encoding, hex encoded.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("mechanism serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub(crate) fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn atoms(&self, i: usize) -> &[LevyAtom] {
        &self.atoms[i]
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn min_beta(&self) -> f64 {
        self.beta.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_beta(&self) -> f64 {
        self.beta.iter().copied().fold(0.0, f64::max)
    }

    pub fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.ell {
            return Err(Error::IndexOutOfRange {
                index: i,
                ell: self.ell,
            });
        }
        Ok(())
    }

    pub fn check_vector(&self, what: &'static str, x: &[f64]) -> Result<()> {
        if x.len() != self.ell {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.ell,
                got: x.len(),
            });
        }
        if let Some((index, &value)) = x
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::NegativeCoordinate { what, index, value });
        }
        Ok(())
    }

    /// `ψ(i, θ)` for `θ ∈ R_+^ℓ`.
    pub fn psi(&self, i: usize, theta: &[f64]) -> Result<f64> {
        self.check_index(i)?;
        self.check_vector("theta", theta)?;
        Ok(self.psi_unchecked(i, theta))
    }

    /// The closed form of `ψ(i, θ)` without argument checks. It is a finite
    /// sum and is evaluated as written for any real `θ`, which the solvers
    /// rely on for shifted arguments such as `θ − w`.
    pub fn psi_unchecked(&self, i: usize, theta: &[f64]) -> f64 {
        let mut value = 0.0;
        for (j, t) in theta.iter().enumerate() {
            value -= t * self.b[(j, i)];
        }
        value += self.beta[i] * theta[i] * theta[i];
        for atom in &self.atoms[i] {
            let x = atom.dot(theta);
            value += atom.rate * ((-x).exp_m1() + theta[i] * atom.jump[i]);
        }
        value
    }

    /// Writes `ψ(·, θ)` into `out`.
    pub fn psi_all_unchecked(&self, theta: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.psi_unchecked(i, theta);
        }
    }

    /// `∇_θ ψ(i, θ)`.
    pub fn psi_grad(&self, i: usize, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_index(i)?;
        self.check_vector("theta", theta)?;
        let mut out = vec![0.0; self.ell];
        self.psi_grad_unchecked(i, theta, &mut out);
        Ok(out)
    }

    pub fn psi_grad_unchecked(&self, i: usize, theta: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = -self.b[(j, i)];
        }
        out[i] += 2.0 * self.beta[i] * theta[i];
        for atom in &self.atoms[i] {
            let e = (-atom.dot(theta)).exp();
            for (j, o) in out.iter_mut().enumerate() {
                *o -= atom.rate * atom.jump[j] * e;
            }
            out[i] += atom.rate * atom.jump[i];
        }
    }

    /// `J_{ij} = ∂_j ψ(i, θ)`.
    pub fn jacobian_unchecked(&self, theta: &[f64]) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.ell, self.ell);
        let mut row = vec![0.0; self.ell];
        for i in 0..self.ell {
            self.psi_grad_unchecked(i, theta, &mut row);
            for j in 0..self.ell {
                jac[(i, j)] = row[j];
            }
        }
        jac
    }

    /// The effective drift `B̃`, i.e. `−∂_j ψ(i, 0) = B̃_{ji}`:
    ///
    /// ```text
    /// B̃_{ij} = B_{ij} + 1_{i≠j} Σ_k r_k^{(j)} y_{k,i}
    /// ```
    ///
    /// The diagonal carries no jump correction because the own-type jump
    /// coordinate is fully compensated in `ψ`. This is the matrix for which
    /// `ψ(i,θ) = −[θ, B̃ e_i] + β_iθ_i² + Σ_k r_k (e^{−[θ,y_k]} − 1 + [θ,y_k])`
    /// and for which `exp(t B̃ᵗ)` is the mean matrix.
    pub fn effective_drift(&self) -> DMatrix<f64> {
        let mut bt = self.b.clone();
        for j in 0..self.ell {
            for atom in &self.atoms[j] {
                for i in 0..self.ell {
                    if i != j {
                        bt[(i, j)] += atom.rate * atom.jump[i];
                    }
                }
            }
        }
        bt
    }

    /// Per-unit-mass drift of the jump-compensated dynamics:
    /// `d_{ji} = B̃_{ji} − Σ_k r_k^{(i)} y_{k,j}`. Column `i` is the drift
    /// contributed by unit type-`i` mass when jumps are added uncompensated.
    pub fn compensated_drift(&self) -> DMatrix<f64> {
        let mut d = self.effective_drift();
        for i in 0..self.ell {
            for atom in &self.atoms[i] {
                for j in 0..self.ell {
                    d[(j, i)] -= atom.rate * atom.jump[j];
                }
            }
        }
        d
    }

    /// `ψ(i, θ)` evaluated through `B̃` and the fully compensated jump term.
    pub fn psi_compensated(&self, i: usize, theta: &[f64]) -> Result<f64> {
        self.check_index(i)?;
        self.check_vector("theta", theta)?;
        let bt = self.effective_drift();
        let mut value = 0.0;
        for (j, t) in theta.iter().enumerate() {
            value -= t * bt[(j, i)];
        }
        value += self.beta[i] * theta[i] * theta[i];
        for atom in &self.atoms[i] {
            let x = atom.dot(theta);
            value += atom.rate * ((-x).exp_m1() + x);
        }
        Ok(value)
    }

    /// `‖ψ(·, θ)‖∞`
    pub fn psi_sup_norm(&self, theta: &[f64]) -> f64 {
        (0..self.ell)
            .map(|i| self.psi_unchecked(i, theta).abs())
            .fold(0.0, f64::max)
    }
}
