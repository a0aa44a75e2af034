//! Numerical thresholds shared by the solvers, the verify pipeline and the
//! acceptance suite. Every constant here is a pinned contract value.

/// Relative residual allowed for `ψ(w) = 0`, scaled by `1 + ‖w‖`.
pub const ROOT_RESIDUAL: f64 = 1e-10;

/// Residual above which conditioning refuses a candidate `w`.
pub const CONDITION_RESIDUAL: f64 = 1e-8;

/// Band around zero inside which Γ is classified as critical.
pub const CRITICAL_BAND: f64 = 1e-12;

/// Allowed imaginary part of the leading eigenvalue (relative to ‖B̃‖).
pub const EIGEN_IMAG: f64 = 1e-10;

/// Eigen-residual `‖B̃ᵗu − Γu‖ ≤ EIGEN_RESIDUAL·‖B̃‖`.
pub const EIGEN_RESIDUAL: f64 = 1e-10;

/// Any ODE component above this is treated as blow-up.
pub const BLOW_UP: f64 = 1e12;

/// Stand-in for `θ → ∞` when computing extinction limits.
pub const THETA_BIG: f64 = 1e6;

/// Horizon for the ODE-limit stage of the extinction root.
pub const EXTINCTION_T_MAX: f64 = 200.0;

/// Stage-1 stops once `‖dv/dt‖∞` drops below this.
pub const EXTINCTION_DERIV_STOP: f64 = 1e-10;

/// `Θ_BIG` and `2Θ_BIG` limits must agree to this.
pub const THETA_DOUBLING: f64 = 1e-8;

/// Allowed excursion of `e^{-U}` outside `[0,1]` before it is an error.
pub const UNIT_INTERVAL_SLACK: f64 = 1e-8;

/// Default truncation of the offspring tables.
pub const J_MAX_DEFAULT: usize = 40;

/// Normalisation of offspring tables, `Σ p + tail = 1`.
pub const PMF_NORMALIZATION: f64 = 1e-12;

/// Tail mass allowed at `J_MAX_DEFAULT`.
pub const PMF_TAIL: f64 = 1e-10;

/// Relative agreement of the mixture weights with `w_i q_i`.
pub const MIXTURE_SUM: f64 = 1e-10;

/// Generator identity: pmf form vs. closed form, before adding the tail.
pub const GENERATOR_IDENTITY: f64 = 1e-8;

/// `V†_t f` vs. `v_t(f + w) − w`.
pub const SHIFT_IDENTITY: f64 = 1e-6;

/// Residual of the joint backbone identity.
pub const DECOMPOSITION_IDENTITY: f64 = 1e-6;

/// Monte Carlo comparisons use this many standard errors.
pub const MC_SIGMAS: f64 = 4.0;

/// Time-discretisation bias allowance per unit `dt` in the Laplace comparison.
pub const MC_DT_COEFF: f64 = 0.05;

/// Absorption threshold for simulated total mass.
pub const ABSORPTION: f64 = 1e-12;

/// Largest backbone population a single simulation may reach.
pub const MAX_PARTICLES: usize = 1_000_000;

/// Rejection acceptance below which conditioned Poisson draws switch to
/// enumeration.
pub const REJECTION_FLOOR: f64 = 1e-3;
