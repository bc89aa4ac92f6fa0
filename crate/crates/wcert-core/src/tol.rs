//! Numerical tolerances enforced across the crate.
//!
//! Every comparison threshold used by validation code lives here, with the
//! invariant it guards. Nothing else in the crate hard-codes a tolerance.

/// Entrywise Hermiticity bound for density operators: `|ρ - ρ†|_∞ ≤ 1e-12`.
pub const HERMITICITY: f64 = 1e-12;

/// Trace-normalization bound for density operators: `|Tr ρ - 1| ≤ 1e-10`.
pub const TRACE: f64 = 1e-10;

/// Eigenvalue floor for density operators: every eigenvalue `≥ -1e-10`.
pub const POSITIVITY: f64 = 1e-10;

/// Normalization bound for mode coefficient vectors: `|Σ|c_i|² - 1| ≤ 1e-12`.
pub const COEFF_NORM: f64 = 1e-12;

/// Unitarity bound for optical transfer matrices: `|T†T - I|_∞ ≤ 1e-10`.
pub const UNITARITY: f64 = 1e-10;

/// Consistency bound for the gain ratio: `|λ·g_s² - g_as²| ≤ 1e-12·g_as²`.
pub const GAIN_RATIO: f64 = 1e-12;

/// Probability vectors (locality probabilities, mixtures) sum to 1 within this.
pub const PROBABILITY_SUM: f64 = 1e-12;

/// A witness counts as violated only when `margin < -VIOLATION_MARGIN`,
/// keeping pure roundoff on a saturated inequality from flipping the flag.
pub const VIOLATION_MARGIN: f64 = 1e-10;

/// Default single-mode thermal truncation tail target.
///
/// The adaptive cutoff picks the smallest `d` with
/// `(n_th/(n_th+1))^d · (d+1)² < DEFAULT_TAIL`. The `(d+1)²` weight accounts
/// for pair-number observables, which weight the discarded levels
/// quadratically; the plain tail mass `(n_th/(n_th+1))^d` alone leaves
/// moment errors near 1e-7, an order of magnitude above [`MOMENT_AGREEMENT`].
pub const DEFAULT_TAIL: f64 = 1e-9;

/// Agreement required between closed-form and truncated-state moments, and
/// between the closed-form and exact-state witness evaluation paths.
pub const MOMENT_AGREEMENT: f64 = 1e-8;

/// Residual bound for threshold roots: bisection returns once
/// `|rhs(n) - lhs(n)| ≤ tol` with `tol` defaulting to this value.
pub const DEFAULT_ROOT_TOL: f64 = 1e-6;

/// Normalization denominators at or below this are treated as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-14;

/// Closed-form thermal bound must agree with structure enumeration on
/// symmetric thermal moments within this.
pub const CLOSED_FORM_AGREEMENT: f64 = 1e-10;
