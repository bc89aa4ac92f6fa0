//! Certification toolkit for genuine multipartite entanglement and nonlocal
//! measurement back-action in W-state-type systems.
//!
//! The library evaluates two witness inequalities on exact truncated quantum
//! states of `N` identical modes (harmonic oscillators with a Fock cutoff, or
//! two-level systems):
//!
//! * an entanglement witness that compares the sum of cross-correlator
//!   moduli `Σ |⟨b_i†b_j⟩|` against a bound any state with at most
//!   `M`-partite entanglement must satisfy ([`entanglement`]), and
//! * a nonlocality witness that bounds how much a semilocal (block-confined)
//!   particle addition can change those cross correlators, so that a larger
//!   observed change certifies nonlocal measurement back-action
//!   ([`nonlocality`]).
//!
//! Both witnesses are backed by closed-form expressions for symmetric thermal
//! W-like states, by violation-threshold solvers in the thermal occupation
//! `n_th`, and by a mapping onto Stokes / anti-Stokes photodetection
//! observables with finite-shot Monte Carlo estimation ([`photostat`]).
//!
//! # Module map
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`hilbert`] | `SystemSpec`, `DensityOperator`, thermal states, particle addition, exact moments, analytic W-like moment tables |
//! | [`partitions`] | set-partition structures, class signatures, irreducibility, separable-pair counts |
//! | [`entanglement`] | witness evaluation, thermal sides and thresholds, white-noise threshold, random constrained states |
//! | [`nonlocality`] | per-block bounds `B_C`, locality probabilities, structure maximization, thermal sides and thresholds |
//! | [`photostat`] | optical networks, sideband translation, gain calibration, interference readout, shot-noise Monte Carlo |
//! | [`roots`] | bracketed bisection used by every threshold solver |
//! | [`tol`] | the numerical tolerances enforced across the crate |
//!
//! Mode indices are 1-based everywhere in the public API, matching the
//! rendered form of partition structures such as `[1 2 3][4 5][6]`.

pub mod entanglement;
pub mod hilbert;
pub mod nonlocality;
pub mod partitions;
pub mod photostat;
pub mod roots;
pub mod tol;

/// Crate-wide error type.
///
/// The variants map onto the process exit codes used by the companion CLI:
/// everything here is either a refused computation (caps, domain, validation)
/// or a malformed input; I/O failures are handled by the caller.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Hilbert-space dimension would exceed the safety cap.
    #[error("Hilbert dimension {dim} exceeds the safety cap {cap}; set {var} to raise it", var = crate::hilbert::DIM_CAP_ENV)]
    DimensionCap {
        /// Requested total dimension.
        dim: usize,
        /// Cap in force at the time of the request.
        cap: usize,
    },
    /// Structure enumeration refused because the mode count is over the cap.
    #[error("enumeration refused: {0}")]
    EnumerationCap(String),
    /// Parameter outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// A constructed object failed one of its invariants.
    #[error("validation failed: {0}")]
    Validation(String),
    /// A projection or normalization denominator vanished.
    #[error("degenerate projection: {0}")]
    Degenerate(String),
    /// A correlator cannot be realized as a photon-counting observable.
    #[error("not measurable by photon counting: {0}")]
    NotMeasurable(String),
    /// Required photocount expectation values are absent.
    #[error("missing counts: {0:?}")]
    MissingCounts(Vec<String>),
    /// Inferred optical gains are inconsistent or non-positive.
    #[error("calibration error: {0}")]
    Calibration(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
