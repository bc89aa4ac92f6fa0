//! Bracketed bisection for threshold solving.
//!
//! Every threshold in this crate is the root of a margin function
//! `f(n_th) = rhs(n_th) - lhs(n_th)` that is negative at `n_th = 0`
//! (the witness is violated there) and positive for large occupation.
//! Bisection on a sign-changing bracket is immune to the square-root
//! kinks these margins contain, which rules out Newton-type methods.

/// Outcome of a bracketed search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BracketResult {
    /// A sign change was found; the payload is the converged root.
    Root(f64),
    /// No sign change inside the allowed bracket: `f` has the same sign at
    /// both ends, so there is no threshold to report.
    NoSignChange,
}

/// Maximum bisection iterations; 200 halvings shrink any finite bracket far
/// below every tolerance in [`crate::tol`].
const MAX_ITER: usize = 200;

/// Bisect `f` on `[lo, hi]`, assuming `f(lo)` and `f(hi)` have opposite signs.
///
/// Iterates until the bracket width falls below `1e-12` (absolute) and the
/// residual satisfies `|f(mid)| ≤ residual_tol`, or the iteration cap is hit.
/// Returns the final midpoint.
pub fn bisect(f: impl Fn(f64) -> f64, lo: f64, hi: f64, residual_tol: f64) -> f64 {
    let (mut lo, mut hi) = (lo, hi);
    let mut flo = f(lo);
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..MAX_ITER {
        mid = 0.5 * (lo + hi);
        let fmid = f(mid);
        if (hi - lo) < 1e-12 && fmid.abs() <= residual_tol {
            break;
        }
        if (flo <= 0.0) == (fmid <= 0.0) {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    mid
}

/// Find the smallest positive root of `f` starting from a bracket `[0, hi0]`.
///
/// `f(0)` is expected to be negative. When `expand` is true the upper end
/// doubles from `hi0` until `f` turns positive or the end exceeds `cap`;
/// when false the bracket stays fixed at `[0, hi0]` (used for two-level
/// occupations, which live in `[0, 1)` where the closed forms have poles at
/// occupation 1).
pub fn first_root(
    f: impl Fn(f64) -> f64,
    hi0: f64,
    cap: f64,
    expand: bool,
    residual_tol: f64,
) -> BracketResult {
    let f0 = f(0.0);
    if f0 > 0.0 {
        // Already non-violated at zero occupation: no positive threshold.
        return BracketResult::NoSignChange;
    }
    let mut hi = hi0;
    loop {
        if f(hi) > 0.0 {
            return BracketResult::Root(bisect(&f, 0.0, hi, residual_tol));
        }
        if !expand || hi >= cap {
            return BracketResult::NoSignChange;
        }
        hi = (hi * 2.0).min(cap);
        if hi >= cap && f(hi) <= 0.0 {
            return BracketResult::NoSignChange;
        }
    }
}
