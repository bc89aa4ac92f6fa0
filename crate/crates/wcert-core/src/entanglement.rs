//! Entanglement-depth witness: certifies that no partition of the modes
//! into blocks of size at most `M` can reproduce the observed coherences.
//!
//! The witness compares the summed cross-coherence
//! `L = Σ_{i<j} |⟨b_i† b_j⟩|` against the bound attainable by states
//! separable over some structure with blocks of at most `M` modes:
//!
//! `R = √(n_pairs · n_sep_max(N, M)) · max_{i≠j} √⟨n_i n_j⟩
//!      + (M−1)/2 · Σ_i ⟨n_i⟩`
//!
//! with `n_pairs = N(N−1)/2`. A margin `R − L` below
//! `−`[`tol::VIOLATION_MARGIN`] certifies entanglement beyond block size
//! `M`; at `M = N−1` that is genuine `N`-partite entanglement.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::hilbert::{
    observables, DensityOperator, Kind, ModeCoefficients, ObservableSet, SystemSpec,
};
use crate::partitions::{n_sep_max, Structure};
use crate::roots::{first_root, BracketResult};
use crate::tol;
use crate::{Error, Result};

/// One off-diagonal coherence entering the witness left side.
#[derive(Debug, Clone, Serialize)]
pub struct CrossPair {
    /// 1-based mode indices, `i < j`.
    pub i: usize,
    /// Second mode.
    pub j: usize,
    /// `|⟨b_i† b_j⟩|`.
    pub value: f64,
}

/// Additive pieces of the witness right side.
#[derive(Debug, Clone, Serialize)]
pub struct WitnessTerms {
    /// All pair coherences summed on the left side.
    pub cross_pairs: Vec<CrossPair>,
    /// Largest pair moment `⟨n_i n_j⟩` over distinct modes.
    pub max_pair_moment: f64,
    /// `√(n_pairs · n_sep_max · max_pair_moment)`.
    pub pair_bound: f64,
    /// `Σ_i ⟨n_i⟩`.
    pub number_sum: f64,
    /// `(M−1)/2 · number_sum`.
    pub number_bound: f64,
    /// Number of unordered mode pairs `N(N−1)/2`.
    pub n_pairs: usize,
    /// Separable-pair prefactor for the block-size constraint.
    pub n_sep_max: usize,
}

/// Evaluated witness inequality.
#[derive(Debug, Clone, Serialize)]
pub struct WitnessReport {
    /// Number of modes.
    pub n_modes: usize,
    /// Largest block size `M` the certified structure may have.
    pub max_block: usize,
    /// Left side `Σ_{i<j} |⟨b_i† b_j⟩|`.
    pub lhs: f64,
    /// Right side of the separability bound.
    pub rhs: f64,
    /// `rhs − lhs`; negative means the bound is exceeded.
    pub margin: f64,
    /// True when `margin < -`[`tol::VIOLATION_MARGIN`].
    pub violated: bool,
    /// Breakdown of both sides.
    pub terms: WitnessTerms,
}

/// Evaluate the witness from a precomputed moment set.
pub fn evaluate_moments(obs: &ObservableSet, max_block: usize) -> Result<WitnessReport> {
    let n = obs.n_modes;
    if n < 2 {
        return Err(Error::Domain(format!(
            "the witness needs at least 2 modes, got {n}"
        )));
    }
    if max_block == 0 || max_block >= n {
        return Err(Error::Domain(format!(
            "block size must satisfy 1 <= M <= N-1, got M={max_block}, N={n}"
        )));
    }
    let n_pairs = n * (n - 1) / 2;
    let nsm = n_sep_max(n, max_block)?;

    let mut cross_pairs = Vec::with_capacity(n_pairs);
    let mut lhs = 0.0;
    let mut max_pair_moment = 0.0f64;
    for i in 1..=n {
        for j in (i + 1)..=n {
            let value = obs.cross_abs(i, j);
            lhs += value;
            cross_pairs.push(CrossPair { i, j, value });
            max_pair_moment = max_pair_moment.max(obs.pair(i, j));
        }
    }
    let number_sum: f64 = obs.numbers.iter().sum();
    let pair_bound = ((n_pairs * nsm) as f64 * max_pair_moment).sqrt();
    let number_bound = 0.5 * (max_block as f64 - 1.0) * number_sum;
    let rhs = pair_bound + number_bound;
    let margin = rhs - lhs;
    Ok(WitnessReport {
        n_modes: n,
        max_block,
        lhs,
        rhs,
        margin,
        violated: margin < -tol::VIOLATION_MARGIN,
        terms: WitnessTerms {
            cross_pairs,
            max_pair_moment,
            pair_bound,
            number_sum,
            number_bound,
            n_pairs,
            n_sep_max: nsm,
        },
    })
}

/// Evaluate the witness directly on a state.
pub fn evaluate(rho: &DensityOperator, max_block: usize) -> Result<WitnessReport> {
    let coeffs = ModeCoefficients::uniform(rho.spec().n_modes())?;
    let obs = observables(rho, &[], &coeffs)?;
    evaluate_moments(&obs, max_block)
}

/// Witness sides of the thermal W-like state from the closed-form moments.
pub fn thermal_sides(
    n: usize,
    max_block: usize,
    n_th: f64,
    kind: Kind,
) -> Result<WitnessReport> {
    let analytic = crate::hilbert::wlike_analytic(n, n_th, kind)?;
    evaluate_moments(&analytic, max_block)
}

/// Thermal occupation at which the thermal W-like state stops violating the
/// witness, found by bisection on the margin.
///
/// Bosonic margins are searched on `[0, hi]` with `hi` doubling from 1 up
/// to 64; two-level margins are searched on the fixed bracket
/// `[0, 1 − 1e-9]`, since the closed forms lose meaning at occupation 1.
/// [`BracketResult::NoSignChange`] reports that no threshold exists.
pub fn threshold_nth(
    n: usize,
    max_block: usize,
    kind: Kind,
    residual_tol: f64,
) -> Result<BracketResult> {
    // Validate the configuration once up front so the closure can unwrap.
    thermal_sides(n, max_block, 0.0, kind)?;
    let f = move |n_th: f64| {
        thermal_sides(n, max_block, n_th, kind)
            .map(|r| r.margin)
            .expect("validated configuration stays in domain")
    };
    Ok(match kind {
        Kind::Bosonic => first_root(f, 1.0, 64.0, true, residual_tol),
        Kind::TwoLevel => {
            let hi = 1.0 - 1e-9;
            first_root(f, hi, hi, false, residual_tol)
        }
    })
}

/// Largest mode count whose thermal W-like state still violates the witness
/// at `M = N−1` (genuine multipartite entanglement) for the given
/// occupation; 0 when even `N = 2` does not violate.
pub fn max_genuine_n(n_th: f64, kind: Kind, n_cap: usize) -> Result<usize> {
    let mut best = 0;
    for n in 2..=n_cap {
        if thermal_sides(n, n - 1, n_th, kind)?.violated {
            best = n;
        }
    }
    Ok(best)
}

/// Largest white-noise admixture `p` for which
/// `(1−p)·|W₃⟩⟨W₃| + p·I/8` still violates the witness at `M = 2`,
/// evaluated on the actual three-qubit density operator.
pub fn white_noise_threshold(residual_tol: f64) -> Result<f64> {
    let spec = SystemSpec::new(3, Kind::TwoLevel, 2)?;
    let dim = spec.dim();
    let mut amps = vec![Complex64::ZERO; dim];
    let basis_of = |mode: usize| -> usize {
        // One-excitation state of 1-based `mode`: occupation 1 there.
        2usize.pow((3 - mode) as u32)
    };
    let w = Complex64::new(1.0 / 3f64.sqrt(), 0.0);
    for mode in 1..=3 {
        amps[basis_of(mode)] = w;
    }
    let pure = DensityOperator::from_pure(spec, &amps)?;
    let mixed = DensityOperator::maximally_mixed(spec)?;
    let margin = |p: f64| -> f64 {
        let rho = DensityOperator::mix(&[(1.0 - p, &pure), (p, &mixed)])
            .expect("convex mixture of valid states is valid");
        evaluate(&rho, 2)
            .expect("three modes with M = 2 is a valid configuration")
            .margin
    };
    match first_root(margin, 1.0, 1.0, false, residual_tol) {
        BracketResult::Root(p) => Ok(p),
        BracketResult::NoSignChange => Err(Error::Domain(
            "white-noise margin does not change sign on [0, 1]".into(),
        )),
    }
}

/// A random mixture of block-product pure states, every block holding at
/// most `max_block` modes; such states can never violate the witness at
/// that block size.
#[derive(Debug, Clone)]
pub struct RandomConstrained {
    /// The mixed state.
    pub state: DensityOperator,
    /// Structure underlying each mixture term.
    pub structures: Vec<Structure>,
}

/// Draw a random `max_block`-constrained separable state: a uniform mixture
/// of `n_terms` pure states, each a tensor product of Haar-random block
/// states over a freshly sampled structure with blocks of size at most
/// `max_block`.
pub fn random_constrained_state(
    spec: &SystemSpec,
    max_block: usize,
    n_terms: usize,
    seed: u64,
) -> Result<RandomConstrained> {
    let n = spec.n_modes();
    if max_block == 0 || max_block > n {
        return Err(Error::Domain(format!(
            "block size must satisfy 1 <= M <= N, got M={max_block}, N={n}"
        )));
    }
    if n_terms == 0 {
        return Err(Error::Domain("at least one mixture term is needed".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut terms = Vec::with_capacity(n_terms);
    let mut structures = Vec::with_capacity(n_terms);
    for _ in 0..n_terms {
        let structure = random_structure(n, max_block, &mut rng)?;
        terms.push(random_block_product(spec, &structure, &mut rng)?);
        structures.push(structure);
    }
    let parts: Vec<(f64, &DensityOperator)> = terms.iter().map(|t| (1.0, t)).collect();
    Ok(RandomConstrained {
        state: DensityOperator::mix(&parts)?,
        structures,
    })
}

/// Sample a structure by assigning each mode to a uniformly chosen block
/// among those still below `max_block`, or to a new block.
fn random_structure(n: usize, max_block: usize, rng: &mut ChaCha12Rng) -> Result<Structure> {
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for mode in 1..=n {
        let open: Vec<usize> = (0..blocks.len())
            .filter(|&b| blocks[b].len() < max_block)
            .collect();
        let pick = rng.random_range(0..=open.len());
        if pick == open.len() {
            blocks.push(vec![mode]);
        } else {
            blocks[open[pick]].push(mode);
        }
    }
    Structure::from_blocks(&blocks, n)
}

/// Haar-random pure state on each block, tensored into the full space.
fn random_block_product(
    spec: &SystemSpec,
    structure: &Structure,
    rng: &mut ChaCha12Rng,
) -> Result<DensityOperator> {
    let levels = spec.levels();
    let block_states: Vec<Vec<Complex64>> = structure
        .blocks()
        .iter()
        .map(|block| {
            let bdim = levels.pow(block.len() as u32);
            let mut v: Vec<Complex64> = (0..bdim)
                .map(|_| {
                    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
                })
                .collect();
            let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            for c in &mut v {
                *c /= norm;
            }
            v
        })
        .collect();
    let dim = spec.dim();
    let mut amps = vec![Complex64::ZERO; dim];
    for (idx, amp) in amps.iter_mut().enumerate() {
        let mut a = Complex64::new(1.0, 0.0);
        for (block, psi) in structure.blocks().iter().zip(&block_states) {
            let mut local = 0usize;
            for &mode in block.members() {
                local = local * levels + spec.occupation(idx, mode);
            }
            a *= psi[local];
        }
        *amp = a;
    }
    DensityOperator::from_pure(*spec, &amps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ground_w_margin_is_half_the_depth_gap() {
        for n in 2..=5 {
            for m in 1..n {
                let report = thermal_sides(n, m, 0.0, Kind::Bosonic).unwrap();
                let expected = -((n - m) as f64) / 2.0;
                assert_abs_diff_eq!(report.margin, expected, epsilon = 1e-12);
                assert!(report.violated);
            }
        }
    }

    #[test]
    fn bipartite_reduction_is_pair_coherence_vs_pair_number() {
        let report = thermal_sides(2, 1, 0.3, Kind::Bosonic).unwrap();
        let a = crate::hilbert::wlike_closed_forms(2, 0.3, Kind::Bosonic).unwrap();
        assert_abs_diff_eq!(report.lhs, a.cross_abs, epsilon = 1e-12);
        assert_abs_diff_eq!(report.rhs, a.pair_number.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn bosonic_threshold_matches_bipartite_closed_form() {
        // At N = 2, M = 1 the threshold solves a quadratic with root
        // (2√2 − 1)/7.
        let expected = (2.0 * 2f64.sqrt() - 1.0) / 7.0;
        match threshold_nth(2, 1, Kind::Bosonic, 1e-9).unwrap() {
            BracketResult::Root(t) => assert_abs_diff_eq!(t, expected, epsilon = 1e-9),
            BracketResult::NoSignChange => panic!("threshold must exist"),
        }
    }

    #[test]
    fn two_level_threshold_matches_tripartite_closed_form() {
        // At N = 3, M = 2 the two-level threshold is (24 − √544)/16.
        let expected = (24.0 - 544f64.sqrt()) / 16.0;
        match threshold_nth(3, 2, Kind::TwoLevel, 1e-9).unwrap() {
            BracketResult::Root(t) => assert_abs_diff_eq!(t, expected, epsilon = 1e-9),
            BracketResult::NoSignChange => panic!("threshold must exist"),
        }
    }

    #[test]
    fn genuine_reach_matches_frozen_scan() {
        assert_eq!(max_genuine_n(0.14, Kind::Bosonic, 16).unwrap(), 2);
        assert_eq!(max_genuine_n(0.04, Kind::Bosonic, 16).unwrap(), 3);
        assert_eq!(max_genuine_n(0.30, Kind::Bosonic, 16).unwrap(), 0);
    }

    #[test]
    fn white_noise_threshold_solves_the_qubit_quadratic() {
        // Exact root of 25p² − 44p + 4 = 0 below 1: (44 − 16√6)/50.
        let expected = (44.0 - 16.0 * 6f64.sqrt()) / 50.0;
        let p = white_noise_threshold(1e-9).unwrap();
        assert_abs_diff_eq!(p, expected, epsilon = 1e-8);
    }

    #[test]
    fn random_constrained_states_respect_block_cap() {
        let spec = SystemSpec::new(4, Kind::TwoLevel, 2).unwrap();
        let drawn = random_constrained_state(&spec, 2, 5, 7).unwrap();
        for s in &drawn.structures {
            assert!(s.blocks().iter().all(|b| b.len() <= 2));
        }
        let report = evaluate(&drawn.state, 2).unwrap();
        assert!(!report.violated, "separable draw must not violate");
    }
}
