//! Property suites for the structural invariants: phase covariance of the
//! moment tables, partition combinatorics, soundness of both witnesses on
//! randomly generated admissible states, and closed-form thresholds
//! bracketing the violation region.

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use wcert_core::entanglement;
use wcert_core::hilbert::{
    add_particle_nonlocal, add_particle_semilocal, build_thermal, DensityOperator, Kind,
    ModeCoefficients, SystemSpec,
};
use wcert_core::nonlocality;
use wcert_core::partitions::{
    enumerate_structures, is_irreducible, n_sep_max, Combination, Structure,
};
use wcert_core::roots::BracketResult;

/// Occupation of `mode0` in basis index `idx`, mode 1 slowest.
fn occupation(spec: &SystemSpec, idx: usize, mode0: usize) -> usize {
    let d = spec.cutoff();
    let stride = d.pow((spec.n_modes() - 1 - mode0) as u32);
    idx / stride % d
}

/// Conjugate a state by the local phase rotation `b_m → e^{iθ_m} b_m`,
/// whose matrix elements pick up `e^{i Σ_m θ_m (n_m(row) − n_m(col))}`.
fn rotate_locally(rho: &DensityOperator, thetas: &[f64]) -> DensityOperator {
    let spec = *rho.spec();
    let dim = spec.dim();
    let mut rotated = rho.matrix().clone();
    for col in 0..dim {
        for row in 0..dim {
            let mut phase = 0.0;
            for (m, &theta) in thetas.iter().enumerate() {
                let diff =
                    occupation(&spec, row, m) as f64 - occupation(&spec, col, m) as f64;
                phase += theta * diff;
            }
            rotated[(row, col)] *= Complex64::from_polar(1.0, phase);
        }
    }
    DensityOperator::new(spec, rotated).expect("local rotation preserves validity")
}

fn normalized_coeffs(parts: &[(f64, f64)]) -> ModeCoefficients {
    let values: Vec<Complex64> = parts
        .iter()
        .map(|&(mag, phase)| Complex64::from_polar(mag, phase))
        .collect();
    ModeCoefficients::new(values).expect("magnitudes are bounded away from zero")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Local phase rotations change only the phases of cross moments:
    /// moduli, occupations, and pair moments stay put within 1e-12.
    #[test]
    fn local_phase_rotation_preserves_witness_moments(
        n_th in 0.0..0.3f64,
        thetas in prop::array::uniform3(0.0..std::f64::consts::TAU),
        coeff_parts in prop::array::uniform3((0.2..1.0f64, 0.0..std::f64::consts::TAU)),
    ) {
        let spec = SystemSpec::new(3, Kind::Bosonic, 4).unwrap();
        let base = build_thermal(&spec, n_th).unwrap();
        let coeffs = normalized_coeffs(&coeff_parts);
        let rho = add_particle_nonlocal(&base, &coeffs).unwrap().state;
        let rotated = rotate_locally(&rho, &thetas);

        for i in 1..=3usize {
            prop_assert!(
                (rho.number_moment(i) - rotated.number_moment(i)).abs() <= 1e-12
            );
            for j in (i + 1)..=3 {
                prop_assert!(
                    (rho.pair_number_moment(i, j) - rotated.pair_number_moment(i, j)).abs()
                        <= 1e-12
                );
                let before = rho.cross_moment(i, j);
                let after = rotated.cross_moment(i, j);
                prop_assert!((before.norm() - after.norm()).abs() <= 1e-12);
                // The phase moves by exactly θ_i − θ_j.
                if before.norm() > 1e-9 {
                    let moved = after * Complex64::from_polar(1.0, thetas[j - 1] - thetas[i - 1]);
                    prop_assert!((moved - before).norm() <= 1e-9);
                }
            }
        }

        let report = entanglement::evaluate(&rho, 2).unwrap();
        let report_rot = entanglement::evaluate(&rotated, 2).unwrap();
        prop_assert!((report.margin - report_rot.margin).abs() <= 1e-10);
    }

    /// Semilocal addition over the single full block is the nonlocal
    /// addition, entrywise.
    #[test]
    fn semilocal_single_block_matches_nonlocal(
        n_th in 0.0..0.4f64,
        coeff_parts in prop::array::uniform3((0.2..1.0f64, 0.0..std::f64::consts::TAU)),
    ) {
        let spec = SystemSpec::new(3, Kind::Bosonic, 4).unwrap();
        let base = build_thermal(&spec, n_th).unwrap();
        let coeffs = normalized_coeffs(&coeff_parts);
        let full = Structure::new(
            vec![Combination::new(vec![1, 2, 3], 3).unwrap()],
            3,
        )
        .unwrap();
        let nonlocal = add_particle_nonlocal(&base, &coeffs).unwrap().state;
        let semilocal = add_particle_semilocal(&base, &full, &coeffs).unwrap().state;
        let diff = nonlocal.matrix() - semilocal.matrix();
        prop_assert!(diff.iter().all(|e| e.norm() <= 1e-12));
    }

    /// Irreducibility depends only on the block-size signature, so any
    /// relabeling of modes leaves it unchanged, and it coincides with the
    /// pairwise-merge criterion evaluated on the relabeled structure.
    #[test]
    fn irreducibility_is_permutation_invariant(
        n in 2..=7usize,
        pick in any::<prop::sample::Index>(),
        max_block_pick in any::<prop::sample::Index>(),
        perm_seed in any::<u64>(),
    ) {
        let all = enumerate_structures(n, n).unwrap();
        let structure = &all[pick.index(all.len())];
        let max_block = 1 + max_block_pick.index(n);

        let mut perm: Vec<usize> = (1..=n).collect();
        let mut rng = ChaCha12Rng::seed_from_u64(perm_seed);
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let relabeled = Structure::new(
            structure
                .blocks()
                .iter()
                .map(|b| {
                    Combination::new(
                        b.members().iter().map(|&m| perm[m - 1]).collect(),
                        n,
                    )
                    .unwrap()
                })
                .collect(),
            n,
        )
        .unwrap();

        prop_assert_eq!(structure.signature(), relabeled.signature());
        let flag = is_irreducible(&structure.signature(), max_block);
        prop_assert_eq!(flag, is_irreducible(&relabeled.signature(), max_block));

        // Merge criterion: no two blocks may fit inside one cap-sized block.
        let sizes: Vec<usize> = relabeled.blocks().iter().map(|b| b.members().len()).collect();
        let mut mergeable = false;
        for a in 0..sizes.len() {
            for b in (a + 1)..sizes.len() {
                if sizes[a] + sizes[b] <= max_block {
                    mergeable = true;
                }
            }
        }
        prop_assert_eq!(flag, !mergeable);
    }

    /// States mixed from block products with blocks of at most `M` modes
    /// never violate the witness evaluated at `M`.
    #[test]
    fn constrained_separable_states_satisfy_the_witness(
        config in 0..3usize,
        max_block_pick in any::<prop::sample::Index>(),
        n_terms in 1..4usize,
        seed in any::<u64>(),
    ) {
        let spec = match config {
            0 => SystemSpec::new(3, Kind::TwoLevel, 2).unwrap(),
            1 => SystemSpec::new(4, Kind::TwoLevel, 2).unwrap(),
            _ => SystemSpec::new(3, Kind::Bosonic, 4).unwrap(),
        };
        let n = spec.n_modes();
        let max_block = 1 + max_block_pick.index(n - 1);
        let sample =
            entanglement::random_constrained_state(&spec, max_block, n_terms, seed).unwrap();
        let report = entanglement::evaluate(&sample.state, max_block).unwrap();
        prop_assert!(
            !report.violated,
            "separable state violated the witness: margin {}",
            report.margin
        );
    }

    /// Semilocal particle addition with blocks of at most `M` modes never
    /// exceeds the nonlocality bound evaluated at `M`.
    #[test]
    fn semilocal_additions_satisfy_the_nonlocality_bound(
        n in 2..=3usize,
        n_th_pick in 0..3usize,
        structure_pick in any::<prop::sample::Index>(),
        coeff_parts in prop::array::uniform3((0.2..1.0f64, 0.0..std::f64::consts::TAU)),
    ) {
        let n_th = [0.0, 0.1, 0.5][n_th_pick];
        let cutoff = if n == 2 { 8 } else { 6 };
        let spec = SystemSpec::new(n, Kind::Bosonic, cutoff).unwrap();
        let base = build_thermal(&spec, n_th).unwrap();
        let coeffs = normalized_coeffs(&coeff_parts[..n]);

        let max_block = n - 1;
        let admissible: Vec<Structure> = enumerate_structures(n, max_block).unwrap();
        let structure = &admissible[structure_pick.index(admissible.len())];

        let prepared = add_particle_semilocal(&base, structure, &coeffs).unwrap().state;
        let report = nonlocality::evaluate(&nonlocality::NonlocalityInputs {
            prepared: &prepared,
            base: &base,
            coeffs: &coeffs,
            max_block,
        })
        .unwrap();
        prop_assert!(
            !report.violated,
            "semilocal addition violated the bound: margin {}, structure {:?}",
            report.margin,
            structure
        );
    }

    /// Closed-form and numeric W-like moments agree at N = 2 across the
    /// thermal range the witnesses operate in, within the 1e-8 floor or
    /// ten times the recorded truncation mass, whichever is larger.
    #[test]
    fn closed_forms_match_numerics_bipartite(n_th in 0.0..0.3f64) {
        let cutoff = wcert_core::hilbert::adaptive_cutoff(n_th, 1e-9).unwrap();
        let spec = SystemSpec::new(2, Kind::Bosonic, cutoff).unwrap();
        let base = build_thermal(&spec, n_th).unwrap();
        let added = add_particle_nonlocal(&base, &ModeCoefficients::uniform(2).unwrap())
            .unwrap();
        let rho = added.state;
        let tail = wcert_core::hilbert::thermal_tail_mass(&spec, n_th).unwrap();
        let tolerance = 1e-8f64.max(10.0 * (tail + added.leakage));
        let analytic = wcert_core::hilbert::wlike_closed_forms(2, n_th, Kind::Bosonic).unwrap();
        prop_assert!((rho.cross_moment(1, 2).norm() - analytic.cross_abs).abs() <= tolerance);
        prop_assert!((rho.number_moment(1) - analytic.number).abs() <= tolerance);
        prop_assert!((rho.pair_number_moment(1, 2) - analytic.pair_number).abs() <= tolerance);
    }
}

/// Structure enumeration is exhaustive (Bell numbers) and every returned
/// structure partitions the modes.
#[test]
fn enumeration_matches_bell_numbers_and_partitions_the_modes() {
    let bell = [1usize, 1, 2, 5, 15, 52, 203, 877, 4140];
    for (n, &count) in bell.iter().enumerate().skip(1) {
        let all = enumerate_structures(n, n).unwrap();
        assert_eq!(all.len(), count, "structure count at n = {n}");
        for s in &all {
            let mut seen: Vec<usize> = s
                .blocks()
                .iter()
                .flat_map(|b| b.members().iter().copied())
                .collect();
            seen.sort_unstable();
            let expect: Vec<usize> = (1..=n).collect();
            assert_eq!(seen, expect, "blocks must partition 1..={n}");
            assert!(s.blocks().iter().all(|b| !b.members().is_empty()));
        }
    }
}

/// At `M = N − 1` the separable-pair maximum has the closed form
/// `⌊N²/4⌋`, from splitting the modes into two nearly equal blocks.
#[test]
fn nsep_closed_form_at_largest_block() {
    for n in 2..=12usize {
        assert_eq!(
            n_sep_max(n, n - 1).unwrap(),
            n * n / 4,
            "closed form at n = {n}"
        );
    }
}

/// Bosonic and two-level entanglement thresholds converge as the mode
/// count grows; at N = 7 they differ by less than 0.002.
#[test]
fn thresholds_converge_at_seven_modes() {
    let root = |kind| match entanglement::threshold_nth(7, 6, kind, 1e-9).unwrap() {
        BracketResult::Root(x) => x,
        BracketResult::NoSignChange => panic!("threshold exists at N = 7"),
    };
    let bosonic = root(Kind::Bosonic);
    let two_level = root(Kind::TwoLevel);
    assert!(
        (bosonic - two_level).abs() < 0.002,
        "thresholds {bosonic} and {two_level} have not converged"
    );
}

/// The thermal W-like margin is negative strictly below each violation
/// threshold and non-negative above it, for both witnesses and kinds.
#[test]
fn thermal_margins_flip_sign_at_the_thresholds() {
    for kind in [Kind::Bosonic, Kind::TwoLevel] {
        for n in 2..=7usize {
            for m in 1..n {
                let ent = match entanglement::threshold_nth(n, m, kind, 1e-9).unwrap() {
                    BracketResult::Root(x) => x,
                    BracketResult::NoSignChange => panic!("missing threshold ({n}, {m})"),
                };
                let below = (ent - 0.01).max(ent * 0.5);
                let above = ent + 0.01;
                assert!(
                    entanglement::thermal_sides(n, m, below, kind).unwrap().margin < 0.0,
                    "no violation below the threshold at ({n}, {m}, {kind:?})"
                );
                assert!(
                    entanglement::thermal_sides(n, m, above, kind).unwrap().margin > 0.0,
                    "violation above the threshold at ({n}, {m}, {kind:?})"
                );

                let nl = match nonlocality::threshold_nth(n, m, kind, 1e-9).unwrap() {
                    BracketResult::Root(x) => x,
                    BracketResult::NoSignChange => panic!("missing threshold ({n}, {m})"),
                };
                let below = (nl - 0.01).max(nl * 0.5);
                let above = nl + 0.01;
                assert!(
                    nonlocality::thermal_sides(n, m, below, kind).unwrap().margin < 0.0,
                    "no nonlocality violation below the threshold at ({n}, {m}, {kind:?})"
                );
                assert!(
                    nonlocality::thermal_sides(n, m, above, kind).unwrap().margin > 0.0,
                    "nonlocality violation above the threshold at ({n}, {m}, {kind:?})"
                );
            }
        }
    }
}

/// The density-operator constructor accepts every matrix this crate
/// produces and the validated matrix round-trips through it.
#[test]
fn construction_checks_accept_produced_states() {
    let spec = SystemSpec::new(2, Kind::Bosonic, 6).unwrap();
    let base = build_thermal(&spec, 0.2).unwrap();
    let rho = add_particle_nonlocal(&base, &ModeCoefficients::uniform(2).unwrap())
        .unwrap()
        .state;
    for state in [&base, &rho] {
        let rebuilt = DensityOperator::new(*state.spec(), state.matrix().clone()).unwrap();
        assert_eq!(rebuilt.matrix(), state.matrix());
    }
}
