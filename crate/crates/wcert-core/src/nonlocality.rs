//! Nonlocality witness for single-particle addition: certifies that the
//! added excitation was delocalized over more than `M` modes.
//!
//! The witness compares the conditioned-minus-initial coherence sum
//! `L = Σ_{i<j} |⟨b_i† b_j⟩_c − ⟨b_i† b_j⟩_0|` against the largest value
//! attainable when the particle enters a single block of some structure
//! with blocks of at most `M` modes:
//!
//! `L ≤ max_S Σ_{C∈S} P_C · B_C`
//!
//! where `P_C` is the probability the particle entered block `C` and `B_C`
//! bounds that block's coherence shift from initial-state moments alone.
//! The per-block bound is derived for bosonic commutation relations; for
//! two-level modes only the thermal closed forms are provided.

use std::collections::HashMap;

use serde::Serialize;

use crate::entanglement::CrossPair;
use crate::hilbert::{BlockWeight, DensityOperator, Kind, ModeCoefficients};
use crate::partitions::{enumerate_structures, ClassSignature, Combination, Structure};
use crate::roots::{first_root, BracketResult};
use crate::tol;
use crate::{Error, Result};

/// Initial-state moments the per-block bound consumes.
///
/// The provided [`b_c_bound`](BaseMoments::b_c_bound) evaluates the general
/// bosonic bound; implementors with extra structure (such as symmetric
/// thermal states) may override it with a closed form.
pub trait BaseMoments {
    /// Number of modes of the initial state.
    fn n_modes(&self) -> usize;

    /// Mode kind of the initial state.
    fn kind(&self) -> Kind;

    /// Occupation `⟨n_i⟩_0` of a 1-based mode.
    fn number(&self, i: usize) -> Result<f64>;

    /// Pair moment `⟨n_i n_j⟩_0` for distinct 1-based modes.
    fn pair_number(&self, i: usize, j: usize) -> Result<f64>;

    /// Collective moments `(⟨n_C⟩_0, ⟨n_C²⟩_0)` of the block's normalized
    /// mode.
    fn collective_number(
        &self,
        subset: &Combination,
        coeffs: &ModeCoefficients,
    ) -> Result<(f64, f64)>;

    /// Creation weight `Tr(b_C† ρ_0 b_C)` of the block's normalized mode,
    /// which the bosonic commutator fixes at `⟨n_C⟩_0 + 1`.
    fn create_weight(&self, subset: &Combination, coeffs: &ModeCoefficients) -> Result<f64> {
        let (nc, _) = self.collective_number(subset, coeffs)?;
        Ok(nc + 1.0)
    }

    /// Bound `B_C` on the block's summed coherence shift:
    ///
    /// `B_C = √⟨Δn_C²⟩_0 / (2(⟨n_C⟩_0+1)) ·
    ///        Σ_j ( Σ_{i∈C, i≠j} √(⟨n_i n_j⟩_0 + ⟨n_j⟩_0)
    ///            + Σ_{i∉C, i≠j} √(⟨n_i n_j⟩_0 + ⟨n_i⟩_0) )
    ///      + (|C|−1)/(2(⟨n_C⟩_0+1)) · (√(Σ_{i∈C} ⟨n_i⟩_0 ⟨n_C⟩_0) + 1)`
    ///
    /// valid for bosonic modes; two-level bases reject the general form.
    fn b_c_bound(&self, subset: &Combination, coeffs: &ModeCoefficients) -> Result<f64> {
        if self.kind() == Kind::TwoLevel {
            return Err(Error::Domain(
                "the general per-block bound assumes bosonic commutation; \
                 two-level systems only support the thermal closed forms"
                    .into(),
            ));
        }
        let n = self.n_modes();
        let (nc, nc_sq) = self.collective_number(subset, coeffs)?;
        let var = (nc_sq - nc * nc).max(0.0);
        let denom = 2.0 * (nc + 1.0);

        let mut pair_sum = 0.0;
        for j in 1..=n {
            let nj = self.number(j)?;
            for i in 1..=n {
                if i == j {
                    continue;
                }
                let extra = if subset.contains(i) {
                    nj
                } else {
                    self.number(i)?
                };
                pair_sum += (self.pair_number(i, j)? + extra).max(0.0).sqrt();
            }
        }
        let first = var.sqrt() / denom * pair_sum;

        let mut sum_ni = 0.0;
        for &i in subset.members() {
            sum_ni += self.number(i)?;
        }
        let second =
            (subset.len() as f64 - 1.0) / denom * ((sum_ni * nc).max(0.0).sqrt() + 1.0);
        Ok(first + second)
    }
}

impl BaseMoments for DensityOperator {
    fn n_modes(&self) -> usize {
        self.spec().n_modes()
    }

    fn kind(&self) -> Kind {
        self.spec().kind()
    }

    fn number(&self, i: usize) -> Result<f64> {
        Ok(self.number_moment(i))
    }

    fn pair_number(&self, i: usize, j: usize) -> Result<f64> {
        Ok(self.pair_number_moment(i, j))
    }

    fn collective_number(
        &self,
        subset: &Combination,
        coeffs: &ModeCoefficients,
    ) -> Result<(f64, f64)> {
        let cm = self.collective_moments(subset, coeffs)?;
        Ok((cm.number, cm.number_sq))
    }

    /// Exact truncated-space creation weight, kind-independent.
    fn create_weight(&self, subset: &Combination, coeffs: &ModeCoefficients) -> Result<f64> {
        self.collective_create_weight(subset, coeffs)
    }
}

/// Symmetric thermal initial state, defined by its closed-form moments.
#[derive(Debug, Clone, Copy)]
pub struct SymmetricThermal {
    n_modes: usize,
    n_th: f64,
    kind: Kind,
}

impl SymmetricThermal {
    /// Validate the occupation domain for the kind.
    pub fn new(n_modes: usize, n_th: f64, kind: Kind) -> Result<Self> {
        if n_modes < 2 {
            return Err(Error::Domain(format!(
                "the witness needs at least 2 modes, got {n_modes}"
            )));
        }
        match kind {
            Kind::Bosonic if !n_th.is_finite() || n_th < 0.0 => {
                return Err(Error::Domain(format!(
                    "bosonic thermal occupation must be non-negative, got {n_th}"
                )));
            }
            Kind::TwoLevel if !(0.0..1.0).contains(&n_th) => {
                return Err(Error::Domain(format!(
                    "two-level thermal occupation must lie in [0, 1), got {n_th}"
                )));
            }
            _ => {}
        }
        Ok(Self {
            n_modes,
            n_th,
            kind,
        })
    }

    /// `⟨b_i b_i†⟩` of one thermal mode: `n_th+1` bosonic, `1−n_th`
    /// two-level.
    fn plus(&self) -> f64 {
        match self.kind {
            Kind::Bosonic => self.n_th + 1.0,
            Kind::TwoLevel => 1.0 - self.n_th,
        }
    }
}

impl BaseMoments for SymmetricThermal {
    fn n_modes(&self) -> usize {
        self.n_modes
    }

    fn kind(&self) -> Kind {
        self.kind
    }

    fn number(&self, _i: usize) -> Result<f64> {
        Ok(self.n_th)
    }

    fn pair_number(&self, _i: usize, _j: usize) -> Result<f64> {
        Ok(self.n_th * self.n_th)
    }

    /// The normalized collective mode of a symmetric thermal product is
    /// itself thermal at the same occupation, with variance
    /// `n_th·(n_th+1)` (bosonic) or `n_th·(1−n_th)` (two-level).
    fn collective_number(
        &self,
        _subset: &Combination,
        _coeffs: &ModeCoefficients,
    ) -> Result<(f64, f64)> {
        // The variance is n_th·plus for both kinds, so ⟨n_C²⟩ follows.
        let n = self.n_th;
        Ok((n, n * n + n * self.plus()))
    }

    fn create_weight(&self, _subset: &Combination, _coeffs: &ModeCoefficients) -> Result<f64> {
        Ok(self.plus())
    }

    /// Thermal closed form of the per-block bound:
    /// `n_th·N(N−1)/2 + (|C|−1)(√|C|·n_th + 1)/(2·plus)` with
    /// `plus = n_th+1` (bosonic) or `1−n_th` (two-level).
    fn b_c_bound(&self, subset: &Combination, _coeffs: &ModeCoefficients) -> Result<f64> {
        let n = self.n_modes as f64;
        let c = subset.len() as f64;
        let first = self.n_th * n * (n - 1.0) / 2.0;
        let second = (c - 1.0) * (c.sqrt() * self.n_th + 1.0) / (2.0 * self.plus());
        Ok(first + second)
    }
}

/// Probability that the particle entered each block of the structure:
/// `P_C ∝ Tr(b_C† ρ_0 b_C) · Σ_{i∈C} |c_i|²`.
///
/// Blocks with numerically zero coefficient weight get probability zero.
pub fn locality_probabilities<B: BaseMoments>(
    base: &B,
    structure: &Structure,
    coeffs: &ModeCoefficients,
) -> Result<Vec<BlockWeight>> {
    if structure.n_modes() != base.n_modes() || coeffs.len() != base.n_modes() {
        return Err(Error::Validation(format!(
            "structure ({} modes) and coefficients ({}) must match the {} base modes",
            structure.n_modes(),
            coeffs.len(),
            base.n_modes()
        )));
    }
    let mut weights = Vec::with_capacity(structure.blocks().len());
    for block in structure.blocks() {
        let w_c: f64 = block.members().iter().map(|&i| coeffs.get(i).norm_sqr()).sum();
        let q = if w_c <= tol::DEGENERATE_NORM {
            0.0
        } else {
            (base.create_weight(block, coeffs)? * w_c).max(0.0)
        };
        weights.push(q);
    }
    let total: f64 = weights.iter().sum();
    if total <= tol::DEGENERATE_NORM {
        return Err(Error::Degenerate(
            "every block of the structure has vanishing creation weight".into(),
        ));
    }
    Ok(structure
        .blocks()
        .iter()
        .zip(&weights)
        .map(|(block, &q)| BlockWeight {
            block: block.clone(),
            probability: q / total,
        })
        .collect())
}

/// One block's contribution to a structure's bound.
#[derive(Debug, Clone, Serialize)]
pub struct BlockBound {
    /// The block of modes.
    pub block: Combination,
    /// `P_C`, the probability the particle entered this block.
    pub probability: f64,
    /// `B_C`, the block's coherence-shift bound (zero for blocks with
    /// vanishing probability, which never contribute).
    pub bound: f64,
}

/// A structure's aggregate bound `Σ_C P_C B_C`.
#[derive(Debug, Clone, Serialize)]
pub struct StructureBound {
    /// The structure.
    pub structure: Structure,
    /// Per-block probabilities and bounds.
    pub per_block: Vec<BlockBound>,
    /// `Σ_C P_C B_C`.
    pub total: f64,
}

/// The witness right side: the maximal structure bound.
#[derive(Debug, Clone, Serialize)]
pub struct NonlocalityBound {
    /// The maximizing structure and its breakdown.
    pub best: StructureBound,
    /// Number of structures scanned.
    pub scanned: usize,
    /// False when enumeration was refused by the cap and only the
    /// symmetric fallback structure (blocks of `M` consecutive modes plus
    /// a remainder) was evaluated.
    pub exhaustive: bool,
}

/// Evaluate one structure's bound `Σ_C P_C B_C`, memoizing per-block
/// quantities across calls.
fn structure_bound<B: BaseMoments>(
    base: &B,
    structure: &Structure,
    coeffs: &ModeCoefficients,
    memo: &mut HashMap<Combination, f64>,
) -> Result<StructureBound> {
    let probs = locality_probabilities(base, structure, coeffs)?;
    let mut per_block = Vec::with_capacity(probs.len());
    let mut total = 0.0;
    for bw in probs {
        let bound = if bw.probability <= 0.0 {
            0.0
        } else if let Some(&b) = memo.get(&bw.block) {
            b
        } else {
            let b = base.b_c_bound(&bw.block, coeffs)?;
            memo.insert(bw.block.clone(), b);
            b
        };
        total += bw.probability * bound;
        per_block.push(BlockBound {
            block: bw.block,
            probability: bw.probability,
            bound,
        });
    }
    Ok(StructureBound {
        structure: structure.clone(),
        per_block,
        total,
    })
}

/// The symmetric fallback structure: `⌊N/M⌋` blocks of `M` consecutive
/// modes plus a remainder block, which maximizes the bound for symmetric
/// bases.
fn fallback_structure(n: usize, max_block: usize) -> Result<Structure> {
    let blocks: Vec<Vec<usize>> = (1..=n)
        .collect::<Vec<_>>()
        .chunks(max_block)
        .map(|c| c.to_vec())
        .collect();
    Structure::from_blocks(&blocks, n)
}

/// Maximize `Σ_C P_C B_C` over all structures with blocks of at most
/// `max_block` modes.
///
/// Structures are enumerated exhaustively up to the partition-enumeration
/// cap; beyond it, only the symmetric fallback structure is evaluated and
/// the result is flagged non-exhaustive.
pub fn bound<B: BaseMoments>(
    base: &B,
    max_block: usize,
    coeffs: &ModeCoefficients,
) -> Result<NonlocalityBound> {
    let n = base.n_modes();
    if n < 2 || max_block == 0 || max_block >= n {
        return Err(Error::Domain(format!(
            "the nonlocality bound needs N >= 2 and 1 <= M <= N-1, got N={n}, M={max_block}"
        )));
    }
    if coeffs.len() != n {
        return Err(Error::Validation(format!(
            "coefficients cover {} modes, base has {n}",
            coeffs.len()
        )));
    }
    let (structures, exhaustive) = match enumerate_structures(n, max_block) {
        Ok(s) => (s, true),
        Err(Error::EnumerationCap(_)) => (vec![fallback_structure(n, max_block)?], false),
        Err(e) => return Err(e),
    };
    let mut memo = HashMap::new();
    let mut best: Option<StructureBound> = None;
    let scanned = structures.len();
    for s in &structures {
        let sb = structure_bound(base, s, coeffs, &mut memo)?;
        if best.as_ref().is_none_or(|b| sb.total > b.total) {
            best = Some(sb);
        }
    }
    Ok(NonlocalityBound {
        best: best.expect("at least one structure is always evaluated"),
        scanned,
        exhaustive,
    })
}

/// Coherence-shift sum between the conditioned and initial states:
/// `Σ_{i<j} |⟨b_i† b_j⟩_c − ⟨b_i† b_j⟩_0|`, with the per-pair breakdown.
pub fn lhs_difference(
    prepared: &DensityOperator,
    base: &DensityOperator,
) -> Result<(f64, Vec<CrossPair>)> {
    if prepared.spec() != base.spec() {
        return Err(Error::Validation(
            "conditioned and initial states live on different specs".into(),
        ));
    }
    let n = base.spec().n_modes();
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    let mut lhs = 0.0;
    for i in 1..=n {
        for j in (i + 1)..=n {
            let value = (prepared.cross_moment(i, j) - base.cross_moment(i, j)).norm();
            lhs += value;
            pairs.push(CrossPair { i, j, value });
        }
    }
    Ok((lhs, pairs))
}

/// States and parameters of one nonlocality evaluation.
#[derive(Debug, Clone)]
pub struct NonlocalityInputs<'a> {
    /// The conditioned state after particle addition.
    pub prepared: &'a DensityOperator,
    /// The initial state before addition.
    pub base: &'a DensityOperator,
    /// Addition coefficients (their magnitudes enter the probabilities).
    pub coeffs: &'a ModeCoefficients,
    /// Largest block size the semilocal model may use.
    pub max_block: usize,
}

/// Evaluated nonlocality witness.
#[derive(Debug, Clone, Serialize)]
pub struct NonlocalityReport {
    /// Number of modes.
    pub n_modes: usize,
    /// Largest block size of the semilocal model.
    pub max_block: usize,
    /// `Σ_{i<j} |⟨b_i† b_j⟩_c − ⟨b_i† b_j⟩_0|`.
    pub lhs: f64,
    /// `max_S Σ_C P_C B_C`.
    pub rhs: f64,
    /// `rhs − lhs`; negative means the semilocal bound is exceeded.
    pub margin: f64,
    /// True when `margin < -`[`tol::VIOLATION_MARGIN`].
    pub violated: bool,
    /// Per-pair coherence shifts on the left side.
    pub pairs: Vec<CrossPair>,
    /// The maximizing structure and scan metadata.
    pub bound: NonlocalityBound,
}

/// Evaluate the nonlocality witness on explicit states.
pub fn evaluate(inputs: &NonlocalityInputs<'_>) -> Result<NonlocalityReport> {
    let (lhs, pairs) = lhs_difference(inputs.prepared, inputs.base)?;
    let bound = bound(inputs.base, inputs.max_block, inputs.coeffs)?;
    let rhs = bound.best.total;
    let margin = rhs - lhs;
    Ok(NonlocalityReport {
        n_modes: inputs.base.spec().n_modes(),
        max_block: inputs.max_block,
        lhs,
        rhs,
        margin,
        violated: margin < -tol::VIOLATION_MARGIN,
        pairs,
        bound,
    })
}

/// Closed-form thermal witness sides.
#[derive(Debug, Clone, Serialize)]
pub struct ThermalNonlocality {
    /// Number of modes.
    pub n_modes: usize,
    /// Largest block size of the semilocal model.
    pub max_block: usize,
    /// Thermal occupation.
    pub n_th: f64,
    /// Mode kind.
    pub kind: Kind,
    /// `(N−1)·plus/2`.
    pub lhs: f64,
    /// Closed-form maximal structure bound.
    pub rhs: f64,
    /// `rhs − lhs`.
    pub margin: f64,
    /// True when `margin < -`[`tol::VIOLATION_MARGIN`].
    pub violated: bool,
    /// Signature of the maximizing structure: `⌊N/M⌋` blocks of size `M`
    /// plus a remainder.
    pub argmax: ClassSignature,
}

/// Thermal witness sides from the closed forms. With `k = ⌊N/M⌋` and
/// `R = N − kM`:
///
/// `lhs = (N−1)·plus/2`
/// `rhs = n_th·N(N−1)/2 + [k·M^{3/2}(M−1)(n_th + 1/√M)
///        + (R−1)(R^{3/2}·n_th + R)] / (2N·plus)`
///
/// where `plus = n_th+1` (bosonic) or `1−n_th` (two-level).
pub fn thermal_sides(
    n: usize,
    max_block: usize,
    n_th: f64,
    kind: Kind,
) -> Result<ThermalNonlocality> {
    if n < 2 || max_block == 0 || max_block >= n {
        return Err(Error::Domain(format!(
            "the nonlocality bound needs N >= 2 and 1 <= M <= N-1, got N={n}, M={max_block}"
        )));
    }
    let thermal = SymmetricThermal::new(n, n_th, kind)?;
    let plus = thermal.plus();
    let nf = n as f64;
    let mf = max_block as f64;
    let k = n / max_block;
    let r = n - k * max_block;
    let rf = r as f64;

    let lhs = (nf - 1.0) * plus / 2.0;
    let block_term = k as f64 * mf.powf(1.5) * (mf - 1.0) * (n_th + 1.0 / mf.sqrt());
    // (R−1)(R^{3/2}·n_th + R) vanishes for R ∈ {0, 1} without needing 1/√R.
    let remainder_term = (rf - 1.0) * (rf.powf(1.5) * n_th + rf);
    let rhs = n_th * nf * (nf - 1.0) / 2.0
        + (block_term + remainder_term) / (2.0 * nf * plus);
    let margin = rhs - lhs;

    let mut sizes = vec![max_block; k];
    if r > 0 {
        sizes.push(r);
    }
    Ok(ThermalNonlocality {
        n_modes: n,
        max_block,
        n_th,
        kind,
        lhs,
        rhs,
        margin,
        violated: margin < -tol::VIOLATION_MARGIN,
        argmax: ClassSignature::new(sizes)?,
    })
}

/// Thermal occupation at which the nonlocally-added thermal W-like state
/// stops violating the witness; bracket handling as in
/// [`crate::entanglement::threshold_nth`].
pub fn threshold_nth(
    n: usize,
    max_block: usize,
    kind: Kind,
    residual_tol: f64,
) -> Result<BracketResult> {
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

/// Largest mode count whose thermal W-like state still violates the
/// nonlocality witness at `M = N−1` for the given occupation; 0 when even
/// `N = 2` does not violate.
pub fn max_nonlocal_n(n_th: f64, kind: Kind, n_cap: usize) -> Result<usize> {
    let mut best = 0;
    for n in 2..=n_cap {
        if thermal_sides(n, n - 1, n_th, kind)?.violated {
            best = n;
        }
    }
    Ok(best)
}
