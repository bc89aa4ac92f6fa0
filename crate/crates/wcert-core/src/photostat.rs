//! Raman-sideband photodetection layer: optical networks over the output
//! modes, gain bookkeeping, interference recovery of cross moments, witness
//! evaluation from photocounts, and finite-shot Monte Carlo estimates.
//!
//! The sideband correspondence maps each oscillator mode to two photon
//! channels: a Stokes photon is created together with an excitation
//! (`a_S,i ∝ G_S b_i†`) and an anti-Stokes photon is created by removing
//! one (`a_AS,i ∝ G_AS b_i`). Photocount expectation values therefore carry
//! powers of the gains `G_S²`, `G_AS²` that cancel in the witness verdicts.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::hilbert::{
    collective_number_matrix, number_diagonal, pair_number_diagonal, DensityOperator, Kind,
    ModeCoefficients,
};
use crate::nonlocality::{self, BaseMoments};
use crate::partitions::{enumerate_structures, n_sep_max, Combination};
use crate::tol;
use crate::{Error, Result};

/// Finite and strictly positive; rejects NaN.
fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

/// Finite and non-negative; rejects NaN.
fn non_negative(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

/// One element of an optical network acting on the anti-Stokes (or Stokes)
/// output modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkElement {
    /// Beam splitter with reflectivity `r` (transmissivity `1 − r`) mixing
    /// the two 1-based modes.
    BeamSplitter { r: f64, modes: (usize, usize) },
    /// Phase shift `φ` on one 1-based mode.
    Phase { phi: f64, mode: usize },
}

/// Ordered list of network elements on `n_modes` optical modes; elements
/// apply in list order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticalNetwork {
    /// Number of optical modes.
    pub n_modes: usize,
    /// Elements in application order.
    pub elements: Vec<NetworkElement>,
}

impl OpticalNetwork {
    /// Parse from a JSON string.
    pub fn parse(json: &str) -> Result<Self> {
        serde_json::from_str(json)
            .map_err(|e| Error::Validation(format!("network description is invalid: {e}")))
    }
}

/// Transfer matrix of the network: the ordered product of elementary
/// two-mode mixing matrices and phase factors, with `out = U · in`.
///
/// Each beam splitter contributes rows `(√r, √t)` and `(√t, −√r)` on its
/// two modes with `t = 1 − r`; each phase shifter contributes `e^{iφ}` on
/// its mode. The accumulated matrix is checked for unitarity within
/// [`tol::UNITARITY`].
pub fn network_transfer(net: &OpticalNetwork) -> Result<DMatrix<Complex64>> {
    let n = net.n_modes;
    if n == 0 {
        return Err(Error::Domain("a network needs at least one mode".into()));
    }
    let mut u = DMatrix::<Complex64>::identity(n, n);
    for (k, element) in net.elements.iter().enumerate() {
        let mut e = DMatrix::<Complex64>::identity(n, n);
        match *element {
            NetworkElement::BeamSplitter { r, modes: (a, b) } => {
                if a == 0 || b == 0 || a > n || b > n || a == b {
                    return Err(Error::Validation(format!(
                        "element {k}: beam splitter modes ({a}, {b}) are not two distinct \
                         modes in 1..={n}"
                    )));
                }
                if !(0.0..=1.0).contains(&r) {
                    return Err(Error::Validation(format!(
                        "element {k}: reflectivity {r} lies outside [0, 1]"
                    )));
                }
                let (sr, st) = (r.sqrt(), (1.0 - r).sqrt());
                e[(a - 1, a - 1)] = Complex64::new(sr, 0.0);
                e[(a - 1, b - 1)] = Complex64::new(st, 0.0);
                e[(b - 1, a - 1)] = Complex64::new(st, 0.0);
                e[(b - 1, b - 1)] = Complex64::new(-sr, 0.0);
            }
            NetworkElement::Phase { phi, mode } => {
                if mode == 0 || mode > n {
                    return Err(Error::Validation(format!(
                        "element {k}: phase mode {mode} is not in 1..={n}"
                    )));
                }
                if !phi.is_finite() {
                    return Err(Error::Validation(format!(
                        "element {k}: phase {phi} is not finite"
                    )));
                }
                e[(mode - 1, mode - 1)] = Complex64::from_polar(1.0, phi);
            }
        }
        u = e * u;
    }
    let gram = u.adjoint() * &u;
    let mut worst = 0.0f64;
    for col in 0..n {
        for row in 0..n {
            let expect = if row == col { Complex64::ONE } else { Complex64::ZERO };
            worst = worst.max((gram[(row, col)] - expect).norm());
        }
    }
    if worst > tol::UNITARITY {
        return Err(Error::Validation(format!(
            "network transfer deviates from unitarity by {worst:.3e}"
        )));
    }
    Ok(u)
}

/// Squared sideband gains and their ratio `λ = G_AS²/G_S²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidebandGains {
    /// Stokes gain `G_S²`.
    pub g_s_sq: f64,
    /// Anti-Stokes gain `G_AS²`.
    pub g_as_sq: f64,
    /// Ratio `g_as_sq / g_s_sq`.
    pub lambda: f64,
}

impl SidebandGains {
    /// Build from the two squared gains; both must be positive.
    pub fn new(g_s_sq: f64, g_as_sq: f64) -> Result<Self> {
        if !positive(g_s_sq) || !positive(g_as_sq) {
            return Err(Error::Calibration(format!(
                "squared gains must be positive, got G_S²={g_s_sq}, G_AS²={g_as_sq}"
            )));
        }
        Ok(Self {
            g_s_sq,
            g_as_sq,
            lambda: g_as_sq / g_s_sq,
        })
    }

    /// Check the stored ratio against the gains within
    /// [`tol::GAIN_RATIO`] (relative).
    pub fn check(&self) -> Result<()> {
        if !positive(self.g_s_sq) || !positive(self.g_as_sq) {
            return Err(Error::Calibration("squared gains must be positive".into()));
        }
        let expect = self.g_as_sq / self.g_s_sq;
        if (self.lambda - expect).abs() > tol::GAIN_RATIO * expect.max(1.0) {
            return Err(Error::Calibration(format!(
                "stored λ={} disagrees with G_AS²/G_S²={expect}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Infer the squared gains from Stokes and anti-Stokes photocounts on one
/// mode, given the gain ratio `λ`.
///
/// With `S = G_S²⟨b b†⟩` and `AS = G_AS²⟨b† b⟩ = λ G_S²⟨b† b⟩`, the
/// commutator eliminates the occupation: `G_S² = S − AS/λ` and
/// `G_AS² = λS − AS`, independent of the mode's state.
pub fn gain_calibrate(s_count: f64, as_count: f64, lambda: f64) -> Result<SidebandGains> {
    if !positive(lambda) {
        return Err(Error::Calibration(format!(
            "gain ratio λ must be positive, got {lambda}"
        )));
    }
    if !non_negative(s_count) || !non_negative(as_count) {
        return Err(Error::Calibration(format!(
            "photocounts must be non-negative, got S={s_count}, AS={as_count}"
        )));
    }
    let g_s_sq = s_count - as_count / lambda;
    let g_as_sq = lambda * s_count - as_count;
    if !positive(g_s_sq) || !positive(g_as_sq) {
        return Err(Error::Calibration(format!(
            "inferred gains G_S²={g_s_sq}, G_AS²={g_as_sq} are not positive; \
             λ or the counts are inconsistent"
        )));
    }
    SidebandGains::new(g_s_sq, g_as_sq)
}

/// Commutator residual `S/G_S² − AS/G_AS²`, which equals 1 for consistent
/// gains on any mode; a deviation flags a biased `λ` or miscalibration.
pub fn commutator_check(s_count: f64, as_count: f64, gains: &SidebandGains) -> f64 {
    s_count / gains.g_s_sq - as_count / gains.g_as_sq
}

/// One creation or annihilation factor of a mode correlator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LadderFactor {
    /// `b_i†` of the 1-based mode.
    Create(usize),
    /// `b_i` of the 1-based mode.
    Annihilate(usize),
}

impl LadderFactor {
    fn mode(&self) -> usize {
        match *self {
            LadderFactor::Create(m) | LadderFactor::Annihilate(m) => m,
        }
    }
}

/// An ordered product of ladder factors whose expectation value is the
/// measurement target, read left to right inside `⟨…⟩`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrelatorDescriptor {
    factors: Vec<LadderFactor>,
}

impl CorrelatorDescriptor {
    /// Build from an explicit factor list; modes are 1-based and the list
    /// must be non-empty.
    pub fn new(factors: Vec<LadderFactor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Validation("correlator has no factors".into()));
        }
        if factors.iter().any(|f| f.mode() == 0) {
            return Err(Error::Validation("correlator modes are 1-based".into()));
        }
        Ok(Self { factors })
    }

    /// `⟨n_i⟩ = ⟨b_i† b_i⟩`.
    pub fn number(i: usize) -> Result<Self> {
        Self::new(vec![LadderFactor::Create(i), LadderFactor::Annihilate(i)])
    }

    /// `⟨n_i n_j⟩ = ⟨b_i† b_j† b_i b_j⟩` for distinct modes.
    pub fn pair_number(i: usize, j: usize) -> Result<Self> {
        if i == j {
            return Err(Error::Validation("pair moment needs distinct modes".into()));
        }
        Self::new(vec![
            LadderFactor::Create(i),
            LadderFactor::Create(j),
            LadderFactor::Annihilate(i),
            LadderFactor::Annihilate(j),
        ])
    }

    /// `⟨b_i† b_j⟩`, which no photocount measures directly.
    pub fn cross(i: usize, j: usize) -> Result<Self> {
        Self::new(vec![LadderFactor::Create(i), LadderFactor::Annihilate(j)])
    }

    /// `⟨b_j b_i† b_i b_j†⟩`, the anti-normal pair moment entering the
    /// per-block nonlocality bound.
    pub fn antinormal_pair(i: usize, j: usize) -> Result<Self> {
        if i == j {
            return Err(Error::Validation(
                "anti-normal pair moment needs distinct modes".into(),
            ));
        }
        Self::new(vec![
            LadderFactor::Annihilate(j),
            LadderFactor::Create(i),
            LadderFactor::Annihilate(i),
            LadderFactor::Create(j),
        ])
    }

    /// The factor list.
    pub fn factors(&self) -> &[LadderFactor] {
        &self.factors
    }

    /// Exact expectation `Tr(ρ · F_1 F_2 ⋯ F_k)` on a state.
    pub fn value(&self, rho: &DensityOperator) -> Result<Complex64> {
        let pairs: Vec<(usize, bool)> = self
            .factors
            .iter()
            .map(|f| match *f {
                LadderFactor::Create(m) => (m, true),
                LadderFactor::Annihilate(m) => (m, false),
            })
            .collect();
        rho.ladder_product_moment(&pairs)
    }
}

/// Raman channel of a photon operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// Stokes photon, created together with an excitation.
    Stokes,
    /// Anti-Stokes photon, created by removing an excitation.
    AntiStokes,
}

/// One photon-operator factor `a_X,i` or `a_X,i†`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PhotonFactor {
    /// Raman channel.
    pub channel: Channel,
    /// 1-based mode.
    pub mode: usize,
    /// True for the creation operator.
    pub create: bool,
}

/// A photocount correlator together with the gain powers that divide it
/// back to the oscillator value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpticalCorrelator {
    /// Photon factors in measurement order.
    pub factors: Vec<PhotonFactor>,
    /// Number of Stokes photon pairs: the photocount carries `G_S²` to
    /// this power.
    pub s_pairs: u32,
    /// Number of anti-Stokes photon pairs: the photocount carries `G_AS²`
    /// to this power.
    pub as_pairs: u32,
}

impl OpticalCorrelator {
    /// Gain factor linking photocount to oscillator value:
    /// `photocount = gain_factor · oscillator value`.
    pub fn gain_factor(&self, gains: &SidebandGains) -> f64 {
        gains.g_s_sq.powi(self.s_pairs as i32) * gains.g_as_sq.powi(self.as_pairs as i32)
    }

    /// Exact photocount expectation on a state: the oscillator value times
    /// the gain factor.
    pub fn photocount_value(&self, rho: &DensityOperator, gains: &SidebandGains) -> Result<f64> {
        let pairs: Vec<(usize, bool)> = self
            .factors
            .iter()
            .map(|f| match f.channel {
                // Inverse of the sideband substitution: anti-Stokes photon
                // operators follow the mode operators, Stokes ones swap
                // creation and annihilation.
                Channel::AntiStokes => (f.mode, f.create),
                Channel::Stokes => (f.mode, !f.create),
            })
            .collect();
        let v = rho.ladder_product_moment(&pairs)?;
        if v.im.abs() > tol::MOMENT_AGREEMENT {
            return Err(Error::Validation(format!(
                "photocount target has imaginary part {:.3e}",
                v.im
            )));
        }
        Ok(v.re * self.gain_factor(gains))
    }
}

/// Substitute `b_i → a_AS,i/G_AS`, `b_i† → a_S,i/G_S` (or the anti-Stokes
/// pairing when the mode's factors begin with a creation operator) so the
/// target becomes a normally ordered photocount correlator.
///
/// Every mode must contribute equally many creation and annihilation
/// operators; otherwise no photocount measures the target and the call
/// fails with [`Error::NotMeasurable`].
pub fn sideband_translate(descriptor: &CorrelatorDescriptor) -> Result<OpticalCorrelator> {
    let mut balance: HashMap<usize, i32> = HashMap::new();
    for f in descriptor.factors() {
        let e = balance.entry(f.mode()).or_insert(0);
        match f {
            LadderFactor::Create(_) => *e += 1,
            LadderFactor::Annihilate(_) => *e -= 1,
        }
    }
    let mut unbalanced: Vec<usize> = balance
        .iter()
        .filter(|&(_, &v)| v != 0)
        .map(|(&m, _)| m)
        .collect();
    if !unbalanced.is_empty() {
        unbalanced.sort_unstable();
        return Err(Error::NotMeasurable(format!(
            "modes {unbalanced:?} have unequal creation and annihilation counts; \
             the target is no photocount expectation value"
        )));
    }

    // A mode whose factors open with a creation operator keeps its ladder
    // orientation on the anti-Stokes channel; one opening with an
    // annihilation operator maps to the Stokes channel, which swaps the
    // orientation and leaves the photon product normally ordered.
    let mut channel: HashMap<usize, Channel> = HashMap::new();
    for f in descriptor.factors() {
        channel.entry(f.mode()).or_insert(match f {
            LadderFactor::Create(_) => Channel::AntiStokes,
            LadderFactor::Annihilate(_) => Channel::Stokes,
        });
    }

    let mut factors = Vec::with_capacity(descriptor.factors().len());
    let mut s_count = 0u32;
    let mut as_count = 0u32;
    for f in descriptor.factors() {
        let ch = channel[&f.mode()];
        let create = match (ch, f) {
            (Channel::AntiStokes, LadderFactor::Create(_)) => true,
            (Channel::AntiStokes, LadderFactor::Annihilate(_)) => false,
            (Channel::Stokes, LadderFactor::Create(_)) => false,
            (Channel::Stokes, LadderFactor::Annihilate(_)) => true,
        };
        match ch {
            Channel::Stokes => s_count += 1,
            Channel::AntiStokes => as_count += 1,
        }
        factors.push(PhotonFactor {
            channel: ch,
            mode: f.mode(),
            create,
        });
    }
    Ok(OpticalCorrelator {
        factors,
        s_pairs: s_count / 2,
        as_pairs: as_count / 2,
    })
}

/// Recover `|⟨b_i† b_j⟩|` from two-mode interference: the two outputs of a
/// 50:50 beam splitter on modes `i`, `j` with a tunable phase `φ` give
/// `(⟨n_A⟩ − ⟨n_B⟩)/2 = Re(e^{iφ}⟨b_i† b_j⟩)`, maximized over the grid.
///
/// The result underestimates the modulus by at most a factor `cos(δ/2)`
/// for grid spacing `δ`.
pub fn cross_from_interference(
    rho: &DensityOperator,
    i: usize,
    j: usize,
    phase_grid: &[f64],
) -> Result<f64> {
    let n = rho.spec().n_modes();
    if i == j || i == 0 || j == 0 || i > n || j > n {
        return Err(Error::Validation(format!(
            "interference needs two distinct modes in 1..={n}, got ({i}, {j})"
        )));
    }
    if phase_grid.is_empty() {
        return Err(Error::Validation("phase grid is empty".into()));
    }
    let subset = Combination::new(vec![i.min(j), i.max(j)], n)?;
    let mut best = f64::NEG_INFINITY;
    for &phi in phase_grid {
        let mut values = vec![Complex64::ZERO; n];
        values[i - 1] = Complex64::new(1.0, 0.0);
        values[j - 1] = Complex64::from_polar(1.0, phi);
        let plus = ModeCoefficients::new(values.clone())?;
        values[j - 1] = -values[j - 1];
        let minus = ModeCoefficients::new(values)?;
        let n_a = rho.collective_number_moment(&subset, &plus)?;
        let n_b = rho.collective_number_moment(&subset, &minus)?;
        best = best.max((n_a - n_b) / 2.0);
    }
    Ok(best)
}

/// Uniform grid of `points` phases over `[0, 2π)`.
pub fn phase_grid(points: usize) -> Vec<f64> {
    let step = std::f64::consts::TAU / points.max(1) as f64;
    (0..points.max(1)).map(|t| t as f64 * step).collect()
}

/// Phase-maximization settings for the collective-mode estimators.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PhaseConfig {
    /// Points of each per-coordinate search grid.
    pub grid_points: usize,
    /// Full coordinate-ascent sweeps over the phases.
    pub sweeps: usize,
    /// Start from the phases that align the exact cross moments instead of
    /// zeros.
    pub analytic: bool,
    /// A sweep improving the objective by no more than this counts as
    /// converged.
    pub stagnation_tol: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            grid_points: 64,
            sweeps: 3,
            analytic: true,
            stagnation_tol: 1e-12,
        }
    }
}

/// Result of a collective-mode cross-sum measurement.
#[derive(Debug, Clone, Serialize)]
pub struct CrossSumEstimate {
    /// `(N·max_φ⟨n_W⟩ − Σ_j⟨n_j⟩)/2`, or its differenced form.
    pub value: f64,
    /// The maximized collective number (difference of the two states'
    /// collective numbers in the differenced form).
    pub collective_number: f64,
    /// Maximizing phases, first mode fixed at zero.
    pub phases: Vec<f64>,
    /// False when the final ascent sweep was still improving beyond the
    /// stagnation tolerance.
    pub converged: bool,
}

/// Exact cross-moment table of a state, Hermitian with zero diagonal.
fn cross_matrix(rho: &DensityOperator) -> Vec<Vec<Complex64>> {
    let n = rho.spec().n_modes();
    let mut x = vec![vec![Complex64::ZERO; n]; n];
    for i in 1..=n {
        for j in (i + 1)..=n {
            let v = rho.cross_moment(i, j);
            x[i - 1][j - 1] = v;
            x[j - 1][i - 1] = v.conj();
        }
    }
    x
}

/// Objective `Σ_{j<k} Re(e^{i(φ_k−φ_j)} X_{jk})` of the phase search.
fn phase_objective(x: &[Vec<Complex64>], phases: &[f64]) -> f64 {
    let n = phases.len();
    let mut s = 0.0;
    for j in 0..n {
        for k in (j + 1)..n {
            s += (Complex64::from_polar(1.0, phases[k] - phases[j]) * x[j][k]).re;
        }
    }
    s
}

/// Coordinate ascent over relative phases; the first phase stays zero.
fn ascend_phases(
    x: &[Vec<Complex64>],
    init: Vec<f64>,
    cfg: &PhaseConfig,
) -> (f64, Vec<f64>, bool) {
    let n = init.len();
    let mut phases = init;
    let mut best = phase_objective(x, &phases);
    if n < 2 {
        return (best, phases, true);
    }
    let grid = phase_grid(cfg.grid_points.max(2));
    let mut converged = false;
    for _ in 0..cfg.sweeps.max(1) {
        let before = best;
        for j in 1..n {
            let held = phases[j];
            let mut arg_best = held;
            for &phi in &grid {
                phases[j] = phi;
                let v = phase_objective(x, &phases);
                if v > best {
                    best = v;
                    arg_best = phi;
                }
            }
            phases[j] = arg_best;
        }
        if best - before <= cfg.stagnation_tol {
            converged = true;
            break;
        }
    }
    (best, phases, converged)
}

/// Phases aligning each `X_{1j}` to the positive real axis, the exact
/// optimum whenever the cross phases factor over the modes.
fn analytic_phases(x: &[Vec<Complex64>]) -> Vec<f64> {
    let n = x.len();
    let mut phases = vec![0.0; n];
    for (j, slot) in phases.iter_mut().enumerate().skip(1) {
        let v = x[0][j];
        if v.norm() > tol::DEGENERATE_NORM {
            *slot = -v.arg();
        }
    }
    phases
}

fn check_uniform_magnitudes(coeffs: &ModeCoefficients) -> Result<()> {
    let n = coeffs.len() as f64;
    for c in coeffs.values() {
        if (c.norm_sqr() - 1.0 / n).abs() > 1e-9 {
            return Err(Error::Domain(
                "the collective-mode estimator needs uniform coefficient magnitudes".into(),
            ));
        }
    }
    Ok(())
}

/// Measure the witness cross sum in one shot series: tune the collective
/// mode's phases to maximize `⟨n_W⟩` and return
/// `(N·max⟨n_W⟩ − Σ_j⟨n_j⟩)/2`, which never exceeds `Σ_{i<j}|⟨b_i†b_j⟩|`
/// and reaches it when the maximizing phases align every pair.
///
/// `coeffs` supplies the starting phases of the network; magnitudes must
/// be uniform.
pub fn cross_sum_from_nw(
    rho: &DensityOperator,
    coeffs: &ModeCoefficients,
    cfg: &PhaseConfig,
) -> Result<CrossSumEstimate> {
    let n = rho.spec().n_modes();
    if coeffs.len() != n {
        return Err(Error::Validation(format!(
            "coefficients cover {} modes, state has {n}",
            coeffs.len()
        )));
    }
    check_uniform_magnitudes(coeffs)?;
    let x = cross_matrix(rho);
    let base_phase = coeffs.get(1).arg();
    let init = if cfg.analytic {
        analytic_phases(&x)
    } else {
        (1..=n).map(|m| coeffs.get(m).arg() - base_phase).collect()
    };
    let (value, phases, converged) = ascend_phases(&x, init, cfg);
    let numbers: f64 = (1..=n).map(|i| rho.number_moment(i)).sum();
    // N·⟨n_W⟩ = Σ⟨n_j⟩ + 2·objective at the chosen phases.
    let collective = (numbers + 2.0 * value) / n as f64;
    Ok(CrossSumEstimate {
        value,
        collective_number: collective,
        phases,
        converged,
    })
}

/// Differenced form of [`cross_sum_from_nw`] for the nonlocality witness:
/// maximizes `Σ_{j<k} Re(e^{i(φ_k−φ_j)} (⟨b_j†b_k⟩_c − ⟨b_j†b_k⟩_0))`,
/// which never exceeds `Σ_{i<j}|⟨b_i†b_j⟩_c − ⟨b_i†b_j⟩_0|`.
pub fn cross_sum_diff_from_nw(
    prepared: &DensityOperator,
    base: &DensityOperator,
    cfg: &PhaseConfig,
) -> Result<CrossSumEstimate> {
    if prepared.spec() != base.spec() {
        return Err(Error::Validation(
            "conditioned and initial states live on different specs".into(),
        ));
    }
    let n = base.spec().n_modes();
    let xc = cross_matrix(prepared);
    let x0 = cross_matrix(base);
    let diff: Vec<Vec<Complex64>> = (0..n)
        .map(|i| (0..n).map(|j| xc[i][j] - x0[i][j]).collect())
        .collect();
    let init = if cfg.analytic {
        analytic_phases(&diff)
    } else {
        vec![0.0; n]
    };
    let (value, phases, converged) = ascend_phases(&diff, init, cfg);
    let mut num_diff = 0.0;
    for i in 1..=n {
        num_diff += prepared.number_moment(i) - base.number_moment(i);
    }
    let collective = (num_diff + 2.0 * value) / n as f64;
    Ok(CrossSumEstimate {
        value,
        collective_number: collective,
        phases,
        converged,
    })
}

/// Photocount record for one observable: shot count plus the running sum
/// and sum of squares of the outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountRecord {
    /// Observable identifier, e.g. `as_n:2`.
    pub id: String,
    /// Number of shots.
    pub shots: u64,
    /// Sum of outcomes.
    pub sum: f64,
    /// Sum of squared outcomes.
    pub sum_sq: f64,
    /// Seed of the stream that produced the record, when sampled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CountRecord {
    /// Record of an exactly known expectation value: one shot whose
    /// outcome is the value itself.
    pub fn from_exact(id: impl Into<String>, value: f64) -> Self {
        Self {
            id: id.into(),
            shots: 1,
            sum: value,
            sum_sq: value * value,
            seed: None,
        }
    }

    /// Mean outcome.
    pub fn mean(&self) -> f64 {
        self.sum / self.shots as f64
    }

    /// Standard error of the mean from the unbiased sample variance; zero
    /// for a single shot.
    pub fn stderr(&self) -> f64 {
        if self.shots < 2 {
            return 0.0;
        }
        let shots = self.shots as f64;
        let mean = self.sum / shots;
        let var = ((self.sum_sq - shots * mean * mean) / (shots - 1.0)).max(0.0);
        (var / shots).sqrt()
    }

    /// Internal consistency: at least one shot and a sum of squares no
    /// smaller than the Cauchy–Schwarz floor `sum²/shots`.
    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::Validation(format!(
                "count record {} has zero shots",
                self.id
            )));
        }
        if !self.sum.is_finite() || !self.sum_sq.is_finite() {
            return Err(Error::Validation(format!(
                "count record {} has non-finite sums",
                self.id
            )));
        }
        let floor = self.sum * self.sum / self.shots as f64;
        if self.sum_sq < floor - 1e-9 * floor.abs().max(1.0) {
            return Err(Error::Validation(format!(
                "count record {} has sum_sq below the sum²/shots floor",
                self.id
            )));
        }
        Ok(())
    }
}

/// A set of photocount records over a fixed number of modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountSet {
    /// Number of oscillator modes covered.
    pub n_modes: usize,
    /// Records, one per observable id.
    pub records: Vec<CountRecord>,
}

/// Id of the anti-Stokes count on the phase-optimized collective W output.
pub fn id_as_collective() -> String {
    "as_w".into()
}

/// Id of the anti-Stokes number count of a mode.
pub fn id_as_number(i: usize) -> String {
    format!("as_n:{i}")
}

/// Id of the anti-Stokes coincidence count of a mode pair.
pub fn id_as_pair(i: usize, j: usize) -> String {
    format!("as_nn:{}:{}", i.min(j), i.max(j))
}

/// Id of the Stokes number count of a mode.
pub fn id_s_number(i: usize) -> String {
    format!("s_n:{i}")
}

impl CountSet {
    /// Parse from a JSON string.
    pub fn parse(json: &str) -> Result<Self> {
        let set: CountSet = serde_json::from_str(json)
            .map_err(|e| Error::Validation(format!("count set is invalid: {e}")))?;
        for r in &set.records {
            r.validate()?;
        }
        Ok(set)
    }

    /// Record by id.
    pub fn get(&self, id: &str) -> Option<&CountRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Physically rescale the anti-Stokes gain `G_AS² → α·G_AS²`:
    /// second-order anti-Stokes counts scale by `α`, fourth-order
    /// coincidence counts by `α²`; Stokes counts stay.
    pub fn rescale_anti_stokes(&self, alpha: f64) -> CountSet {
        let records = self
            .records
            .iter()
            .map(|r| {
                let factor = if r.id.starts_with("as_nn:") {
                    alpha * alpha
                } else if r.id.starts_with("as_") {
                    alpha
                } else {
                    1.0
                };
                CountRecord {
                    id: r.id.clone(),
                    shots: r.shots,
                    sum: r.sum * factor,
                    sum_sq: r.sum_sq * factor * factor,
                    seed: r.seed,
                }
            })
            .collect();
        CountSet {
            n_modes: self.n_modes,
            records,
        }
    }
}

/// Forward-generate the exact photocount set the entanglement witness
/// consumes: the optimized collective anti-Stokes count, per-mode
/// anti-Stokes and Stokes counts, and pairwise coincidences.
pub fn exact_count_set(
    rho: &DensityOperator,
    gains: &SidebandGains,
    cfg: &PhaseConfig,
) -> Result<CountSet> {
    gains.check()?;
    let n = rho.spec().n_modes();
    let est = cross_sum_from_nw(rho, &ModeCoefficients::uniform(n)?, cfg)?;
    let mut records = Vec::new();
    records.push(CountRecord::from_exact(
        id_as_collective(),
        gains.g_as_sq * est.collective_number,
    ));
    for i in 1..=n {
        records.push(CountRecord::from_exact(
            id_as_number(i),
            gains.g_as_sq * rho.number_moment(i),
        ));
        let anti = rho.ladder_product_moment(&[(i, false), (i, true)])?;
        records.push(CountRecord::from_exact(id_s_number(i), gains.g_s_sq * anti.re));
    }
    for i in 1..=n {
        for j in (i + 1)..=n {
            records.push(CountRecord::from_exact(
                id_as_pair(i, j),
                gains.g_as_sq * gains.g_as_sq * rho.pair_number_moment(i, j),
            ));
        }
    }
    Ok(CountSet { n_modes: n, records })
}

/// Entanglement witness evaluated purely from photocounts, in anti-Stokes
/// photocount units.
#[derive(Debug, Clone, Serialize)]
pub struct OpticalWitnessReport {
    /// Number of modes.
    pub n_modes: usize,
    /// Largest block size `M` of the separability model.
    pub max_block: usize,
    /// `(N·⟨a_W†a_W⟩ − Σ⟨a_AS,i†a_AS,i⟩)/2`, equal to `G_AS²` times the
    /// phonon-side coherence sum.
    pub lhs: f64,
    /// Separable bound in the same units.
    pub rhs: f64,
    /// `rhs − lhs`; negative certifies the violation.
    pub margin: f64,
    /// `margin / rhs` when the bound is positive; invariant under gain
    /// rescaling.
    pub margin_ratio: Option<f64>,
    /// True when `margin < -`[`tol::VIOLATION_MARGIN`].
    pub violated: bool,
    /// `√(n_pairs · n_sep_max · max⟨a⁴⟩)` term of the bound.
    pub pair_bound: f64,
    /// `(M−1)/2 · Σ⟨a_AS,i†a_AS,i⟩` term of the bound.
    pub number_bound: f64,
    /// Largest pairwise coincidence count entering the bound.
    pub max_pair_count: f64,
    /// Number of mode pairs `N(N−1)/2`.
    pub n_pairs: usize,
    /// `N_sep,C,max` prefactor used.
    pub n_sep_max: usize,
}

impl OpticalWitnessReport {
    /// Margin in oscillator units, `margin / G_AS²`.
    pub fn phonon_margin(&self, gains: &SidebandGains) -> f64 {
        self.margin / gains.g_as_sq
    }
}

/// Evaluate the entanglement witness from a photocount set.
///
/// Requires the collective count, every per-mode anti-Stokes count, and
/// every pairwise coincidence; missing ids are enumerated in the error.
/// Both sides scale linearly under a common anti-Stokes gain rescaling
/// (the coincidence counts carry the square), so the violated flag and
/// the margin ratio are gain-independent.
pub fn optical_witness(
    counts: &CountSet,
    max_block: usize,
    n_sep_max: usize,
) -> Result<OpticalWitnessReport> {
    let n = counts.n_modes;
    if n < 2 {
        return Err(Error::Domain(format!(
            "the witness needs at least 2 modes, got {n}"
        )));
    }
    if max_block == 0 || max_block >= n {
        return Err(Error::Domain(format!(
            "the block cap must satisfy 1 <= M <= N-1, got M={max_block}, N={n}"
        )));
    }
    let mut required = vec![id_as_collective()];
    for i in 1..=n {
        required.push(id_as_number(i));
    }
    for i in 1..=n {
        for j in (i + 1)..=n {
            required.push(id_as_pair(i, j));
        }
    }
    let mut missing: Vec<String> = required
        .iter()
        .filter(|id| counts.get(id).is_none())
        .cloned()
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::MissingCounts(missing));
    }
    for id in &required {
        counts.get(id).expect("presence checked above").validate()?;
    }

    let collective = counts.get(&id_as_collective()).expect("checked").mean();
    let numbers: Vec<f64> = (1..=n)
        .map(|i| counts.get(&id_as_number(i)).expect("checked").mean())
        .collect();
    let number_sum: f64 = numbers.iter().sum();
    let mut max_pair_count = 0.0f64;
    for i in 1..=n {
        for j in (i + 1)..=n {
            max_pair_count = max_pair_count.max(counts.get(&id_as_pair(i, j)).expect("checked").mean());
        }
    }

    let n_pairs = n * (n - 1) / 2;
    let lhs = (n as f64 * collective - number_sum) / 2.0;
    let pair_bound = ((n_pairs * n_sep_max) as f64 * max_pair_count.max(0.0)).sqrt();
    let number_bound = (max_block as f64 - 1.0) / 2.0 * number_sum;
    let rhs = pair_bound + number_bound;
    let margin = rhs - lhs;
    Ok(OpticalWitnessReport {
        n_modes: n,
        max_block,
        lhs,
        rhs,
        margin,
        margin_ratio: (rhs > 0.0).then(|| margin / rhs),
        violated: margin < -tol::VIOLATION_MARGIN,
        pair_bound,
        number_bound,
        max_pair_count,
        n_pairs,
        n_sep_max,
    })
}

/// Normalized amplitude estimates `|c_i|²` from thermal photocounts taken
/// on the collective output with one input mode enabled at a time.
pub fn amplitude_estimate(singleton_counts: &[f64]) -> Result<Vec<f64>> {
    if singleton_counts.is_empty() {
        return Err(Error::Validation("no singleton counts given".into()));
    }
    if !singleton_counts.iter().all(|&c| non_negative(c)) {
        return Err(Error::Validation(
            "singleton counts must be non-negative".into(),
        ));
    }
    let total: f64 = singleton_counts.iter().sum();
    if total <= tol::DEGENERATE_NORM {
        return Err(Error::Degenerate(
            "singleton counts sum to zero; no amplitude information".into(),
        ));
    }
    Ok(singleton_counts.iter().map(|&c| c / total).collect())
}

/// A measurable observable for shot sampling.
#[derive(Debug, Clone)]
pub enum Observable {
    /// Diagonal in the number basis, given by its outcome per basis state.
    Diagonal(DVector<f64>),
    /// Dense Hermitian matrix.
    Hermitian(DMatrix<Complex64>),
}

/// Mean and standard error of a finite shot series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShotEstimate {
    /// Sample mean.
    pub mean: f64,
    /// Standard error of the mean; zero when the outcome is deterministic
    /// or only one shot was taken.
    pub stderr: f64,
    /// Number of shots.
    pub shots: u64,
    /// Seed of the sampling stream.
    pub seed: u64,
}

/// FNV-1a hash of an observable id, for per-stream seed derivation.
fn fnv1a64(s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// SplitMix64 finalizer, decorrelating derived seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic per-observable stream seed from a master seed and the
/// observable id.
pub fn derive_seed(master: u64, observable_id: &str) -> u64 {
    splitmix64(master ^ fnv1a64(observable_id))
}

/// Spectral distribution of an observable under a state: outcomes with
/// their probabilities, negatives clamped and the total renormalized.
fn spectral_distribution(
    rho: &DensityOperator,
    obs: &Observable,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let dim = rho.spec().dim();
    let (outcomes, mut probs) = match obs {
        Observable::Diagonal(values) => {
            if values.len() != dim {
                return Err(Error::Validation(format!(
                    "observable covers {} basis states, state has {dim}",
                    values.len()
                )));
            }
            (values.as_slice().to_vec(), rho.diagonal_probabilities())
        }
        Observable::Hermitian(matrix) => {
            if matrix.nrows() != dim || matrix.ncols() != dim {
                return Err(Error::Validation(format!(
                    "observable is {}x{}, state dimension is {dim}",
                    matrix.nrows(),
                    matrix.ncols()
                )));
            }
            let mut worst = 0.0f64;
            for col in 0..dim {
                for row in 0..=col {
                    worst = worst.max((matrix[(row, col)] - matrix[(col, row)].conj()).norm());
                }
            }
            if worst > tol::HERMITICITY.max(1e-10) {
                return Err(Error::Validation(format!(
                    "observable deviates from Hermitian by {worst:.3e}"
                )));
            }
            let eig = matrix.clone().symmetric_eigen();
            let rotated = rho.matrix() * &eig.eigenvectors;
            let probs: Vec<f64> = (0..dim)
                .map(|k| eig.eigenvectors.column(k).dotc(&rotated.column(k)).re)
                .collect();
            (eig.eigenvalues.as_slice().to_vec(), probs)
        }
    };
    let mut total = 0.0;
    for p in &mut probs {
        *p = p.max(0.0);
        total += *p;
    }
    if (total - 1.0).abs() > 1e-8 {
        return Err(Error::Validation(format!(
            "spectral probabilities sum to {total}, not 1"
        )));
    }
    Ok((outcomes, probs))
}

/// Draw i.i.d. outcomes; returns `(sum, sum_sq, sum_quad)` of the series.
fn sample_sums(
    outcomes: &[f64],
    probs: &[f64],
    shots: u64,
    seed: u64,
) -> (f64, f64, f64) {
    let mut cumulative = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for &p in probs {
        acc += p;
        cumulative.push(acc);
    }
    let total = acc;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq, mut sum_quad) = (0.0, 0.0, 0.0);
    for _ in 0..shots {
        let u: f64 = rng.random::<f64>() * total;
        let idx = cumulative
            .partition_point(|&c| c <= u)
            .min(outcomes.len() - 1);
        let x = outcomes[idx];
        sum += x;
        sum_sq += x * x;
        sum_quad += x * x * x * x;
    }
    (sum, sum_sq, sum_quad)
}

fn estimate_from_sums(sum: f64, sum_sq: f64, shots: u64, seed: u64) -> ShotEstimate {
    let sf = shots as f64;
    let mean = sum / sf;
    let stderr = if shots < 2 {
        0.0
    } else {
        let var = ((sum_sq - sf * mean * mean) / (sf - 1.0)).max(0.0);
        (var / sf).sqrt()
    };
    ShotEstimate {
        mean,
        stderr,
        shots,
        seed,
    }
}

/// Draw `shots` i.i.d. outcomes of the observable from its spectral
/// distribution under `rho` and return the sample mean with its standard
/// error.
pub fn sample_observable(
    rho: &DensityOperator,
    obs: &Observable,
    shots: u64,
    seed: u64,
) -> Result<ShotEstimate> {
    if shots == 0 {
        return Err(Error::Domain("sampling needs at least one shot".into()));
    }
    let (outcomes, probs) = spectral_distribution(rho, obs)?;
    let (sum, sum_sq, _) = sample_sums(&outcomes, &probs, shots, seed);
    Ok(estimate_from_sums(sum, sum_sq, shots, seed))
}

/// Sample an observable and estimate both `⟨X⟩` and `⟨X²⟩` from the same
/// outcome series; the estimates share the stream and are correlated.
pub fn sample_observable_with_square(
    rho: &DensityOperator,
    obs: &Observable,
    shots: u64,
    seed: u64,
) -> Result<(ShotEstimate, ShotEstimate)> {
    if shots == 0 {
        return Err(Error::Domain("sampling needs at least one shot".into()));
    }
    let (outcomes, probs) = spectral_distribution(rho, obs)?;
    let (sum, sum_sq, sum_quad) = sample_sums(&outcomes, &probs, shots, seed);
    Ok((
        estimate_from_sums(sum, sum_sq, shots, seed),
        estimate_from_sums(sum_sq, sum_quad, shots, seed),
    ))
}

/// Sample a [`CountRecord`] for an observable id, deriving the stream
/// seed from the master seed and the id.
pub fn sample_count_record(
    rho: &DensityOperator,
    id: impl Into<String>,
    obs: &Observable,
    shots: u64,
    master_seed: u64,
) -> Result<CountRecord> {
    let id = id.into();
    let seed = derive_seed(master_seed, &id);
    if shots == 0 {
        return Err(Error::Domain("sampling needs at least one shot".into()));
    }
    let (outcomes, probs) = spectral_distribution(rho, obs)?;
    let (sum, sum_sq, _) = sample_sums(&outcomes, &probs, shots, seed);
    Ok(CountRecord {
        id,
        shots,
        sum,
        sum_sq,
        seed: Some(seed),
    })
}

/// Monte Carlo settings for the finite-statistics witness wrappers.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct McConfig {
    /// Shots per observable.
    pub shots: u64,
    /// Master seed; per-observable streams derive from it and the
    /// observable id.
    pub seed: u64,
    /// Z-score at which a negative margin is claimed as a violation.
    pub z_threshold: f64,
    /// Phase-search settings for the collective-mode observable.
    pub phase: PhaseConfig,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            shots: 100_000,
            seed: 0x77ce57,
            z_threshold: 3.0,
            phase: PhaseConfig::default(),
        }
    }
}

/// One sampled expectation value inside a Monte Carlo report.
#[derive(Debug, Clone, Serialize)]
pub struct McEstimate {
    /// Observable id.
    pub id: String,
    /// Sampled estimate.
    pub estimate: ShotEstimate,
}

/// Entanglement witness evaluated from finite shot statistics.
#[derive(Debug, Clone, Serialize)]
pub struct McWitnessReport {
    /// Number of modes.
    pub n_modes: usize,
    /// Largest block size of the separability model.
    pub max_block: usize,
    /// Shots per observable.
    pub shots: u64,
    /// Master seed.
    pub seed: u64,
    /// Estimated coherence sum.
    pub lhs: f64,
    /// Estimated separable bound.
    pub rhs: f64,
    /// `rhs − lhs` at the point estimates.
    pub margin: f64,
    /// First-order propagated standard error of the margin, treating the
    /// per-observable estimates as independent.
    pub margin_se: f64,
    /// `−margin/margin_se`; absent when the propagated error vanishes.
    pub z: Option<f64>,
    /// Z-score required for a claim.
    pub z_threshold: f64,
    /// True when the violation is claimed at the configured z-score.
    pub violated: bool,
    /// Per-observable estimates.
    pub estimates: Vec<McEstimate>,
}

/// Margin and first-order standard error of `f` at `means`, propagating
/// each coordinate's standard error by a central difference.
fn propagate<F>(means: &[f64], errors: &[f64], f: F) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let value = f(means)?;
    let mut bumped = means.to_vec();
    let mut var = 0.0;
    for k in 0..means.len() {
        if errors[k] <= 0.0 {
            continue;
        }
        bumped[k] = means[k] + errors[k];
        let up = f(&bumped)?;
        bumped[k] = means[k] - errors[k];
        let down = f(&bumped)?;
        bumped[k] = means[k];
        let d = (up - down) / 2.0;
        var += d * d;
    }
    Ok((value, var.sqrt()))
}

fn claim(margin: f64, se: f64, z_threshold: f64) -> (Option<f64>, bool) {
    if se > 0.0 {
        let z = -margin / se;
        (Some(z), margin < 0.0 && z >= z_threshold)
    } else {
        (None, margin < -tol::VIOLATION_MARGIN)
    }
}

/// Estimate the entanglement witness from per-observable i.i.d. shot
/// series: the collective number at the optimized phases, every mode
/// occupation, and every pairwise moment. The margin's standard error is
/// propagated to first order and a violation is claimed only at the
/// configured z-score.
///
/// Sampling happens in oscillator units, which coincide with photocount
/// units at unit gains; the gain independence of the optical witness is
/// exact and tested separately.
pub fn estimate_witness_mc(
    rho: &DensityOperator,
    max_block: usize,
    cfg: &McConfig,
) -> Result<McWitnessReport> {
    let n = rho.spec().n_modes();
    if n < 2 || max_block == 0 || max_block >= n {
        return Err(Error::Domain(format!(
            "the witness needs N >= 2 and 1 <= M <= N-1, got N={n}, M={max_block}"
        )));
    }
    let nsm = n_sep_max(n, max_block)?;
    let spec = rho.spec();
    let full = Combination::new((1..=n).collect(), n)?;
    let est = cross_sum_from_nw(rho, &ModeCoefficients::uniform(n)?, &cfg.phase)?;
    let nw_coeffs = ModeCoefficients::from_phases(&est.phases)?;
    let nw_matrix = collective_number_matrix(spec, &full, &nw_coeffs)?;

    let mut ids = vec!["n_w".to_string()];
    let mut observables = vec![Observable::Hermitian(nw_matrix)];
    for i in 1..=n {
        ids.push(format!("n:{i}"));
        observables.push(Observable::Diagonal(number_diagonal(spec, i)));
    }
    let mut pair_index = Vec::new();
    for i in 1..=n {
        for j in (i + 1)..=n {
            ids.push(format!("nn:{i}:{j}"));
            observables.push(Observable::Diagonal(pair_number_diagonal(spec, i, j)));
            pair_index.push((i, j));
        }
    }

    let mut estimates = Vec::with_capacity(ids.len());
    let mut means = Vec::with_capacity(ids.len());
    let mut errors = Vec::with_capacity(ids.len());
    for (id, obs) in ids.iter().zip(&observables) {
        let e = sample_observable(rho, obs, cfg.shots, derive_seed(cfg.seed, id))?;
        means.push(e.mean);
        errors.push(e.stderr);
        estimates.push(McEstimate {
            id: id.clone(),
            estimate: e,
        });
    }

    let nf = n as f64;
    let n_pairs = n * (n - 1) / 2;
    let margin_of = |m: &[f64]| -> Result<f64> {
        let nw = m[0];
        let numbers = &m[1..=n];
        let pairs = &m[n + 1..];
        let number_sum: f64 = numbers.iter().sum();
        let lhs = (nf * nw - number_sum) / 2.0;
        let max_pair = pairs.iter().fold(0.0f64, |a, &b| a.max(b));
        let pair_bound = ((n_pairs * nsm) as f64 * max_pair).sqrt();
        let number_bound = (max_block as f64 - 1.0) / 2.0 * number_sum;
        Ok(pair_bound + number_bound - lhs)
    };
    let (margin, margin_se) = propagate(&means, &errors, margin_of)?;

    let number_sum: f64 = means[1..=n].iter().sum();
    let lhs = (nf * means[0] - number_sum) / 2.0;
    let rhs = margin + lhs;
    let (z, violated) = claim(margin, margin_se, cfg.z_threshold);
    Ok(McWitnessReport {
        n_modes: n,
        max_block,
        shots: cfg.shots,
        seed: cfg.seed,
        lhs,
        rhs,
        margin,
        margin_se,
        z,
        z_threshold: cfg.z_threshold,
        violated,
        estimates,
    })
}

/// Initial-state moment estimates backing the nonlocality bound in the
/// Monte Carlo wrapper.
struct MomentTable {
    n_modes: usize,
    numbers: Vec<f64>,
    pairs: Vec<Vec<f64>>,
    collective: HashMap<Vec<usize>, (f64, f64)>,
}

impl BaseMoments for MomentTable {
    fn n_modes(&self) -> usize {
        self.n_modes
    }

    fn kind(&self) -> Kind {
        Kind::Bosonic
    }

    fn number(&self, i: usize) -> Result<f64> {
        Ok(self.numbers[i - 1])
    }

    fn pair_number(&self, i: usize, j: usize) -> Result<f64> {
        Ok(self.pairs[i - 1][j - 1])
    }

    fn collective_number(
        &self,
        subset: &Combination,
        _coeffs: &ModeCoefficients,
    ) -> Result<(f64, f64)> {
        self.collective
            .get(subset.members())
            .copied()
            .ok_or_else(|| {
                Error::Validation(format!(
                    "moment table lacks the collective estimates of block {:?}",
                    subset.members()
                ))
            })
    }
}

/// Nonlocality witness evaluated from finite shot statistics.
#[derive(Debug, Clone, Serialize)]
pub struct McNonlocalityReport {
    /// Number of modes.
    pub n_modes: usize,
    /// Largest block size of the semilocal model.
    pub max_block: usize,
    /// Shots per observable.
    pub shots: u64,
    /// Master seed.
    pub seed: u64,
    /// Estimated coherence-shift sum.
    pub lhs: f64,
    /// Estimated semilocal bound.
    pub rhs: f64,
    /// `rhs − lhs` at the point estimates.
    pub margin: f64,
    /// First-order propagated standard error of the margin.
    pub margin_se: f64,
    /// `−margin/margin_se`; absent when the propagated error vanishes.
    pub z: Option<f64>,
    /// Z-score required for a claim.
    pub z_threshold: f64,
    /// True when the violation is claimed at the configured z-score.
    pub violated: bool,
    /// Per-observable estimates over both states.
    pub estimates: Vec<McEstimate>,
}

/// Estimate the nonlocality witness from per-observable shot series on
/// the conditioned and initial states. The differenced collective-mode
/// estimator replaces the coherence-shift sum; the initial-state bound is
/// rebuilt from sampled numbers, pair moments, and per-block collective
/// moments. Bosonic bases only, since the general per-block bound assumes
/// bosonic commutation.
pub fn estimate_nonlocality_mc(
    prepared: &DensityOperator,
    base: &DensityOperator,
    coeffs: &ModeCoefficients,
    max_block: usize,
    cfg: &McConfig,
) -> Result<McNonlocalityReport> {
    if prepared.spec() != base.spec() {
        return Err(Error::Validation(
            "conditioned and initial states live on different specs".into(),
        ));
    }
    if base.spec().kind() == Kind::TwoLevel {
        return Err(Error::Domain(
            "the general per-block bound assumes bosonic commutation; \
             two-level systems only support the thermal closed forms"
                .into(),
        ));
    }
    let n = base.spec().n_modes();
    if n < 2 || max_block == 0 || max_block >= n {
        return Err(Error::Domain(format!(
            "the nonlocality bound needs N >= 2 and 1 <= M <= N-1, got N={n}, M={max_block}"
        )));
    }
    if coeffs.len() != n {
        return Err(Error::Validation(format!(
            "coefficients cover {} modes, states have {n}",
            coeffs.len()
        )));
    }
    let spec = base.spec();
    let full = Combination::new((1..=n).collect(), n)?;
    let est = cross_sum_diff_from_nw(prepared, base, &cfg.phase)?;
    let nw_coeffs = ModeCoefficients::from_phases(&est.phases)?;
    let nw_matrix = collective_number_matrix(spec, &full, &nw_coeffs)?;

    // Blocks any admissible structure can use, in deterministic order.
    let mut blocks: Vec<Combination> = Vec::new();
    for s in enumerate_structures(n, max_block)? {
        for b in s.blocks() {
            if !blocks.contains(b) {
                blocks.push(b.clone());
            }
        }
    }
    blocks.sort();

    let mut estimates = Vec::new();
    let mut means = Vec::new();
    let mut errors = Vec::new();
    let push = |id: String, e: ShotEstimate, estimates: &mut Vec<McEstimate>,
                    means: &mut Vec<f64>, errors: &mut Vec<f64>| {
        means.push(e.mean);
        errors.push(e.stderr);
        estimates.push(McEstimate { id, estimate: e });
    };

    // Layout: nw_c, nw_0, numbers_c, numbers_0, pairs_0, then per block
    // the collective mean and mean square.
    let obs_nw = Observable::Hermitian(nw_matrix);
    let id = "nw:c".to_string();
    let e = sample_observable(prepared, &obs_nw, cfg.shots, derive_seed(cfg.seed, &id))?;
    push(id, e, &mut estimates, &mut means, &mut errors);
    let id = "nw:0".to_string();
    let e = sample_observable(base, &obs_nw, cfg.shots, derive_seed(cfg.seed, &id))?;
    push(id, e, &mut estimates, &mut means, &mut errors);
    for (label, state) in [("c", prepared), ("0", base)] {
        for i in 1..=n {
            let id = format!("n:{label}:{i}");
            let obs = Observable::Diagonal(number_diagonal(spec, i));
            let e = sample_observable(state, &obs, cfg.shots, derive_seed(cfg.seed, &id))?;
            push(id, e, &mut estimates, &mut means, &mut errors);
        }
    }
    let mut pair_list = Vec::new();
    for i in 1..=n {
        for j in (i + 1)..=n {
            let id = format!("nn:0:{i}:{j}");
            let obs = Observable::Diagonal(pair_number_diagonal(spec, i, j));
            let e = sample_observable(base, &obs, cfg.shots, derive_seed(cfg.seed, &id))?;
            push(id, e, &mut estimates, &mut means, &mut errors);
            pair_list.push((i, j));
        }
    }
    for b in &blocks {
        let id = format!("nc:0:{:?}", b.members());
        let obs = Observable::Hermitian(collective_number_matrix(spec, b, coeffs)?);
        let (e1, e2) =
            sample_observable_with_square(base, &obs, cfg.shots, derive_seed(cfg.seed, &id))?;
        push(id.clone(), e1, &mut estimates, &mut means, &mut errors);
        push(format!("{id}:sq"), e2, &mut estimates, &mut means, &mut errors);
    }

    let nf = n as f64;
    let n_pairs = pair_list.len();
    let blocks_for_f = blocks.clone();
    let coeffs_for_f = coeffs.clone();
    let margin_of = move |m: &[f64]| -> Result<f64> {
        let nw_c = m[0];
        let nw_0 = m[1];
        let numbers_c = &m[2..2 + n];
        let numbers_0 = &m[2 + n..2 + 2 * n];
        let pairs_flat = &m[2 + 2 * n..2 + 2 * n + n_pairs];
        let coll_flat = &m[2 + 2 * n + n_pairs..];
        let sum_c: f64 = numbers_c.iter().sum();
        let sum_0: f64 = numbers_0.iter().sum();
        let lhs = (nf * (nw_c - nw_0) - (sum_c - sum_0)) / 2.0;

        let mut pairs = vec![vec![0.0; n]; n];
        for (idx, &(i, j)) in pair_list.iter().enumerate() {
            pairs[i - 1][j - 1] = pairs_flat[idx];
            pairs[j - 1][i - 1] = pairs_flat[idx];
        }
        let mut collective = HashMap::new();
        for (idx, b) in blocks_for_f.iter().enumerate() {
            collective.insert(
                b.members().to_vec(),
                (coll_flat[2 * idx], coll_flat[2 * idx + 1]),
            );
        }
        let table = MomentTable {
            n_modes: n,
            numbers: numbers_0.to_vec(),
            pairs,
            collective,
        };
        let bound = nonlocality::bound(&table, max_block, &coeffs_for_f)?;
        Ok(bound.best.total - lhs)
    };
    let (margin, margin_se) = propagate(&means, &errors, &margin_of)?;

    let sum_c: f64 = means[2..2 + n].iter().sum();
    let sum_0: f64 = means[2 + n..2 + 2 * n].iter().sum();
    let lhs = (nf * (means[0] - means[1]) - (sum_c - sum_0)) / 2.0;
    let rhs = margin + lhs;
    let (z, violated) = claim(margin, margin_se, cfg.z_threshold);
    Ok(McNonlocalityReport {
        n_modes: n,
        max_block,
        shots: cfg.shots,
        seed: cfg.seed,
        lhs,
        rhs,
        margin,
        margin_se,
        z,
        z_threshold: cfg.z_threshold,
        violated,
        estimates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entanglement;
    use crate::hilbert::{add_particle_nonlocal, build_thermal, wlike_closed_forms, SystemSpec};
    use approx::assert_abs_diff_eq;

    fn w_like(n: usize, n_th: f64, cutoff: usize) -> (DensityOperator, DensityOperator) {
        let spec = SystemSpec::new(n, Kind::Bosonic, cutoff).unwrap();
        let base = build_thermal(&spec, n_th).unwrap();
        let coeffs = ModeCoefficients::uniform(n).unwrap();
        let added = add_particle_nonlocal(&base, &coeffs).unwrap().state;
        (added, base)
    }

    #[test]
    fn empty_network_is_identity() {
        let net = OpticalNetwork {
            n_modes: 3,
            elements: vec![],
        };
        let u = network_transfer(&net).unwrap();
        assert_eq!(u, DMatrix::identity(3, 3));
    }

    #[test]
    fn balanced_splitter_rows_are_sum_and_difference() {
        let net = OpticalNetwork {
            n_modes: 2,
            elements: vec![NetworkElement::BeamSplitter {
                r: 0.5,
                modes: (1, 2),
            }],
        };
        let u = network_transfer(&net).unwrap();
        let s = 0.5f64.sqrt();
        assert_abs_diff_eq!(u[(0, 0)].re, s, epsilon = 1e-15);
        assert_abs_diff_eq!(u[(0, 1)].re, s, epsilon = 1e-15);
        assert_abs_diff_eq!(u[(1, 0)].re, s, epsilon = 1e-15);
        assert_abs_diff_eq!(u[(1, 1)].re, -s, epsilon = 1e-15);
    }

    #[test]
    fn tripartite_cascade_produces_uniform_collective_row() {
        let net = OpticalNetwork {
            n_modes: 3,
            elements: vec![
                NetworkElement::BeamSplitter {
                    r: 0.5,
                    modes: (1, 2),
                },
                NetworkElement::BeamSplitter {
                    r: 2.0 / 3.0,
                    modes: (1, 3),
                },
            ],
        };
        let u = network_transfer(&net).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(u[(0, j)].norm(), 1.0 / 3f64.sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn translation_matches_the_gain_examples() {
        let opt = sideband_translate(&CorrelatorDescriptor::pair_number(1, 2).unwrap()).unwrap();
        assert_eq!((opt.s_pairs, opt.as_pairs), (0, 2));
        assert!(opt
            .factors
            .iter()
            .all(|f| f.channel == Channel::AntiStokes));

        let opt =
            sideband_translate(&CorrelatorDescriptor::antinormal_pair(1, 2).unwrap()).unwrap();
        assert_eq!((opt.s_pairs, opt.as_pairs), (1, 1));

        let err = sideband_translate(&CorrelatorDescriptor::cross(1, 2).unwrap());
        assert!(matches!(err, Err(Error::NotMeasurable(_))));
    }

    #[test]
    fn translation_round_trips_through_the_gains() {
        let (rho, _) = w_like(2, 0.2, 8);
        let gains = SidebandGains::new(2.0, 0.5).unwrap();
        for descriptor in [
            CorrelatorDescriptor::number(1).unwrap(),
            CorrelatorDescriptor::pair_number(1, 2).unwrap(),
            CorrelatorDescriptor::antinormal_pair(1, 2).unwrap(),
        ] {
            let opt = sideband_translate(&descriptor).unwrap();
            let photo = opt.photocount_value(&rho, &gains).unwrap();
            let direct = descriptor.value(&rho).unwrap().re;
            assert_abs_diff_eq!(photo / opt.gain_factor(&gains), direct, epsilon = 1e-12);
        }
        let n1 = sideband_translate(&CorrelatorDescriptor::number(1).unwrap()).unwrap();
        assert_abs_diff_eq!(
            n1.photocount_value(&rho, &gains).unwrap() / gains.g_as_sq,
            rho.number_moment(1),
            epsilon = 1e-12
        );
    }

    #[test]
    fn interference_recovers_the_cross_modulus() {
        let (rho, base) = w_like(2, 0.1, 12);
        let grid = phase_grid(64);
        let expect = wlike_closed_forms(2, 0.1, Kind::Bosonic).unwrap().cross_abs;
        let got = cross_from_interference(&rho, 1, 2, &grid).unwrap();
        let resolution = expect * (1.0 - (std::f64::consts::PI / 64.0).cos()) + 1e-9;
        assert!((expect - got).abs() <= resolution, "got {got}, expect {expect}");

        let fine = cross_from_interference(&rho, 1, 2, &phase_grid(256)).unwrap();
        assert!((fine - got).abs() <= resolution);
        assert!(fine >= got - 1e-12);

        let thermal = cross_from_interference(&base, 1, 2, &grid).unwrap();
        assert_abs_diff_eq!(thermal, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn collective_estimator_reaches_the_cross_sum() {
        let n = 3;
        let n_th = 0.1;
        let (rho, base) = w_like(n, n_th, 8);
        let cfg = PhaseConfig::default();
        let est = cross_sum_from_nw(&rho, &ModeCoefficients::uniform(n).unwrap(), &cfg).unwrap();
        let a = wlike_closed_forms(n, n_th, Kind::Bosonic).unwrap();
        let pairs = (n * (n - 1) / 2) as f64;
        assert!(est.converged);
        assert_abs_diff_eq!(est.value, pairs * a.cross_abs, epsilon = 1e-6);

        let zero = cross_sum_from_nw(&base, &ModeCoefficients::uniform(n).unwrap(), &cfg).unwrap();
        assert_abs_diff_eq!(zero.value, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn grid_ascent_recovers_scrambled_phases() {
        let n = 3;
        let spec = SystemSpec::new(n, Kind::Bosonic, 6).unwrap();
        let base = build_thermal(&spec, 0.05).unwrap();
        let scrambled = ModeCoefficients::from_phases(&[0.0, 2.2, 4.4]).unwrap();
        let rho = add_particle_nonlocal(&base, &scrambled).unwrap().state;
        let cfg = PhaseConfig {
            analytic: false,
            sweeps: 6,
            grid_points: 64,
            ..PhaseConfig::default()
        };
        let est = cross_sum_from_nw(&rho, &ModeCoefficients::uniform(n).unwrap(), &cfg).unwrap();
        let target: f64 = {
            let mut s = 0.0;
            for i in 1..=n {
                for j in (i + 1)..=n {
                    s += rho.cross_moment(i, j).norm();
                }
            }
            s
        };
        // The per-coordinate grid underestimates by at most the cosine
        // resolution of 64 points per remaining pair.
        let resolution = target * (1.0 - (std::f64::consts::PI / 64.0).cos()) * 3.0 + 1e-9;
        assert!(
            est.value >= target - resolution && est.value <= target + 1e-9,
            "ascent found {} of {target}",
            est.value
        );
    }

    #[test]
    fn optical_witness_agrees_with_the_exact_evaluator() {
        let n = 3;
        let (rho, _) = w_like(n, 0.0, 2);
        let gains = SidebandGains::new(3.0, 1.5).unwrap();
        let counts = exact_count_set(&rho, &gains, &PhaseConfig::default()).unwrap();
        let nsm = n_sep_max(n, 2).unwrap();
        let optical = optical_witness(&counts, 2, nsm).unwrap();
        let exact = entanglement::evaluate(&rho, 2).unwrap();
        assert_abs_diff_eq!(
            optical.phonon_margin(&gains),
            exact.margin,
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(optical.lhs / gains.g_as_sq, exact.lhs, epsilon = 1e-10);
        assert_abs_diff_eq!(optical.rhs / gains.g_as_sq, exact.rhs, epsilon = 1e-10);
        assert!(optical.violated);
    }

    #[test]
    fn optical_witness_is_gain_independent() {
        let n = 3;
        let (rho, base) = w_like(n, 0.1, 8);
        let gains = SidebandGains::new(2.0, 1.0).unwrap();
        let counts = exact_count_set(&rho, &gains, &PhaseConfig::default()).unwrap();
        let nsm = n_sep_max(n, 2).unwrap();
        let reference = optical_witness(&counts, 2, nsm).unwrap();
        let ref_phonon = reference.margin / gains.g_as_sq;
        for alpha in [0.1, 1.0, 7.3, 100.0] {
            let scaled = counts.rescale_anti_stokes(alpha);
            let report = optical_witness(&scaled, 2, nsm).unwrap();
            assert_eq!(report.violated, reference.violated);
            let phonon = report.margin / (gains.g_as_sq * alpha);
            assert!(
                (phonon - ref_phonon).abs() <= 1e-12 * ref_phonon.abs(),
                "phonon margin drifted: {phonon} vs {ref_phonon}"
            );
            let (r1, r0) = (
                report.margin_ratio.unwrap(),
                reference.margin_ratio.unwrap(),
            );
            assert!((r1 - r0).abs() <= 1e-12 * r0.abs());
        }

        let thermal_counts =
            exact_count_set(&base, &gains, &PhaseConfig::default()).unwrap();
        let thermal = optical_witness(&thermal_counts, 2, nsm).unwrap();
        assert!(!thermal.violated);
    }

    #[test]
    fn missing_counts_are_enumerated() {
        let n = 2;
        let (rho, _) = w_like(n, 0.0, 2);
        let gains = SidebandGains::new(1.0, 1.0).unwrap();
        let mut counts = exact_count_set(&rho, &gains, &PhaseConfig::default()).unwrap();
        counts.records.retain(|r| r.id != "as_nn:1:2" && r.id != "as_n:2");
        match optical_witness(&counts, 1, 1) {
            Err(Error::MissingCounts(ids)) => {
                assert_eq!(ids, vec!["as_n:2".to_string(), "as_nn:1:2".to_string()]);
            }
            other => panic!("expected missing-counts error, got {other:?}"),
        }
    }

    #[test]
    fn calibration_inverts_forward_generated_counts() {
        let spec = SystemSpec::new(1, Kind::Bosonic, 12).unwrap();
        let rho = build_thermal(&spec, 0.3).unwrap();
        let gains = SidebandGains::new(2.0, 1.0).unwrap();
        let s = gains.g_s_sq * (rho.number_moment(1) + 1.0);
        let asc = gains.g_as_sq * rho.number_moment(1);
        let recovered = gain_calibrate(s, asc, gains.lambda).unwrap();
        assert_abs_diff_eq!(recovered.g_s_sq, 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(recovered.g_as_sq, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(commutator_check(s, asc, &recovered), 1.0, epsilon = 1e-12);

        // Ground mode: no anti-Stokes photons, the Stokes count is G_S².
        let ground = build_thermal(&spec, 0.0).unwrap();
        let s0 = gains.g_s_sq * (ground.number_moment(1) + 1.0);
        let g0 = gain_calibrate(s0, 0.0, gains.lambda).unwrap();
        assert_abs_diff_eq!(g0.g_s_sq, s0, epsilon = 1e-12);

        // A doubled λ on thermal counts yields gains that fail the
        // commutator identity on a mode with different occupation.
        let biased = gain_calibrate(s, asc, 2.0 * gains.lambda);
        match biased {
            Ok(g) => {
                let hot = build_thermal(&spec, 0.9).unwrap();
                let s_hot = gains.g_s_sq * (hot.number_moment(1) + 1.0);
                let as_hot = gains.g_as_sq * hot.number_moment(1);
                let residual = commutator_check(s_hot, as_hot, &g);
                assert!((residual - 1.0).abs() > 1e-3, "bias went undetected");
            }
            Err(Error::Calibration(_)) => {}
            Err(e) => panic!("unexpected error {e:?}"),
        }
    }

    #[test]
    fn amplitudes_normalize_the_singleton_counts() {
        assert_eq!(
            amplitude_estimate(&[1.0, 1.0, 1.0, 1.0]).unwrap(),
            vec![0.25; 4]
        );
        let est = amplitude_estimate(&[0.7 * 3.3, 0.3 * 3.3]).unwrap();
        assert_abs_diff_eq!(est[0], 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(est[1], 0.3, epsilon = 1e-12);
        assert!(matches!(
            amplitude_estimate(&[0.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn deterministic_observables_have_zero_stderr() {
        let (rho, _) = w_like(2, 0.1, 6);
        let dim = rho.spec().dim();
        let identity = Observable::Diagonal(DVector::from_element(dim, 1.0));
        let e = sample_observable(&rho, &identity, 500, 11).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn sampling_is_unbiased_within_four_sigma() {
        let n = 3;
        let (rho, _) = w_like(n, 0.0, 2);
        let spec = rho.spec();
        let full = Combination::new(vec![1, 2, 3], 3).unwrap();
        let nw = collective_number_matrix(spec, &full, &ModeCoefficients::uniform(n).unwrap())
            .unwrap();
        let e = sample_observable(&rho, &Observable::Hermitian(nw), 100_000, 42).unwrap();
        // The ground W state is an eigenstate of its own collective number.
        assert_abs_diff_eq!(e.mean, 1.0, epsilon = 1e-12);
        assert_eq!(e.stderr, 0.0);

        let n1 = Observable::Diagonal(number_diagonal(spec, 1));
        let e = sample_observable(&rho, &n1, 100_000, 43).unwrap();
        let exact = rho.number_moment(1);
        assert!((e.mean - exact).abs() <= 4.0 * e.stderr, "mean off: {e:?}");
        assert!(e.stderr > 0.0);
    }

    #[test]
    fn stderr_scales_as_inverse_root_shots() {
        let (rho, _) = w_like(3, 0.0, 2);
        let n1 = Observable::Diagonal(number_diagonal(rho.spec(), 1));
        let mut previous: Option<f64> = None;
        for (k, shots) in [1_000u64, 10_000, 100_000].into_iter().enumerate() {
            let e = sample_observable(&rho, &n1, shots, derive_seed(9, &format!("s{k}")))
                .unwrap();
            if let Some(prev) = previous {
                let ratio = prev / e.stderr;
                let expect = 10f64.sqrt();
                assert!(
                    (ratio - expect).abs() <= 0.2 * expect,
                    "scaling ratio {ratio} strays from {expect}"
                );
            }
            previous = Some(e.stderr);
        }
    }

    #[test]
    fn derived_seeds_separate_streams_reproducibly() {
        let (rho, _) = w_like(2, 0.1, 6);
        let n1 = Observable::Diagonal(number_diagonal(rho.spec(), 1));
        let a = sample_count_record(&rho, "n:1", &n1, 1000, 5).unwrap();
        let b = sample_count_record(&rho, "n:1", &n1, 1000, 5).unwrap();
        let c = sample_count_record(&rho, "n:other", &n1, 1000, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.sum, c.sum);
        assert_eq!(a.seed, Some(derive_seed(5, "n:1")));
    }

    #[test]
    fn witness_mc_claims_the_ground_w_violation() {
        let (rho, base) = w_like(3, 0.0, 2);
        let cfg = McConfig {
            shots: 10_000,
            seed: 314,
            ..McConfig::default()
        };
        let report = estimate_witness_mc(&rho, 2, &cfg).unwrap();
        assert!(report.violated, "violation not claimed: {report:?}");
        assert!((report.margin + 0.5).abs() <= 5.0 * report.margin_se);
        assert!(report.z.unwrap() >= 3.0);

        let thermal = estimate_witness_mc(&base, 2, &cfg).unwrap();
        assert!(!thermal.violated);

        let starved = estimate_witness_mc(
            &rho,
            2,
            &McConfig {
                shots: 10,
                seed: 314,
                ..McConfig::default()
            },
        )
        .unwrap();
        assert!(!starved.violated, "ten shots cannot support a claim");
    }

    #[test]
    fn nonlocality_mc_tracks_the_closed_form() {
        let n = 2;
        let n_th = 0.1;
        let (prepared, base) = w_like(n, n_th, 8);
        let coeffs = ModeCoefficients::uniform(n).unwrap();
        let cfg = McConfig {
            shots: 20_000,
            seed: 2718,
            ..McConfig::default()
        };
        let report = estimate_nonlocality_mc(&prepared, &base, &coeffs, 1, &cfg).unwrap();
        let closed = nonlocality::thermal_sides(n, 1, n_th, Kind::Bosonic).unwrap();
        assert!(
            (report.margin - closed.margin).abs() <= 5.0 * report.margin_se.max(1e-3),
            "margin {} strays from {}",
            report.margin,
            closed.margin
        );
        assert!(report.violated);
    }
}
