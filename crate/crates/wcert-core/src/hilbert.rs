//! Truncated multimode Fock spaces: density operators, thermal and W-like
//! state preparation, coherent single-particle addition, and moment
//! extraction.
//!
//! Basis convention: a system of `N` modes, each with per-mode dimension
//! `cutoff` (occupations `0..cutoff`), has total dimension `cutoff^N`.
//! Basis index `I = Σ_k n_k · cutoff^(N−k)` for 1-based mode `k`, so mode 1
//! varies slowest. Ladder operators carry the truncated bosonic matrix
//! elements; raising out of the retained range annihilates the vector. With
//! `cutoff = 2` those matrix elements coincide with the two-level raising
//! and lowering operators, so a single implementation serves both mode
//! kinds.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::partitions::{Combination, Structure};
use crate::tol;
use crate::{Error, Result};

/// Environment variable that overrides the default Hilbert-space dimension
/// cap of [`DEFAULT_DIM_CAP`].
pub const DIM_CAP_ENV: &str = "WCERT_DIM_CAP";

/// Default cap on the total Hilbert-space dimension.
pub const DEFAULT_DIM_CAP: usize = 20_000;

/// Current dimension cap: the value of [`DIM_CAP_ENV`] when set to a
/// positive integer, otherwise [`DEFAULT_DIM_CAP`].
pub fn dim_cap() -> usize {
    std::env::var(DIM_CAP_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or(DEFAULT_DIM_CAP)
}

/// Physical kind of the modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    /// Harmonic modes with unbounded spectra, numerically truncated.
    Bosonic,
    /// Two-level modes; occupation is 0 or 1 and the cutoff is fixed at 2.
    TwoLevel,
}

impl std::fmt::Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Kind::Bosonic => write!(f, "bosonic"),
            Kind::TwoLevel => write!(f, "two-level"),
        }
    }
}

/// Smallest per-mode dimension such that the discarded thermal weight,
/// size-weighted for moment error, stays below `tail`.
///
/// A thermal mode with mean occupation `n_th` has tail mass `q^d` above
/// occupation `d−1`, where `q = n_th/(n_th+1)`. The states the witnesses
/// consume carry one added excitation, which shifts the occupation
/// distribution up a level, and their second moments weight the tail by
/// occupation squared, so the retained level count `d` is the smallest
/// with `q^(d−1) · (d+1)² < tail`, floored at 2 so a single added
/// excitation always fits.
pub fn adaptive_cutoff(n_th: f64, tail: f64) -> Result<usize> {
    if !n_th.is_finite() || n_th < 0.0 || !tail.is_finite() || tail <= 0.0 {
        return Err(Error::Domain(format!(
            "adaptive cutoff needs n_th >= 0 and tail > 0, got n_th={n_th}, tail={tail}"
        )));
    }
    if n_th == 0.0 {
        return Ok(2);
    }
    let q = n_th / (n_th + 1.0);
    let mut d = 2usize;
    while q.powi(d as i32 - 1) * ((d + 1) as f64).powi(2) >= tail {
        d += 1;
        if d > 4096 {
            return Err(Error::Domain(format!(
                "adaptive cutoff for n_th={n_th} exceeds 4096 levels at tail={tail}"
            )));
        }
    }
    Ok(d)
}

/// Mode count, kind, and per-mode dimension of a system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SystemSpec {
    n_modes: usize,
    kind: Kind,
    cutoff: usize,
}

impl SystemSpec {
    /// Validate and build a spec.
    ///
    /// Requires `n_modes ≥ 1` and `cutoff ≥ 2` (one excitation of headroom
    /// above the vacuum), with `cutoff = 2` exactly for two-level modes.
    /// The total dimension `cutoff^n_modes` must not exceed [`dim_cap`].
    pub fn new(n_modes: usize, kind: Kind, cutoff: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::Domain("n_modes must be at least 1".into()));
        }
        if cutoff < 2 {
            return Err(Error::Domain("cutoff must be at least 2".into()));
        }
        if kind == Kind::TwoLevel && cutoff != 2 {
            return Err(Error::Domain(format!(
                "two-level modes fix cutoff = 2, got {cutoff}"
            )));
        }
        let cap = dim_cap();
        let dim = cutoff
            .checked_pow(n_modes as u32)
            .ok_or(Error::DimensionCap {
                dim: usize::MAX,
                cap,
            })?;
        if dim > cap {
            return Err(Error::DimensionCap { dim, cap });
        }
        Ok(Self {
            n_modes,
            kind,
            cutoff,
        })
    }

    /// Number of modes.
    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    /// Mode kind.
    pub fn kind(&self) -> Kind {
        self.kind
    }

    /// Per-mode dimension; retained occupations are `0..cutoff`.
    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// States per mode, an alias for [`Self::cutoff`].
    pub fn levels(&self) -> usize {
        self.cutoff
    }

    /// Total Hilbert-space dimension, `levels^n_modes`.
    pub fn dim(&self) -> usize {
        self.basis().dim()
    }

    /// Occupation of 1-based `mode` in basis state `index`.
    pub fn occupation(&self, index: usize, mode: usize) -> usize {
        self.basis().occ0(index, mode - 1)
    }

    fn basis(&self) -> Basis {
        Basis {
            n_modes: self.n_modes,
            levels: self.cutoff,
        }
    }
}

/// Raw basis bookkeeping shared by operators on the native and on the
/// temporarily extended space.
#[derive(Debug, Clone, Copy)]
struct Basis {
    n_modes: usize,
    levels: usize,
}

impl Basis {
    fn dim(&self) -> usize {
        self.levels.pow(self.n_modes as u32)
    }

    /// Index stride of 0-based mode `m`; mode 0 varies slowest.
    fn stride0(&self, m: usize) -> usize {
        self.levels.pow((self.n_modes - 1 - m) as u32)
    }

    fn occ0(&self, index: usize, m: usize) -> usize {
        index / self.stride0(m) % self.levels
    }
}

/// Complex weights over the modes, stored normalized to unit Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeCoefficients {
    values: Vec<Complex64>,
    /// True when the input already had unit norm within [`tol::COEFF_NORM`].
    was_normalized: bool,
}

impl ModeCoefficients {
    /// Normalize and store; rejects empty or numerically zero input.
    pub fn new(values: Vec<Complex64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Validation("coefficient list is empty".into()));
        }
        let norm_sq: f64 = values.iter().map(|c| c.norm_sqr()).sum();
        if norm_sq <= tol::DEGENERATE_NORM {
            return Err(Error::Degenerate(
                "coefficient vector has numerically zero norm".into(),
            ));
        }
        let norm = norm_sq.sqrt();
        let was_normalized = (norm - 1.0).abs() <= tol::COEFF_NORM;
        let values = values.iter().map(|c| c / norm).collect();
        Ok(Self {
            values,
            was_normalized,
        })
    }

    /// Uniform real weights `1/√n` on `n` modes.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation("coefficient list is empty".into()));
        }
        let w = Complex64::new(1.0 / (n as f64).sqrt(), 0.0);
        Ok(Self {
            values: vec![w; n],
            was_normalized: true,
        })
    }

    /// Unit-magnitude weights `e^{iφ_k}/√n` from a phase list.
    pub fn from_phases(phases: &[f64]) -> Result<Self> {
        let n = phases.len();
        if n == 0 {
            return Err(Error::Validation("coefficient list is empty".into()));
        }
        let scale = 1.0 / (n as f64).sqrt();
        let values = phases
            .iter()
            .map(|&p| Complex64::from_polar(scale, p))
            .collect();
        Ok(Self {
            values,
            was_normalized: true,
        })
    }

    /// Normalized values; entry `i` belongs to 1-based mode `i+1`.
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Number of modes covered.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false: validated coefficients are non-empty.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Coefficient of 1-based `mode`.
    pub fn get(&self, mode: usize) -> Complex64 {
        self.values[mode - 1]
    }

    /// True when the constructor input already had unit norm.
    pub fn was_normalized(&self) -> bool {
        self.was_normalized
    }

    /// Restriction to the subset, renormalized to unit norm.
    ///
    /// Fails with [`Error::Degenerate`] when the subset carries numerically
    /// zero weight.
    pub fn restrict(&self, subset: &Combination) -> Result<Vec<Complex64>> {
        let vals: Vec<Complex64> = subset.members().iter().map(|&m| self.get(m)).collect();
        let norm_sq: f64 = vals.iter().map(|c| c.norm_sqr()).sum();
        if norm_sq <= tol::DEGENERATE_NORM {
            return Err(Error::Degenerate(format!(
                "coefficients vanish on subset {:?}",
                subset.members()
            )));
        }
        let norm = norm_sq.sqrt();
        Ok(vals.into_iter().map(|c| c / norm).collect())
    }
}

/// A validated density operator on a truncated multimode space.
#[derive(Debug, Clone)]
pub struct DensityOperator {
    spec: SystemSpec,
    matrix: DMatrix<Complex64>,
}

impl DensityOperator {
    /// Validate a raw matrix: square of dimension `spec.dim()`, Hermitian
    /// within [`tol::HERMITICITY`], unit trace within [`tol::TRACE`], and
    /// positive semidefinite down to eigenvalues of `−`[`tol::POSITIVITY`].
    ///
    /// The positivity check runs a Cholesky factorization of
    /// `ρ + POSITIVITY·I` and is cubic in the dimension; constructors that
    /// build states positive by construction skip it.
    pub fn new(spec: SystemSpec, matrix: DMatrix<Complex64>) -> Result<Self> {
        let dim = spec.dim();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::Validation(format!(
                "matrix is {}x{}, spec dimension is {dim}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        check_hermitian(&matrix)?;
        check_unit_trace(&matrix)?;
        let mut shifted = matrix.clone();
        for k in 0..dim {
            shifted[(k, k)] += Complex64::new(tol::POSITIVITY, 0.0);
        }
        if nalgebra::Cholesky::new(shifted).is_none() {
            return Err(Error::Validation(format!(
                "matrix has an eigenvalue below -{:e}",
                tol::POSITIVITY
            )));
        }
        Ok(Self { spec, matrix })
    }

    /// Build from a matrix known positive by construction; hermiticity and
    /// trace are still verified.
    fn from_parts(spec: SystemSpec, matrix: DMatrix<Complex64>) -> Result<Self> {
        debug_assert_eq!(matrix.nrows(), spec.dim());
        check_hermitian(&matrix)?;
        check_unit_trace(&matrix)?;
        Ok(Self { spec, matrix })
    }

    /// Pure state `|ψ⟩⟨ψ|` from amplitudes in the basis ordering; the
    /// amplitude vector is normalized first.
    pub fn from_pure(spec: SystemSpec, amplitudes: &[Complex64]) -> Result<Self> {
        let dim = spec.dim();
        if amplitudes.len() != dim {
            return Err(Error::Validation(format!(
                "amplitude vector has length {}, expected {dim}",
                amplitudes.len()
            )));
        }
        let norm_sq: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if norm_sq <= tol::DEGENERATE_NORM {
            return Err(Error::Degenerate(
                "amplitude vector has numerically zero norm".into(),
            ));
        }
        let norm = norm_sq.sqrt();
        let v = DVector::from_iterator(dim, amplitudes.iter().map(|a| a / norm));
        let matrix = &v * v.adjoint();
        Self::from_parts(spec, matrix)
    }

    /// The maximally mixed state `I/dim`.
    pub fn maximally_mixed(spec: SystemSpec) -> Result<Self> {
        let dim = spec.dim();
        let w = Complex64::new(1.0 / dim as f64, 0.0);
        let matrix = DMatrix::from_diagonal(&DVector::from_element(dim, w));
        Self::from_parts(spec, matrix)
    }

    /// Convex mixture of states on a common spec; weights must be
    /// non-negative with a positive sum and are renormalized.
    pub fn mix(parts: &[(f64, &DensityOperator)]) -> Result<Self> {
        let spec = match parts.first() {
            Some((_, rho)) => rho.spec,
            None => return Err(Error::Validation("mixture needs at least one part".into())),
        };
        let mut total = 0.0;
        for (w, rho) in parts {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::Domain(format!("mixture weight {w} is negative")));
            }
            if rho.spec != spec {
                return Err(Error::Validation(
                    "mixture parts live on different specs".into(),
                ));
            }
            total += w;
        }
        if total <= tol::DEGENERATE_NORM {
            return Err(Error::Degenerate("mixture weights sum to zero".into()));
        }
        let dim = spec.dim();
        let mut matrix = DMatrix::zeros(dim, dim);
        for (w, rho) in parts {
            matrix += &rho.matrix * Complex64::new(w / total, 0.0);
        }
        Self::from_parts(spec, matrix)
    }

    /// System layout of the operator.
    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    /// Raw matrix in the basis ordering of [`SystemSpec`].
    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    /// Trace, which is 1 within [`tol::TRACE`] by construction.
    pub fn trace(&self) -> f64 {
        self.matrix.diagonal().iter().map(|c| c.re).sum()
    }

    /// Diagonal as a probability vector: clamped at zero and renormalized.
    pub fn diagonal_probabilities(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self
            .matrix
            .diagonal()
            .iter()
            .map(|c| c.re.max(0.0))
            .collect();
        let total: f64 = p.iter().sum();
        if total > 0.0 {
            for x in &mut p {
                *x /= total;
            }
        }
        p
    }

    /// Cross moment `⟨b_i† b_j⟩` for distinct 1-based modes.
    pub fn cross_moment(&self, i: usize, j: usize) -> Complex64 {
        assert_ne!(i, j, "cross moment needs distinct modes");
        let basis = self.spec.basis();
        let (si, sj) = (basis.stride0(i - 1), basis.stride0(j - 1));
        let top = basis.levels - 1;
        let mut acc = Complex64::ZERO;
        for col in 0..basis.dim() {
            let ni = basis.occ0(col, i - 1);
            let nj = basis.occ0(col, j - 1);
            if nj == 0 || ni == top {
                continue;
            }
            let row = col + si - sj;
            let factor = (((ni + 1) * nj) as f64).sqrt();
            acc += self.matrix[(row, col)] * factor;
        }
        acc
    }

    /// Expectation `Tr(ρ · F_1 F_2 ⋯ F_k)` of an ordered ladder product.
    ///
    /// Each factor is `(mode, create)` with 1-based modes; `create = true`
    /// means `b†`. Factors apply in the given order inside the trace, so
    /// `[(i, true), (j, false)]` evaluates `⟨b_i† b_j⟩`.
    pub fn ladder_product_moment(&self, factors: &[(usize, bool)]) -> Result<Complex64> {
        let basis = self.spec.basis();
        let mut acc = self.matrix.clone();
        for &(mode, create) in factors {
            if mode == 0 || mode > self.spec.n_modes {
                return Err(Error::Validation(format!(
                    "ladder factor mode {mode} is not in 1..={}",
                    self.spec.n_modes
                )));
            }
            let ladder = if create { Ladder::Up } else { Ladder::Down };
            acc = apply_ladder(&acc, &basis, mode - 1, Side::Right, ladder);
        }
        Ok(acc.diagonal().sum())
    }

    /// Anti-normal diagonal moment `⟨b_i b_i†⟩` in the truncated space.
    pub fn create_first_moment(&self, i: usize) -> f64 {
        let basis = self.spec.basis();
        let top = basis.levels - 1;
        let mut acc = 0.0;
        for idx in 0..basis.dim() {
            let ni = basis.occ0(idx, i - 1);
            if ni < top {
                acc += self.matrix[(idx, idx)].re * (ni + 1) as f64;
            }
        }
        acc
    }

    /// Occupation moment `⟨n_i⟩`.
    pub fn number_moment(&self, i: usize) -> f64 {
        let basis = self.spec.basis();
        let mut acc = 0.0;
        for idx in 0..basis.dim() {
            acc += self.matrix[(idx, idx)].re * basis.occ0(idx, i - 1) as f64;
        }
        acc
    }

    /// Pair occupation moment `⟨n_i n_j⟩` for distinct modes.
    pub fn pair_number_moment(&self, i: usize, j: usize) -> f64 {
        assert_ne!(i, j, "pair moment needs distinct modes");
        let basis = self.spec.basis();
        let mut acc = 0.0;
        for idx in 0..basis.dim() {
            let nij = basis.occ0(idx, i - 1) * basis.occ0(idx, j - 1);
            acc += self.matrix[(idx, idx)].re * nij as f64;
        }
        acc
    }

    /// Squared occupation moment `⟨n_i²⟩`.
    pub fn number_sq_moment(&self, i: usize) -> f64 {
        let basis = self.spec.basis();
        let mut acc = 0.0;
        for idx in 0..basis.dim() {
            let ni = basis.occ0(idx, i - 1);
            acc += self.matrix[(idx, idx)].re * (ni * ni) as f64;
        }
        acc
    }

    /// First and second moments of the collective number operator
    /// `n_C = b_C† b_C`, where `b_C` is the unit-norm combination of the
    /// subset's modes weighted by `coeffs` restricted to the subset.
    pub fn collective_moments(
        &self,
        subset: &Combination,
        coeffs: &ModeCoefficients,
    ) -> Result<CollectiveMoments> {
        self.check_mode_range(subset, coeffs)?;
        let w = coeffs.restrict(subset)?;
        let basis = self.spec.basis();
        let modes0: Vec<usize> = subset.members().iter().map(|&m| m - 1).collect();

        let l1 = apply_collective(&self.matrix, &basis, &modes0, &w, Side::Left, Ladder::Down);
        let l2 = apply_collective(&l1, &basis, &modes0, &w, Side::Left, Ladder::Up);
        let number = trace_re(&l2);
        let l3 = apply_collective(&l2, &basis, &modes0, &w, Side::Left, Ladder::Down);
        let l4 = apply_collective(&l3, &basis, &modes0, &w, Side::Left, Ladder::Up);
        let number_sq = trace_re(&l4);

        Ok(CollectiveMoments {
            subset: subset.clone(),
            number,
            number_sq,
        })
    }

    /// `⟨n_C⟩` alone, using two ladder applications instead of four.
    pub fn collective_number_moment(
        &self,
        subset: &Combination,
        coeffs: &ModeCoefficients,
    ) -> Result<f64> {
        self.check_mode_range(subset, coeffs)?;
        let w = coeffs.restrict(subset)?;
        let basis = self.spec.basis();
        let modes0: Vec<usize> = subset.members().iter().map(|&m| m - 1).collect();
        let l1 = apply_collective(&self.matrix, &basis, &modes0, &w, Side::Left, Ladder::Down);
        let l2 = apply_collective(&l1, &basis, &modes0, &w, Side::Left, Ladder::Up);
        Ok(trace_re(&l2))
    }

    /// Anti-normal collective moment `⟨b_C b_C†⟩ = Tr(b_C† ρ b_C)`, the
    /// creation weight of the collective mode on this state.
    pub fn collective_create_weight(
        &self,
        subset: &Combination,
        coeffs: &ModeCoefficients,
    ) -> Result<f64> {
        self.check_mode_range(subset, coeffs)?;
        let w = coeffs.restrict(subset)?;
        let basis = self.spec.basis();
        let modes0: Vec<usize> = subset.members().iter().map(|&m| m - 1).collect();
        let m1 = apply_collective(&self.matrix, &basis, &modes0, &w, Side::Left, Ladder::Up);
        let m2 = apply_collective(&m1, &basis, &modes0, &w, Side::Left, Ladder::Down);
        Ok(trace_re(&m2))
    }

    /// Overlap `⟨W_c|ρ|W_c⟩` with the single-excitation state whose mode
    /// amplitudes are `coeffs`; one excitation always fits since every mode
    /// retains at least two levels.
    pub fn fidelity_w(&self, coeffs: &ModeCoefficients) -> Result<f64> {
        if coeffs.len() != self.spec.n_modes {
            return Err(Error::Validation(format!(
                "coefficients cover {} modes, state has {}",
                coeffs.len(),
                self.spec.n_modes
            )));
        }
        let basis = self.spec.basis();
        let n = self.spec.n_modes;
        // Basis index of the one-excitation state e_i is the stride of mode i.
        let idx: Vec<usize> = (0..n).map(|m| basis.stride0(m)).collect();
        let mut acc = Complex64::ZERO;
        for i in 0..n {
            for j in 0..n {
                let cij = coeffs.values()[i].conj() * coeffs.values()[j];
                acc += cij * self.matrix[(idx[i], idx[j])];
            }
        }
        Ok(acc.re.max(0.0))
    }

    fn check_mode_range(&self, subset: &Combination, coeffs: &ModeCoefficients) -> Result<()> {
        let n = self.spec.n_modes;
        if coeffs.len() != n {
            return Err(Error::Validation(format!(
                "coefficients cover {} modes, state has {n}",
                coeffs.len()
            )));
        }
        if subset.members().last().copied().unwrap_or(0) > n {
            return Err(Error::Validation(format!(
                "subset {:?} exceeds the {n} modes",
                subset.members()
            )));
        }
        Ok(())
    }
}

fn check_hermitian(m: &DMatrix<Complex64>) -> Result<()> {
    let mut worst = 0.0f64;
    for col in 0..m.ncols() {
        for row in 0..=col {
            let d = (m[(row, col)] - m[(col, row)].conj()).norm();
            worst = worst.max(d);
        }
    }
    if worst > tol::HERMITICITY {
        return Err(Error::Validation(format!(
            "matrix is not Hermitian: max deviation {worst:e}"
        )));
    }
    Ok(())
}

fn check_unit_trace(m: &DMatrix<Complex64>) -> Result<()> {
    let tr: Complex64 = m.diagonal().iter().sum();
    if (tr.re - 1.0).abs() > tol::TRACE || tr.im.abs() > tol::TRACE {
        return Err(Error::Validation(format!(
            "trace is {} + {}i, expected 1",
            tr.re, tr.im
        )));
    }
    Ok(())
}

fn trace_re(m: &DMatrix<Complex64>) -> f64 {
    m.diagonal().iter().map(|c| c.re).sum()
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Left,
    Right,
}

#[derive(Clone, Copy, PartialEq)]
enum Ladder {
    Up,
    Down,
}

/// Apply a single-mode ladder operator to a matrix from one side.
///
/// Left: `b† M` scales row `I` by `√n_m(I)` reading from `I − s`; `b M`
/// scales row `I` by `√(n_m(I)+1)` reading from `I + s`. Right: `M b`
/// scales column `J` by `√n_m(J)` reading from `J − s`; `M b†` scales
/// column `J` by `√(n_m(J)+1)` reading from `J + s`. Out-of-range
/// occupations contribute zero.
fn apply_ladder(
    m: &DMatrix<Complex64>,
    basis: &Basis,
    mode0: usize,
    side: Side,
    ladder: Ladder,
) -> DMatrix<Complex64> {
    let dim = basis.dim();
    let stride = basis.stride0(mode0);
    let top = basis.levels - 1;
    let mut out = DMatrix::zeros(dim, dim);
    match side {
        Side::Left => {
            for col in 0..dim {
                for row in 0..dim {
                    let n = basis.occ0(row, mode0);
                    let (src, factor) = match ladder {
                        Ladder::Up if n >= 1 => (row - stride, (n as f64).sqrt()),
                        Ladder::Down if n < top => (row + stride, ((n + 1) as f64).sqrt()),
                        _ => continue,
                    };
                    out[(row, col)] = m[(src, col)] * factor;
                }
            }
        }
        Side::Right => {
            for col in 0..dim {
                let n = basis.occ0(col, mode0);
                let (src, factor) = match ladder {
                    Ladder::Down if n >= 1 => (col - stride, (n as f64).sqrt()),
                    Ladder::Up if n < top => (col + stride, ((n + 1) as f64).sqrt()),
                    _ => continue,
                };
                let f = Complex64::new(factor, 0.0);
                for row in 0..dim {
                    out[(row, col)] = m[(row, src)] * f;
                }
            }
        }
    }
    out
}

/// Apply the collective ladder `Σ_k w_k b_{modes0[k]}` (down) or its
/// adjoint `Σ_k w̄_k b†_{modes0[k]}` (up) from one side.
fn apply_collective(
    m: &DMatrix<Complex64>,
    basis: &Basis,
    modes0: &[usize],
    w: &[Complex64],
    side: Side,
    ladder: Ladder,
) -> DMatrix<Complex64> {
    let dim = basis.dim();
    let mut out = DMatrix::zeros(dim, dim);
    for (k, &m0) in modes0.iter().enumerate() {
        let coeff = match ladder {
            Ladder::Down => w[k],
            Ladder::Up => w[k].conj(),
        };
        out += apply_ladder(m, basis, m0, side, ladder) * coeff;
    }
    out
}

/// First and second moments of a collective number operator.
#[derive(Debug, Clone, Serialize)]
pub struct CollectiveMoments {
    /// Modes entering the collective operator.
    pub subset: Combination,
    /// `⟨n_C⟩`.
    pub number: f64,
    /// `⟨n_C²⟩`.
    pub number_sq: f64,
}

impl CollectiveMoments {
    /// Variance `⟨n_C²⟩ − ⟨n_C⟩²`, clamped at zero.
    pub fn variance(&self) -> f64 {
        (self.number_sq - self.number * self.number).max(0.0)
    }
}

/// All moments the witnesses consume, extracted in one call.
#[derive(Debug, Clone)]
pub struct ObservableSet {
    /// Number of modes; all matrices below are indexed `[i-1][j-1]`.
    pub n_modes: usize,
    /// Cross moments `⟨b_i† b_j⟩`; the diagonal carries `⟨n_i⟩` and the
    /// table is Hermitian.
    pub cross: Vec<Vec<Complex64>>,
    /// Occupations `⟨n_i⟩`.
    pub numbers: Vec<f64>,
    /// Pair moments `⟨n_i n_j⟩` off the diagonal, `⟨n_i²⟩` on it.
    pub pair_numbers: Vec<Vec<f64>>,
    /// Collective moments for each requested subset.
    pub collective: Vec<CollectiveMoments>,
}

impl ObservableSet {
    /// `|⟨b_i† b_j⟩|` for 1-based modes.
    pub fn cross_abs(&self, i: usize, j: usize) -> f64 {
        self.cross[i - 1][j - 1].norm()
    }

    /// `⟨n_i⟩` for a 1-based mode.
    pub fn number(&self, i: usize) -> f64 {
        self.numbers[i - 1]
    }

    /// `⟨n_i n_j⟩` (or `⟨n_i²⟩` when `i = j`) for 1-based modes.
    pub fn pair(&self, i: usize, j: usize) -> f64 {
        self.pair_numbers[i - 1][j - 1]
    }
}

/// Extract every witness moment of `rho`: all cross moments, occupations,
/// pair moments, and collective moments for the given subsets weighted by
/// `coeffs`.
pub fn observables(
    rho: &DensityOperator,
    subsets: &[Combination],
    coeffs: &ModeCoefficients,
) -> Result<ObservableSet> {
    let n = rho.spec().n_modes();
    if coeffs.len() != n {
        return Err(Error::Validation(format!(
            "coefficients cover {} modes, state has {n}",
            coeffs.len()
        )));
    }
    let mut cross = vec![vec![Complex64::ZERO; n]; n];
    for i in 1..=n {
        for j in (i + 1)..=n {
            let v = rho.cross_moment(i, j);
            cross[i - 1][j - 1] = v;
            cross[j - 1][i - 1] = v.conj();
        }
    }
    let numbers: Vec<f64> = (1..=n).map(|i| rho.number_moment(i)).collect();
    for i in 0..n {
        cross[i][i] = Complex64::new(numbers[i], 0.0);
    }
    let mut pair_numbers = vec![vec![0.0; n]; n];
    for i in 1..=n {
        pair_numbers[i - 1][i - 1] = rho.number_sq_moment(i);
        for j in (i + 1)..=n {
            let v = rho.pair_number_moment(i, j);
            pair_numbers[i - 1][j - 1] = v;
            pair_numbers[j - 1][i - 1] = v;
        }
    }
    let collective = subsets
        .iter()
        .map(|s| rho.collective_moments(s, coeffs))
        .collect::<Result<Vec<_>>>()?;
    Ok(ObservableSet {
        n_modes: n,
        cross,
        numbers,
        pair_numbers,
        collective,
    })
}

/// Thermal product state at mean occupation `n_th` per mode.
///
/// Bosonic weights follow the geometric distribution renormalized over the
/// retained levels; two-level weights are `(1−n_th, n_th)` and require
/// `0 ≤ n_th ≤ 1`. [`thermal_tail_mass`] reports the renormalized-away
/// weight.
pub fn build_thermal(spec: &SystemSpec, n_th: f64) -> Result<DensityOperator> {
    let weights = thermal_weights(spec.kind(), spec.levels(), n_th)?;
    let basis = spec.basis();
    let dim = basis.dim();
    let mut diag = DVector::zeros(dim);
    for idx in 0..dim {
        let mut p = 1.0;
        for m in 0..spec.n_modes() {
            p *= weights[basis.occ0(idx, m)];
        }
        diag[idx] = Complex64::new(p, 0.0);
    }
    DensityOperator::from_parts(*spec, DMatrix::from_diagonal(&diag))
}

fn thermal_weights(kind: Kind, levels: usize, n_th: f64) -> Result<Vec<f64>> {
    match kind {
        Kind::Bosonic => {
            if !n_th.is_finite() || n_th < 0.0 {
                return Err(Error::Domain(format!(
                    "bosonic thermal occupation must be non-negative, got {n_th}"
                )));
            }
            if n_th == 0.0 {
                let mut w = vec![0.0; levels];
                w[0] = 1.0;
                return Ok(w);
            }
            let q = n_th / (n_th + 1.0);
            let mut w: Vec<f64> = (0..levels).map(|k| q.powi(k as i32)).collect();
            let total: f64 = w.iter().sum();
            for x in &mut w {
                *x /= total;
            }
            Ok(w)
        }
        Kind::TwoLevel => {
            if !(0.0..=1.0).contains(&n_th) {
                return Err(Error::Domain(format!(
                    "two-level thermal occupation must lie in [0, 1], got {n_th}"
                )));
            }
            Ok(vec![1.0 - n_th, n_th])
        }
    }
}

/// Probability mass of the untruncated `n_modes`-mode thermal state that
/// falls outside the retained levels; zero for two-level modes.
///
/// The per-mode geometric distribution keeps mass `1 − q^d` over `d`
/// levels, where `q = n_th/(n_th+1)`, so the joint discarded mass is
/// `1 − (1 − q^d)^N`.
pub fn thermal_tail_mass(spec: &SystemSpec, n_th: f64) -> Result<f64> {
    if !n_th.is_finite() || n_th < 0.0 {
        return Err(Error::Domain(format!(
            "thermal occupation must be non-negative, got {n_th}"
        )));
    }
    if spec.kind() == Kind::TwoLevel || n_th == 0.0 {
        return Ok(0.0);
    }
    let q = n_th / (n_th + 1.0);
    let kept_per_mode = 1.0 - q.powi(spec.levels() as i32);
    Ok((1.0 - kept_per_mode.powi(spec.n_modes() as i32)).max(0.0))
}

/// Result of a coherent (fully nonlocal) single-particle addition.
#[derive(Debug, Clone)]
pub struct NonlocalAddition {
    /// The prepared state, back on the input cutoff.
    pub state: DensityOperator,
    /// Probability mass discarded when re-truncating after the addition.
    pub leakage: f64,
}

/// Probability weight of one block in a semilocal addition.
#[derive(Debug, Clone, Serialize)]
pub struct BlockWeight {
    /// The block of modes.
    pub block: Combination,
    /// Probability that the particle entered this block.
    pub probability: f64,
}

/// Result of a semilocal single-particle addition: the particle enters one
/// block of the structure at random, coherently within that block.
#[derive(Debug, Clone)]
pub struct SemilocalAddition {
    /// The prepared state, back on the input cutoff.
    pub state: DensityOperator,
    /// Probability mass discarded when re-truncating after the addition.
    pub leakage: f64,
    /// Blocks that received non-vanishing weight, with probabilities.
    pub blocks: Vec<BlockWeight>,
    /// Blocks dropped because their coefficient weight vanished.
    pub dropped: Vec<Combination>,
}

/// Add one particle coherently across all modes:
/// `ρ_c ∝ Σ_{ij} c_i c̄_j b_i† ρ_0 b_j`.
///
/// Bosonic states are extended by one level so the addition is exact, then
/// re-truncated to the input cutoff; the discarded mass is reported as
/// leakage. Two-level states need no extension and have zero leakage.
pub fn add_particle_nonlocal(
    rho0: &DensityOperator,
    coeffs: &ModeCoefficients,
) -> Result<NonlocalAddition> {
    let modes0: Vec<usize> = (0..rho0.spec().n_modes()).collect();
    let (matrix, leakage, _weights) =
        added_state(rho0, coeffs, std::slice::from_ref(&modes0))?;
    let state = finalize_added(rho0.spec(), matrix)?;
    Ok(NonlocalAddition { state, leakage })
}

/// Add one particle semilocally: coherent within each block of `structure`,
/// mixed across blocks with probabilities proportional to each block's
/// creation weight `Tr(b_C† ρ_0 b_C)`.
pub fn add_particle_semilocal(
    rho0: &DensityOperator,
    structure: &Structure,
    coeffs: &ModeCoefficients,
) -> Result<SemilocalAddition> {
    if structure.n_modes() != rho0.spec().n_modes() {
        return Err(Error::Validation(format!(
            "structure covers {} modes, state has {}",
            structure.n_modes(),
            rho0.spec().n_modes()
        )));
    }
    let groups: Vec<Vec<usize>> = structure
        .blocks()
        .iter()
        .map(|b| b.members().iter().map(|&m| m - 1).collect())
        .collect();
    let (matrix, leakage, weights) = added_state(rho0, coeffs, &groups)?;
    let state = finalize_added(rho0.spec(), matrix)?;

    let total: f64 = weights.iter().sum();
    let mut blocks = Vec::new();
    let mut dropped = Vec::new();
    for (block, &t) in structure.blocks().iter().zip(&weights) {
        if t <= tol::DEGENERATE_NORM {
            dropped.push(block.clone());
        } else {
            blocks.push(BlockWeight {
                block: block.clone(),
                probability: t / total,
            });
        }
    }
    Ok(SemilocalAddition {
        state,
        leakage,
        blocks,
        dropped,
    })
}

/// Shared worker for particle addition. Each group `G` contributes
/// `Σ_{i,j∈G} c_i c̄_j b_i† ρ b_j`; the groups' sums are added, normalized,
/// and re-truncated to the input cutoff. Returns the unnormalized-then-kept
/// matrix, the leakage, and each group's trace weight before normalization.
fn added_state(
    rho0: &DensityOperator,
    coeffs: &ModeCoefficients,
    groups: &[Vec<usize>],
) -> Result<(DMatrix<Complex64>, f64, Vec<f64>)> {
    let spec = rho0.spec();
    let n = spec.n_modes();
    if coeffs.len() != n {
        return Err(Error::Validation(format!(
            "coefficients cover {} modes, state has {n}",
            coeffs.len()
        )));
    }

    // Bosonic states get one extra level so b† never leaves the space;
    // two-level raising saturates physically and needs no headroom.
    let (ext, ext_basis, translate) = match spec.kind() {
        Kind::Bosonic => extend_by_one(rho0)?,
        Kind::TwoLevel => {
            let basis = Basis {
                n_modes: n,
                levels: 2,
            };
            let table: Vec<usize> = (0..basis.dim()).collect();
            (rho0.matrix().clone(), basis, table)
        }
    };

    let edim = ext_basis.dim();
    let mut acc = DMatrix::<Complex64>::zeros(edim, edim);
    let mut weights = Vec::with_capacity(groups.len());
    for group in groups {
        let mut group_acc = DMatrix::<Complex64>::zeros(edim, edim);
        for &j0 in group {
            let right = apply_ladder(&ext, &ext_basis, j0, Side::Right, Ladder::Down);
            let cj = coeffs.values()[j0].conj();
            for &i0 in group {
                let ci = coeffs.values()[i0];
                group_acc += apply_ladder(&right, &ext_basis, i0, Side::Left, Ladder::Up)
                    * (ci * cj);
            }
        }
        weights.push(trace_re(&group_acc).max(0.0));
        acc += group_acc;
    }

    let total = trace_re(&acc);
    if total <= tol::DEGENERATE_NORM {
        return Err(Error::Degenerate(
            "particle addition has vanishing total weight".into(),
        ));
    }
    acc /= Complex64::new(total, 0.0);

    // Re-truncate: pull back along the embedding table and measure the
    // retained mass.
    let dim0 = spec.dim();
    let mut kept = DMatrix::<Complex64>::zeros(dim0, dim0);
    for col in 0..dim0 {
        for row in 0..dim0 {
            kept[(row, col)] = acc[(translate[row], translate[col])];
        }
    }
    let kept_mass = trace_re(&kept);
    if kept_mass <= tol::DEGENERATE_NORM {
        return Err(Error::Degenerate(
            "re-truncation after addition retains no mass".into(),
        ));
    }
    let leakage = (1.0 - kept_mass).max(0.0);
    kept /= Complex64::new(kept_mass, 0.0);
    Ok((kept, leakage, weights))
}

/// Embed a state into the space with one extra level per mode. Returns the
/// embedded matrix, the extended basis, and the index translation table
/// from native to extended basis indices.
fn extend_by_one(rho: &DensityOperator) -> Result<(DMatrix<Complex64>, Basis, Vec<usize>)> {
    let spec = rho.spec();
    let n = spec.n_modes();
    let ext_basis = Basis {
        n_modes: n,
        levels: spec.levels() + 1,
    };
    let cap = dim_cap();
    let edim = (spec.levels() + 1)
        .checked_pow(n as u32)
        .ok_or(Error::DimensionCap {
            dim: usize::MAX,
            cap,
        })?;
    if edim > cap {
        return Err(Error::DimensionCap { dim: edim, cap });
    }
    let basis = Basis {
        n_modes: n,
        levels: spec.levels(),
    };
    let dim = basis.dim();
    let mut translate = vec![0usize; dim];
    for (idx, slot) in translate.iter_mut().enumerate() {
        let mut t = 0usize;
        for m in 0..n {
            t += basis.occ0(idx, m) * ext_basis.stride0(m);
        }
        *slot = t;
    }
    let mut ext = DMatrix::zeros(edim, edim);
    for col in 0..dim {
        for row in 0..dim {
            ext[(translate[row], translate[col])] = rho.matrix()[(row, col)];
        }
    }
    Ok((ext, ext_basis, translate))
}

/// Hermitize against floating-point drift and validate the added state.
fn finalize_added(spec: &SystemSpec, matrix: DMatrix<Complex64>) -> Result<DensityOperator> {
    let herm = (&matrix + matrix.adjoint()) * Complex64::new(0.5, 0.0);
    DensityOperator::from_parts(*spec, herm)
}

/// Closed-form moments of the thermal W-like state: one particle added
/// coherently with uniform weights to an `N`-mode thermal product at mean
/// occupation `n_th`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AnalyticWlike {
    /// Mode count.
    pub n_modes: usize,
    /// Thermal occupation of the base state.
    pub n_th: f64,
    /// Mode kind.
    pub kind: Kind,
    /// `|⟨b_i† b_j⟩|`, equal for all pairs.
    pub cross_abs: f64,
    /// `⟨n_i⟩`, equal for all modes.
    pub number: f64,
    /// `⟨n_i n_j⟩`, equal for all pairs.
    pub pair_number: f64,
    /// `⟨n_i²⟩`, equal for all modes.
    pub number_sq: f64,
    /// Overlap with the ideal single-excitation W state.
    pub fidelity: f64,
}

/// Evaluate the closed forms; `n ≥ 2`, and `n_th < 1` for two-level modes.
pub fn wlike_closed_forms(n: usize, n_th: f64, kind: Kind) -> Result<AnalyticWlike> {
    if n < 2 {
        return Err(Error::Domain(format!(
            "closed forms need at least 2 modes, got {n}"
        )));
    }
    let plus = match kind {
        Kind::Bosonic => {
            if !n_th.is_finite() || n_th < 0.0 {
                return Err(Error::Domain(format!(
                    "bosonic thermal occupation must be non-negative, got {n_th}"
                )));
            }
            n_th + 1.0
        }
        Kind::TwoLevel => {
            if !(0.0..1.0).contains(&n_th) {
                return Err(Error::Domain(format!(
                    "two-level thermal occupation must lie in [0, 1), got {n_th}"
                )));
            }
            1.0 - n_th
        }
    };
    let nf = n as f64;
    let t = n_th;
    let cross_abs = plus / nf;
    let number = t + plus / nf;
    let pair_number = (t / nf) * (nf * t + 2.0 * plus);
    let (number_sq, fidelity) = match kind {
        Kind::Bosonic => {
            let num = (nf - 1.0) * (2.0 * t * t + t) * (t + 1.0)
                + 6.0 * t * t * t
                + 12.0 * t * t
                + 7.0 * t
                + 1.0;
            let nsq = num / (nf * (t + 1.0));
            let fid = (t + 1.0).powi(-(n as i32) - 1);
            (nsq, fid)
        }
        // A two-level occupation is idempotent, and the added excitation
        // survives with probability (1-n_th)^(N-1) relative to the
        // post-selected norm.
        Kind::TwoLevel => (number, (1.0 - t).powi(n as i32 - 1)),
    };
    Ok(AnalyticWlike {
        n_modes: n,
        n_th,
        kind,
        cross_abs,
        number,
        pair_number,
        number_sq,
        fidelity,
    })
}

impl AnalyticWlike {
    /// Expand the symmetric closed forms into a full moment set, with all
    /// off-diagonal cross moments real and positive.
    pub fn to_observable_set(&self) -> ObservableSet {
        let n = self.n_modes;
        let mut cross = vec![vec![Complex64::new(self.cross_abs, 0.0); n]; n];
        let mut pair_numbers = vec![vec![self.pair_number; n]; n];
        for i in 0..n {
            pair_numbers[i][i] = self.number_sq;
            cross[i][i] = Complex64::new(self.number, 0.0);
        }
        ObservableSet {
            n_modes: n,
            cross,
            numbers: vec![self.number; n],
            pair_numbers,
            collective: Vec::new(),
        }
    }
}

/// Closed-form moment set of the uniform thermal W-like state, in the same
/// shape [`observables`] produces for an exact density operator.
pub fn wlike_analytic(n: usize, n_th: f64, kind: Kind) -> Result<ObservableSet> {
    Ok(wlike_closed_forms(n, n_th, kind)?.to_observable_set())
}

/// Overlap `⟨W_c|ρ|W_c⟩`; free-function form of
/// [`DensityOperator::fidelity_w`].
pub fn fidelity_w(rho: &DensityOperator, coeffs: &ModeCoefficients) -> Result<f64> {
    rho.fidelity_w(coeffs)
}

/// Diagonal of the number operator `n_i` in the basis ordering.
pub fn number_diagonal(spec: &SystemSpec, i: usize) -> DVector<f64> {
    let basis = spec.basis();
    DVector::from_iterator(
        basis.dim(),
        (0..basis.dim()).map(|idx| basis.occ0(idx, i - 1) as f64),
    )
}

/// Diagonal of the pair operator `n_i n_j` in the basis ordering.
pub fn pair_number_diagonal(spec: &SystemSpec, i: usize, j: usize) -> DVector<f64> {
    let basis = spec.basis();
    DVector::from_iterator(
        basis.dim(),
        (0..basis.dim())
            .map(|idx| (basis.occ0(idx, i - 1) * basis.occ0(idx, j - 1)) as f64),
    )
}

/// Dense matrix of the collective number operator `n_C = b_C† b_C` for the
/// subset weighted by `coeffs` (restricted and renormalized).
pub fn collective_number_matrix(
    spec: &SystemSpec,
    subset: &Combination,
    coeffs: &ModeCoefficients,
) -> Result<DMatrix<Complex64>> {
    if coeffs.len() != spec.n_modes() {
        return Err(Error::Validation(format!(
            "coefficients cover {} modes, spec has {}",
            coeffs.len(),
            spec.n_modes()
        )));
    }
    let w = coeffs.restrict(subset)?;
    let basis = spec.basis();
    let dim = basis.dim();
    // Build A with A[I,J] = ⟨I|b_C|J⟩, then n_C = A† A.
    let mut a = DMatrix::<Complex64>::zeros(dim, dim);
    for (k, &mode) in subset.members().iter().enumerate() {
        let stride = basis.stride0(mode - 1);
        for col in 0..dim {
            let n = basis.occ0(col, mode - 1);
            if n >= 1 {
                a[(col - stride, col)] += w[k] * (n as f64).sqrt();
            }
        }
    }
    Ok(a.adjoint() * a)
}

/// Declarative description of a prepared state, deserialized from JSON.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    /// Number of modes.
    pub n_modes: usize,
    /// Mode kind.
    pub kind: Kind,
    /// Thermal occupation of the base state.
    pub n_th: f64,
    /// Per-mode dimension; omitted means adaptive from `n_th` and the tail
    /// tolerance (two-level modes always use 2).
    #[serde(default)]
    pub cutoff: Option<usize>,
    /// Addition coefficients; omitted means uniform.
    #[serde(default)]
    pub coefficients: Option<Vec<(f64, f64)>>,
    /// How the particle is added, if at all.
    #[serde(default)]
    pub preparation: Preparation,
}

/// Particle-addition step of a [`StateSpec`].
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Preparation {
    /// Leave the thermal base state as is.
    #[default]
    None,
    /// Coherent addition across all modes.
    NonlocalAdd,
    /// Addition confined to the blocks of the given structure (1-based
    /// mode lists).
    SemilocalAdd(Vec<Vec<usize>>),
}

/// A [`StateSpec`] realized into concrete operators.
#[derive(Debug, Clone)]
pub struct RealizedState {
    /// Validated system layout.
    pub spec: SystemSpec,
    /// Thermal base state before any addition.
    pub base: DensityOperator,
    /// Prepared state after the requested addition.
    pub state: DensityOperator,
    /// Addition coefficients in use.
    pub coeffs: ModeCoefficients,
    /// Truncation leakage of the addition (zero when no addition ran).
    pub leakage: f64,
    /// Structure of a semilocal addition, when one ran.
    pub structure: Option<Structure>,
    /// Block probabilities of a semilocal addition.
    pub blocks: Vec<BlockWeight>,
    /// Blocks dropped for vanishing weight in a semilocal addition.
    pub dropped: Vec<Combination>,
    /// Thermal weight discarded by the truncation of the base state.
    pub tail_mass: f64,
    /// Set when `tail_mass` exceeds the configured tail tolerance.
    pub tail_warning: bool,
}

impl StateSpec {
    /// Parse from a JSON string.
    pub fn parse(json: &str) -> Result<Self> {
        serde_json::from_str(json)
            .map_err(|e| Error::Validation(format!("state description is invalid: {e}")))
    }

    /// Build the described operators; `tail` feeds [`adaptive_cutoff`] when
    /// no explicit cutoff is given.
    pub fn realize(&self, tail: f64) -> Result<RealizedState> {
        let cutoff = match (self.kind, self.cutoff) {
            (Kind::TwoLevel, None) => 2,
            (Kind::Bosonic, None) => adaptive_cutoff(self.n_th, tail)?,
            (_, Some(c)) => c,
        };
        let spec = SystemSpec::new(self.n_modes, self.kind, cutoff)?;
        let base = build_thermal(&spec, self.n_th)?;
        let tail_mass = thermal_tail_mass(&spec, self.n_th)?;
        let tail_warning = tail_mass > tail;
        let coeffs = match &self.coefficients {
            None => ModeCoefficients::uniform(self.n_modes)?,
            Some(vals) => {
                if vals.len() != self.n_modes {
                    return Err(Error::Validation(format!(
                        "{} coefficients given for {} modes",
                        vals.len(),
                        self.n_modes
                    )));
                }
                ModeCoefficients::new(
                    vals.iter().map(|&(re, im)| Complex64::new(re, im)).collect(),
                )?
            }
        };
        match &self.preparation {
            Preparation::None => Ok(RealizedState {
                spec,
                state: base.clone(),
                base,
                coeffs,
                leakage: 0.0,
                structure: None,
                blocks: Vec::new(),
                dropped: Vec::new(),
                tail_mass,
                tail_warning,
            }),
            Preparation::NonlocalAdd => {
                let added = add_particle_nonlocal(&base, &coeffs)?;
                Ok(RealizedState {
                    spec,
                    state: added.state,
                    base,
                    coeffs,
                    leakage: added.leakage,
                    structure: None,
                    blocks: Vec::new(),
                    dropped: Vec::new(),
                    tail_mass,
                    tail_warning,
                })
            }
            Preparation::SemilocalAdd(blocks) => {
                let structure = Structure::from_blocks(blocks, self.n_modes)?;
                let added = add_particle_semilocal(&base, &structure, &coeffs)?;
                Ok(RealizedState {
                    spec,
                    state: added.state,
                    base,
                    coeffs,
                    leakage: added.leakage,
                    structure: Some(structure),
                    blocks: added.blocks,
                    dropped: added.dropped,
                    tail_mass,
                    tail_warning,
                })
            }
        }
    }
}
