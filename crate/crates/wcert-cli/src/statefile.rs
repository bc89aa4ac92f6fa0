//! Declarative state description files.
//!
//! A state file is a JSON object naming the register, the thermal
//! occupation, and the preparation applied on top of the thermal state:
//!
//! ```json
//! {
//!   "n_modes": 3,
//!   "kind": "bosonic",
//!   "n_th": 0.0,
//!   "cutoff": 4,
//!   "preparation": "w_like",
//!   "coefficients": [
//!     { "magnitude": 1.0, "phase": 0.0 },
//!     { "magnitude": 1.0, "phase": 0.0 },
//!     { "magnitude": 1.0, "phase": 0.0 }
//!   ]
//! }
//! ```
//!
//! `cutoff` is the per-mode dimension; omitting it selects the adaptive
//! cutoff from `n_th` and the `--cutoff-tail` target (two-level modes are
//! fixed at 2). `coefficients` are the collective-mode amplitudes, one per
//! mode, normalized on load; omitting them selects the uniform vector.
//! `preparation` is `"thermal"`, `"w_like"` for a coherent single-particle
//! addition across all modes, or `{"semilocal": {"blocks": [[1, 2], [3]]}}`
//! for independent additions inside the blocks of a partition.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use wcert_core::hilbert::{
    adaptive_cutoff, add_particle_nonlocal, add_particle_semilocal, build_thermal,
    thermal_tail_mass, DensityOperator, Kind, ModeCoefficients, SystemSpec,
};
use wcert_core::partitions::Structure;

use crate::Failure;

/// Parsed state description.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFile {
    /// Number of modes.
    pub n_modes: usize,
    /// Mode kind, `"bosonic"` or `"two_level"`.
    pub kind: Kind,
    /// Thermal occupation of every mode before the preparation.
    pub n_th: f64,
    /// Per-mode dimension; adaptive when absent.
    #[serde(default)]
    pub cutoff: Option<usize>,
    /// Preparation applied to the thermal state.
    pub preparation: Preparation,
    /// Collective-mode amplitudes, one per mode; uniform when absent.
    #[serde(default)]
    pub coefficients: Option<Vec<CoefficientSpec>>,
}

/// Preparation applied on top of the thermal product state.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preparation {
    /// No particle added; the state is the thermal product.
    Thermal,
    /// One particle added coherently across all modes.
    WLike,
    /// One particle added independently inside each block of a partition;
    /// blocks are 1-based mode lists covering every mode exactly once.
    Semilocal { blocks: Vec<Vec<usize>> },
}

/// One collective-mode amplitude in polar form.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    /// Amplitude magnitude; the vector is normalized on load.
    pub magnitude: f64,
    /// Amplitude phase in radians.
    #[serde(default)]
    pub phase: f64,
}

/// Resolved parameters echoed into every report built from a state file.
#[derive(Debug, Clone, Serialize)]
pub struct StateEcho {
    pub n_modes: usize,
    pub kind: Kind,
    pub cutoff: usize,
    pub n_th: f64,
    pub preparation: String,
    /// Weighted thermal probability mass above the cutoff.
    pub thermal_tail: f64,
    /// Probability mass dropped while renormalizing the added particle.
    pub addition_leakage: f64,
}

/// A state built from a description file, with the thermal base kept for
/// witnesses that compare against it.
pub struct BuiltState {
    pub echo: StateEcho,
    pub base: DensityOperator,
    pub state: DensityOperator,
    pub coeffs: ModeCoefficients,
}

/// Read and parse a state description file. Schema violations surface the
/// offending field with its line and column.
pub fn load(path: &Path) -> Result<StateFile, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("state file {} is invalid: {e}", path.display())))
}

/// Build the described state. The cutoff resolves to the explicit value,
/// the adaptive rule for bosonic modes, or 2 for two-level modes.
pub fn build(file: &StateFile, cutoff_tail: f64) -> Result<BuiltState, Failure> {
    let cutoff = match (file.kind, file.cutoff) {
        (_, Some(c)) => c,
        (Kind::Bosonic, None) => adaptive_cutoff(file.n_th, cutoff_tail)?,
        (Kind::TwoLevel, None) => 2,
    };
    let spec = SystemSpec::new(file.n_modes, file.kind, cutoff)?;
    let thermal_tail = thermal_tail_mass(&spec, file.n_th)?;
    let base = build_thermal(&spec, file.n_th)?;
    let coeffs = match &file.coefficients {
        None => ModeCoefficients::uniform(file.n_modes)?,
        Some(list) => {
            if list.len() != file.n_modes {
                return Err(Failure::Usage(format!(
                    "state file lists {} coefficients for {} modes",
                    list.len(),
                    file.n_modes
                )));
            }
            let values = list
                .iter()
                .map(|c| Complex64::from_polar(c.magnitude, c.phase))
                .collect();
            ModeCoefficients::new(values)?
        }
    };
    let (state, addition_leakage, preparation) = match &file.preparation {
        Preparation::Thermal => (base.clone(), 0.0, "thermal".to_string()),
        Preparation::WLike => {
            let added = add_particle_nonlocal(&base, &coeffs)?;
            (added.state, added.leakage, "w_like".to_string())
        }
        Preparation::Semilocal { blocks } => {
            let structure = Structure::from_blocks(blocks, file.n_modes)?;
            let added = add_particle_semilocal(&base, &structure, &coeffs)?;
            let label = format!("semilocal {}", structure.render());
            (added.state, added.leakage, label)
        }
    };
    Ok(BuiltState {
        echo: StateEcho {
            n_modes: file.n_modes,
            kind: file.kind,
            cutoff,
            n_th: file.n_th,
            preparation,
            thermal_tail,
            addition_leakage,
        },
        base,
        state,
        coeffs,
    })
}
