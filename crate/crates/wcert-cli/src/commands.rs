//! Subcommand implementations. Each returns the fully rendered output
//! text; writing it to a file or stdout happens in one place afterwards.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use wcert_core::hilbert::Kind;
use wcert_core::partitions::{
    enumerate_structures, is_irreducible, n_sep_max, n_sep_max_with_signature, ClassSignature,
};
use wcert_core::photostat::{
    estimate_nonlocality_mc, estimate_witness_mc, exact_count_set, optical_witness, CountSet,
    McConfig, PhaseConfig, SidebandGains,
};
use wcert_core::roots::BracketResult;
use wcert_core::{entanglement, nonlocality};

use crate::render::{fmt3, fmt6, json_text, round6, Align, Dataset, Format};
use crate::statefile::{self, BuiltState, Preparation, StateEcho};
use crate::{
    Failure, FigureId, GlobalOpts, McArgs, McTarget, NonlocalityArgs, StructuresArgs, TableId,
    WitnessArgs, WitnessMode,
};

/// Mode count covered by the tables, matching their published extent.
const TABLE_MAX_N: usize = 7;
/// Mode count covered by the threshold curve datasets.
const CURVE_MAX_N: usize = 30;
/// Search ceiling for the largest certifiable mode count.
const CAPACITY_N_CAP: usize = 64;

/// Squared gains used for optical translation when none are given.
const DEFAULT_G_S_SQ: f64 = 2.0;
const DEFAULT_G_AS_SQ: f64 = 1.0;

fn root_of(result: BracketResult, n: usize, m: usize) -> Result<f64, Failure> {
    match result {
        BracketResult::Root(x) => Ok(x),
        BracketResult::NoSignChange => Err(Failure::Usage(format!(
            "no threshold exists at N={n}, M={m}: the margin never changes sign"
        ))),
    }
}

/// Report subcommands emit JSON; the nested reports have no faithful
/// tabular encoding.
fn require_json(format: Option<Format>) -> Result<(), Failure> {
    match format {
        None | Some(Format::Json) => Ok(()),
        Some(other) => Err(Failure::Usage(format!(
            "this subcommand emits a JSON report; drop --format or pass --format json, got --format {}",
            other.name()
        ))),
    }
}

#[derive(Serialize)]
struct TableRow {
    n: usize,
    m: usize,
    value: String,
    raw: f64,
}

#[derive(Serialize)]
struct TableDoc {
    table: &'static str,
    rows: Vec<TableRow>,
}

/// Pair-count and threshold tables over `2 <= N <= 7`, `1 <= M < N`.
pub fn tables(which: TableId, g: &GlobalOpts) -> Result<String, Failure> {
    let mut rows = Vec::new();
    let mut json_rows = Vec::new();
    for n in 2..=TABLE_MAX_N {
        for m in 1..n {
            let (value, display) = match which {
                TableId::One => {
                    let pairs = n_sep_max(n, m)?;
                    (pairs as f64, pairs.to_string())
                }
                TableId::Two => {
                    let v = root_of(
                        entanglement::threshold_nth(n, m, Kind::Bosonic, g.tol)?,
                        n,
                        m,
                    )?;
                    (v, fmt3(v))
                }
                TableId::Three => {
                    let v = root_of(
                        nonlocality::threshold_nth(n, m, Kind::Bosonic, g.tol)?,
                        n,
                        m,
                    )?;
                    (v, fmt3(v))
                }
            };
            rows.push(vec![n.to_string(), m.to_string(), display.clone(), fmt6(value)]);
            json_rows.push(TableRow {
                n,
                m,
                value: display,
                raw: round6(value),
            });
        }
    }
    let doc = TableDoc {
        table: which.label(),
        rows: json_rows,
    };
    Dataset {
        headers: vec!["n", "m", "value", "raw"],
        aligns: vec![Align::Right; 4],
        rows,
        json: serde_json::to_value(doc).expect("table rows serialize"),
    }
    .render(g.format)
}

#[derive(Serialize)]
struct CurveRow {
    n: usize,
    bosonic: f64,
    two_level: f64,
}

#[derive(Serialize)]
struct CurveDoc {
    figure: &'static str,
    quantity: &'static str,
    max_block: &'static str,
    rows: Vec<CurveRow>,
}

#[derive(Serialize)]
struct CapacityRow {
    n_th: f64,
    entanglement_bosonic: usize,
    entanglement_two_level: usize,
    nonlocality_bosonic: usize,
    nonlocality_two_level: usize,
}

#[derive(Serialize)]
struct CapacityDoc {
    figure: &'static str,
    n_cap: usize,
    rows: Vec<CapacityRow>,
}

/// Figure datasets: saturation thresholds over N for figures 3 and 4,
/// largest certifiable N over a thermal occupation grid for figure 5.
pub fn figures(which: FigureId, g: &GlobalOpts) -> Result<String, Failure> {
    match which {
        FigureId::Three => threshold_curves(
            "3",
            "entanglement threshold",
            entanglement::threshold_nth,
            g,
        ),
        FigureId::Four => threshold_curves(
            "4",
            "nonlocality threshold",
            nonlocality::threshold_nth,
            g,
        ),
        FigureId::Five => capacity_grid(g),
    }
}

type ThresholdFn =
    fn(usize, usize, Kind, f64) -> Result<BracketResult, wcert_core::Error>;

fn threshold_curves(
    figure: &'static str,
    quantity: &'static str,
    threshold: ThresholdFn,
    g: &GlobalOpts,
) -> Result<String, Failure> {
    let mut rows = Vec::new();
    let mut json_rows = Vec::new();
    for n in 2..=CURVE_MAX_N {
        let m = n - 1;
        let bosonic = root_of(threshold(n, m, Kind::Bosonic, g.tol)?, n, m)?;
        let two_level = root_of(threshold(n, m, Kind::TwoLevel, g.tol)?, n, m)?;
        rows.push(vec![
            n.to_string(),
            fmt3(bosonic),
            fmt6(bosonic),
            fmt3(two_level),
            fmt6(two_level),
        ]);
        json_rows.push(CurveRow {
            n,
            bosonic: round6(bosonic),
            two_level: round6(two_level),
        });
    }
    let doc = CurveDoc {
        figure,
        quantity,
        max_block: "n-1",
        rows: json_rows,
    };
    Dataset {
        headers: vec!["n", "bosonic", "bosonic_raw", "two_level", "two_level_raw"],
        aligns: vec![Align::Right; 5],
        rows,
        json: serde_json::to_value(doc).expect("curve rows serialize"),
    }
    .render(g.format)
}

/// Thermal occupation grid for the capacity dataset: nine evenly spaced
/// points in each of three decades plus representative experimental
/// occupations, sorted ascending and distinct at three decimals.
fn occupation_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = Vec::new();
    for k in 1..=9 {
        grid.push(k as f64 * 1e-3);
    }
    for k in 1..=9 {
        grid.push(k as f64 * 1e-2);
    }
    for k in 1..=10 {
        grid.push(k as f64 * 1e-1);
    }
    grid.extend([0.021, 0.14, 0.23, 0.83]);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Two-level capacity on the grid. Occupation at or above 1 leaves no
/// valid two-level thermal state, so no system size can be certified.
fn two_level_capacity(
    n_th: f64,
    capacity: fn(f64, Kind, usize) -> Result<usize, wcert_core::Error>,
) -> Result<usize, Failure> {
    if n_th >= 1.0 {
        return Ok(0);
    }
    Ok(capacity(n_th, Kind::TwoLevel, CAPACITY_N_CAP)?)
}

fn capacity_grid(g: &GlobalOpts) -> Result<String, Failure> {
    let mut rows = Vec::new();
    let mut json_rows = Vec::new();
    for n_th in occupation_grid() {
        let eb = entanglement::max_genuine_n(n_th, Kind::Bosonic, CAPACITY_N_CAP)?;
        let et = two_level_capacity(n_th, entanglement::max_genuine_n)?;
        let nb = nonlocality::max_nonlocal_n(n_th, Kind::Bosonic, CAPACITY_N_CAP)?;
        let nt = two_level_capacity(n_th, nonlocality::max_nonlocal_n)?;
        rows.push(vec![
            fmt3(n_th),
            fmt6(n_th),
            eb.to_string(),
            et.to_string(),
            nb.to_string(),
            nt.to_string(),
        ]);
        json_rows.push(CapacityRow {
            n_th: round6(n_th),
            entanglement_bosonic: eb,
            entanglement_two_level: et,
            nonlocality_bosonic: nb,
            nonlocality_two_level: nt,
        });
    }
    let doc = CapacityDoc {
        figure: "5",
        n_cap: CAPACITY_N_CAP,
        rows: json_rows,
    };
    Dataset {
        headers: vec![
            "n_th",
            "n_th_raw",
            "entanglement_bosonic",
            "entanglement_two_level",
            "nonlocality_bosonic",
            "nonlocality_two_level",
        ],
        aligns: vec![Align::Right; 6],
        rows,
        json: serde_json::to_value(doc).expect("capacity rows serialize"),
    }
    .render(g.format)
}

/// Symmetric interval at the claim z-score around the margin estimate.
#[derive(Serialize)]
struct ConfidenceInterval {
    z: f64,
    lo: f64,
    hi: f64,
}

fn interval(margin: f64, se: f64, z: f64) -> ConfidenceInterval {
    ConfidenceInterval {
        z,
        lo: margin - z * se,
        hi: margin + z * se,
    }
}

/// JSON envelope of the witness subcommand.
#[derive(Serialize)]
struct WitnessEnvelope<R: Serialize> {
    command: &'static str,
    mode: &'static str,
    max_block: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    state: Option<StateEcho>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gains: Option<SidebandGains>,
    report: R,
    /// Margin in oscillator units, `margin / G_AS²`; optical mode only.
    #[serde(skip_serializing_if = "Option::is_none")]
    phonon_margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    confidence_interval: Option<ConfidenceInterval>,
}

fn resolve_gains(args: &WitnessArgs) -> Result<SidebandGains, Failure> {
    Ok(SidebandGains::new(
        args.g_s_sq.unwrap_or(DEFAULT_G_S_SQ),
        args.g_as_sq.unwrap_or(DEFAULT_G_AS_SQ),
    )?)
}

/// Entanglement witness on a state file (exact, optical, or Monte Carlo)
/// or directly on a photocount file.
pub fn witness(args: &WitnessArgs, g: &GlobalOpts) -> Result<String, Failure> {
    require_json(g.format)?;
    if let Some(counts_path) = &args.counts {
        return witness_from_counts(counts_path, args);
    }
    let state_path = args.state.as_ref().expect("clap requires state or counts");
    let built = statefile::build(&statefile::load(state_path)?, g.cutoff_tail)?;
    match args.mode.unwrap_or(WitnessMode::Exact) {
        WitnessMode::Exact => {
            let report = entanglement::evaluate(&built.state, args.max_block)?;
            json_text(&WitnessEnvelope {
                command: "witness",
                mode: "exact",
                max_block: args.max_block,
                state: Some(built.echo),
                gains: None,
                report,
                phonon_margin: None,
                confidence_interval: None,
            })
        }
        WitnessMode::Optical => {
            let gains = resolve_gains(args)?;
            let counts = exact_count_set(&built.state, &gains, &PhaseConfig::default())?;
            let nsm = n_sep_max(built.echo.n_modes, args.max_block)?;
            let report = optical_witness(&counts, args.max_block, nsm)?;
            let phonon_margin = report.phonon_margin(&gains);
            json_text(&WitnessEnvelope {
                command: "witness",
                mode: "optical",
                max_block: args.max_block,
                state: Some(built.echo),
                gains: Some(gains),
                report,
                phonon_margin: Some(phonon_margin),
                confidence_interval: None,
            })
        }
        WitnessMode::Mc => {
            let cfg = McConfig {
                shots: g.shots,
                seed: g.seed,
                ..McConfig::default()
            };
            let report = estimate_witness_mc(&built.state, args.max_block, &cfg)?;
            let ci = interval(report.margin, report.margin_se, report.z_threshold);
            json_text(&WitnessEnvelope {
                command: "witness",
                mode: "mc",
                max_block: args.max_block,
                state: Some(built.echo),
                gains: None,
                report,
                phonon_margin: None,
                confidence_interval: Some(ci),
            })
        }
    }
}

fn witness_from_counts(path: &Path, args: &WitnessArgs) -> Result<String, Failure> {
    if let Some(mode) = args.mode {
        if mode != WitnessMode::Optical {
            return Err(Failure::Usage(
                "a photocount file is evaluated optically; drop --mode or pass --mode optical"
                    .into(),
            ));
        }
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Io(format!("cannot read {}: {e}", path.display())))?;
    let counts = CountSet::parse(&text)
        .map_err(|e| Failure::Usage(format!("count file {}: {e}", path.display())))?;
    let nsm = n_sep_max(counts.n_modes, args.max_block)?;
    let report = optical_witness(&counts, args.max_block, nsm)?;
    // The phonon-unit margin needs the gains; counts alone determine only
    // the photocount-side report.
    let gains = match (args.g_s_sq, args.g_as_sq) {
        (Some(s), Some(a)) => Some(SidebandGains::new(s, a)?),
        (None, None) => None,
        _ => {
            return Err(Failure::Usage(
                "give both --g-s-sq and --g-as-sq or neither".into(),
            ))
        }
    };
    let phonon_margin = gains.as_ref().map(|gn| report.phonon_margin(gn));
    json_text(&WitnessEnvelope {
        command: "witness",
        mode: "optical",
        max_block: args.max_block,
        state: None,
        gains,
        report,
        phonon_margin,
        confidence_interval: None,
    })
}

/// JSON envelope of the nonlocality subcommand.
#[derive(Serialize)]
struct NonlocalityEnvelope<R: Serialize> {
    command: &'static str,
    max_block: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    prep: Option<StateEcho>,
    #[serde(skip_serializing_if = "Option::is_none")]
    base: Option<StateEcho>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prepared: Option<StateEcho>,
    report: R,
}

fn build_prep(path: &Path, cutoff_tail: f64) -> Result<BuiltState, Failure> {
    let file = statefile::load(path)?;
    if matches!(file.preparation, Preparation::Thermal) {
        return Err(Failure::Usage(format!(
            "preparation file {} must add a particle; \"thermal\" leaves the conditioned state \
             equal to the base",
            path.display()
        )));
    }
    statefile::build(&file, cutoff_tail)
}

/// Nonlocality witness on a preparation file or an explicit state pair.
pub fn nonlocality(args: &NonlocalityArgs, g: &GlobalOpts) -> Result<String, Failure> {
    require_json(g.format)?;
    let (base, prepared, coeffs, prep_echo, base_echo, prepared_echo);
    if let Some(prep_path) = &args.prep {
        let built = build_prep(prep_path, g.cutoff_tail)?;
        base = built.base;
        prepared = built.state;
        coeffs = built.coeffs;
        prep_echo = Some(built.echo);
        base_echo = None;
        prepared_echo = None;
    } else {
        let base_path = args.base.as_ref().expect("clap requires base with prepared");
        let prepared_path = args.prepared.as_ref().expect("clap requires prepared with base");
        let b = statefile::build(&statefile::load(base_path)?, g.cutoff_tail)?;
        let p = statefile::build(&statefile::load(prepared_path)?, g.cutoff_tail)?;
        if b.state.spec() != p.state.spec() {
            return Err(Failure::Usage(
                "state files disagree on the system (mode count, kind, or cutoff)".into(),
            ));
        }
        base = b.state;
        prepared = p.state;
        coeffs = p.coeffs;
        prep_echo = None;
        base_echo = Some(b.echo);
        prepared_echo = Some(p.echo);
    }
    let report = nonlocality::evaluate(&nonlocality::NonlocalityInputs {
        prepared: &prepared,
        base: &base,
        coeffs: &coeffs,
        max_block: args.max_block,
    })?;
    json_text(&NonlocalityEnvelope {
        command: "nonlocality",
        max_block: args.max_block,
        prep: prep_echo,
        base: base_echo,
        prepared: prepared_echo,
        report,
    })
}

#[derive(Serialize)]
struct ClassRow {
    signature: Vec<usize>,
    blocks: usize,
    n_sep: usize,
    structures: usize,
    maximizer: bool,
}

#[derive(Serialize)]
struct StructuresDoc {
    n: usize,
    max_block: usize,
    n_sep_max: usize,
    classes: Vec<ClassRow>,
}

/// Irreducible block-structure classes with their separable pair counts.
pub fn structures(args: &StructuresArgs, g: &GlobalOpts) -> Result<String, Failure> {
    let all = enumerate_structures(args.n, args.max_block)?;
    // Classes keyed by signature; every structure of a class shares n_sep.
    let mut classes: BTreeMap<ClassSignature, (usize, usize)> = BTreeMap::new();
    for s in &all {
        let entry = classes.entry(s.signature()).or_insert((s.n_sep(), 0));
        entry.1 += 1;
    }
    let (max_value, _) = n_sep_max_with_signature(args.n, args.max_block)?;
    let mut list: Vec<(ClassSignature, usize, usize)> = classes
        .into_iter()
        .filter(|(sig, _)| is_irreducible(sig, args.max_block))
        .map(|(sig, (n_sep, count))| (sig, n_sep, count))
        .collect();
    // Largest blocks first; signatures sort descending within themselves.
    list.sort_by(|a, b| b.0.cmp(&a.0));
    let mut rows = Vec::new();
    let mut json_rows = Vec::new();
    for (sig, n_sep, count) in &list {
        let maximizer = *n_sep == max_value;
        rows.push(vec![
            sig.render(),
            sig.sizes().len().to_string(),
            n_sep.to_string(),
            fmt6(*n_sep as f64),
            count.to_string(),
            maximizer.to_string(),
        ]);
        json_rows.push(ClassRow {
            signature: sig.sizes().to_vec(),
            blocks: sig.sizes().len(),
            n_sep: *n_sep,
            structures: *count,
            maximizer,
        });
    }
    let doc = StructuresDoc {
        n: args.n,
        max_block: args.max_block,
        n_sep_max: max_value,
        classes: json_rows,
    };
    Dataset {
        headers: vec![
            "signature",
            "blocks",
            "n_sep",
            "n_sep_raw",
            "structures",
            "maximizer",
        ],
        aligns: vec![
            Align::Left,
            Align::Right,
            Align::Right,
            Align::Right,
            Align::Right,
            Align::Left,
        ],
        rows,
        json: serde_json::to_value(doc).expect("class rows serialize"),
    }
    .render(g.format)
}

/// JSON envelope of the mc subcommand.
#[derive(Serialize)]
struct McEnvelope<R: Serialize> {
    command: &'static str,
    target: &'static str,
    max_block: usize,
    state: StateEcho,
    report: R,
    confidence_interval: ConfidenceInterval,
}

/// Monte Carlo shot-noise estimates of either witness.
pub fn mc(args: &McArgs, g: &GlobalOpts) -> Result<String, Failure> {
    require_json(g.format)?;
    let cfg = McConfig {
        shots: g.shots,
        seed: g.seed,
        ..McConfig::default()
    };
    match &args.target {
        McTarget::Witness { state, max_block } => {
            let built = statefile::build(&statefile::load(state)?, g.cutoff_tail)?;
            let report = estimate_witness_mc(&built.state, *max_block, &cfg)?;
            let ci = interval(report.margin, report.margin_se, report.z_threshold);
            json_text(&McEnvelope {
                command: "mc",
                target: "witness",
                max_block: *max_block,
                state: built.echo,
                report,
                confidence_interval: ci,
            })
        }
        McTarget::Nonlocality { prep, max_block } => {
            let built = build_prep(prep, g.cutoff_tail)?;
            let report =
                estimate_nonlocality_mc(&built.state, &built.base, &built.coeffs, *max_block, &cfg)?;
            let ci = interval(report.margin, report.margin_se, report.z_threshold);
            json_text(&McEnvelope {
                command: "mc",
                target: "nonlocality",
                max_block: *max_block,
                state: built.echo,
                report,
                confidence_interval: ci,
            })
        }
    }
}
