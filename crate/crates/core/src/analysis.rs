//! Feasibility arithmetic and parameter sweeps.
//!
//! The holding phase is the window between commit and unveil during which
//! the receiver stores the photons unmeasured. Schemes that secure
//! commitments through signaling constraints tie that window to the
//! separation `d` between agents — at best `d / 2c` — while this protocol's
//! window is set by optical storage alone and is independent of distance.
//! [`comparison_table`] puts the numbers side by side;
//! [`concealment_sweep`] and [`acceptance_sweep`] trace how the security
//! and completeness figures move with the protocol parameters. Table
//! writers emit a CSV plus a mirrored JSON-lines `.records` file, both
//! reproducible byte-for-byte from `(spec, seed)`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{bob_discrimination_attack, AdversaryError, CheatReport};
use crate::protocol::{run_protocol, ProtocolError, ProtocolParams, Verdict};
use crate::rng::stream_rng;
use crate::theory::Bit;
use crate::timebin::TimeTick;

/// Speed of light in vacuum, km/s.
pub const SPEED_OF_LIGHT_KM_S: f64 = 299_792.458;

/// Group velocity of 1550 nm light in standard single-mode fiber
/// (group index about 1.47), km/s.
pub const FIBER_GROUP_VELOCITY_KM_S: f64 = 2.04e5;

/// Storage offered by commercial optical delay lines, seconds. A vendor
/// figure with no derivable parameters; carried as a constant.
pub const COMMERCIAL_DELAY_S: f64 = 1.0e-3;

/// Holding time measured by the fastest published signaling-constraint
/// commitment experiment, seconds.
pub const QBC82_HOLDING_S: f64 = 30.0e-6;

/// Agent separation, km, at which the distance-bounded scheme reaches its
/// headline holding time.
pub const QBC83_DISTANCE_KM: f64 = 9354.0;

/// A metropolitan-scale separation, km, for the same distance-bounded
/// scheme.
pub const QBC83_SHORT_DISTANCE_KM: f64 = 10.0;

/// Fiber length, km, of the storage loop assumed for this protocol.
pub const STORAGE_FIBER_KM: f64 = 150.0;

/// Errors from feasibility arithmetic, sweeps, and table emission.
#[derive(Debug, Error)]
pub enum AnalysisError {
    /// Distances and lengths must be strictly positive.
    #[error("distance must be positive, got {0} km")]
    NonPositiveDistance(f64),
    /// Propagation velocity must be positive and at most vacuum c.
    #[error("velocity must be in (0, {SPEED_OF_LIGHT_KM_S}] km/s, got {0}")]
    InvalidVelocity(f64),
    /// A sweep was handed to an operation for a different variable.
    #[error("sweep variable mismatch: expected {expected}, got {got}")]
    WrongVariable {
        expected: SweepVariable,
        got: SweepVariable,
    },
    /// A sweep needs at least one value.
    #[error("sweep values must be non-empty")]
    EmptyValues,
    /// A sweep needs at least one trial per point.
    #[error("sweep trials must be at least 1")]
    ZeroTrials,
    /// Counting variables (`n`, `s`) only take whole-number values.
    #[error("sweep value {0} for variable {1} is not a whole number")]
    NonIntegerValue(f64, SweepVariable),
    /// A swept value fell outside its variable's domain.
    #[error("sweep value {0} out of range for variable {1}")]
    ValueOutOfRange(f64, SweepVariable),
    /// A swept point produced unusable protocol parameters.
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    /// An attack evaluation inside a sweep failed.
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    /// Table emission failed at the filesystem.
    #[error("table emission failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Longest holding time a scheme that stakes security on signal travel
/// between agents separated by `distance_km` can offer: `d / 2c`.
pub fn relativistic_holding_time(distance_km: f64) -> Result<f64, AnalysisError> {
    if distance_km.is_nan() || distance_km <= 0.0 {
        return Err(AnalysisError::NonPositiveDistance(distance_km));
    }
    Ok(distance_km / (2.0 * SPEED_OF_LIGHT_KM_S))
}

/// Holding time from parking the photons in a fiber loop of the given
/// length: `length / velocity`. The velocity is a parameter so both the
/// vacuum-c figure and the physical group-velocity figure can be produced;
/// it may not exceed vacuum c.
pub fn fiber_holding_time(length_km: f64, velocity_km_s: f64) -> Result<f64, AnalysisError> {
    if length_km.is_nan() || length_km <= 0.0 {
        return Err(AnalysisError::NonPositiveDistance(length_km));
    }
    if velocity_km_s.is_nan() || velocity_km_s <= 0.0 || velocity_km_s > SPEED_OF_LIGHT_KM_S {
        return Err(AnalysisError::InvalidVelocity(velocity_km_s));
    }
    Ok(length_km / velocity_km_s)
}

/// One row of the holding-time comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldingRow {
    /// Scheme label.
    pub scheme: String,
    /// Agent separation the holding time is tied to, if any. `None` for
    /// schemes whose holding time is distance-independent.
    pub distance_km: Option<f64>,
    /// Holding time in seconds.
    pub holding_s: f64,
}

/// The holding-time comparison: this protocol's storage-based figures
/// (500–1000 μs at any separation) against the distance-bounded
/// alternatives. The 150 km fiber row is quoted twice — once at vacuum c,
/// matching the usual back-of-envelope figure, and once at the group
/// velocity light actually travels at in fiber — so neither number is
/// silently "corrected" into the other.
pub fn comparison_table() -> Vec<HoldingRow> {
    let fiber_at_c = fiber_holding_time(STORAGE_FIBER_KM, SPEED_OF_LIGHT_KM_S)
        .expect("constant inputs are valid");
    let fiber_at_group = fiber_holding_time(STORAGE_FIBER_KM, FIBER_GROUP_VELOCITY_KM_S)
        .expect("constant inputs are valid");
    let far = relativistic_holding_time(QBC83_DISTANCE_KM).expect("constant distance is valid");
    let near =
        relativistic_holding_time(QBC83_SHORT_DISTANCE_KM).expect("constant distance is valid");
    vec![
        HoldingRow {
            scheme: "this work (150 km fiber at vacuum c)".into(),
            distance_km: None,
            holding_s: fiber_at_c,
        },
        HoldingRow {
            scheme: "this work (150 km fiber at group velocity)".into(),
            distance_km: None,
            holding_s: fiber_at_group,
        },
        HoldingRow {
            scheme: "this work (commercial delay line)".into(),
            distance_km: None,
            holding_s: COMMERCIAL_DELAY_S,
        },
        HoldingRow {
            scheme: "qbc82".into(),
            distance_km: None,
            holding_s: QBC82_HOLDING_S,
        },
        HoldingRow {
            scheme: "qbc83 @ 9354 km".into(),
            distance_km: Some(QBC83_DISTANCE_KM),
            holding_s: far,
        },
        HoldingRow {
            scheme: "qbc83 @ 10 km".into(),
            distance_km: Some(QBC83_SHORT_DISTANCE_KM),
            holding_s: near,
        },
    ]
}

/// Which protocol parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVariable {
    /// Encoding dimension `n`.
    N,
    /// Round count `s`.
    S,
    /// Total error rate `epsilon`.
    Epsilon,
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepVariable::N => "n",
            SweepVariable::S => "s",
            SweepVariable::Epsilon => "epsilon",
        })
    }
}

impl FromStr for SweepVariable {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "n" => Ok(SweepVariable::N),
            "s" => Ok(SweepVariable::S),
            "epsilon" => Ok(SweepVariable::Epsilon),
            other => Err(format!("unknown sweep variable {other:?} (expected n, s, or epsilon)")),
        }
    }
}

/// A one-dimensional parameter sweep: hold `base` fixed, vary one field
/// over `values`, run `trials` seeded sessions per point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// The varied parameter.
    pub variable: SweepVariable,
    /// The points to evaluate, in output order.
    pub values: Vec<f64>,
    /// Every non-varied parameter comes from here. Send times are
    /// re-derived per point (varying `n` moves the largest slot delay, so
    /// a fixed layout cannot be carried across points).
    pub base: ProtocolParams,
    /// Holding delay used for protocol runs.
    pub tau_hold: TimeTick,
    /// Sessions per sweep point.
    pub trials: usize,
    /// Master seed; point `p`, trial `t` derives its session seed from
    /// stream `p * trials + t`.
    pub seed: u64,
}

impl SweepSpec {
    /// Checks the sweep's own shape (point values are checked per
    /// operation, since domains differ by variable).
    pub fn validate(&self) -> Result<(), AnalysisError> {
        if self.values.is_empty() {
            return Err(AnalysisError::EmptyValues);
        }
        if self.trials == 0 {
            return Err(AnalysisError::ZeroTrials);
        }
        Ok(())
    }

    /// The base parameters with the swept variable set to `value`. Counting
    /// variables must be whole numbers; epsilon must lie in [0, 1).
    pub fn params_at(&self, value: f64) -> Result<ProtocolParams, AnalysisError> {
        let mut rounds = self.base.rounds;
        let mut dim = self.base.dim;
        let mut flip = self.base.epsilon_flip;
        let mut loss = self.base.epsilon_loss;
        match self.variable {
            SweepVariable::N => dim = self.whole(value)?,
            SweepVariable::S => rounds = self.whole(value)?,
            SweepVariable::Epsilon => {
                if !(0.0..1.0).contains(&value) {
                    return Err(AnalysisError::ValueOutOfRange(value, self.variable));
                }
                flip = value / 2.0;
                loss = value / 2.0;
            }
        }
        let params = ProtocolParams::new(
            rounds,
            dim,
            self.base.slot_spacing,
            0.0,
            self.base.accept_z,
            self.base.seed,
        )?
        .with_error_rates(flip, loss)?;
        Ok(params)
    }

    fn whole(&self, value: f64) -> Result<usize, AnalysisError> {
        if value.fract() != 0.0 || !value.is_finite() {
            return Err(AnalysisError::NonIntegerValue(value, self.variable));
        }
        if !(0.0..=u32::MAX as f64).contains(&value) {
            return Err(AnalysisError::ValueOutOfRange(value, self.variable));
        }
        Ok(value as usize)
    }
}

/// One row of a concealment sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcealmentRow {
    /// Encoding dimension.
    pub n: usize,
    /// Trace distance between the two bit ensembles.
    pub trace_distance: f64,
    /// The receiver's best early-guess probability.
    pub helstrom: f64,
}

/// Evaluates the receiver's discrimination attack at each swept dimension.
/// Only the `n` variable makes sense here; trials are irrelevant (the
/// figures are closed-form, not sampled).
pub fn concealment_sweep(spec: &SweepSpec) -> Result<Vec<ConcealmentRow>, AnalysisError> {
    spec.validate()?;
    if spec.variable != SweepVariable::N {
        return Err(AnalysisError::WrongVariable {
            expected: SweepVariable::N,
            got: spec.variable,
        });
    }
    let mut rows = Vec::with_capacity(spec.values.len());
    for &value in &spec.values {
        let n = spec.whole(value)?;
        let metrics = bob_discrimination_attack(n)?;
        rows.push(ConcealmentRow {
            n,
            trace_distance: metrics.trace_distance,
            helstrom: metrics.helstrom,
        });
    }
    Ok(rows)
}

/// One row of an acceptance sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRow {
    /// The varied parameter's name.
    pub variable: String,
    /// The swept value at this point.
    pub value: f64,
    /// Sessions run at this point.
    pub trials: usize,
    /// Sessions whose verdict was Accepted.
    pub accepted: usize,
    /// `accepted / trials`.
    pub acceptance_rate: f64,
}

/// Runs honest seeded sessions at each sweep point and tabulates how often
/// the receiver accepts. This is the Monte Carlo companion to
/// [`concealment_sweep`]: it exercises the full commit/hold/unveil
/// pipeline, so any variable of [`SweepSpec`] may be swept.
pub fn acceptance_sweep(spec: &SweepSpec) -> Result<Vec<AcceptanceRow>, AnalysisError> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.values.len());
    for (point, &value) in spec.values.iter().enumerate() {
        let mut params = spec.params_at(value)?;
        params.validate()?;
        let mut accepted = 0usize;
        for trial in 0..spec.trials {
            let stream = (point * spec.trials + trial) as u64;
            params.seed = stream_rng(spec.seed, stream).random();
            let transcript = run_protocol(&params, Bit::Zero, Bit::Zero, spec.tau_hold);
            if transcript.verdict == Verdict::Accepted {
                accepted += 1;
            }
        }
        rows.push(AcceptanceRow {
            variable: spec.variable.to_string(),
            value,
            trials: spec.trials,
            accepted,
            acceptance_rate: accepted as f64 / spec.trials as f64,
        });
    }
    Ok(rows)
}

/// One row of a binding sweep: the optimizer's best cheat at dimension `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingRow {
    /// Encoding dimension.
    pub n: usize,
    /// Best found success steering toward unveiling 0.
    pub p0: f64,
    /// Best found success steering toward unveiling 1.
    pub p1: f64,
    /// Average cheat figure of merit.
    pub p_avg: f64,
}

impl BindingRow {
    /// Flattens an optimizer report into a table row.
    pub fn from_report(n: usize, report: &CheatReport) -> Self {
        BindingRow {
            n,
            p0: report.p0,
            p1: report.p1,
            p_avg: report.p_avg,
        }
    }
}

/// Writes `concealment.csv` (header `n,trace_distance,helstrom`) plus its
/// `.records` mirror into `dir`; returns the CSV path.
pub fn write_concealment_table(
    dir: &Path,
    rows: &[ConcealmentRow],
) -> Result<PathBuf, AnalysisError> {
    write_table(dir, "concealment.csv", "n,trace_distance,helstrom", rows, |r| {
        format!("{},{},{}", r.n, r.trace_distance, r.helstrom)
    })
}

/// Writes `binding.csv` (header `n,p0,p1,p_avg`) plus its `.records`
/// mirror into `dir`; returns the CSV path.
pub fn write_binding_table(dir: &Path, rows: &[BindingRow]) -> Result<PathBuf, AnalysisError> {
    write_table(dir, "binding.csv", "n,p0,p1,p_avg", rows, |r| {
        format!("{},{},{},{}", r.n, r.p0, r.p1, r.p_avg)
    })
}

/// Writes `holding.csv` (header `scheme,distance_km,holding_s`) plus its
/// `.records` mirror into `dir`; returns the CSV path.
pub fn write_holding_table(dir: &Path, rows: &[HoldingRow]) -> Result<PathBuf, AnalysisError> {
    write_table(dir, "holding.csv", "scheme,distance_km,holding_s", rows, |r| {
        let distance = r.distance_km.map(|d| d.to_string()).unwrap_or_default();
        format!("{},{},{}", csv_field(&r.scheme), distance, r.holding_s)
    })
}

/// Writes `acceptance.csv` (header `variable,value,trials,accepted,acceptance_rate`)
/// plus its `.records` mirror into `dir`; returns the CSV path.
pub fn write_acceptance_table(
    dir: &Path,
    rows: &[AcceptanceRow],
) -> Result<PathBuf, AnalysisError> {
    write_table(
        dir,
        "acceptance.csv",
        "variable,value,trials,accepted,acceptance_rate",
        rows,
        |r| {
            format!(
                "{},{},{},{},{}",
                csv_field(&r.variable),
                r.value,
                r.trials,
                r.accepted,
                r.acceptance_rate
            )
        },
    )
}

/// Quotes a CSV text field only when it needs it (commas, quotes, or line
/// breaks), per the usual CSV conventions.
fn csv_field(text: &str) -> String {
    if text.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

/// Emits a CSV with the given header plus a JSON-lines `.records` mirror
/// (same rows, keys sorted, shortest round-trip floats). Numbers in the
/// CSV use shortest round-trip formatting too, so both files reproduce the
/// in-memory values bit-exactly.
fn write_table<T: Serialize>(
    dir: &Path,
    name: &str,
    header: &str,
    rows: &[T],
    csv_line: impl Fn(&T) -> String,
) -> Result<PathBuf, AnalysisError> {
    fs::create_dir_all(dir)?;
    let mut csv = String::with_capacity(64 * (rows.len() + 1));
    csv.push_str(header);
    csv.push('\n');
    let mut records = String::with_capacity(64 * rows.len());
    for row in rows {
        csv.push_str(&csv_line(row));
        csv.push('\n');
        let value = serde_json::to_value(row).expect("rows are plain data");
        records.push_str(&serde_json::to_string(&value).expect("values always render"));
        records.push('\n');
    }
    let csv_path = dir.join(name);
    fs::write(&csv_path, csv)?;
    fs::write(csv_path.with_extension("records"), records)?;
    Ok(csv_path)
}
