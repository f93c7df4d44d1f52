//! Time-bin encoding of commitment states on a two-path interferometer.
//!
//! A single photon is split across two paths `X` and `Y`. Path `Y` can be
//! delayed by one of finitely many slot values, so a basis ket is a pair
//! (path, arrival tick). Honest parties only ever move amplitudes between
//! kets (delay lines relabel arrival times; they never change amplitudes),
//! so states built here stay bit-exact until the final recombining beam
//! splitter.
//!
//! Recombination convention: a ket on `X` and a ket on `Y` arriving at the
//! same tick interfere, with detector `D0` seeing the sum amplitude
//! `(x + y)/sqrt(2)` and detector `D1` the difference `(x - y)/sqrt(2)`.
//! A commitment to bit 0 (relative phase `+`) therefore clicks `D0`
//! deterministically once the delays cancel, and a commitment to bit 1
//! clicks `D1`.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::theory::{make_psi, Bit, TheoreticalState, TheoryError, NORM_TOL};

/// Discrete simulation time. Used both for instants (arrival and send
/// times) and durations (delays); one tick is the scheduling resolution.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct TimeTick(u64);

impl TimeTick {
    pub const ZERO: TimeTick = TimeTick(0);

    pub const fn new(ticks: u64) -> Self {
        TimeTick(ticks)
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    /// This tick scaled by an integer factor (e.g. the `i`-th multiple of a
    /// slot spacing).
    pub const fn times(self, factor: u64) -> Self {
        TimeTick(self.0 * factor)
    }

    /// Difference of two instants, `None` if `earlier` is in fact later.
    pub fn checked_sub(self, earlier: TimeTick) -> Option<TimeTick> {
        self.0.checked_sub(earlier.0).map(TimeTick)
    }
}

impl std::ops::Add for TimeTick {
    type Output = TimeTick;

    fn add(self, rhs: TimeTick) -> TimeTick {
        TimeTick(self.0 + rhs.0)
    }
}

impl std::fmt::Display for TimeTick {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The two interferometer paths. `X` is the reference (undelayed) path;
/// `Y` carries the committer's secret delay.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum PhotonPath {
    X,
    Y,
}

impl std::fmt::Display for PhotonPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PhotonPath::X => write!(f, "X"),
            PhotonPath::Y => write!(f, "Y"),
        }
    }
}

/// A single-photon basis state: which path, arriving at which tick.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct BasisKet {
    pub path: PhotonPath,
    pub time: TimeTick,
}

impl BasisKet {
    pub const fn new(path: PhotonPath, time: TimeTick) -> Self {
        BasisKet { path, time }
    }
}

/// The two detectors behind the recombining beam splitter. `D0` sits on the
/// constructive (`+`) port, `D1` on the destructive (`-`) port.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Detector {
    D0,
    D1,
}

impl Detector {
    /// The detector an honest unveiling of `bit` fires deterministically.
    pub fn for_bit(bit: Bit) -> Detector {
        match bit {
            Bit::Zero => Detector::D0,
            Bit::One => Detector::D1,
        }
    }
}

impl std::fmt::Display for Detector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Detector::D0 => write!(f, "D0"),
            Detector::D1 => write!(f, "D1"),
        }
    }
}

/// Errors from time-bin state manipulation and the encoding maps.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimeBinError {
    /// A state's squared norm deviates from 1 beyond [`NORM_TOL`].
    #[error("time-bin state is not normalized: squared norm {0}")]
    NotNormalized(f64),
    /// A ket cannot be expressed relative to the send time and slot table.
    #[error(
        "ket ({path}, {tick}) has no encoding relative to send time {send_time}: \
         expected (X, {send_time}) or (Y, {send_time} + slot)"
    )]
    KetOutsideEncoding {
        path: PhotonPath,
        tick: u64,
        send_time: u64,
    },
    /// An abstract state's dimension does not match the slot table.
    #[error("state dimension {state_dim} does not match slot table dimension {table_dim}")]
    DimensionMismatch { state_dim: usize, table_dim: usize },
    /// A slot table must hold at least one delay.
    #[error("slot table must contain at least one delay")]
    EmptySlotTable,
    /// Slot delays must be strictly increasing.
    #[error("slot delays must be strictly increasing and positive")]
    SlotsNotIncreasing,
    /// Uniform slot spacing must be a positive number of ticks.
    #[error("slot spacing must be at least one tick")]
    ZeroSlotSpacing,
    /// A 1-based slot index fell outside the table.
    #[error("slot index {index} out of range 1..={len}")]
    SlotIndexOutOfRange { index: usize, len: usize },
    /// The optical pipeline disagreed with the abstract model.
    #[error(
        "optical pipeline diverged from the abstract model at stage {stage} \
         (bit {bit}, slot index {index})"
    )]
    EquivalenceBroken {
        bit: Bit,
        index: usize,
        stage: &'static str,
    },
    /// An error surfaced from the abstract state layer.
    #[error(transparent)]
    Theory(#[from] TheoryError),
}

/// The committer's menu of allowed delays `T_1 < T_2 < ... < T_{n-1}`, all
/// positive. A table of length `n - 1` encodes an `n`-dimensional space
/// (index 0 is the undelayed component).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotTable {
    slots: Vec<TimeTick>,
}

impl SlotTable {
    /// Builds a table from explicit delays, which must be positive and
    /// strictly increasing.
    pub fn new(slots: Vec<TimeTick>) -> Result<Self, TimeBinError> {
        if slots.is_empty() {
            return Err(TimeBinError::EmptySlotTable);
        }
        if slots[0] == TimeTick::ZERO {
            return Err(TimeBinError::SlotsNotIncreasing);
        }
        if slots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TimeBinError::SlotsNotIncreasing);
        }
        Ok(SlotTable { slots })
    }

    /// The evenly spaced table `T_i = i * spacing` for `i = 1..n`, encoding
    /// an `n`-dimensional space.
    pub fn uniform(n: usize, spacing: TimeTick) -> Result<Self, TimeBinError> {
        if n < 2 {
            return Err(TimeBinError::EmptySlotTable);
        }
        if spacing == TimeTick::ZERO {
            return Err(TimeBinError::ZeroSlotSpacing);
        }
        Ok(SlotTable {
            slots: (1..n as u64).map(|i| spacing.times(i)).collect(),
        })
    }

    /// Number of delays (`n - 1`).
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Hilbert-space dimension `n` this table encodes.
    pub fn dim(&self) -> usize {
        self.slots.len() + 1
    }

    /// The largest delay `T_{n-1}`; an honest commitment never delays by
    /// more than this.
    pub fn tau_max(&self) -> TimeTick {
        *self.slots.last().expect("slot table is never empty")
    }

    /// All delays in increasing order.
    pub fn slots(&self) -> &[TimeTick] {
        &self.slots
    }

    /// The delay `T_index` for a 1-based slot index.
    pub fn delay_for_index(&self, index: usize) -> Result<TimeTick, TimeBinError> {
        if index == 0 || index > self.slots.len() {
            return Err(TimeBinError::SlotIndexOutOfRange {
                index,
                len: self.slots.len(),
            });
        }
        Ok(self.slots[index - 1])
    }

    /// The 1-based slot index of a delay, if the delay is in the table.
    pub fn index_of(&self, delay: TimeTick) -> Option<usize> {
        self.slots.binary_search(&delay).ok().map(|pos| pos + 1)
    }
}

/// A pure single-photon state over path/time basis kets, stored sparsely.
/// Exact-zero amplitudes are pruned; the squared norm is always within
/// [`NORM_TOL`] of 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeBinState {
    terms: BTreeMap<BasisKet, Complex64>,
}

impl TimeBinState {
    /// Builds a state from (ket, amplitude) pairs, summing duplicates,
    /// pruning exact zeros, and checking normalization.
    pub fn from_terms(
        terms: impl IntoIterator<Item = (BasisKet, Complex64)>,
    ) -> Result<Self, TimeBinError> {
        let mut map: BTreeMap<BasisKet, Complex64> = BTreeMap::new();
        for (ket, amp) in terms {
            *map.entry(ket).or_insert(Complex64::new(0.0, 0.0)) += amp;
        }
        map.retain(|_, amp| amp.norm_sqr() != 0.0);
        let state = TimeBinState { terms: map };
        let norm_sqr = state.norm_sqr();
        if (norm_sqr - 1.0).abs() > NORM_TOL {
            return Err(TimeBinError::NotNormalized(norm_sqr));
        }
        Ok(state)
    }

    /// Wraps terms already known to be normalized and zero-pruned
    /// (amplitude-preserving relabelings use this to stay bit-exact).
    fn from_normalized(terms: BTreeMap<BasisKet, Complex64>) -> Self {
        let state = TimeBinState { terms };
        debug_assert!((state.norm_sqr() - 1.0).abs() <= NORM_TOL);
        state
    }

    /// Iterates terms in canonical ket order (path `X` before `Y`, then by
    /// arrival tick).
    pub fn terms(&self) -> impl Iterator<Item = (&BasisKet, &Complex64)> {
        self.terms.iter()
    }

    /// Number of kets with nonzero amplitude.
    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    /// The amplitude on a ket (zero if absent).
    pub fn amplitude(&self, ket: &BasisKet) -> Complex64 {
        self.terms
            .get(ket)
            .copied()
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    /// Squared norm.
    pub fn norm_sqr(&self) -> f64 {
        self.terms.values().map(|a| a.norm_sqr()).sum()
    }

    /// Inner product `<self|other>` (conjugate-linear in `self`).
    pub fn inner_product(&self, other: &TimeBinState) -> Complex64 {
        self.terms
            .iter()
            .map(|(ket, a)| a.conj() * other.amplitude(ket))
            .sum()
    }

    /// Sends one path through a delay line: every ket on `path` arrives
    /// `delay` ticks later, amplitudes untouched. Exact and unitary.
    pub fn apply_delay(&self, path: PhotonPath, delay: TimeTick) -> TimeBinState {
        let terms = self
            .terms
            .iter()
            .map(|(ket, amp)| {
                let shifted = if ket.path == path {
                    BasisKet::new(ket.path, ket.time + delay)
                } else {
                    *ket
                };
                (shifted, *amp)
            })
            .collect();
        TimeBinState::from_normalized(terms)
    }

    /// Flattens the state to serializable records in canonical ket order.
    pub fn to_records(&self) -> Vec<KetRecord> {
        self.terms
            .iter()
            .map(|(ket, amp)| KetRecord {
                path: ket.path,
                tick: ket.time.value(),
                re: amp.re,
                im: amp.im,
            })
            .collect()
    }

    /// Rebuilds a state from records, re-validating normalization.
    pub fn from_records(records: &[KetRecord]) -> Result<Self, TimeBinError> {
        Self::from_terms(records.iter().map(|r| {
            (
                BasisKet::new(r.path, TimeTick::new(r.tick)),
                Complex64::new(r.re, r.im),
            )
        }))
    }
}

/// One ket of a serialized time-bin state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KetRecord {
    pub path: PhotonPath,
    pub tick: u64,
    pub re: f64,
    pub im: f64,
}

/// The state a photon source emits at send time `t`: an equal split across
/// both paths, with the committed bit in the relative sign —
/// `(|X, t> + (-1)^b |Y, t>) / sqrt(2)`.
pub fn emit_initial(b: Bit, t: TimeTick) -> TimeBinState {
    let c = std::f64::consts::FRAC_1_SQRT_2;
    let mut terms = BTreeMap::new();
    terms.insert(
        BasisKet::new(PhotonPath::X, t),
        Complex64::new(c, 0.0),
    );
    terms.insert(
        BasisKet::new(PhotonPath::Y, t),
        Complex64::new(b.sign() * c, 0.0),
    );
    TimeBinState::from_normalized(terms)
}

/// Probabilities of detector clicks after recombining the two paths,
/// keyed by (detector, arrival tick) in canonical order. Zero-probability
/// outcomes are omitted; the probabilities sum to 1 (within rounding).
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionDistribution {
    events: BTreeMap<(Detector, TimeTick), f64>,
}

impl DetectionDistribution {
    /// Probability of a click on `detector` at `time` (zero if absent).
    pub fn probability(&self, detector: Detector, time: TimeTick) -> f64 {
        self.events.get(&(detector, time)).copied().unwrap_or(0.0)
    }

    /// Iterates outcomes in canonical order.
    pub fn events(&self) -> impl Iterator<Item = (Detector, TimeTick, f64)> + '_ {
        self.events.iter().map(|(&(d, t), &p)| (d, t, p))
    }

    /// Number of outcomes with nonzero probability.
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Sum of all probabilities (1 up to rounding).
    pub fn total(&self) -> f64 {
        self.events.values().sum()
    }

    /// Draws one outcome using a single uniform variate, walking outcomes
    /// in canonical order. Deterministic given the generator state.
    pub fn sample(&self, rng: &mut impl rand::Rng) -> (Detector, TimeTick) {
        let u: f64 = rng.random();
        let mut cumulative = 0.0;
        let mut last = None;
        for (&(detector, time), &p) in &self.events {
            cumulative += p;
            last = Some((detector, time));
            if u < cumulative {
                return (detector, time);
            }
        }
        // Rounding can leave the cumulative sum a hair under 1; the final
        // outcome absorbs the remainder.
        last.expect("detection distribution is never empty")
    }
}

/// Recombines the two paths on the output beam splitter and reads out the
/// detectors. Kets arriving at the same tick on opposite paths interfere:
/// `D0` sees `(x + y)/sqrt(2)`, `D1` sees `(x - y)/sqrt(2)`. A ket with no
/// partner splits half/half.
pub fn detect(state: &TimeBinState) -> Result<DetectionDistribution, TimeBinError> {
    let norm_sqr = state.norm_sqr();
    if (norm_sqr - 1.0).abs() > NORM_TOL {
        return Err(TimeBinError::NotNormalized(norm_sqr));
    }
    let zero = Complex64::new(0.0, 0.0);
    // Pair up amplitudes by arrival tick.
    let mut by_time: BTreeMap<TimeTick, (Complex64, Complex64)> = BTreeMap::new();
    for (ket, amp) in state.terms() {
        let entry = by_time.entry(ket.time).or_insert((zero, zero));
        match ket.path {
            PhotonPath::X => entry.0 += *amp,
            PhotonPath::Y => entry.1 += *amp,
        }
    }
    let c = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let mut events = BTreeMap::new();
    for (time, (x, y)) in by_time {
        let d0 = (x + y) * c;
        let d1 = (x - y) * c;
        for (detector, amp) in [(Detector::D0, d0), (Detector::D1, d1)] {
            let p = amp.norm_sqr();
            if p > 0.0 {
                events.insert((detector, time), p);
            }
        }
    }
    Ok(DetectionDistribution { events })
}

/// Relabels a time-bin state as an abstract commitment-space state,
/// relative to send time `t_j`: `(X, t_j)` becomes basis vector 0 and
/// `(Y, t_j + T_i)` becomes basis vector `i`. Amplitudes are copied
/// bit-exactly. Any ket outside that pattern has no image and is an error.
pub fn to_theoretical(
    state: &TimeBinState,
    t_j: TimeTick,
    table: &SlotTable,
) -> Result<TheoreticalState, TimeBinError> {
    let n = table.dim();
    let mut amplitudes = vec![Complex64::new(0.0, 0.0); n];
    for (ket, amp) in state.terms() {
        let outside = || TimeBinError::KetOutsideEncoding {
            path: ket.path,
            tick: ket.time.value(),
            send_time: t_j.value(),
        };
        let index = match ket.path {
            PhotonPath::X => {
                if ket.time == t_j {
                    0
                } else {
                    return Err(outside());
                }
            }
            PhotonPath::Y => {
                let delay = ket.time.checked_sub(t_j).ok_or_else(outside)?;
                table.index_of(delay).ok_or_else(outside)?
            }
        };
        amplitudes[index] = *amp;
    }
    Ok(TheoreticalState::new(amplitudes)?)
}

/// Inverse of [`to_theoretical`]: realizes an abstract state as concrete
/// path/time kets relative to send time `t_j`. The state's dimension must
/// match the slot table. Amplitudes are copied bit-exactly.
pub fn from_theoretical(
    state: &TheoreticalState,
    t_j: TimeTick,
    table: &SlotTable,
) -> Result<TimeBinState, TimeBinError> {
    if state.dim() != table.dim() {
        return Err(TimeBinError::DimensionMismatch {
            state_dim: state.dim(),
            table_dim: table.dim(),
        });
    }
    let mut terms = BTreeMap::new();
    let a0 = state.amplitude(0);
    if a0.norm_sqr() != 0.0 {
        terms.insert(BasisKet::new(PhotonPath::X, t_j), a0);
    }
    for i in 1..state.dim() {
        let ai = state.amplitude(i);
        if ai.norm_sqr() != 0.0 {
            let delay = table.delay_for_index(i)?;
            terms.insert(BasisKet::new(PhotonPath::Y, t_j + delay), ai);
        }
    }
    Ok(TimeBinState::from_normalized(terms))
}

/// Verifies, for one (bit, slot index) pair, that the optical pipeline —
/// emit, secret delay, holding delay on both paths, compensating delay,
/// recombine — reproduces the abstract model exactly:
///
/// 1. the state in flight maps to `make_psi(b, i, n)` bit for bit;
/// 2. after the receiver's delays both kets align at
///    `t_j + tau_hold + T_i` with the original relative sign;
/// 3. detection clicks the detector matching `b` with probability exactly 1.
///
/// `corrupt_sign` flips the emitted relative sign, deliberately breaking
/// the beam-splitter convention; callers use it as a negative control to
/// prove the check has teeth.
pub fn check_equivalence(
    b: Bit,
    i: usize,
    table: &SlotTable,
    t_j: TimeTick,
    tau_hold: TimeTick,
    corrupt_sign: bool,
) -> Result<(), TimeBinError> {
    let t_i = table.delay_for_index(i)?;
    let broken = |stage: &'static str| TimeBinError::EquivalenceBroken {
        bit: b,
        index: i,
        stage,
    };

    let emitted = if corrupt_sign {
        emit_initial(b.flipped(), t_j)
    } else {
        emit_initial(b, t_j)
    };
    let sent = emitted.apply_delay(PhotonPath::Y, t_i);

    // Stage 1: the in-flight state is the abstract commitment state.
    let mapped = to_theoretical(&sent, t_j, table)?;
    let expected = make_psi(b, i, table.dim())?;
    if mapped != expected {
        return Err(broken("sent-state-mapping"));
    }

    // Stage 2: after holding both paths and compensating the announced
    // delay on X, the photon is exactly the freshly emitted state at the
    // unveiling tick t_j + tau_hold + T_i.
    let arrived = sent
        .apply_delay(PhotonPath::X, tau_hold)
        .apply_delay(PhotonPath::Y, tau_hold)
        .apply_delay(PhotonPath::X, t_i);
    let unveil_tick = t_j + tau_hold + t_i;
    if arrived != emit_initial(b, unveil_tick) {
        return Err(broken("recombined-state"));
    }

    // Stage 3: detection is deterministic — the matching detector's event
    // is the only one left (the other amplitude cancels to exactly zero),
    // and its probability is 1 up to float rounding.
    let distribution = detect(&arrived)?;
    let p = distribution.probability(Detector::for_bit(b), unveil_tick);
    if (p - 1.0).abs() > 1e-12 || distribution.len() != 1 {
        return Err(broken("detection"));
    }
    Ok(())
}
