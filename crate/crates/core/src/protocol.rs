//! The commit / hold / unveil protocol and its statistical acceptance test.
//!
//! Per round `j`, the committer draws a secret delay from the slot table,
//! emits a photon at send time `t_j`, and delays path `Y` by the secret
//! amount. The receiver stores both paths unmeasured for the holding period.
//! At unveiling the committer announces her bit and every per-round delay;
//! the receiver compensates each announced delay on path `X`, recombines the
//! paths, and expects a deterministic click on the detector matching the
//! announced bit at tick `t_j + tau_hold + tau_j`. A configurable
//! flip/loss channel models imperfect detectors, and a one-sided
//! `z`-threshold on the match count decides acceptance.
//!
//! Every random draw comes from a per-(round, role) stream derived from the
//! session seed (see [`crate::rng`]), so a full run is a pure function of
//! its parameters — transcripts are reproducible bit for bit across process
//! and channel layouts.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{round_rng, Role};
use crate::theory::Bit;
use crate::timebin::{
    detect, emit_initial, Detector, KetRecord, PhotonPath, SlotTable, TimeBinError, TimeBinState,
    TimeTick,
};

/// Errors from parameter validation and round bookkeeping.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    /// At least one round is required.
    #[error("round count must be at least 1")]
    NoRounds,
    /// The encoding dimension must be at least 2.
    #[error("dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    /// One send time per round is required.
    #[error("expected {expected} send times, got {got}")]
    SendTimesLengthMismatch { expected: usize, got: usize },
    /// Send times must leave room for the largest slot delay, or a late
    /// photon from round `j - 1` could be confused with round `j`.
    #[error(
        "send times for rounds {earlier} and {later} are closer than the \
         largest slot delay"
    )]
    SendTimesTooClose { earlier: usize, later: usize },
    /// Error rates must be nonnegative and sum below 1.
    #[error("error rates must satisfy 0 <= flip, 0 <= loss, flip + loss < 1 (got flip {flip}, loss {loss})")]
    InvalidErrorRates { flip: f64, loss: f64 },
    /// The acceptance z-threshold must be a nonnegative finite number.
    #[error("acceptance z-threshold must be finite and nonnegative, got {0}")]
    InvalidAcceptanceZ(f64),
    /// A commitment or announcement used a delay outside the slot table.
    #[error("delay {0} is not in the slot table")]
    DelayNotAllowed(TimeTick),
    /// A round index fell outside `1..=rounds`.
    #[error("round {round} out of range 1..={rounds}")]
    RoundOutOfRange { round: usize, rounds: usize },
    /// The acceptance test needs one event per expected time.
    #[error("got {events} detection events for {expected} expected times")]
    EventCountMismatch { events: usize, expected: usize },
    /// An error surfaced from the optical layer.
    #[error(transparent)]
    TimeBin(#[from] TimeBinError),
}

/// Everything both parties must agree on before the first photon is sent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Number of commitment rounds `s`.
    pub rounds: usize,
    /// Encoding dimension `n`; the slot table holds `n - 1` delays.
    pub dim: usize,
    /// Spacing of the uniform slot table: delay `i` is `i * slot_spacing`.
    pub slot_spacing: TimeTick,
    /// Send time `t_j` for each round, strictly increasing with gaps larger
    /// than the largest slot delay.
    pub send_times: Vec<TimeTick>,
    /// Probability that a click is reported by the wrong detector.
    pub epsilon_flip: f64,
    /// Probability that a photon is lost and no click is reported.
    pub epsilon_loss: f64,
    /// One-sided acceptance threshold in standard deviations.
    pub accept_z: f64,
    /// Session seed; all randomness in a run derives from it.
    pub seed: u64,
}

impl ProtocolParams {
    /// Builds parameters with evenly spaced send times
    /// (`t_j = (j - 1) * (tau_max + slot_spacing)`) and the total error
    /// rate split evenly between flips and losses.
    pub fn new(
        rounds: usize,
        dim: usize,
        slot_spacing: TimeTick,
        epsilon: f64,
        accept_z: f64,
        seed: u64,
    ) -> Result<Self, ProtocolError> {
        if dim < 2 {
            return Err(ProtocolError::DimensionTooSmall(dim));
        }
        let tau_max = slot_spacing.times((dim - 1) as u64);
        let stride = tau_max + slot_spacing;
        let send_times = (0..rounds as u64).map(|j| stride.times(j)).collect();
        let params = ProtocolParams {
            rounds,
            dim,
            slot_spacing,
            send_times,
            epsilon_flip: epsilon / 2.0,
            epsilon_loss: epsilon / 2.0,
            accept_z,
            seed,
        };
        params.validate()?;
        Ok(params)
    }

    /// Replaces the send-time schedule, revalidating.
    pub fn with_send_times(mut self, send_times: Vec<TimeTick>) -> Result<Self, ProtocolError> {
        self.send_times = send_times;
        self.validate()?;
        Ok(self)
    }

    /// Replaces the flip/loss split, revalidating.
    pub fn with_error_rates(mut self, flip: f64, loss: f64) -> Result<Self, ProtocolError> {
        self.epsilon_flip = flip;
        self.epsilon_loss = loss;
        self.validate()?;
        Ok(self)
    }

    /// Total error rate `epsilon_flip + epsilon_loss`.
    pub fn epsilon(&self) -> f64 {
        self.epsilon_flip + self.epsilon_loss
    }

    /// The largest slot delay.
    pub fn tau_max(&self) -> TimeTick {
        self.slot_spacing.times((self.dim - 1) as u64)
    }

    /// The slot table these parameters define.
    pub fn slot_table(&self) -> Result<SlotTable, ProtocolError> {
        Ok(SlotTable::uniform(self.dim, self.slot_spacing)?)
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.rounds == 0 {
            return Err(ProtocolError::NoRounds);
        }
        if self.dim < 2 {
            return Err(ProtocolError::DimensionTooSmall(self.dim));
        }
        if self.slot_spacing == TimeTick::ZERO {
            return Err(ProtocolError::TimeBin(TimeBinError::ZeroSlotSpacing));
        }
        if self.send_times.len() != self.rounds {
            return Err(ProtocolError::SendTimesLengthMismatch {
                expected: self.rounds,
                got: self.send_times.len(),
            });
        }
        let tau_max = self.tau_max();
        for j in 1..self.send_times.len() {
            let gap = self.send_times[j].checked_sub(self.send_times[j - 1]);
            if gap.is_none_or(|g| g <= tau_max) {
                return Err(ProtocolError::SendTimesTooClose {
                    earlier: j,
                    later: j + 1,
                });
            }
        }
        let flip = self.epsilon_flip;
        let loss = self.epsilon_loss;
        if !(flip >= 0.0 && loss >= 0.0 && flip + loss < 1.0) {
            return Err(ProtocolError::InvalidErrorRates { flip, loss });
        }
        if !self.accept_z.is_finite() || self.accept_z < 0.0 {
            return Err(ProtocolError::InvalidAcceptanceZ(self.accept_z));
        }
        Ok(())
    }
}

/// The committer's secret choices for one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundSecret {
    /// 1-based round index `j`.
    pub round: usize,
    /// The secret delay `tau_j`, drawn uniformly from the slot table.
    pub delay: TimeTick,
    /// The committed bit.
    pub bit: Bit,
}

/// Draws the committer's secret delay for round `round` (1-based) from the
/// committer's per-round stream.
pub fn draw_round_secret(
    params: &ProtocolParams,
    round: usize,
    bit: Bit,
) -> Result<RoundSecret, ProtocolError> {
    if round == 0 || round > params.rounds {
        return Err(ProtocolError::RoundOutOfRange {
            round,
            rounds: params.rounds,
        });
    }
    let table = params.slot_table()?;
    let mut rng = round_rng(params.seed, round, Role::Committer);
    let pick = rng.random_range(0..table.len());
    Ok(RoundSecret {
        round,
        delay: table.slots()[pick],
        bit,
    })
}

/// The committer's side of one round: emit at `t_j` and delay path `Y` by
/// the secret amount. Fails if the delay is not a slot-table entry.
pub fn commit_round(
    secret: &RoundSecret,
    params: &ProtocolParams,
) -> Result<TimeBinState, ProtocolError> {
    if secret.round == 0 || secret.round > params.rounds {
        return Err(ProtocolError::RoundOutOfRange {
            round: secret.round,
            rounds: params.rounds,
        });
    }
    let table = params.slot_table()?;
    if table.index_of(secret.delay).is_none() {
        return Err(ProtocolError::DelayNotAllowed(secret.delay));
    }
    let t_j = params.send_times[secret.round - 1];
    Ok(emit_initial(secret.bit, t_j).apply_delay(PhotonPath::Y, secret.delay))
}

/// The receiver's holding phase: both paths ride identical storage delays
/// of `tau_hold`, leaving the relative alignment untouched.
pub fn store_during_hold(state: &TimeBinState, tau_hold: TimeTick) -> TimeBinState {
    state
        .apply_delay(PhotonPath::X, tau_hold)
        .apply_delay(PhotonPath::Y, tau_hold)
}

/// One detected (or lost) unveiling outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectionEvent {
    /// A detector fired at a specific tick.
    Click { detector: Detector, time: TimeTick },
    /// The photon was lost; no detector fired.
    Lost,
}

/// The receiver's side of one unveiling round: compensate the announced
/// delay on path `X`, recombine, sample a click, then pass it through the
/// flip/loss channel. The announced delay must be a slot-table entry.
///
/// Exactly two uniform variates are consumed per call (click sample and
/// noise draw) regardless of parameters, keeping streams aligned across
/// configurations.
pub fn verify_round(
    stored: &TimeBinState,
    announced_delay: TimeTick,
    params: &ProtocolParams,
    rng: &mut impl Rng,
) -> Result<DetectionEvent, ProtocolError> {
    let table = params.slot_table()?;
    if table.index_of(announced_delay).is_none() {
        return Err(ProtocolError::DelayNotAllowed(announced_delay));
    }
    let recombined = stored.apply_delay(PhotonPath::X, announced_delay);
    let distribution = detect(&recombined)?;
    let (detector, time) = distribution.sample(rng);
    let u: f64 = rng.random();
    if u < params.epsilon_loss {
        return Ok(DetectionEvent::Lost);
    }
    let detector = if u < params.epsilon_loss + params.epsilon_flip {
        match detector {
            Detector::D0 => Detector::D1,
            Detector::D1 => Detector::D0,
        }
    } else {
        detector
    };
    Ok(DetectionEvent::Click { detector, time })
}

/// How a session ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum Verdict {
    /// The unveiling passed the statistical test.
    Accepted,
    /// The unveiling failed the statistical test.
    Rejected,
    /// The session stopped early; the reason is a short diagnostic string.
    Aborted(String),
}

/// Counts rounds whose event is a click on the detector matching
/// `expected_bit` at exactly the expected tick.
pub fn matched_rounds(
    events: &[DetectionEvent],
    expected_bit: Bit,
    expected_times: &[TimeTick],
) -> usize {
    let want = Detector::for_bit(expected_bit);
    events
        .iter()
        .zip(expected_times)
        .filter(|(event, &t)| {
            matches!(event, DetectionEvent::Click { detector, time }
                if *detector == want && *time == t)
        })
        .count()
}

/// The statistical acceptance rule: with `s` rounds and total error rate
/// `epsilon`, accept iff the match count reaches
/// `s * (1 - epsilon) - accept_z * sqrt(s * epsilon * (1 - epsilon))`.
/// With `epsilon = 0` this demands a perfect record.
pub fn acceptance_test(
    events: &[DetectionEvent],
    expected_bit: Bit,
    expected_times: &[TimeTick],
    epsilon: f64,
    accept_z: f64,
) -> Result<Verdict, ProtocolError> {
    if events.len() != expected_times.len() {
        return Err(ProtocolError::EventCountMismatch {
            events: events.len(),
            expected: expected_times.len(),
        });
    }
    let s = events.len() as f64;
    let matched = matched_rounds(events, expected_bit, expected_times) as f64;
    let threshold = s * (1.0 - epsilon) - accept_z * (s * epsilon * (1.0 - epsilon)).sqrt();
    Ok(if matched >= threshold {
        Verdict::Accepted
    } else {
        Verdict::Rejected
    })
}

/// One round's committed state as placed on the channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitRecord {
    /// 1-based round index.
    pub round: usize,
    /// The agreed send time `t_j`.
    pub send_time: TimeTick,
    /// The committed state's kets in canonical order.
    pub state: Vec<KetRecord>,
}

/// The unveiling announcement: the claimed bit and every per-round delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnveilRecord {
    pub bit: Bit,
    pub delays: Vec<TimeTick>,
}

/// A complete record of one session, sufficient to replay or audit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub params: ProtocolParams,
    /// The holding delay both paths ride between commit and unveil.
    pub tau_hold: TimeTick,
    /// One record per committed round, in round order.
    pub commits: Vec<CommitRecord>,
    /// The unveiling announcement, absent if the session aborted first.
    pub unveil: Option<UnveilRecord>,
    /// One detection event per unveiled round, in round order.
    pub events: Vec<DetectionEvent>,
    pub verdict: Verdict,
}

impl Transcript {
    /// A transcript for a session that never completed.
    pub fn aborted(params: ProtocolParams, tau_hold: TimeTick, reason: String) -> Self {
        Transcript {
            params,
            tau_hold,
            commits: Vec::new(),
            unveil: None,
            events: Vec::new(),
            verdict: Verdict::Aborted(reason),
        }
    }

    /// Whether the session stopped before reaching a ruling.
    pub fn is_aborted(&self) -> bool {
        matches!(self.verdict, Verdict::Aborted(_))
    }

    /// Canonical structured-text form: JSON with keys sorted at every
    /// nesting level and floats printed in shortest round-trip form. Equal
    /// transcripts serialize to identical bytes, so files diff cleanly.
    pub fn to_canonical_text(&self) -> String {
        let value = serde_json::to_value(self).expect("transcripts always serialize");
        let mut text = serde_json::to_string_pretty(&value).expect("values always render");
        text.push('\n');
        text
    }

    /// Parses the canonical form back.
    pub fn from_canonical_text(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Expected click times `t_j + tau_hold + tau_j` for announced delays.
pub fn expected_unveil_times(
    params: &ProtocolParams,
    tau_hold: TimeTick,
    delays: &[TimeTick],
) -> Vec<TimeTick> {
    params
        .send_times
        .iter()
        .zip(delays)
        .map(|(&t_j, &tau)| t_j + tau_hold + tau)
        .collect()
}

/// Runs a complete single-process session: the committer commits
/// `commit_bit` in every round and then announces `unveil_bit` with her
/// true delays. Announcing `unveil_bit != commit_bit` models a committer
/// who tries to change her mind by classical lying alone.
///
/// Invalid parameters yield an aborted transcript rather than an error, so
/// the caller always gets an auditable record.
pub fn run_protocol(
    params: &ProtocolParams,
    commit_bit: Bit,
    unveil_bit: Bit,
    tau_hold: TimeTick,
) -> Transcript {
    if let Err(e) = params.validate() {
        return Transcript::aborted(params.clone(), tau_hold, e.to_string());
    }
    let mut commits = Vec::with_capacity(params.rounds);
    let mut delays = Vec::with_capacity(params.rounds);
    let mut events = Vec::with_capacity(params.rounds);
    for j in 1..=params.rounds {
        let secret =
            draw_round_secret(params, j, commit_bit).expect("round index is in range");
        let state = commit_round(&secret, params).expect("drawn delay is a slot-table entry");
        commits.push(CommitRecord {
            round: j,
            send_time: params.send_times[j - 1],
            state: state.to_records(),
        });
        let stored = store_during_hold(&state, tau_hold);
        let mut rng = round_rng(params.seed, j, Role::Receiver);
        let event = verify_round(&stored, secret.delay, params, &mut rng)
            .expect("honest announcement is a slot-table entry");
        delays.push(secret.delay);
        events.push(event);
    }
    let expected_times = expected_unveil_times(params, tau_hold, &delays);
    let verdict = acceptance_test(
        &events,
        unveil_bit,
        &expected_times,
        params.epsilon(),
        params.accept_z,
    )
    .expect("one event per round by construction");
    Transcript {
        params: params.clone(),
        tau_hold,
        commits,
        unveil: Some(UnveilRecord {
            bit: unveil_bit,
            delays,
        }),
        events,
        verdict,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params(rounds: usize, dim: usize, epsilon: f64, seed: u64) -> ProtocolParams {
        ProtocolParams::new(rounds, dim, TimeTick::new(2), epsilon, 3.0, seed).unwrap()
    }

    #[test]
    fn default_send_times_leave_more_than_tau_max_between_rounds() {
        let params = small_params(5, 4, 0.0, 1);
        let tau_max = params.tau_max();
        assert_eq!(tau_max, TimeTick::new(6));
        for pair in params.send_times.windows(2) {
            assert!(pair[1].checked_sub(pair[0]).unwrap() > tau_max);
        }
        params.validate().unwrap();
    }

    #[test]
    fn validation_rejects_each_bad_field() {
        assert!(matches!(
            ProtocolParams::new(0, 4, TimeTick::new(1), 0.0, 3.0, 0),
            Err(ProtocolError::NoRounds)
        ));
        assert!(matches!(
            ProtocolParams::new(10, 1, TimeTick::new(1), 0.0, 3.0, 0),
            Err(ProtocolError::DimensionTooSmall(1))
        ));
        assert!(matches!(
            ProtocolParams::new(10, 4, TimeTick::ZERO, 0.0, 3.0, 0),
            Err(ProtocolError::TimeBin(TimeBinError::ZeroSlotSpacing))
        ));
        assert!(matches!(
            ProtocolParams::new(10, 4, TimeTick::new(1), -0.1, 3.0, 0),
            Err(ProtocolError::InvalidErrorRates { .. })
        ));
        assert!(matches!(
            ProtocolParams::new(10, 4, TimeTick::new(1), 1.0, 3.0, 0),
            Err(ProtocolError::InvalidErrorRates { .. })
        ));
        assert!(matches!(
            ProtocolParams::new(10, 4, TimeTick::new(1), 0.0, -1.0, 0),
            Err(ProtocolError::InvalidAcceptanceZ(_))
        ));
        assert!(matches!(
            small_params(3, 3, 0.0, 0).with_send_times(vec![
                TimeTick::new(0),
                TimeTick::new(4), // gap equal to tau_max, not greater
                TimeTick::new(20),
            ]),
            Err(ProtocolError::SendTimesTooClose { earlier: 1, later: 2 })
        ));
        assert!(matches!(
            small_params(2, 3, 0.0, 0).with_send_times(vec![TimeTick::new(0)]),
            Err(ProtocolError::SendTimesLengthMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn drawn_secrets_are_uniform_over_the_slot_table() {
        let params = small_params(6000, 4, 0.0, 42);
        let mut counts = std::collections::BTreeMap::new();
        for j in 1..=params.rounds {
            let secret = draw_round_secret(&params, j, Bit::Zero).unwrap();
            *counts.entry(secret.delay).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 3);
        for (_, count) in counts {
            // Expect 2000 per slot; 5 sigma is about 182.
            assert!((count as i64 - 2000).abs() < 200, "count {count}");
        }
    }

    #[test]
    fn secrets_are_deterministic_per_round_and_seed() {
        let params = small_params(50, 8, 0.0, 9);
        for j in 1..=50 {
            let a = draw_round_secret(&params, j, Bit::One).unwrap();
            let b = draw_round_secret(&params, j, Bit::One).unwrap();
            assert_eq!(a, b);
        }
        assert!(matches!(
            draw_round_secret(&params, 0, Bit::Zero),
            Err(ProtocolError::RoundOutOfRange { .. })
        ));
        assert!(matches!(
            draw_round_secret(&params, 51, Bit::Zero),
            Err(ProtocolError::RoundOutOfRange { .. })
        ));
    }

    #[test]
    fn commit_round_rejects_off_table_delays() {
        let params = small_params(2, 3, 0.0, 0);
        let secret = RoundSecret {
            round: 1,
            delay: TimeTick::new(3), // table is {2, 4}
            bit: Bit::Zero,
        };
        assert_eq!(
            commit_round(&secret, &params).unwrap_err(),
            ProtocolError::DelayNotAllowed(TimeTick::new(3))
        );
    }

    #[test]
    fn noiseless_honest_run_clicks_the_right_detector_every_round() {
        for bit in [Bit::Zero, Bit::One] {
            let params = small_params(200, 5, 0.0, 7);
            let tau_hold = TimeTick::new(1000);
            let t = run_protocol(&params, bit, bit, tau_hold);
            assert_eq!(t.verdict, Verdict::Accepted);
            assert_eq!(t.events.len(), 200);
            let unveil = t.unveil.as_ref().unwrap();
            let expected = expected_unveil_times(&params, tau_hold, &unveil.delays);
            assert_eq!(matched_rounds(&t.events, bit, &expected), 200);
            let want = Detector::for_bit(bit);
            for (event, time) in t.events.iter().zip(expected) {
                assert_eq!(
                    *event,
                    DetectionEvent::Click {
                        detector: want,
                        time
                    }
                );
            }
        }
    }

    #[test]
    fn classical_bit_flip_at_unveiling_is_always_rejected_noiselessly() {
        let params = small_params(100, 6, 0.0, 3);
        let t = run_protocol(&params, Bit::Zero, Bit::One, TimeTick::new(50));
        assert_eq!(t.verdict, Verdict::Rejected);
        // The photons still click the detector for the *committed* bit:
        // the wrong detector never fires without noise.
        let unveil = t.unveil.as_ref().unwrap();
        let expected = expected_unveil_times(&params, t.tau_hold, &unveil.delays);
        assert_eq!(matched_rounds(&t.events, Bit::One, &expected), 0);
        assert_eq!(matched_rounds(&t.events, Bit::Zero, &expected), 100);
    }

    #[test]
    fn runs_are_bit_identical_for_equal_seeds_and_differ_across_seeds() {
        let params = small_params(40, 4, 0.2, 11);
        let a = run_protocol(&params, Bit::One, Bit::One, TimeTick::new(9));
        let b = run_protocol(&params, Bit::One, Bit::One, TimeTick::new(9));
        assert_eq!(a, b);
        assert_eq!(a.to_canonical_text(), b.to_canonical_text());

        let other = small_params(40, 4, 0.2, 12);
        let c = run_protocol(&other, Bit::One, Bit::One, TimeTick::new(9));
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn noise_channel_hits_flip_and_loss_rates() {
        let params = ProtocolParams::new(4000, 3, TimeTick::new(1), 0.5, 3.0, 21)
            .unwrap()
            .with_error_rates(0.2, 0.3)
            .unwrap();
        let t = run_protocol(&params, Bit::Zero, Bit::Zero, TimeTick::new(5));
        let unveil = t.unveil.as_ref().unwrap();
        let expected = expected_unveil_times(&params, t.tau_hold, &unveil.delays);
        let lost = t
            .events
            .iter()
            .filter(|e| matches!(e, DetectionEvent::Lost))
            .count();
        let flipped = matched_rounds(&t.events, Bit::One, &expected);
        // Expected 1200 losses and 800 flips; 5-sigma bands.
        assert!((lost as f64 - 1200.0).abs() < 145.0, "lost {lost}");
        assert!((flipped as f64 - 800.0).abs() < 127.0, "flipped {flipped}");
    }

    #[test]
    fn acceptance_threshold_sits_at_the_z_boundary() {
        // s = 100, epsilon = 0.05, z = 1: threshold = 95 - sqrt(4.75) ~ 92.82.
        let times: Vec<TimeTick> = (0..100).map(|j| TimeTick::new(10 * j)).collect();
        let click = |t: TimeTick| DetectionEvent::Click {
            detector: Detector::D0,
            time: t,
        };
        let mut events: Vec<DetectionEvent> = times.iter().map(|&t| click(t)).collect();
        for e in events.iter_mut().take(7) {
            *e = DetectionEvent::Lost;
        }
        assert_eq!(
            acceptance_test(&events, Bit::Zero, &times, 0.05, 1.0).unwrap(),
            Verdict::Accepted
        );
        events[7] = DetectionEvent::Lost; // 92 matches < 92.82
        assert_eq!(
            acceptance_test(&events, Bit::Zero, &times, 0.05, 1.0).unwrap(),
            Verdict::Rejected
        );
    }

    #[test]
    fn acceptance_with_zero_epsilon_demands_perfection() {
        let times = vec![TimeTick::new(4), TimeTick::new(14)];
        let good = vec![
            DetectionEvent::Click {
                detector: Detector::D1,
                time: TimeTick::new(4),
            },
            DetectionEvent::Click {
                detector: Detector::D1,
                time: TimeTick::new(14),
            },
        ];
        assert_eq!(
            acceptance_test(&good, Bit::One, &times, 0.0, 3.0).unwrap(),
            Verdict::Accepted
        );
        let mut off_time = good.clone();
        off_time[1] = DetectionEvent::Click {
            detector: Detector::D1,
            time: TimeTick::new(15),
        };
        assert_eq!(
            acceptance_test(&off_time, Bit::One, &times, 0.0, 3.0).unwrap(),
            Verdict::Rejected
        );
        assert!(matches!(
            acceptance_test(&good[..1], Bit::One, &times, 0.0, 3.0),
            Err(ProtocolError::EventCountMismatch { events: 1, expected: 2 })
        ));
    }

    #[test]
    fn invalid_params_yield_an_aborted_transcript() {
        let mut params = small_params(2, 3, 0.0, 0);
        params.rounds = 0;
        let t = run_protocol(&params, Bit::Zero, Bit::Zero, TimeTick::ZERO);
        assert_eq!(t.verdict, Verdict::Aborted("round count must be at least 1".into()));
        assert!(t.commits.is_empty());
        assert!(t.unveil.is_none());
    }

    #[test]
    fn canonical_text_round_trips_and_sorts_keys() {
        let params = small_params(3, 3, 0.1, 5);
        let t = run_protocol(&params, Bit::One, Bit::One, TimeTick::new(8));
        let text = t.to_canonical_text();
        assert_eq!(Transcript::from_canonical_text(&text).unwrap(), t);
        // Top-level keys appear in sorted order.
        let positions: Vec<usize> = ["\"commits\"", "\"events\"", "\"params\"", "\"tau_hold\"", "\"unveil\"", "\"verdict\""]
            .iter()
            .map(|k| text.find(k).unwrap())
            .collect();
        let mut sorted = positions.clone();
        sorted.sort_unstable();
        assert_eq!(positions, sorted);
    }

    #[test]
    fn wrong_delay_announcement_spreads_clicks_off_the_expected_times() {
        let params = small_params(1, 3, 0.0, 2);
        let secret = draw_round_secret(&params, 1, Bit::Zero).unwrap();
        let state = commit_round(&secret, &params).unwrap();
        let stored = store_during_hold(&state, TimeTick::new(30));
        // Announce the other slot.
        let table = params.slot_table().unwrap();
        let wrong = table
            .slots()
            .iter()
            .copied()
            .find(|&d| d != secret.delay)
            .unwrap();
        let mut hits = 0;
        let trials = 2000;
        for k in 0..trials {
            let mut rng = crate::rng::stream_rng(1000 + k, 0);
            let event = verify_round(&stored, wrong, &params, &mut rng).unwrap();
            let expected_time = params.send_times[0] + TimeTick::new(30) + wrong;
            if matches!(event, DetectionEvent::Click { detector: Detector::D0, time } if time == expected_time)
            {
                hits += 1;
            }
        }
        // Only one of four equally likely outcomes matches: ~500 of 2000.
        assert!((hits as f64 - 500.0).abs() < 110.0, "hits {hits}");
    }
}
