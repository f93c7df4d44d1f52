//! Simulator and security analyzer for an optical quantum bit commitment
//! protocol built on single photons in time-bin superpositions.
//!
//! The committer ("Alice") encodes her bit `b` in the relative phase of a
//! photon split across two interferometer paths, delaying one path by a
//! secret amount drawn from a discrete slot table. The receiver ("Bob")
//! stores each photon unmeasured during the holding phase and, at unveiling,
//! undoes the announced delay and recombines the paths so that an honest
//! commitment clicks deterministically in the detector matching `b`.
//!
//! The crate is organized in layers:
//!
//! * [`theory`] — finite-dimensional state vectors, density matrices, and
//!   the distinguishability measures (trace distance, Helstrom bound) that
//!   quantify concealment.
//! * [`timebin`] — the concrete optical encoding: kets labeled by
//!   interferometer path and discrete arrival time, delay lines, the
//!   recombining beam splitter, and the exact mapping between time-bin
//!   states and their abstract counterparts.
//! * [`protocol`] — honest commit / hold / unveil rounds, the noise model,
//!   the statistical acceptance test, and full deterministic transcripts.
//! * [`adversary`] — cheating strategies on both sides: entanglement-based
//!   delayed-choice attacks for the committer (including a numerical
//!   optimizer over steering measurements) and state discrimination for the
//!   receiver.
//! * [`analysis`] — parameter sweeps, holding-time feasibility numbers, and
//!   CSV/record exports.
//! * [`transport`] — a length-prefixed wire format and two-party session
//!   runner (in-process or TCP) that reproduces the single-process
//!   simulation bit for bit.
//! * [`rng`] — the deterministic random-stream derivation shared by every
//!   execution mode.

pub mod adversary;
pub mod analysis;
pub mod protocol;
pub mod rng;
pub mod theory;
pub mod timebin;
pub mod transport;

pub use protocol::{ProtocolParams, Transcript, Verdict};
pub use theory::Bit;
