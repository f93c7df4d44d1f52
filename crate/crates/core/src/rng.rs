//! Deterministic random-stream derivation.
//!
//! Every execution mode — single-process simulation, in-process two-party
//! session, TCP two-party session, split across separate OS processes —
//! must produce bit-identical transcripts for the same seed. That rules
//! out sharing one generator whose consumption order depends on
//! scheduling. Instead, each (round, role) pair gets its own ChaCha12
//! stream derived from the session seed alone:
//!
//! * round `j` (1-based), committer draws -> stream `2 * j`
//! * round `j` (1-based), receiver draws -> stream `2 * j + 1`
//!
//! Stream 0 and odd stream 1 are reserved for session-level draws.
//! Auxiliary consumers (optimizer restarts, sweep trials) derive their own
//! streams through [`stream_rng`] with documented indices.

use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;

/// Which party is drawing randomness for a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// The committer: draws the secret delay index.
    Committer,
    /// The receiver: drives detector sampling and the noise channel.
    Receiver,
}

/// A generator on an arbitrary derived stream of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The generator for one party's draws in one protocol round (`round` is
/// 1-based). Independent of scheduling, process layout, and of how much
/// randomness other rounds consumed.
pub fn round_rng(seed: u64, round: usize, role: Role) -> ChaCha12Rng {
    let offset = match role {
        Role::Committer => 0,
        Role::Receiver => 1,
    };
    stream_rng(seed, 2 * round as u64 + offset)
}
