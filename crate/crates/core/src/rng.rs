//! Seeded random streams.
//!
//! Every run derives independent ChaCha8 streams from its seed, one per
//! purpose, so that e.g. the observation noise sequence does not depend on
//! how many draws were spent generating the instance. ChaCha is counter based:
//! the `k`-th draw of a stream is a pure function of `(seed, stream, k)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Synthetic problem instance (anchor points, prior samples).
    Instance = 0,
    /// Starting location of a run.
    Start = 1,
    /// Observation noise, one normal draw per observation.
    Observation = 2,
    /// Monte-Carlo probes such as the submodularity checker.
    Probe = 3,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
