//! Seed plumbing. All randomness in a run flows from one seed through named
//! substreams so that ablations share initialization and reruns are
//! bit-identical.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const INIT: u64 = 1 << 32;
const FORCING: u64 = 2 << 32;
const ORDER: u64 = 3 << 32;
const VIDEO: u64 = 4 << 32;
const BASELINE: u64 = 5 << 32;

/// RNG for a named substream of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Parameter initialization stream.
pub fn init_stream(seed: u64) -> ChaCha8Rng {
    substream(seed, INIT)
}

/// Teacher-forcing coin flips for one epoch. Keyed by epoch so resumed
/// training replays the exact stream of an uninterrupted run.
pub fn forcing_stream(seed: u64, epoch: usize) -> ChaCha8Rng {
    substream(seed, FORCING | epoch as u64)
}

/// Example shuffling for one epoch.
pub fn order_stream(seed: u64, epoch: usize) -> ChaCha8Rng {
    substream(seed, ORDER | epoch as u64)
}

/// Per-video generation stream; parallel and serial corpus generation agree.
pub fn video_stream(seed: u64, video_index: usize) -> ChaCha8Rng {
    substream(seed, VIDEO | video_index as u64)
}

/// Random-baseline score stream.
pub fn baseline_stream(seed: u64) -> ChaCha8Rng {
    substream(seed, BASELINE)
}
