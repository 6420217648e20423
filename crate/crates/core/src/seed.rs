//! Counter-based seed derivation.
//!
//! Every random stream in a simulation is keyed by the master seed, a stream
//! tag and a short list of counters (round index, client id, epoch, ...).
//! Keys are folded through the SplitMix64 finalizer, so a stream never depends
//! on how many values another stream has consumed. That makes runs independent
//! of client execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams used by the simulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    ModelInit = 2,
    Sampling = 3,
    Shuffle = 4,
    Clustering = 5,
    Partition = 6,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `master`, the stream tag and each counter into one 64-bit seed.
pub fn derive(master: u64, stream: Stream, counters: &[u64]) -> u64 {
    let mut state = splitmix64(master ^ (stream as u64).wrapping_mul(GOLDEN));
    for &c in counters {
        state = splitmix64(state ^ splitmix64(c));
    }
    state
}

/// Sub-seed for a plain `u64` seed that is not tied to a master seed.
pub fn child(seed: u64, counter: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ counter.wrapping_mul(GOLDEN))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
