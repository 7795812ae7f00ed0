//! Deterministic seed derivation.
//!
//! Every random stream in the simulator is keyed by a base seed plus a
//! stream tag and a small tuple of indices, so that e.g. client 3's
//! training shuffle in round 5 is the same stream in every rerun.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stream tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Train = 1,
    Partition = 2,
    Topology = 3,
    Roster = 4,
    FakeModel = 5,
    MonteCarlo = 6,
    BlobCenters = 7,
    BlobTrain = 8,
    BlobTest = 9,
    Experiment = 10,
}

pub fn derive_seed(base: u64, stream: Stream, indices: &[u64]) -> u64 {
    let mut h = splitmix64(base ^ splitmix64(stream as u64));
    for &i in indices {
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    h
}

pub fn rng_for(base: u64, stream: Stream, indices: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, stream, indices))
}
