//! Named, independent random streams derived from a single mission seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream identifiers. Each subsystem draws from its own stream so that adding
/// draws in one place never perturbs another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    World = 1,
    Lidar = 2,
    Odometry = 3,
    Registration = 4,
    Study = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, which: Stream) -> SimRng {
    substream(seed, which, 0)
}

pub fn substream(seed: u64, which: Stream, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index)));
    rng.set_stream(which as u64);
    rng
}
