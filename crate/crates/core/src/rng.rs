//! Keyed random streams.
//!
//! Every stochastic decision in the pipeline draws from a ChaCha8 stream whose
//! seed is a hash of a tuple of integers (run seed, clip id, epoch, purpose...).
//! Nothing shares a mutable stream, so results do not depend on evaluation
//! order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes, mixed into the key so different consumers never collide.
pub mod purpose {
    pub const INIT: u64 = 0x1;
    pub const AUGMENT: u64 = 0x2;
    pub const SEGMENT: u64 = 0x3;
    pub const SHUFFLE: u64 = 0x4;
    pub const GENERATE: u64 = 0x5;
    pub const KMEANS: u64 = 0x6;
    pub const VIEW: u64 = 0x7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes an ordered tuple of integers into one 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x6A09_E667_F3BC_C908u64;
    for &p in parts {
        h = splitmix64(h ^ splitmix64(p));
    }
    h
}

pub fn keyed(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

/// Uniform draw in [0, 1) with 53 bits of precision.
pub fn unit(rng: &mut ChaCha8Rng) -> f64 {
    use rand::RngExt;
    rng.random::<f64>()
}

/// Uniformly shuffled `0..n` drawn from the stream keyed on `parts`.
pub fn permutation(n: usize, parts: &[u64]) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut keyed(parts));
    v
}

/// Standard normal draw (Box-Muller, libm transcendental functions for
/// bit-reproducibility across platforms).
pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let mut u1 = unit(rng);
    while u1 <= f64::MIN_POSITIVE {
        u1 = unit(rng);
    }
    let u2 = unit(rng);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(std::f64::consts::TAU * u2)
}
