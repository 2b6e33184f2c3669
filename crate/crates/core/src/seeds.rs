use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG for stream `stream` of base seed `seed`. Distinct streams are
/// independent, so trial `k` of an experiment always sees the same numbers
/// no matter how trials are scheduled.
pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Child seed for trial `index`, derived with splitmix64 finalization.
pub(crate) fn child_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
