use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Environment variable consulted for the default master seed.
pub const SEED_ENV: &str = "DTWGI_SEED";

/// Mixes a master seed with a list of tags into an independent stream seed (splitmix64).
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut state = seed;
    for &tag in tags {
        state = splitmix(state ^ splitmix(tag.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    splitmix(state)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}
