//! Deterministic random streams.
//!
//! Every consumer of randomness asks for a stream keyed by the root seed and a
//! tuple of tags (purpose, round, client, ...). Streams are ChaCha8 keyed by
//! the root seed with the stream id derived from the tags, so the order in
//! which consumers draw never perturbs another consumer's stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags; distinct values keep independent consumers apart.
pub mod tag {
    pub const INIT: u64 = 0x11;
    pub const BATCH: u64 = 0x22;
    pub const DATA: u64 = 0x33;
    pub const PARTITION: u64 = 0x44;
    pub const KMEANS: u64 = 0x55;
    pub const SPLIT: u64 = 0x66;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for `(seed, tags...)`.
pub fn stream(seed: u64, tags: &[u64]) -> Rng {
    let id = tags
        .iter()
        .fold(0xD1B5_4A32_D192_ED03u64, |acc, &t| splitmix(acc ^ splitmix(t)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
