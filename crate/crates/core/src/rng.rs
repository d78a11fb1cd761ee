//! Seeded random streams. Every consumer draws from its own ChaCha stream
//! keyed by `(seed, domain, index)`, so results do not depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamDomain {
    SceneBasis = 1,
    WifiSurvey = 2,
    ImageSurvey = 3,
    TrainingRssi = 4,
    QueryLocation = 5,
    QueryRssi = 6,
    QueryImage = 7,
    FineInit = 8,
    FineShuffle = 9,
    Aux = 15,
}

const INDEX_BITS: u32 = 48;

pub fn stream(seed: u64, domain: StreamDomain, index: u64) -> ChaCha8Rng {
    debug_assert!(index < 1 << INDEX_BITS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << INDEX_BITS) | index);
    rng
}
