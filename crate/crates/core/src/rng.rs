//! Seeded randomness. Every consumer draws from ChaCha8 keyed by the run seed
//! with a fixed stream id per purpose, so adding draws in one stage never
//! shifts the sequence seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Endmembers = 1,
    AbundanceMap = 2,
    Noise = 3,
    Target = 4,
    GeneratorInit = 5,
    DiscriminatorInit = 6,
    Shuffle = 7,
    Network = 8,
    GradCheck = 9,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
