//! Seeded random streams.
//!
//! Every stochastic step draws from a ChaCha stream keyed by `(seed, key)`, so a
//! result depends only on the global seed and the logical position of the work
//! item, never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream for item `key` under `seed`.
pub fn stream(seed: u64, key: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    rng
}

/// Stream for item `key` within a named purpose, so e.g. eval-set coins and
/// training crops drawn under the same seed never coincide.
pub fn stream_for(seed: u64, domain: Domain, key: u64) -> Stream {
    stream(seed ^ domain.salt(), key)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Init,
    Shuffle,
    Example,
    Split,
    EvalSet,
    Subsample,
    Synth,
}

impl Domain {
    fn salt(self) -> u64 {
        match self {
            Domain::Init => 0x1d8e_4e27_c47d_124f,
            Domain::Shuffle => 0x9e37_79b9_7f4a_7c15,
            Domain::Example => 0xbf58_476d_1ce4_e5b9,
            Domain::Split => 0x94d0_49bb_1331_11eb,
            Domain::EvalSet => 0x2545_f491_4f6c_dd1d,
            Domain::Subsample => 0x5851_f42d_4c95_7f2d,
            Domain::Synth => 0x1405_7b7e_f767_814f,
        }
    }
}
