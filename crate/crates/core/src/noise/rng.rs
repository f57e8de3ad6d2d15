use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random stream type handed to every stochastic operation.
pub type SimRng = ChaCha8Rng;

/// Derives independent, reproducible streams from one base seed.
///
/// Streams are keyed by a purpose tag and up to two indices, so that, for
/// example, agent 3's data stream does not depend on how many noise draws
/// any channel made. Keeping data and noise on separate streams also makes
/// runs that differ only in mechanism or weights share their data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    base: u64,
}

/// Purpose tags for derived streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    Data = 1,
    MeanNoise = 2,
    VarianceNoise = 3,
    ClassAssignment = 4,
    Subsample = 5,
    Validation = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedTree {
    pub fn new(base: u64) -> Self {
        Self { base }
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn seed_for(&self, tag: StreamTag, i: u64, j: u64) -> u64 {
        let mut h = splitmix64(self.base);
        h = splitmix64(h ^ tag as u64);
        h = splitmix64(h ^ i);
        splitmix64(h ^ j.rotate_left(32))
    }

    pub fn stream(&self, tag: StreamTag, i: u64, j: u64) -> SimRng {
        SimRng::seed_from_u64(self.seed_for(tag, i, j))
    }
}
