use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which generated dataset a stream belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Development = 0,
    Validation = 1,
}

/// What a stream is used for. Perfect datasets replay the baseline,
/// covariate-noise and event streams of their source while never touching the
/// treatment stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Baseline = 0,
    CovariateNoise = 1,
    Treatment = 2,
    Event = 3,
    MeasurementError = 4,
}

const PURPOSES: u64 = 8;

/// Identifies the family of random streams for one dataset of one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub replication: u64,
    pub role: Role,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl StreamKey {
    pub fn new(seed: u64, replication: u64, role: Role) -> Self {
        Self { seed, replication, role }
    }

    fn root(&self) -> u64 {
        splitmix64(splitmix64(splitmix64(self.seed) ^ self.replication) ^ self.role as u64)
    }

    /// A seed for code that manages its own per-subject streams.
    pub fn derived_seed(&self, purpose: Purpose) -> u64 {
        splitmix64(self.root() ^ (purpose as u64).wrapping_mul(0xA24B_AED4_963E_E407))
    }

    /// Independent generator for one subject and purpose.
    pub fn rng(&self, subject: usize, purpose: Purpose) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root());
        rng.set_stream(subject as u64 * PURPOSES + purpose as u64);
        rng
    }
}
