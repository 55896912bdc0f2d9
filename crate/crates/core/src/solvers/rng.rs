use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Key of one random stream: `(seed, region, outer iteration, inner
/// iteration)`. Each key seeds its own ChaCha generator, so a region solve
/// draws the same numbers no matter which thread runs it or in what order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct StreamKey {
    pub seed: u64,
    pub region: u64,
    pub outer: u64,
    pub inner: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn region(self, id: &str) -> Self {
        Self {
            region: fnv1a(id.as_bytes()),
            ..self
        }
    }

    pub fn outer(self, outer: u64) -> Self {
        Self { outer, ..self }
    }

    pub fn inner(self, inner: u64) -> Self {
        Self { inner, ..self }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        for (chunk, word) in key.chunks_mut(8).zip([self.seed, self.region, self.outer, self.inner]) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}
