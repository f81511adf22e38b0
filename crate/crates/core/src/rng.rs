//! Deterministic random substreams.
//!
//! Every consumer of randomness (a block candidate, an RHT sign vector) gets its own
//! ChaCha8 stream keyed by `(seed, domain, index, tag)`, so results never depend on
//! the order in which blocks are processed or on the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codecs::{encode_fp4_rne, encode_fp4_stochastic, Fp4Code};
use crate::config::Rounding;
use crate::error::Result;

/// Key domains, so streams for different purposes never collide.
pub(crate) const DOMAIN_BLOCK: u64 = 0x424c_4f43_4b00_0001;
pub(crate) const DOMAIN_TILE: u64 = 0x5449_4c45_0000_0002;
pub(crate) const DOMAIN_RHT: u64 = 0x5248_5400_0000_0003;

pub(crate) fn substream(seed: u64, domain: u64, index: u64, tag: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..].copy_from_slice(&tag.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Derives an independent child seed, e.g. for the separate SR draws of one layer.
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    substream(seed, 0x5345_4544, purpose, 0).gen()
}

/// Rounding source for casting one block's values.
#[allow(clippy::large_enum_variant)]
pub enum ValueRounding {
    NearestEven,
    Stochastic(ChaCha8Rng),
}

impl ValueRounding {
    /// Stochastic rounding from an explicit seed.
    pub fn stochastic(seed: u64) -> Self {
        ValueRounding::Stochastic(ChaCha8Rng::seed_from_u64(seed))
    }

    /// The rounding used for candidate `target` (4 or 6) of a block.
    pub(crate) fn for_group(rounding: Rounding, domain: u64, index: u64, target: u8) -> Self {
        match rounding {
            Rounding::NearestEven => ValueRounding::NearestEven,
            Rounding::Stochastic { seed } => {
                ValueRounding::Stochastic(substream(seed, domain, index, target as u64))
            }
        }
    }

    #[inline]
    pub fn encode(&mut self, x: f64) -> Result<Fp4Code> {
        match self {
            ValueRounding::NearestEven => encode_fp4_rne(x),
            ValueRounding::Stochastic(rng) => {
                let u: f64 = rng.gen();
                encode_fp4_stochastic(x, u)
            }
        }
    }
}
