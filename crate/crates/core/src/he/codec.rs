//! Account-id encoding for private equality tests.
//!
//! Account identifiers are strings; equality tests under encryption run on
//! fixed-width bit strings. The codec hashes ids to `width - 1` bit codes
//! with a shared salt, keeping the top half of the code space reserved for
//! padding dummies so a dummy can never collide with a real account. The
//! salt is searched until the mapping is injective over the given id
//! universe, which restores the exactness of comparing full account numbers.

use std::collections::HashSet;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::HeError;
use crate::seedstream;

const MAX_SALT_ATTEMPTS: u64 = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdCodec {
    salt: u64,
    width: usize,
}

impl IdCodec {
    /// Rebuild a codec from persisted parameters (model reload).
    pub fn from_parts(salt: u64, width: usize) -> Result<Self, HeError> {
        if !(2..=63).contains(&width) {
            return Err(HeError::InvalidBitWidth(width));
        }
        Ok(Self { salt, width })
    }

    /// Search for a salt that maps every id in `universe` to a distinct
    /// code. Deterministic in `seed`.
    pub fn with_injective_salt<'a>(
        width: usize,
        universe: impl IntoIterator<Item = &'a str>,
        seed: u64,
    ) -> Result<Self, HeError> {
        if !(2..=63).contains(&width) {
            return Err(HeError::InvalidBitWidth(width));
        }
        let mut ids: Vec<&str> = universe.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        if width < 63 && ids.len() as u64 > (1u64 << (width - 1)) {
            // Pigeonhole: no salt can be injective.
            return Err(HeError::CodecExhausted { attempts: 0, width });
        }
        let mut rng = seedstream::rng(seed, "id-codec-salt", 0);
        for attempt in 0..MAX_SALT_ATTEMPTS {
            let salt = rng.next_u64();
            let codec = Self { salt, width };
            let mut seen = HashSet::with_capacity(ids.len());
            if ids.iter().all(|id| seen.insert(codec.encode(id))) {
                return Ok(codec);
            }
            let _ = attempt;
        }
        Err(HeError::CodecExhausted {
            attempts: MAX_SALT_ATTEMPTS,
            width,
        })
    }

    /// Code for an account id, in `[0, 2^(width-1))`.
    pub fn encode(&self, id: &str) -> u64 {
        let mut bytes = Vec::with_capacity(8 + id.len());
        bytes.extend_from_slice(&self.salt.to_le_bytes());
        bytes.extend_from_slice(id.as_bytes());
        seedstream::hash_bytes(&bytes) & (real_code_mask(self.width))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn salt(&self) -> u64 {
        self.salt
    }

    /// First code of the reserved dummy range `[2^(width-1), 2^width)`.
    pub fn dummy_base(&self) -> u64 {
        1u64 << (self.width - 1)
    }

    /// A dummy code, drawn from the reserved range.
    pub fn dummy_code(&self, rng: &mut impl RngCore) -> u64 {
        self.dummy_base() | (rng.next_u64() & real_code_mask(self.width))
    }
}

fn real_code_mask(width: usize) -> u64 {
    (1u64 << (width - 1)) - 1
}
