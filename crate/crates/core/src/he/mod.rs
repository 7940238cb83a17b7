//! Simulated-exact homomorphic encryption backend.
//!
//! Slots hold real numbers and arithmetic is exact; what is modeled
//! faithfully is the *access control* (decryption is key-gated and nothing
//! but [`HeContext::decrypt`] reads slot contents out of a ciphertext) and
//! the *cost accounting* of a leveled CKKS-like scheme: every multiplication
//! consumes one level of the multiplicative-depth budget and a bootstrap is
//! inserted automatically when the budget would be exceeded. Additions are
//! free. Ciphertext metadata (slot count, depth, bootstrap count) is
//! observable by any holder; slot contents are not.

mod codec;

pub use codec::IdCodec;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Parameters of the simulated scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeParams {
    /// Number of plaintext slots per ciphertext. Must be a power of two.
    pub slot_count: usize,
    /// Multiplications allowed on a ciphertext before a bootstrap is forced.
    pub depth_budget: u32,
    /// Fractional precision, in bits, applied when decrypting.
    pub fractional_precision: u32,
    /// Opaque label for the parameter set.
    pub security_tag: String,
    /// Depth consumed by one encrypted comparison.
    pub compare_depth_cost: u32,
}

impl Default for HeParams {
    fn default() -> Self {
        Self {
            slot_count: 1 << 15,
            depth_budget: 6,
            fractional_precision: 24,
            security_tag: "sim-128".to_string(),
            compare_depth_cost: 3,
        }
    }
}

impl HeParams {
    pub fn validate(&self) -> Result<(), HeError> {
        if self.slot_count == 0 || !self.slot_count.is_power_of_two() {
            return Err(HeError::InvalidParams(format!(
                "slot_count must be a power of two, got {}",
                self.slot_count
            )));
        }
        if self.depth_budget == 0 {
            return Err(HeError::InvalidParams("depth_budget must be >= 1".into()));
        }
        if self.compare_depth_cost == 0 || self.compare_depth_cost > self.depth_budget {
            return Err(HeError::InvalidParams(format!(
                "compare_depth_cost must be in 1..={}, got {}",
                self.depth_budget, self.compare_depth_cost
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum HeError {
    #[error("invalid HE parameters: {0}")]
    InvalidParams(String),
    #[error("key mismatch: ciphertext under key {ct_key}, operation used key {op_key}")]
    KeyMismatch { ct_key: KeyId, op_key: KeyId },
    #[error("plaintext vector of length {got} exceeds slot count {slot_count}")]
    ValueTooLong { got: usize, slot_count: usize },
    #[error("bit width mismatch: ciphertext has {ct_width} bits, operand has {operand_width}")]
    WidthMismatch { ct_width: usize, operand_width: usize },
    #[error("bit width {0} out of supported range 2..=63")]
    InvalidBitWidth(usize),
    #[error("value {value} does not fit in {width} bits")]
    ValueOutOfRange { value: u64, width: usize },
    #[error("no collision-free id salt found in {attempts} attempts at width {width}")]
    CodecExhausted { attempts: u64, width: usize },
}

/// Identity of a key pair; ciphertexts carry the id of the key that sealed
/// them and decryption succeeds only under the matching secret key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyId(u64);

impl std::fmt::Display for KeyId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// Serializable so the PNS can persist it inside its own model directory;
/// it never enters a transcript or another party's state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SecretKey {
    key_id: KeyId,
}

impl SecretKey {
    pub fn key_id(&self) -> KeyId {
        self.key_id
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PublicKey {
    key_id: KeyId,
}

impl PublicKey {
    pub fn key_id(&self) -> KeyId {
        self.key_id
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyPair {
    pub secret: SecretKey,
    pub public: PublicKey,
}

/// A sealed slot vector with depth metering.
///
/// Slots are stored as a dense prefix; slots past the prefix are implicitly
/// zero. The prefix length is a function of the circuit that produced the
/// ciphertext (input lengths and operations), never of the plaintext values,
/// so observable metadata and serialized size leak nothing about contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ciphertext {
    key_id: KeyId,
    logical_len: usize,
    prefix: Vec<f64>,
    depth: u32,
    bootstraps: u32,
}

impl Ciphertext {
    pub fn key_id(&self) -> KeyId {
        self.key_id
    }

    /// Logical slot count (always the parameter set's `slot_count`).
    pub fn len(&self) -> usize {
        self.logical_len
    }

    pub fn is_empty(&self) -> bool {
        self.logical_len == 0
    }

    /// Multiplicative depth consumed since encryption or last bootstrap.
    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Bootstraps applied along this ciphertext's lineage.
    pub fn bootstrap_count(&self) -> u32 {
        self.bootstraps
    }

    fn slot(&self, i: usize) -> f64 {
        self.prefix.get(i).copied().unwrap_or(0.0)
    }
}

/// One value encoded as `width` binary slots, each bit in its own ciphertext.
#[derive(Debug, Clone)]
pub struct BitCiphertext {
    bits: Vec<Ciphertext>,
}

impl BitCiphertext {
    pub fn width(&self) -> usize {
        self.bits.len()
    }

    pub fn key_id(&self) -> KeyId {
        self.bits[0].key_id
    }

    pub fn bits(&self) -> &[Ciphertext] {
        &self.bits
    }
}

/// Running totals of homomorphic work, shared by every clone of a context.
#[derive(Debug, Default)]
struct OpCounters {
    encrypts: AtomicU64,
    decrypts: AtomicU64,
    adds: AtomicU64,
    muls: AtomicU64,
    pets: AtomicU64,
    compares: AtomicU64,
    bootstraps: AtomicU64,
}

/// Point-in-time snapshot of the counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub encrypts: u64,
    pub decrypts: u64,
    pub adds: u64,
    pub muls: u64,
    pub pets: u64,
    pub compares: u64,
    pub bootstraps: u64,
}

impl OpCounts {
    /// Element-wise difference, for per-phase reporting.
    pub fn since(&self, earlier: &OpCounts) -> OpCounts {
        OpCounts {
            encrypts: self.encrypts - earlier.encrypts,
            decrypts: self.decrypts - earlier.decrypts,
            adds: self.adds - earlier.adds,
            muls: self.muls - earlier.muls,
            pets: self.pets - earlier.pets,
            compares: self.compares - earlier.compares,
            bootstraps: self.bootstraps - earlier.bootstraps,
        }
    }
}

/// Handle to the simulated scheme: parameters plus shared op counters.
///
/// Contexts are cheap to clone and safe to share across threads; all state
/// is immutable except the counters, which are atomic.
#[derive(Debug, Clone)]
pub struct HeContext {
    params: Arc<HeParams>,
    counters: Arc<OpCounters>,
}

impl HeContext {
    pub fn new(params: HeParams) -> Result<Self, HeError> {
        params.validate()?;
        Ok(Self {
            params: Arc::new(params),
            counters: Arc::new(OpCounters::default()),
        })
    }

    pub fn params(&self) -> &HeParams {
        &self.params
    }

    pub fn counters(&self) -> OpCounts {
        OpCounts {
            encrypts: self.counters.encrypts.load(Ordering::Relaxed),
            decrypts: self.counters.decrypts.load(Ordering::Relaxed),
            adds: self.counters.adds.load(Ordering::Relaxed),
            muls: self.counters.muls.load(Ordering::Relaxed),
            pets: self.counters.pets.load(Ordering::Relaxed),
            compares: self.counters.compares.load(Ordering::Relaxed),
            bootstraps: self.counters.bootstraps.load(Ordering::Relaxed),
        }
    }

    /// Generate a fresh key pair. Key ids come from the caller's RNG so runs
    /// are reproducible under a fixed seed; ids are unique per call with
    /// overwhelming probability.
    pub fn keygen(&self, rng: &mut impl RngCore) -> KeyPair {
        let key_id = KeyId(rng.next_u64());
        KeyPair {
            secret: SecretKey { key_id },
            public: PublicKey { key_id },
        }
    }

    pub fn encrypt(&self, pk: &PublicKey, values: &[f64]) -> Result<Ciphertext, HeError> {
        if values.len() > self.params.slot_count {
            return Err(HeError::ValueTooLong {
                got: values.len(),
                slot_count: self.params.slot_count,
            });
        }
        self.counters.encrypts.fetch_add(1, Ordering::Relaxed);
        Ok(Ciphertext {
            key_id: pk.key_id,
            logical_len: self.params.slot_count,
            prefix: values.to_vec(),
            depth: 0,
            bootstraps: 0,
        })
    }

    /// Read the full slot vector out of a ciphertext. The single point where
    /// slot contents cross the sealed boundary; requires the matching key.
    pub fn decrypt(&self, sk: &SecretKey, ct: &Ciphertext) -> Result<Vec<f64>, HeError> {
        self.check_key(sk.key_id, ct)?;
        self.counters.decrypts.fetch_add(1, Ordering::Relaxed);
        let q = (1u64 << self.params.fractional_precision) as f64;
        let mut out = vec![0.0; ct.logical_len];
        for (i, v) in ct.prefix.iter().enumerate() {
            out[i] = (v * q).round() / q;
        }
        Ok(out)
    }

    /// Decrypt a single slot without materializing the full vector.
    pub fn decrypt_slot(&self, sk: &SecretKey, ct: &Ciphertext, slot: usize) -> Result<f64, HeError> {
        self.check_key(sk.key_id, ct)?;
        self.counters.decrypts.fetch_add(1, Ordering::Relaxed);
        let q = (1u64 << self.params.fractional_precision) as f64;
        Ok((ct.slot(slot) * q).round() / q)
    }

    fn check_key(&self, op_key: KeyId, ct: &Ciphertext) -> Result<(), HeError> {
        if ct.key_id != op_key {
            return Err(HeError::KeyMismatch {
                ct_key: ct.key_id,
                op_key,
            });
        }
        Ok(())
    }

    fn check_pair(&self, a: &Ciphertext, b: &Ciphertext) -> Result<(), HeError> {
        if a.key_id != b.key_id {
            return Err(HeError::KeyMismatch {
                ct_key: a.key_id,
                op_key: b.key_id,
            });
        }
        Ok(())
    }

    /// Slot-wise sum of two ciphertexts. Additions never consume depth.
    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        self.check_pair(a, b)?;
        self.counters.adds.fetch_add(1, Ordering::Relaxed);
        let n = a.prefix.len().max(b.prefix.len());
        let mut prefix = Vec::with_capacity(n);
        for i in 0..n {
            prefix.push(a.slot(i) + b.slot(i));
        }
        Ok(Ciphertext {
            key_id: a.key_id,
            logical_len: a.logical_len,
            prefix,
            depth: a.depth.max(b.depth),
            bootstraps: a.bootstraps.max(b.bootstraps),
        })
    }

    /// Slot-wise sum of a ciphertext and a plaintext vector.
    pub fn add_plain(&self, a: &Ciphertext, plain: &[f64]) -> Result<Ciphertext, HeError> {
        if plain.len() > self.params.slot_count {
            return Err(HeError::ValueTooLong {
                got: plain.len(),
                slot_count: self.params.slot_count,
            });
        }
        self.counters.adds.fetch_add(1, Ordering::Relaxed);
        let n = a.prefix.len().max(plain.len());
        let mut prefix = Vec::with_capacity(n);
        for i in 0..n {
            prefix.push(a.slot(i) + plain.get(i).copied().unwrap_or(0.0));
        }
        Ok(Ciphertext {
            key_id: a.key_id,
            logical_len: a.logical_len,
            prefix,
            depth: a.depth,
            bootstraps: a.bootstraps,
        })
    }

    /// Slot-wise `plain - ct`. Subtraction is addition-class: no depth cost.
    pub fn sub_from_plain(&self, plain: &[f64], a: &Ciphertext) -> Result<Ciphertext, HeError> {
        if plain.len() > self.params.slot_count {
            return Err(HeError::ValueTooLong {
                got: plain.len(),
                slot_count: self.params.slot_count,
            });
        }
        self.counters.adds.fetch_add(1, Ordering::Relaxed);
        let n = a.prefix.len().max(plain.len());
        let mut prefix = Vec::with_capacity(n);
        for i in 0..n {
            prefix.push(plain.get(i).copied().unwrap_or(0.0) - a.slot(i));
        }
        Ok(Ciphertext {
            key_id: a.key_id,
            logical_len: a.logical_len,
            prefix,
            depth: a.depth,
            bootstraps: a.bootstraps,
        })
    }

    fn mul_depth(&self, base: u32, base_boots: u32) -> (u32, u32, bool) {
        if base + 1 > self.params.depth_budget {
            // Budget exhausted: bootstrap first, then multiply.
            (1, base_boots + 1, true)
        } else {
            (base + 1, base_boots, false)
        }
    }

    /// Slot-wise product of two ciphertexts. Consumes one depth level; a
    /// bootstrap is inserted first when the budget would be exceeded.
    pub fn mul(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        self.check_pair(a, b)?;
        self.counters.muls.fetch_add(1, Ordering::Relaxed);
        let (depth, boots, bootstrapped) =
            self.mul_depth(a.depth.max(b.depth), a.bootstraps.max(b.bootstraps));
        if bootstrapped {
            self.counters.bootstraps.fetch_add(1, Ordering::Relaxed);
        }
        let n = a.prefix.len().min(b.prefix.len());
        let mut prefix = Vec::with_capacity(n);
        for i in 0..n {
            prefix.push(a.slot(i) * b.slot(i));
        }
        Ok(Ciphertext {
            key_id: a.key_id,
            logical_len: a.logical_len,
            prefix,
            depth,
            bootstraps: boots,
        })
    }

    /// Slot-wise product with a plaintext vector. Costs depth like any
    /// multiply.
    pub fn mul_plain(&self, a: &Ciphertext, plain: &[f64]) -> Result<Ciphertext, HeError> {
        if plain.len() > self.params.slot_count {
            return Err(HeError::ValueTooLong {
                got: plain.len(),
                slot_count: self.params.slot_count,
            });
        }
        self.counters.muls.fetch_add(1, Ordering::Relaxed);
        let (depth, boots, bootstrapped) = self.mul_depth(a.depth, a.bootstraps);
        if bootstrapped {
            self.counters.bootstraps.fetch_add(1, Ordering::Relaxed);
        }
        let n = a.prefix.len().min(plain.len());
        let prefix = a.prefix[..n]
            .iter()
            .zip(&plain[..n])
            .map(|(x, y)| x * y)
            .collect();
        Ok(Ciphertext {
            key_id: a.key_id,
            logical_len: a.logical_len,
            prefix,
            depth,
            bootstraps: boots,
        })
    }

    /// Encode `value` as `width` bit ciphertexts, least-significant first.
    pub fn encrypt_bits(
        &self,
        pk: &PublicKey,
        value: u64,
        width: usize,
    ) -> Result<BitCiphertext, HeError> {
        if !(1..=63).contains(&width) {
            return Err(HeError::InvalidBitWidth(width));
        }
        if value >> width != 0 {
            return Err(HeError::ValueOutOfRange { value, width });
        }
        let bits = (0..width)
            .map(|i| self.encrypt(pk, &[((value >> i) & 1) as f64]))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BitCiphertext { bits })
    }

    /// Private equality test between an encrypted value and a plain one,
    /// both `width` bits wide: the binary circuit `(prod_i (1 - a_i - b_i))^2`,
    /// which decrypts to 1 iff the values are equal and 0 otherwise.
    ///
    /// The inner product is evaluated as a balanced tree, so the circuit
    /// consumes `ceil(log2 width) + 1` depth.
    pub fn pet(&self, a: &BitCiphertext, plain: u64, width: usize) -> Result<Ciphertext, HeError> {
        if a.width() != width {
            return Err(HeError::WidthMismatch {
                ct_width: a.width(),
                operand_width: width,
            });
        }
        self.counters.pets.fetch_add(1, Ordering::Relaxed);
        let mut factors = Vec::with_capacity(width);
        for (i, bit_ct) in a.bits.iter().enumerate() {
            let b_i = ((plain >> i) & 1) as f64;
            factors.push(self.sub_from_plain(&[1.0 - b_i], bit_ct)?);
        }
        while factors.len() > 1 {
            let mut next = Vec::with_capacity(factors.len().div_ceil(2));
            let mut iter = factors.chunks(2);
            for pair in &mut iter {
                match pair {
                    [x, y] => next.push(self.mul(x, y)?),
                    [x] => next.push(x.clone()),
                    _ => unreachable!(),
                }
            }
            factors = next;
        }
        let product = factors.pop().expect("width >= 1");
        self.mul(&product, &product)
    }

    /// Encrypted strict comparison on slot 0: decrypts to 1 if
    /// `slot0(a) > slot0(b)`, else 0 (ties give 0). Stands in for the
    /// scheme's comparison circuits at a configured depth cost.
    pub fn compare(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        self.check_pair(a, b)?;
        self.counters.compares.fetch_add(1, Ordering::Relaxed);
        let base = a.depth.max(b.depth);
        let base_boots = a.bootstraps.max(b.bootstraps);
        let cost = self.params.compare_depth_cost;
        let (depth, boots) = if base + cost > self.params.depth_budget {
            self.counters.bootstraps.fetch_add(1, Ordering::Relaxed);
            (cost, base_boots + 1)
        } else {
            (base + cost, base_boots)
        };
        let value = if a.slot(0) > b.slot(0) { 1.0 } else { 0.0 };
        Ok(Ciphertext {
            key_id: a.key_id,
            logical_len: a.logical_len,
            prefix: vec![value],
            depth,
            bootstraps: boots,
        })
    }

    /// A fresh encryption of zero, usable as an accumulator seed by any
    /// party holding the public key.
    pub fn encrypt_zero(&self, pk: &PublicKey) -> Result<Ciphertext, HeError> {
        self.encrypt(pk, &[0.0])
    }
}

#[cfg(test)]
mod tests;
