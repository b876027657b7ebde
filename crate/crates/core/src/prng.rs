//! Keyed, domain-separated pseudo-random streams.
//!
//! Every random quantity in the codec (equalizing bits, shuffles, sampling
//! uniforms, channel noise) is drawn from a ChaCha20 keystream whose key is
//! `SHA-256(label || seed || tag)`. Distinct tags give independent streams;
//! the same `(seed, tag)` always reproduces the same stream.

use std::fmt;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{Result, SkedaError};

const STREAM_LABEL: &[u8] = b"skeda/stream/v1";
const DERIVE_LABEL: &[u8] = b"skeda/derive/v1";

/// 32-byte master secret.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Seed(pub [u8; 32]);

impl Seed {
    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s.trim())
            .map_err(|e| SkedaError::DomainError(format!("seed hex: {e}")))?;
        let arr: [u8; 32] = bytes.try_into().map_err(|b: Vec<u8>| {
            SkedaError::DomainError(format!("seed must be 32 bytes, got {}", b.len()))
        })?;
        Ok(Seed(arr))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Child seed for `(tag, index)`. Used for per-trial and per-stage seeds.
    pub fn derive(&self, tag: &[u8], index: u64) -> Seed {
        let mut h = Sha256::new();
        h.update(DERIVE_LABEL);
        h.update(self.0);
        h.update((tag.len() as u64).to_le_bytes());
        h.update(tag);
        h.update(index.to_le_bytes());
        Seed(h.finalize().into())
    }
}

// Never print secrets in debug output.
impl fmt::Debug for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Seed({}..)", &self.to_hex()[..8])
    }
}

/// Deterministic uniform stream bound to a `(seed, tag)` pair.
#[derive(Clone)]
pub struct PrngStream {
    rng: ChaCha20Rng,
    bit_buf: u64,
    bits_left: u32,
}

impl PrngStream {
    pub fn new(seed: &Seed, tag: &[u8]) -> Self {
        let mut h = Sha256::new();
        h.update(STREAM_LABEL);
        h.update(seed.0);
        h.update((tag.len() as u64).to_le_bytes());
        h.update(tag);
        let key: [u8; 32] = h.finalize().into();
        PrngStream {
            rng: ChaCha20Rng::from_seed(key),
            bit_buf: 0,
            bits_left: 0,
        }
    }

    /// Stream for a tag suffixed with a little-endian index.
    pub fn indexed(seed: &Seed, tag: &[u8], index: u64) -> Self {
        let mut t = tag.to_vec();
        t.push(b'/');
        t.extend_from_slice(&index.to_le_bytes());
        Self::new(seed, &t)
    }

    pub fn next_bit(&mut self) -> u8 {
        if self.bits_left == 0 {
            self.bit_buf = self.rng.next_u64();
            self.bits_left = 64;
        }
        let b = (self.bit_buf & 1) as u8;
        self.bit_buf >>= 1;
        self.bits_left -= 1;
        b
    }

    /// Uniform real strictly inside `(2^-53, 1 - 2^-53)`, 53-bit resolution.
    pub fn next_open01(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        const MAX: u64 = (1u64 << 53) - 1;
        loop {
            let k = self.rng.next_u64() >> 11;
            if k > 1 && k < MAX {
                return k as f64 * SCALE;
            }
        }
    }

    /// Unbiased integer in `[0, bound)` by rejection. `bound` must be nonzero.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.rng.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }

    /// Fisher–Yates shuffle of `0..n` driven by this stream.
    pub fn permutation(&mut self, n: usize) -> Vec<u32> {
        let mut perm: Vec<u32> = (0..n as u32).collect();
        for i in (1..n).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            perm.swap(i, j);
        }
        perm
    }
}

impl RngCore for PrngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
