//! Embedding: equalize → replicate → shuffle → distribution-preserving sampling.

use crate::error::{Result, SkedaError};
use crate::keys::{KeySet, LatentDims, ReplicationFactors};
use crate::latent::LatentTensor;
use crate::ppf::ppf_unchecked;
use crate::prng::{PrngStream, Seed};

const TAG_SAMPLE: &[u8] = b"sample";

/// Message bits, one `u8` in `{0, 1}` per bit.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WatermarkMessage {
    bits: Vec<u8>,
}

impl WatermarkMessage {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(SkedaError::DomainError(format!("bit value {b} not in {{0,1}}")));
        }
        Ok(WatermarkMessage { bits })
    }

    pub fn zeros(n: usize) -> Self {
        WatermarkMessage { bits: vec![0; n] }
    }

    pub fn random(stream: &mut PrngStream, n: usize) -> Self {
        WatermarkMessage {
            bits: (0..n).map(|_| stream.next_bit()).collect(),
        }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Parse `ceil(n_bits/8)` bytes of hex, MSB first. Padding bits must be zero.
    pub fn from_hex(s: &str, n_bits: usize) -> Result<Self> {
        let bytes = hex::decode(s.trim())
            .map_err(|e| SkedaError::DomainError(format!("message hex: {e}")))?;
        let need = n_bits.div_ceil(8);
        if bytes.len() != need {
            return Err(SkedaError::LengthMismatch {
                expected: n_bits,
                actual: bytes.len() * 8,
            });
        }
        let mut bits = Vec::with_capacity(need * 8);
        for byte in &bytes {
            for k in (0..8).rev() {
                bits.push((byte >> k) & 1);
            }
        }
        if bits[n_bits..].iter().any(|&b| b != 0) {
            return Err(SkedaError::DomainError("nonzero padding bits in message hex".into()));
        }
        bits.truncate(n_bits);
        Ok(WatermarkMessage { bits })
    }

    pub fn to_hex(&self) -> String {
        let bytes: Vec<u8> = self
            .bits
            .chunks(8)
            .map(|c| c.iter().enumerate().fold(0u8, |acc, (k, &b)| acc | (b << (7 - k))))
            .collect();
        hex::encode(bytes)
    }
}

/// Binary tensor congruent to a latent, one `u8` per element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitField {
    dims: LatentDims,
    data: Vec<u8>,
}

impl BitField {
    pub fn new(dims: LatentDims, data: Vec<u8>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(SkedaError::LengthMismatch {
                expected: dims.len(),
                actual: data.len(),
            });
        }
        Ok(BitField { dims, data })
    }

    pub fn dims(&self) -> LatentDims {
        self.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.dims.frame_len();
        &self.data[t * n..(t + 1) * n]
    }
}

/// Bitwise XOR with the equalizing key. An involution.
pub fn equalize(msg: &WatermarkMessage, key: &[u8]) -> Result<WatermarkMessage> {
    if msg.len() != key.len() {
        return Err(SkedaError::LengthMismatch {
            expected: key.len(),
            actual: msg.len(),
        });
    }
    Ok(WatermarkMessage {
        bits: msg.bits.iter().zip(key).map(|(a, b)| a ^ b).collect(),
    })
}

/// Row-major index of the message bit carried at latent position `(t, c, y, x)`.
///
/// The message is laid out as `(f/k_f, c/f_c, h/f_h, w/f_w)` and tiled along
/// every axis, so each coordinate reduces modulo the message extent.
#[inline]
pub fn message_index(shape: &[usize; 4], t: usize, c: usize, y: usize, x: usize) -> usize {
    (((t % shape[0]) * shape[1] + c % shape[1]) * shape[2] + y % shape[2]) * shape[3] + x % shape[3]
}

pub fn replicate(
    msg: &WatermarkMessage,
    dims: LatentDims,
    factors: ReplicationFactors,
) -> Result<BitField> {
    factors.check(&dims)?;
    let shape = factors.message_shape(&dims);
    let n_bits: usize = shape.iter().product();
    if msg.len() != n_bits {
        return Err(SkedaError::LengthMismatch {
            expected: n_bits,
            actual: msg.len(),
        });
    }
    let mut data = Vec::with_capacity(dims.len());
    for t in 0..dims.f {
        for c in 0..dims.c {
            for y in 0..dims.h {
                for x in 0..dims.w {
                    data.push(msg.bits[message_index(&shape, t, c, y, x)]);
                }
            }
        }
    }
    Ok(BitField { dims, data })
}

fn check_shape(dims: LatentDims, ks: &KeySet) -> Result<()> {
    let kd = ks.dims();
    if dims.frame_len() != kd.frame_len() || dims.f > kd.f {
        return Err(SkedaError::ShapeMismatch(format!(
            "bit field {:?} incompatible with key dims {:?}",
            dims.as_array(),
            kd.as_array()
        )));
    }
    Ok(())
}

/// Permute each frame's flattened positions: `out[i] = in[perm_t[i]]`.
pub fn shuffle(bf: &BitField, ks: &KeySet) -> Result<BitField> {
    check_shape(bf.dims, ks)?;
    let n = bf.dims.frame_len();
    let mut data = vec![0u8; bf.data.len()];
    for t in 0..bf.dims.f {
        let perm = ks.frame_perm(t);
        let src = bf.frame(t);
        for (o, &p) in data[t * n..(t + 1) * n].iter_mut().zip(perm) {
            *o = src[p as usize];
        }
    }
    Ok(BitField { dims: bf.dims, data })
}

/// Inverse of [`shuffle`]: `out[perm_t[i]] = in[i]`.
pub fn unshuffle(bf: &BitField, ks: &KeySet) -> Result<BitField> {
    check_shape(bf.dims, ks)?;
    let n = bf.dims.frame_len();
    let mut data = vec![0u8; bf.data.len()];
    for t in 0..bf.dims.f {
        let perm = ks.frame_perm(t);
        let dst = &mut data[t * n..(t + 1) * n];
        for (&v, &p) in bf.frame(t).iter().zip(perm) {
            dst[p as usize] = v;
        }
    }
    Ok(BitField { dims: bf.dims, data })
}

/// Draw one latent value carrying `bit`, given a uniform `u ∈ (0, 1)`.
///
/// `α = Φ⁻¹((bit + u)/2)`: bit 0 lands in `(-∞, 0)`, bit 1 in `(0, ∞)`, each
/// with half-normal density. The bit-1 branch is evaluated through symmetry
/// so that `(1 + u)/2` never rounds onto the median.
#[inline]
pub fn sample_element(bit: u8, u: f64) -> f64 {
    if bit == 0 {
        ppf_unchecked(0.5 * u)
    } else {
        -ppf_unchecked(0.5 * (1.0 - u))
    }
}

pub fn sample_latent(bf: &BitField, stream: &mut PrngStream) -> LatentTensor {
    let data = bf
        .data
        .iter()
        .map(|&b| sample_element(b, stream.next_open01()) as f32)
        .collect();
    LatentTensor::new(bf.dims, data).expect("sampled tensor matches bit field")
}

/// Sampling stream for the `nonce`-th video generated under `seed`.
pub fn sampling_stream(seed: &Seed, nonce: u64) -> PrngStream {
    PrngStream::indexed(seed, TAG_SAMPLE, nonce)
}

/// Full embedding pipeline producing the watermarked initial latent.
pub fn embed(msg: &WatermarkMessage, ks: &KeySet, stream: &mut PrngStream) -> Result<LatentTensor> {
    let equalized = equalize(msg, ks.equalizing_key())?;
    let field = replicate(&equalized, ks.dims(), ks.factors())?;
    let shuffled = shuffle(&field, ks)?;
    Ok(sample_latent(&shuffled, stream))
}
