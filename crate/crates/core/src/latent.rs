//! Latent tensors and the `SKDL` binary file format.
//!
//! Layout: magic `SKDL`, `u32` version, `u32` ndim (= 4), four `u32` dims
//! `(f, c, h, w)`, then `f·c·h·w` little-endian `f32` in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Result, SkedaError};
use crate::keys::LatentDims;

pub const LATENT_MAGIC: &[u8; 4] = b"SKDL";
pub const LATENT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 16;

/// Real-valued `(f, c, h, w)` tensor. The frame count may differ from the
/// embedding dims after frame drops.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTensor {
    dims: LatentDims,
    data: Vec<f32>,
}

impl LatentTensor {
    pub fn new(dims: LatentDims, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(SkedaError::LengthMismatch {
                expected: dims.len(),
                actual: data.len(),
            });
        }
        Ok(LatentTensor { dims, data })
    }

    pub fn zeros(dims: LatentDims) -> Self {
        LatentTensor {
            dims,
            data: vec![0.0; dims.len()],
        }
    }

    /// Stack equally-sized frames.
    pub fn from_frames<I, F>(c: usize, h: usize, w: usize, frames: I) -> Result<Self>
    where
        I: IntoIterator<Item = F>,
        F: AsRef<[f32]>,
    {
        let frame_len = c * h * w;
        let mut data = Vec::new();
        let mut f = 0;
        for fr in frames {
            let fr = fr.as_ref();
            if fr.len() != frame_len {
                return Err(SkedaError::ShapeMismatch(format!(
                    "frame {f} has {} elements, expected {frame_len}",
                    fr.len()
                )));
            }
            data.extend_from_slice(fr);
            f += 1;
        }
        Ok(LatentTensor {
            dims: LatentDims::new(f, c, h, w),
            data,
        })
    }

    pub fn dims(&self) -> LatentDims {
        self.dims
    }

    pub fn frames(&self) -> usize {
        self.dims.f
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.dims.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        let n = self.dims.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn frame_iter(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        // chunks_exact panics on 0; frame_len is positive for any valid dims
        self.data.chunks_exact(self.dims.frame_len().max(1))
    }

    /// New tensor holding frames in the given order (indices may repeat).
    pub fn select_frames(&self, order: &[usize]) -> LatentTensor {
        let mut data = Vec::with_capacity(order.len() * self.dims.frame_len());
        for &t in order {
            data.extend_from_slice(self.frame(t));
        }
        LatentTensor {
            dims: self.dims.with_frames(order.len()),
            data,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(LATENT_MAGIC);
        out.extend_from_slice(&LATENT_VERSION.to_le_bytes());
        out.extend_from_slice(&4u32.to_le_bytes());
        for d in self.dims.as_array() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| SkedaError::MalformedLatentFile(m.to_string());
        if bytes.len() < 12 {
            return Err(bad("file shorter than header"));
        }
        if &bytes[..4] != LATENT_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != LATENT_VERSION {
            return Err(SkedaError::VersionMismatch {
                found: version as u64,
                expected: LATENT_VERSION as u64,
            });
        }
        if u32_at(8) != 4 {
            return Err(bad("ndim must be 4"));
        }
        if bytes.len() < HEADER_LEN {
            return Err(bad("file shorter than header"));
        }
        let dims = LatentDims::new(
            u32_at(12) as usize,
            u32_at(16) as usize,
            u32_at(20) as usize,
            u32_at(24) as usize,
        );
        let body = &bytes[HEADER_LEN..];
        if body.len() != 4 * dims.len() {
            return Err(bad(&format!(
                "payload has {} bytes, dims {:?} need {}",
                body.len(),
                dims.as_array(),
                4 * dims.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(LatentTensor { dims, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
