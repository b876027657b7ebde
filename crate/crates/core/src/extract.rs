//! Message recovery from a possibly distorted, reordered or shortened latent
//! stack.
//!
//! Pipeline: sign-decode each frame, weight frames by inter-frame similarity
//! (reference-frame cosine plus total pairwise cosine, softmax-normalized),
//! take the weighted vote per position, undo the shuffle, average the copies
//! of each bit, threshold at 0.5 and remove the equalizing key.

use serde::Serialize;

use crate::codec::{message_index, WatermarkMessage};
use crate::error::{Result, SkedaError};
use crate::keys::{KeyMode, KeySet, LatentDims, ReplicationFactors};
use crate::latent::LatentTensor;

/// Hard sign decode: `1` iff the value is strictly positive.
pub fn decode_frame(frame: &[f32]) -> Result<Vec<u8>> {
    frame
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v.is_finite() {
                Ok((v > 0.0) as u8)
            } else {
                Err(SkedaError::NonFiniteInput(i))
            }
        })
        .collect()
}

/// Similarity scores for the received frames.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DAScores {
    /// Cosine similarity of each frame to the first received frame.
    pub reference: Vec<f64>,
    /// Pairwise cosine matrix, row-major `f' × f'`.
    pub pairwise: Vec<f64>,
    pub frames: usize,
}

impl DAScores {
    pub fn pair(&self, j: usize, i: usize) -> f64 {
        self.pairwise[j * self.frames + i]
    }

    /// `S_t + Σ_i A_{t,i}` per frame.
    pub fn combined(&self) -> Vec<f64> {
        (0..self.frames)
            .map(|t| {
                let row = &self.pairwise[t * self.frames..(t + 1) * self.frames];
                self.reference[t] + row.iter().sum::<f64>()
            })
            .collect()
    }
}

/// Cosine similarities between flattened frames. Zero-norm frames score 0.
pub fn da_scores<F: AsRef<[f32]>>(frames: &[F]) -> Result<DAScores> {
    if frames.is_empty() {
        return Err(SkedaError::EmptyInput);
    }
    let n = frames.len();
    let mut gram = vec![0.0f64; n * n];
    for j in 0..n {
        for i in j..n {
            let d = dot(frames[j].as_ref(), frames[i].as_ref());
            gram[j * n + i] = d;
            gram[i * n + j] = d;
        }
    }
    let norms: Vec<f64> = (0..n).map(|t| gram[t * n + t].sqrt()).collect();
    let mut pairwise = vec![0.0f64; n * n];
    for j in 0..n {
        for i in 0..n {
            let denom = norms[j] * norms[i];
            pairwise[j * n + i] = if denom > 0.0 {
                (gram[j * n + i] / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            };
        }
    }
    let reference = (0..n).map(|t| pairwise[t]).collect();
    Ok(DAScores {
        reference,
        pairwise,
        frames: n,
    })
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    // f32 partial sums over short blocks, accumulated in f64
    a.chunks(64)
        .zip(b.chunks(64))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f32>() as f64)
        .sum()
}

/// Nonnegative per-frame weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameWeights {
    pub w: Vec<f64>,
    /// Set for the `1/f'` fallback; aggregation then counts votes exactly.
    #[serde(skip)]
    pub uniform: bool,
}

impl FrameWeights {
    pub fn uniform(n: usize) -> Self {
        FrameWeights {
            w: vec![1.0 / n as f64; n],
            uniform: true,
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> FrameWeights {
        if self.uniform {
            return FrameWeights::uniform(idx.len());
        }
        let total: f64 = idx.iter().map(|&t| self.w[t]).sum();
        FrameWeights {
            w: idx.iter().map(|&t| self.w[t] / total).collect(),
            uniform: false,
        }
    }
}

/// Numerically stable softmax.
pub fn softmax_weights(scores: &[f64]) -> FrameWeights {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = e.iter().sum();
    FrameWeights {
        w: e.iter().map(|v| v / total).collect(),
        uniform: false,
    }
}

pub fn da_weights(scores: &DAScores) -> FrameWeights {
    softmax_weights(&scores.combined())
}

/// Weighted vote per position over one frame's `(c, h, w)` grid, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftBitField {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

pub fn aggregate_frames<B: AsRef<[u8]>>(
    bitfields: &[B],
    weights: &FrameWeights,
    shape: (usize, usize, usize),
) -> Result<SoftBitField> {
    let (c, h, w) = shape;
    let n = c * h * w;
    if bitfields.len() != weights.len() {
        return Err(SkedaError::ShapeMismatch(format!(
            "{} frames but {} weights",
            bitfields.len(),
            weights.len()
        )));
    }
    if let Some(bad) = bitfields.iter().position(|b| b.as_ref().len() != n) {
        return Err(SkedaError::ShapeMismatch(format!("frame {bad} does not have {n} elements")));
    }
    let data = if weights.uniform {
        let mut counts = vec![0u32; n];
        for b in bitfields {
            for (cnt, &bit) in counts.iter_mut().zip(b.as_ref()) {
                *cnt += bit as u32;
            }
        }
        let f = bitfields.len() as f64;
        counts.into_iter().map(|k| k as f64 / f).collect()
    } else {
        let mut acc = vec![0.0f64; n];
        for (b, &wt) in bitfields.iter().zip(&weights.w) {
            for (a, &bit) in acc.iter_mut().zip(b.as_ref()) {
                if bit != 0 {
                    *a += wt;
                }
            }
        }
        acc.into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
    };
    Ok(SoftBitField { c, h, w, data })
}

/// Per-bit mean of the copy values, length `n_bits`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockScores {
    pub m: Vec<f64>,
}

/// Average the spatial copies of every bit.
///
/// `groups[g]` holds the unshuffled vote for frame group `g` (frames
/// `t ≡ g mod f/k_f`); frame copies were already merged by the vote. A
/// `None` group had no received frames and scores 0.5 for all its bits.
pub fn block_scores(
    groups: &[Option<SoftBitField>],
    dims: LatentDims,
    factors: ReplicationFactors,
) -> Result<BlockScores> {
    factors.check(&dims)?;
    let shape = factors.message_shape(&dims);
    if groups.len() != shape[0] {
        return Err(SkedaError::ShapeMismatch(format!(
            "{} frame groups, expected {}",
            groups.len(),
            shape[0]
        )));
    }
    let per_group = shape[1] * shape[2] * shape[3];
    let copies = factors.spatial_copies() as f64;
    let mut m = vec![0.5f64; shape[0] * per_group];
    for (g, soft) in groups.iter().enumerate() {
        let Some(soft) = soft else { continue };
        if (soft.c, soft.h, soft.w) != (dims.c, dims.h, dims.w) {
            return Err(SkedaError::ShapeMismatch(format!(
                "soft field ({},{},{}) vs dims ({},{},{})",
                soft.c, soft.h, soft.w, dims.c, dims.h, dims.w
            )));
        }
        let out = &mut m[g * per_group..(g + 1) * per_group];
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut i = 0;
        for c in 0..dims.c {
            for y in 0..dims.h {
                for x in 0..dims.w {
                    out[message_index(&shape, 0, c, y, x)] += soft.data[i];
                    i += 1;
                }
            }
        }
        out.iter_mut().for_each(|v| *v = (*v / copies).clamp(0.0, 1.0));
    }
    Ok(BlockScores { m })
}

/// Scores within this distance of 0.5 count as ties. Weighted votes sum
/// weights that add to one only up to rounding.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Threshold at 0.5 (ties to 0) and XOR with the equalizing key.
pub fn decide_bits(scores: &BlockScores, equalizing_key: &[u8]) -> Result<WatermarkMessage> {
    if scores.m.len() != equalizing_key.len() {
        return Err(SkedaError::LengthMismatch {
            expected: equalizing_key.len(),
            actual: scores.m.len(),
        });
    }
    let bits = scores
        .m
        .iter()
        .zip(equalizing_key)
        .map(|(&m, &k)| ((m > 0.5 + TIE_TOLERANCE) as u8) ^ k)
        .collect();
    WatermarkMessage::new(bits)
}

/// Spatial message-bit index for each position of one frame.
fn spatial_bit_index(dims: LatentDims, factors: ReplicationFactors) -> Vec<u32> {
    let shape = factors.message_shape(&dims);
    let mut idx = Vec::with_capacity(dims.frame_len());
    for c in 0..dims.c {
        for y in 0..dims.h {
            for x in 0..dims.w {
                idx.push(message_index(&shape, 0, c, y, x) as u32);
            }
        }
    }
    idx
}

fn consistency(frame_bits: &[u8], perm: &[u32], bit_index: &[u32], counts: &mut [u32], copies: u32) -> f64 {
    counts.iter_mut().for_each(|c| *c = 0);
    for (&b, &p) in frame_bits.iter().zip(perm) {
        counts[bit_index[p as usize] as usize] += b as u32;
    }
    let total: u64 = counts.iter().map(|&k| k.max(copies - k) as u64).sum();
    total as f64 / (counts.len() as f64 * copies as f64)
}

/// Which frame permutation produced this sign-decoded frame.
///
/// Each candidate inverse permutation is scored by how unanimously the copies
/// of every bit agree (mean of `max(p, 1-p)` over bits, `p` the ones-fraction
/// of the bit's copies). The true permutation scores 1.0 on a clean frame.
/// Ties go to the lowest frame index.
pub fn identify_frame_permutation(frame_bits: &[u8], ks: &KeySet) -> (usize, f64) {
    let dims = ks.dims();
    let factors = ks.factors();
    let bit_index = spatial_bit_index(dims, factors);
    let per_frame_bits = factors.message_shape(&dims)[1..].iter().product::<usize>();
    let mut counts = vec![0u32; per_frame_bits];
    let copies = factors.spatial_copies() as u32;
    let mut best = (0, f64::NEG_INFINITY);
    for t in 0..dims.f {
        let s = consistency(frame_bits, ks.frame_perm(t), &bit_index, &mut counts, copies);
        if s > best.1 {
            best = (t, s);
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ExtractOptions {
    pub da_enabled: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions { da_enabled: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtractionDiagnostics {
    pub weights: Vec<f64>,
    /// Present when DA weighting ran.
    pub scores: Option<DAScores>,
    /// Original frame index assigned to each received frame.
    pub frame_indices: Vec<usize>,
    /// Identification consistency per frame (per-frame mode only).
    pub identification_scores: Option<Vec<f64>>,
    pub block_scores: BlockScores,
}

fn gather_inverse<T: Copy + Default>(src: &[T], perm: &[u32]) -> Vec<T> {
    let mut out = vec![T::default(); src.len()];
    for (&v, &p) in src.iter().zip(perm) {
        out[p as usize] = v;
    }
    out
}

/// Recover the message carried by `latents` under `ks`.
pub fn extract(
    latents: &LatentTensor,
    ks: &KeySet,
    opts: ExtractOptions,
) -> Result<(WatermarkMessage, ExtractionDiagnostics)> {
    let dims = ks.dims();
    let factors = ks.factors();
    let got = latents.dims();
    let received = got.f;
    if received == 0 {
        return Err(SkedaError::NoFrames);
    }
    if (got.c, got.h, got.w) != (dims.c, dims.h, dims.w) {
        return Err(SkedaError::DimMismatch(format!(
            "latent frame ({},{},{}) vs key ({},{},{})",
            got.c, got.h, got.w, dims.c, dims.h, dims.w
        )));
    }
    let groups = factors.message_shape(&dims)[0];

    let hard: Vec<Vec<u8>> = latents.frame_iter().map(decode_frame).collect::<Result<_>>()?;

    // Frame identity and, in per-frame mode, alignment into the unshuffled domain.
    let (frame_indices, id_scores, aligned_hard, features): (Vec<usize>, _, Option<Vec<Vec<u8>>>, Vec<Vec<f32>>) =
        match ks.mode() {
            KeyMode::Uniform => {
                if groups > 1 && received != dims.f {
                    return Err(SkedaError::DimMismatch(format!(
                        "uniform mode with {groups} frame groups needs all {} frames in order, got {received}",
                        dims.f
                    )));
                }
                let feats = if opts.da_enabled {
                    latents.frame_iter().map(|f| f.to_vec()).collect()
                } else {
                    Vec::new()
                };
                ((0..received).collect(), None, None, feats)
            }
            KeyMode::PerFrame => {
                let ids: Vec<(usize, f64)> =
                    hard.iter().map(|b| identify_frame_permutation(b, ks)).collect();
                let aligned = hard
                    .iter()
                    .zip(&ids)
                    .map(|(b, &(t, _))| gather_inverse(b, ks.frame_perm(t)))
                    .collect();
                let feats = if opts.da_enabled {
                    latents
                        .frame_iter()
                        .zip(&ids)
                        .map(|(f, &(t, _))| gather_inverse(f, ks.frame_perm(t)))
                        .collect()
                } else {
                    Vec::new()
                };
                (
                    ids.iter().map(|&(t, _)| t).collect(),
                    Some(ids.iter().map(|&(_, s)| s).collect()),
                    Some(aligned),
                    feats,
                )
            }
        };

    let (weights, scores) = if opts.da_enabled {
        let scores = da_scores(&features)?;
        (da_weights(&scores), Some(scores))
    } else {
        (FrameWeights::uniform(received), None)
    };

    let shape = (dims.c, dims.h, dims.w);
    let mut soft_groups = Vec::with_capacity(groups);
    for g in 0..groups {
        let members: Vec<usize> = (0..received).filter(|&t| frame_indices[t] % groups == g).collect();
        if members.is_empty() {
            soft_groups.push(None);
            continue;
        }
        let w = weights.subset(&members);
        let soft = match &aligned_hard {
            Some(aligned) => {
                let fields: Vec<&[u8]> = members.iter().map(|&t| aligned[t].as_slice()).collect();
                aggregate_frames(&fields, &w, shape)?
            }
            None => {
                // all frames share one permutation: vote first, then unshuffle
                let fields: Vec<&[u8]> = members.iter().map(|&t| hard[t].as_slice()).collect();
                let mut soft = aggregate_frames(&fields, &w, shape)?;
                soft.data = gather_inverse(&soft.data, ks.base_perm());
                soft
            }
        };
        soft_groups.push(Some(soft));
    }

    let m = block_scores(&soft_groups, dims, factors)?;
    let msg = decide_bits(&m, ks.equalizing_key())?;
    Ok((
        msg,
        ExtractionDiagnostics {
            weights: weights.w,
            scores,
            frame_indices,
            identification_scores: id_scores,
            block_scores: m,
        },
    ))
}
