//! Secret key material: equalizing key and shuffle permutations, all derived
//! from one [`Seed`] so that embedder and extractor regenerate them exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SkedaError};
use crate::prng::{PrngStream, Seed};

pub const KEY_FILE_VERSION: u64 = 1;

const TAG_EQUALIZE: &[u8] = b"equalize";
const TAG_SHUFFLE: &[u8] = b"shuffle";
const TAG_FRAME_SHUFFLE: &[u8] = b"frame-shuffle";

/// Latent shape `(frames, channels, height, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatentDims {
    pub f: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl LatentDims {
    pub const fn new(f: usize, c: usize, h: usize, w: usize) -> Self {
        LatentDims { f, c, h, w }
    }

    /// 16 frames of 4×64×64 latents.
    pub const DEFAULT: LatentDims = LatentDims::new(16, 4, 64, 64);

    pub fn as_array(&self) -> [usize; 4] {
        [self.f, self.c, self.h, self.w]
    }

    pub fn from_array(a: [usize; 4]) -> Self {
        LatentDims::new(a[0], a[1], a[2], a[3])
    }

    /// Elements in one frame.
    pub fn frame_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.f * self.frame_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_frames(&self, f: usize) -> Self {
        LatentDims { f, ..*self }
    }
}

/// Replication divisors `(k_f, f_c, f_h, f_w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReplicationFactors {
    pub k_f: usize,
    pub f_c: usize,
    pub f_h: usize,
    pub f_w: usize,
}

impl ReplicationFactors {
    pub const fn new(k_f: usize, f_c: usize, f_h: usize, f_w: usize) -> Self {
        ReplicationFactors { k_f, f_c, f_h, f_w }
    }

    /// 256-bit capacity on the default dims.
    pub const DEFAULT: ReplicationFactors = ReplicationFactors::new(16, 1, 8, 8);

    pub fn as_array(&self) -> [usize; 4] {
        [self.k_f, self.f_c, self.f_h, self.f_w]
    }

    pub fn from_array(a: [usize; 4]) -> Self {
        ReplicationFactors::new(a[0], a[1], a[2], a[3])
    }

    /// Copies of each message bit, `k_f·f_c·f_h·f_w`.
    pub fn copies(&self) -> usize {
        self.k_f * self.f_c * self.f_h * self.f_w
    }

    /// Copies of each bit inside a single frame.
    pub fn spatial_copies(&self) -> usize {
        self.f_c * self.f_h * self.f_w
    }

    pub fn check(&self, dims: &LatentDims) -> Result<()> {
        let d = dims.as_array();
        let k = self.as_array();
        let ok = d.iter().zip(k.iter()).all(|(&d, &k)| d > 0 && k > 0 && d % k == 0);
        if ok {
            Ok(())
        } else {
            Err(SkedaError::NonDividingFactors { dims: d, factors: k })
        }
    }

    /// Message shape `(f/k_f, c/f_c, h/f_h, w/f_w)`. Assumes [`Self::check`] passed.
    pub fn message_shape(&self, dims: &LatentDims) -> [usize; 4] {
        [
            dims.f / self.k_f,
            dims.c / self.f_c,
            dims.h / self.f_h,
            dims.w / self.f_w,
        ]
    }

    pub fn n_bits(&self, dims: &LatentDims) -> usize {
        self.message_shape(dims).iter().product()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KeyMode {
    /// One permutation shared by every frame.
    #[default]
    Uniform,
    /// Frame `t` uses `base_perm ∘ σ_t`, `σ_t` keyed by `(seed, t)`.
    PerFrame,
}

impl std::str::FromStr for KeyMode {
    type Err = SkedaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(KeyMode::Uniform),
            "per_frame" => Ok(KeyMode::PerFrame),
            other => Err(SkedaError::ConfigError(format!("unknown key mode {other:?}"))),
        }
    }
}

/// All secret material for one watermark identity.
///
/// Permutations act on one frame's flattened `c·h·w` block using gather
/// semantics: `shuffled[i] = original[perm[i]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeySet {
    seed: Seed,
    dims: LatentDims,
    factors: ReplicationFactors,
    mode: KeyMode,
    equalizing_key: Vec<u8>,
    base_perm: Vec<u32>,
    // Empty in uniform mode; `frame_perm` falls back to `base_perm`.
    frame_perms: Vec<Vec<u32>>,
}

/// Derive every key from `seed`. Deterministic in all four arguments.
pub fn derive_keys(
    seed: Seed,
    dims: LatentDims,
    factors: ReplicationFactors,
    mode: KeyMode,
) -> Result<KeySet> {
    factors.check(&dims)?;
    let n_bits = factors.n_bits(&dims);
    let frame_len = dims.frame_len();

    let mut eq = PrngStream::new(&seed, TAG_EQUALIZE);
    let equalizing_key = (0..n_bits).map(|_| eq.next_bit()).collect();

    let base_perm = PrngStream::new(&seed, TAG_SHUFFLE).permutation(frame_len);

    let frame_perms = match mode {
        KeyMode::Uniform => Vec::new(),
        KeyMode::PerFrame => (0..dims.f)
            .map(|t| {
                let sigma = PrngStream::indexed(&seed, TAG_FRAME_SHUFFLE, t as u64)
                    .permutation(frame_len);
                sigma.iter().map(|&s| base_perm[s as usize]).collect()
            })
            .collect(),
    };

    Ok(KeySet {
        seed,
        dims,
        factors,
        mode,
        equalizing_key,
        base_perm,
        frame_perms,
    })
}

impl KeySet {
    pub fn seed(&self) -> &Seed {
        &self.seed
    }

    pub fn dims(&self) -> LatentDims {
        self.dims
    }

    pub fn factors(&self) -> ReplicationFactors {
        self.factors
    }

    pub fn mode(&self) -> KeyMode {
        self.mode
    }

    pub fn n_bits(&self) -> usize {
        self.equalizing_key.len()
    }

    pub fn equalizing_key(&self) -> &[u8] {
        &self.equalizing_key
    }

    pub fn base_perm(&self) -> &[u32] {
        &self.base_perm
    }

    /// Permutation applied to frame `t`.
    pub fn frame_perm(&self, t: usize) -> &[u32] {
        match self.mode {
            KeyMode::Uniform => &self.base_perm,
            KeyMode::PerFrame => &self.frame_perms[t],
        }
    }

    /// Replace the equalizing key. Used by ablations that need a fixed key.
    pub fn with_equalizing_key(mut self, key: Vec<u8>) -> Result<Self> {
        if key.len() != self.n_bits() {
            return Err(SkedaError::LengthMismatch {
                expected: self.n_bits(),
                actual: key.len(),
            });
        }
        self.equalizing_key = key;
        Ok(self)
    }

    fn to_file(&self) -> KeyFile {
        KeyFile {
            version: KEY_FILE_VERSION,
            seed_hex: self.seed.to_hex(),
            dims: self.dims.as_array(),
            factors: self.factors.as_array(),
            mode: self.mode,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct KeyFile {
    version: u64,
    seed_hex: String,
    dims: [usize; 4],
    factors: [usize; 4],
    mode: KeyMode,
}

/// Serialize to the JSON key format. Derived keys are not stored.
pub fn keys_to_json(ks: &KeySet) -> String {
    serde_json::to_string_pretty(&ks.to_file()).expect("key file serializes")
}

pub fn keys_from_json(text: &str) -> Result<KeySet> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| SkedaError::MalformedKeyFile(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| SkedaError::MalformedKeyFile("missing version".into()))?;
    if version != KEY_FILE_VERSION {
        return Err(SkedaError::VersionMismatch {
            found: version,
            expected: KEY_FILE_VERSION,
        });
    }
    let file: KeyFile =
        serde_json::from_value(value).map_err(|e| SkedaError::MalformedKeyFile(e.to_string()))?;
    if file.seed_hex.len() != 64 {
        return Err(SkedaError::MalformedKeyFile("seed_hex must be 64 hex chars".into()));
    }
    let seed = Seed::from_hex(&file.seed_hex)
        .map_err(|e| SkedaError::MalformedKeyFile(e.to_string()))?;
    derive_keys(
        seed,
        LatentDims::from_array(file.dims),
        ReplicationFactors::from_array(file.factors),
        file.mode,
    )
}

pub fn save_keys(ks: &KeySet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, keys_to_json(ks))?;
    Ok(())
}

pub fn load_keys(path: impl AsRef<Path>) -> Result<KeySet> {
    let text = fs::read_to_string(path)?;
    keys_from_json(&text)
}
