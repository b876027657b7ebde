//! Latent-domain distortion channels.
//!
//! Stand-ins for the video attacks a watermarked clip goes through before
//! inversion, plus a proxy for the inversion error itself. Every channel is
//! a pure function of its spec (including the seed) and the input stack.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SkedaError};
use crate::latent::LatentTensor;
use crate::prng::{PrngStream, Seed};

/// Quantizer clamp range.
pub const QUANT_RANGE: f32 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub enum Channel {
    /// Additive white Gaussian noise with standard deviation `sigma`.
    Awgn { sigma: f64 },
    /// Negate each element independently with probability `p`.
    SignFlip { p: f64 },
    /// Drop each frame with probability `p`; at least one frame survives.
    FrameDrop { p: f64 },
    /// Single left-to-right pass swapping `(t, t+1)` with probability `p`.
    FrameSwap { p: f64 },
    /// Replace frame `t` by the mean over a centered window, truncated at the ends.
    FrameAverage { window: usize },
    /// Keep a random `p·h × p·w` rectangle common to all frames, redraw the rest from N(0,1).
    SpatialErase { p: f64 },
    /// Clamp to `[-4, 4]` and round to `levels` uniformly spaced values.
    Quantize { levels: usize },
    /// Inversion error stand-in: AWGN `sigma` followed by sign flips with probability `p`.
    InversionProxy { sigma: f64, p: f64 },
    /// Apply stages in order.
    Compose(Vec<ChannelSpec>),
}

impl Channel {
    pub fn kind(&self) -> &'static str {
        match self {
            Channel::Awgn { .. } => "awgn",
            Channel::SignFlip { .. } => "sign_flip",
            Channel::FrameDrop { .. } => "frame_drop",
            Channel::FrameSwap { .. } => "frame_swap",
            Channel::FrameAverage { .. } => "frame_average",
            Channel::SpatialErase { .. } => "spatial_erase",
            Channel::Quantize { .. } => "quantize",
            Channel::InversionProxy { .. } => "inversion_proxy",
            Channel::Compose(_) => "compose",
        }
    }

    fn params(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        match *self {
            Channel::Awgn { sigma } => {
                m.insert("sigma".into(), sigma);
            }
            Channel::SignFlip { p }
            | Channel::FrameDrop { p }
            | Channel::FrameSwap { p }
            | Channel::SpatialErase { p } => {
                m.insert("p".into(), p);
            }
            Channel::FrameAverage { window } => {
                m.insert("window".into(), window as f64);
            }
            Channel::Quantize { levels } => {
                m.insert("levels".into(), levels as f64);
            }
            Channel::InversionProxy { sigma, p } => {
                m.insert("sigma".into(), sigma);
                m.insert("p".into(), p);
            }
            Channel::Compose(_) => {}
        }
        m
    }

    fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(SkedaError::BadParams(format!("{name} = {p} not in [0, 1]")))
            }
        };
        let std = |s: f64| {
            if s.is_finite() && s >= 0.0 {
                Ok(())
            } else {
                Err(SkedaError::BadParams(format!("sigma = {s} must be finite and >= 0")))
            }
        };
        match self {
            Channel::Awgn { sigma } => std(*sigma),
            Channel::SignFlip { p }
            | Channel::FrameDrop { p }
            | Channel::FrameSwap { p }
            | Channel::SpatialErase { p } => prob("p", *p),
            Channel::FrameAverage { window } if *window < 1 => {
                Err(SkedaError::BadParams("window must be >= 1".into()))
            }
            Channel::FrameAverage { .. } => Ok(()),
            Channel::Quantize { levels } if *levels < 2 => {
                Err(SkedaError::BadParams("levels must be >= 2".into()))
            }
            Channel::Quantize { .. } => Ok(()),
            Channel::InversionProxy { sigma, p } => std(*sigma).and(prob("p", *p)),
            Channel::Compose(stages) if stages.is_empty() => {
                Err(SkedaError::BadParams("compose needs at least one stage".into()))
            }
            Channel::Compose(stages) => stages.iter().try_for_each(|s| s.channel.validate()),
        }
    }
}

/// A channel together with the seed that drives its randomness.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSpec {
    pub channel: Channel,
    pub seed: Seed,
}

fn stage_seed(parent: &Seed, i: usize) -> Seed {
    parent.derive(b"channel-stage", i as u64)
}

fn to_count(name: &str, v: f64) -> Result<usize> {
    if v.is_finite() && v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(SkedaError::BadParams(format!("{name} = {v} must be a nonnegative integer")))
    }
}

impl ChannelSpec {
    /// Validating constructor.
    pub fn new(channel: Channel, seed: Seed) -> Result<Self> {
        channel.validate()?;
        Ok(ChannelSpec { channel, seed })
    }

    /// Compose from bare channels; stage seeds are derived from `seed`.
    pub fn compose(stages: Vec<Channel>, seed: Seed) -> Result<Self> {
        let stages = stages
            .into_iter()
            .enumerate()
            .map(|(i, c)| ChannelSpec { channel: c, seed: stage_seed(&seed, i) })
            .collect();
        Self::new(Channel::Compose(stages), seed)
    }

    pub fn kind(&self) -> &'static str {
        self.channel.kind()
    }

    /// Same channel with a new seed; compose stages get seeds derived from it.
    pub fn reseeded(&self, seed: Seed) -> ChannelSpec {
        let channel = match &self.channel {
            Channel::Compose(stages) => Channel::Compose(
                stages
                    .iter()
                    .enumerate()
                    .map(|(i, s)| s.reseeded(stage_seed(&seed, i)))
                    .collect(),
            ),
            c => c.clone(),
        };
        ChannelSpec { channel, seed }
    }

    /// Replace one parameter. `path` is a parameter name, or `"<stage>.<name>"`
    /// to reach into a compose stage.
    pub fn with_param(&self, path: &str, value: f64) -> Result<ChannelSpec> {
        let unknown = || SkedaError::BadParams(format!("{} has no parameter {path:?}", self.kind()));
        let channel = match (&self.channel, path) {
            (Channel::Compose(stages), _) => {
                let (idx, rest) = path.split_once('.').ok_or_else(unknown)?;
                let idx: usize = idx.parse().map_err(|_| unknown())?;
                let mut stages = stages.clone();
                let stage = stages.get_mut(idx).ok_or_else(unknown)?;
                *stage = stage.with_param(rest, value)?;
                Channel::Compose(stages)
            }
            (Channel::Awgn { .. }, "sigma") => Channel::Awgn { sigma: value },
            (Channel::SignFlip { .. }, "p") => Channel::SignFlip { p: value },
            (Channel::FrameDrop { .. }, "p") => Channel::FrameDrop { p: value },
            (Channel::FrameSwap { .. }, "p") => Channel::FrameSwap { p: value },
            (Channel::SpatialErase { .. }, "p") => Channel::SpatialErase { p: value },
            (Channel::FrameAverage { .. }, "window") => Channel::FrameAverage { window: to_count("window", value)? },
            (Channel::Quantize { .. }, "levels") => Channel::Quantize { levels: to_count("levels", value)? },
            (Channel::InversionProxy { p, .. }, "sigma") => Channel::InversionProxy { sigma: value, p: *p },
            (Channel::InversionProxy { sigma, .. }, "p") => Channel::InversionProxy { sigma: *sigma, p: value },
            _ => return Err(unknown()),
        };
        ChannelSpec::new(channel, self.seed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ChannelSpecRepr::from(self)).expect("channel spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let repr: ChannelSpecRepr =
            serde_json::from_str(text).map_err(|e| SkedaError::BadParams(e.to_string()))?;
        repr.into_spec(None)
    }
}

/// JSON shape: `{"kind", "params", "seed_hex", "stages"?}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpecRepr {
    pub kind: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_hex: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<ChannelSpecRepr>,
}

impl From<&ChannelSpec> for ChannelSpecRepr {
    fn from(spec: &ChannelSpec) -> Self {
        let stages = match &spec.channel {
            Channel::Compose(s) => s.iter().map(ChannelSpecRepr::from).collect(),
            _ => Vec::new(),
        };
        ChannelSpecRepr {
            kind: spec.kind().to_string(),
            params: spec.channel.params(),
            seed_hex: Some(spec.seed.to_hex()),
            stages,
        }
    }
}

impl ChannelSpecRepr {
    /// `fallback_seed` fills in a missing `seed_hex` (compose stages).
    pub fn into_spec(self, fallback_seed: Option<Seed>) -> Result<ChannelSpec> {
        let seed = match (&self.seed_hex, fallback_seed) {
            (Some(h), _) => Seed::from_hex(h).map_err(|e| SkedaError::BadParams(e.to_string()))?,
            (None, Some(s)) => s,
            (None, None) => return Err(SkedaError::BadParams("channel spec needs seed_hex".into())),
        };
        let get = |name: &str| {
            self.params
                .get(name)
                .copied()
                .ok_or_else(|| SkedaError::BadParams(format!("{} requires param {name:?}", self.kind)))
        };
        let channel = match self.kind.as_str() {
            "awgn" => Channel::Awgn { sigma: get("sigma")? },
            "sign_flip" => Channel::SignFlip { p: get("p")? },
            "frame_drop" => Channel::FrameDrop { p: get("p")? },
            "frame_swap" => Channel::FrameSwap { p: get("p")? },
            "frame_average" => Channel::FrameAverage { window: to_count("window", get("window")?)? },
            "spatial_erase" => Channel::SpatialErase { p: get("p")? },
            "quantize" => Channel::Quantize { levels: to_count("levels", get("levels")?)? },
            "inversion_proxy" => Channel::InversionProxy { sigma: get("sigma")?, p: get("p")? },
            "compose" => Channel::Compose(
                self.stages
                    .into_iter()
                    .enumerate()
                    .map(|(i, s)| s.into_spec(Some(stage_seed(&seed, i))))
                    .collect::<Result<_>>()?,
            ),
            other => return Err(SkedaError::BadParams(format!("unknown channel kind {other:?}"))),
        };
        ChannelSpec::new(channel, seed)
    }
}

fn stream_for(spec: &ChannelSpec) -> PrngStream {
    let tag = format!("channel/{}", spec.kind());
    PrngStream::new(&spec.seed, tag.as_bytes())
}

fn add_noise(data: &mut [f32], sigma: f64, rng: &mut PrngStream) {
    if sigma == 0.0 {
        return;
    }
    for v in data {
        let n: f64 = StandardNormal.sample(rng);
        *v += (sigma * n) as f32;
    }
}

fn flip_signs(data: &mut [f32], p: f64, rng: &mut PrngStream) {
    if p == 0.0 {
        return;
    }
    for v in data {
        if rng.next_open01() < p {
            *v = -*v;
        }
    }
}

/// Run `spec` over a latent stack.
pub fn apply(spec: &ChannelSpec, latents: &LatentTensor) -> Result<LatentTensor> {
    spec.channel.validate()?;
    let frames = latents.frames();
    if frames == 0 {
        return Err(SkedaError::NoFrames);
    }
    let mut rng = stream_for(spec);
    let dims = latents.dims();
    match &spec.channel {
        Channel::Awgn { sigma } => {
            let mut out = latents.clone();
            add_noise(out.data_mut(), *sigma, &mut rng);
            Ok(out)
        }
        Channel::SignFlip { p } => {
            let mut out = latents.clone();
            flip_signs(out.data_mut(), *p, &mut rng);
            Ok(out)
        }
        Channel::InversionProxy { sigma, p } => {
            let mut out = latents.clone();
            add_noise(out.data_mut(), *sigma, &mut rng);
            flip_signs(out.data_mut(), *p, &mut rng);
            Ok(out)
        }
        Channel::FrameDrop { p } => {
            let mut keep: Vec<usize> = (0..frames).filter(|_| rng.next_open01() >= *p).collect();
            if keep.is_empty() {
                keep.push(rng.next_below(frames as u64) as usize);
            }
            Ok(latents.select_frames(&keep))
        }
        Channel::FrameSwap { p } => {
            let mut order: Vec<usize> = (0..frames).collect();
            for t in 0..frames.saturating_sub(1) {
                if rng.next_open01() < *p {
                    order.swap(t, t + 1);
                }
            }
            Ok(latents.select_frames(&order))
        }
        Channel::FrameAverage { window } => {
            let back = (window - 1) / 2;
            let mut out = latents.clone();
            for t in 0..frames {
                let lo = t.saturating_sub(back);
                let hi = (t + window - 1 - back).min(frames - 1);
                let count = (hi - lo + 1) as f32;
                let dst = out.frame_mut(t);
                dst.iter_mut().for_each(|v| *v = 0.0);
                for s in lo..=hi {
                    for (d, &v) in dst.iter_mut().zip(latents.frame(s)) {
                        *d += v;
                    }
                }
                dst.iter_mut().for_each(|v| *v /= count);
            }
            Ok(out)
        }
        Channel::SpatialErase { p } => {
            let rh = ((p * dims.h as f64).round() as usize).min(dims.h);
            let rw = ((p * dims.w as f64).round() as usize).min(dims.w);
            let y0 = rng.next_below((dims.h - rh + 1) as u64) as usize;
            let x0 = rng.next_below((dims.w - rw + 1) as u64) as usize;
            let mut out = latents.clone();
            for t in 0..frames {
                let frame = out.frame_mut(t);
                for c in 0..dims.c {
                    for y in 0..dims.h {
                        for x in 0..dims.w {
                            let inside = (y0..y0 + rh).contains(&y) && (x0..x0 + rw).contains(&x);
                            if !inside {
                                let n: f64 = StandardNormal.sample(&mut rng);
                                frame[(c * dims.h + y) * dims.w + x] = n as f32;
                            }
                        }
                    }
                }
            }
            Ok(out)
        }
        Channel::Quantize { levels } => {
            let step = 2.0 * QUANT_RANGE / (*levels as f32 - 1.0);
            let mut out = latents.clone();
            for v in out.data_mut() {
                let clamped = v.clamp(-QUANT_RANGE, QUANT_RANGE);
                *v = -QUANT_RANGE + ((clamped + QUANT_RANGE) / step).round() * step;
            }
            Ok(out)
        }
        Channel::Compose(stages) => {
            let mut cur = latents.clone();
            for s in stages {
                cur = apply(s, &cur)?;
            }
            Ok(cur)
        }
    }
}

/// One-parameter sweep over a template.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub param: String,
    pub values: Vec<f64>,
}

/// One spec per grid value, seeded from the template seed and grid index.
pub fn sweep(template: &ChannelSpec, grid: &ParamGrid) -> Result<Vec<ChannelSpec>> {
    if grid.values.is_empty() {
        return Err(SkedaError::EmptyGrid);
    }
    grid.values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let spec = template.with_param(&grid.param, v)?;
            Ok(spec.reseeded(template.seed.derive(b"grid", i as u64)))
        })
        .collect()
}
