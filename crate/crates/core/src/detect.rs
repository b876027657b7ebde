//! Bit accuracy, exact binomial tails and fixed-FPR detection.
//!
//! Under the null hypothesis (no watermark, or the wrong key) each extracted
//! bit matches the reference independently with probability 1/2, so the
//! number of matches is Binomial(n, 1/2). The detection threshold is the
//! smallest match count whose upper tail is at most the target FPR.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::codec::WatermarkMessage;
use crate::error::{Result, SkedaError};
use crate::extract::{extract, ExtractOptions};
use crate::keys::{derive_keys, KeyMode, LatentDims, ReplicationFactors};
use crate::latent::LatentTensor;
use crate::prng::Seed;

pub fn bit_accuracy(a: &WatermarkMessage, b: &WatermarkMessage) -> Result<f64> {
    Ok(matching_bits(a, b)? as f64 / a.len().max(1) as f64)
}

fn matching_bits(a: &WatermarkMessage, b: &WatermarkMessage) -> Result<usize> {
    if a.len() != b.len() {
        return Err(SkedaError::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(a.bits().iter().zip(b.bits()).filter(|(x, y)| x == y).count())
}

/// `P(X ≥ k)` for `X ~ Binomial(n, p)`, summed in log space.
pub fn binomial_tail(n: u64, k: u64, p: f64) -> Result<f64> {
    if k > n {
        return Err(SkedaError::DomainError(format!("k = {k} exceeds n = {n}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(SkedaError::DomainError(format!("p = {p} not in [0, 1]")));
    }
    if k == 0 || p == 1.0 {
        return Ok(1.0);
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let log_terms: Vec<f64> = (k..=n)
        .map(|i| ln_binomial(n, i) + i as f64 * lp + (n - i) as f64 * lq)
        .collect();
    let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = log_terms.iter().map(|t| (t - max).exp()).sum();
    Ok((max + sum.ln()).exp().min(1.0))
}

/// Smallest `k` with `P(Binomial(n, ½) ≥ k) ≤ fpr`; `n + 1` means the target
/// cannot be met and nothing is ever detected.
pub fn detection_threshold(n: u64, fpr: f64) -> Result<u64> {
    if !(fpr > 0.0 && fpr <= 1.0) {
        return Err(SkedaError::DomainError(format!("fpr = {fpr} not in (0, 1]")));
    }
    // tail is non-increasing in k; binary search on [0, n+1]
    let (mut lo, mut hi) = (0u64, n + 1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if binomial_tail(n, mid, 0.5)? <= fpr {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(lo)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub bit_accuracy: f64,
    pub detected: bool,
    pub matching_bits: usize,
    pub threshold_bits: u64,
    pub fpr_target: f64,
    pub matched_user: Option<String>,
    pub n_bits: usize,
}

pub fn detect(extracted: &WatermarkMessage, reference: &WatermarkMessage, fpr: f64) -> Result<DetectionReport> {
    let matches = matching_bits(extracted, reference)?;
    let n = extracted.len();
    let threshold = detection_threshold(n as u64, fpr)?;
    Ok(DetectionReport {
        bit_accuracy: matches as f64 / n.max(1) as f64,
        detected: matches as u64 >= threshold,
        matching_bits: matches,
        threshold_bits: threshold,
        fpr_target: fpr,
        matched_user: None,
        n_bits: n,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistryEntry {
    pub label: String,
    pub seed: Seed,
    pub message: WatermarkMessage,
}

/// Known users, each with their own seed and message.
#[derive(Clone, Debug, PartialEq)]
pub struct UserRegistry {
    entries: Vec<RegistryEntry>,
}

#[derive(Serialize, Deserialize)]
struct RegistryRecord {
    label: String,
    seed_hex: String,
    message_hex: String,
}

impl UserRegistry {
    pub fn new(entries: Vec<RegistryEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.label.as_str()) {
                return Err(SkedaError::ConfigError(format!("duplicate registry label {:?}", e.label)));
            }
        }
        if let Some(first) = entries.first() {
            if let Some(bad) = entries.iter().find(|e| e.message.len() != first.message.len()) {
                return Err(SkedaError::LengthMismatch {
                    expected: first.message.len(),
                    actual: bad.message.len(),
                });
            }
        }
        Ok(UserRegistry { entries })
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parse the JSON array format; `n_bits` is needed to decode message hex.
    pub fn from_json(text: &str, n_bits: usize) -> Result<Self> {
        let records: Vec<RegistryRecord> =
            serde_json::from_str(text).map_err(|e| SkedaError::ConfigError(format!("registry: {e}")))?;
        let entries = records
            .into_iter()
            .map(|r| {
                Ok(RegistryEntry {
                    seed: Seed::from_hex(&r.seed_hex)?,
                    message: WatermarkMessage::from_hex(&r.message_hex, n_bits)?,
                    label: r.label,
                })
            })
            .collect::<Result<_>>()?;
        Self::new(entries)
    }

    pub fn to_json(&self) -> String {
        let records: Vec<RegistryRecord> = self
            .entries
            .iter()
            .map(|e| RegistryRecord {
                label: e.label.clone(),
                seed_hex: e.seed.to_hex(),
                message_hex: e.message.to_hex(),
            })
            .collect();
        serde_json::to_string_pretty(&records).expect("registry serializes")
    }
}

/// Key layout shared by every user in a registry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceConfig {
    pub dims: LatentDims,
    pub factors: ReplicationFactors,
    pub mode: KeyMode,
    pub extract: ExtractOptions,
}

/// Find the registered user whose watermark `latents` carry.
///
/// Each user is tested at `fpr / U`. Among detected users the highest match
/// count wins, ties going to the earlier registry entry. When no one is
/// detected, the report describes the best candidate with `detected = false`.
pub fn trace(latents: &LatentTensor, registry: &UserRegistry, cfg: &TraceConfig, fpr: f64) -> Result<DetectionReport> {
    if registry.is_empty() {
        return Err(SkedaError::EmptyRegistry);
    }
    let per_user_fpr = fpr / registry.len() as f64;
    let reports: Vec<DetectionReport> = registry
        .entries
        .par_iter()
        .map(|e| {
            let ks = derive_keys(e.seed, cfg.dims, cfg.factors, cfg.mode)?;
            let (msg, _) = extract(latents, &ks, cfg.extract)?;
            let mut r = detect(&msg, &e.message, per_user_fpr)?;
            r.matched_user = Some(e.label.clone());
            Ok(r)
        })
        .collect::<Result<_>>()?;

    let best = |detected_only: bool| {
        reports
            .iter()
            .filter(|r| r.detected || !detected_only)
            .fold(None::<&DetectionReport>, |acc, r| match acc {
                Some(b) if b.matching_bits >= r.matching_bits => Some(b),
                _ => Some(r),
            })
    };
    match best(true) {
        Some(r) => Ok(r.clone()),
        None => {
            let mut r = best(false).expect("registry nonempty").clone();
            r.matched_user = None;
            Ok(r)
        }
    }
}
