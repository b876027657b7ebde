//! Batch robustness experiments: embed → channel → extract → detect, swept
//! over one channel parameter, aggregated into CSV/JSON report rows.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{apply, sweep, ChannelSpec, ChannelSpecRepr, ParamGrid};
use crate::codec::{embed, sampling_stream, WatermarkMessage};
use crate::detect::detect;
use crate::error::{Result, SkedaError};
use crate::extract::{extract, ExtractOptions};
use crate::keys::{derive_keys, KeyMode, LatentDims, ReplicationFactors};
use crate::prng::{PrngStream, Seed};

/// Environment variable bounding the worker count.
pub const WORKERS_ENV: &str = "SKEDA_WORKERS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dims: [usize; 4],
    pub factors: [usize; 4],
    #[serde(default)]
    pub mode: KeyMode,
    #[serde(default = "default_true")]
    pub da_enabled: bool,
    pub channel: ChannelSpecRepr,
    pub grid: ParamGrid,
    pub trials: usize,
    pub base_seed_hex: String,
    #[serde(default = "default_fpr")]
    pub fpr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_json: Option<String>,
}

fn default_true() -> bool {
    true
}

fn default_fpr() -> f64 {
    1e-6
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SkedaError::ConfigError(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn base_seed(&self) -> Result<Seed> {
        Seed::from_hex(&self.base_seed_hex).map_err(|e| SkedaError::ConfigError(e.to_string()))
    }

    fn validate(&self) -> Result<(TrialSetup, Vec<ChannelSpec>)> {
        if self.trials < 1 {
            return Err(SkedaError::ConfigError("trials must be >= 1".into()));
        }
        let base = self.base_seed()?;
        let setup = TrialSetup {
            dims: LatentDims::from_array(self.dims),
            factors: ReplicationFactors::from_array(self.factors),
            mode: self.mode,
            extract: ExtractOptions { da_enabled: self.da_enabled },
            fpr: self.fpr,
        };
        setup.factors.check(&setup.dims)?;
        let template = self.channel.clone().into_spec(Some(base.derive(b"channel", 0)))?;
        let specs = sweep(&template, &self.grid)?;
        Ok((setup, specs))
    }
}

/// Everything one trial needs besides its channel and seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialSetup {
    pub dims: LatentDims,
    pub factors: ReplicationFactors,
    pub mode: KeyMode,
    pub extract: ExtractOptions,
    pub fpr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialOutcome {
    pub accuracy: f64,
    pub detected: bool,
}

/// Seed for trial `trial` of grid point `grid_index`.
pub fn trial_seed(base: &Seed, grid_index: usize, trial: usize) -> Seed {
    base.derive(b"grid", grid_index as u64).derive(b"trial", trial as u64)
}

/// One embed → channel → extract → detect run with fresh keys and message.
pub fn run_trial(setup: &TrialSetup, channel: &ChannelSpec, seed: &Seed) -> Result<TrialOutcome> {
    let ks = derive_keys(seed.derive(b"keys", 0), setup.dims, setup.factors, setup.mode)?;
    let msg = WatermarkMessage::random(&mut PrngStream::new(seed, b"message"), ks.n_bits());
    let z = embed(&msg, &ks, &mut sampling_stream(ks.seed(), 0))?;
    let attacked = apply(&channel.reseeded(seed.derive(b"channel", 0)), &z)?;
    let (out, _) = extract(&attacked, &ks, setup.extract)?;
    let report = detect(&out, &msg, setup.fpr)?;
    Ok(TrialOutcome {
        accuracy: report.bit_accuracy,
        detected: report.detected,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub kind: String,
    pub param_name: String,
    pub param_value: f64,
    pub trials: usize,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub tpr: f64,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    let (setup, specs) = cfg.validate()?;
    let base = cfg.base_seed()?;
    specs
        .iter()
        .enumerate()
        .map(|(g, spec)| {
            let outcomes: Vec<TrialOutcome> = (0..cfg.trials)
                .into_par_iter()
                .map(|t| run_trial(&setup, spec, &trial_seed(&base, g, t)))
                .collect::<Result<_>>()?;
            let accs: Vec<f64> = outcomes.iter().map(|o| o.accuracy).collect();
            let (mean_acc, std_acc) = mean_std(&accs);
            let tpr = outcomes.iter().filter(|o| o.detected).count() as f64 / cfg.trials as f64;
            Ok(ReportRow {
                kind: spec.kind().to_string(),
                param_name: cfg.grid.param.clone(),
                param_value: cfg.grid.values[g],
                trials: cfg.trials,
                mean_acc,
                std_acc,
                tpr,
            })
        })
        .collect()
}

/// Worker bound from `SKEDA_WORKERS`, if set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Run `f` inside a rayon pool limited to `workers` threads (global pool if `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| SkedaError::ConfigError(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

pub fn rows_to_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| SkedaError::Io(std::io::Error::other(e)))?;
    }
    let bytes = w.into_inner().map_err(|e| SkedaError::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn write_reports(rows: &[ReportRow], csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(csv_path, rows_to_csv(rows)?)?;
    std::fs::write(json_path, serde_json::to_string_pretty(rows).expect("rows serialize"))?;
    Ok(())
}
