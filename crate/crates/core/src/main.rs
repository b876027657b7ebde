//! `skeda` command-line front end. Every subcommand prints one JSON object to
//! stdout. Exit codes: 0 success, 2 invalid input, 1 processing failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use skeda::channel::{apply, ChannelSpec};
use skeda::codec::{embed, sampling_stream, WatermarkMessage};
use skeda::detect::{bit_accuracy, detect, detection_threshold, trace, TraceConfig, UserRegistry};
use skeda::experiment::{run_experiment, with_workers, workers_from_env, write_reports, ExperimentConfig};
use skeda::extract::{extract, ExtractOptions};
use skeda::keys::{derive_keys, load_keys, save_keys, KeyMode, LatentDims, ReplicationFactors};
use skeda::latent::LatentTensor;
use skeda::prng::Seed;
use skeda::SkedaError;

#[derive(Parser)]
#[command(name = "skeda", version, about = "Latent watermark codec and robustness evaluation")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a key file.
    Keygen {
        /// 64 hex chars; random if omitted.
        #[arg(long)]
        seed_hex: Option<String>,
        #[arg(long, default_value = "16,4,64,64")]
        dims: String,
        #[arg(long, default_value = "16,1,8,8")]
        factors: String,
        #[arg(long, default_value = "uniform")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed a message into a fresh watermarked latent.
    Embed {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        message_hex: String,
        /// Selects the sampling stream; use a new nonce per generated video.
        #[arg(long, default_value_t = 0)]
        nonce: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a latent channel over a latent file.
    Attack {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the message and write an extraction report.
    Extract {
        #[arg(long)]
        key: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        no_da: bool,
        /// Optional reference message for bit accuracy.
        #[arg(long)]
        reference_hex: Option<String>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Threshold an extraction report against a reference message.
    Detect {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        reference_hex: String,
        #[arg(long, default_value_t = 1e-6)]
        fpr: f64,
    },
    /// Identify which registered user a latent belongs to.
    Trace {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        fpr: f64,
        /// Embedding dims; defaults to the latent file's dims.
        #[arg(long)]
        dims: Option<String>,
        /// Defaults to f,1,8,8.
        #[arg(long)]
        factors: Option<String>,
        #[arg(long, default_value = "uniform")]
        mode: String,
        #[arg(long)]
        no_da: bool,
    },
    /// Detection threshold (matching bits) for n bits at a target FPR.
    Threshold {
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 1e-6)]
        fpr: f64,
    },
    /// Run a robustness sweep.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// CSV output; JSON rows are written next to it with a .json extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize, Deserialize)]
struct ExtractionReport {
    message_hex: String,
    n_bits: usize,
    da_enabled: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    bit_accuracy: Option<f64>,
    frame_weights: Vec<f64>,
    frame_indices: Vec<usize>,
    block_scores: Vec<f64>,
}

fn parse_quad(s: &str) -> Result<[usize; 4], SkedaError> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| SkedaError::ConfigError(format!("{s:?}: {e}")))?;
    parts
        .try_into()
        .map_err(|_| SkedaError::ConfigError(format!("{s:?}: expected four comma-separated integers")))
}

fn read_text(path: &Path) -> Result<String, SkedaError> {
    Ok(std::fs::read_to_string(path)?)
}

fn run(cmd: Command) -> Result<serde_json::Value, SkedaError> {
    match cmd {
        Command::Keygen { seed_hex, dims, factors, mode, out } => {
            let seed = match seed_hex {
                Some(h) => Seed::from_hex(&h)?,
                None => Seed(rand::random()),
            };
            let ks = derive_keys(
                seed,
                LatentDims::from_array(parse_quad(&dims)?),
                ReplicationFactors::from_array(parse_quad(&factors)?),
                mode.parse()?,
            )?;
            save_keys(&ks, &out)?;
            Ok(json!({ "key": out, "n_bits": ks.n_bits(), "mode": ks.mode() }))
        }
        Command::Embed { key, message_hex, nonce, out } => {
            let ks = load_keys(&key)?;
            let msg = WatermarkMessage::from_hex(&message_hex, ks.n_bits())?;
            let z = embed(&msg, &ks, &mut sampling_stream(ks.seed(), nonce))?;
            z.save(&out)?;
            Ok(json!({ "latent": out, "dims": z.dims().as_array(), "n_bits": ks.n_bits() }))
        }
        Command::Attack { spec, input, out } => {
            let spec = ChannelSpec::from_json(&read_text(&spec)?)?;
            let z = LatentTensor::load(&input)?;
            let attacked = apply(&spec, &z)?;
            attacked.save(&out)?;
            Ok(json!({ "latent": out, "kind": spec.kind(), "dims": attacked.dims().as_array() }))
        }
        Command::Extract { key, input, no_da, reference_hex, report } => {
            let ks = load_keys(&key)?;
            let z = LatentTensor::load(&input)?;
            let opts = ExtractOptions { da_enabled: !no_da };
            let (msg, diag) = extract(&z, &ks, opts)?;
            let accuracy = reference_hex
                .map(|h| WatermarkMessage::from_hex(&h, ks.n_bits()).and_then(|r| bit_accuracy(&msg, &r)))
                .transpose()?;
            let rep = ExtractionReport {
                message_hex: msg.to_hex(),
                n_bits: msg.len(),
                da_enabled: opts.da_enabled,
                bit_accuracy: accuracy,
                frame_weights: diag.weights,
                frame_indices: diag.frame_indices,
                block_scores: diag.block_scores.m,
            };
            let value = serde_json::to_value(&rep).expect("report serializes");
            std::fs::write(&report, serde_json::to_string_pretty(&value).expect("json"))?;
            Ok(value)
        }
        Command::Detect { report, reference_hex, fpr } => {
            let rep: ExtractionReport = serde_json::from_str(&read_text(&report)?)
                .map_err(|e| SkedaError::ConfigError(format!("extraction report: {e}")))?;
            let extracted = WatermarkMessage::from_hex(&rep.message_hex, rep.n_bits)?;
            let reference = WatermarkMessage::from_hex(&reference_hex, rep.n_bits)?;
            Ok(serde_json::to_value(detect(&extracted, &reference, fpr)?).expect("json"))
        }
        Command::Trace { registry, input, fpr, dims, factors, mode, no_da } => {
            let z = LatentTensor::load(&input)?;
            let dims = match dims {
                Some(d) => LatentDims::from_array(parse_quad(&d)?),
                None => z.dims(),
            };
            let factors = match factors {
                Some(f) => ReplicationFactors::from_array(parse_quad(&f)?),
                None => ReplicationFactors::new(dims.f, 1, 8, 8),
            };
            factors.check(&dims)?;
            let reg = UserRegistry::from_json(&read_text(&registry)?, factors.n_bits(&dims))?;
            let mode: KeyMode = mode.parse()?;
            let cfg = TraceConfig { dims, factors, mode, extract: ExtractOptions { da_enabled: !no_da } };
            let report = with_workers(workers_from_env(), || trace(&z, &reg, &cfg, fpr))??;
            Ok(serde_json::to_value(report).expect("json"))
        }
        Command::Threshold { n, fpr } => {
            let k = detection_threshold(n, fpr)?;
            Ok(json!({ "n": n, "fpr": fpr, "threshold_bits": k }))
        }
        Command::Evaluate { config, out } => {
            let cfg = ExperimentConfig::from_json(&read_text(&config)?)?;
            let csv_path = out
                .or_else(|| cfg.output_csv.clone().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("results.csv"));
            let json_path = cfg
                .output_json
                .clone()
                .map(PathBuf::from)
                .unwrap_or_else(|| csv_path.with_extension("json"));
            let rows = with_workers(workers_from_env(), || run_experiment(&cfg))??;
            write_reports(&rows, &csv_path, &json_path)?;
            Ok(json!({ "csv": csv_path, "json": json_path, "rows": rows }))
        }
    }
}

fn exit_code(err: &SkedaError) -> u8 {
    match err {
        SkedaError::Io(_) | SkedaError::NonFiniteInput(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(value) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            println!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(exit_code(&e))
        }
    }
}
