//! Distribution-preserving latent watermarking for generated video.
//!
//! A message is XOR-equalized, replicated to the latent shape, shuffled with a
//! keyed permutation and sampled into standard-normal initial noise so that
//! the watermarked latent is indistinguishable in distribution from ordinary
//! noise. Extraction decodes signs, weights frames by inter-frame similarity
//! and votes over the replicated copies. The [`channel`] and [`detect`]
//! modules simulate latent-domain attacks and turn bit accuracy into
//! detection decisions at a fixed false-positive rate.

pub mod channel;
pub mod codec;
pub mod detect;
pub mod error;
pub mod experiment;
pub mod extract;
pub mod keys;
pub mod latent;
pub mod ppf;
pub mod prng;

pub use codec::{embed, sampling_stream, WatermarkMessage};
pub use error::{Result, SkedaError};
pub use extract::{extract, ExtractOptions};
pub use keys::{derive_keys, KeyMode, KeySet, LatentDims, ReplicationFactors};
pub use latent::LatentTensor;
pub use ppf::normal_ppf;
pub use prng::{PrngStream, Seed};
