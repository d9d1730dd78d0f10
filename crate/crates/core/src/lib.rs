//! Disentangling quantizer for speech feature matrices.
//!
//! Factors a sequence of feature vectors into three streams — per-frame
//! content indices against a frozen k-means codebook, a low-dimensional
//! residual-quantized prosody stream, and a per-utterance group-residual
//! quantized speaker vector — serializes them into a bit-exact container,
//! and supports code-domain manipulation (speaker swap, prosody flattening)
//! plus the scalar metrics used to evaluate the separation.
//!
//! All numeric types are generic over the scalar via [`Scalar`] (`f32` or
//! `f64`); the unparameterized names default to `f64`, and `*32` aliases at
//! the crate root select `f32`. On-disk formats always store 32-bit floats,
//! so quantizer tables are canonicalized to `f32` precision at construction
//! and survive save/load round trips bit-exactly for either scalar.

pub mod archive;
pub mod bitstream;
pub mod codebook;
pub mod error;
pub mod features;
pub mod film;
mod hash;
mod linalg;
pub mod manipulate;
pub mod metrics;
pub mod pipeline;
pub mod quantize;
pub mod scalar;

pub use archive::{
    pipeline_from_bytes, pipeline_to_bytes, read_pipeline_file, write_pipeline_file,
};
pub use bitstream::{
    bitrate, bits_per_symbol, pack, pack_with_pipeline, unpack, unpack_checked, BitrateReport,
    BitstreamHeader, StreamKeys, StreamRate,
};
pub use codebook::{fit_kmeans, fit_residual_stack, Codebook, KMeansConfig};
pub use error::{Error, Result};
pub use features::{
    channel_stats, denormalize, feature_from_bytes, feature_to_bytes, generate_synthetic,
    instance_normalize, max_abs_diff, read_feature_file, write_feature_file, ChannelStats,
    FeatureMatrix, SyntheticCorpus, SyntheticSpec, SyntheticUtterance,
};
pub use film::{film, fit_film, FilmFitOptions, FilmParams, FilmReadout};
pub use manipulate::{flatten_prosody, swap_speaker};
pub use metrics::{chance_purity, cluster_purity, eer, feature_distance, pearson, DistanceKind};
pub use pipeline::{
    fit_pipeline, DisentangledCodes, FittedPipeline, ProsodyCodes, ProsodyProjector,
    QuantizerConfig, SpeakerCodes, Variant,
};
pub use quantize::{
    rvq_dequantize, rvq_quantize, vq_dequantize, vq_quantize, GrvqResult, GrvqStack, RvqResult,
    VqResult,
};
pub use scalar::Scalar;

/// Single-precision aliases for the main value types.
pub type FeatureMatrix32 = features::FeatureMatrix<f32>;
pub type ChannelStats32 = features::ChannelStats<f32>;
pub type Codebook32 = codebook::Codebook<f32>;
pub type GrvqStack32 = quantize::GrvqStack<f32>;
pub type DisentangledCodes32 = pipeline::DisentangledCodes<f32>;
pub type FittedPipeline32 = pipeline::FittedPipeline<f32>;
pub type ProsodyProjector32 = pipeline::ProsodyProjector<f32>;
