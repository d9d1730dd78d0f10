//! TOML config schemas for the `synth` and `fit` subcommands.

use serde::Deserialize;

use dsq_core::features::SyntheticSpec;
use dsq_core::pipeline::{QuantizerConfig, Variant};
use dsq_core::{Error, Result};

/// `synth --spec` file: corpus shape plus generator parameters.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub dim: usize,
    #[serde(default = "default_frame_rate")]
    pub frame_rate_hz: f64,
    pub n_utterances: usize,
    pub frames_per_utterance: usize,
    pub n_speakers: usize,
    pub n_contents: usize,
    #[serde(default)]
    pub speaker_offset_scale: f64,
    #[serde(default)]
    pub speaker_gain_spread: f64,
    #[serde(default)]
    pub prosody_dim: usize,
    #[serde(default = "default_smoothness")]
    pub prosody_smoothness: f64,
    #[serde(default)]
    pub noise_std: f64,
    /// Generator seed; falls back to the CLI seed when omitted.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_frame_rate() -> f64 {
    50.0
}

fn default_smoothness() -> f64 {
    0.9
}

impl SynthConfig {
    pub fn generator_spec(&self, cli_seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_speakers: self.n_speakers,
            n_contents: self.n_contents,
            speaker_offset_scale: self.speaker_offset_scale,
            speaker_gain_spread: self.speaker_gain_spread,
            prosody_dim: self.prosody_dim,
            prosody_smoothness: self.prosody_smoothness,
            noise_std: self.noise_std,
            seed: self.seed.unwrap_or(cli_seed),
        }
    }
}

/// `fit --config` file: a preset name plus field overrides and training
/// knobs.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// `paper-skq3` or `desk-small`; defaults to `desk-small`.
    pub preset: Option<String>,
    pub variant: Option<String>,
    pub dim: Option<usize>,
    pub prosody_dim: Option<usize>,
    pub frame_rate_hz: Option<f64>,
    pub content_codebook_size: Option<usize>,
    pub prosody_layers: Option<usize>,
    pub prosody_codebook_size: Option<usize>,
    pub speaker_groups: Option<usize>,
    pub speaker_layers: Option<usize>,
    pub speaker_codebook_size: Option<usize>,
    pub lookup_dim: Option<usize>,
    /// Mini-batch size for the content k-means; 0 is full-batch Lloyd.
    #[serde(default)]
    pub kmeans_batch_size: usize,
    #[serde(default = "default_max_iters")]
    pub kmeans_max_iters: usize,
    #[serde(default = "default_tolerance")]
    pub kmeans_tolerance: f64,
    /// Also fit the learned modulation decode path.
    #[serde(default)]
    pub fit_film: bool,
    /// Path to a prebuilt frozen content codebook (.cbk); skips the
    /// content k-means and adopts the file's entry count.
    pub content_codebook: Option<String>,
}

fn default_max_iters() -> usize {
    100
}

fn default_tolerance() -> f64 {
    1e-9
}

impl FitConfig {
    pub fn quantizer_config(&self) -> Result<QuantizerConfig> {
        let mut cfg = match self.preset.as_deref() {
            Some(name) => QuantizerConfig::preset(name)?,
            None => QuantizerConfig::desk_small(),
        };
        if let Some(v) = &self.variant {
            cfg.variant = v.parse::<Variant>()?;
        }
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        apply!(
            dim,
            prosody_dim,
            frame_rate_hz,
            content_codebook_size,
            prosody_layers,
            prosody_codebook_size,
            speaker_groups,
            speaker_layers,
            speaker_codebook_size,
            lookup_dim
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::MalformedSection {
        context: "config file",
        detail: format!("{what}: {e}"),
    })
}
