//! The full disentangling pipeline: configuration, prosody projector,
//! fitting, and the encode/decode pair.
//!
//! `encode` factors a feature matrix `W` into three streams: per-frame
//! content indices against a frozen codebook, a prosody stream in a low
//! dimensional projection of the instance-normalized residual, and a
//! time-invariant speaker vector built from the residual's per-dimension
//! mean and standard deviation. `decode` is the algebraic inverse
//! `W_hat = C + sigma * unproject(P) + mu`, so every quantization-induced
//! error is measurable in isolation.

use serde::{Deserialize, Serialize};

use crate::codebook::{fit_residual_stack, Codebook, KMeansConfig};
use crate::error::{Error, Result};
use crate::features::{
    channel_stats, denormalize, instance_normalize, normalize_with, ChannelStats, FeatureMatrix,
};
use crate::hash::fnv1a64;
use crate::linalg::{dot, jacobi_eigh, orthonormalize_rows};
use crate::quantize::{rvq_dequantize, rvq_quantize, vq_dequantize, vq_quantize, GrvqStack};
use crate::scalar::Scalar;

/// Which streams stay continuous and which are quantized.
///
/// * `Skq` — mean-only normalization, continuous prosody and speaker.
/// * `SkqSigma` — full normalization, continuous prosody and speaker.
/// * `Skq2Sigma` — prosody quantized, speaker continuous.
/// * `Skq3Sigma` — prosody and speaker quantized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Skq,
    SkqSigma,
    Skq2Sigma,
    Skq3Sigma,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Skq,
        Variant::SkqSigma,
        Variant::Skq2Sigma,
        Variant::Skq3Sigma,
    ];

    /// Whether the residual std is estimated and carried in the speaker
    /// vector; off means normalization only subtracts the mean.
    pub fn include_sigma(self) -> bool {
        !matches!(self, Variant::Skq)
    }

    pub fn quantize_prosody(self) -> bool {
        matches!(self, Variant::Skq2Sigma | Variant::Skq3Sigma)
    }

    pub fn quantize_speaker(self) -> bool {
        matches!(self, Variant::Skq3Sigma)
    }

    /// Stable token used in config files and stream headers.
    pub fn token(self) -> &'static str {
        match self {
            Variant::Skq => "skq",
            Variant::SkqSigma => "skq-sigma",
            Variant::Skq2Sigma => "skq2-sigma",
            Variant::Skq3Sigma => "skq3-sigma",
        }
    }

    /// Human-readable label.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Skq => "SKQ",
            Variant::SkqSigma => "SKQ+\u{3c3}",
            Variant::Skq2Sigma => "SKQ2+\u{3c3}",
            Variant::Skq3Sigma => "SKQ3+\u{3c3}",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "skq" => Ok(Variant::Skq),
            "skq-sigma" => Ok(Variant::SkqSigma),
            "skq2-sigma" => Ok(Variant::Skq2Sigma),
            "skq3-sigma" => Ok(Variant::Skq3Sigma),
            other => Err(Error::InvalidInput(format!(
                "unknown variant '{other}' (expected skq, skq-sigma, skq2-sigma, skq3-sigma)"
            ))),
        }
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.token())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All hyperparameters of the quantizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub dim: usize,
    /// Prosody projection width `F`.
    pub prosody_dim: usize,
    pub frame_rate_hz: f64,
    pub content_codebook_id: String,
    pub content_codebook_size: usize,
    pub prosody_layers: usize,
    pub prosody_codebook_size: usize,
    pub speaker_groups: usize,
    pub speaker_layers: usize,
    pub speaker_codebook_size: usize,
    pub lookup_dim: usize,
    pub variant: Variant,
}

impl QuantizerConfig {
    /// The full-scale preset: 1024-dim features at 50 Hz, a 1000-entry
    /// content codebook, 8-dim prosody with a 2x1000 RVQ, and a 16-group,
    /// 8-layer GRVQ of the 2048-dim speaker vector with 1024 codes per
    /// layer.
    pub fn paper_skq3() -> Self {
        Self {
            dim: 1024,
            prosody_dim: 8,
            frame_rate_hz: 50.0,
            content_codebook_id: "content".into(),
            content_codebook_size: 1000,
            prosody_layers: 2,
            prosody_codebook_size: 1000,
            speaker_groups: 16,
            speaker_layers: 8,
            speaker_codebook_size: 1024,
            lookup_dim: 8,
            variant: Variant::Skq3Sigma,
        }
    }

    /// Small preset for fast runs: 32-dim features, 16-entry codebooks,
    /// 4-dim prosody, 4-group 2-layer speaker GRVQ.
    pub fn desk_small() -> Self {
        Self {
            dim: 32,
            prosody_dim: 4,
            frame_rate_hz: 50.0,
            content_codebook_id: "content".into(),
            content_codebook_size: 16,
            prosody_layers: 2,
            prosody_codebook_size: 16,
            speaker_groups: 4,
            speaker_layers: 2,
            speaker_codebook_size: 16,
            lookup_dim: 8,
            variant: Variant::Skq3Sigma,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper-skq3" => Ok(Self::paper_skq3()),
            "desk-small" => Ok(Self::desk_small()),
            other => Err(Error::InvalidInput(format!(
                "unknown preset '{other}' (expected paper-skq3 or desk-small)"
            ))),
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// The dimension of the pre-quantization speaker vector for this
    /// variant: `[mean; std]` with sigma, mean only without.
    pub fn speaker_vector_dim(&self) -> usize {
        if self.variant.include_sigma() {
            2 * self.dim
        } else {
            self.dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0
            || self.prosody_dim == 0
            || self.content_codebook_size == 0
            || self.prosody_layers == 0
            || self.prosody_codebook_size == 0
            || self.speaker_groups == 0
            || self.speaker_layers == 0
            || self.speaker_codebook_size == 0
            || self.lookup_dim == 0
        {
            return Err(Error::InvalidInput(
                "all config sizes must be at least 1".into(),
            ));
        }
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz > 0.0) {
            return Err(Error::InvalidInput("frame rate must be positive".into()));
        }
        if self.prosody_dim > self.dim {
            return Err(Error::InvalidInput(format!(
                "prosody_dim {} exceeds feature dim {}",
                self.prosody_dim, self.dim
            )));
        }
        let sv = 2 * self.dim;
        if sv % self.speaker_groups != 0 {
            return Err(Error::InvalidInput(format!(
                "speaker vector dim {sv} not divisible into {} groups",
                self.speaker_groups
            )));
        }
        if self.lookup_dim > sv / self.speaker_groups {
            return Err(Error::InvalidInput(format!(
                "lookup_dim {} exceeds speaker group width {}",
                self.lookup_dim,
                sv / self.speaker_groups
            )));
        }
        Ok(())
    }

    /// Canonical sorted `key=value` text form; the source of the config
    /// hash and the representation stored in pipeline archives.
    pub fn canonical_text(&self) -> String {
        let mut lines = vec![
            format!("content_codebook_id={}", self.content_codebook_id),
            format!("content_codebook_size={}", self.content_codebook_size),
            format!("dim={}", self.dim),
            format!("frame_rate_hz={}", self.frame_rate_hz),
            format!("lookup_dim={}", self.lookup_dim),
            format!("prosody_codebook_size={}", self.prosody_codebook_size),
            format!("prosody_dim={}", self.prosody_dim),
            format!("prosody_layers={}", self.prosody_layers),
            format!("speaker_codebook_size={}", self.speaker_codebook_size),
            format!("speaker_groups={}", self.speaker_groups),
            format!("speaker_layers={}", self.speaker_layers),
            format!("variant={}", self.variant.token()),
        ];
        lines.sort();
        let mut out = String::new();
        for l in lines {
            out.push_str(&l);
            out.push('\n');
        }
        out
    }

    pub fn from_canonical_text(text: &str) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::MalformedSection {
                    context: "config text",
                    detail: format!("missing '=' in line '{line}'"),
                })?;
            map.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<String> {
            map.get(k).cloned().ok_or_else(|| Error::MalformedSection {
                context: "config text",
                detail: format!("missing key '{k}'"),
            })
        };
        let parse_usize = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| Error::MalformedSection {
                context: "config text",
                detail: format!("key '{k}' is not an integer"),
            })
        };
        let cfg = Self {
            dim: parse_usize("dim")?,
            prosody_dim: parse_usize("prosody_dim")?,
            frame_rate_hz: get("frame_rate_hz")?
                .parse()
                .map_err(|_| Error::MalformedSection {
                    context: "config text",
                    detail: "frame_rate_hz is not a number".into(),
                })?,
            content_codebook_id: get("content_codebook_id")?,
            content_codebook_size: parse_usize("content_codebook_size")?,
            prosody_layers: parse_usize("prosody_layers")?,
            prosody_codebook_size: parse_usize("prosody_codebook_size")?,
            speaker_groups: parse_usize("speaker_groups")?,
            speaker_layers: parse_usize("speaker_layers")?,
            speaker_codebook_size: parse_usize("speaker_codebook_size")?,
            lookup_dim: parse_usize("lookup_dim")?,
            variant: get("variant")?.parse()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// FNV-1a 64 of the canonical text.
    pub fn hash(&self) -> u64 {
        fnv1a64(self.canonical_text().as_bytes())
    }
}

/// Orthonormal `F x D` projection fitted by PCA over pooled normalized
/// residual frames.
///
/// Rows are the top principal directions, so `unproject` (the transpose) is
/// a loss-free inverse on anything inside the fitted subspace. The map is
/// pure linear: no mean offset is folded in, because the normalized
/// residual's per-utterance time-mean is exactly zero by construction.
#[derive(Debug, Clone)]
pub struct ProsodyProjector<T: Scalar = f64> {
    /// Row-major `F x D`, orthonormal rows.
    rows: Vec<T>,
    out_dim: usize,
    in_dim: usize,
    /// Fraction of total input variance captured by the `F` components.
    explained_variance: f64,
}

impl<T: Scalar> ProsodyProjector<T> {
    pub fn from_rows(
        rows: Vec<T>,
        out_dim: usize,
        in_dim: usize,
        explained_variance: f64,
    ) -> Result<Self> {
        if rows.len() != out_dim * in_dim || out_dim == 0 || in_dim == 0 {
            return Err(Error::ShapeMismatch {
                context: "projector shape",
                expected: format!("{out_dim} x {in_dim}"),
                got: format!("{} values", rows.len()),
            });
        }
        for r in 0..out_dim {
            for r2 in r..out_dim {
                let d = dot(
                    &rows[r * in_dim..(r + 1) * in_dim],
                    &rows[r2 * in_dim..(r2 + 1) * in_dim],
                )
                .to_f64_lossy();
                let want = if r == r2 { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-5 {
                    return Err(Error::InvalidInput(
                        "projector rows must be orthonormal".into(),
                    ));
                }
            }
        }
        Ok(Self {
            rows,
            out_dim,
            in_dim,
            explained_variance,
        })
    }

    /// Fits the top `out_dim` principal components of pooled frames (flat
    /// row-major, `in_dim` wide) by orthogonal iteration with a final
    /// Rayleigh-Ritz rotation. Deterministic for a given seed.
    pub fn fit(frames: &[T], in_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        if in_dim == 0 || out_dim == 0 || out_dim > in_dim {
            return Err(Error::InvalidInput(format!(
                "invalid projector dims {out_dim} x {in_dim}"
            )));
        }
        let n = frames.len() / in_dim;
        if n == 0 || frames.len() % in_dim != 0 {
            return Err(Error::InvalidInput(
                "frame data must be a positive multiple of in_dim".into(),
            ));
        }
        // Second-moment matrix; pooled frames are centered per utterance
        // upstream so this equals the covariance.
        let mut cov = vec![T::zero(); in_dim * in_dim];
        let inv_n = T::from_f64_lossy(1.0 / n as f64);
        for frame in frames.chunks_exact(in_dim) {
            for i in 0..in_dim {
                let fi = frame[i];
                let row = &mut cov[i * in_dim..(i + 1) * in_dim];
                for (j, &fj) in frame.iter().enumerate() {
                    row[j] += fi * fj;
                }
            }
        }
        for v in cov.iter_mut() {
            *v *= inv_n;
        }
        let total_variance: f64 = (0..in_dim)
            .map(|i| cov[i * in_dim + i].to_f64_lossy())
            .sum();

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut basis: Vec<Vec<T>> = (0..out_dim)
            .map(|_| {
                (0..in_dim)
                    .map(|_| T::from_f64_lossy(StandardNormal.sample(&mut rng)))
                    .collect()
            })
            .collect();
        if !orthonormalize_rows(&mut basis) {
            return Err(Error::InvalidInput("degenerate random basis".into()));
        }
        let apply_cov = |v: &[T], out: &mut [T]| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = dot(&cov[i * in_dim..(i + 1) * in_dim], v);
            }
        };
        let mut ritz_prev = vec![f64::INFINITY; out_dim];
        for _ in 0..300 {
            let mut next: Vec<Vec<T>> = basis
                .iter()
                .map(|b| {
                    let mut out = vec![T::zero(); in_dim];
                    apply_cov(b, &mut out);
                    out
                })
                .collect();
            if !orthonormalize_rows(&mut next) {
                break; // rank-deficient; keep the previous basis
            }
            basis = next;
            let ritz: Vec<f64> = basis
                .iter()
                .map(|b| {
                    let mut cb = vec![T::zero(); in_dim];
                    apply_cov(b, &mut cb);
                    dot(b, &cb).to_f64_lossy()
                })
                .collect();
            let moved = ritz
                .iter()
                .zip(&ritz_prev)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            let scale = ritz.iter().fold(1e-300f64, |m, &v| m.max(v.abs()));
            ritz_prev = ritz;
            if moved <= 1e-13 * scale {
                break;
            }
        }
        // Rayleigh-Ritz: diagonalize the projected covariance and rotate the
        // basis so each row is an eigenvector with a definite eigenvalue.
        let mut small = vec![T::zero(); out_dim * out_dim];
        let images: Vec<Vec<T>> = basis
            .iter()
            .map(|b| {
                let mut out = vec![T::zero(); in_dim];
                apply_cov(b, &mut out);
                out
            })
            .collect();
        for i in 0..out_dim {
            for j in 0..out_dim {
                small[i * out_dim + j] = dot(&basis[i], &images[j]);
            }
        }
        let (eigvals, eigvecs) = jacobi_eigh(&small, out_dim);
        let mut rows = vec![T::zero(); out_dim * in_dim];
        for k in 0..out_dim {
            for (b, basis_row) in basis.iter().enumerate() {
                let w = eigvecs[k * out_dim + b];
                if w != T::zero() {
                    for d in 0..in_dim {
                        rows[k * in_dim + d] += w * basis_row[d];
                    }
                }
            }
        }
        // Deterministic sign: largest-magnitude entry of each row positive.
        for k in 0..out_dim {
            let row = &mut rows[k * in_dim..(k + 1) * in_dim];
            let mut arg = 0usize;
            let mut best = T::zero();
            for (d, &v) in row.iter().enumerate() {
                if v.abs() > best {
                    best = v.abs();
                    arg = d;
                }
            }
            if row[arg] < T::zero() {
                for v in row.iter_mut() {
                    *v = -*v;
                }
            }
        }
        let rows: Vec<T> = rows.into_iter().map(Scalar::canonical_f32).collect();
        let captured: f64 = eigvals.iter().map(|v| v.to_f64_lossy()).sum();
        let explained = if total_variance > 0.0 {
            captured / total_variance
        } else {
            1.0
        };
        Self::from_rows(rows, out_dim, in_dim, explained)
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn rows(&self) -> &[T] {
        &self.rows
    }

    pub fn explained_variance(&self) -> f64 {
        self.explained_variance
    }

    /// Maps `T x D` frames down to `T x F`.
    pub fn project(&self, m: &FeatureMatrix<T>) -> Result<FeatureMatrix<T>> {
        if m.dim() != self.in_dim {
            return Err(Error::ShapeMismatch {
                context: "projection input dim",
                expected: format!("{}", self.in_dim),
                got: format!("{}", m.dim()),
            });
        }
        let mut data = Vec::with_capacity(m.n_frames() * self.out_dim);
        for frame in m.frames() {
            for k in 0..self.out_dim {
                data.push(dot(
                    &self.rows[k * self.in_dim..(k + 1) * self.in_dim],
                    frame,
                ));
            }
        }
        Ok(FeatureMatrix::from_raw(
            data,
            m.n_frames(),
            self.out_dim,
            m.frame_rate_hz(),
        ))
    }

    /// Maps `T x F` frames back up to `T x D` through the transpose.
    pub fn unproject(&self, p: &FeatureMatrix<T>) -> Result<FeatureMatrix<T>> {
        if p.dim() != self.out_dim {
            return Err(Error::ShapeMismatch {
                context: "unprojection input dim",
                expected: format!("{}", self.out_dim),
                got: format!("{}", p.dim()),
            });
        }
        let mut data = vec![T::zero(); p.n_frames() * self.in_dim];
        for (t, frame) in p.frames().enumerate() {
            let out = &mut data[t * self.in_dim..(t + 1) * self.in_dim];
            for (k, &coef) in frame.iter().enumerate() {
                let row = &self.rows[k * self.in_dim..(k + 1) * self.in_dim];
                for (o, &r) in out.iter_mut().zip(row) {
                    *o += coef * r;
                }
            }
        }
        Ok(FeatureMatrix::from_raw(
            data,
            p.n_frames(),
            self.in_dim,
            p.frame_rate_hz(),
        ))
    }
}

/// Prosody stream: RVQ indices (`[layer][frame]`) or the continuous
/// projected matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum ProsodyCodes<T: Scalar = f64> {
    Quantized(Vec<Vec<u32>>),
    Continuous(FeatureMatrix<T>),
}

/// Speaker stream: GRVQ indices (`[group][layer]`) or the continuous
/// vector (`[mean; std]`, or mean only without sigma).
#[derive(Debug, Clone, PartialEq)]
pub enum SpeakerCodes<T: Scalar = f64> {
    Quantized(Vec<Vec<u32>>),
    Continuous(Vec<T>),
}

/// The three discrete/continuous streams produced by `encode`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisentangledCodes<T: Scalar = f64> {
    pub config_hash: u64,
    pub variant: Variant,
    pub n_frames: usize,
    pub frame_rate_hz: f64,
    pub content: Vec<u32>,
    pub prosody: ProsodyCodes<T>,
    pub speaker: SpeakerCodes<T>,
}

impl<T: Scalar> DisentangledCodes<T> {
    /// Checks stream shapes against a config.
    pub fn validate_against(&self, cfg: &QuantizerConfig) -> Result<()> {
        if self.config_hash != cfg.hash() {
            return Err(Error::ConfigMismatch(format!(
                "codes built with config {:#018x}, expected {:#018x}",
                self.config_hash,
                cfg.hash()
            )));
        }
        if self.variant != cfg.variant {
            return Err(Error::ConfigMismatch(format!(
                "codes variant {} vs config variant {}",
                self.variant, cfg.variant
            )));
        }
        if self.content.len() != self.n_frames {
            return Err(Error::ConfigMismatch(
                "content stream length differs from frame count".into(),
            ));
        }
        match (&self.prosody, cfg.variant.quantize_prosody()) {
            (ProsodyCodes::Quantized(layers), true) => {
                if layers.len() != cfg.prosody_layers
                    || layers.iter().any(|l| l.len() != self.n_frames)
                {
                    return Err(Error::ConfigMismatch("prosody stream shape".into()));
                }
            }
            (ProsodyCodes::Continuous(m), false) => {
                if m.dim() != cfg.prosody_dim || m.n_frames() != self.n_frames {
                    return Err(Error::ConfigMismatch("prosody matrix shape".into()));
                }
            }
            _ => {
                return Err(Error::ConfigMismatch(
                    "prosody stream kind does not match variant".into(),
                ))
            }
        }
        match (&self.speaker, cfg.variant.quantize_speaker()) {
            (SpeakerCodes::Quantized(groups), true) => {
                if groups.len() != cfg.speaker_groups
                    || groups.iter().any(|g| g.len() != cfg.speaker_layers)
                {
                    return Err(Error::ConfigMismatch("speaker stream shape".into()));
                }
            }
            (SpeakerCodes::Continuous(v), false) => {
                if v.len() != cfg.speaker_vector_dim() {
                    return Err(Error::ConfigMismatch("speaker vector length".into()));
                }
            }
            _ => {
                return Err(Error::ConfigMismatch(
                    "speaker stream kind does not match variant".into(),
                ))
            }
        }
        Ok(())
    }
}

/// A fitted pipeline: frozen content codebook, prosody projector, and the
/// optional quantizer stacks demanded by the variant. Immutable after
/// fitting; encode/decode are pure.
#[derive(Debug, Clone)]
pub struct FittedPipeline<T: Scalar = f64> {
    cfg: QuantizerConfig,
    content_cb: Codebook<T>,
    projector: ProsodyProjector<T>,
    prosody_stack: Option<Vec<Codebook<T>>>,
    speaker_grvq: Option<GrvqStack<T>>,
    film: Option<crate::film::FilmReadout<T>>,
}

/// Intermediate per-utterance analysis shared by fitting and encoding.
struct Analysis<T: Scalar> {
    content_indices: Vec<u32>,
    normalized_residual: FeatureMatrix<T>,
    stats: ChannelStats<T>,
}

fn analyze<T: Scalar>(
    w: &FeatureMatrix<T>,
    cfg: &QuantizerConfig,
    content_cb: &Codebook<T>,
) -> Result<Analysis<T>> {
    let vq = vq_quantize(w, content_cb)?;
    let residual = w.sub(&vq.quantized)?;
    let (normalized_residual, stats) = if cfg.variant.include_sigma() {
        instance_normalize(&residual)?
    } else {
        let full = channel_stats(&residual);
        let stats = ChannelStats::mean_only(full.mean);
        let normalized = normalize_with(&residual, &stats)?;
        (normalized, stats)
    };
    Ok(Analysis {
        content_indices: vq.indices,
        normalized_residual,
        stats,
    })
}

fn speaker_vector<T: Scalar>(stats: &ChannelStats<T>, cfg: &QuantizerConfig) -> Vec<T> {
    if cfg.variant.include_sigma() {
        stats.concat()
    } else {
        stats.mean.clone()
    }
}

/// Fits the prosody projector and the variant's quantizer stacks on a
/// training corpus. The content codebook is stored untouched.
pub fn fit_pipeline<T: Scalar>(
    training: &[FeatureMatrix<T>],
    cfg: &QuantizerConfig,
    content_cb: Codebook<T>,
    seed: u64,
) -> Result<FittedPipeline<T>> {
    cfg.validate()?;
    if training.is_empty() {
        return Err(Error::Infeasible("empty training set".into()));
    }
    if content_cb.dim() != cfg.dim {
        return Err(Error::ShapeMismatch {
            context: "content codebook dim",
            expected: format!("{}", cfg.dim),
            got: format!("{}", content_cb.dim()),
        });
    }
    if content_cb.n_entries() != cfg.content_codebook_size {
        return Err(Error::ConfigMismatch(format!(
            "content codebook has {} entries, config says {}",
            content_cb.n_entries(),
            cfg.content_codebook_size
        )));
    }
    let total_frames: usize = training.iter().map(FeatureMatrix::n_frames).sum();
    if cfg.variant.quantize_prosody() && total_frames < cfg.prosody_codebook_size {
        return Err(Error::Infeasible(format!(
            "{total_frames} training frames cannot fill a {}-entry prosody codebook",
            cfg.prosody_codebook_size
        )));
    }
    if cfg.variant.quantize_speaker() && training.len() < cfg.speaker_codebook_size {
        return Err(Error::Infeasible(format!(
            "{} training utterances cannot fill a {}-entry speaker codebook",
            training.len(),
            cfg.speaker_codebook_size
        )));
    }

    let mut pooled_normalized: Vec<T> = Vec::with_capacity(total_frames * cfg.dim);
    let mut speaker_vectors: Vec<T> = Vec::with_capacity(training.len() * 2 * cfg.dim);
    let mut analyses = Vec::with_capacity(training.len());
    for w in training {
        if w.dim() != cfg.dim {
            return Err(Error::ShapeMismatch {
                context: "training utterance dim",
                expected: format!("{}", cfg.dim),
                got: format!("{}", w.dim()),
            });
        }
        let a = analyze(w, cfg, &content_cb)?;
        pooled_normalized.extend_from_slice(a.normalized_residual.data());
        if cfg.variant.quantize_speaker() {
            speaker_vectors.extend(a.stats.concat());
        }
        analyses.push(a);
    }

    let projector = ProsodyProjector::fit(
        &pooled_normalized,
        cfg.dim,
        cfg.prosody_dim,
        seed.wrapping_add(0x400),
    )?;

    let prosody_stack = if cfg.variant.quantize_prosody() {
        let mut projected: Vec<T> = Vec::with_capacity(total_frames * cfg.prosody_dim);
        for a in &analyses {
            let p = projector.project(&a.normalized_residual)?;
            projected.extend_from_slice(p.data());
        }
        let kmeans = KMeansConfig {
            n_centroids: cfg.prosody_codebook_size,
            max_iters: 100,
            batch_size: 0,
            seed: seed.wrapping_add(0x100),
            tolerance: 1e-9,
        };
        Some(fit_residual_stack(
            &projected,
            cfg.prosody_dim,
            cfg.prosody_layers,
            &kmeans,
            true,
            "prosody",
        )?)
    } else {
        None
    };

    let speaker_grvq = if cfg.variant.quantize_speaker() {
        let kmeans = KMeansConfig {
            n_centroids: cfg.speaker_codebook_size,
            max_iters: 100,
            batch_size: 0,
            seed: seed.wrapping_add(0x200),
            tolerance: 1e-9,
        };
        Some(GrvqStack::fit(
            &speaker_vectors,
            2 * cfg.dim,
            cfg.speaker_groups,
            cfg.speaker_layers,
            cfg.lookup_dim,
            &kmeans,
            seed.wrapping_add(0x300),
            "speaker",
        )?)
    } else {
        None
    };

    Ok(FittedPipeline {
        cfg: QuantizerConfig {
            content_codebook_id: content_cb.id().to_string(),
            ..cfg.clone()
        },
        content_cb,
        projector,
        prosody_stack,
        speaker_grvq,
        film: None,
    })
}

impl<T: Scalar> FittedPipeline<T> {
    /// Reassembles a pipeline from parts (archive loading).
    pub fn from_parts(
        cfg: QuantizerConfig,
        content_cb: Codebook<T>,
        projector: ProsodyProjector<T>,
        prosody_stack: Option<Vec<Codebook<T>>>,
        speaker_grvq: Option<GrvqStack<T>>,
        film: Option<crate::film::FilmReadout<T>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if content_cb.dim() != cfg.dim || content_cb.n_entries() != cfg.content_codebook_size {
            return Err(Error::ConfigMismatch(
                "content codebook does not match config".into(),
            ));
        }
        if projector.in_dim() != cfg.dim || projector.out_dim() != cfg.prosody_dim {
            return Err(Error::ConfigMismatch(
                "projector does not match config".into(),
            ));
        }
        if cfg.variant.quantize_prosody() {
            let stack = prosody_stack
                .as_ref()
                .ok_or_else(|| Error::Unfitted("prosody codebooks".into()))?;
            if stack.len() != cfg.prosody_layers
                || stack.iter().any(|cb| {
                    cb.dim() != cfg.prosody_dim || cb.n_entries() != cfg.prosody_codebook_size
                })
            {
                return Err(Error::ConfigMismatch("prosody stack shape".into()));
            }
        }
        if cfg.variant.quantize_speaker() {
            let grvq = speaker_grvq
                .as_ref()
                .ok_or_else(|| Error::Unfitted("speaker quantizer".into()))?;
            if grvq.input_dim() != 2 * cfg.dim
                || grvq.n_groups() != cfg.speaker_groups
                || grvq.n_layers() != cfg.speaker_layers
                || grvq.lookup_dim() != cfg.lookup_dim
            {
                return Err(Error::ConfigMismatch("speaker quantizer shape".into()));
            }
        }
        Ok(Self {
            cfg,
            content_cb,
            projector,
            prosody_stack,
            speaker_grvq,
            film,
        })
    }

    pub fn config(&self) -> &QuantizerConfig {
        &self.cfg
    }

    pub fn content_codebook(&self) -> &Codebook<T> {
        &self.content_cb
    }

    pub fn projector(&self) -> &ProsodyProjector<T> {
        &self.projector
    }

    pub fn prosody_stack(&self) -> Option<&[Codebook<T>]> {
        self.prosody_stack.as_deref()
    }

    pub fn speaker_grvq(&self) -> Option<&GrvqStack<T>> {
        self.speaker_grvq.as_ref()
    }

    pub fn film(&self) -> Option<&crate::film::FilmReadout<T>> {
        self.film.as_ref()
    }

    pub fn set_film(&mut self, film: Option<crate::film::FilmReadout<T>>) {
        self.film = film;
    }

    /// A view of the same fitted components under another variant. Works
    /// whenever the target variant needs no codebooks beyond those already
    /// fitted (any downgrade from the fitted variant).
    pub fn with_variant(&self, variant: Variant) -> Result<Self> {
        if variant.quantize_prosody() && self.prosody_stack.is_none() {
            return Err(Error::Unfitted(format!(
                "prosody codebooks required for variant {variant}"
            )));
        }
        if variant.quantize_speaker() && self.speaker_grvq.is_none() {
            return Err(Error::Unfitted(format!(
                "speaker quantizer required for variant {variant}"
            )));
        }
        let mut out = self.clone();
        out.cfg.variant = variant;
        Ok(out)
    }

    /// Factors `W` into content, prosody, and speaker streams.
    pub fn encode(&self, w: &FeatureMatrix<T>) -> Result<DisentangledCodes<T>> {
        if w.dim() != self.cfg.dim {
            return Err(Error::ShapeMismatch {
                context: "encode input dim",
                expected: format!("{}", self.cfg.dim),
                got: format!("{}", w.dim()),
            });
        }
        let a = analyze(w, &self.cfg, &self.content_cb)?;
        let projected = self.projector.project(&a.normalized_residual)?;
        let prosody = if self.cfg.variant.quantize_prosody() {
            let stack = self
                .prosody_stack
                .as_ref()
                .ok_or_else(|| Error::Unfitted("prosody codebooks".into()))?;
            ProsodyCodes::Quantized(rvq_quantize(&projected, stack)?.indices)
        } else {
            ProsodyCodes::Continuous(projected)
        };
        let raw_speaker = speaker_vector(&a.stats, &self.cfg);
        let speaker = if self.cfg.variant.quantize_speaker() {
            let grvq = self
                .speaker_grvq
                .as_ref()
                .ok_or_else(|| Error::Unfitted("speaker quantizer".into()))?;
            SpeakerCodes::Quantized(grvq.quantize(&raw_speaker)?.indices)
        } else {
            SpeakerCodes::Continuous(raw_speaker)
        };
        Ok(DisentangledCodes {
            config_hash: self.cfg.hash(),
            variant: self.cfg.variant,
            n_frames: w.n_frames(),
            frame_rate_hz: w.frame_rate_hz(),
            content: a.content_indices,
            prosody,
            speaker,
        })
    }

    /// Dequantizes the prosody stream to the `T x F` projected matrix.
    pub fn dequantize_prosody(&self, codes: &DisentangledCodes<T>) -> Result<FeatureMatrix<T>> {
        match &codes.prosody {
            ProsodyCodes::Continuous(m) => Ok(m.clone()),
            ProsodyCodes::Quantized(indices) => {
                let stack = self
                    .prosody_stack
                    .as_ref()
                    .ok_or_else(|| Error::Unfitted("prosody codebooks".into()))?;
                rvq_dequantize(indices, stack, codes.frame_rate_hz)
            }
        }
    }

    /// Dequantizes the speaker stream to `(mean, std)`; std is all ones for
    /// sigma-less variants.
    pub fn dequantize_speaker(&self, codes: &DisentangledCodes<T>) -> Result<ChannelStats<T>> {
        let d = self.cfg.dim;
        let vector = match &codes.speaker {
            SpeakerCodes::Continuous(v) => v.clone(),
            SpeakerCodes::Quantized(indices) => {
                let grvq = self
                    .speaker_grvq
                    .as_ref()
                    .ok_or_else(|| Error::Unfitted("speaker quantizer".into()))?;
                grvq.dequantize(indices)?
            }
        };
        if codes.variant.include_sigma() {
            if vector.len() != 2 * d {
                return Err(Error::ConfigMismatch("speaker vector length".into()));
            }
            Ok(ChannelStats {
                mean: vector[..d].to_vec(),
                std: vector[d..].to_vec(),
            })
        } else {
            if vector.len() != d {
                return Err(Error::ConfigMismatch("speaker vector length".into()));
            }
            Ok(ChannelStats::mean_only(vector))
        }
    }

    /// Raw dequantized speaker vector as stored in the stream.
    pub fn dequantize_speaker_vector(&self, codes: &DisentangledCodes<T>) -> Result<Vec<T>> {
        match &codes.speaker {
            SpeakerCodes::Continuous(v) => Ok(v.clone()),
            SpeakerCodes::Quantized(indices) => {
                let grvq = self
                    .speaker_grvq
                    .as_ref()
                    .ok_or_else(|| Error::Unfitted("speaker quantizer".into()))?;
                grvq.dequantize(indices)
            }
        }
    }

    /// Feature-space reconstruction `C + sigma * unproject(P) + mu`.
    pub fn decode(&self, codes: &DisentangledCodes<T>) -> Result<FeatureMatrix<T>> {
        codes.validate_against(&self.cfg)?;
        let content = vq_dequantize(&codes.content, &self.content_cb, codes.frame_rate_hz)?;
        let prosody = self.dequantize_prosody(codes)?;
        let stats = self.dequantize_speaker(codes)?;
        let unprojected = self.projector.unproject(&prosody)?;
        let affine = denormalize(&unprojected, &stats)?;
        let mut data = Vec::with_capacity(content.data().len());
        for (&c, &a) in content.data().iter().zip(affine.data()) {
            data.push(c + a);
        }
        Ok(FeatureMatrix::from_raw(
            data,
            content.n_frames(),
            content.dim(),
            codes.frame_rate_hz,
        ))
    }

    /// The decoded prosody term alone: `sigma * unproject(P)`.
    pub fn decode_prosody_term(&self, codes: &DisentangledCodes<T>) -> Result<FeatureMatrix<T>> {
        let prosody = self.dequantize_prosody(codes)?;
        let stats = self.dequantize_speaker(codes)?;
        let unprojected = self.projector.unproject(&prosody)?;
        let zero_mean = ChannelStats {
            mean: vec![T::zero(); stats.dim()],
            std: stats.std,
        };
        denormalize(&unprojected, &zero_mean)
    }
}
