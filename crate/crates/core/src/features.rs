//! Feature matrices, instance normalization, and the synthetic corpus
//! generator.
//!
//! A [`FeatureMatrix`] holds `T` frames of `D`-dimensional features in
//! frame-major order with a frame-rate tag. Instance normalization
//! standardizes each dimension along the time axis; its per-dimension mean
//! and standard deviation are the time-invariant statistics consumed by the
//! speaker stream. The synthetic generator produces speech-like corpora in
//! which content, speaker, and prosody factors are planted independently so
//! downstream separation can be checked against ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::jacobi_eigh;
use crate::scalar::Scalar;

/// Floor applied to per-dimension standard deviations before division.
pub const STD_EPSILON: f64 = 1e-5;

const FEATURE_MAGIC: [u8; 4] = *b"FTR1";
const FEATURE_VERSION: u8 = 0x01;
/// Parser cap on `T * D` to keep allocations bounded on hostile headers.
const MAX_ELEMENTS: u64 = u32::MAX as u64;

/// `T x D` frame-major matrix of features with frame-rate metadata.
///
/// Invariants enforced at construction: `T >= 1`, `D >= 1`, all entries
/// finite, `frame_rate_hz > 0`. Values are immutable afterwards, so matrices
/// are freely shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T: Scalar = f64> {
    data: Vec<T>,
    n_frames: usize,
    dim: usize,
    frame_rate_hz: f64,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(data: Vec<T>, n_frames: usize, dim: usize, frame_rate_hz: f64) -> Result<Self> {
        if n_frames == 0 || dim == 0 {
            return Err(Error::InvalidInput(format!(
                "feature matrix must have at least one frame and one dim (got {n_frames} x {dim})"
            )));
        }
        if data.len() != n_frames * dim {
            return Err(Error::ShapeMismatch {
                context: "feature matrix data length",
                expected: format!("{}", n_frames * dim),
                got: format!("{}", data.len()),
            });
        }
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(Error::InvalidInput(format!(
                "frame rate must be positive and finite (got {frame_rate_hz})"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "feature matrix entries must be finite".into(),
            ));
        }
        Ok(Self {
            data,
            n_frames,
            dim,
            frame_rate_hz,
        })
    }

    /// Builds from per-frame rows.
    pub fn from_frames(frames: Vec<Vec<T>>, frame_rate_hz: f64) -> Result<Self> {
        let n_frames = frames.len();
        let dim = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != dim) {
            return Err(Error::InvalidInput("ragged frame lengths".into()));
        }
        let mut data = Vec::with_capacity(n_frames * dim);
        for f in frames {
            data.extend(f);
        }
        Self::new(data, n_frames, dim, frame_rate_hz)
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn frame(&self, t: usize) -> &[T] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Elementwise difference; `frame_rate_hz` is carried from `self`.
    /// Entries are not re-validated, so extreme inputs can produce
    /// non-finite residuals that downstream validation rejects.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "matrix subtraction")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Self {
            data,
            n_frames: self.n_frames,
            dim: self.dim,
            frame_rate_hz: self.frame_rate_hz,
        })
    }

    pub(crate) fn from_raw(data: Vec<T>, n_frames: usize, dim: usize, frame_rate_hz: f64) -> Self {
        debug_assert_eq!(data.len(), n_frames * dim);
        Self {
            data,
            n_frames,
            dim,
            frame_rate_hz,
        }
    }

    pub(crate) fn check_same_shape(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.n_frames != other.n_frames || self.dim != other.dim {
            return Err(Error::ShapeMismatch {
                context,
                expected: format!("{} x {}", self.n_frames, self.dim),
                got: format!("{} x {}", other.n_frames, other.dim),
            });
        }
        Ok(())
    }
}

/// Largest absolute entry difference between two same-shaped matrices.
pub fn max_abs_diff<T: Scalar>(a: &FeatureMatrix<T>, b: &FeatureMatrix<T>) -> Result<f64> {
    a.check_same_shape(b, "max_abs_diff")?;
    let mut m = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        m = m.max((x - y).abs().to_f64_lossy());
    }
    Ok(m)
}

/// Per-dimension time statistics of a feature matrix.
///
/// `std` is the population standard deviation (divide by `T`) floored at
/// [`STD_EPSILON`], so the stats stay usable for single-frame and constant
/// inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats<T: Scalar = f64> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> ChannelStats<T> {
    /// Stats that shift by `mean` but do not rescale.
    pub fn mean_only(mean: Vec<T>) -> Self {
        let std = vec![T::one(); mean.len()];
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Concatenated `[mean; std]` vector, the pre-quantization speaker form.
    pub fn concat(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.mean.len() * 2);
        v.extend_from_slice(&self.mean);
        v.extend_from_slice(&self.std);
        v
    }
}

/// Computes per-dimension time mean and floored population std.
pub fn channel_stats<T: Scalar>(m: &FeatureMatrix<T>) -> ChannelStats<T> {
    let d = m.dim();
    let t = m.n_frames();
    let inv_t = T::from_f64_lossy(1.0 / t as f64);
    let floor = T::from_f64_lossy(STD_EPSILON);
    let mut mean = vec![T::zero(); d];
    for frame in m.frames() {
        for (acc, &x) in mean.iter_mut().zip(frame) {
            *acc += x;
        }
    }
    for v in mean.iter_mut() {
        *v *= inv_t;
    }
    let mut var = vec![T::zero(); d];
    for frame in m.frames() {
        for ((acc, &x), &mu) in var.iter_mut().zip(frame).zip(&mean) {
            let dlt = x - mu;
            *acc += dlt * dlt;
        }
    }
    let std = var
        .into_iter()
        .map(|v| (v * inv_t).sqrt().max(floor))
        .collect();
    ChannelStats { mean, std }
}

/// `(x - mean) / std` per dimension, broadcast over frames.
pub fn normalize_with<T: Scalar>(
    m: &FeatureMatrix<T>,
    stats: &ChannelStats<T>,
) -> Result<FeatureMatrix<T>> {
    if stats.dim() != m.dim() {
        return Err(Error::ShapeMismatch {
            context: "normalization stats dim",
            expected: format!("{}", m.dim()),
            got: format!("{}", stats.dim()),
        });
    }
    let floor = T::from_f64_lossy(STD_EPSILON);
    let d = m.dim();
    let mut data = Vec::with_capacity(m.data().len());
    for frame in m.frames() {
        for i in 0..d {
            data.push((frame[i] - stats.mean[i]) / stats.std[i].max(floor));
        }
    }
    Ok(FeatureMatrix::from_raw(
        data,
        m.n_frames(),
        d,
        m.frame_rate_hz(),
    ))
}

/// Standardizes each dimension along the time axis.
///
/// Returns the normalized matrix together with the stats that invert it. For
/// a single frame or a constant dimension the std floors to [`STD_EPSILON`]
/// and the normalized entries are zero.
pub fn instance_normalize<T: Scalar>(
    m: &FeatureMatrix<T>,
) -> Result<(FeatureMatrix<T>, ChannelStats<T>)> {
    if m.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "instance normalization requires finite input".into(),
        ));
    }
    let stats = channel_stats(m);
    let normalized = normalize_with(m, &stats)?;
    Ok((normalized, stats))
}

/// Inverse of [`instance_normalize`]: `x * std + mean` per dimension.
pub fn denormalize<T: Scalar>(
    m: &FeatureMatrix<T>,
    stats: &ChannelStats<T>,
) -> Result<FeatureMatrix<T>> {
    if stats.dim() != m.dim() {
        return Err(Error::ShapeMismatch {
            context: "denormalization stats dim",
            expected: format!("{}", m.dim()),
            got: format!("{}", stats.dim()),
        });
    }
    let floor = T::from_f64_lossy(STD_EPSILON);
    let d = m.dim();
    let mut data = Vec::with_capacity(m.data().len());
    for frame in m.frames() {
        for i in 0..d {
            data.push(frame[i] * stats.std[i].max(floor) + stats.mean[i]);
        }
    }
    Ok(FeatureMatrix::from_raw(
        data,
        m.n_frames(),
        d,
        m.frame_rate_hz(),
    ))
}

// --- synthetic corpus -------------------------------------------------------

/// Parameters of the synthetic speech-like feature generator.
///
/// Each frame is built as
/// `w_t = m_{j_t} + g_s * (A p_t) + o_s + eps_t`: a content centroid, a
/// speaker gain applied to an up-mapped smooth prosody trajectory, a speaker
/// offset, and white noise. Content centroids are drawn `N(0, 4^2)` per
/// dimension. Each prosody axis drives its own disjoint set of feature
/// dimensions with distinct set sizes, which keeps the axes identifiable
/// from the features alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_speakers: usize,
    pub n_contents: usize,
    /// Std of the per-speaker additive offset.
    pub speaker_offset_scale: f64,
    /// Half-width of the per-speaker multiplicative gain around 1; must stay
    /// below 1 so gains remain positive.
    pub speaker_gain_spread: f64,
    /// Number of latent prosody axes; 0 disables the prosody term.
    pub prosody_dim: usize,
    /// AR(1) coefficient of the prosody walk, in `[0, 1)`.
    pub prosody_smoothness: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.n_speakers == 0 || self.n_contents == 0 {
            return Err(Error::InvalidInput(
                "n_speakers and n_contents must be at least 1".into(),
            ));
        }
        if self.speaker_offset_scale < 0.0 || self.noise_std < 0.0 {
            return Err(Error::InvalidInput("scales must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.speaker_gain_spread) {
            return Err(Error::InvalidInput(
                "speaker_gain_spread must lie in [0, 1)".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.prosody_smoothness) {
            return Err(Error::InvalidInput(
                "prosody_smoothness must lie in [0, 1)".into(),
            ));
        }
        if self.prosody_dim > 0 && dim < self.prosody_dim * 3 {
            return Err(Error::InvalidInput(format!(
                "feature dim {dim} too small for {} prosody axes (need >= 3x)",
                self.prosody_dim
            )));
        }
        Ok(())
    }
}

/// One generated utterance with its planted factors.
#[derive(Debug, Clone)]
pub struct SyntheticUtterance<T: Scalar = f64> {
    pub features: FeatureMatrix<T>,
    pub speaker: usize,
    /// Planted content index per frame.
    pub content: Vec<u32>,
    /// Whitened prosody trajectory, `prosody_dim` rows of `T` frames.
    pub prosody: Vec<Vec<T>>,
}

/// A generated corpus plus the corpus-level planted parameters.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus<T: Scalar = f64> {
    pub utterances: Vec<SyntheticUtterance<T>>,
    /// `n_contents` rows of `dim` entries.
    pub content_centroids: Vec<Vec<T>>,
    pub speaker_offsets: Vec<Vec<T>>,
    pub speaker_gains: Vec<Vec<T>>,
}

impl<T: Scalar> SyntheticCorpus<T> {
    /// Smallest pairwise Euclidean distance between planted content
    /// centroids.
    pub fn min_centroid_distance(&self) -> f64 {
        let mut min = f64::INFINITY;
        for i in 0..self.content_centroids.len() {
            for j in (i + 1)..self.content_centroids.len() {
                let d =
                    crate::linalg::sq_dist(&self.content_centroids[i], &self.content_centroids[j])
                        .sqrt()
                        .to_f64_lossy();
                min = min.min(d);
            }
        }
        min
    }
}

/// Splits `dim` feature dimensions into `axes` contiguous groups with
/// strictly increasing sizes (proportional to the axis number).
fn prosody_axis_sizes(dim: usize, axes: usize) -> Vec<usize> {
    let total_weight: usize = (1..=axes).sum();
    let mut sizes: Vec<usize> = (1..=axes)
        .map(|k| std::cmp::max(1, dim * k / total_weight))
        .collect();
    let mut assigned: usize = sizes.iter().sum();
    // Give leftovers to (or take overdraw from) the largest groups so the
    // ordering stays strict.
    let mut k = axes;
    while assigned < dim {
        sizes[k - 1] += 1;
        assigned += 1;
        k = if k > 1 { k - 1 } else { axes };
    }
    while assigned > dim {
        sizes[0] -= 1;
        assigned -= 1;
    }
    sizes
}

/// Generates a deterministic synthetic corpus.
///
/// The output is a pure function of `(spec, dim, frame_rate_hz,
/// n_utterances, frames_per_utterance)`. Speakers are assigned round-robin
/// over utterances. The prosody walk of each utterance is whitened to exact
/// zero time-mean and identity population covariance, so the planted
/// speaker statistics are recovered exactly on noise-free data.
pub fn generate_synthetic<T: Scalar>(
    spec: &SyntheticSpec,
    dim: usize,
    frame_rate_hz: f64,
    n_utterances: usize,
    frames_per_utterance: usize,
) -> Result<SyntheticCorpus<T>> {
    spec.validate(dim)?;
    if n_utterances == 0 || frames_per_utterance == 0 {
        return Err(Error::InvalidInput(
            "need at least one utterance and one frame".into(),
        ));
    }
    if spec.prosody_dim > 0 && frames_per_utterance <= spec.prosody_dim + 1 {
        return Err(Error::InvalidInput(format!(
            "frames_per_utterance ({frames_per_utterance}) must exceed prosody_dim + 1"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = StandardNormal;
    let draw = |rng: &mut ChaCha8Rng| -> f64 { normal.sample(rng) };

    const CONTENT_SCALE: f64 = 4.0;
    // Centroids are rounded to their f32 images so a codebook built from
    // them stores exactly these values.
    let centroids: Vec<Vec<f64>> = (0..spec.n_contents)
        .map(|_| {
            (0..dim)
                .map(|_| f64::from((CONTENT_SCALE * draw(&mut rng)) as f32))
                .collect()
        })
        .collect();

    // Prosody up-map: axis k drives a contiguous block of dims with random
    // per-dim magnitude and sign.
    let p_dim = spec.prosody_dim;
    let mut axis_of_dim = vec![usize::MAX; dim];
    let mut row_scale = vec![0.0f64; dim];
    if p_dim > 0 {
        let sizes = prosody_axis_sizes(dim, p_dim);
        let mag = Uniform::new(0.15f64, 0.5).expect("static range");
        let mut d0 = 0;
        for (k, &sz) in sizes.iter().enumerate() {
            for d in d0..d0 + sz {
                axis_of_dim[d] = k;
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                row_scale[d] = sign * mag.sample(&mut rng);
            }
            d0 += sz;
        }
    }

    let gain_u = Uniform::new_inclusive(-1.0f64, 1.0).expect("static range");
    let speaker_offsets: Vec<Vec<f64>> = (0..spec.n_speakers)
        .map(|_| {
            (0..dim)
                .map(|_| spec.speaker_offset_scale * draw(&mut rng))
                .collect()
        })
        .collect();
    let speaker_gains: Vec<Vec<f64>> = (0..spec.n_speakers)
        .map(|_| {
            (0..dim)
                .map(|_| 1.0 + spec.speaker_gain_spread * gain_u.sample(&mut rng))
                .collect()
        })
        .collect();

    let t_len = frames_per_utterance;
    let content_pick = Uniform::new(0u32, spec.n_contents as u32).expect("n_contents >= 1");
    let seg_len = Uniform::new_inclusive(2usize, 8).expect("static range");

    let mut utterances = Vec::with_capacity(n_utterances);
    for u in 0..n_utterances {
        let speaker = u % spec.n_speakers;
        // Piecewise-constant content sequence.
        let mut content = Vec::with_capacity(t_len);
        while content.len() < t_len {
            let j = content_pick.sample(&mut rng);
            let len = seg_len.sample(&mut rng).min(t_len - content.len());
            content.extend(std::iter::repeat(j).take(len));
        }

        // Smooth AR(1) walk, whitened per utterance.
        let mut prosody = vec![vec![0.0f64; t_len]; p_dim];
        if p_dim > 0 {
            let rho = spec.prosody_smoothness;
            let innov = (1.0 - rho * rho).sqrt();
            for row in prosody.iter_mut() {
                row[0] = draw(&mut rng);
                for t in 1..t_len {
                    row[t] = rho * row[t - 1] + innov * draw(&mut rng);
                }
            }
            whiten_rows(&mut prosody);
        }

        let off = &speaker_offsets[speaker];
        let gain = &speaker_gains[speaker];
        let mut data = Vec::with_capacity(t_len * dim);
        for t in 0..t_len {
            let m = &centroids[content[t] as usize];
            for d in 0..dim {
                let pro = if p_dim > 0 && axis_of_dim[d] != usize::MAX {
                    row_scale[d] * prosody[axis_of_dim[d]][t]
                } else {
                    0.0
                };
                let eps = if spec.noise_std > 0.0 {
                    spec.noise_std * draw(&mut rng)
                } else {
                    0.0
                };
                data.push(T::from_f64_lossy(m[d] + gain[d] * pro + off[d] + eps));
            }
        }
        let features = FeatureMatrix::new(data, t_len, dim, frame_rate_hz)?;
        utterances.push(SyntheticUtterance {
            features,
            speaker,
            content,
            prosody: prosody
                .iter()
                .map(|row| row.iter().map(|&x| T::from_f64_lossy(x)).collect())
                .collect(),
        });
    }

    let cast = |rows: &[Vec<f64>]| -> Vec<Vec<T>> {
        rows.iter()
            .map(|r| r.iter().map(|&x| T::from_f64_lossy(x)).collect())
            .collect()
    };
    Ok(SyntheticCorpus {
        utterances,
        content_centroids: cast(&centroids),
        speaker_offsets: cast(&speaker_offsets),
        speaker_gains: cast(&speaker_gains),
    })
}

/// Centers rows and transforms them to identity population covariance via
/// the symmetric inverse square root of their covariance.
fn whiten_rows(rows: &mut [Vec<f64>]) {
    let k = rows.len();
    if k == 0 {
        return;
    }
    let t = rows[0].len();
    let inv_t = 1.0 / t as f64;
    for row in rows.iter_mut() {
        let mean: f64 = row.iter().sum::<f64>() * inv_t;
        for x in row.iter_mut() {
            *x -= mean;
        }
    }
    let mut cov = vec![0.0f64; k * k];
    for i in 0..k {
        for j in i..k {
            let c: f64 = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(&a, &b)| a * b)
                .sum::<f64>()
                * inv_t;
            cov[i * k + j] = c;
            cov[j * k + i] = c;
        }
    }
    let (vals, vecs) = jacobi_eigh(&cov, k);
    // W = V diag(1/sqrt(l)) V^T
    let mut w = vec![0.0f64; k * k];
    for (e, &l) in vals.iter().enumerate() {
        let inv_sqrt = 1.0 / l.max(1e-12).sqrt();
        for i in 0..k {
            for j in 0..k {
                w[i * k + j] += vecs[e * k + i] * inv_sqrt * vecs[e * k + j];
            }
        }
    }
    let mut out = vec![vec![0.0f64; t]; k];
    for i in 0..k {
        for j in 0..k {
            let wij = w[i * k + j];
            if wij != 0.0 {
                for tt in 0..t {
                    out[i][tt] += wij * rows[j][tt];
                }
            }
        }
    }
    rows.clone_from_slice(&out);
}

// --- feature file format -----------------------------------------------------

/// Serializes to the raw feature format: magic `FTR1`, version, reserved
/// zero byte, `D` and `T` as u32 LE, frame rate as f32 LE, then `T*D` f32 LE
/// values frame-major.
pub fn feature_to_bytes<T: Scalar>(m: &FeatureMatrix<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(18 + m.data().len() * 4);
    out.extend_from_slice(&FEATURE_MAGIC);
    out.push(FEATURE_VERSION);
    out.push(0x00);
    out.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(m.n_frames() as u32).to_le_bytes());
    out.extend_from_slice(&(m.frame_rate_hz() as f32).to_le_bytes());
    for &v in m.data() {
        out.extend_from_slice(&v.as_f32().to_le_bytes());
    }
    out
}

/// Parses the raw feature format produced by [`feature_to_bytes`].
pub fn feature_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<FeatureMatrix<T>> {
    const CTX: &str = "feature file";
    if bytes.len() < 18 {
        return Err(Error::Truncated {
            context: CTX,
            needed: 18,
            available: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != FEATURE_MAGIC {
        return Err(Error::BadMagic {
            context: CTX,
            expected: FEATURE_MAGIC,
            found: magic,
        });
    }
    if bytes[4] != FEATURE_VERSION {
        return Err(Error::VersionMismatch {
            context: CTX,
            found: bytes[4],
            supported: FEATURE_VERSION,
        });
    }
    if bytes[5] != 0x00 {
        return Err(Error::MalformedSection {
            context: CTX,
            detail: format!("reserved byte must be zero, found {:#04x}", bytes[5]),
        });
    }
    let dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    let n_frames = u32::from_le_bytes(bytes[10..14].try_into().unwrap());
    let frame_rate = f32::from_le_bytes(bytes[14..18].try_into().unwrap());
    if dim == 0 || n_frames == 0 {
        return Err(Error::MalformedSection {
            context: CTX,
            detail: format!("dims must be positive (D={dim}, T={n_frames})"),
        });
    }
    let elements = u64::from(dim) * u64::from(n_frames);
    if elements > MAX_ELEMENTS {
        return Err(Error::DimOverflow {
            context: CTX,
            detail: format!("T*D = {elements} exceeds cap {MAX_ELEMENTS}"),
        });
    }
    let needed = 18 + (elements as usize) * 4;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            context: CTX,
            needed,
            available: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(Error::MalformedSection {
            context: CTX,
            detail: format!("{} trailing bytes after payload", bytes.len() - needed),
        });
    }
    if !(frame_rate.is_finite() && frame_rate > 0.0) {
        return Err(Error::MalformedSection {
            context: CTX,
            detail: format!("frame rate must be positive and finite, found {frame_rate}"),
        });
    }
    let mut data = Vec::with_capacity(elements as usize);
    for chunk in bytes[18..needed].chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::MalformedSection {
                context: CTX,
                detail: "non-finite feature value".into(),
            });
        }
        data.push(T::from_f64_lossy(f64::from(v)));
    }
    FeatureMatrix::new(data, n_frames as usize, dim as usize, f64::from(frame_rate))
}

pub fn write_feature_file<T: Scalar>(path: impl AsRef<Path>, m: &FeatureMatrix<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, feature_to_bytes(m)).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_feature_file<T: Scalar>(path: impl AsRef<Path>) -> Result<FeatureMatrix<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    feature_from_bytes(&bytes)
}
