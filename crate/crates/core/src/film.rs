//! Feature-wise linear modulation of the concatenated content/prosody
//! frames, conditioned on the speaker vector, plus a learned readout back to
//! feature space.
//!
//! `film([C;P]|S) = f(S) * [C;P] + h(S)` with affine `f` and `h`. The
//! analytical decode is the default reconstruction path; the fitted
//! modulation is an optional learned alternative. Fitting alternates two
//! ridge solves (readout given modulation, modulation given readout), each
//! by normal equations; the regularizer penalizes the speaker-weight
//! matrices, not the biases, so a huge lambda degenerates the modulation to
//! its biases instead of to zero output.

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::{cholesky_solve, conjugate_gradient, dot};
use crate::pipeline::FittedPipeline;
use crate::scalar::Scalar;

/// Affine scale and shift maps from the speaker vector to the modulated
/// dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct FilmParams<T: Scalar = f64> {
    /// `out_dim x s_dim`, row-major.
    pub scale_weight: Vec<T>,
    pub scale_bias: Vec<T>,
    /// `out_dim x s_dim`, row-major.
    pub shift_weight: Vec<T>,
    pub shift_bias: Vec<T>,
    pub out_dim: usize,
    pub s_dim: usize,
}

impl<T: Scalar> FilmParams<T> {
    /// Zero weights, unit scale bias, zero shift: the identity modulation.
    pub fn identity(out_dim: usize, s_dim: usize) -> Self {
        Self {
            scale_weight: vec![T::zero(); out_dim * s_dim],
            scale_bias: vec![T::one(); out_dim],
            shift_weight: vec![T::zero(); out_dim * s_dim],
            shift_bias: vec![T::zero(); out_dim],
            out_dim,
            s_dim,
        }
    }

    fn check(&self) -> Result<()> {
        if self.scale_weight.len() != self.out_dim * self.s_dim
            || self.shift_weight.len() != self.out_dim * self.s_dim
            || self.scale_bias.len() != self.out_dim
            || self.shift_bias.len() != self.out_dim
        {
            return Err(Error::ShapeMismatch {
                context: "film parameter shapes",
                expected: format!("{} x {}", self.out_dim, self.s_dim),
                got: "inconsistent".into(),
            });
        }
        Ok(())
    }

    /// `f(s)`: per-dimension scale for one speaker vector.
    pub fn scale_of(&self, s: &[T]) -> Vec<T> {
        (0..self.out_dim)
            .map(|i| {
                dot(&self.scale_weight[i * self.s_dim..(i + 1) * self.s_dim], s)
                    + self.scale_bias[i]
            })
            .collect()
    }

    /// `h(s)`: per-dimension shift for one speaker vector.
    pub fn shift_of(&self, s: &[T]) -> Vec<T> {
        (0..self.out_dim)
            .map(|i| {
                dot(&self.shift_weight[i * self.s_dim..(i + 1) * self.s_dim], s)
                    + self.shift_bias[i]
            })
            .collect()
    }
}

/// Applies `f(S) * x + h(S)` to every frame.
pub fn film<T: Scalar>(
    x: &FeatureMatrix<T>,
    speaker: &[T],
    params: &FilmParams<T>,
) -> Result<FeatureMatrix<T>> {
    params.check()?;
    if x.dim() != params.out_dim {
        return Err(Error::ShapeMismatch {
            context: "film input dim",
            expected: format!("{}", params.out_dim),
            got: format!("{}", x.dim()),
        });
    }
    if speaker.len() != params.s_dim {
        return Err(Error::ShapeMismatch {
            context: "film speaker dim",
            expected: format!("{}", params.s_dim),
            got: format!("{}", speaker.len()),
        });
    }
    let scale = params.scale_of(speaker);
    let shift = params.shift_of(speaker);
    let mut data = Vec::with_capacity(x.data().len());
    for frame in x.frames() {
        for (i, &v) in frame.iter().enumerate() {
            data.push(scale[i] * v + shift[i]);
        }
    }
    Ok(FeatureMatrix::from_raw(
        data,
        x.n_frames(),
        x.dim(),
        x.frame_rate_hz(),
    ))
}

/// Fitted modulation plus the readout back to feature space.
#[derive(Debug, Clone)]
pub struct FilmReadout<T: Scalar = f64> {
    pub film: FilmParams<T>,
    /// `target_dim x out_dim`, row-major.
    pub readout: Vec<T>,
    pub target_dim: usize,
    /// Mean squared reconstruction error on the training set.
    pub mse: f64,
}

impl<T: Scalar> FilmReadout<T> {
    /// `readout * film(x|s)` per frame.
    pub fn predict(&self, x: &FeatureMatrix<T>, speaker: &[T]) -> Result<FeatureMatrix<T>> {
        let modulated = film(x, speaker, &self.film)?;
        let m = self.film.out_dim;
        let mut data = Vec::with_capacity(modulated.n_frames() * self.target_dim);
        for frame in modulated.frames() {
            for r in 0..self.target_dim {
                data.push(dot(&self.readout[r * m..(r + 1) * m], frame));
            }
        }
        Ok(FeatureMatrix::from_raw(
            data,
            modulated.n_frames(),
            self.target_dim,
            modulated.frame_rate_hz(),
        ))
    }
}

/// One training utterance: modulated input frames `T x M`, speaker vector
/// `S`, target frames `T x D`.
pub type FilmTriplet<T> = (FeatureMatrix<T>, Vec<T>, FeatureMatrix<T>);

/// Options for the alternating ridge fit.
#[derive(Debug, Clone)]
pub struct FilmFitOptions {
    /// Ridge weight on the speaker-weight matrices.
    pub lambda: f64,
    pub max_rounds: usize,
    pub cg_tolerance: f64,
    pub cg_max_iters: usize,
}

impl Default for FilmFitOptions {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            max_rounds: 12,
            cg_tolerance: 1e-12,
            cg_max_iters: 400,
        }
    }
}

fn mse_of<T: Scalar>(
    data: &[FilmTriplet<T>],
    params: &FilmParams<T>,
    readout: &[T],
    target_dim: usize,
) -> f64 {
    let m = params.out_dim;
    let mut sq = 0.0f64;
    let mut n = 0usize;
    for (x, s, y) in data {
        let scale = params.scale_of(s);
        let shift = params.shift_of(s);
        for (frame, yframe) in x.frames().zip(y.frames()) {
            let z: Vec<T> = frame
                .iter()
                .enumerate()
                .map(|(i, &v)| scale[i] * v + shift[i])
                .collect();
            for r in 0..target_dim {
                let pred = dot(&readout[r * m..(r + 1) * m], &z);
                let e = (pred - yframe[r]).to_f64_lossy();
                sq += e * e;
            }
            n += target_dim;
        }
    }
    sq / n.max(1) as f64
}

/// Ridge solve for the readout given fixed modulation parameters.
fn readout_step<T: Scalar>(
    data: &[FilmTriplet<T>],
    params: &FilmParams<T>,
    target_dim: usize,
) -> Result<Vec<T>> {
    let m = params.out_dim;
    let mut gram = vec![T::zero(); m * m];
    let mut rhs = vec![T::zero(); m * target_dim]; // column-major per output dim
    for (x, s, y) in data {
        let scale = params.scale_of(s);
        let shift = params.shift_of(s);
        for (frame, yframe) in x.frames().zip(y.frames()) {
            let z: Vec<T> = frame
                .iter()
                .enumerate()
                .map(|(i, &v)| scale[i] * v + shift[i])
                .collect();
            for i in 0..m {
                let zi = z[i];
                let row = &mut gram[i * m..(i + 1) * m];
                for (j, &zj) in z.iter().enumerate() {
                    row[j] += zi * zj;
                }
                let rrow = &mut rhs[i * target_dim..(i + 1) * target_dim];
                for (r, &yv) in yframe.iter().enumerate() {
                    rrow[r] += zi * yv;
                }
            }
        }
    }
    // Tiny stabilizer keeps the solve well-posed without pulling the
    // readout toward zero.
    let trace: f64 = (0..m).map(|i| gram[i * m + i].to_f64_lossy()).sum();
    let eps = T::from_f64_lossy(1e-10 * (trace / m as f64).max(1e-300));
    for i in 0..m {
        gram[i * m + i] += eps;
    }
    let mut readout = vec![T::zero(); target_dim * m];
    for r in 0..target_dim {
        let b: Vec<T> = (0..m).map(|i| rhs[i * target_dim + r]).collect();
        let col = cholesky_solve(&gram, &b, m)
            .ok_or_else(|| Error::Infeasible("singular readout normal matrix".into()))?;
        for i in 0..m {
            readout[r * m + i] = col[i];
        }
    }
    Ok(readout)
}

/// Ridge solve (by conjugate gradients on the normal equations) for the
/// modulation parameters given a fixed readout. Lambda penalizes the weight
/// matrices only.
fn film_step<T: Scalar>(
    data: &[FilmTriplet<T>],
    readout: &[T],
    out_dim: usize,
    s_dim: usize,
    target_dim: usize,
    opts: &FilmFitOptions,
) -> FilmParams<T> {
    let m = out_dim;
    let n_weights = m * s_dim;
    let n_theta = 2 * n_weights + 2 * m;
    // theta layout: [Wf | bf | Wh | bh]
    let wf = 0;
    let bf = n_weights;
    let wh = n_weights + m;
    let bh = 2 * n_weights + m;

    // forward: for utterance (x, s): a = Wf s + bf, b = Wh s + bh,
    // v_t = R (x_t * a + b)
    let apply_a = |theta: &[T], out: &mut Vec<Vec<T>>| {
        out.clear();
        for (x, s, _) in data {
            let mut a = vec![T::zero(); m];
            let mut b = vec![T::zero(); m];
            for i in 0..m {
                a[i] = dot(&theta[wf + i * s_dim..wf + (i + 1) * s_dim], s) + theta[bf + i];
                b[i] = dot(&theta[wh + i * s_dim..wh + (i + 1) * s_dim], s) + theta[bh + i];
            }
            let mut v = Vec::with_capacity(x.n_frames() * target_dim);
            for frame in x.frames() {
                let z: Vec<T> = (0..m).map(|i| frame[i] * a[i] + b[i]).collect();
                for r in 0..target_dim {
                    v.push(dot(&readout[r * m..(r + 1) * m], &z));
                }
            }
            out.push(v);
        }
    };
    // adjoint: residual frames -> gradient over theta
    let apply_at = |res: &[Vec<T>], out: &mut [T]| {
        for o in out.iter_mut() {
            *o = T::zero();
        }
        for ((x, s, _), r_utt) in data.iter().zip(res) {
            let mut w1 = vec![T::zero(); m]; // sum_t x_t * (R^T r_t)
            let mut w2 = vec![T::zero(); m]; // sum_t (R^T r_t)
            for (t, frame) in x.frames().enumerate() {
                let r_frame = &r_utt[t * target_dim..(t + 1) * target_dim];
                for i in 0..m {
                    let mut g = T::zero();
                    for (r, &rv) in r_frame.iter().enumerate() {
                        g += readout[r * m + i] * rv;
                    }
                    w1[i] += frame[i] * g;
                    w2[i] += g;
                }
            }
            for i in 0..m {
                let row = &mut out[wf + i * s_dim..wf + (i + 1) * s_dim];
                for (j, &sv) in s.iter().enumerate() {
                    row[j] += w1[i] * sv;
                }
                out[bf + i] += w1[i];
                let row = &mut out[wh + i * s_dim..wh + (i + 1) * s_dim];
                for (j, &sv) in s.iter().enumerate() {
                    row[j] += w2[i] * sv;
                }
                out[bh + i] += w2[i];
            }
        }
    };

    // rhs = A^T y
    let y_frames: Vec<Vec<T>> = data.iter().map(|(_, _, y)| y.data().to_vec()).collect();
    let mut rhs = vec![T::zero(); n_theta];
    apply_at(&y_frames, &mut rhs);

    let lambda = T::from_f64_lossy(opts.lambda);
    let mut scratch: Vec<Vec<T>> = Vec::new();
    let theta = conjugate_gradient(
        |p, out| {
            apply_a(p, &mut scratch);
            apply_at(&scratch, out);
            // Penalize the weight blocks only.
            for i in 0..n_weights {
                out[wf + i] += lambda * p[wf + i];
                out[wh + i] += lambda * p[wh + i];
            }
        },
        &rhs,
        opts.cg_tolerance,
        opts.cg_max_iters,
    );

    FilmParams {
        scale_weight: theta[wf..wf + n_weights].to_vec(),
        scale_bias: theta[bf..bf + m].to_vec(),
        shift_weight: theta[wh..wh + n_weights].to_vec(),
        shift_bias: theta[bh..bh + m].to_vec(),
        out_dim: m,
        s_dim,
    }
}

/// Alternates readout and modulation ridge solves until the training MSE
/// stops improving. Deterministic for identical inputs.
pub fn fit_film<T: Scalar>(
    data: &[FilmTriplet<T>],
    init: Option<(FilmParams<T>, Vec<T>)>,
    opts: &FilmFitOptions,
) -> Result<FilmReadout<T>> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty film training set".into()));
    }
    let m = data[0].0.dim();
    let s_dim = data[0].1.len();
    let target_dim = data[0].2.dim();
    for (x, s, y) in data {
        if x.dim() != m || s.len() != s_dim || y.dim() != target_dim || x.n_frames() != y.n_frames()
        {
            return Err(Error::ShapeMismatch {
                context: "film training triplet",
                expected: format!("x {m}-dim, s {s_dim}-dim, y {target_dim}-dim"),
                got: format!("x {}-dim, s {}-dim, y {}-dim", x.dim(), s.len(), y.dim()),
            });
        }
    }
    let (mut params, mut readout) = match init {
        Some((p, r)) => {
            p.check()?;
            if p.out_dim != m || p.s_dim != s_dim || r.len() != target_dim * m {
                return Err(Error::ShapeMismatch {
                    context: "film init shapes",
                    expected: format!("{m} modulated dims, {s_dim} speaker dims"),
                    got: "inconsistent init".into(),
                });
            }
            (p, r)
        }
        None => {
            let p = FilmParams::identity(m, s_dim);
            let r = readout_step(data, &p, target_dim)?;
            (p, r)
        }
    };
    let mut mse = mse_of(data, &params, &readout, target_dim);
    for _ in 0..opts.max_rounds {
        let new_params = film_step(data, &readout, m, s_dim, target_dim, opts);
        let new_readout = readout_step(data, &new_params, target_dim)?;
        let new_mse = mse_of(data, &new_params, &new_readout, target_dim);
        if new_mse <= mse {
            params = new_params;
            readout = new_readout;
        }
        let improved = (mse - new_mse) / mse.max(1e-300);
        mse = mse.min(new_mse);
        if improved < 1e-12 {
            break;
        }
    }
    Ok(FilmReadout {
        film: params,
        readout,
        target_dim,
        mse,
    })
}

impl<T: Scalar> FittedPipeline<T> {
    /// Builds film training triplets `([C;P], [mu;sigma], W)` from a corpus
    /// through this pipeline's encoder.
    pub fn film_triplets(&self, training: &[FeatureMatrix<T>]) -> Result<Vec<FilmTriplet<T>>> {
        let cfg = self.config();
        let d = cfg.dim;
        let f = cfg.prosody_dim;
        let mut out = Vec::with_capacity(training.len());
        for w in training {
            let codes = self.encode(w)?;
            let content = crate::quantize::vq_dequantize(
                &codes.content,
                self.content_codebook(),
                codes.frame_rate_hz,
            )?;
            let prosody = self.dequantize_prosody(&codes)?;
            let stats = self.dequantize_speaker(&codes)?;
            let mut s = Vec::with_capacity(2 * d);
            s.extend_from_slice(&stats.mean);
            s.extend_from_slice(&stats.std);
            let mut x = Vec::with_capacity(w.n_frames() * (d + f));
            for (cf, pf) in content.frames().zip(prosody.frames()) {
                x.extend_from_slice(cf);
                x.extend_from_slice(pf);
            }
            out.push((
                FeatureMatrix::from_raw(x, w.n_frames(), d + f, w.frame_rate_hz()),
                s,
                w.clone(),
            ));
        }
        Ok(out)
    }

    /// Fits the learned modulation path, seeded from the analytical decode
    /// (identity content block, mean-sigma-scaled unprojection block, mean
    /// shift), so the fitted error starts at the analytical one and only
    /// improves.
    pub fn fit_film_readout(
        &self,
        training: &[FeatureMatrix<T>],
        opts: &FilmFitOptions,
    ) -> Result<FilmReadout<T>> {
        let data = self.film_triplets(training)?;
        let cfg = self.config();
        let d = cfg.dim;
        let f = cfg.prosody_dim;
        let m = d + f;
        let s_dim = 2 * d;
        // Mean dequantized sigma over the corpus.
        let mut sigma_bar = vec![T::zero(); d];
        for (_, s, _) in &data {
            for i in 0..d {
                sigma_bar[i] += s[d + i];
            }
        }
        let inv = T::from_f64_lossy(1.0 / data.len() as f64);
        for v in sigma_bar.iter_mut() {
            *v *= inv;
        }
        let mut readout = vec![T::zero(); d * m];
        let rows = self.projector().rows();
        for i in 0..d {
            readout[i * m + i] = T::one();
            for k in 0..f {
                readout[i * m + d + k] = sigma_bar[i] * rows[k * d + i];
            }
        }
        let mut params = FilmParams::identity(m, s_dim);
        for i in 0..d {
            params.shift_weight[i * s_dim + i] = T::one(); // h_i(s) = mu_i
        }
        fit_film(&data, Some((params, readout)), opts)
    }
}

/// Mean squared error of the analytical decode against the originals,
/// comparable with [`FilmReadout::mse`].
pub fn analytical_decode_mse<T: Scalar>(
    pipeline: &FittedPipeline<T>,
    training: &[FeatureMatrix<T>],
) -> Result<f64> {
    let mut sq = 0.0f64;
    let mut n = 0usize;
    for w in training {
        let decoded = pipeline.decode(&pipeline.encode(w)?)?;
        for (&a, &b) in decoded.data().iter().zip(w.data()) {
            let e = (a - b).to_f64_lossy();
            sq += e * e;
        }
        n += w.data().len();
    }
    Ok(sq / n.max(1) as f64)
}
