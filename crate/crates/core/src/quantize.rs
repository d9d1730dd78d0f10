//! Quantizer primitives: plain VQ, residual VQ, and group-residual VQ with
//! low-dimensional code lookup.
//!
//! All three expose quantize-to-indices and dequantize-from-indices; the
//! quantize path also returns the dequantized values so callers never repeat
//! the lookup. Quantization is pure and frames are independent, so results
//! do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::hash::fnv1a64;
use crate::linalg::{dot, orthonormalize_rows};
use crate::scalar::Scalar;

/// Per-frame VQ outcome.
#[derive(Debug, Clone)]
pub struct VqResult<T: Scalar = f64> {
    /// Nearest-entry index per frame.
    pub indices: Vec<u32>,
    /// The selected entries, copied verbatim.
    pub quantized: FeatureMatrix<T>,
}

/// Quantizes every frame to its nearest codebook entry.
///
/// Distances are Euclidean, in the unit-normalized space when the codebook
/// is flagged for L2 lookup; ties break to the lowest index.
pub fn vq_quantize<T: Scalar>(x: &FeatureMatrix<T>, cb: &Codebook<T>) -> Result<VqResult<T>> {
    if x.dim() != cb.dim() {
        return Err(Error::ShapeMismatch {
            context: "vq input dim",
            expected: format!("{}", cb.dim()),
            got: format!("{}", x.dim()),
        });
    }
    let mut indices = Vec::with_capacity(x.n_frames());
    let mut data = Vec::with_capacity(x.data().len());
    for frame in x.frames() {
        let (idx, _) = cb.nearest(frame);
        indices.push(idx);
        data.extend_from_slice(cb.entry(idx as usize));
    }
    Ok(VqResult {
        indices,
        quantized: FeatureMatrix::from_raw(data, x.n_frames(), x.dim(), x.frame_rate_hz()),
    })
}

/// Looks up `indices` in `cb` and stacks the entries as frames.
pub fn vq_dequantize<T: Scalar>(
    indices: &[u32],
    cb: &Codebook<T>,
    frame_rate_hz: f64,
) -> Result<FeatureMatrix<T>> {
    if indices.is_empty() {
        return Err(Error::InvalidInput("no indices to dequantize".into()));
    }
    let mut data = Vec::with_capacity(indices.len() * cb.dim());
    for &idx in indices {
        cb.check_index(idx)?;
        data.extend_from_slice(cb.entry(idx as usize));
    }
    Ok(FeatureMatrix::from_raw(
        data,
        indices.len(),
        cb.dim(),
        frame_rate_hz,
    ))
}

/// Residual-VQ outcome across layers.
#[derive(Debug, Clone)]
pub struct RvqResult<T: Scalar = f64> {
    /// `indices[layer][frame]`.
    pub indices: Vec<Vec<u32>>,
    /// Sum of the selected entries over layers.
    pub quantized_sum: FeatureMatrix<T>,
    /// What remains of the input after all layers.
    pub final_residual: FeatureMatrix<T>,
}

fn check_stack_dims<T: Scalar>(dim: usize, codebooks: &[Codebook<T>]) -> Result<()> {
    if codebooks.is_empty() {
        return Err(Error::InvalidInput("empty codebook stack".into()));
    }
    for cb in codebooks {
        if cb.dim() != dim {
            return Err(Error::ShapeMismatch {
                context: "rvq codebook dim",
                expected: format!("{dim}"),
                got: format!("{}", cb.dim()),
            });
        }
    }
    Ok(())
}

/// Runs the residual cascade: each layer quantizes what the previous layers
/// left over. A one-layer stack is exactly [`vq_quantize`].
pub fn rvq_quantize<T: Scalar>(
    x: &FeatureMatrix<T>,
    codebooks: &[Codebook<T>],
) -> Result<RvqResult<T>> {
    check_stack_dims(x.dim(), codebooks)?;
    let dim = x.dim();
    let t = x.n_frames();
    let mut residual = x.data().to_vec();
    let mut quantized = vec![T::zero(); residual.len()];
    let mut indices = Vec::with_capacity(codebooks.len());
    for cb in codebooks {
        let mut layer_idx = Vec::with_capacity(t);
        for f in 0..t {
            let row = &mut residual[f * dim..(f + 1) * dim];
            let (idx, _) = cb.nearest(row);
            layer_idx.push(idx);
            let e = cb.entry(idx as usize);
            let qrow = &mut quantized[f * dim..(f + 1) * dim];
            for d in 0..dim {
                row[d] -= e[d];
                qrow[d] += e[d];
            }
        }
        indices.push(layer_idx);
    }
    Ok(RvqResult {
        indices,
        quantized_sum: FeatureMatrix::from_raw(quantized, t, dim, x.frame_rate_hz()),
        final_residual: FeatureMatrix::from_raw(residual, t, dim, x.frame_rate_hz()),
    })
}

/// Sums the selected entries across layers; the exact inverse companion of
/// [`rvq_quantize`] (identical accumulation order, so results match
/// bit-for-bit).
pub fn rvq_dequantize<T: Scalar>(
    indices: &[Vec<u32>],
    codebooks: &[Codebook<T>],
    frame_rate_hz: f64,
) -> Result<FeatureMatrix<T>> {
    if indices.len() != codebooks.len() {
        return Err(Error::ShapeMismatch {
            context: "rvq layer count",
            expected: format!("{}", codebooks.len()),
            got: format!("{}", indices.len()),
        });
    }
    let dim = codebooks.first().map_or(0, Codebook::dim);
    check_stack_dims(dim, codebooks)?;
    let t = indices.first().map_or(0, Vec::len);
    if t == 0 {
        return Err(Error::InvalidInput("no frames to dequantize".into()));
    }
    if indices.iter().any(|l| l.len() != t) {
        return Err(Error::InvalidInput("ragged rvq index layers".into()));
    }
    let mut data = vec![T::zero(); t * dim];
    for (layer, cb) in indices.iter().zip(codebooks) {
        for (f, &idx) in layer.iter().enumerate() {
            cb.check_index(idx)?;
            let e = cb.entry(idx as usize);
            let row = &mut data[f * dim..(f + 1) * dim];
            for d in 0..dim {
                row[d] += e[d];
            }
        }
    }
    Ok(FeatureMatrix::from_raw(data, t, dim, frame_rate_hz))
}

/// Group-residual VQ outcome for one vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GrvqResult<T: Scalar = f64> {
    /// `indices[group][layer]`.
    pub indices: Vec<Vec<u32>>,
    /// Concatenation of the per-group quantized slices, in group order.
    pub quantized: Vec<T>,
}

/// Group-residual vector quantizer with low-dimensional code lookup.
///
/// The input vector is split into `n_groups` contiguous equal slices. Each
/// group runs its own residual cascade in which layer `l` projects the
/// running residual to `lookup_dim` dimensions with a fixed orthonormal
/// down-projection, searches the codebook there (L2-normalized), and maps
/// the chosen entry back through the paired transpose up-projection.
#[derive(Debug, Clone)]
pub struct GrvqStack<T: Scalar = f64> {
    group_width: usize,
    lookup_dim: usize,
    /// `codebooks[group][layer]`, entries `lookup_dim` wide.
    codebooks: Vec<Vec<Codebook<T>>>,
    /// `projections[group][layer]`: `lookup_dim x group_width`, orthonormal
    /// rows, stored row-major.
    projections: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> GrvqStack<T> {
    pub fn new(
        codebooks: Vec<Vec<Codebook<T>>>,
        projections: Vec<Vec<Vec<T>>>,
        group_width: usize,
    ) -> Result<Self> {
        if codebooks.is_empty() || codebooks[0].is_empty() {
            return Err(Error::InvalidInput(
                "grvq needs at least one group and layer".into(),
            ));
        }
        let n_layers = codebooks[0].len();
        if codebooks.iter().any(|g| g.len() != n_layers)
            || projections.len() != codebooks.len()
            || projections.iter().any(|g| g.len() != n_layers)
        {
            return Err(Error::InvalidInput("ragged grvq stacks".into()));
        }
        let lookup_dim = codebooks[0][0].dim();
        if lookup_dim > group_width {
            return Err(Error::InvalidInput(format!(
                "lookup_dim {lookup_dim} exceeds group width {group_width}"
            )));
        }
        for (g, group) in codebooks.iter().enumerate() {
            for (l, cb) in group.iter().enumerate() {
                if cb.dim() != lookup_dim {
                    return Err(Error::ShapeMismatch {
                        context: "grvq codebook dim",
                        expected: format!("{lookup_dim}"),
                        got: format!("{}", cb.dim()),
                    });
                }
                let p = &projections[g][l];
                if p.len() != lookup_dim * group_width {
                    return Err(Error::ShapeMismatch {
                        context: "grvq projection shape",
                        expected: format!("{}", lookup_dim * group_width),
                        got: format!("{}", p.len()),
                    });
                }
                // Rows must be orthonormal so the transpose is the exact
                // inverse on the projected subspace.
                for r in 0..lookup_dim {
                    for r2 in r..lookup_dim {
                        let d = dot(
                            &p[r * group_width..(r + 1) * group_width],
                            &p[r2 * group_width..(r2 + 1) * group_width],
                        )
                        .to_f64_lossy();
                        let want = if r == r2 { 1.0 } else { 0.0 };
                        if (d - want).abs() > 1e-4 {
                            return Err(Error::InvalidInput(format!(
                                "grvq projection rows not orthonormal (group {g}, layer {l})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(Self {
            group_width,
            lookup_dim,
            codebooks,
            projections,
        })
    }

    /// Seeded random orthonormal projections, one per (group, layer).
    pub fn random_projections(
        n_groups: usize,
        n_layers: usize,
        group_width: usize,
        lookup_dim: usize,
        seed: u64,
    ) -> Vec<Vec<Vec<T>>> {
        (0..n_groups)
            .map(|g| {
                (0..n_layers)
                    .map(|l| {
                        let mut tag = Vec::with_capacity(16);
                        tag.extend_from_slice(&(g as u64).to_le_bytes());
                        tag.extend_from_slice(&(l as u64).to_le_bytes());
                        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(&tag));
                        loop {
                            let mut rows: Vec<Vec<T>> = (0..lookup_dim)
                                .map(|_| {
                                    (0..group_width)
                                        .map(|_| T::from_f64_lossy(StandardNormal.sample(&mut rng)))
                                        .collect()
                                })
                                .collect();
                            if orthonormalize_rows(&mut rows) {
                                let mut flat = Vec::with_capacity(lookup_dim * group_width);
                                for r in rows {
                                    flat.extend(r.into_iter().map(Scalar::canonical_f32));
                                }
                                return flat;
                            }
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Fits per-group residual stacks on a set of training vectors (flat,
    /// row-major, width `n_groups * group_width` each).
    pub fn fit(
        vectors: &[T],
        input_dim: usize,
        n_groups: usize,
        n_layers: usize,
        lookup_dim: usize,
        kmeans: &crate::codebook::KMeansConfig,
        projection_seed: u64,
        id_prefix: &str,
    ) -> Result<Self> {
        if n_groups == 0 || input_dim == 0 || input_dim % n_groups != 0 {
            return Err(Error::InvalidInput(format!(
                "input dim {input_dim} not divisible into {n_groups} groups"
            )));
        }
        let group_width = input_dim / n_groups;
        if lookup_dim > group_width {
            return Err(Error::InvalidInput(format!(
                "lookup_dim {lookup_dim} exceeds group width {group_width}"
            )));
        }
        let n = vectors.len() / input_dim;
        if n == 0 || vectors.len() % input_dim != 0 {
            return Err(Error::InvalidInput(
                "training vectors length must be a positive multiple of input dim".into(),
            ));
        }
        let projections =
            Self::random_projections(n_groups, n_layers, group_width, lookup_dim, projection_seed);
        let mut codebooks = Vec::with_capacity(n_groups);
        for g in 0..n_groups {
            let mut residuals: Vec<T> = Vec::with_capacity(n * group_width);
            for v in vectors.chunks_exact(input_dim) {
                residuals.extend_from_slice(&v[g * group_width..(g + 1) * group_width]);
            }
            let mut group_books = Vec::with_capacity(n_layers);
            for l in 0..n_layers {
                let proj = &projections[g][l];
                // Project every residual into the lookup space.
                let mut projected = Vec::with_capacity(n * lookup_dim);
                for r in residuals.chunks_exact(group_width) {
                    for row in 0..lookup_dim {
                        projected.push(dot(&proj[row * group_width..(row + 1) * group_width], r));
                    }
                }
                let layer_cfg = crate::codebook::KMeansConfig {
                    seed: kmeans.seed.wrapping_add((g * n_layers + l) as u64),
                    ..kmeans.clone()
                };
                let (cb, _) = crate::codebook::fit_kmeans(
                    &projected,
                    lookup_dim,
                    &layer_cfg,
                    true,
                    format!("{id_prefix}.g{g}.l{l}"),
                )?;
                // Subtract the up-projected selection from each residual.
                for r in residuals.chunks_exact_mut(group_width) {
                    let mut z = vec![T::zero(); lookup_dim];
                    for (row, zv) in z.iter_mut().enumerate() {
                        *zv = dot(&proj[row * group_width..(row + 1) * group_width], r);
                    }
                    let (idx, _) = cb.nearest(&z);
                    let e = cb.entry(idx as usize);
                    for (row, &ev) in e.iter().enumerate() {
                        let prow = &proj[row * group_width..(row + 1) * group_width];
                        for (rv, &pv) in r.iter_mut().zip(prow) {
                            *rv -= ev * pv;
                        }
                    }
                }
                group_books.push(cb);
            }
            codebooks.push(group_books);
        }
        Self::new(codebooks, projections, group_width)
    }

    pub fn n_groups(&self) -> usize {
        self.codebooks.len()
    }

    pub fn n_layers(&self) -> usize {
        self.codebooks[0].len()
    }

    pub fn group_width(&self) -> usize {
        self.group_width
    }

    pub fn lookup_dim(&self) -> usize {
        self.lookup_dim
    }

    pub fn input_dim(&self) -> usize {
        self.group_width * self.n_groups()
    }

    pub fn codebook(&self, group: usize, layer: usize) -> &Codebook<T> {
        &self.codebooks[group][layer]
    }

    pub fn projection(&self, group: usize, layer: usize) -> &[T] {
        &self.projections[group][layer]
    }

    fn up_project_accumulate(&self, group: usize, layer: usize, entry: &[T], out: &mut [T]) {
        let proj = &self.projections[group][layer];
        for (row, &ev) in entry.iter().enumerate() {
            let prow = &proj[row * self.group_width..(row + 1) * self.group_width];
            for (o, &pv) in out.iter_mut().zip(prow) {
                *o += ev * pv;
            }
        }
    }

    /// Quantizes one vector of length [`Self::input_dim`].
    pub fn quantize(&self, x: &[T]) -> Result<GrvqResult<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "grvq input length",
                expected: format!("{}", self.input_dim()),
                got: format!("{}", x.len()),
            });
        }
        let w = self.group_width;
        let mut indices = Vec::with_capacity(self.n_groups());
        let mut quantized = vec![T::zero(); x.len()];
        for g in 0..self.n_groups() {
            let mut residual = x[g * w..(g + 1) * w].to_vec();
            let qslice = &mut quantized[g * w..(g + 1) * w];
            let mut group_idx = Vec::with_capacity(self.n_layers());
            for l in 0..self.n_layers() {
                let proj = &self.projections[g][l];
                let mut z = vec![T::zero(); self.lookup_dim];
                for (row, zv) in z.iter_mut().enumerate() {
                    *zv = dot(&proj[row * w..(row + 1) * w], &residual);
                }
                let cb = &self.codebooks[g][l];
                let (idx, _) = cb.nearest(&z);
                group_idx.push(idx);
                let e = cb.entry(idx as usize);
                let mut up = vec![T::zero(); w];
                self.up_project_accumulate(g, l, e, &mut up);
                for d in 0..w {
                    residual[d] -= up[d];
                    qslice[d] += up[d];
                }
            }
            indices.push(group_idx);
        }
        Ok(GrvqResult { indices, quantized })
    }

    /// Mean squared residual energy over a set of vectors after each layer
    /// of the cascade (summed across groups).
    pub fn residual_energy_per_layer(&self, vectors: &[T]) -> Vec<f64> {
        let dim = self.input_dim();
        let n = (vectors.len() / dim).max(1);
        let w = self.group_width;
        let mut energies = vec![0.0f64; self.n_layers()];
        for v in vectors.chunks_exact(dim) {
            for g in 0..self.n_groups() {
                let mut residual = v[g * w..(g + 1) * w].to_vec();
                for l in 0..self.n_layers() {
                    let proj = &self.projections[g][l];
                    let mut z = vec![T::zero(); self.lookup_dim];
                    for (row, zv) in z.iter_mut().enumerate() {
                        *zv = dot(&proj[row * w..(row + 1) * w], &residual);
                    }
                    let cb = &self.codebooks[g][l];
                    let (idx, _) = cb.nearest(&z);
                    let e = cb.entry(idx as usize);
                    let mut up = vec![T::zero(); w];
                    self.up_project_accumulate(g, l, e, &mut up);
                    for d in 0..w {
                        residual[d] -= up[d];
                    }
                    energies[l] += residual
                        .iter()
                        .map(|&x| {
                            let f = x.to_f64_lossy();
                            f * f
                        })
                        .sum::<f64>();
                }
            }
        }
        for e in energies.iter_mut() {
            *e /= n as f64;
        }
        energies
    }

    /// Rebuilds the quantized vector from `indices[group][layer]`; matches
    /// the `quantized` field of [`Self::quantize`] bit-for-bit.
    pub fn dequantize(&self, indices: &[Vec<u32>]) -> Result<Vec<T>> {
        if indices.len() != self.n_groups() || indices.iter().any(|g| g.len() != self.n_layers()) {
            return Err(Error::ShapeMismatch {
                context: "grvq index shape",
                expected: format!("{} x {}", self.n_groups(), self.n_layers()),
                got: format!(
                    "{} x {}",
                    indices.len(),
                    indices.first().map_or(0, Vec::len)
                ),
            });
        }
        let w = self.group_width;
        let mut out = vec![T::zero(); self.input_dim()];
        for (g, group_idx) in indices.iter().enumerate() {
            let slice = &mut out[g * w..(g + 1) * w];
            for (l, &idx) in group_idx.iter().enumerate() {
                let cb = &self.codebooks[g][l];
                cb.check_index(idx)?;
                let e = cb.entry(idx as usize);
                // Same up-project-then-add association as quantize, so the
                // rebuilt values match bit-for-bit.
                let mut up = vec![T::zero(); w];
                self.up_project_accumulate(g, l, e, &mut up);
                for d in 0..w {
                    slice[d] += up[d];
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::KMeansConfig;
    use crate::features::max_abs_diff;
    use rand::Rng;

    fn randn(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    fn mat(rows: &[&[f64]]) -> FeatureMatrix<f64> {
        FeatureMatrix::from_frames(rows.iter().map(|r| r.to_vec()).collect(), 50.0).unwrap()
    }

    fn random_mat(seed: u64, t: usize, d: usize) -> FeatureMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..t * d).map(|_| randn(&mut rng)).collect();
        FeatureMatrix::new(data, t, d, 50.0).unwrap()
    }

    fn random_codebook(seed: u64, j: usize, d: usize, l2: bool, id: &str) -> Codebook<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..j)
            .map(|_| (0..d).map(|_| randn(&mut rng)).collect())
            .collect();
        Codebook::from_rows(rows, l2, id).unwrap()
    }

    #[test]
    fn obvious_nearest_centroid() {
        let cb = Codebook::from_rows(vec![vec![0.0f64, 0.0], vec![1.0, 1.0]], false, "t").unwrap();
        let x = mat(&[&[0.9, 1.2]]);
        let r = vq_quantize(&x, &cb).unwrap();
        assert_eq!(r.indices, vec![1]);
        assert_eq!(r.quantized.frame(0), &[1.0, 1.0]);
    }

    #[test]
    fn equidistant_breaks_to_lowest() {
        let cb = Codebook::from_rows(vec![vec![0.0f64, 0.0], vec![1.0, 1.0]], false, "t").unwrap();
        let x = mat(&[&[0.5, 0.5]]);
        assert_eq!(vq_quantize(&x, &cb).unwrap().indices, vec![0]);
    }

    #[test]
    fn matches_brute_force_scan() {
        let cb = random_codebook(1, 64, 8, false, "t");
        let x = random_mat(2, 1000, 8);
        let got = vq_quantize(&x, &cb).unwrap();
        for (t, frame) in x.frames().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for j in 0..cb.n_entries() {
                let d: f64 = frame
                    .iter()
                    .zip(cb.entry(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assert_eq!(got.indices[t] as usize, best, "frame {t}");
        }
    }

    #[test]
    fn vq_idempotent() {
        let cb = random_codebook(3, 16, 4, false, "t");
        let x = random_mat(4, 50, 4);
        let once = vq_quantize(&x, &cb).unwrap();
        let twice = vq_quantize(&once.quantized, &cb).unwrap();
        assert_eq!(once.indices, twice.indices);
    }

    #[test]
    fn vq_dim_mismatch() {
        let cb = random_codebook(5, 4, 3, false, "t");
        let x = random_mat(6, 5, 4);
        assert!(matches!(
            vq_quantize(&x, &cb),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn rvq_exact_constructed_case() {
        let l0 =
            Codebook::from_rows(vec![vec![10.0f64, 0.0], vec![0.0, 10.0]], false, "l0").unwrap();
        let l1 =
            Codebook::from_rows(vec![vec![0.25f64, 0.0], vec![0.0, 0.25]], false, "l1").unwrap();
        // x = l0[1] + l1[0]
        let x = mat(&[&[0.25, 10.0]]);
        let r = rvq_quantize(&x, &[l0, l1]).unwrap();
        assert_eq!(r.indices, vec![vec![1], vec![0]]);
        let resid = r.final_residual.data();
        assert!(resid.iter().all(|v| v.abs() < 1e-6), "{resid:?}");
    }

    #[test]
    fn one_layer_rvq_equals_vq() {
        let cb = random_codebook(7, 12, 5, false, "t");
        let x = random_mat(8, 40, 5);
        let vq = vq_quantize(&x, &cb).unwrap();
        let rvq = rvq_quantize(&x, std::slice::from_ref(&cb)).unwrap();
        assert_eq!(rvq.indices[0], vq.indices);
        assert_eq!(rvq.quantized_sum.data(), vq.quantized.data());
    }

    #[test]
    fn rvq_telescopes_and_residual_shrinks() {
        let books: Vec<Codebook<f64>> = (0..3)
            .map(|i| random_codebook(20 + i, 16, 6, false, &format!("l{i}")))
            .collect();
        let x = random_mat(30, 200, 6);
        // Residual norm after each prefix of layers is non-increasing.
        let mut prev = f64::INFINITY;
        for layers in 1..=3 {
            let r = rvq_quantize(&x, &books[..layers]).unwrap();
            let norm: f64 = r
                .final_residual
                .data()
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            assert!(norm <= prev + 1e-9, "layer {layers}: {norm} > {prev}");
            prev = norm;
            // Telescoping: x = quantized_sum + final_residual.
            let mut rebuilt = r.quantized_sum.clone();
            rebuilt = FeatureMatrix::from_raw(
                rebuilt
                    .data()
                    .iter()
                    .zip(r.final_residual.data())
                    .map(|(a, b)| a + b)
                    .collect(),
                x.n_frames(),
                x.dim(),
                x.frame_rate_hz(),
            );
            assert!(max_abs_diff(&x, &rebuilt).unwrap() < 1e-5);
        }
    }

    #[test]
    fn rvq_dequantize_matches_quantized_sum_exactly() {
        let books: Vec<Codebook<f64>> = (0..4)
            .map(|i| random_codebook(40 + i, 8, 3, i % 2 == 0, &format!("l{i}")))
            .collect();
        let x = random_mat(41, 60, 3);
        let r = rvq_quantize(&x, &books).unwrap();
        let deq = rvq_dequantize(&r.indices, &books, x.frame_rate_hz()).unwrap();
        assert_eq!(deq.data(), r.quantized_sum.data());
    }

    #[test]
    fn rvq_dequantize_rejects_bad_index() {
        let books = vec![random_codebook(50, 4, 2, false, "l0")];
        let err = rvq_dequantize(&[vec![9u32]], &books, 50.0).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { index: 9, size: 4 }));
    }

    fn identity_projection(width: usize) -> Vec<f64> {
        let mut p = vec![0.0f64; width * width];
        for i in 0..width {
            p[i * width + i] = 1.0;
        }
        p
    }

    #[test]
    fn degenerate_grvq_reduces_to_vq() {
        let cb = random_codebook(60, 10, 4, true, "g0l0");
        let stack = GrvqStack::new(
            vec![vec![cb.clone()]],
            vec![vec![identity_projection(4)]],
            4,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for _ in 0..20 {
            let v: Vec<f64> = (0..4).map(|_| randn(&mut rng)).collect();
            let got = stack.quantize(&v).unwrap();
            let frame = FeatureMatrix::from_frames(vec![v.clone()], 50.0).unwrap();
            let want = vq_quantize(&frame, &cb).unwrap();
            assert_eq!(got.indices[0][0], want.indices[0]);
            assert_eq!(got.quantized, want.quantized.data());
        }
    }

    #[test]
    fn paper_scale_shape_is_respected() {
        // 16 groups x 8 layers over a 2048-dim vector, codebook size 1024:
        // 128 indices, each within [0, 1024).
        let group_width = 128;
        let lookup_dim = 8;
        let projections = GrvqStack::<f64>::random_projections(16, 8, group_width, lookup_dim, 99);
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let codebooks: Vec<Vec<Codebook<f64>>> = (0..16)
            .map(|g| {
                (0..8)
                    .map(|l| {
                        let rows = (0..1024)
                            .map(|_| (0..lookup_dim).map(|_| randn(&mut rng)).collect())
                            .collect();
                        Codebook::from_rows(rows, true, format!("g{g}l{l}")).unwrap()
                    })
                    .collect()
            })
            .collect();
        let stack = GrvqStack::new(codebooks, projections, group_width).unwrap();
        let v: Vec<f64> = (0..2048).map(|_| randn(&mut rng)).collect();
        let r = stack.quantize(&v).unwrap();
        let total: usize = r.indices.iter().map(Vec::len).sum();
        assert_eq!(total, 128);
        assert!(r.indices.iter().flatten().all(|&idx| (idx as usize) < 1024));
    }

    fn fitted_stack(
        seed: u64,
        n: usize,
        dim: usize,
        groups: usize,
        layers: usize,
    ) -> (Vec<f64>, GrvqStack<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors: Vec<f64> = (0..n * dim).map(|_| randn(&mut rng)).collect();
        let stack = GrvqStack::fit(
            &vectors,
            dim,
            groups,
            layers,
            (dim / groups).min(8),
            &KMeansConfig::lloyd(8, 7),
            13,
            "spk",
        )
        .unwrap();
        (vectors, stack)
    }

    #[test]
    fn grvq_groups_match_standalone_rvq_of_each_slice() {
        let (vectors, stack) = fitted_stack(70, 64, 64, 4, 2);
        let w = stack.group_width();
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let v: Vec<f64> = {
            let k = rng.random_range(0..64usize);
            vectors[k * 64..(k + 1) * 64].to_vec()
        };
        let full = stack.quantize(&v).unwrap();
        for g in 0..stack.n_groups() {
            // Oracle: run the projected residual cascade on the slice alone.
            let mut residual = v[g * w..(g + 1) * w].to_vec();
            let mut quant = vec![0.0f64; w];
            for l in 0..stack.n_layers() {
                let proj = stack.projection(g, l);
                let z: Vec<f64> = (0..stack.lookup_dim())
                    .map(|row| dot(&proj[row * w..(row + 1) * w], &residual))
                    .collect();
                let (idx, _) = stack.codebook(g, l).nearest(&z);
                assert_eq!(idx, full.indices[g][l], "group {g} layer {l}");
                let e = stack.codebook(g, l).entry(idx as usize);
                let mut up = vec![0.0f64; w];
                for (row, &ev) in e.iter().enumerate() {
                    for d in 0..w {
                        up[d] += ev * proj[row * w + d];
                    }
                }
                for d in 0..w {
                    residual[d] -= up[d];
                    quant[d] += up[d];
                }
            }
            assert_eq!(&full.quantized[g * w..(g + 1) * w], quant.as_slice());
        }
    }

    #[test]
    fn grvq_group_independence() {
        let (vectors, stack) = fitted_stack(80, 64, 64, 4, 2);
        let v = vectors[0..64].to_vec();
        let base = stack.quantize(&v).unwrap();
        let w = stack.group_width();
        for g in 0..stack.n_groups() {
            let mut perturbed = v.clone();
            for d in g * w..(g + 1) * w {
                perturbed[d] += 0.37;
            }
            let got = stack.quantize(&perturbed).unwrap();
            for g2 in 0..stack.n_groups() {
                if g2 != g {
                    assert_eq!(got.indices[g2], base.indices[g2], "group {g2} changed");
                    assert_eq!(
                        &got.quantized[g2 * w..(g2 + 1) * w],
                        &base.quantized[g2 * w..(g2 + 1) * w]
                    );
                }
            }
        }
    }

    #[test]
    fn grvq_dequantize_round_trip_exact() {
        let (vectors, stack) = fitted_stack(90, 32, 48, 3, 2);
        for v in vectors.chunks_exact(48).take(8) {
            let q = stack.quantize(v).unwrap();
            let deq = stack.dequantize(&q.indices).unwrap();
            assert_eq!(deq, q.quantized);
        }
    }

    #[test]
    fn grvq_rejects_wrong_length() {
        let (_, stack) = fitted_stack(95, 16, 48, 3, 1);
        assert!(matches!(
            stack.quantize(&vec![0.0f64; 47]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn random_projections_are_orthonormal() {
        let projs = GrvqStack::<f64>::random_projections(3, 2, 16, 8, 5);
        for g in &projs {
            for p in g {
                for r in 0..8 {
                    for r2 in r..8 {
                        let d = dot(&p[r * 16..(r + 1) * 16], &p[r2 * 16..(r2 + 1) * 16]);
                        let want = if r == r2 { 1.0 } else { 0.0 };
                        assert!((d - want).abs() < 1e-6);
                    }
                }
            }
        }
        // Deterministic per seed.
        let again = GrvqStack::<f64>::random_projections(3, 2, 16, 8, 5);
        assert_eq!(projs, again);
    }
}
