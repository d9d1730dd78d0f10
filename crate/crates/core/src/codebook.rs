//! Codebooks and their training procedures.
//!
//! A [`Codebook`] is a `J x K` table of centroids with an optional
//! L2-normalized lookup mode: distances are then computed between the
//! unit-normalized query and unit-normalized entries, while dequantization
//! always returns the raw stored entry. Entries are canonicalized to `f32`
//! precision at construction because the serialized form stores 32-bit
//! floats; the content hash is FNV-1a 64 over exactly those bytes, so a
//! codebook hashes identically before and after a save/load round trip.
//!
//! Training is deterministic offline k-means: k-means++ seeding, full-batch
//! Lloyd or mini-batch updates with per-centroid learning rate `1/count`,
//! and farthest-point reseeding of clusters that empty out under Lloyd.
//! Residual stacks fit one codebook per layer on the running residual.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hash::fnv1a64_f32;
use crate::linalg::{sq_dist, unit_normalized};
use crate::scalar::Scalar;

const CODEBOOK_MAGIC: [u8; 4] = *b"CBK1";
const CODEBOOK_VERSION: u8 = 0x01;
const MAX_ELEMENTS: u64 = u32::MAX as u64;

/// A `J x K` centroid table.
#[derive(Debug, Clone)]
pub struct Codebook<T: Scalar = f64> {
    entries: Vec<T>,
    n_entries: usize,
    dim: usize,
    l2_normalized_lookup: bool,
    id: String,
    hash: u64,
    /// Unit-normalized copies used for lookups in L2 mode.
    normalized: Option<Vec<T>>,
}

impl<T: Scalar> Codebook<T> {
    /// Builds a codebook from flat row-major entries. Values are rounded to
    /// their `f32` images (the serialized precision).
    pub fn new(
        entries: Vec<T>,
        n_entries: usize,
        dim: usize,
        l2_normalized_lookup: bool,
        id: impl Into<String>,
    ) -> Result<Self> {
        if n_entries == 0 || dim == 0 {
            return Err(Error::InvalidInput(format!(
                "codebook must have at least one entry and one dim (got {n_entries} x {dim})"
            )));
        }
        if entries.len() != n_entries * dim {
            return Err(Error::ShapeMismatch {
                context: "codebook entries length",
                expected: format!("{}", n_entries * dim),
                got: format!("{}", entries.len()),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "codebook entries must be finite".into(),
            ));
        }
        let entries: Vec<T> = entries.into_iter().map(Scalar::canonical_f32).collect();
        let hash = fnv1a64_f32(entries.iter().map(|&v| v.as_f32()));
        let normalized = l2_normalized_lookup.then(|| {
            let mut out = Vec::with_capacity(entries.len());
            for row in entries.chunks_exact(dim) {
                out.extend(unit_normalized(row));
            }
            out
        });
        Ok(Self {
            entries,
            n_entries,
            dim,
            l2_normalized_lookup,
            id: id.into(),
            hash,
            normalized,
        })
    }

    pub fn from_rows(
        rows: Vec<Vec<T>>,
        l2_normalized_lookup: bool,
        id: impl Into<String>,
    ) -> Result<Self> {
        let n = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("ragged codebook rows".into()));
        }
        let mut flat = Vec::with_capacity(n * dim);
        for r in rows {
            flat.extend(r);
        }
        Self::new(flat, n, dim, l2_normalized_lookup, id)
    }

    pub fn n_entries(&self) -> usize {
        self.n_entries
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn l2_normalized_lookup(&self) -> bool {
        self.l2_normalized_lookup
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// FNV-1a 64 over the f32 little-endian serialization of the entries in
    /// row order.
    pub fn hash(&self) -> u64 {
        self.hash
    }

    /// Raw stored entry `j`, the dequantized value.
    pub fn entry(&self, j: usize) -> &[T] {
        &self.entries[j * self.dim..(j + 1) * self.dim]
    }

    fn lookup_entry(&self, j: usize) -> &[T] {
        match &self.normalized {
            Some(n) => &n[j * self.dim..(j + 1) * self.dim],
            None => self.entry(j),
        }
    }

    /// Index of the nearest entry under this codebook's lookup metric, with
    /// ties broken to the lowest index. Also returns the squared lookup
    /// distance.
    pub fn nearest(&self, v: &[T]) -> (u32, T) {
        debug_assert_eq!(v.len(), self.dim);
        let query_storage;
        let query: &[T] = if self.l2_normalized_lookup {
            query_storage = unit_normalized(v);
            &query_storage
        } else {
            v
        };
        let mut best = 0u32;
        let mut best_d = sq_dist(query, self.lookup_entry(0));
        for j in 1..self.n_entries {
            let d = sq_dist(query, self.lookup_entry(j));
            if d < best_d {
                best_d = d;
                best = j as u32;
            }
        }
        (best, best_d)
    }

    pub fn check_index(&self, index: u32) -> Result<()> {
        if (index as usize) < self.n_entries {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index,
                size: self.n_entries as u32,
            })
        }
    }

    /// Serializes to the codebook format: magic `CBK1`, version, flags byte
    /// (bit 0 = L2 lookup), `J` and `K` as u32 LE, length-prefixed id,
    /// `J*K` f32 LE entries, then the 64-bit content hash.
    pub fn to_bytes(&self) -> Vec<u8> {
        let id_bytes = self.id.as_bytes();
        debug_assert!(id_bytes.len() <= u8::MAX as usize);
        let mut out = Vec::with_capacity(15 + id_bytes.len() + self.entries.len() * 4 + 8);
        out.extend_from_slice(&CODEBOOK_MAGIC);
        out.push(CODEBOOK_VERSION);
        out.push(u8::from(self.l2_normalized_lookup));
        out.extend_from_slice(&(self.n_entries as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.push(id_bytes.len() as u8);
        out.extend_from_slice(id_bytes);
        for &v in &self.entries {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
        out.extend_from_slice(&self.hash.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const CTX: &str = "codebook file";
        let need = |n: usize, have: usize| {
            if have < n {
                Err(Error::Truncated {
                    context: CTX,
                    needed: n,
                    available: have,
                })
            } else {
                Ok(())
            }
        };
        need(15, bytes.len())?;
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != CODEBOOK_MAGIC {
            return Err(Error::BadMagic {
                context: CTX,
                expected: CODEBOOK_MAGIC,
                found: magic,
            });
        }
        if bytes[4] != CODEBOOK_VERSION {
            return Err(Error::VersionMismatch {
                context: CTX,
                found: bytes[4],
                supported: CODEBOOK_VERSION,
            });
        }
        if bytes[5] > 1 {
            return Err(Error::MalformedSection {
                context: CTX,
                detail: format!("unknown flag bits {:#04x}", bytes[5]),
            });
        }
        let l2 = bytes[5] == 1;
        let n_entries = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
        let dim = u32::from_le_bytes(bytes[10..14].try_into().unwrap());
        if n_entries == 0 || dim == 0 {
            return Err(Error::MalformedSection {
                context: CTX,
                detail: format!("dims must be positive (J={n_entries}, K={dim})"),
            });
        }
        let elements = u64::from(n_entries) * u64::from(dim);
        if elements > MAX_ELEMENTS {
            return Err(Error::DimOverflow {
                context: CTX,
                detail: format!("J*K = {elements} exceeds cap {MAX_ELEMENTS}"),
            });
        }
        let id_len = bytes[14] as usize;
        let entries_at = 15 + id_len;
        let total = entries_at + (elements as usize) * 4 + 8;
        need(total, bytes.len())?;
        if bytes.len() > total {
            return Err(Error::MalformedSection {
                context: CTX,
                detail: format!("{} trailing bytes", bytes.len() - total),
            });
        }
        let id = std::str::from_utf8(&bytes[15..entries_at])
            .map_err(|_| Error::MalformedSection {
                context: CTX,
                detail: "id is not valid UTF-8".into(),
            })?
            .to_string();
        let mut entries = Vec::with_capacity(elements as usize);
        let payload = &bytes[entries_at..entries_at + (elements as usize) * 4];
        for chunk in payload.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::MalformedSection {
                    context: CTX,
                    detail: "non-finite codebook entry".into(),
                });
            }
            entries.push(T::from_f64_lossy(f64::from(v)));
        }
        let stored_hash = u64::from_le_bytes(bytes[total - 8..total].try_into().unwrap());
        let cb = Self::new(entries, n_entries as usize, dim as usize, l2, id)?;
        if cb.hash != stored_hash {
            return Err(Error::MalformedSection {
                context: CTX,
                detail: format!(
                    "content hash mismatch: stored {stored_hash:#018x}, computed {:#018x}",
                    cb.hash
                ),
            });
        }
        Ok(cb)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes)
    }
}

/// K-means training options.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub n_centroids: usize,
    pub max_iters: usize,
    /// 0 runs full-batch Lloyd; otherwise mini-batch of this size.
    pub batch_size: usize,
    pub seed: u64,
    /// Stop when the relative inertia improvement falls below this.
    pub tolerance: f64,
}

impl KMeansConfig {
    pub fn lloyd(n_centroids: usize, seed: u64) -> Self {
        Self {
            n_centroids,
            max_iters: 100,
            batch_size: 0,
            seed,
            tolerance: 1e-9,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_centroids == 0 {
            return Err(Error::InvalidInput("n_centroids must be >= 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be >= 1".into()));
        }
        if self.tolerance < 0.0 {
            return Err(Error::InvalidInput("tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

struct LookupView<'a, T: Scalar> {
    raw: &'a [T],
    normalized: Option<Vec<T>>,
    dim: usize,
    n: usize,
}

impl<'a, T: Scalar> LookupView<'a, T> {
    fn new(raw: &'a [T], dim: usize, l2: bool) -> Self {
        let n = raw.len() / dim;
        let normalized = l2.then(|| {
            let mut out = Vec::with_capacity(raw.len());
            for row in raw.chunks_exact(dim) {
                out.extend(unit_normalized(row));
            }
            out
        });
        Self {
            raw,
            normalized,
            dim,
            n,
        }
    }

    fn raw_point(&self, i: usize) -> &[T] {
        &self.raw[i * self.dim..(i + 1) * self.dim]
    }

    fn lookup_point(&self, i: usize) -> &[T] {
        match &self.normalized {
            Some(n) => &n[i * self.dim..(i + 1) * self.dim],
            None => self.raw_point(i),
        }
    }
}

fn lookup_centroid<T: Scalar>(centroid: &[T], l2: bool) -> Vec<T> {
    if l2 {
        unit_normalized(centroid)
    } else {
        centroid.to_vec()
    }
}

/// Counts bitwise-distinct rows.
fn distinct_rows<T: Scalar>(data: &[T], dim: usize) -> usize {
    let n = data.len() / dim;
    let mut order: Vec<usize> = (0..n).collect();
    let key = |i: usize, d: usize| data[i * dim + d].to_f64_lossy().to_bits();
    order.sort_by(|&a, &b| (0..dim).map(|d| key(a, d)).cmp((0..dim).map(|d| key(b, d))));
    let mut distinct = if n > 0 { 1 } else { 0 };
    for w in order.windows(2) {
        if (0..dim).any(|d| key(w[0], d) != key(w[1], d)) {
            distinct += 1;
        }
    }
    distinct
}

/// Fits a codebook by k-means.
///
/// `data` is a flat row-major set of `K`-vectors. Seeding is k-means++ from
/// `cfg.seed`; `cfg.batch_size == 0` runs full-batch Lloyd, anything else
/// runs mini-batch updates with per-centroid learning rate `1/count`.
/// Assignments (and k-means++ distances) are computed in the unit-normalized
/// space when `l2_normalized_lookup` is set, centroid updates always average
/// raw points. Returns the codebook and the per-iteration inertia history in
/// the lookup metric; the history is non-increasing for full-batch Lloyd
/// with Euclidean lookup.
pub fn fit_kmeans<T: Scalar>(
    data: &[T],
    dim: usize,
    cfg: &KMeansConfig,
    l2_normalized_lookup: bool,
    id: impl Into<String>,
) -> Result<(Codebook<T>, Vec<f64>)> {
    cfg.validate()?;
    if dim == 0 || data.is_empty() || data.len() % dim != 0 {
        return Err(Error::InvalidInput(format!(
            "data length {} is not a positive multiple of dim {dim}",
            data.len()
        )));
    }
    let j = cfg.n_centroids;
    let view = LookupView::new(data, dim, l2_normalized_lookup);
    if view.n < j || distinct_rows(data, dim) < j {
        return Err(Error::Infeasible(format!(
            "need at least {j} distinct frames, have {} of which {} distinct",
            view.n,
            distinct_rows(data, dim)
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = kmeans_pp_init(&view, j, &mut rng);
    let mut history = Vec::new();

    if cfg.batch_size == 0 {
        let mut assignments = vec![0u32; view.n];
        for _ in 0..cfg.max_iters {
            let inertia = assign(&view, &centroids, l2_normalized_lookup, &mut assignments);
            history.push(inertia);
            update_means(&view, &assignments, &mut centroids);
            reseed_empty(&view, &assignments, &mut centroids, l2_normalized_lookup);
            if converged(&history, cfg.tolerance) {
                break;
            }
        }
        // History entries reflect the centroids of each iteration start; add
        // the post-update inertia so the last entry matches the result.
        let inertia = assign(&view, &centroids, l2_normalized_lookup, &mut assignments);
        history.push(inertia);
    } else {
        let mut counts = vec![0u64; j];
        let batch = cfg.batch_size.min(view.n);
        let mut assignments = vec![0u32; view.n];
        for _ in 0..cfg.max_iters {
            let picked = sample_indices(&mut rng, view.n, batch);
            for i in picked.iter() {
                let (c, _) = nearest_centroid(&view, i, &centroids, l2_normalized_lookup);
                let c = c as usize;
                counts[c] += 1;
                let lr = T::from_f64_lossy(1.0 / counts[c] as f64);
                let p = view.raw_point(i);
                let row = &mut centroids[c * dim..(c + 1) * dim];
                for (m, &x) in row.iter_mut().zip(p) {
                    *m += lr * (x - *m);
                }
            }
            let inertia = assign(&view, &centroids, l2_normalized_lookup, &mut assignments);
            history.push(inertia);
            if converged(&history, cfg.tolerance) {
                break;
            }
        }
    }

    let cb = Codebook::new(centroids, j, dim, l2_normalized_lookup, id)?;
    Ok((cb, history))
}

fn kmeans_pp_init<T: Scalar>(view: &LookupView<T>, j: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let dim = view.dim;
    let mut centroids: Vec<T> = Vec::with_capacity(j * dim);
    let first = rng.random_range(0..view.n);
    centroids.extend_from_slice(view.raw_point(first));
    let l2 = view.normalized.is_some();
    let mut min_d: Vec<f64> = (0..view.n)
        .map(|i| {
            sq_dist(
                view.lookup_point(i),
                &lookup_centroid(view.raw_point(first), l2),
            )
            .to_f64_lossy()
        })
        .collect();
    while centroids.len() / dim < j {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            let mut threshold = rng.random::<f64>() * total;
            let mut chosen = view.n - 1;
            for (i, &d) in min_d.iter().enumerate() {
                threshold -= d;
                if threshold <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All mass collapsed (duplicates); take the first unused point.
            let used: Vec<&[T]> = centroids.chunks_exact(dim).collect();
            (0..view.n)
                .find(|&i| !used.iter().any(|c| *c == view.raw_point(i)))
                .unwrap_or(0)
        };
        let new_lookup = lookup_centroid(view.raw_point(pick), l2);
        centroids.extend_from_slice(view.raw_point(pick));
        for (i, d) in min_d.iter_mut().enumerate() {
            let nd = sq_dist(view.lookup_point(i), &new_lookup).to_f64_lossy();
            if nd < *d {
                *d = nd;
            }
        }
    }
    centroids
}

fn nearest_centroid<T: Scalar>(
    view: &LookupView<T>,
    i: usize,
    centroids: &[T],
    l2: bool,
) -> (u32, f64) {
    let dim = view.dim;
    let p = view.lookup_point(i);
    let mut best = 0u32;
    let mut best_d = f64::INFINITY;
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let cl = lookup_centroid(row, l2);
        let d = sq_dist(p, &cl).to_f64_lossy();
        if d < best_d {
            best_d = d;
            best = c as u32;
        }
    }
    (best, best_d)
}

fn assign<T: Scalar>(
    view: &LookupView<T>,
    centroids: &[T],
    l2: bool,
    assignments: &mut [u32],
) -> f64 {
    let dim = view.dim;
    let j = centroids.len() / dim;
    let lookup_rows: Vec<Vec<T>> = centroids
        .chunks_exact(dim)
        .map(|row| lookup_centroid(row, l2))
        .collect();
    let mut inertia = 0.0f64;
    for i in 0..view.n {
        let p = view.lookup_point(i);
        let mut best = 0u32;
        let mut best_d = sq_dist(p, &lookup_rows[0]);
        for c in 1..j {
            let d = sq_dist(p, &lookup_rows[c]);
            if d < best_d {
                best_d = d;
                best = c as u32;
            }
        }
        assignments[i] = best;
        inertia += best_d.to_f64_lossy();
    }
    inertia
}

fn update_means<T: Scalar>(view: &LookupView<T>, assignments: &[u32], centroids: &mut [T]) {
    let dim = view.dim;
    let j = centroids.len() / dim;
    let mut counts = vec![0u64; j];
    let mut sums = vec![T::zero(); j * dim];
    for i in 0..view.n {
        let c = assignments[i] as usize;
        counts[c] += 1;
        let p = view.raw_point(i);
        for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(p) {
            *s += x;
        }
    }
    for c in 0..j {
        if counts[c] == 0 {
            continue; // handled by reseed_empty
        }
        let inv = T::from_f64_lossy(1.0 / counts[c] as f64);
        for d in 0..dim {
            centroids[c * dim + d] = sums[c * dim + d] * inv;
        }
    }
}

/// Moves each empty centroid onto the point currently farthest from its own
/// assigned centroid; successive empties take successive farthest points.
fn reseed_empty<T: Scalar>(
    view: &LookupView<T>,
    assignments: &[u32],
    centroids: &mut [T],
    l2: bool,
) {
    let dim = view.dim;
    let j = centroids.len() / dim;
    let mut counts = vec![0u64; j];
    for &a in assignments {
        counts[a as usize] += 1;
    }
    let empties: Vec<usize> = (0..j).filter(|&c| counts[c] == 0).collect();
    if empties.is_empty() {
        return;
    }
    let mut dists: Vec<(usize, f64)> = (0..view.n)
        .map(|i| {
            let c = assignments[i] as usize;
            let cl = lookup_centroid(&centroids[c * dim..(c + 1) * dim], l2);
            (i, sq_dist(view.lookup_point(i), &cl).to_f64_lossy())
        })
        .collect();
    dists.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    for (slot, &c) in empties.iter().enumerate() {
        if slot >= dists.len() {
            break;
        }
        let (point, _) = dists[slot];
        centroids[c * dim..(c + 1) * dim].copy_from_slice(view.raw_point(point));
    }
}

fn converged(history: &[f64], tolerance: f64) -> bool {
    if history.len() < 2 {
        return false;
    }
    let prev = history[history.len() - 2];
    let cur = history[history.len() - 1];
    if prev <= 0.0 {
        return true;
    }
    (prev - cur) / prev < tolerance
}

/// Fits an `n_layers` residual stack: layer 0 on the frames, each further
/// layer on the residual left by the previous ones. Layer `i` is seeded with
/// `cfg.seed + i`, so a one-layer stack is identical to [`fit_kmeans`].
pub fn fit_residual_stack<T: Scalar>(
    data: &[T],
    dim: usize,
    n_layers: usize,
    cfg: &KMeansConfig,
    l2_normalized_lookup: bool,
    id_prefix: &str,
) -> Result<Vec<Codebook<T>>> {
    if n_layers == 0 {
        return Err(Error::InvalidInput("n_layers must be >= 1".into()));
    }
    let mut residual = data.to_vec();
    let mut books = Vec::with_capacity(n_layers);
    for layer in 0..n_layers {
        let layer_cfg = KMeansConfig {
            seed: cfg.seed.wrapping_add(layer as u64),
            ..cfg.clone()
        };
        let (cb, _) = fit_kmeans(
            &residual,
            dim,
            &layer_cfg,
            l2_normalized_lookup,
            format!("{id_prefix}.L{layer}"),
        )?;
        for row in residual.chunks_exact_mut(dim) {
            let (idx, _) = cb.nearest(row);
            let e = cb.entry(idx as usize);
            for (r, &q) in row.iter_mut().zip(e) {
                *r -= q;
            }
        }
        books.push(cb);
    }
    Ok(books)
}

/// Mean squared residual energy of quantizing `data` with a stack, layer by
/// layer. Returns one value per layer boundary (after layer 0, after layer
/// 1, ...).
pub fn residual_energy_per_layer<T: Scalar>(
    data: &[T],
    dim: usize,
    stack: &[Codebook<T>],
) -> Vec<f64> {
    let mut residual = data.to_vec();
    let n = (data.len() / dim).max(1);
    let mut energies = Vec::with_capacity(stack.len());
    for cb in stack {
        for row in residual.chunks_exact_mut(dim) {
            let (idx, _) = cb.nearest(row);
            let e = cb.entry(idx as usize);
            for (r, &q) in row.iter_mut().zip(e) {
                *r -= q;
            }
        }
        let energy: f64 = residual
            .iter()
            .map(|&x| {
                let v = x.to_f64_lossy();
                v * v
            })
            .sum::<f64>()
            / n as f64;
        energies.push(energy);
    }
    energies
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    fn blob_data(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        for _ in 0..500 {
            data.push(0.1 * randn(&mut rng));
            data.push(0.1 * randn(&mut rng));
        }
        for _ in 0..500 {
            data.push(10.0 + 0.1 * randn(&mut rng));
            data.push(10.0 + 0.1 * randn(&mut rng));
        }
        data
    }

    #[test]
    fn two_blobs_recover_means() {
        let data = blob_data(1);
        let (cb, _) = fit_kmeans(&data, 2, &KMeansConfig::lloyd(2, 0), false, "t").unwrap();
        let mut found = [false, false];
        for j in 0..2 {
            let e = cb.entry(j);
            if sq_dist(e, &[0.0, 0.0]).sqrt() < 0.05 {
                found[0] = true;
            }
            if sq_dist(e, &[10.0, 10.0]).sqrt() < 0.05 {
                found[1] = true;
            }
        }
        assert!(found[0] && found[1], "centroids {:?}", cb.entry(0));
    }

    #[test]
    fn j_equals_points_gives_zero_inertia() {
        let data = vec![0.0f64, 0.0, 1.0, 0.0, 0.0, 1.0, 5.0, 5.0];
        let (cb, history) = fit_kmeans(&data, 2, &KMeansConfig::lloyd(4, 3), false, "t").unwrap();
        assert_eq!(*history.last().unwrap(), 0.0);
        let mut got: Vec<Vec<u64>> = (0..4)
            .map(|j| cb.entry(j).iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut want: Vec<Vec<u64>> = data
            .chunks(2)
            .map(|p| p.iter().map(|v| v.to_bits()).collect())
            .collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn lloyd_inertia_history_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let data: Vec<f64> = (0..2000).map(|_| randn(&mut rng) * 3.0).collect();
        let cfg = KMeansConfig {
            n_centroids: 8,
            max_iters: 40,
            batch_size: 0,
            seed: 5,
            tolerance: 0.0,
        };
        let (cb, history) = fit_kmeans(&data, 2, &cfg, false, "t").unwrap();
        assert!(history.len() >= 2);
        for w in history.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9,
                "inertia increased: {} -> {}",
                w[0],
                w[1]
            );
        }
        // The last history entry must match a brute-force recomputation.
        let brute: f64 = data
            .chunks_exact(2)
            .map(|p| {
                (0..8)
                    .map(|j| sq_dist(p, cb.entry(j)))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        let last = *history.last().unwrap();
        assert!((brute - last).abs() <= 1e-9 * brute.max(1.0));
    }

    #[test]
    fn too_few_distinct_frames_is_infeasible() {
        let data = vec![1.0f64, 2.0, 1.0, 2.0, 1.0, 2.0];
        let err = fit_kmeans(&data, 2, &KMeansConfig::lloyd(2, 0), false, "t").unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)), "{err}");
    }

    #[test]
    fn deterministic_same_seed_same_hash() {
        let data = blob_data(2);
        let cfg = KMeansConfig::lloyd(4, 9);
        let (a, _) = fit_kmeans(&data, 2, &cfg, false, "t").unwrap();
        let (b, _) = fit_kmeans(&data, 2, &cfg, false, "t").unwrap();
        assert_eq!(a.hash(), b.hash());
        let other = KMeansConfig::lloyd(4, 10);
        let (c, _) = fit_kmeans(&data, 2, &other, false, "t").unwrap();
        // Different seed virtually always lands elsewhere on random blobs.
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn minibatch_converges_near_blob_means() {
        let data = blob_data(3);
        let cfg = KMeansConfig {
            n_centroids: 2,
            max_iters: 60,
            batch_size: 64,
            seed: 1,
            tolerance: 0.0,
        };
        let (cb, history) = fit_kmeans(&data, 2, &cfg, false, "t").unwrap();
        assert!(!history.is_empty());
        let near = |target: [f64; 2]| (0..2).any(|j| sq_dist(cb.entry(j), &target).sqrt() < 0.5);
        assert!(near([0.0, 0.0]) && near([10.0, 10.0]));
    }

    #[test]
    fn l2_lookup_prefers_direction_over_magnitude() {
        let cb = Codebook::from_rows(vec![vec![10.0f64, 0.0], vec![0.0, 0.1]], true, "l2").unwrap();
        // Euclidean-nearest to (0.0, 2.0) is entry 1 either way, but
        // (9.0, 1.0) is closer to entry 1 in raw space near the origin while
        // direction says entry 0.
        let (idx, _) = cb.nearest(&[0.9, 0.1]);
        assert_eq!(idx, 0);
        let (idx, _) = cb.nearest(&[0.01, 0.2]);
        assert_eq!(idx, 1);
    }

    #[test]
    fn residual_stack_zero_residual_on_exact_frames() {
        let entries = vec![vec![1.0f64, 0.0], vec![0.0, 1.0], vec![-3.0, 2.0]];
        let cb = Codebook::from_rows(entries.clone(), false, "seed").unwrap();
        // Frames drawn exactly from the codebook; fit a 1-layer stack with
        // J = 3 and confirm zero residual energy.
        let mut data = Vec::new();
        for i in [0usize, 1, 2, 1, 0, 2, 2, 1] {
            data.extend_from_slice(cb.entry(i));
        }
        let stack =
            fit_residual_stack(&data, 2, 1, &KMeansConfig::lloyd(3, 4), false, "s").unwrap();
        let energy = residual_energy_per_layer(&data, 2, &stack);
        assert!(energy[0] < 1e-20, "energy {:?}", energy);
    }

    #[test]
    fn residual_stack_energy_decreases_with_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data: Vec<f64> = (0..600).map(|_| randn(&mut rng)).collect();
        let stack =
            fit_residual_stack(&data, 3, 2, &KMeansConfig::lloyd(8, 2), false, "s").unwrap();
        let energy = residual_energy_per_layer(&data, 3, &stack);
        assert!(energy[1] <= energy[0], "energies {:?}", energy);
    }

    #[test]
    fn one_layer_stack_equals_fit_kmeans() {
        let data = blob_data(4);
        let cfg = KMeansConfig::lloyd(4, 6);
        let stack = fit_residual_stack(&data, 2, 1, &cfg, false, "s").unwrap();
        let (direct, _) = fit_kmeans(&data, 2, &cfg, false, "s.L0").unwrap();
        assert_eq!(stack[0].hash(), direct.hash());
        assert_eq!(stack[0].id(), direct.id());
    }

    #[test]
    fn codebook_file_round_trip() {
        let cb = Codebook::from_rows(
            vec![vec![1.5f64, -2.25, 0.0], vec![4.0, 5.0, -6.5]],
            true,
            "prosody.L0",
        )
        .unwrap();
        let bytes = cb.to_bytes();
        let back = Codebook::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back.hash(), cb.hash());
        assert_eq!(back.id(), "prosody.L0");
        assert!(back.l2_normalized_lookup());
        assert_eq!(back.entry(1), cb.entry(1));

        let mut corrupt = bytes.clone();
        corrupt[0] = b'Z';
        assert!(matches!(
            Codebook::<f64>::from_bytes(&corrupt),
            Err(Error::BadMagic { .. })
        ));
        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 20] ^= 0x40; // entry byte: stored hash no longer matches
        assert!(Codebook::<f64>::from_bytes(&flipped).is_err());
    }

    #[test]
    fn tie_breaks_to_lowest_index() {
        let cb = Codebook::from_rows(vec![vec![0.0f64, 0.0], vec![1.0, 1.0]], false, "t").unwrap();
        let (idx, _) = cb.nearest(&[0.5, 0.5]);
        assert_eq!(idx, 0);
    }
}
