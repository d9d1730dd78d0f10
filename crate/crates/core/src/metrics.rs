//! Scalar evaluation utilities: Pearson correlation, equal error rate,
//! feature-space distances, and clustering purity.
//!
//! The feature distances stand in for waveform-domain quality metrics,
//! which need audio and external models; reports label them as
//! feature-space figures.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::dot;
use crate::scalar::Scalar;

/// Pearson correlation coefficient of two equal-length sequences.
///
/// Undefined (an error) whenever either sequence is constant, since the
/// denominator vanishes; the result is clamped to `[-1, 1]` against
/// rounding.
pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            context: "pearson input lengths",
            expected: format!("{}", x.len()),
            got: format!("{}", y.len()),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidInput(
            "pearson needs at least two samples".into(),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("pearson requires finite input".into()));
    }
    let n = T::from_f64_lossy(x.len() as f64);
    let mean_x = x.iter().copied().sum::<T>() / n;
    let mean_y = y.iter().copied().sum::<T>() / n;
    let mut cov = T::zero();
    let mut var_x = T::zero();
    let mut var_y = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == T::zero() || var_y == T::zero() {
        return Err(Error::UndefinedCorrelation(
            "at least one sequence is constant".into(),
        ));
    }
    let r = cov / (var_x.sqrt() * var_y.sqrt());
    Ok(r.min(T::one()).max(-T::one()))
}

/// Equal error rate of a verification score set; higher scores mean more
/// genuine.
///
/// Sweeps all distinct score values as accept thresholds (`accept` means
/// `score >= threshold`) and linearly interpolates between the two
/// operating points that bracket the crossing of the false-accept and
/// false-reject curves. Returns `(rate, threshold)`. The rate depends on
/// scores only through their order, so it is invariant under strictly
/// increasing transformations.
pub fn eer<T: Scalar>(genuine: &[T], impostor: &[T]) -> Result<(f64, T)> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::InvalidInput(
            "eer needs non-empty genuine and impostor score lists".into(),
        ));
    }
    if genuine.iter().chain(impostor).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("eer requires finite scores".into()));
    }
    let mut gen_sorted: Vec<T> = genuine.to_vec();
    let mut imp_sorted: Vec<T> = impostor.to_vec();
    gen_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    imp_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut thresholds: Vec<T> = gen_sorted.iter().chain(&imp_sorted).copied().collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();

    let n_gen = gen_sorted.len() as f64;
    let n_imp = imp_sorted.len() as f64;
    // far(theta) = #{impostor >= theta} / n_imp, frr = #{genuine < theta} / n_gen
    let count_ge = |sorted: &[T], theta: T| -> usize { sorted.partition_point(|&v| v < theta) };
    let operating_point = |theta: T| -> (f64, f64) {
        let far = (imp_sorted.len() - count_ge(&imp_sorted, theta)) as f64 / n_imp;
        let frr = count_ge(&gen_sorted, theta) as f64 / n_gen;
        (far, frr)
    };

    // Start below every score: everything accepted.
    let mut prev_theta = thresholds[0];
    let mut prev = (1.0f64, 0.0f64);
    for &theta in &thresholds {
        let cur = operating_point(theta);
        let prev_diff = prev.0 - prev.1;
        let cur_diff = cur.0 - cur.1;
        if prev_diff >= 0.0 && cur_diff <= 0.0 {
            if prev_diff == cur_diff {
                return Ok((prev.0, prev_theta));
            }
            let t = prev_diff / (prev_diff - cur_diff);
            let rate = prev.0 + t * (cur.0 - prev.0);
            let threshold = prev_theta + T::from_f64_lossy(t) * (theta - prev_theta);
            return Ok((rate, threshold));
        }
        prev = cur;
        prev_theta = theta;
    }
    // Past every score: everything rejected; crossing sits at the top.
    let last = *thresholds.last().unwrap();
    let cur = (0.0f64, 1.0f64);
    let prev_diff = prev.0 - prev.1;
    let cur_diff = cur.0 - cur.1;
    let t = if prev_diff == cur_diff {
        0.0
    } else {
        prev_diff / (prev_diff - cur_diff)
    };
    Ok((prev.0 + t * (cur.0 - prev.0), last))
}

/// Feature-space distance kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceKind {
    /// Mean over frames of the Euclidean distance.
    L2,
    /// One minus the mean per-frame cosine similarity.
    Cosine,
}

impl std::str::FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(DistanceKind::L2),
            "cosine" => Ok(DistanceKind::Cosine),
            other => Err(Error::InvalidInput(format!(
                "unknown distance kind '{other}' (expected l2 or cosine)"
            ))),
        }
    }
}

/// Frame-averaged distance between two same-shaped feature matrices.
pub fn feature_distance<T: Scalar>(
    a: &FeatureMatrix<T>,
    b: &FeatureMatrix<T>,
    kind: DistanceKind,
) -> Result<f64> {
    a.check_same_shape(b, "feature_distance")?;
    let t = a.n_frames() as f64;
    match kind {
        DistanceKind::L2 => {
            let mut total = 0.0f64;
            for (fa, fb) in a.frames().zip(b.frames()) {
                let sq: T = fa
                    .iter()
                    .zip(fb)
                    .map(|(&x, &y)| {
                        let d = x - y;
                        d * d
                    })
                    .sum();
                total += sq.sqrt().to_f64_lossy();
            }
            Ok(total / t)
        }
        DistanceKind::Cosine => {
            let tiny = 1e-12f64;
            let mut total = 0.0f64;
            for (fa, fb) in a.frames().zip(b.frames()) {
                let num = dot(fa, fb).to_f64_lossy();
                let na = dot(fa, fa).sqrt().to_f64_lossy();
                let nb = dot(fb, fb).sqrt().to_f64_lossy();
                total += num / (na * nb).max(tiny);
            }
            Ok(1.0 - total / t)
        }
    }
}

/// Purity of a clustering against reference labels: the fraction of points
/// whose cluster's majority label matches their own.
pub fn cluster_purity(assignments: &[u32], labels: &[usize]) -> Result<f64> {
    if assignments.len() != labels.len() || assignments.is_empty() {
        return Err(Error::InvalidInput(
            "assignments and labels must be equal-length and non-empty".into(),
        ));
    }
    let n_clusters = assignments.iter().copied().max().unwrap_or(0) as usize + 1;
    let n_labels = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut counts = vec![0usize; n_clusters * n_labels];
    for (&c, &l) in assignments.iter().zip(labels) {
        counts[c as usize * n_labels + l] += 1;
    }
    let majority: usize = (0..n_clusters)
        .map(|c| {
            counts[c * n_labels..(c + 1) * n_labels]
                .iter()
                .copied()
                .max()
                .unwrap_or(0)
        })
        .sum();
    Ok(majority as f64 / assignments.len() as f64)
}

/// Expected purity of the same clustering under label permutation: the
/// chance baseline for [`cluster_purity`] with this cluster-size profile.
pub fn chance_purity(
    assignments: &[u32],
    labels: &[usize],
    permutations: usize,
    seed: u64,
) -> Result<f64> {
    if permutations == 0 {
        return Err(Error::InvalidInput("need at least one permutation".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = labels.to_vec();
    let mut total = 0.0f64;
    for _ in 0..permutations {
        shuffled.shuffle(&mut rng);
        total += cluster_purity(assignments, &shuffled)?;
    }
    Ok(total / permutations as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    #[test]
    fn perfect_linear_correlation() {
        let x = [1.0f64, 2.0, 5.0, -3.0, 0.5];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert_eq!(pearson(&x, &y).unwrap(), 1.0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(pearson(&x, &neg).unwrap(), -1.0);
    }

    #[test]
    fn hand_computed_example() {
        let x = [1.0f64, 2.0, 3.0, 4.0];
        let y = [1.0f64, 3.0, 2.0, 4.0];
        // cov = 1.0, std_x = std_y = sqrt(1.25): r = 1.0 / 1.25 = 0.8
        assert!((pearson(&x, &y).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn pearson_error_paths() {
        assert!(matches!(
            pearson(&[1.0f64, 2.0], &[1.0, 2.0, 3.0]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            pearson(&[2.0f64, 2.0], &[3.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(
            pearson(&[2.0f64, 2.0], &[1.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(pearson(&[1.0f64], &[1.0]).is_err());
    }

    #[test]
    fn pearson_invariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = 5 + rng.random_range(0..40usize);
            let x: Vec<f64> = (0..n).map(|_| randn(&mut rng)).collect();
            let y: Vec<f64> = (0..n).map(|_| randn(&mut rng)).collect();
            let r = pearson(&x, &y).unwrap();
            let r_sym = pearson(&y, &x).unwrap();
            assert!((r - r_sym).abs() < 1e-12);
            let scaled: Vec<f64> = x.iter().map(|v| 3.5 * v - 7.0).collect();
            assert!((pearson(&scaled, &y).unwrap() - r).abs() < 1e-9);
            let flipped: Vec<f64> = x.iter().map(|v| -2.0 * v + 1.0).collect();
            assert!((pearson(&flipped, &y).unwrap() + r).abs() < 1e-9);
        }
    }

    #[test]
    fn eer_perfect_separation_is_zero() {
        let genuine = vec![1.0f64; 20];
        let impostor = vec![0.0f64; 30];
        let (rate, threshold) = eer(&genuine, &impostor).unwrap();
        assert_eq!(rate, 0.0);
        assert!(threshold > 0.0 && threshold <= 1.0);
    }

    #[test]
    fn eer_identical_distributions_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let genuine: Vec<f64> = (0..10_000).map(|_| randn(&mut rng)).collect();
        let impostor: Vec<f64> = (0..10_000).map(|_| randn(&mut rng)).collect();
        let (rate, _) = eer(&genuine, &impostor).unwrap();
        assert!((rate - 0.5).abs() < 0.02, "rate {rate}");
    }

    /// Brute-force oracle: scan a dense grid of thresholds for the minimal
    /// |FAR - FRR| and compare the achieved rate region.
    #[test]
    fn eer_matches_threshold_sweep_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let n_g = 3 + rng.random_range(0..12usize);
            let n_i = 3 + rng.random_range(0..12usize);
            let genuine: Vec<f64> = (0..n_g).map(|_| randn(&mut rng) + 1.0).collect();
            let impostor: Vec<f64> = (0..n_i).map(|_| randn(&mut rng)).collect();
            let (rate, _) = eer(&genuine, &impostor).unwrap();
            // Oracle: at every candidate threshold compute both rates; the
            // interpolated EER must lie within the bracketing gap around
            // the minimal |FAR - FRR|.
            let mut best_gap = f64::INFINITY;
            let mut lo = 0.0f64;
            let mut hi = 1.0f64;
            let mut candidates: Vec<f64> = genuine.iter().chain(&impostor).copied().collect();
            candidates.push(f64::NEG_INFINITY);
            candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for &theta in &candidates {
                let far = impostor.iter().filter(|&&s| s >= theta).count() as f64 / n_i as f64;
                let frr = genuine.iter().filter(|&&s| s < theta).count() as f64 / n_g as f64;
                let gap = (far - frr).abs();
                if gap < best_gap {
                    best_gap = gap;
                    lo = far.min(frr);
                    hi = far.max(frr);
                }
            }
            assert!(
                rate >= lo - 1e-12 && rate <= hi + 1e-12,
                "rate {rate} outside [{lo}, {hi}]"
            );
        }
    }

    #[test]
    fn eer_is_monotone_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let genuine: Vec<f64> = (0..200).map(|_| randn(&mut rng) + 0.8).collect();
        let impostor: Vec<f64> = (0..300).map(|_| randn(&mut rng)).collect();
        let (base, _) = eer(&genuine, &impostor).unwrap();
        let exp_g: Vec<f64> = genuine.iter().map(|v| v.exp()).collect();
        let exp_i: Vec<f64> = impostor.iter().map(|v| v.exp()).collect();
        let (rate_exp, _) = eer(&exp_g, &exp_i).unwrap();
        assert!((rate_exp - base).abs() < 1e-12);
        let aff_g: Vec<f64> = genuine.iter().map(|v| 10.0 * v + 7.0).collect();
        let aff_i: Vec<f64> = impostor.iter().map(|v| 10.0 * v + 7.0).collect();
        let (rate_aff, _) = eer(&aff_g, &aff_i).unwrap();
        assert!((rate_aff - base).abs() < 1e-12);
    }

    #[test]
    fn eer_rejects_empty_lists() {
        assert!(eer::<f64>(&[], &[1.0]).is_err());
        assert!(eer::<f64>(&[1.0], &[]).is_err());
    }

    fn mat(rows: &[&[f64]]) -> FeatureMatrix<f64> {
        FeatureMatrix::from_frames(rows.iter().map(|r| r.to_vec()).collect(), 50.0).unwrap()
    }

    #[test]
    fn distance_of_identical_matrices_is_zero() {
        let a = mat(&[&[1.0, 2.0], &[3.0, -4.0]]);
        assert_eq!(feature_distance(&a, &a, DistanceKind::L2).unwrap(), 0.0);
        assert!(
            feature_distance(&a, &a, DistanceKind::Cosine)
                .unwrap()
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn cosine_distance_of_negated_is_two() {
        let a = mat(&[&[1.0, 2.0], &[3.0, -4.0]]);
        let b = mat(&[&[-1.0, -2.0], &[-3.0, 4.0]]);
        assert!((feature_distance(&a, &b, DistanceKind::Cosine).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn distances_match_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = 20;
        let d = 6;
        let a =
            FeatureMatrix::new((0..t * d).map(|_| randn(&mut rng)).collect(), t, d, 50.0).unwrap();
        let b =
            FeatureMatrix::new((0..t * d).map(|_| randn(&mut rng)).collect(), t, d, 50.0).unwrap();
        let mut l2 = 0.0f64;
        let mut cos = 0.0f64;
        for tt in 0..t {
            let fa = a.frame(tt);
            let fb = b.frame(tt);
            let mut sq = 0.0;
            let mut num = 0.0;
            let mut na = 0.0;
            let mut nb = 0.0;
            for dd in 0..d {
                sq += (fa[dd] - fb[dd]) * (fa[dd] - fb[dd]);
                num += fa[dd] * fb[dd];
                na += fa[dd] * fa[dd];
                nb += fb[dd] * fb[dd];
            }
            l2 += sq.sqrt();
            cos += num / (na.sqrt() * nb.sqrt());
        }
        l2 /= t as f64;
        cos = 1.0 - cos / t as f64;
        assert!((feature_distance(&a, &b, DistanceKind::L2).unwrap() - l2).abs() < 1e-6);
        assert!((feature_distance(&a, &b, DistanceKind::Cosine).unwrap() - cos).abs() < 1e-6);
    }

    #[test]
    fn l2_distance_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..40 {
            let t = 4;
            let d = 5;
            let gen = |rng: &mut ChaCha8Rng| {
                FeatureMatrix::new((0..t * d).map(|_| randn(rng)).collect(), t, d, 50.0).unwrap()
            };
            let a = gen(&mut rng);
            let b = gen(&mut rng);
            let c = gen(&mut rng);
            let ab = feature_distance(&a, &b, DistanceKind::L2).unwrap();
            let bc = feature_distance(&b, &c, DistanceKind::L2).unwrap();
            let ac = feature_distance(&a, &c, DistanceKind::L2).unwrap();
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn purity_of_perfect_clustering_is_one() {
        let labels = vec![0usize, 0, 1, 1, 2, 2];
        let assignments = vec![5u32, 5, 1, 1, 3, 3];
        assert_eq!(cluster_purity(&assignments, &labels).unwrap(), 1.0);
    }

    #[test]
    fn chance_purity_sits_near_label_frequency() {
        // 100 points, 10 balanced labels, 10 balanced clusters: the chance
        // baseline stays well below 0.5 but above 1/10.
        let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let assignments: Vec<u32> = (0..100).map(|i| (i / 10) as u32).collect();
        let chance = chance_purity(&assignments, &labels, 50, 0).unwrap();
        assert!(chance > 0.1 && chance < 0.4, "chance {chance}");
    }
}
