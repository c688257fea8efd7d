//! Labeled point clouds: block splitting, fixed-size sampling, and
//! train-time augmentation.
//!
//! A [`LabeledCloud`] holds coordinates in meters, optional colors, and a
//! semantic label per point (label 0 is background/clutter). Scenes are
//! split on a fixed xy grid anchored at the cloud's min corner, blocks
//! are resampled to a fixed point count, and training blocks can be
//! jittered and rotated about the vertical axis.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

// Used by the no_std build; the test harness links `std`, whose inherent
// float methods shadow the trait.
#[cfg_attr(test, allow(unused_imports))]
use num_traits::Float;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;

/// A point cloud with per-point semantic labels.
///
/// Colors are always materialized (zero-filled when the source had none)
/// so downstream code never branches on their presence.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    pub coords: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub labels: Vec<usize>,
}

impl LabeledCloud {
    /// Builds a cloud, zero-filling colors when `colors` is `None`.
    pub fn new(
        coords: Vec<[f64; 3]>,
        colors: Option<Vec<[f64; 3]>>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Contract("cloud must contain at least one point".into()));
        }
        if coords.len() != labels.len() {
            return Err(Error::Contract(format!(
                "{} coordinates but {} labels",
                coords.len(),
                labels.len()
            )));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Contract("cloud coordinates must be finite".into()));
        }
        let colors = match colors {
            Some(c) => {
                if c.len() != coords.len() {
                    return Err(Error::Contract(format!(
                        "{} coordinates but {} colors",
                        coords.len(),
                        c.len()
                    )));
                }
                if c.iter().flatten().any(|&v| !(0.0..=1.0).contains(&v)) {
                    return Err(Error::Contract("colors must lie in [0, 1]".into()));
                }
                c
            }
            None => vec![[0.0; 3]; coords.len()],
        };
        Ok(LabeledCloud { coords, colors, labels })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// New cloud made of the given point indices, in order (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> LabeledCloud {
        LabeledCloud {
            coords: indices.iter().map(|&i| self.coords[i]).collect(),
            colors: indices.iter().map(|&i| self.colors[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Boolean mask of the points labeled `class_id`.
    pub fn class_mask(&self, class_id: usize) -> ClassMask {
        ClassMask {
            class_id,
            mask: self.labels.iter().map(|&l| l == class_id).collect(),
        }
    }

    /// Sorted, deduplicated list of labels present.
    pub fn classes_present(&self) -> Vec<usize> {
        let mut classes = self.labels.clone();
        classes.sort_unstable();
        classes.dedup();
        classes
    }
}

/// Marks the points of one semantic class within a specific cloud.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMask {
    pub class_id: usize,
    pub mask: Vec<bool>,
}

impl ClassMask {
    pub fn new(class_id: usize, mask: Vec<bool>) -> Self {
        ClassMask { class_id, mask }
    }

    /// Number of marked points.
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Indices of marked points, ascending.
    pub fn indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| if m { Some(i) } else { None })
            .collect()
    }
}

/// Partitions a cloud into grid cells of side `block_size` in xy, anchored
/// at the cloud's min corner. Every point lands in exactly one block;
/// empty cells produce no block. Blocks are returned in row-major grid
/// order, so the output is deterministic.
pub fn split_blocks(cloud: &LabeledCloud, block_size: f64) -> Result<Vec<LabeledCloud>> {
    if !(block_size > 0.0) {
        return Err(Error::Config(format!("block_size must be > 0, got {block_size}")));
    }
    let min_x = cloud.coords.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let min_y = cloud.coords.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let mut cells: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.coords.iter().enumerate() {
        let cx = ((p[0] - min_x) / block_size).floor() as i64;
        let cy = ((p[1] - min_y) / block_size).floor() as i64;
        cells.entry((cx, cy)).or_default().push(i);
    }
    Ok(cells.values().map(|idx| cloud.select(idx)).collect())
}

/// Resamples a block to exactly `n_points` points: a uniform draw without
/// replacement when the block is large enough, with replacement otherwise
/// (fixed tensor shapes downstream either way). Deterministic given seed.
pub fn sample_block(block: &LabeledCloud, n_points: usize, seed: u64) -> Result<LabeledCloud> {
    if block.is_empty() {
        return Err(Error::Contract("cannot sample from an empty block".into()));
    }
    if n_points == 0 {
        return Err(Error::Contract("n_points must be >= 1".into()));
    }
    let mut rng = rng::seeded(seed);
    let n = block.len();
    let indices: Vec<usize> = if n >= n_points {
        rand::seq::index::sample(&mut rng, n, n_points).into_vec()
    } else {
        (0..n_points).map(|_| rng.gen_range(0..n)).collect()
    };
    Ok(block.select(&indices))
}

/// Applies zero-mean Gaussian coordinate jitter of std `jitter_sigma`,
/// then (when `rotate`) a uniform random rotation about the vertical axis
/// through the cloud's xy centroid. Colors and labels are untouched.
pub fn augment(
    cloud: &LabeledCloud,
    jitter_sigma: f64,
    rotate: bool,
    seed: u64,
) -> Result<LabeledCloud> {
    if !(jitter_sigma >= 0.0) {
        return Err(Error::Config(format!(
            "jitter_sigma must be >= 0, got {jitter_sigma}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut out = cloud.clone();
    if jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, jitter_sigma)
            .map_err(|e| Error::Config(format!("invalid jitter distribution: {e}")))?;
        for p in &mut out.coords {
            for v in p.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }
    if rotate {
        let angle: f64 = rng.gen_range(0.0..core::f64::consts::TAU);
        let (sin, cos) = angle.sin_cos();
        let n = out.coords.len() as f64;
        let cx = out.coords.iter().map(|p| p[0]).sum::<f64>() / n;
        let cy = out.coords.iter().map(|p| p[1]).sum::<f64>() / n;
        for p in &mut out.coords {
            let (dx, dy) = (p[0] - cx, p[1] - cy);
            p[0] = cx + cos * dx - sin * dy;
            p[1] = cy + sin * dx + cos * dy;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_cloud(side: usize, spacing: f64) -> LabeledCloud {
        let mut coords = Vec::new();
        let mut labels = Vec::new();
        for i in 0..side {
            for j in 0..side {
                coords.push([i as f64 * spacing, j as f64 * spacing, 0.0]);
                labels.push((i + j) % 3);
            }
        }
        LabeledCloud::new(coords, None, labels).unwrap()
    }

    #[test]
    fn two_meter_cloud_splits_into_four_unit_blocks() {
        // 5x5 grid spanning [0, 2]^2; the boundary row/column at 2.0 falls
        // into its own cells, so count points per block instead of blocks.
        let cloud = LabeledCloud::new(
            vec![
                [0.1, 0.1, 0.0],
                [0.9, 0.2, 0.0],
                [1.5, 0.5, 0.0],
                [0.3, 1.7, 0.0],
                [1.9, 1.9, 0.0],
                [1.2, 1.4, 0.0],
            ],
            None,
            vec![1; 6],
        )
        .unwrap();
        let blocks = split_blocks(&cloud, 1.0).unwrap();
        assert_eq!(blocks.len(), 4);
        let total: usize = blocks.iter().map(|b| b.len()).sum();
        assert_eq!(total, cloud.len());
    }

    #[test]
    fn small_cloud_is_a_single_block() {
        let cloud = LabeledCloud::new(
            vec![[0.0, 0.0, 0.0], [0.5, 0.5, 1.0], [0.2, 0.4, 0.3]],
            None,
            vec![0, 1, 2],
        )
        .unwrap();
        let blocks = split_blocks(&cloud, 1.0).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0], cloud);
    }

    #[test]
    fn splitting_partitions_every_point_exactly_once() {
        let mut rng = rng::seeded(11);
        let coords: Vec<[f64; 3]> = (0..4000)
            .map(|_| {
                [
                    rng.gen_range(0.0..10.0),
                    rng.gen_range(0.0..10.0),
                    rng.gen_range(0.0..3.0),
                ]
            })
            .collect();
        let labels = vec![1usize; coords.len()];
        let cloud = LabeledCloud::new(coords, None, labels).unwrap();
        let blocks = split_blocks(&cloud, 1.0).unwrap();
        let total: usize = blocks.iter().map(|b| b.len()).sum();
        assert_eq!(total, cloud.len());
        for b in &blocks {
            let min_x = b.coords.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let max_x = b.coords.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            let min_y = b.coords.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
            let max_y = b.coords.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
            assert!(max_x - min_x <= 1.0 + 1e-12);
            assert!(max_y - min_y <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn exhaustive_sample_is_a_permutation() {
        let cloud = grid_cloud(16, 0.1); // 256 points
        let sampled = sample_block(&cloud, 256, 3).unwrap();
        assert_eq!(sampled.len(), 256);
        let mut seen = vec![false; 256];
        for p in &sampled.coords {
            let i = (p[0] / 0.1).round() as usize;
            let j = (p[1] / 0.1).round() as usize;
            let idx = i * 16 + j;
            assert!(!seen[idx], "point {idx} drawn twice");
            seen[idx] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn oversized_block_samples_distinct_indices() {
        let cloud = grid_cloud(100, 0.05); // 10000 points
        let sampled = sample_block(&cloud, 2048, 9).unwrap();
        assert_eq!(sampled.len(), 2048);
        let mut keys: Vec<(u64, u64)> = sampled
            .coords
            .iter()
            .map(|p| ((p[0] / 0.05).round() as u64, (p[1] / 0.05).round() as u64))
            .collect();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), 2048, "draw without replacement must not repeat");
    }

    #[test]
    fn undersized_block_covers_every_point() {
        let cloud = grid_cloud(10, 0.1); // 100 points
        for seed in 0..20 {
            let sampled = sample_block(&cloud, 2048, seed).unwrap();
            assert_eq!(sampled.len(), 2048);
            let mut seen = [false; 100];
            for p in &sampled.coords {
                let i = (p[0] / 0.1).round() as usize;
                let j = (p[1] / 0.1).round() as usize;
                seen[i * 10 + j] = true;
            }
            assert!(seen.iter().all(|&s| s), "seed {seed} missed a point");
        }
    }

    #[test]
    fn sampling_is_deterministic_and_keeps_labels() {
        let cloud = grid_cloud(16, 0.1);
        let a = sample_block(&cloud, 300, 42).unwrap();
        let b = sample_block(&cloud, 300, 42).unwrap();
        assert_eq!(a, b);
        for (p, &l) in a.coords.iter().zip(&a.labels) {
            let i = (p[0] / 0.1).round() as usize;
            let j = (p[1] / 0.1).round() as usize;
            assert_eq!(l, (i + j) % 3);
        }
    }

    #[test]
    fn augment_without_noise_or_rotation_is_identity() {
        let cloud = grid_cloud(8, 0.2);
        let out = augment(&cloud, 0.0, false, 5).unwrap();
        assert_eq!(out, cloud);
    }

    #[test]
    fn rotation_preserves_pairwise_distances_and_z() {
        let mut rng = rng::seeded(21);
        let coords: Vec<[f64; 3]> = (0..50)
            .map(|_| {
                [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.0..2.0),
                ]
            })
            .collect();
        let cloud = LabeledCloud::new(coords, None, vec![1; 50]).unwrap();
        let out = augment(&cloud, 0.0, true, 77).unwrap();
        for (a, b) in cloud.coords.iter().zip(&out.coords) {
            assert_eq!(a[2], b[2], "z must be untouched by the rotation");
        }
        for i in 0..cloud.len() {
            for j in (i + 1)..cloud.len() {
                let d = |c: &[[f64; 3]]| {
                    let (dx, dy, dz) = (
                        c[i][0] - c[j][0],
                        c[i][1] - c[j][1],
                        c[i][2] - c[j][2],
                    );
                    (dx * dx + dy * dy + dz * dz).sqrt()
                };
                assert!((d(&cloud.coords) - d(&out.coords)).abs() < 1e-9);
            }
        }
        assert_eq!(out.labels, cloud.labels);
    }

    #[test]
    fn jitter_rms_displacement_matches_sigma() {
        let cloud = grid_cloud(100, 0.1); // 10^4 points
        let sigma = 0.01;
        let out = augment(&cloud, sigma, false, 13).unwrap();
        let mut sq = 0.0;
        for (a, b) in cloud.coords.iter().zip(&out.coords) {
            for k in 0..3 {
                let d = a[k] - b[k];
                sq += d * d;
            }
        }
        let rms = (sq / cloud.len() as f64).sqrt();
        let expected = sigma * 3.0f64.sqrt();
        assert!(
            (rms - expected).abs() / expected < 0.2,
            "rms {rms} vs expected {expected}"
        );
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let err = LabeledCloud::new(vec![[0.0; 3]; 2], None, vec![0]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
