//! Sparse per-part prototypes: masking, farthest-point seed selection,
//! nearest-seed partition, per-part averaging, and the final per-channel
//! softmax assembly of K part prototypes into one class prototype.
//!
//! Seed selection and the point-to-part assignment are discrete and
//! carry no gradient; the averaging and assembly are differentiable
//! graph operations.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{Axis, Graph, TensorId};
use crate::cloud::{ClassMask, LabeledCloud};
use crate::embedder::FeatureMatrix;
use crate::error::{Error, Result};
use crate::params::ParamBinding;
use crate::rng;

/// Which space farthest-point sampling and the part assignment run in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedSpace {
    /// Embedded feature space (default).
    Feature,
    /// Raw block coordinates.
    Coordinate,
}

/// The points of one class within a block, with their features.
#[derive(Debug, Clone)]
pub struct MaskedPoints {
    pub class_id: usize,
    /// `m x D` feature rows in the graph.
    pub features: TensorId,
    /// `m x 3` raw coordinates as a graph constant.
    pub coords: TensorId,
    /// Raw coordinates, kept for seed/assignment geometry.
    pub coords_raw: Vec<[f64; 3]>,
    /// Row indices into the original cloud, ascending per source block.
    pub indices: Vec<usize>,
    pub m: usize,
    pub d: usize,
}

/// A partition of masked points into K parts around seed points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartAssignment {
    /// Indices of the seed points within the masked set.
    pub seeds: Vec<usize>,
    /// Part id in `[0, K)` for every masked point.
    pub assignment: Vec<usize>,
}

/// Pipeline stage a prototype set was produced by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrototypeStage {
    Initial,
    Po2Prg,
    Pr2Pog,
    AssembledInput,
}

/// K per-part prototypes of one class.
#[derive(Debug, Clone)]
pub struct PrototypeSet {
    pub class_id: usize,
    /// `K x D` prototype features.
    pub features: TensorId,
    /// `K x 3` prototype coordinates (graph constant).
    pub coords: TensorId,
    pub k: usize,
    pub stage: PrototypeStage,
}

/// The single fused prototype of a class.
#[derive(Debug, Clone, Copy)]
pub struct ClassPrototype {
    pub class_id: usize,
    /// `1 x D`.
    pub z: TensorId,
}

/// Result of [`assemble`]: the transformed prototypes, their per-channel
/// fusion weights, and the fused class prototype.
#[derive(Debug, Clone)]
pub struct AssembleOutput {
    pub transformed: PrototypeSet,
    /// `K x D`, each column summing to 1.
    pub alpha: TensorId,
    pub prototype: ClassPrototype,
}

/// Selects the masked rows of a feature matrix, preserving order and
/// recording the original indices.
pub fn apply_mask(
    g: &mut Graph,
    features: &FeatureMatrix,
    cloud: &LabeledCloud,
    mask: &ClassMask,
) -> Result<MaskedPoints> {
    if mask.mask.len() != cloud.len() || cloud.len() != features.n {
        return Err(Error::Contract(format!(
            "apply_mask: mask ({}), cloud ({}), features ({}) sizes differ",
            mask.mask.len(),
            cloud.len(),
            features.n
        )));
    }
    let indices = mask.indices();
    if indices.is_empty() {
        return Err(Error::Contract(format!(
            "apply_mask: class {} has no points in this block",
            mask.class_id
        )));
    }
    let feats = g.gather_rows(features.features, &indices)?;
    let coords_raw: Vec<[f64; 3]> = indices.iter().map(|&i| cloud.coords[i]).collect();
    let flat: Vec<f64> = coords_raw.iter().flatten().copied().collect();
    let coords = g.constant(indices.len(), 3, &flat)?;
    Ok(MaskedPoints {
        class_id: mask.class_id,
        features: feats,
        coords,
        coords_raw,
        m: indices.len(),
        d: features.d,
        indices,
    })
}

/// Farthest-point sampling over `m` points of dimension `dim` stored
/// row-major in `points`. The first seed is the point farthest from the
/// centroid; each next seed maximizes its minimum distance to the chosen
/// set. All ties break toward the smaller index.
pub fn fps(points: &[f64], dim: usize, k: usize) -> Result<Vec<usize>> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::Contract(format!(
            "fps: {} values do not form rows of dim {dim}",
            points.len()
        )));
    }
    let m = points.len() / dim;
    if k == 0 || k > m {
        return Err(Error::Contract(format!("fps: K={k} out of range for {m} points")));
    }
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let d2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
    };

    let mut centroid = vec![0.0; dim];
    for i in 0..m {
        for (c, &v) in centroid.iter_mut().zip(row(i)) {
            *c += v;
        }
    }
    for c in centroid.iter_mut() {
        *c /= m as f64;
    }

    let mut seeds = Vec::with_capacity(k);
    let mut best = 0usize;
    let mut best_d = f64::NEG_INFINITY;
    for i in 0..m {
        let d = d2(row(i), &centroid);
        if d > best_d {
            best_d = d;
            best = i;
        }
    }
    seeds.push(best);

    // Minimum squared distance from each point to the chosen seeds.
    let mut min_d2: Vec<f64> = (0..m).map(|i| d2(row(i), row(seeds[0]))).collect();
    while seeds.len() < k {
        let mut best = 0usize;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_d2.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        seeds.push(best);
        for (i, nearest) in min_d2.iter_mut().enumerate() {
            let d = d2(row(i), row(best));
            if d < *nearest {
                *nearest = d;
            }
        }
    }
    Ok(seeds)
}

/// Assigns every point to its nearest seed (ties toward the smaller seed
/// position); each seed is pinned to its own part, so no part is empty.
pub fn assign_to_seeds(points: &[f64], dim: usize, seeds: &[usize]) -> Result<PartAssignment> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::Contract(format!(
            "assign_to_seeds: {} values do not form rows of dim {dim}",
            points.len()
        )));
    }
    let m = points.len() / dim;
    if seeds.is_empty() {
        return Err(Error::Contract("assign_to_seeds: no seeds".into()));
    }
    if let Some(&bad) = seeds.iter().find(|&&s| s >= m) {
        return Err(Error::Contract(format!(
            "assign_to_seeds: seed index {bad} out of range for {m} points"
        )));
    }
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut assignment = Vec::with_capacity(m);
    for i in 0..m {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (part, &s) in seeds.iter().enumerate() {
            let d: f64 = row(i)
                .iter()
                .zip(row(s))
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum();
            if d < best_d {
                best_d = d;
                best = part;
            }
        }
        assignment.push(best);
    }
    for (part, &s) in seeds.iter().enumerate() {
        assignment[s] = part;
    }
    Ok(PartAssignment { seeds: seeds.to_vec(), assignment })
}

/// Runs seed selection + assignment in the configured space, reading the
/// current feature values out of the graph (no gradient flows through
/// the discrete choices). K is clipped to the number of masked points.
pub fn partition_points(
    g: &Graph,
    mp: &MaskedPoints,
    k: usize,
    space: SeedSpace,
) -> Result<PartAssignment> {
    let k = k.min(mp.m).max(1);
    match space {
        SeedSpace::Feature => {
            let feats = g.value(mp.features);
            let seeds = fps(feats, mp.d, k)?;
            assign_to_seeds(feats, mp.d, &seeds)
        }
        SeedSpace::Coordinate => {
            let flat: Vec<f64> = mp.coords_raw.iter().flatten().copied().collect();
            let seeds = fps(&flat, 3, k)?;
            assign_to_seeds(&flat, 3, &seeds)
        }
    }
}

/// Per-part means of features and coordinates: the initial prototypes.
pub fn extract_prototypes(
    g: &mut Graph,
    mp: &MaskedPoints,
    pa: &PartAssignment,
) -> Result<PrototypeSet> {
    if pa.assignment.len() != mp.m {
        return Err(Error::Contract(format!(
            "extract_prototypes: {} assignments for {} points",
            pa.assignment.len(),
            mp.m
        )));
    }
    let k = pa.seeds.len();
    let features = g.scatter_mean(mp.features, &pa.assignment, k)?;
    let coords = g.scatter_mean(mp.coords, &pa.assignment, k)?;
    Ok(PrototypeSet {
        class_id: mp.class_id,
        features,
        coords,
        k,
        stage: PrototypeStage::Initial,
    })
}

/// Creates the assembly MLP weights (`spa.*`): one rectified hidden
/// layer of width D and a linear output of width D.
pub fn init_spa_params(
    feature_dim: usize,
    seed: u64,
    store: &mut crate::params::ParamStore,
) -> Result<()> {
    let d = feature_dim;
    let mut r = rng::stream(seed, 2);
    store.insert_xavier("spa.fc1.weight", d, d, &mut r)?;
    store.insert_zeros("spa.fc1.bias", 1, d)?;
    store.insert_xavier("spa.fc2.weight", d, d, &mut r)?;
    store.insert_zeros("spa.fc2.bias", 1, d)?;
    Ok(())
}

/// Fuses K prototype rows channel-wise: per-channel softmax weights over
/// the K rows, then the weighted sum. Returns `(alpha, z)`.
pub fn fuse_prototypes(g: &mut Graph, r_hat: TensorId) -> Result<(TensorId, TensorId)> {
    let alpha = g.softmax_over_axis(r_hat, Axis::Rows)?;
    let weighted = g.mul(alpha, r_hat)?;
    let z = g.sum_over_axis(weighted, Axis::Rows)?;
    Ok((alpha, z))
}

/// Maps each prototype through the shared MLP, then fuses the K results
/// into a single class prototype by per-channel convex combination.
pub fn assemble(
    g: &mut Graph,
    protos: &PrototypeSet,
    params: &ParamBinding,
) -> Result<AssembleOutput> {
    let w1 = params.id("spa.fc1.weight")?;
    let b1 = params.id("spa.fc1.bias")?;
    let w2 = params.id("spa.fc2.weight")?;
    let b2 = params.id("spa.fc2.bias")?;
    let (k, d) = g.shape(protos.features);

    let h = g.matmul(protos.features, w1)?;
    let b1b = g.broadcast_to(b1, k, d)?;
    let h = g.add(h, b1b)?;
    let h = g.relu(h)?;
    let r_hat = g.matmul(h, w2)?;
    let b2b = g.broadcast_to(b2, k, d)?;
    let r_hat = g.add(r_hat, b2b)?;

    let (alpha, z) = fuse_prototypes(g, r_hat)?;
    Ok(AssembleOutput {
        transformed: PrototypeSet {
            class_id: protos.class_id,
            features: r_hat,
            coords: protos.coords,
            k,
            stage: PrototypeStage::AssembledInput,
        },
        alpha,
        prototype: ClassPrototype { class_id: protos.class_id, z },
    })
}
