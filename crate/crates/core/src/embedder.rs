//! Weight-shared point feature embedding: a small edge-convolution
//! network over a static k-nearest-neighbor graph.
//!
//! Each block is embedded independently: coordinates are centered on the
//! block centroid (optionally concatenated with colors), two edge
//! convolutions aggregate local geometry, and a per-point head maps to
//! the final feature width. Support and query branches call [`embed`]
//! with the same parameters, so features live in one shared space.
//! The trailing rectifier keeps features nonnegative, which the
//! scale-normalized distance downstream relies on.

use alloc::format;
use alloc::vec::Vec;

use crate::autograd::{Graph, TensorId};
use crate::cloud::LabeledCloud;
use crate::error::{Error, Result};
use crate::params::{ParamBinding, ParamStore};
use crate::rng;

/// Architecture of the embedding network.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderConfig {
    /// 3 (xyz) or 6 (xyz + rgb).
    pub input_channels: usize,
    /// Output widths of the edge-convolution layers.
    pub edgeconv_widths: Vec<usize>,
    /// Neighbors per point in the kNN graph.
    pub knn_k: usize,
    /// Widths of the per-point head; the last entry is the feature dim.
    pub head_widths: Vec<usize>,
    /// Final feature dimensionality D (must equal the last head width).
    pub feature_dim: usize,
    /// Weight initialization seed.
    pub seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            input_channels: 6,
            edgeconv_widths: alloc::vec![32, 64],
            knn_k: 16,
            head_widths: alloc::vec![64, 64],
            feature_dim: 64,
            seed: 0,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels != 3 && self.input_channels != 6 {
            return Err(Error::Config(format!(
                "input_channels must be 3 or 6, got {}",
                self.input_channels
            )));
        }
        if self.edgeconv_widths.is_empty() || self.head_widths.is_empty() {
            return Err(Error::Config("layer width lists must be non-empty".into()));
        }
        if self.edgeconv_widths.iter().chain(&self.head_widths).any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be >= 1".into()));
        }
        if self.knn_k == 0 {
            return Err(Error::Config("knn_k must be >= 1".into()));
        }
        if *self.head_widths.last().unwrap() != self.feature_dim {
            return Err(Error::Config(format!(
                "last head width {} must equal feature_dim {}",
                self.head_widths.last().unwrap(),
                self.feature_dim
            )));
        }
        Ok(())
    }
}

/// Per-point features of one block inside a graph.
#[derive(Debug, Clone, Copy)]
pub struct FeatureMatrix {
    pub features: TensorId,
    pub n: usize,
    pub d: usize,
}

/// Creates all embedder weights (`embedder.*`) in `store`, drawing from
/// a dedicated stream of `seed` so adding other modules later does not
/// reshuffle these draws.
pub fn init_embedder_params(cfg: &EmbedderConfig, store: &mut ParamStore) -> Result<()> {
    cfg.validate()?;
    let mut r = rng::stream(cfg.seed, 1);
    let mut c_in = cfg.input_channels;
    for (l, &c_out) in cfg.edgeconv_widths.iter().enumerate() {
        store.insert_xavier(&format!("embedder.edgeconv{l}.weight"), 2 * c_in, c_out, &mut r)?;
        store.insert_zeros(&format!("embedder.edgeconv{l}.bias"), 1, c_out)?;
        c_in = c_out;
    }
    for (l, &c_out) in cfg.head_widths.iter().enumerate() {
        store.insert_xavier(&format!("embedder.head{l}.weight"), c_in, c_out, &mut r)?;
        store.insert_zeros(&format!("embedder.head{l}.bias"), 1, c_out)?;
        c_in = c_out;
    }
    Ok(())
}

/// The `k` nearest points to each point by Euclidean distance, excluding
/// the point itself; ties broken toward the smaller index. Row `i` is
/// sorted by (distance, index).
pub fn knn_graph(coords: &[[f64; 3]], k: usize) -> Result<Vec<usize>> {
    let n = coords.len();
    if k >= n {
        return Err(Error::Contract(format!(
            "knn_graph needs k < n, got k={k} with {n} points"
        )));
    }
    let mut out = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        cand.clear();
        let pi = coords[i];
        for (j, pj) in coords.iter().enumerate() {
            if j == i {
                continue;
            }
            let (dx, dy, dz) = (pi[0] - pj[0], pi[1] - pj[1], pi[2] - pj[2]);
            cand.push((dx * dx + dy * dy + dz * dz, j));
        }
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
        };
        cand.select_nth_unstable_by(k - 1, cmp);
        cand[..k].sort_unstable_by(cmp);
        out.extend(cand[..k].iter().map(|&(_, j)| j));
    }
    Ok(out)
}

/// One edge convolution: for each point, the edge feature
/// `[f_i, f_j - f_i]` of every neighbor passes through a shared affine
/// layer + rectifier, then a max over the neighbors.
pub fn edgeconv(
    g: &mut Graph,
    features: TensorId,
    neighbors: &[usize],
    k: usize,
    weight: TensorId,
    bias: TensorId,
) -> Result<TensorId> {
    let (n, _c) = g.shape(features);
    if neighbors.len() != n * k {
        return Err(Error::Contract(format!(
            "edgeconv: {} neighbor entries for {n} points with k={k}",
            neighbors.len()
        )));
    }
    let centers: Vec<usize> = (0..n).flat_map(|i| core::iter::repeat_n(i, k)).collect();
    let f_center = g.gather_rows(features, &centers)?;
    let f_neigh = g.gather_rows(features, neighbors)?;
    let diff = g.sub(f_neigh, f_center)?;
    let edge = g.concat_cols(f_center, diff)?;
    let h = affine(g, edge, weight, bias)?;
    let h = g.relu(h)?;
    g.max_pool_rows(h, k)
}

fn affine(g: &mut Graph, x: TensorId, weight: TensorId, bias: TensorId) -> Result<TensorId> {
    let y = g.matmul(x, weight)?;
    let (rows, cols) = g.shape(y);
    let b = g.broadcast_to(bias, rows, cols)?;
    g.add(y, b)
}

/// Embeds one block into an `N x D` feature matrix.
///
/// Coordinates are centered on the block centroid before entering the
/// network; the caller keeps the raw coordinates for any geometry terms.
pub fn embed(
    g: &mut Graph,
    cloud: &LabeledCloud,
    cfg: &EmbedderConfig,
    params: &ParamBinding,
) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let n = cloud.len();
    if n < cfg.knn_k + 1 {
        return Err(Error::Contract(format!(
            "embed needs at least knn_k+1 = {} points, got {n}",
            cfg.knn_k + 1
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mut centroid = [0.0f64; 3];
    for p in &cloud.coords {
        for (c, v) in centroid.iter_mut().zip(p) {
            *c += v * inv_n;
        }
    }
    let mut input = Vec::with_capacity(n * cfg.input_channels);
    for i in 0..n {
        for (coord, center) in cloud.coords[i].iter().zip(&centroid) {
            input.push(coord - center);
        }
        if cfg.input_channels == 6 {
            input.extend_from_slice(&cloud.colors[i]);
        }
    }
    let mut x = g.constant(n, cfg.input_channels, &input)?;

    let neighbors = knn_graph(&cloud.coords, cfg.knn_k)?;
    for l in 0..cfg.edgeconv_widths.len() {
        let w = params.id(&format!("embedder.edgeconv{l}.weight"))?;
        let b = params.id(&format!("embedder.edgeconv{l}.bias"))?;
        x = edgeconv(g, x, &neighbors, cfg.knn_k, w, b)?;
    }
    for l in 0..cfg.head_widths.len() {
        let w = params.id(&format!("embedder.head{l}.weight"))?;
        let b = params.id(&format!("embedder.head{l}.bias"))?;
        x = affine(g, x, w, b)?;
        x = g.relu(x)?;
    }
    Ok(FeatureMatrix { features: x, n, d: cfg.feature_dim })
}
