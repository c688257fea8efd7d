//! Similarity kernels and bidirectional globalization.
//!
//! Point-prototype affinity is `f = exp(-dist)` where `dist` is either a
//! scale-normalized L2 distance over features plus coordinates, or a
//! concentration-scaled inner product. Two operators are built on it:
//!
//! * point-to-prototype ([`po2prg`]): every prototype becomes an
//!   affinity-weighted average over *all* class points, so each part
//!   summary absorbs instance-wide ("global") context;
//! * prototype-to-point ([`pr2pog`]): every point feature is augmented
//!   with its affinity-weighted prototype mixture (residual add), and
//!   prototypes are then re-aggregated from the updated points.
//!
//! All weight normalizations are computed as softmax over the negated
//! distances, which is algebraically `exp(-d) / sum exp(-d)` but immune
//! to overflow when distances get large.

use alloc::format;

use crate::autograd::{Axis, Graph, TensorId};
use crate::error::{Error, Result};
use crate::prototype::{MaskedPoints, PrototypeSet, PrototypeStage};

/// Distance family used inside the similarity kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    L2Norm,
    InnerProduct,
}

impl Measure {
    pub fn name(self) -> &'static str {
        match self {
            Measure::L2Norm => "l2norm",
            Measure::InnerProduct => "inner_product",
        }
    }

    pub fn from_name(name: &str) -> Option<Measure> {
        match name {
            "l2norm" => Some(Measure::L2Norm),
            "inner_product" => Some(Measure::InnerProduct),
            _ => None,
        }
    }

    /// Compact label used in sweep tables ("N" / "IP").
    pub fn short_name(self) -> &'static str {
        match self {
            Measure::L2Norm => "N",
            Measure::InnerProduct => "IP",
        }
    }
}

/// Sign convention of the inner-product distance.
///
/// `Literal` uses `dist = +xi * dot`, so *better-aligned* prototypes read
/// as *farther* and get lower weights. `Aligned` flips the sign so that
/// higher alignment means higher weight, matching the stated intent of
/// the weighting; it is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpSign {
    Literal,
    Aligned,
}

impl IpSign {
    pub fn name(self) -> &'static str {
        match self {
            IpSign::Literal => "literal",
            IpSign::Aligned => "aligned",
        }
    }

    pub fn from_name(name: &str) -> Option<IpSign> {
        match name {
            "literal" => Some(IpSign::Literal),
            "aligned" => Some(IpSign::Aligned),
            _ => None,
        }
    }

    fn factor(self) -> f64 {
        match self {
            IpSign::Literal => 1.0,
            IpSign::Aligned => -1.0,
        }
    }
}

/// Parameters of one similarity evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityConfig {
    pub measure: Measure,
    /// Scale factor of the normalized feature distance.
    pub lambda: f64,
    /// Concentration factor of the inner-product distance.
    pub xi: f64,
    pub ip_sign: IpSign,
    /// Lower clamp for the per-point feature maximum in the L2 measure.
    pub eps_max_clamp: f64,
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.xi > 0.0) {
            return Err(Error::Config(format!("xi must be > 0, got {}", self.xi)));
        }
        if !(self.eps_max_clamp > 0.0) {
            return Err(Error::Config(format!(
                "eps_max_clamp must be > 0, got {}",
                self.eps_max_clamp
            )));
        }
        Ok(())
    }
}

/// Distance measures of the two globalization stages plus their shared
/// kernel parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgConfig {
    /// Measure of the point-to-prototype stage.
    pub measure1: Measure,
    /// Measure of the prototype-to-point stage.
    pub measure2: Measure,
    pub lambda: f64,
    pub xi: f64,
    pub ip_sign: IpSign,
    pub eps_max_clamp: f64,
}

impl Default for BfgConfig {
    fn default() -> Self {
        BfgConfig {
            measure1: Measure::L2Norm,
            measure2: Measure::InnerProduct,
            lambda: 0.85,
            xi: 0.5,
            ip_sign: IpSign::Aligned,
            eps_max_clamp: 1e-6,
        }
    }
}

impl BfgConfig {
    pub fn sim1(&self) -> SimilarityConfig {
        SimilarityConfig {
            measure: self.measure1,
            lambda: self.lambda,
            xi: self.xi,
            ip_sign: self.ip_sign,
            eps_max_clamp: self.eps_max_clamp,
        }
    }

    pub fn sim2(&self) -> SimilarityConfig {
        SimilarityConfig { measure: self.measure2, ..self.sim1() }
    }

    pub fn validate(&self) -> Result<()> {
        self.sim1().validate()
    }
}

/// Normalization direction of a weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightAxis {
    /// Each prototype's column of point weights sums to 1.
    OverPoints,
    /// Each point's row of prototype weights sums to 1.
    OverPrototypes,
}

/// An `m x K` nonnegative weight matrix normalized along one axis.
#[derive(Debug, Clone, Copy)]
pub struct WeightMatrix {
    pub values: TensorId,
    pub axis: WeightAxis,
}

impl WeightMatrix {
    /// Checks entries lie in `(0, 1]` and normalized slices sum to 1
    /// within `1e-9`.
    pub fn validate(&self, g: &Graph) -> Result<()> {
        let (m, k) = g.shape(self.values);
        let v = g.value(self.values);
        if let Some(i) = v.iter().position(|&x| !(x > 0.0 && x <= 1.0)) {
            return Err(Error::Contract(format!(
                "weight entry {i} = {} outside (0, 1]",
                v[i]
            )));
        }
        let (slices, len, stride, step) = match self.axis {
            WeightAxis::OverPoints => (k, m, 1usize, k),
            WeightAxis::OverPrototypes => (m, k, k, 1usize),
        };
        for s in 0..slices {
            let sum: f64 = (0..len).map(|i| v[s * stride + i * step]).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Contract(format!(
                    "weight slice {s} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// Squared Euclidean row-pair distances `|a_n - b_k|^2` as an `m x K`
/// tensor, clamped at zero against cancellation.
fn pairwise_sq_dists(g: &mut Graph, a: TensorId, b: TensorId) -> Result<TensorId> {
    let (m, _) = g.shape(a);
    let (k, _) = g.shape(b);
    let a2 = g.mul(a, a)?;
    let a2 = g.sum_over_axis(a2, Axis::Cols)?; // m x 1
    let a2 = g.broadcast_to(a2, m, k)?;
    let b2 = g.mul(b, b)?;
    let b2 = g.sum_over_axis(b2, Axis::Cols)?; // k x 1
    let b2 = g.transpose(b2)?; // 1 x k
    let b2 = g.broadcast_to(b2, m, k)?;
    let bt = g.transpose(b)?;
    let cross = g.matmul(a, bt)?;
    let cross = g.scale(cross, -2.0)?;
    let sum = g.add(a2, b2)?;
    let sum = g.add(sum, cross)?;
    g.clamp_min(sum, 0.0)
}

/// The distance matrix `dist(n, k)` between `m` points and `K`
/// prototypes under `cfg`, differentiable through features and
/// prototypes.
pub fn distance_matrix(
    g: &mut Graph,
    features: TensorId,
    protos: TensorId,
    coords: TensorId,
    proto_coords: TensorId,
    cfg: &SimilarityConfig,
) -> Result<TensorId> {
    cfg.validate()?;
    let (m, d) = g.shape(features);
    let (k, d2) = g.shape(protos);
    let (mc, three) = g.shape(coords);
    let (kc, three2) = g.shape(proto_coords);
    if d != d2 || m != mc || k != kc || three != 3 || three2 != 3 {
        return Err(Error::Contract(format!(
            "distance_matrix: inconsistent shapes {m}x{d}, {k}x{d2}, {mc}x{three}, {kc}x{three2}"
        )));
    }
    match cfg.measure {
        Measure::L2Norm => {
            // (lambda / max_ch F_n) * |F_n - mu_k|^2 + |J_n - mu_J,k|^2,
            // then a square root over the sum.
            let row_max = g.max_over_axis(features, Axis::Cols)?; // m x 1
            let row_max = g.clamp_min(row_max, cfg.eps_max_clamp)?;
            let lam = g.scalar(cfg.lambda)?;
            let lam = g.broadcast_to(lam, m, 1)?;
            let inv = g.div(lam, row_max)?; // m x 1
            let inv = g.broadcast_to(inv, m, k)?;
            let d_f = pairwise_sq_dists(g, features, protos)?;
            let d_f = g.mul(inv, d_f)?;
            let d_j = pairwise_sq_dists(g, coords, proto_coords)?;
            let total = g.add(d_f, d_j)?;
            g.sqrt(total)
        }
        Measure::InnerProduct => {
            let pt = g.transpose(protos)?;
            let dot_f = g.matmul(features, pt)?;
            let ct = g.transpose(proto_coords)?;
            let dot_j = g.matmul(coords, ct)?;
            let dot = g.add(dot_f, dot_j)?;
            g.scale(dot, cfg.ip_sign.factor() * cfg.xi)
        }
    }
}

/// Similarity values `f = exp(-dist)` as an `m x K` tensor. Strictly
/// positive; a non-finite exponential surfaces as a numeric error.
pub fn similarity(
    g: &mut Graph,
    features: TensorId,
    protos: TensorId,
    coords: TensorId,
    proto_coords: TensorId,
    cfg: &SimilarityConfig,
) -> Result<TensorId> {
    let dist = distance_matrix(g, features, protos, coords, proto_coords, cfg)?;
    let neg = g.negate(dist)?;
    g.exp(neg)
}

fn normalized_weights(
    g: &mut Graph,
    dist: TensorId,
    axis: WeightAxis,
) -> Result<WeightMatrix> {
    let neg = g.negate(dist)?;
    let soft_axis = match axis {
        WeightAxis::OverPoints => Axis::Rows,
        WeightAxis::OverPrototypes => Axis::Cols,
    };
    let values = g.softmax_over_axis(neg, soft_axis)?;
    Ok(WeightMatrix { values, axis })
}

/// Output of the point-to-prototype stage.
#[derive(Debug, Clone)]
pub struct Po2PrgOutput {
    pub protos: PrototypeSet,
    /// Point weights per prototype (columns sum to 1).
    pub weights: WeightMatrix,
}

/// Rebuilds each prototype as the similarity-weighted average of *all*
/// masked point features; prototype coordinates are kept.
pub fn po2prg(
    g: &mut Graph,
    masked: &MaskedPoints,
    protos: &PrototypeSet,
    cfg: &BfgConfig,
) -> Result<Po2PrgOutput> {
    if masked.class_id != protos.class_id {
        return Err(Error::Contract(format!(
            "po2prg: class {} points vs class {} prototypes",
            masked.class_id, protos.class_id
        )));
    }
    let dist = distance_matrix(
        g,
        masked.features,
        protos.features,
        masked.coords,
        protos.coords,
        &cfg.sim1(),
    )?;
    let weights = normalized_weights(g, dist, WeightAxis::OverPoints)?;
    let wt = g.transpose(weights.values)?; // K x m
    let upsilon = g.matmul(wt, masked.features)?; // K x D
    Ok(Po2PrgOutput {
        protos: PrototypeSet {
            class_id: protos.class_id,
            features: upsilon,
            coords: protos.coords,
            k: protos.k,
            stage: PrototypeStage::Po2Prg,
        },
        weights,
    })
}

/// Output of the prototype-to-point stage.
#[derive(Debug, Clone)]
pub struct Pr2PogOutput {
    /// Updated point features (`m x D`): original plus the weighted
    /// prototype mixture.
    pub updated_features: TensorId,
    pub protos: PrototypeSet,
    /// Prototype weights per point (rows sum to 1).
    pub point_weights: WeightMatrix,
    /// Point weights per prototype over the updated features (columns
    /// sum to 1).
    pub proto_weights: WeightMatrix,
}

/// Pushes prototype context back into every point (residual add of each
/// point's prototype mixture), then re-aggregates prototypes from the
/// updated points. Prototype coordinates pass through unchanged.
pub fn pr2pog(
    g: &mut Graph,
    masked: &MaskedPoints,
    protos: &PrototypeSet,
    cfg: &BfgConfig,
) -> Result<Pr2PogOutput> {
    if masked.class_id != protos.class_id {
        return Err(Error::Contract(format!(
            "pr2pog: class {} points vs class {} prototypes",
            masked.class_id, protos.class_id
        )));
    }
    let sim2 = cfg.sim2();
    let dist = distance_matrix(
        g,
        masked.features,
        protos.features,
        masked.coords,
        protos.coords,
        &sim2,
    )?;
    let point_weights = normalized_weights(g, dist, WeightAxis::OverPrototypes)?;
    let mixture = g.matmul(point_weights.values, protos.features)?; // m x D
    let updated = g.add(masked.features, mixture)?;

    let dist2 = distance_matrix(g, updated, protos.features, masked.coords, protos.coords, &sim2)?;
    let proto_weights = normalized_weights(g, dist2, WeightAxis::OverPoints)?;
    let wt = g.transpose(proto_weights.values)?;
    let r = g.matmul(wt, updated)?;
    Ok(Pr2PogOutput {
        updated_features: updated,
        protos: PrototypeSet {
            class_id: protos.class_id,
            features: r,
            coords: protos.coords,
            k: protos.k,
            stage: PrototypeStage::Pr2Pog,
        },
        point_weights,
        proto_weights,
    })
}
