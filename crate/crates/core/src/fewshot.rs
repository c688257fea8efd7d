//! Few-shot episodes and the metric-learning forward pass.
//!
//! An episode is an N-way K-shot task: `shot` support blocks that all
//! contain the `way` sampled foreground classes, plus one query block
//! whose labels are remapped to `{0..way}` (0 = background, which also
//! absorbs every non-episode class). Support features become one fused
//! prototype per class — via plain masked averaging or the sparse
//! prototype + globalization pipeline depending on the variant — and
//! query points are classified by temperature-scaled cosine similarity
//! against those prototypes under a cross-entropy objective.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::autograd::{Axis, Graph, TensorId};
use crate::bfg::{po2prg, pr2pog, BfgConfig};
use crate::cloud::{augment, sample_block, ClassMask, LabeledCloud};
use crate::embedder::{embed, init_embedder_params, EmbedderConfig, FeatureMatrix};
use crate::error::{Error, Result};
use crate::params::{ParamBinding, ParamStore};
use crate::prototype::{
    apply_mask, assemble, extract_prototypes, init_spa_params, partition_points, ClassPrototype,
    MaskedPoints, SeedSpace,
};
use crate::rng;

/// Which stages of the prototype pipeline are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Masked average pooling per class (prototypical-network baseline).
    Baseline,
    /// Sparse prototypes + assembly, no globalization.
    Spgen,
    /// Sparse prototypes + point-to-prototype globalization.
    SpgenPo2prg,
    /// The full bidirectional pipeline.
    FullBfg,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::Spgen,
        Variant::SpgenPo2prg,
        Variant::FullBfg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Spgen => "spgen",
            Variant::SpgenPo2prg => "spgen+po2prg",
            Variant::FullBfg => "full_bfg",
        }
    }

    pub fn from_name(name: &str) -> Option<Variant> {
        Variant::ALL.iter().copied().find(|v| v.name() == name)
    }
}

/// Which side of a class split episodes are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Train,
    Test,
}

/// Two disjoint class-label lists: foreground classes seen during
/// training versus those held out for testing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_classes: Vec<usize>,
    pub test_classes: Vec<usize>,
}

impl SplitSpec {
    pub fn new(train_classes: Vec<usize>, test_classes: Vec<usize>) -> Result<Self> {
        if train_classes.is_empty() || test_classes.is_empty() {
            return Err(Error::Config("split sides must be non-empty".into()));
        }
        if train_classes.iter().any(|c| test_classes.contains(c)) {
            return Err(Error::Config("split sides must be disjoint".into()));
        }
        if train_classes.contains(&0) || test_classes.contains(&0) {
            return Err(Error::Config("class 0 is background and cannot be split".into()));
        }
        Ok(SplitSpec { train_classes, test_classes })
    }

    pub fn side(&self, side: Side) -> &[usize] {
        match side {
            Side::Train => &self.train_classes,
            Side::Test => &self.test_classes,
        }
    }
}

/// Episode sampling parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub way: usize,
    pub shot: usize,
    /// Points every sampled block is resized to.
    pub n_points: usize,
    /// Minimum points of each episode class in every support shot.
    pub min_points: usize,
    /// Train-time jitter std (0 disables).
    pub jitter_sigma: f64,
    /// Train-time random rotation about the vertical axis.
    pub rotate: bool,
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.way == 0 || self.shot == 0 {
            return Err(Error::Config("way and shot must be >= 1".into()));
        }
        if self.n_points == 0 {
            return Err(Error::Config("n_points must be >= 1".into()));
        }
        if self.min_points == 0 || self.min_points * self.way > self.n_points {
            return Err(Error::Config(format!(
                "min_points {} is infeasible for way {} at {} points",
                self.min_points, self.way, self.n_points
            )));
        }
        if !(self.jitter_sigma >= 0.0) {
            return Err(Error::Config("jitter_sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// The same configuration with augmentation disabled (evaluation).
    pub fn without_augmentation(&self) -> EpisodeConfig {
        EpisodeConfig { jitter_sigma: 0.0, rotate: false, ..self.clone() }
    }
}

/// One support block with its per-class masks.
///
/// Mask `class_id`s are episode-local: foreground masks carry `1..=way`
/// in episode class order, the background mask carries 0 and covers
/// every point not belonging to an episode class.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportShot {
    pub cloud: LabeledCloud,
    pub fg_masks: Vec<ClassMask>,
    pub bg_mask: ClassMask,
}

/// One N-way K-shot task.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub way: usize,
    pub shot: usize,
    pub support: Vec<SupportShot>,
    /// Query block; labels remapped to `0..=way`.
    pub query: LabeledCloud,
    /// Original dataset labels of the episode classes, in episode order
    /// (episode class `i + 1` is `classes[i]`).
    pub classes: Vec<usize>,
    /// `(base seed, index)` the episode was derived from.
    pub seed: (u64, u64),
}

fn class_count(block: &LabeledCloud, class: usize) -> usize {
    block.labels.iter().filter(|&&l| l == class).count()
}

/// Minimum raw-block points of a class so that a resample to `n_points`
/// keeps `min_points` of it with margin to spare.
fn eligibility_threshold(block_len: usize, cfg: &EpisodeConfig) -> usize {
    let scaled = (1.4 * cfg.min_points as f64 * block_len as f64 / cfg.n_points as f64) as usize;
    scaled.max(cfg.min_points)
}

fn prepare_block(
    block: &LabeledCloud,
    cfg: &EpisodeConfig,
    rng: &mut rng::Rng,
) -> Result<LabeledCloud> {
    let sampled = sample_block(block, cfg.n_points, rng.gen())?;
    if cfg.jitter_sigma > 0.0 || cfg.rotate {
        augment(&sampled, cfg.jitter_sigma, cfg.rotate, rng.gen())
    } else {
        Ok(sampled)
    }
}

/// Builds the episode-local masks of a support cloud, or reports which
/// class fell short.
fn support_masks(
    cloud: &LabeledCloud,
    classes: &[usize],
    min_points: usize,
) -> core::result::Result<(Vec<ClassMask>, ClassMask), String> {
    let mut fg_masks = Vec::with_capacity(classes.len());
    for (slot, &class) in classes.iter().enumerate() {
        let mask: Vec<bool> = cloud.labels.iter().map(|&l| l == class).collect();
        let count = mask.iter().filter(|&&m| m).count();
        if count < min_points {
            return Err(format!(
                "class {class} has {count} support points after sampling, need {min_points}"
            ));
        }
        fg_masks.push(ClassMask::new(slot + 1, mask));
    }
    let bg: Vec<bool> = cloud.labels.iter().map(|l| !classes.contains(l)).collect();
    if !bg.iter().any(|&b| b) {
        return Err("support block has no background points".into());
    }
    Ok((fg_masks, ClassMask::new(0, bg)))
}

/// Samples one deterministic episode: `way` classes from `pool`, then
/// `shot + 1` distinct blocks that contain all of them with margin, with
/// the last block becoming the query (labels remapped, non-episode
/// classes collapsed to background).
pub fn sample_episode(
    blocks: &[LabeledCloud],
    pool: &[usize],
    cfg: &EpisodeConfig,
    base_seed: u64,
    index: u64,
) -> Result<Episode> {
    cfg.validate()?;
    if blocks.is_empty() {
        return Err(Error::Sampling("no blocks to sample episodes from".into()));
    }
    if pool.len() < cfg.way {
        return Err(Error::Sampling(format!(
            "class pool has {} classes, need way = {}",
            pool.len(),
            cfg.way
        )));
    }
    let mut rng = rng::stream(base_seed, index);
    let picks = rand::seq::index::sample(&mut rng, pool.len(), cfg.way);
    let classes: Vec<usize> = picks.iter().map(|i| pool[i]).collect();

    let mut eligible: Vec<usize> = Vec::new();
    for (b, block) in blocks.iter().enumerate() {
        let thr = eligibility_threshold(block.len(), cfg);
        if classes.iter().all(|&c| class_count(block, c) >= thr) {
            eligible.push(b);
        }
    }
    for &class in &classes {
        let thr_any = |b: &LabeledCloud| class_count(b, class) >= eligibility_threshold(b.len(), cfg);
        if !blocks.iter().any(thr_any) {
            return Err(Error::Sampling(format!(
                "no eligible block for class {class} (need >= {} points per block)",
                cfg.min_points
            )));
        }
    }
    if eligible.len() < cfg.shot + 1 {
        return Err(Error::Sampling(format!(
            "only {} blocks contain all of classes {:?} with enough points; need {}",
            eligible.len(),
            classes,
            cfg.shot + 1
        )));
    }

    let mut last_failure = String::new();
    for _attempt in 0..32 {
        let chosen = rand::seq::index::sample(&mut rng, eligible.len(), cfg.shot + 1);
        let chosen: Vec<usize> = chosen.iter().map(|i| eligible[i]).collect();

        let mut support = Vec::with_capacity(cfg.shot);
        let mut ok = true;
        for &b in &chosen[..cfg.shot] {
            let cloud = prepare_block(&blocks[b], cfg, &mut rng)?;
            match support_masks(&cloud, &classes, cfg.min_points) {
                Ok((fg_masks, bg_mask)) => support.push(SupportShot { cloud, fg_masks, bg_mask }),
                Err(reason) => {
                    last_failure = reason;
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }

        let mut query = prepare_block(&blocks[chosen[cfg.shot]], cfg, &mut rng)?;
        query.labels = query
            .labels
            .iter()
            .map(|l| classes.iter().position(|c| c == l).map_or(0, |slot| slot + 1))
            .collect();
        if let Some(slot) = (1..=cfg.way).find(|s| !query.labels.contains(s)) {
            last_failure = format!(
                "class {} absent from the sampled query block",
                classes[slot - 1]
            );
            continue;
        }

        return Ok(Episode {
            way: cfg.way,
            shot: cfg.shot,
            support,
            query,
            classes,
            seed: (base_seed, index),
        });
    }
    Err(Error::Sampling(format!(
        "episode ({base_seed}, {index}) failed after 32 attempts: {last_failure}"
    )))
}

/// Full pipeline configuration of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub embedder: EmbedderConfig,
    pub bfg: BfgConfig,
    /// Sparse prototypes per class (clipped per class to its point count).
    pub k_prototypes: usize,
    pub seed_space: SeedSpace,
    /// Cosine logit temperature.
    pub temperature: f64,
    pub variant: Variant,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.embedder.validate()?;
        self.bfg.validate()?;
        if self.k_prototypes == 0 {
            return Err(Error::Config("k_prototypes must be >= 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            embedder: EmbedderConfig::default(),
            bfg: BfgConfig::default(),
            k_prototypes: 5,
            seed_space: SeedSpace::Feature,
            temperature: 10.0,
            variant: Variant::FullBfg,
        }
    }
}

/// Initializes every learnable parameter of the pipeline (embedder
/// layers and the assembly head) in one store.
pub fn init_params(cfg: &PipelineConfig) -> Result<ParamStore> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    init_embedder_params(&cfg.embedder, &mut store)?;
    init_spa_params(cfg.embedder.feature_dim, cfg.embedder.seed, &mut store)?;
    Ok(store)
}

/// Pools the masked points of one episode class across all support
/// shots into a single point set.
fn pooled_class_points(
    g: &mut Graph,
    ep: &Episode,
    shot_features: &[FeatureMatrix],
    class_slot: usize,
) -> Result<MaskedPoints> {
    let mut pooled: Option<MaskedPoints> = None;
    for (shot, feats) in ep.support.iter().zip(shot_features) {
        let mask = if class_slot == 0 {
            &shot.bg_mask
        } else {
            &shot.fg_masks[class_slot - 1]
        };
        if mask.count() == 0 {
            continue;
        }
        let mp = apply_mask(g, feats, &shot.cloud, mask)?;
        pooled = Some(match pooled {
            None => mp,
            Some(acc) => {
                let features = g.concat_rows(acc.features, mp.features)?;
                let coords = g.concat_rows(acc.coords, mp.coords)?;
                let mut coords_raw = acc.coords_raw;
                coords_raw.extend_from_slice(&mp.coords_raw);
                let mut indices = acc.indices;
                indices.extend_from_slice(&mp.indices);
                MaskedPoints {
                    class_id: class_slot,
                    features,
                    coords,
                    coords_raw,
                    m: acc.m + mp.m,
                    d: acc.d,
                    indices,
                }
            }
        });
    }
    pooled.ok_or_else(|| {
        Error::Contract(format!("episode class slot {class_slot} has no support points"))
    })
}

/// Mean over all rows as a `1 x D` tensor.
fn masked_mean(g: &mut Graph, mp: &MaskedPoints) -> Result<TensorId> {
    let assignment = vec![0usize; mp.m];
    g.scatter_mean(mp.features, &assignment, 1)
}

/// Builds one fused prototype per episode class (background first), via
/// the path selected by `cfg.variant`.
pub fn support_prototypes(
    g: &mut Graph,
    ep: &Episode,
    params: &ParamBinding,
    cfg: &PipelineConfig,
) -> Result<Vec<ClassPrototype>> {
    cfg.validate()?;
    let mut shot_features = Vec::with_capacity(ep.support.len());
    for shot in &ep.support {
        shot_features.push(embed(g, &shot.cloud, &cfg.embedder, params)?);
    }
    let mut out = Vec::with_capacity(ep.way + 1);
    for slot in 0..=ep.way {
        let mut mp = pooled_class_points(g, ep, &shot_features, slot)?;
        mp.class_id = slot;
        let z = match cfg.variant {
            Variant::Baseline => ClassPrototype { class_id: slot, z: masked_mean(g, &mp)? },
            Variant::Spgen | Variant::SpgenPo2prg | Variant::FullBfg => {
                let pa = partition_points(g, &mp, cfg.k_prototypes, cfg.seed_space)?;
                let mut protos = extract_prototypes(g, &mp, &pa)?;
                if matches!(cfg.variant, Variant::SpgenPo2prg | Variant::FullBfg) {
                    protos = po2prg(g, &mp, &protos, &cfg.bfg)?.protos;
                }
                if matches!(cfg.variant, Variant::FullBfg) {
                    protos = pr2pog(g, &mp, &protos, &cfg.bfg)?.protos;
                }
                assemble(g, &protos, params)?.prototype
            }
        };
        out.push(z);
    }
    Ok(out)
}

/// Classifier output for one query block.
pub struct ClassifyOutput {
    /// `N x (way+1)` temperature-scaled cosine logits.
    pub logits: TensorId,
    /// Argmax class per point; ties resolve to the smallest class.
    pub predictions: Vec<usize>,
    /// Number of norms that hit the 1e-12 clamp.
    pub clamp_warnings: usize,
}

/// Scores every query point against every class prototype with
/// temperature-scaled cosine similarity.
pub fn classify_query(
    g: &mut Graph,
    query: &FeatureMatrix,
    prototypes: &[ClassPrototype],
    temperature: f64,
) -> Result<ClassifyOutput> {
    if prototypes.is_empty() {
        return Err(Error::Contract("classify_query: no prototypes".into()));
    }
    let mut z = prototypes[0].z;
    for p in &prototypes[1..] {
        z = g.concat_rows(z, p.z)?;
    }
    let c = prototypes.len();

    let f_norms = g.l2_row_norms(query.features)?;
    let z_norms = g.l2_row_norms(z)?;
    let clamp_warnings = g
        .value(f_norms)
        .iter()
        .chain(g.value(z_norms))
        .filter(|&&v| v < 1e-12)
        .count();
    let f_norms = g.clamp_min(f_norms, 1e-12)?;
    let z_norms = g.clamp_min(z_norms, 1e-12)?;

    let zt = g.transpose(z)?;
    let dots = g.matmul(query.features, zt)?;
    let znt = g.transpose(z_norms)?;
    let denom_f = g.broadcast_to(f_norms, query.n, c)?;
    let denom_z = g.broadcast_to(znt, query.n, c)?;
    let denom = g.mul(denom_f, denom_z)?;
    let cos = g.div(dots, denom)?;
    let logits = g.scale(cos, temperature)?;

    let lv = g.value(logits);
    let predictions = (0..query.n)
        .map(|n| {
            let row = &lv[n * c..(n + 1) * c];
            let mut best = 0usize;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    Ok(ClassifyOutput { logits, predictions, clamp_warnings })
}

/// Mean cross-entropy of the logits against integer labels.
pub fn episode_loss(g: &mut Graph, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
    let (n, c) = g.shape(logits);
    if labels.len() != n {
        return Err(Error::Contract(format!(
            "episode_loss: {} labels for {n} logit rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Contract(format!(
            "episode_loss: label {bad} out of range for {c} classes"
        )));
    }
    // Max-shifted log-softmax; the shift cancels in the gradient.
    let row_max = g.max_over_axis(logits, Axis::Cols)?;
    let row_max = g.broadcast_to(row_max, n, c)?;
    let shifted = g.sub(logits, row_max)?;
    let exps = g.exp(shifted)?;
    let sums = g.sum_over_axis(exps, Axis::Cols)?;
    let log_sums = g.log(sums)?; // n x 1

    let mut onehot = vec![0.0; n * c];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * c + l] = 1.0;
    }
    let onehot = g.constant(n, c, &onehot)?;
    let picked = g.mul(shifted, onehot)?;
    let picked = g.sum_over_axis(picked, Axis::Cols)?; // n x 1
    let per_point = g.sub(log_sums, picked)?;
    let total = g.sum_all(per_point)?;
    g.scale(total, 1.0 / n as f64)
}

/// Everything produced by one episode forward pass.
pub struct EpisodeForward {
    pub loss: TensorId,
    pub logits: TensorId,
    pub predictions: Vec<usize>,
    pub clamp_warnings: usize,
}

/// Support prototypes -> query classification -> cross-entropy, in one
/// shared graph.
pub fn forward_episode(
    g: &mut Graph,
    ep: &Episode,
    params: &ParamBinding,
    cfg: &PipelineConfig,
) -> Result<EpisodeForward> {
    let prototypes = support_prototypes(g, ep, params, cfg)?;
    let fq = embed(g, &ep.query, &cfg.embedder, params)?;
    let out = classify_query(g, &fq, &prototypes, cfg.temperature)?;
    let loss = episode_loss(g, out.logits, &ep.query.labels)?;
    Ok(EpisodeForward {
        loss,
        logits: out.logits,
        predictions: out.predictions,
        clamp_warnings: out.clamp_warnings,
    })
}
