//! Run configuration: one TOML file with `[data]`, `[embedder]`,
//! `[bfg]`, `[trainer]`, and `[eval]` sections. Unknown keys are
//! rejected; every key has a documented default, and `--help` prints
//! the full default file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use bfg_core::bfg::{BfgConfig, IpSign, Measure};
use bfg_core::embedder::EmbedderConfig;
use bfg_core::fewshot::{EpisodeConfig, PipelineConfig, SplitSpec, Variant};
use bfg_core::prototype::SeedSpace;
use bfg_core::synth::{PrimitiveKind, SceneSpec};
use bfg_core::trainer::TrainerConfig;

use crate::error::{CliError, Result};

/// Data generation, block sampling, and episode layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Number of synthetic scenes in the dataset.
    pub scenes: u64,
    pub points_per_scene: usize,
    /// Scene footprint in meters (square).
    pub extent: f64,
    /// Foreground classes hosted by each scene; scenes cycle through the
    /// class subsets of this size in a fixed order, so blocks stay
    /// dominated by a few classes the way captured rooms are.
    pub classes_per_scene: usize,
    /// Instances of each hosted class per scene.
    pub instances_per_class: usize,
    /// Fraction of scene points on the background ground plane.
    pub background_fraction: f64,
    /// Std of the Gaussian surface deformation, meters.
    pub deform_amplitude: f64,
    /// Instance size range [lo, hi] in meters, applied to every class.
    pub scale_range: [f64; 2],
    /// Dataset seed: scene seeds and manifest derive from it.
    pub seed: u64,
    /// Grid cell size for block splitting, meters.
    pub block_size: f64,
    /// Points every sampled block is resized to.
    pub n_points: usize,
    /// Minimum points per episode class in each support shot.
    pub min_points: usize,
    pub way: usize,
    pub shot: usize,
    /// Train-time jitter std (evaluation always disables augmentation).
    pub jitter_sigma: f64,
    /// Train-time random rotation about the vertical axis.
    pub rotate: bool,
    /// Foreground class names of fold s0 (fold s1 swaps the sides).
    pub split_s0: Vec<String>,
    pub split_s1: Vec<String>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            scenes: 12,
            points_per_scene: 8192,
            extent: 4.0,
            classes_per_scene: 2,
            instances_per_class: 2,
            background_fraction: 0.3,
            deform_amplitude: 0.02,
            scale_range: [1.0, 2.4],
            seed: 0,
            block_size: 4.0,
            n_points: 512,
            min_points: 100,
            way: 2,
            shot: 1,
            jitter_sigma: 0.01,
            rotate: true,
            split_s0: vec!["box".into(), "cylinder".into()],
            split_s1: vec!["plane".into(), "wedge".into()],
        }
    }
}

/// Point-feature network layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderSection {
    /// 3 (xyz) or 6 (xyz + rgb).
    pub input_channels: usize,
    pub edgeconv_widths: Vec<usize>,
    pub knn_k: usize,
    pub head_widths: Vec<usize>,
    pub feature_dim: usize,
    /// Weight initialization seed.
    pub seed: u64,
}

impl Default for EmbedderSection {
    fn default() -> Self {
        let d = EmbedderConfig::default();
        EmbedderSection {
            input_channels: d.input_channels,
            edgeconv_widths: d.edgeconv_widths,
            knn_k: d.knn_k,
            head_widths: d.head_widths,
            feature_dim: d.feature_dim,
            seed: d.seed,
        }
    }
}

/// Globalization and prototype settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BfgSection {
    /// Distance of the point-to-prototype stage: "l2norm" or "inner_product".
    pub measure1: String,
    /// Distance of the prototype-to-point stage: "l2norm" or "inner_product".
    pub measure2: String,
    /// Feature-term scale of the norm distance.
    pub lambda: f64,
    /// Scale of the inner-product distance.
    pub xi: f64,
    /// "aligned" (higher alignment = higher weight) or "literal".
    pub ip_sign: String,
    /// Sparse prototypes per class.
    pub k_prototypes: usize,
    /// Part seeding space: "feature" or "coordinate".
    pub seed_space: String,
    /// Cosine logit temperature.
    pub temperature: f64,
    /// "baseline", "spgen", "spgen+po2prg", or "full_bfg".
    pub variant: String,
}

impl Default for BfgSection {
    fn default() -> Self {
        let d = BfgConfig::default();
        BfgSection {
            measure1: d.measure1.name().into(),
            measure2: d.measure2.name().into(),
            lambda: d.lambda,
            xi: d.xi,
            ip_sign: d.ip_sign.name().into(),
            k_prototypes: 5,
            seed_space: "feature".into(),
            temperature: 10.0,
            variant: Variant::FullBfg.name().into(),
        }
    }
}

/// Optimization schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    pub iterations: u64,
    pub lr_embedder: f64,
    pub lr_rest: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Episode stream seed for training.
    pub seed: u64,
    /// Periodic checkpoint interval in iterations (0 = final only).
    pub checkpoint_every: u64,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let d = TrainerConfig::default();
        TrainerSection {
            iterations: d.iterations,
            lr_embedder: d.lr_embedder,
            lr_rest: d.lr_rest,
            beta1: d.beta1,
            beta2: d.beta2,
            epsilon: d.epsilon,
            seed: d.seed,
            checkpoint_every: 100,
        }
    }
}

/// Evaluation episode stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub episodes: usize,
    /// Episode stream seed for evaluation (fixed episodes pair variants).
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { episodes: 100, seed: 777 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub embedder: EmbedderSection,
    pub bfg: BfgSection,
    pub trainer: TrainerSection,
    pub eval: EvalSection,
}

/// The two cross-validation folds over the class universe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fold {
    S0,
    S1,
}

impl Fold {
    pub fn name(self) -> &'static str {
        match self {
            Fold::S0 => "s0",
            Fold::S1 => "s1",
        }
    }

    pub fn from_name(name: &str) -> Result<Fold> {
        match name {
            "s0" => Ok(Fold::S0),
            "s1" => Ok(Fold::S1),
            other => Err(CliError::Config(format!(
                "unknown split `{other}` (expected s0 or s1)"
            ))),
        }
    }
}

fn class_id(name: &str) -> Result<usize> {
    PrimitiveKind::ALL
        .iter()
        .position(|k| k.name() == name)
        .map(|p| p + 1)
        .ok_or_else(|| {
            CliError::Config(format!(
                "unknown class `{name}` (expected one of {})",
                PrimitiveKind::ALL.map(|k| k.name()).join(", ")
            ))
        })
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        toml::from_str(&text).map_err(|e| {
            CliError::Config(format!("config {}: {e}", path.display()).replace('\n', " "))
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// The recipe of scene number `scene_index`: the class universe is
    /// always the full primitive set (so labels and colors stay globally
    /// consistent), but each scene instantiates only one subset of
    /// `classes_per_scene` classes, cycling through the subsets in
    /// lexicographic order so every subset is covered evenly.
    pub fn scene_spec(&self, scene_seed: u64, scene_index: u64) -> Result<SceneSpec> {
        let d = &self.data;
        let n = PrimitiveKind::ALL.len();
        let subsets = k_subsets(n, d.classes_per_scene);
        let subset = &subsets[(scene_index % subsets.len() as u64) as usize];
        let mut instances = vec![0usize; n];
        for &ci in subset {
            instances[ci] = d.instances_per_class;
        }
        Ok(SceneSpec {
            classes: PrimitiveKind::ALL.to_vec(),
            scale_ranges: vec![(d.scale_range[0], d.scale_range[1]); n],
            deform_amplitude: d.deform_amplitude,
            points_per_scene: d.points_per_scene,
            extent: d.extent,
            instances,
            background_fraction: d.background_fraction,
            seed: scene_seed,
        })
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        let d = &self.data;
        EpisodeConfig {
            way: d.way,
            shot: d.shot,
            n_points: d.n_points,
            min_points: d.min_points,
            jitter_sigma: d.jitter_sigma,
            rotate: d.rotate,
        }
    }

    /// The class split of one fold: s0 trains on `split_s0` and tests
    /// on `split_s1`; s1 swaps the sides.
    pub fn split(&self, fold: Fold) -> Result<SplitSpec> {
        let s0: Vec<usize> = self.data.split_s0.iter().map(|n| class_id(n)).collect::<Result<_>>()?;
        let s1: Vec<usize> = self.data.split_s1.iter().map(|n| class_id(n)).collect::<Result<_>>()?;
        let (train, test) = match fold {
            Fold::S0 => (s0, s1),
            Fold::S1 => (s1, s0),
        };
        SplitSpec::new(train, test).map_err(CliError::from)
    }

    pub fn embedder_config(&self) -> EmbedderConfig {
        let e = &self.embedder;
        EmbedderConfig {
            input_channels: e.input_channels,
            edgeconv_widths: e.edgeconv_widths.clone(),
            knn_k: e.knn_k,
            head_widths: e.head_widths.clone(),
            feature_dim: e.feature_dim,
            seed: e.seed,
        }
    }

    pub fn bfg_config(&self) -> Result<BfgConfig> {
        let b = &self.bfg;
        let measure = |name: &str, key: &str| -> Result<Measure> {
            Measure::from_name(name).ok_or_else(|| {
                CliError::Config(format!(
                    "{key} must be `l2norm` or `inner_product`, got `{name}`"
                ))
            })
        };
        let ip_sign = IpSign::from_name(&b.ip_sign).ok_or_else(|| {
            CliError::Config(format!(
                "ip_sign must be `aligned` or `literal`, got `{}`",
                b.ip_sign
            ))
        })?;
        Ok(BfgConfig {
            measure1: measure(&b.measure1, "measure1")?,
            measure2: measure(&b.measure2, "measure2")?,
            lambda: b.lambda,
            xi: b.xi,
            ip_sign,
            ..BfgConfig::default()
        })
    }

    pub fn variant(&self) -> Result<Variant> {
        Variant::from_name(&self.bfg.variant).ok_or_else(|| {
            CliError::Config(format!(
                "variant must be one of {}, got `{}`",
                Variant::ALL.map(|v| v.name()).join(", "),
                self.bfg.variant
            ))
        })
    }

    pub fn seed_space(&self) -> Result<SeedSpace> {
        match self.bfg.seed_space.as_str() {
            "feature" => Ok(SeedSpace::Feature),
            "coordinate" => Ok(SeedSpace::Coordinate),
            other => Err(CliError::Config(format!(
                "seed_space must be `feature` or `coordinate`, got `{other}`"
            ))),
        }
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        let cfg = PipelineConfig {
            embedder: self.embedder_config(),
            bfg: self.bfg_config()?,
            k_prototypes: self.bfg.k_prototypes,
            seed_space: self.seed_space()?,
            temperature: self.bfg.temperature,
            variant: self.variant()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        let t = &self.trainer;
        TrainerConfig {
            iterations: t.iterations,
            lr_embedder: t.lr_embedder,
            lr_rest: t.lr_rest,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            seed: t.seed,
        }
    }

    /// Validates every section eagerly so errors surface before work starts.
    pub fn validate(&self) -> Result<()> {
        let n = PrimitiveKind::ALL.len();
        if !(1..=n).contains(&self.data.classes_per_scene) {
            return Err(CliError::Config(format!(
                "data.classes_per_scene must be in 1..={n}, got {}",
                self.data.classes_per_scene
            )));
        }
        self.scene_spec(0, 0)?.validate()?;
        self.pipeline_config()?;
        self.trainer_config().validate()?;
        self.episode_config().validate()?;
        self.split(Fold::S0)?;
        if self.eval.episodes == 0 {
            return Err(CliError::Config("eval.episodes must be >= 1".into()));
        }
        Ok(())
    }
}

/// The `k`-element subsets of `0..n` in lexicographic order.
fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Class name per label: index 0 is background, then the universe in
/// order.
pub fn class_names() -> Vec<String> {
    let mut names = vec!["background".to_string()];
    names.extend(PrimitiveKind::ALL.iter().map(|k| k.name().to_string()));
    names
}

/// Full default configuration rendered for `--help`.
pub fn config_help() -> String {
    format!(
        "CONFIGURATION KEYS (TOML, pass with --config; every key optional, \
         defaults below):\n\n{}",
        RunConfig::default().to_toml()
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn scenes_cycle_through_class_pairs_evenly() {
        assert_eq!(
            k_subsets(4, 2),
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
        let cfg = RunConfig::default();
        // Scene 3 hosts the fourth pair (box, cylinder) and the cycle
        // repeats after six scenes; absent classes get zero instances.
        for index in [3, 9] {
            let spec = cfg.scene_spec(1, index).unwrap();
            assert_eq!(spec.instances, vec![0, 2, 2, 0]);
        }
        assert_eq!(cfg.scene_spec(1, 2).unwrap().instances, vec![2, 0, 0, 2]);
        let mut all = cfg.clone();
        all.data.classes_per_scene = 4;
        assert_eq!(all.scene_spec(1, 5).unwrap().instances, vec![2; 4]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("[data]\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn partial_configs_inherit_defaults() {
        let cfg: RunConfig = toml::from_str("[trainer]\niterations = 7\n").unwrap();
        assert_eq!(cfg.trainer.iterations, 7);
        assert_eq!(cfg.data, DataSection::default());
    }

    #[test]
    fn folds_swap_split_sides() {
        let cfg = RunConfig::default();
        let s0 = cfg.split(Fold::S0).unwrap();
        let s1 = cfg.split(Fold::S1).unwrap();
        assert_eq!(s0.train_classes, vec![2, 3]);
        assert_eq!(s0.test_classes, vec![1, 4]);
        assert_eq!(s1.train_classes, vec![1, 4]);
        assert_eq!(s1.test_classes, vec![2, 3]);
    }

    #[test]
    fn bad_names_name_the_offending_value() {
        let mut cfg = RunConfig::default();
        cfg.bfg.measure1 = "cosine".into();
        let err = cfg.bfg_config().unwrap_err();
        assert!(err.message().contains("cosine"), "{err}");
        let mut cfg = RunConfig::default();
        cfg.bfg.variant = "everything".into();
        assert!(cfg.variant().is_err());
    }

    #[test]
    fn help_lists_every_section() {
        let h = config_help();
        for section in ["[data]", "[embedder]", "[bfg]", "[trainer]", "[eval]"] {
            assert!(h.contains(section), "missing {section}");
        }
        assert!(h.contains("lambda = 0.85"));
        assert!(h.contains("temperature = 10.0"));
    }
}
