//! Dataset directory layout and manifest.
//!
//! `gen-data` writes `scenes/scene_NNNN.txt` cloud files plus
//! `manifest.toml` describing every scene's blocks and class inventory;
//! training and evaluation load blocks back from those files, so all
//! commands see the same data regardless of in-memory precision.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use bfg_core::cloud::{split_blocks, LabeledCloud};
use bfg_core::rng;
use bfg_core::synth::generate_scene;

use crate::cloudfile;
use crate::config::{class_names, RunConfig};
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub seed: u64,
    pub scenes: u64,
    pub points_per_scene: usize,
    pub block_size: f64,
    /// Class name per label (index 0 = background).
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitInventory {
    /// Fold s0 foreground class names.
    pub s0: Vec<String>,
    /// Fold s1 foreground class names.
    pub s1: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub blocks: usize,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub file: String,
    pub seed: u64,
    pub blocks: usize,
    /// Points per class name in this scene.
    pub class_points: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dataset: ManifestHeader,
    pub split: SplitInventory,
    pub totals: Totals,
    #[serde(default)]
    pub scene: Vec<SceneEntry>,
}

/// Generates all scenes, writes them and the manifest under `out`, and
/// returns the manifest.
pub fn generate(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let scenes_dir = out.join("scenes");
    std::fs::create_dir_all(&scenes_dir)
        .map_err(|e| CliError::io("cannot create dataset directory", &scenes_dir, e))?;

    // Scene seeds derive from the dataset seed through a dedicated
    // stream, so neighboring dataset seeds do not share scenes. They
    // are kept within i64 range because the manifest is TOML.
    let mut seed_rng = rng::stream(cfg.data.seed, 3);
    let mut entries = Vec::new();
    let mut total_blocks = 0usize;
    let mut total_points = 0usize;
    for i in 0..cfg.data.scenes {
        let scene_seed: u64 = seed_rng.gen::<u64>() >> 1;
        let spec = cfg.scene_spec(scene_seed, i)?;
        let scene = generate_scene(&spec)?;
        let blocks = split_blocks(&scene.cloud, cfg.data.block_size)?;
        let names = class_names();
        let mut class_points: BTreeMap<String, usize> = BTreeMap::new();
        for &l in &scene.cloud.labels {
            *class_points.entry(names[l].clone()).or_insert(0usize) += 1;
        }
        let file = format!("scenes/scene_{i:04}.txt");
        cloudfile::write_cloud(&scene.cloud, &out.join(&file))?;
        total_blocks += blocks.len();
        total_points += scene.cloud.len();
        entries.push(SceneEntry { file, seed: scene_seed, blocks: blocks.len(), class_points });
    }

    let manifest = Manifest {
        dataset: ManifestHeader {
            seed: cfg.data.seed,
            scenes: cfg.data.scenes,
            points_per_scene: cfg.data.points_per_scene,
            block_size: cfg.data.block_size,
            classes: class_names(),
        },
        split: SplitInventory {
            s0: cfg.data.split_s0.clone(),
            s1: cfg.data.split_s1.clone(),
        },
        totals: Totals { blocks: total_blocks, points: total_points },
        scene: entries,
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| CliError::Config(format!("manifest serialization: {e}")))?;
    let mpath = out.join(MANIFEST_FILE);
    std::fs::write(&mpath, text).map_err(|e| CliError::io("cannot write manifest", &mpath, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text =
        std::fs::read_to_string(&path).map_err(|e| CliError::io("cannot read manifest", &path, e))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Data(format!("manifest {}: {e}", path.display()).replace('\n', " ")))
}

/// A dataset loaded back from disk: all blocks of all scenes, in
/// manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub blocks: Vec<LabeledCloud>,
    pub dir: PathBuf,
}

pub fn load(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let mut blocks = Vec::with_capacity(manifest.totals.blocks);
    for entry in &manifest.scene {
        let cloud = cloudfile::read_cloud(&dir.join(&entry.file))?;
        let scene_blocks = split_blocks(&cloud, manifest.dataset.block_size)?;
        if scene_blocks.len() != entry.blocks {
            return Err(CliError::Data(format!(
                "{}: {} blocks on disk but the manifest records {} (manifest out of date?)",
                entry.file,
                scene_blocks.len(),
                entry.blocks
            )));
        }
        blocks.extend(scene_blocks);
    }
    if blocks.len() != manifest.totals.blocks {
        return Err(CliError::Data(format!(
            "dataset {} has {} blocks but the manifest records {}",
            dir.display(),
            blocks.len(),
            manifest.totals.blocks
        )));
    }
    Ok(Dataset { manifest, blocks, dir: dir.to_path_buf() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.data.scenes = 2;
        cfg.data.points_per_scene = 2048;
        cfg
    }

    #[test]
    fn generate_then_load_round_trips_block_structure() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        let manifest = generate(&cfg, dir.path()).unwrap();
        assert_eq!(manifest.scene.len(), 2);
        assert_eq!(
            manifest.totals.blocks,
            manifest.scene.iter().map(|s| s.blocks).sum::<usize>()
        );
        let ds = load(dir.path()).unwrap();
        assert_eq!(ds.blocks.len(), manifest.totals.blocks);
        assert_eq!(ds.blocks.iter().map(|b| b.len()).sum::<usize>(), manifest.totals.points);
    }

    #[test]
    fn same_seed_regenerates_the_identical_manifest() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        generate(&cfg, d1.path()).unwrap();
        generate(&cfg, d2.path()).unwrap();
        let t1 = std::fs::read_to_string(d1.path().join(MANIFEST_FILE)).unwrap();
        let t2 = std::fs::read_to_string(d2.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn both_splits_list_at_least_two_classes() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate(&tiny_config(), dir.path()).unwrap();
        assert!(manifest.split.s0.len() >= 2);
        assert!(manifest.split.s1.len() >= 2);
    }

    #[test]
    fn stale_manifest_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        generate(&cfg, dir.path()).unwrap();
        let mpath = dir.path().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mpath).unwrap();
        let bumped = text.replacen("blocks = ", "blocks = 9", 1);
        std::fs::write(&mpath, bumped).unwrap();
        let err = load(dir.path()).unwrap_err();
        assert_eq!(err.kind(), "data");
    }
}
