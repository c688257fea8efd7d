//! Evaluation: confusion accumulation, mean IoU over fixed episode
//! streams, the variant ablation ladder, and hyper-parameter sweeps.
//!
//! All evaluation runs draw their episodes from `(eval_seed, index)`
//! with augmentation disabled, so two runs over the same data and
//! parameters are bit-identical and different variants are compared on
//! exactly the same episodes.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::Graph;
use crate::bfg::Measure;
use crate::cloud::LabeledCloud;
use crate::error::{Error, Result};
use crate::fewshot::{
    forward_episode, init_params, sample_episode, EpisodeConfig, PipelineConfig, Variant,
};
use crate::params::ParamStore;
use crate::trainer::{train, AdamState, TrainerConfig};

/// Running true-positive / false-positive / false-negative counts per
/// class; class ids are episode-local slots (0 = background).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionAccumulator {
    tp: Vec<u64>,
    fp: Vec<u64>,
    fn_: Vec<u64>,
}

impl ConfusionAccumulator {
    pub fn new(n_classes: usize) -> Self {
        ConfusionAccumulator {
            tp: vec![0; n_classes],
            fp: vec![0; n_classes],
            fn_: vec![0; n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.tp.len()
    }

    /// Accumulates one batch of predictions against ground truth.
    pub fn add(&mut self, predictions: &[usize], labels: &[usize]) -> Result<()> {
        if predictions.len() != labels.len() {
            return Err(Error::Contract(format!(
                "got {} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let n = self.n_classes();
        for (&p, &l) in predictions.iter().zip(labels) {
            if p >= n || l >= n {
                return Err(Error::Contract(format!(
                    "class id out of range: prediction {p}, label {l}, {n} classes"
                )));
            }
            if p == l {
                self.tp[p] += 1;
            } else {
                self.fp[p] += 1;
                self.fn_[l] += 1;
            }
        }
        Ok(())
    }

    /// Intersection over union of one class; `None` when the class never
    /// occurred in either predictions or labels (empty union).
    pub fn iou(&self, class: usize) -> Option<f64> {
        let union = self.tp[class] + self.fp[class] + self.fn_[class];
        if union == 0 {
            None
        } else {
            Some(self.tp[class] as f64 / union as f64)
        }
    }

    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.n_classes()).map(|c| self.iou(c)).collect()
    }

    /// Mean IoU over foreground classes (background slot 0 excluded);
    /// classes with an empty union are skipped. Zero when no foreground
    /// class has a non-empty union.
    pub fn miou(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for c in 1..self.n_classes() {
            if let Some(v) = self.iou(c) {
                sum += v;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Outcome of one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub variant: Variant,
    /// IoU per episode-local class slot (index 0 = background).
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub episodes: usize,
    /// Zero-norm clamp events observed across all episodes.
    pub clamp_warnings: usize,
}

/// Scores a trained model over `episodes` fixed episodes drawn from
/// `(eval_seed, 0..episodes)` with augmentation disabled.
pub fn evaluate(
    blocks: &[LabeledCloud],
    pool: &[usize],
    ep_cfg: &EpisodeConfig,
    pipeline: &PipelineConfig,
    store: &ParamStore,
    episodes: usize,
    eval_seed: u64,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    pipeline.validate()?;
    let eval_cfg = ep_cfg.without_augmentation();
    let mut acc = ConfusionAccumulator::new(eval_cfg.way + 1);
    let mut clamp_warnings = 0usize;
    for index in 0..episodes {
        let ep = sample_episode(blocks, pool, &eval_cfg, eval_seed, index as u64)?;
        let mut g = Graph::new();
        let binding = store.bind(&mut g)?;
        let fwd = forward_episode(&mut g, &ep, &binding, pipeline)?;
        clamp_warnings += fwd.clamp_warnings;
        acc.add(&fwd.predictions, &ep.query.labels)?;
    }
    Ok(EvalReport {
        variant: pipeline.variant,
        per_class_iou: acc.per_class_iou(),
        miou: acc.miou(),
        episodes,
        clamp_warnings,
    })
}

/// One rung of the ablation ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub miou: f64,
    /// Improvement over the previous rung (0 for the first).
    pub delta: f64,
    /// Improvement over the first rung.
    pub cum_delta: f64,
}

/// Shared experiment inputs for ablations and sweeps.
#[derive(Debug, Clone, Copy)]
pub struct ExperimentData<'a> {
    pub blocks: &'a [LabeledCloud],
    pub train_pool: &'a [usize],
    pub eval_pool: &'a [usize],
}

/// Trains each variant from identical initial weights and trainer
/// seeds, evaluates all of them on the same fixed episodes, and reports
/// the ladder with per-rung and cumulative improvements.
pub fn run_ablation(
    data: &ExperimentData<'_>,
    ep_cfg: &EpisodeConfig,
    base_pipeline: &PipelineConfig,
    trainer: &TrainerConfig,
    variants: &[Variant],
    eval_episodes: usize,
    eval_seed: u64,
) -> Result<Vec<AblationRow>> {
    if variants.is_empty() {
        return Err(Error::Config("ablation needs at least one variant".into()));
    }
    let mut rows: Vec<AblationRow> = Vec::with_capacity(variants.len());
    for &variant in variants {
        let pipeline = PipelineConfig { variant, ..base_pipeline.clone() };
        let report = train_and_evaluate(data, ep_cfg, &pipeline, trainer, eval_episodes, eval_seed)?;
        let delta = rows.last().map_or(0.0, |prev: &AblationRow| report.miou - prev.miou);
        let cum_delta = rows.first().map_or(0.0, |first| report.miou - first.miou);
        rows.push(AblationRow { variant, miou: report.miou, delta, cum_delta });
    }
    Ok(rows)
}

/// A single hyper-parameter override applied to the base pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepSetting {
    /// Prototypes per class.
    K(usize),
    /// Feature-term scale of the norm distance.
    Lambda(f64),
    /// Scale of the inner-product distance.
    Xi(f64),
    /// Distance measures of the two globalization stages.
    MeasureCombo(Measure, Measure),
}

impl SweepSetting {
    /// Name of the swept parameter, shared by all values of one sweep.
    pub fn param_name(&self) -> &'static str {
        match self {
            SweepSetting::K(_) => "k",
            SweepSetting::Lambda(_) => "lambda",
            SweepSetting::Xi(_) => "xi",
            SweepSetting::MeasureCombo(..) => "measure_combo",
        }
    }

    /// Human-readable value label ("5", "0.85", "N+IP", ...).
    pub fn value_label(&self) -> String {
        match self {
            SweepSetting::K(k) => format!("{k}"),
            SweepSetting::Lambda(v) => format!("{v}"),
            SweepSetting::Xi(v) => format!("{v}"),
            SweepSetting::MeasureCombo(m1, m2) => {
                format!("{}+{}", m1.short_name(), m2.short_name())
            }
        }
    }

    pub fn apply(&self, pipeline: &mut PipelineConfig) {
        match *self {
            SweepSetting::K(k) => pipeline.k_prototypes = k,
            SweepSetting::Lambda(v) => pipeline.bfg.lambda = v,
            SweepSetting::Xi(v) => pipeline.bfg.xi = v,
            SweepSetting::MeasureCombo(m1, m2) => {
                pipeline.bfg.measure1 = m1;
                pipeline.bfg.measure2 = m2;
            }
        }
    }
}

/// One sweep result.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param: &'static str,
    pub value: String,
    pub miou: f64,
}

/// Trains and evaluates the pipeline once per setting, holding every
/// seed fixed so reruns produce identical tables.
pub fn sweep(
    data: &ExperimentData<'_>,
    ep_cfg: &EpisodeConfig,
    base_pipeline: &PipelineConfig,
    trainer: &TrainerConfig,
    settings: &[SweepSetting],
    eval_episodes: usize,
    eval_seed: u64,
) -> Result<Vec<SweepRow>> {
    if settings.is_empty() {
        return Err(Error::Config("sweep needs at least one setting".into()));
    }
    let mut rows = Vec::with_capacity(settings.len());
    for setting in settings {
        let mut pipeline = base_pipeline.clone();
        setting.apply(&mut pipeline);
        let report = train_and_evaluate(data, ep_cfg, &pipeline, trainer, eval_episodes, eval_seed)?;
        rows.push(SweepRow {
            param: setting.param_name(),
            value: setting.value_label(),
            miou: report.miou,
        });
    }
    Ok(rows)
}

fn train_and_evaluate(
    data: &ExperimentData<'_>,
    ep_cfg: &EpisodeConfig,
    pipeline: &PipelineConfig,
    trainer: &TrainerConfig,
    eval_episodes: usize,
    eval_seed: u64,
) -> Result<EvalReport> {
    let mut store = init_params(pipeline)?;
    let mut adam = AdamState::new();
    train(
        data.blocks,
        data.train_pool,
        ep_cfg,
        pipeline,
        trainer,
        &mut store,
        &mut adam,
        0,
        |_| {},
    )?;
    evaluate(data.blocks, data.eval_pool, ep_cfg, pipeline, &store, eval_episodes, eval_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::split_blocks;
    use crate::embedder::EmbedderConfig;
    use crate::synth::{generate_scene, SceneSpec};

    #[test]
    fn iou_counts_match_hand_arithmetic() {
        // Class 1: 3 true positives, 1 false positive, 2 false negatives.
        let mut acc = ConfusionAccumulator::new(2);
        acc.add(&[1, 1, 1, 1, 0, 0], &[1, 1, 1, 0, 1, 1]).unwrap();
        assert_eq!(acc.iou(1), Some(3.0 / 6.0));
        assert_eq!(acc.miou(), 0.5);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let mut acc = ConfusionAccumulator::new(3);
        acc.add(&[0, 1, 2, 1, 2], &[0, 1, 2, 1, 2]).unwrap();
        assert_eq!(acc.per_class_iou(), alloc::vec![Some(1.0), Some(1.0), Some(1.0)]);
        assert_eq!(acc.miou(), 1.0);
    }

    #[test]
    fn all_background_predictions_score_zero() {
        let mut acc = ConfusionAccumulator::new(3);
        acc.add(&[0, 0, 0, 0], &[1, 1, 2, 0]).unwrap();
        assert_eq!(acc.iou(1), Some(0.0));
        assert_eq!(acc.iou(2), Some(0.0));
        assert_eq!(acc.miou(), 0.0);
    }

    #[test]
    fn absent_classes_are_excluded_from_the_mean() {
        let mut acc = ConfusionAccumulator::new(4);
        // Class 3 never appears in predictions or labels.
        acc.add(&[1, 1, 2, 0], &[1, 0, 2, 2]).unwrap();
        assert_eq!(acc.iou(3), None);
        let expected = (acc.iou(1).unwrap() + acc.iou(2).unwrap()) / 2.0;
        assert_eq!(acc.miou(), expected);
        // Background IoU exists but must not enter the mean.
        assert!(acc.iou(0).is_some());
    }

    #[test]
    fn accumulation_equals_concatenation_and_ignores_order() {
        let a = ([1usize, 0, 2, 1], [1usize, 1, 2, 0]);
        let b = ([2usize, 2, 0], [2usize, 1, 0]);
        let mut split = ConfusionAccumulator::new(3);
        split.add(&a.0, &a.1).unwrap();
        split.add(&b.0, &b.1).unwrap();

        let mut joined = ConfusionAccumulator::new(3);
        let preds: Vec<usize> = a.0.iter().chain(b.0.iter()).copied().collect();
        let labels: Vec<usize> = a.1.iter().chain(b.1.iter()).copied().collect();
        joined.add(&preds, &labels).unwrap();
        assert_eq!(split, joined);

        let mut reversed = ConfusionAccumulator::new(3);
        reversed.add(&b.0, &b.1).unwrap();
        reversed.add(&a.0, &a.1).unwrap();
        assert_eq!(reversed, joined);
    }

    #[test]
    fn add_rejects_mismatched_or_out_of_range_input() {
        let mut acc = ConfusionAccumulator::new(2);
        assert!(acc.add(&[0, 1], &[0]).is_err());
        assert!(acc.add(&[2], &[0]).is_err());
        assert!(acc.add(&[0], &[5]).is_err());
    }

    fn tiny_setup() -> (Vec<LabeledCloud>, EpisodeConfig, PipelineConfig) {
        let mut blocks = Vec::new();
        for s in 0..6 {
            let scene = generate_scene(&SceneSpec::desk(900 + s)).unwrap();
            blocks.extend(split_blocks(&scene.cloud, 4.0).unwrap());
        }
        let ep_cfg = EpisodeConfig {
            way: 2,
            shot: 1,
            n_points: 128,
            min_points: 20,
            jitter_sigma: 0.0,
            rotate: false,
        };
        let pipeline = PipelineConfig {
            embedder: EmbedderConfig {
                input_channels: 6,
                edgeconv_widths: alloc::vec![8, 8],
                knn_k: 4,
                head_widths: alloc::vec![8, 8],
                feature_dim: 8,
                seed: 31,
            },
            k_prototypes: 3,
            ..PipelineConfig::default()
        };
        (blocks, ep_cfg, pipeline)
    }

    #[test]
    fn evaluation_is_deterministic_and_rejects_zero_episodes() {
        let (blocks, ep_cfg, pipeline) = tiny_setup();
        let store = init_params(&pipeline).unwrap();
        let a = evaluate(&blocks, &[2, 3], &ep_cfg, &pipeline, &store, 4, 123).unwrap();
        let b = evaluate(&blocks, &[2, 3], &ep_cfg, &pipeline, &store, 4, 123).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.episodes, 4);
        assert_eq!(a.per_class_iou.len(), 3);
        assert!(a.miou.is_finite());
        assert!(evaluate(&blocks, &[2, 3], &ep_cfg, &pipeline, &store, 0, 123).is_err());
    }

    #[test]
    fn ablation_ladder_reports_consistent_deltas() {
        let (blocks, ep_cfg, pipeline) = tiny_setup();
        let data = ExperimentData {
            blocks: &blocks,
            train_pool: &[2, 3],
            eval_pool: &[1, 4],
        };
        let trainer = TrainerConfig { iterations: 2, seed: 3, ..TrainerConfig::default() };
        let rows = run_ablation(
            &data,
            &ep_cfg,
            &pipeline,
            &trainer,
            &[Variant::Baseline, Variant::Spgen],
            3,
            55,
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].variant, Variant::Baseline);
        assert_eq!(rows[0].delta, 0.0);
        assert_eq!(rows[0].cum_delta, 0.0);
        assert_eq!(rows[1].delta, rows[1].miou - rows[0].miou);
        assert_eq!(rows[1].cum_delta, rows[1].delta);
    }

    #[test]
    fn sweep_labels_and_rows_line_up() {
        let (blocks, ep_cfg, pipeline) = tiny_setup();
        let data = ExperimentData {
            blocks: &blocks,
            train_pool: &[2, 3],
            eval_pool: &[1, 4],
        };
        let trainer = TrainerConfig { iterations: 2, seed: 3, ..TrainerConfig::default() };
        let settings = [
            SweepSetting::K(1),
            SweepSetting::MeasureCombo(Measure::L2Norm, Measure::InnerProduct),
        ];
        let rows = sweep(&data, &ep_cfg, &pipeline, &trainer, &settings, 3, 55).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].param, "k");
        assert_eq!(rows[0].value, "1");
        assert_eq!(rows[1].param, "measure_combo");
        assert_eq!(rows[1].value, "N+IP");
        assert!(rows.iter().all(|r| r.miou.is_finite()));
    }
}
