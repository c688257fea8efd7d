//! Subcommand implementations. Each command validates its inputs,
//! does its work under the output directory, and writes a `config.toml`
//! snapshot of the *effective* configuration (flag overrides applied)
//! so every artifact records the seeds that produced it.

use std::path::{Path, PathBuf};

use bfg_core::autograd::Graph;
use bfg_core::bfg::Measure;
use bfg_core::eval::{self, EvalReport, ExperimentData, SweepSetting};
use bfg_core::fewshot::{forward_episode, sample_episode, Side, Variant};
use bfg_core::trainer::{self, AdamState, TrainerConfig};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{Fold, RunConfig};
use crate::dataset;
use crate::error::{CliError, Result};
use crate::ply;
use crate::reports;

/// Parses an episode-pool side name (`train` or `test`).
pub fn parse_side(name: &str) -> Result<Side> {
    match name {
        "train" => Ok(Side::Train),
        "test" => Ok(Side::Test),
        other => Err(CliError::Config(format!(
            "unknown side `{other}` (expected `train` or `test`)"
        ))),
    }
}

fn side_name(side: Side) -> &'static str {
    match side {
        Side::Train => "train",
        Side::Test => "test",
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io("cannot create directory", path, e))
}

fn write_config_snapshot(cfg: &RunConfig, out: &Path) -> Result<()> {
    let path = out.join("config.toml");
    std::fs::write(&path, cfg.to_toml())
        .map_err(|e| CliError::io("cannot write config snapshot", &path, e))
}

/// Generates the synthetic dataset: scene files, a manifest, and the
/// config snapshot.
pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    ensure_dir(out)?;
    let manifest = dataset::generate(cfg, out)?;
    write_config_snapshot(cfg, out)?;
    println!(
        "generated {} scenes ({} blocks, {} points) under {} [data seed {}]",
        manifest.scene.len(),
        manifest.totals.blocks,
        manifest.totals.points,
        out.display(),
        manifest.dataset.seed
    );
    Ok(())
}

fn checkpoint_path(out: &Path, iteration: u64) -> PathBuf {
    out.join(format!("checkpoint_{iteration:06}.txt"))
}

/// Finds the highest-numbered `checkpoint_NNNNNN.txt` in `dir`.
pub fn find_latest_checkpoint(dir: &Path) -> Result<Option<(u64, PathBuf)>> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| CliError::io("cannot list directory", dir, e))?;
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io("cannot list directory", dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(num) = name
            .strip_prefix("checkpoint_")
            .and_then(|rest| rest.strip_suffix(".txt"))
        else {
            continue;
        };
        let Ok(iteration) = num.parse::<u64>() else { continue };
        if best.as_ref().is_none_or(|(b, _)| iteration > *b) {
            best = Some((iteration, entry.path()));
        }
    }
    Ok(best)
}

/// Trains on the fold's train-side classes, checkpointing every
/// `trainer.checkpoint_every` iterations (0 = final checkpoint only)
/// and writing the full `iteration,loss` trace.
pub fn train(cfg: &RunConfig, data_dir: &Path, out: &Path, fold: Fold, resume: bool) -> Result<()> {
    cfg.validate()?;
    ensure_dir(out)?;
    let ds = dataset::load(data_dir)?;
    let split = cfg.split(fold)?;
    let pool = split.side(Side::Train);
    let pipeline = cfg.pipeline_config()?;
    let trainer_cfg = cfg.trainer_config();

    let (mut store, mut adam, start, mut trace) = if resume {
        let Some((iteration, path)) = find_latest_checkpoint(out)? else {
            return Err(CliError::Data(format!(
                "no checkpoint found in {} to resume from",
                out.display()
            )));
        };
        let cp = checkpoint::load(&path)?;
        if cp.iteration != iteration {
            return Err(CliError::Data(format!(
                "{} records iteration {} but its name says {}",
                path.display(),
                cp.iteration,
                iteration
            )));
        }
        if cp.variant != pipeline.variant {
            return Err(CliError::Config(format!(
                "checkpoint was trained with variant `{}` but the config requests `{}`",
                cp.variant.name(),
                pipeline.variant.name()
            )));
        }
        checkpoint::check_compatible(&cp, &pipeline)?;
        if cp.iteration >= trainer_cfg.iterations {
            return Err(CliError::Config(format!(
                "checkpoint already covers {} iterations; raise trainer.iterations (currently {}) to resume further",
                cp.iteration, trainer_cfg.iterations
            )));
        }
        let loss_path = out.join("loss.csv");
        let mut trace = if loss_path.exists() {
            reports::read_loss_csv(&loss_path)?
        } else {
            Vec::new()
        };
        trace.retain(|(it, _)| *it < cp.iteration);
        println!(
            "resuming variant {} from iteration {} of {}",
            cp.variant.name(),
            cp.iteration,
            trainer_cfg.iterations
        );
        (cp.store, cp.adam, cp.iteration, trace)
    } else {
        let store = bfg_core::fewshot::init_params(&pipeline)?;
        (store, AdamState::new(), 0, Vec::new())
    };

    let chunk = if cfg.trainer.checkpoint_every == 0 {
        trainer_cfg.iterations
    } else {
        cfg.trainer.checkpoint_every
    };
    let mut next = start;
    while next < trainer_cfg.iterations {
        let stop = (next + chunk).min(trainer_cfg.iterations);
        let chunk_cfg = TrainerConfig { iterations: stop, ..trainer_cfg };
        trainer::train(
            &ds.blocks,
            pool,
            &cfg.episode_config(),
            &pipeline,
            &chunk_cfg,
            &mut store,
            &mut adam,
            next,
            |p| trace.push((p.iteration, p.loss)),
        )?;
        let cp = Checkpoint {
            iteration: stop,
            variant: pipeline.variant,
            store: store.clone(),
            adam: adam.clone(),
        };
        checkpoint::save(&cp, &checkpoint_path(out, stop))?;
        let last = trace.last().map_or(f64::NAN, |&(_, l)| l);
        println!("iteration {stop}/{} loss {last:.6}", trainer_cfg.iterations);
        next = stop;
    }

    reports::write_loss_csv(&out.join("loss.csv"), &trace)?;
    write_config_snapshot(cfg, out)?;
    println!(
        "trained variant {} for {} iterations on fold {} [trainer seed {}]; wrote {}",
        pipeline.variant.name(),
        trainer_cfg.iterations,
        fold.name(),
        trainer_cfg.seed,
        checkpoint_path(out, trainer_cfg.iterations).display()
    );
    Ok(())
}

fn load_checkpoint_for(cfg: &RunConfig, path: &Path) -> Result<(Checkpoint, bfg_core::fewshot::PipelineConfig)> {
    let cp = checkpoint::load(path)?;
    let mut pipeline = cfg.pipeline_config()?;
    pipeline.variant = cp.variant;
    checkpoint::check_compatible(&cp, &pipeline)?;
    Ok((cp, pipeline))
}

/// Evaluates a checkpoint over `eval.episodes` fixed episodes drawn
/// from the chosen fold side and writes `eval.csv`.
pub fn eval(
    cfg: &RunConfig,
    data_dir: &Path,
    checkpoint_file: &Path,
    out: &Path,
    fold: Fold,
    side: Side,
) -> Result<()> {
    cfg.validate()?;
    ensure_dir(out)?;
    let ds = dataset::load(data_dir)?;
    let (cp, pipeline) = load_checkpoint_for(cfg, checkpoint_file)?;
    let pool = cfg.split(fold)?;
    let pool = pool.side(side);
    let report = eval::evaluate(
        &ds.blocks,
        pool,
        &cfg.episode_config(),
        &pipeline,
        &cp.store,
        cfg.eval.episodes,
        cfg.eval.seed,
    )?;
    let csv = format!(
        "{}eval_seed,{}\nfold,{}\nside,{}\ncheckpoint_iteration,{}\n",
        reports::eval_csv(&report),
        cfg.eval.seed,
        fold.name(),
        side_name(side),
        cp.iteration
    );
    let path = out.join("eval.csv");
    std::fs::write(&path, csv).map_err(|e| CliError::io("cannot write CSV", &path, e))?;
    write_config_snapshot(cfg, out)?;
    print_report(&report, fold, side);
    Ok(())
}

fn print_report(report: &EvalReport, fold: Fold, side: Side) {
    println!(
        "mIoU {:.4} over {} episodes (variant {}, fold {}, {} side, {} clamp warnings)",
        report.miou,
        report.episodes,
        report.variant.name(),
        fold.name(),
        side_name(side),
        report.clamp_warnings
    );
}

/// Trains all four variants from identical seeds, evaluates each on the
/// same fixed test-side episodes, and writes the ladder CSV.
pub fn ablate(cfg: &RunConfig, data_dir: &Path, out: &Path, fold: Fold) -> Result<()> {
    cfg.validate()?;
    ensure_dir(out)?;
    let ds = dataset::load(data_dir)?;
    let split = cfg.split(fold)?;
    let data = ExperimentData {
        blocks: &ds.blocks,
        train_pool: split.side(Side::Train),
        eval_pool: split.side(Side::Test),
    };
    let rows = eval::run_ablation(
        &data,
        &cfg.episode_config(),
        &cfg.pipeline_config()?,
        &cfg.trainer_config(),
        &Variant::ALL,
        cfg.eval.episodes,
        cfg.eval.seed,
    )?;
    reports::write_ladder_csv(&out.join("ablation.csv"), &rows)?;
    write_config_snapshot(cfg, out)?;
    for r in &rows {
        println!(
            "{:<14} mIoU {:.4}  delta {:+.4}  cumulative {:+.4}",
            r.variant.name(),
            r.miou,
            r.delta,
            r.cum_delta
        );
    }
    Ok(())
}

/// Parses `--values` for one sweepable parameter.
pub fn parse_sweep_settings(param: &str, values: &str) -> Result<Vec<SweepSetting>> {
    let tokens: Vec<&str> = values
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .collect();
    if tokens.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let bad = |t: &str| CliError::Config(format!("bad value `{t}` for sweep parameter `{param}`"));
    tokens
        .iter()
        .map(|t| match param {
            "k" => t.parse().map(SweepSetting::K).map_err(|_| bad(t)),
            "lambda" => t.parse().map(SweepSetting::Lambda).map_err(|_| bad(t)),
            "xi" => t.parse().map(SweepSetting::Xi).map_err(|_| bad(t)),
            "measure_combo" => {
                let (a, b) = t.split_once('+').ok_or_else(|| bad(t))?;
                let measure = |name: &str| {
                    Measure::from_name(name).or(match name {
                        "N" => Some(Measure::L2Norm),
                        "IP" => Some(Measure::InnerProduct),
                        _ => None,
                    })
                };
                match (measure(a), measure(b)) {
                    (Some(m1), Some(m2)) => Ok(SweepSetting::MeasureCombo(m1, m2)),
                    _ => Err(bad(t)),
                }
            }
            other => Err(CliError::Config(format!(
                "unknown sweep parameter `{other}` (expected k, lambda, xi, or measure_combo)"
            ))),
        })
        .collect()
}

/// Trains and evaluates once per value of one hyper-parameter and
/// writes the curve CSV.
pub fn sweep(
    cfg: &RunConfig,
    data_dir: &Path,
    out: &Path,
    fold: Fold,
    param: &str,
    values: &str,
) -> Result<()> {
    cfg.validate()?;
    let settings = parse_sweep_settings(param, values)?;
    ensure_dir(out)?;
    let ds = dataset::load(data_dir)?;
    let split = cfg.split(fold)?;
    let data = ExperimentData {
        blocks: &ds.blocks,
        train_pool: split.side(Side::Train),
        eval_pool: split.side(Side::Test),
    };
    let rows = eval::sweep(
        &data,
        &cfg.episode_config(),
        &cfg.pipeline_config()?,
        &cfg.trainer_config(),
        &settings,
        cfg.eval.episodes,
        cfg.eval.seed,
    )?;
    reports::write_sweep_csv(&out.join("sweep.csv"), &rows)?;
    write_config_snapshot(cfg, out)?;
    for r in &rows {
        println!("{} = {:<8} mIoU {:.4}", r.param, r.value, r.miou);
    }
    Ok(())
}

/// Runs one fixed episode through a checkpoint and writes paired
/// ground-truth and prediction PLY files over the same query cloud.
#[allow(clippy::too_many_arguments)]
pub fn export_viz(
    cfg: &RunConfig,
    data_dir: &Path,
    checkpoint_file: &Path,
    out: &Path,
    fold: Fold,
    side: Side,
    episode_seed: u64,
    episode_index: u64,
) -> Result<()> {
    cfg.validate()?;
    ensure_dir(out)?;
    let ds = dataset::load(data_dir)?;
    let (cp, pipeline) = load_checkpoint_for(cfg, checkpoint_file)?;
    let split = cfg.split(fold)?;
    let ep_cfg = cfg.episode_config().without_augmentation();
    let ep = sample_episode(&ds.blocks, split.side(side), &ep_cfg, episode_seed, episode_index)?;

    let mut g = Graph::new();
    let binding = cp.store.bind(&mut g)?;
    let fwd = forward_episode(&mut g, &ep, &binding, &pipeline)?;

    let names = crate::config::class_names();
    let to_universe =
        |slot: usize| if slot == 0 { 0 } else { ep.classes[slot - 1] };
    let gt: Vec<usize> = ep.query.labels.iter().map(|&l| to_universe(l)).collect();
    let pred: Vec<usize> = fwd.predictions.iter().map(|&p| to_universe(p)).collect();
    let class_list = ep
        .classes
        .iter()
        .map(|&c| names[c].as_str())
        .collect::<Vec<_>>()
        .join(", ");
    let provenance = |contents: &str| {
        vec![
            format!("contents {contents}"),
            format!("episode seed ({episode_seed}, {episode_index})"),
            format!("episode classes {class_list}"),
            format!("variant {} at iteration {}", cp.variant.name(), cp.iteration),
        ]
    };
    let gt_path = out.join("gt.ply");
    let pred_path = out.join("pred.ply");
    ply::write_label_ply(&ep.query, &gt, &provenance("ground-truth labels"), &gt_path)?;
    ply::write_label_ply(&ep.query, &pred, &provenance("predicted labels"), &pred_path)?;
    write_config_snapshot(cfg, out)?;
    println!(
        "wrote {} and {} ({} vertices each; classes {})",
        gt_path.display(),
        pred_path.display(),
        ep.query.len(),
        class_list
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latest_checkpoint_wins_by_iteration_number() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["checkpoint_000002.txt", "checkpoint_000010.txt", "loss.csv", "x.txt"] {
            std::fs::write(dir.path().join(name), "stub").unwrap();
        }
        let (it, path) = find_latest_checkpoint(dir.path()).unwrap().unwrap();
        assert_eq!(it, 10);
        assert!(path.ends_with("checkpoint_000010.txt"));
    }

    #[test]
    fn empty_directory_has_no_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        assert!(find_latest_checkpoint(dir.path()).unwrap().is_none());
    }

    #[test]
    fn sweep_values_parse_per_parameter() {
        let ks = parse_sweep_settings("k", "1, 3,5").unwrap();
        assert_eq!(ks.len(), 3);
        assert!(matches!(ks[2], SweepSetting::K(5)));
        let combos = parse_sweep_settings("measure_combo", "N+IP,l2norm+l2norm").unwrap();
        assert!(matches!(
            combos[0],
            SweepSetting::MeasureCombo(Measure::L2Norm, Measure::InnerProduct)
        ));
        assert!(matches!(
            combos[1],
            SweepSetting::MeasureCombo(Measure::L2Norm, Measure::L2Norm)
        ));
        assert_eq!(parse_sweep_settings("k", "x").unwrap_err().kind(), "config");
        assert_eq!(parse_sweep_settings("depth", "1").unwrap_err().kind(), "config");
        assert_eq!(parse_sweep_settings("k", " ").unwrap_err().kind(), "config");
    }

    #[test]
    fn side_names_parse_and_reject() {
        assert!(matches!(parse_side("train").unwrap(), Side::Train));
        assert!(matches!(parse_side("test").unwrap(), Side::Test));
        assert_eq!(parse_side("dev").unwrap_err().kind(), "config");
    }
}
