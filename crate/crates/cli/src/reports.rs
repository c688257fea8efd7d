//! CSV report writers. Each file starts with a documented header row;
//! floats use Rust's shortest round-trip formatting, so identical
//! results always serialize to identical bytes. Wall-clock time is
//! deliberately kept out of every CSV (it would break rerun
//! bit-identity); timing goes to stderr instead.

use std::fmt::Write as _;
use std::path::Path;

use bfg_core::eval::{AblationRow, EvalReport, SweepRow};

use crate::error::{CliError, Result};

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io("cannot write report", path, e))
}

/// `iteration,loss` per training step.
pub fn write_loss_csv(path: &Path, trace: &[(u64, f64)]) -> Result<()> {
    let mut text = String::from("iteration,loss\n");
    for (it, loss) in trace {
        writeln!(text, "{it},{loss}").expect("string write");
    }
    write_text(path, &text)
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<(u64, f64)>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::io("cannot read loss CSV", path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let (a, b) = line.split_once(',').ok_or_else(|| {
            CliError::Data(format!("{}: line {}: expected `iteration,loss`", path.display(), lineno + 1))
        })?;
        let bad = |s: &str| {
            CliError::Data(format!("{}: line {}: bad number `{s}`", path.display(), lineno + 1))
        };
        rows.push((
            a.parse::<u64>().map_err(|_| bad(a))?,
            b.parse::<f64>().map_err(|_| bad(b))?,
        ));
    }
    Ok(rows)
}

/// `metric,value` rows: variant, episode count, per-class IoU (empty
/// when a class never occurred), mean IoU, clamp warnings.
pub fn eval_csv(report: &EvalReport) -> String {
    let mut text = String::from("metric,value\n");
    writeln!(text, "variant,{}", report.variant.name()).expect("string write");
    writeln!(text, "episodes,{}", report.episodes).expect("string write");
    for (slot, iou) in report.per_class_iou.iter().enumerate() {
        match iou {
            Some(v) => writeln!(text, "iou_slot_{slot},{v}"),
            None => writeln!(text, "iou_slot_{slot},"),
        }
        .expect("string write");
    }
    writeln!(text, "miou,{}", report.miou).expect("string write");
    writeln!(text, "clamp_warnings,{}", report.clamp_warnings).expect("string write");
    text
}

pub fn write_eval_csv(path: &Path, report: &EvalReport) -> Result<()> {
    write_text(path, &eval_csv(report))
}

/// `variant,miou,delta,cum_delta` ladder.
pub fn write_ladder_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut text = String::from("variant,miou,delta,cum_delta\n");
    for r in rows {
        writeln!(text, "{},{},{},{}", r.variant.name(), r.miou, r.delta, r.cum_delta)
            .expect("string write");
    }
    write_text(path, &text)
}

/// `param,value,miou` curve.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut text = String::from("param,value,miou\n");
    for r in rows {
        writeln!(text, "{},{},{}", r.param, r.value, r.miou).expect("string write");
    }
    write_text(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bfg_core::fewshot::Variant;

    #[test]
    fn loss_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let trace = vec![(0u64, 1.0986122886681098), (1, 0.5), (2, 1e-17)];
        write_loss_csv(&path, &trace).unwrap();
        let back = read_loss_csv(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0].1.to_bits(), trace[0].1.to_bits());
        assert_eq!(back[2].1.to_bits(), trace[2].1.to_bits());
    }

    #[test]
    fn eval_csv_shows_empty_value_for_absent_classes() {
        let report = EvalReport {
            variant: Variant::Baseline,
            per_class_iou: vec![Some(0.5), None, Some(1.0)],
            miou: 1.0,
            episodes: 4,
            clamp_warnings: 0,
        };
        let text = eval_csv(&report);
        assert!(text.starts_with("metric,value\n"));
        assert!(text.contains("iou_slot_1,\n"), "{text}");
        assert!(text.contains("variant,baseline\n"));
        assert!(text.contains("miou,1\n"));
    }
}
