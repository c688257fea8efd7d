//! Line-based text checkpoints holding every parameter tensor, the
//! optimizer moments, and the iteration counter. Values are written
//! with Rust's shortest round-trip float formatting, so a save/load
//! cycle is bit-exact and resumed runs reproduce the original stream.

use std::fmt::Write as _;
use std::path::Path;

use bfg_core::autograd::Tensor;
use bfg_core::fewshot::{init_params, PipelineConfig, Variant};
use bfg_core::params::ParamStore;
use bfg_core::trainer::AdamState;

use crate::error::{CliError, Result};

const MAGIC: &str = "bfg-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Iterations already completed (training resumes here).
    pub iteration: u64,
    pub variant: Variant,
    pub store: ParamStore,
    pub adam: AdamState,
}

pub fn save(cp: &Checkpoint, path: &Path) -> Result<()> {
    let mut text = String::new();
    writeln!(text, "{MAGIC}").expect("string write");
    writeln!(text, "iteration {}", cp.iteration).expect("string write");
    writeln!(text, "variant {}", cp.variant.name()).expect("string write");
    for (name, tensor) in cp.store.iter() {
        let (r, c) = tensor.dims2().map_err(CliError::from)?;
        write_matrix(&mut text, "tensor", name, r, c, tensor.data());
    }
    writeln!(text, "adam_t {}", cp.adam.t).expect("string write");
    for (name, m) in &cp.adam.m {
        write_matrix(&mut text, "adam_m", name, 1, m.len(), m);
    }
    for (name, v) in &cp.adam.v {
        write_matrix(&mut text, "adam_v", name, 1, v.len(), v);
    }
    std::fs::write(path, text).map_err(|e| CliError::io("cannot write checkpoint", path, e))
}

fn write_matrix(text: &mut String, tag: &str, name: &str, rows: usize, cols: usize, data: &[f64]) {
    writeln!(text, "{tag} {name} {rows} {cols}").expect("string write");
    for row in data.chunks(cols.max(1)) {
        let mut line = String::with_capacity(row.len() * 24);
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            write!(line, "{v}").expect("string write");
        }
        text.push_str(&line);
        text.push('\n');
    }
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io("cannot read checkpoint", path, e))?;
    parse(&text).map_err(|msg| CliError::Data(format!("{}: {msg}", path.display())))
}

fn parse(text: &str) -> std::result::Result<Checkpoint, String> {
    let mut lines = text.lines().enumerate().peekable();
    let (_, first) = lines.next().ok_or("empty checkpoint")?;
    if first.trim() != MAGIC {
        return Err(format!("bad header `{first}` (expected `{MAGIC}`)"));
    }
    let mut iteration: Option<u64> = None;
    let mut variant: Option<Variant> = None;
    let mut store = ParamStore::new();
    let mut adam = AdamState::new();

    while let Some((lineno, line)) = lines.next() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tag = parts.next().unwrap();
        match tag {
            "iteration" => {
                iteration = Some(
                    parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or(format!("line {}: bad iteration", lineno + 1))?,
                );
            }
            "adam_t" => {
                adam.t = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or(format!("line {}: bad adam_t", lineno + 1))?;
            }
            "variant" => {
                let name = parts.next().ok_or(format!("line {}: missing variant", lineno + 1))?;
                variant = Some(
                    Variant::from_name(name)
                        .ok_or(format!("line {}: unknown variant `{name}`", lineno + 1))?,
                );
            }
            "tensor" | "adam_m" | "adam_v" => {
                let name = parts
                    .next()
                    .ok_or(format!("line {}: missing name", lineno + 1))?
                    .to_string();
                let rows: usize = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or(format!("line {}: bad rows", lineno + 1))?;
                let cols: usize = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or(format!("line {}: bad cols", lineno + 1))?;
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let (vlineno, vline) = lines
                        .next()
                        .ok_or(format!("truncated values for `{name}`"))?;
                    for field in vline.split_whitespace() {
                        data.push(field.parse::<f64>().map_err(|_| {
                            format!("line {}: bad value `{field}`", vlineno + 1)
                        })?);
                    }
                }
                if data.len() != rows * cols {
                    return Err(format!(
                        "`{name}`: {} values for a {rows}x{cols} matrix",
                        data.len()
                    ));
                }
                match tag {
                    "tensor" => {
                        let t = Tensor::matrix(rows, cols, data)
                            .map_err(|e| e.message().to_string())?;
                        store.insert(&name, t).map_err(|e| e.message().to_string())?;
                    }
                    "adam_m" => {
                        adam.m.insert(name, data);
                    }
                    _ => {
                        adam.v.insert(name, data);
                    }
                }
            }
            other => return Err(format!("line {}: unknown record `{other}`", lineno + 1)),
        }
    }
    Ok(Checkpoint {
        iteration: iteration.ok_or("missing iteration record")?,
        variant: variant.ok_or("missing variant record")?,
        store,
        adam,
    })
}

/// Verifies that a loaded checkpoint matches the parameter layout the
/// configuration would create; dimension mismatches report both shapes.
pub fn check_compatible(cp: &Checkpoint, pipeline: &PipelineConfig) -> Result<()> {
    let expected = init_params(pipeline)?;
    for (name, tensor) in expected.iter() {
        let Ok(loaded) = cp.store.get(name) else {
            return Err(CliError::Config(format!(
                "checkpoint is missing parameter `{name}` required by the config"
            )));
        };
        if loaded.shape() != tensor.shape() {
            return Err(CliError::Config(format!(
                "checkpoint parameter `{name}` has shape {:?} but the config expects {:?}",
                loaded.shape(),
                tensor.shape()
            )));
        }
    }
    for (name, _) in cp.store.iter() {
        if expected.get(name).is_err() {
            return Err(CliError::Config(format!(
                "checkpoint parameter `{name}` does not exist in the configured model"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use bfg_core::fewshot::PipelineConfig;

    fn tiny_pipeline() -> PipelineConfig {
        let mut p = PipelineConfig::default();
        p.embedder.edgeconv_widths = vec![4];
        p.embedder.head_widths = vec![4];
        p.embedder.feature_dim = 4;
        p.embedder.knn_k = 3;
        p
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cp.txt");
        let pipeline = tiny_pipeline();
        let store = init_params(&pipeline).unwrap();
        let mut adam = AdamState::new();
        adam.t = 3;
        adam.m.insert("spa.fc1.weight".into(), vec![0.1, -0.25, 1e-17, 2.5e300]);
        adam.v.insert("spa.fc1.weight".into(), vec![0.0, 0.5, 3.0, -0.0]);
        let cp = Checkpoint {
            iteration: 42,
            variant: Variant::Spgen,
            store,
            adam,
        };
        save(&cp, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back, cp);
    }

    #[test]
    fn dimension_mismatch_reports_both_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cp.txt");
        let pipeline = tiny_pipeline();
        let cp = Checkpoint {
            iteration: 0,
            variant: Variant::FullBfg,
            store: init_params(&pipeline).unwrap(),
            adam: AdamState::new(),
        };
        save(&cp, &path).unwrap();
        let loaded = load(&path).unwrap();
        let mut fatter = tiny_pipeline();
        fatter.embedder.feature_dim = 8;
        fatter.embedder.head_widths = vec![8];
        let err = check_compatible(&loaded, &fatter).unwrap_err();
        assert_eq!(err.kind(), "config");
        assert!(err.message().contains("[1, 4]") || err.message().contains("[4, 4]"), "{err}");
        assert!(err.message().contains("8"), "{err}");
    }

    #[test]
    fn corrupted_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cp.txt");
        std::fs::write(&path, "not a checkpoint\n").unwrap();
        let err = load(&path).unwrap_err();
        assert_eq!(err.kind(), "data");
        assert!(err.message().contains("bad header"), "{err}");
    }
}
