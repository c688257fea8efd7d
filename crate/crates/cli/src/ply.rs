//! ASCII PLY export: query points colored by a fixed class palette, for
//! side-by-side ground-truth / prediction visualization.

use std::fmt::Write as _;
use std::path::Path;

use bfg_core::cloud::LabeledCloud;
use bfg_core::synth::class_base_color;

use crate::error::{CliError, Result};

/// Writes `cloud` as ASCII PLY with per-vertex colors taken from the
/// class palette over `labels` (which may differ from `cloud.labels`,
/// e.g. predictions). Each entry of `comments` becomes a header
/// `comment` line, so provenance such as the episode seed travels with
/// the file.
pub fn write_label_ply(
    cloud: &LabeledCloud,
    labels: &[usize],
    comments: &[String],
    path: &Path,
) -> Result<()> {
    if labels.len() != cloud.len() {
        return Err(CliError::Config(format!(
            "{} labels for {} vertices",
            labels.len(),
            cloud.len()
        )));
    }
    let mut text = String::with_capacity(cloud.len() * 48 + 256);
    text.push_str("ply\nformat ascii 1.0\n");
    for c in comments {
        writeln!(text, "comment {c}").expect("string write");
    }
    writeln!(text, "element vertex {}", cloud.len()).expect("string write");
    text.push_str(
        "property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         end_header\n",
    );
    for (p, &label) in cloud.coords.iter().zip(labels) {
        let c = class_base_color(label);
        writeln!(
            text,
            "{:.6} {:.6} {:.6} {} {} {}",
            p[0],
            p[1],
            p[2],
            (c[0] * 255.0).round() as u8,
            (c[1] * 255.0).round() as u8,
            (c[2] * 255.0).round() as u8
        )
        .expect("string write");
    }
    std::fs::write(path, text).map_err(|e| CliError::io("cannot write PLY", path, e))
}

/// Counts the vertices declared in a PLY header (used by tests and the
/// pairing check).
pub fn ply_vertex_count(path: &Path) -> Result<usize> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::io("cannot read PLY", path, e))?;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("element vertex ") {
            return rest
                .trim()
                .parse()
                .map_err(|_| CliError::Data(format!("{}: bad vertex count", path.display())));
        }
    }
    Err(CliError::Data(format!(
        "{}: no `element vertex` line",
        path.display()
    )))
}
