//! Labeled-cloud text files: UTF-8, one point per line with 7
//! whitespace-separated fields `x y z r g b label`; `#` starts a
//! comment line; blank lines are ignored.

use std::fmt::Write as _;
use std::path::Path;

use bfg_core::cloud::LabeledCloud;

use crate::error::{CliError, Result};

pub fn write_cloud(cloud: &LabeledCloud, path: &Path) -> Result<()> {
    let mut text = String::with_capacity(cloud.len() * 64);
    text.push_str("# x y z r g b label\n");
    for i in 0..cloud.len() {
        let p = cloud.coords[i];
        let c = cloud.colors[i];
        writeln!(
            text,
            "{:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {}",
            p[0], p[1], p[2], c[0], c[1], c[2], cloud.labels[i]
        )
        .expect("string write");
    }
    std::fs::write(path, text).map_err(|e| CliError::io("cannot write cloud", path, e))
}

pub fn read_cloud(path: &Path) -> Result<LabeledCloud> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::io("cannot read cloud", path, e))?;
    parse_cloud(&text).map_err(|msg| CliError::Data(format!("{}: {msg}", path.display())))
}

fn parse_cloud(text: &str) -> std::result::Result<LabeledCloud, String> {
    let mut coords = Vec::new();
    let mut colors = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(format!(
                "line {}: expected 7 fields `x y z r g b label`, got {}",
                lineno + 1,
                fields.len()
            ));
        }
        let num = |s: &str, what: &str| -> std::result::Result<f64, String> {
            s.parse::<f64>()
                .map_err(|_| format!("line {}: bad {what} `{s}`", lineno + 1))
        };
        coords.push([
            num(fields[0], "x")?,
            num(fields[1], "y")?,
            num(fields[2], "z")?,
        ]);
        colors.push([
            num(fields[3], "r")?,
            num(fields[4], "g")?,
            num(fields[5], "b")?,
        ]);
        labels.push(
            fields[6]
                .parse::<usize>()
                .map_err(|_| format!("line {}: bad label `{}`", lineno + 1, fields[6]))?,
        );
    }
    LabeledCloud::new(coords, Some(colors), labels).map_err(|e| e.message().to_string())
}
