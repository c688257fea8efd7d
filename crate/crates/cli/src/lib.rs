//! Command-line front end for the point-cloud few-shot segmentation
//! pipeline: dataset generation, training, evaluation, the module
//! ablation ladder, hyper-parameter sweeps, and PLY visualization
//! export. File formats and exit codes live here; all numerics live in
//! `bfg-core`.

pub mod checkpoint;
pub mod cloudfile;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod ply;
pub mod reports;
