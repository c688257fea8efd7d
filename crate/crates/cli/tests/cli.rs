//! End-to-end tests of the `bfg` binary: artifact layout, exit codes,
//! one-line error reporting, and bit-exact determinism of reruns.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use bfg_cli::ply::ply_vertex_count;

const CONFIG: &str = r#"
[data]
scenes = 12
points_per_scene = 8192
n_points = 128
min_points = 15

[embedder]
edgeconv_widths = [8, 8]
head_widths = [8]
feature_dim = 8
knn_k = 4

[trainer]
iterations = 6
checkpoint_every = 4

[eval]
episodes = 3
"#;

fn bfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bfg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// One-line machine-parseable stderr: `error: <kind>: <message>`.
fn stderr_line(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stderr).into_owned();
    let mut lines = text.lines();
    let first = lines.next().unwrap_or_default().to_string();
    assert_eq!(lines.next(), None, "stderr must be a single line: {text:?}");
    assert!(first.starts_with("error: "), "unexpected stderr: {first}");
    first
}

/// Shared dataset + trained run, generated once per test process.
struct Fixture {
    #[allow(dead_code)]
    keep: tempfile::TempDir,
    config: PathBuf,
    data: PathBuf,
    run: PathBuf,
}

fn fixture() -> &'static Fixture {
    static FIX: OnceLock<Fixture> = OnceLock::new();
    FIX.get_or_init(|| {
        let keep = tempfile::tempdir().expect("tempdir");
        let config = keep.path().join("config.toml");
        std::fs::write(&config, CONFIG).expect("write config");
        let data = keep.path().join("data");
        let run = keep.path().join("run");
        assert_ok(&bfg(&[
            "gen-data",
            "--config",
            config.to_str().unwrap(),
            "--out",
            data.to_str().unwrap(),
        ]));
        assert_ok(&bfg(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            run.to_str().unwrap(),
        ]));
        Fixture { keep, config, data, run }
    })
}

fn cfg_arg(f: &Fixture) -> &str {
    f.config.to_str().unwrap()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn help_lists_every_config_key_with_its_default() {
    let out = bfg(&["--help"]);
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    for section in ["[data]", "[embedder]", "[bfg]", "[trainer]", "[eval]"] {
        assert!(text.contains(section), "missing {section}");
    }
    for key in [
        "scenes = 12",
        "classes_per_scene = 2",
        "points_per_scene = 8192",
        "block_size = 4.0",
        "n_points = 512",
        "min_points = 100",
        "way = 2",
        "shot = 1",
        "feature_dim = 64",
        "knn_k = 16",
        "lambda = 0.85",
        "xi = 0.5",
        "k_prototypes = 5",
        "temperature = 10.0",
        "variant = \"full_bfg\"",
        "iterations = 500",
        "lr_embedder = 0.0001",
        "lr_rest = 0.001",
        "episodes = 100",
        "seed = 777",
    ] {
        assert!(text.contains(key), "missing default for {key}");
    }
    for sub in ["gen-data", "train", "eval", "ablate", "sweep", "export-viz"] {
        assert!(text.contains(sub), "missing subcommand {sub}");
    }
}

#[test]
fn gen_data_reruns_are_byte_identical_and_seeds_are_recorded() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let again = dir.path().join("data");
    assert_ok(&bfg(&[
        "gen-data",
        "--config",
        cfg_arg(f),
        "--out",
        again.to_str().unwrap(),
    ]));
    assert_eq!(
        read(&f.data.join("manifest.toml")),
        read(&again.join("manifest.toml"))
    );
    assert_eq!(
        read(&f.data.join("scenes/scene_0000.txt")),
        read(&again.join("scenes/scene_0000.txt"))
    );

    let other = dir.path().join("data5");
    assert_ok(&bfg(&[
        "gen-data",
        "--config",
        cfg_arg(f),
        "--out",
        other.to_str().unwrap(),
        "--seed",
        "5",
    ]));
    assert!(read(&other.join("config.toml")).contains("seed = 5"));
    assert_ne!(
        read(&f.data.join("scenes/scene_0000.txt")),
        read(&other.join("scenes/scene_0000.txt"))
    );
}

#[test]
fn train_writes_periodic_and_final_checkpoints_and_a_rerun_matches() {
    let f = fixture();
    assert!(f.run.join("checkpoint_000004.txt").exists());
    assert!(f.run.join("checkpoint_000006.txt").exists());
    let trace = read(&f.run.join("loss.csv"));
    assert!(trace.starts_with("iteration,loss\n"));
    assert_eq!(trace.lines().count(), 7, "header plus one row per iteration");

    let dir = tempfile::tempdir().unwrap();
    let rerun = dir.path().join("run");
    assert_ok(&bfg(&[
        "train",
        "--config",
        cfg_arg(f),
        "--data",
        f.data.to_str().unwrap(),
        "--out",
        rerun.to_str().unwrap(),
    ]));
    assert_eq!(trace, read(&rerun.join("loss.csv")));
    assert_eq!(
        read(&f.run.join("checkpoint_000006.txt")),
        read(&rerun.join("checkpoint_000006.txt"))
    );
}

#[test]
fn interrupted_training_resumes_to_the_same_bytes() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_ok(&bfg(&[
        "train",
        "--config",
        cfg_arg(f),
        "--data",
        f.data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--iterations",
        "4",
    ]));
    assert_ok(&bfg(&[
        "train",
        "--config",
        cfg_arg(f),
        "--data",
        f.data.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--resume",
    ]));
    assert_eq!(
        read(&f.run.join("checkpoint_000006.txt")),
        read(&run.join("checkpoint_000006.txt"))
    );
    assert_eq!(read(&f.run.join("loss.csv")), read(&run.join("loss.csv")));
}

#[test]
fn resume_without_a_checkpoint_is_a_data_error() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = bfg(&[
        "train",
        "--config",
        cfg_arg(f),
        "--data",
        f.data.to_str().unwrap(),
        "--out",
        dir.path().join("fresh").to_str().unwrap(),
        "--resume",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_line(&out).starts_with("error: data: no checkpoint found"));
}

#[test]
fn eval_reruns_are_byte_identical_and_record_the_protocol() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = f.run.join("checkpoint_000006.txt");
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        assert_ok(&bfg(&[
            "eval",
            "--config",
            cfg_arg(f),
            "--data",
            f.data.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]));
        outputs.push(read(&out_dir.join("eval.csv")));
    }
    assert_eq!(outputs[0], outputs[1]);
    for line in ["eval_seed,777", "fold,s0", "side,test", "episodes,3", "checkpoint_iteration,6"] {
        assert!(outputs[0].contains(line), "missing {line} in eval.csv");
    }
}

#[test]
fn eval_on_zero_episodes_is_a_config_error_not_an_empty_report() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = bfg(&[
        "eval",
        "--config",
        cfg_arg(f),
        "--data",
        f.data.to_str().unwrap(),
        "--checkpoint",
        f.run.join("checkpoint_000006.txt").to_str().unwrap(),
        "--out",
        dir.path().join("e").to_str().unwrap(),
        "--episodes",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error: config:"));
    assert!(!dir.path().join("e/eval.csv").exists());
}

#[test]
fn missing_dataset_and_unknown_config_key_map_to_their_exit_codes() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = bfg(&[
        "eval",
        "--config",
        cfg_arg(f),
        "--data",
        dir.path().join("nowhere").to_str().unwrap(),
        "--checkpoint",
        f.run.join("checkpoint_000006.txt").to_str().unwrap(),
        "--out",
        dir.path().join("e").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_line(&out).starts_with("error: data:"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[data]\nscenes = 6\nwarp_factor = 9\n").unwrap();
    let out = bfg(&[
        "gen-data",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("d").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let line = stderr_line(&out);
    assert!(line.starts_with("error: config:"));
    assert!(line.contains("warp_factor"), "error should name the key: {line}");

    let out = bfg(&[
        "train",
        "--config",
        cfg_arg(f),
        "--data",
        f.data.to_str().unwrap(),
        "--out",
        dir.path().join("t").to_str().unwrap(),
        "--variant",
        "mega_bfg",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).contains("mega_bfg"));

    let out = bfg(&["train", "--nonsense"]);
    assert_eq!(out.status.code(), Some(2));
    stderr_line(&out);
}

#[test]
fn checkpoint_shape_mismatch_reports_both_shapes() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let wide = dir.path().join("wide.toml");
    std::fs::write(&wide, CONFIG.replace("feature_dim = 8", "feature_dim = 16")).unwrap();
    let out = bfg(&[
        "eval",
        "--config",
        wide.to_str().unwrap(),
        "--data",
        f.data.to_str().unwrap(),
        "--checkpoint",
        f.run.join("checkpoint_000006.txt").to_str().unwrap(),
        "--out",
        dir.path().join("e").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let line = stderr_line(&out);
    assert!(
        line.contains("8") && line.contains("16"),
        "both shapes should appear: {line}"
    );
}

#[test]
fn ablate_emits_the_four_variant_ladder() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("abl");
    assert_ok(&bfg(&[
        "ablate",
        "--config",
        cfg_arg(f),
        "--data",
        f.data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--iterations",
        "2",
        "--episodes",
        "2",
    ]));
    let csv = read(&out_dir.join("ablation.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,miou,delta,cum_delta");
    assert_eq!(lines.len(), 5);
    for (line, variant) in lines[1..]
        .iter()
        .zip(["baseline", "spgen", "spgen+po2prg", "full_bfg"])
    {
        assert!(line.starts_with(&format!("{variant},")), "{line}");
    }
}

#[test]
fn sweep_emits_one_row_per_value_and_rejects_unknown_parameters() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sweep");
    assert_ok(&bfg(&[
        "sweep",
        "--config",
        cfg_arg(f),
        "--data",
        f.data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--param",
        "measure_combo",
        "--values",
        "N+N,N+IP",
        "--iterations",
        "2",
        "--episodes",
        "2",
    ]));
    let csv = read(&out_dir.join("sweep.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "param,value,miou");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("measure_combo,N+N,"));
    assert!(lines[2].starts_with("measure_combo,N+IP,"));

    let out = bfg(&[
        "sweep",
        "--config",
        cfg_arg(f),
        "--data",
        f.data.to_str().unwrap(),
        "--out",
        dir.path().join("s2").to_str().unwrap(),
        "--param",
        "depth",
        "--values",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).contains("depth"));
}

#[test]
fn export_viz_writes_paired_plys_with_equal_vertex_counts() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("viz");
    let run = |out_dir: &Path| {
        assert_ok(&bfg(&[
            "export-viz",
            "--config",
            cfg_arg(f),
            "--data",
            f.data.to_str().unwrap(),
            "--checkpoint",
            f.run.join("checkpoint_000006.txt").to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--episode-seed",
            "5",
        ]));
    };
    run(&out_dir);
    let gt = out_dir.join("gt.ply");
    let pred = out_dir.join("pred.ply");
    let n_gt = ply_vertex_count(&gt).unwrap();
    let n_pred = ply_vertex_count(&pred).unwrap();
    assert_eq!(n_gt, n_pred);
    assert_eq!(n_gt, 128, "one full sampled block");
    assert!(read(&gt).contains("comment episode seed (5, 0)"));

    let again = dir.path().join("viz2");
    run(&again);
    assert_eq!(read(&gt), read(&again.join("gt.ply")));
    assert_eq!(read(&pred), read(&again.join("pred.ply")));
}
