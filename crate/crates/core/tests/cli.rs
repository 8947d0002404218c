use std::path::Path;
use std::process::{Command, Output};

use cmdnst::image::{Image, Pattern};

fn cmdnst(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmdnst"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CMDNST_WEIGHTS")
        .output()
        .unwrap()
}

fn images(dir: &Path) {
    Image::synthetic(Pattern::Scene, 40, 36, 0)
        .save(dir.join("c.png"))
        .unwrap();
    Image::synthetic(Pattern::Stripes, 40, 36, 1)
        .save(dir.join("s.png"))
        .unwrap();
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const QUICK: [&str; 8] = [
    "--content",
    "c.png",
    "--style",
    "s.png",
    "--encoder",
    "tiny",
    "--max-iters",
    "4",
];

#[test]
fn stylize_writes_image_trace_and_configs() {
    let dir = tempfile::tempdir().unwrap();
    images(dir.path());
    let mut args = vec![
        "stylize",
        "--loss",
        "cmd",
        "--K",
        "5",
        "--alpha",
        "0.2",
        "--out-dir",
        "run",
    ];
    args.extend(QUICK);
    let o = cmdnst(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("run");
    for f in ["out.png", "trace.csv", "config.json", "run.json", "manifest.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let out = Image::load(run.join("out.png")).unwrap();
    assert_eq!((out.height(), out.width()), (40, 36));
    let trace = std::fs::read_to_string(run.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("iteration,total,content,style"));
    assert_eq!(trace.lines().count(), 5);
}

#[test]
fn moments_flag_sets_the_weight_vector() {
    let dir = tempfile::tempdir().unwrap();
    images(dir.path());
    let mut args = vec!["stylize", "--moments", "0,1,1,1,0", "--out-dir", "run"];
    args.extend(QUICK);
    let o = cmdnst(&args, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("run/config.json")).unwrap()).unwrap();
    assert_eq!(cfg["loss"]["family"]["family"], "cmd");
    assert_eq!(
        cfg["loss"]["family"]["moment_weights"],
        serde_json::json!([0.0, 1.0, 1.0, 1.0, 0.0])
    );
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    images(dir.path());
    let mut args = vec![
        "stylize",
        "--loss",
        "ot",
        "--init",
        "noise",
        "--seed",
        "9",
        "--out-dir",
        "a",
    ];
    args.extend(QUICK);
    assert!(cmdnst(&args, dir.path()).status.success());
    let o = cmdnst(&["stylize", "--config", "a/config.json", "--out-dir", "b"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a/trace.csv"), read("b/trace.csv"));
    assert_eq!(read("a/config.json"), read("b/config.json"));
    assert_eq!(read("a/out.png"), read("b/out.png"));
}

#[test]
fn toy_writes_one_gap_row_per_family() {
    let dir = tempfile::tempdir().unwrap();
    let o = cmdnst(
        &["toy", "--losses", "cmd,mm", "--samples", "10000", "--out-dir", "toy"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let gaps = std::fs::read_to_string(dir.path().join("toy/gaps.csv")).unwrap();
    let rows: Vec<&str> = gaps.lines().collect();
    assert_eq!(
        rows[0],
        "family,gap_1,gap_2,gap_3,gap_4,gap_5,gap_6,total_gap,steps,final_loss"
    );
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("cmd_k5,") && rows[2].starts_with("mm,"));
    assert!(dir.path().join("toy/histograms.csv").exists());
    assert!(dir.path().join("toy/manifest.json").exists());
}

#[test]
fn usage_errors_exit_with_two_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    images(dir.path());
    let cases: Vec<Vec<&str>> = vec![
        vec!["stylize", "--bogus"],
        vec!["stylize", "--alpha", "1.5"],
        vec!["stylize", "--loss", "adain"],
        vec!["stylize", "--moments", "0,0,0"],
        vec!["stylize", "--K", "0"],
        vec!["stylize", "--style-layers", "conv4_1"],
        vec!["stylize", "--lr", "-1"],
        vec!["stylize", "--resize", "0x10"],
        vec!["toy", "--samples", "10"],
        vec!["toy", "--losses", "cmd:x"],
        vec!["bench", "--methods", "cmd,adain", "--encoder", "tiny"],
        vec!["sweep-lr", "--lrs", "0.1,0"],
    ];
    for mut args in cases {
        if args[0] != "toy" && args[0] != "bench" && args[1] != "--bogus" {
            args.extend(QUICK);
        }
        args.extend(["--out-dir", "never"]);
        let o = cmdnst(&args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty());
        assert!(!dir.path().join("never").exists(), "{args:?} created output");
    }
}

#[test]
fn vgg_without_weights_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    images(dir.path());
    let o = cmdnst(
        &["stylize", "--content", "c.png", "--style", "s.png", "--out-dir", "x"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("CMDNST_WEIGHTS"));
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    images(dir.path());
    let o = cmdnst(
        &[
            "stylize",
            "--content",
            "missing.png",
            "--style",
            "s.png",
            "--encoder",
            "tiny",
            "--out-dir",
            "x",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.png"), "{}", stderr(&o));
    let o = cmdnst(
        &[
            "stylize",
            "--content",
            "c.png",
            "--style",
            "s.png",
            "--weights",
            "nope.json",
            "--out-dir",
            "y",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("cmdnst: load:"), "{}", stderr(&o));
}

#[test]
fn sweeps_ablation_and_bench_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    images(dir.path());
    let runs: Vec<(Vec<&str>, &str, usize)> = vec![
        (vec!["sweep-alpha", "--alphas", "0.5,0"], "sweep.csv", 3),
        (vec!["sweep-lr", "--lrs", "0.1,0.2,0.3"], "sweep.csv", 4),
        (vec!["ablate", "--K", "3"], "ablation.csv", 7),
        (vec!["ablate", "--vectors", "1,0,0;0,1,1;1,0,0"], "ablation.csv", 3),
    ];
    for (mut args, table, lines) in runs {
        args.extend(QUICK);
        args.extend(["--out-dir", "o"]);
        let o = cmdnst(&args, dir.path());
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        let t = std::fs::read_to_string(dir.path().join("o").join(table)).unwrap();
        assert_eq!(t.lines().count(), lines, "{args:?}");
        std::fs::remove_dir_all(dir.path().join("o")).unwrap();
    }
    let o = cmdnst(
        &[
            "bench",
            "--encoder",
            "tiny",
            "--size",
            "32",
            "--iters",
            "2",
            "--repeats",
            "2",
            "--out-dir",
            "b",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let t = std::fs::read_to_string(dir.path().join("b/bench.csv")).unwrap();
    assert!(t.starts_with("method,image_size,iterations,repeats,mean_seconds,std_seconds,hardware"));
    assert_eq!(t.lines().count(), 3);
}

#[test]
fn convert_weights_accepts_torchvision_names() {
    use cmdnst::encoder::{archive::TensorArchive, random_archive, Architecture};
    use safetensors::tensor::{serialize_to_file, Dtype, TensorView};
    const INDEX: [(&str, usize); 13] = [
        ("conv1_1", 0),
        ("conv1_2", 2),
        ("conv2_1", 5),
        ("conv2_2", 7),
        ("conv3_1", 10),
        ("conv3_2", 12),
        ("conv3_3", 14),
        ("conv3_4", 16),
        ("conv4_1", 19),
        ("conv4_2", 21),
        ("conv4_3", 23),
        ("conv4_4", 25),
        ("conv5_1", 28),
    ];
    let dir = tempfile::tempdir().unwrap();
    let original = random_archive(Architecture::Vgg19, 1);
    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = INDEX
        .iter()
        .flat_map(|(layer, idx)| {
            ["weight", "bias"].map(|part| {
                let t = &original.tensors[&format!("{layer}.{part}")];
                let raw = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
                (format!("model.features.{idx}.{part}"), t.shape.clone(), raw)
            })
        })
        .collect();
    let views: Vec<(String, TensorView)> = bytes
        .iter()
        .map(|(k, shape, raw)| (k.clone(), TensorView::new(Dtype::F32, shape.clone(), raw).unwrap()))
        .collect();
    serialize_to_file(views, None, &dir.path().join("vgg.safetensors")).unwrap();
    let o = cmdnst(
        &[
            "convert-weights",
            "--input",
            "vgg.safetensors",
            "--output",
            "vgg19.json",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(TensorArchive::read(dir.path().join("vgg19.json")).unwrap(), original);

    let o = cmdnst(
        &["convert-weights", "--input", "c.png", "--output", "x.json"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
}
