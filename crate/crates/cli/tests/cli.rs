use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TOY: &str = "num_classes = 3
stage_widths = 4, 8, 16
input_h = 32
input_w = 32
gen_count = 12
epochs = 2
ablation_seeds = 1
bench_iters = 2
bench_warmup = 1
bench_h = 32
bench_w = 32
";

fn feanet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feanet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("toy.cfg"), TOY).unwrap();
    ok(&feanet(dir.path(), &["generate", "--config", "toy.cfg", "--out", "data"]));
    dir
}

#[test]
fn pipeline_writes_every_artifact_under_out() {
    let dir = setup();
    let root = dir.path();
    assert!(root.join("data/splits/train.txt").exists());
    assert!(root.join("data/lighting.txt").exists());

    let train = ok(&feanet(root, &["train", "--config", "toy.cfg", "--data", "data", "--out", "run"]));
    assert!(train.contains("checkpoint"), "{train}");
    for f in ["model.fean", "model.cfg", "train_log.csv"] {
        assert!(root.join("run").join(f).exists(), "{f}");
    }

    let eval = ok(&feanet(root, &["eval", "--config", "toy.cfg", "--data", "data", "--out", "run", "--split", "val"]));
    assert!(eval.lines().count() >= 4, "{eval}");
    assert!(root.join("run/eval_val.csv").exists());

    ok(&feanet(root, &["predict", "--config", "toy.cfg", "--data", "data", "--out", "run", "--limit", "2"]));
    let predicted = fs::read_dir(root.join("run/predict")).unwrap().count();
    assert_eq!(predicted, 8);

    let bench = ok(&feanet(root, &["bench", "--config", "toy.cfg", "--checkpoint", "run/model.fean"]));
    assert!(bench.contains("ms/image"), "{bench}");

    let mut top: Vec<_> = fs::read_dir(root).unwrap().map(|e| e.unwrap().file_name()).collect();
    top.sort();
    assert_eq!(top, ["data", "run", "toy.cfg"]);
}

#[test]
fn training_twice_gives_identical_files() {
    let dir = setup();
    let root = dir.path();
    for out in ["a", "b"] {
        ok(&feanet(root, &["train", "--config", "toy.cfg", "--data", "data", "--out", out, "--seed", "4"]));
    }
    for f in ["model.fean", "model.cfg", "train_log.csv"] {
        assert_eq!(fs::read(root.join("a").join(f)).unwrap(), fs::read(root.join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn ablation_writes_four_rows() {
    let dir = setup();
    let root = dir.path();
    let out = ok(&feanet(
        root,
        &["ablate", "--config", "toy.cfg", "--data", "data", "--out", "abl", "--set", "epochs=1"],
    ));
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(rows[0], "variant,macc,miou");
    let names: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(names, ["FRTS", "NFRS", "NFTS", "NFRTS"]);
    assert!(root.join("abl/ablation.csv").exists());
    assert_eq!(fs::read_to_string(root.join("abl/ablation_runs.csv")).unwrap().lines().count(), 5);
}

#[test]
fn missing_dataset_points_at_generate() {
    let dir = tempfile::tempdir().unwrap();
    let out = feanet(dir.path(), &["train", "--data", "nowhere"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("no dataset at nowhere") && err.contains("feanet generate"), "{err}");
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = feanet(dir.path(), &["bench", "--set", "stage_widths=8,4"]);
    assert_eq!(out.status.code(), Some(2));
    let out = feanet(dir.path(), &["bench", "--set", "colour=red"]);
    assert_eq!(out.status.code(), Some(2));
    let out = feanet(dir.path(), &["bench", "--variant", "xyz"]);
    assert!(!out.status.success());
}

#[test]
fn gradcheck_passes_and_catches_a_planted_fault() {
    let dir = tempfile::tempdir().unwrap();
    let good = feanet(dir.path(), &["gradcheck"]);
    let text = ok(&good);
    assert!(!text.contains("FAIL"), "{text}");
    let bad = feanet(dir.path(), &["gradcheck", "--inject-fault"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("gradient check failed"));
}
