use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TOY: &str = r#"
seed = 4
method = "lips"
arch = "vgg_mini"
n_clients = 4
samples_per_client = 20
test_per_client = 10
rounds = 3
local_epochs = 1
batch_size = 10
metrics_t0 = 1

[lips]
k = 2

[dataset]
kind = "synthetic"
num_classes = 3
shape = [1, 4, 4]
n_per_class = 40
"#;

fn lipsfl(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lipsfl"))
        .args(args)
        .env("LIPSFL_OUTPUT_ROOT", root)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    fs::write(&path, text).unwrap();
    path
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn toy_run_writes_full_tree() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TOY);
    let out = tmp.path().join("out");
    let res = lipsfl(
        &[
            "run",
            cfg.to_str().unwrap(),
            "--output",
            out.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let names: Vec<String> = tree(&out).into_iter().map(|(n, _)| n).collect();
    assert_eq!(
        names,
        [
            "accuracy.csv",
            "config.toml",
            "cosine.csv",
            "gradnorm.csv",
            "summary.json"
        ]
    );
    let acc = fs::read_to_string(out.join("accuracy.csv")).unwrap();
    assert_eq!(acc.lines().count(), 4);
    // The echoed config reparses to the same experiment.
    let echoed =
        lipsfl::config::parse_config(&fs::read_to_string(out.join("config.toml")).unwrap())
            .unwrap();
    assert_eq!(echoed, lipsfl::config::parse_config(TOY).unwrap());
}

#[test]
fn repeated_runs_and_worker_counts_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TOY);
    let cfg = cfg.to_str().unwrap();
    let dirs: Vec<PathBuf> = (0..3).map(|i| tmp.path().join(format!("run{i}"))).collect();
    for (dir, workers) in dirs.iter().zip(["1", "1", "4"]) {
        let res = lipsfl(
            &[
                "run",
                cfg,
                "--output",
                dir.to_str().unwrap(),
                "--workers",
                workers,
            ],
            tmp.path(),
        );
        assert!(res.status.success());
    }
    assert_eq!(tree(&dirs[0]), tree(&dirs[1]));
    assert_eq!(tree(&dirs[0]), tree(&dirs[2]));
}

#[test]
fn default_output_uses_env_root_and_seed_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TOY);
    let res = lipsfl(&["run", cfg.to_str().unwrap(), "--seed", "9"], tmp.path());
    assert!(res.status.success());
    let dir = tmp.path().join("lips-seed9");
    assert_eq!(
        String::from_utf8_lossy(&res.stdout).trim(),
        dir.display().to_string()
    );
    assert!(fs::read_to_string(dir.join("config.toml"))
        .unwrap()
        .contains("seed = 9"));
}

#[test]
fn validate_reports_bad_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let good = write_config(tmp.path(), TOY);
    assert!(lipsfl(&["validate", good.to_str().unwrap()], tmp.path())
        .status
        .success());

    let bad = write_config(tmp.path(), &TOY.replace("k = 2", "k = 2\ntau0 = 1.5"));
    let res = lipsfl(&["validate", bad.to_str().unwrap()], tmp.path());
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("tau0"));
}

#[test]
fn failed_run_leaves_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = TOY.replace(
        "kind = \"synthetic\"\nnum_classes = 3\nshape = [1, 4, 4]\nn_per_class = 40",
        "kind = \"cifar10\"\npath = \"/nonexistent/cifar\"",
    );
    let cfg = write_config(
        tmp.path(),
        &missing.replace("arch = \"vgg_mini\"", "arch = \"mlp\""),
    );
    let out = tmp.path().join("out");
    let res = lipsfl(
        &[
            "run",
            cfg.to_str().unwrap(),
            "--output",
            out.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("data_batch_1.bin"));
    assert!(!out.exists());
    let leftovers: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(leftovers.len(), 1, "{leftovers:?}");
}
