//! Black-box checks of the command-line contract: exit codes, the seed
//! override, and the recommend output shape.

use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use srgformer_core::{save_modal_features, DenseMatrix};

fn srgf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srgformer"))
        .args(args)
        .env_remove("SRGF_SEED")
        .output()
        .expect("spawn")
}

fn write_fixture(dir: &Path) {
    use std::fmt::Write as _;
    let mut tsv = String::new();
    for u in 0..8usize {
        for j in 0..10usize {
            writeln!(tsv, "u{u}\ti{}\t{}", (u + j) % 12, 100 + j).unwrap();
        }
    }
    std::fs::write(dir.join("interactions.tsv"), tsv).unwrap();
    let fdir = dir.join("features");
    std::fs::create_dir_all(&fdir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (tag, dim) in [("visual", 4), ("textual", 3)] {
        let values = (0..12 * dim).map(|_| rng.gen_range(-1.0..1.0f64)).collect();
        let m = DenseMatrix::from_values(12, dim, values).unwrap();
        save_modal_features(&fdir.join(format!("features.{tag}.fmat")), &m).unwrap();
    }
}

#[test]
fn usage_errors_exit_one() {
    let out = srgf(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
    let out = srgf(&["train"]); // missing required flags
    assert_eq!(out.status.code(), Some(1));
    let out = srgf(&["prepare", "--interactions", "x", "--out", "y", "--ratios", "bad"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let out = srgf(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let out = srgf(&["recommend", "--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = srgf(&[
        "prepare",
        "--interactions",
        dir.path().join("missing.tsv").to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // malformed log line
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "only-one-field\n").unwrap();
    let out = srgf(&[
        "prepare",
        "--interactions",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("out2").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_seed_override_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let data = dir.path().join("data");
    let out = srgf(&[
        "prepare",
        "--interactions",
        dir.path().join("interactions.tsv").to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_srgformer"))
        .args([
            "train",
            "--data",
            data.to_str().unwrap(),
            "--features",
            dir.path().join("features").to_str().unwrap(),
            "--out",
            dir.path().join("m.srgf").to_str().unwrap(),
        ])
        .env("SRGF_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn recommend_prints_ranked_items_and_rejects_unknown_users() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let data = dir.path().join("data");
    let model = dir.path().join("m.srgf");
    let features = dir.path().join("features");
    let common = [
        "--embedding-dim",
        "8",
        "--heads",
        "2",
        "--max-epochs",
        "1",
        "--batch-size",
        "64",
    ];
    assert!(srgf(&[
        "prepare",
        "--interactions",
        dir.path().join("interactions.tsv").to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ])
    .status
    .success());
    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--features",
        features.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
    ];
    args.extend_from_slice(&common);
    assert!(srgf(&args).status.success());

    let mut args = vec![
        "recommend",
        "--data",
        data.to_str().unwrap(),
        "--features",
        features.to_str().unwrap(),
        "--checkpoint",
        model.to_str().unwrap(),
        "--user",
        "u0",
        "--n",
        "3",
    ];
    args.extend_from_slice(&common);
    let out = srgf(&args);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 3);
    for (i, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 3, "line {line:?}");
        assert_eq!(fields[0], (i + 1).to_string());
        assert!(fields[1].starts_with('i'));
        fields[2].parse::<f64>().unwrap();
    }

    let mut args = vec![
        "recommend",
        "--data",
        data.to_str().unwrap(),
        "--features",
        features.to_str().unwrap(),
        "--checkpoint",
        model.to_str().unwrap(),
        "--user",
        "nobody",
        "--n",
        "3",
    ];
    args.extend_from_slice(&common);
    let out = srgf(&args);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablation_report_lists_all_variants() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let data = dir.path().join("data");
    let features = dir.path().join("features");
    assert!(srgf(&[
        "prepare",
        "--interactions",
        dir.path().join("interactions.tsv").to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ])
    .status
    .success());
    let report = dir.path().join("ablation.tsv");
    let out = srgf(&[
        "ablate",
        "--data",
        data.to_str().unwrap(),
        "--features",
        features.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
        "--variants",
        "full,w/GT,w/h",
        "--dataset",
        "toy",
        "--embedding-dim",
        "8",
        "--heads",
        "2",
        "--max-epochs",
        "1",
        "--batch-size",
        "64",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let tsv = std::fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "variant\tdataset\tR@10\tR@20\tN@10\tN@20\tepoch\tseed");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("full\ttoy\t"));
    assert!(lines[2].starts_with("w/GT\ttoy\t"));
    assert!(lines[3].starts_with("w/h\ttoy\t"));
    assert!(dir.path().join("ablation.json").exists());
}
