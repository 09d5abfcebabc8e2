//! End-to-end checks of the command-line surface: exit codes, RESULT
//! lines, file formats, and byte-for-byte reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn adml(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adml"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();

    let out = adml(
        &["gen", "--out", "data.csv", "--n-per-class", "400", "--seed", "5"],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("RESULT verb=gen n=800 d=3"));

    // train twice: identical flags give identical bytes
    let train_args = [
        "train", "--data", "data.csv", "--out", "model.txt", "--subset-size", "200",
        "--workers", "2", "--seed", "3",
    ];
    let out = adml(&train_args, dir);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("RESULT verb=train algo=adml2 d=3 q=2 k=4"));
    let first = std::fs::read(dir.join("model.txt")).unwrap();
    let header = String::from_utf8_lossy(&first);
    assert!(header.starts_with("ADML-MODEL v1\nd=3 q=2 algo=adml2\n"));
    let out = adml(&train_args, dir);
    assert!(out.status.success());
    assert_eq!(first, std::fs::read(dir.join("model.txt")).unwrap());

    let out = adml(
        &["train", "--data", "data.csv", "--out", "wholistic.txt", "--algo", "ddml"],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));

    let out = adml(
        &[
            "eval", "--task", "knn", "--data", "data.csv", "--test", "data.csv", "--model",
            "model.txt", "--k", "3", "--report", "report.csv",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let line = stdout(&out);
    assert!(line.contains("task=knn k=3 n_test=800 accuracy="));
    let report = std::fs::read_to_string(dir.join("report.csv")).unwrap();
    assert!(report.starts_with("task,k,n_test,accuracy\n"));

    let out = adml(
        &[
            "bounds", "--data", "data.csv", "--model", "model.txt", "--wholistic-model",
            "wholistic.txt", "--subset-size", "200", "--seed", "3", "--csv", "bounds.csv",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("lhs=") && text.contains("flag1="));
    assert!(text.contains("RESULT verb=bounds k=4"));
    let csv = std::fs::read_to_string(dir.join("bounds.csv")).unwrap();
    assert!(csv.starts_with("k,lhs,"));
    assert_eq!(csv.lines().count(), 2);

    let out = adml(
        &[
            "hist", "--data", "data.csv", "--model", "model.txt", "--pairs", "2000", "--bins",
            "25", "--out", "hist.csv",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let hist = std::fs::read_to_string(dir.join("hist.csv")).unwrap();
    assert!(hist.starts_with("bin_lo,bin_hi,count_within,count_between\n"));
    assert_eq!(hist.lines().count(), 26);

    let out = adml(
        &["project", "--data", "data.csv", "--model", "model.txt", "--out", "proj.csv"],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let proj = std::fs::read_to_string(dir.join("proj.csv")).unwrap();
    assert!(proj.starts_with("label,p1,p2\n"));
    assert_eq!(proj.lines().count(), 801);

    let out = adml(
        &["split", "--data", "data.csv", "--k", "5", "--seed", "2", "--out", "plan.csv"],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let plan = std::fs::read_to_string(dir.join("plan.csv")).unwrap();
    assert!(plan.starts_with("sample_id,subset\n"));
    assert_eq!(plan.lines().count(), 801);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = adml(&["gen", "--out", "x.csv", "--frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--frobnicate"));

    let out = adml(&["definitely-not-a-verb"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one_with_cause() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let out = adml(
        &["gen", "--out", "data.csv", "--n-per-class", "150", "--seed", "1"],
        dir,
    );
    assert!(out.status.success());
    let out = adml(
        &["train", "--data", "data.csv", "--out", "m.txt", "--subset-size", "100"],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let out = adml(
        &["train", "--data", "data.csv", "--out", "w.txt", "--algo", "ddml"],
        dir,
    );
    assert!(out.status.success());

    // dense diagnostics refused below the cap: exit 1, cause named
    let out = adml(
        &[
            "bounds", "--data", "data.csv", "--model", "m.txt", "--wholistic-model", "w.txt",
            "--subset-size", "100", "--dense-cap", "2",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("MissingDense"),
        "stderr: {}",
        stderr(&out)
    );

    // unreadable data file: exit 1
    let out = adml(
        &["train", "--data", "no-such-file.csv", "--out", "m.txt"],
        dir,
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn normalization_is_shared_between_train_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let out = adml(
        &["gen", "--out", "data.csv", "--n-per-class", "300", "--seed", "11"],
        dir,
    );
    assert!(out.status.success());
    let out = adml(
        &[
            "train", "--data", "data.csv", "--out", "model.txt", "--subset-size", "150",
            "--normalize", "--seed", "4",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let out = adml(
        &[
            "eval", "--task", "knn", "--data", "data.csv", "--test", "data.csv", "--model",
            "model.txt", "--k", "3", "--normalize",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let line = stdout(&out);
    let accuracy: f64 = line
        .split("accuracy=")
        .nth(1)
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(accuracy > 0.9, "normalized pipeline accuracy {accuracy}");
}

#[test]
fn annotation_flow() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    // 1-D multilabel reference: tag 1 on the left half, tag 2 everywhere
    let mut csv = String::from("tags,f1\n");
    for i in 0..12 {
        let tags = if i < 6 { "1;2" } else { "2" };
        csv.push_str(&format!("{tags},{}.0\n", i));
    }
    std::fs::write(dir.join("ref.csv"), &csv).unwrap();
    std::fs::write(
        dir.join("test.csv"),
        "tags,f1\n1;2,0.2\n2,10.5\n1;2,1.4\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("identity.txt"),
        "ADML-MODEL v1\nd=1 q=1 algo=ddml\n1.0000000000000000e0\n",
    )
    .unwrap();
    let out = adml(
        &[
            "eval", "--task", "annotate", "--data", "ref.csv", "--test", "test.csv", "--model",
            "identity.txt", "--k", "3", "--report", "f1.csv",
        ],
        dir,
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let line = stdout(&out);
    assert!(line.contains("task=annotate k=3 n_test=3"));
    let report = std::fs::read_to_string(dir.join("f1.csv")).unwrap();
    assert!(report.starts_with("tag,f1\n"));
    assert!(report.lines().last().unwrap().starts_with("macro,"));
}
