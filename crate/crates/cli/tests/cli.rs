use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn logitrank(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_logitrank"))
        .current_dir(dir)
        .env("LOGITRANK_OUT", ".")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn make_model_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["--kind", "copying", "--n", "3", "--c", "20"],
        &["--kind", "noisy-parity", "--y", "1,0,1", "--p", "0.1"],
        &[
            "--kind",
            "random",
            "--d",
            "2",
            "--alphabet",
            "3",
            "--horizon",
            "4",
        ],
        &[
            "--kind",
            "rank-one-emission",
            "--d",
            "3",
            "--alphabet",
            "3",
            "--horizon",
            "6",
        ],
        &[
            "--kind",
            "ssm",
            "--alphabet",
            "2",
            "--horizon",
            "4",
            "--ssm-dims",
            "2,2,2",
        ],
    ];
    for (i, extra) in cases.iter().enumerate() {
        let name = format!("m{i}.lrk");
        let mut args = vec!["make-model"];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["-o", &name]);
        let o = logitrank(dir.path(), &args);
        assert_eq!(
            code(&o),
            0,
            "{extra:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        logitrank::model::load_model(dir.path().join(&name)).unwrap();
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&logitrank(p, &["make-model", "--kind", "bogus"])), 2);
    assert_eq!(
        code(&logitrank(
            p,
            &[
                "make-model",
                "--kind",
                "noisy-parity",
                "--y",
                "1,2",
                "--p",
                "0.1"
            ]
        )),
        2
    );
    assert_eq!(
        code(&logitrank(
            p,
            &[
                "build-matrix",
                "--model",
                "missing.lrk",
                "--histories",
                "all:1",
                "--futures",
                "closure:1"
            ]
        )),
        1
    );

    let o = logitrank(
        p,
        &[
            "make-model",
            "--kind",
            "random",
            "--d",
            "3",
            "--alphabet",
            "3",
            "--horizon",
            "4",
            "-o",
            "m.lrk",
        ],
    );
    assert_eq!(code(&o), 0);
    // rank 3 model against a rank cap of 1
    assert_eq!(
        code(&logitrank(
            p,
            &["steal", "--model", "m.lrk", "--d-max", "1"]
        )),
        3
    );

    let mut bytes = fs::read(p.join("m.lrk")).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x40;
    fs::write(p.join("bad.lrk"), bytes).unwrap();
    let o = logitrank(p, &["verify", "--quick", "--model", "bad.lrk"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));
}

#[test]
fn csv_artifacts_start_with_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(
        code(&logitrank(
            p,
            &[
                "make-model",
                "--kind",
                "random",
                "--d",
                "2",
                "--alphabet",
                "2",
                "--horizon",
                "5",
                "-o",
                "m.lrk"
            ]
        )),
        0
    );
    assert_eq!(
        code(&logitrank(
            p,
            &[
                "build-matrix",
                "--model",
                "m.lrk",
                "--histories",
                "all:2",
                "--futures",
                "closure:2",
                "-o",
                "m.elm"
            ]
        )),
        0
    );
    assert_eq!(code(&logitrank(p, &["analyze", "--matrix", "m.elm"])), 0);
    let text = fs::read_to_string(p.join("analysis/singvals.csv")).unwrap();
    let first = text.lines().next().unwrap();
    let meta: serde_json::Value = serde_json::from_str(first.strip_prefix("# ").unwrap()).unwrap();
    assert_eq!(meta["command"], "analyze");
    assert_eq!(meta["tool"], "logitrank");
    let m = logitrank::logit_matrix::load(p.join("m.elm")).unwrap();
    assert_eq!(m.nrows(), 4);
}

#[test]
fn out_dir_flag_and_env() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(
        code(&logitrank(p, &["--out-dir", "a", "verify", "--quick"])),
        0
    );
    assert!(p.join("a/verify/verify.json").exists());
    let o = Command::new(env!("CARGO_BIN_EXE_logitrank"))
        .current_dir(p)
        .env("LOGITRANK_OUT", "b")
        .args(["verify", "--quick"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(p.join("b/verify/verify.json").exists());
}
