//! End-to-end runs of the `subsurr` binary on the bar exemplar.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subsurr"))
        .args(args)
        .env("SUBSURR_LOG", "off")
        .output()
        .expect("binary runs")
}

fn config(dir: &Path, name: &str, v: Value) -> String {
    let p = dir.join(name);
    fs::write(&p, v.to_string()).unwrap();
    p.to_str().unwrap().to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Pipeline {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Pipeline {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        Pipeline { _tmp: tmp, root }
    }

    fn dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn generate(&self) -> PathBuf {
        let c = config(&self.root, "gen.json", json!({"exemplar": "bar1d", "options": {"n_steps": 5}}));
        let out = self.dir("gen");
        let o = run(&["--out", s(&out), "generate", &c]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        out.join("snapshots.bin")
    }
}

#[test]
fn pipeline_generate_pod_train_solve() {
    let p = Pipeline::new();
    let snaps = p.generate();
    assert!(snaps.is_file());

    let c = config(&p.root, "pod.json", json!({"snapshots": s(&snaps), "k": 1}));
    let pod = p.dir("pod");
    let o = run(&["--out", s(&pod), "pod", &c]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["phi_f.bin", "phi_u.bin", "phi_star.bin", "pod_energy.csv"] {
        assert!(pod.join(f).is_file(), "{f} missing");
    }

    let c = config(&p.root, "train.json", json!({"snapshots": s(&snaps), "form": "lls", "k": 2}));
    let tr = p.dir("train");
    let o = run(&["--seed", "3", "--out", s(&tr), "train", &c]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = manifest(&tr);
    assert_eq!(m["seed"], json!(3));
    for (name, digest) in m["outputs"].as_object().unwrap() {
        let bytes = fs::read(tr.join(name)).unwrap();
        let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(&hex, digest.as_str().unwrap(), "digest of {name}");
    }

    let model = tr.join("model.bin");
    let c = config(
        &p.root,
        "solve.json",
        json!({"exemplar": "bar1d", "options": {"n_steps": 5}, "closure": {"kind": "model", "path": s(&model)}}),
    );
    let sv = p.dir("solve");
    let o = run(&["--out", s(&sv), "solve", &c]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(sv.join("diagnostics.json").is_file() && sv.join("qoi.csv").is_file());

    let c = config(&p.root, "schur.json", json!({"exemplar": "bar1d", "options": {"n_steps": 5}, "closure": {"kind": "schur"}}));
    let o = run(&["--out", s(&p.dir("schur")), "solve", &c]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn analyze1d_runs_with_defaults() {
    let p = Pipeline::new();
    let out = p.dir("a");
    let o = run(&["--out", s(&out), "analyze1d"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(out.join("analysis1d.txt")).unwrap();
    assert!(!text.is_empty());
    assert!(out.join("analysis1d.json").is_file());
}

#[test]
fn usage_errors_exit_with_two() {
    let p = Pipeline::new();
    assert_eq!(code(&run(&[])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);

    let c = config(&p.root, "missing.json", json!({"snapshots": s(&p.dir("none.bin")), "form": "lls", "k": 1}));
    let o = run(&["--out", s(&p.dir("x")), "train", &c]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("none.bin"), "{}", stderr(&o));

    let snaps = p.generate();
    let c = config(&p.root, "form.json", json!({"snapshots": s(&snaps), "form": "linear", "k": 1}));
    let o = run(&["--out", s(&p.dir("y")), "train", &c]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("spsd-nn"), "{}", stderr(&o));

    let c = config(&p.root, "empty.json", json!({"exemplar": "bar1d", "train": []}));
    assert_eq!(code(&run(&["--out", s(&p.dir("z")), "generate", &c])), 2);

    let o = run(&["pod", s(&p.dir("no_such_config.json"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn singular_closure_exits_with_four() {
    let p = Pipeline::new();
    let c = config(
        &p.root,
        "lin.json",
        json!({"exemplar": "bar1d", "options": {"n_steps": 3}, "closure": {"kind": "linear", "stiffness": [[-8.0, 0.0], [0.0, -8.0]]}}),
    );
    let out = p.dir("s");
    let o = run(&["--out", s(&out), "solve", &c]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("SPD"), "{}", stderr(&o));
    assert!(out.join("diagnostics.json").is_file(), "diagnostics are written before failing");
}

#[test]
fn study_writes_table_and_plots() {
    let p = Pipeline::new();
    let c = config(
        &p.root,
        "study.json",
        json!({
            "exemplar": "bar1d",
            "options": {"n_steps": 5},
            "forms": ["lls", "spsd-lls"],
            "ks": [1],
            "spsd_lls": {"iterations": 500, "restarts": 2}
        }),
    );
    let out = p.dir("study");
    let o = run(&["--seed", "1", "--out", s(&out), "study", &c]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("study.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(out.join("error_vs_k.svg").is_file());
    assert!(out.join("runs/lls_K1/row.json").is_file());
}
