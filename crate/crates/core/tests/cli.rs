use std::path::Path;
use std::process::{Command, Output};

fn nrk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nrk"))
        .args(args)
        .env("NRK_THREADS", "1")
        .output()
        .expect("nrk runs")
}

fn ok(args: &[&str]) -> String {
    let out = nrk(args);
    assert!(
        out.status.success(),
        "nrk {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn metrics(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(nrk(&["synth", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(nrk(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let out = nrk(&["ingest", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn unknown_preset_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = nrk(&["synth", "--preset", "castle", "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stages_chain_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let pre = dir.path().join("pre");
    let run = dir.path().join("run");
    let mesh = dir.path().join("mesh.ply");
    let gt = scene.join("gt/mesh.ply");

    ok(&["synth", "--views", "3", "--width", "24", "--height", "18", "--gt-res", "64", "--out", s(&scene)]);
    let summary = ok(&["ingest", s(&scene)]);
    assert!(summary.contains("views       3"), "{summary}");
    ok(&["preprocess", s(&scene), "--out", s(&pre), "--erode", "1"]);
    assert!(ok(&["ingest", s(&pre)]).contains("views       3"));
    let keyed = dir.path().join("keyed");
    ok(&["preprocess", s(&scene), "--out", s(&keyed), "--keyframes"]);
    assert!(ok(&["ingest", s(&keyed)]).contains("views       1"));

    ok(&["train", s(&pre), "--out", s(&run), "--iters", "8", "--seed", "1"]);
    ok(&["render", s(&run), "--coarse", "8", "--fine", "4", "--out", s(&dir.path().join("img"))]);
    let images = walk(&dir.path().join("img"));
    for kind in ["_color.png", "_depth.png", "_normal.png"] {
        assert!(images.iter().any(|p| p.to_str().unwrap().ends_with(kind)), "{kind}");
    }
    ok(&["extract", s(&run), "--res", "24", "--out", s(&mesh)]);
    assert!(mesh.exists());

    let identical = dir.path().join("identical.json");
    ok(&["eval", "--pred", s(&gt), "--gt", s(&gt), "--voxel", "0.02", "--out", s(&identical)]);
    let m = metrics(&identical);
    assert_eq!(m["fscore"].as_f64(), Some(100.0));
    assert_eq!(m["overall"].as_f64(), Some(0.0));

    let trained = dir.path().join("trained.json");
    ok(&["eval", "--pred", s(&mesh), "--gt", s(&gt), "--voxel", "0.02", "--out", s(&trained)]);
    let again = dir.path().join("again.json");
    ok(&["eval", "--pred", s(&mesh), "--gt", s(&gt), "--voxel", "0.02", "--out", s(&again)]);
    assert_eq!(std::fs::read(&trained).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["synth", "--views", "2", "--width", "16", "--height", "12", "--gt-res", "32", "--seed", "4", "--out", s(out)]);
    }
    let files = |root: &Path| {
        let mut v: Vec<_> = walk(root).into_iter().map(|p| p.strip_prefix(root).unwrap().to_path_buf()).collect();
        v.sort();
        v
    };
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa, fb);
    assert!(!fa.is_empty());
    for rel in fa {
        assert_eq!(std::fs::read(a.join(&rel)).unwrap(), std::fs::read(b.join(&rel)).unwrap(), "{}", rel.display());
    }
}

fn walk(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}
