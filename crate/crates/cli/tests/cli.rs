use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn chemnet(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chemnet"))
        .args(args)
        .env("CHEMNET_OUT", out)
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn validate_bundled_scenarios() {
    let tmp = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(scenarios()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let o = chemnet(&["validate", p.to_str().unwrap()], tmp.path());
            assert!(o.status.success(), "{}: {}", p.display(), text(&o));
        }
    }
}

#[test]
fn run_writes_per_seed_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenarios().join("warehouse.toml");
    let o = chemnet(&["run", cfg.to_str().unwrap(), "--trials", "2", "--duration", "40"], tmp.path());
    assert!(o.status.success(), "{}", text(&o));
    let dir = tmp.path().join("warehouse");
    assert!(dir.join("metrics.csv").is_file());
    let seeds: Vec<_> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    assert_eq!(seeds.len(), 2);
    for s in seeds {
        assert!(s.join("trace.log").is_file());
        assert!(s.join("packets.csv").is_file());
    }
}

#[test]
fn missing_matrix_fails_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let src = std::fs::read_to_string(scenarios().join("warehouse.toml")).unwrap();
    let cfg = tmp.path().join("broken.toml");
    std::fs::write(&cfg, src.replace("warehouse.matrix", "nowhere.matrix")).unwrap();
    let out = tmp.path().join("out");
    let o = chemnet(&["run", cfg.to_str().unwrap()], &out);
    assert!(!o.status.success());
    assert!(text(&o).contains("nowhere.matrix"), "{}", text(&o));
    assert!(!out.exists());
}

#[test]
fn bad_key_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "name = \"x\"\nduration = 10.0\n\n[topology]\nnodes = 5\nsidee = 40.0\n").unwrap();
    let o = chemnet(&["validate", cfg.to_str().unwrap()], tmp.path());
    assert!(!o.status.success());
    assert!(text(&o).contains("line 6"), "{}", text(&o));
}

#[test]
fn golden_passes_and_rejects_unknown_names() {
    let tmp = tempfile::tempdir().unwrap();
    let o = chemnet(&["golden", "temperature-alert", "--seed", "3"], tmp.path());
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("golden temperature-alert: pass"));
    assert!(tmp.path().join("temperature-alert/3/trace.log").is_file());

    let o = chemnet(&["golden", "flood"], tmp.path());
    assert!(!o.status.success());
    assert!(text(&o).contains("unknown scenario"));
}
