use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use collapse_lab_cli::checkpoint::{Checkpoint, VERSION};
use collapse_lab_cli::output::{Manifest, CHECKPOINT, SERIES, SNAPSHOT_INDEX};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_collapse-lab"))
}

fn exec(cmd: &mut Command) -> Output {
    cmd.env("RUST_LOG", "warn").output().expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(format!("{name}.cfg"));
    fs::write(&path, format!("{body}\noutput_dir = {}\n", dir.join(name).display())).unwrap();
    path
}

const SMALL: &str = "\
# small Dirichlet run
n = 16
lambda = 4
width = 0.15
max_steps = 60
sample_every = 5
snapshot_every = 20
";

#[test]
fn lists_presets() {
    let o = exec(bin().arg("presets"));
    assert!(o.status.success());
    let out = text(&o);
    for name in collapse_lab_cli::presets::NAMES {
        assert!(out.contains(name));
    }
}

#[test]
fn zero_end_time_leaves_only_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "empty", "lambda = 4\nn = 16\nt_end = 0");
    let o = exec(bin().arg("run").arg(&cfg));
    assert!(o.status.success(), "{}", text(&o));
    let dir = tmp.path().join("empty");
    assert_eq!(fs::read(dir.join(SERIES)).unwrap().len(), 0);
    assert_eq!(fs::read(dir.join(SNAPSHOT_INDEX)).unwrap().len(), 0);
    assert!(!dir.join(CHECKPOINT).exists());
    let m = Manifest::load(&dir).unwrap();
    assert_eq!(m.stop_reason.as_deref(), Some("reached_t_end"));
    assert_eq!(m.steps, 0);
    assert_eq!(m.config_hash.len(), 64);
}

#[test]
fn invalid_config_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    for (body, needle) in [("lambda = -2\nt_end = 1", "lambda"), ("lambda = 1\nt_end = 1\nwidht = 2", "widht"), ("lambda = 1", "stop rule")] {
        let cfg = write_config(tmp.path(), "bad", body);
        let o = exec(bin().arg("run").arg(&cfg));
        assert!(!o.status.success());
        assert!(text(&o).contains(needle), "{}", text(&o));
    }
    let o = exec(bin().arg("run").arg("no-such-preset"));
    assert!(!o.status.success());
}

#[test]
fn interrupted_run_resumes_byte_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let full = write_config(tmp.path(), "full", SMALL);
    let part = write_config(tmp.path(), "part", SMALL);
    assert!(exec(bin().arg("run").arg(&full)).status.success());
    let o = exec(bin().arg("run").arg(&part).args(["--stop-after", "23"]));
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("interrupted at step 23"));
    let ck = tmp.path().join("part").join(CHECKPOINT);
    let o = exec(bin().arg("resume").arg(&ck));
    assert!(o.status.success(), "{}", text(&o));
    for file in [SERIES, SNAPSHOT_INDEX] {
        let a = fs::read(tmp.path().join("full").join(file)).unwrap();
        let b = fs::read(tmp.path().join("part").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
    let o = exec(bin().arg("resume").arg(&ck));
    assert!(o.status.success());
    assert!(text(&o).contains("already complete"), "{}", text(&o));
}

#[test]
fn damaged_checkpoints_are_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run", SMALL);
    let o = exec(bin().arg("run").arg(&cfg).args(["--stop-after", "10"]));
    assert!(o.status.success(), "{}", text(&o));
    let ck = tmp.path().join("run").join(CHECKPOINT);
    let bytes = fs::read(&ck).unwrap();

    let cut = tmp.path().join("run").join("cut.bin");
    fs::write(&cut, &bytes[..bytes.len() - 100]).unwrap();
    let o = exec(bin().arg("resume").arg(&cut));
    assert!(!o.status.success());
    assert!(text(&o).contains("checksum"), "{}", text(&o));

    let mut other = bytes.clone();
    other[8..12].copy_from_slice(&(VERSION + 1).to_le_bytes());
    let old = tmp.path().join("run").join("old.bin");
    fs::write(&old, other).unwrap();
    let o = exec(bin().arg("resume").arg(&old));
    assert!(!o.status.success());
    let out = text(&o);
    assert!(out.contains(&format!("version {}", VERSION + 1)) && out.contains(&format!("version {VERSION}")), "{out}");

    assert_eq!(Checkpoint::load(&ck).unwrap().step, 10);
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let body = "n = 128\nlambda = 20\nwidth = 0.08\nmax_steps = 12\nsample_every = 3\nseed = 11\nperturbation = 0.1";
    let one = write_config(tmp.path(), "one", body);
    let many = write_config(tmp.path(), "many", body);
    assert!(exec(bin().arg("run").arg(&one).env("COLLAPSE_LAB_THREADS", "1")).status.success());
    assert!(exec(bin().arg("run").arg(&many).env("COLLAPSE_LAB_THREADS", "3")).status.success());
    let a = fs::read(tmp.path().join("one").join(SERIES)).unwrap();
    let b = fs::read(tmp.path().join("many").join(SERIES)).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    let ma = Manifest::load(&tmp.path().join("one")).unwrap();
    let mb = Manifest::load(&tmp.path().join("many")).unwrap();
    assert_eq!(ma.config_hash, mb.config_hash);

    let o = exec(bin().arg("presets").env("COLLAPSE_LAB_THREADS", "zero"));
    assert!(!o.status.success());
    assert!(text(&o).contains("COLLAPSE_LAB_THREADS"));
}

#[test]
fn seeds_change_perturbed_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let base = "n = 16\nlambda = 4\nmax_steps = 5\nsample_every = 1\nperturbation = 0.2";
    let a = write_config(tmp.path(), "a", &format!("{base}\nseed = 1"));
    let b = write_config(tmp.path(), "b", &format!("{base}\nseed = 2"));
    assert!(exec(bin().arg("run").arg(&a)).status.success());
    assert!(exec(bin().arg("run").arg(&b)).status.success());
    let sa = fs::read(tmp.path().join("a").join(SERIES)).unwrap();
    let sb = fs::read(tmp.path().join("b").join(SERIES)).unwrap();
    assert_ne!(sa, sb);
}

#[test]
fn subcritical_analysis_reports_global_existence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sub", SMALL);
    assert!(exec(bin().arg("run").arg(&cfg)).status.success());
    let dir = tmp.path().join("sub");
    let o = exec(bin().arg("analyze").arg(&dir).args(["--b-list", "5,10", "--epsilon", "0.25", "--x0", "0.5,0.5"]));
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("global-existence run"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["kind"], "global-existence run");
    assert_eq!(report["energy"]["clean"], true);
    assert_eq!(report["epsilon"], 0.25);
}

#[test]
fn two_bump_preset_reports_two_collapses() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("two");
    let o = exec(bin().args(["run", "two-bump", "--output"]).arg(&dir));
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("density_cap_hit"), "{}", text(&o));
    let o = exec(bin().arg("analyze").arg(&dir));
    assert!(o.status.success(), "{}", text(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["kind"], "blowup run");
    assert_eq!(report["collapses"], 2);
    let xs: Vec<f64> = report["points"].as_array().unwrap().iter().map(|p| p["x0"][0].as_f64().unwrap()).collect();
    assert!(xs.iter().any(|x| (x - 0.3).abs() < 0.05) && xs.iter().any(|x| (x - 0.7).abs() < 0.05), "{xs:?}");
}
