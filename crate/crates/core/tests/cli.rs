use std::path::Path;
use std::process::{Command, Output};

fn visifrac(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_visifrac")).args(args).current_dir(dir).env_remove("VISIFRAC_JOBS").output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn unknown_builtin_lists_the_builtins() {
    let dir = tempfile::tempdir().unwrap();
    let o = visifrac(&["gen", "--set", "koch", "--out", "g"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let t = text(&o);
    assert!(t.contains("koch") && t.contains("carpet") && t.contains("sponge"), "{t}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = visifrac(&["gen", "--set", "carpet", "--depth", "x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("`depth`"));
    let o = visifrac(&["gen", "--set", "sponge", "--depth", "12", "--out", "g"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));
    let o = visifrac(&["calibrate", "--n", "5", "--out", "c"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let o = visifrac(&["experiment", "--kind", "nope", "--out", "e"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("e").exists());
}

#[test]
fn gen_writes_atomically_and_records_digests() {
    let dir = tempfile::tempdir().unwrap();
    let o = visifrac(&["gen", "--set", "carpet", "--depth", "4", "--out", "g"], dir.path());
    assert!(o.status.success(), "{}", text(&o));
    let mut names: Vec<String> =
        std::fs::read_dir(dir.path().join("g")).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(names, ["runs.jsonl", "set.dyset", "set.pgm"]);
    let set = std::fs::read_to_string(dir.path().join("g/set.dyset")).unwrap();
    assert!(set.starts_with("DYSET1 d=2 depth=4 count=4096") || set.starts_with("DYSET1 d=2 depth=4"));
    let rec: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(dir.path().join("g/runs.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(rec["command"], "gen");
    assert_eq!(rec["outputs"][0]["file"], "set.dyset");
    assert_eq!(rec["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
    let o = visifrac(&["vis", "--set", "g/set.dyset", "--angle", "90", "--out", "v"], dir.path());
    assert!(o.status.success(), "{}", text(&o));
    assert!(dir.path().join("v/visible.dyset").exists());
}

#[test]
fn flags_win_over_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "set=triangle\ndepth=3\nout=o\n").unwrap();
    let o = visifrac(&["dim", "--config", "run.cfg", "--depth", "5"], dir.path());
    assert!(o.status.success(), "{}", text(&o));
    let rec: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(dir.path().join("o/runs.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(rec["config"]["depth"], "5");
    assert_eq!(rec["config"]["set"], "triangle");
    std::fs::write(dir.path().join("bad.cfg"), "set=triangle\ncolour=red\n").unwrap();
    let o = visifrac(&["dim", "--config", "bad.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("colour"));
}

#[test]
fn jobs_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_visifrac"))
        .args(["calibrate", "--trials", "10", "--out", "c"])
        .current_dir(dir.path())
        .env("VISIFRAC_JOBS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_visifrac"))
        .args(["calibrate", "--trials", "1000", "--out", "c"])
        .current_dir(dir.path())
        .env("VISIFRAC_JOBS", "2")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(text(&o).contains("c* ="));
    let j: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("c/calibration.json")).unwrap()).unwrap();
    assert!(j["c_star"].as_f64().unwrap() > 1.0);
}

#[test]
fn summarize_index() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let o = visifrac(&["summarize", "--index", "empty.jsonl"], dir.path());
    assert!(o.status.success());
    let o = visifrac(&["summarize", "--index", "missing.jsonl"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    for deltas in ["3,4", "5"] {
        let o = visifrac(
            &["experiment", "--kind", "vis-average", "--set", "carpet", "--depth", "5", "--deltas", deltas, "--directions", "2",
              "--relaxed", "--eps", "0.05", "--out", "r"],
            dir.path(),
        );
        assert!(o.status.success(), "{}", text(&o));
    }
    let o = visifrac(&["summarize", "--index", "r/runs.jsonl"], dir.path());
    assert!(o.status.success());
    let t = text(&o);
    assert!(t.contains("experiment vis-average"), "{t}");
    let table = t.lines().find(|l| l.starts_with("experiment vis-average")).unwrap();
    assert!(table.split_whitespace().nth(3).unwrap().parse::<f64>().is_ok(), "{table}");

    std::fs::write(dir.path().join("base.json"), r#"{"strictly_decreasing": 1.0, "A@0.125": 1e-9}"#).unwrap();
    let o = visifrac(&["summarize", "--index", "r/runs.jsonl", "--baselines", "base.json"], dir.path());
    assert!(text(&o).contains("WARN"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = visifrac(
            &["experiment", "--kind", "slice-spectrum", "--set", "carpet", "--depth", "6", "--deltas", "4,5,6", "--directions", "3",
              "--seed", "9", "--out", out],
            dir.path(),
        );
        assert!(o.status.success(), "{}", text(&o));
    }
    for f in ["slice_spectrum.csv", "slice_spectrum.json"] {
        assert_eq!(std::fs::read(dir.path().join("a").join(f)).unwrap(), std::fs::read(dir.path().join("b").join(f)).unwrap());
    }
}
