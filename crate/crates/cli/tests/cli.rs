use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.scenario"))
}

fn mccsim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mccsim"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn mccsim")
}

fn path_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn run_writes_labelled_csv_row() {
    let dir = TempDir::new().unwrap();
    let out = mccsim(
        &["run", path_arg(&scenario("table2_row1")), "--format", "csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let base = dir.path().join("out/table2_row1");
    let csv = read(base.join("report.csv"));
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("Distributed Cloud details(VMs),"));
    assert!(lines.next().unwrap().starts_with("12 tasks in 3 VMs,"));
    for f in ["chart.json", "log.json", "run_result.json"] {
        assert!(base.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn validate_accepts_bundled_and_rejects_dangling_reference() {
    let dir = TempDir::new().unwrap();
    let ok = mccsim(&["validate", path_arg(&scenario("failover"))], dir.path());
    assert_eq!(ok.status.code(), Some(0));

    let mut doc: serde_json::Value = serde_json::from_str(&read(scenario("failover"))).unwrap();
    doc["applications"][0]["cloudlets"][0]["vm"] = "no-such-vm".into();
    let bad = dir.path().join("bad.scenario");
    fs::write(&bad, doc.to_string()).unwrap();
    let out = mccsim(&["validate", path_arg(&bad)], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-vm"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let input = scenario("mobility_recovery");
    for sub in ["a", "b"] {
        let out = mccsim(&["run", path_arg(&input), "--format", "json", "--out", sub], dir.path());
        assert_eq!(out.status.code(), Some(0));
    }
    for f in ["report.json", "chart.json", "log.json", "run_result.json"] {
        assert_eq!(
            read(dir.path().join("a").join(f)),
            read(dir.path().join("b").join(f)),
            "{f}"
        );
    }
}

#[test]
fn batch_matches_individual_runs() {
    let dir = TempDir::new().unwrap();
    let batch_in = dir.path().join("in");
    fs::create_dir(&batch_in).unwrap();
    let names = ["table2_row1", "table2_row2", "table2_row3"];
    for name in names {
        fs::copy(scenario(name), batch_in.join(format!("{name}.scenario"))).unwrap();
    }
    let out = mccsim(&["run", "--batch", "in", "--out", "batch"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let mut rows = Vec::new();
    for name in names {
        let single = format!("single/{name}");
        let out = mccsim(&["run", path_arg(&scenario(name)), "--out", &single], dir.path());
        assert_eq!(out.status.code(), Some(0));
        let csv = read(dir.path().join(&single).join("report.csv"));
        assert_eq!(
            csv,
            read(dir.path().join("batch").join(name).join("report.csv")),
            "{name}"
        );
        rows.push(csv.lines().nth(1).unwrap().to_owned());
    }
    let aggregate = read(dir.path().join("batch/report.csv"));
    assert_eq!(aggregate.lines().skip(1).collect::<Vec<_>>(), rows);
}

#[test]
fn report_rebuilds_table_and_chart() {
    let dir = TempDir::new().unwrap();
    let mut from = Vec::new();
    for name in ["table2_row1", "table2_row2"] {
        let out = mccsim(&["run", path_arg(&scenario(name))], dir.path());
        assert_eq!(out.status.code(), Some(0));
        from.push(format!("out/{name}/run_result.json"));
    }
    let mut args = vec!["report", "--from"];
    args.extend(from.iter().map(String::as_str));
    args.extend(["--chart", "--format", "json"]);
    let out = mccsim(&args, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let report: serde_json::Value = serde_json::from_str(&read(dir.path().join("out/report/report.json"))).unwrap();
    let text = report.to_string();
    assert!(text.contains("12 tasks in 3 VMs") && text.contains("23 tasks in 8 VMs"));
    let chart: serde_json::Value = serde_json::from_str(&read(dir.path().join("out/report/chart.json"))).unwrap();
    assert_eq!(chart["categories"].as_array().unwrap().len(), 2);
    assert_eq!(chart["series"].as_array().unwrap().len(), 3);
}

#[test]
fn degraded_run_exits_two() {
    let dir = TempDir::new().unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&read(scenario("failover"))).unwrap();
    doc["events"] = serde_json::json!([
        {"kind": "node_fail", "time_s": 1.0, "node": "node-1"},
        {"kind": "node_fail", "time_s": 1.0, "node": "node-2"}
    ]);
    let path = dir.path().join("doomed.scenario");
    fs::write(&path, doc.to_string()).unwrap();
    let out = mccsim(&["run", path_arg(&path)], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unfinished"));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let out = mccsim(&["run", "nowhere.scenario"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn inputs_are_never_modified() {
    let dir = TempDir::new().unwrap();
    let copy = dir.path().join("failover.scenario");
    fs::copy(scenario("failover"), &copy).unwrap();
    let before = fs::read(&copy).unwrap();
    let out = mccsim(&["run", path_arg(&copy), "--lose-progress-since-log"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(fs::read(&copy).unwrap(), before);
}
