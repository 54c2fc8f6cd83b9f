use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lakecache(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lakecache"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A 40, B 30, A 40, C 30, B 30, A 40 on one day.
fn write_hand_trace(dir: &Path) -> String {
    let path = dir.join("trace.csv");
    fs::write(
        &path,
        "day,file_id,size_bytes,data_type,user_id,site_id\n\
         0,A,40,data,u,s\n0,B,30,data,u,s\n0,A,40,data,u,s\n\
         0,C,30,mc,u,s\n0,B,30,data,u,s\n0,A,40,data,u,s\n",
    )
    .unwrap();
    path.display().to_string()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn hand_trace_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = write_hand_trace(tmp.path());
    let o = lakecache(&["oracle", "--trace", &trace]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    // Repeats: A twice, B once. First sightings: A, B, C.
    assert_eq!(v["rhd_inf"], 40 + 40 + 30);
    assert_eq!(v["wd_inf"], 40 + 30 + 30);
    assert_eq!(v["requested_bytes"], 210);
}

#[test]
fn hand_trace_lru_counters() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = write_hand_trace(tmp.path());
    let out = tmp.path().join("run");
    let o = lakecache(&[
        "run", "--policy", "we-lru", "--capacity", "100", "--trace", &trace, "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    // Capacity 100, W_high 95, W_low 75. The second A hits; each store that
    // fills the cache to 100 evicts the LRU file: B, then A, then C.
    let raw = &report(&out)["metrics"]["raw"];
    assert_eq!(raw["rhd"], 40);
    assert_eq!(raw["rhm"], 170);
    assert_eq!(raw["wd"], 40 + 30 + 30 + 30 + 40);
    assert_eq!(raw["dd"], 30 + 40 + 30);
    let line = stdout(&o);
    assert!(line.contains("throughput=0.3636"), "{line}");
    assert!(line.contains("cost=1.3500"), "{line}");
    assert!(out.join("daily.csv").exists() && out.join("table.csv").exists());
}

#[test]
fn zero_capacity_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = write_hand_trace(tmp.path());
    let o = lakecache(&["run", "--policy", "we-lru", "--capacity", "0", "--trace", &trace]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("capacity must be positive"), "{}", stderr(&o));
}

#[test]
fn unknown_policy_lists_valid_ids() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = write_hand_trace(tmp.path());
    let o = lakecache(&["run", "--policy", "mru", "--capacity", "100", "--trace", &trace]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("mru") && err.contains("scdl2-onk") && err.contains("dqn"), "{err}");
}

#[test]
fn repeated_runs_write_identical_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let mut bodies = Vec::new();
    for i in 0..2 {
        let out = tmp.path().join(format!("r{i}"));
        let o = lakecache(&[
            "run", "--preset", "small", "--trace-seed", "4", "--policy", "scdl2-onk", "--capacity", "200MiB",
            "--seed", "3", "--set", "params.scdl2_k=500", "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        bodies.push(fs::read(out.join("report.json")).unwrap());
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn config_file_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = write_hand_trace(tmp.path());
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        format!("policy = \"we-lfu\"\ncapacity = \"1KiB\"\n[trace]\nkind = \"file\"\npath = {trace:?}\n"),
    )
    .unwrap();
    let o = lakecache(&["run", "--config", cfg.to_str().unwrap(), "--set", "capacity=100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("policy=we-lfu capacity=100 "), "{}", stdout(&o));
    let o = lakecache(&["run", "--config", cfg.to_str().unwrap(), "--set", "params.no_such_knob=1"]);
    assert!(!o.status.success());
}

#[test]
fn gen_trace_round_trips_through_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("small.csv");
    let o = lakecache(&["gen-trace", "--preset", "small", "--seed", "2", "--out", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("day,file_id,size_bytes,data_type,user_id,site_id"));
    assert_eq!(text.lines().count(), 5 * 1000 + 1);
    let from_file = lakecache(&["oracle", "--trace", path.to_str().unwrap()]);
    let from_preset = lakecache(&["oracle", "--preset", "small", "--trace-seed", "2"]);
    assert!(from_file.status.success() && from_preset.status.success());
    assert_eq!(stdout(&from_file), stdout(&from_preset));
}

#[test]
fn sweep_writes_a_ranked_table() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = write_hand_trace(tmp.path());
    let out = tmp.path().join("sweep");
    let o = lakecache(&[
        "sweep", "--trace", &trace, "--policies", "we-lru,we-size-big,scdl", "--capacities", "100,1000",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(out.join("table.csv")).unwrap();
    assert_eq!(table, stdout(&o));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "policy,capacity,score,throughput,cost,rhd,rhm,wd,dd,best,error");
    assert_eq!(lines.len(), 1 + 6);
    assert!(out.join("we-lru-100").join("report.json").exists());
}
