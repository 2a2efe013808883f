use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sdt_sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdt-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SHORT: &str = r#"
[workload]
rate_gbps = 2.0
topology = "dedicated_delivery_core"

[sim]
warmup_cycles = 2000
measure_cycles = 20000
"#;

#[test]
fn run_writes_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write(dir.path(), "s.toml", SHORT);
    let out = dir.path().join("out");
    let o = sdt_sim(&["run", &scen, "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(v["seed"], 3);
    assert_eq!(v["measure_cycles"], 20000);
    assert_eq!(v["conservation_ok"], true);
}

#[test]
fn run_is_deterministic_on_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write(dir.path(), "s.toml", SHORT);
    let a = sdt_sim(&["run", &scen]);
    let b = sdt_sim(&["run", &scen]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn trace_goes_to_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write(dir.path(), "s.toml", SHORT);
    let out = dir.path().join("t");
    let o = sdt_sim(&["run", &scen, "--trace", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let trace = fs::read_to_string(out.join("trace.tsv")).unwrap();
    assert!(trace.lines().count() > 10);
}

#[test]
fn unknown_key_exits_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write(
        dir.path(),
        "bad.toml",
        "[core]\nrob_entries = 64\nrob_entriez = 1\n",
    );
    let o = sdt_sim(&["run", &scen]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn zero_limit_path_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write(
        dir.path(),
        "stall.toml",
        r#"
[partition.limits]
lq = [0, 144]

[workload]
rate_gbps = 10.0
topology = "dedicated_delivery_core"

[sim]
warmup_cycles = 0
measure_cycles = 1100000
"#,
    );
    let o = sdt_sim(&["run", &scen]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stderr).contains("stalled"));
}

#[test]
fn sweep_single_size_is_one_row_at_ratio_one() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write(dir.path(), "s.toml", SHORT);
    let out = dir.path().join("sw");
    let o = sdt_sim(&[
        "sweep",
        "--structure",
        "rob",
        "--sizes",
        "128",
        "--scenario",
        &scen,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(out.join("sweep_rob.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][0], "rob");
    assert_eq!(rows[0][5].parse::<f64>().unwrap(), 1.0);
    let dat = fs::read_to_string(out.join("sweep_rob.dat")).unwrap();
    assert!(dat.starts_with("# structure size"));
    assert_eq!(dat.lines().count(), 2);
}

#[test]
fn sweep_row_count_matches_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write(dir.path(), "s.toml", SHORT);
    let o = sdt_sim(&[
        "sweep",
        "--structure",
        "fp_regs",
        "--sizes",
        "0,64,256",
        "--scenario",
        &scen,
    ]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn scale_rows() {
    let dir = tempfile::tempdir().unwrap();
    let scen = write(dir.path(), "s.toml", SHORT);
    let o = sdt_sim(&["scale", "--cores", "1,2", "--scenario", &scen]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,"));
    assert!(lines[2].starts_with("2,"));
}

#[test]
fn bad_arguments_exit_2() {
    assert_eq!(
        sdt_sim(&["sweep", "--structure", "nope", "--sizes", "1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        sdt_sim(&["cost", "--cores", "20", "vs", "--cores", "40"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        sdt_sim(&["intensity", "--presets", "extreme"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(sdt_sim(&["frobnicate"]).status.code(), Some(2));
}
