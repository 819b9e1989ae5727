use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BUNDLED: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../../scenarios/manhattan_window.toml"
);

fn inetcep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inetcep"))
        .args(args)
        .env_remove("INETCEP_SEED")
        .output()
        .unwrap()
}

fn short_scenario(dir: &Path) -> String {
    let text = fs::read_to_string(BUNDLED)
        .unwrap()
        .replace("duration = \"60s\"", "duration = \"5s\"");
    let path = dir.join("short.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let sc = short_scenario(dir.path());
    let out = dir.path().join("out");
    let o = inetcep(&[
        "run",
        "--scenario",
        &sc,
        "--out",
        out.to_str().unwrap(),
        "--trace",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["report.json", "latency.csv", "throughput.csv", "trace.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let r = report(&out);
    assert_eq!(r["queries"][0]["mode"], "ucl");
    assert!(stdout(&o).contains("trace "));
}

#[test]
fn mode_override_relabels_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let sc = short_scenario(dir.path());
    let out = dir.path().join("out");
    let o = inetcep(&[
        "run",
        "--scenario",
        &sc,
        "--out",
        out.to_str().unwrap(),
        "--mode",
        "pr",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(report(&out)["queries"][0]["mode"], "pr");
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let sc = short_scenario(dir.path());
    let hash = |seed: &str| {
        let out = dir.path().join(format!("out{seed}"));
        let o = Command::new(env!("CARGO_BIN_EXE_inetcep"))
            .args(["run", "--scenario", &sc, "--out", out.to_str().unwrap()])
            .env("INETCEP_SEED", seed)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        report(&out)
    };
    let (a, b, c) = (hash("9"), hash("9"), hash("10"));
    assert_eq!(a["seed"], 9);
    assert_eq!(a, b);
    assert_ne!(a["trace_hash"], c["trace_hash"]);
}

#[test]
fn scenario_errors_exit_one_and_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    let o = inetcep(&["run", "--scenario", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.toml"));

    let bad = dir.path().join("bad.toml");
    fs::write(
        &bad,
        fs::read_to_string(BUNDLED).unwrap().replace("n6", "n99"),
    )
    .unwrap();
    let o = inetcep(&["run", "--scenario", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.toml"));
}

#[test]
fn parse_prints_the_tree() {
    let o = inetcep(&["parse", "FILTER(WINDOW(GPS_S1, 4s),'latitude'<50)"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["canonical"], "FILTER(WINDOW(GPS_S1,4s),'latitude'<50)");
    assert!(v["name"].as_str().unwrap().starts_with("/GPS_S1/"));
}

#[test]
fn parse_rejects_with_exit_two() {
    for q in ["WINDOW(GPS_S1, 4s", "", "WINDOW(GPS_S1, 0s)"] {
        let o = inetcep(&["parse", q]);
        assert_eq!(o.status.code(), Some(2), "{q:?}");
        assert!(stderr(&o).contains("error"));
    }
}

#[test]
fn oracle_reads_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("gps.csv");
    fs::write(
        &csv,
        "ts,s_id,latitude,longitude,altitude,accuracy,distance,speed\n\
         1000,1,49.5,8.6,100,5,0,1.5\n\
         2000,1,51.0,8.7,100,5,10,2\n\
         7000,1,49.7,8.8,100,5,20,3\n",
    )
    .unwrap();
    let o = inetcep(&[
        "oracle",
        "AGGREGATE(count, 'speed', WINDOW(GPS_S1, 4s))",
        "--trace",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let counts: Vec<f64> = stdout(&o)
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["output"]["value"]
                .as_f64()
                .unwrap()
        })
        .collect();
    assert_eq!(counts, vec![1.0, 2.0, 1.0]);
}

#[test]
fn topo_lists_nodes() {
    let o = inetcep(&["topo", "line"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["nodes"].as_array().unwrap().len(), 5);
    assert_eq!(inetcep(&["topo", "ring"]).status.code(), Some(2));
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["run", "parse", "oracle", "topo"] {
        let o = inetcep(&[sub, "--help"]);
        assert!(o.status.success(), "{sub}");
        assert!(stdout(&o).contains("Usage"));
    }
}
