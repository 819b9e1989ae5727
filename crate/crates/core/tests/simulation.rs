mod support;

use inetcep::sim::{Mode, Scenario, Simulator};

const BUNDLED: &str = concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../../scenarios/manhattan_window.toml"
);

fn short(text: &str) -> String {
    text.replace("duration = \"60s\"", "duration = \"8s\"")
}

#[test]
fn bundled_scenario_delivers_every_window() {
    let sc = Scenario::from_toml(&short(&std::fs::read_to_string(BUNDLED).unwrap())).unwrap();
    let mut sim = Simulator::new(sc).unwrap();
    let rep = sim.run();
    let q = &rep.queries[0];
    assert_eq!(q.mode, "ucl");
    assert_eq!(q.loss_rate, 0.0);
    assert_eq!(q.f1, Some(100.0));
    assert_eq!(q.delivered, q.generated);
    assert!(sim.is_quiescent());
}

#[test]
fn load_resolves_the_file() {
    let sc = Scenario::load(std::path::Path::new(BUNDLED)).unwrap();
    assert_eq!(sc.seed, 1);
    assert!(Scenario::load(std::path::Path::new("no/such/file.toml")).is_err());
}

#[test]
fn pull_mode_sends_one_interest_per_event() {
    let text = support::raw_stream_toml(200, 5, "ucl");
    let ucl = support::run_toml(&text);
    let sc = Scenario::from_toml(&text).unwrap().with_mode(Mode::Pr);
    let pr = Simulator::new(sc).unwrap().run();
    let (u, p) = (&ucl.queries[0], &pr.queries[0]);
    assert_eq!(p.mode, "pr");
    assert_eq!((u.control.adds, u.control.removes), (1, 1));
    assert!(p.control.interests >= p.delivered);
    assert_eq!(u.loss_rate, 0.0);
}

#[test]
fn seeds_change_the_trace() {
    let text = support::raw_stream_toml(300, 3, "ucl");
    let a = support::run_toml(&text);
    let b = support::run_toml(&text.replace("seed = 5", "seed = 6"));
    assert_ne!(a.trace_hash, b.trace_hash);
    assert_eq!(a.to_json(), support::run_toml(&text).to_json());
}

#[test]
fn trace_rows_are_written() {
    let sc = Scenario::from_toml(&support::raw_stream_toml(50, 2, "ucl")).unwrap();
    let mut sim = Simulator::new(sc).unwrap().with_trace();
    sim.run();
    assert!(!sim.trace_rows().is_empty());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    sim.write_trace(&path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.starts_with("time,node,packet_type,name,action"));
}
