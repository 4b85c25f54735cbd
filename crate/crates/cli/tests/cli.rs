use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hrmap(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hrmap")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = hrmap(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn field<'a>(stdout: &'a str, key: &str) -> &'a str {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(": ")))
        .unwrap_or_else(|| panic!("no {key} in {stdout}"))
}

const SMALL: &str = r#"{
  "version": 1,
  "world": { "seed": 3, "params": { "blocks_x": 1, "blocks_y": 1 } },
  "trajectories": [ { "id": "a", "kind": "loop", "seed": 3, "params": { "laps": 1 } } ],
  "noise": { "sigma_t": 0.05 },
  "rng_seed": 3
}"#;

#[test]
fn run_eval_and_sweep_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("s.json"), SMALL).unwrap();
    let run = ok(&["run", "--scenario", "s.json", "--map-out", "m.hrmp", "--log-out", "l.ndjson"], d);
    assert!(field(&run, "frames").parse::<usize>().unwrap() > 100);

    let eval = ok(&["eval", "--log", "l.ndjson", "--map", "m.hrmp", "--out", "r.json"], d);
    let map: f64 = field(&eval, "mAP").parse().unwrap();
    assert!((0.0..=1.0).contains(&map));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["mAP"].as_f64().unwrap(), map);
    assert!(report["memory"]["stored_bytes"].as_u64().unwrap() > 0);

    let seq = ok(&["eval", "--log", "l.ndjson", "--out", "r2.json", "--sequential"], d);
    assert_eq!(field(&seq, "mAP"), field(&eval, "mAP"));

    ok(&["sweep", "--scenario", "s.json", "--sigma-t", "0.05,0.2", "--sigma-r", "0", "--out", "sweep.csv"], d);
    let csv = fs::read_to_string(d.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "sigma_r\\sigma_t,0.05,0.2");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "0");
    assert_eq!(row[1].parse::<f64>().unwrap(), map);
}

#[test]
fn generated_files_feed_a_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("wp.json"), r#"{ "blocks_x": 1, "blocks_y": 1 }"#).unwrap();
    let world = ok(&["gen-world", "--seed", "5", "--params", "wp.json", "--out", "w.json"], d);
    assert!(field(&world, "elements").starts_with(|c: char| c.is_ascii_digit()));
    fs::write(d.join("tp.json"), r#"{ "laps": 1 }"#).unwrap();
    for (id, kind) in [("a", "loop"), ("b", "outback")] {
        ok(&["gen-traj", "--world", "w.json", "--seed", "5", "--kind", kind, "--params", "tp.json", "--id", id, "--out", &format!("{id}.json")], d);
    }
    let scenario = r#"{
      "version": 1,
      "world": { "path": "w.json" },
      "trajectories": [ { "path": "a.json" }, { "path": "b.json" } ],
      "rng_seed": 5
    }"#;
    fs::write(d.join("s.json"), scenario).unwrap();
    let run = ok(&["run", "--scenario", "s.json", "--map-out", "m.hrmp", "--log-out", "l.ndjson"], d);
    let tiles: usize = field(&run, "tiles").parse().unwrap();

    // a second run seeded with the first map only adds evidence
    let again = ok(&["run", "--scenario", "s.json", "--initial-map", "m.hrmp", "--map-out", "m2.hrmp", "--log-out", "l2.ndjson"], d);
    assert_eq!(field(&again, "tiles").parse::<usize>().unwrap(), tiles);

    let img = ok(&["render", "--map", "m.hrmp", "--out", "m.png"], d);
    let (w, h) = field(&img, "size").split_once('x').unwrap();
    let inspect = ok(&["inspect", "--map", "m.hrmp"], d);
    assert_eq!(field(&inspect, "tiles").parse::<usize>().unwrap(), tiles);
    assert_eq!(field(&inspect, "magic"), "HRMP");
    assert_eq!(field(&inspect, "file_bytes").parse::<u64>().unwrap(), fs::metadata(d.join("m.hrmp")).unwrap().len());
    assert!(w.parse::<u32>().unwrap() * h.parse::<u32>().unwrap() > 0);
    ok(&["render", "--map", "m.hrmp", "--mode", "evidence", "--out", "e.png"], d);
    assert_eq!(&fs::read(d.join("e.png")).unwrap()[1..4], b"PNG");

    ok(&["merge", "--in", "m.hrmp,m2.hrmp", "--out", "merged.hrmp"], d);
    let merged = ok(&["inspect", "--map", "merged.hrmp"], d);
    assert_eq!(field(&merged, "tiles").parse::<usize>().unwrap(), tiles);
}

#[test]
fn render_log_writes_one_png_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("wp.json"), r#"{ "blocks_x": 1, "blocks_y": 1 }"#).unwrap();
    ok(&["gen-world", "--seed", "2", "--params", "wp.json", "--out", "w.json"], d);
    fs::write(d.join("tp.json"), r#"{ "spacing": 5.0, "max_step": 6.0 }"#).unwrap();
    ok(&["gen-traj", "--world", "w.json", "--seed", "2", "--kind", "straight", "--params", "tp.json", "--out", "t.json"], d);
    fs::write(d.join("s.json"), r#"{ "version": 1, "world": { "path": "w.json" }, "trajectories": [ { "path": "t.json" } ], "rng_seed": 1 }"#).unwrap();
    let run = ok(&["run", "--scenario", "s.json", "--map-out", "m.hrmp", "--log-out", "l.ndjson"], d);
    let frames: usize = field(&run, "frames").parse().unwrap();
    ok(&["render", "--log", "l.ndjson", "--out-dir", "frames"], d);
    assert_eq!(fs::read_dir(d.join("frames")).unwrap().count(), frames);
    assert!(d.join("frames/frame_000000.png").exists());
}

#[test]
fn empty_scenario_gives_an_empty_map() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("s.json"), r#"{ "version": 1, "world": { "seed": 1 }, "trajectories": [], "rng_seed": 1 }"#).unwrap();
    let run = ok(&["run", "--scenario", "s.json", "--map-out", "m.hrmp", "--log-out", "l.ndjson"], d);
    assert_eq!(field(&run, "frames"), "0");
    let inspect = ok(&["inspect", "--map", "m.hrmp"], d);
    assert_eq!(field(&inspect, "tiles"), "0");
    assert_eq!(field(&inspect, "file_bytes"), "52");
    let img = ok(&["render", "--map", "m.hrmp", "--out", "m.png"], d);
    assert_eq!(field(&img, "size"), "1x1");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| hrmap(args, d).status.code().unwrap();

    assert_eq!(code(&["inspect", "--map", "missing.hrmp"]), 2);
    assert_eq!(code(&["run", "--scenario", "missing.json", "--map-out", "m", "--log-out", "l"]), 2);

    fs::write(d.join("junk.hrmp"), b"not a map at all, clearly not a map at all, no!!!!").unwrap();
    assert_eq!(code(&["inspect", "--map", "junk.hrmp"]), 1);
    assert_eq!(code(&["inspect", "--map", "junk.hrmp", "--bogus"]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["--help"]), 0);

    fs::write(d.join("bad.json"), r#"{ "version": 1, "world": { "seed": 1 }, "trajectories": [], "rng_seed": 1, "extra": 0 }"#).unwrap();
    assert_eq!(code(&["run", "--scenario", "bad.json", "--map-out", "m", "--log-out", "l"]), 1);
    fs::write(d.join("typo.json"), r#"{ "version": 1, "world": { "seed": 1 }, "trajectories": [], "noise": { "sigma_tt": 0.1 }, "rng_seed": 1 }"#).unwrap();
    assert_eq!(code(&["run", "--scenario", "typo.json", "--map-out", "m", "--log-out", "l"]), 1);
    fs::write(d.join("v2.json"), r#"{ "version": 2, "world": { "seed": 1 }, "trajectories": [], "rng_seed": 1 }"#).unwrap();
    assert_eq!(code(&["run", "--scenario", "v2.json", "--map-out", "m", "--log-out", "l"]), 1);
    fs::write(d.join("neg.json"), r#"{ "version": 1, "world": { "seed": 1 }, "trajectories": [], "noise": { "sigma_t": -1 }, "rng_seed": 1 }"#).unwrap();
    assert_eq!(code(&["run", "--scenario", "neg.json", "--map-out", "m", "--log-out", "l"]), 1);
    assert_eq!(code(&["sweep", "--scenario", "neg.json", "--sigma-t", "-0.1", "--sigma-r", "0", "--out", "x.csv"]), 1);
    assert_eq!(code(&["gen-traj", "--world", "w.json", "--seed", "1", "--kind", "zigzag", "--out", "t.json"]), 1);
}
