use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[dataset]
tracks = 3
first_seed = 40
holdout = 1

[dataset.track]
corners = 6
segment_length_range = [60.0, 200.0]

[telemetry]
laps = 3

[train]
epochs = 2
stride = 10
rollout_from = 1

[train.descriptor]
history_len = 10
future_len = 20
target_len = 5
channels = 4
hidden = 8
heads = 2
"#;

fn raceline(args: &[&str], config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_raceline"));
    cmd.args(args).env_remove("RACELINE_CONFIG");
    if let Some(c) = config {
        cmd.env("RACELINE_CONFIG", c);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("small.toml");
        fs::write(&config, SMALL).unwrap();
        Self { _dir: dir, root, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&raceline(&[], None)), 1);
    assert_eq!(code(&raceline(&["frobnicate"], None)), 1);
    assert_eq!(code(&raceline(&["seed", "xx", "--track", "a", "--out", "b"], None)), 1);
    assert_eq!(code(&raceline(&["--help"], None)), 0);

    let f = Fixture::new();
    let bad = f.path("bad.toml");
    fs::write(&bad, "[solver]\nmax_iter = 3\n").unwrap();
    let o = raceline(&["--config", s(&bad), "gen-dataset", "--out", s(&f.path("x"))], None);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    let o = raceline(&["--config", s(&f.path("missing.toml")), "gen-dataset", "--out", s(&f.path("x"))], None);
    assert_eq!(code(&o), 1);
}

#[test]
fn data_errors_exit_two() {
    let f = Fixture::new();
    let o = raceline(&["seed", "cl", "--track", s(&f.path("none.csv")), "--out", s(&f.path("o.csv"))], None);
    assert_eq!(code(&o), 2);
    let open = f.path("open.csv");
    fs::write(&open, "0,0,5,5\n10,0,5,5\n20,0,5,5\n30,0,5,5\n40,0,5,5\n").unwrap();
    let o = raceline(&["seed", "cl", "--track", s(&open), "--out", s(&f.path("o.csv"))], None);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("not closed"));
}

#[test]
fn pipeline_end_to_end() {
    let f = Fixture::new();
    let cfg = Some(f.config.as_path());
    let data = f.path("data");
    let o = raceline(&["gen-dataset", "--out", s(&data)], cfg);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    let tracks = manifest["tracks"].as_array().unwrap();
    assert_eq!(tracks.len(), 3);
    let track = data.join(tracks[0]["track_file"].as_str().unwrap());
    let telemetry = data.join(tracks[0]["telemetry_file"].as_str().unwrap());

    // the config echo carries the file's values and the flag override wins
    let o = raceline(&["gen-dataset", "--out", s(&f.path("data2")), "--tracks", "1"], cfg);
    assert_eq!(code(&o), 0);
    let echo: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.path("data2/config.json")).unwrap()).unwrap();
    assert_eq!(echo["dataset"]["tracks"], 1);
    assert_eq!(echo["dataset"]["first_seed"], 40);

    let o = raceline(&["align", "--track", s(&track), "--telemetry", s(&telemetry), "--out", s(&f.path("aligned.csv"))], cfg);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    for kind in ["cl", "mc"] {
        let out = f.path(&format!("{kind}.csv"));
        let o = raceline(&["seed", kind, "--track", s(&track), "--out", s(&out)], cfg);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = raceline(&["seed", "nn", "--track", s(&track), "--out", s(&f.path("nn.csv"))], cfg);
    assert_eq!(code(&o), 1);

    let o = raceline(
        &["optimize", "--track", s(&track), "--seed-line", s(&f.path("mc.csv")), "--out", s(&f.path("opt.csv")), "--trace", s(&f.path("trace.json"))],
        cfg,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["converged"], true);
    let o = raceline(&["optimize", "--track", s(&track), "--out", s(&f.path("opt1.csv")), "--max-iterations", "1"], cfg);
    assert_eq!(code(&o), 3);

    let model = f.path("model");
    let o = raceline(&["train", "--dataset", s(&data), "--out", s(&model)], cfg);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let curves = fs::read_to_string(model.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 3);
    let weights = model.join("weights.bin");

    let held = data.join(tracks[2]["track_file"].as_str().unwrap());
    let o = raceline(&["predict", "--weights", s(&weights), "--track", s(&held), "--out", s(&f.path("pred.csv"))], cfg);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = raceline(&["seed", "nn", "--weights", s(&weights), "--track", s(&held), "--out", s(&f.path("nn.csv"))], cfg);
    assert_eq!(code(&o), 0);

    let out = f.path("bench");
    let o = raceline(&["bench", "--dataset", s(&data), "--weights", s(&weights), "--out", s(&out), "--format", "csv", "--plot"], cfg);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let records = fs::read_to_string(out.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 4);
    let held_id = tracks[2]["id"].as_str().unwrap();
    assert!(out.join(format!("plots/{held_id}_overlay.svg")).exists());
    assert!(out.join(format!("plots/{held_id}_convergence.svg")).exists());

    // a training circuit cannot be benchmarked with this model
    let o = raceline(&["bench", "--dataset", s(&data), "--weights", s(&weights), "--out", s(&f.path("b2")), "--holdout", "2"], cfg);
    assert_eq!(code(&o), 1);

    let o = raceline(&["report", "--input", s(&out.join("bench.json")), "--out", s(&f.path("rep")), "--format", "md"], cfg);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let md = fs::read_to_string(f.path("rep/report.md")).unwrap();
    assert!(md.contains("| NN |"));
    let o = raceline(&["report", "--input", s(&f.path("nope.json")), "--out", s(&f.path("rep"))], cfg);
    assert_eq!(code(&o), 2);
}
