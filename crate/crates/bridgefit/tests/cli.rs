use std::fs;
use std::path::Path;
use std::process::Command;

use bridgefit::io::ObservationFile;
use bridgefit::{report, resume, run, synth, CliError, LoadedConfig, ReportOptions, RunOptions, SensorSpec};

const ROD: &str = r#"
problem = "rod1d"
levels = [8, 16, 32]
data = "obs.json"
output = "full"

[smc]
n_particles = 24
seed = 9

[truth]
kind = "kernels"
a0 = 0.2
kernels = [{ amplitude = -0.8, precision = 60.0, center = [0.4] }]
"#;

fn config(dir: &Path, name: &str, body: &str) -> LoadedConfig {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    LoadedConfig::load(&path).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bridgefit"))
}

#[test]
fn resume_continues_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let full = config(dir.path(), "full.toml", ROD);
    synth(&full).unwrap();
    run(&full, &RunOptions { workers: Some(2), ..Default::default() }).unwrap();

    let first = config(dir.path(), "first.toml", &ROD.replace("[8, 16, 32]", "[8, 16]").replace("\"full\"", "\"first\""));
    run(&first, &RunOptions::default()).unwrap();
    let rest = config(dir.path(), "rest.toml", &ROD.replace("[8, 16, 32]", "[16, 32]").replace("\"full\"", "\"rest\""));
    let out = resume(&rest, &dir.path().join("first/level2_r16/archive.jsonl"), &RunOptions::default()).unwrap();
    assert_eq!(out.records.len(), 1);
    assert_eq!(out.records[0].level, 3);

    let a = fs::read(dir.path().join("full/level3_r32/archive.jsonl")).unwrap();
    let b = fs::read(dir.path().join("rest/level3_r32/archive.jsonl")).unwrap();
    assert_eq!(a, b);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("rest/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "resume");
    assert_eq!(manifest["status"], "complete");
}

#[test]
fn resume_rejects_mismatched_archives() {
    let dir = tempfile::tempdir().unwrap();
    let full = config(dir.path(), "full.toml", ROD);
    synth(&full).unwrap();
    run(&full, &RunOptions::default()).unwrap();
    let archive = dir.path().join("full/level2_r16/archive.jsonl");

    let coarser = config(dir.path(), "coarser.toml", &ROD.replace("[8, 16, 32]", "[8, 32]"));
    assert!(matches!(resume(&coarser, &archive, &RunOptions::default()), Err(CliError::Config(_))));

    let other_hp = config(dir.path(), "hp.toml", &format!("{}\n[hyperparams]\ns = 0.2\n", ROD.replace("[8, 16, 32]", "[16, 32]")));
    assert!(matches!(resume(&other_hp, &archive, &RunOptions::default()), Err(CliError::Config(_))));
}

#[test]
fn report_rebuilds_summaries_and_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "rod.toml", ROD);
    synth(&cfg).unwrap();
    run(&cfg, &RunOptions::default()).unwrap();
    fs::write(dir.path().join("points.json"), "[[0.25], [0.75]]").unwrap();
    let opts = ReportOptions {
        output: Some(dir.path().join("report")),
        predict_sensors: Some(SensorSpec::File { path: "points.json".into() }),
        draws: 50,
        seed: 1,
        threshold: Some(0.1),
    };
    let sigma = report(&cfg, &dir.path().join("full/level3_r32/archive.jsonl"), &opts).unwrap();
    assert!(sigma.relative_q05 <= sigma.relative_q50 && sigma.relative_q50 <= sigma.relative_q95);
    // Recomputed summaries equal the ones written during the run.
    for file in ["field_mean.csv", "field_q05.csv", "k_histogram.csv", "sigma.json"] {
        assert_eq!(
            fs::read(dir.path().join("report").join(file)).unwrap(),
            fs::read(dir.path().join("full/level3_r32").join(file)).unwrap(),
            "{file}"
        );
    }
    let predictive = fs::read_to_string(dir.path().join("report/predictive.csv")).unwrap();
    assert_eq!(predictive.lines().count(), 51);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin().args(["run", "-c"]).arg(dir.path().join("missing.toml")).status().unwrap();
    assert_eq!(status.code(), Some(2));

    fs::write(dir.path().join("bad.toml"), "problem = \"rod1d\"\nlevels = [16, 8]\n").unwrap();
    let status = bin().args(["run", "-c"]).arg(dir.path().join("bad.toml")).status().unwrap();
    assert_eq!(status.code(), Some(2));

    // Observations no field can explain: every particle gets zero weight.
    let cfg = dir.path().join("rod.toml");
    fs::write(&cfg, ROD).unwrap();
    assert!(bin().args(["synth", "-c"]).arg(&cfg).status().unwrap().success());
    let obs_path = dir.path().join("obs.json");
    let mut obs = ObservationFile::read(&obs_path).unwrap();
    obs.values[0] = 1e300;
    obs.write(&obs_path).unwrap();
    let status = bin().args(["run", "-c"]).arg(&cfg).status().unwrap();
    assert_eq!(status.code(), Some(3));

    // A solver that can never converge.
    let plate = dir.path().join("plate.toml");
    fs::write(
        &plate,
        r#"
problem = "conduct2d"
levels = [4]
data = "plate_obs.json"
output = "plate_out"

[smc]
n_particles = 8

[solver]
cg_tolerance = 1e-14
cg_max_iterations = 1

[sensors]
layout = "points"
points = [[0.5, 0.5], [1.0, 0.5]]
"#,
    )
    .unwrap();
    fs::write(
        dir.path().join("plate_obs.json"),
        r#"{"format": "bridgefit-observations/1", "problem": "conduct2d", "sensors": [[0.5, 0.5], [1.0, 0.5]], "values": [0.5, 1.0]}"#,
    )
    .unwrap();
    let status = bin().args(["run", "-c"]).arg(&plate).status().unwrap();
    assert_eq!(status.code(), Some(4));
}
