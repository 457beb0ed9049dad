use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use migflow_core::pipeline::snapshot;
use migflow_core::tensor::MigrationTensor;
use migflow_core::{PipelineConfig, SynthSpec};

fn migflow(args: &[&str]) -> Output {
    migflow_in(Path::new("."), args)
}

fn migflow_in(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_migflow"))
        .current_dir(cwd)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Four months, three countries, three users who all move GB -> FR at month 2.
fn three_movers(dir: &Path) -> PathBuf {
    fs::write(dir.join("registry.txt"), "GB\nFR\nDE\n").unwrap();
    let mut events = String::from("user_id,timestamp,country\n");
    for user in ["a", "b", "c"] {
        for (month, country) in [(1, "GB"), (2, "GB"), (3, "FR"), (4, "FR")] {
            for day in [3, 17] {
                events.push_str(&format!("{user},2020-{month:02}-{day:02}T12:00:00Z,{country}\n"));
            }
        }
    }
    fs::write(dir.join("events.csv"), events).unwrap();
    let config = dir.join("pipeline.toml");
    fs::write(
        &config,
        r#"epoch = "2020-01"
months = 4
registry = "registry.txt"
input = "events.csv"
output_dir = "out"

[fit]
rank = 1
restarts = 2
"#,
    )
    .unwrap();
    config
}

#[test]
fn single_planted_move_gives_tensor_total_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = three_movers(dir.path());
    let out = migflow(&["run", "-c", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let tensor = MigrationTensor::read(&dir.path().join("out/tensor.txt")).unwrap();
    assert_eq!(tensor.total(), 3);
    assert_eq!(tensor.nnz(), 1);
    assert_eq!(tensor.get(0, 1, 2), 3);
    let summary = fs::read_to_string(dir.path().join("out/reports/summary.json")).unwrap();
    assert!(summary.contains("\"GB\"") && summary.contains("\"FR\""));
}

#[test]
fn staged_commands_match_a_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = three_movers(dir.path());
    let config = config.to_str().unwrap();
    let cwd = tempfile::tempdir().unwrap();
    assert!(migflow_in(cwd.path(), &["run", "-c", config, "-o", "full"])
        .status
        .success());
    for stage in ["ingest", "residences", "detect", "tensorize", "fit", "analyze"] {
        let out = migflow_in(cwd.path(), &[stage, "-c", config, "-o", "staged"]);
        assert!(out.status.success(), "{stage}: {}", stderr(&out));
    }
    // a relative -o is taken from the working directory, not the config
    let full = snapshot(&cwd.path().join("full")).unwrap();
    let staged = snapshot(&cwd.path().join("staged")).unwrap();
    assert!(!full.is_empty());
    assert_eq!(full, staged);
}

#[test]
fn empty_input_yields_an_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = three_movers(dir.path());
    fs::write(dir.path().join("events.csv"), "").unwrap();
    let out = migflow(&["run", "-c", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("solver skipped"));
    let summary = fs::read_to_string(dir.path().join("out/reports/summary.json")).unwrap();
    assert_eq!(summary, "[]\n");
    assert!(!dir.path().join("out/model.txt").exists());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = three_movers(dir.path());
    // k = 3 exceeds months / 2 for a four-month calendar
    let out = migflow(&["detect", "-c", config.to_str().unwrap(), "-k", "3"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let config = three_movers(dir.path());
    let config = config.to_str().unwrap();

    // unknown config key
    let bad = dir.path().join("bad.toml");
    fs::write(
        &bad,
        fs::read_to_string(config)
            .unwrap()
            .replace("months = 4", "months = 4\nmonth = 4"),
    )
    .unwrap();
    assert_eq!(migflow(&["run", "-c", bad.to_str().unwrap()]).status.code(), Some(2));

    // usage error
    assert_eq!(migflow(&["run"]).status.code(), Some(2));

    // missing input file
    fs::remove_file(dir.path().join("events.csv")).unwrap();
    let out = migflow(&["run", "-c", config]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("ingest"), "{}", stderr(&out));

    // a stage whose upstream artifact was never written
    assert_eq!(migflow(&["fit", "-c", config]).status.code(), Some(3));

    // missing config file
    assert_eq!(
        migflow(&["run", "-c", "/nonexistent/pipeline.toml"]).status.code(),
        Some(2)
    );
}

#[test]
fn synth_output_feeds_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(
        &spec,
        r#"seed = 5
users = 60
epoch = "2019-01"
months = 12
countries = ["NO", "SE", "FI"]

[[components]]
origin = "NO"
destination = "SE"
active_months = [6]
intensity = 10.0
"#,
    )
    .unwrap();
    let data = dir.path().join("data");
    let out = migflow(&["synth", "-s", spec.to_str().unwrap(), "-o", data.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let config = dir.path().join("pipeline.toml");
    fs::write(
        &config,
        "epoch = \"2019-01\"\nmonths = 12\nregistry = \"data/registry.txt\"\ninput = \"data/events.csv\"\noutput_dir = \"out\"\n\n[fit]\nrank = 2\nrestarts = 2\n",
    )
    .unwrap();
    let out = migflow(&["run", "-c", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let fitted = fs::read_to_string(dir.path().join("out/tensor.txt")).unwrap();
    let truth = fs::read_to_string(data.join("truth_tensor.txt")).unwrap();
    assert_eq!(fitted, truth);
}

#[test]
fn bundled_demos_parse() {
    let demos = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demos");
    for name in ["december", "exchange"] {
        let spec = SynthSpec::load(&demos.join(name).join("synth.toml")).unwrap();
        spec.validate().unwrap();
        let config = PipelineConfig::load(&demos.join(name).join("pipeline.toml")).unwrap();
        assert_eq!((config.epoch, config.months), (spec.epoch, spec.months), "{name}");
        migflow_core::residence::check_window(config.window, config.months).unwrap();
        config.fit.validate().unwrap();
    }
}
