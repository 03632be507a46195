use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn leadlag_fuse(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leadlag-fuse"))
        .args(args)
        .env("LEADLAG_FUSE_OUT", out)
        .output()
        .unwrap()
}

/// A 3-asset, 2-day universe with two specs; fast enough for every test.
fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(
        &path,
        r#"
schema_version = 1
[graphs]
specs = [{ period_minutes = 1, lag = 0 }, { period_minutes = 1, lag = 1 }]
[model]
max_epochs = 20
[synth]
n_assets = 4
days = 3
"#,
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_flag_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let o = leadlag_fuse(&["graphs"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = leadlag_fuse(&["graphs", "--config", &cfg, "--bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_configs_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for set in [
        "graphs.nope=1",
        "graphs.p_value=2.0",
        "model.max_epochs=\"x\"",
    ] {
        let o = leadlag_fuse(&["ingest", "--config", &cfg, "--set", set], dir.path());
        assert_eq!(o.status.code(), Some(3), "{set}: {}", stderr(&o));
        assert_eq!(stderr(&o).trim().lines().count(), 1);
    }
}

#[test]
fn missing_inputs_exit_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = leadlag_fuse(&["graphs", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let o = leadlag_fuse(&["ingest", "--config", "/no/such.toml"], dir.path());
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn stages_run_in_sequence_and_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = small_config(dir.path());
    let run = |stage: &str, extra: &[&str]| {
        let mut args = vec![stage, "--config", &cfg, "--threads", "2"];
        args.extend_from_slice(extra);
        let o = leadlag_fuse(&args, &out);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    };
    run("synth", &[]);
    run("ingest", &[]);
    run("graphs", &[]);
    let edges = out.join("graphs/d1_T1/2021-01-03T0000Z.csv");
    let first = fs::read(&edges).unwrap();
    run("graphs", &[]);
    assert_eq!(fs::read(&edges).unwrap(), first);

    let report = || -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
    };
    run(
        "fuse",
        &["--seed-init", "5", "--set", "model.learning_rate=0.01"],
    );
    assert_eq!(report()["config"]["model"]["learning_rate"], 0.01);
    assert_eq!(report()["seeds"]["init"], 5);
    run("postprocess", &[]);
    let report = report();
    assert_eq!(report["graphs"]["window_ends"].as_array().unwrap().len(), 3);
    assert_eq!(report["fuse"]["samples"], 12);
    assert_eq!(fs::read_dir(out.join("similarity")).unwrap().count(), 6);
    for files in report["outputs"].as_object().unwrap().values() {
        for f in files.as_array().unwrap() {
            let len = fs::metadata(out.join(f.as_str().unwrap())).unwrap().len();
            assert!(len > 0, "{f}");
        }
    }
}
