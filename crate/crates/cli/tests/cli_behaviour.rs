use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fors_cli::config::ExperimentConfig;
use fors_cli::output::{read_report, read_samples_csv};
use fors_cli::report::{RunReport, RunStatus};

fn fors(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fors"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn fors")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run_config(dir: &Path, text: &str, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = write_config(dir, text);
    let out = dir.join("out");
    let mut args = vec!["--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    (fors(&args), out)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_DIFFUSE: &str = r#"
kind = "diffuse"
seed = 11

[diffuse]
method = "simple"
n_chains = 200

[diffuse.data]
weights = [0.5, 0.5]
means = [[-2.0, 0.0], [2.0, 1.0]]
variances = [0.25, 0.5]
"#;

#[test]
fn invalid_method_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run_config(dir.path(), &SMALL_DIFFUSE.replace("\"simple\"", "\"fancy\""), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("method"), "{err}");
    assert!(err.contains("line"), "{err}");
    assert!(!out.exists());
}

#[test]
fn unknown_keys_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_DIFFUSE.replace("n_chains = 200", "n_chains = 200\nworkers = 4");
    let (o, _) = run_config(dir.path(), &text, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("workers"), "{}", stderr(&o));
}

#[test]
fn semantic_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_DIFFUSE.replace("variances = [0.25, 0.5]", "variances = [0.25, -0.5]");
    let (o, _) = run_config(dir.path(), &text, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("diffuse.data"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let o = fors(&["--config", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

const TILT: &str = r#"
kind = "tilt"
seed = 12

[tilt]
dim = 1
potential = { kind = "quadratic", lambda = 1.0 }
x0 = [0.5]
eta = 0.5
n_samples = 300
"#;

#[test]
fn strict_mode_rejects_oversized_steps() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = run_config(dir.path(), TILT, &["--strict"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("tilt.eta"), "{}", stderr(&o));
    let (o, out) = run_config(dir.path(), TILT, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = read_report(&out.join("summary.json")).unwrap();
    assert!(report.stat("eta").unwrap() > report.stat("eta_max").unwrap());
}

#[test]
fn flat_potential_needs_an_explicit_step() {
    let dir = tempfile::tempdir().unwrap();
    let text = TILT
        .replace("{ kind = \"quadratic\", lambda = 1.0 }", "{ kind = \"constant\" }")
        .replace("eta = 0.5\n", "");
    let (o, _) = run_config(dir.path(), &text, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("tilt.eta"), "{}", stderr(&o));
}

#[test]
fn sampler_failure_exits_one_and_flags_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
kind = "fors-oracle"
seed = 13

[fors]
max_outer_iters = 1

[fors_oracle]
runs = 5000
tilts = [-1.0, -1.0]
"#;
    let (o, out) = run_config(dir.path(), text, &[]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let report = read_report(&out.join("summary.json")).unwrap();
    assert_eq!(report.status, RunStatus::Failed);
    assert!(
        report.error.as_deref().unwrap().contains("budget"),
        "{:?}",
        report.error
    );
    assert!(!out.join("samples.csv").exists());
}

#[test]
fn summary_round_trips_and_echo_revalidates() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run_config(dir.path(), SMALL_DIFFUSE, &["--seed", "99"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = read_report(&out.join("summary.json")).unwrap();
    assert_eq!(report.seed, 99);
    assert_eq!(report.config.seed, 99);
    let text = serde_json::to_string(&report).unwrap();
    let again: RunReport = serde_json::from_str(&text).unwrap();
    assert_eq!(report, again);
    let echo = ExperimentConfig::from_toml_str(&report.config.to_toml_string().unwrap()).unwrap();
    echo.validate().unwrap();
    assert_eq!(echo, report.config);

    let counts = &report.counts;
    assert_eq!(counts.samples, 200);
    let t = counts.schedule_len.unwrap();
    assert!(counts.score_queries.unwrap() >= 200 * (t - 1));
    assert!(report.metric("ks_x1").is_some() && report.metric("ks_x2").is_some());
    assert!(report.stat("mean_norm").is_some());
}

#[test]
fn samples_csv_has_fixed_columns_and_17_digits() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run_config(dir.path(), SMALL_DIFFUSE, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("samples.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x1,x2"));
    let row = lines.next().unwrap();
    for field in row.split(',') {
        let mantissa = field.trim_start_matches('-').split('e').next().unwrap();
        assert_eq!(mantissa.replace('.', "").len(), 17, "{field}");
    }
    assert_eq!(read_samples_csv(&out.join("samples.csv")).unwrap().len(), 200);
}

#[test]
fn output_does_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TILT);
    let mut files = Vec::new();
    for workers in ["1", "3"] {
        let out = dir.path().join(format!("w{workers}"));
        let o = fors(&[
            "-c",
            cfg.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
            "--workers",
            workers,
        ]);
        assert_eq!(o.status.code(), Some(0));
        files.push(std::fs::read(out.join("samples.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn empty_or_foreign_files_are_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    std::fs::write(&csv, "").unwrap();
    let err = read_samples_csv(&csv).unwrap_err().to_string();
    assert!(err.contains("empty.csv"), "{err}");
    let json = dir.path().join("summary.json");
    std::fs::write(&json, r#"{"schema_version": 7}"#).unwrap();
    let err = read_report(&json).unwrap_err().to_string();
    assert!(
        err.contains("schema version mismatch") && err.contains("summary.json"),
        "{err}"
    );
}

#[test]
fn fors_matches_ddpm_baseline_on_a_shared_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let preset = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets/bench-ddpm-vs-fors.toml");
    let out = dir.path().join("bench");
    let o = fors(&["-c", preset.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = read_report(&out.join("summary.json")).unwrap();
    let rows = report.table.as_ref().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].schedule_len, rows[1].schedule_len);
    let (fors_row, ddpm_row) = (&rows[0], &rows[1]);
    assert!(fors_row.ks <= ddpm_row.ks + 0.01, "{} vs {}", fors_row.ks, ddpm_row.ks);
    assert_eq!(
        ddpm_row.total_score_queries,
        ddpm_row.n_chains * (ddpm_row.schedule_len - 1)
    );
    let csv = std::fs::read_to_string(out.join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    for row in rows {
        assert_eq!(
            read_samples_csv(&out.join(&row.samples_file)).unwrap().len() as u64,
            row.n_chains
        );
    }
}
