use std::fs;
use std::path::Path;
use std::process::Command;

use chaoslab::artifacts::{read_manifest, RunStatus};
use chaoslab::config::{parse_config, Overrides, StudyKind};
use chaoslab::run_study;
use walkdir::WalkDir;

const CANONICAL: &str = r#"
[kernel]
dimension = 1
lambda0 = 1.0
[[kernel.modes]]
k = [1]
A = [0.5]

[initial]
dimension = 1
[[initial.modes]]
k = [1]
amplitude = 0.4
"#;

fn particles_cfg(extra: &str) -> String {
    format!(
        "{CANONICAL}
[run]
seed = 5

[particles]
n_particles = 16
replicas = 40
dt = 1e-3
horizon = 0.02
snapshots = [0.01]
bins = 8
{extra}
"
    )
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_chaoslab"))
}

fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(
        dir.path(),
        "pde.toml",
        &format!("{CANONICAL}\n[pde]\ngrid = 64\ndt = 1e-4\nhorizon = 0.005\n"),
    );
    let out = dir.path().join("out");
    let st = bin()
        .args(["pde-solve", "--config"])
        .arg(&good)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(out.join("manifest.json").is_file());

    let typo = write(
        dir.path(),
        "typo.toml",
        &fs::read_to_string(&good).unwrap().replace("lambda0", "lamda0"),
    );
    let o = bin().args(["pde-solve", "--config"]).arg(&typo).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("kernel.lamda0") && err.contains("kernel.lambda0"), "{err}");

    let o = bin().args(["chaos-study", "--config"]).arg(&good).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`chaos`"));

    let o = bin()
        .args(["pde-solve", "--dry-run", "--config"])
        .arg(&good)
        .arg("--out")
        .arg(dir.path().join("never"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(!dir.path().join("never").exists());
}

#[test]
fn failed_invariant_keeps_artifacts_and_marks_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write(
        dir.path(),
        "p.toml",
        &particles_cfg("reference_grid = 64\nl1_tolerance = 1e-9"),
    );
    let out = dir.path().join("out");
    let st = bin()
        .args(["particles-run", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(1));
    let m = read_manifest(&out).unwrap();
    assert_eq!(m.status, RunStatus::Failed);
    assert_eq!(
        m.failure_point.as_deref(),
        Some("marginal matches mean-field reference")
    );
    assert!(m.checksum_of("particles_histogram.csv").is_some());
}

#[test]
fn manifest_lists_every_file_and_reruns_match_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let text = particles_cfg("reference_grid = 64\nl1_tolerance = 0.3");
    let mut manifests = Vec::new();
    for (i, workers) in [1usize, 3].into_iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let cfg = parse_config(
            &text,
            StudyKind::ParticlesRun,
            &Overrides {
                seed: None,
                output: Some(out.clone()),
                workers: Some(workers),
            },
        )
        .unwrap();
        let m = run_study(&cfg, StudyKind::ParticlesRun).unwrap();
        assert!(m.passed(), "{:?}", m.checks);
        let on_disk: Vec<String> = WalkDir::new(&out)
            .sort_by_file_name()
            .into_iter()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_file() && e.file_name() != "manifest.json")
            .map(|e| e.path().strip_prefix(&out).unwrap().to_string_lossy().into_owned())
            .collect();
        let listed: Vec<String> = m.artifacts.iter().map(|a| a.path.clone()).collect();
        assert_eq!(on_disk, listed);
        manifests.push(m);
    }
    assert_eq!(manifests[0].config_hash, manifests[1].config_hash);
    assert_eq!(manifests[0].artifacts, manifests[1].artifacts);
    assert_eq!(manifests[0].workers, 1);
}

#[test]
fn inequality_suite_passes_with_small_budget() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{CANONICAL}\n[inequalities]\ninstances = 200\nmoment_ladder = [10, 100]\nmoment_samples = 5000\ncontrol_samples = 500\n"
    );
    let cfg = parse_config(
        &text,
        StudyKind::VerifyInequalities,
        &Overrides {
            output: Some(dir.path().to_path_buf()),
            ..Overrides::default()
        },
    )
    .unwrap();
    let m = run_study(&cfg, StudyKind::VerifyInequalities).unwrap();
    assert!(m.passed(), "{:?}", m.checks);
    assert!(m.checksum_of("change_of_measure.csv").is_some());
}
