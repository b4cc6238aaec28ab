use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use mixdiff::harness::{emit_plot_data, run_in, ExperimentConfig, ExperimentKind};
use mixdiff::samplers::SamplerKind;
use mixdiff::Error;

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().to_string(), fs::read(&p).unwrap()))
        .collect()
}

fn small(kind: ExperimentKind, n: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { experiment: kind, n_trajectories: n, seed: 9, ..ExperimentConfig::default() };
    cfg.sampler.kind = SamplerKind::Ddim;
    cfg
}

#[test]
fn worker_count_does_not_change_tables() {
    for kind in [ExperimentKind::Sample, ExperimentKind::Convergence] {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for (d, w) in dirs.iter().zip([1, 8]) {
            let cfg = ExperimentConfig { workers: w, ..small(kind, 700) };
            run_in(&cfg, d.path()).unwrap();
        }
        let (a, b) = (csv_files(dirs[0].path()), csv_files(dirs[1].path()));
        assert!(!a.is_empty());
        assert_eq!(a, b, "{kind:?}");
    }
}

#[test]
fn rerunning_a_manifest_reproduces_tables() {
    let d = tempfile::tempdir().unwrap();
    let cfg = small(ExperimentKind::Sample, 300);
    run_in(&cfg, d.path()).unwrap();
    let first = csv_files(d.path());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(d.path().join("manifest.json")).unwrap()).unwrap();
    let again: ExperimentConfig = serde_json::from_value(manifest["config"].clone()).unwrap();
    let d2 = tempfile::tempdir().unwrap();
    run_in(&again, d2.path()).unwrap();
    assert_eq!(first, csv_files(d2.path()));
}

#[test]
fn interrupted_sweep_resumes_to_identical_tables() {
    let mut cfg = small(ExperimentKind::StepSweep, 600);
    cfg.analysis.step_grids = vec![10, 25];
    let whole = tempfile::tempdir().unwrap();
    run_in(&cfg, whole.path()).unwrap();

    let part = tempfile::tempdir().unwrap();
    let half = ExperimentConfig { id_range: Some([0, 300]), ..cfg.clone() };
    let b = run_in(&half, part.path()).unwrap();
    assert!(!b.complete);
    assert!(!part.path().join("step_sweep.csv").exists());
    let b = run_in(&cfg, part.path()).unwrap();
    assert!(b.complete);
    assert_eq!(csv_files(whole.path()), csv_files(part.path()));
}

#[test]
fn exact_ddpm_barely_interpolates() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = small(ExperimentKind::Sample, 1000);
    cfg.sampler.kind = SamplerKind::Ddpm;
    let b = run_in(&cfg, d.path()).unwrap();
    let counts = &b.summary["counts"];
    assert_eq!(counts["mode"].as_u64().unwrap() + counts["interpolation"].as_u64().unwrap() + counts["invalid"].as_u64().unwrap(), 1000);
    assert!(counts["interpolation"].as_u64().unwrap() <= 1, "{counts}");
    assert_eq!(b.failures, 0);
}

#[test]
fn plot_data_for_convergence_and_trap() {
    let d = tempfile::tempdir().unwrap();
    let b = run_in(&small(ExperimentKind::Convergence, 256), d.path()).unwrap();
    let files = emit_plot_data(&b).unwrap();
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().to_string()).collect();
    for n in ["ddpm_mean_d.csv", "ddpm_ci_half.csv", "ddim_mean_d.csv", "ddim_ci_half.csv", "plot.gp"] {
        assert!(names.contains(&n.to_string()), "{names:?}");
    }
    assert!(fs::read_to_string(d.path().join("plot/ddim_mean_d.csv")).unwrap().starts_with("u,mean_d\n"));

    let d = tempfile::tempdir().unwrap();
    let mut cfg = small(ExperimentKind::Trap, 1);
    cfg.analysis.trap_per_pair = 5;
    let b = run_in(&cfg, d.path()).unwrap();
    let files = emit_plot_data(&b).unwrap();
    assert_eq!(files.len(), 2 + cfg.analysis.z_values.len() + 1);
    let text = fs::read_to_string(d.path().join("plot/trap_ddim.csv")).unwrap();
    assert!(text.starts_with("offset_over_ell_t,stuck_rate\n"));
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn bad_config_is_reported_with_its_field() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = small(ExperimentKind::Sample, 10);
    cfg.mixture.sigma = -1.0;
    match run_in(&cfg, d.path()) {
        Err(Error::Config { field, .. }) => assert_eq!(field, "mixture.sigma"),
        other => panic!("{other:?}"),
    }
    assert!(ExperimentConfig::from_json(r#"{"mixture": {"sigmaa": 0.1}}"#).is_err());
}
