use mixdiff::analysis::{detect_tau2, find_mode_equilibria, min_separation, rescaled_tube_distance};
use mixdiff::geometry::{epsilon_from_kappa, SegmentFrame};
use mixdiff::mixture::{build_grid_mixture, GaussianMixture};
use mixdiff::samplers::{restart_from_point, sample_trajectory, write_trajectories, ExactScore, SamplerConfig};
use mixdiff::schedule::{NoiseSchedule, StepGrid};

fn setup() -> (GaussianMixture, NoiseSchedule) {
    let g = build_grid_mixture(5, 2.0, 0.02, 2, 25).unwrap();
    let s = NoiseSchedule::linear(1000, 1e-4, 0.02, g.sigma()).unwrap();
    (g, s)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn restart_at_stable_equilibrium_lands_on_its_mode() {
    let (g, s) = setup();
    let src = ExactScore::new(&g, &s);
    let ddim = SamplerConfig::ddim(StepGrid::ddim_quadratic(1000, 50).unwrap(), 0.0, 3);
    let ddpm = SamplerConfig::ddpm(1000, 3);
    for (i, j) in [(12, 13), (0, 5), (18, 23)] {
        let seg = SegmentFrame::new(&g, i, j).unwrap();
        let tau2 = detect_tau2(min_separation(&g), &s, 7.0, 2).unwrap();
        for t in [tau2 / 2, tau2] {
            let eq = find_mode_equilibria(&g, &seg, s.sigma_tilde_sq(t), 7.0);
            for (xi, k) in [(eq.near_i.unwrap().xi, i), (eq.near_j.unwrap().xi, j)] {
                let x: Vec<f64> = seg.point(xi).iter().map(|v| v * s.alpha_bar(t).sqrt()).collect();
                for cfg in [&ddim, &ddpm] {
                    let start = if cfg.grid.n_steps() == 1000 { t } else { cfg.grid.indices.iter().copied().filter(|&v| v <= t).max().unwrap() };
                    let r = restart_from_point(&x, start, cfg, &src, &s, 0).unwrap();
                    let end = r.states.last().unwrap();
                    assert!(dist(end, g.mode(k)) < 5.0 * g.sigma(), "pair ({i},{j}) t={t} mode {k}");
                }
            }
        }
    }
}

#[test]
fn deterministic_tube_membership_persists_after_tau2() {
    let (g, s) = setup();
    let src = ExactScore::new(&g, &s);
    let eps = epsilon_from_kappa(g.n_modes(), 7.0);
    let level = eps / (g.dim() as f64).sqrt();
    let tau2 = detect_tau2(min_separation(&g), &s, 7.0, 2).unwrap();
    let cfg = SamplerConfig::ddim(StepGrid::ddim_quadratic(1000, 50).unwrap(), 0.0, 11);
    for id in 0..100 {
        let r = sample_trajectory(&cfg, &src, &s, id).unwrap();
        let d: Vec<f64> = r.times.iter().zip(&r.states).filter(|(&t, _)| t <= tau2).map(|(&t, x)| rescaled_tube_distance(&g, &s, x, t, eps)).collect();
        let Some(entry) = d.iter().position(|&v| v <= level) else { continue };
        let worst = d[entry..].iter().cloned().fold(0.0, f64::max);
        assert!(worst <= level, "traj {id}: left the tube after entry ({worst} > {level})");
    }
}

#[test]
fn trajectory_dump_has_rows_and_sidecar() {
    let (g, s) = setup();
    let src = ExactScore::new(&g, &s);
    let cfg = SamplerConfig::ddim(StepGrid::ddim_quadratic(1000, 50).unwrap(), 0.0, 5);
    let recs: Vec<_> = (0..3).map(|id| sample_trajectory(&cfg, &src, &s, id).unwrap()).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.csv");
    write_trajectories(&path, &recs, &cfg).unwrap();
    let mut r = csv::Reader::from_path(&path).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["traj_id", "step_index", "t", "x_0", "x_1"]);
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 3 * recs[0].states.len());
    let last = &rows[rows.len() - 1];
    assert_eq!(&last[2], "0");
    assert_eq!(last[3].parse::<f64>().unwrap(), recs[2].states.last().unwrap()[0]);
    let side: serde_json::Value = serde_json::from_slice(&std::fs::read(path.with_extension("json")).unwrap()).unwrap();
    assert_eq!(side["trajectories"].as_array().unwrap().len(), 3);
    assert_eq!(side["config"]["seed"], 5);
}
