use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geometry::SegmentFrame;
use crate::mixture::GaussianMixture;
use crate::par::{map_chunks, Exec};
use crate::rng::NoiseStream;
use crate::samplers::BisectorSde;
use crate::schedule::NoiseSchedule;

/// Inputs of the terminal midpoint bound, all in x-space units over unit steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpmBoundInputs {
    /// sup ½β_t over the span.
    pub eta_max: f64,
    /// Σ ½β_t over the span.
    pub eta_integral: f64,
    /// K(t) for t = span.0..=span.1.
    pub k: Vec<f64>,
    pub lambda_rep: f64,
    pub theta: f64,
    pub span: (usize, usize),
}

impl DdpmBoundInputs {
    pub fn k_integral(&self) -> f64 {
        self.k.iter().sum()
    }

    pub fn with_theta(&self, theta: f64) -> Self {
        DdpmBoundInputs { theta, ..self.clone() }
    }
}

/// (4/π)exp(−π²∫η / (16(1+∫K)²ϑ²)) + 2exp(−λ_rep ϑ²/(2η_max)), capped at 1.
pub fn ddpm_terminal_bound(inp: &DdpmBoundInputs) -> f64 {
    let th2 = inp.theta * inp.theta;
    let one_k = 1.0 + inp.k_integral();
    let first = 4.0 / PI * (-PI * PI * inp.eta_integral / (16.0 * one_k * one_k * th2)).exp();
    let second = 2.0 * (-inp.lambda_rep * th2 / (2.0 * inp.eta_max)).exp();
    (first + second).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftBoundConfig {
    pub t_lo: usize,
    pub t_hi: usize,
    /// ϑ as a fraction of ℓ_t.
    pub theta: f64,
    /// Exit-infeasibility radius a* as a fraction of ℓ_t.
    pub a_star: f64,
    /// Orthogonal offsets uniform in [−z, z]·ℓ_t.
    pub z_frac: f64,
    /// Drift evaluations per time index.
    pub n_samples: usize,
    pub n_intervals: usize,
    pub seed: u64,
}

impl Default for DriftBoundConfig {
    fn default() -> Self {
        DriftBoundConfig { t_lo: 1, t_hi: 40, theta: 0.15, a_star: 0.280, z_frac: 0.0228, n_samples: 1000, n_intervals: 50, seed: 0 }
    }
}

/// K(t) and λ_rep from a sampled drift b(a, t, rep).
///
/// K(t) = max over |a| ≤ 2ϑ_t of |b|/|a|; λ_rep = min over t and
/// ϑ_t ≤ |a| ≤ a*_t of −b/a. Each side of the midpoint gets `n_int` points.
pub fn drift_bounds_from<F>(drift: F, ts: &[usize], theta_t: &dyn Fn(usize) -> f64, a_star_t: &dyn Fn(usize) -> f64, n_int: usize, reps: usize) -> (Vec<f64>, f64)
where
    F: Fn(f64, usize, usize) -> f64,
{
    let mut ks = Vec::with_capacity(ts.len());
    let mut lam = f64::INFINITY;
    for &t in ts {
        let (th, ast) = (theta_t(t), a_star_t(t));
        let mut k = 0.0f64;
        let mut rep_id = 0;
        for side in [1.0, -1.0] {
            for i in 1..=n_int {
                let a = side * 2.0 * th * i as f64 / n_int as f64;
                for _ in 0..reps {
                    k = k.max(drift(a, t, rep_id).abs() / a.abs());
                    rep_id += 1;
                }
            }
            for i in 0..=n_int {
                let a = side * (th + (ast - th) * i as f64 / n_int as f64);
                for _ in 0..reps {
                    lam = lam.min(-drift(a, t, rep_id) / a);
                    rep_id += 1;
                }
            }
        }
        ks.push(k);
    }
    (ks, lam)
}

pub fn estimate_drift_bounds(gmm: &GaussianMixture, sched: &NoiseSchedule, seg: &SegmentFrame, cfg: &DriftBoundConfig) -> DdpmBoundInputs {
    let sde = BisectorSde { gmm, sched, seg, z_bound: cfg.z_frac * seg.ell, noise: false };
    let ts: Vec<usize> = (cfg.t_lo..=cfg.t_hi).collect();
    let reps = cfg.n_samples.div_ceil(4 * cfg.n_intervals + 2).max(1);
    let streams: Vec<NoiseStream> = ts.iter().map(|&t| NoiseStream::new(cfg.seed, t as u64)).collect();
    let drift = |a: f64, t: usize, rep: usize| {
        let z = sde.sample_orth(&streams[t - cfg.t_lo], rep as u64);
        sde.drift(a, t, &z)
    };
    let ell_t = |t: usize| seg.ell_t(sched, t);
    let (k, lambda_rep) = drift_bounds_from(drift, &ts, &|t| cfg.theta * ell_t(t), &|t| cfg.a_star * ell_t(t), cfg.n_intervals, reps);
    let etas: Vec<f64> = ts.iter().map(|&t| 0.5 * sched.beta(t)).collect();
    DdpmBoundInputs {
        eta_max: etas.iter().cloned().fold(0.0, f64::max),
        eta_integral: etas.iter().sum(),
        k,
        lambda_rep,
        theta: cfg.theta * seg.ell,
        span: (cfg.t_lo, cfg.t_hi),
    }
}

/// Terminal A_0 of bisector paths started at `a_init` from `t_start`.
#[allow(clippy::too_many_arguments)]
pub fn bisector_terminals(
    gmm: &GaussianMixture,
    sched: &NoiseSchedule,
    seg: &SegmentFrame,
    t_start: usize,
    a_init: f64,
    z_bound: f64,
    n_paths: u64,
    seed: u64,
    exec: Exec,
) -> Vec<f64> {
    let sde = BisectorSde { gmm, sched, seg, z_bound, noise: true };
    map_chunks(exec, 0..n_paths, |ids| {
        ids.map(|id| *sde.path(t_start, a_init, &NoiseStream::new(seed, id)).last().unwrap()).collect::<Vec<f64>>()
    })
    .concat()
}
