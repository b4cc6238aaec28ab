use serde::{Deserialize, Serialize};

use super::classify::{Classifier, Label};
use super::equilibria::analytic_lambda;
use super::stats::{mean_se, Proportion};
use crate::error::{Error, Result};
use crate::geometry::SegmentFrame;
use crate::mixture::{sigmoid, GaussianMixture};
use crate::par::Exec;
use crate::samplers::{BatchRun, Init, Plan, SamplerConfig, ScoreSource};
use crate::schedule::NoiseSchedule;

/// Deterministic trapping window for a dimensionless radius ϑ over [0, t3].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrappingSpec {
    /// τ₃ in grid steps.
    pub tau3: usize,
    /// Time index where the remaining span starts.
    pub t3: usize,
    pub theta: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_plus: f64,
    /// u(0) − u(t3).
    pub delta_u: f64,
    pub entry_window: f64,
    /// 0 < ϑ ≤ ½ and ϑ < λ̲/(2(1+λ̄)²).
    pub admissible: bool,
}

impl TrappingSpec {
    pub fn new(ell: f64, sched: &NoiseSchedule, tau3: usize, t3: usize, theta: f64) -> Result<Self> {
        if t3 > sched.t_max() {
            return Err(Error::config("trap.t3", "beyond the schedule"));
        }
        if !(theta > 0.0) {
            return Err(Error::config("trap.theta", "must be positive"));
        }
        let lams: Vec<f64> = (0..=t3).map(|t| analytic_lambda(ell, sched.sigma_tilde_sq(t))).collect();
        let lambda_min = lams.iter().cloned().fold(f64::INFINITY, f64::min);
        let lambda_max = lams.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lambda_plus = lambda_max + 2.0 * (1.0 + lambda_max).powi(2) * theta;
        let delta_u = sched.u_time(0) - sched.u_time(t3);
        let admissible = theta <= 0.5 && lambda_min > 0.0 && theta < lambda_min / (2.0 * (1.0 + lambda_max).powi(2));
        Ok(TrappingSpec {
            tau3,
            t3,
            theta,
            lambda_min,
            lambda_max,
            lambda_plus,
            delta_u,
            entry_window: theta * (-lambda_plus * delta_u).exp(),
            admissible,
        })
    }
}

/// Integrates the equal-weight two-mode flow dξ/du = ς(a(ξ − ½)) − ξ from t3
/// to 0 with RK4 substeps, a = ℓ²/σ̃_t² held per unit step. Returns max |ξ − ½|.
pub fn parallel_flow_excursion(ell: f64, sched: &NoiseSchedule, t3: usize, offset: f64, substeps: usize) -> f64 {
    let mut xi = 0.5 + offset;
    let mut worst = offset.abs();
    for t in (1..=t3).rev() {
        let a = ell * ell / sched.sigma_tilde_sq(t);
        let f = |x: f64| sigmoid(a * (x - 0.5)) - x;
        let h = (sched.u_time(t - 1) - sched.u_time(t)) / substeps as f64;
        for _ in 0..substeps {
            let k1 = f(xi);
            let k2 = f(xi + 0.5 * h * k1);
            let k3 = f(xi + 0.5 * h * k2);
            let k4 = f(xi + h * k3);
            xi += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            worst = worst.max((xi - 0.5).abs());
        }
    }
    worst
}

/// Signed offsets with magnitudes spanning [0, ϑ], alternating sides.
pub fn trap_offsets(theta: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|k| {
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            s * theta * k as f64 / (n - 1) as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapOutcome {
    pub pair: (usize, usize),
    /// Offset along u as a fraction of ℓ_t.
    pub offset: f64,
    pub terminal_xi: f64,
    pub stuck: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapResult {
    pub outcomes: Vec<TrapOutcome>,
    pub per_pair: Vec<f64>,
    pub stuck: Proportion,
    /// Standard error of the stuck rate across mode pairs.
    pub se_pairs: f64,
    pub failures: usize,
}

impl TrapResult {
    /// Stuck proportion restricted to |offset| ≤ `limit`.
    pub fn stuck_within(&self, limit: f64) -> Proportion {
        let sel: Vec<&TrapOutcome> = self.outcomes.iter().filter(|o| o.offset.abs() <= limit).collect();
        Proportion::new(sel.iter().filter(|o| o.stuck).count() as u64, sel.len() as u64)
    }
}

/// Restarts the sampler from x = √ᾱ_{t3}(m + a ℓ u) on every pair and offset;
/// a trial is stuck when its terminal sample is an interpolation of that pair.
#[allow(clippy::too_many_arguments)]
pub fn trapping_experiment<S: ScoreSource>(
    gmm: &GaussianMixture,
    sched: &NoiseSchedule,
    source: &S,
    cfg: &SamplerConfig,
    t3: usize,
    pairs: &[(usize, usize)],
    theta: f64,
    n_per_pair: usize,
    exec: Exec,
) -> Result<TrapResult> {
    let plan = Plan::restart(cfg, t3)?;
    let segs = pairs.iter().map(|&(i, j)| SegmentFrame::new(gmm, i, j)).collect::<Result<Vec<_>>>()?;
    let offsets = trap_offsets(theta, n_per_pair);
    let s = sched.alpha_bar(t3).sqrt();
    let init = |id: u64, out: &mut [f64]| {
        let seg = &segs[id as usize / n_per_pair];
        let a = offsets[id as usize % n_per_pair] * seg.ell;
        for k in 0..out.len() {
            out[k] = s * (seg.midpoint[k] + a * seg.u[k]);
        }
    };
    let n = (pairs.len() * n_per_pair) as u64;
    let run = BatchRun { source, sched, plan: &plan, seed: cfg.seed, exec };
    let (finals, failures) = run.finals(0..n, &Init::Points(&init));
    let cls = Classifier::new(gmm);
    let d = gmm.dim();
    let outcomes: Vec<TrapOutcome> = finals
        .chunks(d)
        .enumerate()
        .map(|(id, x)| {
            let seg = &segs[id / n_per_pair];
            TrapOutcome {
                pair: (seg.i, seg.j),
                offset: offsets[id % n_per_pair],
                terminal_xi: seg.decompose(x).xi,
                stuck: cls.classify(x) == Label::Interpolation(seg.i, seg.j),
            }
        })
        .collect();
    let per_pair: Vec<f64> = outcomes
        .chunks(n_per_pair)
        .map(|c| c.iter().filter(|o| o.stuck).count() as f64 / n_per_pair as f64)
        .collect();
    let k = outcomes.iter().filter(|o| o.stuck).count() as u64;
    Ok(TrapResult {
        stuck: Proportion::new(k, n),
        se_pairs: mean_se(&per_pair).1,
        per_pair,
        outcomes,
        failures: failures.len(),
    })
}
