use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::geometry::nearest_pair_scaled;
use crate::mixture::GaussianMixture;
use crate::samplers::Observer;
use crate::schedule::NoiseSchedule;

/// Dominance ratio Δ_t / (2σ_t²); the dominance inequality at level κ holds iff ratio ≥ κ.
pub fn dominance_ratio(gmm: &GaussianMixture, sched: &NoiseSchedule, x: &[f64], t: usize) -> f64 {
    let (_, _, delta) = nearest_pair_scaled(gmm, x, sched.alpha_bar(t).sqrt());
    delta / (2.0 * sched.sigma_t_sq(t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub kappa: f64,
    pub tau1: Option<usize>,
    pub tau2: Option<usize>,
    pub times: Vec<usize>,
    /// Δ_t at each recorded time.
    pub margins: Vec<f64>,
    /// σ̃_t² ϖ at each recorded time.
    pub sigma_tilde_dim: Vec<f64>,
}

/// Suffix minima of per-step ratios, indexed like `times` (decreasing t).
pub fn suffix_minima(ratios: &[f64]) -> Vec<f64> {
    let mut out = ratios.to_vec();
    for k in (0..out.len().saturating_sub(1)).rev() {
        out[k] = out[k].min(out[k + 1]);
    }
    out
}

/// Largest recorded t whose whole tail t' ≤ t satisfies ratio ≥ κ.
pub fn tau1_from_suffix(times: &[usize], suffix: &[f64], kappa: f64) -> Option<usize> {
    // suffix minima are nondecreasing along the record
    let k = suffix.partition_point(|&m| m < kappa);
    times.get(k).copied()
}

pub fn detect_tau1(times: &[usize], states: &[Vec<f64>], gmm: &GaussianMixture, sched: &NoiseSchedule, kappa: f64) -> AssumptionReport {
    let margins: Vec<f64> = times
        .iter()
        .zip(states)
        .map(|(&t, x)| nearest_pair_scaled(gmm, x, sched.alpha_bar(t).sqrt()).2)
        .collect();
    let ratios: Vec<f64> = times.iter().zip(&margins).map(|(&t, d)| d / (2.0 * sched.sigma_t_sq(t))).collect();
    let tau1 = tau1_from_suffix(times, &suffix_minima(&ratios), kappa);
    let ell = min_separation(gmm);
    AssumptionReport {
        kappa,
        tau1,
        tau2: detect_tau2(ell, sched, kappa, gmm.dim()),
        times: times.to_vec(),
        margins,
        sigma_tilde_dim: times.iter().map(|&t| sched.sigma_tilde_sq(t) * gmm.dim() as f64).collect(),
    }
}

/// Largest t with ℓ² ≥ 4κσ̃²_{t'}ϖ for every t' ≤ t.
pub fn detect_tau2(ell: f64, sched: &NoiseSchedule, kappa: f64, dim: usize) -> Option<usize> {
    let ok = |t: usize| ell * ell >= 4.0 * kappa * sched.sigma_tilde_sq(t) * dim as f64;
    let mut last = None;
    for t in 0..=sched.t_max() {
        if !ok(t) {
            break;
        }
        last = Some(t);
    }
    last
}

pub fn min_separation(gmm: &GaussianMixture) -> f64 {
    let n = gmm.n_modes();
    let mut d = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            d = d.min(crate::mixture::sq_dist_scaled(gmm.mode(i), gmm.mode(j), 1.0));
        }
    }
    d.sqrt()
}

/// Records the dominance ratio of every trajectory at every step.
pub struct DominanceObserver<'a> {
    pub gmm: &'a GaussianMixture,
    pub sched: &'a NoiseSchedule,
}

impl Observer for DominanceObserver<'_> {
    /// `[traj][step]` ratios for the chunk.
    type Acc = Vec<Vec<f64>>;

    fn start(&self, ids: Range<u64>) -> Self::Acc {
        vec![Vec::new(); (ids.end - ids.start) as usize]
    }

    fn observe(&self, acc: &mut Self::Acc, _: usize, t: usize, _: Range<u64>, states: &[f64]) {
        let d = self.gmm.dim();
        for (r, x) in states.chunks(d).enumerate() {
            acc[r].push(dominance_ratio(self.gmm, self.sched, x, t));
        }
    }
}

/// Per-trajectory suffix minima, ready for κ sweeps.
#[derive(Debug, Clone)]
pub struct Tau1Table {
    pub times: Vec<usize>,
    pub suffix: Vec<Vec<f64>>,
}

impl Tau1Table {
    pub fn from_ratios(times: Vec<usize>, ratios: impl IntoIterator<Item = Vec<f64>>) -> Self {
        let suffix = ratios.into_iter().map(|r| suffix_minima(&r)).collect();
        Tau1Table { times, suffix }
    }

    pub fn tau1(&self, kappa: f64) -> Vec<Option<usize>> {
        self.suffix.iter().map(|s| tau1_from_suffix(&self.times, s, kappa)).collect()
    }

    /// Mean τ₁ over trajectories where it exists, and the fraction where it does.
    pub fn mean_tau1(&self, kappa: f64) -> (Option<f64>, f64) {
        let v: Vec<f64> = self.tau1(kappa).into_iter().flatten().map(|t| t as f64).collect();
        let frac = v.len() as f64 / self.suffix.len().max(1) as f64;
        if v.is_empty() {
            (None, frac)
        } else {
            (Some(v.iter().sum::<f64>() / v.len() as f64), frac)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::build_grid_mixture;
    use proptest::prelude::*;

    fn setup() -> (GaussianMixture, NoiseSchedule) {
        let g = build_grid_mixture(5, 2.0, 0.02, 2, 25).unwrap();
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02, g.sigma()).unwrap();
        (g, s)
    }

    #[test]
    fn pinned_trajectory_keeps_dominance_everywhere() {
        let (g, s) = setup();
        let times: Vec<usize> = (0..=60).rev().collect();
        let states: Vec<Vec<f64>> = times.iter().map(|&t| g.mode(12).iter().map(|m| m * s.alpha_bar(t).sqrt()).collect()).collect();
        let ratios: Vec<f64> = times.iter().zip(&states).map(|(&t, x)| dominance_ratio(&g, &s, x, t)).collect();
        let kmax = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let rep = detect_tau1(&times, &states, &g, &s, 0.99 * kmax);
        assert_eq!(rep.tau1, Some(60));
        assert_eq!(detect_tau1(&times, &states, &g, &s, 1e9).tau1, None);
    }

    #[test]
    fn tau2_matches_bisection() {
        let (g, s) = setup();
        let ell = min_separation(&g);
        let f = |t: usize| ell * ell - 4.0 * 7.0 * s.sigma_tilde_sq(t) * 2.0;
        let (mut lo, mut hi) = (0usize, 1000usize);
        assert!(f(lo) >= 0.0 && f(hi) < 0.0);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if f(mid) >= 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        assert_eq!(detect_tau2(ell, &s, 7.0, 2), Some(lo));
    }

    #[test]
    fn tau2_absent_when_modes_too_close() {
        let (_, s) = setup();
        assert_eq!(detect_tau2(1e-6, &s, 7.0, 2), None);
    }

    #[test]
    fn suffix_lookup() {
        let times = [40, 30, 20, 10, 0];
        let suf = suffix_minima(&[1.0, 5.0, 2.0, 8.0, 9.0]);
        assert_eq!(suf, vec![1.0, 2.0, 2.0, 8.0, 9.0]);
        assert_eq!(tau1_from_suffix(&times, &suf, 0.5), Some(40));
        assert_eq!(tau1_from_suffix(&times, &suf, 3.0), Some(10));
        assert_eq!(tau1_from_suffix(&times, &suf, 9.5), None);
    }

    proptest! {
        #[test]
        fn tau_monotone_in_kappa(r in proptest::collection::vec(0.0f64..30.0, 2..40), k1 in 0.1f64..25.0, dk in 0.0f64..10.0) {
            let times: Vec<usize> = (0..r.len()).rev().collect();
            let suf = suffix_minima(&r);
            let s = NoiseSchedule::linear(200, 1e-4, 0.02, 0.01).unwrap();
            let pairs = [
                (tau1_from_suffix(&times, &suf, k1), tau1_from_suffix(&times, &suf, k1 + dk)),
                (detect_tau2(0.7, &s, k1, 2), detect_tau2(0.7, &s, k1 + dk, 2)),
            ];
            for (a, b) in pairs {
                match (a, b) {
                    (None, Some(_)) => prop_assert!(false, "raising kappa created a crossing"),
                    (Some(a), Some(b)) => prop_assert!(b <= a),
                    _ => {}
                }
            }
        }
    }
}
