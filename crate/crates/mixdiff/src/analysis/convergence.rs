use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::stats::least_squares;
use crate::geometry::{nearest_pair_scaled, Extension, SegmentFrame};
use crate::mixture::GaussianMixture;
use crate::samplers::{ChunkResult, Observer};
use crate::schedule::NoiseSchedule;

/// Rescaled distance d⊥(y, L_ε)/√ϖ to the nearest pair's extended segment.
pub fn rescaled_tube_distance(gmm: &GaussianMixture, sched: &NoiseSchedule, x: &[f64], t: usize, eps: f64) -> f64 {
    let s = sched.alpha_bar(t).sqrt();
    let y: Vec<f64> = x.iter().map(|v| v / s).collect();
    let (i, j, _) = nearest_pair_scaled(gmm, &y, 1.0);
    let seg = SegmentFrame::new(gmm, i, j).expect("distinct modes");
    seg.perp_distance(eps, Extension::Fraction, &y) / (gmm.dim() as f64).sqrt()
}

/// Per-step sums of rescaled d⊥ and its square.
pub struct TubeObserver<'a> {
    pub gmm: &'a GaussianMixture,
    pub sched: &'a NoiseSchedule,
    pub eps: f64,
}

impl Observer for TubeObserver<'_> {
    type Acc = Vec<(f64, f64)>;

    fn start(&self, _: Range<u64>) -> Self::Acc {
        Vec::new()
    }

    fn observe(&self, acc: &mut Self::Acc, _: usize, t: usize, _: Range<u64>, states: &[f64]) {
        let mut s = (0.0, 0.0);
        for x in states.chunks(self.gmm.dim()) {
            let d = rescaled_tube_distance(self.gmm, self.sched, x, t, self.eps);
            s.0 += d;
            s.1 += d * d;
        }
        acc.push(s);
    }
}

/// Mean rescaled d⊥ per recorded time with 95% normal half-widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeSeries {
    pub times: Vec<usize>,
    pub u: Vec<f64>,
    pub mean: Vec<f64>,
    pub ci_half: Vec<f64>,
    pub n: u64,
}

impl TubeSeries {
    /// Ordered reduction of chunk accumulators.
    pub fn reduce(chunks: &[ChunkResult<Vec<(f64, f64)>>], times: &[usize], sched: &NoiseSchedule) -> Self {
        let steps = times.len();
        let mut sum = vec![0.0; steps];
        let mut sq = vec![0.0; steps];
        let mut n = 0u64;
        for c in chunks {
            n += c.ids.end - c.ids.start;
            for (k, &(a, b)) in c.acc.iter().enumerate() {
                sum[k] += a;
                sq[k] += b;
            }
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let ci_half = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = ((q / nf - m * m) * nf / (nf - 1.0)).max(0.0);
                1.96 * (var / nf).sqrt()
            })
            .collect();
        TubeSeries { times: times.to_vec(), u: times.iter().map(|&t| sched.u_time(t)).collect(), mean, ci_half, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceFit {
    /// None when the fit window has fewer than 5 points.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub plateau: f64,
    /// Inclusive index window used for the fit.
    pub window: (usize, usize),
    pub n_points: usize,
}

/// Log-linear fit of d against u over the pre-plateau window: from the first
/// point below half the initial value to the first point within twice the
/// terminal plateau.
pub fn fit_tube_convergence(u: &[f64], d: &[f64]) -> ConvergenceFit {
    let n = d.len();
    let plateau = *d.last().unwrap_or(&f64::NAN);
    let i0 = d.iter().position(|&v| v < 0.5 * d[0]).unwrap_or(n);
    let i1 = (i0..n).find(|&k| d[k] <= 2.0 * plateau).unwrap_or(n.saturating_sub(1));
    let n_points = if i0 < n && i1 >= i0 { i1 - i0 + 1 } else { 0 };
    let fit = if n_points >= 5 {
        let ln: Vec<f64> = d[i0..=i1].iter().map(|v| v.ln()).collect();
        least_squares(&u[i0..=i1], &ln)
    } else {
        None
    };
    ConvergenceFit { slope: fit.map(|f| f.slope), intercept: fit.map(|f| f.intercept), plateau, window: (i0, i1), n_points }
}
