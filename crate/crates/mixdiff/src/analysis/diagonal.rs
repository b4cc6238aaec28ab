use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::assumptions::dominance_ratio;
use crate::geometry::nearest_pair_scaled;
use crate::mixture::{sq_dist_scaled, GaussianMixture};
use crate::samplers::Observer;
use crate::schedule::NoiseSchedule;

/// Cell diagonals of an axis-aligned square lattice: pairs at distance √2·ℓ_min.
pub fn cell_diagonals(gmm: &GaussianMixture) -> Vec<(usize, usize)> {
    let n = gmm.n_modes();
    let d2 = |i: usize, j: usize| sq_dist_scaled(gmm.mode(i), gmm.mode(j), 1.0);
    let dmin = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| d2(i, j)).fold(f64::INFINITY, f64::min);
    (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| (d2(i, j) - 2.0 * dmin).abs() <= 1e-9 * dmin)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DiagonalReport {
    /// States where the dominance inequality holds at level κ.
    pub states_checked: u64,
    /// Of those, states whose dominant pair is a cell diagonal.
    pub diagonal_dominant: u64,
    /// max over checked states and diagonals of min(γ̃_i, γ̃_j).
    pub max_min_resp: f64,
    /// States where some diagonal has min(γ̃_i, γ̃_j) > e^(−κ).
    pub violations: u64,
}

impl DiagonalReport {
    pub fn merge(&mut self, o: &DiagonalReport) {
        self.states_checked += o.states_checked;
        self.diagonal_dominant += o.diagonal_dominant;
        self.max_min_resp = self.max_min_resp.max(o.max_min_resp);
        self.violations += o.violations;
    }
}

pub struct DiagonalObserver<'a> {
    pub gmm: &'a GaussianMixture,
    pub sched: &'a NoiseSchedule,
    pub kappa: f64,
    pub diagonals: Vec<(usize, usize)>,
}

impl<'a> DiagonalObserver<'a> {
    pub fn new(gmm: &'a GaussianMixture, sched: &'a NoiseSchedule, kappa: f64) -> Self {
        DiagonalObserver { gmm, sched, kappa, diagonals: cell_diagonals(gmm) }
    }

    pub fn check_state(&self, x: &[f64], t: usize, rep: &mut DiagonalReport) {
        if dominance_ratio(self.gmm, self.sched, x, t) < self.kappa {
            return;
        }
        rep.states_checked += 1;
        let s = self.sched.alpha_bar(t).sqrt();
        let y: Vec<f64> = x.iter().map(|v| v / s).collect();
        let (i, j, _) = nearest_pair_scaled(self.gmm, &y, 1.0);
        if self.diagonals.contains(&(i, j)) {
            rep.diagonal_dominant += 1;
        }
        let mut g = vec![0.0; self.gmm.n_modes()];
        self.gmm.responsibilities_scaled(&y, 1.0, self.sched.sigma_tilde_sq(t), &mut g);
        let worst = self.diagonals.iter().map(|&(a, b)| g[a].min(g[b])).fold(0.0, f64::max);
        rep.max_min_resp = rep.max_min_resp.max(worst);
        if worst > (-self.kappa).exp() {
            rep.violations += 1;
        }
    }
}

impl Observer for DiagonalObserver<'_> {
    type Acc = DiagonalReport;

    fn start(&self, _: Range<u64>) -> Self::Acc {
        DiagonalReport::default()
    }

    fn observe(&self, acc: &mut Self::Acc, _: usize, t: usize, _: Range<u64>, states: &[f64]) {
        for x in states.chunks(self.gmm.dim()) {
            self.check_state(x, t, acc);
        }
    }
}
