use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::classify::Label;
use super::stats::Proportion;
use crate::geometry::nearest_pair_scaled;
use crate::mixture::GaussianMixture;
use crate::samplers::Observer;
use crate::schedule::NoiseSchedule;

/// Flags trajectories whose rescaled state comes within ϑℓ of the nearest
/// pair's midpoint at any recorded t ≤ t3.
pub struct MidpointVisits<'a> {
    pub gmm: &'a GaussianMixture,
    pub sched: &'a NoiseSchedule,
    /// Radius as a fraction of the pair length.
    pub theta: f64,
    pub t3: usize,
}

impl MidpointVisits<'_> {
    pub fn near_midpoint(&self, x: &[f64], t: usize) -> bool {
        let s = self.sched.alpha_bar(t).sqrt();
        let y: Vec<f64> = x.iter().map(|v| v / s).collect();
        let (i, j, _) = nearest_pair_scaled(self.gmm, &y, 1.0);
        let (mi, mj) = (self.gmm.mode(i), self.gmm.mode(j));
        let mut d2 = 0.0;
        let mut l2 = 0.0;
        for k in 0..y.len() {
            let m = 0.5 * (mi[k] + mj[k]);
            d2 += (y[k] - m) * (y[k] - m);
            l2 += (mj[k] - mi[k]) * (mj[k] - mi[k]);
        }
        d2 <= self.theta * self.theta * l2
    }
}

impl Observer for MidpointVisits<'_> {
    type Acc = Vec<bool>;

    fn start(&self, ids: Range<u64>) -> Self::Acc {
        vec![false; (ids.end - ids.start) as usize]
    }

    fn observe(&self, acc: &mut Self::Acc, _: usize, t: usize, _: Range<u64>, states: &[f64]) {
        if t > self.t3 {
            return;
        }
        for (r, x) in states.chunks(self.gmm.dim()).enumerate() {
            if !acc[r] && self.near_midpoint(x, t) {
                acc[r] = true;
            }
        }
    }
}

/// Counts behind P(H), P(M) and the conditionals; invalid samples excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DecompositionTable {
    pub n: u64,
    pub h: u64,
    pub m: u64,
    pub hm: u64,
    pub invalid: u64,
}

impl DecompositionTable {
    pub fn p_h(&self) -> Proportion {
        Proportion::new(self.h, self.n)
    }

    pub fn p_m(&self) -> Proportion {
        Proportion::new(self.m, self.n)
    }

    /// Undefined (rate None) when M never occurs.
    pub fn p_h_given_m(&self) -> Proportion {
        Proportion::new(self.hm, self.m)
    }

    pub fn p_h_given_not_m(&self) -> Proportion {
        Proportion::new(self.h - self.hm, self.n - self.m)
    }

    /// P(H|M)P(M) + P(H|Mᶜ)P(Mᶜ) from the counts.
    pub fn total_probability(&self) -> Option<f64> {
        let n = self.n as f64;
        if self.n == 0 {
            return None;
        }
        let pm = self.m as f64 / n;
        let a = self.p_h_given_m().rate().map_or(0.0, |r| r * pm);
        let b = self.p_h_given_not_m().rate().map_or(0.0, |r| r * (1.0 - pm));
        Some(a + b)
    }
}

pub fn midpoint_event_decomposition(labels: &[Label], visited: &[bool]) -> DecompositionTable {
    assert_eq!(labels.len(), visited.len());
    let mut t = DecompositionTable::default();
    for (l, &m) in labels.iter().zip(visited) {
        let h = match l {
            Label::Invalid => {
                t.invalid += 1;
                continue;
            }
            Label::Interpolation(..) => true,
            Label::Mode(_) => false,
        };
        t.n += 1;
        t.h += h as u64;
        t.m += m as u64;
        t.hm += (h && m) as u64;
    }
    t
}
