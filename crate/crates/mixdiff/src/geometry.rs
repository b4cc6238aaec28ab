//! Segment and tube geometry around mode pairs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{sq_dist_scaled, GaussianMixture};
use crate::schedule::NoiseSchedule;

/// Mode pair (i < j) in static coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFrame {
    pub i: usize,
    pub j: usize,
    pub ell: f64,
    pub u: Vec<f64>,
    pub mu_i: Vec<f64>,
    pub midpoint: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentCoordinates {
    pub xi: f64,
    pub w: Vec<f64>,
    pub a: f64,
}

/// How the ε extension of a segment is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extension {
    /// v ∈ [−ε, 1+ε]: extension by ε·ℓ.
    Fraction,
    /// extension by ε in length units.
    Length,
}

impl SegmentFrame {
    pub fn new(gmm: &GaussianMixture, a: usize, b: usize) -> Result<Self> {
        if a == b || a.max(b) >= gmm.n_modes() {
            return Err(Error::config("segment", format!("invalid mode pair ({a}, {b})")));
        }
        let (i, j) = (a.min(b), a.max(b));
        let mi = gmm.mode(i);
        let mj = gmm.mode(j);
        let diff: Vec<f64> = mj.iter().zip(mi).map(|(q, p)| q - p).collect();
        let ell = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
        let u = diff.iter().map(|d| d / ell).collect();
        let midpoint = mi.iter().zip(mj).map(|(p, q)| 0.5 * (p + q)).collect();
        Ok(SegmentFrame { i, j, ell, u, mu_i: mi.to_vec(), midpoint })
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    /// ℓ_t = √ᾱ_t ℓ.
    pub fn ell_t(&self, sched: &NoiseSchedule, t: usize) -> f64 {
        sched.alpha_bar(t).sqrt() * self.ell
    }

    pub fn decompose(&self, y: &[f64]) -> SegmentCoordinates {
        let proj: f64 = y.iter().zip(&self.mu_i).zip(&self.u).map(|((y, m), u)| (y - m) * u).sum();
        let xi = proj / self.ell;
        let w = y
            .iter()
            .zip(&self.mu_i)
            .zip(&self.u)
            .map(|((y, m), u)| y - m - proj * u)
            .collect();
        let a = y.iter().zip(&self.midpoint).zip(&self.u).map(|((y, m), u)| (y - m) * u).sum();
        SegmentCoordinates { xi, w, a }
    }

    pub fn reconstruct(&self, c: &SegmentCoordinates) -> Vec<f64> {
        self.mu_i
            .iter()
            .zip(&self.u)
            .zip(&c.w)
            .map(|((m, u), w)| m + c.xi * self.ell * u + w)
            .collect()
    }

    /// Point at parameter ξ on the line through the pair.
    pub fn point(&self, xi: f64) -> Vec<f64> {
        self.mu_i.iter().zip(&self.u).map(|(m, u)| m + xi * self.ell * u).collect()
    }

    /// Distance from `y` to the segment with parameter clamped to [lo, hi].
    fn clamped_distance(&self, y: &[f64], lo: f64, hi: f64) -> f64 {
        let proj: f64 = y.iter().zip(&self.mu_i).zip(&self.u).map(|((y, m), u)| (y - m) * u).sum();
        let xi = (proj / self.ell).clamp(lo, hi);
        y.iter()
            .zip(&self.mu_i)
            .zip(&self.u)
            .map(|((y, m), u)| {
                let d = y - m - xi * self.ell * u;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// d⊥ to the ε-extended segment.
    pub fn perp_distance(&self, eps: f64, ext: Extension, y: &[f64]) -> f64 {
        let e = match ext {
            Extension::Fraction => eps,
            Extension::Length => eps / self.ell,
        };
        self.clamped_distance(y, -e, 1.0 + e)
    }

    /// Ball of radius `eps` (length units) around the unextended segment.
    pub fn in_tube(&self, eps: f64, y: &[f64]) -> bool {
        self.clamped_distance(y, 0.0, 1.0) <= eps
    }
}

/// Two closest modes to `p` against centers `scale·μ_k`, and the margin
/// Δ = (third smallest) − (smallest) squared distance.
pub fn nearest_pair_scaled(gmm: &GaussianMixture, p: &[f64], scale: f64) -> (usize, usize, f64) {
    let n = gmm.n_modes();
    assert!(n >= 2, "nearest_pair needs at least two modes");
    let mut best = [(f64::INFINITY, usize::MAX); 3];
    for k in 0..n {
        let d = sq_dist_scaled(p, gmm.mode(k), scale);
        // strict comparison keeps the lowest index on ties
        if d < best[0].0 {
            best = [(d, k), best[0], best[1]];
        } else if d < best[1].0 {
            best = [best[0], (d, k), best[1]];
        } else if d < best[2].0 {
            best[2] = (d, k);
        }
    }
    let (a, b) = (best[0].1, best[1].1);
    (a.min(b), a.max(b), best[2].0 - best[0].0)
}

pub fn nearest_pair(gmm: &GaussianMixture, sched: &NoiseSchedule, x: &[f64], t: usize) -> Result<(usize, usize, f64)> {
    if gmm.n_modes() < 2 {
        return Err(Error::config("mixture.n_modes", "nearest_pair needs at least two modes"));
    }
    Ok(nearest_pair_scaled(gmm, x, sched.alpha_bar(t).sqrt()))
}

/// ε = N e^(−κ).
pub fn epsilon_from_kappa(n: usize, kappa: f64) -> f64 {
    n as f64 * (-kappa).exp()
}

/// Lattice-adjacent pairs: the minimum-distance pairs of the mixture.
pub fn adjacent_pairs(gmm: &GaussianMixture) -> Vec<(usize, usize)> {
    let n = gmm.n_modes();
    let mut dmin = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            dmin = dmin.min(sq_dist_scaled(gmm.mode(i), gmm.mode(j), 1.0));
        }
    }
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if sq_dist_scaled(gmm.mode(i), gmm.mode(j), 1.0) <= dmin * (1.0 + 1e-9) {
                out.push((i, j));
            }
        }
    }
    out
}
