use serde::{Deserialize, Serialize};

use crate::geometry::{Extension, SegmentFrame};
use crate::mixture::{sq_dist_scaled, GaussianMixture};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Mode(usize),
    Interpolation(usize, usize),
    Invalid,
}

/// 5σ up to ten dimensions, σ(√ϖ + 4) above.
pub fn classify_threshold(gmm: &GaussianMixture) -> f64 {
    let d = gmm.dim();
    if d <= 10 {
        5.0 * gmm.sigma()
    } else {
        gmm.sigma() * ((d as f64).sqrt() + 4.0)
    }
}

/// Terminal-sample classifier with all pair segments precomputed.
pub struct Classifier<'a> {
    gmm: &'a GaussianMixture,
    threshold: f64,
    segments: Vec<SegmentFrame>,
    diagonal: Vec<bool>,
}

impl<'a> Classifier<'a> {
    pub fn new(gmm: &'a GaussianMixture) -> Self {
        let n = gmm.n_modes();
        let mut segments = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                segments.push(SegmentFrame::new(gmm, i, j).expect("distinct modes"));
            }
        }
        let dmin = segments.iter().map(|s| s.ell).fold(f64::INFINITY, f64::min);
        let diagonal = segments.iter().map(|s| is_cell_diagonal(s.ell, dmin)).collect();
        Classifier { gmm, threshold: classify_threshold(gmm), segments, diagonal }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn classify(&self, x: &[f64]) -> Label {
        let mut best = (f64::INFINITY, 0);
        for k in 0..self.gmm.n_modes() {
            let d = sq_dist_scaled(x, self.gmm.mode(k), 1.0);
            if d < best.0 {
                best = (d, k);
            }
        }
        if best.0.sqrt() <= self.threshold {
            return Label::Mode(best.1);
        }
        // shortest segment within the threshold; distance breaks length ties
        let mut hit: Option<(f64, f64, usize)> = None;
        for (k, s) in self.segments.iter().enumerate() {
            let d = s.perp_distance(0.0, Extension::Fraction, x);
            if d > self.threshold {
                continue;
            }
            let better = match hit {
                None => true,
                Some((l, bd, _)) => s.ell < l * (1.0 - 1e-9) || (s.ell <= l * (1.0 + 1e-9) && d < bd),
            };
            if better {
                hit = Some((s.ell, d, k));
            }
        }
        match hit {
            Some((_, _, k)) => Label::Interpolation(self.segments[k].i, self.segments[k].j),
            None => Label::Invalid,
        }
    }

    /// Whether (i, j) is a cell diagonal of a square lattice.
    pub fn is_diagonal(&self, i: usize, j: usize) -> bool {
        let (i, j) = (i.min(j), i.max(j));
        let n = self.gmm.n_modes();
        // row-major index into the upper triangle
        let k = i * n - i * (i + 1) / 2 + (j - i - 1);
        self.diagonal[k]
    }
}

fn is_cell_diagonal(ell: f64, dmin: f64) -> bool {
    (ell * ell - 2.0 * dmin * dmin).abs() <= 1e-9 * dmin * dmin
}

pub fn classify_sample(gmm: &GaussianMixture, x0: &[f64]) -> Label {
    Classifier::new(gmm).classify(x0)
}

/// Label histogram for a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub mode: u64,
    pub interpolation: u64,
    pub diagonal_interpolation: u64,
    pub invalid: u64,
}

impl LabelCounts {
    pub fn tally(c: &Classifier, labels: &[Label]) -> Self {
        let mut out = LabelCounts::default();
        for l in labels {
            match *l {
                Label::Mode(_) => out.mode += 1,
                Label::Interpolation(i, j) => {
                    out.interpolation += 1;
                    if c.is_diagonal(i, j) {
                        out.diagonal_interpolation += 1;
                    }
                }
                Label::Invalid => out.invalid += 1,
            }
        }
        out
    }

    pub fn total(&self) -> u64 {
        self.mode + self.interpolation + self.invalid
    }

    /// Interpolation rate with invalid samples removed from the denominator.
    pub fn rate_valid(&self) -> super::Proportion {
        super::Proportion::new(self.interpolation, self.mode + self.interpolation)
    }

    pub fn rate_all(&self) -> super::Proportion {
        super::Proportion::new(self.interpolation, self.total())
    }
}
