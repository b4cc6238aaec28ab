use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::geometry::SegmentFrame;
use crate::mixture::{sigmoid, GaussianMixture};

/// Bisection to |f| ≤ 1e-12 or bracket width ≤ 1e-12. None without a sign change.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() || !flo.is_finite() || !fhi.is_finite() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.abs() <= 1e-12 || hi - lo <= 1e-12 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// First bracket on a uniform scan of [lo, hi] where f goes from < 0 to ≥ 0.
fn rising_bracket<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, n: usize) -> Option<(f64, f64)> {
    let x = |k: usize| lo + (hi - lo) * k as f64 / n as f64;
    let mut prev = f(x(0));
    for k in 1..=n {
        let cur = f(x(k));
        if prev < 0.0 && cur >= 0.0 {
            return Some((x(k - 1), x(k)));
        }
        prev = cur;
    }
    None
}

fn central<F: Fn(f64) -> f64>(f: &F, x: f64) -> f64 {
    let h = 1e-6;
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Exact parallel drift F(ξ) = ⟨μ̂(y(ξ)) − y(ξ), u⟩/ℓ on the segment line (w = 0).
pub fn parallel_drift(gmm: &GaussianMixture, seg: &SegmentFrame, sigma_tilde_sq: f64, xi: f64) -> f64 {
    let y = seg.point(xi);
    let mut g = vec![0.0; gmm.n_modes()];
    let mut m = vec![0.0; gmm.dim()];
    gmm.posterior_mean_rescaled(&y, sigma_tilde_sq, &mut g, &mut m);
    m.iter().zip(&y).zip(&seg.u).map(|((m, y), u)| (m - y) * u).sum::<f64>() / seg.ell
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub xi: f64,
    /// F′(ξ); negative means stable.
    pub slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeEquilibria {
    pub near_i: Option<Equilibrium>,
    pub near_j: Option<Equilibrium>,
    /// ℓ²/σ̃² ≥ 4κϖ holds.
    pub separated: bool,
}

/// Stable roots of F near ξ = 0 and ξ = 1, searched on [−¼, ¼] and [¾, 5/4].
pub fn find_mode_equilibria(gmm: &GaussianMixture, seg: &SegmentFrame, sigma_tilde_sq: f64, kappa: f64) -> ModeEquilibria {
    let f = |xi: f64| parallel_drift(gmm, seg, sigma_tilde_sq, xi);
    let root = |lo: f64, hi: f64| bisect(f, lo, hi).map(|xi| Equilibrium { xi, slope: central(&f, xi) });
    ModeEquilibria {
        near_i: root(-0.25, 0.25),
        near_j: root(0.75, 1.25),
        separated: seg.ell * seg.ell / sigma_tilde_sq >= 4.0 * kappa * gmm.dim() as f64,
    }
}

/// Two-mode saddle from ξ = ς(log(π_j/π_i) + a(ξ − ½)) with a = ℓ²/σ̃².
/// Absent when a ≤ 4 (no unstable interior root).
pub fn two_mode_saddle(a: f64, pi_i: f64, pi_j: f64) -> Option<Equilibrium> {
    let b = (pi_j / pi_i).ln();
    let g = |xi: f64| sigmoid(b + a * (xi - 0.5)) - xi;
    let (lo, hi) = rising_bracket(&g, 0.0, 1.0, 2000)?;
    let xi = bisect(g, lo, hi)?;
    Some(Equilibrium { xi, slope: a * xi * (1.0 - xi) - 1.0 })
}

/// Unstable interior root of the exact N-mode parallel drift.
pub fn full_saddle(gmm: &GaussianMixture, seg: &SegmentFrame, sigma_tilde_sq: f64) -> Option<Equilibrium> {
    let f = |xi: f64| parallel_drift(gmm, seg, sigma_tilde_sq, xi);
    let (lo, hi) = rising_bracket(&f, 0.0, 1.0, 2000)?;
    let xi = bisect(f, lo, hi)?;
    Some(Equilibrium { xi, slope: central(&f, xi) })
}

/// Full-N versus two-mode saddle on one segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleComparison {
    pub two_mode: Equilibrium,
    pub full: Equilibrium,
    pub displacement: f64,
    /// min of the two-mode F′ over [ξ* − 0.1, ξ* + 0.1].
    pub m: f64,
    /// ε/m; infinite when m ≤ 0.
    pub bound: f64,
    pub slope_dips_below_zero: bool,
}

pub fn saddle_displacement(gmm: &GaussianMixture, seg: &SegmentFrame, sigma_tilde_sq: f64, eps: f64) -> Option<SaddleComparison> {
    let a = seg.ell * seg.ell / sigma_tilde_sq;
    let w = gmm.weights();
    let two = two_mode_saddle(a, w[seg.i], w[seg.j])?;
    let full = full_saddle(gmm, seg, sigma_tilde_sq)?;
    let b = (w[seg.j] / w[seg.i]).ln();
    // F′ of the two-mode drift: a·ς(1 − ς) − 1 along the interval
    let m = (0..=200)
        .map(|k| {
            let xi = two.xi - 0.1 + 0.2 * k as f64 / 200.0;
            let s = sigmoid(b + a * (xi - 0.5));
            a * s * (1.0 - s) - 1.0
        })
        .fold(f64::INFINITY, f64::min);
    Some(SaddleComparison {
        two_mode: two,
        full,
        displacement: (full.xi - two.xi).abs(),
        m,
        bound: if m > 0.0 { eps / m } else { f64::INFINITY },
        slope_dips_below_zero: m <= 0.0,
    })
}

/// λ_t = ℓ²/(4σ̃²) − 1.
pub fn analytic_lambda(ell: f64, sigma_tilde_sq: f64) -> f64 {
    ell * ell / (4.0 * sigma_tilde_sq) - 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MidpointSpectrum {
    pub analytic: f64,
    /// Descending eigenvalues of the symmetrised Jacobian.
    pub eigenvalues: Vec<f64>,
}

impl MidpointSpectrum {
    pub fn n_positive(&self) -> usize {
        self.eigenvalues.iter().filter(|&&l| l > 0.0).count()
    }

    pub fn relative_error(&self) -> f64 {
        (self.eigenvalues[0] - self.analytic).abs() / self.analytic.abs()
    }
}

/// Jacobian of μ̂(y) − y at the midpoint by central differences with step 1e-6·ℓ.
pub fn midpoint_eigenvalues(gmm: &GaussianMixture, seg: &SegmentFrame, sigma_tilde_sq: f64) -> MidpointSpectrum {
    let d = gmm.dim();
    let h = 1e-6 * seg.ell;
    let mut g = vec![0.0; gmm.n_modes()];
    let mut drift = |y: &[f64]| {
        let mut m = vec![0.0; d];
        gmm.posterior_mean_rescaled(y, sigma_tilde_sq, &mut g, &mut m);
        m.iter().zip(y).map(|(m, y)| m - y).collect::<Vec<f64>>()
    };
    let mut jac = DMatrix::<f64>::zeros(d, d);
    for c in 0..d {
        let mut yp = seg.midpoint.clone();
        let mut ym = seg.midpoint.clone();
        yp[c] += h;
        ym[c] -= h;
        let (fp, fm) = (drift(&yp), drift(&ym));
        for r in 0..d {
            jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    let sym = (&jac + jac.transpose()) * 0.5;
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));
    MidpointSpectrum { analytic: analytic_lambda(seg.ell, sigma_tilde_sq), eigenvalues }
}
