use serde::{Deserialize, Serialize};

use super::equilibria::{analytic_lambda, bisect};
use crate::geometry::SegmentFrame;
use crate::mixture::sigmoid;
use crate::schedule::NoiseSchedule;

/// Error field ψ(x) at a fixed time, in x-space.
pub type Field<'a> = &'a (dyn Fn(&[f64]) -> Vec<f64> + Sync);

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Empirical bounds of ψ at time t over a sample region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreErrorSpec {
    pub t: usize,
    /// max ‖ψ‖ over the samples.
    pub rho: f64,
    /// ρ σ_t²/√ᾱ_t.
    pub rho_bar: f64,
    /// max ‖ψ(x) − ψ(x′)‖/‖x − x′‖ over consecutive sample pairs.
    pub lipschitz: f64,
}

pub fn measure_error_field(psi: Field, sched: &NoiseSchedule, t: usize, points: &[Vec<f64>]) -> ScoreErrorSpec {
    let vals: Vec<Vec<f64>> = points.iter().map(|p| psi(p)).collect();
    let rho = vals.iter().map(|v| norm(v)).fold(0.0, f64::max);
    let mut lip = 0.0f64;
    for k in 1..points.len() {
        let dx: Vec<f64> = points[k].iter().zip(&points[k - 1]).map(|(a, b)| a - b).collect();
        let dv: Vec<f64> = vals[k].iter().zip(&vals[k - 1]).map(|(a, b)| a - b).collect();
        let n = norm(&dx);
        if n > 0.0 {
            lip = lip.max(norm(&dv) / n);
        }
    }
    ScoreErrorSpec { t, rho, rho_bar: rho * sched.sigma_t_sq(t) / sched.alpha_bar(t).sqrt(), lipschitz: lip }
}

/// x-space points √ᾱ_t y(ξ) along the segment, ξ uniform on [0, 1].
pub fn segment_points(seg: &SegmentFrame, sched: &NoiseSchedule, t: usize, n: usize) -> Vec<Vec<f64>> {
    let s = sched.alpha_bar(t).sqrt();
    (0..n).map(|k| seg.point(k as f64 / (n - 1) as f64).iter().map(|v| s * v).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub t: usize,
    pub lambda_t: f64,
    pub rho_bar: f64,
    pub saddle: f64,
    /// None when no equilibrium survives near the saddle.
    pub saddle_perturbed: Option<f64>,
    pub shift: Option<f64>,
    /// 2ϱ̄/(ℓλ_t).
    pub shift_bound: f64,
    /// σ_t² uᵀ∇ψu at the perturbed equilibrium.
    pub directional: f64,
    pub slope_perturbed: Option<f64>,
    /// λ_t + directional.
    pub slope_predicted: f64,
    pub stabilized: bool,
}

/// Saddle shift and slope change of the equal-weight two-mode parallel flow
/// under F_θ(ξ) = F(ξ) + σ_t²⟨ψ(√ᾱ y(ξ)), u⟩/(√ᾱ ℓ).
pub fn perturbation_analysis(seg: &SegmentFrame, sched: &NoiseSchedule, t: usize, psi: Field, spec: &ScoreErrorSpec) -> PerturbationReport {
    let var = sched.sigma_tilde_sq(t);
    let a = seg.ell * seg.ell / var;
    let s = sched.alpha_bar(t).sqrt();
    let st2 = sched.sigma_t_sq(t);
    let x_of = |xi: f64| seg.point(xi).iter().map(|v| s * v).collect::<Vec<f64>>();
    let proj = |v: &[f64]| v.iter().zip(&seg.u).map(|(a, b)| a * b).sum::<f64>();
    let f = |xi: f64| sigmoid(a * (xi - 0.5)) - xi + st2 * proj(&psi(&x_of(xi))) / (s * seg.ell);
    let lambda_t = analytic_lambda(seg.ell, var);
    let saddle = 0.5;
    let root = nearest_root(&f, saddle, 0.25, 1000);
    let h = 1e-6;
    let slope_perturbed = root.map(|r| (f(r + h) - f(r - h)) / (2.0 * h));
    let at = x_of(root.unwrap_or(saddle));
    let hx = 1e-6 * seg.ell * s;
    let shifted = |sign: f64| at.iter().zip(&seg.u).map(|(x, u)| x + sign * hx * u).collect::<Vec<f64>>();
    let directional = st2 * (proj(&psi(&shifted(1.0))) - proj(&psi(&shifted(-1.0)))) / (2.0 * hx);
    PerturbationReport {
        t,
        lambda_t,
        rho_bar: spec.rho_bar,
        saddle,
        saddle_perturbed: root,
        shift: root.map(|r| (r - saddle).abs()),
        shift_bound: 2.0 * spec.rho_bar / (seg.ell * lambda_t),
        directional,
        slope_perturbed,
        slope_predicted: lambda_t + directional,
        stabilized: slope_perturbed.is_some_and(|s| s < 0.0),
    }
}

/// Root of f closest to `centre` within ±`radius`, from a uniform scan.
fn nearest_root<F: Fn(f64) -> f64>(f: &F, centre: f64, radius: f64, n: usize) -> Option<f64> {
    let x = |k: usize| centre - radius + 2.0 * radius * k as f64 / n as f64;
    let mut best: Option<f64> = None;
    let mut prev = f(x(0));
    for k in 1..=n {
        let cur = f(x(k));
        if prev == 0.0 || prev.signum() != cur.signum() {
            if let Some(r) = bisect(f, x(k - 1), x(k)) {
                if best.is_none_or(|b| (r - centre).abs() < (b - centre).abs()) {
                    best = Some(r);
                }
            }
        }
        prev = cur;
    }
    best
}

/// Escape condition under score error: r_{A,max} < λ_rep ϑ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeCheck {
    pub r_a_max: f64,
    pub holds: bool,
    /// λ_rep − r_{A,max}/ϑ.
    pub lambda_rep_reduced: f64,
}

/// r_A(t) = β_t ϱ(t) maximised over `ts`.
pub fn escape_condition(sched: &NoiseSchedule, ts: &[usize], rho: &dyn Fn(usize) -> f64, lambda_rep: f64, theta: f64) -> EscapeCheck {
    let r_a_max = ts.iter().map(|&t| sched.beta(t) * rho(t)).fold(0.0, f64::max);
    EscapeCheck { r_a_max, holds: r_a_max < lambda_rep * theta, lambda_rep_reduced: lambda_rep - r_a_max / theta }
}
