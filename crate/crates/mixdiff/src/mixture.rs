//! Isotropic Gaussian mixture target, its diffused marginals and exact score.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

/// Maximum number of lattice candidates considered by farthest-point sampling.
pub const MAX_CANDIDATES: usize = 500_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    sigma: f64,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    /// Row-major, `n_modes * dim`.
    modes: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureJson {
    pub n_modes: usize,
    pub dim: usize,
    pub sigma: f64,
    pub weights: Vec<f64>,
    pub modes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct RescaledState {
    pub y: Vec<f64>,
    pub gamma_tilde: Vec<f64>,
    pub sigma_tilde_sq: f64,
}

impl GaussianMixture {
    pub fn new(modes: Vec<Vec<f64>>, weights: Vec<f64>, sigma: f64) -> Result<Self> {
        let n = modes.len();
        if n == 0 {
            return Err(Error::config("mixture.modes", "need at least one mode"));
        }
        let dim = modes[0].len();
        if dim == 0 || modes.iter().any(|m| m.len() != dim) {
            return Err(Error::config("mixture.modes", "modes must share a positive dimension"));
        }
        if weights.len() != n {
            return Err(Error::config("mixture.weights", "length must equal n_modes"));
        }
        if weights.iter().any(|&w| !(w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::config("mixture.weights", "must be positive and sum to 1"));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::config("mixture.sigma", "must be positive"));
        }
        if modes.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("mixture.modes", "non-finite coordinate"));
        }
        for i in 0..n {
            for j in i + 1..n {
                if modes[i] == modes[j] {
                    return Err(Error::config("mixture.modes", format!("modes {i} and {j} coincide")));
                }
            }
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(GaussianMixture { dim, sigma, weights, log_weights, modes: modes.concat() })
    }

    pub fn equal_weights(modes: Vec<Vec<f64>>, sigma: f64) -> Result<Self> {
        let n = modes.len().max(1);
        Self::new(modes, vec![1.0 / n as f64; n], sigma)
    }

    pub fn n_modes(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mode(&self, k: usize) -> &[f64] {
        &self.modes[k * self.dim..(k + 1) * self.dim]
    }

    pub fn modes_flat(&self) -> &[f64] {
        &self.modes
    }

    pub fn to_json(&self) -> MixtureJson {
        MixtureJson {
            n_modes: self.n_modes(),
            dim: self.dim,
            sigma: self.sigma,
            weights: self.weights.clone(),
            modes: self.modes.chunks(self.dim).map(|c| c.to_vec()).collect(),
        }
    }

    pub fn from_json(j: &MixtureJson) -> Result<Self> {
        if j.n_modes != j.modes.len() || j.modes.iter().any(|m| m.len() != j.dim) {
            return Err(Error::config("mixture", "n_modes/dim disagree with modes"));
        }
        Self::new(j.modes.clone(), j.weights.clone(), j.sigma)
    }

    /// Responsibilities against centers `scale * μ_k` with variance `var`.
    /// Log-space with max-subtraction; tiny values are flushed to zero.
    pub fn responsibilities_scaled(&self, p: &[f64], scale: f64, var: f64, out: &mut [f64]) {
        let mut max = f64::NEG_INFINITY;
        for (k, o) in out.iter_mut().enumerate() {
            let d2 = sq_dist_scaled(p, self.mode(k), scale);
            *o = self.log_weights[k] - d2 / (2.0 * var);
            max = max.max(*o);
        }
        let mut total = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
            if *o < 1e-300 {
                *o = 0.0;
            }
        }
    }

    pub fn responsibilities(&self, sched: &NoiseSchedule, x: &[f64], t: usize) -> Vec<f64> {
        let mut g = vec![0.0; self.n_modes()];
        self.responsibilities_scaled(x, sched.alpha_bar(t).sqrt(), sched.sigma_t_sq(t), &mut g);
        g
    }

    /// Closed-form score −(x − Σγ_k √ᾱ_t μ_k)/σ_t², using `gamma` as scratch.
    pub fn score_into(&self, sched: &NoiseSchedule, x: &[f64], t: usize, gamma: &mut [f64], out: &mut [f64]) {
        let s = sched.alpha_bar(t).sqrt();
        let var = sched.sigma_t_sq(t);
        self.responsibilities_scaled(x, s, var, gamma);
        out.iter_mut().zip(x).for_each(|(o, &xi)| *o = xi);
        for (k, &g) in gamma.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.mode(k)) {
                *o -= g * s * m;
            }
        }
        out.iter_mut().for_each(|o| *o = -*o / var);
    }

    pub fn score_exact(&self, sched: &NoiseSchedule, x: &[f64], t: usize) -> Vec<f64> {
        let mut g = vec![0.0; self.n_modes()];
        let mut out = vec![0.0; self.dim];
        self.score_into(sched, x, t, &mut g, &mut out);
        out
    }

    pub fn log_marginal_density(&self, sched: &NoiseSchedule, x: &[f64], t: usize) -> f64 {
        let s = sched.alpha_bar(t).sqrt();
        let var = sched.sigma_t_sq(t);
        let logits: Vec<f64> = (0..self.n_modes())
            .map(|k| self.log_weights[k] - sq_dist_scaled(x, self.mode(k), s) / (2.0 * var))
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        lse - 0.5 * self.dim as f64 * (2.0 * std::f64::consts::PI * var).ln()
    }

    /// Static-mode coordinates y = x/√ᾱ_t with responsibilities under σ̃_t².
    pub fn rescale(&self, sched: &NoiseSchedule, x: &[f64], t: usize) -> Result<RescaledState> {
        let a = sched.alpha_bar(t);
        if !(a > 0.0) {
            return Err(Error::config("t", "alpha_bar is zero"));
        }
        let sa = a.sqrt();
        let y: Vec<f64> = x.iter().map(|v| v / sa).collect();
        let sigma_tilde_sq = sched.sigma_tilde_sq(t);
        let mut gamma_tilde = vec![0.0; self.n_modes()];
        self.responsibilities_scaled(&y, 1.0, sigma_tilde_sq, &mut gamma_tilde);
        Ok(RescaledState { y, gamma_tilde, sigma_tilde_sq })
    }

    /// Posterior mean μ̂(y) = Σ γ̃_k μ_k of the rescaled dynamics.
    pub fn posterior_mean_rescaled(&self, y: &[f64], sigma_tilde_sq: f64, gamma: &mut [f64], out: &mut [f64]) {
        self.responsibilities_scaled(y, 1.0, sigma_tilde_sq, gamma);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, &g) in gamma.iter().enumerate() {
            for (o, &m) in out.iter_mut().zip(self.mode(k)) {
                *o += g * m;
            }
        }
    }
}

#[inline]
pub(crate) fn sq_dist_scaled(p: &[f64], m: &[f64], scale: f64) -> f64 {
    p.iter().zip(m).map(|(a, b)| (a - scale * b) * (a - scale * b)).sum()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Responsibility of mode j within the pair, sigmoid(log(π_j/π_i) + (ℓ²/σ̃²)(ξ − 1/2)).
pub fn two_mode_responsibility(ell: f64, sigma_tilde_sq: f64, xi: f64, pi_i: f64, pi_j: f64) -> f64 {
    sigmoid((pi_j / pi_i).ln() + ell * ell / sigma_tilde_sq * (xi - 0.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub side: usize,
    pub separation: f64,
    pub sigma: f64,
    pub dim: usize,
    pub n_keep: usize,
    /// Divide coordinates and σ by 2√ϖ.
    pub normalize: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { side: 5, separation: 2.0, sigma: 0.02, dim: 2, n_keep: 25, normalize: true }
    }
}

/// Axis-aligned lattice mixture, normalized by 2√ϖ.
pub fn build_grid_mixture(side: usize, separation: f64, sigma: f64, dim: usize, n_keep: usize) -> Result<GaussianMixture> {
    build_grid(&GridSpec { side, separation, sigma, dim, n_keep, normalize: true })
}

pub fn build_grid(spec: &GridSpec) -> Result<GaussianMixture> {
    let GridSpec { side, separation, sigma, dim, n_keep, normalize } = *spec;
    if side < 2 {
        return Err(Error::config("mixture.side", "must be at least 2"));
    }
    if side > 127 {
        return Err(Error::config("mixture.side", "must be at most 127"));
    }
    if !(separation > 0.0) {
        return Err(Error::config("mixture.separation", "must be positive"));
    }
    if !(sigma > 0.0) {
        return Err(Error::config("mixture.sigma", "must be positive"));
    }
    if dim == 0 {
        return Err(Error::config("mixture.dim", "must be positive"));
    }
    let lattice = (side as f64).powi(dim as i32);
    if n_keep == 0 || n_keep as f64 > lattice {
        return Err(Error::config("mixture.n_keep", format!("must lie in [1, {lattice}]")));
    }
    let offset = ((side - 1) / 2) as i64;
    let coords = if n_keep as f64 == lattice {
        lattice_points(side, dim, 0, lattice as usize)
    } else {
        farthest_point_sample(&candidates(side, dim, lattice), dim, n_keep)
    };
    let norm = if normalize { 2.0 * (dim as f64).sqrt() } else { 1.0 };
    let modes = coords
        .chunks(dim)
        .map(|c| c.iter().map(|&k| (k as i64 - offset) as f64 * separation / norm).collect())
        .collect();
    GaussianMixture::equal_weights(modes, sigma / norm)
}

/// Lattice points `start..start+count` in lexicographic order, as unsigned axis indices.
fn lattice_points(side: usize, dim: usize, start: usize, count: usize) -> Vec<i8> {
    let mut out = Vec::with_capacity(count * dim);
    for idx in start..start + count {
        push_lattice_point(side, dim, idx, &mut out);
    }
    out
}

fn push_lattice_point(side: usize, dim: usize, mut idx: usize, out: &mut Vec<i8>) {
    let base = out.len();
    out.resize(base + dim, 0);
    for d in (0..dim).rev() {
        out[base + d] = (idx % side) as i8;
        idx /= side;
    }
}

fn candidates(side: usize, dim: usize, lattice: f64) -> Vec<i8> {
    if lattice <= MAX_CANDIDATES as f64 {
        return lattice_points(side, dim, 0, lattice as usize);
    }
    // Random subset of the lattice; candidate 0 is kept at the all-zero corner.
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1a77);
    let mut out = Vec::with_capacity(MAX_CANDIDATES * dim);
    out.resize(dim, 0);
    let mut seen = std::collections::HashSet::new();
    seen.insert(vec![0i8; dim]);
    while out.len() < MAX_CANDIDATES * dim {
        let p: Vec<i8> = (0..dim).map(|_| rand::Rng::random_range(&mut rng, 0..side) as i8).collect();
        if seen.insert(p.clone()) {
            out.extend_from_slice(&p);
        }
    }
    out
}

/// Greedy farthest-point sampling starting from candidate 0; ties go to the lowest index.
pub fn farthest_point_sample(cands: &[i8], dim: usize, n_keep: usize) -> Vec<i8> {
    let n = cands.len() / dim;
    let dist = |a: usize, b: usize| -> i64 {
        cands[a * dim..(a + 1) * dim]
            .iter()
            .zip(&cands[b * dim..(b + 1) * dim])
            .map(|(&x, &y)| {
                let d = x as i64 - y as i64;
                d * d
            })
            .sum()
    };
    let mut chosen = vec![0usize];
    let mut min_d: Vec<i64> = (0..n).map(|c| dist(0, c)).collect();
    while chosen.len() < n_keep {
        let mut best = 0;
        for c in 1..n {
            if min_d[c] > min_d[best] {
                best = c;
            }
        }
        chosen.push(best);
        for c in 0..n {
            min_d[c] = min_d[c].min(dist(best, c));
        }
    }
    chosen.iter().flat_map(|&c| cands[c * dim..(c + 1) * dim].to_vec()).collect()
}
