//! Noise schedule arithmetic and discrete step grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(rename = "T")]
    pub t_max: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub family: String,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec { t_max: 1000, beta_min: 1e-4, beta_max: 0.02, family: "linear".into() }
    }
}

/// Discrete VP schedule. Index `t` runs over `0..=T`; `beta(t)` is defined for `t >= 1`.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    t_max: usize,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma_data: f64,
    u: Vec<f64>,
    spec: ScheduleSpec,
}

impl NoiseSchedule {
    pub fn linear(t_max: usize, beta_min: f64, beta_max: f64, sigma_data: f64) -> Result<Self> {
        if t_max < 2 {
            return Err(Error::config("schedule.T", "must be at least 2"));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::config("schedule.beta", "need 0 < beta_min <= beta_max < 1"));
        }
        if !(sigma_data > 0.0) {
            return Err(Error::config("mixture.sigma", "must be positive"));
        }
        let mut beta = vec![0.0; t_max + 1];
        for (k, b) in beta.iter_mut().enumerate().skip(1) {
            *b = beta_min + (beta_max - beta_min) * (k - 1) as f64 / (t_max - 1) as f64;
        }
        let mut alpha_bar = vec![1.0; t_max + 1];
        for k in 1..=t_max {
            alpha_bar[k] = alpha_bar[k - 1] * (1.0 - beta[k]);
        }
        let mut s = NoiseSchedule {
            t_max,
            beta,
            alpha_bar,
            sigma_data,
            u: vec![0.0; t_max + 1],
            spec: ScheduleSpec { t_max, beta_min, beta_max, family: "linear".into() },
        };
        for t in (0..t_max).rev() {
            s.u[t] = s.u[t + 1] + s.beta[t + 1] / (2.0 * s.sigma_t_sq(t + 1));
        }
        Ok(s)
    }

    pub fn from_spec(spec: &ScheduleSpec, sigma_data: f64) -> Result<Self> {
        if spec.family != "linear" {
            return Err(Error::config("schedule.family", format!("unsupported family {:?}", spec.family)));
        }
        Self::linear(spec.t_max, spec.beta_min, spec.beta_max, sigma_data)
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn sigma_data(&self) -> f64 {
        self.sigma_data
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn terminal_gamma(&self) -> f64 {
        self.alpha_bar[self.t_max]
    }

    /// Marginal per-component variance σ²ᾱ_t + 1 − ᾱ_t.
    pub fn sigma_t_sq(&self, t: usize) -> f64 {
        let a = self.alpha_bar[t];
        self.sigma_data * self.sigma_data * a + (1.0 - a)
    }

    /// Effective variance of the rescaled dynamics, σ_t²/ᾱ_t.
    pub fn sigma_tilde_sq(&self, t: usize) -> f64 {
        self.sigma_t_sq(t) / self.alpha_bar[t]
    }

    /// Rescaled clock, left-Riemann sum of β_s/(2σ_s²) for s in (t, T].
    pub fn u_time(&self, t: usize) -> f64 {
        self.u[t]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    DdpmFull,
    DdimQuadratic,
    DdimUniform,
    Custom,
}

/// Strictly decreasing time indices from T to 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepGrid {
    pub kind: GridKind,
    pub indices: Vec<usize>,
}

impl StepGrid {
    pub fn ddpm_full(t_max: usize) -> Self {
        StepGrid { kind: GridKind::DdpmFull, indices: (0..=t_max).rev().collect() }
    }

    /// t_k = round(T (k/n)²), deduplicated, endpoints forced to {T, 0}.
    pub fn ddim_quadratic(t_max: usize, n_steps: usize) -> Result<Self> {
        Self::from_map(t_max, n_steps, GridKind::DdimQuadratic, |r| r * r)
    }

    pub fn ddim_uniform(t_max: usize, n_steps: usize) -> Result<Self> {
        Self::from_map(t_max, n_steps, GridKind::DdimUniform, |r| r)
    }

    fn from_map(t_max: usize, n_steps: usize, kind: GridKind, f: impl Fn(f64) -> f64) -> Result<Self> {
        if n_steps < 1 || n_steps > t_max {
            return Err(Error::config("sampler.n_steps", format!("must lie in [1, {t_max}]")));
        }
        let mut indices = Vec::with_capacity(n_steps + 1);
        for k in (0..=n_steps).rev() {
            let t = (t_max as f64 * f(k as f64 / n_steps as f64)).round() as usize;
            if indices.last().is_none_or(|&prev| t < prev) {
                indices.push(t);
            }
        }
        indices[0] = t_max;
        if *indices.last().unwrap() != 0 {
            indices.push(0);
        }
        Ok(StepGrid { kind, indices })
    }

    /// Uniform subdivision of [start, 0] into at most `z` steps, in integer index.
    pub fn uniform_tail(start: usize, z: usize) -> Self {
        let mut indices = Vec::with_capacity(z + 1);
        for k in 0..=z {
            let t = (start as f64 * (z - k) as f64 / z as f64).round() as usize;
            if indices.last().is_none_or(|&prev| t < prev) {
                indices.push(t);
            }
        }
        StepGrid { kind: GridKind::Custom, indices }
    }

    pub fn custom(indices: Vec<usize>) -> Result<Self> {
        if indices.len() < 2 || indices.windows(2).any(|w| w[1] >= w[0]) || *indices.last().unwrap() != 0 {
            return Err(Error::config("sampler.grid", "must be strictly decreasing and end at 0"));
        }
        Ok(StepGrid { kind: GridKind::Custom, indices })
    }

    pub fn n_steps(&self) -> usize {
        self.indices.len() - 1
    }

    /// Time index of the grid entry with `remaining` steps left before t = 0.
    pub fn index_with_remaining(&self, remaining: usize) -> Option<usize> {
        let n = self.indices.len();
        (remaining < n).then(|| self.indices[n - 1 - remaining])
    }

    /// Suffix of the grid starting at time `t`, if `t` is on the grid.
    pub fn tail_from(&self, t: usize) -> Option<StepGrid> {
        let pos = self.indices.iter().position(|&s| s == t)?;
        Some(StepGrid { kind: GridKind::Custom, indices: self.indices[pos..].to_vec() })
    }
}
