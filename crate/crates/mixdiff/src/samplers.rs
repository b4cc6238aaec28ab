//! Reverse-process samplers over a pluggable score source.
//!
//! Trajectories advance in lockstep chunks so a learned score can be
//! evaluated as one batched forward pass per step.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SegmentFrame;
use crate::mixture::GaussianMixture;
use crate::par::{map_chunks, Exec};
use crate::rng::{Domain, NoiseStream};
use crate::schedule::{NoiseSchedule, StepGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Exact,
    Learned,
    Perturbed,
}

pub trait ScoreSource: Sync {
    fn dim(&self) -> usize;

    fn kind(&self) -> SourceKind;

    /// Row-major batch of `xs.len() / dim` states at a common time index.
    fn score_batch(&self, xs: &[f64], t: usize, out: &mut [f64]);

    fn score(&self, x: &[f64], t: usize) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.score_batch(x, t, &mut out);
        out
    }
}

impl<S: ScoreSource + ?Sized> ScoreSource for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn kind(&self) -> SourceKind {
        (**self).kind()
    }
    fn score_batch(&self, xs: &[f64], t: usize, out: &mut [f64]) {
        (**self).score_batch(xs, t, out)
    }
}

/// Closed-form mixture score.
#[derive(Clone, Copy)]
pub struct ExactScore<'a> {
    pub gmm: &'a GaussianMixture,
    pub sched: &'a NoiseSchedule,
}

impl<'a> ExactScore<'a> {
    pub fn new(gmm: &'a GaussianMixture, sched: &'a NoiseSchedule) -> Self {
        ExactScore { gmm, sched }
    }
}

impl ScoreSource for ExactScore<'_> {
    fn dim(&self) -> usize {
        self.gmm.dim()
    }
    fn kind(&self) -> SourceKind {
        SourceKind::Exact
    }
    fn score_batch(&self, xs: &[f64], t: usize, out: &mut [f64]) {
        let d = self.gmm.dim();
        let mut gamma = vec![0.0; self.gmm.n_modes()];
        for (x, o) in xs.chunks(d).zip(out.chunks_mut(d)) {
            self.gmm.score_into(self.sched, x, t, &mut gamma, o);
        }
    }
}

/// Injected score error ψ(x, t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorField {
    Zero,
    Constant(Vec<f64>),
    /// ψ = M (x − √ᾱ_t c) + b with `matrix` row-major.
    Affine { matrix: Vec<f64>, center: Vec<f64>, offset: Vec<f64> },
}

impl ErrorField {
    pub fn eval(&self, sched: &NoiseSchedule, x: &[f64], t: usize, out: &mut [f64]) {
        match self {
            ErrorField::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            ErrorField::Constant(c) => out.copy_from_slice(c),
            ErrorField::Affine { matrix, center, offset } => {
                let d = x.len();
                let s = sched.alpha_bar(t).sqrt();
                for r in 0..d {
                    out[r] = offset[r]
                        + (0..d).map(|c| matrix[r * d + c] * (x[c] - s * center[c])).sum::<f64>();
                }
            }
        }
    }
}

/// Base score plus an error field.
pub struct PerturbedScore<'a, S: ScoreSource> {
    pub base: S,
    pub sched: &'a NoiseSchedule,
    pub psi: ErrorField,
}

impl<S: ScoreSource> ScoreSource for PerturbedScore<'_, S> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn kind(&self) -> SourceKind {
        SourceKind::Perturbed
    }
    fn score_batch(&self, xs: &[f64], t: usize, out: &mut [f64]) {
        self.base.score_batch(xs, t, out);
        let d = self.dim();
        let mut p = vec![0.0; d];
        for (x, o) in xs.chunks(d).zip(out.chunks_mut(d)) {
            self.psi.eval(self.sched, x, t, &mut p);
            o.iter_mut().zip(&p).for_each(|(o, p)| *o += p);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Ddpm,
    Ddim,
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub grid: StepGrid,
    pub eta: f64,
    /// DDPM steps replacing the DDIM tail after τ₃ (hybrid only).
    pub z_extra: usize,
    /// τ₃ as a number of remaining grid steps.
    pub tau3: Option<usize>,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn ddpm(t_max: usize, seed: u64) -> Self {
        SamplerConfig { kind: SamplerKind::Ddpm, grid: StepGrid::ddpm_full(t_max), eta: 0.0, z_extra: 0, tau3: None, seed }
    }

    pub fn ddim(grid: StepGrid, eta: f64, seed: u64) -> Self {
        SamplerConfig { kind: SamplerKind::Ddim, grid, eta, z_extra: 0, tau3: None, seed }
    }

    pub fn hybrid(grid: StepGrid, tau3: usize, z_extra: usize, seed: u64) -> Self {
        SamplerConfig { kind: SamplerKind::Hybrid, grid, eta: 0.0, z_extra, tau3: Some(tau3), seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::config("sampler.eta", "must lie in [0, 1]"));
        }
        let g = &self.grid.indices;
        if g.len() < 2 || g.windows(2).any(|w| w[1] >= w[0]) || *g.last().unwrap() != 0 {
            return Err(Error::config("sampler.grid", "must be strictly decreasing and end at 0"));
        }
        if self.kind == SamplerKind::Hybrid {
            match self.tau3 {
                Some(k) if k >= 1 && k < g.len() => {}
                _ => return Err(Error::config("sampler.tau3", "hybrid needs tau3 within the grid")),
            }
            if self.z_extra < 1 {
                return Err(Error::config("sampler.z_extra", "hybrid needs at least one DDPM step"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepOp {
    Ddpm,
    Ddim { eta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub from: usize,
    pub to: usize,
    pub op: StepOp,
}

/// Concrete sequence of reverse steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub start: usize,
    pub steps: Vec<PlanStep>,
}

fn pairs(indices: &[usize], op: StepOp) -> Vec<PlanStep> {
    indices.windows(2).map(|w| PlanStep { from: w[0], to: w[1], op }).collect()
}

impl Plan {
    pub fn from_config(cfg: &SamplerConfig) -> Result<Plan> {
        cfg.validate()?;
        let g = &cfg.grid.indices;
        let steps = match cfg.kind {
            SamplerKind::Ddpm => pairs(g, StepOp::Ddpm),
            SamplerKind::Ddim => pairs(g, StepOp::Ddim { eta: cfg.eta }),
            SamplerKind::Hybrid => {
                let t3 = cfg.grid.index_with_remaining(cfg.tau3.unwrap()).unwrap();
                let pos = g.iter().position(|&t| t == t3).unwrap();
                let mut s = pairs(&g[..=pos], StepOp::Ddim { eta: cfg.eta });
                s.extend(pairs(&StepGrid::uniform_tail(t3, cfg.z_extra).indices, StepOp::Ddpm));
                s
            }
        };
        Ok(Plan { start: g[0], steps })
    }

    /// Remaining steps from `start`: DDIM continues along its grid, DDPM
    /// runs unit steps from the same index, hybrid runs its z DDPM steps.
    pub fn restart(cfg: &SamplerConfig, start: usize) -> Result<Plan> {
        cfg.validate()?;
        let steps = match cfg.kind {
            SamplerKind::Ddpm => pairs(&(0..=start).rev().collect::<Vec<_>>(), StepOp::Ddpm),
            SamplerKind::Ddim => {
                let tail = cfg
                    .grid
                    .tail_from(start)
                    .ok_or_else(|| Error::config("start_index", format!("t = {start} is not on the DDIM grid")))?;
                pairs(&tail.indices, StepOp::Ddim { eta: cfg.eta })
            }
            SamplerKind::Hybrid => pairs(&StepGrid::uniform_tail(start, cfg.z_extra).indices, StepOp::Ddpm),
        };
        Ok(Plan { start, steps })
    }

    pub fn times(&self) -> Vec<usize> {
        std::iter::once(self.start).chain(self.steps.iter().map(|s| s.to)).collect()
    }
}

/// Generalised ancestral step t → t' with β = 1 − ᾱ_t/ᾱ_t'; noiseless into t' = 0.
pub fn ddpm_step(sched: &NoiseSchedule, x: &[f64], score: &[f64], from: usize, to: usize, noise: &[f64], out: &mut [f64]) {
    let beta = 1.0 - sched.alpha_bar(from) / sched.alpha_bar(to);
    let inv = 1.0 / (1.0 - beta).sqrt();
    let sn = if to > 0 { beta.sqrt() } else { 0.0 };
    for k in 0..x.len() {
        out[k] = (x[k] + beta * score[k]) * inv + sn * noise[k];
    }
}

/// DDIM update t → t' with noise level η.
pub fn ddim_step(sched: &NoiseSchedule, x: &[f64], score: &[f64], from: usize, to: usize, eta: f64, noise: &[f64], out: &mut [f64]) {
    let a = sched.alpha_bar(from);
    let ap = sched.alpha_bar(to);
    let s1 = (1.0 - a).sqrt();
    let var_eta = if eta > 0.0 && to < from { eta * eta * ((1.0 - ap) / (1.0 - a)) * (1.0 - a / ap) } else { 0.0 };
    let dir = (1.0 - ap - var_eta).max(0.0).sqrt();
    let sa = a.sqrt();
    let sap = ap.sqrt();
    let se = var_eta.sqrt();
    for k in 0..x.len() {
        let eps = -s1 * score[k];
        let x0 = (x[k] - s1 * eps) / sa;
        out[k] = sap * x0 + dir * eps + if se > 0.0 { se * noise[k] } else { 0.0 };
    }
}

/// Whether a plan step consumes Gaussian noise.
fn needs_noise(s: &PlanStep) -> bool {
    match s.op {
        StepOp::Ddpm => s.to > 0,
        StepOp::Ddim { eta } => eta > 0.0 && s.to > 0 && s.to < s.from,
    }
}

/// How initial states are produced.
pub enum Init<'a> {
    StandardNormal,
    Points(&'a (dyn Fn(u64, &mut [f64]) + Sync)),
}

/// Per-chunk fold over trajectory states.
pub trait Observer: Sync {
    type Acc: Send;
    fn start(&self, ids: Range<u64>) -> Self::Acc;
    /// Called with the initial states (`step == 0`) and after every step.
    fn observe(&self, acc: &mut Self::Acc, step: usize, t: usize, ids: Range<u64>, states: &[f64]);
}

/// Observer that keeps nothing.
pub struct NoObserver;

impl Observer for NoObserver {
    type Acc = ();
    fn start(&self, _: Range<u64>) {}
    fn observe(&self, _: &mut (), _: usize, _: usize, _: Range<u64>, _: &[f64]) {}
}

/// Full state history per trajectory.
pub struct History;

impl Observer for History {
    type Acc = Vec<Vec<f64>>;
    fn start(&self, _: Range<u64>) -> Self::Acc {
        Vec::new()
    }
    fn observe(&self, acc: &mut Self::Acc, _: usize, _: usize, _: Range<u64>, states: &[f64]) {
        acc.push(states.to_vec());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub traj: u64,
    pub t: usize,
}

pub struct ChunkResult<A> {
    pub ids: Range<u64>,
    pub finals: Vec<f64>,
    pub failures: Vec<Failure>,
    pub acc: A,
}

pub struct BatchRun<'a, S: ScoreSource> {
    pub source: &'a S,
    pub sched: &'a NoiseSchedule,
    pub plan: &'a Plan,
    pub seed: u64,
    pub exec: Exec,
}

impl<S: ScoreSource> BatchRun<'_, S> {
    pub fn run<O: Observer>(&self, ids: Range<u64>, init: &Init, obs: &O) -> Vec<ChunkResult<O::Acc>> {
        map_chunks(self.exec, ids, |r| self.run_chunk(r, init, obs))
    }

    /// Terminal states in id order, with any failures.
    pub fn finals(&self, ids: Range<u64>, init: &Init) -> (Vec<f64>, Vec<Failure>) {
        let mut x = Vec::new();
        let mut f = Vec::new();
        for c in self.run(ids, init, &NoObserver) {
            x.extend(c.finals);
            f.extend(c.failures);
        }
        (x, f)
    }

    pub fn run_chunk<O: Observer>(&self, ids: Range<u64>, init: &Init, obs: &O) -> ChunkResult<O::Acc> {
        let d = self.source.dim();
        let n = (ids.end - ids.start) as usize;
        let streams: Vec<NoiseStream> = ids.clone().map(|id| NoiseStream::new(self.seed, id)).collect();
        let mut x = vec![0.0; n * d];
        for (k, id) in ids.clone().enumerate() {
            let row = &mut x[k * d..(k + 1) * d];
            match init {
                Init::StandardNormal => streams[k].fill_normal(Domain::Init, 0, row),
                Init::Points(f) => f(id, row),
            }
        }
        let mut acc = obs.start(ids.clone());
        obs.observe(&mut acc, 0, self.plan.start, ids.clone(), &x);
        let mut score = vec![0.0; n * d];
        let mut next = vec![0.0; n * d];
        let mut noise = vec![0.0; d];
        let mut alive = vec![true; n];
        let mut failures = Vec::new();
        for (k, step) in self.plan.steps.iter().enumerate() {
            self.source.score_batch(&x, step.from, &mut score);
            let noisy = needs_noise(step);
            for r in 0..n {
                let (xr, sr) = (&x[r * d..(r + 1) * d], &score[r * d..(r + 1) * d]);
                let out = &mut next[r * d..(r + 1) * d];
                if !alive[r] {
                    out.copy_from_slice(xr);
                    continue;
                }
                if noisy {
                    streams[r].fill_normal(Domain::Step, k as u64, &mut noise);
                }
                match step.op {
                    StepOp::Ddpm => ddpm_step(self.sched, xr, sr, step.from, step.to, &noise, out),
                    StepOp::Ddim { eta } => ddim_step(self.sched, xr, sr, step.from, step.to, eta, &noise, out),
                }
                if out.iter().any(|v| !v.is_finite()) {
                    out.copy_from_slice(xr);
                    alive[r] = false;
                    failures.push(Failure { traj: ids.start + r as u64, t: step.from });
                }
            }
            std::mem::swap(&mut x, &mut next);
            obs.observe(&mut acc, k + 1, step.to, ids.clone(), &x);
        }
        ChunkResult { ids, finals: x, failures, acc }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub traj_id: u64,
    pub seed: u64,
    pub config_hash: String,
    pub times: Vec<usize>,
    /// One ϖ-vector per entry of `times`.
    pub states: Vec<Vec<f64>>,
    pub failure: Option<Failure>,
}

fn single_record<S: ScoreSource>(source: &S, sched: &NoiseSchedule, plan: &Plan, cfg: &SamplerConfig, traj: u64, init: &Init) -> TrajectoryRecord {
    let run = BatchRun { source, sched, plan, seed: cfg.seed, exec: Exec::SEQUENTIAL };
    let mut c = run.run_chunk(traj..traj + 1, init, &History);
    TrajectoryRecord {
        traj_id: traj,
        seed: cfg.seed,
        config_hash: crate::harness::hash_json(cfg),
        times: plan.times(),
        states: std::mem::take(&mut c.acc),
        failure: c.failures.pop(),
    }
}

/// One trajectory from x_T ~ N(0, I).
pub fn sample_trajectory<S: ScoreSource>(cfg: &SamplerConfig, source: &S, sched: &NoiseSchedule, traj: u64) -> Result<TrajectoryRecord> {
    let plan = Plan::from_config(cfg)?;
    Ok(single_record(source, sched, &plan, cfg, traj, &Init::StandardNormal))
}

/// Runs the remaining reverse steps from `x0` at time `start`.
pub fn restart_from_point<S: ScoreSource>(x0: &[f64], start: usize, cfg: &SamplerConfig, source: &S, sched: &NoiseSchedule, traj: u64) -> Result<TrajectoryRecord> {
    let plan = Plan::restart(cfg, start)?;
    let f = |_: u64, out: &mut [f64]| out.copy_from_slice(x0);
    Ok(single_record(source, sched, &plan, cfg, traj, &Init::Points(&f)))
}

/// Writes records as CSV rows (traj_id, step_index, t, x_0..) and a JSON
/// sidecar with the sampler config and the trajectory seeds.
pub fn write_trajectories(path: &std::path::Path, records: &[TrajectoryRecord], cfg: &SamplerConfig) -> Result<()> {
    let dim = records.first().and_then(|r| r.states.first()).map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["traj_id", "step_index", "t"].iter().map(|s| s.to_string()).collect();
    header.extend((0..dim).map(|k| format!("x_{k}")));
    w.write_record(&header)?;
    for r in records {
        for (k, (t, x)) in r.times.iter().zip(&r.states).enumerate() {
            let mut rec = vec![r.traj_id.to_string(), k.to_string(), t.to_string()];
            rec.extend(x.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    let sidecar = serde_json::json!({
        "config": cfg,
        "config_hash": crate::harness::hash_json(cfg),
        "trajectories": records.iter().map(|r| serde_json::json!({"traj_id": r.traj_id, "seed": r.seed, "failure": r.failure})).collect::<Vec<_>>(),
    });
    std::fs::write(path.with_extension("json"), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

/// One-dimensional bisector dynamics A_t along a segment.
///
/// A is measured from the moving midpoint √ᾱ_t m, so the state is
/// x = √ᾱ_t m + A u + z with z ⊥ u.
pub struct BisectorSde<'a> {
    pub gmm: &'a GaussianMixture,
    pub sched: &'a NoiseSchedule,
    pub seg: &'a SegmentFrame,
    /// Bound on ‖z‖ in x-space.
    pub z_bound: f64,
    pub noise: bool,
}

impl BisectorSde<'_> {
    /// Projected forward drift b(a, t) = −½β a − β⟨∇log p_t(x), u⟩.
    pub fn drift(&self, a: f64, t: usize, z: &[f64]) -> f64 {
        let s = self.sched.alpha_bar(t).sqrt();
        let x: Vec<f64> = (0..self.seg.dim()).map(|k| s * self.seg.midpoint[k] + a * self.seg.u[k] + z[k]).collect();
        let sc = self.gmm.score_exact(self.sched, &x, t);
        let proj: f64 = sc.iter().zip(&self.seg.u).map(|(p, q)| p * q).sum();
        let beta = self.sched.beta(t);
        -0.5 * beta * a - beta * proj
    }

    /// Random orthogonal offset with ‖z‖ ≤ z_bound.
    pub fn sample_orth(&self, stream: &NoiseStream, step: u64) -> Vec<f64> {
        let d = self.seg.dim();
        if self.z_bound == 0.0 || d == 1 {
            return vec![0.0; d];
        }
        let mut r = stream.rng(Domain::Orth, step);
        let mut v: Vec<f64> = (0..d).map(|_| rand::Rng::sample(&mut r, rand_distr::StandardNormal)).collect();
        let p: f64 = v.iter().zip(&self.seg.u).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(&self.seg.u).for_each(|(a, b)| *a -= p * b);
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-300);
        let mag = rand::Rng::random_range(&mut r, -1.0..1.0) * self.z_bound;
        v.iter_mut().for_each(|a| *a *= mag / n);
        v
    }

    /// Euler–Maruyama path A_{t−1} = A_t − b(A_t, t) + √β_t ξ from `t_start` to 0.
    pub fn path(&self, t_start: usize, a_init: f64, stream: &NoiseStream) -> Vec<f64> {
        let mut a = a_init;
        let mut out = Vec::with_capacity(t_start + 1);
        out.push(a);
        for t in (1..=t_start).rev() {
            let z = self.sample_orth(stream, t as u64);
            let b = self.drift(a, t, &z);
            let mut next = a - b;
            if self.noise {
                let mut xi = [0.0];
                stream.fill_normal(Domain::Step, t as u64, &mut xi);
                next += self.sched.beta(t).sqrt() * xi[0];
            }
            a = next;
            out.push(a);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::build_grid_mixture;
    use proptest::prelude::*;

    fn single_gaussian(mu: f64, sigma: f64) -> (GaussianMixture, NoiseSchedule) {
        let g = GaussianMixture::new(vec![vec![mu, -0.5 * mu]], vec![1.0], sigma).unwrap();
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02, sigma).unwrap();
        (g, s)
    }

    fn moments(xs: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
        let n = (xs.len() / d) as f64;
        let mean: Vec<f64> = (0..d).map(|k| xs.iter().skip(k).step_by(d).sum::<f64>() / n).collect();
        let var = (0..d).map(|k| xs.iter().skip(k).step_by(d).map(|v| (v - mean[k]).powi(2)).sum::<f64>() / (n - 1.0)).collect();
        (mean, var)
    }

    #[test]
    fn ddpm_identity_when_beta_vanishes() {
        let s = NoiseSchedule::linear(10, 1e-300, 1e-300, 1.0).unwrap();
        let x = [0.3, -1.2];
        let mut out = [0.0; 2];
        ddpm_step(&s, &x, &[5.0, 7.0], 3, 2, &[1.0, 1.0], &mut out);
        assert!((out[0] - 0.3).abs() < 1e-12 && (out[1] + 1.2).abs() < 1e-12);
    }

    #[test]
    fn ddpm_mean_matches_euler_to_second_order() {
        let s = NoiseSchedule::linear(1000, 1e-3, 1e-3, 1.0).unwrap();
        let x = [0.7, -0.4];
        let sc = [1.3, 0.9];
        let mut out = [0.0; 2];
        ddpm_step(&s, &x, &sc, 5, 4, &[0.0, 0.0], &mut out);
        let b = s.beta(5);
        for k in 0..2 {
            let euler = x[k] + 0.5 * b * (x[k] + 2.0 * sc[k]);
            assert!((out[k] - euler).abs() < 1e-5);
        }
    }

    #[test]
    fn ddpm_recovers_gaussian_target() {
        let (g, s) = single_gaussian(0.8, 0.3);
        let src = ExactScore::new(&g, &s);
        let plan = Plan::from_config(&SamplerConfig::ddpm(1000, 1)).unwrap();
        let run = BatchRun { source: &src, sched: &s, plan: &plan, seed: 1, exec: Exec::default() };
        let n = 10_000;
        let (xs, fails) = run.finals(0..n, &Init::StandardNormal);
        assert!(fails.is_empty());
        let (mean, var) = moments(&xs, 2);
        for k in 0..2 {
            let se_mean = (0.09 / n as f64).sqrt();
            assert!((mean[k] - g.mode(0)[k]).abs() < 3.0 * se_mean, "mean {mean:?}");
            let se_var = 0.09 * (2.0 / (n as f64 - 1.0)).sqrt();
            assert!((var[k] - 0.09).abs() < 3.0 * se_var, "var {var:?}");
        }
    }

    #[test]
    fn ddim_full_eta_one_matches_target() {
        let (g, s) = single_gaussian(-0.5, 0.4);
        let src = ExactScore::new(&g, &s);
        let plan = Plan::from_config(&SamplerConfig::ddim(StepGrid::ddpm_full(1000), 1.0, 2)).unwrap();
        let run = BatchRun { source: &src, sched: &s, plan: &plan, seed: 2, exec: Exec::default() };
        let n = 10_000;
        let (xs, _) = run.finals(0..n, &Init::StandardNormal);
        let (mean, var) = moments(&xs, 2);
        for k in 0..2 {
            assert!((mean[k] - g.mode(0)[k]).abs() < 3.0 * (0.16 / n as f64).sqrt());
            assert!((var[k] - 0.16).abs() < 3.0 * 0.16 * (2.0 / n as f64).sqrt());
        }
    }

    #[test]
    fn ddim_deterministic_and_identity() {
        let g = build_grid_mixture(5, 2.0, 0.02, 2, 25).unwrap();
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02, g.sigma()).unwrap();
        let src = ExactScore::new(&g, &s);
        let x = [0.1, -0.3];
        let sc = src.score(&x, 500);
        let mut a = [0.0; 2];
        let mut b = [0.0; 2];
        ddim_step(&s, &x, &sc, 500, 480, 0.0, &[9.0, 9.0], &mut a);
        ddim_step(&s, &x, &sc, 500, 480, 0.0, &[-9.0, 3.0], &mut b);
        assert_eq!(a, b);
        ddim_step(&s, &x, &sc, 500, 500, 0.0, &[0.0, 0.0], &mut a);
        assert!((a[0] - x[0]).abs() < 1e-15 && (a[1] - x[1]).abs() < 1e-15);
    }

    /// RK4 on the probability-flow ODE dx/dt = −½β(t)(x + score) for a
    /// single Gaussian, with a piecewise-constant rate β(t) = −ln(1 − β_k) on
    /// (k−1, k] so that ᾱ(t) interpolates log ᾱ linearly.
    fn rk4_endpoint(mu: f64, sigma: f64, s: &NoiseSchedule, x_t: f64) -> f64 {
        let per_unit = 40;
        let h = -1.0 / per_unit as f64;
        let mut x = x_t;
        for k in (1..=s.t_max()).rev() {
            let rate = -(1.0 - s.beta(k)).ln();
            let base = s.alpha_bar(k - 1).ln();
            let f = |t: f64, x: f64| {
                let a = (base - rate * (t - (k - 1) as f64)).exp();
                let v = sigma * sigma * a + 1.0 - a;
                let score = -(x - a.sqrt() * mu) / v;
                -0.5 * rate * (x + score)
            };
            for m in 0..per_unit {
                let t = k as f64 + m as f64 * h;
                let k1 = f(t, x);
                let k2 = f(t + 0.5 * h, x + 0.5 * h * k1);
                let k3 = f(t + 0.5 * h, x + 0.5 * h * k2);
                let k4 = f(t + h, x + h * k3);
                x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
        }
        x
    }

    fn ddim_endpoint(s: &NoiseSchedule, mu: f64, sigma: f64, x_t: f64) -> f64 {
        let g = GaussianMixture::new(vec![vec![mu]], vec![1.0], sigma).unwrap();
        let src = ExactScore::new(&g, s);
        let plan = Plan::from_config(&SamplerConfig::ddim(StepGrid::ddpm_full(s.t_max()), 0.0, 0)).unwrap();
        let run = BatchRun { source: &src, sched: s, plan: &plan, seed: 0, exec: Exec::SEQUENTIAL };
        let f = move |_: u64, o: &mut [f64]| o[0] = x_t;
        run.finals(0..1, &Init::Points(&f)).0[0]
    }

    #[test]
    fn ddim_matches_rk4_flow() {
        let (mu, sigma) = (0.6, 0.5);
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02, sigma).unwrap();
        // same continuous process resolved with 4x more unit steps
        let fine = NoiseSchedule::linear(4000, 2.5e-5, 0.005, sigma).unwrap();
        for x_t in [-1.5, 0.2, 1.1] {
            let exact = |sc: &NoiseSchedule| {
                let a = sc.alpha_bar(sc.t_max());
                mu + sigma * (x_t - a.sqrt() * mu) / (sigma * sigma * a + 1.0 - a).sqrt()
            };
            let oracle = rk4_endpoint(mu, sigma, &s, x_t);
            assert!((oracle - exact(&s)).abs() < 1e-6);
            // first-order scheme: error of a few 1e-3 at 1000 steps, below 1e-3 at 4000
            let coarse = (ddim_endpoint(&s, mu, sigma, x_t) - oracle).abs();
            assert!(coarse < 3e-3, "{coarse}");
            let fine_oracle = rk4_endpoint(mu, sigma, &fine, x_t);
            let refined = (ddim_endpoint(&fine, mu, sigma, x_t) - fine_oracle).abs();
            assert!(refined < 1e-3 && refined < 0.4 * coarse.max(1e-12) + 1e-6, "{refined} vs {coarse}");
        }
    }

    #[test]
    fn ddim_step_agrees_with_rescaled_euler() {
        // one DDIM step equals an Euler step of dy/du = μ̂(y) − y to O(Δu²)
        let g = build_grid_mixture(5, 2.0, 0.02, 2, 25).unwrap();
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02, g.sigma()).unwrap();
        let src = ExactScore::new(&g, &s);
        let x = [0.21, 0.13];
        let mut errs = Vec::new();
        for gap in [8usize, 4, 2] {
            let (t, tp) = (600, 600 - gap);
            let mut out = [0.0; 2];
            ddim_step(&s, &x, &src.score(&x, t), t, tp, 0.0, &[0.0; 2], &mut out);
            let st = s.alpha_bar(t).sqrt();
            let y: Vec<f64> = x.iter().map(|v| v / st).collect();
            let mut mu = vec![0.0; 2];
            let mut gam = vec![0.0; 25];
            g.posterior_mean_rescaled(&y, s.sigma_tilde_sq(t), &mut gam, &mut mu);
            let du = s.u_time(tp) - s.u_time(t);
            let y_next: Vec<f64> = (0..2).map(|k| y[k] + du * (mu[k] - y[k])).collect();
            let stp = s.alpha_bar(tp).sqrt();
            let e = (0..2).map(|k| (out[k] / stp - y_next[k]).powi(2)).sum::<f64>().sqrt();
            errs.push(e);
        }
        assert!(errs[1] < 0.5 * errs[0] && errs[2] < 0.5 * errs[1], "{errs:?}");
    }

    #[test]
    fn plan_shapes() {
        let grid = StepGrid::ddim_quadratic(1000, 50).unwrap();
        let h = Plan::from_config(&SamplerConfig::hybrid(grid.clone(), 3, 2, 0)).unwrap();
        let times = h.times();
        assert_eq!(&times[times.len() - 4..], &[10, 6, 3, 0]);
        assert_eq!(h.steps.last().unwrap().op, StepOp::Ddpm);
        let r = Plan::restart(&SamplerConfig::ddim(grid.clone(), 0.0, 0), 6).unwrap();
        assert_eq!(r.times(), vec![6, 4, 2, 0]);
        let p = Plan::restart(&SamplerConfig::ddpm(1000, 0), 6).unwrap();
        assert_eq!(p.times(), vec![6, 5, 4, 3, 2, 1, 0]);
        assert!(Plan::restart(&SamplerConfig::ddim(grid.clone(), 0.0, 0), 7).is_err());
        assert!(SamplerConfig::hybrid(grid.clone(), 3, 0, 0).validate().is_err());
        assert!(SamplerConfig::hybrid(grid, 99, 2, 0).validate().is_err());
    }

    #[test]
    fn restart_examples() {
        let g = build_grid_mixture(5, 2.0, 0.02, 2, 25).unwrap();
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02, g.sigma()).unwrap();
        let src = ExactScore::new(&g, &s);
        let grid = StepGrid::ddim_quadratic(1000, 50).unwrap();
        let cfg = SamplerConfig::ddim(grid.clone(), 0.0, 0);
        let r = restart_from_point(&[0.4, 0.1], 0, &cfg, &src, &s, 0).unwrap();
        assert_eq!(r.states, vec![vec![0.4, 0.1]]);
        // exact midpoint with w = 0 is a fixed point of the symmetric drift
        let seg = SegmentFrame::new(&g, 12, 13).unwrap();
        let t = 6;
        let m: Vec<f64> = seg.midpoint.iter().map(|v| v * s.alpha_bar(t).sqrt()).collect();
        let r = restart_from_point(&m, t, &cfg, &src, &s, 0).unwrap();
        let end = r.states.last().unwrap();
        let d = ((end[0] - seg.midpoint[0]).powi(2) + (end[1] - seg.midpoint[1]).powi(2)).sqrt();
        assert!(d < 0.15 * seg.ell, "{d}");
        // near a mode the sampler lands within 5σ of it
        let x: Vec<f64> = g.mode(7).iter().map(|v| v * s.alpha_bar(40).sqrt() + 1e-3).collect();
        let r = restart_from_point(&x, 40, &cfg, &src, &s, 0).unwrap();
        let end = r.states.last().unwrap();
        let d = ((end[0] - g.mode(7)[0]).powi(2) + (end[1] - g.mode(7)[1]).powi(2)).sqrt();
        assert!(d < 5.0 * g.sigma());
    }

    #[test]
    fn trajectory_is_reproducible() {
        let g = build_grid_mixture(5, 2.0, 0.02, 2, 25).unwrap();
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02, g.sigma()).unwrap();
        let src = ExactScore::new(&g, &s);
        let cfg = SamplerConfig::ddpm(1000, 42);
        let a = sample_trajectory(&cfg, &src, &s, 7).unwrap();
        let b = sample_trajectory(&cfg, &src, &s, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.states.len(), 1001);
        // the same id inside a larger batch follows the same path
        let plan = Plan::from_config(&cfg).unwrap();
        let run = BatchRun { source: &src, sched: &s, plan: &plan, seed: 42, exec: Exec::new(3) };
        let (xs, _) = run.finals(0..300, &Init::StandardNormal);
        assert_eq!(&xs[14..16], a.states.last().unwrap().as_slice());
    }

    #[test]
    fn bisector_drift_vanishes_at_symmetric_midpoint() {
        let g = GaussianMixture::equal_weights(vec![vec![0.0, 0.0], vec![0.7, 0.0]], 0.01).unwrap();
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02, 0.01).unwrap();
        let seg = SegmentFrame::new(&g, 0, 1).unwrap();
        let sde = BisectorSde { gmm: &g, sched: &s, seg: &seg, z_bound: 0.0, noise: true };
        for t in [1usize, 10, 58, 400] {
            assert!(sde.drift(0.0, t, &[0.0, 0.0]).abs() < 1e-15);
        }
        // repulsive near t = 0, attracting once the two modes have merged
        assert!(sde.drift(0.05, 10, &[0.0, 0.0]) < 0.0);
        assert!(sde.drift(0.05, 900, &[0.0, 0.0]) > 0.0);
    }

    #[test]
    fn bisector_noise_off_stays_in_window() {
        let g = build_grid_mixture(5, 2.0, 0.02, 2, 25).unwrap();
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02, g.sigma()).unwrap();
        let seg = SegmentFrame::new(&g, 12, 13).unwrap();
        let sde = BisectorSde { gmm: &g, sched: &s, seg: &seg, z_bound: 0.0, noise: false };
        let theta = 0.15 * seg.ell;
        let stream = NoiseStream::new(0, 0);
        // linearised per-step growth 1 − ∂b/∂a bounds how far a start can drift
        let t0 = 6;
        let growth: f64 = (1..=t0)
            .map(|t| {
                let h = 1e-9;
                let db = (sde.drift(h, t, &[0.0, 0.0]) - sde.drift(-h, t, &[0.0, 0.0])) / (2.0 * h);
                (1.0 - db).abs().max(1.0)
            })
            .product();
        let window = theta / growth;
        for frac in [0.0, 0.25, 0.5, 0.9] {
            let path = sde.path(t0, frac * window, &stream);
            assert!(path.iter().all(|a| a.abs() < theta), "frac {frac}");
        }
        // far outside the window the deterministic flow exits
        let path = sde.path(t0, 0.05 * theta, &stream);
        assert!(path.last().unwrap().abs() >= theta);
    }

    proptest! {
        #[test]
        fn batch_equals_single(id in 0u64..600, seed in 0u64..4) {
            let g = build_grid_mixture(5, 2.0, 0.02, 2, 25).unwrap();
            let s = NoiseSchedule::linear(1000, 1e-4, 0.02, g.sigma()).unwrap();
            let src = ExactScore::new(&g, &s);
            let grid = StepGrid::ddim_quadratic(1000, 10).unwrap();
            let cfg = SamplerConfig::ddim(grid, 0.5, seed);
            let plan = Plan::from_config(&cfg).unwrap();
            let run = BatchRun { source: &src, sched: &s, plan: &plan, seed, exec: Exec::SEQUENTIAL };
            let (xs, _) = run.finals(id..id + 3, &Init::StandardNormal);
            let one = sample_trajectory(&cfg, &src, &s, id).unwrap();
            prop_assert_eq!(&xs[..2], one.states.last().unwrap().as_slice());
        }
    }
}
