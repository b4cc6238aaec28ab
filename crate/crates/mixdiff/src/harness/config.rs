use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::DriftBoundConfig;
use crate::error::{Error, Result};
use crate::mixture::GridSpec;
use crate::samplers::{SamplerConfig, SamplerKind};
use crate::schedule::{GridKind, ScheduleSpec, StepGrid};
use crate::scorenet::{ScoreConvention, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Sample,
    StepSweep,
    KappaSweep,
    Convergence,
    Trap,
    EtaSweep,
    Tau3Ablation,
    BoundCheck,
    Decomposition,
    Diagonal,
    Perturbation,
    Train,
    DimSweep,
    HyperAblation,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 14] = [
        ExperimentKind::Sample,
        ExperimentKind::StepSweep,
        ExperimentKind::KappaSweep,
        ExperimentKind::Convergence,
        ExperimentKind::Trap,
        ExperimentKind::EtaSweep,
        ExperimentKind::Tau3Ablation,
        ExperimentKind::BoundCheck,
        ExperimentKind::Decomposition,
        ExperimentKind::Diagonal,
        ExperimentKind::Perturbation,
        ExperimentKind::Train,
        ExperimentKind::DimSweep,
        ExperimentKind::HyperAblation,
    ];

    pub fn name(self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
    }
}

/// Sampler choice; `steps` is the DDIM grid size and ignored for DDPM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    pub steps: usize,
    pub grid: GridKind,
    pub eta: f64,
    pub tau3: usize,
    pub z_extra: usize,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        SamplerSpec { kind: SamplerKind::Ddim, steps: 50, grid: GridKind::DdimQuadratic, eta: 0.0, tau3: 3, z_extra: 5 }
    }
}

impl SamplerSpec {
    pub fn ddim_grid(&self, t_max: usize, steps: usize) -> Result<StepGrid> {
        match self.grid {
            GridKind::DdimQuadratic => StepGrid::ddim_quadratic(t_max, steps),
            GridKind::DdimUniform => StepGrid::ddim_uniform(t_max, steps),
            _ => Err(Error::config("sampler.grid", "must be ddim_quadratic or ddim_uniform")),
        }
    }

    pub fn build(&self, t_max: usize, seed: u64) -> Result<SamplerConfig> {
        let cfg = match self.kind {
            SamplerKind::Ddpm => SamplerConfig::ddpm(t_max, seed),
            SamplerKind::Ddim => SamplerConfig::ddim(self.ddim_grid(t_max, self.steps)?, self.eta, seed),
            SamplerKind::Hybrid => SamplerConfig::hybrid(self.ddim_grid(t_max, self.steps)?, self.tau3, self.z_extra, seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Exact,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSpec {
    pub source: ScoreKind,
    /// Loaded when present, otherwise written after training.
    pub checkpoint: Option<PathBuf>,
    pub convention: ScoreConvention,
    pub train: TrainConfig,
}

impl Default for ScoreSpec {
    fn default() -> Self {
        ScoreSpec { source: ScoreKind::Exact, checkpoint: None, convention: ScoreConvention::NoiseStd, train: TrainConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KappaGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl KappaGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.lo];
        }
        (0..self.n).map(|k| self.lo + (self.hi - self.lo) * k as f64 / (self.n - 1) as f64).collect()
    }
}

impl Default for KappaGrid {
    fn default() -> Self {
        KappaGrid { lo: 1.0, hi: 20.0, n: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperGrid {
    pub t_max: Vec<usize>,
    pub sigma: Vec<f64>,
    pub separation: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid { t_max: vec![250, 500, 1000], sigma: vec![0.01, 0.02, 0.04], separation: vec![1.5, 2.0, 3.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSpec {
    pub kappa: f64,
    pub kappa_grid: KappaGrid,
    /// Trap radius as a fraction of ℓ_t.
    pub trap_theta: f64,
    /// τ₃ in DDIM grid steps for trap experiments.
    pub trap_tau3: usize,
    pub trap_per_pair: usize,
    /// Midpoint-neighbourhood radius for the decomposition table.
    pub midpoint_theta: f64,
    pub midpoint_tau3: usize,
    pub step_grids: Vec<usize>,
    pub etas: Vec<f64>,
    pub tau3_values: Vec<usize>,
    pub z_values: Vec<usize>,
    pub dims: Vec<usize>,
    pub bound: DriftBoundConfig,
    pub bound_thetas: Vec<f64>,
    pub bound_paths: u64,
    /// Time index for the perturbation probe.
    pub probe_t: usize,
    /// Magnitude of the injected constant error field when the score is exact.
    pub psi_rho: f64,
    pub hyper: HyperGrid,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        AnalysisSpec {
            kappa: 7.0,
            kappa_grid: KappaGrid::default(),
            trap_theta: 0.15,
            trap_tau3: 3,
            trap_per_pair: 250,
            midpoint_theta: 0.35,
            midpoint_tau3: 11,
            step_grids: vec![10, 25, 50, 100, 250],
            etas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            tau3_values: vec![3, 5, 7, 9, 11],
            z_values: vec![2, 5, 8],
            dims: vec![2, 4, 8, 16],
            bound: DriftBoundConfig::default(),
            bound_thetas: vec![0.05, 0.1, 0.15, 0.2],
            bound_paths: 2000,
            probe_t: 30,
            psi_rho: 0.5,
            hyper: HyperGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub mixture: GridSpec,
    pub schedule: ScheduleSpec,
    pub sampler: SamplerSpec,
    pub score: ScoreSpec,
    pub analysis: AnalysisSpec,
    pub n_trajectories: u64,
    pub seed: u64,
    /// 0 = all cores.
    pub workers: usize,
    pub out_dir: Option<PathBuf>,
    pub full_scale: bool,
    /// Process only trajectory ids in [start, end); later runs resume after the last written id.
    pub id_range: Option<[u64; 2]>,
}

pub const DESK_TRAJECTORIES: u64 = 10_000;
pub const FULL_TRAJECTORIES: u64 = 100_000;

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::Sample,
            mixture: GridSpec::default(),
            schedule: ScheduleSpec::default(),
            sampler: SamplerSpec::default(),
            score: ScoreSpec::default(),
            analysis: AnalysisSpec::default(),
            n_trajectories: DESK_TRAJECTORIES,
            seed: 0,
            workers: 0,
            out_dir: None,
            full_scale: false,
            id_range: None,
        }
    }
}

fn check(ok: bool, field: &str, reason: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(field, reason))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    /// Applies `path=value` overrides; values parse as JSON, falling back to strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        for o in overrides {
            let (path, raw) = o.split_once('=').ok_or_else(|| Error::config(o.as_str(), "override must be path=value"))?;
            let val = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut v, path, val)?;
        }
        serde_json::from_value(v).map_err(|e| Error::config("override", e.to_string()))
    }

    /// Scales trajectory counts and training to the published protocol.
    pub fn apply_full_scale(&mut self) {
        self.full_scale = true;
        self.n_trajectories = self.n_trajectories.max(FULL_TRAJECTORIES);
        let seed = self.score.train.seed;
        self.score.train = TrainConfig { seed, ..TrainConfig::full_scale() };
    }

    /// Hash over everything that affects numeric output.
    pub fn result_hash(&self) -> String {
        let mut c = self.clone();
        c.workers = 0;
        c.out_dir = None;
        c.id_range = None;
        super::hash_json(&c)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.mixture;
        check(m.side >= 2, "mixture.side", "must be at least 2")?;
        check(m.sigma > 0.0, "mixture.sigma", "must be positive")?;
        check(m.separation > 0.0, "mixture.separation", "must be positive")?;
        check(m.dim >= 1, "mixture.dim", "must be positive")?;
        check(m.n_keep >= 2, "mixture.n_keep", "need at least two modes")?;
        let s = &self.schedule;
        check(s.family == "linear", "schedule.family", "only linear is supported")?;
        check(s.t_max >= 2, "schedule.T", "must be at least 2")?;
        check(s.beta_min > 0.0 && s.beta_min <= s.beta_max && s.beta_max < 1.0, "schedule.beta_min", "need 0 < beta_min <= beta_max < 1")?;
        check(self.sampler.steps >= 1 && self.sampler.steps <= s.t_max, "sampler.steps", "must lie in [1, T]")?;
        check((0.0..=1.0).contains(&self.sampler.eta), "sampler.eta", "must lie in [0, 1]")?;
        self.sampler.build(s.t_max, self.seed)?;
        if self.score.source == ScoreKind::Learned || self.experiment == ExperimentKind::Train {
            self.score.train.validate()?;
        }
        check(self.n_trajectories >= 1, "n_trajectories", "must be positive")?;
        if let Some([a, b]) = self.id_range {
            check(a < b && b <= self.n_trajectories, "id_range", "need start < end <= n_trajectories")?;
        }
        let a = &self.analysis;
        check(a.kappa > 0.0, "analysis.kappa", "must be positive")?;
        check(a.kappa_grid.n >= 1 && a.kappa_grid.lo > 0.0 && a.kappa_grid.lo <= a.kappa_grid.hi, "analysis.kappa_grid", "need n >= 1 and 0 < lo <= hi")?;
        check(a.trap_theta > 0.0 && a.trap_theta < 0.5, "analysis.trap_theta", "must lie in (0, 1/2)")?;
        check(a.midpoint_theta > 0.0 && a.midpoint_theta < 0.5, "analysis.midpoint_theta", "must lie in (0, 1/2)")?;
        check(a.trap_tau3 >= 1 && a.trap_tau3 < self.sampler.steps, "analysis.trap_tau3", "must lie in [1, sampler.steps)")?;
        check(a.midpoint_tau3 >= 1 && a.midpoint_tau3 < self.sampler.steps, "analysis.midpoint_tau3", "must lie in [1, sampler.steps)")?;
        check(a.trap_per_pair >= 1, "analysis.trap_per_pair", "must be positive")?;
        check(!a.step_grids.is_empty() && a.step_grids.iter().all(|&n| n >= 1 && n <= s.t_max), "analysis.step_grids", "need values in [1, T]")?;
        check(!a.etas.is_empty() && a.etas.iter().all(|e| (0.0..=1.0).contains(e)), "analysis.etas", "need values in [0, 1]")?;
        check(!a.tau3_values.is_empty() && a.tau3_values.iter().all(|&t| t >= 1 && t < self.sampler.steps), "analysis.tau3_values", "need values in [1, sampler.steps)")?;
        check(!a.z_values.is_empty() && a.z_values.iter().all(|&z| z >= 1), "analysis.z_values", "need positive values")?;
        check(!a.dims.is_empty() && a.dims.iter().all(|&d| d >= 1), "analysis.dims", "need positive values")?;
        check(a.bound.t_lo >= 1 && a.bound.t_lo <= a.bound.t_hi && a.bound.t_hi <= s.t_max, "analysis.bound.t_lo", "need 1 <= t_lo <= t_hi <= T")?;
        check(a.bound.n_intervals >= 1 && a.bound.n_samples >= 1, "analysis.bound.n_intervals", "must be positive")?;
        check(!a.bound_thetas.is_empty() && a.bound_thetas.iter().all(|&t| t > 0.0), "analysis.bound_thetas", "need positive values")?;
        check(a.bound_paths >= 1, "analysis.bound_paths", "must be positive")?;
        check(a.probe_t >= 1 && a.probe_t <= s.t_max, "analysis.probe_t", "must lie in [1, T]")?;
        check(a.psi_rho >= 0.0, "analysis.psi_rho", "must be nonnegative")?;
        let h = &a.hyper;
        check(!h.t_max.is_empty() && h.t_max.iter().all(|&t| t >= 2), "analysis.hyper.t_max", "need values >= 2")?;
        check(!h.sigma.is_empty() && h.sigma.iter().all(|&v| v > 0.0), "analysis.hyper.sigma", "need positive values")?;
        check(!h.separation.is_empty() && h.separation.iter().all(|&v| v > 0.0), "analysis.hyper.separation", "need positive values")?;
        Ok(())
    }
}

fn set_path(root: &mut Value, path: &str, val: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (k, p) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| Error::config(path, "not an object"))?;
        if !obj.contains_key(*p) {
            return Err(Error::config(path, "unknown field"));
        }
        if k + 1 == parts.len() {
            obj.insert(p.to_string(), val);
            return Ok(());
        }
        cur = obj.get_mut(*p).expect("checked");
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
    }
    Ok(())
}
