use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::bundle::{fmt_f64, Curve, ResultBundle};
use super::config::{ExperimentConfig, ExperimentKind, ScoreKind};
use crate::analysis::*;
use crate::error::{Error, Result};
use crate::geometry::{adjacent_pairs, epsilon_from_kappa, SegmentFrame};
use crate::mixture::{build_grid, GaussianMixture, GridSpec};
use crate::par::{Exec, CHUNK};
use crate::samplers::{BatchRun, ErrorField, ExactScore, Init, PerturbedScore, Plan, SamplerConfig, ScoreSource};
use crate::schedule::{NoiseSchedule, ScheduleSpec};
use crate::scorenet::{train_score_with, LearnedScore, ScoreConvention, ScoreNet};

/// Trajectory ids per flushed block of a resumable log.
pub const LOG_BLOCK: u64 = 16 * CHUNK;

/// Everything an experiment needs: the validated config, target, schedule,
/// optional learned network and the output bundle.
pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub gmm: GaussianMixture,
    pub sched: NoiseSchedule,
    pub exec: Exec,
    pub net: Option<ScoreNet>,
    pub bundle: ResultBundle,
}

impl Ctx {
    pub fn new(cfg: &ExperimentConfig, dir: &Path) -> Result<Ctx> {
        cfg.validate()?;
        let gmm = build_grid(&cfg.mixture)?;
        let sched = NoiseSchedule::from_spec(&cfg.schedule, gmm.sigma())?;
        let mut conv = BTreeMap::new();
        conv.insert("coordinates".into(), if cfg.mixture.normalize { "lattice divided by 2*sqrt(dim)" } else { "raw lattice" }.into());
        conv.insert("sigma_effective".into(), fmt_f64(gmm.sigma()));
        conv.insert("classifier_threshold".into(), fmt_f64(classify_threshold(&gmm)));
        conv.insert("classifier_rule".into(), "mode within threshold, else shortest segment within threshold".into());
        conv.insert("score_source".into(), format!("{:?}", cfg.score.source).to_lowercase());
        conv.insert("score_convention".into(), serde_json::to_value(cfg.score.convention)?.as_str().unwrap_or_default().into());
        conv.insert("train_time_weighting".into(), serde_json::to_value(cfg.score.train.time_weighting)?.as_str().unwrap_or_default().into());
        conv.insert("tau3_to_t".into(), "t3 = DDIM grid index with tau3 steps remaining; DDPM restarts at the same t3".into());
        conv.insert("tube_distance".into(), "y-space distance to nearest pair's eps-extended segment over sqrt(dim)".into());
        conv.insert("trap_offsets".into(), "fractions of ell_t along the pair direction".into());
        let bundle = ResultBundle::create(dir, cfg, conv)?;
        let exec = Exec::new(cfg.workers);
        let mut ctx = Ctx { cfg: cfg.clone(), gmm, sched, exec, net: None, bundle };
        if cfg.score.source == ScoreKind::Learned && cfg.experiment != ExperimentKind::Train {
            ctx.net = Some(ctx.learned_net()?);
        }
        Ok(ctx)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.cfg.score.checkpoint.clone().unwrap_or_else(|| self.bundle.dir.join("score.bin"))
    }

    /// Loads the checkpoint if present, otherwise trains and writes it.
    fn learned_net(&self) -> Result<ScoreNet> {
        let path = self.checkpoint_path();
        if path.exists() {
            let (net, _) = ScoreNet::load(&path)?;
            if net.arch.dim != self.gmm.dim() {
                return Err(Error::config("score.checkpoint", "dimension differs from the mixture"));
            }
            return Ok(net);
        }
        let tr = self.train()?;
        Ok(tr)
    }

    fn train(&self) -> Result<ScoreNet> {
        let cfg = &self.cfg.score.train;
        let every = (cfg.epochs / 20).max(1);
        let mut losses = Vec::new();
        let tr = train_score_with(&self.gmm, &self.sched, cfg, &mut |e, l| {
            losses.push(l);
            if e % every == 0 {
                eprintln!("epoch {e}: loss {l:.5}");
            }
        })
        .map_err(|d| Error::from(*d))?;
        tr.net.save(&self.checkpoint_path(), &tr.meta(cfg, &self.sched))?;
        let mut w = fs::File::create(self.bundle.dir.join("train_loss.csv"))?;
        writeln!(w, "epoch,loss")?;
        writeln!(w, "init,{}", fmt_f64(tr.initial_loss))?;
        for (e, l) in tr.losses.iter().enumerate() {
            writeln!(w, "{e},{}", fmt_f64(*l))?;
        }
        Ok(tr.net)
    }

    /// The configured score source.
    pub fn source(&self) -> Box<dyn ScoreSource + '_> {
        source_of(&self.net, &self.gmm, &self.sched, self.cfg.score.convention)
    }

    pub fn sampler(&self) -> Result<SamplerConfig> {
        self.cfg.sampler.build(self.sched.t_max(), self.cfg.seed)
    }

    pub fn ddim(&self, steps: usize, eta: f64) -> Result<SamplerConfig> {
        Ok(SamplerConfig::ddim(self.cfg.sampler.ddim_grid(self.sched.t_max(), steps)?, eta, self.cfg.seed))
    }

    pub fn ddpm(&self) -> SamplerConfig {
        SamplerConfig::ddpm(self.sched.t_max(), self.cfg.seed)
    }

    /// Time index with `tau3` steps left on the configured DDIM grid.
    pub fn t3(&self, tau3: usize) -> Result<usize> {
        let grid = self.cfg.sampler.ddim_grid(self.sched.t_max(), self.cfg.sampler.steps)?;
        grid.index_with_remaining(tau3).ok_or_else(|| Error::config("analysis.tau3", "beyond the DDIM grid"))
    }
}

fn source_of<'a>(net: &'a Option<ScoreNet>, gmm: &'a GaussianMixture, sched: &'a NoiseSchedule, convention: ScoreConvention) -> Box<dyn ScoreSource + 'a> {
    match net {
        Some(net) => Box::new(LearnedScore { net, sched, convention }),
        None => Box::new(ExactScore::new(gmm, sched)),
    }
}

/// One terminal sample in a resumable log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajRow {
    pub id: u64,
    /// None for a numerically failed trajectory.
    pub label: Option<Label>,
    pub visited: bool,
    pub x: Vec<f64>,
}

fn label_fields(l: Option<Label>) -> [String; 3] {
    match l {
        Some(Label::Mode(k)) => ["mode".into(), k.to_string(), String::new()],
        Some(Label::Interpolation(i, j)) => ["interpolation".into(), i.to_string(), j.to_string()],
        Some(Label::Invalid) => ["invalid".into(), String::new(), String::new()],
        None => ["failed".into(), String::new(), String::new()],
    }
}

fn parse_row(rec: &csv::StringRecord) -> Result<TrajRow> {
    let bad = || Error::config("out_dir", "corrupt trajectory log");
    let num = |k: usize| rec.get(k).and_then(|s| s.parse::<usize>().ok()).ok_or_else(bad);
    let label = match rec.get(1).ok_or_else(bad)? {
        "mode" => Some(Label::Mode(num(2)?)),
        "interpolation" => Some(Label::Interpolation(num(2)?, num(3)?)),
        "invalid" => Some(Label::Invalid),
        "failed" => None,
        _ => return Err(bad()),
    };
    Ok(TrajRow {
        id: rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
        label,
        visited: rec.get(4) == Some("1"),
        x: rec.iter().skip(5).map(|s| s.parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?,
    })
}

fn read_log(path: &Path) -> Result<Vec<TrajRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path)?;
    r.records().map(|rec| parse_row(&rec?)).collect()
}

/// Runs `sampler` over all trajectory ids, appending classified terminal
/// samples to `traj_<name>.csv` block by block. Existing rows are kept and
/// the run resumes after them. Returns None when `id_range` stopped early.
#[allow(clippy::too_many_arguments)]
pub fn run_logged<S: ScoreSource>(
    bundle: &mut ResultBundle,
    cfg: &ExperimentConfig,
    name: &str,
    gmm: &GaussianMixture,
    sched: &NoiseSchedule,
    source: &S,
    sampler: &SamplerConfig,
    visits: Option<(f64, usize)>,
    exec: Exec,
) -> Result<Option<Vec<TrajRow>>> {
    let path = bundle.dir.join(format!("traj_{name}.csv"));
    let done = read_log(&path)?.len() as u64;
    let n = cfg.n_trajectories;
    let stop = cfg.id_range.map_or(n, |r| r[1]).min(n);
    let d = gmm.dim();
    let file = fs::OpenOptions::new().create(true).append(true).open(&path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if done == 0 {
        let mut h: Vec<String> = ["id", "label", "i", "j", "visited"].iter().map(|s| s.to_string()).collect();
        h.extend((0..d).map(|k| format!("x{k}")));
        w.write_record(&h)?;
        w.flush()?;
    }
    let plan = Plan::from_config(sampler)?;
    let run = BatchRun { source, sched, plan: &plan, seed: sampler.seed, exec };
    let cls = Classifier::new(gmm);
    let mut start = done;
    while start < stop {
        let end = (start + LOG_BLOCK).min(stop);
        let (finals, failed, visited) = match visits {
            Some((theta, t3)) => {
                let obs = MidpointVisits { gmm, sched, theta, t3 };
                let chunks = run.run(start..end, &Init::StandardNormal, &obs);
                let v: Vec<bool> = chunks.iter().flat_map(|c| c.acc.clone()).collect();
                let f: Vec<u64> = chunks.iter().flat_map(|c| c.failures.iter().map(|f| f.traj)).collect();
                (chunks.into_iter().flat_map(|c| c.finals).collect::<Vec<f64>>(), f, v)
            }
            None => {
                let (x, f) = run.finals(start..end, &Init::StandardNormal);
                (x, f.iter().map(|f| f.traj).collect(), vec![false; (end - start) as usize])
            }
        };
        for (k, x) in finals.chunks(d).enumerate() {
            let id = start + k as u64;
            let label = (!failed.contains(&id)).then(|| cls.classify(x));
            let mut rec: Vec<String> = vec![id.to_string()];
            rec.extend(label_fields(label));
            rec.push(if visited[k] { "1".into() } else { "0".into() });
            rec.extend(x.iter().map(|v| fmt_f64(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        start = end;
    }
    drop(w);
    if !bundle.tables.contains(&path) {
        bundle.tables.push(path.clone());
    }
    let rows = read_log(&path)?;
    if (rows.len() as u64) < n {
        bundle.complete = false;
        return Ok(None);
    }
    bundle.failures += rows.iter().filter(|r| r.label.is_none()).count() as u64;
    Ok(Some(rows))
}

/// Interpolation statistics of one sampling condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub condition: String,
    /// Grid size, η, τ₃, dimension or ablated value, depending on the sweep.
    pub param: f64,
    pub counts: LabelCounts,
    pub failed: u64,
    pub rate: Proportion,
}

impl RateRow {
    pub fn from_rows(cls: &Classifier, condition: &str, param: f64, rows: &[TrajRow]) -> Self {
        let labels: Vec<Label> = rows.iter().filter_map(|r| r.label).collect();
        let counts = LabelCounts::tally(cls, &labels);
        RateRow { condition: condition.into(), param, counts, failed: rows.len() as u64 - labels.len() as u64, rate: counts.rate_valid() }
    }

    fn record(&self) -> Vec<String> {
        let c = &self.counts;
        vec![
            self.condition.clone(),
            fmt_f64(self.param),
            c.total().to_string(),
            c.mode.to_string(),
            c.interpolation.to_string(),
            c.diagonal_interpolation.to_string(),
            c.invalid.to_string(),
            self.failed.to_string(),
            fmt_f64(self.rate.rate().unwrap_or(f64::NAN)),
            fmt_f64(self.rate.se().unwrap_or(f64::NAN)),
        ]
    }
}

const RATE_HEADER: [&str; 10] = ["condition", "param", "n", "mode", "interpolation", "diagonal_interpolation", "invalid", "failed", "rate", "se"];

fn write_rates(bundle: &mut ResultBundle, name: &str, rows: &[RateRow]) -> Result<()> {
    let recs: Vec<Vec<String>> = rows.iter().map(RateRow::record).collect();
    bundle.write_table(name, &RATE_HEADER, &recs)?;
    Ok(())
}

/// Runs a list of (condition, param, gmm, sched, sampler) cases with the context source.
fn rate_sweep(ctx: &mut Ctx, cases: Vec<(String, f64, SamplerConfig)>) -> Result<Option<Vec<RateRow>>> {
    let src = source_of(&ctx.net, &ctx.gmm, &ctx.sched, ctx.cfg.score.convention);
    let s: &dyn ScoreSource = &*src;
    let cls = Classifier::new(&ctx.gmm);
    let mut out = Vec::new();
    let mut complete = true;
    for (name, param, sampler) in cases {
        match run_logged(&mut ctx.bundle, &ctx.cfg, &name, &ctx.gmm, &ctx.sched, &s, &sampler, None, ctx.exec)? {
            Some(rows) => out.push(RateRow::from_rows(&cls, &name, param, &rows)),
            None => complete = false,
        }
    }
    Ok(complete.then_some(out))
}

pub fn sample(ctx: &mut Ctx) -> Result<Option<RateRow>> {
    let sampler = ctx.sampler()?;
    let name = format!("{:?}", sampler.kind).to_lowercase();
    let Some(rows) = rate_sweep(ctx, vec![(name, sampler.grid.n_steps() as f64, sampler)])? else {
        return Ok(None);
    };
    write_rates(&mut ctx.bundle, "histogram", &rows)?;
    Ok(rows.into_iter().next())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSweep {
    pub ddpm: RateRow,
    pub ddim: Vec<RateRow>,
}

pub fn step_sweep(ctx: &mut Ctx) -> Result<Option<StepSweep>> {
    let mut cases = vec![("ddpm".to_string(), ctx.sched.t_max() as f64, ctx.ddpm())];
    for &n in &ctx.cfg.analysis.step_grids.clone() {
        cases.push((format!("ddim_{n}"), n as f64, ctx.ddim(n, 0.0)?));
    }
    let Some(mut rows) = rate_sweep(ctx, cases)? else { return Ok(None) };
    write_rates(&mut ctx.bundle, "step_sweep", &rows)?;
    let ddpm = rows.remove(0);
    ctx.bundle.curves.push(Curve::new("ddim_rate", "steps", "interpolation_rate", rows.iter().map(|r| (r.param, r.rate.rate().unwrap_or(f64::NAN))).collect()));
    let p = ddpm.rate.rate().unwrap_or(f64::NAN);
    ctx.bundle.curves.push(Curve::new("ddpm_reference", "steps", "interpolation_rate", rows.iter().map(|r| (r.param, p)).collect()));
    Ok(Some(StepSweep { ddpm, ddim: rows }))
}

pub fn eta_sweep(ctx: &mut Ctx) -> Result<Option<Vec<RateRow>>> {
    let steps = ctx.cfg.sampler.steps;
    let mut cases = Vec::new();
    for &eta in &ctx.cfg.analysis.etas.clone() {
        cases.push((format!("ddim_{steps}_eta_{eta}"), eta, ctx.ddim(steps, eta)?));
    }
    let Some(rows) = rate_sweep(ctx, cases)? else { return Ok(None) };
    write_rates(&mut ctx.bundle, "eta_sweep", &rows)?;
    ctx.bundle.curves.push(Curve::new("eta_rate", "eta", "interpolation_rate", rows.iter().map(|r| (r.param, r.rate.rate().unwrap_or(f64::NAN))).collect()));
    Ok(Some(rows))
}

pub fn tau3_ablation(ctx: &mut Ctx) -> Result<Option<Vec<RateRow>>> {
    let steps = ctx.cfg.sampler.steps;
    let grid = ctx.cfg.sampler.ddim_grid(ctx.sched.t_max(), steps)?;
    let mut cases = vec![("ddpm".to_string(), 0.0, ctx.ddpm()), (format!("ddim_{steps}"), 0.0, ctx.ddim(steps, 0.0)?)];
    for &tau3 in &ctx.cfg.analysis.tau3_values.clone() {
        for &z in &ctx.cfg.analysis.z_values.clone() {
            cases.push((format!("hybrid_tau3_{tau3}_z_{z}"), tau3 as f64, SamplerConfig::hybrid(grid.clone(), tau3, z, ctx.cfg.seed)));
        }
    }
    let Some(rows) = rate_sweep(ctx, cases)? else { return Ok(None) };
    write_rates(&mut ctx.bundle, "tau3_ablation", &rows)?;
    for &z in &ctx.cfg.analysis.z_values {
        let suffix = format!("_z_{z}");
        let pts = rows.iter().filter(|r| r.condition.ends_with(&suffix)).map(|r| (r.param, r.rate.rate().unwrap_or(f64::NAN))).collect();
        ctx.bundle.curves.push(Curve::new(format!("hybrid_z{z}"), "tau3", "interpolation_rate", pts));
    }
    Ok(Some(rows))
}

/// Exact-score rates for modified targets or schedules.
fn variant_rates(ctx: &mut Ctx, variants: Vec<(String, f64, GridSpec, ScheduleSpec)>) -> Result<Option<Vec<(RateRow, Option<usize>)>>> {
    let mut out = Vec::new();
    let mut complete = true;
    for (name, param, grid, sspec) in variants {
        let gmm = build_grid(&grid)?;
        let sched = NoiseSchedule::from_spec(&sspec, gmm.sigma())?;
        let src = ExactScore::new(&gmm, &sched);
        let cls = Classifier::new(&gmm);
        let tau2 = detect_tau2(min_separation(&gmm), &sched, ctx.cfg.analysis.kappa, gmm.dim());
        let ddim = SamplerConfig::ddim(ctx.cfg.sampler.ddim_grid(sched.t_max(), ctx.cfg.sampler.steps.min(sched.t_max()))?, 0.0, ctx.cfg.seed);
        for (tag, sampler) in [("ddpm", SamplerConfig::ddpm(sched.t_max(), ctx.cfg.seed)), ("ddim", ddim)] {
            let cond = format!("{name}_{tag}");
            match run_logged(&mut ctx.bundle, &ctx.cfg, &cond, &gmm, &sched, &src, &sampler, None, ctx.exec)? {
                Some(rows) => out.push((RateRow::from_rows(&cls, &cond, param, &rows), tau2)),
                None => complete = false,
            }
        }
    }
    Ok(complete.then_some(out))
}

fn write_variants(ctx: &mut Ctx, name: &str, rows: &[(RateRow, Option<usize>)]) -> Result<()> {
    let mut header = RATE_HEADER.to_vec();
    header.push("tau2");
    let recs: Vec<Vec<String>> = rows
        .iter()
        .map(|(r, t2)| {
            let mut rec = r.record();
            rec.push(t2.map_or(String::new(), |t| t.to_string()));
            rec
        })
        .collect();
    ctx.bundle.write_table(name, &header, &recs)?;
    Ok(())
}

pub fn dim_sweep(ctx: &mut Ctx) -> Result<Option<Vec<(RateRow, Option<usize>)>>> {
    let base = ctx.cfg.mixture;
    let variants = ctx
        .cfg
        .analysis
        .dims
        .iter()
        .map(|&d| {
            let n_keep = base.n_keep.min(base.side.pow(d.min(20) as u32));
            (format!("dim_{d}"), d as f64, GridSpec { dim: d, n_keep, ..base }, ctx.cfg.schedule.clone())
        })
        .collect();
    let Some(rows) = variant_rates(ctx, variants)? else { return Ok(None) };
    write_variants(ctx, "dim_sweep", &rows)?;
    for tag in ["ddpm", "ddim"] {
        let pts = rows.iter().filter(|(r, _)| r.condition.ends_with(tag)).map(|(r, _)| (r.param, r.rate.rate().unwrap_or(f64::NAN))).collect();
        ctx.bundle.curves.push(Curve::new(format!("{tag}_rate_by_dim"), "dim", "interpolation_rate", pts));
    }
    Ok(Some(rows))
}

pub fn hyper_ablation(ctx: &mut Ctx) -> Result<Option<Vec<(RateRow, Option<usize>)>>> {
    let base = ctx.cfg.mixture;
    let s0 = ctx.cfg.schedule.clone();
    let h = ctx.cfg.analysis.hyper.clone();
    let mut variants = Vec::new();
    for &t in &h.t_max {
        variants.push((format!("T_{t}"), t as f64, base, ScheduleSpec { t_max: t, ..s0.clone() }));
    }
    for &s in &h.sigma {
        variants.push((format!("sigma_{s}"), s, GridSpec { sigma: s, ..base }, s0.clone()));
    }
    for &l in &h.separation {
        variants.push((format!("separation_{l}"), l, GridSpec { separation: l, ..base }, s0.clone()));
    }
    let Some(rows) = variant_rates(ctx, variants)? else { return Ok(None) };
    write_variants(ctx, "hyper_ablation", &rows)?;
    Ok(Some(rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub t3: usize,
    pub ddim: DecompositionTable,
    pub ddpm: DecompositionTable,
}

pub fn decomposition(ctx: &mut Ctx) -> Result<Option<Decomposition>> {
    let a = &ctx.cfg.analysis;
    let (theta, tau3) = (a.midpoint_theta, a.midpoint_tau3);
    let t3 = ctx.t3(tau3)?;
    let ddim = ctx.ddim(ctx.cfg.sampler.steps, 0.0)?;
    let ddpm = ctx.ddpm();
    let src = source_of(&ctx.net, &ctx.gmm, &ctx.sched, ctx.cfg.score.convention);
    let s: &dyn ScoreSource = &*src;
    let mut tables = Vec::new();
    for (name, sampler) in [("ddim", ddim), ("ddpm", ddpm)] {
        let Some(rows) = run_logged(&mut ctx.bundle, &ctx.cfg, &format!("decomp_{name}"), &ctx.gmm, &ctx.sched, &s, &sampler, Some((theta, t3)), ctx.exec)? else {
            return Ok(None);
        };
        let labels: Vec<Label> = rows.iter().map(|r| r.label.unwrap_or(Label::Invalid)).collect();
        let visited: Vec<bool> = rows.iter().map(|r| r.visited).collect();
        tables.push((name, midpoint_event_decomposition(&labels, &visited)));
    }
    let recs: Vec<Vec<String>> = tables
        .iter()
        .map(|(n, t)| {
            let r = |p: Proportion| fmt_f64(p.rate().unwrap_or(f64::NAN));
            vec![n.to_string(), t.n.to_string(), t.invalid.to_string(), r(t.p_h()), r(t.p_m()), r(t.p_h_given_m()), r(t.p_h_given_not_m())]
        })
        .collect();
    ctx.bundle.write_table("decomposition", &["sampler", "n_valid", "invalid", "p_h", "p_m", "p_h_given_m", "p_h_given_not_m"], &recs)?;
    Ok(Some(Decomposition { t3, ddim: tables[0].1, ddpm: tables[1].1 }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRun {
    pub sampler: String,
    pub series: TubeSeries,
    pub fit: ConvergenceFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub eps: f64,
    /// ε/√ϖ, the level the rescaled distance is compared against.
    pub eps_rescaled: f64,
    pub runs: Vec<ConvergenceRun>,
}

pub fn convergence(ctx: &mut Ctx) -> Result<Convergence> {
    let eps = epsilon_from_kappa(ctx.gmm.n_modes(), ctx.cfg.analysis.kappa);
    let src = source_of(&ctx.net, &ctx.gmm, &ctx.sched, ctx.cfg.score.convention);
    let s: &dyn ScoreSource = &*src;
    let mut runs = Vec::new();
    for (name, sampler) in [("ddpm", ctx.ddpm()), ("ddim", ctx.ddim(ctx.cfg.sampler.steps, 0.0)?)] {
        let plan = Plan::from_config(&sampler)?;
        let run = BatchRun { source: &s, sched: &ctx.sched, plan: &plan, seed: ctx.cfg.seed, exec: ctx.exec };
        let obs = TubeObserver { gmm: &ctx.gmm, sched: &ctx.sched, eps };
        let chunks = run.run(0..ctx.cfg.n_trajectories, &Init::StandardNormal, &obs);
        ctx.bundle.failures += chunks.iter().map(|c| c.failures.len() as u64).sum::<u64>();
        let series = TubeSeries::reduce(&chunks, &plan.times(), &ctx.sched);
        let fit = fit_tube_convergence(&series.u, &series.mean);
        runs.push(ConvergenceRun { sampler: name.into(), series, fit });
    }
    for r in &runs {
        let recs: Vec<Vec<String>> = (0..r.series.times.len())
            .map(|k| vec![r.series.times[k].to_string(), fmt_f64(r.series.u[k]), fmt_f64(r.series.mean[k]), fmt_f64(r.series.ci_half[k])])
            .collect();
        ctx.bundle.write_table(&format!("tube_{}", r.sampler), &["t", "u", "mean_d", "ci_half"], &recs)?;
        let s = &r.series;
        ctx.bundle.curves.push(Curve::new(format!("{}_mean_d", r.sampler), "u", "mean_d", s.u.iter().copied().zip(s.mean.iter().copied()).collect()));
        ctx.bundle.curves.push(Curve::new(format!("{}_ci_half", r.sampler), "u", "ci_half", s.u.iter().copied().zip(s.ci_half.iter().copied()).collect()));
    }
    let recs: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            let o = |v: Option<f64>| v.map_or(String::new(), fmt_f64);
            vec![r.sampler.clone(), o(r.fit.slope), o(r.fit.intercept), fmt_f64(r.fit.plateau), r.fit.n_points.to_string()]
        })
        .collect();
    ctx.bundle.write_table("tube_fit", &["sampler", "slope", "intercept", "plateau", "n_points"], &recs)?;
    Ok(Convergence { eps, eps_rescaled: eps / (ctx.gmm.dim() as f64).sqrt(), runs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaRow {
    pub kappa: f64,
    pub tau1_ddpm: Option<f64>,
    pub tau1_ddpm_frac: f64,
    pub tau1_ddim: Option<f64>,
    pub tau1_ddim_frac: f64,
    pub tau2: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaSweep {
    pub rows: Vec<KappaRow>,
    /// The same quantities at `analysis.kappa`.
    pub reference: KappaRow,
}

pub fn kappa_sweep(ctx: &mut Ctx) -> Result<KappaSweep> {
    let kappas = ctx.cfg.analysis.kappa_grid.values();
    let src = source_of(&ctx.net, &ctx.gmm, &ctx.sched, ctx.cfg.score.convention);
    let s: &dyn ScoreSource = &*src;
    let mut tables = Vec::new();
    for sampler in [ctx.ddpm(), ctx.ddim(ctx.cfg.sampler.steps, 0.0)?] {
        let plan = Plan::from_config(&sampler)?;
        let run = BatchRun { source: &s, sched: &ctx.sched, plan: &plan, seed: ctx.cfg.seed, exec: ctx.exec };
        let obs = DominanceObserver { gmm: &ctx.gmm, sched: &ctx.sched };
        let mut suffix = Vec::new();
        // blockwise so only suffix minima are held for finished trajectories
        let n = ctx.cfg.n_trajectories;
        for start in (0..n).step_by(LOG_BLOCK as usize) {
            for c in run.run(start..(start + LOG_BLOCK).min(n), &Init::StandardNormal, &obs) {
                ctx.bundle.failures += c.failures.len() as u64;
                suffix.extend(c.acc.into_iter().map(|r| suffix_minima(&r)));
            }
        }
        tables.push(Tau1Table { times: plan.times(), suffix });
    }
    let ell = min_separation(&ctx.gmm);
    let row = |k: f64| {
        let (a, af) = tables[0].mean_tau1(k);
        let (b, bf) = tables[1].mean_tau1(k);
        KappaRow { kappa: k, tau1_ddpm: a, tau1_ddpm_frac: af, tau1_ddim: b, tau1_ddim_frac: bf, tau2: detect_tau2(ell, &ctx.sched, k, ctx.gmm.dim()) }
    };
    let rows: Vec<KappaRow> = kappas.iter().map(|&k| row(k)).collect();
    let reference = row(ctx.cfg.analysis.kappa);
    let o = |v: Option<f64>| v.map_or(String::new(), fmt_f64);
    let rec = |r: &KappaRow| vec![fmt_f64(r.kappa), o(r.tau1_ddpm), fmt_f64(r.tau1_ddpm_frac), o(r.tau1_ddim), fmt_f64(r.tau1_ddim_frac), r.tau2.map_or(String::new(), |t| t.to_string())];
    let header = ["kappa", "tau1_ddpm", "tau1_ddpm_frac", "tau1_ddim", "tau1_ddim_frac", "tau2"];
    ctx.bundle.write_table("kappa_sweep", &header, &rows.iter().map(rec).collect::<Vec<_>>())?;
    ctx.bundle.write_table("kappa_reference", &header, &[rec(&reference)])?;
    for (name, f) in [("tau1_ddpm", 0usize), ("tau1_ddim", 1)] {
        let pts = rows.iter().filter_map(|r| if f == 0 { r.tau1_ddpm } else { r.tau1_ddim }.map(|v| (r.kappa, v))).collect();
        ctx.bundle.curves.push(Curve::new(name, "kappa", "tau1", pts));
    }
    ctx.bundle.curves.push(Curve::new("tau2", "kappa", "tau2", rows.iter().filter_map(|r| r.tau2.map(|t| (r.kappa, t as f64))).collect()));
    Ok(KappaSweep { rows, reference })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapRun {
    pub sampler: String,
    pub result: TrapResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trap {
    pub t3: usize,
    pub spec: TrappingSpec,
    pub runs: Vec<TrapRun>,
    pub spectra: Vec<SpectrumRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub pair: (usize, usize),
    pub t: usize,
    pub spectrum: MidpointSpectrum,
}

/// Midpoint Jacobian spectra of every adjacent pair for t ≤ τ₂.
pub fn midpoint_spectra(gmm: &GaussianMixture, sched: &NoiseSchedule, kappa: f64) -> Vec<SpectrumRow> {
    let Some(tau2) = detect_tau2(min_separation(gmm), sched, kappa, gmm.dim()) else { return Vec::new() };
    let mut out = Vec::new();
    for (i, j) in adjacent_pairs(gmm) {
        let seg = SegmentFrame::new(gmm, i, j).expect("distinct modes");
        for t in 0..=tau2 {
            out.push(SpectrumRow { pair: (i, j), t, spectrum: midpoint_eigenvalues(gmm, &seg, sched.sigma_tilde_sq(t)) });
        }
    }
    out
}

pub fn trap(ctx: &mut Ctx) -> Result<Trap> {
    let a = ctx.cfg.analysis.clone();
    let t3 = ctx.t3(a.trap_tau3)?;
    let grid = ctx.cfg.sampler.ddim_grid(ctx.sched.t_max(), ctx.cfg.sampler.steps)?;
    let pairs = adjacent_pairs(&ctx.gmm);
    let ell = min_separation(&ctx.gmm);
    let spec = TrappingSpec::new(ell, &ctx.sched, a.trap_tau3, t3, a.trap_theta)?;
    let mut samplers = vec![("ddim".to_string(), SamplerConfig::ddim(grid.clone(), 0.0, ctx.cfg.seed)), ("ddpm".to_string(), ctx.ddpm())];
    for &z in &a.z_values {
        samplers.push((format!("hybrid_z{z}"), SamplerConfig::hybrid(grid.clone(), a.trap_tau3, z, ctx.cfg.seed)));
    }
    let src = source_of(&ctx.net, &ctx.gmm, &ctx.sched, ctx.cfg.score.convention);
    let s: &dyn ScoreSource = &*src;
    let mut runs = Vec::new();
    for (name, sampler) in samplers {
        let result = trapping_experiment(&ctx.gmm, &ctx.sched, &s, &sampler, t3, &pairs, a.trap_theta, a.trap_per_pair, ctx.exec)?;
        ctx.bundle.failures += result.failures as u64;
        runs.push(TrapRun { sampler: name, result });
    }
    let mut recs = Vec::new();
    for r in &runs {
        let offs = trap_offsets(a.trap_theta, a.trap_per_pair);
        let mut pts = Vec::new();
        for (k, &off) in offs.iter().enumerate() {
            let hits = r.result.outcomes.iter().skip(k).step_by(a.trap_per_pair).filter(|o| o.stuck).count();
            let rate = hits as f64 / pairs.len() as f64;
            recs.push(vec![r.sampler.clone(), fmt_f64(off), hits.to_string(), pairs.len().to_string(), fmt_f64(rate)]);
            pts.push((off, rate));
        }
        pts.sort_by(|p, q| p.0.total_cmp(&q.0));
        ctx.bundle.curves.push(Curve::new(format!("trap_{}", r.sampler), "offset_over_ell_t", "stuck_rate", pts));
    }
    ctx.bundle.write_table("trap_offsets", &["sampler", "offset", "stuck", "pairs", "rate"], &recs)?;
    let summary: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            let w = r.result.stuck_within(spec.entry_window);
            vec![
                r.sampler.clone(),
                fmt_f64(r.result.stuck.rate().unwrap_or(f64::NAN)),
                fmt_f64(r.result.se_pairs),
                fmt_f64(w.rate().unwrap_or(f64::NAN)),
                w.n.to_string(),
                r.result.failures.to_string(),
            ]
        })
        .collect();
    ctx.bundle.write_table("trap_summary", &["sampler", "stuck_rate", "se_pairs", "stuck_rate_entry_window", "n_entry_window", "failures"], &summary)?;
    let spectra = midpoint_spectra(&ctx.gmm, &ctx.sched, a.kappa);
    let recs: Vec<Vec<String>> = spectra
        .iter()
        .map(|r| {
            let mut v = vec![r.pair.0.to_string(), r.pair.1.to_string(), r.t.to_string(), fmt_f64(r.spectrum.analytic)];
            v.extend(r.spectrum.eigenvalues.iter().map(|e| fmt_f64(*e)));
            v
        })
        .collect();
    let mut header = vec!["i".to_string(), "j".into(), "t".into(), "analytic".into()];
    header.extend((0..ctx.gmm.dim()).map(|k| format!("eig{k}")));
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    ctx.bundle.write_table("midpoint_spectra", &h, &recs)?;
    Ok(Trap { t3, spec, runs, spectra })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub pair: (usize, usize),
    pub theta: f64,
    pub inputs: DdpmBoundInputs,
    pub bound: f64,
    pub empirical: Proportion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub rows: Vec<BoundRow>,
    pub brownian: Vec<ConfinementCheck>,
}

pub fn bound_check(ctx: &mut Ctx) -> Result<BoundCheck> {
    let a = ctx.cfg.analysis.clone();
    let mut rows = Vec::new();
    for (i, j) in adjacent_pairs(&ctx.gmm) {
        let seg = SegmentFrame::new(&ctx.gmm, i, j)?;
        let terminals = bisector_terminals(&ctx.gmm, &ctx.sched, &seg, a.bound.t_hi, 0.0, a.bound.z_frac * seg.ell, a.bound_paths, ctx.cfg.seed, ctx.exec);
        for &theta in &a.bound_thetas {
            let cfg = DriftBoundConfig { theta, seed: ctx.cfg.seed, ..a.bound };
            let inputs = estimate_drift_bounds(&ctx.gmm, &ctx.sched, &seg, &cfg);
            let inside = terminals.iter().filter(|v| v.abs() <= inputs.theta).count() as u64;
            rows.push(BoundRow { pair: (i, j), theta, bound: ddpm_terminal_bound(&inputs), inputs, empirical: Proportion::new(inside, terminals.len() as u64) });
        }
    }
    let recs: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.pair.0.to_string(),
                r.pair.1.to_string(),
                fmt_f64(r.theta),
                fmt_f64(r.inputs.lambda_rep),
                fmt_f64(r.inputs.k_integral()),
                fmt_f64(r.inputs.eta_max),
                fmt_f64(r.inputs.eta_integral),
                fmt_f64(r.bound),
                fmt_f64(r.empirical.rate().unwrap_or(f64::NAN)),
                fmt_f64(r.empirical.se().unwrap_or(f64::NAN)),
            ]
        })
        .collect();
    ctx.bundle.write_table("bound_check", &["i", "j", "theta", "lambda_rep", "k_integral", "eta_max", "eta_integral", "bound", "empirical", "se"], &recs)?;
    // Brownian confinement at V/a² ∈ {0.5, 1, 2, 4}
    let brownian: Vec<ConfinementCheck> = [0.5, 1.0, 2.0, 4.0]
        .iter()
        .map(|&v| brownian_confinement_check(v, 1.0, ctx.cfg.n_trajectories, 10_000, ctx.cfg.seed, ctx.exec))
        .collect();
    let recs: Vec<Vec<String>> = [0.5, 1.0, 2.0, 4.0]
        .iter()
        .zip(&brownian)
        .map(|(v, c)| vec![fmt_f64(*v), fmt_f64(c.empirical.rate().unwrap_or(f64::NAN)), fmt_f64(c.empirical.se().unwrap_or(f64::NAN)), fmt_f64(c.bound)])
        .collect();
    ctx.bundle.write_table("brownian_confinement", &["v_over_a2", "empirical", "se", "bound"], &recs)?;
    Ok(BoundCheck { rows, brownian })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagonal {
    pub ddpm: DiagonalReport,
    pub ddim: DiagonalReport,
}

pub fn diagonal(ctx: &mut Ctx) -> Result<Diagonal> {
    let obs = DiagonalObserver::new(&ctx.gmm, &ctx.sched, ctx.cfg.analysis.kappa);
    let src = source_of(&ctx.net, &ctx.gmm, &ctx.sched, ctx.cfg.score.convention);
    let s: &dyn ScoreSource = &*src;
    let mut reps = Vec::new();
    for sampler in [ctx.ddpm(), ctx.ddim(ctx.cfg.sampler.steps, 0.0)?] {
        let plan = Plan::from_config(&sampler)?;
        let run = BatchRun { source: &s, sched: &ctx.sched, plan: &plan, seed: ctx.cfg.seed, exec: ctx.exec };
        let mut rep = DiagonalReport::default();
        for c in run.run(0..ctx.cfg.n_trajectories, &Init::StandardNormal, &obs) {
            ctx.bundle.failures += c.failures.len() as u64;
            rep.merge(&c.acc);
        }
        reps.push(rep);
    }
    let recs: Vec<Vec<String>> = ["ddpm", "ddim"]
        .iter()
        .zip(&reps)
        .map(|(n, r)| vec![n.to_string(), r.states_checked.to_string(), r.diagonal_dominant.to_string(), fmt_f64(r.max_min_resp), r.violations.to_string()])
        .collect();
    ctx.bundle.write_table("diagonal", &["sampler", "states_checked", "diagonal_dominant", "max_min_resp", "violations"], &recs)?;
    Ok(Diagonal { ddpm: reps[0], ddim: reps[1] })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub pair: (usize, usize),
    pub spec: ScoreErrorSpec,
    pub report: PerturbationReport,
    pub saddles: Vec<((usize, usize), Option<SaddleComparison>)>,
    pub escape: EscapeCheck,
}

/// Error-field analysis on the first adjacent pair at `analysis.probe_t`.
/// With a learned score ψ is its deviation from the exact score; otherwise a
/// constant field of size `psi_rho` along the pair is injected.
pub fn perturbation(ctx: &mut Ctx) -> Result<Perturbation> {
    let a = ctx.cfg.analysis.clone();
    let t = a.probe_t;
    let pairs = adjacent_pairs(&ctx.gmm);
    let (i, j) = pairs[0];
    let seg = SegmentFrame::new(&ctx.gmm, i, j)?;
    let points = segment_points(&seg, &ctx.sched, t, 201);
    let exact = ExactScore::new(&ctx.gmm, &ctx.sched);
    let injected = PerturbedScore { base: exact, sched: &ctx.sched, psi: ErrorField::Constant(seg.u.iter().map(|u| a.psi_rho * u).collect()) };
    let learned = ctx.net.as_ref().map(|net| LearnedScore { net, sched: &ctx.sched, convention: ctx.cfg.score.convention });
    let src: &dyn ScoreSource = match &learned {
        Some(l) => l,
        None => &injected,
    };
    let (gmm, sched) = (&ctx.gmm, &ctx.sched);
    let psi_t = |tt: usize| {
        move |x: &[f64]| {
            let e = gmm.score_exact(sched, x, tt);
            src.score(x, tt).iter().zip(&e).map(|(p, q)| p - q).collect::<Vec<f64>>()
        }
    };
    let psi = psi_t(t);
    let spec = measure_error_field(&psi, sched, t, &points);
    let report = perturbation_analysis(&seg, sched, t, &psi, &spec);
    let eps = epsilon_from_kappa(gmm.n_modes(), a.kappa);
    let saddles: Vec<_> = pairs
        .iter()
        .map(|&(p, q)| {
            let sg = SegmentFrame::new(gmm, p, q).expect("distinct modes");
            ((p, q), saddle_displacement(gmm, &sg, sched.sigma_tilde_sq(t), eps))
        })
        .collect();
    let span: Vec<usize> = (a.bound.t_lo..=a.bound.t_hi).collect();
    let rho = |tt: usize| measure_error_field(&psi_t(tt), sched, tt, &segment_points(&seg, sched, tt, 51)).rho;
    let lam = estimate_drift_bounds(gmm, sched, &seg, &DriftBoundConfig { seed: ctx.cfg.seed, ..a.bound }).lambda_rep;
    let escape = escape_condition(sched, &span, &rho, lam, a.bound.theta * seg.ell);
    let o = |v: Option<f64>| v.map_or(String::new(), fmt_f64);
    let recs = vec![vec![
        i.to_string(),
        j.to_string(),
        t.to_string(),
        fmt_f64(report.lambda_t),
        fmt_f64(spec.rho),
        fmt_f64(spec.rho_bar),
        fmt_f64(spec.lipschitz),
        o(report.shift),
        fmt_f64(report.shift_bound),
        fmt_f64(report.directional),
        o(report.slope_perturbed),
        fmt_f64(report.slope_predicted),
        report.stabilized.to_string(),
        fmt_f64(escape.r_a_max),
        escape.holds.to_string(),
    ]];
    ctx.bundle.write_table(
        "perturbation",
        &["i", "j", "t", "lambda_t", "rho", "rho_bar", "lipschitz", "shift", "shift_bound", "directional", "slope_perturbed", "slope_predicted", "stabilized", "r_a_max", "escape_holds"],
        &recs,
    )?;
    let recs: Vec<Vec<String>> = saddles
        .iter()
        .map(|((p, q), c)| match c {
            Some(c) => vec![p.to_string(), q.to_string(), fmt_f64(c.two_mode.xi), fmt_f64(c.full.xi), fmt_f64(c.displacement), fmt_f64(c.m), fmt_f64(c.bound)],
            None => vec![p.to_string(), q.to_string(), String::new(), String::new(), String::new(), String::new(), String::new()],
        })
        .collect();
    ctx.bundle.write_table("saddle_displacement", &["i", "j", "two_mode_xi", "full_xi", "displacement", "m", "bound"], &recs)?;
    Ok(Perturbation { pair: (i, j), spec, report, saddles, escape })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub epochs: usize,
    pub median_relative_error: Option<f64>,
}

pub fn train(ctx: &mut Ctx) -> Result<TrainSummary> {
    let net = ctx.train()?;
    let loss_path = ctx.bundle.dir.join("train_loss.csv");
    ctx.bundle.tables.push(loss_path);
    let sched = &ctx.sched;
    let src = LearnedScore { net: &net, sched, convention: ctx.cfg.score.convention };
    let tau2 = detect_tau2(min_separation(&ctx.gmm), sched, ctx.cfg.analysis.kappa, ctx.gmm.dim()).unwrap_or(0).max(1);
    let mut errs = Vec::new();
    for (i, j) in adjacent_pairs(&ctx.gmm) {
        let seg = SegmentFrame::new(&ctx.gmm, i, j)?;
        for t in [1, tau2.div_ceil(2), tau2] {
            errs.extend(relative_score_errors_at(&src, &ctx.gmm, sched, &seg, t));
        }
    }
    errs.sort_by(f64::total_cmp);
    let median = (!errs.is_empty()).then(|| errs[errs.len() / 2]);
    let losses = fs::read_to_string(ctx.bundle.dir.join("train_loss.csv"))?;
    let pts: Vec<(f64, f64)> = losses
        .lines()
        .skip(2)
        .filter_map(|l| l.split_once(',').and_then(|(e, v)| Some((e.parse().ok()?, v.parse().ok()?))))
        .collect();
    ctx.bundle.curves.push(Curve::new("train_loss", "epoch", "loss", pts));
    ctx.net = Some(net);
    Ok(TrainSummary { checkpoint: ctx.checkpoint_path(), epochs: ctx.cfg.score.train.epochs, median_relative_error: median })
}

/// Relative score errors at tube points √ᾱ_t y(ξ) along a segment.
pub fn relative_score_errors_at(src: &dyn ScoreSource, gmm: &GaussianMixture, sched: &NoiseSchedule, seg: &SegmentFrame, t: usize) -> Vec<f64> {
    crate::scorenet::relative_score_errors(src, gmm, sched, t, &segment_points(seg, sched, t, 21))
}

/// Validates `cfg`, runs its experiment into `dir` and writes the summary.
pub fn run_in(cfg: &ExperimentConfig, dir: &Path) -> Result<ResultBundle> {
    let mut ctx = Ctx::new(cfg, dir)?;
    let summary = match cfg.experiment {
        ExperimentKind::Sample => serde_json::to_value(sample(&mut ctx)?)?,
        ExperimentKind::StepSweep => serde_json::to_value(step_sweep(&mut ctx)?)?,
        ExperimentKind::KappaSweep => serde_json::to_value(kappa_sweep(&mut ctx)?)?,
        ExperimentKind::Convergence => {
            let c = convergence(&mut ctx)?;
            json!({ "eps": c.eps, "eps_rescaled": c.eps_rescaled, "fits": c.runs.iter().map(|r| json!({"sampler": r.sampler, "fit": r.fit})).collect::<Vec<_>>() })
        }
        ExperimentKind::Trap => {
            let t = trap(&mut ctx)?;
            json!({
                "t3": t.t3,
                "spec": t.spec,
                "samplers": t.runs.iter().map(|r| json!({
                    "sampler": r.sampler,
                    "stuck": r.result.stuck,
                    "se_pairs": r.result.se_pairs,
                    "stuck_entry_window": r.result.stuck_within(t.spec.entry_window),
                })).collect::<Vec<_>>(),
            })
        }
        ExperimentKind::EtaSweep => serde_json::to_value(eta_sweep(&mut ctx)?)?,
        ExperimentKind::Tau3Ablation => serde_json::to_value(tau3_ablation(&mut ctx)?)?,
        ExperimentKind::BoundCheck => serde_json::to_value(bound_check(&mut ctx)?)?,
        ExperimentKind::Decomposition => serde_json::to_value(decomposition(&mut ctx)?)?,
        ExperimentKind::Diagonal => serde_json::to_value(diagonal(&mut ctx)?)?,
        ExperimentKind::Perturbation => serde_json::to_value(perturbation(&mut ctx)?)?,
        ExperimentKind::Train => serde_json::to_value(train(&mut ctx)?)?,
        ExperimentKind::DimSweep => serde_json::to_value(dim_sweep(&mut ctx)?)?,
        ExperimentKind::HyperAblation => serde_json::to_value(hyper_ablation(&mut ctx)?)?,
    };
    ctx.bundle.finish(summary)?;
    Ok(ctx.bundle)
}
