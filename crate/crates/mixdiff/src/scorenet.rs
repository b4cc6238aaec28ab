//! Small fully-connected noise predictor trained by denoising score matching.
//!
//! Parameters live in one flat vector (W1, b1, W2, b2, W3, b3) so the
//! optimiser and the checkpoint format are both plain slices.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::analysis::{measure_error_field, ScoreErrorSpec};
use crate::error::{Error, Result};
use crate::mixture::GaussianMixture;
use crate::rng::{Domain, NoiseStream};
use crate::samplers::{ScoreSource, SourceKind};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    fn deriv(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }
}

/// Sampling law of the training time index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeWeighting {
    /// t uniform on 1..=T.
    Uniform,
    /// t = ⌈T U²⌉, denser near the data end.
    Quadratic,
}

impl TimeWeighting {
    fn draw<R: Rng>(self, rng: &mut R, t_max: usize) -> usize {
        let u: f64 = rng.random();
        let t = match self {
            TimeWeighting::Uniform => (u * t_max as f64).floor() as usize + 1,
            TimeWeighting::Quadratic => (u * u * t_max as f64).ceil() as usize,
        };
        t.clamp(1, t_max)
    }
}

/// How ε̂ becomes a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreConvention {
    /// s = −ε̂/√(1−ᾱ_t), the denoising-matching optimum.
    NoiseStd,
    /// s = −ε̂/σ_t with σ_t² = σ²ᾱ_t + 1 − ᾱ_t.
    MarginalStd,
}

impl ScoreConvention {
    pub fn divisor(self, sched: &NoiseSchedule, t: usize) -> f64 {
        let d = match self {
            ScoreConvention::NoiseStd => (1.0 - sched.alpha_bar(t)).sqrt(),
            ScoreConvention::MarginalStd => sched.sigma_t_sq(t).sqrt(),
        };
        d.max(f64::MIN_POSITIVE)
    }

    pub fn score_from_eps(self, sched: &NoiseSchedule, t: usize, eps: f64) -> f64 {
        -eps / self.divisor(sched, t)
    }

    pub fn eps_from_score(self, sched: &NoiseSchedule, t: usize, score: f64) -> f64 {
        -score * self.divisor(sched, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub dim: usize,
    pub hidden: usize,
    /// Sin/cos pairs of log-SNR appended to the time features.
    pub fourier: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn new(dim: usize, hidden: usize, activation: Activation) -> Self {
        Architecture { dim, hidden, fourier: if dim > 2 { 4 } else { 0 }, activation }
    }

    pub fn n_features(&self) -> usize {
        self.dim + 3 + 2 * self.fourier
    }

    pub fn n_params(&self) -> usize {
        let (f, h, d) = (self.n_features(), self.hidden, self.dim);
        f * h + h + h * h + h + h * d + d
    }

    /// (offset, rows, cols) of W1, b1, W2, b2, W3, b3.
    fn layout(&self) -> [(usize, usize, usize); 6] {
        let (f, h, d) = (self.n_features(), self.hidden, self.dim);
        let shapes = [(h, f), (h, 1), (h, h), (h, 1), (d, h), (d, 1)];
        let mut out = [(0, 0, 0); 6];
        let mut o = 0;
        for (k, &(r, c)) in shapes.iter().enumerate() {
            out[k] = (o, r, c);
            o += r * c;
        }
        out
    }
}

/// Writes the network input for state `x` at time `t` into `row`.
pub fn time_features(arch: &Architecture, sched: &NoiseSchedule, x: &[f64], t: usize, row: &mut [f64]) {
    let d = arch.dim;
    let ab = sched.alpha_bar(t);
    row[..d].copy_from_slice(x);
    row[d] = t as f64 / sched.t_max() as f64;
    row[d + 1] = ab.sqrt();
    row[d + 2] = (1.0 - ab).sqrt();
    if arch.fourier > 0 {
        let snr = (ab / (1.0 - ab).max(1e-300)).ln();
        for k in 0..arch.fourier {
            let w = f64::powi(2.0, k as i32) / 16.0;
            row[d + 3 + 2 * k] = (w * snr).sin();
            row[d + 4 + 2 * k] = (w * snr).cos();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNet {
    pub arch: Architecture,
    pub params: Vec<f64>,
}

struct Tape {
    x: Array2<f64>,
    z1: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    a2: Array2<f64>,
    y: Array2<f64>,
}

impl ScoreNet {
    /// Weights N(0, 1/fan_in), zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut params = vec![0.0; arch.n_params()];
        let mut rng = NoiseStream::new(seed, 0).rng(Domain::Train, 0);
        for (k, &(o, r, c)) in arch.layout().iter().enumerate() {
            if k % 2 == 0 {
                let sd = 1.0 / (c as f64).sqrt();
                for p in &mut params[o..o + r * c] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *p = sd * z;
                }
            }
        }
        ScoreNet { arch, params }
    }

    fn mat(&self, k: usize) -> ArrayView2<'_, f64> {
        let (o, r, c) = self.arch.layout()[k];
        ArrayView2::from_shape((r, c), &self.params[o..o + r * c]).expect("layout")
    }

    fn vecv(&self, k: usize) -> ArrayView1<'_, f64> {
        let (o, r, _) = self.arch.layout()[k];
        ArrayView1::from(&self.params[o..o + r])
    }

    fn forward_tape(&self, x: Array2<f64>) -> Tape {
        let act = self.arch.activation;
        let z1 = x.dot(&self.mat(0).t()) + self.vecv(1);
        let a1 = z1.mapv(|z| act.apply(z));
        let z2 = a1.dot(&self.mat(2).t()) + self.vecv(3);
        let a2 = z2.mapv(|z| act.apply(z));
        let y = a2.dot(&self.mat(4).t()) + self.vecv(5);
        Tape { x, z1, a1, z2, a2, y }
    }

    /// ε̂ for a batch of feature rows.
    pub fn forward(&self, features: Array2<f64>) -> Array2<f64> {
        self.forward_tape(features).y
    }

    /// Noise prediction for a row-major batch of states at one time index.
    pub fn predict_eps(&self, sched: &NoiseSchedule, xs: &[f64], t: usize) -> Array2<f64> {
        let d = self.arch.dim;
        let nf = self.arch.n_features();
        let n = xs.len() / d;
        let mut feats = Array2::zeros((n, nf));
        for (x, mut row) in xs.chunks(d).zip(feats.rows_mut()) {
            time_features(&self.arch, sched, x, t, row.as_slice_mut().expect("contiguous"));
        }
        self.forward(feats)
    }

    /// Mean squared error over all entries and its gradient in parameter order.
    pub fn loss_and_grad(&self, features: Array2<f64>, target: &Array2<f64>, grad: &mut [f64]) -> f64 {
        let act = self.arch.activation;
        let tape = self.forward_tape(features);
        let diff = &tape.y - target;
        let m = diff.len() as f64;
        let loss = diff.iter().map(|v| v * v).sum::<f64>() / m;
        let dy = diff * (2.0 / m);
        let lay = self.arch.layout();
        let mut put = |k: usize, a: &Array2<f64>| {
            let (o, r, c) = lay[k];
            grad[o..o + r * c].iter_mut().zip(a.iter()).for_each(|(g, v)| *g = *v);
        };
        put(4, &dy.t().dot(&tape.a2));
        put(5, &dy.sum_axis(Axis(0)).insert_axis(Axis(1)));
        let dz2 = dy.dot(&self.mat(4)) * tape.z2.mapv(|z| act.deriv(z));
        put(2, &dz2.t().dot(&tape.a1));
        put(3, &dz2.sum_axis(Axis(0)).insert_axis(Axis(1)));
        let dz1 = dz2.dot(&self.mat(2)) * tape.z1.mapv(|z| act.deriv(z));
        put(0, &dz1.t().dot(&tape.x));
        put(1, &dz1.sum_axis(Axis(0)).insert_axis(Axis(1)));
        loss
    }

    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> Result<()> {
        let header = serde_json::to_vec(&CheckpointHeader { arch: self.arch, n_params: self.params.len(), meta: meta.clone() })?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(ScoreNet, CheckpointMeta)> {
        let mut r = BufReader::new(File::open(path)?);
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let h: CheckpointHeader = serde_json::from_slice(&header)?;
        if h.n_params != h.arch.n_params() {
            return Err(Error::config("checkpoint.n_params", "does not match architecture"));
        }
        let mut params = vec![0.0; h.n_params];
        let mut buf = [0u8; 8];
        for p in params.iter_mut() {
            r.read_exact(&mut buf)?;
            *p = f64::from_le_bytes(buf);
        }
        Ok((ScoreNet { arch: h.arch, params }, h.meta))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: usize,
    pub loss: f64,
    pub t_max: usize,
    pub time_weighting: TimeWeighting,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    arch: Architecture,
    n_params: usize,
    meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_data: usize,
    pub batch: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    pub hidden: usize,
    pub activation: Activation,
    pub time_weighting: TimeWeighting,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_data: 100_000,
            batch: 1000,
            epochs: 2000,
            lr_start: 1e-3,
            lr_end: 1e-5,
            seed: 0,
            hidden: 64,
            activation: Activation::Silu,
            time_weighting: TimeWeighting::Uniform,
        }
    }
}

impl TrainConfig {
    /// Published protocol: 10⁴ epochs at batch 10⁴, lr 1e-4 → 1e-5.
    pub fn full_scale() -> Self {
        TrainConfig { batch: 10_000, epochs: 10_000, lr_start: 1e-4, ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_data == 0 {
            return Err(Error::config("train.n_data", "must be positive"));
        }
        if self.batch == 0 || self.batch > self.n_data {
            return Err(Error::config("train.batch", "must be in 1..=n_data"));
        }
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be positive"));
        }
        if !(self.lr_end > 0.0 && self.lr_end <= self.lr_start && self.lr_start.is_finite()) {
            return Err(Error::config("train.lr_end", "need 0 < lr_end <= lr_start"));
        }
        if self.hidden == 0 {
            return Err(Error::config("train.hidden", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub net: ScoreNet,
    pub initial_loss: f64,
    /// Mean batch loss per epoch.
    pub losses: Vec<f64>,
}

impl Trained {
    pub fn meta(&self, cfg: &TrainConfig, sched: &NoiseSchedule) -> CheckpointMeta {
        CheckpointMeta {
            seed: cfg.seed,
            epoch: self.losses.len(),
            loss: self.losses.last().copied().unwrap_or(self.initial_loss),
            t_max: sched.t_max(),
            time_weighting: cfg.time_weighting,
        }
    }
}

/// Training stopped on a non-finite loss; `last` holds the parameters after the last finite epoch.
#[derive(Debug, Clone)]
pub struct Diverged {
    pub epoch: usize,
    pub last: Trained,
}

impl From<Diverged> for Error {
    fn from(d: Diverged) -> Self {
        Error::Numeric { traj: 0, t: 0, what: format!("training loss diverged at epoch {}", d.epoch) }
    }
}

/// Draws `n` points from the mixture.
pub fn sample_data(gmm: &GaussianMixture, n: usize, seed: u64) -> Vec<f64> {
    let d = gmm.dim();
    let mut rng = NoiseStream::new(seed, 1).rng(Domain::Train, 0);
    let pick = WeightedIndex::new(gmm.weights()).expect("valid weights");
    let mut out = vec![0.0; n * d];
    for row in out.chunks_mut(d) {
        let k = pick.sample(&mut rng);
        for (o, m) in row.iter_mut().zip(gmm.mode(k)) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *o = m + gmm.sigma() * z;
        }
    }
    out
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    k: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.k += 1;
        let c1 = 1.0 - Self::B1.powi(self.k);
        let c2 = 1.0 - Self::B2.powi(self.k);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Noisy feature rows and noise targets for the data rows `idx`.
fn assemble(arch: &Architecture, sched: &NoiseSchedule, data: &[f64], idx: &[usize], tw: TimeWeighting, stream: &NoiseStream, step: u64) -> (Array2<f64>, Array2<f64>) {
    let d = arch.dim;
    let mut rng = stream.rng(Domain::Train, step);
    let mut feats = Array2::zeros((idx.len(), arch.n_features()));
    let mut eps = Array2::zeros((idx.len(), d));
    let mut x = vec![0.0; d];
    for (r, &i) in idx.iter().enumerate() {
        let t = tw.draw(&mut rng, sched.t_max());
        let ab = sched.alpha_bar(t);
        let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
        for k in 0..d {
            let e: f64 = StandardNormal.sample(&mut rng);
            eps[[r, k]] = e;
            x[k] = s * data[i * d + k] + n * e;
        }
        time_features(arch, sched, &x, t, feats.row_mut(r).into_slice().expect("contiguous"));
    }
    (feats, eps)
}

pub fn train_score(gmm: &GaussianMixture, sched: &NoiseSchedule, cfg: &TrainConfig) -> std::result::Result<Trained, Box<Diverged>> {
    train_score_with(gmm, sched, cfg, &mut |_, _| {})
}

/// As [`train_score`], calling `progress(epoch, loss)` after each epoch.
pub fn train_score_with(
    gmm: &GaussianMixture,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(usize, f64),
) -> std::result::Result<Trained, Box<Diverged>> {
    let arch = Architecture::new(gmm.dim(), cfg.hidden, cfg.activation);
    let mut net = ScoreNet::init(arch, cfg.seed);
    let data = sample_data(gmm, cfg.n_data, cfg.seed);
    let shuffle = NoiseStream::new(cfg.seed, 2);
    let noise = NoiseStream::new(cfg.seed, 3);
    let per_epoch = cfg.n_data / cfg.batch;
    let total = (per_epoch * cfg.epochs).max(2);
    let mut grad = vec![0.0; arch.n_params()];
    let mut adam = Adam { m: vec![0.0; arch.n_params()], v: vec![0.0; arch.n_params()], k: 0 };

    let probe: Vec<usize> = (0..cfg.batch).collect();
    let (f0, e0) = assemble(&arch, sched, &data, &probe, cfg.time_weighting, &NoiseStream::new(cfg.seed, 4), 0);
    let initial_loss = net.loss_and_grad(f0, &e0, &mut grad);

    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..cfg.n_data).collect();
    let mut step = 0u64;
    let mut last_good = net.clone();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle.rng(Domain::Train, epoch as u64));
        let mut sum = 0.0;
        for b in 0..per_epoch {
            let (f, e) = assemble(&arch, sched, &data, &order[b * cfg.batch..(b + 1) * cfg.batch], cfg.time_weighting, &noise, step);
            sum += net.loss_and_grad(f, &e, &mut grad);
            let lr = cfg.lr_start + (cfg.lr_end - cfg.lr_start) * step as f64 / (total - 1) as f64;
            adam.step(&mut net.params, &grad, lr);
            step += 1;
        }
        let loss = sum / per_epoch as f64;
        if !loss.is_finite() || net.params.iter().any(|p| !p.is_finite()) {
            return Err(Box::new(Diverged { epoch, last: Trained { net: last_good, initial_loss, losses } }));
        }
        losses.push(loss);
        last_good.params.copy_from_slice(&net.params);
        progress(epoch, loss);
    }
    Ok(Trained { net, initial_loss, losses })
}

/// Sampler-facing adapter around a trained network.
pub struct LearnedScore<'a> {
    pub net: &'a ScoreNet,
    pub sched: &'a NoiseSchedule,
    pub convention: ScoreConvention,
}

impl<'a> LearnedScore<'a> {
    pub fn new(net: &'a ScoreNet, sched: &'a NoiseSchedule) -> Self {
        LearnedScore { net, sched, convention: ScoreConvention::NoiseStd }
    }
}

impl ScoreSource for LearnedScore<'_> {
    fn dim(&self) -> usize {
        self.net.arch.dim
    }
    fn kind(&self) -> SourceKind {
        SourceKind::Learned
    }
    fn score_batch(&self, xs: &[f64], t: usize, out: &mut [f64]) {
        let eps = self.net.predict_eps(self.sched, xs, t);
        let div = self.convention.divisor(self.sched, t);
        out.iter_mut().zip(eps.iter()).for_each(|(o, e)| *o = -e / div);
    }
}

/// ψ = s − ∇log p_t measured at `points`.
pub fn score_error_field(source: &dyn ScoreSource, gmm: &GaussianMixture, sched: &NoiseSchedule, t: usize, points: &[Vec<f64>]) -> ScoreErrorSpec {
    let psi = |x: &[f64]| {
        let exact = gmm.score_exact(sched, x, t);
        source.score(x, t).iter().zip(&exact).map(|(a, b)| a - b).collect::<Vec<f64>>()
    };
    measure_error_field(&psi, sched, t, points)
}

/// ‖s − ∇log p_t‖/‖∇log p_t‖ at each point; points with a vanishing exact score are skipped.
pub fn relative_score_errors(source: &dyn ScoreSource, gmm: &GaussianMixture, sched: &NoiseSchedule, t: usize, points: &[Vec<f64>]) -> Vec<f64> {
    let flat: Vec<f64> = points.concat();
    let mut learned = vec![0.0; flat.len()];
    source.score_batch(&flat, t, &mut learned);
    points
        .iter()
        .zip(learned.chunks(gmm.dim()))
        .filter_map(|(x, s)| {
            let e = gmm.score_exact(sched, x, t);
            let n = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            (n > 0.0).then(|| s.iter().zip(&e).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / n)
        })
        .collect()
}
