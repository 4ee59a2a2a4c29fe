//! State-conditioned denoising diffusion over contingency patterns.
//!
//! Patterns are embedded in `{-1, +1}^N`, noised in closed form, and a small
//! MLP predicts the injected noise from `[c_t, time embedding, state embedding]`.
//! Sampling runs the reverse chain, optionally adds surrogate-gradient
//! guidance to each step mean, and projects the result onto a feasible
//! weight-k pattern.

use std::collections::BTreeSet;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::contingency::{self, ContingencyVector, FeasibleSetSpec};
use crate::error::{Error, Result};
use crate::grid::NetworkCase;
use crate::nn::{self, Adam, Dense, ParamLayout, Standardizer};
use crate::surrogate::EvgnnModel;
use crate::{par, rng};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub t: usize,
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub tilde_beta: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds the derived sequences for arbitrary `beta` in (0, 1).
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::InvalidArgument(
                "schedule needs at least one step".into(),
            ));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidArgument(format!("beta {b} outside (0, 1)")));
        }
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut prev = 1.0;
        for b in &beta {
            prev *= 1.0 - b;
            alpha_bar.push(prev);
        }
        let tilde_beta = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                beta[i] * (1.0 - prev) / (1.0 - alpha_bar[i])
            })
            .collect();
        Ok(Self {
            t: beta.len(),
            beta,
            alpha_bar,
            tilde_beta,
        })
    }

    /// Linear β from `beta_lo` to `beta_hi` without the terminal-mass check.
    pub fn linear(t: usize, beta_lo: f64, beta_hi: f64) -> Result<Self> {
        if !(beta_lo > 0.0 && beta_lo <= beta_hi && beta_hi < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_lo <= beta_hi < 1, got [{beta_lo}, {beta_hi}]"
            )));
        }
        if t == 0 {
            return Err(Error::InvalidArgument(
                "schedule needs at least one step".into(),
            ));
        }
        let beta = (0..t)
            .map(|i| {
                if t == 1 {
                    beta_lo
                } else {
                    beta_lo + (beta_hi - beta_lo) * i as f64 / (t - 1) as f64
                }
            })
            .collect();
        Self::from_betas(beta)
    }

    /// `β_t`, `ᾱ_t` and `β̃_t` for 1-based `t`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    pub fn tilde_beta(&self, t: usize) -> f64 {
        self.tilde_beta[t - 1]
    }
}

/// Linear schedule that must nearly destroy the signal: `ᾱ_T < 0.01`.
pub fn make_schedule(t: usize, beta_lo: f64, beta_hi: f64) -> Result<NoiseSchedule> {
    let s = NoiseSchedule::linear(t, beta_lo, beta_hi)?;
    let last = s.alpha_bar[s.t - 1];
    if last >= 0.01 {
        return Err(Error::ScheduleTooShort(last));
    }
    Ok(s)
}

/// `c_t = sqrt(ᾱ_t) c0 + sqrt(1 - ᾱ_t) eps`.
pub fn forward_sample(
    c0: &[f64],
    t: usize,
    eps: &[f64],
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    if t < 1 || t > sched.t {
        return Err(Error::InvalidArgument(format!(
            "step {t} outside [1, {}]",
            sched.t
        )));
    }
    if c0.len() != eps.len() {
        return Err(Error::Dimension("c0 and eps lengths differ".into()));
    }
    let a = sched.alpha_bar(t);
    let (sa, sb) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(c0.iter().zip(eps).map(|(c, e)| sa * c + sb * e).collect())
}

/// `{0,1}` pattern to `{-1,+1}`.
pub fn embed(c: &ContingencyVector) -> Vec<f64> {
    c.bits()
        .iter()
        .map(|&b| if b { 1.0 } else { -1.0 })
        .collect()
}

/// Noise predictor `ε_θ(c_t, x, t)`. `condition` lets a model precompute
/// anything that depends on `x` only.
pub trait NoisePredictor: Sync {
    fn dim(&self) -> usize;

    fn condition(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn predict(&self, cond: &[f64], c_t: &[f64], t: usize) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserOptions {
    pub state_hidden: usize,
    pub time_dim: usize,
    pub trunk_width: usize,
    pub trunk_layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for DenoiserOptions {
    fn default() -> Self {
        Self {
            state_hidden: 64,
            time_dim: 32,
            trunk_width: 128,
            trunk_layers: 2,
            epochs: 200,
            batch_size: 64,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserModel {
    pub version: u32,
    pub n: usize,
    pub x_dim: usize,
    pub time_dim: usize,
    enc: [Dense; 2],
    trunk: Vec<Dense>,
    pub params: Vec<f64>,
    pub x_norm: Standardizer,
    pub loss_history: Vec<f64>,
}

/// Sinusoidal embedding of step `t`.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut e = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        e[2 * i] = (t as f64 * freq).sin();
        e[2 * i + 1] = (t as f64 * freq).cos();
    }
    e
}

struct Tape {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    out: Vec<f64>,
}

struct EncTape {
    xn: Vec<f64>,
    a1: Vec<f64>,
    e1: Vec<f64>,
    a2: Vec<f64>,
    e2: Vec<f64>,
}

impl DenoiserModel {
    pub fn new(n: usize, x_dim: usize, opts: &DenoiserOptions, seed: u64) -> Result<Self> {
        if n == 0 || opts.trunk_layers == 0 || opts.trunk_width == 0 || opts.state_hidden == 0 {
            return Err(Error::InvalidArgument(
                "denoiser dimensions must be positive".into(),
            ));
        }
        if !opts.time_dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(
                "time embedding dimension must be even".into(),
            ));
        }
        let mut layout = ParamLayout::new();
        let enc = [
            layout.dense(x_dim, opts.state_hidden),
            layout.dense(opts.state_hidden, opts.state_hidden),
        ];
        let mut trunk = Vec::new();
        let mut width = n + opts.time_dim + opts.state_hidden;
        for _ in 0..opts.trunk_layers {
            trunk.push(layout.dense(width, opts.trunk_width));
            width = opts.trunk_width;
        }
        trunk.push(layout.dense(width, n));
        let mut params = vec![0.0; layout.len()];
        let mut r = rng::stream(seed, &[0xD1]);
        for d in enc.iter().chain(&trunk) {
            d.init(&mut params, &mut r);
        }
        Ok(Self {
            version: MODEL_VERSION,
            n,
            x_dim,
            time_dim: opts.time_dim,
            enc,
            trunk,
            params,
            x_norm: Standardizer::identity(x_dim),
            loss_history: Vec::new(),
        })
    }

    fn encode(&self, x: &[f64]) -> EncTape {
        let p = &self.params;
        let xn = self.x_norm.apply(x);
        let mut a1 = vec![0.0; self.enc[0].n_out];
        self.enc[0].forward(p, &xn, &mut a1);
        let e1: Vec<f64> = a1.iter().map(|&v| nn::silu(v)).collect();
        let mut a2 = vec![0.0; self.enc[1].n_out];
        self.enc[1].forward(p, &e1, &mut a2);
        let e2 = a2.iter().map(|&v| nn::silu(v)).collect();
        EncTape { xn, a1, e1, a2, e2 }
    }

    fn trunk_forward(&self, state_emb: &[f64], c_t: &[f64], t: usize) -> Tape {
        let p = &self.params;
        let mut input = Vec::with_capacity(self.trunk[0].n_in);
        input.extend_from_slice(c_t);
        input.extend(time_embedding(t, self.time_dim));
        input.extend_from_slice(state_emb);
        let mut pre = Vec::new();
        let mut post: Vec<Vec<f64>> = Vec::new();
        let last = self.trunk.len() - 1;
        let mut out = Vec::new();
        for (i, d) in self.trunk.iter().enumerate() {
            let x = if i == 0 { &input } else { &post[i - 1] };
            let mut y = vec![0.0; d.n_out];
            d.forward(p, x, &mut y);
            if i == last {
                out = y;
            } else {
                post.push(y.iter().map(|&v| nn::silu(v)).collect());
                pre.push(y);
            }
        }
        Tape {
            input,
            pre,
            post,
            out,
        }
    }

    /// Loss `w ||eps - ε_θ(c_t, x, t)||²` of one element and its parameter gradient.
    pub fn example_loss_grad(
        &self,
        x: &[f64],
        c_t: &[f64],
        t: usize,
        eps: &[f64],
        w: f64,
        grad: &mut [f64],
    ) -> f64 {
        let p = &self.params;
        let enc = self.encode(x);
        let tape = self.trunk_forward(&enc.e2, c_t, t);
        let mut loss = 0.0;
        let mut dy: Vec<f64> = tape
            .out
            .iter()
            .zip(eps)
            .map(|(o, e)| {
                let r = o - e;
                loss += r * r;
                2.0 * w * r
            })
            .collect();
        for i in (0..self.trunk.len()).rev() {
            let d = &self.trunk[i];
            let x = if i == 0 {
                &tape.input
            } else {
                &tape.post[i - 1]
            };
            let mut dx = vec![0.0; d.n_in];
            d.backward(p, x, &dy, grad, Some(&mut dx));
            if i > 0 {
                for (g, a) in dx.iter_mut().zip(&tape.pre[i - 1]) {
                    *g *= nn::silu_grad(*a);
                }
            }
            dy = dx;
        }
        let off = self.n + self.time_dim;
        let mut de2: Vec<f64> = dy[off..]
            .iter()
            .zip(&enc.a2)
            .map(|(g, a)| g * nn::silu_grad(*a))
            .collect();
        let mut de1 = vec![0.0; self.enc[1].n_in];
        self.enc[1].backward(p, &enc.e1, &de2, grad, Some(&mut de1));
        de2.clear();
        for (g, a) in de1.iter_mut().zip(&enc.a1) {
            *g *= nn::silu_grad(*a);
        }
        self.enc[0].backward(p, &enc.xn, &de1, grad, None);
        w * loss
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.version != MODEL_VERSION {
            return Err(Error::Validation(format!(
                "unsupported denoiser model version {}",
                m.version
            )));
        }
        Ok(m)
    }
}

impl NoisePredictor for DenoiserModel {
    fn dim(&self) -> usize {
        self.n
    }

    fn condition(&self, x: &[f64]) -> Vec<f64> {
        self.encode(x).e2
    }

    fn predict(&self, cond: &[f64], c_t: &[f64], t: usize) -> Vec<f64> {
        self.trunk_forward(cond, c_t, t).out
    }
}

/// Training element: state features, pattern and its severity label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionExample {
    pub x: Vec<f64>,
    pub c: ContingencyVector,
    pub s: f64,
}

/// `w(s) = 1 + gamma * 1{s >= tau}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityWeight {
    pub tau: f64,
    pub gamma: f64,
}

impl SeverityWeight {
    pub fn uniform() -> Self {
        Self {
            tau: f64::MAX,
            gamma: 0.0,
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        if s >= self.tau {
            1.0 + self.gamma
        } else {
            1.0
        }
    }
}

/// Step and noise draw for element `index` under `seed`.
pub fn noise_draw(seed: u64, index: u64, sched: &NoiseSchedule, n: usize) -> (usize, Vec<f64>) {
    let mut r = rng::stream(seed, &[index]);
    let t = r.random_range(1..=sched.t);
    let eps = (0..n).map(|_| r.sample(StandardNormal)).collect();
    (t, eps)
}

fn check_weight(batch: &[DiffusionExample], weight: &dyn Fn(f64) -> f64) -> Result<()> {
    let mut s: Vec<f64> = batch.iter().map(|e| e.s).collect();
    s.sort_by(f64::total_cmp);
    for w in s.windows(2) {
        if weight(w[1]) < weight(w[0]) {
            return Err(Error::InvalidArgument(format!(
                "weight function decreases between s={} and s={}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Batch mean of `w(s) ||eps - ε_θ(c_t, x, t)||²`, with `t` and `eps` drawn
/// per element from `seed`.
pub fn diffusion_loss(
    model: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    batch: &[DiffusionExample],
    weight: &dyn Fn(f64) -> f64,
    seed: u64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    check_weight(batch, weight)?;
    let mut total = 0.0;
    for (i, ex) in batch.iter().enumerate() {
        let (t, eps) = noise_draw(seed, i as u64, sched, model.dim());
        let c_t = forward_sample(&embed(&ex.c), t, &eps, sched)?;
        let pred = model.predict(&model.condition(&ex.x), &c_t, t);
        let sq: f64 = pred.iter().zip(&eps).map(|(p, e)| (e - p) * (e - p)).sum();
        total += weight(ex.s) * sq;
    }
    let loss = total / batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::TrainingDiverged(0));
    }
    Ok(loss)
}

const GRAD_CHUNK: usize = 8;

/// Untrained model whose state normaliser is fitted to `data`.
pub fn init_denoiser(
    data: &[DiffusionExample],
    opts: &DenoiserOptions,
    seed: u64,
) -> Result<DenoiserModel> {
    let first = data
        .first()
        .ok_or_else(|| Error::InvalidArgument("denoiser training set is empty".into()))?;
    let (n, x_dim) = (first.c.n(), first.x.len());
    if data.iter().any(|e| e.c.n() != n || e.x.len() != x_dim) {
        return Err(Error::Dimension(
            "inconsistent training example shapes".into(),
        ));
    }
    let mut model = DenoiserModel::new(n, x_dim, opts, seed)?;
    model.x_norm = Standardizer::fit(x_dim, data.iter().map(|e| e.x.as_slice()));
    Ok(model)
}

/// Adam on the severity-weighted denoising loss. Each epoch reshuffles the
/// data and redraws `(t, eps)` per element.
pub fn train_denoiser(
    data: &[DiffusionExample],
    sched: &NoiseSchedule,
    opts: &DenoiserOptions,
    weight: &SeverityWeight,
    seed: u64,
) -> Result<DenoiserModel> {
    let mut model = init_denoiser(data, opts, seed)?;
    check_weight(data, &|s| weight.eval(s))?;
    let mut opt = Adam::new(model.params.len(), opts.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = opts.batch_size.clamp(1, data.len());
    for epoch in 0..opts.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng::stream(seed, &[1, epoch as u64]));
        let noise_seed = rng::derive_seed(seed, &[2, epoch as u64]);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(batch) {
            let chunks: Vec<&[usize]> = idx.chunks(GRAD_CHUNK).collect();
            let parts = par::map(&chunks, |ch| -> Result<(f64, Vec<f64>)> {
                let mut g = vec![0.0; model.params.len()];
                let mut loss = 0.0;
                for &i in *ch {
                    let ex = &data[i];
                    let (t, eps) = noise_draw(noise_seed, i as u64, sched, model.n);
                    let c_t = forward_sample(&embed(&ex.c), t, &eps, sched)?;
                    loss +=
                        model.example_loss_grad(&ex.x, &c_t, t, &eps, weight.eval(ex.s), &mut g);
                }
                Ok((loss, g))
            });
            let mut grad = vec![0.0; model.params.len()];
            let mut loss = 0.0;
            for part in parts {
                let (l, g) = part?;
                loss += l;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let scale = 1.0 / idx.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged(epoch));
            }
            epoch_loss += loss;
            opt.step(&mut model.params, &grad);
        }
        model.loss_history.push(epoch_loss / data.len() as f64);
    }
    Ok(model)
}

/// Coefficient on `ε̂` in the reverse-step mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MeanForm {
    /// `β_t / sqrt(1 - ᾱ_t)`, the posterior mean under the closed-form forward process.
    #[default]
    Standard,
    /// Bare `β_t`.
    BareBeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub lambda: f64,
    /// Guidance is applied at steps `t <= start_step`; 0 means every step.
    pub start_step: usize,
    /// `c_t` is clipped to `[-clip, clip]` before the sigmoid map into `[0, 1]`.
    pub clip: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            start_step: 0,
            clip: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SamplerConfig {
    pub guidance: GuidanceConfig,
    pub mean_form: MeanForm,
    pub dedup: bool,
}

/// Runs the reverse chain from `c_T ~ N(0, I)` and returns the raw `ĉ_0`.
pub fn reverse_sample(
    model: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    case: &NetworkCase,
    x: &[f64],
    surrogate: Option<&EvgnnModel>,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = model.dim();
    let g = &cfg.guidance;
    if !(g.lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "guidance strength {} < 0",
            g.lambda
        )));
    }
    let guide = surrogate.filter(|_| g.lambda > 0.0);
    if let Some(s) = guide {
        if s.n_contingencable() != n {
            return Err(Error::Dimension(
                "surrogate and denoiser disagree on N".into(),
            ));
        }
    }
    let cond = model.condition(x);
    let mut r = rng::stream(seed, &[]);
    let mut c: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
    for t in (1..=sched.t).rev() {
        let eps = model.predict(&cond, &c, t);
        let beta = sched.beta(t);
        let coef = match cfg.mean_form {
            MeanForm::Standard => beta / (1.0 - sched.alpha_bar(t)).sqrt(),
            MeanForm::BareBeta => beta,
        };
        let scale = 1.0 / (1.0 - beta).sqrt();
        let mut mean: Vec<f64> = c
            .iter()
            .zip(&eps)
            .map(|(ci, ei)| scale * (ci - coef * ei))
            .collect();
        if let Some(s) = guide.filter(|_| g.start_step == 0 || t <= g.start_step) {
            let u: Vec<f64> = c
                .iter()
                .map(|v| nn::sigmoid(v.clamp(-g.clip, g.clip)))
                .collect();
            let grad = s.score_gradient(case, x, &u)?;
            for i in 0..n {
                if c[i].abs() < g.clip {
                    mean[i] += g.lambda * grad[i] * u[i] * (1.0 - u[i]);
                }
            }
        }
        if t > 1 {
            let sd = sched.tilde_beta(t).sqrt();
            for m in &mut mean {
                let z: f64 = r.sample(StandardNormal);
                *m += sd * z;
            }
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Sampling(t));
        }
        c = mean;
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSample {
    pub sample_index: usize,
    pub seed: u64,
    pub k: usize,
    pub contingency: ContingencyVector,
}

/// One draw: target k uniform in the spec range, reverse sample, projection.
fn draw_one(
    model: &dyn NoisePredictor,
    surrogate: Option<&EvgnnModel>,
    sched: &NoiseSchedule,
    case: &NetworkCase,
    x: &[f64],
    spec: &FeasibleSetSpec,
    cfg: &SamplerConfig,
    seed: u64,
    index: usize,
) -> Result<GeneratedSample> {
    let k = rng::stream(seed, &[index as u64, 0]).random_range(spec.k_min..=spec.k_max);
    let sample_seed = rng::derive_seed(seed, &[index as u64, 1]);
    let wrap = |e| Error::Sample {
        index,
        source: Box::new(e),
    };
    let raw = reverse_sample(model, sched, case, x, surrogate, cfg, sample_seed).map_err(wrap)?;
    let c = contingency::project(case, &raw, &spec.at(k)).map_err(wrap)?;
    Ok(GeneratedSample {
        sample_index: index,
        seed: sample_seed,
        k,
        contingency: c,
    })
}

/// `m` projected samples with per-index seeds. With `cfg.dedup`, draws
/// continue (up to `20 m` attempts) until `m` distinct patterns are found;
/// the first occurrence in index order is kept.
#[allow(clippy::too_many_arguments)]
pub fn generate_samples(
    model: &dyn NoisePredictor,
    surrogate: Option<&EvgnnModel>,
    sched: &NoiseSchedule,
    case: &NetworkCase,
    x: &[f64],
    spec: &FeasibleSetSpec,
    m: usize,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Vec<GeneratedSample>> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    if model.dim() != case.n_contingencable() {
        return Err(Error::Dimension("denoiser does not match case".into()));
    }
    let run = |lo: usize, hi: usize| -> Result<Vec<GeneratedSample>> {
        par::map_range(hi - lo, |i| {
            draw_one(model, surrogate, sched, case, x, spec, cfg, seed, lo + i)
        })
        .into_iter()
        .collect()
    };
    if !cfg.dedup {
        return run(0, m);
    }
    let cap = 20 * m;
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(m);
    let mut next = 0;
    while out.len() < m && next < cap {
        let hi = (next + m - out.len()).min(cap);
        for s in run(next, hi)? {
            if out.len() < m && seen.insert(s.contingency.clone()) {
                out.push(s);
            }
        }
        next = hi;
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn generate(
    model: &dyn NoisePredictor,
    surrogate: Option<&EvgnnModel>,
    sched: &NoiseSchedule,
    case: &NetworkCase,
    x: &[f64],
    spec: &FeasibleSetSpec,
    m: usize,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Vec<ContingencyVector>> {
    Ok(
        generate_samples(model, surrogate, sched, case, x, spec, m, cfg, seed)?
            .into_iter()
            .map(|s| s.contingency)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;
    use crate::grid::OperatingState;

    struct Zero(usize);
    impl NoisePredictor for Zero {
        fn dim(&self) -> usize {
            self.0
        }
        fn predict(&self, _: &[f64], c_t: &[f64], _: usize) -> Vec<f64> {
            vec![0.0; c_t.len()]
        }
    }

    #[test]
    fn schedule_examples() {
        let s = NoiseSchedule::linear(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar, vec![0.5]);
        assert_eq!(s.tilde_beta, vec![0.0]);
        let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let mut prod = 1.0;
        for i in 0..100 {
            prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 99.0);
        }
        assert!((s.alpha_bar[99] - prod).abs() < 1e-14);
        for t in 2..=100 {
            assert_eq!(s.alpha_bar(t), s.alpha_bar(t - 1) * (1.0 - s.beta(t)));
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
        assert!(matches!(
            make_schedule(100, 1e-4, 0.02),
            Err(Error::ScheduleTooShort(_))
        ));
        assert!(make_schedule(100, 1e-4, 1.0).is_err());
        let d = make_schedule(100, 1e-4, 0.1).unwrap();
        assert!(d.alpha_bar[99] < 0.01);
    }

    #[test]
    fn forward_sample_closed_form() {
        let s = make_schedule(100, 1e-4, 0.1).unwrap();
        let c0 = [1.0, -1.0, 1.0];
        let ct = forward_sample(&c0, 10, &[0.0; 3], &s).unwrap();
        let a = s.alpha_bar(10).sqrt();
        assert_eq!(ct, vec![a, -a, a]);
        let eps = [0.3, -1.2, 0.8];
        let ct = forward_sample(&c0, 37, &eps, &s).unwrap();
        let ab = s.alpha_bar(37);
        for i in 0..3 {
            let back = (ct[i] - (1.0 - ab).sqrt() * eps[i]) / ab.sqrt();
            assert!((back - c0[i]).abs() < 1e-14);
        }
        assert!(forward_sample(&c0, 0, &eps, &s).is_err());
    }

    #[test]
    fn forward_variance_matches() {
        let s = make_schedule(100, 1e-4, 0.1).unwrap();
        let t = 30;
        let ab = s.alpha_bar(t);
        let draws = 10_000;
        let mut r = rng::stream(3, &[]);
        let vals: Vec<f64> = (0..draws)
            .map(|_| {
                let e: f64 = r.sample(StandardNormal);
                forward_sample(&[1.0], t, &[e], &s).unwrap()[0] - ab.sqrt()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / draws as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let target = 1.0 - ab;
        // Standard error of a Gaussian sample variance.
        let se = target * (2.0 / (draws - 1) as f64).sqrt();
        assert!((var - target).abs() < 3.0 * se, "{var} vs {target}");
    }

    struct Oracle<'a>(&'a [Vec<f64>]);
    impl NoisePredictor for Oracle<'_> {
        fn dim(&self) -> usize {
            self.0[0].len()
        }
        fn predict(&self, cond: &[f64], _: &[f64], _: usize) -> Vec<f64> {
            self.0[cond[0] as usize].clone()
        }
    }

    fn examples() -> Vec<DiffusionExample> {
        vec![
            DiffusionExample {
                x: vec![0.0],
                c: ContingencyVector::from_positions(4, vec![1]).unwrap(),
                s: 2.0,
            },
            DiffusionExample {
                x: vec![1.0],
                c: ContingencyVector::from_positions(4, vec![0, 3]).unwrap(),
                s: 9.0,
            },
        ]
    }

    #[test]
    fn loss_examples() {
        let s = make_schedule(50, 1e-3, 0.2).unwrap();
        let batch = examples();
        let eps: Vec<Vec<f64>> = (0..2).map(|i| noise_draw(11, i, &s, 4).1).collect();
        assert_eq!(
            diffusion_loss(&Oracle(&eps), &s, &batch, &|_| 1.0, 11).unwrap(),
            0.0
        );

        let zero = Zero(4);
        let hand = eps
            .iter()
            .map(|e| e.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / 2.0;
        let one = diffusion_loss(&zero, &s, &batch, &|_| 1.0, 11).unwrap();
        assert!((one - hand).abs() < 1e-12);
        let w = SeverityWeight {
            tau: 5.0,
            gamma: 4.0,
        };
        let a = diffusion_loss(&zero, &s, &batch, &|v| w.eval(v), 11).unwrap();
        let b = diffusion_loss(&zero, &s, &batch, &|v| 2.0 * w.eval(v), 11).unwrap();
        assert_eq!(b, 2.0 * a);
        assert!(diffusion_loss(&zero, &s, &batch, &|v| -v, 11).is_err());
    }

    #[test]
    fn single_step_zero_model_closed_form() {
        let case = cases::ieee14();
        let s = NoiseSchedule::linear(1, 0.5, 0.5).unwrap();
        let x = OperatingState::nominal(&case).feature_vector;
        let out =
            reverse_sample(&Zero(20), &s, &case, &x, None, &SamplerConfig::default(), 4).unwrap();
        let mut r = rng::stream(4, &[]);
        let c1: Vec<f64> = (0..20).map(|_| r.sample(StandardNormal)).collect();
        for i in 0..20 {
            assert!((out[i] - c1[i] / 0.5f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn example_gradient_matches_finite_differences() {
        let opts = DenoiserOptions {
            state_hidden: 5,
            time_dim: 4,
            trunk_width: 6,
            trunk_layers: 2,
            ..DenoiserOptions::default()
        };
        let m = DenoiserModel::new(4, 3, &opts, 2).unwrap();
        let x = [0.3, -0.4, 1.2];
        let ct = [0.5, -0.7, 1.1, 0.2];
        let eps = [0.1, 0.9, -0.3, -1.0];
        let mut g = vec![0.0; m.params.len()];
        m.example_loss_grad(&x, &ct, 7, &eps, 2.5, &mut g);
        let h = 1e-6;
        let mut scratch = vec![0.0; m.params.len()];
        for i in 0..m.params.len() {
            let mut a = m.clone();
            let mut b = m.clone();
            a.params[i] += h;
            b.params[i] -= h;
            let fd = (a.example_loss_grad(&x, &ct, 7, &eps, 2.5, &mut scratch)
                - b.example_loss_grad(&x, &ct, 7, &eps, 2.5, &mut scratch))
                / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-5 * fd.abs().max(1e-2),
                "param {i}: {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn zero_epochs_is_initialisation() {
        let s = make_schedule(20, 1e-3, 0.4).unwrap();
        let data = examples();
        let opts = DenoiserOptions {
            epochs: 0,
            ..DenoiserOptions::default()
        };
        let trained = train_denoiser(&data, &s, &opts, &SeverityWeight::uniform(), 3).unwrap();
        assert_eq!(trained, init_denoiser(&data, &opts, 3).unwrap());
        let back = DenoiserModel::from_json(&trained.to_json().unwrap()).unwrap();
        assert_eq!(back, trained);
    }

    #[test]
    fn lambda_zero_ignores_surrogate() {
        let case = cases::ieee14();
        let s = make_schedule(30, 1e-3, 0.3).unwrap();
        let x = OperatingState::nominal(&case).feature_vector;
        let sur = EvgnnModel::new(&case, 2, 4, 1).unwrap();
        let cfg = SamplerConfig::default();
        let a = reverse_sample(&Zero(20), &s, &case, &x, Some(&sur), &cfg, 9).unwrap();
        let b = reverse_sample(&Zero(20), &s, &case, &x, None, &cfg, 9).unwrap();
        assert_eq!(a, b);
        let guided = SamplerConfig {
            guidance: GuidanceConfig {
                lambda: 1.0,
                ..GuidanceConfig::default()
            },
            ..cfg
        };
        assert_ne!(
            reverse_sample(&Zero(20), &s, &case, &x, Some(&sur), &guided, 9).unwrap(),
            a
        );
    }

    #[test]
    fn generation_contract_and_seed_isolation() {
        let case = cases::ieee14();
        let s = make_schedule(20, 1e-3, 0.4).unwrap();
        let x = OperatingState::nominal(&case).feature_vector;
        let spec = FeasibleSetSpec::range(2, 4);
        let cfg = SamplerConfig::default();
        let out = generate_samples(&Zero(20), None, &s, &case, &x, &spec, 30, &cfg, 5).unwrap();
        assert_eq!(out.len(), 30);
        for g in &out {
            assert!(spec.is_feasible(&case, &g.contingency));
            assert_eq!(g.contingency.k(), g.k);
        }
        // The first 10 samples do not depend on how many are requested.
        let short = generate_samples(&Zero(20), None, &s, &case, &x, &spec, 10, &cfg, 5).unwrap();
        assert_eq!(short[..], out[..10]);
        let one = generate(
            &Zero(20),
            None,
            &s,
            &case,
            &x,
            &FeasibleSetSpec::exact(3),
            1,
            &cfg,
            1,
        )
        .unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].k(), 3);
    }

    #[test]
    fn dedup_stays_inside_feasible_set() {
        let case = cases::ieee14();
        let s = make_schedule(12, 1e-2, 0.6).unwrap();
        let x = OperatingState::nominal(&case).feature_vector;
        let spec = FeasibleSetSpec::exact(2);
        let cfg = SamplerConfig {
            dedup: true,
            ..SamplerConfig::default()
        };
        let all: BTreeSet<_> = contingency::enumerate_feasible(&case, &spec)
            .unwrap()
            .collect();
        let got = generate(&Zero(20), None, &s, &case, &x, &spec, 190, &cfg, 2).unwrap();
        let uniq: BTreeSet<_> = got.iter().cloned().collect();
        assert_eq!(uniq.len(), got.len());
        assert!(uniq.is_subset(&all));
    }

    #[test]
    fn per_draw_k_is_uniform() {
        let spec = FeasibleSetSpec::range(2, 5);
        let draws = 10_000;
        let mut counts = [0usize; 4];
        for i in 0..draws {
            let k = rng::stream(77, &[i as u64, 0]).random_range(spec.k_min..=spec.k_max);
            counts[k - 2] += 1;
        }
        let p = 0.25;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sd, "{counts:?}");
        }
    }
}
