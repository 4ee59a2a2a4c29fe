//! Edge-varying graph neural network used as a fast severity surrogate.
//!
//! Messages along branch `e` in layer `l` are scaled by a learnable gain
//! `g[l][e]`, by `1 - c[e]` so that (partially) outaged branches attenuate
//! propagation, and by the symmetric degree normaliser
//! `1 / sqrt((deg_u + 1)(deg_v + 1))`. Node update is
//! `h' = tanh(W_self h + W_nb m + b)`; the readout is mean pooling, an affine
//! map and a softplus. Scores are in `log(1 + s)` units.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::contingency::{self, ContingencyVector, FeasibleSetSpec};
use crate::error::{Error, Result};
use crate::grid::{NetworkCase, OperatingState};
use crate::nn::{self, Dense, Momentum, ParamLayout, Standardizer};
use crate::{par, rng};

pub const MODEL_VERSION: u32 = 1;
const NODE_FEATURES: usize = 7;
const CONTINUOUS_FEATURES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Edge {
    from: usize,
    to: usize,
    branch: usize,
    position: Option<usize>,
    norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer {
    self_map: Dense,
    nb_map: Dense,
    gains: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvgnnModel {
    pub version: u32,
    pub layers: usize,
    pub hidden: usize,
    n_buses: usize,
    n_contingencable: usize,
    n_branches: usize,
    edges: Vec<Edge>,
    gen_bus: Vec<usize>,
    bus_type: Vec<[f64; 3]>,
    gnn: Vec<Layer>,
    readout: Dense,
    pub params: Vec<f64>,
    pub node_norm: Standardizer,
    /// Labels are clipped to this value before the log transform.
    pub label_clip: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub x: Vec<f64>,
    pub c: Vec<f64>,
    pub s: f64,
}

impl LabeledExample {
    pub fn new(state: &OperatingState, c: &ContingencyVector, s: f64) -> Self {
        Self {
            x: state.feature_vector.clone(),
            c: c.to_real(),
            s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvgnnOptions {
    pub layers: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Mini-batch size; 0 means full batch.
    pub batch_size: usize,
    /// Label clip as a multiple of the label 90th percentile.
    pub clip_factor: f64,
}

impl Default for EvgnnOptions {
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: 32,
            epochs: 500,
            lr: 0.02,
            momentum: 0.9,
            batch_size: 0,
            clip_factor: 2.0,
        }
    }
}

struct Tape {
    /// `h[l]` is `n_buses x width(l)`, row-major.
    h: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    z: f64,
}

impl EvgnnModel {
    /// Fresh model with Glorot weights and unit edge gains.
    pub fn new(case: &NetworkCase, layers: usize, hidden: usize, seed: u64) -> Result<Self> {
        if layers == 0 || hidden == 0 {
            return Err(Error::InvalidArgument(
                "EVGNN needs at least one layer and unit".into(),
            ));
        }
        let n = case.n_buses();
        let mut deg = vec![0usize; n];
        let mut position = vec![None; case.n_branches()];
        for (p, &e) in case.contingencable_branches().iter().enumerate() {
            position[e] = Some(p);
        }
        let mut edges = Vec::new();
        for (e, br) in case.branches.iter().enumerate() {
            if br.in_service {
                let (u, v) = case.branch_ends(e);
                deg[u] += 1;
                deg[v] += 1;
                edges.push(Edge {
                    from: u,
                    to: v,
                    branch: e,
                    position: position[e],
                    norm: 0.0,
                });
            }
        }
        for ed in &mut edges {
            ed.norm = (((deg[ed.from] + 1) * (deg[ed.to] + 1)) as f64).sqrt();
        }
        let mut layout = ParamLayout::new();
        let mut gnn = Vec::with_capacity(layers);
        for l in 0..layers {
            let d_in = if l == 0 { NODE_FEATURES } else { hidden };
            gnn.push(Layer {
                self_map: layout.dense(d_in, hidden),
                nb_map: layout.dense(d_in, hidden),
                gains: layout.alloc(case.n_branches()),
            });
        }
        let readout = layout.dense(hidden, 1);
        let mut params = vec![0.0; layout.len()];
        let mut r = rng::stream(seed, &[0xE7]);
        for layer in &gnn {
            layer.self_map.init(&mut params, &mut r);
            layer.nb_map.init(&mut params, &mut r);
            params[layer.gains..layer.gains + case.n_branches()].fill(1.0);
        }
        readout.init(&mut params, &mut r);
        Ok(Self {
            version: MODEL_VERSION,
            layers,
            hidden,
            n_buses: n,
            n_contingencable: case.n_contingencable(),
            n_branches: case.n_branches(),
            edges,
            gen_bus: (0..case.generators.len())
                .map(|g| case.gen_bus_index(g))
                .collect(),
            bus_type: case.buses.iter().map(|b| b.bus_type.one_hot()).collect(),
            gnn,
            readout,
            params,
            node_norm: Standardizer::identity(CONTINUOUS_FEATURES),
            label_clip: f64::MAX,
            final_loss: f64::NAN,
        })
    }

    pub fn n_contingencable(&self) -> usize {
        self.n_contingencable
    }

    /// Offset of the gain for branch-table index `branch` in `layer`.
    pub fn gain_index(&self, layer: usize, branch: usize) -> usize {
        self.gnn[layer].gains + branch
    }

    /// Zeroes readout weights and bias, making the model a constant `softplus(0)`.
    pub fn zero_readout(&mut self) {
        let r = self.readout;
        self.params[r.w..r.w + r.n_in].fill(0.0);
        self.params[r.b] = 0.0;
    }

    fn raw_node_features(&self, x: &[f64]) -> Vec<[f64; CONTINUOUS_FEATURES]> {
        let n = self.n_buses;
        let g = self.gen_bus.len();
        let mut f = vec![[0.0; CONTINUOUS_FEATURES]; n];
        for i in 0..n {
            f[i][0] = x[i];
            f[i][1] = x[n + i];
        }
        for (k, &b) in self.gen_bus.iter().enumerate() {
            f[b][2] += x[2 * n + k];
            if f[b][3] == 0.0 {
                f[b][3] = x[2 * n + g + k];
            }
        }
        f
    }

    fn node_input(&self, x: &[f64]) -> Vec<f64> {
        let raw = self.raw_node_features(x);
        let mut h = Vec::with_capacity(self.n_buses * NODE_FEATURES);
        for (i, r) in raw.iter().enumerate() {
            h.extend(self.node_norm.apply(r));
            h.extend(self.bus_type[i]);
        }
        h
    }

    fn check(&self, case: &NetworkCase, x: &[f64], c: &[f64]) -> Result<()> {
        if case.n_buses() != self.n_buses
            || case.n_contingencable() != self.n_contingencable
            || case.n_branches() != self.n_branches
        {
            return Err(Error::Dimension(
                "model was built for a different case".into(),
            ));
        }
        let want = 2 * self.n_buses + 2 * self.gen_bus.len();
        if x.len() != want {
            return Err(Error::Dimension(format!(
                "feature length {} but expected {want}",
                x.len()
            )));
        }
        if c.len() != self.n_contingencable {
            return Err(Error::Dimension(format!(
                "contingency length {} but N={}",
                c.len(),
                self.n_contingencable
            )));
        }
        if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "relaxed contingency entries must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    fn coef(&self, l: usize, ed: &Edge, c: &[f64]) -> f64 {
        let keep = ed.position.map_or(1.0, |p| 1.0 - c[p]);
        self.params[self.gnn[l].gains + ed.branch] * keep / ed.norm
    }

    fn forward(&self, x: &[f64], c: &[f64]) -> Tape {
        let n = self.n_buses;
        let p = &self.params;
        let mut h = vec![self.node_input(x)];
        let mut ms = Vec::with_capacity(self.layers);
        for (l, layer) in self.gnn.iter().enumerate() {
            let d = layer.self_map.n_in;
            let hl = &h[l];
            let mut m = vec![0.0; n * d];
            for ed in &self.edges {
                let k = self.coef(l, ed, c);
                if k == 0.0 {
                    continue;
                }
                for j in 0..d {
                    m[ed.to * d + j] += k * hl[ed.from * d + j];
                    m[ed.from * d + j] += k * hl[ed.to * d + j];
                }
            }
            let mut next = vec![0.0; n * self.hidden];
            for v in 0..n {
                let out = &mut next[v * self.hidden..(v + 1) * self.hidden];
                layer.self_map.forward(p, &hl[v * d..(v + 1) * d], out);
                layer.nb_map.matvec_add(p, &m[v * d..(v + 1) * d], out);
                for o in out.iter_mut() {
                    *o = o.tanh();
                }
            }
            ms.push(m);
            h.push(next);
        }
        let last = &h[self.layers];
        let mut pooled = vec![0.0; self.hidden];
        for v in 0..n {
            for j in 0..self.hidden {
                pooled[j] += last[v * self.hidden + j];
            }
        }
        for q in &mut pooled {
            *q /= n as f64;
        }
        let mut z = [0.0];
        self.readout.forward(p, &pooled, &mut z);
        Tape {
            h,
            m: ms,
            pooled,
            z: z[0],
        }
    }

    /// Back-propagates `ds` (upstream derivative of the score). Parameter
    /// gradients are accumulated into `grad`; the gradient with respect to the
    /// relaxed contingency is accumulated into `dc`.
    fn backward(
        &self,
        tape: &Tape,
        c: &[f64],
        ds: f64,
        mut grad: Option<&mut [f64]>,
        mut dc: Option<&mut [f64]>,
    ) {
        let n = self.n_buses;
        let p = &self.params;
        let dz = ds * nn::sigmoid(tape.z);
        let mut dpooled = vec![0.0; self.hidden];
        if let Some(g) = grad.as_deref_mut() {
            self.readout
                .backward(p, &tape.pooled, &[dz], g, Some(&mut dpooled));
        } else {
            self.readout.backward_input(p, &[dz], &mut dpooled);
        }
        let mut dh: Vec<f64> = (0..n)
            .flat_map(|_| dpooled.iter().map(|d| d / n as f64))
            .collect();
        for l in (0..self.layers).rev() {
            let layer = &self.gnn[l];
            let d = layer.self_map.n_in;
            let hl = &tape.h[l];
            let out = &tape.h[l + 1];
            let m = &tape.m[l];
            let mut dh_prev = vec![0.0; n * d];
            let mut dm = vec![0.0; n * d];
            let mut da = vec![0.0; self.hidden];
            for v in 0..n {
                for j in 0..self.hidden {
                    let y = out[v * self.hidden + j];
                    da[j] = dh[v * self.hidden + j] * (1.0 - y * y);
                }
                let hv = &hl[v * d..(v + 1) * d];
                let mv = &m[v * d..(v + 1) * d];
                if let Some(g) = grad.as_deref_mut() {
                    layer.self_map.backward(p, hv, &da, g, None);
                    layer.nb_map.backward_weights(mv, &da, g);
                }
                layer
                    .self_map
                    .backward_input(p, &da, &mut dh_prev[v * d..(v + 1) * d]);
                layer
                    .nb_map
                    .backward_input(p, &da, &mut dm[v * d..(v + 1) * d]);
            }
            for ed in &self.edges {
                let k = self.coef(l, ed, c);
                let (u, v) = (ed.from, ed.to);
                let mut dk = 0.0;
                for j in 0..d {
                    dk += dm[v * d + j] * hl[u * d + j] + dm[u * d + j] * hl[v * d + j];
                    dh_prev[u * d + j] += k * dm[v * d + j];
                    dh_prev[v * d + j] += k * dm[u * d + j];
                }
                let gain = p[layer.gains + ed.branch];
                let keep = ed.position.map_or(1.0, |q| 1.0 - c[q]);
                if let Some(g) = grad.as_deref_mut() {
                    g[layer.gains + ed.branch] += dk * keep / ed.norm;
                }
                if let (Some(dc), Some(q)) = (dc.as_deref_mut(), ed.position) {
                    dc[q] -= dk * gain / ed.norm;
                }
            }
            dh = dh_prev;
        }
    }

    /// Predicted severity, in `log(1 + s)` units.
    pub fn score(&self, case: &NetworkCase, x: &[f64], c_relaxed: &[f64]) -> Result<f64> {
        self.check(case, x, c_relaxed)?;
        Ok(nn::softplus(self.forward(x, c_relaxed).z))
    }

    /// Exact gradient of [`score`](Self::score) with respect to `c_relaxed`.
    pub fn score_gradient(
        &self,
        case: &NetworkCase,
        x: &[f64],
        c_relaxed: &[f64],
    ) -> Result<Vec<f64>> {
        self.check(case, x, c_relaxed)?;
        let tape = self.forward(x, c_relaxed);
        let mut dc = vec![0.0; self.n_contingencable];
        self.backward(&tape, c_relaxed, 1.0, None, Some(&mut dc));
        Ok(dc)
    }

    /// Gradient of the score with respect to every parameter.
    pub fn param_gradient(
        &self,
        case: &NetworkCase,
        x: &[f64],
        c_relaxed: &[f64],
    ) -> Result<Vec<f64>> {
        self.check(case, x, c_relaxed)?;
        let tape = self.forward(x, c_relaxed);
        let mut g = vec![0.0; self.params.len()];
        self.backward(&tape, c_relaxed, 1.0, Some(&mut g), None);
        Ok(g)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.version != MODEL_VERSION {
            return Err(Error::Validation(format!(
                "unsupported EVGNN model version {}",
                m.version
            )));
        }
        Ok(m)
    }

    fn target(&self, s: f64) -> f64 {
        s.min(self.label_clip).max(0.0).ln_1p()
    }

    /// Sum over `batch` of squared error and of its parameter gradient.
    fn batch_loss_grad(&self, batch: &[&LabeledExample]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for ex in batch {
            let tape = self.forward(&ex.x, &ex.c);
            let r = nn::softplus(tape.z) - self.target(ex.s);
            loss += r * r;
            self.backward(&tape, &ex.c, 2.0 * r, Some(&mut g), None);
        }
        (loss, g)
    }

    /// Mean squared error of the log-scaled, clipped targets.
    pub fn mse(&self, data: &[LabeledExample]) -> f64 {
        let refs: Vec<&LabeledExample> = data.iter().collect();
        loss_and_grad(self, &refs).0
    }
}

const GRAD_CHUNK: usize = 16;

/// Mean loss and gradient; chunks are reduced in a fixed order so the result
/// does not depend on the thread count.
fn loss_and_grad(model: &EvgnnModel, batch: &[&LabeledExample]) -> (f64, Vec<f64>) {
    let chunks: Vec<&[&LabeledExample]> = batch.chunks(GRAD_CHUNK).collect();
    let parts = par::map(&chunks, |ch| model.batch_loss_grad(ch));
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.params.len()];
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|v| *v /= n);
    (loss / n, grad)
}

/// Nearest-rank quantile `q` of a sample.
pub(crate) fn nearest_rank(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Fits an EVGNN to `data` by momentum gradient descent on mean squared error.
pub fn train_evgnn(
    case: &NetworkCase,
    data: &[LabeledExample],
    opts: &EvgnnOptions,
    seed: u64,
) -> Result<EvgnnModel> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("EVGNN training set is empty".into()));
    }
    let mut model = EvgnnModel::new(case, opts.layers, opts.hidden, seed)?;
    for ex in data {
        model.check(case, &ex.x, &ex.c)?;
        if !(ex.s >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "negative or NaN severity label {}",
                ex.s
            )));
        }
    }
    let labels: Vec<f64> = data.iter().map(|e| e.s).collect();
    let p90 = nearest_rank(&labels, 0.9);
    model.label_clip = if p90 > 0.0 {
        opts.clip_factor * p90
    } else {
        labels.iter().copied().fold(0.0, f64::max)
    };
    let nodes: Vec<[f64; CONTINUOUS_FEATURES]> = data
        .iter()
        .flat_map(|ex| model.raw_node_features(&ex.x))
        .collect();
    model.node_norm = Standardizer::fit(CONTINUOUS_FEATURES, nodes.iter().map(|r| r.as_slice()));
    // Start the output at the mean target.
    let mean_target = data.iter().map(|e| model.target(e.s)).sum::<f64>() / data.len() as f64;
    model.params[model.readout.b] = inverse_softplus(mean_target.max(1e-3));

    let mut opt = Momentum::new(model.params.len(), opts.lr, opts.momentum);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = if opts.batch_size == 0 {
        data.len()
    } else {
        opts.batch_size.min(data.len())
    };
    let mut loss = f64::NAN;
    for epoch in 0..opts.epochs {
        if batch < data.len() {
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng::stream(seed, &[1, epoch as u64]));
        }
        let mut epoch_loss = 0.0;
        for idx in order.chunks(batch) {
            let refs: Vec<&LabeledExample> = idx.iter().map(|&i| &data[i]).collect();
            let (l, g) = loss_and_grad(&model, &refs);
            if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::TrainingDiverged(epoch));
            }
            epoch_loss += l * idx.len() as f64;
            opt.step(&mut model.params, &g);
        }
        loss = epoch_loss / data.len() as f64;
    }
    if opts.epochs > 0 {
        model.final_loss = model.mse(data);
        if !model.final_loss.is_finite() {
            return Err(Error::TrainingDiverged(opts.epochs));
        }
    } else {
        model.final_loss = loss;
    }
    Ok(model)
}

fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Anything that can rank contingencies for a state.
pub trait RiskScorer: Sync {
    fn risk(&self, case: &NetworkCase, x: &[f64], c: &ContingencyVector) -> Result<f64>;
}

impl RiskScorer for EvgnnModel {
    fn risk(&self, case: &NetworkCase, x: &[f64], c: &ContingencyVector) -> Result<f64> {
        self.score(case, x, &c.to_real())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighRiskEntry {
    pub state_index: usize,
    pub contingency: ContingencyVector,
    pub score: f64,
}

/// Draws `pool` distinct feasible patterns per state (k uniform in
/// `k_range`), scores them and keeps the `retain` highest, highest first.
pub fn build_high_risk_set(
    scorer: &dyn RiskScorer,
    case: &NetworkCase,
    states: &[OperatingState],
    k_range: (usize, usize),
    pool: usize,
    retain: usize,
    seed: u64,
) -> Result<Vec<HighRiskEntry>> {
    if retain > pool {
        return Err(Error::InvalidArgument(format!(
            "retain {retain} exceeds pool {pool}"
        )));
    }
    let spec = FeasibleSetSpec::range(k_range.0, k_range.1);
    let per_state = par::map_range(states.len(), |si| -> Result<Vec<HighRiskEntry>> {
        let mut r = rng::stream(seed, &[si as u64]);
        let mut seen = BTreeSet::new();
        let mut attempts = 0;
        while seen.len() < pool && attempts < 20 * pool.max(1) {
            seen.insert(contingency::uniform_sample_with(case, &spec, &mut r)?);
            attempts += 1;
        }
        let x = &states[si].feature_vector;
        let mut scored = seen
            .into_iter()
            .map(|c| Ok((scorer.risk(case, x, &c)?, c)))
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        Ok(scored
            .into_iter()
            .take(retain)
            .map(|(score, contingency)| HighRiskEntry {
                state_index: si,
                contingency,
                score,
            })
            .collect())
    });
    let mut out = Vec::new();
    for r in per_state {
        out.extend(r?);
    }
    Ok(out)
}
