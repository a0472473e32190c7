//! DeeperGCN node classifier with hand-written reverse-mode gradients.
//!
//! The network is an input encoder, a stack of pre-activation residual
//! blocks (norm, ReLU, graph convolution, addition), a final norm and ReLU,
//! and a two-class linear decoder. Each graph convolution builds messages
//! `ReLU(h_u) + 1e-7`, aggregates them per channel with a learnable
//! softmax temperature, scales by `deg^y`, rescales the aggregate to the
//! node's own norm times `s`, adds it to the node state and applies a
//! two-layer MLP.
//!
//! All parameters live in one flat vector; [`Layout`] names the ranges in
//! declaration order, so gradients and optimizer moments share its shape.

mod ops;
mod train;

pub use train::{
    adam_step, class_weights, predict, read_checkpoint, train, write_checkpoint, write_history_csv, AdamState, Checkpoint,
    EpochRecord, GraphSample, TrainConfig, TrainOutcome,
};

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::region_graph::RegionGraph;

/// Added to every message so messages stay strictly positive.
pub const MESSAGE_EPS: f64 = 1e-7;
pub const NORM_EPS: f64 = 1e-5;
pub const N_CLASSES: usize = 2;
/// Label value marking a node excluded from the loss.
pub const UNLABELED: u8 = u8::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aggregator {
    /// Per-channel softmax-weighted sum with temperature β.
    SoftMax,
    /// Per-channel power mean with exponent p.
    PowerMean,
    /// Plain sum; the layer's aggregation parameter is unused.
    Sum,
}

impl Aggregator {
    fn code(self) -> u8 {
        match self {
            Aggregator::SoftMax => 0,
            Aggregator::PowerMean => 1,
            Aggregator::Sum => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Aggregator::SoftMax),
            1 => Ok(Aggregator::PowerMean),
            2 => Ok(Aggregator::Sum),
            _ => Err(Error::Checkpoint(format!("unknown aggregator code {c}"))),
        }
    }
}

impl std::str::FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Aggregator::SoftMax),
            "powermean" => Ok(Aggregator::PowerMean),
            "sum" => Ok(Aggregator::Sum),
            other => Err(Error::invalid(format!("unknown aggregator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub n_layers: usize,
    pub dropout: f64,
    pub aggregator: Aggregator,
    /// Initial aggregation parameter (β, or p for the power mean).
    pub agg_init: f64,
    pub s_init: f64,
    pub y_init: f64,
}

impl ModelConfig {
    pub fn new(in_dim: usize, hidden: usize, n_layers: usize) -> Self {
        Self {
            in_dim,
            hidden,
            n_layers,
            dropout: 0.2,
            aggregator: Aggregator::SoftMax,
            agg_init: 1.0,
            s_init: 1.0,
            y_init: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.hidden == 0 {
            return Err(Error::invalid("model widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must be in [0, 1)"));
        }
        if self.aggregator == Aggregator::PowerMean && self.agg_init == 0.0 {
            return Err(Error::invalid("power-mean exponent must be nonzero"));
        }
        for v in [self.agg_init, self.s_init, self.y_init] {
            if !v.is_finite() {
                return Err(Error::invalid("layer scalar initializations must be finite"));
            }
        }
        Ok(())
    }
}

/// Parameter ranges of one residual block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerLayout {
    pub norm_gain: Range<usize>,
    pub norm_shift: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    /// β (softmax) or p (power mean).
    pub agg: usize,
    pub s: usize,
    pub y_deg: usize,
}

/// Offsets of every parameter tensor in the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub enc_w: Range<usize>,
    pub enc_b: Range<usize>,
    pub layers: Vec<LayerLayout>,
    pub final_gain: Range<usize>,
    pub final_shift: Range<usize>,
    pub dec_w: Range<usize>,
    pub dec_b: Range<usize>,
    pub len: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let h = cfg.hidden;
        let enc_w = take(cfg.in_dim * h);
        let enc_b = take(h);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerLayout {
                norm_gain: take(h),
                norm_shift: take(h),
                w1: take(h * h),
                b1: take(h),
                w2: take(h * h),
                b2: take(h),
                agg: take(1).start,
                s: take(1).start,
                y_deg: take(1).start,
            })
            .collect();
        let final_gain = take(h);
        let final_shift = take(h);
        let dec_w = take(h * N_CLASSES);
        let dec_b = take(N_CLASSES);
        Self {
            enc_w,
            enc_b,
            layers,
            final_gain,
            final_shift,
            dec_w,
            dec_b,
            len: at,
        }
    }

    /// Named tensors in declaration order.
    pub fn tensors(&self) -> Vec<(String, Range<usize>)> {
        let mut out = vec![("encoder.weight".to_string(), self.enc_w.clone()), ("encoder.bias".to_string(), self.enc_b.clone())];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend([
                (format!("layer{i}.norm.gain"), l.norm_gain.clone()),
                (format!("layer{i}.norm.shift"), l.norm_shift.clone()),
                (format!("layer{i}.mlp.w1"), l.w1.clone()),
                (format!("layer{i}.mlp.b1"), l.b1.clone()),
                (format!("layer{i}.mlp.w2"), l.w2.clone()),
                (format!("layer{i}.mlp.b2"), l.b2.clone()),
                (format!("layer{i}.agg"), l.agg..l.agg + 1),
                (format!("layer{i}.s"), l.s..l.s + 1),
                (format!("layer{i}.y_deg"), l.y_deg..l.y_deg + 1),
            ]);
        }
        out.extend([
            ("final_norm.gain".to_string(), self.final_gain.clone()),
            ("final_norm.shift".to_string(), self.final_shift.clone()),
            ("decoder.weight".to_string(), self.dec_w.clone()),
            ("decoder.bias".to_string(), self.dec_b.clone()),
        ]);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: Vec<f64>,
}

impl GcnModel {
    /// Glorot-uniform weights, zero biases, unit norm gains and the
    /// configured layer scalars.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |r: Range<usize>, fan_in: usize, fan_out: usize, params: &mut [f64]| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[r] {
                *p = rng.random_range(-a..a);
            }
        };
        let h = config.hidden;
        glorot(layout.enc_w.clone(), config.in_dim, h, &mut params);
        for l in &layout.layers {
            glorot(l.w1.clone(), h, h, &mut params);
            glorot(l.w2.clone(), h, h, &mut params);
            params[l.norm_gain.clone()].fill(1.0);
            params[l.agg] = config.agg_init;
            params[l.s] = config.s_init;
            params[l.y_deg] = config.y_init;
        }
        params[layout.final_gain.clone()].fill(1.0);
        glorot(layout.dec_w.clone(), h, N_CLASSES, &mut params);
        Ok(Self { config, layout, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.len {
            return Err(Error::DimensionMismatch(format!("{} parameters, layout needs {}", params.len(), layout.len)));
        }
        Ok(Self { config, layout, params })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Neighbor lists in CSR form; the graph structure the network consumes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    nbrs: Vec<usize>,
}

impl Adjacency {
    pub fn from_graph(g: &RegionGraph) -> Self {
        Self::from_graphs([g])
    }

    /// Disjoint union: node ids of later graphs are offset by the node
    /// counts of earlier ones.
    pub fn from_graphs<'a>(graphs: impl IntoIterator<Item = &'a RegionGraph>) -> Self {
        let mut offsets = vec![0];
        let mut nbrs = Vec::new();
        let mut base = 0;
        for g in graphs {
            for v in 0..g.n_nodes() {
                nbrs.extend(g.neighbors(v).iter().map(|&u| u + base));
                offsets.push(nbrs.len());
            }
            base += g.n_nodes();
        }
        Self { offsets, nbrs }
    }

    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Adjacency>) -> Self {
        let mut offsets = vec![0];
        let mut nbrs = Vec::new();
        let mut base = 0;
        for a in parts {
            for v in 0..a.n_nodes() {
                nbrs.extend(a.neighbors(v).iter().map(|&u| u + base));
                offsets.push(nbrs.len());
            }
            base += a.n_nodes();
        }
        Self { offsets, nbrs }
    }

    /// Undirected edge list; each edge is stored in both directions.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Ok(Self::from_graph(&RegionGraph::from_edges(n_nodes, edges)?))
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.nbrs[self.offsets[v]..self.offsets[v + 1]]
    }
}

/// Message from a neighbor state, with optional edge features.
pub fn message(h_u: &[f64], h_e: Option<&[f64]>) -> Vec<f64> {
    match h_e {
        Some(e) => h_u.iter().zip(e).map(|(a, b)| (a + b).max(0.0) + MESSAGE_EPS).collect(),
        None => h_u.iter().map(|a| a.max(0.0) + MESSAGE_EPS).collect(),
    }
}

/// Per-channel softmax aggregation; the zero vector for no messages.
pub fn softmax_agg(messages: &[Vec<f64>], beta: f64) -> Vec<f64> {
    let Some(first) = messages.first() else {
        return Vec::new();
    };
    let refs: Vec<&[f64]> = messages.iter().map(Vec::as_slice).collect();
    let mut out = vec![0.0; first.len()];
    ops::softmax_channels(&refs, beta, &mut out);
    out
}

/// Per-channel power mean `((1/n) Σ m^p)^(1/p)`.
pub fn powermean_agg(messages: &[Vec<f64>], p: f64) -> Result<Vec<f64>> {
    if p == 0.0 || !p.is_finite() {
        return Err(Error::invalid("power-mean exponent must be finite and nonzero"));
    }
    let Some(first) = messages.first() else {
        return Ok(Vec::new());
    };
    let refs: Vec<&[f64]> = messages.iter().map(Vec::as_slice).collect();
    let mut out = vec![0.0; first.len()];
    ops::powermean_channels(&refs, p, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Values saved by the forward pass of one residual block.
struct BlockCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    /// ReLU(norm(h)): the graph-convolution input.
    z: Vec<f64>,
    /// Unscaled aggregate per node.
    agg: Vec<f64>,
    /// Whether the node's message term is active (has neighbors and a
    /// nonzero aggregate).
    active: Vec<bool>,
    /// z + message term: the MLP input.
    u: Vec<f64>,
    hid_pre: Vec<f64>,
    /// Dropout scale per hidden unit (0 or 1/(1-rate)); empty when off.
    drop: Vec<f64>,
    hid: Vec<f64>,
}

struct ForwardCache {
    x: Vec<f64>,
    blocks: Vec<BlockCache>,
    final_xhat: Vec<f64>,
    final_inv: Vec<f64>,
    final_z: Vec<f64>,
    logits: Vec<f64>,
}

fn aggregation_scalar(cfg: &ModelConfig, raw: f64) -> f64 {
    if cfg.aggregator == Aggregator::PowerMean {
        // Keep the exponent away from the excluded value 0.
        if raw.abs() < 1e-3 {
            return 1e-3f64.copysign(if raw == 0.0 { 1.0 } else { raw });
        }
    }
    raw
}

/// One graph convolution on `z` (N×H). Returns (aggregates, active flags,
/// MLP input u).
fn conv_message_term(model: &GcnModel, li: usize, z: &[f64], adj: &Adjacency) -> (Vec<f64>, Vec<bool>, Vec<f64>) {
    let h = model.config.hidden;
    let l = &model.layout.layers[li];
    let p = &model.params;
    let (agg_param, s, y) = (aggregation_scalar(&model.config, p[l.agg]), p[l.s], p[l.y_deg]);
    let n = adj.n_nodes();
    let mut agg = vec![0.0; n * h];
    let mut active = vec![false; n];
    let mut u = z.to_vec();
    let mut msgs: Vec<Vec<f64>> = Vec::new();
    for v in 0..n {
        let nb = adj.neighbors(v);
        if nb.is_empty() {
            continue;
        }
        msgs.clear();
        msgs.extend(nb.iter().map(|&w| message(&z[w * h..(w + 1) * h], None)));
        let refs: Vec<&[f64]> = msgs.iter().map(Vec::as_slice).collect();
        let out = &mut agg[v * h..(v + 1) * h];
        match model.config.aggregator {
            Aggregator::SoftMax => ops::softmax_channels(&refs, agg_param, out),
            Aggregator::PowerMean => ops::powermean_channels(&refs, agg_param, out),
            Aggregator::Sum => {
                for m in &refs {
                    for (o, x) in out.iter_mut().zip(m.iter()) {
                        *o += x;
                    }
                }
            }
        }
        let scale = (nb.len() as f64).powf(y);
        let a_norm = scale * ops::norm(out);
        if a_norm > 0.0 {
            active[v] = true;
            let z_norm = ops::norm(&z[v * h..(v + 1) * h]);
            let f = s * z_norm * scale / a_norm;
            for c in 0..h {
                u[v * h + c] += f * out[c];
            }
        }
    }
    (agg, active, u)
}

fn block_forward(model: &GcnModel, li: usize, h_in: &[f64], adj: &Adjacency, rng: Option<&mut ChaCha8Rng>) -> (Vec<f64>, BlockCache) {
    let hd = model.config.hidden;
    let n = adj.n_nodes();
    let l = &model.layout.layers[li];
    let p = &model.params;
    let (xhat, inv_std, normed) = ops::layer_norm(h_in, n, hd, &p[l.norm_gain.clone()], &p[l.norm_shift.clone()]);
    let z: Vec<f64> = normed.iter().map(|v| v.max(0.0)).collect();
    let (agg, active, u) = conv_message_term(model, li, &z, adj);
    let hid_pre = ops::affine(&u, n, hd, &p[l.w1.clone()], &p[l.b1.clone()], hd);
    let mut hid: Vec<f64> = hid_pre.iter().map(|v| v.max(0.0)).collect();
    let mut drop = Vec::new();
    if let Some(rng) = rng {
        let rate = model.config.dropout;
        if rate > 0.0 {
            let keep = 1.0 / (1.0 - rate);
            drop = (0..n * hd).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
            for (x, d) in hid.iter_mut().zip(&drop) {
                *x *= d;
            }
        }
    }
    let out = ops::affine(&hid, n, hd, &p[l.w2.clone()], &p[l.b2.clone()], hd);
    let h_out: Vec<f64> = h_in.iter().zip(&out).map(|(a, b)| a + b).collect();
    (
        h_out,
        BlockCache {
            xhat,
            inv_std,
            z,
            agg,
            active,
            u,
            hid_pre,
            drop,
            hid,
        },
    )
}

fn check_input(model: &GcnModel, adj: &Adjacency, features: &[f64]) -> Result<()> {
    let n = adj.n_nodes();
    if features.len() != n * model.config.in_dim {
        return Err(Error::DimensionMismatch(format!(
            "{} feature values for {} nodes of dimension {}",
            features.len(),
            n,
            model.config.in_dim
        )));
    }
    Ok(())
}

fn forward_cached(model: &GcnModel, adj: &Adjacency, features: &[f64], mut rng: Option<&mut ChaCha8Rng>) -> Result<ForwardCache> {
    check_input(model, adj, features)?;
    let n = adj.n_nodes();
    let hd = model.config.hidden;
    let lay = &model.layout;
    let p = &model.params;
    let mut h = ops::affine(features, n, model.config.in_dim, &p[lay.enc_w.clone()], &p[lay.enc_b.clone()], hd);
    let mut blocks = Vec::with_capacity(lay.layers.len());
    for li in 0..lay.layers.len() {
        let (next, cache) = block_forward(model, li, &h, adj, rng.as_deref_mut());
        blocks.push(cache);
        h = next;
    }
    let (final_xhat, final_inv, normed) = ops::layer_norm(&h, n, hd, &p[lay.final_gain.clone()], &p[lay.final_shift.clone()]);
    let final_z: Vec<f64> = normed.iter().map(|v| v.max(0.0)).collect();
    let logits = ops::affine(&final_z, n, hd, &p[lay.dec_w.clone()], &p[lay.dec_b.clone()], N_CLASSES);
    Ok(ForwardCache {
        x: features.to_vec(),
        blocks,
        final_xhat,
        final_inv,
        final_z,
        logits,
    })
}

/// Per-node logits (N×2, row-major). `Mode::Train` applies dropout drawn
/// from `rng`; without an rng dropout is off.
pub fn forward(model: &GcnModel, adj: &Adjacency, features: &[f64], mode: Mode, rng: Option<&mut ChaCha8Rng>) -> Result<Vec<f64>> {
    let rng = if mode == Mode::Train { rng } else { None };
    Ok(forward_cached(model, adj, features, rng)?.logits)
}

/// One graph convolution of layer `li` applied to `states` (N×H).
pub fn graph_conv(model: &GcnModel, li: usize, states: &[f64], adj: &Adjacency) -> Vec<f64> {
    let hd = model.config.hidden;
    let n = adj.n_nodes();
    let l = &model.layout.layers[li];
    let p = &model.params;
    let (_, _, u) = conv_message_term(model, li, states, adj);
    let hid: Vec<f64> = ops::affine(&u, n, hd, &p[l.w1.clone()], &p[l.b1.clone()], hd)
        .iter()
        .map(|v| v.max(0.0))
        .collect();
    ops::affine(&hid, n, hd, &p[l.w2.clone()], &p[l.b2.clone()], hd)
}

/// Residual block `states + conv(ReLU(norm(states)))`.
pub fn resplus_block(model: &GcnModel, li: usize, states: &[f64], adj: &Adjacency, rng: Option<&mut ChaCha8Rng>) -> Vec<f64> {
    block_forward(model, li, states, adj, rng).0
}

/// Weighted softmax cross-entropy `Σ w_y·CE / Σ w_y` over labeled nodes
/// and its gradient for every parameter. Dropout, if any, uses `rng`.
pub fn loss_and_gradients(
    model: &GcnModel,
    adj: &Adjacency,
    features: &[f64],
    labels: &[u8],
    class_weights: [f64; N_CLASSES],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<f64>)> {
    let (loss, mut grad, total) = weighted_loss_sum(model, adj, features, labels, class_weights, rng)?;
    if total <= 0.0 {
        return Err(Error::NoLabels);
    }
    for g in &mut grad {
        *g /= total;
    }
    Ok((loss / total, grad))
}

/// Unnormalized `Σ w_y·CE`, its gradient, and `Σ w_y`. Summing these over
/// graphs equals the loss of their disjoint union.
pub(crate) fn weighted_loss_sum(
    model: &GcnModel,
    adj: &Adjacency,
    features: &[f64],
    labels: &[u8],
    class_weights: [f64; N_CLASSES],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<f64>, f64)> {
    let n = adj.n_nodes();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!("{} labels for {} nodes", labels.len(), n)));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y != UNLABELED && y as usize >= N_CLASSES) {
        return Err(Error::invalid(format!("label {bad} out of range")));
    }
    let total_w: f64 = labels.iter().filter(|&&y| y != UNLABELED).map(|&y| class_weights[y as usize]).sum();
    if total_w <= 0.0 {
        return Ok((0.0, vec![0.0; model.params.len()], 0.0));
    }
    let cache = forward_cached(model, adj, features, rng)?;
    let mut loss = 0.0;
    let mut dlogits = vec![0.0; n * N_CLASSES];
    for (v, &y) in labels.iter().enumerate() {
        if y == UNLABELED {
            continue;
        }
        let z = &cache.logits[v * N_CLASSES..(v + 1) * N_CLASSES];
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|&a| (a - m).exp()).sum::<f64>().ln();
        let w = class_weights[y as usize];
        loss += w * (lse - z[y as usize]);
        for c in 0..N_CLASSES {
            let prob = (z[c] - lse).exp();
            dlogits[v * N_CLASSES + c] = w * (prob - if c == y as usize { 1.0 } else { 0.0 });
        }
    }
    Ok((loss, backward(model, adj, &cache, &dlogits), total_w))
}

fn backward(model: &GcnModel, adj: &Adjacency, cache: &ForwardCache, dlogits: &[f64]) -> Vec<f64> {
    let n = adj.n_nodes();
    let hd = model.config.hidden;
    let lay = &model.layout;
    let p = &model.params;
    let mut grad = vec![0.0; p.len()];

    // Decoder, final ReLU and norm.
    let mut dz = ops::affine_backward(&cache.final_z, n, hd, &p[lay.dec_w.clone()], dlogits, N_CLASSES, &mut grad, lay.dec_w.clone(), lay.dec_b.clone());
    for (d, z) in dz.iter_mut().zip(&cache.final_z) {
        if *z <= 0.0 {
            *d = 0.0;
        }
    }
    let mut dh = ops::layer_norm_backward(&dz, &cache.final_xhat, &cache.final_inv, n, hd, &p[lay.final_gain.clone()], &mut grad, lay.final_gain.clone(), lay.final_shift.clone());

    for li in (0..lay.layers.len()).rev() {
        let c = &cache.blocks[li];
        let l = &lay.layers[li];
        // Residual: dh flows through unchanged and into the MLP output.
        let mut dhid = ops::affine_backward(&c.hid, n, hd, &p[l.w2.clone()], &dh, hd, &mut grad, l.w2.clone(), l.b2.clone());
        for i in 0..n * hd {
            if c.hid_pre[i] <= 0.0 {
                dhid[i] = 0.0;
            } else if !c.drop.is_empty() {
                dhid[i] *= c.drop[i];
            }
        }
        let du = ops::affine_backward(&c.u, n, hd, &p[l.w1.clone()], &dhid, hd, &mut grad, l.w1.clone(), l.b1.clone());
        let mut dzc = du.clone();
        conv_backward(model, li, adj, c, &du, &mut dzc, &mut grad);
        for (d, z) in dzc.iter_mut().zip(&c.z) {
            if *z <= 0.0 {
                *d = 0.0;
            }
        }
        let dnorm_in = ops::layer_norm_backward(&dzc, &c.xhat, &c.inv_std, n, hd, &p[l.norm_gain.clone()], &mut grad, l.norm_gain.clone(), l.norm_shift.clone());
        for (a, b) in dh.iter_mut().zip(&dnorm_in) {
            *a += b;
        }
    }
    ops::affine_backward(&cache.x, n, model.config.in_dim, &p[lay.enc_w.clone()], &dh, hd, &mut grad, lay.enc_w.clone(), lay.enc_b.clone());
    grad
}

/// Backpropagates `du` through the message term `s·‖z_v‖·a/‖a‖`, with
/// `a = deg^y · agg`, into `dz`, and into the layer scalars.
fn conv_backward(model: &GcnModel, li: usize, adj: &Adjacency, c: &BlockCache, du: &[f64], dz: &mut [f64], grad: &mut [f64]) {
    let hd = model.config.hidden;
    let l = &model.layout.layers[li];
    let p = &model.params;
    let (agg_param, s, y) = (aggregation_scalar(&model.config, p[l.agg]), p[l.s], p[l.y_deg]);
    let mut dagg = vec![0.0; hd];
    let mut msgs: Vec<Vec<f64>> = Vec::new();
    for v in 0..adj.n_nodes() {
        if !c.active[v] {
            continue;
        }
        let nb = adj.neighbors(v);
        let deg = nb.len() as f64;
        let scale = deg.powf(y);
        let agg = &c.agg[v * hd..(v + 1) * hd];
        let zv = &c.z[v * hd..(v + 1) * hd];
        let g = &du[v * hd..(v + 1) * hd];
        let a_norm = scale * ops::norm(agg);
        let z_norm = ops::norm(zv);
        // Unit direction of the aggregate, and its projection on g.
        let dir: Vec<f64> = agg.iter().map(|x| scale * x / a_norm).collect();
        let dir_g: f64 = dir.iter().zip(g).map(|(a, b)| a * b).sum();
        grad[l.s] += z_norm * dir_g;
        if z_norm > 0.0 {
            for k in 0..hd {
                dz[v * hd + k] += s * dir_g * zv[k] / z_norm;
            }
        }
        // d(a/‖a‖)/da applied to s·‖z‖·g, then through a = scale·agg.
        let f = s * z_norm / a_norm;
        let mut da_dot_a = 0.0;
        for k in 0..hd {
            let da = f * (g[k] - dir[k] * dir_g);
            da_dot_a += da * scale * agg[k];
            dagg[k] = da * scale;
        }
        grad[l.y_deg] += deg.ln() * da_dot_a;

        msgs.clear();
        msgs.extend(nb.iter().map(|&w| message(&c.z[w * hd..(w + 1) * hd], None)));
        let refs: Vec<&[f64]> = msgs.iter().map(Vec::as_slice).collect();
        let mut dmsg = vec![vec![0.0; hd]; nb.len()];
        match model.config.aggregator {
            Aggregator::SoftMax => {
                grad[l.agg] += ops::softmax_channels_backward(&refs, agg_param, agg, &dagg, &mut dmsg);
            }
            Aggregator::PowerMean => {
                let dp = ops::powermean_channels_backward(&refs, agg_param, agg, &dagg, &mut dmsg);
                if p[l.agg].abs() >= 1e-3 {
                    grad[l.agg] += dp;
                }
            }
            Aggregator::Sum => {
                for d in dmsg.iter_mut() {
                    d.copy_from_slice(&dagg);
                }
            }
        }
        for (i, &w) in nb.iter().enumerate() {
            for k in 0..hd {
                // Message = ReLU(z) + eps.
                if c.z[w * hd + k] > 0.0 {
                    dz[w * hd + k] += dmsg[i][k];
                }
            }
        }
    }
}
