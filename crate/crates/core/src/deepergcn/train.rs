//! Mini-batch training with Adam, validation tracking and checkpoints.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, Confusion, Metric};

use super::{forward, weighted_loss_sum, Adjacency, Aggregator, GcnModel, Mode, ModelConfig, N_CLASSES, UNLABELED};

/// One graph prepared for the network.
#[derive(Debug, Clone)]
pub struct GraphSample {
    pub adjacency: Adjacency,
    /// Node features, N×D row-major.
    pub features: Vec<f64>,
    /// Class per node, or [`UNLABELED`].
    pub labels: Vec<u8>,
    /// Pixel count per node; validation counts are area-weighted.
    pub areas: Vec<u64>,
}

impl GraphSample {
    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive and finite"));
        }
        Ok(())
    }
}

/// Adam moments and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) {
    state.t += 1;
    let c1 = 1.0 - state.beta1.powi(state.t as i32);
    let c2 = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
}

/// Weights inversely proportional to class frequency, `n / (2·n_c)`.
/// A class with no nodes gets weight 0.
pub fn class_weights(samples: &[GraphSample]) -> Result<[f64; N_CLASSES]> {
    let mut counts = [0u64; N_CLASSES];
    for s in samples {
        for &y in &s.labels {
            if y != UNLABELED {
                counts[y as usize] += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::NoLabels);
    }
    Ok(counts.map(|c| if c == 0 { 0.0 } else { total as f64 / (N_CLASSES as f64 * c as f64) }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_p_d: Metric,
    pub val_p_f: Metric,
    pub val_p_acc: Metric,
    pub val_f1: Metric,
}

/// Model, optimizer state and completed epochs: everything needed to
/// continue training exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: GcnModel,
    pub optimizer: Option<AdamState>,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn fresh(model: GcnModel) -> Self {
        Self {
            model,
            optimizer: None,
            epoch: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// State after the last epoch, with optimizer moments.
    pub last: Checkpoint,
    /// Parameters with the best validation F1 (the last model when there
    /// is no validation set).
    pub best: GcnModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Argmax class per node; ties go to class 0.
pub fn predict(model: &GcnModel, adjacency: &Adjacency, features: &[f64]) -> Result<Vec<u8>> {
    let logits = forward(model, adjacency, features, Mode::Eval, None)?;
    Ok(logits
        .chunks_exact(N_CLASSES)
        .map(|z| {
            let mut best = 0;
            for c in 1..N_CLASSES {
                if z[c] > z[best] {
                    best = c;
                }
            }
            best as u8
        })
        .collect())
}

/// Area-weighted confusion of node predictions against node labels.
fn validate(model: &GcnModel, samples: &[GraphSample]) -> Result<Confusion> {
    let per_graph: Vec<Result<Confusion>> = samples
        .par_iter()
        .map(|s| {
            let pred = predict(model, &s.adjacency, &s.features)?;
            let mut c = Confusion::default();
            for ((&p, &y), &a) in pred.iter().zip(&s.labels).zip(&s.areas) {
                match (p == 1, y) {
                    (_, UNLABELED) => {}
                    (true, 1) => c.tp += a,
                    (false, 0) => c.tn += a,
                    (true, _) => c.fp += a,
                    (false, _) => c.fn_ += a,
                }
            }
            Ok(c)
        })
        .collect();
    let mut total = Confusion::default();
    for c in per_graph {
        total += c?;
    }
    Ok(total)
}

fn f1_metric(c: &Confusion) -> Metric {
    let den = 2 * c.tp + c.fp + c.fn_;
    if den == 0 {
        Metric::Undefined
    } else {
        Metric::Value(200.0 * c.tp as f64 / den as f64)
    }
}

fn check_samples(model: &GcnModel, samples: &[GraphSample]) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        let n = s.adjacency.n_nodes();
        if s.labels.len() != n || s.areas.len() != n || s.features.len() != n * model.config.in_dim {
            return Err(Error::DimensionMismatch(format!("sample {i}: inconsistent node counts")));
        }
    }
    Ok(())
}

/// Runs `config.epochs - start.epoch` further epochs. Each epoch shuffles
/// the training graphs, splits them into batches, and takes one Adam step
/// per batch on the class-weighted loss of the batch's disjoint union.
/// Randomness is derived from (seed, epoch, graph position), so results do
/// not depend on the thread count and a resumed run matches an
/// uninterrupted one.
pub fn train(start: Checkpoint, train_set: &[GraphSample], val_set: &[GraphSample], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::NoLabels);
    }
    let Checkpoint { mut model, optimizer, epoch } = start;
    check_samples(&model, train_set)?;
    check_samples(&model, val_set)?;
    let weights = class_weights(train_set)?;
    let mut adam = optimizer.unwrap_or_else(|| AdamState::new(model.n_params()));
    if adam.m.len() != model.n_params() || adam.v.len() != model.n_params() {
        return Err(Error::Checkpoint("optimizer state does not match the model".into()));
    }

    let mut history = Vec::new();
    let mut best = model.clone();
    let mut best_epoch = epoch;
    let mut best_f1 = f64::NEG_INFINITY;
    for e in epoch..config.epochs {
        let mut rng = epoch_rng(config.seed, e);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut weight_sum = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let parts: Vec<Result<(f64, Vec<f64>, f64)>> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &gi)| {
                    let s = &train_set[gi];
                    let mut drop_rng = epoch_rng(config.seed ^ 0x9e37_79b9_7f4a_7c15, e);
                    drop_rng.set_word_pos(((b * config.batch_size + k) as u128) << 40);
                    weighted_loss_sum(&model, &s.adjacency, &s.features, &s.labels, weights, Some(&mut drop_rng))
                })
                .collect();
            let mut grad = vec![0.0; model.n_params()];
            let mut batch_loss = 0.0;
            let mut batch_w = 0.0;
            for part in parts {
                let (l, g, w) = part?;
                batch_loss += l;
                batch_w += w;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            if batch_w == 0.0 {
                continue;
            }
            for g in &mut grad {
                *g /= batch_w;
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch: e + 1 });
            }
            adam_step(&mut model.params, &grad, &mut adam, config.learning_rate);
            loss_sum += batch_loss;
            weight_sum += batch_w;
        }
        if !model.is_finite() {
            return Err(Error::Diverged { epoch: e + 1 });
        }
        let train_loss = if weight_sum > 0.0 { loss_sum / weight_sum } else { 0.0 };
        let conf = validate(&model, val_set)?;
        let report = compute_metrics(&conf, None);
        let f1 = f1_metric(&conf);
        history.push(EpochRecord {
            epoch: e + 1,
            train_loss,
            val_p_d: report.p_d,
            val_p_f: report.p_f,
            val_p_acc: report.p_acc,
            val_f1: f1,
        });
        let score = if val_set.is_empty() { f64::INFINITY } else { f1.value().unwrap_or(0.0) };
        if score > best_f1 || val_set.is_empty() {
            best_f1 = score;
            best = model.clone();
            best_epoch = e + 1;
        }
    }
    Ok(TrainOutcome {
        last: Checkpoint {
            model,
            optimizer: Some(adam),
            epoch: config.epochs.max(epoch),
        },
        best,
        best_epoch,
        history,
    })
}

pub fn write_history_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_P_d", "val_P_f", "val_P_acc", "val_F1"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            format!("{:.6}", r.train_loss),
            r.val_p_d.to_string(),
            r.val_p_f.to_string(),
            r.val_p_acc.to_string(),
            r.val_f1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const MAGIC: &[u8; 8] = b"SGDCNGCN";
const VERSION: u32 = 1;

/// Little-endian binary checkpoint: header with the architecture, the
/// parameters as f64, then the optimizer state if present.
pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let cfg = &ckpt.model.config;
    let mut buf = Vec::with_capacity(64 + 8 * ckpt.model.n_params() * 3);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for d in [cfg.in_dim, cfg.hidden, cfg.n_layers, N_CLASSES] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.push(cfg.aggregator.code());
    for x in [cfg.dropout, cfg.agg_init, cfg.s_init, cfg.y_init] {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf.extend_from_slice(&(ckpt.epoch as u64).to_le_bytes());
    buf.extend_from_slice(&(ckpt.model.n_params() as u64).to_le_bytes());
    let put = |buf: &mut Vec<u8>, xs: &[f64]| {
        for x in xs {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    };
    put(&mut buf, &ckpt.model.params);
    match &ckpt.optimizer {
        None => buf.push(0),
        Some(a) => {
            buf.push(1);
            buf.extend_from_slice(&a.t.to_le_bytes());
            for x in [a.beta1, a.beta2, a.eps] {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            put(&mut buf, &a.m);
            put(&mut buf, &a.v);
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, at: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let in_dim = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    let n_classes = r.u32()? as usize;
    if n_classes != N_CLASSES {
        return Err(Error::Checkpoint(format!("{n_classes} classes, expected {N_CLASSES}")));
    }
    let aggregator = Aggregator::from_code(r.u8()?)?;
    let config = ModelConfig {
        in_dim,
        hidden,
        n_layers,
        aggregator,
        dropout: r.f64()?,
        agg_init: r.f64()?,
        s_init: r.f64()?,
        y_init: r.f64()?,
    };
    let epoch = r.u64()? as usize;
    let n = r.u64()? as usize;
    let params = r.f64s(n)?;
    let model = GcnModel::from_params(config, params).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let t = r.u64()?;
            let (beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?);
            let m = r.f64s(n)?;
            let v = r.f64s(n)?;
            Some(AdamState { t, beta1, beta2, eps, m, v })
        }
        f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
    };
    if r.at != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint { model, optimizer, epoch })
}
