//! Dense kernels and their adjoints. Row-major, sequential, so results
//! do not depend on the thread count.

use std::ops::Range;

use super::NORM_EPS;

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `x (n×k) · w (k×m) + b`.
pub fn affine(x: &[f64], n: usize, k: usize, w: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        out.extend_from_slice(b);
        let row = &mut out[i * m..(i + 1) * m];
        for (j, &xv) in x[i * k..(i + 1) * k].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, &wv) in row.iter_mut().zip(&w[j * m..(j + 1) * m]) {
                *o += xv * wv;
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients of [`affine`] into `grad` and
/// returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn affine_backward(
    x: &[f64],
    n: usize,
    k: usize,
    w: &[f64],
    dy: &[f64],
    m: usize,
    grad: &mut [f64],
    w_range: Range<usize>,
    b_range: Range<usize>,
) -> Vec<f64> {
    let mut dx = vec![0.0; n * k];
    for i in 0..n {
        let dyi = &dy[i * m..(i + 1) * m];
        for (g, d) in grad[b_range.clone()].iter_mut().zip(dyi) {
            *g += d;
        }
        let xi = &x[i * k..(i + 1) * k];
        let dxi = &mut dx[i * k..(i + 1) * k];
        for j in 0..k {
            let wrow = &w[j * m..(j + 1) * m];
            dxi[j] = wrow.iter().zip(dyi).map(|(a, b)| a * b).sum();
            let xv = xi[j];
            if xv != 0.0 {
                let gw = &mut grad[w_range.start + j * m..w_range.start + (j + 1) * m];
                for (g, d) in gw.iter_mut().zip(dyi) {
                    *g += xv * d;
                }
            }
        }
    }
    dx
}

/// Per-row normalization over channels. Returns (x̂, 1/σ, gain·x̂ + shift).
pub fn layer_norm(x: &[f64], n: usize, h: usize, gain: &[f64], shift: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut xhat = vec![0.0; n * h];
    let mut inv = vec![0.0; n];
    let mut y = vec![0.0; n * h];
    for i in 0..n {
        let row = &x[i * h..(i + 1) * h];
        let mu = row.iter().sum::<f64>() / h as f64;
        let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / h as f64;
        let s = 1.0 / (var + NORM_EPS).sqrt();
        inv[i] = s;
        for c in 0..h {
            let xh = (row[c] - mu) * s;
            xhat[i * h + c] = xh;
            y[i * h + c] = gain[c] * xh + shift[c];
        }
    }
    (xhat, inv, y)
}

#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward(
    dy: &[f64],
    xhat: &[f64],
    inv: &[f64],
    n: usize,
    h: usize,
    gain: &[f64],
    grad: &mut [f64],
    gain_range: Range<usize>,
    shift_range: Range<usize>,
) -> Vec<f64> {
    let mut dx = vec![0.0; n * h];
    let hf = h as f64;
    for i in 0..n {
        let dyi = &dy[i * h..(i + 1) * h];
        let xh = &xhat[i * h..(i + 1) * h];
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for c in 0..h {
            grad[gain_range.start + c] += dyi[c] * xh[c];
            grad[shift_range.start + c] += dyi[c];
            let d = dyi[c] * gain[c];
            mean_d += d;
            mean_dx += d * xh[c];
        }
        mean_d /= hf;
        mean_dx /= hf;
        for c in 0..h {
            dx[i * h + c] = inv[i] * (dyi[c] * gain[c] - mean_d - xh[c] * mean_dx);
        }
    }
    dx
}

/// Softmax weights of one channel, shifted by the maximum for stability.
fn channel_weights(msgs: &[&[f64]], c: usize, beta: f64, w: &mut Vec<f64>) {
    w.clear();
    let top = msgs.iter().map(|m| beta * m[c]).fold(f64::NEG_INFINITY, f64::max);
    w.extend(msgs.iter().map(|m| (beta * m[c] - top).exp()));
    let total: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= total;
    }
}

/// Channel `c` of every message in ascending order, so that sums over it
/// do not depend on neighbor order.
fn sorted_channel(msgs: &[&[f64]], c: usize, vals: &mut Vec<f64>) {
    vals.clear();
    vals.extend(msgs.iter().map(|m| m[c]));
    vals.sort_unstable_by(f64::total_cmp);
}

pub fn softmax_channels(msgs: &[&[f64]], beta: f64, out: &mut [f64]) {
    let mut vals = Vec::with_capacity(msgs.len());
    let mut w = Vec::with_capacity(msgs.len());
    for (c, o) in out.iter_mut().enumerate() {
        sorted_channel(msgs, c, &mut vals);
        let top = vals.iter().map(|v| beta * v).fold(f64::NEG_INFINITY, f64::max);
        w.clear();
        w.extend(vals.iter().map(|v| (beta * v - top).exp()));
        let total: f64 = w.iter().sum();
        *o = vals.iter().zip(&w).map(|(v, wu)| wu / total * v).sum();
    }
}

/// Adds message gradients into `dmsg` and returns the β gradient.
/// With weights w_u, ∂agg/∂m_u = w_u (1 + β (m_u − agg)) and
/// ∂agg/∂β = Σ w_u m_u (m_u − agg).
pub fn softmax_channels_backward(msgs: &[&[f64]], beta: f64, agg: &[f64], dagg: &[f64], dmsg: &mut [Vec<f64>]) -> f64 {
    let mut w = Vec::with_capacity(msgs.len());
    let mut dbeta = 0.0;
    for c in 0..agg.len() {
        if dagg[c] == 0.0 {
            continue;
        }
        channel_weights(msgs, c, beta, &mut w);
        let mut cov = 0.0;
        for (u, m) in msgs.iter().enumerate() {
            let dev = m[c] - agg[c];
            dmsg[u][c] += dagg[c] * w[u] * (1.0 + beta * dev);
            cov += w[u] * m[c] * dev;
        }
        dbeta += dagg[c] * cov;
    }
    dbeta
}

pub fn powermean_channels(msgs: &[&[f64]], p: f64, out: &mut [f64]) {
    let n = msgs.len() as f64;
    let mut vals = Vec::with_capacity(msgs.len());
    for (c, o) in out.iter_mut().enumerate() {
        sorted_channel(msgs, c, &mut vals);
        let s = vals.iter().map(|v| v.powf(p)).sum::<f64>() / n;
        *o = s.powf(1.0 / p);
    }
}

/// ∂M/∂m_u = m_u^(p−1) M^(1−p) / n and
/// ∂M/∂p = M (Σ m^p ln m / (p Σ m^p) − ln S / p²) with S = mean m^p.
pub fn powermean_channels_backward(msgs: &[&[f64]], p: f64, agg: &[f64], dagg: &[f64], dmsg: &mut [Vec<f64>]) -> f64 {
    let n = msgs.len() as f64;
    let mut dp = 0.0;
    for c in 0..agg.len() {
        if dagg[c] == 0.0 {
            continue;
        }
        let m_agg = agg[c];
        let lead = m_agg.powf(1.0 - p) / n;
        let mut sp = 0.0;
        let mut sp_ln = 0.0;
        for (u, m) in msgs.iter().enumerate() {
            let mp = m[c].powf(p);
            dmsg[u][c] += dagg[c] * lead * m[c].powf(p - 1.0);
            sp += mp;
            sp_ln += mp * m[c].ln();
        }
        let s_mean = sp / n;
        dp += dagg[c] * m_agg * (sp_ln / (p * sp) - s_mean.ln() / (p * p));
    }
    dp
}
