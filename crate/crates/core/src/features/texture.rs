//! Area variance over the graph neighborhood and GLCM Haralick statistics.

use crate::region_graph::RegionGraph;

use super::{FeatureWarnings, TileContext};

pub const GLCM_OFFSETS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];
pub const HARALICK_LEN: usize = 6;

/// Quantizes valid intensities to `levels` bins over their range. Invalid
/// pixels get level 0 but never enter a co-occurrence count.
pub fn quantize(values: &[f64], valid: &[bool], levels: usize) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .zip(valid)
        .filter(|(_, &ok)| ok)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)));
    values
        .iter()
        .zip(valid)
        .map(|(&v, &ok)| {
            if !ok || hi <= lo {
                0
            } else {
                (((v - lo) / (hi - lo) * levels as f64) as usize).min(levels - 1) as u8
            }
        })
        .collect()
}

/// Symmetric, normalized co-occurrence matrix of `levels`² entries for one
/// offset, counting pixel pairs that both satisfy `inside`. `None` when no
/// pair exists.
pub fn glcm(
    quantized: &[u8],
    width: usize,
    height: usize,
    pixels: &[usize],
    inside: impl Fn(usize) -> bool,
    offset: (isize, isize),
    levels: usize,
) -> Option<Vec<f64>> {
    let mut counts = vec![0u64; levels * levels];
    let mut total = 0u64;
    for &p in pixels {
        let (r, c) = ((p / width) as isize + offset.0, (p % width) as isize + offset.1);
        if r < 0 || c < 0 || r as usize >= height || c as usize >= width {
            continue;
        }
        let q = r as usize * width + c as usize;
        if !inside(q) {
            continue;
        }
        let (i, j) = (quantized[p] as usize, quantized[q] as usize);
        counts[i * levels + j] += 1;
        counts[j * levels + i] += 1;
        total += 2;
    }
    (total > 0).then(|| counts.iter().map(|&n| n as f64 / total as f64).collect())
}

/// Contrast, correlation, energy, entropy, homogeneity, dissimilarity.
/// Correlation of a single-level matrix is 1.
pub fn haralick(p: &[f64], levels: usize) -> [f64; HARALICK_LEN] {
    let mut mean = 0.0;
    for i in 0..levels {
        for j in 0..levels {
            mean += i as f64 * p[i * levels + j];
        }
    }
    let mut var = 0.0;
    let (mut contrast, mut cov, mut energy, mut entropy, mut homog, mut dissim) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..levels {
        for j in 0..levels {
            let v = p[i * levels + j];
            if v == 0.0 {
                continue;
            }
            let d = i as f64 - j as f64;
            contrast += d * d * v;
            dissim += d.abs() * v;
            homog += v / (1.0 + d * d);
            energy += v * v;
            entropy -= v * v.ln();
            var += (i as f64 - mean).powi(2) * v;
            cov += (i as f64 - mean) * (j as f64 - mean) * v;
        }
    }
    // Symmetric matrix: row and column marginals coincide.
    let correlation = if var > 1e-15 { cov / var } else { 1.0 };
    [contrast, correlation, energy, entropy.max(0.0), homog, dissim]
}

pub const TEXTURE_LEN: usize = 1 + HARALICK_LEN;

/// Vas followed by the six direction-averaged Haralick statistics.
pub fn compute_textural(node: usize, graph: &RegionGraph, ctx: &TileContext, warnings: &mut FeatureWarnings) -> Vec<f64> {
    let mut areas: Vec<usize> = std::iter::once(node)
        .chain(graph.neighbors(node).iter().copied())
        .map(|u| graph.area(u))
        .collect();
    areas.sort_unstable();
    let (_, sd) = super::physical::mean_std(areas.iter().map(|&a| a as f64));
    let mut out = vec![sd * sd];

    let pixels = graph.node_pixels(node);
    let levels = ctx.levels;
    let mut acc = [0.0; HARALICK_LEN];
    let mut used = 0;
    if pixels.len() >= 2 {
        let me = node as i64;
        for off in GLCM_OFFSETS {
            if let Some(p) = glcm(
                &ctx.quantized,
                graph.width(),
                graph.height(),
                pixels,
                |q| ctx.owner[q] == me,
                off,
                levels,
            ) {
                for (a, v) in acc.iter_mut().zip(haralick(&p, levels)) {
                    *a += v;
                }
                used += 1;
            }
        }
    }
    if used == 0 {
        warnings.small_texture += 1;
    } else {
        for a in &mut acc {
            *a /= used as f64;
        }
    }
    out.extend(acc);
    out
}
