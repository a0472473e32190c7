//! Intensity, contrast and gradient descriptors of a region against its
//! graph neighborhood.

use crate::raster_io::RasterGrid;
use crate::region_graph::RegionGraph;

use super::{FeatureWarnings, TileContext};

/// Sobel gradient magnitude. Invalid or out-of-range neighbors take the
/// center value.
pub fn sobel_magnitude(grid: &RasterGrid) -> Vec<f64> {
    let (w, h) = (grid.width(), grid.height());
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            if !grid.is_valid(r, c) {
                continue;
            }
            let center = grid.value(r, c);
            let at = |dr: isize, dc: isize| {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr < 0 || cc < 0 || rr as usize >= h || cc as usize >= w || !grid.is_valid(rr as usize, cc as usize) {
                    center
                } else {
                    grid.value(rr as usize, cc as usize)
                }
            };
            let gx = (at(-1, 1) + 2.0 * at(0, 1) + at(1, 1)) - (at(-1, -1) + 2.0 * at(0, -1) + at(1, -1));
            let gy = (at(1, -1) + 2.0 * at(1, 0) + at(1, 1)) - (at(-1, -1) + 2.0 * at(-1, 0) + at(-1, 1));
            out[r * w + c] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// Population mean and standard deviation; (0, 0) for an empty input.
pub(crate) fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

fn ratio(num: f64, den: f64, warnings: &mut FeatureWarnings) -> f64 {
    if den == 0.0 {
        warnings.zero_mean += 1;
        0.0
    } else {
        num / den
    }
}

pub const PHYSICAL_LEN: usize = 20;

/// Physical descriptors in catalogue order (Om through RIIA).
pub fn compute_physical(node: usize, graph: &RegionGraph, ctx: &TileContext, warnings: &mut FeatureWarnings) -> Vec<f64> {
    let grid = ctx.grid;
    let values = grid.values();
    let pixels = graph.node_pixels(node);
    let (om, osd) = mean_std(pixels.iter().map(|&p| values[p]));
    let region_min = pixels.iter().map(|&p| values[p]).fold(f64::INFINITY, f64::min);

    let (bm, bsd) = if graph.degree(node) == 0 {
        warnings.isolated += 1;
        ctx.tile_stats
    } else {
        // Raster order keeps the sums independent of node numbering.
        let mut bg: Vec<usize> = graph.neighbors(node).iter().flat_map(|&u| graph.node_pixels(u).iter().copied()).collect();
        bg.sort_unstable();
        mean_std(bg.iter().map(|&p| values[p]))
    };

    let (crm, crstd) = mean_std(pixels.iter().map(|&p| values[p]).filter(|&v| v > 0.0).map(|v| bm / v));

    let opm = ratio(osd, om, warnings);
    let bpm = ratio(bsd, bm, warnings);
    let opm_bpm = ratio(opm, bpm, warnings);

    let grad = &ctx.gradient;
    let (gm, gsd) = mean_std(pixels.iter().map(|&p| grad[p]));
    let gmax = pixels.iter().map(|&p| grad[p]).fold(0.0f64, f64::max);

    // Region boundary pixels and the one-ring band just outside.
    let (w, h) = (grid.width(), grid.height());
    let owner = &ctx.owner;
    let me = node as i64;
    let mut border_grad = Vec::new();
    let mut band: Vec<usize> = Vec::new();
    for &p in pixels {
        let (r, c) = (p / w, p % w);
        let mut on_border = false;
        for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
            let (rr, cc) = (r as isize + dr, c as isize + dc);
            if rr < 0 || cc < 0 || rr as usize >= h || cc as usize >= w {
                on_border = true;
                continue;
            }
            let q = rr as usize * w + cc as usize;
            if owner[q] != me {
                on_border = true;
                if owner[q] >= 0 {
                    band.push(q);
                }
            }
        }
        if on_border {
            border_grad.push(grad[p]);
        }
    }
    band.sort_unstable();
    band.dedup();
    let obg = mean_std(border_grad.iter().copied()).0;
    let spm = if band.is_empty() {
        bpm
    } else {
        let (sm, ssd) = mean_std(band.iter().map(|&q| values[q]));
        ratio(ssd, sm, warnings)
    };

    vec![
        om,
        osd,
        bm,
        bsd,
        crm,
        crstd,
        opm,
        bpm,
        opm_bpm,
        bm - region_min,
        bm - om,
        ratio(osd, om, warnings),
        ratio(bsd, om, warnings),
        ratio(om, bm, warnings),
        gm,
        gsd,
        gmax,
        obg,
        spm,
        ratio(bm - om, bm, warnings),
    ]
}
