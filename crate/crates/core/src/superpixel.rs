//! Superpixel segmentation of a tile into compact, 4-connected regions.
//!
//! The default [`LocalKMeans`] segmenter seeds cluster centers on a regular
//! grid and runs a local k-means in (intensity, row, col) space, each center
//! only competing for pixels within one grid step of itself. The raw
//! clustering is then post-processed so the label map satisfies the
//! [`LabelMap`] contract:
//!
//! 1. every label keeps only its largest 4-connected component; the other
//!    fragments are merged into the most similar adjacent region;
//! 2. regions larger than 3× the mean area are split into connected pieces;
//! 3. regions smaller than 1/16 of the mean area are merged into the most
//!    similar neighbour that stays under the 3× cap.
//!
//! Other algorithms can be plugged in through the [`Segmenter`] trait.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster_io::{Mask, RasterGrid};

/// Label carried by invalid (land / no-data) pixels.
pub const INVALID_LABEL: i32 = -1;

const MAX_AREA_FACTOR: f64 = 3.0;
const TINY_AREA_DIVISOR: f64 = 16.0;
const MAX_POST_PASSES: usize = 12;

/// Per-pixel superpixel ids, dense in `0..n_regions`; invalid pixels carry
/// [`INVALID_LABEL`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<i32>,
    n_regions: usize,
}

impl LabelMap {
    /// Validates range and density of `labels`. Connectivity is checked
    /// separately by [`LabelMap::is_connected`].
    pub fn new(width: usize, height: usize, labels: Vec<i32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} label map needs {} labels, got {}",
                width,
                height,
                width * height,
                labels.len()
            )));
        }
        let max = labels.iter().copied().max().unwrap_or(INVALID_LABEL);
        if labels.iter().any(|&l| l < INVALID_LABEL) {
            return Err(Error::invalid("labels must be >= -1"));
        }
        let n_regions = (max + 1) as usize;
        let mut seen = vec![false; n_regions];
        for &l in &labels {
            if l >= 0 {
                seen[l as usize] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::invalid(format!("label {missing} is unused; labels must be dense")));
        }
        Ok(Self {
            width,
            height,
            labels,
            n_regions,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> i32 {
        self.labels[row * self.width + col]
    }

    pub fn region_areas(&self) -> Vec<usize> {
        let mut areas = vec![0; self.n_regions];
        for &l in &self.labels {
            if l >= 0 {
                areas[l as usize] += 1;
            }
        }
        areas
    }

    /// True when every region's pixel set is 4-connected.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n_regions];
        let mut visited = vec![false; self.labels.len()];
        let mut queue = VecDeque::new();
        for start in 0..self.labels.len() {
            let l = self.labels[start];
            if l < 0 || visited[start] {
                continue;
            }
            if seen[l as usize] {
                // a second, disjoint component of an already-flooded label
                return false;
            }
            seen[l as usize] = true;
            visited[start] = true;
            queue.push_back(start);
            while let Some(p) = queue.pop_front() {
                for q in neighbors4(p, self.width, self.height) {
                    if !visited[q] && self.labels[q] == l {
                        visited[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        true
    }

    /// Binary form: `u32` width, height, K, then `i32` labels, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(12 + 4 * self.labels.len());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        buf.extend_from_slice(&(self.n_regions as u32).to_le_bytes());
        for &l in &self.labels {
            buf.extend_from_slice(&l.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Header("label map needs a 12-byte header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        let (width, height, k) = (word(0), word(1), word(2));
        let expected = 4 * width * height;
        if bytes.len() - 12 != expected {
            return Err(Error::PayloadSize {
                expected,
                found: bytes.len() - 12,
            });
        }
        let labels = bytes[12..]
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let map = Self::new(width, height, labels)?;
        if map.n_regions != k {
            return Err(Error::Header(format!(
                "header says K = {k}, labels give {}",
                map.n_regions
            )));
        }
        Ok(map)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[inline]
pub(crate) fn neighbors4(p: usize, width: usize, height: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (p / width, p % width);
    let up = (r > 0).then(|| p - width);
    let down = (r + 1 < height).then(|| p + width);
    let left = (c > 0).then(|| p - 1);
    let right = (c + 1 < width).then(|| p + 1);
    [up, left, right, down].into_iter().flatten()
}

/// Anything that can partition a tile into a [`LabelMap`].
pub trait Segmenter {
    fn segment(&self, tile: &RasterGrid) -> Result<LabelMap>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelParams {
    pub n_init: usize,
    pub max_iters: usize,
    /// Weight of one grid step of spatial distance relative to a unit of
    /// normalized intensity.
    pub spatial_weight: f64,
    pub seed: u64,
}

impl Default for SuperpixelParams {
    fn default() -> Self {
        Self {
            n_init: 3000,
            max_iters: 250,
            spatial_weight: 0.2,
            seed: 0,
        }
    }
}

/// Grid-seeded local k-means with connectivity and compactness repair.
#[derive(Debug, Clone, Default)]
pub struct LocalKMeans {
    pub params: SuperpixelParams,
}

impl LocalKMeans {
    pub fn new(params: SuperpixelParams) -> Self {
        Self { params }
    }
}

impl Segmenter for LocalKMeans {
    fn segment(&self, tile: &RasterGrid) -> Result<LabelMap> {
        segment(tile, &self.params)
    }
}

/// Segments `tile` with the default algorithm. `n_init` is clamped to the
/// number of valid pixels.
pub fn segment(tile: &RasterGrid, params: &SuperpixelParams) -> Result<LabelMap> {
    if params.n_init == 0 {
        return Err(Error::invalid("n_init must be >= 1"));
    }
    if !(params.spatial_weight.is_finite() && params.spatial_weight > 0.0) {
        return Err(Error::invalid("spatial weight must be positive"));
    }
    let n_valid = tile.valid_count();
    if n_valid == 0 {
        return Err(Error::invalid("tile has no valid pixels"));
    }
    let n_init = params.n_init.min(n_valid);
    let intensity = normalized_intensity(tile);
    let raw = kmeans_labels(tile, &intensity, n_init, params);
    let labels = repair(tile, &intensity, raw, n_init);
    LabelMap::new(tile.width(), tile.height(), labels)
}

/// Intensity mapped to [0, 1] between the valid minimum and the 99th
/// percentile, so isolated speckle peaks do not compress the dynamic range.
fn normalized_intensity(tile: &RasterGrid) -> Vec<f64> {
    let mut vals: Vec<f64> = tile
        .values()
        .iter()
        .zip(tile.valid())
        .filter(|(_, &ok)| ok)
        .map(|(&v, _)| v)
        .collect();
    vals.sort_by(f64::total_cmp);
    let lo = vals[0];
    let mut hi = vals[((vals.len() - 1) as f64 * 0.99).round() as usize];
    if hi <= lo {
        hi = vals[vals.len() - 1];
    }
    let span = hi - lo;
    tile.values()
        .iter()
        .map(|&v| if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 })
        .collect()
}

struct Center {
    intensity: f64,
    row: f64,
    col: f64,
}

fn kmeans_labels(tile: &RasterGrid, intensity: &[f64], n_init: usize, params: &SuperpixelParams) -> Vec<i32> {
    let (w, h) = (tile.width(), tile.height());
    let valid = tile.valid();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let rows = ((n_init as f64 * h as f64 / w as f64).sqrt().floor() as usize).clamp(1, n_init.min(h));
    let cols = (n_init / rows).clamp(1, w);
    let step_r = h as f64 / rows as f64;
    let step_c = w as f64 / cols as f64;
    let step = (step_r * step_c).sqrt().max(1.0);
    let jitter = step / 8.0;

    let mut centers = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let jr: f64 = if jitter > 0.5 { rng.random_range(-jitter..jitter) } else { 0.0 };
            let jc: f64 = if jitter > 0.5 { rng.random_range(-jitter..jitter) } else { 0.0 };
            let r = (((i as f64 + 0.5) * step_r + jr).floor() as usize).min(h - 1);
            let c = (((j as f64 + 0.5) * step_c + jc).floor() as usize).min(w - 1);
            let cell = (
                (i as f64 * step_r) as usize,
                (((i + 1) as f64 * step_r).ceil() as usize).min(h),
                (j as f64 * step_c) as usize,
                (((j + 1) as f64 * step_c).ceil() as usize).min(w),
            );
            if let Some(p) = place_seed(tile, intensity, r, c, cell) {
                centers.push(Center {
                    intensity: intensity[p],
                    row: (p / w) as f64,
                    col: (p % w) as f64,
                });
            }
        }
    }

    let spatial = (params.spatial_weight / step).powi(2);
    let radius = step.ceil() as isize;
    let mut labels = vec![-2i32; w * h];
    let mut best = vec![f64::INFINITY; w * h];
    let mut sums = vec![[0.0f64; 4]; centers.len()];
    for _ in 0..params.max_iters.max(1) {
        best.fill(f64::INFINITY);
        let mut next = vec![-2i32; w * h];
        for (k, ctr) in centers.iter().enumerate() {
            let (cr, cc) = (ctr.row.round() as isize, ctr.col.round() as isize);
            let r0 = (cr - radius).max(0) as usize;
            let r1 = ((cr + radius) as usize).min(h - 1);
            let c0 = (cc - radius).max(0) as usize;
            let c1 = ((cc + radius) as usize).min(w - 1);
            for r in r0..=r1 {
                let dr = r as f64 - ctr.row;
                for c in c0..=c1 {
                    let p = r * w + c;
                    if !valid[p] {
                        continue;
                    }
                    let dc = c as f64 - ctr.col;
                    let di = intensity[p] - ctr.intensity;
                    let d = di * di + spatial * (dr * dr + dc * dc);
                    if d < best[p] {
                        best[p] = d;
                        next[p] = k as i32;
                    }
                }
            }
        }
        let changed = next != labels;
        labels = next;
        if !changed {
            break;
        }
        for s in sums.iter_mut() {
            *s = [0.0; 4];
        }
        for (p, &l) in labels.iter().enumerate() {
            if l >= 0 {
                let s = &mut sums[l as usize];
                s[0] += intensity[p];
                s[1] += (p / w) as f64;
                s[2] += (p % w) as f64;
                s[3] += 1.0;
            }
        }
        for (ctr, s) in centers.iter_mut().zip(&sums) {
            if s[3] > 0.0 {
                ctr.intensity = s[0] / s[3];
                ctr.row = s[1] / s[3];
                ctr.col = s[2] / s[3];
            }
        }
    }
    labels
}

/// Picks the lowest-gradient valid pixel in the 3×3 neighbourhood of
/// (r, c), falling back to the nearest valid pixel of the seed's grid cell.
fn place_seed(
    tile: &RasterGrid,
    intensity: &[f64],
    r: usize,
    c: usize,
    cell: (usize, usize, usize, usize),
) -> Option<usize> {
    let (w, h) = (tile.width(), tile.height());
    let grad = |rr: usize, cc: usize| -> f64 {
        let at = |r2: usize, c2: usize| {
            let p = r2 * w + c2;
            if tile.valid()[p] { intensity[p] } else { intensity[rr * w + cc] }
        };
        let gx = at(rr, (cc + 1).min(w - 1)) - at(rr, cc.saturating_sub(1));
        let gy = at((rr + 1).min(h - 1), cc) - at(rr.saturating_sub(1), cc);
        gx * gx + gy * gy
    };
    let mut best: Option<(f64, usize)> = None;
    for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
        for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
            let p = rr * w + cc;
            if !tile.valid()[p] {
                continue;
            }
            let g = grad(rr, cc);
            if best.is_none_or(|(bg, _)| g < bg) {
                best = Some((g, p));
            }
        }
    }
    if let Some((_, p)) = best {
        return Some(p);
    }
    let (r0, r1, c0, c1) = cell;
    let mut nearest: Option<(usize, usize)> = None;
    for rr in r0..r1 {
        for cc in c0..c1 {
            let p = rr * w + cc;
            if tile.valid()[p] {
                let d = rr.abs_diff(r).pow(2) + cc.abs_diff(c).pow(2);
                if nearest.is_none_or(|(bd, _)| d < bd) {
                    nearest = Some((d, p));
                }
            }
        }
    }
    nearest.map(|(_, p)| p)
}

/// Union-find over region ids with per-root area and intensity sums.
struct Regions {
    parent: Vec<usize>,
    area: Vec<usize>,
    sum: Vec<f64>,
    /// Original component ids owned by each root.
    members: Vec<Vec<usize>>,
}

impl Regions {
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union_into(&mut self, from: usize, into: usize) {
        self.parent[from] = into;
        self.area[into] += self.area[from];
        self.sum[into] += self.sum[from];
        let moved = std::mem::take(&mut self.members[from]);
        self.members[into].extend(moved);
    }

    fn mean(&self, root: usize) -> f64 {
        self.sum[root] / self.area[root] as f64
    }
}

/// Relabels every 4-connected run of equal raw labels as its own component.
/// Returns component ids per pixel (-1 for invalid) and the component count.
fn components(raw: &[i32], valid: &[bool], w: usize, h: usize) -> (Vec<i32>, usize) {
    let mut comp = vec![-1i32; raw.len()];
    let mut n = 0usize;
    let mut queue = VecDeque::new();
    for start in 0..raw.len() {
        if !valid[start] || comp[start] >= 0 {
            continue;
        }
        let l = raw[start];
        comp[start] = n as i32;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for q in neighbors4(p, w, h) {
                if valid[q] && comp[q] < 0 && raw[q] == l {
                    comp[q] = n as i32;
                    queue.push_back(q);
                }
            }
        }
        n += 1;
    }
    (comp, n)
}

/// Sorted, deduplicated adjacency pairs (a < b) between component ids.
fn adjacency(comp: &[i32], w: usize, h: usize) -> Vec<Vec<usize>> {
    let n = comp.iter().copied().max().map_or(0, |m| (m + 1) as usize);
    let mut adj = vec![Vec::new(); n];
    for p in 0..comp.len() {
        let a = comp[p];
        if a < 0 {
            continue;
        }
        let (r, c) = (p / w, p % w);
        if c + 1 < w {
            let b = comp[p + 1];
            if b >= 0 && b != a {
                adj[a as usize].push(b as usize);
                adj[b as usize].push(a as usize);
            }
        }
        if r + 1 < h {
            let b = comp[p + w];
            if b >= 0 && b != a {
                adj[a as usize].push(b as usize);
                adj[b as usize].push(a as usize);
            }
        }
    }
    for list in adj.iter_mut() {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

fn region_table(comp: &[i32], n: usize, intensity: &[f64]) -> Regions {
    let mut area = vec![0usize; n];
    let mut sum = vec![0.0; n];
    for (p, &c) in comp.iter().enumerate() {
        if c >= 0 {
            area[c as usize] += 1;
            sum[c as usize] += intensity[p];
        }
    }
    Regions {
        parent: (0..n).collect(),
        area,
        sum,
        members: (0..n).map(|c| vec![c]).collect(),
    }
}

/// Most intensity-similar neighbour root of `root`, optionally restricted
/// to merges that keep the result at or under `cap` pixels. Ties go to the
/// lower root id.
fn best_neighbor(
    regions: &mut Regions,
    adj: &[Vec<usize>],
    root: usize,
    eligible: impl Fn(usize) -> bool,
    cap: Option<usize>,
) -> Option<usize> {
    let touching: Vec<usize> = regions.members[root]
        .iter()
        .flat_map(|&m| adj[m].iter().copied())
        .collect();
    let mut roots: Vec<usize> = touching
        .into_iter()
        .map(|n| regions.find(n))
        .filter(|&n| n != root)
        .collect();
    roots.sort_unstable();
    roots.dedup();
    let mean = regions.mean(root);
    let mut best: Option<(f64, usize)> = None;
    for n in roots {
        if !eligible(n) {
            continue;
        }
        if let Some(cap) = cap {
            if regions.area[n] + regions.area[root] > cap {
                continue;
            }
        }
        let d = (regions.mean(n) - mean).abs();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, n));
        }
    }
    best.map(|(_, n)| n)
}

fn apply_union(comp: &[i32], regions: &mut Regions) -> Vec<i32> {
    comp.iter()
        .map(|&c| if c < 0 { -1 } else { regions.find(c as usize) as i32 })
        .collect()
}

fn repair(tile: &RasterGrid, intensity: &[f64], raw: Vec<i32>, n_init: usize) -> Vec<i32> {
    let (w, h) = (tile.width(), tile.height());
    let valid = tile.valid();

    // 1. keep the largest component of each k-means label; fragments and
    //    unreached pixels (-2) are orphans
    let (comp, n) = components(&raw, valid, w, h);
    let mut regions = region_table(&comp, n, intensity);
    let mut owner_best: std::collections::HashMap<i32, usize> = std::collections::HashMap::new();
    let mut comp_label = vec![0i32; n];
    for (p, &c) in comp.iter().enumerate() {
        if c >= 0 {
            comp_label[c as usize] = raw[p];
        }
    }
    for (c, &l) in comp_label.iter().enumerate() {
        if l < 0 {
            continue;
        }
        let e = owner_best.entry(l).or_insert(c);
        if regions.area[c] > regions.area[*e] {
            *e = c;
        }
    }
    let mut anchored = vec![false; n];
    for &c in owner_best.values() {
        anchored[c] = true;
    }
    let adj = adjacency(&comp, w, h);
    // orphans attach to anchored regions; repeat so chains of orphans resolve
    loop {
        let mut progress = false;
        let mut pending = false;
        for c in 0..n {
            if anchored[c] || regions.find(c) != c {
                continue;
            }
            let target = best_neighbor(&mut regions, &adj, c, |r| anchored[r], None);
            match target {
                Some(t) => {
                    regions.union_into(c, t);
                    progress = true;
                }
                None => pending = true,
            }
        }
        if !pending {
            break;
        }
        if !progress {
            // isolated orphan islands become regions of their own
            for c in 0..n {
                if !anchored[c] && regions.find(c) == c {
                    anchored[c] = true;
                }
            }
        }
    }
    let mut labels = apply_union(&comp, &mut regions);

    // 2–3. rebalance: merge tiny regions, split oversized ones, keeping
    //      the region count within n_init
    for _ in 0..MAX_POST_PASSES {
        let (comp, n) = components(&labels, valid, w, h);
        let mut regions = region_table(&comp, n, intensity);
        let mean_area = regions.area.iter().sum::<usize>() as f64 / n as f64;
        let cap = (MAX_AREA_FACTOR * mean_area).floor() as usize;
        let tiny = mean_area / TINY_AREA_DIVISOR;
        let pieces_for = |area: usize| ((area as f64 / mean_area).round() as usize).max(2);
        let wanted: usize = (0..n)
            .filter(|&c| regions.area[c] > cap)
            .map(|c| pieces_for(regions.area[c]) - 1)
            .sum();
        let required_merges = (n + wanted).saturating_sub(n_init);

        let adj = adjacency(&comp, w, h);
        let mut order: Vec<usize> = (0..n).filter(|&c| regions.area[c] <= cap).collect();
        order.sort_by_key(|&c| (regions.area[c], c));
        let mut merges = 0;
        for c in order {
            let root = regions.find(c);
            let area = regions.area[root];
            if merges >= required_merges && (area as f64) >= tiny {
                break;
            }
            if root != c || area > cap {
                continue;
            }
            if let Some(t) = best_neighbor(&mut regions, &adj, root, |_| true, Some(cap)) {
                regions.union_into(root, t);
                merges += 1;
            }
        }
        let merged = apply_union(&comp, &mut regions);

        let mut budget = n_init.saturating_sub(n - merges);
        let mut plan = Vec::new();
        for c in 0..n {
            if regions.find(c) == c && regions.area[c] > cap && budget > 0 {
                let pieces = pieces_for(regions.area[c]).min(budget + 1);
                budget -= pieces - 1;
                plan.push((c, pieces));
            }
        }
        if merges == 0 && plan.is_empty() {
            break;
        }
        labels = split_regions(&merged, n, &plan, w, h);
    }

    // hard cap on the region count: fold the smallest regions into their
    // most similar neighbours
    let (comp, n) = components(&labels, valid, w, h);
    if n > n_init {
        let mut regions = region_table(&comp, n, intensity);
        let adj = adjacency(&comp, w, h);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&c| (regions.area[c], c));
        let mut count = n;
        for c in order {
            if count <= n_init {
                break;
            }
            let root = regions.find(c);
            if let Some(t) = best_neighbor(&mut regions, &adj, root, |_| true, None) {
                regions.union_into(root, t);
                count -= 1;
            }
        }
        labels = apply_union(&comp, &mut regions);
    } else {
        labels = comp;
    }

    // final pass guarantees connectivity and dense ids in raster order
    let (comp, _) = components(&labels, valid, w, h);
    comp
}

/// Splits each planned `(label, pieces)` region into pieces of equal size.
/// Each piece is a breadth-first prefix grown inside the remaining pixels,
/// so it is connected; leftovers are separated by the next component pass.
fn split_regions(labels_in: &[i32], n: usize, plan: &[(usize, usize)], w: usize, h: usize) -> Vec<i32> {
    let mut labels = labels_in.to_vec();
    let mut planned = vec![false; n];
    for &(c, _) in plan {
        planned[c] = true;
    }
    let mut pixels: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (p, &c) in labels_in.iter().enumerate() {
        if c >= 0 && planned[c as usize] {
            pixels[c as usize].push(p);
        }
    }
    let mut next_label = n as i32;
    let mut taken = vec![false; labels_in.len()];
    let mut queue = VecDeque::new();
    for &(c, pieces) in plan {
        let region = &pixels[c];
        let target = region.len().div_ceil(pieces);
        for _ in 0..pieces - 1 {
            let Some(&start) = region.iter().find(|&&p| !taken[p]) else {
                break;
            };
            let mut grown = 0;
            taken[start] = true;
            queue.clear();
            queue.push_back(start);
            while let Some(p) = queue.pop_front() {
                labels[p] = next_label;
                grown += 1;
                if grown == target {
                    break;
                }
                for q in neighbors4(p, w, h) {
                    if !taken[q] && labels_in[q] == c as i32 {
                        taken[q] = true;
                        queue.push_back(q);
                    }
                }
            }
            // queued-but-unvisited pixels return to the pool
            for &p in &queue {
                taken[p] = false;
            }
            next_label += 1;
        }
    }
    labels
}

/// Marks every pixel with a 4-neighbour of a different label.
pub fn boundary_map(labels: &LabelMap) -> Mask {
    let (w, h) = (labels.width, labels.height);
    let bits = (0..w * h)
        .map(|p| neighbors4(p, w, h).any(|q| labels.labels[q] != labels.labels[p]))
        .collect();
    Mask::new(w, h, bits).expect("dimensions match by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n_init: usize) -> SuperpixelParams {
        SuperpixelParams {
            n_init,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn uniform_grid_gives_balanced_regions() {
        let tile = RasterGrid::filled(64, 64, 1.0);
        let map = segment(&tile, &params(4)).unwrap();
        assert_eq!(map.n_regions(), 4);
        for a in map.region_areas() {
            assert!((512..=1536).contains(&a), "area {a}");
        }
        assert!(map.is_connected());
    }

    #[test]
    fn single_pixel_tile() {
        let tile = RasterGrid::filled(1, 1, 0.5);
        let map = segment(&tile, &params(1)).unwrap();
        assert_eq!(map.labels(), &[0]);
        assert_eq!(map.n_regions(), 1);
    }

    #[test]
    fn n_init_is_clamped_to_valid_pixels() {
        let tile = RasterGrid::new(3, 2, vec![0.1, 0.5, 0.9, 0.2, 0.6, 0.3]).unwrap();
        let map = segment(&tile, &params(100)).unwrap();
        assert!(map.n_regions() <= 6);
        assert!(map.is_connected());
    }

    #[test]
    fn two_tone_edge_is_recovered() {
        let values = (0..64 * 64)
            .map(|p| if p % 64 < 32 { 0.2 } else { 0.8 })
            .collect();
        let tile = RasterGrid::new(64, 64, values).unwrap();
        let map = segment(&tile, &params(8)).unwrap();
        let boundary = boundary_map(&map);
        let mut hits = 0;
        let mut total = 0;
        for r in 0..64usize {
            for c in [31usize, 32] {
                total += 1;
                let near = (r.saturating_sub(1)..=(r + 1).min(63))
                    .any(|rr| (c - 1..=c + 1).any(|cc| boundary.get(rr, cc)));
                if near {
                    hits += 1;
                }
            }
        }
        assert!(hits as f64 / total as f64 >= 0.95);
        // no region straddles the edge
        for r in 0..64 {
            assert_ne!(map.get(r, 31), map.get(r, 32));
        }
    }

    #[test]
    fn invalid_pixels_get_sentinel() {
        let mut tile = RasterGrid::filled(8, 8, 1.0);
        let valid = (0..64).map(|p| p % 8 < 5).collect();
        tile.set_mask(valid).unwrap();
        let map = segment(&tile, &params(4)).unwrap();
        for p in 0..64 {
            assert_eq!(map.labels()[p] == INVALID_LABEL, p % 8 >= 5);
        }
        assert_eq!(map.region_areas().iter().sum::<usize>(), 40);
    }

    #[test]
    fn rejects_empty_tiles_and_zero_n_init() {
        let mut tile = RasterGrid::filled(4, 4, 1.0);
        assert!(segment(&tile, &params(0)).is_err());
        tile.set_mask(vec![false; 16]).unwrap();
        assert!(segment(&tile, &params(2)).is_err());
    }

    #[test]
    fn boundary_map_cases() {
        let single = LabelMap::new(3, 2, vec![0; 6]).unwrap();
        assert_eq!(boundary_map(&single).count_ones(), 0);

        let halves = LabelMap::new(4, 3, (0..12).map(|p| if p % 4 < 2 { 0 } else { 1 }).collect()).unwrap();
        let b = boundary_map(&halves);
        for r in 0..3 {
            assert_eq!(
                (0..4).map(|c| b.get(r, c)).collect::<Vec<_>>(),
                vec![false, true, true, false]
            );
        }
    }

    #[test]
    fn label_map_validation_and_bytes() {
        assert!(LabelMap::new(2, 1, vec![0, 2]).is_err());
        assert!(LabelMap::new(2, 1, vec![0]).is_err());
        let map = LabelMap::new(3, 1, vec![1, -1, 0]).unwrap();
        assert_eq!(map.n_regions(), 2);
        assert_eq!(LabelMap::from_bytes(&map.to_bytes()).unwrap(), map);
        let disconnected = LabelMap::new(3, 1, vec![0, 1, 0]).unwrap();
        assert!(!disconnected.is_connected());
    }
}
