//! Synthetic SAR-like scenes: a constant-mean sea surface with
//! multiplicative gamma speckle and darker elliptical or ribbon-shaped spots.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::raster_io::{write_f32raw, write_mask, Mask, RasterGrid};

#[derive(Debug, Clone, PartialEq)]
pub enum SpotShape {
    /// Center (row, col), semi-axes (a, b) in pixels, orientation in radians.
    Ellipse {
        center: (f64, f64),
        semi_axes: (f64, f64),
        orientation: f64,
    },
    /// Quadratic Bezier centerline through `start`, `control`, `end`
    /// (row, col), with full width `width`.
    Ribbon {
        start: (f64, f64),
        control: (f64, f64),
        end: (f64, f64),
        width: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spot {
    pub shape: SpotShape,
    /// Fractional intensity drop inside the spot, in (0, 1).
    pub contrast: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub size: usize,
    pub background_mean: f64,
    pub speckle_looks: f64,
    pub spots: Vec<Spot>,
    pub seed: u64,
}

const RIBBON_SEGMENTS: usize = 64;

impl SpotShape {
    /// Whether the pixel center (row + 0.5, col + 0.5) lies inside.
    fn contains(&self, row: usize, col: usize) -> bool {
        let (y, x) = (row as f64 + 0.5, col as f64 + 0.5);
        match *self {
            SpotShape::Ellipse {
                center,
                semi_axes,
                orientation,
            } => {
                let (dy, dx) = (y - center.0, x - center.1);
                let (s, c) = orientation.sin_cos();
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                (u / semi_axes.0).powi(2) + (v / semi_axes.1).powi(2) <= 1.0
            }
            SpotShape::Ribbon {
                start,
                control,
                end,
                width,
            } => {
                let half = width / 2.0;
                let mut prev = start;
                for i in 1..=RIBBON_SEGMENTS {
                    let next = bezier(start, control, end, i as f64 / RIBBON_SEGMENTS as f64);
                    if segment_distance((y, x), prev, next) <= half {
                        return true;
                    }
                    prev = next;
                }
                false
            }
        }
    }

    fn bounds_ok(&self, size: usize) -> bool {
        let s = size as f64;
        let inside = |p: (f64, f64)| p.0 >= 0.0 && p.1 >= 0.0 && p.0 <= s && p.1 <= s;
        match *self {
            SpotShape::Ellipse {
                center, semi_axes, ..
            } => {
                let r = semi_axes.0.max(semi_axes.1);
                semi_axes.0 > 0.0
                    && semi_axes.1 > 0.0
                    && inside((center.0 - r, center.1 - r))
                    && inside((center.0 + r, center.1 + r))
            }
            SpotShape::Ribbon {
                start,
                control,
                end,
                width,
            } => width > 0.0 && inside(start) && inside(control) && inside(end),
        }
    }
}

fn bezier(a: (f64, f64), b: (f64, f64), c: (f64, f64), t: f64) -> (f64, f64) {
    let u = 1.0 - t;
    (
        u * u * a.0 + 2.0 * u * t * b.0 + t * t * c.0,
        u * u * a.1 + 2.0 * u * t * b.1 + t * t * c.1,
    )
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dy, dx) = (b.0 - a.0, b.1 - a.1);
    let len2 = dy * dy + dx * dx;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dy + (p.1 - a.1) * dx) / len2).clamp(0.0, 1.0)
    };
    ((p.0 - a.0 - t * dy).powi(2) + (p.1 - a.1 - t * dx).powi(2)).sqrt()
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::invalid("scene size must be positive"));
        }
        if !(self.background_mean > 0.0 && self.background_mean.is_finite()) {
            return Err(Error::invalid("background_mean must be positive"));
        }
        if !(self.speckle_looks > 0.0 && self.speckle_looks.is_finite()) {
            return Err(Error::invalid("speckle_looks must be positive"));
        }
        for spot in &self.spots {
            if !(spot.contrast > 0.0 && spot.contrast < 1.0) {
                return Err(Error::invalid(format!("spot contrast {} outside (0, 1)", spot.contrast)));
            }
            if !spot.shape.bounds_ok(self.size) {
                return Err(Error::invalid("spot extends outside the scene"));
            }
        }
        Ok(())
    }

    /// Noise-free mean field and the truth mask.
    pub fn mean_field(&self) -> (Vec<f64>, Mask) {
        let n = self.size;
        let mut field = vec![self.background_mean; n * n];
        let mut truth = Mask::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                // Overlapping spots take the strongest drop.
                let drop = self
                    .spots
                    .iter()
                    .filter(|s| s.shape.contains(r, c))
                    .map(|s| s.contrast)
                    .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |a| a.max(x))));
                if let Some(d) = drop {
                    field[r * n + c] = self.background_mean * (1.0 - d);
                    truth.set(r, c, true);
                }
            }
        }
        (field, truth)
    }
}

/// Renders a scene: mean field times gamma(looks, 1/looks) speckle.
pub fn generate(spec: &SceneSpec) -> Result<(RasterGrid, Mask)> {
    spec.validate()?;
    let (mut field, truth) = spec.mean_field();
    let gamma = Gamma::new(spec.speckle_looks, 1.0 / spec.speckle_looks)
        .map_err(|e| Error::invalid(format!("speckle distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for v in &mut field {
        // Gamma samples can underflow to zero at very low looks; keep the
        // field strictly positive.
        *v *= gamma.sample(&mut rng).max(f64::MIN_POSITIVE);
    }
    Ok((RasterGrid::new(spec.size, spec.size, field)?, truth))
}

/// Ranges from which random scenes are drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDistribution {
    pub size: usize,
    pub background_mean: (f64, f64),
    pub speckle_looks: f64,
    pub contrast: (f64, f64),
    pub spots_per_scene: (usize, usize),
    /// Ellipse semi-axis range in pixels.
    pub ellipse_axis: (f64, f64),
    /// Ribbon width range in pixels.
    pub ribbon_width: (f64, f64),
    /// Probability that a spot is a ribbon.
    pub ribbon_fraction: f64,
}

impl Default for SceneDistribution {
    fn default() -> Self {
        Self {
            size: 128,
            background_mean: (0.8, 1.2),
            speckle_looks: 4.0,
            contrast: (0.3, 0.7),
            spots_per_scene: (1, 3),
            ellipse_axis: (5.0, 16.0),
            ribbon_width: (4.0, 9.0),
            ribbon_fraction: 0.4,
        }
    }
}

impl SceneDistribution {
    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, (lo, hi): (f64, f64)| {
            if lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} range must satisfy 0 < lo <= hi")))
            }
        };
        range("background_mean", self.background_mean)?;
        range("contrast", self.contrast)?;
        range("ellipse_axis", self.ellipse_axis)?;
        range("ribbon_width", self.ribbon_width)?;
        if self.contrast.1 >= 1.0 {
            return Err(Error::invalid("contrast must stay below 1"));
        }
        if self.spots_per_scene.0 > self.spots_per_scene.1 {
            return Err(Error::invalid("spots_per_scene range is inverted"));
        }
        if !(0.0..=1.0).contains(&self.ribbon_fraction) {
            return Err(Error::invalid("ribbon_fraction must be in [0, 1]"));
        }
        let margin = 2.0 * self.ellipse_axis.1.max(self.ribbon_width.1);
        if self.size < 32 || (self.size as f64) <= margin {
            return Err(Error::invalid("scene size too small for the spot ranges"));
        }
        if !(self.speckle_looks > 0.0) {
            return Err(Error::invalid("speckle_looks must be positive"));
        }
        Ok(())
    }

    /// Draws one scene spec; the same seed always yields the same spec.
    pub fn sample(&self, seed: u64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = self.size as f64;
        let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        };
        let n_spots = rng.random_range(self.spots_per_scene.0..=self.spots_per_scene.1);
        let mut spots = Vec::with_capacity(n_spots);
        for _ in 0..n_spots {
            let contrast = uniform(&mut rng, self.contrast);
            let shape = if rng.random_bool(self.ribbon_fraction) {
                let width = uniform(&mut rng, self.ribbon_width);
                let m = width;
                let point = |rng: &mut ChaCha8Rng| (rng.random_range(m..s - m), rng.random_range(m..s - m));
                SpotShape::Ribbon {
                    start: point(&mut rng),
                    control: point(&mut rng),
                    end: point(&mut rng),
                    width,
                }
            } else {
                let a = uniform(&mut rng, self.ellipse_axis);
                let b = uniform(&mut rng, (self.ellipse_axis.0, a.max(self.ellipse_axis.0)));
                let m = a + 1.0;
                SpotShape::Ellipse {
                    center: (rng.random_range(m..s - m), rng.random_range(m..s - m)),
                    semi_axes: (a, b),
                    orientation: rng.random_range(0.0..std::f64::consts::PI),
                }
            };
            spots.push(Spot { shape, contrast });
        }
        SceneSpec {
            size: self.size,
            background_mean: uniform(&mut rng, self.background_mean),
            speckle_looks: self.speckle_looks,
            spots,
            seed: rng.random(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split '{other}'"))),
        }
    }
}

/// Train/val/test sizes for a 6:2:2 split of `n` scenes.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let val = ((n as f64) * 0.2).round() as usize;
    let test = val;
    (n - val - test, val, test)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub name: String,
    pub spec: SceneSpec,
    pub split: Split,
    /// Set for scenes whose spots are all ribbons; those spots are treated
    /// as oil for the missed-oil rate.
    pub has_oil: bool,
}

/// Draws `n_scenes` specs and assigns a shuffled 6:2:2 split.
pub fn make_dataset(n_scenes: usize, dist: &SceneDistribution, seed: u64) -> Result<Vec<DatasetEntry>> {
    if n_scenes < 5 {
        return Err(Error::invalid("a dataset needs at least 5 scenes"));
    }
    dist.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene_seeds: Vec<u64> = (0..n_scenes).map(|_| rng.random()).collect();
    let (n_train, n_val, _) = split_counts(n_scenes);
    let mut order: Vec<usize> = (0..n_scenes).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut splits = vec![Split::Test; n_scenes];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(scene_seeds
        .iter()
        .zip(splits)
        .enumerate()
        .map(|(i, (&s, split))| {
            let spec = dist.sample(s);
            let has_oil = !spec.spots.is_empty() && spec.spots.iter().all(|sp| matches!(sp.shape, SpotShape::Ribbon { .. }));
            DatasetEntry {
                name: format!("scene_{i:04}"),
                spec,
                split,
                has_oil,
            }
        })
        .collect())
}

/// One row of the dataset manifest; paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub path: PathBuf,
    pub mask_path: PathBuf,
    pub split: Split,
    pub has_oil: bool,
}

/// Renders every scene into `dir` as f32raw plus an 8-bit truth mask and
/// writes `dir/manifest.csv`.
pub fn write_dataset(entries: &[DatasetEntry], dir: &Path) -> Result<Vec<ManifestRow>> {
    fs::create_dir_all(dir)?;
    let mut rows = Vec::with_capacity(entries.len());
    for e in entries {
        let (grid, truth) = generate(&e.spec)?;
        let path = PathBuf::from(format!("{}.f32", e.name));
        let mask_path = PathBuf::from(format!("{}_truth.pgm", e.name));
        write_f32raw(&grid, &dir.join(&path))?;
        write_mask(&truth, &dir.join(&mask_path))?;
        rows.push(ManifestRow {
            path,
            mask_path,
            split: e.split,
            has_oil: e.has_oil,
        });
    }
    write_manifest(&rows, &dir.join("manifest.csv"))?;
    Ok(rows)
}

pub fn write_manifest(rows: &[ManifestRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["path", "mask_path", "split", "has_oil"])?;
    for r in rows {
        w.write_record([
            r.path.to_string_lossy().as_ref(),
            r.mask_path.to_string_lossy().as_ref(),
            r.split.as_str(),
            if r.has_oil { "1" } else { "0" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "mask_path", "split", "has_oil"] {
        return Err(Error::Header(format!("unexpected manifest header in {}", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(ManifestRow {
            path: PathBuf::from(&rec[0]),
            mask_path: PathBuf::from(&rec[1]),
            split: rec[2].parse()?,
            has_oil: match &rec[3] {
                "1" => true,
                "0" => false,
                other => return Err(Error::invalid(format!("bad has_oil flag '{other}'"))),
            },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_spec(size: usize, seed: u64) -> SceneSpec {
        SceneSpec {
            size,
            background_mean: 1.0,
            speckle_looks: 4.0,
            spots: vec![],
            seed,
        }
    }

    #[test]
    fn empty_scene_mean_matches_background() {
        let (g, truth) = generate(&empty_spec(256, 3)).unwrap();
        assert_eq!(truth.count_ones(), 0);
        let mean = g.values().iter().sum::<f64>() / g.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!(g.values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn spot_contrast_ratio() {
        let mut spec = empty_spec(128, 9);
        spec.spots.push(Spot {
            shape: SpotShape::Ellipse {
                center: (64.0, 64.0),
                semi_axes: (30.0, 20.0),
                orientation: 0.4,
            },
            contrast: 0.6,
        });
        let (g, truth) = generate(&spec).unwrap();
        let (mut si, mut ni, mut so, mut no) = (0.0, 0, 0.0, 0);
        for (v, &t) in g.values().iter().zip(truth.bits()) {
            if t {
                si += v;
                ni += 1;
            } else {
                so += v;
                no += 1;
            }
        }
        let ratio = (si / ni as f64) / (so / no as f64);
        assert!((ratio - 0.4).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn truth_matches_analytic_indicator() {
        let spec = SceneDistribution::default().sample(17);
        let (_, truth) = generate(&spec).unwrap();
        for r in 0..spec.size {
            for c in 0..spec.size {
                let inside = spec.spots.iter().any(|s| s.shape.contains(r, c));
                assert_eq!(truth.get(r, c), inside);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SceneDistribution::default().sample(5);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.0.values(), b.0.values());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = empty_spec(64, 0);
        spec.spots.push(Spot {
            shape: SpotShape::Ellipse {
                center: (2.0, 2.0),
                semi_axes: (5.0, 5.0),
                orientation: 0.0,
            },
            contrast: 0.5,
        });
        assert!(generate(&spec).is_err());
        spec.spots[0].shape = SpotShape::Ellipse {
            center: (30.0, 30.0),
            semi_axes: (5.0, 5.0),
            orientation: 0.0,
        };
        spec.spots[0].contrast = 1.0;
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn split_sizes() {
        assert_eq!(split_counts(10), (6, 2, 2));
        assert_eq!(split_counts(5), (3, 1, 1));
        assert_eq!(split_counts(60), (36, 12, 12));
        for n in 5..80 {
            let ds = make_dataset(n, &SceneDistribution::default(), n as u64).unwrap();
            let (tr, va, te) = split_counts(n);
            let count = |s| ds.iter().filter(|e| e.split == s).count();
            assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (tr, va, te));
        }
        assert!(make_dataset(4, &SceneDistribution::default(), 0).is_err());
    }

    #[test]
    fn dataset_round_trips_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut dist = SceneDistribution::default();
        dist.size = 48;
        dist.ellipse_axis = (3.0, 8.0);
        dist.ribbon_width = (2.0, 4.0);
        let ds = make_dataset(5, &dist, 1).unwrap();
        let rows = write_dataset(&ds, dir.path()).unwrap();
        assert_eq!(read_manifest(&dir.path().join("manifest.csv")).unwrap(), rows);
        for r in &rows {
            assert!(dir.path().join(&r.path).exists());
            assert!(dir.path().join(&r.mask_path).exists());
        }
    }
}
