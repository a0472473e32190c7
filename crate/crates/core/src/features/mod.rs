//! Per-node feature vectors: the 48-feature catalogue, expanded into flat
//! columns, plus min-max normalization fitted on training data.
//!
//! Columns follow catalogue order, multi-valued features expanded in place,
//! and are named `code[index]`.

mod physical;
mod shape;
mod texture;

use std::fs;
use std::path::Path;

pub use physical::{compute_physical, sobel_magnitude, PHYSICAL_LEN};
pub use shape::{compute_geometric, geometric_len};
pub use texture::{compute_textural, glcm, haralick, quantize, GLCM_OFFSETS, TEXTURE_LEN};

use crate::error::{Error, Result};
use crate::raster_io::RasterGrid;
use crate::region_graph::RegionGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Geometrical,
    Physical,
    Textural,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSpec {
    pub code: &'static str,
    pub category: Category,
    pub dim: usize,
}

use Category::{Geometrical as G, Physical as Ph, Textural as Tx};

/// Catalogue codes in table order; `0` marks the EFD entry, whose
/// dimensionality depends on the harmonic count.
const CATALOGUE: [(&str, Category, usize); 48] = [
    ("A", G, 1),
    ("P", G, 1),
    ("P/A", G, 1),
    ("A/P", G, 1),
    ("E", G, 1),
    ("Maxx/P", G, 1),
    ("Cp1", G, 1),
    ("Cp2", G, 1),
    ("C", G, 1),
    ("S", G, 1),
    ("Sw", G, 1),
    ("Cu", G, 1),
    ("Hu", G, 7),
    ("Fs", G, 4),
    ("T", G, 1),
    ("Shc", G, 1),
    ("Ff", G, 1),
    ("L/W", G, 1),
    ("Si", G, 1),
    ("N", G, 1),
    ("Rs", G, 1),
    ("Mr", G, 1),
    ("Sd", G, 1),
    ("IABPm", G, 1),
    ("Vas", Tx, 1),
    ("H", Tx, 6),
    ("Om", Ph, 1),
    ("Osd", Ph, 1),
    ("Bm", Ph, 1),
    ("Bsd", Ph, 1),
    ("Crm", Ph, 1),
    ("Crstd", Ph, 1),
    ("Opm", Ph, 1),
    ("Bpm", Ph, 1),
    ("Opm/Bpm", Ph, 1),
    ("Cmax", Ph, 1),
    ("Cm", Ph, 1),
    ("RISDI", Ph, 1),
    ("RISDO", Ph, 1),
    ("IOR", Ph, 1),
    ("Gm", Ph, 1),
    ("Gsd", Ph, 1),
    ("Gmax", Ph, 1),
    ("Obg", Ph, 1),
    ("Spm", Ph, 1),
    ("RIIA", Ph, 1),
    ("EFD", G, 0),
    ("IABPsd", G, 1),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    /// Gray levels for co-occurrence matrices.
    pub glcm_levels: usize,
    /// Elliptic Fourier harmonics; each contributes two columns.
    pub efd_harmonics: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            glcm_levels: 8,
            efd_harmonics: 5,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=256).contains(&self.glcm_levels) {
            return Err(Error::invalid("glcm_levels must be in 2..=256"));
        }
        if self.efd_harmonics == 0 {
            return Err(Error::invalid("efd_harmonics must be positive"));
        }
        Ok(())
    }
}

pub fn catalogue(config: &FeatureConfig) -> Vec<FeatureSpec> {
    CATALOGUE
        .iter()
        .map(|&(code, category, dim)| FeatureSpec {
            code,
            category,
            dim: if dim == 0 { 2 * config.efd_harmonics } else { dim },
        })
        .collect()
}

pub fn column_names(config: &FeatureConfig) -> Vec<String> {
    catalogue(config)
        .iter()
        .flat_map(|s| (0..s.dim).map(move |i| format!("{}[{i}]", s.code)))
        .collect()
}

/// Counts of documented fallbacks taken while computing features.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FeatureWarnings {
    /// A ratio with a zero denominator was replaced by 0.
    pub zero_mean: usize,
    /// Node without neighbors; background fell back to tile statistics.
    pub isolated: usize,
    /// Region too small for co-occurrence statistics; texture set to 0.
    pub small_texture: usize,
}

impl std::ops::AddAssign for FeatureWarnings {
    fn add_assign(&mut self, o: Self) {
        self.zero_mean += o.zero_mean;
        self.isolated += o.isolated;
        self.small_texture += o.small_texture;
    }
}

/// Per-tile data shared by all nodes of a graph.
pub struct TileContext<'a> {
    pub grid: &'a RasterGrid,
    pub gradient: Vec<f64>,
    pub quantized: Vec<u8>,
    pub levels: usize,
    /// Node id per pixel, -1 for pixels outside every node.
    pub owner: Vec<i64>,
    /// Mean and standard deviation of all valid tile pixels.
    pub tile_stats: (f64, f64),
}

impl<'a> TileContext<'a> {
    pub fn new(graph: &RegionGraph, grid: &'a RasterGrid, levels: usize) -> Result<Self> {
        if graph.width() != grid.width() || graph.height() != grid.height() {
            return Err(Error::DimensionMismatch(format!(
                "graph {}x{} vs grid {}x{}",
                graph.width(),
                graph.height(),
                grid.width(),
                grid.height()
            )));
        }
        let mut owner = vec![-1i64; grid.len()];
        for v in 0..graph.n_nodes() {
            for &p in graph.node_pixels(v) {
                owner[p] = v as i64;
            }
        }
        let tile_stats = physical::mean_std(grid.values().iter().zip(grid.valid()).filter(|(_, &ok)| ok).map(|(&v, _)| v));
        Ok(Self {
            grid,
            gradient: sobel_magnitude(grid),
            quantized: quantize(grid.values(), grid.valid(), levels),
            levels,
            owner,
            tile_stats,
        })
    }
}

/// Row-major node × column matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub columns: Vec<String>,
    pub n_rows: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(columns: Vec<String>, n_rows: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * columns.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} rows of {} columns",
                data.len(),
                n_rows,
                columns.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { columns, n_rows, data })
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_cols();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols() + col]
    }

    /// Keeps the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(self.n_rows * cols.len());
        for r in 0..self.n_rows {
            let row = self.row(r);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        FeatureMatrix {
            columns: cols.iter().map(|&c| self.columns[c].clone()).collect(),
            n_rows: self.n_rows,
            data,
        }
    }

    /// Keeps the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols());
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            columns: self.columns.clone(),
            n_rows: rows.len(),
            data,
        }
    }

    /// Stacks matrices with identical columns.
    pub fn vstack<'a>(parts: impl IntoIterator<Item = &'a FeatureMatrix>) -> Result<FeatureMatrix> {
        let mut iter = parts.into_iter();
        let first = iter.next().ok_or_else(|| Error::invalid("nothing to stack"))?;
        let mut out = first.clone();
        for m in iter {
            if m.columns != out.columns {
                return Err(Error::DimensionMismatch("stacked matrices differ in columns".into()));
            }
            out.data.extend_from_slice(&m.data);
            out.n_rows += m.n_rows;
        }
        Ok(out)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        for r in 0..self.n_rows {
            w.write_record(self.row(r).iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<FeatureMatrix> {
        let mut r = csv::Reader::from_path(path)?;
        let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut data = Vec::new();
        let mut n_rows = 0;
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != columns.len() {
                return Err(Error::Header(format!("row {n_rows} has {} fields", rec.len())));
            }
            for field in rec.iter() {
                data.push(field.parse::<f64>().map_err(|e| Error::invalid(format!("bad value '{field}': {e}")))?);
            }
            n_rows += 1;
        }
        FeatureMatrix::new(columns, n_rows, data)
    }
}

/// Feature matrix for every node of a tile graph, plus fallback counts.
pub fn assemble_matrix(graph: &RegionGraph, grid: &RasterGrid, config: &FeatureConfig) -> Result<(FeatureMatrix, FeatureWarnings)> {
    config.validate()?;
    let ctx = TileContext::new(graph, grid, config.glcm_levels)?;
    let specs = catalogue(config);
    let columns = column_names(config);
    let mut warnings = FeatureWarnings::default();
    let mut data = Vec::with_capacity(graph.n_nodes() * columns.len());
    for v in 0..graph.n_nodes() {
        let geo = compute_geometric(graph.node_pixels(v), graph.width(), config.efd_harmonics);
        let phys = compute_physical(v, graph, &ctx, &mut warnings);
        let tex = compute_textural(v, graph, &ctx, &mut warnings);
        let (mut gi, mut pi, mut ti) = (geo.into_iter(), phys.into_iter(), tex.into_iter());
        for s in &specs {
            let src: &mut dyn Iterator<Item = f64> = match s.category {
                Category::Geometrical => &mut gi,
                Category::Physical => &mut pi,
                Category::Textural => &mut ti,
            };
            data.extend(src.take(s.dim));
        }
    }
    Ok((FeatureMatrix::new(columns, graph.n_nodes(), data)?, warnings))
}

/// Per-column minimum and maximum of the training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub columns: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    pub fn fit(train: &FeatureMatrix) -> Result<Normalizer> {
        if train.n_rows == 0 {
            return Err(Error::invalid("cannot fit a normalizer on zero rows"));
        }
        let d = train.n_cols();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for r in 0..train.n_rows {
            for (c, &v) in train.row(r).iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        Ok(Normalizer {
            columns: train.columns.clone(),
            min,
            max,
        })
    }

    /// Maps each column linearly onto [0, 1] and clamps; constant columns
    /// map to 0.
    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        if m.columns != self.columns {
            return Err(Error::DimensionMismatch("normalizer columns differ from matrix".into()));
        }
        let d = m.n_cols();
        let data = m
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = i % d;
                let span = self.max[c] - self.min[c];
                if span > 0.0 {
                    ((v - self.min[c]) / span).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        Ok(FeatureMatrix {
            columns: m.columns.clone(),
            n_rows: m.n_rows,
            data,
        })
    }

    /// Header of column names, then a row of minima and a row of maxima.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        w.write_record(self.min.iter().map(|v| v.to_string()))?;
        w.write_record(self.max.iter().map(|v| v.to_string()))?;
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Normalizer> {
        let m = FeatureMatrix::read_csv(path)?;
        if m.n_rows != 2 {
            return Err(Error::Header(format!("normalizer file has {} rows, expected 2", m.n_rows)));
        }
        Ok(Normalizer {
            columns: m.columns.clone(),
            min: m.row(0).to_vec(),
            max: m.row(1).to_vec(),
        })
    }
}

/// Writes one column name per line.
pub fn write_column_list(names: &[String], path: &Path) -> Result<()> {
    let mut s = names.join("\n");
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_column_list(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region_graph::build_graph;
    use crate::superpixel::LabelMap;

    #[test]
    fn catalogue_shape() {
        let cfg = FeatureConfig::default();
        let cat = catalogue(&cfg);
        assert_eq!(cat.len(), 48);
        let d: usize = cat.iter().map(|s| s.dim).sum();
        assert_eq!(d, 71);
        assert_eq!(column_names(&cfg).len(), d);
        assert_eq!(geometric_len(5) + PHYSICAL_LEN + TEXTURE_LEN, d);
        let cfg8 = FeatureConfig {
            efd_harmonics: 8,
            ..cfg
        };
        assert_eq!(column_names(&cfg8).len(), 77);
    }

    #[test]
    fn constant_region_in_constant_surround() {
        // 6x6 tile: a 2x2 block of 0.2 inside 0.8.
        let mut labels = vec![1i32; 36];
        let mut values = vec![0.8; 36];
        for p in [14, 15, 20, 21] {
            labels[p] = 0;
            values[p] = 0.2;
        }
        let lm = LabelMap::new(6, 6, labels).unwrap();
        let g = build_graph(&lm);
        let grid = RasterGrid::new(6, 6, values).unwrap();
        let ctx = TileContext::new(&g, &grid, 8).unwrap();
        let mut w = FeatureWarnings::default();
        let ph = compute_physical(0, &g, &ctx, &mut w);
        assert!((ph[0] - 0.2).abs() < 1e-12);
        assert!(ph[1].abs() < 1e-12);
        assert!((ph[2] - 0.8).abs() < 1e-12);
        assert!(ph[3].abs() < 1e-12);
        assert!((ph[10] - 0.6).abs() < 1e-12);
        assert!(ph[6].abs() < 1e-12);
    }

    #[test]
    fn isolated_node_uses_tile_stats() {
        let lm = LabelMap::new(4, 4, vec![0; 16]).unwrap();
        let g = build_graph(&lm);
        let values: Vec<f64> = (0..16).map(|i| i as f64 + 1.0).collect();
        let grid = RasterGrid::new(4, 4, values).unwrap();
        let (m, w) = assemble_matrix(&g, &grid, &FeatureConfig::default()).unwrap();
        assert_eq!(w.isolated, 1);
        let bm = m.columns.iter().position(|c| c == "Bm[0]").unwrap();
        assert!((m.get(0, bm) - 8.5).abs() < 1e-12);
    }

    #[test]
    fn normalizer_rules() {
        let cols = vec!["a[0]".to_string(), "b[0]".to_string()];
        let m = FeatureMatrix::new(cols.clone(), 2, vec![2.0, 5.0, 4.0, 5.0]).unwrap();
        let n = Normalizer::fit(&m).unwrap();
        let out = n.apply(&m).unwrap();
        assert_eq!(out.data, vec![0.0, 0.0, 1.0, 0.0]);
        let test = FeatureMatrix::new(cols, 1, vec![10.0, 1.0]).unwrap();
        assert_eq!(n.apply(&test).unwrap().data, vec![1.0, 0.0]);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = FeatureMatrix::new(vec!["x[0]".into(), "y[0]".into()], 2, vec![0.1, 1e-300, -3.5, 1.0 / 3.0]).unwrap();
        let p = dir.path().join("m.csv");
        m.write_csv(&p).unwrap();
        assert_eq!(FeatureMatrix::read_csv(&p).unwrap(), m);
        let n = Normalizer::fit(&m).unwrap();
        let p = dir.path().join("n.csv");
        n.write_csv(&p).unwrap();
        assert_eq!(Normalizer::read_csv(&p).unwrap(), n);
    }
}
