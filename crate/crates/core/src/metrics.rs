//! Pixel-level evaluation (detection, false alarm, accuracy and missed-oil
//! rates) and a plain Otsu global-threshold baseline.

use std::fmt;
use std::fs;
use std::ops::{Add, AddAssign};
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster_io::{Mask, RasterGrid};

/// Pixel confusion counts; "positive" means dark spot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for Confusion {
    fn add_assign(&mut self, o: Confusion) {
        *self = *self + o;
    }
}

/// Tallies `pred` against `truth` over pixels where `valid` is set.
pub fn confusion(pred: &Mask, truth: &Mask, valid: &[bool]) -> Result<Confusion> {
    if pred.width() != truth.width() || pred.height() != truth.height() || valid.len() != pred.bits().len() {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{}, truth {}x{}, validity {} pixels",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height(),
            valid.len()
        )));
    }
    let mut c = Confusion::default();
    for ((&p, &t), &ok) in pred.bits().iter().zip(truth.bits()).zip(valid) {
        if !ok {
            continue;
        }
        match (p, t) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// A percentage, or the reason it has no value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Value(f64),
    /// Zero denominator.
    Undefined,
    /// No oil ground truth available.
    NotApplicable,
}

impl Metric {
    fn ratio(num: u64, den: u64) -> Metric {
        if den == 0 {
            Metric::Undefined
        } else {
            Metric::Value(100.0 * num as f64 / den as f64)
        }
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            Metric::Value(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Value(v) => write!(f, "{v:.2}"),
            Metric::Undefined => f.write_str("undefined"),
            Metric::NotApplicable => f.write_str("n/a"),
        }
    }
}

/// Missed-oil pixel counts: `missed` oil pixels out of `all` oil pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OilCounts {
    pub missed: u64,
    pub all: u64,
}

impl AddAssign for OilCounts {
    fn add_assign(&mut self, o: OilCounts) {
        self.missed += o.missed;
        self.all += o.all;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub p_d: Metric,
    pub p_f: Metric,
    pub p_acc: Metric,
    pub p_m: Metric,
}

pub fn compute_metrics(c: &Confusion, oil: Option<OilCounts>) -> MetricsReport {
    MetricsReport {
        p_d: Metric::ratio(c.tp, c.tp + c.fn_),
        p_f: Metric::ratio(c.fp, c.tp + c.fp),
        p_acc: Metric::ratio(c.tp + c.tn, c.total()),
        p_m: match oil {
            Some(o) => Metric::ratio(o.missed, o.all),
            None => Metric::NotApplicable,
        },
    }
}

/// Evaluation of a set of tiles: per-tile rows plus the pooled totals.
#[derive(Debug, Clone, Default)]
pub struct Evaluation {
    pub tiles: Vec<(String, Confusion, Option<OilCounts>)>,
}

impl Evaluation {
    pub fn push(&mut self, name: impl Into<String>, c: Confusion, oil: Option<OilCounts>) {
        self.tiles.push((name.into(), c, oil));
    }

    pub fn pooled(&self) -> (Confusion, Option<OilCounts>) {
        let mut total = Confusion::default();
        let mut oil: Option<OilCounts> = None;
        for (_, c, o) in &self.tiles {
            total += *c;
            if let Some(o) = o {
                *oil.get_or_insert_with(OilCounts::default) += *o;
            }
        }
        (total, oil)
    }

    pub fn overall(&self) -> MetricsReport {
        let (c, oil) = self.pooled();
        compute_metrics(&c, oil)
    }

    /// CSV with one row per tile and a final `overall` row. Percentages are
    /// printed with four decimals so reruns are byte-identical.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scope,tp,tn,fp,fn,p_d,p_f,p_acc,p_m\n");
        let row = |out: &mut String, name: &str, c: &Confusion, m: &MetricsReport| {
            let fmt = |x: &Metric| match x {
                Metric::Value(v) => format!("{v:.4}"),
                other => other.to_string(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                name,
                c.tp,
                c.tn,
                c.fp,
                c.fn_,
                fmt(&m.p_d),
                fmt(&m.p_f),
                fmt(&m.p_acc),
                fmt(&m.p_m)
            ));
        };
        for (name, c, oil) in &self.tiles {
            row(&mut out, name, c, &compute_metrics(c, *oil));
        }
        let (c, oil) = self.pooled();
        row(&mut out, "overall", &c, &compute_metrics(&c, oil));
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "+--------+-----------+")?;
        writeln!(f, "| metric |     value |")?;
        writeln!(f, "+--------+-----------+")?;
        for (name, m) in [("P_d", self.p_d), ("P_f", self.p_f), ("P_acc", self.p_acc), ("P_m", self.p_m)] {
            writeln!(f, "| {name:<6} | {:>9} |", m.to_string())?;
        }
        write!(f, "+--------+-----------+")
    }
}

pub const OTSU_BINS: usize = 256;

/// 256-bin histogram of valid intensities over their [min, max] range.
/// Returns `None` when fewer than two distinct values are present.
pub fn otsu_histogram(grid: &RasterGrid) -> Option<([u64; OTSU_BINS], f64, f64)> {
    let (lo, hi) = grid.valid_range()?;
    if hi <= lo {
        return None;
    }
    let mut hist = [0u64; OTSU_BINS];
    for (&v, &ok) in grid.values().iter().zip(grid.valid()) {
        if ok {
            hist[otsu_bin(v, lo, hi)] += 1;
        }
    }
    Some((hist, lo, hi))
}

#[inline]
pub fn otsu_bin(v: f64, lo: f64, hi: f64) -> usize {
    (((v - lo) / (hi - lo) * OTSU_BINS as f64) as usize).min(OTSU_BINS - 1)
}

/// Cut bin `t` maximizing between-class variance, where class 0 holds
/// bins `0..=t`. Ties go to the lower cut.
pub fn otsu_cut(hist: &[u64; OTSU_BINS]) -> usize {
    let total: u64 = hist.iter().sum();
    let total_sum: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();
    let mut w0 = 0u64;
    let mut sum0 = 0.0;
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (t, &h) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += h;
        sum0 += t as f64 * h as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let mu0 = sum0 / w0 as f64;
        let mu1 = (total_sum - sum0) / w1 as f64;
        let between = (w0 as f64 / total as f64) * (w1 as f64 / total as f64) * (mu0 - mu1).powi(2);
        if between > best.0 {
            best = (between, t);
        }
    }
    best.1
}

/// Intensity threshold found by Otsu's method (upper edge of the cut bin),
/// or `None` for a single-valued grid.
pub fn otsu_threshold(grid: &RasterGrid) -> Option<f64> {
    let (hist, lo, hi) = otsu_histogram(grid)?;
    let t = otsu_cut(&hist);
    Some(lo + (t + 1) as f64 * (hi - lo) / OTSU_BINS as f64)
}

/// Global Otsu segmentation: valid pixels in bins at or below the cut are
/// dark spots. A single-valued grid yields an all-sea mask and `false`.
pub fn otsu_baseline(grid: &RasterGrid) -> (Mask, bool) {
    let mut mask = Mask::zeros(grid.width(), grid.height());
    let Some((hist, lo, hi)) = otsu_histogram(grid) else {
        return (mask, false);
    };
    let t = otsu_cut(&hist);
    for (i, (&v, &ok)) in grid.values().iter().zip(grid.valid()).enumerate() {
        if ok && otsu_bin(v, lo, hi) <= t {
            mask.bits_mut()[i] = true;
        }
    }
    (mask, true)
}
