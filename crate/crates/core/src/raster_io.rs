//! Intensity rasters: loading, Lee speckle filtering, tiling and mask I/O.
//!
//! Two on-disk formats are supported:
//!
//! * `pgm16`: binary PGM (`P5`), normally with maxval 65535 (big-endian
//!   samples); 8-bit files are accepted on read.
//! * `f32raw`: `u32` width, `u32` height (little-endian), then
//!   `width * height` little-endian `f32` values in row-major order.
//!
//! A sidecar validity mask may sit next to any raster, with the same stem
//! and a `.mask` extension, stored as PGM where 0 marks an invalid pixel.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// 2D intensity field with a per-pixel validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl RasterGrid {
    /// Builds an all-valid grid. Values must be finite and non-negative.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let valid = vec![true; values.len()];
        Self::with_mask(width, height, values, valid)
    }

    pub fn with_mask(
        width: usize,
        height: usize,
        values: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if values.len() != width * height || valid.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} grid needs {} values, got {} values and {} mask entries",
                width,
                height,
                width * height,
                values.len(),
                valid.len()
            )));
        }
        for (i, (&v, &ok)) in values.iter().zip(&valid).enumerate() {
            if ok && !(v.is_finite() && v >= 0.0) {
                return Err(Error::NonFinite(i));
            }
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
            valid: vec![true; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[self.index(row, col)]
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[self.index(row, col)]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Replaces the validity mask, keeping values.
    pub fn set_mask(&mut self, valid: Vec<bool>) -> Result<()> {
        if valid.len() != self.values.len() {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} entries, grid has {}",
                valid.len(),
                self.values.len()
            )));
        }
        for (i, (&v, &ok)) in self.values.iter().zip(&valid).enumerate() {
            if ok && !(v.is_finite() && v >= 0.0) {
                return Err(Error::NonFinite(i));
            }
        }
        self.valid = valid;
        Ok(())
    }

    /// (min, max) over valid pixels, or `None` if no pixel is valid.
    pub fn valid_range(&self) -> Option<(f64, f64)> {
        self.values
            .iter()
            .zip(&self.valid)
            .filter(|(_, &ok)| ok)
            .fold(None, |acc, (&v, _)| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }
}

/// Per-pixel binary raster (dark-spot masks, predictions, boundaries).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} mask needs {} entries, got {}",
                width,
                height,
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.bits[row * self.width + col] = on;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Crops a `size`×`size` window at `origin`; out-of-range pixels are false.
    pub fn crop(&self, origin: (usize, usize), size: usize) -> Mask {
        let mut out = Mask::zeros(size, size);
        for r in 0..size {
            let src_r = origin.0 + r;
            if src_r >= self.height {
                break;
            }
            for c in 0..size {
                let src_c = origin.1 + c;
                if src_c >= self.width {
                    break;
                }
                out.set(r, c, self.get(src_r, src_c));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterFormat {
    Pgm16,
    F32Raw,
}

impl FromStr for RasterFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm16" | "pgm" => Ok(RasterFormat::Pgm16),
            "f32raw" | "f32" => Ok(RasterFormat::F32Raw),
            other => Err(Error::invalid(format!("unknown raster format `{other}`"))),
        }
    }
}

impl RasterFormat {
    /// Guesses the format from the file extension (`.pgm` or anything else = f32raw).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") => RasterFormat::Pgm16,
            _ => RasterFormat::F32Raw,
        }
    }
}

/// Path of the sidecar validity mask for `path`.
pub fn sidecar_mask_path(path: &Path) -> PathBuf {
    path.with_extension("mask")
}

/// Loads a raster; a sidecar `.mask` file, if present, supplies validity.
pub fn load_grid(path: &Path, format: RasterFormat) -> Result<RasterGrid> {
    let bytes = fs::read(path)?;
    let (width, height, values) = match format {
        RasterFormat::Pgm16 => {
            let pgm = decode_pgm(&bytes)?;
            let values = pgm.samples.iter().map(|&s| f64::from(s)).collect();
            (pgm.width, pgm.height, values)
        }
        RasterFormat::F32Raw => decode_f32raw(&bytes)?,
    };
    let sidecar = sidecar_mask_path(path);
    let valid = if sidecar.exists() {
        let pgm = decode_pgm(&fs::read(&sidecar)?)?;
        if pgm.width != width || pgm.height != height {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} does not match raster {}x{}",
                pgm.width, pgm.height, width, height
            )));
        }
        pgm.samples.iter().map(|&s| s != 0).collect()
    } else {
        vec![true; width * height]
    };
    RasterGrid::with_mask(width, height, values, valid)
}

fn decode_f32raw(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    if bytes.len() < 8 {
        return Err(Error::Header(format!(
            "f32raw needs an 8-byte header, file has {} bytes",
            bytes.len()
        )));
    }
    let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Header(format!("dimensions {width}x{height} overflow")))?;
    let payload = &bytes[8..];
    if payload.len() != expected {
        return Err(Error::PayloadSize {
            expected,
            found: payload.len(),
        });
    }
    let mut values = Vec::with_capacity(width * height);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite(i));
        }
        values.push(f64::from(v));
    }
    Ok((width, height, values))
}

/// Writes values as f32raw. The validity mask is written as a sidecar only
/// when some pixel is invalid (and any stale sidecar is removed otherwise).
pub fn write_f32raw(grid: &RasterGrid, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + 4 * grid.len());
    buf.extend_from_slice(&(grid.width as u32).to_le_bytes());
    buf.extend_from_slice(&(grid.height as u32).to_le_bytes());
    for &v in &grid.values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, buf)?;
    let sidecar = sidecar_mask_path(path);
    if grid.valid.iter().all(|&v| v) {
        if sidecar.exists() {
            fs::remove_file(sidecar)?;
        }
    } else {
        let mask = Mask::new(grid.width, grid.height, grid.valid.clone())?;
        write_mask(&mask, &sidecar)?;
    }
    Ok(())
}

/// Writes a 16-bit PGM, rounding and saturating values into `0..=65535`.
pub fn write_pgm16(grid: &RasterGrid, path: &Path) -> Result<()> {
    let mut buf = format!("P5\n{} {}\n65535\n", grid.width, grid.height).into_bytes();
    for &v in &grid.values {
        let s = v.round().clamp(0.0, 65535.0) as u16;
        buf.extend_from_slice(&s.to_be_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

struct Pgm {
    width: usize,
    height: usize,
    samples: Vec<u16>,
}

fn decode_pgm(bytes: &[u8]) -> Result<Pgm> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    if magic != "P5" {
        return Err(Error::Header(format!("expected P5 magic, found `{magic}`")));
    }
    let width = parse_header_field(bytes, &mut pos, "width")?;
    let height = parse_header_field(bytes, &mut pos, "height")?;
    let maxval = parse_header_field(bytes, &mut pos, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Header(format!("maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Header("missing whitespace after maxval".into()));
    }
    pos += 1;
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let expected = width * height * sample_bytes;
    let payload = &bytes[pos..];
    if payload.len() != expected {
        return Err(Error::PayloadSize {
            expected,
            found: payload.len(),
        });
    }
    let samples = if sample_bytes == 1 {
        payload.iter().map(|&b| u16::from(b)).collect()
    } else {
        payload
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    Ok(Pgm {
        width,
        height,
        samples,
    })
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Header("truncated PGM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::Header("non-ASCII PGM header".into()))
}

fn parse_header_field(bytes: &[u8], pos: &mut usize, name: &str) -> Result<usize> {
    let tok = next_token(bytes, pos)?;
    tok.parse()
        .map_err(|_| Error::Header(format!("bad {name} `{tok}`")))
}

/// Writes a binary mask as 8-bit PGM: 0 = sea, 255 = dark spot.
pub fn write_mask(mask: &Mask, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    write!(file, "P5\n{} {}\n255\n", mask.width, mask.height)?;
    let payload: Vec<u8> = mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    file.write_all(&payload)?;
    Ok(())
}

/// Reads a PGM mask; any nonzero sample is `true`.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let pgm = decode_pgm(&fs::read(path)?)?;
    Mask::new(
        pgm.width,
        pgm.height,
        pgm.samples.iter().map(|&s| s != 0).collect(),
    )
}

/// Multiplicative-noise Lee filter over a square `window`.
///
/// For each valid pixel with window mean `m` and population variance `v`
/// over the valid window pixels, the output is `m + w * (x - m)` where
/// `w = max(0, v - (cu * m)^2) / v`. Constant windows and windows with
/// fewer than two valid pixels leave the pixel unchanged. Invalid
/// pixels are copied through and never enter any statistics.
pub fn lee_filter(grid: &RasterGrid, window: usize, cu: f64) -> Result<RasterGrid> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::invalid(format!(
            "Lee window must be odd and >= 3, got {window}"
        )));
    }
    if grid.is_empty() {
        return Err(Error::invalid("Lee filter on an empty grid"));
    }
    if !(cu.is_finite() && cu >= 0.0) {
        return Err(Error::invalid(format!("noise coefficient {cu} must be >= 0")));
    }
    let half = window / 2;
    let (w, h) = (grid.width, grid.height);
    let mut out = grid.values.clone();
    let mut samples = Vec::with_capacity(window * window);
    for r in 0..h {
        let r0 = r.saturating_sub(half);
        let r1 = (r + half).min(h - 1);
        for c in 0..w {
            let idx = r * w + c;
            if !grid.valid[idx] {
                continue;
            }
            let c0 = c.saturating_sub(half);
            let c1 = (c + half).min(w - 1);
            samples.clear();
            for rr in r0..=r1 {
                let row = rr * w;
                for cc in c0..=c1 {
                    if grid.valid[row + cc] {
                        samples.push(grid.values[row + cc]);
                    }
                }
            }
            // A constant window is its own mean; skip the rounding of
            // recomputing it.
            if samples.len() < 2 || samples.iter().all(|&s| s == samples[0]) {
                continue;
            }
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|&s| (s - mean) * (s - mean)).sum::<f64>() / n;
            let weight = if var > 0.0 {
                (var - (cu * mean).powi(2)).max(0.0) / var
            } else {
                0.0
            };
            out[idx] = mean + weight * (grid.values[idx] - mean);
        }
    }
    Ok(RasterGrid {
        width: w,
        height: h,
        values: out,
        valid: grid.valid.clone(),
    })
}

/// A fixed-size square crop of a parent grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    /// (row, col) of the tile's top-left pixel in the parent grid.
    pub origin: (usize, usize),
    pub grid: RasterGrid,
}

/// Cuts `grid` into `size`×`size` tiles in row-major tile order. Edge tiles
/// are zero-padded, with padding marked invalid.
pub fn tile_grid(grid: &RasterGrid, size: usize) -> Result<Vec<Tile>> {
    if size < 32 {
        return Err(Error::invalid(format!("tile size must be >= 32, got {size}")));
    }
    let tiles_y = grid.height.div_ceil(size);
    let tiles_x = grid.width.div_ceil(size);
    let mut tiles = Vec::with_capacity(tiles_x * tiles_y);
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let origin = (ty * size, tx * size);
            let mut values = vec![0.0; size * size];
            let mut valid = vec![false; size * size];
            for r in 0..size {
                let src_r = origin.0 + r;
                if src_r >= grid.height {
                    break;
                }
                for c in 0..size {
                    let src_c = origin.1 + c;
                    if src_c >= grid.width {
                        break;
                    }
                    let src = grid.index(src_r, src_c);
                    values[r * size + c] = grid.values[src];
                    valid[r * size + c] = grid.valid[src];
                }
            }
            tiles.push(Tile {
                origin,
                grid: RasterGrid {
                    width: size,
                    height: size,
                    values,
                    valid,
                },
            });
        }
    }
    Ok(tiles)
}

/// Inverse of [`tile_grid`]: places tiles back and drops padding.
pub fn stitch_tiles(tiles: &[Tile], width: usize, height: usize) -> RasterGrid {
    let mut values = vec![0.0; width * height];
    let mut valid = vec![false; width * height];
    for tile in tiles {
        let g = &tile.grid;
        for r in 0..g.height {
            let dst_r = tile.origin.0 + r;
            if dst_r >= height {
                break;
            }
            for c in 0..g.width {
                let dst_c = tile.origin.1 + c;
                if dst_c >= width {
                    break;
                }
                let dst = dst_r * width + dst_c;
                values[dst] = g.value(r, c);
                valid[dst] = g.is_valid(r, c);
            }
        }
    }
    RasterGrid {
        width,
        height,
        values,
        valid,
    }
}
