//! Geometric descriptors of a single region given as a pixel set.

use std::f64::consts::PI;

/// Binary crop of one region with a two-pixel background margin.
pub(crate) struct RegionCrop {
    pub rows: usize,
    pub cols: usize,
    pub bits: Vec<bool>,
    /// Local (row, col) of every region pixel, in input order.
    pub coords: Vec<(usize, usize)>,
}

const PAD: usize = 2;

impl RegionCrop {
    pub fn new(pixels: &[usize], width: usize) -> Self {
        let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
        for &p in pixels {
            let (r, c) = (p / width, p % width);
            r0 = r0.min(r);
            c0 = c0.min(c);
            r1 = r1.max(r);
            c1 = c1.max(c);
        }
        let rows = r1 - r0 + 1 + 2 * PAD;
        let cols = c1 - c0 + 1 + 2 * PAD;
        let mut bits = vec![false; rows * cols];
        let coords: Vec<(usize, usize)> = pixels
            .iter()
            .map(|&p| (p / width - r0 + PAD, p % width - c0 + PAD))
            .collect();
        for &(r, c) in &coords {
            bits[r * cols + c] = true;
        }
        Self {
            rows,
            cols,
            bits,
            coords,
        }
    }

    #[inline]
    fn at(&self, r: isize, c: isize) -> bool {
        r >= 0 && c >= 0 && (r as usize) < self.rows && (c as usize) < self.cols && self.bits[r as usize * self.cols + c as usize]
    }

    pub fn area(&self) -> usize {
        self.coords.len()
    }

    /// Region pixels with at least one 4-neighbor outside the region.
    pub fn boundary_count(&self) -> usize {
        self.coords
            .iter()
            .filter(|&&(r, c)| {
                let (r, c) = (r as isize, c as isize);
                !(self.at(r - 1, c) && self.at(r + 1, c) && self.at(r, c - 1) && self.at(r, c + 1))
            })
            .count()
    }
}

/// Raw and central moments up to order 3, from pixel centers.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Moments {
    pub m00: f64,
    pub cy: f64,
    pub cx: f64,
    /// mu[p][q] = sum (x - cx)^p (y - cy)^q, with x the column axis.
    pub mu: [[f64; 4]; 4],
}

impl Moments {
    pub fn from_coords(coords: &[(usize, usize)]) -> Self {
        let n = coords.len() as f64;
        let cy = coords.iter().map(|&(r, _)| r as f64).sum::<f64>() / n;
        let cx = coords.iter().map(|&(_, c)| c as f64).sum::<f64>() / n;
        let mut mu = [[0.0; 4]; 4];
        for &(r, c) in coords {
            let (dx, dy) = (c as f64 - cx, r as f64 - cy);
            let xp = [1.0, dx, dx * dx, dx * dx * dx];
            let yp = [1.0, dy, dy * dy, dy * dy * dy];
            for p in 0..4 {
                for q in 0..4 - p {
                    mu[p][q] += xp[p] * yp[q];
                }
            }
        }
        Self { m00: n, cy, cx, mu }
    }

    /// Covariance of the region treated as a union of unit squares.
    pub fn covariance(&self) -> (f64, f64, f64) {
        let n = self.m00;
        (self.mu[2][0] / n + 1.0 / 12.0, self.mu[1][1] / n, self.mu[0][2] / n + 1.0 / 12.0)
    }

    /// Eigenvalues (largest first) and the unit eigenvector of the largest.
    pub fn principal_axes(&self) -> (f64, f64, (f64, f64)) {
        let (sxx, sxy, syy) = self.covariance();
        let half_tr = (sxx + syy) / 2.0;
        let disc = (((sxx - syy) / 2.0).powi(2) + sxy * sxy).sqrt();
        let (l1, l2) = (half_tr + disc, (half_tr - disc).max(0.0));
        let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        (l1, l2, (theta.cos(), theta.sin()))
    }

    fn eta(&self, p: usize, q: usize) -> f64 {
        self.mu[p][q] / self.m00.powf(1.0 + (p + q) as f64 / 2.0)
    }

    /// The seven classical Hu invariants.
    pub fn hu(&self) -> [f64; 7] {
        let (n20, n02, n11) = (self.eta(2, 0), self.eta(0, 2), self.eta(1, 1));
        let (n30, n03, n21, n12) = (self.eta(3, 0), self.eta(0, 3), self.eta(2, 1), self.eta(1, 2));
        let a = n30 + n12;
        let b = n21 + n03;
        [
            n20 + n02,
            (n20 - n02).powi(2) + 4.0 * n11 * n11,
            (n30 - 3.0 * n12).powi(2) + (3.0 * n21 - n03).powi(2),
            a * a + b * b,
            (n30 - 3.0 * n12) * a * (a * a - 3.0 * b * b) + (3.0 * n21 - n03) * b * (3.0 * a * a - b * b),
            (n20 - n02) * (a * a - b * b) + 4.0 * n11 * a * b,
            (3.0 * n21 - n03) * a * (a * a - 3.0 * b * b) - (n30 - 3.0 * n12) * b * (3.0 * a * a - b * b),
        ]
    }

    /// Flusser–Suk affine moment invariants I1..I4.
    pub fn affine(&self) -> [f64; 4] {
        let m = &self.mu;
        let (u20, u11, u02) = (m[2][0], m[1][1], m[0][2]);
        let (u30, u21, u12, u03) = (m[3][0], m[2][1], m[1][2], m[0][3]);
        let n = self.m00;
        let i1 = (u20 * u02 - u11 * u11) / n.powi(4);
        let i2 = (u30 * u30 * u03 * u03 - 6.0 * u30 * u21 * u12 * u03 + 4.0 * u30 * u12.powi(3) + 4.0 * u21.powi(3) * u03
            - 3.0 * u21 * u21 * u12 * u12)
            / n.powi(10);
        let i3 = (u20 * (u21 * u03 - u12 * u12) - u11 * (u30 * u03 - u21 * u12) + u02 * (u30 * u12 - u21 * u21)) / n.powi(7);
        let i4 = (u20.powi(3) * u03 * u03 - 6.0 * u20 * u20 * u11 * u12 * u03 - 6.0 * u20 * u20 * u02 * u21 * u03
            + 9.0 * u20 * u20 * u02 * u12 * u12
            + 12.0 * u20 * u11 * u11 * u21 * u03
            + 6.0 * u20 * u11 * u02 * u30 * u03
            - 18.0 * u20 * u11 * u02 * u21 * u12
            - 8.0 * u11.powi(3) * u30 * u03
            - 6.0 * u20 * u02 * u02 * u30 * u12
            + 9.0 * u20 * u02 * u02 * u21 * u21
            + 12.0 * u11 * u11 * u02 * u30 * u12
            - 6.0 * u11 * u02 * u02 * u30 * u21
            + u02.powi(3) * u30 * u30)
            / n.powi(11);
        [i1, i2, i3, i4]
    }
}

/// Outer boundary as a closed chain of lattice vertices, traced along pixel
/// edges with the region on the right. Diagonal contacts are not followed,
/// matching 4-connectivity. The start vertex is not repeated.
pub(crate) fn trace_contour(crop: &RegionCrop) -> Vec<(isize, isize)> {
    // Directions: E, S, W, N as (dr, dc); index + 1 is a right turn.
    const DIRS: [(isize, isize); 4] = [(0, 1), (1, 0), (0, -1), (-1, 0)];
    // Pixel offsets from the vertex for (ahead-left, ahead-right).
    const AHEAD: [((isize, isize), (isize, isize)); 4] = [
        ((-1, 0), (0, 0)),
        ((0, 0), (0, -1)),
        ((0, -1), (-1, -1)),
        ((-1, -1), (-1, 0)),
    ];
    // The start vertex (top-left corner of the first pixel in raster
    // order) touches a single region pixel, so it is visited exactly once.
    let &(r0, c0) = crop.coords.iter().min().expect("region is nonempty");
    let start = (r0 as isize, c0 as isize);
    let mut v = start;
    let mut d = 0usize;
    let mut chain = Vec::new();
    loop {
        chain.push(v);
        v = (v.0 + DIRS[d].0, v.1 + DIRS[d].1);
        if v == start {
            break;
        }
        let ((alr, alc), (arr, arc)) = AHEAD[d];
        let ar = crop.at(v.0 + arr, v.1 + arc);
        let al = crop.at(v.0 + alr, v.1 + alc);
        d = if !ar {
            (d + 1) % 4
        } else if al {
            (d + 3) % 4
        } else {
            d
        };
    }
    chain
}

/// Mean absolute turning angle along a closed polygon.
pub(crate) fn mean_turning(chain: &[(isize, isize)]) -> f64 {
    let n = chain.len();
    if n < 3 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        let a = chain[(i + n - 1) % n];
        let b = chain[i];
        let c = chain[(i + 1) % n];
        let h1 = ((b.0 - a.0) as f64).atan2((b.1 - a.1) as f64);
        let h2 = ((c.0 - b.0) as f64).atan2((c.1 - b.1) as f64);
        let mut turn = h2 - h1;
        while turn > PI {
            turn -= 2.0 * PI;
        }
        while turn <= -PI {
            turn += 2.0 * PI;
        }
        total += turn.abs();
    }
    total / n as f64
}

/// Elliptic Fourier amplitudes of a closed chain: per harmonic the two
/// singular values of the coefficient matrix, scaled by the first
/// harmonic's major value.
pub(crate) fn efd_amplitudes(chain: &[(isize, isize)], harmonics: usize) -> Vec<f64> {
    let n = chain.len();
    let mut out = vec![0.0; 2 * harmonics];
    if n < 2 || harmonics == 0 {
        return out;
    }
    let steps: Vec<(f64, f64, f64)> = (0..n)
        .map(|i| {
            let a = chain[i];
            let b = chain[(i + 1) % n];
            let (dx, dy) = ((b.1 - a.1) as f64, (b.0 - a.0) as f64);
            (dx, dy, (dx * dx + dy * dy).sqrt())
        })
        .collect();
    let period: f64 = steps.iter().map(|s| s.2).sum();
    let mut scale = 0.0;
    for h in 1..=harmonics {
        let k = 2.0 * PI * h as f64 / period;
        let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
        let mut t_prev = 0.0;
        for &(dx, dy, dt) in &steps {
            let t = t_prev + dt;
            let (dcos, dsin) = ((k * t).cos() - (k * t_prev).cos(), (k * t).sin() - (k * t_prev).sin());
            a += dx / dt * dcos;
            b += dx / dt * dsin;
            c += dy / dt * dcos;
            d += dy / dt * dsin;
            t_prev = t;
        }
        let f = period / (2.0 * (h * h) as f64 * PI * PI);
        let (a, b, c, d) = (a * f, b * f, c * f, d * f);
        let q = a * a + b * b + c * c + d * d;
        let det = a * d - b * c;
        let disc = (q * q - 4.0 * det * det).max(0.0).sqrt();
        let s1 = ((q + disc) / 2.0).sqrt();
        let s2 = ((q - disc) / 2.0).max(0.0).sqrt();
        if h == 1 {
            scale = s1;
        }
        out[2 * (h - 1)] = s1;
        out[2 * (h - 1) + 1] = s2;
    }
    if scale > 0.0 {
        for v in &mut out {
            *v /= scale;
        }
    }
    out
}

/// Convex hull (counter-clockwise in (x, y) = (col, row)) of the pixel
/// corner points, without collinear vertices.
pub(crate) fn convex_hull(crop: &RegionCrop) -> Vec<(i64, i64)> {
    let mut pts: Vec<(i64, i64)> = Vec::new();
    let mut extremes: Vec<(usize, usize, usize)> = Vec::new(); // row, min col, max col
    for &(r, c) in &crop.coords {
        match extremes.iter_mut().find(|e| e.0 == r) {
            Some(e) => {
                e.1 = e.1.min(c);
                e.2 = e.2.max(c);
            }
            None => extremes.push((r, c, c)),
        }
    }
    for (r, lo, hi) in extremes {
        let (r, lo, hi) = (r as i64, lo as i64, hi as i64);
        pts.extend([(lo, r), (lo, r + 1), (hi + 1, r), (hi + 1, r + 1)]);
    }
    pts.sort_unstable();
    pts.dedup();
    let cross = |o: (i64, i64), a: (i64, i64), b: (i64, i64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let base = hull.len();
        let iter: Box<dyn Iterator<Item = &(i64, i64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= base + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

pub(crate) fn polygon_area(poly: &[(i64, i64)]) -> f64 {
    let n = poly.len();
    let twice: i64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    twice.abs() as f64 / 2.0
}

/// Interior angles (radians) of a convex polygon.
pub(crate) fn interior_angles(poly: &[(i64, i64)]) -> Vec<f64> {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (p, v, q) = (poly[(i + n - 1) % n], poly[i], poly[(i + 1) % n]);
            let (ax, ay) = ((p.0 - v.0) as f64, (p.1 - v.1) as f64);
            let (bx, by) = ((q.0 - v.0) as f64, (q.1 - v.1) as f64);
            let cos = (ax * bx + ay * by) / ((ax * ax + ay * ay).sqrt() * (bx * bx + by * by).sqrt());
            cos.clamp(-1.0, 1.0).acos()
        })
        .collect()
}

/// 1-D squared distance transform (Felzenszwalb & Huttenlocher). Infinite
/// entries take no part in the lower envelope.
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let mut v: Vec<usize> = Vec::with_capacity(f.len());
    let mut z: Vec<f64> = Vec::with_capacity(f.len() + 1);
    let meet = |q: usize, p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
    for q in (0..f.len()).filter(|&q| f[q].is_finite()) {
        while let Some(&p) = v.last() {
            let s = meet(q, p);
            if s > z[z.len() - 1] {
                z.push(s);
                break;
            }
            v.pop();
            z.pop();
        }
        if v.is_empty() {
            z.push(f64::NEG_INFINITY);
        }
        v.push(q);
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    // z[i] is the left boundary of v[i]'s interval.
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Largest Euclidean distance from a region pixel center to the nearest
/// non-region pixel center.
pub(crate) fn max_inscribed_radius(crop: &RegionCrop) -> f64 {
    let (rows, cols) = (crop.rows, crop.cols);
    let mut grid: Vec<f64> = crop.bits.iter().map(|&b| if b { f64::INFINITY } else { 0.0 }).collect();
    let mut buf_in = vec![0.0; rows.max(cols)];
    let mut buf_out = vec![0.0; rows.max(cols)];
    for c in 0..cols {
        for r in 0..rows {
            buf_in[r] = grid[r * cols + c];
        }
        edt_1d(&buf_in[..rows], &mut buf_out[..rows]);
        for r in 0..rows {
            grid[r * cols + c] = buf_out[r];
        }
    }
    for r in 0..rows {
        buf_in[..cols].copy_from_slice(&grid[r * cols..(r + 1) * cols]);
        edt_1d(&buf_in[..cols], &mut buf_out[..cols]);
        grid[r * cols..(r + 1) * cols].copy_from_slice(&buf_out[..cols]);
    }
    crop.coords
        .iter()
        .map(|&(r, c)| grid[r * cols + c])
        .fold(0.0f64, f64::max)
        .sqrt()
}

fn morph(bits: &[bool], rows: usize, cols: usize, dilate: bool, square: bool) -> Vec<bool> {
    let offsets: &[(isize, isize)] = if square {
        &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    } else {
        &[(-1, 0), (1, 0), (0, -1), (0, 1)]
    };
    let get = |r: isize, c: isize| r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols && bits[r as usize * cols + c as usize];
    let mut out = vec![false; bits.len()];
    for r in 0..rows {
        for c in 0..cols {
            let here = bits[r * cols + c];
            let mut hits = offsets.iter().map(|&(dr, dc)| get(r as isize + dr, c as isize + dc));
            out[r * cols + c] = if dilate { here || hits.any(|b| b) } else { here && hits.all(|b| b) };
        }
    }
    out
}

/// Pixels surviving one erosion by the 4-neighborhood cross.
pub(crate) fn eroded_area(crop: &RegionCrop) -> usize {
    morph(&crop.bits, crop.rows, crop.cols, false, false).iter().filter(|&&b| b).count()
}

/// Area after a 3x3 square closing.
pub(crate) fn closed_area(crop: &RegionCrop) -> usize {
    let d = morph(&crop.bits, crop.rows, crop.cols, true, true);
    morph(&d, crop.rows, crop.cols, false, true).iter().filter(|&&b| b).count()
}

/// Number of geometric scalars for a given EFD harmonic count.
pub fn geometric_len(harmonics: usize) -> usize {
    22 + 7 + 4 + 2 * harmonics + 1
}

/// Geometric descriptors in catalogue order: the 24 features from area to
/// IABPm (Hu and Fs expanded), then EFD amplitudes, then IABPsd.
pub fn compute_geometric(pixels: &[usize], width: usize, harmonics: usize) -> Vec<f64> {
    assert!(!pixels.is_empty(), "region must contain at least one pixel");
    let crop = RegionCrop::new(pixels, width);
    let a = crop.area() as f64;
    let p = crop.boundary_count() as f64;
    let mom = Moments::from_coords(&crop.coords);
    let (l1, l2, axis) = mom.principal_axes();
    let major = 4.0 * l1.sqrt();
    let minor = 4.0 * l2.sqrt();

    // Extents along the principal axes, measured on pixel centers.
    let (mut u_lo, mut u_hi, mut w_lo, mut w_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    let (mut r_lo, mut r_hi, mut c_lo, mut c_hi) = (usize::MAX, 0, usize::MAX, 0);
    for &(r, c) in &crop.coords {
        let (dx, dy) = (c as f64 - mom.cx, r as f64 - mom.cy);
        let u = dx * axis.0 + dy * axis.1;
        let w = -dx * axis.1 + dy * axis.0;
        u_lo = u_lo.min(u);
        u_hi = u_hi.max(u);
        w_lo = w_lo.min(w);
        w_hi = w_hi.max(w);
        r_lo = r_lo.min(r);
        r_hi = r_hi.max(r);
        c_lo = c_lo.min(c);
        c_hi = c_hi.max(c);
    }
    let length_to_width = (u_hi - u_lo + 1.0) / (w_hi - w_lo + 1.0);
    let bbox = ((r_hi - r_lo + 1) * (c_hi - c_lo + 1)) as f64;

    let chain = trace_contour(&crop);
    let hull = convex_hull(&crop);
    let hull_area = polygon_area(&hull);
    let angles = interior_angles(&hull);
    let angle_mean = angles.iter().sum::<f64>() / angles.len() as f64;
    let angle_sd = (angles.iter().map(|x| (x - angle_mean).powi(2)).sum::<f64>() / angles.len() as f64).sqrt();

    let mut out = Vec::with_capacity(geometric_len(harmonics));
    out.extend([
        a,
        p,
        p / a,
        a / p,
        major / minor,
        major / p,
        p / (2.0 * (PI * a).sqrt()),
        p * p / a,
        4.0 * PI * a / (p * p),
        minor / major,
        2.0 * a / p,
        mean_turning(&chain),
    ]);
    out.extend(mom.hu());
    out.extend(mom.affine());
    out.extend([
        2.0 * max_inscribed_radius(&crop),
        a / (eroded_area(&crop) as f64 + 1.0),
        p * p / (4.0 * PI * a),
        length_to_width,
        p / (4.0 * a.sqrt()),
        a / (major * major),
        a / bbox,
        a / closed_area(&crop) as f64,
        a / hull_area,
        angle_mean,
    ]);
    out.extend(efd_amplitudes(&chain, harmonics));
    out.push(angle_sd);
    out
}
