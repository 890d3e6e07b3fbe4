//! First-layer descriptors: HOG, uniform LBP, and their concatenation.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DescriptorKind {
    Hog,
    Lbp,
    /// HOG and LBP of the same window, each unit-normalized, concatenated.
    Fused,
}

impl DescriptorKind {
    pub fn tag(self) -> u32 {
        match self {
            DescriptorKind::Hog => 0,
            DescriptorKind::Lbp => 1,
            DescriptorKind::Fused => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(DescriptorKind::Hog),
            1 => Ok(DescriptorKind::Lbp),
            2 => Ok(DescriptorKind::Fused),
            _ => Err(Error::Format(format!("unknown descriptor kind tag {tag}"))),
        }
    }
}

impl fmt::Display for DescriptorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DescriptorKind::Hog => "hog",
            DescriptorKind::Lbp => "lbp",
            DescriptorKind::Fused => "fused",
        })
    }
}

impl FromStr for DescriptorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hog" => Ok(DescriptorKind::Hog),
            "lbp" => Ok(DescriptorKind::Lbp),
            "fused" => Ok(DescriptorKind::Fused),
            other => Err(Error::param(format!("unknown descriptor kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DescriptorConfig {
    /// HOG cell side in pixels.
    pub hog_cell: usize,
    /// Unsigned orientation bins over [0, pi).
    pub hog_bins: usize,
    /// HOG block side in cells; blocks advance one cell at a time.
    pub hog_block: usize,
    pub lbp_radius: usize,
    pub lbp_points: usize,
    /// LBP spatial grid cells per side.
    pub lbp_grid: usize,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        DescriptorConfig {
            hog_cell: 8,
            hog_bins: 9,
            hog_block: 2,
            lbp_radius: 1,
            lbp_points: 8,
            lbp_grid: 4,
        }
    }
}

impl DescriptorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hog_cell == 0 || self.hog_block == 0 || self.lbp_radius == 0 || self.lbp_grid == 0 {
            return Err(Error::param("descriptor counts must be >= 1"));
        }
        if self.hog_bins < 2 {
            return Err(Error::param("hog_bins must be >= 2"));
        }
        if !(1..=16).contains(&self.lbp_points) {
            return Err(Error::param("lbp_points must be in 1..=16"));
        }
        Ok(())
    }

    /// Smallest square window the given descriptor accepts.
    pub fn min_window(&self, kind: DescriptorKind) -> usize {
        let hog = self.hog_block * self.hog_cell;
        let lbp = self.lbp_grid * (2 * self.lbp_radius + 1);
        match kind {
            DescriptorKind::Hog => hog,
            DescriptorKind::Lbp => lbp,
            DescriptorKind::Fused => hog.max(lbp),
        }
    }

    /// Descriptor length for a `w`x`h` window.
    pub fn dim(&self, kind: DescriptorKind, w: usize, h: usize) -> usize {
        let hog = || {
            let nx = (w / self.hog_cell + 1).saturating_sub(self.hog_block);
            let ny = (h / self.hog_cell + 1).saturating_sub(self.hog_block);
            nx * ny * self.hog_block * self.hog_block * self.hog_bins
        };
        let lbp = || self.lbp_grid * self.lbp_grid * lbp_bin_count(self.lbp_points);
        match kind {
            DescriptorKind::Hog => hog(),
            DescriptorKind::Lbp => lbp(),
            DescriptorKind::Fused => hog() + lbp(),
        }
    }
}

/// A nonnegative feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub kind: DescriptorKind,
    pub values: Vec<f64>,
}

impl Descriptor {
    pub fn new(kind: DescriptorKind, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("descriptor"));
        }
        if values.iter().any(|v| *v < 0.0) {
            return Err(Error::param("descriptor entries must be nonnegative"));
        }
        Ok(Descriptor { kind, values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    /// Little-endian: kind tag (u32), dim (u32), then `dim` f32 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.values.len());
        out.extend_from_slice(&self.kind.tag().to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Format("descriptor header truncated".into()));
        }
        let kind = DescriptorKind::from_tag(u32::from_le_bytes(bytes[0..4].try_into().unwrap()))?;
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = &bytes[8..];
        if body.len() != 4 * dim {
            return Err(Error::Format(format!(
                "descriptor body has {} bytes, header says dim {dim}",
                body.len()
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Descriptor::new(kind, values)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    crate::hw::dot(v, v).sqrt()
}

/// Computes the descriptor of `kind` for the whole of `img`.
pub fn extract(img: &Raster, cfg: &DescriptorConfig, kind: DescriptorKind) -> Result<Descriptor> {
    match kind {
        DescriptorKind::Hog => hog(img, cfg),
        DescriptorKind::Lbp => lbp(img, cfg),
        DescriptorKind::Fused => fuse(&hog(img, cfg)?, &lbp(img, cfg)?),
    }
}

// ---------------------------------------------------------------------------
// HOG

/// Gradient magnitude and folded orientation in `[0, pi)` at `(x, y)`, with
/// neighbours clamped to the `w`x`h` image whose top-left pixel is `px[0]`
/// and whose row pitch is `pitch`.
#[inline]
fn gradient(px: &[f64], pitch: usize, w: usize, h: usize, x: usize, y: usize) -> (f64, f64) {
    let up = y.saturating_sub(1);
    let down = (y + 1).min(h - 1);
    let left = x.saturating_sub(1);
    let right = (x + 1).min(w - 1);
    let gx = px[y * pitch + right] - px[y * pitch + left];
    let gy = px[down * pitch + x] - px[up * pitch + x];
    let mag = (gx * gx + gy * gy).sqrt();
    let mut angle = gy.atan2(gx);
    if angle < 0.0 {
        angle += PI;
    }
    if angle >= PI {
        angle -= PI;
    }
    (mag, angle)
}

/// Per-pixel gradients of a whole image, shared by every window cut from it.
#[derive(Debug, Clone)]
pub struct GradientField {
    width: usize,
    height: usize,
    mag: Vec<f64>,
    angle: Vec<f64>,
}

impl GradientField {
    pub fn new(img: &Raster) -> Self {
        let (w, h) = (img.width(), img.height());
        let px = img.data();
        let mut mag = Vec::with_capacity(w * h);
        let mut angle = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (m, a) = gradient(px, w, w, h, x, y);
                mag.push(m);
                angle.push(a);
            }
        }
        GradientField {
            width: w,
            height: h,
            mag,
            angle,
        }
    }
}

fn check_hog_size(cfg: &DescriptorConfig, w: usize, h: usize) -> Result<()> {
    cfg.validate()?;
    let min = cfg.min_window(DescriptorKind::Hog);
    if w < min || h < min {
        return Err(Error::WindowTooSmall {
            win: w.min(h),
            reason: format!("HOG needs at least one {min}x{min} block"),
        });
    }
    Ok(())
}

fn accumulate_cells(w: usize, h: usize, cfg: &DescriptorConfig, grad: impl Fn(usize, usize) -> (f64, f64)) -> (usize, usize, Vec<f64>) {
    let cell = cfg.hog_cell;
    let bins = cfg.hog_bins;
    let (ncx, ncy) = (w / cell, h / cell);
    let mut hist = vec![0.0; ncx * ncy * bins];
    let bin_width = PI / bins as f64;
    let inv_cell = 1.0 / cell as f64;

    // (cell, weight) pairs each pixel row / column votes into; out-of-range
    // cells and zero weights dropped
    let taps = |n: usize, cells: usize| -> Vec<Vec<(usize, f64)>> {
        (0..n)
            .map(|p| {
                let f = (p as f64 + 0.5) * inv_cell - 0.5;
                let c0 = f.floor();
                let t = f - c0;
                let c0 = c0 as isize;
                [(c0, 1.0 - t), (c0 + 1, t)]
                    .into_iter()
                    .filter(|&(c, wt)| c >= 0 && c < cells as isize && wt != 0.0)
                    .map(|(c, wt)| (c as usize, wt))
                    .collect()
            })
            .collect()
    };
    let xtaps = taps(ncx * cell, ncx);
    let ytaps = taps(ncy * cell, ncy);

    for (y, yt) in ytaps.iter().enumerate() {
        for (x, xt) in xtaps.iter().enumerate() {
            let (mag, angle) = grad(x, y);
            if mag == 0.0 {
                continue;
            }
            let pos = angle / bin_width;
            let b0f = pos.floor();
            let tb = pos - b0f;
            let mut b0 = b0f as usize;
            if b0 >= bins {
                b0 -= bins;
            }
            let b1 = if b0 + 1 == bins { 0 } else { b0 + 1 };
            for &(cy, wy) in yt {
                for &(cx, wx) in xt {
                    let base = (cy * ncx + cx) * bins;
                    let wgt = mag * wx * wy;
                    hist[base + b0] += wgt * (1.0 - tb);
                    if tb != 0.0 {
                        hist[base + b1] += wgt * tb;
                    }
                }
            }
        }
    }
    (ncx, ncy, hist)
}

/// Per-cell orientation histograms before block normalization. Returns
/// `(cells_x, cells_y, histograms)` with histograms laid out row-major by
/// cell, `hog_bins` entries each.
pub fn hog_cell_histograms(img: &Raster, cfg: &DescriptorConfig) -> Result<(usize, usize, Vec<f64>)> {
    let (w, h) = (img.width(), img.height());
    check_hog_size(cfg, w, h)?;
    let px = img.data();
    Ok(accumulate_cells(w, h, cfg, |x, y| gradient(px, w, w, h, x, y)))
}

fn hog_blocks(ncx: usize, ncy: usize, hist: &[f64], cfg: &DescriptorConfig, dim: usize) -> Descriptor {
    let bins = cfg.hog_bins;
    let blk = cfg.hog_block;
    let mut out = Vec::with_capacity(dim);
    let mut block = Vec::with_capacity(blk * blk * bins);
    for by in 0..=ncy - blk {
        for bx in 0..=ncx - blk {
            block.clear();
            for cy in by..by + blk {
                let start = (cy * ncx + bx) * bins;
                block.extend_from_slice(&hist[start..start + blk * bins]);
            }
            l2_hys(&mut block);
            out.extend_from_slice(&block);
        }
    }
    Descriptor {
        kind: DescriptorKind::Hog,
        values: out,
    }
}

const L2HYS_CLIP: f64 = 0.2;
const L2HYS_EPS: f64 = 1e-9;

fn l2_hys(block: &mut [f64]) {
    let scale = |b: &mut [f64]| {
        let n = (b.iter().map(|v| v * v).sum::<f64>() + L2HYS_EPS * L2HYS_EPS).sqrt();
        b.iter_mut().for_each(|v| *v /= n);
    };
    scale(block);
    block.iter_mut().for_each(|v| *v = v.min(L2HYS_CLIP));
    scale(block);
}

/// Dalal-Triggs style HOG: unsigned gradients from central differences,
/// trilinear voting into cells, L2-hys normalized blocks at one-cell stride.
pub fn hog(img: &Raster, cfg: &DescriptorConfig) -> Result<Descriptor> {
    let (ncx, ncy, hist) = hog_cell_histograms(img, cfg)?;
    Ok(hog_blocks(ncx, ncy, &hist, cfg, cfg.dim(DescriptorKind::Hog, img.width(), img.height())))
}

/// HOG of the `w`x`h` window at `(x0, y0)` of the image behind `field`;
/// equal to `hog` of the cropped window. Interior gradients come from the
/// field, border ones are recomputed with the crop's clamping.
pub fn hog_window(
    img: &Raster,
    field: &GradientField,
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    cfg: &DescriptorConfig,
) -> Result<Descriptor> {
    check_hog_size(cfg, w, h)?;
    if img.width() != field.width || img.height() != field.height {
        return Err(Error::param("gradient field does not match the image"));
    }
    if x0 + w > img.width() || y0 + h > img.height() {
        return Err(Error::param("window exceeds the image"));
    }
    let pitch = img.width();
    let px = &img.data()[y0 * pitch + x0..];
    let (ncx, ncy, hist) = accumulate_cells(w, h, cfg, |x, y| {
        if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
            gradient(px, pitch, w, h, x, y)
        } else {
            let i = (y0 + y) * pitch + x0 + x;
            (field.mag[i], field.angle[i])
        }
    });
    Ok(hog_blocks(ncx, ncy, &hist, cfg, cfg.dim(DescriptorKind::Hog, w, h)))
}

// ---------------------------------------------------------------------------
// LBP

/// Circular 0/1 transitions in a `points`-bit pattern.
fn transitions(code: u32, points: usize) -> u32 {
    let rotated = (code >> 1) | ((code & 1) << (points - 1));
    (code ^ rotated).count_ones()
}

/// Number of histogram bins: one per uniform pattern plus a shared bin.
pub fn lbp_bin_count(points: usize) -> usize {
    if points == 1 {
        3
    } else {
        points * (points - 1) + 3
    }
}

/// Maps every `points`-bit code to its histogram bin. Uniform patterns
/// (at most two circular transitions) take bins in ascending code order;
/// everything else shares the last bin.
pub fn lbp_bin_table(points: usize) -> Vec<u16> {
    let shared = (lbp_bin_count(points) - 1) as u16;
    let mut next = 0u16;
    (0..1u32 << points)
        .map(|code| {
            if points == 1 || transitions(code, points) <= 2 {
                next += 1;
                next - 1
            } else {
                shared
            }
        })
        .collect()
}

fn lbp_offsets(cfg: &DescriptorConfig) -> Vec<(f64, f64)> {
    let snap = |v: f64| {
        let r = v.round();
        if (v - r).abs() < 1e-9 {
            r
        } else {
            v
        }
    };
    let r = cfg.lbp_radius as f64;
    (0..cfg.lbp_points)
        .map(|p| {
            let a = 2.0 * PI * p as f64 / cfg.lbp_points as f64;
            (snap(r * a.cos()), snap(-r * a.sin()))
        })
        .collect()
}

/// Uniform LBP histograms on a `lbp_grid` x `lbp_grid` spatial grid, each
/// cell L1-normalized. A neighbor at least as bright as the center sets its
/// bit.
pub fn lbp(img: &Raster, cfg: &DescriptorConfig) -> Result<Descriptor> {
    cfg.validate()?;
    let (w, h) = (img.width(), img.height());
    let min = cfg.min_window(DescriptorKind::Lbp);
    if w < min || h < min {
        return Err(Error::WindowTooSmall {
            win: w.min(h),
            reason: format!("LBP grid needs at least {min}x{min} pixels"),
        });
    }
    let r = cfg.lbp_radius;
    let grid = cfg.lbp_grid;
    let table = lbp_bin_table(cfg.lbp_points);
    let bins = lbp_bin_count(cfg.lbp_points);
    let offsets = lbp_offsets(cfg);
    let (vw, vh) = (w - 2 * r, h - 2 * r);
    let mut hist = vec![0.0; grid * grid * bins];
    let mut counts = vec![0usize; grid * grid];

    for y in r..h - r {
        let gy = (y - r) * grid / vh;
        for x in r..w - r {
            let center = img.get(x, y);
            let mut code = 0u32;
            for (p, &(ox, oy)) in offsets.iter().enumerate() {
                let v = img.sample_clamped(x as f64 + ox, y as f64 + oy);
                if v >= center {
                    code |= 1 << p;
                }
            }
            let gx = (x - r) * grid / vw;
            let cell = gy * grid + gx;
            hist[cell * bins + table[code as usize] as usize] += 1.0;
            counts[cell] += 1;
        }
    }
    for (cell, &n) in counts.iter().enumerate() {
        let n = n as f64;
        hist[cell * bins..(cell + 1) * bins]
            .iter_mut()
            .for_each(|v| *v /= n);
    }
    Ok(Descriptor {
        kind: DescriptorKind::Lbp,
        values: hist,
    })
}

// ---------------------------------------------------------------------------
// fusion

/// Concatenates `a` and `b` after scaling each to unit L2 norm. A zero part
/// stays zero.
pub fn fuse(a: &Descriptor, b: &Descriptor) -> Result<Descriptor> {
    let mut values = Vec::with_capacity(a.dim() + b.dim());
    for part in [a, b] {
        let n = part.norm();
        if n > 0.0 {
            values.extend(part.values.iter().map(|v| v / n));
        } else {
            values.extend(std::iter::repeat(0.0).take(part.dim()));
        }
    }
    Ok(Descriptor {
        kind: DescriptorKind::Fused,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::from_fn(w, h, |_, _| rng.gen::<f64>())
    }

    /// Pixels on a 1/256 grid so offsets of 1/8 are exact in f64.
    fn dyadic_noise(w: usize, h: usize, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::from_fn(w, h, |_, _| rng.gen_range(0..200) as f64 / 256.0)
    }

    fn cfg() -> DescriptorConfig {
        DescriptorConfig::default()
    }

    #[test]
    fn window_hog_matches_cropped_hog() {
        let img = noise(61, 47, 9);
        let field = GradientField::new(&img);
        for (x, y, w, h) in [(0, 0, 24, 24), (5, 3, 32, 40), (37, 23, 24, 24), (0, 7, 61, 40)] {
            let a = hog_window(&img, &field, x, y, w, h, &cfg()).unwrap();
            let b = hog(&img.crop(x, y, w, h).unwrap(), &cfg()).unwrap();
            assert_eq!(a, b);
        }
        assert!(hog_window(&img, &field, 40, 0, 24, 24, &cfg()).is_err());
    }

    #[test]
    fn hog_of_constant_is_zero() {
        let d = hog(&Raster::filled(32, 32, 0.4), &cfg()).unwrap();
        assert_eq!(d.dim(), 3 * 3 * 4 * 9);
        assert!(d.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_edge_votes_into_horizontal_gradient_bin() {
        let img = Raster::from_fn(16, 16, |x, _| if x < 8 { 0.0 } else { 1.0 });
        let (ncx, ncy, hist) = hog_cell_histograms(&img, &cfg()).unwrap();
        assert_eq!((ncx, ncy), (2, 2));
        // gradients are purely along x, orientation 0, which is bin 0's center
        let total: f64 = hist.iter().sum();
        let bin0: f64 = hist.chunks(9).map(|c| c[0]).sum();
        assert!(total > 0.0);
        assert_eq!(bin0, total);
        // two unit-gradient columns (x = 7, 8); vertically, rows 4..12 vote
        // fully while the four outer rows on each side lose the share that
        // falls outside the cell grid: 0.5625 + 0.6875 + 0.8125 + 0.9375 = 3
        let hand = 2.0 * (3.0 + 8.0 + 3.0);
        assert!((total - hand).abs() < 1e-12);
    }

    #[test]
    fn hog_block_norms_bounded() {
        let c = cfg();
        for seed in 0..10 {
            let d = hog(&noise(40, 48, seed), &c).unwrap();
            for block in d.values.chunks(c.hog_block * c.hog_block * c.hog_bins) {
                let n = block.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(n <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn hog_offset_exact_and_scale_invariant() {
        let c = cfg();
        let img = dyadic_noise(32, 32, 7);
        let base = hog(&img, &c).unwrap();
        let shifted = Raster::from_fn(32, 32, |x, y| img.get(x, y) + 0.125);
        assert_eq!(hog(&shifted, &c).unwrap(), base);
        let scaled = Raster::from_fn(32, 32, |x, y| img.get(x, y) * 0.37);
        for (a, b) in hog(&scaled, &c).unwrap().values.iter().zip(&base.values) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn hog_too_small_errors() {
        assert!(matches!(
            hog(&Raster::filled(15, 32, 0.0), &cfg()),
            Err(Error::WindowTooSmall { .. })
        ));
    }

    #[test]
    fn uniform_pattern_count_by_enumeration() {
        let uniform = (0u32..256).filter(|&c| transitions(c, 8) <= 2).count();
        assert_eq!(uniform, 58);
        assert_eq!(lbp_bin_count(8), 59);
        let table = lbp_bin_table(8);
        assert_eq!(*table.iter().max().unwrap(), 58);
        assert_eq!(table.iter().filter(|&&b| b == 58).count(), 256 - 58);
    }

    #[test]
    fn lbp_constant_single_bin() {
        let c = cfg();
        let d = lbp(&Raster::filled(24, 24, 0.3), &c).unwrap();
        assert_eq!(d.dim(), 16 * 59);
        // all-ones code 255 is uniform and the last uniform code
        let all_ones_bin = lbp_bin_table(8)[255] as usize;
        for cell in d.values.chunks(59) {
            assert_eq!(cell[all_ones_bin], 1.0);
            assert_eq!(cell.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn lbp_cells_sum_to_one() {
        let d = lbp(&noise(30, 26, 3), &cfg()).unwrap();
        for cell in d.values.chunks(59) {
            assert!((cell.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn lbp_monotone_remap_invariant_on_integer_lattice() {
        // 4 neighbors at radius 1 sit on integer positions: no interpolation
        let c = DescriptorConfig {
            lbp_points: 4,
            ..cfg()
        };
        let img = noise(20, 20, 11);
        let remapped = Raster::from_fn(20, 20, |x, y| img.get(x, y).powi(3) * 0.5 + 0.1);
        assert_eq!(lbp(&img, &c).unwrap(), lbp(&remapped, &c).unwrap());
    }

    #[test]
    fn lbp_too_small_errors() {
        assert!(lbp(&Raster::filled(11, 12, 0.0), &cfg()).is_err());
        assert!(lbp(&Raster::filled(12, 12, 0.0), &cfg()).is_ok());
    }

    #[test]
    fn fuse_dims_and_zero_part() {
        let a = Descriptor::new(DescriptorKind::Hog, vec![1.0; 4030]).unwrap();
        let b = Descriptor::new(DescriptorKind::Lbp, vec![0.5; 7540]).unwrap();
        assert_eq!(fuse(&a, &b).unwrap().dim(), 11570);

        let x = Descriptor::new(DescriptorKind::Hog, vec![3.0, 4.0]).unwrap();
        let z = Descriptor::new(DescriptorKind::Lbp, vec![0.0; 3]).unwrap();
        let f = fuse(&x, &z).unwrap();
        assert_eq!(f.values, vec![0.6, 0.8, 0.0, 0.0, 0.0]);
        assert_eq!(f.kind, DescriptorKind::Fused);
    }

    #[test]
    fn extracted_dims_match_config() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..100 {
            let side = rng.gen_range(16..48);
            let img = noise(side, side, i);
            for kind in [DescriptorKind::Hog, DescriptorKind::Lbp, DescriptorKind::Fused] {
                assert_eq!(extract(&img, &c, kind).unwrap().dim(), c.dim(kind, side, side));
            }
        }
    }

    #[test]
    fn descriptor_bytes_reject_garbage() {
        assert!(Descriptor::from_bytes(&[0; 4]).is_err());
        let mut b = Descriptor::new(DescriptorKind::Lbp, vec![1.0, 2.0]).unwrap().to_bytes();
        b.push(0);
        assert!(Descriptor::from_bytes(&b).is_err());
        assert!(Descriptor::from_bytes(&[9, 0, 0, 0, 0, 0, 0, 0]).is_err());
    }

    proptest! {
        #[test]
        fn fused_norm_is_two(a in prop::collection::vec(0.01f64..10.0, 1..40),
                             b in prop::collection::vec(0.01f64..10.0, 1..40)) {
            let f = fuse(&Descriptor::new(DescriptorKind::Hog, a).unwrap(),
                         &Descriptor::new(DescriptorKind::Lbp, b).unwrap()).unwrap();
            let sq: f64 = f.values.iter().map(|v| v * v).sum();
            prop_assert!((sq - 2.0).abs() < 1e-9);
        }

        #[test]
        fn descriptor_bytes_roundtrip(kind in 0u32..3, v in prop::collection::vec(0f32..1e6, 0..64)) {
            let d = Descriptor::new(DescriptorKind::from_tag(kind).unwrap(),
                                    v.iter().map(|&x| x as f64).collect()).unwrap();
            prop_assert_eq!(Descriptor::from_bytes(&d.to_bytes()).unwrap(), d);
        }
    }
}
