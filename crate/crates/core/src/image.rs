//! Grayscale rasters, affine jitter, and scale pyramids.
//!
//! Pixel coordinates address pixel centers: `(0, 0)` is the center of the
//! top-left pixel and `(width - 1, height - 1)` the bottom-right one. All
//! resampling is bilinear.

use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};

/// Default out-of-bounds fill intensity (mid-gray).
pub const DEFAULT_FILL: f64 = 0.5;

/// A row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroArea);
        }
        if data.len() != width * height {
            return Err(Error::DimMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::param("intensities must be finite and in [0, 1]"));
        }
        Ok(Raster {
            width,
            height,
            data,
        })
    }

    /// Builds a raster by evaluating `f(x, y)` at every pixel. Values are
    /// clamped to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "raster must have nonzero area");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(clamp_unit(f(x, y)));
            }
        }
        Raster {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Copies out the `w`x`h` sub-image whose top-left pixel is `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Raster> {
        if w == 0 || h == 0 {
            return Err(Error::ZeroArea);
        }
        if x + w > self.width || y + h > self.height {
            return Err(Error::param(format!(
                "crop {w}x{h}+{x}+{y} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for row in y..y + h {
            let start = row * self.width + x;
            data.extend_from_slice(&self.data[start..start + w]);
        }
        Ok(Raster {
            width: w,
            height: h,
            data,
        })
    }

    /// Crops the centered `w`x`h` region (offset rounded down).
    pub fn center_crop(&self, w: usize, h: usize) -> Result<Raster> {
        if w > self.width || h > self.height {
            return Err(Error::param("center crop larger than image"));
        }
        self.crop((self.width - w) / 2, (self.height - h) / 2, w, h)
    }

    /// Alpha-composites `src` onto `self` with its top-left pixel at `(x, y)`.
    /// `alpha`, when given, must match `src` in size; missing alpha means
    /// opaque. Pixels falling outside `self` are dropped.
    pub fn paste(&mut self, src: &Raster, alpha: Option<&Raster>, x: i64, y: i64) -> Result<()> {
        if let Some(a) = alpha {
            if a.width != src.width || a.height != src.height {
                return Err(Error::DimMismatch {
                    expected: src.width * src.height,
                    actual: a.width * a.height,
                });
            }
        }
        for sy in 0..src.height {
            let ty = y + sy as i64;
            if ty < 0 || ty >= self.height as i64 {
                continue;
            }
            for sx in 0..src.width {
                let tx = x + sx as i64;
                if tx < 0 || tx >= self.width as i64 {
                    continue;
                }
                let v = src.get(sx, sy);
                let (tx, ty) = (tx as usize, ty as usize);
                let out = match alpha {
                    None => v,
                    Some(a) => {
                        let w = a.get(sx, sy);
                        let bg = self.get(tx, ty);
                        bg + w * (v - bg)
                    }
                };
                self.set(tx, ty, clamp_unit(out));
            }
        }
        Ok(())
    }

    /// Toroidal shift: output pixel `(x, y)` takes input pixel
    /// `((x - dx) mod w, (y - dy) mod h)`.
    pub fn cyclic_shift(&self, dx: i64, dy: i64) -> Raster {
        let (w, h) = (self.width as i64, self.height as i64);
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..h {
            let sy = (y - dy).rem_euclid(h) as usize;
            for x in 0..w {
                let sx = (x - dx).rem_euclid(w) as usize;
                data.push(self.get(sx, sy));
            }
        }
        Raster {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Integer translation with `fill` for uncovered pixels.
    pub fn translate(&self, dx: i64, dy: i64, fill: f64) -> Raster {
        let (w, h) = (self.width as i64, self.height as i64);
        let fill = clamp_unit(fill);
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = (x - dx, y - dy);
                if sx < 0 || sy < 0 || sx >= w || sy >= h {
                    data.push(fill);
                } else {
                    data.push(self.get(sx as usize, sy as usize));
                }
            }
        }
        Raster {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Bilinear sample at a sub-pixel position, `None` when the position is
    /// outside the pixel-center hull `[0, w-1] x [0, h-1]`.
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        const SLACK: f64 = 1e-9;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x >= -SLACK && y >= -SLACK && x <= max_x + SLACK && y <= max_y + SLACK) {
            return None;
        }
        Some(self.sample_clamped(x, y))
    }

    /// Bilinear sample with coordinates clamped onto the image (replicated
    /// borders).
    pub fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let x0 = x.floor();
        let y0 = y.floor();
        let tx = x - x0;
        let ty = y - y0;
        let (x0, y0) = (x0 as usize, y0 as usize);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        // lerp form a + t(b - a) is exact when t == 0 or a == b
        let top = lerp(self.get(x0, y0), self.get(x1, y0), tx);
        if ty == 0.0 {
            return top;
        }
        let bottom = lerp(self.get(x0, y1), self.get(x1, y1), tx);
        lerp(top, bottom, ty)
    }

    /// Bilinear resize to `w`x`h`, aligning pixel areas (half-pixel offset).
    pub fn resize(&self, w: usize, h: usize) -> Result<Raster> {
        if w == 0 || h == 0 {
            return Err(Error::ZeroArea);
        }
        if w == self.width && h == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / w as f64;
        let sy = self.height as f64 / h as f64;
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            for x in 0..w {
                let src_x = (x as f64 + 0.5) * sx - 0.5;
                data.push(clamp_unit(self.sample_clamped(src_x, src_y)));
            }
        }
        Ok(Raster {
            width: w,
            height: h,
            data,
        })
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

#[inline]
fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Round half up, used for all derived image dimensions.
pub fn round_half_up(v: f64) -> usize {
    (v + 0.5).floor().max(0.0) as usize
}

// ---------------------------------------------------------------------------
// ingestion

/// Loads a grayscale raster from a PGM (P2/P5) or PNG file.
pub fn load_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raster(&bytes)
}

/// Decodes PGM or PNG bytes. Color PNGs are converted with luma weights
/// 0.299/0.587/0.114.
pub fn decode_raster(bytes: &[u8]) -> Result<Raster> {
    if bytes.is_empty() {
        return Err(Error::MalformedImage("empty file".into()));
    }
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        return parse_pgm(bytes);
    }
    if bytes.starts_with(b"\x89PNG") {
        return decode_png(bytes);
    }
    Err(Error::UnsupportedFormat(
        "expected PGM (P2/P5) or PNG".to_string(),
    ))
}

fn decode_png(bytes: &[u8]) -> Result<Raster> {
    use image::DynamicImage;
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::MalformedImage(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::ZeroArea);
    }
    let data: Vec<f64> = match &img {
        DynamicImage::ImageLuma8(g) => g.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(g) => g.as_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) | DynamicImage::ImageLumaA16(_) => img
            .to_rgb16()
            .pixels()
            .map(|p| luma(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / 65535.0)
            .collect(),
        _ => img
            .to_rgb8()
            .pixels()
            .map(|p| luma(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / 255.0)
            .collect(),
    };
    Raster::new(w, h, data.into_iter().map(clamp_unit).collect())
}

#[inline]
fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

struct PgmHeader {
    binary: bool,
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

fn parse_pgm_header(bytes: &[u8]) -> Result<PgmHeader> {
    let binary = &bytes[..2] == b"P5";
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while let Some(&c) = bytes.get(pos) {
                        pos += 1;
                        if c == b'\n' {
                            break;
                        }
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::MalformedImage("truncated PGM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|c| c.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedImage("expected integer in PGM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedImage("PGM header integer overflow".into()))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::ZeroArea);
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::MalformedImage(format!("PGM maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from binary data
    if binary {
        match bytes.get(pos) {
            Some(c) if c.is_ascii_whitespace() => pos += 1,
            _ => return Err(Error::MalformedImage("missing PGM header terminator".into())),
        }
    }
    Ok(PgmHeader {
        binary,
        width: width as usize,
        height: height as usize,
        maxval: maxval as u32,
        data_offset: pos,
    })
}

fn parse_pgm(bytes: &[u8]) -> Result<Raster> {
    let hdr = parse_pgm_header(bytes)?;
    let n = hdr
        .width
        .checked_mul(hdr.height)
        .ok_or_else(|| Error::MalformedImage("PGM dimensions overflow".into()))?;
    let maxval = hdr.maxval as f64;
    let body = &bytes[hdr.data_offset..];
    let mut raw: Vec<u32> = Vec::with_capacity(n);
    if hdr.binary {
        let wide = hdr.maxval > 255;
        let need = if wide { 2 * n } else { n };
        if body.len() < need {
            return Err(Error::MalformedImage("truncated PGM pixel data".into()));
        }
        if wide {
            raw.extend(body[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as u32));
        } else {
            raw.extend(body[..n].iter().map(|&b| b as u32));
        }
    } else {
        let text = std::str::from_utf8(body)
            .map_err(|_| Error::MalformedImage("non-ASCII P2 body".into()))?;
        for tok in text.split_ascii_whitespace().take(n) {
            raw.push(
                tok.parse()
                    .map_err(|_| Error::MalformedImage(format!("bad P2 sample {tok:?}")))?,
            );
        }
        if raw.len() < n {
            return Err(Error::MalformedImage("truncated PGM pixel data".into()));
        }
    }
    if raw.iter().any(|&v| v > hdr.maxval) {
        return Err(Error::MalformedImage("PGM sample exceeds maxval".into()));
    }
    let data = raw.into_iter().map(|v| v as f64 / maxval).collect();
    Raster::new(hdr.width, hdr.height, data)
}

/// Encodes as binary PGM (P5). `maxval` above 255 writes 16-bit samples.
pub fn encode_pgm(img: &Raster, maxval: u16) -> Vec<u8> {
    let maxval = maxval.max(1);
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, maxval).into_bytes();
    let scale = maxval as f64;
    for &v in &img.data {
        let q = (v * scale).round() as u16;
        if maxval > 255 {
            out.extend_from_slice(&q.to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    out
}

pub fn save_pgm(img: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(img, 255)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// jitter

/// One affine jitter: rotation and scaling about the image center, then a
/// translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterParams {
    pub dx: f64,
    pub dy: f64,
    pub scale: f64,
    /// Degrees.
    pub rotation: f64,
}

impl JitterParams {
    pub const IDENTITY: JitterParams = JitterParams {
        dx: 0.0,
        dy: 0.0,
        scale: 1.0,
        rotation: 0.0,
    };

    pub fn rotation(degrees: f64) -> Self {
        JitterParams {
            rotation: degrees,
            ..Self::IDENTITY
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        JitterParams {
            dx,
            dy,
            ..Self::IDENTITY
        }
    }

    fn validate(&self) -> Result<()> {
        if ![self.dx, self.dy, self.scale, self.rotation]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite("jitter parameters"));
        }
        if self.scale <= 0.0 {
            return Err(Error::param("jitter scale must be > 0"));
        }
        Ok(())
    }
}

/// Closed ranges `(lo, hi)` for each jitter component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterRanges {
    pub dx: (f64, f64),
    pub dy: (f64, f64),
    pub scale: (f64, f64),
    pub rotation: (f64, f64),
}

impl JitterRanges {
    /// Translation ±40 px, scaling 1 to 1.5, in-plane rotation ±20°.
    pub const WIDE: JitterRanges = JitterRanges {
        dx: (-40.0, 40.0),
        dy: (-40.0, 40.0),
        scale: (1.0, 1.5),
        rotation: (-20.0, 20.0),
    };

    pub const NONE: JitterRanges = JitterRanges {
        dx: (0.0, 0.0),
        dy: (0.0, 0.0),
        scale: (1.0, 1.0),
        rotation: (0.0, 0.0),
    };

    pub fn point(p: JitterParams) -> Self {
        JitterRanges {
            dx: (p.dx, p.dx),
            dy: (p.dy, p.dy),
            scale: (p.scale, p.scale),
            rotation: (p.rotation, p.rotation),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("dx", self.dx),
            ("dy", self.dy),
            ("scale", self.scale),
            ("rotation", self.rotation),
        ] {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::NonFinite("jitter ranges"));
            }
            if lo > hi {
                return Err(Error::param(format!("inverted {name} range [{lo}, {hi}]")));
            }
        }
        if self.scale.0 <= 0.0 {
            return Err(Error::param("scale range must be positive"));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::NONE
    }
}

/// Draws one jitter with every component uniform on its closed range.
pub fn sample_jitter<R: Rng + ?Sized>(rng: &mut R, ranges: &JitterRanges) -> Result<JitterParams> {
    ranges.validate()?;
    let mut draw = |(lo, hi): (f64, f64)| {
        if lo == hi {
            lo
        } else {
            Uniform::new_inclusive(lo, hi).sample(rng)
        }
    };
    Ok(JitterParams {
        dx: draw(ranges.dx),
        dy: draw(ranges.dy),
        scale: draw(ranges.scale),
        rotation: draw(ranges.rotation),
    })
}

/// Applies `p` by inverse mapping every output pixel into the source and
/// sampling bilinearly; samples falling outside the source take `fill`.
pub fn affine_jitter(img: &Raster, p: &JitterParams, fill: f64) -> Result<Raster> {
    p.validate()?;
    if !fill.is_finite() {
        return Err(Error::NonFinite("fill"));
    }
    let fill = clamp_unit(fill);
    let cx = (img.width - 1) as f64 / 2.0;
    let cy = (img.height - 1) as f64 / 2.0;
    let theta = p.rotation.to_radians();
    let (sin, cos) = theta.sin_cos();
    let inv_s = 1.0 / p.scale;
    let mut data = Vec::with_capacity(img.data.len());
    for y in 0..img.height {
        let v = y as f64 - cy - p.dy;
        for x in 0..img.width {
            let u = x as f64 - cx - p.dx;
            let sx = cx + (cos * u + sin * v) * inv_s;
            let sy = cy + (cos * v - sin * u) * inv_s;
            data.push(img.sample(sx, sy).map_or(fill, clamp_unit));
        }
    }
    Ok(Raster {
        width: img.width,
        height: img.height,
        data,
    })
}

// ---------------------------------------------------------------------------
// pyramid

#[derive(Debug, Clone)]
pub struct PyramidLevel {
    pub ratio: f64,
    pub image: Raster,
}

/// Scaled copies of one image, in the order the ratios were given.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<PyramidLevel>,
}

impl Pyramid {
    pub fn levels(&self) -> &[PyramidLevel] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// `count` ratios spaced geometrically from `first` to `last` inclusive.
pub fn geometric_ratios(first: f64, last: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![first],
        _ => {
            let step = (last / first).powf(1.0 / (count - 1) as f64);
            let mut out: Vec<f64> = (0..count).map(|i| first * step.powi(i as i32)).collect();
            out[count - 1] = last;
            out
        }
    }
}

/// Resizes `img` by each ratio. Ratios must be positive and strictly
/// monotone; every level must keep both sides at least `min_side` pixels.
pub fn build_pyramid(img: &Raster, ratios: &[f64], min_side: usize) -> Result<Pyramid> {
    if ratios.is_empty() {
        return Err(Error::Empty("pyramid ratios"));
    }
    if ratios.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return Err(Error::param("pyramid ratios must be finite and > 0"));
    }
    if ratios.len() > 1 {
        let increasing = ratios.windows(2).all(|w| w[0] < w[1]);
        let decreasing = ratios.windows(2).all(|w| w[0] > w[1]);
        if !increasing && !decreasing {
            return Err(Error::param("pyramid ratios must be strictly monotone"));
        }
    }
    let levels = ratios
        .iter()
        .map(|&ratio| {
            let w = round_half_up(img.width as f64 * ratio);
            let h = round_half_up(img.height as f64 * ratio);
            if w.min(h) < min_side.max(1) {
                return Err(Error::WindowTooSmall {
                    win: min_side,
                    reason: format!("ratio {ratio} yields a {w}x{h} level"),
                });
            }
            Ok(PyramidLevel {
                ratio,
                image: img.resize(w, h)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Pyramid { levels })
}
