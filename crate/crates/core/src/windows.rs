//! Dense window extraction over a scale pyramid.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{extract, hog_window, DescriptorConfig, DescriptorKind, GradientField};
use crate::hw::normalize;
use crate::image::Pyramid;

/// Location of one square window: pyramid level and top-left pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WindowRef {
    pub level: usize,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

/// Unit-normalized window descriptors (flat patches stay zero), aligned
/// with their [`WindowRef`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBank {
    kind: DescriptorKind,
    dim: usize,
    refs: Vec<WindowRef>,
    data: Vec<f64>,
}

/// Number of `win`-sized windows at `stride` on a `w`x`h` level.
pub fn windows_per_level(w: usize, h: usize, win: usize, stride: usize) -> usize {
    if w < win || h < win || stride == 0 {
        return 0;
    }
    ((w - win) / stride + 1) * ((h - win) / stride + 1)
}

impl WindowBank {
    /// Builds a bank from raw vectors, normalizing each.
    pub fn from_vectors(
        kind: DescriptorKind,
        dim: usize,
        refs: Vec<WindowRef>,
        vectors: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if refs.len() != vectors.len() {
            return Err(Error::DimMismatch {
                expected: refs.len(),
                actual: vectors.len(),
            });
        }
        let mut data = Vec::with_capacity(dim * vectors.len());
        for mut v in vectors {
            if v.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("window descriptor"));
            }
            normalize(&mut v);
            data.extend_from_slice(&v);
        }
        Ok(WindowBank {
            kind,
            dim,
            refs,
            data,
        })
    }

    pub fn kind(&self) -> DescriptorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn refs(&self) -> &[WindowRef] {
        &self.refs
    }

    #[inline]
    pub fn desc(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics; an empty-dim bank has no meaningful rows
        self.data.chunks_exact(self.dim.max(1))
    }

    /// Little-endian: count, dim, kind tag (u32 each); then five u32 per ref
    /// (level, x, y, w, h); then `count * dim` f32 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 20 * self.len() + 4 * self.data.len());
        for v in [self.len() as u32, self.dim as u32, self.kind.tag()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for r in &self.refs {
            for v in [r.level, r.x, r.y, r.w, r.h] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
        }
        for v in &self.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    /// Inverse of [`WindowBank::to_bytes`]; descriptors are renormalized
    /// after widening from f32.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let word = |i: usize| -> Result<u32> {
            bytes
                .get(4 * i..4 * i + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| Error::Format("window bank truncated".into()))
        };
        let count = word(0)? as usize;
        let dim = word(1)? as usize;
        let kind = DescriptorKind::from_tag(word(2)?)?;
        let want = 12 + 20 * count + 4 * count * dim;
        if bytes.len() != want {
            return Err(Error::Format(format!(
                "window bank is {} bytes, header implies {want}",
                bytes.len()
            )));
        }
        let refs = (0..count)
            .map(|i| {
                let base = 3 + 5 * i;
                Ok(WindowRef {
                    level: word(base)? as usize,
                    x: word(base + 1)? as usize,
                    y: word(base + 2)? as usize,
                    w: word(base + 3)? as usize,
                    h: word(base + 4)? as usize,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let floats = &bytes[12 + 20 * count..];
        let vectors = floats
            .chunks_exact(4 * dim.max(1))
            .take(count)
            .map(|row| {
                row.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect()
            })
            .collect();
        WindowBank::from_vectors(kind, dim, refs, vectors)
    }
}

/// Every `win`x`win` window at multiples of `stride` lying fully inside its
/// level, ordered level-major then row-major, with its descriptor.
pub fn extract_windows(
    pyr: &Pyramid,
    win: usize,
    stride: usize,
    cfg: &DescriptorConfig,
    kind: DescriptorKind,
) -> Result<WindowBank> {
    if stride == 0 {
        return Err(Error::param("stride must be >= 1"));
    }
    cfg.validate()?;
    let min = cfg.min_window(kind);
    if win < min {
        return Err(Error::WindowTooSmall {
            win,
            reason: format!("{kind} descriptors need at least {min} pixels"),
        });
    }
    let mut refs = Vec::new();
    for (level, l) in pyr.levels().iter().enumerate() {
        let (w, h) = (l.image.width(), l.image.height());
        if w < win || h < win {
            continue;
        }
        for y in (0..=h - win).step_by(stride) {
            for x in (0..=w - win).step_by(stride) {
                refs.push(WindowRef {
                    level,
                    x,
                    y,
                    w: win,
                    h: win,
                });
            }
        }
    }
    if refs.is_empty() {
        return Err(Error::WindowTooSmall {
            win,
            reason: "no pyramid level admits a window".into(),
        });
    }
    let dim = cfg.dim(kind, win, win);
    let fields: Vec<Option<GradientField>> = pyr
        .levels()
        .par_iter()
        .map(|l| (kind == DescriptorKind::Hog).then(|| GradientField::new(&l.image)))
        .collect();
    let vectors = refs
        .par_iter()
        .map(|r| {
            let img = &pyr.levels()[r.level].image;
            match &fields[r.level] {
                Some(f) => Ok(hog_window(img, f, r.x, r.y, r.w, r.h, cfg)?.values),
                None => Ok(extract(&img.crop(r.x, r.y, r.w, r.h)?, cfg, kind)?.values),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    WindowBank::from_vectors(kind, dim, refs, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hw::dot;
    use crate::image::{build_pyramid, Raster};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::from_fn(w, h, |_, _| rng.gen::<f64>())
    }

    fn bank(img: &Raster, ratios: &[f64], win: usize, stride: usize) -> WindowBank {
        let pyr = build_pyramid(img, ratios, 1).unwrap();
        extract_windows(&pyr, win, stride, &DescriptorConfig::default(), DescriptorKind::Hog).unwrap()
    }

    #[test]
    fn single_window() {
        let b = bank(&noise(64, 64, 0), &[1.0], 64, 8);
        assert_eq!(b.len(), 1);
        assert_eq!(b.refs()[0], WindowRef { level: 0, x: 0, y: 0, w: 64, h: 64 });
    }

    #[test]
    fn three_by_three() {
        let b = bank(&noise(80, 80, 1), &[1.0], 64, 8);
        assert_eq!(b.len(), 9);
        assert_eq!(windows_per_level(80, 80, 64, 8), 9);
    }

    #[test]
    fn count_matches_enumeration_over_levels() {
        let img = noise(90, 70, 2);
        let ratios = [1.0, 0.8, 0.6];
        let pyr = build_pyramid(&img, &ratios, 1).unwrap();
        let b = extract_windows(&pyr, 24, 5, &DescriptorConfig::default(), DescriptorKind::Lbp).unwrap();
        let mut brute = 0;
        for l in pyr.levels() {
            for y in 0..l.image.height() {
                for x in 0..l.image.width() {
                    if x % 5 == 0 && y % 5 == 0 && x + 24 <= l.image.width() && y + 24 <= l.image.height() {
                        brute += 1;
                    }
                }
            }
        }
        assert_eq!(b.len(), brute);
        let formula: usize = pyr
            .levels()
            .iter()
            .map(|l| windows_per_level(l.image.width(), l.image.height(), 24, 5))
            .sum();
        assert_eq!(formula, brute);
        // level-major then row-major
        for w in b.refs().windows(2) {
            assert!((w[0].level, w[0].y, w[0].x) < (w[1].level, w[1].y, w[1].x));
        }
    }

    #[test]
    fn descriptors_unit_or_zero() {
        let mut img = noise(48, 48, 3);
        img.paste(&Raster::filled(16, 16, 0.5), None, 0, 0).unwrap();
        let b = bank(&img, &[1.0], 16, 8);
        let mut zeros = 0;
        for d in b.iter() {
            let n = dot(d, d);
            if n == 0.0 {
                zeros += 1;
            } else {
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(zeros, 1);
    }

    #[test]
    fn no_level_admits_window() {
        let pyr = build_pyramid(&noise(20, 20, 4), &[1.0], 1).unwrap();
        assert!(extract_windows(&pyr, 32, 8, &DescriptorConfig::default(), DescriptorKind::Hog).is_err());
    }

    #[test]
    fn stride_translation_preserves_interior_multiset() {
        let (side, win, stride) = (64usize, 24usize, 8usize);
        let img = noise(side, side, 5);
        let shifted = img.cyclic_shift(stride as i64, stride as i64);
        let a = bank(&img, &[1.0], win, stride);
        let b = bank(&shifted, &[1.0], win, stride);
        // a window at (x, y) in the original reappears at (x + s, y + s)
        let mut matched = 0;
        for (i, r) in a.refs().iter().enumerate() {
            let target = b
                .refs()
                .iter()
                .position(|q| q.x == r.x + stride && q.y == r.y + stride);
            if let Some(j) = target {
                for (p, q) in a.desc(i).iter().zip(b.desc(j)) {
                    assert!((p - q).abs() < 1e-6);
                }
                matched += 1;
            }
        }
        let per_axis = (side - win) / stride + 1;
        assert_eq!(matched, (per_axis - 1) * (per_axis - 1));
    }

    #[test]
    fn bytes_roundtrip() {
        let b = bank(&noise(40, 40, 6), &[1.0, 0.75], 16, 8);
        let back = WindowBank::from_bytes(&b.to_bytes()).unwrap();
        assert_eq!(back.refs(), b.refs());
        assert_eq!(back.dim(), b.dim());
        for i in 0..b.len() {
            for (p, q) in back.desc(i).iter().zip(b.desc(i)) {
                assert!((p - q).abs() < 1e-6);
            }
        }
        assert!(WindowBank::from_bytes(&b.to_bytes()[..20]).is_err());
    }
}
