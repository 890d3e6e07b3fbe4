//! The HW-module primitive: tuning by normalized dot product, then pooling.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::features::{Descriptor, DescriptorKind};
use crate::image::Raster;

/// Dot product with a fixed four-lane summation order, so results are
/// reproducible bit for bit regardless of caller.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Normalized dot product; 0 when either vector has zero norm.
pub fn ndot(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    if u.iter().chain(v).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("ndot input"));
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok(dot(u, v) / (nu * nv))
}

/// Scales `v` to unit L2 norm in place; zero vectors stay zero.
pub fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolKind {
    #[default]
    Max,
    Mean,
}

impl PoolKind {
    /// Pools a nonempty score list.
    pub fn pool(self, scores: &[f64]) -> Result<f64> {
        if scores.is_empty() {
            return Err(Error::Empty("pooling scores"));
        }
        Ok(match self {
            PoolKind::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            PoolKind::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
        })
    }
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolKind::Max => "max",
            PoolKind::Mean => "mean",
        })
    }
}

impl FromStr for PoolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "max" => Ok(PoolKind::Max),
            "mean" => Ok(PoolKind::Mean),
            other => Err(Error::param(format!("unknown pooling {other:?}"))),
        }
    }
}

/// Response of one HW-module: its pooled tuning scores.
pub fn hw_response(win_scores: &[f64], pool: PoolKind) -> Result<f64> {
    pool.pool(win_scores)
}

/// A stored, unit-normalized template descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub desc: Descriptor,
    pub identity: String,
    /// Index of the source image in its template book.
    pub source_index: usize,
    /// Which transformation of the source produced this template.
    pub transform_index: usize,
}

impl Template {
    /// Normalizes `desc` to unit length. Zero descriptors are rejected.
    pub fn new(
        mut desc: Descriptor,
        identity: impl Into<String>,
        source_index: usize,
        transform_index: usize,
    ) -> Result<Self> {
        let n = desc.norm();
        if n == 0.0 {
            return Err(Error::param("template descriptor has zero norm"));
        }
        desc.values.iter_mut().for_each(|v| *v /= n);
        Ok(Template {
            desc,
            identity: identity.into(),
            source_index,
            transform_index,
        })
    }

    pub fn kind(&self) -> DescriptorKind {
        self.desc.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.desc.values
    }
}

/// Both sides of the transfer identity for a cyclic shift `g`:
/// `<g img, tmpl>` and `<img, g^-1 tmpl>`, on raw pixels.
pub fn check_transfer_condition(img: &Raster, tmpl: &Raster, shift: (i64, i64)) -> Result<(f64, f64)> {
    if img.width() != tmpl.width() || img.height() != tmpl.height() {
        return Err(Error::DimMismatch {
            expected: img.width() * img.height(),
            actual: tmpl.width() * tmpl.height(),
        });
    }
    let (dx, dy) = shift;
    let lhs = ndot(img.cyclic_shift(dx, dy).data(), tmpl.data())?;
    let rhs = ndot(img.data(), tmpl.cyclic_shift(-dx, -dy).data())?;
    Ok((lhs, rhs))
}

/// Same as [`check_transfer_condition`] with a cropping (non-cyclic) shift;
/// uncovered pixels take `fill`. The identity generally fails here.
pub fn check_transfer_condition_cropped(
    img: &Raster,
    tmpl: &Raster,
    shift: (i64, i64),
    fill: f64,
) -> Result<(f64, f64)> {
    if img.width() != tmpl.width() || img.height() != tmpl.height() {
        return Err(Error::DimMismatch {
            expected: img.width() * img.height(),
            actual: tmpl.width() * tmpl.height(),
        });
    }
    let (dx, dy) = shift;
    let lhs = ndot(img.translate(dx, dy, fill).data(), tmpl.data())?;
    let rhs = ndot(img.data(), tmpl.translate(-dx, -dy, fill).data())?;
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ndot_examples() {
        assert!((ndot(&[2.0, 1.0], &[2.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(ndot(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((ndot(&[3.0, 4.0], &[4.0, 3.0]).unwrap() - 0.96).abs() < 1e-15);
        assert_eq!(ndot(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn ndot_errors() {
        assert!(matches!(ndot(&[1.0], &[1.0, 2.0]), Err(Error::DimMismatch { .. })));
        assert!(matches!(ndot(&[f64::NAN], &[1.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn dot_matches_naive_on_odd_lengths() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn pooling() {
        assert_eq!(hw_response(&[0.2, 0.9, 0.5], PoolKind::Max).unwrap(), 0.9);
        assert!((hw_response(&[0.2, 0.9, 0.4], PoolKind::Mean).unwrap() - 0.5).abs() < 1e-15);
        assert!(hw_response(&[], PoolKind::Max).is_err());
    }

    #[test]
    fn max_over_own_shifts_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Raster::from_fn(12, 10, |_, _| rng.gen::<f64>());
        let tmpl = img.cyclic_shift(5, 3);
        let scores: Vec<f64> = (0..10)
            .flat_map(|dy| (0..12).map(move |dx| (dx, dy)))
            .map(|(dx, dy)| ndot(img.cyclic_shift(dx, dy).data(), tmpl.data()).unwrap())
            .collect();
        assert!((hw_response(&scores, PoolKind::Max).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn transfer_identity_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Raster::from_fn(8, 8, |_, _| rng.gen::<f64>());
        let b = Raster::from_fn(8, 8, |_, _| rng.gen::<f64>());
        let (l, r) = check_transfer_condition(&a, &b, (0, 0)).unwrap();
        assert_eq!(l, r);
        assert!(check_transfer_condition(&a, &Raster::filled(4, 8, 0.0), (1, 1)).is_err());
    }

    #[test]
    fn cropping_shift_breaks_transfer() {
        // counterexample search: some random image/template/shift shows a gap
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let max_gap = (0..20)
            .map(|_| {
                let a = Raster::from_fn(10, 10, |_, _| rng.gen::<f64>());
                let b = Raster::from_fn(10, 10, |_, _| rng.gen::<f64>());
                let s = (rng.gen_range(1..5), rng.gen_range(-4..5));
                let (l, r) = check_transfer_condition_cropped(&a, &b, s, 0.0).unwrap();
                (l - r).abs()
            })
            .fold(0.0, f64::max);
        assert!(max_gap > 1e-3, "gap {max_gap}");
    }

    #[test]
    fn template_is_unit() {
        let d = Descriptor::new(DescriptorKind::Hog, vec![3.0, 4.0]).unwrap();
        let t = Template::new(d, "a", 0, 0).unwrap();
        assert!((dot(t.values(), t.values()) - 1.0).abs() < 1e-12);
        let z = Descriptor::new(DescriptorKind::Hog, vec![0.0, 0.0]).unwrap();
        assert!(Template::new(z, "a", 0, 0).is_err());
    }

    proptest! {
        #[test]
        fn ndot_bounded_and_scale_invariant(
            u in prop::collection::vec(-100.0f64..100.0, 8),
            v in prop::collection::vec(-100.0f64..100.0, 8),
            a in 0.001f64..1000.0,
            b in 0.001f64..1000.0,
        ) {
            let c = ndot(&u, &v).unwrap();
            prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&c));
            let su: Vec<f64> = u.iter().map(|x| x * a).collect();
            let sv: Vec<f64> = v.iter().map(|x| x * b).collect();
            prop_assert!((ndot(&su, &sv).unwrap() - c).abs() < 1e-9);
        }

        #[test]
        fn max_pool_permutation_and_monotone(
            mut s in prop::collection::vec(-1.0f64..1.0, 1..30),
            extra in 0.0f64..1.0,
            seed in any::<u64>(),
        ) {
            let m = PoolKind::Max.pool(&s).unwrap();
            use rand::seq::SliceRandom;
            s.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(PoolKind::Max.pool(&s).unwrap(), m);
            // any score not above the current max leaves it unchanged
            s.push(m - extra);
            prop_assert_eq!(PoolKind::Max.pool(&s).unwrap(), m);
        }
    }
}
