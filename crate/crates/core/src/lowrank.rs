//! PCA of the template matrix and dot products in the reduced space.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::coc::{pool_tiled, OpCounters, Scorer};
use crate::error::{Error, Result};
use crate::hw::{dot, PoolKind};
use crate::matrix::{Matrix, Rows};

/// Mean and top-`k` principal directions of a template set.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    mean: Vec<f64>,
    /// k x dim, orthonormal rows
    basis: Matrix,
    singular_values: Vec<f64>,
    rank: usize,
}

/// A vector in basis coordinates, with what is needed to undo centering
/// and normalization when scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected {
    pub coords: Vec<f64>,
    /// Original-space L2 norm.
    pub norm: f64,
    /// `<mean, v>` in the original space.
    pub mean_dot: f64,
}

/// Eigenvalues below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-10;

impl ProjectionBasis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.basis.rows()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Retained directions with nonzero singular value: the numerical rank
    /// of the centered template matrix, capped at `k`.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn mean_norm2(&self) -> f64 {
        dot(&self.mean, &self.mean)
    }

    /// `basis (v - mean)`.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                actual: v.len(),
            });
        }
        Ok(self.project_unchecked(v))
    }

    fn project_unchecked(&self, v: &[f64]) -> Vec<f64> {
        // <b, v - mean> = <b, v> - <b, mean>; computing the difference first
        // keeps projections of the mean exactly zero
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        (0..self.k()).map(|i| dot(self.basis.row(i), &centered)).collect()
    }

    pub fn project_full(&self, v: &[f64]) -> Result<Projected> {
        let coords = self.project(v)?;
        Ok(Projected {
            coords,
            norm: dot(v, v).sqrt(),
            mean_dot: dot(&self.mean, v),
        })
    }

    /// `mean + basis^T coords`.
    pub fn reconstruct(&self, coords: &[f64]) -> Result<Vec<f64>> {
        if coords.len() != self.k() {
            return Err(Error::DimMismatch {
                expected: self.k(),
                actual: coords.len(),
            });
        }
        let mut out = self.mean.clone();
        for (i, c) in coords.iter().enumerate() {
            for (o, b) in out.iter_mut().zip(self.basis.row(i)) {
                *o += c * b;
            }
        }
        Ok(out)
    }

    /// Little-endian: dim, k (u64 each); mean; basis rows; singular values;
    /// all values f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * (self.dim() * (self.k() + 1) + self.k()));
        out.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        out.extend_from_slice(&(self.k() as u64).to_le_bytes());
        for v in self.mean.iter().chain(self.basis.data()).chain(&self.singular_values) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Format("basis header truncated".into()));
        }
        let dim = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
        let k = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let count = dim
            .checked_mul(k + 1)
            .and_then(|c| c.checked_add(k))
            .ok_or_else(|| Error::Format("basis header overflows".into()))?;
        if bytes.len() - 16 != 8 * count {
            return Err(Error::Format(format!(
                "basis body is {} bytes, header implies {}",
                bytes.len() - 16,
                8 * count
            )));
        }
        let vals: Vec<f64> = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mean = vals[..dim].to_vec();
        let basis = Matrix::from_flat(k, dim, vals[dim..dim * (k + 1)].to_vec())?;
        let singular_values = vals[dim * (k + 1)..].to_vec();
        let rank = singular_values.iter().filter(|&&s| s > 0.0).count();
        Ok(ProjectionBasis {
            mean,
            basis,
            singular_values,
            rank,
        })
    }
}

/// Cosine of the original vectors estimated from their projections.
/// Exact when both lie in `mean + span(basis)`.
pub fn approx_ndot(pu: &Projected, pv: &Projected, mean_norm2: f64) -> Result<f64> {
    if pu.coords.len() != pv.coords.len() {
        return Err(Error::DimMismatch {
            expected: pu.coords.len(),
            actual: pv.coords.len(),
        });
    }
    if pu.norm == 0.0 || pv.norm == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(&pu.coords, &pv.coords) + pu.mean_dot + pv.mean_dot - mean_norm2) / (pu.norm * pv.norm))
}

/// Principal directions of the mean-centered rows of `templates`.
pub fn fit_pca(templates: &impl Rows, k: usize) -> Result<ProjectionBasis> {
    let (n, dim) = (templates.n_rows(), templates.n_cols());
    if n < 2 {
        return Err(Error::param(format!("PCA needs at least 2 templates, got {n}")));
    }
    if k == 0 || k > n.min(dim) {
        return Err(Error::param(format!(
            "PCA rank k = {k} outside 1..={}",
            n.min(dim)
        )));
    }
    for i in 0..n {
        if templates.row(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("PCA input"));
        }
    }
    let mut mean = vec![0.0; dim];
    for i in 0..n {
        mean.iter_mut().zip(templates.row(i)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centered = Vec::with_capacity(n * dim);
    for i in 0..n {
        centered.extend(templates.row(i).iter().zip(&mean).map(|(v, m)| v - m));
    }
    let x = DMatrix::from_row_slice(n, dim, &centered);

    // Eigen-decompose whichever Gram matrix is smaller.
    let (mut dirs, eigvals): (Vec<Vec<f64>>, Vec<f64>) = if n <= dim {
        let g = &x * x.transpose();
        let eig = SymmetricEigen::new(g);
        let order = descending(eig.eigenvalues.as_slice());
        let dirs = order
            .iter()
            .map(|&c| {
                let u = eig.eigenvectors.column(c);
                (x.transpose() * u).iter().copied().collect()
            })
            .collect();
        (dirs, order.iter().map(|&c| eig.eigenvalues[c]).collect())
    } else {
        let c = x.transpose() * &x;
        let eig = SymmetricEigen::new(c);
        let order = descending(eig.eigenvalues.as_slice());
        let dirs = order
            .iter()
            .map(|&c| eig.eigenvectors.column(c).iter().copied().collect())
            .collect();
        (dirs, order.iter().map(|&c| eig.eigenvalues[c]).collect())
    };

    let top = eigvals.first().copied().unwrap_or(0.0).max(0.0);
    let rank = eigvals.iter().filter(|&&l| l > top * RANK_TOL && l > 0.0).count();
    if rank == 0 {
        return Err(Error::param("PCA input has rank 0 (all templates identical)"));
    }
    dirs.truncate(rank.min(k));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    for d in dirs {
        if let Some(v) = orthonormalize(&basis, d) {
            basis.push(v);
        }
    }
    // pad with unit coordinate directions beyond the data rank
    let mut e = 0;
    while basis.len() < k && e < dim {
        let mut d = vec![0.0; dim];
        d[e] = 1.0;
        if let Some(v) = orthonormalize(&basis, d) {
            basis.push(v);
        }
        e += 1;
    }
    for v in &mut basis {
        fix_sign(v);
    }
    let singular_values = (0..k)
        .map(|i| if i < rank { eigvals[i].max(0.0).sqrt() } else { 0.0 })
        .collect();
    let flat: Vec<f64> = basis.concat();
    Ok(ProjectionBasis {
        mean,
        basis: Matrix::from_flat(k, dim, flat)?,
        singular_values,
        rank: rank.min(k),
    })
}

fn descending(vals: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    order
}

/// Two passes of Gram-Schmidt against `basis`; `None` if nothing is left.
fn orthonormalize(basis: &[Vec<f64>], mut d: Vec<f64>) -> Option<Vec<f64>> {
    let start = dot(&d, &d).sqrt();
    if start == 0.0 {
        return None;
    }
    for _ in 0..2 {
        for b in basis {
            let c = dot(&d, b);
            d.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
    let n = dot(&d, &d).sqrt();
    if n <= start * 1e-8 {
        return None;
    }
    d.iter_mut().for_each(|x| *x /= n);
    Some(d)
}

/// Largest-magnitude component positive; the first such component wins ties.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Window descriptors projected once, reusable for hashing and scoring.
#[derive(Debug, Clone)]
pub struct ProjectedBank {
    coords: Matrix,
    norms: Vec<f64>,
    mean_dots: Vec<f64>,
}

impl ProjectedBank {
    pub fn coords(&self) -> &Matrix {
        &self.coords
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }
}

impl Rows for ProjectedBank {
    fn n_rows(&self) -> usize {
        self.coords.rows()
    }

    fn n_cols(&self) -> usize {
        self.coords.cols()
    }

    fn row(&self, i: usize) -> &[f64] {
        Rows::row(&self.coords, i)
    }
}

/// Scores windows against templates in basis coordinates.
#[derive(Debug, Clone)]
pub struct LowRankScorer {
    basis: ProjectionBasis,
    templates: Vec<Projected>,
    mean_norm2: f64,
}

impl LowRankScorer {
    pub fn new(basis: ProjectionBasis, templates: &impl Rows) -> Result<Self> {
        if templates.n_cols() != basis.dim() {
            return Err(Error::DimMismatch {
                expected: basis.dim(),
                actual: templates.n_cols(),
            });
        }
        let projected = (0..templates.n_rows())
            .into_par_iter()
            .map(|j| basis.project_full(templates.row(j)))
            .collect::<Result<Vec<_>>>()?;
        Ok(LowRankScorer {
            mean_norm2: basis.mean_norm2(),
            basis,
            templates: projected,
        })
    }

    pub fn basis(&self) -> &ProjectionBasis {
        &self.basis
    }

    /// Template coordinates as rows, for indexing in the reduced space.
    pub fn template_coords(&self) -> Matrix {
        let k = self.basis.k();
        Matrix::from_rows(k, self.templates.iter().map(|t| t.coords.as_slice()))
            .expect("coordinates share k")
    }

    /// Projects the listed rows of `bank` (all rows when `windows` is None).
    pub fn project_bank(
        &self,
        bank: &dyn Rows,
        windows: Option<&[usize]>,
        counters: &OpCounters,
    ) -> Result<ProjectedBank> {
        if bank.n_cols() != self.basis.dim() {
            return Err(Error::DimMismatch {
                expected: self.basis.dim(),
                actual: bank.n_cols(),
            });
        }
        let all: Vec<usize>;
        let idx = match windows {
            Some(w) => w,
            None => {
                all = (0..bank.n_rows()).collect();
                &all
            }
        };
        counters.add_projections(idx.len(), self.basis.k(), self.basis.dim());
        let rows: Vec<Projected> = idx
            .par_iter()
            .map(|&w| {
                let v = bank.row(w);
                Projected {
                    coords: self.basis.project_unchecked(v),
                    norm: dot(v, v).sqrt(),
                    mean_dot: dot(&self.basis.mean, v),
                }
            })
            .collect();
        let k = self.basis.k();
        Ok(ProjectedBank {
            coords: Matrix::from_rows(k, rows.iter().map(|p| p.coords.as_slice()))?,
            norms: rows.iter().map(|p| p.norm).collect(),
            mean_dots: rows.iter().map(|p| p.mean_dot).collect(),
        })
    }

    /// Pooled scores over the listed already-projected windows.
    pub fn pooled_projected(
        &self,
        bank: &ProjectedBank,
        windows: &[usize],
        pool: PoolKind,
        counters: &OpCounters,
    ) -> Vec<f64> {
        counters.add_dots(windows.len() * self.templates.len(), self.basis.k());
        pool_tiled(self.templates.len(), windows, pool, |w, j| {
            let t = &self.templates[j];
            let wn = bank.norms[w];
            if wn == 0.0 || t.norm == 0.0 {
                return 0.0;
            }
            (dot(Rows::row(&bank.coords, w), &t.coords) + bank.mean_dots[w] + t.mean_dot - self.mean_norm2)
                / (wn * t.norm)
        })
    }
}

impl Scorer for LowRankScorer {
    fn n_templates(&self) -> usize {
        self.templates.len()
    }

    fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn pooled(
        &self,
        bank: &dyn Rows,
        windows: &[usize],
        pool: PoolKind,
        counters: &OpCounters,
    ) -> Vec<f64> {
        let pb = self
            .project_bank(bank, Some(windows), counters)
            .expect("bank dim checked by caller");
        let pos: Vec<usize> = (0..windows.len()).collect();
        self.pooled_projected(&pb, &pos, pool, counters)
    }
}
