//! Consensus of Collisions: random-hyperplane hashing of templates and
//! windows, per-template collision sets, frequency voting, and scoring of
//! only the most popular windows.

use std::collections::HashMap;
use std::ops::Add;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hw::{dot, PoolKind, Template};
use crate::matrix::{Matrix, Rows};

// ---------------------------------------------------------------------------
// counters

/// Work counters, safe to bump from many threads.
#[derive(Debug, Default)]
pub struct OpCounters {
    windows_hashed: AtomicU64,
    buckets_probed: AtomicU64,
    dot_products: AtomicU64,
    projections: AtomicU64,
    madds: AtomicU64,
}

/// A snapshot of [`OpCounters`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    /// Vectors run through every hash table.
    pub windows_hashed: u64,
    pub buckets_probed: u64,
    /// Window-template similarity evaluations.
    pub dot_products: u64,
    /// Vectors projected onto a low-rank basis.
    pub projections: u64,
    /// Multiply-adds across hashing, projection, and scoring.
    pub madds: u64,
}

impl OpCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_hashed(&self, vectors: usize, bits_times_dim: usize, tables: usize) {
        self.windows_hashed.fetch_add(vectors as u64, Ordering::Relaxed);
        self.buckets_probed
            .fetch_add((vectors * tables) as u64, Ordering::Relaxed);
        self.madds
            .fetch_add((vectors * tables * bits_times_dim) as u64, Ordering::Relaxed);
    }

    pub fn add_dots(&self, count: usize, dim: usize) {
        self.dot_products.fetch_add(count as u64, Ordering::Relaxed);
        self.madds.fetch_add((count * dim) as u64, Ordering::Relaxed);
    }

    pub fn add_projections(&self, count: usize, k: usize, dim: usize) {
        self.projections.fetch_add(count as u64, Ordering::Relaxed);
        self.madds
            .fetch_add((count * k * dim) as u64, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> OpCounts {
        OpCounts {
            windows_hashed: self.windows_hashed.load(Ordering::Relaxed),
            buckets_probed: self.buckets_probed.load(Ordering::Relaxed),
            dot_products: self.dot_products.load(Ordering::Relaxed),
            projections: self.projections.load(Ordering::Relaxed),
            madds: self.madds.load(Ordering::Relaxed),
        }
    }
}

impl Add for OpCounts {
    type Output = OpCounts;

    fn add(self, o: OpCounts) -> OpCounts {
        OpCounts {
            windows_hashed: self.windows_hashed + o.windows_hashed,
            buckets_probed: self.buckets_probed + o.buckets_probed,
            dot_products: self.dot_products + o.dot_products,
            projections: self.projections + o.projections,
            madds: self.madds + o.madds,
        }
    }
}

// ---------------------------------------------------------------------------
// hashing

/// `tables` independent sign-hash functions of `bits` hyperplanes each.
/// Hyperplanes are unit Gaussian directions drawn from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct HashFamily {
    bits: usize,
    tables: usize,
    dim: usize,
    seed: u64,
    /// tables x bits x dim
    planes: Vec<f64>,
}

impl HashFamily {
    pub fn new(dim: usize, bits: usize, tables: usize, seed: u64) -> Result<Self> {
        if !(1..=64).contains(&bits) {
            return Err(Error::param(format!("hash bits {bits} outside 1..=64")));
        }
        if tables == 0 || dim == 0 {
            return Err(Error::param("hash family needs >= 1 table and dim >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut planes = Vec::with_capacity(tables * bits * dim);
        for _ in 0..tables * bits {
            let start = planes.len();
            // rejection keeps a (vanishingly unlikely) zero draw from
            // producing a degenerate plane
            loop {
                planes.truncate(start);
                planes.extend((0..dim).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
                let n = dot(&planes[start..], &planes[start..]).sqrt();
                if n > 0.0 {
                    planes[start..].iter_mut().for_each(|v| *v /= n);
                    break;
                }
            }
        }
        Ok(HashFamily {
            bits,
            tables,
            dim,
            seed,
            planes,
        })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn tables(&self) -> usize {
        self.tables
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The `bits` hyperplanes of one table, flattened.
    pub fn planes(&self, table: usize) -> &[f64] {
        let span = self.bits * self.dim;
        &self.planes[table * span..(table + 1) * span]
    }

    pub fn code(&self, table: usize, v: &[f64]) -> u64 {
        simhash_unchecked(v, self.planes(table), self.bits)
    }

    pub fn codes(&self, v: &[f64]) -> Vec<u64> {
        (0..self.tables).map(|t| self.code(t, v)).collect()
    }
}

fn simhash_unchecked(v: &[f64], planes: &[f64], bits: usize) -> u64 {
    let dim = v.len();
    let mut code = 0u64;
    for i in 0..bits {
        if dot(v, &planes[i * dim..(i + 1) * dim]) >= 0.0 {
            code |= 1 << i;
        }
    }
    code
}

/// Sign hash of `v` against `bits` flattened hyperplanes: bit `i` is set
/// iff `<v, plane_i> >= 0`.
pub fn simhash(v: &[f64], planes: &[f64], bits: usize) -> Result<u64> {
    if !(1..=64).contains(&bits) {
        return Err(Error::param(format!("hash bits {bits} outside 1..=64")));
    }
    if planes.len() != bits * v.len() {
        return Err(Error::DimMismatch {
            expected: bits * v.len(),
            actual: planes.len(),
        });
    }
    Ok(simhash_unchecked(v, planes, bits))
}

/// Per-table buckets of template indices.
#[derive(Debug, Clone, PartialEq)]
pub struct HashIndex {
    n: usize,
    dim: usize,
    tables: Vec<HashMap<u64, Vec<u32>>>,
}

impl HashIndex {
    /// Hashes every row of `vectors` into every table of `fam`.
    pub fn build(vectors: &impl Rows, fam: &HashFamily) -> Result<Self> {
        let n = vectors.n_rows();
        if n == 0 {
            return Err(Error::Empty("templates to index"));
        }
        if vectors.n_cols() != fam.dim {
            return Err(Error::DimMismatch {
                expected: fam.dim,
                actual: vectors.n_cols(),
            });
        }
        let codes: Vec<Vec<u64>> = (0..n)
            .into_par_iter()
            .map(|j| fam.codes(vectors.row(j)))
            .collect();
        let mut tables = vec![HashMap::new(); fam.tables];
        for (j, c) in codes.iter().enumerate() {
            for (t, &code) in c.iter().enumerate() {
                tables[t].entry(code).or_insert_with(Vec::new).push(j as u32);
            }
        }
        Ok(HashIndex {
            n,
            dim: fam.dim,
            tables,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn n_tables(&self) -> usize {
        self.tables.len()
    }

    pub fn bucket(&self, table: usize, code: u64) -> &[u32] {
        self.tables[table].get(&code).map_or(&[], |b| b.as_slice())
    }

    /// Bucket sizes per table, largest first.
    pub fn bucket_sizes(&self, table: usize) -> Vec<usize> {
        let mut s: Vec<usize> = self.tables[table].values().map(Vec::len).collect();
        s.sort_unstable_by(|a, b| b.cmp(a));
        s
    }

    /// Little-endian: seed (u64), bits, tables, dim, n (u32 each); then per
    /// table `n` (code u64, template u32) pairs sorted by code then index.
    pub fn to_bytes(&self, fam: &HashFamily) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.tables.len() * self.n * 12);
        out.extend_from_slice(&fam.seed.to_le_bytes());
        for v in [fam.bits, fam.tables, self.dim, self.n] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for table in &self.tables {
            let mut pairs: Vec<(u64, u32)> = table
                .iter()
                .flat_map(|(&c, b)| b.iter().map(move |&j| (c, j)))
                .collect();
            pairs.sort_unstable();
            for (c, j) in pairs {
                out.extend_from_slice(&c.to_le_bytes());
                out.extend_from_slice(&j.to_le_bytes());
            }
        }
        out
    }

    /// Restores an index and regenerates its hash family from the seed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(HashFamily, HashIndex)> {
        if bytes.len() < 24 {
            return Err(Error::Format("hash index header truncated".into()));
        }
        let seed = u64::from_le_bytes(bytes[0..8].try_into().unwrap());
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
        let (bits, n_tables, dim, n) = (word(0), word(1), word(2), word(3));
        let body = &bytes[24..];
        if body.len() != n_tables * n * 12 {
            return Err(Error::Format(format!(
                "hash index body is {} bytes, header implies {}",
                body.len(),
                n_tables * n * 12
            )));
        }
        let fam = HashFamily::new(dim, bits, n_tables, seed)?;
        let mut tables = vec![HashMap::new(); n_tables];
        for (t, table) in tables.iter_mut().enumerate() {
            let mut seen = vec![false; n];
            for pair in body[t * n * 12..(t + 1) * n * 12].chunks_exact(12) {
                let code = u64::from_le_bytes(pair[0..8].try_into().unwrap());
                let j = u32::from_le_bytes(pair[8..12].try_into().unwrap());
                let slot = seen
                    .get_mut(j as usize)
                    .ok_or_else(|| Error::Format(format!("template index {j} out of range")))?;
                if std::mem::replace(slot, true) {
                    return Err(Error::Format(format!("template {j} twice in table {t}")));
                }
                table.entry(code).or_insert_with(Vec::new).push(j);
            }
        }
        Ok((fam, HashIndex { n, dim, tables }))
    }
}

/// Indexes template descriptors.
pub fn build_index(templates: &[Template], fam: &HashFamily) -> Result<HashIndex> {
    if templates.is_empty() {
        return Err(Error::Empty("templates to index"));
    }
    let kind = templates[0].kind();
    if templates.iter().any(|t| t.kind() != kind) {
        return Err(Error::param("templates mix descriptor kinds"));
    }
    let m = Matrix::from_rows(templates[0].desc.dim(), templates.iter().map(|t| t.values()))?;
    HashIndex::build(&m, fam)
}

/// For each template, the sorted windows colliding with it in at least one
/// table.
pub fn collect_candidates(
    windows: &impl Rows,
    index: &HashIndex,
    fam: &HashFamily,
    counters: &OpCounters,
) -> Result<Vec<Vec<u32>>> {
    if windows.n_cols() != fam.dim || index.dim != fam.dim {
        return Err(Error::DimMismatch {
            expected: fam.dim,
            actual: windows.n_cols(),
        });
    }
    let m = windows.n_rows();
    let codes: Vec<Vec<u64>> = (0..m)
        .into_par_iter()
        .map(|w| fam.codes(windows.row(w)))
        .collect();
    counters.add_hashed(m, fam.bits * fam.dim, fam.tables);
    let mut cand: Vec<Vec<u32>> = vec![Vec::new(); index.n];
    // window-major traversal keeps each list sorted and lets duplicates
    // from several tables be dropped by a last-element check
    for (w, c) in codes.iter().enumerate() {
        let w = w as u32;
        for (t, &code) in c.iter().enumerate() {
            for &j in index.bucket(t, code) {
                let list = &mut cand[j as usize];
                if list.last() != Some(&w) {
                    list.push(w);
                }
            }
        }
    }
    Ok(cand)
}

/// The `N` most frequently colliding windows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConsensusSet {
    pub windows: Vec<usize>,
    /// Fraction of templates whose candidate set holds each window.
    pub frequencies: Vec<f64>,
}

impl ConsensusSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

/// Keeps the `n_consensus` windows with the highest collision frequency,
/// ties toward the lower window index. Windows no template collided with
/// are never kept.
pub fn vote(candidates: &[Vec<u32>], n_templates: usize, n_consensus: usize) -> ConsensusSet {
    let m = candidates
        .iter()
        .filter_map(|c| c.iter().max())
        .max()
        .map_or(0, |&w| w as usize + 1);
    let mut counts = vec![0u32; m];
    for c in candidates {
        for &w in c {
            counts[w as usize] += 1;
        }
    }
    let mut ranked: Vec<(u32, usize)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(w, &c)| (c, w))
        .collect();
    ranked.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    ranked.truncate(n_consensus);
    let n = n_templates.max(1) as f64;
    ConsensusSet {
        windows: ranked.iter().map(|&(_, w)| w).collect(),
        frequencies: ranked.iter().map(|&(c, _)| c as f64 / n).collect(),
    }
}

// ---------------------------------------------------------------------------
// scoring

/// Scores windows of a bank against a fixed template set and pools per
/// template.
pub trait Scorer: Sync {
    fn n_templates(&self) -> usize;

    fn dim(&self) -> usize;

    /// Pooled response of every template over `windows` (indices into
    /// `bank`); all zeros when `windows` is empty.
    fn pooled(
        &self,
        bank: &dyn Rows,
        windows: &[usize],
        pool: PoolKind,
        counters: &OpCounters,
    ) -> Vec<f64>;
}

/// Running pool accumulator.
#[derive(Clone, Copy)]
pub(crate) struct PoolAcc {
    kind: PoolKind,
    value: f64,
    count: usize,
}

impl PoolAcc {
    pub(crate) fn new(kind: PoolKind) -> Self {
        PoolAcc {
            kind,
            value: match kind {
                PoolKind::Max => f64::NEG_INFINITY,
                PoolKind::Mean => 0.0,
            },
            count: 0,
        }
    }

    #[inline]
    pub(crate) fn push(&mut self, s: f64) {
        match self.kind {
            PoolKind::Max => self.value = self.value.max(s),
            PoolKind::Mean => self.value += s,
        }
        self.count += 1;
    }

    pub(crate) fn finish(self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        match self.kind {
            PoolKind::Max => self.value,
            PoolKind::Mean => self.value / self.count as f64,
        }
    }
}

/// Templates scored per pass over the windows.
pub(crate) const TEMPLATE_TILE: usize = 8;

/// Pools `score(window_row, template_index)` over `windows` for every
/// template, tiling templates so each window row is read once per tile.
pub(crate) fn pool_tiled(
    n_templates: usize,
    windows: &[usize],
    pool: PoolKind,
    score: impl Fn(usize, usize) -> f64 + Sync,
) -> Vec<f64> {
    let tiles: Vec<usize> = (0..n_templates).step_by(TEMPLATE_TILE).collect();
    tiles
        .par_iter()
        .flat_map_iter(|&start| {
            let end = (start + TEMPLATE_TILE).min(n_templates);
            let mut acc = [PoolAcc::new(pool); TEMPLATE_TILE];
            for &w in windows {
                for j in start..end {
                    acc[j - start].push(score(w, j));
                }
            }
            acc.into_iter().take(end - start).map(PoolAcc::finish)
        })
        .collect()
}

/// Exact normalized dot products against unit templates.
#[derive(Debug, Clone)]
pub struct ExactScorer {
    templates: Matrix,
}

impl ExactScorer {
    /// `templates` rows must be unit length (or zero).
    pub fn new(templates: Matrix) -> Self {
        ExactScorer { templates }
    }

    pub fn from_templates(templates: &[Template]) -> Result<Self> {
        let dim = templates.first().map_or(0, |t| t.desc.dim());
        Ok(ExactScorer {
            templates: Matrix::from_rows(dim, templates.iter().map(|t| t.values()))?,
        })
    }

    pub fn templates(&self) -> &Matrix {
        &self.templates
    }
}

impl Scorer for ExactScorer {
    fn n_templates(&self) -> usize {
        self.templates.rows()
    }

    fn dim(&self) -> usize {
        self.templates.cols()
    }

    fn pooled(
        &self,
        bank: &dyn Rows,
        windows: &[usize],
        pool: PoolKind,
        counters: &OpCounters,
    ) -> Vec<f64> {
        let n = self.templates.rows();
        counters.add_dots(windows.len() * n, self.templates.cols());
        // window rows and template rows are unit or zero, so the plain dot
        // is the normalized dot product
        pool_tiled(n, windows, pool, |w, j| dot(bank.row(w), self.templates.row(j)))
    }
}

/// Pooled responses over every window.
pub fn exhaustive_responses(
    bank: &impl Rows,
    pool: PoolKind,
    scorer: &dyn Scorer,
    counters: &OpCounters,
) -> Result<Vec<f64>> {
    if bank.n_cols() != scorer.dim() {
        return Err(Error::DimMismatch {
            expected: scorer.dim(),
            actual: bank.n_cols(),
        });
    }
    let all: Vec<usize> = (0..bank.n_rows()).collect();
    Ok(scorer.pooled(bank, &all, pool, counters))
}

/// Hashes `hash_rows` (the windows as seen by the hash family), votes, and
/// returns the consensus set.
pub fn select_consensus(
    hash_rows: &impl Rows,
    index: &HashIndex,
    fam: &HashFamily,
    n_consensus: usize,
    counters: &OpCounters,
) -> Result<ConsensusSet> {
    let cand = collect_candidates(hash_rows, index, fam, counters)?;
    Ok(vote(&cand, index.len(), n_consensus))
}

/// Full consensus-of-collisions response: select the consensus windows by
/// hashing `bank` itself, then pool scores over them. With `n_consensus >=
/// m` pruning is disabled and every window is scored.
pub fn coc_responses(
    bank: &impl Rows,
    index: &HashIndex,
    fam: &HashFamily,
    n_consensus: usize,
    pool: PoolKind,
    scorer: &dyn Scorer,
    counters: &OpCounters,
) -> Result<(Vec<f64>, ConsensusSet)> {
    if bank.n_cols() != scorer.dim() {
        return Err(Error::DimMismatch {
            expected: scorer.dim(),
            actual: bank.n_cols(),
        });
    }
    if index.len() != scorer.n_templates() {
        return Err(Error::DimMismatch {
            expected: scorer.n_templates(),
            actual: index.len(),
        });
    }
    if n_consensus >= bank.n_rows() {
        let all: Vec<usize> = (0..bank.n_rows()).collect();
        let r = scorer.pooled(bank, &all, pool, counters);
        return Ok((r, ConsensusSet::default()));
    }
    let consensus = select_consensus(bank, index, fam, n_consensus, counters)?;
    let r = scorer.pooled(bank, &consensus.windows, pool, counters);
    Ok((r, consensus))
}
