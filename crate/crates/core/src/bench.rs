//! Desk-scale experiments on procedural identities: clutter tolerance versus
//! template size, consensus-count sweeps, jitter robustness, and workload
//! accounting.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::coc::{OpCounters, OpCounts};
use crate::error::{Error, Result};
use crate::features::{extract, DescriptorConfig, DescriptorKind};
use crate::hw::{ndot, normalize};
use crate::image::{affine_jitter, geometric_ratios, sample_jitter, JitterRanges, Raster};
use crate::pipeline::{cross_validate, derive_seed, mean_std, Engine, EngineConfig, HashSpace, Scoring, System};
use crate::windows::WindowBank;

// ---------------------------------------------------------------------------
// procedural imagery

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Coverage of a shape with signed distance `d` (negative inside), with a
/// one-pixel antialiasing ramp.
fn coverage(d: f64) -> f64 {
    1.0 - smoothstep(-0.5, 0.5, d)
}

/// Approximate signed distance to an axis-aligned ellipse.
fn ellipse_sd(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> f64 {
    let (u, v) = ((x - cx) / rx, (y - cy) / ry);
    let r = (u * u + v * v).sqrt();
    (r - 1.0) * rx.min(ry)
}

/// Distance to the segment `a`-`b` minus half of `thick`.
fn bar_sd(x: f64, y: f64, a: (f64, f64), b: (f64, f64), thick: f64) -> f64 {
    let (px, py) = (x - a.0, y - a.1);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let t = ((px * dx + py * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    let (ex, ey) = (px - t * dx, py - t * dy);
    (ex * ex + ey * ey).sqrt() - thick / 2.0
}

/// Gradient noise on a lattice of `cell`-pixel spacing, summed over
/// `octaves` with halving amplitude; returned unnormalized.
fn perlin_field(w: usize, h: usize, cell: f64, octaves: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    let mut amp = 1.0;
    let mut cell = cell;
    for _ in 0..octaves {
        let gw = (w as f64 / cell).ceil() as usize + 2;
        let gh = (h as f64 / cell).ceil() as usize + 2;
        let grads: Vec<(f64, f64)> = (0..gw * gh)
            .map(|_| {
                let a = rng.gen::<f64>() * std::f64::consts::TAU;
                (a.cos(), a.sin())
            })
            .collect();
        let (ox, oy) = (rng.gen::<f64>() * cell, rng.gen::<f64>() * cell);
        let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
        for y in 0..h {
            let fy = (y as f64 + oy) / cell;
            let (iy, ty) = (fy.floor() as usize, fy - fy.floor());
            for x in 0..w {
                let fx = (x as f64 + ox) / cell;
                let (ix, tx) = (fx.floor() as usize, fx - fx.floor());
                let corner = |cx: usize, cy: usize, dx: f64, dy: f64| {
                    let g = grads[cy * gw + cx];
                    g.0 * dx + g.1 * dy
                };
                let n00 = corner(ix, iy, tx, ty);
                let n10 = corner(ix + 1, iy, tx - 1.0, ty);
                let n01 = corner(ix, iy + 1, tx, ty - 1.0);
                let n11 = corner(ix + 1, iy + 1, tx - 1.0, ty - 1.0);
                let (u, v) = (fade(tx), fade(ty));
                let top = n00 + u * (n10 - n00);
                let bot = n01 + u * (n11 - n01);
                out[y * w + x] += amp * (top + v * (bot - top));
            }
        }
        amp *= 0.5;
        cell /= 2.0;
    }
    out
}

/// Standardizes `v` to the given mean and standard deviation, clamped to
/// [0, 1].
fn standardize(mut v: Vec<f64>, mean: f64, std: f64) -> Vec<f64> {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if s > 0.0 { std / s } else { 0.0 };
    v.iter_mut().for_each(|x| *x = (mean + (*x - m) * scale).clamp(0.0, 1.0));
    v
}

/// Mean and standard deviation of cluttered backgrounds, close to the glyph
/// statistics so clutter cannot be told apart by intensity alone.
pub const BACKGROUND_MEAN: f64 = 0.5;
pub const BACKGROUND_STD: f64 = 0.17;

/// Seeded multi-octave gradient-noise texture.
pub fn perlin_background(w: usize, h: usize, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cell = 12.0;
    let field = perlin_field(w, h, cell, 3, &mut rng);
    Raster::new(w, h, standardize(field, BACKGROUND_MEAN, BACKGROUND_STD)).expect("sized")
}

/// Independent Gaussian pixels around mid-gray.
pub fn gaussian_noise_image(w: usize, h: usize, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(BACKGROUND_MEAN, BACKGROUND_STD).expect("valid");
    Raster::from_fn(w, h, |_, _| n.sample(&mut rng))
}

/// A procedural face-like pattern whose layout and texture depend only on
/// the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticIdentity {
    pub seed: u64,
    pub glyph: Raster,
    /// Coverage of the glyph, 1 inside the head outline.
    pub alpha: Raster,
}

impl SyntheticIdentity {
    pub fn new(seed: u64, size: usize) -> Result<Self> {
        if size < 8 {
            return Err(Error::param(format!("glyph size {size} below 8")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x474c_5950));
        let s = size as f64;
        let c = (s - 1.0) / 2.0;
        let mut r = |lo: f64, hi: f64| rng.gen_range(lo..hi);
        let head = (s * r(0.36, 0.45), s * r(0.44, 0.49));
        let skin = r(0.55, 0.8);
        let hair_line = c - head.1 * r(0.45, 0.8);
        let hair = r(0.05, 0.35);
        let eye_y = c - s * r(0.04, 0.14);
        let eye_dx = s * r(0.13, 0.22);
        let eye_r = (s * r(0.05, 0.09), s * r(0.025, 0.055));
        let eye_dark = r(0.02, 0.25);
        let brow_gap = s * r(0.07, 0.13);
        let brow_len = s * r(0.07, 0.14);
        let brow_tilt = r(-0.35, 0.35);
        let brow_thick = s * r(0.025, 0.05);
        let nose_len = s * r(0.08, 0.2);
        let nose_w = s * r(0.04, 0.08);
        let mouth_y = c + s * r(0.17, 0.3);
        let mouth_w = s * r(0.09, 0.2);
        let mouth_curve = s * r(-0.08, 0.08);
        let mouth_thick = s * r(0.02, 0.045);
        let mouth_dark = r(0.1, 0.35);
        let tex_amp = r(0.05, 0.12);
        let mut tex_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5445_5854));
        let tex = perlin_field(size, size, s / 4.0, 2, &mut tex_rng);

        let mut glyph = Vec::with_capacity(size * size);
        let mut alpha = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let (fx, fy) = (x as f64, y as f64);
                let head_sd = ellipse_sd(fx, fy, c, c, head.0, head.1);
                alpha.push(coverage(head_sd));
                let mut v = skin + tex_amp * tex[y * size + x];
                // darker cheeks toward the outline give the head some relief
                v -= 0.12 * smoothstep(-head.0 * 0.5, 0.0, head_sd);
                let hair_cov = coverage(fy - hair_line);
                v += hair_cov * (hair - v);
                for side in [-1.0, 1.0] {
                    let ex = c + side * eye_dx;
                    let eye = coverage(ellipse_sd(fx, fy, ex, eye_y, eye_r.0, eye_r.1));
                    v += eye * (eye_dark - v);
                    let by = eye_y - brow_gap;
                    let a = (ex - brow_len * 0.5, by + side * brow_tilt * brow_len * 0.5);
                    let b = (ex + brow_len * 0.5, by - side * brow_tilt * brow_len * 0.5);
                    let brow = coverage(bar_sd(fx, fy, a, b, brow_thick));
                    v += brow * (hair.min(0.3) - v);
                }
                // nose: a shaded wedge below the eyes, darker on one side
                let ny0 = eye_y + eye_r.1;
                if fy >= ny0 && fy <= ny0 + nose_len {
                    let t = (fy - ny0) / nose_len;
                    let half = nose_w * (0.3 + 0.7 * t);
                    let d = (fx - c).abs() - half;
                    let shade = coverage(d) * if fx < c { 0.22 } else { 0.08 };
                    v -= shade;
                }
                // mouth: a bar bent by a parabola
                let t = ((fx - c) / mouth_w).clamp(-1.0, 1.0);
                let my = mouth_y + mouth_curve * (t * t - 0.5);
                let mouth_sd = ((fy - my).abs() - mouth_thick / 2.0).max((fx - c).abs() - mouth_w);
                let mouth = coverage(mouth_sd);
                v += mouth * (mouth_dark - v);
                glyph.push(v.clamp(0.0, 1.0));
            }
        }
        Ok(SyntheticIdentity {
            seed,
            glyph: Raster::new(size, size, glyph)?,
            alpha: Raster::new(size, size, alpha)?,
        })
    }

    pub fn size(&self) -> usize {
        self.glyph.width()
    }

    /// The glyph over `background` with its top-left corner at `(x, y)`.
    pub fn composite(&self, background: &Raster, x: i64, y: i64) -> Result<Raster> {
        let mut out = background.clone();
        out.paste(&self.glyph, Some(&self.alpha), x, y)?;
        Ok(out)
    }

    /// The glyph centered on a `canvas`-sided background.
    pub fn centered(&self, background: &Raster) -> Result<Raster> {
        let x = (background.width() as i64 - self.size() as i64) / 2;
        let y = (background.height() as i64 - self.size() as i64) / 2;
        self.composite(background, x, y)
    }
}

/// Images with integer identity labels.
#[derive(Debug, Clone, Default)]
pub struct LabeledImages {
    pub images: Vec<Raster>,
    pub labels: Vec<usize>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Identity seeds for one named stream of a root seed.
pub fn identity_seeds(root: u64, stream: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| derive_seed(derive_seed(root, stream), i)).collect()
}

/// Streams used to keep the identity pools of an experiment disjoint.
pub const STREAM_TEST: u64 = 1;
pub const STREAM_TEMPLATES: u64 = 2;
pub const STREAM_LAYER3: u64 = 3;
const STREAM_BACKGROUND: u64 = 4;
const STREAM_PAIRS: u64 = 5;
const STREAM_JITTER: u64 = 6;
const STREAM_NOISE: u64 = 7;

/// `n_bg` canvases per identity, the glyph centered on an independent
/// background each time; flat mid-gray backgrounds when `clutter` is off.
pub fn gen_clutter_dataset(
    identities: &[u64],
    n_bg: usize,
    canvas: usize,
    glyph_size: usize,
    clutter: bool,
    seed: u64,
) -> Result<LabeledImages> {
    if identities.is_empty() || n_bg == 0 {
        return Err(Error::param("clutter dataset needs identities and backgrounds"));
    }
    if glyph_size > canvas {
        return Err(Error::param(format!("glyph {glyph_size} exceeds canvas {canvas}")));
    }
    let jobs: Vec<(usize, usize)> = (0..identities.len())
        .flat_map(|i| (0..n_bg).map(move |b| (i, b)))
        .collect();
    let images = jobs
        .par_iter()
        .map(|&(i, b)| {
            let id = SyntheticIdentity::new(identities[i], glyph_size)?;
            let bg = if clutter {
                let s = derive_seed(derive_seed(seed, STREAM_BACKGROUND), (i * n_bg + b) as u64);
                perlin_background(canvas, canvas, s)
            } else {
                Raster::filled(canvas, canvas, BACKGROUND_MEAN)
            };
            id.centered(&bg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledImages {
        images,
        labels: jobs.iter().map(|&(i, _)| i).collect(),
    })
}

// ---------------------------------------------------------------------------
// metrics

/// Area under the ROC curve by the rank-sum statistic; tied scores share
/// their average rank.
pub fn auc(scores: &[(f64, bool)]) -> Result<f64> {
    let n_pos = scores.iter().filter(|p| p.1).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::param("AUC needs both labels"));
    }
    if scores.iter().any(|p| !p.0.is_finite()) {
        return Err(Error::NonFinite("AUC scores"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].0 == scores[order[i]].0 {
            j += 1;
        }
        // ranks i+1..=j+1 averaged
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| scores[k].1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Every unordered pair of images scored by cosine of their vectors.
pub fn all_pairs(vectors: &[Vec<f64>], labels: &[usize]) -> Result<Vec<(f64, bool)>> {
    let mut out = Vec::with_capacity(vectors.len() * vectors.len().saturating_sub(1) / 2);
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            out.push((ndot(&vectors[i], &vectors[j])?, labels[i] == labels[j]));
        }
    }
    Ok(out)
}

/// Every same-identity pair plus as many seeded random different pairs.
pub fn balanced_pairs(labels: &[usize], seed: u64) -> Vec<(usize, usize, bool)> {
    let mut same = Vec::new();
    let mut diff = Vec::new();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if labels[i] == labels[j] {
                same.push((i, j, true));
            } else {
                diff.push((i, j, false));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_PAIRS));
    diff.shuffle(&mut rng);
    diff.truncate(same.len());
    // shuffled together; a fixed alternation would line up with `i % folds`
    // and leave every even-fold-count fold single-labelled
    let mut out = same;
    out.extend(diff);
    out.shuffle(&mut rng);
    out
}

/// Mean over folds of cross-validated threshold accuracy.
pub fn cv_accuracy(scores: &[(f64, bool)], folds: usize) -> Result<f64> {
    Ok(mean_std(&cross_validate(scores, folds)?).0)
}

fn score_pairs(vectors: &[Vec<f64>], pairs: &[(usize, usize, bool)]) -> Result<Vec<(f64, bool)>> {
    pairs
        .iter()
        .map(|&(i, j, same)| Ok((ndot(&vectors[i], &vectors[j])?, same)))
        .collect()
}

// ---------------------------------------------------------------------------
// reports

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchRow {
    pub label: String,
    pub auc: Option<f64>,
    pub accuracy: Option<f64>,
    /// Window-template similarity evaluations, summed over the dataset.
    pub dot_products: u64,
    pub madds: u64,
    pub wall_seconds: f64,
    pub speedup: Option<f64>,
    pub memory_bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub name: String,
    /// Seeds and settings echoed into the header.
    pub params: Vec<(String, String)>,
    pub rows: Vec<BenchRow>,
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(String::new, |x| format!("{x:.digits$}"))
}

impl BenchReport {
    fn new(name: &str) -> Self {
        BenchReport {
            name: name.to_string(),
            ..Default::default()
        }
    }

    pub fn param(&mut self, k: &str, v: impl ToString) {
        self.params.push((k.to_string(), v.to_string()));
    }

    pub fn row(&self, label: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    const COLUMNS: [&'static str; 8] = [
        "label",
        "auc",
        "accuracy",
        "dot_products",
        "madds",
        "wall_seconds",
        "speedup",
        "memory_bytes",
    ];

    fn cells(r: &BenchRow) -> [String; 8] {
        [
            r.label.clone(),
            opt(r.auc, 4),
            opt(r.accuracy, 4),
            r.dot_products.to_string(),
            r.madds.to_string(),
            format!("{:.4}", r.wall_seconds),
            opt(r.speedup, 2),
            r.memory_bytes.map_or_else(String::new, |m| m.to_string()),
        ]
    }

    /// `#`-prefixed parameter lines, then a CSV header and one line per row.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# bench = {}", self.name);
        for (k, v) in &self.params {
            let _ = writeln!(s, "# {k} = {v}");
        }
        let _ = writeln!(s, "{}", Self::COLUMNS.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{}", Self::cells(r).join(","));
        }
        s
    }

    /// Aligned columns for terminals.
    pub fn to_table(&self) -> String {
        let cells: Vec<[String; 8]> = self.rows.iter().map(Self::cells).collect();
        let mut widths: Vec<usize> = Self::COLUMNS.iter().map(|c| c.len()).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.name);
        for (k, v) in &self.params {
            let _ = writeln!(s, "  {k}: {v}");
        }
        let line = |s: &mut String, row: &[String]| {
            let parts: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(s, "{}", parts.join("  ").trim_end());
        };
        line(&mut s, &Self::COLUMNS.map(String::from));
        for row in &cells {
            line(&mut s, row);
        }
        s
    }
}

// ---------------------------------------------------------------------------
// clutter

/// 50 identities on 5 backgrounds each, 96 px canvases, 48 px glyphs.
/// Ten template identities keep glyph AUCs off the ceiling; with forty
/// every size scores within 1e-6 of 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ClutterBench {
    pub n_ids: usize,
    pub n_bg: usize,
    pub canvas: usize,
    pub glyph: usize,
    /// Ascending template sizes.
    pub sizes: Vec<usize>,
    /// Held-out identities whose center crops become templates.
    pub n_template_ids: usize,
    pub stride: usize,
    pub seed: u64,
}

impl Default for ClutterBench {
    fn default() -> Self {
        ClutterBench {
            n_ids: 50,
            n_bg: 5,
            canvas: 96,
            glyph: 48,
            sizes: vec![16, 24, 32, 48],
            n_template_ids: 10,
            stride: 4,
            seed: 7,
        }
    }
}

/// What template images are cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateSource {
    /// Center crops of held-out glyphs on flat gray.
    Glyphs,
    /// Gaussian pixel noise of the same size and count.
    Noise,
}

impl ClutterBench {
    pub fn dataset(&self, clutter: bool) -> Result<LabeledImages> {
        let ids = identity_seeds(self.seed, STREAM_TEST, self.n_ids);
        gen_clutter_dataset(&ids, self.n_bg, self.canvas, self.glyph, clutter, self.seed)
    }

    /// Template images of side `size`.
    pub fn templates(&self, size: usize, source: TemplateSource) -> Result<Vec<(Raster, String)>> {
        if size > self.glyph {
            return Err(Error::param(format!("template size {size} exceeds glyph {}", self.glyph)));
        }
        let ids = identity_seeds(self.seed, STREAM_TEMPLATES, self.n_template_ids);
        ids.iter()
            .enumerate()
            .map(|(i, &s)| {
                let img = match source {
                    TemplateSource::Glyphs => {
                        let g = SyntheticIdentity::new(s, self.glyph)?;
                        let full = g.composite(&Raster::filled(self.glyph, self.glyph, BACKGROUND_MEAN), 0, 0)?;
                        full.center_crop(size, size)?
                    }
                    TemplateSource::Noise => gaussian_noise_image(size, size, derive_seed(s, STREAM_NOISE)),
                };
                Ok((img, format!("t{i}")))
            })
            .collect()
    }

    pub fn engine_config(&self, size: usize) -> EngineConfig {
        EngineConfig {
            window: size,
            stride: self.stride,
            ratios: vec![1.0],
            rotations: vec![0.0],
            scoring: Scoring::Exhaustive,
            pca_k: None,
            seed: self.seed,
            ..Default::default()
        }
    }

    /// AUC over all pairs of the layer-2 signatures at one template size.
    pub fn auc_at(&self, size: usize, source: TemplateSource, data: &LabeledImages) -> Result<(f64, OpCounts, f64)> {
        let start = Instant::now();
        let engine = Engine::train(self.engine_config(size), &self.templates(size, source)?)?;
        let counters = OpCounters::new();
        let sigs = data
            .images
            .par_iter()
            .map(|img| engine.layer2_signature(img, &counters))
            .collect::<Result<Vec<_>>>()?;
        let a = auc(&all_pairs(&sigs, &data.labels)?)?;
        Ok((a, counters.snapshot(), start.elapsed().as_secs_f64()))
    }
}

/// AUC per template size; rows labeled `size=<s>`.
pub fn clutter_sweep(bench: &ClutterBench, source: TemplateSource, data: &LabeledImages) -> Result<BenchReport> {
    if bench.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("template sizes must ascend"));
    }
    if let Some(&s) = bench.sizes.iter().find(|&&s| s > bench.canvas) {
        return Err(Error::param(format!("template size {s} exceeds canvas {}", bench.canvas)));
    }
    let mut rep = BenchReport::new("clutter");
    rep.param("seed", bench.seed);
    rep.param("identities", bench.n_ids);
    rep.param("backgrounds", bench.n_bg);
    rep.param("canvas", bench.canvas);
    rep.param("glyph", bench.glyph);
    rep.param("template_ids", bench.n_template_ids);
    rep.param("stride", bench.stride);
    rep.param("templates", format!("{source:?}").to_lowercase());
    for &size in &bench.sizes {
        let (a, c, t) = bench.auc_at(size, source, data)?;
        rep.rows.push(BenchRow {
            label: format!("size={size}"),
            auc: Some(a),
            dot_products: c.dot_products,
            madds: c.madds,
            wall_seconds: t,
            ..Default::default()
        });
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------
// verification suites

/// A trained system plus a labeled test suite and its pair list.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationBench {
    pub canvas: usize,
    pub glyph: usize,
    pub clutter: bool,
    pub n_template_ids: usize,
    pub n_layer3_ids: usize,
    pub layer3_images: usize,
    pub n_test_ids: usize,
    pub test_images: usize,
    pub folds: usize,
    pub seed: u64,
    pub engine: EngineConfig,
}

impl VerificationBench {
    /// Cluttered 84 px canvases with 48 px glyphs, scored exhaustively at a
    /// single scale with stride 4 (100 windows per image): 40 template ids,
    /// 20 layer-3 ids with 3 images each, 40 test ids with 4 images each.
    pub fn standard() -> Self {
        VerificationBench {
            canvas: 84,
            glyph: 48,
            clutter: true,
            n_template_ids: 40,
            n_layer3_ids: 20,
            layer3_images: 3,
            n_test_ids: 40,
            test_images: 4,
            folds: 10,
            seed: 11,
            engine: EngineConfig {
                window: 48,
                stride: 4,
                ratios: vec![1.0],
                scoring: Scoring::Exhaustive,
                pca_k: None,
                seed: 11,
                ..Default::default()
            },
        }
    }

    /// The standard suite on 160 px canvases, leaving room for wide jitter:
    /// ten scales from 1 down to 0.6 and template rotations out to 20 degrees.
    pub fn jitter() -> Self {
        let mut b = Self::standard();
        b.canvas = 160;
        b.engine.ratios = geometric_ratios(1.0, 0.6, 10);
        b.engine.rotations = vec![-20.0, -10.0, 0.0, 10.0, 20.0];
        b
    }

    /// The standard suite with 400 template ids (2000 rotated templates), so
    /// template scoring dominates the per-image work.
    pub fn speedup() -> Self {
        let mut b = Self::standard();
        b.n_template_ids = 400;
        b
    }

    /// Template images: full glyphs on flat gray, sized to the window.
    pub fn template_images(&self) -> Result<Vec<(Raster, String)>> {
        let ids = identity_seeds(self.seed, STREAM_TEMPLATES, self.n_template_ids);
        ids.iter()
            .enumerate()
            .map(|(i, &s)| {
                let g = SyntheticIdentity::new(s, self.glyph)?;
                let w = self.engine.window;
                let bg = Raster::filled(w.max(self.glyph), w.max(self.glyph), BACKGROUND_MEAN);
                let img = g.centered(&bg)?.center_crop(w, w)?;
                Ok((img, format!("t{i}")))
            })
            .collect()
    }

    fn suite(&self, stream: u64, n_ids: usize, per_id: usize) -> Result<LabeledImages> {
        let ids = identity_seeds(self.seed, stream, n_ids);
        gen_clutter_dataset(&ids, per_id, self.canvas, self.glyph, self.clutter, derive_seed(self.seed, stream))
    }

    pub fn layer3_set(&self) -> Result<Vec<(Raster, String)>> {
        let d = self.suite(STREAM_LAYER3, self.n_layer3_ids, self.layer3_images)?;
        Ok(d.images.into_iter().zip(d.labels).map(|(im, l)| (im, format!("p{l}"))).collect())
    }

    pub fn test_set(&self) -> Result<LabeledImages> {
        self.suite(STREAM_TEST, self.n_test_ids, self.test_images)
    }

    pub fn pairs(&self, test: &LabeledImages) -> Vec<(usize, usize, bool)> {
        balanced_pairs(&test.labels, self.seed)
    }

    pub fn train(&self, engine: EngineConfig) -> Result<System> {
        System::train(engine, &self.template_images()?, &self.layer3_set()?)
    }
}

/// Signatures of every image, with summed work counters and wall time.
pub fn signatures(system: &System, images: &[Raster]) -> Result<(Vec<Vec<f64>>, OpCounts, f64)> {
    let start = Instant::now();
    let counters = OpCounters::new();
    let sigs = images
        .par_iter()
        .map(|img| Ok(system.signature(img, &counters)?.values))
        .collect::<Result<Vec<_>>>()?;
    Ok((sigs, counters.snapshot(), start.elapsed().as_secs_f64()))
}

/// Window count of the configured pyramid on a `canvas`-sided image.
pub fn windows_per_image(cfg: &EngineConfig, canvas: usize) -> usize {
    cfg.ratios
        .iter()
        .map(|&r| {
            let side = crate::image::round_half_up(canvas as f64 * r);
            crate::windows::windows_per_level(side, side, cfg.window, cfg.stride)
        })
        .sum()
}

/// Hash parameters for [`consensus_sweep`] on the standard suite. With
/// only a handful of face windows per image, 20 tables rank them too
/// noisily to keep a tenth of the windows.
pub const CONSENSUS_BITS: usize = 24;
pub const CONSENSUS_TABLES: usize = 200;

/// Hash parameters for [`standard_speedup_configs`] on the speedup suite.
pub const SPEEDUP_BITS: usize = 16;
pub const SPEEDUP_TABLES: usize = 20;
pub const SPEEDUP_K: usize = 32;

/// Accuracy and work per consensus size, then the exhaustive baseline row
/// labeled `exhaustive`. `N >= m` rows reproduce the baseline exactly.
pub fn consensus_sweep(bench: &VerificationBench, consensus: &[usize], bits: usize, tables: usize) -> Result<BenchReport> {
    if consensus.windows(2).any(|w| w[0] > w[1]) || consensus.contains(&0) {
        return Err(Error::param("consensus sizes must be positive and ascending"));
    }
    let test = bench.test_set()?;
    let pairs = bench.pairs(&test);
    let m = windows_per_image(&bench.engine, bench.canvas);
    let mut rep = BenchReport::new("consensus");
    rep.param("seed", bench.seed);
    rep.param("windows_per_image", m);
    rep.param("hash_bits", bits);
    rep.param("hash_tables", tables);
    rep.param("clutter", bench.clutter);
    rep.param("test_images", test.len());
    rep.param("pairs", pairs.len());

    let base = EngineConfig {
        scoring: Scoring::Exhaustive,
        ..bench.engine.clone()
    };
    // The exhaustive system's layer 3 is shared by every row so only the
    // window selection differs between them.
    let exhaustive = bench.train(base.clone())?;
    let mut run = |label: String, system: &System| -> Result<()> {
        let (sigs, c, t) = signatures(system, &test.images)?;
        let acc = cv_accuracy(&score_pairs(&sigs, &pairs)?, bench.folds)?;
        rep.rows.push(BenchRow {
            label,
            accuracy: Some(acc),
            dot_products: c.dot_products,
            madds: c.madds,
            wall_seconds: t,
            ..Default::default()
        });
        Ok(())
    };
    for &n in consensus {
        let cfg = EngineConfig {
            scoring: Scoring::Coc { bits, tables, consensus: n },
            ..base.clone()
        };
        let system = System {
            engine: Engine::new(cfg, exhaustive.engine.parts().iter().map(|p| p.book.clone()).collect())?,
            layer3: exhaustive.layer3.clone(),
        };
        run(format!("N={n}"), &system)?;
    }
    run("exhaustive".into(), &exhaustive)?;
    Ok(rep)
}

// ---------------------------------------------------------------------------
// jitter

/// The same test suite with each canvas independently jittered.
pub fn jitter_images(images: &[Raster], ranges: &JitterRanges, fill: f64, seed: u64) -> Result<Vec<Raster>> {
    ranges.validate()?;
    images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, STREAM_JITTER), i as u64));
            let p = sample_jitter(&mut rng, ranges)?;
            affine_jitter(img, &p, fill)
        })
        .collect()
}

/// Normalized descriptor of the canvas-center crop: a matcher with no
/// pooling at all.
pub fn raw_descriptor(img: &Raster, side: usize, cfg: &DescriptorConfig) -> Result<Vec<f64>> {
    let mut v = extract(&img.center_crop(side, side)?, cfg, DescriptorKind::Hog)?.values;
    normalize(&mut v);
    Ok(v)
}

/// Accuracy of the engine and the raw baseline on the original and jittered
/// suite; rows `engine/original`, `engine/jittered`, `raw/original`,
/// `raw/jittered`.
pub fn jitter_bench(bench: &VerificationBench, ranges: &JitterRanges) -> Result<BenchReport> {
    let test = bench.test_set()?;
    let pairs = bench.pairs(&test);
    let jittered = jitter_images(&test.images, ranges, bench.engine.fill, bench.seed)?;
    let system = bench.train(bench.engine.clone())?;
    let mut rep = BenchReport::new("jitter");
    rep.param("seed", bench.seed);
    rep.param("dx", format!("{:?}", ranges.dx));
    rep.param("dy", format!("{:?}", ranges.dy));
    rep.param("scale", format!("{:?}", ranges.scale));
    rep.param("rotation", format!("{:?}", ranges.rotation));
    rep.param("test_images", test.len());
    rep.param("pairs", pairs.len());
    for (cond, images) in [("original", &test.images), ("jittered", &jittered)] {
        let (sigs, c, t) = signatures(&system, images)?;
        rep.rows.push(BenchRow {
            label: format!("engine/{cond}"),
            accuracy: Some(cv_accuracy(&score_pairs(&sigs, &pairs)?, bench.folds)?),
            dot_products: c.dot_products,
            madds: c.madds,
            wall_seconds: t,
            ..Default::default()
        });
    }
    for (cond, images) in [("original", &test.images), ("jittered", &jittered)] {
        let start = Instant::now();
        let raw = images
            .par_iter()
            .map(|img| raw_descriptor(img, bench.glyph, &bench.engine.descriptor))
            .collect::<Result<Vec<_>>>()?;
        rep.rows.push(BenchRow {
            label: format!("raw/{cond}"),
            accuracy: Some(cv_accuracy(&score_pairs(&raw, &pairs)?, bench.folds)?),
            wall_seconds: start.elapsed().as_secs_f64(),
            ..Default::default()
        });
    }
    Ok(rep)
}

// ---------------------------------------------------------------------------
// speedup

/// A labeled scoring configuration for [`speedup_bench`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupConfig {
    pub label: String,
    pub scoring: Scoring,
    pub pca_k: Option<usize>,
    pub hash_space: HashSpace,
}

/// The four standard configurations: exhaustive exact (the baseline),
/// hashing only, PCA only, and PCA with hashing in the reduced space.
pub fn standard_speedup_configs(bits: usize, tables: usize, consensus: usize, k: usize) -> Vec<SpeedupConfig> {
    let coc = Scoring::Coc { bits, tables, consensus };
    vec![
        SpeedupConfig {
            label: "exhaustive".into(),
            scoring: Scoring::Exhaustive,
            pca_k: None,
            hash_space: HashSpace::Raw,
        },
        SpeedupConfig {
            label: format!("hash N={consensus}"),
            scoring: coc,
            pca_k: None,
            hash_space: HashSpace::Raw,
        },
        SpeedupConfig {
            label: format!("pca k={k}"),
            scoring: Scoring::Exhaustive,
            pca_k: Some(k),
            hash_space: HashSpace::Raw,
        },
        SpeedupConfig {
            label: format!("pca k={k} + hash N={consensus}"),
            scoring: coc,
            pca_k: Some(k),
            hash_space: HashSpace::Projected,
        },
    ]
}

fn memory_estimate(engine: &Engine, banks: &[WindowBank]) -> u64 {
    let cfg = engine.config();
    let mut bytes = 0usize;
    for (part, bank) in engine.parts().iter().zip(banks) {
        let (n, dim) = (part.book.len(), part.book.dim());
        bytes += n * dim * 8 + bank.len() * bank.dim() * 8;
        if let Some(lr) = part.lowrank() {
            let k = lr.basis().k();
            bytes += (k + 1) * dim * 8 + n * (k + 2) * 8 + bank.len() * (k + 2) * 8;
        }
        if let Some((fam, idx)) = part.hash() {
            bytes += fam.tables() * fam.bits() * fam.dim() * 8 + idx.n_tables() * idx.len() * 12;
        }
    }
    let _ = cfg;
    bytes as u64
}

/// Times each configuration over the same images with the same templates
/// and layer-3 set. The first configuration is the baseline of the speedup
/// column. Descriptor extraction is identical across configurations, so it
/// runs once up front and the timings cover scoring through the signature.
pub fn speedup_bench(bench: &VerificationBench, configs: &[SpeedupConfig], n_images: usize) -> Result<BenchReport> {
    if configs.is_empty() {
        return Err(Error::Empty("speedup configurations"));
    }
    let test = bench.test_set()?;
    let pairs = bench.pairs(&test);
    let timed: Vec<Raster> = test.images.iter().take(n_images).cloned().collect();
    if timed.is_empty() {
        return Err(Error::Empty("timed images"));
    }
    let templates = bench.template_images()?;
    let layer3 = bench.layer3_set()?;
    let mut rep = BenchReport::new("speedup");
    rep.param("seed", bench.seed);
    rep.param("templates", templates.len() * bench.engine.rotations.len());
    rep.param("windows_per_image", windows_per_image(&bench.engine, bench.canvas));
    rep.param("timed_images", timed.len());
    rep.param("pairs", pairs.len());
    let mut base_time = None;
    let mut banks: Option<Vec<Vec<WindowBank>>> = None;
    for sc in configs {
        let cfg = EngineConfig {
            scoring: sc.scoring,
            pca_k: sc.pca_k,
            hash_space: sc.hash_space,
            ..bench.engine.clone()
        };
        let system = System::train(cfg, &templates, &layer3)?;
        if banks.is_none() {
            banks = Some(timed.iter().map(|img| system.engine.window_banks(img)).collect::<Result<_>>()?);
        }
        let banks = banks.as_deref().unwrap_or_default();
        let memory = memory_estimate(&system.engine, &banks[0]);
        // timing runs images one after another so configs never overlap
        let counters = OpCounters::new();
        let start = Instant::now();
        for b in banks {
            system.signature_from_layer2(system.engine.layer2_from_banks(b, &counters)?)?;
        }
        let per_image = start.elapsed().as_secs_f64() / timed.len() as f64;
        let (sigs, _, _) = signatures(&system, &test.images)?;
        let acc = cv_accuracy(&score_pairs(&sigs, &pairs)?, bench.folds)?;
        let base = *base_time.get_or_insert(per_image);
        let c = counters.snapshot();
        rep.rows.push(BenchRow {
            label: sc.label.clone(),
            accuracy: Some(acc),
            dot_products: c.dot_products,
            madds: c.madds,
            wall_seconds: per_image,
            speedup: Some(base / per_image),
            memory_bytes: Some(memory),
            ..Default::default()
        });
    }
    Ok(rep)
}
