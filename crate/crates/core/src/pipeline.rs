//! The three-layer system: layer-2 templates pooled over position, scale,
//! and rotation; layer-3 identity groups; cosine verification against a
//! fitted threshold.

use rayon::prelude::*;

use crate::coc::{coc_responses, exhaustive_responses, select_consensus, ExactScorer, HashFamily, HashIndex, OpCounters, Scorer};
use crate::error::{Error, Result};
use crate::features::{extract, DescriptorConfig, DescriptorKind};
use crate::hw::{dot, normalize, PoolKind, Template};
use crate::image::{affine_jitter, build_pyramid, geometric_ratios, JitterParams, Raster, DEFAULT_FILL};
use crate::lowrank::{fit_pca, LowRankScorer, ProjectionBasis};
use crate::matrix::{Matrix, Rows};
use crate::windows::{extract_windows, WindowBank};

/// How windows are chosen for scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scoring {
    /// Every window against every template.
    Exhaustive,
    /// Consensus of collisions: `bits`-bit codes in `tables` tables, keep
    /// the `consensus` most popular windows.
    Coc {
        bits: usize,
        tables: usize,
        consensus: usize,
    },
}

/// Which vectors the hash family sees when PCA is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HashSpace {
    /// Raw descriptors.
    #[default]
    Raw,
    /// Basis coordinates; every window is projected before hashing.
    Projected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub descriptor: DescriptorConfig,
    /// One descriptor kind, or several whose layer-2 responses are
    /// normalized and concatenated.
    pub kinds: Vec<DescriptorKind>,
    pub window: usize,
    pub stride: usize,
    pub ratios: Vec<f64>,
    /// Template rotations in degrees.
    pub rotations: Vec<f64>,
    pub scoring: Scoring,
    /// Rank of the PCA scorer; `None` scores exactly.
    pub pca_k: Option<usize>,
    pub hash_space: HashSpace,
    /// Pooling over positions and scales.
    pub window_pool: PoolKind,
    /// Pooling over the rotated copies of one template image.
    pub rotation_pool: PoolKind,
    /// Pooling over the layer-3 templates of one identity.
    pub identity_pool: PoolKind,
    /// Intensity for pixels rotated in from outside a template.
    pub fill: f64,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            descriptor: DescriptorConfig::default(),
            kinds: vec![DescriptorKind::Hog],
            window: 64,
            stride: 8,
            ratios: geometric_ratios(288.0 / 250.0, 150.0 / 250.0, 12),
            rotations: vec![-12.0, -6.0, 0.0, 6.0, 12.0],
            scoring: Scoring::Coc {
                bits: 24,
                tables: 20,
                consensus: 500,
            },
            pca_k: Some(250),
            hash_space: HashSpace::Raw,
            window_pool: PoolKind::Max,
            rotation_pool: PoolKind::Max,
            identity_pool: PoolKind::Max,
            fill: DEFAULT_FILL,
            seed: 0,
        }
    }
}

impl EngineConfig {
    /// Exhaustive exact scoring with otherwise default settings.
    pub fn exhaustive() -> Self {
        EngineConfig {
            scoring: Scoring::Exhaustive,
            pca_k: None,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.descriptor.validate()?;
        if self.kinds.is_empty() {
            return Err(Error::Empty("descriptor kinds"));
        }
        if self.rotations.is_empty() {
            return Err(Error::Empty("rotation steps"));
        }
        if self.ratios.is_empty() {
            return Err(Error::Empty("pyramid ratios"));
        }
        if self.stride == 0 {
            return Err(Error::param("stride must be >= 1"));
        }
        for &kind in &self.kinds {
            let min = self.descriptor.min_window(kind);
            if self.window < min {
                return Err(Error::WindowTooSmall {
                    win: self.window,
                    reason: format!("{kind} descriptors need at least {min} pixels"),
                });
            }
        }
        if let Scoring::Coc { bits, tables, consensus } = self.scoring {
            if !(1..=64).contains(&bits) || tables == 0 || consensus == 0 {
                return Err(Error::param("CoC needs 1..=64 bits, >= 1 table, consensus >= 1"));
            }
        }
        if self.pca_k == Some(0) {
            return Err(Error::param("PCA rank must be >= 1"));
        }
        if self.hash_space == HashSpace::Projected && self.pca_k.is_none() {
            return Err(Error::param("projected hashing needs a PCA rank"));
        }
        if !(0.0..=1.0).contains(&self.fill) {
            return Err(Error::param("fill must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Splits one root seed into independent streams.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = root ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Layer-2 templates of one descriptor kind, image-major then rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateBook {
    pub kind: DescriptorKind,
    pub templates: Vec<Template>,
    /// Identity label of each template image.
    pub identities: Vec<String>,
    pub rotation_steps: Vec<f64>,
}

impl TemplateBook {
    pub fn n_images(&self) -> usize {
        self.identities.len()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.templates.first().map_or(0, |t| t.desc.dim())
    }

    pub fn matrix(&self) -> Matrix {
        Matrix::from_rows(self.dim(), self.templates.iter().map(|t| t.values())).expect("templates share dim")
    }
}

/// Rotates each window-sized template image through every rotation step and
/// stores the normalized descriptors.
pub fn train_layer2(images: &[(Raster, String)], kind: DescriptorKind, cfg: &EngineConfig) -> Result<TemplateBook> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::Empty("layer-2 template images"));
    }
    for (img, id) in images {
        if img.width() != cfg.window || img.height() != cfg.window {
            return Err(Error::param(format!(
                "template image for {id:?} is {}x{}, window is {}",
                img.width(),
                img.height(),
                cfg.window
            )));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..images.len())
        .flat_map(|i| (0..cfg.rotations.len()).map(move |r| (i, r)))
        .collect();
    let templates = jobs
        .par_iter()
        .map(|&(i, r)| {
            let (img, id) = &images[i];
            let rotated = affine_jitter(img, &JitterParams::rotation(cfg.rotations[r]), cfg.fill)?;
            let desc = extract(&rotated, &cfg.descriptor, kind)?;
            Template::new(desc, id.clone(), i, r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TemplateBook {
        kind,
        templates,
        identities: images.iter().map(|(_, id)| id.clone()).collect(),
        rotation_steps: cfg.rotations.clone(),
    })
}

/// The scorer, optional projection, and optional hash index for one book.
#[derive(Debug, Clone)]
pub struct KindEngine {
    pub book: TemplateBook,
    exact: ExactScorer,
    lowrank: Option<LowRankScorer>,
    hash: Option<(HashFamily, HashIndex)>,
}

impl KindEngine {
    fn build(book: TemplateBook, cfg: &EngineConfig) -> Result<Self> {
        if book.is_empty() {
            return Err(Error::Empty("layer-2 templates"));
        }
        let m = book.matrix();
        let lowrank = match cfg.pca_k {
            Some(k) => Some(LowRankScorer::new(fit_pca(&m, k)?, &m)?),
            None => None,
        };
        let hash = match cfg.scoring {
            Scoring::Exhaustive => None,
            Scoring::Coc { bits, tables, .. } => {
                let seed = derive_seed(cfg.seed, 0x4841_5348 + book.kind.tag() as u64);
                match (cfg.hash_space, &lowrank) {
                    (HashSpace::Projected, Some(lr)) => {
                        let coords = lr.template_coords();
                        let fam = HashFamily::new(coords.cols(), bits, tables, seed)?;
                        let idx = HashIndex::build(&coords, &fam)?;
                        Some((fam, idx))
                    }
                    _ => {
                        let fam = HashFamily::new(m.cols(), bits, tables, seed)?;
                        let idx = HashIndex::build(&m, &fam)?;
                        Some((fam, idx))
                    }
                }
            }
        };
        Ok(KindEngine {
            exact: ExactScorer::new(m),
            book,
            lowrank,
            hash,
        })
    }

    /// Reassembles a part from stored pieces, checking them against `cfg`.
    fn from_parts(
        book: TemplateBook,
        basis: Option<ProjectionBasis>,
        hash: Option<(HashFamily, HashIndex)>,
        cfg: &EngineConfig,
    ) -> Result<Self> {
        if book.is_empty() {
            return Err(Error::Empty("layer-2 templates"));
        }
        let m = book.matrix();
        if basis.is_some() != cfg.pca_k.is_some() {
            return Err(Error::Format("stored basis does not match pca_k".into()));
        }
        let lowrank = basis.map(|b| LowRankScorer::new(b, &m)).transpose()?;
        match (&cfg.scoring, &hash) {
            (Scoring::Exhaustive, None) => {}
            (Scoring::Coc { bits, tables, .. }, Some((fam, idx))) => {
                let hash_dim = match (cfg.hash_space, &lowrank) {
                    (HashSpace::Projected, Some(lr)) => lr.basis().k(),
                    _ => m.cols(),
                };
                if fam.bits() != *bits || fam.tables() != *tables || fam.dim() != hash_dim || idx.len() != m.rows() {
                    return Err(Error::Format("stored hash index does not match the config".into()));
                }
            }
            _ => return Err(Error::Format("stored hash index does not match scoring".into())),
        }
        Ok(KindEngine {
            exact: ExactScorer::new(m),
            book,
            lowrank,
            hash,
        })
    }

    pub fn lowrank(&self) -> Option<&LowRankScorer> {
        self.lowrank.as_ref()
    }

    pub fn hash(&self) -> Option<(&HashFamily, &HashIndex)> {
        self.hash.as_ref().map(|(f, i)| (f, i))
    }

    fn scorer(&self) -> &dyn Scorer {
        match &self.lowrank {
            Some(lr) => lr,
            None => &self.exact,
        }
    }

    /// Pooled response of every layer-2 template over the bank.
    pub fn template_responses(&self, bank: &WindowBank, cfg: &EngineConfig, counters: &OpCounters) -> Result<Vec<f64>> {
        let pool = cfg.window_pool;
        match (cfg.scoring, &self.hash) {
            (Scoring::Coc { consensus, .. }, Some((fam, idx))) => match (cfg.hash_space, &self.lowrank) {
                (HashSpace::Projected, Some(lr)) => {
                    let pb = lr.project_bank(bank, None, counters)?;
                    let chosen: Vec<usize> = if consensus >= pb.len() {
                        (0..pb.len()).collect()
                    } else {
                        select_consensus(&pb, idx, fam, consensus, counters)?.windows
                    };
                    Ok(lr.pooled_projected(&pb, &chosen, pool, counters))
                }
                _ => Ok(coc_responses(bank, idx, fam, consensus, pool, self.scorer(), counters)?.0),
            },
            _ => exhaustive_responses(bank, pool, self.scorer(), counters),
        }
    }

    /// Template responses pooled over each image's rotation group.
    pub fn image_responses(&self, bank: &WindowBank, cfg: &EngineConfig, counters: &OpCounters) -> Result<Vec<f64>> {
        let r = self.template_responses(bank, cfg, counters)?;
        let steps = self.book.rotation_steps.len();
        r.chunks(steps).map(|g| cfg.rotation_pool.pool(g)).collect()
    }
}

/// Trained layers 1 and 2.
#[derive(Debug, Clone)]
pub struct Engine {
    cfg: EngineConfig,
    parts: Vec<KindEngine>,
}

impl Engine {
    pub fn new(cfg: EngineConfig, books: Vec<TemplateBook>) -> Result<Self> {
        cfg.validate()?;
        if books.iter().map(|b| b.kind).ne(cfg.kinds.iter().copied()) {
            return Err(Error::param("template books do not match the configured kinds"));
        }
        let parts = books
            .into_iter()
            .map(|b| KindEngine::build(b, &cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Engine { cfg, parts })
    }

    /// Engine from stored books, bases and indexes, one triple per kind.
    #[allow(clippy::type_complexity)]
    pub fn from_parts(
        cfg: EngineConfig,
        parts: Vec<(TemplateBook, Option<ProjectionBasis>, Option<(HashFamily, HashIndex)>)>,
    ) -> Result<Self> {
        cfg.validate()?;
        if parts.iter().map(|p| p.0.kind).ne(cfg.kinds.iter().copied()) {
            return Err(Error::param("template books do not match the configured kinds"));
        }
        let parts = parts
            .into_iter()
            .map(|(b, basis, hash)| KindEngine::from_parts(b, basis, hash, &cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Engine { cfg, parts })
    }

    /// Trains one book per configured kind from the same images.
    pub fn train(cfg: EngineConfig, images: &[(Raster, String)]) -> Result<Self> {
        let books = cfg
            .kinds
            .iter()
            .map(|&kind| train_layer2(images, kind, &cfg))
            .collect::<Result<Vec<_>>>()?;
        Engine::new(cfg, books)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn parts(&self) -> &[KindEngine] {
        &self.parts
    }

    /// Dense windows of every pyramid level, one bank per kind.
    pub fn window_banks(&self, img: &Raster) -> Result<Vec<WindowBank>> {
        let pyr = build_pyramid(img, &self.cfg.ratios, 1)?;
        self.parts
            .iter()
            .map(|p| extract_windows(&pyr, self.cfg.window, self.cfg.stride, &self.cfg.descriptor, p.book.kind))
            .collect()
    }

    /// One value per template image (concatenated over kinds, each kind's
    /// block unit-normalized when there are several).
    pub fn layer2_from_banks(&self, banks: &[WindowBank], counters: &OpCounters) -> Result<Vec<f64>> {
        if banks.len() != self.parts.len() {
            return Err(Error::DimMismatch {
                expected: self.parts.len(),
                actual: banks.len(),
            });
        }
        let mut out = Vec::new();
        for (part, bank) in self.parts.iter().zip(banks) {
            let mut r = part.image_responses(bank, &self.cfg, counters)?;
            if self.parts.len() > 1 {
                normalize(&mut r);
            }
            out.extend(r);
        }
        Ok(out)
    }

    pub fn layer2_signature(&self, img: &Raster, counters: &OpCounters) -> Result<Vec<f64>> {
        let banks = self.window_banks(img)?;
        self.layer2_from_banks(&banks, counters)
    }

    pub fn layer2_dim(&self) -> usize {
        self.parts.iter().map(|p| p.book.n_images()).sum()
    }
}

/// Stored layer-3 templates of one identity.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityGroup {
    pub identity: String,
    /// Unit-normalized layer-2 responses, one row per training image.
    pub templates: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer3 {
    pub groups: Vec<IdentityGroup>,
}

impl Layer3 {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// Groups the normalized layer-2 responses of `images` by identity, in order
/// of first appearance.
pub fn train_layer3(images: &[(Raster, String)], engine: &Engine) -> Result<Layer3> {
    if images.is_empty() {
        return Err(Error::Empty("layer-3 training images"));
    }
    let counters = OpCounters::new();
    let responses = images
        .par_iter()
        .map(|(img, _)| {
            let mut r = engine.layer2_signature(img, &counters)?;
            normalize(&mut r);
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let dim = engine.layer2_dim();
    let mut groups: Vec<IdentityGroup> = Vec::new();
    for ((_, id), r) in images.iter().zip(&responses) {
        match groups.iter_mut().find(|g| &g.identity == id) {
            Some(g) => g.templates.push_row(r)?,
            None => groups.push(IdentityGroup {
                identity: id.clone(),
                templates: Matrix::from_rows(dim, [r.as_slice()])?,
            }),
        }
    }
    Ok(Layer3 { groups })
}

/// Top-level response: one entry per layer-3 identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    pub values: Vec<f64>,
    /// Hash of the engine configuration that produced it.
    pub provenance: u64,
}

/// Threshold on signature cosine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifierModel {
    pub tau: f64,
    pub train_accuracy: f64,
}

impl VerifierModel {
    pub fn decide(&self, score: f64) -> bool {
        score > self.tau
    }

    pub fn accuracy(&self, scores: &[(f64, bool)]) -> f64 {
        if scores.is_empty() {
            return 0.0;
        }
        let hits = scores.iter().filter(|&&(s, same)| self.decide(s) == same).count();
        hits as f64 / scores.len() as f64
    }
}

/// A trained system: engine plus layer 3.
#[derive(Debug, Clone)]
pub struct System {
    pub engine: Engine,
    pub layer3: Layer3,
}

impl System {
    /// Layer-2 templates from `layer2_images`, layer-3 groups from
    /// `layer3_images`; the two sources may differ.
    pub fn train(cfg: EngineConfig, layer2_images: &[(Raster, String)], layer3_images: &[(Raster, String)]) -> Result<Self> {
        let engine = Engine::train(cfg, layer2_images)?;
        let layer3 = train_layer3(layer3_images, &engine)?;
        Ok(System { engine, layer3 })
    }

    /// Signature from an already normalized or raw layer-2 vector.
    pub fn signature_from_layer2(&self, mut s: Vec<f64>) -> Result<Signature> {
        normalize(&mut s);
        let pool = self.engine.cfg.identity_pool;
        let values = self
            .layer3
            .groups
            .iter()
            .map(|g| {
                if g.templates.n_cols() != s.len() {
                    return Err(Error::DimMismatch {
                        expected: g.templates.n_cols(),
                        actual: s.len(),
                    });
                }
                let scores: Vec<f64> = (0..g.templates.n_rows()).map(|i| dot(&s, g.templates.row(i))).collect();
                pool.pool(&scores)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Signature {
            values,
            provenance: crate::config::config_hash(&self.engine.cfg),
        })
    }

    pub fn signature(&self, img: &Raster, counters: &OpCounters) -> Result<Signature> {
        let s = self.engine.layer2_signature(img, counters)?;
        self.signature_from_layer2(s)
    }

    /// Cosine of the two signatures and the thresholded decision.
    pub fn verify(&self, a: &Raster, b: &Raster, model: &VerifierModel, counters: &OpCounters) -> Result<(bool, f64)> {
        let sa = self.signature(a, counters)?;
        let sb = self.signature(b, counters)?;
        let score = signature_score(&sa, &sb)?;
        Ok((model.decide(score), score))
    }
}

/// Normalized dot product of two signatures.
pub fn signature_score(a: &Signature, b: &Signature) -> Result<f64> {
    crate::hw::ndot(&a.values, &b.values)
}

/// Threshold maximizing accuracy over midpoints of consecutive distinct
/// scores (plus the two all-one-class thresholds). Ties go to the widest
/// gap, then the lower threshold.
pub fn fit_threshold(scores: &[(f64, bool)]) -> Result<VerifierModel> {
    if scores.is_empty() {
        return Err(Error::Empty("threshold scores"));
    }
    if scores.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::NonFinite("threshold scores"));
    }
    let n_same = scores.iter().filter(|p| p.1).count();
    if n_same == 0 || n_same == scores.len() {
        return Err(Error::param("threshold fitting needs both labels"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // distinct values with per-value label counts
    let mut values: Vec<(f64, usize, usize)> = Vec::new();
    for &(s, same) in &sorted {
        match values.last_mut() {
            Some(last) if last.0 == s => {
                if same {
                    last.1 += 1
                } else {
                    last.2 += 1
                }
            }
            _ => values.push((s, same as usize, (!same) as usize)),
        }
    }
    // threshold below everything: all predicted same
    let mut best_tau = values[0].0 - 1.0;
    let mut best_hits = n_same;
    let mut best_gap = 0.0;
    let mut diff_below = 0;
    let mut same_below = 0;
    for i in 0..values.len() {
        same_below += values[i].1;
        diff_below += values[i].2;
        let (tau, gap) = match values.get(i + 1) {
            Some(next) => ((values[i].0 + next.0) / 2.0, next.0 - values[i].0),
            None => (values[i].0, 0.0),
        };
        let hits = diff_below + (n_same - same_below);
        if hits > best_hits || (hits == best_hits && gap > best_gap) {
            best_tau = tau;
            best_hits = hits;
            best_gap = gap;
        }
    }
    Ok(VerifierModel {
        tau: best_tau,
        train_accuracy: best_hits as f64 / scores.len() as f64,
    })
}

/// Per-fold test accuracy of thresholds fitted on the other folds; pair `i`
/// belongs to fold `i % folds`.
pub fn cross_validate(scores: &[(f64, bool)], folds: usize) -> Result<Vec<f64>> {
    if folds < 2 || folds > scores.len() {
        return Err(Error::param(format!("need 2 <= folds <= {} pairs", scores.len())));
    }
    (0..folds)
        .map(|f| {
            let (test, train): (Vec<_>, Vec<_>) = scores.iter().enumerate().partition(|(i, _)| i % folds == f);
            let train: Vec<(f64, bool)> = train.into_iter().map(|(_, p)| *p).collect();
            let test: Vec<(f64, bool)> = test.into_iter().map(|(_, p)| *p).collect();
            Ok(fit_threshold(&train)?.accuracy(&test))
        })
        .collect()
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::from_fn(w, h, |_, _| rng.gen::<f64>())
    }

    fn small_cfg() -> EngineConfig {
        EngineConfig {
            window: 24,
            stride: 8,
            ratios: vec![1.0],
            rotations: vec![0.0],
            scoring: Scoring::Exhaustive,
            pca_k: None,
            ..Default::default()
        }
    }

    fn templates(n: usize, side: usize) -> Vec<(Raster, String)> {
        (0..n).map(|i| (noise(side, side, 100 + i as u64), format!("id{i}"))).collect()
    }

    #[test]
    fn one_rotation_one_template_per_image() {
        let cfg = small_cfg();
        let book = train_layer2(&templates(4, 24), DescriptorKind::Hog, &cfg).unwrap();
        assert_eq!(book.len(), 4);
        let cfg = EngineConfig {
            rotations: vec![-12.0, -6.0, 0.0, 6.0, 12.0],
            ..small_cfg()
        };
        let book = train_layer2(&templates(4, 24), DescriptorKind::Hog, &cfg).unwrap();
        assert_eq!(book.len(), 20);
        for t in &book.templates {
            assert!((dot(t.values(), t.values()) - 1.0).abs() < 1e-12);
        }
        assert_eq!(book.templates[7].source_index, 1);
        assert_eq!(book.templates[7].transform_index, 2);
    }

    #[test]
    fn duplicates_allowed_and_size_checked() {
        let mut imgs = templates(2, 24);
        imgs.push(imgs[0].clone());
        let book = train_layer2(&imgs, DescriptorKind::Hog, &small_cfg()).unwrap();
        assert_eq!(book.templates[0].values(), book.templates[2].values());
        assert!(train_layer2(&templates(1, 20), DescriptorKind::Hog, &small_cfg()).is_err());
    }

    #[test]
    fn pasted_template_responds_one() {
        let cfg = small_cfg();
        let tmpl = templates(3, 24);
        let engine = Engine::train(cfg, &tmpl).unwrap();
        let mut canvas = noise(80, 64, 7);
        canvas.paste(&tmpl[1].0, None, 40, 16).unwrap();
        let r = engine.layer2_signature(&canvas, &OpCounters::new()).unwrap();
        assert!((r[1] - 1.0).abs() < 1e-6);
        let blank = engine.layer2_signature(&Raster::filled(64, 64, 0.3), &OpCounters::new()).unwrap();
        assert!(blank.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grid_aligned_translation_is_invisible() {
        let cfg = small_cfg();
        let tmpl = templates(3, 24);
        let sys = System::train(cfg, &tmpl, &tmpl).unwrap();
        let bg = Raster::filled(96, 96, 0.5);
        let face = noise(24, 24, 55);
        let sig_at = |x: i64, y: i64| {
            let mut c = bg.clone();
            c.paste(&face, None, x, y).unwrap();
            sys.signature(&c, &OpCounters::new()).unwrap()
        };
        let a = sig_at(16, 16);
        let b = sig_at(56, 40);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn self_match_in_layer3() {
        let cfg = small_cfg();
        let tmpl = templates(4, 24);
        let l3: Vec<(Raster, String)> = (0..3).map(|i| (noise(48, 48, 200 + i), format!("p{}", i % 2))).collect();
        let sys = System::train(cfg, &tmpl, &l3).unwrap();
        assert_eq!(sys.layer3.len(), 2);
        assert_eq!(sys.layer3.groups[0].templates.rows(), 2);
        for g in &sys.layer3.groups {
            for i in 0..g.templates.rows() {
                let r = g.templates.row(i);
                assert!((dot(r, r) - 1.0).abs() < 1e-9);
            }
        }
        let s = sys.signature(&l3[1].0, &OpCounters::new()).unwrap();
        assert!((s.values[1] - 1.0).abs() < 1e-6);
        assert!(s.values.iter().all(|v| (-1.0..=1.0 + 1e-12).contains(v)));
        let model = VerifierModel { tau: 0.5, train_accuracy: 1.0 };
        let (same, score) = sys.verify(&l3[0].0, &l3[0].0, &model, &OpCounters::new()).unwrap();
        assert!(same && (score - 1.0).abs() < 1e-12);
        let (_, ab) = sys.verify(&l3[0].0, &l3[2].0, &model, &OpCounters::new()).unwrap();
        let (_, ba) = sys.verify(&l3[2].0, &l3[0].0, &model, &OpCounters::new()).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn coc_with_full_consensus_matches_exhaustive() {
        let tmpl = templates(6, 24);
        let ex = Engine::train(small_cfg(), &tmpl).unwrap();
        let coc = Engine::train(
            EngineConfig {
                scoring: Scoring::Coc { bits: 8, tables: 4, consensus: 10_000 },
                ..small_cfg()
            },
            &tmpl,
        )
        .unwrap();
        let img = noise(72, 72, 9);
        let a = ex.layer2_signature(&img, &OpCounters::new()).unwrap();
        let b = coc.layer2_signature(&img, &OpCounters::new()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn projected_hashing_runs_and_counts() {
        let tmpl = templates(12, 24);
        let cfg = EngineConfig {
            scoring: Scoring::Coc { bits: 4, tables: 3, consensus: 5 },
            pca_k: Some(6),
            hash_space: HashSpace::Projected,
            ..small_cfg()
        };
        let e = Engine::train(cfg, &tmpl).unwrap();
        let ctr = OpCounters::new();
        let r = e.layer2_signature(&noise(48, 48, 3), &ctr).unwrap();
        assert_eq!(r.len(), 12);
        let c = ctr.snapshot();
        assert_eq!(c.projections, 16);
        assert!(c.dot_products <= 5 * 12);
    }

    #[test]
    fn multi_kind_blocks_are_unit() {
        let cfg = EngineConfig {
            kinds: vec![DescriptorKind::Hog, DescriptorKind::Lbp],
            ..small_cfg()
        };
        let e = Engine::train(cfg, &templates(3, 24)).unwrap();
        let r = e.layer2_signature(&noise(40, 40, 1), &OpCounters::new()).unwrap();
        assert_eq!(r.len(), 6);
        assert!((dot(&r[..3], &r[..3]) - 1.0).abs() < 1e-12);
        assert!((dot(&r[3..], &r[3..]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn signatures_are_deterministic() {
        let cfg = EngineConfig {
            scoring: Scoring::Coc { bits: 6, tables: 4, consensus: 3 },
            ..small_cfg()
        };
        let tmpl = templates(5, 24);
        let a = System::train(cfg.clone(), &tmpl, &tmpl).unwrap();
        let b = System::train(cfg, &tmpl, &tmpl).unwrap();
        let img = noise(64, 64, 4);
        let sa = a.signature(&img, &OpCounters::new()).unwrap();
        let sb = b.signature(&img, &OpCounters::new()).unwrap();
        assert_eq!(sa.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), sb.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn threshold_examples() {
        let m = fit_threshold(&[(1.0, true), (0.0, false)]).unwrap();
        assert_eq!(m.tau, 0.5);
        assert_eq!(m.train_accuracy, 1.0);
        let m = fit_threshold(&[(0.9, true), (0.8, true), (0.7, false), (0.6, false)]).unwrap();
        assert!((m.tau - 0.75).abs() < 1e-12);
        assert_eq!(m.train_accuracy, 1.0);
        assert!(fit_threshold(&[]).is_err());
        assert!(fit_threshold(&[(0.3, true), (0.4, true)]).is_err());
    }

    #[test]
    fn threshold_beats_priors_on_interleaved() {
        let scores: Vec<(f64, bool)> = (0..30).map(|i| (i as f64 / 30.0, i % 3 == 0)).collect();
        let m = fit_threshold(&scores).unwrap();
        assert!(m.train_accuracy >= 20.0 / 30.0);
        assert_eq!(m.accuracy(&scores), m.train_accuracy);
    }

    #[test]
    fn threshold_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(2..25);
            let mut scores: Vec<(f64, bool)> =
                (0..n).map(|_| ((rng.gen_range(0..8) as f64) / 8.0, rng.gen_bool(0.5))).collect();
            scores[0].1 = true;
            scores[1].1 = false;
            let m = fit_threshold(&scores).unwrap();
            let best = (-10..=80)
                .map(|t| t as f64 / 64.0)
                .map(|t| VerifierModel { tau: t, train_accuracy: 0.0 }.accuracy(&scores))
                .fold(0.0, f64::max);
            assert!((m.train_accuracy - best).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_validation_folds() {
        let scores: Vec<(f64, bool)> = (0..40).map(|i| (if i % 2 == 0 { 0.9 } else { 0.1 }, i % 2 == 0)).collect();
        let acc = cross_validate(&scores, 10).unwrap();
        assert_eq!(acc.len(), 10);
        assert!(acc.iter().all(|&a| a == 1.0));
        assert_eq!(mean_std(&acc), (1.0, 0.0));
        assert!(cross_validate(&scores, 1).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }
}
