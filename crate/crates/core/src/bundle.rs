//! On-disk trained system: a directory of binary parts plus `manifest.txt`
//! holding the config, derived seeds, counts and a SHA-256 per part.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::coc::HashIndex;
use crate::config::config_hash;
use crate::error::{Error, Result};
use crate::features::{Descriptor, DescriptorKind};
use crate::hw::Template;
use crate::lowrank::ProjectionBasis;
use crate::matrix::Matrix;
use crate::pipeline::{Engine, EngineConfig, IdentityGroup, Layer3, System, TemplateBook};

pub const MANIFEST: &str = "manifest.txt";
const FORMAT: u32 = 1;
const BOOK_MAGIC: &[u8; 4] = b"HWTB";
const LAYER3_MAGIC: &[u8; 4] = b"HWL3";

struct Writer(Vec<u8>);

impl Writer {
    fn new(magic: &[u8; 4]) -> Self {
        let mut w = Writer(magic.to_vec());
        w.u32(FORMAT);
        w
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, xs: &[f64]) {
        for x in xs {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], magic: &[u8; 4], what: &'static str) -> Result<Self> {
        let mut r = Reader { buf, what };
        if r.take(4)? != magic {
            return Err(Error::Format(format!("{what}: bad magic")));
        }
        let v = r.u32()?;
        if v != FORMAT {
            return Err(Error::Format(format!("{what}: unsupported format {v}")));
        }
        Ok(r)
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Format(format!("{}: truncated", self.what)));
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    /// A count that must fit in what is left of the buffer at `unit` bytes each.
    fn count(&mut self, unit: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(unit.max(1)) > self.buf.len() {
            return Err(Error::Format(format!("{}: count {n} exceeds the data", self.what)));
        }
        Ok(n)
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn str(&mut self) -> Result<String> {
        let n = self.count(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format(format!("{}: bad utf-8", self.what)))
    }
    fn finish(self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::Format(format!("{}: trailing bytes", self.what)))
        }
    }
}

pub fn book_to_bytes(book: &TemplateBook) -> Vec<u8> {
    let mut w = Writer::new(BOOK_MAGIC);
    w.u32(book.kind.tag());
    w.u64(book.rotation_steps.len() as u64);
    w.f64s(&book.rotation_steps);
    w.u64(book.identities.len() as u64);
    for id in &book.identities {
        w.str(id);
    }
    w.u64(book.templates.len() as u64);
    w.u64(book.dim() as u64);
    for t in &book.templates {
        w.u64(t.source_index as u64);
        w.u64(t.transform_index as u64);
        w.f64s(&t.desc.values);
    }
    w.0
}

pub fn book_from_bytes(bytes: &[u8]) -> Result<TemplateBook> {
    let mut r = Reader::new(bytes, BOOK_MAGIC, "template book")?;
    let kind = DescriptorKind::from_tag(r.u32()?)?;
    let steps = r.count(8)?;
    let rotation_steps = r.f64s(steps)?;
    let n_ids = r.count(8)?;
    let identities = (0..n_ids).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let n = r.count(16)?;
    let dim = r.u64()? as usize;
    let mut templates = Vec::with_capacity(n);
    for _ in 0..n {
        let source_index = r.u64()? as usize;
        let transform_index = r.u64()? as usize;
        if source_index >= identities.len() || transform_index >= rotation_steps.len() {
            return Err(Error::Format("template book: index out of range".into()));
        }
        let values = r.f64s(dim)?;
        templates.push(Template {
            desc: Descriptor { kind, values },
            identity: identities[source_index].clone(),
            source_index,
            transform_index,
        });
    }
    r.finish()?;
    if n != identities.len() * rotation_steps.len() {
        return Err(Error::Format("template book: count is not images x rotations".into()));
    }
    Ok(TemplateBook {
        kind,
        templates,
        identities,
        rotation_steps,
    })
}

pub fn layer3_to_bytes(l3: &Layer3) -> Vec<u8> {
    let mut w = Writer::new(LAYER3_MAGIC);
    w.u64(l3.groups.len() as u64);
    for g in &l3.groups {
        w.str(&g.identity);
        w.u64(g.templates.rows() as u64);
        w.u64(g.templates.cols() as u64);
        w.f64s(g.templates.data());
    }
    w.0
}

pub fn layer3_from_bytes(bytes: &[u8]) -> Result<Layer3> {
    let mut r = Reader::new(bytes, LAYER3_MAGIC, "layer 3")?;
    let n = r.count(24)?;
    let mut groups = Vec::with_capacity(n);
    for _ in 0..n {
        let identity = r.str()?;
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let data = r.f64s(rows.checked_mul(cols).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        groups.push(IdentityGroup {
            identity,
            templates: Matrix::from_flat(rows, cols, data)?,
        });
    }
    r.finish()?;
    Ok(Layer3 { groups })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Named binary parts of a system, in manifest order.
fn parts(system: &System) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for p in system.engine.parts() {
        let kind = p.book.kind;
        files.push((format!("templates-{kind}.bin"), book_to_bytes(&p.book)));
        if let Some(lr) = p.lowrank() {
            files.push((format!("basis-{kind}.bin"), lr.basis().to_bytes()));
        }
        if let Some((fam, idx)) = p.hash() {
            files.push((format!("index-{kind}.bin"), idx.to_bytes(fam)));
        }
    }
    files.push(("layer3.bin".into(), layer3_to_bytes(&system.layer3)));
    files
}

/// Manifest text for `system` whose parts hash to `files`.
fn manifest(system: &System, files: &[(String, Vec<u8>)]) -> String {
    let cfg = system.engine.config();
    let mut s = String::new();
    let _ = writeln!(s, "format = {FORMAT}");
    let _ = writeln!(s, "config_hash = {:016x}", config_hash(cfg));
    let _ = writeln!(s, "\n[config]");
    s.push_str(&cfg.to_text());
    let _ = writeln!(s, "\n[seeds]");
    let _ = writeln!(s, "root = {}", cfg.seed);
    for p in system.engine.parts() {
        if let Some((fam, _)) = p.hash() {
            let _ = writeln!(s, "hash.{} = {}", p.book.kind, fam.seed());
        }
    }
    let _ = writeln!(s, "\n[counts]");
    for p in system.engine.parts() {
        let kind = p.book.kind;
        let _ = writeln!(s, "template_images.{kind} = {}", p.book.n_images());
        let _ = writeln!(s, "templates.{kind} = {}", p.book.len());
        let _ = writeln!(s, "descriptor_dim.{kind} = {}", p.book.dim());
        if let Some(lr) = p.lowrank() {
            let _ = writeln!(s, "pca_rank.{kind} = {}", lr.basis().rank());
        }
    }
    let _ = writeln!(s, "layer3_identities = {}", system.layer3.len());
    let imgs: usize = system.layer3.groups.iter().map(|g| g.templates.rows()).sum();
    let _ = writeln!(s, "layer3_images = {imgs}");
    let _ = writeln!(s, "\n[files]");
    for (name, bytes) in files {
        let _ = writeln!(s, "{name} = {}", sha256_hex(bytes));
    }
    s
}

/// Writes `system` into `dir`, creating it if needed.
pub fn save(system: &System, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = parts(system);
    for (name, bytes) in &files {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    }
    let p = dir.join(MANIFEST);
    fs::write(&p, manifest(system, &files)).map_err(|e| Error::io(&p, e))
}

/// Parsed manifest sections as `(section, key, value)` lines.
fn sections(text: &str) -> Vec<(String, String, String)> {
    let mut section = String::new();
    let mut out = Vec::new();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.to_string();
        } else if let Some((k, v)) = line.split_once('=') {
            out.push((section.clone(), k.trim().to_string(), v.trim().to_string()));
        }
    }
    out
}

/// Reads a bundle, checking every part against its manifest hash.
pub fn load(dir: &Path) -> Result<System> {
    let mp = dir.join(MANIFEST);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let lines = sections(&text);
    let get = |sec: &'static str| lines.iter().filter(move |l| l.0 == sec);
    match lines.iter().find(|l| l.0.is_empty() && l.1 == "format") {
        Some(l) if l.2 == FORMAT.to_string() => {}
        _ => return Err(Error::Format("bundle manifest: missing or unsupported format".into())),
    }
    let mut cfg_text = String::new();
    for (_, k, v) in get("config") {
        let _ = writeln!(cfg_text, "{k} = {v}");
    }
    let cfg = EngineConfig::from_text(&cfg_text)?;

    let mut files = std::collections::HashMap::new();
    for (_, name, digest) in get("files") {
        let p = dir.join(name);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        if &sha256_hex(&bytes) != digest {
            return Err(Error::Format(format!("bundle part {name} does not match its manifest hash")));
        }
        files.insert(name.clone(), bytes);
    }
    let need = |name: String| -> Result<&Vec<u8>> {
        files
            .get(&name)
            .ok_or_else(|| Error::Format(format!("bundle manifest does not list {name}")))
    };
    let mut engine_parts = Vec::new();
    for &kind in &cfg.kinds {
        let book = book_from_bytes(need(format!("templates-{kind}.bin"))?)?;
        let basis = match cfg.pca_k {
            Some(_) => Some(ProjectionBasis::from_bytes(need(format!("basis-{kind}.bin"))?)?),
            None => None,
        };
        let hash = match cfg.scoring {
            crate::pipeline::Scoring::Coc { .. } => Some(HashIndex::from_bytes(need(format!("index-{kind}.bin"))?)?),
            crate::pipeline::Scoring::Exhaustive => None,
        };
        engine_parts.push((book, basis, hash));
    }
    let engine = Engine::from_parts(cfg, engine_parts)?;
    let layer3 = layer3_from_bytes(need("layer3.bin".into())?)?;
    if layer3.groups.iter().any(|g| g.templates.cols() != engine.layer2_dim()) {
        return Err(Error::Format("layer-3 templates do not match the layer-2 size".into()));
    }
    Ok(System { engine, layer3 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coc::OpCounters;
    use crate::image::Raster;
    use crate::pipeline::Scoring;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(side: usize, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::from_fn(side, side, |_, _| rng.gen::<f64>())
    }

    fn system(cfg: EngineConfig) -> System {
        let l2: Vec<_> = (0..6).map(|i| (noise(24, i), format!("t{i}"))).collect();
        let l3: Vec<_> = (0..4).map(|i| (noise(40, 50 + i), format!("p{}", i % 2))).collect();
        System::train(cfg, &l2, &l3).unwrap()
    }

    fn cfg() -> EngineConfig {
        EngineConfig {
            window: 24,
            stride: 8,
            ratios: vec![1.0, 0.8],
            rotations: vec![-5.0, 5.0],
            scoring: Scoring::Coc { bits: 8, tables: 3, consensus: 2 },
            pca_k: Some(4),
            ..Default::default()
        }
    }

    #[test]
    fn roundtrip_preserves_signatures() {
        let dir = tempfile::tempdir().unwrap();
        let sys = system(cfg());
        save(&sys, dir.path()).unwrap();
        let back = load(dir.path()).unwrap();
        let img = noise(48, 99);
        let c = OpCounters::new();
        assert_eq!(sys.signature(&img, &c).unwrap(), back.signature(&img, &c).unwrap());
        assert_eq!(back.layer3, sys.layer3);
        let m = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        for name in ["templates-hog.bin", "basis-hog.bin", "index-hog.bin", "layer3.bin"] {
            assert!(m.contains(name), "{name}");
        }
        assert!(m.contains("templates.hog = 12"));
    }

    #[test]
    fn exhaustive_bundle_has_no_index() {
        let dir = tempfile::tempdir().unwrap();
        let sys = system(EngineConfig {
            scoring: Scoring::Exhaustive,
            pca_k: None,
            ..cfg()
        });
        save(&sys, dir.path()).unwrap();
        assert!(!dir.path().join("index-hog.bin").exists());
        assert!(!dir.path().join("basis-hog.bin").exists());
        load(dir.path()).unwrap();
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        save(&system(cfg()), a.path()).unwrap();
        save(&system(cfg()), b.path()).unwrap();
        let read = |d: &Path| fs::read(d.join(MANIFEST)).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        save(&system(cfg()), dir.path()).unwrap();
        let p = dir.path().join("layer3.bin");
        let mut bytes = fs::read(&p).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&p, bytes).unwrap();
        assert!(load(dir.path()).unwrap_err().to_string().contains("layer3.bin"));
    }

    #[test]
    fn truncated_parts_error() {
        let sys = system(cfg());
        let b = book_to_bytes(&sys.engine.parts()[0].book);
        assert_eq!(book_from_bytes(&b).unwrap(), sys.engine.parts()[0].book);
        assert!(book_from_bytes(&b[..b.len() - 3]).is_err());
        assert!(book_from_bytes(&[b.as_slice(), &[0]].concat()).is_err());
        let l = layer3_to_bytes(&sys.layer3);
        assert!(layer3_from_bytes(&l[..10]).is_err());
        assert!(layer3_from_bytes(b"nope").is_err());
    }
}
