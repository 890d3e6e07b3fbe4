//! Plain-text `key = value` engine configuration.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::features::DescriptorKind;
use crate::pipeline::{EngineConfig, HashSpace, Scoring};

/// Every key [`EngineConfig::set`] accepts, with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("kinds", "descriptor kinds, comma separated: hog, lbp, fused"),
    ("window", "square window side in pixels"),
    ("stride", "window step in pixels"),
    ("ratios", "pyramid scale ratios, comma separated"),
    ("rotations", "template rotations in degrees, comma separated"),
    ("scoring", "coc or exhaustive"),
    ("hash_bits", "bits per hash code (coc only)"),
    ("hash_tables", "number of hash tables (coc only)"),
    ("consensus", "windows kept by voting (coc only)"),
    ("pca_k", "PCA rank, or exact"),
    ("hash_space", "raw or projected"),
    ("window_pool", "pooling over positions and scales: max or mean"),
    ("rotation_pool", "pooling over template rotations: max or mean"),
    ("identity_pool", "pooling over an identity's layer-3 templates: max or mean"),
    ("fill", "intensity for pixels rotated in from outside"),
    ("seed", "root seed"),
    ("hog_cell", "HOG cell side"),
    ("hog_bins", "HOG orientation bins"),
    ("hog_block", "HOG block side in cells"),
    ("lbp_radius", "LBP sampling radius"),
    ("lbp_points", "LBP sampling points"),
    ("lbp_grid", "LBP cells per side"),
];

fn list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::param(format!("bad value {v:?} for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl EngineConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let coc = |c: &mut EngineConfig| -> (usize, usize, usize) {
            match c.scoring {
                Scoring::Coc { bits, tables, consensus } => (bits, tables, consensus),
                Scoring::Exhaustive => (24, 20, 500),
            }
        };
        match key.trim() {
            "kinds" => self.kinds = parse_list(key, v)?,
            "window" => self.window = parse(key, v)?,
            "stride" => self.stride = parse(key, v)?,
            "ratios" => self.ratios = parse_list(key, v)?,
            "rotations" => self.rotations = parse_list(key, v)?,
            "scoring" => {
                self.scoring = match v {
                    "exhaustive" => Scoring::Exhaustive,
                    "coc" => {
                        let (bits, tables, consensus) = coc(self);
                        Scoring::Coc { bits, tables, consensus }
                    }
                    _ => return Err(Error::param(format!("bad value {v:?} for scoring"))),
                }
            }
            k @ ("hash_bits" | "hash_tables" | "consensus") => {
                // only meaningful under coc scoring; ignored otherwise
                if let Scoring::Coc { bits, tables, consensus } = &mut self.scoring {
                    let n: usize = parse(k, v)?;
                    match k {
                        "hash_bits" => *bits = n,
                        "hash_tables" => *tables = n,
                        _ => *consensus = n,
                    }
                } else {
                    parse::<usize>(k, v)?;
                }
            }
            "pca_k" => {
                self.pca_k = if v == "exact" { None } else { Some(parse(key, v)?) };
            }
            "hash_space" => {
                self.hash_space = match v {
                    "raw" => HashSpace::Raw,
                    "projected" => HashSpace::Projected,
                    _ => return Err(Error::param(format!("bad value {v:?} for hash_space"))),
                }
            }
            "window_pool" => self.window_pool = v.parse()?,
            "rotation_pool" => self.rotation_pool = v.parse()?,
            "identity_pool" => self.identity_pool = v.parse()?,
            "fill" => self.fill = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "hog_cell" => self.descriptor.hog_cell = parse(key, v)?,
            "hog_bins" => self.descriptor.hog_bins = parse(key, v)?,
            "hog_block" => self.descriptor.hog_block = parse(key, v)?,
            "lbp_radius" => self.descriptor.lbp_radius = parse(key, v)?,
            "lbp_points" => self.descriptor.lbp_points = parse(key, v)?,
            "lbp_grid" => self.descriptor.lbp_grid = parse(key, v)?,
            other => return Err(Error::param(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("config line {}: expected key = value", no + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Format(format!("config line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    /// Defaults overridden by `text`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = EngineConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let d = &self.descriptor;
        let kinds: Vec<DescriptorKind> = self.kinds.clone();
        let _ = writeln!(s, "kinds = {}", list(&kinds));
        let _ = writeln!(s, "window = {}", self.window);
        let _ = writeln!(s, "stride = {}", self.stride);
        let _ = writeln!(s, "ratios = {}", list(&self.ratios));
        let _ = writeln!(s, "rotations = {}", list(&self.rotations));
        match self.scoring {
            Scoring::Exhaustive => {
                let _ = writeln!(s, "scoring = exhaustive");
            }
            Scoring::Coc { bits, tables, consensus } => {
                let _ = writeln!(s, "scoring = coc");
                let _ = writeln!(s, "hash_bits = {bits}");
                let _ = writeln!(s, "hash_tables = {tables}");
                let _ = writeln!(s, "consensus = {consensus}");
            }
        }
        match self.pca_k {
            Some(k) => {
                let _ = writeln!(s, "pca_k = {k}");
            }
            None => {
                let _ = writeln!(s, "pca_k = exact");
            }
        }
        let space = match self.hash_space {
            HashSpace::Raw => "raw",
            HashSpace::Projected => "projected",
        };
        let _ = writeln!(s, "hash_space = {space}");
        let _ = writeln!(s, "window_pool = {}", self.window_pool);
        let _ = writeln!(s, "rotation_pool = {}", self.rotation_pool);
        let _ = writeln!(s, "identity_pool = {}", self.identity_pool);
        let _ = writeln!(s, "fill = {}", self.fill);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "hog_cell = {}", d.hog_cell);
        let _ = writeln!(s, "hog_bins = {}", d.hog_bins);
        let _ = writeln!(s, "hog_block = {}", d.hog_block);
        let _ = writeln!(s, "lbp_radius = {}", d.lbp_radius);
        let _ = writeln!(s, "lbp_points = {}", d.lbp_points);
        let _ = writeln!(s, "lbp_grid = {}", d.lbp_grid);
        s
    }
}

/// FNV-1a of the canonical config text.
pub fn config_hash(cfg: &EngineConfig) -> u64 {
    cfg.to_text().bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
