#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hwmatch_core::bench::{
    gen_clutter_dataset, identity_seeds, SyntheticIdentity, BACKGROUND_MEAN,
};
use hwmatch_core::{save_pgm, Raster};

pub fn hwmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hwmatch"))
        .args(args)
        .output()
        .expect("hwmatch runs")
}

pub fn ok(args: &[&str]) -> String {
    let out = hwmatch(args);
    assert!(
        out.status.success(),
        "hwmatch {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_manifest(path: &Path, rows: &[(String, String)]) {
    let mut s = String::from("path,identity\n");
    for (p, id) in rows {
        let _ = writeln!(s, "{p},{id}");
    }
    fs::write(path, s).unwrap();
}

/// A small synthetic corpus on disk: window-sized template glyphs, layer-3
/// canvases, test canvases and a pair list over the test canvases.
pub struct Corpus {
    pub dir: PathBuf,
    pub templates: PathBuf,
    pub layer3: PathBuf,
    pub tests: PathBuf,
    pub pairs: PathBuf,
    pub config: PathBuf,
}

pub const WINDOW: usize = 32;

pub fn corpus(dir: &Path, n_templates: usize) -> Corpus {
    let glyph = 32;
    let canvas = 48;
    let mut trows = Vec::new();
    for (i, s) in identity_seeds(5, 2, n_templates).into_iter().enumerate() {
        let g = SyntheticIdentity::new(s, glyph).unwrap();
        let img = g
            .centered(&Raster::filled(glyph, glyph, BACKGROUND_MEAN))
            .unwrap();
        let name = format!("t{i}.pgm");
        save_pgm(&img, dir.join(&name)).unwrap();
        trows.push((name, format!("t{i}")));
    }
    let set = |stream: u64, ids: usize, per: usize, prefix: &str| {
        let seeds = identity_seeds(5, stream, ids);
        let d = gen_clutter_dataset(&seeds, per, canvas, glyph, true, 5 + stream).unwrap();
        d.images
            .iter()
            .zip(&d.labels)
            .enumerate()
            .map(|(i, (img, l))| {
                let name = format!("{prefix}{i}.pgm");
                save_pgm(img, dir.join(&name)).unwrap();
                (name, format!("{prefix}id{l}"))
            })
            .collect::<Vec<_>>()
    };
    let l3rows = set(3, 4, 2, "l");
    let test_rows = set(1, 4, 3, "x");
    let templates = dir.join("templates.csv");
    let layer3 = dir.join("layer3.csv");
    let tests = dir.join("tests.csv");
    write_manifest(&templates, &trows);
    write_manifest(&layer3, &l3rows);
    write_manifest(&tests, &test_rows);
    let mut pairs = String::from("pathA,pathB,label\n");
    for i in 0..test_rows.len() {
        for j in i + 1..test_rows.len() {
            let same = test_rows[i].1 == test_rows[j].1;
            let _ = writeln!(
                pairs,
                "{},{},{}",
                test_rows[i].0, test_rows[j].0, same as u8
            );
        }
    }
    let pairs_path = dir.join("pairs.csv");
    fs::write(&pairs_path, pairs).unwrap();
    let config = dir.join("engine.cfg");
    fs::write(
        &config,
        format!(
            "window = {WINDOW}\nstride = 4\nratios = 1, 0.8\nrotations = -6, 0, 6\nscoring = coc\nhash_bits = 12\nhash_tables = 8\nconsensus = 20\npca_k = 16\nseed = 3\n"
        ),
    )
    .unwrap();
    Corpus {
        dir: dir.to_path_buf(),
        templates,
        layer3,
        tests,
        pairs: pairs_path,
        config,
    }
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
