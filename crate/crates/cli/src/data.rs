//! CSV inputs: image manifests (`path,identity`) and pair lists
//! (`pathA,pathB,label[,split]`). Relative paths resolve against the CSV's
//! own directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hwmatch_core::image::load_raster;
use hwmatch_core::Raster;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairRow {
    pub a: PathBuf,
    pub b: PathBuf,
    pub same: bool,
    pub split: Option<Split>,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p.trim());
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn records(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for r in rdr.records() {
        let r = r.with_context(|| format!("malformed CSV in {}", path.display()))?;
        if r.iter().all(str::is_empty) {
            continue;
        }
        out.push(r);
    }
    Ok(out)
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// `path,identity` rows; a first row of exactly `path,identity` is a header.
pub fn read_manifest(path: &Path) -> Result<Vec<(PathBuf, String)>> {
    let base = base_dir(path);
    let mut rows = records(path)?;
    if rows.first().is_some_and(|r| r.len() == 2 && &r[0] == "path" && &r[1] == "identity") {
        rows.remove(0);
    }
    if rows.is_empty() {
        bail!("manifest {} lists no images", path.display());
    }
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            if r.len() != 2 || r[0].is_empty() || r[1].is_empty() {
                bail!("{} row {}: expected path,identity", path.display(), i + 1);
            }
            Ok((resolve(&base, &r[0]), r[1].to_string()))
        })
        .collect()
}

/// Plain path list for commands that ignore identities: the first column of
/// each row.
pub fn read_paths(path: &Path) -> Result<Vec<PathBuf>> {
    let base = base_dir(path);
    let mut rows = records(path)?;
    if rows.first().is_some_and(|r| &r[0] == "path") {
        rows.remove(0);
    }
    if rows.is_empty() {
        bail!("{} lists no images", path.display());
    }
    Ok(rows.iter().map(|r| resolve(&base, &r[0])).collect())
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairRow>> {
    let base = base_dir(path);
    let mut rows = records(path)?;
    if rows.first().is_some_and(|r| r.len() >= 3 && &r[2] == "label") {
        rows.remove(0);
    }
    if rows.is_empty() {
        bail!("pair list {} is empty", path.display());
    }
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let at = || format!("{} row {}", path.display(), i + 1);
            if !(3..=4).contains(&r.len()) {
                bail!("{}: expected pathA,pathB,label[,split]", at());
            }
            let same = match &r[2] {
                "1" => true,
                "0" => false,
                other => bail!("{}: label {other:?} is not 0 or 1", at()),
            };
            let split = match r.get(3) {
                None | Some("") => None,
                Some("train") => Some(Split::Train),
                Some("test") => Some(Split::Test),
                Some(other) => bail!("{}: split {other:?} is not train or test", at()),
            };
            Ok(PairRow {
                a: resolve(&base, &r[0]),
                b: resolve(&base, &r[1]),
                same,
                split,
            })
        })
        .collect()
}

pub fn load_images(paths: &[PathBuf]) -> Result<Vec<Raster>> {
    paths
        .par_iter()
        .map(|p| load_raster(p).with_context(|| format!("cannot load image {}", p.display())))
        .collect()
}

pub fn load_labeled(rows: &[(PathBuf, String)]) -> Result<Vec<(Raster, String)>> {
    let paths: Vec<PathBuf> = rows.iter().map(|r| r.0.clone()).collect();
    Ok(load_images(&paths)?.into_iter().zip(rows.iter().map(|r| r.1.clone())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn manifest_header_and_relative_paths() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("m.csv");
        fs::write(&p, "path,identity\na.pgm,alice\n/abs/b.pgm, bob\n\n").unwrap();
        let m = read_manifest(&p).unwrap();
        assert_eq!(m, vec![(d.path().join("a.pgm"), "alice".into()), (PathBuf::from("/abs/b.pgm"), "bob".into())]);
    }

    #[test]
    fn manifest_errors() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("m.csv");
        fs::write(&p, "").unwrap();
        assert!(read_manifest(&p).is_err());
        fs::write(&p, "a.pgm\n").unwrap();
        assert!(read_manifest(&p).unwrap_err().to_string().contains("row 1"));
    }

    #[test]
    fn pairs_parse() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("p.csv");
        fs::write(&p, "pathA,pathB,label\na,b,1\nc,d,0,test\n").unwrap();
        let r = read_pairs(&p).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r[0].same && r[0].split.is_none());
        assert_eq!(r[1].split, Some(Split::Test));
        fs::write(&p, "a,b,2\n").unwrap();
        assert!(read_pairs(&p).is_err());
        fs::write(&p, "pathA,pathB,label\n").unwrap();
        assert!(read_pairs(&p).unwrap_err().to_string().contains("empty"));
    }
}
