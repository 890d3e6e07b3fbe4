//! `hwmatch`: train template systems, compute signatures, verify pairs and
//! run the desk-scale benchmarks.

mod data;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hwmatch_core::bench::{
    clutter_sweep, consensus_sweep, jitter_bench, speedup_bench, standard_speedup_configs, windows_per_image,
    BenchReport, ClutterBench, TemplateSource, VerificationBench, CONSENSUS_BITS, CONSENSUS_TABLES, SPEEDUP_BITS,
    SPEEDUP_K, SPEEDUP_TABLES,
};
use hwmatch_core::config::KEYS;
use hwmatch_core::{
    affine_jitter, bundle, cross_validate, derive_seed, fit_threshold, mean_std, sample_jitter, save_pgm, signature_score,
    EngineConfig, JitterRanges, OpCounters, Signature, System,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{load_images, load_labeled, read_manifest, read_pairs, read_paths, Split};

fn config_help() -> String {
    let d = EngineConfig::default();
    let text = d.to_text();
    let values: HashMap<&str, &str> = text
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .collect();
    let mut s = String::from("Config keys (file lines `key = value`, or --set key=value):\n");
    for (k, desc) in KEYS {
        let v = values.get(k).copied().unwrap_or("-");
        let _ = writeln!(s, "  {k:<14} {desc} [default: {v}]");
    }
    s
}

#[derive(Parser)]
#[command(name = "hwmatch", version, about = "Template-based invariant image verification")]
struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Config file of `key = value` lines applied over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable and applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn apply(&self, cfg: &mut EngineConfig) -> Result<()> {
        if let Some(p) = &self.config {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
            cfg.apply_text(&text)?;
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').with_context(|| format!("--set {kv:?}: expected KEY=VALUE"))?;
            cfg.set(k, v)?;
        }
        Ok(())
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Build layer-2 templates and layer-3 groups and write a bundle.
    #[command(after_help = config_help())]
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Layer-2 template images (`path,identity`), each window-sized.
        #[arg(long)]
        templates: PathBuf,
        /// Layer-3 images (`path,identity`).
        #[arg(long)]
        layer3: PathBuf,
        /// Bundle directory to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Signatures of a list of images as CSV rows `path,<one value per identity>`.
    Signature {
        #[arg(long)]
        bundle: PathBuf,
        /// Image list; the first column of each row is the path.
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a pair list (`pathA,pathB,label[,split]`) and report accuracy.
    ///
    /// With a split column the threshold is fitted on `train` rows and
    /// accuracy is reported on `test` rows; otherwise k-fold
    /// cross-validation, pair i in fold i mod k.
    Verify {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        /// Per-pair scores CSV `pathA,pathB,label,score`.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Run a desk-scale benchmark and write `<name>.csv` and `<name>.txt`.
    Bench {
        #[arg(value_enum)]
        which: BenchName,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Root seed of the synthetic suite.
        #[arg(long)]
        seed: Option<u64>,
        /// Consensus sizes for `consensus`, comma separated; defaults to
        /// 5%, 10%, 20% and 50% of the windows per image plus all of them.
        #[arg(long, value_delimiter = ',')]
        consensus: Vec<usize>,
        #[arg(long)]
        hash_bits: Option<usize>,
        #[arg(long)]
        hash_tables: Option<usize>,
        /// PCA rank for `speedup`.
        #[arg(long)]
        pca_k: Option<usize>,
        /// Timed images for `speedup`.
        #[arg(long, default_value_t = 20)]
        timed: usize,
        #[command(flatten)]
        jitter: JitterArgs,
    },
    /// Write jittered copies of images plus a manifest
    /// `src_path,dx,dy,scale,rotation_deg,dst_path`.
    JitterGen {
        /// Image list; the first column of each row is the path.
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        copies: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Intensity for pixels brought in from outside.
        #[arg(long, default_value_t = 0.5)]
        fill: f64,
        #[command(flatten)]
        jitter: JitterArgs,
    },
    /// Hash table statistics of a bundle.
    IndexInspect {
        #[arg(long)]
        bundle: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchName {
    Clutter,
    Consensus,
    Jitter,
    Speedup,
}

#[derive(Args, Clone)]
struct JitterArgs {
    /// Maximum absolute translation in pixels.
    #[arg(long, default_value_t = 40.0)]
    max_shift: f64,
    #[arg(long, default_value_t = 1.0)]
    min_scale: f64,
    #[arg(long, default_value_t = 1.5)]
    max_scale: f64,
    /// Maximum absolute rotation in degrees.
    #[arg(long, default_value_t = 20.0)]
    max_rotation: f64,
}

impl JitterArgs {
    fn ranges(&self) -> Result<JitterRanges> {
        let r = JitterRanges {
            dx: (-self.max_shift, self.max_shift),
            dy: (-self.max_shift, self.max_shift),
            scale: (self.min_scale, self.max_scale),
            rotation: (-self.max_rotation, self.max_rotation),
        };
        r.validate()?;
        Ok(r)
    }
}

/// Short machine-readable class of an error, from the innermost cause.
fn error_kind(e: &anyhow::Error) -> &'static str {
    use hwmatch_core::Error as E;
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<E>() {
            return match err {
                E::Io { .. } => "io",
                E::UnsupportedFormat(_) => "unsupported_format",
                E::MalformedImage(_) => "malformed_image",
                E::ZeroArea => "zero_area",
                E::DimMismatch { .. } => "dim_mismatch",
                E::NonFinite(_) => "non_finite",
                E::InvalidParam(_) => "invalid_param",
                E::WindowTooSmall { .. } => "window_too_small",
                E::Empty(_) => "empty",
                E::Format(_) => "format",
            };
        }
        if cause.downcast_ref::<csv::Error>().is_some() {
            return "csv";
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "input"
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = (|| {
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.threads {
            if n == 0 {
                bail!("--threads must be >= 1");
            }
            pool = pool.num_threads(n);
        }
        pool.build_global().context("cannot start the worker pool")?;
        run(cli.cmd)
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace(['\n', '\r'], " ");
            eprintln!("hwmatch: error: kind={} message={msg}", error_kind(&e));
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Train {
            config,
            templates,
            layer3,
            out,
        } => train(&config, &templates, &layer3, &out),
        Cmd::Signature { bundle, images, out } => signature(&bundle, &images, &out),
        Cmd::Verify {
            bundle,
            pairs,
            folds,
            scores,
        } => verify(&bundle, &pairs, folds, scores.as_deref()),
        Cmd::Bench {
            which,
            out,
            seed,
            consensus,
            hash_bits,
            hash_tables,
            pca_k,
            timed,
            jitter,
        } => {
            let opts = BenchOpts {
                seed,
                consensus,
                hash_bits,
                hash_tables,
                pca_k,
                timed,
                ranges: jitter.ranges()?,
            };
            bench(which, &opts, &out)
        }
        Cmd::JitterGen {
            images,
            out,
            copies,
            seed,
            fill,
            jitter,
        } => jitter_gen(&images, &out, copies, seed, fill, &jitter.ranges()?),
        Cmd::IndexInspect { bundle } => index_inspect(&bundle),
    }
}

/// Lowers a PCA rank above what the templates support, with a note.
fn clamp_pca(cfg: &mut EngineConfig, n_images: usize) {
    if let Some(k) = cfg.pca_k {
        let n = n_images * cfg.rotations.len();
        let dim = cfg
            .kinds
            .iter()
            .map(|&kind| cfg.descriptor.dim(kind, cfg.window, cfg.window))
            .min()
            .unwrap_or(0);
        let cap = n.min(dim).max(1);
        if k > cap {
            eprintln!("hwmatch: note: pca_k {k} exceeds min(templates {n}, dim {dim}); using {cap}");
            cfg.pca_k = Some(cap);
        }
    }
}

fn train(config: &ConfigArgs, templates: &Path, layer3: &Path, out: &Path) -> Result<()> {
    let mut cfg = EngineConfig::default();
    config.apply(&mut cfg)?;
    let t_rows = read_manifest(templates)?;
    let l3_rows = read_manifest(layer3)?;
    clamp_pca(&mut cfg, t_rows.len());
    cfg.validate()?;
    let start = Instant::now();
    let t_imgs = load_labeled(&t_rows)?;
    let l3_imgs = load_labeled(&l3_rows)?;
    let loaded = start.elapsed().as_secs_f64();
    let system = System::train(cfg, &t_imgs, &l3_imgs)?;
    let trained = start.elapsed().as_secs_f64() - loaded;
    bundle::save(&system, out)?;
    for p in system.engine.parts() {
        println!(
            "layer2 {}: {} images x {} rotations = {} templates, dim {}",
            p.book.kind,
            p.book.n_images(),
            p.book.rotation_steps.len(),
            p.book.len(),
            p.book.dim()
        );
    }
    println!(
        "layer3: {} identities from {} images",
        system.layer3.len(),
        system.layer3.groups.iter().map(|g| g.templates.rows()).sum::<usize>()
    );
    println!("load {loaded:.3}s, train {trained:.3}s");
    println!("bundle: {}", out.display());
    Ok(())
}

fn signatures_of(system: &System, paths: &[PathBuf]) -> Result<Vec<Signature>> {
    let imgs = load_images(paths)?;
    let counters = OpCounters::new();
    imgs.par_iter()
        .zip(paths)
        .map(|(img, p)| {
            system
                .signature(img, &counters)
                .with_context(|| format!("signature of {}", p.display()))
        })
        .collect()
}

fn signature(bundle_dir: &Path, images: &Path, out: &Path) -> Result<()> {
    let system = bundle::load(bundle_dir)?;
    let paths = read_paths(images)?;
    let sigs = signatures_of(&system, &paths)?;
    let mut w = csv::Writer::from_path(out).with_context(|| format!("cannot write {}", out.display()))?;
    let mut header = vec!["path".to_string()];
    header.extend(system.layer3.groups.iter().map(|g| g.identity.clone()));
    w.write_record(&header)?;
    for (p, s) in paths.iter().zip(&sigs) {
        let mut rec = vec![p.display().to_string()];
        rec.extend(s.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    println!("{} signatures of {} values -> {}", sigs.len(), header.len() - 1, out.display());
    Ok(())
}

fn distribution(scores: &[(f64, bool)], same: bool) -> String {
    let xs: Vec<f64> = scores.iter().filter(|p| p.1 == same).map(|p| p.0).collect();
    if xs.is_empty() {
        return "n=0".into();
    }
    let (m, s) = mean_std(&xs);
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    format!("n={} mean={m:.6} std={s:.6} min={lo:.6} max={hi:.6}", xs.len())
}

fn verify(bundle_dir: &Path, pairs_csv: &Path, folds: usize, scores_out: Option<&Path>) -> Result<()> {
    let system = bundle::load(bundle_dir)?;
    let pairs = read_pairs(pairs_csv)?;
    let mut unique: Vec<PathBuf> = pairs.iter().flat_map(|p| [p.a.clone(), p.b.clone()]).collect();
    unique.sort();
    unique.dedup();
    let sigs = signatures_of(&system, &unique)?;
    let lookup: HashMap<&PathBuf, &Signature> = unique.iter().zip(&sigs).collect();
    let scores = pairs
        .iter()
        .map(|p| Ok((signature_score(lookup[&p.a], lookup[&p.b])?, p.same)))
        .collect::<Result<Vec<_>>>()?;

    if let Some(out) = scores_out {
        let mut w = csv::Writer::from_path(out).with_context(|| format!("cannot write {}", out.display()))?;
        w.write_record(["pathA", "pathB", "label", "score"])?;
        for (p, (s, _)) in pairs.iter().zip(&scores) {
            w.write_record([
                p.a.display().to_string(),
                p.b.display().to_string(),
                (p.same as u8).to_string(),
                s.to_string(),
            ])?;
        }
        w.flush()?;
    }

    println!("pairs: {}", pairs.len());
    println!("same: {}", distribution(&scores, true));
    println!("different: {}", distribution(&scores, false));
    if pairs.iter().any(|p| p.split.is_some()) {
        let pick = |want: Split| -> Vec<(f64, bool)> {
            pairs
                .iter()
                .zip(&scores)
                .filter(|(p, _)| p.split == Some(want))
                .map(|(_, s)| *s)
                .collect()
        };
        let (train, test) = (pick(Split::Train), pick(Split::Test));
        if test.is_empty() {
            bail!("split column given but no test rows");
        }
        let model = fit_threshold(&train)?;
        println!("tau: {}", model.tau);
        println!("train accuracy: {:.6}", model.train_accuracy);
        println!("test accuracy: {:.6}", model.accuracy(&test));
    } else {
        let model = fit_threshold(&scores)?;
        let accs = cross_validate(&scores, folds)?;
        let (m, s) = mean_std(&accs);
        println!("tau (all pairs): {}", model.tau);
        println!("accuracy ({folds}-fold): {:.2} +- {:.2} %", 100.0 * m, 100.0 * s);
    }
    Ok(())
}

struct BenchOpts {
    seed: Option<u64>,
    consensus: Vec<usize>,
    hash_bits: Option<usize>,
    hash_tables: Option<usize>,
    pca_k: Option<usize>,
    timed: usize,
    ranges: JitterRanges,
}

fn reseed(mut b: VerificationBench, seed: Option<u64>) -> VerificationBench {
    if let Some(s) = seed {
        b.seed = s;
        b.engine.seed = s;
    }
    b
}

fn write_report(rep: &BenchReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    for (ext, body) in [("csv", rep.to_csv()), ("txt", rep.to_table())] {
        let p = dir.join(format!("{}.{ext}", rep.name));
        fs::write(&p, body).with_context(|| format!("cannot write {}", p.display()))?;
    }
    print!("{}", rep.to_table());
    Ok(())
}

fn bench(which: BenchName, o: &BenchOpts, out: &Path) -> Result<()> {
    match which {
        BenchName::Clutter => {
            let mut b = ClutterBench::default();
            if let Some(s) = o.seed {
                b.seed = s;
            }
            for clutter in [true, false] {
                let data = b.dataset(clutter)?;
                for source in [TemplateSource::Glyphs, TemplateSource::Noise] {
                    let mut rep = clutter_sweep(&b, source, &data)?;
                    rep.param("clutter", clutter);
                    rep.name = format!(
                        "clutter-{}-{}",
                        if clutter { "cluttered" } else { "clean" },
                        format!("{source:?}").to_lowercase()
                    );
                    write_report(&rep, out)?;
                }
            }
        }
        BenchName::Consensus => {
            let b = reseed(VerificationBench::standard(), o.seed);
            let m = windows_per_image(&b.engine, b.canvas);
            let ns = if o.consensus.is_empty() {
                vec![m / 20, m / 10, m / 5, m / 2, m]
            } else {
                o.consensus.clone()
            };
            let rep = consensus_sweep(
                &b,
                &ns,
                o.hash_bits.unwrap_or(CONSENSUS_BITS),
                o.hash_tables.unwrap_or(CONSENSUS_TABLES),
            )?;
            write_report(&rep, out)?;
        }
        BenchName::Jitter => {
            let b = reseed(VerificationBench::jitter(), o.seed);
            write_report(&jitter_bench(&b, &o.ranges)?, out)?;
        }
        BenchName::Speedup => {
            let b = reseed(VerificationBench::speedup(), o.seed);
            let m = windows_per_image(&b.engine, b.canvas);
            let configs = standard_speedup_configs(
                o.hash_bits.unwrap_or(SPEEDUP_BITS),
                o.hash_tables.unwrap_or(SPEEDUP_TABLES),
                (m / 10).max(1),
                o.pca_k.unwrap_or(SPEEDUP_K),
            );
            write_report(&speedup_bench(&b, &configs, o.timed)?, out)?;
        }
    }
    Ok(())
}

fn jitter_gen(images: &Path, out: &Path, copies: usize, seed: u64, fill: f64, ranges: &JitterRanges) -> Result<()> {
    if copies == 0 {
        bail!("--copies must be >= 1");
    }
    if !(0.0..=1.0).contains(&fill) {
        bail!("--fill must lie in [0, 1]");
    }
    let paths = read_paths(images)?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let imgs = load_images(&paths)?;
    let jobs: Vec<(usize, usize)> = (0..paths.len()).flat_map(|i| (0..copies).map(move |c| (i, c))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(i, c)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, (i * copies + c) as u64));
            let p = sample_jitter(&mut rng, ranges)?;
            let img = affine_jitter(&imgs[i], &p, fill)?;
            let stem = paths[i].file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
            let dst = out.join(format!("{i:05}-{stem}-j{c}.pgm"));
            save_pgm(&img, &dst)?;
            Ok((paths[i].clone(), p, dst))
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = out.join("jitter.csv");
    let mut w = csv::Writer::from_path(&manifest).with_context(|| format!("cannot write {}", manifest.display()))?;
    w.write_record(["src_path", "dx", "dy", "scale", "rotation_deg", "dst_path"])?;
    for (src, p, dst) in &rows {
        w.write_record([
            src.display().to_string(),
            p.dx.to_string(),
            p.dy.to_string(),
            p.scale.to_string(),
            p.rotation.to_string(),
            dst.display().to_string(),
        ])?;
    }
    w.flush()?;
    println!("{} jittered images -> {}", rows.len(), manifest.display());
    Ok(())
}

fn index_inspect(bundle_dir: &Path) -> Result<()> {
    let system = bundle::load(bundle_dir)?;
    let mut any = false;
    for part in system.engine.parts() {
        let Some((fam, idx)) = part.hash() else { continue };
        any = true;
        println!(
            "{}: {} templates, {} bits, {} tables, dim {}, seed {}",
            part.book.kind,
            idx.len(),
            fam.bits(),
            fam.tables(),
            fam.dim(),
            fam.seed()
        );
        println!("table  buckets  largest  mean  singletons");
        for t in 0..idx.n_tables() {
            let sizes = idx.bucket_sizes(t);
            let single = sizes.iter().filter(|&&s| s == 1).count();
            println!(
                "{t:>5}  {:>7}  {:>7}  {:>4.2}  {single:>10}",
                sizes.len(),
                sizes.first().copied().unwrap_or(0),
                idx.len() as f64 / sizes.len().max(1) as f64
            );
        }
    }
    if !any {
        println!("bundle scores exhaustively; no hash index");
    }
    Ok(())
}
