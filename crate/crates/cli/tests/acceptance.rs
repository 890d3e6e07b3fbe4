//! End-to-end acceptance checks, one printed PASS/FAIL line per criterion.
//! Runs without the libtest harness so the lines land on stdout in order.

mod common;

use std::fs;
use std::time::Instant;

use hwmatch_core::bench::{
    clutter_sweep, consensus_sweep, gen_clutter_dataset, identity_seeds, jitter_bench, speedup_bench,
    standard_speedup_configs, windows_per_image, BenchReport, ClutterBench, TemplateSource, VerificationBench,
    CONSENSUS_BITS, CONSENSUS_TABLES, SPEEDUP_BITS, SPEEDUP_K, SPEEDUP_TABLES,
};
use hwmatch_core::{
    approx_ndot, check_transfer_condition, coc_responses, exhaustive_responses, fit_pca, ndot, Engine, EngineConfig,
    ExactScorer, HashFamily, HashIndex, JitterRanges, Matrix, OpCounters, PoolKind, Raster, Scoring, System,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gauss(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            g
        })
        .collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn row<'a>(rep: &'a BenchReport, label: &str) -> &'a hwmatch_core::bench::BenchRow {
    rep.row(label).unwrap_or_else(|| panic!("report {} has no row {label}", rep.name))
}

/// With N >= m and exact scoring, CoC signatures equal exhaustive ones.
fn coc_exactness() -> Outcome {
    let start = Instant::now();
    let mut bench = VerificationBench::standard();
    bench.n_template_ids = 20;
    bench.n_layer3_ids = 10;
    bench.layer3_images = 2;
    let exhaustive = bench.train(bench.engine.clone()).unwrap();
    let m = windows_per_image(&bench.engine, bench.canvas);
    let books = exhaustive.engine.parts().iter().map(|p| p.book.clone()).collect();
    let cfg = EngineConfig {
        scoring: Scoring::Coc {
            bits: 24,
            tables: 20,
            consensus: m,
        },
        ..bench.engine.clone()
    };
    let coc = System {
        engine: Engine::new(cfg, books).unwrap(),
        layer3: exhaustive.layer3.clone(),
    };
    let ids = identity_seeds(101, 1, 25);
    let images = gen_clutter_dataset(&ids, 2, bench.canvas, bench.glyph, true, 101).unwrap().images;
    let c = OpCounters::new();
    let mut worst = 0.0f64;
    for img in &images {
        let a = exhaustive.signature(img, &c).unwrap();
        let b = coc.signature(img, &c).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            worst = worst.max((x - y).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && secs < 60.0,
        format!("{} images, max |diff| {worst:.1e}, {secs:.1}s", images.len()),
    )
}

/// Pruned max responses never exceed the exhaustive max.
fn one_sided_pruning() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dim = 12;
    let draws = 10_000;
    let mut violations = 0;
    let ctr = OpCounters::new();
    for d in 0..draws {
        let m = rng.gen_range(2..40);
        // nonnegative rows, like every descriptor the engine produces
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| unit(gauss(&mut rng, dim).into_iter().map(f64::abs).collect()))
            .collect();
        let bank = Matrix::from_rows(dim, rows.iter().map(Vec::as_slice)).unwrap();
        let t = unit(gauss(&mut rng, dim).into_iter().map(f64::abs).collect());
        let templates = Matrix::from_rows(dim, [t.as_slice()]).unwrap();
        let fam = HashFamily::new(dim, rng.gen_range(1..10), rng.gen_range(1..4), d as u64).unwrap();
        let idx = HashIndex::build(&templates, &fam).unwrap();
        let scorer = ExactScorer::new(templates);
        let n = rng.gen_range(1..=m);
        let ex = exhaustive_responses(&bank, PoolKind::Max, &scorer, &ctr).unwrap();
        let (r, _) = coc_responses(&bank, &idx, &fam, n, PoolKind::Max, &scorer, &ctr).unwrap();
        if r[0] > ex[0] + 1e-9 {
            violations += 1;
        }
    }
    outcome(violations == 0, format!("{draws} draws, {violations} violations"))
}

/// <g I, t> = <I, g^-1 t> for cyclic shifts.
fn transfer_condition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (w, h) = (rng.gen_range(4..40), rng.gen_range(4..40));
        let img = Raster::from_fn(w, h, |_, _| rng.gen::<f64>());
        let tmpl = Raster::from_fn(w, h, |_, _| rng.gen::<f64>());
        let shift = (rng.gen_range(-50..50), rng.gen_range(-50..50));
        let (l, r) = check_transfer_condition(&img, &tmpl, shift).unwrap();
        worst = worst.max((l - r).abs());
    }
    outcome(worst < 1e-12, format!("100 triples, max gap {worst:.1e}"))
}

/// Per-bit agreement of sign hashes matches 1 - theta/pi.
fn simhash_statistics() -> Outcome {
    let dim = 16;
    let bits = 64;
    let pairs = 100_000;
    let fam = HashFamily::new(dim, bits, 1, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (name, theta) in [("pi/6", std::f64::consts::PI / 6.0), ("pi/4", std::f64::consts::PI / 4.0), ("pi/2", std::f64::consts::PI / 2.0)]
    {
        let mut agree = 0u64;
        for _ in 0..pairs {
            let u = unit(gauss(&mut rng, dim));
            let g = gauss(&mut rng, dim);
            let proj: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
            let w = unit(g.iter().zip(&u).map(|(a, b)| a - proj * b).collect());
            let v: Vec<f64> = u.iter().zip(&w).map(|(a, b)| theta.cos() * a + theta.sin() * b).collect();
            agree += (bits as u32 - (fam.code(0, &u) ^ fam.code(0, &v)).count_ones()) as u64;
        }
        let rate = agree as f64 / (pairs as f64 * bits as f64);
        let expect = 1.0 - theta / std::f64::consts::PI;
        worst = worst.max((rate - expect).abs());
        parts.push(format!("{name}: {rate:.4} vs {expect:.4}"));
    }
    outcome(worst <= 0.01, format!("{} ({pairs} pairs each)", parts.join(", ")))
}

/// Full-rank PCA is exact; error shrinks along a k grid.
fn pca_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (dim, rank, n) = (40, 10, 120);
    // rows in mean + span(rank directions)
    let dirs: Vec<Vec<f64>> = (0..rank).map(|_| gauss(&mut rng, dim)).collect();
    let mean = gauss(&mut rng, dim);
    let low: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let c = gauss(&mut rng, rank);
            (0..dim)
                .map(|i| mean[i] + dirs.iter().zip(&c).map(|(d, a)| d[i] * a).sum::<f64>())
                .collect()
        })
        .collect();
    let pairs: Vec<(usize, usize)> = (0..1000).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect();
    let mat = Matrix::from_rows(dim, low.iter().map(Vec::as_slice)).unwrap();
    let basis = fit_pca(&mat, rank).unwrap();
    let proj: Vec<_> = low.iter().map(|v| basis.project_full(v).unwrap()).collect();
    let mut exact_err = 0.0f64;
    for &(i, j) in &pairs {
        let a = approx_ndot(&proj[i], &proj[j], basis.mean_norm2()).unwrap();
        exact_err = exact_err.max((a - ndot(&low[i], &low[j]).unwrap()).abs());
    }

    let full: Vec<Vec<f64>> = (0..n)
        .map(|_| gauss(&mut rng, 32).into_iter().enumerate().map(|(i, g)| g / (1.0 + i as f64)).collect())
        .collect();
    let fm = Matrix::from_rows(32, full.iter().map(Vec::as_slice)).unwrap();
    let grid = [2, 4, 8, 16, 24, 32];
    let maes: Vec<f64> = grid
        .iter()
        .map(|&k| {
            let b = fit_pca(&fm, k).unwrap();
            let p: Vec<_> = full.iter().map(|v| b.project_full(v).unwrap()).collect();
            pairs
                .iter()
                .map(|&(i, j)| (approx_ndot(&p[i], &p[j], b.mean_norm2()).unwrap() - ndot(&full[i], &full[j]).unwrap()).abs())
                .sum::<f64>()
                / pairs.len() as f64
        })
        .collect();
    let monotone = maes.windows(2).all(|w| w[1] <= w[0] + 1e-15);
    let list: Vec<String> = grid.iter().zip(&maes).map(|(k, e)| format!("k={k}:{e:.2e}")).collect();
    outcome(
        exact_err <= 1e-8 && monotone,
        format!("k=rank max err {exact_err:.1e}; MAE {}", list.join(" ")),
    )
}

/// AUC grows with template size under clutter; glyphs beat noise.
fn clutter_criteria() -> (Outcome, Outcome) {
    let start = Instant::now();
    let bench = ClutterBench::default();
    let cluttered = bench.dataset(true).unwrap();
    let clean = bench.dataset(false).unwrap();
    let aucs = |src, data| -> Vec<f64> {
        let rep = clutter_sweep(&bench, src, data).unwrap();
        rep.rows.iter().map(|r| r.auc.unwrap()).collect()
    };
    let glyph = aucs(TemplateSource::Glyphs, &cluttered);
    let secs = start.elapsed().as_secs_f64();
    let noise = aucs(TemplateSource::Noise, &cluttered);
    let glyph_clean = aucs(TemplateSource::Glyphs, &clean);
    let noise_clean = aucs(TemplateSource::Noise, &clean);

    let drops: Vec<f64> = glyph.windows(2).map(|w| w[0] - w[1]).filter(|d| *d > 0.0).collect();
    let largest = *glyph.last().unwrap();
    let six = drops.len() <= 1 && drops.iter().all(|d| *d <= 0.02) && largest >= 0.9 && secs < 600.0;
    let fmt = |xs: &[f64]| xs.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    let c6 = outcome(
        six,
        format!(
            "sizes {:?}: AUC {}; inversions {:?}; {secs:.0}s",
            bench.sizes,
            fmt(&glyph),
            drops
        ),
    );
    let gaps: Vec<f64> = glyph.iter().zip(&noise).map(|(g, n)| g - n).collect();
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let c7 = outcome(
        min_gap >= 0.1,
        format!(
            "cluttered glyph {} vs noise {} (min gap {min_gap:.3}); clean glyph {} vs noise {}",
            fmt(&glyph),
            fmt(&noise),
            fmt(&glyph_clean),
            fmt(&noise_clean)
        ),
    );
    (c6, c7)
}

/// Keeping a tenth of the windows costs at most 2 points.
fn consensus_robustness() -> Outcome {
    let bench = VerificationBench::standard();
    let m = windows_per_image(&bench.engine, bench.canvas);
    let n = m / 10;
    let rep = consensus_sweep(&bench, &[n], CONSENSUS_BITS, CONSENSUS_TABLES).unwrap();
    let pruned = row(&rep, &format!("N={n}"));
    let full = row(&rep, "exhaustive");
    let (a, b) = (pruned.accuracy.unwrap(), full.accuracy.unwrap());
    let exact_cut = pruned.dot_products * 10 == full.dot_products;
    outcome(
        b - a <= 0.02 && exact_cut,
        format!(
            "m={m} N={n} b={CONSENSUS_BITS} L={CONSENSUS_TABLES}: accuracy {a:.4} vs exhaustive {b:.4} (drop {:.2} pts); dots {} vs {}",
            100.0 * (b - a),
            pruned.dot_products,
            full.dot_products
        ),
    )
}

/// Wide jitter barely moves the engine and wrecks raw descriptors.
fn jitter_robustness() -> Outcome {
    let bench = VerificationBench::jitter();
    let rep = jitter_bench(&bench, &JitterRanges::WIDE).unwrap();
    let acc = |l: &str| row(&rep, l).accuracy.unwrap();
    let engine_drop = acc("engine/original") - acc("engine/jittered");
    let raw_drop = acc("raw/original") - acc("raw/jittered");
    outcome(
        engine_drop <= 0.02 && raw_drop >= 0.10,
        format!(
            "engine {:.4} -> {:.4} (drop {:.2} pts); raw {:.4} -> {:.4} (drop {:.2} pts)",
            acc("engine/original"),
            acc("engine/jittered"),
            100.0 * engine_drop,
            acc("raw/original"),
            acc("raw/jittered"),
            100.0 * raw_drop
        ),
    )
}

/// Hashing alone divides dot products by m/N; PCA plus hashing is fastest.
fn workload_counters() -> Outcome {
    let bench = VerificationBench::speedup();
    let m = windows_per_image(&bench.engine, bench.canvas);
    let n = m / 10;
    let configs = standard_speedup_configs(SPEEDUP_BITS, SPEEDUP_TABLES, n, SPEEDUP_K);
    let rep = speedup_bench(&bench, &configs, 20).unwrap();
    let ex = &rep.rows[0];
    let hash = &rep.rows[1];
    let both = &rep.rows[3];
    let ratio_exact = hash.dot_products * m as u64 == ex.dot_products * n as u64;
    let fastest = rep.rows[..3].iter().all(|r| both.wall_seconds < r.wall_seconds);
    let times: Vec<String> = rep
        .rows
        .iter()
        .map(|r| format!("{} {:.2}ms ({:.1}x)", r.label, 1e3 * r.wall_seconds, r.speedup.unwrap()))
        .collect();
    outcome(
        ratio_exact && fastest,
        format!(
            "dots {} / {} = m/N = {m}/{n}: {ratio_exact}; {}",
            ex.dot_products,
            hash.dot_products,
            times.join(", ")
        ),
    )
}

/// Two train + verify runs with one seed give byte-identical score files.
fn determinism() -> Outcome {
    let d = tempfile::tempdir().unwrap();
    let c = common::corpus(d.path(), 8);
    let run = |tag: &str| -> Vec<u8> {
        let b = d.path().join(format!("bundle-{tag}"));
        let scores = d.path().join(format!("scores-{tag}.csv"));
        common::ok(&[
            "train",
            "--config",
            common::s(&c.config),
            "--templates",
            common::s(&c.templates),
            "--layer3",
            common::s(&c.layer3),
            "--out",
            common::s(&b),
        ]);
        common::ok(&[
            "verify",
            "--bundle",
            common::s(&b),
            "--pairs",
            common::s(&c.pairs),
            "--scores",
            common::s(&scores),
        ]);
        fs::read(scores).unwrap()
    };
    let (a, b) = (run("a"), run("b"));
    outcome(a == b && !a.is_empty(), format!("{} bytes per score file, identical: {}", a.len(), a == b))
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, o: Outcome| {
        println!("criterion {id:>2} {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    };
    report(1, "CoC exactness", coc_exactness());
    report(2, "one-sided pruning", one_sided_pruning());
    report(3, "transfer condition", transfer_condition());
    report(4, "simhash statistics", simhash_statistics());
    report(5, "PCA exactness and monotonicity", pca_exactness());
    let (c6, c7) = clutter_criteria();
    report(6, "clutter-size effect", c6);
    report(7, "noise-template contrast", c7);
    report(8, "consensus robustness", consensus_robustness());
    report(9, "jitter robustness", jitter_robustness());
    report(10, "workload counters", workload_counters());
    report(11, "determinism", determinism());
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
