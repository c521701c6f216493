//! End-to-end acceptance suite. Runs every criterion, prints one PASS/FAIL
//! line each, and exits nonzero if any failed.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use common::{build_model, fd_max_rel_error, plan_for, small_dataset};
use tagcausal::backbone::{BackboneKind, Scorer};
use tagcausal::checkpoint::checkpoint_json;
use tagcausal::data::Dataset;
use tagcausal::estimator::{bootstrap_sample, exhaustive_draws, mc_estimate, mc_paths, Strategy, UploaderPool};
use tagcausal::metrics::{evaluate, ndcg_at_k, recall_at_k, score_predictions, EvalSpec, RankedPrediction};
use tagcausal::seed;
use tagcausal::stats;
use tagcausal::synth::{generate, intervened_split, GenConfig, InterventionSpec, Splits};
use tagcausal::train::{fit, TrainConfig};
use tagcausal::with_backbone;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_pool<R: Rng>(rng: &mut R, max: usize) -> UploaderPool {
    let n = rng.gen_range(1..=max);
    let hist = (0..n)
        .map(|_| {
            let a: f64 = rng.gen();
            vec![a, 1.0 - a]
        })
        .collect();
    UploaderPool::from_histograms(hist).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn estimator_oracle() -> Verdict {
    let started = Instant::now();
    let mut rng = seed::rng(0, "oracle", &[]);
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let ds = small_dataset(i % 4);
        let kind = if i % 2 == 0 { BackboneKind::Nfm } else { BackboneKind::Lightgcn };
        let (model, store) = build_model(&ds, kind, 2 + (i as usize % 5), i);
        let pool = random_pool(&mut rng, 50);
        let c = &ds.ugcs[rng.gen_range(0..ds.ugcs.len())].features;
        with_backbone!(&model, m => {
            let sc = Scorer::new(m, &store);
            let tags = sc.all_tags();
            let est = mc_paths(&sc, c, &tags, &pool, &exhaustive_draws(&pool)).unwrap().factorized;
            for (j, &t) in tags.iter().enumerate() {
                let mut brute = 0.0;
                for h in pool.histograms() {
                    let u = sc.repr(h).unwrap();
                    brute += sc.score(c, &u, t).joint;
                }
                brute /= pool.histograms().len() as f64;
                worst = worst.max(rel_err(est[j], brute));
            }
        });
    }
    let secs = started.elapsed().as_secs_f64();
    check(worst <= 1e-10 && secs < 5.0, format!("max rel err {worst:.2e}, {secs:.2}s"))
}

fn factorization_identity() -> Verdict {
    let mut rng = seed::rng(1, "factor", &[]);
    let mut worst: f64 = 0.0;
    for i in 0..1000u64 {
        let ds = small_dataset(i % 3);
        let kind = if i % 2 == 0 { BackboneKind::Nfm } else { BackboneKind::Lightgcn };
        let (model, store) = build_model(&ds, kind, 3, i);
        let pool = random_pool(&mut rng, 30);
        let c = &ds.ugcs[rng.gen_range(0..ds.ugcs.len())].features;
        let n = rng.gen_range(1..40);
        with_backbone!(&model, m => {
            let sc = Scorer::new(m, &store);
            let tags = sc.all_tags();
            let draws = bootstrap_sample(&pool, n, &mut rng).unwrap();
            let p = mc_paths(&sc, c, &tags, &pool, &draws).unwrap();
            for (a, b) in p.factorized.iter().zip(&p.products) {
                worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1.0));
            }
        });
    }
    check(worst <= 1e-12, format!("max diff {worst:.2e}"))
}

fn gradient_correctness() -> Verdict {
    let ds = small_dataset(31);
    let pool = UploaderPool::from_dataset(&ds).unwrap();
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for kind in [BackboneKind::Nfm, BackboneKind::Lightgcn] {
        for strategy in [Strategy::None, Strategy::DectagMc] {
            let (model, mut store) = build_model(&ds, kind, 4, 9);
            let plan = plan_for(&ds, &pool, strategy, 3, 16, 4);
            let err = fd_max_rel_error(&model, &mut store, &ds, &plan, 120, 6);
            worst = worst.max(err);
            parts.push(format!("{kind}/{strategy} {err:.1e}"));
        }
    }
    check(worst <= 1e-4, parts.join(", "))
}

fn brute_recall(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    let mut hits = 0.0;
    for r in 0..k.min(ranked.len()) {
        if relevant.iter().any(|&t| t == ranked[r]) {
            hits += 1.0;
        }
    }
    hits / k.min(relevant.len()) as f64
}

fn brute_ndcg(ranked: &[u32], relevant: &[u32], k: usize) -> f64 {
    let mut dcg = 0.0;
    for r in 1..=k.min(ranked.len()) {
        let hit = relevant.contains(&ranked[r - 1]) as i32;
        dcg += (2f64.powi(hit) - 1.0) / ((r + 1) as f64).log2();
    }
    let mut idcg = 0.0;
    for r in 1..=k.min(relevant.len()) {
        idcg += 1.0 / ((r + 1) as f64).log2();
    }
    dcg / idcg
}

fn metric_oracle() -> Verdict {
    let mut rng = seed::rng(2, "metric", &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..60u32);
        let mut ranked: Vec<u32> = (0..n).collect();
        ranked.shuffle(&mut rng);
        let m = rng.gen_range(1..=n as usize);
        let relevant: Vec<u32> = rand::seq::index::sample(&mut rng, n as usize, m).into_iter().map(|i| i as u32).collect();
        let k = rng.gen_range(1..=n as usize);
        worst = worst.max((recall_at_k(&ranked, &relevant, k).unwrap() - brute_recall(&ranked, &relevant, k)).abs());
        worst = worst.max((ndcg_at_k(&ranked, &relevant, k).unwrap() - brute_ndcg(&ranked, &relevant, k)).abs());
    }
    let preds: Vec<RankedPrediction> = (0..2000u32)
        .map(|i| {
            let mut ranked: Vec<u32> = (0..500).collect();
            ranked.shuffle(&mut rng);
            let relevant = rand::seq::index::sample(&mut rng, 500, 5).into_iter().map(|t| t as u32).collect();
            RankedPrediction { ugc_id: i, ranked_tags: ranked, relevant_tags: relevant }
        })
        .collect();
    let r10 = score_predictions(&preds, &[10]).unwrap().recall(10).unwrap();
    let expected = 10.0 / 500.0;
    check(
        worst <= 1e-12 && (r10 - expected).abs() <= 0.005,
        format!("max diff {worst:.1e}; random R@10 {r10:.4} vs {expected:.4}"),
    )
}

fn unbiasedness() -> Verdict {
    let ds = small_dataset(40);
    let (model, store) = build_model(&ds, BackboneKind::Nfm, 6, 11);
    let pool = UploaderPool::from_dataset(&ds).unwrap();
    let c = &ds.ugcs[0].features;
    let mut rng = seed::rng(3, "unbiased", &[]);
    with_backbone!(&model, m => {
        let sc = Scorer::new(m, &store);
        let tags = sc.all_tags();
        let exact = mc_paths(&sc, c, &tags, &pool, &exhaustive_draws(&pool)).unwrap().factorized;
        let r = 10_000;
        let samples: Vec<Vec<f64>> = (0..r).map(|_| mc_estimate(&sc, c, &tags, &pool, 1, &mut rng).unwrap()).collect();
        let mut worst_z: f64 = 0.0;
        for j in 0..tags.len() {
            let xs: Vec<f64> = samples.iter().map(|s| s[j]).collect();
            let se = stats::std_dev(&xs) / (r as f64).sqrt();
            if se > 0.0 {
                worst_z = worst_z.max((stats::mean(&xs) - exact[j]).abs() / se);
            }
        }
        // spread of R-sample means vs 4R-sample means, for the most variable tag
        let tag = (0..tags.len())
            .max_by(|&a, &b| {
                let va = stats::variance(&samples.iter().map(|s| s[a]).collect::<Vec<_>>());
                let vb = stats::variance(&samples.iter().map(|s| s[b]).collect::<Vec<_>>());
                va.total_cmp(&vb)
            })
            .unwrap();
        let t = [tags[tag]];
        let mut spread = |n: usize| {
            let means: Vec<f64> = (0..400).map(|_| mc_estimate(&sc, c, &t, &pool, n, &mut rng).unwrap()[0]).collect();
            stats::std_dev(&means)
        };
        let ratio = spread(10) / spread(40);
        let ok = worst_z <= 4.0 && (ratio / 2.0 - 1.0).abs() <= 0.15;
        check(ok, format!("max |z| {worst_z:.2}; SE ratio R=10 vs 40 {ratio:.3} (ideal 2)"))
    })
}

fn determinism() -> Verdict {
    let gcfg = GenConfig::small(60, 30, 3.0, 17);
    let a = generate(&gcfg).unwrap();
    let b = generate(&gcfg).unwrap();
    let same_data = a.serialize_files().unwrap() == b.serialize_files().unwrap();
    let sp = intervened_split(&a, &InterventionSpec::new(3, 2)).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.embed_dim = 6;
    cfg.max_epochs = Some(3);
    cfg.negatives_per_positive = 8;
    let artifacts = || {
        let out = fit(&sp.train, Some(&sp.valid), &cfg).unwrap();
        let manifest = serde_json::to_string_pretty(&out.manifest).unwrap();
        let ckpt = checkpoint_json(&out.model, &out.model_config, &out.best, Some(cfg.strategy)).unwrap();
        let spec = EvalSpec { strategy: cfg.strategy, n_samples: 1, cutoffs: vec![10, 20], seed: 5 };
        let metrics = evaluate(&out.model, &out.best, &sp.test, &out.pool, &spec).unwrap();
        (manifest, ckpt, serde_json::to_string_pretty(&metrics).unwrap())
    };
    let (m1, c1, e1) = artifacts();
    let (m2, c2, e2) = artifacts();
    check(
        same_data && m1 == m2 && c1 == c2 && e1 == e2,
        format!("dataset {same_data}, manifest {}, checkpoint {}, metrics {}", m1 == m2, c1 == c2, e1 == e2),
    )
}

// Desk-scale replication experiments.

const N_SEEDS: u64 = 5;
const ADJUST_EPOCHS: usize = 25;

fn experiment_config(strategy: Strategy, seed: u64, n_samples: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.backbone = BackboneKind::Nfm;
    cfg.embed_dim = 8;
    cfg.batch_size = Some(1024);
    cfg.max_epochs = Some(ADJUST_EPOCHS);
    cfg.negatives_per_positive = 50;
    cfg.optimizer.learning_rate = 1e-2;
    cfg.strategy = strategy;
    cfg.seed = seed;
    cfg.n_samples = n_samples;
    cfg
}

fn test_ndcg10(sp: &Splits, strategy: Strategy, seed: u64, n_samples: usize) -> f64 {
    let cfg = experiment_config(strategy, seed, n_samples);
    let out = fit(&sp.train, Some(&sp.valid), &cfg).unwrap();
    let spec = EvalSpec { strategy, n_samples, cutoffs: vec![10], seed: seed::derive(seed, "test", &[]) };
    evaluate(&out.model, &out.best, &sp.test, &out.pool, &spec).unwrap().ndcg(10).unwrap()
}

fn desk_scale(beta: f64) -> Dataset {
    generate(&GenConfig::small(2000, 500, beta, 1)).unwrap()
}

/// N@10 per seed for (X, strategy) on one dataset.
type Grid = BTreeMap<(u32, Strategy), Vec<f64>>;

fn run_grid(ds: &Dataset, xs: &[u32], label: &str) -> Grid {
    let mut grid = Grid::new();
    for &x in xs {
        for seed in 0..N_SEEDS {
            let sp = intervened_split(ds, &InterventionSpec::new(x, seed)).unwrap();
            for strategy in [Strategy::None, Strategy::DectagMc] {
                let t = Instant::now();
                let v = test_ndcg10(&sp, strategy, seed, 1);
                println!("  [{label}] X={x} seed={seed} {strategy:<6} N@10 {v:.4} ({:.0}s)", t.elapsed().as_secs_f64());
                grid.entry((x, strategy)).or_default().push(v);
            }
        }
    }
    grid
}

fn ordering(grid: &Grid, secs: f64) -> Verdict {
    let none = &grid[&(3, Strategy::None)];
    let dec = &grid[&(3, Strategy::DectagMc)];
    let lift = stats::mean(dec) / stats::mean(none) - 1.0;
    let wins = none.iter().zip(dec).filter(|(n, d)| d > n).count();
    let p = stats::compare_significance(dec, none).unwrap();
    check(
        lift >= 0.03 && wins >= 4 && secs <= 1800.0,
        format!(
            "NONE {:.4} -> DECTAG {:.4} ({:+.1}%), wins {wins}/{N_SEEDS}, one-sided p {p:.3}, {secs:.0}s",
            stats::mean(none),
            stats::mean(dec),
            100.0 * lift
        ),
    )
}

fn intervention_trend(grid: &Grid) -> Verdict {
    let m = |x: u32, s: Strategy| stats::mean(&grid[&(x, s)]);
    let none: Vec<f64> = [5, 3, 1].iter().map(|&x| m(x, Strategy::None)).collect();
    let dec: Vec<f64> = [5, 3, 1].iter().map(|&x| m(x, Strategy::DectagMc)).collect();
    let monotone = none[0] >= none[1] && none[1] >= none[2];
    let dominates = dec.iter().zip(&none).all(|(d, n)| d >= n);
    check(
        monotone && dominates,
        format!(
            "NONE X=5/3/1 {:.4}/{:.4}/{:.4}; DECTAG {:.4}/{:.4}/{:.4}",
            none[0], none[1], none[2], dec[0], dec[1], dec[2]
        ),
    )
}

fn sample_count_flatness(ds: &Dataset) -> Verdict {
    let sp = intervened_split(ds, &InterventionSpec::new(3, 0)).unwrap();
    let mut finals = Vec::new();
    for ns in [2, 5, 10, 25, 50, 100] {
        let t = Instant::now();
        let v = test_ndcg10(&sp, Strategy::DectagMc, 0, ns);
        println!("  [ns] Ns={ns:<3} N@10 {v:.4} ({:.0}s)", t.elapsed().as_secs_f64());
        finals.push(v);
    }
    let cv = stats::std_dev(&finals) / stats::mean(&finals);
    check(cv <= 0.10, format!("CV {cv:.4} over {:?}", finals.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()))
}

fn zero_confounding(grid: &Grid) -> Verdict {
    let none = &grid[&(3, Strategy::None)];
    let dec = &grid[&(3, Strategy::DectagMc)];
    let pooled = ((stats::variance(none) + stats::variance(dec)) / 2.0).sqrt();
    let gap = (stats::mean(dec) - stats::mean(none)).abs();
    check(gap <= 2.0 * pooled, format!("|diff| {gap:.4} vs 2 x pooled sd {:.4}", 2.0 * pooled))
}

fn main() {
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (tag, detail) = match &v {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} {name}: {detail} [{:.1}s]", t.elapsed().as_secs_f64());
        results.push((name, v));
    };

    run("estimator oracle equivalence", &mut estimator_oracle);
    run("factorization identity", &mut factorization_identity);
    run("gradient correctness", &mut gradient_correctness);
    run("metric oracle", &mut metric_oracle);
    run("unbiasedness statistics", &mut unbiasedness);
    run("determinism", &mut determinism);

    let confounded = desk_scale(4.0);
    let t = Instant::now();
    let mut grid = Grid::new();
    run("DecTag beats NONE at X=3", &mut || {
        grid = run_grid(&confounded, &[3], "beta=4");
        ordering(&grid, t.elapsed().as_secs_f64())
    });
    run("intervention-strength trend", &mut || {
        grid.extend(run_grid(&confounded, &[5, 1], "beta=4"));
        intervention_trend(&grid)
    });
    run("flat response to sample count", &mut || sample_count_flatness(&confounded));
    run("zero-confounding control", &mut || zero_confounding(&run_grid(&desk_scale(0.0), &[3], "beta=0")));

    let failed = results.iter().filter(|(_, v)| v.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
