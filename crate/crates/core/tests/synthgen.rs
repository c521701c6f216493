use std::collections::BTreeSet;

use rand::Rng;
use tagcausal::data::{compute_topic_histogram, Dataset};
use tagcausal::seed;
use tagcausal::synth::{generate, generate_with_latents, intervened_split, GenConfig, InterventionSpec, Latents};

fn topic0_share(ds: &Dataset) -> (usize, usize) {
    let c = ds.topic_counts();
    (c[0], c[1])
}

/// Re-label topics so exactly half the UGCs are topic 0.
fn balanced(n_uploaders: usize) -> Dataset {
    let mut ds = generate(&GenConfig::small(n_uploaders, 20, 1.0, 4)).unwrap();
    for c in ds.ugcs.iter_mut() {
        c.topic = c.ugc_id % 2;
    }
    for u in ds.uploaders.iter_mut() {
        let own = ds.ugcs.iter().filter(|c| c.uploader_id == u.uploader_id);
        u.topic_histogram = compute_topic_histogram(own, 2).unwrap();
    }
    ds.validate().unwrap();
    ds
}

#[test]
fn split_ratios_mirror() {
    let ds = generate(&GenConfig::small(300, 30, 2.0, 1)).unwrap();
    for x in [1u32, 3, 5, 7] {
        let sp = intervened_split(&ds, &InterventionSpec::new(x, 9)).unwrap();
        let (a, b) = topic0_share(&sp.train);
        let n = (a + b) as f64;
        assert!((a as f64 - n * x as f64 / 10.0).abs() <= 1.0, "x={x} train {a}:{b}");
        for part in [&sp.valid, &sp.test] {
            let (a, b) = topic0_share(part);
            let n = (a + b) as f64;
            assert!((a as f64 - n * (10 - x) as f64 / 10.0).abs() <= 1.0, "x={x} eval {a}:{b}");
        }
        assert_eq!(sp.manifest.train.topic_counts, [sp.train.topic_counts()[0], sp.train.topic_counts()[1]]);
    }
}

#[test]
fn x1_on_balanced_thousand() {
    let ds = balanced(200);
    assert_eq!(ds.ugcs.len(), 1000);
    assert_eq!(ds.topic_counts(), vec![500, 500]);
    let sp = intervened_split(&ds, &InterventionSpec::new(1, 0)).unwrap();
    let k = 0.5;
    let c = sp.train.topic_counts();
    assert!((c[0] as f64 - 100.0 * k).abs() <= 1.0, "{c:?}");
    assert!((c[1] as f64 - 900.0 * k).abs() <= 1.0, "{c:?}");
}

#[test]
fn splits_partition_and_keep_parent_histograms() {
    let ds = generate(&GenConfig::small(150, 25, 2.0, 2)).unwrap();
    let sp = intervened_split(&ds, &InterventionSpec::new(3, 4)).unwrap();
    let ids = |d: &Dataset| d.ugcs.iter().map(|c| c.ugc_id).collect::<BTreeSet<_>>();
    let (tr, va, te) = (ids(&sp.train), ids(&sp.valid), ids(&sp.test));
    assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
    let all = ids(&ds);
    assert!(tr.union(&va).chain(te.iter()).all(|id| all.contains(id)));
    for part in [&sp.train, &sp.valid, &sp.test] {
        part.validate().unwrap();
        for u in &part.uploaders {
            assert_eq!(Some(u.topic_histogram.as_slice()), ds.histogram_of(u.uploader_id));
        }
    }
}

fn gumbel_topk<R: Rng>(rng: &mut R, logits: &[f64], k: usize) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = logits
        .iter()
        .enumerate()
        .map(|(i, &l)| (l - (-rng.gen_range(f64::MIN_POSITIVE..1.0f64).ln()).ln(), i))
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
    keyed[..k].iter().map(|x| x.1).collect()
}

/// Plug-in mutual information (nats) of a 2x2 contingency table.
fn mutual_info(table: [[f64; 2]; 2]) -> f64 {
    let n: f64 = table.iter().flatten().sum();
    let row = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let col = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    let mut mi = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            if table[i][j] > 0.0 {
                let p = table[i][j] / n;
                mi += p * (p / (row[i] / n * col[j] / n)).ln();
            }
        }
    }
    mi
}

/// MI between an uploader's bias group and which side of a reference
/// uploader's bias direction the chosen tag falls on.
fn group_tag_mi(lat: &Latents, ds: &Dataset, tag_sets: &[Vec<usize>]) -> f64 {
    let reference = lat.bias_group.iter().position(|&g| g == 0).unwrap();
    let mut table = [[0.0; 2]; 2];
    for (c, tags) in ds.ugcs.iter().zip(tag_sets) {
        let u = c.uploader_id as usize;
        for &t in tags {
            let lean = usize::from(lat.uploader_bias(reference, t) > 0.0);
            table[lat.bias_group[u]][lean] += 1.0;
        }
    }
    mutual_info(table)
}

/// Conditional randomization p-value: observed MI against tag sets redrawn
/// from the content-only distribution of each UGC.
fn confounding_p_value(beta: f64) -> f64 {
    let mut cfg = GenConfig::small(300, 60, beta, 11);
    cfg.feature_dim = 8;
    let (ds, lat) = generate_with_latents(&cfg).unwrap();
    let observed_sets: Vec<Vec<usize>> = ds.tags_by_ugc().into_iter().map(|v| v.into_iter().map(|t| t as usize).collect()).collect();
    let observed = group_tag_mi(&lat, &ds, &observed_sets);
    let content: Vec<Vec<f64>> = ds
        .ugcs
        .iter()
        .map(|c| (0..ds.tag_count).map(|t| lat.content_affinity(&c.features, t)).collect())
        .collect();
    let mut rng = seed::rng(5, "crt", &[]);
    let draws = 199;
    let mut at_least = 0;
    for _ in 0..draws {
        let sets: Vec<Vec<usize>> = content.iter().zip(&observed_sets).map(|(l, s)| gumbel_topk(&mut rng, l, s.len())).collect();
        if group_tag_mi(&lat, &ds, &sets) >= observed {
            at_least += 1;
        }
    }
    (1 + at_least) as f64 / (1 + draws) as f64
}

#[test]
fn zero_beta_shows_no_uploader_tag_dependence() {
    let p0 = confounding_p_value(0.0);
    assert!(p0 > 0.01, "p = {p0}");
    let p4 = confounding_p_value(4.0);
    assert!(p4 <= 0.01, "p = {p4}");
}

#[test]
fn strong_bias_splits_tag_usage_between_groups() {
    let (ds, lat) = generate_with_latents(&GenConfig::small(2000, 500, 4.0, 0)).unwrap();
    // uses[topic][group][tag]
    let mut uses = vec![vec![vec![0.0f64; ds.tag_count]; 2]; 2];
    let topic_of: Vec<usize> = ds.ugcs.iter().map(|c| c.topic as usize).collect();
    for t in &ds.triplets {
        let g = lat.bias_group[t.uploader_id as usize];
        uses[topic_of[t.ugc_id as usize]][g][t.tag_id as usize] += 1.0;
    }
    // tags nobody used have no usage share to compare
    let mut separated = 0;
    let mut used = 0;
    for tag in 0..ds.tag_count {
        // difference between the groups' shares of the tag's size-normalized usage, per topic
        let gaps: Vec<f64> = uses
            .iter()
            .filter_map(|by_group| {
                let r0 = by_group[0][tag] / by_group[0].iter().sum::<f64>();
                let r1 = by_group[1][tag] / by_group[1].iter().sum::<f64>();
                (r0 + r1 > 0.0).then(|| ((r0 - r1) / (r0 + r1)).abs())
            })
            .collect();
        if gaps.is_empty() {
            continue;
        }
        used += 1;
        if gaps.iter().sum::<f64>() / gaps.len() as f64 >= 0.10 {
            separated += 1;
        }
    }
    assert!(used * 2 > ds.tag_count);
    let frac = separated as f64 / used as f64;
    assert!(frac >= 0.8, "{frac}");
}

/// Mean over uploaders of KL(empirical tag distribution || topic-matched
/// population distribution).
fn mean_uploader_kl(ds: &Dataset) -> f64 {
    let n_tags = ds.tag_count;
    let mut pop = vec![vec![1.0f64; n_tags]; 2];
    for t in &ds.triplets {
        pop[ds.ugcs[t.ugc_id as usize].topic as usize][t.tag_id as usize] += 1.0;
    }
    for row in pop.iter_mut() {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
    }
    let mut counts = vec![vec![0.0f64; n_tags]; ds.uploaders.len()];
    let mut reference = vec![vec![0.0f64; n_tags]; ds.uploaders.len()];
    for t in &ds.triplets {
        let c = &ds.ugcs[t.ugc_id as usize];
        counts[c.uploader_id as usize][t.tag_id as usize] += 1.0;
        for (r, p) in reference[c.uploader_id as usize].iter_mut().zip(&pop[c.topic as usize]) {
            *r += p;
        }
    }
    let mut total = 0.0;
    for (cnt, refr) in counts.iter().zip(&reference) {
        let n: f64 = cnt.iter().sum();
        let m: f64 = refr.iter().sum();
        total += cnt
            .iter()
            .zip(refr)
            .filter(|(c, _)| **c > 0.0)
            .map(|(c, r)| (c / n) * ((c / n) / (r / m)).ln())
            .sum::<f64>();
    }
    total / ds.uploaders.len() as f64
}

#[test]
fn uploader_divergence_grows_with_beta() {
    let mut wins = 0;
    for seed in 0..5 {
        let kl: Vec<f64> = [0.0, 2.0, 4.0]
            .iter()
            .map(|&b| mean_uploader_kl(&generate(&GenConfig::small(300, 80, b, seed)).unwrap()))
            .collect();
        if kl[0] < kl[1] && kl[1] < kl[2] {
            wins += 1;
        }
    }
    assert!(wins >= 3, "{wins}/5");
}

#[test]
fn generate_is_pure() {
    let cfg = GenConfig::small(40, 20, 2.0, 8);
    let a = generate(&cfg).unwrap().serialize_files().unwrap();
    let b = generate(&cfg).unwrap().serialize_files().unwrap();
    assert_eq!(a, b);
}
