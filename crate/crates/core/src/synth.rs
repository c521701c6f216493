//! Synthetic uploader-confounded datasets and intervened splits.
//!
//! Sampling follows the graph U → C, U → T, C → T:
//!
//! * each uploader draws a topic propensity from a symmetric Dirichlet, a
//!   style offset in feature space and a tag-bias direction aligned (with
//!   probability `bias_alignment`) to a per-topic bias axis;
//! * each UGC draws its topic from the uploader's propensity and gets
//!   `features = topic prototype + uploader style + noise`;
//! * tags are drawn without replacement from
//!   `softmax(affinity_scale * <c, q_t> + bias_strength * <d_u, q_t>)`
//!   (both inner products rescaled by `sqrt(d)`), where `q_t` is the tag's
//!   prototype and `d_u` the uploader's bias direction.
//!
//! With two topics the two bias axes are antipodal, so the population splits
//! into two subpopulations with opposite tag preferences.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{compute_topic_histogram, Dataset, DatasetKind, IdSpace, Triplet, UgcRecord, UploaderProfile};
use crate::error::{Error, Result};
use crate::seed;

fn default_topics() -> usize {
    2
}
fn default_concentration() -> f64 {
    1.5
}
fn default_style() -> f64 {
    0.5
}
fn default_affinity() -> f64 {
    3.0
}
fn default_alignment() -> f64 {
    0.85
}
fn default_jitter() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub n_uploaders: usize,
    #[serde(default = "default_topics")]
    pub n_topics: usize,
    pub n_tags: usize,
    /// Inclusive `[min, max]`.
    pub ugc_per_uploader: [usize; 2],
    pub feature_dim: usize,
    /// Inclusive `[min, max]`.
    pub tags_per_ugc: [usize; 2],
    /// Scale of the uploader → tag edge.
    pub bias_strength: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Dirichlet concentration for uploader topic propensities.
    #[serde(default = "default_concentration")]
    pub topic_concentration: f64,
    #[serde(default = "default_style")]
    pub style_scale: f64,
    #[serde(default = "default_affinity")]
    pub affinity_scale: f64,
    /// Probability that an uploader's bias axis is the dominant topic's axis.
    #[serde(default = "default_alignment")]
    pub bias_alignment: f64,
    /// Spread of individual bias directions around their axis.
    #[serde(default = "default_jitter")]
    pub bias_jitter: f64,
    #[serde(default)]
    pub filters: Filters,
}

/// Optional post-generation filters, all off by default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Filters {
    /// Drop tags attached to fewer UGCs than this.
    pub min_tag_usage: Option<usize>,
    /// Drop uploaders owning fewer UGCs than this (never below 2).
    pub min_uploader_ugcs: Option<usize>,
}

impl GenConfig {
    /// Defaults used throughout the tests: two topics, 16-dim features.
    pub fn small(n_uploaders: usize, n_tags: usize, bias_strength: f64, seed: u64) -> Self {
        GenConfig {
            n_uploaders,
            n_topics: 2,
            n_tags,
            ugc_per_uploader: [5, 5],
            feature_dim: 16,
            tags_per_ugc: [2, 4],
            bias_strength,
            noise_sigma: 0.5,
            seed,
            topic_concentration: default_concentration(),
            style_scale: default_style(),
            affinity_scale: default_affinity(),
            bias_alignment: default_alignment(),
            bias_jitter: default_jitter(),
            filters: Filters::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_uploaders", self.n_uploaders),
            ("n_topics", self.n_topics),
            ("n_tags", self.n_tags),
            ("feature_dim", self.feature_dim),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be >= 1"));
            }
        }
        let [umin, umax] = self.ugc_per_uploader;
        if umin < 2 {
            return Err(Error::config("ugc_per_uploader[0]", "minimum must be >= 2"));
        }
        if umax < umin {
            return Err(Error::config("ugc_per_uploader", "max < min"));
        }
        let [tmin, tmax] = self.tags_per_ugc;
        if tmin == 0 {
            return Err(Error::config("tags_per_ugc[0]", "minimum must be >= 1"));
        }
        if tmax < tmin {
            return Err(Error::config("tags_per_ugc", "max < min"));
        }
        if tmax > self.n_tags {
            return Err(Error::config(
                "tags_per_ugc[1]",
                format!("{} tags per UGC exceeds n_tags {}", tmax, self.n_tags),
            ));
        }
        let nonneg = [
            ("bias_strength", self.bias_strength),
            ("noise_sigma", self.noise_sigma),
            ("style_scale", self.style_scale),
            ("affinity_scale", self.affinity_scale),
            ("bias_jitter", self.bias_jitter),
        ];
        for (field, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be finite and >= 0"));
            }
        }
        if !(self.topic_concentration > 0.0 && self.topic_concentration.is_finite()) {
            return Err(Error::config("topic_concentration", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.bias_alignment) {
            return Err(Error::config("bias_alignment", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Hidden generative state, kept for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct Latents {
    pub feature_dim: usize,
    pub affinity_scale: f64,
    pub bias_strength: f64,
    pub topic_prototypes: Vec<Vec<f64>>,
    pub tag_prototypes: Vec<Vec<f64>>,
    /// Which topic's bias axis each uploader follows.
    pub bias_group: Vec<usize>,
    pub bias_direction: Vec<Vec<f64>>,
    pub propensity: Vec<Vec<f64>>,
}

impl Latents {
    fn scaled_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        (self.feature_dim as f64).sqrt() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    /// Content part of the tag logit.
    pub fn content_affinity(&self, features: &[f64], tag: usize) -> f64 {
        self.affinity_scale * self.scaled_dot(features, &self.tag_prototypes[tag])
    }

    /// Unscaled uploader preference for a tag (multiply by `bias_strength`).
    pub fn uploader_bias(&self, uploader: usize, tag: usize) -> f64 {
        self.scaled_dot(&self.bias_direction[uploader], &self.tag_prototypes[tag])
    }

    pub fn tag_logits(&self, features: &[f64], uploader: usize) -> Vec<f64> {
        (0..self.tag_prototypes.len())
            .map(|t| self.content_affinity(features, t) + self.bias_strength * self.uploader_bias(uploader, t))
            .collect()
    }
}

fn gaussian_vec<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn dirichlet<R: Rng>(rng: &mut R, k: usize, alpha: f64) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated > 0");
    let mut g: Vec<f64> = (0..k).map(|_| gamma.sample(rng).max(f64::MIN_POSITIVE)).collect();
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|x| *x /= s);
    g
}

fn categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if x < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// `k` distinct indices drawn without replacement from `softmax(logits)`
/// (Gumbel top-k), returned in ascending order.
fn sample_without_replacement<R: Rng>(rng: &mut R, logits: &[f64], k: usize) -> Vec<u32> {
    let mut keyed: Vec<(f64, u32)> = logits
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            (l - (-u.ln()).ln(), i as u32)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<u32> = keyed[..k].iter().map(|x| x.1).collect();
    out.sort_unstable();
    out
}

/// Generate a dataset; a pure function of `config`.
pub fn generate(config: &GenConfig) -> Result<Dataset> {
    generate_with_latents(config).map(|(d, _)| d)
}

pub fn generate_with_latents(config: &GenConfig) -> Result<(Dataset, Latents)> {
    config.validate()?;
    let d = config.feature_dim;
    let unit = 1.0 / (d as f64).sqrt();
    let mut rng = seed::rng(config.seed, "generate", &[]);

    let topic_prototypes: Vec<Vec<f64>> =
        (0..config.n_topics).map(|_| gaussian_vec(&mut rng, d, unit)).collect();
    let tag_prototypes: Vec<Vec<f64>> =
        (0..config.n_tags).map(|_| gaussian_vec(&mut rng, d, unit)).collect();
    let mut axes: Vec<Vec<f64>> = (0..config.n_topics)
        .map(|_| {
            let mut v = gaussian_vec(&mut rng, d, 1.0);
            normalize(&mut v);
            v
        })
        .collect();
    if config.n_topics == 2 {
        axes[1] = axes[0].iter().map(|x| -x).collect();
    }

    let mut uploaders = Vec::with_capacity(config.n_uploaders);
    let mut ugcs = Vec::new();
    let mut triplets = Vec::new();
    let mut latents = Latents {
        feature_dim: d,
        affinity_scale: config.affinity_scale,
        bias_strength: config.bias_strength,
        topic_prototypes,
        tag_prototypes,
        bias_group: Vec::with_capacity(config.n_uploaders),
        bias_direction: Vec::with_capacity(config.n_uploaders),
        propensity: Vec::with_capacity(config.n_uploaders),
    };

    for u in 0..config.n_uploaders {
        let propensity = dirichlet(&mut rng, config.n_topics, config.topic_concentration);
        let n_ugc = rng.gen_range(config.ugc_per_uploader[0]..=config.ugc_per_uploader[1]);
        let style = gaussian_vec(&mut rng, d, config.style_scale * unit);
        let dominant = propensity
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let group = if config.n_topics == 1 || rng.gen::<f64>() < config.bias_alignment {
            dominant
        } else {
            let other = rng.gen_range(0..config.n_topics - 1);
            if other >= dominant {
                other + 1
            } else {
                other
            }
        };
        let jitter = gaussian_vec(&mut rng, d, config.bias_jitter * unit);
        let mut direction: Vec<f64> = axes[group].iter().zip(&jitter).map(|(a, j)| a + j).collect();
        normalize(&mut direction);
        latents.bias_group.push(group);
        latents.bias_direction.push(direction);

        let first = ugcs.len();
        for _ in 0..n_ugc {
            let topic = categorical(&mut rng, &propensity);
            let noise = gaussian_vec(&mut rng, d, config.noise_sigma * unit);
            let features: Vec<f64> = (0..d)
                .map(|i| latents.topic_prototypes[topic][i] + style[i] + noise[i])
                .collect();
            let ugc_id = ugcs.len() as u32;
            let logits = latents.tag_logits(&features, u);
            let k = rng.gen_range(config.tags_per_ugc[0]..=config.tags_per_ugc[1]);
            for tag in sample_without_replacement(&mut rng, &logits, k) {
                triplets.push(Triplet { uploader_id: u as u32, ugc_id, tag_id: tag });
            }
            ugcs.push(UgcRecord { ugc_id, uploader_id: u as u32, topic: topic as u32, features });
        }
        let topic_histogram = compute_topic_histogram(&ugcs[first..], config.n_topics)?;
        uploaders.push(UploaderProfile { uploader_id: u as u32, topic_histogram });
        latents.propensity.push(propensity);
    }

    let mut ds = Dataset {
        kind: DatasetKind::Full,
        id_space: IdSpace { uploaders: uploaders.len(), ugcs: ugcs.len() },
        uploaders,
        ugcs,
        triplets,
        n_topics: config.n_topics,
        feature_dim: d,
        tag_count: config.n_tags,
        provenance: Some(serde_json::json!({ "generator": config })),
    };
    if config.filters != Filters::default() {
        ds = apply_filters(&ds, &config.filters)?;
    }
    ds.canonicalize();
    ds.validate()?;
    Ok((ds, latents))
}

/// Drop rare tags, then untagged UGCs, then small uploaders, and re-index
/// everything densely. Tag ids are remapped in ascending order.
pub fn apply_filters(ds: &Dataset, filters: &Filters) -> Result<Dataset> {
    let mut usage = vec![0usize; ds.tag_count];
    for t in &ds.triplets {
        usage[t.tag_id as usize] += 1;
    }
    let min_usage = filters.min_tag_usage.unwrap_or(0);
    let mut tag_map = vec![None; ds.tag_count];
    let mut next = 0u32;
    for (t, &n) in usage.iter().enumerate() {
        if n >= min_usage {
            tag_map[t] = Some(next);
            next += 1;
        }
    }
    let tag_count = next as usize;
    if tag_count == 0 {
        return Err(Error::Empty("tag filter removed every tag".into()));
    }
    let mut kept: Vec<Triplet> = ds
        .triplets
        .iter()
        .filter_map(|t| tag_map[t.tag_id as usize].map(|tag_id| Triplet { tag_id, ..*t }))
        .collect();

    let mut tagged = vec![false; ds.id_space.ugcs];
    for t in &kept {
        tagged[t.ugc_id as usize] = true;
    }
    let min_ugcs = filters.min_uploader_ugcs.unwrap_or(2).max(2);
    let mut owned: BTreeMap<u32, usize> = BTreeMap::new();
    for c in ds.ugcs.iter().filter(|c| tagged[c.ugc_id as usize]) {
        *owned.entry(c.uploader_id).or_default() += 1;
    }
    let mut uploader_map = vec![None; ds.id_space.uploaders];
    let mut next_u = 0u32;
    for (&u, &n) in &owned {
        if n >= min_ugcs {
            uploader_map[u as usize] = Some(next_u);
            next_u += 1;
        }
    }

    let mut ugc_map = vec![None; ds.id_space.ugcs];
    let mut ugcs = Vec::new();
    for c in &ds.ugcs {
        if !tagged[c.ugc_id as usize] {
            continue;
        }
        if let Some(uid) = uploader_map[c.uploader_id as usize] {
            ugc_map[c.ugc_id as usize] = Some(ugcs.len() as u32);
            ugcs.push(UgcRecord { ugc_id: ugcs.len() as u32, uploader_id: uid, ..c.clone() });
        }
    }
    kept.retain(|t| ugc_map[t.ugc_id as usize].is_some());
    for t in kept.iter_mut() {
        t.ugc_id = ugc_map[t.ugc_id as usize].unwrap();
        t.uploader_id = uploader_map[t.uploader_id as usize].unwrap();
    }

    let mut by_uploader: Vec<Vec<&UgcRecord>> = vec![Vec::new(); next_u as usize];
    for c in &ugcs {
        by_uploader[c.uploader_id as usize].push(c);
    }
    let uploaders = by_uploader
        .iter()
        .enumerate()
        .map(|(i, list)| {
            Ok(UploaderProfile {
                uploader_id: i as u32,
                topic_histogram: compute_topic_histogram(list.iter().copied(), ds.n_topics)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = Dataset {
        kind: DatasetKind::Full,
        id_space: IdSpace { uploaders: uploaders.len(), ugcs: ugcs.len() },
        uploaders,
        ugcs,
        triplets: kept,
        n_topics: ds.n_topics,
        feature_dim: ds.feature_dim,
        tag_count,
        provenance: ds.provenance.clone(),
    };
    out.canonicalize();
    Ok(out)
}

fn default_fractions() -> [f64; 3] {
    [0.5, 0.1, 0.4]
}

/// Topic-ratio intervention: train gets `x : (10 - x)` topic-0:topic-1 UGCs,
/// valid and test get the mirrored `(10 - x) : x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterventionSpec {
    pub x: u32,
    /// `(train, valid, test)` fractions of the UGCs used.
    #[serde(default = "default_fractions")]
    pub split_fractions: [f64; 3],
    pub seed: u64,
    /// Number of UGCs to distribute; `None` uses the largest feasible total.
    #[serde(default)]
    pub total: Option<usize>,
}

impl InterventionSpec {
    pub fn new(x: u32, seed: u64) -> Self {
        InterventionSpec { x, split_fractions: default_fractions(), seed, total: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=9).contains(&self.x) {
            return Err(Error::config("x", format!("{} not in [1, 9]", self.x)));
        }
        if self.split_fractions.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::config("split_fractions", "fractions must be positive"));
        }
        let s: f64 = self.split_fractions.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::config("split_fractions", format!("fractions sum to {s}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    /// UGC counts per topic.
    pub topic_counts: [usize; 2],
    /// Realized topic fractions.
    pub ratio: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub schema_version: u32,
    pub x: u32,
    pub seed: u64,
    pub split_fractions: [f64; 3],
    pub total_used: usize,
    pub train: SplitCounts,
    pub valid: SplitCounts,
    pub test: SplitCounts,
    pub parent_hash: String,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    pub manifest: SplitManifest,
}

fn counts_of(n: [usize; 2]) -> SplitCounts {
    let total = (n[0] + n[1]).max(1) as f64;
    SplitCounts { topic_counts: n, ratio: [n[0] as f64 / total, n[1] as f64 / total] }
}

fn subset(parent: &Dataset, kind: DatasetKind, ugc_ids: &[u32], spec: &InterventionSpec) -> Dataset {
    let mut keep = vec![false; parent.id_space.ugcs];
    for &id in ugc_ids {
        keep[id as usize] = true;
    }
    let ugcs: Vec<UgcRecord> = parent.ugcs.iter().filter(|c| keep[c.ugc_id as usize]).cloned().collect();
    let mut present = vec![false; parent.id_space.uploaders];
    for c in &ugcs {
        present[c.uploader_id as usize] = true;
    }
    Dataset {
        kind,
        uploaders: parent
            .uploaders
            .iter()
            .filter(|u| present[u.uploader_id as usize])
            .cloned()
            .collect(),
        triplets: parent.triplets.iter().filter(|t| keep[t.ugc_id as usize]).copied().collect(),
        ugcs,
        n_topics: parent.n_topics,
        feature_dim: parent.feature_dim,
        tag_count: parent.tag_count,
        id_space: parent.id_space,
        provenance: Some(serde_json::json!({ "split": kind, "intervention": spec })),
    }
}

/// Split a two-topic dataset into UGC-disjoint train/valid/test sets with
/// mirrored topic ratios. Uploader histograms are carried over unchanged
/// from the parent (population statistics).
pub fn intervened_split(dataset: &Dataset, spec: &InterventionSpec) -> Result<Splits> {
    spec.validate()?;
    if dataset.n_topics != 2 {
        return Err(Error::config(
            "n_topics",
            format!("intervened split needs exactly 2 topics, dataset has {}", dataset.n_topics),
        ));
    }
    let x = spec.x as f64 / 10.0;
    let [f_tr, f_va, f_te] = spec.split_fractions;
    // Share of the used UGCs demanded from each topic.
    let demand0 = f_tr * x + (f_va + f_te) * (1.0 - x);
    let demand1 = f_tr * (1.0 - x) + (f_va + f_te) * x;
    let have = dataset.topic_counts();
    let feasible = ((have[0] as f64 / demand0).min(have[1] as f64 / demand1)).floor() as usize;
    let total = match spec.total {
        Some(t) if t > feasible => {
            let need0 = (t as f64 * demand0).round() as usize;
            let need1 = (t as f64 * demand1).round() as usize;
            let msg = if need0 > have[0] {
                format!("topic 0 needs {} UGCs but has {} (deficit {})", need0, have[0], need0 - have[0])
            } else {
                format!("topic 1 needs {} UGCs but has {} (deficit {})", need1, have[1], need1.saturating_sub(have[1]))
            };
            return Err(Error::Insufficient(msg));
        }
        Some(t) => t,
        None => feasible.min(dataset.ugcs.len()),
    };

    let n = total as f64;
    let plan = |f: f64, share0: f64| -> [usize; 2] {
        [(n * f * share0).round() as usize, (n * f * (1.0 - share0)).round() as usize]
    };
    let mut want = [plan(f_tr, x), plan(f_va, 1.0 - x), plan(f_te, 1.0 - x)];
    // Rounding may overshoot supply by one; trim from the test split.
    for topic in 0..2 {
        let sum: usize = want.iter().map(|w| w[topic]).sum();
        if sum > have[topic] {
            let over = sum - have[topic];
            if want[2][topic] < over {
                return Err(Error::Insufficient(format!(
                    "topic {} needs {} UGCs but has {} (deficit {})",
                    topic, sum, have[topic], over
                )));
            }
            want[2][topic] -= over;
        }
    }
    for (name, w) in ["train", "valid", "test"].iter().zip(&want) {
        if w[0] + w[1] == 0 {
            return Err(Error::Insufficient(format!("{name} split would be empty")));
        }
    }

    let mut rng = seed::rng(spec.seed, "split", &[spec.x as u64]);
    let mut by_topic: [Vec<u32>; 2] = [Vec::new(), Vec::new()];
    for c in &dataset.ugcs {
        by_topic[c.topic as usize].push(c.ugc_id);
    }
    let mut parts: [Vec<u32>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for topic in 0..2 {
        let ids = &mut by_topic[topic];
        ids.shuffle(&mut rng);
        let mut offset = 0;
        for (s, part) in parts.iter_mut().enumerate() {
            part.extend_from_slice(&ids[offset..offset + want[s][topic]]);
            offset += want[s][topic];
        }
    }

    let manifest = SplitManifest {
        schema_version: 1,
        x: spec.x,
        seed: spec.seed,
        split_fractions: spec.split_fractions,
        total_used: want.iter().map(|w| w[0] + w[1]).sum(),
        train: counts_of(want[0]),
        valid: counts_of(want[1]),
        test: counts_of(want[2]),
        parent_hash: dataset.content_hash()?,
    };
    Ok(Splits {
        train: subset(dataset, DatasetKind::Train, &parts[0], spec),
        valid: subset(dataset, DatasetKind::Valid, &parts[1], spec),
        test: subset(dataset, DatasetKind::Test, &parts[2], spec),
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_infeasible_tag_count() {
        let mut c = GenConfig::small(10, 3, 1.0, 1);
        c.tags_per_ugc = [2, 4];
        let err = generate(&c).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "tags_per_ugc[1]"));
    }

    #[test]
    fn rejects_single_ugc_uploaders() {
        let mut c = GenConfig::small(10, 20, 1.0, 1);
        c.ugc_per_uploader = [1, 3];
        assert!(generate(&c).is_err());
    }

    #[test]
    fn generated_dataset_is_valid_and_deterministic() {
        let c = GenConfig::small(40, 30, 2.0, 9);
        let a = generate(&c).unwrap();
        let b = generate(&c).unwrap();
        a.validate().unwrap();
        assert_eq!(a.serialize_files().unwrap(), b.serialize_files().unwrap());
        assert_eq!(a.uploaders.len(), 40);
        assert_eq!(a.ugcs.len(), 200);
        let c2 = GenConfig { seed: 10, ..c };
        assert_ne!(a.content_hash().unwrap(), generate(&c2).unwrap().content_hash().unwrap());
    }

    #[test]
    fn filters_keep_invariants() {
        let mut c = GenConfig::small(60, 40, 2.0, 3);
        c.ugc_per_uploader = [2, 7];
        c.filters = Filters { min_tag_usage: Some(10), min_uploader_ugcs: Some(4) };
        let d = generate(&c).unwrap();
        d.validate().unwrap();
        let mut usage = vec![0; d.tag_count];
        for t in &d.triplets {
            usage[t.tag_id as usize] += 1;
        }
        assert!(d.tag_count < 40);
        // Uploader removal can push a tag below the threshold afterwards;
        // the order of filtering matches the collection pipeline.
        assert!(d.uploaders.len() < 60);
    }

    #[test]
    fn split_rejects_bad_x_and_fractions() {
        let d = generate(&GenConfig::small(50, 20, 1.0, 2)).unwrap();
        assert!(intervened_split(&d, &InterventionSpec::new(10, 1)).is_err());
        assert!(intervened_split(&d, &InterventionSpec::new(0, 1)).is_err());
        let mut s = InterventionSpec::new(3, 1);
        s.split_fractions = [0.5, 0.2, 0.2];
        assert!(intervened_split(&d, &s).is_err());
    }

    #[test]
    fn split_reports_deficit() {
        let d = generate(&GenConfig::small(50, 20, 1.0, 2)).unwrap();
        let mut s = InterventionSpec::new(1, 1);
        s.total = Some(d.ugcs.len() + 50);
        let err = intervened_split(&d, &s).unwrap_err();
        assert!(err.to_string().contains("deficit"), "{err}");
    }
}
