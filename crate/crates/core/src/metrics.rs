//! Ranking metrics and test-set evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneKind, Model, Scorer};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{Predictor, Strategy, UploaderPool};
use crate::params::ParamStore;
use crate::seed;
use crate::with_backbone;

pub const METRICS_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction {
    pub ugc_id: u32,
    pub ranked_tags: Vec<u32>,
    pub relevant_tags: Vec<u32>,
}

fn hits<'a>(ranked: &'a [u32], relevant: &'a [u32], k_cut: usize) -> Result<impl Iterator<Item = bool> + 'a> {
    if relevant.is_empty() {
        return Err(Error::Empty("relevant tag set is empty".into()));
    }
    if k_cut == 0 {
        return Err(Error::config("k", "cutoff must be >= 1"));
    }
    Ok(ranked.iter().take(k_cut).map(move |t| relevant.contains(t)))
}

/// Hits in the top `k_cut` divided by `min(k_cut, |relevant|)`.
pub fn recall_at_k(ranked: &[u32], relevant: &[u32], k_cut: usize) -> Result<f64> {
    let n = hits(ranked, relevant, k_cut)?.filter(|&h| h).count();
    Ok(n as f64 / k_cut.min(relevant.len()) as f64)
}

/// DCG with a `log2(r + 1)` discount, normalized by the DCG of
/// `min(k_cut, |relevant|)` hits at the top.
pub fn ndcg_at_k(ranked: &[u32], relevant: &[u32], k_cut: usize) -> Result<f64> {
    let dcg: f64 = hits(ranked, relevant, k_cut)?
        .enumerate()
        .filter(|&(_, h)| h)
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..k_cut.min(relevant.len())).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    Ok(dcg / ideal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UgcMetrics {
    pub ugc_id: u32,
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub strategy: Strategy,
    pub backbone: BackboneKind,
    pub x: Option<u32>,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub schema_version: u32,
    pub meta: Option<RunMeta>,
    pub n_ugcs: usize,
    pub recall_at: BTreeMap<usize, f64>,
    pub ndcg_at: BTreeMap<usize, f64>,
    pub per_ugc: Vec<UgcMetrics>,
}

impl Metrics {
    pub fn ndcg(&self, k: usize) -> Option<f64> {
        self.ndcg_at.get(&k).copied()
    }

    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recall_at.get(&k).copied()
    }
}

/// Per-UGC metrics and their means, in prediction order.
pub fn score_predictions(preds: &[RankedPrediction], cutoffs: &[usize]) -> Result<Metrics> {
    if preds.is_empty() {
        return Err(Error::Empty("nothing to evaluate".into()));
    }
    let mut per_ugc = Vec::with_capacity(preds.len());
    for p in preds {
        let mut recall = BTreeMap::new();
        let mut ndcg = BTreeMap::new();
        for &k in cutoffs {
            recall.insert(k, recall_at_k(&p.ranked_tags, &p.relevant_tags, k)?);
            ndcg.insert(k, ndcg_at_k(&p.ranked_tags, &p.relevant_tags, k)?);
        }
        per_ugc.push(UgcMetrics { ugc_id: p.ugc_id, recall, ndcg });
    }
    let n = per_ugc.len() as f64;
    let mean = |f: &dyn Fn(&UgcMetrics) -> &BTreeMap<usize, f64>| -> BTreeMap<usize, f64> {
        cutoffs.iter().map(|&k| (k, per_ugc.iter().map(|m| f(m)[&k]).sum::<f64>() / n)).collect()
    };
    let recall_at = mean(&|m| &m.recall);
    let ndcg_at = mean(&|m| &m.ndcg);
    Ok(Metrics { schema_version: METRICS_SCHEMA, meta: None, n_ugcs: per_ugc.len(), recall_at, ndcg_at, per_ugc })
}

/// Evaluation settings shared by validation and test runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSpec {
    pub strategy: Strategy,
    pub n_samples: usize,
    pub cutoffs: Vec<usize>,
    pub seed: u64,
}

/// Rank every tag for each test UGC with at least one ground-truth tag.
/// The uploader of a test UGC is never consulted; each UGC draws its
/// uploaders from its own stream so results do not depend on order.
pub fn evaluate_backbone<B: Backbone>(
    model: &B,
    store: &ParamStore,
    test: &Dataset,
    pool: &UploaderPool,
    spec: &EvalSpec,
) -> Result<Metrics> {
    if test.tag_count != model.tag_count() || test.feature_dim != model.feature_dim() {
        return Err(Error::Shape(format!(
            "test set has {} tags / dim {}, model expects {} / {}",
            test.tag_count,
            test.feature_dim,
            model.tag_count(),
            model.feature_dim()
        )));
    }
    let kmax = spec.cutoffs.iter().copied().max().ok_or_else(|| Error::config("k", "no cutoffs"))?;
    if kmax > model.tag_count() {
        return Err(Error::config("k", format!("cutoff {kmax} exceeds tag count {}", model.tag_count())));
    }
    let mut predictor = Predictor::new(Scorer::new(model, store), pool, spec.strategy, spec.n_samples)?;
    let mut preds = Vec::new();
    for (ugc, tags) in test.ugcs.iter().zip(test.tags_by_ugc()) {
        if tags.is_empty() {
            continue;
        }
        let mut rng = seed::rng(spec.seed, "eval", &[ugc.ugc_id as u64]);
        let ranked = predictor.predict_topk(&ugc.features, kmax, &mut rng)?;
        preds.push(RankedPrediction { ugc_id: ugc.ugc_id, ranked_tags: ranked, relevant_tags: tags });
    }
    score_predictions(&preds, &spec.cutoffs)
}

pub fn evaluate(model: &Model, store: &ParamStore, test: &Dataset, pool: &UploaderPool, spec: &EvalSpec) -> Result<Metrics> {
    with_backbone!(model, m => evaluate_backbone(m, store, test, pool, spec))
}
