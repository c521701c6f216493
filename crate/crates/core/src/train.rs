//! Two-phase training: a burn-in on the observed uploaders, then the
//! strategy-specific adjustment phase with validation-based early stopping.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneKind, BipartiteGraph, Model, ModelConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{Strategy, UploaderPool};
use crate::metrics::{evaluate, EvalSpec};
use crate::objective::{batch_loss, Planner};
use crate::params::{OptimConfig, ParamStore, Tensor};
use crate::seed;
use crate::with_backbone;

pub const RUN_SCHEMA: u32 = 1;

fn d_embed() -> usize {
    32
}
fn d_layers() -> usize {
    2
}
fn d_warm() -> usize {
    5
}
fn d_ns() -> usize {
    1
}
fn d_neg() -> usize {
    50
}
fn d_strategy() -> Strategy {
    Strategy::DectagMc
}
fn d_backbone() -> BackboneKind {
    BackboneKind::Nfm
}
fn d_patience() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_backbone")]
    pub backbone: BackboneKind,
    #[serde(default = "d_embed")]
    pub embed_dim: usize,
    #[serde(default = "d_layers")]
    pub n_layers: usize,
    /// Defaults to 1024 (NFM) or 4096 (LightGCN).
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "d_warm")]
    pub n_warm: usize,
    /// Defaults to 200 (NFM) or 400 (LightGCN).
    #[serde(default)]
    pub max_epochs: Option<usize>,
    #[serde(default = "d_ns")]
    pub n_samples: usize,
    #[serde(default = "d_neg")]
    pub negatives_per_positive: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub optimizer: OptimConfig,
    /// Validation evaluations without improvement before stopping.
    #[serde(default = "d_patience")]
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(match self.backbone {
            BackboneKind::Nfm => 1024,
            BackboneKind::Lightgcn => 4096,
        })
    }

    pub fn max_epochs(&self) -> usize {
        self.max_epochs.unwrap_or(match self.backbone {
            BackboneKind::Nfm => 200,
            BackboneKind::Lightgcn => 400,
        })
    }

    /// Copy with backbone-dependent defaults filled in.
    pub fn resolved(&self) -> Self {
        TrainConfig { batch_size: Some(self.batch_size()), max_epochs: Some(self.max_epochs()), ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::config("embed_dim", "must be >= 1"));
        }
        if self.batch_size() == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.n_samples == 0 {
            return Err(Error::config("n_samples", "must be >= 1"));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::config("negatives_per_positive", "must be >= 1"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience", "must be >= 1"));
        }
        self.optimizer.validate()
    }

    pub fn model_config(&self, train: &Dataset) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone,
            embed_dim: self.embed_dim,
            n_layers: self.n_layers,
            feature_dim: train.feature_dim,
            tag_count: train.tag_count,
            n_topics: train.n_topics,
            init_seed: seed::derive(self.seed, "init", &[]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    BurnIn,
    Adjust,
}

impl Phase {
    fn code(self) -> u64 {
        match self {
            Phase::BurnIn => 0,
            Phase::Adjust => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub phase: Phase,
    /// 1-based within the phase.
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_ndcg10: Option<f64>,
}

/// A freshly initialized model for a training split.
pub fn init_model(train: &Dataset, cfg: &TrainConfig) -> Result<(Model, ModelConfig, ParamStore)> {
    cfg.validate()?;
    let mc = cfg.model_config(train);
    let graph = match cfg.backbone {
        BackboneKind::Lightgcn => Some(BipartiteGraph::from_dataset(train)?),
        BackboneKind::Nfm => None,
    };
    let mut store = ParamStore::new();
    let model = Model::new(&mc, graph, &mut store)?;
    Ok((model, mc, store))
}

fn run_epoch<B: Backbone>(
    model: &B,
    store: &mut ParamStore,
    planner: &Planner<'_>,
    cfg: &TrainConfig,
    phase: Phase,
    epoch: usize,
) -> Result<EpochLog> {
    let ds = planner.dataset();
    let mut order: Vec<usize> = (0..ds.triplets.len()).collect();
    order.shuffle(&mut seed::rng(cfg.seed, "order", &[phase.code(), epoch as u64]));
    let mut total = 0.0;
    let mut count = 0usize;
    let mut steps = 0usize;
    for chunk in order.chunks(cfg.batch_size()) {
        let plan = planner.plan(chunk, |ti| seed::rng(cfg.seed, "triplet", &[phase.code(), epoch as u64, ti as u64]))?;
        if plan.triplets.is_empty() {
            continue;
        }
        let loss = store.backward(|s, g| batch_loss(model, s, ds, &plan, Some(g)))?;
        store.adam_step(&cfg.optimizer)?;
        total += loss * plan.triplets.len() as f64;
        count += plan.triplets.len();
        steps += 1;
    }
    if count == 0 {
        return Err(Error::Empty("no trainable triplets".into()));
    }
    Ok(EpochLog { phase, epoch, mean_loss: total / count as f64, steps, valid_ndcg10: None })
}

/// `n_warm` epochs fitting the conditional on the observed uploaders.
pub fn burn_in(model: &Model, store: &mut ParamStore, train: &Dataset, pool: &UploaderPool, cfg: &TrainConfig) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    let planner = Planner::new(train, pool, Strategy::None, cfg.negatives_per_positive, cfg.n_samples)?;
    let mut logs = Vec::with_capacity(cfg.n_warm);
    for e in 1..=cfg.n_warm {
        let log = with_backbone!(model, m => run_epoch(m, store, &planner, cfg, Phase::BurnIn, e))?;
        log::debug!("burn-in epoch {e}: loss {:.5}", log.mean_loss);
        logs.push(log);
    }
    Ok(logs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
}

#[derive(Debug, Clone)]
pub struct AdjustOutcome {
    pub logs: Vec<EpochLog>,
    /// Adjustment epoch with the best validation N@10 (0 = the burn-in model).
    pub best_epoch: usize,
    pub best_valid_ndcg10: Option<f64>,
    /// Parameters at `best_epoch`.
    pub best: Vec<Tensor>,
    pub stop: StopReason,
}

/// Validation settings used during training.
pub fn validation_spec(cfg: &TrainConfig) -> EvalSpec {
    EvalSpec {
        strategy: cfg.strategy,
        n_samples: cfg.n_samples,
        cutoffs: vec![10],
        seed: seed::derive(cfg.seed, "valid", &[]),
    }
}

/// Adjustment phase under `cfg.strategy`. With a validation split, N@10 is
/// measured after every epoch and training stops after `patience`
/// evaluations without improvement.
pub fn backdoor_adjust_train(
    model: &Model,
    store: &mut ParamStore,
    train: &Dataset,
    valid: Option<&Dataset>,
    pool: &UploaderPool,
    cfg: &TrainConfig,
) -> Result<AdjustOutcome> {
    cfg.validate()?;
    let planner = Planner::new(train, pool, cfg.strategy, cfg.negatives_per_positive, cfg.n_samples)?;
    let vspec = validation_spec(cfg);
    let kmax = model_tag_count(model);
    let valid = valid.filter(|_| kmax >= 10);
    let mut best = store.tensors().to_vec();
    let mut best_epoch = 0;
    let mut best_score = match valid {
        Some(v) => Some(evaluate(model, store, v, pool, &vspec)?.ndcg(10).unwrap_or(0.0)),
        None => None,
    };
    let mut bad = 0;
    let mut logs = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    for e in 1..=cfg.max_epochs() {
        let mut log = with_backbone!(model, m => run_epoch(m, store, &planner, cfg, Phase::Adjust, e))?;
        match (valid, best_score) {
            (Some(v), Some(b)) => {
                let s = evaluate(model, store, v, pool, &vspec)?.ndcg(10).unwrap_or(0.0);
                log.valid_ndcg10 = Some(s);
                if s > b {
                    best_score = Some(s);
                    best_epoch = e;
                    best = store.tensors().to_vec();
                    bad = 0;
                } else {
                    bad += 1;
                }
            }
            _ => {
                best_epoch = e;
                best = store.tensors().to_vec();
            }
        }
        log::debug!("adjust epoch {e}: loss {:.5} valid {:?}", log.mean_loss, log.valid_ndcg10);
        logs.push(log);
        if bad >= cfg.patience {
            stop = StopReason::EarlyStop;
            break;
        }
    }
    Ok(AdjustOutcome { logs, best_epoch, best_valid_ndcg10: best_score, best, stop })
}

fn model_tag_count(model: &Model) -> usize {
    with_backbone!(model, m => m.tag_count())
}

/// Deterministic record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub strategy: Strategy,
    pub backbone: BackboneKind,
    pub config: TrainConfig,
    pub model: ModelConfig,
    pub train_hash: String,
    #[serde(default)]
    pub valid_hash: Option<String>,
    pub n_train_triplets: usize,
    pub epochs: Vec<EpochLog>,
    /// Adjustment epochs actually run.
    pub final_epoch: usize,
    pub best_epoch: usize,
    #[serde(default)]
    pub best_valid_ndcg10: Option<f64>,
    pub stop_reason: StopReason,
}

pub struct TrainOutcome {
    pub model: Model,
    pub model_config: ModelConfig,
    /// Parameters at the best validation epoch (the final ones without validation).
    pub best: ParamStore,
    pub last: ParamStore,
    pub pool: UploaderPool,
    pub manifest: RunManifest,
}

/// Burn-in followed by the adjustment phase.
pub fn fit(train: &Dataset, valid: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train.validate()?;
    if let Some(v) = valid {
        v.validate()?;
        if v.tag_count != train.tag_count || v.feature_dim != train.feature_dim || v.n_topics != train.n_topics {
            return Err(Error::Shape("validation split dimensions differ from training split".into()));
        }
    }
    let pool = UploaderPool::from_dataset(train)?;
    let (model, model_config, mut store) = init_model(train, cfg)?;
    let mut epochs = burn_in(&model, &mut store, train, &pool, cfg)?;
    let adj = backdoor_adjust_train(&model, &mut store, train, valid, &pool, cfg)?;
    let final_epoch = adj.logs.len();
    epochs.extend(adj.logs);
    let mut best = store.clone();
    best.load_values(&adj.best)?;
    let manifest = RunManifest {
        schema_version: RUN_SCHEMA,
        strategy: cfg.strategy,
        backbone: cfg.backbone,
        config: cfg.resolved(),
        model: model_config.clone(),
        train_hash: train.content_hash()?,
        valid_hash: valid.map(Dataset::content_hash).transpose()?,
        n_train_triplets: train.triplets.len(),
        epochs,
        final_epoch,
        best_epoch: adj.best_epoch,
        best_valid_ndcg10: adj.best_valid_ndcg10,
        stop_reason: adj.stop,
    };
    Ok(TrainOutcome { model, model_config, best, last: store, pool, manifest })
}
