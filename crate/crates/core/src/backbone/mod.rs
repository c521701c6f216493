//! Tag scorers.
//!
//! Every backbone factorizes the tag score for a UGC `c` and an uploader `u`
//! into an unnormalized content score `s(t, c)` and an uploader gate
//! `g(t, u)` in (0, 1); the joint score is their product. The uploader is
//! represented by `u = W_t · hist`, a mix of trainable topic embeddings
//! weighted by the uploader's topic histogram.

pub mod lightgcn;
pub mod nfm;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, init_values, Init};
use crate::params::{Grads, ParamId, ParamStore};

pub use lightgcn::{BipartiteGraph, LightGcn};
pub use nfm::Nfm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Nfm,
    #[serde(alias = "light_gcn")]
    Lightgcn,
}

impl BackboneKind {
    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::Nfm => "nfm",
            BackboneKind::Lightgcn => "lightgcn",
        }
    }
}

impl std::fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nfm" => Ok(BackboneKind::Nfm),
            "lightgcn" | "light_gcn" => Ok(BackboneKind::Lightgcn),
            other => Err(Error::config("backbone", format!("unknown backbone {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    pub embed_dim: usize,
    /// Propagation depth (LightGCN only).
    pub n_layers: usize,
    pub feature_dim: usize,
    pub tag_count: usize,
    pub n_topics: usize,
    pub init_seed: u64,
}

/// The product-of-experts score for one (UGC, uploader, tag).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub content: f64,
    pub gate: f64,
    pub joint: f64,
}

pub fn joint_score(content: f64, gate: f64) -> Score {
    Score { content, gate, joint: content * gate }
}

/// Topic embedding matrix `W_t`, shape `K x n_topics`, row-major.
#[derive(Debug, Clone, Copy)]
pub struct TopicTable {
    pub w: ParamId,
    pub embed_dim: usize,
    pub n_topics: usize,
}

impl TopicTable {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, embed_dim: usize, n_topics: usize) -> Self {
        let a = 1.0 / (embed_dim as f64).sqrt();
        let w = store.add(
            format!("{name}.topic_table"),
            vec![embed_dim, n_topics],
            init_values(rng, embed_dim * n_topics, n_topics, Init::Uniform(a)),
        );
        TopicTable { w, embed_dim, n_topics }
    }

    pub fn repr(&self, store: &ParamStore, histogram: &[f64]) -> Result<Vec<f64>> {
        uploader_repr(store.get(self.w), self.embed_dim, self.n_topics, histogram)
    }

    /// `dW_t += du ⊗ hist`.
    pub fn backward(&self, histogram: &[f64], du: &[f64], grads: &mut Grads) {
        nn::outer_acc(grads.get_mut(self.w), du, histogram);
    }
}

/// `u = W_t · hist` for a row-major `embed_dim x n_topics` table.
pub fn uploader_repr(table: &[f64], embed_dim: usize, n_topics: usize, histogram: &[f64]) -> Result<Vec<f64>> {
    if histogram.len() != n_topics || table.len() != embed_dim * n_topics {
        return Err(Error::Shape(format!(
            "histogram of length {} against a {}x{} topic table",
            histogram.len(),
            embed_dim,
            n_topics
        )));
    }
    let mut u = vec![0.0; embed_dim];
    nn::matvec(table, n_topics, histogram, &mut u);
    Ok(u)
}

/// Forward and backward primitives a backbone provides to the estimators
/// and the trainer.
///
/// `Ctx` holds everything that depends only on the parameters (tag towers,
/// propagated graph layers); it is rebuilt after every parameter update.
pub trait Backbone {
    type Ctx;
    /// Gradient accumulators for `Ctx` intermediates.
    type Acc;
    /// Per-uploader-representation state, including its gradient buffers.
    type Input;
    /// Whatever a content forward pass must keep for its backward pass.
    type Trace;

    fn topics(&self) -> &TopicTable;
    fn tag_count(&self) -> usize;
    fn feature_dim(&self) -> usize;

    fn context(&self, store: &ParamStore) -> Self::Ctx;
    fn new_acc(&self) -> Self::Acc;

    fn content_forward(
        &self,
        store: &ParamStore,
        ctx: &Self::Ctx,
        features: &[f64],
        tags: &[u32],
        scores: &mut [f64],
    ) -> Self::Trace;

    #[allow(clippy::too_many_arguments)]
    fn content_backward(
        &self,
        store: &ParamStore,
        ctx: &Self::Ctx,
        features: &[f64],
        tags: &[u32],
        trace: Self::Trace,
        dscores: &[f64],
        acc: &mut Self::Acc,
        grads: &mut Grads,
    );

    fn gate_input(&self, store: &ParamStore, ctx: &Self::Ctx, u: &[f64]) -> Self::Input;

    /// Pre-activation of the uploader gate.
    fn gate_logit(&self, store: &ParamStore, ctx: &Self::Ctx, input: &Self::Input, tag: u32) -> f64;

    #[allow(clippy::too_many_arguments)]
    fn gate_backward(
        &self,
        store: &ParamStore,
        ctx: &Self::Ctx,
        input: &mut Self::Input,
        tag: u32,
        dlogit: f64,
        acc: &mut Self::Acc,
        grads: &mut Grads,
    );

    /// Gradient with respect to the uploader representation `u`.
    fn gate_input_backward(&self, store: &ParamStore, ctx: &Self::Ctx, input: &Self::Input, grads: &mut Grads) -> Vec<f64>;

    fn finish_backward(&self, store: &ParamStore, ctx: &Self::Ctx, acc: Self::Acc, grads: &mut Grads);
}

/// A backbone bound to parameter values with its context precomputed.
pub struct Scorer<'a, B: Backbone> {
    pub model: &'a B,
    pub store: &'a ParamStore,
    pub ctx: B::Ctx,
}

impl<'a, B: Backbone> Scorer<'a, B> {
    pub fn new(model: &'a B, store: &'a ParamStore) -> Self {
        let ctx = model.context(store);
        Scorer { model, store, ctx }
    }

    pub fn content_scores(&self, features: &[f64], tags: &[u32]) -> Vec<f64> {
        let mut out = vec![0.0; tags.len()];
        self.model.content_forward(self.store, &self.ctx, features, tags, &mut out);
        out
    }

    pub fn all_tags(&self) -> Vec<u32> {
        (0..self.model.tag_count() as u32).collect()
    }

    pub fn repr(&self, histogram: &[f64]) -> Result<Vec<f64>> {
        self.model.topics().repr(self.store, histogram)
    }

    /// Gate values `σ(logit)` for each tag given a representation `u`.
    pub fn gates(&self, u: &[f64], tags: &[u32]) -> Vec<f64> {
        let input = self.model.gate_input(self.store, &self.ctx, u);
        tags.iter()
            .map(|&t| nn::sigmoid(self.model.gate_logit(self.store, &self.ctx, &input, t)))
            .collect()
    }

    pub fn score(&self, features: &[f64], u: &[f64], tag: u32) -> Score {
        let s = self.content_scores(features, &[tag])[0];
        let g = self.gates(u, &[tag])[0];
        joint_score(s, g)
    }
}

/// Concrete backbone selected at run time.
#[derive(Debug, Clone)]
pub enum Model {
    Nfm(Nfm),
    Lightgcn(LightGcn),
}

/// Run `$body` with `$b` bound to the concrete backbone inside a [`Model`].
#[macro_export]
macro_rules! with_backbone {
    ($model:expr, $b:ident => $body:expr) => {
        match $model {
            $crate::backbone::Model::Nfm($b) => $body,
            $crate::backbone::Model::Lightgcn($b) => $body,
        }
    };
}

impl Model {
    /// Build a freshly initialized model. LightGCN needs the training graph.
    pub fn new(config: &ModelConfig, graph: Option<BipartiteGraph>, store: &mut ParamStore) -> Result<Self> {
        if config.embed_dim == 0 || config.tag_count == 0 || config.feature_dim == 0 || config.n_topics == 0 {
            return Err(Error::config("model", "embed_dim, tag_count, feature_dim and n_topics must be >= 1"));
        }
        let mut rng = crate::seed::rng(config.init_seed, "init", &[]);
        Ok(match config.backbone {
            BackboneKind::Nfm => Model::Nfm(Nfm::new(
                store,
                &mut rng,
                config.feature_dim,
                config.embed_dim,
                config.tag_count,
                config.n_topics,
            )),
            BackboneKind::Lightgcn => {
                let graph = graph.ok_or_else(|| Error::config("backbone", "lightgcn requires a training graph"))?;
                if graph.tag_count() != config.tag_count || graph.feature_dim() != config.feature_dim {
                    return Err(Error::Shape("graph dimensions disagree with model config".into()));
                }
                Model::Lightgcn(LightGcn::new(
                    store,
                    &mut rng,
                    graph,
                    config.embed_dim,
                    config.n_layers,
                    config.n_topics,
                ))
            }
        })
    }

    pub fn kind(&self) -> BackboneKind {
        match self {
            Model::Nfm(_) => BackboneKind::Nfm,
            Model::Lightgcn(_) => BackboneKind::Lightgcn,
        }
    }

    pub fn graph(&self) -> Option<&BipartiteGraph> {
        match self {
            Model::Nfm(_) => None,
            Model::Lightgcn(m) => Some(m.graph()),
        }
    }
}
