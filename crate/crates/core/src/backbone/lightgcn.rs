//! Graph-propagation scorer over the tag–UGC bipartite graph.
//!
//! Layer 0 of a tag is its free embedding and layer 0 of a UGC is its
//! projected content vector `W_p c`. Each layer moves embeddings across edges
//! with the symmetric `1/sqrt(|N_t| |N_c|)` weights. A tag's final
//! representation is the mean over layers 0..=L; content scores are inner
//! products with `W_p c`, so unseen UGCs are scored through the projection
//! alone. The uploader gate is `σ(<u, t^(1)>)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Backbone, TopicTable};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, init_values, Init, Linear};
use crate::params::{Grads, ParamId, ParamStore};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphData {
    tag_count: usize,
    feature_dim: usize,
    ugc_ids: Vec<u32>,
    ugc_features: Vec<Vec<f64>>,
    /// `(tag, ugc row)` pairs.
    edges: Vec<(u32, u32)>,
}

/// Normalized bipartite adjacency with the content features of its UGC nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "GraphData", try_from = "GraphData")]
pub struct BipartiteGraph {
    data: GraphData,
    tag_ptr: Vec<usize>,
    tag_adj: Vec<(usize, f64)>,
    ugc_ptr: Vec<usize>,
    ugc_adj: Vec<(usize, f64)>,
}

impl From<BipartiteGraph> for GraphData {
    fn from(g: BipartiteGraph) -> Self {
        g.data
    }
}

impl TryFrom<GraphData> for BipartiteGraph {
    type Error = Error;
    fn try_from(d: GraphData) -> Result<Self> {
        BipartiteGraph::build(d)
    }
}

fn csr(n: usize, pairs: impl Iterator<Item = (usize, usize, f64)> + Clone) -> (Vec<usize>, Vec<(usize, f64)>) {
    let mut ptr = vec![0usize; n + 1];
    for (a, _, _) in pairs.clone() {
        ptr[a + 1] += 1;
    }
    for i in 0..n {
        ptr[i + 1] += ptr[i];
    }
    let mut fill = ptr.clone();
    let mut adj = vec![(0, 0.0); ptr[n]];
    for (a, b, w) in pairs {
        adj[fill[a]] = (b, w);
        fill[a] += 1;
    }
    (ptr, adj)
}

impl BipartiteGraph {
    /// `features[j]` is the content vector of UGC row `j`; edges are `(tag, row)`.
    pub fn new(tag_count: usize, ugc_ids: Vec<u32>, features: Vec<Vec<f64>>, edges: Vec<(u32, u32)>) -> Result<Self> {
        let feature_dim = features.first().map_or(0, Vec::len);
        Self::build(GraphData { tag_count, feature_dim, ugc_ids, ugc_features: features, edges })
    }

    /// Graph over the triplets of a (training) dataset.
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let mut edges = Vec::with_capacity(ds.triplets.len());
        for tr in &ds.triplets {
            let row = ds
                .ugc_position(tr.ugc_id)
                .ok_or_else(|| Error::Invariant(format!("triplet references unknown UGC {}", tr.ugc_id)))?;
            edges.push((tr.tag_id, row as u32));
        }
        edges.sort_unstable();
        edges.dedup();
        Self::build(GraphData {
            tag_count: ds.tag_count,
            feature_dim: ds.feature_dim,
            ugc_ids: ds.ugcs.iter().map(|u| u.ugc_id).collect(),
            ugc_features: ds.ugcs.iter().map(|u| u.features.clone()).collect(),
            edges,
        })
    }

    fn build(data: GraphData) -> Result<Self> {
        let n_ugc = data.ugc_features.len();
        if data.ugc_ids.len() != n_ugc {
            return Err(Error::Shape("graph ugc_ids and ugc_features differ in length".into()));
        }
        if data.ugc_features.iter().any(|f| f.len() != data.feature_dim) {
            return Err(Error::Shape("graph UGC features have inconsistent dimension".into()));
        }
        let mut tag_deg = vec![0usize; data.tag_count];
        let mut ugc_deg = vec![0usize; n_ugc];
        for &(t, c) in &data.edges {
            let (t, c) = (t as usize, c as usize);
            if t >= data.tag_count || c >= n_ugc {
                return Err(Error::Invariant(format!("graph edge ({t}, {c}) out of range")));
            }
            tag_deg[t] += 1;
            ugc_deg[c] += 1;
        }
        let norm = |t: usize, c: usize| 1.0 / ((tag_deg[t] * ugc_deg[c]) as f64).sqrt();
        let it = data.edges.iter().map(|&(t, c)| (t as usize, c as usize));
        let (tag_ptr, tag_adj) = csr(data.tag_count, it.clone().map(|(t, c)| (t, c, norm(t, c))));
        let (ugc_ptr, ugc_adj) = csr(n_ugc, it.map(|(t, c)| (c, t, norm(t, c))));
        Ok(BipartiteGraph { data, tag_ptr, tag_adj, ugc_ptr, ugc_adj })
    }

    pub fn tag_count(&self) -> usize {
        self.data.tag_count
    }

    pub fn ugc_count(&self) -> usize {
        self.data.ugc_features.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.data.feature_dim
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.data.edges
    }

    pub fn ugc_ids(&self) -> &[u32] {
        &self.data.ugc_ids
    }

    pub fn features(&self, row: usize) -> &[f64] {
        &self.data.ugc_features[row]
    }

    /// Neighbours of a tag with their normalization coefficients.
    pub fn tag_neighbors(&self, t: usize) -> &[(usize, f64)] {
        &self.tag_adj[self.tag_ptr[t]..self.tag_ptr[t + 1]]
    }

    pub fn ugc_neighbors(&self, c: usize) -> &[(usize, f64)] {
        &self.ugc_adj[self.ugc_ptr[c]..self.ugc_ptr[c + 1]]
    }

    /// `out[a] += Σ_b w_ab · src[b]` over one side's adjacency.
    fn spread(ptr: &[usize], adj: &[(usize, f64)], src: &[f64], out: &mut [f64], k: usize) {
        for (a, row) in out.chunks_exact_mut(k).enumerate() {
            for &(b, w) in &adj[ptr[a]..ptr[a + 1]] {
                nn::axpy(w, &src[b * k..(b + 1) * k], row);
            }
        }
    }

    /// One propagation step; isolated nodes receive the zero vector.
    pub fn propagate(&self, tags: &[f64], ugcs: &[f64], k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if tags.len() != self.tag_count() * k || ugcs.len() != self.ugc_count() * k {
            return Err(Error::Shape("layer embeddings do not match the graph".into()));
        }
        let mut t_next = vec![0.0; tags.len()];
        let mut c_next = vec![0.0; ugcs.len()];
        Self::spread(&self.tag_ptr, &self.tag_adj, ugcs, &mut t_next, k);
        Self::spread(&self.ugc_ptr, &self.ugc_adj, tags, &mut c_next, k);
        Ok((t_next, c_next))
    }
}

#[derive(Debug, Clone)]
pub struct LightGcn {
    graph: BipartiteGraph,
    pub tag_emb: ParamId,
    pub proj: Linear,
    pub topics: TopicTable,
    n_layers: usize,
    k: usize,
}

pub struct GcnCtx {
    /// Projected features of the graph's UGC nodes.
    c0: Vec<f64>,
    /// Tag embeddings at each layer 0..=L.
    t_layers: Vec<Vec<f64>>,
    t_final: Vec<f64>,
}

pub struct GcnAcc {
    d_final: Vec<f64>,
    d_t1: Vec<f64>,
}

pub struct GcnTrace {
    xp: Vec<f64>,
}

pub struct GateInput {
    u: Vec<f64>,
    du: Vec<f64>,
}

impl LightGcn {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        graph: BipartiteGraph,
        k: usize,
        n_layers: usize,
        n_topics: usize,
    ) -> Self {
        let t = graph.tag_count();
        let a = 1.0 / (k as f64).sqrt();
        let tag_emb = store.add("lightgcn.tag_emb", vec![t, k], init_values(rng, t * k, k, Init::Uniform(a)));
        let proj = Linear::new(store, rng, "lightgcn.proj", graph.feature_dim(), k, false, Init::Kaiming);
        let topics = TopicTable::new(store, rng, "lightgcn", k, n_topics);
        LightGcn { graph, tag_emb, proj, topics, n_layers, k }
    }

    pub fn graph(&self) -> &BipartiteGraph {
        &self.graph
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn embed_dim(&self) -> usize {
        self.k
    }

    /// Layer used by the uploader gate: the first propagated layer, or layer 0
    /// when the model has no propagation.
    fn gate_layer(&self) -> usize {
        self.n_layers.min(1)
    }

    fn check(&self, tag: u32, v: &[f64], dim: usize) -> Result<()> {
        if tag as usize >= self.graph.tag_count() {
            return Err(Error::Shape(format!("tag {tag} out of range")));
        }
        if v.len() != dim {
            return Err(Error::Shape(format!("vector of dim {} (expected {dim})", v.len())));
        }
        Ok(())
    }

    pub fn content_score(&self, store: &ParamStore, features: &[f64], tag: u32) -> Result<f64> {
        self.check(tag, features, self.graph.feature_dim())?;
        let ctx = self.context(store);
        let mut s = [0.0];
        self.content_forward(store, &ctx, features, &[tag], &mut s);
        Ok(s[0])
    }

    pub fn uploader_logit(&self, store: &ParamStore, u: &[f64], tag: u32) -> Result<f64> {
        self.check(tag, u, self.k)?;
        let ctx = self.context(store);
        let t = tag as usize;
        Ok(nn::dot(u, &ctx.t_layers[self.gate_layer()][t * self.k..(t + 1) * self.k]))
    }

    pub fn uploader_gate(&self, store: &ParamStore, u: &[f64], tag: u32) -> Result<f64> {
        Ok(nn::sigmoid(self.uploader_logit(store, u, tag)?))
    }

    /// Final (layer-averaged) tag representations, `tag_count x K`.
    pub fn tag_representations(&self, store: &ParamStore) -> Vec<f64> {
        self.context(store).t_final
    }
}

impl Backbone for LightGcn {
    type Ctx = GcnCtx;
    type Acc = GcnAcc;
    type Input = GateInput;
    type Trace = GcnTrace;

    fn topics(&self) -> &TopicTable {
        &self.topics
    }

    fn tag_count(&self) -> usize {
        self.graph.tag_count()
    }

    fn feature_dim(&self) -> usize {
        self.graph.feature_dim()
    }

    fn context(&self, store: &ParamStore) -> GcnCtx {
        let k = self.k;
        let n = self.graph.ugc_count();
        let mut c0 = vec![0.0; n * k];
        for (j, row) in c0.chunks_exact_mut(k).enumerate() {
            self.proj.forward(store, self.graph.features(j), row);
        }
        let mut t_layers = vec![store.get(self.tag_emb).to_vec()];
        let mut c = c0.clone();
        for _ in 0..self.n_layers {
            let (t_next, c_next) = self.graph.propagate(t_layers.last().unwrap(), &c, k).expect("shapes fixed at construction");
            t_layers.push(t_next);
            c = c_next;
        }
        let inv = 1.0 / t_layers.len() as f64;
        let mut t_final = vec![0.0; t_layers[0].len()];
        for layer in &t_layers {
            nn::axpy(inv, layer, &mut t_final);
        }
        GcnCtx { c0, t_layers, t_final }
    }

    fn new_acc(&self) -> GcnAcc {
        let n = self.graph.tag_count() * self.k;
        GcnAcc { d_final: vec![0.0; n], d_t1: vec![0.0; n] }
    }

    fn content_forward(&self, store: &ParamStore, ctx: &GcnCtx, features: &[f64], tags: &[u32], scores: &mut [f64]) -> GcnTrace {
        let k = self.k;
        let mut xp = vec![0.0; k];
        self.proj.forward(store, features, &mut xp);
        for (&t, s) in tags.iter().zip(scores.iter_mut()) {
            let t = t as usize;
            *s = nn::dot(&ctx.t_final[t * k..(t + 1) * k], &xp);
        }
        GcnTrace { xp }
    }

    fn content_backward(
        &self,
        _store: &ParamStore,
        ctx: &GcnCtx,
        features: &[f64],
        tags: &[u32],
        trace: GcnTrace,
        dscores: &[f64],
        acc: &mut GcnAcc,
        grads: &mut Grads,
    ) {
        let k = self.k;
        let mut dxp = vec![0.0; k];
        for (&t, &d) in tags.iter().zip(dscores) {
            let t = t as usize;
            nn::axpy(d, &trace.xp, &mut acc.d_final[t * k..(t + 1) * k]);
            nn::axpy(d, &ctx.t_final[t * k..(t + 1) * k], &mut dxp);
        }
        nn::outer_acc(grads.get_mut(self.proj.w), &dxp, features);
    }

    fn gate_input(&self, _store: &ParamStore, _ctx: &GcnCtx, u: &[f64]) -> GateInput {
        GateInput { u: u.to_vec(), du: vec![0.0; u.len()] }
    }

    fn gate_logit(&self, _store: &ParamStore, ctx: &GcnCtx, input: &GateInput, tag: u32) -> f64 {
        let t = tag as usize;
        nn::dot(&input.u, &ctx.t_layers[self.gate_layer()][t * self.k..(t + 1) * self.k])
    }

    fn gate_backward(
        &self,
        _store: &ParamStore,
        ctx: &GcnCtx,
        input: &mut GateInput,
        tag: u32,
        dlogit: f64,
        acc: &mut GcnAcc,
        _grads: &mut Grads,
    ) {
        let rows = tag as usize * self.k..(tag as usize + 1) * self.k;
        nn::axpy(dlogit, &input.u, &mut acc.d_t1[rows.clone()]);
        nn::axpy(dlogit, &ctx.t_layers[self.gate_layer()][rows], &mut input.du);
    }

    fn gate_input_backward(&self, _store: &ParamStore, _ctx: &GcnCtx, input: &GateInput, _grads: &mut Grads) -> Vec<f64> {
        input.du.clone()
    }

    fn finish_backward(&self, _store: &ParamStore, ctx: &GcnCtx, acc: GcnAcc, grads: &mut Grads) {
        let k = self.k;
        let g = &self.graph;
        let layers = ctx.t_layers.len();
        let inv = 1.0 / layers as f64;
        // Gradients w.r.t. every layer's tag and UGC embeddings, walked top-down.
        let mut d_tag: Vec<Vec<f64>> = (0..layers).map(|_| acc.d_final.iter().map(|d| d * inv).collect()).collect();
        nn::axpy(1.0, &acc.d_t1, &mut d_tag[self.gate_layer()]);
        let mut d_ugc: Vec<Vec<f64>> = vec![vec![0.0; ctx.c0.len()]; layers];
        for l in (1..layers).rev() {
            // t_l = A c_{l-1}, c_l = A^T t_{l-1}; the adjacency is symmetric
            // in its weights so the transpose reuses the other side's lists.
            let (lo_t, hi_t) = d_tag.split_at_mut(l);
            let (lo_c, hi_c) = d_ugc.split_at_mut(l);
            BipartiteGraph::spread(&g.ugc_ptr, &g.ugc_adj, &hi_t[0], &mut lo_c[l - 1], k);
            BipartiteGraph::spread(&g.tag_ptr, &g.tag_adj, &hi_c[0], &mut lo_t[l - 1], k);
        }
        nn::axpy(1.0, &d_tag[0], grads.get_mut(self.tag_emb));
        let dw = grads.get_mut(self.proj.w);
        for (j, dc) in d_ugc[0].chunks_exact(k).enumerate() {
            if dc.iter().any(|v| *v != 0.0) {
                nn::outer_acc(dw, dc, g.features(j));
            }
        }
    }
}
