//! Neural factorization scorer.
//!
//! For a tag `t` and an input `x` (projected content, or the uploader
//! representation) the score is `out(M(t) ⊙ M(x) || M(M(t) || M(x)))`, where
//! every `M` is a one-hidden-layer ReLU perceptron of width K and `out` maps
//! 2K -> K -> 1. The content branch uses the raw output; the uploader branch
//! squashes it through a sigmoid.

use rand::Rng;

use super::{Backbone, TopicTable};
use crate::error::{Error, Result};
use crate::nn::{self, init_values, Init, Linear, Mlp};
use crate::params::{Grads, ParamId, ParamStore};

/// One scoring tower: tag MLP, input MLP, concatenation MLP and output MLP.
#[derive(Debug, Clone)]
pub struct Branch {
    pub proj: Option<Linear>,
    pub input: Mlp,
    /// First tag-MLP layer applied to a one-hot tag, i.e. an embedding table.
    pub tag_emb: ParamId,
    pub tag_b1: ParamId,
    pub tag_l2: Linear,
    /// Concatenation MLP first layer, split into its M(t) and M(x) halves.
    pub cat_t: ParamId,
    pub cat_x: ParamId,
    pub cat_b1: ParamId,
    pub cat_l2: Linear,
    pub out_l1: Linear,
    pub out_l2: Linear,
    k: usize,
    tag_count: usize,
}

/// Tag-side intermediates for every tag.
#[derive(Debug, Clone)]
pub struct BranchCtx {
    tag_hidden: Vec<f64>,
    /// `M(t)`, `tag_count x K`.
    tag_repr: Vec<f64>,
    /// `cat_t · M(t)`, `tag_count x K`.
    tag_cat: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BranchAcc {
    d_repr: Vec<f64>,
    d_cat: Vec<f64>,
    touched: Vec<bool>,
}

/// Input-side intermediates and their gradient buffers.
#[derive(Debug, Clone)]
pub struct InputState {
    x_in: Vec<f64>,
    xp: Vec<f64>,
    hidden: Vec<f64>,
    mx: Vec<f64>,
    /// `cat_x · M(x) + b`.
    bx: Vec<f64>,
    d_mx: Vec<f64>,
    d_bx: Vec<f64>,
}

impl Branch {
    fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, in_dim: Option<usize>, k: usize, tag_count: usize) -> Self {
        let proj = in_dim.map(|d| Linear::new(store, rng, &format!("{name}.proj"), d, k, true, Init::Kaiming));
        let input = Mlp::new(store, rng, &format!("{name}.input"), [k, k, k]);
        let a = 1.0 / (k as f64).sqrt();
        let tag_emb = store.add(
            format!("{name}.tag_emb"),
            vec![tag_count, k],
            init_values(rng, tag_count * k, k, Init::Uniform(a)),
        );
        let tag_b1 = store.add(format!("{name}.tag_mlp.0.bias"), vec![k], vec![0.0; k]);
        let tag_l2 = Linear::new(store, rng, &format!("{name}.tag_mlp.1"), k, k, true, Init::Kaiming);
        let cat_t = store.add(format!("{name}.cat.0.weight_t"), vec![k, k], init_values(rng, k * k, 2 * k, Init::Kaiming));
        let cat_x = store.add(format!("{name}.cat.0.weight_x"), vec![k, k], init_values(rng, k * k, 2 * k, Init::Kaiming));
        let cat_b1 = store.add(format!("{name}.cat.0.bias"), vec![k], vec![0.0; k]);
        let cat_l2 = Linear::new(store, rng, &format!("{name}.cat.1"), k, k, true, Init::Kaiming);
        let out_l1 = Linear::new(store, rng, &format!("{name}.out.0"), 2 * k, k, true, Init::Kaiming);
        let out_l2 = Linear::new(store, rng, &format!("{name}.out.1"), k, 1, true, Init::Kaiming);
        Branch { proj, input, tag_emb, tag_b1, tag_l2, cat_t, cat_x, cat_b1, cat_l2, out_l1, out_l2, k, tag_count }
    }

    fn context(&self, store: &ParamStore) -> BranchCtx {
        let k = self.k;
        let emb = store.get(self.tag_emb);
        let b1 = store.get(self.tag_b1);
        let cat_t = store.get(self.cat_t);
        let mut tag_hidden = vec![0.0; self.tag_count * k];
        let mut tag_repr = vec![0.0; self.tag_count * k];
        let mut tag_cat = vec![0.0; self.tag_count * k];
        for t in 0..self.tag_count {
            let h = &mut tag_hidden[t * k..(t + 1) * k];
            for ((hi, e), b) in h.iter_mut().zip(&emb[t * k..(t + 1) * k]).zip(b1) {
                *hi = (e + b).max(0.0);
            }
            let m = &mut tag_repr[t * k..(t + 1) * k];
            self.tag_l2.forward(store, h, m);
            nn::matvec(cat_t, k, m, &mut tag_cat[t * k..(t + 1) * k]);
        }
        BranchCtx { tag_hidden, tag_repr, tag_cat }
    }

    fn new_acc(&self) -> BranchAcc {
        BranchAcc {
            d_repr: vec![0.0; self.tag_count * self.k],
            d_cat: vec![0.0; self.tag_count * self.k],
            touched: vec![false; self.tag_count],
        }
    }

    fn input(&self, store: &ParamStore, x: &[f64]) -> InputState {
        let k = self.k;
        let xp = match &self.proj {
            Some(p) => {
                let mut xp = vec![0.0; k];
                p.forward(store, x, &mut xp);
                xp
            }
            None => x.to_vec(),
        };
        let mut hidden = vec![0.0; k];
        let mut mx = vec![0.0; k];
        self.input.forward(store, &xp, &mut hidden, &mut mx);
        let mut bx = vec![0.0; k];
        nn::matvec(store.get(self.cat_x), k, &mx, &mut bx);
        nn::axpy(1.0, store.get(self.cat_b1), &mut bx);
        InputState { x_in: x.to_vec(), xp, hidden, mx, bx, d_mx: vec![0.0; k], d_bx: vec![0.0; k] }
    }

    /// Score one tag; `trace` receives `[hc (K), z (2K), ho (K)]`.
    fn pair_forward(&self, store: &ParamStore, ctx: &BranchCtx, inp: &InputState, tag: usize, trace: &mut [f64]) -> f64 {
        let k = self.k;
        let mt = &ctx.tag_repr[tag * k..(tag + 1) * k];
        let at = &ctx.tag_cat[tag * k..(tag + 1) * k];
        let (hc, rest) = trace.split_at_mut(k);
        let (z, ho) = rest.split_at_mut(2 * k);
        for i in 0..k {
            hc[i] = (at[i] + inp.bx[i]).max(0.0);
            z[i] = mt[i] * inp.mx[i];
        }
        self.cat_l2.forward(store, hc, &mut z[k..]);
        self.out_l1.forward(store, z, ho);
        ho.iter_mut().for_each(|h| *h = h.max(0.0));
        let mut y = [0.0];
        self.out_l2.forward(store, ho, &mut y);
        y[0]
    }

    #[allow(clippy::too_many_arguments)]
    fn pair_backward(
        &self,
        store: &ParamStore,
        ctx: &BranchCtx,
        inp: &mut InputState,
        tag: usize,
        trace: &[f64],
        dy: f64,
        acc: &mut BranchAcc,
        grads: &mut Grads,
    ) {
        let k = self.k;
        let (hc, rest) = trace.split_at(k);
        let (z, ho) = rest.split_at(2 * k);
        let mut dho = vec![0.0; k];
        self.out_l2.backward(store, ho, &[dy], grads, Some(&mut dho));
        for (d, h) in dho.iter_mut().zip(ho) {
            if *h <= 0.0 {
                *d = 0.0;
            }
        }
        let mut dz = vec![0.0; 2 * k];
        self.out_l1.backward(store, z, &dho, grads, Some(&mut dz));
        let mut dhc = vec![0.0; k];
        self.cat_l2.backward(store, hc, &dz[k..], grads, Some(&mut dhc));
        let mt = &ctx.tag_repr[tag * k..(tag + 1) * k];
        let d_repr = &mut acc.d_repr[tag * k..(tag + 1) * k];
        let d_cat = &mut acc.d_cat[tag * k..(tag + 1) * k];
        for i in 0..k {
            let g = if hc[i] > 0.0 { dhc[i] } else { 0.0 };
            d_cat[i] += g;
            inp.d_bx[i] += g;
            d_repr[i] += dz[i] * inp.mx[i];
            inp.d_mx[i] += dz[i] * mt[i];
        }
        acc.touched[tag] = true;
    }

    /// Backpropagate the input tower; returns the gradient w.r.t. the raw input.
    fn input_backward(&self, store: &ParamStore, inp: &InputState, grads: &mut Grads, want_dx: bool) -> Vec<f64> {
        let k = self.k;
        nn::outer_acc(grads.get_mut(self.cat_x), &inp.d_bx, &inp.mx);
        nn::axpy(1.0, &inp.d_bx, grads.get_mut(self.cat_b1));
        let mut dmx = inp.d_mx.clone();
        nn::matvec_t_acc(store.get(self.cat_x), k, &inp.d_bx, &mut dmx);
        let mut dxp = vec![0.0; k];
        self.input.backward(store, &inp.xp, &inp.hidden, &dmx, grads, Some(&mut dxp));
        match &self.proj {
            Some(p) => {
                let mut dx = vec![0.0; if want_dx { p.in_dim } else { 0 }];
                p.backward(store, &inp.x_in, &dxp, grads, want_dx.then_some(dx.as_mut_slice()));
                dx
            }
            None => dxp,
        }
    }

    fn finish(&self, store: &ParamStore, ctx: &BranchCtx, acc: BranchAcc, grads: &mut Grads) {
        let k = self.k;
        let cat_t = store.get(self.cat_t);
        let mut dmt = vec![0.0; k];
        let mut dh = vec![0.0; k];
        for t in (0..self.tag_count).filter(|&t| acc.touched[t]) {
            let rows = t * k..(t + 1) * k;
            let mt = &ctx.tag_repr[rows.clone()];
            let h = &ctx.tag_hidden[rows.clone()];
            let d_cat = &acc.d_cat[rows.clone()];
            dmt.copy_from_slice(&acc.d_repr[rows.clone()]);
            nn::outer_acc(grads.get_mut(self.cat_t), d_cat, mt);
            nn::matvec_t_acc(cat_t, k, d_cat, &mut dmt);
            dh.iter_mut().for_each(|d| *d = 0.0);
            self.tag_l2.backward(store, h, &dmt, grads, Some(&mut dh));
            for (d, hi) in dh.iter_mut().zip(h) {
                if *hi <= 0.0 {
                    *d = 0.0;
                }
            }
            nn::axpy(1.0, &dh, &mut grads.get_mut(self.tag_emb)[rows]);
            nn::axpy(1.0, &dh, grads.get_mut(self.tag_b1));
        }
    }
}

#[derive(Debug, Clone)]
pub struct Nfm {
    pub content: Branch,
    pub uploader: Branch,
    pub topics: TopicTable,
    feature_dim: usize,
    tag_count: usize,
    k: usize,
}

pub struct NfmCtx {
    content: BranchCtx,
    uploader: BranchCtx,
}

pub struct NfmAcc {
    content: BranchAcc,
    uploader: BranchAcc,
}

pub struct NfmTrace {
    input: InputState,
    pairs: Vec<f64>,
}

impl Nfm {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        feature_dim: usize,
        k: usize,
        tag_count: usize,
        n_topics: usize,
    ) -> Self {
        let content = Branch::new(store, rng, "nfm.content", Some(feature_dim), k, tag_count);
        let uploader = Branch::new(store, rng, "nfm.uploader", None, k, tag_count);
        let topics = TopicTable::new(store, rng, "nfm", k, n_topics);
        Nfm { content, uploader, topics, feature_dim, tag_count, k }
    }

    pub fn embed_dim(&self) -> usize {
        self.k
    }

    fn check_tag(&self, tag: u32) -> Result<usize> {
        let t = tag as usize;
        if t >= self.tag_count {
            return Err(Error::Shape(format!("tag {tag} out of range for {} tags", self.tag_count)));
        }
        Ok(t)
    }

    /// Unnormalized content score for a single (UGC features, tag).
    pub fn content_score(&self, store: &ParamStore, features: &[f64], tag: u32) -> Result<f64> {
        let t = self.check_tag(tag)?;
        if features.len() != self.feature_dim {
            return Err(Error::Shape(format!("features of dim {} (expected {})", features.len(), self.feature_dim)));
        }
        let ctx = self.content.context(store);
        let inp = self.content.input(store, features);
        let mut trace = vec![0.0; 4 * self.k];
        Ok(self.content.pair_forward(store, &ctx, &inp, t, &mut trace))
    }

    /// Uploader gate pre-activation.
    pub fn uploader_logit(&self, store: &ParamStore, u: &[f64], tag: u32) -> Result<f64> {
        let t = self.check_tag(tag)?;
        if u.len() != self.k {
            return Err(Error::Shape(format!("uploader representation of dim {} (expected {})", u.len(), self.k)));
        }
        let ctx = self.uploader.context(store);
        let inp = self.uploader.input(store, u);
        let mut trace = vec![0.0; 4 * self.k];
        Ok(self.uploader.pair_forward(store, &ctx, &inp, t, &mut trace))
    }

    pub fn uploader_gate(&self, store: &ParamStore, u: &[f64], tag: u32) -> Result<f64> {
        Ok(nn::sigmoid(self.uploader_logit(store, u, tag)?))
    }
}

impl Backbone for Nfm {
    type Ctx = NfmCtx;
    type Acc = NfmAcc;
    type Input = InputState;
    type Trace = NfmTrace;

    fn topics(&self) -> &TopicTable {
        &self.topics
    }

    fn tag_count(&self) -> usize {
        self.tag_count
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn context(&self, store: &ParamStore) -> NfmCtx {
        NfmCtx { content: self.content.context(store), uploader: self.uploader.context(store) }
    }

    fn new_acc(&self) -> NfmAcc {
        NfmAcc { content: self.content.new_acc(), uploader: self.uploader.new_acc() }
    }

    fn content_forward(&self, store: &ParamStore, ctx: &NfmCtx, features: &[f64], tags: &[u32], scores: &mut [f64]) -> NfmTrace {
        let w = 4 * self.k;
        let input = self.content.input(store, features);
        let mut pairs = vec![0.0; tags.len() * w];
        for ((&t, s), tr) in tags.iter().zip(scores.iter_mut()).zip(pairs.chunks_exact_mut(w)) {
            *s = self.content.pair_forward(store, &ctx.content, &input, t as usize, tr);
        }
        NfmTrace { input, pairs }
    }

    fn content_backward(
        &self,
        store: &ParamStore,
        ctx: &NfmCtx,
        _features: &[f64],
        tags: &[u32],
        trace: NfmTrace,
        dscores: &[f64],
        acc: &mut NfmAcc,
        grads: &mut Grads,
    ) {
        let w = 4 * self.k;
        let NfmTrace { mut input, pairs } = trace;
        for ((&t, &d), tr) in tags.iter().zip(dscores).zip(pairs.chunks_exact(w)) {
            if d != 0.0 {
                self.content.pair_backward(store, &ctx.content, &mut input, t as usize, tr, d, &mut acc.content, grads);
            }
        }
        self.content.input_backward(store, &input, grads, false);
    }

    fn gate_input(&self, store: &ParamStore, _ctx: &NfmCtx, u: &[f64]) -> InputState {
        self.uploader.input(store, u)
    }

    fn gate_logit(&self, store: &ParamStore, ctx: &NfmCtx, input: &InputState, tag: u32) -> f64 {
        let mut trace = [0.0; 64];
        let w = 4 * self.k;
        if w <= trace.len() {
            self.uploader.pair_forward(store, &ctx.uploader, input, tag as usize, &mut trace[..w])
        } else {
            let mut trace = vec![0.0; w];
            self.uploader.pair_forward(store, &ctx.uploader, input, tag as usize, &mut trace)
        }
    }

    fn gate_backward(
        &self,
        store: &ParamStore,
        ctx: &NfmCtx,
        input: &mut InputState,
        tag: u32,
        dlogit: f64,
        acc: &mut NfmAcc,
        grads: &mut Grads,
    ) {
        let mut trace = vec![0.0; 4 * self.k];
        self.uploader.pair_forward(store, &ctx.uploader, input, tag as usize, &mut trace);
        self.uploader.pair_backward(store, &ctx.uploader, input, tag as usize, &trace, dlogit, &mut acc.uploader, grads);
    }

    fn gate_input_backward(&self, store: &ParamStore, _ctx: &NfmCtx, input: &InputState, grads: &mut Grads) -> Vec<f64> {
        self.uploader.input_backward(store, input, grads, true)
    }

    fn finish_backward(&self, store: &ParamStore, ctx: &NfmCtx, acc: NfmAcc, grads: &mut Grads) {
        self.content.finish(store, &ctx.content, acc.content, grads);
        self.uploader.finish(store, &ctx.uploader, acc.uploader, grads);
    }
}
