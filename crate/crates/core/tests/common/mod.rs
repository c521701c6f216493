#![allow(dead_code)]

use rand::Rng;
use tagcausal::backbone::{Backbone, BackboneKind, BipartiteGraph, Model, ModelConfig};
use tagcausal::data::Dataset;
use tagcausal::estimator::{Strategy, UploaderPool};
use tagcausal::objective::{batch_loss, BatchPlan, Planner};
use tagcausal::params::ParamStore;
use tagcausal::seed;
use tagcausal::synth::{generate, GenConfig};
use tagcausal::with_backbone;

pub fn small_dataset(seed: u64) -> Dataset {
    let mut cfg = GenConfig::small(12, 15, 2.0, seed);
    cfg.feature_dim = 6;
    generate(&cfg).unwrap()
}

pub fn build_model(ds: &Dataset, kind: BackboneKind, k: usize, seed: u64) -> (Model, ParamStore) {
    let mc = ModelConfig {
        backbone: kind,
        embed_dim: k,
        n_layers: 2,
        feature_dim: ds.feature_dim,
        tag_count: ds.tag_count,
        n_topics: ds.n_topics,
        init_seed: seed,
    };
    let graph = (kind == BackboneKind::Lightgcn).then(|| BipartiteGraph::from_dataset(ds).unwrap());
    let mut store = ParamStore::new();
    let model = Model::new(&mc, graph, &mut store).unwrap();
    (model, store)
}

pub fn plan_for(ds: &Dataset, pool: &UploaderPool, strategy: Strategy, ns: usize, n: usize, seed: u64) -> BatchPlan {
    let planner = Planner::new(ds, pool, strategy, 6, ns).unwrap();
    let idx: Vec<usize> = (0..n.min(ds.triplets.len())).collect();
    planner.plan(&idx, |ti| seed::rng(seed, "plan", &[ti as u64])).unwrap()
}

/// Largest relative error between backward and central differences over
/// `coords` random parameter coordinates.
pub fn fd_max_rel_error(model: &Model, store: &mut ParamStore, ds: &Dataset, plan: &BatchPlan, coords: usize, seed: u64) -> f64 {
    fn go<B: Backbone>(m: &B, store: &mut ParamStore, ds: &Dataset, plan: &BatchPlan, coords: usize, seed: u64) -> f64 {
        let mut g = store.zeroed_grads();
        batch_loss(m, store, ds, plan, Some(&mut g));
        let mut rng = seed::rng(seed, "fd", &[]);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for _ in 0..coords {
            let (id, i) = store.locate(rng.gen_range(0..store.num_scalars()));
            let orig = store.get(id)[i];
            store.get_mut(id)[i] = orig + h;
            let lp = batch_loss(m, store, ds, plan, None);
            store.get_mut(id)[i] = orig - h;
            let lm = batch_loss(m, store, ds, plan, None);
            store.get_mut(id)[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = g.get(id)[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        worst
    }
    with_backbone!(model, m => go(m, store, ds, plan, coords, seed))
}
