//! Mini-batch training objective with its backward pass.
//!
//! A [`BatchPlan`] freezes every random choice of a batch (negatives and
//! bootstrapped uploaders), so the loss is a deterministic function of the
//! parameters and can be checked against finite differences.

use std::collections::HashMap;

use rand::seq::index;
use rand::Rng;

use crate::backbone::Backbone;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{bootstrap_sample, softmax_xent, Strategy, UploaderPool};
use crate::nn;
use crate::params::{Grads, ParamStore};

/// Uploader factor of one triplet's scores.
#[derive(Debug, Clone, PartialEq)]
pub enum GatePlan {
    /// Gate fixed to 1.
    Unit,
    /// Mean gate over these entries of [`BatchPlan::reps`] (repeats allowed).
    Reps(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletPlan {
    /// Row of the UGC in the dataset.
    pub row: usize,
    /// Positive tag first, then negatives.
    pub candidates: Vec<u32>,
    pub gate: GatePlan,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchPlan {
    /// Uploader histograms referenced by the gate plans.
    pub reps: Vec<Vec<f64>>,
    pub triplets: Vec<TripletPlan>,
}

/// Draws negatives and uploaders for a batch of triplet indices.
pub struct Planner<'a> {
    ds: &'a Dataset,
    pool: &'a UploaderPool,
    tags_by_ugc: Vec<Vec<u32>>,
    /// Pool index of each triplet's uploader.
    owner: Vec<usize>,
    pub strategy: Strategy,
    pub negatives: usize,
    pub n_samples: usize,
}

impl<'a> Planner<'a> {
    pub fn new(ds: &'a Dataset, pool: &'a UploaderPool, strategy: Strategy, negatives: usize, n_samples: usize) -> Result<Self> {
        if negatives == 0 {
            return Err(Error::config("negatives_per_positive", "must be >= 1"));
        }
        if n_samples == 0 {
            return Err(Error::config("n_samples", "must be >= 1"));
        }
        let owner = ds
            .triplets
            .iter()
            .map(|t| {
                pool.index_of(t.uploader_id)
                    .ok_or_else(|| Error::Invariant(format!("uploader {} missing from pool", t.uploader_id)))
            })
            .collect::<Result<_>>()?;
        Ok(Planner { ds, pool, tags_by_ugc: ds.tags_by_ugc(), owner, strategy, negatives, n_samples })
    }

    pub fn dataset(&self) -> &Dataset {
        self.ds
    }

    /// Plan for the given triplet indices, drawing each triplet's negatives
    /// and uploaders from `rng_for(index)`. Triplets whose UGC carries every
    /// tag have no negatives and are skipped.
    pub fn plan<R: Rng, F: FnMut(usize) -> R>(&self, triplets: &[usize], mut rng_for: F) -> Result<BatchPlan> {
        let mut plan = BatchPlan::default();
        let mut slots: HashMap<usize, usize> = HashMap::new();
        let mut slot = |plan: &mut BatchPlan, i: usize| -> usize {
            *slots.entry(i).or_insert_with(|| {
                plan.reps.push(self.pool.histogram(i).to_vec());
                plan.reps.len() - 1
            })
        };
        let mean_slot = if self.strategy == Strategy::Averaged {
            plan.reps.push(self.pool.mean_histogram().to_vec());
            Some(0)
        } else {
            None
        };
        let tag_count = self.ds.tag_count;
        for &ti in triplets {
            let tr = &self.ds.triplets[ti];
            let row = self.ds.ugc_position(tr.ugc_id).expect("validated dataset");
            let attached = &self.tags_by_ugc[row];
            let free = tag_count - attached.len();
            if free == 0 {
                continue;
            }
            let n_neg = self.negatives.min(free);
            let mut rng = rng_for(ti);
            let rng = &mut rng;
            let mut candidates = Vec::with_capacity(n_neg + 1);
            candidates.push(tr.tag_id);
            // Uniform draw without replacement from the tags not on this UGC.
            for j in index::sample(rng, free, n_neg) {
                candidates.push(nth_free(attached, j as u32));
            }
            let gate = match self.strategy {
                Strategy::Unawareness => GatePlan::Unit,
                Strategy::Averaged => GatePlan::Reps(vec![mean_slot.unwrap()]),
                Strategy::None => GatePlan::Reps(vec![slot(&mut plan, self.owner[ti])]),
                Strategy::DectagMc => GatePlan::Reps(
                    bootstrap_sample(self.pool, self.n_samples, rng)?
                        .into_iter()
                        .map(|d| slot(&mut plan, d))
                        .collect(),
                ),
            };
            plan.triplets.push(TripletPlan { row, candidates, gate });
        }
        Ok(plan)
    }
}

/// The `j`-th tag id (ascending) that is not in the sorted `attached` list.
fn nth_free(attached: &[u32], j: u32) -> u32 {
    let mut t = j;
    for &a in attached {
        if a <= t {
            t += 1;
        } else {
            break;
        }
    }
    t
}

/// Mean softmax cross-entropy over the planned triplets. With `grads`, the
/// gradient of that mean is accumulated into it.
pub fn batch_loss<B: Backbone>(
    model: &B,
    store: &ParamStore,
    ds: &Dataset,
    plan: &BatchPlan,
    mut grads: Option<&mut Grads>,
) -> f64 {
    let n = plan.triplets.len();
    if n == 0 {
        return 0.0;
    }
    let ctx = model.context(store);
    let topics = model.topics();
    let mut inputs: Vec<B::Input> = plan
        .reps
        .iter()
        .map(|h| {
            let u = topics.repr(store, h).expect("histogram length checked by pool");
            model.gate_input(store, &ctx, &u)
        })
        .collect();

    let mut gate_at: HashMap<(usize, u32), usize> = HashMap::new();
    let mut gate_keys: Vec<(usize, u32)> = Vec::new();
    let mut gate_val: Vec<f64> = Vec::new();
    for tp in &plan.triplets {
        if let GatePlan::Reps(reps) = &tp.gate {
            for &r in reps {
                for &t in &tp.candidates {
                    gate_at.entry((r, t)).or_insert_with(|| {
                        gate_keys.push((r, t));
                        gate_val.push(nn::sigmoid(model.gate_logit(store, &ctx, &inputs[r], t)));
                        gate_val.len() - 1
                    });
                }
            }
        }
    }

    let inv_b = 1.0 / n as f64;
    let mut dgate = vec![0.0; gate_val.len()];
    let mut acc = grads.is_some().then(|| model.new_acc());
    let mut total = 0.0;
    for tp in &plan.triplets {
        let m = tp.candidates.len();
        let feats = &ds.ugcs[tp.row].features;
        let mut content = vec![0.0; m];
        let trace = model.content_forward(store, &ctx, feats, &tp.candidates, &mut content);
        let gbar: Vec<f64> = match &tp.gate {
            GatePlan::Unit => vec![1.0; m],
            GatePlan::Reps(reps) => {
                let inv = 1.0 / reps.len() as f64;
                tp.candidates
                    .iter()
                    .map(|&t| reps.iter().map(|&r| gate_val[gate_at[&(r, t)]]).sum::<f64>() * inv)
                    .collect()
            }
        };
        let z: Vec<f64> = content.iter().zip(&gbar).map(|(s, g)| s * g).collect();
        let mut dz = vec![0.0; m];
        total += softmax_xent(&z, 0, Some(&mut dz));
        if let (Some(g), Some(acc)) = (grads.as_deref_mut(), acc.as_mut()) {
            let ds: Vec<f64> = dz.iter().zip(&gbar).map(|(d, gb)| d * gb * inv_b).collect();
            model.content_backward(store, &ctx, feats, &tp.candidates, trace, &ds, acc, g);
            if let GatePlan::Reps(reps) = &tp.gate {
                let inv = inv_b / reps.len() as f64;
                for (j, &t) in tp.candidates.iter().enumerate() {
                    let d = dz[j] * content[j] * inv;
                    for &r in reps {
                        dgate[gate_at[&(r, t)]] += d;
                    }
                }
            }
        }
    }

    if let (Some(g), Some(mut acc)) = (grads, acc) {
        for (i, &(r, t)) in gate_keys.iter().enumerate() {
            if dgate[i] != 0.0 {
                let gv = gate_val[i];
                model.gate_backward(store, &ctx, &mut inputs[r], t, dgate[i] * gv * (1.0 - gv), &mut acc, g);
            }
        }
        for (inp, h) in inputs.iter().zip(&plan.reps) {
            let du = model.gate_input_backward(store, &ctx, inp, g);
            topics.backward(h, &du, g);
        }
        model.finish_backward(store, &ctx, acc, g);
    }
    total * inv_b
}
