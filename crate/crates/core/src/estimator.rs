//! The four ways of handling the uploader when scoring tags.
//!
//! * `None` conditions on the observed uploader.
//! * `Unawareness` drops the uploader expert (gate fixed to 1).
//! * `Averaged` gates with the mean uploader representation `ū`.
//! * `DectagMc` averages the gate over uploaders bootstrapped from the
//!   training population, approximating the marginal `P(u)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{joint_score, Backbone, Scorer};
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "unawareness")]
    Unawareness,
    #[serde(rename = "averaged")]
    Averaged,
    #[serde(rename = "dectag", alias = "dectag_mc")]
    DectagMc,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::None, Strategy::Unawareness, Strategy::Averaged, Strategy::DectagMc];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Unawareness => "unawareness",
            Strategy::Averaged => "averaged",
            Strategy::DectagMc => "dectag",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Strategy::None),
            "unawareness" => Ok(Strategy::Unawareness),
            "averaged" => Ok(Strategy::Averaged),
            "dectag" | "dectag_mc" => Ok(Strategy::DectagMc),
            other => Err(Error::config("strategy", format!("unknown strategy {other:?}"))),
        }
    }
}

/// Empirical uploader distribution of a training split.
///
/// Every training triplet contributes one member, so an uploader's weight is
/// its share of the observed triplets. Members point into the list of
/// distinct uploader histograms; representations are derived from the
/// current topic table on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct UploaderPool {
    uploader_ids: Vec<u32>,
    histograms: Vec<Vec<f64>>,
    members: Vec<usize>,
    mean_histogram: Vec<f64>,
    /// `(uploader_id, index)` sorted by id.
    lookup: Vec<(u32, usize)>,
}

impl UploaderPool {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let mut uploader_ids = Vec::new();
        let mut histograms = Vec::new();
        let mut slot = vec![usize::MAX; ds.uploaders.len()];
        let mut members = Vec::with_capacity(ds.triplets.len());
        for tr in &ds.triplets {
            let p = ds
                .uploader_position(tr.uploader_id)
                .ok_or_else(|| Error::Invariant(format!("triplet references unknown uploader {}", tr.uploader_id)))?;
            if slot[p] == usize::MAX {
                slot[p] = histograms.len();
                uploader_ids.push(tr.uploader_id);
                histograms.push(ds.uploaders[p].topic_histogram.clone());
            }
            members.push(slot[p]);
        }
        Self::build(uploader_ids, histograms, members)
    }

    /// One member per histogram.
    pub fn from_histograms(histograms: Vec<Vec<f64>>) -> Result<Self> {
        let n = histograms.len();
        Self::build((0..n as u32).collect(), histograms, (0..n).collect())
    }

    fn build(uploader_ids: Vec<u32>, histograms: Vec<Vec<f64>>, members: Vec<usize>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Empty("uploader pool is empty".into()));
        }
        let dim = histograms[0].len();
        if histograms.iter().any(|h| h.len() != dim) {
            return Err(Error::Shape("pool histograms differ in length".into()));
        }
        let mut mean_histogram = vec![0.0; dim];
        for &m in &members {
            for (a, h) in mean_histogram.iter_mut().zip(&histograms[m]) {
                *a += h;
            }
        }
        let inv = 1.0 / members.len() as f64;
        mean_histogram.iter_mut().for_each(|a| *a *= inv);
        let mut lookup: Vec<(u32, usize)> = uploader_ids.iter().copied().zip(0..).collect();
        lookup.sort_unstable();
        Ok(UploaderPool { uploader_ids, histograms, members, mean_histogram, lookup })
    }

    /// Number of members (training triplets).
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn distinct(&self) -> usize {
        self.histograms.len()
    }

    pub fn uploader_ids(&self) -> &[u32] {
        &self.uploader_ids
    }

    pub fn histogram(&self, i: usize) -> &[f64] {
        &self.histograms[i]
    }

    pub fn histograms(&self) -> &[Vec<f64>] {
        &self.histograms
    }

    /// Distinct-uploader index of every member.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn mean_histogram(&self) -> &[f64] {
        &self.mean_histogram
    }

    pub fn index_of(&self, uploader_id: u32) -> Option<usize> {
        self.lookup
            .binary_search_by_key(&uploader_id, |&(u, _)| u)
            .ok()
            .map(|p| self.lookup[p].1)
    }

    /// Representations of all distinct uploaders under the current table.
    pub fn reprs<B: Backbone>(&self, scorer: &Scorer<'_, B>) -> Result<Vec<Vec<f64>>> {
        self.histograms.iter().map(|h| scorer.repr(h)).collect()
    }

    /// `ū = W_t · mean(hist)`, equal to the mean of member representations
    /// because the representation is linear in the histogram.
    pub fn mean_repr<B: Backbone>(&self, scorer: &Scorer<'_, B>) -> Result<Vec<f64>> {
        scorer.repr(&self.mean_histogram)
    }
}

/// `n` uniform draws with replacement from the pool's members; returns
/// distinct-uploader indices.
pub fn bootstrap_sample<R: Rng + ?Sized>(pool: &UploaderPool, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::Empty("uploader pool is empty".into()));
    }
    if n == 0 {
        return Err(Error::config("n_samples", "must be >= 1"));
    }
    Ok((0..n).map(|_| pool.members[rng.gen_range(0..pool.members.len())]).collect())
}

/// Every member exactly once, for exhaustive evaluation.
pub fn exhaustive_draws(pool: &UploaderPool) -> Vec<usize> {
    pool.members.clone()
}

/// Both evaluations of the Monte-Carlo average for a fixed set of draws.
#[derive(Debug, Clone, PartialEq)]
pub struct McPaths {
    /// `s_c · mean_i g(u_i)`.
    pub factorized: Vec<f64>,
    /// `mean_i (s_c · g(u_i))`.
    pub products: Vec<f64>,
}

pub fn mc_paths<B: Backbone>(
    scorer: &Scorer<'_, B>,
    features: &[f64],
    tags: &[u32],
    pool: &UploaderPool,
    draws: &[usize],
) -> Result<McPaths> {
    if draws.is_empty() {
        return Err(Error::config("n_samples", "must be >= 1"));
    }
    let content = scorer.content_scores(features, tags);
    let mut gbar = vec![0.0; tags.len()];
    let mut prod = vec![0.0; tags.len()];
    let mut cache: Vec<Option<Vec<f64>>> = vec![None; pool.distinct()];
    for &d in draws {
        if cache[d].is_none() {
            let u = scorer.repr(pool.histogram(d))?;
            cache[d] = Some(scorer.gates(&u, tags));
        }
        let g = cache[d].as_ref().unwrap();
        for j in 0..tags.len() {
            gbar[j] += g[j];
            prod[j] += joint_score(content[j], g[j]).joint;
        }
    }
    let inv = 1.0 / draws.len() as f64;
    Ok(McPaths {
        factorized: content.iter().zip(&gbar).map(|(s, g)| s * (g * inv)).collect(),
        products: prod.into_iter().map(|p| p * inv).collect(),
    })
}

/// Monte-Carlo backdoor estimate with `n_samples` bootstrapped uploaders.
pub fn mc_estimate<B: Backbone, R: Rng + ?Sized>(
    scorer: &Scorer<'_, B>,
    features: &[f64],
    tags: &[u32],
    pool: &UploaderPool,
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let draws = bootstrap_sample(pool, n_samples, rng)?;
    Ok(mc_paths(scorer, features, tags, pool, &draws)?.factorized)
}

pub fn averaged_estimate<B: Backbone>(
    scorer: &Scorer<'_, B>,
    features: &[f64],
    tags: &[u32],
    pool: &UploaderPool,
) -> Result<Vec<f64>> {
    let u = pool.mean_repr(scorer)?;
    let content = scorer.content_scores(features, tags);
    let gates = scorer.gates(&u, tags);
    Ok(content.iter().zip(&gates).map(|(&s, &g)| joint_score(s, g).joint).collect())
}

/// Scores under a strategy; `u_true` is the observed uploader's representation.
#[allow(clippy::too_many_arguments)]
pub fn strategy_scores<B: Backbone, R: Rng + ?Sized>(
    strategy: Strategy,
    scorer: &Scorer<'_, B>,
    u_true: Option<&[f64]>,
    features: &[f64],
    tags: &[u32],
    pool: &UploaderPool,
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    match strategy {
        Strategy::None => {
            let u = u_true.ok_or_else(|| Error::config("strategy", "`none` needs the observed uploader"))?;
            let content = scorer.content_scores(features, tags);
            let gates = scorer.gates(u, tags);
            Ok(content.iter().zip(&gates).map(|(&s, &g)| joint_score(s, g).joint).collect())
        }
        Strategy::Unawareness => Ok(scorer.content_scores(features, tags)),
        Strategy::Averaged => averaged_estimate(scorer, features, tags, pool),
        Strategy::DectagMc => mc_estimate(scorer, features, tags, pool, n_samples, rng),
    }
}

/// Softmax cross-entropy of candidate `pos`, treating scores as logits.
pub fn training_loss(scores: &[f64], pos: usize) -> Result<f64> {
    if scores.len() < 2 || pos >= scores.len() {
        return Err(Error::config("candidates", "need a positive and at least one negative"));
    }
    Ok(softmax_xent(scores, pos, None))
}

/// Loss value; writes `softmax - onehot(pos)` into `grad` when given.
pub(crate) fn softmax_xent(scores: &[f64], pos: usize, grad: Option<&mut [f64]>) -> f64 {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let lse = max + sum.ln();
    if let Some(g) = grad {
        for (gi, s) in g.iter_mut().zip(scores) {
            *gi = (s - lse).exp();
        }
        g[pos] -= 1.0;
    }
    lse - scores[pos]
}

/// Tag ids ordered by descending score, ties by ascending id.
pub fn rank_tags(scores: &[f64], k_cut: usize) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..scores.len() as u32).collect();
    idx.sort_by(|&a, &b| scores[b as usize].total_cmp(&scores[a as usize]).then(a.cmp(&b)));
    idx.truncate(k_cut);
    idx
}

/// Scores every tag for unseen UGCs under a strategy, without knowledge of
/// the uploader. Gate rows are cached per pool uploader.
pub struct Predictor<'a, B: Backbone> {
    scorer: Scorer<'a, B>,
    pool: &'a UploaderPool,
    strategy: Strategy,
    n_samples: usize,
    tags: Vec<u32>,
    gate_rows: Vec<Option<Vec<f64>>>,
    mean_row: Option<Vec<f64>>,
}

impl<'a, B: Backbone> Predictor<'a, B> {
    pub fn new(scorer: Scorer<'a, B>, pool: &'a UploaderPool, strategy: Strategy, n_samples: usize) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::config("n_samples", "must be >= 1"));
        }
        let tags = scorer.all_tags();
        let mean_row = match strategy {
            Strategy::Averaged => Some(scorer.gates(&pool.mean_repr(&scorer)?, &tags)),
            _ => None,
        };
        Ok(Predictor { gate_rows: vec![None; pool.distinct()], scorer, pool, strategy, n_samples, tags, mean_row })
    }

    pub fn scorer(&self) -> &Scorer<'a, B> {
        &self.scorer
    }

    fn gate_row(&mut self, i: usize) -> Result<&[f64]> {
        if self.gate_rows[i].is_none() {
            let u = self.scorer.repr(self.pool.histogram(i))?;
            self.gate_rows[i] = Some(self.scorer.gates(&u, &self.tags));
        }
        Ok(self.gate_rows[i].as_deref().unwrap())
    }

    /// Scores over all tags. `None` and `DectagMc` both average the gate over
    /// bootstrapped uploaders because the uploader of a new UGC is unknown.
    pub fn scores<R: Rng + ?Sized>(&mut self, features: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        if features.len() != self.scorer.model.feature_dim() {
            return Err(Error::Shape(format!(
                "features of dim {} (expected {})",
                features.len(),
                self.scorer.model.feature_dim()
            )));
        }
        let mut scores = self.scorer.content_scores(features, &self.tags);
        match self.strategy {
            Strategy::Unawareness => {}
            Strategy::Averaged => {
                for (s, g) in scores.iter_mut().zip(self.mean_row.as_ref().unwrap()) {
                    *s *= g;
                }
            }
            Strategy::None | Strategy::DectagMc => {
                let draws = bootstrap_sample(self.pool, self.n_samples, rng)?;
                let mut gbar = vec![0.0; self.tags.len()];
                for d in draws {
                    for (a, g) in gbar.iter_mut().zip(self.gate_row(d)?) {
                        *a += g;
                    }
                }
                let inv = 1.0 / self.n_samples as f64;
                for (s, g) in scores.iter_mut().zip(&gbar) {
                    *s *= g * inv;
                }
            }
        }
        Ok(scores)
    }

    pub fn predict_topk<R: Rng + ?Sized>(&mut self, features: &[f64], k_cut: usize, rng: &mut R) -> Result<Vec<u32>> {
        if k_cut == 0 || k_cut > self.tags.len() {
            return Err(Error::config("k", format!("cutoff {k_cut} outside 1..={}", self.tags.len())));
        }
        Ok(rank_tags(&self.scores(features, rng)?, k_cut))
    }
}

/// Rank all tags for a new UGC by the Monte-Carlo estimate.
pub fn predict_topk<B: Backbone, R: Rng + ?Sized>(
    scorer: Scorer<'_, B>,
    features: &[f64],
    pool: &UploaderPool,
    n_samples: usize,
    k_cut: usize,
    rng: &mut R,
) -> Result<Vec<u32>> {
    Predictor::new(scorer, pool, Strategy::DectagMc, n_samples)?.predict_topk(features, k_cut, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::Nfm;
    use crate::params::ParamStore;
    use crate::seed;

    fn setup() -> (Nfm, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = seed::rng(4, "est", &[]);
        let m = Nfm::new(&mut store, &mut rng, 3, 4, 6, 2);
        (m, store)
    }

    fn pool(n: usize) -> UploaderPool {
        UploaderPool::from_histograms((0..n).map(|i| {
            let p = i as f64 / n.max(1) as f64;
            vec![p, 1.0 - p]
        }).collect())
        .unwrap()
    }

    #[test]
    fn bootstrap_degenerate_and_deterministic() {
        let p1 = pool(1);
        let mut rng = seed::rng(1, "b", &[]);
        assert!(bootstrap_sample(&p1, 50, &mut rng).unwrap().iter().all(|&d| d == 0));
        let p = pool(10);
        let a = bootstrap_sample(&p, 100, &mut seed::rng(2, "b", &[])).unwrap();
        let b = bootstrap_sample(&p, 100, &mut seed::rng(2, "b", &[])).unwrap();
        assert_eq!(a, b);
        assert!(UploaderPool::from_histograms(vec![]).is_err());
    }

    #[test]
    fn bootstrap_frequencies_concentrate() {
        let p = pool(10);
        let draws = bootstrap_sample(&p, 100_000, &mut seed::rng(3, "b", &[])).unwrap();
        let mut counts = [0usize; 10];
        for d in draws {
            counts[d] += 1;
        }
        for c in counts {
            assert!((c as f64 / 100_000.0 - 0.1).abs() <= 0.01);
        }
    }

    #[test]
    fn loss_examples() {
        assert!((training_loss(&[0.3; 51], 0).unwrap() - 51f64.ln()).abs() < 1e-12);
        assert!(training_loss(&[1e4, 0.0, 0.0], 0).unwrap() < 1e-12);
        let want = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
        assert!((training_loss(&[1.0, 0.0, 0.0], 0).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.5514).abs() < 1e-4);
        assert!(training_loss(&[1.0], 0).is_err());
    }

    #[test]
    fn strategies_dispatch() {
        let (m, store) = setup();
        let sc = Scorer::new(&m, &store);
        let tags = sc.all_tags();
        let c = [0.5, -0.2, 1.0];
        let p = pool(5);
        let u = sc.repr(p.histogram(2)).unwrap();
        let mut rng = seed::rng(0, "s", &[]);
        let unaware = strategy_scores(Strategy::Unawareness, &sc, None, &c, &tags, &p, 1, &mut rng).unwrap();
        assert_eq!(unaware, sc.content_scores(&c, &tags));
        let none = strategy_scores(Strategy::None, &sc, Some(&u), &c, &tags, &p, 1, &mut rng).unwrap();
        for (t, v) in none.iter().enumerate() {
            assert_eq!(*v, sc.score(&c, &u, t as u32).joint);
        }
        assert!(strategy_scores(Strategy::None, &sc, None, &c, &tags, &p, 1, &mut rng).is_err());
        let single = UploaderPool::from_histograms(vec![p.histogram(2).to_vec()]).unwrap();
        let mc = strategy_scores(Strategy::DectagMc, &sc, None, &c, &tags, &single, 3, &mut rng).unwrap();
        for (a, b) in mc.iter().zip(&none) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        let avg = averaged_estimate(&sc, &c, &tags, &single).unwrap();
        let ex = mc_paths(&sc, &c, &tags, &single, &exhaustive_draws(&single)).unwrap();
        for (a, b) in avg.iter().zip(&ex.factorized) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn ranking_ties_and_scaling() {
        assert_eq!(rank_tags(&[1.0, 3.0, 3.0, 0.5], 4), vec![1, 2, 0, 3]);
        let (m, store) = setup();
        let p = pool(4);
        let c = [0.1, 0.2, 0.3];
        let a = predict_topk(Scorer::new(&m, &store), &c, &p, 2, 6, &mut seed::rng(9, "p", &[])).unwrap();
        let b = predict_topk(Scorer::new(&m, &store), &c, &p, 2, 6, &mut seed::rng(9, "p", &[])).unwrap();
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..6).collect::<Vec<u32>>());
    }
}
