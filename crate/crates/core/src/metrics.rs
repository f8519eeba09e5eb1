//! Full-ranking evaluation: Recall@k, NDCG@k, their ensemble, and the
//! fitness ratio between a masked model and the full pretrained model.
//!
//! Candidates for a user are all items except the user's train items.
//! Rankings sort by score descending with ties broken by ascending item
//! index, so every result here is deterministic.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::Backbone;
use crate::dataset::{InteractionDataset, Split};
use crate::error::{BetError, Result};

pub const DEFAULT_KS: [usize; 3] = [5, 10, 20];

fn by_score(scores: &[f64]) -> impl Fn(&u32, &u32) -> Ordering + '_ {
    move |&a, &b| {
        scores[b as usize]
            .total_cmp(&scores[a as usize])
            .then(a.cmp(&b))
    }
}

/// Every item not in `exclude` (sorted), best first.
pub fn rank_by_scores(scores: &[f64], exclude: &[u32]) -> Vec<u32> {
    let mut items: Vec<u32> = (0..scores.len() as u32)
        .filter(|v| exclude.binary_search(v).is_err())
        .collect();
    items.sort_unstable_by(by_score(scores));
    items
}

/// The first `k` entries of [`rank_by_scores`], without sorting everything.
pub fn top_k_by_scores(scores: &[f64], exclude: &[u32], k: usize) -> Vec<u32> {
    let mut items: Vec<u32> = (0..scores.len() as u32)
        .filter(|v| exclude.binary_search(v).is_err())
        .collect();
    let cmp = by_score(scores);
    if k < items.len() {
        items.select_nth_unstable_by(k, &cmp);
        items.truncate(k);
    }
    items.sort_unstable_by(cmp);
    items
}

/// Ranks all non-excluded items for `user` under `model`.
pub fn rank_items(model: &Backbone, user: usize, exclude: &[u32]) -> Result<Vec<u32>> {
    let scores = (0..model.num_items())
        .map(|v| model.score(user, v))
        .collect::<Result<Vec<_>>>()?;
    let mut exclude = exclude.to_vec();
    exclude.sort_unstable();
    Ok(rank_by_scores(&scores, &exclude))
}

fn check_args(relevant: &[u32], k: usize) -> Result<()> {
    if k == 0 {
        return Err(BetError::InvalidArgument("k must be >= 1".to_owned()));
    }
    if relevant.is_empty() {
        return Err(BetError::InvalidArgument("relevant set is empty".to_owned()));
    }
    Ok(())
}

fn hits<'a>(ranking: &'a [u32], relevant: &'a [u32], k: usize) -> impl Iterator<Item = usize> + 'a {
    ranking
        .iter()
        .take(k)
        .enumerate()
        .filter(move |(_, v)| relevant.contains(v))
        .map(|(i, _)| i)
}

/// `|top-k ∩ relevant| / |relevant|`.
pub fn recall_at_k(ranking: &[u32], relevant: &[u32], k: usize) -> Result<f64> {
    check_args(relevant, k)?;
    Ok(hits(ranking, relevant, k).count() as f64 / relevant.len() as f64)
}

/// Binary-gain NDCG with `1 / log2(rank + 1)` discounts (1-based ranks).
pub fn ndcg_at_k(ranking: &[u32], relevant: &[u32], k: usize) -> Result<f64> {
    check_args(relevant, k)?;
    let dcg: f64 = hits(ranking, relevant, k)
        .map(|i| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..k.min(relevant.len()))
        .map(|i| 1.0 / ((i + 2) as f64).log2())
        .sum();
    Ok(dcg / idcg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtK {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
}

/// Averaged metrics over evaluable users plus their ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_k: Vec<AtK>,
    pub ensemble: f64,
    pub users_evaluated: usize,
}

impl EvalResult {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.per_k.iter().find(|m| m.k == k).map(|m| m.recall)
    }

    pub fn ndcg(&self, k: usize) -> Option<f64> {
        self.per_k.iter().find(|m| m.k == k).map(|m| m.ndcg)
    }
}

/// Aggregates per-user `(recall, ndcg)` rows, one entry per k, in user order.
pub fn aggregate(per_user: &[Vec<(f64, f64)>], ks: &[usize]) -> Result<EvalResult> {
    if per_user.is_empty() {
        return Err(BetError::InvalidArgument("no evaluable user".to_owned()));
    }
    let n = per_user.len() as f64;
    let mut per_k: Vec<AtK> = ks.iter().map(|&k| AtK { k, recall: 0.0, ndcg: 0.0 }).collect();
    let mut ensemble = 0.0;
    for row in per_user {
        let mut user_sum = 0.0;
        for (slot, &(r, g)) in per_k.iter_mut().zip(row) {
            slot.recall += r;
            slot.ndcg += g;
            user_sum += r + g;
        }
        ensemble += user_sum / (2 * ks.len()) as f64;
    }
    for slot in &mut per_k {
        slot.recall /= n;
        slot.ndcg /= n;
    }
    Ok(EvalResult {
        per_k,
        ensemble: ensemble / n,
        users_evaluated: per_user.len(),
    })
}

/// Evaluates `model` on `split` with full ranking over non-train items.
///
/// Users without relevant items in the split are skipped. Per-user work
/// runs in parallel; aggregation is in user order.
pub fn eval_ensemble(
    model: &Backbone,
    ds: &InteractionDataset,
    split: Split,
    ks: &[usize],
) -> Result<EvalResult> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(BetError::InvalidArgument(format!("invalid k set {ks:?}")));
    }
    let k_max = *ks.iter().max().unwrap();
    let relevant = ds.relevant_by_user(split);
    let d = model.d_max();
    let nu = model.num_users();
    let nv = model.num_items();

    let per_user: Vec<Vec<(f64, f64)>> = model.with_final_embeddings(|finals| {
        let items = &finals[nu * d..];
        (0..nu)
            .into_par_iter()
            .filter(|&u| !relevant[u].is_empty())
            .map(|u| {
                let eu = &finals[u * d..(u + 1) * d];
                let scores: Vec<f64> = (0..nv)
                    .map(|v| {
                        eu.iter()
                            .zip(&items[v * d..(v + 1) * d])
                            .map(|(a, b)| a * b)
                            .sum()
                    })
                    .collect();
                let ranking = top_k_by_scores(&scores, ds.train_items(u), k_max);
                ks.iter()
                    .map(|&k| {
                        Ok((
                            recall_at_k(&ranking, &relevant[u], k)?,
                            ndcg_at_k(&ranking, &relevant[u], k)?,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;

    aggregate(&per_user, ks).map_err(|_| {
        BetError::InvalidArgument(format!("no user has relevant items in the {split:?} split"))
    })
}

/// Caches `eval(E | D_val)` of the full pretrained model so fitness ratios
/// `r_a = eval(E ⊙ M_a | D_val) / eval(E | D_val)` need one evaluation each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessReference {
    pub denominator: EvalResult,
    pub ks: Vec<usize>,
}

impl FitnessReference {
    pub fn new(pretrained: &Backbone, ds: &InteractionDataset, ks: &[usize]) -> Result<Self> {
        let denominator = eval_ensemble(pretrained, ds, Split::Val, ks)?;
        Self::from_eval(denominator, ks)
    }

    pub fn from_eval(denominator: EvalResult, ks: &[usize]) -> Result<Self> {
        if !(denominator.ensemble > 0.0 && denominator.ensemble.is_finite()) {
            return Err(BetError::Numeric(format!(
                "pretrained validation ensemble is {}; cannot form fitness ratios",
                denominator.ensemble
            )));
        }
        Ok(Self {
            denominator,
            ks: ks.to_vec(),
        })
    }

    pub fn ratio_of(&self, numerator: f64) -> f64 {
        numerator / self.denominator.ensemble
    }

    /// Fitness ratio of `model`, plus its validation result.
    pub fn ratio(&self, model: &Backbone, ds: &InteractionDataset) -> Result<(f64, EvalResult)> {
        let eval = eval_ensemble(model, ds, Split::Val, &self.ks)?;
        Ok((self.ratio_of(eval.ensemble), eval))
    }
}

pub fn fitness_ratio(
    finetuned: &Backbone,
    pretrained: &Backbone,
    ds: &InteractionDataset,
    ks: &[usize],
) -> Result<f64> {
    Ok(FitnessReference::new(pretrained, ds, ks)?.ratio(finetuned, ds)?.0)
}
