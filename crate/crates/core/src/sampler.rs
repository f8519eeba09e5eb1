//! Budget-aware table-level action sampling.
//!
//! An action assigns an embedding size in `[1, d_max]` to every user and
//! item. Sizes are drawn as fractions of the budget from a randomly chosen,
//! randomly parameterized distribution per field, handed out in decreasing
//! frequency order, and finally repaired so that `Σ d_n ≤ B` always holds.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{BetError, Result};
use crate::seed::Rng;

/// Lower bound of every drawn shape parameter.
pub const BETA_FLOOR: f64 = 0.01;

/// Substitute for a probability that kept sampling as exactly zero.
const ZERO_FALLBACK: f64 = 1e-12;
const ZERO_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionKind {
    PowerLaw,
    TruncatedExponential,
    TruncatedNormal,
    LogNormal,
    /// `Uniform(0, 1)` probabilities, used by the SR baseline.
    Uniform,
    /// Equal sizes for everyone, used by the SU baseline.
    Constant,
}

impl DistributionKind {
    /// The four families the search sampler draws from.
    pub const SEARCH: [DistributionKind; 4] = [
        DistributionKind::PowerLaw,
        DistributionKind::TruncatedExponential,
        DistributionKind::TruncatedNormal,
        DistributionKind::LogNormal,
    ];

    pub fn beta_max(self) -> f64 {
        match self {
            DistributionKind::PowerLaw => 20.0,
            DistributionKind::TruncatedExponential => 5.0,
            DistributionKind::TruncatedNormal => 20.0,
            DistributionKind::LogNormal => 0.5,
            DistributionKind::Uniform | DistributionKind::Constant => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub kind: DistributionKind,
    pub beta: f64,
}

/// Picks a family uniformly and `β ~ Uniform(BETA_FLOOR, β_max]`.
pub fn draw_distribution(rng: &mut Rng) -> DistributionSpec {
    let kind = DistributionKind::SEARCH[rng.random_range(0..DistributionKind::SEARCH.len())];
    let u: f64 = rng.random();
    let beta = BETA_FLOOR + (kind.beta_max() - BETA_FLOOR) * (1.0 - u);
    DistributionSpec { kind, beta }
}

/// Draws one positive sample by inverse-CDF transform.
fn draw_one(spec: DistributionSpec, std_normal: &Normal, rng: &mut Rng) -> f64 {
    let beta = spec.beta;
    for _ in 0..ZERO_RETRIES {
        let x = match spec.kind {
            DistributionKind::PowerLaw => rng.random::<f64>().powf(1.0 / beta),
            DistributionKind::TruncatedExponential => {
                let u: f64 = rng.random();
                -(-u * (-(-beta).exp_m1())).ln_1p()
            }
            DistributionKind::TruncatedNormal => {
                let u: f64 = rng.random();
                let lo = 0.5;
                let hi = std_normal.cdf(beta);
                let x = std_normal.inverse_cdf(lo + u * (hi - lo));
                if x.is_finite() {
                    x.clamp(0.0, beta)
                } else {
                    beta
                }
            }
            DistributionKind::LogNormal => {
                let z: f64 = StandardNormal.sample(rng);
                (beta * z).exp()
            }
            DistributionKind::Uniform => rng.random::<f64>(),
            DistributionKind::Constant => 1.0,
        };
        if x > 0.0 && x.is_finite() {
            return x;
        }
    }
    ZERO_FALLBACK
}

/// `count` i.i.d. positive samples from `spec`.
pub fn draw_probabilities(spec: DistributionSpec, count: usize, rng: &mut Rng) -> Vec<f64> {
    let std_normal = Normal::standard();
    (0..count).map(|_| draw_one(spec, &std_normal, rng)).collect()
}

/// Scales positive weights to fractions summing to one.
pub fn normalize(p: &[f64]) -> Result<Vec<f64>> {
    if p.is_empty() {
        return Err(BetError::InvalidArgument("cannot normalize an empty sequence".to_owned()));
    }
    if let Some(bad) = p.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
        return Err(BetError::InvalidArgument(format!(
            "normalize requires positive finite inputs, got {bad}"
        )));
    }
    let total: f64 = p.iter().sum();
    Ok(p.iter().map(|&x| x / total).collect())
}

/// `B = ⌊(1 − c)·entities·d_max⌋`, the retained-parameter budget at sparsity `c`.
pub fn budget_for(num_entities: usize, d_max: usize, sparsity: f64) -> Result<u64> {
    if !(sparsity > 0.0 && sparsity < 1.0) {
        return Err(BetError::InvalidArgument(format!(
            "sparsity must lie in (0, 1), got {sparsity}"
        )));
    }
    let raw = (1.0 - sparsity) * num_entities as f64 * d_max as f64;
    // Absorb representation error of decimal `c` (0.9 → 0.09999999999999998).
    Ok((raw + 1e-6).floor() as u64)
}

/// One embedding size per user and item, plus how it was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeAction {
    pub budget: u64,
    pub w: f64,
    pub dist_u: DistributionKind,
    pub beta_u: f64,
    pub dist_v: DistributionKind,
    pub beta_v: f64,
    pub num_users: usize,
    pub d_max: u32,
    sizes: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitness: Option<f64>,
}

impl SizeAction {
    /// Sizes for all entities: users first, then items.
    pub fn sizes(&self) -> &[u32] {
        &self.sizes
    }

    pub fn user_sizes(&self) -> &[u32] {
        &self.sizes[..self.num_users]
    }

    pub fn item_sizes(&self) -> &[u32] {
        &self.sizes[self.num_users..]
    }

    pub fn num_entities(&self) -> usize {
        self.sizes.len()
    }

    pub fn total_params(&self) -> u64 {
        self.sizes.iter().map(|&s| s as u64).sum()
    }

    /// Builds an action from explicit sizes; checks range and budget.
    pub fn from_sizes(sizes: Vec<u32>, num_users: usize, d_max: u32, budget: u64) -> Result<Self> {
        let action = Self {
            budget,
            w: f64::NAN,
            dist_u: DistributionKind::Constant,
            beta_u: 0.0,
            dist_v: DistributionKind::Constant,
            beta_v: 0.0,
            num_users,
            d_max,
            sizes,
            fitness: None,
        };
        action.validate()?;
        Ok(Self {
            w: action.user_sizes().iter().map(|&s| s as f64).sum::<f64>()
                / action.total_params().max(1) as f64,
            ..action
        })
    }

    /// Checks the size range and the hard budget cap.
    pub fn validate(&self) -> Result<()> {
        if self.num_users > self.sizes.len() {
            return Err(BetError::InvalidArgument("num_users exceeds action length".to_owned()));
        }
        if let Some((row, &size)) = self
            .sizes
            .iter()
            .enumerate()
            .find(|(_, &s)| s == 0 || s > self.d_max)
        {
            return Err(BetError::SizeOutOfRange {
                row,
                size,
                d_max: self.d_max,
            });
        }
        let total = self.total_params();
        if total > self.budget {
            return Err(BetError::InvalidArgument(format!(
                "action uses {total} parameters, budget is {}",
                self.budget
            )));
        }
        Ok(())
    }
}

/// `S_d = {n : d_n = d}` for `d = 1..=d_max`; index `d - 1` holds `S_d`.
/// Members are entity rows (users first, then items) in ascending order.
pub fn action_as_sets(action: &SizeAction) -> Vec<Vec<usize>> {
    let mut sets = vec![Vec::new(); action.d_max as usize];
    for (n, &d) in action.sizes.iter().enumerate() {
        sets[d as usize - 1].push(n);
    }
    sets
}

/// Frequency-aware action generator for one dataset and sparsity target.
///
/// Orders are computed once so that generating many candidates is cheap.
#[derive(Debug, Clone)]
pub struct ActionSampler {
    num_users: usize,
    num_items: usize,
    d_max: usize,
    budget: u64,
    /// Users by decreasing frequency, ties by ascending id.
    user_order: Vec<usize>,
    /// Items by decreasing frequency, ties by ascending id (item-local ids).
    item_order: Vec<usize>,
    /// Global repair sweep: ascending frequency, items before users, then
    /// descending id. Entries are entity rows.
    repair_order: Vec<usize>,
}

fn descending_frequency(freq: &[u32]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..freq.len()).collect();
    order.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(a.cmp(&b)));
    order
}

impl ActionSampler {
    pub fn new(user_freq: &[u32], item_freq: &[u32], d_max: usize, sparsity: f64) -> Result<Self> {
        if d_max == 0 {
            return Err(BetError::InvalidArgument("d_max must be >= 1".to_owned()));
        }
        let num_users = user_freq.len();
        let num_items = item_freq.len();
        let entities = num_users + num_items;
        let budget = budget_for(entities, d_max, sparsity)?;
        if budget < entities as u64 {
            return Err(BetError::BudgetInfeasible { budget, entities });
        }

        // (frequency, field rank: items 0 / users 1, Reverse(id)) ascending.
        let mut repair_order: Vec<usize> = (0..entities).collect();
        let key = |n: usize| {
            if n < num_users {
                (user_freq[n], 1u8, std::cmp::Reverse(n))
            } else {
                (item_freq[n - num_users], 0u8, std::cmp::Reverse(n))
            }
        };
        repair_order.sort_by_key(|&n| key(n));

        Ok(Self {
            num_users,
            num_items,
            d_max,
            budget,
            user_order: descending_frequency(user_freq),
            item_order: descending_frequency(item_freq),
            repair_order,
        })
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn num_entities(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    /// Draws independent user/item distributions and a user share `w`, then
    /// allocates sizes.
    pub fn generate(&self, rng: &mut Rng) -> Result<SizeAction> {
        let spec_u = draw_distribution(rng);
        let spec_v = draw_distribution(rng);
        let w: f64 = rng.random();
        let p_u = draw_probabilities(spec_u, self.num_users, rng);
        let p_v = draw_probabilities(spec_v, self.num_items, rng);
        self.allocate(&p_u, &p_v, w, spec_u, spec_v)
    }

    /// Random-size baseline: `Uniform(0, 1)` probabilities, random `w`.
    pub fn sr(&self, rng: &mut Rng) -> Result<SizeAction> {
        let spec = DistributionSpec {
            kind: DistributionKind::Uniform,
            beta: 1.0,
        };
        let w: f64 = rng.random();
        let p_u = draw_probabilities(spec, self.num_users, rng);
        let p_v = draw_probabilities(spec, self.num_items, rng);
        self.allocate(&p_u, &p_v, w, spec, spec)
    }

    /// Uniform-size baseline: everyone gets `⌊B / N⌋` clamped to `[1, d_max]`.
    pub fn su(&self) -> SizeAction {
        let entities = self.num_entities() as u64;
        let size = (self.budget / entities).clamp(1, self.d_max as u64) as u32;
        let spec = DistributionKind::Constant;
        SizeAction {
            budget: self.budget,
            w: self.num_users as f64 / self.num_entities() as f64,
            dist_u: spec,
            beta_u: 0.0,
            dist_v: spec,
            beta_v: 0.0,
            num_users: self.num_users,
            d_max: self.d_max as u32,
            sizes: vec![size; self.num_entities()],
            fitness: None,
        }
    }

    /// Turns per-field weights into sizes: normalize, scale by the field's
    /// share of the budget, floor, clamp, hand out by frequency, repair.
    pub fn allocate(
        &self,
        p_u: &[f64],
        p_v: &[f64],
        w: f64,
        spec_u: DistributionSpec,
        spec_v: DistributionSpec,
    ) -> Result<SizeAction> {
        if p_u.len() != self.num_users || p_v.len() != self.num_items {
            return Err(BetError::InvalidArgument(format!(
                "expected {} user and {} item weights, got {} and {}",
                self.num_users,
                self.num_items,
                p_u.len(),
                p_v.len()
            )));
        }
        if !(0.0..=1.0).contains(&w) {
            return Err(BetError::InvalidArgument(format!("w must lie in [0, 1], got {w}")));
        }
        let budget = self.budget as f64;
        let mut sizes = vec![0u32; self.num_entities()];
        let mut place = |p: &[f64], share: f64, order: &[usize], offset: usize| -> Result<()> {
            if p.is_empty() {
                return Ok(());
            }
            let mut raw: Vec<u32> = normalize(p)?
                .into_iter()
                .map(|f| ((f * share * budget).floor() as u64).clamp(1, self.d_max as u64) as u32)
                .collect();
            raw.sort_unstable_by(|a, b| b.cmp(a));
            for (&entity, size) in order.iter().zip(raw) {
                sizes[offset + entity] = size;
            }
            Ok(())
        };
        place(p_u, w, &self.user_order, 0)?;
        place(p_v, 1.0 - w, &self.item_order, self.num_users)?;
        self.repair(&mut sizes);

        let action = SizeAction {
            budget: self.budget,
            w,
            dist_u: spec_u.kind,
            beta_u: spec_u.beta,
            dist_v: spec_v.kind,
            beta_v: spec_v.beta,
            num_users: self.num_users,
            d_max: self.d_max as u32,
            sizes,
            fitness: None,
        };
        debug_assert!(action.validate().is_ok());
        Ok(action)
    }

    /// Decrements sizes along the ascending-frequency sweep until the budget
    /// holds. Each full sweep removes at least one parameter while any size
    /// exceeds one, and `B ≥ N` makes all-ones feasible, so this terminates.
    fn repair(&self, sizes: &mut [u32]) {
        let mut total: u64 = sizes.iter().map(|&s| s as u64).sum();
        while total > self.budget {
            let before = total;
            for &n in &self.repair_order {
                if total <= self.budget {
                    break;
                }
                if sizes[n] > 1 {
                    sizes[n] -= 1;
                    total -= 1;
                }
            }
            assert!(total < before, "repair made no progress; budget below entity count");
        }
    }
}

/// Convenience wrapper over [`ActionSampler::generate`].
pub fn generate_action(
    user_freq: &[u32],
    item_freq: &[u32],
    sparsity: f64,
    d_max: usize,
    rng: &mut Rng,
) -> Result<SizeAction> {
    ActionSampler::new(user_freq, item_freq, d_max, sparsity)?.generate(rng)
}

pub fn su_action(user_freq: &[u32], item_freq: &[u32], sparsity: f64, d_max: usize) -> Result<SizeAction> {
    Ok(ActionSampler::new(user_freq, item_freq, d_max, sparsity)?.su())
}

pub fn sr_action(
    user_freq: &[u32],
    item_freq: &[u32],
    sparsity: f64,
    d_max: usize,
    rng: &mut Rng,
) -> Result<SizeAction> {
    ActionSampler::new(user_freq, item_freq, d_max, sparsity)?.sr(rng)
}
