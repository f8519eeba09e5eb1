//! Interaction data: ingestion, per-user splits, frequencies and BPR sampling.
//!
//! Users and items are addressed by dense 0-based indices. A dataset keeps
//! the three splits as `(user, item)` pairs, the train-split frequencies of
//! every entity, and a per-user sorted list of train items for fast
//! membership checks during negative sampling and evaluation.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{BetError, Result};
use crate::seed::{rng_from, Rng};

/// Interactions as read from disk, before splitting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawInteractions {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    /// Deduplicated `(user, item)` pairs in first-appearance order.
    pub pairs: Vec<(u32, u32)>,
}

impl RawInteractions {
    pub fn num_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_ids.len()
    }
}

/// Reads `user_id <tab> item_id` lines. Ids are arbitrary strings and are
/// mapped to dense indices by first appearance; duplicate pairs are dropped.
/// Blank lines are skipped.
pub fn load_interactions(path: impl AsRef<Path>) -> Result<RawInteractions> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);

    let mut users: HashMap<String, u32> = HashMap::new();
    let mut items: HashMap<String, u32> = HashMap::new();
    let mut raw = RawInteractions {
        user_ids: Vec::new(),
        item_ids: Vec::new(),
        pairs: Vec::new(),
    };
    let mut seen = HashSet::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = if trimmed.contains('\t') {
            trimmed.split('\t').map(str::trim).collect()
        } else {
            trimmed.split_whitespace().collect()
        };
        if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
            return Err(BetError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("expected `user_id<TAB>item_id`, got {trimmed:?}"),
            });
        }
        let u = intern(&mut users, &mut raw.user_ids, fields[0]);
        let v = intern(&mut items, &mut raw.item_ids, fields[1]);
        if seen.insert((u, v)) {
            raw.pairs.push((u, v));
        }
    }

    if raw.pairs.is_empty() {
        return Err(BetError::Empty(format!("{} has no interactions", path.display())));
    }
    Ok(raw)
}

fn intern(map: &mut HashMap<String, u32>, ids: &mut Vec<String>, key: &str) -> u32 {
    if let Some(&idx) = map.get(key) {
        return idx;
    }
    let idx = ids.len() as u32;
    map.insert(key.to_owned(), idx);
    ids.push(key.to_owned());
    idx
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.5,
            val: 0.25,
            test: 0.25,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(BetError::InvalidArgument(format!(
                "split ratios must be positive, got {all:?}"
            )));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(BetError::InvalidArgument(format!(
                "split ratios must sum to 1, got {all:?}"
            )));
        }
        Ok(())
    }

    /// Per-user `(train, val, test)` counts for `n >= 3` interactions.
    ///
    /// Validation and test get at least one interaction each and train
    /// keeps at least one.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        debug_assert!(n >= 3);
        let mut n_val = ((n as f64 * self.val).round() as usize).max(1);
        let mut n_test = ((n as f64 * self.test).round() as usize).max(1);
        while n_val + n_test > n - 1 {
            if n_val >= n_test && n_val > 1 {
                n_val -= 1;
            } else {
                n_test -= 1;
            }
        }
        (n - n_val - n_test, n_val, n_test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A `(user, positive item, negative item)` training sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BprTriple {
    pub user: u32,
    pub pos: u32,
    pub neg: u32,
}

/// Immutable interaction dataset with deterministic splits.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    pub num_users: usize,
    pub num_items: usize,
    pub train: Vec<(u32, u32)>,
    pub val: Vec<(u32, u32)>,
    pub test: Vec<(u32, u32)>,
    pub user_freq: Vec<u32>,
    pub item_freq: Vec<u32>,
    pub seed: u64,
    pub ratios: SplitRatios,
    train_by_user: Vec<Vec<u32>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    num_users: usize,
    num_items: usize,
    seed: u64,
    ratios: [f64; 3],
}

impl InteractionDataset {
    /// Builds a dataset from explicit splits, recomputing the derived
    /// frequencies and checking every invariant.
    pub fn from_splits(
        num_users: usize,
        num_items: usize,
        train: Vec<(u32, u32)>,
        val: Vec<(u32, u32)>,
        test: Vec<(u32, u32)>,
        seed: u64,
        ratios: SplitRatios,
    ) -> Result<Self> {
        let mut pairs = HashSet::with_capacity(train.len() + val.len() + test.len());
        for &(u, v) in train.iter().chain(&val).chain(&test) {
            if u as usize >= num_users || v as usize >= num_items {
                return Err(BetError::InvalidArgument(format!(
                    "pair ({u}, {v}) outside {num_users} users x {num_items} items"
                )));
            }
            if !pairs.insert((u, v)) {
                return Err(BetError::InvalidArgument(format!(
                    "pair ({u}, {v}) appears more than once across splits"
                )));
            }
        }

        let mut user_freq = vec![0u32; num_users];
        let mut item_freq = vec![0u32; num_items];
        let mut train_by_user = vec![Vec::new(); num_users];
        for &(u, v) in &train {
            user_freq[u as usize] += 1;
            item_freq[v as usize] += 1;
            train_by_user[u as usize].push(v);
        }
        for items in &mut train_by_user {
            items.sort_unstable();
        }

        Ok(Self {
            num_users,
            num_items,
            train,
            val,
            test,
            user_freq,
            item_freq,
            seed,
            ratios,
            train_by_user,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn split(&self, split: Split) -> &[(u32, u32)] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Sorted train items of `user`.
    pub fn train_items(&self, user: usize) -> &[u32] {
        &self.train_by_user[user]
    }

    pub fn is_train_pair(&self, user: u32, item: u32) -> bool {
        self.train_by_user[user as usize].binary_search(&item).is_ok()
    }

    /// Relevant items per user for an evaluation split (sorted).
    pub fn relevant_by_user(&self, split: Split) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.num_users];
        for &(u, v) in self.split(split) {
            out[u as usize].push(v);
        }
        for items in &mut out {
            items.sort_unstable();
        }
        out
    }

    /// Writes `header.json` plus `train.tsv`, `val.tsv` and `test.tsv`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let header = DatasetHeader {
            num_users: self.num_users,
            num_items: self.num_items,
            seed: self.seed,
            ratios: [self.ratios.train, self.ratios.val, self.ratios.test],
        };
        fs::write(dir.join("header.json"), serde_json::to_string_pretty(&header)?)?;
        for (name, pairs) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            let mut w = BufWriter::new(fs::File::create(dir.join(format!("{name}.tsv")))?);
            for (u, v) in pairs {
                writeln!(w, "{u}\t{v}")?;
            }
            w.flush()?;
        }
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let header: DatasetHeader =
            serde_json::from_str(&fs::read_to_string(dir.join("header.json"))?)?;
        let read = |name: &str| -> Result<Vec<(u32, u32)>> {
            let path = dir.join(format!("{name}.tsv"));
            let text = fs::read_to_string(&path)?;
            text.lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    let mut it = l.split('\t');
                    let parse = |s: Option<&str>| s.and_then(|s| s.trim().parse::<u32>().ok());
                    match (parse(it.next()), parse(it.next()), it.next()) {
                        (Some(u), Some(v), None) => Ok((u, v)),
                        _ => Err(BetError::Parse {
                            path: path.clone(),
                            line: i + 1,
                            message: format!("expected `user<TAB>item` indices, got {l:?}"),
                        }),
                    }
                })
                .collect()
        };
        let ratios = SplitRatios {
            train: header.ratios[0],
            val: header.ratios[1],
            test: header.ratios[2],
        };
        Self::from_splits(
            header.num_users,
            header.num_items,
            read("train")?,
            read("val")?,
            read("test")?,
            header.seed,
            ratios,
        )
    }
}

/// Splits raw interactions per user.
///
/// Users with fewer than three interactions are dropped and the remaining
/// users are re-indexed densely in their original order. Item indices are
/// kept as-is.
pub fn split(raw: &RawInteractions, ratios: SplitRatios, seed: u64) -> Result<InteractionDataset> {
    ratios.validate()?;
    let mut by_user: Vec<Vec<u32>> = vec![Vec::new(); raw.num_users()];
    for &(u, v) in &raw.pairs {
        by_user[u as usize].push(v);
    }

    let dropped = by_user.iter().filter(|items| items.len() < 3).count();
    if dropped > 0 {
        log::warn!("dropped {dropped} users with fewer than 3 interactions");
    }
    if dropped == by_user.len() {
        return Err(BetError::TooSparse(
            "no user has at least 3 interactions".to_owned(),
        ));
    }

    let mut rng = rng_from(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut next_user = 0u32;
    for items in by_user.iter_mut().filter(|items| items.len() >= 3) {
        let u = next_user;
        next_user += 1;
        items.shuffle(&mut rng);
        let (n_train, n_val, _) = ratios.counts(items.len());
        for (i, &v) in items.iter().enumerate() {
            if i < n_train {
                train.push((u, v));
            } else if i < n_train + n_val {
                val.push((u, v));
            } else {
                test.push((u, v));
            }
        }
    }

    InteractionDataset::from_splits(
        next_user as usize,
        raw.num_items(),
        train,
        val,
        test,
        seed,
        ratios,
    )
}

/// Parameters of the synthetic power-law corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub interactions: usize,
    pub popularity_exponent: f64,
    pub seed: u64,
    #[serde(default)]
    pub ratios: SplitRatios,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_users: 1000,
            num_items: 2000,
            interactions: 30_000,
            popularity_exponent: 1.0,
            seed: 0,
            ratios: SplitRatios::default(),
        }
    }
}

/// Generates a corpus whose item popularity follows `(rank + 1)^-exponent`,
/// then splits it.
///
/// Every user receives three interactions plus a uniform share of the rest;
/// items for a user are drawn by popularity without replacement
/// (Efraimidis–Spirakis keys), so duplicates never occur.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<InteractionDataset> {
    let SyntheticConfig {
        num_users,
        num_items,
        interactions,
        popularity_exponent,
        seed,
        ratios,
    } = cfg.clone();
    if num_users == 0 || num_items < 3 {
        return Err(BetError::InvalidArgument(
            "need at least one user and three items".to_owned(),
        ));
    }
    if interactions < 3 * num_users {
        return Err(BetError::InvalidArgument(format!(
            "{interactions} interactions < 3 x {num_users} users"
        )));
    }
    if interactions as u128 > num_users as u128 * num_items as u128 {
        return Err(BetError::InvalidArgument(format!(
            "{interactions} interactions do not fit a {num_users} x {num_items} grid"
        )));
    }
    if !popularity_exponent.is_finite() || popularity_exponent < 0.0 {
        return Err(BetError::InvalidArgument(format!(
            "popularity exponent must be finite and >= 0, got {popularity_exponent}"
        )));
    }

    let mut rng = rng_from(crate::seed::derive_seed(seed, &[crate::seed::STREAM_DATA]));

    let mut counts = vec![3usize; num_users];
    let mut open: Vec<usize> = (0..num_users).filter(|&u| counts[u] < num_items).collect();
    for _ in 0..interactions - 3 * num_users {
        let slot = rng.random_range(0..open.len());
        let u = open[slot];
        counts[u] += 1;
        if counts[u] == num_items {
            open.swap_remove(slot);
        }
    }

    let weights: Vec<f64> = (0..num_items)
        .map(|j| ((j + 1) as f64).powf(-popularity_exponent))
        .collect();
    let mut pairs = Vec::with_capacity(interactions);
    let mut keys: Vec<(f64, u32)> = Vec::with_capacity(num_items);
    for (u, &k) in counts.iter().enumerate() {
        keys.clear();
        keys.extend(weights.iter().enumerate().map(|(j, &w)| {
            let r: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (r.ln() / w, j as u32)
        }));
        // Largest keys win; ties broken by lower item index.
        let cmp = |a: &(f64, u32), b: &(f64, u32)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if k < num_items {
            keys.select_nth_unstable_by(k, cmp);
        }
        let chosen = &mut keys[..k];
        chosen.sort_unstable_by(cmp);
        pairs.extend(chosen.iter().map(|&(_, j)| (u as u32, j)));
    }

    let raw = RawInteractions {
        user_ids: (0..num_users).map(|u| format!("u{u}")).collect(),
        item_ids: (0..num_items).map(|j| format!("i{j}")).collect(),
        pairs,
    };
    split(&raw, ratios, seed)
}

/// Draws `batch_size` BPR triples: positives uniformly from train, negatives
/// uniformly from items with rejection of the user's train items.
pub fn sample_bpr_batch(
    ds: &InteractionDataset,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<BprTriple>> {
    if batch_size == 0 {
        return Err(BetError::InvalidArgument("batch_size must be >= 1".to_owned()));
    }
    if ds.train.is_empty() {
        return Err(BetError::Empty("train split".to_owned()));
    }
    (0..batch_size)
        .map(|_| {
            let (user, pos) = ds.train[rng.random_range(0..ds.train.len())];
            if ds.train_items(user as usize).len() >= ds.num_items {
                return Err(BetError::NoNegatives { user: user as usize });
            }
            let neg = loop {
                let cand = rng.random_range(0..ds.num_items as u32);
                if !ds.is_train_pair(user, cand) {
                    break cand;
                }
            };
            Ok(BprTriple { user, pos, neg })
        })
        .collect()
}
