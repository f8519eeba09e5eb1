//! The iterative search loop and selective retraining.
//!
//! Each iteration draws `m` budget-feasible candidates, picks one according
//! to the strategy schedule, finetunes a fresh copy of the pretrained
//! backbone under it, measures its fitness ratio on the validation split and
//! feeds the pair back into the surrogate. Only `T` finetunes happen in total.

use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, ScorerKind, TrainConfig, TrainReport};
use crate::dataset::{InteractionDataset, Split};
use crate::error::{BetError, Result};
use crate::metrics::{eval_ensemble, EvalResult, FitnessReference};
use crate::predictor::{train_predictor, FitnessPredictor, Population, Surrogate, DEFAULT_PREDICTOR_LR};
use crate::sampler::{ActionSampler, SizeAction};
use crate::seed::{
    derive_seed, derived_rng, Rng, STREAM_CANDIDATE, STREAM_FINETUNE, STREAM_PREDICTOR_INIT,
    STREAM_PREDICTOR_UPDATE, STREAM_RETRAIN, STREAM_SELECT,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub iterations: usize,
    pub candidates: usize,
    pub sparsity: f64,
    pub d_max: usize,
    pub finetune_epochs: usize,
    pub predictor_updates: usize,
    pub predictor_lr: f64,
    pub retrain_top_k: usize,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            candidates: 100,
            sparsity: 0.8,
            d_max: 128,
            finetune_epochs: 10,
            predictor_updates: 2,
            predictor_lr: DEFAULT_PREDICTOR_LR,
            retrain_top_k: 5,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("iterations", self.iterations),
            ("candidates", self.candidates),
            ("d_max", self.d_max),
            ("finetune_epochs", self.finetune_epochs),
            ("predictor_updates", self.predictor_updates),
            ("retrain_top_k", self.retrain_top_k),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(BetError::Config(format!("{name} must be >= 1")));
        }
        if !(self.sparsity > 0.0 && self.sparsity < 1.0) {
            return Err(BetError::Config(format!(
                "sparsity must lie in (0, 1), got {}",
                self.sparsity
            )));
        }
        if !(self.predictor_lr.is_finite() && self.predictor_lr > 0.0) {
            return Err(BetError::Config(format!(
                "predictor_lr must be positive, got {}",
                self.predictor_lr
            )));
        }
        Ok(())
    }
}

/// Candidate selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Highest predicted fitness.
    I,
    /// Uniformly random candidate.
    II,
    /// Candidate nearest to the best measured action in predictor space.
    III,
}

/// `t mod 5 ∈ {0,1,2}` → I, `3` → II, `4` → III.
pub fn strategy_for(t: usize) -> Strategy {
    match t % 5 {
        3 => Strategy::II,
        4 => Strategy::III,
        _ => Strategy::I,
    }
}

/// Outcome of [`select_action`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub index: usize,
    /// The strategy actually applied (III falls back to II on an empty population).
    pub strategy: Strategy,
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn select_action<S: Surrogate + Sync>(
    strategy: Strategy,
    candidates: &[SizeAction],
    surrogate: &S,
    population: &Population,
    rng: &mut Rng,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(BetError::InvalidArgument("no candidate actions".to_owned()));
    }
    let strategy = match strategy {
        Strategy::III if population.is_empty() => Strategy::II,
        s => s,
    };
    let index = match strategy {
        Strategy::I => {
            let scores = candidates
                .par_iter()
                .map(|a| surrogate.predict(a))
                .collect::<Result<Vec<_>>>()?;
            argmax(&scores)
        }
        Strategy::II => rng.random_range(0..candidates.len()),
        Strategy::III => {
            let best = population.best().expect("nonempty population");
            let anchor = surrogate.embed(&population.entries()[best])?;
            let dists = candidates
                .par_iter()
                .map(|a| surrogate.embed(a).map(|h| -sq_distance(&h, &anchor)))
                .collect::<Result<Vec<_>>>()?;
            argmax(&dists)
        }
    };
    Ok(Selection { index, strategy })
}

/// One line of `iterations.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub strategy: Strategy,
    pub candidate_index: usize,
    pub total_params: u64,
    pub budget: u64,
    pub mean_user_size: f64,
    pub mean_item_size: f64,
    /// Surrogate estimate for the chosen action before it was measured.
    pub predicted_fitness: f64,
    pub fitness: f64,
    pub val_ensemble: f64,
    /// Mean of the pre-update squared errors of this iteration's predictor steps.
    pub predictor_loss: f64,
    pub wall_seconds: f64,
}

fn mean_size(sizes: &[u32]) -> f64 {
    if sizes.is_empty() {
        0.0
    } else {
        sizes.iter().map(|&s| s as f64).sum::<f64>() / sizes.len() as f64
    }
}

/// Receives every finished iteration; used to flush partial results.
pub trait SearchObserver {
    fn on_iteration(&mut self, record: &IterationRecord, population: &Population) -> Result<()>;
}

impl SearchObserver for () {
    fn on_iteration(&mut self, _: &IterationRecord, _: &Population) -> Result<()> {
        Ok(())
    }
}

impl<F: FnMut(&IterationRecord, &Population) -> Result<()>> SearchObserver for F {
    fn on_iteration(&mut self, record: &IterationRecord, population: &Population) -> Result<()> {
        self(record, population)
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub population: Population,
    pub records: Vec<IterationRecord>,
    pub predictor: FitnessPredictor,
    pub reference: FitnessReference,
    /// Number of full finetune-and-measure evaluations performed.
    pub finetunes: usize,
}

/// Draws the `m` candidates of iteration `t`, each from its own seed.
pub fn sample_candidates(sampler: &ActionSampler, master: u64, t: usize, m: usize) -> Result<Vec<SizeAction>> {
    (0..m)
        .into_par_iter()
        .map(|i| sampler.generate(&mut derived_rng(master, &[STREAM_CANDIDATE, t as u64, i as u64])))
        .collect()
}

pub fn run_search(
    ds: &InteractionDataset,
    pretrained: &Backbone,
    train_cfg: &TrainConfig,
    cfg: &SearchConfig,
    observer: &mut dyn SearchObserver,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    train_cfg.validate()?;
    if pretrained.d_max() != cfg.d_max {
        return Err(BetError::Config(format!(
            "pretrained model has d_max {}, search expects {}",
            pretrained.d_max(),
            cfg.d_max
        )));
    }
    let sampler = ActionSampler::new(&ds.user_freq, &ds.item_freq, cfg.d_max, cfg.sparsity)?;
    let reference = FitnessReference::new(pretrained, ds, &train_cfg.metric_ks)?;
    let mut predictor = FitnessPredictor::new(
        &ds.user_freq,
        &ds.item_freq,
        cfg.d_max,
        &mut derived_rng(cfg.seed, &[STREAM_PREDICTOR_INIT]),
    )?;
    let mut population = Population::new();
    let mut records = Vec::with_capacity(cfg.iterations);
    let mut finetunes = 0usize;
    log::info!(
        "search: T={} m={} c={} budget={}",
        cfg.iterations,
        cfg.candidates,
        cfg.sparsity,
        sampler.budget()
    );

    for t in 1..=cfg.iterations {
        let start = Instant::now();
        let tt = t as u64;
        let candidates = sample_candidates(&sampler, cfg.seed, t, cfg.candidates)?;
        let selection = select_action(
            strategy_for(t),
            &candidates,
            &predictor,
            &population,
            &mut derived_rng(cfg.seed, &[STREAM_SELECT, tt]),
        )?;
        let action = candidates[selection.index].clone();
        action.validate()?;
        let predicted_fitness = predictor.predict_fitness(&action)?;

        let mut model = pretrained.clone();
        model.finetune(
            ds,
            &action,
            cfg.finetune_epochs,
            train_cfg,
            &mut derived_rng(cfg.seed, &[STREAM_FINETUNE, tt]),
        )?;
        finetunes += 1;
        let (fitness, eval) = reference.ratio(&model, ds)?;
        population.push(action.clone(), fitness)?;

        let predictor_loss = train_predictor(
            &mut predictor,
            &population,
            cfg.predictor_updates,
            cfg.predictor_lr,
            &mut derived_rng(cfg.seed, &[STREAM_PREDICTOR_UPDATE, tt]),
        )?;

        let record = IterationRecord {
            t,
            strategy: selection.strategy,
            candidate_index: selection.index,
            total_params: action.total_params(),
            budget: action.budget,
            mean_user_size: mean_size(action.user_sizes()),
            mean_item_size: mean_size(action.item_sizes()),
            predicted_fitness,
            fitness,
            val_ensemble: eval.ensemble,
            predictor_loss,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "t={t} strategy={:?} r={fitness:.4} r_hat={predicted_fitness:.4} mse={predictor_loss:.5}",
            record.strategy
        );
        observer.on_iteration(&record, &population)?;
        records.push(record);
    }

    Ok(SearchOutcome {
        population,
        records,
        predictor,
        reference,
        finetunes,
    })
}

/// Trains a freshly initialized backbone under `action` to convergence.
pub fn train_under_action(
    ds: &InteractionDataset,
    kind: ScorerKind,
    action: &SizeAction,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Backbone, TrainReport, EvalResult)> {
    let mut model = Backbone::new(ds, kind, action.d_max as usize, cfg.init_scale, seed)?;
    model.apply_action(action)?;
    let mut rng = derived_rng(seed, &[0]);
    let report = model.train(ds, cfg, &mut rng)?;
    let eval = eval_ensemble(&model, ds, Split::Val, &cfg.metric_ks)?;
    Ok((model, report, eval))
}

/// Per-candidate result of selective retraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainEntry {
    pub population_index: usize,
    pub fitness: f64,
    pub val_ensemble: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RetrainOutcome {
    pub population_index: usize,
    pub action: SizeAction,
    pub model: Backbone,
    pub eval: EvalResult,
    pub entries: Vec<RetrainEntry>,
}

/// Retrains the `top_k` fittest actions from scratch and keeps the one with
/// the best validation ensemble (ties by fitness rank).
pub fn selective_retrain(
    population: &Population,
    ds: &InteractionDataset,
    kind: ScorerKind,
    cfg: &TrainConfig,
    top_k: usize,
    seed: u64,
) -> Result<RetrainOutcome> {
    if population.is_empty() {
        return Err(BetError::InvalidArgument("population is empty".to_owned()));
    }
    let top: Vec<usize> = population.ranked().into_iter().take(top_k.max(1)).collect();
    let runs: Vec<Result<(Backbone, TrainReport, EvalResult)>> = top
        .par_iter()
        .map(|&i| {
            let action = &population.entries()[i];
            action.validate()?;
            train_under_action(ds, kind, action, cfg, derive_seed(seed, &[STREAM_RETRAIN, i as u64]))
        })
        .collect();

    let mut entries = Vec::with_capacity(top.len());
    let mut best: Option<(usize, f64)> = None;
    for (rank, (&i, run)) in top.iter().zip(&runs).enumerate() {
        let entry = match run {
            Ok((_, _, eval)) => {
                if best.is_none_or(|(_, b)| eval.ensemble > b) {
                    best = Some((rank, eval.ensemble));
                }
                RetrainEntry {
                    population_index: i,
                    fitness: population.fitness(i),
                    val_ensemble: Some(eval.ensemble),
                    error: None,
                }
            }
            Err(e) => RetrainEntry {
                population_index: i,
                fitness: population.fitness(i),
                val_ensemble: None,
                error: Some(e.to_string()),
            },
        };
        log::info!("retrain #{i}: {:?}", entry.val_ensemble);
        entries.push(entry);
    }
    let Some((rank, _)) = best else {
        let detail: Vec<String> = entries
            .iter()
            .map(|e| format!("#{}: {}", e.population_index, e.error.as_deref().unwrap_or("?")))
            .collect();
        return Err(BetError::Numeric(format!("every retrain failed: {}", detail.join("; "))));
    };
    let (model, _, eval) = runs.into_iter().nth(rank).unwrap()?;
    let population_index = top[rank];
    Ok(RetrainOutcome {
        population_index,
        action: population.entries()[population_index].clone(),
        model,
        eval,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticConfig};
    use crate::seed::rng_from;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn dummy(n: usize) -> Vec<SizeAction> {
        (0..n)
            .map(|i| SizeAction::from_sizes(vec![1 + (i as u32 % 2), 1], 1, 2, 4).unwrap())
            .collect()
    }

    struct IndexStub {
        predicts: AtomicUsize,
        embeds: AtomicUsize,
        lookup: Vec<(Vec<u32>, f64, Vec<f64>)>,
    }

    impl Surrogate for IndexStub {
        fn predict(&self, a: &SizeAction) -> Result<f64> {
            self.predicts.fetch_add(1, Ordering::SeqCst);
            Ok(self.lookup.iter().find(|(s, _, _)| s == a.sizes()).unwrap().1)
        }
        fn embed(&self, a: &SizeAction) -> Result<Vec<f64>> {
            self.embeds.fetch_add(1, Ordering::SeqCst);
            Ok(self.lookup.iter().find(|(s, _, _)| s == a.sizes()).unwrap().2.clone())
        }
    }

    fn distinct(n: usize) -> Vec<SizeAction> {
        (0..n)
            .map(|i| SizeAction::from_sizes(vec![1, 1 + i as u32], 1, 16, 32).unwrap())
            .collect()
    }

    #[test]
    fn schedule() {
        assert_eq!(strategy_for(1), Strategy::I);
        assert_eq!(strategy_for(2), Strategy::I);
        assert_eq!(strategy_for(3), Strategy::II);
        assert_eq!(strategy_for(4), Strategy::III);
        assert_eq!(strategy_for(5), Strategy::I);
        assert_eq!(strategy_for(10), Strategy::I);
        let s: Vec<Strategy> = (1..=20).map(strategy_for).collect();
        assert_eq!(s.iter().filter(|&&x| x == Strategy::II).count(), 4);
        assert_eq!(s.iter().filter(|&&x| x == Strategy::III).count(), 4);
    }

    #[test]
    fn strategy_one_takes_argmax() {
        let cands = distinct(5);
        let stub = IndexStub {
            predicts: AtomicUsize::new(0),
            embeds: AtomicUsize::new(0),
            lookup: cands.iter().enumerate().map(|(i, a)| (a.sizes().to_vec(), i as f64, vec![])).collect(),
        };
        let sel = select_action(Strategy::I, &cands, &stub, &Population::new(), &mut rng_from(0)).unwrap();
        assert_eq!(sel.index, 4);
        assert_eq!(stub.predicts.load(Ordering::SeqCst), 5);
    }

    #[test]
    fn strategy_three_is_nearest_neighbour_without_fitness_calls() {
        let cands = distinct(3);
        let best = SizeAction::from_sizes(vec![2, 2], 1, 16, 32).unwrap();
        let mut lookup = vec![(best.sizes().to_vec(), 0.0, vec![0.0, 0.0])];
        lookup.push((cands[0].sizes().to_vec(), 0.0, vec![0.5, 0.0]));
        lookup.push((cands[1].sizes().to_vec(), 0.0, vec![0.0, 0.2]));
        lookup.push((cands[2].sizes().to_vec(), 0.0, vec![0.2, 0.0]));
        let stub = IndexStub { predicts: AtomicUsize::new(0), embeds: AtomicUsize::new(0), lookup };
        let mut pop = Population::new();
        pop.push(cands[0].clone(), 0.1).unwrap();
        pop.push(best, 0.9).unwrap();
        let sel = select_action(Strategy::III, &cands, &stub, &pop, &mut rng_from(0)).unwrap();
        assert_eq!(sel.index, 1);
        assert_eq!(sel.strategy, Strategy::III);
        assert_eq!(stub.predicts.load(Ordering::SeqCst), 0);
        assert_eq!(stub.embeds.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn strategy_three_falls_back_on_empty_population() {
        let cands = dummy(4);
        let stub = IndexStub { predicts: AtomicUsize::new(0), embeds: AtomicUsize::new(0), lookup: vec![] };
        let sel = select_action(Strategy::III, &cands, &stub, &Population::new(), &mut rng_from(3)).unwrap();
        assert_eq!(sel.strategy, Strategy::II);
        assert_eq!(stub.embeds.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn strategy_two_is_reproducible() {
        let cands = dummy(50);
        let stub = IndexStub { predicts: AtomicUsize::new(0), embeds: AtomicUsize::new(0), lookup: vec![] };
        let pick = |seed| select_action(Strategy::II, &cands, &stub, &Population::new(), &mut rng_from(seed)).unwrap();
        assert_eq!(pick(11), pick(11));
        assert!(select_action(Strategy::II, &[], &stub, &Population::new(), &mut rng_from(0)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SearchConfig::default().validate().is_ok());
        assert!(SearchConfig { iterations: 0, ..Default::default() }.validate().is_err());
        assert!(SearchConfig { sparsity: 1.0, ..Default::default() }.validate().is_err());
    }

    fn tiny_setup() -> (InteractionDataset, Backbone, TrainConfig) {
        let ds = generate_synthetic(&SyntheticConfig {
            num_users: 40,
            num_items: 60,
            interactions: 600,
            popularity_exponent: 1.0,
            seed: 2,
            ..Default::default()
        })
        .unwrap();
        let cfg = TrainConfig { batch_size: 128, max_epochs: 15, ..Default::default() };
        let mut model = Backbone::new(&ds, ScorerKind::Mf, 8, cfg.init_scale, 5).unwrap();
        model.train(&ds, &cfg, &mut rng_from(6)).unwrap();
        (ds, model, cfg)
    }

    #[test]
    fn short_runs_and_determinism() {
        let (ds, model, tcfg) = tiny_setup();
        let one = SearchConfig { iterations: 1, candidates: 1, sparsity: 0.5, d_max: 8, finetune_epochs: 1, ..Default::default() };
        let out = run_search(&ds, &model, &tcfg, &one, &mut ()).unwrap();
        assert_eq!(out.population.len(), 1);
        assert_eq!(out.finetunes, 1);

        let cfg = SearchConfig { iterations: 6, candidates: 4, sparsity: 0.5, d_max: 8, finetune_epochs: 1, seed: 9, ..Default::default() };
        let mut seen = 0;
        let mut obs = |r: &IterationRecord, p: &Population| {
            seen += 1;
            assert_eq!(p.len(), r.t);
            assert_eq!(r.strategy, if r.t == 4 { Strategy::III } else { strategy_for(r.t) });
            assert!(r.total_params <= r.budget);
            Ok(())
        };
        let a = run_search(&ds, &model, &tcfg, &cfg, &mut obs).unwrap();
        assert_eq!(seen, 6);
        assert_eq!(a.finetunes, 6);
        let b = run_search(&ds, &model, &tcfg, &cfg, &mut ()).unwrap();
        assert_eq!(a.population, b.population);
        assert_eq!(a.predictor, b.predictor);
    }

    #[test]
    fn retrain_counts_and_argmax() {
        let (ds, model, tcfg) = tiny_setup();
        let cfg = SearchConfig { iterations: 3, candidates: 2, sparsity: 0.5, d_max: 8, finetune_epochs: 1, ..Default::default() };
        let out = run_search(&ds, &model, &tcfg, &cfg, &mut ()).unwrap();
        let quick = TrainConfig { max_epochs: 3, ..tcfg.clone() };
        let r = selective_retrain(&out.population, &ds, ScorerKind::Mf, &quick, 5, 1).unwrap();
        assert_eq!(r.entries.len(), 3);
        assert!(r.model.table().retained_params() <= r.action.budget);
        assert_eq!(r.action.total_params(), r.model.table().retained_params());

        let mut dominant = Population::new();
        for (i, a) in out.population.entries().iter().enumerate() {
            dominant.push(a.clone(), if i == 1 { 0.8 } else { 0.0 }).unwrap();
        }
        let r = selective_retrain(&dominant, &ds, ScorerKind::Mf, &quick, 1, 1).unwrap();
        assert_eq!(r.population_index, 1);
    }
}
