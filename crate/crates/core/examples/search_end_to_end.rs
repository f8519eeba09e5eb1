// Pretrain, search, retrain the best actions and compare against the
// SU and SR baselines at the same sparsity.
//
// ```bash
// cargo run --release --example search_end_to_end
// ```

use bet::dataset::{generate_synthetic, SyntheticConfig};
use bet::sampler::ActionSampler;
use bet::search::{run_search, selective_retrain, train_under_action, SearchConfig};
use bet::seed::rng_from;
use bet::{Backbone, ScorerKind, TrainConfig};

pub fn run_example() -> bet::Result<()> {
    let ds = generate_synthetic(&SyntheticConfig {
        num_users: 200,
        num_items: 400,
        interactions: 4_000,
        popularity_exponent: 1.0,
        seed: 1,
        ..Default::default()
    })?;
    let train = TrainConfig { batch_size: 512, max_epochs: 30, finetune_epochs: 3, ..Default::default() };
    let search = SearchConfig {
        iterations: 6,
        candidates: 10,
        sparsity: 0.9,
        d_max: 16,
        finetune_epochs: 3,
        retrain_top_k: 3,
        seed: 1,
        ..Default::default()
    };

    let mut pretrained = Backbone::new(&ds, ScorerKind::Mf, search.d_max, train.init_scale, 2)?;
    pretrained.train(&ds, &train, &mut rng_from(3))?;

    let mut log = |r: &bet::search::IterationRecord, _: &bet::Population| {
        println!(
            "t={} {:?}: r={:.4} predicted {:.4}, {} params",
            r.t, r.strategy, r.fitness, r.predicted_fitness, r.total_params
        );
        Ok(())
    };
    let outcome = run_search(&ds, &pretrained, &train, &search, &mut log)?;
    println!("{} finetunes", outcome.finetunes);

    let best = selective_retrain(&outcome.population, &ds, ScorerKind::Mf, &train, search.retrain_top_k, search.seed)?;
    println!(
        "search: val ensemble {:.4}, sparsity {:.3}",
        best.eval.ensemble,
        best.model.table().sparsity()
    );

    let sampler = ActionSampler::new(&ds.user_freq, &ds.item_freq, search.d_max, search.sparsity)?;
    let su = train_under_action(&ds, ScorerKind::Mf, &sampler.su(), &train, 4)?.2;
    let sr = train_under_action(&ds, ScorerKind::Mf, &sampler.sr(&mut rng_from(5))?, &train, 5)?.2;
    println!("SU: val ensemble {:.4}", su.ensemble);
    println!("SR: val ensemble {:.4}", sr.ensemble);
    Ok(())
}

fn main() -> bet::Result<()> {
    run_example()
}
