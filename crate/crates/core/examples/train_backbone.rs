// Train MF and LightGCN backbones with BPR and report ranking metrics.
//
// ```bash
// cargo run --release --example train_backbone
// ```

use bet::dataset::{generate_synthetic, Split, SyntheticConfig};
use bet::metrics::eval_ensemble;
use bet::seed::rng_from;
use bet::{Backbone, ScorerKind, TrainConfig};

pub fn run_example() -> bet::Result<()> {
    let ds = generate_synthetic(&SyntheticConfig {
        num_users: 150,
        num_items: 300,
        interactions: 3_000,
        popularity_exponent: 1.0,
        seed: 4,
        ..Default::default()
    })?;
    let cfg = TrainConfig { batch_size: 512, max_epochs: 40, ..Default::default() };

    for kind in [ScorerKind::Mf, ScorerKind::LightGcn { layers: 2 }] {
        let mut model = Backbone::new(&ds, kind, 16, cfg.init_scale, 1)?;
        let before = eval_ensemble(&model, &ds, Split::Val, &cfg.metric_ks)?.ensemble;
        let report = model.train(&ds, &cfg, &mut rng_from(2))?;
        let test = eval_ensemble(&model, &ds, Split::Test, &cfg.metric_ks)?;
        println!(
            "{kind:?}: val ensemble {before:.4} -> {:.4} (best epoch {:?} of {})",
            report.best_val_ensemble.unwrap_or(f64::NAN),
            report.best_epoch,
            report.records.len()
        );
        for at in &test.per_k {
            println!("  test Recall@{} {:.4}  NDCG@{} {:.4}", at.k, at.recall, at.k, at.ndcg);
        }
    }
    Ok(())
}

fn main() -> bet::Result<()> {
    run_example()
}
