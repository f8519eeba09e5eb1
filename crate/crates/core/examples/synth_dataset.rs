// Generate a power-law interaction corpus, split it per user and persist
// the split.
//
// ```bash
// cargo run --release --example synth_dataset
// ```

use bet::dataset::{generate_synthetic, sample_bpr_batch, SyntheticConfig};
use bet::seed::rng_from;
use bet::InteractionDataset;

pub fn run_example() -> bet::Result<()> {
    let ds = generate_synthetic(&SyntheticConfig {
        num_users: 200,
        num_items: 400,
        interactions: 4_000,
        popularity_exponent: 1.0,
        seed: 7,
        ..Default::default()
    })?;
    println!(
        "{} users, {} items; train/val/test = {}/{}/{}",
        ds.num_users,
        ds.num_items,
        ds.train.len(),
        ds.val.len(),
        ds.test.len()
    );

    let mut by_pop: Vec<(u32, usize)> = ds.item_freq.iter().copied().zip(0..).collect();
    by_pop.sort_by(|a, b| b.cmp(a));
    println!("top items by train frequency: {:?}", &by_pop[..5]);

    let batch = sample_bpr_batch(&ds, 4, &mut rng_from(1))?;
    for t in &batch {
        assert!(ds.is_train_pair(t.user, t.pos) && !ds.is_train_pair(t.user, t.neg));
    }
    println!("sample BPR triples: {batch:?}");

    let dir = std::env::temp_dir().join(format!("bet-synth-{}", std::process::id()));
    ds.save_dir(&dir)?;
    let back = InteractionDataset::load_dir(&dir)?;
    assert_eq!(back.train, ds.train);
    println!("saved and reloaded split from {}", dir.display());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn main() -> bet::Result<()> {
    run_example()
}
