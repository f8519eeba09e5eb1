// Apply a size action to an embedding table and round-trip it through the
// `BETS` sparse format.
//
// ```bash
// cargo run --release --example masked_table
// ```

use bet::embedding::bets_file_len;
use bet::sampler::ActionSampler;
use bet::seed::rng_from;
use bet::MaskedEmbeddingTable;

pub fn run_example() -> bet::Result<()> {
    let user_freq = [5, 3, 1, 1];
    let item_freq = [4, 4, 2, 1, 1, 1];
    let mut table = MaskedEmbeddingTable::init(10, 8, 0.1, 11)?;
    let action = ActionSampler::new(&user_freq, &item_freq, 8, 0.75)?.generate(&mut rng_from(2))?;
    table.apply_action(&action)?;
    println!("row sizes {:?}", table.row_sizes());
    println!(
        "retained {} of {} (sparsity {:.3}), budget {}",
        table.retained_params(),
        10 * 8,
        table.sparsity(),
        action.budget
    );
    println!("row 0 lookup: {:?}", table.lookup(0)?);

    let bytes = table.to_sparse_bytes()?;
    assert_eq!(bytes.len() as u64, bets_file_len(10, table.retained_params()));
    let back = MaskedEmbeddingTable::from_sparse_bytes(&bytes)?;
    assert_eq!(back.to_sparse_bytes()?, bytes);
    println!("BETS: {} bytes, byte-identical after reload", bytes.len());
    Ok(())
}

fn main() -> bet::Result<()> {
    run_example()
}
