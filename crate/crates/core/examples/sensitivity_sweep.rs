// Drive the command layer: pretrain into a run directory, then sweep the
// number of candidates per iteration and read back the CSV.
//
// ```bash
// cargo run --release --example sensitivity_sweep
// ```

use bet::cli::{cmd_pretrain, cmd_sweep, RunConfig, SweepAxis};

pub fn run_example() -> bet::Result<()> {
    let cfg = RunConfig::resolve(
        None,
        &[
            "dataset.num_users=120".into(),
            "dataset.num_items=240".into(),
            "dataset.interactions=2400".into(),
            "train.batch_size=512".into(),
            "train.max_epochs=20".into(),
            "search.d_max=16".into(),
            "search.sparsity=0.9".into(),
            "search.iterations=3".into(),
            "search.finetune_epochs=2".into(),
            "search.retrain_top_k=2".into(),
        ],
        None,
    )?;
    let out = std::env::temp_dir().join(format!("bet-sweep-{}", std::process::id()));
    cmd_pretrain(&cfg, &out)?;
    let rows = cmd_sweep(&cfg, &out, SweepAxis::M, &[2, 8])?;
    assert_eq!(rows.len(), 2);
    let csv = std::fs::read_to_string(out.join("sweep_m.csv"))?;
    println!("{} data rows in {}", csv.lines().count() - 1, out.join("sweep_m.csv").display());
    std::fs::remove_dir_all(&out)?;
    Ok(())
}

fn main() -> bet::Result<()> {
    run_example()
}
