// Draw budget-feasible size actions and compare them with the SU and SR
// baselines.
//
// ```bash
// cargo run --release --example sample_actions
// ```

use bet::sampler::{action_as_sets, budget_for, draw_distribution, ActionSampler};
use bet::seed::{derived_rng, rng_from};

pub fn run_example() -> bet::Result<()> {
    // Full-scale budget check: 70,839 entities at d_max 128 and 80% sparsity.
    println!("budget(70839, 128, 0.8) = {}", budget_for(70_839, 128, 0.8)?);

    let user_freq: Vec<u32> = (0..30).map(|u| 1 + (30 - u) / 3).collect();
    let item_freq: Vec<u32> = (0..50).map(|v| 1 + 40 / (v + 1)).collect();
    let sampler = ActionSampler::new(&user_freq, &item_freq, 16, 0.8)?;
    println!("{} entities, d_max 16, budget {}", sampler.num_entities(), sampler.budget());

    let mut rng = rng_from(3);
    println!("a random family and shape: {:?}", draw_distribution(&mut rng));
    for i in 0..3 {
        let action = sampler.generate(&mut derived_rng(3, &[i]))?;
        println!(
            "action {i}: users {:?}/{:.3}, items {:?}/{:.3}, w {:.3}, {} of {} params",
            action.dist_u,
            action.beta_u,
            action.dist_v,
            action.beta_v,
            action.w,
            action.total_params(),
            action.budget
        );
        println!("  first user sizes: {:?}", &action.user_sizes()[..8]);
        let used: Vec<usize> = action_as_sets(&action)
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_empty())
            .map(|(d, _)| d + 1)
            .collect();
        println!("  sizes in use: {used:?}");
    }

    let su = sampler.su();
    let sr = sampler.sr(&mut rng)?;
    println!("SU: every size {} ({} params)", su.sizes()[0], su.total_params());
    println!("SR: {} params, max size {}", sr.total_params(), sr.sizes().iter().max().unwrap());
    Ok(())
}

fn main() -> bet::Result<()> {
    run_example()
}
