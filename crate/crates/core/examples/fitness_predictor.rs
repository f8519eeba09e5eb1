// Fit the set-based fitness surrogate to a handful of measured actions.
//
// ```bash
// cargo run --release --example fitness_predictor
// ```

use bet::predictor::{train_predictor, FitnessPredictor, Population};
use bet::sampler::ActionSampler;
use bet::seed::rng_from;

pub fn run_example() -> bet::Result<()> {
    let user_freq: Vec<u32> = (0..40).map(|u| 1 + u % 7).collect();
    let item_freq: Vec<u32> = (0..60).map(|v| 1 + 30 / (v + 1)).collect();
    let sampler = ActionSampler::new(&user_freq, &item_freq, 16, 0.8)?;

    // Pretend fitness grows with the parameters spent on users.
    let mut rng = rng_from(5);
    let mut population = Population::new();
    for _ in 0..8 {
        let action = sampler.generate(&mut rng)?;
        let spent: u32 = action.user_sizes().iter().sum();
        let fitness = 0.6 + 0.4 * spent as f64 / action.budget as f64;
        population.push(action, fitness)?;
    }

    let mut predictor = FitnessPredictor::new(&user_freq, &item_freq, 16, &mut rng_from(6))?;
    for round in 0..=4 {
        if round > 0 {
            train_predictor(&mut predictor, &population, 100, 1e-3, &mut rng)?;
        }
        let mse = (0..population.len())
            .map(|i| (predictor.predict_fitness(&population.entries()[i]).unwrap() - population.fitness(i)).powi(2))
            .sum::<f64>()
            / population.len() as f64;
        println!("after {:>3} updates: mse {mse:.5}", round * 100);
    }

    let unseen = sampler.generate(&mut rng)?;
    println!("prediction for an unseen action: {:.4}", predictor.predict_fitness(&unseen)?);
    println!("embedding width {}", predictor.embed_action(&unseen)?.len());
    Ok(())
}

fn main() -> bet::Result<()> {
    run_example()
}
