//! Instantiates the full-size decoder, reports its parameter budget and
//! times one forward pass over a full context window.

use std::time::Instant;

use imgnav::env::Observation;
use imgnav::model::{predict, ModelConfig, ModelInput, ModelWeights};

fn main() -> imgnav::Result<()> {
    let config = ModelConfig::full();
    let weights = ModelWeights::init(&config, 0)?;
    let mut by_group: Vec<(String, usize)> = Vec::new();
    for (name, p) in weights.names.iter().zip(&weights.params) {
        let group = name.split('.').next().unwrap_or(name).to_string();
        match by_group.iter_mut().find(|(g, _)| *g == group) {
            Some((_, n)) => *n += p.numel(),
            None => by_group.push((group, p.numel())),
        }
    }
    for (group, n) in &by_group {
        println!("{group:<20} {n:>10}");
    }
    println!("{:<20} {:>10}", "trainable", weights.trainable_count());
    println!("{:<20} {:>10}", "frozen", weights.frozen_count());

    let goal = Observation::zeros();
    let obs = vec![Observation::zeros(); config.context];
    let actions = vec![1; config.context];
    let input = ModelInput::single(&goal, &obs, &actions)?;
    let t = Instant::now();
    let logits = predict(&weights, &input)?;
    println!(
        "forward over T={} took {:?}; logits {}x{}",
        config.context,
        t.elapsed(),
        logits.len(),
        logits[0].len()
    );
    Ok(())
}
