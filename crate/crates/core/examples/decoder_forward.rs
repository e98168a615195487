//! Runs the decoder on a short rendered window and samples the next action
//! with top-k.

use imgnav::env::{render_observation, step, Action, Heading, Pose, World};
use imgnav::model::{
    predict, sample_action, token_roles, ModelConfig, ModelInput, ModelWeights, Sampling,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> imgnav::Result<()> {
    let world = World::generate(5, 25)?;
    let (c, r) = world.free_cells()[10];
    let mut pose = Pose::at_cell(c, r, Heading::from_index(3));
    let goal = render_observation(&world, &step(&world, pose, Action::TurnRight).0);

    let history = [Action::TurnLeft, Action::MoveForward, Action::TurnRight];
    let mut observations = Vec::new();
    for a in history {
        observations.push(render_observation(&world, &pose));
        pose = step(&world, pose, a).0;
    }

    let config = ModelConfig::small();
    let weights = ModelWeights::init(&config, 9)?;
    println!(
        "{} trainable parameters, {} frozen, frozen checksum {}",
        weights.trainable_count(),
        weights.frozen_count(),
        &weights.frozen_checksum()[..16]
    );
    println!("token roles: {:?}", token_roles(history.len()));

    let input = ModelInput::from_actions(&goal, &observations, &history)?;
    let logits = predict(&weights, &input)?;
    for (t, row) in logits.iter().enumerate() {
        let shown: Vec<String> = row.iter().map(|x| format!("{x:+.3}")).collect();
        println!("step {t}: [{}]", shown.join(", "));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let next = sample_action(
        logits.last().unwrap(),
        Sampling::TopK(config.top_k),
        &mut rng,
    );
    println!("sampled next action: {:?}", Action::from_id(next));
    Ok(())
}
