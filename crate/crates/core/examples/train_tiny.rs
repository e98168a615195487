//! Behavior cloning of a tiny decoder on a small generated dataset, then
//! window accuracy on the held-out split next to two baselines.

use imgnav::checkpoint::{Checkpoint, CheckpointMeta};
use imgnav::dataset::{generate_dataset, DatasetConfig, Split, Trajectory, WorldCache};
use imgnav::env::Action;
use imgnav::eval::{
    offline_window_accuracy, ConstantPolicy, ModelPolicy, RandomPolicy, WindowPolicy,
};
use imgnav::model::{ModelConfig, ModelWeights};
use imgnav::train::{metrics_csv, train, TrainConfig};

fn main() -> imgnav::Result<()> {
    let data = DatasetConfig {
        world_size: 25,
        train_worlds: 12,
        test_worlds: 3,
        train_episodes: 300,
        test_episodes: 60,
        ..DatasetConfig::default()
    };
    let manifest = generate_dataset(&data, 1, 1)?;
    let worlds = WorldCache::for_manifest(&manifest)?;
    let train_set: Vec<&Trajectory> = manifest.split(Split::Train).collect();
    let test_set: Vec<&Trajectory> = manifest.split(Split::Test).collect();

    let model = ModelConfig {
        context: 8,
        ..ModelConfig::tiny()
    };
    let start = Checkpoint {
        weights: ModelWeights::init(&model, 1)?,
        optimizer: None,
        meta: CheckpointMeta::default(),
    };
    let config = TrainConfig {
        epochs: 5,
        lr0: 3e-3,
        ..TrainConfig::default()
    };
    let (trained, history) = train(start, &train_set, &worlds, &config, None)?;
    print!("{}", metrics_csv(&history));

    let model_policy = ModelPolicy::greedy(&trained.weights);
    let forward = ConstantPolicy(Action::MoveForward);
    let policies: [&dyn WindowPolicy; 3] = [&model_policy, &forward, &RandomPolicy];
    for p in policies {
        let report = offline_window_accuracy(p, &test_set, &worlds, 8, 0)?;
        println!(
            "{:<10} held-out window accuracy {:.3}",
            p.name(),
            report.groups[0].accuracy
        );
    }
    Ok(())
}
