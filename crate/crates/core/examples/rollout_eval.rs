//! Closed-loop evaluation: expert, random and an untrained model on fresh
//! episodes, summarized as success and SPL per difficulty.

use imgnav::dataset::WorldCache;
use imgnav::env::WorldSpec;
use imgnav::eval::{
    evaluation_specs, rollout_results_csv, run_rollouts, summarize_rollouts, ExpertPolicy,
    ModelPolicy, RandomPolicy,
};
use imgnav::model::{ModelConfig, ModelWeights};

fn main() -> imgnav::Result<()> {
    let worlds: Vec<WorldSpec> = (0..3).map(|s| WorldSpec::new(100 + s, 41)).collect();
    let mut cache = WorldCache::new();
    let specs = evaluation_specs(&worlds, 20, 7, &mut cache)?;

    let weights = ModelWeights::init(&ModelConfig::tiny(), 0)?;
    let model = ModelPolicy::top_k(&weights);
    let context = weights.config.context;
    let mut logs = run_rollouts(&ExpertPolicy, &specs, &cache, context, 7)?;
    logs.extend(run_rollouts(&RandomPolicy, &specs, &cache, context, 7)?);
    logs.extend(run_rollouts(&model, &specs, &cache, context, 7)?);

    let report = summarize_rollouts(&logs)?;
    for line in rollout_results_csv(&report).lines() {
        if line.starts_with("policy") || line.contains(",all,") {
            println!("{line}");
        }
    }
    Ok(())
}
