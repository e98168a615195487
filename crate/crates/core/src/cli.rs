//! Command-line front end: `generate`, `train`, `eval` and `report`.
//!
//! Every command resolves its configuration from a profile, an optional
//! JSON file, `--seed` and `--set key=value` overrides (in that order),
//! writes the result to `config.resolved.json` in its output directory and
//! then runs. Outputs depend only on the resolved configuration.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::dataset::{
    counts_csv, generate_dataset, load_dataset, write_dataset, DatasetConfig, DatasetManifest,
    Expert, Split, Trajectory, WorldCache,
};
use crate::error::{Error, Result};
use crate::eval::{
    evaluation_specs, read_ndjson, run_rollouts, trajectory_length_histogram, window_records,
    write_ndjson, EpisodeLog, ExpertPolicy, ModelPolicy, OraclePolicy, RandomPolicy, Report,
    RolloutPolicy, WindowPolicy, WindowRecord,
};
use crate::model::{ModelConfig, ModelWeights};
use crate::seed::derive_seed;
use crate::train::{metrics_csv, train, TrainConfig};

const MODEL_INIT_STREAM: u64 = 51;

pub const DATASET_FILE: &str = "dataset.ndjson";
pub const COUNTS_FILE: &str = "counts.csv";
pub const MODEL_FILE: &str = "model.ckpt";
pub const WINDOW_LOG_FILE: &str = "window_records.ndjson";
pub const EPISODE_LOG_FILE: &str = "episode_logs.ndjson";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Greedy,
    TopK,
}

/// Evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Window length for offline accuracy and the rollout buffer; defaults
    /// to the model context.
    pub window: Option<usize>,
    /// Fresh held-out episodes per difficulty for rollouts.
    pub online_episodes: usize,
    pub sampling: SamplingMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            window: None,
            online_episodes: 100,
            sampling: SamplingMode::TopK,
        }
    }
}

/// Everything a command needs, as echoed to `config.resolved.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    /// Seconds-scale run on a handful of tiny worlds.
    Smoke,
    /// Desktop-scale run: small model, enough data to learn.
    Desk,
    /// Full-size model and the default training recipe.
    Full,
}

impl Profile {
    pub fn config(self) -> RunConfig {
        match self {
            Profile::Full => RunConfig::default(),
            Profile::Smoke => RunConfig {
                dataset: DatasetConfig {
                    world_size: 25,
                    train_worlds: 3,
                    test_worlds: 2,
                    train_episodes: 48,
                    test_episodes: 16,
                    ..DatasetConfig::default()
                },
                model: ModelConfig::tiny(),
                train: TrainConfig {
                    epochs: 2,
                    lr0: 1e-3,
                    ..TrainConfig::default()
                },
                eval: EvalConfig {
                    online_episodes: 4,
                    ..EvalConfig::default()
                },
                ..RunConfig::default()
            },
            Profile::Desk => desk_config(),
        }
    }
}

/// Settings used for the desktop-scale learning run.
pub fn desk_config() -> RunConfig {
    RunConfig {
        dataset: DatasetConfig {
            train_worlds: 400,
            test_worlds: 20,
            train_episodes: 10_000,
            test_expert: Some(Expert::Optimal),
            ..DatasetConfig::default()
        },
        model: ModelConfig {
            obs_feature_dim: 1024,
            mlp_hidden: 256,
            ..ModelConfig::small()
        },
        train: TrainConfig {
            lr0: 1e-3,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "imgnav",
    version,
    about = "Image-goal navigation by goal-conditioned behavior cloning"
)]
pub struct Cli {
    /// JSON configuration merged over the profile.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; also seeds training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root.
    #[arg(long, global = true, env = "IMGNAV_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Override a configuration key, e.g. `--set train.lr0=3e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Base settings before the config file and overrides.
    #[arg(long, global = true, value_enum, default_value = "full")]
    pub profile: Profile,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build worlds, collect expert trajectories, write the dataset and counts.
    Generate {
        /// Training episodes to sample (sets dataset.train_episodes).
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Behavior cloning on the training split.
    Train {
        /// Dataset file [default: <out>/dataset/dataset.ndjson].
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Offline window accuracy and/or closed-loop rollouts.
    Eval {
        /// Window accuracy on the test split.
        #[arg(long)]
        offline: bool,
        /// Rollouts on fresh held-out episodes.
        #[arg(long)]
        online: bool,
        /// Also evaluate a reference policy (offline `expert` replays the
        /// recorded actions).
        #[arg(long, value_enum)]
        baseline: Vec<Baseline>,
        /// Evaluate baselines only.
        #[arg(long)]
        no_model: bool,
        /// Model checkpoint [default: <out>/train/model.ckpt].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset file [default: <out>/dataset/dataset.ndjson].
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Re-render report files from evaluation logs.
    Report {
        /// Directory holding the evaluation logs [default: <out>/eval].
        #[arg(long)]
        logs: Option<PathBuf>,
        /// Dataset file for the length histogram [default: <out>/dataset/dataset.ndjson].
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Random,
    Expert,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit status. Errors are printed to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command.
pub fn execute(cli: &Cli) -> Result<()> {
    let config = resolve_config(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Generate { .. } => cmd_generate(&config, &cli.out.join("dataset"), cli.jobs),
        Command::Train { dataset, resume } => cmd_train(
            &config,
            &dataset_path(cli, dataset),
            resume.as_deref(),
            &cli.out.join("train"),
        ),
        Command::Eval {
            offline,
            online,
            baseline,
            no_model,
            checkpoint,
            dataset,
        } => {
            let checkpoint = (!no_model).then(|| {
                checkpoint
                    .clone()
                    .unwrap_or_else(|| cli.out.join("train").join(MODEL_FILE))
            });
            let both = !offline && !online;
            cmd_eval(
                &config,
                &EvalRequest {
                    offline: *offline || both,
                    online: *online || both,
                    baselines: baseline.clone(),
                    checkpoint,
                    dataset: dataset_path(cli, dataset),
                },
                &cli.out.join("eval"),
            )
        }
        Command::Report { logs, dataset } => cmd_report(
            &config,
            &logs.clone().unwrap_or_else(|| cli.out.join("eval")),
            &dataset_path(cli, dataset),
            &cli.out.join("report"),
        ),
    })
}

fn dataset_path(cli: &Cli, explicit: &Option<PathBuf>) -> PathBuf {
    explicit
        .clone()
        .unwrap_or_else(|| cli.out.join("dataset").join(DATASET_FILE))
}

/// Profile, then config file, then `--seed`, then `--set`, then the
/// command's own flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut value = serde_json::to_value(cli.profile.config()).expect("config serializes");
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        merge(&mut value, file, "")?;
    }
    if let Some(seed) = cli.seed {
        value["seed"] = seed.into();
        value["train"]["seed"] = seed.into();
    }
    for item in &cli.overrides {
        apply_override(&mut value, item)?;
    }
    if let Command::Generate {
        episodes: Some(n), ..
    } = cli.command
    {
        value["dataset"]["train_episodes"] = n.into();
    }
    let config: RunConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    config.dataset.validate()?;
    config.model.validate()?;
    config.train.validate()?;
    Ok(config)
}

/// Recursive object merge; a key absent from `base` is an error.
fn merge(base: &mut Value, patch: Value, prefix: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v, &key)?,
                    Some(slot) => *slot = v,
                    None => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
            }
            Ok(())
        }
        (b, p) => {
            *b = p;
            Ok(())
        }
    }
}

/// `a.b.c=value`; the value is parsed as JSON, falling back to a string.
fn apply_override(config: &mut Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
    let mut slot = &mut *config;
    for part in key.split('.') {
        slot = slot
            .get_mut(part)
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
    }
    *slot = value;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_resolved(config: &RunConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let json = serde_json::to_string_pretty(config).expect("config serializes");
    write_file(&dir.join(RESOLVED_CONFIG_FILE), json + "\n")
}

pub fn cmd_generate(config: &RunConfig, dir: &Path, jobs: usize) -> Result<()> {
    write_resolved(config, dir)?;
    let manifest = generate_dataset(&config.dataset, config.seed, jobs)?;
    for split in Split::ALL {
        if manifest.split(split).next().is_none() {
            return Err(Error::Data(format!(
                "{} split has no successful trajectories; nothing written",
                split.as_str()
            )));
        }
    }
    write_dataset(&manifest, &dir.join(DATASET_FILE))?;
    write_file(&dir.join(COUNTS_FILE), counts_csv(&manifest))?;
    log::info!(
        "wrote {} episodes to {}",
        manifest.records.len(),
        dir.display()
    );
    Ok(())
}

fn load_with_worlds(path: &Path) -> Result<(DatasetManifest, WorldCache)> {
    let manifest = load_dataset(path)?;
    let worlds = WorldCache::for_manifest(&manifest)?;
    Ok((manifest, worlds))
}

pub fn cmd_train(
    config: &RunConfig,
    dataset: &Path,
    resume: Option<&Path>,
    dir: &Path,
) -> Result<()> {
    write_resolved(config, dir)?;
    let (manifest, worlds) = load_with_worlds(dataset)?;
    let train_set: Vec<&Trajectory> = manifest.split(Split::Train).collect();
    let start = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.weights.config != config.model {
                return Err(Error::Contract(
                    "checkpoint model configuration differs from the resolved one".into(),
                ));
            }
            ck
        }
        None => {
            let metrics = dir.join("metrics.csv");
            if metrics.exists() {
                std::fs::remove_file(&metrics).map_err(|e| Error::io(&metrics, e))?;
            }
            Checkpoint {
                weights: ModelWeights::init(
                    &config.model,
                    derive_seed(config.seed, MODEL_INIT_STREAM, 0),
                )?,
                optimizer: None,
                meta: CheckpointMeta::default(),
            }
        }
    };
    let (last, rows) = train(start, &train_set, &worlds, &config.train, Some(dir))?;
    last.save(&dir.join(MODEL_FILE))?;
    if !rows.is_empty() {
        log::info!(
            "final epoch metrics:\n{}",
            metrics_csv(&rows[rows.len() - 1..])
        );
    }
    Ok(())
}

pub struct EvalRequest {
    pub offline: bool,
    pub online: bool,
    pub baselines: Vec<Baseline>,
    /// `None` evaluates baselines only.
    pub checkpoint: Option<PathBuf>,
    pub dataset: PathBuf,
}

pub fn cmd_eval(config: &RunConfig, req: &EvalRequest, dir: &Path) -> Result<()> {
    write_resolved(config, dir)?;
    let window = config.eval.window.unwrap_or(config.model.context);
    let checkpoint = req
        .checkpoint
        .as_deref()
        .map(Checkpoint::load)
        .transpose()?;
    if let Some(ck) = &checkpoint {
        let t = ck.weights.config.context;
        if t != window {
            return Err(Error::Contract(format!(
                "evaluation window T={window} differs from checkpoint context T={t}"
            )));
        }
    }
    if checkpoint.is_none() && req.baselines.is_empty() {
        return Err(Error::Config(
            "nothing to evaluate: no model and no baseline".into(),
        ));
    }
    let model = checkpoint.as_ref().map(|ck| ModelPolicy {
        weights: &ck.weights,
        sampling: match config.eval.sampling {
            SamplingMode::Greedy => crate::model::Sampling::Greedy,
            SamplingMode::TopK => crate::model::Sampling::TopK(ck.weights.config.top_k),
        },
    });
    let (manifest, mut worlds) = load_with_worlds(&req.dataset)?;

    let mut windows: Vec<WindowRecord> = Vec::new();
    if req.offline {
        let test: Vec<&Trajectory> = manifest.split(Split::Test).collect();
        let mut policies: Vec<&dyn WindowPolicy> = Vec::new();
        if let Some(m) = &model {
            policies.push(m);
        }
        for b in &req.baselines {
            policies.push(match b {
                Baseline::Random => &RandomPolicy,
                Baseline::Expert => &OraclePolicy,
            });
        }
        for p in policies {
            windows.extend(window_records(p, &test, &worlds, window, config.seed)?);
        }
        write_ndjson(&dir.join(WINDOW_LOG_FILE), &windows)?;
    }

    let mut episodes: Vec<EpisodeLog> = Vec::new();
    if req.online {
        let test_worlds = config.dataset.world_specs(config.seed, Split::Test);
        let specs = evaluation_specs(
            &test_worlds,
            config.eval.online_episodes,
            config.seed,
            &mut worlds,
        )?;
        let mut policies: Vec<&dyn RolloutPolicy> = Vec::new();
        if let Some(m) = &model {
            policies.push(m);
        }
        for b in &req.baselines {
            policies.push(match b {
                Baseline::Random => &RandomPolicy,
                Baseline::Expert => &ExpertPolicy,
            });
        }
        for p in policies {
            episodes.extend(run_rollouts(p, &specs, &worlds, window, config.seed)?);
        }
        write_ndjson(&dir.join(EPISODE_LOG_FILE), &episodes)?;
    }

    let report = Report::from_logs(
        &windows,
        window,
        &episodes,
        trajectory_length_histogram(&manifest.records),
    )?;
    report.write(dir)
}

pub fn cmd_report(config: &RunConfig, logs: &Path, dataset: &Path, dir: &Path) -> Result<()> {
    write_resolved(config, dir)?;
    let read_if = |name: &str| -> Result<Option<PathBuf>> {
        let p = logs.join(name);
        Ok(p.exists().then_some(p))
    };
    let windows: Vec<WindowRecord> = match read_if(WINDOW_LOG_FILE)? {
        Some(p) => read_ndjson(&p)?,
        None => Vec::new(),
    };
    let episodes: Vec<EpisodeLog> = match read_if(EPISODE_LOG_FILE)? {
        Some(p) => read_ndjson(&p)?,
        None => Vec::new(),
    };
    if windows.is_empty() && episodes.is_empty() {
        return Err(Error::Data(format!(
            "no evaluation logs in {}",
            logs.display()
        )));
    }
    let manifest = load_dataset(dataset)?;
    let window = config.eval.window.unwrap_or(config.model.context);
    Report::from_logs(
        &windows,
        window,
        &episodes,
        trajectory_length_histogram(&manifest.records),
    )?
    .write(dir)
}
