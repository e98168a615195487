use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::collect::{collect_episode, Expert, Trajectory, DEFAULT_EPSILON};
use super::episode::{sample_episode_spec, Category, Difficulty, DifficultyMix};
use crate::env::{World, WorldSpec};
use crate::error::{Error, Result};
use crate::seed::{derive_rng, derive_seed};

pub const DATASET_FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "imgnav-dataset";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
        }
    }
}

/// Parameters of dataset generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub world_size: usize,
    pub train_worlds: usize,
    pub test_worlds: usize,
    pub train_episodes: usize,
    pub test_episodes: usize,
    pub mix: DifficultyMix,
    pub expert: Expert,
    /// Expert for the test split; defaults to `expert`.
    pub test_expert: Option<Expert>,
    /// Drop unsuccessful episodes before writing.
    pub filter: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            world_size: 41,
            train_worlds: 8,
            test_worlds: 4,
            train_episodes: 2400,
            test_episodes: 600,
            mix: DifficultyMix::default(),
            expert: Expert::Noisy {
                epsilon: DEFAULT_EPSILON,
            },
            test_expert: None,
            filter: true,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.world_size < 16 {
            return Err(Error::Config(format!(
                "world_size {} below 16",
                self.world_size
            )));
        }
        if self.train_worlds == 0 || self.test_worlds == 0 {
            return Err(Error::Config("each split needs at least one world".into()));
        }
        self.mix.validate()?;
        self.expert.validate()?;
        if let Some(e) = &self.test_expert {
            e.validate()?;
        }
        Ok(())
    }

    fn worlds(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_worlds,
            Split::Test => self.test_worlds,
        }
    }

    fn episodes(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_episodes,
            Split::Test => self.test_episodes,
        }
    }

    fn expert_for(&self, split: Split) -> Expert {
        match split {
            Split::Train => self.expert,
            Split::Test => self.test_expert.unwrap_or(self.expert),
        }
    }

    /// World specs of a split. Streams differ per split, so train and test
    /// never share a world.
    pub fn world_specs(&self, seed: u64, split: Split) -> Vec<WorldSpec> {
        (0..self.worlds(split))
            .map(|i| {
                WorldSpec::new(
                    derive_seed(seed, 100 + split.stream(), i as u64),
                    self.world_size,
                )
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub index: usize,
    pub split: Split,
    pub trajectory: Trajectory,
}

/// Collection outcome for one (split, category, difficulty) cell.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub split: Split,
    pub category: Category,
    pub difficulty: Difficulty,
    pub total: usize,
    pub successful: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    seed: u64,
    filtered: bool,
    config: DatasetConfig,
    counts: Vec<SplitCounts>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub filtered: bool,
    pub config: DatasetConfig,
    pub counts: Vec<SplitCounts>,
    pub records: Vec<EpisodeRecord>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Trajectory> {
        self.records
            .iter()
            .filter(move |r| r.split == split)
            .map(|r| &r.trajectory)
    }

    /// Checks that stored counts agree with the records.
    pub fn check_counts(&self) -> Result<()> {
        let mut seen: BTreeMap<(Split, Category, Difficulty), usize> = BTreeMap::new();
        for r in &self.records {
            let s = &r.trajectory.spec;
            *seen.entry((r.split, s.category, s.difficulty)).or_default() += 1;
        }
        for c in &self.counts {
            let want = if self.filtered { c.successful } else { c.total };
            let got = seen
                .remove(&(c.split, c.category, c.difficulty))
                .unwrap_or(0);
            if got != want {
                return Err(Error::format(
                    "dataset counts",
                    format!(
                        "{}/{}/{}: header says {want}, found {got} records",
                        c.split.as_str(),
                        c.category.as_str(),
                        c.difficulty.as_str()
                    ),
                ));
            }
        }
        if let Some(((s, c, d), n)) = seen.into_iter().next() {
            return Err(Error::format(
                "dataset counts",
                format!(
                    "{n} records in {}/{}/{} missing from header",
                    s.as_str(),
                    c.as_str(),
                    d.as_str()
                ),
            ));
        }
        Ok(())
    }
}

/// Regenerates worlds on demand from their specs.
#[derive(Default)]
pub struct WorldCache {
    worlds: HashMap<WorldSpec, World>,
}

impl WorldCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Cache holding every world referenced by the manifest.
    pub fn for_manifest(manifest: &DatasetManifest) -> Result<Self> {
        let mut cache = Self::new();
        for r in &manifest.records {
            cache.ensure(r.trajectory.spec.world)?;
        }
        Ok(cache)
    }

    pub fn ensure(&mut self, spec: WorldSpec) -> Result<&World> {
        if let std::collections::hash_map::Entry::Vacant(e) = self.worlds.entry(spec) {
            e.insert(spec.build()?);
        }
        Ok(&self.worlds[&spec])
    }

    pub fn get(&self, spec: &WorldSpec) -> Option<&World> {
        self.worlds.get(spec)
    }

    /// World of `spec`; panics if it was never ensured.
    pub fn world(&self, spec: &WorldSpec) -> &World {
        self.get(spec).expect("world not in cache")
    }
}

/// Samples and collects every episode of both splits. Each episode draws
/// from its own seed stream, so `jobs` never changes the result.
pub fn generate_dataset(config: &DatasetConfig, seed: u64, jobs: usize) -> Result<DatasetManifest> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let mut records = Vec::new();
    let mut counts: BTreeMap<(Split, Category, Difficulty), (usize, usize)> = BTreeMap::new();
    for split in Split::ALL {
        let worlds = config
            .world_specs(seed, split)
            .iter()
            .map(WorldSpec::build)
            .collect::<Result<Vec<_>>>()?;
        let expert = config.expert_for(split);
        let trajectories: Vec<Trajectory> = pool.install(|| {
            (0..config.episodes(split))
                .into_par_iter()
                .map(|i| {
                    let world = &worlds[i % worlds.len()];
                    let mut rng = derive_rng(seed, split.stream(), i as u64);
                    let difficulty = config.mix.sample(&mut rng);
                    let spec = sample_episode_spec(world, difficulty, &mut rng)?;
                    Ok(collect_episode(world, &spec, expert, &mut rng))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        for (index, trajectory) in trajectories.into_iter().enumerate() {
            let s = &trajectory.spec;
            let entry = counts.entry((split, s.category, s.difficulty)).or_default();
            entry.0 += 1;
            entry.1 += trajectory.success as usize;
            if trajectory.success || !config.filter {
                records.push(EpisodeRecord {
                    index,
                    split,
                    trajectory,
                });
            }
        }
    }
    let counts = counts
        .into_iter()
        .map(
            |((split, category, difficulty), (total, successful))| SplitCounts {
                split,
                category,
                difficulty,
                total,
                successful,
            },
        )
        .collect();
    let manifest = DatasetManifest {
        version: DATASET_FORMAT_VERSION,
        seed,
        filtered: config.filter,
        config: config.clone(),
        counts,
        records,
    };
    if config.filter && manifest.records.is_empty() {
        log::warn!("no successful episodes were collected");
    }
    Ok(manifest)
}

/// NDJSON text: a header line, then one episode per line.
pub fn serialize_dataset(manifest: &DatasetManifest) -> Result<String> {
    let header = Header {
        format: FORMAT_NAME.into(),
        version: manifest.version,
        seed: manifest.seed,
        filtered: manifest.filtered,
        config: manifest.config.clone(),
        counts: manifest.counts.clone(),
    };
    let to_err = |e: serde_json::Error| Error::format("dataset", e.to_string());
    let mut out = serde_json::to_string(&header).map_err(to_err)?;
    out.push('\n');
    for r in &manifest.records {
        out.push_str(&serde_json::to_string(r).map_err(to_err)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let text = serialize_dataset(manifest)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses a dataset file and replays every record through the environment.
pub fn load_dataset(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, &path.display().to_string())
}

pub(crate) fn parse_dataset(text: &str, name: &str) -> Result<DatasetManifest> {
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::format(name, "empty file"))?;
    let header: Header = serde_json::from_str(header_line)
        .map_err(|e| Error::format(format!("{name} header"), e.to_string()))?;
    if header.format != FORMAT_NAME {
        return Err(Error::format(
            name,
            format!("unknown format {:?}", header.format),
        ));
    }
    if header.version != DATASET_FORMAT_VERSION {
        return Err(Error::format(
            name,
            format!(
                "version {} unsupported (expected {DATASET_FORMAT_VERSION})",
                header.version
            ),
        ));
    }

    let mut worlds = WorldCache::new();
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let context = || format!("{name} record {i}");
        let record: EpisodeRecord =
            serde_json::from_str(line).map_err(|e| Error::format(context(), e.to_string()))?;
        let traj = &record.trajectory;
        let world = worlds
            .ensure(traj.spec.world)
            .map_err(|e| Error::format(context(), e.to_string()))?;
        traj.spec
            .validate(world)
            .and_then(|_| traj.verify_replay(world))
            .map_err(|e| Error::format(context(), e.to_string()))?;
        if header.filtered && !traj.success {
            return Err(Error::format(
                context(),
                "unsuccessful episode in filtered dataset",
            ));
        }
        records.push(record);
    }
    let manifest = DatasetManifest {
        version: header.version,
        seed: header.seed,
        filtered: header.filtered,
        config: header.config,
        counts: header.counts,
        records,
    };
    manifest.check_counts()?;
    Ok(manifest)
}

/// Collection counts as CSV: `split,category,difficulty,total,successful,percent`.
pub fn counts_csv(manifest: &DatasetManifest) -> String {
    let mut out = String::from("split,category,difficulty,total,successful,percent\n");
    for c in &manifest.counts {
        let pct = if c.total == 0 {
            0.0
        } else {
            100.0 * c.successful as f64 / c.total as f64
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.1}",
            c.split.as_str(),
            c.category.as_str(),
            c.difficulty.as_str(),
            c.total,
            c.successful,
            pct
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            world_size: 25,
            train_worlds: 2,
            test_worlds: 1,
            train_episodes: 12,
            test_episodes: 6,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn round_trip_and_determinism() {
        let m = generate_dataset(&small(), 7, 1).unwrap();
        let text = serialize_dataset(&m).unwrap();
        let back = parse_dataset(&text, "mem").unwrap();
        assert_eq!(back, m);
        let again = generate_dataset(&small(), 7, 3).unwrap();
        assert_eq!(serialize_dataset(&again).unwrap(), text);
    }

    #[test]
    fn splits_use_disjoint_worlds() {
        let c = small();
        let train = c.world_specs(3, Split::Train);
        let test = c.world_specs(3, Split::Test);
        assert!(train.iter().all(|w| !test.contains(w)));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let m = generate_dataset(&small(), 1, 1).unwrap();
        let text = serialize_dataset(&m).unwrap();
        let bad = text.replacen("\"version\":1", "\"version\":2", 1);
        let err = parse_dataset(&bad, "mem").unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
    }

    #[test]
    fn counts_csv_has_header_and_rows() {
        let m = generate_dataset(&small(), 2, 1).unwrap();
        let csv = counts_csv(&m);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "split,category,difficulty,total,successful,percent"
        );
        let total: usize = lines
            .map(|l| l.split(',').nth(3).unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, 18);
    }
}
