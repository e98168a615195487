//! Expert demonstrations: planning, episode sampling, collection,
//! filtering, training windows, and the on-disk dataset format.

mod collect;
mod episode;
mod io;
mod planner;
mod window;

pub use collect::{collect_episode, filter_successful, Expert, Trajectory, DEFAULT_EPSILON};
pub use episode::{
    categorize_episode, classify, sample_episode_spec, Category, Difficulty, DifficultyMix,
    EpisodeSpec, DIFFICULTY_EDGES, STRAIGHT_HEADING_DEGREES, STRAIGHT_RATIO,
};
pub use io::{
    counts_csv, generate_dataset, load_dataset, serialize_dataset, write_dataset, DatasetConfig,
    DatasetManifest, EpisodeRecord, Split, SplitCounts, WorldCache, DATASET_FORMAT_VERSION,
};
pub use planner::plan_shortest_path;
pub use window::{extract_window, partition_windows, sample_training_window, Window};
