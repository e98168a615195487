//! Offline window accuracy, closed-loop rollouts, and report files.

mod buffer;
mod offline;
mod online;
mod policy;
mod report;

pub use buffer::ContextBuffer;
pub use offline::{
    offline_window_accuracy, summarize_windows, window_records, StartStat, WindowGroup,
    WindowRecord, WindowReport,
};
pub use online::{
    compute_success_spl, episode_mix, evaluation_specs, online_rollout, run_rollouts,
    summarize_rollouts, EpisodeLog, EpisodeOutcome, Rollout, RolloutGroup, RolloutReport,
};
pub use policy::{
    ConstantPolicy, ExpertPolicy, ModelPolicy, OraclePolicy, RandomPolicy, RolloutPolicy,
    StepContext, WindowPolicy,
};
pub use report::{
    length_histogram_csv, read_ndjson, rollout_results_csv, trajectory_length_histogram,
    window_accuracy_csv, write_ndjson, HistogramRow, Report, LENGTH_BIN, REPORT_VERSION,
};
