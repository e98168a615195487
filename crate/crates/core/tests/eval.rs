mod common;

use imgnav::dataset::{
    generate_dataset, partition_windows, sample_episode_spec, DatasetConfig, DatasetManifest,
    Difficulty, DifficultyMix, EpisodeSpec, Split, Trajectory, WorldCache,
};
use imgnav::env::{Action, World};
use imgnav::eval::{
    compute_success_spl, online_rollout, read_ndjson, run_rollouts, summarize_rollouts,
    trajectory_length_histogram, window_records, write_ndjson, ConstantPolicy, EpisodeLog,
    EpisodeOutcome, ExpertPolicy, ModelPolicy, OraclePolicy, RandomPolicy, Report, WindowRecord,
};
use imgnav::model::{ModelConfig, ModelWeights};
use proptest::prelude::*;

fn small_dataset(episodes: usize) -> DatasetManifest {
    let config = DatasetConfig {
        world_size: 25,
        train_worlds: 3,
        test_worlds: 2,
        train_episodes: episodes,
        test_episodes: episodes / 2,
        ..DatasetConfig::default()
    };
    generate_dataset(&config, 5, 1).unwrap()
}

fn test_split(m: &DatasetManifest) -> Vec<&Trajectory> {
    m.split(Split::Test).collect()
}

#[test]
fn oracle_scores_one_and_constant_matches_frequency() {
    let m = small_dataset(60);
    let worlds = WorldCache::for_manifest(&m).unwrap();
    let trajs = test_split(&m);
    let oracle = window_records(&OraclePolicy, &trajs, &worlds, 8, 0).unwrap();
    assert!(oracle.iter().all(|r| r.correct == r.len));

    let total: usize = trajs.iter().map(|t| t.len()).sum();
    for a in Action::ALL {
        let count = trajs
            .iter()
            .flat_map(|t| &t.actions)
            .filter(|x| **x == a)
            .count();
        let recs = window_records(&ConstantPolicy(a), &trajs, &worlds, 8, 0).unwrap();
        let correct: usize = recs.iter().map(|r| r.correct).sum();
        assert_eq!(correct, count, "{a:?}");
        assert_eq!(recs.iter().map(|r| r.len).sum::<usize>(), total);
    }
}

#[test]
fn random_policy_scores_a_quarter() {
    let m = small_dataset(500);
    let worlds = WorldCache::for_manifest(&m).unwrap();
    let trajs: Vec<&Trajectory> = m.records.iter().map(|r| &r.trajectory).collect();
    let recs = window_records(&RandomPolicy, &trajs, &worlds, 8, 3).unwrap();
    let steps: usize = recs.iter().map(|r| r.len).sum();
    let correct: usize = recs.iter().map(|r| r.correct).sum();
    assert!(steps >= 10_000, "only {steps} steps");
    let acc = correct as f64 / steps as f64;
    assert!((acc - 0.25).abs() <= 0.03, "accuracy {acc}");
}

#[test]
fn windows_partition_each_trajectory() {
    let m = small_dataset(40);
    let worlds = WorldCache::for_manifest(&m).unwrap();
    let trajs = test_split(&m);
    for t in [1, 3, 8, 50] {
        let recs = window_records(&OraclePolicy, &trajs, &worlds, t, 0).unwrap();
        for (i, traj) in trajs.iter().enumerate() {
            let mine: Vec<&WindowRecord> = recs.iter().filter(|r| r.episode == i).collect();
            assert_eq!(mine.iter().map(|r| r.len).sum::<usize>(), traj.len());
            let mut expect = 0;
            for r in &mine {
                assert_eq!(r.start, expect);
                assert!(r.len <= t && r.len > 0);
                expect += r.len;
            }
        }
    }
}

proptest! {
    #[test]
    fn partition_covers_exactly(len in 0usize..500, t in 1usize..20) {
        let parts = partition_windows(len, t);
        prop_assert_eq!(parts.iter().map(|p| p.1).sum::<usize>(), len);
        for w in parts.windows(2) {
            prop_assert_eq!(w[0].0 + w[0].1, w[1].0);
            prop_assert_eq!(w[0].1, t);
        }
    }

    #[test]
    fn spl_never_exceeds_success(
        rows in prop::collection::vec((any::<bool>(), 0.0f64..50.0, 0.1f64..20.0), 1..40)
    ) {
        let outcomes: Vec<EpisodeOutcome> = rows
            .iter()
            .map(|&(success, path_length, shortest_length)| EpisodeOutcome {
                success,
                path_length,
                shortest_length,
            })
            .collect();
        let (success, spl) = compute_success_spl(&outcomes).unwrap();
        prop_assert!(spl <= success + 1e-12);
        prop_assert!((0.0..=1.0).contains(&spl));
    }
}

#[test]
fn histogram_counts_and_difficulty_gradient() {
    let m = small_dataset(200);
    let rows = trajectory_length_histogram(&m.records);
    assert_eq!(rows.iter().map(|r| r.count).sum::<usize>(), m.records.len());
    let mean = |d: Difficulty| {
        let lens: Vec<usize> = m
            .records
            .iter()
            .filter(|r| r.trajectory.spec.difficulty == d)
            .map(|r| r.trajectory.len())
            .collect();
        lens.iter().sum::<usize>() as f64 / lens.len() as f64
    };
    assert!(mean(Difficulty::Easy) < mean(Difficulty::Hard));
    for r in &rows {
        let n = m
            .records
            .iter()
            .filter(|x| {
                x.split == r.split
                    && x.trajectory.spec.difficulty == r.difficulty
                    && x.trajectory.len() / 5 * 5 == r.bin_start
            })
            .count();
        assert_eq!(n, r.count);
    }
}

#[test]
fn spl_reference_values() {
    let case = |success, path_length, shortest_length| {
        compute_success_spl(&[EpisodeOutcome {
            success,
            path_length,
            shortest_length,
        }])
        .unwrap()
        .1
    };
    assert_eq!(case(true, 3.0, 3.0), 1.0);
    assert_eq!(case(true, 6.0, 3.0), 0.5);
    assert_eq!(case(false, 3.0, 3.0), 0.0);
    let all = compute_success_spl(&[
        EpisodeOutcome {
            success: true,
            path_length: 2.0,
            shortest_length: 2.0,
        },
        EpisodeOutcome {
            success: true,
            path_length: 4.0,
            shortest_length: 2.0,
        },
        EpisodeOutcome {
            success: false,
            path_length: 1.0,
            shortest_length: 2.0,
        },
    ])
    .unwrap();
    assert_eq!(all, (2.0 / 3.0, 0.5));
    assert!(compute_success_spl(&[EpisodeOutcome {
        success: true,
        path_length: 1.0,
        shortest_length: 0.0
    }])
    .is_err());
}

fn spec_on(world: &World, difficulty: Difficulty, seed: u64) -> EpisodeSpec {
    sample_episode_spec(world, difficulty, &mut common::rng(seed)).unwrap()
}

#[test]
fn stop_near_goal_succeeds_and_zero_budget_fails() {
    let world = World::generate(3, 25).unwrap();
    let mut spec = spec_on(&world, Difficulty::Easy, 1);
    let mut rng = common::rng(0);
    let failed = online_rollout(
        &ConstantPolicy(Action::Stop),
        &world,
        &spec,
        100,
        8,
        &mut rng,
    )
    .unwrap();
    assert!(!failed.success);

    spec.start = spec.goal;
    let r = online_rollout(
        &ConstantPolicy(Action::Stop),
        &world,
        &spec,
        100,
        8,
        &mut rng,
    )
    .unwrap();
    assert!(r.success);
    assert_eq!(r.actions, vec![Action::Stop]);

    let r = online_rollout(&ExpertPolicy, &world, &spec, 0, 8, &mut rng).unwrap();
    assert!(!r.success);
    assert!(r.actions.is_empty());
}

#[test]
fn buffer_never_exceeds_context() {
    let world = World::generate(4, 25).unwrap();
    let spec = spec_on(&world, Difficulty::Hard, 2);
    let mut rng = common::rng(9);
    // Spins in place for the whole budget.
    let r = online_rollout(
        &ConstantPolicy(Action::TurnLeft),
        &world,
        &spec,
        350,
        8,
        &mut rng,
    )
    .unwrap();
    assert_eq!(r.actions.len(), 350);
    assert_eq!(r.max_buffer_len, 8);
    let r = online_rollout(&RandomPolicy, &world, &spec, 350, 8, &mut rng).unwrap();
    assert!(r.max_buffer_len <= 8);
}

fn fresh_specs(n: usize) -> (Vec<EpisodeSpec>, WorldCache) {
    let mut cache = WorldCache::new();
    let mut rng = common::rng(21);
    let specs = (0..n)
        .map(|i| {
            let world = cache
                .ensure(imgnav::env::WorldSpec::new(i as u64 % 3, 25))
                .unwrap();
            let mix = DifficultyMix::default();
            let d = mix.sample(&mut rng);
            sample_episode_spec(world, d, &mut rng).unwrap()
        })
        .collect();
    (specs, cache)
}

#[test]
fn expert_rollouts_are_perfect() {
    let (specs, cache) = fresh_specs(60);
    let logs = run_rollouts(&ExpertPolicy, &specs, &cache, 8, 1).unwrap();
    let report = summarize_rollouts(&logs).unwrap();
    for g in &report.groups {
        assert_eq!((g.success, g.spl), (1.0, 1.0), "{g:?}");
    }
}

#[test]
fn greedy_rollouts_are_deterministic() {
    let (specs, cache) = fresh_specs(6);
    let config = ModelConfig {
        context: 8,
        ..ModelConfig::tiny()
    };
    let weights = ModelWeights::init(&config, 7).unwrap();
    let policy = ModelPolicy::greedy(&weights);
    let a = run_rollouts(&policy, &specs, &cache, 8, 4).unwrap();
    let b = run_rollouts(&policy, &specs, &cache, 8, 99).unwrap();
    assert_eq!(a, b);
    let topk = ModelPolicy::top_k(&weights);
    let c = run_rollouts(&topk, &specs, &cache, 8, 4).unwrap();
    let d = run_rollouts(&topk, &specs, &cache, 8, 4).unwrap();
    assert_eq!(c, d);
}

#[test]
fn report_rebuilds_identically_from_logs() {
    let m = small_dataset(40);
    let worlds = WorldCache::for_manifest(&m).unwrap();
    let trajs = test_split(&m);
    let mut windows = window_records(&RandomPolicy, &trajs, &worlds, 8, 2).unwrap();
    windows.extend(window_records(&OraclePolicy, &trajs, &worlds, 8, 2).unwrap());
    let (specs, cache) = fresh_specs(10);
    let mut episodes = run_rollouts(&RandomPolicy, &specs, &cache, 8, 2).unwrap();
    episodes.extend(run_rollouts(&ExpertPolicy, &specs, &cache, 8, 2).unwrap());

    let dir = tempfile::tempdir().unwrap();
    write_ndjson(&dir.path().join("w.ndjson"), &windows).unwrap();
    write_ndjson(&dir.path().join("e.ndjson"), &episodes).unwrap();
    let w2: Vec<WindowRecord> = read_ndjson(&dir.path().join("w.ndjson")).unwrap();
    let e2: Vec<EpisodeLog> = read_ndjson(&dir.path().join("e.ndjson")).unwrap();
    assert_eq!(w2, windows);
    assert_eq!(e2, episodes);

    let hist = trajectory_length_histogram(&m.records);
    let a = Report::from_logs(&windows, 8, &episodes, hist.clone()).unwrap();
    let b = Report::from_logs(&w2, 8, &e2, hist).unwrap();
    let (da, db) = (dir.path().join("a"), dir.path().join("b"));
    std::fs::create_dir_all(&da).unwrap();
    std::fs::create_dir_all(&db).unwrap();
    a.write(&da).unwrap();
    b.write(&db).unwrap();
    for f in [
        "window_accuracy.csv",
        "rollout_results.csv",
        "length_histogram.csv",
        "report.json",
    ] {
        assert_eq!(
            std::fs::read(da.join(f)).unwrap(),
            std::fs::read(db.join(f)).unwrap(),
            "{f}"
        );
    }
    let wa = a.window_accuracy.unwrap();
    let oracle = wa.group("oracle", None, None).unwrap();
    assert_eq!(oracle.accuracy, 1.0);
    let easy = wa.group("oracle", None, Some(Difficulty::Easy));
    assert!(easy.is_some_and(|g| !g.by_start.is_empty()));
}
