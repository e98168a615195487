//! Collects a small expert dataset, prints the per-split counts table and
//! replays every stored trajectory through the environment.

use imgnav::dataset::{
    counts_csv, generate_dataset, load_dataset, write_dataset, DatasetConfig, WorldCache,
};

fn main() -> imgnav::Result<()> {
    let config = DatasetConfig {
        world_size: 25,
        train_worlds: 4,
        test_worlds: 2,
        train_episodes: 120,
        test_episodes: 40,
        ..DatasetConfig::default()
    };
    let manifest = generate_dataset(&config, 42, 2)?;
    print!("{}", counts_csv(&manifest));

    let path = std::env::temp_dir().join("imgnav-example-dataset.ndjson");
    write_dataset(&manifest, &path)?;
    let loaded = load_dataset(&path)?;
    let worlds = WorldCache::for_manifest(&loaded)?;
    let replayed = loaded
        .records
        .iter()
        .filter(|r| {
            r.trajectory
                .verify_replay(worlds.world(&r.trajectory.spec.world))
                .is_ok()
        })
        .count();
    println!(
        "{} of {} records replay exactly ({})",
        replayed,
        loaded.records.len(),
        path.display()
    );

    let first = &loaded.records[0].trajectory;
    let ids: Vec<usize> = first.actions.iter().map(|a| a.id()).collect();
    println!(
        "first episode {:?}/{:?}: {ids:?}",
        first.spec.category, first.spec.difficulty
    );
    Ok(())
}
