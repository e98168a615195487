mod common;

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use imgnav::env::{
    geodesic_distance, render_observation, step, Action, Heading, Pose, World, CELL_SIZE,
};
use rand::Rng;

/// Connected components by iterative depth-first flood fill.
fn components(world: &World) -> usize {
    let n = world.size();
    let mut seen = vec![false; n * n];
    let mut count = 0;
    for (c, r) in world.free_cells() {
        if seen[r * n + c] {
            continue;
        }
        count += 1;
        let mut stack = vec![(c, r)];
        seen[r * n + c] = true;
        while let Some((c, r)) = stack.pop() {
            for (dc, dr) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (nc, nr) = (c as i64 + dc, r as i64 + dr);
                if nc < 0 || nr < 0 {
                    continue;
                }
                let (nc, nr) = (nc as usize, nr as usize);
                if world.is_free(nc, nr) && !seen[nr * n + nc] {
                    seen[nr * n + nc] = true;
                    stack.push((nc, nr));
                }
            }
        }
    }
    count
}

/// Dijkstra over free cells with unit edge weights.
fn dijkstra(world: &World, from: (usize, usize), to: (usize, usize)) -> Option<u64> {
    let n = world.size();
    let mut best = vec![u64::MAX; n * n];
    let mut heap = BinaryHeap::new();
    best[from.1 * n + from.0] = 0;
    heap.push(Reverse((0u64, from)));
    while let Some(Reverse((d, (c, r)))) = heap.pop() {
        if (c, r) == to {
            return Some(d);
        }
        if d > best[r * n + c] {
            continue;
        }
        for (nc, nr) in [
            (c.wrapping_sub(1), r),
            (c + 1, r),
            (c, r.wrapping_sub(1)),
            (c, r + 1),
        ] {
            if world.is_free(nc, nr) && d + 1 < best[nr * n + nc] {
                best[nr * n + nc] = d + 1;
                heap.push(Reverse((d + 1, (nc, nr))));
            }
        }
    }
    None
}

#[test]
fn generated_worlds_are_connected() {
    for seed in 0..40 {
        for size in [16, 25, 33, 41] {
            let w = World::generate(seed, size).unwrap();
            assert!(!w.free_cells().is_empty());
            assert_eq!(components(&w), 1, "seed {seed} size {size}");
        }
    }
}

#[test]
fn step_never_enters_a_wall() {
    let mut rng = common::rng(99);
    for seed in 0..10 {
        let world = World::generate(seed, 41).unwrap();
        let cells = world.free_cells();
        let (c, r) = cells[rng.random_range(0..cells.len())];
        let mut pose = Pose::at_cell(c, r, Heading::from_index(rng.random_range(0..12)));
        for _ in 0..10_000 {
            let action = Action::from_id(rng.random_range(1..4)).unwrap();
            pose = step(&world, pose, action).0;
            assert!(world.is_free_at(pose.x, pose.y), "{pose:?}");
        }
    }
}

#[test]
fn geodesic_matches_dijkstra_around_obstacle() {
    // A wall segment between the two points forces a detour.
    let world = World::from_fn(12, |c, r| c == 5 && (2..=9).contains(&r), |_, _| 0);
    let a = Pose::at_cell(2, 5, Heading::from_index(0));
    let b = Pose::at_cell(8, 5, Heading::from_index(0));
    let steps = dijkstra(&world, (2, 5), (8, 5)).unwrap();
    assert_eq!(geodesic_distance(&world, &a, &b), steps as f64 * CELL_SIZE);
    assert!(geodesic_distance(&world, &a, &b) > a.distance(&b) + 1.0);
}

#[test]
fn geodesic_matches_dijkstra_on_random_pairs() {
    let mut rng = common::rng(5);
    for seed in 0..5 {
        let world = World::generate(seed, 33).unwrap();
        let cells = world.free_cells();
        for _ in 0..40 {
            let a = cells[rng.random_range(0..cells.len())];
            let b = cells[rng.random_range(0..cells.len())];
            let pa = Pose::at_cell(a.0, a.1, Heading::from_index(0));
            let pb = Pose::at_cell(b.0, b.1, Heading::from_index(0));
            let g = geodesic_distance(&world, &pa, &pb);
            assert_eq!(g, dijkstra(&world, a, b).unwrap() as f64 * CELL_SIZE);
            assert!(g >= pa.distance(&pb) - CELL_SIZE);
        }
    }
}

#[test]
fn unreachable_is_infinite() {
    let world = World::from_fn(12, |c, _| c == 6, |_, _| 0);
    let a = Pose::at_cell(2, 2, Heading::from_index(0));
    let b = Pose::at_cell(9, 2, Heading::from_index(0));
    assert!(geodesic_distance(&world, &a, &b).is_infinite());
}

#[test]
fn rendering_is_deterministic() {
    let world = World::generate(11, 41).unwrap();
    let again = World::generate(11, 41).unwrap();
    let (c, r) = world.free_cells()[37];
    let pose = Pose::at_cell(c, r, Heading::from_index(7));
    let a = render_observation(&world, &pose);
    let b = render_observation(&again, &pose);
    assert!(a.bits_eq(&b));
}

#[test]
fn quarter_turn_in_symmetric_room_gives_same_view() {
    // 13x13 grid with a 9x9 free interior centered on cell (6, 6).
    let world = World::from_fn(
        13,
        |c, r| !(2..=10).contains(&c) || !(2..=10).contains(&r),
        |_, _| 3,
    );
    let center = Pose::at_cell(6, 6, Heading::from_index(0));
    let base = render_observation(&world, &center);
    for k in 1..4 {
        let rotated = Pose {
            heading: Heading::from_index(3 * k),
            ..center
        };
        let obs = render_observation(&world, &rotated);
        for ray in 0..imgnav::env::NUM_RAYS {
            assert!((obs.depth(ray) - base.depth(ray)).abs() < 1e-9);
            assert_eq!(obs.texture(ray), base.texture(ray));
        }
    }
}
