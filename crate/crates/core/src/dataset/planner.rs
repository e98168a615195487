use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use crate::env::{step, Action, Pose, World, FORWARD_STEP, SUCCESS_RADIUS};
use crate::error::{Error, Result};

/// Actions considered during expansion, in tie-breaking order.
const EXPANSION: [Action; 3] = [Action::MoveForward, Action::TurnLeft, Action::TurnRight];

type Key = (u64, u64, u8);

fn key(p: &Pose) -> Key {
    (p.x.to_bits(), p.y.to_bits(), p.heading.index())
}

/// Lower bound on the remaining actions: each forward move closes at most
/// one step of euclidean distance.
fn heuristic(p: &Pose, goal: &Pose) -> u32 {
    let excess = p.distance(goal) - SUCCESS_RADIUS;
    if excess <= 0.0 {
        0
    } else {
        (excess / FORWARD_STEP - 1e-9).ceil() as u32
    }
}

/// Fewest-action sequence from `start` to any pose within the success
/// radius of `goal`, followed by STOP.
///
/// Forward moves are only expanded at axis-aligned headings, so planned
/// positions stay on the cell lattice of the start pose and replay through
/// [`step`] bit for bit. Transitions are produced by [`step`] itself.
pub fn plan_shortest_path(world: &World, start: Pose, goal: Pose) -> Result<Vec<Action>> {
    if !world.is_free_at(start.x, start.y) {
        return Err(Error::Planning(format!("start {start:?} is not free")));
    }
    let mut best: HashMap<Key, u32> = HashMap::new();
    let mut parent: HashMap<Key, (Key, Action)> = HashMap::new();
    let mut poses: HashMap<Key, Pose> = HashMap::new();
    let mut heap = BinaryHeap::new();
    let mut counter = 0u64;

    let k0 = key(&start);
    best.insert(k0, 0);
    poses.insert(k0, start);
    heap.push(Reverse((heuristic(&start, &goal), counter, 0u32, k0)));

    while let Some(Reverse((_, _, g, k))) = heap.pop() {
        if g > best[&k] {
            continue;
        }
        let pose = poses[&k];
        if pose.distance(&goal) <= SUCCESS_RADIUS {
            let mut actions = vec![Action::Stop];
            let mut cur = k;
            while let Some(&(prev, action)) = parent.get(&cur) {
                actions.push(action);
                cur = prev;
            }
            actions.reverse();
            return Ok(actions);
        }
        for action in EXPANSION {
            if action == Action::MoveForward && !pose.heading.is_axis_aligned() {
                continue;
            }
            let (next, _) = step(world, pose, action);
            let nk = key(&next);
            if nk == k {
                continue;
            }
            let ng = g + 1;
            if best.get(&nk).is_none_or(|&old| ng < old) {
                best.insert(nk, ng);
                parent.insert(nk, (k, action));
                poses.insert(nk, next);
                counter += 1;
                heap.push(Reverse((ng + heuristic(&next, &goal), counter, ng, nk)));
            }
        }
    }
    Err(Error::Planning(format!(
        "goal {goal:?} unreachable from {start:?} in {}",
        world.name()
    )))
}
