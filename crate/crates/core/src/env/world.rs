use std::collections::VecDeque;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CELL_SIZE, NUM_TEXTURES_U8};
use crate::error::{Error, Result};

pub const WORLD_FORMAT_VERSION: u32 = 1;

/// Probability that a non-tree wall between two rooms is opened as well.
const LOOP_PROBABILITY: f64 = 0.3;
/// Probability that an opening spans the whole shared wall.
const FULL_OPENING_PROBABILITY: f64 = 0.3;

/// Serializable recipe from which a [`World`] is regenerated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub size: usize,
    pub version: u32,
}

impl WorldSpec {
    pub fn new(seed: u64, size: usize) -> Self {
        WorldSpec {
            seed,
            size,
            version: WORLD_FORMAT_VERSION,
        }
    }

    pub fn build(&self) -> Result<World> {
        if self.version != WORLD_FORMAT_VERSION {
            return Err(Error::format(
                "world spec",
                format!(
                    "version {} unsupported (expected {WORLD_FORMAT_VERSION})",
                    self.version
                ),
            ));
        }
        World::generate(self.seed, self.size)
    }
}

/// Square grid of free and wall cells; immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    seed: u64,
    size: usize,
    walls: Vec<bool>,
    textures: Vec<u8>,
    name: String,
}

impl World {
    /// Seeded maze of square rooms joined by doorways, with extra openings
    /// so that some pairs of rooms are connected by more than one route.
    pub fn generate(seed: u64, size: usize) -> Result<World> {
        if size < 16 {
            return Err(Error::Config(format!("world size {size} below minimum 16")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pitch = if size >= 25 { 8 } else { 5 };
        let rooms = (size - 1) / pitch;
        let mut walls = vec![true; size * size];
        let idx = |c: usize, r: usize| r * size + c;

        for room_r in 0..rooms {
            for room_c in 0..rooms {
                for r in room_r * pitch + 1..(room_r + 1) * pitch {
                    for c in room_c * pitch + 1..(room_c + 1) * pitch {
                        walls[idx(c, r)] = false;
                    }
                }
            }
        }

        // Spanning tree over rooms by randomized depth-first search.
        let room_id = |c: usize, r: usize| r * rooms + c;
        let mut visited = vec![false; rooms * rooms];
        let mut tree: Vec<(usize, usize)> = Vec::new();
        let mut stack = vec![(0usize, 0usize)];
        visited[0] = true;
        while let Some(&(c, r)) = stack.last() {
            let mut next: Vec<(usize, usize)> = Vec::new();
            if c > 0 {
                next.push((c - 1, r));
            }
            if c + 1 < rooms {
                next.push((c + 1, r));
            }
            if r > 0 {
                next.push((c, r - 1));
            }
            if r + 1 < rooms {
                next.push((c, r + 1));
            }
            next.retain(|&(nc, nr)| !visited[room_id(nc, nr)]);
            if let Some(&(nc, nr)) = next.choose(&mut rng) {
                visited[room_id(nc, nr)] = true;
                tree.push((room_id(c, r), room_id(nc, nr)));
                stack.push((nc, nr));
            } else {
                stack.pop();
            }
        }

        let mut openings = tree.clone();
        for r in 0..rooms {
            for c in 0..rooms {
                for (nc, nr) in [(c + 1, r), (c, r + 1)] {
                    if nc >= rooms || nr >= rooms {
                        continue;
                    }
                    let pair = (room_id(c, r), room_id(nc, nr));
                    let in_tree = tree.iter().any(|&(a, b)| (a, b) == pair || (b, a) == pair);
                    if !in_tree && rng.random_bool(LOOP_PROBABILITY) {
                        openings.push(pair);
                    }
                }
            }
        }

        for (a, b) in openings {
            let (a, b) = (a.min(b), a.max(b));
            let (ac, ar) = (a % rooms, a / rooms);
            let horizontal = b == a + 1;
            let span = pitch - 1;
            let (start, width) = if rng.random_bool(FULL_OPENING_PROBABILITY) {
                (0, span)
            } else {
                let width = rng.random_range(2..=(span - 1).clamp(2, 4));
                (rng.random_range(0..=span - width), width)
            };
            for k in start..start + width {
                let cell = if horizontal {
                    idx((ac + 1) * pitch, ar * pitch + 1 + k)
                } else {
                    idx(ac * pitch + 1 + k, (ar + 1) * pitch)
                };
                walls[cell] = false;
            }
        }

        let textures = (0..size * size)
            .map(|_| rng.random_range(0..NUM_TEXTURES_U8))
            .collect();
        Ok(World {
            seed,
            size,
            walls,
            textures,
            name: format!("maze-{seed}-{size}"),
        })
    }

    /// Hand-built world. The outer ring is forced to wall.
    pub fn from_fn(
        size: usize,
        is_wall: impl Fn(usize, usize) -> bool,
        texture: impl Fn(usize, usize) -> u8,
    ) -> World {
        let mut walls = Vec::with_capacity(size * size);
        let mut textures = Vec::with_capacity(size * size);
        for r in 0..size {
            for c in 0..size {
                let boundary = r == 0 || c == 0 || r + 1 == size || c + 1 == size;
                walls.push(boundary || is_wall(c, r));
                textures.push(texture(c, r) % NUM_TEXTURES_U8);
            }
        }
        World {
            seed: 0,
            size,
            walls,
            textures,
            name: "custom".into(),
        }
    }

    pub fn spec(&self) -> WorldSpec {
        WorldSpec::new(self.seed, self.size)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.size + col
    }

    pub fn is_free(&self, col: usize, row: usize) -> bool {
        col < self.size && row < self.size && !self.walls[self.index(col, row)]
    }

    pub fn is_free_at(&self, x: f64, y: f64) -> bool {
        let (c, r) = ((x / CELL_SIZE).floor(), (y / CELL_SIZE).floor());
        c >= 0.0 && r >= 0.0 && self.is_free(c as usize, r as usize)
    }

    /// Texture id of a cell (meaningful for walls).
    pub fn texture(&self, col: usize, row: usize) -> u8 {
        self.textures[self.index(col, row)]
    }

    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.size {
            for c in 0..self.size {
                if self.is_free(c, r) {
                    out.push((c, r));
                }
            }
        }
        out
    }

    /// BFS step counts from `from` over 4-connected free cells; `u32::MAX`
    /// marks unreachable cells.
    pub fn distance_field(&self, from: (usize, usize)) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.size * self.size];
        if !self.is_free(from.0, from.1) {
            return dist;
        }
        let mut queue = VecDeque::new();
        dist[self.index(from.0, from.1)] = 0;
        queue.push_back(from);
        while let Some((c, r)) = queue.pop_front() {
            let d = dist[self.index(c, r)];
            let neighbors = [
                (c.wrapping_sub(1), r),
                (c + 1, r),
                (c, r.wrapping_sub(1)),
                (c, r + 1),
            ];
            for (nc, nr) in neighbors {
                if self.is_free(nc, nr) && dist[self.index(nc, nr)] == u32::MAX {
                    dist[self.index(nc, nr)] = d + 1;
                    queue.push_back((nc, nr));
                }
            }
        }
        dist
    }

    pub fn wall_count(&self) -> usize {
        self.walls.iter().filter(|&&w| w).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_world() {
        let a = World::generate(7, 41).unwrap();
        let b = World::generate(7, 41).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, World::generate(8, 41).unwrap());
    }

    #[test]
    fn boundary_is_wall() {
        for seed in 0..5 {
            let w = World::generate(seed, 33).unwrap();
            let n = w.size();
            for i in 0..n {
                assert!(!w.is_free(i, 0) && !w.is_free(i, n - 1));
                assert!(!w.is_free(0, i) && !w.is_free(n - 1, i));
            }
        }
    }

    #[test]
    fn rejects_tiny_worlds() {
        assert!(World::generate(1, 15).is_err());
        assert!(World::generate(1, 16).is_ok());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = WorldSpec::new(42, 41);
        let json = serde_json::to_string(&spec).unwrap();
        let back: WorldSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.build().unwrap(), spec.build().unwrap());
        let bad = WorldSpec {
            version: 99,
            ..spec
        };
        assert!(bad.build().is_err());
    }
}
