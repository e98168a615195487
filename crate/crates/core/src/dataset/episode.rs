use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{geodesic_distance, Heading, Pose, World, WorldSpec, CELL_SIZE, NUM_HEADINGS};
use crate::error::{Error, Result};

/// Geodesic/euclidean ratio below which a path counts as straight.
pub const STRAIGHT_RATIO: f64 = 1.2;
/// Start/goal heading difference below which a path counts as straight.
pub const STRAIGHT_HEADING_DEGREES: u16 = 45;
/// Distance bin edges in meters: easy [1.5, 3), medium [3, 5), hard [5, 10].
pub const DIFFICULTY_EDGES: [f64; 4] = [1.5, 3.0, 5.0, 10.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Straight,
    Curved,
}

impl Category {
    pub const ALL: [Category; 2] = [Category::Straight, Category::Curved];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Straight => "straight",
            Category::Curved => "curved",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }

    /// Bin for a geodesic distance; `None` outside `[1.5, 10]`.
    pub fn from_distance(geodesic: f64) -> Option<Difficulty> {
        let [a, b, c, d] = DIFFICULTY_EDGES;
        match geodesic {
            g if (a..b).contains(&g) => Some(Difficulty::Easy),
            g if (b..c).contains(&g) => Some(Difficulty::Medium),
            g if (c..=d).contains(&g) => Some(Difficulty::Hard),
            _ => None,
        }
    }

    /// Rollout step budget.
    pub fn step_budget(self) -> usize {
        match self {
            Difficulty::Easy => 100,
            Difficulty::Medium | Difficulty::Hard => 350,
        }
    }

    fn contains(self, geodesic: f64) -> bool {
        Difficulty::from_distance(geodesic) == Some(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub world: WorldSpec,
    pub start: Pose,
    pub goal: Pose,
    pub category: Category,
    pub difficulty: Difficulty,
    pub max_steps: usize,
}

impl EpisodeSpec {
    /// Checks the spec against the world it names.
    pub fn validate(&self, world: &World) -> Result<()> {
        if world.spec() != self.world {
            return Err(Error::Contract("episode names a different world".into()));
        }
        let (category, difficulty) = categorize_episode(world, &self.start, &self.goal)?;
        if category != self.category || difficulty != self.difficulty {
            return Err(Error::Contract(format!(
                "stored labels {:?}/{:?} disagree with computed {category:?}/{difficulty:?}",
                self.category, self.difficulty
            )));
        }
        Ok(())
    }

    pub fn shortest_length(&self, world: &World) -> f64 {
        geodesic_distance(world, &self.start, &self.goal)
    }
}

/// Straight/curved label and difficulty bin for a start/goal pair.
pub fn categorize_episode(
    world: &World,
    start: &Pose,
    goal: &Pose,
) -> Result<(Category, Difficulty)> {
    let geodesic = geodesic_distance(world, start, goal);
    let difficulty = Difficulty::from_distance(geodesic)
        .ok_or_else(|| Error::Data(format!("geodesic distance {geodesic} outside [1.5, 10] m")))?;
    let ratio = geodesic / start.distance(goal);
    Ok((
        classify(ratio, start.heading.difference_degrees(goal.heading)),
        difficulty,
    ))
}

/// Straight iff the ratio and the heading difference are both small.
pub fn classify(ratio: f64, heading_difference_degrees: u16) -> Category {
    if ratio < STRAIGHT_RATIO && heading_difference_degrees < STRAIGHT_HEADING_DEGREES {
        Category::Straight
    } else {
        Category::Curved
    }
}

/// Requested difficulty proportions (easy, medium, hard).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DifficultyMix {
    pub easy: f64,
    pub medium: f64,
    pub hard: f64,
}

impl Default for DifficultyMix {
    fn default() -> Self {
        DifficultyMix {
            easy: 1.0 / 3.0,
            medium: 1.0 / 3.0,
            hard: 1.0 / 3.0,
        }
    }
}

impl DifficultyMix {
    pub fn validate(&self) -> Result<()> {
        let w = [self.easy, self.medium, self.hard];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!(
                "difficulty mix {w:?} must be non-negative with positive sum"
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Difficulty {
        let total = self.easy + self.medium + self.hard;
        let u = rng.random::<f64>() * total;
        if u < self.easy {
            Difficulty::Easy
        } else if u < self.easy + self.medium {
            Difficulty::Medium
        } else {
            Difficulty::Hard
        }
    }
}

/// Random episode of the given difficulty with start and goal at cell
/// centers. Retries start cells until one has a goal in range.
pub fn sample_episode_spec<R: Rng + ?Sized>(
    world: &World,
    difficulty: Difficulty,
    rng: &mut R,
) -> Result<EpisodeSpec> {
    let cells = world.free_cells();
    if cells.is_empty() {
        return Err(Error::Data(format!("{} has no free cells", world.name())));
    }
    for _ in 0..1000 {
        let &(sc, sr) = cells.choose(rng).expect("non-empty");
        let field = world.distance_field((sc, sr));
        let candidates: Vec<(usize, usize)> = cells
            .iter()
            .copied()
            .filter(|&(c, r)| {
                let steps = field[world.index(c, r)];
                steps != u32::MAX && difficulty.contains(steps as f64 * CELL_SIZE)
            })
            .collect();
        let Some(&(gc, gr)) = candidates.choose(rng) else {
            continue;
        };
        let start = Pose::at_cell(
            sc,
            sr,
            Heading::from_index(rng.random_range(0..NUM_HEADINGS)),
        );
        let goal = Pose::at_cell(
            gc,
            gr,
            Heading::from_index(rng.random_range(0..NUM_HEADINGS)),
        );
        let (category, difficulty) = categorize_episode(world, &start, &goal)?;
        return Ok(EpisodeSpec {
            world: world.spec(),
            start,
            goal,
            category,
            difficulty,
            max_steps: difficulty.step_budget(),
        });
    }
    Err(Error::Data(format!(
        "no {} episode found in {}",
        difficulty.as_str(),
        world.name()
    )))
}
