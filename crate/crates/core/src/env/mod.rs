//! Deterministic gridworld stand-in for a photorealistic indoor simulator.
//!
//! The agent is a point with continuous `(x, y)` in meters and one of twelve
//! headings. Worlds are square cell grids (0.25 m cells) generated from a
//! seed; observations are egocentric raycasts over a 90° field of view.

mod render;
mod world;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use render::{render_observation, Observation, NUM_CHANNELS, NUM_RAYS, NUM_TEXTURES};
pub use world::{World, WorldSpec, WORLD_FORMAT_VERSION};

/// Side length of one grid cell in meters.
pub const CELL_SIZE: f64 = 0.25;
/// Translation of one MOVE_FORWARD in meters.
pub const FORWARD_STEP: f64 = 0.25;
/// Rotation of one turn in degrees.
pub const TURN_DEGREES: u16 = 30;
pub const NUM_HEADINGS: u8 = 12;
pub const FIELD_OF_VIEW_DEGREES: f64 = 90.0;
/// Depth beyond which observations saturate.
pub const MAX_DEPTH: f64 = 8.0;
/// STOP within this euclidean radius of the goal counts as success.
pub const SUCCESS_RADIUS: f64 = 1.0;

pub(crate) const NUM_TEXTURES_U8: u8 = NUM_TEXTURES as u8;

const HALF_SQRT3: f64 = 0.866_025_403_784_438_6;

/// Unit direction vectors per heading index. Exact on the axes so that
/// axis-aligned motion stays on the cell lattice.
const DIRECTIONS: [(f64, f64); 12] = [
    (1.0, 0.0),
    (HALF_SQRT3, 0.5),
    (0.5, HALF_SQRT3),
    (0.0, 1.0),
    (-0.5, HALF_SQRT3),
    (-HALF_SQRT3, 0.5),
    (-1.0, 0.0),
    (-HALF_SQRT3, -0.5),
    (-0.5, -HALF_SQRT3),
    (0.0, -1.0),
    (0.5, -HALF_SQRT3),
    (HALF_SQRT3, -0.5),
];

/// The four environment actions, in id order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Stop = 0,
    MoveForward = 1,
    TurnLeft = 2,
    TurnRight = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [
        Action::Stop,
        Action::MoveForward,
        Action::TurnLeft,
        Action::TurnRight,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Action> {
        Self::ALL.get(id).copied()
    }
}

/// Heading as a multiple of 30°; `0` faces +x, increasing counter-clockwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Heading(u8);

impl Heading {
    pub fn from_index(index: u8) -> Heading {
        Heading(index % NUM_HEADINGS)
    }

    pub fn from_degrees(degrees: i64) -> Option<Heading> {
        if degrees % TURN_DEGREES as i64 != 0 {
            return None;
        }
        let idx = (degrees / TURN_DEGREES as i64).rem_euclid(NUM_HEADINGS as i64);
        Some(Heading(idx as u8))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn degrees(self) -> u16 {
        self.0 as u16 * TURN_DEGREES
    }

    pub fn left(self) -> Heading {
        Heading((self.0 + 1) % NUM_HEADINGS)
    }

    pub fn right(self) -> Heading {
        Heading((self.0 + NUM_HEADINGS - 1) % NUM_HEADINGS)
    }

    pub fn direction(self) -> (f64, f64) {
        DIRECTIONS[self.0 as usize]
    }

    pub fn is_axis_aligned(self) -> bool {
        self.0.is_multiple_of(3)
    }

    /// Absolute wrapped difference in degrees, in `[0, 180]`.
    pub fn difference_degrees(self, other: Heading) -> u16 {
        let d = (self.degrees() as i32 - other.degrees() as i32).rem_euclid(360);
        d.min(360 - d) as u16
    }
}

impl Serialize for Heading {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u16(self.degrees())
    }
}

impl<'de> Deserialize<'de> for Heading {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let deg = u16::deserialize(d)?;
        if deg >= 360 {
            return Err(serde::de::Error::custom(format!(
                "heading {deg} out of range"
            )));
        }
        Heading::from_degrees(deg as i64)
            .ok_or_else(|| serde::de::Error::custom(format!("heading {deg} not a multiple of 30")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: Heading,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: Heading) -> Pose {
        Pose { x, y, heading }
    }

    /// Pose at the center of cell `(col, row)`.
    pub fn at_cell(col: usize, row: usize, heading: Heading) -> Pose {
        Pose {
            x: (col as f64 + 0.5) * CELL_SIZE,
            y: (row as f64 + 0.5) * CELL_SIZE,
            heading,
        }
    }

    /// Grid cell containing the position, if non-negative.
    pub fn cell(&self) -> Option<(usize, usize)> {
        let (cx, cy) = ((self.x / CELL_SIZE).floor(), (self.y / CELL_SIZE).floor());
        (cx >= 0.0 && cy >= 0.0).then_some((cx as usize, cy as usize))
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Bitwise equality, including the sign of zero.
    pub fn bits_eq(&self, other: &Pose) -> bool {
        self.x.to_bits() == other.x.to_bits()
            && self.y.to_bits() == other.y.to_bits()
            && self.heading == other.heading
    }
}

/// Applies one action. Returns the new pose and whether the episode ended.
///
/// A forward move whose destination lies in a wall leaves the pose unchanged
/// and reports nothing.
pub fn step(world: &World, pose: Pose, action: Action) -> (Pose, bool) {
    match action {
        Action::Stop => (pose, true),
        Action::TurnLeft => (
            Pose {
                heading: pose.heading.left(),
                ..pose
            },
            false,
        ),
        Action::TurnRight => (
            Pose {
                heading: pose.heading.right(),
                ..pose
            },
            false,
        ),
        Action::MoveForward => {
            let (dx, dy) = pose.heading.direction();
            let next = Pose {
                x: pose.x + FORWARD_STEP * dx,
                y: pose.y + FORWARD_STEP * dy,
                heading: pose.heading,
            };
            if world.is_free_at(next.x, next.y) {
                (next, false)
            } else {
                (pose, false)
            }
        }
    }
}

/// Shortest 4-connected path length between the cells of `a` and `b`, in
/// meters; infinite when unreachable.
pub fn geodesic_distance(world: &World, a: &Pose, b: &Pose) -> f64 {
    let (Some(ca), Some(cb)) = (a.cell(), b.cell()) else {
        return f64::INFINITY;
    };
    if !world.is_free(ca.0, ca.1) || !world.is_free(cb.0, cb.1) {
        return f64::INFINITY;
    }
    let field = world.distance_field(ca);
    match field[world.index(cb.0, cb.1)] {
        u32::MAX => f64::INFINITY,
        steps => steps as f64 * CELL_SIZE,
    }
}

pub fn is_success(pose: &Pose, goal: &Pose, called_stop: bool) -> bool {
    called_stop && pose.distance(goal) <= SUCCESS_RADIUS
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_room(n: usize) -> World {
        World::from_fn(
            n,
            |c, r| c == 0 || r == 0 || c == n - 1 || r == n - 1,
            |_, _| 0,
        )
    }

    #[test]
    fn forward_at_heading_zero_moves_quarter_meter() {
        let w = open_room(10);
        let p = Pose::at_cell(3, 3, Heading::from_index(0));
        let (q, done) = step(&w, p, Action::MoveForward);
        assert!(!done);
        assert_eq!(q.x, p.x + 0.25);
        assert_eq!(q.y, p.y);
    }

    #[test]
    fn turns_follow_counter_clockwise_convention() {
        let w = open_room(10);
        let p = Pose::at_cell(3, 3, Heading::from_index(0));
        assert_eq!(step(&w, p, Action::TurnLeft).0.heading.degrees(), 30);
        assert_eq!(step(&w, p, Action::TurnRight).0.heading.degrees(), 330);
    }

    #[test]
    fn forward_into_wall_is_blocked_silently() {
        let w = open_room(10);
        let p = Pose::at_cell(8, 3, Heading::from_index(0));
        let (q, done) = step(&w, p, Action::MoveForward);
        assert!(q.bits_eq(&p));
        assert!(!done);
    }

    #[test]
    fn stop_ends_episode_in_place() {
        let w = open_room(10);
        let p = Pose::at_cell(4, 4, Heading::from_index(5));
        let (q, done) = step(&w, p, Action::Stop);
        assert!(done && q.bits_eq(&p));
    }

    #[test]
    fn success_requires_stop_within_radius() {
        let goal = Pose::new(2.0, 2.0, Heading::from_index(0));
        let at = goal;
        let near = Pose::new(2.9, 2.0, Heading::from_index(0));
        let far = Pose::new(3.1, 2.0, Heading::from_index(0));
        assert!(is_success(&at, &goal, true));
        assert!(is_success(&near, &goal, true));
        assert!(!is_success(&near, &goal, false));
        assert!(!is_success(&far, &goal, true));
    }

    #[test]
    fn geodesic_in_straight_corridor() {
        let w = World::from_fn(14, |c, r| r != 1 || c == 0 || c == 13, |_, _| 0);
        let a = Pose::at_cell(1, 1, Heading::from_index(0));
        let b = Pose::at_cell(11, 1, Heading::from_index(0));
        assert_eq!(geodesic_distance(&w, &a, &a), 0.0);
        assert_eq!(geodesic_distance(&w, &a, &b), 2.5);
    }

    #[test]
    fn heading_difference_wraps() {
        let a = Heading::from_index(11);
        let b = Heading::from_index(1);
        assert_eq!(a.difference_degrees(b), 60);
        assert_eq!(
            Heading::from_index(0).difference_degrees(Heading::from_index(6)),
            180
        );
    }

    #[test]
    fn heading_serializes_as_degrees() {
        let p = Pose::new(1.0, 2.0, Heading::from_index(4));
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"x":1.0,"y":2.0,"heading":120}"#);
        assert!(serde_json::from_str::<Pose>(r#"{"x":1.0,"y":2.0,"heading":45}"#).is_err());
    }
}
