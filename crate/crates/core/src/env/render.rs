use serde::{Deserialize, Serialize};

use super::{Pose, World, CELL_SIZE, FIELD_OF_VIEW_DEGREES, MAX_DEPTH};

pub const NUM_RAYS: usize = 32;
pub const NUM_TEXTURES: usize = 16;
/// Depth plus one-hot texture.
pub const NUM_CHANNELS: usize = 1 + NUM_TEXTURES;

/// Egocentric raster laid out `[channel, ray]`, rays ordered left to right.
///
/// Channel 0 holds hit distance divided by [`MAX_DEPTH`] and clipped to
/// `[0, 1]`; channels `1..=16` one-hot encode the texture of the wall hit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    data: Vec<f64>,
}

impl Observation {
    pub const LEN: usize = NUM_CHANNELS * NUM_RAYS;

    pub fn zeros() -> Observation {
        Observation {
            data: vec![0.0; Self::LEN],
        }
    }

    pub fn from_data(data: Vec<f64>) -> Option<Observation> {
        (data.len() == Self::LEN).then_some(Observation { data })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn depth(&self, ray: usize) -> f64 {
        self.data[ray]
    }

    /// Texture id hit by `ray`.
    pub fn texture(&self, ray: usize) -> usize {
        (0..NUM_TEXTURES)
            .find(|&t| self.data[(1 + t) * NUM_RAYS + ray] == 1.0)
            .expect("texture channels are one-hot")
    }

    pub fn bits_eq(&self, other: &Observation) -> bool {
        self.data
            .iter()
            .zip(&other.data)
            .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Ray angle in degrees for ray `i`, relative to the world frame.
fn ray_angle(heading_deg: f64, i: usize) -> f64 {
    let step = FIELD_OF_VIEW_DEGREES / NUM_RAYS as f64;
    heading_deg + FIELD_OF_VIEW_DEGREES / 2.0 - (i as f64 + 0.5) * step
}

/// Grid traversal from `(x, y)` along `(dx, dy)` to the first wall cell.
/// Returns the euclidean hit distance in meters and the hit cell.
fn cast(world: &World, x: f64, y: f64, dx: f64, dy: f64) -> (f64, (usize, usize)) {
    let (px, py) = (x / CELL_SIZE, y / CELL_SIZE);
    let (mut cx, mut cy) = (px.floor() as i64, py.floor() as i64);
    let n = world.size() as i64;
    let inside = |c: i64, r: i64| c >= 0 && r >= 0 && c < n && r < n;
    if !inside(cx, cy) || !world.is_free(cx as usize, cy as usize) {
        let (c, r) = (cx.clamp(0, n - 1) as usize, cy.clamp(0, n - 1) as usize);
        return (0.0, (c, r));
    }
    let delta_x = if dx == 0.0 {
        f64::INFINITY
    } else {
        (1.0 / dx).abs()
    };
    let delta_y = if dy == 0.0 {
        f64::INFINITY
    } else {
        (1.0 / dy).abs()
    };
    let (step_x, mut side_x) = if dx < 0.0 {
        (-1, (px - cx as f64) * delta_x)
    } else {
        (1, (cx as f64 + 1.0 - px) * delta_x)
    };
    let (step_y, mut side_y) = if dy < 0.0 {
        (-1, (py - cy as f64) * delta_y)
    } else {
        (1, (cy as f64 + 1.0 - py) * delta_y)
    };
    loop {
        let travelled;
        if side_x < side_y {
            travelled = side_x;
            side_x += delta_x;
            cx += step_x;
        } else {
            travelled = side_y;
            side_y += delta_y;
            cy += step_y;
        }
        if !inside(cx, cy) {
            // Unreachable for worlds with a wall boundary.
            return (
                travelled * CELL_SIZE,
                (cx.clamp(0, n - 1) as usize, cy.clamp(0, n - 1) as usize),
            );
        }
        if !world.is_free(cx as usize, cy as usize) {
            return (travelled * CELL_SIZE, (cx as usize, cy as usize));
        }
    }
}

/// Renders the egocentric raycast observation at `pose`.
pub fn render_observation(world: &World, pose: &Pose) -> Observation {
    let mut data = vec![0.0; Observation::LEN];
    let heading = pose.heading.degrees() as f64;
    for i in 0..NUM_RAYS {
        let theta = ray_angle(heading, i).to_radians();
        let (dist, (c, r)) = cast(world, pose.x, pose.y, theta.cos(), theta.sin());
        data[i] = (dist / MAX_DEPTH).clamp(0.0, 1.0);
        let tex = world.texture(c, r) as usize;
        data[(1 + tex) * NUM_RAYS + i] = 1.0;
    }
    Observation { data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Heading;

    #[test]
    fn wall_a_quarter_meter_ahead() {
        // Agent at x = 0.625 facing +x; wall cells start at x = 0.75.
        let world = World::from_fn(12, |c, _| c >= 3, |_, _| 5);
        let pose = Pose::new(0.5, 1.375, Heading::from_index(0));
        let obs = render_observation(&world, &pose);
        for ray in [15, 16] {
            assert!(
                (obs.depth(ray) - 0.25 / MAX_DEPTH).abs() < 1e-3,
                "{}",
                obs.depth(ray)
            );
            assert_eq!(obs.texture(ray), 5);
        }
    }

    #[test]
    fn rays_sweep_left_to_right() {
        assert!(ray_angle(0.0, 0) > ray_angle(0.0, NUM_RAYS - 1));
        assert!((ray_angle(0.0, 0) - (45.0 - 90.0 / 64.0)).abs() < 1e-12);
    }

    #[test]
    fn channels_are_well_formed() {
        let world = World::generate(3, 33).unwrap();
        let (c, r) = world.free_cells()[10];
        for h in 0..12 {
            let obs = render_observation(&world, &Pose::at_cell(c, r, Heading::from_index(h)));
            for ray in 0..NUM_RAYS {
                assert!((0.0..=1.0).contains(&obs.depth(ray)));
                let hot: f64 = (0..NUM_TEXTURES)
                    .map(|t| obs.data()[(1 + t) * NUM_RAYS + ray])
                    .sum();
                assert_eq!(hot, 1.0);
            }
        }
    }
}
