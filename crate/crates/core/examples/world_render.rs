//! Generates a maze, prints it, then walks a few steps and shows the depth
//! profile seen along the way.

use imgnav::env::{render_observation, step, Action, Heading, Pose, World, NUM_RAYS};

fn main() -> imgnav::Result<()> {
    let world = World::generate(11, 25)?;
    for r in 0..world.size() {
        let row: String = (0..world.size())
            .map(|c| if world.is_free(c, r) { ' ' } else { '#' })
            .collect();
        println!("{row}");
    }

    let (c, r) = world.free_cells()[0];
    let mut pose = Pose::at_cell(c, r, Heading::from_index(0));
    let plan = [
        Action::MoveForward,
        Action::MoveForward,
        Action::TurnLeft,
        Action::TurnLeft,
        Action::TurnLeft,
    ];
    for action in plan {
        let obs = render_observation(&world, &pose);
        let depth: String = (0..NUM_RAYS)
            .map(|i| {
                let d = obs.depth(i);
                [' ', '.', ':', '-', '=', '+', '*', '#'][((1.0 - d) * 7.0).round() as usize]
            })
            .collect();
        println!(
            "x={:.2} y={:.2} heading={:>3}  |{depth}|  center texture {}",
            pose.x,
            pose.y,
            pose.heading.degrees(),
            obs.texture(NUM_RAYS / 2)
        );
        pose = step(&world, pose, action).0;
    }
    Ok(())
}
