use rand::Rng;
use serde::{Deserialize, Serialize};

use super::world::World;
use crate::geom::Point2;
use crate::predict::ActorState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActorParams {
    pub preferred_speed: f64,
    pub radius: f64,
    pub height: f64,
    /// Time constant of the pull toward the preferred velocity (s).
    pub relaxation: f64,
    pub actor_strength: f64,
    pub actor_range: f64,
    pub wall_strength: f64,
    pub wall_range: f64,
    /// Center distance below which actors start avoiding the robot (m).
    pub robot_avoid_distance: f64,
    pub robot_strength: f64,
    /// Sideways push (m/s^2) away from someone ahead, so that people facing
    /// each other pass instead of stalling. Fades out at `sidestep_range`.
    pub sidestep: f64,
    pub sidestep_range: f64,
    pub goal_tolerance: f64,
}

impl Default for ActorParams {
    fn default() -> Self {
        ActorParams {
            preferred_speed: 1.2,
            radius: 0.3,
            height: 1.8,
            relaxation: 0.5,
            actor_strength: 2.0,
            actor_range: 0.3,
            wall_strength: 3.0,
            wall_range: 0.2,
            robot_avoid_distance: 0.5,
            robot_strength: 20.0,
            sidestep: 1.0,
            sidestep_range: 3.0,
            goal_tolerance: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowActor {
    pub state: ActorState,
    pub goal: usize,
    pub preferred_speed: f64,
}

fn rot90(v: Point2) -> Point2 {
    Point2::new(-v.y, v.x)
}

/// Advances every actor by `dt`. `robot` is the robot center, if present.
pub fn step_actors<R: Rng>(world: &World, actors: &mut [FlowActor], robot: Option<Point2>, dt: f64, params: &ActorParams, rng: &mut R) {
    if actors.is_empty() {
        return;
    }
    let snapshot: Vec<FlowActor> = actors.to_vec();
    for (i, a) in actors.iter_mut().enumerate() {
        let p = a.state.position;
        let v = a.state.velocity;
        let to_goal = world.goals[a.goal] - p;
        let desired = if to_goal.norm() > 1e-9 {
            to_goal / to_goal.norm() * a.preferred_speed
        } else {
            Point2::zeros()
        };
        let mut force = (desired - v) / params.relaxation;

        for (j, b) in snapshot.iter().enumerate() {
            if i == j {
                continue;
            }
            let diff = p - b.state.position;
            let d = diff.norm();
            if !(1e-9..=5.0).contains(&d) {
                continue;
            }
            let n = diff / d;
            let mag = params.actor_strength * ((a.state.radius + b.state.radius - d) / params.actor_range).exp();
            force += n * mag;
            // the other one is ahead: step to the right
            if v.dot(&-n) > 0.0 && d < params.sidestep_range {
                force += rot90(n) * (params.sidestep * (1.0 - d / params.sidestep_range));
            }
        }
        if let Some((d, n)) = world.nearest_wall(&p) {
            force += n * (params.wall_strength * ((a.state.radius - d) / params.wall_range).exp());
        }
        if let Some(r) = robot {
            let diff = p - r;
            let d = diff.norm();
            if d < params.robot_avoid_distance && d > 1e-9 {
                force += diff / d * (params.robot_strength * (1.0 - d / params.robot_avoid_distance));
            }
        }

        let mut nv = v + force * dt;
        let cap = a.preferred_speed * 1.1;
        if nv.norm() > cap {
            nv *= cap / nv.norm();
        }
        a.state.velocity = nv;
        a.state.position = p + nv * dt;
        a.state.stamp += dt;

        if (world.goals[a.goal] - a.state.position).norm() < params.goal_tolerance && world.goals.len() > 1 {
            let mut next = rng.gen_range(0..world.goals.len() - 1);
            if next >= a.goal {
                next += 1;
            }
            a.goal = next;
        }
    }
}
