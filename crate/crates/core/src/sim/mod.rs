//! Simulated atrium with Flow-Follower actors, a differential-drive robot and
//! a multi-ring lidar; closed-loop navigation sessions and their metrics.

mod actors;
mod lidar;
mod log;
mod session;
mod world;

pub use actors::{step_actors, ActorParams, FlowActor};
pub use lidar::{cast_ray, simulate_lidar, Cylinder, LidarConfig, Surface};
pub use log::{compute_metrics, Metrics, SessionLog, TickRecord, COLLISION_DISTANCE, RISK_DISTANCE};
pub use session::{
    run_session, run_session_from, scenario_hash, spawn_actors, step_robot, RobotLimits, RobotState, Scenario, SimConfig,
};
pub use world::{Wall, World};
