use std::collections::{BTreeSet, VecDeque};
use std::path::PathBuf;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::actors::{step_actors, ActorParams, FlowActor};
use super::lidar::{pose_at, simulate_lidar, Cylinder, LidarConfig};
use super::log::{SessionLog, TickRecord};
use super::world::World;
use crate::annotate::{GridGeometry, SemanticLabel, Sogm, SogmConfig, CH_PERMANENT};
use crate::geom::{wrap_angle, LidarFrame, Point2, Pose};
use crate::plan::{global_plan, plan_step, Command, Costmap, PlannerConfig, RobotPose};
use crate::predict::{
    load_external_sogm, predict_groundtruth, predict_linear, predict_static_only, ActorState, PredictorKind,
    PredictorOutput,
};
use crate::srm::{obstacle_srm, sogm_to_srm, Srm, SrmParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Lidar and planning period (s).
    pub tick: f64,
    /// Physics steps per tick.
    pub substeps: usize,
    pub n_actors: usize,
    /// Session length limit (s).
    pub timeout: f64,
    /// Distance to the final waypoint that ends a session (m).
    pub goal_tolerance: f64,
    /// Angular acceleration limit of the robot (rad/s^2).
    pub alpha_max: f64,
    /// Actors spawn at least this far from the robot start (m).
    pub spawn_clearance: f64,
    /// With `false` the risk maps are built with `delta0 = dt`.
    pub time_diffusion: bool,
    /// Directory holding `<tick>.sogm` grids for the external predictor.
    pub external_dir: Option<PathBuf>,
    pub actors: ActorParams,
    pub lidar: LidarConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            tick: 0.1,
            substeps: 5,
            n_actors: 10,
            timeout: 120.0,
            goal_tolerance: 0.3,
            alpha_max: 4.0,
            spawn_clearance: 3.0,
            time_diffusion: true,
            external_dir: None,
            actors: ActorParams::default(),
            lidar: LidarConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tick > 0.0
            && self.substeps > 0
            && self.timeout > 0.0
            && self.goal_tolerance > 0.0
            && self.alpha_max > 0.0
            && self.actors.radius > 0.0
            && self.actors.preferred_speed > 0.0
            && self.actors.relaxation > 0.0
            && self.lidar.rings > 0
            && self.lidar.azimuth_step_deg > 0.0
            && self.lidar.max_range > self.lidar.min_range
            && self.lidar.range_noise >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid simulator settings".into()))
        }
    }
}

/// Everything a session depends on besides the world, predictor and seed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub sim: SimConfig,
    pub planner: PlannerConfig,
    pub srm: SrmParams,
    pub sogm: SogmConfig,
}

/// Hex SHA-256 of the scenario and world, as stored in session logs.
pub fn scenario_hash(world: &World, scenario: &Scenario) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(scenario).expect("scenario serializes"));
    h.update(world.to_text().as_bytes());
    format!("{:x}", h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
    pub omega: f64,
    pub radius: f64,
}

impl RobotState {
    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotLimits {
    pub v_max: f64,
    pub omega_max: f64,
    pub a_max: f64,
    pub alpha_max: f64,
}

/// Differential-drive step: speeds move toward the command within the
/// acceleration limits, then the pose integrates at the midpoint heading.
pub fn step_robot(state: &RobotState, cmd: &Command, dt: f64, limits: &RobotLimits) -> RobotState {
    let dv = (cmd.v - state.v).clamp(-limits.a_max * dt, limits.a_max * dt);
    let dw = (cmd.omega - state.omega).clamp(-limits.alpha_max * dt, limits.alpha_max * dt);
    let v = (state.v + dv).clamp(-limits.v_max, limits.v_max);
    let omega = (state.omega + dw).clamp(-limits.omega_max, limits.omega_max);
    let mid = state.heading + 0.5 * omega * dt;
    RobotState {
        x: state.x + v * dt * mid.cos(),
        y: state.y + v * dt * mid.sin(),
        heading: wrap_angle(state.heading + omega * dt),
        v,
        omega,
        radius: state.radius,
    }
}

/// Places actors uniformly inside the limits, clear of walls, of each other
/// and of the robot start.
pub fn spawn_actors<R: Rng>(world: &World, cfg: &SimConfig, rng: &mut R) -> Result<Vec<FlowActor>> {
    if cfg.n_actors > 0 && world.goals.len() < 2 {
        return Err(Error::InvalidInput("actors need at least two goals".into()));
    }
    let (lo, hi) = world.bounds();
    let start = world.waypoints[0];
    let r = cfg.actors.radius;
    let mut out: Vec<FlowActor> = Vec::with_capacity(cfg.n_actors);
    let mut attempts = 0;
    while out.len() < cfg.n_actors {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::InvalidInput("no room to place the actors".into()));
        }
        let p = Point2::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
        let goal = rng.gen_range(0..world.goals.len());
        let free = world.inside(&p)
            && world.nearest_wall(&p).is_none_or(|(d, _)| d > r + 0.3)
            && (p - start).norm() > cfg.spawn_clearance
            && out.iter().all(|a| (a.state.position - p).norm() > 2.0 * r + 0.4);
        if free {
            out.push(FlowActor {
                state: ActorState::new(p, Point2::zeros(), r, 0.0)?,
                goal,
                preferred_speed: cfg.actors.preferred_speed,
            });
        }
    }
    Ok(out)
}

pub fn run_session(world: &World, scenario: &Scenario, predictor: PredictorKind, seed: u64) -> Result<SessionLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actors = spawn_actors(world, &scenario.sim, &mut rng)?;
    run_session_from(world, scenario, predictor, seed, actors, None)
}

/// Receives every lidar frame with its labels and the sensor pose at the end
/// of the revolution.
pub type FrameSink<'a> = &'a mut dyn FnMut(&LidarFrame, &[SemanticLabel], &Pose) -> Result<()>;

fn sensor_pose(r: &RobotState, mount: f64, stamp: f64) -> Pose {
    Pose::from_xyz_yaw(r.x, r.y, mount, r.heading, stamp)
}

fn densify(path: &[Point2], step: f64) -> Vec<Point2> {
    let mut out = vec![path[0]];
    for w in path.windows(2) {
        let n = ((w[1] - w[0]).norm() / step).ceil().max(1.0) as usize;
        for i in 1..=n {
            out.push(w[0] + (w[1] - w[0]) * (i as f64 / n as f64));
        }
    }
    out
}

fn static_grid(samples: &[Point2], geometry: GridGeometry) -> Sogm {
    let mut s = Sogm::zeros(geometry);
    for p in samples {
        if geometry.cell_of(p).is_some() {
            s.mark_all_layers(p, CH_PERMANENT);
        }
    }
    s
}

fn states_at(actors: &[FlowActor], stamp: f64) -> Vec<ActorState> {
    actors
        .iter()
        .map(|a| ActorState {
            stamp,
            ..a.state
        })
        .collect()
}

/// Obstacle risk from the labeled points of the latest frame.
fn costmap_risk(
    frame: &LidarFrame,
    labels: &[SemanticLabel],
    poses: &[Pose],
    geometry: GridGeometry,
    params: &SrmParams,
) -> Result<Srm> {
    let mut statics = BTreeSet::new();
    let mut dynamics = BTreeSet::new();
    for (p, l) in frame.points.iter().zip(labels) {
        let set = match l {
            SemanticLabel::Permanent | SemanticLabel::Movable => &mut statics,
            SemanticLabel::Dynamic => &mut dynamics,
            _ => continue,
        };
        let w = pose_at(poses, p.stamp)?.transform_point(&p.position);
        if let Some(cell) = geometry.cell_of(&Point2::new(w.x, w.y)) {
            set.insert(cell);
        }
    }
    let centers = |s: &BTreeSet<(usize, usize)>| s.iter().map(|&(r, c)| geometry.cell_center(r, c)).collect::<Vec<_>>();
    Ok(obstacle_srm(geometry, &centers(&statics), &centers(&dynamics), params))
}

/// Runs one closed-loop session from the given actors. Each tick synthesizes
/// a lidar revolution, queries the predictor, converts its grid to risk once
/// the publish delay has elapsed, plans, and advances the physics.
pub fn run_session_from(
    world: &World,
    scenario: &Scenario,
    predictor: PredictorKind,
    seed: u64,
    mut actors: Vec<FlowActor>,
    mut sink: Option<FrameSink>,
) -> Result<SessionLog> {
    let sim = &scenario.sim;
    let pcfg = &scenario.planner;
    sim.validate()?;
    pcfg.validate()?;
    scenario.srm.validate()?;
    scenario.sogm.validate()?;
    world.validate()?;

    let mut srm_params = scenario.srm;
    if !sim.time_diffusion {
        srm_params.delta0 = scenario.sogm.dt;
    }
    let mut actor_rng = ChaCha8Rng::seed_from_u64(seed);
    actor_rng.set_stream(1);
    let mut lidar_rng = ChaCha8Rng::seed_from_u64(seed);
    lidar_rng.set_stream(2);

    let limits = RobotLimits {
        v_max: pcfg.v_max,
        omega_max: pcfg.omega_max,
        a_max: pcfg.a_max,
        alpha_max: sim.alpha_max,
    };
    let (w0, w1) = (world.waypoints[0], world.waypoints[1]);
    let mut robot = RobotState {
        x: w0.x,
        y: w0.y,
        heading: (w1 - w0).y.atan2((w1 - w0).x),
        v: 0.0,
        omega: 0.0,
        radius: pcfg.robot_radius,
    };

    let (lo, hi) = world.bounds();
    let walls = world.wall_samples(pcfg.global_dl * 0.5);
    let costmap = Costmap::from_obstacles(&walls, lo, hi, pcfg.global_dl, pcfg.robot_radius, pcfg.inflation);
    let mut route = Vec::new();
    for leg in world.waypoints.windows(2) {
        let p = global_plan(&costmap, leg[0], leg[1], pcfg)?;
        route.extend(if route.is_empty() { &p[..] } else { &p[1..] });
    }
    let route = densify(&route, 0.1);
    let final_goal = *world.waypoints.last().unwrap();
    let raster = world.wall_samples(scenario.sogm.dl * 0.5);

    let dt_sub = sim.tick / sim.substeps as f64;
    let mount = sim.lidar.mount_height;
    let mut history: Vec<Pose> = vec![sensor_pose(&robot, mount, -sim.tick), sensor_pose(&robot, mount, 0.0)];
    let mut previous: Vec<Point2> = actors.iter().map(|a| a.state.position).collect();
    let mut pending: VecDeque<(f64, Srm)> = VecDeque::new();
    let mut active: Option<Srm> = None;
    let mut progress = 0usize;
    let mut log = SessionLog {
        seed,
        config_hash: scenario_hash(world, scenario),
        predictor,
        n_actors: actors.len(),
        complete: false,
        frames: 0,
        ticks: Vec::new(),
    };

    let max_ticks = (sim.timeout / sim.tick).round() as u64;
    for tick in 0..=max_ticks {
        let t = tick as f64 * sim.tick;
        for a in actors.iter_mut() {
            a.state.stamp = t;
        }

        // sense
        let cylinders: Vec<Cylinder> = actors
            .iter()
            .zip(&previous)
            .map(|(a, &start)| Cylinder {
                start,
                end: a.state.position,
                radius: a.state.radius,
                height: sim.actors.height,
            })
            .collect();
        let (frame, labels) = simulate_lidar(world, &cylinders, &history, t - sim.tick, tick, &sim.lidar, &mut lidar_rng)?;
        log.frames += 1;
        if let Some(s) = sink.as_mut() {
            s(&frame, &labels, &sensor_pose(&robot, mount, t))?;
        }

        let min_actor_distance = actors
            .iter()
            .map(|a| (a.state.position - robot.position()).norm())
            .fold(f64::INFINITY, f64::min);
        let done = (robot.position() - final_goal).norm() < sim.goal_tolerance;
        let mut record = TickRecord {
            stamp: t,
            x: robot.x,
            y: robot.y,
            heading: robot.heading,
            v: robot.v,
            omega: robot.omega,
            cmd_v: 0.0,
            cmd_omega: 0.0,
            min_actor_distance,
            actors: actors
                .iter()
                .map(|a| [a.state.position.x, a.state.position.y, a.state.velocity.x, a.state.velocity.y])
                .collect(),
        };
        if done || tick == max_ticks {
            log.complete = done;
            log.ticks.push(record);
            break;
        }

        // predict
        let geometry = scenario.sogm.geometry(robot.position(), t);
        let output = match predictor {
            PredictorKind::NoPreds => PredictorOutput::none(),
            PredictorKind::IgnoreDyn => predict_static_only(&static_grid(&raster, geometry)),
            PredictorKind::LinSogm => predict_linear(&states_at(&actors, t), &static_grid(&raster, geometry), true)?,
            PredictorKind::GtSogm => {
                let mut future_actors = actors.clone();
                let mut future_rng = actor_rng.clone();
                let mut future = vec![states_at(&future_actors, t)];
                for k in 1..geometry.n_t {
                    let steps = (geometry.dt / dt_sub).round().max(1.0) as usize;
                    for _ in 0..steps {
                        step_actors(world, &mut future_actors, None, geometry.dt / steps as f64, &sim.actors, &mut future_rng);
                    }
                    future.push(states_at(&future_actors, geometry.layer_time(k)));
                }
                predict_groundtruth(&future, &static_grid(&raster, geometry))?
            }
            PredictorKind::External => {
                let dir = sim
                    .external_dir
                    .as_ref()
                    .ok_or_else(|| Error::Config("the external predictor needs sim.external_dir".into()))?;
                load_external_sogm(&dir.join(format!("{tick:06}.sogm")), t)?
            }
        };
        if let (Some(sogm), Some(visible)) = (&output.sogm, output.visible_at()) {
            pending.push_back((visible, sogm_to_srm(sogm, &srm_params)));
        }
        while pending.front().is_some_and(|(v, _)| *v <= t + 1e-9) {
            active = pending.pop_front().map(|(_, s)| s);
        }
        let fallback;
        let risk = match &active {
            Some(s) => s,
            None => {
                fallback = costmap_risk(&frame, &labels, &history, geometry, &srm_params)?;
                &fallback
            }
        };

        // plan
        let window = (progress + 60).min(route.len());
        progress = (progress..window)
            .min_by(|&a, &b| {
                let da = (route[a] - robot.position()).norm();
                let db = (route[b] - robot.position()).norm();
                da.total_cmp(&db)
            })
            .unwrap_or(progress);
        let state = RobotPose {
            x: robot.x,
            y: robot.y,
            heading: robot.heading,
            v: robot.v,
            omega: robot.omega,
            stamp: t,
        };
        let (_, cmd) = plan_step(&route[(progress + 1).min(route.len() - 1)..], &state, risk, pcfg)?;
        record.cmd_v = cmd.v;
        record.cmd_omega = cmd.omega;
        log.ticks.push(record);

        // act
        previous = actors.iter().map(|a| a.state.position).collect();
        let keep = history.len().saturating_sub(1);
        history.drain(..keep.saturating_sub(sim.substeps));
        for s in 1..=sim.substeps {
            let robot_center = robot.position();
            robot = step_robot(&robot, &cmd, dt_sub, &limits);
            step_actors(world, &mut actors, Some(robot_center), dt_sub, &sim.actors, &mut actor_rng);
            history.push(sensor_pose(&robot, mount, t + s as f64 * dt_sub));
        }
    }
    Ok(log)
}
