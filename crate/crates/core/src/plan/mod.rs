//! Global grid search and a timed-elastic-band local planner driven by risk
//! maps.

mod band;
mod global;

pub use band::{band_cost, band_cost_gradient, optimize_band, BandVariables};
pub use global::{global_plan, grid_search, Costmap};

use serde::{Deserialize, Serialize};

use crate::geom::{wrap_angle, Point2};
use crate::srm::Srm;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Linear speed limit (m/s).
    pub v_max: f64,
    /// Angular speed limit (rad/s).
    pub omega_max: f64,
    /// Linear acceleration limit (m/s^2).
    pub a_max: f64,
    pub w_static: f64,
    pub w_dynamic: f64,
    pub w_velocity: f64,
    pub w_acceleration: f64,
    pub w_time: f64,
    pub w_path: f64,
    pub w_nonholonomic: f64,
    /// Band duration (s).
    pub horizon: f64,
    pub iterations: usize,
    /// First trial step of the gradient descent.
    pub step: f64,
    /// Smallest time interval between band poses (s).
    pub min_dt: f64,
    /// Global search: extra cost per meter at full static cost.
    pub w_global_cost: f64,
    /// Robot footprint radius (m), used to mark lethal cells.
    pub robot_radius: f64,
    /// Distance over which the global cost decays beyond the footprint (m).
    pub inflation: f64,
    /// Global costmap resolution (m).
    pub global_dl: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            v_max: 1.0,
            omega_max: 1.5,
            a_max: 1.0,
            w_static: 1.0,
            w_dynamic: 2.0,
            w_velocity: 10.0,
            w_acceleration: 1.0,
            w_time: 1.0,
            w_path: 0.05,
            w_nonholonomic: 10.0,
            horizon: 4.0,
            iterations: 40,
            step: 0.1,
            min_dt: 0.02,
            w_global_cost: 4.0,
            robot_radius: 0.35,
            inflation: 0.6,
            global_dl: 0.1,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let limits = [self.v_max, self.omega_max, self.a_max, self.horizon, self.step, self.min_dt, self.global_dl];
        let weights = [
            self.w_static,
            self.w_dynamic,
            self.w_velocity,
            self.w_acceleration,
            self.w_time,
            self.w_path,
            self.w_nonholonomic,
            self.w_global_cost,
            self.robot_radius,
            self.inflation,
        ];
        if limits.iter().all(|&v| v > 0.0 && v.is_finite()) && weights.iter().all(|&v| v >= 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid planner limits or weights: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose2D {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub stamp: f64,
}

impl TimedPose2D {
    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// Current robot state as seen by the planner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
    pub omega: f64,
    pub stamp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub poses: Vec<TimedPose2D>,
    /// Point of the global path each pose was sampled from; poses are pulled
    /// back toward it.
    pub anchors: Vec<Point2>,
    pub goal: (f64, f64, f64),
    /// Robot speed at the first pose.
    pub start_speed: f64,
}

impl Band {
    pub fn validate(&self) -> Result<()> {
        if self.poses.len() < 2 || self.anchors.len() != self.poses.len() {
            return Err(Error::InvalidInput("a band needs at least two poses with anchors".into()));
        }
        if self.poses.windows(2).any(|w| !(w[1].stamp > w[0].stamp)) {
            return Err(Error::InvalidInput("band stamps must increase".into()));
        }
        Ok(())
    }
}

/// Samples a band along `path` starting at the robot. Spacing follows the
/// current speed within [0.2, 0.5] m; stamps assume travel at `v_max`.
pub fn init_band(path: &[Point2], state: &RobotPose, cfg: &PlannerConfig) -> Result<Band> {
    let Some(&end) = path.last() else {
        return Err(Error::InvalidInput("empty path".into()));
    };
    let spacing = (state.v.abs() * 0.3).clamp(0.2, 0.5);
    let start = Point2::new(state.x, state.y);
    let reach = cfg.v_max * cfg.horizon;

    let mut vertices: Vec<Point2> = path.to_vec();
    if (vertices[0] - start).norm() > 1e-9 {
        vertices.insert(0, start);
    }
    let mut cumulative = vec![0.0];
    for w in vertices.windows(2) {
        cumulative.push(cumulative.last().unwrap() + (w[1] - w[0]).norm());
    }
    let total = *cumulative.last().unwrap();
    let point_at = |s: f64| -> Point2 {
        let i = cumulative.partition_point(|&c| c <= s).clamp(1, vertices.len() - 1);
        let len = cumulative[i] - cumulative[i - 1];
        if len < 1e-12 {
            return vertices[i];
        }
        vertices[i - 1] + (vertices[i] - vertices[i - 1]) * ((s - cumulative[i - 1]) / len)
    };

    let mut pts = vec![start];
    let stop = total.min(reach);
    let mut s = spacing;
    while s < stop - 0.5 * spacing {
        pts.push(point_at(s));
        s += spacing;
    }
    pts.push(if total <= reach { end } else { point_at(stop) });

    let final_dir = pts[pts.len() - 1] - pts[pts.len() - 2];
    let goal_heading = if final_dir.norm() > 1e-9 {
        final_dir.y.atan2(final_dir.x)
    } else {
        state.heading
    };
    let mut poses = Vec::with_capacity(pts.len());
    let mut stamp = state.stamp;
    for (i, p) in pts.iter().enumerate() {
        let heading = if i == 0 {
            state.heading
        } else {
            let d = p - pts[i - 1];
            if d.norm() > 1e-9 {
                d.y.atan2(d.x)
            } else {
                poses.last().map_or(state.heading, |q: &TimedPose2D| q.heading)
            }
        };
        if i > 0 {
            stamp += ((p - pts[i - 1]).norm() / cfg.v_max).max(cfg.min_dt);
        }
        poses.push(TimedPose2D {
            x: p.x,
            y: p.y,
            heading,
            stamp,
        });
    }
    Ok(Band {
        anchors: pts,
        poses,
        goal: (end.x, end.y, goal_heading),
        start_speed: state.v,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Command {
    pub v: f64,
    pub omega: f64,
    /// The first segment had no usable duration; the command is zero.
    pub degenerate: bool,
}

/// Velocity command from the first band segment, clamped to the limits.
pub fn extract_control(band: &Band, cfg: &PlannerConfig) -> Result<Command> {
    if band.poses.len() < 2 {
        return Err(Error::InvalidInput("a band needs at least two poses".into()));
    }
    let (a, b) = (band.poses[0], band.poses[1]);
    let dt = b.stamp - a.stamp;
    if !(dt > 1e-9) {
        return Ok(Command {
            v: 0.0,
            omega: 0.0,
            degenerate: true,
        });
    }
    let d = b.position() - a.position();
    let v = (d.x * a.heading.cos() + d.y * a.heading.sin()) / dt;
    let omega = wrap_angle(b.heading - a.heading) / dt;
    Ok(Command {
        v: v.clamp(-cfg.v_max, cfg.v_max),
        omega: omega.clamp(-cfg.omega_max, cfg.omega_max),
        degenerate: false,
    })
}

/// Lateral offsets (m) and time stretches tried besides the plain band.
const DETOURS: [f64; 2] = [-0.8, 0.8];
const STRETCHES: [f64; 2] = [2.0, 4.0];

/// One planning cycle: samples a band along `path`, optimizes it from a few
/// initial guesses (the plain band, bands bowed to either side, and slower
/// bands) and keeps the cheapest result. Returns the band and its command.
pub fn plan_step(path: &[Point2], state: &RobotPose, srm: &Srm, cfg: &PlannerConfig) -> Result<(Band, Command)> {
    let base = init_band(path, state, cfg)?;
    let mut seeds = vec![base.clone()];
    if base.poses.len() > 2 {
        let n = base.poses.len() - 1;
        for off in DETOURS {
            let mut b = base.clone();
            for (i, p) in b.poses.iter_mut().enumerate().skip(1) {
                let bow = (std::f64::consts::PI * i as f64 / n as f64).sin();
                let a = base.anchors[i];
                let h = base.poses[i].heading;
                p.x = a.x - h.sin() * off * bow;
                p.y = a.y + h.cos() * off * bow;
            }
            seeds.push(b);
        }
    }
    for s in STRETCHES {
        let mut b = base.clone();
        let t0 = base.poses[0].stamp;
        for p in &mut b.poses {
            p.stamp = t0 + (p.stamp - t0) * s;
        }
        seeds.push(b);
    }
    let mut best: Option<(f64, Band)> = None;
    for seed in &seeds {
        let out = optimize_band(seed, srm, cfg)?;
        let c = band_cost(&out, srm, cfg);
        if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
            best = Some((c, out));
        }
    }
    let (_, band) = best.expect("at least one seed");
    let cmd = extract_control(&band, cfg)?;
    Ok((band, cmd))
}

#[cfg(test)]
mod tests;
