//! Prediction backends feeding occupancy grids to the planner.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotate::{Sogm, CH_DYNAMIC, CH_PERMANENT};
use crate::geom::Point2;
use crate::{Error, Result};

pub const DEFAULT_PUBLISH_DELAY: f64 = 0.25;

/// Largest accepted gap between a stored grid's reference time and the
/// requested one (s).
pub const STALENESS_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    /// No grid; the planner reacts to a plain obstacle costmap.
    NoPreds,
    /// Static channels only.
    IgnoreDyn,
    /// Constant-velocity extrapolation of actor states.
    LinSogm,
    /// True future actor states.
    GtSogm,
    /// Grids read from disk.
    External,
}

impl PredictorKind {
    pub fn name(self) -> &'static str {
        match self {
            PredictorKind::NoPreds => "no_preds",
            PredictorKind::IgnoreDyn => "ignore_dyn",
            PredictorKind::LinSogm => "lin_sogm",
            PredictorKind::GtSogm => "gt_sogm",
            PredictorKind::External => "external",
        }
    }

    pub const ALL: [PredictorKind; 5] = [
        PredictorKind::NoPreds,
        PredictorKind::IgnoreDyn,
        PredictorKind::LinSogm,
        PredictorKind::GtSogm,
        PredictorKind::External,
    ];

    pub fn from_name(name: &str) -> Option<Self> {
        PredictorKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorState {
    pub position: Point2,
    pub velocity: Point2,
    pub radius: f64,
    pub stamp: f64,
}

impl ActorState {
    pub fn new(position: Point2, velocity: Point2, radius: f64, stamp: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidInput(format!("actor radius must be positive, got {radius}")));
        }
        Ok(ActorState {
            position,
            velocity,
            radius,
            stamp,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorOutput {
    /// `None` means the planner must fall back to its obstacle costmap.
    pub sogm: Option<Sogm>,
    pub publish_delay: f64,
}

impl PredictorOutput {
    pub fn none() -> Self {
        PredictorOutput {
            sogm: None,
            publish_delay: DEFAULT_PUBLISH_DELAY,
        }
    }

    /// Earliest time the planner may use this prediction.
    pub fn visible_at(&self) -> Option<f64> {
        self.sogm.as_ref().map(|s| s.geometry.t_ref + self.publish_delay)
    }
}

fn with_statics(statics: &Sogm) -> Sogm {
    let mut out = Sogm::zeros(statics.geometry);
    out.copy_static_from(statics);
    out
}

fn output(sogm: Sogm) -> PredictorOutput {
    PredictorOutput {
        sogm: Some(sogm),
        publish_delay: DEFAULT_PUBLISH_DELAY,
    }
}

/// Static channels passed through, dynamic channel empty.
pub fn predict_static_only(statics: &Sogm) -> PredictorOutput {
    output(with_statics(statics))
}

/// Constant-velocity extrapolation. With `clip_at_walls` an actor stops at
/// the last position before its center enters a permanent cell.
pub fn predict_linear(actors: &[ActorState], statics: &Sogm, clip_at_walls: bool) -> Result<PredictorOutput> {
    let g = statics.geometry;
    if let Some(a) = actors.iter().find(|a| (a.stamp - g.t_ref).abs() > 1e-6) {
        return Err(Error::InvalidInput(format!(
            "actor stamped {} but grid reference is {}",
            a.stamp, g.t_ref
        )));
    }
    let mut out = with_statics(statics);
    for a in actors {
        let mut last = a.position;
        let mut stopped = false;
        for k in 0..g.n_t {
            let p = a.position + a.velocity * (k as f64 * g.dt);
            if clip_at_walls {
                stopped = stopped
                    || g.cell_of(&p)
                        .is_some_and(|(r, c)| statics.get(k, r, c, CH_PERMANENT) > 0.5);
                if !stopped {
                    last = p;
                }
                out.mark_disc(k, &last, a.radius, CH_DYNAMIC);
            } else {
                out.mark_disc(k, &p, a.radius, CH_DYNAMIC);
            }
        }
    }
    Ok(output(out))
}

/// Rasterizes true actor states, one list per layer.
pub fn predict_groundtruth(future: &[Vec<ActorState>], statics: &Sogm) -> Result<PredictorOutput> {
    let g = statics.geometry;
    if future.len() < g.n_t {
        return Err(Error::InvalidInput(format!(
            "ground truth covers {} layers, grid has {}",
            future.len(),
            g.n_t
        )));
    }
    let mut out = with_statics(statics);
    for (k, layer) in future.iter().take(g.n_t).enumerate() {
        for a in layer {
            out.mark_disc(k, &a.position, a.radius, CH_DYNAMIC);
        }
    }
    Ok(output(out))
}

/// Reads a grid produced elsewhere and checks it matches `t_ref`.
pub fn load_external_sogm(path: &Path, t_ref: f64) -> Result<PredictorOutput> {
    let (sogm, delay) = Sogm::load(path)?;
    let found = sogm.geometry.t_ref;
    if (found - t_ref).abs() > STALENESS_TOLERANCE {
        return Err(Error::Stale {
            found,
            requested: t_ref,
        });
    }
    Ok(PredictorOutput {
        sogm: Some(sogm),
        publish_delay: delay.unwrap_or(DEFAULT_PUBLISH_DELAY),
    })
}
