//! Automated point labelling and occupancy-grid generation.

mod sogm;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use sogm::{build_sogm, GridGeometry, Sogm, SogmConfig, CH_DYNAMIC, CH_MOVABLE, CH_PERMANENT, SOGM_CHANNELS};
pub(crate) use sogm::{read_grid, write_grid};

use crate::geom::{LidarFrame, Point2, Point3, Pose};
use crate::morpho::{composite_mask, Composite};
use crate::pointmap::{aligned_points_and_normals, update_map, MapCloud};
use crate::pointray::{finalize_probabilities, integrate_frame, PointRayConfig};
use crate::spatial::PointIndex;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum SemanticLabel {
    Ground = 0,
    Permanent = 1,
    Movable = 2,
    Dynamic = 3,
    Uncertain = 4,
}

impl SemanticLabel {
    pub const ALL: [SemanticLabel; 5] = [
        SemanticLabel::Ground,
        SemanticLabel::Permanent,
        SemanticLabel::Movable,
        SemanticLabel::Dynamic,
        SemanticLabel::Uncertain,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        SemanticLabel::ALL.get(v as usize).copied()
    }

    pub fn is_obstacle(self) -> bool {
        matches!(self, SemanticLabel::Permanent | SemanticLabel::Movable | SemanticLabel::Dynamic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationConfig {
    /// Closing radius of map permanent points onto new points (m).
    pub permanent_radius: f64,
    /// Closing radius of map ground points onto new points (m).
    pub ground_radius: f64,
    /// Occupancy below this is dynamic.
    pub tau_dynamic: f64,
    /// Occupancy above this is movable.
    pub tau_movable: f64,
    /// Closing radius of dynamics onto movables (m).
    pub denoise_dynamic_radius: f64,
    /// Closing radius of movables onto dynamics (m).
    pub denoise_movable_radius: f64,
    /// Frame points farther than this from every labelled point are uncertain (m).
    pub backproject_radius: f64,
    /// Frame points farther than this from the map are new points (m).
    pub buffer_distance: f64,
    /// 2D subsampling grid (m).
    pub grid_2d: f64,
    /// Dynamic points without another dynamic point this close are dropped (m).
    pub isolated_radius: f64,
    /// Opening radius of dynamics against statics in 2D (m).
    pub opening_radius: f64,
    /// Map points with occupancy below this are removed during refinement.
    pub refine_min_occupancy: f64,
    /// Ground points: normal within this angle of vertical (rad)...
    pub ground_normal_angle: f64,
    /// ...and height within this band around `z = 0` (m).
    pub ground_height: f64,
    pub normal_half_window: usize,
    /// Optional polygon (x, y) outside which points are ignored.
    pub map_limits: Option<Vec<[f64; 2]>>,
    /// Set from its own configuration section.
    #[serde(skip)]
    pub pointray: PointRayConfig,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        AnnotationConfig {
            permanent_radius: 0.9,
            ground_radius: 0.2,
            tau_dynamic: 0.3,
            tau_movable: 0.6,
            denoise_dynamic_radius: 0.12,
            denoise_movable_radius: 0.9,
            backproject_radius: 0.15,
            buffer_distance: 0.08,
            grid_2d: 0.03,
            isolated_radius: 0.2,
            opening_radius: 0.3,
            refine_min_occupancy: 0.3,
            ground_normal_angle: 20f64.to_radians(),
            ground_height: 0.2,
            normal_half_window: 2,
            map_limits: None,
            pointray: PointRayConfig::default(),
        }
    }
}

impl AnnotationConfig {
    fn inside_limits(&self, p: &Point3) -> bool {
        self.map_limits
            .as_ref()
            .is_none_or(|poly| point_in_polygon(p.x, p.y, poly))
    }
}

/// Even-odd rule; vertices in order, closing edge implied.
pub fn point_in_polygon(x: f64, y: f64, poly: &[[f64; 2]]) -> bool {
    if poly.len() < 3 {
        return true;
    }
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = (poly[i][0], poly[i][1]);
        let (xj, yj) = (poly[j][0], poly[j][1]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Occupancy probability to label.
pub fn classify(p: f64, tau_dynamic: f64, tau_movable: f64) -> SemanticLabel {
    if p < tau_dynamic {
        SemanticLabel::Dynamic
    } else if p > tau_movable {
        SemanticLabel::Movable
    } else {
        SemanticLabel::Uncertain
    }
}

/// A frame in map coordinates with one label per point.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedFrame {
    pub frame: LidarFrame,
    pub labels: Vec<SemanticLabel>,
}

impl AnnotatedFrame {
    pub fn counts(&self) -> [usize; 5] {
        let mut out = [0; 5];
        for l in &self.labels {
            out[*l as usize] += 1;
        }
        out
    }
}

/// Obstacle points of one frame flattened on the ground plane.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Frame2D {
    pub points: Vec<Point2>,
    pub labels: Vec<SemanticLabel>,
    pub stamp: f64,
}

/// Output of [`label_session`].
#[derive(Debug, Clone)]
pub struct SessionAnnotation {
    pub frames: Vec<AnnotatedFrame>,
    /// Points absent from the map, accumulated over the session.
    pub buffer: MapCloud,
    pub buffer_labels: Vec<SemanticLabel>,
}

/// Removes low-occupancy points from a mapping-session map and splits the
/// rest into ground and permanent.
pub fn refine_map(
    map: &MapCloud,
    frames: &[LidarFrame],
    poses: &[(Pose, Pose)],
    cfg: &AnnotationConfig,
) -> Result<(MapCloud, Vec<SemanticLabel>)> {
    check_poses(frames, poses)?;
    let mut work = map.clone();
    work.reset_counters();
    for (k, (frame, (p0, p1))) in frames.iter().zip(poses).enumerate() {
        integrate_frame(&mut work, frame, p0, p1, &cfg.pointray).map_err(|e| frame_error(k, e))?;
    }
    let probs = finalize_probabilities(&work, cfg.pointray.n_min);
    let mut kept = MapCloud::new(map.dl());
    for (i, p) in work.points().iter().enumerate() {
        let keep = probs[i] >= cfg.refine_min_occupancy && cfg.inside_limits(&p.position);
        if keep {
            kept.insert(*p);
        }
    }
    let cos_ground = cfg.ground_normal_angle.cos();
    let labels = kept
        .points()
        .iter()
        .map(|p| {
            let flat = p.normal.is_some_and(|n| n.z.abs() >= cos_ground);
            if flat && p.position.z.abs() <= cfg.ground_height {
                SemanticLabel::Ground
            } else {
                SemanticLabel::Permanent
            }
        })
        .collect();
    Ok((kept, labels))
}

fn check_poses(frames: &[LidarFrame], poses: &[(Pose, Pose)]) -> Result<()> {
    if poses.len() != frames.len() {
        return Err(Error::InvalidInput(format!(
            "{} frames but {} poses: every frame needs a pose",
            frames.len(),
            poses.len()
        )));
    }
    Ok(())
}

fn frame_error(k: usize, e: Error) -> Error {
    Error::Frame {
        frame: k,
        source: Box::new(e),
    }
}

/// Closing of the points labelled `from` in `universe` onto the unlabelled
/// ones; unlabelled points ending positive get `to`.
fn close_onto(map_points: &[Point3], buffer: &[Point3], labels: &mut [Option<SemanticLabel>], r: f64, to: SemanticLabel) {
    let free: Vec<usize> = (0..buffer.len()).filter(|&i| labels[i].is_none()).collect();
    if map_points.is_empty() || free.is_empty() {
        return;
    }
    let mut universe: Vec<Point3> = map_points.to_vec();
    universe.extend(free.iter().map(|&i| buffer[i]));
    let mut mask = vec![true; map_points.len()];
    mask.resize(universe.len(), false);
    composite_mask(Composite::Closing, &universe, &mut mask, r);
    for (k, &i) in free.iter().enumerate() {
        if mask[map_points.len() + k] {
            labels[i] = Some(to);
        }
    }
}

/// Closing of `positive` points onto `negative` points among `labels`.
fn denoise(points: &[Point3], labels: &mut [SemanticLabel], positive: SemanticLabel, negative: SemanticLabel, r: f64) {
    let ids: Vec<usize> = (0..points.len())
        .filter(|&i| labels[i] == positive || labels[i] == negative)
        .collect();
    let sub: Vec<Point3> = ids.iter().map(|&i| points[i]).collect();
    let mut mask: Vec<bool> = ids.iter().map(|&i| labels[i] == positive).collect();
    composite_mask(Composite::Closing, &sub, &mut mask, r);
    for (k, &i) in ids.iter().enumerate() {
        labels[i] = if mask[k] { positive } else { negative };
    }
}

/// Labels every point of a recorded session.
///
/// `map` holds the refined map with `map_labels` in {Ground, Permanent};
/// `poses` are the aligned (start, end) poses of each frame.
pub fn label_session(
    map: &MapCloud,
    map_labels: &[SemanticLabel],
    frames: &[LidarFrame],
    poses: &[(Pose, Pose)],
    cfg: &AnnotationConfig,
) -> Result<SessionAnnotation> {
    check_poses(frames, poses)?;
    if map_labels.len() != map.len() {
        return Err(Error::InvalidInput("one label per map point is required".into()));
    }

    // new points, absent from the map
    let mut buffer = MapCloud::new(map.dl());
    let mut aligned = Vec::with_capacity(frames.len());
    for (k, (frame, (p0, p1))) in frames.iter().zip(poses).enumerate() {
        let (pts, normals) =
            aligned_points_and_normals(frame, p0, p1, cfg.normal_half_window).map_err(|e| frame_error(k, e))?;
        let (mut new_pts, mut new_normals) = (Vec::new(), Vec::new());
        for (p, n) in pts.iter().zip(&normals) {
            if cfg.inside_limits(p) && map.nearest(p, cfg.buffer_distance).is_none() {
                new_pts.push(*p);
                new_normals.push(*n);
            }
        }
        update_map(&mut buffer, &new_pts, &new_normals);
        aligned.push(pts);
    }
    buffer.reset_counters();

    let buffer_pts = buffer.positions();
    let of_label = |l: SemanticLabel| -> Vec<Point3> {
        map.points()
            .iter()
            .zip(map_labels)
            .filter(|(_, &m)| m == l)
            .map(|(p, _)| p.position)
            .collect()
    };
    let mut fixed: Vec<Option<SemanticLabel>> = vec![None; buffer.len()];
    close_onto(&of_label(SemanticLabel::Permanent), &buffer_pts, &mut fixed, cfg.permanent_radius, SemanticLabel::Permanent);
    close_onto(&of_label(SemanticLabel::Ground), &buffer_pts, &mut fixed, cfg.ground_radius, SemanticLabel::Ground);

    // ray tracing on the remaining points
    let rest: Vec<usize> = (0..buffer.len()).filter(|&i| fixed[i].is_none()).collect();
    let mut rest_map = MapCloud::new(map.dl());
    for &i in &rest {
        rest_map.insert(buffer.points()[i]);
    }
    for (k, (frame, (p0, p1))) in frames.iter().zip(poses).enumerate() {
        integrate_frame(&mut rest_map, frame, p0, p1, &cfg.pointray).map_err(|e| frame_error(k, e))?;
    }
    let probs = finalize_probabilities(&rest_map, cfg.pointray.n_min);
    for (k, &i) in rest.iter().enumerate() {
        fixed[i] = Some(classify(probs[k], cfg.tau_dynamic, cfg.tau_movable));
    }
    let mut labels: Vec<SemanticLabel> = fixed.into_iter().map(|l| l.expect("every point labelled")).collect();

    denoise(&buffer_pts, &mut labels, SemanticLabel::Dynamic, SemanticLabel::Movable, cfg.denoise_dynamic_radius);
    denoise(&buffer_pts, &mut labels, SemanticLabel::Movable, SemanticLabel::Dynamic, cfg.denoise_movable_radius);

    // back to the frames
    let map_index = map.index();
    let buffer_index = PointIndex::build(&buffer_pts, 0.25);
    let r = cfg.backproject_radius;
    let out = frames
        .iter()
        .zip(aligned)
        .map(|(frame, pts)| {
            let point_labels = pts
                .iter()
                .map(|p| {
                    if !cfg.inside_limits(p) {
                        return SemanticLabel::Uncertain;
                    }
                    let from_buffer = buffer_index.nearest(p, r).map(|(i, d)| (d, labels[i]));
                    let from_map = map_index.nearest(p, r).map(|(i, d)| (d, map_labels[i]));
                    match (from_buffer, from_map) {
                        (Some(b), Some(m)) => if b.0 <= m.0 { b.1 } else { m.1 },
                        (Some(b), None) => b.1,
                        (None, Some(m)) => m.1,
                        (None, None) => SemanticLabel::Uncertain,
                    }
                })
                .collect();
            let mut moved = frame.clone();
            for (tp, p) in moved.points.iter_mut().zip(&pts) {
                tp.position = *p;
            }
            AnnotatedFrame {
                frame: moved,
                labels: point_labels,
            }
        })
        .collect();

    Ok(SessionAnnotation {
        frames: out,
        buffer,
        buffer_labels: labels,
    })
}

/// Keeps obstacle points, flattens them, subsamples each class on a 2D grid
/// and cleans the dynamic class.
pub fn project_frame_2d(af: &AnnotatedFrame, cfg: &AnnotationConfig) -> Frame2D {
    let dl = cfg.grid_2d;
    let mut cells: BTreeMap<(SemanticLabel, i64, i64), (Point2, usize)> = BTreeMap::new();
    for (p, &l) in af.frame.points.iter().zip(&af.labels) {
        if !l.is_obstacle() {
            continue;
        }
        let key = (l, (p.position.x / dl).floor() as i64, (p.position.y / dl).floor() as i64);
        let acc = cells.entry(key).or_insert((Point2::zeros(), 0));
        acc.0 += p.position.xy();
        acc.1 += 1;
    }
    let mut points = Vec::with_capacity(cells.len());
    let mut labels = Vec::with_capacity(cells.len());
    for ((l, _, _), (sum, n)) in cells {
        points.push(sum / n as f64);
        labels.push(l);
    }

    // isolated dynamic points
    let dyn_pts: Vec<Point3> = points
        .iter()
        .zip(&labels)
        .filter(|(_, &l)| l == SemanticLabel::Dynamic)
        .map(|(p, _)| Point3::new(p.x, p.y, 0.0))
        .collect();
    let dyn_index = PointIndex::build(&dyn_pts, cfg.isolated_radius.max(1e-3));
    let mut keep = vec![true; points.len()];
    for (i, p) in points.iter().enumerate() {
        if labels[i] == SemanticLabel::Dynamic {
            let q = Point3::new(p.x, p.y, 0.0);
            let mut others = 0;
            dyn_index.for_each_within(&q, cfg.isolated_radius, |_, d2| {
                if d2 > 0.0 {
                    others += 1;
                }
            });
            keep[i] = others > 0;
        }
    }
    let (points, labels): (Vec<Point2>, Vec<SemanticLabel>) = points
        .into_iter()
        .zip(labels)
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(pl, _)| pl)
        .unzip();

    // opening of dynamics against statics
    let flat: Vec<Point3> = points.iter().map(|p| Point3::new(p.x, p.y, 0.0)).collect();
    let mut mask: Vec<bool> = labels.iter().map(|&l| l == SemanticLabel::Dynamic).collect();
    composite_mask(Composite::Opening, &flat, &mut mask, cfg.opening_radius);
    let statics: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != SemanticLabel::Dynamic).collect();
    let static_pts: Vec<Point3> = statics.iter().map(|&i| flat[i]).collect();
    let static_index = PointIndex::build(&static_pts, cfg.opening_radius.max(1e-3));
    let labels = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if mask[i] {
                SemanticLabel::Dynamic
            } else if l != SemanticLabel::Dynamic {
                l
            } else {
                // eroded dynamic point takes the class of the nearest static
                static_index
                    .nearest(&flat[i], 2.0 * cfg.opening_radius + 1.0)
                    .map_or(SemanticLabel::Movable, |(k, _)| labels[statics[k]])
            }
        })
        .collect();

    Frame2D {
        points,
        labels,
        stamp: af.frame.t1,
    }
}
