use serde::{Deserialize, Serialize};

use super::{icp_align, undistort_frame, update_map, IcpConfig, IcpResult, MapCloud, DL_MAP};
use crate::geom::{estimate_normals, interp_pose, scale_motion, LidarFrame, Point3, Pose, SurfaceNormal};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlamConfig {
    /// Set from its own configuration section.
    #[serde(skip)]
    pub icp: IcpConfig,
    /// Map voxel size (m).
    pub map_dl: f64,
    /// Half size of the lidar-image window used for normals.
    pub normal_half_window: usize,
    /// Frame points farther than this from the fixed map go to the buffer
    /// when localizing against a prior map (m).
    pub buffer_dist: f64,
}

impl Default for SlamConfig {
    fn default() -> Self {
        SlamConfig {
            icp: IcpConfig::default(),
            map_dl: DL_MAP,
            normal_half_window: 2,
            buffer_dist: 0.08,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SlamOutput {
    /// One result per input frame, in input order.
    pub poses: Vec<IcpResult>,
    pub map: MapCloud,
    /// Points that did not match the prior map (localization mode only).
    pub buffer: Option<MapCloud>,
}

/// Frame points moved to map coordinates, with normals rotated accordingly.
pub(crate) fn aligned_points_and_normals(
    frame: &LidarFrame,
    pose0: &Pose,
    pose1: &Pose,
    half_window: usize,
) -> Result<(Vec<Point3>, Vec<Option<SurfaceNormal>>)> {
    let normals = estimate_normals(frame, half_window);
    let mut pts = Vec::with_capacity(frame.len());
    let mut out_normals = Vec::with_capacity(frame.len());
    for (p, n) in frame.points.iter().zip(normals) {
        let pose = interp_pose(pose0, pose1, p.stamp)?;
        pts.push(pose.transform_point(&p.position));
        out_normals.push(n.map(|n| SurfaceNormal {
            normal: pose.transform_vector(&n.normal),
            planarity: n.planarity,
        }));
    }
    Ok((pts, out_normals))
}

/// Constant-velocity guess of the next frame-end pose.
fn extrapolate(prev: &IcpResult, t1: f64) -> Pose {
    let span = prev.pose1.stamp - prev.pose0.stamp;
    if span <= 0.0 {
        return prev.pose1.with_stamp(t1);
    }
    let delta = prev.pose1.compose(&prev.pose0.inverse());
    let factor = (t1 - prev.pose1.stamp) / span;
    scale_motion(&delta, factor).compose(&prev.pose1).with_stamp(t1)
}

/// Aligns frames in time order and accumulates the map.
///
/// Without a prior map the first frame seeds the map at `initial_pose` and
/// every aligned frame is merged into it. With a prior map, the map is used
/// for localization only and points farther than `buffer_dist` from it are
/// accumulated in a secondary buffer map.
pub fn run_slam(
    frames: &[LidarFrame],
    cfg: &SlamConfig,
    initial_pose: &Pose,
    prior: Option<MapCloud>,
) -> Result<SlamOutput> {
    let localize_only = prior.is_some();
    let mut map = prior.unwrap_or_else(|| MapCloud::new(cfg.map_dl));
    let mut buffer = localize_only.then(|| MapCloud::new(cfg.map_dl));
    let mut poses: Vec<IcpResult> = Vec::with_capacity(frames.len());

    for (k, frame) in frames.iter().enumerate() {
        if let Some(prev) = poses.last() {
            if frame.t0 < prev.pose0.stamp {
                return Err(Error::Frame {
                    frame: k,
                    source: Box::new(Error::InvalidInput("frames out of time order".into())),
                });
            }
        }
        let result = if poses.is_empty() && !localize_only {
            IcpResult {
                pose0: initial_pose.with_stamp(frame.t0),
                pose1: initial_pose.with_stamp(frame.t1),
                iterations: 0,
                rms_pt2pl: 0.0,
                converged: true,
                rms_history: Vec::new(),
            }
        } else {
            let (anchor, init) = match poses.last() {
                Some(prev) => (prev.pose0, extrapolate(prev, frame.t1)),
                None => (initial_pose.with_stamp(frame.t0), initial_pose.with_stamp(frame.t1)),
            };
            icp_align(frame, &map, &anchor, &init, &cfg.icp).map_err(|e| Error::Frame {
                frame: k,
                source: Box::new(e),
            })?
        };

        let (pts, normals) =
            aligned_points_and_normals(frame, &result.pose0, &result.pose1, cfg.normal_half_window)?;
        match buffer.as_mut() {
            None => update_map(&mut map, &pts, &normals),
            Some(buf) => {
                let (mut new_pts, mut new_normals) = (Vec::new(), Vec::new());
                for (p, n) in pts.iter().zip(&normals) {
                    if map.nearest(p, cfg.buffer_dist).is_none() {
                        new_pts.push(*p);
                        new_normals.push(*n);
                    }
                }
                update_map(buf, &new_pts, &new_normals);
            }
        }
        poses.push(result);
    }

    Ok(SlamOutput { poses, map, buffer })
}

/// Undistorts a frame with its aligned poses.
pub fn aligned_frame(frame: &LidarFrame, result: &IcpResult) -> Result<Vec<Point3>> {
    Ok(undistort_frame(frame, &result.pose0, &result.pose1)?
        .into_iter()
        .map(|p| p.position)
        .collect())
}
