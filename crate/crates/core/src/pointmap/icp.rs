use nalgebra::{Matrix6, UnitQuaternion, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MapCloud;
use std::collections::BTreeMap;

use crate::geom::{interp_pose, voxel_key, LidarFrame, Point3, Pose, TimedPoint, VoxelKey};
use crate::{Error, Result};

/// How frame points are drawn at each ICP iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Uniform,
    /// Weighted by the score of the map point matched at the previous
    /// iteration; uniform on the first iteration.
    Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpConfig {
    /// Points sampled per iteration.
    pub sample_count: usize,
    /// Point-to-point rejection distance (m), applied at every iteration.
    pub max_pt2pt: f64,
    /// Point-to-plane rejection distance (m), skipped on the first iteration.
    pub max_pt2pl: f64,
    pub max_iters: usize,
    /// Convergence: translation increment below this (m)...
    pub min_motion_trans: f64,
    /// ...and rotation increment below this (rad).
    pub min_motion_rot: f64,
    /// Frame subsampling grid (m).
    pub subsample_dl: f64,
    /// Match points near `z = 0` in map coordinates to the ground plane.
    pub ground_heuristic: bool,
    /// Half-height of the band around `z = 0` flagged as ground (m).
    pub ground_band: f64,
    pub sampling: SamplingMode,
    /// Undistort with per-point interpolated poses; otherwise use the frame-end
    /// pose for every point.
    pub motion_correction: bool,
    pub seed: u64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            sample_count: 600,
            max_pt2pt: 2.0,
            max_pt2pl: 0.12,
            max_iters: 100,
            min_motion_trans: 0.01,
            min_motion_rot: 0.001,
            subsample_dl: 0.12,
            ground_heuristic: false,
            ground_band: 0.1,
            sampling: SamplingMode::Score,
            motion_correction: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Pose at the frame start.
    pub pose0: Pose,
    /// Pose at the frame end.
    pub pose1: Pose,
    pub iterations: usize,
    pub rms_pt2pl: f64,
    /// True when the motion threshold stopped the loop, false when the
    /// iteration cap did.
    pub converged: bool,
    /// Inlier point-to-plane rms of every iteration.
    pub rms_history: Vec<f64>,
}

/// Transforms every point with the pose interpolated at its own stamp,
/// yielding map coordinates.
pub fn undistort_frame(frame: &LidarFrame, pose0: &Pose, pose1: &Pose) -> Result<Vec<TimedPoint>> {
    frame
        .points
        .iter()
        .map(|p| {
            let pose = interp_pose(pose0, pose1, p.stamp)?;
            Ok(TimedPoint::new(pose.transform_point(&p.position), p.stamp, p.ring))
        })
        .collect()
}

struct Match {
    sample: usize,
    weight_hint: f64,
    residual: f64,
    jacobian: Vector6<f64>,
}

/// Aligns `frame` on `map` with point-to-plane ICP.
///
/// `anchor` is the fixed start of the interpolation interval (the start of the
/// previous frame during SLAM, or any pose stamped at or before `frame.t0`);
/// `init` is the initial guess of the frame-end pose. Only the frame-end pose
/// is optimized.
pub fn icp_align(
    frame: &LidarFrame,
    map: &MapCloud,
    anchor: &Pose,
    init: &Pose,
    cfg: &IcpConfig,
) -> Result<IcpResult> {
    if map.is_empty() {
        return Err(Error::EmptyMap);
    }
    if cfg.motion_correction && anchor.stamp > frame.t0 {
        return Err(Error::OutOfRange {
            t: frame.t0,
            t0: anchor.stamp,
            t1: frame.t1,
        });
    }
    let cloud = representatives(&frame.points, cfg.subsample_dl)?;
    if cloud.is_empty() {
        return Err(Error::InvalidInput("frame has no points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ frame.frame_id.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut weights = vec![1.0f64; cloud.len()];
    let mut pose1 = init.with_stamp(frame.t1);
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=cfg.max_iters {
        iterations = iter;
        let samples = draw_samples(&mut rng, &weights, cfg.sample_count, iter == 1 || cfg.sampling == SamplingMode::Uniform);

        let matches: Vec<Match> = samples
            .iter()
            .filter_map(|&i| match_point(&cloud[i], i, map, anchor, &pose1, cfg, iter))
            .collect();
        if matches.len() < 6 {
            return Err(Error::Divergence {
                iteration: iter,
                inliers: matches.len(),
            });
        }
        if cfg.sampling == SamplingMode::Score {
            for &i in &samples {
                weights[i] = 0.05;
            }
            for m in &matches {
                weights[m.sample] = m.weight_hint.max(0.05);
            }
        }

        let mut a = Matrix6::<f64>::zeros();
        let mut b = Vector6::<f64>::zeros();
        let mut sq = 0.0;
        for m in &matches {
            a += m.jacobian * m.jacobian.transpose();
            b += m.jacobian * m.residual;
            sq += m.residual * m.residual;
        }
        history.push((sq / matches.len() as f64).sqrt());

        let delta = solve_increment(&a, &b)
            .ok_or(Error::Divergence { iteration: iter, inliers: matches.len() })?;
        let rot = Vector3::new(delta[0], delta[1], delta[2]);
        let trans = Vector3::new(delta[3], delta[4], delta[5]);
        let step = Pose::new(UnitQuaternion::from_scaled_axis(rot), trans, pose1.stamp);
        pose1 = step.compose(&pose1);

        if trans.norm() < cfg.min_motion_trans && rot.norm() < cfg.min_motion_rot {
            converged = true;
            break;
        }
    }

    let pose0 = if cfg.motion_correction {
        interp_pose(anchor, &pose1, frame.t0)?
    } else {
        pose1.with_stamp(frame.t0)
    };
    Ok(IcpResult {
        pose0,
        pose1,
        iterations,
        rms_pt2pl: *history.last().unwrap_or(&0.0),
        converged,
        rms_history: history,
    })
}

/// One actual frame point per voxel: the one closest to the voxel barycenter.
/// Unlike barycenters these stay on the measured surfaces and keep their own
/// stamps.
fn representatives(points: &[TimedPoint], dl: f64) -> Result<Vec<TimedPoint>> {
    if !(dl > 0.0 && dl.is_finite()) {
        return Err(Error::InvalidInput(format!("grid size must be positive, got {dl}")));
    }
    let mut cells: BTreeMap<VoxelKey, (Point3, Vec<usize>)> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        if !p.position.iter().all(|c| c.is_finite()) || !p.stamp.is_finite() {
            return Err(Error::InvalidInput("non-finite point in frame".into()));
        }
        let cell = cells.entry(voxel_key(&p.position, dl)).or_insert((Point3::zeros(), Vec::new()));
        cell.0 += p.position;
        cell.1.push(i);
    }
    Ok(cells
        .into_values()
        .map(|(sum, ids)| {
            let center = sum / ids.len() as f64;
            let best = ids
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let da = (points[a].position - center).norm_squared();
                    let db = (points[b].position - center).norm_squared();
                    da.total_cmp(&db).then(a.cmp(&b))
                })
                .expect("voxel has points");
            points[best]
        })
        .collect())
}

fn draw_samples(rng: &mut ChaCha8Rng, weights: &[f64], count: usize, uniform: bool) -> Vec<usize> {
    let n = weights.len();
    if n <= count {
        return (0..n).collect();
    }
    let mut picked = if uniform {
        rand::seq::index::sample(rng, n, count).into_vec()
    } else {
        rand::seq::index::sample_weighted(rng, n, |i| weights[i], count)
            .map(|v| v.into_vec())
            .unwrap_or_else(|_| (0..count).collect())
    };
    picked.sort_unstable();
    picked
}

fn match_point(
    p: &TimedPoint,
    sample: usize,
    map: &MapCloud,
    anchor: &Pose,
    pose1: &Pose,
    cfg: &IcpConfig,
    iter: usize,
) -> Option<Match> {
    let (world, w) = if cfg.motion_correction {
        let t = p.stamp.clamp(anchor.stamp, pose1.stamp);
        let pose = interp_pose(anchor, pose1, t).ok()?;
        let w = if pose1.stamp > anchor.stamp {
            (t - anchor.stamp) / (pose1.stamp - anchor.stamp)
        } else {
            1.0
        };
        (pose.transform_point(&p.position), w)
    } else {
        (pose1.transform_point(&p.position), 1.0)
    };

    let (target, normal, hint): (Point3, Vector3<f64>, f64) =
        if cfg.ground_heuristic && world.z.abs() < cfg.ground_band {
            (Vector3::new(world.x, world.y, 0.0), Vector3::z(), 1.0)
        } else {
            let (id, _) = map.nearest(&world, cfg.max_pt2pt)?;
            let mp = &map.points()[id];
            (mp.position, mp.normal?, mp.score)
        };

    let diff = world - target;
    if diff.norm() > cfg.max_pt2pt {
        return None;
    }
    let residual = normal.dot(&diff);
    if iter > 1 && residual.abs() > cfg.max_pt2pl {
        return None;
    }
    let c = world.cross(&normal);
    let jacobian = Vector6::new(c.x, c.y, c.z, normal.x, normal.y, normal.z) * w;
    Some(Match {
        sample,
        weight_hint: hint,
        residual,
        jacobian,
    })
}

fn solve_increment(a: &Matrix6<f64>, b: &Vector6<f64>) -> Option<Vector6<f64>> {
    let rhs = -b;
    if let Some(chol) = a.cholesky() {
        let x = chol.solve(&rhs);
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    // rank-deficient geometry (e.g. a single plane): damp the free directions
    let damped = a + Matrix6::identity() * (1e-6 * a.trace().max(1e-12));
    damped.cholesky().map(|c| c.solve(&rhs)).filter(|x| x.iter().all(|v| v.is_finite()))
}
