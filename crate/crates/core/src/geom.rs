//! Geometric primitives shared by the mapping, ray-tracing and annotation
//! stages.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Quaternion, SymmetricEigen, UnitQuaternion, Vector2, Vector3};

use crate::{Error, Result};

pub type Point3 = Vector3<f64>;
pub type Point2 = Vector2<f64>;

/// Rigid sensor pose (sensor to map) at a given time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub stamp: f64,
}

impl Pose {
    pub fn identity(stamp: f64) -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
            stamp,
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>, stamp: f64) -> Self {
        Pose {
            rotation,
            translation,
            stamp,
        }
    }

    /// Planar pose: position `(x, y, z)` and heading about +z.
    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64, stamp: f64) -> Self {
        Pose {
            rotation: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
            translation: Vector3::new(x, y, z),
            stamp,
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    #[inline]
    pub fn inverse_transform_point(&self, p: &Point3) -> Point3 {
        self.rotation.inverse_transform_vector(&(p - self.translation))
    }

    /// `self ∘ other`, keeping `self`'s stamp. The rotation is renormalized.
    pub fn compose(&self, other: &Pose) -> Pose {
        let q = self.rotation.quaternion() * other.rotation.quaternion();
        Pose {
            rotation: UnitQuaternion::new_normalize(q),
            translation: self.rotation * other.translation + self.translation,
            stamp: self.stamp,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: inv,
            translation: -(inv * self.translation),
            stamp: self.stamp,
        }
    }

    pub fn with_stamp(mut self, stamp: f64) -> Pose {
        self.stamp = stamp;
        self
    }

    pub fn yaw(&self) -> f64 {
        self.rotation.euler_angles().2
    }
}

/// A lidar return with its own acquisition time and elevation ring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPoint {
    pub position: Point3,
    pub stamp: f64,
    pub ring: u16,
}

impl TimedPoint {
    pub fn new(position: Point3, stamp: f64, ring: u16) -> Self {
        TimedPoint {
            position,
            stamp,
            ring,
        }
    }
}

/// One lidar revolution in sensor coordinates, before undistortion.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarFrame {
    pub points: Vec<TimedPoint>,
    pub t0: f64,
    pub t1: f64,
    pub frame_id: u64,
}

impl LidarFrame {
    pub fn new(points: Vec<TimedPoint>, t0: f64, t1: f64, frame_id: u64) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
            return Err(Error::InvalidInput(format!(
                "frame {frame_id}: need t0 < t1, got [{t0}, {t1}]"
            )));
        }
        for p in &points {
            if !(p.stamp >= t0 && p.stamp <= t1) {
                return Err(Error::OutOfRange { t: p.stamp, t0, t1 });
            }
            if !p.position.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "frame {frame_id}: non-finite point coordinate"
                )));
            }
        }
        Ok(LidarFrame {
            points,
            t0,
            t1,
            frame_id,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Range, azimuth in `[-π, π)` and elevation above the horizontal plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCoord {
    pub rho: f64,
    pub theta: f64,
    pub phi: f64,
}

pub fn to_spherical(p: &Point3) -> SphericalCoord {
    let rho = p.norm();
    if rho == 0.0 {
        return SphericalCoord {
            rho: 0.0,
            theta: 0.0,
            phi: 0.0,
        };
    }
    let mut theta = p.y.atan2(p.x);
    if theta >= PI {
        theta -= 2.0 * PI;
    }
    let phi = (p.z / rho).clamp(-1.0, 1.0).asin();
    SphericalCoord { rho, theta, phi }
}

pub fn from_spherical(s: &SphericalCoord) -> Point3 {
    let (st, ct) = s.theta.sin_cos();
    let (sp, cp) = s.phi.sin_cos();
    Vector3::new(s.rho * cp * ct, s.rho * cp * st, s.rho * sp)
}

/// Integer voxel coordinates of a point for a grid of side `dl`.
pub type VoxelKey = [i64; 3];

#[inline]
pub fn voxel_key(p: &Point3, dl: f64) -> VoxelKey {
    [
        (p.x / dl).floor() as i64,
        (p.y / dl).floor() as i64,
        (p.z / dl).floor() as i64,
    ]
}

/// Voxel-grid subsampling: one barycenter (with mean stamp) per occupied voxel,
/// ordered by ascending voxel key.
pub fn grid_subsample(cloud: &[TimedPoint], dl: f64) -> Result<Vec<TimedPoint>> {
    if !(dl > 0.0 && dl.is_finite()) {
        return Err(Error::InvalidInput(format!("grid size must be positive, got {dl}")));
    }
    struct Acc {
        sum: Point3,
        stamp: f64,
        count: usize,
        ring: u16,
    }
    let mut cells: BTreeMap<VoxelKey, Acc> = BTreeMap::new();
    for p in cloud {
        if !p.position.iter().all(|c| c.is_finite()) || !p.stamp.is_finite() {
            return Err(Error::InvalidInput("non-finite point in subsampling input".into()));
        }
        let acc = cells.entry(voxel_key(&p.position, dl)).or_insert(Acc {
            sum: Point3::zeros(),
            stamp: 0.0,
            count: 0,
            ring: p.ring,
        });
        acc.sum += p.position;
        acc.stamp += p.stamp;
        acc.count += 1;
    }
    Ok(cells
        .into_values()
        .map(|acc| {
            let n = acc.count as f64;
            TimedPoint::new(acc.sum / n, acc.stamp / n, acc.ring)
        })
        .collect())
}

/// Plain-position variant of [`grid_subsample`] used by 2D/3D label clouds.
pub fn grid_subsample_points(cloud: &[Point3], dl: f64) -> Vec<Point3> {
    let mut cells: BTreeMap<VoxelKey, (Point3, usize)> = BTreeMap::new();
    for p in cloud {
        let acc = cells.entry(voxel_key(p, dl)).or_insert((Point3::zeros(), 0));
        acc.0 += p;
        acc.1 += 1;
    }
    cells.into_values().map(|(s, n)| s / n as f64).collect()
}

/// Azimuth pixel size of the lidar image.
pub const PIXEL_D_THETA: f64 = 0.33 * PI / 180.0;
/// Elevation pixel size of the lidar image.
pub const PIXEL_D_PHI: f64 = 0.5 * PI / 180.0;

/// Plane-fit normal of a point and the planarity of its neighbourhood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceNormal {
    pub normal: Vector3<f64>,
    /// `(λ2 - λ3) / λ1` of the neighbourhood covariance, in `[0, 1]`.
    pub planarity: f64,
}

/// Estimates per-point normals from neighbourhoods in the lidar image.
///
/// Rows of the image are the elevation rings (or elevation pixels of
/// [`PIXEL_D_PHI`] when the frame carries a single ring value), columns are
/// azimuth pixels of [`PIXEL_D_THETA`]. Each normal is oriented toward the
/// sensor origin. `None` marks a degenerate neighbourhood.
pub fn estimate_normals(frame: &LidarFrame, half_window: usize) -> Vec<Option<SurfaceNormal>> {
    estimate_normals_in(&frame.points, half_window)
}

pub(crate) fn estimate_normals_in(
    points: &[TimedPoint],
    half_window: usize,
) -> Vec<Option<SurfaceNormal>> {
    if points.is_empty() {
        return Vec::new();
    }
    let half_window = half_window.max(1) as i64;
    let first_ring = points[0].ring;
    let use_rings = points.iter().any(|p| p.ring != first_ring);

    let sph: Vec<SphericalCoord> = points.iter().map(|p| to_spherical(&p.position)).collect();
    let d_theta = if use_rings {
        azimuth_step(points, &sph).max(ring_step(points, &sph)).max(PIXEL_D_THETA)
    } else {
        PIXEL_D_THETA
    };
    let cols = (2.0 * PI / d_theta).ceil() as i64;
    let pixel = |i: usize| -> (i64, i64) {
        let s = &sph[i];
        let col = (((s.theta + PI) / d_theta).floor() as i64).rem_euclid(cols);
        let row = if use_rings {
            points[i].ring as i64
        } else {
            ((s.phi + PI / 2.0) / PIXEL_D_PHI).floor() as i64
        };
        (row, col)
    };

    let mut image: rustc_hash::FxHashMap<(i64, i64), Vec<u32>> = Default::default();
    for i in 0..points.len() {
        image.entry(pixel(i)).or_default().push(i as u32);
    }

    let mut neighbours = Vec::new();
    (0..points.len())
        .map(|i| {
            let (row, col) = pixel(i);
            let p = points[i].position;
            let rho = sph[i].rho;
            let gate = 0.5 + 0.2 * rho;
            neighbours.clear();
            for dr in -half_window..=half_window {
                for dc in -half_window..=half_window {
                    let key = (row + dr, (col + dc).rem_euclid(cols));
                    if let Some(ids) = image.get(&key) {
                        for &j in ids {
                            let q = points[j as usize].position;
                            if (q - p).norm() <= gate {
                                neighbours.push(q);
                            }
                        }
                    }
                }
            }
            fit_normal(&neighbours, &p)
        })
        .collect()
}

/// Median azimuth gap between consecutive returns of the same ring, so that
/// sensors coarser than the default pixel still get neighbours.
fn azimuth_step(points: &[TimedPoint], sph: &[SphericalCoord]) -> f64 {
    let mut by_ring: BTreeMap<u16, Vec<f64>> = BTreeMap::new();
    for (p, s) in points.iter().zip(sph) {
        by_ring.entry(p.ring).or_default().push(s.theta);
    }
    let mut gaps = Vec::new();
    for thetas in by_ring.values_mut() {
        thetas.sort_by(f64::total_cmp);
        gaps.extend(thetas.windows(2).map(|w| w[1] - w[0]).filter(|g| *g > 1e-9));
    }
    if gaps.is_empty() {
        return 0.0;
    }
    let mid = gaps.len() / 2;
    *gaps.select_nth_unstable_by(mid, f64::total_cmp).1
}

/// Median elevation gap between adjacent rings. Columns at least this wide
/// keep the window roughly square in angle; a window a few columns wide but
/// several rings tall is a thin vertical strip whose plane fit is unstable.
fn ring_step(points: &[TimedPoint], sph: &[SphericalCoord]) -> f64 {
    let mut by_ring: BTreeMap<u16, Vec<f64>> = BTreeMap::new();
    for (p, s) in points.iter().zip(sph) {
        by_ring.entry(p.ring).or_default().push(s.phi);
    }
    let mut centres: Vec<f64> = by_ring
        .values_mut()
        .map(|phis| {
            let mid = phis.len() / 2;
            *phis.select_nth_unstable_by(mid, f64::total_cmp).1
        })
        .collect();
    centres.sort_by(f64::total_cmp);
    let mut gaps: Vec<f64> = centres.windows(2).map(|w| w[1] - w[0]).filter(|g| *g > 1e-9).collect();
    if gaps.is_empty() {
        return 0.0;
    }
    let mid = gaps.len() / 2;
    *gaps.select_nth_unstable_by(mid, f64::total_cmp).1
}

/// Least-squares plane through `pts`, oriented so that `normal · at < 0`.
pub(crate) fn fit_normal(pts: &[Point3], at: &Point3) -> Option<SurfaceNormal> {
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mean = pts.iter().fold(Point3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2, l3) = (
        eig.eigenvalues[order[0]].max(0.0),
        eig.eigenvalues[order[1]].max(0.0),
        eig.eigenvalues[order[2]].max(0.0),
    );
    // collinear or coincident neighbourhood
    if l1 <= 1e-18 || l2 <= 1e-8 * l1 {
        return None;
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(order[2]).into_owned();
    normal.normalize_mut();
    if normal.dot(at) > 0.0 {
        normal = -normal;
    }
    Some(SurfaceNormal {
        normal,
        planarity: ((l2 - l3) / l1).clamp(0.0, 1.0),
    })
}

/// Spherical linear interpolation along the shorter arc.
pub fn slerp(q0: &UnitQuaternion<f64>, q1: &UnitQuaternion<f64>, w: f64) -> UnitQuaternion<f64> {
    let a = q0.quaternion().coords;
    let mut b = q1.quaternion().coords;
    let mut dot = a.dot(&b);
    if dot < 0.0 {
        b = -b;
        dot = -dot;
    }
    let coords = if dot > 0.9999995 {
        a * (1.0 - w) + b * w
    } else {
        let angle = dot.min(1.0).acos();
        let s = angle.sin();
        a * (((1.0 - w) * angle).sin() / s) + b * ((w * angle).sin() / s)
    };
    UnitQuaternion::new_normalize(Quaternion::from(coords))
}

/// Pose at time `t` between two stamped poses: linear translation, slerped
/// rotation. No extrapolation.
pub fn interp_pose(pose0: &Pose, pose1: &Pose, t: f64) -> Result<Pose> {
    let (t0, t1) = (pose0.stamp, pose1.stamp);
    if !(t >= t0 && t <= t1) || t1 < t0 {
        return Err(Error::OutOfRange { t, t0, t1 });
    }
    if t == t0 {
        return Ok(pose0.with_stamp(t));
    }
    if t == t1 {
        return Ok(pose1.with_stamp(t));
    }
    if pose0.rotation == pose1.rotation && pose0.translation == pose1.translation {
        return Ok(pose0.with_stamp(t));
    }
    let w = (t - t0) / (t1 - t0);
    Ok(Pose {
        rotation: slerp(&pose0.rotation, &pose1.rotation, w),
        translation: pose1.translation * w + pose0.translation * (1.0 - w),
        stamp: t,
    })
}

/// Scales a relative motion by `factor` (may exceed 1) on the geodesic.
pub(crate) fn scale_motion(delta: &Pose, factor: f64) -> Pose {
    let rot = delta.rotation.scaled_axis() * factor;
    Pose {
        rotation: UnitQuaternion::from_scaled_axis(rot),
        translation: delta.translation * factor,
        stamp: delta.stamp,
    }
}

/// Wraps an angle into `(-π, π]`.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}
