//! Ray-traced occupancy counters on map points.
//!
//! Every frame increments `n_i` and `o_i` of the map voxels it hits, and `n_i`
//! alone of the map points lying in free space in front of a measured return.
//! Free space is tested in a spherical frustum grid per azimuth slice of the
//! frame, each slice projected with the sensor pose at its median stamp.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geom::{interp_pose, to_spherical, LidarFrame, Point3, Pose, TimedPoint};
use crate::pointmap::MapCloud;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointRayConfig {
    /// Azimuth pixel size (deg).
    pub d_theta_deg: f64,
    /// Elevation pixel size (deg).
    pub d_phi_deg: f64,
    pub n_slices: usize,
    /// Incidence angle limit for free-space updates (rad).
    pub alpha_max: f64,
    /// Normals closer than this to vertical bypass the incidence limit (rad).
    pub beta_min: f64,
    /// Minimum `n_i` for a probability to be considered valid.
    pub n_min: u32,
}

impl Default for PointRayConfig {
    fn default() -> Self {
        PointRayConfig {
            d_theta_deg: 0.33,
            d_phi_deg: 0.5,
            n_slices: 16,
            alpha_max: 5.0 * PI / 12.0,
            beta_min: PI / 3.0,
            n_min: 10,
        }
    }
}

impl PointRayConfig {
    pub fn d_theta(&self) -> f64 {
        self.d_theta_deg.to_radians()
    }

    pub fn d_phi(&self) -> f64 {
        self.d_phi_deg.to_radians()
    }
}

/// Pixel layout of a frustum grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrustumGeometry {
    pub d_theta: f64,
    pub d_phi: f64,
    pub cols: usize,
    pub rows: usize,
    /// Elevation of the lower edge of row 0.
    pub phi_min: f64,
}

impl FrustumGeometry {
    /// Covers the elevations of `points` with one extra pixel on each side.
    pub fn covering<'a>(points: impl IntoIterator<Item = &'a Point3>, cfg: &PointRayConfig) -> Self {
        let (d_theta, d_phi) = (cfg.d_theta(), cfg.d_phi());
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in points {
            let s = to_spherical(p);
            if s.rho > 0.0 {
                lo = lo.min(s.phi);
                hi = hi.max(s.phi);
            }
        }
        if !lo.is_finite() {
            lo = 0.0;
            hi = 0.0;
        }
        let phi_min = lo - d_phi;
        let rows = ((hi + d_phi - phi_min) / d_phi).floor() as usize + 1;
        FrustumGeometry {
            d_theta,
            d_phi,
            cols: (2.0 * PI / d_theta).ceil() as usize,
            rows,
            phi_min,
        }
    }

    #[inline]
    pub fn column(&self, theta: f64) -> usize {
        (((theta + PI) / self.d_theta).floor() as i64).rem_euclid(self.cols as i64) as usize
    }

    #[inline]
    pub fn row(&self, phi: f64) -> Option<usize> {
        let r = ((phi - self.phi_min) / self.d_phi).floor();
        (r >= 0.0 && (r as usize) < self.rows).then_some(r as usize)
    }

    /// Half of the largest angular size of a pixel, times the range.
    #[inline]
    pub fn margin(&self, rho0: f64) -> f64 {
        rho0 * self.d_theta.max(self.d_phi) / 2.0
    }
}

/// Minimum return range per (elevation, azimuth) pixel; `+∞` when empty.
#[derive(Debug, Clone, PartialEq)]
pub struct FrustumGrid {
    pub geometry: FrustumGeometry,
    ranges: Vec<f64>,
}

impl FrustumGrid {
    /// Builds the grid of a slice of points expressed in the sensor frame,
    /// covering the slice's own elevation extent.
    pub fn from_points(points: &[TimedPoint], cfg: &PointRayConfig) -> Self {
        let pts: Vec<Point3> = points.iter().map(|p| p.position).collect();
        let geometry = FrustumGeometry::covering(&pts, cfg);
        FrustumGrid::build(geometry, pts.iter())
    }

    pub fn build<'a>(geometry: FrustumGeometry, points: impl IntoIterator<Item = &'a Point3>) -> Self {
        let mut ranges = vec![f64::INFINITY; geometry.rows * geometry.cols];
        for p in points {
            let s = to_spherical(p);
            if s.rho <= 0.0 {
                continue;
            }
            if let Some(row) = geometry.row(s.phi) {
                let cell = &mut ranges[row * geometry.cols + geometry.column(s.theta)];
                if s.rho < *cell {
                    *cell = s.rho;
                }
            }
        }
        let mut grid = FrustumGrid { geometry, ranges };
        grid.fill_rows();
        grid
    }

    /// Nearest-neighbour fill of empty pixels along azimuth, cyclic.
    /// Equidistant neighbours resolve to the smaller range.
    fn fill_rows(&mut self) {
        let cols = self.geometry.cols;
        let mut left = vec![(usize::MAX, f64::INFINITY); cols];
        let mut right = vec![(usize::MAX, f64::INFINITY); cols];
        for row in self.ranges.chunks_mut(cols) {
            let Some(first) = row.iter().position(|v| v.is_finite()) else {
                continue;
            };
            // distance to the closest return on each side, walking cyclically
            let mut last = (usize::MAX, f64::INFINITY);
            for step in 0..=cols {
                let c = (first + step) % cols;
                if row[c].is_finite() {
                    last = (0, row[c]);
                } else if last.0 != usize::MAX {
                    last.0 += 1;
                }
                left[c] = last;
            }
            let mut last = (usize::MAX, f64::INFINITY);
            for step in 0..=cols {
                let c = (first + cols - step % cols) % cols;
                if row[c].is_finite() {
                    last = (0, row[c]);
                } else if last.0 != usize::MAX {
                    last.0 += 1;
                }
                right[c] = last;
            }
            for c in 0..cols {
                if row[c].is_finite() {
                    continue;
                }
                let (dl, vl) = left[c];
                let (dr, vr) = right[c];
                let best = match dl.cmp(&dr) {
                    std::cmp::Ordering::Less => (dl, vl),
                    std::cmp::Ordering::Greater => (dr, vr),
                    std::cmp::Ordering::Equal => (dl, vl.min(vr)),
                };
                row[c] = best.1;
            }
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.ranges[row * self.geometry.cols + col]
    }

    /// Range stored at the pixel of a sensor-frame direction.
    pub fn lookup(&self, theta: f64, phi: f64) -> Option<f64> {
        let row = self.geometry.row(phi)?;
        Some(self.get(row, self.geometry.column(theta)))
    }

    pub fn ranges(&self) -> &[f64] {
        &self.ranges
    }
}

/// Tallies of one [`integrate_frame`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IntegrationStats {
    pub occupied_hits: usize,
    pub free_updates: usize,
    /// Projected map points skipped for lack of a normal.
    pub skipped_no_normal: usize,
}

/// Adds the occupancy evidence of one frame to the map counters.
pub fn integrate_frame(
    map: &mut MapCloud,
    frame: &LidarFrame,
    pose0: &Pose,
    pose1: &Pose,
    cfg: &PointRayConfig,
) -> Result<IntegrationStats> {
    let mut stats = IntegrationStats::default();
    if frame.is_empty() || map.is_empty() {
        return Ok(stats);
    }
    let world: Vec<Point3> = frame
        .points
        .iter()
        .map(|p| Ok(interp_pose(pose0, pose1, p.stamp)?.transform_point(&p.position)))
        .collect::<Result<_>>()?;

    // occupied voxels: at most one hit per map point and frame
    let mut occupied = vec![false; map.len()];
    for p in &world {
        if let Some(i) = map.voxel_lookup(p) {
            occupied[i] = true;
        }
    }
    for (i, mp) in map.points_mut().iter_mut().enumerate() {
        if occupied[i] {
            mp.seen_count += 1;
            mp.occupied_count += 1;
            stats.occupied_hits += 1;
        }
    }

    let raw: Vec<Point3> = frame.points.iter().map(|p| p.position).collect();
    let geometry = FrustumGeometry::covering(&raw, cfg);
    let cols = geometry.cols;
    let n_slices = cfg.n_slices.max(1);
    let slice_start = |s: usize| s * cols / n_slices;
    let raw_cols: Vec<usize> = raw.iter().map(|p| geometry.column(to_spherical(p).theta)).collect();
    let owner = |c: usize| {
        // largest s with slice_start(s) <= c
        let mut s = (c * n_slices / cols).min(n_slices - 1);
        while slice_start(s) > c {
            s -= 1;
        }
        while s + 1 < n_slices && slice_start(s + 1) <= c {
            s += 1;
        }
        s
    };

    let max_range = raw.iter().map(|p| p.norm()).fold(0.0, f64::max) + 1.0;
    let mid_pose = interp_pose(pose0, pose1, 0.5 * (frame.t0 + frame.t1))?;
    let center = mid_pose.translation;
    let candidates: Vec<usize> = map
        .points()
        .iter()
        .enumerate()
        .filter(|(i, mp)| !occupied[*i] && (mp.position - center).norm() <= max_range)
        .map(|(i, _)| i)
        .collect();

    let (cos_beta, alpha_max) = (cfg.beta_min.cos(), cfg.alpha_max);
    let mut free = vec![false; map.len()];

    for s in 0..n_slices {
        let (start, end) = (slice_start(s), slice_start(s + 1));
        let mut stamps: Vec<f64> = frame
            .points
            .iter()
            .zip(&raw_cols)
            .filter(|(_, &c)| owner(c) == s)
            .map(|(p, _)| p.stamp)
            .collect();
        stamps.sort_by(f64::total_cmp);
        let median = match stamps.get(stamps.len() / 2) {
            Some(&t) => interp_pose(pose0, pose1, t)?,
            None => mid_pose,
        };

        // the whole frame seen from the slice pose, so that the azimuth fill
        // near the wedge borders matches a single full-frame grid
        let local: Vec<Point3> = world.iter().map(|w| median.inverse_transform_point(w)).collect();
        let grid = FrustumGrid::build(geometry, local.iter());

        for &i in &candidates {
            let mp = &map.points()[i];
            let q = median.inverse_transform_point(&mp.position);
            let sph = to_spherical(&q);
            if sph.rho <= 0.0 {
                continue;
            }
            let col = geometry.column(sph.theta);
            if col < start || col >= end {
                continue;
            }
            let Some(row) = geometry.row(sph.phi) else {
                continue;
            };
            let rho0 = grid.get(row, col);
            if !rho0.is_finite() || sph.rho >= rho0 - geometry.margin(rho0) {
                continue;
            }
            let Some(normal) = mp.normal else {
                stats.skipped_no_normal += 1;
                continue;
            };
            let ray = (mp.position - median.translation) / sph.rho;
            let alpha = ray.dot(&normal).abs().min(1.0).acos();
            if normal.z.abs() > cos_beta || alpha < alpha_max {
                free[i] = true;
            }
        }
    }

    for (i, mp) in map.points_mut().iter_mut().enumerate() {
        if free[i] {
            mp.seen_count += 1;
            stats.free_updates += 1;
        }
    }
    Ok(stats)
}

/// `o / n` when `n >= n_min`, else 0.5.
#[inline]
pub fn occupancy_probability(seen: u32, occupied: u32, n_min: u32) -> f64 {
    if seen >= n_min.max(1) {
        occupied as f64 / seen as f64
    } else {
        0.5
    }
}

pub fn finalize_probabilities(map: &MapCloud, n_min: u32) -> Vec<f64> {
    map.points()
        .iter()
        .map(|p| occupancy_probability(p.seen_count, p.occupied_count, n_min))
        .collect()
}
