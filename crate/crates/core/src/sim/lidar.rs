use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::world::World;
use crate::annotate::SemanticLabel;
use crate::geom::{interp_pose, LidarFrame, Point2, Point3, Pose, TimedPoint};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarConfig {
    pub rings: u16,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub azimuth_step_deg: f64,
    /// Revolution period (s).
    pub period: f64,
    /// Sensor height above the ground (m).
    pub mount_height: f64,
    pub min_range: f64,
    pub max_range: f64,
    /// Standard deviation of the range noise (m); zero disables it.
    pub range_noise: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        LidarConfig {
            rings: 32,
            elevation_min_deg: -25.0,
            elevation_max_deg: 15.0,
            azimuth_step_deg: 0.33,
            period: 0.1,
            mount_height: 0.7,
            min_range: 0.3,
            max_range: 25.0,
            range_noise: 0.0,
        }
    }
}

impl LidarConfig {
    pub fn elevation(&self, ring: u16) -> f64 {
        if self.rings <= 1 {
            return self.elevation_min_deg.to_radians();
        }
        let f = ring as f64 / (self.rings - 1) as f64;
        (self.elevation_min_deg + f * (self.elevation_max_deg - self.elevation_min_deg)).to_radians()
    }

    pub fn azimuth_count(&self) -> usize {
        (360.0 / self.azimuth_step_deg).round() as usize
    }
}

/// Vertical cylinder moving linearly during the revolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cylinder {
    pub start: Point2,
    pub end: Point2,
    pub radius: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    Ground,
    Wall(usize),
    Actor(usize),
}

impl Surface {
    pub fn label(self) -> SemanticLabel {
        match self {
            Surface::Ground => SemanticLabel::Ground,
            Surface::Wall(_) => SemanticLabel::Permanent,
            Surface::Actor(_) => SemanticLabel::Dynamic,
        }
    }
}

pub(crate) fn hit_wall(o: &Point3, d: &Vector3<f64>, a: Point2, b: Point2, height: f64) -> Option<f64> {
    // o.xy + t d.xy = a + s (b - a)
    let e = b - a;
    let denom = d.x * (-e.y) - d.y * (-e.x);
    if denom.abs() < 1e-15 {
        return None;
    }
    let r = Point2::new(a.x - o.x, a.y - o.y);
    let t = (r.x * (-e.y) - r.y * (-e.x)) / denom;
    let s = (d.x * r.y - d.y * r.x) / denom;
    if t <= 0.0 || !(0.0..=1.0).contains(&s) {
        return None;
    }
    let z = o.z + t * d.z;
    (0.0..=height).contains(&z).then_some(t)
}

pub(crate) fn hit_cylinder(o: &Point3, d: &Vector3<f64>, c: Point2, radius: f64, height: f64) -> Option<f64> {
    let (fx, fy) = (o.x - c.x, o.y - c.y);
    let a = d.x * d.x + d.y * d.y;
    if a < 1e-15 {
        return None;
    }
    let b = 2.0 * (fx * d.x + fy * d.y);
    let cc = fx * fx + fy * fy - radius * radius;
    let disc = b * b - 4.0 * a * cc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)].into_iter().find(|&t| {
        let z = o.z + t * d.z;
        t > 0.0 && (0.0..=height).contains(&z)
    })
}

pub(crate) fn hit_ground(o: &Point3, d: &Vector3<f64>) -> Option<f64> {
    (d.z < 0.0 && o.z > 0.0).then(|| -o.z / d.z)
}

/// Nearest surface along a ray, walls first on exact ties.
pub fn cast_ray(world: &World, actors: &[(Point2, f64, f64)], o: &Point3, d: &Vector3<f64>, max_range: f64) -> Option<(f64, Surface)> {
    let mut best: Option<(f64, Surface)> = hit_ground(o, d).map(|t| (t, Surface::Ground));
    let mut consider = |t: Option<f64>, s: Surface| {
        if let Some(t) = t {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, s));
            }
        }
    };
    for (i, w) in world.walls.iter().enumerate() {
        consider(hit_wall(o, d, w.a, w.b, w.height), Surface::Wall(i));
    }
    for (i, &(c, r, h)) in actors.iter().enumerate() {
        consider(hit_cylinder(o, d, c, r, h), Surface::Actor(i));
    }
    best.filter(|&(t, _)| t <= max_range)
}

/// Synthesizes one revolution starting at `t0`. Each azimuth column is fired
/// at its own stamp from the sensor pose interpolated in `poses`, against
/// actors interpolated between their start and end positions. Points are
/// expressed in the sensor frame at their stamp.
pub fn simulate_lidar<R: Rng>(
    world: &World,
    actors: &[Cylinder],
    poses: &[Pose],
    t0: f64,
    frame_id: u64,
    cfg: &LidarConfig,
    rng: &mut R,
) -> Result<(LidarFrame, Vec<SemanticLabel>)> {
    let n_az = cfg.azimuth_count();
    let noise = (cfg.range_noise > 0.0).then(|| Normal::new(0.0, cfg.range_noise).expect("positive sigma"));
    let dirs: Vec<(u16, f64, f64)> = (0..cfg.rings)
        .map(|r| {
            let e = cfg.elevation(r);
            (r, e.cos(), e.sin())
        })
        .collect();
    let mut points = Vec::with_capacity(n_az * cfg.rings as usize / 2);
    let mut labels = Vec::with_capacity(points.capacity());
    let mut shapes = Vec::with_capacity(actors.len());
    for a in 0..n_az {
        let frac = a as f64 / n_az as f64;
        let stamp = t0 + frac * cfg.period;
        let pose = pose_at(poses, stamp)?;
        let theta = -std::f64::consts::PI + a as f64 * 2.0 * std::f64::consts::PI / n_az as f64;
        let (st, ct) = theta.sin_cos();
        shapes.clear();
        shapes.extend(actors.iter().map(|c| (c.start + (c.end - c.start) * frac, c.radius, c.height)));
        let origin: Point3 = pose.translation;
        for &(ring, ce, se) in &dirs {
            let local = Vector3::new(ce * ct, ce * st, se);
            let d = pose.transform_vector(&local);
            let Some((t, surface)) = cast_ray(world, &shapes, &origin, &d, cfg.max_range) else {
                continue;
            };
            if t < cfg.min_range {
                continue;
            }
            let range = match &noise {
                Some(n) => (t + n.sample(rng)).max(cfg.min_range),
                None => t,
            };
            points.push(TimedPoint::new(local * range, stamp, ring));
            labels.push(surface.label());
        }
    }
    Ok((LidarFrame::new(points, t0, t0 + cfg.period, frame_id)?, labels))
}

/// Pose at `t` from a stamped history, holding the ends.
pub(crate) fn pose_at(poses: &[Pose], t: f64) -> Result<Pose> {
    let first = poses.first().ok_or_else(|| crate::Error::InvalidInput("empty pose history".into()))?;
    if t <= first.stamp || poses.len() == 1 {
        return Ok(first.with_stamp(t));
    }
    let i = poses.partition_point(|p| p.stamp <= t);
    if i >= poses.len() {
        return Ok(poses[poses.len() - 1].with_stamp(t));
    }
    interp_pose(&poses[i - 1], &poses[i], t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::world::Wall;
    use rand::SeedableRng;

    fn single_wall(x: f64) -> World {
        World {
            walls: vec![Wall {
                a: Point2::new(x, -50.0),
                b: Point2::new(x, 50.0),
                height: 5.0,
            }],
            goals: Vec::new(),
            limits: vec![[-60.0, -60.0], [60.0, -60.0], [60.0, 60.0], [-60.0, 60.0]],
            waypoints: vec![Point2::zeros(), Point2::new(1.0, 0.0)],
        }
    }

    fn flat_lidar() -> LidarConfig {
        LidarConfig {
            rings: 1,
            elevation_min_deg: 0.0,
            elevation_max_deg: 0.0,
            azimuth_step_deg: 0.25,
            ..LidarConfig::default()
        }
    }

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn static_wall_range_is_exact() {
        let world = single_wall(5.0);
        let poses = [Pose::from_xyz_yaw(0.0, 0.0, 0.7, 0.0, 0.0)];
        let (frame, labels) = simulate_lidar(&world, &[], &poses, 0.0, 0, &flat_lidar(), &mut rng()).unwrap();
        let forward = frame
            .points
            .iter()
            .zip(&labels)
            .find(|(p, _)| p.position.y.abs() < 1e-12 && p.position.x > 0.0)
            .unwrap();
        assert!((forward.0.position.norm() - 5.0).abs() < 1e-9);
        assert_eq!(*forward.1, SemanticLabel::Permanent);
        // stamps grow with azimuth
        assert!(frame.points.windows(2).all(|w| w[1].stamp >= w[0].stamp));
        assert!(frame.points.iter().all(|p| p.stamp >= 0.0 && p.stamp < 0.1));
    }

    #[test]
    fn moving_sensor_skews_the_wall() {
        // wall behind the sensor along -x so that both ends of the sweep see it
        let world = single_wall(-5.0);
        let poses = [
            Pose::from_xyz_yaw(0.0, 0.0, 0.7, 0.0, 0.0),
            Pose::from_xyz_yaw(0.1, 0.0, 0.7, 0.0, 0.1),
        ];
        let cfg = flat_lidar();
        let (frame, _) = simulate_lidar(&world, &[], &poses, 0.0, 0, &cfg, &mut rng()).unwrap();
        let first = frame.points.first().unwrap();
        let last = frame.points.last().unwrap();
        // the first column looks along -x at t = 0, the last one just before t = 0.1
        assert!((first.position.norm() - 5.0).abs() < 1e-9);
        let expected = 5.0 + 0.1 * (cfg.azimuth_count() - 1) as f64 / cfg.azimuth_count() as f64;
        assert!((last.position.x.abs() - expected).abs() < 1e-3, "{}", last.position.x);
        assert!((last.position.x.abs() - first.position.x.abs() - 0.1).abs() < 0.002);
    }

    #[test]
    fn actors_occlude_the_wall() {
        let world = single_wall(5.0);
        let poses = [Pose::from_xyz_yaw(0.0, 0.0, 0.7, 0.0, 0.0)];
        let actor = Cylinder {
            start: Point2::new(2.0, 0.0),
            end: Point2::new(2.0, 0.0),
            radius: 0.3,
            height: 1.8,
        };
        let (frame, labels) = simulate_lidar(&world, &[actor], &poses, 0.0, 0, &flat_lidar(), &mut rng()).unwrap();
        let half = (0.3f64 / 2.0).asin();
        for (p, l) in frame.points.iter().zip(&labels) {
            let az = p.position.y.atan2(p.position.x);
            if az.abs() < half * 0.95 {
                assert_eq!(*l, SemanticLabel::Dynamic);
                assert!(p.position.norm() < 2.0);
            } else if az.abs() < 0.5 && az.abs() > half * 1.05 {
                assert_eq!(*l, SemanticLabel::Permanent);
            }
        }
    }

    #[test]
    fn default_sensor_sees_the_ground() {
        let world = single_wall(5.0);
        let poses = [Pose::from_xyz_yaw(0.0, 0.0, 0.7, 0.0, 0.0)];
        let cfg = LidarConfig::default();
        let (frame, labels) = simulate_lidar(&world, &[], &poses, 0.0, 0, &cfg, &mut rng()).unwrap();
        assert!(labels.contains(&SemanticLabel::Ground));
        for (p, l) in frame.points.iter().zip(&labels) {
            if *l == SemanticLabel::Ground {
                assert!((p.position.z + 0.7).abs() < 1e-9);
            }
        }
        assert!(frame.points.iter().all(|p| p.ring < 32));
    }

    /// Intersection with every surface through independent formulas.
    fn oracle(world: &World, actors: &[(Point2, f64, f64)], o: &Point3, d: &Vector3<f64>, max_range: f64) -> Option<f64> {
        let mut ts = Vec::new();
        if d.z < 0.0 {
            ts.push(o.z / -d.z);
        }
        for w in &world.walls {
            // plane through the wall with horizontal normal n
            let e = w.b - w.a;
            let n = Vector3::new(-e.y, e.x, 0.0);
            let dn = d.dot(&n);
            if dn.abs() < 1e-15 {
                continue;
            }
            let t = (Vector3::new(w.a.x, w.a.y, 0.0) - o).dot(&n) / dn;
            let p = o + d * t;
            let s = (Point2::new(p.x, p.y) - w.a).dot(&e) / e.norm_squared();
            if t > 0.0 && (0.0..=1.0).contains(&s) && (0.0..=w.height).contains(&p.z) {
                ts.push(t);
            }
        }
        for &(c, r, h) in actors {
            // march, then bisect the first crossing
            let inside = |t: f64| {
                let p = o + d * t;
                (Point2::new(p.x, p.y) - c).norm() <= r && (0.0..=h).contains(&p.z)
            };
            let mut prev = 0.0;
            let mut t = 1e-4;
            while t < 40.0 {
                if inside(t) {
                    let (mut lo, mut hi) = (prev, t);
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        if inside(mid) {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                    }
                    ts.push(hi);
                    break;
                }
                prev = t;
                t += 1e-3;
            }
        }
        ts.into_iter().filter(|t| *t > 0.0).min_by(f64::total_cmp).filter(|&t| t <= max_range)
    }

    #[test]
    fn returns_the_nearest_surface() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let mut world = single_wall(r.gen_range(3.0..8.0));
            for _ in 0..4 {
                let a = Point2::new(r.gen_range(-8.0..8.0), r.gen_range(-8.0..8.0));
                let b = a + Point2::new(r.gen_range(-4.0..4.0), r.gen_range(-4.0..4.0));
                world.walls.push(Wall {
                    a,
                    b,
                    height: r.gen_range(0.5..3.0),
                });
            }
            let actors: Vec<(Point2, f64, f64)> = (0..3)
                .map(|_| (Point2::new(r.gen_range(-6.0..6.0), r.gen_range(-6.0..6.0)), 0.3, 1.8))
                .filter(|(c, _, _)| c.norm() > 0.5)
                .collect();
            let o = Point3::new(0.0, 0.0, 0.7);
            for _ in 0..50 {
                let az = r.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                let el = r.gen_range(-0.4..0.25f64);
                let d = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
                let got = cast_ray(&world, &actors, &o, &d, 100.0).map(|h| h.0);
                let want = oracle(&world, &actors, &o, &d, 100.0);
                match (got, want) {
                    (Some(a), Some(b)) => assert!((a - b).abs() < 2e-3, "{a} {b}"),
                    (None, None) => {}
                    other => panic!("{other:?}"),
                }
            }
        }
    }

    #[test]
    fn noise_is_seeded() {
        let world = single_wall(5.0);
        let poses = [Pose::from_xyz_yaw(0.0, 0.0, 0.7, 0.0, 0.0)];
        let cfg = LidarConfig {
            range_noise: 0.02,
            ..flat_lidar()
        };
        let a = simulate_lidar(&world, &[], &poses, 0.0, 0, &cfg, &mut rng()).unwrap();
        let b = simulate_lidar(&world, &[], &poses, 0.0, 0, &cfg, &mut rng()).unwrap();
        assert_eq!(a, b);
        let clean = simulate_lidar(&world, &[], &poses, 0.0, 0, &flat_lidar(), &mut rng()).unwrap();
        assert_ne!(a.0.points, clean.0.points);
    }
}
