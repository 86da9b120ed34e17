use std::fmt::Write as _;
use std::path::Path;

use crate::annotate::point_in_polygon;
use crate::geom::Point2;
use crate::{Error, Result};

const ATRIUM: &str = include_str!("../../worlds/atrium.world");

/// Vertical wall extruded from the ground along a segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wall {
    pub a: Point2,
    pub b: Point2,
    pub height: f64,
}

impl Wall {
    pub fn closest_point(&self, p: &Point2) -> Point2 {
        let ab = self.b - self.a;
        let len2 = ab.norm_squared();
        if len2 == 0.0 {
            return self.a;
        }
        let s = ((p - self.a).dot(&ab) / len2).clamp(0.0, 1.0);
        self.a + ab * s
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct World {
    pub walls: Vec<Wall>,
    pub goals: Vec<Point2>,
    pub limits: Vec<[f64; 2]>,
    pub waypoints: Vec<Point2>,
}

impl World {
    pub fn atrium() -> Self {
        World::parse(ATRIUM).expect("bundled world parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        World::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut world = World::default();
        let mut offset = 0u64;
        for line in text.split_inclusive('\n') {
            let here = offset;
            offset += line.len() as u64;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let mut fields = body.split_whitespace();
            let kind = fields.next().unwrap_or_default();
            let nums: Vec<f64> = fields
                .map(|f| f.parse::<f64>().map_err(|_| Error::format(here, format!("bad number {f:?}"))))
                .collect::<Result<_>>()?;
            if nums.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(here, "non-finite coordinate"));
            }
            let arity = |n: usize| -> Result<()> {
                if nums.len() == n {
                    Ok(())
                } else {
                    Err(Error::format(here, format!("{kind} takes {n} numbers, got {}", nums.len())))
                }
            };
            match kind {
                "wall" => {
                    arity(5)?;
                    if !(nums[4] > 0.0) {
                        return Err(Error::format(here, "wall height must be positive"));
                    }
                    world.walls.push(Wall {
                        a: Point2::new(nums[0], nums[1]),
                        b: Point2::new(nums[2], nums[3]),
                        height: nums[4],
                    });
                }
                "goal" => {
                    arity(2)?;
                    world.goals.push(Point2::new(nums[0], nums[1]));
                }
                "limit" => {
                    arity(2)?;
                    world.limits.push([nums[0], nums[1]]);
                }
                "waypoint" => {
                    arity(2)?;
                    world.waypoints.push(Point2::new(nums[0], nums[1]));
                }
                other => return Err(Error::format(here, format!("unknown primitive {other:?}"))),
            }
        }
        world.validate()?;
        Ok(world)
    }

    pub fn validate(&self) -> Result<()> {
        if self.limits.len() < 3 {
            return Err(Error::InvalidInput("world limits need at least three vertices".into()));
        }
        if let Some(g) = self.goals.iter().find(|g| !self.inside(g)) {
            return Err(Error::InvalidInput(format!("goal ({}, {}) lies outside the limits", g.x, g.y)));
        }
        if self.waypoints.len() < 2 {
            return Err(Error::InvalidInput("the robot route needs at least two waypoints".into()));
        }
        Ok(())
    }

    pub fn inside(&self, p: &Point2) -> bool {
        point_in_polygon(p.x, p.y, &self.limits)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for l in &self.limits {
            let _ = writeln!(out, "limit {} {}", l[0], l[1]);
        }
        for w in &self.walls {
            let _ = writeln!(out, "wall {} {} {} {} {}", w.a.x, w.a.y, w.b.x, w.b.y, w.height);
        }
        for g in &self.goals {
            let _ = writeln!(out, "goal {} {}", g.x, g.y);
        }
        for p in &self.waypoints {
            let _ = writeln!(out, "waypoint {} {}", p.x, p.y);
        }
        out
    }

    /// Axis-aligned bounds of the limits polygon.
    pub fn bounds(&self) -> (Point2, Point2) {
        let mut lo = Point2::repeat(f64::INFINITY);
        let mut hi = Point2::repeat(f64::NEG_INFINITY);
        for l in &self.limits {
            lo = lo.inf(&Point2::new(l[0], l[1]));
            hi = hi.sup(&Point2::new(l[0], l[1]));
        }
        (lo, hi)
    }

    /// Points along every wall at `step` spacing.
    pub fn wall_samples(&self, step: f64) -> Vec<Point2> {
        let mut out = Vec::new();
        for w in &self.walls {
            let n = (((w.b - w.a).norm() / step).ceil() as usize).max(1);
            for i in 0..=n {
                out.push(w.a + (w.b - w.a) * (i as f64 / n as f64));
            }
        }
        out
    }

    /// Distance from `p` to the nearest wall and the unit direction pointing
    /// away from it.
    pub fn nearest_wall(&self, p: &Point2) -> Option<(f64, Point2)> {
        self.walls
            .iter()
            .map(|w| {
                let c = w.closest_point(p);
                let d = (p - c).norm();
                (d, if d > 1e-12 { (p - c) / d } else { Point2::zeros() })
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}
