use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::PlannerConfig;
use crate::geom::Point2;
use crate::{Error, Result};

/// Static cost grid for the global search. Costs lie in `[0, 1]`; a cost of
/// exactly 1 marks a lethal cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Costmap {
    pub origin: [f64; 2],
    pub dl: f64,
    pub w: usize,
    pub h: usize,
    cost: Vec<f64>,
}

impl Costmap {
    pub fn from_costs(origin: [f64; 2], dl: f64, w: usize, h: usize, cost: Vec<f64>) -> Result<Self> {
        if cost.len() != w * h || w == 0 || h == 0 || !(dl > 0.0) {
            return Err(Error::InvalidInput("costmap size mismatch".into()));
        }
        if cost.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidInput("costmap values must lie in [0, 1]".into()));
        }
        Ok(Costmap { origin, dl, w, h, cost })
    }

    /// Rasterizes obstacle points over `[lo, hi]`: cells closer than
    /// `robot_radius` to an obstacle are lethal, cost then decays linearly to
    /// zero over `inflation`.
    pub fn from_obstacles(points: &[Point2], lo: Point2, hi: Point2, dl: f64, robot_radius: f64, inflation: f64) -> Self {
        let w = (((hi.x - lo.x) / dl).ceil() as usize).max(1);
        let h = (((hi.y - lo.y) / dl).ceil() as usize).max(1);
        let mut map = Costmap {
            origin: [lo.x, lo.y],
            dl,
            w,
            h,
            cost: vec![0.0; w * h],
        };
        let reach = robot_radius + inflation;
        let cells = (reach / dl).ceil() as isize + 1;
        for p in points {
            let col = ((p.x - lo.x) / dl).floor() as isize;
            let row = ((p.y - lo.y) / dl).floor() as isize;
            for r in (row - cells).max(0)..=(row + cells).min(h as isize - 1) {
                for c in (col - cells).max(0)..=(col + cells).min(w as isize - 1) {
                    let d = (map.cell_center(r as usize, c as usize) - p).norm();
                    let v = if d < robot_radius {
                        1.0
                    } else if inflation > 0.0 {
                        (1.0 - (d - robot_radius) / inflation).clamp(0.0, 1.0 - 1e-9)
                    } else {
                        0.0
                    };
                    let slot = &mut map.cost[r as usize * w + c as usize];
                    if v > *slot {
                        *slot = v;
                    }
                }
            }
        }
        map
    }

    pub fn cost(&self, row: usize, col: usize) -> f64 {
        self.cost[row * self.w + col]
    }

    pub fn is_lethal(&self, row: usize, col: usize) -> bool {
        self.cost(row, col) >= 1.0
    }

    pub fn cell_of(&self, p: &Point2) -> Option<(usize, usize)> {
        let col = ((p.x - self.origin[0]) / self.dl).floor();
        let row = ((p.y - self.origin[1]) / self.dl).floor();
        (col >= 0.0 && row >= 0.0 && (col as usize) < self.w && (row as usize) < self.h)
            .then_some((row as usize, col as usize))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Point2 {
        Point2::new(
            self.origin[0] + (col as f64 + 0.5) * self.dl,
            self.origin[1] + (row as f64 + 0.5) * self.dl,
        )
    }

    /// Cost of moving between two neighbouring cells, `None` if blocked.
    pub fn edge_cost(&self, a: (usize, usize), b: (usize, usize), w_cost: f64) -> Option<f64> {
        if self.is_lethal(b.0, b.1) {
            return None;
        }
        let diagonal = a.0 != b.0 && a.1 != b.1;
        if diagonal && (self.is_lethal(a.0, b.1) || self.is_lethal(b.0, a.1)) {
            return None;
        }
        let len = if diagonal { std::f64::consts::SQRT_2 } else { 1.0 } * self.dl;
        Some(len * (1.0 + w_cost * 0.5 * (self.cost(a.0, a.1) + self.cost(b.0, b.1))))
    }
}

#[derive(PartialEq)]
struct Open {
    f: f64,
    order: u64,
    cell: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then(other.order.cmp(&self.order))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// 8-connected A* between two cells. Returns the cell sequence and its cost.
pub fn grid_search(map: &Costmap, start: (usize, usize), goal: (usize, usize), w_cost: f64) -> Result<(Vec<(usize, usize)>, f64)> {
    if map.is_lethal(goal.0, goal.1) {
        return Err(Error::Unreachable);
    }
    let idx = |c: (usize, usize)| c.0 * map.w + c.1;
    let heuristic = |c: (usize, usize)| {
        let dr = c.0.abs_diff(goal.0) as f64;
        let dc = c.1.abs_diff(goal.1) as f64;
        (dr.max(dc) - dr.min(dc) + std::f64::consts::SQRT_2 * dr.min(dc)) * map.dl
    };
    let n = map.w * map.h;
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut order = 0u64;
    g[idx(start)] = 0.0;
    heap.push(Open {
        f: heuristic(start),
        order,
        cell: idx(start),
    });
    while let Some(Open { cell, .. }) = heap.pop() {
        if closed[cell] {
            continue;
        }
        closed[cell] = true;
        let here = (cell / map.w, cell % map.w);
        if here == goal {
            let mut path = vec![goal];
            let mut c = cell;
            while parent[c] != usize::MAX {
                c = parent[c];
                path.push((c / map.w, c % map.w));
            }
            path.reverse();
            return Ok((path, g[cell]));
        }
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (r, c) = (here.0 as isize + dr, here.1 as isize + dc);
                if r < 0 || c < 0 || r >= map.h as isize || c >= map.w as isize {
                    continue;
                }
                let next = (r as usize, c as usize);
                let Some(step) = map.edge_cost(here, next, w_cost) else {
                    continue;
                };
                let cand = g[cell] + step;
                let j = idx(next);
                if cand < g[j] {
                    g[j] = cand;
                    parent[j] = cell;
                    order += 1;
                    heap.push(Open {
                        f: cand + heuristic(next),
                        order,
                        cell: j,
                    });
                }
            }
        }
    }
    Err(Error::Unreachable)
}

/// Cells crossed by the segment, sampled at a quarter cell.
fn segment_cells(map: &Costmap, a: Point2, b: Point2) -> Vec<(usize, usize)> {
    let steps = (((b - a).norm() / (0.25 * map.dl)).ceil() as usize).max(1);
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let p = a + (b - a) * (i as f64 / steps as f64);
        if let Some(c) = map.cell_of(&p) {
            if out.last() != Some(&c) {
                out.push(c);
            }
        }
    }
    out
}

/// Shortest path from `start` to `goal` through the static costmap, with
/// line-of-sight shortcuts that never cross a cell costlier than the part of
/// the path they replace.
pub fn global_plan(map: &Costmap, start: Point2, goal: Point2, cfg: &PlannerConfig) -> Result<Vec<Point2>> {
    let s = map.cell_of(&start).ok_or(Error::Unreachable)?;
    let g = map.cell_of(&goal).ok_or(Error::Unreachable)?;
    let (cells, _) = grid_search(map, s, g, cfg.w_global_cost)?;
    let mut pts: Vec<Point2> = cells.iter().map(|&(r, c)| map.cell_center(r, c)).collect();
    pts[0] = start;
    *pts.last_mut().unwrap() = goal;

    let mut out = vec![start];
    let mut i = 0;
    while i + 1 < pts.len() {
        let mut best = i + 1;
        let mut worst = map.cost(cells[i].0, cells[i].1).max(map.cost(cells[i + 1].0, cells[i + 1].1));
        for j in i + 2..pts.len() {
            worst = worst.max(map.cost(cells[j].0, cells[j].1));
            let clear = segment_cells(map, pts[i], pts[j])
                .iter()
                .all(|&(r, c)| !map.is_lethal(r, c) && map.cost(r, c) <= worst + 1e-12);
            if !clear {
                break;
            }
            best = j;
        }
        out.push(pts[best]);
        i = best;
    }
    Ok(out)
}
