//! Exact radius and nearest-neighbour queries over a hashed uniform grid.

use rustc_hash::FxHashMap;

use crate::geom::Point3;

/// Points bucketed into cubic cells of side `cell`. Queries are exact: the
/// grid only prunes candidates.
#[derive(Debug, Clone)]
pub struct PointIndex {
    cell: f64,
    cells: FxHashMap<[i64; 3], Vec<u32>>,
    points: Vec<Point3>,
}

impl PointIndex {
    pub fn new(cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        PointIndex {
            cell,
            cells: FxHashMap::default(),
            points: Vec::new(),
        }
    }

    pub fn build(points: &[Point3], cell: f64) -> Self {
        let mut index = PointIndex::new(cell);
        for p in points {
            index.push(*p);
        }
        index
    }

    #[inline]
    fn key(&self, p: &Point3) -> [i64; 3] {
        [
            (p.x / self.cell).floor() as i64,
            (p.y / self.cell).floor() as i64,
            (p.z / self.cell).floor() as i64,
        ]
    }

    /// Appends a point; its id is the insertion order.
    pub fn push(&mut self, p: Point3) -> usize {
        let id = self.points.len();
        self.cells.entry(self.key(&p)).or_default().push(id as u32);
        self.points.push(p);
        id
    }

    /// Moves point `id` to a new position.
    pub fn relocate(&mut self, id: usize, p: Point3) {
        let old = self.key(&self.points[id]);
        let new = self.key(&p);
        if old != new {
            if let Some(ids) = self.cells.get_mut(&old) {
                ids.retain(|&i| i as usize != id);
            }
            self.cells.entry(new).or_default().push(id as u32);
        }
        self.points[id] = p;
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, id: usize) -> &Point3 {
        &self.points[id]
    }

    /// Calls `f(id, squared_distance)` for every point with `|p - q| <= r`.
    pub fn for_each_within(&self, q: &Point3, r: f64, mut f: impl FnMut(usize, f64)) {
        let r2 = r * r;
        let lo = self.key(&(q - Point3::repeat(r)));
        let hi = self.key(&(q + Point3::repeat(r)));
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    if let Some(ids) = self.cells.get(&[i, j, k]) {
                        for &id in ids {
                            let d2 = (self.points[id as usize] - q).norm_squared();
                            if d2 <= r2 {
                                f(id as usize, d2);
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn any_within(&self, q: &Point3, r: f64) -> bool {
        let r2 = r * r;
        let lo = self.key(&(q - Point3::repeat(r)));
        let hi = self.key(&(q + Point3::repeat(r)));
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    if let Some(ids) = self.cells.get(&[i, j, k]) {
                        if ids
                            .iter()
                            .any(|&id| (self.points[id as usize] - q).norm_squared() <= r2)
                        {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }

    /// Nearest point within `max_dist`, as `(id, distance)`. Ties resolve to the
    /// smallest id.
    pub fn nearest(&self, q: &Point3, max_dist: f64) -> Option<(usize, f64)> {
        let center = self.key(q);
        let mut best: Option<(usize, f64)> = None;
        let max_ring = (max_dist / self.cell).ceil() as i64 + 1;
        for ring in 0..=max_ring {
            for_each_shell_cell(center, ring, |key| {
                if let Some(ids) = self.cells.get(&key) {
                    for &id in ids {
                        let d2 = (self.points[id as usize] - q).norm_squared();
                        let better = match best {
                            None => true,
                            Some((bid, bd2)) => d2 < bd2 || (d2 == bd2 && (id as usize) < bid),
                        };
                        if better {
                            best = Some((id as usize, d2));
                        }
                    }
                }
            });
            // anything outside this shell is farther than ring * cell
            if let Some((_, d2)) = best {
                if d2.sqrt() <= ring as f64 * self.cell {
                    break;
                }
            }
        }
        best.map(|(id, d2)| (id, d2.sqrt()))
            .filter(|&(_, d)| d <= max_dist)
    }
}

fn for_each_shell_cell(c: [i64; 3], ring: i64, mut f: impl FnMut([i64; 3])) {
    if ring == 0 {
        f(c);
        return;
    }
    for i in -ring..=ring {
        for j in -ring..=ring {
            let on_face = i.abs() == ring || j.abs() == ring;
            if on_face {
                for k in -ring..=ring {
                    f([c[0] + i, c[1] + j, c[2] + k]);
                }
            } else {
                f([c[0] + i, c[1] + j, c[2] - ring]);
                f([c[0] + i, c[1] + j, c[2] + ring]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> Vec<Point3> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-extent..extent),
                    rng.gen_range(-extent..extent),
                    rng.gen_range(-extent..extent),
                )
            })
            .collect()
    }

    #[test]
    fn nearest_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = random_points(&mut rng, 2000, 5.0);
        let index = PointIndex::build(&pts, 0.3);
        for q in random_points(&mut rng, 300, 6.0) {
            let brute = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm()))
                .filter(|&(_, d)| d <= 2.0)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            let got = index.nearest(&q, 2.0);
            assert_eq!(got.map(|g| g.0), brute.map(|b| b.0));
        }
    }

    #[test]
    fn radius_queries_are_boundary_inclusive() {
        let pts = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.5, 0.0, 0.0)];
        let index = PointIndex::build(&pts, 0.5);
        assert!(index.any_within(&Vector3::new(1.0, 0.0, 0.0), 0.5));
        assert!(!index.any_within(&Vector3::new(1.0, 0.0, 0.0), 0.49));
        let mut found = Vec::new();
        index.for_each_within(&Vector3::zeros(), 0.5, |id, _| found.push(id));
        found.sort();
        assert_eq!(found, vec![0, 1]);
    }

    #[test]
    fn nearest_respects_max_distance() {
        let index = PointIndex::build(&[Vector3::new(3.0, 0.0, 0.0)], 0.25);
        assert!(index.nearest(&Vector3::zeros(), 2.0).is_none());
        assert_eq!(index.nearest(&Vector3::zeros(), 3.0).unwrap().0, 0);
    }
}
