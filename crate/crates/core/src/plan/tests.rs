use super::*;
use crate::annotate::{Sogm, SogmConfig, CH_DYNAMIC, CH_PERMANENT};
use crate::srm::{obstacle_srm, sogm_to_srm, Srm, SrmParams};
use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn robot(x: f64, y: f64, heading: f64, v: f64) -> RobotPose {
    RobotPose {
        x,
        y,
        heading,
        v,
        omega: 0.0,
        stamp: 0.0,
    }
}

fn empty_srm() -> Srm {
    sogm_to_srm(&Sogm::zeros(SogmConfig::default().geometry(Point2::zeros(), 0.0)), &SrmParams::default())
}

fn straight_band(len: f64) -> Band {
    init_band(&[Point2::zeros(), Point2::new(len, 0.0)], &robot(0.0, 0.0, 0.0, 1.0), &PlannerConfig::default()).unwrap()
}

fn min_clearance(band: &Band, c: Point2) -> f64 {
    band.poses.iter().map(|p| (p.position() - c).norm()).fold(f64::INFINITY, f64::min)
}

#[test]
fn band_over_a_straight_path() {
    let band = straight_band(2.0);
    let span = band.poses.last().unwrap().stamp - band.poses[0].stamp;
    assert!(span <= 2.0 + 1e-9);
    assert!(band.poses.windows(2).all(|w| w[1].stamp > w[0].stamp));
    assert!(band
        .poses
        .windows(2)
        .all(|w| (w[1].position() - w[0].position()).norm() <= 0.5 + 1e-12));
    assert_eq!(band.poses[0].position(), Point2::zeros());
    assert_eq!(band.poses.last().unwrap().position(), Point2::new(2.0, 0.0));
}

#[test]
fn band_is_cut_at_the_horizon() {
    let band = straight_band(10.0);
    let last = band.poses.last().unwrap();
    assert_abs_diff_eq!(last.x, 4.0, epsilon = 1e-9);
    assert!(last.stamp <= 4.0 + 1e-9);
}

#[test]
fn zero_length_path_gives_two_poses() {
    let cfg = PlannerConfig::default();
    let band = init_band(&[Point2::new(1.0, 1.0)], &robot(1.0, 1.0, 0.3, 0.0), &cfg).unwrap();
    assert_eq!(band.poses.len(), 2);
    assert!(band.poses[1].stamp > band.poses[0].stamp);
    assert!(init_band(&[], &robot(0.0, 0.0, 0.0, 0.0), &cfg).is_err());
}

#[test]
fn spacing_stays_within_bounds_at_speed() {
    let cfg = PlannerConfig::default();
    let path = [Point2::zeros(), Point2::new(2.0, 1.0), Point2::new(2.0, 5.0)];
    for v in [0.0, 0.5, 1.0, 3.0] {
        let band = init_band(&path, &robot(0.0, 0.0, 0.0, v), &cfg).unwrap();
        for w in band.poses.windows(2) {
            let d = (w[1].position() - w[0].position()).norm();
            assert!(d <= 0.5 + 1e-9, "{v} {d}");
        }
    }
}

fn two_pose_band(dx: f64, dh: f64, dt: f64) -> Band {
    let poses = vec![
        TimedPose2D {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
            stamp: 0.0,
        },
        TimedPose2D {
            x: dx,
            y: 0.0,
            heading: dh,
            stamp: dt,
        },
    ];
    Band {
        anchors: poses.iter().map(|p| p.position()).collect(),
        poses,
        goal: (dx, 0.0, dh),
        start_speed: 0.0,
    }
}

#[test]
fn control_from_the_first_segment() {
    let cfg = PlannerConfig::default();
    let c = extract_control(&two_pose_band(0.5, 0.0, 0.5), &cfg).unwrap();
    assert_abs_diff_eq!(c.v, 1.0, epsilon = 1e-12);
    assert_eq!(c.omega, 0.0);
    let c = extract_control(&two_pose_band(3.0, 0.0, 0.5), &cfg).unwrap();
    assert_eq!(c.v, cfg.v_max);
    let c = extract_control(&two_pose_band(0.0, 0.5, 0.5), &cfg).unwrap();
    assert_eq!(c.v, 0.0);
    assert_abs_diff_eq!(c.omega, 1.0, epsilon = 1e-12);
    let c = extract_control(&two_pose_band(0.5, 0.0, 0.0), &cfg).unwrap();
    assert!(c.degenerate);
    assert_eq!((c.v, c.omega), (0.0, 0.0));
}

fn open_map(w: usize, h: usize) -> Vec<f64> {
    vec![0.0; w * h]
}

#[test]
fn empty_map_gives_a_straight_segment() {
    let map = Costmap::from_costs([0.0, 0.0], 0.1, 50, 50, open_map(50, 50)).unwrap();
    let cfg = PlannerConfig::default();
    let path = global_plan(&map, Point2::new(0.25, 0.35), Point2::new(4.1, 3.2), &cfg).unwrap();
    assert_eq!(path, vec![Point2::new(0.25, 0.35), Point2::new(4.1, 3.2)]);
}

/// Relaxes every edge until nothing changes.
fn brute_force_cost(map: &Costmap, start: (usize, usize), goal: (usize, usize), w_cost: f64) -> f64 {
    let mut dist = vec![f64::INFINITY; map.w * map.h];
    dist[start.0 * map.w + start.1] = 0.0;
    loop {
        let mut changed = false;
        for r in 0..map.h {
            for c in 0..map.w {
                let d = dist[r * map.w + c];
                if !d.is_finite() {
                    continue;
                }
                for (dr, dc) in [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)] {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= map.h as isize || nc >= map.w as isize {
                        continue;
                    }
                    let (nr, nc) = (nr as usize, nc as usize);
                    if map.is_lethal(nr, nc) {
                        continue;
                    }
                    if dr != 0 && dc != 0 && (map.is_lethal(r, nc) || map.is_lethal(nr, c)) {
                        continue;
                    }
                    let len = ((dr * dr + dc * dc) as f64).sqrt() * map.dl;
                    let cand = d + len * (1.0 + w_cost * 0.5 * (map.cost(r, c) + map.cost(nr, nc)));
                    if cand < dist[nr * map.w + nc] - 1e-12 {
                        dist[nr * map.w + nc] = cand;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return dist[goal.0 * map.w + goal.1];
        }
    }
}

fn wall_with_gap(gap_row: usize) -> Costmap {
    let (w, h) = (40, 40);
    let mut cost = open_map(w, h);
    for r in 0..h {
        if r.abs_diff(gap_row) > 1 {
            cost[r * w + 20] = 1.0;
        }
    }
    // soft cost around the wall
    for r in 0..h {
        for c in [19, 21] {
            if cost[r * w + c] < 1.0 {
                cost[r * w + c] = 0.5;
            }
        }
    }
    Costmap::from_costs([0.0, 0.0], 0.1, w, h, cost).unwrap()
}

#[test]
fn path_goes_through_the_gap() {
    let cfg = PlannerConfig::default();
    for gap in [5usize, 20, 33] {
        let map = wall_with_gap(gap);
        let (start, goal) = ((20, 5), (10, 35));
        let (cells, cost) = grid_search(&map, start, goal, cfg.w_global_cost).unwrap();
        assert_abs_diff_eq!(cost, brute_force_cost(&map, start, goal, cfg.w_global_cost), epsilon = 1e-9);
        assert!(cells.iter().any(|&(r, c)| c == 20 && r.abs_diff(gap) <= 1));
        let path = global_plan(&map, map.cell_center(start.0, start.1), map.cell_center(goal.0, goal.1), &cfg).unwrap();
        // every sampled point of the smoothed path is off the wall
        for s in path.windows(2) {
            for k in 0..=100 {
                let p = s[0] + (s[1] - s[0]) * (k as f64 / 100.0);
                let (r, c) = map.cell_of(&p).unwrap();
                assert!(!map.is_lethal(r, c));
            }
        }
        let crossing = path.windows(2).any(|s| {
            let (a, b) = (s[0], s[1]);
            (a.x - 2.05) * (b.x - 2.05) <= 0.0 && {
                let y = a.y + (b.y - a.y) * (2.05 - a.x) / (b.x - a.x);
                (y - (gap as f64 + 0.5) * 0.1).abs() <= 0.15
            }
        });
        assert!(crossing, "{path:?}");
    }
}

#[test]
fn random_maps_match_the_brute_force_cost() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let (w, h) = (rng.gen_range(5..25), rng.gen_range(5..25));
        let cost: Vec<f64> = (0..w * h)
            .map(|_| if rng.gen_bool(0.25) { 1.0 } else { rng.gen_range(0.0..0.99) })
            .collect();
        let mut map = Costmap::from_costs([0.0, 0.0], 0.1, w, h, cost).unwrap();
        let start = (0, 0);
        let goal = (h - 1, w - 1);
        let mut c: Vec<f64> = (0..w * h).map(|i| map.cost(i / w, i % w)).collect();
        c[0] = 0.0;
        c[w * h - 1] = 0.0;
        map = Costmap::from_costs([0.0, 0.0], 0.1, w, h, c).unwrap();
        let want = brute_force_cost(&map, start, goal, 4.0);
        match grid_search(&map, start, goal, 4.0) {
            Ok((_, got)) => assert_abs_diff_eq!(got, want, epsilon = 1e-9),
            Err(Error::Unreachable) => assert!(want.is_infinite()),
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn blocked_goal_is_unreachable() {
    let mut cost = open_map(20, 20);
    cost[10 * 20 + 10] = 1.0;
    let map = Costmap::from_costs([0.0, 0.0], 0.1, 20, 20, cost).unwrap();
    let err = global_plan(&map, Point2::new(0.05, 0.05), Point2::new(1.05, 1.05), &PlannerConfig::default());
    assert!(matches!(err, Err(Error::Unreachable)));
}

#[test]
fn obstacles_inflate_the_costmap() {
    let map = Costmap::from_obstacles(&[Point2::new(1.0, 1.0)], Point2::zeros(), Point2::new(2.0, 2.0), 0.1, 0.3, 0.5);
    assert!(map.is_lethal(10, 10));
    assert_eq!(map.cost(0, 0), 0.0);
    let c = map.cell_center(10, 15);
    let d = (c - Point2::new(1.0, 1.0)).norm();
    assert_abs_diff_eq!(map.cost(10, 15), 1.0 - (d - 0.3) / 0.5, epsilon = 1e-12);
}

#[test]
fn zero_risk_straight_band_is_optimal() {
    let band = straight_band(3.0);
    let out = optimize_band(&band, &empty_srm(), &PlannerConfig::default()).unwrap();
    for (a, b) in out.poses.iter().zip(&band.poses) {
        assert_abs_diff_eq!(a.x, b.x, epsilon = 1e-6);
        assert_abs_diff_eq!(a.y, b.y, epsilon = 1e-6);
        assert_abs_diff_eq!(a.heading, b.heading, epsilon = 1e-6);
        assert_abs_diff_eq!(a.stamp, b.stamp, epsilon = 1e-6);
    }
}

#[test]
fn band_moves_away_from_a_static_cone() {
    let g = SogmConfig::default().geometry(Point2::zeros(), 0.0);
    let mut sogm = Sogm::zeros(g);
    let c = Point2::new(1.5, 0.0);
    sogm.mark_all_layers(&c, CH_PERMANENT);
    let srm = sogm_to_srm(&sogm, &SrmParams::default());
    let (row, col) = g.cell_of(&c).unwrap();
    let center = g.cell_center(row, col);
    let cfg = PlannerConfig::default();
    let band = straight_band(3.0);
    let out = optimize_band(&band, &srm, &cfg).unwrap();
    assert!(band_cost(&out, &srm, &cfg) <= band_cost(&band, &srm, &cfg));
    assert!(min_clearance(&out, center) > min_clearance(&band, center) + 1e-3);
}

#[test]
fn dynamic_risk_past_the_horizon_is_ignored() {
    // grid referenced 3.9 s in the past: only its last layer is live
    let g = SogmConfig::default().geometry(Point2::zeros(), -3.9);
    let mut sogm = Sogm::zeros(g);
    for k in 0..g.n_t - 1 {
        sogm.mark_disc(k, &Point2::new(2.0, 0.0), 0.4, CH_DYNAMIC);
    }
    let srm = sogm_to_srm(&sogm, &SrmParams::default());
    let band = straight_band(3.0);
    // late poses sit exactly where the risk would be
    assert!(band.poses.iter().any(|p| (p.position() - Point2::new(2.0, 0.0)).norm() < 0.2 && p.stamp > 0.15));
    let out = optimize_band(&band, &srm, &PlannerConfig::default()).unwrap();
    for (a, b) in out.poses.iter().zip(&band.poses) {
        assert_abs_diff_eq!(a.x, b.x, epsilon = 1e-6);
        assert_abs_diff_eq!(a.y, b.y, epsilon = 1e-6);
    }
}

#[test]
fn nonfinite_risk_is_an_optimization_error() {
    let srm = empty_srm();
    let g = srm.geometry;
    let mut stat = srm.static_layer().to_vec();
    stat.iter_mut().for_each(|v| *v = f64::NAN);
    let dynamic = (0..g.n_t).flat_map(|k| srm.dynamic_layer(k).to_vec()).collect();
    let bad = Srm::from_layers(g, stat, dynamic).unwrap();
    assert!(matches!(optimize_band(&straight_band(2.0), &bad, &PlannerConfig::default()), Err(Error::Optimization(_))));
}

#[test]
fn costmap_fallback_gives_bounded_commands() {
    let g = SogmConfig::default().geometry(Point2::zeros(), 0.0);
    let walls: Vec<Point2> = (0..60).map(|i| Point2::new(-3.0 + i as f64 * 0.1, 1.0)).collect();
    let people = [Point2::new(1.0, 0.1), Point2::new(1.1, -0.1)];
    let srm = obstacle_srm(g, &walls, &people, &SrmParams::default());
    let cfg = PlannerConfig::default();
    for v in [0.0, 0.5, 1.0] {
        let band = init_band(&[Point2::zeros(), Point2::new(4.0, 0.0)], &robot(0.0, 0.0, 0.0, v), &cfg).unwrap();
        let out = optimize_band(&band, &srm, &cfg).unwrap();
        let cmd = extract_control(&out, &cfg).unwrap();
        assert!(cmd.v.abs() <= cfg.v_max && cmd.omega.abs() <= cfg.omega_max);
        assert!(cmd.v.is_finite() && cmd.omega.is_finite());
    }
}

/// Random risk scene around a random band.
pub(crate) fn random_scene(seed: u64) -> (Band, Srm) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let g = SogmConfig::default().geometry(Point2::zeros(), 0.0);
    let mut sogm = Sogm::zeros(g);
    for _ in 0..rng.gen_range(1..6) {
        let p = Point2::new(rng.gen_range(-1.0..4.0), rng.gen_range(-2.0..2.0));
        sogm.mark_all_layers(&p, CH_PERMANENT);
    }
    for _ in 0..rng.gen_range(0..4) {
        let p = Point2::new(rng.gen_range(-1.0..4.0), rng.gen_range(-2.0..2.0));
        let v = Point2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        for k in 0..g.n_t {
            sogm.mark_disc(k, &(p + v * (k as f64 * g.dt)), 0.3, CH_DYNAMIC);
        }
    }
    let srm = sogm_to_srm(&sogm, &SrmParams::default());
    let cfg = PlannerConfig::default();
    let mut path = vec![Point2::zeros()];
    for _ in 0..3 {
        let last = *path.last().unwrap();
        path.push(last + Point2::new(rng.gen_range(0.3..1.5), rng.gen_range(-0.8..0.8)));
    }
    let state = robot(0.0, 0.0, rng.gen_range(-0.5..0.5), rng.gen_range(0.0..1.2));
    let mut band = init_band(&path, &state, &cfg).unwrap();
    // perturb so every cost term is active
    for p in band.poses.iter_mut().skip(1) {
        p.x += rng.gen_range(-0.1..0.1);
        p.y += rng.gen_range(-0.1..0.1);
        p.heading += rng.gen_range(-0.6..0.6);
    }
    let mut stamp = 0.0;
    for p in band.poses.iter_mut().skip(1) {
        stamp += rng.gen_range(0.05..0.4);
        p.stamp = stamp;
    }
    (band, srm)
}

fn fd_gradient(band: &Band, srm: &Srm, cfg: &PlannerConfig) -> Vec<f64> {
    let vars = BandVariables::from_band(band);
    let h = 1e-6;
    (0..vars.values.len())
        .map(|k| {
            let mut plus = vars.clone();
            plus.values[k] += h;
            let mut minus = vars.clone();
            minus.values[k] -= h;
            (band_cost(&plus.to_band(band), srm, cfg) - band_cost(&minus.to_band(band), srm, cfg)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let cfg = PlannerConfig::default();
    for seed in 0..30 {
        let (band, srm) = random_scene(seed);
        let (_, grad) = band_cost_gradient(&band, &srm, &cfg);
        let fd = fd_gradient(&band, &srm, &cfg);
        for (k, (a, b)) in grad.iter().zip(&fd).enumerate() {
            assert!((a - b).abs() <= 1e-4 * a.abs().max(1.0), "seed {seed} var {k}: {a} vs {b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn optimization_never_increases_cost(seed in 0u64..10_000) {
        let cfg = PlannerConfig::default();
        let (band, srm) = random_scene(seed);
        let before = band_cost(&band, &srm, &cfg);
        let out = optimize_band(&band, &srm, &cfg).unwrap();
        prop_assert!(band_cost(&out, &srm, &cfg) <= before);
        prop_assert_eq!(out.poses[0], band.poses[0]);
        prop_assert!(out.poses.windows(2).all(|w| w[1].stamp - w[0].stamp >= cfg.min_dt - 1e-12));
    }
}
