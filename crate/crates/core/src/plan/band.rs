use super::{Band, PlannerConfig, TimedPose2D};
use crate::geom::wrap_angle;
use crate::srm::Srm;
use crate::{Error, Result};

/// Free variables of a band: `(x, y, heading)` of every pose after the first,
/// followed by the time intervals between consecutive poses.
#[derive(Debug, Clone, PartialEq)]
pub struct BandVariables {
    pub values: Vec<f64>,
    n: usize,
}

impl BandVariables {
    pub fn from_band(band: &Band) -> Self {
        let n = band.poses.len();
        let mut values = Vec::with_capacity(4 * (n - 1));
        for p in &band.poses[1..] {
            values.extend_from_slice(&[p.x, p.y, p.heading]);
        }
        for w in band.poses.windows(2) {
            values.push(w[1].stamp - w[0].stamp);
        }
        BandVariables { values, n }
    }

    fn pose(&self, band: &Band, i: usize) -> (f64, f64, f64) {
        if i == 0 {
            let p = band.poses[0];
            (p.x, p.y, p.heading)
        } else {
            let k = 3 * (i - 1);
            (self.values[k], self.values[k + 1], self.values[k + 2])
        }
    }

    fn dt(&self, j: usize) -> f64 {
        self.values[3 * (self.n - 1) + j]
    }

    fn dt_index(&self, j: usize) -> usize {
        3 * (self.n - 1) + j
    }

    pub fn to_band(&self, template: &Band) -> Band {
        let mut out = template.clone();
        let mut stamp = template.poses[0].stamp;
        for i in 1..self.n {
            let (x, y, heading) = self.pose(template, i);
            stamp += self.dt(i - 1);
            out.poses[i] = TimedPose2D { x, y, heading, stamp };
        }
        out
    }
}

#[inline]
fn hinge(x: f64) -> f64 {
    x.max(0.0)
}

/// Total cost and, when asked, its gradient with respect to the variables.
fn evaluate(band: &Band, vars: &BandVariables, srm: &Srm, cfg: &PlannerConfig, mut grad: Option<&mut [f64]>) -> f64 {
    let n = vars.n;
    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }
    let mut cost = 0.0;
    let add = |grad: &mut Option<&mut [f64]>, idx: Option<usize>, v: f64| {
        if let (Some(g), Some(i)) = (grad.as_deref_mut(), idx) {
            g[i] += v;
        }
    };
    let xi = |i: usize| (i > 0).then(|| 3 * (i - 1));
    let yi = |i: usize| (i > 0).then(|| 3 * (i - 1) + 1);
    let ti = |i: usize| (i > 0).then(|| 3 * (i - 1) + 2);

    // risk and path adherence
    let mut stamp = band.poses[0].stamp;
    for i in 1..n {
        stamp += vars.dt(i - 1);
        let (x, y, _) = vars.pose(band, i);
        let s = srm.sample(x, y, stamp);
        cost += cfg.w_static * s.static_value + cfg.w_dynamic * s.dynamic_value;
        let gx = cfg.w_static * s.static_grad.x + cfg.w_dynamic * s.dynamic_grad.x;
        let gy = cfg.w_static * s.static_grad.y + cfg.w_dynamic * s.dynamic_grad.y;
        let a = band.anchors[i];
        let (dx, dy) = (x - a.x, y - a.y);
        cost += cfg.w_path * (dx * dx + dy * dy);
        add(&mut grad, xi(i), gx + 2.0 * cfg.w_path * dx);
        add(&mut grad, yi(i), gy + 2.0 * cfg.w_path * dy);
    }

    // per-segment speed, partials of speed w.r.t. (end - start) and dt
    let mut speeds = Vec::with_capacity(n - 1);
    let mut dv_dd = Vec::with_capacity(n - 1);
    for j in 0..n - 1 {
        let (x0, y0, h0) = vars.pose(band, j);
        let (x1, y1, h1) = vars.pose(band, j + 1);
        let dt = vars.dt(j);
        let (dx, dy) = (x1 - x0, y1 - y0);
        let len = (dx * dx + dy * dy).sqrt();
        let v = len / dt;
        speeds.push(v);
        dv_dd.push(if len > 1e-12 { (dx / (len * dt), dy / (len * dt)) } else { (0.0, 0.0) });

        // speed limit
        let excess = hinge(v - cfg.v_max);
        if excess > 0.0 {
            cost += cfg.w_velocity * excess * excess;
            let c = 2.0 * cfg.w_velocity * excess;
            let (ddx, ddy) = dv_dd[j];
            add(&mut grad, xi(j + 1), c * ddx);
            add(&mut grad, yi(j + 1), c * ddy);
            add(&mut grad, xi(j), -c * ddx);
            add(&mut grad, yi(j), -c * ddy);
            add(&mut grad, Some(vars.dt_index(j)), -c * v / dt);
        }

        // turn rate limit
        let omega = wrap_angle(h1 - h0) / dt;
        let excess = hinge(omega.abs() - cfg.omega_max);
        if excess > 0.0 {
            cost += cfg.w_velocity * excess * excess;
            let c = 2.0 * cfg.w_velocity * excess * omega.signum();
            add(&mut grad, ti(j + 1), c / dt);
            add(&mut grad, ti(j), -c / dt);
            add(&mut grad, Some(vars.dt_index(j)), -c * omega / dt);
        }

        // lateral motion relative to the mean heading
        let (hx, hy) = (0.5 * (h0.cos() + h1.cos()), 0.5 * (h0.sin() + h1.sin()));
        let cross = hx * dy - hy * dx;
        let lat = cross / dt;
        if cfg.w_nonholonomic > 0.0 && lat != 0.0 {
            cost += cfg.w_nonholonomic * lat * lat;
            let c = 2.0 * cfg.w_nonholonomic * lat / dt;
            add(&mut grad, xi(j + 1), c * -hy);
            add(&mut grad, yi(j + 1), c * hx);
            add(&mut grad, xi(j), c * hy);
            add(&mut grad, yi(j), -c * hx);
            add(&mut grad, ti(j), c * 0.5 * (-h0.sin() * dy - h0.cos() * dx));
            add(&mut grad, ti(j + 1), c * 0.5 * (-h1.sin() * dy - h1.cos() * dx));
            add(&mut grad, Some(vars.dt_index(j)), -c * lat);
        }

        // slower than the cruise speed
        let slack = hinge(dt - len / cfg.v_max);
        if slack > 0.0 {
            cost += cfg.w_time * slack * slack;
            let c = 2.0 * cfg.w_time * slack;
            add(&mut grad, Some(vars.dt_index(j)), c);
            let (ddx, ddy) = dv_dd[j];
            // d(len)/d(end) = dv_dd * dt
            add(&mut grad, xi(j + 1), -c * ddx * dt / cfg.v_max);
            add(&mut grad, yi(j + 1), -c * ddy * dt / cfg.v_max);
            add(&mut grad, xi(j), c * ddx * dt / cfg.v_max);
            add(&mut grad, yi(j), c * ddy * dt / cfg.v_max);
        }
    }

    // acceleration between consecutive segments, the first against the
    // robot's current speed
    for j in 0..n - 1 {
        let (prev, tau) = if j == 0 {
            (band.start_speed, vars.dt(0))
        } else {
            (speeds[j - 1], 0.5 * (vars.dt(j - 1) + vars.dt(j)))
        };
        let acc = (speeds[j] - prev) / tau;
        let excess = hinge(acc.abs() - cfg.a_max);
        if excess == 0.0 {
            continue;
        }
        cost += cfg.w_acceleration * excess * excess;
        let c = 2.0 * cfg.w_acceleration * excess * acc.signum();
        let push_speed = |grad: &mut Option<&mut [f64]>, k: usize, scale: f64| {
            let (ddx, ddy) = dv_dd[k];
            let dt = vars.dt(k);
            add(grad, xi(k + 1), scale * ddx);
            add(grad, yi(k + 1), scale * ddy);
            add(grad, xi(k), -scale * ddx);
            add(grad, yi(k), -scale * ddy);
            add(grad, Some(vars.dt_index(k)), -scale * speeds[k] / dt);
        };
        push_speed(&mut grad, j, c / tau);
        let dtau = -c * acc / tau;
        if j == 0 {
            add(&mut grad, Some(vars.dt_index(0)), dtau);
        } else {
            push_speed(&mut grad, j - 1, -c / tau);
            add(&mut grad, Some(vars.dt_index(j - 1)), 0.5 * dtau);
            add(&mut grad, Some(vars.dt_index(j)), 0.5 * dtau);
        }
    }
    cost
}

/// Total band cost under `srm`.
pub fn band_cost(band: &Band, srm: &Srm, cfg: &PlannerConfig) -> f64 {
    evaluate(band, &BandVariables::from_band(band), srm, cfg, None)
}

/// Total band cost and its analytic gradient in [`BandVariables`] order.
pub fn band_cost_gradient(band: &Band, srm: &Srm, cfg: &PlannerConfig) -> (f64, Vec<f64>) {
    let vars = BandVariables::from_band(band);
    let mut grad = vec![0.0; vars.values.len()];
    let cost = evaluate(band, &vars, srm, cfg, Some(&mut grad));
    (cost, grad)
}

/// Projected gradient descent with Armijo backtracking. The first pose stays
/// fixed, intervals stay above `min_dt`, and the returned band never costs
/// more than the input.
pub fn optimize_band(band: &Band, srm: &Srm, cfg: &PlannerConfig) -> Result<Band> {
    band.validate()?;
    let mut vars = BandVariables::from_band(band);
    let m = vars.values.len();
    let dt_start = vars.dt_index(0);
    let project = |v: &mut [f64]| {
        for x in &mut v[dt_start..] {
            *x = x.max(cfg.min_dt);
        }
    };
    project(&mut vars.values);
    let mut grad = vec![0.0; m];
    let mut cost = evaluate(band, &vars, srm, cfg, Some(&mut grad));
    if !cost.is_finite() {
        return Err(Error::Optimization("non-finite band cost".into()));
    }
    let initial = band_cost(band, srm, cfg);
    let mut step = cfg.step;
    let mut trial = vars.clone();
    let mut trial_grad = vec![0.0; m];
    for _ in 0..cfg.iterations {
        let mut accepted = false;
        for _ in 0..30 {
            for k in 0..m {
                trial.values[k] = vars.values[k] - step * grad[k];
            }
            project(&mut trial.values);
            let moved: f64 = trial
                .values
                .iter()
                .zip(&vars.values)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if moved == 0.0 {
                break;
            }
            let c = evaluate(band, &trial, srm, cfg, Some(&mut trial_grad));
            if !c.is_finite() {
                return Err(Error::Optimization("non-finite band cost".into()));
            }
            if c <= cost - 1e-4 * moved / step {
                std::mem::swap(&mut vars, &mut trial);
                std::mem::swap(&mut grad, &mut trial_grad);
                cost = c;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        step = (step * 2.0).min(cfg.step * 8.0);
    }
    let out = vars.to_band(band);
    if band_cost(&out, srm, cfg) > initial {
        return Ok(band.clone());
    }
    Ok(out)
}
