//! Spatiotemporal risk maps.
//!
//! Occupied cells above `tau_risk` become risk sources. Each source spreads a
//! cone `max(0, 1 - d / d0)` in space (and `max(0, 1 - |dt| / delta0)` in
//! time for the dynamic layers). Cones are combined as a normalized sum of
//! their `p`-th powers followed by a `1/p` root, so that a lone source keeps
//! its exact linear cone and overlapping sources tend to their maximum as `p`
//! grows.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::annotate::{read_grid, write_grid, GridGeometry, Sogm, CH_DYNAMIC, CH_MOVABLE, CH_PERMANENT};
use crate::geom::Point2;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrmParams {
    pub tau_risk: f64,
    pub p: f64,
    /// Temporal influence range (s). Setting it to the layer step turns
    /// temporal diffusion off.
    pub delta0: f64,
    /// Spatial influence range of dynamic risk (m).
    pub d0_dyn: f64,
    /// Spatial influence range of static risk (m).
    pub d0_sta: f64,
}

impl Default for SrmParams {
    fn default() -> Self {
        SrmParams {
            tau_risk: 0.4,
            p: 3.0,
            delta0: 1.0,
            d0_dyn: 1.2,
            d0_sta: 0.9,
        }
    }
}

impl SrmParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.p > 0.0 && self.delta0 > 0.0 && self.d0_dyn > 0.0 && self.d0_sta > 0.0;
        if ok && (0.0..=1.0).contains(&self.tau_risk) {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid risk parameters {self:?}")))
        }
    }
}

/// Risk grids: one static layer and `n_t` dynamic layers, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Srm {
    pub geometry: GridGeometry,
    static_layer: Vec<f64>,
    dynamic: Vec<f64>,
}

/// Risk value and spatial gradient at one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskSample {
    pub static_value: f64,
    pub static_grad: Vector2<f64>,
    pub dynamic_value: f64,
    pub dynamic_grad: Vector2<f64>,
    /// The query fell outside the grid and was clamped to its border.
    pub clamped: bool,
}

impl Srm {
    pub fn from_layers(geometry: GridGeometry, static_layer: Vec<f64>, dynamic: Vec<f64>) -> Result<Self> {
        if static_layer.len() != geometry.cells() || dynamic.len() != geometry.cells() * geometry.n_t {
            return Err(Error::InvalidInput("risk layers do not match the grid".into()));
        }
        Ok(Srm {
            geometry,
            static_layer,
            dynamic,
        })
    }

    pub fn static_layer(&self) -> &[f64] {
        &self.static_layer
    }

    pub fn dynamic_layer(&self, k: usize) -> &[f64] {
        let n = self.geometry.cells();
        &self.dynamic[k * n..(k + 1) * n]
    }

    pub fn static_at(&self, row: usize, col: usize) -> f64 {
        self.static_layer[row * self.geometry.w + col]
    }

    pub fn dynamic_at(&self, k: usize, row: usize, col: usize) -> f64 {
        self.dynamic[(k * self.geometry.h + row) * self.geometry.w + col]
    }

    /// Dynamic layer used at time `t`: the nearest one, or none past the
    /// horizon.
    pub fn layer_for(&self, t: f64) -> Option<usize> {
        let g = &self.geometry;
        if t > g.t_end() + 1e-9 {
            return None;
        }
        let k = ((t - g.t_ref) / g.dt).round().max(0.0) as usize;
        Some(k.min(g.n_t - 1))
    }

    /// Bilinear lookup between cell centers with its analytic gradient.
    pub fn sample(&self, x: f64, y: f64, t: f64) -> RiskSample {
        let (st, clamped) = Stencil::new(&self.geometry, x, y);
        let (static_value, static_grad) = st.eval(&self.static_layer, &self.geometry);
        let (dynamic_value, dynamic_grad) = match self.layer_for(t) {
            Some(k) => st.eval(self.dynamic_layer(k), &self.geometry),
            None => (0.0, Vector2::zeros()),
        };
        RiskSample {
            static_value,
            static_grad,
            dynamic_value,
            dynamic_grad,
            clamped,
        }
    }

    /// Dumps the risk as an `SRM1` grid: static layer first, then the
    /// dynamic layers, one channel.
    pub fn write_to(&self, w: impl Write) -> std::io::Result<()> {
        let mut g = self.geometry;
        g.n_t += 1;
        let data: Vec<f32> = self
            .static_layer
            .iter()
            .chain(&self.dynamic)
            .map(|&v| v as f32)
            .collect();
        write_grid(w, SRM_MAGIC, &g, 1, &data, None)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Reads an `SRM1` dump back (values carry `f32` precision).
    pub fn read_from(r: impl std::io::Read) -> Result<Self> {
        let (mut g, channels, data, _) = read_grid(r, SRM_MAGIC)?;
        if channels != 1 || g.n_t == 0 {
            return Err(Error::format(18, "risk dumps hold one channel and at least one layer"));
        }
        g.n_t -= 1;
        let n = g.cells();
        let values: Vec<f64> = data.into_iter().map(f64::from).collect();
        Srm::from_layers(g, values[..n].to_vec(), values[n..].to_vec())
    }
}

const SRM_MAGIC: &[u8; 4] = b"SRM1";

struct Stencil {
    i00: usize,
    i01: usize,
    i10: usize,
    i11: usize,
    fx: f64,
    fy: f64,
    free_x: bool,
    free_y: bool,
}

impl Stencil {
    fn axis(u: f64, n: usize) -> (usize, usize, f64, bool) {
        if n == 1 {
            return (0, 0, 0.0, false);
        }
        let max = (n - 1) as f64;
        let inside = (0.0..=max).contains(&u);
        let u = u.clamp(0.0, max);
        let c0 = (u.floor() as usize).min(n - 2);
        (c0, c0 + 1, u - c0 as f64, inside)
    }

    fn new(g: &GridGeometry, x: f64, y: f64) -> (Self, bool) {
        let u = (x - g.origin[0]) / g.dl - 0.5;
        let v = (y - g.origin[1]) / g.dl - 0.5;
        let (c0, c1, fx, in_x) = Stencil::axis(u, g.w);
        let (r0, r1, fy, in_y) = Stencil::axis(v, g.h);
        let st = Stencil {
            i00: r0 * g.w + c0,
            i01: r0 * g.w + c1,
            i10: r1 * g.w + c0,
            i11: r1 * g.w + c1,
            fx,
            fy,
            free_x: in_x,
            free_y: in_y,
        };
        let outside = !(u.is_finite() && v.is_finite())
            || u < -0.5
            || v < -0.5
            || u > g.w as f64 - 0.5
            || v > g.h as f64 - 0.5;
        (st, outside)
    }

    fn eval(&self, layer: &[f64], g: &GridGeometry) -> (f64, Vector2<f64>) {
        let (v00, v01, v10, v11) = (layer[self.i00], layer[self.i01], layer[self.i10], layer[self.i11]);
        let (fx, fy) = (self.fx, self.fy);
        let value = (1.0 - fx) * (1.0 - fy) * v00 + fx * (1.0 - fy) * v01 + (1.0 - fx) * fy * v10 + fx * fy * v11;
        let gx = if self.free_x {
            ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10)) / g.dl
        } else {
            0.0
        };
        let gy = if self.free_y {
            ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01)) / g.dl
        } else {
            0.0
        };
        (value, Vector2::new(gx, gy))
    }
}

/// `max(0, 1 - d * dl / d0)^p` tabulated over the offsets of its support.
struct SpatialKernel {
    radius: isize,
    side: usize,
    values: Vec<f64>,
}

impl SpatialKernel {
    fn new(dl: f64, d0: f64, p: f64) -> Self {
        let radius = (d0 / dl).ceil() as isize;
        let side = (2 * radius + 1) as usize;
        let mut values = Vec::with_capacity(side * side);
        for dr in -radius..=radius {
            for dc in -radius..=radius {
                let d = ((dr * dr + dc * dc) as f64).sqrt();
                values.push(cone(d * dl / d0).powf(p));
            }
        }
        SpatialKernel { radius, side, values }
    }

    /// Adds `weight * kernel` centered on `(row, col)` into a dense layer.
    fn scatter(&self, out: &mut [f64], h: usize, w: usize, row: usize, col: usize, weight: f64) {
        let r = self.radius;
        let r0 = (row as isize - r).max(0);
        let r1 = (row as isize + r).min(h as isize - 1);
        let c0 = (col as isize - r).max(0);
        let c1 = (col as isize + r).min(w as isize - 1);
        for rr in r0..=r1 {
            let krow = (rr - row as isize + r) as usize * self.side;
            let orow = rr as usize * w;
            for cc in c0..=c1 {
                let kv = self.values[krow + (cc - col as isize + r) as usize];
                if kv > 0.0 {
                    out[orow + cc as usize] += weight * kv;
                }
            }
        }
    }
}

#[inline]
fn cone(x: f64) -> f64 {
    (1.0 - x).max(0.0)
}

/// Normalized diffusion of binary sources, per layer list of `(row, col)`.
/// `temporal[k][l]` weighs layer `l` in layer `k`.
fn diffuse(sources: &[Vec<(usize, usize)>], h: usize, w: usize, kernel: &SpatialKernel, temporal: &[Vec<f64>], p: f64) -> Vec<f64> {
    let n_t = sources.len();
    let cells = h * w;
    // spatial sums
    let mut r2 = vec![0.0; n_t * cells];
    for (l, src) in sources.iter().enumerate() {
        let layer = &mut r2[l * cells..(l + 1) * cells];
        for &(row, col) in src {
            kernel.scatter(layer, h, w, row, col, 1.0);
        }
    }
    // spatial scatter of the normalized sources
    let mut s = vec![0.0; n_t * cells];
    for (l, src) in sources.iter().enumerate() {
        for &(row, col) in src {
            let j = row * w + col;
            let r3: f64 = (0..n_t)
                .filter(|&m| temporal[l][m] > 0.0)
                .map(|m| temporal[l][m] * r2[m * cells + j])
                .sum();
            if r3 > 0.0 {
                kernel.scatter(&mut s[l * cells..(l + 1) * cells], h, w, row, col, 1.0 / r3);
            }
        }
    }
    // temporal mixing and root
    let mut out = vec![0.0; n_t * cells];
    for k in 0..n_t {
        let dst = &mut out[k * cells..(k + 1) * cells];
        for l in 0..n_t {
            let wt = temporal[k][l];
            if wt > 0.0 && !sources[l].is_empty() {
                for (d, v) in dst.iter_mut().zip(&s[l * cells..(l + 1) * cells]) {
                    *d += wt * v;
                }
            }
        }
        for v in dst.iter_mut() {
            *v = if *v > 0.0 { v.powf(1.0 / p).min(1.0) } else { 0.0 };
        }
    }
    out
}

/// Converts an occupancy grid to risk.
pub fn sogm_to_srm(sogm: &Sogm, params: &SrmParams) -> Srm {
    let g = sogm.geometry;
    let (h, w, n_t) = (g.h, g.w, g.n_t);
    let tau = params.tau_risk as f32;

    let mut dyn_sources = vec![Vec::new(); n_t];
    let mut static_mask = vec![false; g.cells()];
    for (k, layer_sources) in dyn_sources.iter_mut().enumerate() {
        for row in 0..h {
            for col in 0..w {
                if sogm.get(k, row, col, CH_DYNAMIC) > tau {
                    layer_sources.push((row, col));
                }
                if sogm.get(k, row, col, CH_PERMANENT) > tau || sogm.get(k, row, col, CH_MOVABLE) > tau {
                    static_mask[row * w + col] = true;
                }
            }
        }
    }
    let static_sources: Vec<(usize, usize)> = (0..g.cells())
        .filter(|&i| static_mask[i])
        .map(|i| (i / w, i % w))
        .collect();

    let temporal: Vec<Vec<f64>> = (0..n_t)
        .map(|k| {
            (0..n_t)
                .map(|l| cone((k as f64 - l as f64).abs() * g.dt / params.delta0).powf(params.p))
                .collect()
        })
        .collect();
    let dyn_kernel = SpatialKernel::new(g.dl, params.d0_dyn, params.p);
    let sta_kernel = SpatialKernel::new(g.dl, params.d0_sta, params.p);
    let dynamic = diffuse(&dyn_sources, h, w, &dyn_kernel, &temporal, params.p);
    let static_layer = diffuse(&[static_sources], h, w, &sta_kernel, &[vec![1.0]], params.p);
    Srm {
        geometry: g,
        static_layer,
        dynamic,
    }
}

/// Risk from raw obstacle points with the plain linear cost
/// `max(0, 1 - d / d0)` of the nearest obstacle; dynamic obstacles are
/// copied unchanged into every layer.
pub fn obstacle_srm(geometry: GridGeometry, statics: &[Point2], dynamics: &[Point2], params: &SrmParams) -> Srm {
    let nearest_cost = |pts: &[Point2], d0: f64| -> Vec<f64> {
        let g = &geometry;
        let mut out = vec![0.0f64; g.cells()];
        let reach = (d0 / g.dl).ceil() as isize + 1;
        for p in pts {
            let col = ((p.x - g.origin[0]) / g.dl).floor() as isize;
            let row = ((p.y - g.origin[1]) / g.dl).floor() as isize;
            for rr in (row - reach).max(0)..=(row + reach).min(g.h as isize - 1) {
                for cc in (col - reach).max(0)..=(col + reach).min(g.w as isize - 1) {
                    let c = g.cell_center(rr as usize, cc as usize);
                    let v = cone((c - p).norm() / d0);
                    let o = &mut out[rr as usize * g.w + cc as usize];
                    if v > *o {
                        *o = v;
                    }
                }
            }
        }
        out
    };
    let static_layer = nearest_cost(statics, params.d0_sta);
    let one = nearest_cost(dynamics, params.d0_dyn);
    let mut dynamic = Vec::with_capacity(one.len() * geometry.n_t);
    for _ in 0..geometry.n_t {
        dynamic.extend_from_slice(&one);
    }
    Srm {
        geometry,
        static_layer,
        dynamic,
    }
}
