//! Spatiotemporal occupancy grids: geometry, rasterization and file codec.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Frame2D, SemanticLabel};
use crate::geom::Point2;
use crate::pointmap::ByteReader;
use crate::{Error, Result};

pub const CH_PERMANENT: usize = 0;
pub const CH_MOVABLE: usize = 1;
pub const CH_DYNAMIC: usize = 2;
pub const SOGM_CHANNELS: usize = 3;

/// Temporal and spatial extent of the grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SogmConfig {
    /// Prediction horizon (s).
    pub horizon: f64,
    pub dt: f64,
    /// Radius of the circle the square grid is inscribed in (m).
    pub radius: f64,
    pub dl: f64,
    /// Longest run of empty layers tolerated before a grid is flagged
    /// incomplete.
    pub max_layer_gap: usize,
}

impl Default for SogmConfig {
    fn default() -> Self {
        SogmConfig {
            horizon: 4.0,
            dt: 0.1,
            radius: 8.0,
            dl: 0.12,
            max_layer_gap: 3,
        }
    }
}

impl SogmConfig {
    pub fn n_layers(&self) -> usize {
        (self.horizon / self.dt).round() as usize + 1
    }

    /// Side of the square inscribed in the circle of `radius`, in cells.
    pub fn side(&self) -> usize {
        (std::f64::consts::SQRT_2 * self.radius / self.dl).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.horizon >= 0.0 && self.dt > 0.0 && self.radius > 0.0 && self.dl > 0.0 && self.side() > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid grid geometry {self:?}")))
        }
    }

    pub fn geometry(&self, center: Point2, t_ref: f64) -> GridGeometry {
        let side = self.side();
        let half = side as f64 * self.dl / 2.0;
        GridGeometry {
            n_t: self.n_layers(),
            h: side,
            w: side,
            dl: self.dl,
            dt: self.dt,
            t_ref,
            origin: [center.x - half, center.y - half],
        }
    }
}

/// Raster layout shared by occupancy and risk grids. Row index follows `y`,
/// column index follows `x`; `origin` is the lower corner of cell (0, 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub n_t: usize,
    pub h: usize,
    pub w: usize,
    pub dl: f64,
    pub dt: f64,
    pub t_ref: f64,
    pub origin: [f64; 2],
}

impl GridGeometry {
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

    pub fn center(&self) -> Point2 {
        Point2::new(
            self.origin[0] + self.w as f64 * self.dl / 2.0,
            self.origin[1] + self.h as f64 * self.dl / 2.0,
        )
    }

    pub fn layer_time(&self, k: usize) -> f64 {
        self.t_ref + k as f64 * self.dt
    }

    /// Last stamp covered by the layers.
    pub fn t_end(&self) -> f64 {
        self.layer_time(self.n_t.saturating_sub(1))
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }
}

/// Occupancy per (layer, row, col, channel), each value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sogm {
    pub geometry: GridGeometry,
    data: Vec<f32>,
    /// Set when the inputs left a gap longer than the tolerated number of
    /// layers.
    pub incomplete: bool,
}

impl Sogm {
    pub fn zeros(geometry: GridGeometry) -> Self {
        Sogm {
            geometry,
            data: vec![0.0; geometry.n_t * geometry.cells() * SOGM_CHANNELS],
            incomplete: false,
        }
    }

    pub fn from_data(geometry: GridGeometry, data: Vec<f32>) -> Result<Self> {
        if data.len() != geometry.n_t * geometry.cells() * SOGM_CHANNELS {
            return Err(Error::InvalidInput(format!("tensor of {} values does not match the grid", data.len())));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput("occupancy outside [0, 1]".into()));
        }
        Ok(Sogm {
            geometry,
            data,
            incomplete: false,
        })
    }

    #[inline]
    fn index(&self, k: usize, row: usize, col: usize, c: usize) -> usize {
        ((k * self.geometry.h + row) * self.geometry.w + col) * SOGM_CHANNELS + c
    }

    #[inline]
    pub fn get(&self, k: usize, row: usize, col: usize, c: usize) -> f32 {
        self.data[self.index(k, row, col, c)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, row: usize, col: usize, c: usize, v: f32) {
        let i = self.index(k, row, col, c);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Sum of one channel over the whole tensor.
    pub fn channel_sum(&self, c: usize) -> f64 {
        self.data.iter().skip(c).step_by(SOGM_CHANNELS).map(|&v| v as f64).sum()
    }

    /// Copies the permanent and movable channels of `other`, which must share
    /// the grid layout.
    pub fn copy_static_from(&mut self, other: &Sogm) {
        assert_eq!(
            (self.geometry.n_t, self.geometry.h, self.geometry.w),
            (other.geometry.n_t, other.geometry.h, other.geometry.w)
        );
        for (dst, src) in self.data.chunks_mut(SOGM_CHANNELS).zip(other.data.chunks(SOGM_CHANNELS)) {
            dst[CH_PERMANENT] = src[CH_PERMANENT];
            dst[CH_MOVABLE] = src[CH_MOVABLE];
        }
    }

    /// Marks the cell of `p` in every layer of channel `c`.
    pub fn mark_all_layers(&mut self, p: &Point2, c: usize) {
        if let Some((row, col)) = self.geometry.cell_of(p) {
            for k in 0..self.geometry.n_t {
                self.set(k, row, col, c, 1.0);
            }
        }
    }

    /// Sets every cell whose center lies in the disc, in one layer.
    pub fn mark_disc(&mut self, k: usize, center: &Point2, radius: f64, c: usize) {
        let g = self.geometry;
        let lo = Point2::new(center.x - radius, center.y - radius);
        let c0 = (((lo.x - g.origin[0]) / g.dl).floor().max(0.0)) as usize;
        let r0 = (((lo.y - g.origin[1]) / g.dl).floor().max(0.0)) as usize;
        let c1 = ((center.x + radius - g.origin[0]) / g.dl).ceil();
        let r1 = ((center.y + radius - g.origin[1]) / g.dl).ceil();
        if c1 < 0.0 || r1 < 0.0 {
            return;
        }
        let (c1, r1) = ((c1 as usize).min(g.w), (r1 as usize).min(g.h));
        let r2 = radius * radius;
        for row in r0..r1 {
            for col in c0..c1 {
                if (g.cell_center(row, col) - center).norm_squared() <= r2 {
                    self.set(k, row, col, c, 1.0);
                }
            }
        }
    }

    pub fn write_to(&self, w: impl Write, publish_delay: Option<f64>) -> std::io::Result<()> {
        write_grid(w, SOGM_MAGIC, &self.geometry, SOGM_CHANNELS, &self.data, publish_delay)
    }

    /// Decodes a grid and the optional publish delay stored with it.
    pub fn read_from(r: impl Read) -> Result<(Self, Option<f64>)> {
        let (geometry, channels, data, delay) = read_grid(r, SOGM_MAGIC)?;
        if channels != SOGM_CHANNELS {
            return Err(Error::format(18, format!("expected {SOGM_CHANNELS} channels, found {channels}")));
        }
        Ok((Sogm::from_data(geometry, data).map_err(|e| Error::format(HEADER_LEN, e.to_string()))?, delay))
    }

    pub fn save(&self, path: &Path, publish_delay: Option<f64>) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w, publish_delay)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, Option<f64>)> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Sogm::read_from(std::io::BufReader::new(file))
    }
}

pub(crate) const SOGM_MAGIC: &[u8; 4] = b"SOGM";
const HEADER_LEN: u64 = 4 + 2 + 4 * 4 + 8 * 5;

/// Writes a grid; version 2 carries a trailing publish delay in the header.
pub(crate) fn write_grid(
    mut w: impl Write,
    magic: &[u8; 4],
    g: &GridGeometry,
    channels: usize,
    data: &[f32],
    publish_delay: Option<f64>,
) -> std::io::Result<()> {
    w.write_all(magic)?;
    let version: u16 = if publish_delay.is_some() { 2 } else { 1 };
    w.write_all(&version.to_le_bytes())?;
    for v in [g.n_t, g.h, g.w, channels] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for v in [g.dl, g.dt, g.t_ref, g.origin[0], g.origin[1]] {
        w.write_all(&v.to_le_bytes())?;
    }
    if let Some(d) = publish_delay {
        w.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) fn read_grid(
    mut r: impl Read,
    magic: &[u8; 4],
) -> Result<(GridGeometry, usize, Vec<f32>, Option<f64>)> {
    let mut reader = ByteReader::new(&mut r);
    let found = reader.bytes::<4>()?;
    if &found != magic {
        return Err(Error::format(
            0,
            format!("bad magic, expected {}", String::from_utf8_lossy(magic)),
        ));
    }
    let version = u16::from_le_bytes(reader.bytes()?);
    if version != 1 && version != 2 {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = u32::from_le_bytes(reader.bytes()?) as usize;
    }
    let mut reals = [0.0f64; 5];
    for v in &mut reals {
        *v = f64::from_le_bytes(reader.bytes()?);
    }
    let delay = if version == 2 {
        let d = f64::from_le_bytes(reader.bytes()?);
        if !(d >= 0.0 && d.is_finite()) {
            return Err(Error::format(reader.offset - 8, format!("invalid publish delay {d}")));
        }
        Some(d)
    } else {
        None
    };
    let [n_t, h, w, c] = dims;
    if !(reals[0] > 0.0 && reals[1] > 0.0) {
        return Err(Error::format(22, "cell size and time step must be positive"));
    }
    let total = n_t
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(c))
        .filter(|&v| v <= 1 << 31)
        .ok_or_else(|| Error::format(6, "grid dimensions too large"))?;
    let mut data = Vec::with_capacity(total);
    for _ in 0..total {
        data.push(f32::from_le_bytes(reader.bytes()?));
    }
    let mut probe = [0u8; 1];
    if reader.bytes_opt(&mut probe)? {
        return Err(Error::format(reader.offset, "trailing bytes after tensor"));
    }
    let geometry = GridGeometry {
        n_t,
        h,
        w,
        dl: reals[0],
        dt: reals[1],
        t_ref: reals[2],
        origin: [reals[3], reals[4]],
    };
    Ok((geometry, c, data, delay))
}

/// Rasterizes labelled 2D frames into an occupancy grid centered on
/// `center` at `t_ref`.
///
/// Each frame goes to its nearest layer. Permanent and movable cells are
/// unioned over all frames and copied to every layer. Points are rotated by
/// `rotation` about `center` before rasterization.
pub fn build_sogm(frames: &[Frame2D], t_ref: f64, rotation: f64, center: Point2, cfg: &SogmConfig) -> Result<Sogm> {
    cfg.validate()?;
    let geometry = cfg.geometry(center, t_ref);
    let mut sogm = Sogm::zeros(geometry);
    let (s, c) = rotation.sin_cos();
    let mut covered = vec![false; geometry.n_t];

    for f in frames {
        let k = ((f.stamp - t_ref) / geometry.dt).round();
        let layer = (k >= 0.0 && (k as usize) < geometry.n_t).then_some(k as usize);
        if let Some(k) = layer {
            covered[k] = true;
        }
        for (p, label) in f.points.iter().zip(&f.labels) {
            let d = p - center;
            let q = Point2::new(center.x + c * d.x - s * d.y, center.y + s * d.x + c * d.y);
            match label {
                SemanticLabel::Permanent => sogm.mark_all_layers(&q, CH_PERMANENT),
                SemanticLabel::Movable => sogm.mark_all_layers(&q, CH_MOVABLE),
                SemanticLabel::Dynamic => {
                    if let (Some(k), Some((row, col))) = (layer, geometry.cell_of(&q)) {
                        sogm.set(k, row, col, CH_DYNAMIC, 1.0);
                    }
                }
                SemanticLabel::Ground | SemanticLabel::Uncertain => {}
            }
        }
    }

    let mut run = 0;
    for &hit in &covered {
        run = if hit { 0 } else { run + 1 };
        if run > cfg.max_layer_gap {
            sogm.incomplete = true;
        }
    }
    Ok(sogm)
}
