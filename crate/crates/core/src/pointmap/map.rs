use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use rustc_hash::FxHashMap;

use crate::geom::{voxel_key, Point3, SurfaceNormal, VoxelKey};
use crate::spatial::PointIndex;
use crate::{Error, Result};

/// Default map voxel size.
pub const DL_MAP: f64 = 0.03;

/// Cell size of the coarse neighbour index kept alongside the voxel table.
const INDEX_CELL: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPoint {
    pub position: Point3,
    /// Unit normal; `None` when the estimate was degenerate.
    pub normal: Option<Vector3<f64>>,
    /// Planarity of the local fit, in `[0, 1]`.
    pub score: f64,
    /// `n_i`: times the voxel was observed (occupied or traversed).
    pub seen_count: u32,
    /// `o_i`: times the voxel was observed occupied.
    pub occupied_count: u32,
}

/// Sparse voxel map holding at most one point per voxel.
#[derive(Debug, Clone)]
pub struct MapCloud {
    dl: f64,
    points: Vec<MapPoint>,
    voxels: FxHashMap<VoxelKey, usize>,
    index: PointIndex,
}

impl Default for MapCloud {
    fn default() -> Self {
        MapCloud::new(DL_MAP)
    }
}

impl MapCloud {
    pub fn new(dl: f64) -> Self {
        MapCloud {
            dl,
            points: Vec::new(),
            voxels: FxHashMap::default(),
            index: PointIndex::new(INDEX_CELL.max(dl)),
        }
    }

    pub fn dl(&self) -> f64 {
        self.dl
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[MapPoint] {
        &self.points
    }

    pub fn points_mut(&mut self) -> &mut [MapPoint] {
        &mut self.points
    }

    pub fn positions(&self) -> Vec<Point3> {
        self.points.iter().map(|p| p.position).collect()
    }

    /// Index of the map point stored in the voxel containing `p`.
    pub fn voxel_lookup(&self, p: &Point3) -> Option<usize> {
        self.voxels.get(&voxel_key(p, self.dl)).copied()
    }

    /// Nearest map point within `max_dist`.
    pub fn nearest(&self, p: &Point3, max_dist: f64) -> Option<(usize, f64)> {
        self.index.nearest(p, max_dist)
    }

    pub fn index(&self) -> &PointIndex {
        &self.index
    }

    /// Inserts a point into an empty voxel. Returns `false` when the voxel is
    /// already taken.
    pub fn insert(&mut self, point: MapPoint) -> bool {
        let key = voxel_key(&point.position, self.dl);
        if self.voxels.contains_key(&key) {
            return false;
        }
        self.voxels.insert(key, self.points.len());
        self.index.push(point.position);
        self.points.push(point);
        true
    }

    /// Zeroes every `n_i` / `o_i`.
    pub fn reset_counters(&mut self) {
        for p in &mut self.points {
            p.seen_count = 0;
            p.occupied_count = 0;
        }
    }

    /// Keeps only the points for which `keep` returns true.
    pub fn retain(&mut self, mut keep: impl FnMut(usize, &MapPoint) -> bool) {
        let old = std::mem::take(&mut self.points);
        let mut fresh = MapCloud::new(self.dl);
        for (i, p) in old.into_iter().enumerate() {
            if keep(i, &p) {
                fresh.insert(p);
            }
        }
        *self = fresh;
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.dl.to_le_bytes())?;
        w.write_all(&(self.points.len() as u64).to_le_bytes())?;
        for p in &self.points {
            for c in p.position.iter() {
                w.write_all(&c.to_le_bytes())?;
            }
            let n = p.normal.unwrap_or_else(Vector3::zeros);
            for c in n.iter() {
                w.write_all(&(*c as f32).to_le_bytes())?;
            }
            w.write_all(&(p.score as f32).to_le_bytes())?;
            w.write_all(&p.seen_count.to_le_bytes())?;
            w.write_all(&p.occupied_count.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut reader = ByteReader::new(&mut r);
        let magic = reader.bytes::<4>()?;
        if &magic != MAGIC {
            return Err(Error::format(0, "bad magic, expected PMAP"));
        }
        let version = u16::from_le_bytes(reader.bytes()?);
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported map version {version}")));
        }
        let dl = f64::from_le_bytes(reader.bytes()?);
        if !(dl > 0.0) {
            return Err(Error::format(6, format!("invalid voxel size {dl}")));
        }
        let count = u64::from_le_bytes(reader.bytes()?);
        let mut map = MapCloud::new(dl);
        for _ in 0..count {
            let mut pos = [0.0; 3];
            for c in &mut pos {
                *c = f64::from_le_bytes(reader.bytes()?);
            }
            let mut n = [0.0f64; 3];
            for c in &mut n {
                *c = f32::from_le_bytes(reader.bytes()?) as f64;
            }
            let score = f32::from_le_bytes(reader.bytes()?) as f64;
            let seen_count = u32::from_le_bytes(reader.bytes()?);
            let occupied_count = u32::from_le_bytes(reader.bytes()?);
            let normal = Vector3::from(n);
            let offset = reader.offset;
            if !map.insert(MapPoint {
                position: Vector3::from(pos),
                normal: (normal.norm_squared() > 0.0).then(|| normal.normalize()),
                score,
                seen_count,
                occupied_count,
            }) {
                return Err(Error::format(offset, "two map points share a voxel"));
            }
        }
        Ok(map)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        MapCloud::read_from(std::io::BufReader::new(file))
    }
}

const MAGIC: &[u8; 4] = b"PMAP";
const VERSION: u16 = 1;

pub(crate) struct ByteReader<R> {
    inner: R,
    pub(crate) offset: u64,
}

impl<R: Read> ByteReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        ByteReader { inner, offset: 0 }
    }

    pub(crate) fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::format(self.offset, "truncated payload"))?;
        self.offset += N as u64;
        Ok(buf)
    }

    /// True when at least one more byte is available.
    pub(crate) fn bytes_opt(&mut self, buf: &mut [u8]) -> Result<bool> {
        match self.inner.read(buf) {
            Ok(n) => Ok(n > 0),
            Err(e) => Err(Error::format(self.offset, e.to_string())),
        }
    }
}

/// Merges aligned points (map coordinates) into the map.
///
/// An empty voxel receives a new point with `n_i = o_i = 1`. A re-observed
/// voxel counts one more occupied observation and keeps whichever
/// representative has the higher score.
pub fn update_map(map: &mut MapCloud, aligned: &[Point3], normals: &[Option<SurfaceNormal>]) {
    assert_eq!(aligned.len(), normals.len(), "one normal per point");
    for (p, n) in aligned.iter().zip(normals) {
        let score = n.map_or(0.0, |n| n.planarity);
        match map.voxel_lookup(p) {
            None => {
                map.insert(MapPoint {
                    position: *p,
                    normal: n.map(|n| n.normal),
                    score,
                    seen_count: 1,
                    occupied_count: 1,
                });
            }
            Some(i) => {
                let stored = &mut map.points[i];
                stored.seen_count += 1;
                stored.occupied_count += 1;
                if score > stored.score {
                    stored.position = *p;
                    stored.normal = n.map(|n| n.normal);
                    stored.score = score;
                    map.index.relocate(i, *p);
                }
            }
        }
    }
}
