//! PLY lidar frames and CSV pose lists.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::annotate::SemanticLabel;
use crate::geom::{LidarFrame, Pose, TimedPoint};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    BinaryLittleEndian,
    Ascii,
}

/// A decoded frame and its per-point labels, when the file had them.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyFrame {
    pub frame: LidarFrame,
    pub labels: Option<Vec<SemanticLabel>>,
}

/// Writes `x y z t` as doubles, `ring` as u16 and optionally `label` as u8.
/// The frame interval and id travel in a header comment.
pub fn write_frame_ply(frame: &LidarFrame, labels: Option<&[SemanticLabel]>, format: PlyFormat, mut w: impl Write) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != frame.points.len() {
            return Err(Error::InvalidInput(format!("{} labels for {} points", l.len(), frame.points.len())));
        }
    }
    let io = |e: std::io::Error| Error::io("<ply>", e);
    let fmt = match format {
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
        PlyFormat::Ascii => "ascii",
    };
    let mut header = format!(
        "ply\nformat {fmt} 1.0\ncomment frame {} {:?} {:?}\nelement vertex {}\n",
        frame.frame_id,
        frame.t0,
        frame.t1,
        frame.points.len()
    );
    for p in ["x", "y", "z", "t"] {
        header.push_str(&format!("property double {p}\n"));
    }
    header.push_str("property ushort ring\n");
    if labels.is_some() {
        header.push_str("property uchar label\n");
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes()).map_err(io)?;
    for (i, p) in frame.points.iter().enumerate() {
        let label = labels.map(|l| l[i] as u8);
        match format {
            PlyFormat::BinaryLittleEndian => {
                let mut buf = Vec::with_capacity(35);
                for v in [p.position.x, p.position.y, p.position.z, p.stamp] {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                buf.extend_from_slice(&p.ring.to_le_bytes());
                if let Some(l) = label {
                    buf.push(l);
                }
                w.write_all(&buf).map_err(io)?;
            }
            PlyFormat::Ascii => {
                let mut line = format!("{:?} {:?} {:?} {:?} {}", p.position.x, p.position.y, p.position.z, p.stamp, p.ring);
                if let Some(l) = label {
                    line.push_str(&format!(" {l}"));
                }
                line.push('\n');
                w.write_all(line.as_bytes()).map_err(io)?;
            }
        }
    }
    Ok(())
}

pub fn save_frame_ply(path: &Path, frame: &LidarFrame, labels: Option<&[SemanticLabel]>, format: PlyFormat) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_frame_ply(frame, labels, format, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_frame_ply(path: &Path) -> Result<PlyFrame> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_frame_ply(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], big: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let a: [u8; $n] = b[..$n].try_into().unwrap();
                (if big { <$t>::from_be_bytes(a) } else { <$t>::from_le_bytes(a) }) as f64
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => num!(i16, 2),
            Scalar::U16 => num!(u16, 2),
            Scalar::I32 => num!(i32, 4),
            Scalar::U32 => num!(u32, 4),
            Scalar::F32 => num!(f32, 4),
            Scalar::F64 => num!(f64, 8),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    Little,
    Big,
}

/// Column of each known property in a vertex record.
struct Layout {
    props: Vec<(String, Scalar)>,
    x: usize,
    y: usize,
    z: usize,
    t: usize,
    ring: Option<usize>,
    label: Option<usize>,
}

impl Layout {
    fn new(props: Vec<(String, Scalar)>, at: u64) -> Result<Self> {
        let find = |name: &str| props.iter().position(|(n, _)| n == name);
        let check = |name: &str, i: usize, allowed: &[Scalar]| -> Result<usize> {
            if allowed.contains(&props[i].1) {
                Ok(i)
            } else {
                Err(Error::format(at, format!("property {name:?} has unsupported type {:?}", props[i].1)))
            }
        };
        let need = |name: &str, allowed: &[Scalar]| -> Result<usize> {
            let i = find(name).ok_or_else(|| Error::format(at, format!("missing vertex property {name:?}")))?;
            check(name, i, allowed)
        };
        let float = [Scalar::F32, Scalar::F64];
        let x = need("x", &float)?;
        let y = need("y", &float)?;
        let z = need("z", &float)?;
        let t = need("t", &[Scalar::F64])?;
        let ring = find("ring").map(|i| check("ring", i, &[Scalar::U8, Scalar::U16])).transpose()?;
        let label = find("label").map(|i| check("label", i, &[Scalar::U8])).transpose()?;
        Ok(Layout {
            x,
            y,
            z,
            t,
            ring,
            label,
            props,
        })
    }
}

/// Reads a binary or ASCII PLY frame. `x y z` may be float or double, `t`
/// must be double, `ring` (u8 or u16) defaults to 0 and `label` is optional.
pub fn read_frame_ply(r: impl Read) -> Result<PlyFrame> {
    let mut r = BufReader::new(r);
    let mut offset = 0u64;
    let mut line = String::new();
    let mut encoding = None;
    let mut count: Option<usize> = None;
    let mut in_vertex = false;
    let mut props = Vec::new();
    let mut meta: Option<(u64, f64, f64)> = None;
    let mut first = true;
    loop {
        line.clear();
        let at = offset;
        let n = r.read_line(&mut line).map_err(|e| Error::format(at, e.to_string()))?;
        if n == 0 {
            return Err(Error::format(at, "header ended without end_header"));
        }
        offset += n as u64;
        let body = line.trim_end_matches(['\n', '\r']);
        let mut words = body.split_whitespace();
        let key = words.next().unwrap_or("");
        if first {
            if body != "ply" {
                return Err(Error::format(at, "missing ply magic"));
            }
            first = false;
            continue;
        }
        match key {
            "format" => {
                encoding = Some(match (words.next(), words.next()) {
                    (Some("ascii"), Some("1.0")) => Encoding::Ascii,
                    (Some("binary_little_endian"), Some("1.0")) => Encoding::Little,
                    (Some("binary_big_endian"), Some("1.0")) => Encoding::Big,
                    _ => return Err(Error::format(at, format!("unsupported format line {body:?}"))),
                });
            }
            "comment" => {
                if words.next() == Some("frame") {
                    let vals: Vec<&str> = words.collect();
                    let parsed = (vals.len() == 3)
                        .then(|| Some((vals[0].parse().ok()?, vals[1].parse().ok()?, vals[2].parse().ok()?)))
                        .flatten();
                    meta = Some(parsed.ok_or_else(|| Error::format(at, "bad frame comment"))?);
                }
            }
            "obj_info" => {}
            "element" => {
                let name = words.next().unwrap_or("");
                let n: usize = words
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::format(at, "bad element count"))?;
                if name == "vertex" {
                    if count.is_some() {
                        return Err(Error::format(at, "duplicate vertex element"));
                    }
                    count = Some(n);
                    in_vertex = true;
                } else if n == 0 {
                    in_vertex = false;
                } else {
                    return Err(Error::format(at, format!("unsupported element {name:?}")));
                }
            }
            "property" => {
                let ty = words.next().unwrap_or("");
                if ty == "list" {
                    return Err(Error::format(at, "list properties are not supported"));
                }
                let scalar = Scalar::parse(ty).ok_or_else(|| Error::format(at, format!("unknown property type {ty:?}")))?;
                let name = words.next().ok_or_else(|| Error::format(at, "property without a name"))?;
                if in_vertex {
                    props.push((name.to_string(), scalar));
                }
            }
            "end_header" => break,
            _ => return Err(Error::format(at, format!("unexpected header line {body:?}"))),
        }
    }
    let encoding = encoding.ok_or_else(|| Error::format(offset, "missing format line"))?;
    let count = count.ok_or_else(|| Error::format(offset, "missing vertex element"))?;
    let layout = Layout::new(props, offset)?;

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    match encoding {
        Encoding::Ascii => {
            for _ in 0..count {
                line.clear();
                let at = offset;
                let n = r.read_line(&mut line).map_err(|e| Error::format(at, e.to_string()))?;
                if n == 0 {
                    return Err(Error::format(at, "truncated payload"));
                }
                offset += n as u64;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|v| v.parse::<f64>().map_err(|_| Error::format(at, format!("bad number {v:?}"))))
                    .collect::<Result<_>>()?;
                if vals.len() != layout.props.len() {
                    return Err(Error::format(at, format!("expected {} values, got {}", layout.props.len(), vals.len())));
                }
                rows.push(vals);
            }
        }
        Encoding::Little | Encoding::Big => {
            let width: usize = layout.props.iter().map(|(_, s)| s.size()).sum();
            let mut buf = vec![0u8; width];
            for _ in 0..count {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::format(offset, "truncated payload"))?;
                let mut at = 0;
                let mut vals = Vec::with_capacity(layout.props.len());
                for (_, s) in &layout.props {
                    vals.push(s.decode(&buf[at..], encoding == Encoding::Big));
                    at += s.size();
                }
                offset += width as u64;
                rows.push(vals);
            }
        }
    }

    let mut points = Vec::with_capacity(count);
    let mut labels = layout.label.map(|_| Vec::with_capacity(count));
    for (i, v) in rows.iter().enumerate() {
        let ring = layout.ring.map_or(0.0, |k| v[k]);
        if !(0.0..=u16::MAX as f64).contains(&ring) || ring.fract() != 0.0 {
            return Err(Error::InvalidInput(format!("point {i}: bad ring {ring}")));
        }
        points.push(TimedPoint::new(Vector3::new(v[layout.x], v[layout.y], v[layout.z]), v[layout.t], ring as u16));
        if let (Some(k), Some(out)) = (layout.label, labels.as_mut()) {
            let l = SemanticLabel::from_u8(v[k] as u8)
                .filter(|_| v[k].fract() == 0.0 && v[k] >= 0.0)
                .ok_or_else(|| Error::InvalidInput(format!("point {i}: bad label {}", v[k])))?;
            out.push(l);
        }
    }
    let (frame_id, t0, t1) = meta.unwrap_or_else(|| {
        // without a frame comment the interval is the stamp range
        let lo = points.iter().map(|p| p.stamp).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p.stamp).fold(f64::NEG_INFINITY, f64::max);
        if points.is_empty() {
            (0, 0.0, 0.1)
        } else if hi > lo {
            (0, lo, hi)
        } else {
            (0, lo, lo + 0.1)
        }
    });
    Ok(PlyFrame {
        frame: LidarFrame::new(points, t0, t1, frame_id)?,
        labels,
    })
}

/// Quaternions further than this from unit norm are rejected.
pub const QUATERNION_NORM_TOLERANCE: f64 = 1e-3;

/// Writes `stamp,tx,ty,tz,qx,qy,qz,qw` rows.
pub fn write_poses_csv(poses: &[Pose], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::InvalidInput(e.to_string());
    out.write_record(["stamp", "tx", "ty", "tz", "qx", "qy", "qz", "qw"]).map_err(err)?;
    for p in poses {
        let q = p.rotation.quaternion();
        let t = p.translation;
        out.write_record([p.stamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w].map(|v| format!("{v:?}")))
            .map_err(err)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn save_poses_csv(path: &Path, poses: &[Pose]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_poses_csv(poses, std::io::BufWriter::new(f))
}

pub fn load_poses_csv(path: &Path) -> Result<Vec<Pose>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_poses_csv(f)
}

/// Reads poses, renormalizing quaternions within the tolerance. Stamps must
/// strictly increase.
pub fn read_poses_csv(r: impl Read) -> Result<Vec<Pose>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header_err = |e: csv::Error| Error::format(e.position().map_or(0, |p| p.byte()), e.to_string());
    let header = rdr.headers().map_err(header_err)?.clone();
    let expected = ["stamp", "tx", "ty", "tz", "qx", "qy", "qz", "qw"];
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::format(0, format!("expected columns {}", expected.join(","))));
    }
    let mut out: Vec<Pose> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(header_err)?;
        let at = rec.position().map_or(0, |p| p.byte());
        let v: Vec<f64> = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| Error::format(at, format!("bad number {f:?}"))))
            .collect::<Result<_>>()?;
        if v.len() != 8 || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::format(at, "expected 8 finite values"));
        }
        let q = Quaternion::new(v[7], v[4], v[5], v[6]);
        let norm = q.norm();
        if (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
            return Err(Error::format(at, format!("quaternion norm {norm} is not close to 1")));
        }
        let rotation = if norm == 1.0 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::new_normalize(q)
        };
        if let Some(prev) = out.last() {
            if !(v[0] > prev.stamp) {
                return Err(Error::format(at, format!("stamp {} does not follow {}", v[0], prev.stamp)));
            }
        }
        out.push(Pose::new(rotation, Vector3::new(v[1], v[2], v[3]), v[0]));
    }
    Ok(out)
}
