use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::predict::PredictorKind;
use crate::{Error, Result};

const MAGIC: &str = "SOGMNAV-SESSION 1";

/// Collision and risk distances, center to center (m).
pub const COLLISION_DISTANCE: f64 = 0.4;
pub const RISK_DISTANCE: f64 = 1.0;
const SLOW_SPEED: f64 = 0.1;
const BACKWARD_SPEED: f64 = -0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub stamp: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
    pub omega: f64,
    pub cmd_v: f64,
    pub cmd_omega: f64,
    /// Nearest actor center; infinite without actors.
    pub min_actor_distance: f64,
    /// `[x, y, vx, vy]` per actor.
    pub actors: Vec<[f64; 4]>,
}

const FIXED_FIELDS: usize = 9;

impl TickRecord {
    fn fields(&self) -> [f64; FIXED_FIELDS] {
        [
            self.stamp,
            self.x,
            self.y,
            self.heading,
            self.v,
            self.omega,
            self.cmd_v,
            self.cmd_omega,
            self.min_actor_distance,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub seed: u64,
    pub config_hash: String,
    pub predictor: PredictorKind,
    pub n_actors: usize,
    /// The final waypoint was reached before the timeout.
    pub complete: bool,
    pub frames: u64,
    pub ticks: Vec<TickRecord>,
}

impl SessionLog {
    fn record_len(&self) -> usize {
        FIXED_FIELDS + 4 * self.n_actors
    }

    /// Text header followed by little-endian `f64` records.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "seed {}", self.seed)?;
        writeln!(w, "config_hash {}", self.config_hash)?;
        writeln!(w, "predictor {}", self.predictor.name())?;
        writeln!(w, "actors {}", self.n_actors)?;
        writeln!(w, "complete {}", u8::from(self.complete))?;
        writeln!(w, "frames {}", self.frames)?;
        writeln!(w, "ticks {}", self.ticks.len())?;
        writeln!(w, "record_f64 {}", self.record_len())?;
        writeln!(w, "end")?;
        for t in &self.ticks {
            for v in t.fields() {
                w.write_all(&v.to_le_bytes())?;
            }
            for a in &t.actors {
                for v in a {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        SessionLog::read_from(f)
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut offset = 0u64;
        let mut line = String::new();
        let mut next_line = |r: &mut BufReader<_>, offset: &mut u64| -> Result<(u64, String)> {
            line.clear();
            let here = *offset;
            let n = r.read_line(&mut line).map_err(|e| Error::format(here, e.to_string()))?;
            if n == 0 {
                return Err(Error::format(here, "truncated header"));
            }
            *offset += n as u64;
            Ok((here, line.trim_end().to_string()))
        };
        let (at, magic) = next_line(&mut r, &mut offset)?;
        if magic != MAGIC {
            return Err(Error::format(at, "not a session log"));
        }
        let mut field = |key: &str, r: &mut BufReader<_>, offset: &mut u64| -> Result<(u64, String)> {
            let (at, l) = next_line(r, offset)?;
            match l.split_once(' ') {
                Some((k, v)) if k == key => Ok((at, v.to_string())),
                _ => Err(Error::format(at, format!("expected {key}"))),
            }
        };
        let num = |at: u64, v: &str| v.parse::<u64>().map_err(|_| Error::format(at, format!("bad integer {v:?}")));
        let (at, v) = field("seed", &mut r, &mut offset)?;
        let seed = num(at, &v)?;
        let (_, config_hash) = field("config_hash", &mut r, &mut offset)?;
        let (at, v) = field("predictor", &mut r, &mut offset)?;
        let predictor = PredictorKind::from_name(&v).ok_or_else(|| Error::format(at, format!("unknown predictor {v:?}")))?;
        let (at, v) = field("actors", &mut r, &mut offset)?;
        let n_actors = num(at, &v)? as usize;
        let (at, v) = field("complete", &mut r, &mut offset)?;
        let complete = num(at, &v)? != 0;
        let (at, v) = field("frames", &mut r, &mut offset)?;
        let frames = num(at, &v)?;
        let (at, v) = field("ticks", &mut r, &mut offset)?;
        let n_ticks = num(at, &v)? as usize;
        let (at, v) = field("record_f64", &mut r, &mut offset)?;
        if num(at, &v)? as usize != FIXED_FIELDS + 4 * n_actors {
            return Err(Error::format(at, "record width does not match the actor count"));
        }
        let (at, end) = next_line(&mut r, &mut offset)?;
        if end != "end" {
            return Err(Error::format(at, "expected end of header"));
        }
        let mut ticks = Vec::with_capacity(n_ticks);
        let mut buf = [0u8; 8];
        let mut read = |r: &mut BufReader<_>, offset: &mut u64| -> Result<f64> {
            r.read_exact(&mut buf)
                .map_err(|_| Error::format(*offset, "truncated record"))?;
            *offset += 8;
            Ok(f64::from_le_bytes(buf))
        };
        for _ in 0..n_ticks {
            let mut f = [0.0; FIXED_FIELDS];
            for v in &mut f {
                *v = read(&mut r, &mut offset)?;
            }
            let mut actors = Vec::with_capacity(n_actors);
            for _ in 0..n_actors {
                let mut a = [0.0; 4];
                for v in &mut a {
                    *v = read(&mut r, &mut offset)?;
                }
                actors.push(a);
            }
            ticks.push(TickRecord {
                stamp: f[0],
                x: f[1],
                y: f[2],
                heading: f[3],
                v: f[4],
                omega: f[5],
                cmd_v: f[6],
                cmd_omega: f[7],
                min_actor_distance: f[8],
                actors,
            });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| Error::format(offset, e.to_string()))? != 0 {
            return Err(Error::format(offset, "trailing bytes after the last record"));
        }
        Ok(SessionLog {
            seed,
            config_hash,
            predictor,
            n_actors,
            complete,
            frames,
            ticks,
        })
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = ["stamp", "x", "y", "heading", "v", "omega", "cmd_v", "cmd_omega", "min_actor_distance"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for i in 0..self.n_actors {
            for f in ["x", "y", "vx", "vy"] {
                header.push(format!("actor{i}_{f}"));
            }
        }
        let csv_err = |e: csv::Error| Error::InvalidInput(e.to_string());
        out.write_record(&header).map_err(csv_err)?;
        for t in &self.ticks {
            let row = t.fields().into_iter().chain(t.actors.iter().flatten().copied()).map(|v| v.to_string());
            out.write_record(row).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::InvalidInput(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Time to reach the final waypoint, or the session length if it never did (s).
    pub t_f: f64,
    pub complete: bool,
    /// Percent of ticks with an actor within the collision distance.
    pub collision_pct: f64,
    /// Percent of ticks with an actor within the risk distance.
    pub risk_pct: f64,
    /// Mean absolute speed (m/s).
    pub aas: f64,
    pub slow_pct: f64,
    /// Mean signed speed along the heading (m/s).
    pub als: f64,
    pub backward_pct: f64,
}

pub fn compute_metrics(log: &SessionLog) -> Result<Metrics> {
    let ticks = &log.ticks;
    if ticks.is_empty() {
        return Err(Error::InvalidInput("empty session log".into()));
    }
    let n = ticks.len() as f64;
    let pct = |f: &dyn Fn(&TickRecord) -> bool| 100.0 * ticks.iter().filter(|t| f(t)).count() as f64 / n;
    Ok(Metrics {
        t_f: ticks[ticks.len() - 1].stamp - ticks[0].stamp,
        complete: log.complete,
        collision_pct: pct(&|t| t.min_actor_distance < COLLISION_DISTANCE),
        risk_pct: pct(&|t| t.min_actor_distance < RISK_DISTANCE),
        aas: ticks.iter().map(|t| t.v.abs()).sum::<f64>() / n,
        slow_pct: pct(&|t| t.v.abs() < SLOW_SPEED),
        als: ticks.iter().map(|t| t.v).sum::<f64>() / n,
        backward_pct: pct(&|t| t.v < BACKWARD_SPEED),
    })
}
