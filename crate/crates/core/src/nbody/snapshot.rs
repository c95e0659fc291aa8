//! Snapshot files.
//!
//! Binary layout, little-endian: magic `SNBK`, version `u32`, count `u64`,
//! box length `f64`, time `f64`, then per particle id `u64`, mass `f64`,
//! position `3 x f64`, velocity `3 x f64`.
//!
//! The text form holds one particle per line, `id mass x y z vx vy vz`,
//! after optional `box <L>` and `time <t>` lines. `#` starts a comment.

use super::particles::ParticleSet;
use super::NbodyError;
use std::io::{Read, Write};

pub const MAGIC: &[u8; 4] = b"SNBK";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 4 + 4 + 8 + 8 + 8;
pub const RECORD_BYTES: usize = 8 * 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub particles: ParticleSet,
}

impl Snapshot {
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<(), NbodyError> {
        let p = &self.particles;
        let mut buf = Vec::with_capacity(HEADER_BYTES + p.len() * RECORD_BYTES);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(p.len() as u64).to_le_bytes());
        buf.extend_from_slice(&p.box_len.to_le_bytes());
        buf.extend_from_slice(&self.time.to_le_bytes());
        for i in 0..p.len() {
            buf.extend_from_slice(&p.ids[i].to_le_bytes());
            buf.extend_from_slice(&p.masses[i].to_le_bytes());
            for x in p.positions[i].iter().chain(&p.velocities[i]) {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, NbodyError> {
        let mut head = [0u8; HEADER_BYTES];
        r.read_exact(&mut head).map_err(|_| NbodyError::Snapshot("truncated header".into()))?;
        if &head[0..4] != MAGIC {
            return Err(NbodyError::Snapshot("bad magic".into()));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(NbodyError::Snapshot(format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
        let box_len = f64::from_le_bytes(head[16..24].try_into().unwrap());
        let time = f64::from_le_bytes(head[24..32].try_into().unwrap());
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != n * RECORD_BYTES {
            return Err(NbodyError::Snapshot(format!(
                "expected {} record bytes, found {}",
                n * RECORD_BYTES,
                body.len()
            )));
        }
        let mut p = ParticleSet::with_capacity(box_len, n);
        for rec in body.chunks_exact(RECORD_BYTES) {
            let f = |i: usize| f64::from_le_bytes(rec[8 * i..8 * i + 8].try_into().unwrap());
            let id = u64::from_le_bytes(rec[0..8].try_into().unwrap());
            p.push(id, f(1), [f(2), f(3), f(4)], [f(5), f(6), f(7)]);
        }
        p.validate()?;
        Ok(Snapshot { time, particles: p })
    }

    pub fn parse_text(text: &str, default_box: f64) -> Result<Self, NbodyError> {
        let mut p = ParticleSet::new(default_box);
        let mut time = 0.0;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = |what: &str| NbodyError::Snapshot(format!("line {}: {what}", lineno + 1));
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("not a number: {s}")));
            match fields[0] {
                "box" if fields.len() == 2 => p.box_len = num(fields[1])?,
                "time" if fields.len() == 2 => time = num(fields[1])?,
                _ if fields.len() == 8 => {
                    let id = fields[0].parse::<u64>().map_err(|_| bad("bad id"))?;
                    let v: Vec<f64> = fields[1..].iter().map(|s| num(s)).collect::<Result<_, _>>()?;
                    p.push(id, v[0], [v[1], v[2], v[3]], [v[4], v[5], v[6]]);
                }
                _ => return Err(bad("expected `id mass x y z vx vy vz`")),
            }
        }
        p.validate()?;
        Ok(Snapshot { time, particles: p })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, NbodyError> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(MAGIC) {
            Self::read_binary(&bytes[..])
        } else {
            let text = String::from_utf8(bytes).map_err(|_| NbodyError::Snapshot("neither binary nor text".into()))?;
            Self::parse_text(&text, 1.0)
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), NbodyError> {
        let f = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(f))
    }
}
