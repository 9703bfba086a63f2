//! The `RGNS` trajectory file format.
//!
//! Little-endian throughout:
//!
//! | field     | type            |
//! |-----------|-----------------|
//! | magic     | `b"RGNS"`       |
//! | version   | u32 (= 1)       |
//! | D, N, T   | u32 each        |
//! | dt        | f64             |
//! | radius    | f64             |
//! | box_lo    | D x f64         |
//! | box_hi    | D x f64         |
//! | materials | N x u8          |
//! | positions | T x N x D f32   |

use std::io::Write;
use std::path::Path;

use super::{Bounds, StepState, Trajectory};
use crate::bytes::{put_f64, put_u32, ByteReader};
use crate::{Error, Result};

pub const TRAJECTORY_MAGIC: [u8; 4] = *b"RGNS";
pub const TRAJECTORY_VERSION: u32 = 1;

pub fn encode_trajectory(traj: &Trajectory) -> Vec<u8> {
    let mut out = Vec::with_capacity(48 + traj.materials.len() + traj.positions.len() * 4);
    out.extend_from_slice(&TRAJECTORY_MAGIC);
    put_u32(&mut out, TRAJECTORY_VERSION);
    put_u32(&mut out, traj.dims as u32);
    put_u32(&mut out, traj.n_particles as u32);
    put_u32(&mut out, traj.n_steps as u32);
    put_f64(&mut out, traj.dt);
    put_f64(&mut out, traj.radius);
    for &x in &traj.bounds.lo {
        put_f64(&mut out, x);
    }
    for &x in &traj.bounds.hi {
        put_f64(&mut out, x);
    }
    out.extend_from_slice(&traj.materials);
    for &p in &traj.positions {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_trajectory(buf: &[u8]) -> Result<Trajectory> {
    let mut r = ByteReader::new(buf);
    let magic = r.take(4, "magic")?;
    if magic != TRAJECTORY_MAGIC {
        return Err(Error::format(0, format!("magic mismatch: expected RGNS, found {magic:?}")));
    }
    let version_at = r.offset();
    let version = r.u32("version")?;
    if version != TRAJECTORY_VERSION {
        return Err(Error::format(
            version_at,
            format!("unsupported version {version} (expected {TRAJECTORY_VERSION})"),
        ));
    }
    let dims_at = r.offset();
    let dims = r.u32("dims")? as usize;
    if dims != 2 && dims != 3 {
        return Err(Error::format(dims_at, format!("dimension must be 2 or 3, got {dims}")));
    }
    let n = r.u32("particle count")? as usize;
    let t = r.u32("step count")? as usize;
    let dt = r.f64("dt")?;
    let radius = r.f64("radius")?;
    let mut lo = Vec::with_capacity(dims);
    let mut hi = Vec::with_capacity(dims);
    for _ in 0..dims {
        lo.push(r.f64("box_lo")?);
    }
    for _ in 0..dims {
        hi.push(r.f64("box_hi")?);
    }
    let header_end = r.offset();
    let bounds = Bounds::new(lo, hi).map_err(|e| Error::format(header_end, e.to_string()))?;
    let materials = r.take(n, "materials")?.to_vec();
    let count = t
        .checked_mul(n)
        .and_then(|x| x.checked_mul(dims))
        .ok_or_else(|| Error::format(r.offset(), "position count overflows"))?;
    let raw = r.take(count * 4, "positions")?;
    let positions = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    r.expect_end()?;
    Trajectory::new(dt, radius, bounds, materials, positions, t)
        .map_err(|e| Error::format(header_end, e.to_string()))
}

pub fn write_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_trajectory(traj)).map_err(|e| Error::io(path, e))
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_trajectory(&buf)
}

/// Writes frames as CSV with header `step,particle,x,y[,z]`.
pub fn write_frames_csv(frames: &[StepState], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let dims = frames.first().map_or(2, |f| f.dims);
    let mut out = String::new();
    out.push_str("step,particle,x,y");
    if dims == 3 {
        out.push_str(",z");
    }
    out.push('\n');
    for f in frames {
        for i in 0..f.n_particles() {
            out.push_str(&format!("{},{}", f.time_index, i));
            for x in f.position(i) {
                out.push_str(&format!(",{x}"));
            }
            out.push('\n');
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
