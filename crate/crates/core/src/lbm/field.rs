//! Velocity/vorticity fields and snapshot export.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::LbmError;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"FDAF";

/// A 2D velocity field on the lattice; solid cells are excluded from
/// differencing.
#[derive(Clone, Debug)]
pub struct VelocityField<'a> {
    pub nx: usize,
    pub ny: usize,
    pub ux: &'a [f64],
    pub uy: &'a [f64],
    pub solid: Option<&'a [bool]>,
    pub periodic_x: bool,
    pub periodic_y: bool,
}

impl VelocityField<'_> {
    fn is_fluid(&self, idx: usize) -> bool {
        self.solid.is_none_or(|s| !s[idx])
    }

    /// Derivative of `values` at `(x, y)` along one axis, in cells: central
    /// where both neighbours are fluid, one-sided otherwise.
    fn derivative(&self, values: &[f64], x: usize, y: usize, along_x: bool) -> f64 {
        let (pos, len, periodic) = if along_x {
            (x, self.nx, self.periodic_x)
        } else {
            (y, self.ny, self.periodic_y)
        };
        let neighbour = |delta: i64| -> Option<usize> {
            let p = pos as i64 + delta;
            let p = if periodic {
                p.rem_euclid(len as i64) as usize
            } else if p < 0 || p >= len as i64 {
                return None;
            } else {
                p as usize
            };
            let idx = if along_x {
                y * self.nx + p
            } else {
                p * self.nx + x
            };
            self.is_fluid(idx).then_some(idx)
        };
        let here = values[y * self.nx + x];
        match (neighbour(-1), neighbour(1)) {
            (Some(l), Some(r)) => 0.5 * (values[r] - values[l]),
            (None, Some(r)) => values[r] - here,
            (Some(l), None) => here - values[l],
            (None, None) => 0.0,
        }
    }
}

/// `ω = ∂u_y/∂x − ∂u_x/∂y` on a unit-spaced grid; zero in solid cells.
pub fn vorticity(field: &VelocityField) -> Vec<f64> {
    let mut out = vec![0.0; field.nx * field.ny];
    for y in 0..field.ny {
        for x in 0..field.nx {
            let idx = y * field.nx + x;
            if !field.is_fluid(idx) {
                continue;
            }
            out[idx] =
                field.derivative(field.uy, x, y, true) - field.derivative(field.ux, x, y, false);
        }
    }
    out
}

/// `½ Σ ω²` over fluid cells (unit cell area).
pub fn enstrophy(omega: &[f64], solid: Option<&[bool]>) -> f64 {
    0.5 * omega
        .iter()
        .enumerate()
        .filter(|(i, _)| solid.is_none_or(|s| !s[*i]))
        .map(|(_, w)| w * w)
        .sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSnapshot {
    pub step: u64,
    pub nx: usize,
    pub ny: usize,
    pub ux: Vec<f32>,
    pub uy: Vec<f32>,
    pub vorticity: Vec<f32>,
}

/// Binary snapshot file: `"FDAF"`, then `nx`, `ny`, `count` as little-endian
/// u32, then for each snapshot the `ux`, `uy` and vorticity planes as
/// little-endian f32, row-major (`y * nx + x`).
pub fn write_fdaf<W: Write>(mut out: W, snapshots: &[FlowSnapshot]) -> Result<(), LbmError> {
    let (nx, ny) = snapshots.first().map_or((0, 0), |s| (s.nx, s.ny));
    if snapshots.iter().any(|s| s.nx != nx || s.ny != ny) {
        return Err(LbmError::Format("snapshots differ in size".into()));
    }
    out.write_all(SNAPSHOT_MAGIC)?;
    for v in [nx, ny, snapshots.len()] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    for s in snapshots {
        for plane in [&s.ux, &s.uy, &s.vorticity] {
            for v in plane.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads a file written by [`write_fdaf`]; step numbers are not stored and
/// come back as the snapshot index.
pub fn read_fdaf<R: Read>(mut input: R) -> Result<Vec<FlowSnapshot>, LbmError> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    if &header[..4] != SNAPSHOT_MAGIC {
        return Err(LbmError::Format("bad snapshot magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (nx, ny, count) = (word(1), word(2), word(3));
    let plane = |input: &mut R| -> io::Result<Vec<f32>> {
        let mut buf = vec![0u8; nx * ny * 4];
        input.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    (0..count)
        .map(|i| {
            Ok(FlowSnapshot {
                step: i as u64,
                nx,
                ny,
                ux: plane(&mut input)?,
                uy: plane(&mut input)?,
                vorticity: plane(&mut input)?,
            })
        })
        .collect()
}

/// `x,y,ux,uy,vorticity` rows for one snapshot.
pub fn write_snapshot_csv<W: Write>(out: W, snapshot: &FlowSnapshot) -> Result<(), LbmError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "ux", "uy", "vorticity"])
        .map_err(|e| LbmError::Format(e.to_string()))?;
    for y in 0..snapshot.ny {
        for x in 0..snapshot.nx {
            let i = y * snapshot.nx + x;
            w.write_record([
                x.to_string(),
                y.to_string(),
                snapshot.ux[i].to_string(),
                snapshot.uy[i].to_string(),
                snapshot.vorticity[i].to_string(),
            ])
            .map_err(|e| LbmError::Format(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}
