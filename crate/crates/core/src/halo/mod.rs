//! Halo exchange: face slabs, wire encoding, transports, and the three
//! exchange strategies.
//!
//! Only the four X/Y faces are ever exchanged. Z is never decomposed, and a
//! star stencil reads no diagonal offsets, so corner ghosts stay untouched.
//! Slabs carry interior data into the neighbor's ghost region
//! (owner-computes); one exchange per step suffices.

pub mod exchange;
pub mod transport;
pub mod wire;

use crate::error::{Error, Result};
use crate::field::{Extents, Field3, Halo, SharedField};
use crate::value::Value;

/// One of the four exchangeable faces of a subdomain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaceId {
    XLow,
    XHigh,
    YLow,
    YHigh,
}

impl FaceId {
    pub const ALL: [FaceId; 4] = [FaceId::XLow, FaceId::XHigh, FaceId::YLow, FaceId::YHigh];

    pub fn opposite(self) -> FaceId {
        match self {
            FaceId::XLow => FaceId::XHigh,
            FaceId::XHigh => FaceId::XLow,
            FaceId::YLow => FaceId::YHigh,
            FaceId::YHigh => FaceId::YLow,
        }
    }

    /// Wire code, also the canonical ordering of faces.
    pub fn code(self) -> u8 {
        match self {
            FaceId::XLow => 0,
            FaceId::XHigh => 1,
            FaceId::YLow => 2,
            FaceId::YHigh => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<FaceId> {
        match code {
            0 => Some(FaceId::XLow),
            1 => Some(FaceId::XHigh),
            2 => Some(FaceId::YLow),
            3 => Some(FaceId::YHigh),
            _ => None,
        }
    }
}

impl std::fmt::Display for FaceId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self)
    }
}

/// One packed face slab in flight between two ranks.
///
/// `face` names the face of the *receiving* rank whose ghost region the
/// payload fills; a sender packing its XLow slab addresses the message to
/// face XHigh of its XLow neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct HaloMessage<T: Value> {
    pub source: u32,
    pub dest: u32,
    pub step: u64,
    pub face: FaceId,
    pub payload: Vec<T>,
}

/// Copy the interior slab adjacent to `face` (the cells the neighbor needs)
/// in canonical order: Z outer, Y middle, X inner.
pub fn pack_halo<T: Value>(field: &Field3<T>, face: FaceId, hx: usize, hy: usize) -> Result<Vec<T>> {
    let ext = field.extents();
    let (x0, x1, y0, y1) = match face {
        FaceId::XLow | FaceId::XHigh => {
            if hx > ext.nx {
                return Err(Error::Bounds(format!(
                    "halo width {hx} exceeds X extent {}",
                    ext.nx
                )));
            }
            match face {
                FaceId::XLow => (0, hx, 0, ext.ny),
                _ => (ext.nx - hx, ext.nx, 0, ext.ny),
            }
        }
        FaceId::YLow | FaceId::YHigh => {
            if hy > ext.ny {
                return Err(Error::Bounds(format!(
                    "halo width {hy} exceeds Y extent {}",
                    ext.ny
                )));
            }
            match face {
                FaceId::YLow => (0, ext.nx, 0, hy),
                _ => (0, ext.nx, ext.ny - hy, ext.ny),
            }
        }
    };
    let mut payload = Vec::with_capacity((x1 - x0) * (y1 - y0) * ext.nz);
    for z in 0..ext.nz as isize {
        for y in y0 as isize..y1 as isize {
            for x in x0 as isize..x1 as isize {
                payload.push(field.get(x, y, z));
            }
        }
    }
    Ok(payload)
}

fn ghost_slab(ext: Extents, halo: Halo, face: FaceId) -> (isize, isize, isize, isize) {
    match face {
        FaceId::XLow => (-(halo.hx as isize), 0, 0, ext.ny as isize),
        FaceId::XHigh => (
            ext.nx as isize,
            (ext.nx + halo.hx) as isize,
            0,
            ext.ny as isize,
        ),
        FaceId::YLow => (0, ext.nx as isize, -(halo.hy as isize), 0),
        FaceId::YHigh => (
            0,
            ext.nx as isize,
            ext.ny as isize,
            (ext.ny + halo.hy) as isize,
        ),
    }
}

fn check_slab_len(
    ext: Extents,
    (x0, x1, y0, y1): (isize, isize, isize, isize),
    face: FaceId,
    len: usize,
) -> Result<()> {
    let expected = ((x1 - x0) * (y1 - y0)) as usize * ext.nz;
    if len != expected {
        return Err(Error::Protocol(format!(
            "ghost slab for face {face} holds {expected} values, payload has {len}"
        )));
    }
    Ok(())
}

/// Write a received payload into the ghost slab outside `face`, canonical
/// order, touching no interior cell. Slab widths come from the block's own
/// halo, which equals the exchange widths everywhere in this workspace.
pub fn unpack_halo<T: Value>(field: &mut Field3<T>, face: FaceId, payload: &[T]) -> Result<()> {
    let ext = field.extents();
    let slab = ghost_slab(ext, field.halo(), face);
    check_slab_len(ext, slab, face, payload.len())?;
    let (x0, x1, y0, y1) = slab;
    let mut it = payload.iter();
    for z in 0..ext.nz as isize {
        for y in y0..y1 {
            for x in x0..x1 {
                field.set(x, y, z, *it.next().unwrap());
            }
        }
    }
    Ok(())
}

/// [`unpack_halo`] through a shared view, for one-face-per-worker unpacking.
/// Ghost slabs of distinct faces are disjoint (corners are never written),
/// which is what makes concurrent per-face calls sound under the view's
/// disjoint-writers contract.
pub fn unpack_halo_shared<T: Value>(
    field: &SharedField<T>,
    face: FaceId,
    payload: &[T],
) -> Result<()> {
    let ext = field.extents();
    let slab = ghost_slab(ext, field.halo(), face);
    check_slab_len(ext, slab, face, payload.len())?;
    let (x0, x1, y0, y1) = slab;
    let mut it = payload.iter();
    for z in 0..ext.nz as isize {
        for y in y0..y1 {
            for x in x0..x1 {
                // In-bounds: the slab enumeration stays inside the ghost
                // padding, and faces never overlap.
                unsafe { field.write(x, y, z, *it.next().unwrap()) };
            }
        }
    }
    Ok(())
}
