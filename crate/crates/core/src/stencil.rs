//! High-order star stencil: coefficient generation and tile application.
//!
//! The stencil footprint is a star (axis-aligned arms only), so a face-only
//! halo exchange is sufficient. Per-cell arithmetic is pinned to one exact
//! evaluation order: X terms in ascending offset, then Y terms, then Z terms,
//! each arm including its own center coefficient. Every parallel variant in
//! the workspace funnels through this one accumulation sequence, which is
//! what makes final fields bitwise comparable across runs.

use crate::error::{Error, Result};
use crate::field::{Field3, SharedField};
use crate::value::Value;

/// Star-arm half-lengths per axis, in cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Radii {
    pub rx: usize,
    pub ry: usize,
    pub rz: usize,
}

/// Traversal order of the loop nest. X is always innermost; the variants
/// differ in which of Y and Z is outermost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopOrder {
    /// Y outermost, Z middle, X innermost.
    Yzx,
    /// Z outermost, Y middle, X innermost.
    Zyx,
}

impl std::fmt::Display for LoopOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LoopOrder::Yzx => write!(f, "yzx"),
            LoopOrder::Zyx => write!(f, "zyx"),
        }
    }
}

impl std::str::FromStr for LoopOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "yzx" => Ok(LoopOrder::Yzx),
            "zyx" => Ok(LoopOrder::Zyx),
            other => Err(Error::Config(format!(
                "unknown loop order '{other}' (expected yzx or zyx)"
            ))),
        }
    }
}

/// Central-difference second-derivative weights of order `2*radius`,
/// returned as the full symmetric array `w[-radius ..= radius]` (ascending
/// offset, `2*radius + 1` entries), scaled by `1/spacing^2`.
///
/// Closed form of the Taylor-moment solution:
/// `w[0] = -2 * sum(1/m^2)`, `w[i] = 2*(-1)^(i+1)/i^2 * prod((r-m+1)/(r+m))`.
/// The running product keeps every intermediate within f64 range for any
/// practical radius, unlike the factorial form.
pub fn fd_weights(radius: usize, spacing: f64) -> Result<Vec<f64>> {
    if radius == 0 {
        return Err(Error::InvalidArgument(
            "stencil radius must be at least 1".into(),
        ));
    }
    if !(spacing > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "grid spacing must be positive, got {spacing}"
        )));
    }
    let r = radius;
    let inv_h2 = 1.0 / (spacing * spacing);
    let mut w = vec![0.0f64; 2 * r + 1];
    let mut center = 0.0f64;
    for m in 1..=r {
        center += 1.0 / (m as f64 * m as f64);
    }
    w[r] = -2.0 * center * inv_h2;
    let mut prod = 1.0f64;
    for i in 1..=r {
        prod *= (r - i + 1) as f64 / (r + i) as f64;
        let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
        let wi = 2.0 * sign / (i as f64 * i as f64) * prod * inv_h2;
        w[r + i] = wi;
        w[r - i] = wi;
    }
    Ok(w)
}

/// Star-stencil description: radii plus the full per-axis coefficient
/// arrays `cX[-rx ..= rx]`, `cY[-ry ..= ry]`, `cZ[-rz ..= rz]`.
#[derive(Debug, Clone)]
pub struct StencilSpec {
    pub radii: Radii,
    pub cx: Vec<f64>,
    pub cy: Vec<f64>,
    pub cz: Vec<f64>,
}

impl StencilSpec {
    /// Build the per-axis weight arrays from radii and grid spacing.
    pub fn from_radii(radii: Radii, spacing: f64) -> Result<Self> {
        let spec = StencilSpec {
            radii,
            cx: fd_weights(radii.rx, spacing)?,
            cy: fd_weights(radii.ry, spacing)?,
            cz: fd_weights(radii.rz, spacing)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Check the structural invariants: array lengths match the radii, each
    /// array is symmetric, and each sums to zero within 1e-10 relative to
    /// its largest-magnitude entry.
    pub fn validate(&self) -> Result<()> {
        let arms = [
            ("X", self.radii.rx, &self.cx),
            ("Y", self.radii.ry, &self.cy),
            ("Z", self.radii.rz, &self.cz),
        ];
        for (axis, r, c) in arms {
            if c.len() != 2 * r + 1 {
                return Err(Error::Config(format!(
                    "{axis} coefficient array has {} entries, expected {}",
                    c.len(),
                    2 * r + 1
                )));
            }
            let max_mag = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if max_mag == 0.0 {
                return Err(Error::Config(format!(
                    "{axis} coefficient array is all zero"
                )));
            }
            for i in 0..=r {
                if c[r + i] != c[r - i] {
                    return Err(Error::Config(format!(
                        "{axis} coefficients are not symmetric at offset {i}"
                    )));
                }
            }
            let sum: f64 = c.iter().sum();
            if sum.abs() > 1e-10 * max_mag {
                return Err(Error::Config(format!(
                    "{axis} coefficients sum to {sum:e}, exceeding 1e-10 of {max_mag:e}"
                )));
            }
        }
        Ok(())
    }
}

/// Number of stencil points lying in the X-Y plane and in the X-Z plane.
pub fn plane_footprints(spec: &StencilSpec) -> (usize, usize) {
    let r = spec.radii;
    (2 * r.rx + 2 * r.ry + 1, 2 * r.rx + 2 * r.rz + 1)
}

/// Half-open 3-D cell box in a block's interior coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Box3 {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub z0: usize,
    pub z1: usize,
}

impl Box3 {
    pub fn cells(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0) * (self.z1 - self.z0)
    }

    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1 || self.z0 >= self.z1
    }
}

fn check_tile<T: Value>(input: &Field3<T>, tile: Box3, radii: Radii) -> Result<()> {
    let ext = input.extents();
    let halo = input.halo();
    if tile.x1 > ext.nx || tile.y1 > ext.ny || tile.z1 > ext.nz {
        return Err(Error::Bounds(format!(
            "tile {tile:?} exceeds interior extents {}x{}x{}",
            ext.nx, ext.ny, ext.nz
        )));
    }
    if halo.hx < radii.rx || halo.hy < radii.ry || halo.hz < radii.rz {
        return Err(Error::Bounds(format!(
            "block halo ({}, {}, {}) cannot supply stencil radii ({}, {}, {})",
            halo.hx, halo.hy, halo.hz, radii.rx, radii.ry, radii.rz
        )));
    }
    Ok(())
}

/// Per-cell star sum with the pinned term order, reading raw offsets from a
/// center index. Coefficients arrive pre-converted to `T`.
///
/// # Safety
/// `center` and every arm offset from it must lie inside `input`.
#[inline]
unsafe fn star_at<T: Value>(
    input: *const T,
    center: usize,
    cx: &[T],
    cy: &[T],
    cz: &[T],
    sy: usize,
    sz: usize,
) -> T {
    let rx = cx.len() / 2;
    let ry = cy.len() / 2;
    let rz = cz.len() / 2;
    let mut acc = T::zero();
    unsafe {
        let base_x = center - rx;
        for (i, &c) in cx.iter().enumerate() {
            acc = acc + c * *input.add(base_x + i);
        }
        let base_y = center - ry * sy;
        for (j, &c) in cy.iter().enumerate() {
            acc = acc + c * *input.add(base_y + j * sy);
        }
        let base_z = center - rz * sz;
        for (k, &c) in cz.iter().enumerate() {
            acc = acc + c * *input.add(base_z + k * sz);
        }
    }
    acc
}

/// Coefficients of a [`StencilSpec`] converted once to the field value type.
#[derive(Debug, Clone)]
pub struct KernelCoeffs<T: Value> {
    pub radii: Radii,
    pub cx: Vec<T>,
    pub cy: Vec<T>,
    pub cz: Vec<T>,
}

impl<T: Value> KernelCoeffs<T> {
    pub fn of(spec: &StencilSpec) -> Self {
        KernelCoeffs {
            radii: spec.radii,
            cx: spec.cx.iter().map(|&c| T::from_f64(c)).collect(),
            cy: spec.cy.iter().map(|&c| T::from_f64(c)).collect(),
            cz: spec.cz.iter().map(|&c| T::from_f64(c)).collect(),
        }
    }
}

/// Apply the star operator to `tile` of `input`, writing into `output`
/// through a shared view. Safe for concurrent calls on disjoint tiles.
pub fn apply_stencil_shared<T: Value>(
    input: &Field3<T>,
    output: &SharedField<T>,
    tile: Box3,
    coeffs: &KernelCoeffs<T>,
    order: LoopOrder,
) -> Result<()> {
    check_tile(input, tile, coeffs.radii)?;
    if tile.is_empty() {
        return Ok(());
    }
    let (_, sy, sz) = input.strides();
    let in_ptr = input.as_slice().as_ptr();
    let row = |y: usize, z: usize| {
        let c0 = input.index(tile.x0 as isize, y as isize, z as isize);
        let o0 = output.index(tile.x0 as isize, y as isize, z as isize);
        for dx in 0..tile.x1 - tile.x0 {
            // In-bounds: tile is inside the interior and the halo covers
            // every arm offset (checked above).
            unsafe {
                let v = star_at(in_ptr, c0 + dx, &coeffs.cx, &coeffs.cy, &coeffs.cz, sy, sz);
                output.write_raw(o0 + dx, v);
            }
        }
    };
    match order {
        LoopOrder::Yzx => {
            for y in tile.y0..tile.y1 {
                for z in tile.z0..tile.z1 {
                    row(y, z);
                }
            }
        }
        LoopOrder::Zyx => {
            for z in tile.z0..tile.z1 {
                for y in tile.y0..tile.y1 {
                    row(y, z);
                }
            }
        }
    }
    Ok(())
}

/// Single-threaded convenience wrapper over [`apply_stencil_shared`].
pub fn apply_stencil<T: Value>(
    input: &Field3<T>,
    output: &mut Field3<T>,
    tile: Box3,
    spec: &StencilSpec,
    order: LoopOrder,
) -> Result<()> {
    let coeffs = KernelCoeffs::of(spec);
    let view = SharedField::new(output);
    apply_stencil_shared(input, &view, tile, &coeffs, order)
}
