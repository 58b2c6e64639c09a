//! Padded 3-D field storage.
//!
//! A [`Field3`] owns one contiguous block laid out X-fastest, then Y, then Z,
//! with ghost padding on every axis. X and Y ghosts are filled by halo
//! exchange at internal partition faces and stay zero at global boundaries;
//! Z is never split, so its ghosts are always zero. Interior coordinates are
//! addressed as `(x, y, z)` in `[0, nx) x [0, ny) x [0, nz)`; ghost cells sit
//! at negative offsets and past the interior extent. All kernels, pack/unpack
//! routines, and snapshots index through the same linear map, which is what
//! makes bitwise comparisons across runs meaningful.

use crate::value::Value;

/// Interior extents of a field block, excluding padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extents {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Extents {
    pub fn cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }
}

/// Ghost padding widths per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Halo {
    pub hx: usize,
    pub hy: usize,
    pub hz: usize,
}

/// One padded scalar block.
#[derive(Debug, Clone)]
pub struct Field3<T: Value> {
    ext: Extents,
    halo: Halo,
    /// Allocated X extent, `nx + 2*hx`.
    ax: usize,
    /// Allocated Y extent, `ny + 2*hy`.
    ay: usize,
    data: Vec<T>,
}

impl<T: Value> Field3<T> {
    pub fn zeroed(ext: Extents, halo: Halo) -> Self {
        let ax = ext.nx + 2 * halo.hx;
        let ay = ext.ny + 2 * halo.hy;
        let az = ext.nz + 2 * halo.hz;
        let len = ax * ay * az;
        Field3 {
            ext,
            halo,
            ax,
            ay,
            data: vec![T::zero(); len],
        }
    }

    pub fn extents(&self) -> Extents {
        self.ext
    }

    pub fn halo(&self) -> Halo {
        self.halo
    }

    /// Allocated bytes of the backing block, ghosts included.
    pub fn allocated_bytes(&self) -> usize {
        self.data.len() * T::BYTES
    }

    /// Linear index of interior-relative `(x, y, z)`. Accepts ghost offsets:
    /// `x` in `[-hx, nx + hx)`, and likewise for Y and Z.
    #[inline]
    pub fn index(&self, x: isize, y: isize, z: isize) -> usize {
        debug_assert!(x >= -(self.halo.hx as isize) && x < (self.ext.nx + self.halo.hx) as isize);
        debug_assert!(y >= -(self.halo.hy as isize) && y < (self.ext.ny + self.halo.hy) as isize);
        debug_assert!(z >= -(self.halo.hz as isize) && z < (self.ext.nz + self.halo.hz) as isize);
        let px = (x + self.halo.hx as isize) as usize;
        let py = (y + self.halo.hy as isize) as usize;
        let pz = (z + self.halo.hz as isize) as usize;
        (pz * self.ay + py) * self.ax + px
    }

    #[inline]
    pub fn get(&self, x: isize, y: isize, z: isize) -> T {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: isize, y: isize, z: isize, v: T) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    #[inline]
    pub fn add(&mut self, x: isize, y: isize, z: isize, v: T) {
        let i = self.index(x, y, z);
        self.data[i] = self.data[i] + v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Strides of the linear map: `(x, y, z)` advance by `(1, ax, ax*ay)`.
    pub fn strides(&self) -> (usize, usize, usize) {
        (1, self.ax, self.ax * self.ay)
    }

    pub fn fill(&mut self, v: T) {
        self.data.fill(v);
    }

    /// Copy every element of `src` into `self`. Blocks must match in shape.
    pub fn copy_from(&mut self, src: &Field3<T>) {
        assert_eq!(self.ext, src.ext);
        assert_eq!(self.halo, src.halo);
        self.data.copy_from_slice(&src.data);
    }

    /// Bitwise equality over interior cells only (ghosts excluded).
    pub fn interior_bits_equal(&self, other: &Field3<T>) -> bool {
        if self.ext != other.ext {
            return false;
        }
        for z in 0..self.ext.nz as isize {
            for y in 0..self.ext.ny as isize {
                for x in 0..self.ext.nx as isize {
                    if self.get(x, y, z).bit_pattern() != other.get(x, y, z).bit_pattern() {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Largest absolute interior difference, in f64.
    pub fn max_abs_diff(&self, other: &Field3<T>) -> f64 {
        assert_eq!(self.ext, other.ext);
        let mut m = 0.0f64;
        for z in 0..self.ext.nz as isize {
            for y in 0..self.ext.ny as isize {
                for x in 0..self.ext.nx as isize {
                    let d = (self.get(x, y, z).to_f64() - other.get(x, y, z).to_f64()).abs();
                    if d > m {
                        m = d;
                    }
                }
            }
        }
        m
    }
}

/// Shared view of one field used by the tile workers.
///
/// Tiles never overlap, so each worker writes a disjoint set of cells; reads
/// go to a different (input) block. The pointer is stashed as a raw address
/// to let the same view be handed to several threads.
pub struct SharedField<T: Value> {
    ptr: *mut T,
    len: usize,
    ax: usize,
    ay: usize,
    ext: Extents,
    halo: Halo,
}

unsafe impl<T: Value> Send for SharedField<T> {}
unsafe impl<T: Value> Sync for SharedField<T> {}

impl<T: Value> SharedField<T> {
    /// Callers must guarantee that concurrent writers touch disjoint cells
    /// and that the field outlives every use of the view.
    pub fn new(field: &mut Field3<T>) -> Self {
        let halo = field.halo();
        let ext = field.extents();
        let (_, ax, axay) = field.strides();
        let ay = axay / ax;
        SharedField {
            ptr: field.as_mut_slice().as_mut_ptr(),
            len: field.as_slice().len(),
            ax,
            ay,
            ext,
            halo,
        }
    }

    pub fn extents(&self) -> Extents {
        self.ext
    }

    pub fn halo(&self) -> Halo {
        self.halo
    }

    #[inline]
    pub fn index(&self, x: isize, y: isize, z: isize) -> usize {
        let px = (x + self.halo.hx as isize) as usize;
        let py = (y + self.halo.hy as isize) as usize;
        let pz = (z + self.halo.hz as isize) as usize;
        (pz * self.ay + py) * self.ax + px
    }

    /// # Safety
    /// The cell must be inside the allocation and not written concurrently.
    #[inline]
    pub unsafe fn write(&self, x: isize, y: isize, z: isize, v: T) {
        let i = self.index(x, y, z);
        debug_assert!(i < self.len);
        unsafe { *self.ptr.add(i) = v };
    }

    /// # Safety
    /// The cell must be inside the allocation and not written concurrently.
    #[inline]
    pub unsafe fn read(&self, x: isize, y: isize, z: isize) -> T {
        let i = self.index(x, y, z);
        debug_assert!(i < self.len);
        unsafe { *self.ptr.add(i) }
    }

    /// # Safety
    /// `i` must be a valid linear index, not written concurrently.
    #[inline]
    pub unsafe fn write_raw(&self, i: usize, v: T) {
        debug_assert!(i < self.len);
        unsafe { *self.ptr.add(i) = v };
    }

    /// # Safety
    /// `i` must be a valid linear index, not written concurrently.
    #[inline]
    pub unsafe fn read_raw(&self, i: usize) -> T {
        debug_assert!(i < self.len);
        unsafe { *self.ptr.add(i) }
    }
}
