//! Set-associative LRU cache model for comparing tile loop orders.
//!
//! The model replays the exact byte addresses a star-stencil tile sweep
//! touches in the pressure blocks (no velocity array, no instruction or
//! prefetch effects) and reports hit/miss counts. It is a locality model,
//! not a cycle model; acceptance uses the miss-count direction between
//! loop orders, not magnitudes.

use crate::error::{Error, Result};
use crate::stencil::{Box3, LoopOrder, StencilSpec};

/// Cache geometry. Defaults model a 256 KiB, 8-way, 64-byte-line L2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheModel {
    pub capacity: usize,
    pub line: usize,
    pub ways: usize,
    /// Bytes per field element (4 for f32, 8 for f64).
    pub elem_bytes: usize,
}

impl Default for CacheModel {
    fn default() -> CacheModel {
        CacheModel {
            capacity: 256 * 1024,
            line: 64,
            ways: 8,
            elem_bytes: 4,
        }
    }
}

impl CacheModel {
    /// Validate the geometry and return the number of sets.
    pub fn sets(&self) -> Result<usize> {
        if self.line == 0 || !self.line.is_power_of_two() {
            return Err(Error::Config(format!(
                "cache line size must be a power of two, got {}",
                self.line
            )));
        }
        if self.ways == 0 {
            return Err(Error::Config("cache needs at least one way".into()));
        }
        if self.elem_bytes == 0 {
            return Err(Error::Config("element size must be nonzero".into()));
        }
        let way_bytes = self.line * self.ways;
        if self.capacity == 0 || self.capacity % way_bytes != 0 {
            return Err(Error::Config(format!(
                "capacity {} is not an integral number of sets of {} ways x {}-byte lines",
                self.capacity, self.ways, self.line
            )));
        }
        Ok(self.capacity / way_bytes)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
}

/// Padded X-fastest row-major layout of the input and output blocks.
/// `ax`/`ay` are the allocation's X-row length and rows per Z plane, in
/// elements; bases are byte addresses of each block's element (0,0,0).
#[derive(Debug, Clone, Copy)]
pub struct StreamLayout {
    pub ax: usize,
    pub ay: usize,
    pub in_base: u64,
    pub out_base: u64,
    pub elem_bytes: usize,
}

/// Byte addresses touched by one tile sweep, in loop-nest order. Per cell:
/// the X-arm reads (center included), the Y-arm and Z-arm reads (center
/// excluded), each ascending by offset, then the output write. `tile` is
/// given in padded-allocation coordinates and must leave room for the arm
/// offsets.
pub fn access_stream(
    tile: Box3,
    spec: &StencilSpec,
    order: LoopOrder,
    layout: &StreamLayout,
) -> Vec<u64> {
    let r = spec.radii;
    let per_cell = 2 * (r.rx + r.ry + r.rz) + 2;
    let mut out = Vec::with_capacity(tile.cells() * per_cell);
    let eb = layout.elem_bytes as i64;
    let ax = layout.ax as i64;
    let ay = layout.ay as i64;
    let mut cell = |x: usize, y: usize, z: usize| {
        let l = (z as i64 * ay + y as i64) * ax + x as i64;
        let read = |o: i64| {
            let addr = layout.in_base as i64 + (l + o) * eb;
            debug_assert!(addr >= 0, "arm offset escapes the allocation");
            addr as u64
        };
        for o in -(r.rx as i64)..=r.rx as i64 {
            out.push(read(o));
        }
        for o in -(r.ry as i64)..=r.ry as i64 {
            if o != 0 {
                out.push(read(o * ax));
            }
        }
        for o in -(r.rz as i64)..=r.rz as i64 {
            if o != 0 {
                out.push(read(o * ax * ay));
            }
        }
        out.push(layout.out_base + (l * eb) as u64);
    };
    match order {
        LoopOrder::Yzx => {
            for y in tile.y0..tile.y1 {
                for z in tile.z0..tile.z1 {
                    for x in tile.x0..tile.x1 {
                        cell(x, y, z);
                    }
                }
            }
        }
        LoopOrder::Zyx => {
            for z in tile.z0..tile.z1 {
                for y in tile.y0..tile.y1 {
                    for x in tile.x0..tile.x1 {
                        cell(x, y, z);
                    }
                }
            }
        }
    }
    out
}

/// Exact set-associative LRU replay of an address stream.
pub fn cache_simulate(stream: &[u64], model: &CacheModel) -> Result<CacheStats> {
    let set_count = model.sets()?;
    // MRU at the back of each set.
    let mut sets: Vec<Vec<u64>> = vec![Vec::with_capacity(model.ways); set_count];
    let mut stats = CacheStats {
        accesses: stream.len() as u64,
        ..CacheStats::default()
    };
    for &addr in stream {
        let line = addr / model.line as u64;
        let set = &mut sets[(line % set_count as u64) as usize];
        if let Some(pos) = set.iter().position(|&l| l == line) {
            stats.hits += 1;
            set.remove(pos);
            set.push(line);
        } else {
            stats.misses += 1;
            if set.len() == model.ways {
                set.remove(0);
                stats.evictions += 1;
            }
            set.push(line);
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stencil::Radii;

    fn spec(rx: usize, ry: usize, rz: usize) -> StencilSpec {
        StencilSpec::from_radii(Radii { rx, ry, rz }, 1.0).unwrap()
    }

    fn layout(ax: usize, ay: usize, elem_bytes: usize) -> StreamLayout {
        StreamLayout {
            ax,
            ay,
            in_base: 0,
            out_base: (ax * ay * 1024 * elem_bytes) as u64,
            elem_bytes,
        }
    }

    #[test]
    fn single_cell_unit_radii_emits_eight_addresses() {
        let tile = Box3 {
            x0: 1,
            x1: 2,
            y0: 1,
            y1: 2,
            z0: 1,
            z1: 2,
        };
        let s = access_stream(tile, &spec(1, 1, 1), LoopOrder::Zyx, &layout(8, 8, 4));
        assert_eq!(s.len(), 8);
    }

    #[test]
    fn stream_length_is_66_per_cell_at_default_radii() {
        let tile = Box3 {
            x0: 12,
            x1: 28,
            y0: 12,
            y1: 20,
            z0: 8,
            z1: 16,
        };
        let s = access_stream(tile, &spec(12, 12, 8), LoopOrder::Yzx, &layout(64, 48, 4));
        assert_eq!(s.len(), 16 * 8 * 8 * 66);
    }

    #[test]
    fn orders_touch_the_same_address_multiset() {
        let tile = Box3 {
            x0: 2,
            x1: 6,
            y0: 2,
            y1: 7,
            z0: 2,
            z1: 5,
        };
        let lay = layout(16, 16, 8);
        let sp = spec(2, 2, 2);
        let mut a = access_stream(tile, &sp, LoopOrder::Yzx, &lay);
        let mut b = access_stream(tile, &sp, LoopOrder::Zyx, &lay);
        assert_ne!(a, b);
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn reuse_distance_one_hits() {
        let model = CacheModel {
            capacity: 1024,
            line: 64,
            ways: 2,
            elem_bytes: 4,
        };
        let stats = cache_simulate(&[0, 64, 0], &model).unwrap();
        assert_eq!(stats.misses, 2);
        assert_eq!(stats.hits, 1);
        assert_eq!(stats.evictions, 0);
        assert_eq!(stats.accesses, stats.hits + stats.misses);
    }

    #[test]
    fn lru_evicts_the_least_recently_used_line() {
        // One set of two ways: lines A B A C -> C evicts B, not A.
        let model = CacheModel {
            capacity: 128,
            line: 64,
            ways: 2,
            elem_bytes: 4,
        };
        let a = 0u64;
        let b = 64u64;
        let c = 128u64;
        let stats = cache_simulate(&[a, b, a, c, a], &model).unwrap();
        assert_eq!(stats.hits, 2);
        assert_eq!(stats.misses, 3);
        assert_eq!(stats.evictions, 1);
    }

    #[test]
    fn replay_within_capacity_is_all_hits() {
        let tile = Box3 {
            x0: 2,
            x1: 10,
            y0: 2,
            y1: 8,
            z0: 2,
            z1: 8,
        };
        let lay = layout(16, 12, 4);
        let once = access_stream(tile, &spec(2, 2, 2), LoopOrder::Zyx, &lay);
        let mut twice = once.clone();
        twice.extend_from_slice(&once);
        let model = CacheModel {
            capacity: 1024 * 1024,
            line: 64,
            ways: 16,
            elem_bytes: 4,
        };
        let s1 = cache_simulate(&once, &model).unwrap();
        let s2 = cache_simulate(&twice, &model).unwrap();
        assert_eq!(s1.misses, s2.misses);
        assert_eq!(s2.hits, s1.hits + once.len() as u64);
    }

    #[test]
    fn fully_associative_large_cache_sees_only_cold_misses() {
        let stream: Vec<u64> = [5u64, 70, 5, 700, 70, 1300, 5]
            .iter()
            .map(|a| a * 1)
            .collect();
        let model = CacheModel {
            capacity: 64 * 64,
            line: 64,
            ways: 64,
            elem_bytes: 4,
        };
        let stats = cache_simulate(&stream, &model).unwrap();
        let mut lines: Vec<u64> = stream.iter().map(|a| a / 64).collect();
        lines.sort_unstable();
        lines.dedup();
        assert_eq!(stats.misses, lines.len() as u64);
        assert_eq!(stats.evictions, 0);
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let mut m = CacheModel::default();
        m.line = 48;
        assert!(m.sets().is_err());
        let mut m = CacheModel::default();
        m.capacity = 1000;
        assert!(m.sets().is_err());
        let mut m = CacheModel::default();
        m.ways = 0;
        assert!(m.sets().is_err());
        assert_eq!(CacheModel::default().sets().unwrap(), 512);
    }

    #[test]
    fn zyx_order_misses_fewer_lines_than_yzx_at_l2_scale() {
        // One 64x32x32 tile of 32-bit values at radii (12,12,8) against the
        // default 256 KiB model: the z-outer sweep keeps the y-arm planes
        // resident, the y-outer sweep thrashes them.
        let radii = Radii {
            rx: 12,
            ry: 12,
            rz: 8,
        };
        let sp = spec(radii.rx, radii.ry, radii.rz);
        let (tx, ty, tz) = (64usize, 32, 32);
        let (ax, ay, az) = (tx + 2 * radii.rx, ty + 2 * radii.ry, tz + 2 * radii.rz);
        let lay = StreamLayout {
            ax,
            ay,
            in_base: 0,
            out_base: (ax * ay * az * 4) as u64,
            elem_bytes: 4,
        };
        let tile = Box3 {
            x0: radii.rx,
            x1: radii.rx + tx,
            y0: radii.ry,
            y1: radii.ry + ty,
            z0: radii.rz,
            z1: radii.rz + tz,
        };
        let model = CacheModel::default();
        let misses = |order: LoopOrder| {
            let stream = access_stream(tile, &sp, order, &lay);
            cache_simulate(&stream, &model).unwrap().misses
        };
        assert!(misses(LoopOrder::Zyx) < misses(LoopOrder::Yzx));
    }

    #[test]
    fn wider_x_radius_never_reduces_misses() {
        let model = CacheModel {
            capacity: 16 * 1024,
            line: 64,
            ways: 4,
            elem_bytes: 4,
        };
        let lay = layout(40, 36, 4);
        let tile = Box3 {
            x0: 6,
            x1: 30,
            y0: 6,
            y1: 30,
            z0: 6,
            z1: 26,
        };
        let mut prev = 0u64;
        for rx in [1usize, 2, 4, 6] {
            let s = access_stream(tile, &spec(rx, 2, 2), LoopOrder::Zyx, &lay);
            let misses = cache_simulate(&s, &model).unwrap().misses;
            assert!(misses >= prev, "rx={rx}: {misses} < {prev}");
            prev = misses;
        }
    }
}
