//! Global grid, 2-D domain decomposition, and tile maps.
//!
//! The global volume is split over a `px x py` process grid in X and Y only;
//! Z always stays whole on every rank. Remainder cells along a split axis go
//! to the highest-coordinate part, so all other parts share one extent.
//! Rank ids walk the Cartesian grid Y-fastest: `rank = cx * py + cy`.

use crate::error::{Error, Result};
use crate::halo::FaceId;
use crate::stencil::Radii;

/// Global problem extents and isotropic grid spacing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalGrid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Spacing in meters, shared by all three axes.
    pub dx: f64,
}

impl GlobalGrid {
    pub fn cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }
}

/// Process-grid shape. Z is never decomposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decomposition {
    pub px: usize,
    pub py: usize,
}

impl Decomposition {
    pub fn ranks(&self) -> usize {
        self.px * self.py
    }

    /// Cartesian coordinates of `rank` under Y-fastest ordering.
    pub fn coords(&self, rank: u32) -> (usize, usize) {
        let r = rank as usize;
        (r / self.py, r % self.py)
    }

    pub fn rank_of(&self, cx: usize, cy: usize) -> u32 {
        (cx * self.py + cy) as u32
    }
}

impl std::fmt::Display for Decomposition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.px, self.py)
    }
}

/// One rank's slab of the global grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Subdomain {
    pub rank: u32,
    /// Cartesian position in the process grid.
    pub cx: usize,
    pub cy: usize,
    /// Local interior extents.
    pub lx: usize,
    pub ly: usize,
    pub lz: usize,
    /// Global offset of local cell (0, 0, 0).
    pub ox: usize,
    pub oy: usize,
    pub oz: usize,
    /// Exchange halo widths (equal to the stencil radii in X and Y).
    pub hx: usize,
    pub hy: usize,
}

impl Subdomain {
    pub fn cells(&self) -> usize {
        self.lx * self.ly * self.lz
    }

    /// Whether global cell `(gx, gy, gz)` lies in this rank's interior.
    pub fn owns(&self, gx: usize, gy: usize, gz: usize) -> bool {
        gx >= self.ox
            && gx < self.ox + self.lx
            && gy >= self.oy
            && gy < self.oy + self.ly
            && gz >= self.oz
            && gz < self.oz + self.lz
    }
}

fn split_axis(n: usize, parts: usize) -> Vec<(usize, usize)> {
    let base = n / parts;
    let rem = n % parts;
    (0..parts)
        .map(|i| {
            let len = if i == parts - 1 { base + rem } else { base };
            (i * base, len)
        })
        .collect()
}

/// Split `grid` over `decomp`, attaching halo widths from `radii`.
///
/// Fails when a split axis would produce a part thinner than its halo width,
/// since a face exchange must be satisfiable by the single nearest neighbor.
pub fn decompose(grid: &GlobalGrid, decomp: &Decomposition, radii: Radii) -> Result<Vec<Subdomain>> {
    if decomp.px == 0 || decomp.py == 0 {
        return Err(Error::Config(format!(
            "decomposition {} has a zero axis",
            decomp
        )));
    }
    if grid.nx < decomp.px || grid.ny < decomp.py {
        return Err(Error::Config(format!(
            "grid {}x{}x{} too small for decomposition {}",
            grid.nx, grid.ny, grid.nz, decomp
        )));
    }
    let xs = split_axis(grid.nx, decomp.px);
    let ys = split_axis(grid.ny, decomp.py);
    let mut subs = Vec::with_capacity(decomp.ranks());
    for cx in 0..decomp.px {
        for cy in 0..decomp.py {
            let rank = decomp.rank_of(cx, cy);
            let (ox, lx) = xs[cx];
            let (oy, ly) = ys[cy];
            if lx < radii.rx {
                return Err(Error::Config(format!(
                    "rank {rank} X extent {lx} is thinner than the halo width {}",
                    radii.rx
                )));
            }
            if ly < radii.ry {
                return Err(Error::Config(format!(
                    "rank {rank} Y extent {ly} is thinner than the halo width {}",
                    radii.ry
                )));
            }
            subs.push(Subdomain {
                rank,
                cx,
                cy,
                lx,
                ly,
                lz: grid.nz,
                ox,
                oy,
                oz: 0,
                hx: radii.rx,
                hy: radii.ry,
            });
        }
    }
    Ok(subs)
}

/// Face neighbors of `sub`, in fixed order XLow, XHigh, YLow, YHigh.
/// Boundaries are open: no periodic wrap, no diagonal neighbors.
pub fn neighbors_of(sub: &Subdomain, decomp: &Decomposition) -> Vec<(FaceId, u32)> {
    let mut out = Vec::with_capacity(4);
    if sub.cx > 0 {
        out.push((FaceId::XLow, decomp.rank_of(sub.cx - 1, sub.cy)));
    }
    if sub.cx + 1 < decomp.px {
        out.push((FaceId::XHigh, decomp.rank_of(sub.cx + 1, sub.cy)));
    }
    if sub.cy > 0 {
        out.push((FaceId::YLow, decomp.rank_of(sub.cx, sub.cy - 1)));
    }
    if sub.cy + 1 < decomp.py {
        out.push((FaceId::YHigh, decomp.rank_of(sub.cx, sub.cy + 1)));
    }
    out
}

/// Half-open Y-Z tile, in local coordinates of the region it partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub y0: usize,
    pub y1: usize,
    pub z0: usize,
    pub z1: usize,
}

impl Tile {
    pub fn cells_per_x(&self) -> usize {
        (self.y1 - self.y0) * (self.z1 - self.z0)
    }
}

/// Collapsed tile loop over a Y-Z region: tile `k` covers
/// `(iy, iz) = (k / tiles_z, k % tiles_z)`, matching a two-level loop with
/// Y outer flattened into one index space.
#[derive(Debug, Clone)]
pub struct TileMap {
    pub ty: usize,
    pub tz: usize,
    pub tiles: Vec<Tile>,
    pub tiles_y: usize,
    pub tiles_z: usize,
}

impl TileMap {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }
}

/// Tile the Y-Z box `[y0, y1) x [z0, z1)` with `ty x tz` tiles. Remainder
/// tiles sit at the high end of each axis.
pub fn tile_region(y0: usize, y1: usize, z0: usize, z1: usize, ty: usize, tz: usize) -> TileMap {
    assert!(ty > 0 && tz > 0, "tile extents must be positive");
    let ny = y1 - y0;
    let nz = z1 - z0;
    let tiles_y = ny.div_ceil(ty);
    let tiles_z = nz.div_ceil(tz);
    let mut tiles = Vec::with_capacity(tiles_y * tiles_z);
    for iy in 0..tiles_y {
        for iz in 0..tiles_z {
            tiles.push(Tile {
                y0: y0 + iy * ty,
                y1: (y0 + (iy + 1) * ty).min(y1),
                z0: z0 + iz * tz,
                z1: (z0 + (iz + 1) * tz).min(z1),
            });
        }
    }
    TileMap {
        ty,
        tz,
        tiles,
        tiles_y,
        tiles_z,
    }
}

/// Tile a local Y-Z extent starting at the origin.
pub fn tile_partition(extent_y: usize, extent_z: usize, ty: usize, tz: usize) -> TileMap {
    tile_region(0, extent_y, 0, extent_z, ty, tz)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn radii(rx: usize, ry: usize, rz: usize) -> Radii {
        Radii { rx, ry, rz }
    }

    #[test]
    fn remainder_goes_to_last_part() {
        let parts = split_axis(102, 4);
        assert_eq!(parts, vec![(0, 25), (25, 25), (50, 25), (75, 27)]);
    }

    #[test]
    fn decompose_two_by_eight() {
        let grid = GlobalGrid { nx: 96, ny: 96, nz: 48, dx: 10.0 };
        let decomp = Decomposition { px: 2, py: 8 };
        let subs = decompose(&grid, &decomp, radii(4, 4, 2)).unwrap();
        assert_eq!(subs.len(), 16);
        for s in &subs {
            assert_eq!(s.lx, 48);
            assert_eq!(s.ly, 12);
            assert_eq!(s.lz, 48);
            assert_eq!(s.rank, decomp.rank_of(s.cx, s.cy));
        }
        let total: usize = subs.iter().map(|s| s.cells()).sum();
        assert_eq!(total, grid.cells());
    }

    #[test]
    fn decompose_covers_disjointly() {
        let grid = GlobalGrid { nx: 37, ny: 23, nz: 5, dx: 1.0 };
        let decomp = Decomposition { px: 3, py: 4 };
        let subs = decompose(&grid, &decomp, radii(2, 2, 1)).unwrap();
        let mut seen = vec![false; grid.cells()];
        for s in &subs {
            for gz in s.oz..s.oz + s.lz {
                for gy in s.oy..s.oy + s.ly {
                    for gx in s.ox..s.ox + s.lx {
                        let i = (gz * grid.ny + gy) * grid.nx + gx;
                        assert!(!seen[i], "cell covered twice");
                        seen[i] = true;
                    }
                }
            }
        }
        assert!(seen.iter().all(|&c| c));
    }

    #[test]
    fn thin_part_is_rejected_with_rank() {
        let grid = GlobalGrid { nx: 16, ny: 16, nz: 8, dx: 1.0 };
        let decomp = Decomposition { px: 8, py: 1 };
        let err = decompose(&grid, &decomp, radii(4, 4, 2)).unwrap_err();
        assert!(err.to_string().contains("rank 0"), "{err}");
    }

    #[test]
    fn neighbor_topology_is_open() {
        let decomp = Decomposition { px: 4, py: 4 };
        let grid = GlobalGrid { nx: 32, ny: 32, nz: 8, dx: 1.0 };
        let subs = decompose(&grid, &decomp, radii(2, 2, 1)).unwrap();
        let corner = subs.iter().find(|s| s.cx == 0 && s.cy == 0).unwrap();
        let n = neighbors_of(corner, &decomp);
        assert_eq!(
            n,
            vec![
                (FaceId::XHigh, decomp.rank_of(1, 0)),
                (FaceId::YHigh, decomp.rank_of(0, 1)),
            ]
        );
        let mid = subs.iter().find(|s| s.cx == 2 && s.cy == 1).unwrap();
        assert_eq!(neighbors_of(mid, &decomp).len(), 4);
        let total_messages: usize = subs.iter().map(|s| neighbors_of(s, &decomp).len()).sum();
        assert_eq!(total_messages, 48);
    }

    #[test]
    fn neighbor_pairs_are_symmetric() {
        let decomp = Decomposition { px: 3, py: 5 };
        let grid = GlobalGrid { nx: 30, ny: 30, nz: 4, dx: 1.0 };
        let subs = decompose(&grid, &decomp, radii(1, 1, 1)).unwrap();
        for s in &subs {
            for (face, peer) in neighbors_of(s, &decomp) {
                let back = neighbors_of(&subs[peer as usize], &decomp);
                assert!(back.contains(&(face.opposite(), s.rank)));
            }
        }
    }

    #[test]
    fn tile_sizes_match_remainder_rule() {
        let map = tile_partition(100, 100, 32, 32);
        let y_sizes: Vec<usize> = (0..map.tiles_y)
            .map(|iy| {
                let t = map.tiles[iy * map.tiles_z];
                t.y1 - t.y0
            })
            .collect();
        assert_eq!(y_sizes, vec![32, 32, 32, 4]);

        let square = tile_partition(64, 64, 32, 32);
        assert_eq!(square.len(), 4);
        assert!(square.tiles.iter().all(|t| t.cells_per_x() == 32 * 32));

        let sliver = tile_partition(33, 1, 32, 32);
        assert_eq!(sliver.len(), 2);
        assert_eq!(sliver.tiles[0].cells_per_x(), 32);
        assert_eq!(sliver.tiles[1].cells_per_x(), 1);

        assert!(tile_partition(0, 16, 32, 32).is_empty());
    }

    #[test]
    fn collapsed_tiles_cover_region() {
        let map = tile_region(0, 70, 0, 33, 32, 16);
        assert_eq!(map.tiles_y, 3);
        assert_eq!(map.tiles_z, 3);
        assert_eq!(map.len(), 9);
        for (k, t) in map.tiles.iter().enumerate() {
            let iy = k / map.tiles_z;
            let iz = k % map.tiles_z;
            assert_eq!(t.y0, iy * 32);
            assert_eq!(t.z0, iz * 16);
            assert!(t.y1 <= 70 && t.z1 <= 33);
        }
        let area: usize = map.tiles.iter().map(|t| t.cells_per_x()).sum();
        assert_eq!(area, 70 * 33);
        let last = map.tiles[map.len() - 1];
        assert_eq!((last.y1 - last.y0, last.z1 - last.z0), (6, 1));
    }
}
