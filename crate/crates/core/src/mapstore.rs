//! The global historical map: a sparse grid of 8-bit per-category evidence
//! values, stored in lazily allocated square tiles.
//!
//! Writers (`update`, `merge`) take `&mut self` and readers take `&self`, so
//! the single-writer / many-reader contract is enforced by the borrow checker.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::geometry::{metric_to_cell, se2_apply, se2_inverse_apply, CellIndex, GridSpec, Point2, Pose2, WindowSpec};
use crate::raster::{Category, LocalMask, NUM_CATEGORIES};

pub const MAGIC: &[u8; 4] = b"HRMP";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 48;
pub const TRAILER_LEN: usize = 4;
pub const DEFAULT_TILE_SIZE: u32 = 256;
const MAX_TILE_SIZE: u32 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdateParams {
    /// Added to a channel when the local mask reports the category.
    pub s_plus: u8,
    /// Subtracted when the local mask reports its absence.
    pub s_minus: u8,
    /// Retrieval reports a category where the stored value is strictly above this.
    pub s_th: u8,
}

impl Default for UpdateParams {
    fn default() -> Self {
        Self { s_plus: 30, s_minus: 1, s_th: 0 }
    }
}

impl UpdateParams {
    pub fn validate(&self) -> Result<()> {
        if self.s_plus == 0 {
            return Err(Error::invalid("s_plus must be > 0"));
        }
        if self.s_plus <= self.s_th {
            return Err(Error::invalid("s_plus must exceed s_th"));
        }
        Ok(())
    }

    /// Negative observations needed before a cell at `value` stops being reported.
    pub fn erasure_steps(&self, value: u8) -> Option<u32> {
        if value <= self.s_th {
            return Some(0);
        }
        (self.s_minus > 0).then(|| u32::from(value - self.s_th).div_ceil(u32::from(self.s_minus)))
    }
}

/// Tile coordinate. Orders by `(iy, ix)`, the on-disk record order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileKey {
    pub iy: i32,
    pub ix: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryStats {
    pub allocated_tiles: u64,
    /// Raw cell payload bytes.
    pub stored_bytes: u64,
    /// Tile index entries, 8 bytes per tile.
    pub index_bytes: u64,
    /// Area of the bounding box of all allocated tiles.
    pub visited_extent_m2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMap {
    grid: GridSpec,
    tile_size: u32,
    params: UpdateParams,
    tiles: BTreeMap<TileKey, Box<[u8]>>,
}

impl GlobalMap {
    pub fn new(grid: GridSpec, params: UpdateParams) -> Result<Self> {
        Self::with_tile_size(grid, params, DEFAULT_TILE_SIZE)
    }

    pub fn with_tile_size(grid: GridSpec, params: UpdateParams, tile_size: u32) -> Result<Self> {
        grid.validate()?;
        params.validate()?;
        if tile_size == 0 || tile_size > MAX_TILE_SIZE {
            return Err(Error::invalid(format!("tile_size must be in 1..={MAX_TILE_SIZE}")));
        }
        Ok(Self { grid, tile_size, params, tiles: BTreeMap::new() })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn tile_size(&self) -> u32 {
        self.tile_size
    }

    pub fn params(&self) -> &UpdateParams {
        &self.params
    }

    pub fn tile_count(&self) -> usize {
        self.tiles.len()
    }

    pub fn tile_keys(&self) -> impl Iterator<Item = TileKey> + '_ {
        self.tiles.keys().copied()
    }

    pub fn tile_payload_len(&self) -> usize {
        let t = self.tile_size as usize;
        t * t * NUM_CATEGORIES
    }

    pub fn tile_of(&self, cell: CellIndex) -> Option<TileKey> {
        let t = i64::from(self.tile_size);
        let ix = i32::try_from(cell.ix.div_euclid(t)).ok()?;
        let iy = i32::try_from(cell.iy.div_euclid(t)).ok()?;
        Some(TileKey { iy, ix })
    }

    fn offset_in_tile(&self, cell: CellIndex) -> usize {
        let t = i64::from(self.tile_size);
        (cell.iy.rem_euclid(t) * t + cell.ix.rem_euclid(t)) as usize
    }

    fn plane(&self) -> usize {
        let t = self.tile_size as usize;
        t * t
    }

    /// Stored evidence for one cell; unallocated cells read as 0.
    pub fn value(&self, cell: CellIndex, c: Category) -> u8 {
        self.values(cell)[c.index()]
    }

    pub fn values(&self, cell: CellIndex) -> [u8; NUM_CATEGORIES] {
        let Some(payload) = self.tile_of(cell).and_then(|k| self.tiles.get(&k)) else {
            return [0; NUM_CATEGORIES];
        };
        let off = self.offset_in_tile(cell);
        let plane = self.plane();
        std::array::from_fn(|c| payload[c * plane + off])
    }

    /// Overwrites one cell, allocating its tile.
    pub fn set_values(&mut self, cell: CellIndex, values: [u8; NUM_CATEGORIES]) -> Result<()> {
        let key = self.tile_of(cell).ok_or_else(|| Error::invalid("cell outside addressable range"))?;
        let off = self.offset_in_tile(cell);
        let plane = self.plane();
        let len = self.tile_payload_len();
        let payload = self.tiles.entry(key).or_insert_with(|| vec![0; len].into_boxed_slice());
        for (c, v) in values.into_iter().enumerate() {
            payload[c * plane + off] = v;
        }
        Ok(())
    }

    fn check_resolution(&self, window: &WindowSpec) -> Result<()> {
        window.validate()?;
        let (a, b) = (self.grid.resolution, window.resolution);
        if (a - b).abs() > 1e-12 * a.abs().max(b.abs()) {
            return Err(Error::ResolutionMismatch { map: a, window: b });
        }
        Ok(())
    }

    /// Global cell range `(lo, hi)` inclusive covered by the rotated window
    /// bounding box, expanded by one cell.
    pub fn footprint_bounds(&self, window: &WindowSpec, pose: &Pose2) -> (CellIndex, CellIndex) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for c in window.corners() {
            let g = se2_apply(pose, c);
            lo = Point2::new(lo.x.min(g.x), lo.y.min(g.y));
            hi = Point2::new(hi.x.max(g.x), hi.y.max(g.y));
        }
        let r = self.grid.resolution;
        let o = self.grid.origin;
        (
            CellIndex::new(((lo.x - o.x) / r).floor() as i64 - 1, ((lo.y - o.y) / r).floor() as i64 - 1),
            CellIndex::new(((hi.x - o.x) / r).ceil() as i64 + 1, ((hi.y - o.y) / r).ceil() as i64 + 1),
        )
    }

    /// Folds one local observation into the map.
    pub fn update(&mut self, mask: &LocalMask, pose: &Pose2) -> Result<()> {
        self.update_traced(mask, pose, |_| {})
    }

    /// [`GlobalMap::update`], reporting every global cell it writes.
    ///
    /// Iterates global cells in the footprint bounds, maps each center into
    /// the ego frame and, when it lands inside the window, raises each channel
    /// by `s_plus` where the mask is set and lowers it by `s_minus` otherwise,
    /// saturating at 0 and 255.
    pub fn update_traced(&mut self, mask: &LocalMask, pose: &Pose2, mut visit: impl FnMut(CellIndex)) -> Result<()> {
        let window = *mask.window();
        self.check_resolution(&window)?;
        if !pose.is_finite() {
            return Err(Error::invalid("pose must be finite"));
        }
        let (lo, hi) = self.footprint_bounds(&window, pose);
        let t = i64::from(self.tile_size);
        let (tx0, tx1) = (lo.ix.div_euclid(t), hi.ix.div_euclid(t));
        let (ty0, ty1) = (lo.iy.div_euclid(t), hi.iy.div_euclid(t));
        for v in [tx0, tx1, ty0, ty1] {
            if i32::try_from(v).is_err() {
                return Err(Error::invalid("pose outside addressable map range"));
            }
        }
        let plane = self.plane();
        let payload_len = self.tile_payload_len();
        let UpdateParams { s_plus, s_minus, .. } = self.params;
        let grid = self.grid;

        for ty in ty0..=ty1 {
            let gy0 = lo.iy.max(ty * t);
            let gy1 = hi.iy.min(ty * t + t - 1);
            for tx in tx0..=tx1 {
                let gx0 = lo.ix.max(tx * t);
                let gx1 = hi.ix.min(tx * t + t - 1);
                let key = TileKey { iy: ty as i32, ix: tx as i32 };
                let mut payload: Option<&mut Box<[u8]>> = None;
                for gy in gy0..=gy1 {
                    for gx in gx0..=gx1 {
                        let cell = CellIndex::new(gx, gy);
                        let local = se2_inverse_apply(pose, grid.cell_center(cell));
                        let Some((i, j)) = window.cell_of(local) else { continue };
                        visit(cell);
                        if payload.is_none() {
                            payload =
                                Some(self.tiles.entry(key).or_insert_with(|| vec![0; payload_len].into_boxed_slice()));
                        }
                        let tile = payload.as_deref_mut().unwrap();
                        let off = ((gy - ty * t) * t + (gx - tx * t)) as usize;
                        let bits = mask.bits(i, j);
                        for c in Category::ALL {
                            let v = &mut tile[c.index() * plane + off];
                            *v = if bits.contains(c) { v.saturating_add(s_plus) } else { v.saturating_sub(s_minus) };
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Reads a local mask at `pose`: a category is present where the stored
    /// value is strictly greater than `s_th`. Never allocates tiles.
    pub fn retrieve(&self, pose: &Pose2, window: &WindowSpec) -> Result<LocalMask> {
        self.check_resolution(window)?;
        if !pose.is_finite() {
            return Err(Error::invalid("pose must be finite"));
        }
        let mut mask = LocalMask::new(*window)?;
        if self.tiles.is_empty() {
            return Ok(mask);
        }
        let th = self.params.s_th;
        let plane = self.plane();
        let mut cached: Option<(TileKey, Option<&[u8]>)> = None;
        for i in 0..mask.height() {
            for j in 0..mask.width() {
                let local = Point2::new(
                    window.x_min + (i as f64 + 0.5) * window.resolution,
                    window.y_min + (j as f64 + 0.5) * window.resolution,
                );
                let cell = metric_to_cell(se2_apply(pose, local), &self.grid);
                let Some(key) = self.tile_of(cell) else { continue };
                let payload = match cached {
                    Some((k, p)) if k == key => p,
                    _ => {
                        let p = self.tiles.get(&key).map(|b| &b[..]);
                        cached = Some((key, p));
                        p
                    }
                };
                let Some(payload) = payload else { continue };
                let off = self.offset_in_tile(cell);
                for c in Category::ALL {
                    if payload[c.index() * plane + off] > th {
                        mask.set(i, j, c);
                    }
                }
            }
        }
        Ok(mask)
    }

    /// Saturating per-cell addition of `src` evidence into `self`.
    pub fn merge(&mut self, src: &GlobalMap) -> Result<()> {
        if self.grid != src.grid {
            return Err(Error::SpecMismatch(format!("grid {:?} vs {:?}", self.grid, src.grid)));
        }
        if self.tile_size != src.tile_size {
            return Err(Error::SpecMismatch(format!("tile size {} vs {}", self.tile_size, src.tile_size)));
        }
        for (key, payload) in &src.tiles {
            match self.tiles.get_mut(key) {
                Some(dst) => dst.iter_mut().zip(payload.iter()).for_each(|(d, s)| *d = d.saturating_add(*s)),
                None => {
                    self.tiles.insert(*key, payload.clone());
                }
            }
        }
        Ok(())
    }

    pub fn memory_stats(&self) -> MemoryStats {
        let n = self.tiles.len() as u64;
        let visited_extent_m2 = match (self.tiles.keys().map(|k| k.ix).min(), self.tiles.keys().map(|k| k.ix).max()) {
            (Some(x0), Some(x1)) => {
                let y0 = self.tiles.keys().map(|k| k.iy).min().unwrap_or(0);
                let y1 = self.tiles.keys().map(|k| k.iy).max().unwrap_or(0);
                let side = f64::from(self.tile_size) * self.grid.resolution;
                f64::from(x1 - x0 + 1) * side * f64::from(y1 - y0 + 1) * side
            }
            _ => 0.0,
        };
        MemoryStats {
            allocated_tiles: n,
            stored_bytes: n * self.tile_payload_len() as u64,
            index_bytes: n * 8,
            visited_extent_m2,
        }
    }

    /// Cells with a nonzero value, per channel.
    pub fn nonzero_cells(&self) -> [u64; NUM_CATEGORIES] {
        let plane = self.plane();
        let mut out = [0u64; NUM_CATEGORIES];
        for payload in self.tiles.values() {
            for (c, n) in out.iter_mut().enumerate() {
                *n += payload[c * plane..(c + 1) * plane].iter().filter(|&&v| v != 0).count() as u64;
            }
        }
        out
    }

    /// Inclusive global cell range covered by allocated tiles.
    pub fn allocated_cell_bounds(&self) -> Option<(CellIndex, CellIndex)> {
        let t = i64::from(self.tile_size);
        let x0 = self.tiles.keys().map(|k| k.ix).min()?;
        let x1 = self.tiles.keys().map(|k| k.ix).max()?;
        let y0 = self.tiles.keys().map(|k| k.iy).min()?;
        let y1 = self.tiles.keys().map(|k| k.iy).max()?;
        Some((
            CellIndex::new(i64::from(x0) * t, i64::from(y0) * t),
            CellIndex::new(i64::from(x1) * t + t - 1, i64::from(y1) * t + t - 1),
        ))
    }

    /// Serializes to the `HRMP` v1 layout (little-endian, CRC32 trailer).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.tiles.len() * (8 + self.tile_payload_len()) + TRAILER_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&self.grid.resolution.to_le_bytes());
        out.extend_from_slice(&self.grid.origin.x.to_le_bytes());
        out.extend_from_slice(&self.grid.origin.y.to_le_bytes());
        out.extend_from_slice(&self.tile_size.to_le_bytes());
        out.push(NUM_CATEGORIES as u8);
        out.push(self.params.s_plus);
        out.push(self.params.s_minus);
        out.push(self.params.s_th);
        out.extend_from_slice(&(self.tiles.len() as u64).to_le_bytes());
        debug_assert_eq!(out.len(), HEADER_LEN);
        for (key, payload) in &self.tiles {
            out.extend_from_slice(&key.ix.to_le_bytes());
            out.extend_from_slice(&key.iy.to_le_bytes());
            out.extend_from_slice(payload);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let _reserved = r.u16()?;
        let resolution = r.f64()?;
        let origin = Point2::new(r.f64()?, r.f64()?);
        let tile_size = r.u32()?;
        let channels = r.u8()?;
        let params = UpdateParams { s_plus: r.u8()?, s_minus: r.u8()?, s_th: r.u8()? };
        let tile_count = r.u64()?;

        if usize::from(channels) != NUM_CATEGORIES {
            return Err(FormatError::BadHeader("channels"));
        }
        if tile_size == 0 || tile_size > MAX_TILE_SIZE {
            return Err(FormatError::BadHeader("tile_size"));
        }
        let grid = GridSpec { origin, resolution };
        grid.validate().map_err(|_| FormatError::BadHeader("grid"))?;
        params.validate().map_err(|_| FormatError::BadHeader("update params"))?;

        let payload_len = (tile_size as usize).pow(2) * NUM_CATEGORIES;
        let expected = usize::try_from(tile_count)
            .ok()
            .and_then(|n| n.checked_mul(8 + payload_len))
            .and_then(|body| body.checked_add(HEADER_LEN + TRAILER_LEN))
            .ok_or(FormatError::Truncated)?;
        if bytes.len() < expected {
            return Err(FormatError::Truncated);
        }
        if bytes.len() > expected {
            return Err(FormatError::TrailingBytes);
        }
        let body_end = expected - TRAILER_LEN;
        let stored_crc = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
        if crc32fast::hash(&bytes[..body_end]) != stored_crc {
            return Err(FormatError::Checksum);
        }

        let mut tiles = BTreeMap::new();
        let mut prev: Option<TileKey> = None;
        for _ in 0..tile_count {
            let ix = r.i32()?;
            let iy = r.i32()?;
            let key = TileKey { iy, ix };
            if let Some(p) = prev {
                if key == p || tiles.contains_key(&key) {
                    return Err(FormatError::DuplicateTile { ix, iy });
                }
                if key < p {
                    return Err(FormatError::TileOrder { ix, iy });
                }
            }
            tiles.insert(key, r.take(payload_len)?.to_vec().into_boxed_slice());
            prev = Some(key);
        }
        Ok(GlobalMap { grid, tile_size, params, tiles })
    }

    /// Writes the map file, returning the number of bytes written.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<u64> {
        let bytes = self.to_bytes();
        fs::write(path, &bytes)?;
        Ok(bytes.len() as u64)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or(FormatError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(FormatError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        self.array().map(u32::from_le_bytes)
    }

    fn i32(&mut self) -> Result<i32, FormatError> {
        self.array().map(i32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        self.array().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        self.array().map(f64::from_le_bytes)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;

    fn fresh() -> GlobalMap {
        GlobalMap::new(GridSpec::default(), UpdateParams::default()).unwrap()
    }

    fn single_cell_mask(i: usize, j: usize, c: Category) -> LocalMask {
        let mut m = LocalMask::new(WindowSpec::default()).unwrap();
        m.set(i, j, c);
        m
    }

    /// Global cell under local cell (i, j) at `pose`.
    fn global_of(map: &GlobalMap, pose: &Pose2, i: usize, j: usize) -> CellIndex {
        let p = crate::geometry::local_cell_center(i, j, &WindowSpec::default()).unwrap();
        metric_to_cell(se2_apply(pose, p), map.grid())
    }

    #[test]
    fn single_positive_observation_gives_s_plus() {
        let mut map = fresh();
        let pose = Pose2::identity();
        map.update(&single_cell_mask(120, 40, Category::Crossing), &pose).unwrap();
        let target = global_of(&map, &pose, 120, 40);
        assert_eq!(map.values(target), [0, 30, 0]);
        assert_eq!(map.nonzero_cells(), [0, 1, 0]);
    }

    #[test]
    fn saturation_and_floor() {
        let mut map = fresh();
        let pose = Pose2::identity();
        let cell = global_of(&map, &pose, 10, 10);
        map.set_values(cell, [250, 0, 30]).unwrap();
        let mut mask = LocalMask::new(WindowSpec::default()).unwrap();
        mask.set(10, 10, Category::Divider);
        map.update(&mask, &pose).unwrap();
        assert_eq!(map.values(cell), [255, 0, 29]);
        let empty = LocalMask::new(WindowSpec::default()).unwrap();
        for _ in 0..29 {
            map.update(&empty, &pose).unwrap();
        }
        assert_eq!(map.values(cell), [226, 0, 0]);
    }

    #[test]
    fn retrieval_is_strict_at_threshold() {
        let params = UpdateParams { s_plus: 30, s_minus: 1, s_th: 5 };
        let mut map = GlobalMap::new(GridSpec::default(), params).unwrap();
        let pose = Pose2::identity();
        let cell = global_of(&map, &pose, 7, 8);
        map.set_values(cell, [5, 6, 0]).unwrap();
        let m = map.retrieve(&pose, &WindowSpec::default()).unwrap();
        assert!(!m.get(7, 8, Category::Divider));
        assert!(m.get(7, 8, Category::Crossing));
        assert!(!m.get(7, 8, Category::Boundary));
    }

    #[test]
    fn erasure_bound() {
        let p = UpdateParams::default();
        assert_eq!(p.erasure_steps(30), Some(30));
        assert_eq!(p.erasure_steps(0), Some(0));
        let p = UpdateParams { s_plus: 30, s_minus: 4, s_th: 10 };
        assert_eq!(p.erasure_steps(31), Some(6));
        for start in [11u8, 30, 97, 255] {
            let mut v = start;
            let mut n = 0;
            while v > p.s_th {
                v = v.saturating_sub(p.s_minus);
                n += 1;
            }
            assert_eq!(Some(n), p.erasure_steps(start));
        }
    }

    #[test]
    fn empty_map_retrieves_nothing_and_allocates_nothing() {
        let map = fresh();
        let m = map.retrieve(&Pose2::new(100.0, -40.0, 1.0), &WindowSpec::default()).unwrap();
        assert!(m.is_empty());
        assert_eq!(map.tile_count(), 0);
        assert_eq!(map.memory_stats().stored_bytes, 0);
    }

    #[test]
    fn resolution_mismatch_rejected() {
        let mut map = fresh();
        let w = WindowSpec { resolution: 0.5, ..WindowSpec::default() };
        let m = LocalMask::new(w).unwrap();
        assert!(matches!(map.update(&m, &Pose2::identity()), Err(Error::ResolutionMismatch { .. })));
        assert!(matches!(map.retrieve(&Pose2::identity(), &w), Err(Error::ResolutionMismatch { .. })));
        let m = LocalMask::new(WindowSpec::default()).unwrap();
        assert!(map.update(&m, &Pose2::new(f64::NAN, 0.0, 0.0)).is_err());
    }

    #[test]
    fn update_touches_each_cell_once_and_stays_local() {
        let mut map = fresh();
        let before_cell = CellIndex::new(1000, 1000);
        map.set_values(before_cell, [9, 9, 9]).unwrap();
        let pose = Pose2::new(3.3, -7.1, 0.7);
        let mut counts: HashMap<CellIndex, u32> = HashMap::new();
        let mask = LocalMask::new(WindowSpec::default()).unwrap();
        map.update_traced(&mask, &pose, |c| *counts.entry(c).or_default() += 1).unwrap();
        assert!(counts.values().all(|&n| n == 1));
        let (lo, hi) = map.footprint_bounds(&WindowSpec::default(), &pose);
        assert!(counts.keys().all(|c| c.ix >= lo.ix && c.ix <= hi.ix && c.iy >= lo.iy && c.iy <= hi.iy));
        assert_eq!(map.values(before_cell), [9, 9, 9]);
    }

    #[test]
    fn single_update_memory_is_one_to_four_tiles() {
        let mut map = fresh();
        map.update(&LocalMask::new(WindowSpec::default()).unwrap(), &Pose2::identity()).unwrap();
        let stats = map.memory_stats();
        // 60 m x 30 m centred on the origin straddles the tile corner at (0, 0)
        assert_eq!(stats.allocated_tiles, 4);
        assert_eq!(stats.stored_bytes, 4 * 256 * 256 * 3);
        assert_eq!(stats.index_bytes, 32);

        let mut map = fresh();
        map.update(&LocalMask::new(WindowSpec::default()).unwrap(), &Pose2::new(38.4, 38.4, 0.0)).unwrap();
        assert_eq!(map.memory_stats().allocated_tiles, 1);
    }

    #[test]
    fn merge_rules() {
        let mut a = fresh();
        let b = fresh();
        a.set_values(CellIndex::new(1, 1), [200, 0, 7]).unwrap();
        let snapshot = a.clone();
        a.merge(&b).unwrap();
        assert_eq!(a, snapshot);

        let mut b = fresh();
        b.set_values(CellIndex::new(1, 1), [100, 3, 0]).unwrap();
        b.set_values(CellIndex::new(-5000, 900), [1, 2, 3]).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a.values(CellIndex::new(1, 1)), [255, 3, 7]);
        assert_eq!(a.values(CellIndex::new(-5000, 900)), [1, 2, 3]);
        assert_eq!(a.tile_count(), 2);

        let other = GlobalMap::with_tile_size(GridSpec::default(), UpdateParams::default(), 128).unwrap();
        assert!(matches!(a.merge(&other), Err(Error::SpecMismatch(_))));
        let shifted = GlobalMap::new(GridSpec { origin: Point2::new(0.1, 0.0), resolution: 0.3 }, UpdateParams::default()).unwrap();
        assert!(matches!(a.merge(&shifted), Err(Error::SpecMismatch(_))));
    }

    #[test]
    fn empty_file_is_header_plus_trailer() {
        let bytes = fresh().to_bytes();
        assert_eq!(bytes.len(), HEADER_LEN + TRAILER_LEN);
        assert_eq!(&bytes[..4], b"HRMP");
        assert_eq!(GlobalMap::from_bytes(&bytes).unwrap(), fresh());
    }

    #[test]
    fn load_rejects_corruption() {
        let mut map = fresh();
        map.set_values(CellIndex::new(0, 0), [1, 2, 3]).unwrap();
        map.set_values(CellIndex::new(300, 0), [4, 5, 6]).unwrap();
        let good = map.to_bytes();
        let reseal = |mut b: Vec<u8>| {
            let n = b.len() - TRAILER_LEN;
            let crc = crc32fast::hash(&b[..n]);
            b[n..].copy_from_slice(&crc.to_le_bytes());
            b
        };

        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(GlobalMap::from_bytes(&bad).unwrap_err(), FormatError::BadMagic);
        assert_eq!(GlobalMap::from_bytes(&bad).unwrap_err().to_string(), "bad magic");

        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(GlobalMap::from_bytes(&reseal(bad)).unwrap_err(), FormatError::UnsupportedVersion(2));

        assert_eq!(GlobalMap::from_bytes(&good[..good.len() - 10]).unwrap_err(), FormatError::Truncated);
        assert_eq!(GlobalMap::from_bytes(&good[..20]).unwrap_err(), FormatError::Truncated);

        let mut bad = good.clone();
        bad[HEADER_LEN + 20] ^= 0xff;
        assert_eq!(GlobalMap::from_bytes(&bad).unwrap_err(), FormatError::Checksum);

        let rec = 8 + map.tile_payload_len();
        let mut bad = good.clone();
        let (first, second) = (HEADER_LEN, HEADER_LEN + rec);
        let first_key: Vec<u8> = bad[first..first + 8].to_vec();
        bad[second..second + 8].copy_from_slice(&first_key);
        assert_eq!(GlobalMap::from_bytes(&reseal(bad)).unwrap_err(), FormatError::DuplicateTile { ix: 0, iy: 0 });

        let mut bad = good.clone();
        let a: Vec<u8> = bad[first..first + rec].to_vec();
        let b: Vec<u8> = bad[second..second + rec].to_vec();
        bad[first..first + rec].copy_from_slice(&b);
        bad[second..second + rec].copy_from_slice(&a);
        assert_eq!(GlobalMap::from_bytes(&reseal(bad)).unwrap_err(), FormatError::TileOrder { ix: 0, iy: 0 });

        let mut bad = good.clone();
        bad.push(0);
        assert_eq!(GlobalMap::from_bytes(&bad).unwrap_err(), FormatError::TrailingBytes);

        let mut bad = good;
        bad[36] = 4;
        assert_eq!(GlobalMap::from_bytes(&reseal(bad)).unwrap_err(), FormatError::BadHeader("channels"));
    }
}
