//! Vectorized map elements and their rasterization into binary local masks.

use std::fmt;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_segment_distance_sq, Point2, Polyline, WindowSpec};

/// Map element category. The integer codes are stable and used as channel indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Divider = 0,
    Crossing = 1,
    Boundary = 2,
}

/// Number of categories, and therefore channels in every raster.
pub const NUM_CATEGORIES: usize = 3;

impl Category {
    pub const ALL: [Category; NUM_CATEGORIES] = [Category::Divider, Category::Crossing, Category::Boundary];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Category> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Divider => "divider",
            Category::Crossing => "crossing",
            Category::Boundary => "boundary",
        }
    }

    fn bit(self) -> u8 {
        1 << self.index()
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Ego,
    World,
}

impl Frame {
    fn name(self) -> &'static str {
        match self {
            Frame::Ego => "ego",
            Frame::World => "world",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapElement {
    pub category: Category,
    #[serde(rename = "points")]
    pub shape: Polyline,
    pub confidence: f64,
}

impl MapElement {
    pub fn new(category: Category, shape: Polyline, confidence: f64) -> Self {
        Self { category, shape, confidence }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::invalid(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorMap {
    pub frame: Frame,
    pub elements: Vec<MapElement>,
}

impl VectorMap {
    pub fn new(frame: Frame) -> Self {
        Self { frame, elements: Vec::new() }
    }

    pub fn with_elements(frame: Frame, elements: Vec<MapElement>) -> Self {
        Self { frame, elements }
    }

    pub fn validate(&self) -> Result<()> {
        self.elements.iter().try_for_each(MapElement::validate)
    }

    pub fn of_category(&self, category: Category) -> impl Iterator<Item = &MapElement> {
        self.elements.iter().filter(move |e| e.category == category)
    }

    pub fn count(&self, category: Category) -> usize {
        self.of_category(category).count()
    }

    pub(crate) fn expect_frame(&self, expected: Frame) -> Result<()> {
        if self.frame != expected {
            return Err(Error::FrameMismatch { expected: expected.name(), actual: self.frame.name() });
        }
        Ok(())
    }
}

/// Set of categories present in a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct CategorySet(u8);

impl CategorySet {
    pub const EMPTY: CategorySet = CategorySet(0);

    pub fn from_bits(bits: u8) -> Self {
        CategorySet(bits & 0b111)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, c: Category) -> bool {
        self.0 & c.bit() != 0
    }

    pub fn insert(&mut self, c: Category) {
        self.0 |= c.bit();
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Per-category 0/1 flags in category-code order.
    pub fn to_array(self) -> [u8; NUM_CATEGORIES] {
        Category::ALL.map(|c| self.contains(c) as u8)
    }
}

/// Binary `H x W x 3` mask over the perception window.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMask {
    window: WindowSpec,
    height: usize,
    width: usize,
    cells: Vec<CategorySet>,
}

impl LocalMask {
    pub fn new(window: WindowSpec) -> Result<Self> {
        window.validate()?;
        let (height, width) = (window.height(), window.width());
        Ok(Self { window, height, width, cells: vec![CategorySet::EMPTY; height * width] })
    }

    pub fn window(&self) -> &WindowSpec {
        &self.window
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[CategorySet] {
        &self.cells
    }

    pub fn same_shape(&self, other: &LocalMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn get(&self, i: usize, j: usize, c: Category) -> bool {
        self.cells[i * self.width + j].contains(c)
    }

    pub fn bits(&self, i: usize, j: usize) -> CategorySet {
        self.cells[i * self.width + j]
    }

    pub fn set(&mut self, i: usize, j: usize, c: Category) {
        self.cells[i * self.width + j].insert(c);
    }

    pub fn set_bits(&mut self, i: usize, j: usize, bits: CategorySet) {
        self.cells[i * self.width + j] = bits;
    }

    pub fn count(&self, c: Category) -> usize {
        self.cells.iter().filter(|b| b.contains(c)).count()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(|b| b.is_empty())
    }

    fn encode_planes(&self) -> String {
        let n = self.cells.len();
        let mut bytes = vec![0u8; NUM_CATEGORIES * n.div_ceil(8)];
        let plane = n.div_ceil(8);
        for c in Category::ALL {
            for (idx, b) in self.cells.iter().enumerate() {
                if b.contains(c) {
                    bytes[c.index() * plane + idx / 8] |= 1 << (idx % 8);
                }
            }
        }
        base64::engine::general_purpose::STANDARD.encode(bytes)
    }

    fn decode_planes(window: WindowSpec, data: &str) -> Result<Self> {
        let mut mask = LocalMask::new(window)?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(data)
            .map_err(|e| Error::invalid(format!("mask planes: {e}")))?;
        let n = mask.cells.len();
        let plane = n.div_ceil(8);
        if bytes.len() != NUM_CATEGORIES * plane {
            return Err(Error::invalid("mask planes have the wrong length"));
        }
        for c in Category::ALL {
            for idx in 0..n {
                if bytes[c.index() * plane + idx / 8] & (1 << (idx % 8)) != 0 {
                    mask.cells[idx].insert(c);
                }
            }
        }
        Ok(mask)
    }
}

/// JSON form: the window plus base64 of three bit-packed, row-major,
/// LSB-first channel planes.
#[derive(Serialize, Deserialize)]
struct MaskRepr {
    window: WindowSpec,
    planes: String,
}

impl Serialize for LocalMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MaskRepr { window: self.window, planes: self.encode_planes() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LocalMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = MaskRepr::deserialize(d)?;
        LocalMask::decode_planes(repr.window, &repr.planes).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterConfig {
    /// Cells whose centers lie within this distance of a polyline are set.
    pub stroke_halfwidth: f64,
    /// Render closed crossing outlines as filled polygons.
    pub fill_crossings: bool,
    /// Elements below this confidence are skipped.
    pub confidence_floor: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self { stroke_halfwidth: 0.15, fill_crossings: false, confidence_floor: 0.0 }
    }
}

impl RasterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stroke_halfwidth > 0.0 && self.stroke_halfwidth.is_finite()) {
            return Err(Error::invalid("stroke_halfwidth must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.confidence_floor) {
            return Err(Error::invalid("confidence_floor must be in [0, 1]"));
        }
        Ok(())
    }

    fn keeps(&self, e: &MapElement) -> bool {
        e.confidence >= self.confidence_floor
    }

    fn fills(&self, e: &MapElement) -> bool {
        self.fill_crossings && e.category == Category::Crossing && e.shape.is_closed()
    }
}

#[inline]
fn center(window: &WindowSpec, i: usize, j: usize) -> Point2 {
    let r = window.resolution;
    Point2::new(window.x_min + (i as f64 + 0.5) * r, window.y_min + (j as f64 + 0.5) * r)
}

/// Even-odd point-in-polygon test; the ring is closed implicitly.
fn inside_polygon(p: Point2, ring: &[Point2]) -> bool {
    let mut inside = false;
    let n = ring.len();
    let mut k = n - 1;
    for m in 0..n {
        let (a, b) = (ring[m], ring[k]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        k = m;
    }
    inside
}

/// Inclusive index range of cells whose centers may lie in `[lo, hi]` along one axis.
fn axis_range(lo: f64, hi: f64, min: f64, res: f64, n: usize) -> Option<(usize, usize)> {
    let a = ((lo - min) / res - 0.5).floor() as i64 - 1;
    let b = ((hi - min) / res - 0.5).ceil() as i64 + 1;
    let a = a.max(0);
    let b = b.min(n as i64 - 1);
    (a <= b).then_some((a as usize, b as usize))
}

/// Visits every cell of `window` that `shape` covers under `cfg`-style stroke
/// semantics, restricted to the bounding boxes of the geometry.
fn for_each_covered_cell(
    shape: &Polyline,
    fill: bool,
    halfwidth: f64,
    window: &WindowSpec,
    mut visit: impl FnMut(usize, usize),
) {
    let (h, w, res) = (window.height(), window.width(), window.resolution);
    let hw_sq = halfwidth * halfwidth;
    for (a, b) in shape.segments() {
        let xr = axis_range(a.x.min(b.x) - halfwidth, a.x.max(b.x) + halfwidth, window.x_min, res, h);
        let yr = axis_range(a.y.min(b.y) - halfwidth, a.y.max(b.y) + halfwidth, window.y_min, res, w);
        let (Some((i0, i1)), Some((j0, j1))) = (xr, yr) else { continue };
        for i in i0..=i1 {
            for j in j0..=j1 {
                if point_segment_distance_sq(center(window, i, j), a, b) <= hw_sq {
                    visit(i, j);
                }
            }
        }
    }
    if fill {
        let (lo, hi) = shape.bounds();
        let xr = axis_range(lo.x, hi.x, window.x_min, res, h);
        let yr = axis_range(lo.y, hi.y, window.y_min, res, w);
        if let (Some((i0, i1)), Some((j0, j1))) = (xr, yr) {
            for i in i0..=i1 {
                for j in j0..=j1 {
                    if inside_polygon(center(window, i, j), shape.points()) {
                        visit(i, j);
                    }
                }
            }
        }
    }
}

fn element_touches_window(e: &MapElement, window: &WindowSpec, margin: f64) -> bool {
    let (lo, hi) = e.shape.bounds();
    hi.x >= window.x_min - margin
        && lo.x <= window.x_max + margin
        && hi.y >= window.y_min - margin
        && lo.y <= window.y_max + margin
}

/// Rasterizes an ego-frame vector map into a binary local mask.
pub fn rasterize_local(vm: &VectorMap, window: &WindowSpec, cfg: &RasterConfig) -> Result<LocalMask> {
    vm.expect_frame(Frame::Ego)?;
    cfg.validate()?;
    let mut mask = LocalMask::new(*window)?;
    for e in vm.elements.iter().filter(|e| cfg.keeps(e)) {
        if !element_touches_window(e, window, cfg.stroke_halfwidth + window.resolution) {
            continue;
        }
        let c = e.category;
        for_each_covered_cell(&e.shape, cfg.fills(e), cfg.stroke_halfwidth, window, |i, j| {
            mask.set(i, j, c)
        });
    }
    Ok(mask)
}

/// Reference rasterizer: evaluates every cell against every segment. Slow;
/// exists to check [`rasterize_local`].
pub fn rasterize_local_bruteforce(vm: &VectorMap, window: &WindowSpec, cfg: &RasterConfig) -> Result<LocalMask> {
    vm.expect_frame(Frame::Ego)?;
    cfg.validate()?;
    let mut mask = LocalMask::new(*window)?;
    let hw_sq = cfg.stroke_halfwidth * cfg.stroke_halfwidth;
    let kept: Vec<&MapElement> = vm.elements.iter().filter(|e| cfg.keeps(e)).collect();
    for i in 0..mask.height() {
        for j in 0..mask.width() {
            let p = center(window, i, j);
            for e in &kept {
                let hit = e.shape.segments().any(|(a, b)| point_segment_distance_sq(p, a, b) <= hw_sq)
                    || (cfg.fills(e) && inside_polygon(p, e.shape.points()));
                if hit {
                    mask.set(i, j, e.category);
                }
            }
        }
    }
    Ok(mask)
}

/// Distinct window cells covered by a single ego-frame polyline stroke,
/// in row-major order.
pub fn stroke_cells(shape: &Polyline, window: &WindowSpec, halfwidth: f64) -> Vec<(usize, usize)> {
    let mut cells = Vec::new();
    for_each_covered_cell(shape, false, halfwidth, window, |i, j| cells.push((i, j)));
    cells.sort_unstable();
    cells.dedup();
    cells
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskPoint {
    pub i: usize,
    pub j: usize,
    pub categories: CategorySet,
}

/// All cells with at least one channel set, row-major.
pub fn mask_to_points(mask: &LocalMask) -> Vec<MaskPoint> {
    mask.cells
        .iter()
        .enumerate()
        .filter(|(_, b)| !b.is_empty())
        .map(|(idx, &categories)| MaskPoint { i: idx / mask.width, j: idx % mask.width, categories })
        .collect()
}
