//! Planar geometry: SE(2) poses, metric/grid conversions, polylines and the
//! Chamfer distance used for matching map elements.
//!
//! Grid conventions:
//!
//! * A [`GridSpec`] places cell `(ix, iy)` at `origin + (ix, iy) * resolution`
//!   and maps a metric point to the nearest such center, rounding ties away
//!   from zero.
//! * A [`WindowSpec`] describes the ego-centric perception window. Its cell
//!   `(i, j)` has its center at `(x_min + (i + 0.5) res, y_min + (j + 0.5) res)`,
//!   `i` running forward along ego `x` and `j` running left along ego `y`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of points used when resampling polylines for Chamfer matching.
pub const DEFAULT_RESAMPLE_K: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_sq(&self, other: Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    fn lerp(self, other: Point2, t: f64) -> Point2 {
        Point2::new(self.x + (other.x - self.x) * t, self.y + (other.y - self.y) * t)
    }
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Point2 { x, y }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Rigid planar transform from the ego frame to the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawPose", into = "RawPose")]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    yaw: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPose {
    x: f64,
    y: f64,
    yaw: f64,
}

impl From<RawPose> for Pose2 {
    fn from(r: RawPose) -> Self {
        Pose2::new(r.x, r.y, r.yaw)
    }
}

impl From<Pose2> for RawPose {
    fn from(p: Pose2) -> Self {
        RawPose { x: p.x, y: p.y, yaw: p.yaw }
    }
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose2 {
    /// Builds a pose, wrapping `yaw` into `(-pi, pi]`.
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw: normalize_angle(yaw) }
    }

    pub const fn identity() -> Self {
        Self { x: 0.0, y: 0.0, yaw: 0.0 }
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn translation(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.yaw.is_finite()
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let t = se2_apply(self, other.translation());
        Pose2::new(t.x, t.y, self.yaw + other.yaw)
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2::new(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.yaw)
    }
}

/// `R(yaw) p + t`.
pub fn se2_apply(pose: &Pose2, p: Point2) -> Point2 {
    let (s, c) = pose.yaw.sin_cos();
    Point2::new(c * p.x - s * p.y + pose.x, s * p.x + c * p.y + pose.y)
}

/// `R(yaw)^T (p - t)`.
pub fn se2_inverse_apply(pose: &Pose2, p: Point2) -> Point2 {
    let (s, c) = pose.yaw.sin_cos();
    let dx = p.x - pose.x;
    let dy = p.y - pose.y;
    Point2::new(c * dx + s * dy, -s * dx + c * dy)
}

/// Integer cell coordinate on an unbounded grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellIndex {
    pub ix: i64,
    pub iy: i64,
}

impl CellIndex {
    pub const fn new(ix: i64, iy: i64) -> Self {
        Self { ix, iy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Point2,
    pub resolution: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { origin: Point2::default(), resolution: 0.3 }
    }
}

impl GridSpec {
    pub fn new(origin: Point2, resolution: f64) -> Result<Self> {
        let g = Self { origin, resolution };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::invalid(format!("grid resolution must be > 0, got {}", self.resolution)));
        }
        if !self.origin.is_finite() {
            return Err(Error::invalid("grid origin must be finite"));
        }
        Ok(())
    }

    pub fn cell_center(&self, idx: CellIndex) -> Point2 {
        Point2::new(
            self.origin.x + idx.ix as f64 * self.resolution,
            self.origin.y + idx.iy as f64 * self.resolution,
        )
    }
}

/// `round((p - origin) / resolution)` per axis, ties away from zero.
pub fn metric_to_cell(p: Point2, grid: &GridSpec) -> CellIndex {
    CellIndex {
        ix: ((p.x - grid.origin.x) / grid.resolution).round() as i64,
        iy: ((p.y - grid.origin.y) / grid.resolution).round() as i64,
    }
}

/// Ego-centric perception window. Defaults: 60 m x 30 m at 0.3 m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub resolution: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { x_min: -30.0, x_max: 30.0, y_min: -15.0, y_max: 15.0, resolution: 0.3 }
    }
}

fn cell_count(extent: f64, res: f64) -> Option<usize> {
    let n = extent / res;
    let r = n.round();
    ((n - r).abs() <= 1e-9 * r.max(1.0) && r >= 1.0).then_some(r as usize)
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max, self.resolution]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.resolution <= 0.0 {
            return Err(Error::invalid("window bounds must be finite with resolution > 0"));
        }
        if self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(Error::invalid("window requires x_max > x_min and y_max > y_min"));
        }
        if cell_count(self.x_max - self.x_min, self.resolution).is_none()
            || cell_count(self.y_max - self.y_min, self.resolution).is_none()
        {
            return Err(Error::invalid("window extents must be integer multiples of the resolution"));
        }
        Ok(())
    }

    /// Number of cells along ego `x` (forward).
    pub fn height(&self) -> usize {
        cell_count(self.x_max - self.x_min, self.resolution).unwrap_or(0)
    }

    /// Number of cells along ego `y` (lateral).
    pub fn width(&self) -> usize {
        cell_count(self.y_max - self.y_min, self.resolution).unwrap_or(0)
    }

    pub fn cell_count(&self) -> usize {
        self.height() * self.width()
    }

    /// The window's cells as a [`GridSpec`] whose cell `(0, 0)` is local cell `(0, 0)`.
    pub fn cell_grid(&self) -> GridSpec {
        GridSpec {
            origin: Point2::new(
                self.x_min + 0.5 * self.resolution,
                self.y_min + 0.5 * self.resolution,
            ),
            resolution: self.resolution,
        }
    }

    /// Local cell containing an ego-frame point, `None` outside the window.
    pub fn cell_of(&self, p: Point2) -> Option<(usize, usize)> {
        let c = metric_to_cell(p, &self.cell_grid());
        let (h, w) = (self.height() as i64, self.width() as i64);
        (c.ix >= 0 && c.ix < h && c.iy >= 0 && c.iy < w).then_some((c.ix as usize, c.iy as usize))
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn corners(&self) -> [Point2; 4] {
        [
            Point2::new(self.x_min, self.y_min),
            Point2::new(self.x_max, self.y_min),
            Point2::new(self.x_max, self.y_max),
            Point2::new(self.x_min, self.y_max),
        ]
    }

    pub fn diagonal(&self) -> f64 {
        (self.x_max - self.x_min).hypot(self.y_max - self.y_min)
    }
}

/// Center of local cell `(i, j)` in the ego frame.
pub fn local_cell_center(i: usize, j: usize, window: &WindowSpec) -> Result<Point2> {
    if i >= window.height() || j >= window.width() {
        return Err(Error::invalid(format!(
            "local cell ({i}, {j}) outside {}x{} window",
            window.height(),
            window.width()
        )));
    }
    let r = window.resolution;
    Ok(Point2::new(
        window.x_min + (i as f64 + 0.5) * r,
        window.y_min + (j as f64 + 0.5) * r,
    ))
}

/// Ordered point sequence with at least two points and positive length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point2>", into = "Vec<Point2>")]
pub struct Polyline {
    points: Vec<Point2>,
}

impl TryFrom<Vec<Point2>> for Polyline {
    type Error = Error;

    fn try_from(points: Vec<Point2>) -> Result<Self> {
        Polyline::new(points)
    }
}

impl From<Polyline> for Vec<Point2> {
    fn from(p: Polyline) -> Self {
        p.points
    }
}

impl Polyline {
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("polyline needs at least two points"));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("polyline has non-finite coordinates"));
        }
        let pl = Self { points };
        if pl.length() <= 0.0 {
            return Err(Error::invalid("degenerate zero-length polyline"));
        }
        Ok(pl)
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| a.distance(b)).sum()
    }

    pub fn is_closed(&self) -> bool {
        self.points.len() > 2 && self.points.first() == self.points.last()
    }

    pub fn centroid(&self) -> Point2 {
        let n = self.points.len() as f64;
        let (sx, sy) = self.points.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point2::new(sx / n, sy / n)
    }

    /// Axis-aligned bounds as `(min, max)`.
    pub fn bounds(&self) -> (Point2, Point2) {
        self.points.iter().fold(
            (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
            |(lo, hi), p| {
                (Point2::new(lo.x.min(p.x), lo.y.min(p.y)), Point2::new(hi.x.max(p.x), hi.y.max(p.y)))
            },
        )
    }

    pub fn transformed(&self, f: impl Fn(Point2) -> Point2) -> Polyline {
        Polyline { points: self.points.iter().map(|&p| f(p)).collect() }
    }

    /// Like [`Polyline::transformed`], re-validating because `f` may collapse points.
    pub fn try_map(&self, f: impl FnMut(Point2) -> Point2) -> Result<Polyline> {
        Polyline::new(self.points.iter().copied().map(f).collect())
    }
}

/// `k` points equally spaced by arclength; both endpoints are kept exactly.
pub fn resample_polyline(pl: &Polyline, k: usize) -> Result<Polyline> {
    if k < 2 {
        return Err(Error::invalid("resample count must be >= 2"));
    }
    let pts = pl.points();
    let mut cumulative = Vec::with_capacity(pts.len());
    cumulative.push(0.0);
    for (a, b) in pl.segments() {
        let last = *cumulative.last().unwrap();
        cumulative.push(last + a.distance(b));
    }
    let total = *cumulative.last().unwrap();
    if !(total > 0.0) {
        return Err(Error::invalid("degenerate zero-length polyline"));
    }

    let mut out = Vec::with_capacity(k);
    out.push(pts[0]);
    let mut seg = 0;
    for m in 1..k - 1 {
        let s = total * m as f64 / (k - 1) as f64;
        while seg + 1 < pts.len() - 1 && cumulative[seg + 1] < s {
            seg += 1;
        }
        let len = cumulative[seg + 1] - cumulative[seg];
        let t = if len > 0.0 { ((s - cumulative[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(pts[seg].lerp(pts[seg + 1], t));
    }
    out.push(pts[pts.len() - 1]);
    Ok(Polyline { points: out })
}

fn mean_nearest(from: &[Point2], to: &[Point2]) -> f64 {
    let sum: f64 = from
        .iter()
        .map(|p| to.iter().map(|q| p.distance_sq(*q)).fold(f64::INFINITY, f64::min).sqrt())
        .sum();
    sum / from.len() as f64
}

/// Symmetric mean-of-nearest-neighbour distance between two point sets.
///
/// Returns `+inf` if either set is empty.
pub fn chamfer_points(a: &[Point2], b: &[Point2]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    0.5 * (mean_nearest(a, b) + mean_nearest(b, a))
}

/// Chamfer distance after resampling both polylines to `k` points.
pub fn chamfer_distance(a: &Polyline, b: &Polyline, k: usize) -> Result<f64> {
    let ra = resample_polyline(a, k)?;
    let rb = resample_polyline(b, k)?;
    Ok(chamfer_points(ra.points(), rb.points()))
}

/// Squared Euclidean distance from `p` to the closed segment `a`-`b`.
pub fn point_segment_distance_sq(p: Point2, a: Point2, b: Point2) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq > 0.0 {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.x + t * dx, a.y + t * dy);
    let (ex, ey) = (p.x - cx, p.y - cy);
    ex * ex + ey * ey
}
