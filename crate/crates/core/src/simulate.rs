//! Synthetic worlds, trajectories and the closed perception/mapping loop.
//!
//! The perceiver here is a stochastic stand-in for a learned map detector:
//! it returns a noisy, incomplete copy of the ground truth, and its recall
//! improves when the retrieved prior already covers an element.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, point_segment_distance_sq, se2_apply, se2_inverse_apply, GridSpec, Point2, Polyline, Pose2, WindowSpec};
use crate::mapstore::{GlobalMap, UpdateParams, DEFAULT_TILE_SIZE};
use crate::raster::{rasterize_local, stroke_cells, Category, Frame, LocalMask, MapElement, RasterConfig, VectorMap};
use crate::rng::{self, SimRng, Stream};

// ---------------------------------------------------------------------------
// World

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    pub blocks_x: u32,
    pub blocks_y: u32,
    /// Nominal block side; each block column/row is scaled by a seeded factor
    /// in `[1 - block_jitter, 1 + block_jitter]`.
    pub block_size: f64,
    pub block_jitter: f64,
    pub lanes_per_direction: u32,
    pub lane_width: f64,
    pub crossing_depth: f64,
    /// Gap between the intersection box and its crossings.
    pub crossing_setback: f64,
    /// Probability that a road end at an intersection carries a crossing.
    pub crossing_probability: f64,
    /// Maximum distance between consecutive polyline vertices.
    pub vertex_spacing: f64,
    /// Free space around the road network.
    pub margin: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            blocks_x: 3,
            blocks_y: 3,
            block_size: 80.0,
            block_jitter: 0.15,
            lanes_per_direction: 2,
            lane_width: 3.5,
            crossing_depth: 4.0,
            crossing_setback: 1.0,
            crossing_probability: 0.75,
            vertex_spacing: 2.0,
            margin: 10.0,
        }
    }
}

impl WorldParams {
    pub fn road_width(&self) -> f64 {
        2.0 * f64::from(self.lanes_per_direction) * self.lane_width
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.block_size, self.lane_width, self.crossing_depth, self.vertex_spacing];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("world sizes must be positive"));
        }
        if !(0.0..0.5).contains(&self.block_jitter) {
            return Err(Error::invalid("block_jitter must be in [0, 0.5)"));
        }
        if !(0.0..=1.0).contains(&self.crossing_probability) {
            return Err(Error::invalid("crossing_probability must be in [0, 1]"));
        }
        if self.lanes_per_direction == 0 || self.margin < 0.0 || self.crossing_setback < 0.0 {
            return Err(Error::invalid("world needs at least one lane and non-negative margins"));
        }
        if self.blocks_x > 64 || self.blocks_y > 64 {
            return Err(Error::invalid("at most 64 blocks per axis"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub seed: u64,
    pub params: WorldParams,
    /// Width and height of the world rectangle anchored at the origin.
    pub extent: [f64; 2],
    /// Centerline coordinates of the north-south roads.
    pub road_x: Vec<f64>,
    /// Centerline coordinates of the east-west roads.
    pub road_y: Vec<f64>,
    pub gt_map: VectorMap,
}

impl World {
    /// Element count per category, in category-code order.
    pub fn census(&self) -> [usize; 3] {
        Category::ALL.map(|c| self.gt_map.count(c))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let w: World = serde_json::from_str(&fs::read_to_string(path)?)?;
        w.gt_map.expect_frame(Frame::World)?;
        w.gt_map.validate()?;
        Ok(w)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)? + "\n")?;
        Ok(())
    }

    fn intersection(&self, k: usize, l: usize) -> Point2 {
        Point2::new(self.road_x[k], self.road_y[l])
    }
}

fn densify(points: &[Point2], spacing: f64) -> Vec<Point2> {
    let mut out = vec![points[0]];
    for w in points.windows(2) {
        let n = (w[0].distance(w[1]) / spacing).ceil().max(1.0) as usize;
        for m in 1..=n {
            let t = m as f64 / n as f64;
            out.push(Point2::new(w[0].x + (w[1].x - w[0].x) * t, w[0].y + (w[1].y - w[0].y) * t));
        }
    }
    out
}

fn road_positions(n_blocks: u32, params: &WorldParams, rng: &mut SimRng) -> Vec<f64> {
    let rw = params.road_width();
    let mut pos = vec![params.margin + rw / 2.0];
    for _ in 0..n_blocks {
        let scale = 1.0 + params.block_jitter * (2.0 * rng.random::<f64>() - 1.0);
        let last = *pos.last().unwrap();
        pos.push(last + rw + params.block_size * scale);
    }
    pos
}

/// Deterministic Manhattan-style road network.
///
/// Block edges become road boundaries (plus one ring around the network),
/// lane lines run along every road segment between intersections and
/// crossings are rectangular outlines at road ends.
pub fn generate_world(seed: u64, params: &WorldParams) -> Result<World> {
    params.validate()?;
    let mut rng = rng::seeded(seed);
    let rw = params.road_width();
    let half = rw / 2.0;
    let road_x = road_positions(params.blocks_x, params, &mut rng);
    let road_y = road_positions(params.blocks_y, params, &mut rng);
    let extent = [road_x.last().unwrap() + half + params.margin, road_y.last().unwrap() + half + params.margin];

    let mut elements = Vec::new();
    if params.blocks_x == 0 || params.blocks_y == 0 {
        return Ok(World { seed, params: params.clone(), extent, road_x, road_y, gt_map: VectorMap::with_elements(Frame::World, elements) });
    }

    let mut push = |category: Category, corners: &[Point2]| {
        let pl = Polyline::new(densify(corners, params.vertex_spacing)).expect("generated polyline is valid");
        elements.push(MapElement::new(category, pl, 1.0));
    };

    let rect_edges = |x0: f64, y0: f64, x1: f64, y1: f64| {
        [
            [Point2::new(x0, y0), Point2::new(x1, y0)],
            [Point2::new(x1, y0), Point2::new(x1, y1)],
            [Point2::new(x1, y1), Point2::new(x0, y1)],
            [Point2::new(x0, y1), Point2::new(x0, y0)],
        ]
    };

    // outer ring
    let (x_lo, x_hi) = (road_x[0] - half, road_x.last().unwrap() + half);
    let (y_lo, y_hi) = (road_y[0] - half, road_y.last().unwrap() + half);
    for edge in rect_edges(x_lo, y_lo, x_hi, y_hi) {
        push(Category::Boundary, &edge);
    }
    // block kerbs
    for bx in 0..road_x.len() - 1 {
        for by in 0..road_y.len() - 1 {
            let edges = rect_edges(road_x[bx] + half, road_y[by] + half, road_x[bx + 1] - half, road_y[by + 1] - half);
            for edge in edges {
                push(Category::Boundary, &edge);
            }
        }
    }

    let lanes = params.lanes_per_direction as i32;
    let lane_offsets: Vec<f64> = (-(lanes - 1)..=(lanes - 1)).map(|m| f64::from(m) * params.lane_width).collect();
    let clear = half + params.crossing_setback + params.crossing_depth;

    // Each road segment runs between two intersections along one axis. The
    // closure receives (along-axis start, end, across-axis center) and a
    // mapping from (along, across) to world coordinates.
    let mut segment = |a0: f64, a1: f64, c: f64, to_world: &dyn Fn(f64, f64) -> Point2, rng: &mut SimRng| {
        for &off in &lane_offsets {
            push(Category::Divider, &[to_world(a0 + clear, c + off), to_world(a1 - clear, c + off)]);
        }
        let mut crossing = |near: f64, far: f64| {
            let ring = [
                to_world(near, c - half),
                to_world(far, c - half),
                to_world(far, c + half),
                to_world(near, c + half),
                to_world(near, c - half),
            ];
            push(Category::Crossing, &ring);
        };
        let start = a0 + half + params.crossing_setback;
        if rng.random::<f64>() < params.crossing_probability {
            crossing(start, start + params.crossing_depth);
        }
        let end = a1 - half - params.crossing_setback;
        if rng.random::<f64>() < params.crossing_probability {
            crossing(end, end - params.crossing_depth);
        }
    };

    for &y in &road_y {
        for k in 0..road_x.len() - 1 {
            segment(road_x[k], road_x[k + 1], y, &|a, c| Point2::new(a, c), &mut rng);
        }
    }
    for &x in &road_x {
        for l in 0..road_y.len() - 1 {
            segment(road_y[l], road_y[l + 1], x, &|a, c| Point2::new(c, a), &mut rng);
        }
    }

    Ok(World { seed, params: params.clone(), extent, road_x, road_y, gt_map: VectorMap::with_elements(Frame::World, elements) })
}

// ---------------------------------------------------------------------------
// Trajectories

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    /// Repeated laps around a rectangle of blocks.
    Loop,
    /// Along one full road, U-turn, and back.
    #[serde(rename = "outback")]
    OutAndBack,
    /// Serpentine over every east-west road.
    Grid,
    /// One pass along one full east-west road.
    Straight,
}

impl TrajectoryKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Loop => "loop",
            Self::OutAndBack => "outback",
            Self::Grid => "grid",
            Self::Straight => "straight",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "loop" => Some(Self::Loop),
            "outback" | "out-and-back" => Some(Self::OutAndBack),
            "grid" => Some(Self::Grid),
            "straight" => Some(Self::Straight),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryParams {
    /// Distance between consecutive frames on straight stretches.
    pub spacing: f64,
    pub speed: f64,
    pub start_time: f64,
    pub laps: u32,
    pub turn_radius: f64,
    pub max_step: f64,
    pub max_turn: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self { spacing: 0.5, speed: 10.0, start_time: 0.0, laps: 2, turn_radius: 6.0, max_step: 2.0, max_turn: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPose {
    pub t: f64,
    pub pose: Pose2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub poses: Vec<TimedPose>,
}

impl Trajectory {
    /// Checks time ordering and the per-step translation and rotation limits.
    pub fn validate(&self, max_step: f64, max_turn: f64) -> Result<()> {
        for (k, w) in self.poses.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            if !(b.t > a.t) {
                return Err(Error::invalid(format!("trajectory {}: timestamps not increasing at {}", self.id, k + 1)));
            }
            let step = a.pose.translation().distance(b.pose.translation());
            let turn = normalize_angle(b.pose.yaw() - a.pose.yaw()).abs();
            if step > max_step || turn > max_turn {
                return Err(Error::invalid(format!(
                    "trajectory {}: step {k} moves {step:.3} m / {turn:.3} rad",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let t: Trajectory = serde_json::from_str(&fs::read_to_string(path)?)?;
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)? + "\n")?;
        Ok(())
    }
}

enum Piece {
    Line(Point2, Point2),
    Arc { center: Point2, radius: f64, start: f64, sweep: f64 },
}

impl Piece {
    fn length(&self) -> f64 {
        match self {
            Piece::Line(a, b) => a.distance(*b),
            Piece::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    /// Position and heading at arclength fraction `u`.
    fn at(&self, u: f64) -> (Point2, f64) {
        match *self {
            Piece::Line(a, b) => {
                (Point2::new(a.x + (b.x - a.x) * u, a.y + (b.y - a.y) * u), (b.y - a.y).atan2(b.x - a.x))
            }
            Piece::Arc { center, radius, start, sweep } => {
                let phi = start + sweep * u;
                let p = Point2::new(center.x + radius * phi.cos(), center.y + radius * phi.sin());
                (p, phi + sweep.signum() * FRAC_PI_2)
            }
        }
    }
}

fn unit(a: Point2, b: Point2) -> Point2 {
    let d = a.distance(b);
    Point2::new((b.x - a.x) / d, (b.y - a.y) / d)
}

/// Turns a centerline route into drivable pieces: each leg is offset into
/// the right-hand lane, right-angle turns are filleted and reversals become
/// a left U-turn.
fn lane_path(nodes: &[Point2], offset: f64, radius: f64) -> Vec<Piece> {
    let mut pts: Vec<Point2> = Vec::with_capacity(nodes.len());
    for &p in nodes {
        if pts.last().is_some_and(|q: &Point2| q.distance(p) < 1e-9) {
            continue;
        }
        // drop the middle of straight runs
        if pts.len() >= 2 {
            let (a, b) = (pts[pts.len() - 2], pts[pts.len() - 1]);
            let (u, v) = (unit(a, b), unit(b, p));
            if (u.x * v.x + u.y * v.y) > 1.0 - 1e-9 {
                pts.pop();
            }
        }
        pts.push(p);
    }
    let dirs: Vec<Point2> = pts.windows(2).map(|w| unit(w[0], w[1])).collect();
    let right = |u: Point2| Point2::new(u.y, -u.x);
    let shift = |p: Point2, n: Point2, d: f64| Point2::new(p.x + n.x * d, p.y + n.y * d);

    let mut pieces = Vec::new();
    let mut cursor = shift(pts[0], right(dirs[0]), offset);
    for k in 1..pts.len() - 1 {
        let (u0, u1) = (dirs[k - 1], dirs[k]);
        let cross = u0.x * u1.y - u0.y * u1.x;
        let dot = u0.x * u1.x + u0.y * u1.y;
        if dot < -0.5 {
            let entry = shift(pts[k], right(u0), offset);
            pieces.push(Piece::Line(cursor, entry));
            let start = (entry.y - pts[k].y).atan2(entry.x - pts[k].x);
            pieces.push(Piece::Arc { center: pts[k], radius: offset, start, sweep: PI });
            cursor = shift(pts[k], right(u1), offset);
            continue;
        }
        let corner = shift(shift(pts[k], right(u0), offset), right(u1), offset);
        let theta = cross.atan2(dot);
        let cut = radius * (theta.abs() / 2.0).tan();
        let t0 = shift(corner, u0, -cut);
        let t1 = shift(corner, u1, cut);
        pieces.push(Piece::Line(cursor, t0));
        let left = Point2::new(-u0.y, u0.x);
        let side = theta.signum();
        let center = shift(t0, left, side * radius);
        let start = (t0.y - center.y).atan2(t0.x - center.x);
        pieces.push(Piece::Arc { center, radius, start, sweep: theta });
        cursor = t1;
    }
    let last = pts.len() - 1;
    pieces.push(Piece::Line(cursor, shift(pts[last], right(dirs[last - 1]), offset)));
    pieces.retain(|p| p.length() > 1e-9);
    pieces
}

fn sample_path(pieces: &[Piece], params: &TrajectoryParams, id: String) -> Trajectory {
    let mut poses = Vec::new();
    let mut s = 0.0;
    for piece in pieces {
        let len = piece.length();
        let step = match piece {
            Piece::Line(..) => params.spacing,
            Piece::Arc { radius, .. } => params.spacing.min(0.25 * radius),
        };
        let n = (len / step).ceil().max(1.0) as usize;
        for m in 0..n {
            let u = m as f64 / n as f64;
            let (p, yaw) = piece.at(u);
            poses.push(TimedPose { t: params.start_time + (s + u * len) / params.speed, pose: Pose2::new(p.x, p.y, yaw) });
        }
        s += len;
    }
    if let Some(last) = pieces.last() {
        let (p, yaw) = last.at(1.0);
        poses.push(TimedPose { t: params.start_time + s / params.speed, pose: Pose2::new(p.x, p.y, yaw) });
    }
    Trajectory { id, poses }
}

/// Generates a trajectory that follows lane centers of `world`'s roads.
pub fn generate_trajectory(world: &World, seed: u64, kind: TrajectoryKind, params: &TrajectoryParams) -> Result<Trajectory> {
    generate_trajectory_with_id(world, seed, kind, params, format!("{}-{seed}", kind.name()))
}


pub fn generate_trajectory_with_id(
    world: &World,
    seed: u64,
    kind: TrajectoryKind,
    params: &TrajectoryParams,
    id: String,
) -> Result<Trajectory> {
    if !(params.spacing > 0.0 && params.speed > 0.0 && params.turn_radius > 0.0) {
        return Err(Error::invalid("trajectory spacing, speed and turn radius must be positive"));
    }
    let (nx, ny) = (world.road_x.len(), world.road_y.len());
    if world.gt_map.elements.is_empty() || nx < 2 || ny < 2 {
        return Err(Error::invalid("world has no road network"));
    }
    let mut rng = rng::seeded(rng::derive_seed(seed, &[0x7472_616a]));
    let p = |k: usize, l: usize| world.intersection(k, l);
    let nodes: Vec<Point2> = match kind {
        TrajectoryKind::Loop => {
            let k0 = rng.random_range(0..nx - 1);
            let k1 = k0 + rng.random_range(1..=(nx - 1 - k0).min(2));
            let l0 = rng.random_range(0..ny - 1);
            let l1 = l0 + rng.random_range(1..=(ny - 1 - l0).min(2));
            let ring = [p(k0, l0), p(k1, l0), p(k1, l1), p(k0, l1)];
            let mid = Point2::new(0.5 * (ring[0].x + ring[1].x), ring[0].y);
            let mut nodes = vec![mid];
            for _ in 0..params.laps.max(1) {
                nodes.extend_from_slice(&ring[1..]);
                nodes.push(ring[0]);
            }
            nodes.push(mid);
            nodes
        }
        TrajectoryKind::OutAndBack => {
            if rng.random::<bool>() {
                let l = rng.random_range(0..ny);
                vec![p(0, l), p(nx - 1, l), p(0, l)]
            } else {
                let k = rng.random_range(0..nx);
                vec![p(k, 0), p(k, ny - 1), p(k, 0)]
            }
        }
        TrajectoryKind::Grid => {
            let mut nodes = Vec::new();
            for l in 0..ny {
                if l % 2 == 0 {
                    nodes.extend([p(0, l), p(nx - 1, l)]);
                } else {
                    nodes.extend([p(nx - 1, l), p(0, l)]);
                }
            }
            nodes
        }
        TrajectoryKind::Straight => {
            let l = rng.random_range(0..ny);
            vec![p(0, l), p(nx - 1, l)]
        }
    };
    let offset = world.params.lane_width / 2.0;
    let traj = sample_path(&lane_path(&nodes, offset, params.turn_radius), params, id);
    traj.validate(params.max_step, params.max_turn)?;
    Ok(traj)
}

// ---------------------------------------------------------------------------
// Ground truth and perception

/// Liang-Barsky clip of segment `a`-`b` to the window; returns the clipped
/// parameters `(t0, t1)`.
fn clip_segment(a: Point2, b: Point2, w: &WindowSpec) -> Option<(f64, f64)> {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (p, q) in [(-dx, a.x - w.x_min), (dx, w.x_max - a.x), (-dy, a.y - w.y_min), (dy, w.y_max - a.y)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Splits an ego-frame polyline into the pieces that lie inside the window.
pub fn clip_polyline(points: &[Point2], window: &WindowSpec) -> Vec<Polyline> {
    let lerp = |a: Point2, b: Point2, t: f64| {
        if t == 0.0 {
            a
        } else if t == 1.0 {
            b
        } else {
            Point2::new(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t)
        }
    };
    let mut pieces = Vec::new();
    let mut current: Vec<Point2> = Vec::new();
    for w in points.windows(2) {
        match clip_segment(w[0], w[1], window) {
            Some((t0, t1)) => {
                if t0 > 0.0 || current.is_empty() {
                    if current.len() >= 2 {
                        pieces.push(std::mem::take(&mut current));
                    }
                    current.clear();
                    current.push(lerp(w[0], w[1], t0));
                }
                current.push(lerp(w[0], w[1], t1));
                if t1 < 1.0 {
                    pieces.push(std::mem::take(&mut current));
                }
            }
            None => {
                if current.len() >= 2 {
                    pieces.push(std::mem::take(&mut current));
                }
                current.clear();
            }
        }
    }
    if current.len() >= 2 {
        pieces.push(current);
    }
    pieces.into_iter().filter_map(|p| Polyline::new(p).ok()).collect()
}

/// Ground-truth elements visible from `pose`, clipped to the window, in the ego frame.
pub fn crop_gt(world: &World, pose: &Pose2, window: &WindowSpec) -> VectorMap {
    let reach = window.x_min.abs().max(window.x_max.abs()).hypot(window.y_min.abs().max(window.y_max.abs()));
    let center = pose.translation();
    let mut out = VectorMap::new(Frame::Ego);
    for e in &world.gt_map.elements {
        let (lo, hi) = e.shape.bounds();
        let dx = (lo.x - center.x).max(center.x - hi.x).max(0.0);
        let dy = (lo.y - center.y).max(center.y - hi.y).max(0.0);
        if dx.hypot(dy) > reach {
            continue;
        }
        let local: Vec<Point2> = e.shape.points().iter().map(|&p| se2_inverse_apply(pose, p)).collect();
        for piece in clip_polyline(&local, window) {
            out.elements.push(MapElement::new(e.category, piece, 1.0));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    /// Standard deviation of the translation error added to x and y.
    pub sigma_t: f64,
    /// Standard deviation of the heading error.
    pub sigma_r: f64,
    /// Per-vertex Gaussian jitter of perceived polylines.
    pub point_jitter: f64,
    /// Additional jitter per meter of distance from the ego origin.
    pub range_jitter: f64,
    /// Detection probability of an element within sensor range.
    pub base_recall: f64,
    /// Elements whose nearest point is farther than this are invisible to
    /// the sensors and can only be recovered through the prior. `None`
    /// means unlimited.
    pub sensor_range: Option<f64>,
    pub occlusion_sectors: u32,
    /// Angular width of each occluded sector.
    pub occlusion_width: f64,
    /// Expected number of spurious elements per frame.
    pub false_positive_rate: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            sigma_t: 0.0,
            sigma_r: 0.0,
            point_jitter: 0.15,
            range_jitter: 0.0,
            base_recall: 0.7,
            sensor_range: Some(12.0),
            occlusion_sectors: 1,
            occlusion_width: PI / 3.0,
            false_positive_rate: 0.2,
        }
    }
}

impl NoiseParams {
    /// No noise, full recall, no occlusion, no spurious elements.
    pub fn noiseless() -> Self {
        Self {
            sigma_t: 0.0,
            sigma_r: 0.0,
            point_jitter: 0.0,
            range_jitter: 0.0,
            base_recall: 1.0,
            sensor_range: None,
            occlusion_sectors: 0,
            occlusion_width: 0.0,
            false_positive_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let non_neg = [self.sigma_t, self.sigma_r, self.point_jitter, self.range_jitter, self.occlusion_width, self.false_positive_rate];
        if non_neg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("noise sigmas and rates must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.base_recall) {
            return Err(Error::invalid("base_recall must be in [0, 1]"));
        }
        if self.sensor_range.is_some_and(|r| !(r >= 0.0)) {
            return Err(Error::invalid("sensor_range must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionPolicy {
    /// Fraction of an element's cells that must be set in the prior to boost it.
    pub prior_overlap_threshold: f64,
    pub recall_boost: f64,
}

impl Default for FusionPolicy {
    fn default() -> Self {
        Self { prior_overlap_threshold: 0.3, recall_boost: 0.25 }
    }
}

impl FusionPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.prior_overlap_threshold) || !(0.0..=1.0).contains(&self.recall_boost) {
            return Err(Error::invalid("fusion threshold and boost must be in [0, 1]"));
        }
        Ok(())
    }

    /// Recall for an element given the fraction of its cells present in the prior.
    pub fn recall(&self, base: f64, prior_overlap: Option<f64>) -> f64 {
        match prior_overlap {
            Some(f) if f >= self.prior_overlap_threshold => (base + self.recall_boost).min(1.0),
            _ => base,
        }
    }
}

/// Fraction of the element's stroke cells present in the prior's matching
/// channel, or `None` when the stroke covers no window cell.
pub fn prior_overlap(element: &MapElement, prior: &LocalMask, halfwidth: f64) -> Option<f64> {
    let cells = stroke_cells(&element.shape, prior.window(), halfwidth);
    if cells.is_empty() {
        return None;
    }
    let hit = cells.iter().filter(|&&(i, j)| prior.get(i, j, element.category)).count();
    Some(hit as f64 / cells.len() as f64)
}

/// Distance from the ego origin to the nearest point of an ego-frame polyline.
fn nearest_range(shape: &Polyline) -> f64 {
    shape
        .segments()
        .map(|(a, b)| point_segment_distance_sq(Point2::default(), a, b))
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

fn in_sector(angle: f64, start: f64, width: f64) -> bool {
    (angle - start).rem_euclid(2.0 * PI) < width
}

/// Inputs shared by every perception call of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Perceiver {
    pub window: WindowSpec,
    pub noise: NoiseParams,
    pub fusion: FusionPolicy,
    /// Stroke half-width used to measure prior overlap.
    pub stroke_halfwidth: f64,
}

impl Perceiver {
    pub fn new(window: WindowSpec, noise: NoiseParams, fusion: FusionPolicy) -> Self {
        Self { window, noise, fusion, stroke_halfwidth: RasterConfig::default().stroke_halfwidth }
    }

    /// Perceives an already cropped ground truth.
    ///
    /// Random draws happen in a fixed order regardless of the outcome (sector
    /// starts, then per element: recall draw, confidence, vertex jitter; then
    /// spurious elements), so two calls with the same stream stay aligned even
    /// when a prior changes which elements survive.
    pub fn perceive_crop(&self, gt: &VectorMap, prior: Option<&LocalMask>, rng: &mut SimRng) -> VectorMap {
        let noise = &self.noise;
        let sectors: Vec<f64> = (0..noise.occlusion_sectors).map(|_| rng.random_range(-PI..PI)).collect();
        let mut out = VectorMap::new(Frame::Ego);
        for e in &gt.elements {
            let u: f64 = rng.random();
            let confidence = rng.random_range(0.6..0.95);
            let jittered: Vec<Point2> = e
                .shape
                .points()
                .iter()
                .map(|p| {
                    let sigma = noise.point_jitter + noise.range_jitter * p.norm();
                    let zx: f64 = rng.sample(StandardNormal);
                    let zy: f64 = rng.sample(StandardNormal);
                    Point2::new(p.x + sigma * zx, p.y + sigma * zy)
                })
                .collect();

            let sensed = match noise.sensor_range {
                Some(range) => nearest_range(&e.shape) <= range,
                None => true,
            };
            let base = if sensed { noise.base_recall } else { 0.0 };
            let overlap = prior.and_then(|m| prior_overlap(e, m, self.stroke_halfwidth));
            let recall = self.fusion.recall(base, overlap);
            if u >= recall {
                continue;
            }
            let c = e.shape.centroid();
            let bearing = c.y.atan2(c.x);
            if sectors.iter().any(|&s| in_sector(bearing, s, noise.occlusion_width)) {
                continue;
            }
            if let Ok(shape) = Polyline::new(jittered) {
                out.elements.push(MapElement::new(e.category, shape, confidence));
            }
        }

        if noise.false_positive_rate > 0.0 {
            let n = Poisson::new(noise.false_positive_rate).map(|d| d.sample(rng)).unwrap_or(0.0) as usize;
            let w = &self.window;
            for _ in 0..n {
                let category = Category::ALL[rng.random_range(0..3)];
                let c = Point2::new(rng.random_range(w.x_min..w.x_max), rng.random_range(w.y_min..w.y_max));
                let heading: f64 = rng.random_range(-PI..PI);
                let len: f64 = rng.random_range(2.0..8.0);
                let confidence = rng.random_range(0.3..0.6);
                let (s, co) = heading.sin_cos();
                let pts = (0..3)
                    .map(|m| {
                        let d = len * (f64::from(m) / 2.0 - 0.5);
                        Point2::new(c.x + co * d, c.y + s * d)
                    })
                    .collect();
                if let Ok(shape) = Polyline::new(pts) {
                    out.elements.push(MapElement::new(category, shape, confidence));
                }
            }
        }
        out
    }

    pub fn perceive(&self, world: &World, pose: &Pose2, prior: Option<&LocalMask>, rng: &mut SimRng) -> VectorMap {
        self.perceive_crop(&crop_gt(world, pose, &self.window), prior, rng)
    }
}

/// Free-function form of [`Perceiver::perceive`].
pub fn perceive(
    world: &World,
    pose: &Pose2,
    window: &WindowSpec,
    noise: &NoiseParams,
    prior: Option<&LocalMask>,
    fusion: &FusionPolicy,
    rng: &mut SimRng,
) -> VectorMap {
    Perceiver::new(*window, noise.clone(), fusion.clone()).perceive(world, pose, prior, rng)
}

/// Adds independent Gaussian noise to x, y (`sigma_t`) and yaw (`sigma_r`).
/// Always consumes three normal draws.
pub fn perturb_pose(pose: &Pose2, sigma_t: f64, sigma_r: f64, rng: &mut SimRng) -> Pose2 {
    let zx: f64 = rng.sample(StandardNormal);
    let zy: f64 = rng.sample(StandardNormal);
    let zr: f64 = rng.sample(StandardNormal);
    Pose2::new(pose.x + sigma_t * zx, pose.y + sigma_t * zy, pose.yaw() + sigma_r * zr)
}

// ---------------------------------------------------------------------------
// Scenarios

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorldSource {
    File { path: PathBuf },
    Generate { seed: u64, #[serde(default)] params: WorldParams },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrajectorySource {
    File { path: PathBuf },
    Generate {
        #[serde(default)]
        id: Option<String>,
        kind: TrajectoryKind,
        seed: u64,
        #[serde(default)]
        params: TrajectoryParams,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialMap {
    Empty,
    #[serde(untagged)]
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapLayout {
    pub origin: Point2,
    pub tile_size: u32,
}

impl Default for MapLayout {
    fn default() -> Self {
        Self { origin: Point2::default(), tile_size: DEFAULT_TILE_SIZE }
    }
}

pub const SCENARIO_VERSION: u32 = 1;

/// Scenario file contents (JSON). Paths are relative to the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub world: WorldSource,
    pub trajectories: Vec<TrajectorySource>,
    #[serde(default)]
    pub noise: NoiseParams,
    #[serde(default)]
    pub fusion: FusionPolicy,
    #[serde(default)]
    pub update: UpdateParams,
    #[serde(default)]
    pub window: WindowSpec,
    #[serde(default)]
    pub raster: RasterConfig,
    #[serde(default)]
    pub map: MapLayout,
    #[serde(default = "initial_empty")]
    pub initial_map: InitialMap,
    pub rng_seed: u64,
}

fn initial_empty() -> InitialMap {
    InitialMap::Empty
}

impl ScenarioConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Loads every referenced file and generates every generated input.
    pub fn resolve(&self, base_dir: &Path) -> Result<Scenario> {
        if self.version != SCENARIO_VERSION {
            return Err(Error::invalid(format!("unsupported scenario version {}", self.version)));
        }
        let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
        let world = match &self.world {
            WorldSource::File { path } => World::load(at(path))?,
            WorldSource::Generate { seed, params } => generate_world(*seed, params)?,
        };
        let mut trajectories = Vec::with_capacity(self.trajectories.len());
        for (n, src) in self.trajectories.iter().enumerate() {
            trajectories.push(match src {
                TrajectorySource::File { path } => Trajectory::load(at(path))?,
                TrajectorySource::Generate { id, kind, seed, params } => {
                    let id = id.clone().unwrap_or_else(|| format!("{}-{n}", kind.name()));
                    generate_trajectory_with_id(&world, *seed, *kind, params, id)?
                }
            });
        }
        let initial_map = match &self.initial_map {
            InitialMap::Empty => None,
            InitialMap::File { path } => Some(GlobalMap::load(at(path))?),
        };
        let scenario = Scenario {
            world,
            trajectories,
            noise: self.noise.clone(),
            fusion: self.fusion.clone(),
            update: self.update,
            window: self.window,
            raster: self.raster,
            map: self.map.clone(),
            initial_map,
            rng_seed: self.rng_seed,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

/// A scenario with every input materialized.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub world: World,
    pub trajectories: Vec<Trajectory>,
    pub noise: NoiseParams,
    pub fusion: FusionPolicy,
    pub update: UpdateParams,
    pub window: WindowSpec,
    pub raster: RasterConfig,
    pub map: MapLayout,
    pub initial_map: Option<GlobalMap>,
    pub rng_seed: u64,
}

impl Scenario {
    /// Default settings for a world and trajectories, with an empty initial map.
    pub fn new(world: World, trajectories: Vec<Trajectory>, rng_seed: u64) -> Self {
        Self {
            world,
            trajectories,
            noise: NoiseParams::default(),
            fusion: FusionPolicy::default(),
            update: UpdateParams::default(),
            window: WindowSpec::default(),
            raster: RasterConfig::default(),
            map: MapLayout::default(),
            initial_map: None,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.noise.validate()?;
        self.fusion.validate()?;
        self.update.validate()?;
        self.raster.validate()?;
        let mut ids: Vec<&str> = self.trajectories.iter().map(|t| t.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("trajectory ids must be unique"));
        }
        for t in &self.trajectories {
            if t.poses.windows(2).any(|w| !(w[1].t > w[0].t)) {
                return Err(Error::invalid(format!("trajectory {}: timestamps not increasing", t.id)));
            }
        }
        Ok(())
    }

    fn initial(&self) -> Result<GlobalMap> {
        match &self.initial_map {
            Some(m) => Ok(m.clone()),
            None => GlobalMap::with_tile_size(
                GridSpec::new(self.map.origin, self.window.resolution)?,
                self.update,
                self.map.tile_size,
            ),
        }
    }

    /// All frames of all trajectories as `(trajectory index, pose index)`,
    /// ordered by timestamp, ties broken by trajectory order.
    pub fn frame_order(&self) -> Vec<(usize, usize)> {
        let mut order: Vec<(usize, usize)> = self
            .trajectories
            .iter()
            .enumerate()
            .flat_map(|(ti, t)| (0..t.poses.len()).map(move |pi| (ti, pi)))
            .collect();
        order.sort_by(|a, b| {
            let ta = self.trajectories[a.0].poses[a.1].t;
            let tb = self.trajectories[b.0].poses[b.1].t;
            ta.total_cmp(&tb).then(a.0.cmp(&b.0))
        });
        order
    }
}

/// Everything recorded for one simulated frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub trajectory: String,
    pub index: usize,
    pub timestamp: f64,
    pub true_pose: Pose2,
    pub noisy_pose: Pose2,
    pub prediction: VectorMap,
    pub gt: VectorMap,
    pub prior: LocalMask,
}

#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub map: GlobalMap,
    pub log: Vec<FrameRecord>,
}

/// Runs the closed loop and collects the log in memory.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioOutput> {
    let mut log = Vec::new();
    let map = run_scenario_with(scenario, |rec| {
        log.push(rec);
        Ok(())
    })?;
    Ok(ScenarioOutput { map, log })
}

/// Runs the closed loop, handing each frame record to `sink` as it is produced.
///
/// Per frame: perturb the pose, retrieve the prior at the noisy pose,
/// perceive from the true pose, rasterize the prediction and fold it into
/// the map at the noisy pose.
pub fn run_scenario_with(scenario: &Scenario, mut sink: impl FnMut(FrameRecord) -> Result<()>) -> Result<GlobalMap> {
    scenario.validate()?;
    let mut map = scenario.initial()?;
    let perceiver = Perceiver {
        window: scenario.window,
        noise: scenario.noise.clone(),
        fusion: scenario.fusion.clone(),
        stroke_halfwidth: scenario.raster.stroke_halfwidth,
    };
    let mut streams: Vec<(SimRng, SimRng)> = scenario
        .trajectories
        .iter()
        .map(|t| {
            (
                rng::vehicle_stream(scenario.rng_seed, &t.id, Stream::Perception),
                rng::vehicle_stream(scenario.rng_seed, &t.id, Stream::PoseNoise),
            )
        })
        .collect();

    for (ti, pi) in scenario.frame_order() {
        let traj = &scenario.trajectories[ti];
        let TimedPose { t, pose } = traj.poses[pi];
        let (perception_rng, pose_rng) = &mut streams[ti];
        let noisy = perturb_pose(&pose, scenario.noise.sigma_t, scenario.noise.sigma_r, pose_rng);
        let prior = map.retrieve(&noisy, &scenario.window)?;
        let gt = crop_gt(&scenario.world, &pose, &scenario.window);
        let prediction = perceiver.perceive_crop(&gt, Some(&prior), perception_rng);
        let mask = rasterize_local(&prediction, &scenario.window, &scenario.raster)?;
        map.update(&mask, &noisy)?;
        sink(FrameRecord {
            trajectory: traj.id.clone(),
            index: pi,
            timestamp: t,
            true_pose: pose,
            noisy_pose: noisy,
            prediction,
            gt,
            prior,
        })?;
    }
    Ok(map)
}

/// Default world and one generated trajectory of `kind`, all seeded by `seed`.
pub fn default_scenario(seed: u64, kind: TrajectoryKind) -> Result<Scenario> {
    let world = generate_world(seed, &WorldParams::default())?;
    let traj = generate_trajectory(&world, seed, kind, &TrajectoryParams::default())?;
    Ok(Scenario::new(world, vec![traj], seed))
}

/// Writes one record as a line of newline-delimited JSON.
pub fn write_log_record(out: &mut impl Write, rec: &FrameRecord) -> Result<()> {
    serde_json::to_writer(&mut *out, rec)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Reads a newline-delimited JSON log; blank lines are skipped.
pub fn read_log(input: impl BufRead) -> Result<Vec<FrameRecord>> {
    let mut log = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(&line)
            .map_err(|e| Error::invalid(format!("log line {}: {e}", n + 1)))?;
        rec.prediction.expect_frame(Frame::Ego)?;
        rec.gt.expect_frame(Frame::Ego)?;
        log.push(rec);
    }
    Ok(log)
}

pub fn load_log(path: impl AsRef<Path>) -> Result<Vec<FrameRecord>> {
    read_log(BufReader::new(fs::File::open(path)?))
}

/// World-frame footprint of the window at `pose`, for tests and diagnostics.
pub fn window_outline(pose: &Pose2, window: &WindowSpec) -> [Point2; 4] {
    window.corners().map(|c| se2_apply(pose, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_world() -> World {
        generate_world(3, &WorldParams::default()).unwrap()
    }

    #[test]
    fn world_is_deterministic_and_complete() {
        let a = default_world();
        let b = default_world();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let census = a.census();
        assert!(census.iter().all(|&n| n > 0), "{census:?}");
        assert!(a.extent[0] >= 200.0 && a.extent[1] >= 200.0);
        for e in &a.gt_map.elements {
            for p in e.shape.points() {
                assert!(p.x >= 0.0 && p.y >= 0.0 && p.x <= a.extent[0] && p.y <= a.extent[1]);
            }
        }
        assert_ne!(a, generate_world(4, &WorldParams::default()).unwrap());
    }

    #[test]
    fn zero_blocks_is_empty() {
        let w = generate_world(1, &WorldParams { blocks_x: 0, ..Default::default() }).unwrap();
        assert!(w.gt_map.elements.is_empty());
    }

    #[test]
    fn trajectories_respect_step_limits() {
        let world = default_world();
        let params = TrajectoryParams::default();
        for kind in [TrajectoryKind::Loop, TrajectoryKind::OutAndBack, TrajectoryKind::Grid, TrajectoryKind::Straight] {
            for seed in 0..4 {
                let t = generate_trajectory(&world, seed, kind, &params).unwrap();
                t.validate(2.0, 0.3).unwrap();
                assert!(t.poses.len() > 100);
                assert_eq!(t, generate_trajectory(&world, seed, kind, &params).unwrap());
            }
        }
    }

    #[test]
    fn loop_closes() {
        let world = default_world();
        for seed in 0..5 {
            let t = generate_trajectory(&world, seed, TrajectoryKind::Loop, &TrajectoryParams::default()).unwrap();
            let (a, b) = (t.poses[0].pose, t.poses.last().unwrap().pose);
            assert!(a.translation().distance(b.translation()) < 1.0);
        }
    }

    #[test]
    fn clip_examples() {
        let w = WindowSpec::default();
        let inside = [Point2::new(-5.0, 1.0), Point2::new(5.0, 2.0)];
        assert_eq!(clip_polyline(&inside, &w), vec![Polyline::new(inside.to_vec()).unwrap()]);

        let straddle = [Point2::new(20.0, 0.0), Point2::new(40.0, 10.0)];
        let pieces = clip_polyline(&straddle, &w);
        assert_eq!(pieces.len(), 1);
        let end = *pieces[0].points().last().unwrap();
        assert!((end.x - 30.0).abs() < 1e-6 && (end.y - 5.0).abs() < 1e-6);

        // leaves and re-enters
        let zig = [Point2::new(0.0, 0.0), Point2::new(0.0, 20.0), Point2::new(5.0, 20.0), Point2::new(5.0, 0.0)];
        let pieces = clip_polyline(&zig, &w);
        assert_eq!(pieces.len(), 2);
        assert_eq!(pieces[0].points()[0], Point2::new(0.0, 0.0));
        assert!((pieces[1].points()[0].y - 15.0).abs() < 1e-9);

        let outside = [Point2::new(100.0, 0.0), Point2::new(200.0, 0.0)];
        assert!(clip_polyline(&outside, &w).is_empty());
    }

    #[test]
    fn crop_far_away_is_empty() {
        let world = default_world();
        let gt = crop_gt(&world, &Pose2::new(5000.0, 5000.0, 0.3), &WindowSpec::default());
        assert!(gt.elements.is_empty());
    }

    #[test]
    fn crop_transforms_inside_elements_exactly() {
        let a = Point2::new(100.0, 50.0);
        let b = Point2::new(104.0, 53.0);
        let world = World {
            seed: 0,
            params: WorldParams::default(),
            extent: [200.0, 200.0],
            road_x: vec![],
            road_y: vec![],
            gt_map: VectorMap::with_elements(Frame::World, vec![MapElement::new(Category::Divider, Polyline::new(vec![a, b]).unwrap(), 1.0)]),
        };
        let pose = Pose2::new(98.0, 49.0, 0.4);
        let gt = crop_gt(&world, &pose, &WindowSpec::default());
        assert_eq!(gt.elements.len(), 1);
        let pts = gt.elements[0].shape.points();
        assert_eq!(pts, &[se2_inverse_apply(&pose, a), se2_inverse_apply(&pose, b)]);
    }

    #[test]
    fn noiseless_perception_is_identity() {
        let world = default_world();
        let traj = generate_trajectory(&world, 1, TrajectoryKind::Loop, &TrajectoryParams::default()).unwrap();
        let perceiver = Perceiver::new(WindowSpec::default(), NoiseParams::noiseless(), FusionPolicy::default());
        let mut rng = rng::seeded(9);
        for tp in traj.poses.iter().step_by(97) {
            let gt = crop_gt(&world, &tp.pose, &perceiver.window);
            let seen = perceiver.perceive_crop(&gt, None, &mut rng);
            assert_eq!(seen.elements.len(), gt.elements.len());
            for (s, g) in seen.elements.iter().zip(&gt.elements) {
                assert_eq!(s.category, g.category);
                assert_eq!(s.shape, g.shape);
            }
        }
    }

    #[test]
    fn zero_recall_leaves_only_false_positives() {
        let world = default_world();
        let noise = NoiseParams { base_recall: 0.0, false_positive_rate: 2.0, ..NoiseParams::default() };
        let fusion = FusionPolicy { recall_boost: 0.0, ..Default::default() };
        let perceiver = Perceiver::new(WindowSpec::default(), noise, fusion);
        let mut rng = rng::seeded(2);
        let pose = Pose2::new(world.road_x[1], world.road_y[1] + 30.0, FRAC_PI_2);
        let mut spurious = 0;
        for _ in 0..50 {
            let seen = perceiver.perceive(&world, &pose, None, &mut rng);
            assert!(seen.elements.iter().all(|e| e.confidence < 0.6));
            spurious += seen.elements.len();
        }
        assert!(spurious > 50);
    }

    #[test]
    fn perturb_pose_zero_sigma_is_identity() {
        let mut rng = rng::seeded(1);
        let p = Pose2::new(3.0, -4.0, -3.1);
        for _ in 0..100 {
            assert_eq!(perturb_pose(&p, 0.0, 0.0, &mut rng), p);
        }
        let q = perturb_pose(&Pose2::new(0.0, 0.0, PI), 0.0, 1.0, &mut rng);
        assert!(q.yaw() > -PI && q.yaw() <= PI);
    }

    #[test]
    fn scenario_config_parses_and_rejects_unknown_fields() {
        let json = r#"{
            "version": 1,
            "world": {"seed": 3},
            "trajectories": [{"kind": "loop", "seed": 1, "id": "car"}],
            "initial_map": "empty",
            "rng_seed": 5
        }"#;
        let cfg: ScenarioConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.initial_map, InitialMap::Empty);
        let s = cfg.resolve(Path::new(".")).unwrap();
        assert_eq!(s.trajectories[0].id, "car");

        let with_file: ScenarioConfig =
            serde_json::from_str(&json.replace("\"empty\"", "{\"path\": \"m.hrmp\"}")).unwrap();
        assert_eq!(with_file.initial_map, InitialMap::File { path: "m.hrmp".into() });

        let bad = json.replace("\"rng_seed\"", "\"bogus\": 1, \"rng_seed\"");
        assert!(serde_json::from_str::<ScenarioConfig>(&bad).is_err());
    }

    #[test]
    fn zero_frame_scenario_keeps_initial_map() {
        let world = default_world();
        let mut s = Scenario::new(world, vec![], 1);
        let mut init = GlobalMap::new(GridSpec::default(), UpdateParams::default()).unwrap();
        init.set_values(crate::geometry::CellIndex::new(4, 4), [1, 2, 3]).unwrap();
        s.initial_map = Some(init.clone());
        let out = run_scenario(&s).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(out.map, init);
    }

    #[test]
    fn log_round_trip() {
        let mut s = default_scenario(2, TrajectoryKind::Straight).unwrap();
        s.trajectories[0].poses.truncate(20);
        let out = run_scenario(&s).unwrap();
        let mut buf = Vec::new();
        for rec in &out.log {
            write_log_record(&mut buf, rec).unwrap();
        }
        let back = read_log(&buf[..]).unwrap();
        assert_eq!(back, out.log);
        assert!(read_log(&b"{\"not\": 1}\n"[..]).is_err());
    }
}
