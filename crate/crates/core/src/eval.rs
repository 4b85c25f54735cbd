//! Detection and segmentation metrics over simulation logs.
//!
//! AP uses greedy, confidence-ordered Chamfer matching per frame, pools all
//! frames, and integrates the precision-recall curve after making precision
//! non-increasing. Category AP is the mean over thresholds and mAP the mean
//! over categories.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{resample_polyline, Point2, WindowSpec, DEFAULT_RESAMPLE_K};
use crate::mapstore::MemoryStats;
use crate::par::Execution;
use crate::raster::{rasterize_local, Category, LocalMask, RasterConfig, VectorMap, NUM_CATEGORIES};
use crate::simulate::{run_scenario_with, FrameRecord, Scenario};

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.5, 1.0, 1.5];
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApConfig {
    /// Chamfer distance thresholds in meters.
    pub thresholds: Vec<f64>,
    pub resample_k: usize,
}

impl Default for ApConfig {
    fn default() -> Self {
        Self { thresholds: DEFAULT_THRESHOLDS.to_vec(), resample_k: DEFAULT_RESAMPLE_K }
    }
}

impl ApConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() || self.thresholds.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::invalid("AP thresholds must be positive and finite"));
        }
        if self.thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("AP thresholds must be strictly increasing"));
        }
        if self.resample_k < 2 {
            return Err(Error::invalid("resample_k must be >= 2"));
        }
        Ok(())
    }

    fn max_threshold(&self) -> f64 {
        *self.thresholds.last().unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub confidence: f64,
    pub true_positive: bool,
}

/// Matching outcome of one category in one frame at one threshold.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatches {
    /// Predictions in descending confidence order.
    pub detections: Vec<Detection>,
    pub false_negatives: usize,
}

impl FrameMatches {
    pub fn true_positives(&self) -> usize {
        self.detections.iter().filter(|d| d.true_positive).count()
    }

    pub fn false_positives(&self) -> usize {
        self.detections.len() - self.true_positives()
    }
}

struct Resampled {
    points: Vec<Point2>,
    lo: Point2,
    hi: Point2,
}

impl Resampled {
    fn new(pl: &crate::geometry::Polyline, k: usize) -> Result<Self> {
        let points = resample_polyline(pl, k)?.points().to_vec();
        let (lo, hi) = pl.bounds();
        Ok(Self { points, lo, hi })
    }

    fn box_gap(&self, other: &Resampled) -> f64 {
        let dx = (self.lo.x - other.hi.x).max(other.lo.x - self.hi.x).max(0.0);
        let dy = (self.lo.y - other.hi.y).max(other.lo.y - self.hi.y).max(0.0);
        dx.hypot(dy)
    }
}

/// Chamfer distances between the predictions (confidence order) and the GT
/// elements of one category. Pairs whose bounding boxes are at least
/// `cutoff` apart are stored as infinity: the Chamfer distance is never
/// below the gap between the boxes.
struct PairTable {
    confidences: Vec<f64>,
    gt_count: usize,
    dist: Vec<f64>,
}

impl PairTable {
    fn build(preds: &VectorMap, gts: &VectorMap, category: Category, k: usize, cutoff: f64) -> Result<Self> {
        if preds.frame != gts.frame {
            return Err(Error::invalid("predictions and ground truth are in different frames"));
        }
        let mut p: Vec<(f64, Resampled)> = preds
            .of_category(category)
            .map(|e| Ok((e.confidence, Resampled::new(&e.shape, k)?)))
            .collect::<Result<_>>()?;
        p.sort_by(|a, b| b.0.total_cmp(&a.0));
        let g: Vec<Resampled> = gts.of_category(category).map(|e| Resampled::new(&e.shape, k)).collect::<Result<_>>()?;
        let mut dist = Vec::with_capacity(p.len() * g.len());
        for (_, a) in &p {
            for b in &g {
                dist.push(if a.box_gap(b) >= cutoff {
                    f64::INFINITY
                } else {
                    crate::geometry::chamfer_points(&a.points, &b.points)
                });
            }
        }
        Ok(Self { confidences: p.into_iter().map(|(c, _)| c).collect(), gt_count: g.len(), dist })
    }

    fn greedy(&self, threshold: f64) -> FrameMatches {
        let mut taken = vec![false; self.gt_count];
        let mut detections = Vec::with_capacity(self.confidences.len());
        for (pi, &confidence) in self.confidences.iter().enumerate() {
            let row = &self.dist[pi * self.gt_count..(pi + 1) * self.gt_count];
            let best = row
                .iter()
                .enumerate()
                .filter(|(g, _)| !taken[*g])
                .fold(None, |best: Option<(usize, f64)>, (g, &d)| match best {
                    Some((_, bd)) if bd <= d => best,
                    _ => Some((g, d)),
                });
            let true_positive = match best {
                Some((g, d)) if d < threshold => {
                    taken[g] = true;
                    true
                }
                _ => false,
            };
            detections.push(Detection { confidence, true_positive });
        }
        let matched = taken.iter().filter(|t| **t).count();
        FrameMatches { detections, false_negatives: self.gt_count - matched }
    }
}

/// Greedy Chamfer matching of one category at one threshold.
pub fn match_frame(preds: &VectorMap, gts: &VectorMap, category: Category, threshold: f64, resample_k: usize) -> Result<FrameMatches> {
    Ok(PairTable::build(preds, gts, category, resample_k, threshold)?.greedy(threshold))
}

/// Area under the interpolated precision-recall curve.
///
/// Predictions with equal confidence are taken as one block, so the result
/// does not depend on the order of the input.
pub fn average_precision(detections: &[Detection], gt_count: usize) -> f64 {
    if gt_count == 0 {
        return if detections.is_empty() { 1.0 } else { 0.0 };
    }
    let mut sorted = detections.to_vec();
    sorted.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut curve: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    for (k, d) in sorted.iter().enumerate() {
        seen += 1;
        tp += usize::from(d.true_positive);
        let block_end = sorted.get(k + 1).is_none_or(|next| next.confidence != d.confidence);
        if block_end {
            curve.push((tp as f64 / gt_count as f64, tp as f64 / seen as f64));
        }
    }
    // interpolated precision at each point is the best precision at any higher recall
    let mut suffix = vec![0.0_f64; curve.len()];
    for k in (0..curve.len()).rev() {
        suffix[k] = curve[k].1.max(suffix.get(k + 1).copied().unwrap_or(0.0));
    }
    let mut ap = 0.0;
    let mut last_recall = 0.0;
    for (k, &(recall, _)) in curve.iter().enumerate() {
        ap += (recall - last_recall) * suffix[k];
        last_recall = recall;
    }
    ap
}

/// Matching results of one frame for every category and threshold.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameScores {
    /// Indexed `[category][threshold]`.
    pub matches: Vec<Vec<FrameMatches>>,
    pub gt_counts: [usize; NUM_CATEGORIES],
    pub prediction_count: usize,
}

pub fn score_frame(preds: &VectorMap, gts: &VectorMap, cfg: &ApConfig) -> Result<FrameScores> {
    let mut matches = Vec::with_capacity(NUM_CATEGORIES);
    let mut gt_counts = [0; NUM_CATEGORIES];
    for c in Category::ALL {
        let table = PairTable::build(preds, gts, c, cfg.resample_k, cfg.max_threshold())?;
        gt_counts[c.index()] = table.gt_count;
        matches.push(cfg.thresholds.iter().map(|&t| table.greedy(t)).collect());
    }
    Ok(FrameScores { matches, gt_counts, prediction_count: preds.elements.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAp {
    pub category: Category,
    /// AP at each configured threshold.
    pub per_threshold: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    pub thresholds: Vec<f64>,
    pub categories: Vec<CategoryAp>,
    #[serde(rename = "AP_div")]
    pub ap_div: f64,
    #[serde(rename = "AP_ped")]
    pub ap_ped: f64,
    #[serde(rename = "AP_bou")]
    pub ap_bou: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
}

/// Pools frame scores for AP.
#[derive(Debug, Clone)]
pub struct ApAccumulator {
    thresholds: Vec<f64>,
    detections: Vec<Vec<Vec<Detection>>>,
    gt: [usize; NUM_CATEGORIES],
    frames: usize,
}

impl ApAccumulator {
    pub fn new(cfg: &ApConfig) -> Self {
        let n = cfg.thresholds.len();
        Self { thresholds: cfg.thresholds.clone(), detections: vec![vec![Vec::new(); n]; NUM_CATEGORIES], gt: [0; NUM_CATEGORIES], frames: 0 }
    }

    pub fn push(&mut self, scores: &FrameScores) {
        for (c, per_t) in scores.matches.iter().enumerate() {
            for (t, m) in per_t.iter().enumerate() {
                self.detections[c][t].extend_from_slice(&m.detections);
            }
            self.gt[c] += scores.gt_counts[c];
        }
        self.frames += 1;
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn finish(&self) -> ApSummary {
        let categories: Vec<CategoryAp> = Category::ALL
            .iter()
            .map(|&c| {
                let per_threshold: Vec<f64> =
                    self.detections[c.index()].iter().map(|d| average_precision(d, self.gt[c.index()])).collect();
                let mean = per_threshold.iter().sum::<f64>() / per_threshold.len() as f64;
                CategoryAp { category: c, per_threshold, mean }
            })
            .collect();
        let ap = |c: Category| categories[c.index()].mean;
        let (ap_div, ap_ped, ap_bou) = (ap(Category::Divider), ap(Category::Crossing), ap(Category::Boundary));
        ApSummary { thresholds: self.thresholds.clone(), categories, ap_div, ap_ped, ap_bou, map: mean3([ap_div, ap_ped, ap_bou]) }
    }
}

fn mean3(v: [f64; 3]) -> f64 {
    (v[0] + v[1] + v[2]) / 3.0
}

/// Pooled AP over `(prediction, ground truth)` pairs.
pub fn map_score(frames: &[(&VectorMap, &VectorMap)], cfg: &ApConfig, exec: Execution) -> Result<ApSummary> {
    cfg.validate()?;
    let scores = exec.map(frames, |(p, g)| score_frame(p, g, cfg));
    let mut acc = ApAccumulator::new(cfg);
    for s in scores {
        acc.push(&s?);
    }
    Ok(acc.finish())
}

// ---------------------------------------------------------------------------
// IoU

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub divider: f64,
    pub crossing: f64,
    pub boundary: f64,
    pub mean: f64,
}

impl IouReport {
    fn from_counts(intersection: [u64; NUM_CATEGORIES], union: [u64; NUM_CATEGORIES]) -> Self {
        let iou = |c: usize| if union[c] == 0 { 1.0 } else { intersection[c] as f64 / union[c] as f64 };
        let v = [iou(0), iou(1), iou(2)];
        Self { divider: v[0], crossing: v[1], boundary: v[2], mean: mean3(v) }
    }

    pub fn get(&self, c: Category) -> f64 {
        match c {
            Category::Divider => self.divider,
            Category::Crossing => self.crossing,
            Category::Boundary => self.boundary,
        }
    }
}

/// Sums intersections and unions over many mask pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IouAccumulator {
    intersection: [u64; NUM_CATEGORIES],
    union: [u64; NUM_CATEGORIES],
}

impl IouAccumulator {
    pub fn add(&mut self, a: &LocalMask, b: &LocalMask) -> Result<()> {
        if !a.same_shape(b) {
            return Err(Error::SpecMismatch("mask shapes differ".into()));
        }
        for (x, y) in a.cells().iter().zip(b.cells()) {
            let (x, y) = (x.bits(), y.bits());
            if x | y == 0 {
                continue;
            }
            for c in 0..NUM_CATEGORIES {
                let bit = 1u8 << c;
                self.intersection[c] += u64::from(x & y & bit != 0);
                self.union[c] += u64::from((x | y) & bit != 0);
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &IouAccumulator) {
        for c in 0..NUM_CATEGORIES {
            self.intersection[c] += other.intersection[c];
            self.union[c] += other.union[c];
        }
    }

    pub fn report(&self) -> IouReport {
        IouReport::from_counts(self.intersection, self.union)
    }
}

/// Per-category IoU; a category empty in both masks scores 1.
pub fn mask_iou(a: &LocalMask, b: &LocalMask) -> Result<IouReport> {
    let mut acc = IouAccumulator::default();
    acc.add(a, b)?;
    Ok(acc.report())
}

// ---------------------------------------------------------------------------
// Revisits

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RevisitConfig {
    /// Side of the coarse cells used to track coverage.
    pub coverage_cell: f64,
    /// Arclength a vehicle must travel before its own coverage counts as a
    /// previous visit. Defaults to the window diagonal, so the cells a
    /// vehicle is still looking at do not count.
    pub min_gap: Option<f64>,
    /// Fraction of the window that must be previously visited.
    pub visited_fraction: f64,
    /// Partitions smaller than this raise a warning.
    pub min_frames: usize,
}

impl Default for RevisitConfig {
    fn default() -> Self {
        Self { coverage_cell: 1.5, min_gap: None, visited_fraction: 0.5, min_frames: 10 }
    }
}

/// Marks each frame as a revisit or not, in log order.
///
/// A coverage cell counts as previously visited when another vehicle
/// covered it earlier in the log, or when the same vehicle covered it at
/// least `min_gap` meters of driving ago.
pub fn classify_revisits(log: &[FrameRecord], window: &WindowSpec, cfg: &RevisitConfig) -> Result<Vec<bool>> {
    if !(cfg.coverage_cell > 0.0) || !(0.0..=1.0).contains(&cfg.visited_fraction) {
        return Err(Error::invalid("revisit coverage cell must be positive and fraction in [0, 1]"));
    }
    let gap = cfg.min_gap.unwrap_or_else(|| window.diagonal());
    let step = cfg.coverage_cell;
    let samples = |lo: f64, hi: f64| {
        let n = ((hi - lo) / step).ceil().max(1.0) as usize;
        (0..n).map(move |m| lo + (m as f64 + 0.5) * (hi - lo) / n as f64)
    };
    let local: Vec<Point2> =
        samples(window.x_min, window.x_max).flat_map(|x| samples(window.y_min, window.y_max).map(move |y| Point2::new(x, y))).collect();

    let mut vehicles: HashMap<&str, (u32, f64, Point2)> = HashMap::new();
    let mut coverage: HashMap<(i64, i64), Vec<(u32, f64)>> = HashMap::new();
    let mut out = Vec::with_capacity(log.len());
    for rec in log {
        let next_id = vehicles.len() as u32;
        let here = rec.true_pose.translation();
        let entry = vehicles.entry(rec.trajectory.as_str()).or_insert((next_id, 0.0, here));
        entry.1 += entry.2.distance(here);
        entry.2 = here;
        let (id, s) = (entry.0, entry.1);

        let mut cells: Vec<(i64, i64)> = local
            .iter()
            .map(|&p| {
                let w = crate::geometry::se2_apply(&rec.true_pose, p);
                ((w.x / step).floor() as i64, (w.y / step).floor() as i64)
            })
            .collect();
        cells.sort_unstable();
        cells.dedup();
        let visited = cells
            .iter()
            .filter(|cell| {
                coverage.get(cell).is_some_and(|v| v.iter().any(|&(other, s0)| other != id || s0 <= s - gap))
            })
            .count();
        out.push(visited as f64 >= cfg.visited_fraction * cells.len() as f64);
        for cell in cells {
            let v = coverage.entry(cell).or_default();
            match v.iter_mut().find(|(other, _)| *other == id) {
                Some(slot) => slot.1 = slot.1.min(s),
                None => v.push((id, s)),
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisitReport {
    pub first_visit_frames: usize,
    pub revisit_frames: usize,
    pub map_first_visit: Option<f64>,
    pub map_revisit: Option<f64>,
    /// Revisit mAP minus first-visit mAP.
    pub delta: Option<f64>,
    pub warning: Option<String>,
}

fn revisit_report(scores: &[FrameScores], revisit: &[bool], ap: &ApConfig, min_frames: usize) -> RevisitReport {
    let partition = |want: bool| {
        let mut acc = ApAccumulator::new(ap);
        for (s, _) in scores.iter().zip(revisit).filter(|(_, r)| **r == want) {
            acc.push(s);
        }
        acc
    };
    let (first, again) = (partition(false), partition(true));
    let score = |acc: &ApAccumulator| (acc.frames() > 0).then(|| acc.finish().map);
    let (map_first_visit, map_revisit) = (score(&first), score(&again));
    let mut warnings = Vec::new();
    for (name, acc) in [("first-visit", &first), ("revisit", &again)] {
        if acc.frames() < min_frames {
            warnings.push(format!("{name} partition has {} frames (< {min_frames})", acc.frames()));
        }
    }
    RevisitReport {
        first_visit_frames: first.frames(),
        revisit_frames: again.frames(),
        map_first_visit,
        map_revisit,
        delta: map_first_visit.zip(map_revisit).map(|(a, b)| b - a),
        warning: (!warnings.is_empty()).then(|| warnings.join("; ")),
    }
}

/// mAP on first-visit and revisit frames of a log.
pub fn revisit_delta(log: &[FrameRecord], cfg: &EvalConfig, exec: Execution) -> Result<RevisitReport> {
    cfg.ap.validate()?;
    let Some(first) = log.first() else {
        return Ok(revisit_report(&[], &[], &cfg.ap, cfg.revisit.min_frames));
    };
    let revisit = classify_revisits(log, first.prior.window(), &cfg.revisit)?;
    let scores: Vec<FrameScores> =
        exec.map(log, |r| score_frame(&r.prediction, &r.gt, &cfg.ap)).into_iter().collect::<Result<_>>()?;
    Ok(revisit_report(&scores, &revisit, &cfg.ap, cfg.revisit.min_frames))
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ap: ApConfig,
    /// Used to rasterize ground truth for IoU against the retrieved prior.
    pub raster: RasterConfig,
    pub revisit: RevisitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub trajectory: String,
    pub index: usize,
    pub timestamp: f64,
    pub predictions: usize,
    pub gt: usize,
    /// True positives at each threshold, all categories together.
    pub true_positives: Vec<usize>,
    /// Mean IoU of the rasterized prediction against the rasterized ground truth.
    pub miou: f64,
    /// Mean IoU of the retrieved prior against the rasterized ground truth.
    pub prior_miou: f64,
    pub revisit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub frames: usize,
    #[serde(flatten)]
    pub ap: ApSummary,
    /// Pooled IoU of rasterized predictions against the rasterized ground truth.
    pub iou: IouReport,
    /// Same for the retrieved priors.
    pub prior_iou: IouReport,
    pub memory: Option<MemoryStats>,
    pub revisit: RevisitReport,
    pub per_frame: Vec<FrameSummary>,
}

impl EvalReport {
    pub fn map(&self) -> f64 {
        self.ap.map
    }
}

/// IoU counts of one frame: `(prediction, prior)` against the rasterized ground truth.
fn frame_iou(rec: &FrameRecord, raster: &RasterConfig) -> Result<(IouAccumulator, IouAccumulator)> {
    let window = rec.prior.window();
    let gt = rasterize_local(&rec.gt, window, raster)?;
    let mut pred = IouAccumulator::default();
    pred.add(&rasterize_local(&rec.prediction, window, raster)?, &gt)?;
    let mut prior = IouAccumulator::default();
    prior.add(&rec.prior, &gt)?;
    Ok((pred, prior))
}

/// Full report for a log. `memory` is copied into the report as is.
pub fn evaluate_log(log: &[FrameRecord], cfg: &EvalConfig, memory: Option<MemoryStats>, exec: Execution) -> Result<EvalReport> {
    cfg.ap.validate()?;
    cfg.raster.validate()?;
    let per_frame: Vec<(FrameScores, (IouAccumulator, IouAccumulator))> = exec
        .map(log, |r| Ok((score_frame(&r.prediction, &r.gt, &cfg.ap)?, frame_iou(r, &cfg.raster)?)))
        .into_iter()
        .collect::<Result<_>>()?;
    let revisit_flags = match log.first() {
        Some(first) => classify_revisits(log, first.prior.window(), &cfg.revisit)?,
        None => Vec::new(),
    };

    let mut acc = ApAccumulator::new(&cfg.ap);
    let mut iou = IouAccumulator::default();
    let mut prior_iou = IouAccumulator::default();
    let mut summaries = Vec::with_capacity(log.len());
    for ((rec, (scores, (pred_iou, frame_prior))), &revisit) in log.iter().zip(&per_frame).zip(&revisit_flags) {
        acc.push(scores);
        iou.merge(pred_iou);
        prior_iou.merge(frame_prior);
        let true_positives =
            (0..cfg.ap.thresholds.len()).map(|t| scores.matches.iter().map(|m| m[t].true_positives()).sum()).collect();
        summaries.push(FrameSummary {
            trajectory: rec.trajectory.clone(),
            index: rec.index,
            timestamp: rec.timestamp,
            predictions: scores.prediction_count,
            gt: scores.gt_counts.iter().sum(),
            true_positives,
            miou: pred_iou.report().mean,
            prior_miou: frame_prior.report().mean,
            revisit,
        });
    }
    let scores: Vec<FrameScores> = per_frame.into_iter().map(|(s, _)| s).collect();
    Ok(EvalReport {
        version: REPORT_VERSION,
        frames: log.len(),
        ap: acc.finish(),
        iou: iou.report(),
        prior_iou: prior_iou.report(),
        memory,
        revisit: revisit_report(&scores, &revisit_flags, &cfg.ap, cfg.revisit.min_frames),
        per_frame: summaries,
    })
}

// ---------------------------------------------------------------------------
// Noise sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMetric {
    /// Pooled mAP of the perceived elements.
    Map,
    /// Pooled mean IoU of the rasterized predictions against the ground truth.
    Miou,
}

/// Runs a scenario and reduces it to one metric without keeping the log.
pub fn scenario_metric(scenario: &Scenario, metric: SweepMetric, cfg: &EvalConfig) -> Result<f64> {
    match metric {
        SweepMetric::Map => {
            cfg.ap.validate()?;
            let mut acc = ApAccumulator::new(&cfg.ap);
            run_scenario_with(scenario, |rec| {
                acc.push(&score_frame(&rec.prediction, &rec.gt, &cfg.ap)?);
                Ok(())
            })?;
            Ok(acc.finish().map)
        }
        SweepMetric::Miou => {
            let mut iou = IouAccumulator::default();
            run_scenario_with(scenario, |rec| {
                let gt = rasterize_local(&rec.gt, rec.prior.window(), &cfg.raster)?;
                iou.add(&rasterize_local(&rec.prediction, rec.prior.window(), &cfg.raster)?, &gt)
            })?;
            Ok(iou.report().mean)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub metric: SweepMetric,
    pub sigma_t: Vec<f64>,
    pub sigma_r: Vec<f64>,
    /// Indexed `[sigma_r][sigma_t]`.
    pub values: Vec<Vec<f64>>,
}

impl SweepResult {
    /// Rows are rotation noise levels, columns translation noise levels.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sigma_r\\sigma_t");
        for t in &self.sigma_t {
            out.push_str(&format!(",{t}"));
        }
        out.push('\n');
        for (r, row) in self.sigma_r.iter().zip(&self.values) {
            out.push_str(&r.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Re-runs `scenario` for every `(sigma_t, sigma_r)` pair. Everything except
/// the pose noise magnitudes is held fixed, including every random stream.
pub fn noise_sweep(
    scenario: &Scenario,
    sigma_t: &[f64],
    sigma_r: &[f64],
    metric: SweepMetric,
    cfg: &EvalConfig,
    exec: Execution,
) -> Result<SweepResult> {
    if sigma_t.is_empty() || sigma_r.is_empty() {
        return Err(Error::invalid("sweep needs at least one value per axis"));
    }
    let nt = sigma_t.len();
    let flat = exec.map_range(nt * sigma_r.len(), |k| {
        let mut s = scenario.clone();
        s.noise.sigma_t = sigma_t[k % nt];
        s.noise.sigma_r = sigma_r[k / nt];
        scenario_metric(&s, metric, cfg)
    });
    let flat: Vec<f64> = flat.into_iter().collect::<Result<_>>()?;
    Ok(SweepResult {
        metric,
        sigma_t: sigma_t.to_vec(),
        sigma_r: sigma_r.to_vec(),
        values: flat.chunks(nt).map(<[f64]>::to_vec).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polyline;
    use crate::raster::{Frame, MapElement};

    fn line(x0: f64, y0: f64, x1: f64, y1: f64) -> Polyline {
        Polyline::new(vec![Point2::new(x0, y0), Point2::new(x1, y1)]).unwrap()
    }

    fn ego(elements: Vec<MapElement>) -> VectorMap {
        VectorMap::with_elements(Frame::Ego, elements)
    }

    #[test]
    fn identical_prediction_matches() {
        let gt = ego(vec![MapElement::new(Category::Divider, line(0.0, 0.0, 10.0, 0.0), 1.0)]);
        for t in DEFAULT_THRESHOLDS {
            let m = match_frame(&gt, &gt, Category::Divider, t, 100).unwrap();
            assert_eq!((m.true_positives(), m.false_positives(), m.false_negatives), (1, 0, 0));
        }
    }

    #[test]
    fn offset_prediction_misses_tighter_threshold() {
        let gt = ego(vec![MapElement::new(Category::Divider, line(0.0, 0.0, 10.0, 0.0), 1.0)]);
        let pred = ego(vec![MapElement::new(Category::Divider, line(0.0, 1.2, 10.0, 1.2), 0.9)]);
        let m = match_frame(&pred, &gt, Category::Divider, 1.0, 100).unwrap();
        assert_eq!((m.true_positives(), m.false_positives(), m.false_negatives), (0, 1, 1));
        let m = match_frame(&pred, &gt, Category::Divider, 1.5, 100).unwrap();
        assert_eq!(m.true_positives(), 1);
    }

    #[test]
    fn higher_confidence_claims_first() {
        let gt = ego(vec![MapElement::new(Category::Boundary, line(0.0, 0.0, 10.0, 0.0), 1.0)]);
        let pred = ego(vec![
            MapElement::new(Category::Boundary, line(0.0, 0.4, 10.0, 0.4), 0.8),
            MapElement::new(Category::Boundary, line(0.0, 1.2, 10.0, 1.2), 0.9),
        ]);
        let m = match_frame(&pred, &gt, Category::Boundary, 1.5, 100).unwrap();
        assert_eq!(m.detections[0], Detection { confidence: 0.9, true_positive: true });
        assert_eq!(m.detections[1], Detection { confidence: 0.8, true_positive: false });
        let m = match_frame(&pred, &gt, Category::Boundary, 1.0, 100).unwrap();
        assert!(!m.detections[0].true_positive && m.detections[1].true_positive);
    }

    #[test]
    fn ap_examples() {
        let tp = |c| Detection { confidence: c, true_positive: true };
        let fp = |c| Detection { confidence: c, true_positive: false };
        assert_eq!(average_precision(&[tp(0.9), tp(0.5)], 2), 1.0);
        assert_eq!(average_precision(&[], 3), 0.0);
        assert_eq!(average_precision(&[tp(0.9), fp(0.8)], 2), 0.5);
        assert_eq!(average_precision(&[], 0), 1.0);
        assert_eq!(average_precision(&[fp(0.3)], 0), 0.0);
        // FP ranked first: precision envelope 2/3 over the full recall range
        assert!((average_precision(&[fp(0.9), tp(0.8), tp(0.7)], 2) - 2.0 / 3.0).abs() < 1e-15);
        // a tie block is one operating point
        assert_eq!(average_precision(&[tp(0.5), fp(0.5)], 1), average_precision(&[fp(0.5), tp(0.5)], 1));
        assert_eq!(average_precision(&[fp(0.5), tp(0.5)], 1), 0.5);
    }

    #[test]
    fn iou_examples() {
        let w = WindowSpec::default();
        let mut a = LocalMask::new(w).unwrap();
        let mut b = LocalMask::new(w).unwrap();
        let r = mask_iou(&a, &b).unwrap();
        assert_eq!((r.divider, r.crossing, r.boundary, r.mean), (1.0, 1.0, 1.0, 1.0));
        for j in 0..4 {
            a.set(0, j, Category::Divider);
        }
        for j in 2..6 {
            b.set(0, j, Category::Divider);
        }
        let r = mask_iou(&a, &b).unwrap();
        assert!((r.divider - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r, mask_iou(&b, &a).unwrap());
        b.set(5, 5, Category::Boundary);
        a.set(6, 6, Category::Boundary);
        assert_eq!(mask_iou(&a, &b).unwrap().boundary, 0.0);
        let other = LocalMask::new(WindowSpec { x_max: 60.0, ..w }).unwrap();
        assert!(mask_iou(&a, &other).is_err());
    }

    #[test]
    fn csv_orientation() {
        let r = SweepResult { metric: SweepMetric::Map, sigma_t: vec![0.0, 0.1], sigma_r: vec![0.0, 0.01, 0.02], values: vec![vec![1.0, 0.9], vec![0.8, 0.7], vec![0.6, 0.5]] };
        assert_eq!(r.to_csv(), "sigma_r\\sigma_t,0,0.1\n0,1,0.9\n0.01,0.8,0.7\n0.02,0.6,0.5\n");
    }
}
