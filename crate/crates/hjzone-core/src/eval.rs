//! Detection-log evaluation: TP/FP labeling, cross-frame velocity
//! estimation, and zone-vs-baseline scoring of false positives.
//!
//! Logs are JSON documents with a top-level `"schema": "hjzone-log/1"` field.
//! All units are SI, angles radians, poses in a right-handed world frame.
//! Only the `"vehicle"` class is evaluated; other classes pass through the
//! matcher (same-class matching) but never enter the statistics.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::VehicleState;
use crate::params::Params;
use crate::terminal::{state_from_center, OrientedBox};
use crate::zone::{Classification, ZoneArtifact};

pub const SCHEMA: &str = "hjzone-log/1";
pub const VEHICLE_CLASS: &str = "vehicle";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("log schema {found:?}, expected {SCHEMA:?}")]
    BadSchema { found: String },
    #[error("log has no frames")]
    Empty,
    #[error("frame {frame}: timestamp {t} does not increase past {prev}")]
    NonMonotonicTimestamps { frame: usize, t: f64, prev: f64 },
    #[error("frame {frame} detection {index}: score {score} outside [0, 1]")]
    BadScore { frame: usize, index: usize, score: f64 },
    #[error("log contains no vehicle-class entries")]
    ClassMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One ground-truth object: box in the world frame, world-frame velocity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub track_id: String,
    pub class: String,
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
    pub velocity: [f64; 2],
}

/// One detector output. Velocity is optional; absent velocities are
/// estimated by cross-frame association.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Detection {
    pub class: String,
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Frame {
    pub timestamp: f64,
    pub ego: VehicleState,
    pub ground_truth: Vec<GroundTruth>,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameLog {
    pub schema: String,
    pub frames: Vec<Frame>,
}

impl FrameLog {
    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let log: FrameLog = serde_json::from_str(text)?;
        log.validate()?;
        Ok(log)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        FrameLog::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.schema != SCHEMA {
            return Err(EvalError::BadSchema { found: self.schema.clone() });
        }
        let mut prev = f64::NEG_INFINITY;
        for (fi, frame) in self.frames.iter().enumerate() {
            if !(frame.timestamp > prev) {
                return Err(EvalError::NonMonotonicTimestamps {
                    frame: fi,
                    t: frame.timestamp,
                    prev,
                });
            }
            prev = frame.timestamp;
            for (di, det) in frame.detections.iter().enumerate() {
                if !(0.0..=1.0).contains(&det.score) {
                    return Err(EvalError::BadScore { frame: fi, index: di, score: det.score });
                }
            }
        }
        Ok(())
    }
}

fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc
}

/// Clips `subject` by the half-plane left of the directed line `p -> q`.
fn clip_half_plane(subject: &[[f64; 2]], p: [f64; 2], q: [f64; 2]) -> Vec<[f64; 2]> {
    let edge = [q[0] - p[0], q[1] - p[1]];
    let side = |x: [f64; 2]| edge[0] * (x[1] - p[1]) - edge[1] * (x[0] - p[0]);
    let mut out = Vec::with_capacity(subject.len() + 2);
    let n = subject.len();
    for i in 0..n {
        let cur = subject[i];
        let next = subject[(i + 1) % n];
        let (sc, sn) = (side(cur), side(next));
        let inside_cur = sc >= -1e-9;
        let inside_next = sn >= -1e-9;
        if inside_cur {
            out.push(cur);
        }
        if inside_cur != inside_next {
            let t = sc / (sc - sn);
            out.push([cur[0] + t * (next[0] - cur[0]), cur[1] + t * (next[1] - cur[1])]);
        }
    }
    out
}

/// Intersection-over-union of two oriented rectangles via convex polygon
/// clipping. All three areas come from the shoelace formula on the clipped
/// and original vertex lists, so `oriented_iou(a, a) == 1.0` exactly.
pub fn oriented_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let subject = a.vertices();
    let mut clip: Vec<[f64; 2]> = b.vertices().to_vec();
    if signed_area(&clip) < 0.0 {
        clip.reverse();
    }
    let mut poly: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if poly.is_empty() {
            break;
        }
        poly = clip_half_plane(&poly, clip[i], clip[(i + 1) % clip.len()]);
    }
    let inter = if poly.len() >= 3 { signed_area(&poly).abs() } else { 0.0 };
    let area_a = signed_area(&subject).abs();
    let area_b = signed_area(&b.vertices()).abs();
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Label for one detection after matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionLabel {
    /// Matched to `ground_truth[gt_index]` of the same frame.
    TruePositive { gt_index: usize },
    FalsePositive,
    /// Below the score threshold; excluded from all statistics.
    Discarded,
}

/// Greedy score-descending one-to-one matcher. Detections below
/// `score_threshold` are discarded; each survivor takes the unmatched
/// same-class ground truth with the highest IoU at or above `iou_threshold`.
/// Ties break toward the lower index, so the labeling is deterministic.
pub fn match_frame(
    detections: &[Detection],
    ground_truth: &[GroundTruth],
    score_threshold: f64,
    iou_threshold: f64,
) -> Vec<DetectionLabel> {
    let mut labels = vec![DetectionLabel::Discarded; detections.len()];
    let mut order: Vec<usize> = (0..detections.len())
        .filter(|&i| detections[i].score >= score_threshold)
        .collect();
    order.sort_by(|&a, &b| {
        detections[b].score.total_cmp(&detections[a].score).then(a.cmp(&b))
    });
    let mut taken = vec![false; ground_truth.len()];
    for &di in &order {
        let det = &detections[di];
        let mut best: Option<(f64, usize)> = None;
        for (gi, gt) in ground_truth.iter().enumerate() {
            if taken[gi] || gt.class != det.class {
                continue;
            }
            let iou = oriented_iou(&det.bbox, &gt.bbox);
            if iou < iou_threshold {
                continue;
            }
            let better = match best {
                None => true,
                Some((best_iou, _)) => iou > best_iou,
            };
            if better {
                best = Some((iou, gi));
            }
        }
        labels[di] = match best {
            Some((_, gi)) => {
                taken[gi] = true;
                DetectionLabel::TruePositive { gt_index: gi }
            }
            None => DetectionLabel::FalsePositive,
        };
    }
    labels
}

/// Speed and heading for a detection: the reported velocity when present,
/// otherwise a finite difference against the nearest same-class detection in
/// an adjacent frame (successor preferred), gated at `velocity_gate` meters
/// per half second of frame gap. With no association the object is treated as
/// stationary, heading taken from the box.
pub fn estimate_velocity(
    log: &FrameLog,
    frame: usize,
    det: usize,
    params: &Params,
) -> (f64, f64) {
    let d = &log.frames[frame].detections[det];
    if let Some([vx, vy]) = d.velocity {
        let speed = (vx * vx + vy * vy).sqrt();
        let heading = if speed > 1e-9 { vy.atan2(vx) } else { d.bbox.heading };
        return (speed, heading);
    }
    let here = [d.bbox.cx, d.bbox.cy];
    let t_here = log.frames[frame].timestamp;
    let successor = frame.checked_add(1).filter(|&i| i < log.frames.len());
    for oi in [successor, frame.checked_sub(1)].into_iter().flatten() {
        let of = &log.frames[oi];
        let dt = (of.timestamp - t_here).abs();
        if dt <= 0.0 {
            continue;
        }
        let gate = params.velocity_gate * (dt / 0.5);
        // same-class detection nearest in center distance; index breaks ties
        let nearest = of
            .detections
            .iter()
            .enumerate()
            .filter(|(_, o)| o.class == d.class)
            .map(|(k, o)| {
                let dx = o.bbox.cx - here[0];
                let dy = o.bbox.cy - here[1];
                (k, (dx * dx + dy * dy).sqrt())
            })
            .min_by(|(ak, a), (bk, b)| a.total_cmp(b).then(ak.cmp(bk)));
        if let Some((k, dist)) = nearest {
            if dist <= gate {
                let o = [of.detections[k].bbox.cx, of.detections[k].bbox.cy];
                // successor: (next - here)/dt; predecessor: (here - prev)/dt
                let forward = oi > frame;
                let (vx, vy) = if forward {
                    ((o[0] - here[0]) / dt, (o[1] - here[1]) / dt)
                } else {
                    ((here[0] - o[0]) / dt, (here[1] - o[1]) / dt)
                };
                let speed = (vx * vx + vy * vy).sqrt();
                let heading = if speed > 1e-9 { vy.atan2(vx) } else { d.bbox.heading };
                return (speed, heading);
            }
        }
    }
    (0.0, d.bbox.heading)
}

/// Realizes a detection as a contender vehicle state: motion heading (box
/// heading when stationary), rear axle back-projected from the box center.
pub fn detection_state(
    log: &FrameLog,
    frame: usize,
    det: usize,
    params: &Params,
) -> VehicleState {
    let (speed, heading) = estimate_velocity(log, frame, det, params);
    let bbox = &log.frames[frame].detections[det].bbox;
    state_from_center([bbox.cx, bbox.cy], heading, speed, &params.geometry())
}

/// 2x2 agreement between the zone verdict and the circular baseline over
/// false positives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AgreementMatrix {
    pub both: u64,
    pub hj_only: u64,
    pub baseline_only: u64,
    pub neither: u64,
}

impl AgreementMatrix {
    fn add(&mut self, hj: bool, baseline: bool) {
        match (hj, baseline) {
            (true, true) => self.both += 1,
            (true, false) => self.hj_only += 1,
            (false, true) => self.baseline_only += 1,
            (false, false) => self.neither += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.both + self.hj_only + self.baseline_only + self.neither
    }
}

/// Deterministic counting half of the report.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalCounts {
    pub frames: u64,
    /// Detections surviving the score threshold (the rate denominator).
    pub total_detections: u64,
    pub discarded: u64,
    pub true_positives: u64,
    pub false_positives: u64,
    pub hj_critical_fp: u64,
    pub baseline_critical_fp: u64,
    pub agreement: AgreementMatrix,
}

/// Wall-clock statistics of single-object classification calls. Timing noise
/// only; every other report field is bit-reproducible.
#[derive(Debug, Clone, Default, Serialize)]
pub struct LatencyStats {
    pub samples: u64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    fn from_samples(mut ms: Vec<f64>) -> Self {
        if ms.is_empty() {
            return LatencyStats::default();
        }
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let pick = |q: f64| ms[((q * (n - 1) as f64).round() as usize).min(n - 1)];
        LatencyStats {
            samples: n as u64,
            mean_ms: ms.iter().sum::<f64>() / n as f64,
            p50_ms: pick(0.5),
            p99_ms: pick(0.99),
            max_ms: ms[n - 1],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub counts: EvalCounts,
    pub fp_rate: f64,
    pub fp_per_frame: f64,
    pub hj_critical_rate: f64,
    pub hj_critical_per_frame: f64,
    pub baseline_critical_rate: f64,
    pub baseline_critical_per_frame: f64,
    pub latency: LatencyStats,
}

impl EvalReport {
    fn from_parts(counts: EvalCounts, latency: LatencyStats) -> Self {
        let det = counts.total_detections.max(1) as f64;
        let frames = counts.frames.max(1) as f64;
        let rate = |c: u64| {
            if counts.total_detections == 0 { 0.0 } else { c as f64 / det }
        };
        let per_frame = |c: u64| {
            if counts.frames == 0 { 0.0 } else { c as f64 / frames }
        };
        EvalReport {
            fp_rate: rate(counts.false_positives),
            fp_per_frame: per_frame(counts.false_positives),
            hj_critical_rate: rate(counts.hj_critical_fp),
            hj_critical_per_frame: per_frame(counts.hj_critical_fp),
            baseline_critical_rate: rate(counts.baseline_critical_fp),
            baseline_critical_per_frame: per_frame(counts.baseline_critical_fp),
            counts,
            latency,
        }
    }

    /// Aligned plain-text summary table.
    pub fn human_table(&self) -> String {
        let c = &self.counts;
        let pct = |r: f64| format!("{:.2}%", 100.0 * r);
        let mut out = String::new();
        out.push_str(&format!(
            "{:<34} {:>8} {:>9} {:>10}\n",
            "metric", "count", "rate", "per frame"
        ));
        out.push_str(&format!(
            "{:<34} {:>8} {:>9} {:>10.3}\n",
            "scored detections",
            c.total_detections,
            "-",
            c.total_detections as f64 / c.frames.max(1) as f64
        ));
        for (name, count, rate, pf) in [
            ("false positives", c.false_positives, self.fp_rate, self.fp_per_frame),
            (
                "safety-critical FP (zone)",
                c.hj_critical_fp,
                self.hj_critical_rate,
                self.hj_critical_per_frame,
            ),
            (
                "safety-critical FP (circular)",
                c.baseline_critical_fp,
                self.baseline_critical_rate,
                self.baseline_critical_per_frame,
            ),
        ] {
            out.push_str(&format!(
                "{:<34} {:>8} {:>9} {:>10.3}\n",
                name,
                count,
                pct(rate),
                pf
            ));
        }
        out.push('\n');
        out.push_str(&format!(
            "{:<18} {:>16} {:>16}\n",
            "agreement on FP", "circular: crit", "circular: clear"
        ));
        out.push_str(&format!(
            "{:<18} {:>16} {:>16}\n",
            "zone: critical", c.agreement.both, c.agreement.hj_only
        ));
        out.push_str(&format!(
            "{:<18} {:>16} {:>16}\n",
            "zone: clear", c.agreement.baseline_only, c.agreement.neither
        ));
        out.push('\n');
        out.push_str(&format!(
            "classification latency: mean {:.4} ms, p50 {:.4} ms, p99 {:.4} ms, max {:.4} ms \
             ({} samples)\n",
            self.latency.mean_ms,
            self.latency.p50_ms,
            self.latency.p99_ms,
            self.latency.max_ms,
            self.latency.samples
        ));
        out.push_str(&format!("frames: {}\n", c.frames));
        out
    }
}

/// Replays a log against the zone artifact and the circular baseline.
///
/// Frames are processed in parallel; the reduction runs in frame order, so
/// every count is identical across runs and worker counts. Latency fields
/// are wall-clock noise and exempt from that guarantee.
pub fn evaluate(
    log: &FrameLog,
    artifact: &ZoneArtifact,
    params: &Params,
) -> Result<EvalReport, EvalError> {
    log.validate()?;
    if log.frames.is_empty() {
        return Err(EvalError::Empty);
    }
    let any_vehicle = log.frames.iter().any(|f| {
        f.detections.iter().any(|d| d.class == VEHICLE_CLASS)
            || f.ground_truth.iter().any(|g| g.class == VEHICLE_CLASS)
    });
    if !any_vehicle {
        return Err(EvalError::ClassMismatch);
    }

    struct FrameOutcome {
        scored: u64,
        discarded: u64,
        tp: u64,
        fp: Vec<(Classification, f64)>,
    }

    let outcomes: Vec<FrameOutcome> = log
        .frames
        .par_iter()
        .enumerate()
        .map(|(fi, frame)| {
            let labels = match_frame(
                &frame.detections,
                &frame.ground_truth,
                params.score_threshold,
                params.iou_threshold,
            );
            let mut out =
                FrameOutcome { scored: 0, discarded: 0, tp: 0, fp: Vec::new() };
            for (di, label) in labels.iter().enumerate() {
                if frame.detections[di].class != VEHICLE_CLASS {
                    continue;
                }
                match label {
                    DetectionLabel::Discarded => out.discarded += 1,
                    DetectionLabel::TruePositive { .. } => {
                        out.scored += 1;
                        out.tp += 1;
                    }
                    DetectionLabel::FalsePositive => {
                        out.scored += 1;
                        let contender = detection_state(log, fi, di, params);
                        let begin = Instant::now();
                        let verdict = artifact.classify(&frame.ego, &contender);
                        let elapsed_ms = begin.elapsed().as_secs_f64() * 1e3;
                        out.fp.push((verdict, elapsed_ms));
                    }
                }
            }
            out
        })
        .collect();

    let mut counts = EvalCounts { frames: log.frames.len() as u64, ..Default::default() };
    let mut latencies = Vec::new();
    for outcome in outcomes {
        counts.total_detections += outcome.scored;
        counts.discarded += outcome.discarded;
        counts.true_positives += outcome.tp;
        for (verdict, ms) in outcome.fp {
            counts.false_positives += 1;
            counts.hj_critical_fp += verdict.safety_critical as u64;
            counts.baseline_critical_fp += verdict.baseline_critical as u64;
            counts.agreement.add(verdict.safety_critical, verdict.baseline_critical);
            latencies.push(ms);
        }
    }
    debug_assert_eq!(counts.agreement.total(), counts.false_positives);
    Ok(EvalReport::from_parts(counts, LatencyStats::from_samples(latencies)))
}
