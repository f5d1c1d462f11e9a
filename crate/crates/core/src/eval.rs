//! Trajectory-quality metrics: endpoint adherence, waypoint spacing and
//! smoothness angles, plus corpus aggregation and CSV export.
//!
//! Endpoint distances compare end-effector positions only (meters); joint
//! angles and positions are not commensurable. Standard deviations are
//! population standard deviations.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{EEPosition, EndpointPair, State};
use crate::tm::{tm_infer_batch, PredictedTrajectory, TrajectoryModel};

fn sub(a: &EEPosition, b: &EEPosition) -> [f64; 3] {
    [a.0[0] - b.0[0], a.0[1] - b.0[1], a.0[2] - b.0[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// `(‖ef(0) − êf(1)‖, ‖ef(T) − êf(T−1)‖)`.
pub fn endpoint_distances(traj: &PredictedTrajectory, s0: &State, s_goal: &State) -> Result<(f64, f64)> {
    let (first, last) = match (traj.ef_seq.first(), traj.ef_seq.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::invalid("empty trajectory")),
    };
    Ok((s0.ef.distance(first), s_goal.ef.distance(last)))
}

/// The generated positions framed by the ground-truth endpoint positions.
pub fn waypoints(traj: &PredictedTrajectory, s0: &State, s_goal: &State) -> Vec<EEPosition> {
    let mut points = Vec::with_capacity(traj.len() + 2);
    points.push(s0.ef);
    points.extend_from_slice(&traj.ef_seq);
    points.push(s_goal.ef);
    points
}

/// Mean distance between consecutive points and the largest absolute
/// deviation from that mean.
pub fn spacing_stats(points: &[EEPosition]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::invalid(format!("spacing needs at least 2 points, got {}", points.len())));
    }
    let gaps: Vec<f64> = points.windows(2).map(|w| w[0].distance(&w[1])).collect();
    let avg = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let dev = gaps.iter().map(|g| (g - avg).abs()).fold(0.0, f64::max);
    Ok((avg, dev))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleStats {
    /// Mean interior angle in degrees.
    pub avg: f64,
    pub min: f64,
    /// Triplets skipped because one of their segments has zero length.
    pub skipped: usize,
}

/// Interior angles at every middle point of consecutive triplets.
pub fn angle_stats(points: &[EEPosition]) -> Result<AngleStats> {
    if points.len() < 3 {
        return Err(Error::invalid(format!("angles need at least 3 points, got {}", points.len())));
    }
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for w in points.windows(3) {
        let u = sub(&w[0], &w[1]);
        let v = sub(&w[2], &w[1]);
        if dot(u, u) == 0.0 || dot(v, v) == 0.0 {
            skipped += 1;
            continue;
        }
        // atan2 keeps full precision near 0° and 180°, where acos does not.
        let angle = dot(cross(u, v), cross(u, v)).sqrt().atan2(dot(u, v)).to_degrees();
        sum += angle;
        min = min.min(angle);
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedAngle);
    }
    Ok(AngleStats { avg: sum / used as f64, min, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStats {
    pub init_dist: f64,
    pub final_dist: f64,
    pub avg_spacing: f64,
    pub max_spacing_dev: f64,
    pub avg_angle: f64,
    pub min_angle: f64,
    pub skipped_triplets: usize,
}

pub fn trajectory_stats(traj: &PredictedTrajectory, s0: &State, s_goal: &State) -> Result<TrajectoryStats> {
    let (init_dist, final_dist) = endpoint_distances(traj, s0, s_goal)?;
    let points = waypoints(traj, s0, s_goal);
    let (avg_spacing, max_spacing_dev) = spacing_stats(&points)?;
    let angles = angle_stats(&points)?;
    Ok(TrajectoryStats {
        init_dist,
        final_dist,
        avg_spacing,
        max_spacing_dev,
        avg_angle: angles.avg,
        min_angle: angles.min,
        skipped_triplets: angles.skipped,
    })
}

/// Generates and scores one trajectory per endpoint pair.
pub fn evaluate_corpus(tm: &TrajectoryModel, endpoints: &[EndpointPair]) -> Result<Vec<TrajectoryStats>> {
    if endpoints.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut out = Vec::with_capacity(endpoints.len());
    for chunk in endpoints.chunks(256) {
        let pairs: Vec<(&State, &State)> = chunk.iter().map(|p| (&p.s0, &p.s_goal)).collect();
        for (traj, p) in tm_infer_batch(tm, &pairs)?.iter().zip(chunk) {
            out.push(trajectory_stats(traj, &p.s0, &p.s_goal)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    InitDist,
    FinalDist,
    AvgSpacing,
    MaxSpacingDev,
    AvgAngle,
    MinAngle,
}

impl Metric {
    pub const ALL: [Metric; 6] =
        [Metric::InitDist, Metric::FinalDist, Metric::AvgSpacing, Metric::MaxSpacingDev, Metric::AvgAngle, Metric::MinAngle];

    pub fn name(self) -> &'static str {
        match self {
            Metric::InitDist => "init_dist",
            Metric::FinalDist => "final_dist",
            Metric::AvgSpacing => "avg_spacing",
            Metric::MaxSpacingDev => "max_spacing_dev",
            Metric::AvgAngle => "avg_angle",
            Metric::MinAngle => "min_angle",
        }
    }

    pub fn value(self, s: &TrajectoryStats) -> f64 {
        match self {
            Metric::InitDist => s.init_dist,
            Metric::FinalDist => s.final_dist,
            Metric::AvgSpacing => s.avg_spacing,
            Metric::MaxSpacingDev => s.max_spacing_dev,
            Metric::AvgAngle => s.avg_angle,
            Metric::MinAngle => s.min_angle,
        }
    }
}

/// Equal-width histogram; `edges` has one more entry than `counts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Bins span `[min, max]`; every bin is right-open except the last. When all
/// values are equal they land in the first bin.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() || bins == 0 {
        return Err(Error::invalid("histogram needs values and at least one bin"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * width).collect();
    edges.push(hi);
    let mut counts = vec![0; bins];
    for &v in values {
        let idx = if width > 0.0 {
            // Locate by the published edges so counts agree with them exactly.
            let mut i = (((v - lo) / width) as usize).min(bins - 1);
            while i > 0 && v < edges[i] {
                i -= 1;
            }
            while i + 1 < bins && v >= edges[i + 1] {
                i += 1;
            }
            i
        } else {
            0
        };
        counts[idx] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub histogram: Histogram,
}

pub fn summarize(values: &[f64], bins: usize) -> Result<MetricSummary> {
    let histogram = histogram(values, bins)?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    Ok(MetricSummary { mean, std, histogram })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: usize,
    pub skipped_triplets: usize,
    /// One entry per [`Metric::ALL`], in that order.
    pub metrics: Vec<(Metric, MetricSummary)>,
}

impl CorpusStats {
    pub fn get(&self, metric: Metric) -> &MetricSummary {
        &self.metrics.iter().find(|(m, _)| *m == metric).expect("every metric is summarized").1
    }
}

pub fn aggregate(stats: &[TrajectoryStats], bins: usize) -> Result<CorpusStats> {
    if stats.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let metrics = Metric::ALL
        .iter()
        .map(|&m| {
            let values: Vec<f64> = stats.iter().map(|s| m.value(s)).collect();
            Ok((m, summarize(&values, bins)?))
        })
        .collect::<Result<_>>()?;
    Ok(CorpusStats { count: stats.len(), skipped_triplets: stats.iter().map(|s| s.skipped_triplets).sum(), metrics })
}

/// Fraction of trajectories whose sharpest angle is below `threshold` degrees;
/// `None` for an empty corpus.
pub fn sharp_turn_fraction(stats: &[TrajectoryStats], threshold: f64) -> Option<f64> {
    if stats.is_empty() {
        return None;
    }
    Some(stats.iter().filter(|s| s.min_angle < threshold).count() as f64 / stats.len() as f64)
}

pub fn write_trajectory_stats_csv<W: Write>(stats: &[TrajectoryStats], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in stats {
        out.serialize(s)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_histograms_csv<W: Write>(corpus: &CorpusStats, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["metric", "bin_left", "bin_right", "count"])?;
    for (m, summary) in &corpus.metrics {
        let h = &summary.histogram;
        for (i, c) in h.counts.iter().enumerate() {
            out.write_record([m.name().to_string(), h.edges[i].to_string(), h.edges[i + 1].to_string(), c.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One row per labelled corpus with mean and std of every metric.
pub fn write_aggregate_csv<W: Write>(rows: &[(String, &CorpusStats)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["label".to_string(), "count".to_string()];
    for m in Metric::ALL {
        header.push(m.name().to_string());
        header.push(format!("{}_std", m.name()));
    }
    out.write_record(&header)?;
    for (label, corpus) in rows {
        let mut rec = vec![label.clone(), corpus.count.to_string()];
        for m in Metric::ALL {
            let s = corpus.get(m);
            rec.push(s.mean.to_string());
            rec.push(s.std.to_string());
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
