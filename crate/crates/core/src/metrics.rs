//! Data-quality measures over gaze samples and a resolved schedule:
//! accuracy, spatial precision (RMS of sample-to-sample distances),
//! linearity, crosstalk, temporal stability and validity.
//!
//! Accuracy is the Euclidean distance between a fixation's gaze centroid
//! and its target; linearity and crosstalk are computed on the raw
//! pre-calibration signal so they are independent of the calibration
//! model.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::gaze::GazeSample;
use crate::stimgen::{Axis, EventKind, ResolvedSchedule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("samples end before the first fixation window opens")]
    ScheduleMismatch,
    #[error("no fixation segments")]
    NoSegments,
    #[error("segment has fewer than 2 samples")]
    SegmentTooShort,
    #[error("need at least 3 distinct target amplitudes, got {0}")]
    TooFewAmplitudes(usize),
    #[error("driven-axis slope is degenerate")]
    DegenerateDrivenSlope,
    #[error("timestamps are not strictly increasing")]
    NonMonotoneTimestamps,
    #[error("need at least 3 timestamps")]
    TooFewTimestamps,
}

/// Valid samples of one fixation window, clipped by the settle and tail
/// margins.
#[derive(Debug, Clone)]
pub struct FixationSegment {
    pub t_start_us: f64,
    pub t_end_us: f64,
    pub target_deg: (f64, f64),
    pub samples: Vec<GazeSample>,
    /// Mean raw difference vector over the segment, in camera pixels.
    pub raw_mean: (f64, f64),
}

pub const DEFAULT_SETTLE_MS: f64 = 300.0;
pub const DEFAULT_TAIL_MS: f64 = 20.0;

/// Cuts one segment per schedule fixation, keeping valid samples inside
/// `[t_start + settle, t_end - tail]`. Returns the segments and the
/// number of fixations dropped for having no valid samples.
pub fn segment_fixations(
    samples: &[GazeSample],
    schedule: &ResolvedSchedule,
    settle_ms: f64,
    tail_ms: f64,
) -> Result<(Vec<FixationSegment>, usize), MetricsError> {
    let fixations: Vec<_> =
        schedule.events.iter().filter(|e| e.kind == EventKind::Fixation).collect();
    if let (Some(first), Some(last_sample)) = (fixations.first(), samples.last()) {
        let w_start = first.t_start_us as f64 + settle_ms * 1000.0;
        let w_end = first.t_end_us as f64 - tail_ms * 1000.0;
        if w_end > w_start && last_sample.timestamp_us < w_start {
            return Err(MetricsError::ScheduleMismatch);
        }
    }
    let mut segments = Vec::new();
    let mut dropped = 0usize;
    let mut cursor = 0usize;
    for ev in fixations {
        let w_start = ev.t_start_us as f64 + settle_ms * 1000.0;
        let w_end = ev.t_end_us as f64 - tail_ms * 1000.0;
        while cursor < samples.len() && samples[cursor].timestamp_us < w_start {
            cursor += 1;
        }
        let mut seg_samples = Vec::new();
        let mut i = cursor;
        while i < samples.len() && samples[i].timestamp_us <= w_end {
            if samples[i].valid {
                seg_samples.push(samples[i]);
            }
            i += 1;
        }
        if w_end <= w_start || seg_samples.is_empty() {
            dropped += 1;
            continue;
        }
        let n = seg_samples.len() as f64;
        let raw_mean = (
            seg_samples.iter().map(|s| s.raw.dx).sum::<f64>() / n,
            seg_samples.iter().map(|s| s.raw.dy).sum::<f64>() / n,
        );
        segments.push(FixationSegment {
            t_start_us: w_start,
            t_end_us: w_end,
            target_deg: ev.target_deg,
            samples: seg_samples,
            raw_mean,
        });
    }
    Ok((segments, dropped))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-fixation Euclidean distance between the gaze centroid and the
/// target, aggregated as (mean, std, per-fixation values).
pub fn accuracy(segments: &[FixationSegment]) -> Result<(f64, f64, Vec<f64>), MetricsError> {
    if segments.is_empty() {
        return Err(MetricsError::NoSegments);
    }
    let per_fixation: Vec<f64> = segments
        .iter()
        .map(|seg| {
            let n = seg.samples.len() as f64;
            let cx = seg.samples.iter().map(|s| s.x_deg).sum::<f64>() / n;
            let cy = seg.samples.iter().map(|s| s.y_deg).sum::<f64>() / n;
            ((cx - seg.target_deg.0).powi(2) + (cy - seg.target_deg.1).powi(2)).sqrt()
        })
        .collect();
    let (mean, std) = mean_std(&per_fixation);
    Ok((mean, std, per_fixation))
}

/// Spatial precision: per segment, the RMS of Euclidean distances between
/// successive samples; aggregated across segments as (mean, std).
pub fn precision_rms_s2s(segments: &[FixationSegment]) -> Result<(f64, f64), MetricsError> {
    if segments.is_empty() {
        return Err(MetricsError::NoSegments);
    }
    let mut per_segment = Vec::with_capacity(segments.len());
    for seg in segments {
        if seg.samples.len() < 2 {
            return Err(MetricsError::SegmentTooShort);
        }
        let sq_sum: f64 = seg
            .samples
            .windows(2)
            .map(|w| (w[1].x_deg - w[0].x_deg).powi(2) + (w[1].y_deg - w[0].y_deg).powi(2))
            .sum();
        per_segment.push((sq_sum / (seg.samples.len() - 1) as f64).sqrt());
    }
    let (mean, std) = mean_std(&per_segment);
    Ok((mean, std))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearityResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub max_residual: f64,
}

fn axis_component(v: (f64, f64), axis: Axis) -> f64 {
    match axis {
        Axis::Horizontal => v.0,
        Axis::Vertical => v.1,
    }
}

fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    (slope, my - slope * mx)
}

fn distinct_count(values: &[f64]) -> usize {
    let mut keys: Vec<i64> = values.iter().map(|v| (v * 1e6).round() as i64).collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Ordinary least squares of the per-fixation mean raw signal component
/// against target position along the same axis.
pub fn linearity(
    segments: &[FixationSegment],
    axis: Axis,
) -> Result<LinearityResult, MetricsError> {
    let xs: Vec<f64> = segments.iter().map(|s| axis_component(s.target_deg, axis)).collect();
    let ys: Vec<f64> = segments.iter().map(|s| axis_component(s.raw_mean, axis)).collect();
    let distinct = distinct_count(&xs);
    if distinct < 3 {
        return Err(MetricsError::TooFewAmplitudes(distinct));
    }
    let (slope, intercept) = ols(&xs, &ys);
    let residuals: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - (slope * x + intercept)).collect();
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    let max_residual = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    Ok(LinearityResult { slope, intercept, r_squared, max_residual })
}

/// Crosstalk of a single-axis session: the OLS slope of the orthogonal
/// raw component against the driven target amplitude, as a percentage of
/// the driven-axis slope.
pub fn crosstalk(segments: &[FixationSegment], driven_axis: Axis) -> Result<f64, MetricsError> {
    let orthogonal = match driven_axis {
        Axis::Horizontal => Axis::Vertical,
        Axis::Vertical => Axis::Horizontal,
    };
    let xs: Vec<f64> = segments.iter().map(|s| axis_component(s.target_deg, driven_axis)).collect();
    if distinct_count(&xs) < 3 {
        return Err(MetricsError::TooFewAmplitudes(distinct_count(&xs)));
    }
    let driven: Vec<f64> = segments.iter().map(|s| axis_component(s.raw_mean, driven_axis)).collect();
    let ortho: Vec<f64> = segments.iter().map(|s| axis_component(s.raw_mean, orthogonal)).collect();
    let (slope_driven, _) = ols(&xs, &driven);
    if slope_driven.abs() < 1e-12 {
        return Err(MetricsError::DegenerateDrivenSlope);
    }
    let (slope_ortho, _) = ols(&xs, &ortho);
    Ok(100.0 * slope_ortho.abs() / slope_driven.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalStability {
    pub mean_interval_ms: f64,
    pub factual_rate_hz: f64,
    /// Distinct interval values (rounded to 0.1 us) with their proportions.
    pub histogram: Vec<(f64, f64)>,
    pub lag1_autocorr: f64,
    /// Set when the interval sequence has zero variance; the
    /// autocorrelation is then reported as 0 by convention.
    pub zero_variance: bool,
}

/// Interval statistics of a timestamp sequence (microseconds).
pub fn temporal_stability(timestamps_us: &[f64]) -> Result<TemporalStability, MetricsError> {
    if timestamps_us.len() < 3 {
        return Err(MetricsError::TooFewTimestamps);
    }
    if timestamps_us.windows(2).any(|w| w[1] <= w[0]) {
        return Err(MetricsError::NonMonotoneTimestamps);
    }
    let intervals: Vec<f64> = timestamps_us.windows(2).map(|w| (w[1] - w[0]) / 1000.0).collect();
    let n = intervals.len() as f64;
    let mean = intervals.iter().sum::<f64>() / n;
    let factual_rate_hz = 1000.0 / mean;

    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for iv in &intervals {
        *counts.entry((iv * 1e4).round() as i64).or_default() += 1;
    }
    let histogram: Vec<(f64, f64)> =
        counts.iter().map(|(k, c)| (*k as f64 / 1e4, *c as f64 / n)).collect();

    let denom: f64 = intervals.iter().map(|d| (d - mean).powi(2)).sum();
    let (lag1_autocorr, zero_variance) = if denom < 1e-18 {
        (0.0, true)
    } else {
        let num: f64 =
            intervals.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
        (num / denom, false)
    };
    Ok(TemporalStability { mean_interval_ms: mean, factual_rate_hz, histogram, lag1_autocorr, zero_variance })
}

/// Fraction of samples whose required features were all detected.
pub fn validity(samples: &[GazeSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|s| s.valid).count() as f64 / samples.len() as f64
}

/// Everything the quality suite measured for one session.
#[derive(Debug, Clone)]
pub struct QualityReport {
    pub accuracy_mean_deg: Option<f64>,
    pub accuracy_std_deg: Option<f64>,
    pub precision_mean_deg: Option<f64>,
    pub precision_std_deg: Option<f64>,
    pub linearity_h: Option<LinearityResult>,
    pub linearity_v: Option<LinearityResult>,
    pub crosstalk_h_pct: Option<f64>,
    pub crosstalk_v_pct: Option<f64>,
    pub temporal: Option<TemporalStability>,
    pub validity_fraction: f64,
    pub fixation_count: usize,
    pub dropped_fixations: usize,
}

/// Computes the full report. Accuracy and precision need calibrated
/// degree coordinates, so they are skipped when the samples carry no
/// finite degree values; linearity and crosstalk come from the raw
/// signal and are skipped only when the session lacks the amplitudes.
pub fn quality_report(
    samples: &[GazeSample],
    schedule: &ResolvedSchedule,
    settle_ms: f64,
    tail_ms: f64,
) -> Result<QualityReport, MetricsError> {
    let (segments, dropped) = segment_fixations(samples, schedule, settle_ms, tail_ms)?;
    let calibrated = segments.iter().all(|s| {
        s.samples.iter().all(|g| g.x_deg.is_finite() && g.y_deg.is_finite())
    }) && !segments.is_empty();

    let (accuracy_mean_deg, accuracy_std_deg) = if calibrated {
        let (m, s, _) = accuracy(&segments)?;
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    let (precision_mean_deg, precision_std_deg) = if calibrated {
        match precision_rms_s2s(&segments) {
            Ok((m, s)) => (Some(m), Some(s)),
            Err(MetricsError::SegmentTooShort) => (None, None),
            Err(e) => return Err(e),
        }
    } else {
        (None, None)
    };

    let linearity_h = linearity(&segments, Axis::Horizontal).ok();
    let linearity_v = linearity(&segments, Axis::Vertical).ok();
    let crosstalk_h_pct = crosstalk(&segments, Axis::Horizontal).ok();
    let crosstalk_v_pct = crosstalk(&segments, Axis::Vertical).ok();

    let timestamps: Vec<f64> = samples.iter().map(|s| s.timestamp_us).collect();
    let temporal = temporal_stability(&timestamps).ok();

    Ok(QualityReport {
        accuracy_mean_deg,
        accuracy_std_deg,
        precision_mean_deg,
        precision_std_deg,
        linearity_h,
        linearity_v,
        crosstalk_h_pct,
        crosstalk_v_pct,
        temporal,
        validity_fraction: validity(samples),
        fixation_count: segments.len(),
        dropped_fixations: dropped,
    })
}

/// Flat CSV, one metric per row: name, value, unit.
pub fn report_to_csv(report: &QualityReport) -> String {
    let mut out = String::from("name,value,unit\n");
    let mut row = |name: &str, value: Option<f64>, unit: &str| {
        match value {
            Some(v) => writeln!(out, "{name},{v},{unit}").unwrap(),
            None => writeln!(out, "{name},,{unit}").unwrap(),
        }
    };
    row("accuracy_mean", report.accuracy_mean_deg, "deg");
    row("accuracy_std", report.accuracy_std_deg, "deg");
    row("precision_rms_s2s_mean", report.precision_mean_deg, "deg");
    row("precision_rms_s2s_std", report.precision_std_deg, "deg");
    for (axis, lin) in [("h", &report.linearity_h), ("v", &report.linearity_v)] {
        row(&format!("linearity_{axis}_slope"), lin.map(|l| l.slope), "px_per_deg");
        row(&format!("linearity_{axis}_intercept"), lin.map(|l| l.intercept), "px");
        row(&format!("linearity_{axis}_r_squared"), lin.map(|l| l.r_squared), "");
        row(&format!("linearity_{axis}_max_residual"), lin.map(|l| l.max_residual), "px");
    }
    row("crosstalk_h", report.crosstalk_h_pct, "pct");
    row("crosstalk_v", report.crosstalk_v_pct, "pct");
    let t = report.temporal.as_ref();
    row("mean_interval", t.map(|t| t.mean_interval_ms), "ms");
    row("factual_rate", t.map(|t| t.factual_rate_hz), "hz");
    row("lag1_autocorr", t.map(|t| t.lag1_autocorr), "");
    row("interval_zero_variance", t.map(|t| t.zero_variance as u8 as f64), "flag");
    if let Some(t) = t {
        for (value, prop) in &t.histogram {
            row(&format!("interval_proportion_{value}"), Some(*prop), "fraction");
        }
    }
    row("validity", Some(report.validity_fraction), "fraction");
    row("fixation_count", Some(report.fixation_count as f64), "count");
    row("dropped_fixations", Some(report.dropped_fixations as f64), "count");
    out
}

/// Per-fixation detail CSV for one session.
pub fn fixations_to_csv(segments: &[FixationSegment], per_fixation_error: Option<&[f64]>) -> String {
    let mut out = String::from(
        "t_start_us,t_end_us,target_x_deg,target_y_deg,sample_count,raw_mean_x,raw_mean_y,error_deg\n",
    );
    for (i, seg) in segments.iter().enumerate() {
        let err = per_fixation_error
            .and_then(|e| e.get(i))
            .map(|v| v.to_string())
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            seg.t_start_us,
            seg.t_end_us,
            seg.target_deg.0,
            seg.target_deg.1,
            seg.samples.len(),
            seg.raw_mean.0,
            seg.raw_mean.1,
            err
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaze::{DifferenceVector, GazeSample, Source};
    use crate::rng::Rng;
    use crate::stimgen::{ResolvedEvent, ResolvedSchedule};
    use approx::assert_abs_diff_eq;

    fn sample(t_us: f64, x: f64, y: f64) -> GazeSample {
        GazeSample {
            timestamp_us: t_us,
            x_deg: x,
            y_deg: y,
            source: Source::Vog,
            valid: true,
            raw: DifferenceVector { dx: x, dy: y, source: Source::Vog },
        }
    }

    fn fixation_schedule(targets: &[(f64, f64)], dwell_us: u64) -> ResolvedSchedule {
        let events = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| ResolvedEvent {
                t_start_us: i as u64 * dwell_us,
                t_end_us: (i + 1) as u64 * dwell_us,
                target_deg: t,
                kind: EventKind::Fixation,
            })
            .collect();
        ResolvedSchedule { events, initial_target: targets[0], seed: 0 }
    }

    fn segment_at(target: (f64, f64), samples: Vec<GazeSample>) -> FixationSegment {
        let n = samples.len() as f64;
        let raw_mean = (
            samples.iter().map(|s| s.raw.dx).sum::<f64>() / n,
            samples.iter().map(|s| s.raw.dy).sum::<f64>() / n,
        );
        FixationSegment { t_start_us: 0.0, t_end_us: 1.0, target_deg: target, samples, raw_mean }
    }

    #[test]
    fn window_clipping_default_margins() {
        // 1.5 s fixation with default margins leaves a 1.18 s window
        let sched = fixation_schedule(&[(0.0, 0.0)], 1_500_000);
        let samples: Vec<GazeSample> =
            (0..1500).map(|i| sample(i as f64 * 1000.0, 0.0, 0.0)).collect();
        let (segs, dropped) =
            segment_fixations(&samples, &sched, DEFAULT_SETTLE_MS, DEFAULT_TAIL_MS).unwrap();
        assert_eq!(dropped, 0);
        assert_eq!(segs.len(), 1);
        let width = segs[0].t_end_us - segs[0].t_start_us;
        assert_abs_diff_eq!(width, 1_180_000.0);
        assert!(segs[0].samples.iter().all(|s| s.timestamp_us >= 300_000.0));
    }

    #[test]
    fn settle_consuming_whole_fixation_drops_segment() {
        let sched = fixation_schedule(&[(0.0, 0.0)], 1_500_000);
        let samples: Vec<GazeSample> =
            (0..1500).map(|i| sample(i as f64 * 1000.0, 0.0, 0.0)).collect();
        let (segs, dropped) = segment_fixations(&samples, &sched, 1500.0, 20.0).unwrap();
        assert!(segs.is_empty());
        assert_eq!(dropped, 1);
    }

    #[test]
    fn samples_ending_early_is_schedule_mismatch() {
        let sched = fixation_schedule(&[(0.0, 0.0)], 1_500_000);
        let samples = vec![sample(0.0, 0.0, 0.0), sample(1000.0, 0.0, 0.0)];
        assert_eq!(
            segment_fixations(&samples, &sched, DEFAULT_SETTLE_MS, DEFAULT_TAIL_MS).unwrap_err(),
            MetricsError::ScheduleMismatch
        );
    }

    #[test]
    fn perfect_gaze_has_zero_accuracy() {
        let seg = segment_at((1.0, 2.0), (0..10).map(|i| sample(i as f64, 1.0, 2.0)).collect());
        let (mean, std, _) = accuracy(&[seg]).unwrap();
        assert_eq!(mean, 0.0);
        assert_eq!(std, 0.0);
    }

    #[test]
    fn constant_offset_is_three_four_five() {
        let segs: Vec<FixationSegment> = (0..5)
            .map(|k| {
                let t = (k as f64, -k as f64);
                segment_at(t, (0..10).map(|i| sample(i as f64, t.0 + 0.3, t.1 + 0.4)).collect())
            })
            .collect();
        let (mean, std, per) = accuracy(&segs).unwrap();
        assert_abs_diff_eq!(mean, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(std, 0.0, epsilon = 1e-12);
        assert!(per.iter().all(|&e| (e - 0.5).abs() < 1e-12));
    }

    #[test]
    fn precision_zero_for_constant_gaze() {
        let seg = segment_at((0.0, 0.0), (0..10).map(|i| sample(i as f64, 1.0, 1.0)).collect());
        let (mean, _) = precision_rms_s2s(&[seg]).unwrap();
        assert_eq!(mean, 0.0);
    }

    #[test]
    fn precision_alternating_step() {
        let seg = segment_at(
            (0.0, 0.0),
            (0..10).map(|i| sample(i as f64, if i % 2 == 0 { 0.0 } else { 0.1 }, 0.0)).collect(),
        );
        let (mean, _) = precision_rms_s2s(&[seg]).unwrap();
        assert_abs_diff_eq!(mean, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn precision_gaussian_noise_is_two_sigma() {
        // white positional noise sigma per axis: successive differences
        // have variance 2*sigma^2 per axis, so the 2D RMS step is 2*sigma
        let mut rng = Rng::new(5);
        let sigma = 0.05;
        let segs: Vec<FixationSegment> = (0..200)
            .map(|_| {
                segment_at(
                    (0.0, 0.0),
                    (0..500)
                        .map(|i| {
                            sample(i as f64, sigma * rng.normal(), sigma * rng.normal())
                        })
                        .collect(),
                )
            })
            .collect();
        let (mean, _) = precision_rms_s2s(&segs).unwrap();
        assert_abs_diff_eq!(mean, 2.0 * sigma, epsilon = 0.002);
    }

    #[test]
    fn precision_invariant_to_constant_offset() {
        let base: Vec<GazeSample> =
            (0..50).map(|i| sample(i as f64, (i as f64 * 0.7).sin() * 0.1, 0.0)).collect();
        let shifted: Vec<GazeSample> = base
            .iter()
            .map(|s| sample(s.timestamp_us, s.x_deg + 5.0, s.y_deg - 3.0))
            .collect();
        let (a, _) = precision_rms_s2s(&[segment_at((0.0, 0.0), base)]).unwrap();
        let (b, _) = precision_rms_s2s(&[segment_at((0.0, 0.0), shifted)]).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    fn linear_raw_segments(gain: f64, cross: f64) -> Vec<FixationSegment> {
        (-8..=8)
            .map(|k| {
                let amp = k as f64 * 2.5;
                let mut seg = segment_at((amp, 0.0), vec![sample(0.0, 0.0, 0.0)]);
                seg.raw_mean = (gain * amp, cross * gain * amp);
                seg
            })
            .collect()
    }

    #[test]
    fn linearity_exact_line() {
        let segs = linear_raw_segments(3.0, 0.0);
        let lin = linearity(&segs, Axis::Horizontal).unwrap();
        assert_abs_diff_eq!(lin.slope, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lin.r_squared, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lin.max_residual, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn linearity_constant_component_zero_slope() {
        let mut segs = linear_raw_segments(3.0, 0.0);
        for s in &mut segs {
            s.raw_mean.0 = 7.0;
        }
        let lin = linearity(&segs, Axis::Horizontal).unwrap();
        assert_abs_diff_eq!(lin.slope, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn linearity_needs_three_amplitudes() {
        let segs: Vec<FixationSegment> = linear_raw_segments(3.0, 0.0).into_iter().take(2).collect();
        assert!(matches!(
            linearity(&segs, Axis::Horizontal),
            Err(MetricsError::TooFewAmplitudes(_))
        ));
    }

    #[test]
    fn r_squared_of_own_fit_line_is_one() {
        let segs = linear_raw_segments(1.7, 0.0);
        let lin = linearity(&segs, Axis::Horizontal).unwrap();
        // regenerate data exactly on the fitted line
        let mut on_line = segs.clone();
        for s in &mut on_line {
            s.raw_mean.0 = lin.slope * s.target_deg.0 + lin.intercept;
        }
        let lin2 = linearity(&on_line, Axis::Horizontal).unwrap();
        assert_abs_diff_eq!(lin2.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn crosstalk_zero_when_orthogonal_flat() {
        let segs = linear_raw_segments(3.0, 0.0);
        assert_abs_diff_eq!(crosstalk(&segs, Axis::Horizontal).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn crosstalk_recovers_injected_coupling() {
        let segs = linear_raw_segments(3.0, 0.005);
        assert_abs_diff_eq!(crosstalk(&segs, Axis::Horizontal).unwrap(), 0.5, epsilon = 1e-9);
        let segs = linear_raw_segments(3.0, 0.03);
        assert_abs_diff_eq!(crosstalk(&segs, Axis::Horizontal).unwrap(), 3.0, epsilon = 1e-9);
    }

    #[test]
    fn crosstalk_degenerate_driven_slope() {
        let mut segs = linear_raw_segments(3.0, 0.0);
        for s in &mut segs {
            s.raw_mean = (0.0, 0.0);
        }
        assert_eq!(crosstalk(&segs, Axis::Horizontal), Err(MetricsError::DegenerateDrivenSlope));
    }

    #[test]
    fn alternating_intervals_give_minus_one() {
        let mut ts = vec![0.0f64];
        for i in 0..10_000 {
            let dt = if i % 2 == 0 { 2003.0 } else { 2003.1 };
            ts.push(ts.last().unwrap() + dt);
        }
        let t = temporal_stability(&ts).unwrap();
        assert_abs_diff_eq!(t.lag1_autocorr, -1.0, epsilon = 1e-3);
        assert_eq!(t.histogram.len(), 2);
    }

    #[test]
    fn constant_intervals_rate_and_flag() {
        let ts: Vec<f64> = (0..1000).map(|i| i as f64 * 2000.0).collect();
        let t = temporal_stability(&ts).unwrap();
        assert_abs_diff_eq!(t.factual_rate_hz, 500.0, epsilon = 1e-9);
        assert_eq!(t.lag1_autocorr, 0.0);
        assert!(t.zero_variance);
    }

    #[test]
    fn weighted_mean_identity() {
        // intervals a with proportion (1-p), b with proportion p
        let (a, b) = (2.0030, 2.0031);
        let mut ts = vec![0.0f64];
        let mut count_b = 0;
        for i in 0..1000 {
            let dt = if i % 5 == 0 { count_b += 1; b } else { a };
            ts.push(ts.last().unwrap() + dt * 1000.0);
        }
        let t = temporal_stability(&ts).unwrap();
        let p = count_b as f64 / 1000.0;
        assert_abs_diff_eq!(t.mean_interval_ms, (1.0 - p) * a + p * b, epsilon = 1e-9);
        assert_abs_diff_eq!(t.factual_rate_hz, 1000.0 / t.mean_interval_ms, epsilon = 1e-12);
    }

    #[test]
    fn lag1_autocorr_bounded() {
        let mut rng = Rng::new(9);
        for trial in 0..50 {
            let mut ts = vec![0.0f64];
            for _ in 0..200 {
                ts.push(ts.last().unwrap() + 1000.0 + 500.0 * rng.uniform());
            }
            let t = temporal_stability(&ts).unwrap();
            assert!(
                (-1.0 - 1e-9..=1.0 + 1e-9).contains(&t.lag1_autocorr),
                "trial {trial}: {}",
                t.lag1_autocorr
            );
        }
    }

    #[test]
    fn non_monotone_timestamps_rejected() {
        assert_eq!(
            temporal_stability(&[0.0, 10.0, 5.0]),
            Err(MetricsError::NonMonotoneTimestamps)
        );
    }

    #[test]
    fn validity_counts_valid_flags() {
        let mut samples: Vec<GazeSample> = (0..100).map(|i| sample(i as f64, 0.0, 0.0)).collect();
        for s in samples.iter_mut().take(10) {
            s.valid = false;
        }
        assert_abs_diff_eq!(validity(&samples), 0.90, epsilon = 1e-12);
    }

    #[test]
    fn report_csv_has_metric_rows() {
        let sched = fixation_schedule(&[(0.0, 0.0), (2.5, 0.0), (5.0, 0.0)], 1_000_000);
        let samples: Vec<GazeSample> =
            (0..3000).map(|i| sample(i as f64 * 1000.0, 0.0, 0.0)).collect();
        let report = quality_report(&samples, &sched, DEFAULT_SETTLE_MS, DEFAULT_TAIL_MS).unwrap();
        let csv = report_to_csv(&report);
        assert!(csv.contains("accuracy_mean,"));
        assert!(csv.contains("validity,1,fraction"));
    }
}
