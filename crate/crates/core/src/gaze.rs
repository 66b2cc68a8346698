//! Raw gaze signals and calibration.
//!
//! Two difference signals are built from detected features: the traditional
//! VOG signal (pupil center minus P1) and the modeled dual-Purkinje signal
//! (P1 minus P4). Both are mapped to degrees of visual angle by a fitted
//! per-axis second-order polynomial.

use std::fmt::Write as _;

use thiserror::Error;

use crate::features::FeatureSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("need at least {needed} calibration points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("calibration design matrix is rank deficient")]
    RankDeficient,
    #[error("malformed calibration file: {0}")]
    Format(String),
}

/// Signal source: which feature pair a difference vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Vog,
    Dpi,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Vog => "vog",
            Source::Dpi => "dpi",
        }
    }
}

/// Raw per-frame signal in camera pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifferenceVector {
    pub dx: f64,
    pub dy: f64,
    pub source: Source,
}

/// Monitor geometry used to convert on-screen pixels to degrees of
/// visual angle, origin at screen center.
#[derive(Debug, Clone, Copy)]
pub struct ScreenGeometry {
    pub width_mm: f64,
    pub height_mm: f64,
    pub width_px: f64,
    pub height_px: f64,
    pub eye_distance_mm: f64,
}

impl Default for ScreenGeometry {
    fn default() -> Self {
        ScreenGeometry {
            width_mm: 374.0,
            height_mm: 300.0,
            width_px: 1280.0,
            height_px: 1024.0,
            eye_distance_mm: 500.0,
        }
    }
}

impl ScreenGeometry {
    /// Screen pixel position to degrees, independent arctangent per axis.
    pub fn px_to_deg(&self, px: (f64, f64)) -> (f64, f64) {
        let x_mm = (px.0 - self.width_px / 2.0) * self.width_mm / self.width_px;
        let y_mm = (px.1 - self.height_px / 2.0) * self.height_mm / self.height_px;
        (
            (x_mm / self.eye_distance_mm).atan().to_degrees(),
            (y_mm / self.eye_distance_mm).atan().to_degrees(),
        )
    }

    /// Inverse of `px_to_deg`.
    pub fn deg_to_px(&self, deg: (f64, f64)) -> (f64, f64) {
        let x_mm = deg.0.to_radians().tan() * self.eye_distance_mm;
        let y_mm = deg.1.to_radians().tan() * self.eye_distance_mm;
        (
            x_mm * self.width_px / self.width_mm + self.width_px / 2.0,
            y_mm * self.height_px / self.height_mm + self.height_px / 2.0,
        )
    }

    /// Largest representable eccentricity per axis, in degrees.
    pub fn half_extent_deg(&self) -> (f64, f64) {
        (
            (self.width_mm / 2.0 / self.eye_distance_mm).atan().to_degrees(),
            (self.height_mm / 2.0 / self.eye_distance_mm).atan().to_degrees(),
        )
    }
}

/// Per-axis polynomial over the basis {1, u, v, u^2, v^2, uv}.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationModel {
    pub coeffs_x: [f64; 6],
    pub coeffs_y: [f64; 6],
    pub residual_rms: f64,
    pub point_count: usize,
}

const BASIS_LEN: usize = 6;
const MIN_POINTS: usize = 6;

fn basis(u: f64, v: f64) -> [f64; BASIS_LEN] {
    [1.0, u, v, u * u, v * v, u * v]
}

/// One calibrated gaze sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeSample {
    pub timestamp_us: f64,
    pub x_deg: f64,
    pub y_deg: f64,
    pub source: Source,
    pub valid: bool,
    pub raw: DifferenceVector,
}

/// Extracts the VOG (pupil - P1) and DPI (P1 - P4) vectors from one
/// frame's features. Absence of a feature makes the vector absent.
pub fn difference_vectors(
    features: &FeatureSet,
) -> (Option<DifferenceVector>, Option<DifferenceVector>) {
    let vog = match (&features.pupil, &features.p1) {
        (Some(p), Some(g)) => Some(DifferenceVector {
            dx: p.center.0 - g.centroid.0,
            dy: p.center.1 - g.centroid.1,
            source: Source::Vog,
        }),
        _ => None,
    };
    let dpi = match (&features.p1, &features.p4) {
        (Some(g), Some(q)) => Some(DifferenceVector {
            dx: g.centroid.0 - q.centroid.0,
            dy: g.centroid.1 - q.centroid.1,
            source: Source::Dpi,
        }),
        _ => None,
    };
    (vog, dpi)
}

/// Least-squares fit of the second-order model per axis via normal
/// equations. `pairs` holds (raw vector, target in degrees).
pub fn fit_calibration(
    pairs: &[(DifferenceVector, (f64, f64))],
) -> Result<CalibrationModel, CalibrationError> {
    if pairs.len() < MIN_POINTS {
        return Err(CalibrationError::TooFewPoints { needed: MIN_POINTS, got: pairs.len() });
    }
    // Accumulate A^T A and A^T b for both axes over the shared design matrix.
    let mut ata = [[0.0f64; BASIS_LEN]; BASIS_LEN];
    let mut atb_x = [0.0f64; BASIS_LEN];
    let mut atb_y = [0.0f64; BASIS_LEN];
    for (raw, target) in pairs {
        let phi = basis(raw.dx, raw.dy);
        for i in 0..BASIS_LEN {
            for j in 0..BASIS_LEN {
                ata[i][j] += phi[i] * phi[j];
            }
            atb_x[i] += phi[i] * target.0;
            atb_y[i] += phi[i] * target.1;
        }
    }
    let coeffs_x = solve_symmetric(ata, atb_x)?;
    let coeffs_y = solve_symmetric(ata, atb_y)?;

    let mut sq_sum = 0.0;
    for (raw, target) in pairs {
        let (px, py) = eval(&coeffs_x, &coeffs_y, raw);
        sq_sum += (px - target.0).powi(2) + (py - target.1).powi(2);
    }
    Ok(CalibrationModel {
        coeffs_x,
        coeffs_y,
        residual_rms: (sq_sum / pairs.len() as f64).sqrt(),
        point_count: pairs.len(),
    })
}

/// Evaluates a fitted model at a raw difference vector.
pub fn apply_calibration(model: &CalibrationModel, raw: &DifferenceVector) -> (f64, f64) {
    eval(&model.coeffs_x, &model.coeffs_y, raw)
}

fn eval(cx: &[f64; 6], cy: &[f64; 6], raw: &DifferenceVector) -> (f64, f64) {
    let phi = basis(raw.dx, raw.dy);
    let mut x = 0.0;
    let mut y = 0.0;
    for i in 0..BASIS_LEN {
        x += cx[i] * phi[i];
        y += cy[i] * phi[i];
    }
    (x, y)
}

const PIVOT_TOLERANCE: f64 = 1e-10;

/// Gaussian elimination with partial pivoting on the (symmetric) normal
/// system; pivots below tolerance relative to the largest diagonal entry
/// signal rank deficiency.
fn solve_symmetric(
    mut a: [[f64; BASIS_LEN]; BASIS_LEN],
    mut b: [f64; BASIS_LEN],
) -> Result<[f64; BASIS_LEN], CalibrationError> {
    let scale = a.iter().enumerate().map(|(i, row)| row[i].abs()).fold(1.0f64, f64::max);
    for col in 0..BASIS_LEN {
        let pivot_row = (col..BASIS_LEN)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot_row][col].abs() < PIVOT_TOLERANCE * scale {
            return Err(CalibrationError::RankDeficient);
        }
        if pivot_row != col {
            a.swap(col, pivot_row);
            b.swap(col, pivot_row);
        }
        for row in col + 1..BASIS_LEN {
            let factor = a[row][col] / a[col][col];
            for k in col..BASIS_LEN {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0; BASIS_LEN];
    for row in (0..BASIS_LEN).rev() {
        let mut sum = b[row];
        for k in row + 1..BASIS_LEN {
            sum -= a[row][k] * x[k];
        }
        x[row] = sum / a[row][row];
    }
    Ok(x)
}

/// Serializes a model: a header line `point_count residual_rms`, then one
/// line per axis with the six coefficients at 17 significant digits.
pub fn write_calibration(model: &CalibrationModel) -> String {
    let mut out = String::new();
    writeln!(out, "{} {:.16e}", model.point_count, model.residual_rms).unwrap();
    for coeffs in [&model.coeffs_x, &model.coeffs_y] {
        let line: Vec<String> = coeffs.iter().map(|c| format!("{c:.16e}")).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    out
}

pub fn read_calibration(text: &str) -> Result<CalibrationModel, CalibrationError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| CalibrationError::Format("empty file".into()))?;
    let mut parts = header.split_whitespace();
    let point_count: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CalibrationError::Format("bad point_count".into()))?;
    let residual_rms: f64 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CalibrationError::Format("bad residual_rms".into()))?;
    let mut read_axis = || -> Result<[f64; 6], CalibrationError> {
        let line = lines.next().ok_or_else(|| CalibrationError::Format("missing axis line".into()))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CalibrationError::Format(e.to_string()))?;
        vals.try_into().map_err(|_| CalibrationError::Format("expected 6 coefficients".into()))
    };
    let coeffs_x = read_axis()?;
    let coeffs_y = read_axis()?;
    Ok(CalibrationModel { coeffs_x, coeffs_y, residual_rms, point_count })
}
