//! Per-frame feature detection: pupil, corneal reflection (P1) and the
//! fourth Purkinje image (P4).
//!
//! The P4 detector works in four steps: mask everything outside the pupil
//! disk (and the P1 neighborhood), drop pixels above a fixed bright cutoff
//! and below an adaptive floor, label the survivors with 8-connectivity,
//! then keep blobs with plausible area and brightness and pick the one
//! nearest the pupil center.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DetectError {
    #[error("no pupil candidate within area bounds")]
    PupilNotFound,
    #[error("no P1 candidate near the pupil")]
    P1NotFound,
    #[error("no blob survived P4 filtering")]
    P4NotFound,
    #[error("area of interest is empty")]
    EmptyAoi,
    #[error("frame pixel buffer does not match declared dimensions")]
    FrameMalformed,
}

/// One 8-bit grayscale image with a timestamp, the unit of all detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
    pub timestamp_us: f64,
    pub index: u64,
}

impl Frame {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>, timestamp_us: f64, index: u64) -> Self {
        Frame { width, height, pixels, timestamp_us, index }
    }

    pub fn is_well_formed(&self) -> bool {
        self.pixels.len() == (self.width as usize) * (self.height as usize)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }
}

/// Binary mask with the same dimensions as its source frame.
#[derive(Debug, Clone)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Mask { width, height, bits: vec![false; width as usize * height as usize] }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// Axis-aligned pixel rectangle, inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BoundingBox {
    /// Expands by `margin` pixels, clamped to frame bounds.
    pub fn dilate(&self, margin: u32, width: u32, height: u32) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min.saturating_sub(margin),
            y_min: self.y_min.saturating_sub(margin),
            x_max: (self.x_max + margin).min(width - 1),
            y_max: (self.y_max + margin).min(height - 1),
        }
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Connected region of a binary mask with statistics from the source frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub centroid: (f64, f64),
    pub area: u32,
    pub mean_intensity: f64,
    pub max_intensity: u8,
    pub bounding_box: BoundingBox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PupilEstimate {
    pub center: (f64, f64),
    pub radius: f64,
    pub area: u32,
    pub threshold_used: u8,
}

/// Tuning for the P4 detector. `rim_margin` shrinks the pupil AOI so the
/// anti-aliased transition band at the pupil boundary (whose intensities
/// span pupil-to-iris and would otherwise pass both thresholds as thin
/// arcs) stays out of the candidate set.
#[derive(Debug, Clone, Copy)]
pub struct P4Params {
    pub bright_cutoff: u8,
    pub area_min: u32,
    pub area_max: u32,
    pub adaptive_k: f64,
    pub blob_margin: f64,
    pub rim_margin: f64,
}

impl Default for P4Params {
    fn default() -> Self {
        P4Params {
            bright_cutoff: 65,
            area_min: 5,
            area_max: 30,
            adaptive_k: 2.0,
            blob_margin: 5.0,
            rim_margin: 2.0,
        }
    }
}

/// Detection outcome for one frame. Failures are data, not errors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub pupil: Option<PupilEstimate>,
    pub p1: Option<Blob>,
    pub p4: Option<Blob>,
    pub frame_index: u64,
    pub timestamp_us: f64,
    pub failure_reasons: Vec<DetectError>,
}

/// Labels connected regions of `mask`, reading intensities from `frame`.
///
/// Every true pixel belongs to exactly one blob; centroids are unweighted
/// pixel-coordinate means. Blobs are returned in scan order of their first
/// pixel.
pub fn connected_components(mask: &Mask, frame: &Frame, connectivity: Connectivity) -> Vec<Blob> {
    debug_assert_eq!(mask.width, frame.width);
    debug_assert_eq!(mask.height, frame.height);
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut visited = vec![false; mask.bits.len()];
    let mut blobs = Vec::new();
    let mut stack: Vec<(i64, i64)> = Vec::new();

    let neighbors_8: [(i64, i64); 8] =
        [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];
    let neighbors_4: [(i64, i64); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
    let neighbors: &[(i64, i64)] = match connectivity {
        Connectivity::Four => &neighbors_4,
        Connectivity::Eight => &neighbors_8,
    };

    for y0 in 0..h {
        for x0 in 0..w {
            let start = (y0 * w + x0) as usize;
            if !mask.bits[start] || visited[start] {
                continue;
            }
            visited[start] = true;
            stack.push((x0, y0));
            let mut sum_x = 0.0;
            let mut sum_y = 0.0;
            let mut sum_i = 0.0;
            let mut max_i = 0u8;
            let mut area = 0u32;
            let (mut x_min, mut y_min, mut x_max, mut y_max) = (x0, y0, x0, y0);
            while let Some((x, y)) = stack.pop() {
                let v = frame.get(x as u32, y as u32);
                sum_x += x as f64;
                sum_y += y as f64;
                sum_i += v as f64;
                max_i = max_i.max(v);
                area += 1;
                x_min = x_min.min(x);
                x_max = x_max.max(x);
                y_min = y_min.min(y);
                y_max = y_max.max(y);
                for (dx, dy) in neighbors {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let ni = (ny * w + nx) as usize;
                    if mask.bits[ni] && !visited[ni] {
                        visited[ni] = true;
                        stack.push((nx, ny));
                    }
                }
            }
            let n = area as f64;
            blobs.push(Blob {
                centroid: (sum_x / n, sum_y / n),
                area,
                mean_intensity: sum_i / n,
                max_intensity: max_i,
                bounding_box: BoundingBox {
                    x_min: x_min as u32,
                    y_min: y_min as u32,
                    x_max: x_max as u32,
                    y_max: y_max as u32,
                },
            });
        }
    }
    blobs
}

/// Fixed-threshold dark-region pupil detector: binarizes `intensity < threshold`
/// and returns the largest 8-connected component within `area_bounds`.
pub fn detect_pupil(
    frame: &Frame,
    threshold: u8,
    area_bounds: (u32, u32),
) -> Result<PupilEstimate, DetectError> {
    let mut mask = Mask::new(frame.width, frame.height);
    for y in 0..frame.height {
        for x in 0..frame.width {
            if frame.get(x, y) < threshold {
                mask.set(x, y, true);
            }
        }
    }
    let blobs = connected_components(&mask, frame, Connectivity::Eight);
    blobs
        .into_iter()
        .filter(|b| b.area >= area_bounds.0 && b.area <= area_bounds.1)
        .max_by_key(|b| b.area)
        .map(|b| PupilEstimate {
            center: b.centroid,
            radius: (b.area as f64 / std::f64::consts::PI).sqrt(),
            area: b.area,
            threshold_used: threshold,
        })
        .ok_or(DetectError::PupilNotFound)
}

/// Finds the corneal reflection: among blobs of intensity >= `bright_threshold`
/// whose centroid lies within `search_radius_factor * pupil.radius` of the
/// pupil center, returns the one nearest the pupil center.
pub fn detect_p1(
    frame: &Frame,
    pupil: &PupilEstimate,
    bright_threshold: u8,
    search_radius_factor: f64,
) -> Result<Blob, DetectError> {
    let mut mask = Mask::new(frame.width, frame.height);
    for y in 0..frame.height {
        for x in 0..frame.width {
            if frame.get(x, y) >= bright_threshold {
                mask.set(x, y, true);
            }
        }
    }
    let max_dist = search_radius_factor * pupil.radius;
    connected_components(&mask, frame, Connectivity::Eight)
        .into_iter()
        .filter_map(|b| {
            let d = dist(b.centroid, pupil.center);
            (d <= max_dist).then_some((b, d))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(b, _)| b)
        .ok_or(DetectError::P1NotFound)
}

/// Adaptive intensity floor over AOI pixels: mean + k * population std,
/// clamped to [0, 255]. Callers pass only the pixels already below the
/// bright cutoff.
pub fn adaptive_threshold(aoi_pixels: &[u8], k: f64) -> Result<f64, DetectError> {
    if aoi_pixels.is_empty() {
        return Err(DetectError::EmptyAoi);
    }
    let n = aoi_pixels.len() as f64;
    let mean = aoi_pixels.iter().map(|&p| p as f64).sum::<f64>() / n;
    let var = aoi_pixels.iter().map(|&p| (p as f64 - mean).powi(2)).sum::<f64>() / n;
    Ok((mean + k * var.sqrt()).clamp(0.0, 255.0))
}

/// Result of P4 detection along with the thresholds that produced it,
/// so that callers can audit the filter chain.
#[derive(Debug, Clone)]
pub struct P4Detection {
    pub blob: Blob,
    pub adaptive_floor: f64,
}

/// Builds the P4 search mask: inside the pupil disk, outside the dilated
/// P1 bounding box.
fn p4_aoi(
    frame: &Frame,
    pupil: &PupilEstimate,
    p1: &Blob,
    rim_margin: f64,
) -> (Mask, Vec<(u32, u32)>) {
    let excl = p1.bounding_box.dilate(2, frame.width, frame.height);
    let (cx, cy) = pupil.center;
    let radius = (pupil.radius - rim_margin).max(0.0);
    let r2 = radius * radius;
    let x_lo = (cx - radius).floor().max(0.0) as u32;
    let x_hi = ((cx + radius).ceil().max(0.0) as u32).min(frame.width - 1);
    let y_lo = (cy - radius).floor().max(0.0) as u32;
    let y_hi = ((cy + radius).ceil().max(0.0) as u32).min(frame.height - 1);
    let mut mask = Mask::new(frame.width, frame.height);
    let mut coords = Vec::new();
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            if dx * dx + dy * dy <= r2 && !excl.contains(x, y) {
                mask.set(x, y, true);
                coords.push((x, y));
            }
        }
    }
    (mask, coords)
}

/// Detects the fourth Purkinje image inside the pupil.
pub fn detect_p4(
    frame: &Frame,
    pupil: &PupilEstimate,
    p1: &Blob,
    params: &P4Params,
) -> Result<P4Detection, DetectError> {
    // Step 1: AOI = pupil disk (rim excluded) minus the P1 neighborhood.
    let (mut mask, coords) = p4_aoi(frame, pupil, p1, params.rim_margin);
    if coords.is_empty() {
        return Err(DetectError::EmptyAoi);
    }

    // Step 2: drop too-bright pixels, then too-faint ones below the
    // adaptive floor computed over the remaining AOI pixels.
    let sub_cutoff: Vec<u8> = coords
        .iter()
        .map(|&(x, y)| frame.get(x, y))
        .filter(|&v| v <= params.bright_cutoff)
        .collect();
    let floor = adaptive_threshold(&sub_cutoff, params.adaptive_k)?;
    for &(x, y) in &coords {
        let v = frame.get(x, y);
        if v > params.bright_cutoff || (v as f64) < floor {
            mask.set(x, y, false);
        }
    }

    // Step 3: label survivors with 8-connectivity.
    let blobs = connected_components(&mask, frame, Connectivity::Eight);

    // Step 4: area and brightness filters, then nearest to the pupil center.
    // Ties break toward larger area, then scan order.
    blobs
        .into_iter()
        .filter(|b| {
            b.area >= params.area_min
                && b.area <= params.area_max
                && b.max_intensity as f64 >= floor + params.blob_margin
        })
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            let da = dist(a.centroid, pupil.center);
            let db = dist(b.centroid, pupil.center);
            da.total_cmp(&db).then(b.area.cmp(&a.area)).then(ia.cmp(ib))
        })
        .map(|(_, blob)| P4Detection { blob, adaptive_floor: floor })
        .ok_or(DetectError::P4NotFound)
}

/// Runs pupil, P1 and P4 detection in dependency order. Detection failures
/// are recorded in `failure_reasons`, never raised.
pub fn detect_all(
    frame: &Frame,
    pupil_threshold: u8,
    p4_params: &P4Params,
) -> Result<FeatureSet, DetectError> {
    if !frame.is_well_formed() {
        return Err(DetectError::FrameMalformed);
    }
    let mut set = FeatureSet {
        pupil: None,
        p1: None,
        p4: None,
        frame_index: frame.index,
        timestamp_us: frame.timestamp_us,
        failure_reasons: Vec::new(),
    };
    let pupil = match detect_pupil(frame, pupil_threshold, DEFAULT_PUPIL_AREA_BOUNDS) {
        Ok(p) => p,
        Err(e) => {
            set.failure_reasons.push(e);
            return Ok(set);
        }
    };
    set.pupil = Some(pupil);
    let p1 = match detect_p1(frame, &pupil, DEFAULT_P1_BRIGHT_THRESHOLD, DEFAULT_P1_SEARCH_FACTOR) {
        Ok(b) => b,
        Err(e) => {
            set.failure_reasons.push(e);
            return Ok(set);
        }
    };
    match detect_p4(frame, &pupil, &p1, p4_params) {
        Ok(d) => set.p4 = Some(d.blob),
        Err(e) => set.failure_reasons.push(e),
    }
    set.p1 = Some(p1);
    Ok(set)
}

pub const DEFAULT_PUPIL_AREA_BOUNDS: (u32, u32) = (200, 100_000);
pub const DEFAULT_P1_BRIGHT_THRESHOLD: u8 = 200;
pub const DEFAULT_P1_SEARCH_FACTOR: f64 = 2.0;

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_from(rows: &[&[u8]]) -> Frame {
        let h = rows.len() as u32;
        let w = rows[0].len() as u32;
        let pixels = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Frame::new(w, h, pixels, 0.0, 0)
    }

    fn mask_of(frame: &Frame, pred: impl Fn(u8) -> bool) -> Mask {
        let mut m = Mask::new(frame.width, frame.height);
        for y in 0..frame.height {
            for x in 0..frame.width {
                if pred(frame.get(x, y)) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    #[test]
    fn diagonal_pixels_eight_vs_four() {
        let f = frame_from(&[&[255, 0], &[0, 255]]);
        let m = mask_of(&f, |v| v > 0);
        let eight = connected_components(&m, &f, Connectivity::Eight);
        assert_eq!(eight.len(), 1);
        assert_eq!(eight[0].area, 2);
        let four = connected_components(&m, &f, Connectivity::Four);
        assert_eq!(four.len(), 2);
        assert!(four.iter().all(|b| b.area == 1));
    }

    #[test]
    fn empty_mask_empty_list() {
        let f = frame_from(&[&[0, 0], &[0, 0]]);
        let m = Mask::new(2, 2);
        assert!(connected_components(&m, &f, Connectivity::Eight).is_empty());
    }

    #[test]
    fn blob_stats() {
        let f = frame_from(&[&[10, 30, 0], &[0, 0, 0], &[0, 0, 200]]);
        let m = mask_of(&f, |v| v > 0);
        let blobs = connected_components(&m, &f, Connectivity::Eight);
        assert_eq!(blobs.len(), 2);
        let first = &blobs[0];
        assert_eq!(first.area, 2);
        assert_eq!(first.centroid, (0.5, 0.0));
        assert_eq!(first.mean_intensity, 20.0);
        assert_eq!(first.max_intensity, 30);
    }

    #[test]
    fn uniform_frame_no_pupil() {
        let f = Frame::new(64, 64, vec![128; 64 * 64], 0.0, 0);
        assert_eq!(detect_pupil(&f, 37, (1, 10_000)), Err(DetectError::PupilNotFound));
    }

    #[test]
    fn adaptive_threshold_zero_deviation() {
        assert_eq!(adaptive_threshold(&[20; 16], 2.0).unwrap(), 20.0);
    }

    #[test]
    fn adaptive_threshold_hand_case() {
        // mean 20, population std 10 -> 20 + 2*10
        assert_eq!(adaptive_threshold(&[10, 10, 30, 30], 2.0).unwrap(), 40.0);
    }

    #[test]
    fn adaptive_threshold_clamps() {
        assert_eq!(adaptive_threshold(&[0, 255, 0, 255], 10.0).unwrap(), 255.0);
    }

    #[test]
    fn adaptive_threshold_empty() {
        assert_eq!(adaptive_threshold(&[], 2.0), Err(DetectError::EmptyAoi));
    }

    #[test]
    fn detect_all_gray_frame_records_reason() {
        let f = Frame::new(64, 64, vec![128; 64 * 64], 0.0, 3);
        let set = detect_all(&f, 37, &P4Params::default()).unwrap();
        assert!(set.pupil.is_none());
        assert_eq!(set.failure_reasons, vec![DetectError::PupilNotFound]);
    }

    #[test]
    fn detect_all_rejects_malformed() {
        let f = Frame { width: 4, height: 4, pixels: vec![0; 3], timestamp_us: 0.0, index: 0 };
        assert_eq!(detect_all(&f, 37, &P4Params::default()), Err(DetectError::FrameMalformed));
    }

    #[test]
    fn p1_radius_filter_prefers_inner_glint() {
        // dark pupil at center, one glint inside the search radius, one outside
        let mut pixels = vec![100u8; 128 * 128];
        for y in 0..128u32 {
            for x in 0..128u32 {
                let dx = x as f64 - 64.0;
                let dy = y as f64 - 64.0;
                if dx * dx + dy * dy <= 20.0 * 20.0 {
                    pixels[(y * 128 + x) as usize] = 20;
                }
            }
        }
        pixels[(60 * 128 + 70) as usize] = 250; // inner
        pixels[(5 * 128 + 5) as usize] = 250; // outer
        let f = Frame::new(128, 128, pixels, 0.0, 0);
        let pupil = detect_pupil(&f, 37, (100, 10_000)).unwrap();
        let p1 = detect_p1(&f, &pupil, 200, 2.0).unwrap();
        assert!((p1.centroid.0 - 70.0).abs() < 1e-9);
        assert!((p1.centroid.1 - 60.0).abs() < 1e-9);
    }

    #[test]
    fn p4_area_filter_rejects_small_blob() {
        // pupil disk at 20 with a 4-px bright-ish blob, no true P4
        let mut pixels = vec![100u8; 128 * 128];
        for y in 0..128u32 {
            for x in 0..128u32 {
                let dx = x as f64 - 64.0;
                let dy = y as f64 - 64.0;
                if dx * dx + dy * dy <= 20.0 * 20.0 {
                    pixels[(y * 128 + x) as usize] = 20;
                }
            }
        }
        for (x, y) in [(70u32, 70u32), (71, 70), (70, 71), (71, 71)] {
            pixels[(y * 128 + x) as usize] = 55;
        }
        pixels[(60 * 128 + 60) as usize] = 250; // P1 glint
        let f = Frame::new(128, 128, pixels, 0.0, 0);
        let pupil = detect_pupil(&f, 37, (100, 10_000)).unwrap();
        let p1 = detect_p1(&f, &pupil, 200, 2.0).unwrap();
        let err = detect_p4(&f, &pupil, &p1, &P4Params::default()).unwrap_err();
        assert_eq!(err, DetectError::P4NotFound);
    }
}
