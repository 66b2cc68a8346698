//! Synthetic eye-frame renderer with exact ground truth.
//!
//! Frames contain a dark anti-aliased pupil disk on a brighter iris
//! background, a bright corneal glint (P1), a faint fourth Purkinje blob
//! (P4) inside the pupil, optional confounding reflections, and additive
//! Gaussian noise. Whole sessions are driven by a resolved stimulus
//! schedule: features follow the targets through a main-sequence saccade
//! profile and P4 additionally carries a post-saccadic damped-sinusoid
//! wobble that models lens instability.

use thiserror::Error;

use crate::features::Frame;
use crate::rng::Rng;
use crate::stimgen::{EventKind, ResolvedSchedule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("feature geometry extends past the frame edge: {0}")]
    GeometryOutOfBounds(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Sensor geometry and frame-interval model. Intervals alternate between
/// `interval_a_ms` and `interval_b_ms`; at each step the state switches
/// with probability `alternation_prob`.
#[derive(Debug, Clone, Copy)]
pub struct CameraModel {
    pub width: u32,
    pub height: u32,
    pub nominal_rate_hz: f64,
    pub interval_a_ms: f64,
    pub interval_b_ms: f64,
    pub alternation_prob: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            width: 512,
            height: 320,
            nominal_rate_hz: 500.0,
            interval_a_ms: 2.0030,
            interval_b_ms: 2.0031,
            alternation_prob: 0.95,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.width < 64 || self.height < 64 {
            return Err(SynthError::InvalidParameter("frame must be at least 64x64".into()));
        }
        if self.interval_a_ms > self.interval_b_ms {
            return Err(SynthError::InvalidParameter("interval_a must not exceed interval_b".into()));
        }
        if !(0.0..=1.0).contains(&self.alternation_prob) {
            return Err(SynthError::InvalidParameter("alternation_prob must be in [0,1]".into()));
        }
        Ok(())
    }
}

/// Instantaneous scene description: feature positions and intensities.
/// Offsets are relative to the pupil center.
#[derive(Debug, Clone, Copy)]
pub struct EyeState {
    pub pupil_center: (f64, f64),
    pub pupil_radius: f64,
    pub pupil_intensity: u8,
    pub iris_intensity: u8,
    pub p1_offset: (f64, f64),
    pub p1_radius: f64,
    pub p1_intensity: u8,
    pub p4_offset: (f64, f64),
    pub p4_intensity: u8,
    pub p4_radius: f64,
}

impl Default for EyeState {
    fn default() -> Self {
        // P1 six pixels above-right of the pupil center, P4 well inside
        // the pupil and dimmer than the bright cutoff.
        let d = 6.0 / std::f64::consts::SQRT_2;
        EyeState {
            pupil_center: (256.0, 160.0),
            pupil_radius: 40.0,
            pupil_intensity: 20,
            iris_intensity: 70,
            p1_offset: (d, -d),
            p1_radius: 2.0,
            p1_intensity: 230,
            p4_offset: (6.0, 4.0),
            p4_intensity: 55,
            p4_radius: 1.5,
        }
    }
}

impl EyeState {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.pupil_intensity >= self.iris_intensity {
            return Err(SynthError::InvalidParameter("pupil must be darker than iris".into()));
        }
        if self.p1_intensity <= 200 {
            return Err(SynthError::InvalidParameter("P1 intensity must exceed 200".into()));
        }
        if self.p4_intensity <= self.pupil_intensity || self.p4_intensity > 65 {
            return Err(SynthError::InvalidParameter(
                "P4 intensity must lie in (pupil_intensity, 65]".into(),
            ));
        }
        let off = (self.p4_offset.0.powi(2) + self.p4_offset.1.powi(2)).sqrt();
        if off >= self.pupil_radius {
            return Err(SynthError::InvalidParameter("P4 must lie inside the pupil".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfounderKind {
    E1Nose,
    E2Eyelash,
    E3Supraorbital,
    E4Supraorbital,
}

impl ConfounderKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConfounderKind::E1Nose => "E1_nose",
            ConfounderKind::E2Eyelash => "E2_eyelash",
            ConfounderKind::E3Supraorbital => "E3_supraorbital",
            ConfounderKind::E4Supraorbital => "E4_supraorbital",
        }
    }

    pub fn from_str(s: &str) -> Option<ConfounderKind> {
        match s {
            "E1_nose" => Some(ConfounderKind::E1Nose),
            "E2_eyelash" => Some(ConfounderKind::E2Eyelash),
            "E3_supraorbital" => Some(ConfounderKind::E3Supraorbital),
            "E4_supraorbital" => Some(ConfounderKind::E4Supraorbital),
            _ => None,
        }
    }
}

/// An extra reflection, fixed in frame coordinates.
#[derive(Debug, Clone, Copy)]
pub struct ConfounderSpec {
    pub kind: ConfounderKind,
    pub center: (f64, f64),
    pub radius: f64,
    pub intensity: u8,
}

/// How the eye features move in response to the stimulus schedule.
///
/// The pupil is displaced by `gain_px_per_deg` per degree of gaze, P1 by
/// `p1_gain_fraction` of that (so the VOG difference gain is
/// `(1 - p1_gain_fraction) * gain`), and the P1-P4 separation grows by
/// `dpi_gain_px_per_deg` per degree. `cross_coupling` leaks a fraction of
/// each axis into the other, producing measurable crosstalk in the raw
/// signals.
#[derive(Debug, Clone)]
pub struct MotionModel {
    pub gain_px_per_deg: (f64, f64),
    pub cross_coupling: (f64, f64),
    pub p1_gain_fraction: f64,
    pub dpi_gain_px_per_deg: (f64, f64),
    pub wobble_amplitude_deg: f64,
    pub wobble_frequency_hz: f64,
    pub wobble_decay_ms: f64,
    pub noise_sigma: f64,
}

impl Default for MotionModel {
    fn default() -> Self {
        MotionModel {
            gain_px_per_deg: (2.0, 2.0),
            cross_coupling: (0.0, 0.0),
            p1_gain_fraction: 0.5,
            dpi_gain_px_per_deg: (0.6, 0.6),
            wobble_amplitude_deg: 0.3,
            wobble_frequency_hz: 20.0,
            wobble_decay_ms: 30.0,
            noise_sigma: 0.0,
        }
    }
}

impl MotionModel {
    /// Raw VOG pixels per degree implied by this model.
    pub fn vog_gain(&self) -> (f64, f64) {
        (
            (1.0 - self.p1_gain_fraction) * self.gain_px_per_deg.0,
            (1.0 - self.p1_gain_fraction) * self.gain_px_per_deg.1,
        )
    }
}

/// Exact scene metadata recorded alongside every rendered frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRecord {
    pub frame_index: u64,
    pub timestamp_us: f64,
    pub pupil_center: (f64, f64),
    pub p1_center: (f64, f64),
    pub p4_center: (f64, f64),
    pub target_deg: (f64, f64),
    pub confounders_present: Vec<ConfounderKind>,
}

const SUPERSAMPLE: u32 = 4;

/// Fractional disk coverage of one pixel by 4x4 supersampling. Pixel
/// (x, y) is the unit square centered on the integer coordinate, matching
/// the detector's unweighted pixel-coordinate centroids.
fn pixel_coverage(px: u32, py: u32, cx: f64, cy: f64, r: f64) -> f64 {
    // fast paths: pixel fully inside or fully outside the disk
    let dx = px as f64 - cx;
    let dy = py as f64 - cy;
    let d = (dx * dx + dy * dy).sqrt();
    if d <= r - 0.71 {
        return 1.0;
    }
    if d >= r + 0.71 {
        return 0.0;
    }
    let mut inside = 0u32;
    for sy in 0..SUPERSAMPLE {
        for sx in 0..SUPERSAMPLE {
            let x = px as f64 - 0.5 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
            let y = py as f64 - 0.5 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
            let ddx = x - cx;
            let ddy = y - cy;
            if ddx * ddx + ddy * ddy <= r * r {
                inside += 1;
            }
        }
    }
    inside as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
}

fn paint_disk(
    pixels: &mut [u8],
    width: u32,
    height: u32,
    center: (f64, f64),
    radius: f64,
    intensity: u8,
) {
    let x_lo = ((center.0 - radius - 1.0).floor().max(0.0)) as u32;
    let y_lo = ((center.1 - radius - 1.0).floor().max(0.0)) as u32;
    let x_hi = ((center.0 + radius + 1.0).ceil() as i64).min(width as i64 - 1).max(0) as u32;
    let y_hi = ((center.1 + radius + 1.0).ceil() as i64).min(height as i64 - 1).max(0) as u32;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let cov = pixel_coverage(x, y, center.0, center.1, radius);
            if cov > 0.0 {
                let idx = (y * width + x) as usize;
                let blended = pixels[idx] as f64 * (1.0 - cov) + intensity as f64 * cov;
                pixels[idx] = blended.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
}

fn check_bounds(name: &str, center: (f64, f64), radius: f64, camera: &CameraModel) -> Result<(), SynthError> {
    if center.0 - radius < 0.0
        || center.1 - radius < 0.0
        || center.0 + radius > camera.width as f64
        || center.1 + radius > camera.height as f64
    {
        return Err(SynthError::GeometryOutOfBounds(format!(
            "{name} at ({:.1}, {:.1}) r={radius:.1}",
            center.0, center.1
        )));
    }
    Ok(())
}

/// Renders one frame and its exact ground truth. Confounders partially
/// outside the frame are clipped rather than rejected.
pub fn render_frame(
    state: &EyeState,
    confounders: &[ConfounderSpec],
    camera: &CameraModel,
    noise_sigma: f64,
    seed: u64,
) -> Result<(Frame, GroundTruthRecord), SynthError> {
    camera.validate()?;
    state.validate()?;
    let p1_center = (
        state.pupil_center.0 + state.p1_offset.0,
        state.pupil_center.1 + state.p1_offset.1,
    );
    let p4_center = (
        state.pupil_center.0 + state.p4_offset.0,
        state.pupil_center.1 + state.p4_offset.1,
    );
    check_bounds("pupil", state.pupil_center, state.pupil_radius, camera)?;
    check_bounds("p1", p1_center, state.p1_radius, camera)?;
    check_bounds("p4", p4_center, state.p4_radius, camera)?;

    let mut pixels = vec![state.iris_intensity; (camera.width * camera.height) as usize];
    paint_disk(&mut pixels, camera.width, camera.height, state.pupil_center, state.pupil_radius, state.pupil_intensity);
    paint_disk(&mut pixels, camera.width, camera.height, p4_center, state.p4_radius, state.p4_intensity);
    for c in confounders {
        paint_disk(&mut pixels, camera.width, camera.height, c.center, c.radius, c.intensity);
    }
    // P1 last: the glint outshines anything beneath it
    paint_disk(&mut pixels, camera.width, camera.height, p1_center, state.p1_radius, state.p1_intensity);

    if noise_sigma > 0.0 {
        let mut rng = Rng::new(seed);
        for p in pixels.iter_mut() {
            let v = *p as f64 + noise_sigma * rng.normal();
            *p = v.round().clamp(0.0, 255.0) as u8;
        }
    }

    let frame = Frame::new(camera.width, camera.height, pixels, 0.0, 0);
    let truth = GroundTruthRecord {
        frame_index: 0,
        timestamp_us: 0.0,
        pupil_center: state.pupil_center,
        p1_center,
        p4_center,
        target_deg: (0.0, 0.0),
        confounders_present: confounders.iter().map(|c| c.kind).collect(),
    };
    Ok((frame, truth))
}

/// Default main-sequence duration: 21 + 2.2 * amplitude, in ms.
pub fn saccade_duration_ms(amplitude_deg: f64) -> f64 {
    21.0 + 2.2 * amplitude_deg
}

/// Smooth monotone position ramp from 0 to `amplitude` degrees over the
/// main-sequence duration: a raised-cosine with zero endpoint velocity.
pub fn saccade_profile(amplitude_deg: f64, t_ms: f64) -> f64 {
    saccade_profile_with_duration(amplitude_deg, t_ms, saccade_duration_ms(amplitude_deg))
}

pub fn saccade_profile_with_duration(amplitude_deg: f64, t_ms: f64, duration_ms: f64) -> f64 {
    if amplitude_deg == 0.0 || t_ms <= 0.0 {
        return 0.0;
    }
    if t_ms >= duration_ms {
        return amplitude_deg;
    }
    amplitude_deg * 0.5 * (1.0 - (std::f64::consts::PI * t_ms / duration_ms).cos())
}

/// Damped-sinusoid lens wobble, normalized so the first peak equals
/// `amplitude`. `dt_ms` is time since saccade arrival.
pub fn wobble_deg(amplitude: f64, frequency_hz: f64, decay_ms: f64, dt_ms: f64) -> f64 {
    if dt_ms < 0.0 || amplitude == 0.0 {
        return 0.0;
    }
    let omega = 2.0 * std::f64::consts::PI * frequency_hz / 1000.0; // rad per ms
    let raw = |t: f64| (-t / decay_ms).exp() * (omega * t).sin();
    let t_peak = (omega * decay_ms).atan() / omega;
    amplitude * raw(dt_ms) / raw(t_peak)
}

#[derive(Debug, Clone, Copy)]
struct Saccade {
    t_start_us: f64,
    duration_ms: f64,
    from: (f64, f64),
    to: (f64, f64),
}

impl Saccade {
    fn t_end_us(&self) -> f64 {
        self.t_start_us + self.duration_ms * 1000.0
    }

    fn direction(&self) -> (f64, f64) {
        let dx = self.to.0 - self.from.0;
        let dy = self.to.1 - self.from.1;
        let len = (dx * dx + dy * dy).sqrt();
        if len == 0.0 {
            (0.0, 0.0)
        } else {
            (dx / len, dy / len)
        }
    }

    fn amplitude(&self) -> f64 {
        let dx = self.to.0 - self.from.0;
        let dy = self.to.1 - self.from.1;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Streaming frame source for one simulated recording session.
///
/// Frames are produced lazily so multi-gigabyte sessions never live in
/// memory; rendering is a pure function of (seed, frame index).
pub struct Session {
    schedule: ResolvedSchedule,
    motion: MotionModel,
    eye: EyeState,
    camera: CameraModel,
    confounders: Vec<ConfounderSpec>,
    saccades: Vec<Saccade>,
    seed: u64,
    interval_rng: Rng,
    interval_state_a: bool,
    next_timestamp_us: f64,
    frame_index: u64,
    duration_us: f64,
}

impl Session {
    pub fn new(
        schedule: ResolvedSchedule,
        motion: MotionModel,
        eye: EyeState,
        camera: CameraModel,
        confounders: Vec<ConfounderSpec>,
        seed: u64,
    ) -> Result<Session, SynthError> {
        camera.validate()?;
        eye.validate()?;
        if schedule.events.is_empty() {
            return Err(SynthError::InvalidParameter("schedule must be non-empty".into()));
        }
        // Precompute the saccade list: one saccade per target change that
        // is not a smooth pursuit.
        let mut saccades = Vec::new();
        let mut current = schedule.events[0].target_deg;
        for ev in &schedule.events {
            if ev.target_deg != current {
                if ev.kind == EventKind::SmoothMove {
                    current = ev.target_deg;
                    continue;
                }
                let from = current;
                let amp = ((ev.target_deg.0 - from.0).powi(2) + (ev.target_deg.1 - from.1).powi(2)).sqrt();
                saccades.push(Saccade {
                    t_start_us: ev.t_start_us as f64,
                    duration_ms: saccade_duration_ms(amp),
                    from,
                    to: ev.target_deg,
                });
                current = ev.target_deg;
            }
        }
        let duration_us = schedule.duration_us() as f64;
        let session_rng = Rng::new(seed);
        Ok(Session {
            schedule,
            motion,
            eye,
            camera,
            confounders,
            saccades,
            seed,
            interval_rng: session_rng.derive(0xBEA7),
            interval_state_a: true,
            next_timestamp_us: 0.0,
            frame_index: 0,
            duration_us,
        })
    }

    /// Eye position in degrees at a given time, following saccade ramps
    /// between targets and pursuit during smooth moves.
    pub fn gaze_at(&self, t_us: f64) -> (f64, f64) {
        // in-flight saccade takes precedence over the schedule target
        for s in self.saccades.iter().rev() {
            if t_us >= s.t_start_us {
                if t_us < s.t_end_us() {
                    let pos = saccade_profile_with_duration(
                        s.amplitude(),
                        (t_us - s.t_start_us) / 1000.0,
                        s.duration_ms,
                    );
                    let dir = s.direction();
                    return (s.from.0 + dir.0 * pos, s.from.1 + dir.1 * pos);
                }
                break;
            }
        }
        self.schedule.target_at(t_us)
    }

    /// Lens wobble displacement in degrees at a given time, driven by the
    /// most recently completed saccade.
    pub fn wobble_at(&self, t_us: f64) -> (f64, f64) {
        let last = self
            .saccades
            .iter()
            .rev()
            .find(|s| t_us >= s.t_end_us());
        match last {
            Some(s) => {
                let dt_ms = (t_us - s.t_end_us()) / 1000.0;
                let w = wobble_deg(
                    self.motion.wobble_amplitude_deg,
                    self.motion.wobble_frequency_hz,
                    self.motion.wobble_decay_ms,
                    dt_ms,
                );
                let dir = s.direction();
                (w * dir.0, w * dir.1)
            }
            None => (0.0, 0.0),
        }
    }

    /// Scene state for one timestamp; the ground-truth builder and the
    /// renderer both use this.
    pub fn eye_state_at(&self, t_us: f64) -> EyeState {
        let g = self.gaze_at(t_us);
        let cc = self.motion.cross_coupling;
        let gp = (g.0 + cc.0 * g.1, g.1 + cc.1 * g.0);
        let w = self.wobble_at(t_us);
        let gain = self.motion.gain_px_per_deg;
        let d_pupil = (gain.0 * gp.0, gain.1 * gp.1);
        let d_p1 = (self.motion.p1_gain_fraction * d_pupil.0, self.motion.p1_gain_fraction * d_pupil.1);
        let dpi = self.motion.dpi_gain_px_per_deg;
        let base = self.eye.pupil_center;
        let pupil = (base.0 + d_pupil.0, base.1 + d_pupil.1);
        let p1 = (base.0 + self.eye.p1_offset.0 + d_p1.0, base.1 + self.eye.p1_offset.1 + d_p1.1);
        // P1-P4 separation = base separation + dpi_gain * (gaze + wobble)
        let p4 = (
            p1.0 - (self.eye.p1_offset.0 - self.eye.p4_offset.0) - dpi.0 * (gp.0 + w.0),
            p1.1 - (self.eye.p1_offset.1 - self.eye.p4_offset.1) - dpi.1 * (gp.1 + w.1),
        );
        let mut state = self.eye;
        state.pupil_center = pupil;
        state.p1_offset = (p1.0 - pupil.0, p1.1 - pupil.1);
        state.p4_offset = (p4.0 - pupil.0, p4.1 - pupil.1);
        state
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    pub fn motion(&self) -> &MotionModel {
        &self.motion
    }
}

impl Iterator for Session {
    type Item = Result<(Frame, GroundTruthRecord), SynthError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next_timestamp_us > self.duration_us {
            return None;
        }
        let t = self.next_timestamp_us;
        let index = self.frame_index;
        let state = self.eye_state_at(t);
        let frame_seed = Rng::new(self.seed).derive(index.wrapping_add(1)).next_u64();
        let result = render_frame(&state, &self.confounders, &self.camera, self.motion.noise_sigma, frame_seed)
            .map(|(mut frame, mut truth)| {
                frame.timestamp_us = t;
                frame.index = index;
                truth.timestamp_us = t;
                truth.frame_index = index;
                truth.target_deg = self.schedule.target_at(t);
                (frame, truth)
            });

        let interval_ms = if self.interval_state_a {
            self.camera.interval_a_ms
        } else {
            self.camera.interval_b_ms
        };
        if self.interval_rng.uniform() < self.camera.alternation_prob {
            self.interval_state_a = !self.interval_state_a;
        }
        self.next_timestamp_us = t + interval_ms * 1000.0;
        self.frame_index += 1;
        Some(result)
    }
}

/// Confounder scenario labels matching the detection-difficulty cases:
/// `A` clean, `B` nose reflection, `C` eyelash reflections, `D` extra
/// supraorbital reflections inside the pupil.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    A,
    B,
    C,
    D,
}

impl Regime {
    pub fn parse(s: &str) -> Option<Regime> {
        Some(match s {
            "a" | "A" => Regime::A,
            "b" | "B" => Regime::B,
            "c" | "C" => Regime::C,
            "d" | "D" => Regime::D,
            _ => return None,
        })
    }
}

/// Builds the confounder set for a scenario, placed relative to the
/// resting pupil position of `eye`.
pub fn confounders_for_regime(regime: Regime, eye: &EyeState) -> Vec<ConfounderSpec> {
    let (cx, cy) = eye.pupil_center;
    let r = eye.pupil_radius;
    match regime {
        Regime::A => vec![],
        Regime::B => vec![ConfounderSpec {
            kind: ConfounderKind::E1Nose,
            center: (cx - r - 30.0, cy + 20.0),
            radius: 6.0,
            intensity: 180,
        }],
        Regime::C => vec![
            ConfounderSpec {
                kind: ConfounderKind::E2Eyelash,
                center: (cx - 10.0, cy - r + 2.0),
                radius: 1.2,
                intensity: 60,
            },
            ConfounderSpec {
                kind: ConfounderKind::E2Eyelash,
                center: (cx + 6.0, cy - r + 3.0),
                radius: 1.0,
                intensity: 58,
            },
        ],
        Regime::D => vec![
            // E3: too large for the P4 area filter
            ConfounderSpec {
                kind: ConfounderKind::E3Supraorbital,
                center: (cx - 14.0, cy + 20.0),
                radius: 3.6,
                intensity: 50,
            },
            // E4: above the bright cutoff
            ConfounderSpec {
                kind: ConfounderKind::E4Supraorbital,
                center: (cx - 10.0, cy - 24.0),
                radius: 2.5,
                intensity: 80,
            },
        ],
    }
}

/// Ground-truth CSV, one row per frame, sharing frame_index with the
/// frame container for joins.
pub fn truth_to_csv(records: &[GroundTruthRecord]) -> String {
    let mut out = String::from(
        "frame_index,timestamp_us,pupil_x,pupil_y,p1_x,p1_y,p4_x,p4_y,\
         target_x_deg,target_y_deg,confounders\n",
    );
    for r in records {
        let kinds: Vec<&str> = r.confounders_present.iter().map(|k| k.as_str()).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.frame_index,
            r.timestamp_us,
            r.pupil_center.0,
            r.pupil_center.1,
            r.p1_center.0,
            r.p1_center.1,
            r.p4_center.0,
            r.p4_center.1,
            r.target_deg.0,
            r.target_deg.1,
            kinds.join(";"),
        ));
    }
    out
}

pub fn truth_from_csv(text: &str) -> Result<Vec<GroundTruthRecord>, SynthError> {
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let bad = |c: &str| {
            SynthError::InvalidParameter(format!("truth line {}: bad {c}", lineno + 1))
        };
        if cols.len() != 11 {
            return Err(bad("column count"));
        }
        let f = |i: usize, name: &str| cols[i].parse::<f64>().map_err(|_| bad(name));
        let confounders_present = if cols[10].is_empty() {
            vec![]
        } else {
            cols[10]
                .split(';')
                .map(|s| ConfounderKind::from_str(s).ok_or_else(|| bad("confounders")))
                .collect::<Result<_, _>>()?
        };
        records.push(GroundTruthRecord {
            frame_index: cols[0].parse().map_err(|_| bad("frame_index"))?,
            timestamp_us: f(1, "timestamp_us")?,
            pupil_center: (f(2, "pupil_x")?, f(3, "pupil_y")?),
            p1_center: (f(4, "p1_x")?, f(5, "p1_y")?),
            p4_center: (f(6, "p4_x")?, f(7, "p4_y")?),
            target_deg: (f(8, "target_x_deg")?, f(9, "target_y_deg")?),
            confounders_present,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{detect_all, detect_p1, detect_p4, detect_pupil, P4Params, DEFAULT_PUPIL_AREA_BOUNDS};
    use approx::assert_abs_diff_eq;

    #[test]
    fn truth_csv_roundtrip() {
        let records = vec![
            GroundTruthRecord {
                frame_index: 0,
                timestamp_us: 0.0,
                pupil_center: (256.0, 160.0),
                p1_center: (260.24, 155.76),
                p4_center: (262.0, 164.0),
                target_deg: (0.0, 0.0),
                confounders_present: vec![],
            },
            GroundTruthRecord {
                frame_index: 1,
                timestamp_us: 2003.1,
                pupil_center: (258.5, 160.0),
                p1_center: (261.5, 155.8),
                p4_center: (263.9, 164.1),
                target_deg: (1.25, 0.0),
                confounders_present: vec![ConfounderKind::E3Supraorbital, ConfounderKind::E4Supraorbital],
            },
        ];
        let csv = truth_to_csv(&records);
        assert_eq!(truth_from_csv(&csv).unwrap(), records);
    }

    #[test]
    fn zero_offset_p4_truth() {
        let state = EyeState { p4_offset: (0.0, 0.0), ..EyeState::default() };
        let (_, truth) = render_frame(&state, &[], &CameraModel::default(), 0.0, 1).unwrap();
        assert_eq!(truth.p4_center, (256.0, 160.0));
    }

    #[test]
    fn brightest_in_pupil_excluding_p1_is_p4() {
        let state = EyeState::default();
        let (frame, truth) = render_frame(&state, &[], &CameraModel::default(), 0.0, 1).unwrap();
        let (cx, cy) = state.pupil_center;
        let mut max = 0u8;
        for y in 0..frame.height {
            for x in 0..frame.width {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                if dx * dx + dy * dy > (state.pupil_radius - 1.0).powi(2) {
                    continue;
                }
                let p1dx = x as f64 - truth.p1_center.0;
                let p1dy = y as f64 - truth.p1_center.1;
                if p1dx * p1dx + p1dy * p1dy < (state.p1_radius + 2.0).powi(2) {
                    continue;
                }
                max = max.max(frame.get(x, y));
            }
        }
        assert_eq!(max, state.p4_intensity);
        assert!(max <= 65);
    }

    #[test]
    fn intensity_ordering_holds() {
        let state = EyeState::default();
        assert!(state.pupil_intensity < state.p4_intensity);
        assert!(state.p4_intensity <= 65);
        assert!(65 < state.iris_intensity);
        assert!(state.iris_intensity < state.p1_intensity);
    }

    #[test]
    fn geometry_out_of_bounds_rejected() {
        let state = EyeState { pupil_center: (20.0, 160.0), ..EyeState::default() };
        assert!(matches!(
            render_frame(&state, &[], &CameraModel::default(), 0.0, 1),
            Err(SynthError::GeometryOutOfBounds(_))
        ));
    }

    #[test]
    fn identical_seeds_render_identically() {
        let state = EyeState::default();
        let cam = CameraModel::default();
        let (a, _) = render_frame(&state, &[], &cam, 4.0, 99).unwrap();
        let (b, _) = render_frame(&state, &[], &cam, 4.0, 99).unwrap();
        assert_eq!(a.pixels, b.pixels);
        let (c, _) = render_frame(&state, &[], &cam, 4.0, 100).unwrap();
        assert_ne!(a.pixels, c.pixels);
    }

    #[test]
    fn detection_roundtrip_noiseless() {
        // sub-pixel positions must be recovered within half a pixel
        let state = EyeState {
            pupil_center: (256.3, 160.7),
            p4_offset: (6.2, 4.4),
            ..EyeState::default()
        };
        let (frame, truth) = render_frame(&state, &[], &CameraModel::default(), 0.0, 1).unwrap();
        let pupil = detect_pupil(&frame, 37, DEFAULT_PUPIL_AREA_BOUNDS).unwrap();
        assert_abs_diff_eq!(pupil.center.0, truth.pupil_center.0, epsilon = 0.5);
        assert_abs_diff_eq!(pupil.center.1, truth.pupil_center.1, epsilon = 0.5);
        let p1 = detect_p1(&frame, &pupil, 200, 2.0).unwrap();
        assert_abs_diff_eq!(p1.centroid.0, truth.p1_center.0, epsilon = 0.5);
        assert_abs_diff_eq!(p1.centroid.1, truth.p1_center.1, epsilon = 0.5);
        let p4 = detect_p4(&frame, &pupil, &p1, &P4Params::default()).unwrap();
        assert_abs_diff_eq!(p4.blob.centroid.0, truth.p4_center.0, epsilon = 0.5);
        assert_abs_diff_eq!(p4.blob.centroid.1, truth.p4_center.1, epsilon = 0.5);
    }

    #[test]
    fn confounder_regime_d_still_detects_true_p4() {
        let state = EyeState::default();
        let confs = confounders_for_regime(Regime::D, &state);
        let (frame, truth) = render_frame(&state, &confs, &CameraModel::default(), 0.0, 1).unwrap();
        let pupil = detect_pupil(&frame, 37, DEFAULT_PUPIL_AREA_BOUNDS).unwrap();
        let p1 = detect_p1(&frame, &pupil, 200, 2.0).unwrap();
        let p4 = detect_p4(&frame, &pupil, &p1, &P4Params::default()).unwrap();
        assert_abs_diff_eq!(p4.blob.centroid.0, truth.p4_center.0, epsilon = 0.5);
        assert_abs_diff_eq!(p4.blob.centroid.1, truth.p4_center.1, epsilon = 0.5);
    }

    #[test]
    fn p4_absent_when_intensity_matches_pupil() {
        let state = EyeState { p4_intensity: 21, ..EyeState::default() };
        let (frame, _) = render_frame(&state, &[], &CameraModel::default(), 0.0, 1).unwrap();
        let set = detect_all(&frame, 37, &P4Params::default()).unwrap();
        assert!(set.pupil.is_some());
        assert!(set.p1.is_some());
        assert!(set.p4.is_none());
    }

    #[test]
    fn saccade_profile_endpoints() {
        assert_eq!(saccade_profile(0.0, 5.0), 0.0);
        assert_eq!(saccade_profile(10.0, 0.0), 0.0);
        // 21 + 2.2*10 = 43 ms
        assert_eq!(saccade_profile(10.0, 43.0), 10.0);
        assert_eq!(saccade_profile(10.0, 100.0), 10.0);
        // cosine ramp midpoint
        assert_abs_diff_eq!(saccade_profile(10.0, 21.5), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn saccade_profile_monotone() {
        let mut last = -1.0;
        for i in 0..=100 {
            let p = saccade_profile(10.0, 43.0 * i as f64 / 100.0);
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn wobble_peak_is_amplitude() {
        let mut max = 0.0f64;
        for i in 0..5000 {
            let t = i as f64 * 0.05;
            max = max.max(wobble_deg(0.3, 20.0, 30.0, t).abs());
        }
        assert_abs_diff_eq!(max, 0.3, epsilon = 1e-4);
    }

    #[test]
    fn wobble_zero_amplitude_is_flat() {
        for i in 0..100 {
            assert_eq!(wobble_deg(0.0, 20.0, 30.0, i as f64), 0.0);
        }
    }

    fn short_schedule() -> ResolvedSchedule {
        use crate::stimgen::{resolve, Command, StimulusProgram};
        let program = StimulusProgram {
            background_intensity: 192,
            dot_intensity: 0,
            commands: vec![
                Command::DotShow { position: (0.0, 0.0), diameter: 0.67 },
                Command::Fixate { dwell_min: 0.4, dwell_max: 0.4 },
                Command::Jump { to: (5.0, 0.0) },
                Command::Fixate { dwell_min: 0.4, dwell_max: 0.4 },
            ],
        };
        resolve(&program, 3).unwrap()
    }

    #[test]
    fn session_timestamps_have_two_interval_values() {
        let session = Session::new(
            short_schedule(),
            MotionModel::default(),
            EyeState::default(),
            CameraModel::default(),
            vec![],
            7,
        )
        .unwrap();
        let stamps: Vec<f64> = session.map(|r| r.unwrap().0.timestamp_us).collect();
        assert!(stamps.len() > 300);
        let mut intervals: Vec<i64> = stamps
            .windows(2)
            .map(|w| ((w[1] - w[0]) * 10.0).round() as i64)
            .collect();
        intervals.sort_unstable();
        intervals.dedup();
        assert_eq!(intervals, vec![20030, 20031]);
    }

    #[test]
    fn session_is_deterministic() {
        let mk = || {
            Session::new(
                short_schedule(),
                MotionModel { noise_sigma: 4.0, ..MotionModel::default() },
                EyeState::default(),
                CameraModel::default(),
                vec![],
                42,
            )
            .unwrap()
        };
        let a: Vec<_> = mk().map(|r| r.unwrap()).collect();
        let b: Vec<_> = mk().map(|r| r.unwrap()).collect();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.0.pixels, y.0.pixels);
            assert_eq!(x.1, y.1);
        }
    }

    #[test]
    fn truth_log_one_record_per_frame_strictly_increasing() {
        let session = Session::new(
            short_schedule(),
            MotionModel::default(),
            EyeState::default(),
            CameraModel::default(),
            vec![],
            7,
        )
        .unwrap();
        let truths: Vec<GroundTruthRecord> = session.map(|r| r.unwrap().1).collect();
        for (i, t) in truths.iter().enumerate() {
            assert_eq!(t.frame_index, i as u64);
        }
        for w in truths.windows(2) {
            assert!(w[1].timestamp_us > w[0].timestamp_us);
        }
    }

    #[test]
    fn eye_follows_schedule_through_saccade() {
        let session = Session::new(
            short_schedule(),
            MotionModel::default(),
            EyeState::default(),
            CameraModel::default(),
            vec![],
            7,
        )
        .unwrap();
        // before the jump
        assert_eq!(session.gaze_at(100_000.0), (0.0, 0.0));
        // mid-saccade: strictly between the endpoints
        let mid = session.gaze_at(400_000.0 + 16_000.0);
        assert!(mid.0 > 0.0 && mid.0 < 5.0, "{mid:?}");
        // settled
        let end = session.gaze_at(600_000.0);
        assert_abs_diff_eq!(end.0, 5.0, epsilon = 1e-12);
    }
}
