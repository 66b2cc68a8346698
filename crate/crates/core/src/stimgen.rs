//! Stimulus programs: an XML command language for dot targets, resolution
//! of all randomness into a fixed timeline, and generators for the
//! saccade-grid protocols.
//!
//! Authored programs use seconds and degrees of visual angle; resolved
//! schedules use whole microseconds so downstream consumers never touch
//! the program language again.

use std::fmt::Write as _;

use thiserror::Error;

use crate::gaze::ScreenGeometry;
use crate::rng::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StimError {
    #[error("parse error at {line}:{col}: {msg}")]
    Parse { line: u32, col: u32, msg: String },
    #[error("schema error in <{element}>{}: {msg}", attribute.as_ref().map(|a| format!(" @{a}")).unwrap_or_default())]
    Schema { element: String, attribute: Option<String>, msg: String },
}

fn schema_err(element: &str, attribute: Option<&str>, msg: impl Into<String>) -> StimError {
    StimError::Schema {
        element: element.to_string(),
        attribute: attribute.map(str::to_string),
        msg: msg.into(),
    }
}

/// One stimulus command. Positions are degrees of visual angle,
/// durations seconds.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    DotShow { position: (f64, f64), diameter: f64 },
    Fixate { dwell_min: f64, dwell_max: f64 },
    Jump { to: (f64, f64) },
    SmoothMove { to: (f64, f64), velocity: f64 },
    Shrink { to_diameter: f64, over: f64 },
    Image { path: String, duration: f64 },
    Video { path: String, duration: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StimulusProgram {
    pub background_intensity: u8,
    pub dot_intensity: u8,
    pub commands: Vec<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Fixation,
    SmoothMove,
    Shrink,
    Image,
    Video,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Fixation => "fixation",
            EventKind::SmoothMove => "smooth_move",
            EventKind::Shrink => "shrink",
            EventKind::Image => "image",
            EventKind::Video => "video",
        }
    }

    fn from_str(s: &str) -> Option<EventKind> {
        Some(match s {
            "fixation" => EventKind::Fixation,
            "smooth_move" => EventKind::SmoothMove,
            "shrink" => EventKind::Shrink,
            "image" => EventKind::Image,
            "video" => EventKind::Video,
            _ => return None,
        })
    }
}

/// One timeline interval. For `SmoothMove` the target is the destination;
/// the dot travels during the interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedEvent {
    pub t_start_us: u64,
    pub t_end_us: u64,
    pub target_deg: (f64, f64),
    pub kind: EventKind,
}

/// A stimulus timeline with all randomness frozen. `initial_target` is
/// the dot position before the first event, needed to interpolate a
/// leading smooth move.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSchedule {
    pub events: Vec<ResolvedEvent>,
    pub initial_target: (f64, f64),
    pub seed: u64,
}

impl ResolvedSchedule {
    pub fn duration_us(&self) -> u64 {
        self.events.last().map(|e| e.t_end_us).unwrap_or(0)
    }

    /// Target position at an arbitrary time, interpolating smooth moves.
    pub fn target_at(&self, t_us: f64) -> (f64, f64) {
        let mut prev_target = self.initial_target;
        for ev in &self.events {
            if t_us < ev.t_start_us as f64 {
                return prev_target;
            }
            if t_us < ev.t_end_us as f64 {
                if ev.kind == EventKind::SmoothMove {
                    let frac = (t_us - ev.t_start_us as f64)
                        / (ev.t_end_us - ev.t_start_us).max(1) as f64;
                    return (
                        prev_target.0 + frac * (ev.target_deg.0 - prev_target.0),
                        prev_target.1 + frac * (ev.target_deg.1 - prev_target.1),
                    );
                }
                return ev.target_deg;
            }
            prev_target = ev.target_deg;
        }
        prev_target
    }
}

fn parse_doc(text: &str) -> Result<roxmltree::Document<'_>, StimError> {
    roxmltree::Document::parse(text).map_err(|e| {
        let pos = e.pos();
        StimError::Parse { line: pos.row, col: pos.col, msg: e.to_string() }
    })
}

fn attr_f64(node: &roxmltree::Node, name: &str) -> Result<f64, StimError> {
    let tag = node.tag_name().name();
    node.attribute(name)
        .ok_or_else(|| schema_err(tag, Some(name), "missing attribute"))?
        .parse()
        .map_err(|_| schema_err(tag, Some(name), "not a number"))
}

fn attr_u64(node: &roxmltree::Node, name: &str) -> Result<u64, StimError> {
    let tag = node.tag_name().name();
    node.attribute(name)
        .ok_or_else(|| schema_err(tag, Some(name), "missing attribute"))?
        .parse()
        .map_err(|_| schema_err(tag, Some(name), "not an integer"))
}

/// Parses an authored stimulus program document.
pub fn parse_program(text: &str) -> Result<StimulusProgram, StimError> {
    let doc = parse_doc(text)?;
    let root = doc.root_element();
    if root.tag_name().name() != "stimulus" {
        return Err(schema_err(root.tag_name().name(), None, "root element must be <stimulus>"));
    }
    if root.attribute("version") != Some("1") {
        return Err(schema_err("stimulus", Some("version"), "unsupported or missing version"));
    }
    let background_intensity = root
        .attribute("background")
        .map(|s| s.parse().map_err(|_| schema_err("stimulus", Some("background"), "not 0-255")))
        .transpose()?
        .unwrap_or(192);
    let dot_intensity = root
        .attribute("dot")
        .map(|s| s.parse().map_err(|_| schema_err("stimulus", Some("dot"), "not 0-255")))
        .transpose()?
        .unwrap_or(0);

    let mut commands = Vec::new();
    for node in root.children().filter(|n| n.is_element()) {
        let tag = node.tag_name().name();
        let cmd = match tag {
            "dot_show" => {
                let diameter = attr_f64(&node, "diameter")?;
                if diameter <= 0.0 {
                    return Err(schema_err(tag, Some("diameter"), "must be positive"));
                }
                Command::DotShow {
                    position: (attr_f64(&node, "x")?, attr_f64(&node, "y")?),
                    diameter,
                }
            }
            "fixate" => {
                let dwell_min = attr_f64(&node, "min")?;
                let dwell_max = attr_f64(&node, "max")?;
                if dwell_min < 0.0 {
                    return Err(schema_err(tag, Some("min"), "must be non-negative"));
                }
                if dwell_min > dwell_max {
                    return Err(schema_err(tag, Some("max"), "dwell_min exceeds dwell_max"));
                }
                Command::Fixate { dwell_min, dwell_max }
            }
            "jump" => Command::Jump { to: (attr_f64(&node, "x")?, attr_f64(&node, "y")?) },
            "smooth_move" => {
                let velocity = attr_f64(&node, "velocity")?;
                if velocity <= 0.0 {
                    return Err(schema_err(tag, Some("velocity"), "must be positive"));
                }
                Command::SmoothMove {
                    to: (attr_f64(&node, "x")?, attr_f64(&node, "y")?),
                    velocity,
                }
            }
            "shrink" => {
                let to_diameter = attr_f64(&node, "diameter")?;
                let over = attr_f64(&node, "over")?;
                if to_diameter <= 0.0 {
                    return Err(schema_err(tag, Some("diameter"), "must be positive"));
                }
                if over <= 0.0 {
                    return Err(schema_err(tag, Some("over"), "must be positive"));
                }
                Command::Shrink { to_diameter, over }
            }
            "image" | "video" => {
                let path = node
                    .attribute("path")
                    .ok_or_else(|| schema_err(tag, Some("path"), "missing attribute"))?
                    .to_string();
                let duration = attr_f64(&node, "duration")?;
                if duration <= 0.0 {
                    return Err(schema_err(tag, Some("duration"), "must be positive"));
                }
                if tag == "image" {
                    Command::Image { path, duration }
                } else {
                    Command::Video { path, duration }
                }
            }
            other => return Err(schema_err(other, None, "unknown element")),
        };
        commands.push(cmd);
    }
    Ok(StimulusProgram { background_intensity, dot_intensity, commands })
}

const SECONDS_TO_US: f64 = 1e6;

/// Resolves a program into a fixed timeline: random dwells are sampled
/// uniformly from their declared intervals with the seeded generator,
/// smooth-move durations follow from distance/velocity, and every event
/// boundary is rounded to whole microseconds.
pub fn resolve(program: &StimulusProgram, seed: u64) -> Result<ResolvedSchedule, StimError> {
    let limits = ScreenGeometry::default().half_extent_deg();
    let mut rng = Rng::new(seed);
    let mut events = Vec::new();
    let mut target = (0.0, 0.0);
    let mut initial_target: Option<(f64, f64)> = None;
    let mut cursor = 0.0f64; // microseconds, exact until rounding per event

    let mut push = |cursor: &mut f64, duration_us: f64, target: (f64, f64), kind: EventKind| -> Result<(), StimError> {
        if target.0.abs() > limits.0 || target.1.abs() > limits.1 {
            return Err(schema_err(
                kind.as_str(),
                None,
                format!(
                    "target ({}, {}) deg is outside the screen (±{:.2}, ±{:.2})",
                    target.0, target.1, limits.0, limits.1
                ),
            ));
        }
        let t_start = cursor.round() as u64;
        *cursor += duration_us;
        let t_end = cursor.round() as u64;
        events.push(ResolvedEvent { t_start_us: t_start, t_end_us: t_end.max(t_start + 1), target_deg: target, kind });
        Ok(())
    };

    for cmd in &program.commands {
        match cmd {
            Command::DotShow { position, .. } => target = *position,
            Command::Jump { to } => target = *to,
            Command::Fixate { dwell_min, dwell_max } => {
                let dwell = if dwell_min == dwell_max {
                    *dwell_min
                } else {
                    rng.uniform_range(*dwell_min, *dwell_max)
                };
                initial_target.get_or_insert(target);
                push(&mut cursor, dwell * SECONDS_TO_US, target, EventKind::Fixation)?;
            }
            Command::SmoothMove { to, velocity } => {
                let dist = ((to.0 - target.0).powi(2) + (to.1 - target.1).powi(2)).sqrt();
                initial_target.get_or_insert(target);
                target = *to;
                push(&mut cursor, dist / velocity * SECONDS_TO_US, target, EventKind::SmoothMove)?;
            }
            Command::Shrink { over, .. } => {
                initial_target.get_or_insert(target);
                push(&mut cursor, over * SECONDS_TO_US, target, EventKind::Shrink)?;
            }
            Command::Image { duration, .. } => {
                initial_target.get_or_insert(target);
                push(&mut cursor, duration * SECONDS_TO_US, target, EventKind::Image)?;
            }
            Command::Video { duration, .. } => {
                initial_target.get_or_insert(target);
                push(&mut cursor, duration * SECONDS_TO_US, target, EventKind::Video)?;
            }
        }
    }
    Ok(ResolvedSchedule { events, initial_target: initial_target.unwrap_or(target), seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Horizontal,
    Vertical,
}

impl Axis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Axis::Horizontal => "horizontal",
            Axis::Vertical => "vertical",
        }
    }

    fn point(&self, along: f64) -> (f64, f64) {
        match self {
            Axis::Horizontal => (along, 0.0),
            Axis::Vertical => (0.0, along),
        }
    }
}

/// Builds the amplitude-grid protocol: for each amplitude the dot jumps
/// symmetrically about the screen center along one axis, with a random
/// dwell after every jump.
pub fn saccade_grid(
    axis: Axis,
    amp_min: f64,
    amp_max: f64,
    step: f64,
    dwell: (f64, f64),
    dot_diameter: f64,
) -> StimulusProgram {
    let mut commands = vec![
        Command::DotShow { position: (0.0, 0.0), diameter: dot_diameter },
        Command::Fixate { dwell_min: dwell.0, dwell_max: dwell.1 },
    ];
    let mut amp = amp_min;
    while amp <= amp_max + 1e-9 {
        // saccade of size `amp`: center -> -amp/2 -> +amp/2 -> center
        for along in [-amp / 2.0, amp / 2.0, 0.0] {
            commands.push(Command::Jump { to: axis.point(along) });
            commands.push(Command::Fixate { dwell_min: dwell.0, dwell_max: dwell.1 });
        }
        amp += step;
    }
    StimulusProgram { background_intensity: 192, dot_intensity: 0, commands }
}

/// Serializes a resolved schedule in canonical form: emit -> parse -> emit
/// is byte-identical.
pub fn emit_resolved(schedule: &ResolvedSchedule) -> String {
    let mut out = String::new();
    writeln!(
        out,
        r#"<resolved_schedule version="1" seed="{}" x0_deg="{}" y0_deg="{}">"#,
        schedule.seed, schedule.initial_target.0, schedule.initial_target.1
    )
    .unwrap();
    for ev in &schedule.events {
        writeln!(
            out,
            r#"  <event kind="{}" t_start_us="{}" t_end_us="{}" x_deg="{}" y_deg="{}"/>"#,
            ev.kind.as_str(),
            ev.t_start_us,
            ev.t_end_us,
            ev.target_deg.0,
            ev.target_deg.1
        )
        .unwrap();
    }
    out.push_str("</resolved_schedule>\n");
    out
}

/// Parses a resolved-schedule document back into memory.
pub fn parse_resolved(text: &str) -> Result<ResolvedSchedule, StimError> {
    let doc = parse_doc(text)?;
    let root = doc.root_element();
    if root.tag_name().name() != "resolved_schedule" {
        return Err(schema_err(root.tag_name().name(), None, "root must be <resolved_schedule>"));
    }
    if root.attribute("version") != Some("1") {
        return Err(schema_err("resolved_schedule", Some("version"), "unsupported or missing version"));
    }
    let seed = root
        .attribute("seed")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| schema_err("resolved_schedule", Some("seed"), "missing or invalid"))?;
    let initial_target = (
        root.attribute("x0_deg").map(|s| s.parse().map_err(|_| schema_err("resolved_schedule", Some("x0_deg"), "not a number"))).transpose()?.unwrap_or(0.0),
        root.attribute("y0_deg").map(|s| s.parse().map_err(|_| schema_err("resolved_schedule", Some("y0_deg"), "not a number"))).transpose()?.unwrap_or(0.0),
    );
    let mut events = Vec::new();
    let mut last_start: Option<u64> = None;
    for node in root.children().filter(|n| n.is_element()) {
        if node.tag_name().name() != "event" {
            return Err(schema_err(node.tag_name().name(), None, "unknown element"));
        }
        let kind_str = node
            .attribute("kind")
            .ok_or_else(|| schema_err("event", Some("kind"), "missing attribute"))?;
        let kind = EventKind::from_str(kind_str)
            .ok_or_else(|| schema_err("event", Some("kind"), format!("unknown kind {kind_str}")))?;
        let ev = ResolvedEvent {
            t_start_us: attr_u64(&node, "t_start_us")?,
            t_end_us: attr_u64(&node, "t_end_us")?,
            target_deg: (attr_f64(&node, "x_deg")?, attr_f64(&node, "y_deg")?),
            kind,
        };
        if ev.t_end_us <= ev.t_start_us {
            return Err(schema_err("event", Some("t_end_us"), "interval must be non-empty"));
        }
        if let Some(prev) = last_start {
            if ev.t_start_us <= prev {
                return Err(schema_err("event", Some("t_start_us"), "must be strictly increasing"));
            }
        }
        last_start = Some(ev.t_start_us);
        events.push(ev);
    }
    Ok(ResolvedSchedule { events, initial_target, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"<stimulus version="1">
        <dot_show x="0" y="0" diameter="0.67"/>
        <fixate min="1" max="2"/>
    </stimulus>"#;

    #[test]
    fn minimal_program_parses() {
        let p = parse_program(MINIMAL).unwrap();
        assert_eq!(p.commands.len(), 2);
        assert!(matches!(p.commands[1], Command::Fixate { dwell_min, dwell_max }
            if dwell_min == 1.0 && dwell_max == 2.0));
    }

    #[test]
    fn inverted_dwell_is_schema_error() {
        let doc = r#"<stimulus version="1"><fixate min="2" max="1"/></stimulus>"#;
        assert!(matches!(parse_program(doc), Err(StimError::Schema { .. })));
    }

    #[test]
    fn truncated_document_is_parse_error() {
        let doc = &MINIMAL[..40];
        assert!(matches!(parse_program(doc), Err(StimError::Parse { .. })));
    }

    #[test]
    fn unknown_element_rejected() {
        let doc = r#"<stimulus version="1"><blink/></stimulus>"#;
        match parse_program(doc) {
            Err(StimError::Schema { element, .. }) => assert_eq!(element, "blink"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn dwells_stay_in_declared_interval() {
        let mut commands = vec![Command::DotShow { position: (0.0, 0.0), diameter: 0.67 }];
        for _ in 0..100 {
            commands.push(Command::Fixate { dwell_min: 1.0, dwell_max: 2.0 });
        }
        let program = StimulusProgram { background_intensity: 192, dot_intensity: 0, commands };
        let sched = resolve(&program, 11).unwrap();
        assert_eq!(sched.events.len(), 100);
        let mut sum = 0.0;
        for ev in &sched.events {
            let dwell = (ev.t_end_us - ev.t_start_us) as f64 / 1e6;
            assert!((1.0..=2.0).contains(&dwell), "dwell {dwell}");
            sum += dwell;
        }
        let mean = sum / 100.0;
        assert!((1.4..=1.6).contains(&mean), "mean dwell {mean}");
    }

    #[test]
    fn degenerate_dwell_is_exact() {
        let program = StimulusProgram {
            background_intensity: 192,
            dot_intensity: 0,
            commands: vec![Command::Fixate { dwell_min: 1.5, dwell_max: 1.5 }],
        };
        let sched = resolve(&program, 5).unwrap();
        assert_eq!(sched.events[0].t_end_us - sched.events[0].t_start_us, 1_500_000);
    }

    #[test]
    fn resolve_is_deterministic() {
        let p = saccade_grid(Axis::Horizontal, 2.5, 40.0, 2.5, (1.0, 2.0), 0.67);
        assert_eq!(resolve(&p, 99).unwrap(), resolve(&p, 99).unwrap());
        assert_ne!(resolve(&p, 99).unwrap(), resolve(&p, 100).unwrap());
    }

    #[test]
    fn horizontal_grid_has_16_amplitudes() {
        let p = saccade_grid(Axis::Horizontal, 2.5, 40.0, 2.5, (1.0, 2.0), 0.67);
        let mut amps: Vec<i64> = Vec::new();
        for c in &p.commands {
            if let Command::Jump { to } = c {
                let a = (to.0.abs() * 2.0 * 10.0).round() as i64;
                if a != 0 && !amps.contains(&a) {
                    amps.push(a);
                }
            }
        }
        assert_eq!(amps.len(), 16);
    }

    #[test]
    fn vertical_grid_has_12_amplitudes() {
        let p = saccade_grid(Axis::Vertical, 2.5, 30.0, 2.5, (1.0, 2.0), 0.67);
        let mut amps: Vec<i64> = Vec::new();
        for c in &p.commands {
            if let Command::Jump { to } = c {
                let a = (to.1.abs() * 2.0 * 10.0).round() as i64;
                if a != 0 && !amps.contains(&a) {
                    amps.push(a);
                }
            }
        }
        assert_eq!(amps.len(), 12);
    }

    #[test]
    fn single_amplitude_grid() {
        let p = saccade_grid(Axis::Horizontal, 10.0, 10.0, 2.5, (1.0, 2.0), 0.67);
        let jumps: Vec<_> = p
            .commands
            .iter()
            .filter_map(|c| match c {
                Command::Jump { to } => Some(*to),
                _ => None,
            })
            .collect();
        assert_eq!(jumps, vec![(-5.0, 0.0), (5.0, 0.0), (0.0, 0.0)]);
    }

    #[test]
    fn out_of_range_target_rejected_at_resolve() {
        // 50 deg half-amplitude is beyond the 374 mm screen at 500 mm
        let program = StimulusProgram {
            background_intensity: 192,
            dot_intensity: 0,
            commands: vec![
                Command::Jump { to: (25.0, 0.0) },
                Command::Fixate { dwell_min: 1.0, dwell_max: 1.0 },
            ],
        };
        assert!(matches!(resolve(&program, 1), Err(StimError::Schema { .. })));
    }

    #[test]
    fn schedule_is_contiguous() {
        let p = saccade_grid(Axis::Horizontal, 2.5, 40.0, 2.5, (1.0, 2.0), 0.67);
        let sched = resolve(&p, 7).unwrap();
        for pair in sched.events.windows(2) {
            assert_eq!(pair[0].t_end_us, pair[1].t_start_us);
        }
    }

    #[test]
    fn emit_parse_emit_is_byte_identical() {
        let p = saccade_grid(Axis::Horizontal, 2.5, 10.0, 2.5, (1.0, 2.0), 0.67);
        let sched = resolve(&p, 21).unwrap();
        let first = emit_resolved(&sched);
        let parsed = parse_resolved(&first).unwrap();
        assert_eq!(parsed, sched);
        assert_eq!(emit_resolved(&parsed), first);
    }

    #[test]
    fn empty_schedule_roundtrips() {
        let sched = ResolvedSchedule { events: vec![], initial_target: (0.0, 0.0), seed: 0 };
        let doc = emit_resolved(&sched);
        assert_eq!(parse_resolved(&doc).unwrap(), sched);
    }

    #[test]
    fn microsecond_units_in_emitted_document() {
        let sched = ResolvedSchedule {
            events: vec![ResolvedEvent {
                t_start_us: 0,
                t_end_us: 1_500_000,
                target_deg: (0.0, 0.0),
                kind: EventKind::Fixation,
            }],
            initial_target: (0.0, 0.0),
            seed: 4,
        };
        let doc = emit_resolved(&sched);
        assert!(doc.contains(r#"t_start_us="0""#));
        assert!(doc.contains(r#"t_end_us="1500000""#));
    }

    #[test]
    fn smooth_move_duration_from_velocity() {
        let program = StimulusProgram {
            background_intensity: 192,
            dot_intensity: 0,
            commands: vec![
                Command::DotShow { position: (0.0, 0.0), diameter: 0.67 },
                Command::SmoothMove { to: (10.0, 0.0), velocity: 5.0 },
            ],
        };
        let sched = resolve(&program, 1).unwrap();
        assert_eq!(sched.events[0].t_end_us - sched.events[0].t_start_us, 2_000_000);
        // halfway through the move the interpolated target is at 5 deg
        let mid = sched.target_at(1_000_000.0);
        assert!((mid.0 - 5.0).abs() < 1e-6);
    }
}
