//! Session persistence and batch reprocessing.
//!
//! Frames live in segmented binary containers: each `seg_NNNN.vframes`
//! file is a concatenation of `[u32-le payload length][payload]` records
//! where the payload is a binary (P5) PGM image. Every frame is
//! independently decodable; `manifest.csv` maps frame indices to
//! (segment, byte offset, timestamp). Segments are split at a size limit
//! (4 GiB by default) and replayed seamlessly across boundaries.
//!
//! The record path runs one producer and one consumer over a bounded
//! blocking queue: when the buffer is full the producer waits, so no
//! frame is ever dropped.

use std::collections::VecDeque;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};

use thiserror::Error;

use crate::features::{detect_all, Frame, P4Params};
use crate::gaze::{apply_calibration, difference_vectors, CalibrationModel, DifferenceVector, GazeSample, Source};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt segment {segment}: {msg}")]
    CorruptSegment { segment: String, msg: String },
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("malformed file: {0}")]
    Format(String),
}

pub const DEFAULT_SEGMENT_LIMIT: u64 = 4 * 1024 * 1024 * 1024;

fn segment_name(id: u32) -> String {
    format!("seg_{id:04}.vframes")
}

fn encode_pgm(frame: &Frame) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", frame.width, frame.height);
    let mut out = Vec::with_capacity(header.len() + frame.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&frame.pixels);
    out
}

fn decode_pgm(bytes: &[u8], segment: &str) -> Result<(u32, u32, Vec<u8>), StoreError> {
    let corrupt = |msg: &str| StoreError::CorruptSegment { segment: segment.to_string(), msg: msg.to_string() };
    // header: "P5\n{w} {h}\n255\n"
    let mut fields = Vec::new();
    let mut pos = 0usize;
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(&bytes[start..pos]);
    }
    if fields.len() < 4 || fields[0] != b"P5" {
        return Err(corrupt("bad PGM header"));
    }
    let parse = |f: &[u8]| -> Result<u32, StoreError> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt("bad PGM header field"))
    };
    let width = parse(fields[1])?;
    let height = parse(fields[2])?;
    if parse(fields[3])? != 255 {
        return Err(corrupt("PGM maxval must be 255"));
    }
    pos += 1; // single whitespace byte after maxval
    let expected = (width as usize) * (height as usize);
    if bytes.len() < pos + expected {
        return Err(corrupt("truncated pixel data"));
    }
    Ok((width, height, bytes[pos..pos + expected].to_vec()))
}

#[derive(Debug, Clone, PartialEq)]
struct ManifestEntry {
    frame_index: u64,
    segment: u32,
    offset: u64,
    timestamp_us: f64,
}

/// Writes frames into a segmented container, splitting when the current
/// segment would exceed the size limit.
pub struct FrameStoreWriter {
    dir: PathBuf,
    segment_limit: u64,
    current: Option<BufWriter<File>>,
    current_id: u32,
    current_bytes: u64,
    entries: Vec<ManifestEntry>,
}

impl FrameStoreWriter {
    pub fn create(dir: &Path, segment_limit: u64) -> Result<FrameStoreWriter, StoreError> {
        fs::create_dir_all(dir)?;
        Ok(FrameStoreWriter {
            dir: dir.to_path_buf(),
            segment_limit,
            current: None,
            current_id: 0,
            current_bytes: 0,
            entries: Vec::new(),
        })
    }

    pub fn append(&mut self, frame: &Frame) -> Result<(), StoreError> {
        let payload = encode_pgm(frame);
        let record_len = 4 + payload.len() as u64;
        let need_new = match &self.current {
            None => true,
            Some(_) => self.current_bytes + record_len > self.segment_limit && self.current_bytes > 0,
        };
        if need_new {
            if let Some(mut w) = self.current.take() {
                w.flush()?;
                self.current_id += 1;
            }
            let path = self.dir.join(segment_name(self.current_id));
            self.current = Some(BufWriter::new(File::create(path)?));
            self.current_bytes = 0;
        }
        let w = self.current.as_mut().unwrap();
        self.entries.push(ManifestEntry {
            frame_index: frame.index,
            segment: self.current_id,
            offset: self.current_bytes,
            timestamp_us: frame.timestamp_us,
        });
        w.write_all(&(payload.len() as u32).to_le_bytes())?;
        w.write_all(&payload)?;
        self.current_bytes += record_len;
        Ok(())
    }

    /// Flushes segments and writes the manifest.
    pub fn finish(mut self) -> Result<(), StoreError> {
        if let Some(mut w) = self.current.take() {
            w.flush()?;
        }
        let mut out = String::from("frame_index,segment,offset,timestamp_us\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{},{}\n", e.frame_index, e.segment, e.offset, e.timestamp_us));
        }
        fs::write(self.dir.join("manifest.csv"), out)?;
        Ok(())
    }
}

/// Read view over a persisted session.
pub struct FrameStore {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl FrameStore {
    pub fn open(dir: &Path) -> Result<FrameStore, StoreError> {
        let manifest = fs::read_to_string(dir.join("manifest.csv"))?;
        let mut entries = Vec::new();
        for (lineno, line) in manifest.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(StoreError::Format(format!("manifest line {}: expected 4 columns", lineno + 1)));
            }
            let parse_err = |c: &str| StoreError::Format(format!("manifest line {}: bad {c}", lineno + 1));
            entries.push(ManifestEntry {
                frame_index: cols[0].parse().map_err(|_| parse_err("frame_index"))?,
                segment: cols[1].parse().map_err(|_| parse_err("segment"))?,
                offset: cols[2].parse().map_err(|_| parse_err("offset"))?,
                timestamp_us: cols[3].parse().map_err(|_| parse_err("timestamp_us"))?,
            });
        }
        for (i, e) in entries.iter().enumerate() {
            if e.frame_index != i as u64 {
                return Err(StoreError::ManifestMismatch(format!(
                    "frame indices must be dense from 0; entry {i} has index {}",
                    e.frame_index
                )));
            }
        }
        Ok(FrameStore { dir: dir.to_path_buf(), entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn segment_count(&self) -> usize {
        let mut ids: Vec<u32> = self.entries.iter().map(|e| e.segment).collect();
        ids.dedup();
        ids.len()
    }

    /// Sequential frame reader spanning segment boundaries.
    pub fn frames(&self) -> FrameIter<'_> {
        FrameIter { store: self, next: 0, reader: None, reader_segment: 0, reader_pos: 0 }
    }

    /// Random access to one frame by index.
    pub fn read_frame(&self, index: usize) -> Option<Result<Frame, StoreError>> {
        self.entries.get(index).map(|e| self.read_at(e))
    }

    fn read_at(&self, entry: &ManifestEntry) -> Result<Frame, StoreError> {
        let name = segment_name(entry.segment);
        let path = self.dir.join(&name);
        let mut f = File::open(&path)?;
        let seg_len = f.metadata()?.len();
        if entry.offset + 4 > seg_len {
            return Err(StoreError::ManifestMismatch(format!(
                "frame {} offset {} past end of {name}",
                entry.frame_index, entry.offset
            )));
        }
        f.seek(SeekFrom::Start(entry.offset))?;
        read_record(&mut f, entry, seg_len, &name)
    }
}

fn read_record(
    reader: &mut impl Read,
    entry: &ManifestEntry,
    remaining: u64,
    segment: &str,
) -> Result<Frame, StoreError> {
    let mut len_buf = [0u8; 4];
    reader.read_exact(&mut len_buf)?;
    let payload_len = u32::from_le_bytes(len_buf) as u64;
    if entry.offset + 4 + payload_len > remaining {
        return Err(StoreError::ManifestMismatch(format!(
            "frame {} record extends past end of {segment}",
            entry.frame_index
        )));
    }
    let mut payload = vec![0u8; payload_len as usize];
    reader.read_exact(&mut payload)?;
    let (width, height, pixels) = decode_pgm(&payload, segment)?;
    Ok(Frame::new(width, height, pixels, entry.timestamp_us, entry.frame_index))
}

pub struct FrameIter<'a> {
    store: &'a FrameStore,
    next: usize,
    reader: Option<BufReader<File>>,
    reader_segment: u32,
    reader_pos: u64,
}

impl Iterator for FrameIter<'_> {
    type Item = Result<Frame, StoreError>;

    fn next(&mut self) -> Option<Self::Item> {
        let entry = self.store.entries.get(self.next)?.clone();
        self.next += 1;
        // reuse the open reader while the manifest stays sequential
        let sequential = self
            .reader
            .as_ref()
            .is_some_and(|_| self.reader_segment == entry.segment && self.reader_pos == entry.offset);
        if !sequential {
            let path = self.store.dir.join(segment_name(entry.segment));
            match File::open(&path) {
                Ok(mut f) => {
                    if let Err(e) = f.seek(SeekFrom::Start(entry.offset)) {
                        return Some(Err(e.into()));
                    }
                    self.reader = Some(BufReader::new(f));
                    self.reader_segment = entry.segment;
                    self.reader_pos = entry.offset;
                }
                Err(e) => return Some(Err(e.into())),
            }
        }
        let seg_len = match fs::metadata(self.store.dir.join(segment_name(entry.segment))) {
            Ok(m) => m.len(),
            Err(e) => return Some(Err(e.into())),
        };
        if entry.offset + 4 > seg_len {
            self.reader = None;
            return Some(Err(StoreError::ManifestMismatch(format!(
                "frame {} offset {} past end of {}",
                entry.frame_index,
                entry.offset,
                segment_name(entry.segment)
            ))));
        }
        let reader = self.reader.as_mut().unwrap();
        let result = read_record(reader, &entry, seg_len, &segment_name(entry.segment));
        if let Ok(frame) = &result {
            self.reader_pos = entry.offset
                + 4
                + (format!("P5\n{} {}\n255\n", frame.width, frame.height).len()
                    + frame.pixels.len()) as u64;
        } else {
            self.reader = None;
        }
        Some(result)
    }
}

/// Recording buffer policy. Blocking backpressure is the only policy:
/// a full buffer stalls the producer, it never drops.
#[derive(Debug, Clone, Copy)]
pub struct RecorderConfig {
    pub buffer_capacity: usize,
}

impl Default for RecorderConfig {
    fn default() -> Self {
        RecorderConfig { buffer_capacity: 64 }
    }
}

struct QueueState<T> {
    items: VecDeque<T>,
    closed: bool,
    max_occupancy: usize,
}

/// Single-producer single-consumer bounded blocking queue that tracks
/// its peak occupancy.
pub struct BoundedQueue<T> {
    state: Mutex<QueueState<T>>,
    capacity: usize,
    not_full: Condvar,
    not_empty: Condvar,
}

impl<T> BoundedQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1);
        BoundedQueue {
            state: Mutex::new(QueueState { items: VecDeque::new(), closed: false, max_occupancy: 0 }),
            capacity,
            not_full: Condvar::new(),
            not_empty: Condvar::new(),
        }
    }

    /// Blocks while full. Returns the item back if the queue was closed.
    pub fn push(&self, item: T) -> Result<(), T> {
        let mut st = self.state.lock().unwrap();
        while st.items.len() >= self.capacity && !st.closed {
            st = self.not_full.wait(st).unwrap();
        }
        if st.closed {
            return Err(item);
        }
        st.items.push_back(item);
        st.max_occupancy = st.max_occupancy.max(st.items.len());
        self.not_empty.notify_one();
        Ok(())
    }

    /// Blocks while empty; `None` once closed and drained.
    pub fn pop(&self) -> Option<T> {
        let mut st = self.state.lock().unwrap();
        loop {
            if let Some(item) = st.items.pop_front() {
                self.not_full.notify_one();
                return Some(item);
            }
            if st.closed {
                return None;
            }
            st = self.not_empty.wait(st).unwrap();
        }
    }

    pub fn close(&self) {
        let mut st = self.state.lock().unwrap();
        st.closed = true;
        self.not_full.notify_all();
        self.not_empty.notify_all();
    }

    pub fn max_occupancy(&self) -> usize {
        self.state.lock().unwrap().max_occupancy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordStats {
    pub frames_persisted: usize,
    pub max_buffer_occupancy: usize,
}

/// Drives the record path: the producer iterator runs on its own thread
/// feeding the bounded buffer, the consumer persists every frame in
/// order. Every produced frame is persisted exactly once.
pub fn record<I>(
    producer: I,
    config: &RecorderConfig,
    writer: &mut FrameStoreWriter,
) -> Result<RecordStats, StoreError>
where
    I: Iterator<Item = Frame> + Send,
{
    let queue = BoundedQueue::new(config.buffer_capacity);
    let mut frames_persisted = 0usize;
    let mut write_result: Result<(), StoreError> = Ok(());

    std::thread::scope(|scope| {
        let q = &queue;
        scope.spawn(move || {
            for frame in producer {
                if q.push(frame).is_err() {
                    break;
                }
            }
            q.close();
        });
        while let Some(frame) = queue.pop() {
            if let Err(e) = writer.append(&frame) {
                write_result = Err(e);
                queue.close();
                // drain whatever the producer already queued
                while queue.pop().is_some() {}
                break;
            }
            frames_persisted += 1;
        }
    });

    write_result?;
    Ok(RecordStats { frames_persisted, max_buffer_occupancy: queue.max_occupancy() })
}

/// One processed frame in the sample log. Degree columns are present only
/// when a calibration model was supplied for that signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub frame_index: u64,
    pub timestamp_us: f64,
    pub pupil: Option<(f64, f64, f64)>,
    pub p1: Option<(f64, f64)>,
    pub p4: Option<(f64, f64)>,
    pub vog_deg: Option<(f64, f64)>,
    pub dpi_deg: Option<(f64, f64)>,
    pub vog_valid: bool,
    pub dpi_valid: bool,
    pub failure_reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleLog {
    pub rows: Vec<SampleRow>,
}

impl SampleLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "frame_index,timestamp_us,pupil_x,pupil_y,pupil_r,p1_x,p1_y,p4_x,p4_y,\
             vog_x_deg,vog_y_deg,dpi_x_deg,dpi_y_deg,vog_valid,dpi_valid,failure_reasons\n",
        );
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.frame_index,
                r.timestamp_us,
                opt(r.pupil.map(|p| p.0)),
                opt(r.pupil.map(|p| p.1)),
                opt(r.pupil.map(|p| p.2)),
                opt(r.p1.map(|p| p.0)),
                opt(r.p1.map(|p| p.1)),
                opt(r.p4.map(|p| p.0)),
                opt(r.p4.map(|p| p.1)),
                opt(r.vog_deg.map(|p| p.0)),
                opt(r.vog_deg.map(|p| p.1)),
                opt(r.dpi_deg.map(|p| p.0)),
                opt(r.dpi_deg.map(|p| p.1)),
                r.vog_valid as u8,
                r.dpi_valid as u8,
                r.failure_reasons.join(";"),
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<SampleLog, StoreError> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 16 {
                return Err(StoreError::Format(format!(
                    "sample log line {}: expected 16 columns, got {}",
                    lineno + 1,
                    cols.len()
                )));
            }
            let err = |c: &str| StoreError::Format(format!("sample log line {}: bad {c}", lineno + 1));
            let f = |i: usize, name: &str| -> Result<Option<f64>, StoreError> {
                if cols[i].is_empty() {
                    Ok(None)
                } else {
                    cols[i].parse().map(Some).map_err(|_| err(name))
                }
            };
            let pupil = match (f(2, "pupil_x")?, f(3, "pupil_y")?, f(4, "pupil_r")?) {
                (Some(x), Some(y), Some(r)) => Some((x, y, r)),
                _ => None,
            };
            let pair = |a: Option<f64>, b: Option<f64>| match (a, b) {
                (Some(x), Some(y)) => Some((x, y)),
                _ => None,
            };
            rows.push(SampleRow {
                frame_index: cols[0].parse().map_err(|_| err("frame_index"))?,
                timestamp_us: cols[1].parse().map_err(|_| err("timestamp_us"))?,
                pupil,
                p1: pair(f(5, "p1_x")?, f(6, "p1_y")?),
                p4: pair(f(7, "p4_x")?, f(8, "p4_y")?),
                vog_deg: pair(f(9, "vog_x_deg")?, f(10, "vog_y_deg")?),
                dpi_deg: pair(f(11, "dpi_x_deg")?, f(12, "dpi_y_deg")?),
                vog_valid: cols[13] == "1",
                dpi_valid: cols[14] == "1",
                failure_reasons: if cols[15].is_empty() {
                    vec![]
                } else {
                    cols[15].split(';').map(str::to_string).collect()
                },
            });
        }
        Ok(SampleLog { rows })
    }

    /// Raw difference vector of one row for the given signal, recomputed
    /// from the feature columns.
    pub fn raw_vector(row: &SampleRow, source: Source) -> Option<DifferenceVector> {
        match source {
            Source::Vog => match (row.pupil, row.p1) {
                (Some(p), Some(g)) => {
                    Some(DifferenceVector { dx: p.0 - g.0, dy: p.1 - g.1, source })
                }
                _ => None,
            },
            Source::Dpi => match (row.p1, row.p4) {
                (Some(g), Some(q)) => {
                    Some(DifferenceVector { dx: g.0 - q.0, dy: g.1 - q.1, source })
                }
                _ => None,
            },
        }
    }

    /// Projects the log onto gaze samples for one signal. Degree
    /// coordinates are NaN when no calibration was applied.
    pub fn gaze_samples(&self, source: Source) -> Vec<GazeSample> {
        self.rows
            .iter()
            .map(|r| {
                let raw = Self::raw_vector(r, source)
                    .unwrap_or(DifferenceVector { dx: f64::NAN, dy: f64::NAN, source });
                let (deg, valid) = match source {
                    Source::Vog => (r.vog_deg, r.vog_valid),
                    Source::Dpi => (r.dpi_deg, r.dpi_valid),
                };
                GazeSample {
                    timestamp_us: r.timestamp_us,
                    x_deg: deg.map(|d| d.0).unwrap_or(f64::NAN),
                    y_deg: deg.map(|d| d.1).unwrap_or(f64::NAN),
                    source,
                    valid,
                    raw,
                }
            })
            .collect()
    }
}

/// Reprocesses every stored frame: feature detection, difference vectors,
/// and optional calibration per signal. Deterministic for fixed inputs.
pub fn replay(
    store: &FrameStore,
    pupil_threshold: u8,
    p4_params: &P4Params,
    vog_calibration: Option<&CalibrationModel>,
    dpi_calibration: Option<&CalibrationModel>,
) -> Result<SampleLog, StoreError> {
    let mut rows = Vec::with_capacity(store.len());
    for frame in store.frames() {
        let frame = frame?;
        let features = detect_all(&frame, pupil_threshold, p4_params)
            .map_err(|e| StoreError::Format(e.to_string()))?;
        let (vog, dpi) = difference_vectors(&features);
        rows.push(SampleRow {
            frame_index: frame.index,
            timestamp_us: frame.timestamp_us,
            pupil: features.pupil.map(|p| (p.center.0, p.center.1, p.radius)),
            p1: features.p1.as_ref().map(|b| b.centroid),
            p4: features.p4.as_ref().map(|b| b.centroid),
            vog_deg: vog.and_then(|v| vog_calibration.map(|m| apply_calibration(m, &v))),
            dpi_deg: dpi.and_then(|v| dpi_calibration.map(|m| apply_calibration(m, &v))),
            vog_valid: vog.is_some(),
            dpi_valid: dpi.is_some(),
            failure_reasons: features.failure_reasons.iter().map(|e| format!("{e:?}")).collect(),
        });
    }
    Ok(SampleLog { rows })
}

/// One replay per threshold over the same stored frames.
pub fn threshold_sweep(
    store: &FrameStore,
    thresholds: &[u8],
    p4_params: &P4Params,
) -> Result<Vec<(u8, SampleLog)>, StoreError> {
    thresholds
        .iter()
        .map(|&t| replay(store, t, p4_params, None, None).map(|log| (t, log)))
        .collect()
}
