//! Mobility input: raw GPS fixes from cab datasets, resampling onto
//! three-minute slots, a canonical CSV format, and random-waypoint synthesis.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::topology::{locate_server, GridSpec};

pub const SLOT_SECONDS: f64 = 180.0;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {lineno}: {reason}")]
    MalformedLine { lineno: usize, reason: String },
    #[error("speed range must be positive and ordered, got {0:?}")]
    InvalidSpeed([f64; 2]),
    #[error("format spec needs lat, lon, and a timestamp column")]
    IncompleteFormat,
}

/// One GPS fix as read from a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFix {
    pub vehicle_id: String,
    pub timestamp: f64,
    pub lat: f64,
    pub lon: f64,
}

/// A user's position at the start of each slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotTrace {
    pub id: String,
    pub slots: Vec<(f64, f64)>,
    pub slot_seconds: f64,
}

impl SlotTrace {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// The trace as one fix per slot starting at `t0`.
    pub fn to_fixes(&self, t0: f64) -> Vec<RawFix> {
        self.slots
            .iter()
            .enumerate()
            .map(|(k, &(lat, lon))| RawFix {
                vehicle_id: self.id.clone(),
                timestamp: t0 + k as f64 * self.slot_seconds,
                lat,
                lon,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    Id,
    Lat,
    Lon,
    /// Seconds since the epoch.
    Timestamp,
    /// `YYYY-MM-DD HH:MM:SS[.frac][±TZ]` or RFC 3339.
    DateTime,
    /// `POINT(lat lon)`.
    Point,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatSpec {
    /// Field separator; `None` splits on runs of whitespace.
    pub delimiter: Option<char>,
    pub columns: Vec<Column>,
    /// Vehicle id used when the file has no id column (one file per cab).
    pub vehicle_id: Option<String>,
}

impl FormatSpec {
    /// Whitespace-separated `id lat lon timestamp`.
    pub fn id_lat_lon_ts() -> Self {
        Self {
            delimiter: None,
            columns: vec![Column::Id, Column::Lat, Column::Lon, Column::Timestamp],
            vehicle_id: None,
        }
    }

    /// Rome taxi dump: `id;YYYY-MM-DD HH:MM:SS.ffffff+TZ;POINT(lat lon)`.
    pub fn rome() -> Self {
        Self {
            delimiter: Some(';'),
            columns: vec![Column::Id, Column::DateTime, Column::Point],
            vehicle_id: None,
        }
    }

    /// San Francisco cabspotting file: `lat lon occupancy timestamp`, one file per cab.
    pub fn san_francisco(vehicle_id: impl Into<String>) -> Self {
        Self {
            delimiter: None,
            columns: vec![Column::Lat, Column::Lon, Column::Skip, Column::Timestamp],
            vehicle_id: Some(vehicle_id.into()),
        }
    }

    fn validate(&self) -> Result<(), TraceError> {
        let has = |c: Column| self.columns.contains(&c);
        let position = has(Column::Point) || (has(Column::Lat) && has(Column::Lon));
        let time = has(Column::Timestamp) || has(Column::DateTime);
        if position && time {
            Ok(())
        } else {
            Err(TraceError::IncompleteFormat)
        }
    }
}

/// Line-level problem found while parsing; the line is skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalformedLine {
    pub lineno: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedTrace {
    pub fixes: Vec<RawFix>,
    pub malformed: Vec<MalformedLine>,
}

fn parse_number(field: &str, what: &str) -> Result<f64, String> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| format!("{what} {field:?} is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{what} {field:?} is not finite"))
    }
}

fn parse_datetime(field: &str) -> Result<f64, String> {
    let s = field.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp_micros() as f64 / 1e6);
    }
    if let Ok(dt) = DateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f%#z") {
        return Ok(dt.timestamp_micros() as f64 / 1e6);
    }
    if let Ok(dt) = NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f") {
        return Ok(dt.and_utc().timestamp_micros() as f64 / 1e6);
    }
    Err(format!("unrecognized date-time {s:?}"))
}

fn parse_point(field: &str) -> Result<(f64, f64), String> {
    let s = field.trim();
    let inner = s
        .strip_prefix("POINT(")
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| format!("expected POINT(lat lon), got {s:?}"))?;
    let mut parts = inner.split_whitespace();
    let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(format!("expected two coordinates in {s:?}"));
    };
    Ok((parse_number(a, "lat")?, parse_number(b, "lon")?))
}

fn parse_line(line: &str, spec: &FormatSpec) -> Result<RawFix, String> {
    let fields: Vec<&str> = match spec.delimiter {
        Some(d) => line.split(d).collect(),
        None => line.split_whitespace().collect(),
    };
    if fields.len() < spec.columns.len() {
        return Err(format!(
            "expected {} fields, found {}",
            spec.columns.len(),
            fields.len()
        ));
    }
    let mut id = spec.vehicle_id.clone();
    let (mut lat, mut lon, mut ts) = (None, None, None);
    for (col, field) in spec.columns.iter().zip(&fields) {
        match col {
            Column::Id => id = Some(field.trim().to_string()),
            Column::Lat => lat = Some(parse_number(field, "lat")?),
            Column::Lon => lon = Some(parse_number(field, "lon")?),
            Column::Timestamp => ts = Some(parse_number(field, "timestamp")?),
            Column::DateTime => ts = Some(parse_datetime(field)?),
            Column::Point => {
                let (a, b) = parse_point(field)?;
                lat = Some(a);
                lon = Some(b);
            }
            Column::Skip => {}
        }
    }
    match (id, lat, lon, ts) {
        (Some(vehicle_id), Some(lat), Some(lon), Some(timestamp)) if !vehicle_id.is_empty() => Ok(RawFix {
            vehicle_id,
            timestamp,
            lat,
            lon,
        }),
        _ => Err("missing vehicle id".to_string()),
    }
}

/// Parses fixes from any reader, collecting malformed lines instead of failing.
pub fn parse_trace_reader<R: Read>(reader: R, spec: &FormatSpec) -> Result<ParsedTrace, TraceError> {
    spec.validate()?;
    let mut out = ParsedTrace::default();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line, spec) {
            Ok(fix) => out.fixes.push(fix),
            Err(reason) => out.malformed.push(MalformedLine { lineno: i + 1, reason }),
        }
    }
    Ok(out)
}

pub fn parse_trace_file(path: impl AsRef<Path>, spec: &FormatSpec) -> Result<ParsedTrace, TraceError> {
    parse_trace_reader(File::open(path)?, spec)
}

/// Summary of an ingestion run, written next to the canonical CSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub fixes: usize,
    pub malformed_lines: usize,
    pub vehicles: usize,
    pub vehicles_skipped: usize,
    pub traces: usize,
    pub malformed: Vec<MalformedLine>,
}

fn nearest_fix(fixes: &[&RawFix], at: f64, window: f64) -> Option<usize> {
    let idx = fixes.partition_point(|f| f.timestamp < at);
    let mut best: Option<(usize, f64)> = None;
    for k in [idx.checked_sub(1), Some(idx)].into_iter().flatten() {
        if let Some(f) = fixes.get(k) {
            let gap = (f.timestamp - at).abs();
            if gap <= window && best.is_none_or(|(_, g)| gap < g) {
                best = Some((k, gap));
            }
        }
    }
    best.map(|(k, _)| k)
}

fn split_runs(positions: Vec<Option<(f64, f64)>>) -> Vec<Vec<(f64, f64)>> {
    let mut runs = Vec::new();
    let mut current: Vec<(f64, f64)> = Vec::new();
    let n = positions.len();
    for k in 0..n {
        match positions[k] {
            Some(p) => current.push(p),
            None => {
                let prev = if k > 0 { positions[k - 1] } else { None };
                let next = positions.get(k + 1).copied().flatten();
                match (prev, next) {
                    (Some(a), Some(b)) if !current.is_empty() => {
                        current.push(((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0));
                    }
                    _ => {
                        if !current.is_empty() {
                            runs.push(std::mem::take(&mut current));
                        }
                    }
                }
            }
        }
    }
    if !current.is_empty() {
        runs.push(current);
    }
    runs
}

/// Turns raw fixes into slot traces of at least `horizon` slots.
///
/// Slot `k` of a vehicle starts `k · slot_seconds` after its first fix and takes
/// the position of the nearest fix within half a slot. Slots without a fix, or
/// whose fix lies outside the grid, are gaps: a single-slot gap is filled by
/// linear interpolation between its neighbours, longer gaps split the run.
/// Each run of at least `horizon` slots becomes one trace; the first keeps the
/// vehicle id, later ones get a `.k` suffix.
pub fn resample_to_slots(
    fixes: &[RawFix],
    grid: &GridSpec,
    horizon: usize,
    slot_seconds: f64,
) -> (Vec<SlotTrace>, IngestReport) {
    let mut by_vehicle: BTreeMap<&str, Vec<&RawFix>> = BTreeMap::new();
    for f in fixes {
        by_vehicle.entry(f.vehicle_id.as_str()).or_default().push(f);
    }
    let mut report = IngestReport {
        fixes: fixes.len(),
        vehicles: by_vehicle.len(),
        ..IngestReport::default()
    };
    let mut traces = Vec::new();
    for (vehicle, mut vfixes) in by_vehicle {
        vfixes.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        let t0 = vfixes[0].timestamp;
        let span = vfixes[vfixes.len() - 1].timestamp - t0;
        let n_slots = (span / slot_seconds).floor() as usize + 1;
        let positions: Vec<Option<(f64, f64)>> = (0..n_slots)
            .map(|k| {
                let at = t0 + k as f64 * slot_seconds;
                nearest_fix(&vfixes, at, slot_seconds / 2.0)
                    .map(|i| (vfixes[i].lat, vfixes[i].lon))
                    .filter(|&(lat, lon)| grid.contains(lat, lon))
            })
            .collect();
        let mut emitted = 0;
        for run in split_runs(positions) {
            if run.len() < horizon {
                continue;
            }
            let id = if emitted == 0 {
                vehicle.to_string()
            } else {
                format!("{vehicle}.{emitted}")
            };
            traces.push(SlotTrace {
                id,
                slots: run,
                slot_seconds,
            });
            emitted += 1;
        }
        if emitted == 0 {
            report.vehicles_skipped += 1;
        }
    }
    report.traces = traces.len();
    (traces, report)
}

/// Random-waypoint walk inside the grid box, `speed_range` in km per slot.
pub fn synth_trace(
    seed: u64,
    grid: &GridSpec,
    horizon: usize,
    speed_range: [f64; 2],
) -> Result<SlotTrace, TraceError> {
    let [lo, hi] = speed_range;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(TraceError::InvalidSpeed(speed_range));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (width, height) = grid.extent_km();
    let pick = |rng: &mut ChaCha8Rng| (rng.random::<f64>() * width, rng.random::<f64>() * height);
    let mut pos = pick(&mut rng);
    let mut waypoint = pick(&mut rng);
    let mut speed = lo + (hi - lo) * rng.random::<f64>();
    let to_latlon = |(x, y): (f64, f64)| {
        let lat = grid.lat_min + (y / height).clamp(0.0, 1.0) * (grid.lat_max - grid.lat_min);
        let lon = grid.lon_min + (x / width).clamp(0.0, 1.0) * (grid.lon_max - grid.lon_min);
        (lat.clamp(grid.lat_min, grid.lat_max), lon.clamp(grid.lon_min, grid.lon_max))
    };
    let mut slots = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        slots.push(to_latlon(pos));
        let (dx, dy) = (waypoint.0 - pos.0, waypoint.1 - pos.1);
        let dist = dx.hypot(dy);
        if dist <= speed {
            pos = waypoint;
            waypoint = pick(&mut rng);
            speed = lo + (hi - lo) * rng.random::<f64>();
        } else {
            pos = (pos.0 + dx / dist * speed, pos.1 + dy / dist * speed);
        }
    }
    Ok(SlotTrace {
        id: format!("synthetic-{seed}"),
        slots,
        slot_seconds: SLOT_SECONDS,
    })
}

/// Writes traces as `id,slot,lat,lon` rows.
pub fn write_slot_traces<W: Write>(writer: W, traces: &[SlotTrace]) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "slot", "lat", "lon"])?;
    for t in traces {
        for (k, (lat, lon)) in t.slots.iter().enumerate() {
            w.write_record([t.id.clone(), k.to_string(), lat.to_string(), lon.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_slot_traces(path: impl AsRef<Path>, traces: &[SlotTrace]) -> Result<(), TraceError> {
    write_slot_traces(File::create(path)?, traces)
}

#[derive(Deserialize)]
struct TraceRow {
    id: String,
    slot: usize,
    lat: f64,
    lon: f64,
}

/// Reads the canonical CSV. Rows of one trace must be contiguous with slots 0, 1, 2, ...
pub fn read_slot_traces<R: Read>(reader: R) -> Result<Vec<SlotTrace>, TraceError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut traces: Vec<SlotTrace> = Vec::new();
    for (i, row) in rdr.deserialize::<TraceRow>().enumerate() {
        let row = row?;
        let lineno = i + 2;
        let starts_new = traces.last().is_none_or(|t| t.id != row.id);
        if starts_new {
            if row.slot != 0 {
                return Err(TraceError::MalformedLine {
                    lineno,
                    reason: format!("trace {} starts at slot {}", row.id, row.slot),
                });
            }
            traces.push(SlotTrace {
                id: row.id,
                slots: Vec::new(),
                slot_seconds: SLOT_SECONDS,
            });
        }
        let t = traces.last_mut().expect("pushed above");
        if row.slot != t.slots.len() {
            return Err(TraceError::MalformedLine {
                lineno,
                reason: format!("trace {} expected slot {}, found {}", t.id, t.slots.len(), row.slot),
            });
        }
        t.slots.push((row.lat, row.lon));
    }
    Ok(traces)
}

pub fn load_slot_traces(path: impl AsRef<Path>) -> Result<Vec<SlotTrace>, TraceError> {
    read_slot_traces(File::open(path)?)
}

fn id_hash(id: &str) -> [u8; 32] {
    Sha256::digest(id.as_bytes()).into()
}

/// Deterministic train/test split: traces sorted by the SHA-256 of their id,
/// the first `n_train` for training and the next `n_test` for testing.
pub fn split_train_test(traces: &[SlotTrace], n_train: usize, n_test: usize) -> (Vec<SlotTrace>, Vec<SlotTrace>) {
    let mut order: Vec<&SlotTrace> = traces.iter().collect();
    order.sort_by_cached_key(|t| (id_hash(&t.id), t.id.clone()));
    let train = order.iter().take(n_train).map(|t| (*t).clone()).collect();
    let test = order.iter().skip(n_train).take(n_test).map(|t| (*t).clone()).collect();
    (train, test)
}

/// Checks that every point of a trace lies in the grid.
pub fn trace_in_grid(trace: &SlotTrace, grid: &GridSpec) -> bool {
    trace
        .slots
        .iter()
        .all(|&(lat, lon)| locate_server(lat, lon, grid).is_ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_id_lat_lon_ts_line() {
        let parsed = parse_trace_reader("abc 41.90 12.48 1392000000\n".as_bytes(), &FormatSpec::id_lat_lon_ts()).unwrap();
        assert_eq!(
            parsed.fixes,
            vec![RawFix {
                vehicle_id: "abc".into(),
                timestamp: 1_392_000_000.0,
                lat: 41.90,
                lon: 12.48
            }]
        );
        assert!(parsed.malformed.is_empty());
    }

    #[test]
    fn empty_input_gives_no_fixes() {
        let parsed = parse_trace_reader("".as_bytes(), &FormatSpec::id_lat_lon_ts()).unwrap();
        assert!(parsed.fixes.is_empty());
    }

    #[test]
    fn non_numeric_lat_is_reported() {
        let text = "a 41.9 12.4 10\nb north 12.4 11\nc 41.8 12.5 12\n";
        let parsed = parse_trace_reader(text.as_bytes(), &FormatSpec::id_lat_lon_ts()).unwrap();
        assert_eq!(parsed.fixes.len(), 2);
        assert_eq!(parsed.malformed.len(), 1);
        assert_eq!(parsed.malformed[0].lineno, 2);
    }

    #[test]
    fn parses_rome_and_sf_lines() {
        let rome = "156;2014-02-01 00:00:00.739166+01;POINT(41.8836718276551 12.4877775603346)\n";
        let parsed = parse_trace_reader(rome.as_bytes(), &FormatSpec::rome()).unwrap();
        let fix = &parsed.fixes[0];
        assert_eq!(fix.vehicle_id, "156");
        assert!((fix.lat - 41.8836718276551).abs() < 1e-12);
        // 2014-01-31T23:00:00.739166Z
        assert!((fix.timestamp - 1_391_209_200.739_166).abs() < 1e-6);

        let sf = "37.75134 -122.39488 0 1213084687\n";
        let parsed = parse_trace_reader(sf.as_bytes(), &FormatSpec::san_francisco("abboip")).unwrap();
        assert_eq!(parsed.fixes[0].vehicle_id, "abboip");
        assert_eq!(parsed.fixes[0].timestamp, 1_213_084_687.0);
    }

    #[test]
    fn incomplete_format_rejected() {
        let spec = FormatSpec {
            delimiter: None,
            columns: vec![Column::Id, Column::Lat],
            vehicle_id: None,
        };
        assert!(matches!(
            parse_trace_reader("".as_bytes(), &spec),
            Err(TraceError::IncompleteFormat)
        ));
    }

    fn fixes_every(step: f64, hours: f64, grid: &GridSpec, id: &str) -> Vec<RawFix> {
        let n = (hours * 3600.0 / step) as usize;
        (0..n)
            .map(|k| {
                let frac = (k as f64 / n as f64) * 0.8 + 0.1;
                RawFix {
                    vehicle_id: id.into(),
                    timestamp: 1_000.0 + k as f64 * step,
                    lat: grid.lat_min + frac * (grid.lat_max - grid.lat_min),
                    lon: grid.lon_min + 0.5 * (grid.lon_max - grid.lon_min),
                }
            })
            .collect()
    }

    #[test]
    fn six_hours_of_minute_fixes_yield_a_long_trace() {
        let grid = GridSpec::rome();
        let fixes = fixes_every(60.0, 6.0, &grid, "cab");
        let (traces, report) = resample_to_slots(&fixes, &grid, 100, SLOT_SECONDS);
        assert_eq!(traces.len(), 1);
        assert!(traces[0].len() >= 100);
        assert_eq!(report.vehicles_skipped, 0);
    }

    #[test]
    fn out_of_box_vehicle_is_skipped() {
        let grid = GridSpec::rome();
        let fixes: Vec<RawFix> = (0..200)
            .map(|k| RawFix {
                vehicle_id: "far".into(),
                timestamp: k as f64 * 60.0,
                lat: 0.0,
                lon: 0.0,
            })
            .collect();
        let (traces, report) = resample_to_slots(&fixes, &grid, 10, SLOT_SECONDS);
        assert!(traces.is_empty());
        assert_eq!(report.vehicles_skipped, 1);
    }

    #[test]
    fn two_slot_gap_splits_and_one_slot_gap_interpolates() {
        let grid = GridSpec::rome();
        let base = GridSpec::rome().cell_center(crate::topology::ServerId(9));
        let fix = |k: usize, dlat: f64| RawFix {
            vehicle_id: "v".into(),
            timestamp: k as f64 * SLOT_SECONDS,
            lat: base.0 + dlat,
            lon: base.1,
        };
        // slots 0..5, gap at 5 and 6, slots 7..12
        let fixes: Vec<RawFix> = (0..5).chain(7..12).map(|k| fix(k, 0.0)).collect();
        let (traces, _) = resample_to_slots(&fixes, &grid, 5, SLOT_SECONDS);
        assert_eq!(traces.len(), 2);
        assert_eq!(traces[0].len(), 5);
        assert_eq!(traces[1].len(), 5);
        assert_eq!(traces[1].id, "v.1");

        // single gap at slot 2 gets the midpoint
        let fixes: Vec<RawFix> = [0usize, 1, 3, 4].iter().map(|&k| fix(k, k as f64 * 0.001)).collect();
        let (traces, _) = resample_to_slots(&fixes, &grid, 5, SLOT_SECONDS);
        assert_eq!(traces.len(), 1);
        let mid = traces[0].slots[2].0;
        assert!((mid - (base.0 + 0.002)).abs() < 1e-12);
    }

    #[test]
    fn synthetic_traces_are_seeded_bounded_and_slow() {
        let grid = GridSpec::synthetic(8, 8);
        let a = synth_trace(5, &grid, 200, [0.2, 1.5]).unwrap();
        assert_eq!(a, synth_trace(5, &grid, 200, [0.2, 1.5]).unwrap());
        assert_ne!(a, synth_trace(6, &grid, 200, [0.2, 1.5]).unwrap());
        assert!(trace_in_grid(&a, &grid));
        let km_per_lat = grid.cell_km * grid.rows as f64 / (grid.lat_max - grid.lat_min);
        let km_per_lon = grid.cell_km * grid.cols as f64 / (grid.lon_max - grid.lon_min);
        for w in a.slots.windows(2) {
            let dy = (w[1].0 - w[0].0) * km_per_lat;
            let dx = (w[1].1 - w[0].1) * km_per_lon;
            assert!(dx.hypot(dy) <= 1.5 + 1e-9);
        }
        assert!(synth_trace(1, &grid, 10, [0.0, 1.0]).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let grid = GridSpec::synthetic(4, 4);
        let traces: Vec<SlotTrace> = (0..3).map(|s| synth_trace(s, &grid, 7, [0.5, 1.0]).unwrap()).collect();
        let mut buf = Vec::new();
        write_slot_traces(&mut buf, &traces).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,slot,lat,lon\n"));
        assert_eq!(read_slot_traces(buf.as_slice()).unwrap(), traces);
    }

    #[test]
    fn csv_rejects_out_of_order_slots() {
        let text = "id,slot,lat,lon\na,0,1,1\na,2,1,1\n";
        assert!(matches!(
            read_slot_traces(text.as_bytes()),
            Err(TraceError::MalformedLine { lineno: 3, .. })
        ));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let grid = GridSpec::synthetic(4, 4);
        let traces: Vec<SlotTrace> = (0..20).map(|s| synth_trace(s, &grid, 3, [0.5, 1.0]).unwrap()).collect();
        let (train, test) = split_train_test(&traces, 12, 5);
        assert_eq!(train.len(), 12);
        assert_eq!(test.len(), 5);
        assert!(train.iter().all(|a| test.iter().all(|b| a.id != b.id)));
        let mut reversed = traces.clone();
        reversed.reverse();
        assert_eq!(split_train_test(&reversed, 12, 5), (train, test));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn resampling_is_idempotent(seed in 0u64..1000, len in 5usize..60) {
            let grid = GridSpec::rome();
            let trace = synth_trace(seed, &grid, len, [0.1, 2.0]).unwrap();
            let fixes = trace.to_fixes(1_400_000_000.0);
            let (again, _) = resample_to_slots(&fixes, &grid, len, SLOT_SECONDS);
            prop_assert_eq!(again, vec![trace]);
        }

        #[test]
        fn emitted_points_map_to_servers(seed in 0u64..1000) {
            let grid = GridSpec::san_francisco();
            let trace = synth_trace(seed, &grid, 40, [0.1, 3.0]).unwrap();
            prop_assert!(trace_in_grid(&trace, &grid));
        }
    }
}
