//! Sensor logs and configuration files.
//!
//! # Log format
//!
//! One multiplexed CSV per run. Optional leading `# key = value` lines carry
//! metadata; the first other line is exactly `kind,t,f1,f2,f3,f4`. Times are
//! written with six decimals, payload values in shortest round-trip form.
//!
//! | kind | payload                                         |
//! |------|-------------------------------------------------|
//! | GT   | x, y, vx, vy, heading (heading in a 5th field)  |
//! | GPS  | x, y                                            |
//! | IMU  | vx, vy                                          |
//! | IX   | x, y (one row per candidate) or nothing         |
//! | EST  | x, y, cov_xx, cov_yy, cov_xy (cov_xy 5th field) |
//!
//! GT positions are raw reference-receiver readings; the lever-arm
//! correction recovers the antenna track. An `IX` row with no payload marks
//! a frame with no candidates. Positions are map-frame unless the metadata
//! says `frame = enu`.
//!
//! # Config format
//!
//! `key = value` per line, `#` starts a comment. See [`parse_config`] for
//! the keys.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::Matrix2;

use crate::assoc::{CandidateSet, GpsFix};
use crate::ekf::VelocityInput;
use crate::error::{Error, Result};
use crate::geo::{lever_arm_correct, to_map_frame, EnuPoint, Heading, MapPoint};
use crate::noise::{Covariance2, GpsGate, NoiseParams};
use crate::sim::{ScenarioSpec, Trajectory, TruthSample};

pub const LOG_HEADER: &str = "kind,t,f1,f2,f3,f4";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RecordKind {
    Gt,
    Gps,
    Imu,
    Ix,
    Est,
}

impl RecordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Gt => "GT",
            RecordKind::Gps => "GPS",
            RecordKind::Imu => "IMU",
            RecordKind::Ix => "IX",
            RecordKind::Est => "EST",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "GT" => RecordKind::Gt,
            "GPS" => RecordKind::Gps,
            "IMU" => RecordKind::Imu,
            "IX" => RecordKind::Ix,
            "EST" => RecordKind::Est,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogRecord {
    Gt {
        t: f64,
        raw: MapPoint,
        vx: f64,
        vy: f64,
        heading: f64,
    },
    Gps { t: f64, pos: MapPoint },
    Imu { t: f64, vx: f64, vy: f64 },
    /// `None` marks a node frame with no candidates.
    Ix { t: f64, pos: Option<MapPoint> },
    Est { t: f64, pos: MapPoint, cov: Covariance2 },
}

impl LogRecord {
    pub fn kind(&self) -> RecordKind {
        match self {
            LogRecord::Gt { .. } => RecordKind::Gt,
            LogRecord::Gps { .. } => RecordKind::Gps,
            LogRecord::Imu { .. } => RecordKind::Imu,
            LogRecord::Ix { .. } => RecordKind::Ix,
            LogRecord::Est { .. } => RecordKind::Est,
        }
    }

    pub fn t(&self) -> f64 {
        match *self {
            LogRecord::Gt { t, .. }
            | LogRecord::Gps { t, .. }
            | LogRecord::Imu { t, .. }
            | LogRecord::Ix { t, .. }
            | LogRecord::Est { t, .. } => t,
        }
    }

    fn payload(&self) -> Vec<f64> {
        match *self {
            LogRecord::Gt { raw, vx, vy, heading, .. } => vec![raw.x, raw.y, vx, vy, heading],
            LogRecord::Gps { pos, .. } => vec![pos.x, pos.y],
            LogRecord::Imu { vx, vy, .. } => vec![vx, vy],
            LogRecord::Ix { pos: Some(p), .. } => vec![p.x, p.y],
            LogRecord::Ix { pos: None, .. } => vec![],
            LogRecord::Est { pos, cov, .. } => vec![pos.x, pos.y, cov.xx(), cov.yy(), cov.xy()],
        }
    }

    fn from_fields(kind: RecordKind, t: f64, f: &[f64]) -> std::result::Result<Self, String> {
        let arity = |expected: &[usize]| {
            if expected.contains(&f.len()) {
                Ok(())
            } else {
                Err(format!(
                    "{} row needs {expected:?} payload fields, found {}",
                    kind.as_str(),
                    f.len()
                ))
            }
        };
        Ok(match kind {
            RecordKind::Gt => {
                arity(&[5])?;
                LogRecord::Gt { t, raw: MapPoint::new(f[0], f[1]), vx: f[2], vy: f[3], heading: f[4] }
            }
            RecordKind::Gps => {
                arity(&[2])?;
                LogRecord::Gps { t, pos: MapPoint::new(f[0], f[1]) }
            }
            RecordKind::Imu => {
                arity(&[2])?;
                LogRecord::Imu { t, vx: f[0], vy: f[1] }
            }
            RecordKind::Ix => {
                arity(&[0, 2])?;
                LogRecord::Ix { t, pos: (f.len() == 2).then(|| MapPoint::new(f[0], f[1])) }
            }
            RecordKind::Est => {
                arity(&[5])?;
                let cov = Covariance2::new(Matrix2::new(f[2], f[4], f[4], f[3]))
                    .map_err(|e| e.to_string())?;
                LogRecord::Est { t, pos: MapPoint::new(f[0], f[1]), cov }
            }
        })
    }
}

/// Records plus `key = value` metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensorLog {
    pub metadata: Vec<(String, String)>,
    pub records: Vec<LogRecord>,
}

/// Log contents split per kind, each in time order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LogStreams {
    pub truth: Trajectory,
    pub gps: Vec<GpsFix>,
    pub imu: Vec<VelocityInput>,
    pub ix: Vec<CandidateSet>,
    pub est: Vec<(f64, MapPoint, Covariance2)>,
}

impl SensorLog {
    pub fn new(records: Vec<LogRecord>) -> Self {
        Self { metadata: Vec::new(), records }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        self.metadata.retain(|(k, _)| k != key);
        self.metadata.push((key.to_string(), value.into()));
    }

    /// Stable sort by time; records at the same instant keep kind order
    /// GT, GPS, IMU, IX, EST.
    pub fn sort_by_time(&mut self) {
        self.records.sort_by(|a, b| a.t().total_cmp(&b.t()).then(a.kind().cmp(&b.kind())));
    }

    /// Converts an ENU log to the map frame. Map-frame logs are returned as is.
    pub fn into_map_frame(mut self, params: &NoiseParams) -> Result<Self> {
        match self.meta("frame") {
            None | Some("map") => return Ok(self),
            Some("enu") => {}
            Some(other) => return Err(Error::Validation(format!("unknown log frame '{other}'"))),
        }
        let origin = EnuPoint::new(params.x_o, params.y_o);
        let conv = |p: MapPoint| to_map_frame(EnuPoint::new(p.x, p.y), origin);
        for r in &mut self.records {
            match r {
                LogRecord::Gt { raw, .. } => *raw = conv(*raw)?,
                LogRecord::Gps { pos, .. } | LogRecord::Est { pos, .. } => *pos = conv(*pos)?,
                LogRecord::Ix { pos: Some(pos), .. } => *pos = conv(*pos)?,
                LogRecord::Ix { pos: None, .. } | LogRecord::Imu { .. } => {}
            }
        }
        self.set_meta("frame", "map");
        Ok(self)
    }

    /// Splits the records per kind. Ground truth is corrected for the
    /// lever arm `d_gnss`.
    pub fn streams(&self, d_gnss: f64) -> Result<LogStreams> {
        let mut out = LogStreams::default();
        for r in &self.records {
            match *r {
                LogRecord::Gt { t, raw, vx, vy, heading } => {
                    let heading = Heading::new(heading)?;
                    let p = lever_arm_correct(EnuPoint::new(raw.x, raw.y), heading, d_gnss)?;
                    out.truth.samples.push(TruthSample {
                        t,
                        pos: MapPoint::new(p.east, p.north),
                        vx,
                        vy,
                        heading,
                    });
                }
                LogRecord::Gps { t, pos } => out.gps.push(GpsFix { t, pos }),
                LogRecord::Imu { t, vx, vy } => out.imu.push(VelocityInput::new(vx, vy, t)),
                LogRecord::Ix { t, pos } => {
                    if out.ix.last().is_none_or(|f| f.t != t) {
                        out.ix.push(CandidateSet { t, candidates: Vec::new() });
                    }
                    if let Some(p) = pos {
                        out.ix.last_mut().expect("frame pushed above").candidates.push(p);
                    }
                }
                LogRecord::Est { t, pos, cov } => out.est.push((t, pos, cov)),
            }
        }
        Ok(out)
    }
}

fn format_f64(v: f64) -> String {
    format!("{v}")
}

/// Renders the log text. Metadata goes first as comment lines.
pub fn render_log(log: &SensorLog) -> Result<String> {
    let mut out = String::new();
    for (k, v) in &log.metadata {
        writeln!(out, "# {k} = {v}").expect("writing to a String");
    }
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Validation(format!("csv encoding failed: {e}"));
    w.write_record(LOG_HEADER.split(',')).map_err(csv_err)?;
    for r in &log.records {
        let mut row = vec![r.kind().as_str().to_string(), format!("{:.6}", r.t())];
        row.extend(r.payload().into_iter().map(format_f64));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
    out.push_str(std::str::from_utf8(&bytes).expect("csv output is ASCII"));
    Ok(out)
}

pub fn write_log_with_metadata(log: &SensorLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = render_log(log)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_log(records: &[LogRecord], path: impl AsRef<Path>) -> Result<()> {
    write_log_with_metadata(&SensorLog::new(records.to_vec()), path)
}

/// Parses log text and validates per-kind time order.
pub fn parse_log(text: &str) -> Result<SensorLog> {
    let mut metadata = Vec::new();
    let mut offset = 0;
    let mut header_line = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let trimmed = line.trim_end_matches(['\n', '\r']);
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                metadata.push((k.trim().to_string(), v.trim().to_string()));
            }
            offset += line.len();
            continue;
        }
        header_line = i + 1;
        if trimmed != LOG_HEADER {
            return Err(Error::Parse {
                line: header_line,
                message: format!("expected header '{LOG_HEADER}', found '{trimmed}'"),
            });
        }
        break;
    }
    if header_line == 0 {
        return Err(Error::Parse { line: 1, message: "missing header".into() });
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(&text.as_bytes()[offset..]);
    let mut records = Vec::new();
    let mut last_t: BTreeMap<RecordKind, f64> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize + header_line - 1),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize) + header_line - 1;
        let parse_err = |message: String| Error::Parse { line, message };

        let kind_str = row.get(0).unwrap_or_default();
        let kind = RecordKind::parse(kind_str)
            .ok_or_else(|| parse_err(format!("unknown record kind '{kind_str}'")))?;
        let t: f64 = row
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|_| parse_err(format!("bad timestamp '{}'", row.get(1).unwrap_or_default())))?;
        if !t.is_finite() {
            return Err(parse_err(format!("timestamp {t} is not finite")));
        }
        let fields = row
            .iter()
            .skip(2)
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(format!("bad numeric field '{f}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let record = LogRecord::from_fields(kind, t, &fields).map_err(parse_err)?;

        if let Some(&prev) = last_t.get(&kind) {
            if t < prev {
                return Err(Error::Validation(format!(
                    "line {line}: {} timestamps go backwards ({t} after {prev})",
                    kind.as_str()
                )));
            }
        }
        last_t.insert(kind, t);
        records.push(record);
    }
    Ok(SensorLog { metadata, records })
}

pub fn read_log(path: impl AsRef<Path>) -> Result<SensorLog> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_log(&text)
}

/// Records for a simulated scenario: GT at every trajectory sample, then the
/// three sensor streams, merged in time order.
pub fn scenario_records(truth: &Trajectory, streams: &crate::sim::SensorStreams, params: &NoiseParams) -> Vec<LogRecord> {
    let mut records = Vec::with_capacity(
        truth.samples.len() + streams.gps.len() + streams.imu.len() + streams.ix.len(),
    );
    for s in &truth.samples {
        let raw = crate::geo::lever_arm_apply(EnuPoint::new(s.pos.x, s.pos.y), s.heading, params.d_gnss);
        records.push(LogRecord::Gt {
            t: s.t,
            raw: MapPoint::new(raw.east, raw.north),
            vx: s.vx,
            vy: s.vy,
            heading: s.heading.radians(),
        });
    }
    records.extend(streams.gps.iter().map(|f| LogRecord::Gps { t: f.t, pos: f.pos }));
    records.extend(streams.imu.iter().map(|v| LogRecord::Imu { t: v.t, vx: v.vx, vy: v.vy }));
    for frame in &streams.ix {
        if frame.candidates.is_empty() {
            records.push(LogRecord::Ix { t: frame.t, pos: None });
        }
        records.extend(frame.candidates.iter().map(|&c| LogRecord::Ix { t: frame.t, pos: Some(c) }));
    }
    let mut log = SensorLog::new(records);
    log.sort_by_time();
    log.records
}

/// Parsed configuration: filter parameters, scenario, optional evaluation
/// windows and any non-fatal warnings raised while parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub params: NoiseParams,
    pub scenario: ScenarioSpec,
    pub case_windows: Option<Vec<(f64, f64)>>,
    pub warnings: Vec<String>,
}

/// Keys every configuration must set.
pub const REQUIRED_KEYS: [&str; 10] = [
    "dt",
    "x_o",
    "y_o",
    "d_thresh",
    "sigma_x_gps",
    "sigma_y_gps",
    "sigma_y_ix",
    "d_gnss",
    "node_x",
    "node_y",
];

fn parse_number(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Config(format!("'{key}' expects a number, got '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("'{key}' expects true/false, got '{value}'"))),
    }
}

/// `a:b, c:d`; an empty value is an empty list.
fn parse_intervals(key: &str, value: &str) -> Result<Vec<(f64, f64)>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (a, b) = item
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("'{key}' expects start:end pairs, got '{item}'")))?;
            Ok((parse_number(key, a.trim())?, parse_number(key, b.trim())?))
        })
        .collect()
}

/// `x y; x y; ...`
fn parse_points(key: &str, value: &str) -> Result<Vec<MapPoint>> {
    value
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let nums: Vec<&str> = item.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
            match nums.as_slice() {
                [x, y] => Ok(MapPoint::new(parse_number(key, x)?, parse_number(key, y)?)),
                _ => Err(Error::Config(format!("'{key}' expects 'x y' points separated by ';', got '{item}'"))),
            }
        })
        .collect()
}

/// Parses `key = value` configuration text.
///
/// Filter keys: the ten in [`REQUIRED_KEYS`] plus optional `ix_std_slope`,
/// `ix_std_offset`, `ix_std_floor`, `process_q_x`, `process_q_y`,
/// `correlated_offdiag`, `detection_range`, `gps_gate` (`chi2` or `radius`)
/// and `ix_radial_frame`. Scenario keys (all optional): `waypoints`,
/// `speed`, `duration`, `gps_rate`, `imu_rate`, `ix_rate`,
/// `tunnel_intervals`, `occlusion_prob`, `clutter_rate`, `seed`,
/// `vel_sigma`, `tunnel_noise_factor`, `tunnel_drop_prob`, `ix_noise_scale`.
/// Evaluation: `case_windows`. A repeated key keeps its last value.
pub fn parse_config(text: &str) -> Result<ConfigFile> {
    let mut values: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut warnings = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: i + 1, message: format!("expected 'key = value', found '{line}'") })?;
        let key = k.trim().to_string();
        if let Some((prev, _)) = values.get(&key) {
            let msg = format!("key '{key}' on line {} overrides line {prev}", i + 1);
            warn!("{msg}");
            warnings.push(msg);
        }
        values.insert(key, (i + 1, v.trim().to_string()));
    }

    if let Some(missing) = REQUIRED_KEYS.iter().find(|k| !values.contains_key(**k)) {
        return Err(Error::Config(format!("missing required key '{missing}'")));
    }

    let mut params = NoiseParams::default();
    let mut scenario = ScenarioSpec::default();
    let mut case_windows = None;
    for (key, (_, value)) in &values {
        let num = || parse_number(key, value);
        match key.as_str() {
            "dt" => params.dt = num()?,
            "x_o" => params.x_o = num()?,
            "y_o" => params.y_o = num()?,
            "d_thresh" => params.d_thresh = num()?,
            "sigma_x_gps" => params.sigma_x_gps = num()?,
            "sigma_y_gps" => params.sigma_y_gps = num()?,
            "sigma_y_ix" => params.sigma_y_ix = num()?,
            "d_gnss" => params.d_gnss = num()?,
            "node_x" => params.node_x = num()?,
            "node_y" => params.node_y = num()?,
            "ix_std_slope" => params.ix_std_slope = num()?,
            "ix_std_offset" => params.ix_std_offset = num()?,
            "ix_std_floor" => params.ix_std_floor = num()?,
            "process_q_x" => params.process_q_x = num()?,
            "process_q_y" => params.process_q_y = num()?,
            "detection_range" => params.detection_range = num()?,
            "correlated_offdiag" => params.correlated_offdiag = parse_bool(key, value)?,
            "ix_radial_frame" => params.ix_radial_frame = parse_bool(key, value)?,
            "gps_gate" => {
                params.gps_gate = match value.as_str() {
                    "chi2" => GpsGate::ChiSquare,
                    "radius" => GpsGate::FixedRadius,
                    _ => return Err(Error::Config(format!("'gps_gate' expects chi2 or radius, got '{value}'"))),
                }
            }
            "waypoints" => scenario.waypoints = parse_points(key, value)?,
            "speed" => scenario.speed = num()?,
            "duration" => scenario.duration = num()?,
            "gps_rate" => scenario.gps_rate = num()?,
            "imu_rate" => scenario.imu_rate = num()?,
            "ix_rate" => scenario.ix_rate = num()?,
            "tunnel_intervals" => scenario.tunnel_intervals = parse_intervals(key, value)?,
            "occlusion_prob" => scenario.occlusion_prob = num()?,
            "clutter_rate" => scenario.clutter_rate = num()?,
            "seed" => {
                scenario.seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("'seed' expects an unsigned integer, got '{value}'")))?
            }
            "vel_sigma" => scenario.vel_sigma = num()?,
            "tunnel_noise_factor" => scenario.tunnel_noise_factor = num()?,
            "tunnel_drop_prob" => scenario.tunnel_drop_prob = num()?,
            "ix_noise_scale" => scenario.ix_noise_scale = num()?,
            "case_windows" => case_windows = Some(parse_intervals(key, value)?),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
    }
    params.validate()?;
    scenario.validate()?;
    Ok(ConfigFile { params, scenario, case_windows, warnings })
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ConfigFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
