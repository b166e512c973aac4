//! Recordings and their on-disk formats.
//!
//! Two formats are supported: EDF as laid out by the 1992 standard (no EDF+
//! annotation signals) and a plain CSV fallback with a `t_s` column followed by
//! one column per EEG channel and, optionally, `accX,accY,accZ`.
//!
//! EEG channels are recognised by the unit field `uV`. Accelerometer axes are
//! recognised by the unit `g` together with an `X`, `Y` or `Z` axis marker in
//! the label (for example `ACC X` or `dZ`). Signals with any other unit are
//! skipped.

use std::fmt;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Amplitude bounds observed on the native headband, used as the default EDF
/// physical range for EEG fixtures.
pub const NATIVE_EEG_MIN_UV: f64 = -1976.0;
pub const NATIVE_EEG_MAX_UV: f64 = 1975.93;

const FIXED_HEADER_LEN: usize = 256;
const SIGNAL_HEADER_LEN: usize = 256;
const DEFAULT_START: &str = "1985-01-01T00:00:00";

#[derive(Debug, Error)]
pub enum SignalIoError {
    #[error("truncated file: expected at least {expected} bytes, found {actual}")]
    TruncatedFile { expected: usize, actual: usize },
    #[error("header field `{field}` is unparsable: {value:?}")]
    HeaderFieldUnparsable { field: String, value: String },
    #[error("signal `{signal}` has a degenerate digital range")]
    DigitalRangeDegenerate { signal: String },
    #[error("signal `{signal}` has a degenerate physical range")]
    PhysicalRangeDegenerate { signal: String },
    #[error("sampling rate mismatch: {0}")]
    SamplingRateMismatch(String),
    #[error("channel `{channel}` sample {value} lies outside its declared physical range")]
    AmplitudeOutOfDeclaredRange { channel: String, value: f64 },
    #[error("non-finite sample in `{channel}` at index {index}")]
    NonFiniteSample { channel: String, index: usize },
    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SignalIoError>;

/// Affine map between 16-bit digital codes and physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalScale {
    pub phys_min: f64,
    pub phys_max: f64,
    pub dig_min: i32,
    pub dig_max: i32,
}

impl SignalScale {
    pub const fn native_eeg() -> Self {
        SignalScale {
            phys_min: NATIVE_EEG_MIN_UV,
            phys_max: NATIVE_EEG_MAX_UV,
            dig_min: -32768,
            dig_max: 32767,
        }
    }

    /// Symmetric range `[-bound, bound]` over the full 16-bit code space.
    pub fn symmetric(bound: f64) -> Self {
        SignalScale {
            phys_min: -bound,
            phys_max: bound,
            dig_min: -32768,
            dig_max: 32767,
        }
    }

    fn gain(&self) -> f64 {
        (self.phys_max - self.phys_min) / f64::from(self.dig_max - self.dig_min)
    }

    pub fn to_physical(&self, digital: i16) -> f64 {
        self.phys_min + (f64::from(digital) - f64::from(self.dig_min)) * self.gain()
    }

    /// Nearest digital code, or `None` when `physical` falls outside the
    /// declared range by more than half a quantization step.
    pub fn to_digital(&self, physical: f64) -> Option<i16> {
        if !physical.is_finite() {
            return None;
        }
        let code = ((physical - self.phys_min) / self.gain() + f64::from(self.dig_min)).round();
        if code < f64::from(self.dig_min) || code > f64::from(self.dig_max) {
            return None;
        }
        Some(code as i16)
    }

    pub fn quantization_step(&self) -> f64 {
        self.gain()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSignal {
    pub label: String,
    /// Amplitudes in µV.
    pub samples: Vec<f64>,
    /// Calibration carried over from the source file; `None` lets the writer
    /// pick a symmetric range that covers the data.
    pub scale: Option<SignalScale>,
}

impl ChannelSignal {
    pub fn new(label: impl Into<String>, samples: Vec<f64>) -> Self {
        ChannelSignal {
            label: label.into(),
            samples,
            scale: None,
        }
    }

    pub fn with_scale(mut self, scale: SignalScale) -> Self {
        self.scale = Some(scale);
        self
    }
}

/// Tri-axial accelerometer readout in g.
#[derive(Debug, Clone, PartialEq)]
pub struct TriAxialAcc {
    pub ax: Vec<f64>,
    pub ay: Vec<f64>,
    pub az: Vec<f64>,
    pub scales: [Option<SignalScale>; 3],
}

impl TriAxialAcc {
    pub fn new(ax: Vec<f64>, ay: Vec<f64>, az: Vec<f64>) -> Self {
        TriAxialAcc {
            ax,
            ay,
            az,
            scales: [None; 3],
        }
    }

    pub fn len(&self) -> usize {
        self.ax.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ax.is_empty()
    }

    pub fn axes(&self) -> [&[f64]; 3] {
        [&self.ax, &self.ay, &self.az]
    }

    pub fn is_consistent(&self) -> bool {
        self.ax.len() == self.ay.len() && self.ax.len() == self.az.len()
    }

    /// Sub-range of all three axes.
    pub fn slice(&self, start: usize, end: usize) -> TriAxialAcc {
        TriAxialAcc {
            ax: self.ax[start..end].to_vec(),
            ay: self.ay[start..end].to_vec(),
            az: self.az[start..end].to_vec(),
            scales: self.scales,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub channels: Vec<ChannelSignal>,
    pub acc: Option<TriAxialAcc>,
    /// Shared sampling rate in Hz. Zero only for a recording without signals.
    pub fs: u32,
    /// ISO-8601 local timestamp, `YYYY-MM-DDTHH:MM:SS`.
    pub start_time: String,
    pub device_id: String,
    /// EDF data-record duration in seconds.
    pub record_duration_s: f64,
}

impl Default for Recording {
    fn default() -> Self {
        Recording {
            channels: Vec::new(),
            acc: None,
            fs: 0,
            start_time: DEFAULT_START.to_string(),
            device_id: String::new(),
            record_duration_s: 1.0,
        }
    }
}

impl Recording {
    pub fn new(fs: u32, channels: Vec<ChannelSignal>, acc: Option<TriAxialAcc>) -> Self {
        Recording {
            channels,
            acc,
            fs,
            ..Recording::default()
        }
    }

    pub fn n_samples(&self) -> usize {
        self.channels
            .first()
            .map(|c| c.samples.len())
            .or_else(|| self.acc.as_ref().map(TriAxialAcc::len))
            .unwrap_or(0)
    }

    pub fn duration_s(&self) -> f64 {
        if self.fs == 0 {
            0.0
        } else {
            self.n_samples() as f64 / f64::from(self.fs)
        }
    }

    pub fn has_signals(&self) -> bool {
        !self.channels.is_empty() || self.acc.is_some()
    }

    pub fn samples_per_record(&self) -> Result<usize> {
        let spr = f64::from(self.fs) * self.record_duration_s;
        if spr < 1.0 || (spr - spr.round()).abs() > 1e-9 {
            return Err(SignalIoError::InvalidRecording(format!(
                "fs {} × record duration {} s is not a positive integer",
                self.fs, self.record_duration_s
            )));
        }
        Ok(spr.round() as usize)
    }

    /// Checks the structural invariants: equal lengths, finite samples,
    /// positive sampling rate and whole data records.
    pub fn validate(&self) -> Result<()> {
        if !self.has_signals() {
            return Ok(());
        }
        if self.fs == 0 {
            return Err(SignalIoError::InvalidRecording("fs must be positive".into()));
        }
        let n = self.n_samples();
        for ch in &self.channels {
            if ch.samples.len() != n {
                return Err(SignalIoError::InvalidRecording(format!(
                    "channel `{}` has {} samples, expected {n}",
                    ch.label,
                    ch.samples.len()
                )));
            }
            check_finite(&ch.label, &ch.samples)?;
        }
        if let Some(acc) = &self.acc {
            if !acc.is_consistent() || acc.len() != n {
                return Err(SignalIoError::InvalidRecording(
                    "accelerometer axes must match the EEG length".into(),
                ));
            }
            for (name, axis) in ["accX", "accY", "accZ"].iter().zip(acc.axes()) {
                check_finite(name, axis)?;
            }
        }
        let spr = self.samples_per_record()?;
        if n % spr != 0 {
            return Err(SignalIoError::InvalidRecording(format!(
                "{n} samples do not fill whole data records of {spr} samples"
            )));
        }
        Ok(())
    }
}

fn check_finite(label: &str, samples: &[f64]) -> Result<()> {
    match samples.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(SignalIoError::NonFiniteSample {
            channel: label.to_string(),
            index,
        }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SignalKind {
    Eeg,
    Acc(usize),
    Other,
}

fn classify_signal(label: &str, unit: &str) -> SignalKind {
    let unit = unit.trim();
    if unit.eq_ignore_ascii_case("uv") {
        return SignalKind::Eeg;
    }
    if unit == "g" || unit == "G" {
        let upper = label.trim().to_ascii_uppercase();
        let axis_of = |c: char| match c {
            'X' => Some(0),
            'Y' => Some(1),
            'Z' => Some(2),
            _ => None,
        };
        let token_axis = upper
            .split(|c: char| !c.is_ascii_alphanumeric())
            .filter(|t| t.len() == 1)
            .find_map(|t| axis_of(t.chars().next().unwrap()));
        if let Some(axis) = token_axis.or_else(|| upper.chars().last().and_then(axis_of)) {
            return SignalKind::Acc(axis);
        }
    }
    SignalKind::Other
}

struct FieldReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> FieldReader<'a> {
    fn take(&mut self, len: usize) -> String {
        let s = String::from_utf8_lossy(&self.bytes[self.pos..self.pos + len])
            .trim()
            .to_string();
        self.pos += len;
        s
    }

    fn take_n(&mut self, n: usize, len: usize) -> Vec<String> {
        (0..n).map(|_| self.take(len)).collect()
    }
}

fn parse_field<T: std::str::FromStr>(field: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| SignalIoError::HeaderFieldUnparsable {
            field: field.to_string(),
            value: value.to_string(),
        })
}

fn parse_start(date: &str, time: &str) -> Result<String> {
    let unparsable = || SignalIoError::HeaderFieldUnparsable {
        field: "startdate/starttime".into(),
        value: format!("{date} {time}"),
    };
    let d: Vec<u32> = date
        .split('.')
        .map(|p| p.parse().map_err(|_| unparsable()))
        .collect::<Result<_>>()?;
    let t: Vec<u32> = time
        .split('.')
        .map(|p| p.parse().map_err(|_| unparsable()))
        .collect::<Result<_>>()?;
    if d.len() != 3 || t.len() != 3 {
        return Err(unparsable());
    }
    let year = if d[2] >= 85 { 1900 + d[2] } else { 2000 + d[2] };
    let dt = chrono::NaiveDate::from_ymd_opt(year as i32, d[1], d[0])
        .and_then(|day| day.and_hms_opt(t[0], t[1], t[2]))
        .ok_or_else(unparsable)?;
    Ok(dt.format("%Y-%m-%dT%H:%M:%S").to_string())
}

/// Parses an EDF byte stream.
pub fn read_edf(bytes: &[u8]) -> Result<Recording> {
    if bytes.len() < FIXED_HEADER_LEN {
        return Err(SignalIoError::TruncatedFile {
            expected: FIXED_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let mut r = FieldReader { bytes, pos: 0 };
    let version = r.take(8);
    if version != "0" {
        return Err(SignalIoError::HeaderFieldUnparsable {
            field: "version".into(),
            value: version,
        });
    }
    let _patient = r.take(80);
    let recording_id = r.take(80);
    let start_date = r.take(8);
    let start_time = r.take(8);
    let header_bytes: usize = parse_field("header_bytes", &r.take(8))?;
    let _reserved = r.take(44);
    let n_records: i64 = parse_field("n_records", &r.take(8))?;
    let record_duration_s: f64 = parse_field("record_duration", &r.take(8))?;
    let n_signals: usize = parse_field("n_signals", &r.take(4))?;

    let expected_header = FIXED_HEADER_LEN + SIGNAL_HEADER_LEN * n_signals;
    if header_bytes != expected_header {
        return Err(SignalIoError::HeaderFieldUnparsable {
            field: "header_bytes".into(),
            value: header_bytes.to_string(),
        });
    }
    if bytes.len() < expected_header {
        return Err(SignalIoError::TruncatedFile {
            expected: expected_header,
            actual: bytes.len(),
        });
    }

    let labels = r.take_n(n_signals, 16);
    let _transducers = r.take_n(n_signals, 80);
    let units = r.take_n(n_signals, 8);
    let phys_min = r.take_n(n_signals, 8);
    let phys_max = r.take_n(n_signals, 8);
    let dig_min = r.take_n(n_signals, 8);
    let dig_max = r.take_n(n_signals, 8);
    let _prefilters = r.take_n(n_signals, 80);
    let spr_fields = r.take_n(n_signals, 8);

    let mut scales = Vec::with_capacity(n_signals);
    let mut sprs = Vec::with_capacity(n_signals);
    for i in 0..n_signals {
        let scale = SignalScale {
            phys_min: parse_field("physical_minimum", &phys_min[i])?,
            phys_max: parse_field("physical_maximum", &phys_max[i])?,
            dig_min: parse_field("digital_minimum", &dig_min[i])?,
            dig_max: parse_field("digital_maximum", &dig_max[i])?,
        };
        if !scale.phys_min.is_finite() || !scale.phys_max.is_finite() {
            return Err(SignalIoError::HeaderFieldUnparsable {
                field: "physical range".into(),
                value: format!("{} {}", phys_min[i], phys_max[i]),
            });
        }
        if scale.dig_min >= scale.dig_max {
            return Err(SignalIoError::DigitalRangeDegenerate {
                signal: labels[i].clone(),
            });
        }
        if scale.phys_min >= scale.phys_max {
            return Err(SignalIoError::PhysicalRangeDegenerate {
                signal: labels[i].clone(),
            });
        }
        scales.push(scale);
        sprs.push(parse_field::<usize>("samples_per_record", &spr_fields[i])?);
    }

    let start_time = parse_start(&start_date, &start_time)?;
    if n_signals == 0 {
        return Ok(Recording {
            start_time,
            device_id: recording_id,
            record_duration_s: if record_duration_s > 0.0 { record_duration_s } else { 1.0 },
            ..Recording::default()
        });
    }

    let spr = sprs[0];
    if sprs.iter().any(|&s| s != spr) {
        return Err(SignalIoError::SamplingRateMismatch(format!(
            "samples per record differ across signals: {sprs:?}"
        )));
    }
    if !(record_duration_s > 0.0) {
        return Err(SignalIoError::HeaderFieldUnparsable {
            field: "record_duration".into(),
            value: record_duration_s.to_string(),
        });
    }
    let fs_exact = spr as f64 / record_duration_s;
    if spr == 0 || (fs_exact - fs_exact.round()).abs() > 1e-9 {
        return Err(SignalIoError::SamplingRateMismatch(format!(
            "{spr} samples per {record_duration_s} s record is not an integral rate"
        )));
    }
    let fs = fs_exact.round() as u32;

    let record_bytes = 2 * spr * n_signals;
    let payload = &bytes[expected_header..];
    let n_records = if n_records < 0 {
        payload.len() / record_bytes
    } else {
        n_records as usize
    };
    let needed = expected_header + n_records * record_bytes;
    if bytes.len() < needed {
        return Err(SignalIoError::TruncatedFile {
            expected: needed,
            actual: bytes.len(),
        });
    }

    let n = n_records * spr;
    let mut data = vec![Vec::with_capacity(n); n_signals];
    for rec in 0..n_records {
        let base = rec * record_bytes;
        for (sig, out) in data.iter_mut().enumerate() {
            let off = base + sig * spr * 2;
            for k in 0..spr {
                let at = off + 2 * k;
                let d = i16::from_le_bytes([payload[at], payload[at + 1]]);
                let p = scales[sig].to_physical(d);
                if !p.is_finite() {
                    return Err(SignalIoError::NonFiniteSample {
                        channel: labels[sig].clone(),
                        index: out.len(),
                    });
                }
                out.push(p);
            }
        }
    }

    let mut channels = Vec::new();
    let mut acc_axes: [Option<(Vec<f64>, SignalScale)>; 3] = [None, None, None];
    for (i, samples) in data.into_iter().enumerate() {
        match classify_signal(&labels[i], &units[i]) {
            SignalKind::Eeg => channels.push(ChannelSignal {
                label: labels[i].clone(),
                samples,
                scale: Some(scales[i]),
            }),
            SignalKind::Acc(axis) => acc_axes[axis] = Some((samples, scales[i])),
            SignalKind::Other => {
                log::debug!("skipping signal `{}` with unit `{}`", labels[i], units[i]);
            }
        }
    }
    let acc = match acc_axes {
        [Some((ax, sx)), Some((ay, sy)), Some((az, sz))] => Some(TriAxialAcc {
            ax,
            ay,
            az,
            scales: [Some(sx), Some(sy), Some(sz)],
        }),
        [None, None, None] => None,
        _ => {
            log::warn!("incomplete accelerometer axes; ignoring accelerometer");
            None
        }
    };

    Ok(Recording {
        channels,
        acc,
        fs,
        start_time,
        device_id: recording_id,
        record_duration_s,
    })
}

/// Formats `x` in at most eight characters, or `None` when impossible.
fn edf_number(x: f64) -> Option<String> {
    let plain = format!("{x}");
    if plain.len() <= 8 {
        return Some(plain);
    }
    (0..=6).rev().find_map(|decimals| {
        let s = format!("{x:.decimals$}");
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        (s.len() <= 8).then_some(s)
    })
}

/// Smallest EDF-representable bound ≥ `x` (x > 0), leaving room for a sign.
fn edf_ceil(x: f64) -> f64 {
    for decimals in (0..=6).rev() {
        let p = 10f64.powi(decimals);
        let v = (x * p).ceil() / p;
        let s = format!("{v:.*}", decimals as usize);
        if s.len() <= 7 {
            let parsed: f64 = s.parse().unwrap_or(v);
            if parsed >= x {
                return parsed;
            }
        }
    }
    x.ceil()
}

fn auto_scale(samples: &[&[f64]]) -> SignalScale {
    let peak = samples
        .iter()
        .flat_map(|s| s.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let bound = if peak > 0.0 { edf_ceil(peak) } else { 1.0 };
    SignalScale::symmetric(bound)
}

/// Re-reads a scale through its header text so that the writer quantizes
/// with exactly the values a reader will parse.
fn header_scale(scale: SignalScale, label: &str) -> Result<(SignalScale, [String; 4])> {
    let text = |v: f64, what: &str| {
        edf_number(v).ok_or_else(|| SignalIoError::HeaderFieldUnparsable {
            field: format!("{what} of `{label}`"),
            value: v.to_string(),
        })
    };
    let fields = [
        text(scale.phys_min, "physical_minimum")?,
        text(scale.phys_max, "physical_maximum")?,
        scale.dig_min.to_string(),
        scale.dig_max.to_string(),
    ];
    let parsed = SignalScale {
        phys_min: fields[0].parse().unwrap_or(scale.phys_min),
        phys_max: fields[1].parse().unwrap_or(scale.phys_max),
        dig_min: scale.dig_min,
        dig_max: scale.dig_max,
    };
    if parsed.dig_min >= parsed.dig_max {
        return Err(SignalIoError::DigitalRangeDegenerate {
            signal: label.to_string(),
        });
    }
    if parsed.phys_min >= parsed.phys_max {
        return Err(SignalIoError::PhysicalRangeDegenerate {
            signal: label.to_string(),
        });
    }
    Ok((parsed, fields))
}

fn push_field(out: &mut Vec<u8>, value: &str, len: usize) {
    let mut bytes: Vec<u8> = value
        .chars()
        .map(|c| if c.is_ascii() && !c.is_ascii_control() { c as u8 } else { b'_' })
        .take(len)
        .collect();
    bytes.resize(len, b' ');
    out.extend_from_slice(&bytes);
}

struct OutSignal<'a> {
    label: String,
    unit: &'static str,
    samples: &'a [f64],
    scale: SignalScale,
    header: [String; 4],
}

/// Serializes a recording as EDF. EEG channels come first, followed by the
/// accelerometer axes `ACC X`, `ACC Y`, `ACC Z`.
pub fn write_edf(rec: &Recording) -> Result<Vec<u8>> {
    rec.validate()?;

    let mut signals = Vec::new();
    for ch in &rec.channels {
        let scale = ch.scale.unwrap_or_else(|| auto_scale(&[&ch.samples]));
        let (scale, header) = header_scale(scale, &ch.label)?;
        signals.push(OutSignal {
            label: ch.label.clone(),
            unit: "uV",
            samples: &ch.samples,
            scale,
            header,
        });
    }
    if let Some(acc) = &rec.acc {
        let shared = auto_scale(&acc.axes());
        for (i, (name, axis)) in ["ACC X", "ACC Y", "ACC Z"].iter().zip(acc.axes()).enumerate() {
            let (scale, header) = header_scale(acc.scales[i].unwrap_or(shared), name)?;
            signals.push(OutSignal {
                label: name.to_string(),
                unit: "g",
                samples: axis,
                scale,
                header,
            });
        }
    }

    let ns = signals.len();
    let (spr, n_records) = if ns == 0 {
        (0, 0)
    } else {
        let spr = rec.samples_per_record()?;
        (spr, rec.n_samples() / spr)
    };

    let start = NaiveDateTime::parse_from_str(&rec.start_time, "%Y-%m-%dT%H:%M:%S")
        .unwrap_or_else(|_| {
            log::warn!("unparsable start time {:?}; writing 01.01.85", rec.start_time);
            NaiveDateTime::parse_from_str(DEFAULT_START, "%Y-%m-%dT%H:%M:%S").unwrap()
        });
    let duration = edf_number(rec.record_duration_s).ok_or_else(|| {
        SignalIoError::InvalidRecording(format!(
            "record duration {} cannot be written",
            rec.record_duration_s
        ))
    })?;

    let header_len = FIXED_HEADER_LEN + SIGNAL_HEADER_LEN * ns;
    let mut out = Vec::with_capacity(header_len + 2 * spr * ns * n_records);
    push_field(&mut out, "0", 8);
    push_field(&mut out, "X X X X", 80);
    push_field(&mut out, &rec.device_id, 80);
    push_field(&mut out, &start.format("%d.%m.%y").to_string(), 8);
    push_field(&mut out, &start.format("%H.%M.%S").to_string(), 8);
    push_field(&mut out, &header_len.to_string(), 8);
    push_field(&mut out, "", 44);
    push_field(&mut out, &n_records.to_string(), 8);
    push_field(&mut out, &duration, 8);
    push_field(&mut out, &ns.to_string(), 4);
    for s in &signals {
        push_field(&mut out, &s.label, 16);
    }
    for _ in &signals {
        push_field(&mut out, "", 80);
    }
    for s in &signals {
        push_field(&mut out, s.unit, 8);
    }
    for k in 0..4 {
        for s in &signals {
            push_field(&mut out, &s.header[k], 8);
        }
    }
    for _ in &signals {
        push_field(&mut out, "", 80);
    }
    for _ in &signals {
        push_field(&mut out, &spr.to_string(), 8);
    }
    for _ in &signals {
        push_field(&mut out, "", 32);
    }
    debug_assert_eq!(out.len(), header_len);

    let digital: Vec<Vec<i16>> = signals
        .iter()
        .map(|s| {
            s.samples
                .iter()
                .map(|&p| {
                    s.scale
                        .to_digital(p)
                        .ok_or_else(|| SignalIoError::AmplitudeOutOfDeclaredRange {
                            channel: s.label.clone(),
                            value: p,
                        })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    for rec_idx in 0..n_records {
        for codes in &digital {
            for d in &codes[rec_idx * spr..(rec_idx + 1) * spr] {
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Parses the CSV fallback format. The sampling rate is inferred from the
/// first two timestamps.
pub fn read_csv(text: &str) -> Result<Recording> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| SignalIoError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.first().map(String::as_str) != Some("t_s") {
        return Err(SignalIoError::HeaderFieldUnparsable {
            field: "csv header".into(),
            value: headers.join(","),
        });
    }
    let acc_cols = ["accX", "accY", "accZ"];
    let n_acc = headers.iter().filter(|h| acc_cols.contains(&h.as_str())).count();
    let has_acc = match n_acc {
        0 => false,
        3 if headers[headers.len() - 3..] == acc_cols => true,
        _ => {
            return Err(SignalIoError::HeaderFieldUnparsable {
                field: "csv accelerometer columns".into(),
                value: headers.join(","),
            })
        }
    };
    let n_eeg = headers.len() - 1 - if has_acc { 3 } else { 0 };

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| SignalIoError::Csv(e.to_string()))?;
        if record.len() != headers.len() {
            return Err(SignalIoError::RaggedRow {
                row: row + 1,
                expected: headers.len(),
                found: record.len(),
            });
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| SignalIoError::Csv(format!(
                "row {}: `{field}` is not a number",
                row + 1
            )))?;
            if !v.is_finite() {
                return Err(SignalIoError::NonFiniteSample {
                    channel: headers[col].clone(),
                    index: row,
                });
            }
            columns[col].push(v);
        }
    }

    let t = &columns[0];
    let fs = if t.len() >= 2 {
        let dt = t[1] - t[0];
        let fs = 1.0 / dt;
        if !(dt > 0.0) || (fs - fs.round()).abs() > 1e-6 * fs {
            return Err(SignalIoError::SamplingRateMismatch(format!(
                "time step {dt} s does not give an integral rate"
            )));
        }
        fs.round() as u32
    } else if t.is_empty() {
        0
    } else {
        return Err(SignalIoError::SamplingRateMismatch(
            "a single row does not determine the sampling rate".into(),
        ));
    };

    let mut cols = columns.into_iter().skip(1);
    let channels = headers[1..=n_eeg]
        .iter()
        .map(|label| ChannelSignal::new(label.clone(), cols.next().unwrap()))
        .collect();
    let acc = has_acc.then(|| {
        let ax = cols.next().unwrap();
        let ay = cols.next().unwrap();
        let az = cols.next().unwrap();
        TriAxialAcc::new(ax, ay, az)
    });
    Ok(Recording {
        channels,
        acc,
        fs,
        ..Recording::default()
    })
}

pub fn write_csv(rec: &Recording) -> Result<String> {
    rec.validate()?;
    let mut out = String::from("t_s");
    for ch in &rec.channels {
        out.push(',');
        out.push_str(&ch.label);
    }
    if rec.acc.is_some() {
        out.push_str(",accX,accY,accZ");
    }
    out.push('\n');
    for i in 0..rec.n_samples() {
        out.push_str(&format!("{}", i as f64 / f64::from(rec.fs)));
        for ch in &rec.channels {
            out.push_str(&format!(",{}", ch.samples[i]));
        }
        if let Some(acc) = &rec.acc {
            out.push_str(&format!(",{},{},{}", acc.ax[i], acc.ay[i], acc.az[i]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Recording file formats, chosen by extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordingFormat {
    Edf,
    Csv,
}

impl RecordingFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "edf" => Some(RecordingFormat::Edf),
            "csv" => Some(RecordingFormat::Csv),
            _ => None,
        }
    }
}

impl fmt::Display for RecordingFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordingFormat::Edf => "edf",
            RecordingFormat::Csv => "csv",
        })
    }
}

pub fn read_recording(path: &Path) -> Result<Recording> {
    match RecordingFormat::from_path(path) {
        Some(RecordingFormat::Csv) => read_csv(&std::fs::read_to_string(path)?),
        _ => read_edf(&std::fs::read(path)?),
    }
}

pub fn write_recording(path: &Path, rec: &Recording) -> Result<()> {
    let bytes = match RecordingFormat::from_path(path) {
        Some(RecordingFormat::Csv) => write_csv(rec)?.into_bytes(),
        _ => write_edf(rec)?,
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn digital_payload(bytes: &[u8]) -> &[u8] {
        let ns: usize = String::from_utf8_lossy(&bytes[252..256]).trim().parse().unwrap();
        &bytes[256 + 256 * ns..]
    }

    #[test]
    fn empty_header_reads_as_empty_recording() {
        let bytes = write_edf(&Recording::default()).unwrap();
        assert_eq!(bytes.len(), 256);
        let rec = read_edf(&bytes).unwrap();
        assert!(rec.channels.is_empty());
        assert!(rec.acc.is_none());
    }

    #[test]
    fn affine_map_at_zero_code() {
        // -1976 + 32768 * 3951.93 / 65535
        let p = SignalScale::native_eeg().to_physical(0);
        assert!((p - (-0.004_848_7)).abs() < 1e-6, "{p}");
        let hand = -1976.0 + 32768.0 * (1975.93 + 1976.0) / 65535.0;
        assert_eq!(p, hand);
    }

    #[test]
    fn constant_zero_channel_encodes_one_code() {
        let rec = Recording::new(
            256,
            vec![ChannelSignal::new("EEG L", vec![0.0; 2560]).with_scale(SignalScale::native_eeg())],
            None,
        );
        let bytes = write_edf(&rec).unwrap();
        let payload = digital_payload(&bytes);
        assert_eq!(payload.len(), 2 * 2560);
        let code = SignalScale::native_eeg().to_digital(0.0).unwrap();
        for pair in payload.chunks(2) {
            assert_eq!(i16::from_le_bytes([pair[0], pair[1]]), code);
        }
    }

    #[test]
    fn truncated_payload_is_reported() {
        let rec = Recording::new(256, vec![ChannelSignal::new("EEG", vec![1.0; 512])], None);
        let bytes = write_edf(&rec).unwrap();
        let err = read_edf(&bytes[..bytes.len() - 10]).unwrap_err();
        assert!(matches!(err, SignalIoError::TruncatedFile { .. }), "{err}");
        let err = read_edf(&bytes[..100]).unwrap_err();
        assert!(matches!(err, SignalIoError::TruncatedFile { .. }));
    }

    #[test]
    fn degenerate_digital_range_is_rejected() {
        let rec = Recording::new(256, vec![ChannelSignal::new("EEG", vec![1.0; 256])], None);
        let mut bytes = write_edf(&rec).unwrap();
        // digital maximum field of the only signal
        let off = 256 + 16 + 80 + 8 + 8 + 8 + 8;
        bytes[off..off + 8].copy_from_slice(b"-32768  ");
        let err = read_edf(&bytes).unwrap_err();
        assert!(matches!(err, SignalIoError::DigitalRangeDegenerate { .. }), "{err}");
    }

    #[test]
    fn unparsable_field_is_reported() {
        let rec = Recording::new(256, vec![ChannelSignal::new("EEG", vec![1.0; 256])], None);
        let mut bytes = write_edf(&rec).unwrap();
        bytes[236..244].copy_from_slice(b"abc     ");
        let err = read_edf(&bytes).unwrap_err();
        assert!(matches!(err, SignalIoError::HeaderFieldUnparsable { .. }), "{err}");
    }

    #[test]
    fn mixed_rates_are_rejected() {
        let rec = Recording::new(
            4,
            vec![ChannelSignal::new("A", vec![0.0; 8]), ChannelSignal::new("B", vec![0.0; 8])],
            None,
        );
        let mut bytes = write_edf(&rec).unwrap();
        let off = 256 + 2 * (16 + 80 + 8 + 8 * 4 + 80) + 8;
        bytes[off..off + 8].copy_from_slice(b"2       ");
        let err = read_edf(&bytes).unwrap_err();
        assert!(matches!(err, SignalIoError::SamplingRateMismatch(_)), "{err}");
    }

    #[test]
    fn out_of_range_amplitude_fails_to_write() {
        let rec = Recording::new(
            256,
            vec![ChannelSignal::new("EEG", vec![2500.0; 256]).with_scale(SignalScale::native_eeg())],
            None,
        );
        assert!(matches!(
            write_edf(&rec).unwrap_err(),
            SignalIoError::AmplitudeOutOfDeclaredRange { .. }
        ));
    }

    #[test]
    fn accelerometer_axes_are_recognised() {
        assert_eq!(classify_signal("ACC X", "g"), SignalKind::Acc(0));
        assert_eq!(classify_signal("dY", "g"), SignalKind::Acc(1));
        assert_eq!(classify_signal("acc_z", "g"), SignalKind::Acc(2));
        assert_eq!(classify_signal("EEG L", "uV"), SignalKind::Eeg);
        assert_eq!(classify_signal("BATT", "V"), SignalKind::Other);

        let n = 512;
        let acc = TriAxialAcc::new(vec![0.1; n], vec![-0.2; n], vec![0.98; n]);
        let rec = Recording::new(256, vec![ChannelSignal::new("EEG", vec![3.0; n])], Some(acc));
        let back = read_edf(&write_edf(&rec).unwrap()).unwrap();
        let acc = back.acc.unwrap();
        assert!((acc.az[0] - 0.98).abs() < 1e-4);
        assert!((acc.ay[7] + 0.2).abs() < 1e-4);
    }

    #[test]
    fn start_time_survives() {
        let mut rec = Recording::new(1, vec![ChannelSignal::new("EEG", vec![0.0; 4])], None);
        rec.start_time = "2023-11-02T23:15:07".into();
        rec.device_id = "zmax-07".into();
        let back = read_edf(&write_edf(&rec).unwrap()).unwrap();
        assert_eq!(back.start_time, rec.start_time);
        assert_eq!(back.device_id, "zmax-07");
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let acc = TriAxialAcc::new(vec![0.0, 0.5], vec![0.0, 0.25], vec![1.0, 0.75]);
        let rec = Recording::new(
            2,
            vec![ChannelSignal::new("L", vec![1.5, -2.25]), ChannelSignal::new("R", vec![0.1, 0.2])],
            Some(acc),
        );
        let text = write_csv(&rec).unwrap();
        assert!(text.starts_with("t_s,L,R,accX,accY,accZ\n"));
        let back = read_csv(&text).unwrap();
        assert_eq!(back.fs, 2);
        assert_eq!(back.channels, rec.channels);
        assert_eq!(back.acc, rec.acc);

        let ragged = "t_s,L,accX,accY,accZ\n0,1,0,0,1\n0.5,1,0,0\n";
        assert!(matches!(read_csv(ragged), Err(SignalIoError::RaggedRow { row: 2, .. })));
        let nan = "t_s,L\n0,1\n0.5,NaN\n";
        assert!(matches!(read_csv(nan), Err(SignalIoError::NonFiniteSample { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn digital_round_trip(
            seconds in 1usize..4,
            fs in prop::sample::select(vec![1u32, 8, 128, 256]),
            n_ch in 0usize..3,
            with_acc: bool,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = seconds * fs as usize;
            let channels = (0..n_ch)
                .map(|i| ChannelSignal::new(format!("EEG{i}"), (0..n).map(|_| rng.random_range(-300.0..300.0)).collect()))
                .collect();
            let acc = with_acc.then(|| TriAxialAcc::new(
                (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
                (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
                (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
            ));
            let rec = Recording::new(fs, channels, acc);
            let first = write_edf(&rec).unwrap();
            let parsed = read_edf(&first).unwrap();
            prop_assert_eq!(parsed.channels.len(), rec.channels.len());
            for (a, b) in parsed.channels.iter().zip(&rec.channels) {
                prop_assert_eq!(&a.label, &b.label);
                let step = a.scale.unwrap().quantization_step();
                for (x, y) in a.samples.iter().zip(&b.samples) {
                    prop_assert!((x - y).abs() <= 0.5 * step + 1e-9);
                }
            }
            let second = write_edf(&parsed).unwrap();
            prop_assert_eq!(first, second);
        }

        #[test]
        fn affine_map_is_monotone(d1 in any::<i16>(), d2 in any::<i16>()) {
            let s = SignalScale::native_eeg();
            if d1 < d2 {
                prop_assert!(s.to_physical(d1) < s.to_physical(d2));
            }
        }
    }
}
