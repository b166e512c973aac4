//! Batch processing of a directory of nights: usability scoring, time in
//! bed, artifact rejection and sleep statistics, with per-night skip and a
//! summary of what failed.

pub mod svg;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{self, AggregateError};
use crate::epoching::window_samples;
use crate::features::MobilityFeatureMode;
use crate::gbt::GbtModel;
use crate::mobility::{self, MobilityError, MobilityLabel, TibResult, MOBILITY_EPOCH_S};
use crate::signal_io::{self, Recording, SignalIoError};
use crate::sleepstats::{self, StatsError};
use crate::spiky_filter::{self, FilterError};
use crate::training::{self, SyntheticTraining, TrainError};
use crate::usability::{self, UsabilityError, UsabilityScores, Variant};

/// Sleep scores sit next to the recording as `<stem>.scores.txt`.
pub const SCORES_SUFFIX: &str = ".scores.txt";
pub const REPORT_FILE: &str = "report.json";
/// Sidecar files that share an extension with recordings but are not ones.
pub const SIDECAR_SUFFIXES: [&str; 1] = [".annotations.csv"];

/// Everything that makes a single night unprocessable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCode {
    FileUnreadable,
    HeaderFieldUnparsable,
    TruncatedFile,
    SamplingRateMismatch,
    ChannelMissing,
    AccMissingWhenRequired,
    LengthMismatchEegAcc,
    ScoreLengthMismatch,
    EmptyRecording,
    NonFiniteSamples,
    EpochMultipleViolation,
    ModelIncompatible,
    NoLyingPeriod,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 13] = [
        ErrorCode::FileUnreadable,
        ErrorCode::HeaderFieldUnparsable,
        ErrorCode::TruncatedFile,
        ErrorCode::SamplingRateMismatch,
        ErrorCode::ChannelMissing,
        ErrorCode::AccMissingWhenRequired,
        ErrorCode::LengthMismatchEegAcc,
        ErrorCode::ScoreLengthMismatch,
        ErrorCode::EmptyRecording,
        ErrorCode::NonFiniteSamples,
        ErrorCode::EpochMultipleViolation,
        ErrorCode::ModelIncompatible,
        ErrorCode::NoLyingPeriod,
    ];
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NightError {
    pub code: ErrorCode,
    pub message: String,
}

impl NightError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        NightError {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for NightError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for NightError {}

impl From<SignalIoError> for NightError {
    fn from(e: SignalIoError) -> Self {
        let code = match &e {
            SignalIoError::TruncatedFile { .. } | SignalIoError::RaggedRow { .. } => ErrorCode::TruncatedFile,
            SignalIoError::HeaderFieldUnparsable { .. }
            | SignalIoError::DigitalRangeDegenerate { .. }
            | SignalIoError::PhysicalRangeDegenerate { .. }
            | SignalIoError::InvalidRecording(_) => ErrorCode::HeaderFieldUnparsable,
            SignalIoError::SamplingRateMismatch(_) => ErrorCode::SamplingRateMismatch,
            SignalIoError::NonFiniteSample { .. } | SignalIoError::AmplitudeOutOfDeclaredRange { .. } => {
                ErrorCode::NonFiniteSamples
            }
            SignalIoError::Csv(_) | SignalIoError::Io(_) => ErrorCode::FileUnreadable,
        };
        NightError::new(code, e.to_string())
    }
}

impl From<UsabilityError> for NightError {
    fn from(e: UsabilityError) -> Self {
        let code = match &e {
            UsabilityError::EmptyRecording => ErrorCode::ChannelMissing,
            UsabilityError::Epoching(_) => ErrorCode::EpochMultipleViolation,
            _ => ErrorCode::ModelIncompatible,
        };
        NightError::new(code, e.to_string())
    }
}

impl From<MobilityError> for NightError {
    fn from(e: MobilityError) -> Self {
        let code = match &e {
            MobilityError::NoLyingPeriod { .. } => ErrorCode::NoLyingPeriod,
            MobilityError::RaggedAxes => ErrorCode::LengthMismatchEegAcc,
            MobilityError::Epoching(_) => ErrorCode::EpochMultipleViolation,
            _ => ErrorCode::ModelIncompatible,
        };
        NightError::new(code, e.to_string())
    }
}

impl From<AggregateError> for NightError {
    fn from(e: AggregateError) -> Self {
        let code = match &e {
            AggregateError::NotAMultiple { .. } => ErrorCode::EpochMultipleViolation,
            AggregateError::NoChannels => ErrorCode::ChannelMissing,
            AggregateError::LengthMismatch { .. } | AggregateError::InvalidStage { .. } => {
                ErrorCode::ScoreLengthMismatch
            }
        };
        NightError::new(code, e.to_string())
    }
}

impl From<FilterError> for NightError {
    fn from(e: FilterError) -> Self {
        let code = match &e {
            FilterError::FrequencyAboveNyquist { .. } => ErrorCode::SamplingRateMismatch,
            FilterError::SignalTooShort { .. } => ErrorCode::EmptyRecording,
            FilterError::InvalidDesign(_) => ErrorCode::SamplingRateMismatch,
        };
        NightError::new(code, e.to_string())
    }
}

/// Errors that abort the whole batch.
#[derive(Debug, Error)]
pub enum ReportError {
    #[error("config: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("model {path}: {message}")]
    Model { path: PathBuf, message: String },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

impl ReportError {
    pub(crate) fn length_mismatch(msg: String) -> Self {
        ReportError::LengthMismatch(msg)
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        ReportError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Batch settings. Paths are taken as given; relative ones resolve against
/// the working directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportConfig {
    pub input: PathBuf,
    pub out: PathBuf,
    /// Usability model; a synthetic one is fitted when absent.
    pub model: Option<PathBuf>,
    /// Mobility model; a synthetic one is fitted when absent.
    pub mobility_model: Option<PathBuf>,
    pub epoch_len_s: f64,
    pub sleep_epoch_len_s: f64,
    /// Expected variant of the usability model, or the variant to fit.
    pub variant: Option<Variant>,
    pub despike: bool,
    pub tib_run_epochs: usize,
    pub seed: u64,
    pub workers: usize,
    /// EEG channels that must be present; empty means all channels.
    pub channels: Vec<String>,
    /// Boosting rounds for fitted fallback models.
    pub synthetic_iterations: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            input: PathBuf::from("."),
            out: PathBuf::from("out"),
            model: None,
            mobility_model: None,
            epoch_len_s: usability::DEFAULT_EPOCH_S,
            sleep_epoch_len_s: 30.0,
            variant: None,
            despike: false,
            tib_run_epochs: mobility::DEFAULT_RUN_EPOCHS,
            seed: 0,
            workers: 1,
            channels: Vec::new(),
            synthetic_iterations: 100,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ReportError> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(ReportError::Config(format!("{key}: expected a boolean, got `{v}`"))),
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, ReportError> {
    v.parse()
        .map_err(|_| ReportError::Config(format!("{key}: cannot parse `{v}`")))
}

impl ReportConfig {
    /// Applies one `key = value` setting. Dashes and underscores in keys are
    /// interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ReportError> {
        let v = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "input" => self.input = PathBuf::from(v),
            "out" | "output" => self.out = PathBuf::from(v),
            "model" => self.model = (!v.is_empty()).then(|| PathBuf::from(v)),
            "mobility_model" => self.mobility_model = (!v.is_empty()).then(|| PathBuf::from(v)),
            "epoch_len" => self.epoch_len_s = parse_num(key, v)?,
            "sleep_epoch_len" => self.sleep_epoch_len_s = parse_num(key, v)?,
            "variant" => {
                self.variant = Some(v.parse().map_err(|e: UsabilityError| ReportError::Config(e.to_string()))?)
            }
            "despike" => self.despike = parse_bool(key, v)?,
            "tib_run_epochs" => self.tib_run_epochs = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "workers" => self.workers = parse_num(key, v)?,
            "channels" => {
                self.channels = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            "synthetic_iterations" => self.synthetic_iterations = parse_num(key, v)?,
            other => return Err(ReportError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Reads `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ReportError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ReportError::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ReportError> {
        let mut cfg = ReportConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ReportError> {
        let bad = |m: &str| Err(ReportError::Config(m.to_string()));
        if !(self.epoch_len_s > 0.0 && self.epoch_len_s.is_finite()) {
            return bad("epoch_len must be positive");
        }
        if !(self.sleep_epoch_len_s > 0.0 && self.sleep_epoch_len_s.is_finite()) {
            return bad("sleep_epoch_len must be positive");
        }
        if self.tib_run_epochs == 0 {
            return bad("tib_run_epochs must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if !self.input.is_dir() {
            return Err(ReportError::Config(format!("input {} is not a directory", self.input.display())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NightStatus {
    Ok,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NightReport {
    pub night_id: String,
    pub source: String,
    pub status: NightStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_code: Option<ErrorCode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Written files relative to the output directory.
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedNight {
    pub night_id: String,
    pub error_code: ErrorCode,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub seed: u64,
    pub usability_variant: String,
    pub epoch_len_s: f64,
    pub sleep_epoch_len_s: f64,
    pub processed: usize,
    pub skipped: usize,
    pub nights: Vec<NightReport>,
    /// Unprocessed nights with the error that stopped each of them.
    pub failures: Vec<SkippedNight>,
}

impl BatchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// A recording found in the input directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NightInput {
    pub night_id: String,
    pub recording: PathBuf,
    pub scores: Option<PathBuf>,
}

/// `.edf` and `.csv` recordings in `dir`, sorted by file name. A stem shared
/// by two recordings keeps the extension in the night id.
pub fn discover_nights(dir: &Path) -> Result<Vec<NightInput>, ReportError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| ReportError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && signal_io::RecordingFormat::from_path(p).is_some())
        .filter(|p| {
            let name = file_name(p).to_ascii_lowercase();
            !SIDECAR_SUFFIXES.iter().any(|s| name.ends_with(s))
        })
        .collect();
    files.sort();
    let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for f in &files {
        *seen.entry(stem(f)).or_default() += 1;
    }
    Ok(files
        .into_iter()
        .map(|p| {
            let s = stem(&p);
            let scores = dir.join(format!("{s}{SCORES_SUFFIX}"));
            let night_id = if seen[&s] > 1 {
                p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or(s)
            } else {
                s
            };
            NightInput {
                night_id,
                scores: scores.is_file().then_some(scores),
                recording: p,
            }
        })
        .collect())
}

/// Models shared by every night of a batch.
#[derive(Debug, Clone)]
pub struct Models {
    pub usability: GbtModel,
    pub mobility: GbtModel,
    /// True when the mobility model came from a file, which makes ACC
    /// mandatory.
    pub mobility_required: bool,
}

fn load_model(path: &Path, task: &str) -> Result<GbtModel, ReportError> {
    let text = fs::read_to_string(path).map_err(|e| ReportError::io(path, e))?;
    let model = GbtModel::from_json(&text).map_err(|e| ReportError::Model {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if model.info.task != task {
        return Err(ReportError::Model {
            path: path.to_path_buf(),
            message: format!("expected a {task} model, found task `{}`", model.info.task),
        });
    }
    Ok(model)
}

/// Loads the configured models or fits synthetic stand-ins from `cfg.seed`.
pub fn load_models(cfg: &ReportConfig) -> Result<Models, ReportError> {
    let usability = match &cfg.model {
        Some(p) => {
            let m = load_model(p, "usability")?;
            if let Some(v) = cfg.variant {
                if m.info.variant != v.name() {
                    return Err(ReportError::Model {
                        path: p.clone(),
                        message: format!("model variant `{}` differs from requested `{v}`", m.info.variant),
                    });
                }
            }
            m
        }
        None => {
            let mut opts = SyntheticTraining::new(cfg.seed);
            opts.iterations = cfg.synthetic_iterations;
            opts.epoch_len_s = cfg.epoch_len_s;
            log::info!("fitting a synthetic usability model (seed {})", cfg.seed);
            training::synthetic_usability_model(cfg.variant.unwrap_or(Variant::Lite), &opts)?
        }
    };
    let (mobility, mobility_required) = match &cfg.mobility_model {
        Some(p) => (load_model(p, "mobility")?, true),
        None => {
            log::info!("fitting a synthetic mobility model (seed {})", cfg.seed);
            let m = training::synthetic_mobility_model(
                256,
                MobilityFeatureMode::Stat,
                80,
                cfg.synthetic_iterations.min(60),
                cfg.seed,
            )?;
            (m, false)
        }
    };
    Ok(Models {
        usability,
        mobility,
        mobility_required,
    })
}

/// Outputs of one night, held in memory until the night succeeds.
#[derive(Debug, Default)]
struct NightOutputs {
    files: BTreeMap<String, Vec<u8>>,
    warnings: Vec<String>,
}

impl NightOutputs {
    fn put(&mut self, name: &str, data: impl Into<Vec<u8>>) {
        self.files.insert(name.to_string(), data.into());
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn check_recording(rec: &Recording, cfg: &ReportConfig) -> Result<Recording, NightError> {
    let mut rec = rec.clone();
    if !cfg.channels.is_empty() {
        let mut picked = Vec::new();
        for name in &cfg.channels {
            let ch = rec
                .channels
                .iter()
                .find(|c| &c.label == name)
                .ok_or_else(|| NightError::new(ErrorCode::ChannelMissing, format!("channel `{name}` not found")))?;
            picked.push(ch.clone());
        }
        rec.channels = picked;
    }
    if rec.channels.is_empty() {
        return Err(NightError::new(ErrorCode::ChannelMissing, "no EEG channels"));
    }
    for ch in &rec.channels {
        if let Some(i) = ch.samples.iter().position(|v| !v.is_finite()) {
            return Err(NightError::new(
                ErrorCode::NonFiniteSamples,
                format!("channel `{}` sample {i} is not finite", ch.label),
            ));
        }
    }
    let n = rec.n_samples();
    if rec.channels.iter().any(|c| c.samples.len() != n) {
        return Err(NightError::new(ErrorCode::LengthMismatchEegAcc, "EEG channels differ in length"));
    }
    if let Some(acc) = &rec.acc {
        if !acc.is_consistent() || acc.len() != n {
            return Err(NightError::new(
                ErrorCode::LengthMismatchEegAcc,
                format!("{n} EEG samples against {} ACC samples", acc.len()),
            ));
        }
    }
    let w = window_samples(cfg.epoch_len_s, rec.fs)
        .map_err(|e| NightError::new(ErrorCode::EpochMultipleViolation, e.to_string()))?;
    if n < w {
        return Err(NightError::new(
            ErrorCode::EmptyRecording,
            format!("{n} samples, shorter than one {} s epoch", cfg.epoch_len_s),
        ));
    }
    Ok(rec)
}

fn process_night(night: &NightInput, cfg: &ReportConfig, models: &Models) -> Result<NightOutputs, NightError> {
    let mut out = NightOutputs::default();
    let rec = signal_io::read_recording(&night.recording).map_err(|e| match e {
        SignalIoError::Io(io) => NightError::new(
            ErrorCode::FileUnreadable,
            format!("cannot read {}: {io}", file_name(&night.recording)),
        ),
        other => other.into(),
    })?;
    let mut rec = check_recording(&rec, cfg)?;
    let s_f = aggregate::scaling_factor(cfg.sleep_epoch_len_s, cfg.epoch_len_s)?;

    let model = &models.usability;
    if let Some(layout) = &model.layout {
        if layout.fs != rec.fs {
            return Err(NightError::new(
                ErrorCode::SamplingRateMismatch,
                format!("recording at {} Hz, model expects {} Hz", rec.fs, layout.fs),
            ));
        }
    }
    if let Some(l) = model.info.epoch_len_s {
        if (l - cfg.epoch_len_s).abs() > 1e-9 {
            return Err(NightError::new(
                ErrorCode::ModelIncompatible,
                format!("model trained on {l} s epochs, configured {} s", cfg.epoch_len_s),
            ));
        }
    }

    if cfg.despike {
        let cascade = spiky_filter::default_cascade(f64::from(rec.fs))?;
        for ch in &mut rec.channels {
            ch.samples = spiky_filter::apply_zero_phase(&cascade, &ch.samples)?;
            ch.scale = None;
        }
        let bytes = signal_io::write_edf(&rec)?;
        out.put("despiked.edf", bytes);
    }

    let scores = usability::score_recording(&rec, model, cfg.epoch_len_s)?;
    out.warnings.extend(scores.warnings.iter().cloned());
    out.put("usability.csv", scores.to_csv());
    let graph = svg::usability_graph(&rec, &scores, &format!("{} usability", night.night_id))
        .map_err(|e| NightError::new(ErrorCode::ScoreLengthMismatch, e.to_string()))?;
    out.put("usability.svg", graph);

    let (mob, tib) = night_tib(&rec, cfg, models, &mut out)?;

    let Some(scores_path) = &night.scores else {
        out.warnings.push("no sleep scores; statistics not computed".into());
        return Ok(out);
    };
    let text = fs::read_to_string(scores_path).map_err(|e| {
        NightError::new(ErrorCode::FileUnreadable, format!("cannot read {}: {e}", file_name(scores_path)))
    })?;
    let s_s = aggregate::parse_scores(&text)?;
    let agg = aggregate_scores(&scores, &s_s, s_f)?;
    if agg.truncated {
        out.warnings.push("sleep scores and usability differed by one epoch; truncated".into());
    }
    out.put("artifact_rejected.txt", aggregate::scores_to_lines(&agg.s_ar));
    out.put(
        "artifact_rejected.csv",
        aggregate::scores_to_csv(&agg.s_ar, cfg.sleep_epoch_len_s, aggregate::parse_start_time(&rec.start_time)),
    );
    let stats = match sleepstats::compute_stats(&agg.s_ar, cfg.sleep_epoch_len_s, tib.as_ref()) {
        Ok(s) => s,
        Err(StatsError::NoSleepDetected(s)) => {
            out.warnings.push("no sleep epoch detected".into());
            *s
        }
        Err(e) => return Err(NightError::new(ErrorCode::ScoreLengthMismatch, e.to_string())),
    };
    out.put("stats.json", stats.to_json());
    let hyp = svg::hypnogram(
        &agg.s_ar,
        cfg.sleep_epoch_len_s,
        mob.as_deref().map(|m| (m, MOBILITY_EPOCH_S)),
        tib.as_ref(),
        &format!("{} hypnogram", night.night_id),
    )
    .map_err(|e| NightError::new(ErrorCode::ScoreLengthMismatch, e.to_string()))?;
    out.put("hypnogram.svg", hyp);
    Ok(out)
}

type TibOutcome = (Option<Vec<MobilityLabel>>, Option<TibResult>);

fn night_tib(rec: &Recording, cfg: &ReportConfig, models: &Models, out: &mut NightOutputs) -> Result<TibOutcome, NightError> {
    let Some(acc) = &rec.acc else {
        if models.mobility_required {
            return Err(NightError::new(
                ErrorCode::AccMissingWhenRequired,
                "a mobility model is configured but the recording has no ACC",
            ));
        }
        out.warnings.push("no ACC; time in bed not detected".into());
        return Ok((None, None));
    };
    let mode = models
        .mobility
        .layout
        .as_ref()
        .and_then(|l| l.mobility_mode())
        .ok_or_else(|| NightError::new(ErrorCode::ModelIncompatible, "mobility model has no mobility layout"))?;
    let labels = mobility::classify_mobility(acc, rec.fs, &models.mobility, MOBILITY_EPOCH_S, mode)?;
    out.put("mobility.csv", mobility::mobility_csv(&labels, MOBILITY_EPOCH_S));
    let tib = mobility::detect_tib(&labels, cfg.tib_run_epochs)?;
    out.put("tib.json", serde_json::to_string_pretty(&tib).expect("tib serializes"));
    Ok((Some(labels), Some(tib)))
}

fn aggregate_scores(scores: &UsabilityScores, s_s: &[i8], s_f: usize) -> Result<aggregate::Aggregation, NightError> {
    let expected = scores.n_epochs() / s_f;
    if expected.abs_diff(s_s.len()) > 1 {
        return Err(NightError::new(
            ErrorCode::ScoreLengthMismatch,
            format!("{} sleep epochs, recording holds {expected}", s_s.len()),
        ));
    }
    Ok(aggregate::aggregate(&scores.labels, s_s, s_f)?)
}

fn write_night(out_dir: &Path, night_id: &str, outputs: &NightOutputs) -> std::io::Result<Vec<String>> {
    let staging = out_dir.join(format!(".staging-{night_id}"));
    let final_dir = out_dir.join(night_id);
    let result = (|| {
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging)?;
        for (name, data) in &outputs.files {
            fs::write(staging.join(name), data)?;
        }
        if final_dir.exists() {
            fs::remove_dir_all(&final_dir)?;
        }
        fs::rename(&staging, &final_dir)
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result?;
    Ok(outputs.files.keys().map(|n| format!("{night_id}/{n}")).collect())
}

/// Runs one night end to end. A failing night leaves nothing behind in the
/// output directory (an older result for the same night is removed too).
pub fn run_night(night: &NightInput, cfg: &ReportConfig, models: &Models) -> NightReport {
    let source = file_name(&night.recording);
    let result = process_night(night, cfg, models).and_then(|outputs| {
        write_night(&cfg.out, &night.night_id, &outputs)
            .map(|paths| (paths, outputs.warnings))
            .map_err(|e| NightError::new(ErrorCode::FileUnreadable, format!("cannot write outputs: {e}")))
    });
    match result {
        Ok((outputs, warnings)) => NightReport {
            night_id: night.night_id.clone(),
            source,
            status: NightStatus::Ok,
            error_code: None,
            error: None,
            outputs,
            warnings,
        },
        Err(e) => {
            let stale = cfg.out.join(&night.night_id);
            if stale.exists() {
                let _ = fs::remove_dir_all(stale);
            }
            log::warn!("skipping {}: {e}", night.night_id);
            NightReport {
                night_id: night.night_id.clone(),
                source,
                status: NightStatus::Skipped,
                error_code: Some(e.code),
                error: Some(e.message),
                outputs: Vec::new(),
                warnings: Vec::new(),
            }
        }
    }
}

/// Processes every night under `cfg.input` and writes `report.json`. Only
/// configuration, model and output-directory problems are returned as errors.
pub fn run_pipeline(cfg: &ReportConfig) -> Result<BatchReport, ReportError> {
    cfg.validate()?;
    let nights = discover_nights(&cfg.input)?;
    fs::create_dir_all(&cfg.out).map_err(|e| ReportError::io(&cfg.out, e))?;
    let models = load_models(cfg)?;
    run_with_models(cfg, &models, &nights)
}

pub fn run_with_models(cfg: &ReportConfig, models: &Models, nights: &[NightInput]) -> Result<BatchReport, ReportError> {
    let ids: BTreeSet<&str> = nights.iter().map(|n| n.night_id.as_str()).collect();
    if ids.len() != nights.len() {
        return Err(ReportError::Config("duplicate night ids".into()));
    }
    fs::create_dir_all(&cfg.out).map_err(|e| ReportError::io(&cfg.out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| ReportError::Pool(e.to_string()))?;
    let mut reports: Vec<NightReport> =
        pool.install(|| nights.par_iter().map(|n| run_night(n, cfg, models)).collect());
    reports.sort_by(|a, b| a.night_id.cmp(&b.night_id));
    let failures: Vec<SkippedNight> = reports
        .iter()
        .filter_map(|r| {
            Some(SkippedNight {
                night_id: r.night_id.clone(),
                error_code: r.error_code?,
                error: r.error.clone().unwrap_or_default(),
            })
        })
        .collect();
    let batch = BatchReport {
        seed: cfg.seed,
        usability_variant: models.usability.info.variant.clone(),
        epoch_len_s: cfg.epoch_len_s,
        sleep_epoch_len_s: cfg.sleep_epoch_len_s,
        processed: reports.len() - failures.len(),
        skipped: failures.len(),
        nights: reports,
        failures,
    };
    let path = cfg.out.join(REPORT_FILE);
    fs::write(&path, batch.to_json()).map_err(|e| ReportError::io(&path, e))?;
    Ok(batch)
}
