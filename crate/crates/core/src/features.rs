//! Feature extraction: accelerometer norm, STFT power maps, Welch PSD, and a
//! fixed set of 24 statistical/temporal/spectral descriptors per segment.
//!
//! Feature vectors are described by a [`FeatureLayout`], an ordered list of
//! blocks. The layout is stored alongside trained models so that a model
//! only ever sees vectors with the layout it was trained on.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal_io::TriAxialAcc;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("segment of {len} samples is shorter than the {needed}-sample window")]
    SegmentTooShort { len: usize, needed: usize },
    #[error("invalid spectrogram configuration: {0}")]
    InvalidConfig(String),
    #[error("feature vector has non-finite value at index {0}")]
    NonFinite(usize),
}

/// Pointwise Euclidean norm of the three axes, in g.
pub fn acc_norm(acc: &TriAxialAcc) -> Vec<f64> {
    acc.ax
        .iter()
        .zip(&acc.ay)
        .zip(&acc.az)
        .map(|((x, y), z)| (x * x + y * y + z * z).sqrt())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Taper {
    /// Tukey window; `alpha` is the tapered fraction.
    TaperedCosine { alpha: f64 },
    /// Hann window.
    RaisedCosine,
    Rectangular,
}

impl Taper {
    /// Periodic (DFT-even) window of length `n`.
    pub fn window(self, n: usize) -> Vec<f64> {
        match self {
            Taper::Rectangular => vec![1.0; n],
            Taper::RaisedCosine => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
            Taper::TaperedCosine { alpha } => {
                let mut w = tukey_symmetric(n + 1, alpha);
                w.truncate(n);
                w
            }
        }
    }
}

fn tukey_symmetric(m: usize, alpha: f64) -> Vec<f64> {
    if alpha <= 0.0 || m < 2 {
        return vec![1.0; m];
    }
    if alpha >= 1.0 {
        return (0..m)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (m - 1) as f64).cos())
            .collect();
    }
    let last = (m - 1) as f64;
    let width = (alpha * last / 2.0).floor() as usize;
    (0..m)
        .map(|i| {
            let n = i as f64;
            if i <= width {
                0.5 * (1.0 + (PI * (-1.0 + 2.0 * n / alpha / last)).cos())
            } else if i >= m - width - 1 {
                0.5 * (1.0 + (PI * (-2.0 / alpha + 1.0 + 2.0 * n / alpha / last)).cos())
            } else {
                1.0
            }
        })
        .collect()
}

thread_local! {
    static FFT_PLANS: RefCell<HashMap<usize, Arc<dyn Fft<f64>>>> = RefCell::new(HashMap::new());
}

fn forward_fft(n: usize) -> Arc<dyn Fft<f64>> {
    FFT_PLANS.with(|plans| {
        plans
            .borrow_mut()
            .entry(n)
            .or_insert_with(|| FftPlanner::new().plan_fft_forward(n))
            .clone()
    })
}

/// `|DFT(x · w)|²` for the non-negative frequency bins `0..=n/2`.
fn windowed_power(x: &[f64], window: &[f64], buf: &mut Vec<Complex<f64>>) -> Vec<f64> {
    let n = window.len();
    buf.clear();
    buf.extend(x.iter().zip(window).map(|(v, w)| Complex::new(v * w, 0.0)));
    forward_fft(n).process(buf);
    buf[..=n / 2].iter().map(|c| c.norm_sqr()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramConfig {
    pub fs: u32,
    pub segment_len: usize,
    pub hop: usize,
    pub window: Taper,
    pub one_sided: bool,
}

impl SpectrogramConfig {
    pub fn new(fs: u32) -> Self {
        SpectrogramConfig {
            fs,
            segment_len: 256,
            hop: 224,
            window: Taper::TaperedCosine { alpha: 0.25 },
            one_sided: true,
        }
    }

    pub fn bins(&self) -> usize {
        if self.one_sided {
            self.segment_len / 2 + 1
        } else {
            self.segment_len
        }
    }

    pub fn frames(&self, len: usize) -> Result<usize, FeatureError> {
        self.check()?;
        if len < self.segment_len {
            return Err(FeatureError::SegmentTooShort {
                len,
                needed: self.segment_len,
            });
        }
        Ok((len - self.segment_len) / self.hop + 1)
    }

    fn check(&self) -> Result<(), FeatureError> {
        if self.hop == 0 || self.hop > self.segment_len || self.segment_len == 0 {
            return Err(FeatureError::InvalidConfig(format!(
                "need 0 < hop ({}) <= segment_len ({})",
                self.hop, self.segment_len
            )));
        }
        Ok(())
    }
}

/// Power map stored row-major as `frames × bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub power: Vec<f64>,
}

impl Spectrogram {
    pub fn get(&self, frame: usize, bin: usize) -> f64 {
        self.power[frame * self.bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.power[frame * self.bins..(frame + 1) * self.bins]
    }

    pub fn from_flat(frames: usize, bins: usize, power: Vec<f64>) -> Self {
        assert_eq!(power.len(), frames * bins);
        Spectrogram { frames, bins, power }
    }
}

/// Magnitude-squared STFT of `x` (no detrending, no density scaling).
pub fn spectrogram(x: &[f64], cfg: &SpectrogramConfig) -> Result<Spectrogram, FeatureError> {
    let frames = cfg.frames(x.len())?;
    let window = cfg.window.window(cfg.segment_len);
    let mut buf = Vec::with_capacity(cfg.segment_len);
    let mut power = Vec::with_capacity(frames * cfg.bins());
    for t in 0..frames {
        let seg = &x[t * cfg.hop..t * cfg.hop + cfg.segment_len];
        if cfg.one_sided {
            power.extend(windowed_power(seg, &window, &mut buf));
        } else {
            buf.clear();
            buf.extend(seg.iter().zip(&window).map(|(v, w)| Complex::new(v * w, 0.0)));
            forward_fft(cfg.segment_len).process(&mut buf);
            power.extend(buf.iter().map(|c| c.norm_sqr()));
        }
    }
    Ok(Spectrogram {
        frames,
        bins: cfg.bins(),
        power,
    })
}

/// EEG map followed by the accelerometer-norm map, each flattened row by row.
/// A missing accelerometer contributes an all-zero block of the same size.
pub fn spectrogram_features(
    eeg: &[f64],
    anorm: Option<&[f64]>,
    cfg: &SpectrogramConfig,
) -> Result<Vec<f64>, FeatureError> {
    let mut out = spectrogram(eeg, cfg)?.power;
    match anorm {
        Some(a) => out.extend(spectrogram(a, cfg)?.power),
        None => out.resize(2 * out.len(), 0.0),
    }
    Ok(out)
}

/// Welch power spectral density estimate (density scaling, one-sided).
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub psd: Vec<f64>,
}

impl Psd {
    pub fn resolution(&self) -> f64 {
        self.freqs.get(1).copied().unwrap_or(0.0)
    }

    /// Integrated power over `[lo, hi)` Hz.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        let df = self.resolution();
        self.freqs
            .iter()
            .zip(&self.psd)
            .filter(|(f, _)| **f >= lo && **f < hi)
            .map(|(_, p)| p * df)
            .sum()
    }
}

pub fn welch_psd(
    x: &[f64],
    fs: u32,
    segment_len: usize,
    overlap: usize,
    taper: Taper,
) -> Result<Psd, FeatureError> {
    if x.len() < segment_len || segment_len == 0 {
        return Err(FeatureError::SegmentTooShort {
            len: x.len(),
            needed: segment_len,
        });
    }
    if overlap >= segment_len {
        return Err(FeatureError::InvalidConfig(format!(
            "overlap {overlap} must be below the segment length {segment_len}"
        )));
    }
    let fs = f64::from(fs);
    let hop = segment_len - overlap;
    let window = taper.window(segment_len);
    let norm = fs * window.iter().map(|w| w * w).sum::<f64>();
    let bins = segment_len / 2 + 1;
    let n_seg = (x.len() - segment_len) / hop + 1;
    let mut acc = vec![0.0; bins];
    let mut buf = Vec::with_capacity(segment_len);
    for s in 0..n_seg {
        let power = windowed_power(&x[s * hop..s * hop + segment_len], &window, &mut buf);
        for (a, p) in acc.iter_mut().zip(power) {
            *a += p;
        }
    }
    let nyquist_bin = (segment_len % 2 == 0).then_some(segment_len / 2);
    let psd = acc
        .into_iter()
        .enumerate()
        .map(|(k, p)| {
            let one_sided = if k == 0 || Some(k) == nyquist_bin { 1.0 } else { 2.0 };
            one_sided * p / (norm * n_seg as f64)
        })
        .collect();
    let freqs = (0..bins).map(|k| k as f64 * fs / segment_len as f64).collect();
    Ok(Psd { freqs, psd })
}

/// EEG bands used by the statistical feature set, in Hz.
pub const EEG_BANDS: [(&str, f64, f64); 6] = [
    ("delta", 0.5, 4.0),
    ("theta", 4.0, 8.0),
    ("alpha", 8.0, 12.0),
    ("sigma", 12.0, 16.0),
    ("beta", 16.0, 30.0),
    ("high", 30.0, 48.0),
];

/// Octave-spaced bands used by the Welch-only mobility features, in Hz.
pub const MOBILITY_BANDS: [(&str, f64, f64); 8] = [
    ("b0_0.5", 0.0, 0.5),
    ("b0.5_1", 0.5, 1.0),
    ("b1_2", 1.0, 2.0),
    ("b2_4", 2.0, 4.0),
    ("b4_8", 4.0, 8.0),
    ("b8_16", 8.0, 16.0),
    ("b16_32", 16.0, 32.0),
    ("b32_inf", 32.0, f64::INFINITY),
];

pub const STAT_FEATURE_NAMES: [&str; 24] = [
    "mean",
    "median",
    "std",
    "variance",
    "min",
    "max",
    "peak_to_peak",
    "rms",
    "skewness",
    "kurtosis",
    "zero_crossings",
    "mean_abs_diff",
    "hjorth_activity",
    "hjorth_mobility",
    "hjorth_complexity",
    "spectral_centroid",
    "spectral_entropy",
    "total_power",
    "band_delta",
    "band_theta",
    "band_alpha",
    "band_sigma",
    "band_beta",
    "band_high",
];

pub const WELCH_SEGMENT: usize = 256;
pub const WELCH_OVERLAP: usize = 128;

fn welch_default(x: &[f64], fs: u32) -> Psd {
    let seg = WELCH_SEGMENT.min(x.len());
    welch_psd(x, fs, seg, seg / 2, Taper::RaisedCosine).expect("segment fits by construction")
}

fn central_moments(x: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (mean, m2 / n, m3 / n, m4 / n)
}

fn variance(x: &[f64]) -> f64 {
    central_moments(x).1
}

/// The 24 descriptors of [`STAT_FEATURE_NAMES`], in that order.
///
/// Moments are population moments; kurtosis is excess kurtosis. Degenerate
/// ratios (constant input) are reported as 0. Spectral descriptors come from
/// a Welch PSD with 256-sample Hann segments (shorter inputs use one segment
/// of their own length).
pub fn stat_features(x: &[f64], fs: u32) -> [f64; 24] {
    assert!(x.len() >= 2, "statistical features need at least two samples");
    let (mean, var, m3, m4) = central_moments(x);
    let std = var.sqrt();
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let (min, max) = (sorted[0], sorted[n - 1]);
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let tiny = 1e-24;
    let (skew, kurt) = if var > tiny {
        (m3 / var.powf(1.5), m4 / (var * var) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let zero_crossings = x.windows(2).filter(|w| w[0] * w[1] < 0.0).count() as f64;
    let diff: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let mean_abs_diff = diff.iter().map(|d| d.abs()).sum::<f64>() / diff.len() as f64;
    let mobility_of = |v: f64, dv: f64| if v > tiny { (dv / v).sqrt() } else { 0.0 };
    let var_d = variance(&diff);
    let mobility = mobility_of(var, var_d);
    let complexity = if mobility > 0.0 && diff.len() >= 2 {
        let dd: Vec<f64> = diff.windows(2).map(|w| w[1] - w[0]).collect();
        mobility_of(var_d, variance(&dd)) / mobility
    } else {
        0.0
    };

    let psd = welch_default(x, fs);
    let total: f64 = psd.psd.iter().sum();
    let (centroid, entropy) = if total > 0.0 {
        let centroid = psd.freqs.iter().zip(&psd.psd).map(|(f, p)| f * p).sum::<f64>() / total;
        let h: f64 = psd
            .psd
            .iter()
            .map(|p| p / total)
            .filter(|q| *q > 0.0)
            .map(|q| -q * q.log2())
            .sum();
        (centroid, h / (psd.psd.len() as f64).log2())
    } else {
        (0.0, 0.0)
    };
    let total_power = total * psd.resolution();
    let band = |i: usize| psd.band_power(EEG_BANDS[i].1, EEG_BANDS[i].2);

    [
        mean,
        median,
        std,
        var,
        min,
        max,
        max - min,
        rms,
        skew,
        kurt,
        zero_crossings,
        mean_abs_diff,
        var,
        mobility,
        complexity,
        centroid,
        entropy,
        total_power,
        band(0),
        band(1),
        band(2),
        band(3),
        band(4),
        band(5),
    ]
}

/// Band powers over [`MOBILITY_BANDS`] from the default Welch PSD.
pub fn welch_band_features(x: &[f64], fs: u32) -> [f64; 8] {
    let psd = welch_default(x, fs);
    MOBILITY_BANDS.map(|(_, lo, hi)| psd.band_power(lo, hi))
}

/// Signal a feature block is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Eeg,
    AccNorm,
    AccX,
    AccY,
    AccZ,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Eeg => "eeg",
            Source::AccNorm => "acc",
            Source::AccX => "acc_x",
            Source::AccY => "acc_y",
            Source::AccZ => "acc_z",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureBlock {
    Spectrogram {
        source: Source,
        frames: usize,
        bins: usize,
    },
    Stats {
        source: Source,
    },
    WelchBands {
        source: Source,
    },
}

impl FeatureBlock {
    pub fn len(&self) -> usize {
        match self {
            FeatureBlock::Spectrogram { frames, bins, .. } => frames * bins,
            FeatureBlock::Stats { .. } => STAT_FEATURE_NAMES.len(),
            FeatureBlock::WelchBands { .. } => MOBILITY_BANDS.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn source(&self) -> Source {
        match self {
            FeatureBlock::Spectrogram { source, .. }
            | FeatureBlock::Stats { source }
            | FeatureBlock::WelchBands { source } => *source,
        }
    }

    fn names(&self) -> Vec<String> {
        let src = self.source();
        match self {
            FeatureBlock::Spectrogram { frames, bins, .. } => (0..*frames)
                .flat_map(|t| (0..*bins).map(move |f| format!("spec_{src}[{t},{f}]")))
                .collect(),
            FeatureBlock::Stats { .. } => STAT_FEATURE_NAMES
                .iter()
                .map(|n| format!("stat_{src}.{n}"))
                .collect(),
            FeatureBlock::WelchBands { .. } => MOBILITY_BANDS
                .iter()
                .map(|(n, _, _)| format!("welch_{src}.{n}"))
                .collect(),
        }
    }
}

/// Feature family used by the mobility classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityFeatureMode {
    Stat,
    Welch,
}

/// Borrowed signals for one epoch; missing sources yield zero blocks.
#[derive(Debug, Clone, Copy, Default)]
pub struct EpochSignals<'a> {
    pub eeg: Option<&'a [f64]>,
    pub anorm: Option<&'a [f64]>,
    pub acc: Option<[&'a [f64]; 3]>,
}

impl<'a> EpochSignals<'a> {
    fn get(&self, source: Source) -> Option<&'a [f64]> {
        match source {
            Source::Eeg => self.eeg,
            Source::AccNorm => self.anorm,
            Source::AccX => self.acc.map(|a| a[0]),
            Source::AccY => self.acc.map(|a| a[1]),
            Source::AccZ => self.acc.map(|a| a[2]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub fs: u32,
    pub window_samples: usize,
    pub blocks: Vec<FeatureBlock>,
}

impl FeatureLayout {
    /// Spectrogram blocks for EEG and ACC norm, followed by the statistical
    /// blocks unless `lite`.
    pub fn usability(fs: u32, window_samples: usize, lite: bool) -> Result<Self, FeatureError> {
        let cfg = SpectrogramConfig::new(fs);
        let frames = cfg.frames(window_samples)?;
        let bins = cfg.bins();
        let mut blocks = vec![
            FeatureBlock::Spectrogram {
                source: Source::Eeg,
                frames,
                bins,
            },
            FeatureBlock::Spectrogram {
                source: Source::AccNorm,
                frames,
                bins,
            },
        ];
        if !lite {
            blocks.push(FeatureBlock::Stats { source: Source::Eeg });
            blocks.push(FeatureBlock::Stats {
                source: Source::AccNorm,
            });
        }
        Ok(FeatureLayout {
            fs,
            window_samples,
            blocks,
        })
    }

    pub fn mobility(fs: u32, window_samples: usize, mode: MobilityFeatureMode) -> Result<Self, FeatureError> {
        if window_samples < 2 {
            return Err(FeatureError::SegmentTooShort {
                len: window_samples,
                needed: 2,
            });
        }
        let blocks = [Source::AccX, Source::AccY, Source::AccZ]
            .into_iter()
            .map(|source| match mode {
                MobilityFeatureMode::Stat => FeatureBlock::Stats { source },
                MobilityFeatureMode::Welch => FeatureBlock::WelchBands { source },
            })
            .collect();
        Ok(FeatureLayout {
            fs,
            window_samples,
            blocks,
        })
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(FeatureBlock::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_lite(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| matches!(b, FeatureBlock::Spectrogram { .. }))
    }

    pub fn mobility_mode(&self) -> Option<MobilityFeatureMode> {
        match self.blocks.first()? {
            FeatureBlock::Stats { source: Source::AccX } => Some(MobilityFeatureMode::Stat),
            FeatureBlock::WelchBands { source: Source::AccX } => Some(MobilityFeatureMode::Welch),
            _ => None,
        }
    }

    /// Offset of each block in the flat vector.
    pub fn offsets(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .scan(0, |acc, b| {
                let at = *acc;
                *acc += b.len();
                Some(at)
            })
            .collect()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.blocks.iter().flat_map(FeatureBlock::names).collect()
    }

    pub fn extract(&self, signals: &EpochSignals<'_>) -> Result<Vec<f64>, FeatureError> {
        let cfg = SpectrogramConfig::new(self.fs);
        let mut out = Vec::with_capacity(self.len());
        for block in &self.blocks {
            let Some(x) = signals.get(block.source()) else {
                out.resize(out.len() + block.len(), 0.0);
                continue;
            };
            if x.len() != self.window_samples {
                return Err(FeatureError::InvalidConfig(format!(
                    "{} segment has {} samples, layout expects {}",
                    block.source(),
                    x.len(),
                    self.window_samples
                )));
            }
            match block {
                FeatureBlock::Spectrogram { .. } => out.extend(spectrogram(x, &cfg)?.power),
                FeatureBlock::Stats { .. } => out.extend(stat_features(x, self.fs)),
                FeatureBlock::WelchBands { .. } => out.extend(welch_band_features(x, self.fs)),
            }
        }
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite(i));
        }
        Ok(out)
    }
}

/// Feature matrix as CSV with the layout's column names as header.
pub fn feature_matrix_csv(layout: &FeatureLayout, rows: &[Vec<f64>]) -> String {
    let mut out = layout.column_names().join(",");
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}
