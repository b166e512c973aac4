//! Per-channel usability scoring with a trained boosting model.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::epoching::{window_samples, ClassLabel, EpochSample, EpochingError};
use crate::features::{acc_norm, EpochSignals, FeatureError, FeatureLayout};
use crate::gbt::{self, GbtError, GbtModel, LabeledMatrix, ModelInfo, TrainConfig};
use crate::signal_io::Recording;

/// Channels whose 99.9th percentile amplitude exceeds this get a warning.
pub const AMPLITUDE_WARN_UV: f64 = 2000.0;
pub const DEFAULT_EPOCH_S: f64 = 10.0;
pub const WEIGHTED_M_FACTOR: f64 = 3.0;

#[derive(Debug, Error)]
pub enum UsabilityError {
    #[error("recording has no EEG channels")]
    EmptyRecording,
    #[error("model expects {expected} features, a {epoch_len_s} s epoch at {fs} Hz gives {found}")]
    FeatureCountMismatch {
        expected: usize,
        found: usize,
        epoch_len_s: f64,
        fs: u32,
    },
    #[error("unknown model variant '{0}'")]
    UnknownVariant(String),
    #[error("epoch {index} has no label")]
    MissingLabel { index: usize },
    #[error("scores csv line {line}: {reason}")]
    ScoresCsv { line: usize, reason: String },
    #[error(transparent)]
    Epoching(#[from] EpochingError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Gbt(#[from] GbtError),
}

/// Model variants: feature set (full or spectrogram-only), label set (five
/// classes or usable/unusable) and an optional MShaped weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Default,
    Lite,
    Binary,
    WeightedM,
    LiteBinary,
    LiteWeightedM,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Default,
        Variant::Lite,
        Variant::Binary,
        Variant::WeightedM,
        Variant::LiteBinary,
        Variant::LiteWeightedM,
    ];

    pub fn is_lite(self) -> bool {
        matches!(self, Variant::Lite | Variant::LiteBinary | Variant::LiteWeightedM)
    }

    pub fn is_binary(self) -> bool {
        matches!(self, Variant::Binary | Variant::LiteBinary)
    }

    pub fn is_weighted_m(self) -> bool {
        matches!(self, Variant::WeightedM | Variant::LiteWeightedM)
    }

    pub fn num_classes(self) -> usize {
        if self.is_binary() {
            2
        } else {
            ClassLabel::ALL.len()
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Default => "default",
            Variant::Lite => "lite",
            Variant::Binary => "binary",
            Variant::WeightedM => "weighted-m",
            Variant::LiteBinary => "lite-binary",
            Variant::LiteWeightedM => "lite-weighted-m",
        }
    }

    pub fn class_names(self) -> Vec<String> {
        if self.is_binary() {
            vec!["Usable".into(), "Unusable".into()]
        } else {
            ClassLabel::ALL.iter().map(|c| c.name().to_string()).collect()
        }
    }

    /// Training target for an epoch label under this variant.
    pub fn target(self, label: ClassLabel) -> usize {
        if self.is_binary() {
            usize::from(label != ClassLabel::Usable)
        } else {
            label.index()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = UsabilityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == t)
            .ok_or_else(|| UsabilityError::UnknownVariant(s.to_string()))
    }
}

/// Feature rows for a set of epochs, computed in parallel.
pub fn epoch_features(
    samples: &[EpochSample],
    layout: &FeatureLayout,
) -> Result<Vec<Vec<f64>>, UsabilityError> {
    samples
        .par_iter()
        .map(|s| {
            layout
                .extract(&EpochSignals {
                    eeg: Some(&s.eeg),
                    anorm: s.anorm.as_deref(),
                    acc: None,
                })
                .map_err(UsabilityError::from)
        })
        .collect()
}

/// Training matrix for `variant`; every sample must carry a label.
pub fn usability_matrix(
    samples: &[EpochSample],
    layout: &FeatureLayout,
    variant: Variant,
) -> Result<LabeledMatrix, UsabilityError> {
    let rows = epoch_features(samples, layout)?;
    let mut m = LabeledMatrix::new(layout.len());
    for (i, (row, s)) in rows.iter().zip(samples).enumerate() {
        let label = s.label.ok_or(UsabilityError::MissingLabel { index: i })?;
        m.push(row, variant.target(label))?;
    }
    Ok(m)
}

/// Fits a usability model. `base` supplies the boosting hyperparameters;
/// class count and weights are set from the variant.
pub fn train_usability(
    samples: &[EpochSample],
    variant: Variant,
    fs: u32,
    epoch_len_s: f64,
    base: &TrainConfig,
) -> Result<GbtModel, UsabilityError> {
    let w = window_samples(epoch_len_s, fs)?;
    let layout = FeatureLayout::usability(fs, w, variant.is_lite())?;
    let data = usability_matrix(samples, &layout, variant)?;
    train_on_matrix(&data, layout, variant, epoch_len_s, base)
}

/// Like [`train_usability`] with precomputed features.
pub fn train_on_matrix(
    data: &LabeledMatrix,
    layout: FeatureLayout,
    variant: Variant,
    epoch_len_s: f64,
    base: &TrainConfig,
) -> Result<GbtModel, UsabilityError> {
    let k = variant.num_classes();
    let mut cfg = base.clone();
    cfg.num_classes = k;
    cfg.class_weights = vec![1.0; k];
    if variant.is_weighted_m() {
        cfg.class_weights[ClassLabel::MShaped.index()] = WEIGHTED_M_FACTOR;
    }
    let mut model = gbt::fit(data, &cfg)?;
    model.layout = Some(layout);
    model.info = ModelInfo {
        task: "usability".into(),
        variant: variant.name().into(),
        class_names: variant.class_names(),
        epoch_len_s: Some(epoch_len_s),
    };
    Ok(model)
}

/// Labels per channel, one per complete epoch. Binary models emit 0 for
/// usable and 1 for unusable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsabilityScores {
    pub channels: Vec<String>,
    pub labels: Vec<Vec<u8>>,
    pub epoch_len_s: f64,
    pub warnings: Vec<String>,
}

impl UsabilityScores {
    pub fn n_epochs(&self) -> usize {
        self.labels.first().map_or(0, Vec::len)
    }

    /// CSV with header `channel,epoch_index,label`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("channel,epoch_index,label\n");
        for (name, labels) in self.channels.iter().zip(&self.labels) {
            for (i, l) in labels.iter().enumerate() {
                out.push_str(&format!("{name},{i},{l}\n"));
            }
        }
        out
    }

    /// Inverse of [`UsabilityScores::to_csv`]. Channels keep their order of
    /// first appearance and epochs must be listed in order.
    pub fn from_csv(text: &str, epoch_len_s: f64) -> Result<Self, UsabilityError> {
        let mut channels: Vec<String> = Vec::new();
        let mut labels: Vec<Vec<u8>> = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let bad = |reason: &str| UsabilityError::ScoresCsv {
                line: i + 1,
                reason: reason.to_string(),
            };
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.rsplitn(3, ',');
            let (Some(label), Some(idx), Some(name)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad("expected channel,epoch_index,label"));
            };
            let label: u8 = label.trim().parse().map_err(|_| bad("label is not an integer"))?;
            if label > 4 {
                return Err(bad("label outside 0..=4"));
            }
            let idx: usize = idx.trim().parse().map_err(|_| bad("epoch index is not an integer"))?;
            let c = match channels.iter().position(|c| c == name) {
                Some(c) => c,
                None => {
                    channels.push(name.to_string());
                    labels.push(Vec::new());
                    channels.len() - 1
                }
            };
            if idx != labels[c].len() {
                return Err(bad("epoch indices out of order"));
            }
            labels[c].push(label);
        }
        Ok(UsabilityScores {
            channels,
            labels,
            epoch_len_s,
            warnings: Vec::new(),
        })
    }
}

/// 99.9th percentile of |x| (nearest rank).
pub fn amplitude_percentile(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mut a: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    let rank = ((0.999 * a.len() as f64).ceil() as usize).clamp(1, a.len()) - 1;
    let (_, v, _) = a.select_nth_unstable_by(rank, f64::total_cmp);
    *v
}

fn layout_for(model: &GbtModel, fs: u32, w: usize, epoch_len_s: f64) -> Result<FeatureLayout, UsabilityError> {
    let lite = match &model.layout {
        Some(l) => l.is_lite(),
        None => FeatureLayout::usability(fs, w, true)?.len() == model.feature_count,
    };
    let layout = FeatureLayout::usability(fs, w, lite)?;
    if layout.len() != model.feature_count {
        return Err(UsabilityError::FeatureCountMismatch {
            expected: model.feature_count,
            found: layout.len(),
            epoch_len_s,
            fs,
        });
    }
    Ok(layout)
}

/// Scores every EEG channel of `rec` epoch by epoch. The ACC block is
/// zero-filled when the recording has no accelerometer.
pub fn score_recording(
    rec: &Recording,
    model: &GbtModel,
    epoch_len_s: f64,
) -> Result<UsabilityScores, UsabilityError> {
    if rec.channels.is_empty() {
        return Err(UsabilityError::EmptyRecording);
    }
    let w = window_samples(epoch_len_s, rec.fs)?;
    let layout = layout_for(model, rec.fs, w, epoch_len_s)?;
    let anorm = rec.acc.as_ref().map(acc_norm);
    let n_epochs = rec.n_samples() / w;

    let mut warnings = Vec::new();
    for ch in &rec.channels {
        let p = amplitude_percentile(&ch.samples);
        if p > AMPLITUDE_WARN_UV {
            let msg = format!(
                "channel {}: 99.9th percentile amplitude {p:.1} uV exceeds {AMPLITUDE_WARN_UV} uV; data may need normalization",
                ch.label
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }

    let jobs: Vec<(usize, usize)> = (0..rec.channels.len())
        .flat_map(|c| (0..n_epochs).map(move |e| (c, e)))
        .collect();
    let flat: Vec<u8> = jobs
        .par_iter()
        .map(|&(c, e)| {
            let r = e * w..(e + 1) * w;
            let x = layout.extract(&EpochSignals {
                eeg: Some(&rec.channels[c].samples[r.clone()]),
                anorm: anorm.as_ref().and_then(|a| a.get(r)),
                acc: None,
            })?;
            Ok(model.predict_label(&x)? as u8)
        })
        .collect::<Result<_, UsabilityError>>()?;

    let labels = if n_epochs == 0 {
        vec![Vec::new(); rec.channels.len()]
    } else {
        flat.chunks(n_epochs).map(<[u8]>::to_vec).collect()
    };
    Ok(UsabilityScores {
        channels: rec.channels.iter().map(|c| c.label.clone()).collect(),
        labels,
        epoch_len_s,
        warnings,
    })
}
