//! Mobility classification from accelerometer epochs and time-in-bed
//! detection from runs of Lying epochs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::epoching::window_samples;
use crate::features::{EpochSignals, FeatureError, FeatureLayout, MobilityFeatureMode};
use crate::gbt::{GbtError, GbtModel, LabeledMatrix};
use crate::signal_io::TriAxialAcc;

pub const DEFAULT_RUN_EPOCHS: usize = 12;
pub const MOBILITY_EPOCH_S: f64 = 10.0;

#[derive(Debug, Error)]
pub enum MobilityError {
    #[error("no run of {run} consecutive Lying epochs")]
    NoLyingPeriod { run: usize },
    #[error("run length must be at least 1")]
    InvalidRunLength,
    #[error("accelerometer axes have different lengths")]
    RaggedAxes,
    #[error("model expects {expected} features, the {mode:?} layout has {found}")]
    FeatureCountMismatch {
        expected: usize,
        found: usize,
        mode: MobilityFeatureMode,
    },
    #[error("unknown mobility label {0}")]
    UnknownLabel(String),
    #[error(transparent)]
    Epoching(#[from] crate::epoching::EpochingError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Gbt(#[from] GbtError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MobilityLabel {
    Idle = 0,
    Lying = 1,
    Stationary = 2,
    Mobile = 3,
}

impl MobilityLabel {
    pub const ALL: [MobilityLabel; 4] = [
        MobilityLabel::Idle,
        MobilityLabel::Lying,
        MobilityLabel::Stationary,
        MobilityLabel::Mobile,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MobilityLabel::Idle => "Idle",
            MobilityLabel::Lying => "Lying",
            MobilityLabel::Stationary => "Stationary",
            MobilityLabel::Mobile => "Mobile",
        }
    }
}

impl std::str::FromStr for MobilityLabel {
    type Err = MobilityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Self::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(t) || t == l.index().to_string())
            .ok_or_else(|| MobilityError::UnknownLabel(t.to_string()))
    }
}

/// One feature row per complete epoch; a trailing partial epoch is dropped.
pub fn mobility_features(
    acc: &TriAxialAcc,
    fs: u32,
    epoch_len_s: f64,
    mode: MobilityFeatureMode,
) -> Result<(FeatureLayout, Vec<Vec<f64>>), MobilityError> {
    if !acc.is_consistent() {
        return Err(MobilityError::RaggedAxes);
    }
    let w = window_samples(epoch_len_s, fs)?;
    let layout = FeatureLayout::mobility(fs, w, mode)?;
    let n_epochs = acc.len() / w;
    let [ax, ay, az] = acc.axes();
    let rows = (0..n_epochs)
        .into_par_iter()
        .map(|e| {
            let r = e * w..(e + 1) * w;
            layout.extract(&EpochSignals {
                acc: Some([&ax[r.clone()], &ay[r.clone()], &az[r]]),
                ..EpochSignals::default()
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((layout, rows))
}

/// Training matrix from an ACC stream and one label per epoch. Labels past
/// the last complete epoch are ignored.
pub fn mobility_training_matrix(
    acc: &TriAxialAcc,
    labels: &[MobilityLabel],
    fs: u32,
    epoch_len_s: f64,
    mode: MobilityFeatureMode,
) -> Result<(FeatureLayout, LabeledMatrix), MobilityError> {
    let (layout, rows) = mobility_features(acc, fs, epoch_len_s, mode)?;
    let n = rows.len().min(labels.len());
    let mut m = LabeledMatrix::new(layout.len());
    for (row, label) in rows.iter().zip(labels).take(n) {
        m.push(row, label.index())?;
    }
    Ok((layout, m))
}

/// Labels every complete epoch of `acc` with the model's argmax class.
pub fn classify_mobility(
    acc: &TriAxialAcc,
    fs: u32,
    model: &GbtModel,
    epoch_len_s: f64,
    mode: MobilityFeatureMode,
) -> Result<Vec<MobilityLabel>, MobilityError> {
    let w = window_samples(epoch_len_s, fs)?;
    let layout = FeatureLayout::mobility(fs, w, mode)?;
    if layout.len() != model.feature_count {
        return Err(MobilityError::FeatureCountMismatch {
            expected: model.feature_count,
            found: layout.len(),
            mode,
        });
    }
    let (_, rows) = mobility_features(acc, fs, epoch_len_s, mode)?;
    rows.par_iter()
        .map(|row| {
            let k = model.predict_label(row)?;
            Ok(MobilityLabel::from_index(k).unwrap_or(MobilityLabel::Stationary))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TibResult {
    pub lights_out_s: f64,
    pub lights_on_s: f64,
    pub tib_min: f64,
}

/// Lights Out, Lights On and TIB for 10 s epochs.
pub fn detect_tib(labels: &[MobilityLabel], run_epochs: usize) -> Result<TibResult, MobilityError> {
    detect_tib_with_epoch(labels, run_epochs, MOBILITY_EPOCH_S)
}

/// Lights Out is `epoch_len_s` times the 1-based index of the first epoch
/// opening a run of `run_epochs` Lying epochs; Lights On is `epoch_len_s`
/// times the 1-based index of the last epoch closing such a run.
pub fn detect_tib_with_epoch(
    labels: &[MobilityLabel],
    run_epochs: usize,
    epoch_len_s: f64,
) -> Result<TibResult, MobilityError> {
    if run_epochs == 0 {
        return Err(MobilityError::InvalidRunLength);
    }
    let mut first_start: Option<usize> = None;
    let mut last_end: Option<usize> = None;
    let mut run = 0usize;
    for (i, l) in labels.iter().enumerate() {
        if *l == MobilityLabel::Lying {
            run += 1;
            if run >= run_epochs {
                // 1-based: run covers i - run_epochs + 2 ..= i + 1
                first_start.get_or_insert(i + 2 - run_epochs);
                last_end = Some(i + 1);
            }
        } else {
            run = 0;
        }
    }
    let (Some(start), Some(end)) = (first_start, last_end) else {
        return Err(MobilityError::NoLyingPeriod { run: run_epochs });
    };
    let lights_out_s = epoch_len_s * start as f64;
    let lights_on_s = epoch_len_s * end as f64;
    Ok(TibResult {
        lights_out_s,
        lights_on_s,
        tib_min: (lights_on_s - lights_out_s + 1.0) / 60.0,
    })
}

pub fn mobility_csv(labels: &[MobilityLabel], epoch_len_s: f64) -> String {
    let mut out = String::from("epoch_index,start_s,label\n");
    for (i, l) in labels.iter().enumerate() {
        out.push_str(&format!("{i},{},{}\n", i as f64 * epoch_len_s, l.name()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use MobilityLabel::*;

    fn seq(parts: &[(MobilityLabel, usize)]) -> Vec<MobilityLabel> {
        parts
            .iter()
            .flat_map(|&(l, n)| std::iter::repeat_n(l, n))
            .collect()
    }

    // windowed scan straight from the definition
    fn brute(labels: &[MobilityLabel], run: usize) -> Option<(usize, usize)> {
        if labels.len() < run {
            return None;
        }
        let starts: Vec<usize> = (0..=labels.len() - run)
            .filter(|&i| labels[i..i + run].iter().all(|l| *l == Lying))
            .map(|i| i + 1)
            .collect();
        Some((*starts.first()?, starts.last()? + run - 1))
    }

    #[test]
    fn all_lying_hour() {
        let r = detect_tib(&vec![Lying; 360], 12).unwrap();
        assert_eq!(r.lights_out_s, 10.0);
        assert_eq!(r.lights_on_s, 3600.0);
        assert!((r.tib_min - 59.85).abs() < 1e-12);
    }

    #[test]
    fn mixed_sequence() {
        let labels = seq(&[(Mobile, 5), (Lying, 20), (Mobile, 3), (Lying, 15), (Idle, 4)]);
        let r = detect_tib(&labels, 12).unwrap();
        assert_eq!(r.lights_out_s, 60.0);
        assert_eq!(r.lights_on_s, 430.0);
        assert!((r.tib_min - 371.0 / 60.0).abs() < 1e-12);
    }

    #[test]
    fn short_runs_fail() {
        let labels = seq(&[(Lying, 11), (Mobile, 1), (Lying, 11)]);
        assert!(matches!(
            detect_tib(&labels, 12),
            Err(MobilityError::NoLyingPeriod { run: 12 })
        ));
        assert!(matches!(detect_tib(&[], 12), Err(MobilityError::NoLyingPeriod { .. })));
        assert!(matches!(detect_tib(&labels, 0), Err(MobilityError::InvalidRunLength)));
    }

    #[test]
    fn scaled_epochs() {
        let r = detect_tib_with_epoch(&vec![Lying; 24], 24, 5.0).unwrap();
        assert_eq!((r.lights_out_s, r.lights_on_s), (5.0, 120.0));
    }

    #[test]
    fn label_parsing() {
        assert_eq!("lying".parse::<MobilityLabel>().unwrap(), Lying);
        assert_eq!("3".parse::<MobilityLabel>().unwrap(), Mobile);
        assert!("sitting".parse::<MobilityLabel>().is_err());
    }

    fn label_seq() -> impl Strategy<Value = Vec<MobilityLabel>> {
        prop::collection::vec(
            prop_oneof![
                6 => Just(Lying),
                1 => Just(Idle),
                1 => Just(Stationary),
                1 => Just(Mobile)
            ],
            0..120,
        )
    }

    proptest! {
        #[test]
        fn matches_brute_force(labels in label_seq(), run in 1usize..16) {
            let got = detect_tib(&labels, run).ok().map(|r| {
                ((r.lights_out_s / 10.0) as usize, (r.lights_on_s / 10.0) as usize)
            });
            prop_assert_eq!(got, brute(&labels, run));
        }

        #[test]
        fn longer_run_never_widens(labels in label_seq(), run in 1usize..15) {
            if let Ok(long) = detect_tib(&labels, run + 1) {
                let short = detect_tib(&labels, run).unwrap();
                prop_assert!(short.lights_out_s <= long.lights_out_s);
                prop_assert!(short.lights_on_s >= long.lights_on_s);
            }
        }

        #[test]
        fn trailing_mobile_is_ignored(labels in label_seq(), extra in 1usize..20) {
            let mut longer = labels.clone();
            longer.extend(std::iter::repeat_n(Mobile, extra));
            prop_assert_eq!(detect_tib(&labels, 12).ok(), detect_tib(&longer, 12).ok());
        }
    }
}
