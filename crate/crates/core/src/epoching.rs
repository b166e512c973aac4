//! Labeled epoch samples from recordings plus artifact annotations, class
//! balancing by random undersampling, and subject-wise train/test splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::acc_norm;
use crate::signal_io::Recording;

pub const DEFAULT_WINDOW_S: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum EpochingError {
    #[error("unknown artifact label code {0}")]
    UnknownLabelCode(i64),
    #[error("{side} partition would be empty")]
    EmptyPartition { side: &'static str },
    #[error("window of {window_s} s at {fs} Hz is not a whole number of samples")]
    EpochMultipleViolation { window_s: f64, fs: u32 },
    #[error("annotation row {row}: {message}")]
    BadAnnotation { row: usize, message: String },
}

/// Usability class of a 10 s sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum ClassLabel {
    Usable = 0,
    NoData = 1,
    HighNoise = 2,
    Spiky = 3,
    MShaped = 4,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 5] = [
        ClassLabel::Usable,
        ClassLabel::NoData,
        ClassLabel::HighNoise,
        ClassLabel::Spiky,
        ClassLabel::MShaped,
    ];

    /// Tie-break order, highest priority first.
    pub const PRECEDENCE: [ClassLabel; 5] = [
        ClassLabel::Usable,
        ClassLabel::HighNoise,
        ClassLabel::MShaped,
        ClassLabel::Spiky,
        ClassLabel::NoData,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Usable => "Usable",
            ClassLabel::NoData => "NoData",
            ClassLabel::HighNoise => "HighNoise",
            ClassLabel::Spiky => "Spiky",
            ClassLabel::MShaped => "MShaped",
        }
    }

    fn rank(self) -> usize {
        Self::PRECEDENCE.iter().position(|&c| c == self).unwrap()
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Maps a raw annotation code, including the compound codes, onto one of
/// the five classes.
pub fn merge_compound_labels(raw: i64) -> Result<ClassLabel, EpochingError> {
    Ok(match raw {
        0 => ClassLabel::Usable,
        1 => ClassLabel::NoData,
        2 | 5 | 6 | 23 => ClassLabel::HighNoise,
        3 | 13 => ClassLabel::Spiky,
        4 | 43 => ClassLabel::MShaped,
        other => return Err(EpochingError::UnknownLabelCode(other)),
    })
}

/// Raw artifact annotation as stored in the sidecar CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSpan {
    pub channel: String,
    pub start_s: f64,
    pub end_s: f64,
    pub raw_label: i64,
}

impl AnnotationSpan {
    pub fn merged(&self) -> Result<ClassSpan, EpochingError> {
        Ok(ClassSpan {
            start_s: self.start_s,
            end_s: self.end_s,
            class: merge_compound_labels(self.raw_label)?,
        })
    }
}

/// An annotation after compound-label merging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassSpan {
    pub start_s: f64,
    pub end_s: f64,
    pub class: ClassLabel,
}

/// Durations are compared in integer microseconds so that equal decimal
/// annotations tie exactly.
fn micros(seconds: f64) -> i64 {
    (seconds * 1e6).round() as i64
}

/// Majority class over `[epoch_start_s, epoch_start_s + epoch_len_s)`.
/// Time not covered by any span counts as Usable; exact ties go to the
/// class with the highest precedence.
pub fn assign_epoch_label(spans: &[ClassSpan], epoch_start_s: f64, epoch_len_s: f64) -> ClassLabel {
    let lo = micros(epoch_start_s);
    let hi = micros(epoch_start_s + epoch_len_s);
    let mut totals = [0i64; 5];
    let mut covered: Vec<(i64, i64)> = Vec::new();
    for span in spans {
        let a = micros(span.start_s).max(lo);
        let b = micros(span.end_s).min(hi);
        if b > a {
            totals[span.class.index()] += b - a;
            covered.push((a, b));
        }
    }
    covered.sort_unstable();
    let mut union = 0i64;
    let mut cursor = lo;
    for (a, b) in covered {
        let a = a.max(cursor);
        if b > a {
            union += b - a;
            cursor = b;
        }
    }
    totals[ClassLabel::Usable.index()] += (hi - lo) - union;

    let mut best = ClassLabel::Usable;
    for class in ClassLabel::ALL {
        let (t, tb) = (totals[class.index()], totals[best.index()]);
        if t > tb || (t == tb && class.rank() < best.rank()) {
            best = class;
        }
    }
    best
}

/// One analysis window of a single EEG channel.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSample {
    pub eeg: Vec<f64>,
    pub anorm: Option<Vec<f64>>,
    pub label: Option<ClassLabel>,
    pub subject_id: String,
    pub channel: String,
    pub epoch_index: usize,
}

/// Number of samples in a window, failing when it is not integral.
pub fn window_samples(window_s: f64, fs: u32) -> Result<usize, EpochingError> {
    let n = window_s * f64::from(fs);
    if !(n >= 1.0) || (n - n.round()).abs() > 1e-9 {
        return Err(EpochingError::EpochMultipleViolation { window_s, fs });
    }
    Ok(n.round() as usize)
}

/// Cuts every EEG channel into consecutive windows; a trailing partial window
/// is dropped. Labels are assigned from the spans whose channel matches the
/// channel label (or is `*`).
pub fn epochs_from_recording(
    rec: &Recording,
    spans: &[AnnotationSpan],
    subject_id: &str,
    window_s: f64,
) -> Result<Vec<EpochSample>, EpochingError> {
    let len = window_samples(window_s, rec.fs)?;
    let n_epochs = rec.n_samples() / len;
    let anorm = rec.acc.as_ref().map(acc_norm);
    let mut out = Vec::with_capacity(n_epochs * rec.channels.len());
    for ch in &rec.channels {
        let class_spans: Vec<ClassSpan> = spans
            .iter()
            .filter(|s| s.channel == ch.label || s.channel == "*")
            .map(AnnotationSpan::merged)
            .collect::<Result<_, _>>()?;
        for e in 0..n_epochs {
            let range = e * len..(e + 1) * len;
            out.push(EpochSample {
                eeg: ch.samples[range.clone()].to_vec(),
                anorm: anorm.as_ref().map(|a| a[range].to_vec()),
                label: Some(assign_epoch_label(&class_spans, e as f64 * window_s, window_s)),
                subject_id: subject_id.to_string(),
                channel: ch.label.clone(),
                epoch_index: e,
            });
        }
    }
    Ok(out)
}

/// Random undersampling of the Usable class: keeps every artifact sample and
/// as many Usable samples as there are artifact samples (or all of them when
/// fewer exist). The relative order of the input is preserved.
pub fn balance_rus_by<T: Clone>(items: &[T], label: impl Fn(&T) -> ClassLabel, seed: u64) -> Vec<T> {
    let usable: Vec<usize> = (0..items.len())
        .filter(|&i| label(&items[i]) == ClassLabel::Usable)
        .collect();
    let target = items.len() - usable.len();
    let mut keep = vec![true; items.len()];
    if usable.len() > target {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chosen: BTreeSet<usize> = index::sample(&mut rng, usable.len(), target).into_iter().collect();
        for (k, &i) in usable.iter().enumerate() {
            keep[i] = chosen.contains(&k);
        }
    }
    items
        .iter()
        .zip(keep)
        .filter_map(|(item, k)| k.then(|| item.clone()))
        .collect()
}

/// [`balance_rus_by`] over labeled epoch samples; unlabeled samples count
/// as Usable.
pub fn balance_rus(samples: &[EpochSample], seed: u64) -> Vec<EpochSample> {
    balance_rus_by(samples, |s| s.label.unwrap_or(ClassLabel::Usable), seed)
}

pub fn class_counts<'a>(labels: impl IntoIterator<Item = &'a ClassLabel>) -> [usize; 5] {
    let mut counts = [0; 5];
    for l in labels {
        counts[l.index()] += 1;
    }
    counts
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<EpochSample>,
    pub test: Vec<EpochSample>,
    /// Requested test subjects that never occurred in the samples.
    pub unknown_test_subjects: Vec<String>,
}

impl DatasetSplit {
    pub fn manifest(&self) -> SplitManifest {
        let ids = |s: &[EpochSample]| -> Vec<String> {
            s.iter()
                .map(|e| e.subject_id.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        };
        SplitManifest {
            train_subjects: ids(&self.train),
            test_subjects: ids(&self.test),
        }
    }
}

/// JSON record of which subjects went to which side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
}

pub fn subject_split(
    samples: Vec<EpochSample>,
    test_subjects: &BTreeSet<String>,
) -> Result<DatasetSplit, EpochingError> {
    let present: BTreeSet<&str> = samples.iter().map(|s| s.subject_id.as_str()).collect();
    let unknown_test_subjects: Vec<String> = test_subjects
        .iter()
        .filter(|s| !present.contains(s.as_str()))
        .cloned()
        .collect();
    for s in &unknown_test_subjects {
        log::warn!("test subject `{s}` does not occur in the data");
    }
    let (test, train): (Vec<_>, Vec<_>) = samples
        .into_iter()
        .partition(|s| test_subjects.contains(&s.subject_id));
    if train.is_empty() {
        return Err(EpochingError::EmptyPartition { side: "train" });
    }
    if test.is_empty() {
        return Err(EpochingError::EmptyPartition { side: "test" });
    }
    Ok(DatasetSplit {
        train,
        test,
        unknown_test_subjects,
    })
}

/// Per-side class ratios (fractions summing to 1) keyed by side name.
pub fn split_class_ratios(split: &DatasetSplit) -> BTreeMap<&'static str, [f64; 5]> {
    let ratios = |s: &[EpochSample]| {
        let counts = class_counts(s.iter().filter_map(|e| e.label.as_ref()));
        let total: usize = counts.iter().sum();
        counts.map(|c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
    };
    BTreeMap::from([("train", ratios(&split.train)), ("test", ratios(&split.test))])
}

/// Parses the annotation sidecar: `channel,start_s,end_s,label`.
pub fn read_annotations(text: &str) -> Result<Vec<AnnotationSpan>, EpochingError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let bad = |message: String| EpochingError::BadAnnotation { row: i + 1, message };
        let row = row.map_err(|e| bad(e.to_string()))?;
        if row.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", row.len())));
        }
        let num = |k: usize| f64::from_str(&row[k]).map_err(|_| bad(format!("`{}` is not a number", &row[k])));
        let span = AnnotationSpan {
            channel: row[0].to_string(),
            start_s: num(1)?,
            end_s: num(2)?,
            raw_label: row[3].parse().map_err(|_| bad(format!("`{}` is not a label code", &row[3])))?,
        };
        if !(span.start_s >= 0.0 && span.start_s < span.end_s) {
            return Err(bad(format!("span [{}, {}) is empty or negative", span.start_s, span.end_s)));
        }
        merge_compound_labels(span.raw_label)?;
        out.push(span);
    }
    Ok(out)
}

pub fn write_annotations(spans: &[AnnotationSpan]) -> String {
    let mut out = String::from("channel,start_s,end_s,label\n");
    for s in spans {
        out.push_str(&format!("{},{},{},{}\n", s.channel, s.start_s, s.end_s, s.raw_label));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn span(a: f64, b: f64, class: ClassLabel) -> ClassSpan {
        ClassSpan { start_s: a, end_s: b, class }
    }

    fn sample(label: ClassLabel, subject: &str, idx: usize) -> EpochSample {
        EpochSample {
            eeg: vec![0.0; 4],
            anorm: None,
            label: Some(label),
            subject_id: subject.into(),
            channel: "L".into(),
            epoch_index: idx,
        }
    }

    #[test]
    fn merge_table() {
        use ClassLabel::*;
        let expected = [
            (0, Usable),
            (1, NoData),
            (2, HighNoise),
            (3, Spiky),
            (4, MShaped),
            (5, HighNoise),
            (6, HighNoise),
            (13, Spiky),
            (23, HighNoise),
            (43, MShaped),
        ];
        for (raw, class) in expected {
            assert_eq!(merge_compound_labels(raw).unwrap(), class, "code {raw}");
        }
        for bad in [-1, 7, 12, 33, 100] {
            assert_eq!(merge_compound_labels(bad), Err(EpochingError::UnknownLabelCode(bad)));
        }
    }

    #[test]
    fn epoch_labels() {
        use ClassLabel::*;
        assert_eq!(assign_epoch_label(&[span(0.0, 10.0, NoData)], 0.0, 10.0), NoData);
        assert_eq!(
            assign_epoch_label(&[span(0.0, 6.0, HighNoise), span(6.0, 10.0, Usable)], 0.0, 10.0),
            HighNoise
        );
        assert_eq!(assign_epoch_label(&[span(5.0, 10.0, NoData)], 0.0, 10.0), Usable);
        assert_eq!(
            assign_epoch_label(&[span(0.0, 5.0, Spiky), span(5.0, 10.0, NoData)], 0.0, 10.0),
            Spiky
        );
        assert_eq!(
            assign_epoch_label(&[span(0.0, 5.0, Spiky), span(5.0, 10.0, MShaped)], 0.0, 10.0),
            MShaped
        );
        // spans outside the epoch are ignored
        assert_eq!(assign_epoch_label(&[span(20.0, 30.0, NoData)], 0.0, 10.0), Usable);
        assert_eq!(assign_epoch_label(&[span(12.0, 30.0, NoData)], 10.0, 10.0), NoData);
    }

    #[test]
    fn rus_counts() {
        let mut items = Vec::new();
        for (class, n) in ClassLabel::ALL.into_iter().zip([100, 10, 10, 10, 10]) {
            items.extend((0..n).map(|i| sample(class, "A", i)));
        }
        let out = balance_rus(&items, 3);
        assert_eq!(class_counts(out.iter().filter_map(|s| s.label.as_ref())), [40, 10, 10, 10, 10]);
        assert_eq!(out, balance_rus(&items, 3));
        assert_ne!(out, balance_rus(&items, 4));

        let small: Vec<_> = (0..5)
            .map(|i| sample(ClassLabel::Usable, "A", i))
            .chain((0..10).map(|i| sample(ClassLabel::NoData, "A", i)))
            .collect();
        assert_eq!(balance_rus(&small, 0).len(), 15);
    }

    #[test]
    fn split_by_subject() {
        let samples: Vec<_> = ["A", "B", "C"]
            .iter()
            .flat_map(|s| (0..3).map(move |i| sample(ClassLabel::Usable, s, i)))
            .collect();
        let test: BTreeSet<String> = ["C".to_string()].into();
        let split = subject_split(samples.clone(), &test).unwrap();
        assert_eq!(split.manifest().train_subjects, vec!["A", "B"]);
        assert_eq!(split.manifest().test_subjects, vec!["C"]);

        let test: BTreeSet<String> = ["C".to_string(), "D".to_string()].into();
        let split2 = subject_split(samples.clone(), &test).unwrap();
        assert_eq!(split2.manifest(), split.manifest());
        assert_eq!(split2.unknown_test_subjects, vec!["D"]);

        let none: BTreeSet<String> = ["Z".to_string()].into();
        assert_eq!(
            subject_split(samples.clone(), &none).unwrap_err(),
            EpochingError::EmptyPartition { side: "test" }
        );
        let all: BTreeSet<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            subject_split(samples, &all).unwrap_err(),
            EpochingError::EmptyPartition { side: "train" }
        );
    }

    #[test]
    fn fifteen_subjects_ten_five() {
        let samples: Vec<_> = (0..15)
            .flat_map(|s| {
                let id = format!("S{s:02}");
                (0..(10 + s)).map(move |i| sample(ClassLabel::ALL[i % 5], &id, i))
            })
            .collect();
        let test: BTreeSet<String> = (10..15).map(|s| format!("S{s:02}")).collect();
        let split = subject_split(samples, &test).unwrap();
        assert_eq!(split.manifest().train_subjects.len(), 10);
        assert_eq!(split.manifest().test_subjects.len(), 5);
        let ratios = split_class_ratios(&split);
        for side in ["train", "test"] {
            assert!((ratios[side].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn annotation_csv() {
        let text = "channel,start_s,end_s,label\nL,0,12.5,13\nR,3.25,4,43\n";
        let spans = read_annotations(text).unwrap();
        assert_eq!(spans.len(), 2);
        assert_eq!(spans[0].merged().unwrap().class, ClassLabel::Spiky);
        assert_eq!(read_annotations(&write_annotations(&spans)).unwrap(), spans);
        assert!(read_annotations("channel,start_s,end_s,label\nL,0,1,9\n").is_err());
        assert!(read_annotations("channel,start_s,end_s,label\nL,4,1,0\n").is_err());
    }

    fn arb_spans() -> impl Strategy<Value = Vec<ClassSpan>> {
        prop::collection::vec((0u32..10_000, 1u32..6_000, 0usize..5), 0..6).prop_map(|v| {
            v.into_iter()
                .map(|(a, len, c)| span(a as f64 / 1000.0, (a + len) as f64 / 1000.0, ClassLabel::ALL[c]))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn label_is_permutation_invariant(spans in arb_spans(), rot in 0usize..6) {
            let mut shuffled = spans.clone();
            if !shuffled.is_empty() {
                let k = rot % shuffled.len();
                shuffled.rotate_left(k);
                shuffled.reverse();
            }
            prop_assert_eq!(
                assign_epoch_label(&spans, 0.0, 10.0),
                assign_epoch_label(&shuffled, 0.0, 10.0)
            );
        }

        #[test]
        fn majority_beats_precedence_after_perturbation(
            a in 0usize..5,
            b in 0usize..5,
        ) {
            prop_assume!(a != b);
            let (ca, cb) = (ClassLabel::ALL[a], ClassLabel::ALL[b]);
            let half = 5.0;
            let tie = [span(0.0, half, ca), span(half, 10.0, cb)];
            let winner = if ca.rank() < cb.rank() { ca } else { cb };
            prop_assert_eq!(assign_epoch_label(&tie, 0.0, 10.0), winner);
            let loser = if winner == ca { cb } else { ca };
            // shift the boundary by 1 ms in favour of the loser
            let shifted = if loser == ca {
                [span(0.0, half + 0.001, ca), span(half + 0.001, 10.0, cb)]
            } else {
                [span(0.0, half - 0.001, ca), span(half - 0.001, 10.0, cb)]
            };
            prop_assert_eq!(assign_epoch_label(&shifted, 0.0, 10.0), loser);
        }

        #[test]
        fn rus_keeps_every_artifact(labels in prop::collection::vec(0usize..5, 0..200), seed: u64) {
            let items: Vec<_> = labels.iter().enumerate().map(|(i, &c)| sample(ClassLabel::ALL[c], "A", i)).collect();
            let out = balance_rus(&items, seed);
            let before = class_counts(items.iter().filter_map(|s| s.label.as_ref()));
            let after = class_counts(out.iter().filter_map(|s| s.label.as_ref()));
            prop_assert_eq!(&before[1..], &after[1..]);
            let artifacts: usize = before[1..].iter().sum();
            prop_assert_eq!(after[0], before[0].min(artifacts));
        }
    }
}
