//! Combining channel usability labels with sleep scores into
//! artifact-rejected scores.

use chrono::{Duration, NaiveDateTime};
use serde::Serialize;
use thiserror::Error;

/// Marker for an unscorable epoch.
pub const UNSCORABLE: i8 = -1;
pub const STAGE_NAMES: [&str; 5] = ["W", "N1", "N2", "N3", "REM"];

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("length mismatch: {what} has {left} epochs, expected {right}")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    #[error("no channels to aggregate")]
    NoChannels,
    #[error("sleep epoch {sleep_s} s is not a whole multiple of usability epoch {usability_s} s")]
    NotAMultiple { sleep_s: f64, usability_s: f64 },
    #[error("invalid sleep stage '{value}' on line {line}")]
    InvalidStage { value: String, line: usize },
}

pub fn stage_name(code: i8) -> &'static str {
    match code {
        0..=4 => STAGE_NAMES[code as usize],
        _ => "un",
    }
}

/// 0 stays 0, any artifact class becomes 1.
pub fn binarize(u: &[u8]) -> Vec<u8> {
    u.iter().map(|&v| u8::from(v != 0)).collect()
}

/// 1 where strictly more than half of the channels are unusable.
pub fn channel_majority(b: &[Vec<u8>]) -> Result<Vec<u8>, AggregateError> {
    let first = b.first().ok_or(AggregateError::NoChannels)?;
    for c in b {
        if c.len() != first.len() {
            return Err(AggregateError::LengthMismatch {
                what: "channel",
                left: c.len(),
                right: first.len(),
            });
        }
    }
    let n = b.len();
    Ok((0..first.len())
        .map(|i| {
            let sum: usize = b.iter().map(|c| usize::from(c[i])).sum();
            u8::from(2 * sum > n)
        })
        .collect())
}

/// Groups of `s_f` consecutive epochs, 1 where strictly more than half are
/// unusable. A trailing partial group is dropped.
pub fn downsample_majority(u_agg: &[u8], s_f: usize) -> Vec<u8> {
    if s_f == 0 {
        return Vec::new();
    }
    u_agg
        .chunks_exact(s_f)
        .map(|g| {
            let sum: usize = g.iter().map(|&v| usize::from(v)).sum();
            u8::from(2 * sum > s_f)
        })
        .collect()
}

/// Sleep scores with unusable epochs replaced by [`UNSCORABLE`].
pub fn reject_artifacts(s_s: &[i8], u_sf: &[u8]) -> Result<Vec<i8>, AggregateError> {
    if s_s.len() != u_sf.len() {
        return Err(AggregateError::LengthMismatch {
            what: "sleep scores",
            left: s_s.len(),
            right: u_sf.len(),
        });
    }
    Ok(s_s
        .iter()
        .zip(u_sf)
        .map(|(&s, &u)| if u == 1 { UNSCORABLE } else { s })
        .collect())
}

/// Usability epochs per sleep epoch.
pub fn scaling_factor(sleep_epoch_s: f64, usability_epoch_s: f64) -> Result<usize, AggregateError> {
    let err = AggregateError::NotAMultiple {
        sleep_s: sleep_epoch_s,
        usability_s: usability_epoch_s,
    };
    if !(sleep_epoch_s > 0.0 && usability_epoch_s > 0.0) {
        return Err(err);
    }
    let ratio = sleep_epoch_s / usability_epoch_s;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-9 {
        return Err(err);
    }
    Ok(k as usize)
}

/// Every intermediate of the aggregation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregation {
    pub binarized: Vec<Vec<u8>>,
    pub u_agg: Vec<u8>,
    pub u_sf: Vec<u8>,
    pub s_ar: Vec<i8>,
    /// Set when the sleep scores and downsampled usability differed by one
    /// epoch and the longer was truncated.
    pub truncated: bool,
}

/// Full aggregation from per-channel usability labels and sleep scores. A
/// one-epoch length difference is repaired by truncation.
pub fn aggregate(u: &[Vec<u8>], s_s: &[i8], s_f: usize) -> Result<Aggregation, AggregateError> {
    let binarized: Vec<Vec<u8>> = u.iter().map(|c| binarize(c)).collect();
    let u_agg = channel_majority(&binarized)?;
    let mut u_sf = downsample_majority(&u_agg, s_f);
    let mut scores = s_s.to_vec();
    let truncated = u_sf.len().abs_diff(scores.len()) == 1;
    if truncated {
        let n = u_sf.len().min(scores.len());
        u_sf.truncate(n);
        scores.truncate(n);
    }
    let s_ar = reject_artifacts(&scores, &u_sf)?;
    Ok(Aggregation {
        binarized,
        u_agg,
        u_sf,
        s_ar,
        truncated,
    })
}

/// Integers separated by whitespace, commas or newlines. Stages are 0..=4;
/// 5 is read as REM and -1 as unscorable.
pub fn parse_scores(text: &str) -> Result<Vec<i8>, AggregateError> {
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let bad = || AggregateError::InvalidStage {
                value: tok.to_string(),
                line: line_no + 1,
            };
            let v = match tok.parse::<i8>() {
                Ok(v) => v,
                Err(_) => STAGE_NAMES
                    .iter()
                    .position(|n| n.eq_ignore_ascii_case(tok))
                    .map(|p| p as i8)
                    .or_else(|| tok.eq_ignore_ascii_case("un").then_some(UNSCORABLE))
                    .ok_or_else(bad)?,
            };
            out.push(match v {
                -1..=4 => v,
                5 => 4,
                _ => return Err(bad()),
            });
        }
    }
    Ok(out)
}

/// One integer per line.
pub fn scores_to_lines(scores: &[i8]) -> String {
    let mut out = String::with_capacity(scores.len() * 3);
    for s in scores {
        out.push_str(&s.to_string());
        out.push('\n');
    }
    out
}

/// `epoch_index,onset_s,timestamp,stage,label`; the timestamp column is empty
/// without a start time.
pub fn scores_to_csv(scores: &[i8], epoch_len_s: f64, start: Option<NaiveDateTime>) -> String {
    let mut out = String::from("epoch_index,onset_s,timestamp,stage,label\n");
    for (i, &s) in scores.iter().enumerate() {
        let onset = i as f64 * epoch_len_s;
        let ts = start
            .map(|t| (t + Duration::milliseconds((onset * 1000.0).round() as i64)).format("%Y-%m-%dT%H:%M:%S%.3f").to_string())
            .unwrap_or_default();
        out.push_str(&format!("{i},{onset},{ts},{s},{}\n", stage_name(s)));
    }
    out
}

/// Parses the ISO-like start times written by the signal readers.
pub fn parse_start_time(s: &str) -> Option<NaiveDateTime> {
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(&[0, 3, 0, 4]), vec![0, 1, 0, 1]);
        assert_eq!(binarize(&[0; 4]), vec![0; 4]);
        assert_eq!(binarize(&[4; 4]), vec![1; 4]);
    }

    #[test]
    fn majority_examples() {
        assert_eq!(channel_majority(&[vec![1], vec![0]]).unwrap(), vec![0]);
        assert_eq!(channel_majority(&[vec![1], vec![1]]).unwrap(), vec![1]);
        assert_eq!(channel_majority(&[vec![1], vec![1], vec![0]]).unwrap(), vec![1]);
        assert!(matches!(
            channel_majority(&[vec![1, 0], vec![1]]),
            Err(AggregateError::LengthMismatch { .. })
        ));
        assert_eq!(channel_majority(&[]), Err(AggregateError::NoChannels));
    }

    #[test]
    fn downsample_examples() {
        let u = [0, 0, 0, 0, 1, 0, 1, 0, 1, 1, 1, 1, 1, 1, 0, 1, 0, 0];
        assert_eq!(downsample_majority(&u, 3), vec![0, 0, 1, 1, 1, 0]);
        assert_eq!(downsample_majority(&[1; 9], 3), vec![1; 3]);
        assert_eq!(downsample_majority(&[1, 0], 2), vec![0]);
        assert_eq!(downsample_majority(&[1, 1, 1, 1], 3), vec![1]);
    }

    #[test]
    fn reject_examples() {
        let s = [0, 1, 2, 3, 4, 4];
        assert_eq!(
            reject_artifacts(&s, &[0, 0, 1, 1, 1, 0]).unwrap(),
            vec![0, 1, -1, -1, -1, 4]
        );
        assert_eq!(reject_artifacts(&s, &[0; 6]).unwrap(), s.to_vec());
        assert_eq!(reject_artifacts(&s, &[1; 6]).unwrap(), vec![-1; 6]);
        assert!(reject_artifacts(&s, &[0; 5]).is_err());
    }

    #[test]
    fn slack_of_one_epoch_is_repaired() {
        let u = vec![vec![0u8; 9], vec![0u8; 9]];
        let a = aggregate(&u, &[0, 1, 2, 3], 3).unwrap();
        assert!(a.truncated);
        assert_eq!(a.s_ar, vec![0, 1, 2]);
        assert!(aggregate(&u, &[0, 1, 2, 3, 4], 3).is_err());
        assert!(!aggregate(&u, &[0, 1, 2], 3).unwrap().truncated);
    }

    #[test]
    fn scaling() {
        assert_eq!(scaling_factor(30.0, 10.0).unwrap(), 3);
        assert_eq!(scaling_factor(30.0, 30.0).unwrap(), 1);
        assert!(scaling_factor(30.0, 20.0).is_err());
        assert!(scaling_factor(5.0, 10.0).is_err());
    }

    #[test]
    fn parsing_and_export() {
        let s = parse_scores("0\n1\n5\n-1\n# comment\nN3, REM w\n").unwrap();
        assert_eq!(s, vec![0, 1, 4, -1, 3, 4, 0]);
        assert!(matches!(
            parse_scores("0\n7\n"),
            Err(AggregateError::InvalidStage { line: 2, .. })
        ));
        assert_eq!(scores_to_lines(&[0, -1, 4]), "0\n-1\n4\n");
        let start = parse_start_time("2024-01-01T22:00:00");
        let csv = scores_to_csv(&[0, -1], 30.0, start);
        assert_eq!(
            csv,
            "epoch_index,onset_s,timestamp,stage,label\n0,0,2024-01-01T22:00:00.000,0,W\n1,30,2024-01-01T22:00:30.000,-1,un\n"
        );
    }

    proptest! {
        #[test]
        fn flipping_to_unusable_is_monotone(
            rows in prop::collection::vec(prop::collection::vec(0u8..5, 12), 1..5),
            c in 0usize..5, i in 0usize..12,
        ) {
            let c = c % rows.len();
            let before = aggregate(&rows, &[2i8; 4], 3).unwrap();
            let mut flipped = rows.clone();
            if flipped[c][i] == 0 {
                flipped[c][i] = 2;
            }
            let after = aggregate(&flipped, &[2i8; 4], 3).unwrap();
            for (a, b) in before.u_agg.iter().zip(&after.u_agg) {
                prop_assert!(b >= a);
            }
            for (a, b) in before.u_sf.iter().zip(&after.u_sf) {
                prop_assert!(b >= a);
            }
            for (a, b) in before.s_ar.iter().zip(&after.s_ar) {
                prop_assert!(*a != -1 || *b == -1);
            }
        }

        #[test]
        fn unscorable_only_where_unusable(
            rows in prop::collection::vec(prop::collection::vec(0u8..5, 30), 1..4),
            s in prop::collection::vec(0i8..5, 10),
        ) {
            let a = aggregate(&rows, &s, 3).unwrap();
            for i in 0..a.s_ar.len() {
                prop_assert_eq!(a.s_ar[i] == -1, a.u_sf[i] == 1);
            }
        }
    }
}
