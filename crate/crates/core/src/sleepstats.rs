//! Whole-night sleep metrics from (artifact-rejected) sleep scores.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::UNSCORABLE;
use crate::mobility::TibResult;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("no sleep epoch in the scores")]
    NoSleepDetected(Box<SleepStats>),
    #[error("empty score sequence")]
    EmptyScores,
    #[error("invalid stage {value} at epoch {index}")]
    InvalidStage { value: i8, index: usize },
    #[error("epoch length must be positive")]
    InvalidEpochLength,
}

/// Durations in minutes. Fields that depend on a sleep period are `None`
/// when no sleep epoch exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SleepStats {
    #[serde(rename = "Lights_out_sec")]
    pub lights_out_sec: f64,
    #[serde(rename = "Lights_on_sec")]
    pub lights_on_sec: f64,
    #[serde(rename = "Scorable_%")]
    pub scorable_pct: f64,
    #[serde(rename = "TIB_min")]
    pub tib_min: f64,
    #[serde(rename = "SPT_min")]
    pub spt_min: Option<f64>,
    #[serde(rename = "TST_min")]
    pub tst_min: f64,
    #[serde(rename = "N1_min")]
    pub n1_min: f64,
    #[serde(rename = "N1_%")]
    pub n1_pct: Option<f64>,
    #[serde(rename = "N2_min")]
    pub n2_min: f64,
    #[serde(rename = "N2_%")]
    pub n2_pct: Option<f64>,
    #[serde(rename = "N3_min")]
    pub n3_min: f64,
    #[serde(rename = "N3_%")]
    pub n3_pct: Option<f64>,
    #[serde(rename = "REM_min")]
    pub rem_min: f64,
    #[serde(rename = "REM_%")]
    pub rem_pct: Option<f64>,
    #[serde(rename = "NREM_min")]
    pub nrem_min: f64,
    #[serde(rename = "NREM_%")]
    pub nrem_pct: Option<f64>,
    #[serde(rename = "WASO_min")]
    pub waso_min: Option<f64>,
    #[serde(rename = "SOL_min")]
    pub sol_min: Option<f64>,
    #[serde(rename = "N1_latency_min")]
    pub n1_latency_min: Option<f64>,
    #[serde(rename = "N2_latency_min")]
    pub n2_latency_min: Option<f64>,
    #[serde(rename = "N3_latency_min")]
    pub n3_latency_min: Option<f64>,
    #[serde(rename = "REM_latency_min")]
    pub rem_latency_min: Option<f64>,
    #[serde(rename = "PSW_min")]
    pub psw_min: Option<f64>,
    #[serde(rename = "SE_%")]
    pub se_pct: f64,
    #[serde(rename = "SME_%")]
    pub sme_pct: Option<f64>,
}

fn is_sleep(s: i8) -> bool {
    (1..=4).contains(&s)
}

/// Metrics for `scores` (stages 0..=4, -1 unscorable). Without `tib` the
/// whole recording counts as time in bed.
pub fn compute_stats(
    scores: &[i8],
    epoch_len_s: f64,
    tib: Option<&TibResult>,
) -> Result<SleepStats, StatsError> {
    if scores.is_empty() {
        return Err(StatsError::EmptyScores);
    }
    if !(epoch_len_s > 0.0 && epoch_len_s.is_finite()) {
        return Err(StatsError::InvalidEpochLength);
    }
    if let Some((index, &value)) = scores
        .iter()
        .enumerate()
        .find(|(_, s)| !(UNSCORABLE..=4).contains(*s))
    {
        return Err(StatsError::InvalidStage { value, index });
    }
    let n = scores.len();
    let ep_min = epoch_len_s / 60.0;
    let (lights_out, lights_on, tib_min) = match tib {
        Some(t) => (t.lights_out_s, t.lights_on_s, t.tib_min),
        None => (0.0, n as f64 * epoch_len_s, n as f64 * ep_min),
    };
    let scorable = scores.iter().filter(|&&s| s != UNSCORABLE).count();
    let scorable_pct = 100.0 * scorable as f64 / n as f64;

    let first = scores.iter().position(|&s| is_sleep(s));
    let last = scores.iter().rposition(|&s| is_sleep(s));

    let mut counts = [0usize; 5];
    let mut waso = 0usize;
    if let (Some(a), Some(b)) = (first, last) {
        for &s in &scores[a..=b] {
            match s {
                0 => waso += 1,
                1..=4 => counts[s as usize] += 1,
                _ => {}
            }
        }
    }
    let mins = counts.map(|c| c as f64 * ep_min);
    let tst = mins[1] + mins[2] + mins[3] + mins[4];
    let nrem = mins[1] + mins[2] + mins[3];
    let pct = |m: f64| (tst > 0.0).then(|| 100.0 * m / tst);
    let latency = |stage: Option<usize>| {
        stage.map(|i| ((i as f64 * epoch_len_s - lights_out) / 60.0).max(0.0))
    };
    let spt = first.zip(last).map(|(a, b)| (b - a + 1) as f64 * ep_min);
    let psw = last.map(|b| {
        scores[b + 1..]
            .iter()
            .enumerate()
            .filter(|&(k, &s)| s == 0 && ((b + 1 + k) as f64 * epoch_len_s) < lights_on)
            .count() as f64
            * ep_min
    });

    let stats = SleepStats {
        lights_out_sec: lights_out,
        lights_on_sec: lights_on,
        scorable_pct,
        tib_min,
        spt_min: spt,
        tst_min: tst,
        n1_min: mins[1],
        n1_pct: pct(mins[1]),
        n2_min: mins[2],
        n2_pct: pct(mins[2]),
        n3_min: mins[3],
        n3_pct: pct(mins[3]),
        rem_min: mins[4],
        rem_pct: pct(mins[4]),
        nrem_min: nrem,
        nrem_pct: pct(nrem),
        waso_min: first.map(|_| waso as f64 * ep_min),
        sol_min: latency(first),
        n1_latency_min: latency(scores.iter().position(|&s| s == 1)),
        n2_latency_min: latency(scores.iter().position(|&s| s == 2)),
        n3_latency_min: latency(scores.iter().position(|&s| s == 3)),
        rem_latency_min: latency(scores.iter().position(|&s| s == 4)),
        psw_min: psw,
        se_pct: if tib_min > 0.0 { 100.0 * tst / tib_min } else { 0.0 },
        sme_pct: spt.map(|s| 100.0 * tst / s),
    };
    if first.is_none() {
        return Err(StatsError::NoSleepDetected(Box::new(stats)));
    }
    Ok(stats)
}

impl SleepStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const W: i8 = 0;
    const N1: i8 = 1;
    const N2: i8 = 2;
    const R: i8 = 4;
    const UN: i8 = -1;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn worked_night() {
        let s = [W, W, N1, N2, UN, N2, W, N2, R, W];
        let st = compute_stats(&s, 30.0, None).unwrap();
        assert!(close(st.spt_min.unwrap(), 3.5));
        assert!(close(st.tst_min, 2.5));
        assert!(close(st.waso_min.unwrap(), 0.5));
        assert!(close(st.sol_min.unwrap(), 1.0));
        assert!(close(st.rem_latency_min.unwrap(), 4.0));
        assert!(close(st.n1_latency_min.unwrap(), 1.0));
        assert!(close(st.psw_min.unwrap(), 0.5));
        assert!((st.sme_pct.unwrap() - 71.428_571).abs() < 1e-4);
        assert!(close(st.scorable_pct, 90.0));
        assert!(close(st.tib_min, 5.0));
        assert!(close(st.se_pct, 50.0));
        assert_eq!(st.n3_latency_min, None);
    }

    #[test]
    fn scorable_fraction() {
        let s = [N2, N2, UN, N2, N2, UN, N2, N2, N2, N2];
        assert!(close(compute_stats(&s, 30.0, None).unwrap().scorable_pct, 80.0));
    }

    #[test]
    fn unscorable_does_not_open_the_span() {
        let s = [UN, W, N1, N2, UN];
        let st = compute_stats(&s, 30.0, None).unwrap();
        assert!(close(st.spt_min.unwrap(), 1.0));
        assert!(close(st.sol_min.unwrap(), 1.0));
    }

    #[test]
    fn all_wake_has_no_sleep() {
        match compute_stats(&[W; 6], 30.0, None) {
            Err(StatsError::NoSleepDetected(st)) => {
                assert_eq!(st.spt_min, None);
                assert_eq!(st.sol_min, None);
                assert_eq!(st.n1_pct, None);
                assert!(close(st.tst_min, 0.0));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(compute_stats(&[], 30.0, None), Err(StatsError::EmptyScores)));
        assert!(matches!(
            compute_stats(&[W, 7], 30.0, None),
            Err(StatsError::InvalidStage { value: 7, index: 1 })
        ));
    }

    #[test]
    fn tib_bounds_shift_latencies() {
        let s = [W, W, W, W, N2, N2, W, W];
        let tib = TibResult {
            lights_out_s: 60.0,
            lights_on_s: 210.0,
            tib_min: 2.5,
        };
        let st = compute_stats(&s, 30.0, Some(&tib)).unwrap();
        assert!(close(st.sol_min.unwrap(), 1.0));
        assert!(close(st.tib_min, 2.5));
        assert!(close(st.se_pct, 40.0));
        // epoch 6 starts at 180 s, epoch 7 at 210 s
        assert!(close(st.psw_min.unwrap(), 0.5));
    }

    #[test]
    fn json_keys() {
        let st = compute_stats(&[W, N2, N3_, R], 30.0, None).unwrap();
        let v: serde_json::Value = serde_json::from_str(&st.to_json()).unwrap();
        for k in ["Lights_out_sec", "Scorable_%", "TIB_min", "N3_%", "SE_%", "SME_%", "PSW_min"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }
    const N3_: i8 = 3;

    proptest! {
        #[test]
        fn identities(s in prop::collection::vec(-1i8..5, 1..200)) {
            let Ok(st) = compute_stats(&s, 30.0, None) else { return Ok(()); };
            let sum = st.n1_pct.unwrap() + st.n2_pct.unwrap() + st.n3_pct.unwrap() + st.rem_pct.unwrap();
            prop_assert!((sum - 100.0).abs() < 0.01);
            prop_assert!((st.se_pct - 100.0 * st.tst_min / st.tib_min).abs() < 1e-9);
            if !s.contains(&-1) {
                prop_assert!((st.spt_min.unwrap() - st.tst_min - st.waso_min.unwrap()).abs() < 1e-9);
            }
            prop_assert!(st.se_pct <= st.sme_pct.unwrap() + 1e-9);
        }

        #[test]
        fn trailing_wake_only_moves_tib(s in prop::collection::vec(-1i8..5, 1..100), extra in 1usize..20) {
            let mut longer = s.clone();
            longer.extend(std::iter::repeat_n(0i8, extra));
            if let (Ok(a), Ok(b)) = (compute_stats(&s, 30.0, None), compute_stats(&longer, 30.0, None)) {
                prop_assert_eq!(a.spt_min, b.spt_min);
                prop_assert_eq!(a.tst_min, b.tst_min);
                prop_assert_eq!(a.waso_min, b.waso_min);
                prop_assert_eq!(a.sol_min, b.sol_min);
                prop_assert_eq!(a.rem_latency_min, b.rem_latency_min);
            }
        }
    }
}
