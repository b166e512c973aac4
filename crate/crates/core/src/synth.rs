//! Synthetic EEG epochs, accelerometer sequences and whole nights for
//! training and fixtures.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::epoching::{window_samples, AnnotationSpan, ClassLabel, EpochSample, EpochingError};
use crate::mobility::{MobilityLabel, MOBILITY_EPOCH_S};
use crate::signal_io::{ChannelSignal, Recording, SignalScale, TriAxialAcc};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Epoching(#[from] EpochingError),
    #[error("invalid synthesis request: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub fs: u32,
    pub window_len_s: f64,
    pub seed: u64,
    pub class: ClassLabel,
    /// Add head movement to the ACC norm.
    pub movement: bool,
    /// Draw from the region where the class borders Usable. Only MShaped
    /// epochs change: a faint M over a full-amplitude background.
    pub hard: bool,
}

impl SynthSpec {
    pub fn new(class: ClassLabel, seed: u64) -> Self {
        SynthSpec {
            fs: 256,
            window_len_s: 10.0,
            seed,
            class,
            movement: false,
            hard: false,
        }
    }
}

/// splitmix64 finalizer over the base seed and each part in turn.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for p in parts {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(*p);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

const SLOW_WAVE_RATE: f64 = 0.3;

fn scale_to_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > 0.0 {
        let k = peak / m;
        x.iter_mut().for_each(|v| *v *= k);
    }
}

/// Gaussian noise with a 1/sqrt(f) amplitude slope, a fourth-order roll-off
/// below `lo` and nothing above `hi`. Synthesized over twice the length and
/// cropped so the epoch is not periodic.
fn colored_noise(n: usize, fs: u32, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let len = 2 * n;
    let mut buf: Vec<Complex<f64>> = (0..len)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    let df = fs as f64 / len as f64;
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(len - k) as f64 * df;
        let gain = if f > 0.0 && f <= hi {
            (1.0 + (lo / f).powi(8)).sqrt().recip() / f.sqrt()
        } else {
            0.0
        };
        *c *= gain;
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    buf.truncate(n);
    buf.iter().map(|c| c.re).collect()
}

fn usable_background(n: usize, fs: u32, peak: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = colored_noise(n, fs, 0.3, 30.0, rng);
    scale_to_peak(&mut x, peak);
    x
}

/// One period of the M template on `[0, 1)`, zero mean.
fn m_template(phase: f64) -> f64 {
    const PTS: [(f64, f64); 5] = [(0.0, 0.0), (0.25, 1.0), (0.5, 0.3), (0.75, 1.0), (1.0, 0.0)];
    let p = phase.rem_euclid(1.0);
    let i = PTS.windows(2).position(|w| p < w[1].0).unwrap_or(3);
    let ((x0, y0), (x1, y1)) = (PTS[i], PTS[i + 1]);
    y0 + (y1 - y0) * (p - x0) / (x1 - x0) - 0.575
}

fn eeg_epoch(class: ClassLabel, hard: bool, n: usize, fs: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let t = |i: usize| i as f64 / fs as f64;
    match class {
        ClassLabel::Usable => {
            let peak = rng.random_range(20.0..95.0);
            let mut x = usable_background(n, fs, peak, rng);
            // deep-sleep slow oscillation in some epochs
            if rng.random_bool(SLOW_WAVE_RATE) {
                let f = rng.random_range(0.3..0.7);
                let amp = rng.random_range(20.0..50.0);
                let ph = rng.random_range(0.0..2.0 * PI);
                for (i, v) in x.iter_mut().enumerate() {
                    *v += amp * (2.0 * PI * f * t(i) + ph).sin();
                }
                let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if m > 95.0 {
                    scale_to_peak(&mut x, 95.0);
                }
            }
            x
        }
        ClassLabel::NoData => vec![rng.random_range(-50.0..=50.0); n],
        ClassLabel::HighNoise => {
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let mut x: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
            let drift = rng.random_range(0.0..0.5);
            let f = rng.random_range(0.1..1.0);
            for (i, v) in x.iter_mut().enumerate() {
                *v += drift * 3.0 * (2.0 * PI * f * t(i)).sin();
            }
            let peak = rng.random_range(400.0..1800.0);
            scale_to_peak(&mut x, peak);
            x
        }
        ClassLabel::Spiky => {
            let bg_peak = rng.random_range(3.0..10.0);
            let mut x = usable_background(n, fs, bg_peak, rng);
            let base = 8.0 + rng.random_range(-0.15..0.15);
            for h in 1..=3 {
                let amp = rng.random_range(8.0..30.0);
                let phase = rng.random_range(0.0..2.0 * PI);
                let f = base * h as f64;
                for (i, v) in x.iter_mut().enumerate() {
                    *v += amp * (2.0 * PI * f * t(i) + phase).sin();
                }
            }
            x
        }
        ClassLabel::MShaped => {
            let (bg, amp) = if hard {
                (20.0..60.0, 1.0..6.0)
            } else {
                (8.0..30.0, 25.0..70.0)
            };
            let bg_peak = rng.random_range(bg);
            let mut x = usable_background(n, fs, bg_peak, rng);
            let period = rng.random_range(4.0..=5.0);
            let amp = rng.random_range(amp);
            let phase0 = rng.random_range(0.0..1.0);
            for (i, v) in x.iter_mut().enumerate() {
                *v += amp * m_template(t(i) / period + phase0);
            }
            let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if m > 100.0 {
                scale_to_peak(&mut x, 100.0);
            }
            x
        }
    }
}

fn anorm_epoch(n: usize, fs: u32, movement: bool, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let jitter = Normal::new(0.0, 0.004).expect("finite sd");
    let (amp, f, ph) = if movement {
        (
            rng.random_range(0.2..0.5),
            rng.random_range(1.5..2.5),
            rng.random_range(0.0..2.0 * PI),
        )
    } else {
        (0.0, 0.0, 0.0)
    };
    (0..n)
        .map(|i| {
            let t = i as f64 / fs as f64;
            1.0 + jitter.sample(rng) + amp * (2.0 * PI * f * t + ph).sin()
        })
        .collect()
}

/// One labeled epoch of the requested class with its ACC norm.
pub fn gen_artifact_epoch(spec: &SynthSpec) -> Result<EpochSample, SynthError> {
    let n = window_samples(spec.window_len_s, spec.fs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let eeg = eeg_epoch(spec.class, spec.hard, n, spec.fs, &mut rng);
    let anorm = anorm_epoch(n, spec.fs, spec.movement, &mut rng);
    Ok(EpochSample {
        eeg,
        anorm: Some(anorm),
        label: Some(spec.class),
        subject_id: String::from("synthetic"),
        channel: String::from("EEG"),
        epoch_index: 0,
    })
}

/// Every `HARD_EVERY`-th epoch of a class is drawn from the hard region.
pub const HARD_EVERY: usize = 3;

/// `per_class` epochs of every class for one subject. Each subject gets its
/// own amplitude gain so subjects are not interchangeable.
pub fn gen_subject_epochs(
    subject_id: &str,
    subject_index: u64,
    per_class: usize,
    fs: u32,
    window_len_s: f64,
    seed: u64,
) -> Result<Vec<EpochSample>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[subject_index, u64::MAX]));
    let gain = rng.random_range(0.85..1.05);
    let mut out = Vec::with_capacity(per_class * ClassLabel::ALL.len());
    for class in ClassLabel::ALL {
        for i in 0..per_class {
            let spec = SynthSpec {
                fs,
                window_len_s,
                seed: derive_seed(seed, &[subject_index, class.index() as u64, i as u64]),
                class,
                movement: class == ClassLabel::HighNoise && i % 3 == 0,
                hard: i % HARD_EVERY == HARD_EVERY - 1,
            };
            let mut e = gen_artifact_epoch(&spec)?;
            if class != ClassLabel::NoData {
                e.eeg.iter_mut().for_each(|v| *v *= gain);
            }
            e.subject_id = subject_id.to_string();
            e.epoch_index = out.len();
            out.push(e);
        }
    }
    Ok(out)
}

fn lying_orientation(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let az = rng.random_range(0.0..2.0 * PI);
    let z = rng.random_range(-0.25..0.25);
    let r = (1.0f64 - z * z).sqrt();
    [r * az.cos(), r * az.sin(), z]
}

fn upright_orientation(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let tilt: f64 = rng.random_range(0.0..0.3);
    let az = rng.random_range(0.0..2.0 * PI);
    [tilt.sin() * az.cos(), tilt.sin() * az.sin(), tilt.cos()]
}

/// ACC stream for a sequence of `(label, n_epochs)` segments of 10 s epochs
/// and the matching per-epoch labels.
pub fn gen_mobility_sequence(
    segments: &[(MobilityLabel, usize)],
    fs: u32,
    seed: u64,
) -> Result<(TriAxialAcc, Vec<MobilityLabel>), SynthError> {
    if segments.iter().any(|&(_, n)| n == 0) {
        return Err(SynthError::Invalid("segment counts must be at least 1".into()));
    }
    let w = window_samples(MOBILITY_EPOCH_S, fs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut axes: [Vec<f64>; 3] = Default::default();
    let mut labels = Vec::new();
    let dt = 1.0 / fs as f64;
    for &(label, count) in segments {
        let mut orient = match label {
            MobilityLabel::Lying => lying_orientation(&mut rng),
            _ => upright_orientation(&mut rng),
        };
        for _ in 0..count {
            labels.push(label);
            match label {
                MobilityLabel::Idle => {
                    for (k, a) in axes.iter_mut().enumerate() {
                        a.extend(std::iter::repeat_n(orient[k], w));
                    }
                }
                MobilityLabel::Lying => {
                    // occasional roll onto another side
                    let target = if rng.random_bool(0.03) {
                        Some(lying_orientation(&mut rng))
                    } else {
                        None
                    };
                    let noise = Normal::new(0.0, 0.003).expect("finite sd");
                    for i in 0..w {
                        let mix = target.map_or(0.0, |_| (i as f64 / (2.0 * fs as f64)).min(1.0));
                        for (k, a) in axes.iter_mut().enumerate() {
                            let to = target.map_or(orient[k], |t| t[k]);
                            a.push(orient[k] * (1.0 - mix) + to * mix + noise.sample(&mut rng));
                        }
                    }
                    if let Some(t) = target {
                        orient = t;
                    }
                }
                MobilityLabel::Stationary => {
                    let noise = Normal::new(0.0, 0.02).expect("finite sd");
                    let sway_f = rng.random_range(0.1..0.4);
                    let ph = rng.random_range(0.0..2.0 * PI);
                    for i in 0..w {
                        let sway = 0.02 * (2.0 * PI * sway_f * i as f64 * dt + ph).sin();
                        for (k, a) in axes.iter_mut().enumerate() {
                            a.push(orient[k] + sway + noise.sample(&mut rng));
                        }
                    }
                }
                MobilityLabel::Mobile => {
                    let noise = Normal::new(0.0, 0.05).expect("finite sd");
                    let f = rng.random_range(1.5..2.5);
                    let amps: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.6));
                    let phs: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
                    for i in 0..w {
                        let t = i as f64 * dt;
                        for (k, a) in axes.iter_mut().enumerate() {
                            a.push(
                                orient[k]
                                    + amps[k] * (2.0 * PI * f * t + phs[k]).sin()
                                    + noise.sample(&mut rng),
                            );
                        }
                    }
                }
            }
        }
    }
    let [ax, ay, az] = axes;
    Ok((TriAxialAcc::new(ax, ay, az), labels))
}

/// Random mobility segments whose lengths are drawn per label.
pub fn random_mobility_segments(n_segments: usize, seed: u64) -> Vec<(MobilityLabel, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_segments)
        .map(|i| {
            let label = MobilityLabel::ALL[(i + rng.random_range(0..4)) % 4];
            (label, rng.random_range(2..15))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NightSpec {
    pub fs: u32,
    pub duration_s: f64,
    pub channels: Vec<String>,
    pub seed: u64,
    /// Fraction of in-bed usability epochs carrying an artifact.
    pub artifact_rate: f64,
    pub sleep_epoch_s: f64,
}

impl NightSpec {
    pub fn new(duration_s: f64, seed: u64) -> Self {
        NightSpec {
            fs: 256,
            duration_s,
            channels: vec!["EEG L".into(), "EEG R".into()],
            seed,
            artifact_rate: 0.15,
            sleep_epoch_s: 30.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticNight {
    pub recording: Recording,
    pub annotations: Vec<AnnotationSpan>,
    /// Usability truth per channel, one label per 10 s epoch.
    pub usability: Vec<Vec<ClassLabel>>,
    pub mobility: Vec<MobilityLabel>,
    /// Stages 0..=4 (W, N1, N2, N3, REM), one per sleep epoch.
    pub sleep_scores: Vec<i8>,
}

fn hypnogram(n: usize, rng: &mut ChaCha8Rng) -> Vec<i8> {
    // wake at both ends, Markov walk through the stages in between
    let mut out = Vec::with_capacity(n);
    let lead = (n / 20).max(1).min(n);
    let tail = (n / 30).max(1).min(n - lead);
    out.extend(std::iter::repeat_n(0, lead));
    let mut stage: i8 = 1;
    while out.len() < n - tail {
        out.push(stage);
        if rng.random_bool(0.1) {
            stage = match stage {
                0 => 1,
                1 => *[0, 2, 2].get(rng.random_range(0..3)).unwrap_or(&2),
                2 => *[1, 3, 4, 0].get(rng.random_range(0..4)).unwrap_or(&2),
                3 => 2,
                _ => *[2, 0, 1].get(rng.random_range(0..3)).unwrap_or(&2),
            };
        }
    }
    out.extend(std::iter::repeat_n(0, n - out.len()));
    out
}

/// A full recording with EEG channels on the native scale, ACC, per-channel
/// usability truth, sleep scores and mobility truth.
pub fn gen_night(spec: &NightSpec) -> Result<SyntheticNight, SynthError> {
    let epoch_n = window_samples(MOBILITY_EPOCH_S, spec.fs)?;
    let n_epochs = (spec.duration_s / MOBILITY_EPOCH_S).floor() as usize;
    if n_epochs < 4 {
        return Err(SynthError::Invalid("night shorter than 40 s".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let pre = (n_epochs / 12).clamp(1, 18);
    let post = (n_epochs / 20).clamp(1, 12);
    let lying = n_epochs - pre - post;
    let first = if rng.random_bool(0.5) {
        MobilityLabel::Mobile
    } else {
        MobilityLabel::Stationary
    };
    let mut segments = vec![(first, pre.div_ceil(2)), (MobilityLabel::Stationary, pre / 2)];
    segments.retain(|s| s.1 > 0);
    segments.push((MobilityLabel::Lying, lying));
    segments.push((MobilityLabel::Mobile, post));
    let (acc, mobility) = gen_mobility_sequence(&segments, spec.fs, derive_seed(spec.seed, &[1]))?;

    let native = SignalScale::native_eeg();
    let mut channels = Vec::new();
    let mut usability = Vec::new();
    let mut annotations = Vec::new();
    for (c, name) in spec.channels.iter().enumerate() {
        let mut samples = Vec::with_capacity(n_epochs * epoch_n);
        let mut labels = Vec::with_capacity(n_epochs);
        let mut crng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[2, c as u64]));
        let mut current = ClassLabel::Usable;
        let mut left = 0usize;
        for (e, m) in mobility.iter().enumerate() {
            if left == 0 {
                let rate = if *m == MobilityLabel::Lying {
                    spec.artifact_rate
                } else {
                    0.6
                };
                current = if crng.random_bool(rate.clamp(0.0, 1.0)) {
                    match crng.random_range(0..10) {
                        0..=3 => ClassLabel::HighNoise,
                        4 | 5 => ClassLabel::MShaped,
                        6 | 7 => ClassLabel::Spiky,
                        _ => ClassLabel::NoData,
                    }
                } else {
                    ClassLabel::Usable
                };
                left = crng.random_range(1..6);
            }
            left -= 1;
            let spec_e = SynthSpec {
                fs: spec.fs,
                window_len_s: MOBILITY_EPOCH_S,
                seed: derive_seed(spec.seed, &[3, c as u64, e as u64]),
                class: current,
                movement: false,
                hard: false,
            };
            let mut erng = ChaCha8Rng::seed_from_u64(spec_e.seed);
            let x = eeg_epoch(current, false, epoch_n, spec.fs, &mut erng);
            samples.extend(x.iter().map(|v| v.clamp(native.phys_min, native.phys_max)));
            labels.push(current);
        }
        // annotation spans from runs of equal labels
        let mut start = 0;
        for i in 1..=labels.len() {
            if i == labels.len() || labels[i] != labels[start] {
                annotations.push(AnnotationSpan {
                    channel: name.clone(),
                    start_s: start as f64 * MOBILITY_EPOCH_S,
                    end_s: i as f64 * MOBILITY_EPOCH_S,
                    raw_label: labels[start].index() as i64,
                });
                start = i;
            }
        }
        channels.push(ChannelSignal::new(name.clone(), samples).with_scale(native));
        usability.push(labels);
    }

    let n_sleep = (n_epochs as f64 * MOBILITY_EPOCH_S / spec.sleep_epoch_s).floor() as usize;
    let mut hrng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[4]));
    let sleep_scores = hypnogram(n_sleep, &mut hrng);

    let mut recording = Recording::new(spec.fs, channels, Some(acc));
    recording.device_id = String::from("synthetic");
    recording.start_time = String::from("2024-01-01T22:00:00");
    Ok(SyntheticNight {
        recording,
        annotations,
        usability,
        mobility,
        sleep_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{acc_norm, spectrogram, SpectrogramConfig};

    fn epoch(class: ClassLabel, seed: u64) -> EpochSample {
        gen_artifact_epoch(&SynthSpec::new(class, seed)).unwrap()
    }

    fn peak(x: &[f64]) -> f64 {
        x.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    fn std_dev(x: &[f64]) -> f64 {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn class_amplitude_contracts() {
        for seed in 0..20 {
            let u = epoch(ClassLabel::Usable, seed);
            assert_eq!(u.eeg.len(), 2560);
            assert!(peak(&u.eeg) <= 100.0);
            let nd = epoch(ClassLabel::NoData, seed);
            assert!(nd.eeg.iter().all(|v| *v == nd.eeg[0]) && nd.eeg[0].abs() <= 50.0);
            assert!(peak(&epoch(ClassLabel::HighNoise, seed).eeg) >= 400.0);
            assert!(peak(&epoch(ClassLabel::MShaped, seed).eeg) <= 100.0 + 1e-9);
            let a = u.anorm.unwrap();
            assert!((a.iter().sum::<f64>() / a.len() as f64 - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn usable_is_band_limited() {
        let u = epoch(ClassLabel::Usable, 3);
        let s = spectrogram(&u.eeg, &SpectrogramConfig::new(256)).unwrap();
        let frame = s.frame(5);
        let low: f64 = frame[1..=30].iter().sum();
        let high: f64 = frame[40..].iter().sum();
        assert!(high < 1e-3 * low);
    }

    #[test]
    fn spiky_peaks_at_eight_hz() {
        for seed in 0..20 {
            let e = epoch(ClassLabel::Spiky, seed);
            let s = spectrogram(&e.eeg, &SpectrogramConfig::new(256)).unwrap();
            for t in 0..s.frames {
                let f = s.frame(t);
                let ref_mean = f[10..=14].iter().sum::<f64>() / 5.0;
                assert!(f[8] >= 10.0 * ref_mean, "seed {seed} frame {t}");
            }
        }
    }

    #[test]
    fn m_shape_period_from_autocorrelation() {
        // two periods per epoch make the estimate noisy; judge the population
        let mut hits = 0;
        for seed in 0..200 {
            let e = epoch(ClassLabel::MShaped, seed);
            let x = &e.eeg;
            let m = x.iter().sum::<f64>() / x.len() as f64;
            let ac = |lag: usize| -> f64 {
                (0..x.len() - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>()
            };
            let best = (3 * 256..7 * 256).max_by(|&a, &b| ac(a).total_cmp(&ac(b))).unwrap();
            if (3.75..=5.25).contains(&(best as f64 / 256.0)) {
                hits += 1;
            }
        }
        assert!(hits >= 194, "{hits}/200");
    }

    #[test]
    fn deterministic() {
        let a = epoch(ClassLabel::MShaped, 5);
        let b = epoch(ClassLabel::MShaped, 5);
        assert_eq!(a, b);
        assert_ne!(a.eeg, epoch(ClassLabel::MShaped, 6).eeg);
    }

    #[test]
    fn mobility_examples() {
        let (acc, labels) = gen_mobility_sequence(&[(MobilityLabel::Lying, 6)], 256, 1).unwrap();
        assert_eq!(acc.len(), 6 * 2560);
        assert!(labels.iter().all(|l| *l == MobilityLabel::Lying));
        let lying = std_dev(&acc_norm(&acc)[..2560]);
        let (mob, _) = gen_mobility_sequence(&[(MobilityLabel::Mobile, 3)], 256, 2).unwrap();
        let n = acc_norm(&mob);
        for b in 0..3 {
            assert!(std_dev(&n[b * 2560..(b + 1) * 2560]) >= 10.0 * lying);
        }
        let (_, labels) = gen_mobility_sequence(
            &[(MobilityLabel::Idle, 2), (MobilityLabel::Lying, 20), (MobilityLabel::Mobile, 2)],
            256,
            3,
        )
        .unwrap();
        assert_eq!(labels.len(), 24);
        let (idle, _) = gen_mobility_sequence(&[(MobilityLabel::Idle, 2)], 256, 4).unwrap();
        for a in idle.axes() {
            assert!(a.iter().all(|v| *v == a[0]));
        }
        assert!(gen_mobility_sequence(&[(MobilityLabel::Idle, 0)], 256, 4).is_err());
    }

    #[test]
    fn night_is_consistent() {
        let night = gen_night(&NightSpec::new(1800.0, 7)).unwrap();
        let rec = &night.recording;
        rec.validate().unwrap();
        assert_eq!(rec.n_samples(), 180 * 2560);
        assert_eq!(night.mobility.len(), 180);
        assert_eq!(night.sleep_scores.len(), 60);
        assert_eq!(night.usability.len(), 2);
        assert!(night.sleep_scores.iter().all(|s| (0..=4).contains(s)));
        assert_eq!(night.sleep_scores[0], 0);
        let again = gen_night(&NightSpec::new(1800.0, 7)).unwrap();
        assert_eq!(again.recording.channels[1].samples, rec.channels[1].samples);
    }

    #[test]
    fn seed_derivation_spreads() {
        assert_ne!(derive_seed(1, &[0]), derive_seed(1, &[1]));
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
    }
}
