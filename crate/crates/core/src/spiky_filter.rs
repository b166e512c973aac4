//! Butterworth low-pass cascaded with notch filters at 8 Hz and its
//! harmonics, applied forward and backward for zero phase.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("{freq_hz} Hz is not below the Nyquist frequency {nyquist_hz} Hz")]
    FrequencyAboveNyquist { freq_hz: f64, nyquist_hz: f64 },
    #[error("signal has {len} samples, zero-phase filtering needs more than {needed}")]
    SignalTooShort { len: usize, needed: usize },
    #[error("invalid filter design: {0}")]
    InvalidDesign(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct ButterworthDesign {
    pub order: usize,
    pub cutoff_hz: f64,
    pub fs: f64,
    /// Cutoff over Nyquist.
    pub normalized_cutoff: f64,
    /// Pre-warped analog cutoff in rad/s.
    pub omega_c: f64,
    #[serde(skip)]
    pub analog_poles: Vec<Complex<f64>>,
    #[serde(skip)]
    pub digital_poles: Vec<Complex<f64>>,
    pub b: Vec<f64>,
    pub a: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NotchSpec {
    pub center_hz: f64,
    /// Center over Nyquist.
    pub omega_o: f64,
    /// Bandwidth over Nyquist.
    pub bw: f64,
    pub r: f64,
    pub q: f64,
    pub b: Vec<f64>,
    pub a: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FilterCascade {
    pub fs: f64,
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    pub butterworth: ButterworthDesign,
    pub notches: Vec<NotchSpec>,
}

fn check_freq(freq_hz: f64, fs: f64) -> Result<(), FilterError> {
    let nyquist_hz = fs / 2.0;
    if !(freq_hz > 0.0) {
        return Err(FilterError::InvalidDesign(format!("frequency {freq_hz} Hz must be positive")));
    }
    if freq_hz >= nyquist_hz {
        return Err(FilterError::FrequencyAboveNyquist { freq_hz, nyquist_hz });
    }
    Ok(())
}

/// Coefficients of `prod (1 - r_k z^-1)`, highest power of `z^-1` last.
fn poly_from_roots(roots: &[Complex<f64>]) -> Vec<Complex<f64>> {
    let mut p = vec![Complex::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex::new(0.0, 0.0); p.len() + 1];
        for (i, c) in p.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * r;
        }
        p = next;
    }
    p
}

pub fn convolve(x: &[f64], y: &[f64]) -> Vec<f64> {
    if x.is_empty() || y.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; x.len() + y.len() - 1];
    for (i, a) in x.iter().enumerate() {
        for (j, b) in y.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

/// Digital low-pass via the bilinear transform with the cutoff pre-warped,
/// scaled to unit gain at DC.
pub fn design_butterworth(fs: f64, cutoff_hz: f64, order: usize) -> Result<ButterworthDesign, FilterError> {
    if order == 0 {
        return Err(FilterError::InvalidDesign("order must be at least 1".into()));
    }
    check_freq(cutoff_hz, fs)?;
    let n = order as f64;
    let omega_c = 2.0 * fs * (PI * cutoff_hz / fs).tan();
    let analog_poles: Vec<Complex<f64>> = (1..=order)
        .map(|k| omega_c * Complex::from_polar(1.0, (2.0 * k as f64 + n - 1.0) * PI / (2.0 * n)))
        .collect();
    let two_fs = Complex::new(2.0 * fs, 0.0);
    let digital_poles: Vec<Complex<f64>> = analog_poles
        .iter()
        .map(|s| (two_fs + s) / (two_fs - s))
        .collect();
    let a: Vec<f64> = poly_from_roots(&digital_poles).iter().map(|c| c.re).collect();
    let zeros = vec![Complex::new(-1.0, 0.0); order];
    let b_unit: Vec<f64> = poly_from_roots(&zeros).iter().map(|c| c.re).collect();
    let gain = a.iter().sum::<f64>() / b_unit.iter().sum::<f64>();
    let b = b_unit.iter().map(|v| v * gain).collect();
    Ok(ButterworthDesign {
        order,
        cutoff_hz,
        fs,
        normalized_cutoff: cutoff_hz / (fs / 2.0),
        omega_c,
        analog_poles,
        digital_poles,
        b,
        a,
    })
}

/// Second-order notch at `center_hz` with bandwidth `bw_hz`. The numerator
/// is scaled for unit gain at DC.
pub fn design_notch(fs: f64, center_hz: f64, bw_hz: f64) -> Result<NotchSpec, FilterError> {
    check_freq(center_hz, fs)?;
    let nyq = fs / 2.0;
    let omega_o = center_hz / nyq;
    let bw = bw_hz / nyq;
    let r = 1.0 - bw / 2.0;
    if !(bw > 0.0 && r > 0.0 && r < 1.0) {
        return Err(FilterError::InvalidDesign(format!("bandwidth {bw_hz} Hz gives pole radius {r}")));
    }
    let theta = PI * omega_o;
    let c = theta.cos();
    let a = vec![1.0, -2.0 * r * c, r * r];
    let dc = a.iter().sum::<f64>() / (2.0 - 2.0 * c);
    let b = vec![dc, -2.0 * c * dc, dc];
    Ok(NotchSpec {
        center_hz,
        omega_o,
        bw,
        r,
        q: omega_o / bw,
        b,
        a,
    })
}

impl FilterCascade {
    /// Pole radii of every component section.
    pub fn pole_radii(&self) -> Vec<f64> {
        self.butterworth
            .digital_poles
            .iter()
            .map(|p| p.norm())
            .chain(self.notches.iter().flat_map(|n| [n.r, n.r]))
            .collect()
    }

    pub fn is_stable(&self) -> bool {
        self.pole_radii().iter().all(|r| *r < 1.0)
    }
}

/// Low-pass at `cutoff_hz` followed by a notch at each center frequency.
pub fn design_cascade(
    fs: f64,
    cutoff_hz: f64,
    order: usize,
    notch_centers: &[f64],
    bw_hz: f64,
) -> Result<FilterCascade, FilterError> {
    let butterworth = design_butterworth(fs, cutoff_hz, order)?;
    let notches = notch_centers
        .iter()
        .map(|&f| design_notch(fs, f, bw_hz))
        .collect::<Result<Vec<_>, _>>()?;
    let mut b = butterworth.b.clone();
    let mut a = butterworth.a.clone();
    for n in &notches {
        b = convolve(&b, &n.b);
        a = convolve(&a, &n.a);
    }
    Ok(FilterCascade {
        fs,
        b,
        a,
        butterworth,
        notches,
    })
}

/// The default design: 4th-order 30 Hz low-pass, 2 Hz wide notches at 8,
/// 16 and 24 Hz.
pub fn default_cascade(fs: f64) -> Result<FilterCascade, FilterError> {
    design_cascade(fs, 30.0, 4, &[8.0, 16.0, 24.0], 2.0)
}

fn eval_poly(c: &[f64], zinv: Complex<f64>) -> Complex<f64> {
    c.iter().rev().fold(Complex::new(0.0, 0.0), |acc, v| acc * zinv + v)
}

/// Complex gain of a single pass at each frequency.
pub fn freq_response(cascade: &FilterCascade, freqs_hz: &[f64]) -> Vec<Complex<f64>> {
    freqs_hz
        .iter()
        .map(|f| {
            let zinv = Complex::from_polar(1.0, -2.0 * PI * f / cascade.fs);
            eval_poly(&cascade.b, zinv) / eval_poly(&cascade.a, zinv)
        })
        .collect()
}

/// Direct-form II transposed filter with initial state `zi`.
fn lfilter(b: &[f64], a: &[f64], x: &[f64], zi: &[f64]) -> Vec<f64> {
    let n = b.len().max(a.len());
    let coef = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0) / a[0];
    let bn: Vec<f64> = (0..n).map(|i| coef(b, i)).collect();
    let an: Vec<f64> = (0..n).map(|i| coef(a, i)).collect();
    let mut z = zi.to_vec();
    z.resize(n - 1, 0.0);
    let mut y = Vec::with_capacity(x.len());
    for &xi in x {
        let yi = bn[0] * xi + z.first().copied().unwrap_or(0.0);
        for i in 0..n.saturating_sub(2) {
            z[i] = bn[i + 1] * xi + z[i + 1] - an[i + 1] * yi;
        }
        if n >= 2 {
            z[n - 2] = bn[n - 1] * xi - an[n - 1] * yi;
        }
        y.push(yi);
    }
    y
}

/// Filter state that makes a unit step pass with no transient.
fn lfilter_zi(b: &[f64], a: &[f64]) -> Vec<f64> {
    let n = b.len().max(a.len());
    let coef = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0) / a[0];
    let bn: Vec<f64> = (0..n).map(|i| coef(b, i)).collect();
    let an: Vec<f64> = (0..n).map(|i| coef(a, i)).collect();
    if n < 2 {
        return Vec::new();
    }
    let mut zi = vec![0.0; n - 1];
    let total_c: f64 = (1..n).map(|k| bn[k] - an[k] * bn[0]).sum();
    let total_a: f64 = 1.0 + an[1..].iter().sum::<f64>();
    zi[0] = total_c / total_a;
    let (mut asum, mut csum) = (1.0, 0.0);
    for k in 1..n - 1 {
        asum += an[k];
        csum += bn[k] - an[k] * bn[0];
        zi[k] = asum * zi[0] - csum;
    }
    zi
}

/// Edge padding length used by [`apply_zero_phase`].
pub fn pad_len(cascade: &FilterCascade) -> usize {
    3 * cascade.a.len().max(cascade.b.len())
}

/// Forward pass, reverse, second pass, reverse. The signal is extended at
/// both ends by odd reflection and each pass starts from the steady state
/// for its first sample.
pub fn apply_zero_phase(cascade: &FilterCascade, x: &[f64]) -> Result<Vec<f64>, FilterError> {
    let pad = pad_len(cascade);
    if x.len() <= pad {
        return Err(FilterError::SignalTooShort {
            len: x.len(),
            needed: pad,
        });
    }
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let (b, a) = (&cascade.b, &cascade.a);
    let zi = lfilter_zi(b, a);
    let scaled = |v: f64| zi.iter().map(|z| z * v).collect::<Vec<_>>();
    let mut y = lfilter(b, a, &ext, &scaled(ext[0]));
    y.reverse();
    let mut y = lfilter(b, a, &y, &scaled(y[0]));
    y.reverse();
    Ok(y[pad..pad + n].to_vec())
}

/// `freq_hz,magnitude,magnitude_db,phase_rad` rows on a uniform grid from
/// DC to just below Nyquist.
pub fn response_csv(cascade: &FilterCascade, n_points: usize) -> String {
    let nyq = cascade.fs / 2.0;
    let freqs: Vec<f64> = (0..n_points).map(|i| nyq * i as f64 / n_points as f64).collect();
    let h = freq_response(cascade, &freqs);
    let mut out = String::from("freq_hz,magnitude,magnitude_db,phase_rad\n");
    for (f, g) in freqs.iter().zip(h) {
        let m = g.norm();
        out.push_str(&format!("{f},{m},{},{}\n", 20.0 * m.max(1e-300).log10(), g.arg()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cascade() -> FilterCascade {
        default_cascade(256.0).unwrap()
    }

    fn tone(f: f64, n: usize, amp: f64) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * f * i as f64 / 256.0).sin()).collect()
    }

    /// Least-squares amplitude of a tone at `f` over `x`.
    fn tone_amplitude(x: &[f64], f: f64) -> f64 {
        let (mut ss, mut sc, mut cc, mut xs, mut xc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let w = 2.0 * PI * f * i as f64 / 256.0;
            let (s, c) = w.sin_cos();
            ss += s * s;
            sc += s * c;
            cc += c * c;
            xs += v * s;
            xc += v * c;
        }
        let det = ss * cc - sc * sc;
        let p = (xs * cc - xc * sc) / det;
        let q = (xc * ss - xs * sc) / det;
        p.hypot(q)
    }

    #[test]
    fn normalized_frequencies() {
        let c = cascade();
        assert_eq!(c.butterworth.normalized_cutoff, 0.234375);
        assert_eq!(c.notches[0].omega_o, 0.0625);
        assert_eq!(c.b.len(), 11);
        assert_eq!(c.a.len(), 11);
        assert!((c.a[0] - 1.0).abs() < 1e-15);
        assert!(c.is_stable());
        assert!(c.pole_radii().iter().all(|r| *r < 1.0));
    }

    #[test]
    fn cutoff_lands_at_minus_three_db() {
        let bw = design_butterworth(256.0, 30.0, 4).unwrap();
        let c = FilterCascade {
            fs: 256.0,
            b: bw.b.clone(),
            a: bw.a.clone(),
            butterworth: bw,
            notches: vec![],
        };
        let h = freq_response(&c, &[0.0, 30.0])[..].to_vec();
        assert!((h[0].norm() - 1.0).abs() < 1e-12);
        assert!((h[1].norm() - 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn notch_depth_and_dc() {
        let c = cascade();
        let h = freq_response(&c, &[0.0, 8.0, 16.0, 24.0, 100.0]);
        assert!(h[0].norm() >= 0.9 && h[0].norm() <= 1.0 + 1e-12, "{}", h[0].norm());
        for g in &h[1..] {
            assert!(g.norm() < 0.01, "{}", g.norm());
        }
    }

    #[test]
    fn monotone_above_cutoff_outside_notches() {
        let c = cascade();
        let freqs: Vec<f64> = (0..=960).map(|i| 30.0 + i as f64 * 0.1).collect();
        let h = freq_response(&c, &freqs);
        for w in h.windows(2) {
            assert!(w[1].norm() <= w[0].norm() + 1e-12);
        }
    }

    #[test]
    fn nyquist_and_short_signal_errors() {
        assert!(matches!(
            design_cascade(256.0, 30.0, 4, &[8.0, 130.0], 2.0),
            Err(FilterError::FrequencyAboveNyquist { .. })
        ));
        assert!(matches!(
            design_cascade(50.0, 30.0, 4, &[8.0], 2.0),
            Err(FilterError::FrequencyAboveNyquist { .. })
        ));
        assert_eq!(
            apply_zero_phase(&cascade(), &[0.0; 33]),
            Err(FilterError::SignalTooShort { len: 33, needed: 33 })
        );
        assert!(apply_zero_phase(&cascade(), &[0.0; 34]).is_ok());
    }

    #[test]
    fn zero_in_zero_out() {
        let y = apply_zero_phase(&cascade(), &[0.0; 1000]).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn passband_tone_preserved_without_lag() {
        let x = tone(2.0, 2560 * 2, 50.0);
        let y = apply_zero_phase(&cascade(), &x).unwrap();
        let inner = 512..x.len() - 512;
        let ratio = tone_amplitude(&y[inner.clone()], 2.0) / 50.0;
        assert!((ratio - 1.0).abs() < 0.02, "{ratio}");
        let xc = |lag: i64| -> f64 {
            inner
                .clone()
                .map(|i| x[i] * y[(i as i64 + lag) as usize])
                .sum()
        };
        let best = (-20..=20).max_by(|a, b| xc(*a).total_cmp(&xc(*b))).unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn harmonics_removed() {
        let n = 2560 * 3;
        let carrier = tone(2.0, n, 40.0);
        let noise: Vec<f64> = [8.0, 16.0, 24.0]
            .iter()
            .map(|f| tone(*f, n, 20.0))
            .fold(vec![0.0; n], |acc, t| acc.iter().zip(t).map(|(a, b)| a + b).collect());
        let x: Vec<f64> = carrier.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let y = apply_zero_phase(&cascade(), &x).unwrap();
        let inner = &y[1024..n - 1024];
        for f in [8.0, 16.0, 24.0] {
            let db = 20.0 * (tone_amplitude(inner, f) / 20.0).log10();
            assert!(db <= -40.0, "{f} Hz: {db} dB");
        }
        let carrier_db = 20.0 * (tone_amplitude(inner, 2.0) / 40.0).log10();
        assert!(carrier_db.abs() < 1.0);
    }

    #[test]
    fn impulse_response_decays() {
        let c = cascade();
        let mut x = vec![0.0; 2560 * 2];
        x[0] = 1.0;
        let zi = vec![0.0; c.a.len() - 1];
        let h = lfilter(&c.b, &c.a, &x, &zi);
        assert!(h[2560..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn attenuation_is_squared_response() {
        let c = cascade();
        for f in [1.0, 3.0, 5.0, 11.0, 12.5, 20.0, 28.0, 31.0] {
            let expected = freq_response(&c, &[f])[0].norm().powi(2);
            let x = tone(f, 2560 * 3, 10.0);
            let y = apply_zero_phase(&c, &x).unwrap();
            let got = tone_amplitude(&y[1024..x.len() - 1024], f) / 10.0;
            assert!((got - expected).abs() <= 0.01 * expected, "{f} Hz: {got} vs {expected}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn linear(
            xs in prop::collection::vec(-100.0f64..100.0, 200),
            ys in prop::collection::vec(-100.0f64..100.0, 200),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let c = cascade();
            let mixed: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| alpha * x + beta * y).collect();
            let fm = apply_zero_phase(&c, &mixed).unwrap();
            let fx = apply_zero_phase(&c, &xs).unwrap();
            let fy = apply_zero_phase(&c, &ys).unwrap();
            let scale = fm.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            for i in 0..fm.len() {
                let lin = alpha * fx[i] + beta * fy[i];
                prop_assert!((fm[i] - lin).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn output_length_matches(len in 34usize..600) {
            let x: Vec<f64> = (0..len).map(|i| (i as f64 * 0.37).sin()).collect();
            prop_assert_eq!(apply_zero_phase(&cascade(), &x).unwrap().len(), len);
        }
    }
}
