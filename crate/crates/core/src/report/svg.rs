//! Standalone SVG 1.1 usability graphs and hypnograms.

use std::fmt::Write;

use crate::features::{acc_norm, spectrogram, SpectrogramConfig};
use crate::mobility::{MobilityLabel, TibResult};
use crate::signal_io::Recording;
use crate::usability::UsabilityScores;

use super::ReportError;

const WIDTH: f64 = 1200.0;
const LEFT: f64 = 90.0;
const PLOT_W: f64 = WIDTH - LEFT - 20.0;
const MAX_COLUMNS: usize = 600;
/// Only 0 to 32 Hz is drawn in the spectrogram panels.
const SPEC_MAX_HZ: f64 = 32.0;

/// Usable, NoData, HighNoise, Spiky, MShaped.
pub const USABILITY_COLORS: [&str; 5] = ["#2ca02c", "#7f7f7f", "#d62728", "#ff7f0e", "#9467bd"];
pub const MOBILITY_COLORS: [&str; 4] = ["#bcbd22", "#1f77b4", "#17becf", "#e377c2"];

/// Hypnogram rows from top to bottom.
pub const HYPNO_ORDER: [i8; 6] = [0, 4, 1, 2, 3, -1];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(out: &mut String, height: f64, title: &str) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{WIDTH}" height="{height}" fill="white"/>"#);
}

/// Maximal runs of equal values as `(start, len, value)`.
pub fn runs<T: PartialEq + Copy>(xs: &[T]) -> Vec<(usize, usize, T)> {
    let mut out: Vec<(usize, usize, T)> = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        match out.last_mut() {
            Some(r) if r.2 == x => r.1 += 1,
            _ => out.push((i, 1, x)),
        }
    }
    out
}

fn strip(out: &mut String, class: &str, attr: &str, y: f64, h: f64, n: usize, cells: &[(usize, usize, &str)]) {
    let _ = writeln!(out, r#"<g class="{class}"{attr}>"#);
    let scale = if n == 0 { 0.0 } else { PLOT_W / n as f64 };
    for &(start, len, color) in cells {
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{y:.2}" width="{:.2}" height="{h:.2}" fill="{color}"/>"#,
            LEFT + start as f64 * scale,
            len as f64 * scale
        );
    }
    let _ = writeln!(out, "</g>");
}

fn label(out: &mut String, y: f64, text: &str) {
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{y:.2}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
        LEFT - 6.0,
        escape(text)
    );
}

// dark blue to yellow
fn heat(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (68.0 + t * (253.0 - 68.0)).round() as u8;
    let g = (1.0 + t * (231.0 - 1.0)).round() as u8;
    let b = (84.0 + t * (37.0 - 84.0)).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Column-averaged log power, `columns × rows`, with rows from low to high
/// frequency.
fn log_spectrogram(x: &[f64], fs: u32, columns: usize) -> Option<(Vec<Vec<f64>>, usize)> {
    let cfg = SpectrogramConfig::new(fs);
    let spec = spectrogram(x, &cfg).ok()?;
    let hz_per_bin = f64::from(fs) / cfg.segment_len as f64;
    let rows = ((SPEC_MAX_HZ / hz_per_bin).floor() as usize + 1).min(spec.bins);
    let cols = columns.min(spec.frames).max(1);
    let mut grid = vec![vec![0.0; rows]; cols];
    let mut count = vec![0usize; cols];
    for t in 0..spec.frames {
        let c = t * cols / spec.frames;
        for (r, v) in spec.frame(t)[..rows].iter().enumerate() {
            grid[c][r] += v;
        }
        count[c] += 1;
    }
    for (col, n) in grid.iter_mut().zip(count) {
        for v in col.iter_mut() {
            *v = (*v / n.max(1) as f64 + 1e-12).log10();
        }
    }
    Some((grid, rows))
}

/// Stacked panels: ACC norm trace, then per channel a log-power
/// spectrogram and a usability strip.
pub fn usability_graph(rec: &Recording, scores: &UsabilityScores, title: &str) -> Result<String, ReportError> {
    if scores.channels.len() != rec.channels.len() {
        return Err(ReportError::length_mismatch(format!(
            "{} channels scored, recording has {}",
            scores.channels.len(),
            rec.channels.len()
        )));
    }
    let n_epochs = scores.n_epochs();
    if scores.labels.iter().any(|l| l.len() != n_epochs) {
        return Err(ReportError::length_mismatch("channels have unequal score lengths".into()));
    }
    let acc_h = 60.0;
    let spec_h = 90.0;
    let strip_h = 16.0;
    let gap = 14.0;
    let per_channel = spec_h + strip_h + 2.0 * gap;
    let height = 30.0 + acc_h + gap + per_channel * rec.channels.len() as f64 + 20.0;
    let mut out = String::new();
    header(&mut out, height, title);
    let mut y = 24.0;

    let _ = writeln!(out, r#"<g class="acc-norm">"#);
    label(&mut out, y + acc_h / 2.0, "ACC norm");
    if let Some(acc) = rec.acc.as_ref().filter(|a| !a.is_empty()) {
        let a = acc_norm(acc);
        let cols = MAX_COLUMNS.min(a.len()).max(1);
        let means: Vec<f64> = (0..cols)
            .map(|c| {
                let s = &a[c * a.len() / cols..((c + 1) * a.len() / cols).max(c * a.len() / cols + 1)];
                s.iter().sum::<f64>() / s.len() as f64
            })
            .collect();
        let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut pts = String::new();
        for (c, m) in means.iter().enumerate() {
            let px = LEFT + (c as f64 + 0.5) * PLOT_W / cols as f64;
            let py = y + acc_h - (m - lo) / span * acc_h;
            let _ = write!(pts, "{px:.2},{py:.2} ");
        }
        let _ = writeln!(
            out,
            r##"<polyline fill="none" stroke="#333333" stroke-width="1" points="{}"/>"##,
            pts.trim_end()
        );
    }
    let _ = writeln!(out, "</g>");
    y += acc_h + gap;

    for (c, ch) in rec.channels.iter().enumerate() {
        let _ = writeln!(out, r#"<g class="spectrogram" data-channel="{}">"#, escape(&ch.label));
        label(&mut out, y + spec_h / 2.0, &ch.label);
        if let Some((grid, rows)) = log_spectrogram(&ch.samples, rec.fs, MAX_COLUMNS) {
            let lo = grid.iter().flatten().copied().fold(f64::INFINITY, f64::min);
            let hi = grid.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = if hi > lo { hi - lo } else { 1.0 };
            let cw = PLOT_W / grid.len() as f64;
            let rh = spec_h / rows as f64;
            for (ci, col) in grid.iter().enumerate() {
                for (r, v) in col.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                        LEFT + ci as f64 * cw,
                        y + spec_h - (r + 1) as f64 * rh,
                        cw + 0.05,
                        rh + 0.05,
                        heat((v - lo) / span)
                    );
                }
            }
        }
        let _ = writeln!(out, "</g>");
        y += spec_h + gap;

        let labels = &scores.labels[c];
        let cells: Vec<(usize, usize, &str)> = runs(labels)
            .into_iter()
            .map(|(s, n, v)| (s, n, USABILITY_COLORS[usize::from(v).min(4)]))
            .collect();
        let attr = format!(r#" data-channel="{}""#, escape(&ch.label));
        strip(&mut out, "usability-strip", &attr, y, strip_h, labels.len(), &cells);
        y += strip_h + gap;
    }
    let _ = writeln!(out, "</svg>");
    Ok(out)
}

/// Row index of a stage in [`HYPNO_ORDER`].
pub fn hypnogram_level(stage: i8) -> usize {
    HYPNO_ORDER.iter().position(|&s| s == stage).unwrap_or(HYPNO_ORDER.len() - 1)
}

/// Step chart of the scores over six rows, and below it the mobility strip
/// with Lights Out and Lights On markers.
pub fn hypnogram(
    s_ar: &[i8],
    sleep_epoch_s: f64,
    mobility: Option<(&[MobilityLabel], f64)>,
    tib: Option<&TibResult>,
    title: &str,
) -> Result<String, ReportError> {
    let sleep_dur = s_ar.len() as f64 * sleep_epoch_s;
    let mob_dur = mobility.map_or(0.0, |(m, l)| m.len() as f64 * l);
    let total = sleep_dur.max(mob_dur);
    if let Some((m, l)) = mobility {
        if s_ar.len() > 1 && (sleep_dur - m.len() as f64 * l).abs() > sleep_epoch_s.max(l) * 2.0 {
            return Err(ReportError::length_mismatch(format!(
                "{sleep_dur} s of sleep scores against {} s of mobility labels",
                m.len() as f64 * l
            )));
        }
    }
    let row_h = 22.0;
    let top = 24.0;
    let hyp_h = row_h * HYPNO_ORDER.len() as f64;
    let strip_y = top + hyp_h + 20.0;
    let strip_h = 16.0;
    let height = strip_y + strip_h + 30.0;
    let x_of = |t: f64| LEFT + if total > 0.0 { t / total * PLOT_W } else { 0.0 };

    let mut out = String::new();
    header(&mut out, height, title);
    let _ = writeln!(out, r#"<g class="hypnogram-axis">"#);
    for (i, &s) in HYPNO_ORDER.iter().enumerate() {
        let yc = top + (i as f64 + 0.5) * row_h;
        label(&mut out, yc, crate::aggregate::stage_name(s));
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{yc:.2}" x2="{:.2}" y2="{yc:.2}" stroke="#dddddd" stroke-width="0.5"/>"##,
            LEFT + PLOT_W
        );
    }
    let _ = writeln!(out, "</g>");

    let mut pts = String::new();
    for (start, len, stage) in runs(s_ar) {
        let yc = top + (hypnogram_level(stage) as f64 + 0.5) * row_h;
        let x0 = x_of(start as f64 * sleep_epoch_s);
        let x1 = x_of((start + len) as f64 * sleep_epoch_s);
        let _ = write!(pts, "{x0:.2},{yc:.2} {x1:.2},{yc:.2} ");
    }
    let _ = writeln!(
        out,
        r##"<polyline class="hypnogram" fill="none" stroke="#1f3b73" stroke-width="1.5" points="{}"/>"##,
        pts.trim_end()
    );

    if let Some((m, l)) = mobility {
        label(&mut out, strip_y + strip_h / 2.0, "Mobility");
        let _ = writeln!(out, r#"<g class="mobility-strip">"#);
        for (start, len, v) in runs(m) {
            let x0 = x_of(start as f64 * l);
            let _ = writeln!(
                out,
                r#"<rect x="{x0:.2}" y="{strip_y:.2}" width="{:.2}" height="{strip_h:.2}" fill="{}"/>"#,
                x_of((start + len) as f64 * l) - x0,
                MOBILITY_COLORS[v.index()]
            );
        }
        let _ = writeln!(out, "</g>");
    }
    if let Some(t) = tib {
        for (class, at) in [("lights-out", t.lights_out_s), ("lights-on", t.lights_on_s)] {
            let x = x_of(at);
            let _ = writeln!(
                out,
                r##"<line class="{class}" x1="{x:.2}" y1="{top:.2}" x2="{x:.2}" y2="{:.2}" stroke="#000000" stroke-dasharray="4,3"/>"##,
                strip_y + strip_h
            );
        }
    }
    let _ = writeln!(out, "</svg>");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::ChannelSignal;

    fn doc(s: &str) -> roxmltree::Document<'_> {
        roxmltree::Document::parse(s).expect("well-formed svg")
    }

    fn rec(channels: usize, secs: usize) -> Recording {
        let chans = (0..channels)
            .map(|c| {
                let x = (0..secs * 256).map(|i| ((i * (c + 3)) as f64 * 0.05).sin() * 20.0).collect();
                ChannelSignal::new(format!("EEG {c}"), x)
            })
            .collect();
        Recording::new(256, chans, None)
    }

    #[test]
    fn one_strip_per_channel_and_solid_when_usable() {
        let r = rec(2, 60);
        let scores = UsabilityScores {
            channels: vec!["EEG 0".into(), "EEG 1".into()],
            labels: vec![vec![0; 6], vec![0, 0, 3, 3, 0, 1]],
            epoch_len_s: 10.0,
            warnings: vec![],
        };
        let svg = usability_graph(&r, &scores, "night <1>").unwrap();
        let d = doc(&svg);
        assert_eq!(d.root_element().attribute("version"), Some("1.1"));
        let strips: Vec<_> = d
            .descendants()
            .filter(|n| n.attribute("class") == Some("usability-strip"))
            .collect();
        assert_eq!(strips.len(), 2);
        let rects = |i: usize| strips[i].children().filter(|n| n.has_tag_name("rect")).count();
        assert_eq!(rects(0), 1);
        assert_eq!(rects(1), 4);
    }

    #[test]
    fn graph_rejects_mismatched_channels() {
        let scores = UsabilityScores {
            channels: vec!["EEG 0".into()],
            labels: vec![vec![0; 6]],
            epoch_len_s: 10.0,
            warnings: vec![],
        };
        assert!(usability_graph(&rec(2, 60), &scores, "x").is_err());
    }

    #[test]
    fn hypnogram_steps_follow_the_scores() {
        let s_ar = [0, 1, -1, -1, -1, 4];
        let svg = hypnogram(&s_ar, 30.0, None, None, "h").unwrap();
        let d = doc(&svg);
        let line = d
            .descendants()
            .find(|n| n.attribute("class") == Some("hypnogram"))
            .unwrap();
        let ys: Vec<f64> = line
            .attribute("points")
            .unwrap()
            .split_whitespace()
            .map(|p| p.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        let mut levels: Vec<usize> = ys.iter().map(|y| ((y - 24.0) / 22.0 - 0.5).round() as usize).collect();
        levels.dedup();
        let visited: Vec<i8> = levels.iter().map(|&l| HYPNO_ORDER[l]).collect();
        assert_eq!(visited, vec![0, 1, -1, 4]);
    }

    #[test]
    fn hypnogram_with_mobility_and_markers() {
        let mob = vec![MobilityLabel::Mobile, MobilityLabel::Lying, MobilityLabel::Lying];
        let tib = TibResult {
            lights_out_s: 10.0,
            lights_on_s: 30.0,
            tib_min: 20.0 / 60.0,
        };
        let svg = hypnogram(&[0], 30.0, Some((&mob, 10.0)), Some(&tib), "h").unwrap();
        let d = doc(&svg);
        assert!(d.descendants().any(|n| n.attribute("class") == Some("lights-out")));
        assert!(d.descendants().any(|n| n.attribute("class") == Some("lights-on")));
        let strip = d
            .descendants()
            .find(|n| n.attribute("class") == Some("mobility-strip"))
            .unwrap();
        assert_eq!(strip.children().filter(|n| n.has_tag_name("rect")).count(), 2);
        assert!(hypnogram(&[0; 100], 30.0, Some((&mob, 10.0)), None, "h").is_err());
    }
}
