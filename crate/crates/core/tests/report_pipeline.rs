use std::fs;
use std::path::Path;

use floss::aggregate::scores_to_lines;
use floss::features::MobilityFeatureMode;
use floss::report::{self, ErrorCode, Models, NightStatus, ReportConfig};
use floss::signal_io::write_edf;
use floss::synth::{gen_night, NightSpec};
use floss::training::{synthetic_mobility_model, synthetic_usability_model, SyntheticTraining};
use floss::usability::Variant;

fn small_models() -> Models {
    let mut opts = SyntheticTraining::new(3);
    opts.subjects = 2;
    opts.per_class = 12;
    opts.iterations = 15;
    Models {
        usability: synthetic_usability_model(Variant::Lite, &opts).unwrap(),
        mobility: synthetic_mobility_model(256, MobilityFeatureMode::Stat, 40, 20, 3).unwrap(),
        mobility_required: true,
    }
}

fn write_fixtures(dir: &Path) {
    for (i, name) in ["night_a", "night_b", "night_c"].iter().enumerate() {
        let night = gen_night(&NightSpec::new(1200.0, 100 + i as u64)).unwrap();
        let mut bytes = write_edf(&night.recording).unwrap();
        if *name == "night_c" {
            bytes.truncate(bytes.len() - 1000);
        }
        fs::write(dir.join(format!("{name}.edf")), bytes).unwrap();
        fs::write(dir.join(format!("{name}.scores.txt")), scores_to_lines(&night.sleep_scores)).unwrap();
    }
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn truncated_night_is_skipped_and_reruns_match() {
    let input = tempfile::tempdir().unwrap();
    write_fixtures(input.path());
    let models = small_models();
    let nights = report::discover_nights(input.path()).unwrap();
    let mut outs = Vec::new();
    for workers in [1, 2] {
        let out = tempfile::tempdir().unwrap();
        let cfg = ReportConfig {
            input: input.path().to_path_buf(),
            out: out.path().to_path_buf(),
            workers,
            ..ReportConfig::default()
        };
        let batch = report::run_with_models(&cfg, &models, &nights).unwrap();
        assert_eq!(batch.processed, 2, "{}", batch.to_json());
        assert_eq!(batch.skipped, 1);
        assert_eq!(batch.failures.len(), 1);
        assert_eq!(batch.failures[0].night_id, "night_c");
        assert_eq!(batch.failures[0].error_code, ErrorCode::TruncatedFile);
        assert!(!out.path().join("night_c").exists());
        for r in batch.nights.iter().filter(|r| r.status == NightStatus::Ok) {
            for f in ["usability.csv", "usability.svg", "mobility.csv", "tib.json", "artifact_rejected.txt", "artifact_rejected.csv", "stats.json", "hypnogram.svg"] {
                assert!(out.path().join(&r.night_id).join(f).is_file(), "{} {f}", r.night_id);
            }
        }
        outs.push(tree(out.path()));
        drop(out);
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn empty_input_gives_empty_report() {
    let input = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let cfg = ReportConfig {
        input: input.path().to_path_buf(),
        out: out.path().to_path_buf(),
        ..ReportConfig::default()
    };
    let batch = report::run_with_models(&cfg, &small_models(), &[]).unwrap();
    assert_eq!(batch.nights.len(), 0);
    assert!(out.path().join("report.json").is_file());
}

#[test]
fn missing_acc_and_bad_scores_are_skipped() {
    let input = tempfile::tempdir().unwrap();
    let night = gen_night(&NightSpec::new(600.0, 9)).unwrap();
    let mut no_acc = night.recording.clone();
    no_acc.acc = None;
    fs::write(input.path().join("noacc.edf"), write_edf(&no_acc).unwrap()).unwrap();
    fs::write(input.path().join("short.edf"), write_edf(&night.recording).unwrap()).unwrap();
    fs::write(input.path().join("short.scores.txt"), "0\n1\n2\n").unwrap();
    let out = tempfile::tempdir().unwrap();
    let cfg = ReportConfig {
        input: input.path().to_path_buf(),
        out: out.path().to_path_buf(),
        ..ReportConfig::default()
    };
    let nights = report::discover_nights(input.path()).unwrap();
    let batch = report::run_with_models(&cfg, &small_models(), &nights).unwrap();
    let codes: Vec<_> = batch.failures.iter().map(|f| (f.night_id.as_str(), f.error_code)).collect();
    assert_eq!(
        codes,
        vec![("noacc", ErrorCode::AccMissingWhenRequired), ("short", ErrorCode::ScoreLengthMismatch)]
    );
    assert_eq!(fs::read_dir(out.path()).unwrap().count(), 1);
}
